//! Periodic fields on a uniform grid of the unit torus and the shift /
//! difference-quotient operators acting on them.
//!
//! Competitors of the cell problems are affine-plus-periodic maps
//! `u(x) = M x + v(x)` with `v` unit-periodic; only `v` carries degrees of
//! freedom. Off-lattice shifts use periodic multilinear interpolation, which
//! keeps every operator linear in `v` and gives exact adjoints under the
//! discrete inner product `<u, w> = h^d Σ_i u_i · w_i`.

use crate::{Error, Result};

/// Uniform grid on the unit torus: nodes `x_i = i h`, `h = 1/n`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TorusGrid {
    dim: usize,
    n: usize,
}

impl TorusGrid {
    /// Grid with `n` nodes per axis; `dim` is 1 or 2.
    pub fn new(dim: usize, n: usize) -> Result<TorusGrid> {
        if dim != 1 && dim != 2 {
            return Err(Error::invalid(format!("grid dim must be 1 or 2, got {dim}")));
        }
        if n < 2 {
            return Err(Error::invalid("grid needs at least 2 nodes per axis"));
        }
        Ok(TorusGrid { dim, n })
    }

    /// Product grid `(x, y)` used by the relaxed supercritical solver; the
    /// dimension is `2 d` and may exceed the public limit.
    pub(crate) fn product(dim: usize, n: usize) -> TorusGrid {
        TorusGrid { dim, n }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nodes_per_axis(&self) -> usize {
        self.n
    }

    pub fn spacing(&self) -> f64 {
        1.0 / self.n as f64
    }

    pub fn node_count(&self) -> usize {
        self.n.pow(self.dim as u32)
    }

    /// Cell volume `h^d`.
    pub fn cell_volume(&self) -> f64 {
        self.spacing().powi(self.dim as i32)
    }

    pub fn coords(&self, flat: usize, out: &mut [usize]) {
        let mut rest = flat;
        for a in (0..self.dim).rev() {
            out[a] = rest % self.n;
            rest /= self.n;
        }
    }

    pub fn flat(&self, coords: &[usize]) -> usize {
        let mut idx = 0usize;
        for &c in coords {
            idx = idx * self.n + c;
        }
        idx
    }

    pub fn position(&self, flat: usize, out: &mut [f64]) {
        let mut rest = flat;
        let h = self.spacing();
        for a in (0..self.dim).rev() {
            out[a] = (rest % self.n) as f64 * h;
            rest /= self.n;
        }
    }
}

/// Interpolation stencil of the periodic shift `v(x + s)`.
///
/// Per axis the shift decomposes as `s_a = (k_a + t_a) h` with integer `k_a`
/// and `t_a in [0, 1)`; the shifted value is the multilinear combination of
/// the `2^d` corner nodes `i + k + corner`.
#[derive(Debug, Clone)]
pub(crate) struct ShiftStencil {
    base: Vec<i64>,
    frac: Vec<f64>,
}

impl ShiftStencil {
    pub(crate) fn new(grid: &TorusGrid, shift: &[f64]) -> ShiftStencil {
        let n = grid.n as f64;
        let mut base = Vec::with_capacity(grid.dim);
        let mut frac = Vec::with_capacity(grid.dim);
        for &s in shift {
            let r = s * n;
            let k = r.floor();
            base.push(k as i64);
            frac.push(r - k);
        }
        ShiftStencil { base, frac }
    }

    /// Corner weight and per-axis index offsets for corner mask `c`.
    #[inline]
    pub(crate) fn corner(&self, c: usize) -> (f64, impl Iterator<Item = i64> + '_) {
        let mut w = 1.0;
        for (a, t) in self.frac.iter().enumerate() {
            w *= if c >> a & 1 == 1 { *t } else { 1.0 - *t };
        }
        let offs = self.base.iter().enumerate().map(move |(a, k)| k + ((c >> a & 1) as i64));
        (w, offs)
    }

    pub(crate) fn corner_count(&self) -> usize {
        1 << self.base.len()
    }
}

#[inline]
pub(crate) fn wrap(i: i64, n: usize) -> usize {
    i.rem_euclid(n as i64) as usize
}

/// A unit-periodic field with `m` components per node, node-major storage.
#[derive(Debug, Clone, PartialEq)]
pub struct PeriodicField {
    grid: TorusGrid,
    m: usize,
    values: Vec<f64>,
}

impl PeriodicField {
    pub fn zeros(grid: TorusGrid, m: usize) -> PeriodicField {
        PeriodicField { grid, m, values: vec![0.0; grid.node_count() * m] }
    }

    pub fn from_values(grid: TorusGrid, m: usize, values: Vec<f64>) -> Result<PeriodicField> {
        if values.len() != grid.node_count() * m {
            return Err(Error::invalid("field value length mismatch"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("field values must be finite"));
        }
        Ok(PeriodicField { grid, m, values })
    }

    /// Builds a field by evaluating `f` at every node position.
    pub fn from_fn(grid: TorusGrid, m: usize, mut f: impl FnMut(&[f64], &mut [f64])) -> PeriodicField {
        let mut values = vec![0.0; grid.node_count() * m];
        let mut pos = vec![0.0; grid.dim()];
        for i in 0..grid.node_count() {
            grid.position(i, &mut pos);
            f(&pos, &mut values[i * m..(i + 1) * m]);
        }
        PeriodicField { grid, m, values }
    }

    pub fn grid(&self) -> &TorusGrid {
        &self.grid
    }

    pub fn components(&self) -> usize {
        self.m
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn node(&self, i: usize) -> &[f64] {
        &self.values[i * self.m..(i + 1) * self.m]
    }

    /// Discrete mean per component, `h^d Σ_i v_i`.
    pub fn mean(&self) -> Vec<f64> {
        let mut mean = vec![0.0; self.m];
        for i in 0..self.grid.node_count() {
            for (acc, v) in mean.iter_mut().zip(self.node(i)) {
                *acc += v;
            }
        }
        let count = self.grid.node_count() as f64;
        for acc in &mut mean {
            *acc /= count;
        }
        mean
    }

    /// Subtracts the discrete mean; idempotent and linear.
    pub fn project_mean_zero(&self) -> PeriodicField {
        let mean = self.mean();
        let mut out = self.clone();
        for i in 0..self.grid.node_count() {
            for (c, mu) in mean.iter().enumerate() {
                out.values[i * self.m + c] -= mu;
            }
        }
        out
    }

    /// `h^d`-weighted inner product.
    pub fn dot_h(&self, other: &PeriodicField) -> f64 {
        debug_assert_eq!(self.values.len(), other.values.len());
        let s: f64 = self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum();
        s * self.grid.cell_volume()
    }

    /// Discrete L2 norm `sqrt(h^d Σ |v_i|^2)`.
    pub fn norm_h(&self) -> f64 {
        self.dot_h(self).sqrt()
    }

    /// `self += s * other`
    pub fn axpy(&mut self, s: f64, other: &PeriodicField) {
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += s * b;
        }
    }

    pub fn scale(&mut self, s: f64) {
        for a in &mut self.values {
            *a *= s;
        }
    }
}

/// An affine map plus a periodic perturbation: `u(x) = M x + v(x)`.
#[derive(Debug, Clone)]
pub struct AffineField {
    /// `m x d`, row-major.
    matrix: Vec<f64>,
    periodic: PeriodicField,
}

impl AffineField {
    pub fn new(matrix: Vec<f64>, periodic: PeriodicField) -> Result<AffineField> {
        let expect = periodic.components() * periodic.grid().dim();
        if matrix.len() != expect {
            return Err(Error::invalid(format!("matrix needs {} entries, got {}", expect, matrix.len())));
        }
        Ok(AffineField { matrix, periodic })
    }

    pub fn matrix(&self) -> &[f64] {
        &self.matrix
    }

    pub fn periodic(&self) -> &PeriodicField {
        &self.periodic
    }

    /// `M xi` for a direction `xi`, written into `out`.
    pub fn matrix_apply(&self, xi: &[f64], out: &mut [f64]) {
        matrix_apply(&self.matrix, self.periodic.components(), xi, out)
    }

    /// Exact affine term plus periodic multilinear interpolation of `v`.
    pub fn sample(&self, point: &[f64]) -> Vec<f64> {
        let grid = self.periodic.grid();
        let m = self.periodic.components();
        let mut out = vec![0.0; m];
        matrix_apply(&self.matrix, m, point, &mut out);
        let st = ShiftStencil::new(grid, point);
        // Interpolation of v at `point` = shift of node 0 by `point`.
        let mut coords = vec![0i64; grid.dim()];
        for c in 0..st.corner_count() {
            let (w, offs) = st.corner(c);
            if w == 0.0 {
                continue;
            }
            for (slot, o) in coords.iter_mut().zip(offs) {
                *slot = o;
            }
            let flat = flat_wrapped(grid, &coords);
            for (acc, v) in out.iter_mut().zip(self.periodic.node(flat)) {
                *acc += w * v;
            }
        }
        out
    }
}

pub(crate) fn matrix_apply(matrix: &[f64], m: usize, xi: &[f64], out: &mut [f64]) {
    let d = xi.len();
    debug_assert_eq!(matrix.len(), m * d);
    for (r, o) in out.iter_mut().enumerate().take(m) {
        let mut acc = 0.0;
        for (a, x) in xi.iter().enumerate() {
            acc += matrix[r * d + a] * x;
        }
        *o = acc;
    }
}

fn flat_wrapped(grid: &TorusGrid, coords: &[i64]) -> usize {
    let n = grid.nodes_per_axis();
    let mut idx = 0usize;
    for &c in coords {
        idx = idx * n + wrap(c, n);
    }
    idx
}

/// Difference quotient at interaction scale `lambda`:
/// node `i` receives `M xi + (v(x_i + lambda xi) - v(x_i)) / lambda`.
///
/// The affine contribution is exactly `M xi`; the periodic part is gathered
/// corner-by-corner as `Σ_c w_c (v_jc - v_i)` so constant shifts of `v`
/// cancel term by term.
pub fn difference_quotient(field: &AffineField, xi: &[f64], lambda: f64) -> Result<PeriodicField> {
    if lambda <= 0.0 {
        return Err(Error::invalid("lambda must be positive"));
    }
    let grid = *field.periodic().grid();
    let m = field.periodic().components();
    let mut mxi = vec![0.0; m];
    field.matrix_apply(xi, &mut mxi);
    let shift: Vec<f64> = xi.iter().map(|c| lambda * c).collect();
    let st = ShiftStencil::new(&grid, &shift);
    let mut out = PeriodicField::zeros(grid, m);
    apply_quotient(&grid, m, &st, lambda, field.periodic().values(), &mxi, out.values_mut());
    Ok(out)
}

/// Shared kernel of the quotient: `out_i = mxi + Σ_c w_c (v_{i+k+c} - v_i)/lambda`.
pub(crate) fn apply_quotient(
    grid: &TorusGrid,
    m: usize,
    st: &ShiftStencil,
    lambda: f64,
    v: &[f64],
    mxi: &[f64],
    out: &mut [f64],
) {
    let dim = grid.dim();
    let n = grid.nodes_per_axis();
    let count = grid.node_count();
    let mut coords = vec![0usize; dim];
    let mut corner = vec![0i64; dim];
    for i in 0..count {
        grid.coords(i, &mut coords);
        let o = &mut out[i * m..(i + 1) * m];
        o.copy_from_slice(mxi);
        for c in 0..st.corner_count() {
            let (w, offs) = st.corner(c);
            if w == 0.0 {
                continue;
            }
            for ((slot, base), off) in corner.iter_mut().zip(&coords).zip(offs) {
                *slot = *base as i64 + off;
            }
            let mut idx = 0usize;
            for &cc in &corner {
                idx = idx * n + wrap(cc, n);
            }
            let src = &v[idx * m..(idx + 1) * m];
            let own = &v[i * m..(i + 1) * m];
            for ((oo, s), t) in o.iter_mut().zip(src).zip(own) {
                *oo += w * (s - t) / lambda;
            }
        }
    }
}

/// Transpose of the node-linear part of [`difference_quotient`] under the
/// `h^d`-weighted inner product (`h^d` cancels, leaving the plain matrix
/// transpose): a gather with negated offsets minus the identity, over
/// `lambda`.
pub fn difference_quotient_adjoint(w: &PeriodicField, xi: &[f64], lambda: f64) -> Result<PeriodicField> {
    if lambda <= 0.0 {
        return Err(Error::invalid("lambda must be positive"));
    }
    let grid = *w.grid();
    let m = w.components();
    let shift: Vec<f64> = xi.iter().map(|c| lambda * c).collect();
    let st = ShiftStencil::new(&grid, &shift);
    let mut out = PeriodicField::zeros(grid, m);
    apply_quotient_adjoint(&grid, m, &st, lambda, w.values(), out.values_mut());
    Ok(out)
}

/// `out_j += (Σ_c w_c q_{j-k-c} - q_j)/lambda`.
pub(crate) fn apply_quotient_adjoint(
    grid: &TorusGrid,
    m: usize,
    st: &ShiftStencil,
    lambda: f64,
    q: &[f64],
    out: &mut [f64],
) {
    let dim = grid.dim();
    let n = grid.nodes_per_axis();
    let count = grid.node_count();
    let mut coords = vec![0usize; dim];
    let mut corner = vec![0i64; dim];
    let mut acc = vec![0.0; m];
    for j in 0..count {
        grid.coords(j, &mut coords);
        acc.fill(0.0);
        for c in 0..st.corner_count() {
            let (w, offs) = st.corner(c);
            if w == 0.0 {
                continue;
            }
            for ((slot, base), off) in corner.iter_mut().zip(&coords).zip(offs) {
                *slot = *base as i64 - off;
            }
            let mut idx = 0usize;
            for &cc in &corner {
                idx = idx * n + wrap(cc, n);
            }
            let src = &q[idx * m..(idx + 1) * m];
            for (a, s) in acc.iter_mut().zip(src) {
                *a += w * s;
            }
        }
        let own = &q[j * m..(j + 1) * m];
        let o = &mut out[j * m..(j + 1) * m];
        for ((oo, a), t) in o.iter_mut().zip(&acc).zip(own) {
            *oo += (a - t) / lambda;
        }
    }
}

/// Forward-difference gradient with periodic wrap, plus `M` exactly:
/// per node an `m x d` block `M + [v(x_{i+e_a h}) - v(x_i)] / h`, row-major.
pub fn gradient(field: &AffineField) -> Vec<f64> {
    let grid = field.periodic().grid();
    let m = field.periodic().components();
    let d = grid.dim();
    let n = grid.nodes_per_axis();
    let h = grid.spacing();
    let v = field.periodic().values();
    let count = grid.node_count();
    let mut out = vec![0.0; count * m * d];
    let mut coords = vec![0usize; d];
    let mut fwd = vec![0usize; d];
    for i in 0..count {
        grid.coords(i, &mut coords);
        let block = &mut out[i * m * d..(i + 1) * m * d];
        for a in 0..d {
            fwd.copy_from_slice(&coords);
            fwd[a] = (fwd[a] + 1) % n;
            let mut idx = 0usize;
            for &cc in &fwd {
                idx = idx * n + cc;
            }
            for r in 0..m {
                block[r * d + a] = field.matrix()[r * d + a] + (v[idx * m + r] - v[i * m + r]) / h;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use std::f64::consts::TAU;

    fn grid(n: usize) -> TorusGrid {
        TorusGrid::new(1, n).unwrap()
    }

    #[test]
    fn sample_affine_only() {
        let f = AffineField::new(vec![1.0], PeriodicField::zeros(grid(8), 1)).unwrap();
        assert_eq!(f.sample(&[0.3]), vec![0.3]);
    }

    #[test]
    fn sample_reproduces_nodes_and_midpoints() {
        let g = grid(4);
        let pf = PeriodicField::from_fn(g, 1, |x, out| out[0] = (TAU * x[0]).cos());
        let vals = pf.values().to_vec();
        let f = AffineField::new(vec![0.0], pf).unwrap();
        for (i, v) in vals.iter().enumerate() {
            assert_eq!(f.sample(&[i as f64 * 0.25])[0], *v);
        }
        let mid = f.sample(&[0.125])[0];
        assert_eq!(mid, 0.5 * vals[0] + 0.5 * vals[1]);
    }

    #[test]
    fn quotient_of_affine_is_constant() {
        let f = AffineField::new(vec![2.0], PeriodicField::zeros(grid(16), 1)).unwrap();
        let dq = difference_quotient(&f, &[0.3], 0.7).unwrap();
        assert!(dq.values().iter().all(|v| *v == 0.6));
    }

    #[test]
    fn lattice_commensurate_shift_is_exact() {
        let g = grid(16);
        let pf = PeriodicField::from_fn(g, 1, |x, out| out[0] = (TAU * x[0]).sin() + 0.37);
        let vals = pf.values().to_vec();
        let f = AffineField::new(vec![0.0], pf).unwrap();
        // lambda * xi = 3 h exactly
        let lambda = 0.75;
        let xi = 0.25;
        let dq = difference_quotient(&f, &[xi], lambda).unwrap();
        for i in 0..16 {
            let expect = (vals[(i + 3) % 16] - vals[i]) / lambda;
            assert_eq!(dq.values()[i], expect, "node {i}");
        }
    }

    #[test]
    fn quotient_matches_analytic_sine() {
        let n = 64;
        let g = grid(n);
        let pf = PeriodicField::from_fn(g, 1, |x, out| out[0] = (TAU * x[0]).sin());
        let f = AffineField::new(vec![0.0], pf).unwrap();
        let h = 1.0 / n as f64;
        for s in [0.5, 0.3] {
            let dq = difference_quotient(&f, &[1.0], s).unwrap();
            let mut worst = 0.0f64;
            for i in 0..n {
                let x = i as f64 * h;
                let exact = ((TAU * (x + s)).sin() - (TAU * x).sin()) / s;
                worst = worst.max((dq.values()[i] - exact).abs());
            }
            // First-order interpolation: O(h^2) per shifted evaluation.
            assert!(worst <= 40.0 * h * h, "shift {s}: max err {worst}");
        }
    }

    #[test]
    fn gauge_invariance_under_constant_shift() {
        // Dyadic node values keep v + c exactly representable, so the two
        // quotients must agree bit for bit.
        let g = grid(32);
        let mut rng = crate::sampling::rng(5);
        let vals: Vec<f64> = (0..32).map(|_| rng.gen_range(0..1 << 20) as f64 / (1 << 20) as f64).collect();
        let shifted: Vec<f64> = vals.iter().map(|v| v + 0.5).collect();
        let f1 = AffineField::new(vec![1.5], PeriodicField::from_values(g, 1, vals).unwrap()).unwrap();
        let f2 = AffineField::new(vec![1.5], PeriodicField::from_values(g, 1, shifted).unwrap()).unwrap();
        let d1 = difference_quotient(&f1, &[0.6], 0.37).unwrap();
        let d2 = difference_quotient(&f2, &[0.6], 0.37).unwrap();
        assert_eq!(d1.values(), d2.values());
    }

    #[test]
    fn quotient_mean_equals_affine_term() {
        let g = grid(64);
        let pf =
            PeriodicField::from_fn(g, 1, |x, out| out[0] = (TAU * x[0]).sin() + 0.2 * (2.0 * TAU * x[0]).cos());
        let f = AffineField::new(vec![1.3], pf).unwrap();
        for (xi, lambda) in [(0.6, 0.37), (0.25, 1.0), (0.9, 3.7)] {
            let dq = difference_quotient(&f, &[xi], lambda).unwrap();
            let mean = dq.mean()[0];
            assert!((mean - 1.3 * xi).abs() <= 1e-13, "mean {mean} vs {}", 1.3 * xi);
        }
    }

    #[test]
    fn adjoint_identity() {
        let g = TorusGrid::new(1, 16).unwrap();
        let mut rng = crate::sampling::rng(17);
        let v =
            PeriodicField::from_values(g, 1, (0..16).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let w =
            PeriodicField::from_values(g, 1, (0..16).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let f = AffineField::new(vec![0.0], v.clone()).unwrap();
        for (xi, lambda) in [(0.6, 0.37), (-0.45, 1.3)] {
            let av = difference_quotient(&f, &[xi], lambda).unwrap();
            let atw = difference_quotient_adjoint(&w, &[xi], lambda).unwrap();
            let lhs = av.dot_h(&w);
            let rhs = v.dot_h(&atw);
            assert!((lhs - rhs).abs() <= 1e-12 * lhs.abs().max(1.0), "{lhs} vs {rhs}");
        }
    }

    #[test]
    fn adjoint_of_zero_shift_is_zero() {
        let g = TorusGrid::new(1, 8).unwrap();
        let w = PeriodicField::from_fn(g, 1, |x, out| out[0] = x[0]);
        let a = difference_quotient_adjoint(&w, &[0.0], 0.5).unwrap();
        assert!(a.values().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn adjoint_kills_constants() {
        let g = TorusGrid::new(1, 8).unwrap();
        let w = PeriodicField::from_values(g, 1, vec![3.25; 8]).unwrap();
        let a = difference_quotient_adjoint(&w, &[0.613], 0.5).unwrap();
        assert!(a.values().iter().all(|v| v.abs() <= 1e-14), "{:?}", a.values());
    }

    #[test]
    fn gradient_of_affine_is_matrix() {
        let g = TorusGrid::new(2, 8).unwrap();
        let f = AffineField::new(vec![1.0, 2.0], PeriodicField::zeros(g, 1)).unwrap();
        let grad = gradient(&f);
        for block in grad.chunks(2) {
            assert_eq!(block, [1.0, 2.0]);
        }
        let c = AffineField::new(
            vec![1.0, 2.0],
            PeriodicField::from_values(g, 1, vec![0.7; 64]).unwrap(),
        )
        .unwrap();
        assert_eq!(gradient(&c), grad);
    }

    #[test]
    fn gradient_matches_analytic_sine() {
        let n = 128;
        let g = grid(n);
        let pf = PeriodicField::from_fn(g, 1, |x, out| out[0] = (TAU * x[0]).sin());
        let f = AffineField::new(vec![0.0], pf).unwrap();
        let grad = gradient(&f);
        let h = 1.0 / n as f64;
        let mut worst = 0.0f64;
        for i in 0..n {
            // Forward differences are first-order; at the half-shifted points
            // they are second-order accurate.
            let x = i as f64 * h + 0.5 * h;
            worst = worst.max((grad[i] - TAU * (TAU * x).cos()).abs());
        }
        assert!(worst <= h, "max err {worst}");
    }

    #[test]
    fn projection_removes_mean() {
        let g = grid(8);
        let c = PeriodicField::from_values(g, 1, vec![3.5; 8]).unwrap();
        let p = c.project_mean_zero();
        assert!(p.values().iter().all(|v| *v == 0.0));

        let mut rng = crate::sampling::rng(3);
        let f =
            PeriodicField::from_values(g, 1, (0..8).map(|_| rng.gen_range(-2.0..2.0)).collect()).unwrap();
        let p1 = f.project_mean_zero();
        assert!(p1.mean()[0].abs() <= 1e-15);
        let p2 = p1.project_mean_zero();
        for (a, b) in p1.values().iter().zip(p2.values()) {
            assert!((a - b).abs() <= 1e-15);
        }

        let shifted =
            PeriodicField::from_values(g, 1, f.values().iter().map(|v| v + 3.5).collect()).unwrap();
        let ps = shifted.project_mean_zero();
        for (a, b) in ps.values().iter().zip(p1.values()) {
            assert!((a - b).abs() <= 1e-14);
        }
    }
}
