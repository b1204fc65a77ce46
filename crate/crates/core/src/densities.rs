//! Two-point integrands `f(x, y, z)` with unit-periodic spatial dependence,
//! convexity in `z`, and `p`-growth.
//!
//! The built-in family is separable, `f(x, y, z) = a(x) b(y) |z|^p`, with
//! piecewise-constant coefficient fields on the unit cell. With `b ≡ 1` the
//! integrand depends on one spatial variable only, which is the best
//! understood setting; a discontinuous `b` is accepted but flagged as
//! exploratory by the front end.

use std::sync::Arc;

use rand::Rng;

use crate::kernels::Kernel;
use crate::sampling;
use crate::{Error, Result};

/// Piecewise-constant coefficient on the uniform cell partition of the unit
/// cube, extended periodically.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientField {
    dim: usize,
    cells_per_axis: usize,
    values: Vec<f64>,
    lo: f64,
    hi: f64,
}

impl CoefficientField {
    /// `values` are row-major cell values; all must be strictly positive.
    pub fn new(dim: usize, cells_per_axis: usize, values: Vec<f64>) -> Result<CoefficientField> {
        if dim != 1 && dim != 2 {
            return Err(Error::invalid("coefficient dim must be 1 or 2"));
        }
        if cells_per_axis == 0 || values.len() != cells_per_axis.pow(dim as u32) {
            return Err(Error::invalid(format!(
                "coefficient needs {}^{} values, got {}",
                cells_per_axis,
                dim,
                values.len()
            )));
        }
        let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if !(lo > 0.0 && hi.is_finite()) {
            return Err(Error::invalid("coefficient values must be finite and > 0"));
        }
        Ok(CoefficientField { dim, cells_per_axis, values, lo, hi })
    }

    pub fn constant(dim: usize, value: f64) -> Result<CoefficientField> {
        CoefficientField::new(dim, 1, vec![value])
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn cells_per_axis(&self) -> usize {
        self.cells_per_axis
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Declared bounds `0 < lo <= a(x) <= hi`.
    pub fn bounds(&self) -> (f64, f64) {
        (self.lo, self.hi)
    }

    pub fn is_constant(&self) -> bool {
        self.lo == self.hi
    }

    /// Cell lookup with periodic wrap; exact for cell-aligned arguments.
    pub fn eval(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.dim);
        let n = self.cells_per_axis;
        let mut idx = 0usize;
        for &c in x {
            let cell = wrap_cell(c, n);
            idx = idx * n + cell;
        }
        self.values[idx]
    }

    /// Mean over the unit cell (cells have equal volume).
    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }
}

/// Integer cell index of coordinate `c` in a unit-periodic partition with
/// `n` cells, using floor-then-wrap so that `c` and `c + 1` land in the same
/// cell whenever `c + 1` is exactly representable.
fn wrap_cell(c: f64, n: usize) -> usize {
    let scaled = (c * n as f64).floor();
    let cell = scaled as i64;
    cell.rem_euclid(n as i64) as usize
}

/// Upper growth envelope: strict `beta |z|^p` or the milder
/// `beta (1 + |z|^p)`, the latter only meaningful with integrable kernels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GrowthMode {
    Strict,
    Affine,
}

type PointFn = Arc<dyn Fn(&[f64], &[f64], &[f64]) -> f64 + Send + Sync>;
type GradFn = Arc<dyn Fn(&[f64], &[f64], &[f64], &mut [f64]) + Send + Sync>;

#[derive(Clone)]
enum DensityKind {
    Separable { a: CoefficientField, b: CoefficientField },
    General { value: PointFn, grad_z: GradFn, alpha: f64, beta: f64 },
}

/// The integrand `f(x, y, z)` with its growth metadata.
#[derive(Clone)]
pub struct DensitySpec {
    kind: DensityKind,
    p: f64,
    m: usize,
    growth: GrowthMode,
}

impl DensitySpec {
    /// Separable family `a(x) b(y) |z|^p`.
    pub fn separable(a: CoefficientField, b: CoefficientField, p: f64, m: usize) -> Result<DensitySpec> {
        if p <= 1.0 {
            return Err(Error::invalid("exponent p must exceed 1"));
        }
        if a.dim() != b.dim() {
            return Err(Error::invalid("coefficient fields must share a dimension"));
        }
        if m == 0 {
            return Err(Error::invalid("target dimension m must be at least 1"));
        }
        Ok(DensitySpec { kind: DensityKind::Separable { a, b }, p, m, growth: GrowthMode::Strict })
    }

    /// General convex integrand given by callbacks, with declared envelope
    /// `alpha |z|^p <= f <= beta |z|^p` (or the affine variant).
    pub fn general(
        value: PointFn,
        grad_z: GradFn,
        alpha: f64,
        beta: f64,
        p: f64,
        m: usize,
        growth: GrowthMode,
    ) -> Result<DensitySpec> {
        if p <= 1.0 {
            return Err(Error::invalid("exponent p must exceed 1"));
        }
        if !(alpha > 0.0 && beta >= alpha) {
            return Err(Error::invalid("growth constants need 0 < alpha <= beta"));
        }
        if m == 0 {
            return Err(Error::invalid("target dimension m must be at least 1"));
        }
        Ok(DensitySpec { kind: DensityKind::General { value, grad_z, alpha, beta }, p, m, growth })
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn target_dim(&self) -> usize {
        self.m
    }

    pub fn growth_mode(&self) -> GrowthMode {
        self.growth
    }

    pub fn with_growth_mode(mut self, growth: GrowthMode) -> DensitySpec {
        self.growth = growth;
        self
    }

    /// Lower growth constant `alpha`.
    pub fn alpha(&self) -> f64 {
        match &self.kind {
            DensityKind::Separable { a, b } => a.bounds().0 * b.bounds().0,
            DensityKind::General { alpha, .. } => *alpha,
        }
    }

    /// Upper growth constant `beta`.
    pub fn beta(&self) -> f64 {
        match &self.kind {
            DensityKind::Separable { a, b } => a.bounds().1 * b.bounds().1,
            DensityKind::General { beta, .. } => *beta,
        }
    }

    pub fn separable_parts(&self) -> Option<(&CoefficientField, &CoefficientField)> {
        match &self.kind {
            DensityKind::Separable { a, b } => Some((a, b)),
            DensityKind::General { .. } => None,
        }
    }

    /// Whether the integrand actually depends on its second spatial slot.
    pub fn depends_on_y(&self) -> bool {
        match &self.kind {
            DensityKind::Separable { b, .. } => !b.is_constant(),
            DensityKind::General { .. } => true,
        }
    }

    /// Evaluates `f(x, y, z)`; spatial arguments wrap periodically.
    pub fn eval(&self, x: &[f64], y: &[f64], z: &[f64]) -> f64 {
        debug_assert_eq!(z.len(), self.m);
        match &self.kind {
            DensityKind::Separable { a, b } => a.eval(x) * b.eval(y) * pow_norm(z, self.p),
            DensityKind::General { value, .. } => value(x, y, z),
        }
    }

    /// Gradient of `f` in `z`, written into `out`. Zero at `z = 0` (the true
    /// gradient, since `p > 1`).
    pub fn grad_z(&self, x: &[f64], y: &[f64], z: &[f64], out: &mut [f64]) {
        debug_assert_eq!(z.len(), self.m);
        debug_assert_eq!(out.len(), self.m);
        match &self.kind {
            DensityKind::Separable { a, b } => {
                let r2: f64 = z.iter().map(|c| c * c).sum();
                if r2 == 0.0 {
                    out.fill(0.0);
                    return;
                }
                let radial = if self.p == 2.0 { 1.0 } else { r2.powf(0.5 * self.p - 1.0) };
                let c = a.eval(x) * b.eval(y) * self.p * radial;
                for (o, zi) in out.iter_mut().zip(z) {
                    *o = c * zi;
                }
            }
            DensityKind::General { grad_z, .. } => grad_z(x, y, z, out),
        }
    }

    /// Max violation of the midpoint convexity inequality in `z` over seeded
    /// sample triples; `<= 0` means no violation observed.
    pub fn midpoint_convexity_defect(&self, sample_count: usize, seed: u64) -> f64 {
        let d = self.spatial_dim();
        let mut rng = sampling::rng(seed ^ 0x636f6e76);
        let mut worst = f64::NEG_INFINITY;
        for _ in 0..sample_count.max(1) {
            let x = sampling::uniform_vec(&mut rng, d, 0.0, 1.0);
            let y = sampling::uniform_vec(&mut rng, d, 0.0, 1.0);
            let z1 = sampling::uniform_vec(&mut rng, self.m, -2.0, 2.0);
            let z2 = sampling::uniform_vec(&mut rng, self.m, -2.0, 2.0);
            let mid: Vec<f64> = z1.iter().zip(&z2).map(|(a, b)| 0.5 * (a + b)).collect();
            let lhs = self.eval(&x, &y, &mid);
            let rhs = 0.5 * (self.eval(&x, &y, &z1) + self.eval(&x, &y, &z2));
            worst = worst.max(lhs - rhs);
        }
        worst
    }

    /// Max violation of the growth envelope over seeded sample triples.
    pub fn growth_defect(&self, sample_count: usize, seed: u64) -> f64 {
        let d = self.spatial_dim();
        let mut rng = sampling::rng(seed ^ 0x67726f77);
        let (alpha, beta) = (self.alpha(), self.beta());
        let mut worst = f64::NEG_INFINITY;
        for _ in 0..sample_count.max(1) {
            let x = sampling::uniform_vec(&mut rng, d, 0.0, 1.0);
            let y = sampling::uniform_vec(&mut rng, d, 0.0, 1.0);
            let z = sampling::uniform_vec(&mut rng, self.m, -3.0, 3.0);
            let v = self.eval(&x, &y, &z);
            let zp = norm(&z).powf(self.p);
            let upper = match self.growth {
                GrowthMode::Strict => beta * zp,
                GrowthMode::Affine => beta * (1.0 + zp),
            };
            worst = worst.max(alpha * zp - v).max(v - upper);
        }
        worst
    }

    pub fn spatial_dim(&self) -> usize {
        match &self.kind {
            DensityKind::Separable { a, .. } => a.dim(),
            DensityKind::General { .. } => 1,
        }
    }
}

fn norm(z: &[f64]) -> f64 {
    z.iter().map(|c| c * c).sum::<f64>().sqrt()
}

/// `|z|^p` via the squared norm, avoiding `powf` in the quadratic case.
pub(crate) fn pow_norm(z: &[f64], p: f64) -> f64 {
    let r2: f64 = z.iter().map(|c| c * c).sum();
    if p == 2.0 {
        r2
    } else {
        r2.powf(0.5 * p)
    }
}

/// Max over seeded samples `(xi, x, y, z)` of
/// `|rho(xi) f(x,y,z) - rho(-xi) f(x,y,-z)|`; zero means the pair symmetry
/// hypothesis holds on the samples.
pub fn reflection_defect(kernel: &Kernel, density: &DensitySpec, sample_count: usize, seed: u64) -> f64 {
    let d = kernel.dim();
    let radius = kernel.support_radius().unwrap_or(4.0);
    let mut rng = sampling::rng(seed ^ 0x48315f);
    let mut worst = 0.0f64;
    for _ in 0..sample_count.max(1) {
        let xi = sampling::uniform_vec(&mut rng, d, -radius, radius);
        let x = sampling::uniform_vec(&mut rng, d, 0.0, 1.0);
        let y = sampling::uniform_vec(&mut rng, d, 0.0, 1.0);
        let z: Vec<f64> = (0..density.target_dim()).map(|_| rng.gen_range(-2.0..=2.0)).collect();
        let zneg: Vec<f64> = z.iter().map(|c| -c).collect();
        let xineg: Vec<f64> = xi.iter().map(|c| -c).collect();
        let lhs = kernel.eval(&xi) * density.eval(&x, &y, &z);
        let rhs = kernel.eval(&xineg) * density.eval(&x, &y, &zneg);
        if lhs.is_finite() && rhs.is_finite() {
            worst = worst.max((lhs - rhs).abs());
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::Quadrature;

    fn two_phase() -> CoefficientField {
        CoefficientField::new(1, 2, vec![2.0, 1.0]).unwrap()
    }

    fn default_spec() -> DensitySpec {
        DensitySpec::separable(two_phase(), CoefficientField::constant(1, 1.0).unwrap(), 2.0, 1).unwrap()
    }

    #[test]
    fn eval_two_phase() {
        let spec = default_spec();
        assert_eq!(spec.eval(&[0.25], &[0.9], &[3.0]), 18.0);
        // Periodicity in the first slot.
        assert_eq!(spec.eval(&[1.25], &[0.9], &[3.0]), 18.0);
        assert_eq!(spec.eval(&[0.7], &[0.1], &[0.0]), 0.0);
    }

    #[test]
    fn coefficient_periodicity_is_exact() {
        let a = two_phase();
        for x in [0.0, 0.125, 0.25, 0.4999, 0.5, 0.75, 0.999] {
            assert_eq!(a.eval(&[x]), a.eval(&[x + 1.0]));
            assert_eq!(a.eval(&[x]), a.eval(&[x - 1.0]));
        }
    }

    #[test]
    fn grad_matches_examples() {
        let spec = default_spec();
        let mut g = [0.0];
        spec.grad_z(&[0.25], &[0.0], &[3.0], &mut g);
        assert_eq!(g[0], 12.0);
        spec.grad_z(&[0.25], &[0.0], &[0.0], &mut g);
        assert_eq!(g[0], 0.0);
    }

    #[test]
    fn grad_matches_finite_differences() {
        let ones = CoefficientField::constant(1, 1.0).unwrap();
        for (p, tol) in [(2.0, 1e-6), (3.0, 1e-4)] {
            let spec = DensitySpec::separable(two_phase(), ones.clone(), p, 1).unwrap();
            let mut rng = crate::sampling::rng(7);
            for _ in 0..10 {
                let x = [rng.gen_range(0.0..1.0)];
                let z = [rng.gen_range(0.5..2.0_f64) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 }];
                let step = 1e-5;
                let fd = (spec.eval(&x, &[0.0], &[z[0] + step]) - spec.eval(&x, &[0.0], &[z[0] - step]))
                    / (2.0 * step);
                let mut g = [0.0];
                spec.grad_z(&x, &[0.0], &z, &mut g);
                let rel = (fd - g[0]).abs() / g[0].abs().max(1e-12);
                assert!(rel <= tol, "p={p} rel={rel}");
            }
        }
        // p=3 spot value: d/dz |z|^3 at z=2 is 12.
        let spec = DensitySpec::separable(
            CoefficientField::constant(1, 1.0).unwrap(),
            CoefficientField::constant(1, 1.0).unwrap(),
            3.0,
            1,
        )
        .unwrap();
        let mut g = [0.0];
        spec.grad_z(&[0.3], &[0.1], &[2.0], &mut g);
        assert!((g[0] - 12.0).abs() < 1e-12);
    }

    #[test]
    fn homogeneous_in_z() {
        let spec = default_spec();
        let base = spec.eval(&[0.3], &[0.8], &[1.5]);
        for t in [-2.0, -0.5, 0.25, 3.0_f64] {
            let scaled = spec.eval(&[0.3], &[0.8], &[1.5 * t]);
            assert!((scaled - t.abs().powi(2) * base).abs() <= 1e-12 * scaled.abs().max(1.0));
        }
    }

    #[test]
    fn growth_and_convexity_hold_for_separable() {
        let spec = default_spec();
        assert!(spec.growth_defect(200, 3) <= 0.0);
        assert!(spec.midpoint_convexity_defect(200, 3) <= 1e-12);
        assert_eq!(spec.alpha(), 1.0);
        assert_eq!(spec.beta(), 2.0);
    }

    #[test]
    fn reflection_defect_even_pair_is_zero() {
        let k = Kernel::by_name("box", 1, 1.0, 1.0).unwrap();
        assert_eq!(reflection_defect(&k, &default_spec(), 100, 11), 0.0);
    }

    #[test]
    fn reflection_defect_one_sided_is_positive() {
        let k = Kernel::by_name("onesided", 1, 1.0, 0.25).unwrap();
        assert!(reflection_defect(&k, &default_spec(), 100, 11) > 0.0);
    }

    #[test]
    fn reflection_defect_zero_kernel() {
        let q = Quadrature::build(1, 1.0, 8, 0).unwrap();
        let rows: Vec<(Vec<f64>, f64)> = (0..q.len()).map(|i| (q.node(i).to_vec(), 0.0)).collect();
        let k = Kernel::tabulated(&q, &rows, 0.0, 1.0).unwrap();
        assert_eq!(reflection_defect(&k, &default_spec(), 50, 11), 0.0);
    }

    #[test]
    fn general_convex_callbacks() {
        let value: super::PointFn = Arc::new(|_x, _y, z: &[f64]| z[0] * z[0] + 0.5 * z[0].abs().powi(4));
        let grad: super::GradFn =
            Arc::new(|_x, _y, z: &[f64], out: &mut [f64]| out[0] = 2.0 * z[0] + 2.0 * z[0].powi(3));
        let spec = DensitySpec::general(value, grad, 1.0, 2.0, 2.0, 1, GrowthMode::Affine).unwrap();
        assert_eq!(spec.eval(&[0.0], &[0.0], &[1.0]), 1.5);
        assert!(spec.midpoint_convexity_defect(100, 5) <= 1e-12);
    }
}
