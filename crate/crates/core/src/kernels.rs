//! Interaction kernels and the quadrature used to discretize integrals
//! against them over the ball `B_T`.
//!
//! A kernel is a non-negative weight `rho` on `R^d`. Construction records the
//! pair `(c0, r0)` with `rho >= c0` on the ball `B_{r0}`, whether the origin
//! is a singular point, and whether the total mass `∫ rho` is finite. The
//! quadrature is a midpoint rule on the uniform partition of `[-T,T]^d`
//! restricted to `B_T`, with cells near the origin geometrically refined so
//! that integrands scaling like `|xi|^p` stay resolved even for kernels with
//! a non-integrable origin singularity.

use std::sync::Arc;

use crate::{Error, Result};

/// Whether the raw kernel mass `∫ rho` is finite.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IntegrableClass {
    Integrable,
    NonIntegrable,
}

#[derive(Clone)]
enum KernelShape {
    /// Indicator of `[-T,T]^d` (coincides with the ball indicator once the
    /// quadrature restricts to `B_T`).
    BoxCut,
    /// Indicator of the ball `B_T`.
    Disk,
    /// `d = 1` only: indicator of `[-r0, T]`.
    OneSided,
    /// `exp(-|xi|)`, unbounded support.
    Exp,
    /// `|xi|^{-d}` on `B_T \ {0}`; non-integrable at the origin.
    InvNorm,
    /// Values tabulated on a fixed node set; off-table evaluation yields NaN.
    Tabulated(Arc<TabulatedKernel>),
}

/// Kernel values tabulated on quadrature nodes, keyed by the exact bit
/// pattern of the node coordinates.
pub struct TabulatedKernel {
    dim: usize,
    map: std::collections::HashMap<Vec<u64>, f64>,
}

impl TabulatedKernel {
    fn key(xi: &[f64]) -> Vec<u64> {
        xi.iter().map(|c| c.to_bits()).collect()
    }

    fn lookup(&self, xi: &[f64]) -> f64 {
        self.map.get(&Self::key(xi)).copied().unwrap_or(f64::NAN)
    }
}

/// An interaction kernel together with its assumption metadata.
#[derive(Clone)]
pub struct Kernel {
    dim: usize,
    shape: KernelShape,
    name: String,
    /// Radius of the support, `None` when unbounded.
    support_radius: Option<f64>,
    /// Scale parameter of the indicator shapes (their support radius).
    scale: f64,
    /// Hard truncation applied by [`truncate`]; evaluation is zero outside.
    cutoff: Option<f64>,
    c0: f64,
    r0: f64,
    origin_singular: bool,
    integrable: IntegrableClass,
}

impl Kernel {
    /// Builds a kernel from the built-in library.
    ///
    /// Names: `box`, `disk`, `onesided`, `exp`, `invnorm`. `t` is the
    /// support/cut radius of the indicator shapes and `r0` the declared
    /// lower-ball radius: the metadata pair `(c0, r0)` asserts
    /// `rho >= c0` on `B_{r0}`. For `onesided`, `r0` is also the left end of
    /// the support `[-r0, t]`.
    pub fn by_name(name: &str, dim: usize, t: f64, r0: f64) -> Result<Kernel> {
        if dim != 1 && dim != 2 {
            return Err(Error::invalid(format!("kernel dim must be 1 or 2, got {dim}")));
        }
        if t <= 0.0 {
            return Err(Error::invalid("kernel radius t must be positive"));
        }
        if r0 <= 0.0 {
            return Err(Error::invalid("kernel lower-ball radius r0 must be positive"));
        }
        let k = match name {
            "box" => Kernel {
                dim,
                shape: KernelShape::BoxCut,
                name: name.into(),
                support_radius: Some(t),
                scale: t,
                cutoff: None,
                c0: 1.0,
                r0: r0.min(t),
                origin_singular: false,
                integrable: IntegrableClass::Integrable,
            },
            "disk" => Kernel {
                dim,
                shape: KernelShape::Disk,
                name: name.into(),
                support_radius: Some(t),
                scale: t,
                cutoff: None,
                c0: 1.0,
                r0: r0.min(t),
                origin_singular: false,
                integrable: IntegrableClass::Integrable,
            },
            "onesided" => {
                if dim != 1 {
                    return Err(Error::invalid("onesided kernel is one-dimensional"));
                }
                if r0 >= t {
                    return Err(Error::invalid("onesided kernel needs 0 < r0 < t"));
                }
                Kernel {
                    dim,
                    shape: KernelShape::OneSided,
                    name: name.into(),
                    support_radius: Some(t),
                    scale: t,
                    cutoff: None,
                    c0: 1.0,
                    r0,
                    origin_singular: false,
                    integrable: IntegrableClass::Integrable,
                }
            }
            "exp" => Kernel {
                dim,
                shape: KernelShape::Exp,
                name: name.into(),
                support_radius: None,
                scale: t,
                cutoff: None,
                c0: (-r0).exp(),
                r0,
                origin_singular: false,
                integrable: IntegrableClass::Integrable,
            },
            "invnorm" => {
                let r0 = r0.min(t);
                Kernel {
                    dim,
                    shape: KernelShape::InvNorm,
                    name: name.into(),
                    support_radius: Some(t),
                    scale: t,
                    cutoff: None,
                    c0: r0.powi(-(dim as i32)),
                    r0,
                    origin_singular: true,
                    integrable: IntegrableClass::NonIntegrable,
                }
            }
            other => return Err(Error::invalid(format!("unknown kernel name `{other}`"))),
        };
        Ok(k)
    }

    /// Builds a kernel from values tabulated on the nodes of `quad`.
    ///
    /// `rows` holds `(node coordinates, value)` pairs; every quadrature node
    /// must be covered and values must be non-negative and finite.
    pub fn tabulated(quad: &Quadrature, rows: &[(Vec<f64>, f64)], c0: f64, r0: f64) -> Result<Kernel> {
        let mut map = std::collections::HashMap::new();
        for (xi, v) in rows {
            if xi.len() != quad.dim {
                return Err(Error::invalid("tabulated node dimension mismatch"));
            }
            if !v.is_finite() || *v < 0.0 {
                return Err(Error::invalid("tabulated kernel values must be finite and >= 0"));
            }
            map.insert(TabulatedKernel::key(xi), *v);
        }
        let tab = TabulatedKernel { dim: quad.dim, map };
        for i in 0..quad.len() {
            if tab.lookup(quad.node(i)).is_nan() {
                return Err(Error::invalid(format!(
                    "tabulated kernel misses quadrature node {:?}",
                    quad.node(i)
                )));
            }
        }
        Ok(Kernel {
            dim: quad.dim,
            shape: KernelShape::Tabulated(Arc::new(tab)),
            name: "tabulated".into(),
            support_radius: Some(quad.t),
            scale: quad.t,
            cutoff: None,
            c0,
            r0,
            origin_singular: false,
            integrable: IntegrableClass::Integrable,
        })
    }

    /// Parses a tabulated kernel from CSV text with columns `xi_1..xi_d, value`.
    pub fn tabulated_from_csv(quad: &Quadrature, text: &str, c0: f64, r0: f64) -> Result<Kernel> {
        let mut rows = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != quad.dim + 1 {
                return Err(Error::invalid(format!(
                    "kernel csv line {}: expected {} fields, got {}",
                    lineno + 1,
                    quad.dim + 1,
                    fields.len()
                )));
            }
            let mut nums = Vec::with_capacity(fields.len());
            for f in &fields {
                nums.push(f.parse::<f64>().map_err(|e| {
                    Error::invalid(format!("kernel csv line {}: {}", lineno + 1, e))
                })?);
            }
            let value = nums.pop().unwrap();
            rows.push((nums, value));
        }
        Kernel::tabulated(quad, &rows, c0, r0)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// Lower bound pair `(c0, r0)`: `rho >= c0` on `B_{r0}`.
    pub fn lower_ball(&self) -> (f64, f64) {
        (self.c0, self.r0)
    }

    pub fn support_radius(&self) -> Option<f64> {
        self.support_radius
    }

    pub fn origin_singular(&self) -> bool {
        self.origin_singular
    }

    pub fn integrable_class(&self) -> IntegrableClass {
        self.integrable
    }

    /// Evaluates `rho(xi)`. May return `+inf` (singular kernels) or NaN
    /// (tabulated kernels off their table); downstream sums reject those.
    pub fn eval(&self, xi: &[f64]) -> f64 {
        debug_assert_eq!(xi.len(), self.dim);
        if let Some(tc) = self.cutoff {
            if norm(xi) >= tc {
                return 0.0;
            }
        }
        match &self.shape {
            KernelShape::BoxCut => {
                if xi.iter().all(|c| c.abs() <= self.scale) {
                    1.0
                } else {
                    0.0
                }
            }
            KernelShape::Disk => {
                if norm(xi) <= self.scale {
                    1.0
                } else {
                    0.0
                }
            }
            KernelShape::OneSided => {
                if xi[0] >= -self.r0 && xi[0] <= self.scale {
                    1.0
                } else {
                    0.0
                }
            }
            KernelShape::Exp => (-norm(xi)).exp(),
            KernelShape::InvNorm => {
                let n = norm(xi);
                if n > self.scale {
                    0.0
                } else {
                    n.powi(-(self.dim as i32))
                }
            }
            KernelShape::Tabulated(tab) => tab.lookup(xi),
        }
    }
}

fn norm(xi: &[f64]) -> f64 {
    xi.iter().map(|c| c * c).sum::<f64>().sqrt()
}

/// Midpoint quadrature for `∫_{B_T} rho(xi) (...) dxi`.
///
/// Nodes are cell midpoints, weights the cell volumes. Cells meeting the
/// inner ball `B_{T/4}` are halved `grading` times, so cell size decreases
/// geometrically toward the origin. A cell of the outer partition enters the
/// rule iff its midpoint lies in the open ball `B_T`.
#[derive(Debug, Clone)]
pub struct Quadrature {
    dim: usize,
    t: f64,
    nodes: Vec<f64>,
    weights: Vec<f64>,
    descriptor: QuadratureDescriptor,
}

/// Construction parameters plus the tolerance the rule declares for
/// `Σ weights = |B_T|` (exact tiling in d = 1, an `O(h)` boundary error in
/// d = 2).
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureDescriptor {
    pub base_cells_per_axis: usize,
    pub grading_levels: usize,
    pub sum_tolerance: f64,
}

struct Cell {
    center: Vec<f64>,
    width: f64,
}

impl Cell {
    /// Distance from the origin to the closed cube, zero if it contains 0.
    fn dist_to_origin(&self) -> f64 {
        self.center
            .iter()
            .map(|c| (c.abs() - 0.5 * self.width).max(0.0).powi(2))
            .sum::<f64>()
            .sqrt()
    }
}

impl Quadrature {
    /// Builds the graded midpoint rule on `B_T`.
    pub fn build(dim: usize, t: f64, base_cells_per_axis: usize, grading_levels: usize) -> Result<Quadrature> {
        if dim != 1 && dim != 2 {
            return Err(Error::invalid(format!("quadrature dim must be 1 or 2, got {dim}")));
        }
        if t <= 0.0 {
            return Err(Error::invalid("quadrature radius T must be positive"));
        }
        if base_cells_per_axis < 4 {
            return Err(Error::invalid("base_cells_per_axis must be at least 4"));
        }
        let mut cells = base_partition(dim, t, base_cells_per_axis);
        for _ in 0..grading_levels {
            let mut refined = Vec::with_capacity(cells.len());
            for cell in cells {
                if cell.dist_to_origin() < t / 4.0 {
                    split(&cell, &mut refined);
                } else {
                    refined.push(cell);
                }
            }
            cells = refined;
        }
        let mut nodes = Vec::new();
        let mut weights = Vec::new();
        for cell in &cells {
            if norm(&cell.center) < t {
                nodes.extend_from_slice(&cell.center);
                weights.push(cell.width.powi(dim as i32));
            }
        }
        let sum_tolerance = match dim {
            1 => 1e-3,
            _ => (0.6 / base_cells_per_axis as f64).max(1e-3),
        };
        Ok(Quadrature {
            dim,
            t,
            nodes,
            weights,
            descriptor: QuadratureDescriptor {
                base_cells_per_axis,
                grading_levels,
                sum_tolerance,
            },
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn node(&self, i: usize) -> &[f64] {
        &self.nodes[i * self.dim..(i + 1) * self.dim]
    }

    pub fn weight(&self, i: usize) -> f64 {
        self.weights[i]
    }

    pub fn descriptor(&self) -> &QuadratureDescriptor {
        &self.descriptor
    }

    pub fn weight_sum(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// Volume of the ball the rule discretizes.
    pub fn ball_volume(&self) -> f64 {
        match self.dim {
            1 => 2.0 * self.t,
            _ => std::f64::consts::PI * self.t * self.t,
        }
    }

    pub fn contains_origin_node(&self) -> bool {
        (0..self.len()).any(|i| self.node(i).iter().all(|c| *c == 0.0))
    }

    /// First moment `Σ w_k rho(xi_k) xi_k`, the quantity obstructing the
    /// supercritical formula for asymmetric kernels.
    pub fn first_moment(&self, kernel: &Kernel) -> Vec<f64> {
        let mut m = vec![0.0; self.dim];
        for i in 0..self.len() {
            let xi = self.node(i);
            let c = self.weight(i) * kernel.eval(xi);
            for (acc, comp) in m.iter_mut().zip(xi) {
                *acc += c * comp;
            }
        }
        m
    }
}

fn base_partition(dim: usize, t: f64, base: usize) -> Vec<Cell> {
    let width = 2.0 * t / base as f64;
    let mut cells = Vec::with_capacity(base.pow(dim as u32));
    match dim {
        1 => {
            for i in 0..base {
                cells.push(Cell {
                    center: vec![-t + (i as f64 + 0.5) * width],
                    width,
                });
            }
        }
        _ => {
            for i in 0..base {
                for j in 0..base {
                    cells.push(Cell {
                        center: vec![-t + (i as f64 + 0.5) * width, -t + (j as f64 + 0.5) * width],
                        width,
                    });
                }
            }
        }
    }
    cells
}

fn split(cell: &Cell, out: &mut Vec<Cell>) {
    let w = cell.width / 2.0;
    let dim = cell.center.len();
    for corner in 0..(1usize << dim) {
        let mut center = cell.center.clone();
        for (axis, c) in center.iter_mut().enumerate() {
            let sign = if corner >> axis & 1 == 1 { 0.5 } else { -0.5 };
            *c += sign * w;
        }
        out.push(Cell { center, width: w });
    }
}

/// Discrete `p`-moments of a kernel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PMoments {
    /// `Σ w_k rho(xi_k) |xi_k|^p`
    pub full: f64,
    /// `Σ w_k rho(xi_k) |xi_{k,1}|^p`
    pub directional: f64,
}

/// Computes the full and first-component `p`-moments of `kernel` on `quad`.
pub fn p_moment(kernel: &Kernel, p: f64, quad: &Quadrature) -> Result<PMoments> {
    if kernel.dim() != quad.dim() {
        return Err(Error::invalid("kernel and quadrature dimension mismatch"));
    }
    let mut full = 0.0;
    let mut dir = 0.0;
    for i in 0..quad.len() {
        let xi = quad.node(i);
        let r = kernel.eval(xi);
        if !r.is_finite() {
            return Err(Error::NonFiniteKernel { index: i, node: xi.to_vec() });
        }
        let w = quad.weight(i) * r;
        full += w * norm(xi).powf(p);
        dir += w * xi[0].abs().powf(p);
    }
    Ok(PMoments { full, directional: dir })
}

/// Restricts `kernel` to `B_T` and estimates the discarded tail
/// `∫_{|xi|>T} rho |xi|^p` by midpoint sampling on shells out to `4T`.
///
/// The estimate is exactly zero when the support is already inside `B_T`.
pub fn truncate(kernel: &Kernel, t: f64, p: f64, tail_probe: usize) -> Result<(Kernel, f64)> {
    if t <= kernel.r0 {
        return Err(Error::invalid(format!(
            "truncation radius {} must exceed the kernel lower-ball radius {}",
            t, kernel.r0
        )));
    }
    let mut cut = kernel.clone();
    cut.cutoff = Some(t);
    cut.support_radius = Some(match kernel.support_radius {
        Some(s) => s.min(t),
        None => t,
    });

    if matches!(kernel.support_radius, Some(s) if s <= t) {
        return Ok((cut, 0.0));
    }

    let probes = tail_probe.max(4);
    let dr = 3.0 * t / probes as f64;
    let mut tail = 0.0;
    match kernel.dim {
        1 => {
            for j in 0..probes {
                let r = t + (j as f64 + 0.5) * dr;
                for s in [-1.0, 1.0] {
                    tail += dr * kernel.eval(&[s * r]) * r.powf(p);
                }
            }
        }
        _ => {
            let n_ang = probes.max(16);
            let dtheta = std::f64::consts::TAU / n_ang as f64;
            for j in 0..probes {
                let r = t + (j as f64 + 0.5) * dr;
                for a in 0..n_ang {
                    let theta = (a as f64 + 0.5) * dtheta;
                    let xi = [r * theta.cos(), r * theta.sin()];
                    tail += dr * dtheta * r * kernel.eval(&xi) * r.powf(p);
                }
            }
        }
    }
    Ok((cut, tail))
}

/// Report of the runtime-verifiable kernel assumptions.
#[derive(Debug, Clone)]
pub struct AssumptionReport {
    /// `min rho` over nodes in `B_{r0}` is at least `c0`.
    pub rho1_ok: bool,
    /// The discrete full `p`-moment.
    pub p_moment: f64,
    /// `max |rho(xi) - rho(-xi)|` over nodes.
    pub symmetry_defect: f64,
    /// Raw mass `Σ w_k rho(xi_k)` at the report's grading level.
    pub mass: f64,
    /// Masses recomputed at grading levels `0..=L`.
    pub mass_by_level: Vec<f64>,
    /// Set when refinement keeps increasing the mass, signalling an infinite
    /// total mass.
    pub divergence_flag: bool,
}

/// Checks the lower-ball bound, the symmetry of `rho`, the `p`-moment, and
/// classifies integrability by refining the grading. Report-only: never fails.
pub fn check_assumptions(kernel: &Kernel, p: f64, quad: &Quadrature) -> AssumptionReport {
    let (c0, r0) = kernel.lower_ball();
    let mut rho1_ok = true;
    let mut defect = 0.0f64;
    let mut moment = 0.0;
    let mut mass = 0.0;
    let mut neg = vec![0.0; quad.dim()];
    for i in 0..quad.len() {
        let xi = quad.node(i);
        let r = kernel.eval(xi);
        for (n, c) in neg.iter_mut().zip(xi) {
            *n = -c;
        }
        let rneg = kernel.eval(&neg);
        if r.is_finite() && rneg.is_finite() {
            defect = defect.max((r - rneg).abs());
        }
        if norm(xi) < r0 && r < c0 {
            rho1_ok = false;
        }
        let w = quad.weight(i);
        moment += w * r * norm(xi).powf(p);
        mass += w * r;
    }

    // Integrability probe: recompute the mass while the origin grading deepens.
    // Convergent masses have geometrically decaying increments; a divergent
    // kernel keeps gaining mass at every level.
    let levels = quad.descriptor().grading_levels.max(3);
    let mut mass_by_level = Vec::with_capacity(levels + 1);
    for level in 0..=levels {
        let m = Quadrature::build(quad.dim(), quad.t(), quad.descriptor().base_cells_per_axis, level)
            .map(|q| {
                (0..q.len())
                    .map(|i| q.weight(i) * kernel.eval(q.node(i)))
                    .sum::<f64>()
            })
            .unwrap_or(f64::INFINITY);
        mass_by_level.push(m);
    }
    let divergence_flag = diverging_mass(&mass_by_level);

    AssumptionReport {
        rho1_ok,
        p_moment: moment,
        symmetry_defect: defect,
        mass,
        mass_by_level,
        divergence_flag,
    }
}

fn diverging_mass(masses: &[f64]) -> bool {
    if masses.iter().any(|m| !m.is_finite()) {
        return true;
    }
    let n = masses.len();
    if n < 3 {
        return false;
    }
    let scale = masses[0].abs().max(1e-300);
    // Successive-level blow-up.
    for w in masses.windows(2) {
        if w[1] > 1.5 * w[0].max(1e-300) {
            return true;
        }
    }
    // Non-decaying increments: a convergent midpoint rule gains o(1) mass per
    // level (factor ~1/4 for smooth kernels, exactly 0 for piecewise-constant
    // ones), while log-divergent kernels gain a fixed amount per level.
    let d_last = masses[n - 1] - masses[n - 2];
    let d_prev = masses[n - 2] - masses[n - 3];
    d_last > 1e-9 * scale && d_last > 0.5 * d_prev
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadrature_d1_base4_ungraded() {
        let q = Quadrature::build(1, 1.0, 4, 0).unwrap();
        let mut nodes: Vec<f64> = (0..q.len()).map(|i| q.node(i)[0]).collect();
        nodes.sort_by(f64::total_cmp);
        assert_eq!(nodes, vec![-0.75, -0.25, 0.25, 0.75]);
        assert!(q.weights.iter().all(|w| *w == 0.5));
    }

    #[test]
    fn quadrature_d1_base4_one_grading_level() {
        let q = Quadrature::build(1, 1.0, 4, 1).unwrap();
        assert_eq!(q.len(), 6);
        let mut pairs: Vec<(f64, f64)> = (0..q.len()).map(|i| (q.node(i)[0], q.weight(i))).collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let nodes: Vec<f64> = pairs.iter().map(|p| p.0).collect();
        let weights: Vec<f64> = pairs.iter().map(|p| p.1).collect();
        assert_eq!(nodes, vec![-0.75, -0.375, -0.125, 0.125, 0.375, 0.75]);
        assert_eq!(weights, vec![0.5, 0.25, 0.25, 0.25, 0.25, 0.5]);
    }

    #[test]
    fn quadrature_d2_weight_sum_near_disk_area() {
        let q = Quadrature::build(2, 1.0, 32, 0).unwrap();
        let rel = (q.weight_sum() - std::f64::consts::PI).abs() / std::f64::consts::PI;
        assert!(rel < 1e-2, "relative error {rel}");
    }

    #[test]
    fn quadrature_weight_sum_within_declared_tolerance() {
        for (d, base, grading) in [(1, 4, 0), (1, 8, 2), (1, 64, 3), (2, 8, 0), (2, 16, 1), (2, 32, 2), (2, 64, 0)] {
            let q = Quadrature::build(d, 1.0, base, grading).unwrap();
            assert!(q.weights.iter().all(|w| *w > 0.0));
            let rel = (q.weight_sum() - q.ball_volume()).abs() / q.ball_volume();
            assert!(
                rel <= q.descriptor().sum_tolerance,
                "d={d} base={base} grading={grading}: rel {rel} > declared {}",
                q.descriptor().sum_tolerance
            );
        }
    }

    #[test]
    fn quadrature_rejects_bad_input() {
        assert!(Quadrature::build(3, 1.0, 8, 0).is_err());
        assert!(Quadrature::build(1, 0.0, 8, 0).is_err());
        assert!(Quadrature::build(1, 1.0, 2, 0).is_err());
    }

    #[test]
    fn p_moment_box_d1() {
        // ∫_{-1}^{1} xi^2 dxi = 2/3
        let q = Quadrature::build(1, 1.0, 64, 2).unwrap();
        let k = Kernel::by_name("box", 1, 1.0, 1.0).unwrap();
        let m = p_moment(&k, 2.0, &q).unwrap();
        assert!((m.full - 2.0 / 3.0).abs() < 1e-3);
        assert!((m.directional - 2.0 / 3.0).abs() < 1e-3);
    }

    #[test]
    fn p_moment_disk_d2() {
        // Polar: ∫_{B_1} xi_1^2 = pi/4, ∫_{B_1} |xi|^2 = pi/2.
        let q = Quadrature::build(2, 1.0, 128, 0).unwrap();
        let k = Kernel::by_name("disk", 2, 1.0, 1.0).unwrap();
        let m = p_moment(&k, 2.0, &q).unwrap();
        assert!((m.directional - std::f64::consts::PI / 4.0).abs() / (std::f64::consts::PI / 4.0) < 1e-2);
        assert!((m.full - std::f64::consts::PI / 2.0).abs() / (std::f64::consts::PI / 2.0) < 1e-2);
    }

    #[test]
    fn p_moment_zero_kernel() {
        let q = Quadrature::build(1, 1.0, 8, 0).unwrap();
        let k = Kernel::tabulated(&q, &tab_rows(&q, |_| 0.0), 0.0, 1.0).unwrap();
        let m = p_moment(&k, 2.0, &q).unwrap();
        assert_eq!(m.full, 0.0);
        assert_eq!(m.directional, 0.0);
    }

    #[test]
    fn p_moment_monotone_in_kernel() {
        let q = Quadrature::build(1, 1.0, 16, 1).unwrap();
        let lo = Kernel::tabulated(&q, &tab_rows(&q, |x| 0.5 + 0.2 * x.abs()), 0.5, 1.0).unwrap();
        let hi = Kernel::tabulated(&q, &tab_rows(&q, |x| 0.7 + 0.4 * x.abs()), 0.7, 1.0).unwrap();
        let mlo = p_moment(&lo, 2.0, &q).unwrap();
        let mhi = p_moment(&hi, 2.0, &q).unwrap();
        assert!(mlo.full <= mhi.full);
    }

    fn tab_rows(q: &Quadrature, f: impl Fn(f64) -> f64) -> Vec<(Vec<f64>, f64)> {
        (0..q.len()).map(|i| (q.node(i).to_vec(), f(q.node(i)[0]))).collect()
    }

    #[test]
    fn truncate_compact_support_has_zero_tail() {
        let k = Kernel::by_name("box", 1, 1.0, 0.5).unwrap();
        let (_, tail) = truncate(&k, 1.0, 2.0, 32).unwrap();
        assert_eq!(tail, 0.0);
    }

    #[test]
    fn truncate_exp_tail_matches_antiderivative() {
        // 2 ∫_5^∞ xi^2 e^{-xi} dxi = 2 e^{-5} (25 + 10 + 2) ≈ 0.49868
        let k = Kernel::by_name("exp", 1, 1.0, 1.0).unwrap();
        let (cut, tail) = truncate(&k, 5.0, 2.0, 64).unwrap();
        let exact = 2.0 * (-5.0f64).exp() * 37.0;
        assert!((tail - exact).abs() / exact < 0.05, "tail {tail} vs {exact}");
        assert_eq!(cut.support_radius(), Some(5.0));
        assert_eq!(cut.eval(&[6.0]), 0.0);
    }

    #[test]
    fn truncate_invnorm_keeps_classification() {
        // ∫_0^1 xi^{-1} diverges while ∫_0^1 xi^{-1} xi^2 = 1/2 per side.
        let k = Kernel::by_name("invnorm", 1, 1.0, 0.5).unwrap();
        let (cut, tail) = truncate(&k, 1.0, 2.0, 32).unwrap();
        assert_eq!(tail, 0.0);
        assert_eq!(cut.integrable_class(), IntegrableClass::NonIntegrable);
        let q = Quadrature::build(1, 1.0, 16, 4).unwrap();
        let m = p_moment(&cut, 2.0, &q).unwrap();
        assert!((m.full - 1.0).abs() < 0.05, "p-moment {m:?}");
    }

    #[test]
    fn truncate_rejects_radius_below_lower_ball() {
        let k = Kernel::by_name("box", 1, 1.0, 1.0).unwrap();
        assert!(truncate(&k, 1.0, 2.0, 8).is_err());
    }

    #[test]
    fn assumptions_even_indicator() {
        let q = Quadrature::build(1, 1.0, 32, 2).unwrap();
        let k = Kernel::by_name("box", 1, 1.0, 1.0).unwrap();
        let rep = check_assumptions(&k, 2.0, &q);
        assert!(rep.rho1_ok);
        assert_eq!(rep.symmetry_defect, 0.0);
        assert!((rep.mass - 2.0).abs() < 1e-9);
        assert!(!rep.divergence_flag);
    }

    #[test]
    fn assumptions_one_sided_kernel() {
        let q = Quadrature::build(1, 1.0, 32, 0).unwrap();
        let k = Kernel::by_name("onesided", 1, 1.0, 0.25).unwrap();
        let rep = check_assumptions(&k, 2.0, &q);
        assert!(rep.rho1_ok);
        assert_eq!(rep.symmetry_defect, 1.0);
        assert_eq!(k.lower_ball(), (1.0, 0.25));
    }

    #[test]
    fn assumptions_flag_log_divergent_mass() {
        let q = Quadrature::build(1, 1.0, 16, 3).unwrap();
        let k = Kernel::by_name("invnorm", 1, 1.0, 1.0).unwrap();
        let rep = check_assumptions(&k, 2.0, &q);
        assert!(rep.divergence_flag, "masses {:?}", rep.mass_by_level);
        // Mass grows roughly log-linearly with the grading level.
        let d1 = rep.mass_by_level[2] - rep.mass_by_level[1];
        let d2 = rep.mass_by_level[3] - rep.mass_by_level[2];
        assert!(d2 > 0.5 * d1);
    }

    #[test]
    fn assumptions_exp_kernel_converges() {
        let q = Quadrature::build(1, 1.0, 16, 2).unwrap();
        let k = Kernel::by_name("exp", 1, 1.0, 1.0).unwrap();
        let rep = check_assumptions(&k, 2.0, &q);
        assert!(!rep.divergence_flag, "masses {:?}", rep.mass_by_level);
    }

    #[test]
    fn first_moment_one_sided() {
        // ∫_{-1/4}^{1} xi dxi = 15/32; cell boundaries align with the jump.
        let q = Quadrature::build(1, 1.0, 64, 2).unwrap();
        let k = Kernel::by_name("onesided", 1, 1.0, 0.25).unwrap();
        let m = q.first_moment(&k);
        assert!((m[0] - 15.0 / 32.0).abs() < 1e-12, "first moment {}", m[0]);
    }

    #[test]
    fn p_moment_errors_on_origin_singularity() {
        // Odd base without grading puts a node at the origin.
        let q = Quadrature::build(1, 1.0, 5, 0).unwrap();
        assert!(q.contains_origin_node());
        let k = Kernel::by_name("invnorm", 1, 1.0, 1.0).unwrap();
        assert!(matches!(p_moment(&k, 2.0, &q), Err(Error::NonFiniteKernel { .. })));
    }
}
