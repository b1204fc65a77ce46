//! First-order minimization of smooth convex energies over periodic fields.
//!
//! The driver is an accelerated gradient method with backtracking line
//! search, monotone acceptance, and adaptive restart; a nonlinear
//! conjugate-gradient variant is available as an alternative. Every iterate
//! is passed through a caller-supplied gauge projection (typically mean-zero)
//! so the fixed affine subspace is never left, and the stopping certificate
//! is the discrete-L2 norm of the gauge-projected gradient.
//!
//! Energy callbacks return the scalar energy; gradient callbacks return the
//! L2 representative of the derivative, i.e. the field `g` with
//! `dE(v)[w] = <g, w>_h`. Both may fail on non-finite intermediate values and
//! the optimizer aborts with diagnostics in that case.

use crate::torus::PeriodicField;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Algorithm {
    AcceleratedGradient,
    NonlinearCg,
}

/// Options controlling [`minimize`].
#[derive(Debug, Clone)]
pub struct OptimizerOptions {
    /// Stop when the projected gradient norm falls below this.
    pub tol_grad: f64,
    pub max_iter: usize,
    pub algorithm: Algorithm,
    /// Backtracking shrink factor.
    pub shrink: f64,
    /// Sufficient-decrease constant of the Armijo test (used by the
    /// conjugate-gradient line search; the accelerated driver instead tests
    /// the majorization constant 1/2, which its momentum requires).
    pub sufficient_decrease: f64,
    /// Forced momentum restart period; 0 disables (adaptive restart stays on).
    pub restart_every: usize,
}

impl OptimizerOptions {
    /// Defaults keyed on the growth exponent: tighter gradient tolerance for
    /// the quadratic case.
    pub fn for_exponent(p: f64) -> OptimizerOptions {
        OptimizerOptions {
            tol_grad: if p == 2.0 { 1e-8 } else { 1e-6 },
            max_iter: 5000,
            algorithm: Algorithm::AcceleratedGradient,
            shrink: 0.5,
            sufficient_decrease: 1e-4,
            restart_every: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tol_grad > 0.0) {
            return Err(Error::invalid("tol_grad must be positive"));
        }
        if self.max_iter == 0 {
            return Err(Error::invalid("max_iter must be at least 1"));
        }
        if !(self.shrink > 0.0 && self.shrink < 1.0) {
            return Err(Error::invalid("shrink must lie in (0, 1)"));
        }
        Ok(())
    }
}

/// Convergence record of a [`minimize`] run.
#[derive(Debug, Clone)]
pub struct MinimizeStats {
    pub iterations: usize,
    pub grad_norm: f64,
    pub energy_evals: usize,
    pub gradient_evals: usize,
    pub converged: bool,
    pub final_step: f64,
    /// Best energy seen up to each accepted iterate, starting at the initial
    /// point; non-increasing by construction. The walking iterate may sit a
    /// few ulps above this floor while its gradient keeps contracting.
    pub energy_trace: Vec<f64>,
}

pub type EnergyFn<'a> = dyn Fn(&PeriodicField) -> Result<f64> + 'a;
pub type GradientFn<'a> = dyn Fn(&PeriodicField) -> Result<PeriodicField> + 'a;
pub type GaugeFn<'a> = dyn Fn(&PeriodicField) -> PeriodicField + 'a;

struct Driver<'a> {
    energy: &'a EnergyFn<'a>,
    gradient: &'a GradientFn<'a>,
    gauge: &'a GaugeFn<'a>,
    energy_evals: usize,
    gradient_evals: usize,
}

impl<'a> Driver<'a> {
    fn energy(&mut self, v: &PeriodicField, iter: usize, step: f64) -> Result<f64> {
        self.energy_evals += 1;
        let e = (self.energy)(v)?;
        if !e.is_finite() {
            return Err(Error::NonFiniteIterate { what: "energy", iteration: iter, step });
        }
        Ok(e)
    }

    fn grad(&mut self, v: &PeriodicField, iter: usize, step: f64) -> Result<PeriodicField> {
        self.gradient_evals += 1;
        let g = (self.gradient)(v)?;
        if g.values().iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFiniteIterate { what: "gradient", iteration: iter, step });
        }
        Ok((self.gauge)(&g))
    }
}

/// Roundoff allowance of the decrease tests: near the minimum the required
/// Armijo decrease falls below the resolution of the computed energy, and
/// without this slack the line search stalls while the gradient is still
/// above tolerance.
fn push_monotone(trace: &mut Vec<f64>, e: f64) {
    let last = trace.last().copied().unwrap_or(f64::INFINITY);
    trace.push(e.min(last));
}

fn energy_noise(e: f64) -> f64 {
    4.0 * f64::EPSILON * e.abs().max(1.0)
}

/// Whether the sufficient-decrease test still resolves anything: once the
/// expected Armijo decrease drops below the energy's roundoff, line-search
/// acceptance is noise and plain gradient steps take over.
fn below_energy_resolution(opts: &OptimizerOptions, step: f64, gn2: f64, e: f64) -> bool {
    opts.sufficient_decrease * step * gn2 < 16.0 * energy_noise(e)
}

/// Endgame: once energy comparisons are below roundoff resolution, run the
/// accelerated iteration with the calibrated fixed step and no energy tests.
/// The gradient-restart rule needs only inner products, so acceleration
/// survives; a divergence guard halves the step if the gradient norm ever
/// explodes (invalid fixed step on a non-quadratic energy).
#[allow(clippy::too_many_arguments)]
fn gradient_endgame(
    drv: &mut Driver,
    v: &mut PeriodicField,
    e_v: &mut f64,
    g_v: &mut PeriodicField,
    gn_v: &mut f64,
    trace: &mut Vec<f64>,
    opts: &OptimizerOptions,
    stats: &mut MinimizeStats,
    mut step: f64,
) -> Result<()> {
    let mut z = v.clone();
    let mut y = z.clone();
    let mut g_y = g_v.clone();
    let mut gn_y = *gn_v;
    let mut momentum = 1.0f64;
    let mut best_gn = gn_y;

    // The momentum iteration is stable for steps up to 1/L, stricter than
    // what the line search accepted; estimate the top curvature by power
    // iteration on the gradient map (exact for quadratic energies).
    if gn_y > opts.tol_grad {
        let tau = 1e-5 * (1.0 + z.norm_h()) / gn_y.max(1e-30);
        let mut dir = g_y.clone();
        dir.scale(1.0 / gn_y);
        let mut curv = 0.0;
        for _ in 0..3 {
            let mut probe = z.clone();
            probe.axpy(tau, &dir);
            let mut dg = drv.grad(&probe, stats.iterations, step)?;
            dg.axpy(-1.0, &g_y);
            let norm = dg.norm_h();
            if !(norm > 0.0) {
                break;
            }
            curv = norm / tau;
            dir = dg;
            dir.scale(1.0 / norm);
        }
        if curv > 0.0 {
            step = step.min(0.95 / curv);
        }
    }

    while stats.iterations < opts.max_iter && gn_y > opts.tol_grad {
        stats.iterations += 1;
        let mut z_new = y.clone();
        z_new.axpy(-step, &g_y);
        let z_new = (drv.gauge)(&z_new);
        let mut dz = z_new.clone();
        dz.axpy(-1.0, &z);
        let restart = g_y.dot_h(&dz) > 0.0;
        if restart {
            momentum = 1.0;
            y = z_new.clone();
        } else {
            let t_next = 0.5 * (1.0 + (1.0 + 4.0 * momentum * momentum).sqrt());
            y = z_new.clone();
            y.axpy((momentum - 1.0) / t_next, &dz);
            momentum = t_next;
        }
        z = z_new;
        g_y = drv.grad(&y, stats.iterations, step)?;
        gn_y = g_y.norm_h();
        stats.final_step = step;
        if gn_y < best_gn {
            best_gn = gn_y;
        } else if gn_y > 1e3 * best_gn.max(opts.tol_grad) {
            // Unstable step: halve, drop momentum, and re-baseline the guard
            // at the current point.
            step *= opts.shrink;
            momentum = 1.0;
            y = z.clone();
            g_y = drv.grad(&y, stats.iterations, step)?;
            gn_y = g_y.norm_h();
            best_gn = gn_y;
            if step < 1e-20 {
                break;
            }
        }
    }
    *v = y;
    *g_v = g_y;
    *gn_v = gn_y;
    *e_v = drv.energy(v, stats.iterations, step)?;
    push_monotone(trace, *e_v);
    Ok(())
}

/// Line search along `-g` from `base`: backtracking against the decrease
/// test `E(cand) <= E(base) - decrease * s * |g|^2`, with a roundoff
/// allowance. The accelerated driver passes `decrease = 1/2`, the
/// majorization bound that certifies a momentum-stable step `s <= 1/L`.
/// Returns the accepted point, its energy, and the step; fails over to the
/// smallest step when the test cannot be met, reporting `step = 0` so the
/// caller can flag stagnation.
#[allow(clippy::too_many_arguments)]
fn backtrack(
    drv: &mut Driver,
    base: &PeriodicField,
    e_base: f64,
    g: &PeriodicField,
    gn2: f64,
    step0: f64,
    decrease: f64,
    opts: &OptimizerOptions,
    iter: usize,
) -> Result<(PeriodicField, f64, f64)> {
    let mut s = step0;
    let noise = energy_noise(e_base);
    let mut best: Option<(PeriodicField, f64, f64)> = None;
    for _ in 0..60 {
        let mut cand = base.clone();
        cand.axpy(-s, g);
        let cand = (drv.gauge)(&cand);
        let e = drv.energy(&cand, iter, s)?;
        if e <= e_base - decrease * s * gn2 + noise {
            return Ok((cand, e, s));
        }
        if best.as_ref().map_or(true, |(_, be, _)| e < *be) {
            best = Some((cand, e, s));
        }
        s *= opts.shrink;
        if s < 1e-20 {
            break;
        }
    }
    // Step floor reached: hand back the best point seen (monotone if it
    // improves on the base, otherwise the base itself) flagged by step 0.
    match best {
        Some((cand, e, _)) if e < e_base => Ok((cand, e, 0.0)),
        _ => Ok((base.clone(), e_base, 0.0)),
    }
}

/// Minimizes a convex C1 energy over the gauge subspace starting from
/// `init`. Returns the minimizer, its energy, and convergence statistics.
///
/// The accepted-energy sequence is non-increasing; every iterate satisfies
/// `gauge(v) = v`; identical inputs produce identical iterates.
pub fn minimize(
    energy: &EnergyFn,
    gradient: &GradientFn,
    gauge: &GaugeFn,
    init: &PeriodicField,
    opts: &OptimizerOptions,
) -> Result<(PeriodicField, f64, MinimizeStats)> {
    opts.validate()?;
    let mut drv = Driver { energy, gradient, gauge, energy_evals: 0, gradient_evals: 0 };

    let mut v = (drv.gauge)(init);
    let mut e_v = drv.energy(&v, 0, 0.0)?;
    let mut trace = vec![e_v];
    let mut g_v = drv.grad(&v, 0, 0.0)?;
    let mut gn_v = g_v.norm_h();

    let mut stats = MinimizeStats {
        iterations: 0,
        grad_norm: gn_v,
        energy_evals: 0,
        gradient_evals: 0,
        converged: gn_v <= opts.tol_grad,
        final_step: 0.0,
        energy_trace: Vec::new(),
    };
    if stats.converged {
        stats.energy_evals = drv.energy_evals;
        stats.gradient_evals = drv.gradient_evals;
        stats.energy_trace = trace;
        return Ok((v, e_v, stats));
    }

    match opts.algorithm {
        Algorithm::AcceleratedGradient => accelerated(&mut drv, &mut v, &mut e_v, &mut g_v, &mut gn_v, &mut trace, opts, &mut stats)?,
        Algorithm::NonlinearCg => nonlinear_cg(&mut drv, &mut v, &mut e_v, &mut g_v, &mut gn_v, &mut trace, opts, &mut stats)?,
    }

    stats.energy_evals = drv.energy_evals;
    stats.gradient_evals = drv.gradient_evals;
    stats.grad_norm = gn_v;
    stats.converged = gn_v <= opts.tol_grad;
    stats.energy_trace = trace;
    Ok((v, e_v, stats))
}

#[allow(clippy::too_many_arguments)]
fn accelerated(
    drv: &mut Driver,
    v: &mut PeriodicField,
    e_v: &mut f64,
    g_v: &mut PeriodicField,
    gn_v: &mut f64,
    trace: &mut Vec<f64>,
    opts: &OptimizerOptions,
    stats: &mut MinimizeStats,
) -> Result<()> {
    // Accelerated gradient with gradient-based adaptive restart. The
    // candidate sequence `z` is deliberately non-monotone (momentum needs the
    // overshoots); the best iterate is tracked separately so the reported
    // value sequence is non-increasing and the returned point carries a
    // gradient certificate.
    let mut z = v.clone();
    let mut e_z = *e_v;
    let mut g_z = g_v.clone();
    let mut gn_z = *gn_v;
    let mut best = v.clone();
    let mut e_best = *e_v;
    let mut y = v.clone();
    let mut y_is_z = true;
    let mut momentum = 1.0f64;
    let mut step = 1.0f64;

    for iter in 1..=opts.max_iter {
        stats.iterations = iter;
        if below_energy_resolution(opts, step, gn_z * gn_z, e_z) {
            *v = z;
            *e_v = e_z;
            *g_v = g_z;
            *gn_v = gn_z;
            return gradient_endgame(drv, v, e_v, g_v, gn_v, trace, opts, stats, step);
        }
        let (g_y, e_y) = if y_is_z {
            (g_z.clone(), e_z)
        } else {
            (drv.grad(&y, iter, step)?, drv.energy(&y, iter, step)?)
        };
        let gn2_y = g_y.dot_h(&g_y);
        let (z_new, e_new, used) = backtrack(drv, &y, e_y, &g_y, gn2_y, step, 0.5, opts, iter)?;
        stats.final_step = used;
        if used == 0.0 {
            // Step floor: no certifiable progress left along the gradient.
            if e_new < e_best {
                best = z_new;
                e_best = e_new;
            }
            push_monotone(trace, e_best);
            *g_v = drv.grad(&best, iter, 0.0)?;
            *gn_v = g_v.norm_h();
            *v = best;
            *e_v = e_best;
            return Ok(());
        }
        step = used;
        if e_new > 1e6 * (e_best.abs() + 1.0) {
            // Runaway overshoot: abandon the momentum excursion entirely.
            momentum = 1.0;
            z = best.clone();
            e_z = e_best;
            g_z = drv.grad(&z, iter, used)?;
            gn_z = g_z.norm_h();
            y = z.clone();
            y_is_z = true;
            push_monotone(trace, e_best);
            continue;
        }

        let mut dz = z_new.clone();
        dz.axpy(-1.0, &z);
        let restart_adaptive = g_y.dot_h(&dz) > 0.0;
        let restart_forced = opts.restart_every > 0 && iter % opts.restart_every == 0;
        if restart_adaptive || restart_forced {
            momentum = 1.0;
            y = z_new.clone();
            y_is_z = true;
        } else {
            let t_next = 0.5 * (1.0 + (1.0 + 4.0 * momentum * momentum).sqrt());
            y = z_new.clone();
            y.axpy((momentum - 1.0) / t_next, &dz);
            momentum = t_next;
            y_is_z = false;
        }

        z = z_new;
        e_z = e_new;
        if e_z < e_best {
            best = z.clone();
            e_best = e_z;
        }
        push_monotone(trace, e_z);
        g_z = drv.grad(&z, iter, used)?;
        gn_z = g_z.norm_h();
        if gn_z <= opts.tol_grad {
            *v = z;
            *e_v = e_z;
            *g_v = g_z;
            *gn_v = gn_z;
            return Ok(());
        }
    }

    // Iteration budget exhausted: return the best energy seen, with the
    // certificate evaluated at that point.
    *g_v = drv.grad(&best, opts.max_iter, step)?;
    *gn_v = g_v.norm_h();
    *v = best;
    *e_v = e_best;
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn nonlinear_cg(
    drv: &mut Driver,
    v: &mut PeriodicField,
    e_v: &mut f64,
    g_v: &mut PeriodicField,
    gn_v: &mut f64,
    trace: &mut Vec<f64>,
    opts: &OptimizerOptions,
    stats: &mut MinimizeStats,
) -> Result<()> {
    let mut dir = g_v.clone();
    dir.scale(-1.0);
    let mut step = 1.0f64;
    let restart_period = if opts.restart_every > 0 { opts.restart_every } else { v.values().len().max(10) };

    for iter in 1..=opts.max_iter {
        stats.iterations = iter;
        if below_energy_resolution(opts, step, *gn_v * *gn_v, *e_v) {
            return gradient_endgame(drv, v, e_v, g_v, gn_v, trace, opts, stats, step);
        }
        let dg = dir.dot_h(g_v);
        if dg >= 0.0 {
            // Not a descent direction: steepest-descent restart.
            dir = g_v.clone();
            dir.scale(-1.0);
        }
        let slope = -dir.dot_h(g_v);
        // Armijo backtracking along `dir` (slope is positive here).
        let mut s = step;
        let mut accepted = None;
        for _ in 0..60 {
            let mut cand = v.clone();
            cand.axpy(s, &dir);
            let cand = (drv.gauge)(&cand);
            let e = drv.energy(&cand, iter, s)?;
            if e <= *e_v - opts.sufficient_decrease * s * slope + energy_noise(*e_v) {
                accepted = Some((cand, e, s));
                break;
            }
            s *= opts.shrink;
            if s < 1e-20 {
                break;
            }
        }
        let Some((v_new, e_new, used)) = accepted else {
            stats.final_step = 0.0;
            return Ok(());
        };
        stats.final_step = used;
        step = (used * 2.0).min(1e12);

        let g_new = drv.grad(&v_new, iter, used)?;
        // Polak-Ribiere+ coefficient.
        let mut dg_field = g_new.clone();
        dg_field.axpy(-1.0, g_v);
        let beta = (g_new.dot_h(&dg_field) / g_v.dot_h(g_v)).max(0.0);
        let forced = iter % restart_period == 0;
        let mut new_dir = g_new.clone();
        new_dir.scale(-1.0);
        if !forced && beta > 0.0 {
            new_dir.axpy(beta, &dir);
        }
        dir = new_dir;

        *v = v_new;
        *e_v = e_new;
        *g_v = g_new;
        *gn_v = g_v.norm_h();
        push_monotone(trace, *e_v);
        if *gn_v <= opts.tol_grad {
            return Ok(());
        }
    }
    Ok(())
}

/// Compares the analytic gradient with central finite differences of the
/// energy along seeded random unit directions; returns the worst relative
/// error over 10 directions.
pub fn grad_check(
    energy: &EnergyFn,
    gradient: &GradientFn,
    point: &PeriodicField,
    step: f64,
    seed: u64,
) -> Result<f64> {
    if !(step > 0.0) {
        return Err(Error::invalid("finite-difference step must be positive"));
    }
    use rand::Rng;
    let mut rng = crate::sampling::rng(seed ^ 0x6664636b);
    let g = gradient(point)?;
    let mut worst = 0.0f64;
    for _ in 0..10 {
        let mut dir = PeriodicField::zeros(*point.grid(), point.components());
        for x in dir.values_mut() {
            *x = rng.gen_range(-1.0..1.0);
        }
        let n = dir.norm_h();
        if n == 0.0 {
            continue;
        }
        dir.scale(1.0 / n);
        let mut plus = point.clone();
        plus.axpy(step, &dir);
        let mut minus = point.clone();
        minus.axpy(-step, &dir);
        let fd = (energy(&plus)? - energy(&minus)?) / (2.0 * step);
        let an = g.dot_h(&dir);
        let denom = fd.abs().max(an.abs());
        if denom > 0.0 {
            worst = worst.max((fd - an).abs() / denom);
        }
    }
    Ok(worst)
}
