//! Finite-scale functional checks: assembly oracles, boundary-value
//! minimization, and small schedule runs.

use nlhomog_core::densities::{CoefficientField, DensitySpec};
use nlhomog_core::gamma::{
    domain_energy, minimize_with_boundary, run_schedule, DomainField, DomainGrid, EpsDeltaSchedule,
    GammaGridPolicy, ScheduleTarget,
};
use nlhomog_core::kernels::{Kernel, Quadrature};
use nlhomog_core::optimizer::OptimizerOptions;

fn box_kernel() -> Kernel {
    Kernel::by_name("box", 1, 1.0, 1.0).unwrap()
}

fn quad() -> Quadrature {
    Quadrature::build(1, 1.0, 64, 2).unwrap()
}

fn two_phase(p: f64) -> DensitySpec {
    let a = CoefficientField::new(1, 2, vec![2.0, 1.0]).unwrap();
    let b = CoefficientField::constant(1, 1.0).unwrap();
    DensitySpec::separable(a, b, p, 1).unwrap()
}

fn constant_density(c: f64) -> DensitySpec {
    let a = CoefficientField::constant(1, c).unwrap();
    let b = CoefficientField::constant(1, 1.0).unwrap();
    DensitySpec::separable(a, b, 2.0, 1).unwrap()
}

#[test]
fn affine_energy_counts_admissible_pairs() {
    // Constant difference quotient: the value is the boundary-depleted
    // kappa sum Σ w rho |M xi|^2 h |I_k|.
    let q = quad();
    let k = box_kernel();
    let n = 64;
    let grid = DomainGrid::new(1, n).unwrap();
    let u = DomainField::affine(grid, &[1.0], 1);
    let (eps, delta) = (0.125, 0.25);
    let e = domain_energy(&u, eps, delta, &[1.0], &constant_density(1.0), &k, &q).unwrap();

    let h = 1.0 / n as f64;
    let mut expect = 0.0;
    for kk in 0..q.len() {
        let xi = q.node(kk)[0];
        if k.eval(q.node(kk)) == 0.0 {
            continue;
        }
        let mut count = 0usize;
        for i in 0..=n {
            let x = i as f64 * h;
            let t = x + eps * xi;
            if (0.0..=1.0).contains(&t) {
                count += 1;
            }
        }
        expect += q.weight(kk) * xi * xi * h * count as f64;
    }
    assert!((e - expect).abs() <= 1e-12 * expect, "{e} vs {expect}");

    let zero = DomainField::affine(grid, &[0.0], 1);
    assert_eq!(domain_energy(&zero, eps, delta, &[0.0], &constant_density(1.0), &k, &q).unwrap(), 0.0);
}

#[test]
fn affine_energy_two_phase_matches_independent_resummation() {
    // delta = eps = 1/8: closed form Σ w rho M^2 xi^2 h Σ_{I_k} a(x_i/delta),
    // re-summed here with its own coefficient lookup.
    let q = quad();
    let k = box_kernel();
    let n = 128;
    let grid = DomainGrid::new(1, n).unwrap();
    let u = DomainField::affine(grid, &[1.0], 1);
    let (eps, delta) = (0.125, 0.125);
    let e = domain_energy(&u, eps, delta, &[1.0], &two_phase(2.0), &k, &q).unwrap();

    let h = 1.0 / n as f64;
    let mut expect = 0.0;
    for kk in 0..q.len() {
        let xi = q.node(kk)[0];
        if k.eval(q.node(kk)) == 0.0 {
            continue;
        }
        let mut spatial = 0.0;
        for i in 0..=n {
            let x = i as f64 * h;
            let t = x + eps * xi;
            if !(0.0..=1.0).contains(&t) {
                continue;
            }
            let cell = ((x / delta).rem_euclid(1.0) * 2.0).floor() as usize % 2;
            spatial += if cell == 0 { 2.0 } else { 1.0 };
        }
        expect += q.weight(kk) * xi * xi * h * spatial;
    }
    assert!((e - expect).abs() <= 1e-10 * expect, "{e} vs {expect}");
}

#[test]
fn affine_energy_independent_of_delta_for_constant_coefficient() {
    let q = quad();
    let k = box_kernel();
    let grid = DomainGrid::new(1, 64).unwrap();
    let u = DomainField::affine(grid, &[1.0], 1);
    let e1 = domain_energy(&u, 0.125, 0.5, &[1.0], &constant_density(1.3), &k, &q).unwrap();
    let e2 = domain_energy(&u, 0.125, 0.037, &[1.0], &constant_density(1.3), &k, &q).unwrap();
    assert_eq!(e1, e2);
}

#[test]
fn domain_energy_rejects_large_eps() {
    let q = quad();
    let grid = DomainGrid::new(1, 16).unwrap();
    let u = DomainField::affine(grid, &[1.0], 1);
    assert!(domain_energy(&u, 1.0, 0.5, &[1.0], &constant_density(1.0), &box_kernel(), &q).is_err());
}

#[test]
fn boundary_minimum_constant_coefficient_is_affine() {
    // Convexity: the affine competitor is optimal pairwise for constant a.
    let q = quad();
    let opts = OptimizerOptions::for_exponent(2.0);
    let eps = 0.0625;
    let min =
        minimize_with_boundary(eps, 0.25, &[1.0], 1.0, &constant_density(1.5), &box_kernel(), &q, &opts, 128)
            .unwrap();
    let grid = DomainGrid::new(1, 128).unwrap();
    let affine = DomainField::affine(grid, &[1.0], 1);
    let e_affine =
        domain_energy(&affine, eps, 0.25, &[1.0], &constant_density(1.5), &box_kernel(), &q).unwrap();
    assert!(min.converged);
    assert!((min.value - e_affine).abs() <= 1e-9 * e_affine, "{} vs {e_affine}", min.value);

    let zero =
        minimize_with_boundary(eps, 0.25, &[0.0], 1.0, &constant_density(1.5), &box_kernel(), &q, &opts, 64)
            .unwrap();
    assert_eq!(zero.value, 0.0);
    assert!(zero.minimizer.values().iter().all(|v| *v == 0.0));
}

#[test]
fn boundary_minimum_two_phase_beats_affine_competitor() {
    let q = quad();
    let opts = OptimizerOptions::for_exponent(2.0);
    let eps = 0.03125;
    let mut margins = Vec::new();
    for n in [256usize, 512] {
        let min =
            minimize_with_boundary(eps, eps, &[1.0], 1.0, &two_phase(2.0), &box_kernel(), &q, &opts, n)
                .unwrap();
        let grid = DomainGrid::new(1, n).unwrap();
        let affine = DomainField::affine(grid, &[1.0], 1);
        let e_affine = domain_energy(&affine, eps, eps, &[1.0], &two_phase(2.0), &box_kernel(), &q).unwrap();
        assert!(min.converged);
        let margin = e_affine - min.value;
        assert!(margin > 1e-3, "n={n}: margin {margin}");
        margins.push(margin);
    }
    // The oscillation gain persists under refinement.
    assert!((margins[0] - margins[1]).abs() < 0.5 * margins[0], "{margins:?}");
}

#[test]
fn boundary_nodes_are_bit_identical_to_affine_data() {
    let q = quad();
    let opts = OptimizerOptions::for_exponent(2.0);
    let eps = 0.0625;
    let n = 128;
    let min = minimize_with_boundary(eps, eps, &[1.3], 1.0, &two_phase(2.0), &box_kernel(), &q, &opts, n)
        .unwrap();
    let grid = DomainGrid::new(1, n).unwrap();
    let affine = DomainField::affine(grid, &[1.3], 1);
    let h = 1.0 / n as f64;
    let mut checked = 0;
    for i in 0..=n {
        let x = i as f64 * h;
        if x.min(1.0 - x) < eps {
            assert_eq!(min.minimizer.values()[i], affine.values()[i], "node {i}");
            checked += 1;
        }
    }
    assert_eq!(checked, min.frozen);
    assert!(checked >= 2);
}

#[test]
fn schedule_validation() {
    // Not decreasing.
    assert!(EpsDeltaSchedule::new(vec![(0.25, 0.25), (0.25, 0.125)], ScheduleTarget::Finite(1.0)).is_err());
    // Ratio trend away from the declared target.
    assert!(EpsDeltaSchedule::new(
        vec![(0.25, 0.25), (0.125, 0.0625)],
        ScheduleTarget::Zero
    )
    .is_err());
    // Valid critical schedule.
    let s = EpsDeltaSchedule::new(
        vec![(0.125, 0.125), (0.0625, 0.0625)],
        ScheduleTarget::Finite(1.0),
    )
    .unwrap();
    assert_eq!(s.entries().len(), 2);
    // Valid subcritical schedule eps = delta^2.
    EpsDeltaSchedule::new(vec![(0.0625, 0.25), (0.015625, 0.125)], ScheduleTarget::Zero).unwrap();
}

#[test]
fn critical_schedule_approaches_cell_value() {
    let q = quad();
    let opts = OptimizerOptions::for_exponent(2.0);
    let schedule = EpsDeltaSchedule::new(
        vec![(0.125, 0.125), (0.0625, 0.0625), (0.03125, 0.03125)],
        ScheduleTarget::Finite(1.0),
    )
    .unwrap();
    let run = run_schedule(
        &schedule,
        &[1.0],
        1.0,
        &two_phase(2.0),
        &box_kernel(),
        &q,
        &opts,
        &GammaGridPolicy::default(),
    )
    .unwrap();
    assert_eq!(run.entries.len(), 3);
    for e in &run.entries {
        assert!(e.flags.is_empty(), "{:?}", e.flags);
    }
    // Deviation from the reference shrinks along the schedule.
    let devs: Vec<f64> = run.entries.iter().map(|e| e.rel_dev).collect();
    assert!(devs[2] < devs[1] && devs[1] < devs[0], "deviations {devs:?}");
    assert!(devs[2] < 0.05, "final deviation {}", devs[2]);
}

#[test]
fn schedule_skips_oversized_entries() {
    let q = quad();
    let opts = OptimizerOptions::for_exponent(2.0);
    let schedule = EpsDeltaSchedule::new(
        vec![(0.125, 0.125), (1e-5, 1e-5)],
        ScheduleTarget::Finite(1.0),
    )
    .unwrap();
    let policy = GammaGridPolicy { n_max: 1024, ..GammaGridPolicy::default() };
    let run = run_schedule(
        &schedule,
        &[1.0],
        1.0,
        &two_phase(2.0),
        &box_kernel(),
        &q,
        &opts,
        &policy,
    )
    .unwrap();
    assert!(run.entries[0].flags.is_empty());
    assert_eq!(run.entries[1].flags, vec!["skipped".to_string()]);
    assert!(run.entries[1].min_value.is_nan());
}
