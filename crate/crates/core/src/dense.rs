//! Direct dense reference solver for the quadratic scalar cell problems
//! (`p = 2`, `m = 1`, `d = 1`, `b ≡ 1`).
//!
//! This path is deliberately independent of the iterative machinery: the
//! quadratic form is assembled entry by entry from the interpolation weights
//! and the stationarity system is solved by Gaussian elimination with a
//! Lagrange multiplier enforcing the zero-mean constraint. It exists to
//! cross-check the optimizer-based solver, so it must not share code with it.

use crate::densities::CoefficientField;
use crate::kernels::{Kernel, Quadrature};
use crate::{Error, Result};

/// Minimum of the non-local quadratic cell energy over mean-zero periodic
/// perturbations, by direct solve of the bordered stationarity system.
pub fn dense_nonlocal_value(
    lambda: f64,
    matrix_m: f64,
    a: &CoefficientField,
    kernel: &Kernel,
    quad: &Quadrature,
    n: usize,
) -> Result<f64> {
    if a.dim() != 1 || kernel.dim() != 1 || quad.dim() != 1 {
        return Err(Error::Unsupported("dense reference solver is one-dimensional".into()));
    }
    if !(lambda > 0.0) {
        return Err(Error::invalid("lambda must be positive"));
    }
    let h = 1.0 / n as f64;
    let ax: Vec<f64> = (0..n).map(|i| a.eval(&[i as f64 * h])).collect();

    let mut hmat = vec![0.0; n * n];
    let mut lin = vec![0.0; n];
    let mut c0 = 0.0;

    let mut row = vec![0.0; n];
    for k in 0..quad.len() {
        let xi = quad.node(k)[0];
        let rho = kernel.eval(quad.node(k));
        if !rho.is_finite() {
            return Err(Error::NonFiniteKernel { index: k, node: quad.node(k).to_vec() });
        }
        if rho == 0.0 {
            continue;
        }
        let ck = quad.weight(k) * rho * h;
        let mxi = matrix_m * xi;

        // Row entries of the difference-quotient map for this shift.
        let r = lambda * xi * n as f64;
        let k0 = r.floor();
        let t = r - k0;
        let k0 = k0 as i64;

        for i in 0..n {
            row.iter_mut().for_each(|x| *x = 0.0);
            let j0 = (i as i64 + k0).rem_euclid(n as i64) as usize;
            let j1 = (i as i64 + k0 + 1).rem_euclid(n as i64) as usize;
            row[j0] += (1.0 - t) / lambda;
            row[j1] += t / lambda;
            row[i] -= 1.0 / lambda;

            let w = ck * ax[i];
            // Accumulate w (m xi + row·v)^2.
            c0 += w * mxi * mxi;
            for p in 0..n {
                if row[p] == 0.0 {
                    continue;
                }
                lin[p] += 2.0 * w * mxi * row[p];
                for q in 0..n {
                    if row[q] != 0.0 {
                        hmat[p * n + q] += w * row[p] * row[q];
                    }
                }
            }
        }
    }
    solve_bordered_and_eval(&hmat, &lin, c0, n)
}

/// Minimum of the local quadratic cell energy over mean-zero periodic
/// perturbations (forward differences), by direct solve.
pub fn dense_local_value(
    matrix_m: f64,
    a: &CoefficientField,
    kernel: &Kernel,
    quad: &Quadrature,
    n: usize,
) -> Result<f64> {
    if a.dim() != 1 || kernel.dim() != 1 || quad.dim() != 1 {
        return Err(Error::Unsupported("dense reference solver is one-dimensional".into()));
    }
    let h = 1.0 / n as f64;
    let ax: Vec<f64> = (0..n).map(|i| a.eval(&[i as f64 * h])).collect();

    // Σ_k w rho xi^2 factors out of the spatial problem.
    let mut kappa = 0.0;
    for k in 0..quad.len() {
        let xi = quad.node(k)[0];
        let rho = kernel.eval(quad.node(k));
        if !rho.is_finite() {
            return Err(Error::NonFiniteKernel { index: k, node: quad.node(k).to_vec() });
        }
        kappa += quad.weight(k) * rho * xi * xi;
    }

    let mut hmat = vec![0.0; n * n];
    let mut lin = vec![0.0; n];
    let mut c0 = 0.0;
    for i in 0..n {
        let w = kappa * h * ax[i];
        let j = (i + 1) % n;
        // (M + (v_j - v_i)/h)^2
        c0 += w * matrix_m * matrix_m;
        lin[j] += 2.0 * w * matrix_m / h;
        lin[i] -= 2.0 * w * matrix_m / h;
        hmat[j * n + j] += w / (h * h);
        hmat[i * n + i] += w / (h * h);
        hmat[j * n + i] -= w / (h * h);
        hmat[i * n + j] -= w / (h * h);
    }
    solve_bordered_and_eval(&hmat, &lin, c0, n)
}

/// Solves `min v^T H v + lin·v + c0` subject to `Σ v = 0` via the bordered
/// system `[2H, 1; 1^T, 0] [v; mu] = [-lin; 0]` and returns the minimum.
fn solve_bordered_and_eval(hmat: &[f64], lin: &[f64], c0: f64, n: usize) -> Result<f64> {
    let dim = n + 1;
    let mut aug = vec![0.0; dim * (dim + 1)];
    for i in 0..n {
        for j in 0..n {
            aug[i * (dim + 1) + j] = 2.0 * hmat[i * n + j];
        }
        aug[i * (dim + 1) + n] = 1.0;
        aug[n * (dim + 1) + i] = 1.0;
        aug[i * (dim + 1) + dim] = -lin[i];
    }
    let v = gauss_solve(&mut aug, dim)?;

    let mut quad_term = 0.0;
    let mut lin_term = 0.0;
    for i in 0..n {
        lin_term += lin[i] * v[i];
        let mut hv = 0.0;
        for j in 0..n {
            hv += hmat[i * n + j] * v[j];
        }
        quad_term += v[i] * hv;
    }
    Ok(c0 + lin_term + quad_term)
}

/// Gaussian elimination with partial pivoting on an augmented matrix
/// (`dim` rows, `dim + 1` columns).
fn gauss_solve(aug: &mut [f64], dim: usize) -> Result<Vec<f64>> {
    let cols = dim + 1;
    for col in 0..dim {
        let mut pivot = col;
        let mut best = aug[col * cols + col].abs();
        for r in col + 1..dim {
            let cand = aug[r * cols + col].abs();
            if cand > best {
                best = cand;
                pivot = r;
            }
        }
        if best == 0.0 {
            return Err(Error::invalid("singular stationarity system"));
        }
        if pivot != col {
            for c in 0..cols {
                aug.swap(pivot * cols + c, col * cols + c);
            }
        }
        let diag = aug[col * cols + col];
        for r in col + 1..dim {
            let factor = aug[r * cols + col] / diag;
            if factor == 0.0 {
                continue;
            }
            for c in col..cols {
                aug[r * cols + c] -= factor * aug[col * cols + c];
            }
        }
    }
    let mut x = vec![0.0; dim];
    for row in (0..dim).rev() {
        let mut acc = aug[row * cols + dim];
        for c in row + 1..dim {
            acc -= aug[row * cols + c] * x[c];
        }
        x[row] = acc / aug[row * cols + row];
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_solves_small_system() {
        // 2x + y = 5, x - y = 1  =>  x = 2, y = 1
        let mut aug = vec![2.0, 1.0, 5.0, 1.0, -1.0, 1.0];
        let x = gauss_solve(&mut aug, 2).unwrap();
        assert!((x[0] - 2.0).abs() < 1e-12);
        assert!((x[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn local_dense_matches_harmonic_mean() {
        // min h Σ a_i (M + Dv)^2 = harm(a) M^2, times Σ w rho xi^2.
        let a = CoefficientField::new(1, 2, vec![2.0, 1.0]).unwrap();
        let k = Kernel::by_name("box", 1, 1.0, 1.0).unwrap();
        let q = Quadrature::build(1, 1.0, 64, 2).unwrap();
        let kappa: f64 = (0..q.len()).map(|i| q.weight(i) * q.node(i)[0].powi(2)).sum();
        let v = dense_local_value(1.0, &a, &k, &q, 64).unwrap();
        let expect = kappa * (4.0 / 3.0);
        assert!((v - expect).abs() <= 1e-10 * expect, "{v} vs {expect}");
    }

    #[test]
    fn nonlocal_dense_constant_coefficient_is_jensen() {
        // Constant a: v = 0 is optimal, so the value is a * Σ w rho (M xi)^2.
        let a = CoefficientField::constant(1, 1.5).unwrap();
        let k = Kernel::by_name("box", 1, 1.0, 1.0).unwrap();
        let q = Quadrature::build(1, 1.0, 16, 1).unwrap();
        let kappa: f64 = (0..q.len()).map(|i| q.weight(i) * q.node(i)[0].powi(2)).sum();
        let v = dense_nonlocal_value(0.5, 1.0, &a, &k, &q, 32).unwrap();
        let expect = 1.5 * kappa;
        assert!((v - expect).abs() <= 1e-10 * expect, "{v} vs {expect}");
    }
}
