//! Deterministic full-gradient solvers for small dense problems.

use nalgebra::{DMatrix, DVector};

use super::OracleError;
use crate::solvers::{shrink, DualNorm};

const MAX_DIM: usize = 64;
const MAX_ITERATIONS: usize = 2_000_000;

#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceSolution {
    pub x: DVector<f64>,
    pub objective: f64,
    pub iterations: usize,
    /// The solution is `A^-1 b` and a dual certificate proved it optimal.
    pub certified: bool,
}

/// Per-coordinate l1 weights: `rho2` on the first half (`w`), `rho1` on the
/// second half (`theta`).
fn weights(n: usize, rho1: f64, rho2: f64) -> DVector<f64> {
    DVector::from_fn(n, |i, _| if i < n / 2 { rho2 } else { rho1 })
}

/// `||Ax - b||_m + rho1 ||theta||_1 + rho2 ||w||_1` with `x = [w; theta]`.
pub fn regularized_objective(
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    x: &DVector<f64>,
    rho1: f64,
    rho2: f64,
    m: DualNorm,
) -> f64 {
    let r = a * x - b;
    let rho = weights(x.len(), rho1, rho2);
    m.norm(r.as_slice()) + rho.iter().zip(x.iter()).map(|(p, v)| p * v.abs()).sum::<f64>()
}

fn check(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<(), OracleError> {
    if a.nrows() != b.len() {
        return Err(OracleError::DimensionMismatch { expected: a.nrows(), got: b.len() });
    }
    if a.ncols() > MAX_DIM || a.ncols() == 0 {
        return Err(OracleError::Invalid("reference solver expects 1 to 64 unknowns"));
    }
    if a.iter().chain(b.iter()).any(|v| !v.is_finite()) {
        return Err(OracleError::Invalid("non-finite input"));
    }
    Ok(())
}

/// Smoothed residual norm and its gradient with respect to `r`.
fn smoothed(r: &DVector<f64>, m: DualNorm, mu: f64, grad: &mut DVector<f64>) -> f64 {
    match m {
        DualNorm::L2 => {
            let f = libm::sqrt(r.norm_squared() + mu * mu);
            if f > 0.0 {
                grad.copy_from(&(r / f));
            } else {
                grad.fill(0.0);
            }
            f
        }
        DualNorm::L1 => {
            let mut f = 0.0;
            for (g, v) in grad.iter_mut().zip(r.iter()) {
                let s = libm::sqrt(v * v + mu * mu);
                f += s;
                *g = if s > 0.0 { v / s } else { 0.0 };
            }
            f
        }
        DualNorm::Linf => {
            // mu * log sum_i (e^{r_i/mu} + e^{-r_i/mu})
            let top = r.amax();
            let mut z = 0.0;
            for (g, v) in grad.iter_mut().zip(r.iter()) {
                let p = libm::exp((v - top) / mu);
                let q = libm::exp((-v - top) / mu);
                z += p + q;
                *g = p - q;
            }
            *grad /= z;
            top + mu * libm::log(z)
        }
    }
}

/// Accelerated proximal gradient with backtracking and objective restart on
/// `f_mu(Ax - b) + sum rho_i |x_i|`, starting from `x`. Stops once the gradient
/// mapping is below `tol`; returns the number of iterations used.
#[allow(clippy::too_many_arguments)]
fn prox_gradient(
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    rho: &DVector<f64>,
    m: DualNorm,
    mu: f64,
    tol: f64,
    x: &mut DVector<f64>,
    budget: usize,
) -> Option<usize> {
    let n = x.len();
    let mut g_r = DVector::zeros(b.len());
    let penalty = |v: &DVector<f64>| rho.iter().zip(v.iter()).map(|(p, c)| p * c.abs()).sum::<f64>();
    let mut step = mu / a.norm_squared().max(1e-300);
    let mut total = smoothed(&(a * &*x - b), m, mu, &mut g_r) + penalty(x);
    let mut y = x.clone();
    let mut t = 1.0;
    for it in 0..budget {
        let f_y = smoothed(&(a * &y - b), m, mu, &mut g_r);
        let grad = a.tr_mul(&g_r);
        let (trial, f_trial) = loop {
            let trial = DVector::from_fn(n, |i, _| shrink(y[i] - step * grad[i], step * rho[i]));
            let diff = &trial - &y;
            let f_trial = smoothed(&(a * &trial - b), m, mu, &mut g_r);
            let model = f_y + grad.dot(&diff) + diff.norm_squared() / (2.0 * step);
            if f_trial <= model + 1e-15 * f_y.abs().max(1.0) {
                break (trial, f_trial);
            }
            step *= 0.5;
            if step < 1e-300 {
                return None;
            }
        };
        let mapping = (&trial - &y).norm() / step;
        let trial_total = f_trial + penalty(&trial);
        if trial_total > total && t > 1.0 {
            // momentum overshot: restart from the last accepted point
            y.copy_from(x);
            t = 1.0;
            continue;
        }
        if mapping <= tol {
            *x = trial;
            return Some(it + 1);
        }
        let t_next = 0.5 * (1.0 + libm::sqrt(1.0 + 4.0 * t * t));
        y = &trial + (&trial - &*x) * ((t - 1.0) / t_next);
        *x = trial;
        total = trial_total;
        t = t_next;
        step *= 1.2;
    }
    None
}

/// Tries `x0 = A^-1 b`. It is optimal iff some `g` in the subdifferential of the
/// l1 term at `x0` has `||A^-T g||_n <= 1`; such a `g` is sought by projected
/// gradient on `||A^-T g||_2^2`.
fn certified_interpolant(
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    rho: &DVector<f64>,
    m: DualNorm,
) -> Option<DVector<f64>> {
    if !a.is_square() {
        return None;
    }
    let inv = a.clone().try_inverse()?;
    let x0 = &inv * b;
    if x0.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let dual = match m {
        DualNorm::L1 => DualNorm::Linf,
        DualNorm::L2 => DualNorm::L2,
        DualNorm::Linf => DualNorm::L1,
    };
    let mt = inv.transpose();
    let scale = x0.amax().max(1.0);
    let on_support: alloc::vec::Vec<bool> = x0.iter().map(|v| v.abs() > 1e-13 * scale).collect();
    let project = |g: &mut DVector<f64>| {
        for i in 0..g.len() {
            g[i] = if on_support[i] { rho[i] * x0[i].signum() } else { g[i].clamp(-rho[i], rho[i]) };
        }
    };
    let mut g = DVector::zeros(x0.len());
    project(&mut g);
    let step = 1.0 / mt.norm_squared().max(1e-300);
    for _ in 0..20_000 {
        let mg = &mt * &g;
        if dual.norm(mg.as_slice()) <= 1.0 {
            return Some(x0);
        }
        let grad = mt.tr_mul(&mg);
        let prev = g.clone();
        g -= grad * step;
        project(&mut g);
        if (&g - prev).amax() <= 1e-16 {
            break;
        }
    }
    None
}

/// Minimiser of `||Ax - b||_m + rho1 ||theta||_1 + rho2 ||w||_1`, `x = [w; theta]`.
///
/// First checks whether the interpolant `A^-1 b` is optimal via a dual
/// certificate. Otherwise the residual norm is smoothed (`sqrt(||r||^2 + mu^2)`,
/// `sum sqrt(r_i^2 + mu^2)`, or a log-sum-exp for the max norm) and
/// proximal gradient with backtracking runs to stationarity for a decreasing
/// sequence of `mu`, each stage warm-started from the last.
pub fn reference_solve(
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    rho1: f64,
    rho2: f64,
    m: DualNorm,
) -> Result<ReferenceSolution, OracleError> {
    check(a, b)?;
    if !(rho1 >= 0.0 && rho2 >= 0.0) {
        return Err(OracleError::Invalid("regularisation weights must be nonnegative"));
    }
    let n = a.ncols();
    let rho = weights(n, rho1, rho2);
    let objective = |x: &DVector<f64>| regularized_objective(a, b, x, rho1, rho2, m);

    if let Some(x) = certified_interpolant(a, b, &rho, m) {
        let objective = objective(&x);
        return Ok(ReferenceSolution { x, objective, iterations: 0, certified: true });
    }

    let mut x = DVector::zeros(n);
    let mut used = 0;
    let mut mu = 1e-1 * (b.amax().max(1.0));
    // the smoothing bias is at most mu (l2), n mu (l1) or mu ln(2n) (max)
    let final_mu = match m {
        DualNorm::L2 => 1e-12,
        DualNorm::L1 | DualNorm::Linf => 1e-10,
    };
    loop {
        let budget = MAX_ITERATIONS - used;
        let tol = if mu <= final_mu { 1e-10 } else { 1e-8 };
        match prox_gradient(a, b, &rho, m, mu, tol, &mut x, budget) {
            Some(it) => used += it,
            None => {
                return Err(OracleError::NoConvergence {
                    iterations: MAX_ITERATIONS,
                    best_objective: objective(&x),
                })
            }
        }
        if mu <= final_mu {
            break;
        }
        mu = (mu * 0.1).max(final_mu);
    }
    let objective = objective(&x);
    Ok(ReferenceSolution { x, objective, iterations: used, certified: false })
}

/// Minimiser of `1/2 ||Ax - b||_2^2 + rho ||x||_1` by iterative
/// soft-thresholding with stepsize `1 / ||A||_2^2`.
pub fn reference_lasso(
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    rho: f64,
) -> Result<ReferenceSolution, OracleError> {
    check(a, b)?;
    if !(rho >= 0.0) {
        return Err(OracleError::Invalid("regularisation weight must be nonnegative"));
    }
    let sigma = a.clone().svd(false, false).singular_values.max();
    let step = 1.0 / (sigma * sigma).max(1e-300);
    let objective = |x: &DVector<f64>| 0.5 * (a * x - b).norm_squared() + rho * x.lp_norm(1);
    let mut x = DVector::zeros(a.ncols());
    for it in 1..=MAX_ITERATIONS {
        let grad = a.tr_mul(&(a * &x - b));
        let next = (&x - grad * step).map(|v| shrink(v, step * rho));
        let moved = (&next - &x).amax();
        x = next;
        if moved <= 1e-15 * x.amax().max(1.0) {
            let objective = objective(&x);
            return Ok(ReferenceSolution { x, objective, iterations: it, certified: false });
        }
    }
    Err(OracleError::NoConvergence { iterations: MAX_ITERATIONS, best_objective: objective(&x) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn identity_with_shrinkage() {
        let a = DMatrix::identity(2, 2);
        let b = DVector::from_row_slice(&[1.0, 0.0]);
        let sol = reference_solve(&a, &b, 0.5, 0.5, DualNorm::L2).unwrap();
        assert_abs_diff_eq!(sol.x[0], 1.0, epsilon = 1e-9);
        assert_abs_diff_eq!(sol.x[1], 0.0, epsilon = 1e-9);
        assert_abs_diff_eq!(sol.objective, 0.5, epsilon = 1e-9);
        // ray scan: t (1, 0) costs |1 - t| + 0.5 |t|
        for k in 0..=40 {
            let t = k as f64 / 20.0;
            let x = DVector::from_row_slice(&[t, 0.0]);
            assert!(regularized_objective(&a, &b, &x, 0.5, 0.5, DualNorm::L2) >= sol.objective - 1e-12);
        }
    }

    #[test]
    fn unregularised_is_solve() {
        let a = DMatrix::from_row_slice(3, 3, &[2.0, 1.0, 0.0, 0.0, 1.0, 1.0, 1.0, 0.0, 3.0]);
        let b = DVector::from_row_slice(&[1.0, -2.0, 0.5]);
        let sol = reference_solve(&a, &b, 0.0, 0.0, DualNorm::L2).unwrap();
        let exact = a.clone().lu().solve(&b).unwrap();
        assert_abs_diff_eq!(sol.x, exact, epsilon = 1e-6);
    }

    #[test]
    fn heavy_regularisation_gives_zero() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, -0.3, 2.0]);
        let b = DVector::from_row_slice(&[0.4, -0.2]);
        let sol = reference_solve(&a, &b, 5.0, 5.0, DualNorm::L2).unwrap();
        assert!(sol.x.amax() <= 1e-9);
    }

    #[test]
    fn lasso_scalar() {
        let a = DMatrix::from_element(1, 1, 2.0);
        let b = DVector::from_element(1, 3.0);
        // 1/2 (2x - 3)^2 + 0.5 |x| is stationary at 2 (2x - 3) + 0.5 = 0
        let sol = reference_lasso(&a, &b, 0.5).unwrap();
        assert_abs_diff_eq!(sol.x[0], 1.375, epsilon = 1e-12);
    }

    #[test]
    fn rejects_bad_input() {
        let a = DMatrix::identity(2, 2);
        let b = DVector::zeros(3);
        assert!(reference_solve(&a, &b, 0.1, 0.1, DualNorm::L2).is_err());
        let big = DMatrix::identity(65, 65);
        assert!(reference_solve(&big, &DVector::zeros(65), 0.1, 0.1, DualNorm::L2).is_err());
    }
}
