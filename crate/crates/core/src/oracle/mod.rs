//! Exact model-based quantities and reference solutions.
//!
//! These are the ground truth the stochastic learners are scored against.

mod reference;

use nalgebra::{DMatrix, DVector};

use crate::environments::{EnvError, MdpModel};
use crate::features::{FeatureError, FeatureMap};
use crate::solvers::{Algorithm, PrimalDualState, SolverConfig};

pub use reference::{
    reference_lasso, reference_solve, regularized_objective, ReferenceSolution,
};

/// Coordinates with magnitude at or below this count as inactive.
pub const ACTIVE_TOL: f64 = 1e-8;

/// Relative eigenvalue cutoff used to decide the rank of the Gram matrix.
pub const RANK_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum OracleError {
    #[error(
        "feature Gram matrix has rank {rank} < {dim}: the basis is not linearly independent \
         over the sampled states"
    )]
    RankDeficient { rank: usize, dim: usize },
    #[error("linear system is singular (condition estimate {condition:e})")]
    Singular { condition: f64 },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("reference solver stopped after {iterations} iterations (best objective {best_objective})")]
    NoConvergence { iterations: usize, best_objective: f64 },
    #[error("invalid input: {0}")]
    Invalid(&'static str),
    #[error(transparent)]
    Features(#[from] FeatureError),
    #[error(transparent)]
    Environment(#[from] EnvError),
}

/// How a singular Gram matrix is treated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RankPolicy {
    /// Rank deficiency is an error.
    #[default]
    Strict,
    /// Use the Moore-Penrose pseudo-inverse. Needed when there are more
    /// features than states, as on the star problem.
    PseudoInverse,
}

/// Exact `A = E[A_t]`, `b = E[b_t]` and the pieces they are built from.
///
/// With `C = Phi^T Xi Phi`, `C' = Phi^T Xi P Phi` and `r = Phi^T Xi R`:
///
/// ```text
/// A = [ eta C        eta (C - gamma C') ]     b = [ eta r ]
///     [ gamma C'^T   C - gamma C'       ]         [ r     ]
/// ```
#[derive(Debug, Clone)]
pub struct LinearSystem {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub c: DMatrix<f64>,
    pub c_next: DMatrix<f64>,
    pub r_bar: DVector<f64>,
    pub eta: f64,
    pub gamma: f64,
    policy: RankPolicy,
    rank: usize,
    c_inv: DMatrix<f64>,
}

impl LinearSystem {
    pub fn dim(&self) -> usize {
        self.c.nrows()
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn policy(&self) -> RankPolicy {
        self.policy
    }

    /// Inverse (or pseudo-inverse) of the Gram matrix.
    pub fn gram_inverse(&self) -> &DMatrix<f64> {
        &self.c_inv
    }

    /// `Ax - b`.
    pub fn residual(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.a * x - &self.b
    }

    /// Assembles the system from its Gram blocks.
    pub fn from_blocks(
        c: DMatrix<f64>,
        c_next: DMatrix<f64>,
        r_bar: DVector<f64>,
        eta: f64,
        gamma: f64,
        policy: RankPolicy,
    ) -> Result<Self, OracleError> {
        let d = c.nrows();
        if c.shape() != (d, d) || c_next.shape() != (d, d) || r_bar.len() != d {
            return Err(OracleError::Invalid("Gram blocks must be d x d with a length-d reward"));
        }
        let (c_inv, rank) = symmetric_inverse(&c)?;
        if rank < d && policy == RankPolicy::Strict {
            return Err(OracleError::RankDeficient { rank, dim: d });
        }

        let m = &c - &c_next * gamma;
        let mut a = DMatrix::zeros(2 * d, 2 * d);
        a.view_mut((0, 0), (d, d)).copy_from(&(&c * eta));
        a.view_mut((0, d), (d, d)).copy_from(&(&m * eta));
        a.view_mut((d, 0), (d, d)).copy_from(&(c_next.transpose() * gamma));
        a.view_mut((d, d), (d, d)).copy_from(&m);
        let mut b = DVector::zeros(2 * d);
        b.rows_mut(0, d).copy_from(&(&r_bar * eta));
        b.rows_mut(d, d).copy_from(&r_bar);

        Ok(Self { a, b, c, c_next, r_bar, eta, gamma, policy, rank, c_inv })
    }
}

/// Exact expected system under the model's sampling distribution, rejecting a
/// rank-deficient basis.
pub fn exact_system(
    model: &MdpModel,
    features: &FeatureMap,
    eta: f64,
    gamma: f64,
) -> Result<LinearSystem, OracleError> {
    exact_system_with(model, features, eta, gamma, RankPolicy::Strict)
}

pub fn exact_system_with(
    model: &MdpModel,
    features: &FeatureMap,
    eta: f64,
    gamma: f64,
    policy: RankPolicy,
) -> Result<LinearSystem, OracleError> {
    let phi = model.feature_matrix(features)?;
    let xi_phi = DMatrix::from_diagonal(model.state_dist()) * &phi;
    let c = phi.transpose() * &xi_phi;
    let c = (&c + c.transpose()) * 0.5;
    let c_next = xi_phi.transpose() * model.transition() * &phi;
    let r_bar = xi_phi.transpose() * model.reward();
    LinearSystem::from_blocks(c, c_next, r_bar, eta, gamma, policy)
}

/// `(C^-1, rank)` via a symmetric eigendecomposition; eigenvalues below
/// `RANK_TOL * max` are dropped, which yields the pseudo-inverse.
fn symmetric_inverse(c: &DMatrix<f64>) -> Result<(DMatrix<f64>, usize), OracleError> {
    if c.iter().any(|v| !v.is_finite()) {
        return Err(OracleError::Invalid("Gram matrix has non-finite entries"));
    }
    let eig = c.clone().symmetric_eigen();
    let top = eig.eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let cut = RANK_TOL * top.max(f64::MIN_POSITIVE);
    let inv_vals = eig.eigenvalues.map(|l| if l > cut { 1.0 / l } else { 0.0 });
    let rank = inv_vals.iter().filter(|v| **v != 0.0).count();
    let q = &eig.eigenvectors;
    let c_inv = q * DMatrix::from_diagonal(&inv_vals) * q.transpose();
    Ok((c_inv, rank))
}

/// Mean-square projected Bellman error
/// `(Phi^T Xi (T Phi theta - Phi theta))^T C^-1 (same)`.
pub fn mspbe(theta: &DVector<f64>, system: &LinearSystem) -> Result<f64, OracleError> {
    let d = system.dim();
    if theta.len() != d {
        return Err(OracleError::DimensionMismatch { expected: d, got: theta.len() });
    }
    let g = &system.r_bar + (&system.c_next * system.gamma - &system.c) * theta;
    Ok((g.transpose() * &system.c_inv * &g)[0].max(0.0))
}

/// Solves `Ax = b`. Under [`RankPolicy::Strict`] a singular `A` is an error;
/// otherwise the minimum-norm least-squares solution is returned.
pub fn solve_fixed_point(system: &LinearSystem) -> Result<DVector<f64>, OracleError> {
    let svd = system.a.clone().svd(true, true);
    let sv = &svd.singular_values;
    let top = sv.max();
    let low = sv.min();
    let condition = if low > 0.0 { top / low } else { f64::INFINITY };
    let eps = top * 1e-12 * sv.len() as f64;
    if low <= eps && system.policy == RankPolicy::Strict {
        return Err(OracleError::Singular { condition });
    }
    svd.solve(&system.b, eps).map_err(|_| OracleError::Singular { condition })
}

/// Number of coordinates with magnitude above [`ACTIVE_TOL`].
pub fn count_active<'a>(v: impl IntoIterator<Item = &'a f64>) -> usize {
    v.into_iter().filter(|x| x.abs() > ACTIVE_TOL).count()
}

/// One row of the convergence trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiagnosticsRecord {
    pub iteration: usize,
    pub mspbe: f64,
    pub l2_residual: f64,
    pub dual_value: f64,
    pub delta: f64,
    pub theta_nnz: usize,
    pub w_nnz: usize,
    pub objective: f64,
}

impl DiagnosticsRecord {
    pub const COLUMNS: [&'static str; 8] = [
        "iteration",
        "mspbe",
        "l2_residual",
        "dual_value",
        "delta",
        "theta_nnz",
        "w_nnz",
        "objective",
    ];

    pub fn metric(&self, name: &str) -> Option<f64> {
        Some(match name {
            "iteration" => self.iteration as f64,
            "mspbe" => self.mspbe,
            "l2_residual" => self.l2_residual,
            "dual_value" => self.dual_value,
            "delta" => self.delta,
            "theta_nnz" => self.theta_nnz as f64,
            "w_nnz" => self.w_nnz as f64,
            "objective" => self.objective,
            _ => return None,
        })
    }

    /// Record with only model-free fields filled; the rest are NaN.
    pub fn model_free(iteration: usize, estimate: &DVector<f64>, delta: f64) -> Self {
        let d = estimate.len() / 2;
        Self {
            iteration,
            mspbe: f64::NAN,
            l2_residual: f64::NAN,
            dual_value: f64::NAN,
            delta,
            theta_nnz: count_active(estimate.rows(d, d).iter()),
            w_nnz: count_active(estimate.rows(0, d).iter()),
            objective: f64::NAN,
        }
    }
}

/// Diagnostics for an arbitrary iterate of `Ax = b`, without the MSPBE.
///
/// `current` is `x_t` and `dual` is `y_t` (if the method has one); residual and
/// dual value use them. `estimate` is what the method reports as its answer
/// (the averaged iterate for primal-dual methods); sparsity and the objective
/// use it. The objective is `||Ax - b||_m + rho1 ||theta||_1 + rho2 ||w||_1`,
/// or `1/2 ||Ax - b||_2^2 + rho1 ||x||_1` for the prox-free extension.
#[allow(clippy::too_many_arguments)]
pub fn residual_diagnostics(
    iteration: usize,
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    current: &DVector<f64>,
    dual: Option<&DVector<f64>>,
    estimate: &DVector<f64>,
    delta: f64,
    config: &SolverConfig,
) -> Result<DiagnosticsRecord, OracleError> {
    let n = b.len();
    if a.shape() != (n, n) {
        return Err(OracleError::DimensionMismatch { expected: n, got: a.ncols() });
    }
    for v in [current, estimate].into_iter().chain(dual) {
        if v.len() != n {
            return Err(OracleError::DimensionMismatch { expected: n, got: v.len() });
        }
    }
    let d = n / 2;
    let r = a * current - b;
    let est_r = a * estimate - b;
    let (w, theta) = (estimate.rows(0, d), estimate.rows(d, n - d));
    let objective = if config.algorithm == Algorithm::RoTdExt {
        0.5 * est_r.norm_squared() + config.rho1 * estimate.lp_norm(1)
    } else {
        config.norm.primal().norm(est_r.as_slice())
            + config.rho1 * theta.lp_norm(1)
            + config.rho2 * w.lp_norm(1)
    };
    Ok(DiagnosticsRecord {
        iteration,
        mspbe: f64::NAN,
        l2_residual: r.norm(),
        dual_value: dual.map_or(f64::NAN, |y| y.dot(&r)),
        delta,
        theta_nnz: count_active(theta.iter()),
        w_nnz: count_active(w.iter()),
        objective,
    })
}

/// [`residual_diagnostics`] against the exact system, plus the MSPBE of the
/// estimate's value coefficients.
pub fn diagnostics(
    iteration: usize,
    current: &DVector<f64>,
    dual: Option<&DVector<f64>>,
    estimate: &DVector<f64>,
    delta: f64,
    system: &LinearSystem,
    config: &SolverConfig,
) -> Result<DiagnosticsRecord, OracleError> {
    let mut rec =
        residual_diagnostics(iteration, &system.a, &system.b, current, dual, estimate, delta, config)?;
    let d = system.dim();
    rec.mspbe = mspbe(&estimate.rows(d, d).into_owned(), system)?;
    Ok(rec)
}

/// Diagnostics of a primal-dual run: residual and dual value at `(x_t, y_t)`,
/// everything else at the averaged iterate.
pub fn duality_diagnostics(
    state: &PrimalDualState,
    system: &LinearSystem,
    config: &SolverConfig,
    delta: f64,
) -> Result<DiagnosticsRecord, OracleError> {
    let estimate = state.x_estimate();
    diagnostics(state.t, &state.x, Some(&state.y), &estimate, delta, system, config)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::environments::{baird_initial_theta, random_walk, star_mdp};
    use approx::assert_abs_diff_eq;

    fn star_system() -> LinearSystem {
        let (model, fmap) = star_mdp();
        exact_system_with(&model, &fmap, 10.0, model.gamma(), RankPolicy::PseudoInverse).unwrap()
    }

    #[test]
    fn star_has_zero_b() {
        let sys = star_system();
        assert!(sys.b.iter().all(|v| *v == 0.0));
        assert_eq!(sys.rank(), 7);
    }

    #[test]
    fn star_is_rank_deficient_under_strict_policy() {
        let (model, fmap) = star_mdp();
        assert_eq!(
            exact_system(&model, &fmap, 10.0, 0.99).unwrap_err(),
            OracleError::RankDeficient { rank: 7, dim: 8 }
        );
    }

    #[test]
    fn star_mspbe_values() {
        let sys = star_system();
        assert_eq!(mspbe(&DVector::zeros(8), &sys).unwrap(), 0.0);
        assert!(mspbe(&baird_initial_theta(), &sys).unwrap() > 1.0);
        let x = solve_fixed_point(&sys).unwrap();
        assert!(mspbe(&x.rows(8, 8).into_owned(), &sys).unwrap() <= 1e-10);
    }

    #[test]
    fn zero_eta_zeroes_top_blocks() {
        let model = random_walk();
        let fmap = FeatureMap::tabular(5).unwrap();
        let sys = exact_system(&model, &fmap, 0.0, 0.9).unwrap();
        assert!(sys.a.rows(0, 5).iter().all(|v| *v == 0.0));
        assert!(sys.b.rows(0, 5).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn random_walk_fixed_point_is_value_function() {
        let model = random_walk();
        let fmap = FeatureMap::tabular(5).unwrap();
        let sys = exact_system(&model, &fmap, 1.0, 0.9).unwrap();
        let x = solve_fixed_point(&sys).unwrap();
        let v = model.value_function().unwrap();
        for i in 0..5 {
            assert_abs_diff_eq!(x[5 + i], v[i + 1], epsilon = 1e-10);
            assert_abs_diff_eq!(x[i], 0.0, epsilon = 1e-10);
        }
        assert!(sys.residual(&x).norm() <= 1e-8);
        assert!(mspbe(&x.rows(5, 5).into_owned(), &sys).unwrap() <= 1e-10);
    }

    #[test]
    fn strict_solve_reports_condition() {
        let sys = star_system();
        let strict = LinearSystem { policy: RankPolicy::Strict, ..sys };
        match solve_fixed_point(&strict) {
            Err(OracleError::Singular { condition }) => assert!(condition > 1e12),
            other => panic!("expected singular, got {other:?}"),
        }
    }

    #[test]
    fn diagnostics_fields() {
        let model = random_walk();
        let fmap = FeatureMap::tabular(5).unwrap();
        let sys = exact_system(&model, &fmap, 1.0, 0.9).unwrap();
        let cfg = SolverConfig::new(Algorithm::RoTd, 0.01, 1.0, 0.9);
        let x_star = solve_fixed_point(&sys).unwrap();
        let y = DVector::from_element(10, 0.1);
        let rec = diagnostics(7, &x_star, Some(&y), &x_star, 0.25, &sys, &cfg).unwrap();
        assert_eq!(rec.iteration, 7);
        assert!(rec.l2_residual <= 1e-8 && rec.dual_value.abs() <= 1e-8);
        assert_eq!(rec.delta, 0.25);
        assert_eq!(rec.theta_nnz, 5);

        let mut sparse = DVector::zeros(10);
        sparse[5] = 0.3;
        sparse[7] = -1e-3;
        sparse[9] = 2.0;
        sparse[8] = 1e-9;
        let rec = diagnostics(1, &sparse, None, &sparse, 0.0, &sys, &cfg).unwrap();
        assert_eq!((rec.theta_nnz, rec.w_nnz), (3, 0));
        assert!(rec.dual_value.is_nan());
    }

    #[test]
    fn model_free_record() {
        let x = DVector::from_row_slice(&[0.0, 1.0, 2.0, 0.0]);
        let rec = DiagnosticsRecord::model_free(3, &x, -0.5);
        assert_eq!((rec.theta_nnz, rec.w_nnz), (1, 1));
        assert!(rec.mspbe.is_nan());
        assert_eq!(rec.metric("delta"), Some(-0.5));
        assert_eq!(rec.metric("nope"), None);
    }
}
