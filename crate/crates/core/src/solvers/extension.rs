//! Prox-free saddle-point iteration for `1/2 ||Ax - b||_2^2 + rho ||x||_1`.
//!
//! The l1 term is carried by an extra dual `u` in the unit infinity ball:
//!
//! ```text
//! x <- x - alpha rho (u + A_t^T y)
//! y <- y + (alpha / rho) (A_t x - b_t - rho y)
//! u <- Pi_inf(u + (alpha / rho) x)
//! ```
//!
//! All three updates read the iterate from the start of the step.

use nalgebra::DVector;

use super::primal_dual::{LinearSample, TdSample};
use super::prox::{project_ball_in_place, DualNorm};
use super::{Algorithm, SolverConfig, SolverError};
use crate::environments::Sample;

#[derive(Debug, Clone, PartialEq)]
pub struct DualExtensionState {
    pub x: DVector<f64>,
    pub y: DVector<f64>,
    pub u: DVector<f64>,
    pub sum_alpha: f64,
    pub x_weighted_sum: DVector<f64>,
    pub t: usize,
    grad: DVector<f64>,
    resid: DVector<f64>,
}

impl DualExtensionState {
    pub fn zeros(n: usize) -> Self {
        Self {
            x: DVector::zeros(n),
            y: DVector::zeros(n),
            u: DVector::zeros(n),
            sum_alpha: 0.0,
            x_weighted_sum: DVector::zeros(n),
            t: 0,
            grad: DVector::zeros(n),
            resid: DVector::zeros(n),
        }
    }

    pub fn average(&self) -> Result<DVector<f64>, SolverError> {
        if self.t == 0 || self.sum_alpha <= 0.0 {
            return Err(SolverError::NoIterations);
        }
        Ok(&self.x_weighted_sum / self.sum_alpha)
    }
}

pub fn rotd_ext_step<L: LinearSample>(
    state: &mut DualExtensionState,
    op: &L,
    alpha: f64,
    rho: f64,
) -> Result<(), SolverError> {
    if !(rho > 0.0) {
        return Err(SolverError::ZeroRho);
    }
    let n = state.x.len();
    if op.dim() != n {
        return Err(SolverError::DimensionMismatch { expected: n, got: op.dim() });
    }
    op.transpose_apply(&state.y, &mut state.grad);
    op.residual(&state.x, &mut state.resid);
    let c = alpha / rho;

    state.grad += &state.u;
    state.u.axpy(c, &state.x, 1.0);
    state.x.axpy(-alpha * rho, &state.grad, 1.0);
    state.resid.axpy(-rho, &state.y, 1.0);
    state.y.axpy(c, &state.resid, 1.0);
    project_ball_in_place(state.u.as_mut_slice(), DualNorm::Linf);

    state.t += 1;
    if !state.x.iter().chain(state.y.iter()).all(|v| v.is_finite()) {
        return Err(SolverError::Diverged { iteration: state.t });
    }
    state.sum_alpha += alpha;
    state.x_weighted_sum.axpy(alpha, &state.x, 1.0);
    Ok(())
}

/// Extension step on a TD sample, using `config.rho1` as the weight.
pub fn rotd_ext_td_step(
    state: &mut DualExtensionState,
    sample: &Sample,
    config: &SolverConfig,
) -> Result<(), SolverError> {
    if config.algorithm != Algorithm::RoTdExt {
        return Err(SolverError::AlgorithmMismatch(config.algorithm));
    }
    let alpha = config.step.at(state.t + 1);
    let op = TdSample { sample, eta: config.eta, gamma: config.gamma };
    rotd_ext_step(state, &op, alpha, config.rho1)
}
