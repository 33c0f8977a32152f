//! Single-timescale TD, TDC and GQ(lambda).

use nalgebra::DVector;

use super::SolverError;
use crate::environments::Sample;

/// `delta = r + gamma phi'^T theta - phi^T theta`.
pub fn td_error(sample: &Sample, theta: &DVector<f64>, gamma: f64) -> f64 {
    sample.reward + gamma * sample.phi_next.dot(theta) - sample.phi.dot(theta)
}

/// TD error against the expected next features `phi_bar`.
pub fn td_error_bar(sample: &Sample, theta: &DVector<f64>, gamma: f64) -> f64 {
    sample.reward + gamma * sample.phi_bar_next.dot(theta) - sample.phi.dot(theta)
}

/// Weights of the gradient-TD family: value coefficients and auxiliary weights.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientTdState {
    pub theta: DVector<f64>,
    pub w: DVector<f64>,
    pub t: usize,
}

impl GradientTdState {
    pub fn zeros(d: usize) -> Self {
        Self { theta: DVector::zeros(d), w: DVector::zeros(d), t: 0 }
    }

    pub fn with_theta(theta: DVector<f64>) -> Self {
        let d = theta.len();
        Self { theta, w: DVector::zeros(d), t: 0 }
    }

    /// `x = [w; theta]`.
    pub fn stacked(&self) -> DVector<f64> {
        let d = self.theta.len();
        let mut x = DVector::zeros(2 * d);
        x.rows_mut(0, d).copy_from(&self.w);
        x.rows_mut(d, d).copy_from(&self.theta);
        x
    }

    fn finish(&mut self) -> Result<(), SolverError> {
        self.t += 1;
        if self.theta.iter().chain(self.w.iter()).all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(SolverError::Diverged { iteration: self.t })
        }
    }
}

/// `theta += alpha delta phi`. Returns the TD error.
pub fn td_step(
    state: &mut GradientTdState,
    sample: &Sample,
    alpha: f64,
    gamma: f64,
) -> Result<f64, SolverError> {
    let delta = td_error(sample, &state.theta, gamma);
    state.theta.axpy(alpha * delta, &sample.phi, 1.0);
    state.finish()?;
    Ok(delta)
}

/// TD with gradient correction:
///
/// ```text
/// theta += alpha delta phi - alpha gamma phi' (phi^T w)
/// w     += eta alpha (delta - phi^T w) phi
/// ```
pub fn tdc_step(
    state: &mut GradientTdState,
    sample: &Sample,
    alpha: f64,
    eta: f64,
    gamma: f64,
) -> Result<f64, SolverError> {
    let delta = td_error(sample, &state.theta, gamma);
    let phi_w = sample.phi.dot(&state.w);
    state.theta.axpy(alpha * delta, &sample.phi, 1.0);
    state.theta.axpy(-alpha * gamma * phi_w, &sample.phi_next, 1.0);
    state.w.axpy(eta * alpha * (delta - phi_w), &sample.phi, 1.0);
    state.finish()?;
    Ok(delta)
}

/// Accumulating eligibility trace.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceState {
    pub e: DVector<f64>,
    pub lambda: f64,
}

impl TraceState {
    pub fn new(d: usize, lambda: f64) -> Self {
        Self { e: DVector::zeros(d), lambda }
    }

    pub fn reset(&mut self) {
        self.e.fill(0.0);
    }
}

/// `e <- gamma lambda e + phi`.
pub fn gq_trace_update(trace: &mut TraceState, sample: &Sample, gamma: f64) {
    let decay = gamma * trace.lambda;
    trace.e.axpy(1.0, &sample.phi, decay);
}

/// GQ(lambda) step using an already updated trace:
///
/// ```text
/// theta += alpha [delta e - gamma (1 - lambda) (w^T e) phi_bar]
/// w     += eta alpha (delta e - (w^T phi) phi)
/// ```
///
/// `delta` is taken against `phi_bar_next`. Returns the TD error.
pub fn gq_step(
    state: &mut GradientTdState,
    trace: &TraceState,
    sample: &Sample,
    alpha: f64,
    eta: f64,
    gamma: f64,
) -> Result<f64, SolverError> {
    let lambda = trace.lambda;
    let delta = td_error_bar(sample, &state.theta, gamma);
    let w_e = state.w.dot(&trace.e);
    let w_phi = state.w.dot(&sample.phi);
    state.theta.axpy(alpha * delta, &trace.e, 1.0);
    state.theta.axpy(-alpha * gamma * (1.0 - lambda) * w_e, &sample.phi_bar_next, 1.0);
    state.w.axpy(eta * alpha * delta, &trace.e, 1.0);
    state.w.axpy(-eta * alpha * w_phi, &sample.phi, 1.0);
    state.finish()?;
    Ok(delta)
}
