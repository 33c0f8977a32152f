//! Stochastic primal-dual iteration for `min_x ||Ax - b||_m + h(x)`.
//!
//! Each sample supplies a rank-structured `(A_t, b_t)`. The step never forms
//! `A_t`; it only needs `A_t^T y` and `A_t x - b_t`, both O(d) for the TD and
//! trace-based samples.

use nalgebra::{DMatrix, DVector, DVectorView};

use super::prox::{project_ball_in_place, soft_threshold_in_place, DualNorm};
use super::td::{td_error, td_error_bar, TraceState};
use super::{Algorithm, SolverConfig, SolverError};
use crate::environments::Sample;

/// One stochastic sample of a linear system `A x = b` in `R^n`.
pub trait LinearSample {
    fn dim(&self) -> usize;

    /// Writes `A_t^T y` into `out`.
    fn transpose_apply(&self, y: &DVector<f64>, out: &mut DVector<f64>);

    /// Writes `A_t x - b_t` into `out`.
    fn residual(&self, x: &DVector<f64>, out: &mut DVector<f64>);
}

/// `y^T A_t` for the TDC system, returned as a column `[w-block; theta-block]`:
///
/// ```text
/// w-block     = eta phi (y1^T phi) + gamma phi (y2^T phi')
/// theta-block = (phi - gamma phi') (eta y1 + y2)^T phi
/// ```
pub fn td_transpose_apply(
    sample: &Sample,
    y1: DVectorView<'_, f64>,
    y2: DVectorView<'_, f64>,
    eta: f64,
    gamma: f64,
    out: &mut DVector<f64>,
) {
    let d = sample.dim();
    let y1_phi = y1.dot(&sample.phi);
    let y2_phi = y2.dot(&sample.phi);
    let y2_next = y2.dot(&sample.phi_next);
    let head = eta * y1_phi + gamma * y2_next;
    let tail = eta * y1_phi + y2_phi;
    for j in 0..d {
        out[j] = head * sample.phi[j];
        out[d + j] = tail * (sample.phi[j] - gamma * sample.phi_next[j]);
    }
}

/// `A_t x - b_t` for the TDC system with `x = [w; theta]`:
///
/// ```text
/// [ -eta (delta - phi^T w) phi ;  gamma (phi^T w) phi' - delta phi ]
/// ```
pub fn td_residual(
    sample: &Sample,
    w: DVectorView<'_, f64>,
    theta: DVectorView<'_, f64>,
    eta: f64,
    gamma: f64,
    out: &mut DVector<f64>,
) {
    let d = sample.dim();
    let delta = sample.reward + gamma * sample.phi_next.dot(&theta) - sample.phi.dot(&theta);
    let phi_w = sample.phi.dot(&w);
    let head = -eta * (delta - phi_w);
    for j in 0..d {
        out[j] = head * sample.phi[j];
        out[d + j] = gamma * phi_w * sample.phi_next[j] - delta * sample.phi[j];
    }
}

/// `y^T A_t` for the eligibility-trace system:
///
/// ```text
/// w-block     = eta phi (y1^T phi) + gamma (1 - lambda) e (y2^T phi_bar)
/// theta-block = (phi - gamma phi_bar) (eta y1 + y2)^T e
/// ```
#[allow(clippy::too_many_arguments)]
pub fn trace_transpose_apply(
    sample: &Sample,
    e: &DVector<f64>,
    y1: DVectorView<'_, f64>,
    y2: DVectorView<'_, f64>,
    eta: f64,
    gamma: f64,
    lambda: f64,
    out: &mut DVector<f64>,
) {
    let d = sample.dim();
    let y1_phi = y1.dot(&sample.phi);
    let y2_bar = y2.dot(&sample.phi_bar_next);
    let tail = eta * y1.dot(e) + y2.dot(e);
    let c = gamma * (1.0 - lambda) * y2_bar;
    for j in 0..d {
        out[j] = eta * y1_phi * sample.phi[j] + c * e[j];
        out[d + j] = tail * (sample.phi[j] - gamma * sample.phi_bar_next[j]);
    }
}

/// `A_t x - b_t` for the eligibility-trace system:
///
/// ```text
/// [ -eta (delta e - (phi^T w) phi) ;  gamma (1 - lambda) (e^T w) phi_bar - delta e ]
/// ```
#[allow(clippy::too_many_arguments)]
pub fn trace_residual(
    sample: &Sample,
    e: &DVector<f64>,
    w: DVectorView<'_, f64>,
    theta: DVectorView<'_, f64>,
    eta: f64,
    gamma: f64,
    lambda: f64,
    out: &mut DVector<f64>,
) {
    let d = sample.dim();
    let delta = sample.reward + gamma * sample.phi_bar_next.dot(&theta) - sample.phi.dot(&theta);
    let phi_w = sample.phi.dot(&w);
    let e_w = e.dot(&w);
    let c = gamma * (1.0 - lambda) * e_w;
    for j in 0..d {
        out[j] = -eta * (delta * e[j] - phi_w * sample.phi[j]);
        out[d + j] = c * sample.phi_bar_next[j] - delta * e[j];
    }
}

/// TDC system sample (one transition).
#[derive(Debug, Clone, Copy)]
pub struct TdSample<'a> {
    pub sample: &'a Sample,
    pub eta: f64,
    pub gamma: f64,
}

impl LinearSample for TdSample<'_> {
    fn dim(&self) -> usize {
        2 * self.sample.dim()
    }

    fn transpose_apply(&self, y: &DVector<f64>, out: &mut DVector<f64>) {
        let d = self.sample.dim();
        td_transpose_apply(self.sample, y.rows(0, d), y.rows(d, d), self.eta, self.gamma, out);
    }

    fn residual(&self, x: &DVector<f64>, out: &mut DVector<f64>) {
        let d = self.sample.dim();
        td_residual(self.sample, x.rows(0, d), x.rows(d, d), self.eta, self.gamma, out);
    }
}

/// Eligibility-trace system sample.
#[derive(Debug, Clone, Copy)]
pub struct TraceSample<'a> {
    pub sample: &'a Sample,
    pub trace: &'a TraceState,
    pub eta: f64,
    pub gamma: f64,
}

impl LinearSample for TraceSample<'_> {
    fn dim(&self) -> usize {
        2 * self.sample.dim()
    }

    fn transpose_apply(&self, y: &DVector<f64>, out: &mut DVector<f64>) {
        let d = self.sample.dim();
        let (e, l) = (&self.trace.e, self.trace.lambda);
        trace_transpose_apply(self.sample, e, y.rows(0, d), y.rows(d, d), self.eta, self.gamma, l, out);
    }

    fn residual(&self, x: &DVector<f64>, out: &mut DVector<f64>) {
        let d = self.sample.dim();
        let (e, l) = (&self.trace.e, self.trace.lambda);
        trace_residual(self.sample, e, x.rows(0, d), x.rows(d, d), self.eta, self.gamma, l, out);
    }
}

/// A fully known `(A, b)` used as its own sample.
#[derive(Debug, Clone, Copy)]
pub struct DenseSample<'a> {
    pub a: &'a DMatrix<f64>,
    pub b: &'a DVector<f64>,
}

impl LinearSample for DenseSample<'_> {
    fn dim(&self) -> usize {
        self.a.ncols()
    }

    fn transpose_apply(&self, y: &DVector<f64>, out: &mut DVector<f64>) {
        self.a.tr_mul_to(y, out);
    }

    fn residual(&self, x: &DVector<f64>, out: &mut DVector<f64>) {
        self.a.mul_to(x, out);
        *out -= self.b;
    }
}

/// Unbiased single-row sample `A_t = n e_i a_i^T`, `b_t = n b_i e_i`.
#[derive(Debug, Clone, Copy)]
pub struct RowSample<'a> {
    pub a: &'a DMatrix<f64>,
    pub b: &'a DVector<f64>,
    pub row: usize,
}

impl LinearSample for RowSample<'_> {
    fn dim(&self) -> usize {
        self.a.ncols()
    }

    fn transpose_apply(&self, y: &DVector<f64>, out: &mut DVector<f64>) {
        let scale = self.a.nrows() as f64 * y[self.row];
        for (o, a) in out.iter_mut().zip(self.a.row(self.row).iter()) {
            *o = scale * a;
        }
    }

    fn residual(&self, x: &DVector<f64>, out: &mut DVector<f64>) {
        let n = self.a.nrows() as f64;
        let r = self.a.row(self.row).transpose().dot(x) - self.b[self.row];
        out.fill(0.0);
        out[self.row] = n * r;
    }
}

/// Primal `x = [w; theta]`, dual `y = [y1; y2]`, and the stepsize-weighted sums
/// that produce the averaged iterates.
#[derive(Debug, Clone, PartialEq)]
pub struct PrimalDualState {
    pub x: DVector<f64>,
    pub y: DVector<f64>,
    pub sum_alpha: f64,
    pub x_weighted_sum: DVector<f64>,
    pub y_weighted_sum: DVector<f64>,
    pub t: usize,
    scratch_x: DVector<f64>,
    scratch_y: DVector<f64>,
}

impl PrimalDualState {
    /// Zero primal and dual over a `2d`-dimensional stacked variable.
    pub fn zeros(n: usize) -> Self {
        Self {
            x: DVector::zeros(n),
            y: DVector::zeros(n),
            sum_alpha: 0.0,
            x_weighted_sum: DVector::zeros(n),
            y_weighted_sum: DVector::zeros(n),
            t: 0,
            scratch_x: DVector::zeros(n),
            scratch_y: DVector::zeros(n),
        }
    }

    /// `w = 0`, `y = 0`, and the given value coefficients.
    pub fn with_theta(theta: &DVector<f64>) -> Self {
        let d = theta.len();
        let mut s = Self::zeros(2 * d);
        s.x.rows_mut(d, d).copy_from(theta);
        s
    }

    pub fn half(&self) -> usize {
        self.x.len() / 2
    }

    pub fn w(&self) -> DVectorView<'_, f64> {
        self.x.rows(0, self.half())
    }

    pub fn theta(&self) -> DVectorView<'_, f64> {
        self.x.rows(self.half(), self.half())
    }

    pub fn y1(&self) -> DVectorView<'_, f64> {
        self.y.rows(0, self.half())
    }

    pub fn y2(&self) -> DVectorView<'_, f64> {
        self.y.rows(self.half(), self.half())
    }

    /// `(x_bar, y_bar)`: stepsize-weighted means of the iterates so far.
    pub fn average_iterates(&self) -> Result<(DVector<f64>, DVector<f64>), SolverError> {
        if self.t == 0 || self.sum_alpha <= 0.0 {
            return Err(SolverError::NoIterations);
        }
        Ok((&self.x_weighted_sum / self.sum_alpha, &self.y_weighted_sum / self.sum_alpha))
    }

    /// Averaged primal iterate, or the current one before any step.
    pub fn x_estimate(&self) -> DVector<f64> {
        match self.average_iterates() {
            Ok((x, _)) => x,
            Err(_) => self.x.clone(),
        }
    }
}

/// Thresholds applied after the primal step: `rho_theta` to the second half
/// of `x`, `rho_w` to the first half.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProxParams {
    pub rho_theta: f64,
    pub rho_w: f64,
    pub dual: DualNorm,
}

/// One primal-dual step with stepsize `alpha`:
///
/// ```text
/// x' = prox_{alpha h}(x - alpha A_t^T y)
/// y' = Pi_n(y + alpha (A_t x - b_t))
/// ```
///
/// Both gradients are evaluated at the current `(x, y)`. The averaging sums
/// are updated with the new (post-prox, post-projection) iterates.
pub fn primal_dual_step<L: LinearSample>(
    state: &mut PrimalDualState,
    op: &L,
    alpha: f64,
    prox: ProxParams,
) -> Result<(), SolverError> {
    let n = state.x.len();
    if op.dim() != n {
        return Err(SolverError::DimensionMismatch { expected: n, got: op.dim() });
    }
    op.transpose_apply(&state.y, &mut state.scratch_x);
    op.residual(&state.x, &mut state.scratch_y);
    state.x.axpy(-alpha, &state.scratch_x, 1.0);
    state.y.axpy(alpha, &state.scratch_y, 1.0);

    let half = n / 2;
    let xs = state.x.as_mut_slice();
    let (w, theta) = xs.split_at_mut(half);
    soft_threshold_in_place(w, alpha * prox.rho_w);
    soft_threshold_in_place(theta, alpha * prox.rho_theta);
    project_ball_in_place(state.y.as_mut_slice(), prox.dual);

    state.t += 1;
    if !(state.x.iter().chain(state.y.iter()).all(|v| v.is_finite())) {
        return Err(SolverError::Diverged { iteration: state.t });
    }
    state.sum_alpha += alpha;
    state.x_weighted_sum.axpy(alpha, &state.x, 1.0);
    state.y_weighted_sum.axpy(alpha, &state.y, 1.0);
    Ok(())
}

fn prox_of(config: &SolverConfig) -> ProxParams {
    ProxParams { rho_theta: config.rho1, rho_w: config.rho2, dual: config.norm.dual() }
}

/// RO-TD iteration on one transition. Returns the TD error at the pre-step
/// iterate.
pub fn rotd_step(
    state: &mut PrimalDualState,
    sample: &Sample,
    config: &SolverConfig,
) -> Result<f64, SolverError> {
    if config.algorithm != Algorithm::RoTd {
        return Err(SolverError::AlgorithmMismatch(config.algorithm));
    }
    let delta = td_error(sample, &state.theta().into_owned(), config.gamma);
    let alpha = config.step.at(state.t + 1);
    let op = TdSample { sample, eta: config.eta, gamma: config.gamma };
    primal_dual_step(state, &op, alpha, prox_of(config))?;
    Ok(delta)
}

/// RO-GQ(lambda) iteration. `trace` must already include this sample's
/// features (see [`super::gq_trace_update`]). Returns the TD error.
pub fn rogq_step(
    state: &mut PrimalDualState,
    trace: &TraceState,
    sample: &Sample,
    config: &SolverConfig,
) -> Result<f64, SolverError> {
    if config.algorithm != Algorithm::RoGq {
        return Err(SolverError::AlgorithmMismatch(config.algorithm));
    }
    let delta = td_error_bar(sample, &state.theta().into_owned(), config.gamma);
    let alpha = config.step.at(state.t + 1);
    let op = TraceSample { sample, trace, eta: config.eta, gamma: config.gamma };
    primal_dual_step(state, &op, alpha, prox_of(config))?;
    Ok(delta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solvers::{NormPair, StepSize};
    use approx::assert_abs_diff_eq;

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_row_slice(x)
    }

    fn config(algorithm: Algorithm) -> SolverConfig {
        SolverConfig {
            algorithm,
            step: StepSize::Constant(0.1),
            eta: 2.0,
            rho1: 0.0,
            rho2: 0.0,
            norm: NormPair::L2,
            gamma: 0.9,
            lambda: 0.0,
        }
    }

    #[test]
    fn zero_dual_gives_zero_product() {
        let s = Sample::new(v(&[1.0, 2.0]), 0.5, v(&[0.5, -1.0]));
        let mut out = DVector::from_element(4, 9.0);
        TdSample { sample: &s, eta: 10.0, gamma: 0.9 }.transpose_apply(&DVector::zeros(4), &mut out);
        assert_eq!(out, DVector::zeros(4));
    }

    #[test]
    fn homogeneous_residual_is_zero() {
        let s = Sample::new(v(&[1.0, 2.0]), 0.0, v(&[0.5, -1.0]));
        let mut out = DVector::from_element(4, 9.0);
        TdSample { sample: &s, eta: 10.0, gamma: 0.9 }.residual(&DVector::zeros(4), &mut out);
        assert_eq!(out, DVector::zeros(4));
    }

    #[test]
    fn first_step_from_zero() {
        let s = Sample::new(v(&[1.0, 0.5]), 2.0, v(&[0.0, 1.0]));
        let cfg = config(Algorithm::RoTd);
        let mut st = PrimalDualState::zeros(4);
        rotd_step(&mut st, &s, &cfg).unwrap();
        assert_eq!(st.x, DVector::zeros(4));
        // y_1 = Pi(-alpha b_t), b_t = [eta r phi; r phi]
        let b = v(&[2.0 * 2.0 * 1.0, 2.0 * 2.0 * 0.5, 2.0, 1.0]);
        let expected = crate::solvers::project_ball(&(-0.1 * b), DualNorm::L2);
        assert_abs_diff_eq!(st.y, expected, epsilon = 1e-15);
    }

    #[test]
    fn averaging_weights() {
        let mut st = PrimalDualState::zeros(2);
        assert_eq!(st.average_iterates(), Err(SolverError::NoIterations));
        let p = v(&[1.0, 0.0]);
        let q = v(&[0.0, 4.0]);
        st.x_weighted_sum = &p * 1.0 + &q * 3.0;
        st.sum_alpha = 4.0;
        st.t = 2;
        let (xbar, _) = st.average_iterates().unwrap();
        assert_abs_diff_eq!(xbar, (p + q * 3.0) / 4.0, epsilon = 1e-15);
    }

    #[test]
    fn single_step_average_is_iterate() {
        let s = Sample::new(v(&[1.0, 0.5]), 2.0, v(&[0.0, 1.0]));
        let mut st = PrimalDualState::with_theta(&v(&[0.3, -0.2]));
        rotd_step(&mut st, &s, &config(Algorithm::RoTd)).unwrap();
        let (xbar, ybar) = st.average_iterates().unwrap();
        assert_abs_diff_eq!(xbar, st.x, epsilon = 1e-15);
        assert_abs_diff_eq!(ybar, st.y, epsilon = 1e-15);
    }

    #[test]
    fn unregularised_step_is_plain_bilinear() {
        let s = Sample::new(v(&[0.2, 0.1]), 0.05, v(&[0.1, 0.3]));
        let mut st = PrimalDualState::zeros(4);
        st.x = v(&[0.01, -0.02, 0.03, 0.01]);
        st.y = v(&[0.1, 0.0, -0.1, 0.05]);
        let op = TdSample { sample: &s, eta: 2.0, gamma: 0.9 };
        let mut g = DVector::zeros(4);
        let mut r = DVector::zeros(4);
        op.transpose_apply(&st.y, &mut g);
        op.residual(&st.x, &mut r);
        let x_expected = &st.x - &g * 0.1;
        let y_expected = &st.y + &r * 0.1;
        rotd_step(&mut st, &s, &config(Algorithm::RoTd)).unwrap();
        assert_eq!(st.x, x_expected);
        assert_eq!(st.y, y_expected);
    }

    #[test]
    fn algorithm_mismatch() {
        let s = Sample::new(v(&[1.0]), 0.0, v(&[0.0]));
        let mut st = PrimalDualState::zeros(2);
        assert_eq!(
            rotd_step(&mut st, &s, &config(Algorithm::Tdc)),
            Err(SolverError::AlgorithmMismatch(Algorithm::Tdc))
        );
    }

    #[test]
    fn rogq_homogeneous_fixed_point() {
        let s = Sample::new(v(&[1.0, 0.5]), 0.0, v(&[0.3, 1.0]));
        let tr = TraceState { e: v(&[2.0, 1.0]), lambda: 0.4 };
        let mut st = PrimalDualState::zeros(4);
        let mut cfg = config(Algorithm::RoGq);
        cfg.lambda = 0.4;
        rogq_step(&mut st, &tr, &s, &cfg).unwrap();
        assert_eq!(st.x, DVector::zeros(4));
        assert_eq!(st.y, DVector::zeros(4));
    }

    #[test]
    fn row_sample_is_unbiased() {
        let a = DMatrix::from_row_slice(3, 3, &[1.0, 2.0, 0.0, -1.0, 0.5, 3.0, 0.0, 1.0, 1.0]);
        let b = v(&[1.0, -2.0, 0.5]);
        let x = v(&[0.3, -0.1, 0.7]);
        let y = v(&[0.2, 0.4, -0.6]);
        let mut mean_g = DVector::zeros(3);
        let mut mean_r = DVector::zeros(3);
        let mut g = DVector::zeros(3);
        let mut r = DVector::zeros(3);
        for row in 0..3 {
            let op = RowSample { a: &a, b: &b, row };
            op.transpose_apply(&y, &mut g);
            op.residual(&x, &mut r);
            mean_g += &g / 3.0;
            mean_r += &r / 3.0;
        }
        assert_abs_diff_eq!(mean_g, a.transpose() * &y, epsilon = 1e-14);
        assert_abs_diff_eq!(mean_r, &a * &x - &b, epsilon = 1e-14);
    }
}
