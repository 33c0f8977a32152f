//! Learning update rules: TD, TDC, GQ(lambda) and their regularised
//! primal-dual counterparts.

mod extension;
mod primal_dual;
mod prox;
mod td;

pub use extension::{rotd_ext_step, rotd_ext_td_step, DualExtensionState};
pub use primal_dual::{
    primal_dual_step, rogq_step, rotd_step, td_residual, td_transpose_apply, trace_residual,
    trace_transpose_apply, DenseSample, LinearSample, PrimalDualState, ProxParams, RowSample,
    TdSample, TraceSample,
};
pub use prox::{
    norm, project_ball, project_ball_in_place, shrink, soft_threshold, soft_threshold_in_place,
    DualNorm,
};
pub use td::{
    gq_step, gq_trace_update, td_error, td_error_bar, td_step, tdc_step, GradientTdState,
    TraceState,
};

#[derive(Debug, Clone, Copy, PartialEq, thiserror::Error)]
pub enum SolverError {
    #[error("unsupported norm exponent {0}")]
    UnsupportedNorm(f64),
    #[error("iterate became non-finite at iteration {iteration}")]
    Diverged { iteration: usize },
    #[error("averaged iterates requested before any iteration")]
    NoIterations,
    #[error("step not applicable to algorithm {0:?}")]
    AlgorithmMismatch(Algorithm),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(&'static str),
    #[error("regularisation weight must be positive")]
    ZeroRho,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Algorithm {
    Td,
    Tdc,
    RoTd,
    Gq,
    RoGq,
    RoTdExt,
}

impl Algorithm {
    pub const ALL: [Algorithm; 6] = [
        Algorithm::Td,
        Algorithm::Tdc,
        Algorithm::RoTd,
        Algorithm::Gq,
        Algorithm::RoGq,
        Algorithm::RoTdExt,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Td => "td",
            Algorithm::Tdc => "tdc",
            Algorithm::RoTd => "ro-td",
            Algorithm::Gq => "gq",
            Algorithm::RoGq => "ro-gq",
            Algorithm::RoTdExt => "ro-td-ext",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|a| a.name() == s)
    }

    /// Whether the algorithm carries a dual variable and averaged iterates.
    pub fn is_primal_dual(self) -> bool {
        matches!(self, Algorithm::RoTd | Algorithm::RoGq | Algorithm::RoTdExt)
    }

    pub fn uses_trace(self) -> bool {
        matches!(self, Algorithm::Gq | Algorithm::RoGq)
    }
}

/// Stepsize schedule indexed from `t = 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepSize {
    Constant(f64),
    /// `c / sqrt(t)`
    InvSqrt(f64),
}

impl StepSize {
    pub fn at(self, t: usize) -> f64 {
        match self {
            StepSize::Constant(c) => c,
            StepSize::InvSqrt(c) => c / libm::sqrt(t.max(1) as f64),
        }
    }

    fn scale(self) -> f64 {
        match self {
            StepSize::Constant(c) | StepSize::InvSqrt(c) => c,
        }
    }
}

/// Conjugate exponents `(m, n)`: the residual is measured in `m`, the dual
/// lives in the unit `n`-ball.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum NormPair {
    L2,
    L1Linf,
    LinfL1,
}

impl NormPair {
    pub fn from_exponents(m: f64, n: f64) -> Result<Self, SolverError> {
        let inf = f64::INFINITY;
        if m == 2.0 && n == 2.0 {
            Ok(NormPair::L2)
        } else if m == 1.0 && n == inf {
            Ok(NormPair::L1Linf)
        } else if m == inf && n == 1.0 {
            Ok(NormPair::LinfL1)
        } else {
            Err(SolverError::InvalidConfig("(m, n) must be (2,2), (1,inf) or (inf,1)"))
        }
    }

    /// Norm of the residual.
    pub fn primal(self) -> DualNorm {
        match self {
            NormPair::L2 => DualNorm::L2,
            NormPair::L1Linf => DualNorm::L1,
            NormPair::LinfL1 => DualNorm::Linf,
        }
    }

    /// Ball the dual variable is projected onto.
    pub fn dual(self) -> DualNorm {
        match self {
            NormPair::L2 => DualNorm::L2,
            NormPair::L1Linf => DualNorm::Linf,
            NormPair::LinfL1 => DualNorm::L1,
        }
    }

    pub fn m(self) -> f64 {
        match self.primal() {
            DualNorm::L1 => 1.0,
            DualNorm::L2 => 2.0,
            DualNorm::Linf => f64::INFINITY,
        }
    }
}

/// Parameters shared by every update rule.
///
/// `rho1` thresholds `theta`, `rho2` thresholds `w`. The auxiliary stepsize is
/// `eta * alpha_t`. For the extension formulation `rho1` is its single weight.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    pub algorithm: Algorithm,
    pub step: StepSize,
    pub eta: f64,
    pub rho1: f64,
    pub rho2: f64,
    pub norm: NormPair,
    pub gamma: f64,
    pub lambda: f64,
}

impl SolverConfig {
    /// Unregularised defaults with `(m, n) = (2, 2)` and `lambda = 0`.
    pub fn new(algorithm: Algorithm, alpha: f64, eta: f64, gamma: f64) -> Self {
        Self {
            algorithm,
            step: StepSize::Constant(alpha),
            eta,
            rho1: 0.0,
            rho2: 0.0,
            norm: NormPair::L2,
            gamma,
            lambda: 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), SolverError> {
        let finite_pos = |v: f64| v.is_finite() && v > 0.0;
        if !finite_pos(self.step.scale()) {
            return Err(SolverError::InvalidConfig("stepsize must be positive"));
        }
        if !finite_pos(self.eta) {
            return Err(SolverError::InvalidConfig("eta must be positive"));
        }
        if !(self.rho1 >= 0.0 && self.rho2 >= 0.0 && self.rho1.is_finite() && self.rho2.is_finite())
        {
            return Err(SolverError::InvalidConfig("rho1 and rho2 must be nonnegative"));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(SolverError::InvalidConfig("gamma must lie in [0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(SolverError::InvalidConfig("lambda must lie in [0, 1]"));
        }
        if self.algorithm == Algorithm::RoTdExt && self.rho1 <= 0.0 {
            return Err(SolverError::ZeroRho);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedules() {
        assert_eq!(StepSize::Constant(0.1).at(1), 0.1);
        assert_eq!(StepSize::Constant(0.1).at(1000), 0.1);
        assert_eq!(StepSize::InvSqrt(1.0).at(4), 0.5);
        assert_eq!(StepSize::InvSqrt(1.0).at(0), 1.0);
    }

    #[test]
    fn norm_pairs() {
        assert_eq!(NormPair::from_exponents(2.0, 2.0), Ok(NormPair::L2));
        assert_eq!(NormPair::from_exponents(1.0, f64::INFINITY), Ok(NormPair::L1Linf));
        assert!(NormPair::from_exponents(2.0, 1.0).is_err());
        assert!(NormPair::from_exponents(3.0, 1.5).is_err());
        assert_eq!(NormPair::LinfL1.dual(), DualNorm::L1);
        assert_eq!(NormPair::L1Linf.m(), 1.0);
    }

    #[test]
    fn config_validation() {
        let ok = SolverConfig::new(Algorithm::RoTd, 0.01, 10.0, 0.99);
        assert!(ok.validate().is_ok());
        let mut bad = ok;
        bad.eta = 0.0;
        assert!(bad.validate().is_err());
        let mut bad = ok;
        bad.rho2 = -0.1;
        assert!(bad.validate().is_err());
        let mut ext = ok;
        ext.algorithm = Algorithm::RoTdExt;
        assert_eq!(ext.validate(), Err(SolverError::ZeroRho));
    }

    #[test]
    fn algorithm_names_round_trip() {
        for a in Algorithm::ALL {
            assert_eq!(Algorithm::from_name(a.name()), Some(a));
        }
        assert_eq!(Algorithm::from_name("lstd"), None);
    }
}
