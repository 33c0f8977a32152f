use alloc::{vec, vec::Vec};

use nalgebra::{DMatrix, DVector};

use super::EnvError;
use crate::features::{FeatureError, FeatureMap, State};

const STOCHASTIC_TOL: f64 = 1e-12;

/// Finite Markov reward process under a fixed target policy.
///
/// `transition[(s, s')]` is the target-policy transition probability and
/// `transition_reward[(s, s')]` the reward received on that transition. The
/// expected reward vector is derived from the two. `state_dist` is the
/// sampling distribution (the diagonal of the weighting matrix).
#[derive(Debug, Clone, PartialEq)]
pub struct MdpModel {
    transition: DMatrix<f64>,
    transition_reward: DMatrix<f64>,
    reward: DVector<f64>,
    gamma: f64,
    state_dist: DVector<f64>,
    absorbing: Vec<usize>,
}

impl MdpModel {
    /// Builds and validates a model.
    ///
    /// `gamma = 1` is accepted only when the model has absorbing states, so
    /// that undiscounted episodic chains can be solved exactly.
    pub fn new(
        transition: DMatrix<f64>,
        transition_reward: DMatrix<f64>,
        gamma: f64,
        state_dist: DVector<f64>,
        absorbing: Vec<usize>,
    ) -> Result<Self, EnvError> {
        let n = transition.nrows();
        if n == 0 || transition.ncols() != n {
            return Err(EnvError::Shape("transition matrix must be square and nonempty"));
        }
        if transition_reward.shape() != (n, n) {
            return Err(EnvError::Shape("reward matrix must match the transition matrix"));
        }
        if state_dist.len() != n {
            return Err(EnvError::Shape("state distribution length must match the state count"));
        }
        if !(0.0..=1.0).contains(&gamma) || (gamma == 1.0 && absorbing.is_empty()) {
            return Err(EnvError::Discount(gamma));
        }
        for s in 0..n {
            let row = transition.row(s);
            if row.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
                return Err(EnvError::NotStochastic { row: s });
            }
            if (row.sum() - 1.0).abs() > STOCHASTIC_TOL {
                return Err(EnvError::NotStochastic { row: s });
            }
        }
        if transition_reward.iter().any(|r| !r.is_finite()) {
            return Err(EnvError::Shape("rewards must be finite"));
        }
        if state_dist.iter().any(|p| !(p.is_finite() && *p >= 0.0))
            || (state_dist.sum() - 1.0).abs() > STOCHASTIC_TOL
        {
            return Err(EnvError::NotDistribution);
        }
        for &s in &absorbing {
            if s >= n {
                return Err(EnvError::StateOutOfRange { state: s, n_states: n });
            }
            if transition[(s, s)] != 1.0 || transition_reward.row(s).iter().any(|r| *r != 0.0) {
                return Err(EnvError::BadAbsorbing(s));
            }
        }
        let reward = transition.component_mul(&transition_reward).column_sum();
        let mut absorbing = absorbing;
        absorbing.sort_unstable();
        absorbing.dedup();
        Ok(Self { transition, transition_reward, reward, gamma, state_dist, absorbing })
    }

    pub fn n_states(&self) -> usize {
        self.transition.nrows()
    }

    pub fn transition(&self) -> &DMatrix<f64> {
        &self.transition
    }

    pub fn transition_reward(&self) -> &DMatrix<f64> {
        &self.transition_reward
    }

    /// Expected one-step reward per state.
    pub fn reward(&self) -> &DVector<f64> {
        &self.reward
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn state_dist(&self) -> &DVector<f64> {
        &self.state_dist
    }

    pub fn absorbing(&self) -> &[usize] {
        &self.absorbing
    }

    pub fn is_absorbing(&self, s: usize) -> bool {
        self.absorbing.binary_search(&s).is_ok()
    }

    /// Index of `s` among the non-absorbing states, which is the index a
    /// discrete feature map is evaluated at. `None` for absorbing states.
    pub fn feature_index(&self, s: usize) -> Option<usize> {
        if self.is_absorbing(s) {
            None
        } else {
            Some(s - self.absorbing.iter().take_while(|&&a| a < s).count())
        }
    }

    /// Features of state `s`; absorbing states map to the zero vector.
    pub fn features(&self, features: &FeatureMap, s: usize) -> Result<DVector<f64>, FeatureError> {
        match self.feature_index(s) {
            Some(k) => features.eval(State::Index(k)),
            None => Ok(DVector::zeros(features.dim())),
        }
    }

    /// The `|S| x d` basis matrix, with zero rows for absorbing states.
    pub fn feature_matrix(&self, features: &FeatureMap) -> Result<DMatrix<f64>, FeatureError> {
        let mut phi = DMatrix::zeros(self.n_states(), features.dim());
        let mut row = vec![0.0; features.dim()];
        for s in 0..self.n_states() {
            if let Some(k) = self.feature_index(s) {
                features.eval_into(State::Index(k), &mut row)?;
                for (j, v) in row.iter().enumerate() {
                    phi[(s, j)] = *v;
                }
            }
        }
        Ok(phi)
    }

    /// Exact value function `V = (I - gamma P)^-1 R`.
    pub fn value_function(&self) -> Result<DVector<f64>, EnvError> {
        let n = self.n_states();
        let mut m = DMatrix::identity(n, n) - &self.transition * self.gamma;
        // absorbing states have value zero; pin them so gamma = 1 stays solvable
        for &s in &self.absorbing {
            m.row_mut(s).fill(0.0);
            m[(s, s)] = 1.0;
        }
        m.lu().solve(&self.reward).ok_or(EnvError::Singular)
    }
}

/// Initial weights for the star problem used to exhibit TD divergence.
pub const BAIRD_INITIAL_THETA: [f64; 8] = [1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 10.0, 1.0];

/// The 7-state star counterexample and its 8 features.
///
/// Every state jumps to the centre state 7 (index 6) under the target policy,
/// all rewards are zero, `gamma = 0.99`, and states are sampled uniformly.
/// Outer state `i` has features `2 e_i + e_8`; the centre has `e_7 + 2 e_8`.
pub fn star_mdp() -> (MdpModel, FeatureMap) {
    let n = 7;
    let mut transition = DMatrix::zeros(n, n);
    transition.column_mut(n - 1).fill(1.0);
    let model = MdpModel::new(
        transition,
        DMatrix::zeros(n, n),
        0.99,
        DVector::from_element(n, 1.0 / n as f64),
        Vec::new(),
    )
    .expect("star model is well formed");

    let mut rows = DMatrix::zeros(n, 8);
    for i in 0..6 {
        rows[(i, i)] = 2.0;
        rows[(i, 7)] = 1.0;
    }
    rows[(6, 6)] = 1.0;
    rows[(6, 7)] = 2.0;
    let features = FeatureMap::from_rows(rows).expect("star features are finite");
    (model, features)
}

pub fn baird_initial_theta() -> DVector<f64> {
    DVector::from_row_slice(&BAIRD_INITIAL_THETA)
}

/// Number of interior states of the random-walk chain.
pub const RANDOM_WALK_INTERIOR: usize = 5;

/// Random-walk chain with `gamma = 0.9`.
pub fn random_walk() -> MdpModel {
    random_walk_with_discount(0.9).expect("0.9 is a valid discount")
}

/// Seven-state chain: absorbing ends at indices 0 and 6, interior states 1..=5.
///
/// Interior states step left or right with probability 1/2. Entering the right
/// end pays +1, everything else pays 0. The sampling distribution is the
/// stationary distribution of the walk that restarts at the centre whenever it
/// is absorbed (zero mass on the absorbing ends).
pub fn random_walk_with_discount(gamma: f64) -> Result<MdpModel, EnvError> {
    let k = RANDOM_WALK_INTERIOR;
    let n = k + 2;
    let mut transition = DMatrix::zeros(n, n);
    let mut transition_reward = DMatrix::zeros(n, n);
    transition[(0, 0)] = 1.0;
    transition[(n - 1, n - 1)] = 1.0;
    for s in 1..=k {
        transition[(s, s - 1)] = 0.5;
        transition[(s, s + 1)] = 0.5;
    }
    transition_reward[(k, n - 1)] = 1.0;

    let interior = restart_stationary_distribution(&transition, &[0, n - 1], (n - 1) / 2)?;
    let mut state_dist = DVector::zeros(n);
    for (s, p) in (1..=k).zip(interior.iter()) {
        state_dist[s] = *p;
    }
    MdpModel::new(transition, transition_reward, gamma, state_dist, vec![0, n - 1])
}

/// Stationary distribution over non-absorbing states of the chain that jumps
/// to `restart` whenever it would enter an absorbing state.
///
/// Computed by power iteration on the lazy chain `(I + Q) / 2`, which shares
/// its stationary distribution with `Q` but is aperiodic.
pub fn restart_stationary_distribution(
    transition: &DMatrix<f64>,
    absorbing: &[usize],
    restart: usize,
) -> Result<DVector<f64>, EnvError> {
    let n = transition.nrows();
    let live: Vec<usize> = (0..n).filter(|s| !absorbing.contains(s)).collect();
    let pos = |s: usize| live.iter().position(|&x| x == s);
    let restart_pos = pos(restart).ok_or(EnvError::StateOutOfRange { state: restart, n_states: n })?;
    let m = live.len();

    let mut q = DMatrix::zeros(m, m);
    for (i, &s) in live.iter().enumerate() {
        for t in 0..n {
            let p = transition[(s, t)];
            match pos(t) {
                Some(j) => q[(i, j)] += p,
                None => q[(i, restart_pos)] += p,
            }
        }
    }
    let lazy = (DMatrix::identity(m, m) + q) * 0.5;
    let lazy_t = lazy.transpose();

    let mut pi = DVector::from_element(m, 1.0 / m as f64);
    for _ in 0..1_000_000 {
        let next = &lazy_t * &pi;
        let change = (&next - &pi).abs().sum();
        pi = next;
        if change < 1e-15 {
            let total = pi.sum();
            return Ok(pi / total);
        }
    }
    Err(EnvError::NoConvergence)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn star_shape() {
        let (m, f) = star_mdp();
        assert_eq!(m.n_states(), 7);
        assert_eq!(f.dim(), 8);
        assert_eq!(m.gamma(), 0.99);
        assert!(m.reward().iter().all(|r| *r == 0.0));
        let phi = m.feature_matrix(&f).unwrap();
        assert_eq!((phi.transpose() * m.reward()).norm(), 0.0);
        for s in 0..7 {
            assert_eq!(m.transition()[(s, 6)], 1.0);
        }
    }

    #[test]
    fn random_walk_rows() {
        let m = random_walk();
        assert_eq!(m.n_states(), 7);
        assert_eq!(m.transition()[(3, 2)], 0.5);
        assert_eq!(m.transition()[(3, 4)], 0.5);
        assert_eq!(m.reward()[5], 0.5);
        assert_eq!(m.reward().iter().filter(|r| **r != 0.0).count(), 1);
        assert_eq!(m.absorbing(), &[0, 6]);
        assert_eq!(m.feature_index(1), Some(0));
        assert_eq!(m.feature_index(5), Some(4));
        assert_eq!(m.feature_index(6), None);
    }

    #[test]
    fn restart_distribution_matches_expected_visits() {
        // Expected visits per episode from the centre of a 5-state symmetric walk
        // are given by the Green's function 2 min(i,3) (6 - max(i,3)) / 6.
        let green: Vec<f64> = (1..=5)
            .map(|i: usize| 2.0 * i.min(3) as f64 * (6 - i.max(3)) as f64 / 6.0)
            .collect();
        let total: f64 = green.iter().sum();
        let m = random_walk();
        for (s, g) in (1..=5).zip(&green) {
            assert_abs_diff_eq!(m.state_dist()[s], g / total, epsilon = 1e-12);
        }
        assert_eq!(m.state_dist()[0], 0.0);
    }

    #[test]
    fn undiscounted_values_are_linear() {
        let m = random_walk_with_discount(1.0).unwrap();
        let v = m.value_function().unwrap();
        for i in 1..=5 {
            assert_abs_diff_eq!(v[i], i as f64 / 6.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn rejects_invalid_models() {
        let p = DMatrix::from_row_slice(2, 2, &[0.5, 0.4, 0.0, 1.0]);
        let r = DMatrix::zeros(2, 2);
        let xi = DVector::from_row_slice(&[0.5, 0.5]);
        assert_eq!(
            MdpModel::new(p, r.clone(), 0.9, xi.clone(), vec![]),
            Err(EnvError::NotStochastic { row: 0 })
        );
        let p = DMatrix::from_row_slice(2, 2, &[0.5, 0.5, 0.5, 0.5]);
        assert_eq!(
            MdpModel::new(p.clone(), r.clone(), 0.9, DVector::from_row_slice(&[0.6, 0.6]), vec![]),
            Err(EnvError::NotDistribution)
        );
        assert_eq!(MdpModel::new(p.clone(), r.clone(), 1.0, xi.clone(), vec![]), Err(EnvError::Discount(1.0)));
        assert_eq!(MdpModel::new(p, r, 0.9, xi, vec![1]), Err(EnvError::BadAbsorbing(1)));
    }
}
