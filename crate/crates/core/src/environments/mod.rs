//! Benchmark problems and sample collection.

mod mdp;
mod mountain_car;

use alloc::{vec, vec::Vec};

use nalgebra::DVector;
use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::features::{FeatureError, FeatureMap, State};

pub use mdp::{
    baird_initial_theta, random_walk, random_walk_with_discount, restart_stationary_distribution,
    star_mdp, MdpModel, BAIRD_INITIAL_THETA, RANDOM_WALK_INTERIOR,
};
pub use mountain_car::{
    mountain_car_step, CarStep, EnergyPumping, MountainCar, GOAL_POSITION, N_ACTIONS, POSITION,
    VELOCITY,
};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EnvError {
    #[error("malformed model: {0}")]
    Shape(&'static str),
    #[error("transition row {row} is not a probability vector")]
    NotStochastic { row: usize },
    #[error("state distribution is not a probability vector")]
    NotDistribution,
    #[error("discount {0} outside [0, 1) (1 is allowed only with absorbing states)")]
    Discount(f64),
    #[error("state {state} out of range for {n_states} states")]
    StateOutOfRange { state: usize, n_states: usize },
    #[error("absorbing state {0} must self-loop with probability 1 and reward 0")]
    BadAbsorbing(usize),
    #[error("action {action} out of range for {n_actions} actions")]
    ActionOutOfRange { action: usize, n_actions: usize },
    #[error("state outside the simulator domain")]
    OutOfDomain,
    #[error("linear system for the value function is singular")]
    Singular,
    #[error("power iteration did not converge")]
    NoConvergence,
    #[error("sample count must be positive")]
    EmptyRequest,
    #[error(transparent)]
    Features(#[from] FeatureError),
}

/// Learning payload of one transition.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub phi: DVector<f64>,
    pub reward: f64,
    pub phi_next: DVector<f64>,
    /// Expected next features under the target policy; equals `phi_next` for
    /// policy evaluation.
    pub phi_bar_next: DVector<f64>,
}

impl Sample {
    /// Evaluation sample with `phi_bar_next = phi_next`.
    pub fn new(phi: DVector<f64>, reward: f64, phi_next: DVector<f64>) -> Self {
        let phi_bar_next = phi_next.clone();
        Self { phi, reward, phi_next, phi_bar_next }
    }

    pub fn dim(&self) -> usize {
        self.phi.len()
    }
}

/// Raw transition as observed, before featurisation.
///
/// Discrete states are stored as a single coordinate holding the index.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub episode: usize,
    pub step: usize,
    pub state: Vec<f64>,
    pub action: Option<usize>,
    pub reward: f64,
    pub next_state: Vec<f64>,
    pub terminal: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeBatch {
    pub samples: Vec<Sample>,
    pub transitions: Vec<Transition>,
    /// Exclusive end index of each episode in `samples`.
    pub episode_boundaries: Vec<usize>,
    pub seed: u64,
}

impl EpisodeBatch {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn n_episodes(&self) -> usize {
        self.episode_boundaries.len()
    }

    /// True when `index` is the first sample of an episode.
    pub fn starts_episode(&self, index: usize) -> bool {
        index == 0 || self.episode_boundaries.binary_search(&index).is_ok()
    }

    /// Rebuilds a batch from raw transitions, recomputing features with
    /// `featurize`. Terminal transitions get a zero next-feature vector.
    pub fn from_transitions<F>(
        transitions: Vec<Transition>,
        seed: u64,
        dim: usize,
        mut featurize: F,
    ) -> Result<Self, FeatureError>
    where
        F: FnMut(&[f64]) -> Result<DVector<f64>, FeatureError>,
    {
        let mut samples = Vec::with_capacity(transitions.len());
        let mut boundaries = Vec::new();
        for (i, tr) in transitions.iter().enumerate() {
            if i > 0 && tr.episode != transitions[i - 1].episode {
                boundaries.push(i);
            }
            let phi = featurize(&tr.state)?;
            let phi_next = if tr.terminal { DVector::zeros(dim) } else { featurize(&tr.next_state)? };
            samples.push(Sample::new(phi, tr.reward, phi_next));
        }
        if !transitions.is_empty() {
            boundaries.push(transitions.len());
        }
        Ok(Self { samples, transitions, episode_boundaries: boundaries, seed })
    }

    /// Keeps the first `n` samples.
    pub fn truncate(&mut self, n: usize) {
        self.samples.truncate(n);
        self.transitions.truncate(n);
        self.episode_boundaries.retain(|&b| b < n);
        if !self.samples.is_empty() && self.episode_boundaries.last() != Some(&n) {
            self.episode_boundaries.push(n);
        }
    }
}

/// A resettable episodic environment with continuous state coordinates.
pub trait Simulator {
    fn n_actions(&self) -> usize;
    fn reset<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Vec<f64>;
    fn step(&mut self, action: usize) -> Result<StepOutcome, EnvError>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub next: Vec<f64>,
    pub reward: f64,
    pub done: bool,
}

/// Behaviour policy for trajectory collection.
pub trait Policy {
    fn action<R: Rng + ?Sized>(&self, state: &[f64], rng: &mut R) -> usize;
}

/// Draws `n` independent transitions: `s ~ state_dist`, `s' ~ P(s, .)`.
///
/// Every sample is its own one-step episode.
pub fn collect_iid_samples(
    model: &MdpModel,
    features: &FeatureMap,
    n: usize,
    seed: u64,
) -> Result<EpisodeBatch, EnvError> {
    if n == 0 {
        return Err(EnvError::EmptyRequest);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let start = WeightedIndex::new(model.state_dist().iter().copied()).map_err(|_| EnvError::NotDistribution)?;
    let rows: Vec<Option<WeightedIndex<f64>>> = (0..model.n_states())
        .map(|s| WeightedIndex::new(model.transition().row(s).iter().copied()).ok())
        .collect();

    let phi_table: Vec<DVector<f64>> = (0..model.n_states())
        .map(|s| model.features(features, s))
        .collect::<Result<_, _>>()?;

    let mut samples = Vec::with_capacity(n);
    let mut transitions = Vec::with_capacity(n);
    for i in 0..n {
        let s = start.sample(&mut rng);
        let next = rows[s].as_ref().ok_or(EnvError::NotStochastic { row: s })?.sample(&mut rng);
        let reward = model.transition_reward()[(s, next)];
        samples.push(Sample::new(phi_table[s].clone(), reward, phi_table[next].clone()));
        transitions.push(Transition {
            episode: i,
            step: 0,
            state: vec![s as f64],
            action: None,
            reward,
            next_state: vec![next as f64],
            terminal: model.is_absorbing(next),
        });
    }
    Ok(EpisodeBatch { samples, transitions, episode_boundaries: (1..=n).collect(), seed })
}

/// Runs `n_episodes` episodes of at most `max_steps` steps under `behavior`.
pub fn collect_episodes<S: Simulator, P: Policy>(
    env: &mut S,
    behavior: &P,
    features: &FeatureMap,
    n_episodes: usize,
    max_steps: usize,
    seed: u64,
) -> Result<EpisodeBatch, EnvError> {
    collect_episodes_with_budget(env, behavior, features, n_episodes, max_steps, None, seed)
}

/// Like [`collect_episodes`], but when `sample_budget` is given keeps adding
/// episodes until at least that many samples exist and truncates to exactly
/// the budget. The first `n_episodes` episodes are identical to those of
/// [`collect_episodes`] with the same seed.
pub fn collect_episodes_with_budget<S: Simulator, P: Policy>(
    env: &mut S,
    behavior: &P,
    features: &FeatureMap,
    n_episodes: usize,
    max_steps: usize,
    sample_budget: Option<usize>,
    seed: u64,
) -> Result<EpisodeBatch, EnvError> {
    if n_episodes == 0 || max_steps == 0 || sample_budget == Some(0) {
        return Err(EnvError::EmptyRequest);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut transitions = Vec::new();
    let mut episode = 0;
    while episode < n_episodes || sample_budget.is_some_and(|b| transitions.len() < b) {
        let mut state = env.reset(&mut rng);
        for step in 0..max_steps {
            let action = behavior.action(&state, &mut rng);
            let out = env.step(action)?;
            transitions.push(Transition {
                episode,
                step,
                state: core::mem::take(&mut state),
                action: Some(action),
                reward: out.reward,
                next_state: out.next.clone(),
                terminal: out.done,
            });
            state = out.next;
            if out.done {
                break;
            }
        }
        episode += 1;
    }
    let dim = features.dim();
    let mut batch =
        EpisodeBatch::from_transitions(transitions, seed, dim, |s| features.eval(State::Point(s)))?;
    if let Some(b) = sample_budget {
        batch.truncate(b);
    }
    Ok(batch)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::Interval;

    #[test]
    fn iid_is_deterministic() {
        let (m, f) = star_mdp();
        let a = collect_iid_samples(&m, &f, 50, 7).unwrap();
        let b = collect_iid_samples(&m, &f, 50, 7).unwrap();
        assert_eq!(a, b);
        let c = collect_iid_samples(&m, &f, 50, 8).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn iid_frequencies_follow_distribution() {
        let (m, f) = star_mdp();
        let n = 100_000;
        let batch = collect_iid_samples(&m, &f, n, 3).unwrap();
        let mut counts = [0usize; 7];
        for t in &batch.transitions {
            counts[t.state[0] as usize] += 1;
        }
        for c in counts {
            assert!((c as f64 / n as f64 - 1.0 / 7.0).abs() < 0.01);
        }
        // every target transition lands in the centre
        assert!(batch.transitions.iter().all(|t| t.next_state[0] == 6.0));
    }

    #[test]
    fn single_state_model() {
        let m = MdpModel::new(
            nalgebra::DMatrix::from_element(1, 1, 1.0),
            nalgebra::DMatrix::zeros(1, 1),
            0.5,
            DVector::from_element(1, 1.0),
            vec![],
        )
        .unwrap();
        let f = FeatureMap::tabular(1).unwrap();
        let batch = collect_iid_samples(&m, &f, 10, 0).unwrap();
        assert!(batch.samples.iter().all(|s| s.phi == s.phi_next));
    }

    #[test]
    fn random_walk_absorbing_next_is_zero() {
        let m = random_walk();
        let f = FeatureMap::tabular(5).unwrap();
        let batch = collect_iid_samples(&m, &f, 2000, 1).unwrap();
        let mut seen_terminal = false;
        for (s, t) in batch.samples.iter().zip(&batch.transitions) {
            if t.terminal {
                seen_terminal = true;
                assert_eq!(s.phi_next.norm(), 0.0);
                assert_eq!(s.reward, if t.next_state[0] == 6.0 { 1.0 } else { 0.0 });
            }
        }
        assert!(seen_terminal);
    }

    fn car_features() -> FeatureMap {
        FeatureMap::rbf_grid(&[POSITION, VELOCITY], &[2, 4], true).unwrap()
    }

    /// Never leaves the start state region fast enough to terminate.
    struct Still;
    impl Simulator for Still {
        fn n_actions(&self) -> usize {
            1
        }
        fn reset<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Vec<f64> {
            vec![rng.gen_range(-1.0..0.0), 0.0]
        }
        fn step(&mut self, _action: usize) -> Result<StepOutcome, EnvError> {
            Ok(StepOutcome { next: vec![-0.5, 0.0], reward: -1.0, done: false })
        }
    }
    struct Zero;
    impl Policy for Zero {
        fn action<R: Rng + ?Sized>(&self, _state: &[f64], _rng: &mut R) -> usize {
            0
        }
    }

    #[test]
    fn episodes_without_termination_fill_budget() {
        let f = car_features();
        let batch = collect_episodes(&mut Still, &Zero, &f, 15, 200, 4).unwrap();
        assert_eq!(batch.len(), 3000);
        assert_eq!(batch.n_episodes(), 15);
        let one = collect_episodes(&mut Still, &Zero, &f, 6, 1, 4).unwrap();
        assert_eq!(one.len(), 6);
        assert_eq!(one.episode_boundaries, vec![1, 2, 3, 4, 5, 6]);
    }

    #[test]
    fn car_episodes_are_deterministic_and_in_bounds() {
        let f = car_features();
        let a = collect_episodes(&mut MountainCar::new(), &EnergyPumping, &f, 5, 200, 11).unwrap();
        let b = collect_episodes(&mut MountainCar::new(), &EnergyPumping, &f, 5, 200, 11).unwrap();
        assert_eq!(a, b);
        let inside = |iv: Interval, v: f64| v >= iv.lo && v <= iv.hi;
        for t in &a.transitions {
            assert!(inside(POSITION, t.next_state[0]) && inside(VELOCITY, t.next_state[1]));
        }
        assert!(a.transitions.iter().any(|t| t.terminal));
    }

    #[test]
    fn budget_extends_and_truncates() {
        let f = car_features();
        let plain = collect_episodes(&mut MountainCar::new(), &EnergyPumping, &f, 15, 200, 2).unwrap();
        let budget =
            collect_episodes_with_budget(&mut MountainCar::new(), &EnergyPumping, &f, 15, 200, Some(3000), 2)
                .unwrap();
        assert_eq!(budget.len(), 3000);
        let n = plain.len().min(3000);
        assert_eq!(&budget.transitions[..n], &plain.transitions[..n]);
        assert_eq!(*budget.episode_boundaries.last().unwrap(), 3000);
    }

    #[test]
    fn rebuild_from_transitions() {
        let f = car_features();
        let a = collect_episodes(&mut MountainCar::new(), &EnergyPumping, &f, 3, 50, 5).unwrap();
        let b = EpisodeBatch::from_transitions(a.transitions.clone(), a.seed, f.dim(), |s| {
            f.eval(State::Point(s))
        })
        .unwrap();
        assert_eq!(a, b);
    }
}
