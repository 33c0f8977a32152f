//! Seeded experiment runs.

use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use rotd_core::environments::{
    baird_initial_theta, collect_episodes_with_budget, collect_iid_samples, random_walk, star_mdp,
    EnergyPumping, EnvError, EpisodeBatch, MdpModel, MountainCar, POSITION, VELOCITY,
};
use rotd_core::features::{FeatureError, FeatureMap};
use rotd_core::oracle::{
    diagnostics, exact_system_with, reference_lasso, reference_solve, residual_diagnostics,
    DiagnosticsRecord, LinearSystem, OracleError, RankPolicy, ReferenceSolution,
};
use rotd_core::solvers::{
    gq_step, gq_trace_update, primal_dual_step, rogq_step, rotd_ext_step, rotd_ext_td_step,
    rotd_step, td_step, tdc_step, Algorithm, DualExtensionState, GradientTdState, PrimalDualState,
    ProxParams, RowSample, SolverConfig, SolverError, TraceState,
};

use crate::config::{Basis, ExperimentConfig, ExperimentKind, Init};

#[derive(Debug, thiserror::Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Environment(#[from] EnvError),
    #[error(transparent)]
    Features(#[from] FeatureError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error("{label} (seed {seed}): {source}")]
    Solver { label: String, seed: u64, source: SolverError },
}

/// Outcome of one algorithm on one seed.
#[derive(Debug, Clone)]
pub struct RunResult {
    pub label: String,
    pub algorithm: Algorithm,
    pub basis: Option<Basis>,
    pub seed: u64,
    pub solver: SolverConfig,
    /// Strictly increasing in iteration.
    pub records: Vec<DiagnosticsRecord>,
    /// Reported estimate `[w; theta]`: the averaged iterate for primal-dual
    /// methods, the last iterate otherwise.
    pub x_bar: DVector<f64>,
    pub y_bar: Option<DVector<f64>>,
    pub duration: Duration,
    /// Iteration at which the iterate stopped being finite.
    pub diverged: Option<usize>,
    /// Optimum of the regularised problem the run targets (synthetic systems).
    pub reference: Option<ReferenceSolution>,
}

impl RunResult {
    pub fn theta(&self) -> DVector<f64> {
        let d = self.x_bar.len() / 2;
        self.x_bar.rows(d, d).into_owned()
    }

    pub fn last(&self) -> Option<&DiagnosticsRecord> {
        self.records.last()
    }
}

/// One (algorithm, problem, seed) job.
#[derive(Debug, Clone)]
struct Job {
    label: String,
    solver: SolverConfig,
    basis: Option<Basis>,
    seed: u64,
}

enum Learner {
    Grad { state: GradientTdState, trace: TraceState },
    Pd { state: PrimalDualState, trace: TraceState },
    Ext { state: DualExtensionState },
}

impl Learner {
    fn new(algorithm: Algorithm, theta: &DVector<f64>, lambda: f64) -> Self {
        let d = theta.len();
        match algorithm {
            Algorithm::Td | Algorithm::Tdc | Algorithm::Gq => Learner::Grad {
                state: GradientTdState::with_theta(theta.clone()),
                trace: TraceState::new(d, lambda),
            },
            Algorithm::RoTd | Algorithm::RoGq => Learner::Pd {
                state: PrimalDualState::with_theta(theta),
                trace: TraceState::new(d, lambda),
            },
            Algorithm::RoTdExt => {
                let mut state = DualExtensionState::zeros(2 * d);
                state.x.rows_mut(d, d).copy_from(theta);
                Learner::Ext { state }
            }
        }
    }

    fn t(&self) -> usize {
        match self {
            Learner::Grad { state, .. } => state.t,
            Learner::Pd { state, .. } => state.t,
            Learner::Ext { state } => state.t,
        }
    }

    /// `(x_t, y_t, estimate)`.
    fn iterates(&self) -> (DVector<f64>, Option<DVector<f64>>, DVector<f64>) {
        match self {
            Learner::Grad { state, .. } => {
                let x = state.stacked();
                (x.clone(), None, x)
            }
            Learner::Pd { state, .. } => (state.x.clone(), Some(state.y.clone()), state.x_estimate()),
            Learner::Ext { state } => {
                let est = state.average().unwrap_or_else(|_| state.x.clone());
                (state.x.clone(), Some(state.y.clone()), est)
            }
        }
    }

    fn dual_average(&self) -> Option<DVector<f64>> {
        match self {
            Learner::Pd { state, .. } => state.average_iterates().ok().map(|(_, y)| y),
            _ => None,
        }
    }

    /// One step on a transition. Returns the TD error (NaN for the extension).
    fn step_transition(
        &mut self,
        batch: &EpisodeBatch,
        index: usize,
        cfg: &SolverConfig,
    ) -> Result<f64, SolverError> {
        let sample = &batch.samples[index];
        match self {
            Learner::Grad { state, trace } => {
                let alpha = cfg.step.at(state.t + 1);
                match cfg.algorithm {
                    Algorithm::Td => td_step(state, sample, alpha, cfg.gamma),
                    Algorithm::Tdc => tdc_step(state, sample, alpha, cfg.eta, cfg.gamma),
                    _ => {
                        if batch.starts_episode(index) {
                            trace.reset();
                        }
                        gq_trace_update(trace, sample, cfg.gamma);
                        gq_step(state, trace, sample, alpha, cfg.eta, cfg.gamma)
                    }
                }
            }
            Learner::Pd { state, trace } => match cfg.algorithm {
                Algorithm::RoGq => {
                    if batch.starts_episode(index) {
                        trace.reset();
                    }
                    gq_trace_update(trace, sample, cfg.gamma);
                    rogq_step(state, trace, sample, cfg)
                }
                _ => rotd_step(state, sample, cfg),
            },
            Learner::Ext { state } => rotd_ext_td_step(state, sample, cfg).map(|_| f64::NAN),
        }
    }

    /// One step on a uniformly drawn row of `(a, b)`.
    fn step_row(
        &mut self,
        a: &DMatrix<f64>,
        b: &DVector<f64>,
        row: usize,
        cfg: &SolverConfig,
    ) -> Result<f64, SolverError> {
        let op = RowSample { a, b, row };
        let residual = a.row(row).transpose().dot(&self.iterates().0) - b[row];
        match self {
            Learner::Pd { state, .. } => {
                let alpha = cfg.step.at(state.t + 1);
                let prox = ProxParams { rho_theta: cfg.rho1, rho_w: cfg.rho2, dual: cfg.norm.dual() };
                primal_dual_step(state, &op, alpha, prox)?;
            }
            Learner::Ext { state } => {
                let alpha = cfg.step.at(state.t + 1);
                rotd_ext_step(state, &op, alpha, cfg.rho1)?;
            }
            Learner::Grad { .. } => return Err(SolverError::AlgorithmMismatch(cfg.algorithm)),
        }
        Ok(residual)
    }
}

/// What the samples come from and how records are scored.
enum Problem {
    /// Finite model with an exact system for the MSPBE.
    Model { system: LinearSystem, batch: EpisodeBatch },
    /// Simulator samples; only model-free fields are recorded.
    Samples { batch: EpisodeBatch },
    /// Synthetic `Ax = b` with per-step row sampling.
    Rows { a: DMatrix<f64>, b: DVector<f64>, rows: ChaCha8Rng },
}

/// Random system `A = I + c G / sqrt(n)`, `b` a unit Gaussian direction.
pub fn synthetic_system(n: usize, coupling: f64, seed: u64) -> (DMatrix<f64>, DVector<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    let scale = coupling / (n as f64).sqrt();
    let g = DMatrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let a = DMatrix::identity(n, n) + g * scale;
    let b = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let b = &b / b.norm();
    (a, b)
}

fn random_walk_features(basis: Basis) -> Result<FeatureMap, FeatureError> {
    let k = rotd_core::environments::RANDOM_WALK_INTERIOR;
    match basis {
        Basis::Tabular => FeatureMap::tabular(k),
        Basis::Inverted => FeatureMap::inverted(k),
        Basis::Dependent => FeatureMap::dependent(k),
    }
}

/// RBF grids over the mountain-car state box plus a constant feature.
pub fn mountain_car_features(grids: &[usize]) -> Result<FeatureMap, FeatureError> {
    FeatureMap::rbf_grid(&[POSITION, VELOCITY], grids, true)
}

/// Mountain-car samples under the energy-pumping policy, truncated to `n`.
pub fn mountain_car_batch(
    config: &ExperimentConfig,
    features: &FeatureMap,
    seed: u64,
) -> Result<EpisodeBatch, EnvError> {
    let mut env = MountainCar::new();
    collect_episodes_with_budget(
        &mut env,
        &EnergyPumping,
        features,
        config.episodes,
        config.max_steps,
        Some(config.n_samples),
        seed,
    )
}

fn model_for(config: &ExperimentConfig, basis: Option<Basis>) -> Result<(MdpModel, FeatureMap, RankPolicy), ExperimentError> {
    Ok(match config.experiment {
        ExperimentKind::Star => {
            let (model, fmap) = star_mdp();
            // eight features on seven states
            (model, fmap, RankPolicy::PseudoInverse)
        }
        _ => {
            let basis = basis.unwrap_or(Basis::Tabular);
            (random_walk(), random_walk_features(basis)?, RankPolicy::Strict)
        }
    })
}

fn jobs(config: &ExperimentConfig) -> Vec<Job> {
    let mut out = Vec::new();
    let bases: Vec<Option<Basis>> = match config.experiment {
        ExperimentKind::RandomWalk => config.bases.iter().copied().map(Some).collect(),
        _ => vec![None],
    };
    for basis in &bases {
        for &algorithm in &config.algorithms {
            let solver = config.solver(algorithm);
            let mut label = algorithm.name().to_string();
            if let Some(b) = basis {
                label = format!("{label}_{}", b.name());
            }
            let paired = config.experiment == ExperimentKind::MountainCar
                && config.baseline
                && (solver.rho1 > 0.0 || solver.rho2 > 0.0)
                && algorithm.is_primal_dual()
                && algorithm != Algorithm::RoTdExt;
            let mut labelled = vec![(label.clone(), solver)];
            if paired {
                let mut base = solver;
                base.rho1 = 0.0;
                base.rho2 = 0.0;
                labelled.push((format!("{label}_rho0"), base));
            }
            for (label, solver) in labelled {
                for seed in config.seeds() {
                    out.push(Job { label: label.clone(), solver, basis: *basis, seed });
                }
            }
        }
    }
    out
}

fn build_problem(config: &ExperimentConfig, job: &Job) -> Result<(Problem, DVector<f64>, Option<ReferenceSolution>), ExperimentError> {
    match config.experiment {
        ExperimentKind::Star | ExperimentKind::RandomWalk => {
            let (model, fmap, policy) = model_for(config, job.basis)?;
            let system = exact_system_with(&model, &fmap, config.eta, config.gamma, policy)?;
            let batch = collect_iid_samples(&model, &fmap, config.n_samples, job.seed)?;
            let theta = match config.init {
                Init::Baird if fmap.dim() == 8 => baird_initial_theta(),
                _ => DVector::zeros(fmap.dim()),
            };
            Ok((Problem::Model { system, batch }, theta, None))
        }
        ExperimentKind::MountainCar => {
            let fmap = mountain_car_features(&config.grids)?;
            let batch = mountain_car_batch(config, &fmap, job.seed)?;
            Ok((Problem::Samples { batch }, DVector::zeros(fmap.dim()), None))
        }
        ExperimentKind::Synthetic | ExperimentKind::Prop1Check => {
            let (a, b) = synthetic_system(config.dim, config.coupling, job.seed);
            let reference = match job.solver.algorithm {
                Algorithm::RoTdExt => reference_lasso(&a, &b, job.solver.rho1)?,
                _ => reference_solve(&a, &b, job.solver.rho1, job.solver.rho2, job.solver.norm.primal())?,
            };
            let mut rows = ChaCha8Rng::seed_from_u64(job.seed);
            rows.set_stream(2);
            let theta = DVector::zeros(config.dim / 2);
            Ok((Problem::Rows { a, b, rows }, theta, Some(reference)))
        }
    }
}

fn record(
    learner: &Learner,
    problem: &Problem,
    cfg: &SolverConfig,
    delta: f64,
) -> Result<DiagnosticsRecord, OracleError> {
    let (x, y, est) = learner.iterates();
    let t = learner.t();
    match problem {
        Problem::Model { system, .. } => diagnostics(t, &x, y.as_ref(), &est, delta, system, cfg),
        Problem::Rows { a, b, .. } => residual_diagnostics(t, a, b, &x, y.as_ref(), &est, delta, cfg),
        Problem::Samples { .. } => Ok(DiagnosticsRecord::model_free(t, &est, delta)),
    }
}

fn run_job(config: &ExperimentConfig, job: &Job) -> Result<RunResult, ExperimentError> {
    let start = Instant::now();
    let (mut problem, theta0, reference) = build_problem(config, job)?;
    let cfg = job.solver;
    let mut learner = Learner::new(cfg.algorithm, &theta0, cfg.lambda);
    let n = config.n_samples;
    let stride = config.record_stride;
    let mut records = vec![record(&learner, &problem, &cfg, f64::NAN)?];
    let mut diverged = None;

    for i in 0..n {
        let step = match &mut problem {
            Problem::Model { batch, .. } | Problem::Samples { batch } => {
                learner.step_transition(batch, i, &cfg)
            }
            Problem::Rows { a, b, rows } => {
                let row = rows.gen_range(0..a.nrows());
                learner.step_row(a, b, row, &cfg)
            }
        };
        let delta = match step {
            Ok(d) => d,
            Err(SolverError::Diverged { iteration }) => {
                diverged = Some(iteration);
                break;
            }
            Err(source) => {
                return Err(ExperimentError::Solver { label: job.label.clone(), seed: job.seed, source })
            }
        };
        let t = i + 1;
        if t % stride == 0 || t == n {
            let rec = record(&learner, &problem, &cfg, delta)?;
            if rec.mspbe.is_infinite() || rec.l2_residual.is_infinite() {
                diverged = Some(t);
                break;
            }
            records.push(rec);
        }
    }

    let (_, _, x_bar) = learner.iterates();
    Ok(RunResult {
        label: job.label.clone(),
        algorithm: cfg.algorithm,
        basis: job.basis,
        seed: job.seed,
        solver: cfg,
        records,
        x_bar,
        y_bar: learner.dual_average(),
        duration: start.elapsed(),
        diverged,
        reference,
    })
}

/// Runs every selected algorithm over every seed. Results are ordered by
/// basis, then algorithm (with any paired baseline after it), then seed,
/// whatever order the parallel runs finish in.
pub fn run_experiment(config: &ExperimentConfig) -> Result<Vec<RunResult>, ExperimentError> {
    jobs(config).par_iter().map(|job| run_job(config, job)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::parse_config_str;

    fn cfg(body: &str) -> ExperimentConfig {
        parse_config_str(&format!("[experiment]\n{body}")).unwrap()
    }

    #[test]
    fn job_order_and_labels() {
        let c = cfg("experiment = random-walk\nalgorithms = td, ro-td\nalpha = 0.1\nsamples = 10\nruns = 2\nseed = 5\nfeatures = tabular, dependent\n");
        let labels: Vec<(String, u64)> = jobs(&c).into_iter().map(|j| (j.label, j.seed)).collect();
        assert_eq!(labels.len(), 8);
        assert_eq!(labels[0], ("td_tabular".to_string(), 5));
        assert_eq!(labels[1], ("td_tabular".to_string(), 6));
        assert_eq!(labels[2].0, "ro-td_tabular");
        assert_eq!(labels[7], ("ro-td_dependent".to_string(), 6));
    }

    #[test]
    fn baseline_is_paired() {
        let c = cfg("experiment = mountain-car\nalgorithms = ro-td\nalpha = 0.001\nrho1 = 0.01\nsamples = 10\n");
        let j = jobs(&c);
        assert_eq!(j.len(), 2);
        assert_eq!(j[1].label, "ro-td_rho0");
        assert_eq!((j[1].solver.rho1, j[1].seed), (0.0, j[0].seed));
    }

    #[test]
    fn records_strictly_increase_and_end_at_n() {
        let c = cfg("experiment = star\nalgorithms = tdc, ro-td, gq, ro-gq\nalpha = 0.01\neta = 10\nsamples = 103\nstride = 10\n");
        for r in run_experiment(&c).unwrap() {
            let its: Vec<usize> = r.records.iter().map(|x| x.iteration).collect();
            assert_eq!(its.first(), Some(&0));
            assert_eq!(its.last(), Some(&103));
            assert!(its.windows(2).all(|w| w[0] < w[1]));
            assert_eq!(its.len(), 12);
        }
    }

    #[test]
    fn synthetic_system_is_normalised_and_seeded() {
        let (a, b) = synthetic_system(6, 0.3, 1);
        assert!((b.norm() - 1.0).abs() < 1e-14);
        assert_eq!(synthetic_system(6, 0.3, 1).0, a);
        assert_ne!(synthetic_system(6, 0.3, 2).0, a);
        assert_eq!(synthetic_system(6, 0.0, 3).0, DMatrix::identity(6, 6));
    }

    #[test]
    fn divergence_is_recorded_not_fatal() {
        let c = cfg("experiment = star\nalgorithms = td\nalpha = 1e150\nsamples = 50\n");
        let r = &run_experiment(&c).unwrap()[0];
        assert!(r.diverged.is_some());
        assert!(r.records.iter().all(|x| x.mspbe.is_finite()));
    }
}
