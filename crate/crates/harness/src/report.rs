//! Sparsity and control summaries for mountain-car runs.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rotd_core::environments::{mountain_car_step, N_ACTIONS};
use rotd_core::features::{Basis as FeatureBasis, FeatureError, FeatureMap, State};
use rotd_core::oracle::{count_active, ACTIVE_TOL};

use crate::experiment::RunResult;
use crate::output::{fmt_f64, mean_sd, OutputError};

/// Greedy one-step-lookahead evaluation of a learned value function.
///
/// Each rollout starts at a position drawn uniformly from `start` with zero
/// velocity and ends at the goal or after `max_steps` steps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlProtocol {
    pub rollouts: usize,
    pub max_steps: usize,
    pub gamma: f64,
    pub start: (f64, f64),
    pub seed: u64,
}

impl ControlProtocol {
    pub fn new(rollouts: usize, max_steps: usize, gamma: f64, seed: u64) -> Self {
        Self { rollouts, max_steps, gamma, start: (-0.6, -0.4), seed }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControlSummary {
    /// Steps to the goal, `None` for rollouts that hit the cap.
    pub steps: Vec<Option<usize>>,
}

impl ControlSummary {
    pub fn successes(&self) -> usize {
        self.steps.iter().flatten().count()
    }

    pub fn success_rate(&self) -> f64 {
        self.successes() as f64 / self.steps.len().max(1) as f64
    }

    /// Mean and sample sd of steps over successful rollouts.
    pub fn steps_mean_sd(&self) -> (f64, f64) {
        let v: Vec<f64> = self.steps.iter().flatten().map(|s| *s as f64).collect();
        mean_sd(&v)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridCount {
    pub size: usize,
    pub active: usize,
    pub total: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSelectionReport {
    pub label: String,
    pub seed: u64,
    pub dim: usize,
    pub theta_nnz: usize,
    pub per_grid: Vec<GridCount>,
    pub constant_active: Option<bool>,
    pub control: Option<ControlSummary>,
}

impl FeatureSelectionReport {
    pub fn zero_count(&self) -> usize {
        self.dim - self.theta_nnz
    }

    pub fn nonzero_fraction(&self) -> f64 {
        self.theta_nnz as f64 / self.dim as f64
    }
}

/// Value of a state under linear coefficients.
fn value(features: &FeatureMap, theta: &DVector<f64>, s: [f64; 2], buf: &mut [f64]) -> Result<f64, FeatureError> {
    features.eval_into(State::Point(&s), buf)?;
    Ok(buf.iter().zip(theta.iter()).map(|(a, b)| a * b).sum())
}

/// Runs the greedy rollouts: at each step pick the action maximising
/// `r + gamma V(s')` under the known dynamics (ties go to the lower action).
pub fn evaluate_control(
    features: &FeatureMap,
    theta: &DVector<f64>,
    protocol: &ControlProtocol,
) -> Result<ControlSummary, FeatureError> {
    let mut rng = ChaCha8Rng::seed_from_u64(protocol.seed);
    rng.set_stream(3);
    let mut buf = vec![0.0; features.dim()];
    let mut steps = Vec::with_capacity(protocol.rollouts);
    for _ in 0..protocol.rollouts {
        let mut s = [rng.gen_range(protocol.start.0..protocol.start.1), 0.0];
        let mut reached = None;
        for t in 1..=protocol.max_steps {
            let mut best = (f64::NEG_INFINITY, 0, s, false);
            for a in 0..N_ACTIONS {
                let next = mountain_car_step(s[0], s[1], a).expect("rollout stays in the state box");
                let after = [next.position, next.velocity];
                let q = next.reward
                    + if next.done { 0.0 } else { protocol.gamma * value(features, theta, after, &mut buf)? };
                if q > best.0 {
                    best = (q, a, after, next.done);
                }
            }
            s = best.2;
            if best.3 {
                reached = Some(t);
                break;
            }
        }
        steps.push(reached);
    }
    Ok(ControlSummary { steps })
}

/// Active coefficients of the run's estimate overall and per RBF grid, plus
/// the control summary when a protocol is given.
pub fn feature_selection_report(
    run: &RunResult,
    features: &FeatureMap,
    protocol: Option<&ControlProtocol>,
) -> Result<FeatureSelectionReport, FeatureError> {
    let theta = run.theta();
    let (per_grid, constant_active) = match features.basis() {
        FeatureBasis::RbfGrid(grid) => {
            let per_grid = grid
                .blocks()
                .into_iter()
                .map(|(size, r)| GridCount { size, active: count_active(theta.rows(r.start, r.len()).iter()), total: r.len() })
                .collect();
            let constant = grid.include_constant().then(|| theta[theta.len() - 1].abs() > ACTIVE_TOL);
            (per_grid, constant)
        }
        _ => (Vec::new(), None),
    };
    let control = match protocol {
        Some(p) if p.rollouts > 0 => Some(evaluate_control(features, &theta, p)?),
        _ => None,
    };
    Ok(FeatureSelectionReport {
        label: run.label.clone(),
        seed: run.seed,
        dim: theta.len(),
        theta_nnz: count_active(theta.iter()),
        per_grid,
        constant_active,
        control,
    })
}

/// Plain-text table of the reports.
pub fn render_reports(reports: &[FeatureSelectionReport]) -> String {
    let mut s = String::new();
    for r in reports {
        let _ = writeln!(
            s,
            "{} (seed {}): {} of {} coefficients active ({:.1}%)",
            r.label,
            r.seed,
            r.theta_nnz,
            r.dim,
            100.0 * r.nonzero_fraction()
        );
        for g in &r.per_grid {
            let _ = writeln!(s, "  {:>2}x{:<2} grid: {:>5} / {}", g.size, g.size, g.active, g.total);
        }
        if let Some(c) = r.constant_active {
            let _ = writeln!(s, "  constant: {}", if c { "active" } else { "zero" });
        }
        if let Some(c) = &r.control {
            let (m, sd) = c.steps_mean_sd();
            let _ = writeln!(s, "  success {}/{}; steps {:.2} +/- {:.2}", c.successes(), c.steps.len(), m, sd);
        }
    }
    s
}

pub fn emit_feature_report(reports: &[FeatureSelectionReport], path: &Path) -> Result<(), OutputError> {
    let err = |source| OutputError::Csv { path: path.to_path_buf(), source };
    let mut w = csv::Writer::from_path(path).map_err(err)?;
    let grids: Vec<usize> = reports.first().map_or(Vec::new(), |r| r.per_grid.iter().map(|g| g.size).collect());
    let mut header = vec!["label".to_string(), "seed".into(), "dim".into(), "theta_nnz".into()];
    header.extend(grids.iter().map(|g| format!("nnz_grid{g}")));
    header.extend(["successes".to_string(), "rollouts".into(), "mean_steps".into(), "sd_steps".into()]);
    w.write_record(&header).map_err(err)?;
    for r in reports {
        let mut row = vec![r.label.clone(), r.seed.to_string(), r.dim.to_string(), r.theta_nnz.to_string()];
        row.extend(r.per_grid.iter().map(|g| g.active.to_string()));
        match &r.control {
            Some(c) => {
                let (m, sd) = c.steps_mean_sd();
                row.extend([c.successes().to_string(), c.steps.len().to_string(), fmt_f64(m), fmt_f64(sd)]);
            }
            None => row.extend([String::new(), String::new(), String::new(), String::new()]),
        }
        w.write_record(&row).map_err(err)?;
    }
    w.flush().map_err(|source| OutputError::Io { path: path.to_path_buf(), source })
}
