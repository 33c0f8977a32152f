//! Runs a configuration and writes every artifact to one directory.

use std::path::{Path, PathBuf};

use crate::config::{ExperimentConfig, ExperimentKind};
use crate::experiment::{mountain_car_batch, mountain_car_features, run_experiment, ExperimentError, RunResult};
use crate::output::{emit_csv, emit_runs, emit_summary, group_by_label, write_batch_csv, OutputError};
use crate::plot::{mean_series, metric_series, render_svg, write_svg, PlotError, Series};
use crate::report::{emit_feature_report, feature_selection_report, render_reports, ControlProtocol, FeatureSelectionReport};
use rotd_core::features::FeatureError;
use rotd_core::solvers::Algorithm;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error(transparent)]
    Experiment(#[from] ExperimentError),
    #[error(transparent)]
    Output(#[from] OutputError),
    #[error(transparent)]
    Plot(#[from] PlotError),
    #[error(transparent)]
    Features(#[from] FeatureError),
}

#[derive(Debug)]
pub struct Outcome {
    pub results: Vec<RunResult>,
    pub reports: Vec<FeatureSelectionReport>,
    /// CSV files written, in order.
    pub csv_files: Vec<PathBuf>,
    pub svg_files: Vec<PathBuf>,
    /// Plots skipped because they had nothing finite to show.
    pub skipped_plots: Vec<String>,
}

impl Outcome {
    pub fn all_diverged(&self) -> bool {
        !self.results.is_empty() && self.results.iter().all(|r| r.diverged.is_some())
    }

    pub fn n_diverged(&self) -> usize {
        self.results.iter().filter(|r| r.diverged.is_some()).count()
    }
}

pub fn trace_file_name(label: &str) -> String {
    format!("trace_{label}.csv")
}

/// Runs `config` and writes traces, summaries, plots and reports under `dir`.
pub fn execute(config: &ExperimentConfig, dir: &Path) -> Result<Outcome, HarnessError> {
    std::fs::create_dir_all(dir).map_err(|source| OutputError::Io { path: dir.to_path_buf(), source })?;
    let results = run_experiment(config)?;
    let mut csv_files = Vec::new();

    for (label, runs) in group_by_label(&results) {
        let owned: Vec<RunResult> = runs.into_iter().cloned().collect();
        let path = dir.join(trace_file_name(label));
        emit_csv(&owned, &path)?;
        csv_files.push(path);
    }
    let summary = dir.join("summary.csv");
    emit_summary(&results, &summary)?;
    csv_files.push(summary);
    let runs = dir.join("runs.csv");
    emit_runs(&results, &runs)?;
    csv_files.push(runs);

    let mut reports = Vec::new();
    if config.experiment == ExperimentKind::MountainCar {
        let features = mountain_car_features(&config.grids)?;
        for r in &results {
            let protocol = ControlProtocol::new(config.rollouts, config.rollout_steps, config.gamma, r.seed);
            reports.push(feature_selection_report(r, &features, Some(&protocol))?);
        }
        let path = dir.join("feature_selection.csv");
        emit_feature_report(&reports, &path)?;
        csv_files.push(path);
        let text = dir.join("feature_selection.txt");
        std::fs::write(&text, render_reports(&reports)).map_err(|source| OutputError::Io { path: text, source })?;
        for seed in config.seeds() {
            let batch = mountain_car_batch(config, &features, seed).map_err(ExperimentError::from)?;
            let path = dir.join(format!("samples_seed{seed}.csv"));
            write_batch_csv(&batch, &path)?;
            csv_files.push(path);
        }
    }

    let mut svg_files = Vec::new();
    let mut skipped_plots = Vec::new();
    if config.plot {
        for (name, series, metric, log) in plots(config, &results)? {
            let path = dir.join(format!("{name}.svg"));
            match render_svg(&series, &name, metric, log) {
                Ok(svg) => {
                    write_svg(&svg, &path)?;
                    svg_files.push(path);
                }
                Err(PlotError::EmptySeries(_)) => skipped_plots.push(name),
                Err(e) => return Err(e.into()),
            }
        }
    }
    Ok(Outcome { results, reports, csv_files, svg_files, skipped_plots })
}

type PlotSpec = (String, Vec<Series>, &'static str, bool);

fn plots(config: &ExperimentConfig, results: &[RunResult]) -> Result<Vec<PlotSpec>, PlotError> {
    let mut out = Vec::new();
    match config.experiment {
        ExperimentKind::Star | ExperimentKind::RandomWalk => {
            out.push(("mspbe".to_string(), mean_series(results, "mspbe")?, "mspbe", true));
            let pd: Vec<&str> = group_by_label(results)
                .into_iter()
                .filter(|(_, runs)| runs[0].algorithm.is_primal_dual())
                .map(|(l, _)| l)
                .collect();
            for label in pd {
                let series = metric_series(results, label, &["l2_residual", "dual_value"])?;
                out.push((format!("duality_{label}"), series, "l2_residual", false));
            }
        }
        ExperimentKind::MountainCar => {
            out.push(("theta_nnz".to_string(), mean_series(results, "theta_nnz")?, "theta_nnz", false));
        }
        ExperimentKind::Synthetic | ExperimentKind::Prop1Check => {
            out.push(("objective".to_string(), mean_series(results, "objective")?, "objective", true));
            if config.algorithms.contains(&Algorithm::RoTd) {
                out.push(("l2_residual".to_string(), mean_series(results, "l2_residual")?, "l2_residual", true));
            }
        }
    }
    Ok(out)
}
