//! Experiment runner: configuration files, seeded multi-run execution, CSV
//! traces and summaries, SVG convergence plots, and mountain-car
//! feature-selection reports.

pub mod config;
pub mod experiment;
pub mod output;
pub mod plot;
pub mod presets;
pub mod report;
pub mod run;

pub use config::{parse_config, parse_config_str, ConfigError, ExperimentConfig, ExperimentKind};
pub use experiment::{run_experiment, ExperimentError, RunResult};
pub use output::{emit_csv, read_trace_csv, OutputError};
pub use plot::{emit_plot, PlotError, Series};
pub use report::{feature_selection_report, FeatureSelectionReport};
pub use run::{execute, HarnessError, Outcome};
