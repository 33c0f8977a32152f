use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use rotd::config::{keys_help, parse_config, ConfigError, ExperimentConfig};
use rotd::output::read_trace_csv;
use rotd::plot::{emit_plot, trace_series, PlotError};
use rotd::presets::{description, preset, preset_text, PRESETS};
use rotd::run::{execute, HarnessError};
use rotd::OutputError;

/// Environment variable that overrides a config's `output` directory.
const OUTPUT_ENV: &str = "ROTD_OUTPUT_DIR";

const EXIT_CONFIG: u8 = 1;
const EXIT_IO: u8 = 2;
const EXIT_DIVERGED: u8 = 3;

#[derive(Parser)]
#[command(name = "rotd", version, about = "Regularized off-policy TD experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a config file or a named preset.
    #[command(after_help = run_help())]
    Run {
        /// Path to a config file, or a preset name (see `presets list`).
        config: String,
        /// Output directory (overrides ROTD_OUTPUT_DIR and the config).
        #[arg(long)]
        output: Option<PathBuf>,
        /// Worker threads for the seed-parallel runs (0 = all cores).
        #[arg(long, default_value_t = 0)]
        threads: usize,
    },
    /// Plot a metric from one or more trace CSV files.
    Plot {
        #[arg(required = true)]
        csv: Vec<PathBuf>,
        /// Column to plot, e.g. mspbe, l2_residual, dual_value, theta_nnz.
        #[arg(long)]
        metric: String,
        /// Logarithmic y axis.
        #[arg(long)]
        log: bool,
        /// SVG file to write.
        #[arg(long, default_value = "plot.svg")]
        output: PathBuf,
    },
    /// Inspect the bundled presets.
    Presets {
        #[command(subcommand)]
        action: PresetAction,
    },
}

#[derive(Subcommand)]
enum PresetAction {
    /// List preset names.
    List,
    /// Print a preset's config file.
    Show { name: String },
}

fn run_help() -> String {
    format!("{}\nexit codes: 0 ok, 1 config error, 2 I/O error, 3 every run diverged\n{OUTPUT_ENV} overrides the output directory.", keys_help())
}

fn load(config: &str) -> Result<ExperimentConfig, ConfigError> {
    let path = Path::new(config);
    if !path.exists() {
        if let Some(c) = preset(config) {
            return c;
        }
    }
    parse_config(path)
}

fn harness_exit(e: &HarnessError) -> u8 {
    match e {
        HarnessError::Output(_) | HarnessError::Plot(PlotError::Io { .. }) => EXIT_IO,
        _ => EXIT_CONFIG,
    }
}

fn run(config: &str, output: Option<PathBuf>, threads: usize) -> u8 {
    let cfg = match load(config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return if matches!(e, ConfigError::Io { .. }) { EXIT_IO } else { EXIT_CONFIG };
        }
    };
    let dir = output
        .or_else(|| std::env::var_os(OUTPUT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| cfg.output.clone());
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(threads).build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_CONFIG;
        }
    };
    let outcome = match pool.install(|| execute(&cfg, &dir)) {
        Ok(o) => o,
        Err(e) => {
            eprintln!("error: {e}");
            return harness_exit(&e);
        }
    };
    for r in &outcome.results {
        let last = r.last().expect("iteration 0 is always recorded");
        let status = r.diverged.map_or("ok".to_string(), |t| format!("diverged at {t}"));
        println!(
            "{:<22} seed {:<6} {:>7.2}s  mspbe {:<12.6e} objective {:<12.6e} theta_nnz {:<5} {status}",
            r.label,
            r.seed,
            r.duration.as_secs_f64(),
            last.mspbe,
            last.objective,
            last.theta_nnz
        );
    }
    if !outcome.reports.is_empty() {
        print!("{}", rotd::report::render_reports(&outcome.reports));
    }
    for name in &outcome.skipped_plots {
        eprintln!("warning: {name}.svg not written: no finite values");
    }
    println!(
        "{} runs, {} diverged; {} CSV and {} SVG files in {}",
        outcome.results.len(),
        outcome.n_diverged(),
        outcome.csv_files.len(),
        outcome.svg_files.len(),
        dir.display()
    );
    if outcome.all_diverged() {
        EXIT_DIVERGED
    } else {
        0
    }
}

fn plot(files: &[PathBuf], metric: &str, log: bool, output: &Path) -> u8 {
    let mut traces = Vec::new();
    for f in files {
        match read_trace_csv(f) {
            Ok(rows) => {
                let label = f.file_stem().map_or("trace".into(), |s| s.to_string_lossy().trim_start_matches("trace_").to_string());
                traces.push((label, rows));
            }
            Err(e) => {
                eprintln!("error: {e}");
                return if matches!(e, OutputError::Parse { .. }) { EXIT_CONFIG } else { EXIT_IO };
            }
        }
    }
    let result = trace_series(&traces, metric).and_then(|s| emit_plot(&s, metric, log, output));
    match result {
        Ok(()) => {
            println!("wrote {}", output.display());
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            if matches!(e, PlotError::Io { .. }) {
                EXIT_IO
            } else {
                EXIT_CONFIG
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match cli.command {
        Command::Run { config, output, threads } => run(&config, output, threads),
        Command::Plot { csv, metric, log, output } => plot(&csv, &metric, log, &output),
        Command::Presets { action: PresetAction::List } => {
            for (name, text) in PRESETS {
                println!("{name:<14} {}", description(text));
            }
            0
        }
        Command::Presets { action: PresetAction::Show { name } } => match preset_text(&name) {
            Some(t) => {
                print!("{t}");
                0
            }
            None => {
                eprintln!("error: no preset named `{name}`");
                EXIT_CONFIG
            }
        },
    };
    ExitCode::from(code)
}
