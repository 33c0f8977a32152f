//! Experiment configuration files.
//!
//! ```text
//! # comment
//! [experiment]
//! experiment = star
//! algorithms = td, tdc, ro-td
//! alpha = 0.01
//! samples = 2000
//! ```
//!
//! Every key lives under the single `[experiment]` header. Unknown or repeated
//! keys are rejected with their line number.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use rotd_core::solvers::{Algorithm, NormPair, SolverConfig, StepSize};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("missing required keys: {}", .0.join(", "))]
    Missing(Vec<&'static str>),
    #[error("line {line}: {message}")]
    Invalid { line: usize, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ExperimentKind {
    Star,
    RandomWalk,
    MountainCar,
    Synthetic,
    Prop1Check,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 5] = [
        ExperimentKind::Star,
        ExperimentKind::RandomWalk,
        ExperimentKind::MountainCar,
        ExperimentKind::Synthetic,
        ExperimentKind::Prop1Check,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Star => "star",
            ExperimentKind::RandomWalk => "random-walk",
            ExperimentKind::MountainCar => "mountain-car",
            ExperimentKind::Synthetic => "synthetic",
            ExperimentKind::Prop1Check => "prop1-check",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s)
    }

    fn default_gamma(self) -> f64 {
        match self {
            ExperimentKind::Star | ExperimentKind::MountainCar => 0.99,
            ExperimentKind::RandomWalk => 0.9,
            ExperimentKind::Synthetic | ExperimentKind::Prop1Check => 0.0,
        }
    }

    fn allows(self, a: Algorithm) -> bool {
        match self {
            ExperimentKind::Synthetic => matches!(a, Algorithm::RoTd | Algorithm::RoTdExt),
            ExperimentKind::Prop1Check => a == Algorithm::RoTd,
            _ => true,
        }
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Basis {
    Tabular,
    Inverted,
    Dependent,
}

impl Basis {
    pub fn name(self) -> &'static str {
        match self {
            Basis::Tabular => "tabular",
            Basis::Inverted => "inverted",
            Basis::Dependent => "dependent",
        }
    }

    fn from_name(s: &str) -> Option<Self> {
        [Basis::Tabular, Basis::Inverted, Basis::Dependent].into_iter().find(|b| b.name() == s)
    }
}

/// Starting value coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Init {
    Zero,
    /// The divergent star-problem start `(1, 1, 1, 1, 1, 1, 10, 1)`.
    Baird,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub algorithms: Vec<Algorithm>,
    pub step: StepSize,
    pub eta: f64,
    pub rho1: f64,
    pub rho2: f64,
    pub norm: NormPair,
    pub gamma: f64,
    pub lambda: f64,
    pub n_samples: usize,
    pub n_runs: usize,
    pub seed_base: u64,
    pub output: PathBuf,
    pub plot: bool,
    pub record_stride: usize,
    pub init: Init,
    /// Random walk bases.
    pub bases: Vec<Basis>,
    /// Mountain car: episodes, steps per episode, RBF grids.
    pub episodes: usize,
    pub max_steps: usize,
    pub grids: Vec<usize>,
    /// Mountain car: paired unregularised run on the same samples.
    pub baseline: bool,
    /// Mountain car: greedy-lookahead rollouts (0 disables control evaluation).
    pub rollouts: usize,
    pub rollout_steps: usize,
    /// Synthetic systems: unknowns and off-diagonal coupling.
    pub dim: usize,
    pub coupling: f64,
}

/// Keys accepted in the `[experiment]` section, with their meaning.
pub const KEYS: &[(&str, &str)] = &[
    ("experiment", "star | random-walk | mountain-car | synthetic | prop1-check (required)"),
    ("algorithms", "comma list of td, tdc, ro-td, gq, ro-gq, ro-td-ext (required)"),
    ("alpha", "stepsize scale (required)"),
    ("samples", "samples / iterations per run, N (required)"),
    ("schedule", "constant | inv-sqrt (alpha / sqrt(t)); default constant"),
    ("eta", "auxiliary stepsize ratio, beta = eta alpha; default 1"),
    ("rho1", "l1 weight on theta; default 0"),
    ("rho2", "l1 weight on w; default 0"),
    ("m", "residual norm exponent: 1, 2 or inf; default 2"),
    ("n", "dual ball exponent, conjugate to m; default 2"),
    ("gamma", "discount; default 0.99 (star, mountain-car) or 0.9 (random-walk)"),
    ("lambda", "trace decay for gq / ro-gq; default 0"),
    ("runs", "number of seeds; default 1"),
    ("seed", "seed of the first run; run k uses seed + k; default 0"),
    ("output", "output directory; default out/<experiment>"),
    ("plot", "write SVG plots (true | false); default true"),
    ("stride", "record every k iterations; default max(1, N / 500)"),
    ("init", "zero | baird; default baird for star, zero otherwise"),
    ("features", "random-walk bases: tabular, inverted, dependent; default all three"),
    ("episodes", "mountain-car episodes; default 15"),
    ("max_steps", "mountain-car steps per episode; default 200"),
    ("grids", "mountain-car RBF grid sizes; default 2, 4, 8, 16, 32"),
    ("baseline", "mountain-car paired rho = 0 run (true | false); default true"),
    ("rollouts", "mountain-car greedy rollouts, 0 to skip; default 20"),
    ("rollout_steps", "mountain-car rollout step cap; default 1000"),
    ("dim", "synthetic unknowns (even); default 10"),
    ("coupling", "synthetic off-diagonal scale; default 0.3"),
];

const REQUIRED: [&str; 4] = ["experiment", "algorithms", "alpha", "samples"];

struct Entry {
    line: usize,
    value: String,
}

struct Entries(BTreeMap<String, Entry>);

impl Entries {
    fn get<T>(
        &self,
        key: &str,
        parse: impl Fn(&str) -> Option<T>,
        expected: &str,
    ) -> Result<Option<T>, ConfigError> {
        match self.0.get(key) {
            None => Ok(None),
            Some(e) => parse(&e.value).map(Some).ok_or_else(|| ConfigError::Invalid {
                line: e.line,
                message: format!("`{key}` must be {expected}, got `{}`", e.value),
            }),
        }
    }

    fn line(&self, key: &str) -> usize {
        self.0.get(key).map_or(0, |e| e.line)
    }
}

fn parse_f64(s: &str) -> Option<f64> {
    match s {
        "inf" | "infinity" => Some(f64::INFINITY),
        _ => s.parse().ok().filter(|v: &f64| v.is_finite()),
    }
}

fn parse_bool(s: &str) -> Option<bool> {
    match s {
        "true" | "yes" | "1" => Some(true),
        "false" | "no" | "0" => Some(false),
        _ => None,
    }
}

fn parse_list<T>(s: &str, item: impl Fn(&str) -> Option<T>) -> Option<Vec<T>> {
    let items: Option<Vec<T>> = s.split(',').map(|p| item(p.trim())).collect();
    items.filter(|v| !v.is_empty())
}

pub fn parse_config(path: &Path) -> Result<ExperimentConfig, ConfigError> {
    let text = std::fs::read_to_string(path)
        .map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
    parse_config_str(&text)
}

pub fn parse_config_str(text: &str) -> Result<ExperimentConfig, ConfigError> {
    let mut entries = BTreeMap::new();
    let mut in_section = false;
    for (k, raw) in text.lines().enumerate() {
        let line = k + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        if content.starts_with('[') {
            if content != "[experiment]" {
                return Err(ConfigError::Syntax {
                    line,
                    message: format!("unknown section `{content}`, expected [experiment]"),
                });
            }
            if in_section {
                return Err(ConfigError::Syntax { line, message: "repeated [experiment] section".into() });
            }
            in_section = true;
            continue;
        }
        let Some((key, value)) = content.split_once('=') else {
            return Err(ConfigError::Syntax { line, message: format!("expected `key = value`, got `{content}`") });
        };
        if !in_section {
            return Err(ConfigError::Syntax { line, message: "key outside the [experiment] section".into() });
        }
        let key = key.trim();
        if !KEYS.iter().any(|(k, _)| *k == key) {
            return Err(ConfigError::UnknownKey { line, key: key.to_string() });
        }
        let value = value.trim().to_string();
        if value.is_empty() {
            return Err(ConfigError::Syntax { line, message: format!("`{key}` has no value") });
        }
        if entries.insert(key.to_string(), Entry { line, value }).is_some() {
            return Err(ConfigError::Syntax { line, message: format!("duplicate key `{key}`") });
        }
    }
    let missing: Vec<&'static str> =
        REQUIRED.iter().copied().filter(|k| !entries.contains_key(*k)).collect();
    if !missing.is_empty() {
        return Err(ConfigError::Missing(missing));
    }
    build(Entries(entries))
}

fn build(e: Entries) -> Result<ExperimentConfig, ConfigError> {
    let invalid = |key: &str, message: String| ConfigError::Invalid { line: e.line(key), message };

    let experiment = e
        .get("experiment", ExperimentKind::from_name, "an experiment name")?
        .expect("required");
    let algorithms =
        e.get("algorithms", |s| parse_list(s, Algorithm::from_name), "a list of algorithms")?.expect("required");
    let alpha = e.get("alpha", parse_f64, "a number")?.expect("required");
    let n_samples = e.get("samples", |s| s.parse().ok(), "a positive integer")?.expect("required");
    let step = match e.get("schedule", |s| Some(s.to_string()), "")?.as_deref() {
        None | Some("constant") => StepSize::Constant(alpha),
        Some("inv-sqrt") => StepSize::InvSqrt(alpha),
        Some(other) => return Err(invalid("schedule", format!("unknown schedule `{other}`"))),
    };
    let m = e.get("m", parse_f64, "1, 2 or inf")?.unwrap_or(2.0);
    let n = e.get("n", parse_f64, "1, 2 or inf")?.unwrap_or(2.0);
    let norm = NormPair::from_exponents(m, n).map_err(|_| {
        let key = if e.0.contains_key("m") { "m" } else { "n" };
        invalid(key, format!("(m, n) = ({m}, {n}) is not a supported conjugate pair"))
    })?;

    let config = ExperimentConfig {
        experiment,
        algorithms,
        step,
        eta: e.get("eta", parse_f64, "a number")?.unwrap_or(1.0),
        rho1: e.get("rho1", parse_f64, "a number")?.unwrap_or(0.0),
        rho2: e.get("rho2", parse_f64, "a number")?.unwrap_or(0.0),
        norm,
        gamma: e.get("gamma", parse_f64, "a number")?.unwrap_or(experiment.default_gamma()),
        lambda: e.get("lambda", parse_f64, "a number")?.unwrap_or(0.0),
        n_samples,
        n_runs: e.get("runs", |s| s.parse().ok(), "a positive integer")?.unwrap_or(1),
        seed_base: e.get("seed", |s| s.parse().ok(), "a nonnegative integer")?.unwrap_or(0),
        output: e
            .get("output", |s| Some(PathBuf::from(s)), "a path")?
            .unwrap_or_else(|| PathBuf::from("out").join(experiment.name())),
        plot: e.get("plot", parse_bool, "true or false")?.unwrap_or(true),
        record_stride: e
            .get("stride", |s| s.parse().ok(), "a positive integer")?
            .unwrap_or((n_samples / 500).max(1)),
        init: match e.get("init", |s| Some(s.to_string()), "")?.as_deref() {
            None if experiment == ExperimentKind::Star => Init::Baird,
            None | Some("zero") => Init::Zero,
            Some("baird") => Init::Baird,
            Some(other) => return Err(invalid("init", format!("unknown init `{other}`"))),
        },
        bases: e
            .get("features", |s| parse_list(s, Basis::from_name), "a list of bases")?
            .unwrap_or_else(|| vec![Basis::Tabular, Basis::Inverted, Basis::Dependent]),
        episodes: e.get("episodes", |s| s.parse().ok(), "a positive integer")?.unwrap_or(15),
        max_steps: e.get("max_steps", |s| s.parse().ok(), "a positive integer")?.unwrap_or(200),
        grids: e
            .get("grids", |s| parse_list(s, |p| p.parse().ok()), "a list of grid sizes")?
            .unwrap_or_else(|| vec![2, 4, 8, 16, 32]),
        baseline: e.get("baseline", parse_bool, "true or false")?.unwrap_or(true),
        rollouts: e.get("rollouts", |s| s.parse().ok(), "a nonnegative integer")?.unwrap_or(20),
        rollout_steps: e.get("rollout_steps", |s| s.parse().ok(), "a positive integer")?.unwrap_or(1000),
        dim: e.get("dim", |s| s.parse().ok(), "a positive even integer")?.unwrap_or(10),
        coupling: e.get("coupling", parse_f64, "a number")?.unwrap_or(0.3),
    };
    validate(&config, &e)?;
    Ok(config)
}

fn validate(c: &ExperimentConfig, e: &Entries) -> Result<(), ConfigError> {
    let fail = |key: &str, message: &str| {
        Err(ConfigError::Invalid { line: e.line(key), message: message.to_string() })
    };
    if c.n_samples == 0 {
        return fail("samples", "samples must be at least 1");
    }
    if c.n_runs == 0 {
        return fail("runs", "runs must be at least 1");
    }
    if c.record_stride == 0 {
        return fail("stride", "stride must be at least 1");
    }
    if c.episodes == 0 || c.max_steps == 0 || c.rollout_steps == 0 {
        return fail("episodes", "episode counts and lengths must be positive");
    }
    if c.grids.iter().any(|g| *g < 2) {
        return fail("grids", "grid sizes must be at least 2");
    }
    if c.dim < 2 || !c.dim.is_multiple_of(2) || c.dim > 64 {
        return fail("dim", "dim must be even and between 2 and 64");
    }
    if !(c.coupling.is_finite() && c.coupling >= 0.0) {
        return fail("coupling", "coupling must be nonnegative");
    }
    if matches!(c.experiment, ExperimentKind::Synthetic | ExperimentKind::Prop1Check)
        && e.0.contains_key("gamma")
    {
        return fail("gamma", "synthetic systems have no discount");
    }
    for &a in &c.algorithms {
        if !c.experiment.allows(a) {
            return fail("algorithms", &format!("{} does not apply to {}", a.name(), c.experiment));
        }
        c.solver(a).validate().or_else(|err| fail("algorithms", &err.to_string()))?;
    }
    Ok(())
}

impl ExperimentConfig {
    /// Solver parameters for one algorithm of this experiment.
    pub fn solver(&self, algorithm: Algorithm) -> SolverConfig {
        SolverConfig {
            algorithm,
            step: self.step,
            eta: self.eta,
            rho1: self.rho1,
            rho2: self.rho2,
            norm: self.norm,
            gamma: self.gamma,
            lambda: self.lambda,
        }
    }

    pub fn seeds(&self) -> impl Iterator<Item = u64> + '_ {
        (0..self.n_runs as u64).map(move |k| self.seed_base + k)
    }
}

/// Text for `--help`: every key with its default.
pub fn keys_help() -> String {
    let mut s = String::from("config keys ([experiment] section):\n");
    for (k, v) in KEYS {
        s.push_str(&format!("  {k:<14} {v}\n"));
    }
    s
}
