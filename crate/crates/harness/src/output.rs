//! CSV traces, summaries and sample batches.
//!
//! Floats are written as `{:.16e}` (17 significant digits), so every value
//! parses back to the same bits. Wall-clock durations never reach a CSV.

use std::collections::BTreeMap;
use std::fs::File;
use std::path::{Path, PathBuf};

use nalgebra::DVector;
use rotd_core::environments::{EpisodeBatch, Transition};
use rotd_core::features::FeatureError;
use rotd_core::oracle::DiagnosticsRecord;

use crate::experiment::RunResult;

#[derive(Debug, thiserror::Error)]
pub enum OutputError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
    #[error("{path}, line {line}: {message}")]
    Parse { path: PathBuf, line: usize, message: String },
    #[error(transparent)]
    Features(#[from] FeatureError),
}

pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn writer(path: &Path) -> Result<csv::Writer<File>, OutputError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)
            .map_err(|source| OutputError::Io { path: dir.to_path_buf(), source })?;
    }
    let file = File::create(path).map_err(|source| OutputError::Io { path: path.to_path_buf(), source })?;
    Ok(csv::WriterBuilder::new().flexible(false).from_writer(file))
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> OutputError + '_ {
    move |source| OutputError::Csv { path: path.to_path_buf(), source }
}

fn record_fields(r: &DiagnosticsRecord) -> [String; 8] {
    [
        r.iteration.to_string(),
        fmt_f64(r.mspbe),
        fmt_f64(r.l2_residual),
        fmt_f64(r.dual_value),
        fmt_f64(r.delta),
        r.theta_nnz.to_string(),
        r.w_nnz.to_string(),
        fmt_f64(r.objective),
    ]
}

/// One row per record per run, with `run` (index in `results`) and `seed`
/// prepended to the record columns.
pub fn emit_csv(results: &[RunResult], path: &Path) -> Result<(), OutputError> {
    let mut w = writer(path)?;
    let err = csv_err(path);
    let header: Vec<&str> = ["run", "seed"].into_iter().chain(DiagnosticsRecord::COLUMNS).collect();
    w.write_record(&header).map_err(&err)?;
    for (run, res) in results.iter().enumerate() {
        for rec in &res.records {
            let mut row = vec![run.to_string(), res.seed.to_string()];
            row.extend(record_fields(rec));
            w.write_record(&row).map_err(&err)?;
        }
    }
    w.flush().map_err(|source| OutputError::Io { path: path.to_path_buf(), source })
}

/// A parsed trace row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub run: usize,
    pub seed: u64,
    pub record: DiagnosticsRecord,
}

fn parse_field<T: std::str::FromStr>(
    path: &Path,
    line: usize,
    row: &csv::StringRecord,
    i: usize,
) -> Result<T, OutputError> {
    let raw = row.get(i).unwrap_or("");
    raw.parse().map_err(|_| OutputError::Parse {
        path: path.to_path_buf(),
        line,
        message: format!("cannot parse `{raw}` in column {}", i + 1),
    })
}

pub fn read_trace_csv(path: &Path) -> Result<Vec<TraceRow>, OutputError> {
    let err = csv_err(path);
    let mut rdr = csv::Reader::from_path(path).map_err(&err)?;
    let header = rdr.headers().map_err(&err)?.clone();
    let expected: Vec<&str> = ["run", "seed"].into_iter().chain(DiagnosticsRecord::COLUMNS).collect();
    if header.iter().collect::<Vec<_>>() != expected {
        return Err(OutputError::Parse {
            path: path.to_path_buf(),
            line: 1,
            message: format!("expected header {}", expected.join(",")),
        });
    }
    let mut out = Vec::new();
    for (k, row) in rdr.records().enumerate() {
        let row = row.map_err(&err)?;
        let line = k + 2;
        let f = |i| parse_field::<f64>(path, line, &row, i);
        out.push(TraceRow {
            run: parse_field(path, line, &row, 0)?,
            seed: parse_field(path, line, &row, 1)?,
            record: DiagnosticsRecord {
                iteration: parse_field(path, line, &row, 2)?,
                mspbe: f(3)?,
                l2_residual: f(4)?,
                dual_value: f(5)?,
                delta: f(6)?,
                theta_nnz: parse_field(path, line, &row, 7)?,
                w_nnz: parse_field(path, line, &row, 8)?,
                objective: f(9)?,
            },
        });
    }
    Ok(out)
}

/// Results grouped by label, in order of first appearance.
pub fn group_by_label(results: &[RunResult]) -> Vec<(&str, Vec<&RunResult>)> {
    let mut order: Vec<(&str, Vec<&RunResult>)> = Vec::new();
    for r in results {
        match order.iter_mut().find(|(l, _)| *l == r.label) {
            Some((_, v)) => v.push(r),
            None => order.push((&r.label, vec![r])),
        }
    }
    order
}

/// Mean and sample standard deviation (NaN with fewer than two values).
pub fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, f64::NAN);
    }
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    (mean, (ss / (n - 1.0)).sqrt())
}

const SUMMARY_METRICS: [&str; 7] =
    ["mspbe", "l2_residual", "dual_value", "delta", "theta_nnz", "w_nnz", "objective"];

/// Per-label, per-iteration mean and sample sd across seeds. Diverged runs are
/// left out of the statistics and counted in the `diverged` column.
pub fn emit_summary(results: &[RunResult], path: &Path) -> Result<(), OutputError> {
    let mut w = writer(path)?;
    let err = csv_err(path);
    let mut header = vec!["label".to_string(), "iteration".into(), "runs".into(), "diverged".into()];
    for m in SUMMARY_METRICS {
        header.push(format!("mean_{m}"));
        header.push(format!("sd_{m}"));
    }
    w.write_record(&header).map_err(&err)?;
    for (label, runs) in group_by_label(results) {
        let kept: Vec<&RunResult> = runs.iter().copied().filter(|r| r.diverged.is_none()).collect();
        let n_div = runs.len() - kept.len();
        let mut by_iter: BTreeMap<usize, Vec<&DiagnosticsRecord>> = BTreeMap::new();
        for r in &kept {
            for rec in &r.records {
                by_iter.entry(rec.iteration).or_default().push(rec);
            }
        }
        if by_iter.is_empty() {
            let mut row = vec![label.to_string(), String::new(), "0".into(), n_div.to_string()];
            row.extend(std::iter::repeat_n(fmt_f64(f64::NAN), 2 * SUMMARY_METRICS.len()));
            w.write_record(&row).map_err(&err)?;
        }
        for (it, recs) in by_iter {
            let mut row = vec![label.to_string(), it.to_string(), recs.len().to_string(), n_div.to_string()];
            for m in SUMMARY_METRICS {
                let vals: Vec<f64> = recs.iter().map(|r| r.metric(m).expect("known metric")).collect();
                let (mean, sd) = mean_sd(&vals);
                row.push(fmt_f64(mean));
                row.push(fmt_f64(sd));
            }
            w.write_record(&row).map_err(&err)?;
        }
    }
    w.flush().map_err(|source| OutputError::Io { path: path.to_path_buf(), source })
}

/// One row per run: final record, divergence point, and the reference
/// optimum with its gap when one exists.
pub fn emit_runs(results: &[RunResult], path: &Path) -> Result<(), OutputError> {
    let mut w = writer(path)?;
    let err = csv_err(path);
    let mut header = vec!["run", "label", "seed", "diverged_at"];
    header.extend(DiagnosticsRecord::COLUMNS);
    header.extend(["reference_objective", "reference_certified", "gap"]);
    w.write_record(&header).map_err(&err)?;
    for (run, r) in results.iter().enumerate() {
        let mut row = vec![
            run.to_string(),
            r.label.clone(),
            r.seed.to_string(),
            r.diverged.map_or(String::new(), |t| t.to_string()),
        ];
        match r.last() {
            Some(rec) => row.extend(record_fields(rec)),
            None => row.extend(std::iter::repeat_n(String::new(), 8)),
        }
        match (&r.reference, r.last()) {
            (Some(opt), Some(rec)) => {
                row.push(fmt_f64(opt.objective));
                row.push(opt.certified.to_string());
                row.push(fmt_f64(rec.objective - opt.objective));
            }
            _ => row.extend([String::new(), String::new(), String::new()]),
        }
        w.write_record(&row).map_err(&err)?;
    }
    w.flush().map_err(|source| OutputError::Io { path: path.to_path_buf(), source })
}

/// Writes raw transitions: `episode, step, s0.., action, reward, next0..,
/// terminal`. Features are not stored; [`read_batch_csv`] recomputes them.
pub fn write_batch_csv(batch: &EpisodeBatch, path: &Path) -> Result<(), OutputError> {
    let mut w = writer(path)?;
    let err = csv_err(path);
    let k = batch.transitions.first().map_or(0, |t| t.state.len());
    let mut header = vec!["episode".to_string(), "step".into()];
    header.extend((0..k).map(|i| format!("s{i}")));
    header.extend(["action".to_string(), "reward".into()]);
    header.extend((0..k).map(|i| format!("next_s{i}")));
    header.push("terminal".into());
    w.write_record(&header).map_err(&err)?;
    for t in &batch.transitions {
        let mut row = vec![t.episode.to_string(), t.step.to_string()];
        row.extend(t.state.iter().map(|v| fmt_f64(*v)));
        row.push(t.action.map_or(String::new(), |a| a.to_string()));
        row.push(fmt_f64(t.reward));
        row.extend(t.next_state.iter().map(|v| fmt_f64(*v)));
        row.push(u8::from(t.terminal).to_string());
        w.write_record(&row).map_err(&err)?;
    }
    w.flush().map_err(|source| OutputError::Io { path: path.to_path_buf(), source })
}

/// Reads a batch written by [`write_batch_csv`], featurising each state
/// coordinate vector with `featurize`.
pub fn read_batch_csv<F>(path: &Path, seed: u64, dim: usize, featurize: F) -> Result<EpisodeBatch, OutputError>
where
    F: FnMut(&[f64]) -> Result<DVector<f64>, FeatureError>,
{
    let err = csv_err(path);
    let mut rdr = csv::Reader::from_path(path).map_err(&err)?;
    let width = rdr.headers().map_err(&err)?.len();
    if width < 6 || (width - 5) % 2 != 0 {
        return Err(OutputError::Parse { path: path.to_path_buf(), line: 1, message: "malformed batch header".into() });
    }
    let k = (width - 5) / 2;
    let mut transitions = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let row = row.map_err(&err)?;
        let line = i + 2;
        let coords = |from: usize| -> Result<Vec<f64>, OutputError> {
            (from..from + k).map(|c| parse_field(path, line, &row, c)).collect()
        };
        let action = match row.get(2 + k).unwrap_or("") {
            "" => None,
            _ => Some(parse_field(path, line, &row, 2 + k)?),
        };
        transitions.push(Transition {
            episode: parse_field(path, line, &row, 0)?,
            step: parse_field(path, line, &row, 1)?,
            state: coords(2)?,
            action,
            reward: parse_field(path, line, &row, 3 + k)?,
            next_state: coords(4 + k)?,
            terminal: parse_field::<u8>(path, line, &row, 4 + 2 * k)? == 1,
        });
    }
    Ok(EpisodeBatch::from_transitions(transitions, seed, dim, featurize)?)
}
