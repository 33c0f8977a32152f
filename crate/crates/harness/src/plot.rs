//! Self-contained SVG line charts.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rotd_core::oracle::DiagnosticsRecord;

use crate::experiment::RunResult;
use crate::output::{group_by_label, mean_sd, TraceRow};

#[derive(Debug, thiserror::Error)]
pub enum PlotError {
    #[error("unknown metric `{0}`; expected one of {cols}", cols = DiagnosticsRecord::COLUMNS[1..].join(", "))]
    UnknownMetric(String),
    #[error("nothing to plot: every series is empty{note}", note = if *.0 { " (log scale drops values <= 0)" } else { "" })]
    EmptySeries(bool),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

/// One labelled curve of `(iteration, value)` points.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

fn check_metric(metric: &str) -> Result<(), PlotError> {
    if metric == "iteration" || DiagnosticsRecord::COLUMNS.iter().all(|c| *c != metric) {
        return Err(PlotError::UnknownMetric(metric.to_string()));
    }
    Ok(())
}

/// Mean of `metric` across the non-diverged seeds of each label.
pub fn mean_series(results: &[RunResult], metric: &str) -> Result<Vec<Series>, PlotError> {
    check_metric(metric)?;
    let mut out = Vec::new();
    for (label, runs) in group_by_label(results) {
        let kept: Vec<&RunResult> = runs.into_iter().filter(|r| r.diverged.is_none()).collect();
        let points = mean_points(kept.iter().flat_map(|r| r.records.iter()), metric);
        out.push(Series { label: label.to_string(), points });
    }
    Ok(out)
}

/// One curve per metric, for the runs carrying `label`.
pub fn metric_series(results: &[RunResult], label: &str, metrics: &[&str]) -> Result<Vec<Series>, PlotError> {
    let runs: Vec<&RunResult> = results.iter().filter(|r| r.label == label).collect();
    metrics
        .iter()
        .map(|m| {
            check_metric(m)?;
            let points = mean_points(runs.iter().flat_map(|r| r.records.iter()), m);
            Ok(Series { label: format!("{label} {m}"), points })
        })
        .collect()
}

/// One curve per file, averaging `metric` over the runs in each trace.
pub fn trace_series(traces: &[(String, Vec<TraceRow>)], metric: &str) -> Result<Vec<Series>, PlotError> {
    check_metric(metric)?;
    Ok(traces
        .iter()
        .map(|(label, rows)| Series { label: label.clone(), points: mean_points(rows.iter().map(|r| &r.record), metric) })
        .collect())
}

fn mean_points<'a>(records: impl Iterator<Item = &'a DiagnosticsRecord>, metric: &str) -> Vec<(f64, f64)> {
    let mut by_iter: std::collections::BTreeMap<usize, Vec<f64>> = Default::default();
    for r in records {
        by_iter.entry(r.iteration).or_default().push(r.metric(metric).unwrap_or(f64::NAN));
    }
    by_iter.into_iter().map(|(it, v)| (it as f64, mean_sd(&v).0)).collect()
}

const PALETTE: [&str; 8] =
    ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"];
const WIDTH: f64 = 760.0;
const HEIGHT: f64 = 460.0;
const LEFT: f64 = 80.0;
const RIGHT: f64 = 200.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 60.0;

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn tick_label(v: f64) -> String {
    if v == 0.0 {
        "0".into()
    } else if v.abs() >= 1e4 || v.abs() < 1e-2 {
        format!("{v:.1e}")
    } else {
        format!("{}", (v * 1000.0).round() / 1000.0)
    }
}

/// Renders the series as an SVG document.
pub fn render_svg(series: &[Series], title: &str, y_label: &str, log: bool) -> Result<String, PlotError> {
    let keep = |y: f64| y.is_finite() && (!log || y > 0.0);
    let curves: Vec<(&str, Vec<(f64, f64)>)> = series
        .iter()
        .map(|s| {
            let pts = s.points.iter().copied().filter(|(x, y)| x.is_finite() && keep(*y));
            (s.label.as_str(), pts.map(|(x, y)| (x, if log { y.log10() } else { y })).collect())
        })
        .collect();
    let all: Vec<(f64, f64)> = curves.iter().flat_map(|(_, p)| p.iter().copied()).collect();
    if all.is_empty() {
        return Err(PlotError::EmptySeries(log));
    }
    let (mut x0, mut x1) = all.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| (a.min(p.0), b.max(p.0)));
    let (mut y0, mut y1) = all.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| (a.min(p.1), b.max(p.1)));
    if x1 <= x0 {
        x0 -= 0.5;
        x1 += 0.5;
    }
    if y1 <= y0 {
        let pad = if y0 == 0.0 { 1.0 } else { 0.1 * y0.abs() };
        y0 -= pad;
        y1 += pad;
    } else {
        let pad = 0.05 * (y1 - y0);
        y0 -= pad;
        y1 += pad;
    }
    let pw = WIDTH - LEFT - RIGHT;
    let ph = HEIGHT - TOP - BOTTOM;
    let sx = |x: f64| LEFT + (x - x0) / (x1 - x0) * pw;
    let sy = |y: f64| TOP + (y1 - y) / (y1 - y0) * ph;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(svg, r#"<text x="{}" y="22" text-anchor="middle" font-size="15">{}</text>"#, LEFT + pw / 2.0, escape(title));
    let _ = writeln!(svg, r##"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="#444"/>"##);

    for k in 0..=5 {
        let fx = x0 + (x1 - x0) * k as f64 / 5.0;
        let px = sx(fx);
        let _ = writeln!(svg, r##"<line x1="{px:.2}" y1="{TOP}" x2="{px:.2}" y2="{}" stroke="#eee"/>"##, TOP + ph);
        let _ = writeln!(svg, r#"<text x="{px:.2}" y="{}" text-anchor="middle">{}</text>"#, TOP + ph + 18.0, tick_label(fx.round()));
        let fy = y0 + (y1 - y0) * k as f64 / 5.0;
        let py = sy(fy);
        let text = if log { format!("1e{:.1}", fy) } else { tick_label(fy) };
        let _ = writeln!(svg, r##"<line x1="{LEFT}" y1="{py:.2}" x2="{}" y2="{py:.2}" stroke="#eee"/>"##, LEFT + pw);
        let _ = writeln!(svg, r#"<text x="{}" y="{:.2}" text-anchor="end">{text}</text>"#, LEFT - 6.0, py + 4.0);
    }
    let _ = writeln!(svg, r#"<text x="{}" y="{}" text-anchor="middle">iteration</text>"#, LEFT + pw / 2.0, HEIGHT - 15.0);
    let y_text = if log { format!("{y_label} (log10)") } else { y_label.to_string() };
    let _ = writeln!(
        svg,
        r#"<text x="18" y="{}" text-anchor="middle" transform="rotate(-90 18 {})">{}</text>"#,
        TOP + ph / 2.0,
        TOP + ph / 2.0,
        escape(&y_text)
    );

    for (i, (label, pts)) in curves.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        if !pts.is_empty() {
            let path: Vec<String> = pts.iter().map(|(x, y)| format!("{:.2},{:.2}", sx(*x), sy(*y))).collect();
            let _ = writeln!(
                svg,
                r#"<polyline fill="none" stroke="{color}" stroke-width="1.8" points="{}"/>"#,
                path.join(" ")
            );
        }
        let ly = TOP + 16.0 + 20.0 * i as f64;
        let lx = WIDTH - RIGHT + 14.0;
        let _ = writeln!(svg, r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="3"/>"#, lx + 24.0);
        let _ = writeln!(svg, r#"<text x="{}" y="{}">{}</text>"#, lx + 30.0, ly + 4.0, escape(label));
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

/// Writes a chart of `metric` for the series to `path`.
pub fn emit_plot(series: &[Series], metric: &str, log: bool, path: &Path) -> Result<(), PlotError> {
    check_metric(metric)?;
    let svg = render_svg(series, metric, metric, log)?;
    write_svg(&svg, path)
}

pub fn write_svg(svg: &str, path: &Path) -> Result<(), PlotError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|source| PlotError::Io { path: dir.to_path_buf(), source })?;
    }
    std::fs::write(path, svg).map_err(|source| PlotError::Io { path: path.to_path_buf(), source })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(label: &str, pts: &[(f64, f64)]) -> Series {
        Series { label: label.into(), points: pts.to_vec() }
    }

    #[test]
    fn one_polyline_per_series() {
        let svg = render_svg(&[s("a", &[(0.0, 1.0), (1.0, 2.0)]), s("b<c", &[(0.0, 3.0)])], "t", "y", false).unwrap();
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert!(svg.contains("b&lt;c"));
        assert!(svg.starts_with("<svg"));
    }

    #[test]
    fn empty_is_an_error() {
        assert!(matches!(render_svg(&[s("a", &[])], "t", "y", false), Err(PlotError::EmptySeries(false))));
        assert!(matches!(render_svg(&[s("a", &[(0.0, -1.0)])], "t", "y", true), Err(PlotError::EmptySeries(true))));
    }

    #[test]
    fn unknown_metric() {
        assert!(matches!(check_metric("loss"), Err(PlotError::UnknownMetric(_))));
        assert!(check_metric("iteration").is_err());
        assert!(check_metric("dual_value").is_ok());
    }
}
