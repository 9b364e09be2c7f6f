//! Minimal SVG line plots of result and diagnostic series.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{HarnessError, Result};
use crate::experiment::sliding_mean;
use crate::io::{write_text, DiagnosticRow, ResultRow};

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 360.0;
const MARGIN: f64 = 48.0;
const COLORS: [&str; 9] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#17becf"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlotKind {
    Width,
    Coverage,
    Scaling,
    Components,
    Ratio,
}

impl PlotKind {
    pub const ALL: [PlotKind; 5] = [PlotKind::Width, PlotKind::Coverage, PlotKind::Scaling, PlotKind::Components, PlotKind::Ratio];

    pub fn file_name(self) -> &'static str {
        match self {
            PlotKind::Width => "width.svg",
            PlotKind::Coverage => "coverage.svg",
            PlotKind::Scaling => "scaling.svg",
            PlotKind::Components => "components.svg",
            PlotKind::Ratio => "ratio.svg",
        }
    }
}

pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

/// Renders `series` as polylines on shared axes; non-finite points are
/// dropped.
pub fn render_svg(title: &str, series: &[Series]) -> String {
    let finite: Vec<(f64, f64)> =
        series.iter().flat_map(|s| s.points.iter().copied()).filter(|(x, y)| x.is_finite() && y.is_finite()).collect();
    let (mut x0, mut x1, mut y0, mut y1) = finite.iter().fold(
        (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY),
        |(a, b, c, d), &(x, y)| (a.min(x), b.max(x), c.min(y), d.max(y)),
    );
    if finite.is_empty() {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    if x1 <= x0 {
        x1 = x0 + 1.0;
    }
    if y1 <= y0 {
        y1 = y0 + 1.0;
    }
    let sx = |x: f64| MARGIN + (x - x0) / (x1 - x0) * (WIDTH - 2.0 * MARGIN);
    let sy = |y: f64| HEIGHT - MARGIN - (y - y0) / (y1 - y0) * (HEIGHT - 2.0 * MARGIN);

    let mut svg = String::new();
    let _ = writeln!(svg, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#);
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(svg, r#"<text x="{}" y="20" font-size="14" text-anchor="middle">{}</text>"#, WIDTH / 2.0, escape(title));
    let _ = writeln!(
        svg,
        r#"<polyline points="{m},{t} {m},{b} {r},{b}" fill="none" stroke="black"/>"#,
        m = MARGIN,
        t = MARGIN,
        b = HEIGHT - MARGIN,
        r = WIDTH - MARGIN
    );
    for (v, anchor, x, y) in [
        (y0, "end", MARGIN - 4.0, HEIGHT - MARGIN),
        (y1, "end", MARGIN - 4.0, MARGIN + 4.0),
        (x0, "start", MARGIN, HEIGHT - MARGIN + 16.0),
        (x1, "end", WIDTH - MARGIN, HEIGHT - MARGIN + 16.0),
    ] {
        let _ = writeln!(svg, r#"<text x="{x}" y="{y}" font-size="10" text-anchor="{anchor}">{}</text>"#, format_tick(v));
    }
    for (i, s) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let pts: Vec<String> = s
            .points
            .iter()
            .filter(|(x, y)| x.is_finite() && y.is_finite())
            .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
            .collect();
        let _ = writeln!(svg, r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.2"/>"#, pts.join(" "));
        let ly = MARGIN + 14.0 * i as f64;
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{ly}" font-size="11" fill="{color}">{}</text>"#,
            WIDTH - MARGIN - 80.0,
            escape(&s.label)
        );
    }
    svg.push_str("</svg>\n");
    svg
}

fn format_tick(v: f64) -> String {
    if v.abs() >= 1000.0 || v == v.trunc() {
        format!("{v:.0}")
    } else {
        format!("{v:.3}")
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn by_method(rows: &[ResultRow]) -> BTreeMap<&str, Vec<&ResultRow>> {
    let mut map: BTreeMap<&str, Vec<&ResultRow>> = BTreeMap::new();
    for r in rows {
        map.entry(r.method.as_str()).or_default().push(r);
    }
    map
}

fn plot_series(kind: PlotKind, rows: &[ResultRow], diag: &[DiagnosticRow], window: usize) -> Vec<Series> {
    let methods = by_method(rows);
    match kind {
        PlotKind::Width => methods
            .iter()
            .map(|(m, rs)| Series { label: m.to_string(), points: rs.iter().map(|r| (r.t as f64, r.width)).collect() })
            .collect(),
        PlotKind::Coverage => methods
            .iter()
            .map(|(m, rs)| {
                let flags: Vec<f64> = rs.iter().map(|r| if r.covered { 1.0 } else { 0.0 }).collect();
                let w = window.min(flags.len()).max(1);
                let cov = sliding_mean(&flags, w);
                Series { label: m.to_string(), points: rs[w - 1..].iter().zip(cov).map(|(r, c)| (r.t as f64, c)).collect() }
            })
            .collect(),
        PlotKind::Scaling => {
            let sr = methods.get("SR").cloned().unwrap_or_default();
            vec![
                Series { label: "a".into(), points: sr.iter().map(|r| (r.t as f64, r.a)).collect() },
                Series { label: "b".into(), points: sr.iter().map(|r| (r.t as f64, r.b)).collect() },
            ]
        }
        PlotKind::Components => vec![
            Series { label: "mean dR1".into(), points: diag.iter().map(|d| (d.t as f64, d.mean_dr1)).collect() },
            Series { label: "mean R2".into(), points: diag.iter().map(|d| (d.t as f64, d.mean_r2)).collect() },
        ],
        PlotKind::Ratio => vec![
            Series { label: "R / dR1".into(), points: diag.iter().map(|d| (d.t as f64, d.r / d.delta_r1)).collect() },
            Series { label: "R / R2".into(), points: diag.iter().map(|d| (d.t as f64, d.r / d.r2)).collect() },
        ],
    }
}

fn title(kind: PlotKind) -> &'static str {
    match kind {
        PlotKind::Width => "Interval width",
        PlotKind::Coverage => "Sliding-window coverage",
        PlotKind::Scaling => "SR scaling coefficients",
        PlotKind::Components => "Window-mean residual components",
        PlotKind::Ratio => "Residual ratios",
    }
}

/// Writes one SVG per plot kind into `dir`; diagnostic plots are skipped
/// without diagnostics. Returns the written paths.
pub fn emit_report(dir: &Path, rows: &[ResultRow], diag: &[DiagnosticRow], window: usize) -> Result<Vec<PathBuf>> {
    if rows.is_empty() {
        return Err(HarnessError::Config("no records to plot".into()));
    }
    let mut written = Vec::new();
    for kind in PlotKind::ALL {
        let needs_diag = matches!(kind, PlotKind::Components | PlotKind::Ratio);
        if needs_diag && diag.is_empty() {
            continue;
        }
        if kind == PlotKind::Scaling && !rows.iter().any(|r| r.method == "SR") {
            continue;
        }
        let path = dir.join(kind.file_name());
        write_text(&path, &render_svg(title(kind), &plot_series(kind, rows, diag, window)))?;
        written.push(path);
    }
    Ok(written)
}
