//! Metrics CSV and the accuracy chart.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::metrics::MetricsLog;

pub const CSV_HEADER: [&str; 8] = [
    "round",
    "accuracy",
    "active",
    "flagged",
    "disconnected",
    "reconnect_attempts",
    "auth_denials",
    "selected_client",
];

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("cannot write {path}: {source}")]
    Write { path: String, source: std::io::Error },
    #[error("cannot read {path}: {source}")]
    Read { path: String, source: std::io::Error },
    #[error("bad metrics CSV {path}: {msg}")]
    Parse { path: String, msg: String },
    #[error("nothing to report: {0}")]
    Empty(&'static str),
}

/// Renders the log as CSV: one row per round (lists joined with `;`),
/// followed by the summary as `#` comment lines.
pub fn metrics_csv(log: &MetricsLog) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CSV_HEADER).expect("in-memory write");
    for r in &log.rounds {
        w.write_record([
            r.round.to_string(),
            format!("{:.6}", r.accuracy),
            r.active.to_string(),
            r.flagged.join(";"),
            r.disconnected.join(";"),
            r.reconnect_attempts.to_string(),
            r.auth_denials.to_string(),
            r.selected_client.clone().unwrap_or_default(),
        ])
        .expect("in-memory write");
    }
    let mut out = String::from_utf8(w.into_inner().expect("in-memory flush")).expect("CSV is UTF-8");
    let s = log.summary();
    let label = log.label.replace(['\n', '\r'], " ");
    let _ = writeln!(out, "# label: {label}");
    let _ = writeln!(out, "# avg_accuracy: {:.6}", s.avg_accuracy);
    let _ = writeln!(out, "# final_accuracy: {:.6}", s.final_accuracy);
    let _ = writeln!(out, "# total_disconnections: {}", s.total_disconnections);
    let _ = writeln!(out, "# total_auth_denials: {}", s.total_auth_denials);
    let _ = writeln!(out, "# false_positives: {}", s.false_positives);
    if let Some(e) = &log.error {
        let _ = writeln!(out, "# error: {}", e.replace(['\n', '\r'], " "));
    }
    out
}

pub fn emit_metrics(log: &MetricsLog, path: &Path) -> Result<(), ReportError> {
    if log.rounds.is_empty() {
        return Err(ReportError::Empty("log has no rounds"));
    }
    fs::write(path, metrics_csv(log)).map_err(|source| ReportError::Write { path: path.display().to_string(), source })
}

/// One line of the chart.
#[derive(Debug, Clone, PartialEq)]
pub struct Curve {
    pub label: String,
    pub points: Vec<(usize, f64)>,
}

impl Curve {
    pub fn from_log(log: &MetricsLog) -> Self {
        Self { label: log.label.clone(), points: log.rounds.iter().map(|r| (r.round, r.accuracy)).collect() }
    }
}

/// Reads back a CSV written by [`emit_metrics`]. The legend comes from the
/// `# label:` line, else the file stem.
pub fn read_curve(path: &Path) -> Result<Curve, ReportError> {
    let name = path.display().to_string();
    let text = fs::read_to_string(path).map_err(|source| ReportError::Read { path: name.clone(), source })?;
    let parse_err = |msg: String| ReportError::Parse { path: name.clone(), msg };
    let label = text
        .lines()
        .find_map(|l| l.strip_prefix("# label:"))
        .map(|l| l.trim().to_owned())
        .or_else(|| path.file_stem().map(|s| s.to_string_lossy().into_owned()))
        .unwrap_or_default();
    let mut reader = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(text.as_bytes());
    let headers = reader.headers().map_err(|e| parse_err(e.to_string()))?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name).ok_or_else(|| parse_err(format!("no {name} column")));
    let (round_col, acc_col) = (col("round")?, col("accuracy")?);
    let mut points = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| parse_err(e.to_string()))?;
        let field = |c: usize| rec.get(c).unwrap_or("").trim();
        let round = field(round_col).parse().map_err(|_| parse_err(format!("row {}: bad round", i + 1)))?;
        let acc = field(acc_col).parse().map_err(|_| parse_err(format!("row {}: bad accuracy", i + 1)))?;
        points.push((round, acc));
    }
    Ok(Curve { label, points })
}

const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"];
const WIDTH: f64 = 800.0;
const HEIGHT: f64 = 480.0;
const LEFT: f64 = 64.0;
const RIGHT: f64 = 200.0;
const TOP: f64 = 24.0;
const BOTTOM: f64 = 56.0;

fn escape(text: &str) -> String {
    let mut s = String::with_capacity(text.len());
    for c in text.chars() {
        match c {
            '&' => s.push_str("&amp;"),
            '<' => s.push_str("&lt;"),
            '>' => s.push_str("&gt;"),
            '"' => s.push_str("&quot;"),
            '\'' => s.push_str("&apos;"),
            c if c.is_control() => s.push(' '),
            c => s.push(c),
        }
    }
    s
}

/// Line chart of accuracy against round, y fixed to [0, 1].
pub fn render_svg(curves: &[Curve]) -> String {
    let max_round = curves.iter().flat_map(|c| c.points.iter().map(|p| p.0)).max().unwrap_or(0).max(1);
    let plot_w = WIDTH - LEFT - RIGHT;
    let plot_h = HEIGHT - TOP - BOTTOM;
    let x = |r: usize| LEFT + plot_w * r as f64 / max_round as f64;
    let y = |a: f64| TOP + plot_h * (1.0 - a.clamp(0.0, 1.0));

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    for i in 0..=10 {
        let a = i as f64 / 10.0;
        let _ = writeln!(
            s,
            r##"<line x1="{LEFT}" y1="{yy:.2}" x2="{x2:.2}" y2="{yy:.2}" stroke="#e0e0e0"/><text x="{tx:.2}" y="{ty:.2}" text-anchor="end">{a:.1}</text>"##,
            yy = y(a),
            x2 = LEFT + plot_w,
            tx = LEFT - 6.0,
            ty = y(a) + 4.0,
        );
    }
    let step = (max_round as f64 / 10.0).ceil().max(1.0) as usize;
    for r in (0..=max_round).step_by(step) {
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{r}</text>"#,
            x(r),
            TOP + plot_h + 18.0
        );
    }
    let _ = writeln!(
        s,
        r#"<rect x="{LEFT}" y="{TOP}" width="{plot_w}" height="{plot_h}" fill="none" stroke="black"/>"#
    );
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">round</text>"#,
        LEFT + plot_w / 2.0,
        HEIGHT - 16.0
    );
    let _ = writeln!(
        s,
        r#"<text x="16" y="{:.2}" text-anchor="middle" transform="rotate(-90 16 {:.2})">accuracy</text>"#,
        TOP + plot_h / 2.0,
        TOP + plot_h / 2.0
    );

    for (i, curve) in curves.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        match curve.points.as_slice() {
            [] => {}
            [(r, a)] => {
                let _ = writeln!(s, r#"<circle cx="{:.2}" cy="{:.2}" r="4" fill="{color}"/>"#, x(*r), y(*a));
            }
            points => {
                let coords: Vec<String> = points.iter().map(|(r, a)| format!("{:.2},{:.2}", x(*r), y(*a))).collect();
                let _ = writeln!(
                    s,
                    r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#,
                    coords.join(" ")
                );
            }
        }
        let ly = TOP + 16.0 + 20.0 * i as f64;
        let lx = WIDTH - RIGHT + 16.0;
        let _ = writeln!(
            s,
            r#"<line x1="{lx}" y1="{ly}" x2="{:.2}" y2="{ly}" stroke="{color}" stroke-width="3"/><text x="{:.2}" y="{:.2}">{}</text>"#,
            lx + 24.0,
            lx + 30.0,
            ly + 4.0,
            escape(&curve.label)
        );
    }
    s.push_str("</svg>\n");
    s
}

pub fn emit_plot(logs: &[MetricsLog], path: &Path) -> Result<(), ReportError> {
    let curves: Vec<Curve> = logs.iter().map(Curve::from_log).collect();
    write_plot(&curves, path)
}

pub fn write_plot(curves: &[Curve], path: &Path) -> Result<(), ReportError> {
    if curves.is_empty() {
        return Err(ReportError::Empty("no curves to plot"));
    }
    fs::write(path, render_svg(curves)).map_err(|source| ReportError::Write { path: path.display().to_string(), source })
}
