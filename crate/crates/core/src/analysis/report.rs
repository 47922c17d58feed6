//! Deterministic table and SVG output for decision, noise and frontier
//! analyses.

use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::analysis::frontier::{pareto_frontier, FrontierPoint};
use crate::analysis::noise::NoiseSpreadPoint;
use crate::decision::DecisionReport;
use crate::error::{Error, Result};
use crate::ingest::render_f64;
use crate::tables::write_decisions;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Table,
    VectorPlot,
}

/// Everything to emit for one (task, metric) pair.
#[derive(Debug, Clone, Default)]
pub struct ReportSet {
    pub task: String,
    pub metric: String,
    pub decisions: Vec<DecisionReport>,
    pub noise: Vec<NoiseSpreadPoint>,
    pub frontier: Vec<FrontierPoint>,
}

impl ReportSet {
    fn file_name(&self, analysis: &str, ext: &str) -> String {
        let clean = |s: &str| -> String {
            s.chars()
                .map(|c| if c.is_ascii_alphanumeric() || c == '_' || c == '.' { c } else { '_' })
                .collect()
        };
        format!("{analysis}-{}-{}.{ext}", clean(&self.task), clean(&self.metric))
    }
}

/// Frontier inputs from decision reports, labelled by method.
pub fn frontier_points(reports: &[DecisionReport]) -> Vec<FrontierPoint> {
    reports
        .iter()
        .map(|r| FrontierPoint {
            method: r.method.to_string(),
            flops: r.budget.flops,
            decision_accuracy: r.decision_accuracy,
            std: r.seed_stats.as_ref().map_or(0.0, |s| s.std),
        })
        .collect()
}

pub fn write_noise_table<W: Write>(writer: W, points: &[NoiseSpreadPoint]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let io = |e: csv::Error| Error::Io(e.into());
    w.write_record(["task", "metric", "size", "noise", "spread", "decision_accuracy"])
        .map_err(io)?;
    for p in points {
        w.write_record([
            p.task.as_str(),
            p.metric.as_str(),
            p.size_label.as_str(),
            &render_f64(p.noise),
            &render_f64(p.spread),
            &p.decision_accuracy.map(render_f64).unwrap_or_default(),
        ])
        .map_err(io)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_frontier_table<W: Write>(writer: W, points: &[FrontierPoint]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let io = |e: csv::Error| Error::Io(e.into());
    w.write_record(["method", "flops", "decision_accuracy", "std"]).map_err(io)?;
    for p in points {
        w.write_record([
            p.method.as_str(),
            &render_f64(p.flops),
            &render_f64(p.decision_accuracy),
            &render_f64(p.std),
        ])
        .map_err(io)?;
    }
    w.flush()?;
    Ok(())
}

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const MARGIN: f64 = 60.0;

struct Axis {
    lo: f64,
    hi: f64,
}

impl Axis {
    fn over(values: impl Iterator<Item = f64>) -> Axis {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for v in values.filter(|v| v.is_finite()) {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        if !lo.is_finite() {
            return Axis { lo: 0.0, hi: 1.0 };
        }
        let pad = if hi > lo { 0.05 * (hi - lo) } else { 0.5 };
        Axis {
            lo: lo - pad,
            hi: hi + pad,
        }
    }

    fn frac(&self, v: f64) -> f64 {
        (v - self.lo) / (self.hi - self.lo)
    }
}

fn px(x: &Axis, v: f64) -> f64 {
    MARGIN + x.frac(v) * (WIDTH - 2.0 * MARGIN)
}

fn py(y: &Axis, v: f64) -> f64 {
    HEIGHT - MARGIN - y.frac(v) * (HEIGHT - 2.0 * MARGIN)
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn svg_frame(title: &str, xlabel: &str, ylabel: &str, x: &Axis, y: &Axis) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    let _ = writeln!(s, r#"<title>{}</title>"#, escape(title));
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let (x0, x1, y0, y1) = (MARGIN, WIDTH - MARGIN, HEIGHT - MARGIN, MARGIN);
    let _ = writeln!(
        s,
        r#"<path class="axes" d="M{x0} {y1} L{x0} {y0} L{x1} {y0}" fill="none" stroke="black"/>"#
    );
    for i in 0..=4 {
        let t = i as f64 / 4.0;
        let xv = x.lo + t * (x.hi - x.lo);
        let yv = y.lo + t * (y.hi - y.lo);
        let _ = writeln!(
            s,
            r#"<text class="tick" x="{:.2}" y="{:.2}" font-size="10" text-anchor="middle">{:.3}</text>"#,
            px(x, xv),
            y0 + 14.0,
            xv
        );
        let _ = writeln!(
            s,
            r#"<text class="tick" x="{:.2}" y="{:.2}" font-size="10" text-anchor="end">{:.3}</text>"#,
            x0 - 4.0,
            py(y, yv) + 3.0,
            yv
        );
    }
    let _ = writeln!(
        s,
        r#"<text class="label" x="{:.2}" y="{:.2}" font-size="12" text-anchor="middle">{}</text>"#,
        WIDTH / 2.0,
        HEIGHT - 15.0,
        escape(xlabel)
    );
    let _ = writeln!(
        s,
        r#"<text class="label" x="15" y="{:.2}" font-size="12" text-anchor="middle" transform="rotate(-90 15 {:.2})">{}</text>"#,
        HEIGHT / 2.0,
        HEIGHT / 2.0,
        escape(ylabel)
    );
    let _ = writeln!(
        s,
        r#"<text class="title" x="{:.2}" y="20" font-size="14" text-anchor="middle">{}</text>"#,
        WIDTH / 2.0,
        escape(title)
    );
    s
}

/// Decision accuracy against log10 compute: one marker per method and a
/// step line through the frontier.
pub fn frontier_svg(title: &str, points: &[FrontierPoint]) -> String {
    let frontier = pareto_frontier(points);
    let lx = |p: &FrontierPoint| p.flops.log10();
    let x = Axis::over(points.iter().map(lx));
    let y = Axis::over(points.iter().map(|p| p.decision_accuracy));
    let mut s = svg_frame(title, "log10 compute (FLOPs)", "decision accuracy", &x, &y);
    for p in points {
        let _ = writeln!(
            s,
            r#"<circle class="marker" cx="{:.2}" cy="{:.2}" r="3.5" fill="steelblue"><title>{}</title></circle>"#,
            px(&x, lx(p)),
            py(&y, p.decision_accuracy),
            escape(&p.method)
        );
    }
    if !frontier.is_empty() {
        let mut d = String::new();
        for (i, p) in frontier.iter().enumerate() {
            let (cx, cy) = (px(&x, lx(p)), py(&y, p.decision_accuracy));
            if i == 0 {
                let _ = write!(d, "M{cx:.2} {cy:.2}");
            } else {
                let _ = write!(d, " H{cx:.2} V{cy:.2}");
            }
        }
        let _ = writeln!(
            s,
            r#"<path class="frontier" d="{d}" fill="none" stroke="firebrick" stroke-width="1.5"/>"#
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Spread against noise, one marker per size.
pub fn noise_svg(title: &str, points: &[NoiseSpreadPoint]) -> String {
    let x = Axis::over(points.iter().map(|p| p.noise));
    let y = Axis::over(points.iter().map(|p| p.spread));
    let mut s = svg_frame(title, "noise (seed std)", "spread (recipe std)", &x, &y);
    for p in points {
        let _ = writeln!(
            s,
            r#"<circle class="marker" cx="{:.2}" cy="{:.2}" r="3.5" fill="seagreen"><title>{}</title></circle>"#,
            px(&x, p.noise),
            py(&y, p.spread),
            escape(&p.size_label)
        );
    }
    s.push_str("</svg>\n");
    s
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| {
        Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
    })
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", dir.display()))))
}

/// Write only the frontier outputs of a report set.
pub fn emit_frontier(set: &ReportSet, format: ReportFormat, dir: &Path) -> Result<PathBuf> {
    ensure_dir(dir)?;
    match format {
        ReportFormat::Table => {
            let p = dir.join(set.file_name("frontier", "csv"));
            write_frontier_table(create(&p)?, &pareto_frontier(&set.frontier))?;
            Ok(p)
        }
        ReportFormat::VectorPlot => {
            let p = dir.join(set.file_name("frontier", "svg"));
            let title = format!("{} / {}", set.task, set.metric);
            create(&p)?.write_all(frontier_svg(&title, &set.frontier).as_bytes())?;
            Ok(p)
        }
    }
}

/// Write only the noise/spread outputs of a report set.
pub fn emit_noise(set: &ReportSet, format: ReportFormat, dir: &Path) -> Result<PathBuf> {
    ensure_dir(dir)?;
    match format {
        ReportFormat::Table => {
            let p = dir.join(set.file_name("noise_spread", "csv"));
            write_noise_table(create(&p)?, &set.noise)?;
            Ok(p)
        }
        ReportFormat::VectorPlot => {
            let p = dir.join(set.file_name("noise_spread", "svg"));
            let title = format!("{} / {}", set.task, set.metric);
            create(&p)?.write_all(noise_svg(&title, &set.noise).as_bytes())?;
            Ok(p)
        }
    }
}

/// Write the report set into `dir` and return the written paths. Tables go
/// to `<analysis>-<task>-<metric>.csv`, plots to the same stem with `.svg`.
/// Decision tables have no plot of their own.
pub fn emit_report(set: &ReportSet, format: ReportFormat, dir: &Path) -> Result<Vec<PathBuf>> {
    ensure_dir(dir)?;
    let mut written = Vec::new();
    if format == ReportFormat::Table {
        let p = dir.join(set.file_name("decisions", "csv"));
        write_decisions(create(&p)?, &set.decisions)?;
        written.push(p);
    }
    written.push(emit_noise(set, format, dir)?);
    written.push(emit_frontier(set, format, dir)?);
    Ok(written)
}
