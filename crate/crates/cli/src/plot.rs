//! Static SVG figures with a CSV sidecar holding the plotted points.

use std::fmt::Write as _;

use anyhow::{bail, Result};
use clap::ValueEnum;
use gemd::experiment::{
    SweepResult, METRIC_ITERATIONS, METRIC_ITER_REL_FW_1E3, METRIC_RECOVERY_DELAY,
};
use gemd::{IterationTrace, SweepAxis, TraceRow};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Kind {
    /// Relative primal and FW gaps against iteration (traces).
    Convergence,
    /// IoU against iteration (traces).
    Iou,
    /// IoU against relative FW gap (traces).
    #[value(name = "iou_vs_gap")]
    IouVsGap,
    /// Final relative FW gap against SNR (an snr_db sweep).
    Noise,
    /// Iterations to a 1e-3 gap and recovery delay against kappa (a kappa sweep).
    Conditioning,
    /// Iterations and final relative primal gap against q (a q sweep).
    #[value(name = "q_sensitivity")]
    QSensitivity,
}

impl Kind {
    pub fn name(self) -> &'static str {
        match self {
            Kind::Convergence => "convergence",
            Kind::Iou => "iou",
            Kind::IouVsGap => "iou_vs_gap",
            Kind::Noise => "noise",
            Kind::Conditioning => "conditioning",
            Kind::QSensitivity => "q_sensitivity",
        }
    }

    pub fn uses_traces(self) -> bool {
        matches!(self, Kind::Convergence | Kind::Iou | Kind::IouVsGap)
    }
}

#[derive(Debug, Clone)]
struct Point {
    x: f64,
    y: f64,
    /// Interval drawn as a whisker.
    band: Option<(f64, f64)>,
}

#[derive(Debug, Clone)]
struct Series {
    label: String,
    /// Colour and legend key.
    group: String,
    points: Vec<Point>,
}

#[derive(Debug, Clone)]
struct Panel {
    title: String,
    x_label: &'static str,
    y_label: &'static str,
    x_log: bool,
    y_log: bool,
    series: Vec<Series>,
}

#[derive(Debug, Clone)]
pub struct Figure {
    panels: Vec<Panel>,
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];
const PANEL_W: f64 = 520.0;
const PANEL_H: f64 = 380.0;
const LEFT: f64 = 72.0;
const RIGHT: f64 = 16.0;
const TOP: f64 = 36.0;
const BOTTOM: f64 = 48.0;

/// Builds a trace figure; `traces` pairs each trace with its source name.
pub fn from_traces(kind: Kind, traces: &[(String, IterationTrace)]) -> Result<Figure> {
    if traces.is_empty() {
        bail!("no traces given");
    }
    for (name, tr) in traces {
        if tr.rows.is_empty() {
            bail!("{name}: trace is empty");
        }
    }
    let series = |f: &dyn Fn(&TraceRow) -> (f64, f64)| -> Vec<Series> {
        traces
            .iter()
            .map(|(name, tr)| Series {
                label: format!("{} seed {} ({name})", tr.header.algorithm, tr.header.seed),
                group: tr.header.algorithm.clone(),
                points: tr
                    .rows
                    .iter()
                    .map(|r| {
                        let (x, y) = f(r);
                        Point { x, y, band: None }
                    })
                    .collect(),
            })
            .collect()
    };
    let panel = |title: &str, x_label, y_label, x_log, y_log, series| Panel {
        title: title.to_string(),
        x_label,
        y_label,
        x_log,
        y_log,
        series,
    };
    let panels = match kind {
        Kind::Convergence => vec![
            panel("relative primal gap", "iteration", "rel. primal gap", false, true, series(&|r| (r.t as f64, r.rel_primal))),
            panel("relative FW gap", "iteration", "rel. FW gap", false, true, series(&|r| (r.t as f64, r.rel_fw))),
        ],
        Kind::Iou => vec![panel("support recovery", "iteration", "IoU", false, false, series(&|r| (r.t as f64, r.iou)))],
        Kind::IouVsGap => vec![panel("IoU against FW gap", "rel. FW gap", "IoU", true, false, series(&|r| (r.rel_fw, r.iou)))],
        _ => bail!("plot kind `{}` needs a sweep result, not traces", kind.name()),
    };
    Ok(Figure { panels })
}

/// Builds a sweep figure, one series per algorithm with 95% whiskers.
pub fn from_sweep(kind: Kind, sweep: &SweepResult) -> Result<Figure> {
    let (axis, x_label, x_log) = match kind {
        Kind::Noise => (SweepAxis::SnrDb, "SNR (dB)", false),
        Kind::Conditioning => (SweepAxis::Kappa, "kappa", true),
        Kind::QSensitivity => (SweepAxis::Q, "q", false),
        _ => bail!("plot kind `{}` needs traces, not a sweep result", kind.name()),
    };
    if sweep.axis != axis {
        bail!("plot kind `{}` needs a {} sweep, got a {} sweep", kind.name(), axis, sweep.axis);
    }
    if sweep.rows.is_empty() {
        bail!("sweep has no rows");
    }
    let series = |metric: &str| -> Result<Vec<Series>> {
        let mut out: Vec<Series> = Vec::new();
        for row in &sweep.rows {
            let key = row.summary.algorithm.to_string();
            let Some(m) = row.summary.metrics.get(metric) else {
                bail!("sweep row {}={} lacks metric `{metric}`", sweep.axis, row.value);
            };
            let p = Point {
                x: row.value,
                y: m.mean,
                band: Some((m.ci_low, m.ci_high)),
            };
            match out.iter_mut().find(|s| s.group == key) {
                Some(s) => s.points.push(p),
                None => out.push(Series {
                    label: key.clone(),
                    group: key,
                    points: vec![p],
                }),
            }
        }
        Ok(out)
    };
    let panel = |title: &str, y_label, y_log, series| Panel {
        title: title.to_string(),
        x_label,
        y_label,
        x_log,
        y_log,
        series,
    };
    let panels = match kind {
        Kind::Noise => vec![panel("final relative FW gap", "rel. FW gap", true, series("final_rel_fw")?)],
        Kind::Conditioning => vec![
            panel("iterations to rel. FW gap 1e-3", "iterations", false, series(METRIC_ITER_REL_FW_1E3)?),
            panel("support recovery delay", "iterations", false, series(METRIC_RECOVERY_DELAY)?),
        ],
        _ => vec![
            panel("iterations to convergence", "iterations", false, series(METRIC_ITERATIONS)?),
            panel("final relative primal gap", "rel. primal gap", true, series("final_rel_primal")?),
        ],
    };
    Ok(Figure { panels })
}

fn usable(v: f64, log: bool) -> bool {
    v.is_finite() && (!log || v > 0.0)
}

/// Axis range and tick positions in data units.
struct Axis {
    log: bool,
    lo: f64,
    hi: f64,
    ticks: Vec<f64>,
}

impl Axis {
    fn fit(values: impl Iterator<Item = f64>, log: bool) -> Option<Axis> {
        let (mut min, mut max) = (f64::INFINITY, f64::NEG_INFINITY);
        for v in values.filter(|&v| usable(v, log)) {
            let v = if log { v.log10() } else { v };
            min = min.min(v);
            max = max.max(v);
        }
        if min > max {
            return None;
        }
        if log {
            let lo = min.floor();
            let mut hi = max.ceil();
            if hi <= lo {
                hi = lo + 1.0;
            }
            let step = ((hi - lo) / 8.0).ceil().max(1.0);
            let mut ticks = Vec::new();
            let mut t = lo;
            while t <= hi + 1e-9 {
                ticks.push(t);
                t += step;
            }
            return Some(Axis { log, lo, hi, ticks });
        }
        if max - min < 1e-12 * max.abs().max(1.0) {
            min -= 0.5;
            max += 0.5;
        }
        let raw = (max - min) / 5.0;
        let mag = 10f64.powf(raw.log10().floor());
        let step = [1.0, 2.0, 5.0, 10.0]
            .iter()
            .map(|m| m * mag)
            .find(|s| *s >= raw)
            .unwrap_or(10.0 * mag);
        let lo = (min / step).floor() * step;
        let hi = (max / step).ceil() * step;
        let ticks = (0..=((hi - lo) / step).round() as usize).map(|i| lo + i as f64 * step).collect();
        Some(Axis { log, lo, hi, ticks })
    }

    /// Fraction of the axis length, before clamping.
    fn frac(&self, v: f64) -> f64 {
        let v = if self.log { v.log10() } else { v };
        (v - self.lo) / (self.hi - self.lo)
    }

    fn label(&self, t: f64) -> String {
        if self.log {
            return format!("1e{}", t as i64);
        }
        let step = self.ticks.get(1).map_or(1.0, |b| b - self.ticks[0]);
        let decimals = (-step.log10().floor()).max(0.0) as usize;
        let s = format!("{t:.decimals$}");
        if s.starts_with('-') && s[1..].chars().all(|c| c == '0' || c == '.') {
            s[1..].to_string()
        } else {
            s
        }
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

impl Figure {
    /// CSV with one line per plotted point.
    pub fn sidecar(&self) -> String {
        let mut out = String::from("panel,series,x,y,y_low,y_high\n");
        for p in &self.panels {
            for s in &p.series {
                for pt in &s.points {
                    let (lo, hi) = match pt.band {
                        Some((a, b)) => (a.to_string(), b.to_string()),
                        None => (String::new(), String::new()),
                    };
                    let _ = writeln!(out, "{},{},{},{},{lo},{hi}", p.title, s.label.replace(',', ";"), pt.x, pt.y);
                }
            }
        }
        out
    }

    pub fn svg(&self) -> Result<String> {
        let groups: Vec<&str> = {
            let mut g: Vec<&str> = Vec::new();
            for s in self.panels.iter().flat_map(|p| &p.series) {
                if !g.contains(&s.group.as_str()) {
                    g.push(&s.group);
                }
            }
            g
        };
        let colour = |group: &str| PALETTE[groups.iter().position(|g| *g == group).unwrap_or(0) % PALETTE.len()];
        let width = PANEL_W * self.panels.len() as f64;
        let mut out = String::new();
        let _ = writeln!(
            out,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{PANEL_H:.0}" viewBox="0 0 {width:.0} {PANEL_H:.0}" font-family="sans-serif" font-size="11">"#
        );
        let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
        for (i, p) in self.panels.iter().enumerate() {
            let pts = || p.series.iter().flat_map(|s| &s.points);
            let xs = Axis::fit(pts().map(|q| q.x), p.x_log);
            let ys = Axis::fit(
                pts().filter(|q| usable(q.x, p.x_log)).flat_map(|q| {
                    let (a, b) = q.band.unwrap_or((q.y, q.y));
                    [q.y, a, b]
                }),
                p.y_log,
            );
            let (Some(xa), Some(ya)) = (xs, ys) else {
                bail!("panel `{}` has no plottable points", p.title);
            };
            let x0 = i as f64 * PANEL_W + LEFT;
            let pw = PANEL_W - LEFT - RIGHT;
            let ph = PANEL_H - TOP - BOTTOM;
            let px = |v: f64| x0 + pw * xa.frac(v).clamp(0.0, 1.0);
            let py = |v: f64| TOP + ph * (1.0 - ya.frac(v).clamp(0.0, 1.0));

            let _ = writeln!(out, r#"<g>"#);
            let _ = writeln!(
                out,
                r#"<text x="{:.2}" y="20" text-anchor="middle" font-size="13">{}</text>"#,
                x0 + pw / 2.0,
                escape(&p.title)
            );
            let _ = writeln!(
                out,
                r##"<rect x="{x0:.2}" y="{TOP:.2}" width="{pw:.2}" height="{ph:.2}" fill="none" stroke="#333"/>"##
            );
            for &t in &xa.ticks {
                let x = x0 + pw * (t - xa.lo) / (xa.hi - xa.lo);
                let _ = writeln!(
                    out,
                    r##"<line x1="{x:.2}" y1="{:.2}" x2="{x:.2}" y2="{:.2}" stroke="#333"/><text x="{x:.2}" y="{:.2}" text-anchor="middle">{}</text>"##,
                    TOP + ph,
                    TOP + ph + 4.0,
                    TOP + ph + 16.0,
                    xa.label(t)
                );
            }
            for &t in &ya.ticks {
                let y = TOP + ph * (1.0 - (t - ya.lo) / (ya.hi - ya.lo));
                let _ = writeln!(
                    out,
                    r##"<line x1="{:.2}" y1="{y:.2}" x2="{x0:.2}" y2="{y:.2}" stroke="#333"/><text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"##,
                    x0 - 4.0,
                    x0 - 6.0,
                    y + 4.0,
                    ya.label(t)
                );
            }
            let _ = writeln!(
                out,
                r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
                x0 + pw / 2.0,
                PANEL_H - 12.0,
                escape(p.x_label)
            );
            let _ = writeln!(
                out,
                r#"<text transform="translate({:.2},{:.2}) rotate(-90)" text-anchor="middle">{}</text>"#,
                x0 - 52.0,
                TOP + ph / 2.0,
                escape(p.y_label)
            );
            for s in &p.series {
                let c = colour(&s.group);
                let kept: Vec<&Point> = s
                    .points
                    .iter()
                    .filter(|q| usable(q.x, p.x_log) && usable(q.y, p.y_log))
                    .collect();
                let coords: Vec<String> = kept.iter().map(|q| format!("{:.2},{:.2}", px(q.x), py(q.y))).collect();
                let _ = writeln!(
                    out,
                    r#"<polyline fill="none" stroke="{c}" stroke-width="1.2" stroke-opacity="0.8" points="{}"/>"#,
                    coords.join(" ")
                );
                for q in kept {
                    if let Some((a, b)) = q.band {
                        let lo = if usable(a, p.y_log) { a } else { q.y };
                        let _ = writeln!(
                            out,
                            r#"<line x1="{x:.2}" y1="{:.2}" x2="{x:.2}" y2="{:.2}" stroke="{c}"/><circle cx="{x:.2}" cy="{:.2}" r="2.5" fill="{c}"/>"#,
                            py(lo),
                            py(b),
                            py(q.y),
                            x = px(q.x)
                        );
                    }
                }
            }
            if i == 0 {
                for (k, g) in groups.iter().enumerate() {
                    let y = TOP + 14.0 + 14.0 * k as f64;
                    let _ = writeln!(
                        out,
                        r#"<line x1="{:.2}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="{}" stroke-width="2"/><text x="{:.2}" y="{:.2}">{}</text>"#,
                        x0 + pw - 90.0,
                        x0 + pw - 70.0,
                        colour(g),
                        x0 + pw - 64.0,
                        y + 4.0,
                        escape(g)
                    );
                }
            }
            let _ = writeln!(out, "</g>");
        }
        out.push_str("</svg>\n");
        Ok(out)
    }
}
