//! Optimality certificates, support-recovery metrics and per-iteration traces.
//!
//! Every quantity here is computed from the clean gradient; the noisy estimate
//! fed to a stepper never reaches the certificates.

use std::io::{self, BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::links::{LinkFamily, LinkFunction};
use crate::quadrature;

/// `(L(w) - L*) / max(1, |L*|)`
pub fn rel_primal_gap(loss: f64, loss_star: f64) -> f64 {
    (loss - loss_star) / loss_star.abs().max(1.0)
}

/// Frank–Wolfe gap `⟨w, g⟩ - min_i g_i` over the simplex.
pub fn fw_gap(w: &[f64], g: &[f64]) -> Result<f64> {
    check_len(w.len(), g.len())?;
    let inner: f64 = w.iter().zip(g).map(|(a, b)| a * b).sum();
    let min = g.iter().copied().fold(f64::INFINITY, f64::min);
    let gap = inner - min;
    debug_assert!(gap >= -1e-12 * (1.0 + min.abs()), "negative FW gap {gap}");
    Ok(gap)
}

/// `fw_gap / max(1, |L(w)|)`
pub fn rel_fw_gap(w: &[f64], g: &[f64], loss: f64) -> Result<f64> {
    Ok(fw_gap(w, g)? / loss.abs().max(1.0))
}

/// Stopping ratio `g_FW(w_t) / g_FW(w_0)`.
pub fn stopping_delta(fw_now: f64, fw_init: f64) -> Result<f64> {
    if fw_init.is_nan() || fw_init <= 0.0 {
        return Err(Error::DegenerateStart);
    }
    Ok(fw_now / fw_init)
}

/// Indices of the `k` largest entries, ties broken towards the lower index.
pub fn top_k(w: &[f64], k: usize) -> Result<Vec<usize>> {
    if k > w.len() {
        return Err(Error::Argument(format!(
            "top-{k} requested from a vector of length {}",
            w.len()
        )));
    }
    let mut idx: Vec<usize> = (0..w.len()).collect();
    if k == 0 {
        return Ok(Vec::new());
    }
    let cmp = |a: &usize, b: &usize| w[*b].total_cmp(&w[*a]).then(a.cmp(b));
    if k < idx.len() {
        idx.select_nth_unstable_by(k - 1, cmp);
        idx.truncate(k);
    }
    idx.sort_unstable();
    Ok(idx)
}

/// Jaccard index between `support` and the top-`k` entries of `w`.
pub fn iou_topk(w: &[f64], support: &[usize], k: usize) -> Result<f64> {
    if k != support.len() {
        return Err(Error::Argument(format!(
            "k = {k} does not match the support size {}",
            support.len()
        )));
    }
    let estimated = top_k(w, k)?;
    if k == 0 {
        return Ok(1.0);
    }
    let mut mask = vec![false; w.len()];
    for &i in support {
        if i >= w.len() {
            return Err(Error::Argument(format!("support index {i} out of range")));
        }
        mask[i] = true;
    }
    let inter = estimated.iter().filter(|&&i| mask[i]).count();
    let union = 2 * k - inter;
    Ok(inter as f64 / union as f64)
}

/// Bregman divergence `D_F(u‖w)` of the separable potential whose derivative is
/// the link's logarithm. Natural and Tsallis links use closed-form
/// antiderivatives; other families integrate the link by 32-point Gauss–Legendre.
pub fn bregman_divergence(link: &LinkFunction, u: &[f64], w: &[f64]) -> Result<f64> {
    check_len(w.len(), u.len())?;
    let mut total = 0.0;
    for (&ui, &wi) in u.iter().zip(w) {
        if ui < 0.0 || wi < 0.0 {
            return Err(Error::Domain(format!(
                "Bregman divergence needs nonnegative arguments (got {ui}, {wi})"
            )));
        }
        let fw = link.log(wi)?;
        let term = match *link.family() {
            LinkFamily::Natural => {
                let xlogx = |x: f64| if x == 0.0 { 0.0 } else { x * x.ln() };
                xlogx(ui) - xlogx(wi) - (ui - wi) - (ui - wi) * fw
            }
            LinkFamily::Tsallis { q } => {
                let s = 1.0 - q;
                let h = |x: f64| (x.powf(2.0 - q) / (2.0 - q) - x) / s;
                h(ui) - h(wi) - (ui - wi) * fw
            }
            _ => {
                if ui == wi {
                    0.0
                } else {
                    quadrature::integrate(wi, ui, |s| Ok(link.log(s)? - fw))?
                }
            }
        };
        total += term;
    }
    Ok(total)
}

/// One logged iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub t: usize,
    pub loss: f64,
    pub rel_primal: f64,
    pub fw_gap: f64,
    pub rel_fw: f64,
    pub delta_t: f64,
    pub iou: f64,
    pub nnz: usize,
    pub n_dual: usize,
    pub n_fallback: usize,
    pub n_clipped: usize,
}

/// Run metadata carried alongside the rows.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TraceHeader {
    pub algorithm: String,
    pub link: String,
    pub eta: f64,
    pub centred: bool,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub instance: Option<serde_json::Value>,
    /// `L(w*)`, when the optimum is known.
    #[serde(default)]
    pub loss_star: Option<f64>,
}

/// Why a run ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StopReason {
    Converged { iteration: usize },
    Budget,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationTrace {
    pub header: TraceHeader,
    pub rows: Vec<TraceRow>,
    pub stop: StopReason,
}

pub const CSV_COLUMNS: [&str; 11] = [
    "t",
    "loss",
    "rel_primal",
    "fw_gap",
    "rel_fw",
    "delta_t",
    "iou",
    "nnz",
    "n_dual",
    "n_fallback",
    "n_clipped",
];

impl IterationTrace {
    /// Iteration at which the stopping rule fired.
    pub fn converged_at(&self) -> Option<usize> {
        match self.stop {
            StopReason::Converged { iteration } => Some(iteration),
            StopReason::Budget => None,
        }
    }

    pub fn last(&self) -> Option<&TraceRow> {
        self.rows.last()
    }

    /// Writes a `#`-prefixed JSON header line followed by the CSV table.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        let header = serde_json::json!({ "header": self.header, "stop": self.stop });
        writeln!(out, "# {header}")?;
        writeln!(out, "{}", CSV_COLUMNS.join(","))?;
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{}",
                r.t,
                r.loss,
                r.rel_primal,
                r.fw_gap,
                r.rel_fw,
                r.delta_t,
                r.iou,
                r.nnz,
                r.n_dual,
                r.n_fallback,
                r.n_clipped
            )?;
        }
        Ok(())
    }

    /// Parses the format produced by [`IterationTrace::write_csv`].
    pub fn read_csv<R: BufRead>(input: R) -> Result<Self> {
        let mut header = TraceHeader::default();
        let mut stop = StopReason::Budget;
        let mut rows = Vec::new();
        let mut saw_columns = false;
        for (lineno, line) in input.lines().enumerate() {
            let lineno = lineno + 1;
            let line = line.map_err(|e| Error::Parse(format!("line {lineno}: {e}")))?;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(json) = line.strip_prefix('#') {
                let v: serde_json::Value = serde_json::from_str(json.trim())
                    .map_err(|e| Error::Parse(format!("line {lineno}: bad header: {e}")))?;
                if let Some(h) = v.get("header") {
                    header = serde_json::from_value(h.clone())
                        .map_err(|e| Error::Parse(format!("line {lineno}: bad header: {e}")))?;
                }
                if let Some(s) = v.get("stop") {
                    stop = serde_json::from_value(s.clone())
                        .map_err(|e| Error::Parse(format!("line {lineno}: bad stop: {e}")))?;
                }
                continue;
            }
            if !saw_columns {
                let cols: Vec<&str> = line.split(',').map(str::trim).collect();
                if cols != CSV_COLUMNS {
                    return Err(Error::Parse(format!(
                        "line {lineno}: unexpected columns `{line}`"
                    )));
                }
                saw_columns = true;
                continue;
            }
            let f: Vec<&str> = line.split(',').map(str::trim).collect();
            if f.len() != CSV_COLUMNS.len() {
                return Err(Error::Parse(format!(
                    "line {lineno}: expected {} fields, found {}",
                    CSV_COLUMNS.len(),
                    f.len()
                )));
            }
            let fl = |i: usize| -> Result<f64> {
                f[i].parse()
                    .map_err(|_| Error::Parse(format!("line {lineno}: `{}` is not a number", f[i])))
            };
            let us = |i: usize| -> Result<usize> {
                f[i].parse()
                    .map_err(|_| Error::Parse(format!("line {lineno}: `{}` is not an integer", f[i])))
            };
            rows.push(TraceRow {
                t: us(0)?,
                loss: fl(1)?,
                rel_primal: fl(2)?,
                fw_gap: fl(3)?,
                rel_fw: fl(4)?,
                delta_t: fl(5)?,
                iou: fl(6)?,
                nnz: us(7)?,
                n_dual: us(8)?,
                n_fallback: us(9)?,
                n_clipped: us(10)?,
            });
        }
        if !saw_columns {
            return Err(Error::Parse("trace has no column header".into()));
        }
        Ok(IterationTrace { header, rows, stop })
    }
}

/// Smallest `T` such that IoU = 1 at every logged iteration from `T` onwards.
pub fn recovery_delay(trace: &IterationTrace) -> Option<usize> {
    let mut delay = None;
    for row in trace.rows.iter().rev() {
        if row.iou == 1.0 {
            delay = Some(row.t);
        } else {
            break;
        }
    }
    delay
}

/// First logged iteration with IoU at or above `threshold`.
pub fn first_iter_at_iou(trace: &IterationTrace, threshold: f64) -> Option<usize> {
    trace.rows.iter().find(|r| r.iou >= threshold).map(|r| r.t)
}

/// First logged iteration whose relative FW gap is at or below `threshold`.
pub fn first_iter_at_rel_fw(trace: &IterationTrace, threshold: f64) -> Option<usize> {
    trace.rows.iter().find(|r| r.rel_fw <= threshold).map(|r| r.t)
}

/// Checks the Frank–Wolfe lower bound `L(w_t) - g_FW(w_t) ≤ L* + tol` on every
/// row; returns the largest violation (≤ 0 when the certificate holds).
pub fn certificate_violation(trace: &IterationTrace, loss_star: f64) -> f64 {
    trace
        .rows
        .iter()
        .map(|r| r.loss - r.fw_gap - loss_star)
        .fold(f64::NEG_INFINITY, f64::max)
}
