//! Mirror-descent steppers over the probability simplex and the loop that
//! drives them.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::links::{Branch, LinkFunction};
use crate::metrics::{self, IterationTrace, StopReason, TraceHeader, TraceRow};

/// Nonnegative weights summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct SimplexVector {
    values: Vec<f64>,
}

/// Compensated (Neumaier) sum.
fn sum(xs: &[f64]) -> f64 {
    let mut s = 0.0;
    let mut c = 0.0;
    for &x in xs {
        let t = s + x;
        if s.abs() >= x.abs() {
            c += (s - t) + x;
        } else {
            c += (x - t) + s;
        }
        s = t;
    }
    s + c
}

impl SimplexVector {
    pub fn uniform(n: usize) -> Self {
        assert!(n > 0, "simplex dimension must be positive");
        SimplexVector {
            values: vec![1.0 / n as f64; n],
        }
    }

    /// Accepts weights whose sum is within 1e-9 of one and renormalizes them.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        let s = Self::check_entries(&values)?;
        if (s - 1.0).abs() > 1e-9 {
            return Err(Error::Argument(format!(
                "weights sum to {s}, not 1"
            )));
        }
        Self::normalize(values)
    }

    /// Scales nonnegative weights onto the simplex.
    pub fn normalize(mut values: Vec<f64>) -> Result<Self> {
        let s = Self::check_entries(&values)?;
        if s <= 0.0 {
            return Err(Error::DegenerateState);
        }
        for v in &mut values {
            *v /= s;
        }
        Ok(SimplexVector { values })
    }

    fn check_entries(values: &[f64]) -> Result<f64> {
        if values.is_empty() {
            return Err(Error::Argument("empty weight vector".into()));
        }
        if let Some((i, v)) = values
            .iter()
            .enumerate()
            .find(|(_, v)| !(v.is_finite() && **v >= 0.0))
        {
            return Err(Error::Domain(format!("weight {i} is {v}")));
        }
        Ok(sum(values))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn nnz(&self) -> usize {
        self.values.iter().filter(|&&v| v > 0.0).count()
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Smallest strictly positive weight.
    pub fn min_positive(&self) -> Option<f64> {
        self.values
            .iter()
            .copied()
            .filter(|&v| v > 0.0)
            .min_by(f64::total_cmp)
    }
}

impl AsRef<[f64]> for SimplexVector {
    fn as_ref(&self) -> &[f64] {
        &self.values
    }
}

/// Per-step branch statistics.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepDiagnostics {
    pub n_dual_branch: usize,
    pub n_fallback: usize,
    /// Coordinates that were positive before the step and are exactly zero after it.
    pub n_clipped: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Algorithm {
    #[serde(rename = "eg")]
    Eg,
    #[serde(rename = "geg")]
    Geg,
    #[serde(rename = "dmd")]
    Dmd,
    #[serde(rename = "mmd-geg")]
    MmdGeg,
    #[serde(rename = "mmd-dmd")]
    MmdDmd,
}

impl Algorithm {
    pub const ALL: [Algorithm; 5] = [
        Algorithm::Eg,
        Algorithm::Geg,
        Algorithm::Dmd,
        Algorithm::MmdGeg,
        Algorithm::MmdDmd,
    ];

    pub fn key(self) -> &'static str {
        match self {
            Algorithm::Eg => "eg",
            Algorithm::Geg => "geg",
            Algorithm::Dmd => "dmd",
            Algorithm::MmdGeg => "mmd-geg",
            Algorithm::MmdDmd => "mmd-dmd",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase().replace('_', "-");
        Algorithm::ALL
            .into_iter()
            .find(|a| a.key() == key)
            .ok_or_else(|| {
                Error::Parse(format!(
                    "unknown algorithm `{s}` (expected eg, geg, dmd, mmd-geg or mmd-dmd)"
                ))
            })
    }
}

/// Which gradient enters the DMD branch test `exp_G(w_i) - η·g_i > 0`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DmdGuard {
    /// The centred gradient, the same one the update applies.
    #[default]
    Centred,
    /// The uncentred gradient.
    Raw,
}

/// Which link derivative preconditions the MMD step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MmdKind {
    GegLink,
    DmdLink,
}

fn default_eta() -> f64 {
    1.0
}

fn default_link() -> LinkFunction {
    LinkFunction::tsallis(0.25).expect("q = 0.25 is a valid Tsallis index")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UpdateConfig {
    pub algorithm: Algorithm,
    #[serde(default = "default_link")]
    pub link: LinkFunction,
    #[serde(default = "default_eta")]
    pub eta: f64,
    /// `None` picks the per-algorithm default: raw gradient for EG, centred otherwise.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub centred: Option<bool>,
    #[serde(default)]
    pub dmd_guard: DmdGuard,
}

impl UpdateConfig {
    pub fn new(algorithm: Algorithm, link: LinkFunction, eta: f64) -> Self {
        UpdateConfig {
            algorithm,
            link,
            eta,
            centred: None,
            dmd_guard: DmdGuard::Centred,
        }
    }

    pub fn centred(mut self, centred: bool) -> Self {
        self.centred = Some(centred);
        self
    }

    pub fn is_centred(&self) -> bool {
        self.centred.unwrap_or(self.algorithm != Algorithm::Eg)
    }

    /// The link actually used: EG always runs on the natural logarithm.
    pub fn effective_link(&self) -> LinkFunction {
        match self.algorithm {
            Algorithm::Eg => LinkFunction::natural(),
            _ => self.link.clone(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_eta(self.eta)?;
        self.link.family().validate()
    }
}

fn check_eta(eta: f64) -> Result<()> {
    if eta.is_finite() && eta > 0.0 {
        Ok(())
    } else {
        Err(Error::Argument(format!("learning rate must be positive, got {eta}")))
    }
}

fn check_gradient(w: &SimplexVector, g: &[f64]) -> Result<()> {
    check_len(w.len(), g.len())?;
    match g.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(Error::NonFiniteGradient(i)),
        None => Ok(()),
    }
}

/// `g - ⟨w, g⟩·1`
pub fn centred_gradient(w: &SimplexVector, g: &[f64]) -> Result<Vec<f64>> {
    check_len(w.len(), g.len())?;
    let mean = w.as_slice().iter().zip(g).map(|(a, b)| a * b).sum::<f64>();
    Ok(g.iter().map(|v| v - mean).collect())
}

fn direction(w: &SimplexVector, g: &[f64], centred: bool) -> Result<Vec<f64>> {
    if centred {
        centred_gradient(w, g)
    } else {
        Ok(g.to_vec())
    }
}

fn clipped(before: &SimplexVector, after: &[f64]) -> usize {
    before
        .as_slice()
        .iter()
        .zip(after)
        .filter(|(b, a)| **b > 0.0 && **a == 0.0)
        .count()
}

/// Exponentiated gradient on the raw gradient. The exponent is shifted by the
/// smallest `η·g_j`, which keeps every factor in `(0, 1]`.
pub fn step_eg(w: &SimplexVector, g: &[f64], eta: f64) -> Result<(SimplexVector, StepDiagnostics)> {
    check_eta(eta)?;
    check_gradient(w, g)?;
    let m = g.iter().map(|v| eta * v).fold(f64::INFINITY, f64::min);
    let next: Vec<f64> = w
        .as_slice()
        .iter()
        .zip(g)
        .map(|(wi, gi)| wi * (m - eta * gi).exp())
        .collect();
    let diag = StepDiagnostics {
        n_clipped: clipped(w, &next),
        ..Default::default()
    };
    Ok((SimplexVector::normalize(next)?, diag))
}

/// `exp_G(log_G(w_i) - η·ĝ_i)`, then ℓ1 normalization.
pub fn step_geg(
    w: &SimplexVector,
    g: &[f64],
    eta: f64,
    link: &LinkFunction,
    centred: bool,
) -> Result<(SimplexVector, StepDiagnostics)> {
    check_eta(eta)?;
    check_gradient(w, g)?;
    let d = direction(w, g, centred)?;
    let next = w
        .as_slice()
        .iter()
        .zip(&d)
        .map(|(&wi, &di)| geg_coordinate(link, wi, eta * di))
        .collect::<Result<Vec<f64>>>()?;
    let diag = StepDiagnostics {
        n_clipped: clipped(w, &next),
        ..Default::default()
    };
    Ok((SimplexVector::normalize(next)?, diag))
}

fn geg_coordinate(link: &LinkFunction, wi: f64, step: f64) -> Result<f64> {
    link.exp(link.log(wi)? - step)
}

/// Dual mirror descent with the centred gradient in both the guard and the update.
pub fn step_dmd(
    w: &SimplexVector,
    g: &[f64],
    eta: f64,
    link: &LinkFunction,
    centred: bool,
) -> Result<(SimplexVector, StepDiagnostics)> {
    step_dmd_guarded(w, g, eta, link, centred, DmdGuard::Centred)
}

/// Dual mirror descent: where `z_i = exp_G(w_i) - η·ĝ_i > 0` the weight becomes
/// `[log_G(z_i)]_+`, otherwise it takes the GEG step. `guard` selects the
/// gradient used in the branch test.
pub fn step_dmd_guarded(
    w: &SimplexVector,
    g: &[f64],
    eta: f64,
    link: &LinkFunction,
    centred: bool,
    guard: DmdGuard,
) -> Result<(SimplexVector, StepDiagnostics)> {
    check_eta(eta)?;
    check_gradient(w, g)?;
    let d = direction(w, g, centred)?;
    let mut diag = StepDiagnostics::default();
    let mut next = Vec::with_capacity(w.len());
    for (i, &wi) in w.as_slice().iter().enumerate() {
        let ew = link.exp(wi)?;
        let z = ew - eta * d[i];
        let test = match guard {
            DmdGuard::Centred => z,
            DmdGuard::Raw => ew - eta * g[i],
        };
        let v = if test > 0.0 {
            diag.n_dual_branch += 1;
            if z > 0.0 {
                link.log(z)?.max(0.0)
            } else {
                0.0
            }
        } else {
            diag.n_fallback += 1;
            geg_coordinate(link, wi, eta * d[i])?
        };
        next.push(v.abs());
    }
    diag.n_clipped = clipped(w, &next);
    Ok((SimplexVector::normalize(next)?, diag))
}

/// Additive step preconditioned by the inverse link derivative:
/// `[w_i - η·ĝ_i / d_i]_+` with `d_i` the derivative of the log branch
/// (`GegLink`) or of the exp branch (`DmdLink`) at `w_i`.
pub fn step_mmd(
    w: &SimplexVector,
    g: &[f64],
    eta: f64,
    link: &LinkFunction,
    which: MmdKind,
    centred: bool,
) -> Result<(SimplexVector, StepDiagnostics)> {
    check_eta(eta)?;
    check_gradient(w, g)?;
    let d = direction(w, g, centred)?;
    let next = w
        .as_slice()
        .iter()
        .zip(&d)
        .map(|(&wi, &di)| {
            let slope = match which {
                // the log-branch derivative blows up at zero, so zeros stay put
                MmdKind::GegLink if wi == 0.0 => return Ok(0.0),
                MmdKind::GegLink => link.derivative(wi, Branch::Log)?,
                MmdKind::DmdLink => link.derivative(wi, Branch::Exp)?,
            };
            if !(slope > 0.0) {
                return Err(Error::Domain(format!(
                    "link derivative {slope} at {wi} is not positive"
                )));
            }
            Ok((wi - eta * di / slope).max(0.0))
        })
        .collect::<Result<Vec<f64>>>()?;
    let diag = StepDiagnostics {
        n_clipped: clipped(w, &next),
        ..Default::default()
    };
    Ok((SimplexVector::normalize(next)?, diag))
}

/// Dispatches one step of the configured algorithm.
pub fn step(
    w: &SimplexVector,
    g: &[f64],
    cfg: &UpdateConfig,
) -> Result<(SimplexVector, StepDiagnostics)> {
    let centred = cfg.is_centred();
    match cfg.algorithm {
        Algorithm::Eg if centred => step_eg(w, &centred_gradient(w, g)?, cfg.eta),
        Algorithm::Eg => step_eg(w, g, cfg.eta),
        Algorithm::Geg => step_geg(w, g, cfg.eta, &cfg.link, centred),
        Algorithm::Dmd => step_dmd_guarded(w, g, cfg.eta, &cfg.link, centred, cfg.dmd_guard),
        Algorithm::MmdGeg => step_mmd(w, g, cfg.eta, &cfg.link, MmdKind::GegLink, centred),
        Algorithm::MmdDmd => step_mmd(w, g, cfg.eta, &cfg.link, MmdKind::DmdLink, centred),
    }
}

/// Known optimum of an objective, used for the primal gap and support recovery.
#[derive(Debug, Clone, Copy)]
pub struct Reference<'a> {
    pub loss_star: f64,
    pub support: &'a [usize],
}

/// A differentiable objective on the simplex.
pub trait Objective {
    fn dim(&self) -> usize;

    /// Loss and exact gradient at `w`.
    fn evaluate(&self, w: &[f64]) -> Result<(f64, Vec<f64>)>;

    fn reference(&self) -> Option<Reference<'_>> {
        None
    }
}

/// Turns the clean gradient into the estimate handed to the stepper.
pub trait GradientNoise {
    fn perturb(&mut self, clean: &[f64]) -> Vec<f64>;
}

/// Exact gradients.
#[derive(Debug, Clone, Copy, Default)]
pub struct Exact;

impl GradientNoise for Exact {
    fn perturb(&mut self, clean: &[f64]) -> Vec<f64> {
        clean.to_vec()
    }
}

/// Stop once `g_FW(w_t) / g_FW(w_0) ≤ threshold`. A starting gap at or below
/// `gap_floor` counts as already optimal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StoppingRule {
    pub threshold: f64,
    pub gap_floor: f64,
}

impl Default for StoppingRule {
    fn default() -> Self {
        StoppingRule {
            threshold: 1e-4,
            gap_floor: 1e-14,
        }
    }
}

impl StoppingRule {
    /// A rule that never fires, for fixed-budget runs.
    pub fn never() -> Self {
        StoppingRule {
            threshold: f64::NEG_INFINITY,
            gap_floor: f64::NEG_INFINITY,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOptions {
    pub t_max: usize,
    pub stop: StoppingRule,
    /// Log every `stride`-th iterate; the first and last are always logged.
    pub stride: usize,
    pub header: TraceHeader,
}

impl RunOptions {
    pub fn new(t_max: usize) -> Self {
        RunOptions {
            t_max,
            stop: StoppingRule::default(),
            stride: 1,
            header: TraceHeader::default(),
        }
    }

    pub fn stop(mut self, stop: StoppingRule) -> Self {
        self.stop = stop;
        self
    }

    pub fn stride(mut self, stride: usize) -> Self {
        self.stride = stride;
        self
    }

    pub fn header(mut self, header: TraceHeader) -> Self {
        self.header = header;
        self
    }
}

/// Runs `cfg` from `w0` until the stopping rule fires or `t_max` steps have
/// been taken. Metrics use the clean gradient; the stepper sees `noise`'s
/// estimate.
pub fn run<O, N>(
    objective: &O,
    noise: &mut N,
    w0: SimplexVector,
    cfg: &UpdateConfig,
    opts: &RunOptions,
) -> Result<IterationTrace>
where
    O: Objective + ?Sized,
    N: GradientNoise + ?Sized,
{
    if opts.t_max == 0 {
        return Err(Error::Argument("t_max must be at least 1".into()));
    }
    if opts.stride == 0 {
        return Err(Error::Argument("stride must be at least 1".into()));
    }
    cfg.validate()?;
    check_len(objective.dim(), w0.len())?;
    let cfg = UpdateConfig {
        link: cfg.effective_link(),
        ..cfg.clone()
    };

    let reference = objective.reference();
    let mut header = opts.header.clone();
    if header.algorithm.is_empty() {
        header.algorithm = cfg.algorithm.to_string();
    }
    if header.link.is_empty() {
        header.link = cfg.link.to_string();
    }
    header.eta = cfg.eta;
    header.centred = cfg.is_centred();
    header.loss_star = reference.map(|r| r.loss_star);

    let row = |t: usize, w: &SimplexVector, loss: f64, g: &[f64], fw0: f64, d: StepDiagnostics| -> Result<TraceRow> {
        let gap = metrics::fw_gap(w.as_slice(), g)?;
        let (rel_primal, iou) = match reference {
            Some(r) => (
                metrics::rel_primal_gap(loss, r.loss_star),
                metrics::iou_topk(w.as_slice(), r.support, r.support.len())?,
            ),
            None => (f64::NAN, f64::NAN),
        };
        Ok(TraceRow {
            t,
            loss,
            rel_primal,
            fw_gap: gap,
            rel_fw: gap / loss.abs().max(1.0),
            delta_t: if t == 0 { 1.0 } else { gap / fw0 },
            iou,
            nnz: w.nnz(),
            n_dual: d.n_dual_branch,
            n_fallback: d.n_fallback,
            n_clipped: d.n_clipped,
        })
    };

    let mut w = w0;
    let (mut loss, mut g) = objective.evaluate(w.as_slice())?;
    let fw0 = metrics::fw_gap(w.as_slice(), &g)?;
    let mut rows = vec![row(0, &w, loss, &g, fw0, StepDiagnostics::default())?];
    if fw0 <= opts.stop.gap_floor {
        return Ok(IterationTrace {
            header,
            rows,
            stop: StopReason::Converged { iteration: 0 },
        });
    }

    for t in 1..=opts.t_max {
        let estimate = noise.perturb(&g);
        let (next, diag) = step(&w, &estimate, &cfg).map_err(|e| e.at(t))?;
        w = next;
        (loss, g) = objective.evaluate(w.as_slice()).map_err(|e| e.at(t))?;
        let gap = metrics::fw_gap(w.as_slice(), &g)?;
        let delta = metrics::stopping_delta(gap, fw0)?;
        let fired = delta <= opts.stop.threshold;
        if fired || t == opts.t_max || t % opts.stride == 0 {
            rows.push(row(t, &w, loss, &g, fw0, diag).map_err(|e| e.at(t))?);
        }
        if fired {
            return Ok(IterationTrace {
                header,
                rows,
                stop: StopReason::Converged { iteration: t },
            });
        }
    }
    Ok(IterationTrace {
        header,
        rows,
        stop: StopReason::Budget,
    })
}
