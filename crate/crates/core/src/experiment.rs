//! Seeded multi-run experiments, aggregation and one-axis sweeps.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::links::{LinkFamily, LinkFunction};
use crate::metrics::{self, IterationTrace, TraceHeader};
use crate::scqp::InstanceSpec;
use crate::updates::{run, Algorithm, DmdGuard, RunOptions, SimplexVector, StoppingRule, UpdateConfig};

fn default_link() -> LinkFunction {
    LinkFunction::tsallis(0.25).expect("q = 0.25 is a valid Tsallis index")
}

fn default_eta() -> f64 {
    1.0
}

/// Update settings shared by every algorithm of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UpdateSpec {
    #[serde(default = "default_link")]
    pub link: LinkFunction,
    #[serde(default = "default_eta")]
    pub eta: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub centred: Option<bool>,
    #[serde(default)]
    pub dmd_guard: DmdGuard,
}

impl Default for UpdateSpec {
    fn default() -> Self {
        UpdateSpec {
            link: default_link(),
            eta: default_eta(),
            centred: None,
            dmd_guard: DmdGuard::Centred,
        }
    }
}

impl UpdateSpec {
    pub fn for_algorithm(&self, algorithm: Algorithm) -> UpdateConfig {
        UpdateConfig {
            algorithm,
            link: self.link.clone(),
            eta: self.eta,
            centred: self.centred,
            dmd_guard: self.dmd_guard,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Budget {
    pub t_max: usize,
    #[serde(default = "default_threshold")]
    pub stop_threshold: f64,
    /// Trace row stride.
    #[serde(default = "default_stride")]
    pub stride: usize,
}

fn default_threshold() -> f64 {
    1e-4
}

fn default_stride() -> usize {
    1
}

impl Default for Budget {
    fn default() -> Self {
        Budget {
            t_max: 200,
            stop_threshold: default_threshold(),
            stride: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Seeds {
    #[serde(default)]
    pub instance_seed: u64,
    #[serde(default = "default_noise_seed")]
    pub noise_seed: u64,
    #[serde(default = "default_runs")]
    pub n_runs: usize,
}

fn default_noise_seed() -> u64 {
    1_000_003
}

fn default_runs() -> usize {
    20
}

impl Default for Seeds {
    fn default() -> Self {
        Seeds {
            instance_seed: 0,
            noise_seed: default_noise_seed(),
            n_runs: default_runs(),
        }
    }
}

fn default_algorithms() -> Vec<Algorithm> {
    vec![Algorithm::Dmd, Algorithm::Geg, Algorithm::Eg]
}

/// Full description of an experiment. Run `r` uses instance seed
/// `instance_seed + r` and noise seed `noise_seed + r`; `instance.seed` is ignored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub instance: InstanceSpec,
    #[serde(default)]
    pub update: UpdateSpec,
    #[serde(default = "default_algorithms")]
    pub algorithms: Vec<Algorithm>,
    #[serde(default)]
    pub budget: Budget,
    #[serde(default)]
    pub seeds: Seeds,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            instance: InstanceSpec::default(),
            update: UpdateSpec::default(),
            algorithms: default_algorithms(),
            budget: Budget::default(),
            seeds: Seeds::default(),
        }
    }
}

fn field(name: &str, e: Error) -> Error {
    match e {
        Error::Argument(m) | Error::Param(m) if m.starts_with(name) => Error::Argument(m),
        Error::Argument(m) | Error::Param(m) => Error::Argument(format!("{name}: {m}")),
        other => Error::Argument(format!("{name}: {other}")),
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let (line, col) = (e.inner().line(), e.inner().column());
            let inner = e.inner().to_string();
            // serde_json appends the position itself; keep only the message
            let msg = inner.rsplit_once(" at line ").map_or(inner.as_str(), |(m, _)| m);
            Error::Parse(format!("config line {line} column {col}: {}: {msg}", e.path()))
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.instance.validate().map_err(|e| field("instance", e))?;
        self.update
            .for_algorithm(Algorithm::Dmd)
            .validate()
            .map_err(|e| field("update", e))?;
        if self.algorithms.is_empty() {
            return Err(Error::Argument("algorithms: list is empty".into()));
        }
        if self.budget.t_max == 0 {
            return Err(Error::Argument("budget.t_max must be at least 1".into()));
        }
        if self.budget.stride == 0 {
            return Err(Error::Argument("budget.stride must be at least 1".into()));
        }
        if self.budget.stop_threshold.is_nan() {
            return Err(Error::Argument("budget.stop_threshold is NaN".into()));
        }
        if self.seeds.n_runs == 0 {
            return Err(Error::Argument("seeds.n_runs must be at least 1".into()));
        }
        Ok(())
    }

    pub fn instance_for_run(&self, r: usize) -> InstanceSpec {
        InstanceSpec {
            seed: self.seeds.instance_seed.wrapping_add(r as u64),
            ..self.instance.clone()
        }
    }
}

/// Executes run `r` of `algorithm`.
pub fn run_cell(cfg: &RunConfig, algorithm: Algorithm, r: usize) -> Result<IterationTrace> {
    let spec = cfg.instance_for_run(r);
    let inst = spec.build()?;
    let update = cfg.update.for_algorithm(algorithm);
    let noise_seed = cfg.seeds.noise_seed.wrapping_add(r as u64);
    let header = TraceHeader {
        seed: spec.seed,
        instance: Some(serde_json::to_value(&spec).map_err(|e| Error::Parse(e.to_string()))?),
        ..Default::default()
    };
    let opts = RunOptions::new(cfg.budget.t_max)
        .stop(StoppingRule {
            threshold: cfg.budget.stop_threshold,
            ..StoppingRule::default()
        })
        .stride(cfg.budget.stride)
        .header(header);
    let mut noise = spec.noise(noise_seed).stream();
    run(&inst, &mut noise, SimplexVector::uniform(inst.n()), &update, &opts)
}

/// Mean, spread and 95% interval of one metric across runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateResult {
    pub n: usize,
    pub mean: f64,
    /// Sample standard deviation; zero for a single run.
    pub std: f64,
    pub se: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    /// Runs that never reached the event and contribute the budget instead.
    pub censored: usize,
}

impl AggregateResult {
    /// Welford accumulation in the given order.
    pub fn from_values(values: &[f64], censored: usize) -> Self {
        let mut mean = 0.0;
        let mut m2 = 0.0;
        for (i, &x) in values.iter().enumerate() {
            let d = x - mean;
            mean += d / (i + 1) as f64;
            m2 += d * (x - mean);
        }
        let n = values.len();
        if n == 0 {
            mean = f64::NAN;
        }
        let std = if n > 1 { (m2 / (n - 1) as f64).sqrt() } else { 0.0 };
        let se = if n > 0 { std / (n as f64).sqrt() } else { f64::NAN };
        AggregateResult {
            n,
            mean,
            std,
            se,
            ci_low: mean - 1.96 * se,
            ci_high: mean + 1.96 * se,
            censored,
        }
    }
}

pub const METRIC_ITERATIONS: &str = "iterations";
pub const METRIC_ITER_IOU_09: &str = "iter_iou_0.9";
pub const METRIC_RECOVERY_DELAY: &str = "recovery_delay";
pub const METRIC_ITER_REL_FW_1E3: &str = "iter_rel_fw_1e-3";

/// Summary statistics of the successful runs of one algorithm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlgorithmSummary {
    pub algorithm: Algorithm,
    pub runs: usize,
    pub converged: usize,
    pub metrics: BTreeMap<String, AggregateResult>,
    /// Largest `L(w_t) - g_FW(w_t) - L*` over every logged iterate.
    pub certificate_violation: f64,
    pub failures: Vec<String>,
}

/// Aggregates the traces of one algorithm. Event times that never occur
/// count as the budget `t_max`.
pub fn summarize(algorithm: Algorithm, t_max: usize, results: &[Result<IterationTrace>]) -> AlgorithmSummary {
    let traces: Vec<&IterationTrace> = results.iter().filter_map(|r| r.as_ref().ok()).collect();
    let failures = results
        .iter()
        .enumerate()
        .filter_map(|(i, r)| r.as_ref().err().map(|e| format!("run {i}: {e}")))
        .collect();

    let mut m = BTreeMap::new();
    let mut censored = |name: &str, f: &dyn Fn(&IterationTrace) -> Option<usize>| {
        let mut hits = 0;
        let vals: Vec<f64> = traces
            .iter()
            .map(|t| match f(t) {
                Some(v) => {
                    hits += 1;
                    v as f64
                }
                None => t_max as f64,
            })
            .collect();
        m.insert(name.to_string(), AggregateResult::from_values(&vals, traces.len() - hits));
    };
    censored(METRIC_ITERATIONS, &|t| t.converged_at());
    censored(METRIC_ITER_IOU_09, &|t| metrics::first_iter_at_iou(t, 0.9));
    censored(METRIC_RECOVERY_DELAY, &metrics::recovery_delay);
    censored(METRIC_ITER_REL_FW_1E3, &|t| metrics::first_iter_at_rel_fw(t, 1e-3));

    let mut last = |name: &str, f: &dyn Fn(&metrics::TraceRow) -> f64| {
        let vals: Vec<f64> = traces.iter().filter_map(|t| t.last()).map(f).collect();
        m.insert(name.to_string(), AggregateResult::from_values(&vals, 0));
    };
    last("final_loss", &|r| r.loss);
    last("final_rel_primal", &|r| r.rel_primal);
    last("final_fw_gap", &|r| r.fw_gap);
    last("final_rel_fw", &|r| r.rel_fw);
    last("final_iou", &|r| r.iou);
    last("final_nnz", &|r| r.nnz as f64);

    let certificate_violation = traces
        .iter()
        .filter_map(|t| t.header.loss_star.map(|ls| metrics::certificate_violation(t, ls)))
        .fold(f64::NEG_INFINITY, f64::max);

    AlgorithmSummary {
        algorithm,
        runs: results.len(),
        converged: traces.iter().filter(|t| t.converged_at().is_some()).count(),
        metrics: m,
        certificate_violation,
        failures,
    }
}

/// All traces of a configuration, indexed `[algorithm][run]`.
#[derive(Debug)]
pub struct RunOutcome {
    pub config: RunConfig,
    pub traces: Vec<(Algorithm, Vec<Result<IterationTrace>>)>,
}

impl RunOutcome {
    pub fn summaries(&self) -> Vec<AlgorithmSummary> {
        self.traces
            .iter()
            .map(|(a, runs)| summarize(*a, self.config.budget.t_max, runs))
            .collect()
    }

    /// Whether any run failed because every weight was clipped.
    pub fn any_degenerate(&self) -> bool {
        self.traces
            .iter()
            .flat_map(|(_, runs)| runs)
            .any(|r| matches!(r, Err(e) if *e.root() == Error::DegenerateState))
    }
}

fn pool(threads: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| Error::Argument(format!("thread pool: {e}")))
}

/// Evaluates `f` over `cells`, in parallel when `threads > 1`; output order
/// always follows `cells`.
fn map_cells<C, T, F>(cells: &[C], threads: usize, f: F) -> Result<Vec<T>>
where
    C: Sync,
    T: Send,
    F: Fn(&C) -> T + Sync + Send,
{
    if threads <= 1 {
        return Ok(cells.iter().map(f).collect());
    }
    Ok(pool(threads)?.install(|| cells.par_iter().map(f).collect()))
}

/// Runs every algorithm on every seed.
pub fn execute(cfg: &RunConfig, threads: usize) -> Result<RunOutcome> {
    cfg.validate()?;
    let cells: Vec<(Algorithm, usize)> = cfg
        .algorithms
        .iter()
        .flat_map(|&a| (0..cfg.seeds.n_runs).map(move |r| (a, r)))
        .collect();
    let mut results = map_cells(&cells, threads, |&(a, r)| run_cell(cfg, a, r))?.into_iter();
    let traces = cfg
        .algorithms
        .iter()
        .map(|&a| (a, results.by_ref().take(cfg.seeds.n_runs).collect()))
        .collect();
    Ok(RunOutcome {
        config: cfg.clone(),
        traces,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SweepAxis {
    #[serde(rename = "n")]
    N,
    #[serde(rename = "kappa")]
    Kappa,
    #[serde(rename = "K")]
    K,
    #[serde(rename = "snr_db")]
    SnrDb,
    #[serde(rename = "q")]
    Q,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::N => "n",
            SweepAxis::Kappa => "kappa",
            SweepAxis::K => "K",
            SweepAxis::SnrDb => "snr_db",
            SweepAxis::Q => "q",
        }
    }

    /// Copy of `base` with this axis set to `value`. Sweeping `n` keeps the
    /// ratio `K/n` of the base configuration.
    pub fn apply(self, base: &RunConfig, value: f64) -> Result<RunConfig> {
        let mut cfg = base.clone();
        let integer = |v: f64| -> Result<usize> {
            if v.is_finite() && v >= 0.0 && v.fract() == 0.0 {
                Ok(v as usize)
            } else {
                Err(Error::Argument(format!("{} must be a nonnegative integer, got {v}", self.name())))
            }
        };
        match self {
            SweepAxis::N => {
                let n = integer(value)?;
                let ratio = base.instance.k as f64 / base.instance.n as f64;
                cfg.instance.n = n;
                cfg.instance.k = ((ratio * n as f64).round() as usize).clamp(1, n.max(1));
            }
            SweepAxis::Kappa => cfg.instance.kappa = value,
            SweepAxis::K => cfg.instance.k = integer(value)?,
            SweepAxis::SnrDb => {
                cfg.instance.snr_db = if value == f64::INFINITY { None } else { Some(value) }
            }
            SweepAxis::Q => match base.update.link.family() {
                LinkFamily::Tsallis { .. } | LinkFamily::Natural => {
                    cfg.update.link = LinkFunction::tsallis(value).map_err(|e| field("q", e))?;
                }
                other => {
                    return Err(Error::Argument(format!(
                        "a q sweep needs a Tsallis link, not {}",
                        other.id()
                    )))
                }
            },
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

impl fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "n" => Ok(SweepAxis::N),
            "kappa" => Ok(SweepAxis::Kappa),
            "K" | "k" => Ok(SweepAxis::K),
            "snr_db" | "snr" => Ok(SweepAxis::SnrDb),
            "q" => Ok(SweepAxis::Q),
            other => Err(Error::Parse(format!(
                "unknown sweep axis `{other}` (expected n, kappa, K, snr_db or q)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: f64,
    #[serde(flatten)]
    pub summary: AlgorithmSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub axis: SweepAxis,
    pub rows: Vec<SweepRow>,
    /// Axis values whose configuration was rejected.
    pub errors: Vec<String>,
}

/// One summary per (value, algorithm). Cells run independently and are
/// folded in (value, algorithm, seed) order, so the result does not depend on
/// `threads`.
pub fn sweep(base: &RunConfig, axis: SweepAxis, values: &[f64], threads: usize) -> Result<SweepResult> {
    base.validate()?;
    if values.is_empty() {
        return Err(Error::Argument("sweep needs at least one value".into()));
    }
    let mut errors = Vec::new();
    let mut configs = Vec::new();
    for &v in values {
        match axis.apply(base, v) {
            Ok(c) => configs.push((v, c)),
            Err(e) => errors.push(format!("{axis}={v}: {e}")),
        }
    }
    let cells: Vec<(usize, Algorithm, usize)> = configs
        .iter()
        .enumerate()
        .flat_map(|(i, (_, c))| {
            c.algorithms
                .iter()
                .flat_map(move |&a| (0..c.seeds.n_runs).map(move |r| (i, a, r)))
        })
        .collect();
    let mut results = map_cells(&cells, threads, |&(i, a, r)| run_cell(&configs[i].1, a, r))?.into_iter();
    let mut rows = Vec::new();
    for (v, c) in &configs {
        for &a in &c.algorithms {
            let runs: Vec<_> = results.by_ref().take(c.seeds.n_runs).collect();
            rows.push(SweepRow {
                value: *v,
                summary: summarize(a, c.budget.t_max, &runs),
            });
        }
    }
    Ok(SweepResult { axis, rows, errors })
}
