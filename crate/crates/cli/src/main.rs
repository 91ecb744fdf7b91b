//! `gemd`: run, sweep, verify and plot mirror-descent experiments.

mod plot;

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use gemd::experiment::{execute, sweep, AlgorithmSummary, RunOutcome, SweepResult};
use gemd::{Algorithm, IterationTrace, RunConfig, SweepAxis};
use serde_json::json;

use crate::plot::Kind;

#[derive(Parser)]
#[command(name = "gemd", version, about = "Group-entropy mirror descent experiments on sparse simplex QPs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every algorithm on every seed; writes traces/*.csv and summary.json.
    Run(Common),
    /// Sweep one configuration axis; writes sweep.json and sweep.csv.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// One of n, kappa, K, snr_db, q.
        #[arg(long)]
        axis: SweepAxis,
        /// Comma-separated axis values.
        #[arg(long, value_delimiter = ',', required = true, allow_hyphen_values = true)]
        values: Vec<f64>,
    },
    /// Run the numerical self-checks and print a JSON report.
    Verify {
        /// Also write the report to DIR/verify.json.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render traces or a sweep result to DIR/plots/KIND.svg plus a CSV sidecar.
    Plot {
        #[arg(long, value_enum)]
        kind: Kind,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Trace CSVs or directories of them, or one sweep.json.
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
    },
}

#[derive(Args)]
struct Common {
    /// JSON configuration; defaults are used for missing fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Base instance seed; the noise seed is derived from it.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    runs: Option<usize>,
    /// Comma-separated algorithm keys (eg, geg, dmd, mmd-geg, mmd-dmd).
    #[arg(long, value_delimiter = ',')]
    algo: Option<Vec<Algorithm>>,
    /// Worker threads.
    #[arg(long, default_value_t = 1)]
    parallel: usize,
}

/// Offset between the instance and noise seed streams when `--seed` is given.
const NOISE_SEED_OFFSET: u64 = 1_000_003;

impl Common {
    fn config(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => {
                let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                RunConfig::from_json(&text).with_context(|| format!("{}", p.display()))?
            }
            None => RunConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.seeds.instance_seed = s;
            cfg.seeds.noise_seed = s.wrapping_add(NOISE_SEED_OFFSET);
        }
        if let Some(r) = self.runs {
            cfg.seeds.n_runs = r;
        }
        if let Some(a) = &self.algo {
            cfg.algorithms = a.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn write_run(out: &Path, outcome: &RunOutcome) -> Result<Vec<AlgorithmSummary>> {
    let dir = out.join("traces");
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    for (algo, runs) in &outcome.traces {
        for (r, res) in runs.iter().enumerate() {
            match res {
                Ok(tr) => {
                    let path = dir.join(format!("{}_run{r:03}.csv", algo.key()));
                    let mut w = BufWriter::new(File::create(&path).with_context(|| format!("creating {}", path.display()))?);
                    tr.write_csv(&mut w)?;
                    w.flush()?;
                }
                Err(e) => eprintln!("{algo} run {r}: {e}"),
            }
        }
    }
    let summaries = outcome.summaries();
    let doc = json!({ "config": outcome.config, "summaries": summaries });
    write_file(&out.join("summary.json"), format!("{}\n", serde_json::to_string_pretty(&doc)?).as_bytes())?;
    Ok(summaries)
}

fn cmd_run(common: &Common) -> Result<ExitCode> {
    let cfg = common.config()?;
    let outcome = execute(&cfg, common.parallel)?;
    let summaries = write_run(&common.out, &outcome)?;
    for s in &summaries {
        let it = &s.metrics["iterations"];
        println!(
            "{:<8} converged {}/{}  iterations {:.1} +- {:.1}  final rel. FW {:.3e}  final IoU {:.3}",
            s.algorithm.key(),
            s.converged,
            s.runs,
            it.mean,
            it.std,
            s.metrics["final_rel_fw"].mean,
            s.metrics["final_iou"].mean
        );
    }
    Ok(if outcome.any_degenerate() { ExitCode::from(2) } else { ExitCode::SUCCESS })
}

const SWEEP_METRICS: [&str; 6] = [
    "iterations",
    "iter_iou_0.9",
    "recovery_delay",
    "iter_rel_fw_1e-3",
    "final_rel_fw",
    "final_iou",
];

fn sweep_table(res: &SweepResult) -> String {
    let mut out = format!("{},algorithm,runs,converged", res.axis);
    for m in SWEEP_METRICS {
        out.push_str(&format!(",{m}_mean,{m}_std"));
    }
    out.push('\n');
    for row in &res.rows {
        let s = &row.summary;
        out.push_str(&format!("{},{},{},{}", row.value, s.algorithm.key(), s.runs, s.converged));
        for m in SWEEP_METRICS {
            let a = &s.metrics[m];
            out.push_str(&format!(",{},{}", a.mean, a.std));
        }
        out.push('\n');
    }
    out
}

fn cmd_sweep(common: &Common, axis: SweepAxis, values: &[f64]) -> Result<ExitCode> {
    let cfg = common.config()?;
    let res = sweep(&cfg, axis, values, common.parallel)?;
    fs::create_dir_all(&common.out).with_context(|| format!("creating {}", common.out.display()))?;
    write_file(&common.out.join("sweep.json"), format!("{}\n", serde_json::to_string_pretty(&res)?).as_bytes())?;
    write_file(&common.out.join("sweep.csv"), sweep_table(&res).as_bytes())?;
    for row in &res.rows {
        let s = &row.summary;
        let it = &s.metrics["iterations"];
        println!(
            "{}={:<10} {:<8} iterations {:.1} +- {:.1}  final rel. FW {:.3e}",
            axis,
            row.value,
            s.algorithm.key(),
            it.mean,
            it.std,
            s.metrics["final_rel_fw"].mean
        );
        for f in &s.failures {
            eprintln!("{axis}={} {}: {f}", row.value, s.algorithm.key());
        }
    }
    for e in &res.errors {
        eprintln!("{e}");
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_verify(out: Option<&Path>) -> Result<ExitCode> {
    let report = gemd::verify::run_all();
    let text = format!("{}\n", serde_json::to_string_pretty(&report)?);
    if let Some(dir) = out {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        write_file(&dir.join("verify.json"), text.as_bytes())?;
    }
    print!("{text}");
    for c in report.checks.iter().filter(|c| !c.passed) {
        eprintln!(
            "{}{}: observed {:e}, bound {:e}",
            if c.advisory { "advisory " } else { "FAILED " },
            c.name,
            c.observed,
            c.bound
        );
    }
    Ok(if report.passed { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

fn trace_files(inputs: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for p in inputs {
        if p.is_dir() {
            let mut found: Vec<PathBuf> = fs::read_dir(p)
                .with_context(|| format!("reading {}", p.display()))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| f.extension().is_some_and(|x| x == "csv"))
                .collect();
            found.sort();
            if found.is_empty() {
                bail!("{}: no .csv traces", p.display());
            }
            files.extend(found);
        } else {
            files.push(p.clone());
        }
    }
    Ok(files)
}

fn cmd_plot(kind: Kind, out: &Path, inputs: &[PathBuf]) -> Result<ExitCode> {
    let figure = if kind.uses_traces() {
        let mut traces = Vec::new();
        for f in trace_files(inputs)? {
            let file = File::open(&f).with_context(|| format!("opening {}", f.display()))?;
            let tr = IterationTrace::read_csv(BufReader::new(file)).with_context(|| format!("{}", f.display()))?;
            traces.push((f.display().to_string(), tr));
        }
        plot::from_traces(kind, &traces)?
    } else {
        let [path] = inputs else {
            bail!("plot kind `{}` takes exactly one sweep.json", kind.name());
        };
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let res: SweepResult = serde_json::from_str(&text)
            .map_err(|e| anyhow::anyhow!("{}: parse error: line {}: {e}", path.display(), e.line()))?;
        plot::from_sweep(kind, &res)?
    };
    // render fully before touching the output directory
    let svg = figure.svg()?;
    let dir = out.join("plots");
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    write_file(&dir.join(format!("{}.svg", kind.name())), svg.as_bytes())?;
    write_file(&dir.join(format!("{}.csv", kind.name())), figure.sidecar().as_bytes())?;
    Ok(ExitCode::SUCCESS)
}

fn is_degenerate(e: &anyhow::Error) -> bool {
    e.chain()
        .filter_map(|c| c.downcast_ref::<gemd::Error>())
        .any(|g| *g.root() == gemd::Error::DegenerateState)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match &cli.command {
        Command::Run(c) => cmd_run(c),
        Command::Sweep { common, axis, values } => cmd_sweep(common, *axis, values),
        Command::Verify { out } => cmd_verify(out.as_deref()),
        Command::Plot { kind, out, inputs } => cmd_plot(*kind, out, inputs),
    };
    match res {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            if is_degenerate(&e) {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
