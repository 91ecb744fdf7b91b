//! Self-check suite: curvature bounds, link invariants, operator
//! normalization, KKT planting and noise calibration.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::analysis::{self, Geometry};
use crate::error::Result;
use crate::links::{log_grid, validate_params, LinkFunction};
use crate::scqp::{self, InstanceSpec, NoiseModel, SpectralOperator};
use crate::updates::{run, Algorithm, Exact, GradientNoise, RunOptions, SimplexVector, StoppingRule, UpdateConfig};
use crate::Error;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub observed: f64,
    pub bound: f64,
    pub passed: bool,
    /// Advisory checks are reported but do not decide the overall verdict.
    pub advisory: bool,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub detail: String,
}

impl Check {
    /// Passes when `observed ≤ bound`.
    pub fn at_most(name: impl Into<String>, observed: f64, bound: f64) -> Self {
        Check {
            name: name.into(),
            observed,
            bound,
            passed: observed <= bound,
            advisory: false,
            detail: String::new(),
        }
    }

    fn detail(mut self, d: impl Into<String>) -> Self {
        self.detail = d.into();
        self
    }

    fn advisory(mut self) -> Self {
        self.advisory = true;
        self
    }

    fn failed(name: &str, e: &Error) -> Self {
        Check {
            name: name.into(),
            observed: f64::NAN,
            bound: f64::NAN,
            passed: false,
            advisory: false,
            detail: e.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub passed: bool,
    pub checks: Vec<Check>,
}

impl VerifyReport {
    pub fn new(checks: Vec<Check>) -> Self {
        VerifyReport {
            passed: checks.iter().all(|c| c.passed || c.advisory),
            checks,
        }
    }
}

fn guard(name: &str, f: impl FnOnce() -> Result<Check>) -> Check {
    f().unwrap_or_else(|e| Check::failed(name, &e))
}

/// Three parameter settings for every registered family.
pub fn reference_links() -> Vec<LinkFunction> {
    [
        "natural",
        "tsallis:q=0.25",
        "tsallis:q=0.7",
        "tsallis:q=1.5",
        "kaniadakis1:kappa=0.2",
        "kaniadakis1:kappa=0.5",
        "kaniadakis1:kappa=-0.8",
        "kaniadakis3:kappa=0.5,r=0.2,lambda=1.5",
        "kaniadakis3:kappa=0.3,r=-0.1,lambda=2",
        "kaniadakis3:kappa=0.8,r=0.5,lambda=0.5",
        "euler:a=0.6,b=-0.4",
        "euler:a=0.3,b=-0.2",
        "euler:a=0.1,b=-0.5",
        "stretched_exp:alpha=0.5,gamma=0.8",
        "stretched_exp:alpha=0.2,gamma=2",
        "stretched_exp:alpha=-1,gamma=1.5",
        "super_exp:alpha=0.5,gamma=1.5",
        "super_exp:alpha=2,gamma=1",
        "super_exp:alpha=0.3,gamma=3",
        "chain:[tsallis:q=0.5>log|kaniadakis1:kappa=0.5>exp]",
        "chain:[kaniadakis1:kappa=0.3>log|tsallis:q=1.5>exp]",
        "chain:[euler:a=0.3,b=-0.2>log|kaniadakis1:kappa=0.4>exp]",
    ]
    .iter()
    .map(|s| s.parse().expect("reference link descriptors are valid"))
    .collect()
}

/// Worst round-trip error over the 64-point grid of every reference link.
pub fn round_trip_check() -> Check {
    let mut worst = 0.0f64;
    let mut culprit = String::new();
    for link in reference_links() {
        let r = validate_params(&link, 64);
        let err = if r.round_trip_error.is_nan() { f64::INFINITY } else { r.round_trip_error };
        if err > worst || !r.monotone {
            worst = worst.max(err);
            culprit = format!("{link} (monotone: {})", r.monotone);
        }
    }
    Check::at_most("link_round_trip", worst, 1e-9).detail(culprit)
}

/// Seeded pairs in `(0, 3]²`.
pub fn random_pairs(count: usize, seed: u64) -> Vec<(f64, f64)> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| (3.0 - r.random_range(0.0..3.0), 3.0 - r.random_range(0.0..3.0)))
        .collect()
}

pub fn group_law_checks() -> Vec<Check> {
    let pairs = random_pairs(20, 17);
    [
        ("group_law_natural", LinkFunction::natural()),
        ("group_law_tsallis", LinkFunction::tsallis(0.3).expect("valid")),
        ("group_law_kaniadakis", LinkFunction::kaniadakis(0.4).expect("valid")),
    ]
    .into_iter()
    .map(|(name, link)| guard(name, || Ok(Check::at_most(name, analysis::group_law_check(&link, &pairs)?, 1e-10))))
    .collect()
}

/// `q` on the 99-point grid `0.01, …, 0.99`.
pub fn q_grid() -> Vec<f64> {
    (1..=99).map(|i| i as f64 / 100.0).collect()
}

pub fn curvature_checks() -> Vec<Check> {
    let mut out = Vec::new();
    out.push(guard("dmd_condition_bound_le_e", || {
        let worst = q_grid()
            .into_iter()
            .map(analysis::dmd_condition_bound)
            .collect::<Result<Vec<f64>>>()?
            .into_iter()
            .fold(0.0, f64::max);
        Ok(Check::at_most("dmd_condition_bound_le_e", worst, std::f64::consts::E))
    }));

    out.push(guard("dmd_curvature_extrema", || {
        let mut grid: Vec<f64> = (0..=200).map(|i| i as f64 / 200.0).collect();
        grid.extend(log_grid(1e-6, 1.0, 64));
        let mut worst = 0.0f64;
        for q in q_grid() {
            let r = analysis::curvature_profile(&LinkFunction::tsallis(q)?, Geometry::Dmd, &grid)?;
            let lf = analysis::dmd_condition_bound(q)?;
            worst = worst.max((r.mu_f - 1.0).abs()).max((r.l_f - lf).abs() / lf);
        }
        Ok(Check::at_most("dmd_curvature_extrema", worst, 1e-9))
    }));

    out.push(guard("geg_truncated_extrema", || {
        let mut worst = 0.0f64;
        for q in q_grid() {
            for delta in [1e-4, 1e-2, 0.3] {
                let grid = log_grid(delta, 1.0, 64);
                let r = analysis::curvature_profile(&LinkFunction::tsallis(q)?, Geometry::Geg, &grid)?;
                let k = analysis::geg_truncated_condition(q, delta)?;
                worst = worst.max((r.kappa_f - k).abs() / k);
            }
        }
        Ok(Check::at_most("geg_truncated_extrema", worst, 1e-9))
    }));

    out.push(guard("dmd_smoothness_q025", || {
        let lf = analysis::dmd_condition_bound(0.25)?;
        Ok(Check::at_most("dmd_smoothness_q025", (lf - 1.205).abs(), 5e-4)
            .detail(format!("L_F = {lf:.6}, expected 1.205")))
    }));
    out
}

/// Compares the power-iteration norm and the Rayleigh quotient range of `op`
/// with the normalization `λ_max = 1`, `λ_min = 1/κ`.
pub fn spectral_check(op: &SpectralOperator, kappa: f64) -> Check {
    guard("spectral_normalization", || {
        let norm = scqp::power_norm(op, 500, 11)?;
        let mut r = ChaCha8Rng::seed_from_u64(5);
        let mut lo = f64::INFINITY;
        for _ in 0..20 {
            let w: Vec<f64> = (0..op.n()).map(|_| r.random_range(-1.0..1.0)).collect();
            let qw = op.apply(&w)?;
            let rq = w.iter().zip(&qw).map(|(a, b)| a * b).sum::<f64>() / w.iter().map(|a| a * a).sum::<f64>();
            lo = lo.min(rq);
        }
        let below = (1.0 / kappa - 1e-9 - lo).max(0.0);
        let dev = (norm - 1.0).abs().max(below);
        Ok(Check::at_most("spectral_normalization", dev, 1e-3)
            .detail(format!("power-iteration norm {norm:.9}, smallest Rayleigh quotient {lo:.6}")))
    })
}

pub fn kkt_check(instances: usize) -> Check {
    guard("kkt_planting", || {
        let mut worst = 0.0f64;
        for s in 0..instances as u64 {
            let n = if s % 2 == 0 { 64 } else { 1000 };
            let inst = InstanceSpec {
                n,
                kappa: 1e3,
                k: 1 + (s as usize * 7) % (n / 2),
                seed: s,
                ..Default::default()
            }
            .build()?;
            worst = worst.max(inst.kkt_residual()?).max(scqp::optimum_fw_gap(&inst)?);
        }
        Ok(Check::at_most("kkt_planting", worst, 1e-10))
    })
}

/// Relative error of the empirical noise standard deviation at `snr_db`.
pub fn noise_calibration_error(snr_db: f64, draws: usize) -> f64 {
    let g: Vec<f64> = (0..draws).map(|i| ((i as f64) * 0.37).sin() + 0.5).collect();
    let model = NoiseModel {
        snr_db: Some(snr_db),
        seed: 99,
    };
    let sigma = model.sigma(&g);
    let noisy = model.stream().perturb(&g);
    let mut acc = 0.0;
    for (a, b) in noisy.iter().zip(&g) {
        acc += (a - b) * (a - b);
    }
    let empirical = (acc / draws as f64).sqrt();
    (empirical - sigma).abs() / sigma
}

pub fn noise_checks() -> Vec<Check> {
    [0.0, 20.0, 40.0]
        .into_iter()
        .map(|snr| Check::at_most(format!("noise_calibration_{snr}db"), noise_calibration_error(snr, 10_000), 0.02))
        .collect()
}

/// DMD at 90% of its step bound for 500 iterations: no degeneracy and a
/// decreasing gap ratio.
pub fn dmd_stability_check(n: usize, q: f64) -> Check {
    guard("dmd_stable_step", || {
        let inst = InstanceSpec {
            n,
            kappa: 1e3,
            k: n / 10,
            seed: 3,
            ..Default::default()
        }
        .build()?;
        let eta = 0.9 * analysis::max_stable_step(Geometry::Dmd, q, None)?;
        let cfg = UpdateConfig::new(Algorithm::Dmd, LinkFunction::tsallis(q)?, eta);
        let tr = run(&inst, &mut Exact, SimplexVector::uniform(n), &cfg, &RunOptions::new(500).stop(StoppingRule::never()))?;
        let at = |t: usize| tr.rows.iter().find(|r| r.t == t).map_or(f64::NAN, |r| r.delta_t);
        let (d100, d250, d500) = (at(100), at(250), at(500));
        let trending = d500 <= d250 && d250 <= d100 && d100 < 1.0;
        Ok(Check {
            name: "dmd_stable_step".into(),
            observed: d500,
            bound: 1.0,
            passed: trending,
            advisory: false,
            detail: format!("eta = {eta:.4}; delta_t at 100/250/500 = {d100:.3e}/{d250:.3e}/{d500:.3e}"),
        })
    })
}

/// GEG at five times its step bound at the uniform start. The bound is a
/// guideline, so this check is advisory: it passes when the run degenerates or
/// ends with a larger gap than it started with.
pub fn geg_instability_check(n: usize, q: f64) -> Check {
    guard("geg_unstable_step", || {
        let inst = InstanceSpec {
            n,
            kappa: 1e3,
            k: n / 10,
            seed: 3,
            ..Default::default()
        }
        .build()?;
        let w0 = SimplexVector::uniform(n);
        let w_min = w0.min();
        let eta = 5.0 * analysis::max_stable_step(Geometry::Geg, q, Some(w_min))?;
        let cfg = UpdateConfig::new(Algorithm::Geg, LinkFunction::tsallis(q)?, eta);
        let (observed, diverged) = match run(&inst, &mut Exact, w0, &cfg, &RunOptions::new(200).stop(StoppingRule::never())) {
            Ok(tr) => {
                let d = tr.last().map_or(f64::NAN, |r| r.delta_t);
                (d, !(d < 1.0))
            }
            Err(e) if *e.root() == Error::DegenerateState => (f64::INFINITY, true),
            Err(e) => return Err(e),
        };
        Ok(Check {
            name: "geg_unstable_step".into(),
            observed,
            bound: 1.0,
            passed: diverged,
            advisory: false,
            detail: format!("eta = {eta:.4}; final delta_t after 200 iterations = {observed:.3e}"),
        }
        .advisory())
    })
}

/// Every check, in a fixed order.
pub fn run_all() -> VerifyReport {
    let mut checks = vec![round_trip_check()];
    checks.extend(group_law_checks());
    checks.extend(curvature_checks());
    checks.push(guard("spectral_normalization", || {
        Ok(spectral_check(&scqp::make_operator(256, 100.0, 1)?, 100.0))
    }));
    checks.push(kkt_check(20));
    checks.extend(noise_checks());
    checks.push(dmd_stability_check(256, 0.25));
    checks.push(geg_instability_check(256, 0.25));
    VerifyReport::new(checks)
}
