//! Matrix-free simplex-constrained QP benchmark.
//!
//! `Q = Uᵀ Λ U` with `U w = DCT(signs ⊙ w[perm])`, an orthonormal DCT-II, and
//! geometrically decaying eigenvalues from 1 down to `1/κ`. A `K`-sparse optimum
//! is planted by choosing the linear cost so that the KKT conditions hold with
//! complementarity margin `δ`.

use std::fmt;
use std::sync::Arc;

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rustdct::{DctPlanner, TransformType2And3};
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::metrics;
use crate::updates::{GradientNoise, Objective, Reference, SimplexVector};

pub const DEFAULT_DELTA: f64 = 5e-4;

// RNG streams keep operator, support and noise draws independent of each other.
const STREAM_OPERATOR: u64 = 0;
const STREAM_SUPPORT: u64 = 1;
const STREAM_NOISE: u64 = 2;

fn rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

#[derive(Clone)]
pub struct SpectralOperator {
    eigenvalues: Vec<f64>,
    signs: Vec<f64>,
    perm: Vec<usize>,
    kappa: f64,
    seed: u64,
    dct: Arc<dyn TransformType2And3<f64>>,
    /// Orthonormal scale factors `√(1/n)`, `√(2/n)`, …
    scale: Vec<f64>,
}

impl fmt::Debug for SpectralOperator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SpectralOperator")
            .field("n", &self.n())
            .field("kappa", &self.kappa)
            .field("seed", &self.seed)
            .finish_non_exhaustive()
    }
}

impl PartialEq for SpectralOperator {
    fn eq(&self, other: &Self) -> bool {
        self.eigenvalues == other.eigenvalues
            && self.signs == other.signs
            && self.perm == other.perm
            && self.seed == other.seed
    }
}

/// Builds the operator with `λ_i = κ^{-(i-1)/(n-1)}` and seeded signs and permutation.
pub fn make_operator(n: usize, kappa: f64, seed: u64) -> Result<SpectralOperator> {
    if n < 2 {
        return Err(Error::Argument(format!("n must be at least 2, got {n}")));
    }
    if !(kappa.is_finite() && kappa >= 1.0) {
        return Err(Error::Argument(format!("kappa must be at least 1, got {kappa}")));
    }
    let eigenvalues = (0..n)
        .map(|i| kappa.powf(-(i as f64) / (n - 1) as f64))
        .collect();
    let mut r = rng(seed, STREAM_OPERATOR);
    let signs = (0..n)
        .map(|_| if r.random::<bool>() { 1.0 } else { -1.0 })
        .collect();
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut r);
    let mut op = SpectralOperator::from_parts(eigenvalues, signs, perm)?;
    op.kappa = kappa;
    op.seed = seed;
    Ok(op)
}

impl SpectralOperator {
    /// Assembles an operator from explicit parts, without the spectral
    /// normalization `make_operator` guarantees.
    pub fn from_parts(eigenvalues: Vec<f64>, signs: Vec<f64>, perm: Vec<usize>) -> Result<Self> {
        let n = eigenvalues.len();
        check_len(n, signs.len())?;
        check_len(n, perm.len())?;
        if n == 0 {
            return Err(Error::Argument("empty operator".into()));
        }
        if signs.iter().any(|&s| s != 1.0 && s != -1.0) {
            return Err(Error::Argument("signs must be ±1".into()));
        }
        let mut seen = vec![false; n];
        for &p in &perm {
            if p >= n || std::mem::replace(&mut seen[p], true) {
                return Err(Error::Argument("perm is not a permutation".into()));
            }
        }
        if eigenvalues.iter().any(|l| !(l.is_finite() && *l > 0.0)) {
            return Err(Error::Argument("eigenvalues must be positive".into()));
        }
        let kappa = eigenvalues.iter().copied().fold(f64::NEG_INFINITY, f64::max)
            / eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
        let dct = DctPlanner::new().plan_dct2(n);
        let mut scale = vec![(2.0 / n as f64).sqrt(); n];
        scale[0] = (1.0 / n as f64).sqrt();
        Ok(SpectralOperator {
            eigenvalues,
            signs,
            perm,
            kappa,
            seed: 0,
            dct,
            scale,
        })
    }

    pub fn n(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn signs(&self) -> &[f64] {
        &self.signs
    }

    pub fn perm(&self) -> &[usize] {
        &self.perm
    }

    /// `U w`
    pub fn forward(&self, w: &[f64]) -> Result<Vec<f64>> {
        check_len(self.n(), w.len())?;
        let mut x: Vec<f64> = self
            .perm
            .iter()
            .zip(&self.signs)
            .map(|(&p, &s)| s * w[p])
            .collect();
        self.dct.process_dct2(&mut x);
        for (v, s) in x.iter_mut().zip(&self.scale) {
            *v *= s;
        }
        Ok(x)
    }

    /// `Uᵀ z`
    pub fn inverse(&self, z: &[f64]) -> Result<Vec<f64>> {
        check_len(self.n(), z.len())?;
        let mut y: Vec<f64> = z.iter().zip(&self.scale).map(|(v, s)| v * s).collect();
        // the unnormalized DCT-III halves the constant term
        y[0] *= 2.0;
        self.dct.process_dct3(&mut y);
        Ok(self.scatter(&y))
    }

    fn scatter(&self, y: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n()];
        for ((&p, &s), &v) in self.perm.iter().zip(&self.signs).zip(y) {
            out[p] = s * v;
        }
        out
    }

    /// `Q w = Uᵀ Λ U w` in `O(n log n)`.
    pub fn apply(&self, w: &[f64]) -> Result<Vec<f64>> {
        let mut z = self.forward(w)?;
        for (v, l) in z.iter_mut().zip(&self.eigenvalues) {
            *v *= l;
        }
        self.inverse(&z)
    }
}

pub fn apply_q(op: &SpectralOperator, w: &[f64]) -> Result<Vec<f64>> {
    op.apply(w)
}

/// `‖Q‖₂` by power iteration from a seeded random start.
pub fn power_norm(op: &SpectralOperator, iterations: usize, seed: u64) -> Result<f64> {
    let mut r = rng(seed, STREAM_NOISE);
    let mut x: Vec<f64> = (0..op.n()).map(|_| r.sample(StandardNormal)).collect();
    let mut est = 0.0;
    for _ in 0..iterations {
        let norm = dot(&x, &x).sqrt();
        x.iter_mut().for_each(|v| *v /= norm);
        let y = op.apply(&x)?;
        est = dot(&x, &y);
        x = y;
    }
    Ok(est)
}

/// Serializable description of an instance; no matrices are stored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InstanceSpec {
    pub n: usize,
    pub kappa: f64,
    #[serde(rename = "K")]
    pub k: usize,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default)]
    pub seed: u64,
    /// `None` means exact gradients.
    #[serde(default)]
    pub snr_db: Option<f64>,
}

fn default_delta() -> f64 {
    DEFAULT_DELTA
}

impl Default for InstanceSpec {
    fn default() -> Self {
        InstanceSpec {
            n: 1000,
            kappa: 1e3,
            k: 100,
            delta: DEFAULT_DELTA,
            seed: 0,
            snr_db: None,
        }
    }
}

impl InstanceSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::Argument(format!("instance.n must be at least 2, got {}", self.n)));
        }
        if !(self.kappa.is_finite() && self.kappa >= 1.0) {
            return Err(Error::Argument(format!(
                "instance.kappa must be at least 1, got {}",
                self.kappa
            )));
        }
        if self.k == 0 || self.k > self.n {
            return Err(Error::Argument(format!(
                "instance.K must lie in 1..={}, got {}",
                self.n, self.k
            )));
        }
        if !(self.delta.is_finite() && self.delta > 0.0) {
            return Err(Error::Argument(format!(
                "instance.delta must be positive, got {}",
                self.delta
            )));
        }
        if let Some(s) = self.snr_db {
            if s.is_nan() {
                return Err(Error::Argument("instance.snr_db is NaN".into()));
            }
        }
        Ok(())
    }

    pub fn build(&self) -> Result<ScqpInstance> {
        self.validate()?;
        let op = make_operator(self.n, self.kappa, self.seed)?;
        plant_instance(op, self.k, self.delta, self.seed)
    }

    pub fn noise(&self, seed: u64) -> NoiseModel {
        NoiseModel {
            snr_db: self.snr_db,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScqpInstance {
    op: SpectralOperator,
    c: Vec<f64>,
    w_star: SimplexVector,
    support: Vec<usize>,
    delta: f64,
    loss_star: f64,
}

/// Plants a uniformly random `K`-sparse optimum `w* = 1/K` on `S*` and sets
/// `c = -Q w* + δ·1_{∉S*}`.
pub fn plant_instance(op: SpectralOperator, k: usize, delta: f64, seed: u64) -> Result<ScqpInstance> {
    let n = op.n();
    if k == 0 || k > n {
        return Err(Error::Argument(format!("K must lie in 1..={n}, got {k}")));
    }
    if !(delta.is_finite() && delta > 0.0) {
        return Err(Error::Argument(format!("delta must be positive, got {delta}")));
    }
    let mut support = index::sample(&mut rng(seed, STREAM_SUPPORT), n, k).into_vec();
    support.sort_unstable();
    let mut w = vec![0.0; n];
    for &i in &support {
        w[i] = 1.0 / k as f64;
    }
    let w_star = SimplexVector::normalize(w)?;
    let v = op.apply(w_star.as_slice())?;
    let mut c: Vec<f64> = v.iter().map(|x| -x + delta).collect();
    for &i in &support {
        c[i] = -v[i];
    }
    let loss_star = -0.5 * dot(w_star.as_slice(), &v);
    let inst = ScqpInstance {
        op,
        c,
        w_star,
        support,
        delta,
        loss_star,
    };
    inst.kkt_residual()
        .and_then(|r| {
            if r <= 1e-10 {
                Ok(())
            } else {
                Err(Error::Convergence(format!("planted KKT residual {r}")))
            }
        })?;
    Ok(inst)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl ScqpInstance {
    pub fn operator(&self) -> &SpectralOperator {
        &self.op
    }

    pub fn n(&self) -> usize {
        self.op.n()
    }

    pub fn c(&self) -> &[f64] {
        &self.c
    }

    pub fn w_star(&self) -> &SimplexVector {
        &self.w_star
    }

    pub fn support(&self) -> &[usize] {
        &self.support
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    /// `L(w*) = -½ w*ᵀ Q w*`
    pub fn loss_star(&self) -> f64 {
        self.loss_star
    }

    /// `½ wᵀ Q w + cᵀ w` and `Q w + c` from a single operator application.
    pub fn loss_and_gradient(&self, w: &[f64]) -> Result<(f64, Vec<f64>)> {
        let qw = self.op.apply(w)?;
        let loss = 0.5 * dot(w, &qw) + dot(&self.c, w);
        let g = qw.iter().zip(&self.c).map(|(a, b)| a + b).collect();
        Ok((loss, g))
    }

    pub fn loss(&self, w: &[f64]) -> Result<f64> {
        Ok(self.loss_and_gradient(w)?.0)
    }

    pub fn gradient(&self, w: &[f64]) -> Result<Vec<f64>> {
        Ok(self.loss_and_gradient(w)?.1)
    }

    /// Largest deviation of `∇L(w*)` from `(0 on S*, δ off S*)`.
    pub fn kkt_residual(&self) -> Result<f64> {
        let g = self.gradient(self.w_star.as_slice())?;
        let mut on = vec![false; self.n()];
        for &i in &self.support {
            on[i] = true;
        }
        Ok(g.iter()
            .zip(&on)
            .map(|(gi, &s)| if s { gi.abs() } else { (gi - self.delta).abs() })
            .fold(0.0, f64::max))
    }

    pub fn noisy_gradient(&self, w: &[f64], noise: &mut NoiseStream) -> Result<Vec<f64>> {
        let g = self.gradient(w)?;
        Ok(noise.perturb(&g))
    }
}

impl Objective for ScqpInstance {
    fn dim(&self) -> usize {
        self.n()
    }

    fn evaluate(&self, w: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.loss_and_gradient(w)
    }

    fn reference(&self) -> Option<Reference<'_>> {
        Some(Reference {
            loss_star: self.loss_star,
            support: &self.support,
        })
    }
}

/// Additive Gaussian gradient noise at a fixed signal-to-noise ratio.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    /// `None` means exact gradients.
    pub snr_db: Option<f64>,
    pub seed: u64,
}

impl NoiseModel {
    pub fn exact() -> Self {
        NoiseModel {
            snr_db: None,
            seed: 0,
        }
    }

    /// `σ = (‖g‖₂/√n) · 10^{-snr/20}`
    pub fn sigma(&self, g: &[f64]) -> f64 {
        match self.snr_db {
            None => 0.0,
            Some(s) if s == f64::INFINITY => 0.0,
            Some(s) => {
                let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
                norm / (g.len() as f64).sqrt() * 10f64.powf(-s / 20.0)
            }
        }
    }

    pub fn stream(&self) -> NoiseStream {
        NoiseStream {
            model: *self,
            rng: rng(self.seed, STREAM_NOISE),
        }
    }
}

/// A run's private noise generator; `σ` is recalibrated from each clean gradient.
#[derive(Debug, Clone)]
pub struct NoiseStream {
    model: NoiseModel,
    rng: ChaCha8Rng,
}

impl GradientNoise for NoiseStream {
    fn perturb(&mut self, clean: &[f64]) -> Vec<f64> {
        let sigma = self.model.sigma(clean);
        if sigma == 0.0 {
            return clean.to_vec();
        }
        clean
            .iter()
            .map(|g| g + sigma * self.rng.sample::<f64, _>(StandardNormal))
            .collect()
    }
}

/// Uniform start, the default initial iterate.
pub fn uniform_start(inst: &ScqpInstance) -> SimplexVector {
    SimplexVector::uniform(inst.n())
}

/// FW gap of `w*` on its own instance (zero up to rounding).
pub fn optimum_fw_gap(inst: &ScqpInstance) -> Result<f64> {
    let g = inst.gradient(inst.w_star().as_slice())?;
    metrics::fw_gap(inst.w_star().as_slice(), &g)
}
