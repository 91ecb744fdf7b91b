//! Group logarithms, group exponentials and their derivatives.
//!
//! Every family is a deformation `log_G(x) = G(ln x)` of the natural logarithm
//! together with its compositional inverse `exp_G(y) = exp(G⁻¹(y))`. The
//! families are evaluated in closed form wherever one exists; the Euler and
//! three-parameter Kaniadakis exponentials have no closed form and are obtained
//! by a bracketed Newton solve on the logarithm.
//!
//! A [`LinkFunction`] is addressed on the command line and in configuration
//! files by a descriptor string:
//!
//! ```text
//! natural
//! tsallis:q=0.25
//! kaniadakis1:kappa=0.5
//! kaniadakis3:kappa=0.5,r=0.2,lambda=1.5
//! euler:a=0.6,b=-0.4
//! stretched_exp:alpha=0.5,gamma=0.8
//! super_exp:alpha=0.5,gamma=1.5
//! chain:[tsallis:q=0.5>log|kaniadakis1:kappa=0.5>exp]
//! ```
//!
//! Chain steps are listed outermost first; the innermost map is always the
//! natural logarithm, so the chain above evaluates `log_q(exp_κ(ln w))`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lambert::{lambert_w0, lambert_w0_derivative};

/// Which side of a link pair to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Branch {
    Log,
    Exp,
}

impl Branch {
    pub fn flip(self) -> Branch {
        match self {
            Branch::Log => Branch::Exp,
            Branch::Exp => Branch::Log,
        }
    }
}

impl fmt::Display for Branch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Branch::Log => "log",
            Branch::Exp => "exp",
        })
    }
}

/// A parameterized family of group logarithms.
#[derive(Debug, Clone, PartialEq)]
pub enum LinkFamily {
    Natural,
    /// `(x^{1-q} - 1)/(1-q)`
    Tsallis { q: f64 },
    /// `(x^κ - x^{-κ})/(2κ)`
    Kaniadakis { kappa: f64 },
    /// Three-parameter Kaniadakis logarithm.
    Kaniadakis3 { kappa: f64, r: f64, lambda: f64 },
    /// `(x^a - x^b)/(a-b)`
    Euler { a: f64, b: f64 },
    /// `(1-α)·(ln x/(1-α))^{1/γ}` with a signed power below x = 1.
    StretchedExp { alpha: f64, gamma: f64 },
    /// `(1-α)·(exp(W(ln x)/(γ(1-α))) - 1)` with W the principal Lambert branch.
    SuperExp { alpha: f64, gamma: f64 },
    /// Composition of group logarithms and exponentials applied to `ln x`.
    Chain(Vec<ChainStep>),
}

/// One stage of a chain link: a family evaluated on its `role` branch.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainStep {
    pub family: LinkFamily,
    pub role: Branch,
}

impl ChainStep {
    pub fn new(family: LinkFamily, role: Branch) -> Self {
        ChainStep { family, role }
    }
}

const INVERT_LO: f64 = 1e-12;
const INVERT_HI: f64 = 1e6;
const INVERT_TOL: f64 = 1e-12;
const INVERT_MAX_ITER: usize = 200;

fn param_err(msg: impl Into<String>) -> Error {
    Error::Param(msg.into())
}

fn finite(v: f64, what: impl FnOnce() -> String) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Domain(what()))
    }
}

/// `sign(u)·|u|^p`
fn signed_pow(u: f64, p: f64) -> f64 {
    if u == 0.0 {
        0.0
    } else {
        u.signum() * u.abs().powf(p)
    }
}

/// `p·x^{p-1}` with the convention that a zero exponent contributes nothing.
fn power_slope(p: f64, x: f64) -> f64 {
    if p == 0.0 {
        0.0
    } else {
        p * x.powf(p - 1.0)
    }
}

impl LinkFamily {
    /// Family identifier used in descriptors.
    pub fn id(&self) -> &'static str {
        match self {
            LinkFamily::Natural => "natural",
            LinkFamily::Tsallis { .. } => "tsallis",
            LinkFamily::Kaniadakis { .. } => "kaniadakis1",
            LinkFamily::Kaniadakis3 { .. } => "kaniadakis3",
            LinkFamily::Euler { .. } => "euler",
            LinkFamily::StretchedExp { .. } => "stretched_exp",
            LinkFamily::SuperExp { .. } => "super_exp",
            LinkFamily::Chain(_) => "chain",
        }
    }

    /// Checks the parameter invariants of the family.
    pub fn validate(&self) -> Result<()> {
        let all_finite = |vals: &[f64]| vals.iter().all(|v| v.is_finite());
        match *self {
            LinkFamily::Natural => Ok(()),
            LinkFamily::Tsallis { q } => {
                if !all_finite(&[q]) || q <= 0.0 || q == 1.0 {
                    Err(param_err(format!("tsallis requires q > 0 and q != 1 (got q={q})")))
                } else {
                    Ok(())
                }
            }
            LinkFamily::Kaniadakis { kappa } => {
                if !all_finite(&[kappa]) || kappa == 0.0 || kappa.abs() > 1.0 {
                    Err(param_err(format!(
                        "kaniadakis1 requires kappa in [-1, 1] and kappa != 0 (got kappa={kappa})"
                    )))
                } else {
                    Ok(())
                }
            }
            LinkFamily::Kaniadakis3 { kappa, r, lambda } => {
                if !all_finite(&[kappa, r, lambda])
                    || lambda <= 0.0
                    || kappa.abs() > 1.0
                    || r <= -kappa.abs()
                    || r >= kappa.abs()
                {
                    Err(param_err(format!(
                        "kaniadakis3 requires lambda > 0, kappa in [-1, 1] and -|kappa| < r < |kappa| \
                         (got kappa={kappa}, r={r}, lambda={lambda})"
                    )))
                } else {
                    Ok(())
                }
            }
            LinkFamily::Euler { a, b } => {
                if !all_finite(&[a, b]) || a == b {
                    Err(param_err(format!("euler requires finite a != b (got a={a}, b={b})")))
                } else {
                    Ok(())
                }
            }
            LinkFamily::StretchedExp { alpha, gamma } => {
                if !all_finite(&[alpha, gamma]) || alpha >= 1.0 || gamma <= 0.0 {
                    Err(param_err(format!(
                        "stretched_exp requires alpha < 1 and gamma > 0 (got alpha={alpha}, gamma={gamma})"
                    )))
                } else {
                    Ok(())
                }
            }
            LinkFamily::SuperExp { alpha, gamma } => {
                if !all_finite(&[alpha, gamma]) || alpha <= 0.0 || alpha == 1.0 || gamma < 1.0 {
                    Err(param_err(format!(
                        "super_exp requires alpha > 0, alpha != 1 and gamma >= 1 (got alpha={alpha}, gamma={gamma})"
                    )))
                } else {
                    Ok(())
                }
            }
            LinkFamily::Chain(ref steps) => {
                if steps.is_empty() || steps.len() % 2 != 0 {
                    return Err(param_err(
                        "chain needs a nonempty, even number of steps (log, exp, ..., log, exp)",
                    ));
                }
                for (i, step) in steps.iter().enumerate() {
                    let expected = if i % 2 == 0 { Branch::Log } else { Branch::Exp };
                    if step.role != expected {
                        return Err(param_err(format!(
                            "chain step {i} must have role `{expected}`, got `{}`",
                            step.role
                        )));
                    }
                    step.family.validate()?;
                }
                Ok(())
            }
        }
    }

    /// Evaluates the requested branch at `x`.
    pub(crate) fn eval(&self, x: f64, branch: Branch) -> Result<f64> {
        match branch {
            Branch::Log => self.log(x),
            Branch::Exp => self.exp(x),
        }
    }

    /// Derivative of the requested branch at `x`.
    pub(crate) fn deriv(&self, x: f64, branch: Branch) -> Result<f64> {
        match branch {
            Branch::Log => self.dlog(x),
            Branch::Exp => self.dexp(x),
        }
    }

    pub(crate) fn log(&self, x: f64) -> Result<f64> {
        if x.is_nan() || x < 0.0 {
            return Err(Error::Domain(format!(
                "{} logarithm of negative argument {x}",
                self.id()
            )));
        }
        let l = x.ln();
        let v = match *self {
            LinkFamily::Natural => l,
            LinkFamily::Tsallis { q } => {
                let s = 1.0 - q;
                (s * l).exp_m1() / s
            }
            LinkFamily::Kaniadakis { kappa } => (kappa * l).sinh() / kappa,
            LinkFamily::Kaniadakis3 { kappa, r, lambda } => {
                let (a, b, d) = kaniadakis3_consts(kappa, r, lambda);
                if x == 0.0 {
                    // x^{r-κ} or x^{r+κ} diverges at zero depending on the sign of κ
                    f64::NEG_INFINITY
                } else {
                    (a * ((r + kappa) * l).exp_m1() - b * ((r - kappa) * l).exp_m1()) / d
                }
            }
            LinkFamily::Euler { a, b } => {
                if x == 0.0 {
                    (0f64.powf(a) - 0f64.powf(b)) / (a - b)
                } else {
                    ((a * l).exp_m1() - (b * l).exp_m1()) / (a - b)
                }
            }
            LinkFamily::StretchedExp { alpha, gamma } => {
                let s = 1.0 - alpha;
                s * signed_pow(l / s, 1.0 / gamma)
            }
            LinkFamily::SuperExp { alpha, gamma } => {
                let s = 1.0 - alpha;
                if l.is_infinite() {
                    return Err(Error::Domain(format!("super_exp logarithm undefined at {x}")));
                }
                let w = lambert_w0(l)?;
                s * (w / (gamma * s)).exp_m1()
            }
            LinkFamily::Chain(ref steps) => {
                let mut v = l;
                for step in steps.iter().rev() {
                    v = step.family.eval(v, step.role)?;
                }
                v
            }
        };
        finite(v, || format!("{} logarithm diverges at {x}", self.id()))
    }

    pub(crate) fn exp(&self, y: f64) -> Result<f64> {
        if y.is_nan() {
            return Err(Error::Domain(format!("{} exponential of NaN", self.id())));
        }
        if y == 0.0 {
            return Ok(1.0);
        }
        let v = match *self {
            LinkFamily::Natural => y.exp(),
            LinkFamily::Tsallis { q } => {
                let s = 1.0 - q;
                let a = s * y;
                if 1.0 + a <= 0.0 {
                    if q < 1.0 {
                        return Ok(0.0);
                    }
                    return Err(Error::Domain(format!(
                        "tsallis q={q} exponential undefined at {y}"
                    )));
                }
                (a.ln_1p() / s).exp()
            }
            LinkFamily::Kaniadakis { kappa } => ((kappa * y).asinh() / kappa).exp(),
            LinkFamily::Kaniadakis3 { .. } | LinkFamily::Euler { .. } => self.invert_log(y)?,
            LinkFamily::StretchedExp { alpha, gamma } => {
                let s = 1.0 - alpha;
                (s * signed_pow(y / s, gamma)).exp()
            }
            LinkFamily::SuperExp { alpha, gamma } => {
                let w = super_exp_lambert(alpha, gamma, y)?;
                (w * w.exp()).exp()
            }
            LinkFamily::Chain(ref steps) => {
                let mut v = y;
                for step in steps {
                    v = step.family.eval(v, step.role.flip())?;
                }
                v.exp()
            }
        };
        finite(v, || format!("{} exponential overflows at {y}", self.id()))
    }

    pub(crate) fn dlog(&self, x: f64) -> Result<f64> {
        if x.is_nan() || x < 0.0 {
            return Err(Error::Domain(format!(
                "{} logarithm derivative at negative argument {x}",
                self.id()
            )));
        }
        let l = x.ln();
        let v = match *self {
            LinkFamily::Natural => 1.0 / x,
            LinkFamily::Tsallis { q } => x.powf(-q),
            LinkFamily::Kaniadakis { kappa } => (kappa * l).cosh() / x,
            LinkFamily::Kaniadakis3 { kappa, r, lambda } => {
                let (a, b, d) = kaniadakis3_consts(kappa, r, lambda);
                (a * power_slope(r + kappa, x) - b * power_slope(r - kappa, x)) / d
            }
            LinkFamily::Euler { a, b } => (power_slope(a, x) - power_slope(b, x)) / (a - b),
            LinkFamily::StretchedExp { alpha, gamma } => {
                let u = l / (1.0 - alpha);
                let p = 1.0 / gamma - 1.0;
                let mag = if u == 0.0 {
                    match p.partial_cmp(&0.0) {
                        Some(std::cmp::Ordering::Less) => f64::INFINITY,
                        Some(std::cmp::Ordering::Equal) => 1.0,
                        _ => 0.0,
                    }
                } else {
                    u.abs().powf(p)
                };
                mag / (gamma * x)
            }
            LinkFamily::SuperExp { alpha, gamma } => {
                let s = 1.0 - alpha;
                let w = lambert_w0(l)?;
                (w / (gamma * s)).exp() / gamma * lambert_w0_derivative(w) / x
            }
            LinkFamily::Chain(ref steps) => {
                let mut v = l;
                let mut d = 1.0 / x;
                for step in steps.iter().rev() {
                    d *= step.family.deriv(v, step.role)?;
                    v = step.family.eval(v, step.role)?;
                }
                d
            }
        };
        finite(v, || format!("{} logarithm derivative is singular at {x}", self.id()))
    }

    pub(crate) fn dexp(&self, y: f64) -> Result<f64> {
        if y.is_nan() {
            return Err(Error::Domain(format!("{} exponential derivative of NaN", self.id())));
        }
        let v = match *self {
            LinkFamily::Natural => y.exp(),
            LinkFamily::Tsallis { q } => {
                let s = 1.0 - q;
                let a = s * y;
                if 1.0 + a <= 0.0 {
                    if q < 1.0 {
                        return Ok(0.0);
                    }
                    return Err(Error::Domain(format!(
                        "tsallis q={q} exponential undefined at {y}"
                    )));
                }
                (q / s * a.ln_1p()).exp()
            }
            LinkFamily::Kaniadakis { kappa } => {
                self.exp(y)? / (1.0 + kappa * kappa * y * y).sqrt()
            }
            LinkFamily::Kaniadakis3 { .. } | LinkFamily::Euler { .. } => {
                // inverse function theorem
                let x = self.exp(y)?;
                1.0 / self.dlog(x)?
            }
            LinkFamily::StretchedExp { alpha, gamma } => {
                let u = y / (1.0 - alpha);
                let slope = if u == 0.0 {
                    if gamma < 1.0 {
                        f64::INFINITY
                    } else if gamma == 1.0 {
                        1.0
                    } else {
                        0.0
                    }
                } else {
                    gamma * u.abs().powf(gamma - 1.0)
                };
                self.exp(y)? * slope
            }
            LinkFamily::SuperExp { alpha, gamma } => {
                let w = super_exp_lambert(alpha, gamma, y)?;
                let s = 1.0 + y / (1.0 - alpha);
                (w * w.exp()).exp() * w.exp() * (1.0 + w) * gamma / s
            }
            LinkFamily::Chain(ref steps) => {
                let mut v = y;
                let mut d = 1.0;
                for step in steps {
                    let role = step.role.flip();
                    d *= step.family.deriv(v, role)?;
                    v = step.family.eval(v, role)?;
                }
                d * v.exp()
            }
        };
        finite(v, || format!("{} exponential derivative is singular at {y}", self.id()))
    }

    /// Solves `log(x) = y` by Newton iteration in `t = ln x`, safeguarded by bisection.
    fn invert_log(&self, y: f64) -> Result<f64> {
        let f = |t: f64| -> Result<(f64, f64)> {
            let x = t.exp();
            Ok((self.log(x)? - y, self.dlog(x)? * x))
        };
        let (mut lo, mut hi) = (INVERT_LO.ln(), INVERT_HI.ln());
        let (f_lo, _) = f(lo)?;
        let (f_hi, _) = f(hi)?;
        if f_lo > 0.0 || f_hi < 0.0 {
            return Err(Error::Convergence(format!(
                "{} exponential: target {y} lies outside the bracket [{INVERT_LO:e}, {INVERT_HI:e}]",
                self.id()
            )));
        }
        let mut t = 0.0f64.clamp(lo, hi);
        for _ in 0..INVERT_MAX_ITER {
            let (ft, dft) = f(t)?;
            if ft == 0.0 {
                return Ok(t.exp());
            }
            if ft < 0.0 {
                lo = t;
            } else {
                hi = t;
            }
            let newton = t - ft / dft;
            let next = if dft > 0.0 && newton.is_finite() && newton > lo && newton < hi {
                newton
            } else {
                0.5 * (lo + hi)
            };
            if (next - t).abs() <= INVERT_TOL * (1.0 + t.abs()) || hi - lo <= INVERT_TOL {
                return Ok(next.exp());
            }
            t = next;
        }
        Err(Error::Convergence(format!(
            "{} exponential at {y}: no convergence within {INVERT_MAX_ITER} iterations",
            self.id()
        )))
    }
}

fn kaniadakis3_consts(kappa: f64, r: f64, lambda: f64) -> (f64, f64, f64) {
    let a = lambda.powf(kappa);
    let b = lambda.powf(-kappa);
    (a, b, (r + kappa) * a - (r - kappa) * b)
}

/// Lambert value reached by the super-exponential inverse at `y`.
fn super_exp_lambert(alpha: f64, gamma: f64, y: f64) -> Result<f64> {
    let s = 1.0 - alpha;
    let z = y / s;
    if z <= -1.0 {
        return Err(Error::Domain(format!("super_exp exponential undefined at {y}")));
    }
    let w = gamma * s * z.ln_1p();
    if w < -1.0 {
        return Err(Error::Domain(format!(
            "super_exp exponential at {y} leaves the principal Lambert branch"
        )));
    }
    Ok(w)
}

/// A validated link family together with the interval on which its invariants
/// are checked.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkFunction {
    family: LinkFamily,
    domain_lo: f64,
    domain_hi: f64,
}

impl LinkFunction {
    /// Validates the family and attaches its default domain, `(0, 1]` for every
    /// family except the super-exponential, whose Lambert branch restricts it to
    /// `[e^{-1/e}, 1]`.
    pub fn new(family: LinkFamily) -> Result<Self> {
        family.validate()?;
        let domain_lo = match family {
            LinkFamily::SuperExp { .. } => (-1.0 / std::f64::consts::E).exp(),
            _ => 0.0,
        };
        Ok(LinkFunction {
            family,
            domain_lo,
            domain_hi: 1.0,
        })
    }

    pub fn natural() -> Self {
        LinkFunction {
            family: LinkFamily::Natural,
            domain_lo: 0.0,
            domain_hi: 1.0,
        }
    }

    pub fn tsallis(q: f64) -> Result<Self> {
        Self::new(LinkFamily::Tsallis { q })
    }

    pub fn kaniadakis(kappa: f64) -> Result<Self> {
        Self::new(LinkFamily::Kaniadakis { kappa })
    }

    pub fn with_domain(mut self, lo: f64, hi: f64) -> Result<Self> {
        if !(lo >= 0.0 && hi > lo && hi.is_finite()) {
            return Err(Error::Argument(format!("invalid domain [{lo}, {hi}]")));
        }
        self.domain_lo = lo;
        self.domain_hi = hi;
        Ok(self)
    }

    pub fn family(&self) -> &LinkFamily {
        &self.family
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.domain_lo, self.domain_hi)
    }

    /// The Tsallis index when this is a Tsallis link, 1 for the natural log.
    pub fn tsallis_q(&self) -> Option<f64> {
        match self.family {
            LinkFamily::Tsallis { q } => Some(q),
            LinkFamily::Natural => Some(1.0),
            _ => None,
        }
    }

    pub fn log(&self, w: f64) -> Result<f64> {
        self.family.log(w)
    }

    pub fn exp(&self, x: f64) -> Result<f64> {
        self.family.exp(x)
    }

    pub fn derivative(&self, w: f64, which: Branch) -> Result<f64> {
        self.family.deriv(w, which)
    }

    pub fn eval(&self, x: f64, which: Branch) -> Result<f64> {
        self.family.eval(x, which)
    }
}

impl fmt::Display for LinkFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LinkFamily::Natural => write!(f, "natural"),
            LinkFamily::Tsallis { q } => write!(f, "tsallis:q={q}"),
            LinkFamily::Kaniadakis { kappa } => write!(f, "kaniadakis1:kappa={kappa}"),
            LinkFamily::Kaniadakis3 { kappa, r, lambda } => {
                write!(f, "kaniadakis3:kappa={kappa},r={r},lambda={lambda}")
            }
            LinkFamily::Euler { a, b } => write!(f, "euler:a={a},b={b}"),
            LinkFamily::StretchedExp { alpha, gamma } => {
                write!(f, "stretched_exp:alpha={alpha},gamma={gamma}")
            }
            LinkFamily::SuperExp { alpha, gamma } => {
                write!(f, "super_exp:alpha={alpha},gamma={gamma}")
            }
            LinkFamily::Chain(steps) => {
                write!(f, "chain:[")?;
                for (i, step) in steps.iter().enumerate() {
                    if i > 0 {
                        write!(f, "|")?;
                    }
                    write!(f, "{}>{}", step.family, step.role)?;
                }
                write!(f, "]")
            }
        }
    }
}

impl fmt::Display for LinkFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.family.fmt(f)
    }
}

/// Splits `s` on `sep` at bracket depth zero.
fn split_top_level(s: &str, sep: char) -> Vec<&str> {
    let mut parts = Vec::new();
    let mut depth = 0i32;
    let mut start = 0;
    for (i, c) in s.char_indices() {
        match c {
            '[' => depth += 1,
            ']' => depth -= 1,
            c if c == sep && depth == 0 => {
                parts.push(&s[start..i]);
                start = i + c.len_utf8();
            }
            _ => {}
        }
    }
    parts.push(&s[start..]);
    parts
}

fn parse_params(family: &str, body: &str, names: &[&str]) -> Result<Vec<f64>> {
    let mut values: Vec<Option<f64>> = vec![None; names.len()];
    for kv in body.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let (key, val) = kv
            .split_once('=')
            .ok_or_else(|| Error::Parse(format!("{family}: expected key=value, got `{kv}`")))?;
        let key = key.trim();
        let idx = names
            .iter()
            .position(|n| *n == key)
            .ok_or_else(|| Error::Parse(format!("{family}: unknown parameter `{key}`")))?;
        let v: f64 = val
            .trim()
            .parse()
            .map_err(|_| Error::Parse(format!("{family}: `{val}` is not a number")))?;
        values[idx] = Some(v);
    }
    values
        .into_iter()
        .zip(names)
        .map(|(v, n)| v.ok_or_else(|| Error::Parse(format!("{family}: missing parameter `{n}`"))))
        .collect()
}

impl FromStr for LinkFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let (id, body) = s.split_once(':').unwrap_or((s, ""));
        let family = match id.trim() {
            "natural" | "ln" => LinkFamily::Natural,
            "tsallis" => {
                let p = parse_params(id, body, &["q"])?;
                LinkFamily::Tsallis { q: p[0] }
            }
            "kaniadakis1" | "kaniadakis" => {
                let p = parse_params(id, body, &["kappa"])?;
                LinkFamily::Kaniadakis { kappa: p[0] }
            }
            "kaniadakis3" => {
                let p = parse_params(id, body, &["kappa", "r", "lambda"])?;
                LinkFamily::Kaniadakis3 {
                    kappa: p[0],
                    r: p[1],
                    lambda: p[2],
                }
            }
            "euler" => {
                let p = parse_params(id, body, &["a", "b"])?;
                LinkFamily::Euler { a: p[0], b: p[1] }
            }
            "stretched_exp" => {
                let p = parse_params(id, body, &["alpha", "gamma"])?;
                LinkFamily::StretchedExp {
                    alpha: p[0],
                    gamma: p[1],
                }
            }
            "super_exp" => {
                let p = parse_params(id, body, &["alpha", "gamma"])?;
                LinkFamily::SuperExp {
                    alpha: p[0],
                    gamma: p[1],
                }
            }
            "chain" => {
                let inner = body
                    .trim()
                    .strip_prefix('[')
                    .and_then(|b| b.strip_suffix(']'))
                    .ok_or_else(|| Error::Parse(format!("chain: expected `[...]`, got `{body}`")))?;
                let steps = split_top_level(inner, '|')
                    .into_iter()
                    .map(|part| {
                        let (desc, role) = part.rsplit_once('>').ok_or_else(|| {
                            Error::Parse(format!("chain step `{part}` lacks a `>log` or `>exp` role"))
                        })?;
                        let role = match role.trim() {
                            "log" => Branch::Log,
                            "exp" => Branch::Exp,
                            other => {
                                return Err(Error::Parse(format!("unknown chain role `{other}`")))
                            }
                        };
                        Ok(ChainStep::new(desc.parse()?, role))
                    })
                    .collect::<Result<Vec<_>>>()?;
                LinkFamily::Chain(steps)
            }
            other => return Err(Error::Parse(format!("unknown link family `{other}`"))),
        };
        Ok(family)
    }
}

impl FromStr for LinkFunction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        LinkFunction::new(s.parse()?)
    }
}

impl TryFrom<String> for LinkFunction {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<LinkFunction> for String {
    fn from(link: LinkFunction) -> String {
        link.to_string()
    }
}

impl Serialize for LinkFunction {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for LinkFunction {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// `log_G(w)`.
pub fn eval_log(link: &LinkFunction, w: f64) -> Result<f64> {
    link.log(w)
}

/// `exp_G(x)`.
pub fn eval_exp(link: &LinkFunction, x: f64) -> Result<f64> {
    link.exp(x)
}

/// Derivative of the chosen branch at `w`.
pub fn eval_dlink(link: &LinkFunction, w: f64, which: Branch) -> Result<f64> {
    link.derivative(w, which)
}

/// Builds the chain link `step₁ ∘ step₂ ∘ … ∘ ln`, steps listed outermost first.
pub fn compose_chain(steps: Vec<ChainStep>) -> Result<LinkFunction> {
    LinkFunction::new(LinkFamily::Chain(steps))
}

/// Outcome of a grid scan of a link function.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidityReport {
    pub link: String,
    pub grid_lo: f64,
    pub grid_hi: f64,
    pub grid_size: usize,
    /// All first differences of `log_G` positive.
    pub monotone: bool,
    /// Slopes of `log_G` strictly decreasing.
    pub concave_log: bool,
    /// Slopes of `exp_G` strictly increasing over the image of the grid.
    pub convex_exp: bool,
    /// `max |exp_G(log_G(w)) - w| / max(1, w)` over the grid.
    pub round_trip_error: f64,
    pub admissible: bool,
    /// First evaluation failure, if any.
    pub failure: Option<String>,
}

pub const ROUND_TRIP_TOL: f64 = 1e-9;
const GRID_FLOOR: f64 = 1e-6;

/// Log-spaced grid of `size` points on `[lo, hi]`, endpoints exact.
pub fn log_grid(lo: f64, hi: f64, size: usize) -> Vec<f64> {
    let (a, b) = (lo.ln(), hi.ln());
    (0..size)
        .map(|k| {
            if k == 0 {
                lo
            } else if k + 1 == size {
                hi
            } else {
                (a + (b - a) * k as f64 / (size - 1) as f64).exp()
            }
        })
        .collect()
}

fn strictly_monotone_slopes(xs: &[f64], ys: &[f64], increasing: bool) -> bool {
    let slopes: Vec<f64> = xs
        .windows(2)
        .zip(ys.windows(2))
        .map(|(x, y)| (y[1] - y[0]) / (x[1] - x[0]))
        .collect();
    slopes
        .windows(2)
        .all(|s| if increasing { s[1] > s[0] } else { s[1] < s[0] })
}

/// Scans the validated domain for monotonicity, curvature and round-trip
/// accuracy. Failures are reported, never returned as errors.
pub fn validate_params(link: &LinkFunction, grid_size: usize) -> ValidityReport {
    let size = grid_size.max(16);
    let (lo, hi) = link.domain();
    let lo = lo.max(GRID_FLOOR);
    let grid = log_grid(lo, hi, size);
    let mut report = ValidityReport {
        link: link.to_string(),
        grid_lo: lo,
        grid_hi: hi,
        grid_size: size,
        monotone: false,
        concave_log: false,
        convex_exp: false,
        round_trip_error: f64::INFINITY,
        admissible: false,
        failure: None,
    };

    let logs = match grid.iter().map(|&w| link.log(w)).collect::<Result<Vec<_>>>() {
        Ok(v) => v,
        Err(e) => {
            report.failure = Some(e.to_string());
            return report;
        }
    };
    report.monotone = logs.windows(2).all(|p| p[1] > p[0]);
    report.concave_log = strictly_monotone_slopes(&grid, &logs, false);

    let mut rt = 0.0f64;
    for (&w, &y) in grid.iter().zip(&logs) {
        match link.exp(y) {
            Ok(back) => rt = rt.max((back - w).abs() / w.max(1.0)),
            Err(e) => {
                report.failure.get_or_insert(e.to_string());
                rt = f64::INFINITY;
            }
        }
    }
    report.round_trip_error = rt;

    if report.monotone {
        let (y0, y1) = (logs[0], logs[size - 1]);
        let ys: Vec<f64> = (0..size)
            .map(|k| y0 + (y1 - y0) * k as f64 / (size - 1) as f64)
            .collect();
        match ys.iter().map(|&y| link.exp(y)).collect::<Result<Vec<_>>>() {
            Ok(exps) => report.convex_exp = strictly_monotone_slopes(&ys, &exps, true),
            Err(e) => {
                report.failure.get_or_insert(e.to_string());
            }
        }
    }

    report.admissible = report.monotone && report.round_trip_error <= ROUND_TRIP_TOL;
    report
}
