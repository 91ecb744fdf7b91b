//! Curvature of the mirror potentials, condition numbers and step-size bounds.
//!
//! For a link `f` the potential `F` has `F' = f`, so `h'' = f'`. DMD uses the
//! exponential branch (`h'' = [1+(1-q)w]^{q/(1-q)}` for Tsallis), GEG the
//! logarithm (`h'' = w^{-q}`).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::links::{Branch, LinkFamily, LinkFunction};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Geometry {
    Dmd,
    Geg,
}

impl Geometry {
    fn branch(self) -> Branch {
        match self {
            Geometry::Dmd => Branch::Exp,
            Geometry::Geg => Branch::Log,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvatureReport {
    pub link: String,
    pub geometry: Geometry,
    pub grid: Vec<f64>,
    pub h2: Vec<f64>,
    pub mu_f: f64,
    pub l_f: f64,
    pub kappa_f: f64,
}

/// Evaluates `h''` on `grid ⊂ [0, 1]` and reports its extrema.
pub fn curvature_profile(link: &LinkFunction, geometry: Geometry, grid: &[f64]) -> Result<CurvatureReport> {
    if grid.is_empty() {
        return Err(Error::Argument("empty curvature grid".into()));
    }
    if let Some(w) = grid.iter().find(|w| !(0.0..=1.0).contains(*w)) {
        return Err(Error::Domain(format!("grid point {w} lies outside [0, 1]")));
    }
    let h2 = grid
        .iter()
        .map(|&w| link.derivative(w, geometry.branch()))
        .collect::<Result<Vec<f64>>>()?;
    let mu_f = h2.iter().copied().fold(f64::INFINITY, f64::min);
    let l_f = h2.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(mu_f > 0.0) {
        return Err(Error::Domain(format!(
            "curvature {mu_f} of {link} is not positive on the grid"
        )));
    }
    Ok(CurvatureReport {
        link: link.to_string(),
        geometry,
        grid: grid.to_vec(),
        h2,
        mu_f,
        l_f,
        kappa_f: l_f / mu_f,
    })
}

fn check_q(q: f64) -> Result<()> {
    if q > 0.0 && q < 1.0 {
        Ok(())
    } else {
        Err(Error::Param(format!("q must lie in (0, 1), got {q}")))
    }
}

/// `(2-q)^{q/(1-q)}`, the DMD condition number on the simplex.
pub fn dmd_condition_bound(q: f64) -> Result<f64> {
    check_q(q)?;
    let v = (2.0 - q).powf(q / (1.0 - q));
    assert!(v <= std::f64::consts::E + 1e-12, "DMD bound {v} exceeds e at q = {q}");
    Ok(v)
}

/// `δ^{-q}`, the GEG condition number on the simplex truncated at `δ`.
pub fn geg_truncated_condition(q: f64, delta: f64) -> Result<f64> {
    check_q(q)?;
    if !(delta > 0.0 && delta <= 1.0) {
        return Err(Error::Param(format!("delta must lie in (0, 1], got {delta}")));
    }
    Ok(delta.powf(-q))
}

/// Curvature-based step-size ceiling: `2/(2-q)^{q/(1-q)}` for DMD,
/// `2·w_min^q` for GEG.
pub fn max_stable_step(geometry: Geometry, q: f64, w_min: Option<f64>) -> Result<f64> {
    match geometry {
        Geometry::Dmd => Ok(2.0 / dmd_condition_bound(q)?),
        Geometry::Geg => {
            check_q(q)?;
            match w_min {
                Some(w) if w > 0.0 && w <= 1.0 => Ok(2.0 * w.powf(q)),
                other => Err(Error::Param(format!(
                    "GEG step bound needs w_min in (0, 1], got {other:?}"
                ))),
            }
        }
    }
}

/// Largest `|log_G(xy) - Φ(log_G x, log_G y)|` over `pairs`, for the families
/// with a closed-form group law.
pub fn group_law_check(link: &LinkFunction, pairs: &[(f64, f64)]) -> Result<f64> {
    let phi: Box<dyn Fn(f64, f64) -> f64> = match *link.family() {
        LinkFamily::Natural => Box::new(|a, b| a + b),
        LinkFamily::Tsallis { q } => Box::new(move |a, b| a + b + (1.0 - q) * a * b),
        LinkFamily::Kaniadakis { kappa } => Box::new(move |a: f64, b: f64| {
            let k2 = kappa * kappa;
            a * (1.0 + k2 * b * b).sqrt() + b * (1.0 + k2 * a * a).sqrt()
        }),
        ref other => return Err(Error::UnsupportedFamily(other.id().to_string())),
    };
    let mut worst: f64 = 0.0;
    for &(x, y) in pairs {
        let lhs = link.log(x * y)?;
        let rhs = phi(link.log(x)?, link.log(y)?);
        worst = worst.max((lhs - rhs).abs());
    }
    Ok(worst)
}
