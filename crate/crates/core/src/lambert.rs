//! Principal branch of the Lambert W function, W(x)·e^{W(x)} = x for x ≥ −1/e.

use crate::error::{Error, Result};

const BRANCH_POINT: f64 = -1.0 / std::f64::consts::E;
const TOL: f64 = 1e-14;
const MAX_ITER: usize = 50;

pub(crate) fn lambert_w0(x: f64) -> Result<f64> {
    if x.is_nan() {
        return Err(Error::Domain("Lambert W of NaN".into()));
    }
    // Arguments a few ulps below the branch point come from rounding in ln().
    if x < BRANCH_POINT - 1e-15 {
        return Err(Error::Domain(format!(
            "Lambert W0 is undefined below -1/e (got {x})"
        )));
    }
    if x <= BRANCH_POINT {
        return Ok(-1.0);
    }
    if x == 0.0 {
        return Ok(0.0);
    }
    if x.is_infinite() {
        return Ok(f64::INFINITY);
    }

    let mut w = initial_guess(x);
    for _ in 0..MAX_ITER {
        let ew = w.exp();
        let f = w * ew - x;
        let wp1 = w + 1.0;
        if wp1 == 0.0 {
            return Ok(w);
        }
        let denom = ew * wp1 - (w + 2.0) * f / (2.0 * wp1);
        let step = f / denom;
        let next = w - step;
        if !next.is_finite() {
            break;
        }
        if (next - w).abs() <= TOL * (1.0 + next.abs()) {
            return Ok(next);
        }
        w = next;
    }
    Err(Error::Convergence(format!(
        "Halley iteration for Lambert W0({x}) exceeded {MAX_ITER} iterations"
    )))
}

fn initial_guess(x: f64) -> f64 {
    if x < -0.3 {
        // series about the branch point
        let p = (2.0 * (std::f64::consts::E * x + 1.0)).max(0.0).sqrt();
        -1.0 + p - p * p / 3.0 + 11.0 / 72.0 * p * p * p
    } else if x < 3.0 {
        let l = x.ln_1p();
        l * (1.0 - l / (2.0 + l).max(1e-3) * 0.5)
    } else {
        let l = x.ln();
        l - l.ln()
    }
}

/// W'(x) expressed through W so that it stays finite at x = 0.
pub(crate) fn lambert_w0_derivative(w: f64) -> f64 {
    1.0 / (w.exp() * (1.0 + w))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn satisfies_defining_relation() {
        for &x in &[-0.36787944, -0.3, -0.1, 1e-10, 0.5, 1.0, 2.5, 10.0, 1e3, 1e8] {
            let w = lambert_w0(x).unwrap();
            let back = w * w.exp();
            assert!(
                (back - x).abs() <= 1e-12 * x.abs().max(1e-3),
                "x={x} w={w} back={back}"
            );
        }
    }

    #[test]
    fn known_values() {
        // omega constant
        assert!((lambert_w0(1.0).unwrap() - 0.567_143_290_409_783_8).abs() < 1e-15);
        assert_eq!(lambert_w0(BRANCH_POINT).unwrap(), -1.0);
        assert!((lambert_w0(std::f64::consts::E).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn rejects_below_branch_point() {
        assert!(matches!(lambert_w0(-0.5), Err(Error::Domain(_))));
    }
}
