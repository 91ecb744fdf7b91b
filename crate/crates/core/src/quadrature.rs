//! Fixed 32-point Gauss–Legendre rule.

use std::sync::OnceLock;

const ORDER: usize = 32;

fn nodes_and_weights() -> &'static [(f64, f64); ORDER] {
    static RULE: OnceLock<[(f64, f64); ORDER]> = OnceLock::new();
    RULE.get_or_init(|| {
        let mut rule = [(0.0, 0.0); ORDER];
        let n = ORDER as f64;
        for i in 0..ORDER {
            // Tricomi initial guess, refined by Newton on P_n
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (mut p0, mut p1) = (1.0, x);
                for k in 2..=ORDER {
                    let k = k as f64;
                    let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
                    p0 = p1;
                    p1 = p2;
                }
                dp = n * (x * p1 - p0) / (x * x - 1.0);
                let dx = p1 / dp;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            rule[i] = (x, 2.0 / ((1.0 - x * x) * dp * dp));
        }
        rule
    })
}

/// `∫_a^b f(s) ds`; the integrand is never evaluated at the endpoints.
pub(crate) fn integrate<F>(a: f64, b: f64, mut f: F) -> crate::Result<f64>
where
    F: FnMut(f64) -> crate::Result<f64>,
{
    let half = 0.5 * (b - a);
    let mid = 0.5 * (b + a);
    let mut acc = 0.0;
    for &(x, w) in nodes_and_weights() {
        acc += w * f(mid + half * x)?;
    }
    Ok(acc * half)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weights_sum_to_two() {
        let s: f64 = nodes_and_weights().iter().map(|p| p.1).sum();
        assert!((s - 2.0).abs() < 1e-14);
    }

    #[test]
    fn exact_for_high_degree_polynomials() {
        let v = integrate(0.0, 2.0, |x| Ok(x.powi(40))).unwrap();
        let exact = 2f64.powi(41) / 41.0;
        assert!((v - exact).abs() / exact < 1e-13);
        let v = integrate(0.0, std::f64::consts::PI, |x| Ok(x.sin())).unwrap();
        assert!((v - 2.0).abs() < 1e-14);
    }
}
