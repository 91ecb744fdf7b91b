use gemd::links::{log_grid, Branch};
use gemd::metrics::{bregman_divergence, fw_gap, iou_topk, stopping_delta};
use gemd::scqp::{make_operator, InstanceSpec};
use gemd::updates::{
    centred_gradient, run, step_dmd, step_eg, step_geg, step_mmd, MmdKind, RunOptions,
    SimplexVector, StoppingRule,
};
use gemd::verify::reference_links;
use gemd::{Algorithm, LinkFunction, UpdateConfig};
use proptest::prelude::*;

fn simplex(n: std::ops::Range<usize>) -> impl Strategy<Value = SimplexVector> {
    prop::collection::vec(1e-3..1.0f64, n).prop_map(|v| SimplexVector::normalize(v).unwrap())
}

fn simplex_and_gradient() -> impl Strategy<Value = (SimplexVector, Vec<f64>)> {
    (2usize..40).prop_flat_map(|n| {
        (
            prop::collection::vec(1e-3..1.0f64, n).prop_map(|v| SimplexVector::normalize(v).unwrap()),
            prop::collection::vec(-3.0..3.0f64, n),
        )
    })
}

fn assert_on_simplex(w: &SimplexVector) {
    let s: f64 = w.as_slice().iter().sum();
    assert!((s - 1.0).abs() <= 1e-12, "sum {s}");
    assert!(w.min() >= 0.0);
}

fn tsallis(q: f64) -> LinkFunction {
    LinkFunction::tsallis(q).unwrap()
}

proptest! {
    #[test]
    fn steppers_stay_on_simplex((w, g) in simplex_and_gradient(), eta in 0.01..2.0f64, q in 0.05..0.95f64) {
        let link = tsallis(q);
        let results = [
            step_eg(&w, &g, eta),
            step_geg(&w, &g, eta, &link, true),
            step_dmd(&w, &g, eta, &link, true),
            step_mmd(&w, &g, eta, &link, MmdKind::GegLink, true),
            step_mmd(&w, &g, eta, &link, MmdKind::DmdLink, true),
        ];
        for r in results {
            match r {
                Ok((next, _)) => assert_on_simplex(&next),
                Err(e) => prop_assert_eq!(e, gemd::Error::DegenerateState),
            }
        }
    }

    #[test]
    fn centring_is_orthogonal((w, g) in simplex_and_gradient()) {
        let c = centred_gradient(&w, &g).unwrap();
        let inner: f64 = w.as_slice().iter().zip(&c).map(|(a, b)| a * b).sum();
        let gmax = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        prop_assert!(inner.abs() <= 1e-12 * gmax.max(1e-300) + 1e-300);
    }

    #[test]
    fn eg_shift_invariance((w, g) in simplex_and_gradient(), eta in 0.01..2.0f64) {
        let (base, _) = step_eg(&w, &g, eta).unwrap();
        for c in [-10.0, 1.0, 1000.0] {
            let shifted: Vec<f64> = g.iter().map(|v| v + c).collect();
            let (other, _) = step_eg(&w, &shifted, eta).unwrap();
            for (a, b) in base.as_slice().iter().zip(other.as_slice()) {
                prop_assert!((a - b).abs() <= 1e-12, "c={} {} vs {}", c, a, b);
            }
        }
    }

    #[test]
    fn zero_gradient_is_fixed(w in simplex(1..30), q in 0.05..0.95f64) {
        let g = vec![0.0; w.len()];
        let link = tsallis(q);
        let outs = [
            step_eg(&w, &g, 1.0).unwrap().0,
            step_geg(&w, &g, 1.0, &link, true).unwrap().0,
            step_dmd(&w, &g, 1.0, &link, true).unwrap().0,
            step_mmd(&w, &g, 1.0, &link, MmdKind::GegLink, true).unwrap().0,
            step_mmd(&w, &g, 1.0, &link, MmdKind::DmdLink, true).unwrap().0,
        ];
        for out in outs {
            for (a, b) in out.as_slice().iter().zip(w.as_slice()) {
                prop_assert!((a - b).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn dmd_branches_cover_every_coordinate((w, g) in simplex_and_gradient(), eta in 0.01..5.0f64) {
        if let Ok((next, d)) = step_dmd(&w, &g, eta, &tsallis(0.25), true) {
            prop_assert_eq!(d.n_dual_branch + d.n_fallback, w.len());
            prop_assert_eq!(d.n_clipped, w.len() - next.nnz());
        }
    }

    #[test]
    fn dmd_zeros_stay_zero((w, g) in simplex_and_gradient(), eta in 0.1..3.0f64) {
        let link = tsallis(0.25);
        if let Ok((first, _)) = step_dmd(&w, &g, eta, &link, true) {
            // a zero with non-negative gradient is clipped again on the dual branch
            let g2: Vec<f64> = first.as_slice().iter().zip(&g).map(|(x, v)| if *x == 0.0 { v.abs() + 1.0 } else { *v }).collect();
            if let Ok((second, _)) = step_dmd(&first, &g2, eta, &link, false) {
                for (a, b) in first.as_slice().iter().zip(second.as_slice()) {
                    if *a == 0.0 {
                        prop_assert_eq!(*b, 0.0);
                    }
                }
            }
        }
    }

    #[test]
    fn fw_gap_is_nonnegative((w, g) in simplex_and_gradient()) {
        prop_assert!(fw_gap(w.as_slice(), &g).unwrap() >= -1e-12);
    }

    #[test]
    fn stopping_delta_scale_invariant(a in 1e-8..10.0f64, b in 1e-8..10.0f64, c in 1e-6..1e6f64) {
        let x = stopping_delta(a, b).unwrap();
        let y = stopping_delta(a * c, b * c).unwrap();
        prop_assert!((x - y).abs() <= 1e-14 * x.max(1.0));
    }

    #[test]
    fn iou_is_a_fraction(w in simplex(2..40), k in 1usize..10, seed in 0u64..1000) {
        let n = w.len();
        let k = k.min(n);
        let support: Vec<usize> = (0..k).map(|i| (seed as usize + 3 * i) % n).collect::<std::collections::BTreeSet<_>>().into_iter().collect();
        let v = iou_topk(w.as_slice(), &support, support.len()).unwrap();
        prop_assert!((0.0..=1.0).contains(&v));
    }

    #[test]
    fn tsallis_bregman_nonnegative(u in simplex(5..6), w in simplex(5..6)) {
        let d = bregman_divergence(&tsallis(0.25), u.as_slice(), w.as_slice()).unwrap();
        prop_assert!(d >= -1e-10);
    }

    #[test]
    fn tsallis_group_law(x in 1e-3..3.0f64, y in 1e-3..3.0f64, q in 0.05..2.0f64) {
        prop_assume!((q - 1.0).abs() > 1e-3);
        let l = tsallis(q);
        let (a, b) = (l.log(x).unwrap(), l.log(y).unwrap());
        let lhs = l.log(x * y).unwrap();
        let rhs = a + b + (1.0 - q) * a * b;
        prop_assert!((lhs - rhs).abs() <= 1e-10 * lhs.abs().max(1.0));
    }

    #[test]
    fn natural_group_law(x in 1e-3..3.0f64, y in 1e-3..3.0f64) {
        let l = LinkFunction::natural();
        prop_assert!((l.log(x * y).unwrap() - l.log(x).unwrap() - l.log(y).unwrap()).abs() <= 1e-12);
    }

    #[test]
    fn operator_rayleigh_quotient_in_spectrum(seed in 0u64..50, kappa in 1.0..1e4f64) {
        let op = make_operator(97, kappa, seed).unwrap();
        let w: Vec<f64> = (0..97).map(|i| ((i as f64 + seed as f64) * 1.7).sin()).collect();
        let qw = op.apply(&w).unwrap();
        let rq = w.iter().zip(&qw).map(|(a, b)| a * b).sum::<f64>() / w.iter().map(|a| a * a).sum::<f64>();
        prop_assert!(rq >= 1.0 / kappa - 1e-9 && rq <= 1.0 + 1e-9);
    }
}

#[test]
fn link_unit_fixed_points() {
    for link in reference_links() {
        let lo = link.domain().0;
        if lo < 1.0 {
            assert_eq!(link.log(1.0).unwrap().abs(), 0.0, "{link}");
        }
        assert_eq!(link.exp(0.0).unwrap(), 1.0, "{link}");
    }
}

#[test]
fn tsallis_reduces_to_natural_log() {
    for q in [1.0 - 1e-8, 1.0 + 1e-8] {
        let l = tsallis(q);
        for w in log_grid(1e-6, 1.0, 64) {
            assert!((l.log(w).unwrap() - w.ln()).abs() <= 1e-5);
        }
    }
}

#[test]
fn derivatives_match_central_differences() {
    for link in reference_links() {
        let (lo, hi) = link.domain();
        let grid = log_grid(lo.max(1e-3) * 1.01, hi * 0.99, 40);
        for w in grid {
            let h = 1e-5 * w;
            let fd = (link.log(w + h).unwrap() - link.log(w - h).unwrap()) / (2.0 * h);
            let an = link.derivative(w, Branch::Log).unwrap();
            assert!((fd - an).abs() <= 1e-5 * an.abs().max(1e-12), "{link} log' at {w}: {an} vs {fd}");

            let y = link.log(w).unwrap();
            let hy = 1e-5 * y.abs().max(1e-3);
            let fd = (link.exp(y + hy).unwrap() - link.exp(y - hy).unwrap()) / (2.0 * hy);
            let an = link.derivative(y, Branch::Exp).unwrap();
            assert!((fd - an).abs() <= 1e-5 * an.abs().max(1e-12), "{link} exp' at {y}: {an} vs {fd}");
        }
    }
}

#[test]
fn chain_log_matches_nested_composition() {
    // log_q(exp_κ(ln w)) written out by hand
    let (q, kappa) = (0.5f64, 0.5f64);
    let chain: LinkFunction = "chain:[tsallis:q=0.5>log|kaniadakis1:kappa=0.5>exp]".parse().unwrap();
    for w in log_grid(1e-4, 1.0, 30) {
        let t = w.ln();
        let e = ((kappa * t).asinh() / kappa).exp();
        let expected = (e.powf(1.0 - q) - 1.0) / (1.0 - q);
        assert!((chain.log(w).unwrap() - expected).abs() <= 1e-10 * expected.abs().max(1.0));
    }
}

#[test]
fn planted_optimum_is_a_minimizer() {
    let inst = InstanceSpec {
        n: 200,
        kappa: 100.0,
        k: 20,
        seed: 8,
        ..Default::default()
    }
    .build()
    .unwrap();
    let ls = inst.loss_star();
    for s in 0..100u64 {
        let v: Vec<f64> = (0..200).map(|i| (((i as u64 * 31 + s * 17) % 97) as f64 + 0.5).sqrt()).collect();
        let w = SimplexVector::normalize(v).unwrap();
        assert!(inst.loss(w.as_slice()).unwrap() - ls >= 0.0);
    }
}

#[test]
fn instances_are_bit_identical() {
    let spec = InstanceSpec {
        n: 300,
        kappa: 500.0,
        k: 30,
        seed: 42,
        ..Default::default()
    };
    let a = spec.build().unwrap();
    let b = spec.build().unwrap();
    assert_eq!(a, b);
    assert_eq!(a.c().iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.c().iter().map(|v| v.to_bits()).collect::<Vec<_>>());
}

#[test]
fn recovery_delay_not_before_first_full_recovery() {
    let inst = InstanceSpec {
        n: 300,
        kappa: 1e3,
        k: 30,
        seed: 1,
        snr_db: Some(10.0),
        ..Default::default()
    }
    .build()
    .unwrap();
    for algo in [Algorithm::Dmd, Algorithm::Geg, Algorithm::Eg] {
        let cfg = UpdateConfig::new(algo, tsallis(0.25), 1.0);
        let mut noise = gemd::NoiseModel { snr_db: Some(10.0), seed: 4 }.stream();
        let tr = run(&inst, &mut noise, SimplexVector::uniform(300), &cfg, &RunOptions::new(150).stop(StoppingRule::never())).unwrap();
        if let (Some(d), Some(f)) = (gemd::metrics::recovery_delay(&tr), gemd::metrics::first_iter_at_iou(&tr, 1.0)) {
            assert!(d >= f);
        }
        assert!(gemd::metrics::certificate_violation(&tr, inst.loss_star()) <= 1e-9);
    }
}
