//! Property tests over random inputs.

use proptest::prelude::*;

use twistmc::dynamics::{iterate, replay, MapFamily};
use twistmc::ensemble::{run_ensemble, EnsembleSpec};
use twistmc::normal_form::{default_gamma, gcd, DiffusionPrediction, Mollifier};
use twistmc::par::Execution;
use twistmc::stats::Moments;
use twistmc::strips::{best_rational, classify, farey_window, Zone, ZoneParams};
use twistmc::trig::{sincos_turns, TrigPoly};

fn pair(eps: f64, a: [f64; 3], b: [f64; 3], w: f64) -> MapFamily {
    let p = TrigPoly::from_cos_sin(2, &[], &[(1, vec![a[0]]), (2, vec![a[1]])], &[(1, vec![a[2]])]).unwrap();
    let m = TrigPoly::from_cos_sin(2, &[], &[(2, vec![b[0]])], &[(1, vec![b[1]]), (2, vec![b[2]])]).unwrap();
    let w = TrigPoly::from_cos_sin(2, &[w], &[], &[]).unwrap();
    MapFamily::fair_pair(eps, [p.clone(), p, w.clone()], [m.clone(), m, w]).unwrap()
}

fn amps() -> impl Strategy<Value = [f64; 3]> {
    [-0.33..0.33f64, -0.33..0.33f64, -0.33..0.33f64]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn orbits_replay_and_stay_on_the_torus(a in amps(), b in amps(), r0 in 0.0..1.0f64, seed in any::<u64>()) {
        let fam = pair(0.01, a, b, 0.0);
        let rec = iterate(&fam, (0.3, r0), 500, seed, 1);
        let again = iterate(&fam, (0.3, r0), 500, seed, 1);
        prop_assert_eq!(&rec.r, &again.r);
        prop_assert_eq!(&rec.theta, &again.theta);
        prop_assert!(rec.theta.iter().all(|t| (0.0..1.0).contains(t)));
        let syms: Vec<usize> = rec.symbols.iter().map(|&l| if l == 1 { 0 } else { 1 }).collect();
        prop_assert_eq!(syms.len(), 500);
        let rep = replay(&fam, (0.3, r0), &syms, 1);
        prop_assert_eq!(&rep.r, &rec.r);
    }

    #[test]
    fn one_step_displacement_is_bounded(a in amps(), b in amps(), w in -1.0..1.0f64, r0 in 0.0..1.0f64) {
        let eps = 0.02;
        let fam = pair(eps, a, b, w);
        let rec = iterate(&fam, (0.0, r0), 300, 5, 1);
        for s in rec.r.windows(2) {
            prop_assert!((s[1] - s[0]).abs() <= eps * (1.0 + eps * w.abs()) + 1e-15);
        }
    }

    #[test]
    fn zero_epsilon_freezes_the_action(a in amps(), b in amps(), r0 in 0.0..1.0f64) {
        let fam = pair(0.0, a, b, 0.0);
        let rec = iterate(&fam, (0.1, r0), 200, 9, 1);
        prop_assert!(rec.r.iter().all(|&r| r == r0));
    }

    #[test]
    fn area_preserving_step_has_unit_jacobian(a in amps(), b in amps(), t in 0.05..0.95f64, r in 0.0..1.0f64) {
        let fam = pair(0.05, a, b, 0.0);
        let h = 1e-6;
        for sym in 0..2 {
            let f = |t: f64, r: f64| fam.step(t, r, sym);
            let unwrap = |x: f64, y: f64| x - (x - y).round();
            let base = f(t, r).0;
            let (tp, rp) = f(t + h, r);
            let (tm, rm) = f(t - h, r);
            let (tu, ru) = f(t, r + h);
            let (td, rd) = f(t, r - h);
            let dtt = (unwrap(tp, base) - unwrap(tm, base)) / (2.0 * h);
            let drt = (rp - rm) / (2.0 * h);
            let dtr = (unwrap(tu, base) - unwrap(td, base)) / (2.0 * h);
            let drr = (ru - rd) / (2.0 * h);
            prop_assert!((dtt * drr - dtr * drt - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn drift_ignores_constant_shifts_of_u(a in amps(), b in amps(), c in -0.5..0.5f64, r in 0.05..0.45f64) {
        let fam = pair(0.01, a, b, 0.0);
        let shift = TrigPoly::from_cos_sin(2, &[c], &[], &[]).unwrap();
        let syms: Vec<_> = fam
            .symbols()
            .iter()
            .map(|s| {
                let mut s = s.clone();
                s.u = s.u.add(&shift);
                s
            })
            .collect();
        let shifted = MapFamily::new(0.01, syms, [0.0, 1.0]).unwrap();
        let gamma = default_gamma(2);
        let p0 = DiffusionPrediction::new(&fam, gamma).unwrap();
        let p1 = DiffusionPrediction::new(&shifted, gamma).unwrap();
        prop_assert!((p0.drift_formula(r) - p1.drift_formula(r)).abs() < 1e-12);
    }

    #[test]
    fn mollifier_stays_in_unit_interval(k in 1i64..4, r in 0.0..1.0f64) {
        let m = Mollifier::new(default_gamma(3), 3).unwrap();
        let mu = m.mu(k, r);
        prop_assert!((0.0..=1.0).contains(&mu));
    }

    #[test]
    fn classification_is_consistent(r in 0.0..1.0f64, k in 0usize..3) {
        let eps = [1e-3, 1e-5, 1e-7][k];
        let zp = ZoneParams::new(eps, 0.2, 0.04, 2).unwrap();
        let c = classify(r, &zp);
        match c.zone {
            Zone::Ti => prop_assert!(c.rational.is_none()),
            Zone::Ir => {
                let (_, q) = c.rational.unwrap();
                prop_assert!(q > zp.d as u64 && (q as f64) < zp.q_bound());
                prop_assert!(c.dist <= zp.strip_width());
            }
            z => {
                let (_, q) = c.rational.unwrap();
                prop_assert!(q <= zp.d as u64);
                let (lo, hi) = match z {
                    Zone::Rr => (0.0, zp.rr_width()),
                    Zone::Tz1 => (zp.rr_width(), zp.tz1_width()),
                    _ => (zp.tz1_width(), zp.gamma),
                };
                prop_assert!(c.dist >= lo && c.dist <= hi);
            }
        }
    }

    #[test]
    fn best_rational_recovers_exact_fractions(q in 1u64..200, p in 0u64..200, extra in 0u64..50) {
        let p = p % q;
        prop_assume!(gcd(p, q) == 1);
        let (bp, bq, err) = best_rational(p as f64 / q as f64, q + extra);
        prop_assert_eq!((bp, bq), (p as i64, q));
        prop_assert!(err.abs() < 1e-15);
    }

    #[test]
    fn strips_have_a_unique_governing_rational(c in 0.0..1.0f64, k in 0usize..4) {
        let eps: f64 = [1e-4, 1e-6, 1e-8, 1e-10][k];
        let (beta, b) = (0.2f64, 0.08);
        let qmax = eps.powf(-b).floor() as u64;
        let w = eps.powf(beta);
        let inside = farey_window(c - w, c + w, qmax);
        prop_assert!(inside.len() <= 1, "{:?}", inside);
    }

    #[test]
    fn sincos_matches_libm(x in -50.0..50.0f64) {
        let (s, c) = sincos_turns(x);
        let (s0, c0) = (std::f64::consts::TAU * x).sin_cos();
        prop_assert!((s - s0).abs() < 1e-13 && (c - c0).abs() < 1e-13);
    }

    #[test]
    fn moment_merge_matches_concatenation(
        xs in prop::collection::vec(-10.0..10.0f64, 1..200),
        ys in prop::collection::vec(-10.0..10.0f64, 1..200),
    ) {
        let (a, b) = (Moments::from_slice(&xs), Moments::from_slice(&ys));
        let all: Vec<f64> = xs.iter().chain(&ys).copied().collect();
        let whole = Moments::from_slice(&all);
        let ab = a.merge(&b);
        let ba = b.merge(&a);
        let close = |x: f64, y: f64| (x - y).abs() <= 1e-9 * (1.0 + x.abs().max(y.abs()));
        for m in [ab, ba] {
            prop_assert_eq!(m.n, whole.n);
            prop_assert!(close(m.mean, whole.mean));
            prop_assert!(close(m.variance(), whole.variance()));
            if whole.variance() > 1e-6 {
                prop_assert!(close(m.skewness(), whole.skewness()));
                prop_assert!(close(m.excess_kurtosis(), whole.excess_kurtosis()));
            }
        }
    }
}

#[test]
fn ensemble_merge_is_commutative_and_associative() {
    let fam = MapFamily::cos_sin(0.01);
    let run = |seed| run_ensemble(&fam, (0.0, 0.3), 2000, &EnsembleSpec::new(300, seed), 0, None).unwrap();
    let (a, b, c) = (run(1), run(2), run(3));
    let ab_c = a.merge(&b).unwrap().merge(&c).unwrap();
    let a_bc = a.merge(&b.merge(&c).unwrap()).unwrap();
    let ba = b.merge(&a).unwrap();
    let ab = a.merge(&b).unwrap();
    let rel = |x: f64, y: f64| (x - y).abs() / x.abs().max(1e-300);
    assert!(rel(ab.summary.variance, ba.summary.variance) < 1e-12);
    assert!(rel(ab_c.summary.variance, a_bc.summary.variance) < 1e-12);
    assert!(rel(ab_c.summary.excess_kurtosis, a_bc.summary.excess_kurtosis) < 1e-10);
    assert_eq!(ab_c.orbits, 900);
    assert_eq!(ab_c.histogram.total() + ab_c.histogram.underflow + ab_c.histogram.overflow, 900);
}

#[test]
fn fair_symbols_and_telescoping() {
    let fam = MapFamily::cos_sin(0.01);
    let (n, m) = (10_000u64, 2000u64);
    let st = run_ensemble(&fam, (0.0, 0.3), n, &EnsembleSpec::new(m, 77), 100, None).unwrap();
    assert!(st.mean_label().abs() <= 4.0 / ((n * m) as f64).sqrt(), "{}", st.mean_label());
    assert!(st.telescoping_defect < 1e-12, "{}", st.telescoping_defect);
}

#[test]
fn parallel_and_sequential_runs_agree_bitwise() {
    let fam = MapFamily::cos_sin(0.01);
    let spec = EnsembleSpec::new(500, 4);
    let par = run_ensemble(&fam, (0.0, 0.3), 1000, &spec, 0, None).unwrap();
    let seq = run_ensemble(&fam, (0.0, 0.3), 1000, &spec.with_execution(Execution::Sequential), 0, None).unwrap();
    assert_eq!(par.sample, seq.sample);
}
