//! Simulation-level checks against closed forms.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use twistmc::dynamics::MapFamily;
use twistmc::ensemble::*;
use twistmc::normal_form::default_gamma;
use twistmc::resonance::composite_map;
use twistmc::stats::ks_normal;
use twistmc::trig::TrigPoly;

fn drift_only(eps: f64, w: f64) -> MapFamily {
    let z = TrigPoly::zero(1);
    let w = TrigPoly::from_cos_sin(1, &[w], &[], &[]).unwrap();
    MapFamily::fair_pair(eps, [z.clone(), z.clone(), w.clone()], [z.clone(), z, w]).unwrap()
}

#[test]
fn deterministic_drift_exits_on_schedule() {
    let (eps, beta, w) = (0.01f64, 0.2, 0.5);
    let fam = drift_only(eps, w);
    let st = stopping_times(&fam, (0.2, 0.3), beta, &EnsembleSpec::new(16, 3), default_max_steps(eps)).unwrap();
    let expect = eps.powf(beta) / (eps * eps * w);
    for rec in &st.records {
        assert_eq!(rec.side, Side::Up);
        assert!((rec.n as f64 - expect).abs() <= 1.0, "{} vs {expect}", rec.n);
        // Exits within one step of the boundary.
        assert!(rec.displacement >= st.width && rec.displacement - st.width <= eps);
    }
}

#[test]
fn exits_land_just_past_the_boundary() {
    let eps = 0.02;
    let st = stopping_times(&MapFamily::cos_sin(eps), (0.0, 0.3), 0.2, &EnsembleSpec::new(200, 8), default_max_steps(eps))
        .unwrap();
    assert_eq!(st.censored(), 0);
    for rec in &st.records {
        let d = rec.displacement.abs();
        assert!(d > st.width && d <= st.width + eps, "{d}");
    }
}

#[test]
fn clt_test_is_calibrated_on_gaussian_samples() {
    let m = 5000;
    let thr = default_ks_threshold(m as u64);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let mut passed = 0;
    for seed in 0..40 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let xs: Vec<f64> = (0..m).map(|_| normal.sample(&mut rng)).collect();
        if ks_normal(&xs, 0.0, 1.0) < thr {
            passed += 1;
        }
        // A 10% variance error is far outside the band at this sample size.
        assert!(ks_normal(&xs, 0.0, 1.5) > thr);
    }
    // 1% level: expect about 0.4 rejections out of 40.
    assert!(passed >= 37, "{passed}/40");
}

#[test]
fn rademacher_sums_with_quasi_periodic_weights() {
    let alpha = 0.5 * (5f64.sqrt() - 1.0);
    let v: Vec<f64> = (0..10_000).map(|k| (std::f64::consts::TAU * k as f64 * alpha).cos()).collect();
    let grid: Vec<f64> = (0..31).map(|i| -3.0 + 0.2 * i as f64).collect();
    let cf = empirical_char_function(&v, &EnsembleSpec::new(20_000, 5), &grid).unwrap();
    assert!((cf.sigma2 - 0.5).abs() < 1e-3);
    assert!(cf.converged);
    for p in &cf.points {
        let reference = (-p.t * p.t / 4.0).exp();
        assert!((p.re - reference).abs() < 0.025, "t = {}: {} vs {reference}", p.t, p.re);
    }
}

/// `v_(+1) = v_(-1) = u = cos(2 pi theta) / 2`: no noise, only the mean potential.
fn noiseless(eps: f64) -> MapFamily {
    let c = TrigPoly::cos(1, 0.5);
    let z = TrigPoly::zero(1);
    MapFamily::fair_pair(eps, [c.clone(), c.clone(), z.clone()], [c.clone(), c, z]).unwrap()
}

#[test]
fn noiseless_hamiltonian_is_nearly_conserved() {
    let eps = 1e-4;
    let fam = noiseless(eps);
    let frame = composite_map(&fam, 0, 1, default_gamma(1)).unwrap();
    let h = rr_h_process(&fam, &frame, HMode::Rr, (0.3, 0.5 * eps.sqrt()), 1000, &EnsembleSpec::new(4, 1)).unwrap();
    assert_eq!(h.escaped, 0);
    assert!(h.total.mean.abs() < 50.0 * eps, "{:?}", h.total);
    assert!(h.increments.mean.abs() < 2.0 * eps);
}

#[test]
fn transition_zone_has_no_drift() {
    let eps = 1e-4;
    let fam = MapFamily::cos_sin(eps);
    let frame = composite_map(&fam, 0, 1, default_gamma(1)).unwrap();
    let r0 = 3.0 * eps.sqrt();
    // A single block from a fixed angle is biased by the phase; 30 rotations average it out.
    // What is left is a second-order correction that vanishes with epsilon, far below the spread.
    let h = rr_h_process(&fam, &frame, HMode::Tz { rho: 0.04 }, (0.1, r0), 1000, &EnsembleSpec::new(2000, 2)).unwrap();
    let inc = h.increments;
    assert!(inc.mean.abs() < 0.01 * inc.variance.sqrt(), "{inc:?}");
    assert_eq!(h.predicted_mean, 0.0);
    assert_eq!(h.escaped, 0);
}

#[test]
fn rr_process_rejects_starts_outside_the_window() {
    let fam = MapFamily::cos_sin(1e-4);
    let frame = composite_map(&fam, 0, 1, default_gamma(1)).unwrap();
    let spec = EnsembleSpec::new(10, 1);
    assert!(rr_h_process(&fam, &frame, HMode::Rr, (0.0, 0.2), 1, &spec).is_err());
    assert!(rr_h_process(&fam, &frame, HMode::Tz { rho: 0.04 }, (0.0, 0.0), 1, &spec).is_err());
}
