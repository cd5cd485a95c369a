//! Numerical checks of the non-degeneracy hypotheses H0 to H5 with replayable witnesses.

use serde::Serialize;

use crate::dynamics::MapFamily;
use crate::error::{Error, Result};
use crate::normal_form::resonant_part;
use crate::strips::farey_window;
use crate::trig::{horner, Series};

/// Threshold for every strict inequality.
pub const TAU_H: f64 = 1e-8;
pub const THETA_GRID: usize = 4096;
const REFINE_CANDIDATES: usize = 8;
/// Minima below this multiple of the threshold are reported as marginal.
const MARGIN: f64 = 100.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Holds,
    HoldsWithinTolerance,
    Fails,
}

impl Verdict {
    fn from_min(min: f64, tol: f64) -> Verdict {
        if min <= tol {
            Verdict::Fails
        } else if min <= MARGIN * tol {
            Verdict::HoldsWithinTolerance
        } else {
            Verdict::Holds
        }
    }

    pub fn fails(self) -> bool {
        self == Verdict::Fails
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct Witness {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub theta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub r: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p: Option<i64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub q: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k: Option<i64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub symbol: Option<i32>,
    /// Value of the checked quantity at the witness.
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Check {
    pub verdict: Verdict,
    /// Smallest value of the checked quantity; absent for structural checks.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub min: Option<f64>,
    pub witnesses: Vec<Witness>,
}

impl Check {
    fn holds() -> Check {
        Check { verdict: Verdict::Holds, min: None, witnesses: Vec::new() }
    }

    fn from_min(min: f64, at: Witness, tol: f64) -> Check {
        let verdict = Verdict::from_min(min, tol);
        let witnesses = if verdict.fails() { vec![at] } else { Vec::new() };
        Check { verdict, min: Some(min), witnesses }
    }

    fn fails(witnesses: Vec<Witness>) -> Check {
        Check { verdict: Verdict::Fails, min: None, witnesses }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct HypothesisReport {
    pub h0: Check,
    pub h1: Check,
    pub h2: Check,
    pub h3: Check,
    pub h4: Check,
    pub h5: Check,
    pub tolerance: f64,
    pub theta_grid: usize,
    pub r_window: [f64; 2],
}

impl HypothesisReport {
    pub fn any_fails(&self) -> bool {
        self.checks().iter().any(|(_, c)| c.verdict.fails())
    }

    pub fn checks(&self) -> [(&'static str, &Check); 6] {
        [
            ("h0", &self.h0),
            ("h1", &self.h1),
            ("h2", &self.h2),
            ("h3", &self.h3),
            ("h4", &self.h4),
            ("h5", &self.h5),
        ]
    }
}

/// All six checks on the family's action window.
pub fn check_all(fam: &MapFamily) -> HypothesisReport {
    HypothesisReport {
        h0: check_h0(fam),
        h1: check_h1(fam),
        h2: check_h2(fam, &fam.r_samples(257)),
        h3: Check::holds(),
        h4: check_h4(fam, 2 * fam.degree() as u64),
        h5: check_h5(fam, fam.degree() as u64),
        tolerance: TAU_H,
        theta_grid: THETA_GRID,
        r_window: fam.r_window(),
    }
}

/// Grid minimum of a 1-periodic function refined by golden-section search around the best local minima.
pub fn min_on_circle(f: impl Fn(f64) -> f64, n: usize) -> (f64, f64) {
    let h = 1.0 / n as f64;
    let vals: Vec<f64> = (0..n).map(|i| f(i as f64 * h)).collect();
    let mut cands: Vec<usize> = (0..n)
        .filter(|&i| vals[i] <= vals[(i + n - 1) % n] && vals[i] <= vals[(i + 1) % n])
        .collect();
    cands.sort_by(|&a, &b| vals[a].total_cmp(&vals[b]));
    cands.truncate(REFINE_CANDIDATES);
    let mut best = (0.0, vals[0]);
    for &i in &cands {
        let (t, v) = golden_min(&f, i as f64 * h - h, i as f64 * h + h);
        let (t, v) = if vals[i] <= v { (i as f64 * h, vals[i]) } else { (t, v) };
        if v < best.1 {
            best = (t.rem_euclid(1.0), v);
        }
    }
    best
}

fn golden_min(f: &impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> (f64, f64) {
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..60 {
        if fc < fd {
            (b, d, fd) = (d, c, fc);
            c = b - g * (b - a);
            fc = f(c);
        } else {
            (a, c, fc) = (c, d, fd);
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    if fc < fd {
        (c, fc)
    } else {
        (d, fd)
    }
}

/// Zero-mean potentials: the constant harmonic of every `v_i` vanishes identically.
pub fn check_h0(fam: &MapFamily) -> Check {
    let w: Vec<Witness> = fam
        .symbols()
        .iter()
        .filter_map(|s| {
            let c0 = s.v.coeff(0);
            (!c0.is_zero()).then(|| Witness {
                k: Some(0),
                symbol: Some(s.label),
                value: c0.coeffs().iter().map(|c| c.norm()).fold(0.0, f64::max),
                ..Default::default()
            })
        })
        .collect();
    if w.is_empty() {
        Check::holds()
    } else {
        Check::fails(w)
    }
}

fn integers_in(window: [f64; 2]) -> Vec<f64> {
    let lo = window[0].floor() as i64;
    let hi = window[1].ceil() as i64;
    (lo..=hi).map(|n| n as f64).collect()
}

/// No common zeroes: `sum_i v_i(theta, n)^2` stays away from zero at integers `n` of the outward-rounded window.
pub fn check_h1(fam: &MapFamily) -> Check {
    let mut worst = (f64::INFINITY, Witness::default());
    for n in integers_in(fam.r_window()) {
        let series: Vec<Series> = fam.symbols().iter().map(|s| s.v.at(n)).collect();
        let (t, v) = min_on_circle(|t| series.iter().map(|s| s.eval(t).powi(2)).sum(), THETA_GRID);
        if v < worst.0 {
            worst = (v, Witness { theta: Some(t), r: Some(n), value: v, ..Default::default() });
        }
    }
    Check::from_min(worst.0, worst.1, TAU_H)
}

/// Replays the H1 quantity at a witness.
pub fn h1_value(fam: &MapFamily, theta: f64, r: f64) -> f64 {
    fam.symbols().iter().map(|s| s.v.eval(theta, r).powi(2)).sum()
}

/// `sigma^2(r) > 0` on the grid, refined between grid points.
pub fn check_h2(fam: &MapFamily, r_grid: &[f64]) -> Check {
    let poly = fam.variance_poly();
    let s2 = |r: f64| horner(&poly, r);
    let mut worst = (f64::INFINITY, 0.0);
    for (i, &r) in r_grid.iter().enumerate() {
        let v = s2(r);
        if v < worst.0 {
            worst = (v, r);
        }
        if i > 0 && i + 1 < r_grid.len() && v <= s2(r_grid[i - 1]) && v <= s2(r_grid[i + 1]) {
            let (rr, vv) = golden_min(&s2, r_grid[i - 1], r_grid[i + 1]);
            if vv < worst.0 {
                worst = (vv, rr);
            }
        }
    }
    Check::from_min(worst.0, Witness { r: Some(worst.1), value: worst.0, ..Default::default() }, TAU_H)
}

/// Resonances `p/q`, `q <= qmax`, relevant for an action window; one period suffices for r-independent potentials.
fn resonances(fam: &MapFamily, qmin: u64, qmax: u64) -> Vec<(i64, u64)> {
    let r_indep = fam.symbols().iter().all(|s| s.v.is_r_independent());
    let [a, b] = if r_indep { [0.0, 1.0] } else { fam.r_window() };
    let mut out = farey_window(a, b + 1e-15, qmax);
    out.retain(|&(_, q)| q >= qmin);
    if r_indep {
        // Only q matters: the translates k/q do not depend on p.
        out.sort_by_key(|&(_, q)| q);
        out.dedup_by_key(|&mut (_, q)| q);
    }
    out
}

/// `sum_{k=1}^q sum_i (v_i - v_0)^2 (theta + k/q, p/q)`: the squared-difference sum for a pair.
pub fn h4_value(fam: &MapFamily, theta: f64, p: i64, q: u64) -> f64 {
    let r = p as f64 / q as f64;
    let syms = fam.symbols();
    (1..=q)
        .map(|k| {
            let t = theta + k as f64 / q as f64;
            let v0 = syms[0].v.eval(t, r);
            syms[1..].iter().map(|s| (s.v.eval(t, r) - v0).powi(2)).sum::<f64>()
        })
        .sum()
}

/// No common periodic orbits, over reduced `p/q` with `d < q <= qmax`.
///
/// Denominators `q <= d` are skipped: at `q = 1` the sum is the square of a zero-mean
/// trigonometric polynomial and vanishes somewhere for every family satisfying H0.
pub fn check_h4(fam: &MapFamily, qmax: u64) -> Check {
    let mut worst = (f64::INFINITY, Witness::default());
    let syms = fam.symbols();
    for (p, q) in resonances(fam, fam.degree() as u64 + 1, qmax) {
        let r = p as f64 / q as f64;
        let diffs: Vec<Series> = syms[1..].iter().map(|s| s.v.sub(&syms[0].v).at(r)).collect();
        let f = |t: f64| {
            (1..=q)
                .map(|k| diffs.iter().map(|d| d.eval(t + k as f64 / q as f64).powi(2)).sum::<f64>())
                .sum::<f64>()
        };
        let (t, v) = min_on_circle(f, THETA_GRID);
        if v < worst.0 {
            worst = (v, Witness { theta: Some(t), r: Some(r), p: Some(p), q: Some(q), value: v, ..Default::default() });
        }
    }
    Check::from_min(worst.0, worst.1, TAU_H)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Zero {
    pub theta: f64,
    pub slope: f64,
}

/// Zeros of a real series on `[0, 1)` by sign changes on a grid and bisection.
pub fn zeros(s: &Series, n: usize) -> Vec<Zero> {
    let h = 1.0 / n as f64;
    let ds = s.d_theta(1);
    let mut out = Vec::new();
    let mut prev = s.eval(0.0);
    for i in 0..n {
        let (a, b) = (i as f64 * h, (i + 1) as f64 * h);
        let fb = s.eval(b);
        if prev == 0.0 {
            out.push(Zero { theta: a, slope: ds.eval(a) });
        } else if prev * fb < 0.0 {
            let (mut lo, mut hi, mut flo) = (a, b, prev);
            for _ in 0..80 {
                let mid = 0.5 * (lo + hi);
                let fm = s.eval(mid);
                if fm == 0.0 {
                    (lo, hi) = (mid, mid);
                    break;
                }
                if (fm < 0.0) == (flo < 0.0) {
                    (lo, flo) = (mid, fm);
                } else {
                    hi = mid;
                }
            }
            let t = 0.5 * (lo + hi);
            out.push(Zero { theta: t, slope: ds.eval(t) });
        }
        prev = fb;
    }
    out
}

/// Double zeros that produce no sign change show up as near-zero local minima of `|s|`.
fn touching_zeros(s: &Series, n: usize, tol: f64) -> Vec<f64> {
    let h = 1.0 / n as f64;
    let vals: Vec<f64> = (0..n).map(|i| s.eval(i as f64 * h)).collect();
    (0..n)
        .filter(|&i| {
            let (a, b, c) = (vals[(i + n - 1) % n], vals[i], vals[(i + 1) % n]);
            a * c > 0.0 && a * b >= 0.0 && b.abs() <= a.abs() && b.abs() <= c.abs()
        })
        .filter_map(|i| {
            let f = |t: f64| s.eval(t).abs();
            let (t, v) = golden_min(&f, (i as f64 - 1.0) * h, (i as f64 + 1.0) * h);
            (v <= tol).then_some(t.rem_euclid(1.0))
        })
        .collect()
}

/// `E v_{p,q}(., p/q)`: the resonant harmonics of the mean potential at the resonance.
pub fn averaged_potential_at(fam: &MapFamily, p: i64, q: u64) -> Series {
    resonant_part(&fam.mean_v(), q).at(p as f64 / q as f64)
}

/// Simple, distinct zeroes of every averaged potential with `q <= qmax`.
pub fn check_h5(fam: &MapFamily, qmax: u64) -> Check {
    let mut witnesses = Vec::new();
    let mut min_slope = f64::INFINITY;
    for (p, q) in resonances(fam, 1, qmax) {
        let s = averaged_potential_at(fam, p, q);
        let wit = |theta: Option<f64>, value: f64| Witness {
            theta,
            r: Some(p as f64 / q as f64),
            p: Some(p),
            q: Some(q),
            value,
            ..Default::default()
        };
        let scale = (0..=s.degree() as i64).map(|k| s.get(k).norm()).fold(0.0, f64::max);
        if scale <= TAU_H {
            witnesses.push(wit(None, scale));
            continue;
        }
        let zs = zeros(&s, THETA_GRID);
        for z in &zs {
            min_slope = min_slope.min(z.slope.abs());
            if z.slope.abs() <= TAU_H {
                witnesses.push(wit(Some(z.theta), z.slope));
            }
        }
        for w in zs.windows(2) {
            if (w[1].theta - w[0].theta).abs() <= 1e-6 {
                witnesses.push(wit(Some(w[0].theta), w[1].theta - w[0].theta));
            }
        }
        for t in touching_zeros(&s, THETA_GRID, TAU_H) {
            let slope = s.d_theta(1).eval(t);
            min_slope = min_slope.min(slope.abs());
            witnesses.push(wit(Some(t), slope));
        }
    }
    if witnesses.is_empty() {
        Check {
            verdict: Verdict::from_min(min_slope, TAU_H),
            min: min_slope.is_finite().then_some(min_slope),
            witnesses,
        }
    } else {
        Check::fails(witnesses)
    }
}

/// `sigma^2_IR(theta, p/q) > 0` at an imaginary rational `q > d`.
pub fn check_sigma_nonvanishing(fam: &MapFamily, p: i64, q: u64) -> Result<Check> {
    if q <= fam.degree() as u64 {
        return Err(Error::Regime(format!(
            "{p}/{q} is a real rational for degree {}; need q > d",
            fam.degree()
        )));
    }
    let r = p as f64 / q as f64;
    let flucts: Vec<(f64, Series)> = fam
        .symbols()
        .iter()
        .zip(fam.v_fluctuations())
        .map(|(s, f)| (s.prob, f.at(r)))
        .collect();
    let sigma = |t: f64| {
        (0..q)
            .map(|k| {
                let x = t + (k as f64 * r).rem_euclid(1.0);
                flucts.iter().map(|(pr, f)| pr * f.eval(x).powi(2)).sum::<f64>()
            })
            .sum::<f64>()
            / q as f64
    };
    let (t, v) = min_on_circle(sigma, THETA_GRID);
    Ok(Check::from_min(
        v,
        Witness { theta: Some(t), r: Some(r), p: Some(p), q: Some(q), value: v, ..Default::default() },
        TAU_H,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trig::{Poly, TrigPoly};

    fn pair(vp: TrigPoly, vm: TrigPoly) -> MapFamily {
        let z = TrigPoly::zero(vp.degree().max(vm.degree()));
        MapFamily::fair_pair(0.01, [vp.clone(), vp, z.clone()], [vm.clone(), vm, z]).unwrap()
    }

    #[test]
    fn h0_examples() {
        let fam = MapFamily::cos_sin(0.01);
        assert_eq!(check_h0(&fam).verdict, Verdict::Holds);
        let shifted = TrigPoly::cos(1, 0.5).add(&TrigPoly::from_harmonics(1, &[(0, Poly::real(&[0.5]))]).unwrap());
        let bad = check_h0(&pair(shifted, TrigPoly::sin(1, 1.0)));
        assert!(bad.verdict.fails());
        assert_eq!(bad.witnesses[0].k, Some(0));
        let lin = TrigPoly::from_harmonics(1, &[(0, Poly::real(&[0.0, 0.5]))]).unwrap();
        assert!(check_h0(&pair(lin, TrigPoly::sin(1, 0.5))).verdict.fails());
    }

    #[test]
    fn h1_examples() {
        let fam = MapFamily::cos_sin(0.01);
        let c = check_h1(&fam);
        assert_eq!(c.verdict, Verdict::Holds);
        assert!((c.min.unwrap() - 1.0).abs() < 1e-9);
        let opposite = pair(TrigPoly::cos(1, 1.0), TrigPoly::cos(1, -1.0));
        let c = check_h1(&opposite);
        assert!(c.verdict.fails());
        let w = &c.witnesses[0];
        let th = w.theta.unwrap();
        assert!((th - 0.25).abs() < 1e-6 || (th - 0.75).abs() < 1e-6);
        assert!(h1_value(&opposite, th, w.r.unwrap()) < TAU_H / 2.0);
    }

    #[test]
    fn h2_examples() {
        let fam = pair(TrigPoly::cos(1, 0.5), TrigPoly::sin(1, 0.5));
        let c = check_h2(&fam, &fam.r_samples(65));
        assert!((c.min.unwrap() - 0.0625).abs() < 1e-12);
        let same = pair(TrigPoly::cos(1, 1.0), TrigPoly::cos(1, 1.0));
        assert!(check_h2(&same, &same.r_samples(65)).verdict.fails());
        // v has c_1 = r/2: symbols v_{+-} = +-(r cos).
        let half = Poly::real(&[0.0, 0.5]);
        let vp = TrigPoly::from_harmonics(1, &[(1, half.clone()), (-1, half)]).unwrap();
        let mk = |w: [f64; 2]| {
            let z = TrigPoly::zero(1);
            MapFamily::renormalized(0.01, vec![
                crate::dynamics::SymbolMap { label: 1, prob: 0.5, u: vp.clone(), v: vp.clone(), w: z.clone() },
                crate::dynamics::SymbolMap { label: -1, prob: 0.5, u: vp.scale(-1.0), v: vp.scale(-1.0), w: z },
            ], w)
            .unwrap()
        };
        let ok = mk([1.0, 2.0]);
        assert_eq!(check_h2(&ok, &ok.r_samples(65)).verdict, Verdict::Holds);
        let bad = mk([-1.0, 1.0]);
        let c = check_h2(&bad, &bad.r_samples(65));
        assert!(c.verdict.fails());
        assert!(c.witnesses[0].r.unwrap().abs() < 1e-6);
    }

    #[test]
    fn h4_examples() {
        let same = pair(TrigPoly::cos(1, 1.0), TrigPoly::cos(1, 1.0));
        let c = check_h4(&same.clone(), 2);
        assert!(c.verdict.fails());
        assert_eq!(c.min, Some(0.0));
        // The literal sum vanishes for cos/sin wherever cos = sin.
        let fam = MapFamily::cos_sin(0.01);
        let c = check_h4(&fam, 2);
        assert!(c.verdict.fails());
        let w = &c.witnesses[0];
        assert!(h4_value(&fam, w.theta.unwrap(), w.p.unwrap(), w.q.unwrap()) < TAU_H / 2.0);
        let plus = TrigPoly::cos(1, 0.5).add(&TrigPoly::cos(2, 0.25));
        let minus = TrigPoly::sin(1, 0.15).add(&TrigPoly::sin(2, -0.2));
        assert_eq!(check_h4(&pair(plus, minus), 4).verdict, Verdict::Holds);
    }

    #[test]
    fn h5_examples() {
        let cos = pair(TrigPoly::cos(1, 1.0), TrigPoly::cos(1, 1.0));
        let zs = zeros(&averaged_potential_at(&cos, 0, 1), THETA_GRID);
        assert_eq!(zs.len(), 2);
        assert!((zs[0].theta - 0.25).abs() < 1e-12 && (zs[1].theta - 0.75).abs() < 1e-12);
        assert_eq!(check_h5(&cos, 1).verdict, Verdict::Holds);
        let null = pair(TrigPoly::cos(1, 1.0), TrigPoly::cos(1, -1.0));
        assert!(check_h5(&null, 1).verdict.fails());
        let c2 = pair(TrigPoly::cos(2, 1.0), TrigPoly::cos(2, 1.0));
        assert_eq!(check_h5(&c2, 2).verdict, Verdict::Holds);
        assert_eq!(zeros(&averaged_potential_at(&c2, 1, 2), THETA_GRID).len(), 4);
        // 1 + cos has a double zero at 1/2.
        let touch = Series::from_fn(1, |k| num_complex::Complex64::new(if k == 0 { 1.0 } else { 0.5 }, 0.0));
        assert_eq!(touching_zeros(&touch, THETA_GRID, TAU_H).len(), 1);
    }

    #[test]
    fn sigma_nonvanishing_examples() {
        let fam = MapFamily::cos_sin(0.01);
        assert_eq!(check_sigma_nonvanishing(&fam, 1, 5).unwrap().verdict, Verdict::Holds);
        assert!(check_sigma_nonvanishing(&fam, 0, 1).is_err());
        let single = pair(TrigPoly::cos(1, 1.0), TrigPoly::cos(1, 0.2));
        assert_eq!(check_sigma_nonvanishing(&single, 1, 3).unwrap().verdict, Verdict::Holds);
        let same = pair(TrigPoly::cos(1, 1.0), TrigPoly::cos(1, 1.0));
        assert!(check_sigma_nonvanishing(&same, 1, 3).unwrap().verdict.fails());
    }
}
