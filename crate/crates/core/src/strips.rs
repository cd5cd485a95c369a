//! Zone taxonomy of the action axis, rational approximation and resonance counting.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::normal_form::{default_gamma, gcd};
use crate::trig::TrigPoly;

/// Smoothness order used by the admissibility check on `rho`; the potentials are analytic.
pub const DEFAULT_SMOOTHNESS: u32 = 20;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ZoneParams {
    pub epsilon: f64,
    pub beta: f64,
    pub rho: f64,
    pub d: usize,
    pub k1: f64,
    pub k2: f64,
    pub gamma: f64,
    /// Smoothness order `l >= 12`.
    pub l: u32,
}

impl ZoneParams {
    /// `K1 = K2 = 1`, default collar width and smoothness.
    pub fn new(epsilon: f64, beta: f64, rho: f64, d: usize) -> Result<Self> {
        ZoneParams {
            epsilon,
            beta,
            rho,
            d,
            k1: 1.0,
            k2: 1.0,
            gamma: default_gamma(d),
            l: DEFAULT_SMOOTHNESS,
        }
        .validated()
    }

    pub fn validated(self) -> Result<Self> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return bad(format!("epsilon must lie in (0, 1), got {}", self.epsilon));
        }
        if !(self.beta > 0.0 && self.beta <= 0.2) {
            return bad(format!("beta must lie in (0, 1/5], got {}", self.beta));
        }
        if self.l < 12 {
            return bad(format!("smoothness l must be >= 12, got {}", self.l));
        }
        let r_max = (self.l as f64 - 11.0) / (self.l as f64 - 1.0);
        if !(self.rho > 0.0 && self.rho < r_max * self.beta) {
            return bad(format!(
                "rho must lie in (0, {:.6}) for beta = {} and l = {}, got {}",
                r_max * self.beta,
                self.beta,
                self.l,
                self.rho
            ));
        }
        if self.d == 0 {
            return bad("angular degree d must be >= 1".into());
        }
        if !(self.k1 > 0.0 && self.k2 > 0.0 && self.gamma > 0.0) {
            return bad("K1, K2 and gamma must be positive".into());
        }
        Ok(self)
    }

    /// `b = (beta - rho) / 2`.
    pub fn b(&self) -> f64 {
        0.5 * (self.beta - self.rho)
    }

    /// Half-width of an RR strip.
    pub fn rr_width(&self) -> f64 {
        self.k1 * self.epsilon.sqrt()
    }

    /// Outer radius of the first transition zone.
    pub fn tz1_width(&self) -> f64 {
        self.k2 * self.epsilon.powf(1.0 / 6.0)
    }

    /// Half-width of an IR strip.
    pub fn strip_width(&self) -> f64 {
        self.epsilon.powf(self.beta)
    }

    /// Denominator bound `epsilon^{-b}` for IR rationals.
    pub fn q_bound(&self) -> f64 {
        self.epsilon.powf(-self.b())
    }

    /// Largest admissible IR denominator (strictly below `epsilon^{-b}`).
    pub fn ir_qmax(&self) -> u64 {
        let qb = self.q_bound();
        let f = qb.floor();
        if f == qb {
            f as u64 - 1
        } else {
            f as u64
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Zone {
    #[serde(rename = "RR")]
    Rr,
    #[serde(rename = "TZ1")]
    Tz1,
    #[serde(rename = "TZ2")]
    Tz2,
    #[serde(rename = "IR")]
    Ir,
    #[serde(rename = "TI")]
    Ti,
}

impl Zone {
    pub const ALL: [Zone; 5] = [Zone::Rr, Zone::Tz1, Zone::Tz2, Zone::Ir, Zone::Ti];

    pub fn tag(self) -> &'static str {
        match self {
            Zone::Rr => "RR",
            Zone::Tz1 => "TZ1",
            Zone::Tz2 => "TZ2",
            Zone::Ir => "IR",
            Zone::Ti => "TI",
        }
    }

    fn bit(self) -> u8 {
        1 << (self as u8)
    }
}

impl std::str::FromStr for Zone {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Zone::ALL
            .into_iter()
            .find(|z| z.tag().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown zone tag {s:?}")))
    }
}

/// A set of zones, used to choose which zones count as rational strips.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ZoneSet(u8);

impl ZoneSet {
    pub fn of(zones: &[Zone]) -> Self {
        ZoneSet(zones.iter().fold(0, |acc, z| acc | z.bit()))
    }

    pub fn contains(self, z: Zone) -> bool {
        self.0 & z.bit() != 0
    }

    pub fn zones(self) -> Vec<Zone> {
        Zone::ALL.into_iter().filter(|z| self.contains(*z)).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct StripClass {
    pub zone: Zone,
    /// Governing reduced rational; absent for TI.
    pub rational: Option<(i64, u64)>,
    pub dist: f64,
}

/// Nearest reduced `p/q` with `qlo <= q <= qhi`; ties go to the smaller `q`.
fn nearest_in_range(r: f64, qlo: u64, qhi: u64) -> Option<(i64, u64, f64)> {
    let mut best: Option<(i64, u64, f64)> = None;
    for q in qlo.max(1)..=qhi {
        let p = (r * q as f64).round() as i64;
        if gcd(p.unsigned_abs(), q) != 1 {
            continue;
        }
        let dist = (r - p as f64 / q as f64).abs();
        if best.is_none_or(|b| dist < b.2) {
            best = Some((p, q, dist));
        }
    }
    best
}

/// Zone of `r` with precedence RR, TZ1, TZ2, IR, TI.
pub fn classify(r: f64, zp: &ZoneParams) -> StripClass {
    let (p, q, dist) = nearest_in_range(r, 1, zp.d as u64).expect("d >= 1");
    let low = |zone| StripClass { zone, rational: Some((p, q)), dist };
    if dist <= zp.rr_width() {
        return low(Zone::Rr);
    }
    if dist <= zp.tz1_width() {
        return low(Zone::Tz1);
    }
    if dist <= zp.gamma {
        return low(Zone::Tz2);
    }
    let qmax = zp.ir_qmax();
    if qmax > zp.d as u64 {
        if let Some((p, q, dist)) = nearest_in_range(r, zp.d as u64 + 1, qmax) {
            if dist < zp.strip_width() {
                return StripClass { zone: Zone::Ir, rational: Some((p, q)), dist };
            }
        }
    }
    StripClass { zone: Zone::Ti, rational: None, dist: f64::NAN }
}

/// Piecewise-constant zone map of an action window for per-step lookups along orbits.
#[derive(Clone, Debug)]
pub struct ZoneAtlas {
    zp: ZoneParams,
    breaks: Vec<f64>,
    zones: Vec<Zone>,
}

impl ZoneAtlas {
    pub fn new(zp: &ZoneParams, lo: f64, hi: f64) -> Self {
        let mut breaks = vec![lo, hi];
        let mut add = |centre: f64, w: f64| {
            for x in [centre - w, centre + w] {
                if x > lo && x < hi {
                    breaks.push(x);
                }
            }
        };
        let low_widths = [zp.rr_width(), zp.tz1_width(), zp.gamma];
        for (p, q) in farey_window(lo - 1.0, hi + 1.0, zp.d as u64) {
            let c = p as f64 / q as f64;
            for w in low_widths {
                add(c, w);
            }
        }
        let qmax = zp.ir_qmax();
        if qmax > zp.d as u64 {
            for (p, q) in farey_window(lo - 1.0, hi + 1.0, qmax) {
                if q > zp.d as u64 {
                    add(p as f64 / q as f64, zp.strip_width());
                }
            }
        }
        breaks.sort_by(f64::total_cmp);
        breaks.dedup();
        let zones = breaks
            .windows(2)
            .map(|w| classify(0.5 * (w[0] + w[1]), zp).zone)
            .collect();
        ZoneAtlas { zp: *zp, breaks, zones }
    }

    pub fn params(&self) -> &ZoneParams {
        &self.zp
    }

    /// Zone of `r`, using `cursor` as a hint for the segment index.
    #[inline]
    pub fn zone(&self, r: f64, cursor: &mut usize) -> Zone {
        let n = self.zones.len();
        if r < self.breaks[0] || r >= self.breaks[n] {
            return classify(r, &self.zp).zone;
        }
        let mut i = (*cursor).min(n - 1);
        while r < self.breaks[i] {
            i -= 1;
        }
        while r >= self.breaks[i + 1] {
            i += 1;
        }
        *cursor = i;
        self.zones[i]
    }

    pub fn segments(&self) -> impl Iterator<Item = (f64, f64, Zone)> + '_ {
        self.breaks.windows(2).zip(&self.zones).map(|(w, z)| (w[0], w[1], *z))
    }
}

/// Best rational approximation `p/q` of `r` with `q <= qmax`; ties go to the smaller `q`.
pub fn best_rational(r: f64, qmax: u64) -> (i64, u64, f64) {
    assert!(qmax >= 1, "qmax must be >= 1");
    let qmax = qmax.min(1 << 40);
    let den: i128 = 1 << 60;
    let num: i128 = (r * den as f64).round() as i128;
    let (p, q) = best_rational_exact(num, den, qmax as i128);
    (p as i64, q as u64, (r - p as f64 / q as f64).abs())
}

fn best_rational_exact(num: i128, den: i128, qmax: i128) -> (i128, i128) {
    // Convergents h/k of num/den.
    let (mut h0, mut h1) = (0i128, 1i128);
    let (mut k0, mut k1) = (1i128, 0i128);
    let (mut a, mut b) = (num, den);
    loop {
        let t = a.div_euclid(b);
        let (h2, k2) = (t * h1 + h0, t * k1 + k0);
        if k2 > qmax {
            // Semiconvergent with the largest admissible multiplier.
            let m = (qmax - k0) / k1;
            let (hs, ks) = (m * h1 + h0, m * k1 + k0);
            let err = |h: i128, k: i128| (num * k - h * den).abs();
            // Compare err(h1,k1)/k1 against err(hs,ks)/ks without division.
            if m > 0 && err(hs, ks) * k1 < err(h1, k1) * ks {
                return (hs, ks);
            }
            return (h1, k1);
        }
        (h0, h1, k0, k1) = (h1, h2, k1, k2);
        let rem = a - t * b;
        if rem == 0 {
            return (h1, k1);
        }
        (a, b) = (b, rem);
    }
}

/// Continued-fraction convergent denominators of `r` up to `qmax`, with numerators.
pub fn convergents(r: f64, qmax: u64) -> Vec<(i64, u64)> {
    let den: i128 = 1 << 60;
    let num: i128 = (r * den as f64).round() as i128;
    let (mut h0, mut h1) = (0i128, 1i128);
    let (mut k0, mut k1) = (1i128, 0i128);
    let (mut a, mut b) = (num, den);
    let mut out = Vec::new();
    loop {
        let t = a.div_euclid(b);
        let (h2, k2) = (t * h1 + h0, t * k1 + k0);
        if k2 > qmax as i128 {
            break;
        }
        out.push((h2 as i64, k2 as u64));
        (h0, h1, k0, k1) = (h1, h2, k1, k2);
        let rem = a - t * b;
        if rem == 0 {
            break;
        }
        (a, b) = (b, rem);
    }
    out
}

/// Reduced `p/q` with `q <= qmax` in `[lo, hi)`, ascending, via Farey sequences on unit intervals.
pub fn farey_window(lo: f64, hi: f64, qmax: u64) -> Vec<(i64, u64)> {
    let mut out = Vec::new();
    if hi <= lo || qmax == 0 {
        return out;
    }
    // Farey sequence of order qmax on [0, 1).
    let mut unit = vec![(0u64, 1u64)];
    let (mut a, mut b, mut c, mut d) = (0u64, 1u64, 1u64, qmax);
    while c < d {
        unit.push((c, d));
        let k = (qmax + b) / d;
        (a, b, c, d) = (c, d, k * c - a, k * d - b);
    }
    let _ = (a, b);
    let first = lo.floor() as i64;
    let last = hi.ceil() as i64;
    for m in first..last {
        for &(p, q) in &unit {
            let x = m as f64 + p as f64 / q as f64;
            if x >= lo && x < hi {
                out.push((m * q as i64 + p as i64, q));
            }
        }
    }
    out
}

#[derive(Clone, Debug, Serialize)]
pub struct StripMeasure {
    pub window: [f64; 2],
    pub q_max: u64,
    pub count: usize,
    /// `q_max^2 / 2`.
    pub count_bound: f64,
    /// `epsilon^{-2b}`.
    pub count_bound_eps: f64,
    /// `count * epsilon^beta`.
    pub measured: f64,
    /// `epsilon^rho * |window|`.
    pub measure_bound: f64,
    pub min_gap: f64,
    pub count_ok: bool,
    pub measure_ok: bool,
    /// No two members lie within `2 epsilon^beta` of each other.
    pub unique_governing: bool,
}

/// Counts the resonances `q < epsilon^{-b}` in a window and checks the count and measure bounds.
pub fn rational_strip_measure(zp: &ZoneParams, window: [f64; 2]) -> StripMeasure {
    strip_measure_raw(zp.epsilon, zp.beta, zp.rho, window)
}

/// Same as [`rational_strip_measure`] for raw exponents (no admissibility check).
pub fn strip_measure_raw(epsilon: f64, beta: f64, rho: f64, window: [f64; 2]) -> StripMeasure {
    let b = 0.5 * (beta - rho);
    let qb = epsilon.powf(-b);
    let q_max = qb.floor() as u64;
    strip_measure_q(epsilon, beta, rho, q_max, window)
}

pub fn strip_measure_q(epsilon: f64, beta: f64, rho: f64, q_max: u64, window: [f64; 2]) -> StripMeasure {
    let b = 0.5 * (beta - rho);
    let members = farey_window(window[0], window[1], q_max);
    let count = members.len();
    let width = epsilon.powf(beta);
    let measured = count as f64 * width;
    let measure_bound = epsilon.powf(rho) * (window[1] - window[0]);
    let min_gap = members
        .windows(2)
        .map(|w| w[1].0 as f64 / w[1].1 as f64 - w[0].0 as f64 / w[0].1 as f64)
        .fold(f64::INFINITY, f64::min);
    let count_bound = (q_max * q_max) as f64 / 2.0;
    StripMeasure {
        window,
        q_max,
        count,
        count_bound,
        count_bound_eps: epsilon.powf(-2.0 * b),
        measured,
        measure_bound,
        min_gap,
        count_ok: (count as f64) <= count_bound.max(1.0) * (window[1] - window[0]).ceil().max(1.0)
            && (count as f64) < epsilon.powf(-2.0 * b) * (window[1] - window[0]).ceil().max(1.0),
        measure_ok: measured <= measure_bound,
        unique_governing: min_gap > 2.0 * width,
    }
}

/// `|N int g - sum_{k<N} g(theta + k r, r)|` with a compensated sum.
pub fn birkhoff_defect(g: &TrigPoly, r: f64, theta: f64, n: u64) -> f64 {
    let s = g.at(r);
    let mut acc = crate::dynamics::KahanSum::default();
    for k in 0..n {
        acc.add(s.eval(theta + (k as f64 * r).rem_euclid(1.0)) - s.mean());
    }
    acc.value().abs()
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct Ergodization {
    pub n: u64,
    pub defect: f64,
    pub a: f64,
    pub tau: f64,
    /// `epsilon^{tau + beta}`.
    pub scale: f64,
}

/// Picks `N <= epsilon^{-A}` from the continued fraction of `r_star` and returns the Birkhoff defect.
pub fn ergodization_error(
    g: &TrigPoly,
    r_star: f64,
    theta_star: f64,
    zp: &ZoneParams,
    a: f64,
) -> Result<Ergodization> {
    let upper = (zp.l as f64 - 1.0) * zp.b() - zp.beta;
    if !(a > 2.0 * zp.beta && a < upper) {
        return Err(Error::Config(format!(
            "A = {a} must lie in ({}, {upper})",
            2.0 * zp.beta
        )));
    }
    let qb = zp.q_bound();
    for q in 1..=qb.floor() as u64 {
        let p = (r_star * q as f64).round() as i64;
        if gcd(p.unsigned_abs(), q) == 1 && (r_star - p as f64 / q as f64).abs() < zp.strip_width() {
            return Err(Error::Regime(format!(
                "r* = {r_star} lies within epsilon^beta of {p}/{q} with q <= epsilon^-b = {qb:.3}"
            )));
        }
    }
    let n_max = zp.epsilon.powf(-a).floor() as u64;
    let n = convergents(r_star, n_max).last().map(|c| c.1).unwrap_or(1);
    let tau = (a - 2.0 * zp.beta)
        .min((zp.l as f64 - 1.0) * zp.b() - a - zp.beta)
        .min(zp.beta);
    Ok(Ergodization {
        n,
        defect: birkhoff_defect(g, r_star, theta_star, n),
        a,
        tau,
        scale: zp.epsilon.powf(tau + zp.beta),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    const GOLDEN: f64 = 0.618_033_988_749_894_9;

    #[test]
    fn best_rational_examples() {
        assert_eq!(best_rational(0.5, 10), (1, 2, 0.0));
        let (p, q, e) = best_rational(GOLDEN, 8);
        assert_eq!((p, q), (5, 8));
        assert_abs_diff_eq!(e, 0.00697, epsilon = 1e-5);
        assert_eq!(best_rational(0.333_333_3, 3).1, 3);
        assert_eq!(best_rational(-0.26, 4), (-1, 4, (-0.26f64 + 0.25).abs()));
        assert_eq!(best_rational(2.0, 5), (2, 1, 0.0));
    }

    #[test]
    fn classify_examples() {
        let zp = ZoneParams::new(1e-8, 0.2, 0.04, 2).unwrap();
        assert_eq!(classify(0.5, &zp).rational, Some((1, 2)));
        assert_eq!(classify(0.5, &zp).zone, Zone::Rr);
        let zp1 = ZoneParams { gamma: 0.01, ..ZoneParams::new(1e-8, 0.2, 0.04, 1).unwrap() };
        assert_eq!(classify(GOLDEN, &zp1).zone, Zone::Ti);
        assert_eq!(classify(0.2 + 1e-9, &zp1).zone, Zone::Ti);
        let c = classify(0.251, &zp1);
        assert_eq!((c.zone, c.rational), (Zone::Ir, Some((1, 4))));
    }

    #[test]
    fn farey_counts() {
        let f = farey_window(0.0, 1.0, 6);
        assert_eq!(f.len(), 12);
        assert!(f.windows(2).all(|w| (w[0].0 as f64 / w[0].1 as f64) < (w[1].0 as f64 / w[1].1 as f64)));
        let m = strip_measure_q(1e-4, 0.2, -0.2, 6, [0.0, 1.0]);
        assert_eq!(m.count, 12);
        assert!(m.count as f64 <= m.count_bound);
        let one = strip_measure_q(1e-4, 0.2, 0.04, 1, [-0.5, 2.5]);
        assert_eq!(one.count, 3);
    }

    #[test]
    fn rational_defects() {
        let g = TrigPoly::cos(1, 1.0);
        assert_abs_diff_eq!(birkhoff_defect(&g, 0.5, 0.0, 2), 0.0, epsilon = 1e-15);
        let c = TrigPoly::zero(1);
        assert_eq!(birkhoff_defect(&c, GOLDEN, 0.3, 1000), 0.0);
    }

    #[test]
    fn ergodization_golden() {
        let zp = ZoneParams::new(1e-6, 0.2, 0.09, 1).unwrap();
        let g = TrigPoly::cos(1, 1.0);
        let e = ergodization_error(&g, GOLDEN, 0.1, &zp, 7.0 * 0.2 / 3.0).unwrap();
        let bound = 2.0 / (2.0 * (std::f64::consts::PI * GOLDEN).sin()).abs();
        assert!(e.defect <= bound);
        assert_eq!(e.n, 610);
        let zp_bad = ZoneParams::new(1e-6, 0.2, 0.04, 1).unwrap();
        assert!(matches!(ergodization_error(&g, GOLDEN, 0.1, &zp_bad, 0.5), Err(Error::Regime(_))));
    }

    #[test]
    fn zone_params_reject_bad_exponents() {
        assert!(ZoneParams::new(1e-3, 0.3, 0.04, 1).is_err());
        assert!(ZoneParams::new(1e-3, 0.2, 0.1, 1).is_err());
        assert!(ZoneParams::new(1e-3, 0.2, 0.0, 1).is_err());
    }
}
