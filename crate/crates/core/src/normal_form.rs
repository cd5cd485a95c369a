//! First-order normal form of the expected map away from low-order resonances.

use num_complex::Complex64;
use serde::Serialize;
use std::f64::consts::{PI, TAU};

use crate::dynamics::MapFamily;
use crate::error::{Error, Result};
use crate::trig::{horner, Series, TrigPoly};

/// Smooth plateau function: 1 on `|x| <= 1`, 0 on `|x| >= 2`.
pub fn bump(x: f64) -> f64 {
    let a = x.abs();
    if a <= 1.0 {
        1.0
    } else if a >= 2.0 {
        0.0
    } else {
        let t = a - 1.0;
        (1.0 - 1.0 / (1.0 - t * t)).exp()
    }
}

pub fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Nearest `p/q` with `1 <= q <= qmax` (reduced); ties go to the smaller `q`.
pub fn nearest_low_order(r: f64, qmax: u64) -> (i64, u64, f64) {
    let mut best = (r.round() as i64, 1u64, (r - r.round()).abs());
    for q in 2..=qmax.max(1) {
        let p = (r * q as f64).round() as i64;
        if gcd(p.unsigned_abs(), q) != 1 {
            continue;
        }
        let dist = (r - p as f64 / q as f64).abs();
        if dist < best.2 {
            best = (p, q, dist);
        }
    }
    best
}

fn ratio_ok(gamma: f64, d: usize) -> bool {
    let d = d.max(1);
    // Harmonics resonant at p/q must be fully switched off beyond 3 gamma.
    let x = 3.0 * PI * d as f64 * gamma;
    if x.sin() < 2.0 * PI * d as f64 * gamma {
        return false;
    }
    // Harmonics not resonant at p/q must stay switched off within 3 gamma of it.
    for q in 1..=d as u64 {
        for k in 1..=d as u64 {
            if k % q == 0 {
                continue;
            }
            let qr = q / gcd(k, q);
            let dist = 1.0 / qr as f64 - 3.0 * k as f64 * gamma;
            if dist <= 0.0 || (PI * dist).sin() < 2.0 * PI * k as f64 * gamma {
                return false;
            }
        }
    }
    true
}

/// Largest collar width for which the mollifier case table holds at angular degree `d`.
pub fn gamma_max(d: usize) -> f64 {
    let (mut lo, mut hi) = (0.0, 1.0 / (3.0 * d.max(1) as f64));
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if ratio_ok(mid, d) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

/// `0.05 / d`, reduced when that violates the case table.
pub fn default_gamma(d: usize) -> f64 {
    (0.05 / d.max(1) as f64).min(0.9 * gamma_max(d))
}

/// Smooth cut-off of small divisors near the resonances of order `<= degree`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Mollifier {
    gamma: f64,
    degree: usize,
}

impl Mollifier {
    pub fn new(gamma: f64, degree: usize) -> Result<Self> {
        if !(gamma > 0.0) || !ratio_ok(gamma, degree) {
            return Err(Error::Config(format!(
                "gamma = {gamma} must lie in (0, {:.6}] for angular degree {degree}",
                gamma_max(degree)
            )));
        }
        Ok(Mollifier { gamma, degree })
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    /// `mu(|1 - e^{2 pi i k r}| / (2 pi |k| gamma))`.
    pub fn mu(&self, k: i64, r: f64) -> f64 {
        if k == 0 {
            return 1.0;
        }
        let kf = k.unsigned_abs() as f64;
        let s = (PI * kf * r.rem_euclid(1.0)).sin().abs();
        bump(s / (PI * kf * self.gamma))
    }

    /// Resonance `p/q` (q <= degree) whose `3 gamma` collar contains `r`, if any.
    pub fn collar(&self, r: f64) -> Option<(i64, u64)> {
        let (p, q, dist) = nearest_low_order(r, self.degree.max(1) as u64);
        (dist < 3.0 * self.gamma).then_some((p, q))
    }
}

/// `mu_k(r)` for a validated collar width.
pub fn mollifier(k: i64, r: f64, gamma: f64, degree: usize) -> Result<f64> {
    Ok(Mollifier::new(gamma, degree)?.mu(k, r))
}

/// Keeps the harmonics `0 < |k| <= d` with `q | k`.
pub fn resonant_part(ev: &TrigPoly, q: u64) -> TrigPoly {
    ev.filter(|k| k != 0 && k.unsigned_abs() % q == 0)
}

/// Generating function of the near-identity change of variables.
#[derive(Clone, Debug)]
pub struct GeneratingFunction {
    ev: TrigPoly,
    moll: Mollifier,
}

impl GeneratingFunction {
    pub fn new(ev: TrigPoly, moll: Mollifier) -> Self {
        GeneratingFunction { ev, moll }
    }

    pub fn mollifier(&self) -> &Mollifier {
        &self.moll
    }

    /// Fourier coefficients `S_1^k(r)`.
    pub fn at(&self, r: f64) -> Series {
        let ev = self.ev.at(r);
        Series::from_fn(ev.degree(), |k| {
            if k == 0 {
                return Complex64::new(0.0, 0.0);
            }
            let mu = self.moll.mu(k, r);
            if mu >= 1.0 {
                return Complex64::new(0.0, 0.0);
            }
            let e = Complex64::from_polar(1.0, TAU * k as f64 * r);
            let den = (Complex64::new(1.0, 0.0) - e) * (TAU * k as f64);
            Complex64::new(0.0, 1.0) * ev.get(k) * (1.0 - mu) / den
        })
    }

    /// `d/dtheta S_1(theta) + Ev(theta) - d/dtheta S_1(theta + r)` as a series in theta.
    pub fn cohomological_residual(&self, r: f64) -> Series {
        let ds = self.at(r).d_theta(1);
        ds.add(&self.ev.at(r)).sub(&ds.shift(r))
    }

    /// `Ev^0 + sum_k mu_k Ev^k e^{2 pi i k theta}`, the expected value of the residual.
    pub fn expected_residual(&self, r: f64) -> Series {
        self.ev.at(r).map(|k, z| z * self.moll.mu(k, r))
    }
}

pub fn generating_s1(fam: &MapFamily, gamma: f64) -> Result<GeneratingFunction> {
    Ok(GeneratingFunction::new(fam.mean_v(), Mollifier::new(gamma, fam.degree())?))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(tag = "regime")]
pub enum Regime {
    /// Totally irrational.
    Ti,
    /// Imaginary rotation about a high-order rational.
    Ir { p: i64, q: u64 },
}

/// Drift and variance fields of the diffusion limit.
#[derive(Clone, Debug)]
pub struct DiffusionPrediction {
    regime: Regime,
    s1: GeneratingFunction,
    eu: TrigPoly,
    ev: TrigPoly,
    ew: TrigPoly,
    ev_r: TrigPoly,
    /// `(prob, v_i - E v)`.
    noise: Vec<(f64, TrigPoly)>,
    variance: Vec<f64>,
    trivial_drift: bool,
}

impl DiffusionPrediction {
    pub fn new(fam: &MapFamily, gamma: f64) -> Result<Self> {
        let s1 = generating_s1(fam, gamma)?;
        let (eu, ev, ew) = (fam.mean_u(), fam.mean_v(), fam.mean_w());
        let ev_r = ev.d_r();
        let trivial_drift = ev_r.is_zero() && eu.sub(&ev).is_zero() && ew.coeff(0).is_zero();
        let noise = fam
            .symbols()
            .iter()
            .zip(fam.v_fluctuations())
            .map(|(s, f)| (s.prob, f))
            .collect();
        Ok(DiffusionPrediction {
            regime: Regime::Ti,
            s1,
            eu,
            ev,
            ew,
            ev_r,
            noise,
            variance: fam.variance_poly(),
            trivial_drift,
        })
    }

    /// Same fields with the cyclic averages of an IR rational `p/q`, `q > d`.
    pub fn imaginary_rotation(mut self, p: i64, q: u64) -> Result<Self> {
        let d = self.s1.moll.degree() as u64;
        if q <= d {
            return Err(Error::Regime(format!("{p}/{q} has q <= d = {d}; not an IR rational")));
        }
        if gcd(p.unsigned_abs(), q) != 1 {
            return Err(Error::Config(format!("{p}/{q} is not reduced")));
        }
        self.regime = Regime::Ir { p, q };
        Ok(self)
    }

    pub fn regime(&self) -> Regime {
        self.regime
    }

    pub fn generating_function(&self) -> &GeneratingFunction {
        &self.s1
    }

    pub fn gamma(&self) -> f64 {
        self.s1.moll.gamma()
    }

    pub fn mean_v(&self) -> &TrigPoly {
        &self.ev
    }

    fn check_collar(&self, r: f64) -> Result<()> {
        match self.s1.moll.collar(r) {
            Some((p, q)) => Err(Error::ResonanceCollar { r, p, q }),
            None => Ok(()),
        }
    }

    /// Averaged drift at `r`; errors inside a resonance collar.
    pub fn drift(&self, r: f64) -> Result<f64> {
        self.check_collar(r)?;
        Ok(self.drift_unchecked(r))
    }

    /// Averaged drift from the mollified generating function, without the collar check.
    pub fn drift_unchecked(&self, r: f64) -> f64 {
        if self.trivial_drift {
            return 0.0;
        }
        self.drift_formula(r)
    }

    /// The drift integral evaluated term by term, even when it vanishes structurally.
    pub fn drift_formula(&self, r: f64) -> f64 {
        let s = self.s1.at(r);
        let ds = s.d_theta(1);
        let dds = s.d_theta(2);
        let diff = self.eu.at(r).sub(&self.ev.at(r));
        self.ev_r.at(r).pairing(&ds) - dds.pairing(&diff) + self.ew.at(r).mean()
    }

    /// `sigma^2(r)`.
    pub fn variance(&self, r: f64) -> f64 {
        horner(&self.variance, r)
    }

    pub fn variance_poly(&self) -> &[f64] {
        &self.variance
    }

    /// Pointwise `E_2 = Ev d_theta S_1 + Ew`.
    pub fn e2(&self, theta: f64, r: f64) -> Result<f64> {
        self.check_collar(r)?;
        Ok(self.e2_series(r).eval(theta))
    }

    fn e2_series(&self, r: f64) -> Series {
        self.ev.at(r).mul(&self.s1.at(r).d_theta(1)).add(&self.ew.at(r))
    }

    /// Closed form of `int E_2 dtheta`: `-sum_{k>0} |Ev^k|^2 (1 - mu_k) + int Ew`.
    pub fn e2_average_closed_form(&self, r: f64) -> f64 {
        let ev = self.ev.at(r);
        let d = ev.degree() as i64;
        let osc: f64 = (1..=d)
            .map(|k| ev.get(k).norm_sqr() * (1.0 - self.s1.moll.mu(k, r)))
            .sum();
        -osc + self.ew.at(r).mean()
    }

    /// `E_omega (v_omega - E v)^2` at a point.
    pub fn noise_density(&self, theta: f64, r: f64) -> f64 {
        self.noise
            .iter()
            .map(|(p, f)| {
                let x = f.eval(theta, r);
                p * x * x
            })
            .sum()
    }

    /// Regime drift field at a point (theta-independent in TI).
    pub fn drift_field(&self, theta: f64, r: f64) -> Result<f64> {
        match self.regime {
            Regime::Ti => self.drift(r),
            Regime::Ir { q, .. } => {
                self.check_collar(r)?;
                let e2 = self.e2_series(r);
                Ok((0..q).map(|i| e2.eval(theta + i as f64 * r)).sum::<f64>() / q as f64)
            }
        }
    }

    /// Regime variance field at a point.
    pub fn variance_field(&self, theta: f64, r: f64) -> f64 {
        match self.regime {
            Regime::Ti => self.variance(r),
            Regime::Ir { q, .. } => {
                (0..q).map(|i| self.noise_density(theta + i as f64 * r, r)).sum::<f64>() / q as f64
            }
        }
    }

    /// `A f(r) = b(r) f'(r) + sigma^2(r) f''(r) / 2` with the given drift and variance values.
    pub fn generator_with(b: f64, sigma2: f64, f: &dyn TestFunction, r: f64) -> f64 {
        b * f.d1(r) + 0.5 * sigma2 * f.d2(r)
    }
}

/// `-sum_{0<|k|<=d} i (Ev^k)'(r) / (2 pi k) e^{2 pi i k theta}`.
pub fn e1(fam: &MapFamily, r: f64) -> Series {
    let dev = fam.mean_v().d_r().at(r);
    dev.map(|k, z| {
        if k == 0 {
            Complex64::new(0.0, 0.0)
        } else {
            -Complex64::new(0.0, 1.0) * z / (TAU * k as f64)
        }
    })
}

/// `E_1` restricted to the harmonics that are not resonant at `p/q`, evaluated at `p/q`.
pub fn e3(fam: &MapFamily, p: i64, q: u64) -> Series {
    e1(fam, p as f64 / q as f64).filter(|k| k.unsigned_abs() % q != 0)
}

/// Theta tables of the IR drift and variance at `r = p/q`.
#[derive(Clone, Debug, Serialize)]
pub struct IrTable {
    pub p: i64,
    pub q: u64,
    pub theta: Vec<f64>,
    pub drift: Vec<f64>,
    pub sigma2: Vec<f64>,
}

pub fn ir_drift_variance(pred: &DiffusionPrediction, p: i64, q: u64, theta_grid: &[f64]) -> Result<IrTable> {
    let ir = pred.clone().imaginary_rotation(p, q)?;
    let r = p as f64 / q as f64;
    let mut drift = Vec::with_capacity(theta_grid.len());
    let mut sigma2 = Vec::with_capacity(theta_grid.len());
    for &t in theta_grid {
        drift.push(ir.drift_field(t, r)?);
        sigma2.push(ir.variance_field(t, r));
    }
    Ok(IrTable {
        p,
        q,
        theta: theta_grid.to_vec(),
        drift,
        sigma2,
    })
}

/// A twice-differentiable function of the action.
pub trait TestFunction: Sync {
    fn value(&self, r: f64) -> f64;

    fn d1(&self, r: f64) -> f64 {
        const H: f64 = 1e-5;
        (self.value(r + H) - self.value(r - H)) / (2.0 * H)
    }

    fn d2(&self, r: f64) -> f64 {
        const H: f64 = 1e-5;
        (self.value(r + H) - 2.0 * self.value(r) + self.value(r - H)) / (H * H)
    }

    fn name(&self) -> String {
        "f".into()
    }
}

/// `r^n` with exact derivatives.
#[derive(Clone, Copy, Debug)]
pub struct Power(pub i32);

/// `r^n`, avoiding the `powi` libcall for the small exponents used along orbits.
#[inline(always)]
fn pow_small(r: f64, n: i32) -> f64 {
    match n {
        0 => 1.0,
        1 => r,
        2 => r * r,
        3 => r * r * r,
        _ => r.powi(n),
    }
}

impl TestFunction for Power {
    #[inline]
    fn value(&self, r: f64) -> f64 {
        pow_small(r, self.0)
    }

    #[inline]
    fn d1(&self, r: f64) -> f64 {
        if self.0 == 0 {
            0.0
        } else {
            self.0 as f64 * pow_small(r, self.0 - 1)
        }
    }

    #[inline]
    fn d2(&self, r: f64) -> f64 {
        if self.0 < 2 {
            0.0
        } else {
            (self.0 * (self.0 - 1)) as f64 * pow_small(r, self.0 - 2)
        }
    }

    fn name(&self) -> String {
        match self.0 {
            0 => "1".into(),
            1 => "r".into(),
            n => format!("r^{n}"),
        }
    }
}

/// Wraps a closure; derivatives by central differences.
pub struct FnTest<F>(pub F);

impl<F: Fn(f64) -> f64 + Sync> TestFunction for FnTest<F> {
    fn value(&self, r: f64) -> f64 {
        (self.0)(r)
    }
}

/// `A f(r)` in the TI regime.
pub fn apply_generator(pred: &DiffusionPrediction, f: &dyn TestFunction, r: f64) -> Result<f64> {
    Ok(DiffusionPrediction::generator_with(pred.drift(r)?, pred.variance(r), f, r))
}

/// Tabulates `(r, b(r), sigma^2(r))`.
pub fn drift_table(pred: &DiffusionPrediction, r_grid: &[f64]) -> Result<Vec<(f64, f64, f64)>> {
    r_grid
        .iter()
        .map(|&r| Ok((r, pred.drift(r)?, pred.variance(r))))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::SymbolMap;
    use approx::assert_abs_diff_eq;

    #[test]
    fn bump_plateaus() {
        assert_eq!(bump(0.0), 1.0);
        assert_eq!(bump(-1.0), 1.0);
        assert_eq!(bump(2.0), 0.0);
        assert_eq!(bump(5.0), 0.0);
        let x = bump(1.5);
        assert!(x > 0.0 && x < 1.0);
        let mut prev = 1.0;
        for i in 0..=100 {
            let y = bump(1.0 + i as f64 / 100.0);
            assert!(y <= prev);
            prev = y;
        }
    }

    #[test]
    fn mollifier_examples() {
        let g = 0.05;
        assert_eq!(mollifier(1, 0.0, g, 1).unwrap(), 1.0);
        assert_eq!(mollifier(1, 0.37, g, 1).unwrap(), 0.0);
        assert!(mollifier(1, 0.1, 1.0, 1).is_err());
    }

    #[test]
    fn gamma_bounds() {
        assert!(gamma_max(1) > 0.15 && gamma_max(1) < 0.16);
        for d in 1..8 {
            assert!(Mollifier::new(default_gamma(d), d).is_ok(), "d = {d}");
        }
    }

    #[test]
    fn nearest_low_order_examples() {
        assert_eq!(nearest_low_order(0.49, 2), (1, 2, (0.49f64 - 0.5).abs()));
        assert_eq!(nearest_low_order(0.98, 3).0, 1);
        assert_eq!(nearest_low_order(-0.3, 3), (-1, 3, (-0.3f64 + 1.0 / 3.0).abs()));
    }

    #[test]
    fn resonant_part_examples() {
        let ev = TrigPoly::from_cos_sin(2, &[0.3], &[(1, vec![1.0]), (2, vec![0.5])], &[(1, vec![0.2])]).unwrap();
        let half = resonant_part(&ev, 2);
        assert!(half.coeff(1).is_zero() && half.coeff(-1).is_zero() && half.coeff(0).is_zero());
        assert!(!half.coeff(2).is_zero());
        assert!(resonant_part(&ev, 3).is_zero());
        assert_eq!(resonant_part(&ev, 1), ev.filter(|k| k != 0));
    }

    fn quad_drift(fam: &MapFamily, s1: &GeneratingFunction, r: f64, n: usize) -> f64 {
        let s = s1.at(r);
        let (ds, dds) = (s.d_theta(1), s.d_theta(2));
        let (dev, eu, ev) = (fam.mean_v().d_r().at(r), fam.mean_u().at(r), fam.mean_v().at(r));
        (0..n)
            .map(|j| {
                let t = j as f64 / n as f64;
                dev.eval(t) * ds.eval(t) - dds.eval(t) * (eu.eval(t) - ev.eval(t))
            })
            .sum::<f64>()
            / n as f64
    }

    fn asymmetric_family() -> MapFamily {
        let z = TrigPoly::zero(1);
        MapFamily::fair_pair(
            0.01,
            [TrigPoly::cos(1, 2.0), TrigPoly::cos(1, 1.0), z.clone()],
            [TrigPoly::sin(1, 1.0), TrigPoly::sin(1, 1.0), z],
        )
        .unwrap()
    }

    #[test]
    fn drift_matches_quadrature() {
        let fam = asymmetric_family();
        let pred = DiffusionPrediction::new(&fam, 0.02).unwrap();
        let b = pred.drift(0.37).unwrap();
        let q = quad_drift(&fam, pred.generating_function(), 0.37, 4096);
        assert_abs_diff_eq!(b, q, epsilon = 1e-9);
        assert!(b.abs() > 1e-3);
    }

    #[test]
    fn drift_vanishes_for_area_preserving() {
        let pred = DiffusionPrediction::new(&MapFamily::cos_sin(0.01), 0.05).unwrap();
        assert_eq!(pred.drift(0.4).unwrap(), 0.0);
        assert!(matches!(pred.drift(0.05), Err(Error::ResonanceCollar { p: 0, q: 1, .. })));
    }

    #[test]
    fn e2_average_closed_form() {
        let fam = asymmetric_family();
        let pred = DiffusionPrediction::new(&fam, 0.02).unwrap();
        for r in [0.2, 0.37, 0.61] {
            let n = 2048;
            let avg: f64 = (0..n).map(|j| pred.e2(j as f64 / n as f64, r).unwrap()).sum::<f64>() / n as f64;
            let pairing = pred.mean_v().at(r).pairing(&pred.generating_function().at(r).d_theta(1));
            assert_abs_diff_eq!(avg, pairing, epsilon = 1e-12);
            assert_abs_diff_eq!(avg, pred.e2_average_closed_form(r), epsilon = 1e-12);
        }
    }

    #[test]
    fn e2_is_additive_in_w() {
        let c = TrigPoly::cos(1, 1.0);
        let s = TrigPoly::sin(1, 1.0);
        let z = TrigPoly::zero(1);
        let with_w = MapFamily::fair_pair(0.01, [c.clone(), c.clone(), c.clone()], [s.clone(), s.clone(), c.clone()]).unwrap();
        let base = MapFamily::fair_pair(0.01, [c.clone(), c, z.clone()], [s.clone(), s, z]).unwrap();
        let (a, b) = (
            DiffusionPrediction::new(&with_w, 0.05).unwrap(),
            DiffusionPrediction::new(&base, 0.05).unwrap(),
        );
        for t in [0.0, 0.13, 0.7] {
            let diff = a.e2(t, 0.4).unwrap() - b.e2(t, 0.4).unwrap();
            assert_abs_diff_eq!(diff, (TAU * t).cos(), epsilon = 1e-14);
        }
    }

    #[test]
    fn variance_examples() {
        let z = TrigPoly::zero(1);
        let fam = MapFamily::fair_pair(
            0.01,
            [z.clone(), TrigPoly::cos(1, 1.0), z.clone()],
            [z.clone(), TrigPoly::cos(1, -1.0), z.clone()],
        )
        .unwrap();
        assert_abs_diff_eq!(fam.variance(0.2), 0.5, epsilon = 1e-15);
        let sym = |label| SymbolMap { label, prob: 0.5, u: z.clone(), v: TrigPoly::cos(1, 0.5), w: z.clone() };
        let same = MapFamily::new(0.01, vec![sym(1), sym(-1)], [0.0, 1.0]).unwrap();
        assert_eq!(same.variance(0.2), 0.0);
    }

    #[test]
    fn generator_examples() {
        let pred = DiffusionPrediction::new(&MapFamily::cos_sin(0.01), 0.05).unwrap();
        assert_abs_diff_eq!(apply_generator(&pred, &Power(2), 0.4).unwrap(), 0.25, epsilon = 1e-15);
        assert_eq!(apply_generator(&pred, &Power(1), 0.4).unwrap(), 0.0);
        assert_eq!(apply_generator(&pred, &Power(0), 0.4).unwrap(), 0.0);
        let fd = FnTest(|r: f64| r * r);
        assert_abs_diff_eq!(apply_generator(&pred, &fd, 0.4).unwrap(), 0.25, epsilon = 1e-5);
    }
}
