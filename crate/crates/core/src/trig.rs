//! Trigonometric polynomials in the angle whose coefficients are polynomials in the action.

use num_complex::Complex64;
use std::f64::consts::TAU;

use crate::error::{Error, Result};

const HERMITIAN_TOL: f64 = 1e-12;

/// Polynomial in `r` with complex coefficients, lowest degree first.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct Poly {
    coeffs: Vec<Complex64>,
}

impl Poly {
    pub fn new(mut coeffs: Vec<Complex64>) -> Self {
        while coeffs.last().is_some_and(|c| *c == Complex64::new(0.0, 0.0)) {
            coeffs.pop();
        }
        Poly { coeffs }
    }

    pub fn zero() -> Self {
        Poly { coeffs: Vec::new() }
    }

    pub fn constant(c: Complex64) -> Self {
        Poly::new(vec![c])
    }

    pub fn real(coeffs: &[f64]) -> Self {
        Poly::new(coeffs.iter().map(|&a| Complex64::new(a, 0.0)).collect())
    }

    pub fn coeffs(&self) -> &[Complex64] {
        &self.coeffs
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.is_empty()
    }

    pub fn is_constant(&self) -> bool {
        self.coeffs.len() <= 1
    }

    pub fn degree(&self) -> usize {
        self.coeffs.len().saturating_sub(1)
    }

    pub fn eval(&self, r: f64) -> Complex64 {
        self.coeffs
            .iter()
            .rev()
            .fold(Complex64::new(0.0, 0.0), |acc, c| acc * r + c)
    }

    pub fn derivative(&self) -> Poly {
        Poly::new(
            self.coeffs
                .iter()
                .enumerate()
                .skip(1)
                .map(|(j, c)| c * j as f64)
                .collect(),
        )
    }

    pub fn conj(&self) -> Poly {
        Poly::new(self.coeffs.iter().map(|c| c.conj()).collect())
    }

    pub fn scale(&self, s: Complex64) -> Poly {
        Poly::new(self.coeffs.iter().map(|c| c * s).collect())
    }

    pub fn add(&self, other: &Poly) -> Poly {
        let n = self.coeffs.len().max(other.coeffs.len());
        let zero = Complex64::new(0.0, 0.0);
        Poly::new(
            (0..n)
                .map(|j| {
                    self.coeffs.get(j).copied().unwrap_or(zero)
                        + other.coeffs.get(j).copied().unwrap_or(zero)
                })
                .collect(),
        )
    }

    pub fn sub(&self, other: &Poly) -> Poly {
        self.add(&other.scale(Complex64::new(-1.0, 0.0)))
    }

    pub fn mul(&self, other: &Poly) -> Poly {
        if self.is_zero() || other.is_zero() {
            return Poly::zero();
        }
        let mut out = vec![Complex64::new(0.0, 0.0); self.coeffs.len() + other.coeffs.len() - 1];
        for (i, a) in self.coeffs.iter().enumerate() {
            for (j, b) in other.coeffs.iter().enumerate() {
                out[i + j] += a * b;
            }
        }
        Poly::new(out)
    }

    fn close_to(&self, other: &Poly, tol: f64) -> bool {
        let n = self.coeffs.len().max(other.coeffs.len());
        let zero = Complex64::new(0.0, 0.0);
        (0..n).all(|j| {
            let a = self.coeffs.get(j).copied().unwrap_or(zero);
            let b = other.coeffs.get(j).copied().unwrap_or(zero);
            (a - b).norm() <= tol * (1.0 + a.norm().max(b.norm()))
        })
    }

    /// Real parts of the coefficients.
    pub fn re_coeffs(&self) -> Vec<f64> {
        self.coeffs.iter().map(|c| c.re).collect()
    }

    /// Imaginary parts of the coefficients.
    pub fn im_coeffs(&self) -> Vec<f64> {
        self.coeffs.iter().map(|c| c.im).collect()
    }
}

/// `floor(x)` through an integer cast; baseline x86-64 has no rounding instruction and
/// `f64::floor` becomes a library call. Valid for `|x| < 2^62`.
#[inline(always)]
pub fn fast_floor(x: f64) -> f64 {
    let t = x as i64 as f64;
    // Branch-free: the comparison is unpredictable on orbit data.
    t - ((t > x) as u8 as f64)
}

/// `(sin 2 pi x, cos 2 pi x)` for an angle in turns.
///
/// Exact reduction to `|y| <= pi/4` followed by truncated Taylor series; agrees with
/// `f64::sin_cos` to a few ulp and is several times faster on the simulation hot path.
#[inline(always)]
pub fn sincos_turns(x: f64) -> (f64, f64) {
    let q = fast_floor(4.0 * x + 0.5);
    let f = x - 0.25 * q;
    let y = TAU * f;
    let z = y * y;
    let s = y
        * (1.0
            + z * (-1.0 / 6.0
                + z * (1.0 / 120.0
                    + z * (-1.0 / 5040.0
                        + z * (1.0 / 362_880.0
                            + z * (-1.0 / 39_916_800.0
                                + z * (1.0 / 6_227_020_800.0
                                    + z * (-1.0 / 1_307_674_368_000.0))))))));
    let c = 1.0
        + z * (-0.5
            + z * (1.0 / 24.0
                + z * (-1.0 / 720.0
                    + z * (1.0 / 40_320.0
                        + z * (-1.0 / 3_628_800.0
                            + z * (1.0 / 479_001_600.0
                                + z * (-1.0 / 87_178_291_200.0
                                    + z * (1.0 / 20_922_789_888_000.0))))))));
    // Branch-free quadrant rotation; quadrants are effectively random along an orbit.
    let qi = (q as i64 & 3) as u64;
    let odd = 0u64.wrapping_sub(qi & 1);
    let (sb, cb) = (s.to_bits(), c.to_bits());
    let sin_bits = (cb & odd) | (sb & !odd);
    let cos_bits = (sb & odd) | (cb & !odd);
    let sin_sign = (qi >> 1) << 63;
    let cos_sign = ((qi ^ (qi >> 1)) & 1) << 63;
    (f64::from_bits(sin_bits ^ sin_sign), f64::from_bits(cos_bits ^ cos_sign))
}

/// Horner evaluation of a real polynomial, lowest degree first.
#[inline]
pub fn horner(coeffs: &[f64], r: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, c| acc * r + c)
}

/// `sum_{|k|<=d} c_k(r) e^{2 pi i k theta}` with `c_{-k} = conj(c_k)`.
#[derive(Clone, Debug, PartialEq)]
pub struct TrigPoly {
    degree: usize,
    /// Index `k + degree`.
    coeffs: Vec<Poly>,
}

impl TrigPoly {
    pub fn zero(degree: usize) -> Self {
        TrigPoly {
            degree,
            coeffs: vec![Poly::zero(); 2 * degree + 1],
        }
    }

    /// Builds from a full list of harmonics. Missing or mismatched conjugate partners are rejected.
    pub fn from_harmonics(degree: usize, harmonics: &[(i64, Poly)]) -> Result<Self> {
        let mut tp = TrigPoly::zero(degree);
        let mut seen = vec![false; 2 * degree + 1];
        for (k, p) in harmonics {
            let idx = tp.index(*k).ok_or_else(|| {
                Error::Config(format!("harmonic {k} exceeds declared degree {degree}"))
            })?;
            if seen[idx] {
                return Err(Error::Config(format!("harmonic {k} given twice")));
            }
            seen[idx] = true;
            tp.coeffs[idx] = p.clone();
        }
        for k in 0..=degree as i64 {
            let a = &tp.coeffs[(k + degree as i64) as usize];
            let b = &tp.coeffs[(degree as i64 - k) as usize];
            if !a.close_to(&b.conj(), HERMITIAN_TOL) {
                return Err(Error::Config(format!(
                    "coefficients of harmonics {k} and {} are not conjugate; the potential would not be real",
                    -k
                )));
            }
        }
        Ok(tp)
    }

    /// Builds from harmonics `k >= 0`, filling in `c_{-k} = conj(c_k)`.
    pub fn from_nonnegative(degree: usize, harmonics: &[(u64, Poly)]) -> Result<Self> {
        let mut full = Vec::with_capacity(2 * harmonics.len());
        for (k, p) in harmonics {
            let k = *k as i64;
            if k == 0 {
                if p.coeffs().iter().any(|c| c.im.abs() > HERMITIAN_TOL * (1.0 + c.re.abs())) {
                    return Err(Error::Config("mean term must be real".into()));
                }
                full.push((0, Poly::new(p.coeffs().iter().map(|c| Complex64::new(c.re, 0.0)).collect())));
            } else {
                full.push((k, p.clone()));
                full.push((-k, p.conj()));
            }
        }
        TrigPoly::from_harmonics(degree, &full)
    }

    /// `sum a_k(r) cos(2 pi k theta) + b_k(r) sin(2 pi k theta)` with real polynomial amplitudes.
    pub fn from_cos_sin(
        degree: usize,
        mean: &[f64],
        cos: &[(u64, Vec<f64>)],
        sin: &[(u64, Vec<f64>)],
    ) -> Result<Self> {
        let mut acc: Vec<Poly> = vec![Poly::zero(); degree + 1];
        acc[0] = Poly::real(mean);
        let half = Complex64::new(0.5, 0.0);
        let minus_half_i = Complex64::new(0.0, -0.5);
        for (k, a) in cos {
            let k = *k as usize;
            if k == 0 || k > degree {
                return Err(Error::Config(format!("cosine harmonic {k} outside 1..={degree}")));
            }
            acc[k] = acc[k].add(&Poly::real(a).scale(half));
        }
        for (k, b) in sin {
            let k = *k as usize;
            if k == 0 || k > degree {
                return Err(Error::Config(format!("sine harmonic {k} outside 1..={degree}")));
            }
            acc[k] = acc[k].add(&Poly::real(b).scale(minus_half_i));
        }
        let list: Vec<(u64, Poly)> = acc.into_iter().enumerate().map(|(k, p)| (k as u64, p)).collect();
        TrigPoly::from_nonnegative(degree, &list)
    }

    /// `amp * cos(2 pi k theta)`.
    pub fn cos(k: u64, amp: f64) -> Self {
        TrigPoly::from_cos_sin(k as usize, &[], &[(k, vec![amp])], &[]).expect("valid cosine")
    }

    /// `amp * sin(2 pi k theta)`.
    pub fn sin(k: u64, amp: f64) -> Self {
        TrigPoly::from_cos_sin(k as usize, &[], &[], &[(k, vec![amp])]).expect("valid sine")
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    fn index(&self, k: i64) -> Option<usize> {
        let d = self.degree as i64;
        (k.abs() <= d).then_some((k + d) as usize)
    }

    pub fn coeff(&self, k: i64) -> Poly {
        self.index(k).map(|i| self.coeffs[i].clone()).unwrap_or_default()
    }

    pub fn coeff_ref(&self, k: i64) -> Option<&Poly> {
        self.index(k).map(|i| &self.coeffs[i])
    }

    pub fn with_degree(&self, degree: usize) -> TrigPoly {
        let mut out = TrigPoly::zero(degree.max(self.degree));
        for k in -(self.degree as i64)..=self.degree as i64 {
            let i = out.index(k).unwrap();
            out.coeffs[i] = self.coeff(k);
        }
        out
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.iter().all(Poly::is_zero)
    }

    /// True when every coefficient is constant in `r`.
    pub fn is_r_independent(&self) -> bool {
        self.coeffs.iter().all(Poly::is_constant)
    }

    pub fn r_degree(&self) -> usize {
        self.coeffs.iter().map(Poly::degree).max().unwrap_or(0)
    }

    pub fn add(&self, other: &TrigPoly) -> TrigPoly {
        let d = self.degree.max(other.degree);
        let mut out = TrigPoly::zero(d);
        for k in -(d as i64)..=d as i64 {
            let i = out.index(k).unwrap();
            out.coeffs[i] = self.coeff(k).add(&other.coeff(k));
        }
        out
    }

    pub fn sub(&self, other: &TrigPoly) -> TrigPoly {
        self.add(&other.scale(-1.0))
    }

    pub fn scale(&self, s: f64) -> TrigPoly {
        TrigPoly {
            degree: self.degree,
            coeffs: self.coeffs.iter().map(|p| p.scale(Complex64::new(s, 0.0))).collect(),
        }
    }

    pub fn d_r(&self) -> TrigPoly {
        TrigPoly {
            degree: self.degree,
            coeffs: self.coeffs.iter().map(Poly::derivative).collect(),
        }
    }

    /// Keeps only harmonics for which `keep(k)` holds.
    pub fn filter(&self, keep: impl Fn(i64) -> bool) -> TrigPoly {
        let d = self.degree as i64;
        TrigPoly {
            degree: self.degree,
            coeffs: (-d..=d)
                .map(|k| if keep(k) { self.coeff(k) } else { Poly::zero() })
                .collect(),
        }
    }

    /// Fourier coefficients at a fixed action.
    pub fn at(&self, r: f64) -> Series {
        Series {
            degree: self.degree,
            c: self.coeffs.iter().map(|p| p.eval(r)).collect(),
        }
    }

    pub fn eval(&self, theta: f64, r: f64) -> f64 {
        self.at(r).eval(theta)
    }

    /// Maximum of `|f|` over a `theta` grid at the given actions.
    pub fn max_abs_on_grid(&self, r_values: &[f64], n_theta: usize) -> f64 {
        let mut m = 0.0_f64;
        for &r in r_values {
            let s = self.at(r);
            for j in 0..n_theta {
                m = m.max(s.eval(j as f64 / n_theta as f64).abs());
            }
        }
        m
    }

    /// Real amplitude polynomials: `f = a0 + sum a_k cos + b_k sin`.
    pub fn real_form(&self) -> RealTrig {
        let d = self.degree as i64;
        let a0 = self.coeff(0).re_coeffs();
        let mut a = Vec::with_capacity(self.degree);
        let mut b = Vec::with_capacity(self.degree);
        for k in 1..=d {
            let c = self.coeff(k);
            a.push(c.re_coeffs().iter().map(|x| 2.0 * x).collect());
            b.push(c.im_coeffs().iter().map(|x| -2.0 * x).collect());
        }
        RealTrig { a0, a, b }
    }

    /// `sum_k |c_k(r)|^2` over `k != 0`, as a polynomial in `r`.
    pub fn oscillation_power(&self) -> Vec<f64> {
        let d = self.degree as i64;
        let mut acc = Poly::zero();
        for k in (-d..=d).filter(|&k| k != 0) {
            let c = self.coeff(k);
            acc = acc.add(&c.mul(&c.conj()));
        }
        acc.re_coeffs()
    }
}

/// Real cos/sin amplitudes of a trigonometric polynomial.
#[derive(Clone, Debug, PartialEq)]
pub struct RealTrig {
    pub a0: Vec<f64>,
    pub a: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
}

/// Complex Fourier coefficients of a real trigonometric polynomial at a fixed action.
#[derive(Clone, Debug, PartialEq)]
pub struct Series {
    degree: usize,
    /// Index `k + degree`.
    c: Vec<Complex64>,
}

impl Series {
    pub fn zero(degree: usize) -> Self {
        Series {
            degree,
            c: vec![Complex64::new(0.0, 0.0); 2 * degree + 1],
        }
    }

    pub fn from_fn(degree: usize, f: impl Fn(i64) -> Complex64) -> Self {
        let d = degree as i64;
        Series {
            degree,
            c: (-d..=d).map(f).collect(),
        }
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn get(&self, k: i64) -> Complex64 {
        let d = self.degree as i64;
        if k.abs() > d {
            Complex64::new(0.0, 0.0)
        } else {
            self.c[(k + d) as usize]
        }
    }

    pub fn mean(&self) -> f64 {
        self.get(0).re
    }

    pub fn eval(&self, theta: f64) -> f64 {
        let d = self.degree as i64;
        let mut acc = self.get(0).re;
        if d == 0 {
            return acc;
        }
        let (s1, c1) = sincos_turns(theta);
        let (mut ck, mut sk) = (1.0, 0.0);
        for k in 1..=d {
            (ck, sk) = (ck * c1 - sk * s1, sk * c1 + ck * s1);
            let z = self.get(k);
            acc += 2.0 * (z.re * ck - z.im * sk);
        }
        acc
    }

    pub fn map(&self, f: impl Fn(i64, Complex64) -> Complex64) -> Series {
        Series::from_fn(self.degree, |k| f(k, self.get(k)))
    }

    /// `order`-th derivative in `theta`.
    pub fn d_theta(&self, order: u32) -> Series {
        self.map(|k, z| z * Complex64::new(0.0, TAU * k as f64).powu(order))
    }

    /// `theta -> f(theta + alpha)`.
    pub fn shift(&self, alpha: f64) -> Series {
        self.map(|k, z| z * Complex64::from_polar(1.0, TAU * k as f64 * alpha))
    }

    pub fn add(&self, other: &Series) -> Series {
        Series::from_fn(self.degree.max(other.degree), |k| self.get(k) + other.get(k))
    }

    pub fn sub(&self, other: &Series) -> Series {
        Series::from_fn(self.degree.max(other.degree), |k| self.get(k) - other.get(k))
    }

    pub fn scale(&self, s: f64) -> Series {
        self.map(|_, z| z * s)
    }

    pub fn mul(&self, other: &Series) -> Series {
        let d = self.degree + other.degree;
        let (a, b) = (self.degree as i64, other.degree as i64);
        let mut out = Series::zero(d);
        for i in -a..=a {
            for j in -b..=b {
                out.c[(i + j + d as i64) as usize] += self.get(i) * other.get(j);
            }
        }
        out
    }

    /// `int_0^1 f g dtheta`.
    pub fn pairing(&self, other: &Series) -> f64 {
        let d = self.degree.min(other.degree) as i64;
        (-d..=d).map(|k| (self.get(k) * other.get(-k)).re).sum()
    }

    /// `sum_{k != 0} |c_k|^2`, the variance of `f` over a uniform angle.
    pub fn oscillation_power(&self) -> f64 {
        let d = self.degree as i64;
        (-d..=d).filter(|&k| k != 0).map(|k| self.get(k).norm_sqr()).sum()
    }

    /// `int_0^theta f(s) ds`, including the linear term from the mean.
    pub fn integral_from_zero(&self, theta: f64) -> f64 {
        let d = self.degree as i64;
        let mut acc = self.mean() * theta;
        for k in 1..=d {
            let w = TAU * k as f64;
            let z = self.get(k);
            // 2 Re[z (e^{i w theta} - 1) / (i w)]
            let (s, c) = (w * theta).sin_cos();
            acc += 2.0 * (z.re * s + z.im * (c - 1.0)) / w;
        }
        acc
    }

    pub fn filter(&self, keep: impl Fn(i64) -> bool) -> Series {
        self.map(|k, z| if keep(k) { z } else { Complex64::new(0.0, 0.0) })
    }

    pub fn max_abs_imag_defect(&self) -> f64 {
        let d = self.degree as i64;
        (0..=d)
            .map(|k| (self.get(k) - self.get(-k).conj()).norm())
            .fold(0.0, f64::max)
    }
}
