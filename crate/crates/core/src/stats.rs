//! Mergeable streaming moments, fixed-edge histograms and the Kolmogorov-Smirnov distance.

use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal};

/// Central moments accumulated one sample at a time; two accumulators merge exactly.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct Moments {
    pub n: u64,
    pub mean: f64,
    m2: f64,
    m3: f64,
    m4: f64,
}

impl Moments {
    pub fn push(&mut self, x: f64) {
        let n1 = self.n as f64;
        self.n += 1;
        let n = self.n as f64;
        let delta = x - self.mean;
        let delta_n = delta / n;
        let delta_n2 = delta_n * delta_n;
        let term1 = delta * delta_n * n1;
        self.m4 += term1 * delta_n2 * (n * n - 3.0 * n + 3.0) + 6.0 * delta_n2 * self.m2
            - 4.0 * delta_n * self.m3;
        self.m3 += term1 * delta_n * (n - 2.0) - 3.0 * delta_n * self.m2;
        self.m2 += term1;
        self.mean += delta_n;
    }

    pub fn merge(&self, rhs: &Moments) -> Moments {
        if self.n == 0 {
            return *rhs;
        }
        if rhs.n == 0 {
            return *self;
        }
        let (a, b) = (self.n as f64, rhs.n as f64);
        let n = a + b;
        let delta = rhs.mean - self.mean;
        let d2 = delta * delta;
        let mean = self.mean + delta * b / n;
        let m2 = self.m2 + rhs.m2 + d2 * a * b / n;
        let m3 = self.m3 + rhs.m3 + d2 * delta * a * b * (a - b) / (n * n)
            + 3.0 * delta * (a * rhs.m2 - b * self.m2) / n;
        let m4 = self.m4 + rhs.m4 + d2 * d2 * a * b * (a * a - a * b + b * b) / (n * n * n)
            + 6.0 * d2 * (a * a * rhs.m2 + b * b * self.m2) / (n * n)
            + 4.0 * delta * (a * rhs.m3 - b * self.m3) / n;
        Moments {
            n: self.n + rhs.n,
            mean,
            m2,
            m3,
            m4,
        }
    }

    pub fn from_slice(xs: &[f64]) -> Moments {
        let mut m = Moments::default();
        for &x in xs {
            m.push(x);
        }
        m
    }

    /// Unbiased sample variance.
    pub fn variance(&self) -> f64 {
        self.m2 / (self.n as f64 - 1.0)
    }

    pub fn skewness(&self) -> f64 {
        (self.n as f64).sqrt() * self.m3 / self.m2.powf(1.5)
    }

    pub fn excess_kurtosis(&self) -> f64 {
        self.n as f64 * self.m4 / (self.m2 * self.m2) - 3.0
    }

    pub fn se_mean(&self) -> f64 {
        (self.variance() / self.n as f64).sqrt()
    }

    /// Large-sample standard error of the variance, `sqrt((mu4 - sigma^4) / n)`.
    pub fn se_variance(&self) -> f64 {
        let n = self.n as f64;
        let mu4 = self.m4 / n;
        let s2 = self.m2 / n;
        ((mu4 - s2 * s2) / n).max(0.0).sqrt()
    }

    pub fn se_skewness(&self) -> f64 {
        (6.0 / self.n as f64).sqrt()
    }

    pub fn se_excess_kurtosis(&self) -> f64 {
        (24.0 / self.n as f64).sqrt()
    }

    pub fn summary(&self) -> MomentSummary {
        MomentSummary {
            n: self.n,
            mean: self.mean,
            variance: self.variance(),
            skewness: self.skewness(),
            excess_kurtosis: self.excess_kurtosis(),
            se_mean: self.se_mean(),
            se_variance: self.se_variance(),
            se_skewness: self.se_skewness(),
            se_excess_kurtosis: self.se_excess_kurtosis(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MomentSummary {
    pub n: u64,
    pub mean: f64,
    pub variance: f64,
    pub skewness: f64,
    pub excess_kurtosis: f64,
    pub se_mean: f64,
    pub se_variance: f64,
    pub se_skewness: f64,
    pub se_excess_kurtosis: f64,
}

/// Histogram with fixed equal-width bins plus underflow and overflow counts.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Histogram {
    pub lo: f64,
    pub hi: f64,
    pub counts: Vec<u64>,
    pub underflow: u64,
    pub overflow: u64,
}

impl Histogram {
    pub fn new(lo: f64, hi: f64, bins: usize) -> Histogram {
        assert!(hi > lo && bins > 0, "histogram needs lo < hi and at least one bin");
        Histogram {
            lo,
            hi,
            counts: vec![0; bins],
            underflow: 0,
            overflow: 0,
        }
    }

    pub fn push(&mut self, x: f64) {
        if x < self.lo {
            self.underflow += 1;
        } else if x >= self.hi {
            self.overflow += 1;
        } else {
            let w = (self.hi - self.lo) / self.counts.len() as f64;
            let i = (((x - self.lo) / w) as usize).min(self.counts.len() - 1);
            self.counts[i] += 1;
        }
    }

    pub fn merge(&mut self, other: &Histogram) {
        assert!(self.lo == other.lo && self.hi == other.hi && self.counts.len() == other.counts.len());
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        self.underflow += other.underflow;
        self.overflow += other.overflow;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum::<u64>() + self.underflow + self.overflow
    }

    pub fn edges(&self) -> Vec<f64> {
        let n = self.counts.len();
        (0..=n)
            .map(|i| self.lo + (self.hi - self.lo) * i as f64 / n as f64)
            .collect()
    }
}

/// `sup_x |F_n(x) - F(x)|` for a sample against a continuous CDF.
pub fn ks_distance(sample: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut xs = sample.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    xs.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).max((i + 1) as f64 / n - f)
        })
        .fold(0.0, f64::max)
}

/// KS distance to `N(mean, variance)`.
pub fn ks_normal(sample: &[f64], mean: f64, variance: f64) -> f64 {
    let normal = Normal::new(mean, variance.sqrt()).expect("positive variance");
    ks_distance(sample, |x| normal.cdf(x))
}

/// Asymptotic one-sample KS critical value `c(alpha) / sqrt(n)`.
pub fn ks_critical(n: usize, alpha: f64) -> f64 {
    (-0.5 * (alpha / 2.0).ln()).sqrt() / (n as f64).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn moments_of_known_sample() {
        let m = Moments::from_slice(&[1.0, 2.0, 3.0, 4.0]);
        assert_relative_eq!(m.mean, 2.5);
        assert_relative_eq!(m.variance(), 5.0 / 3.0, max_relative = 1e-14);
        assert!(m.skewness().abs() < 1e-14);
        // Population excess kurtosis of a 4-point uniform grid.
        assert_relative_eq!(m.excess_kurtosis(), -1.36, max_relative = 1e-12);
    }

    #[test]
    fn histogram_mass() {
        let mut h = Histogram::new(-1.0, 1.0, 4);
        for x in [-2.0, -1.0, -0.1, 0.0, 0.99, 1.0, 3.0] {
            h.push(x);
        }
        assert_eq!(h.counts, vec![1, 1, 1, 1]);
        assert_eq!((h.underflow, h.overflow), (1, 2));
        assert_eq!(h.total(), 7);
    }

    #[test]
    fn ks_of_perfect_quantiles() {
        let n = 1000;
        let xs: Vec<f64> = (0..n).map(|i| (i as f64 + 0.5) / n as f64).collect();
        let d = ks_distance(&xs, |x| x.clamp(0.0, 1.0));
        assert_relative_eq!(d, 0.5 / n as f64, max_relative = 1e-9);
        assert_relative_eq!(ks_critical(100_000, 0.01), 1.6276 / 316.2278, max_relative = 1e-3);
    }
}
