//! Orbit ensembles: displacement statistics, exit times, martingale functionals, time spent
//! near resonances, characteristic functions of random sums and the blocked H-process.
//!
//! Every operation runs orbits `0..M` of one master seed, so results are reproducible and do
//! not depend on the thread count or on [`Execution`].

use std::io::Write;
use std::ops::Range;
use std::path::Path;

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use serde::Serialize;

use crate::dynamics::{drive, MapFamily, StepView};
use crate::error::{Error, Result};
use crate::normal_form::{DiffusionPrediction, Regime, TestFunction};
use crate::par::{balanced_chunk, map_ranges, Execution};
use crate::resonance::ResonantFrame;
use crate::stats::{ks_normal, Histogram, MomentSummary, Moments};
use crate::strips::{classify, Zone, ZoneAtlas, ZoneParams, ZoneSet};

/// Default ceiling on the number of map steps one call may perform.
pub const DEFAULT_BUDGET: u128 = 1_000_000_000_000;

pub const DEFAULT_BINS: usize = 200;

/// How many orbits, from which seed, on which executor.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct EnsembleSpec {
    pub orbits: u64,
    pub master_seed: u64,
    pub execution: Execution,
    pub budget: u128,
}

impl EnsembleSpec {
    pub fn new(orbits: u64, master_seed: u64) -> Self {
        EnsembleSpec {
            orbits,
            master_seed,
            execution: Execution::default(),
            budget: DEFAULT_BUDGET,
        }
    }

    pub fn with_execution(mut self, execution: Execution) -> Self {
        self.execution = execution;
        self
    }

    pub fn with_budget(mut self, budget: u128) -> Self {
        self.budget = budget;
        self
    }

    /// Refuses work above the budget, reporting the estimate.
    pub fn check_budget(&self, steps_per_orbit: f64) -> Result<()> {
        let requested = (self.orbits as f64 * steps_per_orbit).ceil();
        if requested > self.budget as f64 {
            return Err(Error::Budget {
                requested: requested as u128,
                budget: self.budget,
            });
        }
        Ok(())
    }

    fn run<T: Send>(&self, f: impl Fn(Range<u64>) -> Vec<T> + Sync + Send) -> Vec<T> {
        map_ranges(0..self.orbits, balanced_chunk(self.orbits, self.execution), self.execution, f)
    }
}

/// Statistics of `r_n - r_0` over an ensemble.
#[derive(Clone, Debug, Serialize)]
pub struct EnsembleStats {
    pub orbits: u64,
    pub steps: u64,
    pub epsilon: f64,
    /// Diffusive time `epsilon^2 n`.
    pub s: f64,
    #[serde(skip)]
    pub moments: Moments,
    pub summary: MomentSummary,
    pub histogram: Histogram,
    /// Sum of all symbol labels drawn, for the fairness check.
    pub label_sum: i64,
    /// Largest `|sum of increments - (r_k - r_0)|` seen on checkpoints.
    pub telescoping_defect: f64,
    /// Displacements in orbit order.
    #[serde(skip)]
    pub sample: Vec<f64>,
}

impl EnsembleStats {
    fn from_sample(
        sample: Vec<f64>,
        steps: u64,
        epsilon: f64,
        histogram: Histogram,
        label_sum: i64,
        telescoping_defect: f64,
    ) -> Self {
        let mut histogram = histogram;
        let mut moments = Moments::default();
        for &x in &sample {
            moments.push(x);
            histogram.push(x);
        }
        EnsembleStats {
            orbits: sample.len() as u64,
            steps,
            epsilon,
            s: epsilon * epsilon * steps as f64,
            summary: moments.summary(),
            moments,
            histogram,
            label_sum,
            telescoping_defect,
            sample,
        }
    }

    /// Pools two ensembles of the same horizon.
    pub fn merge(&self, other: &EnsembleStats) -> Result<EnsembleStats> {
        if self.steps != other.steps || self.epsilon != other.epsilon {
            return Err(Error::Config("merging ensembles with different n or epsilon".into()));
        }
        let mut histogram = self.histogram.clone();
        if histogram.lo != other.histogram.lo
            || histogram.hi != other.histogram.hi
            || histogram.counts.len() != other.histogram.counts.len()
        {
            return Err(Error::Config("merging ensembles with different histogram bins".into()));
        }
        histogram.merge(&other.histogram);
        let moments = self.moments.merge(&other.moments);
        let mut sample = self.sample.clone();
        sample.extend_from_slice(&other.sample);
        Ok(EnsembleStats {
            orbits: self.orbits + other.orbits,
            steps: self.steps,
            epsilon: self.epsilon,
            s: self.s,
            summary: moments.summary(),
            moments,
            histogram,
            label_sum: self.label_sum + other.label_sum,
            telescoping_defect: self.telescoping_defect.max(other.telescoping_defect),
            sample,
        })
    }

    /// `mean(omega)` over every symbol drawn; labels are +-1 for a fair pair.
    pub fn mean_label(&self) -> f64 {
        self.label_sum as f64 / (self.orbits as f64 * self.steps as f64)
    }

    /// KS distance of the displacement sample to `N(mean, variance)`.
    pub fn ks_to_normal(&self, mean: f64, variance: f64) -> Option<f64> {
        (variance > 0.0 && !self.sample.is_empty()).then(|| ks_normal(&self.sample, mean, variance))
    }

    /// Writes the displacements as little-endian `f64`.
    pub fn write_raw(&self, path: &Path) -> Result<()> {
        write_raw_le(path, &self.sample)
    }
}

pub fn write_raw_le(path: &Path, xs: &[f64]) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    for x in xs {
        w.write_all(&x.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

/// Histogram range covering the displacement of `n` steps with generous margin.
pub fn default_histogram(fam: &MapFamily, n: u64) -> Histogram {
    let eps = fam.epsilon();
    let spread = 6.0 * eps * (n as f64).sqrt() * fam.max_abs_v();
    let w = spread.max(1e-12);
    Histogram::new(-w, w, DEFAULT_BINS)
}

/// `M` orbits of `n` steps from `x0`; the telescoping identity is checked every `thin` steps
/// (`thin = 0` disables it).
pub fn run_ensemble(
    fam: &MapFamily,
    x0: (f64, f64),
    n: u64,
    spec: &EnsembleSpec,
    thin: u64,
    histogram: Option<Histogram>,
) -> Result<EnsembleStats> {
    spec.check_budget(n as f64)?;
    let r0 = x0.1;
    let per_orbit: Vec<(f64, i64, f64)> = spec.run(|range| {
        drive(
            fam,
            spec.master_seed,
            range,
            |_| (x0, (0i64, 0.0f64)),
            |st, v: &StepView| {
                st.0 += v.symbol as i64;
                if thin > 0 && v.steps.is_multiple_of(thin) {
                    st.1 = st.1.max((v.displacement - (v.r - r0)).abs());
                }
                v.steps < n
            },
            |_, st, v| (v.displacement, st.0, st.1),
        )
    });
    let labels = per_orbit.iter().map(|x| x.1).sum();
    let defect = per_orbit.iter().map(|x| x.2).fold(0.0, f64::max);
    let sample = per_orbit.into_iter().map(|x| x.0).collect();
    Ok(EnsembleStats::from_sample(
        sample,
        n,
        fam.epsilon(),
        histogram.unwrap_or_else(|| default_histogram(fam, n)),
        labels,
        defect,
    ))
}

pub const MOMENT_Z_LIMIT: f64 = 4.0;

/// KS threshold `1.63 / sqrt(M)`, the 1% critical value.
pub fn default_ks_threshold(m: u64) -> f64 {
    1.63 / (m as f64).sqrt()
}

#[derive(Clone, Debug, Serialize)]
pub struct CltReport {
    pub mean: f64,
    pub variance: f64,
    pub ks: f64,
    pub ks_threshold: f64,
    pub z_mean: f64,
    pub z_variance: f64,
    pub z_skewness: f64,
    pub z_excess_kurtosis: f64,
    pub pass: bool,
    pub diagnostic: Option<String>,
}

/// Compares the displacement sample with `N(s b(r0), s sigma^2(r0))`.
pub fn clt_test(
    stats: &EnsembleStats,
    pred: &DiffusionPrediction,
    r0: f64,
    ks_threshold: Option<f64>,
) -> Result<CltReport> {
    if pred.regime() != Regime::Ti {
        return Err(Error::Regime("the CLT test uses the averaged TI fields".into()));
    }
    let b = pred.drift(r0)?;
    Ok(clt_test_against(
        stats,
        stats.s * b,
        stats.s * pred.variance(r0),
        ks_threshold.unwrap_or_else(|| default_ks_threshold(stats.orbits)),
        0,
    ))
}

/// Same test against explicit parameters; `censored` orbits above 1% invalidate it.
pub fn clt_test_against(
    stats: &EnsembleStats,
    mean: f64,
    variance: f64,
    ks_threshold: f64,
    censored: u64,
) -> CltReport {
    let m = &stats.summary;
    let mut report = CltReport {
        mean,
        variance,
        ks: f64::NAN,
        ks_threshold,
        z_mean: f64::NAN,
        z_variance: f64::NAN,
        z_skewness: f64::NAN,
        z_excess_kurtosis: f64::NAN,
        pass: false,
        diagnostic: None,
    };
    if censored as f64 > 0.01 * (stats.orbits + censored) as f64 {
        report.diagnostic = Some(format!("{censored} censored orbits exceed 1% of the sample"));
        return report;
    }
    if !(m.variance > 0.0) || stats.orbits < 2 {
        report.diagnostic = Some("degenerate sample: zero displacement variance".into());
        return report;
    }
    if !(variance > 0.0) {
        report.diagnostic = Some("predicted variance is zero".into());
        return report;
    }
    report.ks = ks_normal(&stats.sample, mean, variance);
    report.z_mean = (m.mean - mean) / (variance / m.n as f64).sqrt();
    report.z_variance = (m.variance - variance) / m.se_variance;
    report.z_skewness = m.skewness / m.se_skewness;
    report.z_excess_kurtosis = m.excess_kurtosis / m.se_excess_kurtosis;
    let z_ok = [report.z_mean, report.z_variance, report.z_skewness, report.z_excess_kurtosis]
        .iter()
        .all(|z| z.abs() < MOMENT_Z_LIMIT);
    report.pass = report.ks < ks_threshold && z_ok;
    if !report.pass {
        report.diagnostic = Some(if report.ks >= ks_threshold {
            format!("KS {} >= {}", report.ks, ks_threshold)
        } else {
            "a moment z-score exceeds 4".into()
        });
    }
    report
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Up,
    Down,
    Censored,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct StoppingTimeRecord {
    pub orbit: u64,
    /// Exit time, or the censoring horizon.
    pub n: u64,
    pub side: Side,
    /// `r_n - r_0`.
    pub displacement: f64,
}

impl StoppingTimeRecord {
    pub fn censored(&self) -> bool {
        self.side == Side::Censored
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct StoppingTimes {
    pub beta: f64,
    pub width: f64,
    pub max_steps: u64,
    pub records: Vec<StoppingTimeRecord>,
    /// Exit times of uncensored orbits, binned in `log10 n`.
    pub log10_histogram: Histogram,
}

impl StoppingTimes {
    pub fn censored(&self) -> usize {
        self.records.iter().filter(|r| r.censored()).count()
    }

    pub fn exit_times(&self) -> Vec<u64> {
        self.records.iter().filter(|r| !r.censored()).map(|r| r.n).collect()
    }

    /// Fraction of all orbits whose exit time is censored or outside `[lo, hi]`.
    pub fn fraction_outside(&self, lo: f64, hi: f64) -> f64 {
        let out = self
            .records
            .iter()
            .filter(|r| r.censored() || (r.n as f64) < lo || (r.n as f64) > hi)
            .count();
        out as f64 / self.records.len().max(1) as f64
    }

    pub fn median(&self) -> Option<f64> {
        let mut t = self.exit_times();
        if t.is_empty() {
            return None;
        }
        t.sort_unstable();
        let k = t.len();
        Some(if k % 2 == 1 { t[k / 2] as f64 } else { 0.5 * (t[k / 2 - 1] + t[k / 2]) as f64 })
    }
}

/// `10 epsilon^{-2}`, or `u64::MAX` at `epsilon = 0`.
pub fn default_max_steps(epsilon: f64) -> u64 {
    if epsilon > 0.0 {
        (10.0 / (epsilon * epsilon)).min(u64::MAX as f64) as u64
    } else {
        u64::MAX
    }
}

/// Exit times from `{|r - r0| <= epsilon^beta}`; the first `k` with `|r_k - r0| > epsilon^beta`.
pub fn stopping_times(
    fam: &MapFamily,
    x0: (f64, f64),
    beta: f64,
    spec: &EnsembleSpec,
    max_steps: u64,
) -> Result<StoppingTimes> {
    let eps = fam.epsilon();
    let width = eps.powf(beta);
    spec.check_budget(expected_exit_time(fam, x0.1, width).min(max_steps as f64))?;
    let records: Vec<StoppingTimeRecord> = spec.run(|range| {
        drive(
            fam,
            spec.master_seed,
            range,
            |_| (x0, ()),
            |_, v| v.displacement.abs() <= width && v.steps < max_steps,
            |orbit, _, v| {
                let side = if v.displacement > width {
                    Side::Up
                } else if v.displacement < -width {
                    Side::Down
                } else {
                    Side::Censored
                };
                StoppingTimeRecord { orbit, n: v.steps, side, displacement: v.displacement }
            },
        )
    });
    let top = (max_steps.max(10) as f64).log10().ceil().max(1.0);
    let mut log10_histogram = Histogram::new(0.0, top, 20 * top as usize);
    for r in records.iter().filter(|r| !r.censored()) {
        log10_histogram.push((r.n.max(1) as f64).log10());
    }
    Ok(StoppingTimes { beta, width, max_steps, records, log10_histogram })
}

/// Mean exit time of the limiting Brownian motion, `w^2 / (epsilon^2 sigma^2)`; infinite at `epsilon = 0`.
pub fn expected_exit_time(fam: &MapFamily, r0: f64, width: f64) -> f64 {
    let eps = fam.epsilon();
    let s2 = fam.variance(r0);
    if eps == 0.0 || s2 <= 0.0 {
        return f64::INFINITY;
    }
    width * width / (eps * eps * s2)
}

/// Drift and variance fields tabulated on a grid for per-step lookups.
#[derive(Clone, Debug)]
struct FieldTable {
    r_lo: f64,
    inv_dr: f64,
    /// Set when every entry is the same, as for r-independent area-preserving families.
    uniform: Option<(f64, f64)>,
    nr: usize,
    nt: usize,
    b: Vec<f64>,
    s2: Vec<f64>,
}

const FIELD_R_POINTS: usize = 2049;
const FIELD_THETA_POINTS: usize = 256;
const FIELD_R_POINTS_IR: usize = 257;

impl FieldTable {
    fn build(pred: &DiffusionPrediction, lo: f64, hi: f64) -> Result<FieldTable> {
        let (nt, nr) = match pred.regime() {
            Regime::Ti => (1, FIELD_R_POINTS),
            Regime::Ir { .. } => (FIELD_THETA_POINTS, FIELD_R_POINTS_IR),
        };
        let dr = (hi - lo) / (nr - 1) as f64;
        let mut b = Vec::with_capacity(nt * nr);
        let mut s2 = Vec::with_capacity(nt * nr);
        for i in 0..nr {
            let r = lo + i as f64 * dr;
            match pred.regime() {
                Regime::Ti => {
                    b.push(pred.drift_unchecked(r));
                    s2.push(pred.variance(r));
                }
                Regime::Ir { .. } => {
                    for j in 0..nt {
                        let theta = j as f64 / nt as f64;
                        b.push(pred.drift_field(theta, r)?);
                        s2.push(pred.variance_field(theta, r));
                    }
                }
            }
        }
        let uniform = (b.iter().all(|&x| x == b[0]) && s2.iter().all(|&x| x == s2[0])).then(|| (b[0], s2[0]));
        Ok(FieldTable { r_lo: lo, inv_dr: 1.0 / dr, uniform, nr, nt, b, s2 })
    }

    /// Linear in `r`, periodic linear in `theta`; clamps outside the grid.
    #[inline]
    fn eval(&self, theta: f64, r: f64) -> (f64, f64) {
        if let Some(u) = self.uniform {
            return u;
        }
        let x = ((r - self.r_lo) * self.inv_dr).clamp(0.0, (self.nr - 1) as f64);
        let i = (x as usize).min(self.nr - 2);
        let fr = x - i as f64;
        if self.nt == 1 {
            let lerp = |v: &[f64]| v[i] + fr * (v[i + 1] - v[i]);
            return (lerp(&self.b), lerp(&self.s2));
        }
        let y = theta.rem_euclid(1.0) * self.nt as f64;
        let j = (y as usize).min(self.nt - 1);
        let ft = y - j as f64;
        let j1 = (j + 1) % self.nt;
        let nt = self.nt;
        let bilerp = |v: &[f64]| {
            let a = v[i * nt + j] + ft * (v[i * nt + j1] - v[i * nt + j]);
            let c = v[(i + 1) * nt + j] + ft * (v[(i + 1) * nt + j1] - v[(i + 1) * nt + j]);
            a + fr * (c - a)
        };
        (bilerp(&self.b), bilerp(&self.s2))
    }
}

pub const DEFAULT_LAMBDA: f64 = 1.0;

#[derive(Clone, Debug, Serialize)]
pub struct MartingaleResidual {
    pub test_function: String,
    pub f0: f64,
    pub mean_eta: f64,
    /// `E eta - f(r0)`.
    pub residual: f64,
    pub se: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct MartingaleReport {
    pub epsilon: f64,
    pub beta: f64,
    pub lambda: f64,
    pub orbits: u64,
    /// Orbits stopped at the horizon; their functional uses the truncated sum.
    pub censored: u64,
    pub mean_exit_time: f64,
    pub residuals: Vec<MartingaleResidual>,
}

/// Monte Carlo mean of the martingale functional
/// `eta = e^{-lambda eps^2 n_beta} f(r_{n_beta}) + eps^2 sum_{k < n_beta} e^{-lambda eps^2 k} (lambda f - L f)(r_k)`
/// with `L f = b f' + sigma^2 f'' / 2` from the regime of `pred`.
#[allow(clippy::too_many_arguments)]
pub fn martingale_residual<T: TestFunction>(
    fam: &MapFamily,
    pred: &DiffusionPrediction,
    zp: &ZoneParams,
    tests: &[T],
    lambda: f64,
    x0: (f64, f64),
    spec: &EnsembleSpec,
    max_steps: u64,
) -> Result<MartingaleReport> {
    let r0 = x0.1;
    let class = classify(r0, zp);
    match (class.zone, pred.regime()) {
        (Zone::Ti, Regime::Ti) => {}
        (Zone::Ir, Regime::Ir { p, q }) if class.rational == Some((p, q)) => {}
        (zone, regime) => {
            return Err(Error::Regime(format!(
                "start r0 = {r0} lies in {} but the prediction is for {regime:?}",
                zone.tag()
            )))
        }
    }
    let eps = fam.epsilon();
    let eps2 = eps * eps;
    let width = zp.strip_width();
    spec.check_budget(expected_exit_time(fam, r0, width).min(max_steps as f64))?;
    let pad = 4.0 * eps * (1.0 + fam.max_abs_v());
    let table = FieldTable::build(pred, r0 - width - pad, r0 + width + pad)?;
    let decay = (-lambda * eps2).exp();
    let nt = tests.len();

    struct Acc {
        disc: f64,
        sum: Vec<f64>,
        eta: Vec<f64>,
    }
    let per_orbit: Vec<(Vec<f64>, u64, bool)> = spec.run(|range| {
        drive(
            fam,
            spec.master_seed,
            range,
            |_| (x0, Acc { disc: 1.0, sum: vec![0.0; nt], eta: vec![0.0; nt] }),
            |acc, v| {
                let stop = v.displacement.abs() > width || v.steps >= max_steps;
                if stop {
                    for (t, f) in tests.iter().enumerate() {
                        acc.eta[t] = acc.disc * f.value(v.r) + acc.sum[t];
                    }
                    return false;
                }
                let (b, s2) = table.eval(v.theta, v.r);
                let w = eps2 * acc.disc;
                for (sum, f) in acc.sum.iter_mut().zip(tests) {
                    let lf = b * f.d1(v.r) + 0.5 * s2 * f.d2(v.r);
                    *sum += w * (lambda * f.value(v.r) - lf);
                }
                acc.disc *= decay;
                true
            },
            |_, acc, v| (acc.eta, v.steps, v.displacement.abs() <= width),
        )
    });
    let censored = per_orbit.iter().filter(|o| o.2).count() as u64;
    let mean_exit_time =
        per_orbit.iter().map(|o| o.1 as f64).sum::<f64>() / per_orbit.len().max(1) as f64;
    let residuals = tests
        .iter()
        .enumerate()
        .map(|(t, f)| {
            let m = Moments::from_slice(&per_orbit.iter().map(|o| o.0[t]).collect::<Vec<_>>());
            let f0 = f.value(r0);
            MartingaleResidual {
                test_function: f.name(),
                f0,
                mean_eta: m.mean,
                residual: m.mean - f0,
                se: if m.n > 1 { m.se_mean() } else { f64::NAN },
            }
        })
        .collect();
    Ok(MartingaleReport {
        epsilon: eps,
        beta: zp.beta,
        lambda,
        orbits: spec.orbits,
        censored,
        mean_exit_time,
        residuals,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct ExceedProbability {
    pub rho: f64,
    pub probability: f64,
    /// Binomial standard error.
    pub se: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct StripTime {
    pub steps: u64,
    pub counted: Vec<Zone>,
    /// Per orbit, steps spent in each zone in the order RR, TZ1, TZ2, IR, TI.
    #[serde(skip)]
    pub zone_steps: Vec<[u64; 5]>,
    /// Mean fraction of time in each zone, same order.
    pub mean_zone_fraction: [f64; 5],
    pub exceed: Vec<ExceedProbability>,
}

fn zone_index(z: Zone) -> usize {
    match z {
        Zone::Rr => 0,
        Zone::Tz1 => 1,
        Zone::Tz2 => 2,
        Zone::Ir => 3,
        Zone::Ti => 4,
    }
}

impl StripTime {
    /// `T_R(n) / n` per orbit for a set of counted zones.
    pub fn fractions(&self, counted: ZoneSet) -> Vec<f64> {
        self.zone_steps
            .iter()
            .map(|z| {
                let t: u64 = Zone::ALL.iter().filter(|&&c| counted.contains(c)).map(|&c| z[zone_index(c)]).sum();
                t as f64 / self.steps as f64
            })
            .collect()
    }

    /// Empirical `P{T_R(n) >= rho n}` with its binomial standard error.
    pub fn exceed_probability(&self, counted: ZoneSet, rho: f64) -> ExceedProbability {
        let f = self.fractions(counted);
        let m = f.len().max(1) as f64;
        let p = f.iter().filter(|&&x| x >= rho).count() as f64 / m;
        ExceedProbability { rho, probability: p, se: (p * (1.0 - p) / m).sqrt() }
    }
}

/// Occupation of the zones by `M` orbits over steps `0..n`.
pub fn time_in_rational_strips(
    fam: &MapFamily,
    zp: &ZoneParams,
    x0: (f64, f64),
    n: u64,
    spec: &EnsembleSpec,
    counted: ZoneSet,
    rho_grid: &[f64],
) -> Result<StripTime> {
    spec.check_budget(n as f64)?;
    let eps = fam.epsilon();
    let reach = (8.0 * eps * (n as f64).sqrt() * fam.max_abs_v() + 4.0 * eps).min(n as f64 * eps * 2.0);
    let atlas = ZoneAtlas::new(zp, x0.1 - reach - zp.gamma, x0.1 + reach + zp.gamma);
    let zone_steps: Vec<[u64; 5]> = spec.run(|range| {
        drive(
            fam,
            spec.master_seed,
            range,
            |_| (x0, ([0u64; 5], 0usize)),
            |st, v| {
                if v.steps >= n {
                    return false;
                }
                let z = atlas.zone(v.r, &mut st.1);
                st.0[zone_index(z)] += 1;
                true
            },
            |_, st, _| st.0,
        )
    });
    let m = zone_steps.len().max(1) as f64;
    let mut mean_zone_fraction = [0.0; 5];
    for z in &zone_steps {
        for (a, &c) in mean_zone_fraction.iter_mut().zip(z) {
            *a += c as f64 / (n.max(1) as f64 * m);
        }
    }
    let mut out = StripTime {
        steps: n,
        counted: counted.zones(),
        zone_steps,
        mean_zone_fraction,
        exceed: Vec::new(),
    };
    out.exceed = rho_grid.iter().map(|&rho| out.exceed_probability(counted, rho)).collect();
    Ok(out)
}

/// Every resonant zone: RR, both transition bands and IR.
pub fn all_resonant_zones() -> ZoneSet {
    ZoneSet::of(&[Zone::Rr, Zone::Tz1, Zone::Tz2, Zone::Ir])
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct CharPoint {
    pub t: f64,
    pub re: f64,
    pub im: f64,
    /// `exp(-sigma^2 t^2 / 2)`.
    pub reference: f64,
    pub error: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct CharFunction {
    pub n: usize,
    pub replicas: u64,
    /// `(1/n) sum v_k^2`.
    pub sigma2: f64,
    /// Same average over the first half of the horizon.
    pub sigma2_half: f64,
    /// Whether the two averages agree to 5%.
    pub converged: bool,
    pub points: Vec<CharPoint>,
}

impl CharFunction {
    pub fn sup_error(&self) -> f64 {
        self.points.iter().map(|p| p.error).fold(0.0, f64::max)
    }
}

/// Empirical characteristic function of `S_n / sqrt(n)` with `S_n = sum v_k omega_k` and
/// Rademacher `omega_k`, against the Gaussian with variance `(1/n) sum v_k^2`.
pub fn empirical_char_function(v: &[f64], spec: &EnsembleSpec, t_grid: &[f64]) -> Result<CharFunction> {
    let n = v.len();
    spec.check_budget(n as f64)?;
    let sums: Vec<f64> = spec.run(|range| {
        range
            .map(|rep| {
                let mut rng = ChaCha8Rng::seed_from_u64(spec.master_seed);
                rng.set_stream(rep);
                let mut acc = 0.0;
                for chunk in v.chunks(64) {
                    let mut bits = rng.next_u64();
                    for &x in chunk {
                        acc += if bits & 1 == 1 { x } else { -x };
                        bits >>= 1;
                    }
                }
                acc
            })
            .collect()
    });
    let mean_sq = |xs: &[f64]| xs.iter().map(|x| x * x).sum::<f64>() / xs.len().max(1) as f64;
    let sigma2 = mean_sq(v);
    let sigma2_half = mean_sq(&v[..n / 2]);
    let converged = (sigma2 - sigma2_half).abs() <= 0.05 * sigma2.max(f64::MIN_POSITIVE);
    let scale = 1.0 / (n.max(1) as f64).sqrt();
    let m = sums.len().max(1) as f64;
    let points = t_grid
        .iter()
        .map(|&t| {
            let (mut re, mut im) = (0.0, 0.0);
            for &s in &sums {
                let (sn, cs) = (t * s * scale).sin_cos();
                re += cs;
                im += sn;
            }
            let (re, im) = (re / m, im / m);
            let reference = (-0.5 * sigma2 * t * t).exp();
            CharPoint { t, re, im, reference, error: (re - reference).hypot(im) }
        })
        .collect();
    Ok(CharFunction { n, replicas: spec.orbits, sigma2, sigma2_half, converged, points })
}

/// Which Hamiltonian the blocked process records.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(rename_all = "lowercase", tag = "mode")]
pub enum HMode {
    /// `H(theta, R)` with `R = (r - p/q) / sqrt(epsilon)`.
    Rr,
    /// `|r0 - p/q|^{-1} epsilon^{-1 + rho} (rhat^2 / 2 - (epsilon / q) int E v^(q)(s, rhat) ds)`.
    Tz { rho: f64 },
}

#[derive(Clone, Debug, Serialize)]
pub struct HProcess {
    pub mode: HMode,
    pub blocks: u64,
    pub orbits: u64,
    /// Increments over every recorded block.
    pub increments: MomentSummary,
    /// Increments over the first block only; independent across orbits.
    pub first_block: MomentSummary,
    /// `H_n - H_0` per orbit.
    pub total: MomentSummary,
    /// Predicted mean first-block increment, `epsilon F(theta0, R0)` in RR mode and 0 in TZ mode.
    pub predicted_mean: f64,
    /// `(first-block mean - prediction) / SE`.
    pub z_first: f64,
    /// Orbits that left `|r - p/q| <= gamma` and were truncated.
    pub escaped: u64,
}

/// Records `H` at the ends of `q`-step blocks along `M` orbits from `x0`.
pub fn rr_h_process(
    fam: &MapFamily,
    frame: &ResonantFrame,
    mode: HMode,
    x0: (f64, f64),
    blocks: u64,
    spec: &EnsembleSpec,
) -> Result<HProcess> {
    let q = frame.q;
    spec.check_budget((blocks * q) as f64)?;
    let eps = fam.epsilon();
    let pq = frame.rational();
    let rhat0 = x0.1 - pq;
    let sqrt_eps = eps.sqrt();
    let window = frame.gamma;
    if rhat0.abs() > window {
        return Err(Error::Regime(format!(
            "start |r0 - {}/{}| = {} lies outside the resonance window {window}",
            frame.p,
            q,
            rhat0.abs()
        )));
    }
    let predicted_mean = match mode {
        HMode::Rr => {
            let big_r = rhat0 / sqrt_eps;
            eps * crate::resonance::rr_drift_variance(frame, x0.0, big_r)?.0
        }
        HMode::Tz { rho } => {
            let lo = frame.k1 * sqrt_eps;
            if rhat0.abs() < lo {
                return Err(Error::Regime(format!(
                    "start |r0 - p/q| = {} lies inside the RR strip of half-width {lo}",
                    rhat0.abs()
                )));
            }
            if !(rho > 0.0) {
                return Err(Error::Config("TZ mode needs rho > 0".into()));
            }
            0.0
        }
    };
    let h = |theta: f64, r: f64| -> f64 {
        let rhat = r - pq;
        match mode {
            HMode::Rr => frame.hamiltonian(theta, rhat / sqrt_eps),
            HMode::Tz { rho } => {
                eps * frame.hamiltonian_coupled(theta, rhat / sqrt_eps) * eps.powf(rho - 1.0) / rhat0.abs()
            }
        }
    };
    let h0 = h(x0.0, x0.1);

    struct St {
        last: f64,
        first: Option<f64>,
        incs: Moments,
        escaped: bool,
    }
    let per_orbit: Vec<St> = spec.run(|range| {
        drive(
            fam,
            spec.master_seed,
            range,
            |_| (x0, St { last: h0, first: None, incs: Moments::default(), escaped: false }),
            |st, v| {
                if v.steps == 0 {
                    return blocks > 0;
                }
                if (v.r - pq).abs() > window {
                    st.escaped = true;
                    return false;
                }
                if v.steps % q == 0 {
                    let hv = h(v.theta, v.r);
                    let inc = hv - st.last;
                    st.first.get_or_insert(inc);
                    st.incs.push(inc);
                    st.last = hv;
                    return v.steps < blocks * q;
                }
                true
            },
            |_, st, _| st,
        )
    });
    let mut incs = Moments::default();
    let mut first = Moments::default();
    let mut total = Moments::default();
    let mut escaped = 0;
    for st in &per_orbit {
        incs = incs.merge(&st.incs);
        if let Some(f) = st.first {
            first.push(f);
        }
        total.push(st.last - h0);
        escaped += st.escaped as u64;
    }
    let fs = first.summary();
    let z_first = (fs.mean - predicted_mean) / fs.se_mean;
    Ok(HProcess {
        mode,
        blocks,
        orbits: spec.orbits,
        increments: incs.summary(),
        first_block: fs,
        total: total.summary(),
        predicted_mean,
        z_first,
        escaped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::normal_form::{default_gamma, Power};

    fn small(m: u64) -> EnsembleSpec {
        EnsembleSpec::new(m, 7)
    }

    #[test]
    fn frozen_action_has_no_spread() {
        let fam = MapFamily::cos_sin(0.0);
        let st = run_ensemble(&fam, (0.1, 0.618), 100, &small(100), 10, None).unwrap();
        assert_eq!(st.summary.variance, 0.0);
        assert_eq!(st.histogram.total(), 100);
        let rep = clt_test_against(&st, 0.0, 0.0, 0.1, 0);
        assert!(!rep.pass);
        assert!(rep.diagnostic.unwrap().contains("zero"));
    }

    #[test]
    fn budget_is_enforced() {
        let fam = MapFamily::cos_sin(0.01);
        let spec = small(1000).with_budget(10_000);
        match run_ensemble(&fam, (0.0, 0.5), 100, &spec, 0, None) {
            Err(Error::Budget { requested, .. }) => assert_eq!(requested, 100_000),
            other => panic!("expected a budget error, got {other:?}"),
        }
    }

    #[test]
    fn frozen_orbits_are_all_censored() {
        let fam = MapFamily::cos_sin(0.0);
        let st = stopping_times(&fam, (0.0, 0.618), 0.2, &small(20).with_budget(u128::MAX), 1000).unwrap();
        assert_eq!(st.censored(), 20);
        assert!(st.records.iter().all(|r| r.n == 1000));
    }

    #[test]
    fn constant_functional_telescopes_at_rest() {
        let fam = MapFamily::cos_sin(0.0);
        let pred = DiffusionPrediction::new(&fam, default_gamma(1)).unwrap();
        let zp = ZoneParams::new(1e-3, 0.2, 0.04, 1).unwrap();
        let spec = small(16).with_budget(u128::MAX);
        let rep = martingale_residual(&fam, &pred, &zp, &[Power(0)], 1.0, (0.0, 0.618), &spec, 500).unwrap();
        assert_eq!(rep.censored, 16);
        assert!(rep.residuals[0].residual.abs() < 1e-10);
    }

    #[test]
    fn regime_mismatch_is_rejected() {
        let fam = MapFamily::cos_sin(1e-3);
        let pred = DiffusionPrediction::new(&fam, default_gamma(1)).unwrap();
        let zp = ZoneParams::new(1e-3, 0.2, 0.04, 1).unwrap();
        let err = martingale_residual(&fam, &pred, &zp, &[Power(1)], 1.0, (0.0, 0.01), &small(4), 10);
        assert!(matches!(err, Err(Error::Regime(_))));
    }

    #[test]
    fn char_function_of_zero_weights_is_one() {
        let cf = empirical_char_function(&[0.0; 100], &small(50), &[-1.0, 0.5, 2.0]).unwrap();
        assert!(cf.points.iter().all(|p| p.re == 1.0 && p.im == 0.0));
    }

    #[test]
    fn strip_time_at_rest() {
        let fam = MapFamily::cos_sin(0.0);
        let zp = ZoneParams::new(1e-3, 0.2, 0.04, 1).unwrap();
        let ti = time_in_rational_strips(&fam, &zp, (0.0, 0.618), 50, &small(10), all_resonant_zones(), &[0.2]).unwrap();
        assert!(ti.fractions(all_resonant_zones()).iter().all(|&f| f == 0.0));
        let fam = MapFamily::cos_sin(1e-6);
        let rr = time_in_rational_strips(&fam, &zp, (0.0, 0.0), 50, &small(10), all_resonant_zones(), &[0.5]).unwrap();
        assert!(rr.fractions(ZoneSet::of(&[Zone::Rr])).iter().all(|&f| f == 1.0));
    }
}
