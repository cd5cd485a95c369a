//! The random cylinder map and orbit generation.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::trig::{fast_floor, horner, sincos_turns, TrigPoly};

/// Highest angular harmonic the compiled step kernel supports.
pub const MAX_KERNEL_DEGREE: usize = 256;

const NORMALIZATION_GRID: usize = 4096;
const NORMALIZATION_R_SAMPLES: usize = 65;

/// One map of the family: `theta' = theta + r + eps u`, `r' = r + eps v + eps^2 w`.
#[derive(Clone, Debug)]
pub struct SymbolMap {
    pub label: i32,
    pub prob: f64,
    pub u: TrigPoly,
    pub v: TrigPoly,
    pub w: TrigPoly,
}

#[derive(Clone, Debug)]
pub struct MapFamily {
    epsilon: f64,
    symbols: Vec<SymbolMap>,
    r_window: [f64; 2],
    degree: usize,
    area_preserving: bool,
    kernel: Kernel,
}

impl MapFamily {
    pub fn new(epsilon: f64, symbols: Vec<SymbolMap>, r_window: [f64; 2]) -> Result<Self> {
        let fam = Self::build(epsilon, symbols, r_window)?;
        let m = fam.max_abs_v();
        if m > 1.0 + 1e-12 {
            return Err(Error::Normalization { max_abs: m });
        }
        Ok(fam)
    }

    fn build(epsilon: f64, symbols: Vec<SymbolMap>, r_window: [f64; 2]) -> Result<Self> {
        if !(epsilon >= 0.0 && epsilon.is_finite()) {
            return Err(Error::Config(format!("epsilon must be finite and >= 0, got {epsilon}")));
        }
        if symbols.len() < 2 {
            return Err(Error::Config("need at least two symbols".into()));
        }
        if r_window[0].partial_cmp(&r_window[1]) != Some(std::cmp::Ordering::Less) {
            return Err(Error::Config(format!("r_window {r_window:?} is empty")));
        }
        let total: f64 = symbols.iter().map(|s| s.prob).sum();
        if symbols.iter().any(|s| !(s.prob > 0.0)) || (total - 1.0).abs() > 1e-12 {
            return Err(Error::Config("symbol probabilities must be positive and sum to 1".into()));
        }
        let mut labels: Vec<i32> = symbols.iter().map(|s| s.label).collect();
        labels.sort_unstable();
        labels.dedup();
        if labels.len() != symbols.len() {
            return Err(Error::Config("symbol labels must be distinct".into()));
        }
        let degree = symbols
            .iter()
            .flat_map(|s| [s.u.degree(), s.v.degree(), s.w.degree()])
            .max()
            .unwrap_or(0);
        if degree > MAX_KERNEL_DEGREE {
            return Err(Error::Config(format!(
                "angular degree {degree} exceeds the supported maximum {MAX_KERNEL_DEGREE}"
            )));
        }
        let symbols: Vec<SymbolMap> = symbols
            .into_iter()
            .map(|s| SymbolMap {
                u: s.u.with_degree(degree),
                v: s.v.with_degree(degree),
                w: s.w.with_degree(degree),
                ..s
            })
            .collect();
        let area_preserving = symbols
            .iter()
            .all(|s| s.u == s.v && s.v.is_r_independent() && s.u.is_r_independent());
        let kernel = Kernel::compile(epsilon, &symbols, degree);
        Ok(MapFamily {
            epsilon,
            symbols,
            r_window,
            degree,
            area_preserving,
            kernel,
        })
    }

    /// Two equiprobable maps labelled `+1` and `-1`.
    pub fn fair_pair(epsilon: f64, plus: [TrigPoly; 3], minus: [TrigPoly; 3]) -> Result<Self> {
        let [u1, v1, w1] = plus;
        let [u2, v2, w2] = minus;
        MapFamily::new(
            epsilon,
            vec![
                SymbolMap { label: 1, prob: 0.5, u: u1, v: v1, w: w1 },
                SymbolMap { label: -1, prob: 0.5, u: u2, v: v2, w: w2 },
            ],
            [0.0, 1.0],
        )
    }

    /// `u_{+1} = v_{+1} = cos(2 pi theta)`, `u_{-1} = v_{-1} = sin(2 pi theta)`, `w = 0`.
    pub fn cos_sin(epsilon: f64) -> Self {
        let (c, s, z) = (TrigPoly::cos(1, 1.0), TrigPoly::sin(1, 1.0), TrigPoly::zero(1));
        MapFamily::fair_pair(epsilon, [c.clone(), c, z.clone()], [s.clone(), s, z])
            .expect("cos/sin family is valid")
    }

    /// Same potentials with `epsilon` scaled so that `max |v| = 1` on the normalization grid.
    pub fn renormalized(epsilon: f64, symbols: Vec<SymbolMap>, r_window: [f64; 2]) -> Result<Self> {
        let probe = Self::build(epsilon, symbols.clone(), r_window)?;
        let m = probe.max_abs_v();
        if m <= 1.0 || m == 0.0 {
            return Ok(probe);
        }
        let symbols = symbols
            .into_iter()
            .map(|s| SymbolMap {
                u: s.u.scale(1.0 / m),
                v: s.v.scale(1.0 / m),
                w: s.w.scale(1.0 / (m * m)),
                ..s
            })
            .collect();
        MapFamily::new(epsilon * m, symbols, r_window)
    }

    pub fn with_epsilon(&self, epsilon: f64) -> Result<Self> {
        MapFamily::new(epsilon, self.symbols.clone(), self.r_window)
    }

    pub fn with_r_window(&self, r_window: [f64; 2]) -> Result<Self> {
        MapFamily::new(self.epsilon, self.symbols.clone(), r_window)
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn symbols(&self) -> &[SymbolMap] {
        &self.symbols
    }

    pub fn r_window(&self) -> [f64; 2] {
        self.r_window
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn area_preserving(&self) -> bool {
        self.area_preserving
    }

    pub fn kernel(&self) -> &Kernel {
        &self.kernel
    }

    /// Sample points of the action window used by grid checks.
    pub fn r_samples(&self, n: usize) -> Vec<f64> {
        let [a, b] = self.r_window;
        if n <= 1 {
            return vec![0.5 * (a + b)];
        }
        (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect()
    }

    fn r_samples_for(&self, tp: &TrigPoly) -> Vec<f64> {
        if tp.is_r_independent() {
            vec![self.r_window[0]]
        } else {
            self.r_samples(NORMALIZATION_R_SAMPLES)
        }
    }

    pub fn max_abs_v(&self) -> f64 {
        self.symbols
            .iter()
            .map(|s| s.v.max_abs_on_grid(&self.r_samples_for(&s.v), NORMALIZATION_GRID))
            .fold(0.0, f64::max)
    }

    fn expectation(&self, field: impl Fn(&SymbolMap) -> &TrigPoly) -> TrigPoly {
        self.symbols
            .iter()
            .fold(TrigPoly::zero(self.degree), |acc, s| acc.add(&field(s).scale(s.prob)))
    }

    pub fn mean_u(&self) -> TrigPoly {
        self.expectation(|s| &s.u)
    }

    pub fn mean_v(&self) -> TrigPoly {
        self.expectation(|s| &s.v)
    }

    pub fn mean_w(&self) -> TrigPoly {
        self.expectation(|s| &s.w)
    }

    /// `v_i - E v` for each symbol.
    pub fn v_fluctuations(&self) -> Vec<TrigPoly> {
        let ev = self.mean_v();
        self.symbols.iter().map(|s| s.v.sub(&ev)).collect()
    }

    /// `u_i - E u` for each symbol.
    pub fn u_fluctuations(&self) -> Vec<TrigPoly> {
        let eu = self.mean_u();
        self.symbols.iter().map(|s| s.u.sub(&eu)).collect()
    }

    /// `E_omega (v_omega - E v)^2` at a point; equals `v^2` for a fair pair with `v = (v_1 - v_{-1})/2`.
    pub fn noise_density(&self, theta: f64, r: f64) -> f64 {
        let ev = self.mean_v().eval(theta, r);
        self.symbols
            .iter()
            .map(|s| {
                let x = s.v.eval(theta, r) - ev;
                s.prob * x * x
            })
            .sum()
    }

    /// `sigma^2(r) = int E_omega (v_omega - E v)^2 dtheta` as a polynomial in `r`.
    pub fn variance_poly(&self) -> Vec<f64> {
        let flucts = self.v_fluctuations();
        let mut acc: Vec<f64> = Vec::new();
        for (s, f) in self.symbols.iter().zip(&flucts) {
            let p = f.oscillation_power();
            if acc.len() < p.len() {
                acc.resize(p.len(), 0.0);
            }
            for (a, x) in acc.iter_mut().zip(p) {
                *a += s.prob * x;
            }
        }
        acc
    }

    pub fn variance(&self, r: f64) -> f64 {
        horner(&self.variance_poly(), r)
    }

    /// One application of the map for the symbol with index `sym`.
    pub fn step(&self, theta: f64, r: f64, sym: usize) -> (f64, f64) {
        let mut st = OrbitState::new(theta, r);
        self.kernel.advance(&mut st, sym);
        (st.theta, st.r)
    }
}

/// Precompiled real coefficients for the inner loop.
#[derive(Clone, Debug)]
pub struct Kernel {
    epsilon: f64,
    eps2: f64,
    degree: usize,
    r_independent: bool,
    /// Per symbol: `[u0, v0, w0]` then per harmonic `[au, bu, av, bv, aw, bw]`, each a polynomial in r.
    polys: Vec<Vec<Vec<f64>>>,
    /// The same layout evaluated once when the family is `r`-independent.
    consts: Vec<Vec<f64>>,
    /// `consts` flattened with stride `3 + 6 degree`.
    flat: Vec<f64>,
    stride: usize,
    fair_binary: bool,
    cumulative: Vec<f64>,
    labels: Vec<i32>,
}

impl Kernel {
    fn compile(epsilon: f64, symbols: &[SymbolMap], degree: usize) -> Kernel {
        let polys: Vec<Vec<Vec<f64>>> = symbols
            .iter()
            .map(|s| {
                let (u, v, w) = (s.u.real_form(), s.v.real_form(), s.w.real_form());
                let mut terms = vec![u.a0.clone(), v.a0.clone(), w.a0.clone()];
                for k in 0..degree {
                    for f in [&u, &v, &w] {
                        terms.push(f.a[k].clone());
                        terms.push(f.b[k].clone());
                    }
                }
                terms
            })
            .collect();
        let r_independent = symbols
            .iter()
            .all(|s| s.u.is_r_independent() && s.v.is_r_independent() && s.w.is_r_independent());
        let consts: Vec<Vec<f64>> = polys
            .iter()
            .map(|terms| terms.iter().map(|p| horner(p, 0.0)).collect())
            .collect();
        let flat = consts.concat();
        let mut cumulative = Vec::with_capacity(symbols.len());
        let mut acc = 0.0;
        for s in symbols {
            acc += s.prob;
            cumulative.push(acc);
        }
        let fair_binary = symbols.len() == 2 && symbols[0].prob == 0.5 && symbols[1].prob == 0.5;
        Kernel {
            epsilon,
            eps2: epsilon * epsilon,
            degree,
            r_independent,
            polys,
            consts,
            flat,
            stride: 3 + 6 * degree,
            fair_binary,
            cumulative,
            labels: symbols.iter().map(|s| s.label).collect(),
        }
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn n_symbols(&self) -> usize {
        self.labels.len()
    }

    pub fn label(&self, sym: usize) -> i32 {
        self.labels[sym]
    }

    pub fn is_fair_binary(&self) -> bool {
        self.fair_binary
    }

    /// Field values `(u, v, w)` for a symbol at a point.
    #[inline(always)]
    pub fn fields(&self, theta: f64, r: f64, sym: usize) -> (f64, f64, f64) {
        if self.r_independent {
            let c = &self.consts[sym];
            self.accumulate(theta, |i| c[i])
        } else {
            let p = &self.polys[sym];
            self.accumulate(theta, |i| horner(&p[i], r))
        }
    }

    #[inline(always)]
    fn accumulate(&self, theta: f64, coef: impl Fn(usize) -> f64) -> (f64, f64, f64) {
        let (mut u, mut v, mut w) = (coef(0), coef(1), coef(2));
        if self.degree == 0 {
            return (u, v, w);
        }
        let (s1, c1) = sincos_turns(theta);
        let (mut c, mut s) = (c1, s1);
        for k in 0..self.degree {
            let o = 3 + 6 * k;
            u += coef(o) * c + coef(o + 1) * s;
            v += coef(o + 2) * c + coef(o + 3) * s;
            w += coef(o + 4) * c + coef(o + 5) * s;
            (c, s) = (c * c1 - s * s1, s * c1 + c * s1);
        }
        (u, v, w)
    }

    /// Advances the state by one map and returns the action increment.
    #[inline(always)]
    pub fn advance(&self, st: &mut OrbitState, sym: usize) -> f64 {
        let (u, v, w) = self.fields(st.theta, st.r, sym);
        let dr = self.epsilon * v + self.eps2 * w;
        let t = st.theta + st.r + self.epsilon * u;
        st.theta = t - fast_floor(t);
        st.r += dr;
        st.disp.add(dr);
        dr
    }
}

/// Number of orbits advanced together; independent orbits hide the latency of one step.
pub const LANES: usize = 8;

impl Kernel {
    /// Advances `LANES` independent states by one map each, writing the action increments to `dr`.
    #[inline(always)]
    pub fn advance_lanes(
        &self,
        theta: &mut [f64; LANES],
        r: &mut [f64; LANES],
        sym: &[usize; LANES],
        dr: &mut [f64; LANES],
    ) {
        let mut s1 = [0.0; LANES];
        let mut c1 = [0.0; LANES];
        if self.degree > 0 {
            for l in 0..LANES {
                (s1[l], c1[l]) = sincos_turns(theta[l]);
            }
        }
        if self.r_independent {
            let stride = self.stride;
            for l in 0..LANES {
                let c = &self.flat[sym[l] * stride..][..stride];
                let (mut u, mut v, mut w) = (c[0], c[1], c[2]);
                let (mut ck, mut sk) = (c1[l], s1[l]);
                for h in c[3..].chunks_exact(6) {
                    u += h[0] * ck + h[1] * sk;
                    v += h[2] * ck + h[3] * sk;
                    w += h[4] * ck + h[5] * sk;
                    (ck, sk) = (ck * c1[l] - sk * s1[l], sk * c1[l] + ck * s1[l]);
                }
                self.update(l, theta, r, dr, u, v, w);
            }
        } else {
            for l in 0..LANES {
                let p = &self.polys[sym[l]];
                let rl = r[l];
                let (u, v, w) = self.accumulate_with(s1[l], c1[l], |i| horner(&p[i], rl));
                self.update(l, theta, r, dr, u, v, w);
            }
        }
    }

    #[inline(always)]
    #[allow(clippy::too_many_arguments)]
    fn update(
        &self,
        l: usize,
        theta: &mut [f64; LANES],
        r: &mut [f64; LANES],
        dr: &mut [f64; LANES],
        u: f64,
        v: f64,
        w: f64,
    ) {
        dr[l] = self.epsilon * v + self.eps2 * w;
        let t = theta[l] + r[l] + self.epsilon * u;
        theta[l] = t - fast_floor(t);
        r[l] += dr[l];
    }

    #[inline(always)]
    fn accumulate_with(&self, s1: f64, c1: f64, coef: impl Fn(usize) -> f64) -> (f64, f64, f64) {
        let (mut u, mut v, mut w) = (coef(0), coef(1), coef(2));
        let (mut c, mut s) = (c1, s1);
        for k in 0..self.degree {
            let o = 3 + 6 * k;
            u += coef(o) * c + coef(o + 1) * s;
            v += coef(o + 2) * c + coef(o + 3) * s;
            w += coef(o + 4) * c + coef(o + 5) * s;
            (c, s) = (c * c1 - s * s1, s * c1 + c * s1);
        }
        (u, v, w)
    }
}

/// State of one orbit after `steps` maps, as seen by a [`drive`] observer.
#[derive(Clone, Copy, Debug)]
pub struct StepView {
    pub theta: f64,
    pub r: f64,
    /// Compensated `r_steps - r_0`.
    pub displacement: f64,
    /// Increment of the last step (0 before the first).
    pub dr: f64,
    /// Label of the last symbol (0 before the first).
    pub symbol: i32,
    pub steps: u64,
}

/// Runs the orbits `orbits` (stream `i` of `seed` for orbit `i`) in lane batches.
///
/// `start` gives the initial point and observer state; `observe` sees every state including the
/// initial one and returns whether to keep iterating; `finish` produces the orbit's result.
/// Results are returned in orbit order and do not depend on batching.
pub fn drive<S, O>(
    fam: &MapFamily,
    seed: u64,
    orbits: std::ops::Range<u64>,
    mut start: impl FnMut(u64) -> ((f64, f64), S),
    mut observe: impl FnMut(&mut S, &StepView) -> bool,
    mut finish: impl FnMut(u64, S, &StepView) -> O,
) -> Vec<O> {
    let k = fam.kernel();
    let base = orbits.start;
    let end = orbits.end;
    let mut out: Vec<Option<O>> = (base..end).map(|_| None).collect();
    let mut next = base;

    let mut theta = [0.0; LANES];
    let mut r = [0.0; LANES];
    let mut disp = [KahanSum::default(); LANES];
    let mut steps = [0u64; LANES];
    let mut orbit_id = [0u64; LANES];
    let mut active = [false; LANES];
    let mut states: Vec<Option<S>> = (0..LANES).map(|_| None).collect();
    let mut streams: Vec<SymbolStream> = (0..LANES).map(|_| SymbolStream::new(k, seed, u64::MAX)).collect();

    macro_rules! refill {
        ($l:expr) => {{
            let l = $l;
            active[l] = false;
            while next < end {
                let orbit = next;
                next += 1;
                let ((t0, r0), mut state) = start(orbit);
                let t0 = t0.rem_euclid(1.0);
                let view = StepView { theta: t0, r: r0, displacement: 0.0, dr: 0.0, symbol: 0, steps: 0 };
                if observe(&mut state, &view) {
                    theta[l] = t0;
                    r[l] = r0;
                    disp[l] = KahanSum::default();
                    steps[l] = 0;
                    orbit_id[l] = orbit;
                    states[l] = Some(state);
                    streams[l] = SymbolStream::new(k, seed, orbit);
                    active[l] = true;
                    break;
                }
                out[(orbit - base) as usize] = Some(finish(orbit, state, &view));
            }
        }};
    }

    for l in 0..LANES {
        refill!(l);
    }
    let mut sym = [0usize; LANES];
    let mut dr = [0.0; LANES];
    let mut n_active = active.iter().filter(|a| **a).count();
    while n_active > 0 {
        for l in 0..LANES {
            sym[l] = streams[l].next(k);
        }
        k.advance_lanes(&mut theta, &mut r, &sym, &mut dr);
        for l in 0..LANES {
            if !active[l] {
                continue;
            }
            disp[l].add(dr[l]);
            steps[l] += 1;
            let view = StepView {
                theta: theta[l],
                r: r[l],
                displacement: disp[l].value(),
                dr: dr[l],
                symbol: k.label(sym[l]),
                steps: steps[l],
            };
            let state = states[l].as_mut().expect("active lane has a state");
            if !observe(state, &view) {
                let state = states[l].take().expect("active lane has a state");
                let orbit = orbit_id[l];
                out[(orbit - base) as usize] = Some(finish(orbit, state, &view));
                refill!(l);
                if !active[l] {
                    n_active -= 1;
                }
            }
        }
    }
    out.into_iter().map(|o| o.expect("every orbit finishes")).collect()
}

/// Kahan-compensated running sum.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct KahanSum {
    sum: f64,
    comp: f64,
}

impl KahanSum {
    #[inline(always)]
    pub fn add(&mut self, x: f64) {
        let y = x - self.comp;
        let t = self.sum + y;
        self.comp = (t - self.sum) - y;
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum
    }
}

#[derive(Clone, Copy, Debug)]
pub struct OrbitState {
    pub theta: f64,
    pub r: f64,
    /// `r_n - r_0` accumulated from the increments.
    pub disp: KahanSum,
}

impl OrbitState {
    pub fn new(theta: f64, r: f64) -> Self {
        OrbitState {
            theta: theta.rem_euclid(1.0),
            r,
            disp: KahanSum::default(),
        }
    }
}

/// Counter-based i.i.d. symbol stream keyed by `(seed, stream)`.
pub struct SymbolStream {
    rng: ChaCha8Rng,
    fair: bool,
    bits: u64,
    left: u32,
}

impl SymbolStream {
    pub fn new(kernel: &Kernel, seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        SymbolStream {
            rng,
            fair: kernel.fair_binary,
            bits: 0,
            left: 0,
        }
    }

    #[inline(always)]
    pub fn next(&mut self, kernel: &Kernel) -> usize {
        if self.fair {
            if self.left == 0 {
                self.bits = self.rng.next_u64();
                self.left = 64;
            }
            let b = (self.bits & 1) as usize;
            self.bits >>= 1;
            self.left -= 1;
            b
        } else {
            let x = (self.rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
            kernel
                .cumulative
                .iter()
                .position(|&c| x < c)
                .unwrap_or(kernel.cumulative.len() - 1)
        }
    }
}

/// A recorded orbit; states are stored at indices `0, thin, 2 thin, ...`.
#[derive(Clone, Debug, Serialize)]
pub struct OrbitRecord {
    pub theta: Vec<f64>,
    pub r: Vec<f64>,
    /// Compensated `r_k - r_0` at the recorded indices.
    pub displacement: Vec<f64>,
    pub symbols: Vec<i32>,
    pub seed: u64,
    pub stream: u64,
    pub thin: usize,
}

/// Iterates `n` steps from `x0` with symbols drawn from `(seed, stream 0)`.
pub fn iterate(fam: &MapFamily, x0: (f64, f64), n: usize, seed: u64, thin: usize) -> OrbitRecord {
    iterate_stream(fam, x0, n, seed, 0, thin)
}

pub fn iterate_stream(
    fam: &MapFamily,
    x0: (f64, f64),
    n: usize,
    seed: u64,
    stream: u64,
    thin: usize,
) -> OrbitRecord {
    let k = fam.kernel();
    let mut src = SymbolStream::new(k, seed, stream);
    let syms: Vec<usize> = (0..n).map(|_| src.next(k)).collect();
    let mut rec = replay(fam, x0, &syms, thin);
    rec.seed = seed;
    rec.stream = stream;
    rec
}

/// Iterates with an explicit symbol-index sequence.
pub fn replay(fam: &MapFamily, x0: (f64, f64), symbols: &[usize], thin: usize) -> OrbitRecord {
    let thin = thin.max(1);
    let k = fam.kernel();
    let mut st = OrbitState::new(x0.0, x0.1);
    let cap = symbols.len() / thin + 1;
    let mut rec = OrbitRecord {
        theta: Vec::with_capacity(cap),
        r: Vec::with_capacity(cap),
        displacement: Vec::with_capacity(cap),
        symbols: Vec::with_capacity(symbols.len()),
        seed: 0,
        stream: 0,
        thin,
    };
    let push = |rec: &mut OrbitRecord, st: &OrbitState| {
        rec.theta.push(st.theta);
        rec.r.push(st.r);
        rec.displacement.push(st.disp.value());
    };
    push(&mut rec, &st);
    for (i, &s) in symbols.iter().enumerate() {
        k.advance(&mut st, s);
        rec.symbols.push(k.label(s));
        if (i + 1) % thin == 0 {
            push(&mut rec, &st);
        }
    }
    rec
}
