//! Dynamics near a low-order resonance: q-fold composite potentials, the pendulum
//! Hamiltonian, its Reeb graph and the RR / TZ drift and variance fields.

use std::collections::{BTreeSet, VecDeque};

use serde::Serialize;

use crate::dynamics::MapFamily;
use crate::error::{Error, Result};
use crate::hypotheses::{zeros, TAU_H};
use crate::normal_form::{e3, gcd, resonant_part};
use crate::trig::{Series, TrigPoly};

/// Per-symbol fluctuation fields `(prob, u_i - Eu, v_i - Ev)`.
#[derive(Clone, Debug)]
struct Noise {
    prob: f64,
    u: TrigPoly,
    v: TrigPoly,
}

/// Composite potentials of `q` consecutive steps near `p/q`.
#[derive(Clone, Debug)]
pub struct ResonantFrame {
    pub p: i64,
    pub q: u64,
    pub epsilon: f64,
    pub k1: f64,
    pub gamma: f64,
    /// `E v_{p,q}` as a polynomial-coefficient potential.
    ev_pq_poly: TrigPoly,
    /// `E v_{p,q}(., p/q)`.
    ev_pq: Series,
    /// `E u^{(q)}(.)`.
    eu_q: Series,
    noise: Vec<Noise>,
}

/// `q`-fold composite frame at a real rational `p/q` with `q <= d`.
pub fn composite_map(fam: &MapFamily, p: i64, q: u64, gamma: f64) -> Result<ResonantFrame> {
    let d = fam.degree() as u64;
    if q == 0 || q > d {
        return Err(Error::Regime(format!("{p}/{q} is not a real rational for degree {d}")));
    }
    if gcd(p.unsigned_abs(), q) != 1 {
        return Err(Error::Config(format!("{p}/{q} is not reduced")));
    }
    let r0 = p as f64 / q as f64;
    let ev = fam.mean_v();
    let ev_pq_poly = resonant_part(&ev, q);
    let ev_pq = ev_pq_poly.at(r0);
    let base = fam
        .mean_u()
        .at(r0)
        .sub(&ev.at(r0))
        .add(&e3(fam, p, q));
    let mut eu_q = Series::zero(ev_pq.degree());
    for i in 0..q {
        let shift = (i as f64 * r0).rem_euclid(1.0);
        let term = base.add(&ev_pq.scale((q - i) as f64));
        eu_q = eu_q.add(&term.shift(shift));
    }
    let (eu, evm) = (fam.mean_u(), ev);
    let noise = fam
        .symbols()
        .iter()
        .map(|s| Noise { prob: s.prob, u: s.u.sub(&eu), v: s.v.sub(&evm) })
        .collect();
    Ok(ResonantFrame {
        p,
        q,
        epsilon: fam.epsilon(),
        k1: 1.0,
        gamma,
        ev_pq_poly,
        ev_pq,
        eu_q,
        noise,
    })
}

impl ResonantFrame {
    /// A frame carrying only an averaged potential and no noise, for level-set geometry.
    pub fn from_potential(ev_pq: Series, p: i64, q: u64) -> ResonantFrame {
        let d = ev_pq.degree();
        let ev_pq_poly = TrigPoly::from_harmonics(
            d,
            &(-(d as i64)..=d as i64)
                .map(|k| (k, crate::trig::Poly::constant(ev_pq.get(k))))
                .collect::<Vec<_>>(),
        )
        .expect("series of a real potential is Hermitian");
        ResonantFrame {
            p,
            q,
            epsilon: 0.0,
            k1: 1.0,
            gamma: 0.0,
            ev_pq_poly,
            eu_q: Series::zero(d),
            ev_pq,
            noise: Vec::new(),
        }
    }

    pub fn with_k1(mut self, k1: f64) -> Self {
        self.k1 = k1;
        self
    }

    pub fn rational(&self) -> f64 {
        self.p as f64 / self.q as f64
    }

    /// `E v_{p,q}(., p/q)`.
    pub fn averaged_potential(&self) -> &Series {
        &self.ev_pq
    }

    /// `E v^{(q)}(theta, 0, 0) = q E v_{p,q}(theta, p/q)`.
    pub fn ev_q(&self, theta: f64) -> f64 {
        self.q as f64 * self.ev_pq.eval(theta)
    }

    /// `E v^{(q)}(theta, rhat)` with the action offset kept in the translates and in the coefficients.
    pub fn ev_q_at(&self, theta: f64, rhat: f64) -> f64 {
        let r = self.rational() + rhat;
        let s = self.ev_pq_poly.at(r);
        (0..self.q).map(|i| s.eval(theta + (i as f64 * r).rem_euclid(1.0))).sum()
    }

    pub fn eu_q(&self, theta: f64) -> f64 {
        self.eu_q.eval(theta)
    }

    /// `V(theta) = int_0^theta E v_{p,q}(s, p/q) ds`.
    pub fn potential(&self, theta: f64) -> f64 {
        self.ev_pq.integral_from_zero(theta)
    }

    /// `R^2 / 2 - (1/q) int_0^theta E v^{(q)}(s, 0, 0) ds`, the coupling slot frozen at zero.
    pub fn hamiltonian(&self, theta: f64, big_r: f64) -> f64 {
        0.5 * big_r * big_r - self.potential(theta)
    }

    /// Same Hamiltonian with the slot at `R sqrt(eps)`, by Gauss-Legendre quadrature on one period pieces.
    pub fn hamiltonian_coupled(&self, theta: f64, big_r: f64) -> f64 {
        let rhat = big_r * self.epsilon.sqrt();
        let n = (theta.abs() * 64.0).ceil().max(1.0) as usize;
        let h = theta / n as f64;
        let (x, w) = ([-0.774_596_669_241_483_4, 0.0, 0.774_596_669_241_483_4], [5.0 / 9.0, 8.0 / 9.0, 5.0 / 9.0]);
        let mut acc = 0.0;
        for j in 0..n {
            let c = (j as f64 + 0.5) * h;
            for (xi, wi) in x.iter().zip(w) {
                acc += wi * 0.5 * h * self.ev_q_at(c + 0.5 * h * xi, rhat);
            }
        }
        0.5 * big_r * big_r - acc / self.q as f64
    }

    /// `E_omega (v_omega - Ev)^2` at `(theta, r)`; `v^2` for a fair pair.
    pub fn noise_density(&self, theta: f64, r: f64) -> f64 {
        self.noise.iter().map(|n| n.prob * n.v.eval(theta, r).powi(2)).sum()
    }

    /// `sum_i v^2(theta + i p/q, p/q)`.
    pub fn translate_power(&self, theta: f64) -> f64 {
        let r0 = self.rational();
        (0..self.q)
            .map(|i| self.noise_density(theta + (i as f64 * r0).rem_euclid(1.0), r0))
            .sum()
    }

    /// `v^{(q)}(theta, rhat, omega)` for a block of symbol indices.
    pub fn v_q(&self, theta: f64, rhat: f64, block: &[usize]) -> f64 {
        let r = self.rational() + rhat;
        block
            .iter()
            .enumerate()
            .map(|(i, &s)| self.noise[s].v.eval(theta + (i as f64 * r).rem_euclid(1.0), r))
            .sum()
    }

    /// `u^{(q)}(theta, omega) = sum_i (q - i) omega_i (u + v)(theta + i p/q, p/q)`.
    pub fn u_q(&self, theta: f64, block: &[usize]) -> f64 {
        let r0 = self.rational();
        block
            .iter()
            .enumerate()
            .map(|(i, &s)| {
                let t = theta + (i as f64 * r0).rem_euclid(1.0);
                (self.q - i as u64) as f64 * (self.noise[s].u.eval(t, r0) + self.noise[s].v.eval(t, r0))
            })
            .sum()
    }

    /// `int_0^theta d_r E v^{(q)}(s, 0, 0) ds`.
    fn int_dr_ev_q(&self, theta: f64) -> f64 {
        let r0 = self.rational();
        let dr = self.ev_pq_poly.d_r().at(r0);
        let ev = &self.ev_pq;
        (0..self.q)
            .map(|i| {
                let a = (i as f64 * r0).rem_euclid(1.0);
                // d/dr of E v_{p,q}(s + i(p/q + r), p/q + r) at r = 0.
                let along = i as f64 * (ev.eval(theta + a) - ev.eval(a));
                along + dr.shift(a).integral_from_zero(theta)
            })
            .sum()
    }

    /// Drift field `F(theta, R)` of the H-process.
    pub fn f_field(&self, theta: f64, big_r: f64) -> f64 {
        let q = self.q as f64;
        let evq = self.ev_q(theta);
        let int_evq = q * self.potential(theta);
        let d_evq = q * self.ev_pq.d_theta(1).eval(theta);
        evq * self.eu_q(theta) / q - evq * int_evq / q
            + 0.5 * q * big_r * big_r * d_evq
            + 0.5 * evq * evq
            + 0.5 * self.translate_power(theta)
    }

    /// Zero-mean part `G(theta, R, omega)` of the H increment with the `v_2` term dropped.
    pub fn g_field(&self, theta: f64, block: &[usize]) -> f64 {
        let q = self.q as f64;
        let r0 = self.rational();
        let evq = self.ev_q(theta);
        let vq = self.v_q(theta, 0.0, block);
        let vals: Vec<f64> = block
            .iter()
            .enumerate()
            .map(|(i, &s)| self.noise[s].v.eval(theta + (i as f64 * r0).rem_euclid(1.0), r0))
            .collect();
        let total: f64 = vals.iter().sum();
        let squares: f64 = vals.iter().map(|x| x * x).sum();
        let cross = 0.5 * (total * total - squares);
        evq * self.u_q(theta, block) / q - vq * self.int_dr_ev_q(theta) / q + cross + evq * vq
    }

    /// `G_0 = 2 R^2 sum_{l<j} omega_l omega_j v v`.
    pub fn g0_field(&self, theta: f64, big_r: f64, block: &[usize]) -> f64 {
        let r0 = self.rational();
        let vals: Vec<f64> = block
            .iter()
            .enumerate()
            .map(|(i, &s)| self.noise[s].v.eval(theta + (i as f64 * r0).rem_euclid(1.0), r0))
            .collect();
        let total: f64 = vals.iter().sum();
        let squares: f64 = vals.iter().map(|x| x * x).sum();
        big_r * big_r * (total * total - squares)
    }

    /// Exact expectation of a block functional over all `n_symbols^q` blocks.
    pub fn block_expectation(&self, f: impl Fn(&[usize]) -> f64) -> Result<f64> {
        let m = self.noise.len();
        let total = (m as u64).checked_pow(self.q as u32).filter(|&t| t <= 1 << 24);
        let Some(total) = total else {
            return Err(Error::Config("too many symbol blocks to enumerate".into()));
        };
        let mut block = vec![0usize; self.q as usize];
        let mut acc = 0.0;
        for idx in 0..total {
            let mut x = idx;
            let mut prob = 1.0;
            for b in block.iter_mut() {
                *b = (x % m as u64) as usize;
                x /= m as u64;
                prob *= self.noise[*b].prob;
            }
            acc += prob * f(&block);
        }
        Ok(acc)
    }

    pub fn n_symbols(&self) -> usize {
        self.noise.len()
    }
}

/// `(b_RR, sigma^2_RR) = (F, R^2 sum_i v^2(theta + i p/q, 0))`; errors for `|R| > K1`.
pub fn rr_drift_variance(frame: &ResonantFrame, theta: f64, big_r: f64) -> Result<(f64, f64)> {
    if big_r.abs() > frame.k1 {
        return Err(Error::Regime(format!(
            "|R| = {} exceeds K1 = {}; use the transition-zone fields",
            big_r.abs(),
            frame.k1
        )));
    }
    Ok((frame.f_field(theta, big_r), big_r * big_r * frame.translate_power(theta)))
}

/// `sigma^2_TZ(theta, r) = sum_i v^2(theta + i r, r)` for `K1 sqrt(eps) <= |r - p/q| <= gamma`.
pub fn tz_variance(frame: &ResonantFrame, theta: f64, r: f64) -> Result<f64> {
    let rhat = (r - frame.rational()).abs();
    let lo = frame.k1 * frame.epsilon.sqrt();
    if rhat < lo || rhat > frame.gamma {
        return Err(Error::Regime(format!(
            "|r - {}/{}| = {rhat} outside the transition annulus [{lo}, {}]",
            frame.p, frame.q, frame.gamma
        )));
    }
    Ok((0..frame.q)
        .map(|i| frame.noise_density(theta + (i as f64 * r).rem_euclid(1.0), r))
        .sum())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CriticalKind {
    /// Local minimum of H (maximum of the potential): an elliptic point.
    Center,
    Saddle,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct CriticalPoint {
    pub theta: f64,
    pub kind: CriticalKind,
    /// `H(theta_c, 0) = -V(theta_c)`.
    pub h: f64,
}

/// Critical points `(theta_c, 0)` of H, typed by its Hessian.
pub fn critical_points(frame: &ResonantFrame) -> Result<Vec<CriticalPoint>> {
    let s = frame.averaged_potential();
    let scale = (1..=s.degree() as i64).map(|k| s.get(k).norm()).fold(0.0, f64::max);
    if scale <= TAU_H {
        return Err(Error::Regime(format!(
            "averaged potential at {}/{} vanishes identically; every point is critical",
            frame.p, frame.q
        )));
    }
    let mut out = Vec::new();
    for z in zeros(s, 4096) {
        if z.slope.abs() <= TAU_H {
            return Err(Error::Regime(format!(
                "degenerate critical point at theta = {} (slope {})",
                z.theta, z.slope
            )));
        }
        // H_thetatheta = -V'' = -slope; positive means a minimum of H.
        let kind = if z.slope < 0.0 { CriticalKind::Center } else { CriticalKind::Saddle };
        out.push(CriticalPoint { theta: z.theta, kind, h: frame.hamiltonian(z.theta, 0.0) });
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ReebVertex {
    pub h: f64,
    #[serde(rename = "type")]
    pub kind: CriticalKind,
    /// Critical points sharing this level-set component.
    pub thetas: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ReebEdge {
    /// Lower vertex, absent when the family reaches the window edge.
    pub v_from: Option<usize>,
    /// Upper vertex, absent when the family reaches the window edge.
    pub v_to: Option<usize>,
    pub h_min: f64,
    pub h_max: f64,
    pub seed_point: [f64; 2],
    pub cells: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ReebGraph {
    pub vertices: Vec<ReebVertex>,
    pub edges: Vec<ReebEdge>,
    pub k3: f64,
    pub grid: usize,
}

impl ReebGraph {
    pub fn counts(&self) -> (usize, usize) {
        (self.vertices.len(), self.edges.len())
    }

    /// The graph of a window of the cylinder is a tree with two window ends.
    pub fn is_tree(&self) -> bool {
        let ends = self.edges.iter().filter(|e| e.v_to.is_none()).count()
            + self.edges.iter().filter(|e| e.v_from.is_none()).count();
        self.vertices.len() + ends == self.edges.len() + 1
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("graph serializes")
    }

    pub fn to_dot(&self) -> String {
        let mut s = String::from("graph reeb {\n");
        for (i, v) in self.vertices.iter().enumerate() {
            let shape = match v.kind {
                CriticalKind::Center => "circle",
                CriticalKind::Saddle => "diamond",
            };
            s.push_str(&format!("  v{i} [shape={shape}, label=\"h={:.4}\"];\n", v.h));
        }
        for (i, e) in self.edges.iter().enumerate() {
            let name = |v: Option<usize>, end: &str| match v {
                Some(v) => format!("v{v}"),
                None => format!("w{i}{end}"),
            };
            let (a, b) = (name(e.v_from, "a"), name(e.v_to, "b"));
            for end in [&a, &b] {
                if end.starts_with('w') {
                    s.push_str(&format!("  {end} [shape=point];\n"));
                }
            }
            s.push_str(&format!("  {a} -- {b} [label=\"[{:.3}, {:.3}]\"];\n", e.h_min, e.h_max));
        }
        s.push_str("}\n");
        s
    }
}

/// Default truncation `K3 = 1 + max |V|`.
pub fn default_k3(frame: &ResonantFrame) -> f64 {
    1.0 + (0..4096).map(|i| frame.potential(i as f64 / 4096.0).abs()).fold(0.0, f64::max)
}

/// Smallest connected pieces kept as edges; smaller ones are guard-band debris.
const MIN_EDGE_CELLS: usize = 4;

/// Reeb graph of `H` on `|H| <= K3` by component labelling of a `grid x (grid + 1)` cell mesh.
pub fn reeb_graph(frame: &ResonantFrame, k3: Option<f64>, grid: usize) -> Result<ReebGraph> {
    if grid < 8 {
        return Err(Error::Resolution(format!("grid {grid} is too small")));
    }
    let k3 = k3.unwrap_or_else(|| default_k3(frame));
    let s = frame.averaged_potential();
    let degenerate = (1..=s.degree() as i64).all(|k| s.get(k).norm() <= TAU_H);
    let crit = if degenerate { Vec::new() } else { critical_points(frame)? };

    let (nt, nr) = (grid, grid + 1);
    let v_theta: Vec<f64> = (0..nt).map(|j| frame.potential((j as f64 + 0.5) / nt as f64)).collect();
    let v_max = v_theta.iter().cloned().fold(f64::NEG_INFINITY, f64::max).max(0.0);
    let r_max = (2.0 * (k3 + v_max)).sqrt() * 1.02;
    let dr = 2.0 * r_max / nr as f64;
    let r_of = |i: usize| -r_max + (i as f64 + 0.5) * dr;
    let dv_max = (0..nt)
        .map(|j| s.eval((j as f64 + 0.5) / nt as f64).abs())
        .fold(0.0, f64::max);
    let (h_lo, h_hi) = crit
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), c| (a.min(c.h), b.max(c.h)));
    // Largest one-cell change of H on the critical level sets.
    let r_crit = if crit.is_empty() { 0.0 } else { (2.0 * (h_hi - h_lo)).sqrt() } + dr;
    let guard = r_crit * dr + dv_max / nt as f64;

    let idx = |i: usize, j: usize| i * nt + j;
    let h: Vec<f64> = (0..nr)
        .flat_map(|i| (0..nt).map(move |j| (i, j)))
        .map(|(i, j)| 0.5 * r_of(i) * r_of(i) - v_theta[j])
        .collect();
    let inside = |c: usize| h[c] <= k3;

    let mut levels: Vec<f64> = crit.iter().map(|c| c.h).collect();
    levels.sort_by(f64::total_cmp);
    for w in levels.windows(2) {
        let gap = w[1] - w[0];
        if gap > 1e-12 && gap < 2.0 * guard {
            return Err(Error::Resolution(format!(
                "critical levels {} and {} are closer than two grid cells ({})",
                w[0],
                w[1],
                2.0 * guard
            )));
        }
    }

    let neighbours = |c: usize| {
        let (i, j) = (c / nt, c % nt);
        let mut out = [usize::MAX; 4];
        out[0] = idx(i, (j + 1) % nt);
        out[1] = idx(i, (j + nt - 1) % nt);
        if i + 1 < nr {
            out[2] = idx(i + 1, j);
        }
        if i > 0 {
            out[3] = idx(i - 1, j);
        }
        out
    };

    // Owner of each guard-band cell: index into `crit`, or the degenerate zero row.
    const FREE: usize = usize::MAX;
    const DEGENERATE: usize = usize::MAX - 1;
    let mut owner = vec![FREE; nr * nt];
    let mut parent: Vec<usize> = (0..crit.len()).collect();
    fn find(p: &mut [usize], x: usize) -> usize {
        let mut x = x;
        while p[x] != x {
            p[x] = p[p[x]];
            x = p[x];
        }
        x
    }
    if degenerate {
        for (c, o) in owner.iter_mut().enumerate() {
            if h[c] <= guard {
                *o = DEGENERATE;
            }
        }
    }
    let i0 = nr / 2;
    for (ci, cp) in crit.iter().enumerate() {
        let j0 = ((cp.theta * nt as f64 - 0.5).round() as i64).rem_euclid(nt as i64) as usize;
        let start = idx(i0, j0);
        let mut queue = VecDeque::from([start]);
        while let Some(c) = queue.pop_front() {
            match owner[c] {
                FREE => {}
                o if o == ci => continue,
                o => {
                    let (a, b) = (find(&mut parent, o), find(&mut parent, ci));
                    parent[a] = b;
                    continue;
                }
            }
            if (h[c] - cp.h).abs() > guard && c != start {
                continue;
            }
            owner[c] = ci;
            for n in neighbours(c) {
                if n != usize::MAX && inside(n) {
                    queue.push_back(n);
                }
            }
        }
    }

    // Vertices: one per merged group of critical points.
    let mut group_of = vec![usize::MAX; crit.len()];
    let mut vertices: Vec<ReebVertex> = Vec::new();
    let mut roots: Vec<usize> = Vec::new();
    for ci in 0..crit.len() {
        let root = find(&mut parent, ci);
        let g = match roots.iter().position(|&r| r == root) {
            Some(g) => g,
            None => {
                roots.push(root);
                vertices.push(ReebVertex { h: crit[ci].h, kind: crit[ci].kind, thetas: Vec::new() });
                vertices.len() - 1
            }
        };
        group_of[ci] = g;
        let v = &mut vertices[g];
        v.thetas.push(crit[ci].theta);
        v.kind = v.kind.max(crit[ci].kind);
    }
    for v in vertices.iter() {
        if v.thetas.len() > 1 {
            let hs: Vec<f64> = crit.iter().filter(|c| v.thetas.contains(&c.theta)).map(|c| c.h).collect();
            let spread = hs.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
                - hs.iter().cloned().fold(f64::INFINITY, f64::min);
            if spread > 1e-9 {
                return Err(Error::Resolution(format!(
                    "critical points at distinct levels share a guard band at grid {grid}"
                )));
            }
        }
    }

    // Edges: components of the window minus the guard bands.
    let mut label = vec![usize::MAX; nr * nt];
    let mut edges = Vec::new();
    for c0 in 0..nr * nt {
        if label[c0] != usize::MAX || owner[c0] != FREE || !inside(c0) {
            continue;
        }
        let id = edges.len();
        let mut queue = VecDeque::from([c0]);
        label[c0] = id;
        let mut touched = BTreeSet::new();
        let mut boundary = false;
        let (mut h_lo, mut h_hi, mut count) = (f64::INFINITY, f64::NEG_INFINITY, 0usize);
        let mut cells = Vec::new();
        while let Some(c) = queue.pop_front() {
            count += 1;
            cells.push(c);
            h_lo = h_lo.min(h[c]);
            h_hi = h_hi.max(h[c]);
            for n in neighbours(c) {
                if n == usize::MAX || !inside(n) {
                    boundary = true;
                    continue;
                }
                match owner[n] {
                    FREE => {
                        if label[n] == usize::MAX {
                            label[n] = id;
                            queue.push_back(n);
                        }
                    }
                    DEGENERATE => {}
                    o => {
                        touched.insert(group_of[o]);
                    }
                }
            }
        }
        let mid = 0.5 * (h_lo + h_hi);
        let seed = *cells
            .iter()
            .min_by(|&&a, &&b| (h[a] - mid).abs().total_cmp(&(h[b] - mid).abs()))
            .expect("non-empty component");
        let mut ends: Vec<usize> = touched.into_iter().collect();
        ends.sort_by(|&a, &b| vertices[a].h.total_cmp(&vertices[b].h));
        let (v_from, v_to) = match (ends.as_slice(), boundary) {
            ([], _) => (None, None),
            ([a], true) => (Some(*a), None),
            ([a], false) => (Some(*a), None),
            ([a, b, ..], _) => (Some(*a), Some(*b)),
        };
        edges.push(ReebEdge {
            v_from,
            v_to,
            h_min: v_from.map_or(h_lo, |v| vertices[v].h),
            h_max: v_to.map_or(h_hi.min(k3), |v| vertices[v].h),
            seed_point: [((seed % nt) as f64 + 0.5) / nt as f64, r_of(seed / nt)],
            cells: count,
        });
    }
    edges.retain(|e| e.cells >= MIN_EDGE_CELLS);
    Ok(ReebGraph { vertices, edges, k3, grid })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use num_complex::Complex64;

    fn cos_potential() -> ResonantFrame {
        ResonantFrame::from_potential(TrigPoly::cos(1, 1.0).at(0.0), 0, 1)
    }

    /// Two wells of different depth: maxima of V at distinct heights.
    pub(crate) fn double_well() -> ResonantFrame {
        let s = TrigPoly::cos(2, 1.0).add(&TrigPoly::sin(1, 0.6)).at(0.0);
        ResonantFrame::from_potential(s, 0, 1)
    }

    #[test]
    fn hamiltonian_examples() {
        let f = cos_potential();
        assert_abs_diff_eq!(f.hamiltonian(0.0, 0.7), 0.245, epsilon = 1e-15);
        let t = 0.3;
        let expect = 0.5 - (std::f64::consts::TAU * t).sin() / std::f64::consts::TAU;
        assert_abs_diff_eq!(f.hamiltonian(t, 1.0), expect, epsilon = 1e-14);
        let free = ResonantFrame::from_potential(Series::zero(1), 0, 1);
        assert_eq!(free.hamiltonian(0.4, 2.0), 2.0);
    }

    #[test]
    fn critical_points_of_cos() {
        let cps = critical_points(&cos_potential()).unwrap();
        assert_eq!(cps.len(), 2);
        assert!((cps[0].theta - 0.25).abs() < 1e-12 && cps[0].kind == CriticalKind::Center);
        assert!((cps[1].theta - 0.75).abs() < 1e-12 && cps[1].kind == CriticalKind::Saddle);
        assert!(critical_points(&ResonantFrame::from_potential(Series::zero(1), 0, 1)).is_err());
        let dw = critical_points(&double_well()).unwrap();
        assert_eq!(dw.iter().filter(|c| c.kind == CriticalKind::Saddle).count(), 2);
        assert_eq!(dw.iter().filter(|c| c.kind == CriticalKind::Center).count(), 2);
    }

    #[test]
    fn reeb_counts() {
        let g = reeb_graph(&cos_potential(), None, 256).unwrap();
        assert_eq!(g.counts(), (2, 3));
        assert!(g.is_tree());
        let g = reeb_graph(&double_well(), None, 512).unwrap();
        assert_eq!(g.counts(), (4, 5));
        assert!(g.is_tree());
        let free = reeb_graph(&ResonantFrame::from_potential(Series::zero(1), 0, 1), None, 128).unwrap();
        assert_eq!(free.counts(), (0, 2));
        assert!(matches!(reeb_graph(&double_well(), None, 8), Err(Error::Resolution(_))));
    }

    #[test]
    fn rr_fields_single_translate() {
        let c = TrigPoly::cos(1, 1.0);
        let z = TrigPoly::zero(1);
        let fam = MapFamily::fair_pair(0.01, [c.clone(), c.clone(), z.clone()], [c.scale(-1.0), c.scale(-1.0), z]).unwrap();
        let frame = composite_map(&fam, 0, 1, 0.05).unwrap();
        for t in [0.0, 0.1, 0.37] {
            let (b, s2) = rr_drift_variance(&frame, t, 0.0).unwrap();
            let cos = (std::f64::consts::TAU * t).cos();
            assert_abs_diff_eq!(b, 0.5 * cos * cos, epsilon = 1e-14);
            assert_eq!(s2, 0.0);
        }
        assert!(rr_drift_variance(&frame, 0.0, 1.5).is_err());
        let z = frame.block_expectation(|b| frame.v_q(0.3, 0.0, b)).unwrap();
        assert_abs_diff_eq!(z, 0.0, epsilon = 1e-15);
    }

    #[test]
    fn zero_mean_block_terms() {
        let fam = MapFamily::fair_pair(
            0.01,
            [TrigPoly::cos(2, 0.5).add(&TrigPoly::cos(1, 0.5)), TrigPoly::cos(2, 0.5).add(&TrigPoly::cos(1, 0.5)), TrigPoly::zero(2)],
            [TrigPoly::cos(2, 0.5).add(&TrigPoly::cos(1, -0.5)), TrigPoly::cos(2, 0.5).add(&TrigPoly::cos(1, -0.5)), TrigPoly::zero(2)],
        )
        .unwrap();
        let frame = composite_map(&fam, 1, 2, 0.02).unwrap();
        for t in [0.0, 0.125, 0.4] {
            for f in [
                frame.block_expectation(|b| frame.v_q(t, 0.0, b)).unwrap(),
                frame.block_expectation(|b| frame.g_field(t, b)).unwrap(),
                frame.block_expectation(|b| frame.g0_field(t, 0.7, b)).unwrap(),
            ] {
                assert_abs_diff_eq!(f, 0.0, epsilon = 1e-14);
            }
        }
        // Non-sticking at the critical point theta = 1/8.
        let (b, s2) = rr_drift_variance(&frame, 0.125, 0.0).unwrap();
        assert_abs_diff_eq!(b, 0.125, epsilon = 1e-14);
        assert_eq!(s2, 0.0);
        let s = frame.averaged_potential();
        assert_abs_diff_eq!(s.get(2).re, 0.25, epsilon = 1e-15);
        assert_eq!(s.get(1), Complex64::new(0.0, 0.0));
    }

    #[test]
    fn tz_variance_examples() {
        let fam = MapFamily::cos_sin(1e-4);
        let frame = composite_map(&fam, 0, 1, 0.05).unwrap();
        let v = |t: f64| 0.5 * ((std::f64::consts::TAU * t).cos() - (std::f64::consts::TAU * t).sin());
        assert_abs_diff_eq!(tz_variance(&frame, 0.2, 0.03).unwrap(), v(0.2).powi(2), epsilon = 1e-14);
        assert!(tz_variance(&frame, 0.2, 0.001).is_err());
        assert!(tz_variance(&frame, 0.2, 0.2).is_err());
        assert!(composite_map(&fam, 1, 2, 0.05).is_err());
    }

    #[test]
    fn coupled_hamiltonian_reduces_at_zero_action() {
        let fam = MapFamily::cos_sin(1e-4);
        let frame = composite_map(&fam, 0, 1, 0.05).unwrap();
        for t in [0.1, 0.6, 0.93] {
            assert_abs_diff_eq!(frame.hamiltonian_coupled(t, 0.0), frame.hamiltonian(t, 0.0), epsilon = 1e-12);
        }
    }
}
