//! JSON run configuration. Unknown keys are rejected at every level.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use serde::Deserialize;

use twistmc::dynamics::{MapFamily, SymbolMap};
use twistmc::normal_form::default_gamma;
use twistmc::strips::{ZoneParams, DEFAULT_SMOOTHNESS};
use twistmc::trig::{Poly, TrigPoly};

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub model: Model,
    #[serde(default)]
    pub zones: Zones,
    #[serde(default)]
    pub run: Run,
    #[serde(default)]
    pub output: Output,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Model {
    pub epsilon: f64,
    /// Angular degree; inferred from the potentials when absent.
    pub d: Option<usize>,
    pub symbols: Vec<Symbol>,
    /// When true, `u` is taken equal to `v` for every symbol and must not be given.
    #[serde(default)]
    pub area_preserving: bool,
    #[serde(default = "unit_window")]
    pub r_window: [f64; 2],
    /// Rescale epsilon so that `max |v| = 1` instead of rejecting larger potentials.
    #[serde(default)]
    pub renormalize: bool,
}

fn unit_window() -> [f64; 2] {
    [0.0, 1.0]
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Symbol {
    pub label: i32,
    pub prob: f64,
    pub v: Potential,
    pub u: Option<Potential>,
    pub w: Option<Potential>,
}

/// A trigonometric polynomial with polynomial-in-r coefficients, given either as complex
/// harmonics or as real cosine and sine amplitudes. Coefficient lists are lowest power first.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Potential {
    /// `k -> [c_0, c_1, ...]`, each entry a real number or `[re, im]`. Negative `k` may be
    /// omitted, in which case they are filled in as conjugates.
    pub harmonics: Option<BTreeMap<String, Vec<Coef>>>,
    pub mean: Option<Vec<f64>>,
    pub cos: Option<BTreeMap<String, Vec<f64>>>,
    pub sin: Option<BTreeMap<String, Vec<f64>>>,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(untagged)]
pub enum Coef {
    Real(f64),
    Complex([f64; 2]),
}

impl Coef {
    fn value(self) -> Complex64 {
        match self {
            Coef::Real(x) => Complex64::new(x, 0.0),
            Coef::Complex([re, im]) => Complex64::new(re, im),
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Zones {
    #[serde(default = "default_beta")]
    pub beta: f64,
    #[serde(default = "default_rho")]
    pub rho: f64,
    #[serde(default = "one", rename = "K1")]
    pub k1: f64,
    #[serde(default = "one", rename = "K2")]
    pub k2: f64,
    pub gamma: Option<f64>,
    #[serde(default = "default_l")]
    pub l: u32,
}

fn default_beta() -> f64 {
    0.2
}
fn default_rho() -> f64 {
    0.04
}
fn one() -> f64 {
    1.0
}
fn default_l() -> u32 {
    DEFAULT_SMOOTHNESS
}

impl Default for Zones {
    fn default() -> Self {
        Zones {
            beta: default_beta(),
            rho: default_rho(),
            k1: 1.0,
            k2: 1.0,
            gamma: None,
            l: DEFAULT_SMOOTHNESS,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Run {
    #[serde(default = "default_n")]
    pub n: u64,
    #[serde(default = "default_orbits", rename = "M")]
    pub orbits: u64,
    #[serde(default = "default_seed")]
    pub master_seed: u64,
    #[serde(default)]
    pub thin: u64,
    #[serde(default = "default_budget")]
    pub budget: f64,
    /// Initial point `[theta0, r0]`.
    #[serde(default = "default_x0")]
    pub x0: [f64; 2],
    /// Exit-time horizon; defaults to `10 epsilon^{-2}`.
    pub max_steps: Option<u64>,
}

fn default_n() -> u64 {
    10_000
}
fn default_orbits() -> u64 {
    10_000
}
fn default_seed() -> u64 {
    1
}
fn default_budget() -> f64 {
    1e12
}
fn default_x0() -> [f64; 2] {
    [0.0, 0.5 * (5f64.sqrt() - 1.0)]
}

impl Default for Run {
    fn default() -> Self {
        Run {
            n: default_n(),
            orbits: default_orbits(),
            master_seed: default_seed(),
            thin: 0,
            budget: default_budget(),
            x0: default_x0(),
            max_steps: None,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Output {
    #[serde(default = "default_dir")]
    pub directory: PathBuf,
    /// Also dump raw displacements as little-endian f64.
    #[serde(default)]
    pub raw: bool,
}

fn default_dir() -> PathBuf {
    PathBuf::from("out")
}

impl Default for Output {
    fn default() -> Self {
        Output { directory: default_dir(), raw: false }
    }
}

pub fn load(path: &Path) -> Result<Config, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    parse(&text).map_err(|e| format!("{}: {e}", path.display()))
}

/// Parses and validates; serde errors carry line and column.
pub fn parse(text: &str) -> Result<Config, String> {
    let cfg: Config = serde_json::from_str(text).map_err(|e| e.to_string())?;
    cfg.family()?;
    cfg.zone_params()?;
    Ok(cfg)
}

fn harmonic_index(key: &str) -> Result<i64, String> {
    key.trim()
        .parse::<i64>()
        .map_err(|_| format!("harmonic key {key:?} is not an integer"))
}

impl Potential {
    fn degree(&self) -> Result<usize, String> {
        let mut d = 0;
        for map in [self.cos.as_ref(), self.sin.as_ref()].into_iter().flatten() {
            for k in map.keys() {
                d = d.max(harmonic_index(k)?.unsigned_abs() as usize);
            }
        }
        if let Some(h) = &self.harmonics {
            for k in h.keys() {
                d = d.max(harmonic_index(k)?.unsigned_abs() as usize);
            }
        }
        Ok(d)
    }

    pub fn build(&self, degree: usize) -> Result<TrigPoly, String> {
        let trig = self.mean.is_some() || self.cos.is_some() || self.sin.is_some();
        match (&self.harmonics, trig) {
            (Some(_), true) => Err("give either harmonics or mean/cos/sin, not both".into()),
            (Some(h), false) => {
                let mut list = Vec::new();
                for (k, c) in h {
                    let k = harmonic_index(k)?;
                    list.push((k, Poly::new(c.iter().map(|x| x.value()).collect())));
                }
                let has_negative = list.iter().any(|(k, _)| *k < 0);
                if has_negative {
                    TrigPoly::from_harmonics(degree, &list).map_err(|e| e.to_string())
                } else {
                    let list: Vec<(u64, Poly)> = list.into_iter().map(|(k, p)| (k as u64, p)).collect();
                    TrigPoly::from_nonnegative(degree, &list).map_err(|e| e.to_string())
                }
            }
            (None, _) => {
                let parse = |m: &Option<BTreeMap<String, Vec<f64>>>| -> Result<Vec<(u64, Vec<f64>)>, String> {
                    m.iter()
                        .flatten()
                        .map(|(k, v)| {
                            let k = harmonic_index(k)?;
                            if k <= 0 {
                                return Err(format!("cos/sin harmonic {k} must be positive"));
                            }
                            Ok((k as u64, v.clone()))
                        })
                        .collect()
                };
                let mean = self.mean.clone().unwrap_or_default();
                TrigPoly::from_cos_sin(degree, &mean, &parse(&self.cos)?, &parse(&self.sin)?)
                    .map_err(|e| e.to_string())
            }
        }
    }
}

impl Config {
    pub fn degree(&self) -> Result<usize, String> {
        let mut d = 0;
        for s in &self.model.symbols {
            for p in [Some(&s.v), s.u.as_ref(), s.w.as_ref()].into_iter().flatten() {
                d = d.max(p.degree()?);
            }
        }
        match self.model.d {
            Some(given) if given < d => Err(format!("model.d = {given} but a potential has harmonic {d}")),
            Some(given) => Ok(given),
            None => Ok(d.max(1)),
        }
    }

    pub fn family(&self) -> Result<MapFamily, String> {
        let m = &self.model;
        let d = self.degree()?;
        let mut symbols = Vec::new();
        for (i, s) in m.symbols.iter().enumerate() {
            let ctx = |e: String| format!("model.symbols[{i}]: {e}");
            let v = s.v.build(d).map_err(ctx)?;
            let u = match (&s.u, m.area_preserving) {
                (Some(_), true) => return Err(ctx("u must be omitted when area_preserving is set".into())),
                (Some(u), false) => u.build(d).map_err(ctx)?,
                (None, true) => v.clone(),
                (None, false) => TrigPoly::zero(d),
            };
            let w = match &s.w {
                Some(w) => w.build(d).map_err(ctx)?,
                None => TrigPoly::zero(d),
            };
            symbols.push(SymbolMap { label: s.label, prob: s.prob, u, v, w });
        }
        let fam = if m.renormalize {
            MapFamily::renormalized(m.epsilon, symbols, m.r_window)
        } else {
            MapFamily::new(m.epsilon, symbols, m.r_window)
        };
        fam.map_err(|e| format!("model: {e}"))
    }

    pub fn gamma(&self) -> Result<f64, String> {
        Ok(self.zones.gamma.unwrap_or(default_gamma(self.degree()?)))
    }

    pub fn zone_params(&self) -> Result<ZoneParams, String> {
        let z = &self.zones;
        ZoneParams {
            epsilon: self.model.epsilon,
            beta: z.beta,
            rho: z.rho,
            d: self.degree()?,
            k1: z.k1,
            k2: z.k2,
            gamma: self.gamma()?,
            l: z.l,
        }
        .validated()
        .map_err(|e| format!("zones: {e}"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const COS_SIN: &str = r#"{
        "model": {
            "epsilon": 0.01,
            "area_preserving": true,
            "symbols": [
                {"label": 1, "prob": 0.5, "v": {"cos": {"1": [1.0]}}},
                {"label": -1, "prob": 0.5, "v": {"sin": {"1": [1.0]}}}
            ]
        }
    }"#;

    #[test]
    fn cos_sin_matches_builtin() {
        let cfg = parse(COS_SIN).unwrap();
        let fam = cfg.family().unwrap();
        let builtin = MapFamily::cos_sin(0.01);
        for (a, b) in fam.symbols().iter().zip(builtin.symbols()) {
            assert_eq!(a.v, b.v);
            assert_eq!(a.u, b.u);
        }
    }

    #[test]
    fn harmonics_get_conjugates() {
        let text = COS_SIN.replace(r#"{"cos": {"1": [1.0]}}"#, r#"{"harmonics": {"1": [0.5]}}"#);
        let fam = parse(&text).unwrap().family().unwrap();
        assert_eq!(fam.symbols()[0].v, TrigPoly::cos(1, 1.0));
    }

    #[test]
    fn unknown_keys_are_rejected_with_position() {
        let text = COS_SIN.replace("\"epsilon\"", "\"epsilonn\"");
        let err = parse(&text).unwrap_err();
        assert!(err.contains("unknown field") && err.contains("line"), "{err}");
    }

    #[test]
    fn bad_zone_parameters_fail_at_load() {
        let text = COS_SIN.replace("\"model\"", "\"zones\": {\"beta\": 0.2, \"rho\": 0.5}, \"model\"");
        assert!(parse(&text).unwrap_err().contains("rho"));
    }
}
