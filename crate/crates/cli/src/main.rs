//! `twistmc` command-line driver.
//!
//! Exit codes: 0 success, 1 a scientific gate failed, 2 usage or configuration error.

mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

use twistmc::ensemble::{self, EnsembleSpec};
use twistmc::hypotheses::check_all;
use twistmc::normal_form::{DiffusionPrediction, Power};
use twistmc::par::Execution;
use twistmc::resonance::{composite_map, default_k3, reeb_graph};
use twistmc::strips::{classify, rational_strip_measure, Zone};
use twistmc::Error;

use config::Config;
use output::Sink;

#[derive(Parser, Debug)]
#[command(name = "twistmc", version, about = "Random twist maps: hypotheses, normal forms and diffusion checks")]
struct Cli {
    /// JSON configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides run.master_seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Omit wall-clock metadata so outputs are byte-for-byte reproducible.
    #[arg(long, global = true)]
    deterministic: bool,
    /// Overrides output.directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Run orbits on the calling thread only.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Check hypotheses H0 to H5; writes h-report.json.
    Verify,
    /// Zone, drift and variance on an action grid; writes predict.csv.
    Predict {
        #[arg(long, default_value_t = 0.0)]
        r_min: f64,
        #[arg(long, default_value_t = 1.0)]
        r_max: f64,
        #[arg(long, default_value_t = 201)]
        grid: usize,
    },
    /// Zone of each point of an action grid; writes classify.csv.
    Classify {
        #[arg(long, default_value_t = 0.0)]
        r_min: f64,
        #[arg(long, default_value_t = 1.0)]
        r_max: f64,
        #[arg(long, default_value_t = 1001)]
        grid: usize,
    },
    /// Displacement statistics of run.M orbits of run.n steps.
    Simulate,
    /// Simulate and test the displacement against the predicted normal law.
    Clt {
        /// KS threshold; defaults to 1.63 / sqrt(M).
        #[arg(long)]
        ks_threshold: Option<f64>,
    },
    /// Exit times from the strip |r - r0| <= epsilon^beta.
    Stopping,
    /// Martingale functional residuals for test functions r^k.
    Martingale {
        /// Powers k of the test functions.
        #[arg(long, value_delimiter = ',', default_values_t = [1, 2])]
        powers: Vec<i32>,
        #[arg(long, default_value_t = ensemble::DEFAULT_LAMBDA)]
        lambda: f64,
    },
    /// Reeb graph of the averaged pendulum at a real rational p/q.
    Reeb {
        #[arg(long, default_value_t = 0, allow_hyphen_values = true)]
        p: i64,
        #[arg(long, default_value_t = 1)]
        q: u64,
        #[arg(long, default_value_t = 512)]
        grid: usize,
        #[arg(long)]
        k3: Option<f64>,
    },
    /// Resonance count and strip measure over the model's action window.
    Measure,
    /// Characteristic function of Rademacher sums.
    Charfn {
        #[arg(long, value_enum, default_value_t = Weights::Ones)]
        weights: Weights,
        #[arg(long, default_value_t = 10_000)]
        n: usize,
        #[arg(long, default_value_t = 3.0)]
        t_max: f64,
        #[arg(long, default_value_t = 61)]
        points: usize,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Weights {
    /// `v_k = 1`.
    Ones,
    /// `v_k = cos(2 pi k alpha)` with alpha the golden mean.
    GoldenCos,
}

/// Why a command did not succeed.
enum Failure {
    Gate(String),
    Usage(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Usage(e.to_string())
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Usage(e.to_string())
    }
}

type CmdResult = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Gate(msg)) => {
            eprintln!("gate failed: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: &Cli) -> CmdResult {
    if let Some(n) = cli.threads {
        twistmc::par::set_threads(n.max(1));
    }
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| Failure::Usage("--config PATH is required".into()))?;
    let cfg = config::load(path).map_err(Failure::Usage)?;
    let dir = cli.out.clone().unwrap_or_else(|| cfg.output.directory.clone());
    let sink = Sink::new(dir, cli.deterministic)?;
    let spec = EnsembleSpec::new(cfg.run.orbits, cli.seed.unwrap_or(cfg.run.master_seed))
        .with_budget(cfg.run.budget as u128)
        .with_execution(if cli.sequential { Execution::Sequential } else { Execution::Parallel });
    match &cli.cmd {
        Cmd::Verify => verify(&cfg, &sink),
        Cmd::Predict { r_min, r_max, grid } => predict(&cfg, &sink, *r_min, *r_max, *grid),
        Cmd::Classify { r_min, r_max, grid } => classify_grid(&cfg, &sink, *r_min, *r_max, *grid),
        Cmd::Simulate => simulate(&cfg, &sink, &spec).map(|_| ()),
        Cmd::Clt { ks_threshold } => clt(&cfg, &sink, &spec, *ks_threshold),
        Cmd::Stopping => stopping(&cfg, &sink, &spec),
        Cmd::Martingale { powers, lambda } => martingale(&cfg, &sink, &spec, powers, *lambda),
        Cmd::Reeb { p, q, grid, k3 } => reeb(&cfg, &sink, *p, *q, *grid, *k3),
        Cmd::Measure => measure(&cfg, &sink),
        Cmd::Charfn { weights, n, t_max, points } => charfn(&sink, &spec, *weights, *n, *t_max, *points),
    }
}

fn grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n <= 1 {
        return vec![lo];
    }
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

fn verify(cfg: &Config, sink: &Sink) -> CmdResult {
    let fam = cfg.family().map_err(Failure::Usage)?;
    let report = check_all(&fam);
    sink.json("h-report.json", &serde_json::to_value(&report).map_err(Error::from)?)?;
    for (name, c) in report.checks() {
        println!("{name}: {:?}", c.verdict);
    }
    if report.any_fails() {
        return Err(Failure::Gate("a hypothesis fails".into()));
    }
    Ok(())
}

const PREDICT_THETA_GRID: usize = 64;

fn predict(cfg: &Config, sink: &Sink, r_min: f64, r_max: f64, n: usize) -> CmdResult {
    let fam = cfg.family().map_err(Failure::Usage)?;
    let zp = cfg.zone_params().map_err(Failure::Usage)?;
    let pred = DiffusionPrediction::new(&fam, zp.gamma)?;
    let thetas = grid(0.0, 1.0, PREDICT_THETA_GRID + 1);
    let thetas = &thetas[..PREDICT_THETA_GRID];
    let avg = |f: &dyn Fn(f64) -> Result<f64, Error>| -> Result<f64, Error> {
        let mut acc = 0.0;
        for &t in thetas {
            acc += f(t)?;
        }
        Ok(acc / thetas.len() as f64)
    };
    let mut rows = Vec::with_capacity(n);
    for r in grid(r_min, r_max, n) {
        let c = classify(r, &zp);
        let (p, q) = c.rational.unwrap_or((0, 0));
        let (b, s2) = match c.zone {
            Zone::Ti => (pred.drift_unchecked(r), pred.variance(r)),
            Zone::Ir => {
                let ir = pred.clone().imaginary_rotation(p, q)?;
                (avg(&|t| ir.drift_field(t, r))?, avg(&|t| Ok(ir.variance_field(t, r)))?)
            }
            Zone::Rr => {
                let frame = composite_map(&fam, p, q, zp.gamma)?.with_k1(zp.k1);
                let big_r = (r - p as f64 / q as f64) / zp.epsilon.sqrt();
                let b = avg(&|t| Ok(twistmc::resonance::rr_drift_variance(&frame, t, big_r)?.0))?;
                let s2 = avg(&|t| Ok(twistmc::resonance::rr_drift_variance(&frame, t, big_r)?.1))?;
                (b, s2)
            }
            Zone::Tz1 | Zone::Tz2 => {
                // The annulus of the frame is widened to the zone so the block variance is defined.
                let mut frame = composite_map(&fam, p, q, zp.gamma)?.with_k1(zp.k1);
                frame.gamma = frame.gamma.max(zp.tz1_width());
                (0.0, avg(&|t| twistmc::resonance::tz_variance(&frame, t, r))?)
            }
        };
        rows.push(vec![
            format!("{r}"),
            c.zone.tag().to_string(),
            format!("{p}"),
            format!("{q}"),
            format!("{b:e}"),
            format!("{s2}"),
        ]);
    }
    sink.csv("predict.csv", &["r", "class", "p", "q", "b", "sigma2"], &rows)?;
    Ok(())
}

fn classify_grid(cfg: &Config, sink: &Sink, r_min: f64, r_max: f64, n: usize) -> CmdResult {
    let zp = cfg.zone_params().map_err(Failure::Usage)?;
    let rows: Vec<Vec<String>> = grid(r_min, r_max, n)
        .into_iter()
        .map(|r| {
            let c = classify(r, &zp);
            let (p, q) = c.rational.map_or((String::new(), String::new()), |(p, q)| (p.to_string(), q.to_string()));
            vec![format!("{r}"), c.zone.tag().to_string(), p, q, format!("{}", c.dist)]
        })
        .collect();
    sink.csv("classify.csv", &["r", "class", "p", "q", "dist"], &rows)?;
    Ok(())
}

fn simulate(cfg: &Config, sink: &Sink, spec: &EnsembleSpec) -> Result<ensemble::EnsembleStats, Failure> {
    let fam = cfg.family().map_err(Failure::Usage)?;
    let x0 = (cfg.run.x0[0], cfg.run.x0[1]);
    let stats = ensemble::run_ensemble(&fam, x0, cfg.run.n, spec, cfg.run.thin, None)?;
    sink.json("simulate.json", &json!({ "spec": spec, "x0": cfg.run.x0, "stats": stats }))?;
    let edges = stats.histogram.edges();
    let rows: Vec<Vec<String>> = stats
        .histogram
        .counts
        .iter()
        .enumerate()
        .map(|(i, c)| vec![format!("{}", edges[i]), format!("{}", edges[i + 1]), c.to_string()])
        .collect();
    sink.csv("histogram.csv", &["lo", "hi", "count"], &rows)?;
    let m = &stats.summary;
    sink.csv(
        "moments.csv",
        &["n", "M", "s", "mean", "variance", "skewness", "excess_kurtosis", "se_mean", "se_variance"],
        &[vec![
            stats.steps.to_string(),
            stats.orbits.to_string(),
            format!("{}", stats.s),
            format!("{}", m.mean),
            format!("{}", m.variance),
            format!("{}", m.skewness),
            format!("{}", m.excess_kurtosis),
            format!("{}", m.se_mean),
            format!("{}", m.se_variance),
        ]],
    )?;
    if cfg.output.raw {
        stats.write_raw(&sink.path("displacement.f64le"))?;
    }
    Ok(stats)
}

fn clt(cfg: &Config, sink: &Sink, spec: &EnsembleSpec, ks: Option<f64>) -> CmdResult {
    let fam = cfg.family().map_err(Failure::Usage)?;
    let pred = DiffusionPrediction::new(&fam, cfg.gamma().map_err(Failure::Usage)?)?;
    let stats = simulate(cfg, sink, spec)?;
    let report = ensemble::clt_test(&stats, &pred, cfg.run.x0[1], ks)?;
    sink.json("clt.json", &serde_json::to_value(&report).map_err(Error::from)?)?;
    println!(
        "KS {:.5} (threshold {:.5}), z: mean {:.2} var {:.2} skew {:.2} kurt {:.2}",
        report.ks, report.ks_threshold, report.z_mean, report.z_variance, report.z_skewness, report.z_excess_kurtosis
    );
    if !report.pass {
        return Err(Failure::Gate(report.diagnostic.unwrap_or_default()));
    }
    Ok(())
}

fn max_steps(cfg: &Config) -> u64 {
    cfg.run.max_steps.unwrap_or_else(|| ensemble::default_max_steps(cfg.model.epsilon))
}

fn stopping(cfg: &Config, sink: &Sink, spec: &EnsembleSpec) -> CmdResult {
    let fam = cfg.family().map_err(Failure::Usage)?;
    let x0 = (cfg.run.x0[0], cfg.run.x0[1]);
    let st = ensemble::stopping_times(&fam, x0, cfg.zones.beta, spec, max_steps(cfg))?;
    let rows: Vec<Vec<String>> = st
        .records
        .iter()
        .map(|r| {
            let side = serde_json::to_value(r.side).map_err(Error::from)?;
            Ok(vec![
                r.orbit.to_string(),
                r.n.to_string(),
                side.as_str().unwrap_or_default().to_string(),
                format!("{}", r.displacement),
            ])
        })
        .collect::<Result<_, Failure>>()?;
    sink.csv("stopping.csv", &["orbit", "n", "side", "displacement"], &rows)?;
    sink.json(
        "stopping.json",
        &json!({
            "width": st.width,
            "beta": st.beta,
            "max_steps": st.max_steps,
            "censored": st.censored(),
            "median": st.median(),
            "log10_histogram": st.log10_histogram,
        }),
    )?;
    Ok(())
}

fn martingale(cfg: &Config, sink: &Sink, spec: &EnsembleSpec, powers: &[i32], lambda: f64) -> CmdResult {
    let fam = cfg.family().map_err(Failure::Usage)?;
    let zp = cfg.zone_params().map_err(Failure::Usage)?;
    let mut pred = DiffusionPrediction::new(&fam, zp.gamma)?;
    let x0 = (cfg.run.x0[0], cfg.run.x0[1]);
    let class = classify(x0.1, &zp);
    if let (Zone::Ir, Some((p, q))) = (class.zone, class.rational) {
        pred = pred.imaginary_rotation(p, q)?;
    }
    let tests: Vec<Power> = powers.iter().map(|&k| Power(k)).collect();
    let report = ensemble::martingale_residual(&fam, &pred, &zp, &tests, lambda, x0, spec, max_steps(cfg))?;
    sink.json("martingale.json", &serde_json::to_value(&report).map_err(Error::from)?)?;
    for r in &report.residuals {
        println!("{}: residual {:.3e} +- {:.3e}", r.test_function, r.residual, r.se);
    }
    Ok(())
}

fn reeb(cfg: &Config, sink: &Sink, p: i64, q: u64, grid: usize, k3: Option<f64>) -> CmdResult {
    let fam = cfg.family().map_err(Failure::Usage)?;
    let frame = composite_map(&fam, p, q, cfg.gamma().map_err(Failure::Usage)?)?;
    let g = reeb_graph(&frame, Some(k3.unwrap_or_else(|| default_k3(&frame))), grid)?;
    sink.json("reeb.json", &g.to_json())?;
    sink.text("reeb.dot", &g.to_dot())?;
    let (v, e) = g.counts();
    println!("{v} vertices, {e} edges");
    Ok(())
}

fn measure(cfg: &Config, sink: &Sink) -> CmdResult {
    let zp = cfg.zone_params().map_err(Failure::Usage)?;
    let m = rational_strip_measure(&zp, cfg.model.r_window);
    sink.json("measure.json", &serde_json::to_value(&m).map_err(Error::from)?)?;
    println!("{} resonances with q <= {}; measure {:.3e} vs bound {:.3e}", m.count, m.q_max, m.measured, m.measure_bound);
    if !(m.count_ok && m.measure_ok) {
        return Err(Failure::Gate("resonance count or measure bound violated".into()));
    }
    Ok(())
}

fn charfn(sink: &Sink, spec: &EnsembleSpec, weights: Weights, n: usize, t_max: f64, points: usize) -> CmdResult {
    let alpha = 0.5 * (5f64.sqrt() - 1.0);
    let v: Vec<f64> = match weights {
        Weights::Ones => vec![1.0; n],
        Weights::GoldenCos => (0..n).map(|k| (std::f64::consts::TAU * (k as f64 * alpha).fract()).cos()).collect(),
    };
    let ts = grid(-t_max, t_max, points);
    let cf = ensemble::empirical_char_function(&v, spec, &ts)?;
    let rows: Vec<Vec<String>> = cf
        .points
        .iter()
        .map(|p| vec![format!("{}", p.t), format!("{}", p.re), format!("{}", p.im), format!("{}", p.reference), format!("{}", p.error)])
        .collect();
    sink.csv("charfn.csv", &["t", "re", "im", "reference", "error"], &rows)?;
    println!("sigma^2 = {:.6}, sup error {:.5}", cf.sigma2, cf.sup_error());
    Ok(())
}
