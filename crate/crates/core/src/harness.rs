//! Experiment driver: runs the regression scheme over a grid of time
//! discretizations and seeds, compares against a reference value, estimates
//! empirical convergence rates, and writes machine-readable reports.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::forward::{fmt17, simulate_forward, PathBundle};
use crate::model::{
    self, BsbParams, GbmParams, IntensityMeasure, LqParams, Problem, TimeGrid,
};
use crate::oracle::{self, FdConfig};
use crate::policy::{evaluate_policy, extract_policy};
use crate::regression::{BasisKind, BasisSpec};
use crate::scheme::{run_scheme, SchemeOptions};

/// Offset applied to the training seed to derive the out-of-sample
/// evaluation seed (the 64-bit golden-ratio constant).
pub const EVAL_SEED_OFFSET: u64 = 0x9E37_79B9_7F4A_7C15;

#[derive(Debug, Clone)]
pub enum ProblemSpec {
    Lq(LqParams),
    Bsb(BsbParams),
    Gbm(GbmParams),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reference {
    /// Closed form for the linear-quadratic problem.
    Riccati,
    /// Closed form for the uncertain-volatility call.
    Bsb,
    /// Finite-difference solution of the HJB equation.
    Fd,
    /// Exact expectation for the uncontrolled geometric Brownian motion.
    Exact,
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub problem: ProblemSpec,
    pub control_points: usize,
    pub n_steps: Vec<usize>,
    pub seeds: Vec<u64>,
    pub n_paths: usize,
    pub n_eval_paths: usize,
    pub intensity_mass: f64,
    pub basis: BasisSpec,
    pub reference: Reference,
    pub fd_space_points: usize,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_steps.is_empty() {
            return Err(Error::Config("grids.n_steps must be non-empty".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("mc.seeds must be non-empty".into()));
        }
        if self.n_paths == 0 || self.n_eval_paths == 0 {
            return Err(Error::Config("mc path counts must be positive".into()));
        }
        if !(self.intensity_mass > 0.0) {
            return Err(Error::Config("mc.intensity_mass must be positive".into()));
        }
        if self.control_points == 0 {
            return Err(Error::Config("problem.control_points must be positive".into()));
        }
        for &s in &self.seeds {
            if s == s ^ EVAL_SEED_OFFSET {
                return Err(Error::Config("seed collides with its evaluation seed".into()));
            }
        }
        Ok(())
    }

    pub fn build_problem(&self) -> Result<Problem> {
        match &self.problem {
            ProblemSpec::Lq(p) => model::lq1d(p, self.control_points),
            ProblemSpec::Bsb(p) => model::bsb_call(p, self.control_points),
            ProblemSpec::Gbm(p) => model::nocontrol_gbm(p),
        }
    }

    pub fn reference_value(&self, p: &Problem) -> Result<f64> {
        match (self.reference, &self.problem) {
            (Reference::Riccati, ProblemSpec::Lq(lq)) => oracle::riccati_value(lq, lq.x0),
            (Reference::Riccati, _) => {
                Err(Error::Config("riccati reference needs a lq problem".into()))
            }
            (Reference::Bsb, ProblemSpec::Bsb(b)) => {
                oracle::bsb_reference(b.x0, b.strike, b.sigma_lo, b.sigma_hi, b.horizon)
            }
            (Reference::Bsb, _) => Err(Error::Config("bsb reference needs a bsb problem".into())),
            (Reference::Exact, ProblemSpec::Gbm(g)) => Ok(g.x0 * (g.mu * g.horizon).exp()),
            (Reference::Exact, _) => {
                Err(Error::Config("exact reference needs a gbm problem".into()))
            }
            (Reference::Fd, _) => {
                let cfg = FdConfig::auto(p, self.fd_space_points)?;
                let sol = oracle::solve_hjb_fd(p, &cfg)?;
                Ok(sol.value_at(p.x0[0]))
            }
        }
    }
}

// ---------------------------------------------------------------------------
// INI-style configuration files
// ---------------------------------------------------------------------------

/// Parse a minimal INI file with sections `[problem]`, `[grids]`, `[mc]`,
/// `[regression]`, `[output]`. Unknown sections or keys are errors so that
/// typos do not silently fall back to defaults.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let mut sections: BTreeMap<String, BTreeMap<String, String>> = BTreeMap::new();
    let mut current: Option<String> = None;
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split(&['#', ';'][..]).next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if let Some(name) = line.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
            let name = name.trim().to_ascii_lowercase();
            if !["problem", "grids", "mc", "regression", "output"].contains(&name.as_str()) {
                return Err(Error::Config(format!(
                    "line {}: unknown section [{name}]",
                    lineno + 1
                )));
            }
            sections.entry(name.clone()).or_default();
            current = Some(name);
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::Config(format!("line {}: expected key = value", lineno + 1))
        })?;
        let section = current.as_ref().ok_or_else(|| {
            Error::Config(format!("line {}: key outside any section", lineno + 1))
        })?;
        let prev = sections
            .get_mut(section)
            .unwrap()
            .insert(key.trim().to_ascii_lowercase(), value.trim().to_string());
        if prev.is_some() {
            return Err(Error::Config(format!(
                "line {}: duplicate key {} in [{section}]",
                lineno + 1,
                key.trim()
            )));
        }
    }
    build_config(&sections)
}

fn take<'a>(
    section: &'a mut BTreeMap<String, String>,
    key: &str,
) -> Option<String> {
    section.remove(key)
}

fn parse_num<T: std::str::FromStr>(section: &str, key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| {
        Error::Config(format!("[{section}] {key} = {value} is not a valid number"))
    })
}

fn parse_list<T: std::str::FromStr>(section: &str, key: &str, value: &str) -> Result<Vec<T>> {
    value
        .split(',')
        .map(|v| parse_num(section, key, v.trim()))
        .collect()
}

fn build_config(
    sections: &BTreeMap<String, BTreeMap<String, String>>,
) -> Result<ExperimentConfig> {
    let mut sections = sections.clone();
    let mut problem = sections
        .remove("problem")
        .ok_or_else(|| Error::Config("missing [problem] section".into()))?;
    let kind = take(&mut problem, "kind")
        .ok_or_else(|| Error::Config("[problem] needs kind = lq | bsb | gbm".into()))?
        .to_ascii_lowercase();

    let mut control_points = 21usize;
    if let Some(v) = take(&mut problem, "control_points") {
        control_points = parse_num("problem", "control_points", &v)?;
    }

    macro_rules! field {
        ($params:ident, $name:ident) => {
            if let Some(v) = take(&mut problem, stringify!($name)) {
                $params.$name = parse_num("problem", stringify!($name), &v)?;
            }
        };
    }

    let spec = match kind.as_str() {
        "lq" => {
            let mut p = LqParams::default();
            field!(p, beta);
            field!(p, s);
            field!(p, c_x);
            field!(p, c_a);
            field!(p, c_g);
            field!(p, a_max);
            field!(p, x0);
            field!(p, horizon);
            ProblemSpec::Lq(p)
        }
        "bsb" => {
            let mut p = BsbParams::default();
            field!(p, x0);
            field!(p, strike);
            field!(p, sigma_lo);
            field!(p, sigma_hi);
            field!(p, horizon);
            ProblemSpec::Bsb(p)
        }
        "gbm" => {
            let mut p = GbmParams::default();
            field!(p, mu);
            field!(p, sigma);
            field!(p, x0);
            field!(p, horizon);
            ProblemSpec::Gbm(p)
        }
        other => {
            return Err(Error::Config(format!(
                "[problem] kind = {other} (expected lq, bsb, or gbm)"
            )))
        }
    };
    if let Some(k) = problem.keys().next() {
        return Err(Error::Config(format!("[problem] unknown key {k}")));
    }

    let mut grids = sections
        .remove("grids")
        .ok_or_else(|| Error::Config("missing [grids] section".into()))?;
    let n_steps: Vec<usize> = parse_list(
        "grids",
        "n_steps",
        &take(&mut grids, "n_steps")
            .ok_or_else(|| Error::Config("[grids] needs n_steps".into()))?,
    )?;
    if let Some(k) = grids.keys().next() {
        return Err(Error::Config(format!("[grids] unknown key {k}")));
    }

    let mut mc = sections
        .remove("mc")
        .ok_or_else(|| Error::Config("missing [mc] section".into()))?;
    let n_paths: usize = parse_num(
        "mc",
        "n_paths",
        &take(&mut mc, "n_paths").ok_or_else(|| Error::Config("[mc] needs n_paths".into()))?,
    )?;
    let n_eval_paths: usize = match take(&mut mc, "eval_paths") {
        Some(v) => parse_num("mc", "eval_paths", &v)?,
        None => n_paths,
    };
    let seeds: Vec<u64> = parse_list(
        "mc",
        "seeds",
        &take(&mut mc, "seeds").ok_or_else(|| Error::Config("[mc] needs seeds".into()))?,
    )?;
    let intensity_mass: f64 = match take(&mut mc, "intensity_mass") {
        Some(v) => parse_num("mc", "intensity_mass", &v)?,
        None => 2.0,
    };
    if let Some(k) = mc.keys().next() {
        return Err(Error::Config(format!("[mc] unknown key {k}")));
    }

    let mut basis = BasisSpec::per_regime(2);
    if let Some(mut reg) = sections.remove("regression") {
        let kind = match take(&mut reg, "basis") {
            Some(v) => match v.to_ascii_lowercase().as_str() {
                "per_regime" => BasisKind::PolyXPerA,
                "joint" => BasisKind::PolyXa,
                other => {
                    return Err(Error::Config(format!(
                        "[regression] basis = {other} (expected per_regime or joint)"
                    )))
                }
            },
            None => BasisKind::PolyXPerA,
        };
        let degree_x: usize = match take(&mut reg, "degree") {
            Some(v) => parse_num("regression", "degree", &v)?,
            None => 2,
        };
        let degree_a: usize = match take(&mut reg, "degree_a") {
            Some(v) => parse_num("regression", "degree_a", &v)?,
            None => degree_x,
        };
        basis = match kind {
            BasisKind::PolyXPerA => BasisSpec::per_regime(degree_x),
            BasisKind::PolyXa => BasisSpec::joint(degree_x, degree_a),
        };
        if let Some(k) = reg.keys().next() {
            return Err(Error::Config(format!("[regression] unknown key {k}")));
        }
    }

    let mut reference = match &spec {
        ProblemSpec::Lq(_) => Reference::Riccati,
        ProblemSpec::Bsb(_) => Reference::Bsb,
        ProblemSpec::Gbm(_) => Reference::Exact,
    };
    let mut fd_space_points = 500usize;
    if let Some(mut out) = sections.remove("output") {
        if let Some(v) = take(&mut out, "reference") {
            reference = match v.to_ascii_lowercase().as_str() {
                "riccati" => Reference::Riccati,
                "bsb" => Reference::Bsb,
                "fd" => Reference::Fd,
                "exact" => Reference::Exact,
                other => {
                    return Err(Error::Config(format!(
                        "[output] reference = {other} (expected riccati, bsb, fd, or exact)"
                    )))
                }
            };
        }
        if let Some(v) = take(&mut out, "fd_space_points") {
            fd_space_points = parse_num("output", "fd_space_points", &v)?;
        }
        if let Some(k) = out.keys().next() {
            return Err(Error::Config(format!("[output] unknown key {k}")));
        }
    }

    let cfg = ExperimentConfig {
        problem: spec,
        control_points,
        n_steps,
        seeds,
        n_paths,
        n_eval_paths,
        intensity_mass,
        basis,
        reference,
        fd_space_points,
    };
    cfg.validate()?;
    Ok(cfg)
}

// ---------------------------------------------------------------------------
// Experiment execution
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct CellResult {
    pub n: usize,
    pub modulus: f64,
    pub seed: u64,
    pub value0: f64,
    pub j_hat: f64,
    pub stderr_j: f64,
    pub v_ref: f64,
}

impl CellResult {
    pub fn err(&self) -> f64 {
        self.value0 - self.v_ref
    }
    pub fn err_plus(&self) -> f64 {
        self.err().max(0.0)
    }
    pub fn err_minus(&self) -> f64 {
        (-self.err()).max(0.0)
    }
}

#[derive(Debug, Clone)]
pub struct CellFailure {
    pub n: usize,
    pub seed: u64,
    pub message: String,
}

#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub v_ref: f64,
    pub rows: Vec<CellResult>,
    pub failures: Vec<CellFailure>,
    /// Slope of log mean |value0 - v_ref| against log modulus, when
    /// estimable.
    pub value_rate: Option<f64>,
    /// Same for the policy gain error |j_hat - v_ref|.
    pub gain_rate: Option<f64>,
}

/// Run every (n, seed) cell of the experiment. Each cell trains the scheme
/// on its own path bundle and evaluates the extracted feedback policy on an
/// independent bundle seeded with `seed ^ EVAL_SEED_OFFSET`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let p = cfg.build_problem()?;
    let v_ref = cfg.reference_value(&p)?;
    let control_grid = p.controls.grid();
    let im = IntensityMeasure::uniform(cfg.intensity_mass, control_grid.len())?;
    let opts = SchemeOptions::new(cfg.basis.clone());

    let mut rows = Vec::new();
    let mut failures = Vec::new();
    let mut ns = cfg.n_steps.clone();
    ns.sort_unstable();
    ns.dedup();
    for &n in &ns {
        let grid = TimeGrid::uniform(n, p.horizon)?;
        grid.check_compatible(&p)?;
        for &seed in &cfg.seeds {
            match run_cell(cfg, &p, &grid, &im, &opts, seed, v_ref) {
                Ok(row) => rows.push(row),
                Err(e) => failures.push(CellFailure {
                    n,
                    seed,
                    message: e.to_string(),
                }),
            }
        }
    }
    rows.sort_by(|a, b| (a.n, a.seed).cmp(&(b.n, b.seed)));

    let value_rate = rate_from_rows(&rows, |r| (r.modulus, r.err().abs())).ok();
    let gain_rate = rate_from_rows(&rows, |r| (r.modulus, (r.j_hat - r.v_ref).abs())).ok();
    Ok(ExperimentReport {
        v_ref,
        rows,
        failures,
        value_rate,
        gain_rate,
    })
}

fn run_cell(
    cfg: &ExperimentConfig,
    p: &Problem,
    grid: &TimeGrid,
    im: &IntensityMeasure,
    opts: &SchemeOptions,
    seed: u64,
    v_ref: f64,
) -> Result<CellResult> {
    let out = run_scheme(p, grid, im, cfg.n_paths, seed, opts)?;
    let policy = extract_policy(&out);
    let gain = evaluate_policy(p, &policy, cfg.n_eval_paths, seed ^ EVAL_SEED_OFFSET)?;
    Ok(CellResult {
        n: grid.n_steps(),
        modulus: grid.modulus(),
        seed,
        value0: out.value0,
        j_hat: gain.mean,
        stderr_j: gain.stderr,
        v_ref,
    })
}

fn rate_from_rows<F: Fn(&CellResult) -> (f64, f64)>(
    rows: &[CellResult],
    pick: F,
) -> Result<f64> {
    // average the error over seeds at each modulus before fitting
    let mut by_n: BTreeMap<u64, (f64, f64, usize)> = BTreeMap::new();
    for r in rows {
        let (h, e) = pick(r);
        let entry = by_n.entry(h.to_bits()).or_insert((h, 0.0, 0));
        entry.1 += e;
        entry.2 += 1;
    }
    let pairs: Vec<(f64, f64)> = by_n
        .values()
        .map(|&(h, sum, cnt)| (h, sum / cnt as f64))
        .collect();
    estimate_rate(&pairs)
}

/// Least-squares slope of log(error) against log(modulus). Pairs with a
/// non-positive modulus or error are dropped; at least three usable pairs
/// are required.
pub fn estimate_rate(pairs: &[(f64, f64)]) -> Result<f64> {
    let logs: Vec<(f64, f64)> = pairs
        .iter()
        .filter(|&&(h, e)| h > 0.0 && e > 0.0 && h.is_finite() && e.is_finite())
        .map(|&(h, e)| (h.ln(), e.ln()))
        .collect();
    if logs.len() < 3 {
        return Err(Error::RateFit(logs.len()));
    }
    let n = logs.len() as f64;
    let mx = logs.iter().map(|p| p.0).sum::<f64>() / n;
    let my = logs.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx = logs.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum::<f64>();
    if sxx <= 0.0 {
        return Err(Error::RateFit(1));
    }
    let sxy = logs.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>();
    Ok(sxy / sxx)
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

/// Write `errors.csv`, `rates.csv`, and `summary.txt` into `dir`. Output is
/// byte-for-byte deterministic for a given report.
pub fn emit_report(report: &ExperimentReport, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut errors = std::fs::File::create(dir.join("errors.csv"))?;
    write_errors_csv(report, &mut errors)?;
    let mut rates = std::fs::File::create(dir.join("rates.csv"))?;
    write_rates_csv(report, &mut rates)?;
    let mut summary = std::fs::File::create(dir.join("summary.txt"))?;
    summary.write_all(render_summary(report).as_bytes())?;
    Ok(())
}

pub fn write_errors_csv<W: Write>(report: &ExperimentReport, out: &mut W) -> Result<()> {
    writeln!(
        out,
        "n,modulus,seed,value0,j_hat,stderr_j,v_ref,err,err_plus,err_minus"
    )?;
    for r in &report.rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            r.n,
            fmt17(r.modulus),
            r.seed,
            fmt17(r.value0),
            fmt17(r.j_hat),
            fmt17(r.stderr_j),
            fmt17(r.v_ref),
            fmt17(r.err()),
            fmt17(r.err_plus()),
            fmt17(r.err_minus()),
        )?;
    }
    Ok(())
}

pub fn write_rates_csv<W: Write>(report: &ExperimentReport, out: &mut W) -> Result<()> {
    writeln!(out, "quantity,slope")?;
    let fmt = |v: &Option<f64>| match v {
        Some(s) => fmt17(*s),
        None => "nan".to_string(),
    };
    writeln!(out, "value_error,{}", fmt(&report.value_rate))?;
    writeln!(out, "gain_error,{}", fmt(&report.gain_rate))?;
    Ok(())
}

pub fn render_summary(report: &ExperimentReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "reference value: {}", fmt17(report.v_ref));
    let _ = writeln!(s, "cells completed: {}", report.rows.len());
    let _ = writeln!(s, "cells failed:    {}", report.failures.len());
    let mut by_n: BTreeMap<usize, Vec<&CellResult>> = BTreeMap::new();
    for r in &report.rows {
        by_n.entry(r.n).or_default().push(r);
    }
    for (n, rows) in &by_n {
        let mean_err = rows.iter().map(|r| r.err()).sum::<f64>() / rows.len() as f64;
        let mean_abs = rows.iter().map(|r| r.err().abs()).sum::<f64>() / rows.len() as f64;
        let _ = writeln!(
            s,
            "n = {n:>5}: mean err = {:+.6e}, mean |err| = {:.6e}, seeds = {}",
            mean_err,
            mean_abs,
            rows.len()
        );
    }
    match report.value_rate {
        Some(r) => {
            let _ = writeln!(s, "value error rate: {r:.4}");
        }
        None => {
            let _ = writeln!(s, "value error rate: not estimable");
        }
    }
    match report.gain_rate {
        Some(r) => {
            let _ = writeln!(s, "gain error rate: {r:.4}");
        }
        None => {
            let _ = writeln!(s, "gain error rate: not estimable");
        }
    }
    for f in &report.failures {
        let _ = writeln!(s, "FAILED n = {}, seed = {}: {}", f.n, f.seed, f.message);
    }
    s
}

// ---------------------------------------------------------------------------
// Euler strong-error experiment
// ---------------------------------------------------------------------------

/// Root-mean-square terminal error of the Euler scheme for geometric
/// Brownian motion against the exact lognormal solution driven by the same
/// Brownian increments, one pair (modulus, rmse) per grid size.
pub fn euler_strong_errors(
    gbm: &GbmParams,
    n_steps: &[usize],
    n_paths: usize,
    seed: u64,
) -> Result<Vec<(f64, f64)>> {
    let p = model::nocontrol_gbm(gbm)?;
    let im = IntensityMeasure::uniform(1.0, 1)?;
    let mut out = Vec::with_capacity(n_steps.len());
    for &n in n_steps {
        let grid = TimeGrid::uniform(n, gbm.horizon)?;
        let bundle = simulate_forward(&p, &grid, &im, n_paths, seed)?;
        out.push((grid.modulus(), euler_rmse_vs_exact(gbm, &bundle)));
    }
    Ok(out)
}

fn euler_rmse_vs_exact(gbm: &GbmParams, bundle: &PathBundle) -> f64 {
    let n = bundle.grid.n_steps();
    let mut sq = 0.0;
    for path in 0..bundle.n_paths {
        let mut w = 0.0;
        for k in 0..n {
            w += bundle.increment(path, k)[0];
        }
        let exact = gbm.x0
            * ((gbm.mu - 0.5 * gbm.sigma * gbm.sigma) * gbm.horizon + gbm.sigma * w).exp();
        let diff = bundle.state(path, n)[0] - exact;
        sq += diff * diff;
    }
    (sq / bundle.n_paths as f64).sqrt()
}

/// Convenience used by tests and the CLI: slope of the strong error.
pub fn euler_strong_rate(
    gbm: &GbmParams,
    n_steps: &[usize],
    n_paths: usize,
    seed: u64,
) -> Result<f64> {
    estimate_rate(&euler_strong_errors(gbm, n_steps, n_paths, seed)?)
}
