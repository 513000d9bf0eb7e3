//! Forward simulation: the pure-jump regime process driven by the Poisson
//! random measure over the control grid, and the Euler scheme of the
//! regime-switching diffusion. Paths are generated from per-path counter-based
//! streams, so a bundle is bit-identical for a given seed regardless of
//! thread count.

use std::io::Write;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::exec;
use crate::model::{ControlGrid, IntensityMeasure, Problem, TimeGrid};
use crate::policy::Policy;
use crate::rng::{path_stream, StreamTag};

/// Piecewise-constant regime path: jump times in (0, T] with marks from the
/// control grid.
#[derive(Debug, Clone)]
pub struct RegimePath {
    pub jump_times: Vec<f64>,
    /// Flat marks, q entries per jump.
    pub marks: Vec<f64>,
    pub i0: Vec<f64>,
    pub dim_q: usize,
}

impl RegimePath {
    /// Regime value at grid times. A jump exactly at t_k is visible at index
    /// k (cadlag sampling).
    pub fn at_grid(&self, grid: &TimeGrid) -> Vec<f64> {
        let q = self.dim_q;
        let mut out = Vec::with_capacity((grid.n_steps() + 1) * q);
        let mut j = 0;
        for &t in grid.times() {
            while j < self.jump_times.len() && self.jump_times[j] <= t {
                j += 1;
            }
            if j == 0 {
                out.extend_from_slice(&self.i0);
            } else {
                out.extend_from_slice(&self.marks[(j - 1) * q..j * q]);
            }
        }
        out
    }
}

/// Jump times from exponential inter-arrivals with rate `total_mass`,
/// truncated at `horizon`; marks i.i.d. from the mark law.
pub fn sample_regime_path<R: Rng>(
    im: &IntensityMeasure,
    control_grid: &ControlGrid,
    i0: &[f64],
    horizon: f64,
    rng: &mut R,
) -> RegimePath {
    let q = control_grid.dim_q();
    let mut jump_times = Vec::new();
    let mut marks = Vec::new();
    let mut t = 0.0;
    loop {
        let u: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
        t += -u.ln() / im.total_mass();
        if t > horizon {
            break;
        }
        jump_times.push(t);
        let mark_idx = im.sample_index(rng.gen::<f64>());
        marks.extend_from_slice(control_grid.point(mark_idx));
    }
    RegimePath {
        jump_times,
        marks,
        i0: i0.to_vec(),
        dim_q: q,
    }
}

/// Simulated forward paths on a time grid: Euler states, regimes sampled at
/// grid times, and the Brownian increments that drove them.
#[derive(Debug, Clone)]
pub struct PathBundle {
    pub n_paths: usize,
    pub grid: TimeGrid,
    pub dim_d: usize,
    pub dim_q: usize,
    /// n_paths x (n+1) x d
    pub states: Vec<f64>,
    /// n_paths x (n+1) x q
    pub regimes: Vec<f64>,
    /// n_paths x n x d
    pub increments: Vec<f64>,
    pub seed: u64,
}

impl PathBundle {
    pub fn state(&self, path: usize, k: usize) -> &[f64] {
        let stride = (self.grid.n_steps() + 1) * self.dim_d;
        let base = path * stride + k * self.dim_d;
        &self.states[base..base + self.dim_d]
    }

    pub fn regime(&self, path: usize, k: usize) -> &[f64] {
        let stride = (self.grid.n_steps() + 1) * self.dim_q;
        let base = path * stride + k * self.dim_q;
        &self.regimes[base..base + self.dim_q]
    }

    pub fn increment(&self, path: usize, k: usize) -> &[f64] {
        let stride = self.grid.n_steps() * self.dim_d;
        let base = path * stride + k * self.dim_d;
        &self.increments[base..base + self.dim_d]
    }

    /// Columnar debug dump: path, step, time, state, regime components.
    pub fn dump_csv<W: Write>(&self, out: &mut W) -> Result<()> {
        write!(out, "path,k,t")?;
        for j in 0..self.dim_d {
            write!(out, ",x{j}")?;
        }
        for j in 0..self.dim_q {
            write!(out, ",i{j}")?;
        }
        writeln!(out)?;
        for p in 0..self.n_paths {
            for (k, &t) in self.grid.times().iter().enumerate() {
                write!(out, "{p},{k},{}", fmt17(t))?;
                for v in self.state(p, k) {
                    write!(out, ",{}", fmt17(*v))?;
                }
                for v in self.regime(p, k) {
                    write!(out, ",{}", fmt17(*v))?;
                }
                writeln!(out)?;
            }
        }
        Ok(())
    }
}

pub(crate) fn fmt17(v: f64) -> String {
    format!("{v:.16e}")
}

fn bundle_bytes(n_paths: usize, n: usize, d: usize, q: usize) -> usize {
    8 * n_paths * ((n + 1) * d + (n + 1) * q + n * d)
}

/// Optional cap on bundle memory, in bytes.
pub const MEMORY_CAP_ENV: &str = "HJBMC_MAX_BUNDLE_BYTES";

fn check_memory_cap(n_paths: usize, n: usize, d: usize, q: usize) -> Result<()> {
    if let Ok(v) = std::env::var(MEMORY_CAP_ENV) {
        let cap: usize = v
            .parse()
            .map_err(|_| Error::Config(format!("{MEMORY_CAP_ENV} must be an integer")))?;
        let need = bundle_bytes(n_paths, n, d, q);
        if need > cap {
            return Err(Error::Config(format!(
                "path bundle needs {need} bytes, over the {MEMORY_CAP_ENV} cap of {cap}; \
                 reduce n_paths or use the streaming evaluators"
            )));
        }
    }
    Ok(())
}

struct EulerScratch {
    drift: Vec<f64>,
    diffusion: Vec<f64>,
}

impl EulerScratch {
    fn new(d: usize) -> Self {
        Self {
            drift: vec![0.0; d],
            diffusion: vec![0.0; d * d],
        }
    }
}

/// One Euler update: x_next = x + b dt + sigma dw.
fn euler_step(
    p: &Problem,
    x: &[f64],
    a: &[f64],
    dt: f64,
    dw: &[f64],
    scratch: &mut EulerScratch,
    x_next: &mut [f64],
) -> bool {
    let d = p.dim_d;
    p.drift_into(x, a, &mut scratch.drift);
    p.diffusion_into(x, a, &mut scratch.diffusion);
    for i in 0..d {
        let mut v = x[i] + scratch.drift[i] * dt;
        for j in 0..d {
            v += scratch.diffusion[i * d + j] * dw[j];
        }
        x_next[i] = v;
    }
    x_next.iter().all(|v| v.is_finite())
}


/// First non-finite state across the bundle, reported with the last finite
/// state of that path.
fn scan_for_failures(states: &[f64], n_paths: usize, n: usize, d: usize) -> Result<()> {
    let stride = (n + 1) * d;
    for path in 0..n_paths {
        let xs = &states[path * stride..(path + 1) * stride];
        for k in 0..=n {
            if xs[k * d..(k + 1) * d].iter().any(|v| !v.is_finite()) {
                let prev = if k == 0 { 0 } else { k - 1 };
                return Err(Error::Simulation {
                    path,
                    step: prev,
                    detail: format!(
                        "non-finite coefficient evaluation from state {:?}",
                        &xs[prev * d..(prev + 1) * d]
                    ),
                });
            }
        }
    }
    Ok(())
}

/// Euler scheme of the regime-switching diffusion, with the regime drawn from
/// the Poisson random measure.
pub fn simulate_forward(
    p: &Problem,
    grid: &TimeGrid,
    im: &IntensityMeasure,
    n_paths: usize,
    seed: u64,
) -> Result<PathBundle> {
    grid.check_compatible(p)?;
    if n_paths == 0 {
        return Err(Error::Model("n_paths must be positive".into()));
    }
    let control_grid = p.controls.grid();
    if im.weights().len() != control_grid.len() {
        return Err(Error::Model(format!(
            "mark law has {} weights for a control grid of {} points",
            im.weights().len(),
            control_grid.len()
        )));
    }
    let (d, q, n) = (p.dim_d, p.controls.dim_q(), grid.n_steps());
    check_memory_cap(n_paths, n, d, q)?;

    let mut states = vec![0.0; n_paths * (n + 1) * d];
    let mut regimes = vec![0.0; n_paths * (n + 1) * q];
    let mut increments = vec![0.0; n_paths * n * d];

    {
        let (p_ref, grid_ref, im_ref, cg) = (p, grid, im, &control_grid);
        exec::zip3_chunks_mut(
            (&mut states, (n + 1) * d),
            (&mut regimes, (n + 1) * q),
            (&mut increments, n * d),
            |path, xs, is, dws| {
                let mut regime_rng = path_stream(seed, path as u64, StreamTag::Regime);
                let rp = sample_regime_path(im_ref, cg, &p_ref.i0, grid_ref.horizon(), &mut regime_rng);
                is.copy_from_slice(&rp.at_grid(grid_ref));

                let mut bm_rng = path_stream(seed, path as u64, StreamTag::Brownian);
                let mut scratch = EulerScratch::new(d);
                xs[..d].copy_from_slice(&p_ref.x0);
                for k in 0..n {
                    let dt = grid_ref.dt(k);
                    let sqrt_dt = dt.sqrt();
                    for j in 0..d {
                        let z: f64 = bm_rng.sample(StandardNormal);
                        dws[k * d + j] = sqrt_dt * z;
                    }
                    let (head, tail) = xs.split_at_mut((k + 1) * d);
                    let ok = euler_step(
                        p_ref,
                        &head[k * d..],
                        &is[k * q..(k + 1) * q],
                        dt,
                        &dws[k * d..(k + 1) * d],
                        &mut scratch,
                        &mut tail[..d],
                    );
                    if !ok {
                        // non-finite values stay in place; scanned after the loop
                        return;
                    }
                }
            },
        );
    }
    scan_for_failures(&states, n_paths, n, d)?;

    Ok(PathBundle {
        n_paths,
        grid: grid.clone(),
        dim_d: d,
        dim_q: q,
        states,
        regimes,
        increments,
        seed,
    })
}

/// Euler scheme driven by a feedback policy instead of the exogenous regime.
/// The regime array stores the applied controls.
pub fn simulate_controlled<P: Policy>(
    p: &Problem,
    grid: &TimeGrid,
    policy: &P,
    n_paths: usize,
    seed: u64,
) -> Result<PathBundle> {
    grid.check_compatible(p)?;
    if n_paths == 0 {
        return Err(Error::Model("n_paths must be positive".into()));
    }
    let (d, q, n) = (p.dim_d, p.controls.dim_q(), grid.n_steps());
    check_memory_cap(n_paths, n, d, q)?;

    let mut states = vec![0.0; n_paths * (n + 1) * d];
    let mut regimes = vec![0.0; n_paths * (n + 1) * q];
    let mut increments = vec![0.0; n_paths * n * d];

    {
        exec::zip3_chunks_mut(
            (&mut states, (n + 1) * d),
            (&mut regimes, (n + 1) * q),
            (&mut increments, n * d),
            |path, xs, is, dws| {
                let mut bm_rng = path_stream(seed, path as u64, StreamTag::Brownian);
                let mut scratch = EulerScratch::new(d);
                xs[..d].copy_from_slice(&p.x0);
                for k in 0..n {
                    let dt = grid.dt(k);
                    let sqrt_dt = dt.sqrt();
                    for j in 0..d {
                        let z: f64 = bm_rng.sample(StandardNormal);
                        dws[k * d + j] = sqrt_dt * z;
                    }
                    {
                        let (a_slot, _) = is[k * q..].split_at_mut(q);
                        policy.control_into(k, &xs[k * d..(k + 1) * d], a_slot);
                    }
                    let (head, tail) = xs.split_at_mut((k + 1) * d);
                    let ok = euler_step(
                        p,
                        &head[k * d..],
                        &is[k * q..(k + 1) * q],
                        dt,
                        &dws[k * d..(k + 1) * d],
                        &mut scratch,
                        &mut tail[..d],
                    );
                    if !ok {
                        return;
                    }
                }
                // final slot repeats the last applied control
                is.copy_within((n - 1) * q..n * q, n * q);
            },
        );
    }
    scan_for_failures(&states, n_paths, n, d)?;

    Ok(PathBundle {
        n_paths,
        grid: grid.clone(),
        dim_d: d,
        dim_q: q,
        states,
        regimes,
        increments,
        seed,
    })
}
