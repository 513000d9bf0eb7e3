//! The discrete-time backward scheme: regress continuation values on
//! (state, regime), apply the implicit driver step, re-regress, and take the
//! per-state maximum over the control grid. Marching from the terminal
//! condition to time zero yields the value surfaces, the feedback argmax
//! policy, and the time-zero value estimate.

use std::io::Write;

use crate::error::{Error, Result};
use crate::exec;
use crate::forward::{fmt17, simulate_forward, PathBundle};
use crate::model::{ControlGrid, IntensityMeasure, Problem, TimeGrid};
use crate::regression::{fit, BasisSpec, RegressionModel};

#[derive(Debug, Clone)]
pub struct SchemeOptions {
    pub basis: BasisSpec,
    pub implicit_tol: f64,
    pub implicit_max_iter: usize,
    pub compute_z: bool,
    /// Subtract the delta-hedging martingale sigma(x, a)^T grad v_{k+1}(x)
    /// dW_k from the continuation targets. The term has zero conditional
    /// mean, so the fitted surface is unchanged in expectation, but the
    /// leading O(sqrt(dt)) noise cancels; this suppresses the upward bias of
    /// the per-state maximum over noisy control slices.
    pub control_variate: bool,
}

impl SchemeOptions {
    pub fn new(basis: BasisSpec) -> Self {
        Self {
            basis,
            implicit_tol: 1e-12,
            implicit_max_iter: 50,
            compute_z: false,
            control_variate: true,
        }
    }
}

impl Default for SchemeOptions {
    fn default() -> Self {
        Self::new(BasisSpec::per_regime(2))
    }
}

/// Per-step scheme diagnostics.
#[derive(Debug, Clone)]
pub struct StepDiagnostics {
    pub step: usize,
    pub condition_estimate: f64,
    pub max_implicit_iters: usize,
    pub min_value: f64,
    pub max_value: f64,
}

/// Everything the backward pass produces: one value surface per step, the
/// argmax control index per training path, optional Z surfaces, and the
/// time-zero value.
#[derive(Debug, Clone)]
pub struct SchemeOutput {
    pub grid: TimeGrid,
    pub control_grid: ControlGrid,
    /// Regression surface of the post-driver values, one per step.
    pub theta_models: Vec<RegressionModel>,
    /// Training states per step (flat, d per path), paired with the argmax
    /// control index.
    pub policy_states: Vec<Vec<f64>>,
    pub policy_controls: Vec<Vec<u32>>,
    /// Z surfaces per step and state component, when requested.
    pub z_models: Option<Vec<Vec<RegressionModel>>>,
    pub value0: f64,
    pub diagnostics: Vec<StepDiagnostics>,
    pub seed: u64,
    pub n_paths: usize,
}

impl SchemeOutput {
    pub fn n_steps(&self) -> usize {
        self.grid.n_steps()
    }

    /// Value surface v_k(x): max over the control grid of the step-k
    /// regression surface.
    pub fn value_at(&self, k: usize, x: &[f64]) -> Result<f64> {
        let model = self
            .theta_models
            .get(k)
            .ok_or_else(|| Error::Model(format!("step {k} out of range")))?;
        Ok(model.argmax_index(x, &self.control_grid).1)
    }

    /// Comma-separated diagnostics dump.
    pub fn dump_diagnostics<W: Write>(&self, out: &mut W) -> Result<()> {
        writeln!(out, "k,condition,implicit_iters,min_value,max_value")?;
        for d in &self.diagnostics {
            writeln!(
                out,
                "{},{},{},{},{}",
                d.step,
                fmt17(d.condition_estimate),
                d.max_implicit_iters,
                fmt17(d.min_value),
                fmt17(d.max_value)
            )?;
        }
        Ok(())
    }
}

/// Solve y = e + f(x, a, y) dt. Picard iteration from y = e; contraction
/// because L2 dt < 1 is enforced by the grid/problem pairing. Drivers that do
/// not depend on y need a single evaluation.
pub fn solve_implicit_step(
    continuation: f64,
    x: &[f64],
    a: &[f64],
    dt: f64,
    p: &Problem,
    opts: &SchemeOptions,
) -> Result<(f64, usize)> {
    if !p.f_depends_on_y {
        return Ok((continuation + p.driver(x, a, continuation) * dt, 1));
    }
    let mut y = continuation;
    for iter in 1..=opts.implicit_max_iter {
        let next = continuation + p.driver(x, a, y) * dt;
        if (next - y).abs() <= opts.implicit_tol * (1.0 + next.abs()) {
            return Ok((next, iter));
        }
        y = next;
    }
    Err(Error::ImplicitDiverged {
        step: usize::MAX,
        x: x.to_vec(),
        a: a.to_vec(),
        last: [y, continuation + p.driver(x, a, y) * dt],
    })
}

pub struct BackwardStepResult {
    pub theta_model: RegressionModel,
    pub z_models: Option<Vec<RegressionModel>>,
    pub this_values: Vec<f64>,
    pub controls: Vec<u32>,
    pub diagnostics: StepDiagnostics,
}

/// One backward step k: continuation regression, implicit driver step,
/// re-regression of the post-driver values, and per-path argmax.
pub fn backward_step(
    k: usize,
    bundle: &PathBundle,
    next_values: &[f64],
    next_surface: Option<&RegressionModel>,
    p: &Problem,
    control_grid: &ControlGrid,
    opts: &SchemeOptions,
) -> Result<BackwardStepResult> {
    let n_paths = bundle.n_paths;
    let (d, q) = (bundle.dim_d, bundle.dim_q);
    debug_assert_eq!(next_values.len(), n_paths);
    let dt = bundle.grid.dt(k);

    // gather step-k features
    let mut xs = vec![0.0; n_paths * d];
    let mut regs = vec![0.0; n_paths * q];
    for path in 0..n_paths {
        xs[path * d..(path + 1) * d].copy_from_slice(bundle.state(path, k));
        regs[path * q..(path + 1) * q].copy_from_slice(bundle.regime(path, k));
    }

    let attach = |e: Error| Error::Scheme {
        step: k,
        source: Box::new(e),
    };

    // (i) continuation surface c(x, a) ~ E_k[Y_{k+1}], optionally with the
    // delta-hedging control variate subtracted from the targets
    let cv_targets: Vec<f64>;
    let fit_targets: &[f64] = if opts.control_variate {
        let next_value = |x: &[f64]| -> f64 {
            match next_surface {
                Some(model) => model.argmax_index(x, control_grid).1,
                None => p.terminal(x),
            }
        };
        cv_targets = exec::map_indexed(n_paths, |path| {
            let x = bundle.state(path, k);
            let a = bundle.regime(path, k);
            let dw = bundle.increment(path, k);
            let mut xp = x.to_vec();
            let mut grad = vec![0.0; d];
            for i in 0..d {
                let h = 1e-4 * (1.0 + x[i].abs());
                xp[i] = x[i] + h;
                let up = next_value(&xp);
                xp[i] = x[i] - h;
                let dn = next_value(&xp);
                xp[i] = x[i];
                grad[i] = (up - dn) / (2.0 * h);
            }
            let mut sigma = vec![0.0; d * d];
            p.diffusion_into(x, a, &mut sigma);
            let mut cv = 0.0;
            for j in 0..d {
                let mut col = 0.0;
                for (i, g) in grad.iter().enumerate() {
                    col += g * sigma[i * d + j];
                }
                cv += col * dw[j];
            }
            next_values[path] - cv
        });
        &cv_targets
    } else {
        next_values
    };
    let continuation =
        fit(&opts.basis, control_grid, &xs, d, &regs, fit_targets).map_err(attach)?;

    // (ii) implicit driver step per path
    let mut implicit_iters = vec![0usize; n_paths];
    let mut y_samples = vec![0.0; n_paths];
    let mut first_err: Option<Error> = None;
    {
        let results: Vec<std::result::Result<(f64, usize), Error>> =
            exec::map_indexed(n_paths, |path| {
                let x = bundle.state(path, k);
                let a = bundle.regime(path, k);
                let e = continuation.predict(x, a)?;
                solve_implicit_step(e, x, a, dt, p, opts)
            });
        for (path, r) in results.into_iter().enumerate() {
            match r {
                Ok((y, iters)) => {
                    y_samples[path] = y;
                    implicit_iters[path] = iters;
                }
                Err(e) => {
                    let e = match e {
                        Error::ImplicitDiverged { x, a, last, .. } => Error::ImplicitDiverged {
                            step: k,
                            x,
                            a,
                            last,
                        },
                        other => other,
                    };
                    first_err.get_or_insert(attach(e));
                    break;
                }
            }
        }
    }
    if let Some(e) = first_err {
        return Err(e);
    }

    // (iii) regression of the post-driver values and per-path argmax
    let theta_model = fit(&opts.basis, control_grid, &xs, d, &regs, &y_samples).map_err(attach)?;
    let per_path: Vec<(u32, f64)> = {
        let theta = &theta_model;
        exec::map_indexed(n_paths, |path| {
            let mut fx = vec![0.0; theta.x_feature_len()];
            theta.x_features_into(bundle.state(path, k), &mut fx);
            let (idx, value) = theta.argmax_index_with(&fx, control_grid);
            (idx as u32, value)
        })
    };
    let mut controls = Vec::with_capacity(n_paths);
    let mut this_values = Vec::with_capacity(n_paths);
    for (idx, v) in per_path {
        controls.push(idx);
        this_values.push(v);
    }

    // (iv) optional Z surfaces: regress Y_{k+1} dW_k / dt componentwise
    let z_models = if opts.compute_z {
        let mut models = Vec::with_capacity(d);
        for comp in 0..d {
            let targets: Vec<f64> = (0..n_paths)
                .map(|path| next_values[path] * bundle.increment(path, k)[comp] / dt)
                .collect();
            models.push(fit(&opts.basis, control_grid, &xs, d, &regs, &targets).map_err(attach)?);
        }
        Some(models)
    } else {
        None
    };

    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for v in &this_values {
        lo = lo.min(*v);
        hi = hi.max(*v);
    }
    Ok(BackwardStepResult {
        diagnostics: StepDiagnostics {
            step: k,
            condition_estimate: continuation
                .condition_estimate
                .max(theta_model.condition_estimate),
            max_implicit_iters: implicit_iters.iter().copied().max().unwrap_or(0),
            min_value: lo,
            max_value: hi,
        },
        theta_model,
        z_models,
        this_values,
        controls,
    })
}

/// Full backward pass over a freshly simulated bundle.
pub fn run_scheme(
    p: &Problem,
    grid: &TimeGrid,
    im: &IntensityMeasure,
    n_paths: usize,
    seed: u64,
    opts: &SchemeOptions,
) -> Result<SchemeOutput> {
    let bundle = simulate_forward(p, grid, im, n_paths, seed)?;
    run_scheme_on_bundle(p, &bundle, opts)
}

/// Backward pass over an existing bundle (the same paths serve every step).
pub fn run_scheme_on_bundle(
    p: &Problem,
    bundle: &PathBundle,
    opts: &SchemeOptions,
) -> Result<SchemeOutput> {
    let n = bundle.grid.n_steps();
    let n_paths = bundle.n_paths;
    let control_grid = p.controls.grid();

    let mut values: Vec<f64> = exec::map_indexed(n_paths, |path| p.terminal(bundle.state(path, n)));
    for (path, v) in values.iter().enumerate() {
        if !v.is_finite() {
            return Err(Error::Simulation {
                path,
                step: n,
                detail: "non-finite terminal value".into(),
            });
        }
    }

    let mut theta_models: Vec<Option<RegressionModel>> = (0..n).map(|_| None).collect();
    let mut policy_states: Vec<Vec<f64>> = (0..n).map(|_| Vec::new()).collect();
    let mut policy_controls: Vec<Vec<u32>> = (0..n).map(|_| Vec::new()).collect();
    let mut z_models: Vec<Vec<RegressionModel>> = Vec::new();
    let mut diagnostics = Vec::with_capacity(n);

    for k in (0..n).rev() {
        let next_surface = if k + 1 < n {
            theta_models[k + 1].as_ref()
        } else {
            None
        };
        let step = backward_step(k, bundle, &values, next_surface, p, &control_grid, opts)?;
        values = step.this_values;
        let d = bundle.dim_d;
        let mut xs = vec![0.0; n_paths * d];
        for path in 0..n_paths {
            xs[path * d..(path + 1) * d].copy_from_slice(bundle.state(path, k));
        }
        policy_states[k] = xs;
        policy_controls[k] = step.controls;
        theta_models[k] = Some(step.theta_model);
        if let Some(z) = step.z_models {
            z_models.push(z);
        }
        diagnostics.push(step.diagnostics);
    }
    z_models.reverse();
    diagnostics.reverse();

    let theta_models: Vec<RegressionModel> = theta_models.into_iter().flatten().collect();
    let value0 = theta_models[0].argmax_index(&p.x0, &control_grid).1;

    Ok(SchemeOutput {
        grid: bundle.grid.clone(),
        control_grid,
        theta_models,
        policy_states,
        policy_controls,
        z_models: if opts.compute_z { Some(z_models) } else { None },
        value0,
        diagnostics,
        seed: bundle.seed,
        n_paths,
    })
}
