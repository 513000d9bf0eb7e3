//! Feedback policies extracted from the backward scheme, and out-of-sample
//! estimation of their gain.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::exec;
use crate::model::{ControlGrid, ControlSet, Problem, TimeGrid};
use crate::regression::RegressionModel;
use crate::rng::{path_stream, StreamTag};
use crate::scheme::SchemeOutput;

/// A deterministic per-step control rule.
pub trait Policy: Sync {
    fn dim_q(&self) -> usize;
    /// Write the control applied at step `k` in state `x`.
    fn control_into(&self, k: usize, x: &[f64], out: &mut [f64]);
}

/// Same control at every step and state.
#[derive(Debug, Clone)]
pub struct ConstantPolicy {
    point: Vec<f64>,
}

impl ConstantPolicy {
    pub fn new(point: Vec<f64>, controls: &ControlSet) -> Result<Self> {
        if !controls.contains(&point) {
            return Err(Error::Model(format!(
                "constant policy point {point:?} outside the control box"
            )));
        }
        Ok(Self { point })
    }
}

impl Policy for ConstantPolicy {
    fn dim_q(&self) -> usize {
        self.point.len()
    }

    fn control_into(&self, _k: usize, _x: &[f64], out: &mut [f64]) {
        out.copy_from_slice(&self.point);
    }
}

/// Argmax-of-the-regression-surface feedback rule, one surface per step.
/// Controls are always control-grid points.
#[derive(Debug, Clone)]
pub struct FeedbackPolicy {
    grid: TimeGrid,
    control_grid: ControlGrid,
    theta_models: Vec<RegressionModel>,
    training_seed: u64,
}

impl FeedbackPolicy {
    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn control_grid(&self) -> &ControlGrid {
        &self.control_grid
    }

    pub fn training_seed(&self) -> u64 {
        self.training_seed
    }

    /// The step-k control at state x, as a control-grid index.
    pub fn control_index(&self, k: usize, x: &[f64]) -> usize {
        self.theta_models[k].argmax_index(x, &self.control_grid).0
    }
}

impl Policy for FeedbackPolicy {
    fn dim_q(&self) -> usize {
        self.control_grid.dim_q()
    }

    fn control_into(&self, k: usize, x: &[f64], out: &mut [f64]) {
        let idx = self.control_index(k, x);
        out.copy_from_slice(self.control_grid.point(idx));
    }
}

/// Extract the feedback rule from a scheme output.
pub fn extract_policy(out: &SchemeOutput) -> FeedbackPolicy {
    FeedbackPolicy {
        grid: out.grid.clone(),
        control_grid: out.control_grid.clone(),
        theta_models: out.theta_models.clone(),
        training_seed: out.seed,
    }
}

/// Monte-Carlo estimate of a policy's discrete gain.
#[derive(Debug, Clone, Copy)]
pub struct GainEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub n_paths: usize,
    pub seed: u64,
}

/// Estimate J(policy) = E[sum f(X_k, a_k) dt + g(X_n)] by fresh forward
/// simulation. The evaluation seed must differ from the policy's training
/// seed; in-sample evaluation is optimistically biased.
pub fn evaluate_policy(
    p: &Problem,
    policy: &FeedbackPolicy,
    n_eval_paths: usize,
    seed: u64,
) -> Result<GainEstimate> {
    if p.f_depends_on_y {
        return Err(Error::Model(
            "policy gain defined only for drivers f(x, a) independent of y".into(),
        ));
    }
    if seed == policy.training_seed() {
        return Err(Error::Model(
            "evaluation seed equals the training seed; use fresh randomness".into(),
        ));
    }
    if n_eval_paths == 0 {
        return Err(Error::Model("n_eval_paths must be positive".into()));
    }
    let grid = policy.grid().clone();
    grid.check_compatible(p)?;
    let gains = policy_gains(p, policy, &grid, n_eval_paths, seed);
    let mean = gains.iter().sum::<f64>() / n_eval_paths as f64;
    let var = if n_eval_paths > 1 {
        gains.iter().map(|g| (g - mean) * (g - mean)).sum::<f64>() / (n_eval_paths - 1) as f64
    } else {
        0.0
    };
    Ok(GainEstimate {
        mean,
        stderr: (var / n_eval_paths as f64).sqrt(),
        n_paths: n_eval_paths,
        seed,
    })
}

/// Per-path discrete gains under a policy, streamed (no bundle is stored).
/// Uses the same per-path streams as `simulate_controlled`, so the two agree
/// path by path.
pub(crate) fn policy_gains<P: Policy>(
    p: &Problem,
    policy: &P,
    grid: &TimeGrid,
    n_paths: usize,
    seed: u64,
) -> Vec<f64> {
    let d = p.dim_d;
    let q = policy.dim_q();
    let n = grid.n_steps();
    exec::map_indexed(n_paths, |path| {
        let mut bm_rng = path_stream(seed, path as u64, StreamTag::Brownian);
        let mut x = p.x0.clone();
        let mut x_next = vec![0.0; d];
        let mut a = vec![0.0; q];
        let mut dw = vec![0.0; d];
        let mut drift = vec![0.0; d];
        let mut diffusion = vec![0.0; d * d];
        let mut gain = 0.0;
        for k in 0..n {
            let dt = grid.dt(k);
            let sqrt_dt = dt.sqrt();
            for j in 0..d {
                let z: f64 = bm_rng.sample(StandardNormal);
                dw[j] = sqrt_dt * z;
            }
            policy.control_into(k, &x, &mut a);
            gain += p.driver(&x, &a, 0.0) * dt;
            p.drift_into(&x, &a, &mut drift);
            p.diffusion_into(&x, &a, &mut diffusion);
            for i in 0..d {
                let mut v = x[i] + drift[i] * dt;
                for j in 0..d {
                    v += diffusion[i * d + j] * dw[j];
                }
                x_next[i] = v;
            }
            std::mem::swap(&mut x, &mut x_next);
        }
        gain + p.terminal(&x)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{self, GbmParams, IntensityMeasure, LqParams};
    use crate::regression::BasisSpec;
    use crate::scheme::{run_scheme, SchemeOptions};
    use std::sync::Arc;

    #[test]
    fn constant_policy_rejects_point_outside_box() {
        let cs = ControlSet::interval(-1.0, 1.0, 3).unwrap();
        assert!(ConstantPolicy::new(vec![2.0], &cs).is_err());
        assert!(ConstantPolicy::new(vec![0.5], &cs).is_ok());
    }

    #[test]
    fn trivial_gains_have_zero_stderr() {
        // f = 0, g = c: mean = c, stderr = 0
        let c = 4.0;
        let p = crate::model::Problem {
            dim_d: 1,
            drift: Arc::new(|_x, _a, out| out[0] = 0.0),
            diffusion: Arc::new(|_x, _a, out| out[0] = 0.0),
            driver: Arc::new(|_x, _a, _y| 0.0),
            terminal: Arc::new(move |_x| c),
            horizon: 1.0,
            x0: vec![0.0],
            i0: vec![0.0],
            lip_coeff: 1.0,
            lip_driver_y: 0.0,
            f_depends_on_y: false,
            control_free: true,
            controls: ControlSet::singleton(vec![0.0]).unwrap(),
        }
        .validate()
        .unwrap();
        let grid = TimeGrid::uniform(4, 1.0).unwrap();
        let im = IntensityMeasure::uniform(1.0, 1).unwrap();
        let out = run_scheme(&p, &grid, &im, 64, 1, &SchemeOptions::default()).unwrap();
        let policy = extract_policy(&out);
        let est = evaluate_policy(&p, &policy, 500, 2).unwrap();
        assert_eq!(est.mean, c);
        assert_eq!(est.stderr, 0.0);
    }

    #[test]
    fn unit_driver_gain_is_horizon() {
        let p = crate::model::Problem {
            dim_d: 1,
            drift: Arc::new(|_x, _a, out| out[0] = 0.0),
            diffusion: Arc::new(|_x, _a, out| out[0] = 1.0),
            driver: Arc::new(|_x, _a, _y| 1.0),
            terminal: Arc::new(|_x| 0.0),
            horizon: 1.0,
            x0: vec![0.0],
            i0: vec![0.0],
            lip_coeff: 1.0,
            lip_driver_y: 0.0,
            f_depends_on_y: false,
            control_free: true,
            controls: ControlSet::singleton(vec![0.0]).unwrap(),
        }
        .validate()
        .unwrap();
        let grid = TimeGrid::uniform(8, 1.0).unwrap();
        let im = IntensityMeasure::uniform(1.0, 1).unwrap();
        let out = run_scheme(&p, &grid, &im, 64, 1, &SchemeOptions::default()).unwrap();
        let policy = extract_policy(&out);
        let est = evaluate_policy(&p, &policy, 300, 9).unwrap();
        assert!((est.mean - 1.0).abs() <= 1e-12);
        assert_eq!(est.stderr, 0.0);
    }

    #[test]
    fn in_sample_seed_rejected() {
        let p = model::nocontrol_gbm(&GbmParams::default()).unwrap();
        let grid = TimeGrid::uniform(4, 1.0).unwrap();
        let im = IntensityMeasure::uniform(1.0, 1).unwrap();
        let out = run_scheme(&p, &grid, &im, 200, 5, &SchemeOptions::default()).unwrap();
        let policy = extract_policy(&out);
        assert!(evaluate_policy(&p, &policy, 100, 5).is_err());
        assert!(evaluate_policy(&p, &policy, 100, 6).is_ok());
    }

    #[test]
    fn y_dependent_driver_rejected() {
        let p = crate::model::Problem {
            dim_d: 1,
            drift: Arc::new(|_x, _a, out| out[0] = 0.0),
            diffusion: Arc::new(|_x, _a, out| out[0] = 1.0),
            driver: Arc::new(|_x, _a, y| 0.1 * y),
            terminal: Arc::new(|_x| 0.0),
            horizon: 1.0,
            x0: vec![0.0],
            i0: vec![0.0],
            lip_coeff: 1.0,
            lip_driver_y: 0.1,
            f_depends_on_y: true,
            control_free: true,
            controls: ControlSet::singleton(vec![0.0]).unwrap(),
        }
        .validate()
        .unwrap();
        let grid = TimeGrid::uniform(4, 1.0).unwrap();
        let im = IntensityMeasure::uniform(1.0, 1).unwrap();
        let out = run_scheme(&p, &grid, &im, 200, 5, &SchemeOptions::default()).unwrap();
        let policy = extract_policy(&out);
        match evaluate_policy(&p, &policy, 100, 6) {
            Err(Error::Model(msg)) => assert!(msg.contains("independent of y")),
            other => panic!("expected rejection, got {other:?}"),
        }
    }

    #[test]
    fn evaluation_is_deterministic() {
        let p = model::lq1d(&LqParams::default(), 5).unwrap();
        let grid = TimeGrid::uniform(5, 1.0).unwrap();
        let im = IntensityMeasure::uniform(1.0, 5).unwrap();
        let opts = SchemeOptions::new(BasisSpec::per_regime(2));
        let out = run_scheme(&p, &grid, &im, 2_000, 5, &opts).unwrap();
        let policy = extract_policy(&out);
        let a = evaluate_policy(&p, &policy, 1_000, 6).unwrap();
        let b = evaluate_policy(&p, &policy, 1_000, 6).unwrap();
        assert_eq!(a.mean, b.mean);
        assert_eq!(a.stderr, b.stderr);
    }

    #[test]
    fn policy_controls_are_grid_points() {
        let p = model::lq1d(&LqParams::default(), 5).unwrap();
        let grid = TimeGrid::uniform(5, 1.0).unwrap();
        let im = IntensityMeasure::uniform(1.0, 5).unwrap();
        let out = run_scheme(&p, &grid, &im, 2_000, 5, &SchemeOptions::default()).unwrap();
        let policy = extract_policy(&out);
        let cg = policy.control_grid().clone();
        let mut a = vec![0.0];
        for &x in &[-2.0, -0.5, 0.0, 1.0, 3.0] {
            for k in 0..grid.n_steps() {
                policy.control_into(k, &[x], &mut a);
                assert!(cg.index_of(&a).is_some());
            }
        }
    }
}
