//! Independent references for the time-zero value: an explicit monotone
//! finite-difference solver for the one-dimensional HJB equation, the Riccati
//! closed form for the linear-quadratic benchmark, and the Black-Scholes
//! value for the uncertain-volatility call.

use crate::error::{Error, Result};
use crate::exec;
use crate::model::{LqParams, Problem};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundaryCondition {
    /// Hold the terminal payoff value at the ends.
    DirichletPayoff,
    /// Extrapolate linearly from the two interior neighbours.
    LinearExtrapolation,
}

#[derive(Debug, Clone)]
pub struct FdConfig {
    pub x_lo: f64,
    pub x_hi: f64,
    pub n_space: usize,
    /// Lower bound on time steps; raised automatically to meet the explicit
    /// stability bound dt <= dx^2 / (max sigma^2 + dx max |b|).
    pub n_time: usize,
    pub boundary: BoundaryCondition,
}

impl FdConfig {
    /// Domain spanning five diffusive standard deviations plus the drift
    /// range around x0.
    pub fn auto(p: &Problem, n_space: usize) -> Result<Self> {
        if p.dim_d != 1 {
            return Err(Error::Oracle("finite differences only for d = 1".into()));
        }
        let grid = p.controls.grid();
        let x0 = p.x0[0];
        let mut sig_max = 0.0f64;
        let mut b_max = 0.0f64;
        let mut s = [0.0];
        let mut b = [0.0];
        for a in grid.iter() {
            p.diffusion_into(&[x0], a, &mut s);
            p.drift_into(&[x0], a, &mut b);
            sig_max = sig_max.max(s[0].abs());
            b_max = b_max.max(b[0].abs());
        }
        let width = 5.0 * sig_max * p.horizon.sqrt() + b_max * p.horizon + 1.0;
        Ok(Self {
            x_lo: x0 - width,
            x_hi: x0 + width,
            n_space,
            n_time: 1,
            boundary: BoundaryCondition::DirichletPayoff,
        })
    }
}

/// The t = 0 value slice on the space grid, with linear interpolation.
#[derive(Debug, Clone)]
pub struct FdSolution {
    pub xs: Vec<f64>,
    pub values: Vec<f64>,
}

impl FdSolution {
    pub fn value_at(&self, x: f64) -> f64 {
        let n = self.xs.len();
        if x <= self.xs[0] {
            return self.values[0];
        }
        if x >= self.xs[n - 1] {
            return self.values[n - 1];
        }
        let i = match self
            .xs
            .binary_search_by(|v| v.partial_cmp(&x).unwrap())
        {
            Ok(i) => return self.values[i],
            Err(i) => i,
        };
        let (x0, x1) = (self.xs[i - 1], self.xs[i]);
        let w = (x - x0) / (x1 - x0);
        self.values[i - 1] * (1.0 - w) + self.values[i] * w
    }
}

const MAX_TIME_STEPS: usize = 10_000_000;

/// Explicit monotone scheme for the 1-d HJB equation, marching backward from
/// the terminal payoff. The drift term uses central differencing where the
/// diffusion dominates (sigma^2 >= dx |b|, second order and still monotone)
/// and one-sided upwind differencing elsewhere.
pub fn solve_hjb_fd(p: &Problem, cfg: &FdConfig) -> Result<FdSolution> {
    if p.dim_d != 1 {
        return Err(Error::Oracle("finite differences only for d = 1".into()));
    }
    if cfg.n_space < 3 {
        return Err(Error::Oracle("n_space must be at least 3".into()));
    }
    let x0 = p.x0[0];
    if !(cfg.x_lo < x0 && x0 < cfg.x_hi) {
        return Err(Error::Oracle(format!(
            "x0 = {x0} must lie inside the domain [{}, {}]",
            cfg.x_lo, cfg.x_hi
        )));
    }
    let m = cfg.n_space;
    let dx = (cfg.x_hi - cfg.x_lo) / m as f64;
    let xs: Vec<f64> = (0..=m).map(|i| cfg.x_lo + i as f64 * dx).collect();
    let grid = p.controls.grid();

    // precompute coefficients per (node, control)
    let n_controls = grid.len();
    let mut drift = vec![0.0; (m + 1) * n_controls];
    let mut diff2 = vec![0.0; (m + 1) * n_controls];
    let mut b = [0.0];
    let mut s = [0.0];
    let mut sig2_max = 0.0f64;
    let mut b_abs_max = 0.0f64;
    for (i, &x) in xs.iter().enumerate() {
        for (j, a) in grid.iter().enumerate() {
            p.drift_into(&[x], a, &mut b);
            p.diffusion_into(&[x], a, &mut s);
            if !b[0].is_finite() || !s[0].is_finite() {
                return Err(Error::Oracle(format!(
                    "coefficients not finite at x = {x}, a = {a:?}"
                )));
            }
            drift[i * n_controls + j] = b[0];
            diff2[i * n_controls + j] = s[0] * s[0];
            sig2_max = sig2_max.max(s[0] * s[0]);
            b_abs_max = b_abs_max.max(b[0].abs());
        }
    }

    // explicit stability bound
    let dt_bound = dx * dx / (sig2_max + dx * b_abs_max + 1e-300);
    let mut n_time = cfg.n_time.max((p.horizon / dt_bound).ceil() as usize).max(1);
    if n_time > MAX_TIME_STEPS {
        return Err(Error::Oracle(format!(
            "domain too stiff: {n_time} time steps needed for stability"
        )));
    }
    // keep uniform steps
    let dt = p.horizon / n_time as f64;
    if dt > dt_bound {
        n_time += 1;
    }
    let dt = p.horizon / n_time as f64;

    let mut v: Vec<f64> = xs.iter().map(|&x| p.terminal(&[x])).collect();
    let mut v_next = v.clone();

    for _ in 0..n_time {
        {
            let v_ref = &v;
            let interior = &mut v_next[1..m];
            exec::fill_indexed(interior, |off| {
                let i = off + 1;
                let vi = v_ref[i];
                let mut best = f64::NEG_INFINITY;
                for (j, a) in grid.iter().enumerate() {
                    let bb = drift[i * n_controls + j];
                    let ss = diff2[i * n_controls + j];
                    let second = 0.5 * ss * (v_ref[i + 1] - 2.0 * vi + v_ref[i - 1]) / (dx * dx);
                    let first = if ss >= dx * bb.abs() {
                        bb * (v_ref[i + 1] - v_ref[i - 1]) / (2.0 * dx)
                    } else if bb >= 0.0 {
                        bb * (v_ref[i + 1] - vi) / dx
                    } else {
                        bb * (vi - v_ref[i - 1]) / dx
                    };
                    let cand = first + second + p.driver(&[xs[i]], a, vi);
                    if cand > best {
                        best = cand;
                    }
                }
                vi + dt * best
            });
        }
        match cfg.boundary {
            BoundaryCondition::DirichletPayoff => {
                v_next[0] = v[0];
                v_next[m] = v[m];
            }
            BoundaryCondition::LinearExtrapolation => {
                v_next[0] = 2.0 * v_next[1] - v_next[2];
                v_next[m] = 2.0 * v_next[m - 1] - v_next[m - 2];
            }
        }
        std::mem::swap(&mut v, &mut v_next);
    }

    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::Oracle("finite-difference solution diverged".into()));
    }
    Ok(FdSolution { xs, values: v })
}

/// Value -P(0) x^2 - r(0) of the linear-quadratic benchmark, from a
/// fixed-step fourth-order integration of the Riccati system
/// P' = -2 beta P + P^2 / c_a - c_x, P(T) = c_g; r' = -s^2 P, r(T) = 0.
pub fn riccati_value(lq: &LqParams, x: f64) -> Result<f64> {
    let (p0, r0) = riccati_integrate(lq)?;
    Ok(-p0 * x * x - r0)
}

/// Feedback gain P(0) / c_a: the unconstrained optimizer is a*(0, x) =
/// -P(0) x / c_a.
pub fn riccati_feedback_gain(lq: &LqParams) -> Result<f64> {
    let (p0, _) = riccati_integrate(lq)?;
    Ok(p0 / lq.c_a)
}

/// P and r at an interior time t.
pub fn riccati_at(lq: &LqParams, t: f64) -> Result<(f64, f64)> {
    riccati_integrate_to(lq, t)
}

fn riccati_integrate(lq: &LqParams) -> Result<(f64, f64)> {
    riccati_integrate_to(lq, 0.0)
}

fn riccati_integrate_to(lq: &LqParams, t_stop: f64) -> Result<(f64, f64)> {
    if !(lq.c_a > 0.0) {
        return Err(Error::Oracle("riccati needs c_a > 0".into()));
    }
    let n = 10_000usize;
    let h = lq.horizon / n as f64;
    // integrate backward in time from T to t_stop
    let dp = |p: f64| -(-2.0 * lq.beta * p + p * p / lq.c_a - lq.c_x);
    let mut p = lq.c_g;
    let mut r = 0.0;
    let mut t = lq.horizon;
    while t > t_stop + 0.5 * h {
        let k1 = dp(p);
        let k2 = dp(p + 0.5 * h * k1);
        let k3 = dp(p + 0.5 * h * k2);
        let k4 = dp(p + h * k3);
        let p_mid = p + 0.5 * h * k1; // for Simpson weights on r
        let p_new = p + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        r += lq.s * lq.s * h / 6.0 * (p + 4.0 * p_mid + p_new);
        p = p_new;
        t -= h;
        if p.abs() > 1e8 {
            return Err(Error::Oracle("riccati solution blew up".into()));
        }
    }
    Ok((p, r))
}

/// Standard normal CDF via the Abramowitz-Stegun rational approximation
/// (absolute error below 1e-7).
pub fn normal_cdf(x: f64) -> f64 {
    if x < 0.0 {
        return 1.0 - normal_cdf(-x);
    }
    let t = 1.0 / (1.0 + 0.2316419 * x);
    let poly = t
        * (0.319381530
            + t * (-0.356563782 + t * (1.781477937 + t * (-1.821255978 + t * 1.330274429))));
    let pdf = (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
    1.0 - pdf * poly
}

/// Black-Scholes-Barenblatt superreplication value of a call under uncertain
/// volatility in [sigma_lo, sigma_hi]: for a convex payoff this is the
/// Black-Scholes price at the upper volatility (zero rate).
pub fn bsb_reference(x0: f64, strike: f64, sigma_lo: f64, sigma_hi: f64, horizon: f64) -> Result<f64> {
    if !(x0 > 0.0) || !(strike > 0.0) || !(sigma_lo > 0.0) || sigma_hi < sigma_lo || !(horizon > 0.0)
    {
        return Err(Error::Oracle(
            "bsb_reference needs positive inputs with sigma_lo <= sigma_hi".into(),
        ));
    }
    let vol = sigma_hi * horizon.sqrt();
    if vol < 1e-12 {
        return Ok((x0 - strike).max(0.0));
    }
    let d1 = ((x0 / strike).ln() + 0.5 * vol * vol) / vol;
    let d2 = d1 - vol;
    Ok(x0 * normal_cdf(d1) - strike * normal_cdf(d2))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{self, BsbParams, GbmParams};
    use approx::assert_relative_eq;
    use std::sync::Arc;

    fn heat_problem(s: f64) -> Problem {
        Problem {
            dim_d: 1,
            drift: Arc::new(|_x, _a, out| out[0] = 0.0),
            diffusion: Arc::new(move |_x, _a, out| out[0] = s),
            driver: Arc::new(|_x, _a, _y| 0.0),
            terminal: Arc::new(|x| x[0] * x[0]),
            horizon: 1.0,
            x0: vec![1.0],
            i0: vec![0.0],
            lip_coeff: 1.0,
            lip_driver_y: 0.0,
            f_depends_on_y: false,
            control_free: true,
            controls: crate::model::ControlSet::singleton(vec![0.0]).unwrap(),
        }
        .validate()
        .unwrap()
    }

    #[test]
    fn heat_equation_reference() {
        // E[(x + s W_T)^2] = x^2 + s^2 T
        let p = heat_problem(0.3);
        let cfg = FdConfig {
            x_lo: -5.0,
            x_hi: 7.0,
            n_space: 400,
            n_time: 1,
            boundary: BoundaryCondition::DirichletPayoff,
        };
        let sol = solve_hjb_fd(&p, &cfg).unwrap();
        assert!((sol.value_at(1.0) - 1.09).abs() <= 1e-3);
    }

    #[test]
    fn constants_preserved() {
        // f = 1, g = 0 gives v(0, x) = T exactly
        let p = Problem {
            dim_d: 1,
            drift: Arc::new(|x, _a, out| out[0] = 0.2 * x[0]),
            diffusion: Arc::new(|_x, _a, out| out[0] = 0.4),
            driver: Arc::new(|_x, _a, _y| 1.0),
            terminal: Arc::new(|_x| 0.0),
            horizon: 1.0,
            x0: vec![0.5],
            i0: vec![0.0],
            lip_coeff: 1.0,
            lip_driver_y: 0.0,
            f_depends_on_y: false,
            control_free: true,
            controls: crate::model::ControlSet::singleton(vec![0.0]).unwrap(),
        }
        .validate()
        .unwrap();
        let mut cfg = FdConfig::auto(&p, 200).unwrap();
        // a payoff-clamped boundary would hold v = 0 at the ends; linear
        // extrapolation preserves constants exactly
        cfg.boundary = BoundaryCondition::LinearExtrapolation;
        let sol = solve_hjb_fd(&p, &cfg).unwrap();
        for &x in &[-0.5, 0.0, 0.5, 1.0] {
            assert_relative_eq!(sol.value_at(x), 1.0, epsilon = 1e-10);
        }
    }

    #[test]
    fn monotone_in_payoff() {
        let p_small = heat_problem(0.3);
        let mut p_big = p_small.clone();
        p_big.terminal = Arc::new(|x| x[0] * x[0] + 0.5);
        let cfg = FdConfig {
            x_lo: -5.0,
            x_hi: 7.0,
            n_space: 200,
            n_time: 1,
            boundary: BoundaryCondition::DirichletPayoff,
        };
        let a = solve_hjb_fd(&p_small, &cfg).unwrap();
        let b = solve_hjb_fd(&p_big, &cfg).unwrap();
        for (va, vb) in a.values.iter().zip(&b.values) {
            assert!(vb >= va);
        }
    }

    #[test]
    fn riccati_trivial_cases() {
        let lq = LqParams {
            c_x: 0.0,
            c_g: 0.0,
            ..LqParams::default()
        };
        assert_relative_eq!(riccati_value(&lq, 2.0).unwrap(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn riccati_separable_closed_form() {
        // beta = 0, c_a = 1, c_x = 0, c_g = 1, s = 0: P(t) = 1 / (1 + T - t)
        let lq = LqParams {
            beta: 0.0,
            s: 0.0,
            c_x: 0.0,
            c_a: 1.0,
            c_g: 1.0,
            a_max: 3.0,
            x0: 1.0,
            horizon: 1.0,
        };
        assert_relative_eq!(riccati_value(&lq, 1.0).unwrap(), -0.5, epsilon = 1e-8);
        // s = 1 adds -r(0) = -ln 2
        let lq = LqParams { s: 1.0, ..lq };
        assert_relative_eq!(
            riccati_value(&lq, 1.0).unwrap(),
            -0.5 - std::f64::consts::LN_2,
            epsilon = 1e-7
        );
    }

    #[test]
    fn fd_matches_riccati() {
        let lq = LqParams::default();
        let p = model::lq1d(&lq, 201).unwrap();
        let cfg = FdConfig::auto(&p, 500).unwrap();
        let sol = solve_hjb_fd(&p, &cfg).unwrap();
        let fd = sol.value_at(lq.x0);
        let rc = riccati_value(&lq, lq.x0).unwrap();
        assert!(
            (fd - rc).abs() <= 1e-3,
            "fd = {fd}, riccati = {rc}, diff = {}",
            fd - rc
        );
    }

    #[test]
    fn fd_dominates_frozen_controls() {
        let lq = LqParams::default();
        let p = model::lq1d(&lq, 31).unwrap();
        let cfg = FdConfig::auto(&p, 300).unwrap();
        let sup = solve_hjb_fd(&p, &cfg).unwrap();
        for frozen in [-1.0, 0.0, 0.6] {
            let mut single = p.clone();
            single.controls = crate::model::ControlSet::singleton(vec![frozen]).unwrap();
            single.i0 = vec![frozen];
            let sol = solve_hjb_fd(&single, &cfg).unwrap();
            assert!(
                sup.value_at(lq.x0) >= sol.value_at(lq.x0) - 1e-9,
                "frozen {frozen} beats sup"
            );
        }
    }

    #[test]
    fn normal_cdf_known_values() {
        assert_relative_eq!(normal_cdf(0.0), 0.5, epsilon = 1e-9);
        assert_relative_eq!(normal_cdf(1.0), 0.8413447, epsilon = 1e-6);
        assert_relative_eq!(normal_cdf(-1.96), 0.0249979, epsilon = 1e-6);
    }

    #[test]
    fn bsb_degenerate_vol_is_intrinsic() {
        let v = bsb_reference(110.0, 100.0, 1e-9, 1e-8, 1.0).unwrap();
        assert!((v - 10.0).abs() <= 1e-6);
    }

    #[test]
    fn bsb_at_the_money() {
        let v = bsb_reference(100.0, 100.0, 0.1, 0.2, 1.0).unwrap();
        let expect = 100.0 * (normal_cdf(0.1) - normal_cdf(-0.1));
        assert_relative_eq!(v, expect, epsilon = 1e-9);
    }

    #[test]
    fn bsb_above_intrinsic() {
        let mut state = 12345u64;
        let mut next = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1);
            (state >> 11) as f64 / (1u64 << 53) as f64
        };
        for _ in 0..10 {
            let x0 = 50.0 + 100.0 * next();
            let k = 50.0 + 100.0 * next();
            let lo = 0.05 + 0.1 * next();
            let hi = lo + 0.3 * next();
            let t = 0.25 + 2.0 * next();
            let v = bsb_reference(x0, k, lo, hi, t).unwrap();
            assert!(v >= (x0 - k).max(0.0) - 1e-9);
        }
    }

    #[test]
    fn bsb_rejects_bad_params() {
        assert!(bsb_reference(-1.0, 100.0, 0.1, 0.2, 1.0).is_err());
        assert!(bsb_reference(100.0, 100.0, 0.3, 0.2, 1.0).is_err());
    }

    #[test]
    fn gbm_problem_feeds_fd() {
        // martingale: v(0, x0) = x0 for g(x) = x
        let p = model::nocontrol_gbm(&GbmParams::default()).unwrap();
        let cfg = FdConfig::auto(&p, 300).unwrap();
        let sol = solve_hjb_fd(&p, &cfg).unwrap();
        assert!((sol.value_at(1.0) - 1.0).abs() <= 2e-3);
    }

    #[test]
    fn bsb_problem_fd_close_to_closed_form() {
        let bp = BsbParams::default();
        let p = model::bsb_call(&bp, 11).unwrap();
        let cfg = FdConfig::auto(&p, 400).unwrap();
        let sol = solve_hjb_fd(&p, &cfg).unwrap();
        let closed = bsb_reference(bp.x0, bp.strike, bp.sigma_lo, bp.sigma_hi, bp.horizon).unwrap();
        assert!(
            (sol.value_at(bp.x0) - closed).abs() / closed <= 0.02,
            "fd = {}, closed = {closed}",
            sol.value_at(bp.x0)
        );
    }
}
