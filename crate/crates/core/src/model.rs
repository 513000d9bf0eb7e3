//! Problem data: coefficient functions, the compact control box and its
//! discretization, the jump intensity over it, and the time partition.

use std::sync::Arc;

use crate::error::{Error, Result};

pub type DriftFn = Arc<dyn Fn(&[f64], &[f64], &mut [f64]) + Send + Sync>;
/// Writes the d-by-d diffusion matrix in row-major order.
pub type DiffusionFn = Arc<dyn Fn(&[f64], &[f64], &mut [f64]) + Send + Sync>;
pub type DriverFn = Arc<dyn Fn(&[f64], &[f64], f64) -> f64 + Send + Sync>;
pub type TerminalFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// Compact control box in R^q together with the resolution of its
/// tensor-product discretization.
#[derive(Debug, Clone)]
pub struct ControlSet {
    dim_q: usize,
    lower: Vec<f64>,
    upper: Vec<f64>,
    grid_points_per_dim: usize,
}

impl ControlSet {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>, grid_points_per_dim: usize) -> Result<Self> {
        if lower.is_empty() || lower.len() != upper.len() {
            return Err(Error::Model(
                "control box needs matching, nonempty bounds".into(),
            ));
        }
        if grid_points_per_dim == 0 {
            return Err(Error::Model("grid_points_per_dim must be positive".into()));
        }
        for (lo, hi) in lower.iter().zip(&upper) {
            if !lo.is_finite() || !hi.is_finite() || lo > hi {
                return Err(Error::Model(format!(
                    "control bounds must be finite with lower <= upper, got [{lo}, {hi}]"
                )));
            }
        }
        Ok(Self {
            dim_q: lower.len(),
            lower,
            upper,
            grid_points_per_dim,
        })
    }

    /// One-dimensional interval [lo, hi].
    pub fn interval(lo: f64, hi: f64, points: usize) -> Result<Self> {
        Self::new(vec![lo], vec![hi], points)
    }

    /// Degenerate single-point set, for problems whose coefficients ignore the
    /// control.
    pub fn singleton(point: Vec<f64>) -> Result<Self> {
        Self::new(point.clone(), point, 1)
    }

    pub fn dim_q(&self) -> usize {
        self.dim_q
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn contains(&self, a: &[f64]) -> bool {
        a.len() == self.dim_q
            && a.iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(v, (lo, hi))| *v >= lo - 1e-12 && *v <= hi + 1e-12)
    }

    /// Tensor grid over the box, endpoints included, lexicographic by axis.
    /// Degenerate axes collapse to a single value.
    pub fn grid(&self) -> ControlGrid {
        let mut axes: Vec<Vec<f64>> = Vec::with_capacity(self.dim_q);
        for (lo, hi) in self.lower.iter().zip(&self.upper) {
            if hi - lo <= 0.0 || self.grid_points_per_dim == 1 {
                axes.push(vec![*lo]);
            } else {
                let m = self.grid_points_per_dim;
                axes.push(
                    (0..m)
                        .map(|i| lo + (hi - lo) * i as f64 / (m - 1) as f64)
                        .collect(),
                );
            }
        }
        let total: usize = axes.iter().map(Vec::len).product();
        let mut points = Vec::with_capacity(total * self.dim_q);
        let mut idx = vec![0usize; self.dim_q];
        loop {
            for (axis, &i) in axes.iter().zip(idx.iter()) {
                points.push(axis[i]);
            }
            // lexicographic increment, last axis fastest
            let mut axis = self.dim_q;
            loop {
                if axis == 0 {
                    return ControlGrid {
                        dim_q: self.dim_q,
                        points,
                    };
                }
                axis -= 1;
                idx[axis] += 1;
                if idx[axis] < axes[axis].len() {
                    break;
                }
                idx[axis] = 0;
            }
        }
    }
}

/// Finite discretization A_h of the control box, in a fixed deterministic
/// order.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlGrid {
    dim_q: usize,
    points: Vec<f64>,
}

impl ControlGrid {
    /// Grid from explicit points (flat, `dim_q` entries per point).
    pub fn from_points(dim_q: usize, points: Vec<f64>) -> Result<Self> {
        if dim_q == 0 || points.is_empty() || points.len() % dim_q != 0 {
            return Err(Error::Model("control grid points have bad shape".into()));
        }
        Ok(Self { dim_q, points })
    }

    pub fn dim_q(&self) -> usize {
        self.dim_q
    }

    pub fn len(&self) -> usize {
        self.points.len() / self.dim_q
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim_q..(i + 1) * self.dim_q]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> {
        self.points.chunks_exact(self.dim_q)
    }

    /// Index of the grid point equal to `a` (componentwise within 1e-9).
    pub fn index_of(&self, a: &[f64]) -> Option<usize> {
        self.iter()
            .position(|p| p.iter().zip(a).all(|(x, y)| (x - y).abs() <= 1e-9))
    }
}

/// Finite intensity measure over the control grid: total mass and the mark
/// law used for jump marks.
#[derive(Debug, Clone)]
pub struct IntensityMeasure {
    total_mass: f64,
    weights: Vec<f64>,
    cumulative: Vec<f64>,
}

impl IntensityMeasure {
    pub fn new(total_mass: f64, weights: Vec<f64>) -> Result<Self> {
        if !(total_mass > 0.0) || !total_mass.is_finite() {
            return Err(Error::Model(format!(
                "intensity total mass must be positive and finite, got {total_mass}"
            )));
        }
        if weights.is_empty() || weights.iter().any(|w| !(*w > 0.0) || !w.is_finite()) {
            return Err(Error::Model(
                "mark law weights must all be strictly positive".into(),
            ));
        }
        let sum: f64 = weights.iter().sum();
        let weights: Vec<f64> = weights.iter().map(|w| w / sum).collect();
        let mut cumulative = Vec::with_capacity(weights.len());
        let mut acc = 0.0;
        for w in &weights {
            acc += w;
            cumulative.push(acc);
        }
        *cumulative.last_mut().unwrap() = 1.0;
        Ok(Self {
            total_mass,
            weights,
            cumulative,
        })
    }

    /// Uniform mark law over `n_points` grid points.
    pub fn uniform(total_mass: f64, n_points: usize) -> Result<Self> {
        Self::new(total_mass, vec![1.0; n_points.max(1)])
    }

    pub fn total_mass(&self) -> f64 {
        self.total_mass
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Mark index for a uniform draw u in [0, 1).
    pub fn sample_index(&self, u: f64) -> usize {
        match self
            .cumulative
            .binary_search_by(|c| c.partial_cmp(&u).unwrap())
        {
            Ok(i) => (i + 1).min(self.weights.len() - 1),
            Err(i) => i.min(self.weights.len() - 1),
        }
    }
}

/// Coefficient data of the control problem, with the control box it is
/// defined over.
#[derive(Clone)]
pub struct Problem {
    pub dim_d: usize,
    pub drift: DriftFn,
    pub diffusion: DiffusionFn,
    pub driver: DriverFn,
    pub terminal: TerminalFn,
    pub horizon: f64,
    pub x0: Vec<f64>,
    pub i0: Vec<f64>,
    /// Lipschitz bound of (b, sigma) in (x, a).
    pub lip_coeff: f64,
    /// Lipschitz bound of the driver in y.
    pub lip_driver_y: f64,
    pub f_depends_on_y: bool,
    pub control_free: bool,
    pub controls: ControlSet,
}

impl std::fmt::Debug for Problem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Problem")
            .field("dim_d", &self.dim_d)
            .field("horizon", &self.horizon)
            .field("x0", &self.x0)
            .field("i0", &self.i0)
            .field("control_free", &self.control_free)
            .finish_non_exhaustive()
    }
}

impl Problem {
    /// Validates dimensions, spot-checks coefficient finiteness, and checks
    /// the y-independence flag at two y values.
    pub fn validate(self) -> Result<Self> {
        if self.dim_d == 0 {
            return Err(Error::Model("dim_d must be positive".into()));
        }
        if !(self.horizon > 0.0) {
            return Err(Error::Model("horizon must be positive".into()));
        }
        if self.x0.len() != self.dim_d {
            return Err(Error::Model("x0 dimension mismatch".into()));
        }
        if !self.controls.contains(&self.i0) {
            return Err(Error::Model(format!(
                "initial regime {:?} outside the control box",
                self.i0
            )));
        }
        let grid = self.controls.grid();
        let mut b = vec![0.0; self.dim_d];
        let mut s = vec![0.0; self.dim_d * self.dim_d];
        for a in grid.iter().take(8).chain(std::iter::once(&self.i0[..])) {
            (self.drift)(&self.x0, a, &mut b);
            (self.diffusion)(&self.x0, a, &mut s);
            let f0 = (self.driver)(&self.x0, a, 0.0);
            let g0 = (self.terminal)(&self.x0);
            if b.iter().chain(s.iter()).any(|v| !v.is_finite())
                || !f0.is_finite()
                || !g0.is_finite()
            {
                return Err(Error::Model(format!(
                    "coefficient evaluation not finite at x0 = {:?}, a = {a:?}",
                    self.x0
                )));
            }
            if !self.f_depends_on_y {
                let f1 = (self.driver)(&self.x0, a, 1.5);
                if (f1 - f0).abs() > 1e-12 * (1.0 + f0.abs()) {
                    return Err(Error::Model(
                        "driver marked y-independent but varies with y".into(),
                    ));
                }
            }
        }
        Ok(self)
    }

    pub fn drift_into(&self, x: &[f64], a: &[f64], out: &mut [f64]) {
        (self.drift)(x, a, out);
    }

    pub fn diffusion_into(&self, x: &[f64], a: &[f64], out: &mut [f64]) {
        (self.diffusion)(x, a, out);
    }

    pub fn driver(&self, x: &[f64], a: &[f64], y: f64) -> f64 {
        (self.driver)(x, a, y)
    }

    pub fn terminal(&self, x: &[f64]) -> f64 {
        (self.terminal)(x)
    }
}

/// Time partition 0 = t_0 < ... < t_n = T.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    times: Vec<f64>,
}

impl TimeGrid {
    /// Uniform grid with t_k = k T / n.
    pub fn uniform(n: usize, horizon: f64) -> Result<Self> {
        if n == 0 {
            return Err(Error::Model("time grid needs at least one step".into()));
        }
        if !(horizon > 0.0) {
            return Err(Error::Model("horizon must be positive".into()));
        }
        let mut times: Vec<f64> = (0..=n).map(|k| k as f64 * horizon / n as f64).collect();
        times[0] = 0.0;
        times[n] = horizon;
        Ok(Self { times })
    }

    pub fn from_times(times: Vec<f64>) -> Result<Self> {
        if times.len() < 2 || times[0] != 0.0 {
            return Err(Error::Model("grid must start at 0 with >= 1 step".into()));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Model("grid times must strictly increase".into()));
        }
        let grid = Self { times };
        let horizon = grid.horizon();
        if grid.n_steps() as f64 * grid.modulus() > 2.0 * horizon {
            return Err(Error::Model(
                "grid too irregular: n * modulus exceeds 2T".into(),
            ));
        }
        Ok(grid)
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn n_steps(&self) -> usize {
        self.times.len() - 1
    }

    pub fn horizon(&self) -> f64 {
        *self.times.last().unwrap()
    }

    pub fn dt(&self, k: usize) -> f64 {
        self.times[k + 1] - self.times[k]
    }

    pub fn modulus(&self) -> f64 {
        self.times
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold(0.0, f64::max)
    }

    /// The implicit step of the backward scheme is a contraction only when
    /// L2 |pi| < 1; enforced whenever a grid is paired with a problem.
    pub fn check_compatible(&self, p: &Problem) -> Result<()> {
        if (self.horizon() - p.horizon).abs() > 1e-12 * p.horizon.max(1.0) {
            return Err(Error::Model(format!(
                "grid horizon {} does not match problem horizon {}",
                self.horizon(),
                p.horizon
            )));
        }
        if p.lip_driver_y * self.modulus() >= 1.0 {
            return Err(Error::Model(format!(
                "L2 * |pi| = {} >= 1; refine the grid",
                p.lip_driver_y * self.modulus()
            )));
        }
        Ok(())
    }
}

/// Linear-quadratic benchmark in d = 1: dX = (beta X + a) dt + s dW,
/// running reward -(c_x x^2 + c_a a^2), terminal reward -c_g x^2.
#[derive(Debug, Clone, Copy)]
pub struct LqParams {
    pub beta: f64,
    pub s: f64,
    pub c_x: f64,
    pub c_a: f64,
    pub c_g: f64,
    pub a_max: f64,
    pub x0: f64,
    pub horizon: f64,
}

impl Default for LqParams {
    fn default() -> Self {
        Self {
            beta: 0.0,
            s: 0.5,
            c_x: 0.1,
            c_a: 1.0,
            c_g: 1.0,
            a_max: 3.0,
            x0: 1.0,
            horizon: 1.0,
        }
    }
}

/// Uncertain-volatility call benchmark: dX = a X dW with a in
/// [sigma_lo, sigma_hi], payoff (x - strike)^+.
#[derive(Debug, Clone, Copy)]
pub struct BsbParams {
    pub x0: f64,
    pub strike: f64,
    pub sigma_lo: f64,
    pub sigma_hi: f64,
    pub horizon: f64,
}

impl Default for BsbParams {
    fn default() -> Self {
        Self {
            x0: 100.0,
            strike: 100.0,
            sigma_lo: 0.1,
            sigma_hi: 0.2,
            horizon: 1.0,
        }
    }
}

/// Control-free geometric Brownian motion with f = 0 and g(x) = x.
#[derive(Debug, Clone, Copy)]
pub struct GbmParams {
    pub mu: f64,
    pub sigma: f64,
    pub x0: f64,
    pub horizon: f64,
}

impl Default for GbmParams {
    fn default() -> Self {
        Self {
            mu: 0.0,
            sigma: 0.2,
            x0: 1.0,
            horizon: 1.0,
        }
    }
}

pub fn lq1d(params: &LqParams, control_points: usize) -> Result<Problem> {
    let LqParams {
        beta,
        s,
        c_x,
        c_a,
        c_g,
        a_max,
        x0,
        horizon,
    } = *params;
    if !(c_a > 0.0) || c_x < 0.0 || c_g < 0.0 || !(a_max > 0.0) {
        return Err(Error::Model("lq1d needs c_a > 0, c_x, c_g >= 0, a_max > 0".into()));
    }
    let controls = ControlSet::interval(-a_max, a_max, control_points)?;
    Problem {
        dim_d: 1,
        drift: Arc::new(move |x, a, out| out[0] = beta * x[0] + a[0]),
        diffusion: Arc::new(move |_x, _a, out| out[0] = s),
        driver: Arc::new(move |x, a, _y| -(c_x * x[0] * x[0] + c_a * a[0] * a[0])),
        terminal: Arc::new(move |x| -c_g * x[0] * x[0]),
        horizon,
        x0: vec![x0],
        i0: vec![0.0],
        lip_coeff: beta.abs().max(1.0),
        lip_driver_y: 0.0,
        f_depends_on_y: false,
        control_free: false,
        controls,
    }
    .validate()
}

pub fn bsb_call(params: &BsbParams, control_points: usize) -> Result<Problem> {
    let BsbParams {
        x0,
        strike,
        sigma_lo,
        sigma_hi,
        horizon,
    } = *params;
    if !(x0 > 0.0) || !(strike > 0.0) || !(sigma_lo > 0.0) || sigma_hi < sigma_lo {
        return Err(Error::Model(
            "bsb_call needs positive spot/strike and 0 < sigma_lo <= sigma_hi".into(),
        ));
    }
    let controls = ControlSet::interval(sigma_lo, sigma_hi, control_points)?;
    let grid = controls.grid();
    // Initial regime: the grid point closest to the midpoint vol.
    let mid = 0.5 * (sigma_lo + sigma_hi);
    let i0 = grid
        .iter()
        .min_by(|a, b| {
            (a[0] - mid)
                .abs()
                .partial_cmp(&(b[0] - mid).abs())
                .unwrap()
        })
        .unwrap()[0];
    Problem {
        dim_d: 1,
        drift: Arc::new(|_x, _a, out| out[0] = 0.0),
        diffusion: Arc::new(move |x, a, out| out[0] = a[0] * x[0]),
        driver: Arc::new(|_x, _a, _y| 0.0),
        terminal: Arc::new(move |x| (x[0] - strike).max(0.0)),
        horizon,
        x0: vec![x0],
        i0: vec![i0],
        lip_coeff: sigma_hi.max(1.0),
        lip_driver_y: 0.0,
        f_depends_on_y: false,
        control_free: false,
        controls,
    }
    .validate()
}

pub fn nocontrol_gbm(params: &GbmParams) -> Result<Problem> {
    let GbmParams {
        mu,
        sigma,
        x0,
        horizon,
    } = *params;
    let controls = ControlSet::singleton(vec![0.0])?;
    Problem {
        dim_d: 1,
        drift: Arc::new(move |x, _a, out| out[0] = mu * x[0]),
        diffusion: Arc::new(move |x, _a, out| out[0] = sigma * x[0]),
        driver: Arc::new(|_x, _a, _y| 0.0),
        terminal: Arc::new(|x| x[0]),
        horizon,
        x0: vec![x0],
        i0: vec![0.0],
        lip_coeff: mu.abs().max(sigma.abs()).max(1.0),
        lip_driver_y: 0.0,
        f_depends_on_y: false,
        control_free: true,
        controls,
    }
    .validate()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_grid_small_cases() {
        let g = TimeGrid::uniform(1, 1.0).unwrap();
        assert_eq!(g.times(), &[0.0, 1.0]);
        assert_eq!(g.modulus(), 1.0);

        let g = TimeGrid::uniform(4, 1.0).unwrap();
        assert_eq!(g.times(), &[0.0, 0.25, 0.5, 0.75, 1.0]);
        assert_eq!(g.modulus(), 0.25);

        let g = TimeGrid::uniform(10, 2.0).unwrap();
        assert!((g.times()[3] - 0.6).abs() < 1e-12);
    }

    #[test]
    fn uniform_grid_rejects_bad_input() {
        assert!(TimeGrid::uniform(0, 1.0).is_err());
        assert!(TimeGrid::uniform(4, 0.0).is_err());
        assert!(TimeGrid::uniform(4, -1.0).is_err());
    }

    #[test]
    fn control_grid_1d() {
        let cs = ControlSet::interval(-1.0, 1.0, 3).unwrap();
        let g = cs.grid();
        assert_eq!(g.len(), 3);
        assert_eq!(g.point(0), &[-1.0]);
        assert_eq!(g.point(1), &[0.0]);
        assert_eq!(g.point(2), &[1.0]);
    }

    #[test]
    fn control_grid_2d_lexicographic() {
        let cs = ControlSet::new(vec![0.0, 0.0], vec![1.0, 1.0], 2).unwrap();
        let g = cs.grid();
        assert_eq!(g.len(), 4);
        assert_eq!(g.point(0), &[0.0, 0.0]);
        assert_eq!(g.point(1), &[0.0, 1.0]);
        assert_eq!(g.point(2), &[1.0, 0.0]);
        assert_eq!(g.point(3), &[1.0, 1.0]);
    }

    #[test]
    fn control_grid_degenerate_interval() {
        let cs = ControlSet::interval(0.7, 0.7, 5).unwrap();
        let g = cs.grid();
        assert_eq!(g.len(), 1);
        assert_eq!(g.point(0), &[0.7]);
    }

    #[test]
    fn control_grid_deterministic() {
        let cs = ControlSet::new(vec![-1.0, 0.0], vec![2.0, 3.0], 4).unwrap();
        assert_eq!(cs.grid(), cs.grid());
    }

    #[test]
    fn intensity_rejects_bad_mass() {
        assert!(IntensityMeasure::uniform(0.0, 3).is_err());
        assert!(IntensityMeasure::uniform(f64::INFINITY, 3).is_err());
        assert!(IntensityMeasure::new(1.0, vec![1.0, 0.0]).is_err());
    }

    #[test]
    fn intensity_sampling_covers_support() {
        let im = IntensityMeasure::new(1.0, vec![1.0, 2.0, 1.0]).unwrap();
        assert_eq!(im.sample_index(0.0), 0);
        assert_eq!(im.sample_index(0.3), 1);
        assert_eq!(im.sample_index(0.9), 2);
    }

    #[test]
    fn control_free_coefficients_ignore_control() {
        let p = nocontrol_gbm(&GbmParams::default()).unwrap();
        let grid = p.controls.grid();
        let mut out1 = [0.0];
        let mut out2 = [0.0];
        let mut rng_x: f64 = 0.37;
        for _ in 0..10 {
            rng_x = (rng_x * 7919.0).fract() * 4.0 - 2.0;
            for a in grid.iter() {
                p.drift_into(&[rng_x], a, &mut out1);
                p.drift_into(&[rng_x], &[0.0], &mut out2);
                assert_eq!(out1, out2);
            }
        }
    }

    #[test]
    fn grid_problem_compatibility() {
        let p = lq1d(&LqParams::default(), 5).unwrap();
        let g = TimeGrid::uniform(10, 1.0).unwrap();
        assert!(g.check_compatible(&p).is_ok());
        let wrong = TimeGrid::uniform(10, 2.0).unwrap();
        assert!(wrong.check_compatible(&p).is_err());
    }

    #[test]
    fn bsb_initial_regime_is_grid_point() {
        let p = bsb_call(&BsbParams::default(), 21).unwrap();
        let grid = p.controls.grid();
        assert!(grid.index_of(&p.i0).is_some());
    }
}
