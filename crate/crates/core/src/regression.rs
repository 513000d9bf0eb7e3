//! Least-squares estimation of conditional expectations on polynomial bases
//! over R^d x A. The default basis fits one polynomial in x per control-grid
//! point, which is exact for linear-quadratic value functions; a joint
//! polynomial basis in (x, a) is available as well.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::ControlGrid;

/// Condition threshold beyond which the plain solve is replaced by a ridge
/// solve.
const CONDITION_LIMIT: f64 = 1e8;
/// Ridge penalty, relative to the mean squared target.
const RIDGE_SCALE: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BasisKind {
    /// Joint polynomial in (x, a): tensor product of monomials of total
    /// degree <= degree_x in x and <= degree_a in a.
    PolyXa,
    /// Independent polynomial in x of total degree <= degree_x for each
    /// control-grid point.
    PolyXPerA,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BasisSpec {
    pub kind: BasisKind,
    pub degree_x: usize,
    pub degree_a: usize,
}

impl BasisSpec {
    pub fn per_regime(degree_x: usize) -> Self {
        Self {
            kind: BasisKind::PolyXPerA,
            degree_x,
            degree_a: 0,
        }
    }

    pub fn joint(degree_x: usize, degree_a: usize) -> Self {
        Self {
            kind: BasisKind::PolyXa,
            degree_x,
            degree_a,
        }
    }
}

/// Multi-indices of total degree <= max_deg over `dim` variables, in graded
/// lexicographic order with the zero index (intercept) first.
fn multi_indices(dim: usize, max_deg: usize) -> Vec<Vec<usize>> {
    fn rec(dim: usize, budget: usize, current: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if dim == 0 {
            out.push(current.clone());
            return;
        }
        for e in 0..=budget {
            current.push(e);
            rec(dim - 1, budget - e, current, out);
            current.pop();
        }
    }
    let mut out = Vec::new();
    rec(dim, max_deg, &mut Vec::with_capacity(dim), &mut out);
    out.sort_by_key(|idx| (idx.iter().sum::<usize>(), idx.clone()));
    out
}

/// Per-coordinate affine normalization fitted from the sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Scaling {
    center: Vec<f64>,
    halfwidth: Vec<f64>,
    /// Coordinates with zero spread in the training sample.
    degenerate: Vec<bool>,
}

impl Scaling {
    fn fit(samples: &[f64], dim: usize) -> Self {
        let n = if dim == 0 { 0 } else { samples.len() / dim };
        let mut lo = vec![f64::INFINITY; dim];
        let mut hi = vec![f64::NEG_INFINITY; dim];
        for i in 0..n {
            for j in 0..dim {
                let v = samples[i * dim + j];
                lo[j] = lo[j].min(v);
                hi[j] = hi[j].max(v);
            }
        }
        let center: Vec<f64> = lo.iter().zip(&hi).map(|(l, h)| 0.5 * (l + h)).collect();
        let degenerate: Vec<bool> = lo
            .iter()
            .zip(&hi)
            .map(|(l, h)| 0.5 * (h - l) <= 1e-300)
            .collect();
        let halfwidth: Vec<f64> = lo
            .iter()
            .zip(&hi)
            .map(|(l, h)| {
                let w = 0.5 * (h - l);
                if w > 1e-300 {
                    w
                } else {
                    1.0
                }
            })
            .collect();
        Self {
            center,
            halfwidth,
            degenerate,
        }
    }

    fn all_degenerate(&self) -> bool {
        !self.degenerate.is_empty() && self.degenerate.iter().all(|&d| d)
    }

    fn apply(&self, raw: &[f64], out: &mut [f64]) {
        for j in 0..raw.len() {
            out[j] = (raw[j] - self.center[j]) / self.halfwidth[j];
        }
    }
}

fn eval_monomials(scaled: &[f64], indices: &[Vec<usize>], out: &mut [f64]) {
    for (slot, idx) in out.iter_mut().zip(indices) {
        let mut v = 1.0;
        for (coord, &e) in scaled.iter().zip(idx) {
            for _ in 0..e {
                v *= coord;
            }
        }
        *slot = v;
    }
}

#[derive(Debug, Clone)]
enum ModelRepr {
    Joint {
        coeffs: Vec<f64>,
    },
    PerSlice {
        grid: ControlGrid,
        coeffs: Vec<Vec<f64>>,
        counts: Vec<usize>,
    },
}

/// Fitted regression surface over (x, a).
#[derive(Debug, Clone)]
pub struct RegressionModel {
    pub spec: BasisSpec,
    dim_d: usize,
    dim_q: usize,
    scaling_x: Scaling,
    scaling_a: Scaling,
    x_indices: Vec<Vec<usize>>,
    a_indices: Vec<Vec<usize>>,
    repr: ModelRepr,
    /// Empirical range of the fitted targets; predictions are clamped to it,
    /// since a conditional expectation lies within the range of the variable.
    /// This keeps polynomial tails from feeding the backward recursion.
    target_range: (f64, f64),
    pub condition_estimate: f64,
    pub sample_size: usize,
}

/// Least-squares solve via SVD; falls back to a ridge solve when the design
/// is poorly conditioned or rank deficient.
fn solve_ls(design: DMatrix<f64>, targets: DVector<f64>) -> (Vec<f64>, f64) {
    let svd = design.svd(true, true);
    let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let smin = svd
        .singular_values
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min);
    let cond = if smin > 0.0 { smax / smin } else { f64::INFINITY };
    let u = svd.u.as_ref().expect("svd with u");
    let v_t = svd.v_t.as_ref().expect("svd with v_t");
    let uty = u.transpose() * &targets;
    let solved = if cond <= CONDITION_LIMIT {
        let mut scaled = uty;
        for (i, s) in svd.singular_values.iter().enumerate() {
            scaled[i] /= s;
        }
        v_t.transpose() * scaled
    } else {
        let n = targets.len() as f64;
        let lambda = RIDGE_SCALE * targets.iter().map(|y| y * y).sum::<f64>() / n.max(1.0);
        let mut scaled = uty;
        for (i, s) in svd.singular_values.iter().enumerate() {
            let denom = s * s + lambda;
            scaled[i] = if denom > 0.0 { scaled[i] * s / denom } else { 0.0 };
        }
        v_t.transpose() * scaled
    };
    (solved.iter().cloned().collect(), cond)
}

/// Fit the regression surface. `xs` is flat n x d, `regimes` flat n x q,
/// one target per sample.
pub fn fit(
    spec: &BasisSpec,
    control_grid: &ControlGrid,
    xs: &[f64],
    dim_d: usize,
    regimes: &[f64],
    targets: &[f64],
) -> Result<RegressionModel> {
    let dim_q = control_grid.dim_q();
    let n = targets.len();
    if n == 0 || xs.len() != n * dim_d || regimes.len() != n * dim_q {
        return Err(Error::Regression("sample arrays have mismatched sizes".into()));
    }
    for (i, y) in targets.iter().enumerate() {
        if !y.is_finite() {
            return Err(Error::Regression(format!("non-finite target at sample {i}")));
        }
    }
    if xs.iter().any(|v| !v.is_finite()) || regimes.iter().any(|v| !v.is_finite()) {
        return Err(Error::Regression("non-finite feature value".into()));
    }

    let target_range = targets
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &y| {
            (lo.min(y), hi.max(y))
        });
    let x_indices = multi_indices(dim_d, spec.degree_x);
    let a_indices = match spec.kind {
        BasisKind::PolyXa => multi_indices(dim_q, spec.degree_a),
        BasisKind::PolyXPerA => vec![vec![0; dim_q]],
    };
    let scaling_x = Scaling::fit(xs, dim_d);
    let scaling_a = Scaling::fit(regimes, dim_q);

    let x_m = x_indices.len();
    match spec.kind {
        BasisKind::PolyXa => {
            let m = x_m * a_indices.len();
            if n < m {
                return Err(Error::Underdetermined {
                    samples: n,
                    basis: m,
                });
            }
            let mut design = DMatrix::zeros(n, m);
            let mut sx = vec![0.0; dim_d];
            let mut sa = vec![0.0; dim_q];
            let mut fx = vec![0.0; x_m];
            let mut fa = vec![0.0; a_indices.len()];
            for i in 0..n {
                scaling_x.apply(&xs[i * dim_d..(i + 1) * dim_d], &mut sx);
                scaling_a.apply(&regimes[i * dim_q..(i + 1) * dim_q], &mut sa);
                eval_monomials(&sx, &x_indices, &mut fx);
                eval_monomials(&sa, &a_indices, &mut fa);
                for (bi, xa) in fx.iter().enumerate() {
                    for (bj, aa) in fa.iter().enumerate() {
                        design[(i, bi * fa.len() + bj)] = xa * aa;
                    }
                }
            }
            let (coeffs, cond) = solve_ls(design, DVector::from_column_slice(targets));
            Ok(RegressionModel {
                spec: *spec,
                dim_d,
                dim_q,
                scaling_x,
                scaling_a,
                x_indices,
                a_indices,
                repr: ModelRepr::Joint { coeffs },
                target_range,
                condition_estimate: cond,
                sample_size: n,
            })
        }
        BasisKind::PolyXPerA => {
            if n < x_m {
                return Err(Error::Underdetermined {
                    samples: n,
                    basis: x_m,
                });
            }
            let n_slices = control_grid.len();
            let mut slice_rows: Vec<Vec<usize>> = vec![Vec::new(); n_slices];
            for i in 0..n {
                let a = &regimes[i * dim_q..(i + 1) * dim_q];
                match control_grid.index_of(a) {
                    Some(s) => slice_rows[s].push(i),
                    None => return Err(Error::RegimeOffGrid(a.to_vec())),
                }
            }
            let global_mean = targets.iter().sum::<f64>() / n as f64;
            let mut coeffs = Vec::with_capacity(n_slices);
            let mut counts = Vec::with_capacity(n_slices);
            let mut cond_max: f64 = 1.0;
            let mut sx = vec![0.0; dim_d];
            for rows in &slice_rows {
                counts.push(rows.len());
                if rows.is_empty() {
                    // no data: constant at the global mean, never argmaxed
                    let mut c = vec![0.0; x_m];
                    c[0] = global_mean;
                    coeffs.push(c);
                    continue;
                }
                if rows.len() < x_m {
                    // too thin for the full polynomial: constant at the
                    // slice mean
                    let mean = rows.iter().map(|&i| targets[i]).sum::<f64>() / rows.len() as f64;
                    let mut c = vec![0.0; x_m];
                    c[0] = mean;
                    coeffs.push(c);
                    continue;
                }
                let mut design = DMatrix::zeros(rows.len(), x_m);
                let mut y = DVector::zeros(rows.len());
                for (r, &i) in rows.iter().enumerate() {
                    scaling_x.apply(&xs[i * dim_d..(i + 1) * dim_d], &mut sx);
                    let mut feats = vec![0.0; x_m];
                    eval_monomials(&sx, &x_indices, &mut feats);
                    for (c, f) in feats.iter().enumerate() {
                        design[(r, c)] = *f;
                    }
                    y[r] = targets[i];
                }
                let (c, cond) = solve_ls(design, y);
                cond_max = cond_max.max(cond);
                coeffs.push(c);
            }
            Ok(RegressionModel {
                spec: *spec,
                dim_d,
                dim_q,
                scaling_x,
                scaling_a,
                x_indices,
                a_indices,
                repr: ModelRepr::PerSlice {
                    grid: control_grid.clone(),
                    coeffs,
                    counts,
                },
                target_range,
                condition_estimate: cond_max,
                sample_size: n,
            })
        }
    }
}

impl RegressionModel {
    pub fn basis_size(&self) -> usize {
        self.x_indices.len() * self.a_indices.len()
    }

    /// Number of training samples behind control-grid point `i`; only
    /// meaningful for the per-regime basis.
    pub fn slice_support(&self, i: usize) -> usize {
        match &self.repr {
            ModelRepr::PerSlice { counts, .. } => counts[i],
            ModelRepr::Joint { .. } => self.sample_size,
        }
    }

    fn clamp_target(&self, v: f64) -> f64 {
        v.clamp(self.target_range.0, self.target_range.1)
    }

    fn x_features(&self, x: &[f64], out: &mut [f64]) {
        let mut sx = vec![0.0; self.dim_d];
        self.scaling_x.apply(x, &mut sx);
        eval_monomials(&sx, &self.x_indices, out);
    }

    /// Deterministic evaluation of the fitted surface at (x, a).
    pub fn predict(&self, x: &[f64], a: &[f64]) -> Result<f64> {
        let mut fx = vec![0.0; self.x_indices.len()];
        self.x_features(x, &mut fx);
        match &self.repr {
            ModelRepr::Joint { coeffs } => {
                let mut sa = vec![0.0; self.dim_q];
                self.scaling_a.apply(a, &mut sa);
                let mut fa = vec![0.0; self.a_indices.len()];
                eval_monomials(&sa, &self.a_indices, &mut fa);
                let mut v = 0.0;
                for (bi, xf) in fx.iter().enumerate() {
                    for (bj, af) in fa.iter().enumerate() {
                        v += coeffs[bi * fa.len() + bj] * xf * af;
                    }
                }
                Ok(self.clamp_target(v))
            }
            ModelRepr::PerSlice { grid, coeffs, .. } => {
                let s = grid
                    .index_of(a)
                    .ok_or_else(|| Error::RegimeOffGrid(a.to_vec()))?;
                Ok(self.clamp_target(dot(&coeffs[s], &fx)))
            }
        }
    }

    /// Max over the control grid of the fitted surface at x, with the first
    /// maximizer. Control points with no training support are skipped unless
    /// none has support.
    pub fn argmax_index(&self, x: &[f64], grid: &ControlGrid) -> (usize, f64) {
        let mut fx = vec![0.0; self.x_indices.len()];
        self.x_features(x, &mut fx);
        self.argmax_index_with(&fx, grid)
    }

    /// As `argmax_index` but with precomputed x-features (hot path).
    pub(crate) fn argmax_index_with(&self, fx: &[f64], grid: &ControlGrid) -> (usize, f64) {
        match &self.repr {
            ModelRepr::PerSlice {
                grid: own,
                coeffs,
                counts,
            } => {
                debug_assert_eq!(own.len(), grid.len());
                let any_support = counts.iter().any(|&c| c > 0);
                let mut best = (0usize, f64::NEG_INFINITY);
                let mut found = false;
                for s in 0..coeffs.len() {
                    if any_support && counts[s] == 0 {
                        continue;
                    }
                    let v = self.clamp_target(dot(&coeffs[s], fx));
                    if !found || v > best.1 {
                        best = (s, v);
                        found = true;
                    }
                }
                best
            }
            ModelRepr::Joint { coeffs } => {
                let mut sa = vec![0.0; self.dim_q];
                let mut fa = vec![0.0; self.a_indices.len()];
                // a single observed regime carries no information in a; any
                // a-tilt of the fit is spurious, so stick to the data
                if self.scaling_a.all_degenerate() {
                    let s = nearest_grid_index(grid, &self.scaling_a.center);
                    self.scaling_a.apply(grid.point(s), &mut sa);
                    eval_monomials(&sa, &self.a_indices, &mut fa);
                    let mut v = 0.0;
                    for (bi, xf) in fx.iter().enumerate() {
                        for (bj, af) in fa.iter().enumerate() {
                            v += coeffs[bi * fa.len() + bj] * xf * af;
                        }
                    }
                    return (s, self.clamp_target(v));
                }
                let mut best = (0usize, f64::NEG_INFINITY);
                let mut found = false;
                for (s, a) in grid.iter().enumerate() {
                    self.scaling_a.apply(a, &mut sa);
                    eval_monomials(&sa, &self.a_indices, &mut fa);
                    let mut v = 0.0;
                    for (bi, xf) in fx.iter().enumerate() {
                        for (bj, af) in fa.iter().enumerate() {
                            v += coeffs[bi * fa.len() + bj] * xf * af;
                        }
                    }
                    let v = self.clamp_target(v);
                    if !found || v > best.1 {
                        best = (s, v);
                        found = true;
                    }
                }
                best
            }
        }
    }

    pub(crate) fn x_feature_len(&self) -> usize {
        self.x_indices.len()
    }

    pub(crate) fn x_features_into(&self, x: &[f64], out: &mut [f64]) {
        self.x_features(x, out);
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn nearest_grid_index(grid: &ControlGrid, a: &[f64]) -> usize {
    let mut best = (0usize, f64::INFINITY);
    for (s, pt) in grid.iter().enumerate() {
        let d: f64 = pt.iter().zip(a).map(|(p, v)| (p - v) * (p - v)).sum();
        if d < best.1 {
            best = (s, d);
        }
    }
    best.0
}

/// Max over the control grid of the fitted surface at x: the maximizing grid
/// point and the value, ties broken by grid order.
pub fn argmax_over_controls<'g>(
    model: &RegressionModel,
    x: &[f64],
    grid: &'g ControlGrid,
) -> (&'g [f64], f64) {
    let (idx, value) = model.argmax_index(x, grid);
    (grid.point(idx), value)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ControlSet;
    use approx::assert_relative_eq;

    fn grid_1d(lo: f64, hi: f64, m: usize) -> ControlGrid {
        ControlSet::interval(lo, hi, m).unwrap().grid()
    }

    fn lcg_samples(n: usize, seed: u64) -> Vec<f64> {
        let mut state = seed;
        (0..n)
            .map(|_| {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                (state >> 11) as f64 / (1u64 << 53) as f64 * 4.0 - 2.0
            })
            .collect()
    }

    #[test]
    fn multi_indices_cover_expected_degrees() {
        let idx = multi_indices(1, 2);
        assert_eq!(idx, vec![vec![0], vec![1], vec![2]]);
        let idx = multi_indices(2, 2);
        assert_eq!(idx.len(), 6); // 1, x1, x2, x1^2, x1x2, x2^2
        assert_eq!(idx[0], vec![0, 0]);
    }

    #[test]
    fn constant_targets_reproduced() {
        let grid = grid_1d(-1.0, 1.0, 3);
        let xs = lcg_samples(50, 1);
        let regs: Vec<f64> = (0..50).map(|i| grid.point(i % 3)[0]).collect();
        let targets = vec![4.25; 50];
        let spec = BasisSpec::per_regime(2);
        let model = fit(&spec, &grid, &xs, 1, &regs, &targets).unwrap();
        for i in 0..50 {
            let v = model.predict(&xs[i..i + 1], &regs[i..i + 1]).unwrap();
            assert_relative_eq!(v, 4.25, max_relative = 1e-10);
        }
    }

    #[test]
    fn linear_surface_recovered_exactly() {
        let grid = grid_1d(-1.0, 1.0, 5);
        let xs = lcg_samples(100, 2);
        let regs: Vec<f64> = (0..100).map(|i| grid.point(i % 5)[0]).collect();
        let targets: Vec<f64> = xs
            .iter()
            .zip(&regs)
            .map(|(x, a)| 2.0 + 3.0 * x - a)
            .collect();
        let spec = BasisSpec::joint(1, 1);
        let model = fit(&spec, &grid, &xs, 1, &regs, &targets).unwrap();
        for i in 0..100 {
            let v = model.predict(&xs[i..i + 1], &regs[i..i + 1]).unwrap();
            assert!((v - targets[i]).abs() <= 1e-8, "residual {}", v - targets[i]);
        }
        // evaluate off-sample from the recovered coefficients
        let v = model.predict(&[1.0], &[0.5]).unwrap();
        assert_relative_eq!(v, 4.5, epsilon = 1e-8);
    }

    #[test]
    fn matches_brute_force_normal_equations() {
        // independent oracle: solve (A^T A) c = A^T y by Gaussian elimination
        // on the raw (unscaled) monomials, then compare predictions
        let grid = grid_1d(-1.0, 1.0, 3);
        let xs = lcg_samples(50, 3);
        let regs: Vec<f64> = (0..50).map(|i| grid.point(i % 3)[0]).collect();
        let targets: Vec<f64> = xs
            .iter()
            .zip(&regs)
            .map(|(x, a)| 1.0 + 0.5 * x - 0.25 * x * x + 0.75 * a + 0.1 * x * a)
            .collect();
        let spec = BasisSpec::joint(2, 1);
        let model = fit(&spec, &grid, &xs, 1, &regs, &targets).unwrap();

        // brute-force basis: {1, x, x^2} x {1, a}
        let feats = |x: f64, a: f64| vec![1.0, a, x, x * a, x * x, x * x * a];
        let m = 6;
        let mut ata = vec![0.0; m * m];
        let mut aty = vec![0.0; m];
        for i in 0..50 {
            let f = feats(xs[i], regs[i]);
            for r in 0..m {
                aty[r] += f[r] * targets[i];
                for c in 0..m {
                    ata[r * m + c] += f[r] * f[c];
                }
            }
        }
        // gaussian elimination with partial pivoting
        let mut aug: Vec<Vec<f64>> = (0..m)
            .map(|r| {
                let mut row: Vec<f64> = ata[r * m..(r + 1) * m].to_vec();
                row.push(aty[r]);
                row
            })
            .collect();
        for col in 0..m {
            let piv = (col..m)
                .max_by(|&a, &b| aug[a][col].abs().partial_cmp(&aug[b][col].abs()).unwrap())
                .unwrap();
            aug.swap(col, piv);
            let p = aug[col][col];
            for r in 0..m {
                if r != col {
                    let factor = aug[r][col] / p;
                    for c in col..=m {
                        let v = aug[col][c];
                        aug[r][c] -= factor * v;
                    }
                }
            }
        }
        let coeffs: Vec<f64> = (0..m).map(|r| aug[r][m] / aug[r][r]).collect();

        for &(x, a) in &[(0.3, -1.0), (-1.2, 0.0), (0.9, 1.0)] {
            let oracle: f64 = feats(x, a).iter().zip(&coeffs).map(|(f, c)| f * c).sum();
            let got = model.predict(&[x], &[a]).unwrap();
            assert_relative_eq!(got, oracle, max_relative = 1e-6);
        }
    }

    #[test]
    fn underdetermined_rejected() {
        let grid = grid_1d(-1.0, 1.0, 3);
        let xs = vec![0.1, 0.2];
        let regs = vec![-1.0, 0.0];
        let targets = vec![1.0, 2.0];
        let spec = BasisSpec::per_regime(2);
        match fit(&spec, &grid, &xs, 1, &regs, &targets) {
            Err(Error::Underdetermined { samples: 2, basis: 3 }) => {}
            other => panic!("expected underdetermined, got {other:?}"),
        }
    }

    #[test]
    fn non_finite_target_names_sample() {
        let grid = grid_1d(-1.0, 1.0, 3);
        let xs = lcg_samples(10, 4);
        let regs = vec![0.0; 10];
        let mut targets = vec![1.0; 10];
        targets[7] = f64::NAN;
        let spec = BasisSpec::per_regime(1);
        let err = fit(&spec, &grid, &xs, 1, &regs, &targets).unwrap_err();
        assert!(err.to_string().contains("sample 7"));
    }

    #[test]
    fn per_slice_prediction_uses_only_its_slice() {
        let grid = grid_1d(-1.0, 1.0, 3);
        let n = 90;
        let xs = lcg_samples(n, 5);
        let regs: Vec<f64> = (0..n).map(|i| grid.point(i % 3)[0]).collect();
        // slice-dependent targets
        let targets: Vec<f64> = xs
            .iter()
            .zip(&regs)
            .map(|(x, a)| if *a == 0.0 { 2.0 * x } else { -5.0 })
            .collect();
        let spec = BasisSpec::per_regime(1);
        let model = fit(&spec, &grid, &xs, 1, &regs, &targets).unwrap();
        let v = model.predict(&[0.5], &[0.0]).unwrap();
        assert_relative_eq!(v, 1.0, epsilon = 1e-8);
        assert!(model.predict(&[0.5], &[0.37]).is_err());
    }

    #[test]
    fn zero_targets_predict_zero() {
        let grid = grid_1d(-1.0, 1.0, 3);
        let xs = lcg_samples(30, 6);
        let regs: Vec<f64> = (0..30).map(|i| grid.point(i % 3)[0]).collect();
        let targets = vec![0.0; 30];
        let model = fit(&BasisSpec::per_regime(2), &grid, &xs, 1, &regs, &targets).unwrap();
        assert_eq!(model.predict(&[0.3], &[1.0]).unwrap(), 0.0);
    }

    #[test]
    fn argmax_picks_grid_maximum() {
        // surface -(a - 0.3)^2 on {-1, 0, 0.5, 1}
        let grid = ControlGrid::from_points(1, vec![-1.0, 0.0, 0.5, 1.0]).unwrap();
        let n = 80;
        let xs = lcg_samples(n, 7);
        let regs: Vec<f64> = (0..n).map(|i| grid.point(i % 4)[0]).collect();
        let targets: Vec<f64> = regs.iter().map(|a| -(a - 0.3) * (a - 0.3)).collect();
        let model = fit(&BasisSpec::per_regime(0), &grid, &xs, 1, &regs, &targets).unwrap();
        let (a_star, value) = argmax_over_controls(&model, &[0.0], &grid);
        assert_eq!(a_star, &[0.5]);
        assert_relative_eq!(value, -0.04, epsilon = 1e-10);
    }

    #[test]
    fn argmax_tie_breaks_to_first_point() {
        let grid = grid_1d(-1.0, 1.0, 4);
        let n = 40;
        let xs = lcg_samples(n, 8);
        let regs: Vec<f64> = (0..n).map(|i| grid.point(i % 4)[0]).collect();
        let targets = vec![3.5; n];
        let model = fit(&BasisSpec::per_regime(0), &grid, &xs, 1, &regs, &targets).unwrap();
        let (a_star, value) = argmax_over_controls(&model, &[0.0], &grid);
        assert_eq!(a_star, grid.point(0));
        assert_relative_eq!(value, 3.5, epsilon = 1e-10);
    }

    #[test]
    fn argmax_on_linear_surface() {
        // surface 2 + 3x - a: maximized at a = -1, value 3 + 3x
        let grid = grid_1d(-1.0, 1.0, 5);
        let n = 100;
        let xs = lcg_samples(n, 9);
        let regs: Vec<f64> = (0..n).map(|i| grid.point(i % 5)[0]).collect();
        let targets: Vec<f64> = xs.iter().zip(&regs).map(|(x, a)| 2.0 + 3.0 * x - a).collect();
        let model = fit(&BasisSpec::joint(1, 1), &grid, &xs, 1, &regs, &targets).unwrap();
        let (a_star, value) = argmax_over_controls(&model, &[0.0], &grid);
        assert_eq!(a_star, &[-1.0]);
        assert_relative_eq!(value, 3.0, epsilon = 1e-8);
    }

    #[test]
    fn joint_argmax_with_single_observed_regime_sticks_to_it() {
        // all training regimes at 0.5: argmax must not wander off the data
        let grid = grid_1d(-1.0, 1.0, 5);
        let xs = lcg_samples(60, 10);
        let regs = vec![0.5; 60];
        let targets: Vec<f64> = xs.iter().map(|x| 1.0 + x).collect();
        let model = fit(&BasisSpec::joint(2, 2), &grid, &xs, 1, &regs, &targets).unwrap();
        let (a_star, value) = argmax_over_controls(&model, &[0.25], &grid);
        assert_eq!(a_star, &[0.5]);
        assert_relative_eq!(value, 1.25, max_relative = 1e-6);
    }

    #[test]
    fn ridge_handles_degenerate_design() {
        // all x identical: the quadratic columns vanish after scaling
        let grid = grid_1d(-1.0, 1.0, 1);
        let xs = vec![2.0; 50];
        let regs = vec![-1.0; 50];
        let targets = vec![7.0; 50];
        let model = fit(&BasisSpec::per_regime(2), &grid, &xs, 1, &regs, &targets).unwrap();
        let v = model.predict(&[2.0], &[-1.0]).unwrap();
        assert_relative_eq!(v, 7.0, max_relative = 1e-6);
    }
}
