//! Euler simulation of the controlled delayed Volterra equation, its first
//! variation and the reward functional.

use rayon::prelude::*;
use thiserror::Error;

use crate::brownian::BrownianEnsemble;
use crate::grid::TimeGrid;
use crate::paths::{mean_stderr, PathMatrix};
use crate::problem::{ControlPath, Model, ProblemError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ForwardError {
    #[error(transparent)]
    Problem(#[from] ProblemError),
    #[error("ensemble has {got} increments per path, grid has {expected} steps")]
    EnsembleLength { expected: usize, got: usize },
    #[error("state diverged on path {path} at index {index}")]
    Divergence { path: usize, index: usize },
    #[error("perturbed control leaves the control set at index {index} ({value}); shrink eps")]
    Projection { index: usize, value: f64 },
    #[error("variation forms disagree on path {path} at index {index}: Volterra {volterra}, differential {differential}")]
    Consistency {
        path: usize,
        index: usize,
        volterra: f64,
        differential: f64,
    },
    #[error("needle [{t}, {t}+{h}] must satisfy 0 < h <= T - t")]
    Needle { t: f64, h: f64 },
}

/// Per-path trajectories on indices `-k..=N`.
#[derive(Debug, Clone, PartialEq)]
pub struct StatePaths {
    k: usize,
    steps: usize,
    data: PathMatrix,
}

/// First variation `Y` on indices `-k..=N`; zero on the initial segment.
pub type VariationPaths = StatePaths;

impl StatePaths {
    pub fn paths(&self) -> usize {
        self.data.rows()
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// Value at grid index `i` (negative indices hold the initial segment).
    pub fn at(&self, m: usize, i: isize) -> f64 {
        self.data.get(m, (i + self.k as isize) as usize)
    }

    /// `X(t_j - delta)` on path `m`.
    pub fn delayed(&self, m: usize, j: usize) -> f64 {
        self.data.get(m, j)
    }

    pub fn terminal(&self, m: usize) -> f64 {
        self.data.get(m, self.steps + self.k)
    }

    /// Raw row of path `m`: entry `c` holds index `c - k`.
    pub fn row(&self, m: usize) -> &[f64] {
        self.data.row(m)
    }

    pub fn at_index(&self, i: isize) -> Vec<f64> {
        self.data.column((i + self.k as isize) as usize)
    }
}

fn check_inputs(model: &Model, u: &ControlPath, w: &BrownianEnsemble) -> Result<(), ForwardError> {
    model.check_control(u)?;
    if w.steps() != model.steps() {
        return Err(ForwardError::EnsembleLength {
            expected: model.steps(),
            got: w.steps(),
        });
    }
    Ok(())
}

/// Fills `row` (length `N + k + 1`) with one Euler path. Returns the first
/// non-finite index on divergence.
pub(crate) fn simulate_row(model: &Model, u: &[f64], incs: &[f64], row: &mut [f64]) -> Result<(), usize> {
    let grid = &model.grid;
    let spec = &model.spec;
    let k = model.k();
    let n = grid.steps();
    let dt = grid.dt();
    for c in 0..=k {
        row[c] = spec.x0.value(grid.time(c as isize - k as isize));
    }
    for i in 1..=n {
        let ti = grid.t(i);
        let mut acc = spec.x0.value(ti);
        for j in 0..i {
            let tj = grid.t(j);
            let x = row[j];
            acc += spec.b.value(ti, tj, x, u[j]) * dt + spec.sigma.value(ti, tj, x, u[j]) * incs[j];
        }
        if !acc.is_finite() {
            return Err(i);
        }
        row[i + k] = acc;
    }
    Ok(())
}

/// Re-simulates a path whose increments differ from `base_incs` only at
/// indices `>= from`, reusing the unaffected part of the base path.
pub(crate) fn resimulate_row(
    model: &Model,
    u: &[f64],
    base_incs: &[f64],
    base_row: &[f64],
    incs: &[f64],
    from: usize,
    row: &mut [f64],
) -> Result<(), usize> {
    let grid = &model.grid;
    let spec = &model.spec;
    let k = model.k();
    let n = grid.steps();
    let dt = grid.dt();
    let b_x = spec.b.structure().x_dependent;
    let s_x = spec.sigma.structure().x_dependent;
    row[..=from + k].copy_from_slice(&base_row[..=from + k]);
    for i in from + 1..=n {
        let ti = grid.t(i);
        let mut acc = base_row[i + k];
        for j in from..i {
            let x_new = row[j];
            let x_old = base_row[j];
            let x_changed = x_new != x_old;
            let dw_changed = incs[j] != base_incs[j];
            if !(x_changed || dw_changed) {
                continue;
            }
            let tj = grid.t(j);
            if x_changed && b_x {
                acc += (spec.b.value(ti, tj, x_new, u[j]) - spec.b.value(ti, tj, x_old, u[j])) * dt;
            }
            if (x_changed && s_x) || dw_changed {
                acc += spec.sigma.value(ti, tj, x_new, u[j]) * incs[j]
                    - spec.sigma.value(ti, tj, x_old, u[j]) * base_incs[j];
            }
        }
        if !acc.is_finite() {
            return Err(i);
        }
        row[i + k] = acc;
    }
    Ok(())
}

pub fn simulate_state(model: &Model, u: &ControlPath, w: &BrownianEnsemble) -> Result<StatePaths, ForwardError> {
    check_inputs(model, u, w)?;
    let k = model.k();
    let n = model.steps();
    let mut data = PathMatrix::zeros(w.paths(), n + k + 1);
    let failures: Vec<(usize, usize)> = data
        .par_rows_mut()
        .enumerate()
        .filter_map(|(m, row)| simulate_row(model, u.values(), w.path(m), row).err().map(|i| (m, i)))
        .collect();
    if let Some(&(path, index)) = failures.iter().min() {
        return Err(ForwardError::Divergence { path, index });
    }
    Ok(StatePaths { k, steps: n, data })
}

/// First variation of the state in direction `beta`, as the exact derivative
/// of the Euler scheme.
///
/// When both kernels are at most quadratic in `t`, the differential form
/// (diagonal terms plus kernel-derivative sums) is also evaluated and must
/// agree to `1e-10`.
pub fn simulate_variation(
    model: &Model,
    u: &ControlPath,
    beta: &ControlPath,
    x: &StatePaths,
    w: &BrownianEnsemble,
) -> Result<VariationPaths, ForwardError> {
    check_inputs(model, u, w)?;
    if beta.len() != model.steps() {
        return Err(ProblemError::ControlLength {
            expected: model.steps(),
            got: beta.len(),
        }
        .into());
    }
    let k = model.k();
    let n = model.steps();
    let check = model.spec.kernels_t_degree_at_most(2);
    let mut data = PathMatrix::zeros(w.paths(), n + k + 1);
    let failures: Vec<ForwardError> = data
        .par_rows_mut()
        .enumerate()
        .filter_map(|(m, row)| {
            variation_row(model, u.values(), beta.values(), x.row(m), w.path(m), row);
            if check {
                differential_check(model, u.values(), beta.values(), x.row(m), w.path(m), row, m).err()
            } else {
                None
            }
        })
        .collect();
    if let Some(e) = failures.into_iter().next() {
        return Err(e);
    }
    Ok(StatePaths { k, steps: n, data })
}

fn variation_row(model: &Model, u: &[f64], beta: &[f64], xrow: &[f64], incs: &[f64], row: &mut [f64]) {
    let grid = &model.grid;
    let spec = &model.spec;
    let k = model.k();
    let dt = grid.dt();
    for i in 1..=grid.steps() {
        let ti = grid.t(i);
        let mut acc = 0.0;
        for j in 0..i {
            let tj = grid.t(j);
            let (xd, yd) = (xrow[j], row[j]);
            acc += (spec.b.d_x(ti, tj, xd, u[j]) * yd + spec.b.d_u(ti, tj, xd, u[j]) * beta[j]) * dt
                + (spec.sigma.d_x(ti, tj, xd, u[j]) * yd + spec.sigma.d_u(ti, tj, xd, u[j]) * beta[j]) * incs[j];
        }
        row[i + k] = acc;
    }
}

fn differential_check(
    model: &Model,
    u: &[f64],
    beta: &[f64],
    xrow: &[f64],
    incs: &[f64],
    volterra: &[f64],
    path: usize,
) -> Result<(), ForwardError> {
    let grid = &model.grid;
    let spec = &model.spec;
    let k = model.k();
    let dt = grid.dt();
    let mut y = 0.0;
    for i in 0..grid.steps() {
        let (ti, tn, mid) = (grid.t(i), grid.t(i + 1), grid.midpoint(i));
        let (xd, yd) = (xrow[i], volterra[i]);
        let mut incr = (spec.b.d_x(tn, ti, xd, u[i]) * yd + spec.b.d_u(tn, ti, xd, u[i]) * beta[i]) * dt
            + (spec.sigma.d_x(tn, ti, xd, u[i]) * yd + spec.sigma.d_u(tn, ti, xd, u[i]) * beta[i]) * incs[i];
        for j in 0..i {
            let tj = grid.t(j);
            let (xj, yj) = (xrow[j], volterra[j]);
            incr += dt
                * ((spec.b.d_tx(mid, tj, xj, u[j]) * yj + spec.b.d_tu(mid, tj, xj, u[j]) * beta[j]) * dt
                    + (spec.sigma.d_tx(mid, tj, xj, u[j]) * yj + spec.sigma.d_tu(mid, tj, xj, u[j]) * beta[j])
                        * incs[j]);
        }
        y += incr;
        let v = volterra[i + 1 + k];
        if (y - v).abs() > 1e-10 * (1.0 + v.abs()) {
            return Err(ForwardError::Consistency {
                path,
                index: i + 1,
                volterra: v,
                differential: y,
            });
        }
    }
    Ok(())
}

/// Reward of each path: `sum_{i<N} f(t_i, X(t_i - delta), u_i) dt + g(X(T))`.
pub fn path_rewards(model: &Model, u: &ControlPath, x: &StatePaths) -> Vec<f64> {
    let grid = &model.grid;
    let spec = &model.spec;
    let dt = grid.dt();
    (0..x.paths())
        .into_par_iter()
        .map(|m| {
            let mut acc = 0.0;
            for i in 0..grid.steps() {
                acc += spec.f.value(grid.t(i), x.delayed(m, i), u.get(i)) * dt;
            }
            acc + spec.g.value(x.terminal(m))
        })
        .collect()
}

/// Monte Carlo reward `J` and its standard error.
pub fn cost(model: &Model, u: &ControlPath, x: &StatePaths) -> (f64, f64) {
    mean_stderr(&path_rewards(model, u, x))
}

/// Simulates and evaluates the reward in one call.
pub fn evaluate(model: &Model, u: &ControlPath, w: &BrownianEnsemble) -> Result<(f64, f64), ForwardError> {
    let x = simulate_state(model, u, w)?;
    Ok(cost(model, u, &x))
}

/// Estimate with its Monte Carlo standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub value: f64,
    pub stderr: f64,
}

/// Central difference `[J(u + eps beta) - J(u - eps beta)] / (2 eps)` with
/// common random numbers.
pub fn directional_derivative_fd(
    model: &Model,
    u: &ControlPath,
    beta: &ControlPath,
    w: &BrownianEnsemble,
    eps: f64,
) -> Result<Estimate, ForwardError> {
    let plus = u.perturbed(beta, eps);
    let minus = u.perturbed(beta, -eps);
    for c in [&plus, &minus] {
        if let Some((index, &value)) = c.values().iter().enumerate().find(|(_, v)| !model.spec.bounds.contains(**v)) {
            return Err(ForwardError::Projection { index, value });
        }
    }
    if beta.values().iter().all(|b| *b == 0.0) {
        return Ok(Estimate { value: 0.0, stderr: 0.0 });
    }
    let rp = path_rewards(model, &plus, &simulate_state(model, &plus, w)?);
    let rm = path_rewards(model, &minus, &simulate_state(model, &minus, w)?);
    let diff: Vec<f64> = rp.iter().zip(&rm).map(|(a, b)| (a - b) / (2.0 * eps)).collect();
    let (value, stderr) = mean_stderr(&diff);
    Ok(Estimate { value, stderr })
}

/// Needle direction `alpha * 1_[t, t+h]` on the grid cells it covers.
pub fn needle_direction(grid: &TimeGrid, t: f64, h: f64, alpha: f64) -> Result<ControlPath, ForwardError> {
    if !(h > 0.0 && t >= 0.0 && t + h <= grid.horizon() + 1e-12) {
        return Err(ForwardError::Needle { t, h });
    }
    let values = (0..grid.steps())
        .map(|j| {
            let s = grid.t(j);
            if s >= t - 1e-12 && s < t + h - 1e-12 {
                alpha
            } else {
                0.0
            }
        })
        .collect();
    Ok(ControlPath::unchecked(values))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::brownian::sample_brownian;
    use crate::catalog::{catalog_problem, default_params, PROBLEMS};
    use crate::grid::build_grid;
    use crate::poly::Poly;
    use crate::problem::{ControlBounds, PolyKernel, PolyReward, PolyTerminal, ProblemSpec};
    use std::sync::Arc;

    fn simple(b: Poly<4>, sigma: Poly<4>, f: Poly<3>, g: Poly<1>, x0: f64) -> ProblemSpec {
        ProblemSpec {
            name: "test".into(),
            x0: Arc::new(Poly::<1>::constant(x0)),
            b: Arc::new(PolyKernel::new(b)),
            sigma: Arc::new(PolyKernel::new(sigma)),
            f: Arc::new(PolyReward::new(f)),
            g: Arc::new(PolyTerminal::new(g)),
            bounds: ControlBounds::default(),
            reward_scale: 1.0,
        }
    }

    fn model(spec: ProblemSpec, n: usize, delta: f64) -> Model {
        let (grid, delay) = build_grid(1.0, n, delta).unwrap();
        Model::new(spec, grid, delay)
    }

    #[test]
    fn free_term_only() {
        let m = model(simple(Poly::zero(), Poly::zero(), Poly::zero(), Poly::zero(), 2.5), 10, 0.2);
        let w = sample_brownian(&m.grid, 5, 1);
        let x = simulate_state(&m, &ControlPath::constant(10, 0.0), &w).unwrap();
        for p in 0..5 {
            for i in -2..=10 {
                assert_eq!(x.at(p, i), 2.5);
            }
        }
    }

    #[test]
    fn unit_drift_is_time() {
        let m = model(simple(Poly::constant(1.0), Poly::zero(), Poly::zero(), Poly::zero(), 0.0), 16, 0.0);
        let w = sample_brownian(&m.grid, 3, 1);
        let x = simulate_state(&m, &ControlPath::constant(16, 0.0), &w).unwrap();
        for i in 0..=16 {
            assert_eq!(x.at(1, i), m.grid.t(i as usize));
        }
    }

    #[test]
    fn pure_noise_second_moment() {
        let m = model(simple(Poly::zero(), Poly::constant(1.0), Poly::zero(), Poly::zero(), 0.0), 16, 0.0);
        let paths = 100_000;
        let w = sample_brownian(&m.grid, paths, 5);
        let x = simulate_state(&m, &ControlPath::constant(16, 0.0), &w).unwrap();
        let sq: Vec<f64> = (0..paths).map(|p| x.terminal(p).powi(2)).collect();
        let (mu, _) = mean_stderr(&sq);
        assert!((mu - 1.0).abs() <= 4.0 * (2.0 / paths as f64).sqrt());
    }

    #[test]
    fn delay_freezes_state_argument() {
        // LQ2 with sigma0 = 0, alpha = 1, x0 = 1, delta = T: X(t) = 1 + t.
        let p: crate::catalog::Params =
            [("alpha", 1.0), ("a", 1.0), ("kappa", 1.0), ("sigma0", 0.0), ("c", 1.0)]
                .iter()
                .map(|(k, v)| (k.to_string(), *v))
                .collect();
        let spec = catalog_problem("LQ2", &p).unwrap();
        let m = model(spec, 32, 1.0);
        let w = sample_brownian(&m.grid, 2, 1);
        let x = simulate_state(&m, &ControlPath::constant(32, 0.0), &w).unwrap();
        for i in 0..=32 {
            assert!((x.at(0, i) - (1.0 + m.grid.t(i as usize))).abs() < 1e-14);
        }
    }

    #[test]
    fn frozen_delay_gaussian_mean() {
        // delta = T: X(T) = x0 + sum (alpha x0 + u) dt + sigma0 B(T).
        let mut p = default_params("LQ2");
        p.insert("c".into(), 0.5);
        let spec = catalog_problem("LQ2", &p).unwrap();
        let m = model(spec, 16, 1.0);
        let w = sample_brownian(&m.grid, 20_000, 8);
        let u = ControlPath::constant(16, 0.2);
        let x = simulate_state(&m, &u, &w).unwrap();
        let term: Vec<f64> = (0..w.paths()).map(|q| x.terminal(q)).collect();
        let (mu, se) = mean_stderr(&term);
        let exact = 0.5 + 0.5 * 0.5 + 0.2;
        assert!((mu - exact).abs() <= 4.0 * se);
    }

    #[test]
    fn euler_first_order_in_dt() {
        // dX = X(t - 1/2) dt on [0, 1], x0 = 1: X(t) = 1 + t up to t = 1/2, so X(1) = 2 + 1/8.
        let exact = 2.125;
        let errs: Vec<f64> = [32, 64, 128]
            .iter()
            .map(|&n| {
                let spec = simple(Poly::zero().with_term(1.0, [0, 0, 1, 0]), Poly::zero(), Poly::zero(), Poly::zero(), 1.0);
                let m = model(spec, n, 0.5);
                let w = sample_brownian(&m.grid, 1, 0);
                let x = simulate_state(&m, &ControlPath::constant(n, 0.0), &w).unwrap();
                (x.terminal(0) - exact).abs()
            })
            .collect();
        for pair in errs.windows(2) {
            let ratio = pair[0] / pair[1];
            assert!((1.8..2.2).contains(&ratio), "{errs:?}");
        }
    }

    #[test]
    fn divergence_is_reported() {
        let m = model(simple(Poly::zero().with_term(1e200, [0, 0, 3, 0]), Poly::zero(), Poly::zero(), Poly::zero(), 10.0), 8, 0.0);
        let w = sample_brownian(&m.grid, 2, 1);
        let err = simulate_state(&m, &ControlPath::constant(8, 0.0), &w).unwrap_err();
        assert!(matches!(err, ForwardError::Divergence { path: 0, .. }));
    }

    #[test]
    fn lq1_variation_is_integrated_direction() {
        let spec = catalog_problem("LQ1", &default_params("LQ1")).unwrap();
        let m = model(spec, 16, 0.25);
        let w = sample_brownian(&m.grid, 4, 2);
        let u = ControlPath::constant(16, 0.1);
        let beta = ControlPath::unchecked((0..16).map(|j| (j as f64).sin()).collect());
        let x = simulate_state(&m, &u, &w).unwrap();
        let y = simulate_variation(&m, &u, &beta, &x, &w).unwrap();
        let mut acc = 0.0;
        for i in 0..=16usize {
            assert!((y.at(2, i as isize) - acc).abs() < 1e-14);
            if i < 16 {
                acc += beta.get(i) * m.grid.dt();
            }
        }
        let zero = simulate_variation(&m, &u, &ControlPath::constant(16, 0.0), &x, &w).unwrap();
        assert!((0..4).all(|p| (-4..=16).all(|i| zero.at(p, i) == 0.0)));
    }

    #[test]
    fn variation_matches_pathwise_difference() {
        for name in PROBLEMS {
            let spec = catalog_problem(name, &default_params(name)).unwrap();
            let m = model(spec, 16, 0.25);
            let w = sample_brownian(&m.grid, 20, 4);
            let u = ControlPath::constant(16, 0.3);
            let beta = ControlPath::unchecked((0..16).map(|j| (0.4 * j as f64).cos()).collect());
            let x = simulate_state(&m, &u, &w).unwrap();
            let y = simulate_variation(&m, &u, &beta, &x, &w).unwrap();
            let eps = 1e-4;
            let xe = simulate_state(&m, &u.perturbed(&beta, eps), &w).unwrap();
            for p in 0..20 {
                for i in 0..=16 {
                    let fd = (xe.at(p, i) - x.at(p, i)) / eps;
                    assert!((fd - y.at(p, i)).abs() <= 10.0 * eps, "{name} {p} {i}");
                }
            }
        }
    }

    #[test]
    fn variation_is_linear_in_direction() {
        let spec = catalog_problem("LQ2", &default_params("LQ2")).unwrap();
        let m = model(spec, 16, 0.25);
        let w = sample_brownian(&m.grid, 10, 4);
        let u = ControlPath::constant(16, 0.0);
        let b1 = ControlPath::unchecked((0..16).map(|j| j as f64 * 0.1).collect());
        let b2 = ControlPath::unchecked((0..16).map(|j| 1.0 - j as f64 * 0.05).collect());
        let sum = b1.perturbed(&b2, 1.0);
        let x = simulate_state(&m, &u, &w).unwrap();
        let y1 = simulate_variation(&m, &u, &b1, &x, &w).unwrap();
        let y2 = simulate_variation(&m, &u, &b2, &x, &w).unwrap();
        let ys = simulate_variation(&m, &u, &sum, &x, &w).unwrap();
        for p in 0..10 {
            for i in 0..=16 {
                assert!((ys.at(p, i) - y1.at(p, i) - y2.at(p, i)).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn reward_examples() {
        let n = 16;
        let noise = model(simple(Poly::zero(), Poly::constant(1.0), Poly::zero(), Poly::zero().with_term(1.0, [1]), 0.0), n, 0.0);
        let w = sample_brownian(&noise.grid, 10_000, 3);
        let u = ControlPath::constant(n, 0.0);
        let (j, se) = evaluate(&noise, &u, &w).unwrap();
        assert!(j.abs() <= 4.0 * se);

        let unit = model(simple(Poly::zero(), Poly::constant(1.0), Poly::constant(1.0), Poly::zero(), 0.0), n, 0.0);
        let (j, se) = evaluate(&unit, &u, &w).unwrap();
        assert!((j - 1.0).abs() < 1e-14);
        assert_eq!(se, 0.0);
    }

    #[test]
    fn lq1_optimal_reward() {
        // J(a/kappa) = a c + a^2 T / (2 kappa), exact for the Euler scheme.
        let mut p = default_params("LQ1");
        p.insert("c".into(), 0.4);
        p.insert("a".into(), 1.5);
        p.insert("kappa".into(), 2.0);
        let spec = catalog_problem("LQ1", &p).unwrap();
        let m = model(spec, 32, 0.0);
        let w = sample_brownian(&m.grid, 50_000, 12);
        let (j, se) = evaluate(&m, &ControlPath::constant(32, 0.75), &w).unwrap();
        let exact = 1.5 * 0.4 + 1.5 * 1.5 / 4.0;
        assert!((j - exact).abs() <= 4.0 * se + 1e-12);
    }

    #[test]
    fn lq1_directional_derivatives() {
        let spec = catalog_problem("LQ1", &default_params("LQ1")).unwrap();
        let m = model(spec, 32, 0.0);
        let w = sample_brownian(&m.grid, 10_000, 13);
        let ones = ControlPath::constant(32, 1.0);
        let at_zero = directional_derivative_fd(&m, &ControlPath::constant(32, 0.0), &ones, &w, 1e-3).unwrap();
        assert!((at_zero.value - 1.0).abs() <= 4.0 * at_zero.stderr + 1e-6);
        let beta = ControlPath::unchecked((0..32).map(|j| (j as f64).cos()).collect());
        let at_opt = directional_derivative_fd(&m, &ones, &beta, &w, 1e-3).unwrap();
        assert!(at_opt.value.abs() <= 4.0 * at_opt.stderr + 1e-6);
        let zero = directional_derivative_fd(&m, &ones, &ControlPath::constant(32, 0.0), &w, 1e-3).unwrap();
        assert_eq!(zero.value, 0.0);
        let edge = m.spec.with_bounds(ControlBounds::new(0.0, 1.0).unwrap());
        let edge = Model::new(edge, m.grid, m.delay);
        assert!(matches!(
            directional_derivative_fd(&edge, &ones, &ones, &w, 1e-3),
            Err(ForwardError::Projection { .. })
        ));
    }

    #[test]
    fn incremental_resimulation_matches_full() {
        let spec = catalog_problem("CUSTOM_POLY", &default_params("CUSTOM_POLY")).unwrap();
        let m = model(spec, 16, 0.25);
        let w = sample_brownian(&m.grid, 1, 4);
        let u: Vec<f64> = (0..16).map(|j| 0.1 * j as f64).collect();
        let len = 16 + 4 + 1;
        let mut base = vec![0.0; len];
        simulate_row(&m, &u, w.path(0), &mut base).unwrap();
        for from in [0, 3, 9, 15] {
            let mut incs = w.path(0).to_vec();
            incs[from] += 0.01;
            incs[15] -= 0.02;
            let mut full = vec![0.0; len];
            let mut inc = vec![0.0; len];
            simulate_row(&m, &u, &incs, &mut full).unwrap();
            resimulate_row(&m, &u, w.path(0), &base, &incs, from, &mut inc).unwrap();
            for c in 0..len {
                assert!((full[c] - inc[c]).abs() < 1e-13, "{from} {c}");
            }
        }
    }

    #[test]
    fn needle_support() {
        let g = TimeGrid::new(1.0, 10).unwrap();
        let d = needle_direction(&g, 0.3, 0.2, 2.0).unwrap();
        assert_eq!(d.values()[2..6], [0.0, 2.0, 2.0, 0.0]);
        assert!(needle_direction(&g, 0.5, 0.6, 1.0).is_err());
        assert!(needle_direction(&g, 0.5, 0.0, 1.0).is_err());
    }
}
