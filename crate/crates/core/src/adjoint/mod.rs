//! Backward solver for the time-advanced adjoint Volterra equation.
//!
//! The discrete adjoint of the Euler scheme is
//! `p_a = E[G_a | F_a]` with `G_a = g_x(X_N) + sum_{l >= a} h_l dt`, and the
//! kernel `q(t_a, s_m) = E[G_a dB_m | F_m] / dt`. The driver `h_i` reads
//! adjoint values at indices `>= i + k + 1` only, so the sweep runs backward
//! in blocks of `k` indices without any fixed-point iteration.

mod kernel;

pub use kernel::{
    bsvie_residual, compare_kernel_estimators, diagonal_q, q_malliavin, q_regression, AdjointFunctional,
    AdjointTarget, KernelComparison, ResidualRow,
};

use std::collections::BTreeMap;

use rayon::prelude::*;
use thiserror::Error;

use crate::brownian::BrownianEnsemble;
use crate::forward::{ForwardError, StatePaths};
use crate::malliavin::{Basis, LinearFit, MalliavinError, Projector, RegressionError};
use crate::paths::PathMatrix;
use crate::problem::{ControlPath, Model};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AdjointError {
    #[error(transparent)]
    Forward(#[from] ForwardError),
    #[error(transparent)]
    Regression(#[from] RegressionError),
    #[error(transparent)]
    Malliavin(#[from] MalliavinError),
    #[error("driver at index {index} needs adjoint values from index {needed}, but only indices >= {solved_from} are solved")]
    Ordering {
        index: usize,
        needed: usize,
        solved_from: usize,
    },
    #[error("kernel pair q(t_{a}, s_{m}) was not materialized; rerun with the full kernel (--full-kernel) or audit that pair")]
    KernelAudit { a: usize, m: usize },
    #[error("driver is not finite on path {path} at index {index}")]
    NonFiniteDriver { path: usize, index: usize },
    #[error("kernel pair needs j > i, got i = {i}, j = {j}")]
    Pair { i: usize, j: usize },
    #[error("inputs disagree: {0}")]
    Mismatch(String),
}

/// Which kernel pairs the solver materializes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum KernelPolicy {
    /// Diagonal `q(t_{m+1}, t_m)` always; full columns `q(., t_m)` only when
    /// the diffusion kernel depends on its first time argument.
    #[default]
    Auto,
    /// Every pair `(a, m)`.
    Full,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdjointOptions {
    pub basis: Basis,
    pub ridge: f64,
    pub kernel: KernelPolicy,
    /// Extra pairs `(a, m)` to materialize.
    pub audit: Vec<(usize, usize)>,
}

impl Default for AdjointOptions {
    fn default() -> Self {
        Self {
            basis: Basis::with_state(2),
            ridge: 1e-8,
            kernel: KernelPolicy::Auto,
            audit: Vec::new(),
        }
    }
}

/// Per-path adjoint values `p`, driver `h`, targets `G` and kernel `q`.
#[derive(Debug, Clone)]
pub struct AdjointSolution {
    steps: usize,
    k: usize,
    dt: f64,
    p: PathMatrix,
    h: PathMatrix,
    g: PathMatrix,
    columns: Vec<Option<PathMatrix>>,
    upper: Vec<Option<PathMatrix>>,
    audit: BTreeMap<(usize, usize), Vec<f64>>,
    p_fits: Vec<Option<LinearFit>>,
    column_fits: Vec<Vec<LinearFit>>,
    basis: Basis,
    ridge: f64,
    solved_from: usize,
}

impl AdjointSolution {
    pub fn paths(&self) -> usize {
        self.p.rows()
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn basis(&self) -> Basis {
        self.basis
    }

    pub fn ridge(&self) -> f64 {
        self.ridge
    }

    /// Lowest index whose `p` is available.
    pub fn solved_from(&self) -> usize {
        self.solved_from
    }

    /// `p(t_a)` on path `m`.
    pub fn p(&self, m: usize, a: usize) -> f64 {
        self.p.get(m, a)
    }

    /// `p(t_0..=t_N)` on path `m`.
    pub fn p_row(&self, m: usize) -> &[f64] {
        self.p.row(m)
    }

    pub fn p_at(&self, a: usize) -> Vec<f64> {
        self.p.column(a)
    }

    pub fn h(&self, m: usize, i: usize) -> f64 {
        self.h.get(m, i)
    }

    pub fn h_at(&self, i: usize) -> Vec<f64> {
        self.h.column(i)
    }

    /// `G_a = g_x(X_N) + sum_{l >= a} h_l dt` per path.
    pub fn g_at(&self, a: usize) -> Vec<f64> {
        self.g.column(a)
    }

    /// `q(t_a, s_m)` on path `path`.
    pub fn q(&self, path: usize, a: usize, m: usize) -> Result<f64, AdjointError> {
        if a > m {
            if let Some(col) = self.columns.get(m).and_then(Option::as_ref) {
                if a - m - 1 < col.cols() {
                    return Ok(col.get(path, a - m - 1));
                }
            }
        } else if let Some(up) = self.upper.get(m).and_then(Option::as_ref) {
            return Ok(up.get(path, a));
        }
        self.audit
            .get(&(a, m))
            .map(|v| v[path])
            .ok_or(AdjointError::KernelAudit { a, m })
    }

    /// `q(t_a, s_m)` on every path.
    pub fn q_pair(&self, a: usize, m: usize) -> Result<Vec<f64>, AdjointError> {
        (0..self.paths()).map(|p| self.q(p, a, m)).collect()
    }

    /// `q(t_{m+1}, t_m)`, the kernel next to the diagonal.
    pub fn q_diag(&self, path: usize, m: usize) -> f64 {
        self.columns[m].as_ref().expect("diagonal is always stored").get(path, 0)
    }

    /// Stored part of column `q(t_{m+1}.., t_m)` on one path.
    pub fn q_column(&self, path: usize, m: usize) -> Option<&[f64]> {
        self.columns.get(m).and_then(Option::as_ref).map(|c| c.row(path))
    }

    /// Whether column `m` holds every pair `q(t_a, t_m)`, `a > m`.
    pub fn has_full_column(&self, m: usize) -> bool {
        self.columns
            .get(m)
            .and_then(Option::as_ref)
            .is_some_and(|c| c.cols() == self.steps - m)
    }

    pub fn has_upper(&self) -> bool {
        self.upper.iter().all(Option::is_some)
    }

    pub(crate) fn p_fit(&self, a: usize) -> Option<&LinearFit> {
        self.p_fits.get(a).and_then(Option::as_ref)
    }

    pub(crate) fn column_fit(&self, a: usize, m: usize) -> Option<&LinearFit> {
        self.column_fits.get(m).and_then(|c| c.get(a - m - 1))
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }
}

/// Whether the driver and Hamiltonian need full kernel columns.
pub fn needs_full_columns(model: &Model) -> bool {
    !model.spec.sigma.structure().t_homogeneous()
}

/// Driver value on one path with `x = X(t_i)` and adjoint accessors
/// `p(a) = p(t_a)`, `q(a) = q(t_a, t_{i+k})`.
pub(crate) fn driver_value(
    model: &Model,
    u: &[f64],
    i: usize,
    x: f64,
    p: impl Fn(usize) -> f64,
    q: impl Fn(usize) -> f64,
) -> f64 {
    let grid = &model.grid;
    let spec = &model.spec;
    let n = grid.steps();
    let m = i + model.k();
    if m >= n {
        return 0.0;
    }
    let dt = grid.dt();
    let (tm, tn) = (grid.t(m), grid.t(m + 1));
    let v = u[m];
    let mut h = spec.f.d_x(tm, x, v) + spec.b.d_x(tn, tm, x, v) * p(m + 1) + spec.sigma.d_x(tn, tm, x, v) * q(m + 1);
    if !spec.b.structure().t_homogeneous() {
        for l in m + 1..n {
            h += p(l + 1) * spec.b.d_tx(grid.midpoint(l), tm, x, v) * dt;
        }
    }
    if !spec.sigma.structure().t_homogeneous() {
        for l in m + 1..n {
            h += q(l + 1) * spec.sigma.d_tx(grid.midpoint(l), tm, x, v) * dt;
        }
    }
    h
}

/// Driver `h_i` on every path, from the adjoint values already solved in `sol`.
///
/// Zero when `i + k >= N`.
pub fn driver_h(
    model: &Model,
    u: &ControlPath,
    x: &StatePaths,
    sol: &AdjointSolution,
    i: usize,
) -> Result<Vec<f64>, AdjointError> {
    let n = model.steps();
    let m = i + model.k();
    if m >= n {
        return Ok(vec![0.0; x.paths()]);
    }
    if m + 1 < sol.solved_from {
        return Err(AdjointError::Ordering {
            index: i,
            needed: m + 1,
            solved_from: sol.solved_from,
        });
    }
    let col = sol.columns[m].as_ref().ok_or(AdjointError::Ordering {
        index: i,
        needed: m + 1,
        solved_from: sol.solved_from,
    })?;
    if needs_full_columns(model) && col.cols() < n - m {
        return Err(AdjointError::KernelAudit { a: m + 2, m });
    }
    let h: Vec<f64> = (0..x.paths())
        .into_par_iter()
        .map(|path| {
            let prow = sol.p.row(path);
            let qrow = col.row(path);
            driver_value(model, u.values(), i, x.at(path, i as isize), |a| prow[a], |a| qrow[a - m - 1])
        })
        .collect();
    if let Some(path) = h.iter().position(|v| !v.is_finite()) {
        return Err(AdjointError::NonFiniteDriver { path, index: i });
    }
    Ok(h)
}

struct Sweep<'a> {
    model: &'a Model,
    x: &'a StatePaths,
    w: &'a BrownianEnsemble,
    opts: &'a AdjointOptions,
}

impl Sweep<'_> {
    fn projector(&self, j: usize) -> Result<Projector, AdjointError> {
        Ok(Projector::new(&self.opts.basis.features(self.w, Some(self.x), j), self.opts.ridge)?)
    }

    fn kernel_target(&self, g: &PathMatrix, a: usize, m: usize) -> Vec<f64> {
        let dt = self.model.grid.dt();
        (0..self.w.paths()).map(|p| g.get(p, a) * self.w.dw(p, m) / dt).collect()
    }

    fn column(&self, sol: &AdjointSolution, m: usize, width: usize) -> Result<(PathMatrix, Vec<LinearFit>), AdjointError> {
        debug_assert!(m + 1 >= sol.solved_from, "column {m} read before its block was solved");
        let proj = self.projector(m)?;
        let mut out = PathMatrix::zeros(self.w.paths(), width);
        let mut fits = Vec::with_capacity(width);
        for c in 0..width {
            let fit = proj.fit(&self.kernel_target(&sol.g, m + 1 + c, m))?;
            out.set_column(c, &proj.apply(&fit));
            fits.push(fit);
        }
        Ok((out, fits))
    }
}

/// Solves the adjoint equation for the state `x` simulated under `(u, w)`.
pub fn solve_adjoint(
    model: &Model,
    u: &ControlPath,
    x: &StatePaths,
    w: &BrownianEnsemble,
    opts: &AdjointOptions,
) -> Result<AdjointSolution, AdjointError> {
    opts.basis.validate()?;
    let n = model.steps();
    let k = model.k();
    if x.paths() != w.paths() || x.steps() != n || w.steps() != n || x.k() != k {
        return Err(AdjointError::Mismatch("state, ensemble and grid shapes differ".into()));
    }
    model.check_control(u).map_err(ForwardError::from)?;
    let paths = w.paths();
    let dt = model.grid.dt();
    let full = opts.kernel == KernelPolicy::Full || needs_full_columns(model);
    let sweep = Sweep { model, x, w, opts };

    let mut sol = AdjointSolution {
        steps: n,
        k,
        dt,
        p: PathMatrix::zeros(paths, n + 1),
        h: PathMatrix::zeros(paths, n + 1),
        g: PathMatrix::zeros(paths, n + 1),
        columns: vec![None; n],
        upper: vec![None; n],
        audit: BTreeMap::new(),
        p_fits: vec![None; n],
        column_fits: vec![Vec::new(); n],
        basis: opts.basis,
        ridge: opts.ridge,
        solved_from: n,
    };
    for m in 0..paths {
        let gx = model.spec.g.d_x(x.terminal(m));
        sol.p.set(m, n, gx);
        sol.g.set(m, n, gx);
    }

    let block = k.max(1);
    let mut hi = n;
    while hi > 0 {
        let lo = hi.saturating_sub(block);
        for i in lo..hi {
            let m = i + k;
            if m < n && sol.columns[m].is_none() {
                let (col, fits) = sweep.column(&sol, m, if full { n - m } else { 1 })?;
                sol.columns[m] = Some(col);
                sol.column_fits[m] = fits;
            }
        }
        for i in lo..hi {
            let h = driver_h(model, u, x, &sol, i)?;
            sol.h.set_column(i, &h);
        }
        for i in (lo..hi).rev() {
            for m in 0..paths {
                let v = sol.g.get(m, i + 1) + sol.h.get(m, i) * dt;
                sol.g.set(m, i, v);
            }
        }
        for i in lo..hi {
            let proj = sweep.projector(i)?;
            let fit = proj.fit(&sol.g.column(i))?;
            sol.p.set_column(i, &proj.apply(&fit));
            sol.p_fits[i] = Some(fit);
        }
        sol.solved_from = lo;
        hi = lo;
    }
    for m in 0..n {
        if sol.columns[m].is_none() {
            let (col, fits) = sweep.column(&sol, m, if full { n - m } else { 1 })?;
            sol.columns[m] = Some(col);
            sol.column_fits[m] = fits;
        }
    }
    if opts.kernel == KernelPolicy::Full {
        for j in 0..n {
            let proj = sweep.projector(j)?;
            let mut up = PathMatrix::zeros(paths, j + 1);
            for i in 0..=j {
                up.set_column(i, &proj.fitted(&sweep.kernel_target(&sol.g, i, j))?);
            }
            sol.upper[j] = Some(up);
        }
    }
    for &(a, m) in &opts.audit {
        if m >= n || a > n {
            return Err(AdjointError::KernelAudit { a, m });
        }
        let proj = sweep.projector(m)?;
        let v = proj.fitted(&sweep.kernel_target(&sol.g, a, m))?;
        sol.audit.insert((a, m), v);
    }
    Ok(sol)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::brownian::sample_brownian;
    use crate::catalog::{catalog_problem, default_params, Params};
    use crate::forward::simulate_state;
    use crate::grid::build_grid;
    use crate::paths::{mean, rms};

    fn setup(name: &str, params: Params, n: usize, delta: f64, paths: usize, seed: u64) -> (Model, BrownianEnsemble) {
        let spec = catalog_problem(name, &params).unwrap();
        let (grid, delay) = build_grid(1.0, n, delta).unwrap();
        let w = sample_brownian(&grid, paths, seed);
        (Model::new(spec, grid, delay), w)
    }

    #[test]
    fn linear_terminal_gives_constant_adjoint() {
        let (model, w) = setup("LQ1", default_params("LQ1"), 16, 0.25, 2000, 1);
        let u = ControlPath::constant(16, 0.3);
        let x = simulate_state(&model, &u, &w).unwrap();
        let sol = solve_adjoint(&model, &u, &x, &w, &AdjointOptions::default()).unwrap();
        for i in 0..=16 {
            assert!(sol.p_at(i).iter().all(|p| (p - 1.0).abs() < 1e-10));
            assert!(sol.h_at(i).iter().all(|h| *h == 0.0));
        }
        for m in 0..16 {
            let q = sol.q_pair(m + 1, m).unwrap();
            assert!(mean(&q).abs() < 0.2 && rms(&q) < 0.6, "{}", rms(&q));
        }
    }

    #[test]
    fn terminal_condition_is_exact() {
        let (model, w) = setup("CUSTOM_POLY", default_params("CUSTOM_POLY"), 8, 0.25, 500, 2);
        let u = ControlPath::constant(8, 0.1);
        let x = simulate_state(&model, &u, &w).unwrap();
        let sol = solve_adjoint(&model, &u, &x, &w, &AdjointOptions::default()).unwrap();
        for m in 0..500 {
            assert_eq!(sol.p(m, 8).to_bits(), model.spec.g.d_x(x.terminal(m)).to_bits());
        }
        assert!(sol.has_full_column(0));
    }

    #[test]
    fn indicator_zone_and_lq2_driver() {
        let (model, w) = setup("LQ2", default_params("LQ2"), 16, 0.25, 2000, 3);
        let u = ControlPath::constant(16, 0.0);
        let x = simulate_state(&model, &u, &w).unwrap();
        let sol = solve_adjoint(&model, &u, &x, &w, &AdjointOptions::default()).unwrap();
        for i in 0..16 {
            let h = sol.h_at(i);
            if i + 4 >= 16 {
                assert!(h.iter().all(|v| *v == 0.0));
            } else {
                for m in 0..2000 {
                    assert!((h[m] - 0.5 * sol.p(m, i + 5)).abs() < 1e-14);
                }
            }
        }
    }

    #[test]
    fn driver_before_dependencies_is_rejected() {
        let (model, w) = setup("LQ2", default_params("LQ2"), 16, 0.25, 500, 3);
        let u = ControlPath::constant(16, 0.0);
        let x = simulate_state(&model, &u, &w).unwrap();
        let mut sol = solve_adjoint(&model, &u, &x, &w, &AdjointOptions::default()).unwrap();
        sol.solved_from = 12;
        assert!(matches!(driver_h(&model, &u, &x, &sol, 2), Err(AdjointError::Ordering { .. })));
        assert!(driver_h(&model, &u, &x, &sol, 8).is_ok());
    }

    #[test]
    fn missing_pair_is_a_kernel_audit_error() {
        let (model, w) = setup("LQ1", default_params("LQ1"), 8, 0.0, 500, 3);
        let u = ControlPath::constant(8, 0.0);
        let x = simulate_state(&model, &u, &w).unwrap();
        let opts = AdjointOptions {
            audit: vec![(2, 5)],
            ..AdjointOptions::default()
        };
        let sol = solve_adjoint(&model, &u, &x, &w, &opts).unwrap();
        assert!(matches!(sol.q(0, 6, 2), Err(AdjointError::KernelAudit { a: 6, m: 2 })));
        assert!(sol.q(0, 2, 5).is_ok());
        assert!(sol.q(0, 3, 2).is_ok());
    }

    #[test]
    fn zero_delay_sweep() {
        let mut p = default_params("LQ2");
        p.insert("sigma0".into(), 0.0);
        let (model, w) = setup("LQ2", p, 16, 0.0, 200, 4);
        let u = ControlPath::constant(16, 0.0);
        let x = simulate_state(&model, &u, &w).unwrap();
        let sol = solve_adjoint(&model, &u, &x, &w, &AdjointOptions::default()).unwrap();
        // p_i = p_{i+1} + alpha p_{i+1} dt with p_N = a.
        let mut exact = 1.0;
        for i in (0..16).rev() {
            exact *= 1.0 + 0.5 / 16.0;
            assert!((sol.p(7, i) - exact).abs() < 1e-12);
        }
    }
}
