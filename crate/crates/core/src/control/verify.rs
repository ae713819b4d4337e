//! Maximum-principle and gradient verifiers.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{gradient_from_adjoint, hamiltonian, hamiltonian_grad_x, ControlError, HamiltonianInputs};
use crate::adjoint::{driver_h, solve_adjoint, AdjointOptions, AdjointSolution};
use crate::brownian::BrownianEnsemble;
use crate::forward::{directional_derivative_fd, simulate_state, StatePaths};
use crate::paths::{mean, mean_stderr};
use crate::problem::{ControlBounds, ControlPath, Model};

/// Criticality residual `|E[dH/du(t_i)]|` per index.
#[derive(Debug, Clone)]
pub struct NecessaryReport {
    pub max_residual: f64,
    /// Largest standard error over indices.
    pub max_stderr: f64,
    /// `(t_i, residual, stderr)`.
    pub rows: Vec<(f64, f64, f64)>,
}

impl NecessaryReport {
    pub fn passes(&self, tol: f64, sigmas: f64) -> bool {
        self.max_residual <= tol + sigmas * self.max_stderr
    }
}

pub fn necessary_mp_residual(
    model: &Model,
    u: &ControlPath,
    w: &BrownianEnsemble,
    opts: &AdjointOptions,
) -> Result<NecessaryReport, ControlError> {
    let x = simulate_state(model, u, w)?;
    let sol = solve_adjoint(model, u, &x, w, opts)?;
    let field = gradient_from_adjoint(model, u, &x, &sol)?;
    let rows: Vec<(f64, f64, f64)> = (0..model.steps())
        .map(|i| (model.grid.t(i), field.grad[i].abs(), field.stderr[i]))
        .collect();
    Ok(NecessaryReport {
        max_residual: rows.iter().map(|r| r.1).fold(0.0, f64::max),
        max_stderr: rows.iter().map(|r| r.2).fold(0.0, f64::max),
        rows,
    })
}

/// `count` equispaced points covering the control bounds.
pub fn default_v_grid(bounds: &ControlBounds, count: usize) -> Vec<f64> {
    if count <= 1 || bounds.max() == bounds.min() {
        return vec![bounds.min()];
    }
    let step = (bounds.max() - bounds.min()) / (count - 1) as f64;
    (0..count)
        .map(|c| if c + 1 == count { bounds.max() } else { bounds.min() + step * c as f64 })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SufficientRow {
    pub index: usize,
    pub u_hat: f64,
    pub argmax: f64,
    /// Mean Hamiltonian at `u_hat`.
    pub h_hat: f64,
    /// Largest mean Hamiltonian over the grid.
    pub h_max: f64,
    pub tolerance: f64,
    pub maximal: bool,
    /// Largest second difference of the mean Hamiltonian in `v`.
    pub max_second_difference: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct SufficientReport {
    pub rows: Vec<SufficientRow>,
}

impl SufficientReport {
    pub fn all_maximal(&self) -> bool {
        self.rows.iter().all(|r| r.maximal)
    }

    /// Every second difference is non-positive up to rounding.
    pub fn concave(&self) -> bool {
        self.rows.iter().all(|r| {
            r.max_second_difference
                .map_or(true, |d| d <= 1e-9 * (1.0 + r.h_max.abs()))
        })
    }
}

fn mean_h(model: &Model, sol: &AdjointSolution, x: &StatePaths, i: usize, v: f64) -> Result<Vec<f64>, ControlError> {
    (0..x.paths())
        .into_par_iter()
        .map(|m| hamiltonian(model, &HamiltonianInputs::from_solution(sol, x, m, i, v)))
        .collect()
}

/// Scans the path-averaged Hamiltonian over `v_grid` at every index with
/// the adjoint of `u_hat` held fixed.
pub fn sufficient_mp_check(
    model: &Model,
    u_hat: &ControlPath,
    w: &BrownianEnsemble,
    v_grid: &[f64],
    opts: &AdjointOptions,
) -> Result<SufficientReport, ControlError> {
    let x = simulate_state(model, u_hat, w)?;
    let sol = solve_adjoint(model, u_hat, &x, w, opts)?;
    let mut rows = Vec::with_capacity(model.steps());
    for i in 0..model.steps() {
        let means: Vec<f64> = v_grid
            .iter()
            .map(|&v| mean_h(model, &sol, &x, i, v).map(|h| mean(&h)))
            .collect::<Result<_, _>>()?;
        let best = (0..v_grid.len())
            .max_by(|a, b| means[*a].total_cmp(&means[*b]))
            .ok_or(ControlError::EmptyGrid)?;
        let hat = mean_h(model, &sol, &x, i, u_hat.get(i))?;
        let top = mean_h(model, &sol, &x, i, v_grid[best])?;
        let diff: Vec<f64> = top.iter().zip(&hat).map(|(a, b)| a - b).collect();
        let (gap, se) = mean_stderr(&diff);
        let resolution = [best.checked_sub(1), Some(best + 1)]
            .into_iter()
            .flatten()
            .filter(|&c| c < v_grid.len())
            .map(|c| (means[c] - means[best]).abs())
            .fold(0.0, f64::max);
        let tolerance = 3.0 * se + resolution + 1e-12 * (1.0 + means[best].abs());
        let max_second_difference = (1..v_grid.len().saturating_sub(1))
            .map(|c| means[c + 1] - 2.0 * means[c] + means[c - 1])
            .reduce(f64::max);
        rows.push(SufficientRow {
            index: i,
            u_hat: u_hat.get(i),
            argmax: v_grid[best],
            h_hat: mean(&hat),
            h_max: means[best],
            tolerance,
            maximal: gap <= tolerance,
            max_second_difference,
        });
    }
    Ok(SufficientReport { rows })
}

/// Largest `|h_i - dH/dx(t_{i+k}) 1{i+k < N}|` over paths and indices, with
/// `dH/dx` evaluated at `x = X(t_i)`, `v = u_{i+k}` from the same adjoint arrays.
pub fn driver_hamiltonian_gap(
    model: &Model,
    u: &ControlPath,
    x: &StatePaths,
    sol: &AdjointSolution,
) -> Result<f64, ControlError> {
    let n = model.steps();
    let k = model.k();
    let mut worst: f64 = 0.0;
    for i in 0..n {
        let h = driver_h(model, u, x, sol, i)?;
        let m = i + k;
        for (path, hv) in h.iter().enumerate() {
            let reference = if m < n {
                let inp = HamiltonianInputs::from_solution(sol, x, path, m, u.get(m));
                debug_assert_eq!(inp.x, x.at(path, i as isize));
                hamiltonian_grad_x(model, &inp)?
            } else {
                0.0
            };
            worst = worst.max((hv - reference).abs());
        }
    }
    Ok(worst)
}

/// Uniform random directions in `[-1, 1]^N`.
pub fn random_directions(steps: usize, count: usize, seed: u64) -> Vec<ControlPath> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| ControlPath::unchecked((0..steps).map(|_| rng.random_range(-1.0..=1.0)).collect()))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckRow {
    pub id: usize,
    pub adjoint: f64,
    pub adjoint_stderr: f64,
    pub fd: f64,
    pub fd_stderr: f64,
    pub gap: f64,
    /// `sigmas * sqrt(se_adjoint^2 + se_fd^2) + slack`.
    pub bound: f64,
    pub pass: bool,
}

/// Compares `sum_j grad_j beta_j dt` with the central difference of the reward.
#[allow(clippy::too_many_arguments)]
pub fn gradient_check(
    model: &Model,
    u: &ControlPath,
    w: &BrownianEnsemble,
    betas: &[ControlPath],
    eps: f64,
    sigmas: f64,
    slack: f64,
    opts: &AdjointOptions,
) -> Result<Vec<GradCheckRow>, ControlError> {
    let x = simulate_state(model, u, w)?;
    let sol = solve_adjoint(model, u, &x, w, opts)?;
    let field = gradient_from_adjoint(model, u, &x, &sol)?;
    betas
        .iter()
        .enumerate()
        .map(|(id, beta)| {
            let adj = field.directional(beta, model.grid.dt());
            let fd = directional_derivative_fd(model, u, beta, w, eps)?;
            let gap = (adj.value - fd.value).abs();
            let bound = sigmas * adj.stderr.hypot(fd.stderr) + slack;
            Ok(GradCheckRow {
                id,
                adjoint: adj.value,
                adjoint_stderr: adj.stderr,
                fd: fd.value,
                fd_stderr: fd.stderr,
                gap,
                bound,
                pass: gap <= bound,
            })
        })
        .collect()
}
