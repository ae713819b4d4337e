//! Hamiltonian, adjoint gradient, projected gradient ascent and the
//! maximum-principle verifiers.

mod hamiltonian;
mod optimize;
mod verify;

pub use hamiltonian::{hamiltonian, hamiltonian_grad_u, hamiltonian_grad_x, HamiltonianInputs};
pub use optimize::{optimize, HistoryRow, OptimizerSettings, OptimizerState, OptimizerStatus};
pub use verify::{
    default_v_grid, driver_hamiltonian_gap, gradient_check, necessary_mp_residual, random_directions,
    sufficient_mp_check, GradCheckRow, NecessaryReport, SufficientReport, SufficientRow,
};

use rayon::prelude::*;
use thiserror::Error;

use crate::adjoint::{solve_adjoint, AdjointError, AdjointOptions, AdjointSolution};
use crate::brownian::BrownianEnsemble;
use crate::forward::{simulate_state, Estimate, ForwardError, StatePaths};
use crate::paths::{mean_stderr, PathMatrix};
use crate::problem::{ControlBounds, ControlPath, Model};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ControlError {
    #[error(transparent)]
    Forward(#[from] ForwardError),
    #[error(transparent)]
    Adjoint(#[from] AdjointError),
    #[error("kernel column q(., t_{m}) stops before t_{a}; rerun with the full kernel materialized (--full-kernel)")]
    KernelAudit { a: usize, m: usize },
    #[error("index {index} outside 0..{steps} or adjoint slice too short")]
    Index { index: usize, steps: usize },
    #[error("invalid optimizer setting: {0}")]
    Settings(String),
    #[error("control grid is empty")]
    EmptyGrid,
}

/// Per-path `dH/du` and its path average at each index.
#[derive(Debug, Clone)]
pub struct GradientField {
    pub per_path: PathMatrix,
    pub grad: Vec<f64>,
    pub stderr: Vec<f64>,
}

impl GradientField {
    /// `sum_j grad_j beta_j dt` with its standard error.
    pub fn directional(&self, beta: &ControlPath, dt: f64) -> Estimate {
        let vals: Vec<f64> = (0..self.per_path.rows())
            .map(|m| {
                self.per_path
                    .row(m)
                    .iter()
                    .zip(beta.values())
                    .map(|(g, b)| g * b * dt)
                    .sum()
            })
            .collect();
        let (value, stderr) = mean_stderr(&vals);
        Estimate { value, stderr }
    }

    /// Sup norm of the gradient with outward components at active bounds removed.
    pub fn projected_sup_norm(&self, u: &ControlPath, bounds: &ControlBounds) -> f64 {
        self.grad
            .iter()
            .zip(u.values())
            .map(|(g, v)| {
                let blocked = (*v <= bounds.min() && *g < 0.0) || (*v >= bounds.max() && *g > 0.0);
                if blocked {
                    0.0
                } else {
                    g.abs()
                }
            })
            .fold(0.0, f64::max)
    }
}

/// `dH/du` along the control from a solved adjoint.
pub fn gradient_from_adjoint(
    model: &Model,
    u: &ControlPath,
    x: &StatePaths,
    sol: &AdjointSolution,
) -> Result<GradientField, ControlError> {
    let n = model.steps();
    let mut per_path = PathMatrix::zeros(x.paths(), n);
    let errors: Vec<ControlError> = per_path
        .par_rows_mut()
        .enumerate()
        .filter_map(|(m, row)| {
            for (i, out) in row.iter_mut().enumerate() {
                let inp = HamiltonianInputs::from_solution(sol, x, m, i, u.get(i));
                match hamiltonian_grad_u(model, &inp) {
                    Ok(v) => *out = v,
                    Err(e) => return Some(e),
                }
            }
            None
        })
        .collect();
    if let Some(e) = errors.into_iter().next() {
        return Err(e);
    }
    let (grad, stderr) = (0..n).map(|i| mean_stderr(&per_path.column(i))).unzip();
    Ok(GradientField { per_path, grad, stderr })
}

/// Simulates the state, solves the adjoint and averages `dH/du` per index.
pub fn cost_gradient(
    model: &Model,
    u: &ControlPath,
    w: &BrownianEnsemble,
    opts: &AdjointOptions,
) -> Result<GradientField, ControlError> {
    let x = simulate_state(model, u, w)?;
    let sol = solve_adjoint(model, u, &x, w, opts)?;
    gradient_from_adjoint(model, u, &x, &sol)
}

/// Componentwise clamp onto the control bounds.
pub fn project(u: &ControlPath, bounds: &ControlBounds) -> ControlPath {
    ControlPath::unchecked(u.values().iter().map(|v| bounds.clamp(*v)).collect())
}
