//! Projected gradient ascent with common random numbers.

use super::{gradient_from_adjoint, project, ControlError, GradientField};
use crate::adjoint::{solve_adjoint, AdjointOptions, AdjointSolution};
use crate::brownian::BrownianEnsemble;
use crate::forward::{cost, simulate_state, ForwardError};
use crate::problem::{ControlPath, Model};

const MAX_HALVINGS: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerSettings {
    pub eta0: f64,
    pub max_iter: usize,
    pub tol: f64,
    pub adjoint: AdjointOptions,
    /// Reuse the adjoint of the starting control (diagnostics only).
    pub freeze_adjoint: bool,
}

impl Default for OptimizerSettings {
    fn default() -> Self {
        Self {
            eta0: 0.5,
            max_iter: 200,
            tol: 1e-3,
            adjoint: AdjointOptions::default(),
            freeze_adjoint: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerStatus {
    Converged,
    MaxIterations,
    Stagnated,
}

impl OptimizerStatus {
    /// Process-style status code; zero only on convergence.
    pub fn code(&self) -> i32 {
        match self {
            OptimizerStatus::Converged => 0,
            OptimizerStatus::MaxIterations => 3,
            OptimizerStatus::Stagnated => 4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HistoryRow {
    pub iter: usize,
    pub j: f64,
    pub stderr: f64,
    pub grad_norm: f64,
    pub eta: f64,
}

#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub u: ControlPath,
    pub eta: f64,
    pub iteration: usize,
    pub history: Vec<HistoryRow>,
    pub status: OptimizerStatus,
    /// Gradient at `u`.
    pub gradient: GradientField,
}

impl OptimizerState {
    pub fn grad_norms(&self) -> Vec<f64> {
        self.history.iter().map(|r| r.grad_norm).collect()
    }

    pub fn j_history(&self) -> Vec<(f64, f64)> {
        self.history.iter().map(|r| (r.j, r.stderr)).collect()
    }
}

#[derive(Clone)]
struct Point {
    u: ControlPath,
    j: f64,
    stderr: f64,
    grad: GradientField,
    norm: f64,
}

/// Maximizes the reward by `u <- project(u + eta grad)`.
///
/// The step is halved whenever the reward falls by more than three standard
/// errors and grown by 1.5 (capped at `eta0`) after each accepted step.
/// Iteration stops when the projected gradient sup norm is at most `tol`.
pub fn optimize(
    model: &Model,
    u0: &ControlPath,
    w: &BrownianEnsemble,
    settings: &OptimizerSettings,
) -> Result<OptimizerState, ControlError> {
    if !(settings.eta0 > 0.0 && settings.eta0.is_finite() && settings.tol >= 0.0) {
        return Err(ControlError::Settings(format!(
            "eta0 = {} must be positive, tol = {} non-negative",
            settings.eta0, settings.tol
        )));
    }
    model.check_control(u0).map_err(ForwardError::from)?;
    let bounds = model.spec.bounds;
    let mut frozen: Option<AdjointSolution> = None;
    let mut evaluate = |u: ControlPath, with_grad: bool| -> Result<(Point, bool), ControlError> {
        let x = simulate_state(model, &u, w)?;
        let (j, stderr) = cost(model, &u, &x);
        if !with_grad {
            let empty = GradientField {
                per_path: crate::paths::PathMatrix::zeros(0, 0),
                grad: Vec::new(),
                stderr: Vec::new(),
            };
            return Ok((Point { u, j, stderr, grad: empty, norm: f64::NAN }, false));
        }
        let grad = if settings.freeze_adjoint {
            if frozen.is_none() {
                frozen = Some(solve_adjoint(model, &u, &x, w, &settings.adjoint)?);
            }
            gradient_from_adjoint(model, &u, &x, frozen.as_ref().expect("set above"))?
        } else {
            let sol = solve_adjoint(model, &u, &x, w, &settings.adjoint)?;
            gradient_from_adjoint(model, &u, &x, &sol)?
        };
        let norm = grad.projected_sup_norm(&u, &bounds);
        Ok((Point { u, j, stderr, grad, norm }, true))
    };

    let (mut cur, _) = evaluate(u0.clone(), true)?;
    let mut best = cur.clone();
    let mut eta = settings.eta0;
    let mut history = vec![HistoryRow {
        iter: 0,
        j: cur.j,
        stderr: cur.stderr,
        grad_norm: cur.norm,
        eta,
    }];
    let mut status = OptimizerStatus::MaxIterations;
    let mut iteration = 0;
    while iteration < settings.max_iter {
        if cur.norm <= settings.tol {
            status = OptimizerStatus::Converged;
            break;
        }
        let mut halvings = 0;
        let accepted = loop {
            let step = ControlPath::unchecked(
                cur.u
                    .values()
                    .iter()
                    .zip(&cur.grad.grad)
                    .map(|(u, g)| u + eta * g)
                    .collect(),
            );
            let (trial, _) = evaluate(project(&step, &bounds), false)?;
            if trial.j >= cur.j - 3.0 * trial.stderr {
                break Some(trial.u);
            }
            halvings += 1;
            eta *= 0.5;
            if halvings >= MAX_HALVINGS {
                break None;
            }
        };
        let Some(next) = accepted else {
            status = OptimizerStatus::Stagnated;
            break;
        };
        iteration += 1;
        eta = (eta * 1.5).min(settings.eta0);
        cur = evaluate(next, true)?.0;
        if cur.j > best.j {
            best = cur.clone();
        }
        history.push(HistoryRow {
            iter: iteration,
            j: cur.j,
            stderr: cur.stderr,
            grad_norm: cur.norm,
            eta,
        });
    }
    if status == OptimizerStatus::MaxIterations && cur.norm <= settings.tol {
        status = OptimizerStatus::Converged;
    }
    if status != OptimizerStatus::Converged && best.j > cur.j {
        cur = best;
    }
    Ok(OptimizerState {
        u: cur.u,
        eta,
        iteration,
        history,
        status,
        gradient: cur.grad,
    })
}
