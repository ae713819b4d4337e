//! The Hamiltonian of the discrete problem and its partial derivatives.

use super::ControlError;
use crate::adjoint::AdjointSolution;
use crate::forward::StatePaths;
use crate::problem::Model;

/// Arguments of the Hamiltonian at grid index `i` on one path.
#[derive(Debug, Clone, Copy)]
pub struct HamiltonianInputs<'a> {
    pub index: usize,
    /// Delayed state `X(t_i - delta)`.
    pub x: f64,
    /// Control value.
    pub v: f64,
    /// `p(t_{i+1}), ..., p(t_N)`.
    pub p_ahead: &'a [f64],
    /// `q(t_{i+1}, t_i), q(t_{i+2}, t_i), ...` as far as materialized.
    pub q_column: &'a [f64],
}

impl<'a> HamiltonianInputs<'a> {
    /// Inputs on path `path` at index `index` from a solved adjoint.
    pub fn from_solution(sol: &'a AdjointSolution, x: &StatePaths, path: usize, index: usize, v: f64) -> Self {
        Self {
            index,
            x: x.delayed(path, index),
            v,
            p_ahead: &sol.p_row(path)[index + 1..],
            q_column: sol.q_column(path, index).unwrap_or(&[]),
        }
    }
}

#[derive(Clone, Copy)]
enum Part {
    Value,
    DerivU,
    DerivX,
}

fn assemble(model: &Model, inp: &HamiltonianInputs<'_>, part: Part) -> Result<f64, ControlError> {
    let grid = &model.grid;
    let spec = &model.spec;
    let n = grid.steps();
    let i = inp.index;
    if i >= n || inp.p_ahead.len() < n - i {
        return Err(ControlError::Index { index: i, steps: n });
    }
    let dt = grid.dt();
    let (ti, tn) = (grid.t(i), grid.t(i + 1));
    let (x, v) = (inp.x, inp.v);
    let (f, b, s) = match part {
        Part::Value => (spec.f.value(ti, x, v), spec.b.value(tn, ti, x, v), spec.sigma.value(tn, ti, x, v)),
        Part::DerivU => (spec.f.d_u(ti, x, v), spec.b.d_u(tn, ti, x, v), spec.sigma.d_u(tn, ti, x, v)),
        Part::DerivX => (spec.f.d_x(ti, x, v), spec.b.d_x(tn, ti, x, v), spec.sigma.d_x(tn, ti, x, v)),
    };
    let q0 = *inp.q_column.first().ok_or(ControlError::KernelAudit { a: i + 1, m: i })?;
    let mut h = f + inp.p_ahead[0] * b + q0 * s;
    let slope = |k: &dyn crate::problem::VolterraKernel, t: f64| match part {
        Part::Value => k.d_t(t, ti, x, v),
        Part::DerivU => k.d_tu(t, ti, x, v),
        Part::DerivX => k.d_tx(t, ti, x, v),
    };
    if !spec.b.structure().t_homogeneous() {
        for l in i + 1..n {
            h += inp.p_ahead[l - i] * slope(spec.b.as_ref(), grid.midpoint(l)) * dt;
        }
    }
    if !spec.sigma.structure().t_homogeneous() {
        if inp.q_column.len() < n - i {
            return Err(ControlError::KernelAudit {
                a: i + inp.q_column.len() + 1,
                m: i,
            });
        }
        for l in i + 1..n {
            h += inp.q_column[l - i] * slope(spec.sigma.as_ref(), grid.midpoint(l)) * dt;
        }
    }
    Ok(h)
}

/// `H = f + p b + q sigma` plus the kernel time-derivative sums.
pub fn hamiltonian(model: &Model, inputs: &HamiltonianInputs<'_>) -> Result<f64, ControlError> {
    assemble(model, inputs, Part::Value)
}

/// `dH/du` at the inputs.
pub fn hamiltonian_grad_u(model: &Model, inputs: &HamiltonianInputs<'_>) -> Result<f64, ControlError> {
    assemble(model, inputs, Part::DerivU)
}

/// `dH/dx` at the inputs.
pub fn hamiltonian_grad_x(model: &Model, inputs: &HamiltonianInputs<'_>) -> Result<f64, ControlError> {
    assemble(model, inputs, Part::DerivX)
}
