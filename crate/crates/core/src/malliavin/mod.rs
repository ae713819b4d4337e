//! Calculus on the discrete Wiener space: Malliavin derivatives as
//! sensitivities to single increments, regression estimates of conditional
//! expectations, the Clark-Ocone reconstruction and the duality check.

mod functionals;
mod regression;

pub use functionals::{standard_functionals, Constant, TerminalLevel, TerminalSquare, WienerIntegral};
pub use regression::{conditional_expectation, Basis, FeatureMatrix, LinearFit, Projector, RegressionError};

use rayon::prelude::*;
use thiserror::Error;

use crate::brownian::BrownianEnsemble;
use crate::grid::TimeGrid;
use crate::paths::{fixed_sum, mean, mean_stderr, PathMatrix};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MalliavinError {
    #[error(transparent)]
    Regression(#[from] RegressionError),
    #[error("functional is not finite at the bumped point (index {index})")]
    NonFinite { index: usize },
    #[error("index {index} outside 0..{steps}")]
    Index { index: usize, steps: usize },
    #[error("integrand has {got} values, grid has {expected} steps")]
    Integrand { expected: usize, got: usize },
}

/// A scalar functional of one path's increments `dB_0..dB_{N-1}`.
pub trait PathFunctional: Sync {
    fn eval(&self, increments: &[f64]) -> f64;
}

impl<F: Fn(&[f64]) -> f64 + Sync> PathFunctional for F {
    fn eval(&self, increments: &[f64]) -> f64 {
        self(increments)
    }
}

/// Default bump `1e-4 * sqrt(dt)`.
pub fn default_bump(grid: &TimeGrid) -> f64 {
    1e-4 * grid.dt().sqrt()
}

/// Central difference of `F` in the increment `dB_j`.
pub fn malliavin_derivative<F: PathFunctional + ?Sized>(
    f: &F,
    path: &[f64],
    j: usize,
    bump: f64,
) -> Result<f64, MalliavinError> {
    if j >= path.len() {
        return Err(MalliavinError::Index {
            index: j,
            steps: path.len(),
        });
    }
    let mut buf = path.to_vec();
    buf[j] = path[j] + bump;
    let up = f.eval(&buf);
    buf[j] = path[j] - bump;
    let down = f.eval(&buf);
    let d = (up - down) / (2.0 * bump);
    if d.is_finite() {
        Ok(d)
    } else {
        Err(MalliavinError::NonFinite { index: j })
    }
}

/// `D_j F` for every path and every index.
pub fn derivative_matrix<F: PathFunctional + ?Sized>(
    f: &F,
    w: &BrownianEnsemble,
    bump: f64,
) -> Result<PathMatrix, MalliavinError> {
    let n = w.steps();
    let mut out = PathMatrix::zeros(w.paths(), n);
    let bad: Vec<usize> = out
        .par_rows_mut()
        .enumerate()
        .filter_map(|(m, row)| {
            let mut buf = w.path(m).to_vec();
            for j in 0..n {
                let base = buf[j];
                buf[j] = base + bump;
                let up = f.eval(&buf);
                buf[j] = base - bump;
                let down = f.eval(&buf);
                buf[j] = base;
                row[j] = (up - down) / (2.0 * bump);
                if !row[j].is_finite() {
                    return Some(j);
                }
            }
            None
        })
        .collect();
    if let Some(&index) = bad.iter().min() {
        return Err(MalliavinError::NonFinite { index });
    }
    Ok(out)
}

/// Adapted Clark-Ocone integrand `E[D_j F | F_j]` for all paths and indices.
///
/// The features at index `j` see `dB_0..dB_{j-1}` only.
pub fn clark_ocone_integrand<F: PathFunctional + ?Sized>(
    f: &F,
    w: &BrownianEnsemble,
    basis: Basis,
    ridge: f64,
    bump: f64,
) -> Result<PathMatrix, MalliavinError> {
    basis.validate()?;
    let d = derivative_matrix(f, w, bump)?;
    let mut out = PathMatrix::zeros(w.paths(), w.steps());
    for j in 0..w.steps() {
        let proj = Projector::new(&basis.features(w, None, j), ridge)?;
        out.set_column(j, &proj.fitted(&d.column(j))?);
    }
    Ok(out)
}

fn values<F: PathFunctional + ?Sized>(f: &F, w: &BrownianEnsemble) -> Vec<f64> {
    (0..w.paths()).into_par_iter().map(|m| f.eval(w.path(m))).collect()
}

/// Per-path reconstruction errors and their root mean square.
#[derive(Debug, Clone)]
pub struct ClarkOconeReport {
    pub errors: Vec<f64>,
    pub rms: f64,
    /// Standard error of `rms` (delta method).
    pub rms_stderr: f64,
}

/// Errors `F - (E_M[F] + sum_j E[D_j F | F_j] dB_j)`.
pub fn clark_ocone_reconstruct<F: PathFunctional + ?Sized>(
    f: &F,
    w: &BrownianEnsemble,
    basis: Basis,
    ridge: f64,
    bump: f64,
) -> Result<ClarkOconeReport, MalliavinError> {
    let integrand = clark_ocone_integrand(f, w, basis, ridge, bump)?;
    let fv = values(f, w);
    let stoch: Vec<f64> = (0..w.paths())
        .map(|m| {
            let terms: Vec<f64> = (0..w.steps()).map(|j| integrand.get(m, j) * w.dw(m, j)).collect();
            fixed_sum(&terms)
        })
        .collect();
    let resid: Vec<f64> = fv.iter().zip(&stoch).map(|(f, s)| f - s).collect();
    let mu = mean(&resid);
    let errors: Vec<f64> = resid.iter().map(|r| r - mu).collect();
    let sq: Vec<f64> = errors.iter().map(|e| e * e).collect();
    let (ms, ms_se) = mean_stderr(&sq);
    let rms = ms.sqrt();
    let rms_stderr = if rms > 0.0 { ms_se / (2.0 * rms) } else { 0.0 };
    Ok(ClarkOconeReport {
        errors,
        rms,
        rms_stderr,
    })
}

/// Both sides of `E[F int phi dB] = E[int E[D_t F | F_t] phi dt]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DualityReport {
    pub lhs: f64,
    pub rhs: f64,
    pub gap: f64,
    /// Standard error of the per-path difference.
    pub stderr: f64,
}

impl DualityReport {
    pub fn passes(&self, sigmas: f64) -> bool {
        self.gap.abs() <= sigmas * self.stderr + 1e-12 * (1.0 + self.lhs.abs())
    }
}

pub fn duality_check<F: PathFunctional + ?Sized>(
    f: &F,
    phi: &[f64],
    w: &BrownianEnsemble,
    basis: Basis,
    ridge: f64,
    bump: f64,
) -> Result<DualityReport, MalliavinError> {
    if phi.len() != w.steps() {
        return Err(MalliavinError::Integrand {
            expected: w.steps(),
            got: phi.len(),
        });
    }
    let integrand = clark_ocone_integrand(f, w, basis, ridge, bump)?;
    Ok(duality_from_integrand(&values(f, w), &integrand, phi, w))
}

/// Duality check from precomputed values and adapted integrand.
pub fn duality_from_integrand(fv: &[f64], integrand: &PathMatrix, phi: &[f64], w: &BrownianEnsemble) -> DualityReport {
    let n = w.steps();
    let dt = w.dt();
    let mut left = Vec::with_capacity(w.paths());
    let mut right = Vec::with_capacity(w.paths());
    for m in 0..w.paths() {
        let stoch: Vec<f64> = (0..n).map(|j| phi[j] * w.dw(m, j)).collect();
        let det: Vec<f64> = (0..n).map(|j| integrand.get(m, j) * phi[j] * dt).collect();
        left.push(fv[m] * fixed_sum(&stoch));
        right.push(fixed_sum(&det));
    }
    let diff: Vec<f64> = left.iter().zip(&right).map(|(a, b)| a - b).collect();
    let (gap, stderr) = mean_stderr(&diff);
    DualityReport {
        lhs: mean(&left),
        rhs: mean(&right),
        gap,
        stderr,
    }
}
