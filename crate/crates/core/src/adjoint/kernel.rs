//! Kernel estimators and checks on a solved adjoint.

use rayon::prelude::*;

use super::{driver_value, AdjointError, AdjointSolution};
use crate::brownian::BrownianEnsemble;
use crate::forward::{resimulate_row, simulate_row, StatePaths};
use crate::malliavin::{malliavin_derivative, FeatureMatrix, PathFunctional, Projector};
use crate::paths::{fixed_sum, mean_stderr, rms, PathMatrix};
use crate::problem::{ControlPath, Model};

fn kernel_target(g: &[f64], w: &BrownianEnsemble, j: usize) -> Vec<f64> {
    g.iter().enumerate().map(|(m, v)| v * w.dw(m, j) / w.dt()).collect()
}

/// Conditional-covariance estimate `q(t_i, s_j) = E[G_i dB_j | F_j] / dt` for `j > i`.
pub fn q_regression(
    g: &[f64],
    i: usize,
    j: usize,
    w: &BrownianEnsemble,
    features: &FeatureMatrix,
    ridge: f64,
) -> Result<Vec<f64>, AdjointError> {
    if j <= i {
        return Err(AdjointError::Pair { i, j });
    }
    Ok(Projector::new(features, ridge)?.fitted(&kernel_target(g, w, j))?)
}

/// `q(t_i, t_i) = E[G_i dB_i | F_i] / dt`.
pub fn diagonal_q(g: &[f64], i: usize, w: &BrownianEnsemble, features: &FeatureMatrix, ridge: f64) -> Result<Vec<f64>, AdjointError> {
    Ok(Projector::new(features, ridge)?.fitted(&kernel_target(g, w, i))?)
}

/// Representation estimate `q(t_i, s_j) = E[D_{s_j} G | F_j]` for `j > i`.
#[allow(clippy::too_many_arguments)]
pub fn q_malliavin<F: PathFunctional + ?Sized>(
    g: &F,
    i: usize,
    j: usize,
    w: &BrownianEnsemble,
    features: &FeatureMatrix,
    ridge: f64,
    bump: f64,
) -> Result<Vec<f64>, AdjointError> {
    if j <= i {
        return Err(AdjointError::Pair { i, j });
    }
    let d: Vec<f64> = (0..w.paths())
        .into_par_iter()
        .map(|m| malliavin_derivative(g, w.path(m), j, bump))
        .collect::<Result<_, _>>()?;
    Ok(Projector::new(features, ridge)?.fitted(&d)?)
}

/// The targets `G_a` of a solved adjoint, re-evaluated on arbitrary
/// increments with the regression fits held fixed.
pub struct AdjointFunctional<'a> {
    model: &'a Model,
    u: &'a ControlPath,
    sol: &'a AdjointSolution,
}

impl<'a> AdjointFunctional<'a> {
    pub fn new(model: &'a Model, u: &'a ControlPath, sol: &'a AdjointSolution) -> Self {
        Self { model, u, sol }
    }

    fn row_len(&self) -> usize {
        self.model.steps() + self.model.k() + 1
    }

    /// `G_0..=G_N` for a path with increments `incs` and state row `xrow`.
    pub fn targets(&self, incs: &[f64], xrow: &[f64], out: &mut Vec<f64>) {
        let n = self.model.steps();
        let k = self.model.k();
        let basis = self.sol.basis();
        let dt = self.model.grid.dt();
        let mut feats: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
        let mut level = 0.0;
        let mut buf = Vec::new();
        for j in 0..=n {
            basis.eval_into(level, xrow[j + k], &mut buf);
            feats.push(buf.clone());
            if j < n {
                level += incs[j];
            }
        }
        let terminal = self.model.spec.g.d_x(xrow[n + k]);
        let p: Vec<f64> = (0..=n)
            .map(|a| match self.sol.p_fit(a) {
                Some(fit) if a < n => fit.predict(&feats[a]),
                _ => terminal,
            })
            .collect();
        let mut h = vec![0.0; n];
        for (i, hi) in h.iter_mut().enumerate() {
            let m = i + k;
            if m >= n {
                break;
            }
            *hi = driver_value(
                self.model,
                self.u.values(),
                i,
                xrow[i + k],
                |a| p[a],
                |a| {
                    self.sol
                        .column_fit(a, m)
                        .map_or(0.0, |fit| fit.predict(&feats[m]))
                },
            );
        }
        out.clear();
        out.resize(n + 1, 0.0);
        out[n] = terminal;
        for i in (0..n).rev() {
            out[i] = out[i + 1] + h[i] * dt;
        }
    }

    /// `G_a` as a functional of the increments (full re-simulation).
    pub fn target(&'a self, a: usize) -> AdjointTarget<'a> {
        AdjointTarget { inner: self, a }
    }
}

/// One `G_a` of an [`AdjointFunctional`].
pub struct AdjointTarget<'a> {
    inner: &'a AdjointFunctional<'a>,
    a: usize,
}

impl PathFunctional for AdjointTarget<'_> {
    fn eval(&self, increments: &[f64]) -> f64 {
        let mut row = vec![0.0; self.inner.row_len()];
        if simulate_row(self.inner.model, self.inner.u.values(), increments, &mut row).is_err() {
            return f64::NAN;
        }
        let mut out = Vec::new();
        self.inner.targets(increments, &row, &mut out);
        out[self.a]
    }
}

/// Agreement of the regression and representation kernel estimators over
/// all pairs `(i, j)`, `i < j`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelComparison {
    pub pairs: usize,
    /// Root mean square of `q_malliavin - q_regression` over pairs and paths.
    pub gap_rms: f64,
    pub regression_rms: f64,
    pub malliavin_rms: f64,
    /// Root mean square sampling noise of the two fits.
    pub noise_rms: f64,
}

impl KernelComparison {
    /// `gap / ||q||` with `||q||` the representation estimate.
    pub fn relative_gap(&self) -> f64 {
        self.gap_rms / self.malliavin_rms
    }

    /// `gap <= rel ||q|| + sigmas * noise`.
    pub fn passes(&self, rel: f64, sigmas: f64) -> bool {
        self.gap_rms <= rel * self.malliavin_rms + sigmas * self.noise_rms
    }
}

/// Compares `q_regression` with `q_malliavin` applied to the solved targets
/// `G_i` over every pair `i < j`.
pub fn compare_kernel_estimators(
    model: &Model,
    u: &ControlPath,
    x: &StatePaths,
    w: &BrownianEnsemble,
    sol: &AdjointSolution,
    bump: f64,
) -> Result<KernelComparison, AdjointError> {
    let n = model.steps();
    let paths = w.paths();
    let func = AdjointFunctional::new(model, u, sol);
    let len = func.row_len();
    let mut sums = [0.0f64; 4];
    let mut pairs = 0;
    for j in 1..n {
        let proj = Projector::new(&sol.basis().features(w, Some(x), j), sol.ridge())?;
        let mut deriv = PathMatrix::zeros(paths, j);
        let failed: Vec<usize> = deriv
            .par_rows_mut()
            .enumerate()
            .filter_map(|(m, out)| {
                let base = w.path(m);
                let mut incs = base.to_vec();
                let mut row = vec![0.0; len];
                let mut up = Vec::new();
                let mut down = Vec::new();
                incs[j] = base[j] + bump;
                resimulate_row(model, u.values(), base, x.row(m), &incs, j, &mut row).ok()?;
                func.targets(&incs, &row, &mut up);
                incs[j] = base[j] - bump;
                resimulate_row(model, u.values(), base, x.row(m), &incs, j, &mut row).ok()?;
                func.targets(&incs, &row, &mut down);
                for i in 0..j {
                    out[i] = (up[i] - down[i]) / (2.0 * bump);
                }
                if out.iter().all(|v| v.is_finite()) {
                    None
                } else {
                    Some(m)
                }
            })
            .collect();
        if !failed.is_empty() {
            return Err(AdjointError::Malliavin(crate::malliavin::MalliavinError::NonFinite { index: j }));
        }
        let dof = proj.dof() as f64;
        for i in 0..j {
            let target_r = kernel_target(&sol.g_at(i), w, j);
            let target_m = deriv.column(i);
            let qr = proj.fitted(&target_r)?;
            let qm = proj.fitted(&target_m)?;
            let mut acc = [0.0f64; 4];
            for m in 0..paths {
                acc[0] += (qm[m] - qr[m]).powi(2);
                acc[1] += qr[m] * qr[m];
                acc[2] += qm[m] * qm[m];
                acc[3] += ((target_r[m] - qr[m]).powi(2) + (target_m[m] - qm[m]).powi(2)) * dof / paths as f64;
            }
            for c in 0..4 {
                sums[c] += acc[c] / paths as f64;
            }
            pairs += 1;
        }
    }
    let norm = |s: f64| (s / pairs.max(1) as f64).sqrt();
    Ok(KernelComparison {
        pairs,
        gap_rms: norm(sums[0]),
        regression_rms: norm(sums[1]),
        malliavin_rms: norm(sums[2]),
        noise_rms: norm(sums[3]),
    })
}

/// Sample mean of the per-path defect of the integral equation at one index.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResidualRow {
    pub index: usize,
    pub mean: f64,
    pub stderr: f64,
    pub rms: f64,
}

/// Defect `p_i - [G_i - sum_{j >= i} q(t_i, s_j) dB_j]` per index; needs the
/// full kernel.
pub fn bsvie_residual(sol: &AdjointSolution, w: &BrownianEnsemble) -> Result<Vec<ResidualRow>, AdjointError> {
    let n = sol.steps();
    let mut rows = Vec::with_capacity(n);
    for i in 0..n {
        let g = sol.g_at(i);
        let q: Vec<Vec<f64>> = (i..n).map(|j| sol.q_pair(i, j)).collect::<Result<_, _>>()?;
        let defect: Vec<f64> = (0..sol.paths())
            .map(|m| {
                let mart: Vec<f64> = (i..n).map(|j| q[j - i][m] * w.dw(m, j)).collect();
                sol.p(m, i) - (g[m] - fixed_sum(&mart))
            })
            .collect();
        let (mean, stderr) = mean_stderr(&defect);
        rows.push(ResidualRow {
            index: i,
            mean,
            stderr,
            rms: rms(&defect),
        });
    }
    Ok(rows)
}
