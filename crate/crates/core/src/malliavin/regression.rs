//! Ridge least-squares projection onto polynomial features of the
//! information available at a grid index.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use thiserror::Error;

use crate::brownian::BrownianEnsemble;
use crate::forward::StatePaths;
use crate::paths::fixed_sum;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RegressionError {
    #[error("{paths} paths are too few for {basis} basis functions (need at least 10 per function)")]
    TooFewPaths { paths: usize, basis: usize },
    #[error("feature column `{column}` is not finite on path {path}")]
    NonFiniteFeature { column: String, path: usize },
    #[error("regression target is not finite on path {path}")]
    NonFiniteTarget { path: usize },
    #[error("design is rank deficient beyond ridge rescue; offending column `{column}`")]
    RankDeficient { column: String },
    #[error("length mismatch: {expected} paths expected, got {got}")]
    Length { expected: usize, got: usize },
    #[error("basis degree must be between 1 and 4, got {0}")]
    Degree(usize),
}

/// Monomials `B(t_j)^d` and optionally `X(t_j)^d` for `1 <= d <= degree`,
/// plus an intercept.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Basis {
    pub degree: usize,
    pub state: bool,
}

impl Basis {
    pub fn brownian(degree: usize) -> Self {
        Self { degree, state: false }
    }

    pub fn with_state(degree: usize) -> Self {
        Self { degree, state: true }
    }

    pub fn validate(&self) -> Result<(), RegressionError> {
        if (1..=4).contains(&self.degree) {
            Ok(())
        } else {
            Err(RegressionError::Degree(self.degree))
        }
    }

    /// Number of basis functions including the intercept.
    pub fn size(&self) -> usize {
        1 + self.degree * if self.state { 2 } else { 1 }
    }

    pub fn names(&self) -> Vec<String> {
        let mut names: Vec<String> = (1..=self.degree).map(|d| format!("B^{d}")).collect();
        if self.state {
            names.extend((1..=self.degree).map(|d| format!("X^{d}")));
        }
        names
    }

    /// Non-intercept features of one path.
    pub fn eval_into(&self, b: f64, x: f64, out: &mut Vec<f64>) {
        out.clear();
        let mut p = 1.0;
        for _ in 0..self.degree {
            p *= b;
            out.push(p);
        }
        if self.state {
            let mut p = 1.0;
            for _ in 0..self.degree {
                p *= x;
                out.push(p);
            }
        }
    }

    /// Feature matrix at index `j` built from `B(t_j)` and, if requested, `X(t_j)`.
    pub fn features(&self, w: &BrownianEnsemble, x: Option<&StatePaths>, j: usize) -> FeatureMatrix {
        let names = self.names();
        let mut columns = vec![Vec::with_capacity(w.paths()); names.len()];
        let mut buf = Vec::with_capacity(names.len());
        for m in 0..w.paths() {
            let xv = match (self.state, x) {
                (true, Some(x)) => x.at(m, j as isize),
                _ => 0.0,
            };
            self.eval_into(w.level(m, j), xv, &mut buf);
            for (c, v) in buf.iter().enumerate() {
                columns[c].push(*v);
            }
        }
        FeatureMatrix { names, columns }
    }
}

/// Column-stored design matrix without intercept.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    names: Vec<String>,
    columns: Vec<Vec<f64>>,
}

impl FeatureMatrix {
    pub fn new(names: Vec<String>, columns: Vec<Vec<f64>>) -> Result<Self, RegressionError> {
        let rows = columns.first().map_or(0, Vec::len);
        for c in &columns {
            if c.len() != rows {
                return Err(RegressionError::Length {
                    expected: rows,
                    got: c.len(),
                });
            }
        }
        Ok(Self { names, columns })
    }

    pub fn rows(&self) -> usize {
        self.columns.first().map_or(0, Vec::len)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn columns(&self) -> &[Vec<f64>] {
        &self.columns
    }
}

/// Coefficients of a fitted projection, reusable on new feature values.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearFit {
    pub intercept: f64,
    kept: Vec<usize>,
    means: Vec<f64>,
    scales: Vec<f64>,
    beta: Vec<f64>,
}

impl LinearFit {
    /// Evaluates the fit at raw (non-intercept) feature values.
    pub fn predict(&self, raw: &[f64]) -> f64 {
        let mut acc = self.intercept;
        for (c, &col) in self.kept.iter().enumerate() {
            acc += self.beta[c] * (raw[col] - self.means[c]) / self.scales[c];
        }
        acc
    }
}

/// Factorized design; projects any number of targets onto the same basis.
#[derive(Debug, Clone)]
pub struct Projector {
    rows: usize,
    kept: Vec<usize>,
    means: Vec<f64>,
    scales: Vec<f64>,
    z: Vec<Vec<f64>>,
    evecs: DMatrix<f64>,
    evals: DVector<f64>,
}

impl Projector {
    /// Centres and scales the columns, drops constant ones and factorizes the
    /// ridge-regularized Gram matrix.
    pub fn new(features: &FeatureMatrix, ridge: f64) -> Result<Self, RegressionError> {
        let rows = features.rows();
        let basis = features.columns.len() + 1;
        if rows < 10 * basis {
            return Err(RegressionError::TooFewPaths { paths: rows, basis });
        }
        let mut kept = Vec::new();
        let mut means = Vec::new();
        let mut scales = Vec::new();
        let mut z = Vec::new();
        for (c, col) in features.columns.iter().enumerate() {
            if let Some(path) = col.iter().position(|v| !v.is_finite()) {
                return Err(RegressionError::NonFiniteFeature {
                    column: features.names[c].clone(),
                    path,
                });
            }
            let mu = fixed_sum(col) / rows as f64;
            let sq: Vec<f64> = col.iter().map(|v| (v - mu) * (v - mu)).collect();
            let sd = (fixed_sum(&sq) / rows as f64).sqrt();
            if sd <= 1e-12 * mu.abs().max(1.0) {
                continue;
            }
            kept.push(c);
            means.push(mu);
            scales.push(sd);
            z.push(col.iter().map(|v| (v - mu) / sd).collect::<Vec<f64>>());
        }
        let p = kept.len();
        let mut gram = DMatrix::<f64>::zeros(p, p);
        for a in 0..p {
            for b in 0..=a {
                let prod: Vec<f64> = z[a].iter().zip(&z[b]).map(|(x, y)| x * y).collect();
                let v = fixed_sum(&prod) / rows as f64;
                gram[(a, b)] = v;
                gram[(b, a)] = v;
            }
            gram[(a, a)] += ridge;
        }
        if p == 0 {
            return Ok(Self {
                rows,
                kept,
                means,
                scales,
                z,
                evecs: DMatrix::zeros(0, 0),
                evals: DVector::zeros(0),
            });
        }
        let eig = SymmetricEigen::new(gram);
        let max = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
        if let Some((idx, _)) = eig
            .eigenvalues
            .iter()
            .enumerate()
            .find(|(_, e)| !(**e > 1e-13 * max.max(1e-300)))
        {
            let v = eig.eigenvectors.column(idx);
            let worst = (0..p)
                .max_by(|a, b| v[*a].abs().total_cmp(&v[*b].abs()))
                .unwrap_or(0);
            return Err(RegressionError::RankDeficient {
                column: features.names[kept[worst]].clone(),
            });
        }
        Ok(Self {
            rows,
            kept,
            means,
            scales,
            z,
            evecs: eig.eigenvectors,
            evals: eig.eigenvalues,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    /// Number of fitted coefficients including the intercept.
    pub fn dof(&self) -> usize {
        self.kept.len() + 1
    }

    pub fn fit(&self, target: &[f64]) -> Result<LinearFit, RegressionError> {
        if target.len() != self.rows {
            return Err(RegressionError::Length {
                expected: self.rows,
                got: target.len(),
            });
        }
        if let Some(path) = target.iter().position(|v| !v.is_finite()) {
            return Err(RegressionError::NonFiniteTarget { path });
        }
        let n = self.rows as f64;
        let ybar = fixed_sum(target) / n;
        let p = self.kept.len();
        let mut rhs = DVector::<f64>::zeros(p);
        for c in 0..p {
            let prod: Vec<f64> = self.z[c].iter().zip(target).map(|(z, y)| z * (y - ybar)).collect();
            rhs[c] = fixed_sum(&prod) / n;
        }
        let proj = self.evecs.transpose() * rhs;
        let scaled = DVector::from_iterator(p, proj.iter().zip(self.evals.iter()).map(|(a, e)| a / e));
        let beta = &self.evecs * scaled;
        Ok(LinearFit {
            intercept: ybar,
            kept: self.kept.clone(),
            means: self.means.clone(),
            scales: self.scales.clone(),
            beta: beta.iter().copied().collect(),
        })
    }

    /// In-sample fitted values of `target`.
    pub fn fitted(&self, target: &[f64]) -> Result<Vec<f64>, RegressionError> {
        let fit = self.fit(target)?;
        Ok(self.apply(&fit))
    }

    /// Evaluates a fit produced by this projector on its own sample.
    pub fn apply(&self, fit: &LinearFit) -> Vec<f64> {
        (0..self.rows)
            .map(|m| {
                let mut acc = fit.intercept;
                for c in 0..self.kept.len() {
                    acc += fit.beta[c] * self.z[c][m];
                }
                acc
            })
            .collect()
    }
}

/// Estimate of `E[target | F_j]` where `features` are evaluated at index `j`.
pub fn conditional_expectation(target: &[f64], features: &FeatureMatrix, ridge: f64) -> Result<Vec<f64>, RegressionError> {
    Projector::new(features, ridge)?.fitted(target)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::brownian::sample_brownian;
    use crate::grid::TimeGrid;
    use crate::paths::rms;
    use proptest::prelude::*;

    #[test]
    fn constant_target_is_reproduced() {
        let g = TimeGrid::new(1.0, 8).unwrap();
        let w = sample_brownian(&g, 2000, 1);
        let feats = Basis::brownian(2).features(&w, None, 5);
        let fitted = conditional_expectation(&vec![3.7; 2000], &feats, 1e-8).unwrap();
        assert!(fitted.iter().all(|v| (v - 3.7).abs() < 1e-10));
    }

    #[test]
    fn martingale_projection() {
        let g = TimeGrid::new(1.0, 16).unwrap();
        let m = 20_000;
        let w = sample_brownian(&g, m, 2);
        let target = w.levels_at(16);
        for j in [4, 8, 12] {
            let feats = Basis::brownian(2).features(&w, None, j);
            let fitted = conditional_expectation(&target, &feats, 1e-8).unwrap();
            let err: Vec<f64> = fitted.iter().zip(w.levels_at(j)).map(|(f, b)| f - b).collect();
            let bound = 5.0 * ((1.0 - g.t(j)) / m as f64).sqrt();
            assert!(rms(&err) <= bound, "{j}: {} > {bound}", rms(&err));
        }
    }

    #[test]
    fn conditional_second_moment() {
        let g = TimeGrid::new(1.0, 16).unwrap();
        let m = 100_000;
        let w = sample_brownian(&g, m, 3);
        let target: Vec<f64> = w.levels_at(16).iter().map(|b| b * b).collect();
        let j = 8;
        let feats = Basis::brownian(2).features(&w, None, j);
        let fitted = conditional_expectation(&target, &feats, 1e-8).unwrap();
        let err: Vec<f64> = fitted
            .iter()
            .zip(w.levels_at(j))
            .map(|(f, b)| f - (b * b + 1.0 - g.t(j)))
            .collect();
        assert!(rms(&err) < 0.02, "{}", rms(&err));
    }

    #[test]
    fn residual_is_orthogonal() {
        let g = TimeGrid::new(1.0, 8).unwrap();
        let w = sample_brownian(&g, 5000, 4);
        let target: Vec<f64> = w.levels_at(8).iter().map(|b| b.sin() + b * b * b).collect();
        let feats = Basis::brownian(3).features(&w, None, 4);
        let fitted = conditional_expectation(&target, &feats, 1e-8).unwrap();
        let resid: Vec<f64> = target.iter().zip(&fitted).map(|(a, b)| a - b).collect();
        let norm = rms(&target);
        let mean_r: f64 = resid.iter().sum::<f64>() / 5000.0;
        assert!(mean_r.abs() <= 1e-8 * norm);
        for col in feats.columns() {
            let ip: f64 = col.iter().zip(&resid).map(|(a, b)| a * b).sum::<f64>() / 5000.0;
            assert!(ip.abs() <= 1e-8 * norm, "{ip}");
        }
    }

    #[test]
    fn errors() {
        let g = TimeGrid::new(1.0, 8).unwrap();
        let w = sample_brownian(&g, 20, 4);
        let feats = Basis::brownian(2).features(&w, None, 4);
        assert!(matches!(Projector::new(&feats, 1e-8), Err(RegressionError::TooFewPaths { .. })));

        let w = sample_brownian(&g, 100, 4);
        let mut cols = Basis::brownian(1).features(&w, None, 4).columns().to_vec();
        cols[0][7] = f64::NAN;
        let feats = FeatureMatrix::new(vec!["B^1".into()], cols).unwrap();
        assert_eq!(
            Projector::new(&feats, 1e-8).unwrap_err(),
            RegressionError::NonFiniteFeature {
                column: "B^1".into(),
                path: 7
            }
        );

        let b = w.levels_at(4);
        let dup = FeatureMatrix::new(vec!["a".into(), "b".into()], vec![b.clone(), b]).unwrap();
        assert!(matches!(Projector::new(&dup, 0.0), Err(RegressionError::RankDeficient { .. })));
        assert!(Projector::new(&dup, 1e-8).is_ok());
    }

    #[test]
    fn constant_columns_are_dropped() {
        let g = TimeGrid::new(1.0, 8).unwrap();
        let w = sample_brownian(&g, 100, 4);
        let feats = Basis::brownian(2).features(&w, None, 0);
        let proj = Projector::new(&feats, 1e-8).unwrap();
        assert_eq!(proj.dof(), 1);
        let fit = proj.fit(&w.levels_at(8)).unwrap();
        assert_eq!(fit.predict(&[0.0, 0.0]), fit.intercept);
    }

    proptest! {
        #[test]
        fn fit_predicts_its_own_sample(seed in 0u64..50, j in 1usize..8) {
            let g = TimeGrid::new(1.0, 8).unwrap();
            let w = sample_brownian(&g, 200, seed);
            let basis = Basis::brownian(2);
            let feats = basis.features(&w, None, j);
            let proj = Projector::new(&feats, 1e-8).unwrap();
            let target: Vec<f64> = w.levels_at(8).iter().map(|b| b.exp()).collect();
            let fit = proj.fit(&target).unwrap();
            let fitted = proj.apply(&fit);
            let mut buf = Vec::new();
            for m in 0..200 {
                basis.eval_into(w.level(m, j), 0.0, &mut buf);
                prop_assert!((fit.predict(&buf) - fitted[m]).abs() < 1e-10);
            }
        }
    }
}
