//! Seeded ensembles of Brownian increments.

use rayon::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::grid::TimeGrid;
use crate::paths::PathMatrix;

/// `M` paths of `N` increments `dB_j ~ N(0, dt)` together with the levels `B(t_j)`.
///
/// Path `m` is drawn from its own ChaCha stream, so ensembles are
/// reproducible and extendable independently of thread count.
#[derive(Debug, Clone)]
pub struct BrownianEnsemble {
    seed: u64,
    dt: f64,
    increments: PathMatrix,
    levels: PathMatrix,
}

pub fn sample_brownian(grid: &TimeGrid, paths: usize, seed: u64) -> BrownianEnsemble {
    assert!(paths >= 1, "at least one path is required");
    let n = grid.steps();
    let sd = grid.dt().sqrt();
    let mut increments = PathMatrix::zeros(paths, n);
    increments.par_rows_mut().enumerate().for_each(|(m, row)| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(m as u64);
        for v in row.iter_mut() {
            let z: f64 = StandardNormal.sample(&mut rng);
            *v = sd * z;
        }
    });
    BrownianEnsemble::from_increments(increments, grid.dt(), seed)
}

impl BrownianEnsemble {
    /// Wraps user supplied increments (one row per path).
    pub fn from_increments(increments: PathMatrix, dt: f64, seed: u64) -> Self {
        let n = increments.cols();
        let mut levels = PathMatrix::zeros(increments.rows(), n + 1);
        for m in 0..increments.rows() {
            let mut acc = 0.0;
            for j in 0..n {
                acc += increments.get(m, j);
                levels.set(m, j + 1, acc);
            }
        }
        Self {
            seed,
            dt,
            increments,
            levels,
        }
    }

    pub fn paths(&self) -> usize {
        self.increments.rows()
    }

    pub fn steps(&self) -> usize {
        self.increments.cols()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn increments(&self) -> &PathMatrix {
        &self.increments
    }

    /// `dB_j` on path `m`.
    pub fn dw(&self, m: usize, j: usize) -> f64 {
        self.increments.get(m, j)
    }

    /// Increment row of path `m`.
    pub fn path(&self, m: usize) -> &[f64] {
        self.increments.row(m)
    }

    /// `B(t_j)` on path `m`.
    pub fn level(&self, m: usize, j: usize) -> f64 {
        self.levels.get(m, j)
    }

    pub fn levels_at(&self, j: usize) -> Vec<f64> {
        self.levels.column(j)
    }

    pub fn increments_at(&self, j: usize) -> Vec<f64> {
        self.increments.column(j)
    }
}
