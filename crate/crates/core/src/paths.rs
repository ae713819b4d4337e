//! Row-major per-path storage and reproducible reductions.

use rayon::prelude::*;

const CHUNK: usize = 1024;

/// `rows x cols` matrix stored row-major; one row per path.
#[derive(Debug, Clone, PartialEq)]
pub struct PathMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl PathMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_fn(rows: usize, cols: usize, f: impl Fn(usize, usize) -> f64 + Sync) -> Self {
        let mut out = Self::zeros(rows, cols);
        out.par_rows_mut().enumerate().for_each(|(m, row)| {
            for (c, v) in row.iter_mut().enumerate() {
                *v = f(m, c);
            }
        });
        out
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, m: usize, c: usize) -> f64 {
        self.data[m * self.cols + c]
    }

    pub fn set(&mut self, m: usize, c: usize, v: f64) {
        self.data[m * self.cols + c] = v;
    }

    pub fn row(&self, m: usize) -> &[f64] {
        &self.data[m * self.cols..(m + 1) * self.cols]
    }

    pub fn row_mut(&mut self, m: usize) -> &mut [f64] {
        &mut self.data[m * self.cols..(m + 1) * self.cols]
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        (0..self.rows).map(|m| self.get(m, c)).collect()
    }

    pub fn set_column(&mut self, c: usize, values: &[f64]) {
        assert_eq!(values.len(), self.rows);
        for (m, v) in values.iter().enumerate() {
            self.set(m, c, *v);
        }
    }

    pub fn par_rows_mut(&mut self) -> rayon::slice::ChunksMut<'_, f64> {
        let cols = self.cols.max(1);
        self.data.par_chunks_mut(cols)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }
}

/// Sum whose rounding does not depend on the rayon pool size.
pub fn fixed_sum(values: &[f64]) -> f64 {
    let partial: Vec<f64> = values.par_chunks(CHUNK).map(|c| c.iter().sum()).collect();
    pairwise(&partial)
}

fn pairwise(values: &[f64]) -> f64 {
    match values.len() {
        0 => 0.0,
        1 => values[0],
        n => pairwise(&values[..n / 2]) + pairwise(&values[n / 2..]),
    }
}

pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    fixed_sum(values) / values.len() as f64
}

/// Sample mean and standard error of the mean.
pub fn mean_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    let mu = mean(values);
    if n < 2 {
        return (mu, 0.0);
    }
    let sq: Vec<f64> = values.iter().map(|v| (v - mu) * (v - mu)).collect();
    let var = fixed_sum(&sq) / (n - 1) as f64;
    (mu, (var / n as f64).sqrt())
}

/// Sample mean and sample standard deviation.
pub fn mean_sd(values: &[f64]) -> (f64, f64) {
    let (mu, se) = mean_stderr(values);
    (mu, se * (values.len() as f64).sqrt())
}

/// Root mean square.
pub fn rms(values: &[f64]) -> f64 {
    let sq: Vec<f64> = values.iter().map(|v| v * v).collect();
    mean(&sq).sqrt()
}
