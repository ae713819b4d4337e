//! Uniform time grids and grid-aligned delays.

use thiserror::Error;

const ALIGNMENT_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GridError {
    #[error("horizon must be positive and finite, got {0}")]
    Horizon(f64),
    #[error("step count must be at least 2, got {0}")]
    Steps(usize),
    #[error("delay must be non-negative and finite, got {0}")]
    NegativeDelay(f64),
    #[error("delay {delta} is not a multiple of dt = {dt}; nearest valid delays are {below} and {above}")]
    Misaligned {
        delta: f64,
        dt: f64,
        below: f64,
        above: f64,
    },
    #[error("delay {delta} exceeds the horizon {horizon}")]
    DelayTooLong { delta: f64, horizon: f64 },
}

/// Uniform discretization `t_i = i * T / N` of `[0, T]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    horizon: f64,
    steps: usize,
    dt: f64,
}

impl TimeGrid {
    pub fn new(horizon: f64, steps: usize) -> Result<Self, GridError> {
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(GridError::Horizon(horizon));
        }
        if steps < 2 {
            return Err(GridError::Steps(steps));
        }
        Ok(Self {
            horizon,
            steps,
            dt: horizon / steps as f64,
        })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Grid time for a possibly negative index. `time(N) == T` exactly.
    pub fn time(&self, i: isize) -> f64 {
        if i == self.steps as isize {
            return self.horizon;
        }
        self.horizon * i as f64 / self.steps as f64
    }

    /// Grid time for a non-negative index.
    pub fn t(&self, i: usize) -> f64 {
        self.time(i as isize)
    }

    /// Midpoint of cell `[t_i, t_{i+1})`.
    pub fn midpoint(&self, i: usize) -> f64 {
        self.horizon * (2 * i + 1) as f64 / (2 * self.steps) as f64
    }

    pub fn times(&self) -> Vec<f64> {
        (0..=self.steps).map(|i| self.t(i)).collect()
    }
}

/// Delay `delta = k * dt`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DelaySpec {
    delta: f64,
    k: usize,
}

impl DelaySpec {
    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn k(&self) -> usize {
        self.k
    }
}

pub fn build_grid(horizon: f64, steps: usize, delta: f64) -> Result<(TimeGrid, DelaySpec), GridError> {
    let grid = TimeGrid::new(horizon, steps)?;
    let delay = align_delay(&grid, delta)?;
    Ok((grid, delay))
}

pub fn align_delay(grid: &TimeGrid, delta: f64) -> Result<DelaySpec, GridError> {
    if !(delta.is_finite() && delta >= 0.0) {
        return Err(GridError::NegativeDelay(delta));
    }
    let ratio = delta * grid.steps as f64 / grid.horizon;
    let k = ratio.round();
    if (ratio - k).abs() > ALIGNMENT_TOLERANCE * ratio.max(1.0) {
        return Err(GridError::Misaligned {
            delta,
            dt: grid.dt,
            below: grid.time(ratio.floor() as isize),
            above: grid.time(ratio.ceil() as isize),
        });
    }
    let k = k as usize;
    if k > grid.steps {
        return Err(GridError::DelayTooLong {
            delta,
            horizon: grid.horizon,
        });
    }
    Ok(DelaySpec {
        delta: grid.time(k as isize),
        k,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn aligned_delay() {
        let (grid, delay) = build_grid(1.0, 10, 0.2).unwrap();
        assert_eq!(grid.dt(), 0.1);
        assert_eq!(delay.k(), 2);
        let (_, delay) = build_grid(1.0, 10, 0.0).unwrap();
        assert_eq!(delay.k(), 0);
    }

    #[test]
    fn misaligned_delay_names_neighbours() {
        let err = build_grid(1.0, 10, 0.25).unwrap_err();
        match err {
            GridError::Misaligned { below, above, .. } => {
                assert!((below - 0.2).abs() < 1e-15);
                assert!((above - 0.3).abs() < 1e-15);
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(err.to_string().contains("0.2"));
    }

    #[test]
    fn terminal_time_is_exact() {
        for n in [2, 3, 7, 10, 32, 33, 100, 1000] {
            let g = TimeGrid::new(0.7, n).unwrap();
            assert_eq!(g.t(n), 0.7);
            assert_eq!(g.t(0), 0.0);
        }
    }

    #[test]
    fn dyadic_differences_are_exact() {
        let g = TimeGrid::new(1.0, 64).unwrap();
        for i in 0..=64usize {
            for j in 0..=64usize {
                assert_eq!(g.t(i) - g.t(j), (i as f64 - j as f64) * g.dt());
            }
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(TimeGrid::new(0.0, 10).is_err());
        assert!(TimeGrid::new(1.0, 1).is_err());
        assert!(build_grid(1.0, 10, -0.1).is_err());
        assert!(matches!(
            build_grid(1.0, 10, 1.5),
            Err(GridError::DelayTooLong { .. })
        ));
    }
}
