//! Reference path functionals.

use super::PathFunctional;
use crate::grid::TimeGrid;

/// `B(T)`.
#[derive(Debug, Clone, Copy)]
pub struct TerminalLevel;

/// `B(T)^2`.
#[derive(Debug, Clone, Copy)]
pub struct TerminalSquare;

/// A constant functional.
#[derive(Debug, Clone, Copy)]
pub struct Constant(pub f64);

/// Wiener integral `sum_j h(t_j) dB_j`.
#[derive(Debug, Clone)]
pub struct WienerIntegral {
    weights: Vec<f64>,
}

impl WienerIntegral {
    pub fn new(weights: Vec<f64>) -> Self {
        Self { weights }
    }

    /// `int_0^T h(t) dB(t)` with left-point weights.
    pub fn from_fn(grid: &TimeGrid, h: impl Fn(f64) -> f64) -> Self {
        Self::new((0..grid.steps()).map(|j| h(grid.t(j))).collect())
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
}

impl PathFunctional for TerminalLevel {
    fn eval(&self, increments: &[f64]) -> f64 {
        increments.iter().sum()
    }
}

impl PathFunctional for TerminalSquare {
    fn eval(&self, increments: &[f64]) -> f64 {
        let b: f64 = increments.iter().sum();
        b * b
    }
}

impl PathFunctional for Constant {
    fn eval(&self, _: &[f64]) -> f64 {
        self.0
    }
}

impl PathFunctional for WienerIntegral {
    fn eval(&self, increments: &[f64]) -> f64 {
        self.weights.iter().zip(increments).map(|(h, d)| h * d).sum()
    }
}

/// `B(T)`, `B(T)^2` and `int t dB(t)` with display names.
pub fn standard_functionals(grid: &TimeGrid) -> Vec<(&'static str, Box<dyn PathFunctional>)> {
    vec![
        ("B(T)", Box::new(TerminalLevel)),
        ("B(T)^2", Box::new(TerminalSquare)),
        ("int t dB", Box::new(WienerIntegral::from_fn(grid, |t| t))),
    ]
}
