use thiserror::Error;

use crate::adjoint::AdjointError;
use crate::control::ControlError;
use crate::forward::ForwardError;
use crate::grid::GridError;
use crate::malliavin::MalliavinError;
use crate::problem::ProblemError;

/// Any error raised by the toolkit.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Problem(#[from] ProblemError),
    #[error(transparent)]
    Forward(#[from] ForwardError),
    #[error(transparent)]
    Malliavin(#[from] MalliavinError),
    #[error(transparent)]
    Adjoint(#[from] AdjointError),
    #[error(transparent)]
    Control(#[from] ControlError),
}

impl Error {
    /// Short machine-readable kind.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Grid(_) => "grid",
            Error::Problem(_) => "problem",
            Error::Forward(_) => "forward",
            Error::Malliavin(_) => "malliavin",
            Error::Adjoint(_) => "adjoint",
            Error::Control(_) => "control",
        }
    }
}
