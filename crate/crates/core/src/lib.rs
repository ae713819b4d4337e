//! Monte Carlo toolkit for stochastic Volterra control problems with a delayed
//! control.
//!
//! The pipeline is: build a [`Model`] from a catalog problem and a grid, sample
//! a [`BrownianEnsemble`], simulate the state with [`simulate_state`], solve the
//! backward adjoint with [`solve_adjoint`], then either read the cost gradient
//! or run projected gradient ascent with [`optimize`].
//!
//! ```
//! use delay_volterra::*;
//!
//! let spec = catalog_problem("LQ1", &default_params("LQ1")).unwrap();
//! let (grid, delay) = build_grid(1.0, 8, 0.0).unwrap();
//! let model = Model::new(spec, grid, delay);
//! let w = sample_brownian(&model.grid, 500, 42);
//! let u = ControlPath::constant(8, 0.0);
//! let g = cost_gradient(&model, &u, &w, &AdjointOptions::default()).unwrap();
//! assert!((g.grad[0] - 1.0).abs() < 1e-10);
//! ```

/// Crate version recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub mod adjoint;
pub mod brownian;
pub mod catalog;
pub mod control;
mod error;
pub mod forward;
pub mod grid;
pub mod malliavin;
pub mod paths;
pub mod poly;
pub mod problem;

pub use adjoint::{
    driver_h, solve_adjoint, AdjointError, AdjointOptions, AdjointSolution, KernelPolicy,
};
pub use brownian::{sample_brownian, BrownianEnsemble};
pub use catalog::{catalog_problem, custom_poly_demo, default_params, Params, PROBLEMS};
pub use control::{
    cost_gradient, optimize, project, ControlError, GradientField, OptimizerSettings, OptimizerState,
    OptimizerStatus,
};
pub use error::Error;
pub use forward::{simulate_state, simulate_variation, Estimate, ForwardError, StatePaths};
pub use grid::{build_grid, DelaySpec, GridError, TimeGrid};
pub use paths::PathMatrix;
pub use problem::{ControlBounds, ControlPath, Model, ProblemError, ProblemSpec};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/intro.md")]
    mod intro {}
    #[doc = include_str!("../../../book/src/problems.md")]
    mod problems {}
    #[doc = include_str!("../../../book/src/forward.md")]
    mod forward {}
    #[doc = include_str!("../../../book/src/malliavin.md")]
    mod malliavin {}
    #[doc = include_str!("../../../book/src/adjoint.md")]
    mod adjoint {}
    #[doc = include_str!("../../../book/src/control.md")]
    mod control {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
