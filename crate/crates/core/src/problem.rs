//! Coefficient contract, problem specifications and open-loop controls.

use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::grid::{DelaySpec, TimeGrid};
use crate::poly::Poly;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProblemError {
    #[error("unknown problem `{0}`; expected one of LQ1, LQ2, QUAD_TERM, CUSTOM_POLY")]
    UnknownProblem(String),
    #[error("problem {problem} requires parameter `{name}`")]
    MissingParameter { problem: String, name: String },
    #[error("problem {problem} does not accept parameter `{name}`")]
    UnknownParameter { problem: String, name: String },
    #[error("parameter `{name}`: {reason}")]
    InvalidParameter { name: String, reason: String },
    #[error("control bounds [{min}, {max}] are empty or not finite")]
    Bounds { min: f64, max: f64 },
    #[error("control has {got} values, grid needs {expected}")]
    ControlLength { expected: usize, got: usize },
    #[error("control value {value} at index {index} lies outside [{min}, {max}]")]
    OutsideBounds {
        index: usize,
        value: f64,
        min: f64,
        max: f64,
    },
    #[error("derivative {name} disagrees with finite differences: analytic {analytic}, numeric {numeric} at {point:?}")]
    Derivative {
        name: String,
        analytic: f64,
        numeric: f64,
        point: Vec<f64>,
    },
}

/// Structural facts a kernel can declare so solvers may skip vanishing terms.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KernelStructure {
    /// Degree in the first time argument; `None` if unknown.
    pub t_degree: Option<u32>,
    pub x_dependent: bool,
    pub u_dependent: bool,
}

impl KernelStructure {
    pub const GENERAL: Self = Self {
        t_degree: None,
        x_dependent: true,
        u_dependent: true,
    };

    pub fn t_homogeneous(&self) -> bool {
        self.t_degree == Some(0)
    }
}

/// A Volterra kernel `k(t, s, x, u)` with the derivatives the adjoint needs.
pub trait VolterraKernel: Send + Sync {
    fn value(&self, t: f64, s: f64, x: f64, u: f64) -> f64;
    fn d_x(&self, t: f64, s: f64, x: f64, u: f64) -> f64;
    fn d_u(&self, t: f64, s: f64, x: f64, u: f64) -> f64;
    fn d_t(&self, t: f64, s: f64, x: f64, u: f64) -> f64;
    fn d_tx(&self, t: f64, s: f64, x: f64, u: f64) -> f64;
    fn d_tu(&self, t: f64, s: f64, x: f64, u: f64) -> f64;
    fn structure(&self) -> KernelStructure {
        KernelStructure::GENERAL
    }
}

/// Running reward `f(t, x, u)`.
pub trait RunningReward: Send + Sync {
    fn value(&self, t: f64, x: f64, u: f64) -> f64;
    fn d_x(&self, t: f64, x: f64, u: f64) -> f64;
    fn d_u(&self, t: f64, x: f64, u: f64) -> f64;
}

/// Terminal reward `g(x)`.
pub trait TerminalReward: Send + Sync {
    fn value(&self, x: f64) -> f64;
    fn d_x(&self, x: f64) -> f64;
}

/// Initial segment on `[-delta, 0]`, extended as the free term on `[0, T]`.
pub trait InitialSegment: Send + Sync {
    fn value(&self, t: f64) -> f64;
}

/// Polynomial kernel in `(t, s, x, u)` with derivatives generated at build time.
#[derive(Debug, Clone)]
pub struct PolyKernel {
    value: Poly<4>,
    dx: Poly<4>,
    du: Poly<4>,
    dt: Poly<4>,
    dtx: Poly<4>,
    dtu: Poly<4>,
}

impl PolyKernel {
    pub fn new(value: Poly<4>) -> Self {
        let dt = value.derivative(0);
        Self {
            dx: value.derivative(2),
            du: value.derivative(3),
            dtx: dt.derivative(2),
            dtu: dt.derivative(3),
            dt,
            value,
        }
    }

    pub fn poly(&self) -> &Poly<4> {
        &self.value
    }
}

impl VolterraKernel for PolyKernel {
    fn value(&self, t: f64, s: f64, x: f64, u: f64) -> f64 {
        self.value.eval([t, s, x, u])
    }
    fn d_x(&self, t: f64, s: f64, x: f64, u: f64) -> f64 {
        self.dx.eval([t, s, x, u])
    }
    fn d_u(&self, t: f64, s: f64, x: f64, u: f64) -> f64 {
        self.du.eval([t, s, x, u])
    }
    fn d_t(&self, t: f64, s: f64, x: f64, u: f64) -> f64 {
        self.dt.eval([t, s, x, u])
    }
    fn d_tx(&self, t: f64, s: f64, x: f64, u: f64) -> f64 {
        self.dtx.eval([t, s, x, u])
    }
    fn d_tu(&self, t: f64, s: f64, x: f64, u: f64) -> f64 {
        self.dtu.eval([t, s, x, u])
    }
    fn structure(&self) -> KernelStructure {
        KernelStructure {
            t_degree: Some(self.value.degree_in(0)),
            x_dependent: self.value.degree_in(2) > 0,
            u_dependent: self.value.degree_in(3) > 0,
        }
    }
}

/// Polynomial running reward in `(t, x, u)`.
#[derive(Debug, Clone)]
pub struct PolyReward {
    value: Poly<3>,
    dx: Poly<3>,
    du: Poly<3>,
}

impl PolyReward {
    pub fn new(value: Poly<3>) -> Self {
        Self {
            dx: value.derivative(1),
            du: value.derivative(2),
            value,
        }
    }
}

impl RunningReward for PolyReward {
    fn value(&self, t: f64, x: f64, u: f64) -> f64 {
        self.value.eval([t, x, u])
    }
    fn d_x(&self, t: f64, x: f64, u: f64) -> f64 {
        self.dx.eval([t, x, u])
    }
    fn d_u(&self, t: f64, x: f64, u: f64) -> f64 {
        self.du.eval([t, x, u])
    }
}

/// Polynomial terminal reward in `x`.
#[derive(Debug, Clone)]
pub struct PolyTerminal {
    value: Poly<1>,
    dx: Poly<1>,
}

impl PolyTerminal {
    pub fn new(value: Poly<1>) -> Self {
        Self {
            dx: value.derivative(0),
            value,
        }
    }
}

impl TerminalReward for PolyTerminal {
    fn value(&self, x: f64) -> f64 {
        self.value.eval([x])
    }
    fn d_x(&self, x: f64) -> f64 {
        self.dx.eval([x])
    }
}

impl InitialSegment for Poly<1> {
    fn value(&self, t: f64) -> f64 {
        self.eval([t])
    }
}

fn bump(arg: f64) -> f64 {
    1e-5 * arg.abs().max(1.0)
}

fn central(f: impl Fn(f64) -> f64, at: f64) -> f64 {
    let h = bump(at);
    (f(at + h) - f(at - h)) / (2.0 * h)
}

/// Kernel given only by its value; derivatives fall back to central differences.
pub struct FnKernel<F> {
    f: F,
}

impl<F: Fn(f64, f64, f64, f64) -> f64 + Send + Sync> FnKernel<F> {
    pub fn new(f: F) -> Self {
        Self { f }
    }
}

impl<F: Fn(f64, f64, f64, f64) -> f64 + Send + Sync> VolterraKernel for FnKernel<F> {
    fn value(&self, t: f64, s: f64, x: f64, u: f64) -> f64 {
        (self.f)(t, s, x, u)
    }
    fn d_x(&self, t: f64, s: f64, x: f64, u: f64) -> f64 {
        central(|y| (self.f)(t, s, y, u), x)
    }
    fn d_u(&self, t: f64, s: f64, x: f64, u: f64) -> f64 {
        central(|v| (self.f)(t, s, x, v), u)
    }
    fn d_t(&self, t: f64, s: f64, x: f64, u: f64) -> f64 {
        central(|r| (self.f)(r, s, x, u), t)
    }
    fn d_tx(&self, t: f64, s: f64, x: f64, u: f64) -> f64 {
        let h = 1e-4 * t.abs().max(1.0);
        (self.d_x(t + h, s, x, u) - self.d_x(t - h, s, x, u)) / (2.0 * h)
    }
    fn d_tu(&self, t: f64, s: f64, x: f64, u: f64) -> f64 {
        let h = 1e-4 * t.abs().max(1.0);
        (self.d_u(t + h, s, x, u) - self.d_u(t - h, s, x, u)) / (2.0 * h)
    }
}

/// Running reward given only by its value.
pub struct FnReward<F> {
    f: F,
}

impl<F: Fn(f64, f64, f64) -> f64 + Send + Sync> FnReward<F> {
    pub fn new(f: F) -> Self {
        Self { f }
    }
}

impl<F: Fn(f64, f64, f64) -> f64 + Send + Sync> RunningReward for FnReward<F> {
    fn value(&self, t: f64, x: f64, u: f64) -> f64 {
        (self.f)(t, x, u)
    }
    fn d_x(&self, t: f64, x: f64, u: f64) -> f64 {
        central(|y| (self.f)(t, y, u), x)
    }
    fn d_u(&self, t: f64, x: f64, u: f64) -> f64 {
        central(|v| (self.f)(t, x, v), u)
    }
}

/// Terminal reward given only by its value.
pub struct FnTerminal<F> {
    f: F,
}

impl<F: Fn(f64) -> f64 + Send + Sync> FnTerminal<F> {
    pub fn new(f: F) -> Self {
        Self { f }
    }
}

impl<F: Fn(f64) -> f64 + Send + Sync> TerminalReward for FnTerminal<F> {
    fn value(&self, x: f64) -> f64 {
        (self.f)(x)
    }
    fn d_x(&self, x: f64) -> f64 {
        central(&self.f, x)
    }
}

/// Closed interval `[min, max]` of admissible control values.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlBounds {
    min: f64,
    max: f64,
}

impl ControlBounds {
    pub fn new(min: f64, max: f64) -> Result<Self, ProblemError> {
        if !(min.is_finite() && max.is_finite() && min <= max) {
            return Err(ProblemError::Bounds { min, max });
        }
        Ok(Self { min, max })
    }

    pub fn min(&self) -> f64 {
        self.min
    }

    pub fn max(&self) -> f64 {
        self.max
    }

    pub fn clamp(&self, v: f64) -> f64 {
        v.clamp(self.min, self.max)
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.min && v <= self.max
    }
}

impl Default for ControlBounds {
    fn default() -> Self {
        Self {
            min: -5.0,
            max: 5.0,
        }
    }
}

/// Deterministic open-loop control: one value per grid cell `[t_j, t_{j+1})`.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlPath {
    values: Vec<f64>,
}

impl ControlPath {
    pub fn new(values: Vec<f64>, bounds: &ControlBounds) -> Result<Self, ProblemError> {
        for (index, &value) in values.iter().enumerate() {
            if !bounds.contains(value) {
                return Err(ProblemError::OutsideBounds {
                    index,
                    value,
                    min: bounds.min,
                    max: bounds.max,
                });
            }
        }
        Ok(Self { values })
    }

    /// Control without a bounds check, for directions and perturbations.
    pub fn unchecked(values: Vec<f64>) -> Self {
        Self { values }
    }

    pub fn constant(n: usize, v: f64) -> Self {
        Self { values: vec![v; n] }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, j: usize) -> f64 {
        self.values[j]
    }

    /// `self + eps * direction`, unchecked.
    pub fn perturbed(&self, direction: &ControlPath, eps: f64) -> ControlPath {
        ControlPath::unchecked(
            self.values
                .iter()
                .zip(&direction.values)
                .map(|(u, b)| u + eps * b)
                .collect(),
        )
    }
}

/// Coefficients of a controlled delayed Volterra problem.
#[derive(Clone)]
pub struct ProblemSpec {
    pub name: String,
    pub x0: Arc<dyn InitialSegment>,
    pub b: Arc<dyn VolterraKernel>,
    pub sigma: Arc<dyn VolterraKernel>,
    pub f: Arc<dyn RunningReward>,
    pub g: Arc<dyn TerminalReward>,
    pub bounds: ControlBounds,
    /// Scale applied to `f` and `g` (1 unless rescaled).
    pub reward_scale: f64,
}

impl fmt::Debug for ProblemSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ProblemSpec")
            .field("name", &self.name)
            .field("bounds", &self.bounds)
            .field("b", &self.b.structure())
            .field("sigma", &self.sigma.structure())
            .finish()
    }
}

struct ScaledReward {
    inner: Arc<dyn RunningReward>,
    c: f64,
}

impl RunningReward for ScaledReward {
    fn value(&self, t: f64, x: f64, u: f64) -> f64 {
        self.c * self.inner.value(t, x, u)
    }
    fn d_x(&self, t: f64, x: f64, u: f64) -> f64 {
        self.c * self.inner.d_x(t, x, u)
    }
    fn d_u(&self, t: f64, x: f64, u: f64) -> f64 {
        self.c * self.inner.d_u(t, x, u)
    }
}

struct ScaledTerminal {
    inner: Arc<dyn TerminalReward>,
    c: f64,
}

impl TerminalReward for ScaledTerminal {
    fn value(&self, x: f64) -> f64 {
        self.c * self.inner.value(x)
    }
    fn d_x(&self, x: f64) -> f64 {
        self.c * self.inner.d_x(x)
    }
}

impl ProblemSpec {
    /// Same dynamics with `f` and `g` multiplied by `c`.
    pub fn with_scaled_rewards(&self, c: f64) -> Self {
        let mut out = self.clone();
        out.f = Arc::new(ScaledReward {
            inner: self.f.clone(),
            c,
        });
        out.g = Arc::new(ScaledTerminal {
            inner: self.g.clone(),
            c,
        });
        out.reward_scale *= c;
        out
    }

    pub fn with_bounds(&self, bounds: ControlBounds) -> Self {
        let mut out = self.clone();
        out.bounds = bounds;
        out
    }

    /// Kernel time-derivatives vanish identically for both kernels up to
    /// degree `max_deg`; the midpoint rule is exact in that case.
    pub fn kernels_t_degree_at_most(&self, max_deg: u32) -> bool {
        [self.b.structure(), self.sigma.structure()]
            .iter()
            .all(|s| s.t_degree.is_some_and(|d| d <= max_deg))
    }

    /// Compares every supplied derivative against central differences at
    /// `samples` random points.
    pub fn check_derivatives(&self, horizon: f64, samples: usize, seed: u64) -> Result<f64, ProblemError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let lo = self.bounds.min.max(-2.0);
        let hi = self.bounds.max.min(2.0);
        let mut worst: f64 = 0.0;
        let mut check = |name: &str, analytic: f64, numeric: f64, point: &[f64]| -> Result<(), ProblemError> {
            let err = (analytic - numeric).abs() / analytic.abs().max(1.0);
            worst = worst.max(err);
            if err > 1e-5 || !analytic.is_finite() {
                return Err(ProblemError::Derivative {
                    name: name.to_string(),
                    analytic,
                    numeric,
                    point: point.to_vec(),
                });
            }
            Ok(())
        };
        for _ in 0..samples {
            let s = rng.random_range(0.0..horizon);
            let t = rng.random_range(s..=horizon);
            let x = rng.random_range(-2.0..2.0);
            let u = if hi > lo { rng.random_range(lo..hi) } else { lo };
            let pt = [t, s, x, u];
            for (tag, k) in [("b", &self.b), ("sigma", &self.sigma)] {
                check(&format!("d{tag}/dx"), k.d_x(t, s, x, u), central(|y| k.value(t, s, y, u), x), &pt)?;
                check(&format!("d{tag}/du"), k.d_u(t, s, x, u), central(|v| k.value(t, s, x, v), u), &pt)?;
                check(&format!("d{tag}/dt"), k.d_t(t, s, x, u), central(|r| k.value(r, s, x, u), t), &pt)?;
                check(&format!("d2{tag}/dtdx"), k.d_tx(t, s, x, u), central(|r| k.d_x(r, s, x, u), t), &pt)?;
                check(&format!("d2{tag}/dtdu"), k.d_tu(t, s, x, u), central(|r| k.d_u(r, s, x, u), t), &pt)?;
            }
            check("df/dx", self.f.d_x(t, x, u), central(|y| self.f.value(t, y, u), x), &pt)?;
            check("df/du", self.f.d_u(t, x, u), central(|v| self.f.value(t, x, v), u), &pt)?;
            check("dg/dx", self.g.d_x(x), central(|y| self.g.value(y), x), &pt)?;
        }
        Ok(worst)
    }
}

/// A problem together with its discretization.
#[derive(Debug, Clone)]
pub struct Model {
    pub spec: ProblemSpec,
    pub grid: TimeGrid,
    pub delay: DelaySpec,
}

impl Model {
    pub fn new(spec: ProblemSpec, grid: TimeGrid, delay: DelaySpec) -> Self {
        Self { spec, grid, delay }
    }

    pub fn steps(&self) -> usize {
        self.grid.steps()
    }

    pub fn k(&self) -> usize {
        self.delay.k()
    }

    pub fn check_control(&self, u: &ControlPath) -> Result<(), ProblemError> {
        if u.len() != self.steps() {
            return Err(ProblemError::ControlLength {
                expected: self.steps(),
                got: u.len(),
            });
        }
        ControlPath::new(u.values.clone(), &self.spec.bounds).map(|_| ())
    }
}
