//! Confidence-interval propagation for deterministic PDE problems.
//!
//! Noisy boundary/initial data is summarized by a confidence region over the
//! data values; the region is then pushed through a physics-informed network
//! solver to per-location solution bounds with a joint coverage guarantee.
//! The crate provides:
//!
//! - a tape-based nested autodiff engine and tanh-MLP field approximator,
//! - the three benchmark PDE problems with samplers and exact solutions,
//! - chi-squared / Hotelling / Hoeffding / expert confidence regions,
//! - physics-informed training of the approximator,
//! - hypergradient engines (unrolled reverse, Neumann-series and
//!   conjugate-gradient implicit differentiation),
//! - the projected bi-level bound optimizer and its exhaustive-search
//!   baseline,
//! - an amortized meta-model that predicts bounds for all locations at once,
//! - closed-form and Monte-Carlo validation oracles.

pub mod band;
pub mod effi;
pub mod es;
pub mod hypergrad;
pub mod net;
pub mod picprop;
pub mod pinn;
pub mod problems;
pub mod region;
pub mod rng;
pub mod special;
pub mod tape;
pub mod validation;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("input dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("derivative order {order} not supported (max 2)")]
    UnsupportedOrder { order: usize },
    #[error("parameter layout mismatch: expected {expected} values, got {got}")]
    LayoutMismatch { expected: usize, got: usize },
    #[error("non-finite loss in {term} term: {value}")]
    NonFiniteLoss { term: &'static str, value: f64 },
    #[error("invalid network spec: {0}")]
    InvalidSpec(String),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("unknown noise family: {0}")]
    UnknownNoise(String),
    #[error("matrix is singular or not positive definite")]
    SingularMatrix,
    #[error("sample covariance is degenerate")]
    DegenerateCovariance,
    #[error("need more samples than dimensions: m={m}, n={n}")]
    TooFewSamples { m: usize, n: usize },
    #[error("support half-width must be positive (component {index})")]
    NonPositiveHalfWidth { index: usize },
    #[error("invalid bounds: lower exceeds upper at component {index}")]
    InvalidBounds { index: usize },
    #[error("region dimension mismatch: region is {region}, vector is {vector}")]
    RegionDimension { region: usize, vector: usize },
    #[error("training diverged at step {step} (loss {loss})")]
    Divergence { step: usize, loss: f64 },
    #[error("recorded trajectory has {recorded} steps, {requested} requested")]
    TrajectoryTooShort { recorded: usize, requested: usize },
    #[error("Neumann series diverging after {terms} terms (term norm {norm:.3e}); reduce the series scale")]
    NeumannDivergence { terms: usize, norm: f64 },
    #[error("conjugate gradient breakdown: curvature {curvature:.3e}")]
    CgBreakdown { curvature: f64 },
    #[error("conjugate gradient did not converge in {iters} iterations (residual {residual:.3e})")]
    CgNoConvergence { iters: usize, residual: f64 },
    #[error("query point outside the problem domain: {0:?}")]
    QueryOutsideDomain(Vec<f64>),
    #[error("{0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;
