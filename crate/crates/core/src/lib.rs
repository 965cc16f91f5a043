//! Critical-point Tikhonov regularization for linear inverse problems:
//! relative subgradients, Bregman distances, inexact and near-minimizing
//! iterative solvers, and the rate experiments that go with them.
//!
//! The crate is organized around four layers:
//!
//! - [`grid`] / [`operator`] / [`noise`]: quadrature-weighted vectors, dense
//!   linear operators (including the depth-profiling integral operator and a
//!   diagonal sequence operator), and reproducible noise.
//! - [`regularizer`]: regularization functionals with named gradient
//!   selections, tolerance functions and Bregman distances.
//! - [`variational`]: the Tikhonov functional, its critical-point residual,
//!   gradient-descent and heavy-ball solvers with gradient-norm and
//!   near-minimizer stopping, and a direct normal-equations oracle.
//! - [`rates`]: noise ladders, log-log rate fits, converse and
//!   finite-dimensional diagnostics, and the sequence-space counterexample.

pub mod error;
pub mod grid;
pub mod noise;
pub mod operator;
pub mod rates;
pub mod regularizer;
pub mod variational;

pub use error::{Error, Result};
pub use grid::{make_grid, Grid, GridFunction};
pub use noise::{add_noise, NoiseSpec};
pub use operator::LinearProblemOperator;
pub use rates::{
    converse_check, counterexample_run, default_source_profile, fit_rate, gap_rate_check,
    generic_source_profile,
    make_source_instance, run_noise_ladder, verify_b2_constant, ConverseReport,
    CounterexampleReport, EpsSchedule, GapRateReport, LadderConfig, LadderRun, Metric, RateFit,
    RunRecord, SolverChoice, SourceSpec,
};
pub use regularizer::{
    check_relative_subgradient, perturbation_bound, Regularizer, RegularizerKind, Selection,
    ToleranceFn,
};
pub use variational::{
    choose_alpha, SolveOptions, SolveReport, StopReason, StoppingRule, TikhonovProblem,
    DEFAULT_ITERATION_CAP,
};
