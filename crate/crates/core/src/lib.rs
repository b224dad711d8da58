//! Sketched second-order optimization toolkit.
//!
//! Building blocks for Newton Sketch solvers built on sparse sketching
//! operators (LESS embeddings and their relatives), with a leverage-score
//! subsystem, exact step-size policies, a Monte-Carlo lab for the inverse
//! moments of the sketched Hessian, and experiment orchestration with CSV
//! output.

pub mod data;
pub mod error;
pub mod experiment;
pub mod leverage;
pub mod linalg;
pub mod moments;
pub mod problem;
pub mod rng;
pub mod sketch;
pub mod solver;

pub use error::{Error, Result};
pub use leverage::{
    approx_leverage, effective_dims, estimate_deff, exact_leverage, exact_leverage_ridge,
    ApproxParams, DeffMode, LeverageProfile,
};
pub use problem::{HessianSqrtView, Objective, ObjectiveKind};
pub use sketch::{
    apply_sketch, build_sketch, draw_sparsifier, sketched_hessian, RowDistribution, Scaling,
    SketchKind, SketchOperator, SketchSpec, Sparsifier,
};
pub use solver::{
    distributed_step, newton_exact_step, newton_sketch_step, solve, trimmed_mean, EffectiveDims,
    Method, SolveOutcome, SolverConfig, StepMode, StepPolicy, TrialTrace,
};
