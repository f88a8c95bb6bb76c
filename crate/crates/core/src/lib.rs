//! EM and Monte Carlo EM for two-stage hierarchical models.
//!
//! Two bundled models: a one-way random-effects linear mixed model, where
//! every quantity has a closed form and serves as a test bed, and a
//! logit-normal GLMM whose E-step needs Markov chain Monte Carlo. On top sit
//! the deterministic EM driver, plain and stable MCEM, the replicate-based
//! adaptive rule, an ascent-based acceptance check, and convergence
//! diagnostics.

// NaN must fail validation, hence `!(x > 0.0)` rather than `x <= 0.0`.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
#![allow(clippy::needless_range_loop)]

pub mod diagnostics;
pub mod em;
pub mod engine;
pub mod error;
pub mod glmm;
pub mod lmm;
pub mod numeric;

pub use em::{
    rng_stream, run_em, run_map, stopping_consecutive, stopping_relative_change, Component, Draws,
    IterationRecord, Model, ParamKind, Sampling, SimRng, StoppingConfig, Theta, Trace,
};
pub use engine::{
    ascent_check, in_k_set, replicate_adapt, run_mcem, run_mcem_adaptive, schedule_size,
    stable_mcem_run, AdaptStep, AdaptiveConfig, AscentCheck, AscentDecision, ScheduleConfig,
    StableConfig, Transform,
};
pub use error::{Error, Result};
pub use glmm::{GlmmModel, GlmmTheta, PanelDataset};
pub use lmm::{GroupedDataset, LmmModel, LmmTheta};
