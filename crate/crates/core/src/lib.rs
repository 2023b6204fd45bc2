//! Bound-optimization algorithms and their convergence diagnostics.
//!
//! Four bound optimizers share one iteration contract ([`optimizer::IterationMap`]):
//!
//! - EM for Gaussian mixtures and discrete HMMs ([`em`])
//! - Generalized Iterative Scaling for maximum-entropy and logistic models ([`gis`])
//! - KL-divergence NMF with multiplicative updates ([`nmf`])
//! - the concave-convex procedure ([`cccp`])
//!
//! [`diagnostics`] estimates the convergence-rate matrix `M'` at a fixed point,
//! compares predicted and observed linear rates, and relates each step to the
//! gradient and Newton directions. [`experiment`] ties it together behind
//! declarative JSON experiment files.

// `!(x > 0.0)` is used on purpose so NaN fails validation, and index loops
// read better than iterator chains in the small dense kernels.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod cccp;
pub mod diagnostics;
pub mod em;
pub mod error;
pub mod experiment;
pub mod gis;
pub mod nmf;
pub mod numerics;
pub mod optimizer;
pub mod param;
pub mod rng;

pub use error::{Error, Result};
pub use optimizer::{run, IterationMap, LearningCurve, RunOutcome, RunStatus, StopRule};
pub use param::ParamVector;
