//! Stochastic blockmodel estimation and inference.
//!
//! Complete-data maximum likelihood, exact marginal likelihood by
//! enumeration, mean-field variational EM, likelihood modularity search,
//! and the asymptotic inference built on them (Wilks statistics,
//! confidence regions, parametric bootstrap, Monte Carlo checks).

// Index loops mirror the block-matrix algebra; `!(x > 0.0)` also rejects NaN.
#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord, clippy::type_complexity)]

pub mod align;
pub mod cgm;
pub mod cli;
pub mod degree_corrected;
pub mod error;
pub mod exact;
pub mod experiments;
pub mod inference;
pub mod io;
pub mod model;
pub mod profile;
pub mod spectral;
pub mod stats;
pub mod variational;

pub use error::{Error, Result};
pub use model::{Graph, Labels, LogitParams, ModelParams, SufficientStats};
