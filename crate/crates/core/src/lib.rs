//! Heterogeneous scalar-on-function regression.
//!
//! Each subject carries functional covariates `X_ij(t)` and a scalar outcome
//! `y_i`; the linear predictor is `α + Σ_j ∫ X_ij(t) β_ij(t) dt` with
//! subject-specific coefficient functions expanded in a B-spline basis. A
//! pairwise fusion penalty merges subjects whose coefficient functions agree,
//! which recovers latent subgroups. For large samples the subjects are first
//! pre-clustered into `K` groups and the groups are fused instead.
//!
//! The crate is `no_std` (with `alloc`); file formats and the command-line
//! interface live in the `ghfm` crate.

#![no_std]
// comparisons are negated on purpose so that NaN is rejected
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

extern crate alloc;

pub mod baselines;
pub mod bspline;
pub mod error;
pub mod family;
pub mod fdata;
pub mod fusionfit;
pub mod linalg;
pub mod metrics;
pub mod model;
pub mod precluster;
pub mod simgen;
pub(crate) mod solver;
pub mod tuner;

/// Crate version, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub use bspline::{BasisSpec, QuadratureRule};
pub use error::{GhfmError, Result};
pub use family::Family;
pub use fdata::{compute_gamma, DesignCache, FunctionalDataset};
pub use fusionfit::{fit_fused, fused_objective, lambda_max, PenaltyConfig, Units};
pub use model::{CoefficientSet, FitResult, Partition, Predictions};
pub use precluster::{precluster, PreclusterOptions, PreclusterResult};
