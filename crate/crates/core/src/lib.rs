//! Multi-view probabilistic clustering with missing-view tolerance.
//!
//! The pipeline turns a multi-view dataset (several feature representations of
//! the same samples, possibly with unobserved views per sample) into a flat
//! clustering without knowing the number of clusters:
//!
//! 1. [`similarity`] — per-view similarity matrices and KNN lists.
//! 2. [`probfn`] — learn a monotone piecewise probability function per view by
//!    self-supervised consistency across single-view, cross-view and
//!    multi-view estimates.
//! 3. [`fusion`] — fuse per-view probabilities into one symmetric pairwise
//!    posterior P(same class), tolerant of missing views.
//! 4. [`refine`] — graph-context refinement (path propagation, co-neighbor
//!    propagation) to suppress noise and outliers.
//! 5. [`cluster`] — seeded local-move partition optimization maximizing the
//!    joint probability of intra-cluster links.
//!
//! [`dataset`] holds the data model and fixtures, [`metrics`] the clustering
//! evaluation measures, and [`pipeline`] the end-to-end orchestration used by
//! the CLI.

pub mod cluster;
pub mod dataset;
mod error;
pub mod fusion;
pub mod metrics;
pub mod pipeline;
pub mod probfn;
pub mod refine;
pub mod similarity;

pub use error::{Error, Result};

/// Probability clamp used wherever log-odds or odds products are formed.
pub const PROB_EPS: f64 = 1e-6;
