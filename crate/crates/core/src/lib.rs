//! Canonical correlation analysis with bootstrap confidence intervals for the
//! canonical directions, asymptotic and sample-splitting baselines, simulation
//! generators and a Monte-Carlo evaluation harness.

// NaN-rejecting checks are written as `!(a <= b)` on purpose.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
pub mod alignment;
pub mod assignment;
pub mod baseline;
pub mod bootstrap;
pub mod cca;
pub mod error;
pub mod eval;
pub mod io;
pub mod linalg;
pub mod model;
pub mod parallel;
pub mod pipeline;
pub mod rng;
pub mod simgen;

pub use alignment::{align, AlignmentStrategy, AlignmentTransform};
pub use bootstrap::{bootstrap_cca, BootstrapConfig, CiTable, CiTables, IntervalKind};
pub use cca::{estimate_cca, population_cca, CcaSolution, DataMatrix};
pub use error::{Block, CcaError, Result};
pub use model::{invert_cca_model, CovarianceModel};
