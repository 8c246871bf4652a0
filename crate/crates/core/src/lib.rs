//! Penalized spatial effects for compound Poisson-gamma (Tweedie) models.
//!
//! Location-level effects `α` enter a fitted mean model as offsets and are
//! estimated under a ridge plus graph-Laplacian penalty by
//! majorization-descent. The crate also provides cross-validated tuning,
//! simulation tools and per-location summaries across replications.

pub mod data;
pub mod error;
pub mod fixtures;
pub mod graph;
pub mod io;
pub mod optimizer;
pub mod replicate;
pub mod seed;
pub mod sim;
pub mod solver;
pub mod study;
pub mod tuning;
pub mod tweedie;

pub use data::{Observation, ObservationTable};
pub use error::{Error, Result};
pub use graph::{LaplacianView, SpatialGraph};
pub use optimizer::{fit, fit_from, FitResult, PenaltyConfig, Variant};
pub use solver::SolverKind;
pub use tuning::{cross_validate, predictive_deviance, CvReport, GridAxis, GridSpec};
pub use tweedie::{cp_deviance, TweedieSpec};
