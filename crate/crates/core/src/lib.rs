//! Peaks-over-threshold statistics for pore populations.
//!
//! The pipeline runs in five stages, each in its own module:
//!
//! - [`geometry`]: per-pore equivalent diameter, aspect ratio and sphericity,
//!   plus ingestion of segmented pore tables into a [`SpecimenDataset`].
//! - [`threshold`]: mean-excess and parameter-stability diagnostics used to
//!   pick the tail threshold.
//! - [`tail`]: the Generalized Pareto tail, its MLE and MOM estimators and
//!   their asymptotic covariances.
//! - [`largest`]: the distribution of the largest pore in a volume of
//!   interest, in closed form and by Monte Carlo propagation of count and
//!   parameter uncertainty.
//! - [`equivalence`]: p-values, q-values and KS distances used to compare an
//!   observed largest pore against a predicted distribution.
//!
//! [`synthetic`] generates specimens from a known ground truth and provides
//! brute-force largest-pore simulations used as test oracles. [`io`] holds the
//! on-disk report and table formats shared by the CLI and the Python module.

pub mod equivalence;
pub mod error;
pub mod geometry;
pub mod io;
pub mod largest;
pub mod synthetic;
pub mod tail;
pub mod threshold;

pub use error::{Error, Result};
pub use geometry::{PoreRecord, SpecimenDataset, SpecimenMeta};
pub use largest::{LargestPoreDistribution, McConfig, UncertaintyMode, VolumeOfInterest};
pub use tail::{Estimator, GpdParams, TailFit};

/// Crate version, embedded in every stochastic output for provenance.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
