//! Extended-target cardinalized PHD corrector on discretized state spaces.
//!
//! The crate computes the posterior intensity and posterior cardinality
//! distribution of a CPHD filter whose targets may each generate any number
//! of measurements, and carries the reference machinery used to check it:
//! the Poisson-cardinality and single-measurement reductions, and an exact
//! multi-target Bayes posterior for tiny scenarios.

// NaN must fail `!(x >= limit)` guards.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod combinatorics;
pub mod corrector;
pub mod error;
pub mod harness;
pub mod numeric;
pub mod oracle;
pub mod pgf;
pub mod reductions;
pub mod statespace;

pub use combinatorics::{EnumerationCap, LabelSet, Partition, PartitionTable};
pub use corrector::{corrector_step, CoefficientTable, CorrectorOptions, CorrectorResult, Prior, Scenario};
pub use error::{Error, Result};
pub use pgf::CardinalityPgf;
pub use statespace::{IntensityGrid, MeasurementKernel, MeasurementSet, SensorModel, SpatialDensity, StateGrid};
