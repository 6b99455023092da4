//! Proximal causal inference with possibly non-unique bridge functions.
//!
//! The outcome bridge is estimated as the minimum-length element of a
//! sublevel set of the sieve criterion, and the plug-in mean is corrected
//! with an estimated representer so that Wald intervals are valid.

// `!(x >= lo)` style checks are used on purpose: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod basis;
pub mod bridge_solver;
pub mod data;
pub mod error;
pub mod inference;
pub mod linalg;
pub mod oracle;
pub mod projection;
pub mod representer;
pub mod simulation;

pub use basis::{BasisSet, BasisSpec, DesignMatrix, Family, RescaleMap};
pub use bridge_solver::{BridgeEstimate, QuadraticCriterion, SelectionWeights, SieveSystem};
pub use data::Dataset;
pub use error::{Error, Result};
pub use inference::{estimate, AteReport, Estimate, EstimateReport, EstimatorConfig};
pub use oracle::{AffineSolutionSet, BridgeKind, DiscreteJoint, IdentificationReport};
pub use projection::{ProjectionModel, Projector};
pub use representer::RepresenterEstimate;
pub use simulation::{run_monte_carlo, DgpSpec, LinearGaussianSpec, McConfig, McResult};
