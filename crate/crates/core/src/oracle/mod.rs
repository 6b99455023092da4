//! Exact ground truth for finite-valued data-generating processes.
//!
//! With discrete variables the bridge integral equations are matrix
//! equations, so solution sets, counterfactual means and the
//! identification conditions are computed by dense linear algebra.

pub mod bridge;
pub mod distance;
pub mod joint;
pub mod presets;

pub use bridge::{
    bridge_solution_set, functional_identified, inverse_propensity_weights, outcome_plugin_mean,
    outcome_regression_weights, root_n_range_member, treatment_weighted_mean,
    true_counterfactual_mean, AffineSolutionSet, BridgeKind, BridgeSystem, IdentificationReport,
};
pub use distance::{directed_distance, Distance, Metric};
pub use joint::{DiscreteJoint, JointDocument};
