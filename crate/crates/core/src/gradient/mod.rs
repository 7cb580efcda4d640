//! Monte-Carlo estimate of the event-conditioned policy gradient of the
//! sliding-window cost, plus an exact enumeration backend for small cases.

pub mod enumerate;
pub mod estimator;
pub mod rollout;

pub use estimator::{
    estimate_action_value, estimate_event_stats, expected_exchange, exchange_violation, policy_gradient,
    weight_gradient, EventStats, GradientEstimate,
};
pub use rollout::{rollout, sample_inputs, BuildingInputs, BuildingSim, RolloutBatch, RolloutContext, SamplePath, StateSignature};
