//! EV charging in a microgrid of buildings with wind and hydrogen storage,
//! scheduled by an event-based randomized policy learned with Monte-Carlo
//! policy gradient.
//!
//! Module map:
//! - [`scenario`]: configuration, tariffs, wind and commuting draws.
//! - [`dynamics`]: EV, storage and exchange physics, the true world state.
//! - [`events`]: elastic ratios and the event each building reports.
//! - [`policy`]: weight tables, action selection and mLLLP dispatch.
//! - [`gradient`]: rollouts and the event-conditioned gradient estimator.
//! - [`optimizer`]: per-stage gradient iterations and the exchange-bound adjustment.
//! - [`harness`]: baselines, the receding-horizon runner and reports.

pub mod dynamics;
pub mod error;
pub mod events;
pub mod gradient;
pub mod harness;
pub mod optimizer;
pub mod policy;
pub mod rng;
pub mod scenario;

pub use error::{CheckpointError, CompareError, ConfigError, SimError};
