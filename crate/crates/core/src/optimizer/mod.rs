//! Per-stage policy improvement: gradient iterations, stopping tests and the
//! projection that pulls the expected exchange back inside its bounds.

pub mod adjust;
pub mod projection;
pub mod stage;

pub use adjust::{allocate_adjustment, AdjustTarget, Allocation, BuildingSlack, Direction};
pub use projection::{kkt_residual, project_weights, Projection};
pub use stage::{gradient_step, optimize_stage, step_size, IterationLog, OptimizeOptions, StageResult, StopReason};
