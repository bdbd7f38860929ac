//! Interleaved host/accelerator optimizer-state offloading: stride model,
//! update scheduling, discrete-event simulation and a numeric executor.

pub mod error;
pub mod executor;
pub mod lanes;
pub mod perfmodel;
pub mod precision;
pub mod profile;
pub mod scheduler;
pub mod sharding;
pub mod sim;

pub use error::{Error, Result};
pub use lanes::Lane;
pub use perfmodel::{estimate_update_time, optimal_stride, StrideResult, UpdateRatio};
pub use precision::{Half, Precision};
pub use profile::SystemProfile;
pub use scheduler::{build_plan, ActionKind, Placement, Stride, UpdatePlan};
pub use sharding::{ShardedOptimizer, Subgroup};
pub use sim::{simulate_update_phase, Timeline};
