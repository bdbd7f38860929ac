//! Update-phase planning and the dispatch loop that drives a plan through a
//! simulator or executor.

mod plan;
mod run;

pub use plan::{
    assigned_fast, build_plan, Action, ActionKind, Device, Direction, Placement, Stream, Stride,
    UpdatePlan,
};
pub use run::{run_update, CompletionReport, Span, UpdateTarget};
