use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::plan::{Action, Direction, Stream, UpdatePlan};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Span {
    pub start_ns: u64,
    pub end_ns: u64,
}

/// Something that can run plan actions on a clock: the simulator or the
/// numeric executor.
pub trait UpdateTarget {
    /// How many dynamic subgroups' optimizer state fit on the fast tier at
    /// once. Zero is only acceptable when the plan has no dynamic
    /// fast-device subgroup.
    fn staging_slots(&self, plan: &UpdatePlan) -> usize;

    /// Run `action`, starting no earlier than `ready_ns`. Completion is
    /// atomic from the coordinator's point of view.
    fn dispatch(&mut self, action: &Action, ready_ns: u64) -> Result<Span>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionReport {
    /// Indexed by action id.
    pub spans: Vec<Span>,
    /// Dependencies as enforced, including staging-slot reuse.
    pub dependencies: Vec<Vec<usize>>,
    pub staging_slots: usize,
}

/// Issue every action of `plan` to `target` in emission order. An action
/// becomes ready once its dependencies have completed and the previous
/// action on its stream queue has finished.
pub fn run_update<T: UpdateTarget + ?Sized>(
    plan: &UpdatePlan,
    target: &mut T,
) -> Result<CompletionReport> {
    plan.validate()?;
    let slots = target.staging_slots(plan);
    let deps = plan.effective_dependencies(slots)?;
    let mut spans: Vec<Span> = Vec::with_capacity(plan.actions.len());
    let mut queue_end: HashMap<(Stream, Direction), u64> = HashMap::new();

    for action in &plan.actions {
        let mut ready = deps[action.id]
            .iter()
            .map(|&d| spans[d].end_ns)
            .max()
            .unwrap_or(0);
        if let Some(q) = action.queue() {
            ready = ready.max(queue_end.get(&q).copied().unwrap_or(0));
        }
        let span = target.dispatch(action, ready).map_err(|e| match e {
            Error::Scheduling { .. } | Error::Consistency { .. } => e,
            other => Error::Scheduling {
                action: action.id,
                kind: action.kind.to_string(),
                reason: other.to_string(),
            },
        })?;
        if span.start_ns < ready || span.end_ns < span.start_ns {
            return Err(Error::Scheduling {
                action: action.id,
                kind: action.kind.to_string(),
                reason: format!(
                    "target returned [{}, {}) before the action was ready at {ready}",
                    span.start_ns, span.end_ns
                ),
            });
        }
        if let Some(q) = action.queue() {
            queue_end.insert(q, span.end_ns);
        }
        spans.push(span);
    }
    Ok(CompletionReport {
        spans,
        dependencies: deps,
        staging_slots: slots,
    })
}
