use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Period of the fast-device predicate: subgroup `i` goes to the fast device
/// when `(i + 1) % period == 0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stride {
    AllCpu,
    Every(u32),
}

impl fmt::Display for Stride {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Stride::AllCpu => f.write_str("ALL_CPU"),
            Stride::Every(k) => write!(f, "{k}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Device {
    Cpu,
    Fast,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Placement {
    /// Static residents are the first subgroups.
    StaticFirst,
    /// Static residents are the last subgroups, so their updates cover the
    /// trailing transfers of the dynamic ones.
    StaticLast,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Stream {
    Param,
    Momentum,
    Variance,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Direction {
    /// Fast tier towards the host (including the on-device model16 write,
    /// which shares the parameter stream with the parameter flush).
    Out,
    In,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ActionKind {
    CpuUpdate,
    GpuUpdate,
    CpuDownscale,
    FlushOutP,
    FlushOutM,
    FlushOutV,
    FlushOutModel16,
    PrefetchP,
    PrefetchM,
    PrefetchV,
    H2DParams16,
    GradFlush,
}

impl ActionKind {
    pub const ALL: [ActionKind; 12] = [
        ActionKind::CpuUpdate,
        ActionKind::GpuUpdate,
        ActionKind::CpuDownscale,
        ActionKind::FlushOutP,
        ActionKind::FlushOutM,
        ActionKind::FlushOutV,
        ActionKind::FlushOutModel16,
        ActionKind::PrefetchP,
        ActionKind::PrefetchM,
        ActionKind::PrefetchV,
        ActionKind::H2DParams16,
        ActionKind::GradFlush,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ActionKind::CpuUpdate => "CpuUpdate",
            ActionKind::GpuUpdate => "GpuUpdate",
            ActionKind::CpuDownscale => "CpuDownscale",
            ActionKind::FlushOutP => "FlushOutP",
            ActionKind::FlushOutM => "FlushOutM",
            ActionKind::FlushOutV => "FlushOutV",
            ActionKind::FlushOutModel16 => "FlushOutModel16",
            ActionKind::PrefetchP => "PrefetchP",
            ActionKind::PrefetchM => "PrefetchM",
            ActionKind::PrefetchV => "PrefetchV",
            ActionKind::H2DParams16 => "H2DParams16",
            ActionKind::GradFlush => "GradFlush",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s)
    }

    pub fn is_update(self) -> bool {
        matches!(self, ActionKind::CpuUpdate | ActionKind::GpuUpdate)
    }

    pub fn is_prefetch(self) -> bool {
        matches!(self, ActionKind::PrefetchP | ActionKind::PrefetchM | ActionKind::PrefetchV)
    }

    /// Actions that release a dynamic subgroup's staging buffers.
    pub fn is_flush(self) -> bool {
        matches!(
            self,
            ActionKind::FlushOutP
                | ActionKind::FlushOutM
                | ActionKind::FlushOutV
                | ActionKind::FlushOutModel16
        )
    }

    /// FP32 optimizer-state swap-out; allowed to spill past the phase end.
    pub fn is_state_flush(self) -> bool {
        matches!(self, ActionKind::FlushOutP | ActionKind::FlushOutM | ActionKind::FlushOutV)
    }

    pub fn direction(self) -> Option<Direction> {
        if self.is_flush() {
            Some(Direction::Out)
        } else if self.is_prefetch() {
            Some(Direction::In)
        } else {
            None
        }
    }
}

impl fmt::Display for ActionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Action {
    pub id: usize,
    pub kind: ActionKind,
    /// One subgroup, except for batched host downscales.
    pub subgroups: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stream: Option<Stream>,
    pub depends_on: Vec<usize>,
}

impl Action {
    pub fn subgroup(&self) -> usize {
        self.subgroups[0]
    }

    /// FIFO queue this action is ordered on, if any.
    pub fn queue(&self) -> Option<(Stream, Direction)> {
        Some((self.stream?, self.kind.direction()?))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpdatePlan {
    pub num_subgroups: usize,
    pub stride: Stride,
    pub placement: Placement,
    /// Every action waits for the previous one (the non-overlapping
    /// baseline). Set for `Stride::AllCpu` plans.
    pub blocking: bool,
    pub assignments: Vec<Device>,
    pub static_set: Vec<usize>,
    pub actions: Vec<Action>,
}

pub(crate) fn static_count(num_subgroups: usize, static_ratio: f64) -> usize {
    // absorb representation error such as 0.29 * 100 = 28.999999999999996
    ((static_ratio * num_subgroups as f64) + 1e-9).floor() as usize
}

/// `assignment(i)` as a closed-form predicate.
pub fn assigned_fast(i: usize, stride: Stride, is_static: bool) -> bool {
    is_static
        || match stride {
            Stride::AllCpu => false,
            Stride::Every(k) => (i + 1).is_multiple_of(k as usize),
        }
}

struct Emitter {
    actions: Vec<Action>,
    blocking: bool,
}

impl Emitter {
    fn push(
        &mut self,
        kind: ActionKind,
        subgroups: Vec<usize>,
        stream: Option<Stream>,
        mut depends_on: Vec<usize>,
    ) -> usize {
        let id = self.actions.len();
        if self.blocking && id > 0 && !depends_on.contains(&(id - 1)) {
            depends_on.push(id - 1);
        }
        depends_on.sort_unstable();
        self.actions.push(Action {
            id,
            kind,
            subgroups,
            stream,
            depends_on,
        });
        id
    }
}

/// Build the update plan for one rank.
///
/// Fast-device subgroups follow `(i + 1) % k == 0` plus the static set.
/// Host subgroups are updated in order and queued; each fast-device update
/// triggers a batched host downscale of the queue followed by FP16 uploads.
/// At the first host subgroup after a dynamic fast-device subgroup, that
/// subgroup is flushed out and the next one is prefetched. Static residents
/// never move. `Stride::AllCpu` produces the blocking baseline where every
/// action waits on its predecessor.
pub fn build_plan(
    num_subgroups: usize,
    stride: Stride,
    static_ratio: f64,
    placement: Placement,
) -> Result<UpdatePlan> {
    if let Stride::Every(0) = stride {
        return Err(Error::invalid("stride must be at least 1"));
    }
    if !(0.0..=1.0).contains(&static_ratio) {
        return Err(Error::invalid(format!(
            "static ratio must be within [0, 1], got {static_ratio}"
        )));
    }
    let n_static = static_count(num_subgroups, static_ratio).min(num_subgroups);
    let static_set: Vec<usize> = match placement {
        Placement::StaticFirst => (0..n_static).collect(),
        Placement::StaticLast => (num_subgroups - n_static..num_subgroups).collect(),
    };
    if n_static == num_subgroups && num_subgroups > 0 && stride != Stride::AllCpu {
        log::warn!("every subgroup is a static resident; the plan has no dynamic subgroups");
    }
    let is_static: Vec<bool> = (0..num_subgroups).map(|i| static_set.contains(&i)).collect();
    let assignments: Vec<Device> = (0..num_subgroups)
        .map(|i| {
            if assigned_fast(i, stride, is_static[i]) {
                Device::Fast
            } else {
                Device::Cpu
            }
        })
        .collect();

    let blocking = stride == Stride::AllCpu;
    let mut em = Emitter {
        actions: Vec::new(),
        blocking,
    };

    if blocking {
        for (i, &dev) in assignments.iter().enumerate() {
            if dev == Device::Fast {
                let u = em.push(ActionKind::GpuUpdate, vec![i], None, vec![]);
                em.push(ActionKind::FlushOutModel16, vec![i], None, vec![u]);
            } else {
                let u = em.push(ActionKind::CpuUpdate, vec![i], None, vec![]);
                let d = em.push(ActionKind::CpuDownscale, vec![i], None, vec![u]);
                em.push(ActionKind::H2DParams16, vec![i], None, vec![d]);
            }
        }
    } else {
        let nav = Nav {
            assignments: &assignments,
            is_static: &is_static,
        };
        let mut state = EmitState::default();
        let k = match stride {
            Stride::Every(k) => k as usize,
            Stride::AllCpu => unreachable!(),
        };
        for (i, &dev) in assignments.iter().enumerate() {
            if dev == Device::Fast {
                if is_static[i] {
                    let u = em.push(ActionKind::GpuUpdate, vec![i], None, vec![]);
                    em.push(ActionKind::FlushOutModel16, vec![i], None, vec![u]);
                } else {
                    state.prefetch(&mut em, i);
                    let deps = state.prefetched_by[&i].clone();
                    let u = em.push(ActionKind::GpuUpdate, vec![i], None, deps);
                    state.updated.insert(i, u);
                    state.unflushed = Some(i);
                }
                state.downscale_pending(&mut em);
                // a fast-device subgroup directly followed by another one
                // never reaches the host branch below, so swap here
                if !is_static[i] && i + 1 < num_subgroups && assignments[i + 1] == Device::Fast {
                    state.flush(&mut em, i);
                    if let Some(next) = nav.next_on_gpu(i) {
                        state.prefetch(&mut em, next);
                    }
                }
                continue;
            }
            if i % k == 0 {
                if let Some(prev) = nav.prev_on_gpu(i) {
                    state.flush(&mut em, prev);
                }
                if let Some(next) = nav.next_on_gpu(i) {
                    state.prefetch(&mut em, next);
                }
            }
            let u = em.push(ActionKind::CpuUpdate, vec![i], None, vec![]);
            state.pending.push((i, u));
        }
        if let Some(x) = state.unflushed {
            state.flush(&mut em, x);
        }
        state.downscale_pending(&mut em);
    }

    let plan = UpdatePlan {
        num_subgroups,
        stride,
        placement,
        blocking,
        assignments,
        static_set,
        actions: em.actions,
    };
    debug_assert!(plan.validate().is_ok(), "{:?}", plan.validate());
    Ok(plan)
}

#[derive(Default)]
struct EmitState {
    /// Host subgroups updated but not yet downscaled: (subgroup, update id).
    pending: Vec<(usize, usize)>,
    /// Prefetch action ids per dynamic subgroup.
    prefetched_by: std::collections::HashMap<usize, Vec<usize>>,
    updated: std::collections::HashMap<usize, usize>,
    flushed: BTreeSet<usize>,
    /// Dynamic subgroup whose state is still in a staging buffer.
    unflushed: Option<usize>,
}

impl EmitState {
    fn flush(&mut self, em: &mut Emitter, x: usize) {
        if self.flushed.contains(&x) || !self.updated.contains_key(&x) {
            return;
        }
        let u = self.updated[&x];
        let m16 = em.push(ActionKind::FlushOutModel16, vec![x], Some(Stream::Param), vec![u]);
        em.push(ActionKind::FlushOutM, vec![x], Some(Stream::Momentum), vec![u]);
        em.push(ActionKind::FlushOutV, vec![x], Some(Stream::Variance), vec![u]);
        em.push(ActionKind::FlushOutP, vec![x], Some(Stream::Param), vec![u, m16]);
        self.flushed.insert(x);
        if self.unflushed == Some(x) {
            self.unflushed = None;
        }
    }

    fn prefetch(&mut self, em: &mut Emitter, y: usize) {
        if self.prefetched_by.contains_key(&y) {
            return;
        }
        // the staging buffer in use must be drained first
        if let Some(x) = self.unflushed {
            self.flush(em, x);
        }
        let m = em.push(ActionKind::PrefetchM, vec![y], Some(Stream::Momentum), vec![]);
        let v = em.push(ActionKind::PrefetchV, vec![y], Some(Stream::Variance), vec![]);
        let p = em.push(ActionKind::PrefetchP, vec![y], Some(Stream::Param), vec![]);
        self.prefetched_by.insert(y, vec![m, v, p]);
    }

    fn downscale_pending(&mut self, em: &mut Emitter) {
        if self.pending.is_empty() {
            return;
        }
        let batch: Vec<usize> = self.pending.iter().map(|&(i, _)| i).collect();
        let deps: Vec<usize> = self.pending.iter().map(|&(_, u)| u).collect();
        let d = em.push(ActionKind::CpuDownscale, batch.clone(), None, deps);
        for i in batch {
            em.push(ActionKind::H2DParams16, vec![i], None, vec![d]);
        }
        self.pending.clear();
    }
}

struct Nav<'a> {
    assignments: &'a [Device],
    is_static: &'a [bool],
}

impl Nav<'_> {
    fn dynamic_fast(&self, j: usize) -> bool {
        self.assignments[j] == Device::Fast && !self.is_static[j]
    }

    fn prev_on_gpu(&self, i: usize) -> Option<usize> {
        (0..i.min(self.assignments.len())).rev().find(|&j| self.dynamic_fast(j))
    }

    fn next_on_gpu(&self, i: usize) -> Option<usize> {
        (i + 1..self.assignments.len()).find(|&j| self.dynamic_fast(j))
    }
}

impl UpdatePlan {
    /// Nearest dynamic fast-device subgroup strictly before `i`.
    pub fn prev_on_gpu(&self, i: usize) -> Option<usize> {
        (0..i.min(self.num_subgroups))
            .rev()
            .find(|&j| self.assignments[j] == Device::Fast && !self.is_static(j))
    }

    /// Nearest dynamic fast-device subgroup strictly after `i`.
    pub fn next_on_gpu(&self, i: usize) -> Option<usize> {
        (i + 1..self.num_subgroups).find(|&j| self.assignments[j] == Device::Fast && !self.is_static(j))
    }

    pub fn is_static(&self, i: usize) -> bool {
        self.static_set.contains(&i)
    }

    /// Dynamic fast-device subgroups in update order.
    pub fn dynamic_fast(&self) -> Vec<usize> {
        self.actions
            .iter()
            .filter(|a| a.kind == ActionKind::GpuUpdate && !self.is_static(a.subgroup()))
            .map(Action::subgroup)
            .collect()
    }

    pub fn fast_ids(&self) -> Vec<usize> {
        (0..self.num_subgroups)
            .filter(|&i| self.assignments[i] == Device::Fast)
            .collect()
    }

    /// Fraction of dynamic subgroups assigned to the fast device.
    pub fn gpu_fraction(&self) -> f64 {
        let dynamic = self.num_subgroups - self.static_set.len();
        if dynamic == 0 {
            return 0.0;
        }
        self.dynamic_fast().len() as f64 / dynamic as f64
    }

    /// Structural checks: sequential ids, dependencies on earlier actions
    /// only, one update per subgroup on its assigned device, and the
    /// assignment predicate.
    pub fn validate(&self) -> Result<()> {
        if self.assignments.len() != self.num_subgroups {
            return Err(Error::invalid("assignment count does not match subgroup count"));
        }
        let mut updates = vec![0usize; self.num_subgroups];
        for (idx, a) in self.actions.iter().enumerate() {
            if a.id != idx {
                return Err(Error::invalid(format!("action {idx} has id {}", a.id)));
            }
            if a.subgroups.is_empty() || a.subgroups.iter().any(|&s| s >= self.num_subgroups) {
                return Err(Error::invalid(format!("action {idx} names a bad subgroup")));
            }
            if a.depends_on.iter().any(|&d| d >= a.id) {
                return Err(Error::invalid(format!(
                    "action {idx} depends on a later action; dependencies must form a DAG in emission order"
                )));
            }
            if a.kind.is_update() {
                let s = a.subgroup();
                updates[s] += 1;
                let want = match a.kind {
                    ActionKind::GpuUpdate => Device::Fast,
                    _ => Device::Cpu,
                };
                if self.assignments[s] != want {
                    return Err(Error::invalid(format!(
                        "subgroup {s} is updated on the wrong device"
                    )));
                }
            }
        }
        if let Some(s) = updates.iter().position(|&c| c != 1) {
            return Err(Error::invalid(format!(
                "subgroup {s} is updated {} times",
                updates[s]
            )));
        }
        for i in 0..self.num_subgroups {
            let fast = assigned_fast(i, self.stride, self.is_static(i));
            if fast != (self.assignments[i] == Device::Fast) {
                return Err(Error::invalid(format!("subgroup {i} violates the predicate")));
            }
        }
        Ok(())
    }

    /// Staging-slot index of every dynamic fast-device subgroup when the
    /// fast tier holds `slots` subgroups' worth of optimizer state.
    pub fn slot_of(&self, slots: usize) -> Vec<Option<usize>> {
        let mut out = vec![None; self.num_subgroups];
        if slots == 0 {
            return out;
        }
        for (ordinal, s) in self.dynamic_fast().into_iter().enumerate() {
            out[s] = Some(ordinal % slots);
        }
        out
    }

    /// Dependencies including staging-slot reuse: a prefetch into a slot
    /// waits for every flush of the slot's previous occupant.
    pub fn effective_dependencies(&self, slots: usize) -> Result<Vec<Vec<usize>>> {
        let dynamic = self.dynamic_fast();
        if !dynamic.is_empty() && slots == 0 {
            return Err(Error::Infeasible(
                "fast tier cannot hold a single dynamic subgroup".into(),
            ));
        }
        let mut deps: Vec<Vec<usize>> = self.actions.iter().map(|a| a.depends_on.clone()).collect();
        if dynamic.is_empty() {
            return Ok(deps);
        }
        let mut flushes: std::collections::HashMap<usize, Vec<usize>> = Default::default();
        for a in &self.actions {
            if a.kind.is_flush() && !self.is_static(a.subgroup()) {
                flushes.entry(a.subgroup()).or_default().push(a.id);
            }
        }
        for (ordinal, &s) in dynamic.iter().enumerate() {
            if ordinal < slots {
                continue;
            }
            let prev = dynamic[ordinal - slots];
            let prev_flushes = flushes.get(&prev).cloned().unwrap_or_default();
            for a in self.actions.iter().filter(|a| a.kind.is_prefetch() && a.subgroup() == s) {
                if let Some(&late) = prev_flushes.iter().find(|&&f| f > a.id) {
                    return Err(Error::Scheduling {
                        action: a.id,
                        kind: a.kind.to_string(),
                        reason: format!("prefetch is emitted before flush action {late} frees its slot"),
                    });
                }
                let d = &mut deps[a.id];
                d.extend(prev_flushes.iter().copied());
                d.sort_unstable();
                d.dedup();
            }
        }
        Ok(deps)
    }
}
