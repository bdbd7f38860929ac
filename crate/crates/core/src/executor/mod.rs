//! Numeric execution of an update plan over emulated host and fast tiers.
//!
//! Every action is one transition of the shared tier state (see
//! `runtime`). `VirtualTime` derives start times from the same cost model as
//! the simulator and applies actions in start-time order; `Throttled` runs
//! one thread per lane and sleeps for each action's scaled duration.

mod adam;
mod grads;
mod runtime;

use std::collections::HashMap;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Condvar, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lanes::{CostModel, Lane, LaneClock};
use crate::profile::SystemProfile;
use crate::scheduler::{run_update, Action, CompletionReport, Span, UpdatePlan, UpdateTarget};
use crate::sharding::ShardedOptimizer;
use crate::sim::{check_capacity, retained_gradients, GradFlushStrategy, Timeline};

pub use adam::{adam_step, adam_step_subgroup, AdamHyper};
pub use grads::{flush_gradients, flush_gradients_chunked, FlushCost, FlushStage, DEFAULT_CHUNK};

use runtime::Runtime;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum ExecMode {
    VirtualTime,
    /// Wall-clock seconds slept per modelled second.
    Throttled { time_scale: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExecutionReport {
    pub optimizer: ShardedOptimizer,
    pub timeline: Timeline,
    /// Per-subgroup gradient flush, zero for retained gradients.
    pub grad_flush: Vec<FlushCost>,
    pub retained: Vec<bool>,
}

/// Plain in-order FP32 Adam over every subgroup on one tier.
pub fn sequential_oracle(opt: &ShardedOptimizer, h: &AdamHyper) -> Result<ShardedOptimizer> {
    h.validate()?;
    let mut out = opt.clone();
    for sg in &mut out.subgroups {
        let g = sg.grads.to_f32();
        adam_step_subgroup(sg, &g, h)?;
    }
    out.refresh_model16();
    Ok(out)
}

/// Run the gradient flush and the update phase of `plan` on `opt`.
pub fn execute_plan(
    plan: &UpdatePlan,
    opt: ShardedOptimizer,
    profile: &SystemProfile,
    h: &AdamHyper,
    mode: ExecMode,
) -> Result<ExecutionReport> {
    h.validate()?;
    profile.validate()?;
    opt.check()?;
    if opt.num_subgroups() != plan.num_subgroups {
        return Err(Error::invalid(format!(
            "plan has {} subgroups, optimizer has {}",
            plan.num_subgroups,
            opt.num_subgroups()
        )));
    }
    if let ExecMode::Throttled { time_scale } = mode {
        if !(time_scale.is_finite() && time_scale >= 0.0) {
            return Err(Error::invalid("time_scale must be finite and non-negative"));
        }
    }
    let sizes: Vec<u64> = opt.sizes().iter().map(|&s| s as u64).collect();
    let slots = check_capacity(plan, profile, &sizes)?;
    let mut opt = opt;
    opt.set_residency(&plan.static_set);

    // backward output leaves the fast tier unless it can stay there
    let retained = retained_gradients(plan, profile, &sizes);
    let strategy = if plan.blocking {
        GradFlushStrategy::Fp16HostUpscale
    } else {
        GradFlushStrategy::GpuUpscaleFp32
    };
    let mut host_grads = Vec::with_capacity(sizes.len());
    let mut fast_grads = Vec::with_capacity(sizes.len());
    let mut grad_flush = Vec::with_capacity(sizes.len());
    for (sg, &keep) in opt.subgroups.iter().zip(&retained) {
        if keep {
            fast_grads.push(Some(sg.grads.to_f32()));
            host_grads.push(None);
            grad_flush.push(FlushCost::retained(sg.id, strategy));
        } else {
            let (g, cost) = flush_gradients(sg, strategy, profile);
            host_grads.push(Some(g));
            fast_grads.push(None);
            grad_flush.push(cost);
        }
    }

    let template = (opt.total_params, plan.static_set.clone());
    let rt = Runtime::new(plan, opt, host_grads, fast_grads, slots, *h);
    let cost = CostModel::new(profile, sizes, plan);
    let report = match mode {
        ExecMode::VirtualTime => run_virtual(plan, &rt, &cost, slots)?,
        ExecMode::Throttled { time_scale } => run_throttled(plan, &rt, &cost, slots, time_scale)?,
    };
    let timeline = Timeline::from_report(plan, &report, &cost);
    let optimizer = rt.finish(template)?;
    Ok(ExecutionReport {
        optimizer,
        timeline,
        grad_flush,
        retained,
    })
}

struct ClockTarget<'a> {
    cost: &'a CostModel,
    clock: LaneClock,
    slots: usize,
}

impl UpdateTarget for ClockTarget<'_> {
    fn staging_slots(&self, _plan: &UpdatePlan) -> usize {
        self.slots
    }

    fn dispatch(&mut self, action: &Action, ready_ns: u64) -> Result<Span> {
        Ok(self
            .clock
            .reserve(Lane::of(action.kind), ready_ns, self.cost.duration_ns(action)))
    }
}

fn run_virtual(
    plan: &UpdatePlan,
    rt: &Runtime,
    cost: &CostModel,
    slots: usize,
) -> Result<CompletionReport> {
    let mut target = ClockTarget {
        cost,
        clock: LaneClock::default(),
        slots,
    };
    let report = run_update(plan, &mut target)?;
    let mut order: Vec<&Action> = plan.actions.iter().collect();
    order.sort_by_key(|a| (report.spans[a.id].start_ns, a.id));
    for a in order {
        rt.apply(a)?;
    }
    Ok(report)
}

/// Predecessors an action must wait for: its dependencies and the previous
/// action on its stream queue.
fn wait_sets(plan: &UpdatePlan, deps: &[Vec<usize>]) -> Vec<Vec<usize>> {
    let mut last = HashMap::new();
    plan.actions
        .iter()
        .map(|a| {
            let mut w = deps[a.id].clone();
            if let Some(q) = a.queue() {
                if let Some(p) = last.insert(q, a.id) {
                    w.push(p);
                }
            }
            w
        })
        .collect()
}

struct Board {
    done: Mutex<Vec<bool>>,
    cv: Condvar,
    abort: AtomicBool,
    error: Mutex<Option<Error>>,
}

impl Board {
    /// Block until all of `ids` are done; false if the run was aborted.
    fn wait(&self, ids: &[usize]) -> bool {
        let mut done = self.done.lock().unwrap_or_else(|e| e.into_inner());
        loop {
            if self.abort.load(Ordering::SeqCst) {
                return false;
            }
            if ids.iter().all(|&i| done[i]) {
                return true;
            }
            done = self.cv.wait(done).unwrap_or_else(|e| e.into_inner());
        }
    }

    fn complete(&self, id: usize) {
        self.done.lock().unwrap_or_else(|e| e.into_inner())[id] = true;
        self.cv.notify_all();
    }

    fn fail(&self, e: Error) {
        let mut slot = self.error.lock().unwrap_or_else(|e| e.into_inner());
        slot.get_or_insert(e);
        self.abort.store(true, Ordering::SeqCst);
        self.cv.notify_all();
    }
}

fn run_throttled(
    plan: &UpdatePlan,
    rt: &Runtime,
    cost: &CostModel,
    slots: usize,
    time_scale: f64,
) -> Result<CompletionReport> {
    plan.validate()?;
    let deps = plan.effective_dependencies(slots)?;
    let waits = wait_sets(plan, &deps);
    let n = plan.actions.len();
    let board = Board {
        done: Mutex::new(vec![false; n]),
        cv: Condvar::new(),
        abort: AtomicBool::new(false),
        error: Mutex::new(None),
    };
    let spans: Vec<Mutex<Span>> = (0..n)
        .map(|_| Mutex::new(Span { start_ns: 0, end_ns: 0 }))
        .collect();
    let t0 = Instant::now();
    let since = |t: Instant| t.duration_since(t0).as_nanos() as u64;

    std::thread::scope(|scope| {
        for lane in Lane::ALL {
            let (board, spans, waits) = (&board, &spans, &waits);
            scope.spawn(move || {
                for a in plan.actions.iter().filter(|a| Lane::of(a.kind) == lane) {
                    if !board.wait(&waits[a.id]) {
                        return;
                    }
                    let start = since(Instant::now());
                    if let Err(e) = rt.apply(a) {
                        board.fail(e);
                        return;
                    }
                    let dur = cost.duration_secs(a) * time_scale;
                    let target = Duration::from_nanos(start) + Duration::from_secs_f64(dur);
                    let elapsed = t0.elapsed();
                    if target > elapsed {
                        std::thread::sleep(target - elapsed);
                    }
                    let end = since(Instant::now());
                    *spans[a.id].lock().unwrap_or_else(|e| e.into_inner()) = Span {
                        start_ns: start,
                        end_ns: end,
                    };
                    board.complete(a.id);
                }
            });
        }
    });

    if let Some(e) = board.error.into_inner().unwrap_or_else(|e| e.into_inner()) {
        return Err(e);
    }
    Ok(CompletionReport {
        spans: spans
            .into_iter()
            .map(|s| s.into_inner().unwrap_or_else(|e| e.into_inner()))
            .collect(),
        dependencies: deps,
        staging_slots: slots,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::precision::downscale_rne;
    use crate::scheduler::{build_plan, Placement, Stride};
    use crate::sim::simulate_update_phase_sized;

    fn run(plan: &UpdatePlan, opt: &ShardedOptimizer, mode: ExecMode) -> ExecutionReport {
        execute_plan(plan, opt.clone(), &SystemProfile::v100_node(), &AdamHyper::default(), mode)
            .unwrap()
    }

    #[test]
    fn all_cpu_matches_interleaved() {
        let opt = ShardedOptimizer::seeded(&[64; 9], 7).unwrap();
        let a = build_plan(9, Stride::AllCpu, 0.0, Placement::StaticLast).unwrap();
        let b = build_plan(9, Stride::Every(3), 0.0, Placement::StaticLast).unwrap();
        let x = run(&a, &opt, ExecMode::VirtualTime);
        let y = run(&b, &opt, ExecMode::VirtualTime);
        assert!(x.optimizer.bit_identical(&y.optimizer));
        let oracle = sequential_oracle(&opt, &AdamHyper::default()).unwrap();
        assert!(oracle.bit_identical(&x.optimizer));
    }

    #[test]
    fn virtual_time_matches_simulator() {
        let sizes = [100, 100, 100, 100, 100, 37];
        let opt = ShardedOptimizer::seeded(&sizes, 3).unwrap();
        let plan = build_plan(6, Stride::Every(2), 0.34, Placement::StaticLast).unwrap();
        let r = run(&plan, &opt, ExecMode::VirtualTime);
        r.timeline.validate().unwrap();
        let s: Vec<u64> = sizes.iter().map(|&x| x as u64).collect();
        let sim = simulate_update_phase_sized(&plan, &SystemProfile::v100_node(), &s).unwrap();
        assert_eq!(r.timeline, sim);
    }

    #[test]
    fn throttled_matches_virtual() {
        let opt = ShardedOptimizer::seeded(&[256; 8], 11).unwrap();
        let plan = build_plan(8, Stride::Every(3), 0.25, Placement::StaticLast).unwrap();
        let x = run(&plan, &opt, ExecMode::VirtualTime);
        let y = run(&plan, &opt, ExecMode::Throttled { time_scale: 100.0 });
        y.timeline.validate().unwrap();
        assert!(x.optimizer.bit_identical(&y.optimizer));
    }

    #[test]
    fn zero_gradients_leave_params() {
        let mut opt = ShardedOptimizer::seeded(&[32; 4], 5).unwrap();
        opt.zero_grads();
        for sg in &mut opt.subgroups {
            sg.momentum.fill(0.0);
            sg.variance.fill(0.0);
        }
        let plan = build_plan(4, Stride::Every(2), 0.0, Placement::StaticLast).unwrap();
        let r = run(&plan, &opt, ExecMode::VirtualTime);
        for (a, b) in r.optimizer.subgroups.iter().zip(&opt.subgroups) {
            assert_eq!(a.params, b.params);
            assert_eq!(
                r.optimizer.model16[a.offset..a.offset + a.size()],
                downscale_rne(&a.params)[..]
            );
        }
    }

    #[test]
    fn shape_mismatch() {
        let opt = ShardedOptimizer::seeded(&[8; 3], 1).unwrap();
        let plan = build_plan(4, Stride::Every(2), 0.0, Placement::StaticLast).unwrap();
        let r = execute_plan(&plan, opt, &SystemProfile::v100_node(), &AdamHyper::default(), ExecMode::VirtualTime);
        assert!(matches!(r, Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn infeasible_fast_tier() {
        let opt = ShardedOptimizer::seeded(&[8; 4], 1).unwrap();
        let plan = build_plan(4, Stride::Every(2), 0.0, Placement::StaticLast).unwrap();
        let mut p = SystemProfile::v100_node();
        p.fast_capacity_bytes = 10;
        let r = execute_plan(&plan, opt, &p, &AdamHyper::default(), ExecMode::VirtualTime);
        assert!(matches!(r, Err(Error::Infeasible(_))));
    }

    #[test]
    fn retained_gradients_cost_nothing() {
        let opt = ShardedOptimizer::seeded(&[64; 6], 2).unwrap();
        let plan = build_plan(6, Stride::Every(2), 0.0, Placement::StaticLast).unwrap();
        let r = run(&plan, &opt, ExecMode::VirtualTime);
        for (i, c) in r.grad_flush.iter().enumerate() {
            assert_eq!(r.retained[i], plan.assignments[i] == crate::scheduler::Device::Fast);
            assert_eq!(c.total_secs == 0.0, r.retained[i]);
        }
    }
}
