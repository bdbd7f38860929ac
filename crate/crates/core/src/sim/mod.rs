//! Discrete-event simulation of the update phase and coarse iteration
//! phases on four exclusive lanes.

mod compare;
mod iteration;
mod timeline;

use crate::error::{Error, Result};
use crate::lanes::{CostModel, Lane, LaneClock};
use crate::profile::SystemProfile;
use crate::scheduler::{run_update, Action, Span, UpdatePlan, UpdateTarget};

pub use compare::{
    compare_approaches, stride_point, sweep_stride, ComparisonRow, ComparisonTable, StrideSweep, SweepPoint,
};
pub use iteration::{
    grad_flush_throughput, retained_gradients, simulate_iteration, ApproachConfig,
    GradFlushStrategy, IterationModel, IterationReport, PhaseBreakdown, Workload,
};
pub use timeline::{
    memory_trace, parse_csv, validate_csv, CsvEvent, Event, OccupancySample, ResidencyWindow,
    Timeline, CSV_HEADER,
};

/// Dynamic subgroups whose optimizer state fits on the fast tier at once,
/// capped at two (one resident, one in flight).
pub fn staging_slots(profile: &SystemProfile, max_subgroup_size: u64) -> usize {
    let per = 12 * max_subgroup_size.max(1);
    (profile.fast_capacity_bytes / per).min(2) as usize
}

pub(crate) fn check_capacity(
    plan: &UpdatePlan,
    profile: &SystemProfile,
    sizes: &[u64],
) -> Result<usize> {
    let max = sizes.iter().copied().max().unwrap_or(0);
    let slots = staging_slots(profile, max);
    if slots == 0 && !plan.dynamic_fast().is_empty() {
        return Err(Error::Infeasible(format!(
            "fast tier holds {} bytes, one dynamic subgroup needs {}",
            profile.fast_capacity_bytes,
            12 * max
        )));
    }
    Ok(slots)
}

struct SimTarget {
    cost: CostModel,
    clock: LaneClock,
    slots: usize,
}

impl UpdateTarget for SimTarget {
    fn staging_slots(&self, _plan: &UpdatePlan) -> usize {
        self.slots
    }

    fn dispatch(&mut self, action: &Action, ready_ns: u64) -> Result<Span> {
        let dur = self.cost.duration_ns(action);
        Ok(self.clock.reserve(Lane::of(action.kind), ready_ns, dur))
    }
}

/// Simulate one update phase with every subgroup holding `subgroup_size`
/// parameters.
pub fn simulate_update_phase(
    plan: &UpdatePlan,
    profile: &SystemProfile,
    subgroup_size: u64,
) -> Result<Timeline> {
    simulate_update_phase_sized(plan, profile, &vec![subgroup_size; plan.num_subgroups])
}

/// Simulate one update phase with per-subgroup sizes.
pub fn simulate_update_phase_sized(
    plan: &UpdatePlan,
    profile: &SystemProfile,
    sizes: &[u64],
) -> Result<Timeline> {
    profile.validate()?;
    if sizes.len() != plan.num_subgroups {
        return Err(Error::invalid(format!(
            "plan has {} subgroups, got {} sizes",
            plan.num_subgroups,
            sizes.len()
        )));
    }
    if plan.num_subgroups == 0 {
        return Ok(Timeline::empty());
    }
    let slots = check_capacity(plan, profile, sizes)?;
    let mut target = SimTarget {
        cost: CostModel::new(profile, sizes.to_vec(), plan),
        clock: LaneClock::default(),
        slots,
    };
    let report = run_update(plan, &mut target)?;
    Ok(Timeline::from_report(plan, &report, &target.cost))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scheduler::{build_plan, Placement, Stride};

    #[test]
    fn blocking_single_subgroup() {
        let p = SystemProfile::v100_node();
        let plan = build_plan(1, Stride::AllCpu, 0.0, Placement::StaticLast).unwrap();
        let tl = simulate_update_phase(&plan, &p, 100_000_000).unwrap();
        tl.validate().unwrap();
        let want = 1e8 / 2e9 + 1e8 / 8.7e9 + 1e8 / 6e9;
        let got = tl.makespan_ns as f64 * 1e-9;
        assert!((got - want).abs() < 1e-8, "{got} vs {want}");
        assert_eq!(tl.spillover_ns, 0);
    }

    #[test]
    fn empty_plan() {
        let plan = build_plan(0, Stride::Every(3), 0.0, Placement::StaticLast).unwrap();
        let tl = simulate_update_phase(&plan, &SystemProfile::v100_node(), 10).unwrap();
        assert_eq!(tl.makespan_ns, 0);
        assert!(tl.events.is_empty());
    }

    #[test]
    fn too_small_fast_tier() {
        let mut p = SystemProfile::v100_node();
        p.fast_capacity_bytes = 100;
        let plan = build_plan(6, Stride::Every(3), 0.0, Placement::StaticLast).unwrap();
        assert!(matches!(
            simulate_update_phase(&plan, &p, 10),
            Err(Error::Infeasible(_))
        ));
        let cpu = build_plan(6, Stride::AllCpu, 0.0, Placement::StaticLast).unwrap();
        simulate_update_phase(&cpu, &p, 10).unwrap();
    }

    #[test]
    fn single_slot_serialises_residency() {
        let mut p = SystemProfile::v100_node();
        p.fast_capacity_bytes = 12 * 1000;
        let plan = build_plan(12, Stride::Every(2), 0.0, Placement::StaticLast).unwrap();
        let tl = simulate_update_phase(&plan, &p, 1000).unwrap();
        assert_eq!(tl.staging_slots, 1);
        tl.validate().unwrap();
        let peak = tl.memory_trace().iter().map(|s| s.bytes).max().unwrap();
        assert_eq!(peak, tl.baseline_fast_bytes + 12 * 1000);
    }

    #[test]
    fn occupancy_steps_by_one_subgroup() {
        let p = SystemProfile::v100_node();
        let plan = build_plan(12, Stride::Every(3), 0.0, Placement::StaticLast).unwrap();
        let tl = simulate_update_phase(&plan, &p, 1000).unwrap();
        tl.validate().unwrap();
        for s in tl.memory_trace() {
            let extra = s.bytes - tl.baseline_fast_bytes;
            assert_eq!(extra % 12_000, 0);
            assert!(extra <= 24_000);
        }
        assert!(tl.peak_fast_bytes > tl.baseline_fast_bytes);
    }

    #[test]
    fn all_cpu_occupancy_is_flat() {
        let p = SystemProfile::v100_node();
        let plan = build_plan(5, Stride::AllCpu, 0.0, Placement::StaticLast).unwrap();
        let tl = simulate_update_phase(&plan, &p, 1000).unwrap();
        let trace = tl.memory_trace();
        assert_eq!(trace.len(), 1);
        assert_eq!(trace[0].bytes, 4 * 5 * 1000);
    }

    #[test]
    fn fully_static_holds_everything() {
        let p = SystemProfile::v100_node();
        let plan = build_plan(4, Stride::Every(2), 1.0, Placement::StaticLast).unwrap();
        let tl = simulate_update_phase(&plan, &p, 1000).unwrap();
        assert_eq!(tl.peak_fast_bytes, 16 * 4 * 1000);
    }

    #[test]
    fn csv_round_trip() {
        let p = SystemProfile::v100_node();
        let plan = build_plan(9, Stride::Every(3), 0.0, Placement::StaticLast).unwrap();
        let tl = simulate_update_phase(&plan, &p, 1000).unwrap();
        let rows = validate_csv(&tl.to_csv()).unwrap();
        assert_eq!(rows.len(), tl.events.len());
        assert!(rows.iter().any(|r| r.subgroups.len() > 1));
    }

    #[test]
    fn validator_catches_overlap() {
        let p = SystemProfile::v100_node();
        let plan = build_plan(6, Stride::Every(2), 0.0, Placement::StaticLast).unwrap();
        let mut tl = simulate_update_phase(&plan, &p, 1000).unwrap();
        let i = tl.events.iter().position(|e| e.lane == Lane::CpuCompute).unwrap();
        let j = tl.events.iter().rposition(|e| e.lane == Lane::CpuCompute).unwrap();
        tl.events[j].start_ns = tl.events[i].start_ns;
        assert!(tl.validate().is_err());
    }
}
