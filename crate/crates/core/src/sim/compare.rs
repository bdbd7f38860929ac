use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::perfmodel::UpdateRatio;
use crate::profile::SystemProfile;
use crate::scheduler::{build_plan, Placement, Stride};

use super::iteration::{simulate_iteration, ApproachConfig, IterationModel, PhaseBreakdown, Workload};
use super::simulate_update_phase_sized;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub label: String,
    pub approach: ApproachConfig,
    pub ratio: UpdateRatio,
    pub phases: PhaseBreakdown,
    /// Relative to the first row.
    pub update_speedup: f64,
    pub total_speedup: f64,
    pub peak_fast_bytes: u64,
    pub spillover_ns: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub rows: Vec<ComparisonRow>,
}

pub fn compare_approaches(
    profile: &SystemProfile,
    workload: &Workload,
    model: &IterationModel,
    approaches: &[ApproachConfig],
) -> Result<ComparisonTable> {
    if approaches.len() < 2 {
        return Err(Error::invalid("a comparison needs at least two approaches"));
    }
    let reports = approaches
        .iter()
        .map(|a| simulate_iteration(a, profile, model, workload))
        .collect::<Result<Vec<_>>>()?;
    let base = reports[0].phases;
    let ratio = |a: f64, b: f64| if b > 0.0 { a / b } else { 1.0 };
    let rows = approaches
        .iter()
        .zip(reports)
        .map(|(a, r)| ComparisonRow {
            label: r.label,
            approach: a.clone(),
            ratio: r.ratio,
            update_speedup: ratio(base.update_s, r.phases.update_s),
            total_speedup: ratio(base.total_s(), r.phases.total_s()),
            phases: r.phases,
            peak_fast_bytes: r.timeline.peak_fast_bytes,
            spillover_ns: r.timeline.spillover_ns,
        })
        .collect();
    Ok(ComparisonTable { rows })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub k: u32,
    pub makespan_ns: u64,
    /// Parameters updated per second over the update phase.
    pub params_per_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrideSweep {
    pub points: Vec<SweepPoint>,
    pub best_k: u32,
    pub all_cpu_ns: u64,
    /// Set when every swept `k` is slower than updating everything on the
    /// host.
    pub all_cpu_wins: bool,
}

impl StrideSweep {
    /// Assemble a sweep from points computed elsewhere (e.g. in parallel).
    pub fn from_points(mut points: Vec<SweepPoint>, all_cpu_ns: u64) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::invalid("empty k range"));
        }
        points.sort_by_key(|p| p.k);
        let best = points
            .iter()
            .min_by_key(|p| (p.makespan_ns, p.k))
            .expect("nonempty");
        Ok(StrideSweep {
            best_k: best.k,
            all_cpu_wins: points.iter().all(|p| p.makespan_ns > all_cpu_ns),
            points,
            all_cpu_ns,
        })
    }
}

/// Simulated update phase for one host-to-fast ratio `k` (or the blocking
/// baseline for `None`).
pub fn stride_point(profile: &SystemProfile, sizes: &[u64], k: Option<u32>) -> Result<SweepPoint> {
    let stride = k.map_or(Stride::AllCpu, |k| UpdateRatio::PerGpu(k).stride());
    let plan = build_plan(sizes.len(), stride, 0.0, Placement::StaticLast)?;
    let tl = simulate_update_phase_sized(&plan, profile, sizes)?;
    let params = sizes.iter().sum::<u64>() as f64;
    Ok(SweepPoint {
        k: k.unwrap_or(0),
        makespan_ns: tl.makespan_ns,
        params_per_s: if tl.makespan_ns == 0 {
            0.0
        } else {
            params / (tl.makespan_ns as f64 * 1e-9)
        },
    })
}

/// Brute-force search over `k_range`; ties go to the smaller `k`.
pub fn sweep_stride(
    profile: &SystemProfile,
    num_subgroups: usize,
    subgroup_size: u64,
    k_range: &[u32],
) -> Result<StrideSweep> {
    if k_range.is_empty() {
        return Err(Error::invalid("empty k range"));
    }
    let sizes = vec![subgroup_size; num_subgroups];
    let points = k_range
        .iter()
        .map(|&k| stride_point(profile, &sizes, Some(k)))
        .collect::<Result<Vec<_>>>()?;
    let all_cpu = stride_point(profile, &sizes, None)?;
    StrideSweep::from_points(points, all_cpu.makespan_ns)
}
