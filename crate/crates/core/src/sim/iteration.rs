use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::perfmodel::{optimal_stride, UpdateRatio};
use crate::profile::SystemProfile;
use crate::scheduler::{build_plan, Placement, UpdatePlan};

use super::{simulate_update_phase_sized, staging_slots, Timeline};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradFlushStrategy {
    /// Copy FP16 gradients into freshly allocated pageable host memory,
    /// then widen them on the host.
    Fp16HostUpscale,
    /// Widen on the fast device in place, then move FP32 over the pinned
    /// channel.
    GpuUpscaleFp32,
}

/// Effective gradient flush rate in FP16 bytes per second. The rate is
/// linear in size, so a zero-byte flush reports the same stage-limited
/// value.
pub fn grad_flush_throughput(
    strategy: GradFlushStrategy,
    profile: &SystemProfile,
    _grad_bytes_fp16: u64,
) -> f64 {
    match strategy {
        GradFlushStrategy::Fp16HostUpscale => {
            1.0 / (1.0 / profile.host_alloc_unpinned_bytes_per_s
                + 1.0 / profile.pageable_d2h()
                + 1.0 / profile.host_conversion_bytes_per_s)
        }
        GradFlushStrategy::GpuUpscaleFp32 => {
            1.0 / (1.0 / profile.fast_conversion_bytes_per_s
                + 2.0 / profile.channel_bytes_per_s())
        }
    }
}

/// Subgroup sizes on one rank.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Workload {
    pub subgroup_sizes: Vec<u64>,
}

impl Workload {
    pub fn uniform(num_subgroups: usize, subgroup_size: u64) -> Self {
        Workload {
            subgroup_sizes: vec![subgroup_size; num_subgroups],
        }
    }

    pub fn num_subgroups(&self) -> usize {
        self.subgroup_sizes.len()
    }

    pub fn total_params(&self) -> u64 {
        self.subgroup_sizes.iter().sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationModel {
    pub fwd_ns: u64,
    /// Backward compute without recomputation.
    pub bwd_ns: u64,
    /// 1.33 with activation checkpointing, else 1.0.
    #[serde(default = "one")]
    pub recompute_factor: f64,
    #[serde(default = "default_strategy")]
    pub grad_flush_strategy: GradFlushStrategy,
    /// FP16 gradient bytes per subgroup; defaults to two bytes per parameter.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grad_bytes_per_subgroup: Option<u64>,
}

fn one() -> f64 {
    1.0
}

fn default_strategy() -> GradFlushStrategy {
    GradFlushStrategy::GpuUpscaleFp32
}

impl Default for IterationModel {
    fn default() -> Self {
        IterationModel {
            fwd_ns: 0,
            bwd_ns: 0,
            recompute_factor: 1.0,
            grad_flush_strategy: default_strategy(),
            grad_bytes_per_subgroup: None,
        }
    }
}

impl IterationModel {
    pub const RECOMPUTE: f64 = 1.33;

    pub fn validate(&self) -> Result<()> {
        if self.recompute_factor != 1.0 && self.recompute_factor != Self::RECOMPUTE {
            return Err(Error::invalid(format!(
                "recompute_factor must be 1.0 or {}, got {}",
                Self::RECOMPUTE,
                self.recompute_factor
            )));
        }
        Ok(())
    }

    fn grad_bytes(&self, subgroup_size: u64) -> u64 {
        self.grad_bytes_per_subgroup.unwrap_or(2 * subgroup_size)
    }
}

/// How the optimizer step is distributed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ApproachConfig {
    /// Everything on the host, blocking per subgroup.
    Zero3,
    /// A fixed share of subgroups lives on the fast device, the rest are
    /// updated on the host as in `Zero3`.
    TwinFlow { static_ratio: f64 },
    /// Interleaved host and fast-device updates. `k` host subgroups per
    /// fast-device subgroup; derived from the profile when absent.
    Interleaved {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        k: Option<u32>,
        #[serde(default)]
        static_ratio: f64,
        #[serde(default = "static_last")]
        placement: Placement,
    },
}

fn static_last() -> Placement {
    Placement::StaticLast
}

impl ApproachConfig {
    pub fn interleaved(k: Option<u32>) -> Self {
        ApproachConfig::Interleaved {
            k,
            static_ratio: 0.0,
            placement: Placement::StaticLast,
        }
    }

    pub fn label(&self) -> String {
        match self {
            ApproachConfig::Zero3 => "zero3".into(),
            ApproachConfig::TwinFlow { static_ratio } => format!("twin_flow(ratio={static_ratio})"),
            ApproachConfig::Interleaved { k, static_ratio, .. } => {
                let k = k.map_or_else(|| "auto".to_string(), |k| k.to_string());
                format!("interleaved(k={k}, ratio={static_ratio})")
            }
        }
    }

    pub fn static_ratio(&self) -> f64 {
        match self {
            ApproachConfig::Zero3 => 0.0,
            ApproachConfig::TwinFlow { static_ratio }
            | ApproachConfig::Interleaved { static_ratio, .. } => *static_ratio,
        }
    }

    pub fn ratio(&self, profile: &SystemProfile) -> UpdateRatio {
        match self {
            ApproachConfig::Zero3 | ApproachConfig::TwinFlow { .. } => UpdateRatio::AllCpu,
            ApproachConfig::Interleaved { k: Some(k), .. } => UpdateRatio::PerGpu(*k),
            ApproachConfig::Interleaved { k: None, .. } => optimal_stride(profile).k,
        }
    }

    pub fn plan(&self, num_subgroups: usize, profile: &SystemProfile) -> Result<UpdatePlan> {
        let stride = self.ratio(profile).stride();
        match self {
            ApproachConfig::Zero3 => build_plan(num_subgroups, stride, 0.0, Placement::StaticFirst),
            ApproachConfig::TwinFlow { static_ratio } => {
                build_plan(num_subgroups, stride, *static_ratio, Placement::StaticFirst)
            }
            ApproachConfig::Interleaved {
                static_ratio,
                placement,
                ..
            } => build_plan(num_subgroups, stride, *static_ratio, *placement),
        }
    }
}

/// Which subgroups keep their gradients on the fast tier. Static residents
/// always do. In overlapping plans, fast-device subgroups also do, in order,
/// while staging buffers plus retained FP32 gradients stay within 90% of the
/// fast tier.
pub fn retained_gradients(plan: &UpdatePlan, profile: &SystemProfile, sizes: &[u64]) -> Vec<bool> {
    let mut keep: Vec<bool> = (0..plan.num_subgroups).map(|i| plan.is_static(i)).collect();
    if plan.blocking {
        return keep;
    }
    let max = sizes.iter().copied().max().unwrap_or(0);
    let slots = staging_slots(profile, max) as u64;
    let budget = (0.9 * profile.fast_capacity_bytes as f64) as u64;
    let mut used = slots * 12 * max;
    for i in plan.dynamic_fast() {
        if used + 4 * sizes[i] > budget {
            break;
        }
        used += 4 * sizes[i];
        keep[i] = true;
    }
    keep
}

/// Phase times in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PhaseBreakdown {
    pub fwd_s: f64,
    pub bwd_s: f64,
    pub update_s: f64,
    /// Flush time not hidden behind backward compute (included in `bwd_s`).
    pub exposed_flush_s: f64,
}

impl PhaseBreakdown {
    pub fn total_s(&self) -> f64 {
        self.fwd_s + self.bwd_s + self.update_s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationReport {
    pub label: String,
    pub ratio: UpdateRatio,
    pub phases: PhaseBreakdown,
    pub retained_subgroups: usize,
    pub timeline: Timeline,
}

/// Forward, backward (with gradient flushes) and update phase of one
/// iteration. Blocking approaches flush gradients at each subgroup boundary
/// through host-side upscaling; the interleaved approach flushes with the
/// model's strategy behind backward compute.
pub fn simulate_iteration(
    approach: &ApproachConfig,
    profile: &SystemProfile,
    model: &IterationModel,
    workload: &Workload,
) -> Result<IterationReport> {
    model.validate()?;
    let sizes = &workload.subgroup_sizes;
    let plan = approach.plan(sizes.len(), profile)?;
    let timeline = simulate_update_phase_sized(&plan, profile, sizes)?;
    let retained = retained_gradients(&plan, profile, sizes);

    let strategy = if plan.blocking {
        GradFlushStrategy::Fp16HostUpscale
    } else {
        model.grad_flush_strategy
    };
    let mut flushed = 0;
    let mut flush_s = 0.0;
    for (&size, &keep) in sizes.iter().zip(&retained) {
        if !keep {
            let bytes = model.grad_bytes(size);
            flush_s += bytes as f64 / grad_flush_throughput(strategy, profile, bytes);
            flushed += 1;
        }
    }

    let compute_s = model.bwd_ns as f64 * 1e-9 * model.recompute_factor;
    let exposed = if plan.blocking {
        flush_s
    } else {
        (flush_s - compute_s).max(0.0)
    };
    Ok(IterationReport {
        label: approach.label(),
        ratio: approach.ratio(profile),
        phases: PhaseBreakdown {
            fwd_s: model.fwd_ns as f64 * 1e-9,
            bwd_s: compute_s + exposed,
            update_s: timeline.makespan_ns as f64 * 1e-9,
            exposed_flush_s: exposed,
        },
        retained_subgroups: retained.len() - flushed,
        timeline,
    })
}
