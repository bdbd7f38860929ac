//! Resource lanes and the duration arithmetic shared by the simulator and the
//! executor's virtual clock.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::profile::SystemProfile;
use crate::scheduler::{Action, ActionKind, Span, UpdatePlan};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Lane {
    CpuCompute,
    FastCompute,
    ChannelH2D,
    ChannelD2H,
}

impl Lane {
    pub const ALL: [Lane; 4] = [
        Lane::CpuCompute,
        Lane::FastCompute,
        Lane::ChannelH2D,
        Lane::ChannelD2H,
    ];

    pub fn of(kind: ActionKind) -> Lane {
        use ActionKind::*;
        match kind {
            CpuUpdate | CpuDownscale => Lane::CpuCompute,
            GpuUpdate | FlushOutModel16 => Lane::FastCompute,
            PrefetchP | PrefetchM | PrefetchV | H2DParams16 => Lane::ChannelH2D,
            FlushOutP | FlushOutM | FlushOutV | GradFlush => Lane::ChannelD2H,
        }
    }

    pub fn is_compute(self) -> bool {
        matches!(self, Lane::CpuCompute | Lane::FastCompute)
    }

    pub fn name(self) -> &'static str {
        match self {
            Lane::CpuCompute => "CpuCompute",
            Lane::FastCompute => "FastCompute",
            Lane::ChannelH2D => "ChannelH2D",
            Lane::ChannelD2H => "ChannelD2H",
        }
    }

    pub fn from_name(s: &str) -> Option<Lane> {
        Lane::ALL.into_iter().find(|l| l.name() == s)
    }

    fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Lane {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Seconds to integer nanoseconds, rounding up. Values within 1e-6 ns of an
/// integer are treated as that integer so `0.05 s` stays `50_000_000`.
pub fn secs_to_ns(secs: f64) -> u64 {
    let x = secs * 1e9;
    let r = x.round();
    if (x - r).abs() < 1e-6 {
        r as u64
    } else {
        x.ceil() as u64
    }
}

/// Per-action cost model over a set of subgroup sizes.
#[derive(Debug, Clone)]
pub struct CostModel {
    profile: SystemProfile,
    sizes: Vec<u64>,
    contention: f64,
}

impl CostModel {
    /// Host contention only applies when host compute and transfers can
    /// overlap, so blocking plans run at nominal rates.
    pub fn new(profile: &SystemProfile, sizes: Vec<u64>, plan: &UpdatePlan) -> Self {
        CostModel {
            contention: if plan.blocking { 1.0 } else { profile.host_contention },
            profile: profile.clone(),
            sizes,
        }
    }

    pub fn sizes(&self) -> &[u64] {
        &self.sizes
    }

    pub fn duration_secs(&self, action: &Action) -> f64 {
        use ActionKind::*;
        let p = &self.profile;
        let s = self.sizes[action.subgroup()] as f64;
        let host = self.contention;
        match action.kind {
            CpuUpdate => host * s / p.cpu_update_params_per_s,
            GpuUpdate => s / p.fast_update_params_per_s,
            CpuDownscale => {
                let batch: u64 = action.subgroups.iter().map(|&i| self.sizes[i]).sum();
                host * batch as f64 / p.host_downscale_params_per_s
            }
            FlushOutP | FlushOutM | FlushOutV | PrefetchP | PrefetchM | PrefetchV | GradFlush => {
                host * p.fp32_transfer_secs(s)
            }
            H2DParams16 => host * p.fp16_transfer_secs(s),
            FlushOutModel16 => 2.0 * s / p.fast_conversion_bytes_per_s,
        }
    }

    pub fn duration_ns(&self, action: &Action) -> u64 {
        secs_to_ns(self.duration_secs(action))
    }

    /// Bytes moved or produced by the action.
    pub fn bytes(&self, action: &Action) -> u64 {
        use ActionKind::*;
        let s = self.sizes[action.subgroup()];
        match action.kind {
            CpuUpdate | GpuUpdate => 0,
            CpuDownscale => 2 * action.subgroups.iter().map(|&i| self.sizes[i]).sum::<u64>(),
            FlushOutP | FlushOutM | FlushOutV | PrefetchP | PrefetchM | PrefetchV | GradFlush => 4 * s,
            H2DParams16 | FlushOutModel16 => 2 * s,
        }
    }
}

/// Exclusive lanes served in dispatch order.
#[derive(Debug, Clone, Default)]
pub struct LaneClock {
    free_at: [u64; 4],
}

impl LaneClock {
    pub fn reserve(&mut self, lane: Lane, ready_ns: u64, duration_ns: u64) -> Span {
        let start = ready_ns.max(self.free_at[lane.index()]);
        let end = start + duration_ns;
        self.free_at[lane.index()] = end;
        Span {
            start_ns: start,
            end_ns: end,
        }
    }
}
