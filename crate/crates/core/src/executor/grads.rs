use serde::{Deserialize, Serialize};

use crate::precision::{upscale_into, Half};
use crate::profile::SystemProfile;
use crate::sharding::{GradBuffer, Subgroup};
use crate::sim::{grad_flush_throughput, GradFlushStrategy};

/// Default flush granularity in parameters.
pub const DEFAULT_CHUNK: usize = 1 << 16;

/// One stage of a gradient flush and its modelled duration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlushStage {
    pub name: String,
    pub secs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlushCost {
    pub subgroup: usize,
    pub strategy: GradFlushStrategy,
    pub fp16_bytes: u64,
    pub stages: Vec<FlushStage>,
    pub total_secs: f64,
}

impl FlushCost {
    fn new(subgroup: usize, strategy: GradFlushStrategy, fp16_bytes: u64, stages: Vec<(&str, f64)>) -> Self {
        let stages: Vec<FlushStage> = stages
            .into_iter()
            .map(|(n, s)| FlushStage {
                name: n.to_string(),
                secs: s,
            })
            .collect();
        FlushCost {
            subgroup,
            strategy,
            fp16_bytes,
            total_secs: stages.iter().map(|s| s.secs).sum(),
            stages,
        }
    }

    /// Gradients kept on the fast tier cost nothing to flush.
    pub fn retained(subgroup: usize, strategy: GradFlushStrategy) -> Self {
        FlushCost::new(subgroup, strategy, 0, vec![])
    }
}

pub fn flush_gradients(
    sg: &Subgroup,
    strategy: GradFlushStrategy,
    profile: &SystemProfile,
) -> (Vec<f32>, FlushCost) {
    flush_gradients_chunked(sg, strategy, profile, DEFAULT_CHUNK)
}

/// Move one subgroup's backward output to host FP32, `chunk` parameters at
/// a time. Widening is exact, so the result equals `upscale(grads16)` for
/// every strategy and chunk size.
pub fn flush_gradients_chunked(
    sg: &Subgroup,
    strategy: GradFlushStrategy,
    profile: &SystemProfile,
    chunk: usize,
) -> (Vec<f32>, FlushCost) {
    let chunk = chunk.max(1);
    let n = sg.size();
    let mut host = vec![0.0f32; n];
    let g16 = match &sg.grads {
        GradBuffer::Fp16(g) => g,
        GradBuffer::Fp32(g) => {
            host.copy_from_slice(g);
            let secs = 4.0 * n as f64 / profile.channel_bytes_per_s();
            return (host, FlushCost::new(sg.id, strategy, 0, vec![("d2h_fp32", secs)]));
        }
    };
    match strategy {
        GradFlushStrategy::Fp16HostUpscale => {
            for (src, dst) in g16.chunks(chunk).zip(host.chunks_mut(chunk)) {
                // fresh pageable buffer per chunk, then widen on the host
                let staged: Vec<Half> = src.to_vec();
                upscale_into(&staged, dst);
            }
        }
        GradFlushStrategy::GpuUpscaleFp32 => {
            let mut wide = vec![0.0f32; chunk.min(n)];
            for (src, dst) in g16.chunks(chunk).zip(host.chunks_mut(chunk)) {
                let w = &mut wide[..src.len()];
                upscale_into(src, w);
                dst.copy_from_slice(w);
            }
        }
    }
    let bytes = 2 * n as u64;
    let b = bytes as f64;
    let stages = match strategy {
        GradFlushStrategy::Fp16HostUpscale => vec![
            ("host_alloc", b / profile.host_alloc_unpinned_bytes_per_s),
            ("d2h_pageable", b / profile.pageable_d2h()),
            ("host_upscale", b / profile.host_conversion_bytes_per_s),
        ],
        GradFlushStrategy::GpuUpscaleFp32 => vec![
            ("fast_upscale", b / profile.fast_conversion_bytes_per_s),
            ("d2h_fp32", 2.0 * b / profile.channel_bytes_per_s()),
        ],
    };
    let cost = FlushCost::new(sg.id, strategy, bytes, stages);
    debug_assert!(
        bytes == 0
            || (cost.total_secs - b / grad_flush_throughput(strategy, profile, bytes)).abs()
                <= 1e-9 * cost.total_secs.max(1e-12)
    );
    (host, cost)
}
