//! Closed-form model of the interleaved update phase.
//!
//! The model balances, per cycle of `k` host-updated subgroups and one
//! fast-device subgroup, the host block `k·S·(1/U_c + 1/D_c)` against the
//! transfer block (FP32 swap-out/swap-in `3S/B` plus FP16 parameter uploads
//! `k·S/(2B)`) followed by the device update `S/U_g`. Solving the balance
//! gives a stride that does not depend on `S`, and the time estimate is
//! minimised exactly at that balance.
//!
//! `k` here counts host subgroups per fast-device subgroup. The scheduler's
//! stride is the period of its `(i + 1) % stride == 0` predicate, so a ratio
//! of `k` is realised by a scheduler stride of `k + 1`.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::profile::SystemProfile;
use crate::scheduler::Stride;

/// Host-updated subgroups per fast-device subgroup.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpdateRatio {
    /// Nothing dynamic goes to the fast device.
    AllCpu,
    /// `k` host subgroups for every fast-device subgroup. `0` sends every
    /// dynamic subgroup to the fast device.
    PerGpu(u32),
}

impl UpdateRatio {
    pub fn stride(self) -> Stride {
        match self {
            UpdateRatio::AllCpu => Stride::AllCpu,
            UpdateRatio::PerGpu(k) => Stride::Every(k + 1),
        }
    }

    /// Fraction of dynamic subgroups updated on the fast device.
    pub fn gpu_fraction(self) -> f64 {
        match self {
            UpdateRatio::AllCpu => 0.0,
            UpdateRatio::PerGpu(k) => 1.0 / (k as f64 + 1.0),
        }
    }
}

impl fmt::Display for UpdateRatio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            UpdateRatio::AllCpu => f.write_str("ALL_CPU"),
            UpdateRatio::PerGpu(k) => write!(f, "{k}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StrideResult {
    /// Real-valued balance point; `None` when offloading never pays.
    pub k_real: Option<f64>,
    pub k: UpdateRatio,
    pub gpu_fraction: f64,
}

impl StrideResult {
    pub fn stride(&self) -> Stride {
        self.k.stride()
    }
}

struct Terms {
    /// 1/U_c + 1/D_c
    host: f64,
    /// 3/B + 1/U_g
    swap: f64,
    /// 1/(2B)
    upload16: f64,
    /// 1/U_g
    fast: f64,
}

impl Terms {
    fn new(p: &SystemProfile) -> Self {
        let b = p.channel_params_per_s;
        Terms {
            host: 1.0 / p.cpu_update_params_per_s + 1.0 / p.host_downscale_params_per_s,
            swap: 3.0 / b + 1.0 / p.fast_update_params_per_s,
            upload16: 1.0 / (2.0 * b),
            fast: 1.0 / p.fast_update_params_per_s,
        }
    }

    /// Steady-state seconds per parameter at ratio `k`.
    fn per_param(&self, k: u32) -> f64 {
        let k = k as f64;
        (k * self.host).max(self.swap + k * self.upload16) / (k + 1.0)
    }
}

/// Solve the balance for `k` and round it by comparing the closed-form
/// estimate at the two neighbouring integers (ties go to the smaller `k`).
pub fn optimal_stride(profile: &SystemProfile) -> StrideResult {
    let t = Terms::new(profile);
    let denom = t.host - t.upload16;
    if denom <= 0.0 {
        return StrideResult {
            k_real: None,
            k: UpdateRatio::AllCpu,
            gpu_fraction: 0.0,
        };
    }
    let k_real = t.swap / denom;
    let lo = k_real.floor().min(u32::MAX as f64) as u32;
    let hi = k_real.ceil().min(u32::MAX as f64) as u32;
    let k = if t.per_param(hi) < t.per_param(lo) { hi } else { lo };
    let k = UpdateRatio::PerGpu(k);
    StrideResult {
        k_real: Some(k_real),
        k,
        gpu_fraction: k.gpu_fraction(),
    }
}

/// Closed-form update-phase time in seconds for `num_subgroups` subgroups of
/// `subgroup_size` parameters, `static_residents` of which live on the fast
/// device.
///
/// `AllCpu` is the blocking baseline: every host subgroup is updated,
/// downscaled and uploaded before the next one starts.
pub fn estimate_update_time(
    profile: &SystemProfile,
    num_subgroups: u64,
    subgroup_size: u64,
    k: UpdateRatio,
    static_residents: u64,
) -> f64 {
    debug_assert!(static_residents <= num_subgroups);
    let t = Terms::new(profile);
    let s = subgroup_size as f64;
    let statics = static_residents.min(num_subgroups);
    let dynamic = num_subgroups - statics;
    let static_time = statics as f64 * s * t.fast;
    match k {
        UpdateRatio::AllCpu => static_time + dynamic as f64 * s * (t.host + t.upload16),
        UpdateRatio::PerGpu(k) => {
            let gpu = dynamic / (k as u64 + 1);
            let cpu = (dynamic - gpu) as f64;
            let host_block = cpu * s * t.host;
            let transfer_block = gpu as f64 * s * t.swap + cpu * s * t.upload16;
            // when the host is the bottleneck, FP16 uploads of the last
            // host batch trail the final downscale
            let tail = cpu.min(k as f64) * s * t.upload16;
            (host_block + tail).max(transfer_block) + static_time
        }
    }
}
