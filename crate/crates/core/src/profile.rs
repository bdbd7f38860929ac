//! Throughput and capacity description of one node.
//!
//! Rates that enter the stride formula are stored in parameters per second at
//! FP32 width; conversion, allocation and pageable-path rates are byte rates.
//! Conversion byte rates are counted on the FP16 side of the conversion.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemProfile {
    /// FP32 Adam update rate on the host (U_c).
    pub cpu_update_params_per_s: f64,
    /// FP32 Adam update rate on the fast device (U_g).
    pub fast_update_params_per_s: f64,
    /// Host FP32 -> FP16 downscale rate (D_c).
    pub host_downscale_params_per_s: f64,
    /// Pinned duplex channel rate per direction, FP32 params/s (B).
    pub channel_params_per_s: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pageable_h2d_bytes_per_s: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pageable_d2h_bytes_per_s: Option<f64>,
    pub fast_conversion_bytes_per_s: f64,
    pub host_conversion_bytes_per_s: f64,
    pub host_alloc_unpinned_bytes_per_s: f64,
    /// Fast-tier bytes available for dynamic optimizer state.
    pub fast_capacity_bytes: u64,
    /// Slowdown applied to host compute and channel transfers when they run
    /// concurrently. 1.0 disables it.
    #[serde(default = "one")]
    pub host_contention: f64,
    /// Where the numbers come from.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

fn one() -> f64 {
    1.0
}

impl SystemProfile {
    /// 4x V100 32 GB node used to cross-check the stride model.
    /// Conversion, allocation and pageable rates are not reported for this
    /// machine and reuse the H100 testbed values.
    pub fn v100_node() -> Self {
        SystemProfile {
            cpu_update_params_per_s: 2.0e9,
            fast_update_params_per_s: 35.0e9,
            host_downscale_params_per_s: 8.7e9,
            channel_params_per_s: 3.0e9,
            pageable_h2d_bytes_per_s: Some(9.0e9),
            pageable_d2h_bytes_per_s: Some(10.0e9),
            fast_conversion_bytes_per_s: 1.2e12,
            host_conversion_bytes_per_s: 62.0e9,
            host_alloc_unpinned_bytes_per_s: 4.0e9,
            fast_capacity_bytes: 8_000_000_000,
            host_contention: 1.0,
            note: Some(
                "4x V100 32 GB node, measured update-phase rates; conversion, \
                 allocation and pageable rates borrowed from the H100 node"
                    .into(),
            ),
        }
    }

    /// 4x H100 80 GB node: 100 and 8 billion params/s node update rates,
    /// ~55 GB/s pinned PCIe Gen5 per direction, 62 GB/s host conversion
    /// (FP16 side, so 31 billion params/s), 1.2 TB/s device conversion.
    pub fn h100_node() -> Self {
        SystemProfile {
            cpu_update_params_per_s: 8.0e9,
            fast_update_params_per_s: 100.0e9,
            host_downscale_params_per_s: 31.0e9,
            channel_params_per_s: 55.0e9 / 4.0,
            pageable_h2d_bytes_per_s: Some(9.0e9),
            pageable_d2h_bytes_per_s: Some(10.0e9),
            fast_conversion_bytes_per_s: 1.2e12,
            host_conversion_bytes_per_s: 62.0e9,
            host_alloc_unpinned_bytes_per_s: 4.0e9,
            fast_capacity_bytes: 8_000_000_000,
            host_contention: 1.0,
            note: Some(
                "4x H100 80 GB node, PCIe Gen5 pinned at ~55 GB/s per direction; \
                 host conversion counted on the FP16 side"
                    .into(),
            ),
        }
    }

    pub fn catalog(name: &str) -> Option<Self> {
        match name {
            "v100-node" => Some(Self::v100_node()),
            "h100-node" => Some(Self::h100_node()),
            _ => None,
        }
    }

    pub const CATALOG: [&'static str; 2] = ["v100-node", "h100-node"];

    pub fn validate(&self) -> Result<()> {
        let rates = [
            ("cpu_update_params_per_s", self.cpu_update_params_per_s),
            ("fast_update_params_per_s", self.fast_update_params_per_s),
            ("host_downscale_params_per_s", self.host_downscale_params_per_s),
            ("channel_params_per_s", self.channel_params_per_s),
            ("fast_conversion_bytes_per_s", self.fast_conversion_bytes_per_s),
            ("host_conversion_bytes_per_s", self.host_conversion_bytes_per_s),
            ("host_alloc_unpinned_bytes_per_s", self.host_alloc_unpinned_bytes_per_s),
        ];
        for (name, r) in rates {
            if !(r.is_finite() && r > 0.0) {
                return Err(Error::invalid(format!("{name} must be positive and finite, got {r}")));
            }
        }
        for (name, r) in [
            ("pageable_h2d_bytes_per_s", self.pageable_h2d_bytes_per_s),
            ("pageable_d2h_bytes_per_s", self.pageable_d2h_bytes_per_s),
        ] {
            if let Some(r) = r {
                if !(r.is_finite() && r > 0.0) {
                    return Err(Error::invalid(format!("{name} must be positive, got {r}")));
                }
            }
        }
        if !(self.host_contention.is_finite() && self.host_contention >= 1.0) {
            return Err(Error::invalid("host_contention must be >= 1.0"));
        }
        Ok(())
    }

    /// Channel rate in bytes/s.
    pub fn channel_bytes_per_s(&self) -> f64 {
        self.channel_params_per_s * 4.0
    }

    pub fn fp32_transfer_secs(&self, params: f64) -> f64 {
        params / self.channel_params_per_s
    }

    pub fn fp16_transfer_secs(&self, params: f64) -> f64 {
        params / (2.0 * self.channel_params_per_s)
    }

    /// Pageable D2H rate, falling back to the pinned channel rate.
    pub fn pageable_d2h(&self) -> f64 {
        self.pageable_d2h_bytes_per_s
            .unwrap_or_else(|| self.channel_bytes_per_s())
    }
}
