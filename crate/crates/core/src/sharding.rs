//! Subgroup sharding of a rank's optimizer state and memory-footprint
//! accounting.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::precision::{downscale_into, downscale_rne, upscale, Half, Precision};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Residency {
    HostResident,
    StaticFastResident,
}

/// Gradient buffer of one subgroup, tagged with its precision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum GradBuffer {
    Fp16(Vec<Half>),
    Fp32(Vec<f32>),
}

impl GradBuffer {
    pub fn len(&self) -> usize {
        match self {
            GradBuffer::Fp16(g) => g.len(),
            GradBuffer::Fp32(g) => g.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn precision(&self) -> Precision {
        match self {
            GradBuffer::Fp16(_) => Precision::Fp16,
            GradBuffer::Fp32(_) => Precision::Fp32,
        }
    }

    /// FP32 view of the gradients; FP16 buffers are widened exactly.
    pub fn to_f32(&self) -> Vec<f32> {
        match self {
            GradBuffer::Fp16(g) => upscale(g),
            GradBuffer::Fp32(g) => g.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Subgroup {
    pub id: usize,
    /// Offset of this subgroup inside the flat FP16 model copy.
    pub offset: usize,
    pub params: Vec<f32>,
    pub momentum: Vec<f32>,
    pub variance: Vec<f32>,
    pub grads: GradBuffer,
    pub residency: Residency,
}

impl Subgroup {
    pub fn zeros(id: usize, offset: usize, size: usize) -> Self {
        Subgroup {
            id,
            offset,
            params: vec![0.0; size],
            momentum: vec![0.0; size],
            variance: vec![0.0; size],
            grads: GradBuffer::Fp16(vec![Half::ZERO; size]),
            residency: Residency::HostResident,
        }
    }

    pub fn size(&self) -> usize {
        self.params.len()
    }

    pub fn check(&self) -> Result<()> {
        let s = self.params.len();
        if s == 0 {
            return Err(Error::invalid(format!("subgroup {} is empty", self.id)));
        }
        if self.momentum.len() != s || self.variance.len() != s || self.grads.len() != s {
            return Err(Error::invalid(format!(
                "subgroup {} state vectors have mismatched lengths",
                self.id
            )));
        }
        Ok(())
    }
}

/// One rank's optimizer state split into subgroups, plus the FP16 model copy
/// that the forward/backward passes read.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShardedOptimizer {
    pub subgroups: Vec<Subgroup>,
    pub model16: Vec<Half>,
    pub total_params: usize,
}

impl ShardedOptimizer {
    /// Zero-initialised optimizer with the given subgroup sizes.
    pub fn new(sizes: &[usize]) -> Result<Self> {
        if sizes.contains(&0) {
            return Err(Error::invalid("subgroup sizes must be positive"));
        }
        let mut offset = 0;
        let subgroups = sizes
            .iter()
            .enumerate()
            .map(|(id, &size)| {
                let sg = Subgroup::zeros(id, offset, size);
                offset += size;
                sg
            })
            .collect();
        Ok(ShardedOptimizer {
            subgroups,
            model16: vec![Half::ZERO; offset],
            total_params: offset,
        })
    }

    /// Seeded random parameters with momentum/variance as after a few
    /// steps, FP16 gradients from the same stream, and a coherent model16.
    pub fn seeded(sizes: &[usize], seed: u64) -> Result<Self> {
        let mut opt = Self::new(sizes)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for sg in &mut opt.subgroups {
            for i in 0..sg.size() {
                sg.params[i] = rng.gen_range(-1.0f32..1.0);
                sg.momentum[i] = rng.gen_range(-0.01f32..0.01);
                sg.variance[i] = rng.gen_range(0.0f32..1e-4);
            }
        }
        opt.fill_synthetic_grads(seed.wrapping_add(0x9e37_79b9_7f4a_7c15));
        opt.refresh_model16();
        Ok(opt)
    }

    /// Synthetic backward output: FP16 gradients drawn from a seeded stream.
    pub fn fill_synthetic_grads(&mut self, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for sg in &mut self.subgroups {
            let g: Vec<f32> = (0..sg.size()).map(|_| rng.gen_range(-0.05f32..0.05)).collect();
            sg.grads = GradBuffer::Fp16(downscale_rne(&g));
        }
    }

    pub fn zero_grads(&mut self) {
        for sg in &mut self.subgroups {
            sg.grads = GradBuffer::Fp32(vec![0.0; sg.size()]);
        }
    }

    pub fn num_subgroups(&self) -> usize {
        self.subgroups.len()
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.subgroups.iter().map(Subgroup::size).collect()
    }

    pub fn refresh_model16(&mut self) {
        for sg in &self.subgroups {
            let dst = &mut self.model16[sg.offset..sg.offset + sg.size()];
            downscale_into(&sg.params, dst);
        }
    }

    /// `model16[i] == downscale_rne(params32[i])` for every parameter.
    pub fn model16_coherent(&self) -> bool {
        self.subgroups.iter().all(|sg| {
            self.model16[sg.offset..sg.offset + sg.size()]
                .iter()
                .zip(&sg.params)
                .all(|(h, &p)| h.to_bits() == Half::from_f32(p).to_bits())
        })
    }

    pub fn set_residency(&mut self, static_ids: &[usize]) {
        for sg in &mut self.subgroups {
            sg.residency = if static_ids.contains(&sg.id) {
                Residency::StaticFastResident
            } else {
                Residency::HostResident
            };
        }
    }

    pub fn check(&self) -> Result<()> {
        let mut offset = 0;
        for (i, sg) in self.subgroups.iter().enumerate() {
            if sg.id != i {
                return Err(Error::invalid("subgroup ids must be consecutive from 0"));
            }
            if sg.offset != offset {
                return Err(Error::invalid(format!("subgroup {i} has a bad offset")));
            }
            sg.check()?;
            offset += sg.size();
        }
        if offset != self.total_params || self.model16.len() != self.total_params {
            return Err(Error::invalid("subgroup sizes do not sum to total_params"));
        }
        Ok(())
    }

    /// Bitwise equality of all FP32 state and the FP16 model copy. NaN
    /// payloads compare by bits, unlike `PartialEq`.
    pub fn bit_identical(&self, other: &Self) -> bool {
        fn same(a: &[f32], b: &[f32]) -> bool {
            a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
        }
        self.subgroups.len() == other.subgroups.len()
            && self.model16 == other.model16
            && self.subgroups.iter().zip(&other.subgroups).all(|(a, b)| {
                same(&a.params, &b.params)
                    && same(&a.momentum, &b.momentum)
                    && same(&a.variance, &b.variance)
            })
    }
}

/// Split `total_params` across `num_ranks` ranks (ceil(P/N) each, last rank
/// possibly short) and each rank's share into `subgroup_size` chunks with one
/// trailing remainder chunk.
pub fn shard(total_params: u64, subgroup_size: u64, num_ranks: u64) -> Result<Vec<Vec<u64>>> {
    if total_params == 0 || subgroup_size == 0 || num_ranks == 0 {
        return Err(Error::invalid(
            "total_params, subgroup_size and num_ranks must all be positive",
        ));
    }
    let per_rank = total_params.div_ceil(num_ranks);
    let mut remaining = total_params;
    let mut ranks = Vec::with_capacity(num_ranks as usize);
    for _ in 0..num_ranks {
        let mut share = per_rank.min(remaining);
        remaining -= share;
        let mut sizes = Vec::with_capacity(share.div_ceil(subgroup_size) as usize);
        while share > 0 {
            let chunk = share.min(subgroup_size);
            sizes.push(chunk);
            share -= chunk;
        }
        ranks.push(sizes);
    }
    Ok(ranks)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FootprintReport {
    pub model16_bytes: u64,
    pub grads16_bytes: u64,
    /// FP32 parameters, momentum, variance and gradients.
    pub optimizer32_bytes: u64,
    pub per_gpu_subgroup_count: u64,
    /// FP32 p, m, v of one subgroup (gradients accounted separately).
    pub per_subgroup_state_bytes: u64,
}

pub fn footprint(total_params: u64, subgroup_size: u64) -> Result<FootprintReport> {
    if total_params == 0 || subgroup_size == 0 {
        return Err(Error::invalid("total_params and subgroup_size must be positive"));
    }
    Ok(FootprintReport {
        model16_bytes: 2 * total_params,
        grads16_bytes: 2 * total_params,
        optimizer32_bytes: 16 * total_params,
        per_gpu_subgroup_count: total_params.div_ceil(subgroup_size),
        per_subgroup_state_bytes: 12 * subgroup_size,
    })
}
