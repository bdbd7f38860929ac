use std::path::{Path, PathBuf};

use offload_core::executor::AdamHyper;
use offload_core::sharding::shard;
use offload_core::sim::{ApproachConfig, IterationModel, Workload};
use offload_core::SystemProfile;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ProfileRef {
    Named(String),
    Inline(SystemProfile),
}

impl ProfileRef {
    pub fn resolve(&self) -> Result<SystemProfile, CliError> {
        let p = match self {
            ProfileRef::Named(name) => SystemProfile::catalog(name).ok_or_else(|| {
                CliError::Validation(format!(
                    "unknown profile {name:?}; known: {}",
                    SystemProfile::CATALOG.join(", ")
                ))
            })?,
            ProfileRef::Inline(p) => p.clone(),
        };
        p.validate()?;
        Ok(p)
    }

    pub fn name(&self) -> Option<&str> {
        match self {
            ProfileRef::Named(n) => Some(n),
            ProfileRef::Inline(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkloadSpec {
    pub total_params: u64,
    pub subgroup_size: u64,
    #[serde(default = "one")]
    pub num_ranks: u64,
    #[serde(default)]
    pub rank_index: u64,
}

fn one() -> u64 {
    1
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dir: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub format: Option<Format>,
}

/// Values swept by `offload sweep`; each axis has a default.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<Vec<u32>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ratios: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub microbatch_scales: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub profile: ProfileRef,
    pub workload: WorkloadSpec,
    pub approaches: Vec<ApproachConfig>,
    #[serde(default)]
    pub iteration: IterationModel,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hyper: Option<AdamHyper>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<OutputSpec>,
}

impl Scenario {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Io(format!("reading {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let s: Scenario = serde_json::from_str(text)
            .map_err(|e| CliError::Validation(format!("malformed scenario: {e}")))?;
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.profile.resolve()?;
        let w = &self.workload;
        if w.total_params == 0 || w.subgroup_size == 0 || w.num_ranks == 0 {
            return Err(CliError::Validation(
                "workload sizes and rank count must be positive".into(),
            ));
        }
        if w.rank_index >= w.num_ranks {
            return Err(CliError::Validation(format!(
                "rank_index {} out of range for {} ranks",
                w.rank_index, w.num_ranks
            )));
        }
        if self.approaches.is_empty() {
            return Err(CliError::Validation("at least one approach is required".into()));
        }
        for a in &self.approaches {
            let r = a.static_ratio();
            if !(0.0..=1.0).contains(&r) {
                return Err(CliError::Validation(format!("{}: ratio outside [0, 1]", a.label())));
            }
            if let ApproachConfig::Interleaved { k: Some(k), .. } = a {
                if *k > 1_000_000 {
                    return Err(CliError::Validation(format!("k={k} is unreasonably large")));
                }
            }
        }
        self.iteration.validate()?;
        if let Some(h) = &self.hyper {
            h.validate()?;
        }
        Ok(())
    }

    /// Subgroup sizes on the selected rank.
    pub fn workload(&self) -> Result<Workload, CliError> {
        let w = &self.workload;
        let mut ranks = shard(w.total_params, w.subgroup_size, w.num_ranks)?;
        let sizes = ranks.swap_remove(w.rank_index as usize);
        if sizes.is_empty() {
            return Err(CliError::Validation(format!("rank {} holds no parameters", w.rank_index)));
        }
        Ok(Workload {
            subgroup_sizes: sizes,
        })
    }
}
