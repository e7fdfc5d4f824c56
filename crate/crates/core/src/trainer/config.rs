//! TOML training configuration.
//!
//! ```toml
//! profile = "desk"          # or "paper"
//! stages = [1, 2]           # run in this order
//! seed = 7
//! model = "tiny"            # or "default"
//! output = "runs/desk"      # checkpoints and train_log.jsonl
//! augment = 0.5             # motion/appearance augmentation strength
//! bn_momentum = 0.1
//! memory_limit_gib = 8.0
//! any_order = false
//!
//! [[stage]]                 # optional per-stage overrides of the profile
//! stage = 1
//! iterations_per_epoch = 20
//! lr = { backbone = 1e-4, decoder = 2e-4, dgf = 0.0 }
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::adam::GroupLr;
use super::schedule::{ExtentRange, Profile, StageConfig};
use crate::error::{Error, Result};
use crate::network::ModelConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelPreset {
    Tiny,
    Default,
}

impl ModelPreset {
    pub fn config(self) -> ModelConfig {
        match self {
            ModelPreset::Tiny => ModelConfig::tiny_test(),
            ModelPreset::Default => ModelConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageOverride {
    pub stage: u8,
    pub frames: Option<usize>,
    pub hr_frames: Option<usize>,
    pub resolution: Option<ExtentRange>,
    pub hr_resolution: Option<ExtentRange>,
    pub downsample: Option<f64>,
    pub lr: Option<GroupLr>,
    pub epochs: Option<usize>,
    pub iterations_per_epoch: Option<usize>,
    pub batch: Option<usize>,
    pub segmentation: Option<bool>,
}

impl StageOverride {
    fn apply(&self, s: &mut StageConfig) {
        macro_rules! take {
            ($($f:ident),*) => { $(if let Some(v) = self.$f { s.$f = v; })* };
        }
        take!(frames, hr_frames, resolution, hr_resolution, downsample, lr, epochs, iterations_per_epoch, batch, segmentation);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "desk")]
    pub profile: Profile,
    #[serde(default = "all_stages")]
    pub stages: Vec<u8>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "tiny")]
    pub model: ModelPreset,
    #[serde(default)]
    pub output: Option<PathBuf>,
    #[serde(default = "half")]
    pub augment: f64,
    #[serde(default = "momentum")]
    pub bn_momentum: f64,
    #[serde(default = "eight")]
    pub memory_limit_gib: f64,
    #[serde(default)]
    pub any_order: bool,
    #[serde(default, rename = "stage")]
    pub overrides: Vec<StageOverride>,
}

fn desk() -> Profile {
    Profile::Desk
}
fn all_stages() -> Vec<u8> {
    vec![1, 2, 3, 4]
}
fn tiny() -> ModelPreset {
    ModelPreset::Tiny
}
fn half() -> f64 {
    0.5
}
fn momentum() -> f64 {
    super::DEFAULT_BN_MOMENTUM
}
fn eight() -> f64 {
    8.0
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            profile: desk(),
            stages: all_stages(),
            seed: 0,
            model: tiny(),
            output: None,
            augment: half(),
            bn_momentum: momentum(),
            memory_limit_gib: eight(),
            any_order: false,
            overrides: Vec::new(),
        }
    }
}

impl TrainConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("plain data serialises")
    }

    /// Profile settings with overrides applied, in run order.
    pub fn stage_configs(&self) -> Result<Vec<StageConfig>> {
        if !self.any_order && self.stages.windows(2).any(|w| w[1] != w[0] + 1) {
            return Err(Error::Config(format!(
                "stages {:?} are not consecutive and ascending; set any_order to override",
                self.stages
            )));
        }
        if let Some(o) = self.overrides.iter().find(|o| !self.stages.contains(&o.stage)) {
            log::warn!("override for stage {} has no effect: stage not selected", o.stage);
        }
        self.stages
            .iter()
            .map(|&id| {
                let mut s = StageConfig::for_profile(self.profile, id)?;
                for o in self.overrides.iter().filter(|o| o.stage == id) {
                    o.apply(&mut s);
                }
                s.validate()?;
                Ok(s)
            })
            .collect()
    }

    pub fn memory_limit_bytes(&self) -> u64 {
        (self.memory_limit_gib * (1u64 << 30) as f64) as u64
    }
}
