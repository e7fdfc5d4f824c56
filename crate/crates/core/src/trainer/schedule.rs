//! Stage tables and the per-iteration pass interleave.

use serde::{Deserialize, Serialize};

use super::adam::GroupLr;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    /// Full-scale settings of the reference training run.
    Paper,
    /// Small batches, short clips and low resolutions that fit a laptop CPU.
    Desk,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PassKind {
    LowResMatting,
    HighResMatting,
    VideoSeg,
    ImageSeg,
}

impl PassKind {
    pub fn name(self) -> &'static str {
        match self {
            PassKind::LowResMatting => "matting_lr",
            PassKind::HighResMatting => "matting_hr",
            PassKind::VideoSeg => "seg_video",
            PassKind::ImageSeg => "seg_image",
        }
    }

    pub fn is_matting(self) -> bool {
        matches!(self, PassKind::LowResMatting | PassKind::HighResMatting)
    }
}

/// Inclusive extent range; draws are multiples of 16.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtentRange {
    pub min: usize,
    pub max: usize,
}

impl ExtentRange {
    pub const fn new(min: usize, max: usize) -> Self {
        ExtentRange { min, max }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageConfig {
    pub stage: u8,
    /// Low-resolution sequence length.
    pub frames: usize,
    /// High-resolution sequence length; used from stage 3 on.
    pub hr_frames: usize,
    pub resolution: ExtentRange,
    pub hr_resolution: ExtentRange,
    /// Downsample factor of the high-resolution pass.
    pub downsample: f64,
    pub lr: GroupLr,
    pub epochs: usize,
    pub iterations_per_epoch: usize,
    pub batch: usize,
    /// Runs the interleaved segmentation passes; off only for ablations.
    #[serde(default = "yes")]
    pub segmentation: bool,
}

fn yes() -> bool {
    true
}

impl StageConfig {
    /// Learning rates of the reference schedule for `stage`.
    pub fn reference_lr(stage: u8) -> Result<GroupLr> {
        Ok(match stage {
            1 => GroupLr {
                backbone: 1e-4,
                decoder: 2e-4,
                dgf: 0.0,
            },
            2 => GroupLr {
                backbone: 5e-5,
                decoder: 1e-4,
                dgf: 0.0,
            },
            3 => GroupLr {
                backbone: 1e-5,
                decoder: 1e-5,
                dgf: 2e-4,
            },
            4 => GroupLr {
                backbone: 1e-5,
                decoder: 5e-5,
                dgf: 2e-4,
            },
            s => return Err(Error::Param(format!("stage must be in 1..=4, got {s}"))),
        })
    }

    pub fn paper(stage: u8) -> Result<Self> {
        let lr = Self::reference_lr(stage)?;
        let (frames, epochs) = match stage {
            1 => (15, 15),
            2 => (50, 2),
            3 => (40, 1),
            _ => (40, 5),
        };
        Ok(StageConfig {
            stage,
            frames,
            hr_frames: 6,
            resolution: ExtentRange::new(256, 512),
            hr_resolution: ExtentRange::new(1024, 2048),
            downsample: 0.25,
            lr,
            epochs,
            // One pass over a dataset is not defined for procedural data; the count is a config value.
            iterations_per_epoch: 1000,
            batch: 4,
            segmentation: true,
        })
    }

    pub fn desk(stage: u8) -> Result<Self> {
        let lr = Self::reference_lr(stage)?;
        let frames = match stage {
            1 => 4,
            2 => 8,
            _ => 6,
        };
        Ok(StageConfig {
            stage,
            frames,
            hr_frames: 2,
            resolution: ExtentRange::new(64, 96),
            hr_resolution: ExtentRange::new(64, 128),
            downsample: 0.25,
            lr,
            epochs: 1,
            iterations_per_epoch: 10,
            batch: 2,
            segmentation: true,
        })
    }

    pub fn for_profile(profile: Profile, stage: u8) -> Result<Self> {
        match profile {
            Profile::Paper => Self::paper(stage),
            Profile::Desk => Self::desk(stage),
        }
    }

    /// Batch of the image-segmentation pass: one frame per sample, `B·T` samples.
    pub fn image_seg_batch(&self) -> usize {
        self.batch * self.frames
    }

    pub fn uses_high_res(&self) -> bool {
        self.stage >= 3
    }

    pub fn iterations(&self) -> usize {
        self.epochs * self.iterations_per_epoch
    }

    /// Passes of iteration `iteration` (0-based), in execution order.
    pub fn passes(&self, iteration: usize) -> Vec<PassKind> {
        let mut p = vec![PassKind::LowResMatting];
        if self.uses_high_res() {
            p.push(PassKind::HighResMatting);
        }
        if self.segmentation {
            p.push(if iteration % 2 == 0 { PassKind::VideoSeg } else { PassKind::ImageSeg });
        }
        p
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=4).contains(&self.stage) {
            return Err(Error::Param(format!("stage must be in 1..=4, got {}", self.stage)));
        }
        if self.frames == 0 || self.batch == 0 || (self.uses_high_res() && self.hr_frames == 0) {
            return Err(Error::Param("batch and sequence lengths must be positive".into()));
        }
        for r in [self.resolution, self.hr_resolution] {
            if r.min > r.max || r.max < 16 || r.max / 16 < r.min.div_ceil(16) {
                return Err(Error::Param(format!("no multiple of 16 in [{}, {}]", r.min, r.max)));
            }
        }
        if self.uses_high_res() && !(self.downsample > 0.0 && self.downsample < 1.0) {
            return Err(Error::Param(format!(
                "high-resolution pass needs a downsample factor in (0, 1), got {}",
                self.downsample
            )));
        }
        Ok(())
    }
}
