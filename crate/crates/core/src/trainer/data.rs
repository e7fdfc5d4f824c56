//! Batches for each training pass.
//!
//! Sources are pure functions of (stage, pass, iteration), so a resumed run sees
//! exactly the batches the uninterrupted run would have seen.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::schedule::{PassKind, StageConfig};
use crate::datagen::{
    derive_seed, motion_augment, sample_resolution_in, synth_matting_clip, synth_segmentation_sample, ClipSample,
    MotionAugmentConfig, SampleKind, SegmentationSpec,
};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// One pass worth of network input and targets.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    /// `B×T×3×H×W`.
    pub frames: Tensor<f32>,
    /// `(B·T)×1×H×W`.
    pub alpha: Tensor<f32>,
    /// `(B·T)×3×H×W`.
    pub foreground: Tensor<f32>,
    /// `(B·T)×1×H×W`, binary.
    pub seg: Tensor<f32>,
    pub batch: usize,
    pub len: usize,
    pub kind: SampleKind,
}

impl Batch {
    /// Stacks clips of identical extents and length.
    pub fn stack(clips: &[ClipSample]) -> Result<Batch> {
        let first = clips.first().ok_or_else(|| Error::Param("empty batch".into()))?;
        let dims = first.frames.dims().to_vec();
        for c in clips {
            if c.frames.dims() != &dims[..] {
                return Err(Error::shape("batch stack", c.frames.dims(), &dims));
            }
        }
        let (t, _, h, w) = first.frames.nchw()?;
        let b = clips.len();
        let cat = |f: fn(&ClipSample) -> &Tensor<f32>, c: usize| -> Result<Tensor<f32>> {
            let mut data = Vec::with_capacity(b * t * c * h * w);
            for clip in clips {
                data.extend_from_slice(f(clip).data());
            }
            Tensor::from_vec(vec![b * t, c, h, w], data)
        };
        Ok(Batch {
            frames: cat(|c| &c.frames, 3)?.reshape(vec![b, t, 3, h, w])?,
            alpha: cat(|c| &c.alpha, 1)?,
            foreground: cat(|c| &c.foreground, 3)?,
            seg: cat(|c| &c.seg, 1)?,
            batch: b,
            len: t,
            kind: first.kind,
        })
    }

    pub fn extent(&self) -> (usize, usize) {
        let d = self.frames.dims();
        (d[3], d[4])
    }
}

/// Batch count, sequence length and extent range of a pass under `stage`.
pub fn pass_shape(stage: &StageConfig, pass: PassKind) -> (usize, usize, (usize, usize)) {
    let r = match pass {
        PassKind::HighResMatting => stage.hr_resolution,
        _ => stage.resolution,
    };
    let range = (r.min, r.max);
    match pass {
        PassKind::LowResMatting | PassKind::VideoSeg => (stage.batch, stage.frames, range),
        PassKind::HighResMatting => (stage.batch, stage.hr_frames, range),
        PassKind::ImageSeg => (stage.image_seg_batch(), 1, range),
    }
}

fn pass_stream(stage: u8, pass: PassKind) -> u64 {
    let p = match pass {
        PassKind::LowResMatting => 0,
        PassKind::HighResMatting => 1,
        PassKind::VideoSeg => 2,
        PassKind::ImageSeg => 3,
    };
    u64::from(stage) * 16 + p
}

pub trait DataSource: Send + Sync {
    fn batch(&self, stage: &StageConfig, pass: PassKind, iteration: usize) -> Result<Batch>;
}

/// Procedural clips, freshly rendered and augmented for every pass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticSource {
    pub seed: u64,
    /// Scale of the random motion and appearance augmentation; 0 disables it.
    pub augment: f64,
}

impl SyntheticSource {
    pub fn new(seed: u64) -> Self {
        SyntheticSource { seed, augment: 0.5 }
    }

    fn segmentation(&self, stage: &StageConfig, pass: PassKind, iteration: usize) -> Result<Batch> {
        let (b, t, (lo, hi)) = pass_shape(stage, pass);
        let base = derive_seed(self.seed, pass_stream(stage.stage, pass), iteration as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(base);
        let (h, w) = sample_resolution_in(&mut rng, lo, hi)?;
        let spec = SegmentationSpec {
            video: pass == PassKind::VideoSeg,
            frames: t,
            height: h,
            width: w,
        };
        let clips = (0..b)
            .map(|i| synth_segmentation_sample(derive_seed(base, 1, i as u64), spec))
            .collect::<Result<Vec<_>>>()?;
        Batch::stack(&clips)
    }
}

impl DataSource for SyntheticSource {
    fn batch(&self, stage: &StageConfig, pass: PassKind, iteration: usize) -> Result<Batch> {
        if !pass.is_matting() {
            return self.segmentation(stage, pass, iteration);
        }
        let (b, t, (lo, hi)) = pass_shape(stage, pass);
        let base = derive_seed(self.seed, pass_stream(stage.stage, pass), iteration as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(base);
        let (h, w) = sample_resolution_in(&mut rng, lo, hi)?;
        let clips = (0..b)
            .map(|i| {
                let seed = derive_seed(base, 1, i as u64);
                let clip = synth_matting_clip(seed, t, h, w)?;
                if self.augment <= 0.0 {
                    return Ok(clip);
                }
                let mut r = ChaCha8Rng::seed_from_u64(derive_seed(base, 2, i as u64));
                let cfg = MotionAugmentConfig::random(&mut r, (h, w), self.augment, false);
                motion_augment(&clip, &cfg, derive_seed(base, 3, i as u64))
            })
            .collect::<Result<Vec<_>>>()?;
        Batch::stack(&clips)
    }
}

/// A fixed set of matting clips, served whole on every matting pass.
///
/// Segmentation passes draw from `segmentation` so matting clips never train the segmentation head.
#[derive(Debug, Clone, PartialEq)]
pub struct FixedClips {
    pub clips: Vec<ClipSample>,
    pub segmentation: SyntheticSource,
}

impl FixedClips {
    pub fn new(clips: Vec<ClipSample>, seed: u64) -> Result<Self> {
        if clips.is_empty() {
            return Err(Error::Param("fixed data source needs at least one clip".into()));
        }
        Ok(FixedClips {
            clips,
            segmentation: SyntheticSource { seed, augment: 0.0 },
        })
    }

    /// `count` synthetic clips of `frames` frames at `h×w`, without augmentation.
    pub fn synthetic(seed: u64, count: usize, frames: usize, h: usize, w: usize) -> Result<Self> {
        let clips = (0..count)
            .map(|i| synth_matting_clip(derive_seed(seed, 99, i as u64), frames, h, w))
            .collect::<Result<Vec<_>>>()?;
        Self::new(clips, seed)
    }
}

impl DataSource for FixedClips {
    fn batch(&self, stage: &StageConfig, pass: PassKind, iteration: usize) -> Result<Batch> {
        if !pass.is_matting() {
            let (h, w) = self.clips[0].extent();
            let mut s = stage.clone();
            s.resolution = super::schedule::ExtentRange::new(h.min(w), h.max(w));
            return self.segmentation.segmentation(&s, pass, iteration);
        }
        let n = self.clips.len();
        let b = stage.batch.min(n);
        let start = (iteration * b) % n;
        let chosen: Vec<ClipSample> = (0..b).map(|k| self.clips[(start + k) % n].clone()).collect();
        Batch::stack(&chosen)
    }
}
