//! Training and evaluation clips: compositing, augmentation and procedural synthesis.

mod augment;
mod io;
mod synth;

pub use augment::{
    motion_augment, temporal_augment, Easing, Interp, LayerMotion, MotionAugmentConfig, Pause, Ramp, TemporalOps,
};
pub use io::{export_clip, import_clip, read_png, write_png, write_png16, ClipManifest, PlaneEntry, MANIFEST_FILE};
pub use synth::{synth_matting_clip, synth_segmentation_sample, SegmentationSpec};

use std::sync::mpsc::{sync_channel, Receiver};
use std::thread::JoinHandle;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleKind {
    Matting,
    VideoSeg,
    ImageSeg,
}

/// One clip with its labels. Tensors are `T×C×H×W`, values in `[0, 1]`.
///
/// Matting samples keep the background layer so augmentation can recomposite.
/// Segmentation samples carry the binary mask in both `alpha` and `seg` and the
/// frames themselves as `foreground`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClipSample {
    pub frames: Tensor<f32>,
    pub alpha: Tensor<f32>,
    pub foreground: Tensor<f32>,
    pub background: Option<Tensor<f32>>,
    pub seg: Tensor<f32>,
    pub kind: SampleKind,
}

impl ClipSample {
    /// Builds a matting sample from its layers, compositing the frames.
    pub fn from_layers(foreground: Tensor<f32>, alpha: Tensor<f32>, background: Tensor<f32>) -> Result<Self> {
        let frames = composite(&foreground, &alpha, &background)?;
        let seg = alpha.map(|a| if a > 0.5 { 1.0 } else { 0.0 });
        Ok(ClipSample {
            frames,
            alpha,
            foreground,
            background: Some(background),
            seg,
            kind: SampleKind::Matting,
        })
    }

    /// Builds a segmentation sample; `mask` values are thresholded at 0.5.
    pub fn segmentation(frames: Tensor<f32>, mask: &Tensor<f32>, video: bool) -> Result<Self> {
        let (t, c, h, w) = frames.nchw()?;
        if c != 3 || mask.dims() != [t, 1, h, w] {
            return Err(Error::shape("segmentation sample", frames.dims(), mask.dims()));
        }
        if !video && t != 1 {
            return Err(Error::Contract(format!("image segmentation samples have one frame, got {t}")));
        }
        let seg = mask.map(|a| if a > 0.5 { 1.0 } else { 0.0 });
        Ok(ClipSample {
            foreground: frames.clone(),
            frames,
            alpha: seg.clone(),
            background: None,
            seg,
            kind: if video { SampleKind::VideoSeg } else { SampleKind::ImageSeg },
        })
    }

    pub fn len(&self) -> usize {
        self.frames.dims()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `(height, width)`.
    pub fn extent(&self) -> (usize, usize) {
        let d = self.frames.dims();
        (d[2], d[3])
    }

    /// Largest `|I − (αF + (1−α)B)|`; `None` without a background layer.
    pub fn reconstruction_error(&self) -> Option<f64> {
        let bg = self.background.as_ref()?;
        let rebuilt = composite_unchecked(&self.foreground, &self.alpha, bg);
        Some(
            self.frames
                .data()
                .iter()
                .zip(&rebuilt)
                .map(|(a, b)| (*a as f64 - *b as f64).abs())
                .fold(0.0, f64::max),
        )
    }

    /// Frames, alpha and foreground as `1×T×C×H×W` batches for the network.
    pub fn as_batch(&self) -> Result<(Tensor<f32>, Tensor<f32>, Tensor<f32>)> {
        let add_batch = |t: &Tensor<f32>| {
            let mut d = vec![1];
            d.extend_from_slice(t.dims());
            t.reshape(d)
        };
        Ok((add_batch(&self.frames)?, add_batch(&self.alpha)?, add_batch(&self.foreground)?))
    }
}

fn composite_unchecked(fg: &Tensor<f32>, alpha: &Tensor<f32>, bg: &Tensor<f32>) -> Vec<f32> {
    let (t, c, h, w) = fg.nchw().expect("checked rank");
    let hw = h * w;
    let (f, a, b) = (fg.data(), alpha.data(), bg.data());
    let mut out = Vec::with_capacity(t * c * hw);
    for ti in 0..t {
        for ci in 0..c {
            for px in 0..hw {
                let i = (ti * c + ci) * hw + px;
                let al = a[ti * hw + px];
                out.push(al * f[i] + (1.0 - al) * b[i]);
            }
        }
    }
    out
}

/// `α·F + (1−α)·B` with `α` broadcast over channels. Inputs outside `[0, 1]` are clamped with a warning.
pub fn composite(fg: &Tensor<f32>, alpha: &Tensor<f32>, bg: &Tensor<f32>) -> Result<Tensor<f32>> {
    let (t, _, h, w) = fg.nchw()?;
    if fg.dims() != bg.dims() {
        return Err(Error::shape("composite", fg.dims(), bg.dims()));
    }
    if alpha.dims() != [t, 1, h, w] {
        return Err(Error::shape("composite alpha", alpha.dims(), &[t, 1, h, w]));
    }
    let clamp = |x: &Tensor<f32>, name: &str| {
        let (lo, hi) = x.min_max();
        if lo < 0.0 || hi > 1.0 {
            log::warn!("composite: {name} spans [{lo}, {hi}], clamping to [0, 1]");
            x.map(|v| v.clamp(0.0, 1.0))
        } else {
            x.clone()
        }
    };
    let (fg, alpha, bg) = (clamp(fg, "foreground"), clamp(alpha, "alpha"), clamp(bg, "background"));
    Tensor::from_vec(fg.dims().to_vec(), composite_unchecked(&fg, &alpha, &bg))
}

pub const RESOLUTION_RANGE: (usize, usize) = (256, 512);

/// Height and width drawn independently and uniformly from the multiples of 16 in `[lo, hi]`.
pub fn sample_resolution_in(rng: &mut impl Rng, lo: usize, hi: usize) -> Result<(usize, usize)> {
    let (a, b) = (lo.div_ceil(16), hi / 16);
    if a == 0 || a > b {
        return Err(Error::Param(format!("no multiple of 16 in [{lo}, {hi}]")));
    }
    Ok((rng.gen_range(a..=b) * 16, rng.gen_range(a..=b) * 16))
}

pub fn sample_resolution(rng: &mut impl Rng) -> (usize, usize) {
    sample_resolution_in(rng, RESOLUTION_RANGE.0, RESOLUTION_RANGE.1).expect("fixed range holds multiples of 16")
}

/// Seed of item `index` in stream `stream` under `base`, decorrelated by a ChaCha draw.
pub fn derive_seed(base: u64, stream: u64, index: u64) -> u64 {
    let mut r = ChaCha8Rng::seed_from_u64(base ^ stream.rotate_left(32));
    r.set_stream(stream);
    r.set_word_pos(u128::from(index) * 16);
    r.gen()
}

/// Generates items on a worker thread, at most `capacity` ahead of the consumer.
pub struct Prefetcher<T> {
    rx: Receiver<T>,
    worker: Option<JoinHandle<()>>,
}

impl<T: Send + 'static> Prefetcher<T> {
    pub fn spawn<F>(capacity: usize, count: usize, make: F) -> Self
    where
        F: Fn(usize) -> T + Send + 'static,
    {
        let (tx, rx) = sync_channel(capacity.max(1));
        let worker = std::thread::spawn(move || {
            for i in 0..count {
                if tx.send(make(i)).is_err() {
                    break;
                }
            }
        });
        Prefetcher {
            rx,
            worker: Some(worker),
        }
    }
}

impl<T> Iterator for Prefetcher<T> {
    type Item = T;

    fn next(&mut self) -> Option<T> {
        self.rx.recv().ok()
    }
}

impl<T> Drop for Prefetcher<T> {
    fn drop(&mut self) {
        // Unblock a producer waiting on a full queue before joining.
        let (_, dummy) = sync_channel(0);
        drop(std::mem::replace(&mut self.rx, dummy));
        if let Some(w) = self.worker.take() {
            let _ = w.join();
        }
    }
}
