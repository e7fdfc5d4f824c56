//! Continuous motion/appearance augmentation and frame-index (temporal) augmentation.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{derive_seed, ClipSample};
use crate::error::{Error, Result};
use crate::tensor::kernels::gather_rows;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Easing {
    #[default]
    Linear,
    EaseInQuad,
    EaseOutQuad,
    Sine,
}

impl Easing {
    pub const ALL: [Easing; 4] = [Easing::Linear, Easing::EaseInQuad, Easing::EaseOutQuad, Easing::Sine];

    /// Maps `[0, 1]` onto `[0, 1]` with fixed endpoints; inputs are clamped.
    pub fn apply(self, u: f64) -> f64 {
        let u = u.clamp(0.0, 1.0);
        match self {
            Easing::Linear => u,
            Easing::EaseInQuad => u * u,
            Easing::EaseOutQuad => u * (2.0 - u),
            Easing::Sine => 0.5 - 0.5 * (std::f64::consts::PI * u).cos(),
        }
    }
}

/// A property that moves from `start` to `end` over the clip.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ramp {
    pub start: f64,
    pub end: f64,
    #[serde(default)]
    pub easing: Easing,
}

impl Ramp {
    pub fn constant(v: f64) -> Self {
        Ramp {
            start: v,
            end: v,
            easing: Easing::Linear,
        }
    }

    pub fn new(start: f64, end: f64, easing: Easing) -> Self {
        Ramp { start, end, easing }
    }

    pub fn at(&self, u: f64) -> f64 {
        if self.start == self.end {
            return self.start;
        }
        self.start + (self.end - self.start) * self.easing.apply(u)
    }

    fn is_constant(&self, v: f64) -> bool {
        self.start == v && self.end == v
    }
}

/// Affine motion of one layer. Translation in pixels, rotation and shear in degrees, about the image centre.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayerMotion {
    pub translate_x: Ramp,
    pub translate_y: Ramp,
    pub scale: Ramp,
    pub rotate: Ramp,
    pub shear: Ramp,
}

impl Default for LayerMotion {
    fn default() -> Self {
        LayerMotion {
            translate_x: Ramp::constant(0.0),
            translate_y: Ramp::constant(0.0),
            scale: Ramp::constant(1.0),
            rotate: Ramp::constant(0.0),
            shear: Ramp::constant(0.0),
        }
    }
}

/// `(A, t)` with `p' = A·(p − c) + c + t`.
struct Affine {
    a: [f64; 4],
    t: [f64; 2],
}

impl LayerMotion {
    fn is_identity(&self) -> bool {
        self.translate_x.is_constant(0.0)
            && self.translate_y.is_constant(0.0)
            && self.scale.is_constant(1.0)
            && self.rotate.is_constant(0.0)
            && self.shear.is_constant(0.0)
    }

    fn at(&self, u: f64) -> Result<Affine> {
        let s = self.scale.at(u);
        let (sin, cos) = self.rotate.at(u).to_radians().sin_cos();
        let k = self.shear.at(u).to_radians().tan();
        // R · Shear · S
        let a = [cos * s, (cos * k - sin) * s, sin * s, (sin * k + cos) * s];
        let det = a[0] * a[3] - a[1] * a[2];
        if det.abs() < 1e-6 || !det.is_finite() {
            return Err(Error::Config(format!("degenerate affine motion (det {det:e})")));
        }
        Ok(Affine {
            a,
            t: [self.translate_x.at(u), self.translate_y.at(u)],
        })
    }

    fn uniform(rng: &mut impl Rng, strength: f64, extent: f64) -> Self {
        let mut ramp = |span: f64, neutral: f64| {
            let easing = Easing::ALL[rng.gen_range(0..4)];
            Ramp::new(
                neutral + rng.gen_range(-span..=span),
                neutral + rng.gen_range(-span..=span),
                easing,
            )
        };
        LayerMotion {
            translate_x: ramp(0.1 * extent * strength, 0.0),
            translate_y: ramp(0.1 * extent * strength, 0.0),
            scale: ramp(0.15 * strength, 1.0),
            rotate: ramp(10.0 * strength, 0.0),
            shear: ramp(5.0 * strength, 0.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Interp {
    #[default]
    Bilinear,
    /// Rounds source coordinates; exact for integer motion.
    Nearest,
}

/// Per-clip augmentation parameters. Neutral values leave the clip untouched.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotionAugmentConfig {
    pub foreground: LayerMotion,
    pub background: LayerMotion,
    /// Additive offset.
    pub brightness: Ramp,
    /// Factor about the luma.
    pub saturation: Ramp,
    /// Factor about mid-grey.
    pub contrast: Ramp,
    /// Rotation of the chroma plane, in turns.
    pub hue: Ramp,
    /// Standard deviation of zero-mean uniform pixel noise.
    pub noise: Ramp,
    /// Gaussian blur sigma in pixels.
    pub blur: Ramp,
    pub hflip: bool,
    pub grayscale: bool,
    pub sharpen: bool,
    pub interp: Interp,
    pub temporal: TemporalOps,
}

impl Default for MotionAugmentConfig {
    fn default() -> Self {
        MotionAugmentConfig {
            foreground: LayerMotion::default(),
            background: LayerMotion::default(),
            brightness: Ramp::constant(0.0),
            saturation: Ramp::constant(1.0),
            contrast: Ramp::constant(1.0),
            hue: Ramp::constant(0.0),
            noise: Ramp::constant(0.0),
            blur: Ramp::constant(0.0),
            hflip: false,
            grayscale: false,
            sharpen: false,
            interp: Interp::Bilinear,
            temporal: TemporalOps::default(),
        }
    }
}

impl MotionAugmentConfig {
    pub fn is_identity(&self) -> bool {
        self.foreground.is_identity()
            && self.background.is_identity()
            && self.brightness.is_constant(0.0)
            && self.saturation.is_constant(1.0)
            && self.contrast.is_constant(1.0)
            && self.hue.is_constant(0.0)
            && self.noise.is_constant(0.0)
            && self.blur.is_constant(0.0)
            && !self.hflip
            && !self.grayscale
            && !self.sharpen
    }

    /// Draws a random configuration. `strength` scales every range; `affine_only` disables appearance ops.
    pub fn random(rng: &mut impl Rng, extent: (usize, usize), strength: f64, affine_only: bool) -> Self {
        let size = extent.0.min(extent.1) as f64;
        let mut cfg = MotionAugmentConfig {
            foreground: LayerMotion::uniform(rng, strength, size),
            background: LayerMotion::uniform(rng, strength, size),
            ..Default::default()
        };
        if affine_only {
            return cfg;
        }
        let mut ramp = |span: f64, neutral: f64, lo: f64| {
            let easing = Easing::ALL[rng.gen_range(0..4)];
            let a = (neutral + rng.gen_range(-span..=span)).max(lo);
            let b = (neutral + rng.gen_range(-span..=span)).max(lo);
            Ramp::new(a, b, easing)
        };
        cfg.brightness = ramp(0.1 * strength, 0.0, -1.0);
        cfg.saturation = ramp(0.2 * strength, 1.0, 0.0);
        cfg.contrast = ramp(0.2 * strength, 1.0, 0.0);
        cfg.hue = ramp(0.05 * strength, 0.0, -1.0);
        cfg.noise = ramp(0.02 * strength, 0.01 * strength, 0.0);
        cfg.blur = ramp(0.5 * strength, 0.0, 0.0);
        cfg.hflip = rng.gen_bool(0.5);
        cfg.grayscale = rng.gen_bool(0.05 * strength.min(1.0));
        cfg.sharpen = rng.gen_bool(0.1 * strength.min(1.0));
        cfg
    }
}

#[derive(Clone, Copy, PartialEq)]
enum Border {
    Zero,
    Clamp,
}

/// Resamples every `h×w` plane of `planes` under `p' = A·(p − c) + c + t` (inverse mapped).
fn warp(planes: &[f32], h: usize, w: usize, m: &Affine, interp: Interp, border: Border) -> Vec<f32> {
    let [a, b, c, d] = m.a;
    let det = a * d - b * c;
    let inv = [d / det, -b / det, -c / det, a / det];
    let (cx, cy) = ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
    let mut out = vec![0.0f32; planes.len()];
    let fetch = |plane: &[f32], y: isize, x: isize| -> f32 {
        if y >= 0 && x >= 0 && (y as usize) < h && (x as usize) < w {
            plane[y as usize * w + x as usize]
        } else if border == Border::Clamp {
            plane[y.clamp(0, h as isize - 1) as usize * w + x.clamp(0, w as isize - 1) as usize]
        } else {
            0.0
        }
    };
    for (src, dst) in planes.chunks(h * w).zip(out.chunks_mut(h * w)) {
        for y in 0..h {
            for x in 0..w {
                let (px, py) = (x as f64 - cx - m.t[0], y as f64 - cy - m.t[1]);
                let sx = inv[0] * px + inv[1] * py + cx;
                let sy = inv[2] * px + inv[3] * py + cy;
                dst[y * w + x] = match interp {
                    Interp::Nearest => fetch(src, sy.round() as isize, sx.round() as isize),
                    Interp::Bilinear => {
                        let (x0, y0) = (sx.floor(), sy.floor());
                        let (fx, fy) = ((sx - x0) as f32, (sy - y0) as f32);
                        let (x0, y0) = (x0 as isize, y0 as isize);
                        let top = fetch(src, y0, x0) * (1.0 - fx) + fetch(src, y0, x0 + 1) * fx;
                        let bot = fetch(src, y0 + 1, x0) * (1.0 - fx) + fetch(src, y0 + 1, x0 + 1) * fx;
                        if fy == 0.0 {
                            top
                        } else {
                            top * (1.0 - fy) + bot * fy
                        }
                    }
                };
            }
        }
    }
    out
}

fn hflip(planes: &mut [f32], w: usize) {
    for row in planes.chunks_mut(w) {
        row.reverse();
    }
}

/// In-place colour ops on one `3×h×w` frame.
fn adjust_color(rgb: &mut [f32], hw: usize, brightness: f64, contrast: f64, saturation: f64, hue: f64) {
    let (r, rest) = rgb.split_at_mut(hw);
    let (g, b) = rest.split_at_mut(hw);
    let (sin, cos) = (hue * std::f64::consts::TAU).sin_cos();
    for i in 0..hw {
        let mut p = [r[i] as f64, g[i] as f64, b[i] as f64];
        if brightness != 0.0 {
            p.iter_mut().for_each(|v| *v += brightness);
        }
        if contrast != 1.0 {
            p.iter_mut().for_each(|v| *v = (*v - 0.5) * contrast + 0.5);
        }
        if saturation != 1.0 {
            let y = 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2];
            p.iter_mut().for_each(|v| *v = y + saturation * (*v - y));
        }
        if hue != 0.0 {
            let y = 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2];
            let ci = 0.596 * p[0] - 0.274 * p[1] - 0.322 * p[2];
            let cq = 0.211 * p[0] - 0.523 * p[1] + 0.312 * p[2];
            let (i2, q2) = (ci * cos - cq * sin, ci * sin + cq * cos);
            p = [
                y + 0.956 * i2 + 0.621 * q2,
                y - 0.272 * i2 - 0.647 * q2,
                y - 1.106 * i2 + 1.703 * q2,
            ];
        }
        r[i] = p[0].clamp(0.0, 1.0) as f32;
        g[i] = p[1].clamp(0.0, 1.0) as f32;
        b[i] = p[2].clamp(0.0, 1.0) as f32;
    }
}

fn gaussian_taps(sigma: f64) -> Vec<f32> {
    let r = (2.0 * sigma).ceil().max(1.0) as isize;
    let raw: Vec<f64> = (-r..=r).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = raw.iter().sum();
    raw.iter().map(|v| (v / s) as f32).collect()
}

/// Separable correlation of every plane with replicated borders.
fn separable(planes: &mut [f32], h: usize, w: usize, taps: &[f32]) {
    let r = (taps.len() / 2) as isize;
    let mut tmp = vec![0.0f32; h * w];
    for plane in planes.chunks_mut(h * w) {
        for y in 0..h {
            for x in 0..w {
                tmp[y * w + x] = taps
                    .iter()
                    .enumerate()
                    .map(|(k, t)| t * plane[y * w + (x as isize + k as isize - r).clamp(0, w as isize - 1) as usize])
                    .sum();
            }
        }
        for y in 0..h {
            for x in 0..w {
                plane[y * w + x] = taps
                    .iter()
                    .enumerate()
                    .map(|(k, t)| t * tmp[(y as isize + k as isize - r).clamp(0, h as isize - 1) as usize * w + x])
                    .sum();
            }
        }
    }
}

fn sharpen(planes: &mut [f32], h: usize, w: usize) {
    let mut blurred = planes.to_vec();
    separable(&mut blurred, h, w, &[0.25, 0.5, 0.25]);
    for (p, b) in planes.iter_mut().zip(&blurred) {
        *p = (*p + (*p - b)).clamp(0.0, 1.0);
    }
}

fn grayscale(rgb: &mut [f32], hw: usize) {
    for i in 0..hw {
        let y = 0.299 * rgb[i] + 0.587 * rgb[hw + i] + 0.114 * rgb[2 * hw + i];
        rgb[i] = y;
        rgb[hw + i] = y;
        rgb[2 * hw + i] = y;
    }
}

fn add_noise(planes: &mut [f32], std: f64, rng: &mut ChaCha8Rng) {
    let half = (3.0f64).sqrt() * std;
    for p in planes {
        *p = (*p as f64 + rng.gen_range(-half..=half)).clamp(0.0, 1.0) as f32;
    }
}

/// Frame-local processing of the colour layers and alpha.
struct FrameOps<'a> {
    cfg: &'a MotionAugmentConfig,
    h: usize,
    w: usize,
    u: f64,
}

impl FrameOps<'_> {
    fn color(&self, rgb: &mut [f32], rng: &mut ChaCha8Rng) {
        let (c, u, hw) = (self.cfg, self.u, self.h * self.w);
        for frame in rgb.chunks_mut(3 * hw) {
            let (br, ct, sa, hu) = (c.brightness.at(u), c.contrast.at(u), c.saturation.at(u), c.hue.at(u));
            if br != 0.0 || ct != 1.0 || sa != 1.0 || hu != 0.0 {
                adjust_color(frame, hw, br, ct, sa, hu);
            }
            self.blur(frame);
            let n = c.noise.at(u);
            if n > 0.0 {
                add_noise(frame, n, rng);
            }
            if c.grayscale {
                grayscale(frame, hw);
            }
            if c.sharpen {
                sharpen(frame, self.h, self.w);
            }
        }
    }

    fn blur(&self, planes: &mut [f32]) {
        let s = self.cfg.blur.at(self.u);
        if s >= 0.05 {
            separable(planes, self.h, self.w, &gaussian_taps(s));
        }
    }
}

fn frame_u(t: usize, frames: usize) -> f64 {
    if frames < 2 {
        0.0
    } else {
        t as f64 / (frames - 1) as f64
    }
}

/// Applies `cfg` to every frame and layer of `clip`. Labels follow the foreground geometry.
pub fn motion_augment(clip: &ClipSample, cfg: &MotionAugmentConfig, seed: u64) -> Result<ClipSample> {
    if cfg.is_identity() {
        return Ok(clip.clone());
    }
    let (t, _, h, w) = clip.frames.nchw()?;
    let hw = h * w;
    let fg_src = clip.foreground.data();
    let a_src = clip.alpha.data();
    let (mut fg, mut alpha) = (Vec::with_capacity(3 * t * hw), Vec::with_capacity(t * hw));
    let mut bg = Vec::with_capacity(3 * t * hw);
    for ti in 0..t {
        let u = frame_u(ti, t);
        let ops = FrameOps { cfg, h, w, u };
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 1, ti as u64));
        let geo = |planes: &[f32], motion: &LayerMotion, border| -> Result<Vec<f32>> {
            if motion.is_identity() {
                return Ok(planes.to_vec());
            }
            Ok(warp(planes, h, w, &motion.at(u)?, cfg.interp, border))
        };
        let mut f = geo(&fg_src[3 * ti * hw..3 * (ti + 1) * hw], &cfg.foreground, Border::Clamp)?;
        let mut a = geo(&a_src[ti * hw..(ti + 1) * hw], &cfg.foreground, Border::Zero)?;
        if cfg.hflip {
            hflip(&mut f, w);
            hflip(&mut a, w);
        }
        ops.color(&mut f, &mut rng);
        ops.blur(&mut a);
        fg.extend(f);
        alpha.extend(a);
        if let Some(b_src) = &clip.background {
            let mut b = geo(&b_src.data()[3 * ti * hw..3 * (ti + 1) * hw], &cfg.background, Border::Clamp)?;
            if cfg.hflip {
                hflip(&mut b, w);
            }
            ops.color(&mut b, &mut rng);
            bg.extend(b);
        }
    }
    let fg = Tensor::from_vec(vec![t, 3, h, w], fg)?;
    let alpha = Tensor::from_vec(vec![t, 1, h, w], alpha)?;
    if clip.background.is_some() {
        let bg = Tensor::from_vec(vec![t, 3, h, w], bg)?;
        let mut out = ClipSample::from_layers(fg, alpha, bg)?;
        out.kind = clip.kind;
        return Ok(out);
    }
    let mut out = ClipSample::segmentation(fg, &alpha, clip.kind != super::SampleKind::ImageSeg)?;
    out.kind = clip.kind;
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Pause {
    /// Position in the resampled sequence whose frame is held.
    pub at: usize,
    /// Extra copies inserted.
    pub length: usize,
}

/// Frame-index operations, applied in the order skip, speed, pause, length restore, reverse.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemporalOps {
    pub reverse: bool,
    pub speed: f64,
    pub pause: Option<Pause>,
    /// Frames dropped between kept frames.
    pub skip: usize,
    /// Output length; the input length when absent.
    pub length: Option<usize>,
}

impl Default for TemporalOps {
    fn default() -> Self {
        TemporalOps {
            reverse: false,
            speed: 1.0,
            pause: None,
            skip: 0,
            length: None,
        }
    }
}

impl TemporalOps {
    /// Random ops producing `length` frames from a clip of `available` frames.
    pub fn random(rng: &mut impl Rng, available: usize, length: usize) -> Self {
        let max_skip = if length > 1 { ((available.saturating_sub(1)) / (length - 1)).saturating_sub(1) } else { 0 };
        let skip = if max_skip > 0 && rng.gen_bool(0.2) { rng.gen_range(1..=max_skip) } else { 0 };
        TemporalOps {
            reverse: rng.gen_bool(0.5),
            speed: if rng.gen_bool(0.3) { rng.gen_range(0.5..1.5) } else { 1.0 },
            pause: rng
                .gen_bool(0.2)
                .then(|| Pause {
                    at: rng.gen_range(0..length.max(1)),
                    length: rng.gen_range(1..=length.max(2) / 2),
                }),
            skip,
            length: Some(length),
        }
    }

    /// Source frame index of every output frame.
    pub fn plan(&self, frames: usize) -> Result<Vec<usize>> {
        if frames < 2 {
            return Err(Error::Contract(format!("temporal augmentation needs at least 2 frames, got {frames}")));
        }
        if !(self.speed > 0.0 && self.speed.is_finite()) {
            return Err(Error::Param(format!("speed factor must be positive, got {}", self.speed)));
        }
        let target = self.length.unwrap_or(frames);
        if target == 0 {
            return Err(Error::Param("temporal output length must be positive".into()));
        }
        let kept: Vec<usize> = (0..frames).step_by(self.skip + 1).collect();
        if self.skip > 0 && kept.len() < target {
            return Err(Error::Contract(format!(
                "skipping {} of every {} frames leaves {} unique frames, {target} requested",
                self.skip,
                self.skip + 1,
                kept.len()
            )));
        }
        let mut idx: Vec<usize> = (0..)
            .map(|j| (j as f64 * self.speed).floor() as usize)
            .take_while(|&k| k < kept.len())
            .map(|k| kept[k])
            .collect();
        if let Some(p) = self.pause {
            let at = p.at.min(idx.len() - 1);
            let held = idx[at];
            idx.splice(at + 1..at + 1, std::iter::repeat_n(held, p.length));
        }
        if idx.len() >= target {
            idx.truncate(target);
        } else {
            let n = idx.len();
            idx = (0..target).map(|j| idx[j * n / target]).collect();
        }
        if self.reverse {
            idx.reverse();
        }
        Ok(idx)
    }
}

/// Re-indexes the frames and every label of `clip` by [`TemporalOps::plan`].
pub fn temporal_augment(clip: &ClipSample, ops: &TemporalOps) -> Result<ClipSample> {
    let idx = ops.plan(clip.len())?;
    Ok(ClipSample {
        frames: gather_rows(&clip.frames, &idx)?,
        alpha: gather_rows(&clip.alpha, &idx)?,
        foreground: gather_rows(&clip.foreground, &idx)?,
        background: clip.background.as_ref().map(|b| gather_rows(b, &idx)).transpose()?,
        seg: gather_rows(&clip.seg, &idx)?,
        kind: clip.kind,
    })
}
