//! Procedural scenes: a feathered figure with hair-like strands moving over a textured, panning background.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::ClipSample;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

type Rgb = [f32; 3];

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Smoothly interpolated lattice noise in `[0, 1]` over the whole plane.
fn value_noise(seed: u64, x: f32, y: f32) -> f32 {
    let lattice = |ix: i64, iy: i64| {
        let h = splitmix(seed ^ splitmix(ix as u64 ^ (iy as u64).rotate_left(29)));
        (h >> 40) as f32 / (1u64 << 24) as f32
    };
    let (x0, y0) = (x.floor(), y.floor());
    let (fx, fy) = (x - x0, y - y0);
    let (sx, sy) = (fx * fx * (3.0 - 2.0 * fx), fy * fy * (3.0 - 2.0 * fy));
    let (ix, iy) = (x0 as i64, y0 as i64);
    let top = lattice(ix, iy) * (1.0 - sx) + lattice(ix + 1, iy) * sx;
    let bot = lattice(ix, iy + 1) * (1.0 - sx) + lattice(ix + 1, iy + 1) * sx;
    top * (1.0 - sy) + bot * sy
}

fn random_color(rng: &mut ChaCha8Rng) -> Rgb {
    [rng.gen_range(0.05..0.95), rng.gen_range(0.05..0.95), rng.gen_range(0.05..0.95)]
}

fn lerp(a: Rgb, b: Rgb, t: f32) -> Rgb {
    [a[0] + (b[0] - a[0]) * t, a[1] + (b[1] - a[1]) * t, a[2] + (b[2] - a[2]) * t]
}

struct Blob {
    center: (f32, f32),
    velocity: (f32, f32),
    radius: f32,
    color: Rgb,
}

struct Background {
    noise_seed: u64,
    colors: (Rgb, Rgb),
    direction: (f32, f32),
    pan: (f32, f32),
    scale: f32,
    blobs: Vec<Blob>,
}

impl Background {
    fn new(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Self {
        let theta: f32 = rng.gen_range(0.0..std::f32::consts::TAU);
        let size = h.min(w) as f32;
        let blobs = (0..rng.gen_range(2..5))
            .map(|_| Blob {
                center: (rng.gen_range(0.0..w as f32), rng.gen_range(0.0..h as f32)),
                velocity: (rng.gen_range(-1.5..1.5), rng.gen_range(-1.0..1.0)),
                radius: rng.gen_range(0.08..0.2) * size,
                color: random_color(rng),
            })
            .collect();
        Background {
            noise_seed: rng.gen(),
            colors: (random_color(rng), random_color(rng)),
            direction: (theta.cos(), theta.sin()),
            pan: (rng.gen_range(-1.0..1.0), rng.gen_range(-0.5..0.5)),
            scale: size / rng.gen_range(3.0..6.0),
            blobs,
        }
    }

    fn pixel(&self, x: f32, y: f32, t: f32, h: usize, w: usize) -> Rgb {
        let (px, py) = (x + self.pan.0 * t, y + self.pan.1 * t);
        let g = ((px / w as f32 - 0.5) * self.direction.0 + (py / h as f32 - 0.5) * self.direction.1 + 0.5).clamp(0.0, 1.0);
        let mut c = lerp(self.colors.0, self.colors.1, g);
        let n = 0.65 * value_noise(self.noise_seed, px / self.scale, py / self.scale)
            + 0.35 * value_noise(self.noise_seed ^ 1, 2.0 * px / self.scale, 2.0 * py / self.scale);
        for v in &mut c {
            *v = (*v + 0.3 * (n - 0.5)).clamp(0.0, 1.0);
        }
        for b in &self.blobs {
            let (bx, by) = (b.center.0 + b.velocity.0 * t, b.center.1 + b.velocity.1 * t);
            let d = ((x - bx).powi(2) + (y - by).powi(2)).sqrt() - b.radius;
            let cover = (0.5 - d).clamp(0.0, 1.0);
            c = lerp(c, b.color, cover);
        }
        c
    }
}

struct Strand {
    /// Polyline relative to the figure anchor.
    points: Vec<(f32, f32)>,
    width: f32,
    opacity: f32,
}

struct Figure {
    anchor: (f32, f32),
    velocity: (f32, f32),
    body: (f32, f32),
    head: f32,
    feather: f32,
    colors: (Rgb, Rgb),
    hair: Rgb,
    strands: Vec<Strand>,
    texture_seed: u64,
}

fn soft_ellipse(dx: f32, dy: f32, rx: f32, ry: f32, feather: f32) -> f32 {
    let r = ((dx / rx).powi(2) + (dy / ry).powi(2)).sqrt();
    let d = (r - 1.0) * rx.min(ry);
    (0.5 - d / feather).clamp(0.0, 1.0)
}

fn segment_distance(p: (f32, f32), a: (f32, f32), b: (f32, f32)) -> f32 {
    let (vx, vy) = (b.0 - a.0, b.1 - a.1);
    let len2 = vx * vx + vy * vy;
    let t = if len2 > 0.0 {
        (((p.0 - a.0) * vx + (p.1 - a.1) * vy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    ((p.0 - a.0 - t * vx).powi(2) + (p.1 - a.1 - t * vy).powi(2)).sqrt()
}

impl Figure {
    fn new(rng: &mut ChaCha8Rng, h: usize, w: usize, frames: usize) -> Self {
        let (hf, wf) = (h as f32, w as f32);
        let body = (rng.gen_range(0.12..0.2) * wf, rng.gen_range(0.22..0.32) * hf);
        let head = rng.gen_range(0.45..0.6) * body.0;
        // Travel across a good part of the frame so background is revealed behind the figure.
        let span = rng.gen_range(0.25..0.45) * wf;
        let dir = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
        let per_frame = if frames > 1 { span / (frames - 1) as f32 } else { 0.0 };
        let start_x = wf / 2.0 - dir * span / 2.0 + rng.gen_range(-0.05..0.05) * wf;
        let anchor = (start_x, hf * rng.gen_range(0.55..0.65));
        let mut strands = Vec::new();
        for _ in 0..rng.gen_range(4..9) {
            let angle: f32 = rng.gen_range(-2.6..-0.5);
            let len = rng.gen_range(0.08..0.2) * hf;
            let root = (
                head * 0.9 * angle.cos(),
                -body.1 - head * 0.8 + head * 0.9 * angle.sin(),
            );
            let wiggle = rng.gen_range(0.5..2.0);
            let phase = rng.gen_range(0.0..std::f32::consts::TAU);
            let points = (0..=6)
                .map(|k| {
                    let s = k as f32 / 6.0;
                    let off = wiggle * (phase + 4.0 * s).sin();
                    (
                        root.0 + s * len * angle.cos() - off * angle.sin(),
                        root.1 + s * len * angle.sin() + off * angle.cos(),
                    )
                })
                .collect();
            strands.push(Strand {
                points,
                width: rng.gen_range(0.5..1.1),
                opacity: rng.gen_range(0.4..0.9),
            });
        }
        Figure {
            anchor,
            velocity: (dir * per_frame, rng.gen_range(-0.3..0.3)),
            body,
            head,
            feather: rng.gen_range(1.0..3.0),
            colors: (random_color(rng), random_color(rng)),
            hair: random_color(rng),
            strands,
            texture_seed: rng.gen(),
        }
    }

    /// `(foreground colour, alpha)` at a pixel of frame `t`.
    fn pixel(&self, x: f32, y: f32, t: f32) -> (Rgb, f32) {
        let (ax, ay) = (self.anchor.0 + self.velocity.0 * t, self.anchor.1 + self.velocity.1 * t);
        let (dx, dy) = (x - ax, y - ay);
        let body = soft_ellipse(dx, dy, self.body.0, self.body.1, self.feather);
        let head = soft_ellipse(dx, dy + self.body.1 + self.head * 0.8, self.head, self.head * 1.15, self.feather);
        let mut hair = 0.0f32;
        for s in &self.strands {
            let d = s
                .points
                .windows(2)
                .map(|p| segment_distance((dx, dy), p[0], p[1]))
                .fold(f32::INFINITY, f32::min);
            let a = s.opacity * (1.0 - d / s.width).clamp(0.0, 1.0);
            hair = 1.0 - (1.0 - hair) * (1.0 - a);
        }
        let solid = 1.0 - (1.0 - body) * (1.0 - head);
        let alpha = 1.0 - (1.0 - solid) * (1.0 - hair);
        let grad = ((dy / (2.0 * self.body.1)) + 0.5).clamp(0.0, 1.0);
        let tex = value_noise(self.texture_seed, dx / 3.0, dy / 3.0) - 0.5;
        let mut skin = lerp(self.colors.0, self.colors.1, grad);
        for v in &mut skin {
            *v = (*v + 0.2 * tex).clamp(0.0, 1.0);
        }
        let hair_share = if hair > 0.0 { hair / (hair + solid + 1e-6) } else { 0.0 };
        (lerp(skin, self.hair, hair_share), alpha)
    }
}

fn check_extent(h: usize, w: usize) -> Result<()> {
    if h == 0 || w == 0 || h % 16 != 0 || w % 16 != 0 {
        return Err(Error::Resolution(format!("synthetic extents must be positive multiples of 16, got {h}×{w}")));
    }
    Ok(())
}

/// Layers `(fg, alpha, bg)` of one scene.
fn render(seed: u64, frames: usize, h: usize, w: usize) -> Result<(Tensor<f32>, Tensor<f32>, Tensor<f32>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bg_model = Background::new(&mut rng, h, w);
    let figure = Figure::new(&mut rng, h, w, frames);
    let hw = h * w;
    let mut fg = vec![0.0f32; frames * 3 * hw];
    let mut alpha = vec![0.0f32; frames * hw];
    let mut bg = vec![0.0f32; frames * 3 * hw];
    for t in 0..frames {
        for y in 0..h {
            for x in 0..w {
                let (fx, fy, ft) = (x as f32, y as f32, t as f32);
                let (f, a) = figure.pixel(fx, fy, ft);
                let b = bg_model.pixel(fx, fy, ft, h, w);
                let px = y * w + x;
                alpha[t * hw + px] = a;
                for c in 0..3 {
                    fg[(t * 3 + c) * hw + px] = f[c];
                    bg[(t * 3 + c) * hw + px] = b[c];
                }
            }
        }
    }
    Ok((
        Tensor::from_vec(vec![frames, 3, h, w], fg)?,
        Tensor::from_vec(vec![frames, 1, h, w], alpha)?,
        Tensor::from_vec(vec![frames, 3, h, w], bg)?,
    ))
}

/// A deterministic matting clip of `frames` frames at `h×w` (multiples of 16).
pub fn synth_matting_clip(seed: u64, frames: usize, h: usize, w: usize) -> Result<ClipSample> {
    check_extent(h, w)?;
    if frames == 0 {
        return Err(Error::Param("a clip needs at least one frame".into()));
    }
    let (fg, alpha, bg) = render(seed, frames, h, w)?;
    ClipSample::from_layers(fg, alpha, bg)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SegmentationSpec {
    pub video: bool,
    /// Ignored for image samples, which always have one frame.
    pub frames: usize,
    pub height: usize,
    pub width: usize,
}

/// A segmentation sample whose mask is the scene's alpha thresholded at 0.5.
pub fn synth_segmentation_sample(seed: u64, spec: SegmentationSpec) -> Result<ClipSample> {
    check_extent(spec.height, spec.width)?;
    let frames = if spec.video { spec.frames.max(1) } else { 1 };
    let (fg, alpha, bg) = render(seed ^ 0x5E6_0000, frames, spec.height, spec.width)?;
    let image = super::composite(&fg, &alpha, &bg)?;
    ClipSample::segmentation(image, &alpha, spec.video)
}
