//! Clip directories: one 8-bit PNG per frame and plane plus `manifest.json`.
//!
//! ```text
//! clip/
//!   manifest.json
//!   frames_0000.png  alpha_0000.png  foreground_0000.png  background_0000.png  seg_0000.png
//!   frames_0001.png  ...
//! ```
//!
//! `manifest.json` lists the frame count, extents, sample kind and, for every
//! plane, its role, file prefix and channel count (1 = grey, 3 = RGB).

use std::fs;
use std::path::Path;

use image::{GrayImage, ImageBuffer, Luma, RgbImage};
use serde::{Deserialize, Serialize};

use super::{ClipSample, SampleKind};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MANIFEST_FILE: &str = "manifest.json";
const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlaneEntry {
    pub role: String,
    pub prefix: String,
    pub channels: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipManifest {
    pub version: u32,
    pub kind: SampleKind,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub planes: Vec<PlaneEntry>,
}

fn image_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Image {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

/// Reads an 8- or 16-bit PNG as `C×H×W` in `[0, 1]`; grey images give `C = 1`, everything else `C = 3`.
pub fn read_png(path: &Path) -> Result<Tensor<f32>> {
    let img = image::open(path).map_err(|e| image_err(path, e))?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let deep = img.color().bytes_per_pixel() / img.color().channel_count() > 1;
    if deep && !img.color().has_color() {
        let g = img.to_luma16();
        return Tensor::from_vec(vec![1, h, w], g.pixels().map(|p| p[0] as f32 / 65535.0).collect());
    }
    if deep {
        let rgb = img.to_rgb16();
        let mut data = vec![0.0f32; 3 * h * w];
        for (i, p) in rgb.pixels().enumerate() {
            for c in 0..3 {
                data[c * h * w + i] = p[c] as f32 / 65535.0;
            }
        }
        return Tensor::from_vec(vec![3, h, w], data);
    }
    if img.color().has_color() {
        let rgb = img.to_rgb8();
        let mut data = vec![0.0f32; 3 * h * w];
        for (i, p) in rgb.pixels().enumerate() {
            for c in 0..3 {
                data[c * h * w + i] = p[c] as f32 / 255.0;
            }
        }
        Tensor::from_vec(vec![3, h, w], data)
    } else {
        let g = img.to_luma8();
        Tensor::from_vec(vec![1, h, w], g.pixels().map(|p| p[0] as f32 / 255.0).collect())
    }
}

fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Writes a `C×H×W` plane (`C` of 1 or 3) as 8-bit PNG.
pub fn write_png(path: &Path, t: &Tensor<f32>) -> Result<()> {
    let d = t.dims();
    if d.len() != 3 || !(d[0] == 1 || d[0] == 3) {
        return Err(Error::shape("write_png (1 or 3 channels)", d, &[3, 0, 0]));
    }
    let (c, h, w) = (d[0], d[1], d[2]);
    let data = t.data();
    let result = if c == 1 {
        GrayImage::from_fn(w as u32, h as u32, |x, y| image::Luma([quantize(data[y as usize * w + x as usize])]))
            .save(path)
    } else {
        RgbImage::from_fn(w as u32, h as u32, |x, y| {
            let i = y as usize * w + x as usize;
            image::Rgb([quantize(data[i]), quantize(data[h * w + i]), quantize(data[2 * h * w + i])])
        })
        .save(path)
    };
    result.map_err(|e| image_err(path, e))
}

/// Writes a `1×H×W` plane as 16-bit grey PNG, `round(v·65535)`.
pub fn write_png16(path: &Path, t: &Tensor<f32>) -> Result<()> {
    let d = t.dims();
    if d.len() != 3 || d[0] != 1 {
        return Err(Error::shape("write_png16 (1 channel)", d, &[1, 0, 0]));
    }
    let (h, w) = (d[1], d[2]);
    let data = t.data();
    let img: ImageBuffer<Luma<u16>, Vec<u16>> = ImageBuffer::from_fn(w as u32, h as u32, |x, y| {
        Luma([(data[y as usize * w + x as usize].clamp(0.0, 1.0) * 65535.0).round() as u16])
    });
    img.save(path).map_err(|e| image_err(path, e))
}

fn planes(clip: &ClipSample) -> Vec<(&'static str, &Tensor<f32>)> {
    let mut v = vec![("frames", &clip.frames), ("alpha", &clip.alpha), ("foreground", &clip.foreground)];
    if let Some(b) = &clip.background {
        v.push(("background", b));
    }
    v.push(("seg", &clip.seg));
    v
}

fn frame_of(t: &Tensor<f32>, i: usize) -> Result<Tensor<f32>> {
    let d = t.dims();
    let per = d[1] * d[2] * d[3];
    Tensor::from_vec(vec![d[1], d[2], d[3]], t.data()[i * per..(i + 1) * per].to_vec())
}

/// Writes every plane of `clip` into `dir` (created if needed) with its manifest.
pub fn export_clip(clip: &ClipSample, dir: &Path) -> Result<ClipManifest> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let (h, w) = clip.extent();
    let mut entries = Vec::new();
    for (role, t) in planes(clip) {
        for i in 0..clip.len() {
            write_png(&dir.join(format!("{role}_{i:04}.png")), &frame_of(t, i)?)?;
        }
        entries.push(PlaneEntry {
            role: role.to_string(),
            prefix: role.to_string(),
            channels: t.dims()[1],
        });
    }
    let manifest = ClipManifest {
        version: MANIFEST_VERSION,
        kind: clip.kind,
        frames: clip.len(),
        height: h,
        width: w,
        planes: entries,
    };
    let path = dir.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Format(e.to_string()))?;
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

/// Reads a clip written by [`export_clip`]. Values carry 8-bit quantisation.
pub fn import_clip(dir: &Path) -> Result<ClipSample> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let m: ClipManifest = serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    if m.version != MANIFEST_VERSION {
        return Err(Error::Format(format!("manifest version {} unsupported", m.version)));
    }
    let load = |role: &str| -> Result<Option<Tensor<f32>>> {
        let Some(p) = m.planes.iter().find(|p| p.role == role) else {
            return Ok(None);
        };
        let mut data = Vec::with_capacity(m.frames * p.channels * m.height * m.width);
        for i in 0..m.frames {
            let f = dir.join(format!("{}_{i:04}.png", p.prefix));
            let t = read_png(&f)?;
            let t = match (t.dims()[0], p.channels) {
                (a, b) if a == b => t,
                (3, 1) => Tensor::from_vec(vec![1, m.height, m.width], t.data()[..m.height * m.width].to_vec())?,
                (1, 3) => Tensor::from_vec(vec![3, m.height, m.width], t.data().repeat(3))?,
                (a, _) => return Err(Error::Format(format!("{}: {a} channels", f.display()))),
            };
            if t.dims()[1..] != [m.height, m.width] {
                return Err(Error::Format(format!("{}: extents {:?} disagree with manifest", f.display(), t.dims())));
            }
            data.extend_from_slice(t.data());
        }
        Ok(Some(Tensor::from_vec(vec![m.frames, p.channels, m.height, m.width], data)?))
    };
    let need = |role: &str| load(role)?.ok_or_else(|| Error::Format(format!("manifest lacks the `{role}` plane")));
    let frames = need("frames")?;
    let alpha = need("alpha")?;
    let foreground = load("foreground")?.unwrap_or_else(|| frames.clone());
    let seg = load("seg")?.unwrap_or_else(|| alpha.map(|a| if a > 0.5 { 1.0 } else { 0.0 }));
    Ok(ClipSample {
        frames,
        alpha,
        foreground,
        background: load("background")?,
        seg,
        kind: m.kind,
    })
}
