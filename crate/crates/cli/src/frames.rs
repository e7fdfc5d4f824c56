//! Frame sequences on disk: PNG directories and the raw planar stream.
//!
//! Raw planar layout, all integers little-endian `u32`:
//!
//! ```text
//! width height frames
//! frame 0: R plane (height·width bytes), G plane, B plane
//! frame 1: ...
//! ```

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use vmat_core::datagen::{read_png, MANIFEST_FILE};
use vmat_core::tensor::Tensor;

use crate::error::{CliError, CliResult};

pub const RAW_HEADER: usize = 12;

/// PNG files of `dir` in name order. Clip directories with a manifest contribute only `{prefix}_*.png`.
pub fn list_pngs(dir: &Path, prefix: Option<&str>) -> CliResult<Vec<PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|e| CliError::io(dir, e))?;
    let mut files = Vec::new();
    for e in entries {
        let e = e.map_err(|e| CliError::io(dir, e))?;
        let p = e.path();
        let name = p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        if !name.ends_with(".png") {
            continue;
        }
        if prefix.is_none_or(|pre| name.strip_prefix(pre).is_some_and(|rest| rest.starts_with('_'))) {
            files.push(p);
        }
    }
    files.sort();
    Ok(files)
}

/// Frame files of an input directory; synthetic clip directories are recognised by their manifest.
pub fn frame_files(dir: &Path) -> CliResult<Vec<PathBuf>> {
    let prefix = dir.join(MANIFEST_FILE).exists().then_some("frames");
    let files = list_pngs(dir, prefix)?;
    if files.is_empty() {
        return Err(CliError::usage(format!("{}: no PNG frames found", dir.display())));
    }
    Ok(files)
}

/// Stacks equally sized `C×H×W` planes into `T×C×H×W`.
pub fn stack(planes: &[Tensor<f32>], what: &Path) -> CliResult<Tensor<f32>> {
    let first = planes.first().ok_or_else(|| CliError::usage(format!("{}: empty sequence", what.display())))?;
    let d = first.dims().to_vec();
    let mut data = Vec::with_capacity(planes.len() * first.numel());
    for (i, p) in planes.iter().enumerate() {
        if p.dims() != &d[..] {
            return Err(CliError::usage(format!(
                "{}: frame {i} has extents {:?}, frame 0 has {d:?}",
                what.display(),
                p.dims()
            )));
        }
        data.extend_from_slice(p.data());
    }
    Ok(Tensor::from_vec(vec![planes.len(), d[0], d[1], d[2]], data)?)
}

fn to_rgb(t: Tensor<f32>) -> CliResult<Tensor<f32>> {
    if t.dims()[0] == 3 {
        return Ok(t);
    }
    let d = t.dims().to_vec();
    Ok(Tensor::from_vec(vec![3, d[1], d[2]], t.data().repeat(3))?)
}

fn to_grey(t: Tensor<f32>) -> CliResult<Tensor<f32>> {
    let d = t.dims().to_vec();
    if d[0] == 1 {
        return Ok(t);
    }
    let hw = d[1] * d[2];
    let v = t.data();
    Ok(Tensor::from_vec(vec![1, d[1], d[2]], (0..hw).map(|i| (v[i] + v[hw + i] + v[2 * hw + i]) / 3.0).collect())?)
}

/// Reads PNG files as `T×3×H×W` (rgb) or `T×1×H×W` (grey).
pub fn read_sequence(files: &[PathBuf], rgb: bool, what: &Path) -> CliResult<Tensor<f32>> {
    let planes = files
        .iter()
        .map(|f| {
            let t = read_png(f)?;
            if rgb {
                to_rgb(t)
            } else {
                to_grey(t)
            }
        })
        .collect::<CliResult<Vec<_>>>()?;
    stack(&planes, what)
}

/// A PNG directory, a single PNG, or a raw planar file (`-` for stdin), as `T×3×H×W`.
pub fn read_input(path: &Path) -> CliResult<Tensor<f32>> {
    if path.as_os_str() == "-" {
        let mut buf = Vec::new();
        std::io::stdin().read_to_end(&mut buf).map_err(|e| CliError::io("<stdin>", e))?;
        return decode_raw(&buf, path);
    }
    if path.is_dir() {
        return read_sequence(&frame_files(path)?, true, path);
    }
    if path.extension().is_some_and(|e| e == "png") {
        return read_sequence(&[path.to_path_buf()], true, path);
    }
    let buf = fs::read(path).map_err(|e| CliError::io(path, e))?;
    decode_raw(&buf, path)
}

pub fn decode_raw(buf: &[u8], what: &Path) -> CliResult<Tensor<f32>> {
    if buf.len() < RAW_HEADER {
        return Err(CliError::usage(format!("{}: raw stream shorter than its header", what.display())));
    }
    let word = |i: usize| u32::from_le_bytes(buf[4 * i..4 * i + 4].try_into().expect("4 bytes")) as usize;
    let (w, h, t) = (word(0), word(1), word(2));
    let per = 3 * h * w;
    if w == 0 || h == 0 || t == 0 {
        return Err(CliError::usage(format!("{}: raw header {w}x{h}x{t} has a zero extent", what.display())));
    }
    let body = &buf[RAW_HEADER..];
    if body.len() != per * t {
        return Err(CliError::usage(format!(
            "{}: raw header promises {t} frames of {w}x{h} ({} bytes), found {} bytes",
            what.display(),
            per * t,
            body.len()
        )));
    }
    let data = body.iter().map(|&b| b as f32 / 255.0).collect();
    Ok(Tensor::from_vec(vec![t, 3, h, w], data)?)
}

/// Raw planar bytes of a `T×3×H×W` sequence, quantised with `round(v·255)`.
pub fn encode_raw(frames: &Tensor<f32>) -> CliResult<Vec<u8>> {
    let (t, c, h, w) = frames.nchw()?;
    if c != 3 {
        return Err(CliError::usage("raw stream needs three channels"));
    }
    let mut out = Vec::with_capacity(RAW_HEADER + frames.numel());
    for v in [w, h, t] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    out.extend(frames.data().iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    Ok(out)
}

pub fn write_raw(path: &Path, frames: &Tensor<f32>) -> CliResult<()> {
    let bytes = encode_raw(frames)?;
    let mut f = fs::File::create(path).map_err(|e| CliError::io(path, e))?;
    f.write_all(&bytes).map_err(|e| CliError::io(path, e))
}

/// Frame `i` of a `T×C×H×W` sequence as `C×H×W`.
pub fn frame(seq: &Tensor<f32>, i: usize) -> CliResult<Tensor<f32>> {
    let d = seq.dims();
    let per = d[1] * d[2] * d[3];
    Ok(Tensor::from_vec(vec![d[1], d[2], d[3]], seq.data()[i * per..(i + 1) * per].to_vec())?)
}

/// Edge-replicates `T×C×H×W` up to `ph×pw`.
pub fn pad_edge(seq: &Tensor<f32>, ph: usize, pw: usize) -> CliResult<Tensor<f32>> {
    let (t, c, h, w) = seq.nchw()?;
    if (ph, pw) == (h, w) {
        return Ok(seq.clone());
    }
    let src = seq.data();
    let mut out = Vec::with_capacity(t * c * ph * pw);
    for plane in src.chunks(h * w) {
        for y in 0..ph {
            let row = &plane[y.min(h - 1) * w..][..w];
            out.extend((0..pw).map(|x| row[x.min(w - 1)]));
        }
    }
    Ok(Tensor::from_vec(vec![t, c, ph, pw], out)?)
}

/// Top-left `h×w` window of `N×C×H×W`.
pub fn crop(seq: &Tensor<f32>, h: usize, w: usize) -> CliResult<Tensor<f32>> {
    let (n, c, sh, sw) = seq.nchw()?;
    if (sh, sw) == (h, w) {
        return Ok(seq.clone());
    }
    let mut out = Vec::with_capacity(n * c * h * w);
    for plane in seq.data().chunks(sh * sw) {
        for y in 0..h {
            out.extend_from_slice(&plane[y * sw..y * sw + w]);
        }
    }
    Ok(Tensor::from_vec(vec![n, c, h, w], out)?)
}

pub fn padded_extent(x: usize) -> usize {
    x.div_ceil(16) * 16
}
