use std::path::Path;

use vmat_core::datagen::{composite, write_png};
use vmat_core::tensor::Tensor;

use super::{create_dir, relative};
use crate::error::{CliError, CliResult};
use crate::frames::{frame, list_pngs, read_sequence};
use crate::manifest::RunManifest;
use crate::CompositeArgs;

/// A PNG file or a directory of PNG frames (`prefix_*.png` when several roles share it).
fn read_planes(path: &Path, prefixes: &[&str], rgb: bool) -> CliResult<Tensor<f32>> {
    if !path.is_dir() {
        return read_sequence(&[path.to_path_buf()], rgb, path);
    }
    for p in prefixes {
        let files = list_pngs(path, Some(p))?;
        if !files.is_empty() {
            return read_sequence(&files, rgb, path);
        }
    }
    let files = list_pngs(path, None)?;
    if files.is_empty() {
        return Err(CliError::usage(format!("{}: no PNG frames found", path.display())));
    }
    read_sequence(&files, rgb, path)
}

/// Repeats a single frame `t` times; other frame counts must equal `t`.
fn broadcast(x: Tensor<f32>, t: usize, what: &str) -> CliResult<Tensor<f32>> {
    let d = x.dims().to_vec();
    match d[0] {
        n if n == t => Ok(x),
        1 => Ok(Tensor::from_vec(vec![t, d[1], d[2], d[3]], x.data().repeat(t))?),
        n => Err(CliError::usage(format!("{what} has {n} frames, expected 1 or {t}"))),
    }
}

pub fn run(a: &CompositeArgs) -> CliResult<()> {
    let fg = read_planes(&a.fg, &["fg", "foreground"], true)?;
    let alpha = read_planes(&a.alpha, &["alpha", "pha"], false)?;
    let bg = read_planes(&a.bg, &["bg", "background"], true)?;
    let t = fg.dims()[0].max(alpha.dims()[0]).max(bg.dims()[0]);
    let extent = |x: &Tensor<f32>| (x.dims()[2], x.dims()[3]);
    for (name, x) in [("alpha", &alpha), ("background", &bg)] {
        if extent(x) != extent(&fg) {
            let ((h, w), (fh, fw)) = (extent(x), extent(&fg));
            return Err(CliError::usage(format!("{name} is {w}x{h}, foreground is {fw}x{fh}")));
        }
    }
    let fg = broadcast(fg, t, "foreground")?;
    let alpha = broadcast(alpha, t, "alpha")?;
    let bg = broadcast(bg, t, "background")?;
    let comp = composite(&fg, &alpha, &bg)?;

    create_dir(&a.out)?;
    let mut manifest = RunManifest::new("composite").option("frames", t);
    manifest.inputs = vec![a.fg.clone(), a.alpha.clone(), a.bg.clone()];
    for i in 0..t {
        let p = a.out.join(format!("comp_{i:04}.png"));
        write_png(&p, &frame(&comp, i)?)?;
        manifest.outputs.push(relative(&p, &a.out));
    }
    manifest.write(&a.out)?;
    println!("wrote {t} composites to {}", a.out.display());
    Ok(())
}
