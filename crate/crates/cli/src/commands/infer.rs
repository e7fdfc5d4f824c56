use std::path::{Path, PathBuf};

use rayon::prelude::*;
use vmat_core::datagen::{composite, write_png, write_png16};
use vmat_core::network::{ForwardOptions, Model, RecurrentState};
use vmat_core::tensor::Tensor;

use super::{create_dir, load_model, refiner, relative};
use crate::error::{CliError, CliResult};
use crate::frames::{crop, frame, frame_files, pad_edge, padded_extent, read_input, read_sequence};
use crate::manifest::RunManifest;
use crate::InferArgs;

/// Alpha `T×1×H×W` and foreground `T×3×H×W` of one sequence.
pub struct Matte {
    pub alpha: Tensor<f32>,
    pub foreground: Tensor<f32>,
}

/// Runs a `T×3×H×W` sequence through `model`, either one frame at a time or `chunk` frames per pass.
pub fn matte_sequence(model: &Model<f32>, seq: &Tensor<f32>, opts: &ForwardOptions, chunk: Option<usize>) -> CliResult<Matte> {
    let (t, _, h, w) = seq.nchw()?;
    let step = chunk.unwrap_or(t).clamp(1, t);
    let mut state = RecurrentState::fresh();
    let (mut alpha, mut fg) = (Vec::with_capacity(t * h * w), Vec::with_capacity(3 * t * h * w));
    let per = 3 * h * w;
    let mut start = 0;
    while start < t {
        let n = step.min(t - start);
        let window = Tensor::from_vec(vec![1, n, 3, h, w], seq.data()[start * per..(start + n) * per].to_vec())?;
        let (pred, next) = model.infer(&window, Some(&state), opts)?;
        alpha.extend_from_slice(pred.alpha.data());
        fg.extend_from_slice(pred.foreground.data());
        state = next;
        start += n;
    }
    Ok(Matte {
        alpha: Tensor::from_vec(vec![t, 1, h, w], alpha)?,
        foreground: Tensor::from_vec(vec![t, 3, h, w], fg)?,
    })
}

fn read_background(path: &Path, t: usize, h: usize, w: usize) -> CliResult<Tensor<f32>> {
    let seq = if path.is_dir() {
        read_sequence(&frame_files(path)?, true, path)?
    } else {
        read_sequence(&[path.to_path_buf()], true, path)?
    };
    let (n, _, bh, bw) = seq.nchw()?;
    if (bh, bw) != (h, w) {
        return Err(CliError::usage(format!(
            "{}: background is {bw}x{bh}, frames are {w}x{h}",
            path.display()
        )));
    }
    match n {
        1 => Ok(Tensor::from_vec(vec![t, 3, h, w], seq.data().repeat(t))?),
        n if n == t => Ok(seq),
        n => Err(CliError::usage(format!("{}: {n} background frames for {t} input frames", path.display()))),
    }
}

pub fn run(a: &InferArgs) -> CliResult<()> {
    let refiner = refiner(a.dgf, a.downsample)?;
    if a.chunk == Some(0) {
        return Err(CliError::usage("--chunk must be positive"));
    }
    let model = load_model(&a.checkpoint)?;
    let seq = read_input(&a.input)?;
    let (t, _, h, w) = seq.nchw()?;
    let (ph, pw) = (padded_extent(h), padded_extent(w));
    if (ph, pw) != (h, w) {
        eprintln!("notice: {w}x{h} is not a multiple of 16, padding to {pw}x{ph} and cropping the outputs back");
    }
    let background = a.background.as_deref().map(|p| read_background(p, t, h, w)).transpose()?;

    let opts = ForwardOptions {
        downsample: a.downsample,
        refiner,
    };
    let chunk = if a.streaming.on() { Some(1) } else { a.chunk };
    let m = matte_sequence(&model, &pad_edge(&seq, ph, pw)?, &opts, chunk)?;
    let alpha = crop(&m.alpha, h, w)?;
    let fg = crop(&m.foreground, h, w)?;
    let comp = background.map(|bg| composite(&fg, &alpha, &bg)).transpose()?;

    create_dir(&a.output)?;
    let outputs = (0..t)
        .into_par_iter()
        .map(|i| {
            let mut written = Vec::new();
            let ap = a.output.join(format!("alpha_{i:04}.png"));
            if a.alpha_bits == 16 {
                write_png16(&ap, &frame(&alpha, i)?)?;
            } else {
                write_png(&ap, &frame(&alpha, i)?)?;
            }
            written.push(ap);
            let fp = a.output.join(format!("fg_{i:04}.png"));
            write_png(&fp, &frame(&fg, i)?)?;
            written.push(fp);
            if let Some(c) = &comp {
                let cp = a.output.join(format!("comp_{i:04}.png"));
                write_png(&cp, &frame(c, i)?)?;
                written.push(cp);
            }
            Ok(written)
        })
        .collect::<CliResult<Vec<Vec<PathBuf>>>>()?;

    let mut manifest = RunManifest::new("infer")
        .option("downsample", a.downsample)
        .option("refiner", refiner)
        .option("streaming", a.streaming)
        .option("chunk", chunk)
        .option("alpha_bits", a.alpha_bits)
        .option("frames", t)
        .option("extent", [w, h])
        .option("padded_extent", [pw, ph]);
    manifest.checkpoint = Some(a.checkpoint.clone());
    manifest.inputs.push(a.input.clone());
    manifest.inputs.extend(a.background.clone());
    manifest.outputs = outputs.into_iter().flatten().map(|p| relative(&p, &a.output)).collect();
    manifest.write(&a.output)?;
    println!("wrote {t} frames to {}", a.output.display());
    Ok(())
}
