use std::time::Instant;

use vmat_core::datagen::ClipSample;
use vmat_core::guided_filter::{DEFAULT_EPS, DEFAULT_RADIUS};
use vmat_core::metrics::{dtssd, grad_metric};
use vmat_core::network::{build_model, ForwardOptions, Model, Refiner};
use vmat_core::tensor::Tensor;
use vmat_core::trainer::ModelPreset;

use super::{load_model, refiner};
use crate::commands::infer::matte_sequence;
use crate::error::{CliError, CliResult};
use crate::BenchArgs;

#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    pub params: usize,
    pub macs: u64,
    pub frames: usize,
    pub seconds: f64,
    pub fps: f64,
}

/// Parses `WIDTHxHEIGHT`.
pub fn parse_resolution(s: &str) -> CliResult<(usize, usize)> {
    let bad = || CliError::usage(format!("--resolution expects WIDTHxHEIGHT, got `{s}`"));
    let (w, h) = s.split_once(['x', 'X']).ok_or_else(bad)?;
    let (w, h) = (w.trim().parse().map_err(|_| bad())?, h.trim().parse().map_err(|_| bad())?);
    if w == 0 || h == 0 {
        return Err(bad());
    }
    Ok((w, h))
}

/// Deterministic textured frame; cost does not depend on content.
fn bench_frame(h: usize, w: usize, k: usize) -> CliResult<Tensor<f32>> {
    let mut data = Vec::with_capacity(3 * h * w);
    for c in 0..3 {
        for y in 0..h {
            for x in 0..w {
                let v = ((x * (c + 1) + y * 3 + k * 5) % 97) as f32 / 96.0;
                data.push(v);
            }
        }
    }
    Ok(Tensor::from_vec(vec![1, 1, 3, h, w], data)?)
}

/// Streams `warmup + frames` frames with carried state and times the last `frames`.
pub fn bench(model: &Model<f32>, h: usize, w: usize, opts: &ForwardOptions, warmup: usize, frames: usize) -> CliResult<BenchReport> {
    if frames == 0 {
        return Err(CliError::usage("--frames must be positive"));
    }
    let inputs = (0..warmup + frames).map(|k| bench_frame(h, w, k)).collect::<CliResult<Vec<_>>>()?;
    let mut state = None;
    let mut start = Instant::now();
    for (k, f) in inputs.iter().enumerate() {
        if k == warmup {
            start = Instant::now();
        }
        let (_, next) = model.infer(f, state.as_ref(), opts)?;
        state = Some(next);
    }
    let seconds = start.elapsed().as_secs_f64();
    Ok(BenchReport {
        params: model.count_params(),
        macs: model.count_macs(h, w, opts.downsample, opts.refiner)?,
        frames,
        seconds,
        fps: frames as f64 / seconds.max(1e-12),
    })
}

pub fn run(a: &BenchArgs) -> CliResult<()> {
    let (w, h) = parse_resolution(&a.resolution)?;
    let refiner = refiner(a.dgf, a.downsample)?;
    let model = match &a.checkpoint {
        Some(p) => load_model(p)?,
        None => build_model(&ModelPreset::from(a.config).config(), 0)?,
    };
    let opts = ForwardOptions {
        downsample: a.downsample,
        refiner,
    };
    let report = match a.threads {
        Some(0) => return Err(CliError::usage("--threads must be positive")),
        Some(k) => rayon::ThreadPoolBuilder::new()
            .num_threads(k)
            .build()
            .map_err(|e| CliError::usage(format!("thread pool: {e}")))?
            .install(|| bench(&model, h, w, &opts, a.warmup, a.frames))?,
        None => bench(&model, h, w, &opts, a.warmup, a.frames)?,
    };
    let name = match a.checkpoint {
        Some(_) => "checkpoint",
        None => match a.config {
            crate::Preset::Tiny => "tiny",
            crate::Preset::Default => "default",
        },
    };
    println!("model\t{name}");
    println!("resolution\t{w}x{h}");
    println!("downsample\t{}", a.downsample);
    println!("refiner\t{}", refiner_name(refiner));
    println!("threads\t{}", a.threads.unwrap_or_else(rayon::current_num_threads));
    println!("params\t{}", report.params);
    println!("macs\t{}", report.macs);
    println!("frames\t{}", report.frames);
    println!("seconds\t{:.6}", report.seconds);
    println!("fps\t{:.3}", report.fps);
    Ok(())
}

pub fn refiner_name(r: Refiner) -> &'static str {
    match r {
        Refiner::Bilinear => "bilinear",
        Refiner::Deep => "dgf",
        Refiner::Fast { .. } => "fgf",
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefinerScore {
    pub refiner: &'static str,
    /// Mean over clips, scaled as in evaluation reports.
    pub grad: f64,
    pub dtssd: f64,
}

/// Scores the learned guided filter against the non-learned one on the same clips at downsample `s`.
pub fn compare_refiners(model: &Model<f32>, clips: &[ClipSample], s: f64) -> CliResult<Vec<RefinerScore>> {
    if clips.is_empty() {
        return Err(CliError::usage("refiner comparison needs at least one clip"));
    }
    let mut out = Vec::new();
    for refiner in [
        Refiner::Deep,
        Refiner::Fast {
            radius: DEFAULT_RADIUS,
            eps: DEFAULT_EPS,
        },
    ] {
        let opts = ForwardOptions { downsample: s, refiner };
        let (mut g, mut d) = (0.0, 0.0);
        for clip in clips {
            let m = matte_sequence(model, &clip.frames, &opts, None)?;
            g += grad_metric(&m.alpha, &clip.alpha)?;
            d += dtssd(&m.alpha, &clip.alpha)?;
        }
        out.push(RefinerScore {
            refiner: refiner_name(refiner),
            grad: g / clips.len() as f64,
            dtssd: d / clips.len() as f64,
        });
    }
    Ok(out)
}
