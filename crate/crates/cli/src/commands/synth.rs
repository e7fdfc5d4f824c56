use vmat_core::datagen::{derive_seed, export_clip, synth_matting_clip};

use super::create_dir;
use crate::error::{CliError, CliResult};
use crate::manifest::RunManifest;
use crate::SynthArgs;

/// Seed stream for exported clips, apart from the trainer's streams.
const EXPORT_STREAM: u64 = 7;

pub fn run(a: &SynthArgs) -> CliResult<()> {
    if a.clips == 0 || a.frames == 0 {
        return Err(CliError::usage("--clips and --frames must be positive"));
    }
    create_dir(&a.out)?;
    let mut manifest = RunManifest::new("synth")
        .option("clips", a.clips)
        .option("frames", a.frames)
        .option("height", a.height)
        .option("width", a.width);
    manifest.seed = Some(a.seed);
    for i in 0..a.clips {
        let clip = synth_matting_clip(derive_seed(a.seed, EXPORT_STREAM, i as u64), a.frames, a.height, a.width)?;
        let name = format!("clip_{i:04}");
        export_clip(&clip, &a.out.join(&name))?;
        manifest.outputs.push(name.into());
    }
    manifest.write(&a.out)?;
    println!("wrote {} clips to {}", a.clips, a.out.display());
    Ok(())
}
