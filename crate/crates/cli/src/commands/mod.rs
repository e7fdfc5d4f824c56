pub mod bench;
pub mod composite;
pub mod eval;
pub mod infer;
pub mod synth;
pub mod train;

use std::path::{Path, PathBuf};

use vmat_core::network::{Checkpoint, Model, Refiner};

use crate::error::{CliError, CliResult};
use crate::Switch;

/// Refiner for `--dgf` at downsample ratio `s`; unset means on whenever `s < 1`.
pub fn refiner(dgf: Option<Switch>, s: f64) -> CliResult<Refiner> {
    if !(s > 0.0 && s <= 1.0) {
        return Err(CliError::usage(format!("--downsample must lie in (0, 1], got {s}")));
    }
    match dgf {
        Some(Switch::On) if s >= 1.0 => Err(CliError::usage(
            "--dgf on needs --downsample below 1: the guided filter upsamples a low-resolution pass, and at s = 1 there is nothing to upsample",
        )),
        Some(Switch::On) => Ok(Refiner::Deep),
        Some(Switch::Off) => Ok(Refiner::Bilinear),
        None if s < 1.0 => Ok(Refiner::Deep),
        None => Ok(Refiner::Bilinear),
    }
}

pub fn load_model(path: &Path) -> CliResult<Model<f32>> {
    let ckpt = Checkpoint::load(path)?;
    Ok(Model::from_checkpoint(&ckpt)?)
}

/// `path` relative to `base` when it lies inside it, so manifests do not depend on where a tree was written.
pub fn relative(path: &Path, base: &Path) -> PathBuf {
    path.strip_prefix(base).map(Path::to_path_buf).unwrap_or_else(|_| path.to_path_buf())
}

pub fn create_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}
