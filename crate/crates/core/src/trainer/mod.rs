//! Staged training: Adam, the pass schedule, checkpoints and desk-scale smoke runs.

pub mod adam;
pub mod config;
pub mod data;
pub mod schedule;

use std::cell::OnceCell;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub use adam::{AdamConfig, AdamState, GroupLr};
pub use config::{ModelPreset, StageOverride, TrainConfig};
pub use data::{Batch, DataSource, FixedClips, SyntheticSource};
pub use schedule::{ExtentRange, PassKind, Profile, StageConfig};

use crate::autograd::Tape;
use crate::datagen::ClipSample;
use crate::error::{Error, Result};
use crate::losses::{matting_loss, segmentation_bce, LossReport, MattingTargets};
use crate::metrics;
use crate::network::{Checkpoint, Ctx, ForwardOptions, Model, ModelConfig, RecurrentState, Refiner, Stored};
use crate::tensor::Tensor;

pub const DEFAULT_BN_MOMENTUM: f64 = 0.1;
pub const DEFAULT_MEMORY_LIMIT: u64 = 8 << 30;
const TRAINER_STATE_VERSION: u32 = 1;

/// One optimiser step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub stage: u8,
    pub iteration: usize,
    pub pass: PassKind,
    pub batch: usize,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub loss: f64,
    pub components: LossReport,
    pub lr: GroupLr,
}

/// Position in the stage sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Cursor {
    /// Last stage run to completion, 0 before any.
    pub completed: u8,
    /// Stage in progress and its next iteration.
    pub active: Option<(u8, usize)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TrainerState {
    version: u32,
    cursor: Cursor,
    adam: AdamConfig,
    steps: Vec<u64>,
    bn_momentum: f64,
}

pub struct Trainer {
    pub model: Model<f32>,
    pub adam: AdamState,
    pub cursor: Cursor,
    pub bn_momentum: f64,
    pub memory_limit: u64,
    /// Allows stages out of the 1→4 order.
    pub any_order: bool,
    /// Written with the pre-step state when a step diverges.
    pub failure_checkpoint: Option<PathBuf>,
    log: Option<Box<dyn Write>>,
    probe: OnceCell<[f64; 2]>,
}

impl Trainer {
    pub fn new(model: Model<f32>) -> Self {
        let adam = AdamState::new(model.params(), AdamConfig::default());
        Trainer {
            model,
            adam,
            cursor: Cursor::default(),
            bn_momentum: DEFAULT_BN_MOMENTUM,
            memory_limit: DEFAULT_MEMORY_LIMIT,
            any_order: false,
            failure_checkpoint: None,
            log: None,
            probe: OnceCell::new(),
        }
    }

    /// Every record is also written to `sink` as one JSON line.
    pub fn set_log(&mut self, sink: Box<dyn Write>) {
        self.log = Some(sink);
    }

    /// Recorded tensor elements per input pixel-frame for the plain and guided-filter forward passes.
    fn probe(&self) -> Result<[f64; 2]> {
        if let Some(p) = self.probe.get() {
            return Ok(*p);
        }
        let (h, w) = (64, 64);
        let frames = Tensor::full(vec![1, 1, 3, h, w], 0.5f32)?;
        let mut out = [0.0; 2];
        for (k, opts) in [ForwardOptions::default(), ForwardOptions::new(0.25, true)].iter().enumerate() {
            let tape = Tape::new();
            let cx = Ctx::training(&tape, self.model.params(), |_| true);
            self.model.forward(&cx, &frames, None, opts)?;
            out[k] = tape.recorded_elements() as f64 / (h * w) as f64;
        }
        Ok(*self.probe.get_or_init(|| out))
    }

    /// Peak bytes of one pass of `stage`: forward values and their gradients in f32.
    pub fn estimate_memory(&self, stage: &StageConfig) -> Result<u64> {
        let [plain, guided] = self.probe()?;
        let mut peak = 0.0f64;
        for pass in [PassKind::LowResMatting, PassKind::HighResMatting, PassKind::VideoSeg, PassKind::ImageSeg] {
            if pass == PassKind::HighResMatting && !stage.uses_high_res() {
                continue;
            }
            let (b, t, (_, hi)) = data::pass_shape(stage, pass);
            let per = if pass == PassKind::HighResMatting { guided } else { plain };
            let side = (hi / 16 * 16) as f64;
            peak = peak.max(per * (b * t) as f64 * side * side * 8.0);
        }
        Ok(peak as u64)
    }

    fn check_order(&self, stage: u8) -> Result<()> {
        if self.any_order {
            return Ok(());
        }
        let ok = match self.cursor.active {
            Some((s, _)) => s == stage,
            None => stage == self.cursor.completed + 1,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Contract(format!(
                "stage {stage} requested but the run is at {:?} with stage {} complete; stages run in order unless overridden",
                self.cursor.active, self.cursor.completed
            )))
        }
    }

    /// Runs `stage` to completion, resuming mid-stage when the cursor points into it.
    pub fn run_stage(&mut self, stage: &StageConfig, data: &dyn DataSource) -> Result<Vec<LogRecord>> {
        self.run_stage_until(stage, data, stage.iterations())
    }

    /// Runs `stage` up to (excluding) iteration `until`; stops early leave the cursor inside the stage.
    pub fn run_stage_until(&mut self, stage: &StageConfig, data: &dyn DataSource, until: usize) -> Result<Vec<LogRecord>> {
        stage.validate()?;
        self.check_order(stage.stage)?;
        let need = self.estimate_memory(stage)?;
        if need > self.memory_limit {
            return Err(Error::Config(format!(
                "stage {} needs about {:.1} GiB per pass, above the {:.1} GiB limit",
                stage.stage,
                need as f64 / (1u64 << 30) as f64,
                self.memory_limit as f64 / (1u64 << 30) as f64
            )));
        }
        let start = match self.cursor.active {
            Some((s, i)) if s == stage.stage => i,
            _ => 0,
        };
        let end = until.min(stage.iterations());
        let mut records = Vec::new();
        self.cursor.active = Some((stage.stage, start));
        for it in start..end {
            for pass in stage.passes(it) {
                let batch = data.batch(stage, pass, it)?;
                let rec = self.step(stage, pass, it, &batch, None)?;
                records.push(rec);
            }
            self.cursor.active = Some((stage.stage, it + 1));
        }
        if end == stage.iterations() {
            self.cursor = Cursor {
                completed: self.cursor.completed.max(stage.stage),
                active: None,
            };
        }
        Ok(records)
    }

    /// Runs every stage in order.
    pub fn run_stages(&mut self, stages: &[StageConfig], data: &dyn DataSource) -> Result<Vec<LogRecord>> {
        let mut all = Vec::new();
        for s in stages {
            all.extend(self.run_stage(s, data)?);
        }
        Ok(all)
    }

    fn forward_options(stage: &StageConfig, pass: PassKind) -> ForwardOptions {
        match pass {
            PassKind::HighResMatting => ForwardOptions {
                downsample: stage.downsample,
                refiner: Refiner::Deep,
            },
            _ => ForwardOptions::default(),
        }
    }

    fn diverged(&self, err: Error) -> Error {
        if let Some(path) = &self.failure_checkpoint {
            match self.checkpoint().save(path) {
                Ok(()) => log::error!("last good state written to {}", path.display()),
                Err(e) => log::error!("could not write the last good state: {e}"),
            }
        }
        err
    }

    /// One forward, backward and Adam update. `coverage` collects parameters that received a nonzero gradient.
    pub fn step(
        &mut self,
        stage: &StageConfig,
        pass: PassKind,
        iteration: usize,
        batch: &Batch,
        coverage: Option<&mut Vec<bool>>,
    ) -> Result<LogRecord> {
        let lr = stage.lr;
        let opts = Self::forward_options(stage, pass);
        let (loss, components, grads, updates) = {
            let tape = Tape::new();
            let cx = Ctx::training(&tape, self.model.params(), |g| lr.get(g) > 0.0);
            let (out, _) = self.model.forward(&cx, &batch.frames, None, &opts)?;
            let (loss, components) = if pass.is_matting() {
                let targets = MattingTargets {
                    alpha: &batch.alpha,
                    foreground: &batch.foreground,
                    batch: batch.batch,
                    frames: batch.len,
                };
                matting_loss(&out.alpha, &out.foreground, &targets)?
            } else {
                let l = segmentation_bce(&out.segmentation, &tape.constant(batch.seg.clone()))?;
                let v = l.value().data()[0] as f64;
                (
                    l,
                    LossReport {
                        seg_bce: v,
                        ..Default::default()
                    },
                )
            };
            let value = loss.value().data()[0] as f64;
            if !value.is_finite() {
                drop(cx);
                return Err(self.diverged(Error::Divergence(format!(
                    "stage {} iteration {iteration} {}: loss is {value}",
                    stage.stage,
                    pass.name()
                ))));
            }
            // A pass through frozen parameters only (e.g. everything but the refiner) updates nothing.
            let grads: Vec<Option<Tensor<f32>>> = if loss.requires_grad() {
                let g = tape.backward(&loss)?;
                cx.params().iter().map(|p| g.get(p).cloned()).collect()
            } else {
                vec![None; cx.params().len()]
            };
            (value, components, grads, cx.take_bn_updates())
        };
        if let Some(cov) = coverage {
            cov.resize(grads.len(), false);
            for (c, g) in cov.iter_mut().zip(&grads) {
                *c |= g.as_ref().is_some_and(|g| g.data().iter().any(|&v| v != 0.0));
            }
        }
        if let Err(e) = self.adam.step(self.model.params_mut(), &grads, &lr) {
            return Err(self.diverged(e));
        }
        self.model.apply_bn_updates(&updates, self.bn_momentum)?;
        let (height, width) = batch.extent();
        let rec = LogRecord {
            stage: stage.stage,
            iteration,
            pass,
            batch: batch.batch,
            frames: batch.len,
            height,
            width,
            loss,
            components,
            lr,
        };
        if let Some(w) = self.log.as_mut() {
            let line = serde_json::to_string(&rec).map_err(|e| Error::Format(e.to_string()))?;
            writeln!(w, "{line}").map_err(|e| Error::io("training log", e))?;
        }
        Ok(rec)
    }

    /// Names of parameters trainable under `stage` that no pass of `iterations` iterations reached.
    pub fn gradient_coverage(
        &mut self,
        stage: &StageConfig,
        data: &dyn DataSource,
        iterations: usize,
    ) -> Result<Vec<String>> {
        let mut cov = vec![false; self.model.params().len()];
        for it in 0..iterations {
            for pass in stage.passes(it) {
                let batch = data.batch(stage, pass, it)?;
                self.step(stage, pass, it, &batch, Some(&mut cov))?;
            }
        }
        let p = self.model.params();
        Ok(p.names()
            .iter()
            .zip(p.groups())
            .zip(&cov)
            .filter(|((_, &g), &hit)| stage.lr.get(g) > 0.0 && !hit)
            .map(|((n, _), _)| n.clone())
            .collect())
    }

    /// Model tensors, Adam moments as `adam.m.*` / `adam.v.*`, and the cursor in the header.
    pub fn checkpoint(&self) -> Checkpoint {
        let mut ckpt = self.model.to_checkpoint();
        let names = self.model.params().names();
        for (n, m) in names.iter().zip(&self.adam.m) {
            ckpt.tensors.push((format!("adam.m.{n}"), Stored::F32(m.clone())));
        }
        for (n, v) in names.iter().zip(&self.adam.v) {
            ckpt.tensors.push((format!("adam.v.{n}"), Stored::F32(v.clone())));
        }
        let state = TrainerState {
            version: TRAINER_STATE_VERSION,
            cursor: self.cursor,
            adam: self.adam.config,
            steps: self.adam.steps.clone(),
            bn_momentum: self.bn_momentum,
        };
        ckpt.header.trainer = Some(serde_json::to_value(state).expect("plain data serialises"));
        ckpt
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.checkpoint().save(path)
    }

    /// Restores a trainer; `expected` guards against resuming into a different architecture.
    pub fn from_checkpoint(ckpt: &Checkpoint, expected: Option<&ModelConfig>) -> Result<Self> {
        if let Some(cfg) = expected {
            if cfg != &ckpt.header.config {
                return Err(Error::ConfigMismatch(format!(
                    "checkpoint holds {:?}, run expects {cfg:?}",
                    ckpt.header.config
                )));
            }
        }
        let model = Model::from_checkpoint(ckpt)?;
        let value = ckpt
            .header
            .trainer
            .clone()
            .ok_or_else(|| Error::Format("checkpoint carries no optimiser state".into()))?;
        let state: TrainerState =
            serde_json::from_value(value).map_err(|e| Error::Format(format!("optimiser state: {e}")))?;
        if state.version != TRAINER_STATE_VERSION {
            return Err(Error::Format(format!("optimiser state version {} unsupported", state.version)));
        }
        let p = model.params();
        if state.steps.len() != p.len() {
            return Err(Error::ConfigMismatch(format!(
                "optimiser state covers {} parameters, model has {}",
                state.steps.len(),
                p.len()
            )));
        }
        let moment = |kind: &str, i: usize| -> Result<Tensor<f32>> {
            let name = format!("adam.{kind}.{}", p.names()[i]);
            let t = ckpt.get(&name).ok_or_else(|| Error::Format(format!("checkpoint lacks `{name}`")))?;
            if t.dims() != p.values()[i].dims() {
                return Err(Error::ConfigMismatch(format!("`{name}` has extents {:?}", t.dims())));
            }
            Ok(t.to_f32())
        };
        let m = (0..p.len()).map(|i| moment("m", i)).collect::<Result<Vec<_>>>()?;
        let v = (0..p.len()).map(|i| moment("v", i)).collect::<Result<Vec<_>>>()?;
        let mut t = Trainer::new(model);
        t.adam = AdamState {
            config: state.adam,
            steps: state.steps,
            m,
            v,
        };
        t.cursor = state.cursor;
        t.bn_momentum = state.bn_momentum;
        Ok(t)
    }

    pub fn load(path: &Path, expected: Option<&ModelConfig>) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?, expected)
    }
}

/// Settings of the desk-scale overfitting run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverfitConfig {
    pub seed: u64,
    pub clips: usize,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub steps: usize,
    pub lr: GroupLr,
    /// Interleaves the segmentation passes.
    pub segmentation: bool,
    /// Training-set MAD is measured every `eval_every` steps (and after the last).
    pub eval_every: usize,
}

impl Default for OverfitConfig {
    fn default() -> Self {
        OverfitConfig {
            seed: 0,
            clips: 4,
            frames: 4,
            height: 64,
            width: 64,
            steps: 300,
            lr: GroupLr {
                backbone: 2e-3,
                decoder: 2e-3,
                dgf: 0.0,
            },
            segmentation: false,
            eval_every: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverfitReport {
    /// Unscaled mean absolute alpha error before training.
    pub initial_mad: f64,
    pub final_mad: f64,
    /// (step, MAD) at each evaluation.
    pub mad_trace: Vec<(usize, f64)>,
    /// Matting loss of every step.
    pub losses: Vec<f64>,
}

/// Unscaled alpha MAD of `model` on `clips` in inference mode, each clip streamed as one sequence.
pub fn training_set_mad(model: &Model<f32>, clips: &[ClipSample]) -> Result<f64> {
    let mut total = 0.0;
    for c in clips {
        let (frames, _, _) = c.as_batch()?;
        let (pred, _) = model.infer(&frames, None, &ForwardOptions::default())?;
        total += metrics::mad(&pred.alpha, &c.alpha)? / 1e3;
    }
    Ok(total / clips.len() as f64)
}

/// Trains `model_config` on a few fixed synthetic clips and tracks their MAD.
pub fn overfit_smoke(model_config: &ModelConfig, cfg: &OverfitConfig) -> Result<(Trainer, OverfitReport)> {
    let model = crate::network::build_model(model_config, cfg.seed)?;
    let data = FixedClips::synthetic(cfg.seed, cfg.clips, cfg.frames, cfg.height, cfg.width)?;
    let side = ExtentRange::new(cfg.height.min(cfg.width), cfg.height.max(cfg.width));
    let stage = StageConfig {
        stage: 1,
        frames: cfg.frames,
        hr_frames: 1,
        resolution: side,
        hr_resolution: side,
        downsample: 0.25,
        lr: cfg.lr,
        epochs: 1,
        iterations_per_epoch: cfg.steps,
        batch: cfg.clips,
        segmentation: cfg.segmentation,
    };
    let mut trainer = Trainer::new(model);
    let initial_mad = training_set_mad(&trainer.model, &data.clips)?;
    let mut mad_trace = vec![(0, initial_mad)];
    let mut losses = Vec::with_capacity(cfg.steps);
    let every = cfg.eval_every.max(1);
    for it in 0..cfg.steps {
        for pass in stage.passes(it) {
            let batch = data.batch(&stage, pass, it)?;
            let rec = trainer.step(&stage, pass, it, &batch, None)?;
            if pass.is_matting() {
                losses.push(rec.loss);
            }
        }
        if (it + 1) % every == 0 || it + 1 == cfg.steps {
            mad_trace.push((it + 1, training_set_mad(&trainer.model, &data.clips)?));
        }
    }
    trainer.cursor = Cursor {
        completed: 1,
        active: None,
    };
    let final_mad = mad_trace.last().map_or(initial_mad, |m| m.1);
    Ok((
        trainer,
        OverfitReport {
            initial_mad,
            final_mad,
            mad_trace,
            losses,
        },
    ))
}

/// Means of consecutive, non-overlapping windows of `width` values; a trailing partial window is dropped.
pub fn block_means(values: &[f64], width: usize) -> Vec<f64> {
    values
        .chunks_exact(width.max(1))
        .map(|c| c.iter().sum::<f64>() / c.len() as f64)
        .collect()
}

/// dtSSD of streamed predictions with the recurrent state carried, and with it reset before every frame.
pub fn zero_state_ablation(model: &Model<f32>, clip: &ClipSample, opts: &ForwardOptions) -> Result<(f64, f64)> {
    let t = clip.len();
    let (h, w) = clip.extent();
    let mut carried = Vec::with_capacity(t);
    let mut reset = Vec::with_capacity(t);
    let mut state = RecurrentState::fresh();
    for i in 0..t {
        let per = 3 * h * w;
        let frame = Tensor::from_vec(vec![1, 1, 3, h, w], clip.frames.data()[i * per..(i + 1) * per].to_vec())?;
        let (p, s) = model.infer(&frame, Some(&state), opts)?;
        state = s;
        carried.extend_from_slice(p.alpha.data());
        let (p0, _) = model.infer(&frame, None, opts)?;
        reset.extend_from_slice(p0.alpha.data());
    }
    let a = Tensor::from_vec(vec![t, 1, h, w], carried)?;
    let b = Tensor::from_vec(vec![t, 1, h, w], reset)?;
    Ok((metrics::dtssd(&a, &clip.alpha)?, metrics::dtssd(&b, &clip.alpha)?))
}
