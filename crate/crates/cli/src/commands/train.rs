use std::fs::{File, OpenOptions};
use std::path::{Path, PathBuf};

use vmat_core::network::build_model;
use vmat_core::trainer::{Profile, StageOverride, SyntheticSource, TrainConfig, Trainer};

use super::{create_dir, relative};
use crate::error::{CliError, CliResult};
use crate::manifest::RunManifest;
use crate::{ProfileArg, TrainArgs};

pub const LOG_FILE: &str = "train_log.jsonl";
pub const LAST_CHECKPOINT: &str = "last.ckpt";
pub const FAILURE_CHECKPOINT: &str = "last_good.ckpt";
/// Resolved configuration, kept beside the checkpoints so a resume can be checked against it.
pub const RESOLVED_CONFIG: &str = "train_config.toml";
pub const DEFAULT_OUTPUT: &str = "runs/vmat";

pub fn stage_checkpoint(stage: u8) -> String {
    format!("stage{stage}.ckpt")
}

/// `1..4` and `1..=4` are inclusive ranges; otherwise a comma-separated list.
pub fn parse_stages(s: &str) -> CliResult<Vec<u8>> {
    let bad = || CliError::usage(format!("--stages expects `1..4`, `2` or `1,2`, got `{s}`"));
    let num = |x: &str| x.trim().parse::<u8>().map_err(|_| bad());
    let out: Vec<u8> = if let Some((a, b)) = s.split_once("..") {
        let (a, b) = (num(a)?, num(b.trim_start_matches('='))?);
        if a > b {
            return Err(bad());
        }
        (a..=b).collect()
    } else {
        s.split(',').map(num).collect::<CliResult<_>>()?
    };
    if out.is_empty() || out.iter().any(|&k| !(1..=4).contains(&k)) {
        return Err(bad());
    }
    Ok(out)
}

/// Configuration file (or defaults) with command-line flags applied on top.
pub fn resolve_config(a: &TrainArgs) -> CliResult<TrainConfig> {
    let mut cfg = match &a.config {
        Some(p) => TrainConfig::load(p)?,
        None => TrainConfig::default(),
    };
    if let Some(p) = a.profile {
        cfg.profile = match p {
            ProfileArg::Desk => Profile::Desk,
            ProfileArg::Paper => Profile::Paper,
        };
    }
    if let Some(s) = &a.stages {
        cfg.stages = parse_stages(s)?;
    }
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    if let Some(m) = a.model {
        cfg.model = m.into();
    }
    if let Some(o) = &a.output {
        cfg.output = Some(o.clone());
    }
    if a.iterations.is_some() || a.epochs.is_some() {
        for &stage in &cfg.stages {
            cfg.overrides.push(StageOverride {
                stage,
                iterations_per_epoch: a.iterations,
                epochs: a.epochs,
                ..Default::default()
            });
        }
    }
    Ok(cfg)
}

/// Settings that shape the trajectory of `stages`; a resume must agree on all of them.
fn trajectory_key(cfg: &TrainConfig, stages: &[u8]) -> TrainConfig {
    TrainConfig {
        stages: Vec::new(),
        output: None,
        overrides: cfg.overrides.iter().filter(|o| stages.contains(&o.stage)).cloned().collect(),
        ..cfg.clone()
    }
}

fn check_resume(cfg: &TrainConfig, resume: &Path) -> CliResult<()> {
    let saved = resume.parent().unwrap_or(Path::new(".")).join(RESOLVED_CONFIG);
    if !saved.exists() {
        log::warn!("{} not found, resuming without a configuration check", saved.display());
        return Ok(());
    }
    let before = TrainConfig::load(&saved)?;
    // Stage overrides only matter where both runs cover the stage.
    let shared: Vec<u8> = cfg.stages.iter().copied().filter(|s| before.stages.contains(s)).collect();
    let (was, now) = (trajectory_key(&before, &shared), trajectory_key(cfg, &shared));
    if was != now {
        return Err(CliError::usage(format!(
            "resume/config mismatch: {} was written with\n{}\nthis run resolves to\n{}",
            saved.display(),
            was.to_toml(),
            now.to_toml()
        )));
    }
    Ok(())
}

fn open_log(path: &Path, append: bool) -> CliResult<File> {
    let mut o = OpenOptions::new();
    o.create(true);
    if append {
        o.append(true);
    } else {
        o.write(true).truncate(true);
    }
    o.open(path).map_err(|e| CliError::io(path, e))
}

pub fn run(a: &TrainArgs) -> CliResult<()> {
    let cfg = resolve_config(a)?;
    let stages = cfg.stage_configs()?;
    let out = cfg.output.clone().unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT));
    create_dir(&out)?;
    let model_config = cfg.model.config();

    let mut trainer = match &a.resume {
        Some(p) => {
            check_resume(&cfg, p)?;
            Trainer::load(p, Some(&model_config))?
        }
        None => Trainer::new(build_model(&model_config, cfg.seed)?),
    };
    trainer.bn_momentum = cfg.bn_momentum;
    trainer.memory_limit = cfg.memory_limit_bytes();
    trainer.any_order = cfg.any_order;
    trainer.failure_checkpoint = Some(out.join(FAILURE_CHECKPOINT));
    let log_path = out.join(LOG_FILE);
    trainer.set_log(Box::new(open_log(&log_path, a.resume.is_some())?));
    let config_path = out.join(RESOLVED_CONFIG);
    std::fs::write(&config_path, cfg.to_toml()).map_err(|e| CliError::io(&config_path, e))?;

    let data = SyntheticSource {
        seed: cfg.seed,
        augment: cfg.augment,
    };
    let mut budget = a.halt_after;
    let mut outputs = vec![relative(&log_path, &out), relative(&config_path, &out)];
    let mut halted = false;
    for stage in &stages {
        let resuming_here = trainer.cursor.active.is_some_and(|(s, _)| s == stage.stage);
        if !cfg.any_order && !resuming_here && stage.stage <= trainer.cursor.completed {
            println!("stage {}: already complete, skipping", stage.stage);
            continue;
        }
        let start = trainer.cursor.active.filter(|&(s, _)| s == stage.stage).map_or(0, |(_, i)| i);
        let remaining = stage.iterations() - start;
        let until = match budget {
            Some(b) if b < remaining => stage.iterations().min(start + b),
            _ => stage.iterations(),
        };
        let records = trainer.run_stage_until(stage, &data, until)?;
        if let Some(b) = budget.as_mut() {
            *b -= until - start;
        }
        let last = out.join(LAST_CHECKPOINT);
        if until < stage.iterations() {
            trainer.save(&last)?;
            outputs.push(relative(&last, &out));
            println!(
                "stage {}: halted after iteration {until} of {}; resume with --resume {}",
                stage.stage,
                stage.iterations(),
                last.display()
            );
            halted = true;
            break;
        }
        let loss = records.iter().rev().find(|r| r.pass.is_matting()).map(|r| r.loss);
        let ckpt = out.join(stage_checkpoint(stage.stage));
        trainer.save(&ckpt)?;
        trainer.save(&last)?;
        outputs.push(relative(&ckpt, &out));
        outputs.push(relative(&last, &out));
        match loss {
            Some(l) => println!("stage {}: {} iterations, last matting loss {l:.6}", stage.stage, stage.iterations()),
            None => println!("stage {}: {} iterations", stage.stage, stage.iterations()),
        }
    }
    outputs.dedup();

    let mut manifest = RunManifest::new("train")
        .option("profile", cfg.profile)
        .option("stages", &cfg.stages)
        .option("model", cfg.model)
        .option("augment", cfg.augment)
        .option("bn_momentum", cfg.bn_momentum)
        .option("memory_limit_gib", cfg.memory_limit_gib)
        .option("any_order", cfg.any_order)
        .option("halt_after", a.halt_after)
        .option("halted", halted)
        .option("stage_configs", &stages);
    manifest.config = a.config.clone();
    manifest.checkpoint = a.resume.clone();
    manifest.seed = Some(cfg.seed);
    manifest.outputs = outputs;
    manifest.write(&out)?;
    Ok(())
}
