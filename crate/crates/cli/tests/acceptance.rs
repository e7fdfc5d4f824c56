//! Acceptance criteria of the engine, one PASS/FAIL line each.
//!
//! Run with `cargo test -p vmat-cli --test acceptance`; exits nonzero when any criterion fails.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::fs;
use std::io::Write;
use std::panic::{self, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::sync::{Arc, Mutex};
use std::time::Instant;

use common::suites::{self, Check};
use tempfile::TempDir;
use vmat_cli::commands::bench::compare_refiners;
use vmat_core::autograd::Tape;
use vmat_core::datagen::{derive_seed, read_png, synth_matting_clip};
use vmat_core::losses::{matting_loss, total_matting_loss, MattingTargets, MATTING_WEIGHTS};
use vmat_core::network::{build_model, ForwardOptions, ModelConfig};
use vmat_core::trainer::{
    block_means, overfit_smoke, zero_state_ablation, ExtentRange, FixedClips, GroupLr, LogRecord, OverfitConfig,
    PassKind, Profile, StageConfig, SyntheticSource, Trainer,
};

const PARAMS_TARGET: f64 = 3.749e6;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn checks_below(checks: &[Check], tol: f64) -> Outcome {
    let worst = checks.iter().max_by(|a, b| a.worst.total_cmp(&b.worst)).ok_or("no checks ran")?;
    let cases: usize = checks.iter().map(|c| c.cases).sum();
    let summary = format!("{} checks, {cases} cases, worst {} = {:.2e} (tol {tol:.0e})", checks.len(), worst.name, worst.worst);
    ensure(worst.worst < tol, || summary.clone())?;
    Ok(summary)
}

fn parameter_count() -> Outcome {
    let m = build_model(&ModelConfig::default(), 0).map_err(|e| e.to_string())?;
    let n = m.count_params();
    let blocks = m
        .param_breakdown()
        .iter()
        .map(|(k, v)| format!("{k}={v}"))
        .collect::<Vec<_>>()
        .join(" ");
    let rel = n as f64 / PARAMS_TARGET - 1.0;
    let line = format!("{n} parameters ({:+.2}% of 3.749M); {blocks}", rel * 100.0);
    ensure(rel.abs() <= 0.05, || line.clone())?;
    Ok(line)
}

fn streaming_equivalence() -> Outcome {
    let mut worst = (-1.0f64, String::new());
    let mut runs = 0;
    for (name, config) in [("tiny", ModelConfig::tiny_test()), ("default", ModelConfig::default())] {
        for seed in 0..20 {
            for t in [2, 4, 8] {
                let d = suites::streaming_deviation(&config, seed, t, 64, 64);
                runs += 1;
                if d.is_nan() || d > worst.0 {
                    worst = (if d.is_nan() { f64::INFINITY } else { d }, format!("{name} seed {seed} T={t}"));
                }
            }
        }
    }
    let line = format!("{runs} runs, max deviation {:.2e} at {}", worst.0, worst.1);
    ensure(worst.0 <= 1e-5, || line.clone())?;
    Ok(line)
}

fn gradient_suite() -> Outcome {
    let ops = suites::op_gradient_checks();
    let losses = suites::loss_gradient_checks();
    let net = suites::network_gradient_check();
    let a = checks_below(&ops, 1e-4).map_err(|e| format!("ops: {e}"))?;
    let b = checks_below(&losses, 1e-4).map_err(|e| format!("losses: {e}"))?;
    let c = checks_below(std::slice::from_ref(&net), 1e-3).map_err(|e| format!("network: {e}"))?;
    Ok(format!("ops: {a}; losses: {b}; network: {c}"))
}

fn oracle_equivalence() -> Outcome {
    let checks = suites::oracle_checks();
    let low = checks.iter().find(|c| (c.cases as u64) < suites::INSTANCES);
    ensure(low.is_none(), || format!("{} ran fewer than {} instances", low.unwrap().name, suites::INSTANCES))?;
    let names = checks.iter().map(|c| format!("{}={:.1e}", c.name, c.worst)).collect::<Vec<_>>().join(" ");
    checks_below(&checks, 1e-5).map(|s| format!("{s}; {names}"))
}

fn convgru() -> Outcome {
    let scalar = suites::gru_scalar_deviation();
    let zero = suites::gru_zero_weight_deviation();
    let line = format!("scalar evaluation gap {scalar:.2e}, zero-weight gap from h/2 {zero:.2e}");
    ensure(scalar < 1e-6 && zero <= 1e-7, || line.clone())?;
    Ok(line)
}

fn loss_weighting() -> Outcome {
    ensure(MATTING_WEIGHTS == [1.0, 1.0, 5.0, 1.0, 5.0], || format!("weights {MATTING_WEIGHTS:?}"))?;
    let ones = total_matting_loss(1.0, 1.0, 1.0, 1.0, 1.0);
    ensure(ones == 13.0, || format!("all-ones total {ones}"))?;
    let mut r = common::rng(11);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let c: Vec<f64> = common::uniform_vec(5, 0.0, 2.0, &mut r);
        let base = total_matting_loss(c[0], c[1], c[2], c[3], c[4]);
        for k in 0..5 {
            let d = common::uniform_vec(1, -1.0, 1.0, &mut r)[0];
            let mut p = c.clone();
            p[k] += d;
            let moved = total_matting_loss(p[0], p[1], p[2], p[3], p[4]);
            worst = worst.max((moved - base - MATTING_WEIGHTS[k] * d).abs());
        }
    }
    ensure(worst < 1e-12, || format!("perturbation linearity gap {worst:.2e}"))?;

    let (b, t, h, w) = (2, 3, 32, 32);
    let alpha = common::random::<f64>(&[b * t, 1, h, w], 0.0, 1.0, 1);
    let fg = common::random::<f64>(&[b * t, 3, h, w], 0.0, 1.0, 2);
    let agt = common::random::<f64>(&[b * t, 1, h, w], -0.5, 1.0, 3).map(|v| v.max(0.0));
    let fgt = common::random::<f64>(&[b * t, 3, h, w], 0.0, 1.0, 4);
    let tape = Tape::no_grad();
    let targets = MattingTargets {
        alpha: &agt,
        foreground: &fgt,
        batch: b,
        frames: t,
    };
    let (total, rep) = matting_loss(&tape.constant(alpha), &tape.constant(fg), &targets).map_err(|e| e.to_string())?;
    let sum = total_matting_loss(rep.l1_alpha, rep.lap_alpha, rep.tc_alpha, rep.l1_fg, rep.tc_fg);
    let gap = (total.value().data()[0] - sum).abs();
    ensure(gap < 1e-12, || format!("composed loss differs from weighted components by {gap:.2e}"))?;
    Ok(format!("weights 1/1/5/1/5, all-ones total 13, linearity gap {worst:.1e}, composed gap {gap:.1e}"))
}

#[derive(Clone, Default)]
struct SharedBuf(Arc<Mutex<Vec<u8>>>);

impl Write for SharedBuf {
    fn write(&mut self, buf: &[u8]) -> std::io::Result<usize> {
        self.0.lock().unwrap().extend_from_slice(buf);
        Ok(buf.len())
    }

    fn flush(&mut self) -> std::io::Result<()> {
        Ok(())
    }
}

fn expected_passes(stage: u8, iteration: usize) -> Vec<PassKind> {
    let mut p = vec![PassKind::LowResMatting];
    if stage >= 3 {
        p.push(PassKind::HighResMatting);
    }
    p.push(if iteration % 2 == 0 { PassKind::VideoSeg } else { PassKind::ImageSeg });
    p
}

fn check_log(stage: &StageConfig, log: &[LogRecord]) -> Result<(), String> {
    let want: Vec<(usize, PassKind)> = (0..stage.iterations())
        .flat_map(|i| expected_passes(stage.stage, i).into_iter().map(move |p| (i, p)))
        .collect();
    let got: Vec<(usize, PassKind)> = log.iter().map(|r| (r.iteration, r.pass)).collect();
    ensure(got == want, || format!("stage {} pass log {got:?} differs from {want:?}", stage.stage))?;
    let bad = log.iter().find(|r| r.stage != stage.stage || r.lr != stage.lr || !r.loss.is_finite());
    ensure(bad.is_none(), || format!("stage {} record {:?}", stage.stage, bad.unwrap()))
}

fn schedule_fidelity() -> Outcome {
    let table = [
        (1, [1e-4, 2e-4, 0.0]),
        (2, [5e-5, 1e-4, 0.0]),
        (3, [1e-5, 1e-5, 2e-4]),
        (4, [1e-5, 5e-5, 2e-4]),
    ];
    for (s, [b, d, g]) in table {
        let want = GroupLr {
            backbone: b,
            decoder: d,
            dgf: g,
        };
        for p in [Profile::Desk, Profile::Paper] {
            let got = StageConfig::for_profile(p, s).map_err(|e| e.to_string())?.lr;
            ensure(got == want, || format!("{p:?} stage {s} lr {got:?}, expected {want:?}"))?;
        }
    }

    let sink = SharedBuf::default();
    let mut trainer = Trainer::new(build_model(&ModelConfig::tiny_test(), 0).map_err(|e| e.to_string())?);
    trainer.set_log(Box::new(sink.clone()));
    let data = SyntheticSource::new(5);
    let mut s1 = StageConfig::desk(1).map_err(|e| e.to_string())?;
    s1.epochs = 1;
    s1.iterations_per_epoch = 20;
    let mut s3 = StageConfig::desk(3).map_err(|e| e.to_string())?;
    s3.epochs = 1;
    s3.iterations_per_epoch = 4;
    trainer.run_stage(&s1, &data).map_err(|e| e.to_string())?;
    trainer.any_order = true;
    trainer.run_stage(&s3, &data).map_err(|e| e.to_string())?;

    let text = String::from_utf8(sink.0.lock().unwrap().clone()).map_err(|e| e.to_string())?;
    let records: Vec<LogRecord> = text
        .lines()
        .map(|l| serde_json::from_str(l).map_err(|e| format!("log line `{l}`: {e}")))
        .collect::<Result<_, _>>()?;
    let (r1, r3): (Vec<LogRecord>, Vec<LogRecord>) = records.into_iter().partition(|r| r.stage == 1);
    check_log(&s1, &r1)?;
    check_log(&s3, &r3)?;
    for stage in [1, 2] {
        let s = StageConfig::desk(stage).map_err(|e| e.to_string())?;
        let hr = (0..20).any(|i| s.passes(i).contains(&PassKind::HighResMatting));
        ensure(!hr, || format!("stage {stage} schedules a high-resolution pass"))?;
    }
    Ok(format!(
        "{} stage-1 and {} stage-3 log records follow the interleave; lr table matches for both profiles",
        r1.len(),
        r3.len()
    ))
}

fn overfit_and_ablation() -> Outcome {
    let cfg = OverfitConfig::default();
    let (trainer, report) = overfit_smoke(&ModelConfig::tiny_test(), &cfg).map_err(|e| e.to_string())?;
    let smooth = block_means(&report.losses, 25);
    let monotone = smooth.windows(2).all(|w| w[1] < w[0]);
    let fmt = |v: &[f64]| v.iter().map(|x| format!("{x:.4}")).collect::<Vec<_>>().join(" ");
    let opts = ForwardOptions::default();
    let train = FixedClips::synthetic(cfg.seed, cfg.clips, cfg.frames, cfg.height, cfg.width).map_err(|e| e.to_string())?;
    let mut pairs = Vec::new();
    for c in &train.clips {
        pairs.push(zero_state_ablation(&trainer.model, c, &opts).map_err(|e| e.to_string())?);
    }
    let mut held = Vec::new();
    for i in 0..4 {
        let c = synth_matting_clip(derive_seed(1234, 5, i), cfg.frames, cfg.height, cfg.width).map_err(|e| e.to_string())?;
        held.push(zero_state_ablation(&trainer.model, &c, &opts).map_err(|e| e.to_string())?);
    }
    let show = |v: &[(f64, f64)]| v.iter().map(|(a, b)| format!("{a:.3}->{b:.3}")).collect::<Vec<_>>().join(" ");
    let line = format!(
        "MAD {:.4} -> {:.4} in {} steps; smoothed loss {}; dtSSD carried->reset on training clips {}; held-out {}",
        report.initial_mad,
        report.final_mad,
        cfg.steps,
        fmt(&smooth),
        show(&pairs),
        show(&held)
    );
    ensure(report.final_mad < 0.05, || format!("MAD too high: {line}"))?;
    ensure(monotone, || format!("smoothed loss not decreasing: {line}"))?;
    ensure(pairs.iter().all(|(c, r)| r > c), || format!("reset state does not worsen dtSSD: {line}"))?;
    Ok(line)
}

fn refiner_ablation() -> Outcome {
    let (mut trainer, _) = overfit_smoke(&ModelConfig::tiny_test(), &OverfitConfig::default()).map_err(|e| e.to_string())?;
    let stage = StageConfig {
        stage: 3,
        frames: 2,
        hr_frames: 2,
        resolution: ExtentRange::new(64, 64),
        hr_resolution: ExtentRange::new(128, 128),
        downsample: 0.25,
        lr: GroupLr {
            backbone: 0.0,
            decoder: 0.0,
            dgf: 2e-3,
        },
        epochs: 1,
        iterations_per_epoch: 20,
        batch: 2,
        segmentation: false,
    };
    trainer.any_order = true;
    let data = SyntheticSource {
        seed: 21,
        augment: 0.0,
    };
    trainer.run_stage(&stage, &data).map_err(|e| e.to_string())?;
    let clips = (0..2)
        .map(|i| synth_matting_clip(derive_seed(77, 3, i), 4, 256, 256))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| e.to_string())?;
    let scores = compare_refiners(&trainer.model, &clips, 0.25).map_err(|e| e.to_string())?;
    ensure(scores.iter().all(|s| s.grad.is_finite() && s.dtssd.is_finite()), || format!("non-finite scores {scores:?}"))?;
    let body = scores
        .iter()
        .map(|s| format!("{} Grad {:.4} dtSSD {:.4}", s.refiner, s.grad, s.dtssd))
        .collect::<Vec<_>>()
        .join("; ");
    let dgf_better = scores[0].grad < scores[1].grad;
    Ok(format!("256x256 s=0.25: {body}; learned filter has the lower Grad: {dgf_better}"))
}

fn vmat(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_vmat")).args(args).output().map_err(|e| e.to_string())?;
    ensure(out.status.success(), || format!("vmat {args:?}: {}", String::from_utf8_lossy(&out.stderr)))
}

fn path(p: &Path) -> &str {
    p.to_str().expect("utf-8 temp path")
}

fn round_trip() -> Outcome {
    let mut worst = 0.0f64;
    let mut clips = 0;
    for seed in 0..40 {
        let (h, w) = [(16, 16), (32, 48), (64, 32), (96, 96)][seed as usize % 4];
        let c = synth_matting_clip(seed, 1 + seed as usize % 5, h, w).map_err(|e| e.to_string())?;
        worst = worst.max(c.reconstruction_error().ok_or("clip without background")?);
        clips += 1;
    }
    ensure(worst <= 1e-6, || format!("reconstruction error {worst:.2e}"))?;

    let tmp = TempDir::new().map_err(|e| e.to_string())?;
    let data = tmp.path().join("data");
    vmat(&["synth", "--seed", "3", "--clips", "2", "--frames", "3", "--height", "48", "--width", "64", "--out", path(&data)])?;
    let mut cli_worst = 0.0f32;
    let mut frames = 0;
    for k in 0..2 {
        let clip = data.join(format!("clip_{k:04}"));
        let out = tmp.path().join(format!("comp{k}"));
        vmat(&["composite", "--fg", path(&clip), "--alpha", path(&clip), "--bg", path(&clip), "--out", path(&out)])?;
        let mut comps: Vec<_> = fs::read_dir(&out)
            .map_err(|e| e.to_string())?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "png"))
            .collect();
        comps.sort();
        ensure(comps.len() == 3, || format!("{} composite frames, expected 3", comps.len()))?;
        for (i, comp) in comps.iter().enumerate() {
            let read = |name: &str| read_png(&clip.join(format!("{name}_{i:04}.png"))).map_err(|e| e.to_string());
            let (f, a, b, img) = (read("foreground")?, read("alpha")?, read("background")?, read("frames")?);
            let c = read_png(comp).map_err(|e| e.to_string())?;
            let hw = 48 * 64;
            for ch in 0..3 {
                for p in 0..hw {
                    let al = a.data()[p];
                    let want = al * f.data()[ch * hw + p] + (1.0 - al) * b.data()[ch * hw + p];
                    cli_worst = cli_worst.max((want - c.data()[ch * hw + p]).abs());
                    cli_worst = cli_worst.max((img.data()[ch * hw + p] - c.data()[ch * hw + p]).abs() - 1.0 / 255.0);
                }
            }
            frames += 1;
        }
    }
    let line = format!(
        "{clips} clips reconstruct within {worst:.1e}; CLI composite of {frames} frames within {:.2}/255",
        cli_worst * 255.0
    );
    ensure(cli_worst <= 1.0 / 255.0 + 1e-6, || line.clone())?;
    Ok(line)
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("parameter count", parameter_count),
        ("streaming equivalence", streaming_equivalence),
        ("gradient suite", gradient_suite),
        ("oracle equivalence", oracle_equivalence),
        ("convgru correctness", convgru),
        ("loss weighting", loss_weighting),
        ("training schedule fidelity", schedule_fidelity),
        ("desk-scale overfit", overfit_and_ablation),
        ("dgf vs fgf ablation", refiner_ablation),
        ("compositing round trip", round_trip),
    ];
    let only: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, f) in criteria {
        if !only.is_empty() && !only.iter().any(|o| name.contains(o.as_str())) {
            continue;
        }
        let start = Instant::now();
        let outcome = panic::catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {name} ({secs:.1}s): {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {name} ({secs:.1}s): {detail}");
            }
        }
        std::io::stdout().flush().ok();
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
