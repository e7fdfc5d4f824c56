use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use vmat_core::metrics::{evaluate_clip, format_report, mad_trace, ClipEval, Metric, MetricReport};
use vmat_core::tensor::Tensor;

use crate::error::{CliError, CliResult};
use crate::frames::{list_pngs, read_sequence};
use crate::manifest::RunManifest;
use crate::EvalArgs;

pub const MEAN_ROW: &str = "mean";

pub fn parse_metrics(list: Option<&str>) -> CliResult<Vec<Metric>> {
    let Some(list) = list else {
        return Ok(Metric::ALL.to_vec());
    };
    let mut out = Vec::new();
    for name in list.split(',').filter(|s| !s.trim().is_empty()) {
        let m: Metric = name.parse()?;
        if !out.contains(&m) {
            out.push(m);
        }
    }
    if out.is_empty() {
        return Err(CliError::usage("--metrics names no metric"));
    }
    Ok(out)
}

fn has_alpha(dir: &Path) -> CliResult<bool> {
    Ok(!list_pngs(dir, Some("alpha"))?.is_empty())
}

fn subdirs(dir: &Path) -> CliResult<Vec<String>> {
    let mut names = Vec::new();
    for e in fs::read_dir(dir).map_err(|e| CliError::io(dir, e))? {
        let e = e.map_err(|e| CliError::io(dir, e))?;
        if e.path().is_dir() {
            names.push(e.file_name().to_string_lossy().into_owned());
        }
    }
    names.sort();
    Ok(names)
}

/// `(clip id, prediction dir, ground-truth dir)` for a single clip or a directory of clips.
pub fn pair_clips(pred: &Path, gt: &Path) -> CliResult<Vec<(String, PathBuf, PathBuf)>> {
    for d in [pred, gt] {
        if !d.is_dir() {
            return Err(CliError::usage(format!("{}: not a directory", d.display())));
        }
    }
    if has_alpha(gt)? {
        if !has_alpha(pred)? {
            return Err(CliError::usage(format!("{}: no alpha_*.png frames", pred.display())));
        }
        let id = gt.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_else(|| "clip".into());
        return Ok(vec![(id, pred.to_path_buf(), gt.to_path_buf())]);
    }
    let (g, p) = (subdirs(gt)?, subdirs(pred)?);
    if g.is_empty() {
        return Err(CliError::usage(format!("{}: neither a clip nor a directory of clips", gt.display())));
    }
    if g != p {
        let missing: Vec<_> = g.iter().filter(|n| !p.contains(n)).collect();
        let extra: Vec<_> = p.iter().filter(|n| !g.contains(n)).collect();
        return Err(CliError::usage(format!(
            "misaligned clips: missing predictions {missing:?}, unmatched predictions {extra:?}"
        )));
    }
    Ok(g.into_iter().map(|n| (n.clone(), pred.join(&n), gt.join(&n))).collect())
}

fn plane(dir: &Path, prefixes: &[&str], rgb: bool) -> CliResult<Option<Tensor<f32>>> {
    for p in prefixes {
        let files = list_pngs(dir, Some(p))?;
        if !files.is_empty() {
            return read_sequence(&files, rgb, dir).map(Some);
        }
    }
    Ok(None)
}

struct ClipResult {
    report: MetricReport,
    trace: Vec<f64>,
}

fn evaluate(id: &str, pred: &Path, gt: &Path, metrics: &[Metric]) -> CliResult<ClipResult> {
    let need = |d: &Path| plane(d, &["alpha"], false)?.ok_or_else(|| CliError::usage(format!("{}: no alpha frames", d.display())));
    let (a, ag) = (need(pred)?, need(gt)?);
    if a.dims() != ag.dims() {
        return Err(CliError::usage(format!(
            "misaligned clip {id}: prediction {:?}, ground truth {:?} (frames×channels×height×width)",
            a.dims(),
            ag.dims()
        )));
    }
    let fg_roles = ["fg", "foreground"];
    let want_fg = metrics.contains(&Metric::FgMse);
    let (f, fg) = if want_fg {
        (plane(pred, &fg_roles, true)?, plane(gt, &fg_roles, true)?)
    } else {
        (None, None)
    };
    if let (Some(f), Some(g)) = (&f, &fg) {
        if f.dims() != g.dims() {
            return Err(CliError::usage(format!("misaligned foreground in clip {id}: {:?} vs {:?}", f.dims(), g.dims())));
        }
    }
    let clip = ClipEval {
        alpha: &a,
        alpha_gt: &ag,
        fg: f.as_ref(),
        fg_gt: fg.as_ref(),
    };
    Ok(ClipResult {
        report: evaluate_clip(&clip, metrics)?,
        trace: mad_trace(&a, &ag)?,
    })
}

pub fn run(a: &EvalArgs) -> CliResult<()> {
    let metrics = parse_metrics(a.metrics.as_deref())?;
    let clips = pair_clips(&a.pred, &a.gt)?;
    let results = clips
        .par_iter()
        .map(|(id, p, g)| evaluate(id, p, g, &metrics))
        .collect::<CliResult<Vec<_>>>()?;

    let mut rows: Vec<(String, MetricReport)> = clips.iter().zip(&results).map(|((id, ..), r)| (id.clone(), r.report.clone())).collect();
    let reports: Vec<MetricReport> = results.iter().map(|r| r.report.clone()).collect();
    rows.push((MEAN_ROW.into(), MetricReport::mean(&reports)));
    let text = format_report(&rows);
    let dir = a.report.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    super::create_dir(dir)?;
    fs::write(&a.report, &text).map_err(|e| CliError::io(&a.report, e))?;

    let mut manifest = RunManifest::new("eval").option("metrics", metrics.iter().map(|m| m.name()).collect::<Vec<_>>());
    manifest.inputs = vec![a.pred.clone(), a.gt.clone()];
    manifest.outputs.push(super::relative(&a.report, dir));
    if let Some(path) = &a.trace {
        let mut t = String::from("clip\tframe\tmad\n");
        for ((id, ..), r) in clips.iter().zip(&results) {
            for (i, v) in r.trace.iter().enumerate() {
                let _ = writeln!(t, "{id}\t{i}\t{v:.6}");
            }
        }
        fs::write(path, t).map_err(|e| CliError::io(path, e))?;
        manifest.outputs.push(super::relative(path, dir));
    }
    manifest.write_file(&RunManifest::sidecar(&a.report))?;
    print!("{text}");
    Ok(())
}
