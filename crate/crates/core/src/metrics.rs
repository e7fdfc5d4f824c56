//! Alpha-matte quality metrics over `T×1×H×W` clips.
//!
//! Values are averaged jointly over every pixel of every frame. MAD, MSE,
//! Grad, Conn and foreground MSE are scaled by 1e3; dtSSD by 1e2.

use std::collections::VecDeque;
use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

pub const GRAD_SIGMA: f64 = 1.4;
pub const CONN_STEP: f64 = 0.1;

fn check_pair<E: Element>(op: &'static str, a: &Tensor<E>, b: &Tensor<E>) -> Result<(usize, usize, usize, usize)> {
    if a.dims() != b.dims() {
        return Err(Error::shape(op, a.dims(), b.dims()));
    }
    a.nchw()
}

fn pairs<'a, E: Element>(a: &'a Tensor<E>, b: &'a Tensor<E>) -> impl Iterator<Item = (f64, f64)> + 'a {
    a.data().iter().zip(b.data()).map(|(x, y)| (x.f64(), y.f64()))
}

pub fn mad<E: Element>(pred: &Tensor<E>, gt: &Tensor<E>) -> Result<f64> {
    check_pair("mad", pred, gt)?;
    Ok(pairs(pred, gt).map(|(p, g)| (p - g).abs()).sum::<f64>() / pred.numel() as f64 * 1e3)
}

pub fn mse<E: Element>(pred: &Tensor<E>, gt: &Tensor<E>) -> Result<f64> {
    check_pair("mse", pred, gt)?;
    Ok(pairs(pred, gt).map(|(p, g)| (p - g).powi(2)).sum::<f64>() / pred.numel() as f64 * 1e3)
}

/// Per-frame MAD (×1e3), for plotting error over time.
pub fn mad_trace<E: Element>(pred: &Tensor<E>, gt: &Tensor<E>) -> Result<Vec<f64>> {
    let (t, _, _, _) = check_pair("mad_trace", pred, gt)?;
    let per = pred.numel() / t;
    Ok((0..t)
        .map(|f| {
            let a = &pred.data()[f * per..(f + 1) * per];
            let b = &gt.data()[f * per..(f + 1) * per];
            a.iter().zip(b).map(|(x, y)| (x.f64() - y.f64()).abs()).sum::<f64>() / per as f64 * 1e3
        })
        .collect())
}

/// Separable factors of the Gaussian-derivative kernel: `h_x[i][j] = smooth[i] · deriv[j]`, unit L2 norm.
pub fn gaussian_derivative_taps(sigma: f64) -> (Vec<f64>, Vec<f64>) {
    let eps = 1e-2f64;
    let half = (sigma * (-2.0 * ((2.0 * std::f64::consts::PI).sqrt() * sigma * eps).ln()).sqrt()).ceil() as isize;
    let gauss = |x: f64| (-x * x / (2.0 * sigma * sigma)).exp() / (sigma * (2.0 * std::f64::consts::PI).sqrt());
    let smooth: Vec<f64> = (-half..=half).map(|u| gauss(u as f64)).collect();
    let deriv: Vec<f64> = (-half..=half).map(|u| -(u as f64) * gauss(u as f64) / (sigma * sigma)).collect();
    let norm = (smooth.iter().map(|s| s * s).sum::<f64>() * deriv.iter().map(|d| d * d).sum::<f64>()).sqrt();
    let smooth = smooth.iter().map(|s| s / norm).collect();
    (smooth, deriv)
}

/// 1-D correlation along rows (`horizontal`) or columns with replicated borders.
fn correlate_1d(src: &[f64], h: usize, w: usize, taps: &[f64], horizontal: bool) -> Vec<f64> {
    let half = (taps.len() / 2) as isize;
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (k, &t) in taps.iter().enumerate() {
                let o = k as isize - half;
                let (sy, sx) = if horizontal {
                    (y as isize, (x as isize + o).clamp(0, w as isize - 1))
                } else {
                    ((y as isize + o).clamp(0, h as isize - 1), x as isize)
                };
                acc += t * src[sy as usize * w + sx as usize];
            }
            out[y * w + x] = acc;
        }
    }
    out
}

/// Gradient magnitude of one plane with Gaussian-derivative filters.
pub fn gradient_magnitude(plane: &[f64], h: usize, w: usize, sigma: f64) -> Vec<f64> {
    let (smooth, deriv) = gaussian_derivative_taps(sigma);
    let gx = correlate_1d(&correlate_1d(plane, h, w, &smooth, false), h, w, &deriv, true);
    let gy = correlate_1d(&correlate_1d(plane, h, w, &smooth, true), h, w, &deriv, false);
    gx.iter().zip(&gy).map(|(a, b)| (a * a + b * b).sqrt()).collect()
}

fn frames_f64<E: Element>(t: &Tensor<E>) -> Vec<Vec<f64>> {
    let (n, c, h, w) = t.nchw().expect("checked rank");
    t.data()
        .chunks(c * h * w)
        .take(n)
        .map(|f| f.iter().map(|v| v.f64()).collect())
        .collect()
}

/// Squared difference of gradient magnitudes, summed then divided by the pixel count, ×1e3.
pub fn grad_metric<E: Element>(pred: &Tensor<E>, gt: &Tensor<E>) -> Result<f64> {
    let (_, c, h, w) = check_pair("grad", pred, gt)?;
    if c != 1 {
        return Err(Error::shape("grad (single channel)", pred.dims(), &[pred.dims()[0], 1, h, w]));
    }
    let mut sum = 0.0;
    for (p, g) in frames_f64(pred).iter().zip(frames_f64(gt).iter()) {
        let mp = gradient_magnitude(p, h, w, GRAD_SIGMA);
        let mg = gradient_magnitude(g, h, w, GRAD_SIGMA);
        sum += mp.iter().zip(&mg).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
    }
    Ok(sum / pred.numel() as f64 * 1e3)
}

/// Mask of the largest 4-connected component of `mask`; ties go to the component met first in raster order.
pub fn largest_component(mask: &[bool], h: usize, w: usize) -> Vec<bool> {
    let mut label = vec![0u32; h * w];
    let mut best = (0usize, 0u32);
    let mut next = 0u32;
    let mut queue = VecDeque::new();
    for start in 0..h * w {
        if !mask[start] || label[start] != 0 {
            continue;
        }
        next += 1;
        label[start] = next;
        queue.push_back(start);
        let mut size = 0;
        while let Some(i) = queue.pop_front() {
            size += 1;
            let (y, x) = (i / w, i % w);
            let mut visit = |j: usize| {
                if mask[j] && label[j] == 0 {
                    label[j] = next;
                    queue.push_back(j);
                }
            };
            if y > 0 {
                visit(i - w);
            }
            if y + 1 < h {
                visit(i + w);
            }
            if x > 0 {
                visit(i - 1);
            }
            if x + 1 < w {
                visit(i + 1);
            }
        }
        if size > best.0 {
            best = (size, next);
        }
    }
    label.iter().map(|&l| best.1 != 0 && l == best.1).collect()
}

/// Connectivity error of one plane (unscaled sum of `|φ_pred − φ_gt|`).
pub fn conn_plane(pred: &[f64], gt: &[f64], h: usize, w: usize, step: f64) -> f64 {
    let steps = (1.0 / step).round() as usize;
    let mut round_down: Vec<Option<f64>> = vec![None; h * w];
    for k in 1..steps {
        let theta = k as f64 * step;
        let inter: Vec<bool> = pred.iter().zip(gt).map(|(&p, &g)| p >= theta && g >= theta).collect();
        let omega = largest_component(&inter, h, w);
        let prev = (k - 1) as f64 * step;
        for (rd, &in_omega) in round_down.iter_mut().zip(&omega) {
            if rd.is_none() && !in_omega {
                *rd = Some(prev);
            }
        }
    }
    let phi = |v: f64, l: f64| {
        let d = v - l;
        if d >= 0.15 {
            1.0 - d
        } else {
            1.0
        }
    };
    round_down
        .iter()
        .zip(pred.iter().zip(gt))
        .map(|(rd, (&p, &g))| {
            let l = rd.unwrap_or(1.0);
            (phi(p, l) - phi(g, l)).abs()
        })
        .sum()
}

/// Threshold-sweep connectivity error, averaged over pixels, ×1e3.
pub fn conn_metric<E: Element>(pred: &Tensor<E>, gt: &Tensor<E>, step: f64) -> Result<f64> {
    let (_, c, h, w) = check_pair("conn", pred, gt)?;
    if c != 1 {
        return Err(Error::shape("conn (single channel)", pred.dims(), &[pred.dims()[0], 1, h, w]));
    }
    if !(step > 0.0 && step < 1.0) {
        return Err(Error::Param(format!("conn step must lie in (0, 1), got {step}")));
    }
    let sum: f64 = frames_f64(pred)
        .iter()
        .zip(frames_f64(gt).iter())
        .map(|(p, g)| conn_plane(p, g, h, w, step))
        .sum();
    Ok(sum / pred.numel() as f64 * 1e3)
}

/// Mean over frame pairs of `√mean((Δα_t − Δα*_t)²)`, ×1e2.
pub fn dtssd<E: Element>(pred: &Tensor<E>, gt: &Tensor<E>) -> Result<f64> {
    let (t, _, _, _) = check_pair("dtssd", pred, gt)?;
    if t < 2 {
        return Err(Error::Contract(format!("dtSSD needs at least 2 frames, got {t}")));
    }
    let per = pred.numel() / t;
    let (p, g) = (pred.data(), gt.data());
    let mut total = 0.0;
    for f in 1..t {
        let sq: f64 = (0..per)
            .map(|i| {
                let dp = p[f * per + i].f64() - p[(f - 1) * per + i].f64();
                let dg = g[f * per + i].f64() - g[(f - 1) * per + i].f64();
                (dp - dg).powi(2)
            })
            .sum();
        total += (sq / per as f64).sqrt();
    }
    Ok(total / (t - 1) as f64 * 1e2)
}

/// Squared foreground error over pixels with `α* > 0`, ×1e3; 0 when none qualify.
pub fn fg_mse<E: Element>(fg: &Tensor<E>, fg_gt: &Tensor<E>, alpha_gt: &Tensor<E>) -> Result<f64> {
    let (n, c, h, w) = check_pair("fg_mse", fg, fg_gt)?;
    if alpha_gt.dims() != [n, 1, h, w] {
        return Err(Error::shape("fg_mse mask", alpha_gt.dims(), &[n, 1, h, w]));
    }
    let hw = h * w;
    let (mut sum, mut count) = (0.0, 0usize);
    for b in 0..n {
        for px in 0..hw {
            if alpha_gt.data()[b * hw + px] > E::zero() {
                for ch in 0..c {
                    let i = (b * c + ch) * hw + px;
                    sum += (fg.data()[i].f64() - fg_gt.data()[i].f64()).powi(2);
                    count += 1;
                }
            }
        }
    }
    Ok(if count == 0 { 0.0 } else { sum / count as f64 * 1e3 })
}

pub fn alpha_to_mask<E: Element>(alpha: &Tensor<E>, threshold: f64) -> Vec<bool> {
    alpha.data().iter().map(|v| v.f64() > threshold).collect()
}

/// Mean IOU of the foreground and background classes; a class absent from both masks scores 1.
pub fn miou(pred: &[bool], gt: &[bool]) -> Result<f64> {
    if pred.len() != gt.len() {
        return Err(Error::shape("miou", &[pred.len()], &[gt.len()]));
    }
    let iou = |class: bool| {
        let inter = pred.iter().zip(gt).filter(|(&p, &g)| p == class && g == class).count();
        let union = pred.iter().zip(gt).filter(|(&p, &g)| p == class || g == class).count();
        if union == 0 {
            1.0
        } else {
            inter as f64 / union as f64
        }
    };
    Ok((iou(true) + iou(false)) / 2.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Mad,
    Mse,
    Grad,
    Conn,
    Dtssd,
    FgMse,
    Miou,
}

impl Metric {
    pub const ALL: [Metric; 7] = [
        Metric::Mad,
        Metric::Mse,
        Metric::Grad,
        Metric::Conn,
        Metric::Dtssd,
        Metric::FgMse,
        Metric::Miou,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Mad => "mad",
            Metric::Mse => "mse",
            Metric::Grad => "grad",
            Metric::Conn => "conn",
            Metric::Dtssd => "dtssd",
            Metric::FgMse => "fg_mse",
            Metric::Miou => "miou",
        }
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Metric::ALL
            .into_iter()
            .find(|m| m.name() == s.trim().to_ascii_lowercase())
            .ok_or_else(|| Error::Param(format!("unknown metric `{s}`")))
    }
}

/// Scaled metric values of one clip; absent entries were not requested or not computable.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub mad: Option<f64>,
    pub mse: Option<f64>,
    pub grad: Option<f64>,
    pub conn: Option<f64>,
    pub dtssd: Option<f64>,
    pub fg_mse: Option<f64>,
    pub miou: Option<f64>,
}

impl MetricReport {
    pub fn get(&self, m: Metric) -> Option<f64> {
        match m {
            Metric::Mad => self.mad,
            Metric::Mse => self.mse,
            Metric::Grad => self.grad,
            Metric::Conn => self.conn,
            Metric::Dtssd => self.dtssd,
            Metric::FgMse => self.fg_mse,
            Metric::Miou => self.miou,
        }
    }

    fn slot(&mut self, m: Metric) -> &mut Option<f64> {
        match m {
            Metric::Mad => &mut self.mad,
            Metric::Mse => &mut self.mse,
            Metric::Grad => &mut self.grad,
            Metric::Conn => &mut self.conn,
            Metric::Dtssd => &mut self.dtssd,
            Metric::FgMse => &mut self.fg_mse,
            Metric::Miou => &mut self.miou,
        }
    }

    /// Mean of each metric over the reports that carry it.
    pub fn mean(reports: &[MetricReport]) -> MetricReport {
        let mut out = MetricReport::default();
        for m in Metric::ALL {
            let vals: Vec<f64> = reports.iter().filter_map(|r| r.get(m)).collect();
            if !vals.is_empty() {
                *out.slot(m) = Some(vals.iter().sum::<f64>() / vals.len() as f64);
            }
        }
        out
    }
}

/// Predictions and ground truth of one clip.
pub struct ClipEval<'a, E: Element> {
    pub alpha: &'a Tensor<E>,
    pub alpha_gt: &'a Tensor<E>,
    pub fg: Option<&'a Tensor<E>>,
    pub fg_gt: Option<&'a Tensor<E>>,
}

pub fn evaluate_clip<E: Element>(clip: &ClipEval<'_, E>, metrics: &[Metric]) -> Result<MetricReport> {
    let mut r = MetricReport::default();
    let (a, g) = (clip.alpha, clip.alpha_gt);
    for &m in metrics {
        let v = match m {
            Metric::Mad => Some(mad(a, g)?),
            Metric::Mse => Some(mse(a, g)?),
            Metric::Grad => Some(grad_metric(a, g)?),
            Metric::Conn => Some(conn_metric(a, g, CONN_STEP)?),
            Metric::Dtssd => (a.dims()[0] >= 2).then(|| dtssd(a, g)).transpose()?,
            Metric::FgMse => match (clip.fg, clip.fg_gt) {
                (Some(f), Some(fg)) => Some(fg_mse(f, fg, g)?),
                _ => None,
            },
            Metric::Miou => Some(miou(&alpha_to_mask(a, 0.5), &alpha_to_mask(g, 0.5))?),
        };
        *r.slot(m) = v;
    }
    Ok(r)
}

/// One `clip<TAB>metric<TAB>value` line per present metric, values in fixed 6-decimal notation.
pub fn format_report(rows: &[(String, MetricReport)]) -> String {
    let mut out = String::from("clip\tmetric\tvalue\n");
    for (clip, r) in rows {
        for m in Metric::ALL {
            if let Some(v) = r.get(m) {
                let _ = writeln!(out, "{clip}\t{}\t{v:.6}", m.name());
            }
        }
    }
    out
}

/// Inverse of [`format_report`].
pub fn parse_report(text: &str) -> Result<Vec<(String, MetricReport)>> {
    let mut rows: Vec<(String, MetricReport)> = Vec::new();
    for (n, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        let [clip, metric, value] = f[..] else {
            return Err(Error::Format(format!("report line {}: expected 3 fields", n + 1)));
        };
        let m: Metric = metric.parse()?;
        let v: f64 = value
            .parse()
            .map_err(|_| Error::Format(format!("report line {}: bad value `{value}`", n + 1)))?;
        if rows.last().is_none_or(|(c, _)| c != clip) {
            rows.push((clip.to_string(), MetricReport::default()));
        }
        *rows.last_mut().expect("pushed").1.slot(m) = Some(v);
    }
    Ok(rows)
}
