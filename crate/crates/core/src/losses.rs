//! Matting and segmentation objectives.
//!
//! Sequences arrive flattened as `(B·T)×C×H×W`, batch-major; temporal terms
//! difference adjacent frames within each clip only.

use serde::{Deserialize, Serialize};

use crate::autograd::Var;
use crate::error::{Error, Result};
use crate::tensor::{Conv2dSpec, Element, Tensor};

pub const PYRAMID_LEVELS: usize = 5;

/// Weights of (l1_alpha, lap_alpha, tc_alpha, l1_fg, tc_fg) in the total matting loss.
pub const MATTING_WEIGHTS: [f64; 5] = [1.0, 1.0, 5.0, 1.0, 5.0];

/// Scalar loss values of one batch.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub l1_alpha: f64,
    pub lap_alpha: f64,
    pub tc_alpha: f64,
    pub l1_fg: f64,
    pub tc_fg: f64,
    pub total_matting: f64,
    pub seg_bce: f64,
}

/// Weighted sum of the five matting components.
pub fn total_matting_loss(l1_alpha: f64, lap_alpha: f64, tc_alpha: f64, l1_fg: f64, tc_fg: f64) -> f64 {
    let c = [l1_alpha, lap_alpha, tc_alpha, l1_fg, tc_fg];
    c.iter().zip(MATTING_WEIGHTS).map(|(v, w)| v * w).sum()
}

fn same_shape<E: Element>(op: &'static str, a: &Var<'_, E>, b: &Var<'_, E>) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::shape(op, a.dims(), b.dims()));
    }
    Ok(())
}

/// Mean absolute difference over every element.
pub fn l1_loss<'t, E: Element>(pred: &Var<'t, E>, gt: &Var<'t, E>) -> Result<Var<'t, E>> {
    same_shape("l1_loss", pred, gt)?;
    Ok(pred.sub(gt)?.abs().mean())
}

/// 5-tap binomial kernel `(1, 4, 6, 4, 1)/16` as a separable `5×5` outer product, scaled by `gain`.
fn gaussian_weight<E: Element>(channels: usize, gain: f64) -> Tensor<E> {
    const TAPS: [f64; 5] = [1.0, 4.0, 6.0, 4.0, 1.0];
    Tensor::from_fn(vec![channels, 1, 5, 5], |i| {
        let (y, x) = ((i % 25) / 5, i % 5);
        E::of(gain * TAPS[y] * TAPS[x] / 256.0)
    })
    .expect("positive extents")
}

fn blur<'t, E: Element>(x: &Var<'t, E>, gain: f64) -> Result<Var<'t, E>> {
    let c = x.dims()[1];
    let w = x.tape().constant(gaussian_weight(c, gain));
    x.reflect_pad(2)?.conv2d(&w, None, Conv2dSpec::default().with_groups(c))
}

fn crop_even<'t, E: Element>(x: &Var<'t, E>) -> Result<Var<'t, E>> {
    let (_, _, h, w) = x.value().nchw()?;
    let mut y = x.clone();
    if h % 2 == 1 {
        y = y.narrow(2, 0, h - 1)?;
    }
    if w % 2 == 1 {
        y = y.narrow(3, 0, w - 1)?;
    }
    Ok(y)
}

/// Laplacian pyramid: `levels − 1` band-pass levels followed by the low-pass residual.
pub fn laplacian_pyramid<'t, E: Element>(x: &Var<'t, E>, levels: usize) -> Result<Vec<Var<'t, E>>> {
    let (_, _, h, w) = x.value().nchw()?;
    let min = 1usize << levels;
    if levels == 0 || h < min || w < min {
        return Err(Error::Param(format!(
            "{levels}-level pyramid needs extents of at least {min}, got {h}×{w}"
        )));
    }
    let mut out = Vec::with_capacity(levels);
    let mut current = x.clone();
    for _ in 1..levels {
        current = crop_even(&current)?;
        let (_, _, ch, cw) = current.value().nchw()?;
        let down = blur(&current, 1.0)?.subsample2()?;
        let up = blur(&down.zero_insert(ch, cw)?, 4.0)?;
        out.push(current.sub(&up)?);
        current = down;
    }
    out.push(current);
    Ok(out)
}

/// `Σ_s 2^{s−1}/L · L1(pyr_s(pred), pyr_s(gt))` over `L` levels, finest first.
pub fn laplacian_pyramid_loss<'t, E: Element>(pred: &Var<'t, E>, gt: &Var<'t, E>, levels: usize) -> Result<Var<'t, E>> {
    same_shape("laplacian_pyramid_loss", pred, gt)?;
    let p = laplacian_pyramid(pred, levels)?;
    let g = laplacian_pyramid(gt, levels)?;
    let mut total: Option<Var<'t, E>> = None;
    for (s, (a, b)) in p.iter().zip(&g).enumerate() {
        let term = l1_loss(a, b)?.scale((1u64 << s) as f64 / levels as f64);
        total = Some(match total {
            None => term,
            Some(t) => t.add(&term)?,
        });
    }
    Ok(total.expect("at least one level"))
}

/// Row indices `(current, previous)` of every adjacent frame pair.
fn frame_pairs(batch: usize, frames: usize) -> (Vec<usize>, Vec<usize>) {
    let mut cur = Vec::new();
    let mut prev = Vec::new();
    for b in 0..batch {
        for t in 1..frames {
            cur.push(b * frames + t);
            prev.push(b * frames + t - 1);
        }
    }
    (cur, prev)
}

fn check_seq<E: Element>(x: &Var<'_, E>, batch: usize, frames: usize) -> Result<()> {
    if frames < 2 {
        return Err(Error::Contract(format!("temporal loss needs at least 2 frames, got {frames}")));
    }
    if x.dims()[0] != batch * frames {
        return Err(Error::shape("temporal loss rows", x.dims(), &[batch * frames]));
    }
    Ok(())
}

/// `x_t − x_{t−1}` for every adjacent pair.
fn temporal_diff<'t, E: Element>(x: &Var<'t, E>, batch: usize, frames: usize) -> Result<Var<'t, E>> {
    let (cur, prev) = frame_pairs(batch, frames);
    x.gather_rows(&cur)?.sub(&x.gather_rows(&prev)?)
}

/// Mean over the clip of `(dα/dt − dα*/dt)²` with forward frame differences.
pub fn temporal_coherence<'t, E: Element>(
    pred: &Var<'t, E>,
    gt: &Var<'t, E>,
    batch: usize,
    frames: usize,
) -> Result<Var<'t, E>> {
    same_shape("temporal_coherence", pred, gt)?;
    check_seq(pred, batch, frames)?;
    let dp = temporal_diff(pred, batch, frames)?;
    let dg = temporal_diff(gt, batch, frames)?;
    Ok(dp.sub(&dg)?.square().mean())
}

/// `1` where `α* > 0`, repeated over `channels`.
fn mask_from_alpha<E: Element>(alpha_gt: &Tensor<E>, channels: usize) -> Result<(Tensor<E>, usize)> {
    let (n, _, h, w) = alpha_gt.nchw()?;
    let hw = h * w;
    let a = alpha_gt.data();
    let mut count = 0;
    let mask = Tensor::from_fn(vec![n, channels, h, w], |i| {
        let (b, px) = (i / (channels * hw), i % hw);
        if a[b * hw + px] > E::zero() {
            count += 1;
            E::one()
        } else {
            E::zero()
        }
    })?;
    Ok((mask, count))
}

fn masked_mean<'t, E: Element>(x: &Var<'t, E>, mask: Tensor<E>, count: usize) -> Result<Var<'t, E>> {
    if count == 0 {
        return Ok(x.tape().constant(Tensor::scalar(E::zero())));
    }
    Ok(x.mul(&x.tape().constant(mask))?.sum().scale(1.0 / count as f64))
}

/// `(l1_fg, tc_fg)` restricted to pixels with `α* > 0`; each is 0 when no pixel qualifies.
pub fn foreground_losses<'t, E: Element>(
    fg: &Var<'t, E>,
    fg_gt: &Var<'t, E>,
    alpha_gt: &Tensor<E>,
    batch: usize,
    frames: usize,
) -> Result<(Var<'t, E>, Var<'t, E>)> {
    same_shape("foreground_losses", fg, fg_gt)?;
    let c = fg.dims()[1];
    let (mask, count) = mask_from_alpha(alpha_gt, c)?;
    let l1 = masked_mean(&fg.sub(fg_gt)?.abs(), mask.clone(), count)?;
    let tc = if frames < 2 {
        fg.tape().constant(Tensor::scalar(E::zero()))
    } else {
        check_seq(fg, batch, frames)?;
        let d = temporal_diff(fg, batch, frames)?.sub(&temporal_diff(fg_gt, batch, frames)?)?;
        let (cur, _) = frame_pairs(batch, frames);
        let cur_mask = crate::tensor::kernels::gather_rows(&mask, &cur)?;
        let cur_count = cur_mask.data().iter().filter(|&&v| v > E::zero()).count();
        masked_mean(&d.square(), cur_mask, cur_count)?
    };
    Ok((l1, tc))
}

/// Binary cross-entropy of `sigmoid(logits)` against `{0, 1}` targets, via `softplus(x) − x·y`.
pub fn segmentation_bce<'t, E: Element>(logits: &Var<'t, E>, gt: &Var<'t, E>) -> Result<Var<'t, E>> {
    same_shape("segmentation_bce", logits, gt)?;
    Ok(logits.softplus().sub(&logits.mul(gt)?)?.mean())
}

/// Ground truth of one matting batch.
pub struct MattingTargets<'a, E: Element> {
    pub alpha: &'a Tensor<E>,
    pub foreground: &'a Tensor<E>,
    pub batch: usize,
    pub frames: usize,
}

/// Total matting loss and its components. Clips of one frame contribute no temporal terms.
pub fn matting_loss<'t, E: Element>(
    alpha: &Var<'t, E>,
    foreground: &Var<'t, E>,
    gt: &MattingTargets<'_, E>,
) -> Result<(Var<'t, E>, LossReport)> {
    let tape = alpha.tape();
    let a_gt = tape.constant(gt.alpha.clone());
    let f_gt = tape.constant(gt.foreground.clone());
    let l1a = l1_loss(alpha, &a_gt)?;
    let lap = laplacian_pyramid_loss(alpha, &a_gt, PYRAMID_LEVELS)?;
    let tca = if gt.frames >= 2 {
        temporal_coherence(alpha, &a_gt, gt.batch, gt.frames)?
    } else {
        log::warn!("temporal coherence skipped for single-frame clips");
        tape.constant(Tensor::scalar(E::zero()))
    };
    let (l1f, tcf) = foreground_losses(foreground, &f_gt, gt.alpha, gt.batch, gt.frames)?;
    let total = l1a
        .add(&lap)?
        .add(&tca.scale(MATTING_WEIGHTS[2]))?
        .add(&l1f)?
        .add(&tcf.scale(MATTING_WEIGHTS[4]))?;
    let v = |x: &Var<'t, E>| x.value().data()[0].f64();
    let report = LossReport {
        l1_alpha: v(&l1a),
        lap_alpha: v(&lap),
        tc_alpha: v(&tca),
        l1_fg: v(&l1f),
        tc_fg: v(&tcf),
        total_matting: v(&total),
        seg_bce: 0.0,
    };
    Ok((total, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::Tape;

    #[test]
    fn eq_weights() {
        assert_eq!(total_matting_loss(1.0, 1.0, 1.0, 1.0, 1.0), 13.0);
        assert_eq!(total_matting_loss(0.0, 0.0, 0.0, 0.0, 0.0), 0.0);
    }

    #[test]
    fn bce_at_half_is_ln2() {
        let tape = Tape::<f64>::no_grad();
        let x = tape.constant(Tensor::zeros(vec![1, 1, 2, 2]).unwrap());
        let y = tape.constant(Tensor::from_vec(vec![1, 1, 2, 2], vec![0.0, 1.0, 1.0, 0.0]).unwrap());
        let l = segmentation_bce(&x, &y).unwrap();
        assert!((l.value().data()[0] - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn small_pyramid_rejected() {
        let tape = Tape::<f32>::no_grad();
        let x = tape.constant(Tensor::zeros(vec![1, 1, 16, 64]).unwrap());
        assert!(laplacian_pyramid_loss(&x, &x, 5).is_err());
    }
}
