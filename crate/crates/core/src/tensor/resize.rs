//! Spatial resampling kernels over the last two axes of `N×C×H×W` tensors.

use super::{Element, Shape, Tensor};
use crate::error::{Error, Result};

fn planes<E: Element>(x: &Tensor<E>) -> Result<(usize, usize, usize, usize)> {
    x.nchw()
}

/// 2×2 mean pooling with stride 2. Odd extents replicate the last row/column.
pub fn avg_pool_2x2<E: Element>(x: &Tensor<E>) -> Result<Tensor<E>> {
    let (n, c, h, w) = planes(x)?;
    let (ho, wo) = (h.div_ceil(2), w.div_ceil(2));
    let quarter = E::of(0.25);
    let mut out = Vec::with_capacity(n * c * ho * wo);
    for plane in x.data().chunks(h * w) {
        for oy in 0..ho {
            let (y0, y1) = (2 * oy, (2 * oy + 1).min(h - 1));
            for ox in 0..wo {
                let (x0, x1) = (2 * ox, (2 * ox + 1).min(w - 1));
                let s = plane[y0 * w + x0] + plane[y0 * w + x1] + plane[y1 * w + x0] + plane[y1 * w + x1];
                out.push(s * quarter);
            }
        }
    }
    Ok(Tensor::from_parts(Shape(vec![n, c, ho, wo]), out))
}

pub fn avg_pool_2x2_backward<E: Element>(src: &Shape, grad: &Tensor<E>) -> Result<Tensor<E>> {
    let (_, _, h, w) = src.nchw()?;
    let (ho, wo) = (h.div_ceil(2), w.div_ceil(2));
    let quarter = E::of(0.25);
    let mut out = vec![E::zero(); src.numel()];
    for (plane, g) in out.chunks_mut(h * w).zip(grad.data().chunks(ho * wo)) {
        for oy in 0..ho {
            let (y0, y1) = (2 * oy, (2 * oy + 1).min(h - 1));
            for ox in 0..wo {
                let (x0, x1) = (2 * ox, (2 * ox + 1).min(w - 1));
                let v = g[oy * wo + ox] * quarter;
                for idx in [y0 * w + x0, y0 * w + x1, y1 * w + x0, y1 * w + x1] {
                    plane[idx] = plane[idx] + v;
                }
            }
        }
    }
    Ok(Tensor::from_parts(src.clone(), out))
}

/// Mean over each `H×W` plane, shaped `N×C×1×1`.
pub fn global_avg_pool<E: Element>(x: &Tensor<E>) -> Result<Tensor<E>> {
    let (n, c, h, w) = planes(x)?;
    let inv = E::of(1.0 / (h * w) as f64);
    let out = x.data().chunks(h * w).map(|p| p.iter().copied().sum::<E>() * inv).collect();
    Ok(Tensor::from_parts(Shape(vec![n, c, 1, 1]), out))
}

pub fn global_avg_pool_backward<E: Element>(src: &Shape, grad: &Tensor<E>) -> Result<Tensor<E>> {
    let (_, _, h, w) = src.nchw()?;
    let inv = E::of(1.0 / (h * w) as f64);
    let mut out = Vec::with_capacity(src.numel());
    for &g in grad.data() {
        out.extend(std::iter::repeat_n(g * inv, h * w));
    }
    Ok(Tensor::from_parts(src.clone(), out))
}

/// Source taps `(i0, i1, weight_of_i1)` for each output coordinate along one axis.
pub(crate) fn bilinear_taps(input: usize, output: usize, align_corners: bool) -> Vec<(usize, usize, f64)> {
    (0..output)
        .map(|o| {
            let src = if align_corners {
                if output == 1 {
                    0.0
                } else {
                    o as f64 * (input - 1) as f64 / (output - 1) as f64
                }
            } else {
                ((o as f64 + 0.5) * input as f64 / output as f64 - 0.5).max(0.0)
            };
            let i0 = (src.floor() as usize).min(input - 1);
            let i1 = (i0 + 1).min(input - 1);
            (i0, i1, src - i0 as f64)
        })
        .collect()
}

pub fn bilinear_resize<E: Element>(x: &Tensor<E>, out_h: usize, out_w: usize, align_corners: bool) -> Result<Tensor<E>> {
    let (n, c, h, w) = planes(x)?;
    if out_h == 0 || out_w == 0 {
        return Err(Error::Param(format!("bilinear_resize to {out_h}x{out_w}")));
    }
    if (out_h, out_w) == (h, w) {
        return Ok(x.clone());
    }
    let ty = bilinear_taps(h, out_h, align_corners);
    let tx = bilinear_taps(w, out_w, align_corners);
    let mut out = Vec::with_capacity(n * c * out_h * out_w);
    for plane in x.data().chunks(h * w) {
        for &(y0, y1, ly) in &ty {
            let (ly1, ly0) = (E::of(ly), E::of(1.0 - ly));
            for &(x0, x1, lx) in &tx {
                let (lx1, lx0) = (E::of(lx), E::of(1.0 - lx));
                let top = plane[y0 * w + x0] * lx0 + plane[y0 * w + x1] * lx1;
                let bottom = plane[y1 * w + x0] * lx0 + plane[y1 * w + x1] * lx1;
                out.push(top * ly0 + bottom * ly1);
            }
        }
    }
    Ok(Tensor::from_parts(Shape(vec![n, c, out_h, out_w]), out))
}

pub fn bilinear_resize_backward<E: Element>(src: &Shape, grad: &Tensor<E>, align_corners: bool) -> Result<Tensor<E>> {
    let (_, _, h, w) = src.nchw()?;
    let (_, _, out_h, out_w) = grad.nchw()?;
    if (out_h, out_w) == (h, w) {
        return Ok(grad.clone());
    }
    let ty = bilinear_taps(h, out_h, align_corners);
    let tx = bilinear_taps(w, out_w, align_corners);
    let mut out = vec![E::zero(); src.numel()];
    for (plane, g) in out.chunks_mut(h * w).zip(grad.data().chunks(out_h * out_w)) {
        for (oy, &(y0, y1, ly)) in ty.iter().enumerate() {
            let (ly1, ly0) = (E::of(ly), E::of(1.0 - ly));
            for (ox, &(x0, x1, lx)) in tx.iter().enumerate() {
                let (lx1, lx0) = (E::of(lx), E::of(1.0 - lx));
                let v = g[oy * out_w + ox];
                plane[y0 * w + x0] = plane[y0 * w + x0] + v * ly0 * lx0;
                plane[y0 * w + x1] = plane[y0 * w + x1] + v * ly0 * lx1;
                plane[y1 * w + x0] = plane[y1 * w + x0] + v * ly1 * lx0;
                plane[y1 * w + x1] = plane[y1 * w + x1] + v * ly1 * lx1;
            }
        }
    }
    Ok(Tensor::from_parts(src.clone(), out))
}

#[inline]
fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let r = if i < 0 { -i } else if i >= n { 2 * (n - 1) - i } else { i };
    r as usize
}

/// Mirror padding without edge repetition on all four sides.
pub fn reflect_pad<E: Element>(x: &Tensor<E>, pad: usize) -> Result<Tensor<E>> {
    let (n, c, h, w) = planes(x)?;
    if pad >= h || pad >= w {
        return Err(Error::Param(format!("reflect pad {pad} needs extents > pad, got {h}x{w}")));
    }
    let (ph, pw) = (h + 2 * pad, w + 2 * pad);
    let mut out = Vec::with_capacity(n * c * ph * pw);
    for plane in x.data().chunks(h * w) {
        for y in 0..ph {
            let sy = reflect(y as isize - pad as isize, h);
            for xx in 0..pw {
                out.push(plane[sy * w + reflect(xx as isize - pad as isize, w)]);
            }
        }
    }
    Ok(Tensor::from_parts(Shape(vec![n, c, ph, pw]), out))
}

pub fn reflect_pad_backward<E: Element>(src: &Shape, grad: &Tensor<E>, pad: usize) -> Result<Tensor<E>> {
    let (_, _, h, w) = src.nchw()?;
    let (ph, pw) = (h + 2 * pad, w + 2 * pad);
    let mut out = vec![E::zero(); src.numel()];
    for (plane, g) in out.chunks_mut(h * w).zip(grad.data().chunks(ph * pw)) {
        for y in 0..ph {
            let sy = reflect(y as isize - pad as isize, h);
            for xx in 0..pw {
                let idx = sy * w + reflect(xx as isize - pad as isize, w);
                plane[idx] = plane[idx] + g[y * pw + xx];
            }
        }
    }
    Ok(Tensor::from_parts(src.clone(), out))
}

/// Places `x[i, j]` at `(2i, 2j)` of an `out_h×out_w` zero plane.
pub fn zero_insert<E: Element>(x: &Tensor<E>, out_h: usize, out_w: usize) -> Result<Tensor<E>> {
    let (n, c, h, w) = planes(x)?;
    if out_h.div_ceil(2) != h || out_w.div_ceil(2) != w {
        return Err(Error::shape("zero_insert", x.dims(), &[n, c, out_h, out_w]));
    }
    let mut out = vec![E::zero(); n * c * out_h * out_w];
    for (dst, plane) in out.chunks_mut(out_h * out_w).zip(x.data().chunks(h * w)) {
        for y in 0..h {
            for xx in 0..w {
                dst[2 * y * out_w + 2 * xx] = plane[y * w + xx];
            }
        }
    }
    Ok(Tensor::from_parts(Shape(vec![n, c, out_h, out_w]), out))
}

/// Keeps even rows and columns.
pub fn subsample2<E: Element>(x: &Tensor<E>) -> Result<Tensor<E>> {
    let (n, c, h, w) = planes(x)?;
    let (ho, wo) = (h.div_ceil(2), w.div_ceil(2));
    let mut out = Vec::with_capacity(n * c * ho * wo);
    for plane in x.data().chunks(h * w) {
        for y in 0..ho {
            for xx in 0..wo {
                out.push(plane[2 * y * w + 2 * xx]);
            }
        }
    }
    Ok(Tensor::from_parts(Shape(vec![n, c, ho, wo]), out))
}

/// Mean over the `(2r+1)²` window clipped to the image, per plane.
pub fn box_filter<E: Element>(x: &Tensor<E>, radius: usize) -> Result<Tensor<E>> {
    let (_, _, h, w) = planes(x)?;
    let mut out = x.to_vec();
    for plane in out.chunks_mut(h * w) {
        box_pass(plane, h, w, radius, false);
    }
    Ok(Tensor::from_parts(x.shape().clone(), out))
}

pub fn box_filter_backward<E: Element>(grad: &Tensor<E>, radius: usize) -> Result<Tensor<E>> {
    let (_, _, h, w) = planes(grad)?;
    let mut out = grad.to_vec();
    for plane in out.chunks_mut(h * w) {
        box_pass(plane, h, w, radius, true);
    }
    Ok(Tensor::from_parts(grad.shape().clone(), out))
}

/// Separable normalised box filter in place; `adjoint` applies the transpose.
fn box_pass<E: Element>(plane: &mut [E], h: usize, w: usize, r: usize, adjoint: bool) {
    let mean_1d = |line: &mut Vec<E>| {
        let n = line.len();
        let src = line.clone();
        let count = |i: usize| (i + r + 1).min(n) - i.saturating_sub(r);
        if adjoint {
            for (j, dst) in line.iter_mut().enumerate() {
                let lo = j.saturating_sub(r);
                let hi = (j + r + 1).min(n);
                *dst = (lo..hi).map(|i| src[i] / E::of(count(i) as f64)).sum();
            }
        } else {
            for (i, dst) in line.iter_mut().enumerate() {
                let lo = i.saturating_sub(r);
                let hi = (i + r + 1).min(n);
                *dst = src[lo..hi].iter().copied().sum::<E>() / E::of(count(i) as f64);
            }
        }
    };
    let mut line = Vec::with_capacity(w.max(h));
    for y in 0..h {
        line.clear();
        line.extend_from_slice(&plane[y * w..(y + 1) * w]);
        mean_1d(&mut line);
        plane[y * w..(y + 1) * w].copy_from_slice(&line);
    }
    for x in 0..w {
        line.clear();
        line.extend((0..h).map(|y| plane[y * w + x]));
        mean_1d(&mut line);
        for (y, &v) in line.iter().enumerate() {
            plane[y * w + x] = v;
        }
    }
}
