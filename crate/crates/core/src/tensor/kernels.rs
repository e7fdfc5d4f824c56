//! Layout and reduction kernels: concat, narrow, batch gather, channel gating.

use super::{Element, Shape, Tensor};
use crate::error::{Error, Result};

/// `(outer, extent, inner)` view of a tensor around `axis`.
fn split_axis(dims: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = dims[..axis].iter().product();
    let inner = dims[axis + 1..].iter().product();
    (outer, dims[axis], inner)
}

pub fn concat<E: Element>(parts: &[&Tensor<E>], axis: usize) -> Result<Tensor<E>> {
    let first = parts
        .first()
        .ok_or_else(|| Error::Contract("concat of zero tensors".into()))?;
    let rank = first.shape().rank();
    if axis >= rank {
        return Err(Error::Param(format!("concat axis {axis} out of range for rank {rank}")));
    }
    for p in parts {
        let ok = p.shape().rank() == rank
            && p.dims().iter().zip(first.dims()).enumerate().all(|(i, (a, b))| i == axis || a == b);
        if !ok {
            return Err(Error::shape("concat", first.dims(), p.dims()));
        }
    }
    let total: usize = parts.iter().map(|p| p.dims()[axis]).sum();
    let (outer, _, inner) = split_axis(first.dims(), axis);
    let mut out = Vec::with_capacity(outer * total * inner);
    for o in 0..outer {
        for p in parts {
            let ext = p.dims()[axis];
            out.extend_from_slice(&p.data()[o * ext * inner..(o + 1) * ext * inner]);
        }
    }
    Ok(Tensor::from_parts(first.shape().with(axis, total), out))
}

pub fn narrow<E: Element>(x: &Tensor<E>, axis: usize, start: usize, len: usize) -> Result<Tensor<E>> {
    let rank = x.shape().rank();
    if axis >= rank {
        return Err(Error::Param(format!("narrow axis {axis} out of range for rank {rank}")));
    }
    let (outer, ext, inner) = split_axis(x.dims(), axis);
    if len == 0 || start + len > ext {
        return Err(Error::Param(format!("narrow [{start}, {}) outside extent {ext}", start + len)));
    }
    let mut out = Vec::with_capacity(outer * len * inner);
    for o in 0..outer {
        let base = (o * ext + start) * inner;
        out.extend_from_slice(&x.data()[base..base + len * inner]);
    }
    Ok(Tensor::from_parts(x.shape().with(axis, len), out))
}

/// Scatters `grad` of a narrowed slice back into a zero tensor shaped like the source.
pub fn narrow_backward<E: Element>(src: &Shape, grad: &Tensor<E>, axis: usize, start: usize) -> Tensor<E> {
    let (outer, ext, inner) = split_axis(src.dims(), axis);
    let len = grad.dims()[axis];
    let mut out = vec![E::zero(); src.numel()];
    for o in 0..outer {
        let base = (o * ext + start) * inner;
        out[base..base + len * inner].copy_from_slice(&grad.data()[o * len * inner..(o + 1) * len * inner]);
    }
    Tensor::from_parts(src.clone(), out)
}

/// Rows of axis 0 picked by `indices` (repeats allowed).
pub fn gather_rows<E: Element>(x: &Tensor<E>, indices: &[usize]) -> Result<Tensor<E>> {
    let rows = x.dims()[0];
    if indices.is_empty() {
        return Err(Error::Param("gather with no indices".into()));
    }
    if let Some(bad) = indices.iter().find(|&&i| i >= rows) {
        return Err(Error::Param(format!("gather index {bad} out of range for {rows} rows")));
    }
    let inner = x.numel() / rows;
    let mut out = Vec::with_capacity(indices.len() * inner);
    for &i in indices {
        out.extend_from_slice(&x.data()[i * inner..(i + 1) * inner]);
    }
    Ok(Tensor::from_parts(x.shape().with(0, indices.len()), out))
}

pub fn gather_rows_backward<E: Element>(src: &Shape, grad: &Tensor<E>, indices: &[usize]) -> Tensor<E> {
    let inner = src.numel() / src.dims()[0];
    let mut out = vec![E::zero(); src.numel()];
    for (k, &i) in indices.iter().enumerate() {
        let dst = &mut out[i * inner..(i + 1) * inner];
        let g = &grad.data()[k * inner..(k + 1) * inner];
        dst.iter_mut().zip(g).for_each(|(a, &b)| *a = *a + b);
    }
    Tensor::from_parts(src.clone(), out)
}

/// `x[n, c, :, :] * gate[n, c]` for a gate shaped `N×C×1×1`.
pub fn channel_scale<E: Element>(x: &Tensor<E>, gate: &Tensor<E>) -> Result<Tensor<E>> {
    let (n, c, h, w) = x.nchw()?;
    if gate.dims() != [n, c, 1, 1] {
        return Err(Error::shape("channel_scale", x.dims(), gate.dims()));
    }
    let hw = h * w;
    let mut out = x.to_vec();
    for (plane, &g) in out.chunks_mut(hw).zip(gate.data()) {
        plane.iter_mut().for_each(|v| *v = *v * g);
    }
    Ok(Tensor::from_parts(x.shape().clone(), out))
}

/// Per-plane sums of `a ⊙ b`, shaped `N×C×1×1`.
pub fn plane_dot<E: Element>(a: &Tensor<E>, b: &Tensor<E>) -> Result<Tensor<E>> {
    let (n, c, h, w) = a.nchw()?;
    if a.shape() != b.shape() {
        return Err(Error::shape("plane_dot", a.dims(), b.dims()));
    }
    let hw = h * w;
    let out = a
        .data()
        .chunks(hw)
        .zip(b.data().chunks(hw))
        .map(|(pa, pb)| pa.iter().zip(pb).map(|(&x, &y)| x * y).sum())
        .collect();
    Ok(Tensor::from_parts(Shape(vec![n, c, 1, 1]), out))
}
