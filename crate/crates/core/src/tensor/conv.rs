//! 2-D cross-correlation over `N×C×H×W` tensors.
//!
//! Dense and grouped convolutions lower each image to an im2col matrix and run
//! one GEMM per group; depthwise convolutions (one input channel per group) use
//! a direct loop. Both paths work image-by-image, so a batch of `T` frames
//! produces the same numbers as `T` single-frame calls.

use rayon::prelude::*;

use super::{Element, Shape, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv2dSpec {
    pub stride: usize,
    pub padding: usize,
    pub dilation: usize,
    pub groups: usize,
}

impl Default for Conv2dSpec {
    fn default() -> Self {
        Conv2dSpec {
            stride: 1,
            padding: 0,
            dilation: 1,
            groups: 1,
        }
    }
}

impl Conv2dSpec {
    /// Stride-1 convolution that preserves spatial extents for an odd kernel.
    pub fn same(kernel: usize) -> Self {
        Conv2dSpec {
            padding: kernel / 2,
            ..Default::default()
        }
    }

    pub fn with_stride(mut self, stride: usize) -> Self {
        self.stride = stride;
        self
    }

    pub fn with_dilation(mut self, dilation: usize, kernel: usize) -> Self {
        self.dilation = dilation;
        self.padding = dilation * (kernel / 2);
        self
    }

    pub fn with_groups(mut self, groups: usize) -> Self {
        self.groups = groups;
        self
    }

    pub fn out_extent(&self, input: usize, kernel: usize) -> Option<usize> {
        let span = self.dilation * (kernel - 1) + 1;
        let padded = input + 2 * self.padding;
        if self.stride == 0 || padded < span {
            return None;
        }
        Some((padded - span) / self.stride + 1)
    }
}

/// Resolved extents of one convolution call.
#[derive(Debug, Clone, Copy)]
pub struct ConvGeometry {
    pub n: usize,
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub k: usize,
    pub ho: usize,
    pub wo: usize,
    pub group_in: usize,
    pub group_out: usize,
    pub spec: Conv2dSpec,
}

impl ConvGeometry {
    pub fn new(input: &[usize], weight: &[usize], spec: Conv2dSpec) -> Result<Self> {
        let (&[n, c_in, h, w], &[c_out, group_in, kh, kw]) = (input, weight) else {
            return Err(Error::shape("conv2d", input, weight));
        };
        if spec.groups == 0 || spec.stride == 0 || spec.dilation == 0 {
            return Err(Error::Param(format!("conv2d: degenerate spec {spec:?}")));
        }
        if kh != kw
            || c_in % spec.groups != 0
            || c_out % spec.groups != 0
            || group_in != c_in / spec.groups
        {
            return Err(Error::shape("conv2d", input, weight));
        }
        let (Some(ho), Some(wo)) = (spec.out_extent(h, kh), spec.out_extent(w, kw)) else {
            return Err(Error::shape("conv2d (output extent < 1)", input, weight));
        };
        Ok(ConvGeometry {
            n,
            c_in,
            h,
            w,
            c_out,
            k: kh,
            ho,
            wo,
            group_in,
            group_out: c_out / spec.groups,
            spec,
        })
    }

    fn is_depthwise(&self) -> bool {
        self.group_in == 1 && self.group_out == 1
    }

    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.spec.stride == 1 && self.spec.padding == 0
    }

    fn patch(&self) -> usize {
        self.ho * self.wo
    }

    fn col_rows(&self) -> usize {
        self.group_in * self.k * self.k
    }

    /// Multiply-accumulate count of the call.
    pub fn macs(&self) -> u64 {
        (self.n * self.c_out * self.group_in * self.k * self.k * self.ho * self.wo) as u64
    }

    /// Maps output coordinate `o` and kernel tap `t` to an input coordinate, if inside.
    #[inline]
    fn src(&self, o: usize, t: usize, extent: usize) -> Option<usize> {
        let pos = (o * self.spec.stride + t * self.spec.dilation) as isize - self.spec.padding as isize;
        (pos >= 0 && (pos as usize) < extent).then_some(pos as usize)
    }
}

fn im2col<E: Element>(g: &ConvGeometry, img: &[E], c0: usize, col: &mut [E]) {
    let patch = g.patch();
    for c in 0..g.group_in {
        let plane = &img[(c0 + c) * g.h * g.w..(c0 + c + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (c * g.k + ky) * g.k + kx;
                let dst = &mut col[row * patch..(row + 1) * patch];
                for oy in 0..g.ho {
                    let line = &mut dst[oy * g.wo..(oy + 1) * g.wo];
                    match g.src(oy, ky, g.h) {
                        None => line.iter_mut().for_each(|v| *v = E::zero()),
                        Some(iy) => {
                            for (ox, v) in line.iter_mut().enumerate() {
                                *v = g.src(ox, kx, g.w).map_or(E::zero(), |ix| plane[iy * g.w + ix]);
                            }
                        }
                    }
                }
            }
        }
    }
}

fn col2im<E: Element>(g: &ConvGeometry, col: &[E], c0: usize, img: &mut [E]) {
    let patch = g.patch();
    for c in 0..g.group_in {
        let plane = &mut img[(c0 + c) * g.h * g.w..(c0 + c + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (c * g.k + ky) * g.k + kx;
                let src = &col[row * patch..(row + 1) * patch];
                for oy in 0..g.ho {
                    let Some(iy) = g.src(oy, ky, g.h) else { continue };
                    for ox in 0..g.wo {
                        if let Some(ix) = g.src(ox, kx, g.w) {
                            plane[iy * g.w + ix] = plane[iy * g.w + ix] + src[oy * g.wo + ox];
                        }
                    }
                }
            }
        }
    }
}

fn depthwise_forward<E: Element>(g: &ConvGeometry, img: &[E], weight: &[E], out: &mut [E]) {
    let kk = g.k * g.k;
    for c in 0..g.c_in {
        let plane = &img[c * g.h * g.w..(c + 1) * g.h * g.w];
        let taps = &weight[c * kk..(c + 1) * kk];
        let dst = &mut out[c * g.patch()..(c + 1) * g.patch()];
        for oy in 0..g.ho {
            for ox in 0..g.wo {
                let mut acc = E::zero();
                for ky in 0..g.k {
                    let Some(iy) = g.src(oy, ky, g.h) else { continue };
                    for kx in 0..g.k {
                        if let Some(ix) = g.src(ox, kx, g.w) {
                            acc = acc + plane[iy * g.w + ix] * taps[ky * g.k + kx];
                        }
                    }
                }
                dst[oy * g.wo + ox] = acc;
            }
        }
    }
}

/// Output `(N, C_out, H_out, W_out)` of `input ⋆ weight + bias`.
pub fn conv2d<E: Element>(
    input: &Tensor<E>,
    weight: &Tensor<E>,
    bias: Option<&Tensor<E>>,
    spec: Conv2dSpec,
) -> Result<Tensor<E>> {
    let g = ConvGeometry::new(input.dims(), weight.dims(), spec)?;
    if let Some(b) = bias {
        if b.dims() != [g.c_out] {
            return Err(Error::shape("conv2d bias", b.dims(), &[g.c_out]));
        }
    }
    let in_stride = g.c_in * g.h * g.w;
    let out_stride = g.c_out * g.patch();
    let mut out = vec![E::zero(); g.n * out_stride];
    let x = input.data();
    let w = weight.data();
    out.par_chunks_mut(out_stride).enumerate().for_each(|(n, dst)| {
        let img = &x[n * in_stride..(n + 1) * in_stride];
        if g.is_depthwise() {
            depthwise_forward(&g, img, w, dst);
        } else {
            let patch = g.patch();
            let rows = g.col_rows();
            let mut col = if g.is_pointwise() { Vec::new() } else { vec![E::zero(); rows * patch] };
            for grp in 0..spec.groups {
                let c0 = grp * g.group_in;
                let b_mat: &[E] = if g.is_pointwise() {
                    &img[c0 * patch..(c0 + g.group_in) * patch]
                } else {
                    im2col(&g, img, c0, &mut col);
                    &col
                };
                let a_mat = &w[grp * g.group_out * rows..(grp + 1) * g.group_out * rows];
                let c_mat = &mut dst[grp * g.group_out * patch..(grp + 1) * g.group_out * patch];
                E::gemm(g.group_out, rows, patch, a_mat, rows, 1, b_mat, patch, 1, E::zero(), c_mat, patch, 1);
            }
        }
        if let Some(b) = bias {
            for (co, plane) in dst.chunks_mut(g.patch()).enumerate() {
                let bv = b.data()[co];
                plane.iter_mut().for_each(|v| *v = *v + bv);
            }
        }
    });
    Ok(Tensor::from_parts(Shape(vec![g.n, g.c_out, g.ho, g.wo]), out))
}

/// Gradients of a convolution with respect to each operand that was requested.
#[derive(Debug, Default)]
pub struct ConvGrads<E: Element> {
    pub input: Option<Tensor<E>>,
    pub weight: Option<Tensor<E>>,
    pub bias: Option<Tensor<E>>,
}

pub fn conv2d_backward<E: Element>(
    input: &Tensor<E>,
    weight: &Tensor<E>,
    grad_out: &Tensor<E>,
    spec: Conv2dSpec,
    need: [bool; 3],
) -> Result<ConvGrads<E>> {
    let g = ConvGeometry::new(input.dims(), weight.dims(), spec)?;
    if grad_out.dims() != [g.n, g.c_out, g.ho, g.wo] {
        return Err(Error::shape("conv2d backward", grad_out.dims(), &[g.n, g.c_out, g.ho, g.wo]));
    }
    let [need_input, need_weight, need_bias] = need;
    let patch = g.patch();
    let rows = g.col_rows();
    let in_stride = g.c_in * g.h * g.w;
    let out_stride = g.c_out * patch;
    let x = input.data();
    let w = weight.data();
    let dy = grad_out.data();
    let mut grads = ConvGrads::default();

    if need_input {
        let mut dx = vec![E::zero(); g.n * in_stride];
        dx.par_chunks_mut(in_stride).enumerate().for_each(|(n, dimg)| {
            let dyn_ = &dy[n * out_stride..(n + 1) * out_stride];
            if g.is_depthwise() {
                let kk = g.k * g.k;
                for c in 0..g.c_in {
                    let plane = &mut dimg[c * g.h * g.w..(c + 1) * g.h * g.w];
                    let taps = &w[c * kk..(c + 1) * kk];
                    let src = &dyn_[c * patch..(c + 1) * patch];
                    for oy in 0..g.ho {
                        for ox in 0..g.wo {
                            let gv = src[oy * g.wo + ox];
                            for ky in 0..g.k {
                                let Some(iy) = g.src(oy, ky, g.h) else { continue };
                                for kx in 0..g.k {
                                    if let Some(ix) = g.src(ox, kx, g.w) {
                                        plane[iy * g.w + ix] = plane[iy * g.w + ix] + gv * taps[ky * g.k + kx];
                                    }
                                }
                            }
                        }
                    }
                }
                return;
            }
            let mut dcol = vec![E::zero(); rows * patch];
            for grp in 0..spec.groups {
                let c0 = grp * g.group_in;
                let a_mat = &w[grp * g.group_out * rows..(grp + 1) * g.group_out * rows];
                let b_mat = &dyn_[grp * g.group_out * patch..(grp + 1) * g.group_out * patch];
                if g.is_pointwise() {
                    let d = &mut dimg[c0 * patch..(c0 + g.group_in) * patch];
                    E::gemm(rows, g.group_out, patch, a_mat, 1, rows, b_mat, patch, 1, E::zero(), d, patch, 1);
                } else {
                    E::gemm(rows, g.group_out, patch, a_mat, 1, rows, b_mat, patch, 1, E::zero(), &mut dcol, patch, 1);
                    col2im(&g, &dcol, c0, dimg);
                }
            }
        });
        grads.input = Some(Tensor::from_parts(input.shape().clone(), dx));
    }

    if need_weight {
        let wlen = weight.numel();
        let partials: Vec<Vec<E>> = (0..g.n)
            .into_par_iter()
            .map(|n| {
                let img = &x[n * in_stride..(n + 1) * in_stride];
                let dyn_ = &dy[n * out_stride..(n + 1) * out_stride];
                let mut dw = vec![E::zero(); wlen];
                if g.is_depthwise() {
                    let kk = g.k * g.k;
                    for c in 0..g.c_in {
                        let plane = &img[c * g.h * g.w..(c + 1) * g.h * g.w];
                        let src = &dyn_[c * patch..(c + 1) * patch];
                        for ky in 0..g.k {
                            for kx in 0..g.k {
                                let mut acc = E::zero();
                                for oy in 0..g.ho {
                                    let Some(iy) = g.src(oy, ky, g.h) else { continue };
                                    for ox in 0..g.wo {
                                        if let Some(ix) = g.src(ox, kx, g.w) {
                                            acc = acc + src[oy * g.wo + ox] * plane[iy * g.w + ix];
                                        }
                                    }
                                }
                                dw[c * kk + ky * g.k + kx] = acc;
                            }
                        }
                    }
                    return dw;
                }
                let mut col = if g.is_pointwise() { Vec::new() } else { vec![E::zero(); rows * patch] };
                for grp in 0..spec.groups {
                    let c0 = grp * g.group_in;
                    let b_mat: &[E] = if g.is_pointwise() {
                        &img[c0 * patch..(c0 + g.group_in) * patch]
                    } else {
                        im2col(&g, img, c0, &mut col);
                        &col
                    };
                    let a_mat = &dyn_[grp * g.group_out * patch..(grp + 1) * g.group_out * patch];
                    let c_mat = &mut dw[grp * g.group_out * rows..(grp + 1) * g.group_out * rows];
                    E::gemm(g.group_out, patch, rows, a_mat, patch, 1, b_mat, 1, patch, E::zero(), c_mat, rows, 1);
                }
                dw
            })
            .collect();
        let mut dw = vec![E::zero(); wlen];
        for part in &partials {
            dw.iter_mut().zip(part).for_each(|(a, &b)| *a = *a + b);
        }
        grads.weight = Some(Tensor::from_parts(weight.shape().clone(), dw));
    }

    if need_bias {
        let mut db = vec![E::zero(); g.c_out];
        for n in 0..g.n {
            for (co, acc) in db.iter_mut().enumerate() {
                let plane = &dy[n * out_stride + co * patch..n * out_stride + (co + 1) * patch];
                *acc = *acc + plane.iter().copied().sum::<E>();
            }
        }
        grads.bias = Some(Tensor::from_parts(Shape(vec![g.c_out]), db));
    }
    Ok(grads)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_ones_counts_overlap() {
        let x = Tensor::<f32>::ones(vec![1, 1, 3, 3]).unwrap();
        let w = Tensor::<f32>::ones(vec![1, 1, 3, 3]).unwrap();
        let y = conv2d(&x, &w, None, Conv2dSpec::same(3)).unwrap();
        assert_eq!(y.dims(), &[1, 1, 3, 3]);
        assert_eq!(y.data()[4], 9.0);
        assert_eq!(y.data()[0], 4.0);
        assert_eq!(y.data()[1], 6.0);
    }

    #[test]
    fn identity_kernel_returns_input() {
        let x = Tensor::<f32>::from_fn(vec![2, 1, 4, 5], |i| i as f32 * 0.5 - 3.0).unwrap();
        let w = Tensor::<f32>::ones(vec![1, 1, 1, 1]).unwrap();
        let y = conv2d(&x, &w, None, Conv2dSpec::default()).unwrap();
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn output_extent_formula() {
        let spec = Conv2dSpec { stride: 2, padding: 2, dilation: 2, groups: 1 };
        // floor((7 + 4 - 2*2 - 1) / 2) + 1 = 4
        assert_eq!(spec.out_extent(7, 3), Some(4));
        assert_eq!(Conv2dSpec::default().out_extent(2, 3), None);
    }

    #[test]
    fn mismatched_shapes_name_both() {
        let x = Tensor::<f32>::zeros(vec![1, 3, 5, 5]).unwrap();
        let w = Tensor::<f32>::zeros(vec![2, 2, 3, 3]).unwrap();
        let err = conv2d(&x, &w, None, Conv2dSpec::default()).unwrap_err().to_string();
        assert!(err.contains("[1, 3, 5, 5]") && err.contains("[2, 2, 3, 3]"), "{err}");
    }
}
