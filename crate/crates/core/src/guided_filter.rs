//! Guided-filter upsampling of low-resolution predictions.
//!
//! [`fast_guided_filter`] is the classical closed-form filter. [`DeepGuidedFilter`]
//! keeps the same local linear model `q = A·I + b` but predicts `A` with a small
//! stack of `1×1` convolutions from the window statistics and the decoder's
//! hidden features.
//!
//! Both use the guide `I = [R, G, B, gray]` paired channel-wise with the source
//! `p = [F_R, F_G, F_B, α]`.

use crate::autograd::Var;
use crate::error::{Error, Result};
use crate::network::layers::{Act, BiasInit, Conv, ConvBn, Ctx, MacPlan};
use crate::network::params::Init;
use crate::tensor::{kernels, resize, Conv2dSpec, Element, Tensor};

pub const DEFAULT_RADIUS: usize = 1;
pub const DEFAULT_EPS: f64 = 1e-5;
/// Width of every internal convolution.
pub const DGF_WIDTH: usize = 16;

/// Classical guided filter: coefficients at low resolution, applied to the bilinearly upsampled coefficients.
///
/// `guide_lr` has either one channel (shared by every source channel) or as many channels as `src_lr`.
pub fn fast_guided_filter<E: Element>(
    src_lr: &Tensor<E>,
    guide_lr: &Tensor<E>,
    guide_hr: &Tensor<E>,
    radius: usize,
    eps: f64,
) -> Result<Tensor<E>> {
    if radius < 1 {
        return Err(Error::Param(format!("guided filter radius must be ≥ 1, got {radius}")));
    }
    if eps <= 0.0 || eps.is_nan() {
        return Err(Error::Param(format!("guided filter eps must be positive, got {eps}")));
    }
    let (n, c, h, w) = src_lr.nchw()?;
    let (gn, gc, gh, gw) = guide_lr.nchw()?;
    if gn != n || gh != h || gw != w || (gc != 1 && gc != c) {
        return Err(Error::shape("fast_guided_filter low-res", src_lr.dims(), guide_lr.dims()));
    }
    let (hn, hc, hh, hw) = guide_hr.nchw()?;
    if hn != n || hc != gc {
        return Err(Error::shape("fast_guided_filter high-res guide", guide_lr.dims(), guide_hr.dims()));
    }
    let widen = |g: &Tensor<E>| -> Result<Tensor<E>> {
        if gc == c {
            Ok(g.clone())
        } else {
            let copies: Vec<&Tensor<E>> = std::iter::repeat_n(g, c).collect();
            kernels::concat(&copies, 1)
        }
    };
    let guide = widen(guide_lr)?;
    let mul = |a: &Tensor<E>, b: &Tensor<E>| a.zip_map(b, "guided filter", |x, y| x * y);
    let mean_i = resize::box_filter(&guide, radius)?;
    let mean_p = resize::box_filter(src_lr, radius)?;
    let mean_ip = resize::box_filter(&mul(&guide, src_lr)?, radius)?;
    let mean_ii = resize::box_filter(&mul(&guide, &guide)?, radius)?;
    let eps_e = E::of(eps);
    let cov = mean_ip.zip_map(&mul(&mean_i, &mean_p)?, "guided filter", |a, b| a - b)?;
    let var = mean_ii.zip_map(&mul(&mean_i, &mean_i)?, "guided filter", |a, b| a - b)?;
    let a = cov.zip_map(&var, "guided filter", |cv, vr| cv / (vr + eps_e))?;
    let b = mean_p.zip_map(&mul(&a, &mean_i)?, "guided filter", |m, ai| m - ai)?;
    let a_hr = resize::bilinear_resize(&a, hh, hw, false)?;
    let b_hr = resize::bilinear_resize(&b, hh, hw, false)?;
    let g_hr = widen(guide_hr)?;
    mul(&a_hr, &g_hr)?.zip_map(&b_hr, "guided filter", |x, y| x + y)
}

/// `[R, G, B, (R+G+B)/3]` of an `N×3×H×W` frame.
pub fn guide_channels<'t, E: Element>(frame: &Var<'t, E>) -> Result<Var<'t, E>> {
    let rgb = frame.split(1, &[1, 1, 1])?;
    let gray = rgb[0].add(&rgb[1])?.add(&rgb[2])?.scale(1.0 / 3.0);
    Var::concat(&[frame, &gray], 1)
}

/// Learnable guided filter head; all internal convolutions are `1×1` with 16 filters.
#[derive(Debug, Clone)]
pub struct DeepGuidedFilter {
    pub conv1: ConvBn,
    pub conv2: ConvBn,
    pub conv3: Conv,
    pub radius: usize,
}

impl DeepGuidedFilter {
    pub(crate) fn new(init: &mut Init, hidden: usize) -> Self {
        let one = Conv2dSpec::default();
        DeepGuidedFilter {
            conv1: ConvBn::new(init, "dgf.conv1", 4 * 2 + hidden, DGF_WIDTH, 1, one, Act::Relu),
            conv2: ConvBn::new(init, "dgf.conv2", DGF_WIDTH, DGF_WIDTH, 1, one, Act::Relu),
            conv3: Conv::new(init, "dgf.conv3", DGF_WIDTH, 4, 1, one, BiasInit::Uniform),
            radius: DEFAULT_RADIUS,
        }
    }

    /// Returns `(alpha_hr, fg_hr)`, clamped to `[0, 1]`.
    pub fn forward<'t, E: Element>(
        &self,
        cx: &Ctx<'t, '_, E>,
        alpha_lr: &Var<'t, E>,
        fg_lr: &Var<'t, E>,
        hidden_lr: &Var<'t, E>,
        frame_hr: &Var<'t, E>,
        frame_lr: &Var<'t, E>,
    ) -> Result<(Var<'t, E>, Var<'t, E>)> {
        let (n, _, h, w) = frame_lr.value().nchw()?;
        for v in [alpha_lr, fg_lr, hidden_lr] {
            let (vn, _, vh, vw) = v.value().nchw()?;
            if (vn, vh, vw) != (n, h, w) {
                return Err(Error::shape("deep_guided_filter low-res inputs", frame_lr.dims(), v.dims()));
            }
        }
        let (hn, _, hh, hw) = frame_hr.value().nchw()?;
        if hn != n {
            return Err(Error::shape("deep_guided_filter high-res frame", frame_lr.dims(), frame_hr.dims()));
        }
        let r = self.radius;
        let x = guide_channels(frame_lr)?;
        let y = Var::concat(&[fg_lr, alpha_lr], 1)?;
        let mean_x = x.box_filter(r)?;
        let mean_y = y.box_filter(r)?;
        let cov = x.mul(&y)?.box_filter(r)?.sub(&mean_x.mul(&mean_y)?)?;
        let var = x.mul(&x)?.box_filter(r)?.sub(&mean_x.mul(&mean_x)?)?;
        let feats = Var::concat(&[&cov, &var, hidden_lr], 1)?;
        let a = self.conv1.forward(cx, &feats)?;
        let a = self.conv2.forward(cx, &a)?;
        let a = self.conv3.forward(cx, &a)?;
        let b = mean_y.sub(&a.mul(&mean_x)?)?;
        let a_hr = a.bilinear_resize(hh, hw, false)?;
        let b_hr = b.bilinear_resize(hh, hw, false)?;
        let out = a_hr.mul(&guide_channels(frame_hr)?)?.add(&b_hr)?;
        let parts = out.split(1, &[3, 1])?;
        Ok((parts[1].clamp(0.0, 1.0), parts[0].clamp(0.0, 1.0)))
    }

    pub fn plan(&self, plan: &mut MacPlan, h: usize, w: usize) {
        self.conv1.plan(plan, h, w);
        self.conv2.plan(plan, h, w);
        self.conv3.plan(plan, h, w);
    }
}

/// Classical filter on the same guide/source pairing as the learned head. Returns `(alpha_hr, fg_hr)`.
pub fn fast_guided_refine<E: Element>(
    alpha_lr: &Tensor<E>,
    fg_lr: &Tensor<E>,
    frame_lr: &Tensor<E>,
    frame_hr: &Tensor<E>,
    radius: usize,
    eps: f64,
) -> Result<(Tensor<E>, Tensor<E>)> {
    let tape = crate::autograd::Tape::no_grad();
    let guide_lr = guide_channels(&tape.constant(frame_lr.clone()))?.into_value();
    let guide_hr = guide_channels(&tape.constant(frame_hr.clone()))?.into_value();
    let src = kernels::concat(&[fg_lr, alpha_lr], 1)?;
    let out = fast_guided_filter(&src, &guide_lr, &guide_hr, radius, eps)?;
    let clamp = |t: Tensor<E>| t.map(|v| v.max(E::zero()).min(E::one()));
    Ok((clamp(kernels::narrow(&out, 1, 3, 1)?), clamp(kernels::narrow(&out, 1, 0, 3)?)))
}
