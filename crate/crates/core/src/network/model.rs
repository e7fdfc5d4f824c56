use serde::{Deserialize, Serialize};

use super::backbone::Backbone;
use super::config::{BackboneKind, ModelConfig};
use super::decoder::{Decoder, LrAspp, Seq};
use super::layers::{BnUpdate, Ctx, MacPlan};
use super::params::{Group, Init, ParamStore};
use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::guided_filter::{self, DeepGuidedFilter};
use crate::tensor::norm::update_running;
use crate::tensor::{Element, Tensor};

/// How low-resolution predictions reach the input resolution when `downsample < 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Refiner {
    Bilinear,
    Deep,
    Fast { radius: usize, eps: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForwardOptions {
    pub downsample: f64,
    pub refiner: Refiner,
}

impl Default for ForwardOptions {
    fn default() -> Self {
        ForwardOptions {
            downsample: 1.0,
            refiner: Refiner::Bilinear,
        }
    }
}

impl ForwardOptions {
    pub fn new(downsample: f64, use_dgf: bool) -> Self {
        ForwardOptions {
            downsample,
            refiner: if use_dgf { Refiner::Deep } else { Refiner::Bilinear },
        }
    }
}

/// Hidden maps at 1/16, 1/8, 1/4, 1/2; `None` is the all-zero initial state.
#[derive(Debug, Clone, Default)]
pub struct RecurrentState<E: Element> {
    pub maps: Option<[Tensor<E>; 4]>,
}

impl<E: Element> RecurrentState<E> {
    pub fn fresh() -> Self {
        RecurrentState { maps: None }
    }

    /// Explicit zeros for a `batch` of `h×w` internal frames.
    pub fn zeros(config: &ModelConfig, batch: usize, h: usize, w: usize) -> Result<Self> {
        let ch = config.hidden_channels();
        let mk = |i: usize, div: usize| Tensor::zeros(vec![batch, ch[i], h / div, w / div]);
        Ok(RecurrentState {
            maps: Some([mk(0, 16)?, mk(1, 8)?, mk(2, 4)?, mk(3, 2)?]),
        })
    }

    pub fn is_fresh(&self) -> bool {
        self.maps.is_none()
    }

    /// Largest `|h|` over every map; 0 for a fresh state.
    pub fn max_abs(&self) -> f64 {
        self.maps
            .iter()
            .flatten()
            .map(|t| t.min_max())
            .map(|(lo, hi)| lo.abs().max(hi.abs()))
            .fold(0.0, f64::max)
    }
}

/// Per-frame outputs over `(B·T)` rows, batch-major.
pub struct MattingOutput<'t, E: Element> {
    pub alpha: Var<'t, E>,
    pub foreground: Var<'t, E>,
    pub segmentation: Var<'t, E>,
    /// Features feeding the projection, at the internal resolution.
    pub hidden: Var<'t, E>,
    pub batch: usize,
    pub frames: usize,
}

/// Detached outputs of an inference call.
#[derive(Debug, Clone)]
pub struct Prediction<E: Element> {
    pub alpha: Tensor<E>,
    pub foreground: Tensor<E>,
    pub segmentation: Tensor<E>,
    pub hidden: Tensor<E>,
    pub batch: usize,
    pub frames: usize,
}

#[derive(Debug, Clone)]
pub struct Model<E: Element = f32> {
    config: ModelConfig,
    params: ParamStore<E>,
    backbone: Backbone,
    aspp: LrAspp,
    decoder: Decoder,
    dgf: DeepGuidedFilter,
}

fn layout(config: &ModelConfig, seed: u64) -> (ParamStore<f32>, Backbone, LrAspp, Decoder, DeepGuidedFilter) {
    let mut init = Init::new(seed);
    let backbone = match config.backbone {
        BackboneKind::MobilenetV3Large => Backbone::mobilenet(&mut init),
        BackboneKind::TinyTest => Backbone::tiny(&mut init, config.encoder),
    };
    init.set_group(Group::Decoder);
    let aspp = LrAspp::new(&mut init, config.encoder[3], config.aspp);
    let decoder = Decoder::new(&mut init, config.encoder, config.decoder);
    init.set_group(Group::Dgf);
    let dgf = DeepGuidedFilter::new(&mut init, config.decoder[4]);
    (init.finish(), backbone, aspp, decoder, dgf)
}

/// Builds a model with parameters drawn deterministically from `seed`.
pub fn build_model(config: &ModelConfig, seed: u64) -> Result<Model<f32>> {
    config.validate()?;
    let (params, backbone, aspp, decoder, dgf) = layout(config, seed);
    Ok(Model {
        config: config.clone(),
        params,
        backbone,
        aspp,
        decoder,
        dgf,
    })
}

/// Internal extent for factor `s`: the input itself at `s = 1`, else `round(s·x/16)·16`.
pub fn internal_extent(x: usize, s: f64) -> Result<usize> {
    if !(s > 0.0 && s <= 1.0) {
        return Err(Error::Param(format!("downsample factor must lie in (0, 1], got {s}")));
    }
    if s == 1.0 {
        if x % 16 != 0 {
            return Err(Error::shape("encode (extents must be divisible by 16)", &[x], &[16]));
        }
        return Ok(x);
    }
    let e = (s * x as f64 / 16.0).round() as usize * 16;
    if e < 16 {
        return Err(Error::Resolution(format!(
            "downsample {s} maps extent {x} to {e}, below the 16-pixel minimum"
        )));
    }
    Ok(e)
}

impl<E: Element> Model<E> {
    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<E> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<E> {
        &mut self.params
    }

    pub fn cast<F: Element>(&self) -> Model<F> {
        Model {
            config: self.config.clone(),
            params: self.params.cast(),
            backbone: self.backbone.clone(),
            aspp: self.aspp.clone(),
            decoder: self.decoder.clone(),
            dgf: self.dgf.clone(),
        }
    }

    pub fn count_params(&self) -> usize {
        self.params.numel()
    }

    /// Parameter counts per block, in declaration order.
    pub fn param_breakdown(&self) -> Vec<(String, usize)> {
        let mut out: Vec<(String, usize)> = Vec::new();
        for (name, v) in self.params.names().iter().zip(self.params.values()) {
            let parts: Vec<&str> = name.split('.').collect();
            let depth = if parts.get(1).is_some_and(|p| *p == "blocks" || *p == "layers") { 3 } else { 2 };
            let key = parts[..depth.min(parts.len() - 1)].join(".");
            match out.last_mut() {
                Some((k, n)) if *k == key => *n += v.numel(),
                _ => out.push((key, v.numel())),
            }
        }
        out
    }

    pub fn group_count(&self, group: Group) -> usize {
        self.params
            .values()
            .iter()
            .zip(self.params.groups())
            .filter(|(_, &g)| g == group)
            .map(|(v, _)| v.numel())
            .sum()
    }

    /// Per-convolution work for one `h×w` frame at factor `s`, derived from layer extents alone.
    pub fn mac_plan(&self, h: usize, w: usize, s: f64, refiner: Refiner) -> Result<MacPlan> {
        let (ih, iw) = (internal_extent(h, s)?, internal_extent(w, s)?);
        let mut plan = MacPlan::default();
        let (fh, fw) = self.backbone.plan(&mut plan, ih, iw);
        self.aspp.plan(&mut plan, fh, fw);
        self.decoder.plan(&mut plan, ih, iw);
        if s < 1.0 && refiner == Refiner::Deep {
            self.dgf.plan(&mut plan, ih, iw);
        }
        Ok(plan)
    }

    pub fn count_macs(&self, h: usize, w: usize, s: f64, refiner: Refiner) -> Result<u64> {
        Ok(self.mac_plan(h, w, s, refiner)?.total())
    }

    /// Encoder features at 1/2, 1/4, 1/8, 1/16 of `(N)×3×H×W` frames.
    pub fn encode<'t>(&self, cx: &Ctx<'t, '_, E>, frames: &Var<'t, E>) -> Result<[Var<'t, E>; 4]> {
        let (_, c, h, w) = frames.value().nchw()?;
        if c != 3 || h % 16 != 0 || w % 16 != 0 {
            return Err(Error::shape("encode (needs N×3×H×W with H, W divisible by 16)", frames.dims(), &[0, 3, 16, 16]));
        }
        self.backbone.forward(cx, frames)
    }

    /// Decoder over `batch·frames` rows: returns the 5-channel projection, the final hidden features and the new state.
    pub fn decode_step<'t>(
        &self,
        cx: &Ctx<'t, '_, E>,
        features: &[Var<'t, E>; 4],
        frames_lr: &Var<'t, E>,
        batch: usize,
        frames: usize,
        state: &RecurrentState<E>,
    ) -> Result<(Var<'t, E>, Var<'t, E>, RecurrentState<E>)> {
        let aspp = self.aspp.forward(cx, &features[3])?;
        let out = self
            .decoder
            .forward(cx, features, &aspp, frames_lr, Seq { batch, frames }, state.maps.as_ref())?;
        let maps = out.state.map(|v| v.into_value());
        Ok((out.projection, out.hidden, RecurrentState { maps: Some(maps) }))
    }

    /// Runs `B×T×3×H×W` frames through the network.
    pub fn forward<'t>(
        &self,
        cx: &Ctx<'t, '_, E>,
        frames: &Tensor<E>,
        state: Option<&RecurrentState<E>>,
        opts: &ForwardOptions,
    ) -> Result<(MattingOutput<'t, E>, RecurrentState<E>)> {
        let &[batch, t, c, h, w] = frames.dims() else {
            return Err(Error::shape("forward (needs B×T×3×H×W)", frames.dims(), &[0, 0, 3, 0, 0]));
        };
        if c != 3 {
            return Err(Error::shape("forward (needs 3 channels)", frames.dims(), &[batch, t, 3, h, w]));
        }
        let s = opts.downsample;
        if opts.refiner != Refiner::Bilinear && s >= 1.0 {
            return Err(Error::Contract(
                "guided-filter refinement needs a downsample factor below 1".into(),
            ));
        }
        let (ih, iw) = (internal_extent(h, s)?, internal_extent(w, s)?);
        let tape = cx.tape();
        let hr = tape.constant(frames.reshape(vec![batch * t, 3, h, w])?);
        let lr = if (ih, iw) == (h, w) { hr.clone() } else { hr.bilinear_resize(ih, iw, false)? };

        let fresh = RecurrentState::fresh();
        let features = self.encode(cx, &lr)?;
        let (proj, hidden, new_state) = self.decode_step(cx, &features, &lr, batch, t, state.unwrap_or(&fresh))?;
        let parts = proj.split(1, &[1, 3, 1])?;
        let alpha_lr = parts[0].clamp(0.0, 1.0);
        let fg_lr = parts[1].clamp(0.0, 1.0);
        let seg_lr = parts[2].clone();

        let full = (ih, iw) == (h, w);
        let (alpha, foreground) = match opts.refiner {
            _ if full => (alpha_lr, fg_lr),
            Refiner::Bilinear => (alpha_lr.bilinear_resize(h, w, false)?, fg_lr.bilinear_resize(h, w, false)?),
            Refiner::Deep => self.dgf.forward(cx, &alpha_lr, &fg_lr, &hidden, &hr, &lr)?,
            Refiner::Fast { radius, eps } => {
                let (a, f) = guided_filter::fast_guided_refine(
                    alpha_lr.value(),
                    fg_lr.value(),
                    lr.value(),
                    hr.value(),
                    radius,
                    eps,
                )?;
                (tape.constant(a), tape.constant(f))
            }
        };
        let segmentation = if full { seg_lr } else { seg_lr.bilinear_resize(h, w, false)? };
        Ok((
            MattingOutput {
                alpha,
                foreground,
                segmentation,
                hidden,
                batch,
                frames: t,
            },
            new_state,
        ))
    }

    /// Forward pass without a tape, normalisation from running statistics.
    pub fn infer(
        &self,
        frames: &Tensor<E>,
        state: Option<&RecurrentState<E>>,
        opts: &ForwardOptions,
    ) -> Result<(Prediction<E>, RecurrentState<E>)> {
        let tape = Tape::no_grad();
        let cx = Ctx::inference(&tape, &self.params);
        let (out, state) = self.forward(&cx, frames, state, opts)?;
        Ok((
            Prediction {
                alpha: out.alpha.into_value(),
                foreground: out.foreground.into_value(),
                segmentation: out.segmentation.into_value(),
                hidden: out.hidden.into_value(),
                batch: out.batch,
                frames: out.frames,
            },
            state,
        ))
    }

    /// Folds batch statistics from a training pass into the running buffers.
    pub fn apply_bn_updates(&mut self, updates: &[BnUpdate<E>], momentum: f64) -> Result<()> {
        for u in updates {
            let m = update_running(&self.params.buffers[u.mean_buffer], &u.mean, momentum);
            let v = update_running(&self.params.buffers[u.var_buffer], &u.var, momentum);
            self.params.set_buffer(u.mean_buffer, m)?;
            self.params.set_buffer(u.var_buffer, v)?;
        }
        Ok(())
    }

    pub fn gru_channels(&self) -> [usize; 4] {
        [
            self.decoder.bottleneck.gru.channels,
            self.decoder.up[0].gru.gru.channels,
            self.decoder.up[1].gru.gru.channels,
            self.decoder.up[2].gru.gru.channels,
        ]
    }

    pub fn decoder(&self) -> &Decoder {
        &self.decoder
    }

    pub fn dgf(&self) -> &DeepGuidedFilter {
        &self.dgf
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn internal_extents() {
        assert_eq!(internal_extent(1024, 0.25).unwrap(), 256);
        assert_eq!(internal_extent(64, 1.0).unwrap(), 64);
        assert_eq!(internal_extent(100, 0.5).unwrap(), 48);
        assert!(matches!(internal_extent(32, 0.1), Err(Error::Resolution(_))));
        assert!(internal_extent(63, 1.0).is_err());
        assert!(matches!(internal_extent(64, 0.0), Err(Error::Param(_))));
    }
}
