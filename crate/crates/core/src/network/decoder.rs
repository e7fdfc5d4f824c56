//! LR-ASPP head and the recurrent decoder.

use super::gru::ConvGru;
use super::layers::{Act, BiasInit, Conv, ConvBn, Ctx, MacPlan};
use super::params::Init;
use crate::autograd::Var;
use crate::error::Result;
use crate::tensor::{Conv2dSpec, Element, Tensor};

/// `relu(bn(conv1x1(x))) ⊙ hardsigmoid(conv1x1(avgpool(x)))`.
#[derive(Debug, Clone)]
pub struct LrAspp {
    pub branch: ConvBn,
    pub gate: Conv,
}

impl LrAspp {
    pub(crate) fn new(init: &mut Init, c_in: usize, c_out: usize) -> Self {
        LrAspp {
            branch: ConvBn::new(init, "aspp.branch", c_in, c_out, 1, Conv2dSpec::default(), Act::Relu),
            gate: Conv::new(init, "aspp.gate", c_in, c_out, 1, Conv2dSpec::default(), BiasInit::Uniform),
        }
    }

    pub fn forward<'t, E: Element>(&self, cx: &Ctx<'t, '_, E>, x: &Var<'t, E>) -> Result<Var<'t, E>> {
        let a = self.branch.forward(cx, x)?;
        let g = self.gate.forward(cx, &x.global_avg_pool()?)?.hardsigmoid();
        a.channel_scale(&g)
    }

    pub fn plan(&self, plan: &mut MacPlan, h: usize, w: usize) {
        self.branch.plan(plan, h, w);
        self.gate.plan(plan, 1, 1);
    }
}

/// ConvGRU applied to the first half of the channels; the second half passes through.
#[derive(Debug, Clone)]
pub struct HalfGru {
    pub gru: ConvGru,
}

impl HalfGru {
    fn new(init: &mut Init, name: &str, channels: usize) -> Self {
        HalfGru {
            gru: ConvGru::new(init, name, channels / 2),
        }
    }

    fn forward<'t, E: Element>(
        &self,
        cx: &Ctx<'t, '_, E>,
        x: &Var<'t, E>,
        seq: Seq,
        h0: Option<&Tensor<E>>,
    ) -> Result<(Var<'t, E>, Var<'t, E>)> {
        let half = self.gru.channels;
        let parts = x.split(1, &[half, half])?;
        let (a, h) = self.gru.forward_seq(cx, &parts[0], seq.batch, seq.frames, h0)?;
        Ok((Var::concat(&[&a, &parts[1]], 1)?, h))
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Seq {
    pub batch: usize,
    pub frames: usize,
}

#[derive(Debug, Clone)]
pub struct UpBlock {
    pub conv: ConvBn,
    pub gru: HalfGru,
}

impl UpBlock {
    fn new(init: &mut Init, name: &str, c_prev: usize, c_skip: usize, c_out: usize) -> Self {
        UpBlock {
            conv: ConvBn::new(init, &format!("{name}.conv"), c_prev + c_skip + 3, c_out, 3, Conv2dSpec::same(3), Act::Relu),
            gru: HalfGru::new(init, &format!("{name}.gru"), c_out),
        }
    }

    fn forward<'t, E: Element>(
        &self,
        cx: &Ctx<'t, '_, E>,
        prev: &Var<'t, E>,
        skip: &Var<'t, E>,
        image: &Var<'t, E>,
        seq: Seq,
        h0: Option<&Tensor<E>>,
    ) -> Result<(Var<'t, E>, Var<'t, E>)> {
        let (_, _, h, w) = skip.value().nchw()?;
        let up = prev.bilinear_resize(h, w, false)?;
        let x = self.conv.forward(cx, &Var::concat(&[&up, skip, image], 1)?)?;
        self.gru.forward(cx, &x, seq, h0)
    }
}

#[derive(Debug, Clone)]
pub struct OutputBlock {
    pub conv1: ConvBn,
    pub conv2: ConvBn,
}

/// The recurrent decoder; `forward` returns the final hidden features and the new hidden maps.
#[derive(Debug, Clone)]
pub struct Decoder {
    pub bottleneck: HalfGru,
    pub up: [UpBlock; 3],
    pub output: OutputBlock,
    /// `1×1` projection to alpha (1), foreground (3), segmentation (1).
    pub project: Conv,
}

pub(crate) struct DecoderOut<'t, E: Element> {
    pub projection: Var<'t, E>,
    pub hidden: Var<'t, E>,
    pub state: [Var<'t, E>; 4],
}

impl Decoder {
    pub(crate) fn new(init: &mut Init, encoder: [usize; 4], d: [usize; 5]) -> Self {
        let bottleneck = HalfGru::new(init, "decoder.bottleneck.gru", d[0]);
        let up = [
            UpBlock::new(init, "decoder.up1", d[0], encoder[2], d[1]),
            UpBlock::new(init, "decoder.up2", d[1], encoder[1], d[2]),
            UpBlock::new(init, "decoder.up3", d[2], encoder[0], d[3]),
        ];
        let output = OutputBlock {
            conv1: ConvBn::new(init, "decoder.output.conv1", d[3] + 3, d[4], 3, Conv2dSpec::same(3), Act::Relu),
            conv2: ConvBn::new(init, "decoder.output.conv2", d[4], d[4], 3, Conv2dSpec::same(3), Act::Relu),
        };
        // Alpha and foreground start mid-range, away from the clamp.
        let project = Conv::new(
            init,
            "decoder.project",
            d[4],
            5,
            1,
            Conv2dSpec::default(),
            BiasInit::Values(vec![0.5, 0.5, 0.5, 0.5, 0.0]),
        );
        Decoder {
            bottleneck,
            up,
            output,
            project,
        }
    }

    pub(crate) fn forward<'t, E: Element>(
        &self,
        cx: &Ctx<'t, '_, E>,
        features: &[Var<'t, E>; 4],
        aspp: &Var<'t, E>,
        image: &Var<'t, E>,
        seq: Seq,
        state: Option<&[Tensor<E>; 4]>,
    ) -> Result<DecoderOut<'t, E>> {
        let h = |i: usize| state.map(|s| &s[i]);
        let s2 = image.avg_pool_2x2()?;
        let s4 = s2.avg_pool_2x2()?;
        let s8 = s4.avg_pool_2x2()?;
        let (x16, h16) = self.bottleneck.forward(cx, aspp, seq, h(0))?;
        let (x8, h8) = self.up[0].forward(cx, &x16, &features[2], &s8, seq, h(1))?;
        let (x4, h4) = self.up[1].forward(cx, &x8, &features[1], &s4, seq, h(2))?;
        let (x2, h2) = self.up[2].forward(cx, &x4, &features[0], &s2, seq, h(3))?;
        let (_, _, hh, ww) = image.value().nchw()?;
        let up = x2.bilinear_resize(hh, ww, false)?;
        let y = self.output.conv1.forward(cx, &Var::concat(&[&up, image], 1)?)?;
        let hidden = self.output.conv2.forward(cx, &y)?;
        let projection = self.project.forward(cx, &hidden)?;
        Ok(DecoderOut {
            projection,
            hidden,
            state: [h16, h8, h4, h2],
        })
    }

    /// Walks the decoder at input extents `h×w` (divisible by 16).
    pub fn plan(&self, plan: &mut MacPlan, h: usize, w: usize) {
        self.bottleneck.gru.plan(plan, h / 16, w / 16);
        for (i, block) in self.up.iter().enumerate() {
            let div = 8 >> i;
            block.conv.plan(plan, h / div, w / div);
            block.gru.gru.plan(plan, h / div, w / div);
        }
        self.output.conv1.plan(plan, h, w);
        self.output.conv2.plan(plan, h, w);
        self.project.plan(plan, h, w);
    }
}
