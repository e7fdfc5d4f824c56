//! Per-frame feature encoders: MobileNetV3-Large with a dilated last stage, and a tiny test stack.

use super::layers::{Act, BiasInit, Conv, ConvBn, Ctx, MacPlan};
use super::params::Init;
use crate::autograd::Var;
use crate::error::Result;
use crate::tensor::{Conv2dSpec, Element};

/// Rounds to a multiple of `divisor`, never dropping more than 10 %.
pub fn make_divisible(v: usize, divisor: usize) -> usize {
    let rounded = ((v + divisor / 2) / divisor * divisor).max(divisor);
    if (rounded as f64) < 0.9 * v as f64 {
        rounded + divisor
    } else {
        rounded
    }
}

/// One row of the inverted-residual table.
#[derive(Debug, Clone, Copy)]
pub struct BneckSpec {
    pub c_in: usize,
    pub kernel: usize,
    pub expanded: usize,
    pub c_out: usize,
    pub se: bool,
    pub act: Act,
    pub stride: usize,
    pub dilation: usize,
}

const fn row(c_in: usize, kernel: usize, expanded: usize, c_out: usize, se: bool, hs: bool, stride: usize, dilation: usize) -> BneckSpec {
    BneckSpec {
        c_in,
        kernel,
        expanded,
        c_out,
        se,
        act: if hs { Act::Hardswish } else { Act::Relu },
        stride,
        dilation,
    }
}

/// MobileNetV3-Large; the last stage trades its stride for dilation 2.
pub const MOBILENET_V3_LARGE: [BneckSpec; 15] = [
    row(16, 3, 16, 16, false, false, 1, 1),
    row(16, 3, 64, 24, false, false, 2, 1),
    row(24, 3, 72, 24, false, false, 1, 1),
    row(24, 5, 72, 40, true, false, 2, 1),
    row(40, 5, 120, 40, true, false, 1, 1),
    row(40, 5, 120, 40, true, false, 1, 1),
    row(40, 3, 240, 80, false, true, 2, 1),
    row(80, 3, 200, 80, false, true, 1, 1),
    row(80, 3, 184, 80, false, true, 1, 1),
    row(80, 3, 184, 80, false, true, 1, 1),
    row(80, 3, 480, 112, true, true, 1, 1),
    row(112, 3, 672, 112, true, true, 1, 1),
    row(112, 5, 672, 160, true, true, 1, 2),
    row(160, 5, 960, 160, true, true, 1, 2),
    row(160, 5, 960, 160, true, true, 1, 2),
];

/// Index of the last block of each tapped stage (1/2, 1/4, 1/8).
const TAPS: [usize; 3] = [0, 2, 5];

#[derive(Debug, Clone)]
pub struct SqueezeExcite {
    pub fc1: Conv,
    pub fc2: Conv,
}

impl SqueezeExcite {
    fn new(init: &mut Init, name: &str, c: usize) -> Self {
        let squeeze = make_divisible(c / 4, 8);
        SqueezeExcite {
            fc1: Conv::new(init, &format!("{name}.fc1"), c, squeeze, 1, Conv2dSpec::default(), BiasInit::Uniform),
            fc2: Conv::new(init, &format!("{name}.fc2"), squeeze, c, 1, Conv2dSpec::default(), BiasInit::Uniform),
        }
    }

    fn forward<'t, E: Element>(&self, cx: &Ctx<'t, '_, E>, x: &Var<'t, E>) -> Result<Var<'t, E>> {
        let s = x.global_avg_pool()?;
        let s = self.fc1.forward(cx, &s)?.relu();
        let s = self.fc2.forward(cx, &s)?.hardsigmoid();
        x.channel_scale(&s)
    }

    fn plan(&self, plan: &mut MacPlan) {
        self.fc1.plan(plan, 1, 1);
        self.fc2.plan(plan, 1, 1);
    }
}

#[derive(Debug, Clone)]
pub struct InvertedResidual {
    pub expand: Option<ConvBn>,
    pub depthwise: ConvBn,
    pub se: Option<SqueezeExcite>,
    pub project: ConvBn,
    pub residual: bool,
}

impl InvertedResidual {
    fn new(init: &mut Init, name: &str, s: &BneckSpec) -> Self {
        let expand = (s.expanded != s.c_in)
            .then(|| ConvBn::new(init, &format!("{name}.expand"), s.c_in, s.expanded, 1, Conv2dSpec::default(), s.act));
        let spec = Conv2dSpec::default()
            .with_dilation(s.dilation, s.kernel)
            .with_stride(s.stride)
            .with_groups(s.expanded);
        let depthwise = ConvBn::new(init, &format!("{name}.depthwise"), s.expanded, s.expanded, s.kernel, spec, s.act);
        let se = s.se.then(|| SqueezeExcite::new(init, &format!("{name}.se"), s.expanded));
        let project = ConvBn::new(init, &format!("{name}.project"), s.expanded, s.c_out, 1, Conv2dSpec::default(), Act::Identity);
        InvertedResidual {
            expand,
            depthwise,
            se,
            project,
            residual: s.stride == 1 && s.c_in == s.c_out,
        }
    }

    fn forward<'t, E: Element>(&self, cx: &Ctx<'t, '_, E>, x: &Var<'t, E>) -> Result<Var<'t, E>> {
        let mut y = match &self.expand {
            Some(e) => e.forward(cx, x)?,
            None => x.clone(),
        };
        y = self.depthwise.forward(cx, &y)?;
        if let Some(se) = &self.se {
            y = se.forward(cx, &y)?;
        }
        y = self.project.forward(cx, &y)?;
        if self.residual {
            y = y.add(x)?;
        }
        Ok(y)
    }

    fn plan(&self, plan: &mut MacPlan, mut h: usize, mut w: usize) -> (usize, usize) {
        if let Some(e) = &self.expand {
            (h, w) = e.plan(plan, h, w);
        }
        (h, w) = self.depthwise.plan(plan, h, w);
        if let Some(se) = &self.se {
            se.plan(plan);
        }
        self.project.plan(plan, h, w)
    }
}

#[derive(Debug, Clone)]
pub enum Backbone {
    MobileNet {
        stem: ConvBn,
        blocks: Vec<InvertedResidual>,
        last: ConvBn,
    },
    Tiny {
        layers: Vec<ConvBn>,
    },
}

impl Backbone {
    pub(crate) fn mobilenet(init: &mut Init) -> Self {
        let stem = ConvBn::new(init, "backbone.stem", 3, 16, 3, Conv2dSpec::same(3).with_stride(2), Act::Hardswish);
        let blocks = MOBILENET_V3_LARGE
            .iter()
            .enumerate()
            .map(|(i, s)| InvertedResidual::new(init, &format!("backbone.blocks.{i}"), s))
            .collect();
        let last = ConvBn::new(init, "backbone.last", 160, 960, 1, Conv2dSpec::default(), Act::Hardswish);
        Backbone::MobileNet { stem, blocks, last }
    }

    pub(crate) fn tiny(init: &mut Init, widths: [usize; 4]) -> Self {
        let mut c_in = 3;
        let layers = widths
            .iter()
            .enumerate()
            .map(|(i, &c)| {
                let l = ConvBn::new(init, &format!("backbone.layers.{i}"), c_in, c, 3, Conv2dSpec::same(3).with_stride(2), Act::Hardswish);
                c_in = c;
                l
            })
            .collect();
        Backbone::Tiny { layers }
    }

    /// Features at 1/2, 1/4, 1/8 and 1/16 of the input.
    pub fn forward<'t, E: Element>(&self, cx: &Ctx<'t, '_, E>, x: &Var<'t, E>) -> Result<[Var<'t, E>; 4]> {
        match self {
            Backbone::MobileNet { stem, blocks, last } => {
                let mut y = stem.forward(cx, x)?;
                let mut taps = Vec::with_capacity(4);
                for (i, b) in blocks.iter().enumerate() {
                    y = b.forward(cx, &y)?;
                    if TAPS.contains(&i) {
                        taps.push(y.clone());
                    }
                }
                taps.push(last.forward(cx, &y)?);
                Ok(taps.try_into().expect("four taps"))
            }
            Backbone::Tiny { layers } => {
                let mut y = x.clone();
                let mut taps = Vec::with_capacity(4);
                for l in layers {
                    y = l.forward(cx, &y)?;
                    taps.push(y.clone());
                }
                Ok(taps.try_into().expect("four taps"))
            }
        }
    }

    pub fn plan(&self, plan: &mut MacPlan, mut h: usize, mut w: usize) -> (usize, usize) {
        match self {
            Backbone::MobileNet { stem, blocks, last } => {
                (h, w) = stem.plan(plan, h, w);
                for b in blocks {
                    (h, w) = b.plan(plan, h, w);
                }
                last.plan(plan, h, w)
            }
            Backbone::Tiny { layers } => {
                for l in layers {
                    (h, w) = l.plan(plan, h, w);
                }
                (h, w)
            }
        }
    }
}
