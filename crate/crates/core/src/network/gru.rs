//! Convolutional GRU over frame sequences.
//!
//! ```text
//! z, r = σ(W_zr,x ∗ x + b_zr + W_zr,h ∗ h)
//! o    = tanh(W_o,x ∗ x + b_o + W_o,h ∗ (r ⊙ h))
//! h'   = z ⊙ h + (1 − z) ⊙ o
//! ```

use super::layers::{BiasInit, Conv, Ctx, MacPlan};
use super::params::{Init, ParamStore};
use crate::autograd::Var;
use crate::error::{Error, Result};
use crate::tensor::{Conv2dSpec, Element, Tensor};

#[derive(Debug, Clone)]
pub struct ConvGru {
    pub channels: usize,
    pub zr_x: Conv,
    pub zr_h: Conv,
    pub o_x: Conv,
    pub o_h: Conv,
}

impl ConvGru {
    pub(crate) fn new(init: &mut Init, name: &str, channels: usize) -> Self {
        let spec = Conv2dSpec::same(3);
        let c = channels;
        ConvGru {
            channels,
            zr_x: Conv::new(init, &format!("{name}.zr_x"), c, 2 * c, 3, spec, BiasInit::Zero),
            zr_h: Conv::new(init, &format!("{name}.zr_h"), c, 2 * c, 3, spec, BiasInit::None),
            o_x: Conv::new(init, &format!("{name}.o_x"), c, c, 3, spec, BiasInit::Zero),
            o_h: Conv::new(init, &format!("{name}.o_h"), c, c, 3, spec, BiasInit::None),
        }
    }

    /// A free-standing cell named `gru.*` with its own parameter store.
    pub fn standalone(channels: usize, seed: u64) -> (ConvGru, ParamStore<f32>) {
        let mut init = Init::new(seed);
        let gru = ConvGru::new(&mut init, "gru", channels);
        (gru, init.finish())
    }

    /// One step given the precomputed input terms `xzr = W_zr,x ∗ x + b_zr` and `xo = W_o,x ∗ x + b_o`.
    fn step<'t, E: Element>(
        &self,
        cx: &Ctx<'t, '_, E>,
        xzr: &Var<'t, E>,
        xo: &Var<'t, E>,
        h: &Var<'t, E>,
    ) -> Result<Var<'t, E>> {
        let zr = xzr.add(&self.zr_h.forward(cx, h)?)?.sigmoid();
        let parts = zr.split(1, &[self.channels, self.channels])?;
        let (z, r) = (&parts[0], &parts[1]);
        let o = xo.add(&self.o_h.forward(cx, &r.mul(h)?)?)?.tanh();
        // z⊙h + (1−z)⊙o  ==  o + z⊙(h − o)
        o.add(&z.mul(&h.sub(&o)?)?)
    }

    /// Single cell update `h_t` from `x_t` and `h_prev`, both `N×C×H×W`.
    pub fn cell<'t, E: Element>(&self, cx: &Ctx<'t, '_, E>, x: &Var<'t, E>, h: &Var<'t, E>) -> Result<Var<'t, E>> {
        if x.dims() != h.dims() || x.dims()[1] != self.channels {
            return Err(Error::shape("conv_gru_cell", x.dims(), h.dims()));
        }
        let xzr = self.zr_x.forward(cx, x)?;
        let xo = self.o_x.forward(cx, x)?;
        self.step(cx, &xzr, &xo, h)
    }

    /// Runs over `x` laid out as `(B·T)×C×H×W`, batch-major. Returns all outputs and the final state.
    pub fn forward_seq<'t, E: Element>(
        &self,
        cx: &Ctx<'t, '_, E>,
        x: &Var<'t, E>,
        batch: usize,
        frames: usize,
        h0: Option<&Tensor<E>>,
    ) -> Result<(Var<'t, E>, Var<'t, E>)> {
        let (n, c, hh, ww) = x.value().nchw()?;
        if n != batch * frames || c != self.channels {
            return Err(Error::shape("conv_gru sequence", x.dims(), &[batch * frames, self.channels, hh, ww]));
        }
        let mut h = match h0 {
            Some(t) => {
                if t.dims() != [batch, c, hh, ww] {
                    return Err(Error::StateReset(format!(
                        "hidden state {:?} but the step needs {:?}",
                        t.dims(),
                        [batch, c, hh, ww]
                    )));
                }
                cx.tape().constant(t.clone())
            }
            None => cx.tape().constant(Tensor::zeros(vec![batch, c, hh, ww])?),
        };
        // Input terms for all frames at once.
        let xzr = self.zr_x.forward(cx, x)?;
        let xo = self.o_x.forward(cx, x)?;
        if frames == 1 {
            let out = self.step(cx, &xzr, &xo, &h)?;
            return Ok((out.clone(), out));
        }
        let mut outs = Vec::with_capacity(frames);
        for t in 0..frames {
            let rows: Vec<usize> = (0..batch).map(|b| b * frames + t).collect();
            h = self.step(cx, &xzr.gather_rows(&rows)?, &xo.gather_rows(&rows)?, &h)?;
            outs.push(h.clone());
        }
        let refs: Vec<&Var<'t, E>> = outs.iter().collect();
        let time_major = Var::concat(&refs, 0)?;
        let order: Vec<usize> = (0..batch * frames).map(|i| (i % frames) * batch + i / frames).collect();
        Ok((time_major.gather_rows(&order)?, h))
    }

    pub fn plan(&self, plan: &mut MacPlan, h: usize, w: usize) {
        for conv in [&self.zr_x, &self.zr_h, &self.o_x, &self.o_h] {
            conv.plan(plan, h, w);
        }
    }
}
