//! Parameterised building blocks and the forward context that binds them to a tape.

use std::cell::{Cell, RefCell};

use super::params::{Group, Init, ParamStore};
use crate::autograd::{Tape, Var};
use crate::error::Result;
use crate::tensor::conv::ConvGeometry;
use crate::tensor::norm::DEFAULT_EPS;
use crate::tensor::{Conv2dSpec, Element};

/// Batch statistics produced by one training-mode normalisation.
#[derive(Debug, Clone)]
pub struct BnUpdate<E: Element> {
    pub mean_buffer: usize,
    pub var_buffer: usize,
    pub mean: Vec<E>,
    pub var: Vec<E>,
}

/// Parameters bound to one tape for one forward pass.
pub struct Ctx<'t, 'm, E: Element> {
    tape: &'t Tape<E>,
    params: Vec<Var<'t, E>>,
    store: &'m ParamStore<E>,
    train: bool,
    updates: RefCell<Vec<BnUpdate<E>>>,
    macs: Cell<u64>,
}

impl<'t, 'm, E: Element> Ctx<'t, 'm, E> {
    /// Every parameter constant, normalisation from running statistics.
    pub fn inference(tape: &'t Tape<E>, store: &'m ParamStore<E>) -> Self {
        let params = store.values().iter().map(|v| tape.constant(v.clone())).collect();
        Self::with_params(tape, store, params, false)
    }

    /// Parameters of groups accepted by `trainable` become tape leaves; normalisation uses batch statistics.
    pub fn training(tape: &'t Tape<E>, store: &'m ParamStore<E>, trainable: impl Fn(Group) -> bool) -> Self {
        let params = store
            .values()
            .iter()
            .zip(store.groups())
            .map(|(v, &g)| {
                if trainable(g) {
                    tape.var(v.clone())
                } else {
                    tape.constant(v.clone())
                }
            })
            .collect();
        Self::with_params(tape, store, params, true)
    }

    /// Caller-bound parameters, one per store entry, in store order.
    pub fn with_params(tape: &'t Tape<E>, store: &'m ParamStore<E>, params: Vec<Var<'t, E>>, train: bool) -> Self {
        assert_eq!(params.len(), store.len(), "one bound variable per parameter");
        Ctx {
            tape,
            params,
            store,
            train,
            updates: RefCell::new(Vec::new()),
            macs: Cell::new(0),
        }
    }

    pub fn tape(&self) -> &'t Tape<E> {
        self.tape
    }

    pub fn param(&self, i: usize) -> &Var<'t, E> {
        &self.params[i]
    }

    pub fn params(&self) -> &[Var<'t, E>] {
        &self.params
    }

    pub fn store(&self) -> &'m ParamStore<E> {
        self.store
    }

    pub fn is_training(&self) -> bool {
        self.train
    }

    /// Multiply-accumulates executed by convolutions so far.
    pub fn macs(&self) -> u64 {
        self.macs.get()
    }

    pub fn take_bn_updates(&self) -> Vec<BnUpdate<E>> {
        std::mem::take(&mut self.updates.borrow_mut())
    }
}

/// Analytic per-convolution work, accumulated by walking layer extents without running them.
#[derive(Debug, Default, Clone)]
pub struct MacPlan {
    pub entries: Vec<MacEntry>,
}

#[derive(Debug, Clone)]
pub struct MacEntry {
    pub name: String,
    pub macs: u64,
    /// Runs on a globally pooled 1×1 map, so its cost does not grow with the frame.
    pub pooled: bool,
}

impl MacPlan {
    pub fn total(&self) -> u64 {
        self.entries.iter().map(|e| e.macs).sum()
    }

    pub fn spatial_total(&self) -> u64 {
        self.entries.iter().filter(|e| !e.pooled).map(|e| e.macs).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Act {
    Identity,
    Relu,
    Hardswish,
}

impl Act {
    pub fn apply<'t, E: Element>(self, x: Var<'t, E>) -> Var<'t, E> {
        match self {
            Act::Identity => x,
            Act::Relu => x.relu(),
            Act::Hardswish => x.hardswish(),
        }
    }
}

pub(crate) enum BiasInit {
    None,
    Uniform,
    Zero,
    Values(Vec<f32>),
}

#[derive(Debug, Clone)]
pub struct Conv {
    pub name: String,
    pub weight: usize,
    pub bias: Option<usize>,
    pub spec: Conv2dSpec,
    pub c_in: usize,
    pub c_out: usize,
    pub k: usize,
}

impl Conv {
    pub(crate) fn new(
        init: &mut Init,
        name: &str,
        c_in: usize,
        c_out: usize,
        k: usize,
        spec: Conv2dSpec,
        bias: BiasInit,
    ) -> Conv {
        let fan_in = c_in / spec.groups * k * k;
        let weight = init.uniform(format!("{name}.weight"), vec![c_out, c_in / spec.groups, k, k], fan_in);
        let bias = match bias {
            BiasInit::None => None,
            BiasInit::Uniform => Some(init.uniform(format!("{name}.bias"), vec![c_out], fan_in)),
            BiasInit::Zero => Some(init.constant(format!("{name}.bias"), vec![c_out], 0.0)),
            BiasInit::Values(v) => {
                assert_eq!(v.len(), c_out);
                Some(init.push(
                    format!("{name}.bias"),
                    crate::tensor::Tensor::from_vec(vec![c_out], v).expect("bias length"),
                ))
            }
        };
        Conv {
            name: name.to_string(),
            weight,
            bias,
            spec,
            c_in,
            c_out,
            k,
        }
    }

    pub fn forward<'t, E: Element>(&self, cx: &Ctx<'t, '_, E>, x: &Var<'t, E>) -> Result<Var<'t, E>> {
        let w = cx.param(self.weight);
        let geom = ConvGeometry::new(x.dims(), w.dims(), self.spec)?;
        cx.macs.set(cx.macs.get() + geom.macs());
        x.conv2d(w, self.bias.map(|b| cx.param(b)), self.spec)
    }

    pub fn plan(&self, plan: &mut MacPlan, h: usize, w: usize) -> (usize, usize) {
        let ho = self.spec.out_extent(h, self.k).expect("planned extent");
        let wo = self.spec.out_extent(w, self.k).expect("planned extent");
        plan.entries.push(MacEntry {
            name: self.name.clone(),
            macs: (self.c_out * (self.c_in / self.spec.groups) * self.k * self.k * ho * wo) as u64,
            pooled: h == 1 && w == 1,
        });
        (ho, wo)
    }
}

#[derive(Debug, Clone)]
pub struct BatchNorm {
    pub gamma: usize,
    pub beta: usize,
    pub running_mean: usize,
    pub running_var: usize,
}

impl BatchNorm {
    pub(crate) fn new(init: &mut Init, name: &str, c: usize) -> BatchNorm {
        use crate::tensor::Tensor;
        BatchNorm {
            gamma: init.constant(format!("{name}.weight"), vec![c], 1.0),
            beta: init.constant(format!("{name}.bias"), vec![c], 0.0),
            running_mean: init.buffer(format!("{name}.running_mean"), Tensor::zeros(vec![c]).expect("c > 0")),
            running_var: init.buffer(format!("{name}.running_var"), Tensor::ones(vec![c]).expect("c > 0")),
        }
    }

    pub fn forward<'t, E: Element>(&self, cx: &Ctx<'t, '_, E>, x: &Var<'t, E>) -> Result<Var<'t, E>> {
        let (gamma, beta) = (cx.param(self.gamma), cx.param(self.beta));
        if cx.train {
            let (y, stats) = x.batch_norm_train(gamma, beta, DEFAULT_EPS)?;
            cx.updates.borrow_mut().push(BnUpdate {
                mean_buffer: self.running_mean,
                var_buffer: self.running_var,
                mean: stats.mean,
                var: stats.var,
            });
            Ok(y)
        } else {
            let buffers = cx.store.buffers();
            x.batch_norm_infer(
                gamma,
                beta,
                &buffers[self.running_mean],
                &buffers[self.running_var],
                DEFAULT_EPS,
            )
        }
    }
}

/// Convolution without bias, normalisation, activation.
#[derive(Debug, Clone)]
pub struct ConvBn {
    pub conv: Conv,
    pub bn: BatchNorm,
    pub act: Act,
}

impl ConvBn {
    pub(crate) fn new(init: &mut Init, name: &str, c_in: usize, c_out: usize, k: usize, spec: Conv2dSpec, act: Act) -> Self {
        ConvBn {
            conv: Conv::new(init, &format!("{name}.conv"), c_in, c_out, k, spec, BiasInit::None),
            bn: BatchNorm::new(init, &format!("{name}.bn"), c_out),
            act,
        }
    }

    pub fn forward<'t, E: Element>(&self, cx: &Ctx<'t, '_, E>, x: &Var<'t, E>) -> Result<Var<'t, E>> {
        let y = self.conv.forward(cx, x)?;
        Ok(self.act.apply(self.bn.forward(cx, &y)?))
    }

    pub fn plan(&self, plan: &mut MacPlan, h: usize, w: usize) -> (usize, usize) {
        self.conv.plan(plan, h, w)
    }
}
