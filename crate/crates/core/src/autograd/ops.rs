use super::Var;
use crate::error::{Error, Result};
use crate::tensor::{conv, kernels, norm, resize, Conv2dSpec, Element, Tensor};

fn scalar_grad<E: Element>(g: &Tensor<E>) -> E {
    g.data()[0]
}

impl<'t, E: Element> Var<'t, E> {
    fn unary(&self, f: impl Fn(E) -> E, df: impl Fn(E, E) -> E + 'static) -> Var<'t, E> {
        let y = self.value.map(&f);
        let x = self.value.clone();
        let out = y.clone();
        self.tape.record(y, &[self], move |g, _| {
            let d: Vec<E> = x
                .data()
                .iter()
                .zip(out.data())
                .zip(g.data())
                .map(|((&xi, &yi), &gi)| gi * df(xi, yi))
                .collect();
            Ok(vec![Some(Tensor::from_parts(x.shape().clone(), d))])
        })
    }

    pub fn relu(&self) -> Var<'t, E> {
        self.unary(|x| x.max(E::zero()), |x, _| if x > E::zero() { E::one() } else { E::zero() })
    }

    pub fn sigmoid(&self) -> Var<'t, E> {
        self.unary(|x| E::one() / (E::one() + (-x).exp()), |_, y| y * (E::one() - y))
    }

    pub fn tanh(&self) -> Var<'t, E> {
        self.unary(|x| x.tanh(), |_, y| E::one() - y * y)
    }

    /// `x·clamp(x+3, 0, 6)/6`.
    pub fn hardswish(&self) -> Var<'t, E> {
        let three = E::of(3.0);
        let six = E::of(6.0);
        self.unary(
            move |x| x * (x + three).max(E::zero()).min(six) / six,
            move |x, _| {
                if x < -three {
                    E::zero()
                } else if x > three {
                    E::one()
                } else {
                    (x + x + three) / six
                }
            },
        )
    }

    /// `clamp(x+3, 0, 6)/6`.
    pub fn hardsigmoid(&self) -> Var<'t, E> {
        let three = E::of(3.0);
        let six = E::of(6.0);
        self.unary(
            move |x| (x + three).max(E::zero()).min(six) / six,
            move |x, _| {
                if x > -three && x < three {
                    E::one() / six
                } else {
                    E::zero()
                }
            },
        )
    }

    /// `ln(1 + eˣ)`, evaluated without overflow.
    pub fn softplus(&self) -> Var<'t, E> {
        self.unary(
            |x| x.max(E::zero()) + (-x.abs()).exp().ln_1p(),
            |x, _| E::one() / (E::one() + (-x).exp()),
        )
    }

    pub fn abs(&self) -> Var<'t, E> {
        self.unary(|x| x.abs(), |x, _| if x > E::zero() { E::one() } else if x < E::zero() { -E::one() } else { E::zero() })
    }

    pub fn square(&self) -> Var<'t, E> {
        self.unary(|x| x * x, |x, _| x + x)
    }

    /// Saturation to `[lo, hi]`; the gradient passes where `lo ≤ x ≤ hi`.
    pub fn clamp(&self, lo: f64, hi: f64) -> Var<'t, E> {
        let (lo, hi) = (E::of(lo), E::of(hi));
        self.unary(move |x| x.max(lo).min(hi), move |x, _| if x >= lo && x <= hi { E::one() } else { E::zero() })
    }

    pub fn scale(&self, c: f64) -> Var<'t, E> {
        let c = E::of(c);
        self.unary(move |x| x * c, move |_, _| c)
    }

    pub fn add_scalar(&self, c: f64) -> Var<'t, E> {
        let c = E::of(c);
        self.unary(move |x| x + c, |_, _| E::one())
    }

    /// `c − x`.
    pub fn rsub_scalar(&self, c: f64) -> Var<'t, E> {
        let c = E::of(c);
        self.unary(move |x| c - x, |_, _| -E::one())
    }

    pub fn add(&self, other: &Var<'t, E>) -> Result<Var<'t, E>> {
        let y = self.value.zip_map(&other.value, "add", |a, b| a + b)?;
        Ok(self.tape.record(y, &[self, other], |g, _| Ok(vec![Some(g.clone()), Some(g.clone())])))
    }

    pub fn sub(&self, other: &Var<'t, E>) -> Result<Var<'t, E>> {
        let y = self.value.zip_map(&other.value, "sub", |a, b| a - b)?;
        Ok(self
            .tape
            .record(y, &[self, other], |g, _| Ok(vec![Some(g.clone()), Some(g.map(|v| -v))])))
    }

    pub fn mul(&self, other: &Var<'t, E>) -> Result<Var<'t, E>> {
        let y = self.value.zip_map(&other.value, "mul", |a, b| a * b)?;
        let (a, b) = (self.value.clone(), other.value.clone());
        Ok(self.tape.record(y, &[self, other], move |g, needs| {
            let ga = needs[0].then(|| g.zip_map(&b, "mul backward", |g, b| g * b)).transpose()?;
            let gb = needs[1].then(|| g.zip_map(&a, "mul backward", |g, a| g * a)).transpose()?;
            Ok(vec![ga, gb])
        }))
    }

    pub fn reshape(&self, dims: impl Into<Vec<usize>>) -> Result<Var<'t, E>> {
        let y = self.value.reshape(dims)?;
        let src = self.value.dims().to_vec();
        Ok(self.tape.record(y, &[self], move |g, _| Ok(vec![Some(g.reshape(src.clone())?)])))
    }

    pub fn sum(&self) -> Var<'t, E> {
        let total: E = self.value.data().iter().copied().sum();
        let shape = self.value.dims().to_vec();
        self.tape.record(Tensor::scalar(total), &[self], move |g, _| {
            Ok(vec![Some(Tensor::full(shape.clone(), scalar_grad(g))?)])
        })
    }

    pub fn mean(&self) -> Var<'t, E> {
        let n = self.value.numel();
        self.sum().scale(1.0 / n as f64)
    }

    pub fn conv2d(&self, weight: &Var<'t, E>, bias: Option<&Var<'t, E>>, spec: Conv2dSpec) -> Result<Var<'t, E>> {
        let y = conv::conv2d(&self.value, &weight.value, bias.map(|b| &b.value), spec)?;
        let (x, w) = (self.value.clone(), weight.value.clone());
        let mut parents = vec![self, weight];
        if let Some(b) = bias {
            parents.push(b);
        }
        Ok(self.tape.record(y, &parents, move |g, needs| {
            let need_bias = needs.get(2).copied().unwrap_or(false);
            let grads = conv::conv2d_backward(&x, &w, g, spec, [needs[0], needs[1], need_bias])?;
            let mut out = vec![grads.input, grads.weight];
            if needs.len() == 3 {
                out.push(grads.bias);
            }
            Ok(out)
        }))
    }

    pub fn avg_pool_2x2(&self) -> Result<Var<'t, E>> {
        let y = resize::avg_pool_2x2(&self.value)?;
        let src = self.value.shape().clone();
        Ok(self
            .tape
            .record(y, &[self], move |g, _| Ok(vec![Some(resize::avg_pool_2x2_backward(&src, g)?)])))
    }

    pub fn global_avg_pool(&self) -> Result<Var<'t, E>> {
        let y = resize::global_avg_pool(&self.value)?;
        let src = self.value.shape().clone();
        Ok(self
            .tape
            .record(y, &[self], move |g, _| Ok(vec![Some(resize::global_avg_pool_backward(&src, g)?)])))
    }

    pub fn bilinear_resize(&self, out_h: usize, out_w: usize, align_corners: bool) -> Result<Var<'t, E>> {
        let y = resize::bilinear_resize(&self.value, out_h, out_w, align_corners)?;
        let src = self.value.shape().clone();
        Ok(self.tape.record(y, &[self], move |g, _| {
            Ok(vec![Some(resize::bilinear_resize_backward(&src, g, align_corners)?)])
        }))
    }

    pub fn reflect_pad(&self, pad: usize) -> Result<Var<'t, E>> {
        let y = resize::reflect_pad(&self.value, pad)?;
        let src = self.value.shape().clone();
        Ok(self
            .tape
            .record(y, &[self], move |g, _| Ok(vec![Some(resize::reflect_pad_backward(&src, g, pad)?)])))
    }

    pub fn zero_insert(&self, out_h: usize, out_w: usize) -> Result<Var<'t, E>> {
        let y = resize::zero_insert(&self.value, out_h, out_w)?;
        Ok(self
            .tape
            .record(y, &[self], move |g, _| Ok(vec![Some(resize::subsample2(g)?)])))
    }

    pub fn subsample2(&self) -> Result<Var<'t, E>> {
        let y = resize::subsample2(&self.value)?;
        let (_, _, h, w) = self.value.nchw()?;
        Ok(self
            .tape
            .record(y, &[self], move |g, _| Ok(vec![Some(resize::zero_insert(g, h, w)?)])))
    }

    pub fn box_filter(&self, radius: usize) -> Result<Var<'t, E>> {
        let y = resize::box_filter(&self.value, radius)?;
        Ok(self
            .tape
            .record(y, &[self], move |g, _| Ok(vec![Some(resize::box_filter_backward(g, radius)?)])))
    }

    /// Training-mode normalisation; also returns the batch statistics for running-stat updates.
    pub fn batch_norm_train(
        &self,
        gamma: &Var<'t, E>,
        beta: &Var<'t, E>,
        eps: f64,
    ) -> Result<(Var<'t, E>, norm::BatchStats<E>)> {
        let (y, stats) = norm::batch_norm_train(&self.value, &gamma.value, &beta.value, eps)?;
        let saved = stats.clone();
        let gm = gamma.value.clone();
        let out = self.tape.record(y, &[self, gamma, beta], move |g, _| {
            let (dx, dg, db) = norm::batch_norm_train_backward(g, &saved, &gm)?;
            Ok(vec![Some(dx), Some(dg), Some(db)])
        });
        Ok((out, stats))
    }

    pub fn batch_norm_infer(
        &self,
        gamma: &Var<'t, E>,
        beta: &Var<'t, E>,
        running_mean: &Tensor<E>,
        running_var: &Tensor<E>,
        eps: f64,
    ) -> Result<Var<'t, E>> {
        let (y, scale) = norm::batch_norm_infer(&self.value, &gamma.value, &beta.value, running_mean, running_var, eps)?;
        let x = self.value.clone();
        let (rm, rv) = (running_mean.clone(), running_var.clone());
        Ok(self.tape.record(y, &[self, gamma, beta], move |g, needs| {
            let (n, c, h, w) = g.nchw()?;
            let hw = h * w;
            let dx = needs[0].then(|| {
                let mut d = g.to_vec();
                for (i, plane) in d.chunks_mut(hw).enumerate() {
                    let s = scale[i % c];
                    plane.iter_mut().for_each(|v| *v = *v * s);
                }
                Tensor::from_parts(g.shape().clone(), d)
            });
            let mut dgamma = vec![E::zero(); c];
            let mut dbeta = vec![E::zero(); c];
            for b in 0..n {
                for ch in 0..c {
                    let base = (b * c + ch) * hw;
                    let inv = E::one() / (rv.data()[ch] + E::of(eps)).sqrt();
                    for i in base..base + hw {
                        dgamma[ch] = dgamma[ch] + g.data()[i] * (x.data()[i] - rm.data()[ch]) * inv;
                        dbeta[ch] = dbeta[ch] + g.data()[i];
                    }
                }
            }
            Ok(vec![
                dx,
                Some(Tensor::from_parts(rm.shape().clone(), dgamma)),
                Some(Tensor::from_parts(rm.shape().clone(), dbeta)),
            ])
        }))
    }

    pub fn concat(parts: &[&Var<'t, E>], axis: usize) -> Result<Var<'t, E>> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Contract("concat of zero tensors".into()))?;
        let values: Vec<&Tensor<E>> = parts.iter().map(|p| &p.value).collect();
        let y = kernels::concat(&values, axis)?;
        let extents: Vec<usize> = parts.iter().map(|p| p.value.dims()[axis]).collect();
        Ok(first.tape.record(y, parts, move |g, needs| {
            let mut start = 0;
            let mut out = Vec::with_capacity(extents.len());
            for (&ext, &need) in extents.iter().zip(needs) {
                out.push(need.then(|| kernels::narrow(g, axis, start, ext)).transpose()?);
                start += ext;
            }
            Ok(out)
        }))
    }

    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Result<Var<'t, E>> {
        let y = kernels::narrow(&self.value, axis, start, len)?;
        let src = self.value.shape().clone();
        Ok(self.tape.record(y, &[self], move |g, _| {
            Ok(vec![Some(kernels::narrow_backward(&src, g, axis, start))])
        }))
    }

    /// Consecutive slices of `sizes` along `axis`; sizes must cover the axis exactly.
    pub fn split(&self, axis: usize, sizes: &[usize]) -> Result<Vec<Var<'t, E>>> {
        let rank = self.value.shape().rank();
        if axis >= rank {
            return Err(Error::Param(format!("split axis {axis} out of range for rank {rank}")));
        }
        let ext = self.value.dims()[axis];
        if sizes.iter().sum::<usize>() != ext {
            return Err(Error::Param(format!("split sizes {sizes:?} do not sum to extent {ext}")));
        }
        let mut start = 0;
        sizes
            .iter()
            .map(|&len| {
                let part = self.narrow(axis, start, len);
                start += len;
                part
            })
            .collect()
    }

    /// Rows of axis 0 selected by `indices`.
    pub fn gather_rows(&self, indices: &[usize]) -> Result<Var<'t, E>> {
        let y = kernels::gather_rows(&self.value, indices)?;
        let src = self.value.shape().clone();
        let idx = indices.to_vec();
        Ok(self.tape.record(y, &[self], move |g, _| {
            Ok(vec![Some(kernels::gather_rows_backward(&src, g, &idx))])
        }))
    }

    /// Scales every `H×W` plane by the matching entry of an `N×C×1×1` gate.
    pub fn channel_scale(&self, gate: &Var<'t, E>) -> Result<Var<'t, E>> {
        let y = kernels::channel_scale(&self.value, &gate.value)?;
        let (x, s) = (self.value.clone(), gate.value.clone());
        Ok(self.tape.record(y, &[self, gate], move |g, needs| {
            let gx = needs[0].then(|| kernels::channel_scale(g, &s)).transpose()?;
            let gs = needs[1].then(|| kernels::plane_dot(g, &x)).transpose()?;
            Ok(vec![gx, gs])
        }))
    }
}
