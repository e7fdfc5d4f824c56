//! Per-channel batch normalisation over the `N×H×W` axes.
//!
//! Sequences are flattened to `(B·T)×C×H×W` before reaching these kernels, so
//! training statistics cover batch and time together.

use super::{Element, Tensor};
use crate::error::{Error, Result};

pub const DEFAULT_EPS: f64 = 1e-5;
pub const DEFAULT_MOMENTUM: f64 = 0.1;

/// Saved forward quantities of a training-mode normalisation.
#[derive(Debug, Clone)]
pub struct BatchStats<E: Element> {
    pub mean: Vec<E>,
    /// Biased (population) variance of the batch.
    pub var: Vec<E>,
    pub inv_std: Vec<E>,
    pub normalized: Tensor<E>,
}

fn check<E: Element>(x: &Tensor<E>, gamma: &Tensor<E>, beta: &Tensor<E>, eps: f64) -> Result<(usize, usize, usize)> {
    if eps <= 0.0 || eps.is_nan() {
        return Err(Error::Param(format!("batch_norm eps must be positive, got {eps}")));
    }
    let (n, c, h, w) = x.nchw()?;
    for p in [gamma, beta] {
        if p.dims() != [c] {
            return Err(Error::shape("batch_norm parameter", p.dims(), &[c]));
        }
    }
    Ok((n, c, h * w))
}

pub fn batch_norm_train<E: Element>(
    x: &Tensor<E>,
    gamma: &Tensor<E>,
    beta: &Tensor<E>,
    eps: f64,
) -> Result<(Tensor<E>, BatchStats<E>)> {
    let (n, c, hw) = check(x, gamma, beta, eps)?;
    let count = (n * hw) as f64;
    let data = x.data();
    let mut mean = vec![E::zero(); c];
    let mut var = vec![E::zero(); c];
    let mut inv_std = vec![E::zero(); c];
    for ch in 0..c {
        let planes = (0..n).map(|b| &data[(b * c + ch) * hw..(b * c + ch + 1) * hw]);
        let mu = planes.clone().flat_map(|p| p.iter()).map(|v| v.f64()).sum::<f64>() / count;
        let sigma2 = planes
            .flat_map(|p| p.iter())
            .map(|v| (v.f64() - mu).powi(2))
            .sum::<f64>()
            / count;
        mean[ch] = E::of(mu);
        var[ch] = E::of(sigma2);
        inv_std[ch] = E::of(1.0 / (sigma2 + eps).sqrt());
    }
    let mut xhat = vec![E::zero(); data.len()];
    let mut out = vec![E::zero(); data.len()];
    for b in 0..n {
        for ch in 0..c {
            let base = (b * c + ch) * hw;
            let (m, s, g, bt) = (mean[ch], inv_std[ch], gamma.data()[ch], beta.data()[ch]);
            for i in base..base + hw {
                let v = (data[i] - m) * s;
                xhat[i] = v;
                out[i] = v * g + bt;
            }
        }
    }
    let normalized = Tensor::from_parts(x.shape().clone(), xhat);
    Ok((
        Tensor::from_parts(x.shape().clone(), out),
        BatchStats {
            mean,
            var,
            inv_std,
            normalized,
        },
    ))
}

/// Returns `(dx, dgamma, dbeta)`.
pub fn batch_norm_train_backward<E: Element>(
    grad: &Tensor<E>,
    stats: &BatchStats<E>,
    gamma: &Tensor<E>,
) -> Result<(Tensor<E>, Tensor<E>, Tensor<E>)> {
    let (n, c, h, w) = grad.nchw()?;
    let hw = h * w;
    let m = (n * hw) as f64;
    let dy = grad.data();
    let xhat = stats.normalized.data();
    let mut dgamma = vec![E::zero(); c];
    let mut dbeta = vec![E::zero(); c];
    let mut dx = vec![E::zero(); dy.len()];
    for ch in 0..c {
        let (mut sum_dy, mut sum_dy_xhat) = (0.0f64, 0.0f64);
        for b in 0..n {
            let base = (b * c + ch) * hw;
            for i in base..base + hw {
                sum_dy += dy[i].f64();
                sum_dy_xhat += (dy[i] * xhat[i]).f64();
            }
        }
        dgamma[ch] = E::of(sum_dy_xhat);
        dbeta[ch] = E::of(sum_dy);
        let g = gamma.data()[ch].f64();
        let scale = g * stats.inv_std[ch].f64() / m;
        for b in 0..n {
            let base = (b * c + ch) * hw;
            for i in base..base + hw {
                let v = scale * (m * dy[i].f64() - sum_dy - xhat[i].f64() * sum_dy_xhat);
                dx[i] = E::of(v);
            }
        }
    }
    Ok((
        Tensor::from_parts(grad.shape().clone(), dx),
        Tensor::from_parts(gamma.shape().clone(), dgamma),
        Tensor::from_parts(gamma.shape().clone(), dbeta),
    ))
}

/// Inference-mode normalisation with running statistics. Also returns the per-channel scale `γ/√(σ²+ε)`.
pub fn batch_norm_infer<E: Element>(
    x: &Tensor<E>,
    gamma: &Tensor<E>,
    beta: &Tensor<E>,
    running_mean: &Tensor<E>,
    running_var: &Tensor<E>,
    eps: f64,
) -> Result<(Tensor<E>, Vec<E>)> {
    let (n, c, hw) = check(x, gamma, beta, eps)?;
    for p in [running_mean, running_var] {
        if p.dims() != [c] {
            return Err(Error::shape("batch_norm running stats", p.dims(), &[c]));
        }
    }
    let scale: Vec<E> = (0..c)
        .map(|ch| gamma.data()[ch] / (running_var.data()[ch] + E::of(eps)).sqrt())
        .collect();
    let mut out = x.to_vec();
    for b in 0..n {
        for ch in 0..c {
            let base = (b * c + ch) * hw;
            let (m, s, bt) = (running_mean.data()[ch], scale[ch], beta.data()[ch]);
            out[base..base + hw].iter_mut().for_each(|v| *v = (*v - m) * s + bt);
        }
    }
    Ok((Tensor::from_parts(x.shape().clone(), out), scale))
}

/// `running ← (1 − momentum)·running + momentum·batch`.
pub fn update_running<E: Element>(running: &Tensor<E>, batch: &[E], momentum: f64) -> Tensor<E> {
    let keep = E::of(1.0 - momentum);
    let take = E::of(momentum);
    Tensor::from_parts(
        running.shape().clone(),
        running.data().iter().zip(batch).map(|(&r, &b)| keep * r + take * b).collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn affine(c: usize) -> (Tensor<f64>, Tensor<f64>) {
        (Tensor::ones(vec![c]).unwrap(), Tensor::zeros(vec![c]).unwrap())
    }

    #[test]
    fn infer_identity_with_unit_stats() {
        let x = Tensor::<f64>::from_fn(vec![2, 3, 2, 2], |i| i as f64 * 0.1).unwrap();
        let (g, b) = affine(3);
        let (y, _) = batch_norm_infer(&x, &g, &b, &Tensor::zeros(vec![3]).unwrap(), &Tensor::ones(vec![3]).unwrap(), 1e-5).unwrap();
        assert!(y.max_abs_diff(&x).unwrap() < 1e-5 * 3.0);
    }

    #[test]
    fn train_constant_input_maps_to_zero() {
        let x = Tensor::<f64>::full(vec![2, 2, 3, 3], 4.2).unwrap();
        let (g, b) = affine(2);
        let (y, _) = batch_norm_train(&x, &g, &b, 1e-5).unwrap();
        assert!(y.data().iter().all(|v| v.abs() < 1e-9));
    }

    #[test]
    fn train_output_statistics() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let x = Tensor::<f64>::rand_uniform(vec![3, 2, 4, 4], -3.0, 5.0, &mut rng).unwrap();
        let (g, b) = affine(2);
        let (y, _) = batch_norm_train(&x, &g, &b, 1e-5).unwrap();
        for ch in 0..2 {
            let vals: Vec<f64> = (0..3).flat_map(|n| y.data()[(n * 2 + ch) * 16..(n * 2 + ch + 1) * 16].to_vec()).collect();
            let mu = vals.iter().sum::<f64>() / vals.len() as f64;
            let var = vals.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / vals.len() as f64;
            assert!(mu.abs() < 1e-5);
            assert!((var - 1.0).abs() < 1e-4);
        }
    }

    #[test]
    fn momentum_one_reproduces_train_output() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let x = Tensor::<f32>::rand_uniform(vec![4, 3, 5, 5], -1.0, 2.0, &mut rng).unwrap();
        let g = Tensor::<f32>::rand_uniform(vec![3], 0.5, 1.5, &mut rng).unwrap();
        let b = Tensor::<f32>::rand_uniform(vec![3], -0.5, 0.5, &mut rng).unwrap();
        let (train, stats) = batch_norm_train(&x, &g, &b, 1e-5).unwrap();
        let rm = update_running(&Tensor::zeros(vec![3]).unwrap(), &stats.mean, 1.0);
        let rv = update_running(&Tensor::ones(vec![3]).unwrap(), &stats.var, 1.0);
        let (infer, _) = batch_norm_infer(&x, &g, &b, &rm, &rv, 1e-5).unwrap();
        assert!(infer.max_abs_diff(&train).unwrap() < 1e-5);
    }

    #[test]
    fn rejects_nonpositive_eps() {
        let x = Tensor::<f32>::zeros(vec![1, 1, 2, 2]).unwrap();
        let g = Tensor::<f32>::ones(vec![1]).unwrap();
        assert!(matches!(batch_norm_train(&x, &g, &g, 0.0), Err(Error::Param(_))));
    }
}
