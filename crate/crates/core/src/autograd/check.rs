//! Central-difference gradient checking in 64-bit mode.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct FdOptions {
    pub step: f64,
    /// Five-point stencil (fourth order) instead of the plain two-point difference.
    pub five_point: bool,
    /// Checks at most this many elements per input, chosen at random; `None` checks all.
    pub max_elements: Option<usize>,
    pub seed: u64,
    /// Lower bound of the relative-error denominator, absorbing roundoff on near-zero gradients.
    pub floor: f64,
}

impl Default for FdOptions {
    fn default() -> Self {
        FdOptions {
            step: 1e-4,
            five_point: true,
            max_elements: None,
            seed: 0,
            floor: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FdReport {
    /// max over checked elements of `|g_a − g_n| / max(floor, |g_n|)`.
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub checked: usize,
    /// `(input index, flat element index)` of the worst relative error.
    pub worst: Option<(usize, usize)>,
}

fn eval<F>(f: &F, inputs: &[Tensor<f64>]) -> Result<f64>
where
    F: for<'t> Fn(&[Var<'t, f64>]) -> Result<Var<'t, f64>>,
{
    let tape = Tape::no_grad();
    let vars: Vec<_> = inputs.iter().map(|x| tape.constant(x.clone())).collect();
    let out = f(&vars)?;
    out.value().item()
}

fn perturbed(inputs: &[Tensor<f64>], which: usize, elem: usize, delta: f64) -> Vec<Tensor<f64>> {
    let mut out = inputs.to_vec();
    let mut data = out[which].to_vec();
    data[elem] += delta;
    out[which] = Tensor::from_vec(out[which].dims().to_vec(), data).expect("same shape");
    out
}

/// Compares the tape gradient of the scalar `f` against numerical differences at `inputs`.
pub fn finite_difference_check<F>(inputs: &[Tensor<f64>], f: F, opts: &FdOptions) -> Result<FdReport>
where
    F: for<'t> Fn(&[Var<'t, f64>]) -> Result<Var<'t, f64>>,
{
    if !(opts.step > 0.0) {
        return Err(Error::Param(format!("finite-difference step must be positive, got {}", opts.step)));
    }
    let tape = Tape::new();
    let vars: Vec<_> = inputs.iter().map(|x| tape.var(x.clone())).collect();
    let loss = f(&vars)?;
    let grads = if loss.requires_grad() {
        Some(tape.backward(&loss)?)
    } else {
        None
    };
    let analytic: Vec<Tensor<f64>> = vars
        .iter()
        .map(|v| grads.as_ref().map_or_else(|| v.value().zeros_like(), |g| g.get_or_zero(v)))
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let h = opts.step;
    let mut report = FdReport {
        max_rel_error: 0.0,
        max_abs_error: 0.0,
        checked: 0,
        worst: None,
    };
    for (i, x) in inputs.iter().enumerate() {
        let n = x.numel();
        let picks: Vec<usize> = match opts.max_elements {
            Some(m) if m < n => {
                let mut v = sample(&mut rng, n, m).into_vec();
                v.sort_unstable();
                v
            }
            _ => (0..n).collect(),
        };
        for e in picks {
            let at = |d: f64| eval(&f, &perturbed(inputs, i, e, d));
            let numeric = if opts.five_point {
                (-at(2.0 * h)? + 8.0 * at(h)? - 8.0 * at(-h)? + at(-2.0 * h)?) / (12.0 * h)
            } else {
                (at(h)? - at(-h)?) / (2.0 * h)
            };
            let a = analytic[i].data()[e];
            let abs = (a - numeric).abs();
            let rel = abs / numeric.abs().max(opts.floor);
            if !rel.is_finite() {
                return Err(Error::NonFiniteGradient(format!("input {i} element {e}")));
            }
            report.checked += 1;
            report.max_abs_error = report.max_abs_error.max(abs);
            if rel > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = rel.max(report.max_rel_error);
                report.worst = Some((i, e));
            }
        }
    }
    Ok(report)
}
