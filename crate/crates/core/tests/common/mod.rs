#![allow(dead_code)]

pub mod oracles;
pub mod suites;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vmat_core::tensor::Tensor;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random<E: vmat_core::tensor::Element>(dims: &[usize], lo: f64, hi: f64, seed: u64) -> Tensor<E> {
    Tensor::rand_uniform(dims.to_vec(), lo, hi, &mut rng(seed)).unwrap()
}

/// Six nested loops, zero padding, grouped.
#[allow(clippy::too_many_arguments)]
pub fn direct_conv(
    x: &[f64],
    (n, c, h, w): (usize, usize, usize, usize),
    wt: &[f64],
    (co, cig, k): (usize, usize, usize),
    bias: Option<&[f64]>,
    stride: usize,
    pad: usize,
    dil: usize,
    groups: usize,
) -> (Vec<f64>, usize, usize) {
    let ho = (h + 2 * pad - dil * (k - 1) - 1) / stride + 1;
    let wo = (w + 2 * pad - dil * (k - 1) - 1) / stride + 1;
    let cog = co / groups;
    let mut out = vec![0.0; n * co * ho * wo];
    for b in 0..n {
        for o in 0..co {
            let g = o / cog;
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut acc = bias.map_or(0.0, |bb| bb[o]);
                    for ci in 0..cig {
                        let cin = g * cig + ci;
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (oy * stride + ky * dil) as isize - pad as isize;
                                let ix = (ox * stride + kx * dil) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                    continue;
                                }
                                acc += x[((b * c + cin) * h + iy as usize) * w + ix as usize]
                                    * wt[((o * cig + ci) * k + ky) * k + kx];
                            }
                        }
                    }
                    out[((b * co + o) * ho + oy) * wo + ox] = acc;
                }
            }
        }
    }
    (out, ho, wo)
}

pub fn f64s<E: vmat_core::tensor::Element>(t: &Tensor<E>) -> Vec<f64> {
    t.data().iter().map(|v| v.f64()).collect()
}

pub fn uniform_vec(n: usize, lo: f64, hi: f64, r: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n).map(|_| r.gen_range(lo..hi)).collect()
}

/// Synthetic video with a moving soft square, `B×T×3×H×W`.
pub fn moving_square(b: usize, t: usize, h: usize, w: usize, seed: u64) -> Tensor<f32> {
    let mut r = rng(seed);
    let bg: Vec<f32> = (0..3).map(|_| r.gen_range(0.0..1.0)).collect();
    let fg: Vec<f32> = (0..3).map(|_| r.gen_range(0.0..1.0)).collect();
    let speed = r.gen_range(1.0..3.0f32);
    Tensor::from_fn(vec![b, t, 3, h, w], |i| {
        let x = i % w;
        let y = (i / w) % h;
        let c = (i / (w * h)) % 3;
        let f = (i / (w * h * 3)) % t;
        let bi = i / (w * h * 3 * t);
        let cx = w as f32 * 0.3 + speed * f as f32 + bi as f32;
        let cy = h as f32 * 0.5;
        let d = ((x as f32 - cx).abs()).max((y as f32 - cy).abs());
        let a = (1.0 - (d - h as f32 * 0.2) / 2.0).clamp(0.0, 1.0);
        a * fg[c] + (1.0 - a) * bg[c] * (0.8 + 0.2 * ((x + y) as f32 * 0.3).sin())
    })
    .unwrap()
}
