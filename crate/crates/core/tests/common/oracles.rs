//! Brute-force reference implementations.

use std::collections::HashSet;

use rand::Rng;
use vmat_core::tensor::Tensor;

use super::rng;

/// Matte clips produced by [`matte`] are `T×1×H×W`.
pub const T: usize = 4;
pub const H: usize = 16;
pub const W: usize = 16;

fn t64(dims: &[usize], data: Vec<f64>) -> Tensor<f64> {
    Tensor::from_vec(dims.to_vec(), data).unwrap()
}

/// Source coordinate of output index `o`.
pub fn source(o: usize, input: usize, output: usize, align: bool) -> f64 {
    let s = if align {
        if output == 1 {
            0.0
        } else {
            o as f64 * (input as f64 - 1.0) / (output as f64 - 1.0)
        }
    } else {
        (o as f64 + 0.5) * input as f64 / output as f64 - 0.5
    };
    s.clamp(0.0, input as f64 - 1.0)
}

/// Resampling as a sum of tent-kernel weights over every input pixel.
pub fn tent_resize(plane: &[f64], h: usize, w: usize, oh: usize, ow: usize, align: bool) -> Vec<f64> {
    let tent = |d: f64| (1.0 - d.abs()).max(0.0);
    let mut out = Vec::with_capacity(oh * ow);
    for oy in 0..oh {
        let sy = source(oy, h, oh, align);
        for ox in 0..ow {
            let sx = source(ox, w, ow, align);
            let mut acc = 0.0;
            for iy in 0..h {
                for ix in 0..w {
                    acc += tent(sy - iy as f64) * tent(sx - ix as f64) * plane[iy * w + ix];
                }
            }
            out.push(acc);
        }
    }
    out
}

/// Mean over the window of radius `r` clipped to the plane, by direct summation.
pub fn window_mean(p: &[f64], h: usize, w: usize, r: usize) -> Vec<f64> {
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let (mut s, mut k) = (0.0, 0.0);
            for yy in y.saturating_sub(r)..(y + r + 1).min(h) {
                for xx in x.saturating_sub(r)..(x + r + 1).min(w) {
                    s += p[yy * w + xx];
                    k += 1.0;
                }
            }
            out[y * w + x] = s / k;
        }
    }
    out
}

/// Random alpha with a soft blob, exact 0/1 regions and noise, so every metric sees varied structure.
pub fn matte(seed: u64) -> Tensor<f64> {
    let mut r = rng(seed);
    let mut data = Vec::with_capacity(T * H * W);
    for _ in 0..T {
        let (cy, cx) = (r.gen_range(3.0..13.0), r.gen_range(3.0..13.0));
        let rad = r.gen_range(2.0..6.0);
        for y in 0..H {
            for x in 0..W {
                let d = ((y as f64 - cy).powi(2) + (x as f64 - cx).powi(2)).sqrt();
                let base: f64 = (rad - d + 0.5).clamp(0.0, 1.0);
                let noisy = if r.gen_bool(0.3) { base + r.gen_range(-0.3..0.3) } else { base };
                data.push(noisy.clamp(0.0, 1.0));
            }
        }
    }
    t64(&[T, 1, H, W], data)
}

pub fn naive_mad_mse(a: &[f64], b: &[f64]) -> (f64, f64) {
    let (mut s1, mut s2) = (0.0, 0.0);
    for i in 0..a.len() {
        s1 += (a[i] - b[i]).abs();
        s2 += (a[i] - b[i]) * (a[i] - b[i]);
    }
    (s1 / a.len() as f64 * 1e3, s2 / a.len() as f64 * 1e3)
}

/// Full 2-D derivative kernel, applied as a direct correlation with clamped indices.
pub fn oracle_grad_magnitude(p: &[f64], h: usize, w: usize, sigma: f64) -> Vec<f64> {
    let half = 4isize;
    let g = |x: f64| (-x * x / (2.0 * sigma * sigma)).exp() / (sigma * (2.0 * std::f64::consts::PI).sqrt());
    let dg = |x: f64| -x * g(x) / (sigma * sigma);
    let size = (2 * half + 1) as usize;
    let mut hx = vec![vec![0.0; size]; size];
    let mut norm = 0.0;
    for i in 0..size {
        for j in 0..size {
            hx[i][j] = g(i as f64 - half as f64) * dg(j as f64 - half as f64);
            norm += hx[i][j] * hx[i][j];
        }
    }
    let norm = norm.sqrt();
    let mut out = vec![0.0; h * w];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let (mut gx, mut gy) = (0.0, 0.0);
            for i in 0..size as isize {
                for j in 0..size as isize {
                    let k = hx[i as usize][j as usize] / norm;
                    let sy = (y + i - half).clamp(0, h as isize - 1) as usize;
                    let sx = (x + j - half).clamp(0, w as isize - 1) as usize;
                    gx += k * p[sy * w + sx];
                    // Transposed kernel for the vertical derivative.
                    let ty = (y + j - half).clamp(0, h as isize - 1) as usize;
                    let tx = (x + i - half).clamp(0, w as isize - 1) as usize;
                    gy += k * p[ty * w + tx];
                }
            }
            out[y as usize * w + x as usize] = (gx * gx + gy * gy).sqrt();
        }
    }
    out
}

pub fn oracle_grad(a: &[f64], b: &[f64], frames: usize, h: usize, w: usize) -> f64 {
    let per = h * w;
    let mut s = 0.0;
    for f in 0..frames {
        let ma = oracle_grad_magnitude(&a[f * per..(f + 1) * per], h, w, 1.4);
        let mb = oracle_grad_magnitude(&b[f * per..(f + 1) * per], h, w, 1.4);
        for i in 0..per {
            s += (ma[i] - mb[i]).powi(2);
        }
    }
    s / (frames * per) as f64 * 1e3
}

/// Component labels by repeated min-label relaxation; each label is the smallest raster index in the component.
pub fn relax_labels(mask: &[bool], h: usize, w: usize) -> Vec<Option<usize>> {
    let mut lab: Vec<Option<usize>> = (0..h * w).map(|i| mask[i].then_some(i)).collect();
    loop {
        let mut changed = false;
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                let Some(mut l) = lab[i] else { continue };
                let mut nb = Vec::new();
                if y > 0 {
                    nb.push(i - w);
                }
                if y + 1 < h {
                    nb.push(i + w);
                }
                if x > 0 {
                    nb.push(i - 1);
                }
                if x + 1 < w {
                    nb.push(i + 1);
                }
                for j in nb {
                    if let Some(m) = lab[j] {
                        if m < l {
                            l = m;
                        }
                    }
                }
                if Some(l) != lab[i] {
                    lab[i] = Some(l);
                    changed = true;
                }
            }
        }
        if !changed {
            return lab;
        }
    }
}

pub fn oracle_conn_plane(p: &[f64], g: &[f64], h: usize, w: usize) -> f64 {
    let mut level = vec![-1.0f64; h * w];
    for k in 1..10 {
        let th = k as f64 * 0.1;
        let inter: Vec<bool> = (0..h * w).map(|i| p[i] >= th && g[i] >= th).collect();
        let lab = relax_labels(&inter, h, w);
        let mut sizes = std::collections::BTreeMap::new();
        for l in lab.iter().flatten() {
            *sizes.entry(*l).or_insert(0usize) += 1;
        }
        // BTreeMap iterates by label, i.e. by first raster index; keep the first maximum.
        let mut best: Option<(usize, usize)> = None;
        for (&l, &n) in &sizes {
            if best.is_none_or(|(_, bn)| n > bn) {
                best = Some((l, n));
            }
        }
        for i in 0..h * w {
            let inside = best.is_some_and(|(l, _)| lab[i] == Some(l));
            if level[i] == -1.0 && !inside {
                level[i] = (k - 1) as f64 * 0.1;
            }
        }
    }
    let mut s = 0.0;
    for i in 0..h * w {
        let l = if level[i] == -1.0 { 1.0 } else { level[i] };
        let dp = p[i] - l;
        let dg = g[i] - l;
        let pp = 1.0 - if dp >= 0.15 { dp } else { 0.0 };
        let pg = 1.0 - if dg >= 0.15 { dg } else { 0.0 };
        s += (pp - pg).abs();
    }
    s
}

pub fn oracle_conn(a: &[f64], b: &[f64], frames: usize, h: usize, w: usize) -> f64 {
    let per = h * w;
    let s: f64 = (0..frames)
        .map(|f| oracle_conn_plane(&a[f * per..(f + 1) * per], &b[f * per..(f + 1) * per], h, w))
        .sum();
    s / (frames * per) as f64 * 1e3
}

pub fn oracle_dtssd(a: &[f64], b: &[f64], frames: usize, per: usize) -> f64 {
    let mut total = 0.0;
    for t in 1..frames {
        let mut s = 0.0;
        for i in 0..per {
            let d = (a[t * per + i] - a[(t - 1) * per + i]) - (b[t * per + i] - b[(t - 1) * per + i]);
            s += d * d;
        }
        total += (s / per as f64).sqrt();
    }
    total / (frames - 1) as f64 * 1e2
}

pub fn oracle_fg_mse(f: &[f64], g: &[f64], a: &[f64], frames: usize, hw: usize) -> f64 {
    let (mut s, mut n) = (0.0, 0);
    for t in 0..frames {
        for c in 0..3 {
            for px in 0..hw {
                if a[t * hw + px] > 0.0 {
                    let i = (t * 3 + c) * hw + px;
                    s += (f[i] - g[i]).powi(2);
                    n += 1;
                }
            }
        }
    }
    if n == 0 {
        0.0
    } else {
        s / n as f64 * 1e3
    }
}

pub fn oracle_miou(p: &[bool], g: &[bool]) -> f64 {
    let mut total = 0.0;
    for class in [true, false] {
        let ps: HashSet<usize> = (0..p.len()).filter(|&i| p[i] == class).collect();
        let gs: HashSet<usize> = (0..g.len()).filter(|&i| g[i] == class).collect();
        let union = ps.union(&gs).count();
        total += if union == 0 { 1.0 } else { ps.intersection(&gs).count() as f64 / union as f64 };
    }
    total / 2.0
}
