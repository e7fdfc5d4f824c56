//! Worst-case deviations measured against oracles and finite differences.
//! The test suites assert on them; the acceptance report prints them.

use rand::Rng;
use vmat_core::autograd::{finite_difference_check, FdOptions, Tape, Var};
use vmat_core::guided_filter::fast_guided_filter;
use vmat_core::losses::{
    foreground_losses, l1_loss, laplacian_pyramid_loss, matting_loss, segmentation_bce, temporal_coherence,
    MattingTargets, PYRAMID_LEVELS,
};
use vmat_core::metrics::{conn_metric, dtssd, fg_mse, grad_metric, mad, miou, mse};
use vmat_core::network::gru::ConvGru;
use vmat_core::network::{build_model, Ctx, ForwardOptions, ModelConfig, RecurrentState, Refiner};
use vmat_core::tensor::conv::conv2d;
use vmat_core::tensor::resize::{avg_pool_2x2, bilinear_resize};
use vmat_core::tensor::{Conv2dSpec, Tensor};
use vmat_core::Result;

use super::oracles::*;
use super::{direct_conv, f64s, moving_square, random, rng, uniform_vec};

pub const INSTANCES: u64 = 100;

#[derive(Debug, Clone)]
pub struct Check {
    pub name: String,
    pub worst: f64,
    pub cases: usize,
}

impl Check {
    fn new(name: &str) -> Self {
        Check {
            name: name.to_string(),
            worst: 0.0,
            cases: 0,
        }
    }

    fn record(&mut self, err: f64) {
        // NaN must never look like a pass.
        self.worst = if err.is_nan() { f64::INFINITY } else { self.worst.max(err) };
        self.cases += 1;
    }
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

// ---- oracle equivalence ----------------------------------------------------

pub fn conv2d_oracle() -> Check {
    let mut c = Check::new("conv2d");
    for seed in 0..INSTANCES {
        let mut r = rng(seed);
        let groups = [1, 2][r.gen_range(0..2)];
        let k = [1, 3, 5][r.gen_range(0..3)];
        let (n, ci, co) = (r.gen_range(1..3), groups * r.gen_range(1..3), groups * r.gen_range(1..3));
        let (stride, pad, dil) = (r.gen_range(1..3), r.gen_range(0..3), r.gen_range(1..3));
        let h = dil * (k - 1) + 1 + r.gen_range(0..5);
        let w = dil * (k - 1) + 1 + r.gen_range(0..5);
        let x = uniform_vec(n * ci * h * w, -1.0, 1.0, &mut r);
        let wt = uniform_vec(co * (ci / groups) * k * k, -1.0, 1.0, &mut r);
        let bias = uniform_vec(co, -1.0, 1.0, &mut r);
        let spec = Conv2dSpec {
            stride,
            padding: pad,
            dilation: dil,
            groups,
        };
        let (want, ho, wo) = direct_conv(&x, (n, ci, h, w), &wt, (co, ci / groups, k), Some(&bias), stride, pad, dil, groups);
        let f32s = |v: &[f64], d: Vec<usize>| Tensor::<f32>::from_vec(d, v.iter().map(|&v| v as f32).collect()).unwrap();
        let got = conv2d(
            &f32s(&x, vec![n, ci, h, w]),
            &f32s(&wt, vec![co, ci / groups, k, k]),
            Some(&f32s(&bias, vec![co])),
            spec,
        )
        .unwrap();
        assert_eq!(got.dims(), &[n, co, ho, wo]);
        c.record(max_diff(&f64s(&got), &want));
    }
    c
}

pub fn avg_pool_oracle() -> Check {
    let mut c = Check::new("avg_pool_2x2");
    for seed in 0..INSTANCES {
        let mut r = rng(1000 + seed);
        let (n, ch, h, w) = (r.gen_range(1..3), r.gen_range(1..4), r.gen_range(1..10), r.gen_range(1..10));
        let x = uniform_vec(n * ch * h * w, -1.0, 1.0, &mut r);
        let (ho, wo) = (h.div_ceil(2), w.div_ceil(2));
        let mut want = Vec::new();
        for p in 0..n * ch {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut s = 0.0;
                    for dy in 0..2 {
                        for dx in 0..2 {
                            // Rows and columns past the edge repeat the last one.
                            let (y, xx) = ((2 * oy + dy).min(h - 1), (2 * ox + dx).min(w - 1));
                            s += x[p * h * w + y * w + xx];
                        }
                    }
                    want.push(s / 4.0);
                }
            }
        }
        let got = avg_pool_2x2(&Tensor::<f64>::from_vec(vec![n, ch, h, w], x).unwrap()).unwrap();
        c.record(max_diff(got.data(), &want));
    }
    c
}

pub fn bilinear_oracle() -> Check {
    let mut c = Check::new("bilinear_resize");
    for seed in 0..INSTANCES {
        let mut r = rng(2000 + seed);
        let (ch, h, w) = (r.gen_range(1..3), r.gen_range(1..9), r.gen_range(1..9));
        let (oh, ow) = (r.gen_range(1..17), r.gen_range(1..17));
        let align = r.gen_bool(0.5);
        let x = uniform_vec(ch * h * w, -1.0, 1.0, &mut r);
        let want: Vec<f64> = x.chunks(h * w).flat_map(|p| tent_resize(p, h, w, oh, ow, align)).collect();
        let got = bilinear_resize(&Tensor::<f64>::from_vec(vec![1, ch, h, w], x).unwrap(), oh, ow, align).unwrap();
        assert_eq!(got.dims(), &[1, ch, oh, ow]);
        c.record(max_diff(got.data(), &want));
    }
    c
}

pub fn guided_filter_oracle() -> Check {
    let mut c = Check::new("fast_guided_filter");
    for seed in 0..INSTANCES {
        let mut r = rng(3000 + seed);
        let ch = r.gen_range(1..4);
        let gc = if r.gen_bool(0.5) { 1 } else { ch };
        let (h, w) = (r.gen_range(2..8), r.gen_range(2..8));
        let (hh, hw) = (h * r.gen_range(1..4), w * r.gen_range(1..4));
        let radius = r.gen_range(1..3);
        let eps = [1e-2, 1e-3, 1e-4][r.gen_range(0..3)];
        let src = uniform_vec(ch * h * w, 0.0, 1.0, &mut r);
        let guide = uniform_vec(gc * h * w, 0.0, 1.0, &mut r);
        let guide_hr = uniform_vec(gc * hh * hw, 0.0, 1.0, &mut r);
        let mut want = Vec::new();
        for k in 0..ch {
            let g = if gc == 1 { 0 } else { k };
            let p = &src[k * h * w..(k + 1) * h * w];
            let i = &guide[g * h * w..(g + 1) * h * w];
            let ip: Vec<f64> = i.iter().zip(p).map(|(a, b)| a * b).collect();
            let ii: Vec<f64> = i.iter().map(|a| a * a).collect();
            let (mi, mp, mip, mii) =
                (window_mean(i, h, w, radius), window_mean(p, h, w, radius), window_mean(&ip, h, w, radius), window_mean(&ii, h, w, radius));
            let a: Vec<f64> = (0..h * w).map(|k| (mip[k] - mi[k] * mp[k]) / (mii[k] - mi[k] * mi[k] + eps)).collect();
            let b: Vec<f64> = (0..h * w).map(|k| mp[k] - a[k] * mi[k]).collect();
            let (ah, bh) = (tent_resize(&a, h, w, hh, hw, false), tent_resize(&b, h, w, hh, hw, false));
            let ghr = &guide_hr[g * hh * hw..(g + 1) * hh * hw];
            want.extend((0..hh * hw).map(|k| ah[k] * ghr[k] + bh[k]));
        }
        let t = |v: Vec<f64>, c, hh, ww| Tensor::<f64>::from_vec(vec![1, c, hh, ww], v).unwrap();
        let got = fast_guided_filter(&t(src, ch, h, w), &t(guide, gc, h, w), &t(guide_hr, gc, hh, hw), radius, eps).unwrap();
        c.record(max_diff(got.data(), &want));
    }
    c
}

/// Every evaluation metric against its oracle on the same 100 random clip pairs.
pub fn metric_oracles() -> Vec<Check> {
    let mut checks: Vec<Check> = ["mad", "mse", "grad", "conn", "dtssd", "fg_mse", "miou"].iter().map(|n| Check::new(n)).collect();
    let mut r = rng(77);
    for seed in 0..INSTANCES {
        let a = matte(2 * seed + 1000);
        let b = matte(2 * seed + 1001);
        let (da, db) = (f64s(&a), f64s(&b));
        let (wm, ws) = naive_mad_mse(&da, &db);
        checks[0].record((mad(&a, &b).unwrap() - wm).abs());
        checks[1].record((mse(&a, &b).unwrap() - ws).abs());
        checks[2].record((grad_metric(&a, &b).unwrap() - oracle_grad(&da, &db, T, H, W)).abs());
        checks[3].record((conn_metric(&a, &b, 0.1).unwrap() - oracle_conn(&da, &db, T, H, W)).abs());
        checks[4].record((dtssd(&a, &b).unwrap() - oracle_dtssd(&da, &db, T, H * W)).abs());
        let fg = random::<f64>(&[T, 3, H, W], 0.0, 1.0, seed);
        let fgt = random::<f64>(&[T, 3, H, W], 0.0, 1.0, seed + 500);
        let want = oracle_fg_mse(&f64s(&fg), &f64s(&fgt), &db, T, H * W);
        checks[5].record((fg_mse(&fg, &fgt, &b).unwrap() - want).abs());
        let pm: Vec<bool> = (0..H * W).map(|_| r.gen_bool(0.4)).collect();
        let gm: Vec<bool> = (0..H * W).map(|_| r.gen_bool(0.6)).collect();
        checks[6].record((miou(&pm, &gm).unwrap() - oracle_miou(&pm, &gm)).abs());
    }
    checks
}

pub fn oracle_checks() -> Vec<Check> {
    let mut v = vec![conv2d_oracle(), avg_pool_oracle(), bilinear_oracle(), guided_filter_oracle()];
    v.extend(metric_oracles());
    v
}

// ---- finite differences ----------------------------------------------------

type Objective = dyn for<'t> Fn(&[Var<'t, f64>]) -> Result<Var<'t, f64>>;

fn fd(c: &mut Check, inputs: &[Tensor<f64>], opts: &FdOptions, f: &Objective) {
    let rep = finite_difference_check(inputs, f, opts).unwrap();
    assert!(rep.checked > 0);
    c.record(rep.max_rel_error);
}

/// Contracts `y` with fixed random weights so every output element matters.
fn probe<'t>(y: Var<'t, f64>, seed: u64) -> Result<Var<'t, f64>> {
    let w = random::<f64>(y.dims(), -1.0, 1.0, seed);
    Ok(y.mul(&y.tape().constant(w))?.sum())
}

/// Values at least `gap` away from every point in `kinks`.
fn avoiding(dims: &[usize], lo: f64, hi: f64, kinks: &[f64], gap: f64, seed: u64) -> Tensor<f64> {
    random::<f64>(dims, lo, hi, seed).map(|v| {
        let mut v = v;
        for &k in kinks {
            if (v - k).abs() < gap {
                v = k + gap.copysign(v - k + 1e-300);
            }
        }
        v
    })
}

/// Inputs whose residuals against `gt` stay at least 0.02 away from zero.
fn away_from_kinks(gt: &Tensor<f64>, seed: u64) -> Tensor<f64> {
    let mut r = rng(seed);
    let data = gt.data().iter().map(|g| g + r.gen_range(0.02..0.3) * if r.gen_bool(0.5) { 1.0 } else { -1.0 }).collect();
    Tensor::from_vec(gt.dims().to_vec(), data).unwrap()
}

fn op_opts() -> FdOptions {
    FdOptions {
        floor: 1e-6,
        ..FdOptions::default()
    }
}

/// Every differentiable tensor op, one check per op.
pub fn op_gradient_checks() -> Vec<Check> {
    let mut out = Vec::new();
    let o = op_opts();
    let mut run = |name: &str, inputs: &[Tensor<f64>], f: &Objective| {
        let mut c = Check::new(name);
        fd(&mut c, inputs, &o, f);
        out.push(c);
    };
    let x = avoiding(&[2, 3, 4], -4.0, 4.0, &[-3.0, 0.0, 3.0], 0.05, 1);
    let x1 = [x.clone()];
    run("relu", &x1, &|v| probe(v[0].relu(), 10));
    run("sigmoid", &x1, &|v| probe(v[0].sigmoid(), 11));
    run("tanh", &x1, &|v| probe(v[0].tanh(), 12));
    run("hardswish", &x1, &|v| probe(v[0].hardswish(), 13));
    run("hardsigmoid", &x1, &|v| probe(v[0].hardsigmoid(), 14));
    run("softplus", &x1, &|v| probe(v[0].softplus(), 15));
    run("abs", &x1, &|v| probe(v[0].abs(), 16));
    run("square", &x1, &|v| probe(v[0].square(), 17));
    run("scale/add_scalar/rsub_scalar", &x1, &|v| probe(v[0].scale(-1.7).add_scalar(0.3).rsub_scalar(2.0), 18));
    let c = avoiding(&[2, 3, 4], -1.0, 2.0, &[0.0, 1.0], 0.05, 2);
    run("clamp", &[c], &|v| probe(v[0].clamp(0.0, 1.0), 19));

    let a = random::<f64>(&[2, 3, 4, 5], -1.0, 1.0, 3);
    let b = random::<f64>(&[2, 3, 4, 5], -1.0, 1.0, 4);
    let ab = [a.clone(), b.clone()];
    let a1 = [a.clone()];
    run("add", &ab, &|v| probe(v[0].add(&v[1])?, 20));
    run("sub", &ab, &|v| probe(v[0].sub(&v[1])?, 21));
    run("mul", &ab, &|v| probe(v[0].mul(&v[1])?, 22));
    run("sum", &a1, &|v| Ok(v[0].sum().square()));
    run("mean", &a1, &|v| Ok(v[0].mean().square()));
    run("reshape", &a1, &|v| probe(v[0].reshape(vec![6, 20])?, 23));
    run("concat", &ab, &|v| probe(Var::concat(&[&v[0], &v[1]], 1)?, 24));
    run("narrow", &a1, &|v| probe(v[0].narrow(1, 1, 2)?, 25));
    run("split", &a1, &|v| {
        let parts = v[0].split(1, &[1, 2])?;
        probe(parts[1].mul(&parts[1])?, 26)
    });
    run("gather_rows", &a1, &|v| probe(v[0].gather_rows(&[1, 0, 1])?, 27));
    let gate = random::<f64>(&[2, 3, 1, 1], 0.1, 1.0, 5);
    run("channel_scale", &[a, gate], &|v| probe(v[0].channel_scale(&v[1])?, 28));

    let specs = [
        ("conv2d 3x3", Conv2dSpec::same(3), 3, 1),
        ("conv2d 3x3 stride 2", Conv2dSpec::same(3).with_stride(2), 3, 1),
        ("conv2d 3x3 dilated", Conv2dSpec::default().with_dilation(2, 3), 3, 1),
        ("conv2d 3x3 depthwise", Conv2dSpec::same(3).with_groups(4), 3, 4),
        ("conv2d 1x1", Conv2dSpec::default(), 1, 1),
        ("conv2d 5x5 stride 2 grouped", Conv2dSpec::same(5).with_stride(2).with_groups(2), 5, 2),
    ];
    for (k, (name, spec, kernel, groups)) in specs.into_iter().enumerate() {
        let seed = 100 + 3 * k as u64;
        let x = random::<f64>(&[2, 4, 7, 6], -1.0, 1.0, seed);
        let w = random::<f64>(&[4, 4 / groups, kernel, kernel], -0.5, 0.5, seed + 1);
        let b = random::<f64>(&[4], -0.5, 0.5, seed + 2);
        run(name, &[x, w, b], &move |v| probe(v[0].conv2d(&v[1], Some(&v[2]), spec)?, seed));
    }

    let x = [random::<f64>(&[2, 2, 6, 8], -1.0, 1.0, 6)];
    run("avg_pool_2x2", &x, &|v| probe(v[0].avg_pool_2x2()?, 30));
    run("global_avg_pool", &x, &|v| probe(v[0].global_avg_pool()?, 31));
    for (k, (h, w, ac)) in [(12, 16, false), (3, 5, false), (11, 9, true), (4, 4, true)].into_iter().enumerate() {
        let name = format!("bilinear_resize {h}x{w}{}", if ac { " aligned" } else { "" });
        run(&name, &x, &move |v| probe(v[0].bilinear_resize(h, w, ac)?, 32 + k as u64));
    }
    run("reflect_pad", &x, &|v| probe(v[0].reflect_pad(2)?, 40));
    run("zero_insert", &x, &|v| probe(v[0].zero_insert(12, 16)?, 41));
    run("subsample2", &x, &|v| probe(v[0].subsample2()?, 42));
    run("box_filter r1", &x, &|v| probe(v[0].box_filter(1)?, 43));
    run("box_filter r2", &x, &|v| probe(v[0].box_filter(2)?, 44));

    let x = random::<f64>(&[3, 2, 4, 4], -1.0, 2.0, 7);
    let g = random::<f64>(&[2], 0.5, 1.5, 8);
    let b = random::<f64>(&[2], -0.5, 0.5, 9);
    let xgb = [x, g, b];
    run("batch_norm train", &xgb, &|v| probe(v[0].batch_norm_train(&v[1], &v[2], 1e-5)?.0, 50));
    let rm = random::<f64>(&[2], -0.2, 0.2, 10);
    let rv = random::<f64>(&[2], 0.5, 1.5, 11);
    run("batch_norm infer", &xgb, &move |v| probe(v[0].batch_norm_infer(&v[1], &v[2], &rm, &rv, 1e-5)?, 51));
    out
}

/// Each loss term and the weighted matting objective.
pub fn loss_gradient_checks() -> Vec<Check> {
    let mut out = Vec::new();
    let mut run = |name: &str, inputs: &[Tensor<f64>], opts: FdOptions, f: &Objective| {
        let mut c = Check::new(name);
        fd(&mut c, inputs, &opts, f);
        out.push(c);
    };
    let all = FdOptions::default;
    let sampled = |n| FdOptions {
        max_elements: Some(n),
        ..FdOptions::default()
    };

    let gt = random::<f64>(&[2, 1, 4, 4], 0.0, 1.0, 1);
    let g2 = gt.clone();
    run("l1", &[away_from_kinks(&gt, 2)], all(), &move |v| l1_loss(&v[0], &v[0].tape().constant(g2.clone())));
    let logits = random::<f64>(&[2, 1, 4, 4], -3.0, 3.0, 3);
    let y = gt.map(|v| if v > 0.5 { 1.0 } else { 0.0 });
    run("segmentation_bce", &[logits], all(), &move |v| segmentation_bce(&v[0], &v[0].tape().constant(y.clone())));

    // Pyramid residuals are generic reals; a sampled subset keeps the run short.
    let pgt = random::<f64>(&[1, 1, 32, 32], 0.0, 1.0, 5);
    let px = random::<f64>(&[1, 1, 32, 32], 0.0, 1.0, 6);
    run("laplacian_pyramid", &[px], sampled(200), &move |v| {
        laplacian_pyramid_loss(&v[0], &v[0].tape().constant(pgt.clone()), PYRAMID_LEVELS)
    });

    let (b, t) = (2, 3);
    let x = random::<f64>(&[b * t, 3, 3, 3], 0.0, 1.0, 7);
    let g = random::<f64>(&[b * t, 3, 3, 3], 0.0, 1.0, 8);
    run("temporal_coherence", &[x, g.clone()], all(), &move |v| temporal_coherence(&v[0], &v[1], b, t));
    let mask = random::<f64>(&[b * t, 1, 3, 3], -0.5, 1.0, 9).map(|v| v.max(0.0));
    let xf = away_from_kinks(&g, 10);
    run("foreground l1 + temporal", &[xf], all(), &move |v| {
        let (l1, tc) = foreground_losses(&v[0], &v[0].tape().constant(g.clone()), &mask, b, t)?;
        l1.add(&tc.scale(5.0))
    });

    let (b, t, h, w) = (1, 2, 32, 32);
    let agt = random::<f64>(&[b * t, 1, h, w], -0.3, 1.0, 11).map(|v| v.max(0.0));
    let fgt = random::<f64>(&[b * t, 3, h, w], 0.0, 1.0, 12);
    let a = away_from_kinks(&agt, 13);
    let f = away_from_kinks(&fgt, 14);
    run("matting objective", &[a, f], sampled(150), &move |v| {
        let targets = MattingTargets {
            alpha: &agt,
            foreground: &fgt,
            batch: b,
            frames: t,
        };
        Ok(matting_loss(&v[0], &v[1], &targets)?.0)
    });
    out
}

/// Matting and segmentation losses through the whole tiny network with the learned guided filter, every parameter.
pub fn network_gradient_check() -> Check {
    let model = build_model(&ModelConfig::tiny_test(), 3).unwrap().cast::<f64>();
    let (b, t, h, w) = (1, 2, 32, 32);
    let frames = moving_square(b, t, h, w, 4).cast::<f64>();
    let alpha_gt = random::<f64>(&[b * t, 1, h, w], -0.2, 1.0, 5).map(|v| v.max(0.0));
    let fg_gt = random::<f64>(&[b * t, 3, h, w], 0.0, 1.0, 6);
    let seg_gt = alpha_gt.map(|v| if v > 0.5 { 1.0 } else { 0.0 });
    let opts = ForwardOptions {
        downsample: 0.5,
        refiner: Refiner::Deep,
    };
    let params = model.params().values().to_vec();
    let fd_opts = FdOptions {
        max_elements: Some(4),
        // Small two-point steps keep the stencil clear of activation and clamp kinks.
        step: 1e-6,
        five_point: false,
        floor: 1e-5,
        ..FdOptions::default()
    };
    let mut c = Check::new("tiny network + guided filter");
    let rep = finite_difference_check(
        &params,
        |v| {
            let cx = Ctx::with_params(v[0].tape(), model.params(), v.to_vec(), true);
            let (out, _) = model.forward(&cx, &frames, None, &opts)?;
            let targets = MattingTargets {
                alpha: &alpha_gt,
                foreground: &fg_gt,
                batch: b,
                frames: t,
            };
            let (loss, _) = matting_loss(&out.alpha, &out.foreground, &targets)?;
            let seg = segmentation_bce(&out.segmentation, &v[0].tape().constant(seg_gt.clone()))?;
            loss.add(&seg)
        },
        &fd_opts,
    )
    .unwrap();
    assert!(rep.checked >= params.len());
    c.record(rep.max_rel_error);
    c.cases = rep.checked;
    c
}

// ---- recurrence --------------------------------------------------------------

/// Largest `|h_t − 0.5·h_{t−1}|` of a cell whose weights and biases are all zero.
pub fn gru_zero_weight_deviation() -> f64 {
    let (gru, mut store) = ConvGru::standalone(3, 0);
    for i in 0..store.len() {
        let z = store.values()[i].zeros_like();
        store.set(i, z).unwrap();
    }
    let tape = Tape::no_grad();
    let cx = Ctx::inference(&tape, &store);
    let x = tape.constant(random::<f32>(&[2, 3, 5, 5], -1.0, 1.0, 1));
    let h = tape.constant(random::<f32>(&[2, 3, 5, 5], -1.0, 1.0, 2));
    let out = gru.cell(&cx, &x, &h).unwrap();
    out.value().data().iter().zip(h.value().data()).map(|(o, hp)| (o - 0.5 * hp).abs() as f64).fold(0.0, f64::max)
}

fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

/// Largest deviation of one cell update from a per-element evaluation with direct convolutions.
pub fn gru_scalar_deviation() -> f64 {
    let c = 4;
    let (gru, mut store) = ConvGru::standalone(c, 3);
    // Non-zero biases so every term is exercised.
    for name in ["gru.zr_x.bias", "gru.o_x.bias"] {
        let i = store.names().iter().position(|n| n == name).unwrap();
        let b = random::<f32>(store.values()[i].dims(), -0.5, 0.5, i as u64);
        store.set(i, b).unwrap();
    }
    let x = random::<f32>(&[1, c, 8, 8], -1.0, 1.0, 4);
    let h = random::<f32>(&[1, c, 8, 8], -1.0, 1.0, 5);
    let tape = Tape::no_grad();
    let cx = Ctx::inference(&tape, &store);
    let out = gru.cell(&cx, &tape.constant(x.clone()), &tape.constant(h.clone())).unwrap();

    let p = |n: &str| f64s(store.get(n).unwrap());
    let conv = |input: &[f64], w: &[f64], co: usize, b: Option<&[f64]>| direct_conv(input, (1, c, 8, 8), w, (co, c, 3), b, 1, 1, 1, 1).0;
    let (xv, hv) = (f64s(&x), f64s(&h));
    let zr_x = conv(&xv, &p("gru.zr_x.weight"), 2 * c, Some(&p("gru.zr_x.bias")));
    let zr_h = conv(&hv, &p("gru.zr_h.weight"), 2 * c, None);
    let plane = 64;
    let z: Vec<f64> = (0..c * plane).map(|i| sigmoid(zr_x[i] + zr_h[i])).collect();
    let r: Vec<f64> = (0..c * plane).map(|i| sigmoid(zr_x[c * plane + i] + zr_h[c * plane + i])).collect();
    let rh: Vec<f64> = r.iter().zip(&hv).map(|(a, b)| a * b).collect();
    let o_x = conv(&xv, &p("gru.o_x.weight"), c, Some(&p("gru.o_x.bias")));
    let o_h = conv(&rh, &p("gru.o_h.weight"), c, None);
    (0..c * plane)
        .map(|i| {
            let o = (o_x[i] + o_h[i]).tanh();
            let want = z[i] * hv[i] + (1.0 - z[i]) * o;
            (out.value().data()[i] as f64 - want).abs()
        })
        .fold(0.0, f64::max)
}

/// Largest alpha or foreground gap between one batched `t`-frame pass and `t` streamed single frames.
pub fn streaming_deviation(config: &ModelConfig, seed: u64, t: usize, h: usize, w: usize) -> f64 {
    let m = build_model(config, seed).unwrap();
    let frames = moving_square(1, t, h, w, seed);
    let opts = ForwardOptions::default();
    let (batched, _) = m.infer(&frames, None, &opts).unwrap();
    let (hw, mut state, mut worst) = (h * w, RecurrentState::fresh(), 0.0f64);
    for f in 0..t {
        let one = Tensor::from_vec(vec![1, 1, 3, h, w], frames.data()[f * 3 * hw..(f + 1) * 3 * hw].to_vec()).unwrap();
        let (p, s) = m.infer(&one, Some(&state), &opts).unwrap();
        state = s;
        let pairs = [
            (p.alpha.data(), &batched.alpha.data()[f * hw..(f + 1) * hw]),
            (p.foreground.data(), &batched.foreground.data()[f * 3 * hw..(f + 1) * 3 * hw]),
        ];
        for (a, b) in pairs {
            let d = a.iter().zip(b).map(|(x, y)| (x - y).abs() as f64).fold(0.0, f64::max);
            worst = worst.max(d);
        }
    }
    worst
}
