mod common;

use common::suites::{gru_scalar_deviation, gru_zero_weight_deviation, streaming_deviation};
use common::{moving_square, random};
use vmat_core::autograd::Tape;
use vmat_core::network::gru::ConvGru;
use vmat_core::network::{
    build_model, BackboneKind, Checkpoint, Ctx, ForwardOptions, ModelConfig, RecurrentState, Refiner,
};
use vmat_core::tensor::Tensor;
use vmat_core::Error;

#[test]
fn default_parameter_count_near_published_total() {
    let m = build_model(&ModelConfig::default(), 0).unwrap();
    let n = m.count_params();
    let rel = (n as f64 - 3.749e6).abs() / 3.749e6;
    assert!(rel < 0.05, "{n} parameters, relative deviation {rel}");
    let breakdown: usize = m.param_breakdown().iter().map(|(_, c)| c).sum();
    assert_eq!(breakdown, n);
    assert!(m.group_count(vmat_core::network::Group::Dgf) < 1000);
}

#[test]
fn tiny_parameter_count_matches_hand_sum() {
    let m = build_model(&ModelConfig::tiny_test(), 0).unwrap();
    let conv = |ci: usize, co: usize, k: usize| ci * co * k * k;
    let bn = |c: usize| 2 * c;
    let gru = |c: usize| conv(c, 2 * c, 3) + 2 * c + conv(c, 2 * c, 3) + conv(c, c, 3) + c + conv(c, c, 3);
    let backbone = conv(3, 4, 3) + bn(4) + conv(4, 6, 3) + bn(6) + conv(6, 8, 3) + bn(8) + conv(8, 16, 3) + bn(16);
    let aspp = conv(16, 8, 1) + bn(8) + conv(16, 8, 1) + 8;
    let decoder = gru(4)
        + conv(8 + 8 + 3, 8, 3) + bn(8) + gru(4)
        + conv(8 + 6 + 3, 8, 3) + bn(8) + gru(4)
        + conv(8 + 4 + 3, 8, 3) + bn(8) + gru(4)
        + conv(8 + 3, 4, 3) + bn(4)
        + conv(4, 4, 3) + bn(4)
        + conv(4, 5, 1) + 5;
    let dgf = conv(12, 16, 1) + bn(16) + conv(16, 16, 1) + bn(16) + conv(16, 4, 1) + 4;
    assert_eq!(m.count_params(), backbone + aspp + decoder + dgf);
}

#[test]
fn seeded_build_is_bit_identical() {
    let a = build_model(&ModelConfig::tiny_test(), 9).unwrap();
    let b = build_model(&ModelConfig::tiny_test(), 9).unwrap();
    let c = build_model(&ModelConfig::tiny_test(), 10).unwrap();
    assert_eq!(a.params().values(), b.params().values());
    assert_ne!(a.params().values(), c.params().values());
}

#[test]
fn odd_decoder_width_is_a_config_error() {
    let mut cfg = ModelConfig::tiny_test();
    cfg.decoder[1] = 9;
    assert!(matches!(build_model(&cfg, 0), Err(Error::Config(_))));
}

#[test]
fn encoder_scales_and_channels() {
    for (cfg, size) in [(ModelConfig::tiny_test(), 256), (ModelConfig::default(), 64)] {
        let m = build_model(&cfg, 1).unwrap();
        let tape = Tape::no_grad();
        let cx = Ctx::inference(&tape, m.params());
        let x = tape.constant(Tensor::full(vec![1, 3, size, size], 0.5f32).unwrap());
        let f = m.encode(&cx, &x).unwrap();
        for (i, fi) in f.iter().enumerate() {
            let s = size >> (i + 1);
            assert_eq!(fi.dims(), &[1, cfg.encoder[i], s, s]);
            assert!(fi.value().all_finite());
        }
    }
    let m = build_model(&ModelConfig::tiny_test(), 1).unwrap();
    let tape = Tape::no_grad();
    let cx = Ctx::inference(&tape, m.params());
    let x = tape.constant(Tensor::zeros(vec![1, 3, 40, 40]).unwrap());
    assert!(matches!(m.encode(&cx, &x), Err(Error::Shape { .. })));
}

#[test]
fn default_encoder_widths() {
    assert_eq!(ModelConfig::default().encoder, [16, 24, 40, 960]);
    assert_eq!(ModelConfig::default().backbone, BackboneKind::MobilenetV3Large);
}

#[test]
fn gru_zero_weights_halve_the_state() {
    assert_eq!(gru_zero_weight_deviation(), 0.0);
}

#[test]
fn gru_matches_scalar_evaluation() {
    let d = gru_scalar_deviation();
    assert!(d < 1e-6, "{d}");
}

#[test]
fn gru_from_zero_state_is_bounded() {
    let (gru, store) = ConvGru::standalone(2, 8);
    let tape = Tape::no_grad();
    let cx = Ctx::inference(&tape, &store);
    let x = tape.constant(random::<f32>(&[1, 2, 6, 6], -5.0, 5.0, 1));
    let h0 = tape.constant(Tensor::zeros(vec![1, 2, 6, 6]).unwrap());
    let h = gru.cell(&cx, &x, &h0).unwrap();
    assert!(h.value().data().iter().all(|v| v.abs() < 1.0));
}

#[test]
fn forward_shapes_and_ranges() {
    let m = build_model(&ModelConfig::tiny_test(), 2).unwrap();
    let frames = moving_square(1, 3, 256, 256, 0);
    let (p, state) = m.infer(&frames, None, &ForwardOptions::default()).unwrap();
    assert_eq!(p.alpha.dims(), &[3, 1, 256, 256]);
    assert_eq!(p.foreground.dims(), &[3, 3, 256, 256]);
    assert_eq!(p.segmentation.dims(), &[3, 1, 256, 256]);
    assert_eq!(p.hidden.dims(), &[3, 4, 256, 256]);
    let (lo, hi) = p.alpha.min_max();
    assert!(lo >= 0.0 && hi <= 1.0);
    let (lo, hi) = p.foreground.min_max();
    assert!(lo >= 0.0 && hi <= 1.0);
    assert!(state.max_abs() < 1.0);
}

#[test]
fn high_resolution_with_dgf() {
    let m = build_model(&ModelConfig::tiny_test(), 2).unwrap();
    let frames = moving_square(1, 2, 1024, 1024, 1);
    let (p, state) = m.infer(&frames, None, &ForwardOptions::new(0.25, true)).unwrap();
    assert_eq!(p.alpha.dims(), &[2, 1, 1024, 1024]);
    assert_eq!(p.foreground.dims(), &[2, 3, 1024, 1024]);
    assert_eq!(p.hidden.dims(), &[2, 4, 256, 256]);
    assert_eq!(state.maps.as_ref().unwrap()[0].dims(), &[1, 4, 16, 16]);
}

#[test]
fn dgf_requires_downsampling() {
    let m = build_model(&ModelConfig::tiny_test(), 2).unwrap();
    let frames = moving_square(1, 1, 64, 64, 1);
    assert!(matches!(
        m.infer(&frames, None, &ForwardOptions::new(1.0, true)),
        Err(Error::Contract(_))
    ));
    assert!(matches!(
        m.infer(&frames, None, &ForwardOptions::new(0.1, false)),
        Err(Error::Resolution(_))
    ));
}

#[test]
fn fresh_state_equals_omitted_and_state_evolves() {
    let m = build_model(&ModelConfig::tiny_test(), 4).unwrap();
    let frame = moving_square(1, 1, 64, 64, 3);
    let opts = ForwardOptions::default();
    let (a, s1) = m.infer(&frame, None, &opts).unwrap();
    let (b, _) = m.infer(&frame, Some(&RecurrentState::fresh()), &opts).unwrap();
    let zeros = RecurrentState::zeros(m.config(), 1, 64, 64).unwrap();
    let (c, _) = m.infer(&frame, Some(&zeros), &opts).unwrap();
    assert_eq!(a.alpha, b.alpha);
    assert_eq!(a.alpha, c.alpha);
    let (d, _) = m.infer(&frame, Some(&s1), &opts).unwrap();
    assert!(d.alpha.max_abs_diff(&a.alpha).unwrap() > 0.0 || d.hidden.max_abs_diff(&a.hidden).unwrap() > 0.0);
}

#[test]
fn stale_state_is_rejected() {
    let m = build_model(&ModelConfig::tiny_test(), 4).unwrap();
    let (_, s) = m.infer(&moving_square(1, 1, 64, 64, 3), None, &ForwardOptions::default()).unwrap();
    let err = m.infer(&moving_square(1, 1, 128, 64, 3), Some(&s), &ForwardOptions::default());
    assert!(matches!(err, Err(Error::StateReset(_))));
}

#[test]
fn streaming_matches_batched_tiny() {
    for seed in 0..3 {
        let d = streaming_deviation(&ModelConfig::tiny_test(), seed, 4, 64, 64);
        assert!(d <= 1e-5, "seed {seed}: {d}");
    }
}

#[test]
fn macs_analytic_equals_executed_and_scales_with_area() {
    for cfg in [ModelConfig::tiny_test(), ModelConfig::default()] {
        let m = build_model(&cfg, 0).unwrap();
        for (size, s, refiner) in [(64, 1.0, Refiner::Bilinear), (128, 0.5, Refiner::Deep)] {
            let tape = Tape::no_grad();
            let cx = Ctx::inference(&tape, m.params());
            let frames = Tensor::full(vec![1, 1, 3, size, size], 0.5f32).unwrap();
            m.forward(&cx, &frames, None, &ForwardOptions { downsample: s, refiner }).unwrap();
            assert_eq!(cx.macs(), m.count_macs(size, size, s, refiner).unwrap());
        }
        let small = m.mac_plan(64, 64, 1.0, Refiner::Bilinear).unwrap();
        let big = m.mac_plan(128, 128, 1.0, Refiner::Bilinear).unwrap();
        assert_eq!(big.spatial_total(), 4 * small.spatial_total());
        assert_eq!(big.total() - big.spatial_total(), small.total() - small.spatial_total());
    }
}

#[test]
fn tiny_macs_match_hand_sum() {
    let m = build_model(&ModelConfig::tiny_test(), 0).unwrap();
    let (h, w) = (64usize, 64usize);
    let conv = |ci: usize, co: usize, k: usize, div: usize| (ci * co * k * k * (h / div) * (w / div)) as u64;
    let gru = |c: usize, div: usize| 2 * conv(c, 2 * c, 3, div) + 2 * conv(c, c, 3, div);
    let backbone = conv(3, 4, 3, 2) + conv(4, 6, 3, 4) + conv(6, 8, 3, 8) + conv(8, 16, 3, 16);
    let aspp = conv(16, 8, 1, 16) + 16 * 8;
    let decoder = gru(4, 16)
        + conv(19, 8, 3, 8) + gru(4, 8)
        + conv(17, 8, 3, 4) + gru(4, 4)
        + conv(15, 8, 3, 2) + gru(4, 2)
        + conv(11, 4, 3, 1) + conv(4, 4, 3, 1) + conv(4, 5, 1, 1);
    assert_eq!(m.count_macs(h, w, 1.0, Refiner::Bilinear).unwrap(), backbone + aspp + decoder);
}

#[test]
fn checkpoint_round_trip_and_errors() {
    let m = build_model(&ModelConfig::tiny_test(), 5).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    m.to_checkpoint().save(&path).unwrap();
    let loaded = vmat_core::network::Model::from_checkpoint(&Checkpoint::load(&path).unwrap()).unwrap();
    let frames = moving_square(1, 2, 64, 64, 0);
    let (a, _) = m.infer(&frames, None, &ForwardOptions::default()).unwrap();
    let (b, _) = loaded.infer(&frames, None, &ForwardOptions::default()).unwrap();
    assert_eq!(a.alpha, b.alpha);
    assert_eq!(a.foreground, b.foreground);

    let mut other = build_model(&ModelConfig { aspp: 16, decoder: [16, 8, 8, 8, 4], ..ModelConfig::tiny_test() }, 0).unwrap();
    assert!(matches!(
        other.load_state(&Checkpoint::load(&path).unwrap()),
        Err(Error::ConfigMismatch(_))
    ));

    let bytes = std::fs::read(&path).unwrap();
    assert!(matches!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3]), Err(Error::Format(_))));
    let mut bad_version = bytes.clone();
    bad_version[8] = 9;
    assert!(matches!(Checkpoint::from_bytes(&bad_version), Err(Error::Format(_))));
}
