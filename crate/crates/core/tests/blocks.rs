mod common;

use common::{max_rel_diff, random_tensor, Array4};
use hsrecon::blocks::{
    build_network, channel_attention, conv_relu, coordconv_forward, rdab_forward,
    spatial_attention, AttentionParams, ConvParams, Model, ModelConfig, RdabParams,
};
use hsrecon::data::{
    generate_dataset, load_samples, project_rgb, read_cube, CameraResponse, Manifest, SynthSpec,
};
use hsrecon::metrics::{mrae, rmse};
use hsrecon::tensor::{Tape, Tensor, Var};
use hsrecon::train::{evaluate, TrainConfig, Trainer};

struct Conv {
    w: Tensor<f64>,
    b: Tensor<f64>,
}

impl Conv {
    fn random(rng: &mut rand_chacha::ChaCha8Rng, c_in: usize, c_out: usize, k: usize) -> Self {
        Self {
            w: random_tensor(rng, [c_out, c_in, k, k], -0.5, 0.5),
            b: random_tensor(rng, [1, c_out, 1, 1], -0.2, 0.2),
        }
    }

    fn bind(&self, tape: &mut Tape<f64>) -> ConvParams<Var> {
        ConvParams {
            weight: tape.constant(self.w.clone()),
            bias: tape.constant(self.b.clone()),
        }
    }

    fn apply(&self, x: &Array4) -> Array4 {
        let pad = (self.w.shape().h - 1) / 2;
        common::conv2d(
            x,
            &Array4::from_tensor(&self.w),
            Some(self.b.data()),
            1,
            pad,
        )
    }
}

fn concat(parts: &[&Array4]) -> Array4 {
    let [n, _, h, w] = parts[0].dims;
    let c: usize = parts.iter().map(|p| p.dims[1]).sum();
    let mut out = Array4::zeros([n, c, h, w]);
    for b in 0..n {
        let mut at = 0;
        for p in parts {
            for ch in 0..p.dims[1] {
                for y in 0..h {
                    for x in 0..w {
                        out.set(b, at + ch, y, x, p.get(b, ch, y, x));
                    }
                }
            }
            at += p.dims[1];
        }
    }
    out
}

fn relu(mut a: Array4) -> Array4 {
    a.data.iter_mut().for_each(|v| *v = v.max(0.0));
    a
}

/// Multiplies `a` by `m`, broadcasting over any unit dimension of `m`.
fn scale(a: &Array4, m: &Array4) -> Array4 {
    let mut out = a.clone();
    let [n, c, h, w] = a.dims;
    let pick = |i: usize, d: usize| if m.dims[d] == 1 { 0 } else { i };
    for b in 0..n {
        for ch in 0..c {
            for y in 0..h {
                for x in 0..w {
                    let v =
                        a.get(b, ch, y, x) * m.get(pick(b, 0), pick(ch, 1), pick(y, 2), pick(x, 3));
                    out.set(b, ch, y, x, v);
                }
            }
        }
    }
    out
}

fn add(a: &Array4, b: &Array4) -> Array4 {
    Array4 {
        dims: a.dims,
        data: a.data.iter().zip(&b.data).map(|(p, q)| p + q).collect(),
    }
}

#[test]
fn rdab_matches_scalar_loop_composition() {
    let mut rng = common::rng(21);
    let (width, growth, hidden) = (4, 2, 2);
    let dense = [
        Conv::random(&mut rng, width, growth, 3),
        Conv::random(&mut rng, width + growth, growth, 3),
    ];
    let fusion = Conv::random(&mut rng, width + 2 * growth, width, 1);
    let squeeze = Conv::random(&mut rng, width, hidden, 1);
    let excite = Conv::random(&mut rng, hidden, width, 1);
    let spatial = Conv::random(&mut rng, 2, 1, 7);
    let x = random_tensor(&mut rng, [2, width, 5, 6], -1.0, 1.0);

    let mut tape = Tape::new();
    let p = RdabParams {
        dense: dense.iter().map(|c| c.bind(&mut tape)).collect(),
        fusion: fusion.bind(&mut tape),
        attention: Some(AttentionParams {
            squeeze: squeeze.bind(&mut tape),
            excite: excite.bind(&mut tape),
            spatial: spatial.bind(&mut tape),
        }),
    };
    let xv = tape.constant(x.clone());
    let got = rdab_forward(&mut tape, xv, &p).unwrap().output;

    let xa = Array4::from_tensor(&x);
    let d1 = relu(dense[0].apply(&xa));
    let d2 = relu(dense[1].apply(&concat(&[&xa, &d1])));
    let fused = fusion.apply(&concat(&[&xa, &d1, &d2]));
    let ca_map = common::channel_attention(
        &fused,
        squeeze.w.data(),
        squeeze.b.data(),
        excite.w.data(),
        excite.b.data(),
    );
    let ca = scale(&fused, &ca_map);
    let sa_map =
        common::spatial_attention(&ca, &Array4::from_tensor(&spatial.w), spatial.b.data()[0]);
    let sa = scale(&ca, &sa_map);
    let want = add(&add(&add(&xa, &fused), &ca), &sa);
    assert!(max_rel_diff(tape.value(got).data(), &want.data, 1e-9) < 1e-10);
}

#[test]
fn single_channel_block_by_hand() {
    // one channel, one dense layer, 2x2 input, no attention
    let mut tape = Tape::<f64>::new();
    let x = Tensor::from_vec([1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
    let centre_only = Tensor::from_vec(
        [1, 1, 3, 3],
        vec![0.0, 0.0, 0.0, 0.0, 2.0, 0.0, 0.0, 0.0, 0.0],
    )
    .unwrap();
    let dense = ConvParams {
        weight: tape.constant(centre_only),
        bias: tape.constant(Tensor::full([1, 1, 1, 1], -5.0)),
    };
    let fusion = ConvParams {
        weight: tape.constant(Tensor::from_vec([1, 2, 1, 1], vec![0.5, 1.0]).unwrap()),
        bias: tape.constant(Tensor::full([1, 1, 1, 1], 0.25)),
    };
    let xv = tape.constant(x);
    let p = RdabParams {
        dense: vec![dense],
        fusion,
        attention: None,
    };
    let out = rdab_forward(&mut tape, xv, &p).unwrap().output;
    // dense = relu(2x - 5) = [0, 0, 1, 3]; fused = 0.5x + dense + 0.25; out = x + fused
    assert_eq!(tape.value(out).data(), &[1.75, 3.25, 5.75, 9.25]);
}

#[test]
fn channel_attention_on_eight_channels() {
    let mut rng = common::rng(22);
    let f = random_tensor(&mut rng, [1, 8, 4, 4], -1.0, 1.0);
    let squeeze = Conv::random(&mut rng, 8, 2, 1);
    let excite = Conv::random(&mut rng, 2, 8, 1);
    let mut tape = Tape::new();
    let fv = tape.constant(f.clone());
    let (sq, ex) = (squeeze.bind(&mut tape), excite.bind(&mut tape));
    let map = channel_attention(&mut tape, fv, &sq, &ex).unwrap();
    let want = common::channel_attention(
        &Array4::from_tensor(&f),
        squeeze.w.data(),
        squeeze.b.data(),
        excite.w.data(),
        excite.b.data(),
    );
    assert_eq!(tape.shape(map).dims(), [1, 8, 1, 1]);
    assert!(max_rel_diff(tape.value(map).data(), &want.data, 1e-9) < 1e-12);
    assert!(tape.value(map).data().iter().all(|&v| v > 0.0 && v < 1.0));
}

#[test]
fn spatial_attention_on_four_channels() {
    let mut rng = common::rng(23);
    let f = random_tensor(&mut rng, [1, 4, 5, 5], -1.0, 1.0);
    let conv = Conv::random(&mut rng, 2, 1, 7);
    let mut tape = Tape::new();
    let fv = tape.constant(f.clone());
    let p = conv.bind(&mut tape);
    let map = spatial_attention(&mut tape, fv, &p).unwrap();
    let want = common::spatial_attention(
        &Array4::from_tensor(&f),
        &Array4::from_tensor(&conv.w),
        conv.b.data()[0],
    );
    assert_eq!(tape.shape(map).dims(), [1, 1, 5, 5]);
    assert!(max_rel_diff(tape.value(map).data(), &want.data, 1e-9) < 1e-12);
    assert!(tape.value(map).data().iter().all(|&v| v > 0.0 && v < 1.0));
}

#[test]
fn coordinates_break_translation_invariance() {
    let mut rng = common::rng(24);
    let x = Tensor::<f64>::full([1, 3, 8, 8], 0.5);
    let with_coords = Conv::random(&mut rng, 5, 4, 3);
    let plain = Conv::random(&mut rng, 3, 4, 3);
    let mut tape = Tape::new();
    let xv = tape.constant(x);
    let (pc, pp) = (with_coords.bind(&mut tape), plain.bind(&mut tape));
    let a = coordconv_forward(&mut tape, xv, &pc).unwrap();
    let b = conv_relu(&mut tape, xv, &pp).unwrap();
    let interior = |t: &Tensor<f64>, ch: usize| -> Vec<f64> {
        (1..7)
            .flat_map(|y| (1..7).map(move |x| (y, x)))
            .map(|(y, x)| t.at(0, ch, y, x))
            .collect()
    };
    for ch in 0..4 {
        let pa = interior(tape.value(a), ch);
        let pb = interior(tape.value(b), ch);
        assert!(
            pb.iter().all(|v| *v == pb[0]),
            "plain conv varies on a constant input"
        );
        if pa.iter().any(|v| *v > 0.0) {
            assert!(
                pa.iter().any(|v| *v != pa[0]),
                "coordinate conv ignored position in channel {ch}"
            );
        }
    }
}

#[test]
fn building_is_deterministic_per_seed() {
    let cfg = ModelConfig {
        seed: 5,
        ..ModelConfig::default()
    };
    let a: Model<f32> = build_network(&cfg).unwrap();
    let b: Model<f32> = build_network(&cfg).unwrap();
    assert_eq!(a.params(), b.params());
    let x = random_tensor(&mut common::rng(25), [1, 3, 20, 20], 0.0, 1.0).cast::<f32>();
    assert_eq!(a.predict(&x).unwrap(), b.predict(&x).unwrap());
    let c: Model<f32> = build_network(&ModelConfig { seed: 6, ..cfg }).unwrap();
    assert_ne!(a.params(), c.params());
}

#[test]
fn ablation_switches_remove_exactly_their_layers() {
    let full = build_network::<f32>(&ModelConfig::default())
        .unwrap()
        .count_params();
    let no_coords = build_network::<f32>(&ModelConfig {
        use_coordconv: false,
        ..ModelConfig::default()
    })
    .unwrap()
    .count_params();
    let no_attention = build_network::<f32>(&ModelConfig {
        use_cbam: false,
        ..ModelConfig::default()
    })
    .unwrap()
    .count_params();
    assert_eq!(full - no_coords, 2 * 9 * 32);
    // five blocks, each losing squeeze (32 -> 4), excite (4 -> 32) and the 7x7 spatial conv
    assert_eq!(
        full - no_attention,
        5 * ((4 * 32 + 4) + (32 * 4 + 32) + (2 * 49 + 1))
    );
}

#[test]
fn branch_widths_and_bottleneck_sizes() {
    let cfg = ModelConfig::default();
    assert_eq!(cfg.dense_branch_channels(), 96);
    let model: Model<f32> = build_network(&cfg).unwrap();
    for (side, bottom) in [(64, 16), (20, 5)] {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::zeros([1, 3, side, side]));
        let fwd = model.forward(&mut tape, x).unwrap();
        assert_eq!(tape.shape(fwd.bottleneck).dims(), [1, 32, bottom, bottom]);
        assert_eq!(tape.shape(fwd.output).dims(), [1, 31, side, side]);
    }
}

#[test]
fn small_model_drives_loss_down_on_a_toy_pair() {
    let cfg = ModelConfig {
        stem_width: 8,
        rdab_convs: 2,
        rdab_growth: 4,
        dense_branch_growth: 4,
        attention_reduction: 4,
        out_bands: 4,
        seed: 2,
        ..ModelConfig::default()
    };
    let mut rng = common::rng(26);
    let rgb = random_tensor(&mut rng, [1, 3, 12, 12], 0.2, 0.8);
    // target is a fixed linear mix of the input channels
    let mut target = Vec::with_capacity(4 * 144);
    for band in 0..4 {
        for i in 0..144 {
            let d = rgb.data();
            target.push(
                0.2 + 0.15 * d[i] + 0.1 * (band as f64) * d[144 + i] * 0.5 + 0.05 * d[288 + i],
            );
        }
    }
    let target = Tensor::from_vec([1, 4, 12, 12], target).unwrap();
    let train_cfg = TrainConfig {
        lr_start: 3e-3,
        ..TrainConfig::default()
    };
    let mut trainer = Trainer::new(build_network::<f64>(&cfg).unwrap(), &train_cfg);
    let first = trainer.step(&rgb, &target, 3e-3).unwrap().loss;
    let mut last = first;
    for _ in 0..300 {
        last = trainer.step(&rgb, &target, 3e-3).unwrap().loss;
    }
    assert!(last < 1e-3, "loss {first} -> {last}");
}

#[test]
fn stored_rgb_matches_projection_within_quantization() {
    let dir = tempfile::tempdir().unwrap();
    let resp = CameraResponse::default();
    let manifest_path = generate_dataset(&SynthSpec::new(3, 20, 24, 8), &resp, dir.path()).unwrap();
    let samples = load_samples(&manifest_path).unwrap();
    let manifest = Manifest::read(&manifest_path).unwrap();
    for (s, entry) in samples.iter().zip(&manifest.entries) {
        let cube = read_cube(dir.path().join(&entry.cube)).unwrap();
        let exact = project_rgb(&cube, &resp).unwrap();
        for (stored, exact) in s.rgb.data().iter().zip(&exact.data) {
            assert!((stored - exact).abs() <= 0.5 / 255.0 + 1e-6);
        }
        assert_eq!(s.cube.data(), &cube.data[..]);
    }
}

#[test]
fn evaluation_matches_direct_recompute() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = generate_dataset(
        &SynthSpec::new(2, 20, 20, 9),
        &CameraResponse::default(),
        dir.path(),
    )
    .unwrap();
    let samples = load_samples(&manifest).unwrap();
    let model: Model<f32> = build_network(&ModelConfig::default()).unwrap();
    let report = evaluate(&model, &samples).unwrap();
    let (mut m, mut r) = (0.0, 0.0);
    for s in &samples {
        let pred = model.predict(&s.rgb).unwrap().map(|v| v.clamp(0.0, 1.0));
        let p: Vec<f64> = pred.data().iter().map(|&v| v as f64).collect();
        let g: Vec<f64> = s.cube.data().iter().map(|&v| v as f64).collect();
        m += common::mrae(&p, &g) / samples.len() as f64;
        r += common::rmse(&p, &g) / samples.len() as f64;
        assert!(
            (mrae(&pred, &s.cube).unwrap() - common::mrae(&p, &g)).abs()
                <= 1e-6 * common::mrae(&p, &g)
        );
        assert!(
            (rmse(&pred, &s.cube).unwrap() - common::rmse(&p, &g)).abs()
                <= 1e-6 * common::rmse(&p, &g)
        );
    }
    assert!((report.mrae - m).abs() <= 1e-6 * m);
    assert!((report.rmse - r).abs() <= 1e-6 * r);
}
