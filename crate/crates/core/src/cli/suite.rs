//! The op-by-op and full-model gradient check run by `hsrecon gradcheck`.

use rand::seq::index::sample_weighted;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::blocks::{
    channel_attention, coordconv_forward, rdab_forward, spatial_attention, AttentionParams,
    ConvParams, Model, ModelConfig, RdabParams,
};
use crate::error::Result;
use crate::metrics::{loss_total, ssim_map, SsimParams};
use crate::tensor::{grad_check, Axis, GradCheckOptions, Shape, Stat, Tape, Tensor, Var};

/// Outcome of one named check.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub max_rel_err: f64,
    pub checked: usize,
    pub passed: bool,
}

pub const GRADCHECK_TOL: f64 = 1e-4;

/// Input shape of the full-model check.
pub const FULL_MODEL_INPUT: [usize; 4] = [1, 3, 8, 8];

/// Scalar parameters checked in the full model, each from a distinct tensor.
pub const FULL_MODEL_SAMPLES: usize = 5;

struct Gen {
    rng: ChaCha8Rng,
}

impl Gen {
    fn tensor(&mut self, shape: [usize; 4], scale: f64) -> Tensor<f64> {
        let n = Shape::from(shape).numel();
        let data: Vec<f64> = (0..n)
            .map(|_| self.rng.random_range(-scale..scale))
            .collect();
        Tensor::from_vec(shape, data).expect("shape and data agree")
    }

    fn param(&mut self, shape: [usize; 4], scale: f64) -> Tensor<f64> {
        self.tensor(shape, scale).with_grad()
    }

    fn unit(&mut self, shape: [usize; 4]) -> Tensor<f64> {
        let n = Shape::from(shape).numel();
        let data: Vec<f64> = (0..n).map(|_| self.rng.random_range(0.05..0.95)).collect();
        Tensor::from_vec(shape, data).expect("shape and data agree")
    }

    fn conv(&mut self, c_in: usize, c_out: usize, k: usize) -> [Tensor<f64>; 2] {
        let bound = (3.0 / (c_in * k * k) as f64).sqrt();
        [
            self.param([c_out, c_in, k, k], bound),
            self.param([1, c_out, 1, 1], 0.1),
        ]
    }
}

/// `mean(y * r)` for a fixed random `r`, so every output element carries a
/// distinct weight.
fn project(tape: &mut Tape<f64>, y: Var, weights: &Tensor<f64>) -> Result<Var> {
    let r = tape.constant(weights.clone());
    let prod = tape.mul(y, r)?;
    Ok(tape.mean(prod))
}

fn conv_pair(v: &[Var], at: usize) -> ConvParams<Var> {
    ConvParams {
        weight: v[at],
        bias: v[at + 1],
    }
}

/// Runs every check with inputs drawn from `seed`.
pub fn gradcheck_suite(seed: u64) -> Result<Vec<CheckResult>> {
    let mut g = Gen {
        rng: ChaCha8Rng::seed_from_u64(seed),
    };
    let opts = GradCheckOptions {
        seed,
        ..GradCheckOptions::default()
    };
    let mut results = Vec::new();
    let mut record = |name: &str, report: crate::tensor::GradReport| {
        results.push(CheckResult {
            name: name.to_string(),
            max_rel_err: report.max_rel_err(),
            checked: report.inputs.iter().map(|e| e.checked).sum(),
            passed: report.passed(),
        });
    };

    // conv2d, same padding and strided
    for (name, stride, pad) in [("conv2d", 1, 1), ("conv2d_strided", 2, 0)] {
        let x = g.param([2, 2, 5, 5], 1.0);
        let [w, b] = g.conv(2, 3, 3);
        let oh = (5 + 2 * pad - 3) / stride + 1;
        let r = g.tensor([2, 3, oh, oh], 1.0);
        let rep = grad_check(
            |t, v| {
                let y = t.conv2d(v[0], v[1], Some(v[2]), stride, pad)?;
                project(t, y, &r)
            },
            &[x, w, b],
            &opts,
        )?;
        record(name, rep);
    }

    let x = g.param([1, 3, 3, 3], 1.0);
    let w = g.param([3, 2, 2, 2], 0.8);
    let b = g.param([1, 2, 1, 1], 0.1);
    let r = g.tensor([1, 2, 6, 6], 1.0);
    let rep = grad_check(
        |t, v| {
            let y = t.conv_transpose2d(v[0], v[1], Some(v[2]), 2)?;
            project(t, y, &r)
        },
        &[x, w, b],
        &opts,
    )?;
    record("conv_transpose2d", rep);

    let x = g.param([1, 2, 4, 4], 1.0);
    let r = g.tensor([1, 2, 2, 2], 1.0);
    let rep = grad_check(
        |t, v| {
            let y = t.maxpool2d(v[0], 2)?;
            project(t, y, &r)
        },
        &[x],
        &opts,
    )?;
    record("maxpool2d", rep);

    let x = g.param([1, 2, 3, 3], 2.0);
    let r = g.tensor([1, 2, 3, 3], 1.0);
    let rep = grad_check(
        |t, v| {
            let a = t.relu(v[0]);
            let s = t.sigmoid(v[0]);
            let y = t.add(a, s)?;
            project(t, y, &r)
        },
        &[x],
        &opts,
    )?;
    record("activations", rep);

    let a = g.param([1, 2, 3, 3], 1.0);
    let b = g.param([1, 3, 3, 3], 1.0);
    let r = g.tensor([1, 3, 3, 3], 1.0);
    let rep = grad_check(
        |t, v| {
            let cat = t.concat_channels(&[v[0], v[1]])?;
            let y = t.slice_channels(cat, 1, 3)?;
            project(t, y, &r)
        },
        &[a, b],
        &opts,
    )?;
    record("concat_slice", rep);

    let x = g.param([1, 3, 4, 4], 1.0);
    let r_sp = g.tensor([1, 3, 1, 1], 1.0);
    let r_ch = g.tensor([1, 1, 4, 4], 1.0);
    let rep = grad_check(
        |t, v| {
            let mut terms = Vec::new();
            for stat in [Stat::Mean, Stat::Max] {
                let sp = t.reduce(v[0], Axis::Spatial, stat);
                terms.push(project(t, sp, &r_sp)?);
                let ch = t.reduce(v[0], Axis::Channel, stat);
                terms.push(project(t, ch, &r_ch)?);
            }
            let mut acc = terms[0];
            for &term in &terms[1..] {
                acc = t.add(acc, term)?;
            }
            Ok(acc)
        },
        &[x],
        &opts,
    )?;
    record("reductions", rep);

    let a = g.param([1, 2, 3, 3], 1.0);
    let b = g.param([1, 2, 3, 3], 1.0);
    let s = g.param([1, 2, 1, 1], 1.0);
    let r = g.tensor([1, 2, 3, 3], 1.0);
    let rep = grad_check(
        |t, v| {
            let sum = t.add(v[0], v[1])?;
            let diff = t.sub(sum, v[2])?;
            let y = t.mul(diff, v[2])?;
            project(t, y, &r)
        },
        &[a, b, s],
        &opts,
    )?;
    record("broadcast_arith", rep);

    let x = g.param([1, 4, 4, 4], 1.0);
    let [w1, b1] = g.conv(4, 2, 1);
    let [w2, b2] = g.conv(2, 4, 1);
    let r = g.tensor([1, 4, 1, 1], 1.0);
    let rep = grad_check(
        |t, v| {
            let y = channel_attention(t, v[0], &conv_pair(v, 1), &conv_pair(v, 3))?;
            project(t, y, &r)
        },
        &[x, w1, b1, w2, b2],
        &opts,
    )?;
    record("channel_attention", rep);

    let x = g.param([1, 3, 5, 5], 1.0);
    let [w, b] = g.conv(2, 1, 7);
    let r = g.tensor([1, 1, 5, 5], 1.0);
    let rep = grad_check(
        |t, v| {
            let y = spatial_attention(t, v[0], &conv_pair(v, 1))?;
            project(t, y, &r)
        },
        &[x, w, b],
        &opts,
    )?;
    record("spatial_attention", rep);

    let x = g.param([1, 3, 4, 4], 1.0);
    let [w, b] = g.conv(5, 4, 3);
    let r = g.tensor([1, 4, 4, 4], 1.0);
    let rep = grad_check(
        |t, v| {
            let y = coordconv_forward(t, v[0], &conv_pair(v, 1))?;
            project(t, y, &r)
        },
        &[x, w, b],
        &opts,
    )?;
    record("coordconv", rep);

    // RDAB: width 4, two dense layers of growth 2, attention hidden 2
    let mut inputs = vec![g.param([1, 4, 4, 4], 1.0)];
    for (c_in, c_out, k) in [
        (4, 2, 3),
        (6, 2, 3),
        (8, 4, 1),
        (4, 2, 1),
        (2, 4, 1),
        (2, 1, 7),
    ] {
        inputs.extend(g.conv(c_in, c_out, k));
    }
    let r = g.tensor([1, 4, 4, 4], 1.0);
    let rep = grad_check(
        |t, v| {
            let p = RdabParams {
                dense: vec![conv_pair(v, 1), conv_pair(v, 3)],
                fusion: conv_pair(v, 5),
                attention: Some(AttentionParams {
                    squeeze: conv_pair(v, 7),
                    excite: conv_pair(v, 9),
                    spatial: conv_pair(v, 11),
                }),
            };
            let y = rdab_forward(t, v[0], &p)?.output;
            project(t, y, &r)
        },
        &inputs,
        &opts,
    )?;
    record("rdab", rep);

    let x = g.unit([1, 2, 12, 12]).with_grad();
    let y = g.unit([1, 2, 12, 12]).with_grad();
    let rep = grad_check(
        |t, v| {
            let m = ssim_map(t, v[0], v[1], &SsimParams::default())?;
            Ok(t.mean(m))
        },
        &[x, y],
        &opts,
    )?;
    record("ssim", rep);

    let p = g.unit([1, 3, 6, 6]).with_grad();
    let gt = g.unit([1, 3, 6, 6]);
    let rep = grad_check(|t, v| loss_total(t, v[0], v[1]), &[p, gt], &opts)?;
    record("loss_total", rep);

    let model = Model::<f64>::build(&ModelConfig {
        seed,
        ..ModelConfig::default()
    })?;
    let [n, _, h, w] = FULL_MODEL_INPUT;
    let rgb = g.unit(FULL_MODEL_INPUT);
    let target = g.unit([n, model.config().out_bands, h, w]);
    let params: Vec<Tensor<f64>> = model.params().iter().map(|p| p.tensor.clone()).collect();
    let builder = |t: &mut Tape<f64>, v: &[Var]| -> Result<Var> {
        let fwd = model.forward_bound(t, &v[2..], v[0])?;
        loss_total(t, fwd.output, v[1])
    };

    // every input pixel
    let mut inputs = vec![rgb.clone().with_grad(), target.clone()];
    inputs.extend(params.iter().cloned());
    let input_rep = grad_check(builder, &inputs, &opts)?;

    // scalar parameters drawn uniformly over the flattened parameter vector
    let picked = sample_weighted(
        &mut g.rng,
        params.len(),
        |i| params[i].numel() as f64,
        FULL_MODEL_SAMPLES,
    )
    .map_err(|e| crate::error::Error::Argument(format!("cannot sample parameters: {e}")))?;
    let mut inputs = vec![rgb, target];
    inputs.extend(params.iter().enumerate().map(|(i, p)| {
        if picked.iter().any(|j| j == i) {
            p.clone().with_grad()
        } else {
            p.clone()
        }
    }));
    let param_rep = grad_check(
        builder,
        &inputs,
        &GradCheckOptions {
            max_elements: Some(1),
            ..opts.clone()
        },
    )?;
    let mut combined = input_rep;
    combined.inputs.extend(param_rep.inputs);
    record("full_model", combined);

    Ok(results)
}
