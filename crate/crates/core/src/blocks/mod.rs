//! Network assembly: configuration, parameter layout, and the forward pass.
//!
//! Topology, in execution order:
//!
//! ```text
//! rgb ─ stem (CoordConv 3x3 + ReLU) ─┬─ dense branch ───────────────────────────┐
//!                                    └─ RDAB ─ pool ─ RDAB ─ pool ─ RDAB         │
//!                                        │          │             │              │
//!                                        │          └─ skip ─ RDAB ─ up          │
//!                                        └─ skip ─ RDAB ─ up ─────┘              │
//!                                               │                                │
//!                                               └──── concat ────────────────────┴─ 1x1 ─ 3x3 ─ bands
//! ```
//!
//! Both branches read the same stem output. Each decoder stage upsamples with
//! a stride-2 transposed convolution, concatenates the encoder output of the
//! same scale and fuses the pair with a 1x1 convolution before its RDAB.

mod layers;
mod serialize;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{dim_err, Error, Result};
use crate::tensor::{Real, Shape, Tape, Tensor, Var};

pub use layers::{
    channel_attention, conv_relu, conv_same, coord_channels, coordconv_forward,
    dense_branch_forward, rdab_forward, spatial_attention, AttentionMaps, AttentionParams,
    ConvParams, RdabOutput, RdabParams, SPATIAL_KERNEL,
};
pub use serialize::{decode_model, read_model, write_model, MODEL_MAGIC};

/// Parameter count of the reference network this toolkit reproduces.
pub const REFERENCE_PARAM_COUNT: usize = 233_059;

/// Architecture hyperparameters.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelConfig {
    pub stem_width: usize,
    /// Dense conv layers per RDAB.
    pub rdab_convs: usize,
    pub rdab_growth: usize,
    /// Resolution levels of the U-shaped branch; `scales - 1` pooling stages.
    pub scales: usize,
    pub dense_branch_layers: usize,
    pub dense_branch_growth: usize,
    pub attention_reduction: usize,
    pub in_channels: usize,
    pub out_bands: usize,
    pub use_coordconv: bool,
    pub use_cbam: bool,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            stem_width: 32,
            rdab_convs: 4,
            rdab_growth: 16,
            scales: 3,
            dense_branch_layers: 4,
            dense_branch_growth: 16,
            attention_reduction: 8,
            in_channels: 3,
            out_bands: 31,
            use_coordconv: true,
            use_cbam: true,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.stem_width == 0 || self.in_channels == 0 {
            return fail("stem_width and in_channels must be positive".into());
        }
        if self.out_bands == 0 {
            return fail("out_bands must be at least 1".into());
        }
        if self.scales == 0 {
            return fail("scales must be at least 1".into());
        }
        if self.rdab_convs == 0 || self.rdab_growth == 0 {
            return fail("rdab_convs and rdab_growth must be positive".into());
        }
        if self.dense_branch_growth == 0 {
            return fail("dense_branch_growth must be positive".into());
        }
        if self.use_cbam
            && (self.attention_reduction == 0 || self.stem_width < self.attention_reduction)
        {
            return fail(format!(
                "attention bottleneck stem_width / reduction = {} / {} must be at least 1",
                self.stem_width, self.attention_reduction
            ));
        }
        Ok(())
    }

    /// Height and width must be multiples of this.
    pub fn spatial_multiple(&self) -> usize {
        1 << (self.scales - 1)
    }

    pub fn attention_hidden(&self) -> usize {
        self.stem_width / self.attention_reduction.max(1)
    }

    pub fn dense_branch_channels(&self) -> usize {
        self.stem_width + self.dense_branch_layers * self.dense_branch_growth
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Init {
    /// Uniform on `[-bound, bound]`.
    Uniform(f64),
    Zero,
}

#[derive(Debug, Clone)]
struct ParamSpec {
    name: String,
    shape: Shape,
    init: Init,
}

const RELU_GAIN: f64 = std::f64::consts::SQRT_2;
const LINEAR_GAIN: f64 = 1.0;
/// The output head starts small so the initial prediction sits near zero.
const HEAD_GAIN: f64 = 0.1;

#[derive(Default)]
struct Planner {
    specs: Vec<ParamSpec>,
}

impl Planner {
    fn push(&mut self, name: String, shape: Shape, init: Init) -> usize {
        self.specs.push(ParamSpec { name, shape, init });
        self.specs.len() - 1
    }

    fn conv(
        &mut self,
        name: &str,
        c_in: usize,
        c_out: usize,
        k: usize,
        gain: f64,
    ) -> ConvParams<usize> {
        let fan_in = (c_in * k * k) as f64;
        ConvParams {
            weight: self.push(
                format!("{name}.weight"),
                Shape::new(c_out, c_in, k, k),
                Init::Uniform(gain * (3.0 / fan_in).sqrt()),
            ),
            bias: self.push(
                format!("{name}.bias"),
                Shape::new(1, c_out, 1, 1),
                Init::Zero,
            ),
        }
    }

    /// Stride-`k` transposed conv; each output pixel sees `c_in` inputs.
    fn conv_transpose(
        &mut self,
        name: &str,
        c_in: usize,
        c_out: usize,
        k: usize,
    ) -> ConvParams<usize> {
        ConvParams {
            weight: self.push(
                format!("{name}.weight"),
                Shape::new(c_in, c_out, k, k),
                Init::Uniform(LINEAR_GAIN * (3.0 / c_in as f64).sqrt()),
            ),
            bias: self.push(
                format!("{name}.bias"),
                Shape::new(1, c_out, 1, 1),
                Init::Zero,
            ),
        }
    }

    fn rdab(&mut self, name: &str, cfg: &ModelConfig) -> RdabParams<usize> {
        let c = cfg.stem_width;
        let g = cfg.rdab_growth;
        let dense = (0..cfg.rdab_convs)
            .map(|q| self.conv(&format!("{name}.conv{q}"), c + q * g, g, 3, RELU_GAIN))
            .collect();
        let fusion = self.conv(
            &format!("{name}.lff"),
            c + cfg.rdab_convs * g,
            c,
            1,
            LINEAR_GAIN,
        );
        let attention = cfg.use_cbam.then(|| {
            let hidden = cfg.attention_hidden();
            AttentionParams {
                squeeze: self.conv(&format!("{name}.ca.squeeze"), c, hidden, 1, RELU_GAIN),
                excite: self.conv(&format!("{name}.ca.excite"), hidden, c, 1, LINEAR_GAIN),
                spatial: self.conv(&format!("{name}.sa"), 2, 1, SPATIAL_KERNEL, LINEAR_GAIN),
            }
        });
        RdabParams {
            dense,
            fusion,
            attention,
        }
    }
}

/// Parameter indices of every layer, in forward order.
#[derive(Debug, Clone)]
struct Layout {
    stem: ConvParams<usize>,
    dense: Vec<ConvParams<usize>>,
    encoders: Vec<RdabParams<usize>>,
    /// Indexed by target scale `0..scales - 1`.
    upsample: Vec<ConvParams<usize>>,
    skip: Vec<ConvParams<usize>>,
    decoders: Vec<RdabParams<usize>>,
    mix: ConvParams<usize>,
    head: ConvParams<usize>,
}

fn plan(cfg: &ModelConfig) -> (Layout, Vec<ParamSpec>) {
    let w = cfg.stem_width;
    let mut p = Planner::default();
    let stem_in = cfg.in_channels + if cfg.use_coordconv { 2 } else { 0 };
    let stem = p.conv("stem", stem_in, w, 3, RELU_GAIN);
    let dense = (0..cfg.dense_branch_layers)
        .map(|i| {
            p.conv(
                &format!("dense.{i}"),
                w + i * cfg.dense_branch_growth,
                cfg.dense_branch_growth,
                3,
                RELU_GAIN,
            )
        })
        .collect();
    let encoders = (0..cfg.scales)
        .map(|s| p.rdab(&format!("enc{s}"), cfg))
        .collect();
    let inner = cfg.scales - 1;
    let mut upsample = vec![None; inner];
    let mut skip = vec![None; inner];
    let mut decoders = vec![None; inner];
    for s in (0..inner).rev() {
        upsample[s] = Some(p.conv_transpose(&format!("up{s}"), w, w, 2));
        skip[s] = Some(p.conv(&format!("skip{s}"), 2 * w, w, 1, LINEAR_GAIN));
        decoders[s] = Some(p.rdab(&format!("dec{s}"), cfg));
    }
    let mix = p.conv(
        "fusion.mix",
        cfg.dense_branch_channels() + w,
        w,
        1,
        LINEAR_GAIN,
    );
    let head = p.conv("fusion.head", w, cfg.out_bands, 3, HEAD_GAIN);
    let layout = Layout {
        stem,
        dense,
        encoders,
        upsample: upsample.into_iter().map(Option::unwrap).collect(),
        skip: skip.into_iter().map(Option::unwrap).collect(),
        decoders: decoders.into_iter().map(Option::unwrap).collect(),
        mix,
        head,
    };
    (layout, p.specs)
}

/// Closed-form parameter count: `c_out * (c_in * k * k + 1)` per conv.
pub fn analytic_param_count(cfg: &ModelConfig) -> usize {
    let conv = |c_in: usize, c_out: usize, k: usize| c_out * (c_in * k * k + 1);
    let w = cfg.stem_width;
    let stem = conv(
        cfg.in_channels + if cfg.use_coordconv { 2 } else { 0 },
        w,
        3,
    );
    let dense: usize = (0..cfg.dense_branch_layers)
        .map(|i| conv(w + i * cfg.dense_branch_growth, cfg.dense_branch_growth, 3))
        .sum();
    let g = cfg.rdab_growth;
    let mut rdab: usize = (0..cfg.rdab_convs)
        .map(|q| conv(w + q * g, g, 3))
        .sum::<usize>()
        + conv(w + cfg.rdab_convs * g, w, 1);
    if cfg.use_cbam {
        let hidden = cfg.attention_hidden();
        rdab += conv(w, hidden, 1) + conv(hidden, w, 1) + conv(2, 1, SPATIAL_KERNEL);
    }
    let ushape =
        (2 * cfg.scales - 1) * rdab + (cfg.scales - 1) * (conv(w, w, 2) + conv(2 * w, w, 1));
    let fusion = conv(cfg.dense_branch_channels() + w, w, 1) + conv(w, cfg.out_bands, 3);
    stem + dense + ushape + fusion
}

/// A named, trainable tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Param<T: Real> {
    pub name: String,
    pub tensor: Tensor<T>,
}

/// Handles produced by one forward pass.
#[derive(Debug, Clone)]
pub struct Forward {
    pub output: Var,
    /// Lowest-resolution feature map of the U-shaped branch.
    pub bottleneck: Var,
    /// Tape handle of every parameter, in [`Model::params`] order.
    pub params: Vec<Var>,
}

/// Reconstruction network: ordered named parameters plus the layout that
/// wires them together.
#[derive(Debug, Clone)]
pub struct Model<T: Real> {
    config: ModelConfig,
    params: Vec<Param<T>>,
    layout: Layout,
}

/// Builds the network described by `config` with seeded initial weights.
pub fn build_network<T: Real>(config: &ModelConfig) -> Result<Model<T>> {
    Model::build(config)
}

pub fn count_params<T: Real>(model: &Model<T>) -> usize {
    model.params.iter().map(|p| p.tensor.numel()).sum()
}

impl<T: Real> Model<T> {
    pub fn build(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let (layout, specs) = plan(config);
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let params = specs
            .into_iter()
            .map(|spec| {
                let numel = spec.shape.numel();
                let data: Vec<T> = match spec.init {
                    Init::Zero => vec![T::zero(); numel],
                    Init::Uniform(bound) => (0..numel)
                        .map(|_| T::cast_from(rng.random_range(-bound..=bound)))
                        .collect(),
                };
                Ok(Param {
                    name: spec.name,
                    tensor: Tensor::from_vec(spec.shape, data)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            config: config.clone(),
            params,
            layout,
        })
    }

    /// Assembles a model from explicit tensors given as `(name, values)` in
    /// declared order; names and sizes must match the layout of `config`.
    pub fn from_parts(config: &ModelConfig, values: Vec<(String, Vec<T>)>) -> Result<Self> {
        config.validate()?;
        let (layout, specs) = plan(config);
        if values.len() != specs.len() {
            return Err(Error::Config(format!(
                "expected {} parameters, got {}",
                specs.len(),
                values.len()
            )));
        }
        let params = specs
            .into_iter()
            .zip(values)
            .map(|(spec, (name, data))| {
                if spec.name != name {
                    return Err(Error::Config(format!(
                        "expected parameter {}, found {name}",
                        spec.name
                    )));
                }
                let tensor = Tensor::from_vec(spec.shape, data).map_err(|_| {
                    Error::Config(format!(
                        "parameter {name} has the wrong size for {}",
                        spec.shape
                    ))
                })?;
                Ok(Param { name, tensor })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            config: config.clone(),
            params,
            layout,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &[Param<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param<T>] {
        &mut self.params
    }

    pub fn param(&self, name: &str) -> Option<&Param<T>> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Param<T>> {
        self.params.iter_mut().find(|p| p.name == name)
    }

    pub fn count_params(&self) -> usize {
        count_params(self)
    }

    /// Parameter totals grouped by layer (name without `.weight` / `.bias`).
    pub fn layer_param_counts(&self) -> Vec<(String, usize)> {
        let mut out: Vec<(String, usize)> = Vec::new();
        for p in &self.params {
            let layer = p.name.rsplit_once('.').map_or(p.name.as_str(), |(l, _)| l);
            match out.last_mut() {
                Some((name, n)) if name == layer => *n += p.tensor.numel(),
                _ => out.push((layer.to_string(), p.tensor.numel())),
            }
        }
        out
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.tensor.zero_grad();
        }
    }

    /// Converts to another precision; gradients are dropped.
    pub fn cast<U: Real>(&self) -> Model<U> {
        Model {
            config: self.config.clone(),
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    tensor: p.tensor.cast(),
                })
                .collect(),
            layout: self.layout.clone(),
        }
    }

    /// Records every parameter as a leaf; `trainable` controls whether
    /// gradients flow into them.
    pub fn bind(&self, tape: &mut Tape<T>, trainable: bool) -> Vec<Var> {
        self.params
            .iter()
            .map(|p| {
                let mut t = p.tensor.clone();
                t.zero_grad();
                t.requires_grad = trainable;
                tape.leaf(t)
            })
            .collect()
    }

    /// Adds the gradients the tape holds for `bound` into the parameter slots.
    pub fn accumulate_grads(&mut self, tape: &Tape<T>, bound: &[Var]) -> Result<()> {
        if bound.len() != self.params.len() {
            return Err(Error::Contract(format!(
                "{} bound handles for {} parameters",
                bound.len(),
                self.params.len()
            )));
        }
        for (p, &v) in self.params.iter_mut().zip(bound) {
            if let Some(g) = tape.grad(v) {
                p.tensor.accumulate_grad(g);
            }
        }
        Ok(())
    }

    pub fn check_input(&self, shape: Shape) -> Result<()> {
        if shape.c != self.config.in_channels {
            return dim_err(format!(
                "model expects {} input channels, got {shape}",
                self.config.in_channels
            ));
        }
        let m = self.config.spatial_multiple();
        if shape.h == 0 || shape.w == 0 || !shape.h.is_multiple_of(m) || !shape.w.is_multiple_of(m)
        {
            return dim_err(format!(
                "input height and width must be positive multiples of {m}, got {}x{}",
                shape.h, shape.w
            ));
        }
        Ok(())
    }

    /// Binds trainable parameters and runs the network on `rgb`.
    pub fn forward(&self, tape: &mut Tape<T>, rgb: Var) -> Result<Forward> {
        self.check_input(tape.shape(rgb))?;
        let params = self.bind(tape, true);
        self.forward_bound(tape, &params, rgb)
    }

    /// Runs the network with parameters already bound on `tape`.
    pub fn forward_bound(&self, tape: &mut Tape<T>, params: &[Var], rgb: Var) -> Result<Forward> {
        self.check_input(tape.shape(rgb))?;
        let v = |i: usize| params[i];
        let l = &self.layout;

        let stem_p = l.stem.map(&v);
        let stem = if self.config.use_coordconv {
            coordconv_forward(tape, rgb, &stem_p)?
        } else {
            conv_relu(tape, rgb, &stem_p)?
        };

        let dense_p: Vec<_> = l.dense.iter().map(|c| c.map(&v)).collect();
        let dense = dense_branch_forward(tape, stem, &dense_p)?;

        let mut skips = Vec::with_capacity(self.config.scales - 1);
        let mut cur = stem;
        for (s, enc) in l.encoders.iter().enumerate() {
            if s > 0 {
                cur = tape.maxpool2d(cur, 2)?;
            }
            cur = rdab_forward(tape, cur, &enc.map(&v))?.output;
            if s + 1 < self.config.scales {
                skips.push(cur);
            }
        }
        let bottleneck = cur;
        for s in (0..self.config.scales - 1).rev() {
            let up = l.upsample[s].map(&v);
            let upsampled = tape.conv_transpose2d(cur, up.weight, Some(up.bias), 2)?;
            let joined = tape.concat_channels(&[skips[s], upsampled])?;
            let fused = conv_same(tape, joined, &l.skip[s].map(&v))?;
            cur = rdab_forward(tape, fused, &l.decoders[s].map(&v))?.output;
        }

        let merged = tape.concat_channels(&[dense, cur])?;
        let mixed = conv_same(tape, merged, &l.mix.map(&v))?;
        let output = conv_same(tape, mixed, &l.head.map(&v))?;
        Ok(Forward {
            output,
            bottleneck,
            params: params.to_vec(),
        })
    }

    /// Gradient-free forward pass on a batch; the output is not clamped.
    pub fn predict(&self, rgb: &Tensor<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let params = self.bind(&mut tape, false);
        let x = tape.constant(rgb.clone());
        let fwd = self.forward_bound(&mut tape, &params, x)?;
        Ok(tape.value(fwd.output).clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_count_matches_formula_and_reference_scale() {
        let cfg = ModelConfig::default();
        let model = build_network::<f32>(&cfg).unwrap();
        assert_eq!(model.count_params(), analytic_param_count(&cfg));
        let ratio = model.count_params() as f64 / REFERENCE_PARAM_COUNT as f64;
        assert!((0.8..=1.2).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn names_unique_and_stable() {
        let cfg = ModelConfig::default();
        let a = build_network::<f32>(&cfg).unwrap();
        let b = build_network::<f32>(&cfg).unwrap();
        let names: Vec<_> = a.params().iter().map(|p| p.name.clone()).collect();
        let mut dedup = names.clone();
        dedup.sort();
        dedup.dedup();
        assert_eq!(dedup.len(), names.len());
        assert_eq!(
            names,
            b.params()
                .iter()
                .map(|p| p.name.clone())
                .collect::<Vec<_>>()
        );
        assert_eq!(names[0], "stem.weight");
        assert_eq!(names.last().unwrap(), "fusion.head.bias");
    }

    #[test]
    fn single_conv_formula() {
        let mut p = Planner::default();
        p.conv("c", 5, 32, 3, 1.0);
        let n: usize = p.specs.iter().map(|s| s.shape.numel()).sum();
        assert_eq!(n, 32 * (5 * 9 + 1));
        assert_eq!(n, 1472);
    }

    #[test]
    fn config_validation() {
        let bad = ModelConfig {
            stem_width: 4,
            attention_reduction: 8,
            ..ModelConfig::default()
        };
        assert!(matches!(build_network::<f32>(&bad), Err(Error::Config(_))));
        let no_cbam = ModelConfig {
            use_cbam: false,
            ..bad
        };
        assert!(build_network::<f32>(&no_cbam).is_ok());
        for cfg in [
            ModelConfig {
                out_bands: 0,
                ..ModelConfig::default()
            },
            ModelConfig {
                scales: 0,
                ..ModelConfig::default()
            },
        ] {
            assert!(cfg.validate().is_err());
        }
    }

    #[test]
    fn layer_counts_sum_to_total() {
        let model = build_network::<f32>(&ModelConfig::default()).unwrap();
        let layers = model.layer_param_counts();
        assert_eq!(layers[0], ("stem".to_string(), 1472));
        assert_eq!(
            layers.iter().map(|(_, n)| n).sum::<usize>(),
            model.count_params()
        );
    }
}
