//! Building blocks of the reconstruction network, expressed on a [`Tape`].
//!
//! Parameter groups are generic over their handle type `H`: the model
//! layout stores parameter indices (`usize`), a forward pass works with the
//! tape handles (`Var`) bound to them.

use crate::error::{dim_err, Result};
use crate::tensor::{Axis, Real, Stat, Tape, Tensor, Var};

/// Kernel size of the spatial attention convolution.
pub const SPATIAL_KERNEL: usize = 7;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvParams<H> {
    pub weight: H,
    pub bias: H,
}

impl<H: Copy> ConvParams<H> {
    pub fn map<U>(&self, f: &impl Fn(H) -> U) -> ConvParams<U> {
        ConvParams {
            weight: f(self.weight),
            bias: f(self.bias),
        }
    }
}

/// Shared channel MLP (`c -> c/r -> c`) plus the spatial attention conv.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttentionParams<H> {
    pub squeeze: ConvParams<H>,
    pub excite: ConvParams<H>,
    pub spatial: ConvParams<H>,
}

impl<H: Copy> AttentionParams<H> {
    pub fn map<U>(&self, f: &impl Fn(H) -> U) -> AttentionParams<U> {
        AttentionParams {
            squeeze: self.squeeze.map(f),
            excite: self.excite.map(f),
            spatial: self.spatial.map(f),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RdabParams<H> {
    /// Densely connected 3x3 layers, each adding `growth` channels.
    pub dense: Vec<ConvParams<H>>,
    /// 1x1 local feature fusion back to the block width.
    pub fusion: ConvParams<H>,
    /// `None` when attention is ablated.
    pub attention: Option<AttentionParams<H>>,
}

impl<H: Copy> RdabParams<H> {
    pub fn map<U>(&self, f: &impl Fn(H) -> U) -> RdabParams<U> {
        RdabParams {
            dense: self.dense.iter().map(|c| c.map(f)).collect(),
            fusion: self.fusion.map(f),
            attention: self.attention.as_ref().map(|a| a.map(f)),
        }
    }
}

/// Channel map `(n, c, 1, 1)` and spatial map `(n, 1, h, w)`, both in (0, 1).
#[derive(Debug, Clone, Copy)]
pub struct AttentionMaps {
    pub channel_map: Var,
    pub spatial_map: Var,
}

#[derive(Debug, Clone, Copy)]
pub struct RdabOutput {
    pub output: Var,
    /// Local feature fusion result, before attention.
    pub fused: Var,
    pub attention: Option<AttentionMaps>,
}

/// "Same" convolution (odd kernel, stride 1) taking the kernel size from the weight.
pub fn conv_same<T: Real>(tape: &mut Tape<T>, x: Var, p: &ConvParams<Var>) -> Result<Var> {
    let k = tape.shape(p.weight).h;
    if k.is_multiple_of(2) {
        return dim_err(format!("same convolution needs an odd kernel, got {k}"));
    }
    tape.conv2d(x, p.weight, Some(p.bias), 1, (k - 1) / 2)
}

pub fn conv_relu<T: Real>(tape: &mut Tape<T>, x: Var, p: &ConvParams<Var>) -> Result<Var> {
    let y = conv_same(tape, x, p)?;
    Ok(tape.relu(y))
}

/// Normalized coordinate channels `(n, 2, h, w)`: channel 0 runs from -1 to
/// +1 along the width, channel 1 along the height. A unit extent gives 0.
pub fn coord_channels<T: Real>(n: usize, h: usize, w: usize) -> Tensor<T> {
    let ramp = |i: usize, len: usize| -> f64 {
        if len <= 1 {
            0.0
        } else {
            -1.0 + 2.0 * i as f64 / (len - 1) as f64
        }
    };
    let mut data = Vec::with_capacity(n * 2 * h * w);
    for _ in 0..n {
        for _ in 0..h {
            data.extend((0..w).map(|x| T::cast_from(ramp(x, w))));
        }
        for y in 0..h {
            for _ in 0..w {
                data.push(T::cast_from(ramp(y, h)));
            }
        }
    }
    Tensor::from_vec([n, 2, h, w], data).expect("coordinate channel shape")
}

/// Appends coordinate channels to `x`, then 3x3 conv and ReLU.
pub fn coordconv_forward<T: Real>(tape: &mut Tape<T>, x: Var, p: &ConvParams<Var>) -> Result<Var> {
    let s = tape.shape(x);
    let coords = tape.constant(coord_channels(s.n, s.h, s.w));
    let augmented = tape.concat_channels(&[x, coords])?;
    conv_relu(tape, augmented, p)
}

/// `sigmoid(mlp(mean_hw f) + mlp(max_hw f))` with one MLP shared by both paths.
pub fn channel_attention<T: Real>(
    tape: &mut Tape<T>,
    f: Var,
    squeeze: &ConvParams<Var>,
    excite: &ConvParams<Var>,
) -> Result<Var> {
    let mlp = |tape: &mut Tape<T>, v: Var| -> Result<Var> {
        let h = tape.conv2d(v, squeeze.weight, Some(squeeze.bias), 1, 0)?;
        let h = tape.relu(h);
        tape.conv2d(h, excite.weight, Some(excite.bias), 1, 0)
    };
    let avg = tape.reduce(f, Axis::Spatial, Stat::Mean);
    let max = tape.reduce(f, Axis::Spatial, Stat::Max);
    let a = mlp(tape, avg)?;
    let m = mlp(tape, max)?;
    let sum = tape.add(a, m)?;
    Ok(tape.sigmoid(sum))
}

/// `sigmoid(conv7x7([mean_c f, max_c f]))`.
pub fn spatial_attention<T: Real>(
    tape: &mut Tape<T>,
    f: Var,
    conv: &ConvParams<Var>,
) -> Result<Var> {
    let avg = tape.reduce(f, Axis::Channel, Stat::Mean);
    let max = tape.reduce(f, Axis::Channel, Stat::Max);
    let pooled = tape.concat_channels(&[avg, max])?;
    let logits = conv_same(tape, pooled, conv)?;
    Ok(tape.sigmoid(logits))
}

/// Residual dense attention block.
///
/// Dense 3x3 layers see the concatenation of the input and all earlier
/// layer outputs; a 1x1 conv fuses the full concatenation back to `c`
/// channels (`fused`). With attention the block returns
/// `f_i + fused + ca + sa`, where `ca = C_A(fused) * fused` and
/// `sa = S_A(ca) * ca`; without attention it returns `f_i + fused`.
pub fn rdab_forward<T: Real>(
    tape: &mut Tape<T>,
    f_i: Var,
    p: &RdabParams<Var>,
) -> Result<RdabOutput> {
    let width = tape.shape(p.fusion.weight).n;
    let c = tape.shape(f_i).c;
    if c != width {
        return dim_err(format!("rdab expects {width} input channels, got {c}"));
    }
    let mut features = vec![f_i];
    for layer in &p.dense {
        let input = tape.concat_channels(&features)?;
        features.push(conv_relu(tape, input, layer)?);
    }
    let all = tape.concat_channels(&features)?;
    let fused = conv_same(tape, all, &p.fusion)?;
    let residual = tape.add(f_i, fused)?;
    let Some(att) = &p.attention else {
        return Ok(RdabOutput {
            output: residual,
            fused,
            attention: None,
        });
    };
    let channel_map = channel_attention(tape, fused, &att.squeeze, &att.excite)?;
    let refined_c = tape.mul(fused, channel_map)?;
    let spatial_map = spatial_attention(tape, refined_c, &att.spatial)?;
    let refined_s = tape.mul(refined_c, spatial_map)?;
    let out = tape.add(residual, refined_c)?;
    let output = tape.add(out, refined_s)?;
    Ok(RdabOutput {
        output,
        fused,
        attention: Some(AttentionMaps {
            channel_map,
            spatial_map,
        }),
    })
}

/// Dense feature branch: each layer consumes the concatenation of the stem
/// and all previous outputs; returns the final concatenation.
pub fn dense_branch_forward<T: Real>(
    tape: &mut Tape<T>,
    stem: Var,
    layers: &[ConvParams<Var>],
) -> Result<Var> {
    let mut features = vec![stem];
    for layer in layers {
        let input = tape.concat_channels(&features)?;
        features.push(conv_relu(tape, input, layer)?);
    }
    tape.concat_channels(&features)
}
