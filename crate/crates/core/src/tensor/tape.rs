use super::kernels::{self, Window};
use super::{accurate_sum, Real, Shape, Tensor};
use crate::error::{dim_err, Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Sigmoid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    /// Collapse `h, w`; result is `(n, c, 1, 1)`.
    Spatial,
    /// Collapse `c`; result is `(n, 1, h, w)`.
    Channel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stat {
    Mean,
    Max,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
}

/// Backward rule for an operation defined outside this module.
pub trait CustomOp<T: Real> {
    fn name(&self) -> &'static str;

    /// Gradients for each input given `dout`; entries whose `needs` flag is
    /// false may be `None`.
    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        output: &Tensor<T>,
        dout: &[T],
        needs: &[bool],
    ) -> Vec<Option<Vec<T>>>;
}

const SIGMOID_CLAMP: f64 = 40.0;

enum Op<T: Real> {
    Leaf,
    Conv2d {
        x: Var,
        weight: Var,
        bias: Option<Var>,
        stride: usize,
        pad: usize,
    },
    ConvTranspose2d {
        x: Var,
        weight: Var,
        bias: Option<Var>,
        stride: usize,
    },
    MaxPool2d {
        x: Var,
        argmax: Vec<usize>,
    },
    Pointwise {
        x: Var,
        kind: Activation,
    },
    Concat {
        parts: Vec<Var>,
    },
    SliceChannels {
        x: Var,
        start: usize,
    },
    Reduce {
        x: Var,
        axis: Axis,
        stat: Stat,
        argmax: Vec<usize>,
    },
    Binary {
        a: Var,
        b: Var,
        op: BinaryOp,
    },
    Affine {
        x: Var,
        scale: T,
    },
    Mean {
        x: Var,
    },
    Custom {
        inputs: Vec<Var>,
        op: Box<dyn CustomOp<T>>,
    },
}

impl<T: Real> Op<T> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Conv2d { .. } => "conv2d",
            Op::ConvTranspose2d { .. } => "conv_transpose2d",
            Op::MaxPool2d { .. } => "maxpool2d",
            Op::Pointwise {
                kind: Activation::Relu,
                ..
            } => "relu",
            Op::Pointwise {
                kind: Activation::Sigmoid,
                ..
            } => "sigmoid",
            Op::Concat { .. } => "concat_channels",
            Op::SliceChannels { .. } => "slice_channels",
            Op::Reduce { .. } => "reduce",
            Op::Binary { .. } => "binary",
            Op::Affine { .. } => "affine",
            Op::Mean { .. } => "mean",
            Op::Custom { op, .. } => op.name(),
        }
    }
}

struct Node<T: Real> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Define-by-run record of a forward computation.
///
/// Nodes are appended in execution order; [`Tape::backward`] walks them in
/// reverse, visiting each node once.
pub struct Tape<T: Real> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn accumulate<T: Real>(slot: &mut Option<Vec<T>>, g: Vec<T>) {
    match slot {
        Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, &b)| *a += b),
        None => *slot = Some(g),
    }
}

/// Position in the broadcast operand `b` of element `(n, c, y, x)`.
#[inline]
fn broadcast_index(b: Shape, n: usize, c: usize, y: usize, x: usize) -> usize {
    let cb = if b.c == 1 { 0 } else { c };
    let yb = if b.h == 1 { 0 } else { y };
    let xb = if b.w == 1 { 0 } else { x };
    b.index(n, cb, yb, xb)
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> Shape {
        self.nodes[v.0].value.shape()
    }

    /// Gradient accumulated on a leaf by [`Tape::backward`].
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.nodes[v.0].value.grad()
    }

    pub fn op_name(&self, v: Var) -> &'static str {
        self.nodes[v.0].op.name()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn zero_grads(&mut self) {
        for node in &mut self.nodes {
            node.value.zero_grad();
        }
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        let mut value = value;
        value.requires_grad = false;
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records an input tensor. Gradients reach it iff `requires_grad` is set.
    pub fn leaf(&mut self, tensor: Tensor<T>) -> Var {
        let needs_grad = tensor.requires_grad;
        self.nodes.push(Node {
            value: tensor,
            op: Op::Leaf,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records a constant that never receives a gradient.
    pub fn constant(&mut self, mut tensor: Tensor<T>) -> Var {
        tensor.requires_grad = false;
        self.leaf(tensor)
    }

    fn bias_len(&self, bias: Option<Var>, c_out: usize) -> Result<()> {
        if let Some(b) = bias {
            let bs = self.shape(b);
            if bs.numel() != c_out {
                return dim_err(format!("bias {bs} must hold {c_out} values"));
            }
        }
        Ok(())
    }

    fn add_bias(&self, out: &mut [T], out_shape: Shape, bias: Option<Var>) {
        if let Some(b) = bias {
            let b = self.value(b).data();
            let plane = out_shape.plane();
            for (i, chunk) in out.chunks_mut(plane).enumerate() {
                let bv = b[i % out_shape.c];
                chunk.iter_mut().for_each(|v| *v += bv);
            }
        }
    }

    /// Cross-correlation with zero padding. `weight` is `(c_out, c_in, k, k)`.
    pub fn conv2d(
        &mut self,
        x: Var,
        weight: Var,
        bias: Option<Var>,
        stride: usize,
        pad: usize,
    ) -> Result<Var> {
        if stride == 0 {
            return Err(Error::Argument("conv2d stride must be positive".into()));
        }
        let xs = self.shape(x);
        let ws = self.shape(weight);
        if ws.h != ws.w {
            return dim_err(format!("conv2d kernel must be square, got {ws}"));
        }
        if ws.c != xs.c {
            return dim_err(format!(
                "conv2d input has {} channels but weight {ws} expects {}",
                xs.c, ws.c
            ));
        }
        if xs.h + 2 * pad < ws.h || xs.w + 2 * pad < ws.w {
            return dim_err(format!(
                "conv2d kernel {}x{} larger than padded input {xs}",
                ws.h, ws.w
            ));
        }
        self.bias_len(bias, ws.n)?;
        let win = Window {
            channels: xs.c,
            h: xs.h,
            w: xs.w,
            k: ws.h,
            stride,
            pad,
        };
        let out_shape = Shape::new(xs.n, ws.n, win.out_h(), win.out_w());
        let mut out = kernels::conv2d_forward(
            self.value(x).data(),
            xs,
            self.value(weight).data(),
            ws.n,
            &win,
        );
        self.add_bias(&mut out, out_shape, bias);
        let value = Tensor::from_vec(out_shape, out)?;
        let mut inputs = vec![x, weight];
        inputs.extend(bias);
        Ok(self.push(
            value,
            Op::Conv2d {
                x,
                weight,
                bias,
                stride,
                pad,
            },
            &inputs,
        ))
    }

    /// Transposed convolution without padding. `weight` is `(c_in, c_out, k, k)`;
    /// output spatial size is `(h - 1) * stride + k`.
    pub fn conv_transpose2d(
        &mut self,
        x: Var,
        weight: Var,
        bias: Option<Var>,
        stride: usize,
    ) -> Result<Var> {
        if stride == 0 {
            return Err(Error::Argument(
                "conv_transpose2d stride must be positive".into(),
            ));
        }
        let xs = self.shape(x);
        let ws = self.shape(weight);
        if ws.h != ws.w {
            return dim_err(format!("conv_transpose2d kernel must be square, got {ws}"));
        }
        if ws.n != xs.c {
            return dim_err(format!(
                "conv_transpose2d input has {} channels but weight {ws} expects {}",
                xs.c, ws.n
            ));
        }
        if xs.h == 0 || xs.w == 0 {
            return dim_err("conv_transpose2d on an empty plane");
        }
        self.bias_len(bias, ws.c)?;
        let win = transpose_window(xs, ws, stride);
        let out_shape = Shape::new(xs.n, ws.c, win.h, win.w);
        let mut out = kernels::conv_transpose2d_forward(
            self.value(x).data(),
            xs,
            self.value(weight).data(),
            &win,
        );
        self.add_bias(&mut out, out_shape, bias);
        let value = Tensor::from_vec(out_shape, out)?;
        let mut inputs = vec![x, weight];
        inputs.extend(bias);
        Ok(self.push(
            value,
            Op::ConvTranspose2d {
                x,
                weight,
                bias,
                stride,
            },
            &inputs,
        ))
    }

    /// Non-overlapping max pooling. Ties go to the first element in row-major order.
    pub fn maxpool2d(&mut self, x: Var, window: usize) -> Result<Var> {
        if window == 0 {
            return Err(Error::Argument("maxpool window must be positive".into()));
        }
        let s = self.shape(x);
        if !s.h.is_multiple_of(window) || !s.w.is_multiple_of(window) {
            return dim_err(format!(
                "maxpool2d needs height and width divisible by {window}, got {}x{}",
                s.h, s.w
            ));
        }
        let out_shape = Shape::new(s.n, s.c, s.h / window, s.w / window);
        let data = self.value(x).data();
        let mut out = Vec::with_capacity(out_shape.numel());
        let mut argmax = Vec::with_capacity(out_shape.numel());
        for n in 0..s.n {
            for c in 0..s.c {
                for oy in 0..out_shape.h {
                    for ox in 0..out_shape.w {
                        let mut best = s.index(n, c, oy * window, ox * window);
                        for dy in 0..window {
                            for dx in 0..window {
                                let i = s.index(n, c, oy * window + dy, ox * window + dx);
                                if data[i] > data[best] {
                                    best = i;
                                }
                            }
                        }
                        out.push(data[best]);
                        argmax.push(best);
                    }
                }
            }
        }
        let value = Tensor::from_vec(out_shape, out)?;
        Ok(self.push(value, Op::MaxPool2d { x, argmax }, &[x]))
    }

    pub fn pointwise(&mut self, x: Var, kind: Activation) -> Var {
        let value = match kind {
            Activation::Relu => self.value(x).map(|v| v.max(T::zero())),
            Activation::Sigmoid => self.value(x).map(sigmoid),
        };
        self.push(value, Op::Pointwise { x, kind }, &[x])
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.pointwise(x, Activation::Relu)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.pointwise(x, Activation::Sigmoid)
    }

    pub fn concat_channels(&mut self, parts: &[Var]) -> Result<Var> {
        let first = match parts.first() {
            Some(&v) => self.shape(v),
            None => return Err(Error::Argument("concat of zero tensors".into())),
        };
        let mut channels = 0;
        for &p in parts {
            let s = self.shape(p);
            if (s.n, s.h, s.w) != (first.n, first.h, first.w) {
                return dim_err(format!(
                    "concat_channels: {s} does not match {first} in (n, h, w)"
                ));
            }
            channels += s.c;
        }
        let out_shape = Shape::new(first.n, channels, first.h, first.w);
        let plane = first.plane();
        let mut out = Vec::with_capacity(out_shape.numel());
        for n in 0..first.n {
            for &p in parts {
                let t = self.value(p);
                let len = t.shape().c * plane;
                out.extend_from_slice(&t.data()[n * len..(n + 1) * len]);
            }
        }
        let value = Tensor::from_vec(out_shape, out)?;
        Ok(self.push(
            value,
            Op::Concat {
                parts: parts.to_vec(),
            },
            parts,
        ))
    }

    pub fn slice_channels(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let value = self.value(x).slice_channels(start, len)?;
        Ok(self.push(value, Op::SliceChannels { x, start }, &[x]))
    }

    pub fn reduce(&mut self, x: Var, axis: Axis, stat: Stat) -> Var {
        let s = self.shape(x);
        let data = self.value(x).data();
        let (out_shape, groups): (Shape, Vec<Vec<usize>>) = match axis {
            Axis::Spatial => {
                let plane = s.plane();
                let groups = (0..s.n * s.c)
                    .map(|g| (g * plane..(g + 1) * plane).collect())
                    .collect();
                (Shape::new(s.n, s.c, 1, 1), groups)
            }
            Axis::Channel => {
                let mut groups = Vec::with_capacity(s.n * s.plane());
                for n in 0..s.n {
                    for y in 0..s.h {
                        for xx in 0..s.w {
                            groups.push((0..s.c).map(|c| s.index(n, c, y, xx)).collect());
                        }
                    }
                }
                (Shape::new(s.n, 1, s.h, s.w), groups)
            }
        };
        let mut out = Vec::with_capacity(groups.len());
        let mut argmax = Vec::new();
        for g in &groups {
            match stat {
                Stat::Mean => {
                    let sum = accurate_sum(g.iter().map(|&i| data[i]));
                    out.push(T::cast_from(sum / g.len() as f64));
                }
                Stat::Max => {
                    let mut best = g[0];
                    for &i in &g[1..] {
                        if data[i] > data[best] {
                            best = i;
                        }
                    }
                    out.push(data[best]);
                    argmax.push(best);
                }
            }
        }
        let value = Tensor::from_vec(out_shape, out).expect("reduce shape");
        self.push(
            value,
            Op::Reduce {
                x,
                axis,
                stat,
                argmax,
            },
            &[x],
        )
    }

    /// Elementwise `a op b` where `b` may have size 1 along any of `c, h, w`.
    pub fn binary(&mut self, a: Var, b: Var, op: BinaryOp) -> Result<Var> {
        let sa = self.shape(a);
        let sb = self.shape(b);
        let ok = sb.n == sa.n
            && (sb.c == sa.c || sb.c == 1)
            && (sb.h == sa.h || sb.h == 1)
            && (sb.w == sa.w || sb.w == 1);
        if !ok {
            return dim_err(format!("cannot broadcast {sb} onto {sa}"));
        }
        let da = self.value(a).data();
        let db = self.value(b).data();
        let mut out = Vec::with_capacity(sa.numel());
        if sa == sb {
            out.extend(da.iter().zip(db).map(|(&x, &y)| apply(op, x, y)));
        } else {
            for n in 0..sa.n {
                for c in 0..sa.c {
                    for y in 0..sa.h {
                        for x in 0..sa.w {
                            let bi = broadcast_index(sb, n, c, y, x);
                            out.push(apply(op, da[sa.index(n, c, y, x)], db[bi]));
                        }
                    }
                }
            }
        }
        let value = Tensor::from_vec(sa, out)?;
        Ok(self.push(value, Op::Binary { a, b, op }, &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, BinaryOp::Add)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, BinaryOp::Sub)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, BinaryOp::Mul)
    }

    /// `scale * x + shift`.
    pub fn affine(&mut self, x: Var, scale: T, shift: T) -> Var {
        let value = self.value(x).map(|v| scale * v + shift);
        self.push(value, Op::Affine { x, scale }, &[x])
    }

    /// Mean of every element, as a `(1, 1, 1, 1)` tensor.
    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let sum = accurate_sum(t.data().iter().copied());
        let value = Tensor::scalar(T::cast_from(sum / t.numel() as f64));
        self.push(value, Op::Mean { x }, &[x])
    }

    /// Records a value computed elsewhere together with its backward rule.
    pub fn custom(&mut self, inputs: &[Var], output: Tensor<T>, op: Box<dyn CustomOp<T>>) -> Var {
        self.push(
            output,
            Op::Custom {
                inputs: inputs.to_vec(),
                op,
            },
            inputs,
        )
    }

    /// Accumulates `d output / d leaf` into every gradient-requiring leaf.
    ///
    /// Leaves that require a gradient but are not reachable from `output`
    /// receive zeros, so every such leaf holds a gradient afterwards.
    pub fn backward(&mut self, output: Var) -> Result<()> {
        let out_shape = self.shape(output);
        if out_shape != Shape::scalar() {
            return Err(Error::Argument(format!(
                "backward needs a scalar (1, 1, 1, 1) output, got {out_shape}"
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = Vec::new();
        grads.resize_with(output.0 + 1, || None);
        grads[output.0] = Some(vec![T::one()]);

        for i in (0..=output.0).rev() {
            if !self.nodes[i].needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            if let Op::Leaf = self.nodes[i].op {
                self.nodes[i].value.accumulate_grad(&g);
                continue;
            }
            for (input, gi) in self.node_backward(i, &g) {
                accumulate(&mut grads[input.0], gi);
            }
        }
        for node in &mut self.nodes {
            if matches!(node.op, Op::Leaf) && node.needs_grad && node.value.grad().is_none() {
                let zeros = vec![T::zero(); node.value.numel()];
                node.value.accumulate_grad(&zeros);
            }
        }
        Ok(())
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn node_backward(&self, i: usize, g: &[T]) -> Vec<(Var, Vec<T>)> {
        let node = &self.nodes[i];
        let out_shape = node.value.shape();
        let mut res = Vec::new();
        match &node.op {
            Op::Leaf => {}
            &Op::Conv2d {
                x,
                weight,
                bias,
                stride,
                pad,
            } => {
                let xs = self.shape(x);
                let ws = self.shape(weight);
                let win = Window {
                    channels: xs.c,
                    h: xs.h,
                    w: xs.w,
                    k: ws.h,
                    stride,
                    pad,
                };
                let (dx, dw) = kernels::conv2d_backward(
                    self.value(x).data(),
                    xs,
                    self.value(weight).data(),
                    ws.n,
                    &win,
                    g,
                    self.needs(x),
                    self.needs(weight),
                );
                res.extend(dx.map(|d| (x, d)));
                res.extend(dw.map(|d| (weight, d)));
                if let Some(b) = bias.filter(|&b| self.needs(b)) {
                    res.push((b, bias_grad(g, out_shape)));
                }
            }
            &Op::ConvTranspose2d {
                x,
                weight,
                bias,
                stride,
            } => {
                let xs = self.shape(x);
                let ws = self.shape(weight);
                let win = transpose_window(xs, ws, stride);
                let (dx, dw) = kernels::conv_transpose2d_backward(
                    self.value(x).data(),
                    xs,
                    self.value(weight).data(),
                    &win,
                    g,
                    self.needs(x),
                    self.needs(weight),
                );
                res.extend(dx.map(|d| (x, d)));
                res.extend(dw.map(|d| (weight, d)));
                if let Some(b) = bias.filter(|&b| self.needs(b)) {
                    res.push((b, bias_grad(g, out_shape)));
                }
            }
            Op::MaxPool2d { x, argmax } => {
                let mut dx = vec![T::zero(); self.value(*x).numel()];
                for (&src, &gv) in argmax.iter().zip(g) {
                    dx[src] += gv;
                }
                res.push((*x, dx));
            }
            &Op::Pointwise { x, kind } => {
                let dx = match kind {
                    Activation::Relu => self
                        .value(x)
                        .data()
                        .iter()
                        .zip(g)
                        .map(|(&v, &gv)| if v > T::zero() { gv } else { T::zero() })
                        .collect(),
                    Activation::Sigmoid => node
                        .value
                        .data()
                        .iter()
                        .zip(g)
                        .map(|(&s, &gv)| gv * s * (T::one() - s))
                        .collect(),
                };
                res.push((x, dx));
            }
            Op::Concat { parts } => {
                let plane = out_shape.plane();
                let mut offset = 0;
                for &p in parts {
                    let ps = self.shape(p);
                    if self.needs(p) {
                        let len = ps.c * plane;
                        let mut dp = Vec::with_capacity(ps.numel());
                        for n in 0..out_shape.n {
                            let base = n * out_shape.c * plane + offset * plane;
                            dp.extend_from_slice(&g[base..base + len]);
                        }
                        res.push((p, dp));
                    }
                    offset += ps.c;
                }
            }
            &Op::SliceChannels { x, start } => {
                let xs = self.shape(x);
                let plane = xs.plane();
                let len = out_shape.c * plane;
                let mut dx = vec![T::zero(); xs.numel()];
                for n in 0..xs.n {
                    let base = (n * xs.c + start) * plane;
                    dx[base..base + len].copy_from_slice(&g[n * len..(n + 1) * len]);
                }
                res.push((x, dx));
            }
            Op::Reduce {
                x,
                axis,
                stat,
                argmax,
            } => {
                let xs = self.shape(*x);
                let mut dx = vec![T::zero(); xs.numel()];
                match stat {
                    Stat::Max => {
                        for (&src, &gv) in argmax.iter().zip(g) {
                            dx[src] += gv;
                        }
                    }
                    Stat::Mean => match axis {
                        Axis::Spatial => {
                            let plane = xs.plane();
                            let inv = T::one() / T::cast_from(plane as f64);
                            for (chunk, &gv) in dx.chunks_mut(plane).zip(g) {
                                chunk.iter_mut().for_each(|d| *d = gv * inv);
                            }
                        }
                        Axis::Channel => {
                            let inv = T::one() / T::cast_from(xs.c as f64);
                            for n in 0..xs.n {
                                for c in 0..xs.c {
                                    for y in 0..xs.h {
                                        for xx in 0..xs.w {
                                            let gi = out_shape.index(n, 0, y, xx);
                                            dx[xs.index(n, c, y, xx)] = g[gi] * inv;
                                        }
                                    }
                                }
                            }
                        }
                    },
                }
                res.push((*x, dx));
            }
            &Op::Binary { a, b, op } => {
                let sa = self.shape(a);
                let sb = self.shape(b);
                let da = self.value(a).data();
                let db = self.value(b).data();
                let mut ga = self.needs(a).then(|| vec![T::zero(); sa.numel()]);
                let mut gb = self.needs(b).then(|| vec![T::zero(); sb.numel()]);
                for n in 0..sa.n {
                    for c in 0..sa.c {
                        for y in 0..sa.h {
                            for x in 0..sa.w {
                                let ai = sa.index(n, c, y, x);
                                let bi = broadcast_index(sb, n, c, y, x);
                                let gv = g[ai];
                                let (fa, fb) = match op {
                                    BinaryOp::Add => (gv, gv),
                                    BinaryOp::Sub => (gv, -gv),
                                    BinaryOp::Mul => (gv * db[bi], gv * da[ai]),
                                };
                                if let Some(ga) = ga.as_mut() {
                                    ga[ai] += fa;
                                }
                                if let Some(gb) = gb.as_mut() {
                                    gb[bi] += fb;
                                }
                            }
                        }
                    }
                }
                res.extend(ga.map(|d| (a, d)));
                res.extend(gb.map(|d| (b, d)));
            }
            &Op::Affine { x, scale } => {
                res.push((x, g.iter().map(|&gv| gv * scale).collect()));
            }
            &Op::Mean { x } => {
                let numel = self.value(x).numel();
                let d = g[0] / T::cast_from(numel as f64);
                res.push((x, vec![d; numel]));
            }
            Op::Custom { inputs, op } => {
                let values: Vec<&Tensor<T>> = inputs.iter().map(|&v| self.value(v)).collect();
                let needs: Vec<bool> = inputs.iter().map(|&v| self.needs(v)).collect();
                let grads = op.backward(&values, &node.value, g, &needs);
                for ((&v, gi), need) in inputs.iter().zip(grads).zip(needs) {
                    if let (Some(gi), true) = (gi, need) {
                        res.push((v, gi));
                    }
                }
            }
        }
        res.retain(|(v, _)| self.needs(*v));
        res
    }
}

fn transpose_window(xs: Shape, ws: Shape, stride: usize) -> Window {
    let k = ws.h;
    Window {
        channels: ws.c,
        h: (xs.h - 1) * stride + k,
        w: (xs.w - 1) * stride + k,
        k,
        stride,
        pad: 0,
    }
}

fn bias_grad<T: Real>(g: &[T], out_shape: Shape) -> Vec<T> {
    let mut db = vec![T::zero(); out_shape.c];
    for (i, chunk) in g.chunks(out_shape.plane()).enumerate() {
        db[i % out_shape.c] += chunk.iter().copied().sum::<T>();
    }
    db
}

#[inline]
fn apply<T: Real>(op: BinaryOp, a: T, b: T) -> T {
    match op {
        BinaryOp::Add => a + b,
        BinaryOp::Sub => a - b,
        BinaryOp::Mul => a * b,
    }
}

/// Logistic function with the input clamped to +-40 and the result kept
/// strictly below one.
pub(crate) fn sigmoid<T: Real>(x: T) -> T {
    let limit = T::cast_from(SIGMOID_CLAMP);
    let x = x.max(-limit).min(limit);
    let s = T::one() / (T::one() + (-x).exp());
    let below_one = T::one() - T::epsilon() / T::cast_from(2.0);
    s.min(below_one)
}
