//! Scalar-loop reference implementations and fixtures shared by the
//! integration tests. Everything here is written directly from the layer
//! definitions, without the im2col/gemm machinery used by the library.

#![allow(dead_code)]

use hsrecon::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: [usize; 4], lo: f64, hi: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

/// Largest `|a - b| / max(|a|, |b|, floor)` over paired elements.
pub fn max_rel_diff(a: &[f64], b: &[f64], floor: f64) -> f64 {
    assert_eq!(a.len(), b.len(), "length mismatch");
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(floor))
        .fold(0.0, f64::max)
}

/// Dense row-major 4-d array used by the oracles.
#[derive(Debug, Clone, PartialEq)]
pub struct Array4 {
    pub dims: [usize; 4],
    pub data: Vec<f64>,
}

impl Array4 {
    pub fn zeros(dims: [usize; 4]) -> Self {
        Self {
            dims,
            data: vec![0.0; dims.iter().product()],
        }
    }

    pub fn from_tensor(t: &Tensor<f64>) -> Self {
        Self {
            dims: t.shape().dims(),
            data: t.data().to_vec(),
        }
    }

    fn idx(&self, a: usize, b: usize, c: usize, d: usize) -> usize {
        ((a * self.dims[1] + b) * self.dims[2] + c) * self.dims[3] + d
    }

    pub fn get(&self, a: usize, b: usize, c: usize, d: usize) -> f64 {
        self.data[self.idx(a, b, c, d)]
    }

    pub fn set(&mut self, a: usize, b: usize, c: usize, d: usize, v: f64) {
        let i = self.idx(a, b, c, d);
        self.data[i] = v;
    }

    /// Zero outside the array bounds.
    pub fn get_padded(&self, a: usize, b: usize, y: isize, x: isize) -> f64 {
        if y < 0 || x < 0 || y as usize >= self.dims[2] || x as usize >= self.dims[3] {
            0.0
        } else {
            self.get(a, b, y as usize, x as usize)
        }
    }
}

pub fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

/// Cross-correlation with zero padding; `w` is `(c_out, c_in, k, k)`.
pub fn conv2d(x: &Array4, w: &Array4, bias: Option<&[f64]>, stride: usize, pad: usize) -> Array4 {
    let [n, c_in, h, wd] = x.dims;
    let [c_out, wc_in, k, _] = w.dims;
    assert_eq!(c_in, wc_in);
    let oh = (h + 2 * pad - k) / stride + 1;
    let ow = (wd + 2 * pad - k) / stride + 1;
    let mut out = Array4::zeros([n, c_out, oh, ow]);
    for b in 0..n {
        for o in 0..c_out {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = bias.map_or(0.0, |bb| bb[o]);
                    for i in 0..c_in {
                        for ky in 0..k {
                            for kx in 0..k {
                                let y = (oy * stride + ky) as isize - pad as isize;
                                let xx = (ox * stride + kx) as isize - pad as isize;
                                acc += w.get(o, i, ky, kx) * x.get_padded(b, i, y, xx);
                            }
                        }
                    }
                    out.set(b, o, oy, ox, acc);
                }
            }
        }
    }
    out
}

/// Transposed convolution by scattering each input pixel; `w` is `(c_in, c_out, k, k)`.
pub fn conv_transpose2d(x: &Array4, w: &Array4, bias: Option<&[f64]>, stride: usize) -> Array4 {
    let [n, c_in, h, wd] = x.dims;
    let [wc_in, c_out, k, _] = w.dims;
    assert_eq!(c_in, wc_in);
    let oh = (h - 1) * stride + k;
    let ow = (wd - 1) * stride + k;
    let mut out = Array4::zeros([n, c_out, oh, ow]);
    for b in 0..n {
        for o in 0..c_out {
            let bv = bias.map_or(0.0, |bb| bb[o]);
            for y in 0..oh {
                for xx in 0..ow {
                    out.set(b, o, y, xx, bv);
                }
            }
        }
        for i in 0..c_in {
            for y in 0..h {
                for xx in 0..wd {
                    let v = x.get(b, i, y, xx);
                    for o in 0..c_out {
                        for ky in 0..k {
                            for kx in 0..k {
                                let (ty, tx) = (y * stride + ky, xx * stride + kx);
                                let cur = out.get(b, o, ty, tx);
                                out.set(b, o, ty, tx, cur + v * w.get(i, o, ky, kx));
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Non-overlapping max pooling.
pub fn maxpool(x: &Array4, k: usize) -> Array4 {
    let [n, c, h, w] = x.dims;
    let mut out = Array4::zeros([n, c, h / k, w / k]);
    for b in 0..n {
        for ch in 0..c {
            for oy in 0..h / k {
                for ox in 0..w / k {
                    let mut m = f64::NEG_INFINITY;
                    for dy in 0..k {
                        for dx in 0..k {
                            m = m.max(x.get(b, ch, oy * k + dy, ox * k + dx));
                        }
                    }
                    out.set(b, ch, oy, ox, m);
                }
            }
        }
    }
    out
}

/// Per-sample channel weights: `sigmoid(mlp(avg) + mlp(max))` with
/// `mlp(v) = W2 relu(W1 v + b1) + b2`; `w1` is `hidden x c`, `w2` is `c x hidden`.
pub fn channel_attention(f: &Array4, w1: &[f64], b1: &[f64], w2: &[f64], b2: &[f64]) -> Array4 {
    let [n, c, h, w] = f.dims;
    let hidden = b1.len();
    let mlp = |v: &[f64]| -> Vec<f64> {
        let z: Vec<f64> = (0..hidden)
            .map(|j| (b1[j] + (0..c).map(|i| w1[j * c + i] * v[i]).sum::<f64>()).max(0.0))
            .collect();
        (0..c)
            .map(|i| b2[i] + (0..hidden).map(|j| w2[i * hidden + j] * z[j]).sum::<f64>())
            .collect()
    };
    let mut out = Array4::zeros([n, c, 1, 1]);
    for b in 0..n {
        let mut avg = vec![0.0; c];
        let mut mx = vec![f64::NEG_INFINITY; c];
        for ch in 0..c {
            for y in 0..h {
                for x in 0..w {
                    let v = f.get(b, ch, y, x);
                    avg[ch] += v / (h * w) as f64;
                    mx[ch] = mx[ch].max(v);
                }
            }
        }
        let (pa, pm) = (mlp(&avg), mlp(&mx));
        for ch in 0..c {
            out.set(b, ch, 0, 0, sigmoid(pa[ch] + pm[ch]));
        }
    }
    out
}

/// Per-pixel weights: `sigmoid(conv([mean_c f, max_c f]))` with a same-padded
/// `(1, 2, k, k)` kernel.
pub fn spatial_attention(f: &Array4, w: &Array4, bias: f64) -> Array4 {
    let [n, c, h, wd] = f.dims;
    let mut pooled = Array4::zeros([n, 2, h, wd]);
    for b in 0..n {
        for y in 0..h {
            for x in 0..wd {
                let vals: Vec<f64> = (0..c).map(|ch| f.get(b, ch, y, x)).collect();
                pooled.set(b, 0, y, x, vals.iter().sum::<f64>() / c as f64);
                pooled.set(
                    b,
                    1,
                    y,
                    x,
                    vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
                );
            }
        }
    }
    let k = w.dims[2];
    let mut out = conv2d(&pooled, w, Some(&[bias]), 1, (k - 1) / 2);
    out.data.iter_mut().for_each(|v| *v = sigmoid(*v));
    out
}

pub fn mrae(pred: &[f64], gt: &[f64]) -> f64 {
    let mut total = 0.0;
    for (p, g) in pred.iter().zip(gt) {
        total += (p - g).abs() / (g + 1e-6);
    }
    total / gt.len() as f64
}

pub fn rmse(pred: &[f64], gt: &[f64]) -> f64 {
    let mut total = 0.0;
    for (p, g) in pred.iter().zip(gt) {
        total += (p - g) * (p - g);
    }
    (total / gt.len() as f64).sqrt()
}

/// `rgb[c][pixel] = sum_b response[c][b] * cube[b][pixel]`; `response` is `3 x bands`.
pub fn project_rgb(cube: &[f32], bands: usize, pixels: usize, response: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; 3 * pixels];
    for c in 0..3 {
        for p in 0..pixels {
            for b in 0..bands {
                out[c * pixels + p] += response[c * bands + b] * cube[b * pixels + p] as f64;
            }
        }
    }
    out
}

/// Runs the command line in-process; returns `(exit code, stdout, stderr)`.
pub fn cli(args: &[&str]) -> (i32, String, String) {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let argv = std::iter::once("hsrecon").chain(args.iter().copied());
    let code = hsrecon::cli::run(argv, &mut out, &mut err);
    (
        code,
        String::from_utf8(out).unwrap(),
        String::from_utf8(err).unwrap(),
    )
}

/// Splits a `key=value ...` line into pairs.
pub fn fields(line: &str) -> Vec<(String, String)> {
    line.split_whitespace()
        .filter_map(|tok| tok.split_once('='))
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect()
}

pub fn field<'a>(pairs: &'a [(String, String)], key: &str) -> Option<&'a str> {
    pairs
        .iter()
        .find(|(k, _)| k == key)
        .map(|(_, v)| v.as_str())
}
