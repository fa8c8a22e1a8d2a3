//! Reconstruction metrics (MRAE, RMSE, SSIM) and the L2 + SSIM training loss.
//!
//! Metrics accumulate in `f64` whatever the tensor precision. SSIM is
//! evaluated per band with an 11x11 Gaussian window (sigma 1.5); near the
//! image border the window is cut off and renormalized over the in-bounds
//! taps. The same per-pixel SSIM map backs both the metric and the
//! differentiable loss term.

use crate::error::{dim_err, Result};
use crate::tensor::{CustomOp, Real, Shape, Tape, Tensor, Var};

/// Guard added to the ground truth in the MRAE denominator.
pub const MRAE_EPS: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct SsimParams {
    /// Side length of the Gaussian window; must be odd.
    pub window: usize,
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
    /// Dynamic range `L` of the data.
    pub dynamic_range: f64,
}

impl Default for SsimParams {
    fn default() -> Self {
        Self {
            window: 11,
            sigma: 1.5,
            k1: 0.01,
            k2: 0.03,
            dynamic_range: 1.0,
        }
    }
}

impl SsimParams {
    pub fn c1(&self) -> f64 {
        (self.k1 * self.dynamic_range).powi(2)
    }

    pub fn c2(&self) -> f64 {
        (self.k2 * self.dynamic_range).powi(2)
    }

    /// Normalized 1-D Gaussian taps; the 2-D window is their outer product.
    pub fn kernel(&self) -> Vec<f64> {
        let r = (self.window / 2) as f64;
        let taps: Vec<f64> = (0..self.window)
            .map(|i| {
                let d = i as f64 - r;
                (-d * d / (2.0 * self.sigma * self.sigma)).exp()
            })
            .collect();
        let sum: f64 = taps.iter().sum();
        taps.into_iter().map(|t| t / sum).collect()
    }
}

/// Metrics of one prediction against its ground truth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricReport {
    pub mrae: f64,
    pub rmse: f64,
    pub ssim: f64,
    /// Number of compared elements (pixels times bands).
    pub pixel_count: usize,
}

impl MetricReport {
    pub fn compute<T: Real>(pred: &Tensor<T>, gt: &Tensor<T>) -> Result<Self> {
        Ok(Self {
            mrae: mrae(pred, gt)?,
            rmse: rmse(pred, gt)?,
            ssim: ssim(pred, gt, &SsimParams::default())?,
            pixel_count: pred.numel(),
        })
    }

    /// Arithmetic mean of several reports; `pixel_count` is summed.
    pub fn mean(reports: &[MetricReport]) -> Option<Self> {
        if reports.is_empty() {
            return None;
        }
        let n = reports.len() as f64;
        Some(Self {
            mrae: reports.iter().map(|r| r.mrae).sum::<f64>() / n,
            rmse: reports.iter().map(|r| r.rmse).sum::<f64>() / n,
            ssim: reports.iter().map(|r| r.ssim).sum::<f64>() / n,
            pixel_count: reports.iter().map(|r| r.pixel_count).sum(),
        })
    }
}

fn same_shape(a: Shape, b: Shape, what: &str) -> Result<()> {
    if a != b {
        return dim_err(format!(
            "{what}: prediction {a} and ground truth {b} differ"
        ));
    }
    Ok(())
}

/// Mean relative absolute error over every element.
pub fn mrae<T: Real>(pred: &Tensor<T>, gt: &Tensor<T>) -> Result<f64> {
    same_shape(pred.shape(), gt.shape(), "mrae")?;
    let sum: f64 = pred
        .data()
        .iter()
        .zip(gt.data())
        .map(|(&p, &g)| {
            let (p, g) = (p.as_f64(), g.as_f64());
            (p - g).abs() / (g + MRAE_EPS)
        })
        .sum();
    Ok(sum / pred.numel() as f64)
}

pub fn rmse<T: Real>(pred: &Tensor<T>, gt: &Tensor<T>) -> Result<f64> {
    same_shape(pred.shape(), gt.shape(), "rmse")?;
    let sum: f64 = pred
        .data()
        .iter()
        .zip(gt.data())
        .map(|(&p, &g)| (p.as_f64() - g.as_f64()).powi(2))
        .sum();
    Ok((sum / pred.numel() as f64).sqrt())
}

/// Mean SSIM over all bands and batch items.
pub fn ssim<T: Real>(x: &Tensor<T>, y: &Tensor<T>, params: &SsimParams) -> Result<f64> {
    let map = ssim_map_values(x, y, params)?;
    Ok(map.iter().sum::<f64>() / map.len() as f64)
}

/// Per-element SSIM, same layout as the inputs.
pub fn ssim_map_values<T: Real>(
    x: &Tensor<T>,
    y: &Tensor<T>,
    params: &SsimParams,
) -> Result<Vec<f64>> {
    same_shape(x.shape(), y.shape(), "ssim")?;
    let s = x.shape();
    let plane = s.plane();
    let xs = x.to_f64_vec();
    let ys = y.to_f64_vec();
    let filter = Filter::new(params, s.h, s.w);
    let mut out = Vec::with_capacity(xs.len());
    for (xp, yp) in xs.chunks(plane).zip(ys.chunks(plane)) {
        let stats = PlaneStats::new(&filter, xp, yp);
        out.extend((0..plane).map(|i| stats.terms(i, params).value()));
    }
    Ok(out)
}

/// Separable Gaussian smoothing with border renormalization.
struct Filter {
    taps: Vec<f64>,
    h: usize,
    w: usize,
    /// In-bounds tap mass per row / column position.
    row_mass: Vec<f64>,
    col_mass: Vec<f64>,
}

impl Filter {
    fn new(params: &SsimParams, h: usize, w: usize) -> Self {
        let taps = params.kernel();
        let mass = |len: usize| -> Vec<f64> {
            let ones = vec![1.0; len];
            correlate_1d(&ones, &taps)
        };
        Self {
            row_mass: mass(h),
            col_mass: mass(w),
            taps,
            h,
            w,
        }
    }

    /// Weighted local mean of `plane`.
    fn apply(&self, plane: &[f64]) -> Vec<f64> {
        let mut tmp = Vec::with_capacity(plane.len());
        for row in plane.chunks(self.w) {
            let r = correlate_1d(row, &self.taps);
            tmp.extend(r.iter().zip(&self.col_mass).map(|(v, m)| v / m));
        }
        let mut out = vec![0.0; plane.len()];
        for x in 0..self.w {
            let col: Vec<f64> = (0..self.h).map(|y| tmp[y * self.w + x]).collect();
            let c = correlate_1d(&col, &self.taps);
            for y in 0..self.h {
                out[y * self.w + x] = c[y] / self.row_mass[y];
            }
        }
        out
    }

    /// Adjoint of [`Filter::apply`].
    fn apply_transpose(&self, plane: &[f64]) -> Vec<f64> {
        let mut tmp = vec![0.0; plane.len()];
        for x in 0..self.w {
            let col: Vec<f64> = (0..self.h)
                .map(|y| plane[y * self.w + x] / self.row_mass[y])
                .collect();
            let c = correlate_1d(&col, &self.taps);
            for y in 0..self.h {
                tmp[y * self.w + x] = c[y];
            }
        }
        let mut out = Vec::with_capacity(plane.len());
        for row in tmp.chunks(self.w) {
            let scaled: Vec<f64> = row.iter().zip(&self.col_mass).map(|(v, m)| v / m).collect();
            out.extend(correlate_1d(&scaled, &self.taps));
        }
        out
    }
}

/// Zero-padded correlation of a 1-D signal with a centered odd kernel.
fn correlate_1d(signal: &[f64], taps: &[f64]) -> Vec<f64> {
    let r = (taps.len() / 2) as isize;
    let len = signal.len();
    (0..len)
        .map(|i| {
            let mut acc = 0.0;
            for (t, &k) in taps.iter().enumerate() {
                let j = i as isize + t as isize - r;
                if j >= 0 && (j as usize) < len {
                    acc += k * signal[j as usize];
                }
            }
            acc
        })
        .collect()
}

/// Windowed first and second moments of one band.
struct PlaneStats {
    mu_x: Vec<f64>,
    mu_y: Vec<f64>,
    exx: Vec<f64>,
    eyy: Vec<f64>,
    exy: Vec<f64>,
}

impl PlaneStats {
    fn new(filter: &Filter, x: &[f64], y: &[f64]) -> Self {
        let sq =
            |a: &[f64], b: &[f64]| -> Vec<f64> { a.iter().zip(b).map(|(u, v)| u * v).collect() };
        Self {
            mu_x: filter.apply(x),
            mu_y: filter.apply(y),
            exx: filter.apply(&sq(x, x)),
            eyy: filter.apply(&sq(y, y)),
            exy: filter.apply(&sq(x, y)),
        }
    }

    fn terms(&self, i: usize, params: &SsimParams) -> SsimTerms {
        let (mx, my) = (self.mu_x[i], self.mu_y[i]);
        let var_x = self.exx[i] - mx * mx;
        let var_y = self.eyy[i] - my * my;
        let cov = self.exy[i] - mx * my;
        SsimTerms {
            mu_x: mx,
            mu_y: my,
            a1: 2.0 * mx * my + params.c1(),
            a2: 2.0 * cov + params.c2(),
            b1: mx * mx + my * my + params.c1(),
            b2: var_x + var_y + params.c2(),
        }
    }
}

/// `ssim = (a1 * a2) / (b1 * b2)` at one pixel.
struct SsimTerms {
    mu_x: f64,
    mu_y: f64,
    a1: f64,
    a2: f64,
    b1: f64,
    b2: f64,
}

impl SsimTerms {
    fn value(&self) -> f64 {
        (self.a1 * self.a2) / (self.b1 * self.b2)
    }

    /// Partials with respect to `(mu_x, E[x^2], E[xy])`.
    fn partials_x(&self) -> (f64, f64, f64) {
        let s = self.value();
        let d_mu = s
            * (2.0 * self.mu_y / self.a1 - 2.0 * self.mu_y / self.a2 - 2.0 * self.mu_x / self.b1
                + 2.0 * self.mu_x / self.b2);
        (d_mu, -s / self.b2, 2.0 * s / self.a2)
    }

    fn swapped(&self) -> Self {
        Self {
            mu_x: self.mu_y,
            mu_y: self.mu_x,
            ..*self
        }
    }
}

struct SsimMapOp {
    params: SsimParams,
}

impl SsimMapOp {
    /// Gradient of `sum(dout * ssim_map)` with respect to the first argument.
    fn grad_first(&self, x: &[f64], y: &[f64], s: Shape, dout: &[f64], swap: bool) -> Vec<f64> {
        let plane = s.plane();
        let filter = Filter::new(&self.params, s.h, s.w);
        let mut out = Vec::with_capacity(x.len());
        for ((xp, yp), gp) in x.chunks(plane).zip(y.chunks(plane)).zip(dout.chunks(plane)) {
            let stats = if swap {
                PlaneStats::new(&filter, yp, xp)
            } else {
                PlaneStats::new(&filter, xp, yp)
            };
            let mut u_mu = vec![0.0; plane];
            let mut u_xx = vec![0.0; plane];
            let mut u_xy = vec![0.0; plane];
            for i in 0..plane {
                let terms = stats.terms(i, &self.params);
                let terms = if swap { terms.swapped() } else { terms };
                let (d_mu, d_xx, d_xy) = terms.partials_x();
                u_mu[i] = gp[i] * d_mu;
                u_xx[i] = gp[i] * d_xx;
                u_xy[i] = gp[i] * d_xy;
            }
            let t_mu = filter.apply_transpose(&u_mu);
            let t_xx = filter.apply_transpose(&u_xx);
            let t_xy = filter.apply_transpose(&u_xy);
            out.extend((0..plane).map(|i| t_mu[i] + 2.0 * xp[i] * t_xx[i] + yp[i] * t_xy[i]));
        }
        out
    }
}

impl<T: Real> CustomOp<T> for SsimMapOp {
    fn name(&self) -> &'static str {
        "ssim_map"
    }

    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        _output: &Tensor<T>,
        dout: &[T],
        needs: &[bool],
    ) -> Vec<Option<Vec<T>>> {
        let s = inputs[0].shape();
        let x = inputs[0].to_f64_vec();
        let y = inputs[1].to_f64_vec();
        let g: Vec<f64> = dout.iter().map(|v| v.as_f64()).collect();
        let cast = |v: Vec<f64>| v.into_iter().map(T::cast_from).collect::<Vec<T>>();
        vec![
            needs[0].then(|| cast(self.grad_first(&x, &y, s, &g, false))),
            needs[1].then(|| cast(self.grad_first(&y, &x, s, &g, true))),
        ]
    }
}

/// Records the per-element SSIM map of `x` against `y` on the tape.
pub fn ssim_map<T: Real>(tape: &mut Tape<T>, x: Var, y: Var, params: &SsimParams) -> Result<Var> {
    let values = ssim_map_values(tape.value(x), tape.value(y), params)?;
    let out = Tensor::from_vec(
        tape.shape(x),
        values.into_iter().map(T::cast_from).collect(),
    )?;
    Ok(tape.custom(
        &[x, y],
        out,
        Box::new(SsimMapOp {
            params: params.clone(),
        }),
    ))
}

/// Training loss: mean squared error plus mean `(1 - SSIM)`, equally weighted.
pub fn loss_total<T: Real>(tape: &mut Tape<T>, pred: Var, gt: Var) -> Result<Var> {
    same_shape(tape.shape(pred), tape.shape(gt), "loss_total")?;
    let diff = tape.sub(pred, gt)?;
    let sq = tape.mul(diff, diff)?;
    let l2 = tape.mean(sq);
    let map = ssim_map(tape, pred, gt, &SsimParams::default())?;
    // 1 - s per element keeps small dissimilarities exact before averaging
    let dissim_map = tape.affine(map, -T::one(), T::one());
    let dissim = tape.mean(dissim_map);
    tape.add(l2, dissim)
}
