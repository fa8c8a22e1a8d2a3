//! Adam, the learning-rate schedule, patch sampling, and the training and
//! evaluation loops.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::blocks::{Model, Param};
use crate::data::Sample;
use crate::error::{Error, Result};
use crate::metrics::{loss_total, mrae, MetricReport};
use crate::tensor::{Real, Tape, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr_start: f64,
    pub lr_end: f64,
    pub epochs: usize,
    pub batch: usize,
    /// Side of the square training crops.
    pub patch: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
    /// Crops drawn per epoch; an epoch is `ceil(patches_per_epoch / batch)` steps.
    pub patches_per_epoch: usize,
    /// Images held out for validation; `None` keeps one in nine.
    pub val_count: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr_start: 1e-3,
            lr_end: 1e-5,
            epochs: 500,
            batch: 8,
            patch: 20,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
            patches_per_epoch: 8000,
            val_count: None,
        }
    }
}

impl TrainConfig {
    /// Checks the schedule and optimizer settings, and that crops fit the
    /// model's pooling stages.
    pub fn validate(&self, spatial_multiple: usize) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if !(self.lr_end > 0.0 && self.lr_end <= self.lr_start && self.lr_start.is_finite()) {
            return fail(format!(
                "learning rates must satisfy 0 < lr_end <= lr_start, got {} -> {}",
                self.lr_start, self.lr_end
            ));
        }
        if self.batch == 0 || self.patches_per_epoch == 0 {
            return fail("batch and patches_per_epoch must be positive".into());
        }
        if self.patch == 0 || !self.patch.is_multiple_of(spatial_multiple) {
            return fail(format!(
                "patch size {} must be a positive multiple of {spatial_multiple}",
                self.patch
            ));
        }
        if !(0.0..1.0).contains(&self.beta1)
            || !(0.0..1.0).contains(&self.beta2)
            || self.adam_eps <= 0.0
        {
            return fail("adam needs betas in [0, 1) and a positive epsilon".into());
        }
        Ok(())
    }

    pub fn steps_per_epoch(&self) -> usize {
        self.patches_per_epoch.div_ceil(self.batch)
    }

    /// Geometric decay from `lr_start` at epoch 0 to `lr_end` at `epochs`.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        lr_at(epoch, self)
    }

    /// Images reserved for validation out of `total`.
    pub fn val_images(&self, total: usize) -> usize {
        self.val_count
            .unwrap_or_else(|| (total as f64 / 9.0).round() as usize)
            .min(total)
    }
}

pub fn lr_at(epoch: usize, cfg: &TrainConfig) -> f64 {
    if epoch == 0 || cfg.epochs == 0 {
        return cfg.lr_start;
    }
    if epoch >= cfg.epochs {
        return cfg.lr_end;
    }
    cfg.lr_start * (cfg.lr_end / cfg.lr_start).powf(epoch as f64 / cfg.epochs as f64)
}

/// Adam moments and progress counters.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState<T> {
    pub step: u64,
    pub epoch: usize,
    pub lr: f64,
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
}

impl<T: Real> TrainState<T> {
    pub fn for_params(params: &[Param<T>], lr: f64) -> Self {
        let zeros = || {
            params
                .iter()
                .map(|p| vec![T::zero(); p.tensor.numel()])
                .collect()
        };
        Self {
            step: 0,
            epoch: 0,
            lr,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn new(model: &Model<T>, cfg: &TrainConfig) -> Self {
        Self::for_params(model.params(), cfg.lr_start)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamSettings {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl From<&TrainConfig> for AdamSettings {
    fn from(c: &TrainConfig) -> Self {
        Self {
            beta1: c.beta1,
            beta2: c.beta2,
            eps: c.adam_eps,
        }
    }
}

impl Default for AdamSettings {
    fn default() -> Self {
        (&TrainConfig::default()).into()
    }
}

/// Bias-corrected Adam update of every parameter, then clears gradients.
///
/// Every parameter must carry a gradient; the first one without fails the
/// call before anything is modified.
pub fn adam_update<T: Real>(
    params: &mut [Param<T>],
    state: &mut TrainState<T>,
    lr: f64,
    opts: AdamSettings,
) -> Result<()> {
    if state.m.len() != params.len() {
        return Err(Error::Contract(format!(
            "optimizer state tracks {} parameters, model has {}",
            state.m.len(),
            params.len()
        )));
    }
    if let Some(p) = params.iter().find(|p| p.tensor.grad().is_none()) {
        return Err(Error::Contract(format!(
            "parameter {} has no gradient",
            p.name
        )));
    }
    let t = state.step as i32 + 1;
    let c1 = 1.0 - opts.beta1.powi(t);
    let c2 = 1.0 - opts.beta2.powi(t);
    for ((p, m), v) in params.iter_mut().zip(&mut state.m).zip(&mut state.v) {
        let g = p.tensor.grad().expect("checked above").to_vec();
        for (((w, &g), m), v) in p
            .tensor
            .data_mut()
            .iter_mut()
            .zip(&g)
            .zip(m.iter_mut())
            .zip(v.iter_mut())
        {
            let g = g.as_f64();
            let m_new = opts.beta1 * m.as_f64() + (1.0 - opts.beta1) * g;
            let v_new = opts.beta2 * v.as_f64() + (1.0 - opts.beta2) * g * g;
            *m = T::cast_from(m_new);
            *v = T::cast_from(v_new);
            let m_hat = m_new / c1;
            let v_hat = v_new / c2;
            *w = T::cast_from(w.as_f64() - lr * m_hat / (v_hat.sqrt() + opts.eps));
        }
        p.tensor.zero_grad();
    }
    state.step += 1;
    state.lr = lr;
    Ok(())
}

pub fn adam_step<T: Real>(
    model: &mut Model<T>,
    state: &mut TrainState<T>,
    lr: f64,
    opts: AdamSettings,
) -> Result<()> {
    adam_update(model.params_mut(), state, lr, opts)
}

/// Aligned crops stacked into batches: `rgb (n, 3, p, p)`, `cube (n, bands, p, p)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchBatch {
    pub rgb: Tensor<f32>,
    pub cube: Tensor<f32>,
    /// `(image index, top, left)` of each crop.
    pub corners: Vec<(usize, usize, usize)>,
}

/// Draws `count` crops with a uniformly chosen image and top-left corner.
pub fn sample_patches_with(
    dataset: &[Sample],
    count: usize,
    patch: usize,
    rng: &mut impl Rng,
) -> Result<PatchBatch> {
    if dataset.is_empty() {
        return Err(Error::Data(
            "cannot sample patches from an empty dataset".into(),
        ));
    }
    if let Some((i, s)) = dataset
        .iter()
        .enumerate()
        .find(|(_, s)| s.height() < patch || s.width() < patch)
    {
        return Err(Error::Data(format!(
            "image {i} is {}x{}, smaller than the {patch}x{patch} patch",
            s.height(),
            s.width()
        )));
    }
    let mut rgb = Vec::with_capacity(count);
    let mut cube = Vec::with_capacity(count);
    let mut corners = Vec::with_capacity(count);
    for _ in 0..count {
        let i = rng.random_range(0..dataset.len());
        let s = &dataset[i];
        let top = rng.random_range(0..=s.height() - patch);
        let left = rng.random_range(0..=s.width() - patch);
        rgb.push(s.rgb.crop(top, left, patch, patch)?);
        cube.push(s.cube.crop(top, left, patch, patch)?);
        corners.push((i, top, left));
    }
    Ok(PatchBatch {
        rgb: Tensor::stack(&rgb)?,
        cube: Tensor::stack(&cube)?,
        corners,
    })
}

pub fn sample_patches(
    dataset: &[Sample],
    count: usize,
    patch: usize,
    seed: u64,
) -> Result<PatchBatch> {
    sample_patches_with(dataset, count, patch, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// Splits off the last `cfg.val_images` samples for validation.
pub fn split_samples<'a>(samples: &'a [Sample], cfg: &TrainConfig) -> (&'a [Sample], &'a [Sample]) {
    samples.split_at(samples.len() - cfg.val_images(samples.len()))
}

/// One line of the training log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLog {
    /// 1-based.
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub train_mrae: f64,
    pub val: Option<MetricReport>,
}

impl EpochLog {
    pub fn is_finite(&self) -> bool {
        let val_ok = self
            .val
            .is_none_or(|v| v.mrae.is_finite() && v.rmse.is_finite() && v.ssim.is_finite());
        self.lr.is_finite() && self.train_loss.is_finite() && self.train_mrae.is_finite() && val_ok
    }
}

impl fmt::Display for EpochLog {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "epoch={} lr={} train_loss={} train_mrae={}",
            self.epoch, self.lr, self.train_loss, self.train_mrae
        )?;
        match self.val {
            Some(v) => write!(
                f,
                " val_mrae={} val_rmse={} val_ssim={}",
                v.mrae, v.rmse, v.ssim
            ),
            None => write!(f, " val_mrae=- val_rmse=- val_ssim=-"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepStats {
    pub loss: f64,
    pub mrae: f64,
}

/// Owns a model and its optimizer state.
#[derive(Debug, Clone)]
pub struct Trainer<T: Real> {
    pub model: Model<T>,
    pub state: TrainState<T>,
    pub adam: AdamSettings,
}

impl<T: Real> Trainer<T> {
    pub fn new(model: Model<T>, cfg: &TrainConfig) -> Self {
        let state = TrainState::new(&model, cfg);
        Self {
            model,
            state,
            adam: cfg.into(),
        }
    }

    /// Forward, loss, backward and one Adam update on a batch.
    pub fn step(&mut self, rgb: &Tensor<T>, cube: &Tensor<T>, lr: f64) -> Result<StepStats> {
        let mut tape = Tape::new();
        let x = tape.constant(rgb.clone());
        let y = tape.constant(cube.clone());
        let fwd = self.model.forward(&mut tape, x)?;
        let loss = loss_total(&mut tape, fwd.output, y)?;
        let loss_value = tape.value(loss).data()[0].as_f64();
        if !loss_value.is_finite() {
            return Err(Error::NonFinite(format!(
                "loss is {loss_value} at epoch {} step {}",
                self.state.epoch + 1,
                self.state.step + 1
            )));
        }
        let batch_mrae = mrae(tape.value(fwd.output), cube)?;
        tape.backward(loss)?;
        self.model.accumulate_grads(&tape, &fwd.params)?;
        adam_step(&mut self.model, &mut self.state, lr, self.adam)?;
        Ok(StepStats {
            loss: loss_value,
            mrae: batch_mrae,
        })
    }
}

/// Full-image metrics of `predict` over `samples`, with predictions clamped
/// to `[0, 1]`, averaged per image.
pub fn evaluate_with(
    samples: &[Sample],
    mut predict: impl FnMut(&Tensor<f32>) -> Result<Tensor<f32>>,
) -> Result<MetricReport> {
    let reports = samples
        .iter()
        .map(|s| {
            let pred = predict(&s.rgb)?.map(|v| v.clamp(0.0, 1.0));
            MetricReport::compute(&pred, &s.cube)
        })
        .collect::<Result<Vec<_>>>()?;
    MetricReport::mean(&reports).ok_or_else(|| Error::Data("cannot evaluate an empty split".into()))
}

pub fn evaluate<T: Real>(model: &Model<T>, samples: &[Sample]) -> Result<MetricReport> {
    evaluate_with(samples, |rgb| Ok(model.predict(&rgb.cast())?.cast()))
}

/// Trains for `cfg.epochs`, calling `on_epoch` after each one.
///
/// Every epoch draws a fresh set of crops from its own seeded stream and
/// uses `lr_at(epoch)` for all of its steps. Validation runs on full images
/// when `val` is non-empty.
pub fn train_with<T: Real>(
    model: Model<T>,
    train_set: &[Sample],
    val: &[Sample],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<(Model<T>, Vec<EpochLog>)> {
    cfg.validate(model.config().spatial_multiple())?;
    let mut trainer = Trainer::new(model, cfg);
    let mut log = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let lr = cfg.lr_at(epoch);
        trainer.state.epoch = epoch;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(epoch as u64);
        let (mut loss_sum, mut mrae_sum, mut weight) = (0.0, 0.0, 0.0);
        let mut remaining = cfg.patches_per_epoch;
        while remaining > 0 {
            let n = remaining.min(cfg.batch);
            remaining -= n;
            let batch = sample_patches_with(train_set, n, cfg.patch, &mut rng)?;
            let stats = trainer.step(&batch.rgb.cast(), &batch.cube.cast(), lr)?;
            loss_sum += stats.loss * n as f64;
            mrae_sum += stats.mrae * n as f64;
            weight += n as f64;
        }
        let val = if val.is_empty() {
            None
        } else {
            Some(evaluate(&trainer.model, val)?)
        };
        let entry = EpochLog {
            epoch: epoch + 1,
            lr,
            train_loss: loss_sum / weight,
            train_mrae: mrae_sum / weight,
            val,
        };
        on_epoch(&entry);
        log.push(entry);
    }
    Ok((trainer.model, log))
}

pub fn train<T: Real>(
    model: Model<T>,
    train_set: &[Sample],
    val: &[Sample],
    cfg: &TrainConfig,
) -> Result<(Model<T>, Vec<EpochLog>)> {
    train_with(model, train_set, val, cfg, |_| {})
}
