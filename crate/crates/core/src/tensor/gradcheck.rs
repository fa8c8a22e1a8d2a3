use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct GradCheckOptions {
    /// Central difference half-step.
    pub eps: f64,
    pub tol: f64,
    /// Caps the number of elements checked per input; `None` checks all.
    pub max_elements: Option<usize>,
    /// Seeds the element subsample when `max_elements` applies.
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            eps: 1e-5,
            tol: 1e-4,
            max_elements: None,
            seed: 0,
        }
    }
}

/// Worst disagreement found on one input tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct InputError {
    pub input: usize,
    pub max_rel_err: f64,
    pub worst_element: usize,
    pub checked: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradReport {
    pub inputs: Vec<InputError>,
    pub tol: f64,
}

impl GradReport {
    pub fn max_rel_err(&self) -> f64 {
        self.inputs
            .iter()
            .map(|e| e.max_rel_err)
            .fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.inputs.iter().all(|e| e.max_rel_err < self.tol)
    }
}

/// `|a - f| / max(|a|, |f|, 1e-8)`.
pub(crate) fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

fn evaluate<F>(builder: &F, inputs: &[Tensor<f64>]) -> Result<(Tape<f64>, Vec<Var>, Var)>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = builder(&mut tape, &vars)?;
    Ok((tape, vars, out))
}

fn scalar_of(tape: &Tape<f64>, out: Var) -> Result<f64> {
    let v = tape.value(out);
    if v.numel() != 1 {
        return Err(Error::Argument(format!(
            "grad_check builder must return a scalar, got {}",
            v.shape()
        )));
    }
    Ok(v.data()[0])
}

/// Compares reverse-mode gradients against central finite differences.
///
/// Every input with `requires_grad` set is checked. `builder` must rebuild
/// the full computation from the leaf handles it is given and return a
/// scalar; it is invoked once for the analytic pass and twice per checked
/// element.
pub fn grad_check<F>(
    builder: F,
    inputs: &[Tensor<f64>],
    opts: &GradCheckOptions,
) -> Result<GradReport>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let (mut tape, vars, out) = evaluate(&builder, inputs)?;
    let base = scalar_of(&tape, out)?;
    if !base.is_finite() {
        return Err(Error::NonFinite(format!(
            "loss is {base} at the unperturbed point"
        )));
    }
    tape.backward(out)?;

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut report = GradReport {
        inputs: Vec::new(),
        tol: opts.tol,
    };
    for (idx, input) in inputs.iter().enumerate() {
        if !input.requires_grad {
            continue;
        }
        let analytic = tape
            .grad(vars[idx])
            .expect("backward fills every gradient-requiring leaf")
            .to_vec();
        let numel = input.numel();
        let elements: Vec<usize> = match opts.max_elements {
            Some(k) if k < numel => {
                let mut picked = sample(&mut rng, numel, k).into_vec();
                picked.sort_unstable();
                picked
            }
            _ => (0..numel).collect(),
        };
        let mut worst = InputError {
            input: idx,
            max_rel_err: 0.0,
            worst_element: elements.first().copied().unwrap_or(0),
            checked: elements.len(),
        };
        let mut probe = inputs.to_vec();
        for &e in &elements {
            let orig = input.data()[e];
            let mut at = |value: f64| -> Result<f64> {
                probe[idx].data_mut()[e] = value;
                let (tape, _, out) = evaluate(&builder, &probe)?;
                let v = scalar_of(&tape, out)?;
                if !v.is_finite() {
                    return Err(Error::NonFinite(format!(
                        "loss is {v} with input {idx} element {e} set to {value}"
                    )));
                }
                Ok(v)
            };
            let plus = at(orig + opts.eps)?;
            let minus = at(orig - opts.eps)?;
            probe[idx].data_mut()[e] = orig;
            let numeric = (plus - minus) / (2.0 * opts.eps);
            let err = relative_error(analytic[e], numeric);
            if err > worst.max_rel_err {
                worst.max_rel_err = err;
                worst.worst_element = e;
            }
        }
        report.inputs.push(worst);
    }
    Ok(report)
}
