use super::model::{BiLstmModel, Mode, SequenceBatch};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Floor on the denominator of the relative error.
const REL_FLOOR: f64 = 1e-8;

/// Largest relative error between backpropagated gradients and central
/// finite differences with step `eps`, over every parameter.
///
/// `mode` must be deterministic for repeated calls (infer, or train with a
/// fixed seed, which freezes the dropout masks).
pub fn gradient_check(
    model: &BiLstmModel<f64>,
    batch: &SequenceBatch<f64>,
    labels: &[usize],
    eps: f64,
    mode: Mode,
) -> Result<f64> {
    gradient_check_in::<f64>(model, batch, labels, eps, mode)
}

/// As [`gradient_check`], but the perturbed losses are evaluated in `O`.
///
/// In f64 the difference quotient carries roughly `ulp(loss) / eps` of
/// roundoff, about 1e-11 at eps 1e-5, which swamps components below 1e-7.
/// A wider `O` removes that floor while the gradients stay f64.
pub fn gradient_check_in<O: Scalar>(
    model: &BiLstmModel<f64>,
    batch: &SequenceBatch<f64>,
    labels: &[usize],
    eps: f64,
    mode: Mode,
) -> Result<f64> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::Config(format!(
            "finite-difference step must be positive, got {eps}"
        )));
    }
    let (_, analytic) = model.backward(batch, labels, mode)?;
    let analytic = analytic.to_flat();
    let batch = batch.cast::<O>();
    let step = O::lit(eps);
    let mut probe = model.cast::<O>();
    let mut worst = 0.0f64;
    let mut flat = 0;
    let n_tensors = probe.params.tensors().len();
    for ti in 0..n_tensors {
        let len = probe.params.tensors()[ti].1.len();
        for k in 0..len {
            let orig = probe.params.tensors()[ti].1[k];
            probe.params.tensors_mut()[ti].1[k] = orig + step;
            let up = probe.loss(&batch, labels, mode)?;
            probe.params.tensors_mut()[ti].1[k] = orig - step;
            let down = probe.loss(&batch, labels, mode)?;
            probe.params.tensors_mut()[ti].1[k] = orig;
            let numeric = ((up - down) / (step + step)).as_f64();
            let a = analytic[flat];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(REL_FLOOR);
            worst = worst.max(rel);
            flat += 1;
        }
    }
    Ok(worst)
}
