use crate::error::{Error, Result};
use crate::nn::{GradientSet, Params};
use crate::scalar::Scalar;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-7;

/// First and second moment estimates for every parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState<T> {
    pub m: Params<T>,
    pub v: Params<T>,
    pub step: u64,
    pub current_lr: f64,
}

impl<T: Scalar> OptimizerState<T> {
    pub fn new(params: &Params<T>, lr: f64) -> Self {
        OptimizerState {
            m: params.zeros_like(),
            v: params.zeros_like(),
            step: 0,
            current_lr: lr,
        }
    }
}

/// One bias-corrected adaptive-moment update. Leaves everything untouched
/// when any gradient is non-finite.
pub fn adam_step<T: Scalar>(
    params: &mut Params<T>,
    grads: &GradientSet<T>,
    state: &mut OptimizerState<T>,
    lr: f64,
) -> Result<()> {
    if !params.same_shape(grads) || !params.same_shape(&state.m) {
        return Err(Error::Dimension("optimizer tensors do not match parameters".into()));
    }
    if !grads.all_finite() {
        return Err(Error::Divergence(format!(
            "non-finite gradient at optimizer step {}",
            state.step + 1
        )));
    }
    state.step += 1;
    state.current_lr = lr;
    let t = state.step as i32;
    let c1 = T::lit(1.0 / (1.0 - BETA1.powi(t)));
    let c2 = T::lit(1.0 / (1.0 - BETA2.powi(t)));
    let (b1, b2) = (T::lit(BETA1), T::lit(BETA2));
    let (one, eps, lr) = (T::one(), T::lit(EPSILON), T::lit(lr));
    let tensors = params
        .tensors_mut()
        .into_iter()
        .zip(grads.tensors())
        .zip(state.m.tensors_mut().into_iter().zip(state.v.tensors_mut()));
    for (((_, w), (_, g)), ((_, m), (_, v))) in tensors {
        for k in 0..w.len() {
            m[k] = b1 * m[k] + (one - b1) * g[k];
            v[k] = b2 * v[k] + (one - b2) * g[k] * g[k];
            let m_hat = m[k] * c1;
            let v_hat = v[k] * c2;
            w[k] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}
