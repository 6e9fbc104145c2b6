use super::params::LstmDirection;
use crate::scalar::Scalar;

#[inline]
pub fn sigmoid<T: Scalar>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

/// `acc += a * x`
#[inline]
pub(crate) fn axpy<T: Scalar>(acc: &mut [T], a: T, x: &[T]) {
    for (y, &v) in acc.iter_mut().zip(x) {
        *y += a * v;
    }
}

#[inline]
pub(crate) fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |s, (&x, &y)| s + x * y)
}

/// Writes activated gates `[i | f | g | o]` for one step into `gates` (4H).
/// Zero inputs are skipped; spike-count inputs are mostly zero.
pub(crate) fn gates_into<T: Scalar>(
    dir: &LstmDirection<T>,
    x: &[T],
    h_prev: Option<&[T]>,
    gates: &mut [T],
) {
    let four_h = gates.len();
    let hidden = four_h / 4;
    gates.copy_from_slice(&dir.bias);
    for (j, &xj) in x.iter().enumerate() {
        if xj != T::zero() {
            axpy(gates, xj, &dir.input_kernel[j * four_h..(j + 1) * four_h]);
        }
    }
    if let Some(h) = h_prev {
        for (j, &hj) in h.iter().enumerate() {
            if hj != T::zero() {
                axpy(gates, hj, &dir.recurrent_kernel[j * four_h..(j + 1) * four_h]);
            }
        }
    }
    for (k, z) in gates.iter_mut().enumerate() {
        *z = if k / hidden == 2 { z.tanh() } else { sigmoid(*z) };
    }
}

/// One LSTM step:
/// i = σ(W_i x + U_i h + b_i), f = σ(..), g = tanh(..), o = σ(..),
/// c = f ⊙ c_prev + i ⊙ g, h = o ⊙ tanh(c).
///
/// Returns `(h_t, c_t)`.
pub fn lstm_cell_step<T: Scalar>(
    x: &[T],
    h_prev: &[T],
    c_prev: &[T],
    params: &LstmDirection<T>,
) -> (Vec<T>, Vec<T>) {
    let hidden = params.hidden();
    assert_eq!(x.len(), params.input_dim(), "input width");
    assert_eq!(h_prev.len(), hidden, "hidden width");
    assert_eq!(c_prev.len(), hidden, "cell width");
    let mut gates = vec![T::zero(); 4 * hidden];
    gates_into(params, x, Some(h_prev), &mut gates);
    let mut h = vec![T::zero(); hidden];
    let mut c = vec![T::zero(); hidden];
    for k in 0..hidden {
        let (i, f, g, o) = (gates[k], gates[hidden + k], gates[2 * hidden + k], gates[3 * hidden + k]);
        c[k] = f * c_prev[k] + i * g;
        h[k] = o * c[k].tanh();
    }
    (h, c)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_weights_give_zero_state() {
        let dir = LstmDirection::<f64>::zeros(3, 2);
        let (h, c) = lstm_cell_step(&[0.3, -1.0, 2.0], &[0.0, 0.0], &[0.0, 0.0], &dir);
        assert_eq!(h, vec![0.0, 0.0]);
        assert_eq!(c, vec![0.0, 0.0]);
    }

    #[test]
    fn scalar_hand_computation() {
        let dir = LstmDirection {
            input_kernel: vec![1.0f64; 4],
            recurrent_kernel: vec![1.0; 4],
            bias: vec![0.0; 4],
        };
        let (h, c) = lstm_cell_step(&[0.0], &[0.0], &[1.0], &dir);
        // i = f = o = σ(0) = 0.5, g = tanh(0) = 0
        assert!((c[0] - 0.5).abs() < 1e-15);
        assert!((h[0] - 0.5 * 0.5f64.tanh()).abs() < 1e-15);
        assert!((h[0] - 0.23106).abs() < 1e-5);
    }

    #[test]
    fn hidden_state_is_bounded() {
        let dir = LstmDirection {
            input_kernel: (0..16).map(|k| k as f64 / 2.0 - 3.5).collect(),
            recurrent_kernel: (0..16).map(|k| (k as f64).sin() * 4.0).collect(),
            bias: vec![0.7; 8],
        };
        let (h, _) = lstm_cell_step(&[5.0, -2.0], &[0.9, -0.9], &[30.0, -30.0], &dir);
        assert!(h.iter().all(|v| v.abs() < 1.0));
    }
}
