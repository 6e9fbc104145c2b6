use rand::Rng;
use rand_distr::StandardNormal;

use super::config::ModelConfig;
use crate::scalar::Scalar;

/// Role of a parameter tensor; decides which penalty applies to it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ParamKind {
    InputKernel,
    RecurrentKernel,
    Bias,
    HeadKernel,
    HeadBias,
}

/// Weights of one LSTM direction. Gate blocks are laid out `[i | f | g | o]`
/// along the 4H axis; kernels are row-major with the 4H axis contiguous.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmDirection<T> {
    /// in_dim × 4H
    pub input_kernel: Vec<T>,
    /// H × 4H
    pub recurrent_kernel: Vec<T>,
    /// 4H
    pub bias: Vec<T>,
}

impl<T: Scalar> LstmDirection<T> {
    pub fn zeros(input_dim: usize, hidden: usize) -> Self {
        LstmDirection {
            input_kernel: vec![T::zero(); input_dim * 4 * hidden],
            recurrent_kernel: vec![T::zero(); hidden * 4 * hidden],
            bias: vec![T::zero(); 4 * hidden],
        }
    }

    pub fn hidden(&self) -> usize {
        self.bias.len() / 4
    }

    pub fn input_dim(&self) -> usize {
        self.input_kernel.len() / self.bias.len().max(1)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LstmLayer<T> {
    pub input_dim: usize,
    pub hidden: usize,
    pub forward: LstmDirection<T>,
    pub backward: LstmDirection<T>,
}

/// Dense softmax read-out over the concatenated final states.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseHead<T> {
    pub input_dim: usize,
    pub n_classes: usize,
    /// input_dim × n_classes
    pub kernel: Vec<T>,
    pub bias: Vec<T>,
}

/// Every trainable tensor of the network.
#[derive(Clone, Debug, PartialEq)]
pub struct Params<T> {
    pub layers: Vec<LstmLayer<T>>,
    pub head: DenseHead<T>,
}

/// Gradients share the parameter layout.
pub type GradientSet<T> = Params<T>;

fn glorot<T: Scalar, R: Rng + ?Sized>(rng: &mut R, fan_in: usize, fan_out: usize, n: usize) -> Vec<T> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    (0..n)
        .map(|_| T::lit(rng.random_range(-limit..limit)))
        .collect()
}

/// `rows × cols` matrix (rows ≤ cols) with orthonormal rows, via Gram–Schmidt
/// on Gaussian vectors.
fn orthogonal_rows<T: Scalar, R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> Vec<T> {
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(rows);
    while basis.len() < rows {
        let mut v: Vec<f64> = (0..cols).map(|_| rng.sample(StandardNormal)).collect();
        for _ in 0..2 {
            for b in &basis {
                let d: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
                v.iter_mut().zip(b).for_each(|(x, y)| *x -= d * y);
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-8 {
            v.iter_mut().for_each(|x| *x /= norm);
            basis.push(v);
        }
    }
    basis.into_iter().flatten().map(T::lit).collect()
}

impl<T: Scalar> Params<T> {
    pub fn zeros(cfg: &ModelConfig) -> Self {
        let h = cfg.hidden_units;
        let layers = (0..cfg.n_layers)
            .map(|l| {
                let d = cfg.layer_input_dim(l);
                LstmLayer {
                    input_dim: d,
                    hidden: h,
                    forward: LstmDirection::zeros(d, h),
                    backward: LstmDirection::zeros(d, h),
                }
            })
            .collect();
        Params {
            layers,
            head: DenseHead {
                input_dim: 2 * h,
                n_classes: cfg.n_classes,
                kernel: vec![T::zero(); 2 * h * cfg.n_classes],
                bias: vec![T::zero(); cfg.n_classes],
            },
        }
    }

    /// Glorot-uniform input kernels and head, orthogonal recurrent kernels,
    /// zero biases except a unit forget-gate bias.
    pub fn init<R: Rng + ?Sized>(cfg: &ModelConfig, rng: &mut R) -> Self {
        let mut p = Self::zeros(cfg);
        let h = cfg.hidden_units;
        for layer in &mut p.layers {
            let d = layer.input_dim;
            for dir in [&mut layer.forward, &mut layer.backward] {
                dir.input_kernel = glorot(rng, d, 4 * h, d * 4 * h);
                dir.recurrent_kernel = orthogonal_rows(rng, h, 4 * h);
                dir.bias[h..2 * h].fill(T::one());
            }
        }
        p.head.kernel = glorot(rng, 2 * h, cfg.n_classes, 2 * h * cfg.n_classes);
        p
    }

    /// Tensors in declaration order: per layer forward then backward
    /// (input kernel, recurrent kernel, bias), then head kernel and bias.
    pub fn tensors(&self) -> Vec<(ParamKind, &[T])> {
        let mut out = Vec::with_capacity(6 * self.layers.len() + 2);
        for layer in &self.layers {
            for dir in [&layer.forward, &layer.backward] {
                out.push((ParamKind::InputKernel, dir.input_kernel.as_slice()));
                out.push((ParamKind::RecurrentKernel, dir.recurrent_kernel.as_slice()));
                out.push((ParamKind::Bias, dir.bias.as_slice()));
            }
        }
        out.push((ParamKind::HeadKernel, self.head.kernel.as_slice()));
        out.push((ParamKind::HeadBias, self.head.bias.as_slice()));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(ParamKind, &mut [T])> {
        let mut out = Vec::with_capacity(6 * self.layers.len() + 2);
        for layer in &mut self.layers {
            for dir in [&mut layer.forward, &mut layer.backward] {
                out.push((ParamKind::InputKernel, dir.input_kernel.as_mut_slice()));
                out.push((ParamKind::RecurrentKernel, dir.recurrent_kernel.as_mut_slice()));
                out.push((ParamKind::Bias, dir.bias.as_mut_slice()));
            }
        }
        out.push((ParamKind::HeadKernel, self.head.kernel.as_mut_slice()));
        out.push((ParamKind::HeadBias, self.head.bias.as_mut_slice()));
        out
    }

    pub fn len(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for (_, t) in z.tensors_mut() {
            t.fill(T::zero());
        }
        z
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        let a = self.tensors();
        let b = other.tensors();
        a.len() == b.len() && a.iter().zip(&b).all(|((ka, ta), (kb, tb))| ka == kb && ta.len() == tb.len())
    }

    pub fn add_assign(&mut self, other: &Self) {
        for ((_, a), (_, b)) in self.tensors_mut().into_iter().zip(other.tensors()) {
            a.iter_mut().zip(b).for_each(|(x, &y)| *x += y);
        }
    }

    pub fn scale(&mut self, s: T) {
        for (_, t) in self.tensors_mut() {
            t.iter_mut().for_each(|x| *x *= s);
        }
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|(_, t)| t.iter().all(|x| x.is_finite()))
    }

    /// Largest absolute entry.
    pub fn max_abs(&self) -> T {
        self.tensors()
            .iter()
            .flat_map(|(_, t)| t.iter())
            .fold(T::zero(), |m, x| m.max(x.abs()))
    }

    /// Flat copy in declaration order.
    pub fn to_flat(&self) -> Vec<T> {
        self.tensors().into_iter().flat_map(|(_, t)| t.iter().copied()).collect()
    }

    pub fn cast<U: Scalar>(&self) -> Params<U> {
        let conv = |v: &Vec<T>| v.iter().map(|x| U::lit(x.as_f64())).collect();
        Params {
            layers: self
                .layers
                .iter()
                .map(|l| LstmLayer {
                    input_dim: l.input_dim,
                    hidden: l.hidden,
                    forward: LstmDirection {
                        input_kernel: conv(&l.forward.input_kernel),
                        recurrent_kernel: conv(&l.forward.recurrent_kernel),
                        bias: conv(&l.forward.bias),
                    },
                    backward: LstmDirection {
                        input_kernel: conv(&l.backward.input_kernel),
                        recurrent_kernel: conv(&l.backward.recurrent_kernel),
                        bias: conv(&l.backward.bias),
                    },
                })
                .collect(),
            head: DenseHead {
                input_dim: self.head.input_dim,
                n_classes: self.head.n_classes,
                kernel: conv(&self.head.kernel),
                bias: conv(&self.head.bias),
            },
        }
    }
}
