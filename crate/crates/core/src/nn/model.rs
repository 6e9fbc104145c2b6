//! Stacked bidirectional LSTM classifier: forward pass, penalised
//! cross-entropy and backpropagation through time.

use rand::Rng;
use rayon::prelude::*;

use super::cell::{axpy, dot, gates_into};
use super::config::{ModelConfig, Regularizer};
use super::params::{GradientSet, LstmDirection, ParamKind, Params};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::seed::{derive_seed, rng_from};

/// Probabilities below this are clamped before taking the log.
pub const PROB_FLOOR: f64 = 1e-12;

/// Samples per unit of parallel work. Chunk boundaries are fixed, so the
/// gradient reduction order does not depend on the thread count.
const CHUNK: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// No dropout.
    Infer,
    /// Inverted dropout with masks drawn from `seed` and the sample's batch position.
    Train { seed: u64 },
}

/// A batch of sequences stored time-major per sample: `data[(n * steps + t) * channels + c]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SequenceBatch<T> {
    pub channels: usize,
    pub steps: usize,
    pub data: Vec<T>,
}

impl<T: Scalar> SequenceBatch<T> {
    pub fn new(channels: usize, steps: usize, data: Vec<T>) -> Result<Self> {
        let per = channels * steps;
        if per == 0 || data.len() % per != 0 {
            return Err(Error::Dimension(format!(
                "batch data of length {} is not a multiple of {channels} × {steps}",
                data.len()
            )));
        }
        Ok(SequenceBatch {
            channels,
            steps,
            data,
        })
    }

    /// Builds a batch from channel-major count windows (channels × steps each).
    pub fn from_windows<'a, I>(channels: usize, steps: usize, windows: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a [u32]>,
    {
        let mut data = Vec::new();
        for w in windows {
            if w.len() != channels * steps {
                return Err(Error::Dimension(format!(
                    "window has {} counts, expected {channels} × {steps}",
                    w.len()
                )));
            }
            let base = data.len();
            data.resize(base + w.len(), T::zero());
            for c in 0..channels {
                for t in 0..steps {
                    data[base + t * channels + c] = T::from_count(w[c * steps + t]);
                }
            }
        }
        Ok(SequenceBatch {
            channels,
            steps,
            data,
        })
    }

    pub fn len(&self) -> usize {
        self.data.len() / (self.channels * self.steps)
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn sample(&self, i: usize) -> &[T] {
        let per = self.channels * self.steps;
        &self.data[i * per..(i + 1) * per]
    }

    pub fn cast<U: Scalar>(&self) -> SequenceBatch<U> {
        SequenceBatch {
            channels: self.channels,
            steps: self.steps,
            data: self.data.iter().map(|&v| U::lit(v.as_f64())).collect(),
        }
    }
}


/// Activations of one direction, indexed by time step (not processing order).
struct DirTrace<T> {
    gates: Vec<T>,
    c: Vec<T>,
    tanh_c: Vec<T>,
    h: Vec<T>,
}

struct LayerTrace<T> {
    /// Input sequence of this layer (steps × in_dim); empty for the first layer,
    /// whose input is the sample itself.
    input: Vec<T>,
    fwd: DirTrace<T>,
    bwd: DirTrace<T>,
    mask: Option<Vec<T>>,
}

struct SampleTrace<T> {
    layers: Vec<LayerTrace<T>>,
    readout: Vec<T>,
    probs: Vec<T>,
}

fn run_direction<T: Scalar>(
    dir: &LstmDirection<T>,
    input: &[T],
    in_dim: usize,
    steps: usize,
    reverse: bool,
) -> DirTrace<T> {
    let h = dir.hidden();
    let mut tr = DirTrace {
        gates: vec![T::zero(); steps * 4 * h],
        c: vec![T::zero(); steps * h],
        tanh_c: vec![T::zero(); steps * h],
        h: vec![T::zero(); steps * h],
    };
    let mut h_prev = vec![T::zero(); h];
    let mut prev: Option<usize> = None;
    for k in 0..steps {
        let t = if reverse { steps - 1 - k } else { k };
        let x = &input[t * in_dim..(t + 1) * in_dim];
        let gates = &mut tr.gates[t * 4 * h..(t + 1) * 4 * h];
        gates_into(dir, x, prev.map(|_| h_prev.as_slice()), gates);
        for j in 0..h {
            let (i, f, g, o) = (gates[j], gates[h + j], gates[2 * h + j], gates[3 * h + j]);
            let c_prev = prev.map_or(T::zero(), |p| tr.c[p * h + j]);
            let c = f * c_prev + i * g;
            let tc = c.tanh();
            tr.c[t * h + j] = c;
            tr.tanh_c[t * h + j] = tc;
            tr.h[t * h + j] = o * tc;
            h_prev[j] = o * tc;
        }
        prev = Some(t);
    }
    tr
}

/// BPTT through one direction. `dh_ext` holds the gradient arriving at each
/// h_t from above (steps × H). Accumulates parameter gradients into `grad` and,
/// when requested, input gradients into `dx` (steps × in_dim).
#[allow(clippy::too_many_arguments)]
fn backprop_direction<T: Scalar>(
    dir: &LstmDirection<T>,
    grad: &mut LstmDirection<T>,
    input: &[T],
    in_dim: usize,
    steps: usize,
    reverse: bool,
    tr: &DirTrace<T>,
    dh_ext: &[T],
    mut dx: Option<&mut [T]>,
) {
    let h = dir.hidden();
    let four_h = 4 * h;
    let mut dh_rec = vec![T::zero(); h];
    let mut dc_next = vec![T::zero(); h];
    let mut da = vec![T::zero(); four_h];
    let one = T::one();
    for k in (0..steps).rev() {
        let t = if reverse { steps - 1 - k } else { k };
        let prev = match (k, reverse) {
            (0, _) => None,
            (_, true) => Some(t + 1),
            (_, false) => Some(t - 1),
        };
        let gates = &tr.gates[t * four_h..(t + 1) * four_h];
        for j in 0..h {
            let (i, f, g, o) = (gates[j], gates[h + j], gates[2 * h + j], gates[3 * h + j]);
            let tc = tr.tanh_c[t * h + j];
            let dh = dh_ext[t * h + j] + dh_rec[j];
            let dc = dc_next[j] + dh * o * (one - tc * tc);
            let c_prev = prev.map_or(T::zero(), |p| tr.c[p * h + j]);
            dc_next[j] = dc * f;
            da[j] = dc * g * i * (one - i);
            da[h + j] = dc * c_prev * f * (one - f);
            da[2 * h + j] = dc * i * (one - g * g);
            da[3 * h + j] = dh * tc * o * (one - o);
        }
        axpy(&mut grad.bias, one, &da);
        let x = &input[t * in_dim..(t + 1) * in_dim];
        for (j, &xj) in x.iter().enumerate() {
            if xj != T::zero() {
                axpy(&mut grad.input_kernel[j * four_h..(j + 1) * four_h], xj, &da);
            }
        }
        if let Some(dx) = dx.as_deref_mut() {
            for j in 0..in_dim {
                dx[t * in_dim + j] += dot(&dir.input_kernel[j * four_h..(j + 1) * four_h], &da);
            }
        }
        match prev {
            Some(p) => {
                let h_prev = &tr.h[p * h..(p + 1) * h];
                for j in 0..h {
                    let row = j * four_h..(j + 1) * four_h;
                    if h_prev[j] != T::zero() {
                        axpy(&mut grad.recurrent_kernel[row.clone()], h_prev[j], &da);
                    }
                    dh_rec[j] = dot(&dir.recurrent_kernel[row], &da);
                }
            }
            None => dh_rec.fill(T::zero()),
        }
    }
}

fn dropout_mask<T: Scalar, R: Rng>(rng: &mut R, width: usize, rate: f64) -> Vec<T> {
    let keep = T::lit(1.0 / (1.0 - rate));
    (0..width)
        .map(|_| if rng.random::<f64>() < rate { T::zero() } else { keep })
        .collect()
}

fn softmax_in_place<T: Scalar>(z: &mut [T]) {
    let m = z.iter().fold(T::neg_infinity(), |a, &b| if b > a { b } else { a });
    let mut s = T::zero();
    for v in z.iter_mut() {
        *v = (*v - m).exp();
        s += *v;
    }
    for v in z.iter_mut() {
        *v /= s;
    }
}

fn argmax<T: Scalar>(row: &[T]) -> usize {
    let mut best = 0;
    for (k, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = k;
        }
    }
    best
}

/// Mean negative log-likelihood of the true classes, with probabilities
/// clamped at [`PROB_FLOOR`].
pub fn cross_entropy<T: Scalar>(probs: &[Vec<T>], labels: &[usize]) -> T {
    if probs.is_empty() {
        return T::zero();
    }
    let floor = T::lit(PROB_FLOOR);
    let total = probs
        .iter()
        .zip(labels)
        .fold(T::zero(), |s, (p, &y)| s - p[y].max(floor).ln());
    total / T::lit(probs.len() as f64)
}

fn regularizer_for(config: &ModelConfig, kind: ParamKind) -> Regularizer {
    match kind {
        ParamKind::InputKernel | ParamKind::HeadKernel => config.kernel_reg,
        ParamKind::RecurrentKernel => config.recurrent_reg,
        ParamKind::Bias | ParamKind::HeadBias => Regularizer::None,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BiLstmModel<T> {
    pub config: ModelConfig,
    pub params: Params<T>,
}

impl<T: Scalar> BiLstmModel<T> {
    /// Freshly initialised model.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let params = Params::init(&config, &mut rng_from(seed));
        Ok(BiLstmModel { config, params })
    }

    pub fn from_params(config: ModelConfig, params: Params<T>) -> Result<Self> {
        config.validate()?;
        if !params.same_shape(&Params::zeros(&config)) {
            return Err(Error::Dimension(
                "parameters do not match model config".into(),
            ));
        }
        Ok(BiLstmModel { config, params })
    }

    pub fn cast<U: Scalar>(&self) -> BiLstmModel<U> {
        BiLstmModel {
            config: self.config.clone(),
            params: self.params.cast(),
        }
    }

    fn check_batch(&self, batch: &SequenceBatch<T>) -> Result<()> {
        if batch.channels != self.config.input_channels || batch.steps != self.config.window_len {
            return Err(Error::Dimension(format!(
                "batch is {} channels × {} steps, model expects {} × {}",
                batch.channels, batch.steps, self.config.input_channels, self.config.window_len
            )));
        }
        Ok(())
    }

    fn masks(&self, mode: Mode, position: usize) -> Vec<Option<Vec<T>>> {
        let width = 2 * self.config.hidden_units;
        match mode {
            Mode::Train { seed } if self.config.dropout > 0.0 => {
                let mut rng = rng_from(derive_seed(seed, position as u64));
                (0..self.config.n_layers)
                    .map(|_| Some(dropout_mask(&mut rng, width, self.config.dropout)))
                    .collect()
            }
            _ => vec![None; self.config.n_layers],
        }
    }

    fn trace(&self, x: &[T], mode: Mode, position: usize) -> Result<SampleTrace<T>> {
        let steps = self.config.window_len;
        let h = self.config.hidden_units;
        let last = self.params.layers.len() - 1;
        let mut layers: Vec<LayerTrace<T>> = Vec::with_capacity(last + 1);
        let mut next_input = Vec::new();
        let mut readout = vec![T::zero(); 2 * h];
        for (l, (layer, mask)) in self
            .params
            .layers
            .iter()
            .zip(self.masks(mode, position))
            .enumerate()
        {
            let input = std::mem::take(&mut next_input);
            let src: &[T] = if l == 0 { x } else { &input };
            let fwd = run_direction(&layer.forward, src, layer.input_dim, steps, false);
            let bwd = run_direction(&layer.backward, src, layer.input_dim, steps, true);
            let scale = |k: usize, v: T| mask.as_ref().map_or(v, |m| v * m[k]);
            if l < last {
                next_input = vec![T::zero(); steps * 2 * h];
                for t in 0..steps {
                    for j in 0..h {
                        next_input[t * 2 * h + j] = scale(j, fwd.h[t * h + j]);
                        next_input[t * 2 * h + h + j] = scale(h + j, bwd.h[t * h + j]);
                    }
                }
            } else {
                for j in 0..h {
                    readout[j] = scale(j, fwd.h[(steps - 1) * h + j]);
                    readout[h + j] = scale(h + j, bwd.h[j]);
                }
            }
            layers.push(LayerTrace {
                input,
                fwd,
                bwd,
                mask,
            });
        }
        let head = &self.params.head;
        let k = head.n_classes;
        let mut probs = head.bias.clone();
        for (j, &r) in readout.iter().enumerate() {
            axpy(&mut probs, r, &head.kernel[j * k..(j + 1) * k]);
        }
        softmax_in_place(&mut probs);
        if probs.iter().any(|p| !p.is_finite()) {
            return Err(Error::Divergence("non-finite class probabilities".into()));
        }
        Ok(SampleTrace {
            layers,
            readout,
            probs,
        })
    }

    /// Class probabilities, one row per sample.
    pub fn forward(&self, batch: &SequenceBatch<T>, mode: Mode) -> Result<Vec<Vec<T>>> {
        self.check_batch(batch)?;
        (0..batch.len())
            .into_par_iter()
            .map(|i| self.trace(batch.sample(i), mode, i).map(|tr| tr.probs))
            .collect()
    }

    /// Weight penalty of the current parameters.
    pub fn penalty(&self) -> T {
        let l1 = T::lit(self.config.l1);
        let l2 = T::lit(self.config.l2);
        let mut total = T::zero();
        for (kind, t) in self.params.tensors() {
            let reg = regularizer_for(&self.config, kind);
            if reg.has_l1() {
                total += l1 * t.iter().fold(T::zero(), |s, w| s + w.abs());
            }
            if reg.has_l2() {
                total += l2 * t.iter().fold(T::zero(), |s, &w| s + w * w);
            }
        }
        total
    }

    fn add_penalty_grad(&self, grad: &mut GradientSet<T>) {
        let l1 = T::lit(self.config.l1);
        let two_l2 = T::lit(2.0 * self.config.l2);
        for ((kind, w), (_, g)) in self.params.tensors().into_iter().zip(grad.tensors_mut()) {
            let reg = regularizer_for(&self.config, kind);
            for (gi, &wi) in g.iter_mut().zip(w) {
                if reg.has_l1() && wi != T::zero() {
                    *gi += l1 * wi.signum();
                }
                if reg.has_l2() {
                    *gi += two_l2 * wi;
                }
            }
        }
    }

    /// Mean cross-entropy plus weight penalty.
    pub fn loss(&self, batch: &SequenceBatch<T>, labels: &[usize], mode: Mode) -> Result<T> {
        self.check_labels(batch, labels)?;
        let probs = self.forward(batch, mode)?;
        Ok(cross_entropy(&probs, labels) + self.penalty())
    }

    fn check_labels(&self, batch: &SequenceBatch<T>, labels: &[usize]) -> Result<()> {
        self.check_batch(batch)?;
        if labels.len() != batch.len() {
            return Err(Error::Dimension(format!(
                "{} labels for {} samples",
                labels.len(),
                batch.len()
            )));
        }
        if let Some(&y) = labels.iter().find(|&&y| y >= self.config.n_classes) {
            return Err(Error::Dimension(format!(
                "label {y} out of range for {} classes",
                self.config.n_classes
            )));
        }
        Ok(())
    }

    /// Loss and its exact gradient with respect to every parameter, using
    /// the same dropout masks as `forward` with the same mode.
    pub fn backward(
        &self,
        batch: &SequenceBatch<T>,
        labels: &[usize],
        mode: Mode,
    ) -> Result<(T, GradientSet<T>)> {
        self.check_labels(batch, labels)?;
        let n = batch.len();
        if n == 0 {
            return Err(Error::Dimension("empty batch".into()));
        }
        let inv_n = T::lit(1.0 / n as f64);
        let chunks: Vec<Result<(T, GradientSet<T>)>> = (0..n.div_ceil(CHUNK))
            .into_par_iter()
            .map(|c| {
                let mut grad = self.params.zeros_like();
                let mut nll = T::zero();
                for i in c * CHUNK..((c + 1) * CHUNK).min(n) {
                    nll += self.sample_backward(batch.sample(i), labels[i], mode, i, inv_n, &mut grad)?;
                }
                Ok((nll, grad))
            })
            .collect();
        let mut grad = self.params.zeros_like();
        let mut nll = T::zero();
        for chunk in chunks {
            let (l, g) = chunk?;
            nll += l;
            grad.add_assign(&g);
        }
        self.add_penalty_grad(&mut grad);
        Ok((nll * inv_n + self.penalty(), grad))
    }

    /// Adds this sample's share of the gradient into `grad`; returns its NLL.
    fn sample_backward(
        &self,
        x: &[T],
        label: usize,
        mode: Mode,
        position: usize,
        inv_n: T,
        grad: &mut GradientSet<T>,
    ) -> Result<T> {
        let tr = self.trace(x, mode, position)?;
        let steps = self.config.window_len;
        let h = self.config.hidden_units;
        let head = &self.params.head;
        let k = head.n_classes;

        let mut dz = tr.probs.clone();
        dz[label] -= T::one();
        dz.iter_mut().for_each(|v| *v *= inv_n);
        axpy(&mut grad.head.bias, T::one(), &dz);
        let mut d_readout = vec![T::zero(); 2 * h];
        for (j, &r) in tr.readout.iter().enumerate() {
            let row = j * k..(j + 1) * k;
            axpy(&mut grad.head.kernel[row.clone()], r, &dz);
            d_readout[j] = dot(&head.kernel[row], &dz);
        }

        // gradient w.r.t. the (pre-mask) output sequence of the current layer, steps × 2H
        let mut d_out = vec![T::zero(); steps * 2 * h];
        for j in 0..h {
            d_out[(steps - 1) * 2 * h + j] = d_readout[j];
            d_out[h + j] = d_readout[h + j];
        }
        for l in (0..tr.layers.len()).rev() {
            let lt = &tr.layers[l];
            if let Some(m) = &lt.mask {
                for t in 0..steps {
                    for (d, &mk) in d_out[t * 2 * h..(t + 1) * 2 * h].iter_mut().zip(m) {
                        *d *= mk;
                    }
                }
            }
            let mut dh_f = vec![T::zero(); steps * h];
            let mut dh_b = vec![T::zero(); steps * h];
            for t in 0..steps {
                dh_f[t * h..(t + 1) * h].copy_from_slice(&d_out[t * 2 * h..t * 2 * h + h]);
                dh_b[t * h..(t + 1) * h].copy_from_slice(&d_out[t * 2 * h + h..(t + 1) * 2 * h]);
            }
            let layer = &self.params.layers[l];
            let input: &[T] = if l == 0 { x } else { &lt.input };
            let mut dx = if l > 0 {
                Some(vec![T::zero(); steps * layer.input_dim])
            } else {
                None
            };
            let g = &mut grad.layers[l];
            backprop_direction(
                &layer.forward,
                &mut g.forward,
                input,
                layer.input_dim,
                steps,
                false,
                &lt.fwd,
                &dh_f,
                dx.as_deref_mut(),
            );
            backprop_direction(
                &layer.backward,
                &mut g.backward,
                input,
                layer.input_dim,
                steps,
                true,
                &lt.bwd,
                &dh_b,
                dx.as_deref_mut(),
            );
            if let Some(dx) = dx {
                d_out = dx;
            }
        }
        Ok(-tr.probs[label].max(T::lit(PROB_FLOOR)).ln())
    }

    /// Inference-mode class probabilities for channel-major count windows.
    pub fn predict_proba<'a, I>(&self, windows: I) -> Result<Vec<Vec<T>>>
    where
        I: IntoIterator<Item = &'a [u32]>,
    {
        let batch =
            SequenceBatch::from_windows(self.config.input_channels, self.config.window_len, windows)?;
        self.forward(&batch, Mode::Infer)
    }

    /// Inference-mode arg-max class for each window.
    pub fn predict<'a, I>(&self, windows: I) -> Result<Vec<usize>>
    where
        I: IntoIterator<Item = &'a [u32]>,
    {
        Ok(self.predict_proba(windows)?.iter().map(|r| argmax(r)).collect())
    }
}
