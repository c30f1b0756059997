//! Overcomplete MLP autoencoder: the encoder is the lifting map, the decoder
//! the reconstruction map.
//!
//! Architecture contract (asserted at construction):
//! - encoder: hidden tanh layer, then a tanh output layer of width N > n;
//! - decoder: hidden tanh layer, then a bias-free linear output layer.
//! The bias-free linear tail is what lets the Lipschitz certificate treat the
//! decoder as one slope-restricted layer between two weight matrices.
//!
//! Normalization applies to the encoder input only; the decoder emits
//! physical state units directly.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{Normalizer, SplitDataset};
use crate::dynamics::StateVector;
use crate::error::{Error, Result};

/// Lifted state z in R^N.
pub type LiftedVector = DVector<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    #[serde(rename = "tanh")]
    Tanh,
    #[serde(rename = "linear")]
    Linear,
}

impl Activation {
    #[inline]
    pub fn apply(self, v: f64) -> f64 {
        match self {
            Activation::Tanh => v.tanh(),
            Activation::Linear => v,
        }
    }

    /// Derivative expressed through the layer output y = act(s).
    #[inline]
    pub fn deriv_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Linear => 1.0,
        }
    }
}

/// One dense layer: y = act(W x + b).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerParams {
    #[serde(with = "crate::edmd::rowmajor")]
    pub w: DMatrix<f64>,
    pub b: Vec<f64>,
    pub activation: Activation,
}

impl LayerParams {
    pub fn new(w: DMatrix<f64>, b: Vec<f64>, activation: Activation) -> Result<Self> {
        if b.len() != w.nrows() {
            return Err(Error::Dimension {
                context: "layer bias length".into(),
                expected: w.nrows(),
                got: b.len(),
            });
        }
        if w.iter().any(|v| !v.is_finite()) || b.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: "layer parameters".into(),
            });
        }
        Ok(LayerParams { w, b, activation })
    }

    pub fn in_dim(&self) -> usize {
        self.w.ncols()
    }

    pub fn out_dim(&self) -> usize {
        self.w.nrows()
    }

    /// Applies the layer to every column of `input`.
    pub fn forward_columns(&self, input: &DMatrix<f64>) -> DMatrix<f64> {
        let mut s = &self.w * input;
        for mut col in s.column_iter_mut() {
            for (i, v) in col.iter_mut().enumerate() {
                *v = self.activation.apply(*v + self.b[i]);
            }
        }
        s
    }
}

/// Trained (or initialized) autoencoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AEModel {
    pub normalizer: Normalizer,
    pub encoder: Vec<LayerParams>,
    pub decoder: Vec<LayerParams>,
    pub lifted_dim: usize,
}

impl AEModel {
    /// Validates the architecture invariants and wraps the layers.
    pub fn new(
        normalizer: Normalizer,
        encoder: Vec<LayerParams>,
        decoder: Vec<LayerParams>,
    ) -> Result<Self> {
        if encoder.is_empty() || decoder.is_empty() {
            return Err(Error::InvalidConfig(
                "encoder and decoder need at least one layer".into(),
            ));
        }
        let n = normalizer.dim();
        if encoder[0].in_dim() != n {
            return Err(Error::Dimension {
                context: "encoder input width".into(),
                expected: n,
                got: encoder[0].in_dim(),
            });
        }
        for pair in encoder.windows(2) {
            if pair[1].in_dim() != pair[0].out_dim() {
                return Err(Error::Dimension {
                    context: "encoder layer chain".into(),
                    expected: pair[0].out_dim(),
                    got: pair[1].in_dim(),
                });
            }
        }
        for pair in decoder.windows(2) {
            if pair[1].in_dim() != pair[0].out_dim() {
                return Err(Error::Dimension {
                    context: "decoder layer chain".into(),
                    expected: pair[0].out_dim(),
                    got: pair[1].in_dim(),
                });
            }
        }
        let lifted_dim = encoder.last().unwrap().out_dim();
        if decoder[0].in_dim() != lifted_dim {
            return Err(Error::Dimension {
                context: "decoder input width".into(),
                expected: lifted_dim,
                got: decoder[0].in_dim(),
            });
        }
        if decoder.last().unwrap().out_dim() != n {
            return Err(Error::Dimension {
                context: "decoder output width".into(),
                expected: n,
                got: decoder.last().unwrap().out_dim(),
            });
        }
        if lifted_dim <= n {
            return Err(Error::InvalidConfig(format!(
                "lifted dimension {lifted_dim} must exceed the state dimension {n} (overcomplete)"
            )));
        }
        let last = decoder.last().unwrap();
        if last.activation != Activation::Linear || last.b.iter().any(|v| *v != 0.0) {
            return Err(Error::InvalidConfig(
                "decoder output layer must be linear with zero bias".into(),
            ));
        }
        for (which, layers) in [("encoder", &encoder), ("decoder", &decoder)] {
            for (i, l) in layers.iter().enumerate() {
                let is_final_decoder = which == "decoder" && i + 1 == layers.len();
                if !is_final_decoder && l.activation != Activation::Tanh {
                    return Err(Error::InvalidConfig(format!(
                        "{which} layer {i} must use tanh"
                    )));
                }
            }
        }
        Ok(AEModel {
            normalizer,
            encoder,
            decoder,
            lifted_dim,
        })
    }

    /// Seeded uniform init in [-1/sqrt(fan_in), 1/sqrt(fan_in)], zero biases.
    pub fn init(
        state_dim: usize,
        hidden: usize,
        lifted_dim: usize,
        normalizer: Normalizer,
        seed: u64,
    ) -> Result<Self> {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let mut layer = |rows: usize, cols: usize, act: Activation| -> LayerParams {
            let bound = 1.0 / (cols as f64).sqrt();
            let w = DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-bound..=bound));
            LayerParams {
                w,
                b: vec![0.0; rows],
                activation: act,
            }
        };
        let encoder = vec![
            layer(hidden, state_dim, Activation::Tanh),
            layer(lifted_dim, hidden, Activation::Tanh),
        ];
        let decoder = vec![
            layer(hidden, lifted_dim, Activation::Tanh),
            layer(state_dim, hidden, Activation::Linear),
        ];
        AEModel::new(normalizer, encoder, decoder)
    }

    pub fn state_dim(&self) -> usize {
        self.normalizer.dim()
    }

    pub fn hidden_dim(&self) -> usize {
        self.encoder[0].out_dim()
    }

    /// Lift: z = phi_e(normalize(x)).
    pub fn encode(&self, x: &StateVector) -> LiftedVector {
        let mut a = self.normalizer.normalize(x.as_vector());
        for l in &self.encoder {
            a = DMatrix::from_column_slice(a.len(), 1, a.as_slice())
                .pipe_forward(l)
                .column(0)
                .clone_owned();
        }
        a
    }

    /// Reconstruct: x = phi_d(z), in physical state units.
    pub fn decode(&self, z: &LiftedVector) -> StateVector {
        let mut a = z.clone();
        for l in &self.decoder {
            a = DMatrix::from_column_slice(a.len(), 1, a.as_slice())
                .pipe_forward(l)
                .column(0)
                .clone_owned();
        }
        StateVector::from_dvector_unchecked(a)
    }

    /// Encodes every column of a state matrix (deterministic chunked map).
    pub fn encode_columns(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let normalized = self.normalizer.normalize_columns(x);
        let chunks: Vec<DMatrix<f64>> = par_column_chunks(&normalized)
            .map(|block| {
                let mut a = block;
                for l in &self.encoder {
                    a = l.forward_columns(&a);
                }
                a
            })
            .collect();
        hcat(&chunks, self.lifted_dim, x.ncols())
    }

    /// Decodes every column of a lifted matrix.
    pub fn decode_columns(&self, z: &DMatrix<f64>) -> DMatrix<f64> {
        let chunks: Vec<DMatrix<f64>> = par_column_chunks(z)
            .map(|block| {
                let mut a = block;
                for l in &self.decoder {
                    a = l.forward_columns(&a);
                }
                a
            })
            .collect();
        hcat(&chunks, self.state_dim(), z.ncols())
    }

    /// All layers in forward order (encoder then decoder).
    pub fn layers(&self) -> impl Iterator<Item = &LayerParams> {
        self.encoder.iter().chain(self.decoder.iter())
    }

    fn layers_mut(&mut self) -> Vec<&mut LayerParams> {
        self.encoder
            .iter_mut()
            .chain(self.decoder.iter_mut())
            .collect()
    }

    /// Sum of squared weight entries over every layer (biases excluded).
    pub fn weight_sum_squares(&self) -> f64 {
        self.layers().map(|l| l.w.iter().map(|v| v * v).sum::<f64>()).sum()
    }
}

trait PipeForward {
    fn pipe_forward(self, l: &LayerParams) -> DMatrix<f64>;
}

impl PipeForward for DMatrix<f64> {
    fn pipe_forward(self, l: &LayerParams) -> DMatrix<f64> {
        l.forward_columns(&self)
    }
}

const PAR_CHUNK: usize = 512;

fn par_column_chunks(m: &DMatrix<f64>) -> impl ParallelIterator<Item = DMatrix<f64>> + '_ {
    let starts: Vec<usize> = (0..m.ncols().max(1)).step_by(PAR_CHUNK).collect();
    starts.into_par_iter().map(move |s| {
        if m.ncols() == 0 {
            m.clone()
        } else {
            m.columns(s, PAR_CHUNK.min(m.ncols() - s)).clone_owned()
        }
    })
}

fn hcat(chunks: &[DMatrix<f64>], rows: usize, total_cols: usize) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(rows, total_cols);
    let mut at = 0;
    for c in chunks {
        if c.ncols() == 0 {
            continue;
        }
        out.columns_mut(at, c.ncols()).copy_from(c);
        at += c.ncols();
    }
    out
}

/// Training configuration. `rho` is the L2 penalty weight on all weight
/// matrices; the learning-rate schedule is a fixed multiplicative decay.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub rho: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub lr_decay: f64,
    pub lr_decay_every: usize,
    /// Train bias vectors (the decoder's final bias is always pinned at
    /// zero). Disabling keeps every feature an odd function of the encoder
    /// input, which is occasionally useful on symmetric systems but cannot
    /// express the normalizer's offset in the reconstruction.
    pub train_biases: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            rho: 1e-6,
            epochs: 60,
            batch_size: 1024,
            learning_rate: 2e-3,
            lr_decay: 0.5,
            lr_decay_every: 20,
            train_biases: true,
            seed: 7,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rho < 0.0 || !self.rho.is_finite() {
            return Err(Error::InvalidConfig("rho must be >= 0".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0) || !(self.lr_decay > 0.0) {
            return Err(Error::InvalidConfig(
                "learning_rate and lr_decay must be > 0".into(),
            ));
        }
        if self.lr_decay_every == 0 {
            return Err(Error::InvalidConfig("lr_decay_every must be >= 1".into()));
        }
        Ok(())
    }
}

/// Loss on a batch of states (columns of `x`): mean squared reconstruction
/// error plus `rho` times the squared weight norm. Biases are not penalized.
pub fn ae_loss(model: &AEModel, x: &DMatrix<f64>, rho: f64) -> f64 {
    let d = x.ncols();
    assert!(d > 0, "loss needs a nonempty batch");
    let z = model.encode_columns(x);
    let xhat = model.decode_columns(&z);
    let mse = (x - xhat).norm_squared() / d as f64;
    mse + rho * model.weight_sum_squares()
}

/// Per-layer gradients, in forward layer order.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub d_w: Vec<DMatrix<f64>>,
    pub d_b: Vec<DVector<f64>>,
}

impl Gradients {
    fn zeros_like(model: &AEModel) -> Self {
        let d_w = model.layers().map(|l| DMatrix::zeros(l.out_dim(), l.in_dim())).collect();
        let d_b = model.layers().map(|l| DVector::zeros(l.out_dim())).collect();
        Gradients { d_w, d_b }
    }

    fn add(&mut self, other: &Gradients) {
        for (a, b) in self.d_w.iter_mut().zip(&other.d_w) {
            *a += b;
        }
        for (a, b) in self.d_b.iter_mut().zip(&other.d_b) {
            *a += b;
        }
    }
}

/// Forward + backward over one batch. Returns the loss and the gradient of
/// the loss with respect to every weight and bias.
///
/// The data term is accumulated over fixed-size column chunks in a fixed
/// order, so the result does not depend on thread scheduling.
pub fn loss_and_grad(model: &AEModel, x: &DMatrix<f64>, rho: f64) -> (f64, Gradients) {
    let d = x.ncols();
    assert!(d > 0, "gradient needs a nonempty batch");
    let layers: Vec<&LayerParams> = model.layers().collect();

    let partials: Vec<(f64, Gradients)> = par_column_chunks(x)
        .map(|xb| {
            let b = xb.ncols();
            // Forward, keeping each layer output.
            let mut acts: Vec<DMatrix<f64>> = Vec::with_capacity(layers.len() + 1);
            acts.push(model.normalizer.normalize_columns(&xb));
            for l in &layers {
                let prev = acts.last().unwrap();
                acts.push(l.forward_columns(prev));
            }
            let xhat = acts.last().unwrap();
            let diff = xhat - &xb;
            let sum_sq = diff.norm_squared();

            // Backward: delta holds dLoss/d(pre-activation), scaled by 2
            // from the squared error (the caller divides by D once).
            let mut grads = Gradients::zeros_like(model);
            let mut delta = diff * 2.0;
            for (idx, l) in layers.iter().enumerate().rev() {
                let y = &acts[idx + 1];
                if l.activation != Activation::Linear {
                    for (dv, yv) in delta.iter_mut().zip(y.iter()) {
                        *dv *= l.activation.deriv_from_output(*yv);
                    }
                }
                grads.d_w[idx] = &delta * acts[idx].transpose();
                let mut db = DVector::zeros(l.out_dim());
                for col in delta.column_iter() {
                    db += col;
                }
                grads.d_b[idx] = db;
                if idx > 0 {
                    delta = l.w.transpose() * delta;
                }
            }
            let _ = b;
            (sum_sq, grads)
        })
        .collect();

    let mut grads = Gradients::zeros_like(model);
    let mut sum_sq = 0.0;
    for (s, g) in &partials {
        sum_sq += s;
        grads.add(g);
    }
    let inv_d = 1.0 / d as f64;
    for g in &mut grads.d_w {
        *g *= inv_d;
    }
    for g in &mut grads.d_b {
        *g *= inv_d;
    }
    // L2 penalty on weights only.
    for (g, l) in grads.d_w.iter_mut().zip(&layers) {
        *g += 2.0 * rho * &l.w;
    }
    let loss = sum_sq * inv_d + rho * model.weight_sum_squares();
    (loss, grads)
}

/// Outcome of a training run: the best validation snapshot plus histories.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: AEModel,
    pub best_epoch: Option<usize>,
    pub best_val_mse: f64,
    pub train_loss: Vec<f64>,
    pub val_mse: Vec<f64>,
}

/// Mean squared reconstruction error over a state matrix (no penalty term).
pub fn reconstruction_mse(model: &AEModel, x: &DMatrix<f64>) -> f64 {
    if x.ncols() == 0 {
        return 0.0;
    }
    let xhat = model.decode_columns(&model.encode_columns(x));
    (x - xhat).norm_squared() / x.ncols() as f64
}

struct Adam {
    m_w: Vec<DMatrix<f64>>,
    v_w: Vec<DMatrix<f64>>,
    m_b: Vec<DVector<f64>>,
    v_b: Vec<DVector<f64>>,
    t: u64,
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

impl Adam {
    fn new(model: &AEModel) -> Self {
        Adam {
            m_w: model.layers().map(|l| DMatrix::zeros(l.out_dim(), l.in_dim())).collect(),
            v_w: model.layers().map(|l| DMatrix::zeros(l.out_dim(), l.in_dim())).collect(),
            m_b: model.layers().map(|l| DVector::zeros(l.out_dim())).collect(),
            v_b: model.layers().map(|l| DVector::zeros(l.out_dim())).collect(),
            t: 0,
        }
    }

    fn step(&mut self, model: &mut AEModel, grads: &Gradients, lr: f64, train_biases: bool) {
        self.t += 1;
        let bc1 = 1.0 - ADAM_BETA1.powi(self.t as i32);
        let bc2 = 1.0 - ADAM_BETA2.powi(self.t as i32);
        let num_layers = grads.d_w.len();
        let mut layers = model.layers_mut();
        for idx in 0..num_layers {
            // The final decoder layer keeps its bias pinned at zero.
            let update_bias = train_biases && idx + 1 < num_layers;
            let l = &mut layers[idx];
            for ((w, m), (v, g)) in l
                .w
                .iter_mut()
                .zip(self.m_w[idx].iter_mut())
                .zip(self.v_w[idx].iter_mut().zip(grads.d_w[idx].iter()))
            {
                *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
                *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
                *w -= lr * (*m / bc1) / ((*v / bc2).sqrt() + ADAM_EPS);
            }
            if update_bias {
                for ((b, m), (v, g)) in l
                    .b
                    .iter_mut()
                    .zip(self.m_b[idx].iter_mut())
                    .zip(self.v_b[idx].iter_mut().zip(grads.d_b[idx].iter()))
                {
                    *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
                    *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
                    *b -= lr * (*m / bc1) / ((*v / bc2).sqrt() + ADAM_EPS);
                }
            }
        }
    }
}

/// Trains with Adam on shuffled mini-batches and returns the snapshot with
/// the lowest validation reconstruction MSE seen (the initial model counts).
pub fn train(model: &AEModel, data: &SplitDataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if data.train.num_samples() == 0 {
        return Err(Error::EmptyDataset);
    }
    if data.train.state_dim() != model.state_dim() {
        return Err(Error::Dimension {
            context: "training data state width".into(),
            expected: model.state_dim(),
            got: data.train.state_dim(),
        });
    }

    let x_train = data.train.x();
    let x_val = data.validation.x();
    let use_val = x_val.ncols() > 0;
    let m = x_train.ncols();

    let mut current = model.clone();
    let mut best = model.clone();
    let mut best_val = if use_val {
        reconstruction_mse(&current, x_val)
    } else {
        reconstruction_mse(&current, x_train)
    };
    let mut best_epoch = None;
    let mut train_hist = Vec::with_capacity(cfg.epochs);
    let mut val_hist = Vec::with_capacity(cfg.epochs);

    let mut adam = Adam::new(&current);
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..m).collect();

    for epoch in 0..cfg.epochs {
        // Fisher-Yates with a pinned drawing order.
        for i in (1..m).rev() {
            let j = rng.random_range(0..=i);
            order.swap(i, j);
        }
        let lr = cfg.learning_rate * cfg.lr_decay.powi((epoch / cfg.lr_decay_every) as i32);

        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for batch_idx in order.chunks(cfg.batch_size) {
            let mut xb = DMatrix::zeros(current.state_dim(), batch_idx.len());
            for (j, &k) in batch_idx.iter().enumerate() {
                xb.column_mut(j).copy_from(&x_train.column(k));
            }
            let (loss, grads) = loss_and_grad(&current, &xb, cfg.rho);
            if !loss.is_finite() {
                return Err(Error::TrainingDiverged { epoch });
            }
            adam.step(&mut current, &grads, lr, cfg.train_biases);
            epoch_loss += loss;
            batches += 1;
        }
        train_hist.push(epoch_loss / batches as f64);

        let val = if use_val {
            reconstruction_mse(&current, x_val)
        } else {
            reconstruction_mse(&current, x_train)
        };
        if !val.is_finite() {
            return Err(Error::TrainingDiverged { epoch });
        }
        val_hist.push(val);
        if val < best_val {
            best_val = val;
            best = current.clone();
            best_epoch = Some(epoch);
        }
    }

    Ok(TrainOutcome {
        model: best,
        best_epoch,
        best_val_mse: best_val,
        train_loss: train_hist,
        val_mse: val_hist,
    })
}

/// Compares the analytic gradient to central finite differences (h = 1e-5)
/// on a seeded random subset of the trainable parameters. Returns the
/// maximum relative error.
pub fn gradient_check(
    model: &AEModel,
    x: &DMatrix<f64>,
    rho: f64,
    num_params: usize,
    seed: u64,
) -> f64 {
    let h = 1e-5;
    let (_, grads) = loss_and_grad(model, x, rho);

    // Trainable coordinates: every weight, every bias except the pinned
    // final decoder bias.
    let num_layers = grads.d_w.len();
    let mut coords: Vec<(usize, bool, usize)> = Vec::new();
    for (idx, l) in model.layers().enumerate() {
        for e in 0..l.w.len() {
            coords.push((idx, true, e));
        }
        if idx + 1 < num_layers {
            for e in 0..l.b.len() {
                coords.push((idx, false, e));
            }
        }
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut max_rel: f64 = 0.0;
    for _ in 0..num_params.min(coords.len()) {
        let (idx, is_w, e) = coords[rng.random_range(0..coords.len())];
        let mut perturbed = model.clone();
        let read = |m: &AEModel| -> f64 {
            let l = m.layers().nth(idx).unwrap();
            if is_w {
                l.w[e]
            } else {
                l.b[e]
            }
        };
        let write = |m: &mut AEModel, v: f64| {
            let mut layers = m.layers_mut();
            if is_w {
                layers[idx].w[e] = v;
            } else {
                layers[idx].b[e] = v;
            }
        };
        let orig = read(model);
        write(&mut perturbed, orig + h);
        let plus = ae_loss(&perturbed, x, rho);
        write(&mut perturbed, orig - h);
        let minus = ae_loss(&perturbed, x, rho);
        let numeric = (plus - minus) / (2.0 * h);
        let analytic = if is_w {
            grads.d_w[idx][e]
        } else {
            grads.d_b[idx][e]
        };
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-3);
        max_rel = max_rel.max(rel);
    }
    max_rel
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate_dataset, split};
    use crate::dynamics::SimConfig;
    use approx::assert_relative_eq;

    fn ident_normalizer(dim: usize) -> Normalizer {
        Normalizer::identity(dim)
    }

    fn small_model(seed: u64) -> AEModel {
        AEModel::init(2, 6, 4, ident_normalizer(2), seed).unwrap()
    }

    fn zero_model() -> AEModel {
        let mut m = small_model(0);
        for l in m.encoder.iter_mut().chain(m.decoder.iter_mut()) {
            l.w.fill(0.0);
            for b in &mut l.b {
                *b = 0.0;
            }
        }
        m
    }

    #[test]
    fn zero_weight_encoder_maps_to_zero() {
        let m = zero_model();
        let z = m.encode(&StateVector::from_slice(&[0.3, -0.8]).unwrap());
        assert!(z.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn layer_with_padded_identity_applies_tanh_componentwise() {
        let mut w = DMatrix::zeros(4, 2);
        w[(0, 0)] = 1.0;
        w[(1, 1)] = 1.0;
        let l = LayerParams::new(w, vec![0.0; 4], Activation::Tanh).unwrap();
        let out = l.forward_columns(&DMatrix::from_column_slice(2, 1, &[0.5, 0.25]));
        assert_relative_eq!(out[(0, 0)], 0.46211715726000974, epsilon = 1e-15);
        assert_relative_eq!(out[(1, 0)], (0.25f64).tanh(), epsilon = 1e-15);
        assert_eq!(out[(2, 0)], 0.0);
    }

    #[test]
    fn encode_is_deterministic() {
        let m = small_model(3);
        let x = StateVector::from_slice(&[0.2, 0.9]).unwrap();
        assert_eq!(m.encode(&x), m.encode(&x));
    }

    #[test]
    fn encoder_output_lies_in_open_unit_cube() {
        let m = small_model(5);
        for k in 0..50 {
            let x = StateVector::from_slice(&[(k as f64 * 0.37).sin(), (k as f64 * 0.71).cos()])
                .unwrap();
            let z = m.encode(&x);
            assert!(z.iter().all(|v| v.abs() < 1.0));
        }
    }

    #[test]
    fn decode_zero_lifted_state_is_zero() {
        let m = zero_model();
        let x = m.decode(&DVector::zeros(4));
        assert!(x.as_vector().iter().all(|v| *v == 0.0));

        // Zero final weight matrix collapses everything to zero.
        let mut m = small_model(1);
        m.decoder[1].w.fill(0.0);
        let x = m.decode(&DVector::from_vec(vec![0.5, -0.5, 0.1, 0.9]));
        assert!(x.as_vector().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn decoder_rejects_bias_or_tanh_in_final_layer() {
        let m = small_model(0);
        let mut bad = m.decoder.clone();
        bad[1].b[0] = 0.5;
        assert!(AEModel::new(m.normalizer.clone(), m.encoder.clone(), bad).is_err());
        let mut bad = m.decoder.clone();
        bad[1].activation = Activation::Tanh;
        assert!(AEModel::new(m.normalizer.clone(), m.encoder.clone(), bad).is_err());
    }

    #[test]
    fn overcompleteness_is_enforced() {
        assert!(AEModel::init(2, 6, 2, ident_normalizer(2), 0).is_err());
        assert!(AEModel::init(2, 6, 3, ident_normalizer(2), 0).is_ok());
    }

    #[test]
    fn loss_is_zero_for_perfect_reconstruction() {
        // A zero model reconstructs zero data exactly.
        let m = zero_model();
        let x = DMatrix::zeros(2, 5);
        assert_eq!(ae_loss(&m, &x, 0.0), 0.0);
    }

    #[test]
    fn loss_on_unit_vectors_with_zero_output_is_mean_squared_norm() {
        let m = zero_model();
        let x = DMatrix::from_column_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        assert_relative_eq!(ae_loss(&m, &x, 0.0), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn rho_adds_exactly_the_weight_penalty() {
        let m = small_model(9);
        let x = DMatrix::from_column_slice(2, 3, &[0.1, 0.2, -0.3, 0.4, 0.5, -0.6]);
        let rho = 0.37;
        let without = ae_loss(&m, &x, 0.0);
        let with = ae_loss(&m, &x, rho);
        assert_relative_eq!(with - without, rho * m.weight_sum_squares(), epsilon = 1e-12);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let m = small_model(13);
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        let x = DMatrix::from_fn(2, 8, |_, _| rng.random_range(-1.0..1.0));
        let max_rel = gradient_check(&m, &x, 1e-4, 60, 4);
        assert!(max_rel <= 1e-5, "max relative gradient error {max_rel}");
    }

    #[test]
    fn gradient_of_zero_model_on_zero_data_vanishes() {
        let m = zero_model();
        let x = DMatrix::zeros(2, 4);
        let (loss, grads) = loss_and_grad(&m, &x, 0.0);
        assert_eq!(loss, 0.0);
        for g in &grads.d_w {
            assert!(g.iter().all(|v| *v == 0.0));
        }
    }

    #[test]
    fn penalty_gradient_is_two_rho_w_exactly() {
        // Zero data keeps the MSE gradient at zero for a zero-bias model
        // whose final weights are zero.
        let mut m = small_model(17);
        m.decoder[1].w.fill(0.0);
        let x = DMatrix::zeros(2, 3);
        let rho = 0.21;
        let (_, grads) = loss_and_grad(&m, &x, rho);
        for (g, l) in grads.d_w.iter().zip(m.layers()) {
            let expected = 2.0 * rho * &l.w;
            assert!((g - expected).norm() <= 1e-14);
        }
    }

    fn tiny_split(seed: u64) -> SplitDataset {
        let cfg = SimConfig::new(0.01, 30).unwrap();
        let gen = generate_dataset(10, 30, &cfg, seed).unwrap();
        split(&gen.dataset, (0.7, 0.2, 0.1), seed + 1).unwrap()
    }

    #[test]
    fn zero_epochs_returns_initial_model() {
        let data = tiny_split(3);
        let m = small_model(1);
        let cfg = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        let out = train(&m, &data, &cfg).unwrap();
        assert_eq!(out.model, m);
        assert!(out.best_epoch.is_none());
    }

    #[test]
    fn training_is_deterministic_and_reduces_loss() {
        let data = tiny_split(5);
        let m = small_model(2);
        let cfg = TrainConfig {
            epochs: 8,
            batch_size: 64,
            ..TrainConfig::default()
        };
        let a = train(&m, &data, &cfg).unwrap();
        let b = train(&m, &data, &cfg).unwrap();
        assert_eq!(a.model, b.model);
        let initial = reconstruction_mse(&m, data.validation.x());
        assert!(
            a.best_val_mse < initial,
            "validation mse did not improve: {} vs {}",
            a.best_val_mse,
            initial
        );
        // Best-so-far validation curve is non-increasing by construction.
        let mut best_so_far = f64::INFINITY;
        for v in &a.val_mse {
            best_so_far = best_so_far.min(*v);
        }
        assert_relative_eq!(best_so_far, a.best_val_mse);
    }

    #[test]
    fn divergent_learning_rate_is_reported() {
        let data = tiny_split(8);
        let m = small_model(4);
        let cfg = TrainConfig {
            epochs: 40,
            learning_rate: 1e12,
            batch_size: 32,
            ..TrainConfig::default()
        };
        match train(&m, &data, &cfg) {
            Err(Error::TrainingDiverged { .. }) => {}
            Ok(out) => {
                // tanh saturation can keep the loss finite; in that case the
                // run must still have produced finite weights.
                assert!(out.model.layers().all(|l| l.w.iter().all(|v| v.is_finite())));
            }
            Err(other) => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn model_json_round_trip_is_bit_exact() {
        let m = small_model(23);
        let text = serde_json::to_string_pretty(&m).unwrap();
        let back: AEModel = serde_json::from_str(&text).unwrap();
        assert_eq!(m, back);
        assert_eq!(text, serde_json::to_string_pretty(&back).unwrap());
    }
}
