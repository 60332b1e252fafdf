//! Sequential classifier: dense + ReLU + dropout hidden blocks, a two-way
//! softmax head trained with sparse categorical cross-entropy, and Adam.
//! Forward and backward passes are written out by hand.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{Label, Scaler};

/// Version of the JSON model document.
pub const MODEL_SCHEMA_VERSION: u32 = 1;

pub const N_CLASSES: usize = 2;

#[derive(Debug, Error)]
pub enum NetError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("training needs both classes, got {real} real and {faked} faked samples")]
    SingleClass { real: usize, faked: usize },
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("model schema_version {found} is not supported (expected {expected})")]
    SchemaVersion { found: u64, expected: u32 },
    #[error("malformed model file: {0}")]
    Format(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

/// `max(0, x)`.
pub fn relu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        0.0
    }
}

/// Subgradient of ReLU, taken as 0 at the kink.
pub fn relu_grad(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        0.0
    }
}

/// Logistic function, evaluated without overflow for large `|x|`.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Max-shifted softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Sparse categorical cross-entropy of one sample: `(-ln p[label], p)`.
/// The log-probability is taken from the shifted logits, so the loss stays
/// accurate when `p[label]` is close to 1.
pub fn softmax_xent(logits: &[f64], label: usize) -> (f64, Vec<f64>) {
    let (arg, max) = logits
        .iter()
        .copied()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |a, (i, z)| if z > a.1 { (i, z) } else { a });
    // ln(sum) as ln_1p of the non-max terms keeps precision when the loss is tiny.
    let rest: f64 = logits
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != arg)
        .map(|(_, z)| (z - max).exp())
        .sum();
    let loss = (max - logits[label]) + rest.ln_1p();
    (loss, softmax(logits))
}

/// Inverted-dropout multipliers: 0 with probability `p`, else `1 / (1 - p)`.
pub fn dropout_mask<R: Rng + ?Sized>(len: usize, p: f64, rng: &mut R) -> Vec<f64> {
    if p == 0.0 {
        return vec![1.0; len];
    }
    let keep = 1.0 / (1.0 - p);
    (0..len)
        .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
        .collect()
}

/// Identity at inference; inverted dropout in training.
pub fn dropout<R: Rng + ?Sized>(x: &[f64], p: f64, mode: Mode, rng: &mut R) -> Vec<f64> {
    assert!((0.0..1.0).contains(&p), "dropout rate must be in [0, 1)");
    match mode {
        Mode::Infer => x.to_vec(),
        Mode::Train => x
            .iter()
            .zip(dropout_mask(x.len(), p, rng))
            .map(|(v, m)| v * m)
            .collect(),
    }
}

/// Fully connected layer, `weights` row-major `[outputs x inputs]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl DenseLayer {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
        }
    }

    /// He-normal weights (`std = sqrt(2 / fan_in)`), zero bias.
    pub fn he_normal<R: Rng + ?Sized>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        let normal = Normal::new(0.0, (2.0 / inputs as f64).sqrt()).unwrap();
        Self {
            inputs,
            outputs,
            weights: (0..inputs * outputs).map(|_| normal.sample(rng)).collect(),
            bias: vec![0.0; outputs],
        }
    }

    /// `out[b] = W x[b] + bias` for a row-major batch.
    fn forward(&self, x: &[f64], batch: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(batch * self.outputs);
        for row in x.chunks_exact(self.inputs).take(batch) {
            for (w, b) in self.weights.chunks_exact(self.inputs).zip(&self.bias) {
                out.push(b + w.iter().zip(row).map(|(a, c)| a * c).sum::<f64>());
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub validation_fraction: f64,
    pub seed: u64,
    pub shuffle_each_epoch: bool,
    pub hidden_layers: Vec<usize>,
    pub dropout_rate: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 140,
            batch_size: 128,
            learning_rate: 0.0003,
            validation_fraction: 0.2,
            seed: 42,
            shuffle_each_epoch: true,
            hidden_layers: vec![256, 128, 64],
            dropout_rate: 0.5,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), NetError> {
        let bad = |m: String| Err(NetError::Config(m));
        if self.epochs == 0 {
            return bad("epochs must be positive".into());
        }
        if self.batch_size == 0 {
            return bad("batch size must be positive".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning rate {} must be positive", self.learning_rate));
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return bad(format!(
                "validation fraction {} must be in (0, 1)",
                self.validation_fraction
            ));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad(format!("dropout rate {} must be in [0, 1)", self.dropout_rate));
        }
        if self.hidden_layers.contains(&0) {
            return bad("hidden layer widths must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    pub schema_version: u32,
    pub layer_dims: Vec<usize>,
    pub dropout_rate: f64,
    pub scaler: Scaler,
    pub layers: Vec<DenseLayer>,
    pub train_config: Option<TrainConfig>,
    pub seed: u64,
}

/// Intermediate values of one batched forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub batch: usize,
    /// Input to every dense layer (the last entry feeds the output layer).
    pub inputs: Vec<Vec<f64>>,
    /// Hidden pre-activations.
    pub pre_activations: Vec<Vec<f64>>,
    /// Dropout multipliers per hidden layer; empty in inference mode.
    pub masks: Vec<Vec<f64>>,
    pub logits: Vec<f64>,
    pub probs: Vec<f64>,
}

impl ForwardTrace {
    pub fn sample_probs(&self, b: usize) -> &[f64] {
        &self.probs[b * N_CLASSES..(b + 1) * N_CLASSES]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<DenseLayer>,
}

impl Gradients {
    /// Tensors in the order of [`MlpModel::params_mut`].
    pub fn tensors(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .flat_map(|l| [l.weights.as_slice(), l.bias.as_slice()])
            .collect()
    }

    pub fn max_abs(&self) -> f64 {
        self.tensors()
            .iter()
            .flat_map(|t| t.iter())
            .fold(0.0, |m, g| m.max(g.abs()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub label: Label,
    pub confidence: f64,
    /// Probability of the faked class.
    pub faked_probability: f64,
}

impl MlpModel {
    /// Model with all weights and biases zero.
    pub fn zeros(layer_dims: &[usize], dropout_rate: f64, scaler: Scaler) -> Result<Self, NetError> {
        Self::build(layer_dims, dropout_rate, scaler, 0, DenseLayer::zeros)
    }

    /// He-initialized model drawn from a ChaCha8 stream seeded with `seed`.
    pub fn new_random(
        layer_dims: &[usize],
        dropout_rate: f64,
        scaler: Scaler,
        seed: u64,
    ) -> Result<Self, NetError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::build(layer_dims, dropout_rate, scaler, seed, |i, o| {
            DenseLayer::he_normal(i, o, &mut rng)
        })
    }

    fn build(
        layer_dims: &[usize],
        dropout_rate: f64,
        scaler: Scaler,
        seed: u64,
        mut make: impl FnMut(usize, usize) -> DenseLayer,
    ) -> Result<Self, NetError> {
        if layer_dims.len() < 2 || *layer_dims.last().unwrap() != N_CLASSES {
            return Err(NetError::Shape(format!(
                "layer dims {layer_dims:?} must end in {N_CLASSES} outputs"
            )));
        }
        if scaler.dim() != layer_dims[0] {
            return Err(NetError::Shape(format!(
                "scaler has {} dims, network input has {}",
                scaler.dim(),
                layer_dims[0]
            )));
        }
        let layers = layer_dims.windows(2).map(|w| make(w[0], w[1])).collect();
        Ok(Self {
            schema_version: MODEL_SCHEMA_VERSION,
            layer_dims: layer_dims.to_vec(),
            dropout_rate,
            scaler,
            layers,
            train_config: None,
            seed,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    /// Weight and bias tensors, layer by layer.
    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [l.weights.as_mut_slice(), l.bias.as_mut_slice()])
            .collect()
    }

    pub fn param_shapes(&self) -> Vec<usize> {
        self.layers
            .iter()
            .flat_map(|l| [l.weights.len(), l.bias.len()])
            .collect()
    }

    fn check_shapes(&self) -> Result<(), NetError> {
        if self.layers.len() + 1 != self.layer_dims.len() {
            return Err(NetError::Shape("layer count does not match layer_dims".into()));
        }
        for (k, (l, w)) in self.layers.iter().zip(self.layer_dims.windows(2)).enumerate() {
            if l.inputs != w[0]
                || l.outputs != w[1]
                || l.weights.len() != w[0] * w[1]
                || l.bias.len() != w[1]
            {
                return Err(NetError::Shape(format!("layer {k} does not match dims {w:?}")));
            }
        }
        if *self.layer_dims.last().unwrap() != N_CLASSES {
            return Err(NetError::Shape("output layer must have 2 units".into()));
        }
        if self.scaler.dim() != self.input_dim() || self.scaler.std.len() != self.input_dim() {
            return Err(NetError::Shape("scaler dimension does not match input".into()));
        }
        Ok(())
    }

    /// Batched forward pass over standardized, row-major inputs. `rng` is
    /// only drawn from in training mode.
    pub fn forward_batch<R: Rng + ?Sized>(
        &self,
        x: &[f64],
        mode: Mode,
        rng: &mut R,
    ) -> Result<ForwardTrace, NetError> {
        let dim = self.input_dim();
        if !x.len().is_multiple_of(dim) {
            return Err(NetError::Shape(format!(
                "input length {} is not a multiple of {dim}",
                x.len()
            )));
        }
        let batch = x.len() / dim;
        let hidden = self.layers.len() - 1;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre_activations = Vec::with_capacity(hidden);
        let mut masks = Vec::with_capacity(hidden);

        let mut current = x.to_vec();
        for layer in &self.layers[..hidden] {
            let z = layer.forward(&current, batch);
            let mut a: Vec<f64> = z.iter().map(|&v| relu(v)).collect();
            if mode == Mode::Train {
                let mask = dropout_mask(a.len(), self.dropout_rate, rng);
                a.iter_mut().zip(&mask).for_each(|(v, m)| *v *= m);
                masks.push(mask);
            }
            inputs.push(std::mem::replace(&mut current, a));
            pre_activations.push(z);
        }
        let logits = self.layers[hidden].forward(&current, batch);
        inputs.push(current);
        let probs = logits.chunks_exact(N_CLASSES).flat_map(softmax).collect();

        Ok(ForwardTrace {
            batch,
            inputs,
            pre_activations,
            masks,
            logits,
            probs,
        })
    }

    /// Class probabilities of one standardized input.
    pub fn forward(&self, x: &[f64], mode: Mode, rng: &mut impl Rng) -> Result<Vec<f64>, NetError> {
        if x.len() != self.input_dim() {
            return Err(NetError::Shape(format!(
                "expected {} inputs, got {}",
                self.input_dim(),
                x.len()
            )));
        }
        Ok(self.forward_batch(x, mode, rng)?.probs)
    }

    /// Mean cross-entropy of a traced batch.
    pub fn batch_loss(trace: &ForwardTrace, labels: &[usize]) -> f64 {
        labels
            .iter()
            .enumerate()
            .map(|(b, &y)| softmax_xent(&trace.logits[b * N_CLASSES..(b + 1) * N_CLASSES], y).0)
            .sum::<f64>()
            / trace.batch as f64
    }

    /// Exact gradients of the mean batch loss, reusing the trace's dropout
    /// masks.
    pub fn backward(&self, trace: &ForwardTrace, labels: &[usize]) -> Result<Gradients, NetError> {
        if labels.len() != trace.batch {
            return Err(NetError::Shape(format!(
                "{} labels for a batch of {}",
                labels.len(),
                trace.batch
            )));
        }
        let batch = trace.batch;
        let scale = 1.0 / batch as f64;
        let mut delta: Vec<f64> = trace.probs.clone();
        for (b, &y) in labels.iter().enumerate() {
            delta[b * N_CLASSES + y] -= 1.0;
        }
        delta.iter_mut().for_each(|d| *d *= scale);

        let mut grads: Vec<DenseLayer> = Vec::with_capacity(self.layers.len());
        for (k, layer) in self.layers.iter().enumerate().rev() {
            let input = &trace.inputs[k];
            let mut g = DenseLayer::zeros(layer.inputs, layer.outputs);
            let mut delta_in = vec![0.0; batch * layer.inputs];
            for b in 0..batch {
                let a = &input[b * layer.inputs..(b + 1) * layer.inputs];
                let d_out = &delta[b * layer.outputs..(b + 1) * layer.outputs];
                let d_in = &mut delta_in[b * layer.inputs..(b + 1) * layer.inputs];
                for (o, &d) in d_out.iter().enumerate() {
                    if d == 0.0 {
                        continue;
                    }
                    g.bias[o] += d;
                    let gw = &mut g.weights[o * layer.inputs..(o + 1) * layer.inputs];
                    gw.iter_mut().zip(a).for_each(|(gw, av)| *gw += d * av);
                    let w = &layer.weights[o * layer.inputs..(o + 1) * layer.inputs];
                    d_in.iter_mut().zip(w).for_each(|(di, wv)| *di += d * wv);
                }
            }
            if k > 0 {
                let z = &trace.pre_activations[k - 1];
                let mask = trace.masks.get(k - 1);
                for (j, di) in delta_in.iter_mut().enumerate() {
                    *di *= relu_grad(z[j]) * mask.map_or(1.0, |m| m[j]);
                }
            }
            grads.push(g);
            delta = delta_in;
        }
        grads.reverse();
        Ok(Gradients { layers: grads })
    }

    /// Probability of each class for a raw (unscaled) feature vector.
    pub fn predict_proba(&self, raw: &[f64]) -> Result<Vec<f64>, NetError> {
        if raw.len() != self.input_dim() {
            return Err(NetError::Shape(format!(
                "expected {} features, got {}",
                self.input_dim(),
                raw.len()
            )));
        }
        let x = self.scaler.transform(raw);
        // Inference never draws from the generator.
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        self.forward(&x, Mode::Infer, &mut rng)
    }

    /// Argmax class (ties go to the lower class, i.e. real) and its
    /// probability.
    pub fn predict(&self, raw: &[f64]) -> Result<Prediction, NetError> {
        let probs = self.predict_proba(raw)?;
        Ok(prediction_from_probs(&probs))
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("model serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, NetError> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| NetError::Format(e.to_string()))?;
        let found = value
            .get("schema_version")
            .and_then(serde_json::Value::as_u64)
            .ok_or_else(|| NetError::Format("missing schema_version".into()))?;
        if found != MODEL_SCHEMA_VERSION as u64 {
            return Err(NetError::SchemaVersion {
                found,
                expected: MODEL_SCHEMA_VERSION,
            });
        }
        let model: MlpModel =
            serde_json::from_value(value).map_err(|e| NetError::Format(e.to_string()))?;
        model.check_shapes()?;
        Ok(model)
    }
}

pub fn prediction_from_probs(probs: &[f64]) -> Prediction {
    let class = if probs[1] > probs[0] { 1 } else { 0 };
    Prediction {
        label: Label::from_class_index(class).unwrap(),
        confidence: probs[class],
        faked_probability: probs[1],
    }
}

/// Adam moments for a list of parameter tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    pub fn new(shapes: &[usize]) -> Self {
        Self {
            m: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            v: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    /// One bias-corrected Adam update of every tensor in `params`.
    pub fn step(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]], lr: f64) {
        assert_eq!(params.len(), self.m.len(), "parameter count mismatch");
        assert_eq!(grads.len(), self.m.len(), "gradient count mismatch");
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for (((p, g), m), v) in params
            .iter_mut()
            .zip(grads)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            assert_eq!(p.len(), g.len(), "tensor shape mismatch");
            for i in 0..p.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                p[i] -= lr * m_hat / (v_hat.sqrt() + self.epsilon);
            }
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    pub train_accuracy: Vec<f64>,
    pub val_accuracy: Vec<f64>,
}

impl TrainHistory {
    pub fn len(&self) -> usize {
        self.train_loss.len()
    }

    pub fn is_empty(&self) -> bool {
        self.train_loss.is_empty()
    }

    /// `epoch,train_loss,val_loss,train_acc,val_acc`, epochs numbered from 1.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,val_loss,train_acc,val_acc\n");
        for e in 0..self.len() {
            out.push_str(&format!(
                "{},{:?},{:?},{:?},{:?}\n",
                e + 1,
                self.train_loss[e],
                self.val_loss[e],
                self.train_accuracy[e],
                self.val_accuracy[e]
            ));
        }
        out
    }
}

fn gather(x: &[Vec<f64>], idx: &[usize]) -> Vec<f64> {
    idx.iter().flat_map(|&i| x[i].iter().copied()).collect()
}

fn evaluate_batch(model: &MlpModel, x: &[Vec<f64>], y: &[usize], idx: &[usize]) -> (f64, f64) {
    if idx.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let labels: Vec<usize> = idx.iter().map(|&i| y[i]).collect();
    let trace = model
        .forward_batch(&gather(x, idx), Mode::Infer, &mut rng)
        .expect("shapes checked by caller");
    let correct = labels
        .iter()
        .enumerate()
        .filter(|&(b, &l)| prediction_from_probs(trace.sample_probs(b)).label.class_index() == l)
        .count();
    (
        MlpModel::batch_loss(&trace, &labels),
        correct as f64 / idx.len() as f64,
    )
}

/// Fits the embedded scaler, holds out `validation_fraction` for
/// per-epoch validation and runs `epochs` passes of mini-batch Adam.
/// Every random draw comes from one ChaCha8 stream seeded by `cfg.seed`.
pub fn train<R: AsRef<[f64]>>(
    features: &[R],
    labels: &[Label],
    cfg: &TrainConfig,
) -> Result<(MlpModel, TrainHistory), NetError> {
    cfg.validate()?;
    if features.len() != labels.len() {
        return Err(NetError::Shape(format!(
            "{} feature rows but {} labels",
            features.len(),
            labels.len()
        )));
    }
    let faked = labels.iter().filter(|&&l| l == Label::Faked).count();
    let real = labels.len() - faked;
    if real == 0 || faked == 0 {
        return Err(NetError::SingleClass { real, faked });
    }
    let dim = features[0].as_ref().len();
    if let Some(bad) = features.iter().position(|f| f.as_ref().len() != dim) {
        return Err(NetError::Shape(format!("row {bad} has a different width")));
    }

    let scaler = Scaler::fit(features).map_err(|e| NetError::Config(e.to_string()))?;
    let x: Vec<Vec<f64>> = features.iter().map(|f| scaler.transform(f.as_ref())).collect();
    let y: Vec<usize> = labels.iter().map(|l| l.class_index()).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n = x.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let n_val = ((cfg.validation_fraction * n as f64).round() as usize).clamp(1, n - 1);
    let (train_idx, val_idx) = order.split_at(n - n_val);
    let mut train_idx = train_idx.to_vec();
    let val_idx = val_idx.to_vec();

    let mut dims = vec![dim];
    dims.extend(&cfg.hidden_layers);
    dims.push(N_CLASSES);
    let mut model = MlpModel::build(&dims, cfg.dropout_rate, scaler, cfg.seed, |i, o| {
        DenseLayer::he_normal(i, o, &mut rng)
    })?;
    model.train_config = Some(cfg.clone());

    let mut adam = AdamState::new(&model.param_shapes());
    let mut history = TrainHistory::default();
    for _ in 0..cfg.epochs {
        if cfg.shuffle_each_epoch {
            train_idx.shuffle(&mut rng);
        }
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for batch_idx in train_idx.chunks(cfg.batch_size) {
            let batch_labels: Vec<usize> = batch_idx.iter().map(|&i| y[i]).collect();
            let trace = model.forward_batch(&gather(&x, batch_idx), Mode::Train, &mut rng)?;
            loss_sum += MlpModel::batch_loss(&trace, &batch_labels) * batch_idx.len() as f64;
            correct += batch_labels
                .iter()
                .enumerate()
                .filter(|&(b, &l)| {
                    prediction_from_probs(trace.sample_probs(b)).label.class_index() == l
                })
                .count();
            let grads = model.backward(&trace, &batch_labels)?;
            adam.step(&mut model.params_mut(), &grads.tensors(), cfg.learning_rate);
        }
        history.train_loss.push(loss_sum / train_idx.len() as f64);
        history
            .train_accuracy
            .push(correct as f64 / train_idx.len() as f64);
        let (vl, va) = evaluate_batch(&model, &x, &y, &val_idx);
        history.val_loss.push(vl);
        history.val_accuracy.push(va);
    }
    Ok((model, history))
}
