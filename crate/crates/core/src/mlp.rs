//! From-scratch multilayer perceptron: ReLU hidden layers, softmax output,
//! cross-entropy loss, minibatch SGD with momentum. Parameters flatten to a
//! single vector so they can be encrypted element-wise.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};

/// Ordered layer widths, input first. Hidden layers use ReLU, the output
/// layer softmax.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    layer_dims: Vec<usize>,
}

impl Architecture {
    pub fn new(layer_dims: Vec<usize>) -> Result<Self> {
        if layer_dims.len() < 2 {
            return Err(Error::Config(
                "architecture needs at least input and output layers".into(),
            ));
        }
        if layer_dims.iter().any(|&d| d == 0) {
            return Err(Error::Config("layer dimensions must be positive".into()));
        }
        Ok(Architecture { layer_dims })
    }

    /// 18 Modbus features to 8 classes: `[18, 54, 20, 8]`.
    pub fn gas_pipeline() -> Self {
        Architecture {
            layer_dims: vec![18, 54, 20, 8],
        }
    }

    /// 41 network-flow features to 5 classes: `[41, 9, 9, 5]`.
    pub fn wustl() -> Self {
        Architecture {
            layer_dims: vec![41, 9, 9, 5],
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "gas-pipeline" => Ok(Self::gas_pipeline()),
            "wustl" => Ok(Self::wustl()),
            other => Err(Error::Config(format!(
                "unknown architecture preset '{other}' (expected gas-pipeline or wustl)"
            ))),
        }
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.layer_dims
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_dims.last().unwrap()
    }

    /// Total number of weights and biases.
    pub fn flat_len(&self) -> usize {
        self.layer_dims
            .windows(2)
            .map(|w| w[0] * w[1] + w[1])
            .sum()
    }
}

/// One layer's weights (`out × in`, row-major) and biases.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

impl LayerParams {
    fn zeros(fan_in: usize, fan_out: usize) -> Self {
        LayerParams {
            weights: vec![0.0; fan_in * fan_out],
            biases: vec![0.0; fan_out],
        }
    }
}

/// Full model state: per-layer weight matrices and bias vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    arch: Architecture,
    layers: Vec<LayerParams>,
}

impl ModelParams {
    pub fn arch(&self) -> &Architecture {
        &self.arch
    }

    pub fn layers(&self) -> &[LayerParams] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [LayerParams] {
        &mut self.layers
    }

    /// True when every parameter is finite.
    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(|l| {
            l.weights.iter().all(|w| w.is_finite()) && l.biases.iter().all(|b| b.is_finite())
        })
    }
}

/// Training knobs shared by all clients unless overridden per client.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_epochs")]
    pub local_epochs: usize,
}

fn default_lr() -> f64 {
    0.01
}
fn default_momentum() -> f64 {
    0.8
}
fn default_batch() -> usize {
    64
}
fn default_epochs() -> usize {
    10
}

impl Default for HyperParams {
    fn default() -> Self {
        HyperParams {
            learning_rate: default_lr(),
            momentum: default_momentum(),
            batch_size: default_batch(),
            local_epochs: default_epochs(),
        }
    }
}

impl HyperParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "hyper.learning_rate must be positive (got {})",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!(
                "hyper.momentum must be in [0, 1) (got {})",
                self.momentum
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("hyper.batch_size must be positive".into()));
        }
        if self.local_epochs == 0 {
            return Err(Error::Config("hyper.local_epochs must be positive".into()));
        }
        Ok(())
    }
}

/// Initialize weights from `uniform(-1/√fan_in, 1/√fan_in)` with zero biases,
/// deterministically per seed.
pub fn init_model(arch: &Architecture, seed: u64) -> ModelParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut layers = Vec::new();
    for dims in arch.layer_dims().windows(2) {
        let (fan_in, fan_out) = (dims[0], dims[1]);
        let bound = 1.0 / (fan_in as f64).sqrt();
        let weights = (0..fan_in * fan_out)
            .map(|_| rng.gen_range(-bound..bound))
            .collect();
        layers.push(LayerParams {
            weights,
            biases: vec![0.0; fan_out],
        });
    }
    ModelParams {
        arch: arch.clone(),
        layers,
    }
}

/// Concatenate all weights (row-major) and biases, layer by layer.
pub fn flatten(params: &ModelParams) -> Vec<f64> {
    let mut flat = Vec::with_capacity(params.arch.flat_len());
    for layer in &params.layers {
        flat.extend_from_slice(&layer.weights);
        flat.extend_from_slice(&layer.biases);
    }
    flat
}

/// Rebuild layered parameters from a flat vector.
pub fn unflatten(arch: &Architecture, flat: &[f64]) -> Result<ModelParams> {
    if flat.len() != arch.flat_len() {
        return Err(Error::Shape(format!(
            "flat vector has {} values, architecture needs {}",
            flat.len(),
            arch.flat_len()
        )));
    }
    let mut layers = Vec::new();
    let mut offset = 0;
    for dims in arch.layer_dims().windows(2) {
        let (fan_in, fan_out) = (dims[0], dims[1]);
        let w_len = fan_in * fan_out;
        let weights = flat[offset..offset + w_len].to_vec();
        offset += w_len;
        let biases = flat[offset..offset + fan_out].to_vec();
        offset += fan_out;
        layers.push(LayerParams { weights, biases });
    }
    Ok(ModelParams {
        arch: arch.clone(),
        layers,
    })
}

/// Checkpoint format: architecture descriptor plus the flat parameter vector.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub layer_dims: Vec<usize>,
    pub values: Vec<f64>,
}

impl From<&ModelParams> for Checkpoint {
    fn from(params: &ModelParams) -> Self {
        Checkpoint {
            layer_dims: params.arch.layer_dims().to_vec(),
            values: flatten(params),
        }
    }
}

impl TryFrom<Checkpoint> for ModelParams {
    type Error = Error;
    fn try_from(ckpt: Checkpoint) -> Result<Self> {
        let arch = Architecture::new(ckpt.layer_dims)?;
        unflatten(&arch, &ckpt.values)
    }
}

// --- forward pass ---

/// `z = x·Wᵀ + b` over a row-major batch.
fn affine(input: &[f64], rows: usize, fan_in: usize, layer: &LayerParams) -> Vec<f64> {
    let fan_out = layer.biases.len();
    let mut out = vec![0.0; rows * fan_out];
    for r in 0..rows {
        let x = &input[r * fan_in..(r + 1) * fan_in];
        let z = &mut out[r * fan_out..(r + 1) * fan_out];
        for (o, zo) in z.iter_mut().enumerate() {
            let w = &layer.weights[o * fan_in..(o + 1) * fan_in];
            let mut acc = layer.biases[o];
            for i in 0..fan_in {
                acc += x[i] * w[i];
            }
            *zo = acc;
        }
    }
    out
}

fn relu_inplace(z: &mut [f64]) {
    for v in z.iter_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

/// Row-wise softmax with max subtraction.
fn softmax_rows(z: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; z.len()];
    for r in 0..rows {
        let row = &z[r * cols..(r + 1) * cols];
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let dest = &mut out[r * cols..(r + 1) * cols];
        let mut sum = 0.0;
        for (d, &v) in dest.iter_mut().zip(row) {
            let e = (v - max).exp();
            *d = e;
            sum += e;
        }
        for d in dest.iter_mut() {
            *d /= sum;
        }
    }
    out
}

/// Mean cross-entropy of logits against labels, via log-sum-exp.
fn cross_entropy(logits: &[f64], rows: usize, cols: usize, labels: &[usize]) -> f64 {
    let mut total = 0.0;
    for r in 0..rows {
        let row = &logits[r * cols..(r + 1) * cols];
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let log_sum: f64 = row.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
        total -= row[labels[r]] - max - log_sum;
    }
    total / rows as f64
}

struct ForwardTrace {
    /// `a_0 .. a_{L-1}`: layer inputs (a_0 is the batch itself).
    activations: Vec<Vec<f64>>,
    /// Pre-activations of every layer.
    pre_acts: Vec<Vec<f64>>,
    /// Output logits.
    logits: Vec<f64>,
}

fn forward_trace(params: &ModelParams, batch: &[f64], rows: usize) -> ForwardTrace {
    let dims = params.arch.layer_dims();
    let mut activations: Vec<Vec<f64>> = vec![batch.to_vec()];
    let mut pre_acts = Vec::new();
    let last = params.layers.len() - 1;
    for (l, layer) in params.layers.iter().enumerate() {
        let z = affine(&activations[l], rows, dims[l], layer);
        pre_acts.push(z.clone());
        if l < last {
            let mut a = z;
            relu_inplace(&mut a);
            activations.push(a);
        }
    }
    let logits = pre_acts.last().unwrap().clone();
    ForwardTrace {
        activations,
        pre_acts,
        logits,
    }
}

/// Class-probability matrix for a row-major feature batch. Each output row
/// sums to 1.
pub fn forward(params: &ModelParams, batch: &[f64], rows: usize) -> Result<Vec<f64>> {
    let input_dim = params.arch.input_dim();
    if batch.len() != rows * input_dim {
        return Err(Error::Shape(format!(
            "batch holds {} values, expected {rows}×{input_dim}",
            batch.len()
        )));
    }
    let trace = forward_trace(params, batch, rows);
    Ok(softmax_rows(&trace.logits, rows, params.arch.output_dim()))
}

/// Mean cross-entropy loss of the model on a labeled batch.
pub fn batch_loss(params: &ModelParams, batch: &[f64], rows: usize, labels: &[usize]) -> Result<f64> {
    let input_dim = params.arch.input_dim();
    if batch.len() != rows * input_dim || labels.len() != rows {
        return Err(Error::Shape("batch/label shape mismatch".into()));
    }
    let trace = forward_trace(params, batch, rows);
    Ok(cross_entropy(&trace.logits, rows, params.arch.output_dim(), labels))
}

/// Backpropagation over one batch. Returns the mean loss and gradients
/// shaped like the parameters.
pub fn batch_gradients(
    params: &ModelParams,
    batch: &[f64],
    rows: usize,
    labels: &[usize],
) -> Result<(f64, ModelParams)> {
    let dims = params.arch.layer_dims();
    let input_dim = params.arch.input_dim();
    let classes = params.arch.output_dim();
    if batch.len() != rows * input_dim || labels.len() != rows {
        return Err(Error::Shape("batch/label shape mismatch".into()));
    }
    if rows == 0 {
        return Err(Error::Domain("cannot take gradients on an empty batch".into()));
    }

    let trace = forward_trace(params, batch, rows);
    let loss = cross_entropy(&trace.logits, rows, classes, labels);
    let probs = softmax_rows(&trace.logits, rows, classes);

    // dz for the output layer: (p - onehot) / rows
    let mut dz = probs;
    for r in 0..rows {
        dz[r * classes + labels[r]] -= 1.0;
    }
    for v in dz.iter_mut() {
        *v /= rows as f64;
    }

    let n_layers = params.layers.len();
    let mut grads: Vec<LayerParams> = dims
        .windows(2)
        .map(|w| LayerParams::zeros(w[0], w[1]))
        .collect();

    for l in (0..n_layers).rev() {
        let fan_in = dims[l];
        let fan_out = dims[l + 1];
        let a_prev = &trace.activations[l];
        let grad = &mut grads[l];
        for r in 0..rows {
            let dz_row = &dz[r * fan_out..(r + 1) * fan_out];
            let a_row = &a_prev[r * fan_in..(r + 1) * fan_in];
            for o in 0..fan_out {
                let d = dz_row[o];
                grad.biases[o] += d;
                let w_row = &mut grad.weights[o * fan_in..(o + 1) * fan_in];
                for i in 0..fan_in {
                    w_row[i] += d * a_row[i];
                }
            }
        }
        if l > 0 {
            // da = dz · W, masked by ReLU'(z_{l-1})
            let weights = &params.layers[l].weights;
            let z_prev = &trace.pre_acts[l - 1];
            let mut dz_prev = vec![0.0; rows * fan_in];
            for r in 0..rows {
                let dz_row = &dz[r * fan_out..(r + 1) * fan_out];
                let dest = &mut dz_prev[r * fan_in..(r + 1) * fan_in];
                for o in 0..fan_out {
                    let d = dz_row[o];
                    let w_row = &weights[o * fan_in..(o + 1) * fan_in];
                    for i in 0..fan_in {
                        dest[i] += d * w_row[i];
                    }
                }
                for i in 0..fan_in {
                    if z_prev[r * fan_in + i] <= 0.0 {
                        dest[i] = 0.0;
                    }
                }
            }
            dz = dz_prev;
        }
    }

    Ok((
        loss,
        ModelParams {
            arch: params.arch.clone(),
            layers: grads,
        },
    ))
}

/// Minibatch SGD with momentum over cross-entropy, `local_epochs` passes,
/// reshuffled each epoch from the seed. The last partial minibatch is used.
/// Returns the trained parameters and the per-epoch mean loss trace.
pub fn train_epochs(
    params: &ModelParams,
    dataset: &Dataset,
    hyper: &HyperParams,
    seed: u64,
) -> Result<(ModelParams, Vec<f64>)> {
    if dataset.is_empty() {
        return Err(Error::Domain("cannot train on an empty dataset".into()));
    }
    if dataset.feature_dim() != params.arch.input_dim() {
        return Err(Error::Shape(format!(
            "dataset has {} features, model expects {}",
            dataset.feature_dim(),
            params.arch.input_dim()
        )));
    }
    if dataset.class_count() > params.arch.output_dim() {
        return Err(Error::Shape(format!(
            "dataset has {} classes, model emits {}",
            dataset.class_count(),
            params.arch.output_dim()
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = params.clone();
    let mut velocity: Vec<LayerParams> = params
        .arch
        .layer_dims()
        .windows(2)
        .map(|w| LayerParams::zeros(w[0], w[1]))
        .collect();

    let n = dataset.len();
    let input_dim = dataset.feature_dim();
    let mut indices: Vec<usize> = (0..n).collect();
    let mut trace = Vec::with_capacity(hyper.local_epochs);

    for _ in 0..hyper.local_epochs {
        indices.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in indices.chunks(hyper.batch_size.max(1)) {
            let rows = chunk.len();
            let mut batch = Vec::with_capacity(rows * input_dim);
            let mut labels = Vec::with_capacity(rows);
            for &i in chunk {
                batch.extend_from_slice(dataset.row(i));
                labels.push(dataset.labels()[i]);
            }
            let (loss, grads) = batch_gradients(&model, &batch, rows, &labels)?;
            if !loss.is_finite() {
                return Err(Error::Numeric(format!("non-finite loss {loss} during training")));
            }
            epoch_loss += loss * rows as f64;

            // v ← momentum·v + g ; p ← p − lr·v
            for ((layer, vel), grad) in model
                .layers
                .iter_mut()
                .zip(velocity.iter_mut())
                .zip(grads.layers.iter())
            {
                for (w, (vw, gw)) in layer
                    .weights
                    .iter_mut()
                    .zip(vel.weights.iter_mut().zip(grad.weights.iter()))
                {
                    *vw = hyper.momentum * *vw + gw;
                    *w -= hyper.learning_rate * *vw;
                }
                for (b, (vb, gb)) in layer
                    .biases
                    .iter_mut()
                    .zip(vel.biases.iter_mut().zip(grad.biases.iter()))
                {
                    *vb = hyper.momentum * *vb + gb;
                    *b -= hyper.learning_rate * *vb;
                }
            }
        }
        trace.push(epoch_loss / n as f64);
    }
    Ok((model, trace))
}

/// Fraction of rows whose argmax prediction matches the label. Ties break
/// toward the lowest class index.
pub fn evaluate(params: &ModelParams, dataset: &Dataset) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::Domain("cannot evaluate on an empty dataset".into()));
    }
    let classes = params.arch.output_dim();
    let input_dim = dataset.feature_dim();
    let mut correct = 0usize;
    let chunk_rows = 512;
    let mut start = 0;
    while start < dataset.len() {
        let end = (start + chunk_rows).min(dataset.len());
        let rows = end - start;
        let mut batch = Vec::with_capacity(rows * input_dim);
        for i in start..end {
            batch.extend_from_slice(dataset.row(i));
        }
        let probs = forward(params, &batch, rows)?;
        for (r, i) in (start..end).enumerate() {
            let row = &probs[r * classes..(r + 1) * classes];
            let mut best = 0;
            for (c, &p) in row.iter().enumerate() {
                if p > row[best] {
                    best = c;
                }
            }
            if best == dataset.labels()[i] {
                correct += 1;
            }
        }
        start = end;
    }
    Ok(correct as f64 / dataset.len() as f64)
}
