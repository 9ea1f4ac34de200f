//! Fully connected sigmoid network trained with binary cross-entropy and
//! mini-batch Adam (default) or plain SGD.
//!
//! Parameters live in one flat [`ParamVector`]; layer `l` occupies
//! `fan_out·fan_in` weights (row-major, one row per output unit) followed by
//! `fan_out` biases. Dropout after hidden layer `l` uses `dropout_hidden`,
//! except after the last hidden layer, which uses `dropout_preoutput`.

use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::Dataset;

/// Probability clamp used inside the log of the loss.
pub const PROB_EPS: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NnError {
    #[error("batch width {got} does not match model input width {expected}")]
    WidthMismatch { expected: usize, got: usize },
    #[error("parameter vector has {got} values, model needs {expected}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("{rows} rows but {labels} labels")]
    LabelCount { rows: usize, labels: usize },
    #[error("loss is not finite ({0}); aborting training")]
    NonFiniteLoss(f64),
    #[error("cannot train on an empty shard")]
    EmptyShard,
    #[error("cannot evaluate on an empty set")]
    EmptyEvalSet,
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
}

/// Local optimizer. State (Adam moments) is fresh for every local training call.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    Sgd,
    Adam,
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub dropout_hidden: f64,
    pub dropout_preoutput: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub local_epochs: usize,
    pub optimizer: Optimizer,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            input_dim: 21,
            hidden_dims: vec![8, 16, 8],
            dropout_hidden: 0.5,
            dropout_preoutput: 0.2,
            learning_rate: 0.01,
            batch_size: 32,
            local_epochs: 1,
            optimizer: Optimizer::Adam,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), NnError> {
        let bad = |m: String| Err(NnError::InvalidConfig(m));
        if self.input_dim == 0 || self.hidden_dims.contains(&0) {
            return bad("layer widths must be positive".into());
        }
        for p in [self.dropout_hidden, self.dropout_preoutput] {
            if !(0.0..1.0).contains(&p) {
                return bad(format!("dropout {p} not in [0,1)"));
            }
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning rate {} must be finite and non-negative", self.learning_rate));
        }
        if self.batch_size == 0 {
            return bad("batch size must be positive".into());
        }
        Ok(())
    }

    /// Widths from input to the single output unit.
    pub fn layer_dims(&self) -> Vec<usize> {
        let mut dims = Vec::with_capacity(self.hidden_dims.len() + 2);
        dims.push(self.input_dim);
        dims.extend(&self.hidden_dims);
        dims.push(1);
        dims
    }

    pub fn param_count(&self) -> usize {
        self.layer_dims().windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    /// Dropout probability applied after hidden layer `l` (0-based).
    fn dropout_after(&self, l: usize) -> f64 {
        if l + 1 == self.hidden_dims.len() {
            self.dropout_preoutput
        } else {
            self.dropout_hidden
        }
    }
}

/// Flattened weights and biases in canonical layer order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamVector(pub Vec<f64>);

impl ParamVector {
    pub fn zeros(len: usize) -> Self {
        Self(vec![0.0; len])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    /// Little-endian IEEE-754 bytes, 8 per value.
    pub fn to_le_bytes(&self) -> Vec<u8> {
        self.0.iter().flat_map(|v| v.to_le_bytes()).collect()
    }

    pub fn from_le_bytes(bytes: &[u8]) -> Option<Self> {
        if !bytes.len().is_multiple_of(8) {
            return None;
        }
        Some(Self(
            bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk"))).collect(),
        ))
    }

    pub fn squared_distance(&self, other: &ParamVector) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| (a - b) * (a - b)).sum()
    }
}

pub type Gradients = ParamVector;

/// Per-layer view of a flat parameter vector.
#[derive(Debug, Clone, Copy)]
struct LayerSlot {
    fan_in: usize,
    fan_out: usize,
    w: usize,
    b: usize,
}

fn layer_slots(config: &ModelConfig) -> Vec<LayerSlot> {
    let dims = config.layer_dims();
    let mut offset = 0;
    dims.windows(2)
        .map(|w| {
            let slot = LayerSlot { fan_in: w[0], fan_out: w[1], w: offset, b: offset + w[0] * w[1] };
            offset += w[0] * w[1] + w[1];
            slot
        })
        .collect()
}

/// Splits a flat vector into `(weights, biases)` per layer.
pub fn unflatten(config: &ModelConfig, params: &ParamVector) -> Result<Vec<(Vec<f64>, Vec<f64>)>, NnError> {
    check_len(config, params)?;
    Ok(layer_slots(config)
        .into_iter()
        .map(|s| {
            (params.0[s.w..s.b].to_vec(), params.0[s.b..s.b + s.fan_out].to_vec())
        })
        .collect())
}

pub fn flatten(layers: &[(Vec<f64>, Vec<f64>)]) -> ParamVector {
    ParamVector(layers.iter().flat_map(|(w, b)| w.iter().chain(b).copied()).collect())
}

fn check_len(config: &ModelConfig, params: &ParamVector) -> Result<(), NnError> {
    let expected = config.param_count();
    if params.len() != expected {
        return Err(NnError::LengthMismatch { expected, got: params.len() });
    }
    Ok(())
}

#[inline]
fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Glorot-uniform weights, zero biases.
pub fn init_model(config: &ModelConfig, seed: u64) -> ParamVector {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = ParamVector::zeros(config.param_count());
    for s in layer_slots(config) {
        let bound = (6.0 / (s.fan_in + s.fan_out) as f64).sqrt();
        for w in &mut params.0[s.w..s.b] {
            *w = rng.random_range(-bound..bound);
        }
    }
    params
}

pub enum Mode<'a> {
    Eval,
    Train(&'a mut dyn RngCore),
}

/// Activations of one sample, kept for the backward pass.
struct Trace {
    /// Inputs to each layer (post-dropout for hidden layers).
    inputs: Vec<Vec<f64>>,
    /// Sigmoid outputs of hidden layers before dropout.
    hidden: Vec<Vec<f64>>,
    /// Dropout multipliers (0 or 1/(1-p)) per hidden layer.
    masks: Vec<Vec<f64>>,
    output: f64,
}

fn forward_one(config: &ModelConfig, slots: &[LayerSlot], params: &[f64], x: &[f64], mode: &mut Mode<'_>) -> Trace {
    let n_hidden = slots.len() - 1;
    let mut trace = Trace {
        inputs: Vec::with_capacity(slots.len()),
        hidden: Vec::with_capacity(n_hidden),
        masks: Vec::with_capacity(n_hidden),
        output: 0.0,
    };
    let mut a = x.to_vec();
    for (l, s) in slots.iter().enumerate() {
        let w = &params[s.w..s.b];
        let b = &params[s.b..s.b + s.fan_out];
        let h: Vec<f64> = (0..s.fan_out)
            .map(|o| {
                let row = &w[o * s.fan_in..(o + 1) * s.fan_in];
                sigmoid(b[o] + row.iter().zip(&a).map(|(wi, ai)| wi * ai).sum::<f64>())
            })
            .collect();
        trace.inputs.push(a);
        if l == n_hidden {
            trace.output = h[0];
            break;
        }
        let mask: Vec<f64> = match mode {
            Mode::Eval => vec![1.0; s.fan_out],
            Mode::Train(rng) => {
                let p = config.dropout_after(l);
                let scale = 1.0 / (1.0 - p);
                (0..s.fan_out).map(|_| if rng.random::<f64>() < p { 0.0 } else { scale }).collect()
            }
        };
        a = h.iter().zip(&mask).map(|(v, m)| v * m).collect();
        trace.hidden.push(h);
        trace.masks.push(mask);
    }
    trace
}

fn check_batch(config: &ModelConfig, params: &ParamVector, rows: &[&[f64]]) -> Result<(), NnError> {
    check_len(config, params)?;
    if let Some(r) = rows.iter().find(|r| r.len() != config.input_dim) {
        return Err(NnError::WidthMismatch { expected: config.input_dim, got: r.len() });
    }
    Ok(())
}

/// Predicted probabilities for each row.
pub fn forward(
    config: &ModelConfig,
    params: &ParamVector,
    rows: &[&[f64]],
    mut mode: Mode<'_>,
) -> Result<Vec<f64>, NnError> {
    check_batch(config, params, rows)?;
    let slots = layer_slots(config);
    Ok(rows.iter().map(|x| forward_one(config, &slots, &params.0, x, &mut mode).output).collect())
}

/// Mean binary cross-entropy over the batch and its gradient, backpropagated
/// through the same dropout masks drawn in the forward pass.
pub fn loss_and_backward(
    config: &ModelConfig,
    params: &ParamVector,
    rows: &[&[f64]],
    labels: &[f64],
    mut mode: Mode<'_>,
) -> Result<(f64, Gradients), NnError> {
    check_batch(config, params, rows)?;
    if rows.len() != labels.len() {
        return Err(NnError::LabelCount { rows: rows.len(), labels: labels.len() });
    }
    if rows.is_empty() {
        return Err(NnError::EmptyShard);
    }
    let slots = layer_slots(config);
    let n = rows.len() as f64;
    let mut grad = ParamVector::zeros(params.len());
    let mut loss = 0.0;
    for (x, &y) in rows.iter().zip(labels) {
        let t = forward_one(config, &slots, &params.0, x, &mut mode);
        let p = t.output.clamp(PROB_EPS, 1.0 - PROB_EPS);
        loss -= y * p.ln() + (1.0 - y) * (1.0 - p).ln();

        // dL/dz at the output; zero where the clamp is active.
        let clamped = t.output <= PROB_EPS || t.output >= 1.0 - PROB_EPS;
        let mut delta = vec![if clamped { 0.0 } else { (t.output - y) / n }];
        for l in (0..slots.len()).rev() {
            let s = slots[l];
            let input = &t.inputs[l];
            for o in 0..s.fan_out {
                let d = delta[o];
                if d == 0.0 {
                    continue;
                }
                let gw = &mut grad.0[s.w + o * s.fan_in..s.w + (o + 1) * s.fan_in];
                for (g, a) in gw.iter_mut().zip(input) {
                    *g += d * a;
                }
                grad.0[s.b + o] += d;
            }
            if l == 0 {
                break;
            }
            // Back through W, the dropout mask and the sigmoid of layer l-1.
            let w = &params.0[s.w..s.b];
            let h = &t.hidden[l - 1];
            let m = &t.masks[l - 1];
            delta = (0..s.fan_in)
                .map(|i| {
                    let back: f64 = (0..s.fan_out).map(|o| w[o * s.fan_in + i] * delta[o]).sum();
                    back * m[i] * h[i] * (1.0 - h[i])
                })
                .collect();
        }
    }
    let loss = loss / n;
    if !loss.is_finite() {
        return Err(NnError::NonFiniteLoss(loss));
    }
    Ok((loss, grad))
}

/// Runs `local_epochs` epochs of shuffled mini-batch training on the shard
/// and returns the full updated parameters.
pub fn train_local(
    config: &ModelConfig,
    global: &ParamVector,
    data: &Dataset,
    shard: &[usize],
    seed: u64,
) -> Result<ParamVector, NnError> {
    if shard.is_empty() {
        return Err(NnError::EmptyShard);
    }
    check_len(config, global)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = global.clone();
    let mut order = shard.to_vec();
    let lr = config.learning_rate;
    let (mut m, mut v) = (vec![0.0; params.len()], vec![0.0; params.len()]);
    let mut step = 0;
    for _ in 0..config.local_epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(config.batch_size) {
            let rows: Vec<&[f64]> = batch.iter().map(|&i| data.row(i)).collect();
            let labels: Vec<f64> = batch.iter().map(|&i| data.label(i)).collect();
            let (_, grad) = loss_and_backward(config, &params, &rows, &labels, Mode::Train(&mut rng))?;
            match config.optimizer {
                Optimizer::Sgd => {
                    for (p, g) in params.0.iter_mut().zip(&grad.0) {
                        *p -= lr * g;
                    }
                }
                Optimizer::Adam => {
                    step += 1;
                    let c1 = 1.0 - ADAM_BETA1.powi(step);
                    let c2 = 1.0 - ADAM_BETA2.powi(step);
                    for (k, g) in grad.0.iter().enumerate() {
                        m[k] = ADAM_BETA1 * m[k] + (1.0 - ADAM_BETA1) * g;
                        v[k] = ADAM_BETA2 * v[k] + (1.0 - ADAM_BETA2) * g * g;
                        params.0[k] -= lr * (m[k] / c1) / ((v[k] / c2).sqrt() + ADAM_EPS);
                    }
                }
            }
        }
    }
    Ok(params)
}

/// Fraction of rows where `(p >= 0.5)` matches the label, without dropout.
pub fn evaluate(config: &ModelConfig, params: &ParamVector, data: &Dataset, rows: &[usize]) -> Result<f64, NnError> {
    if rows.is_empty() {
        return Err(NnError::EmptyEvalSet);
    }
    let xs: Vec<&[f64]> = rows.iter().map(|&i| data.row(i)).collect();
    let preds = forward(config, params, &xs, Mode::Eval)?;
    let correct = preds
        .iter()
        .zip(rows)
        .filter(|(p, &i)| (**p >= 0.5) == (data.label(i) == 1.0))
        .count();
    Ok(correct as f64 / rows.len() as f64)
}

/// Mean eval-mode loss over the given rows.
pub fn mean_loss(config: &ModelConfig, params: &ParamVector, data: &Dataset, rows: &[usize]) -> Result<f64, NnError> {
    let xs: Vec<&[f64]> = rows.iter().map(|&i| data.row(i)).collect();
    let ys: Vec<f64> = rows.iter().map(|&i| data.label(i)).collect();
    Ok(loss_and_backward(config, params, &xs, &ys, Mode::Eval)?.0)
}
