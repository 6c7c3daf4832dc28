//! Small differentiable classifiers over flat parameter vectors.
//!
//! Layout is layer-major; within a layer the row-major weight matrix
//! (`fan_out x fan_in`) comes first, then the bias. Hidden layers use tanh,
//! the output layer feeds a softmax cross-entropy.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::ParamVector;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    LinearSoftmax,
    Mlp,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub num_classes: usize,
}

/// Shape and flat offset of one dense layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerShape {
    pub fan_in: usize,
    pub fan_out: usize,
    pub offset: usize,
}

impl LayerShape {
    pub fn weight_len(&self) -> usize {
        self.fan_in * self.fan_out
    }

    pub fn len(&self) -> usize {
        self.weight_len() + self.fan_out
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn weights<'a>(&self, params: &'a [f64]) -> &'a [f64] {
        &params[self.offset..self.offset + self.weight_len()]
    }

    fn bias<'a>(&self, params: &'a [f64]) -> &'a [f64] {
        &params[self.offset + self.weight_len()..self.offset + self.len()]
    }
}

/// Structured view of one layer's parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    /// Row-major, `fan_out` rows of `fan_in`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl ModelSpec {
    pub fn linear_softmax(input_dim: usize, num_classes: usize) -> Self {
        Self {
            kind: ModelKind::LinearSoftmax,
            input_dim,
            hidden_dims: Vec::new(),
            num_classes,
        }
    }

    pub fn mlp(input_dim: usize, hidden_dims: Vec<usize>, num_classes: usize) -> Self {
        Self {
            kind: ModelKind::Mlp,
            input_dim,
            hidden_dims,
            num_classes,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::Config("model input_dim must be positive".into()));
        }
        if self.num_classes < 2 {
            return Err(Error::Config(format!(
                "model needs at least 2 classes, got {}",
                self.num_classes
            )));
        }
        match self.kind {
            ModelKind::LinearSoftmax if !self.hidden_dims.is_empty() => Err(Error::Config(
                "linear-softmax takes no hidden layers".into(),
            )),
            ModelKind::Mlp if self.hidden_dims.is_empty() => {
                Err(Error::Config("mlp needs at least one hidden layer".into()))
            }
            _ if self.hidden_dims.contains(&0) => {
                Err(Error::Config("hidden layer widths must be positive".into()))
            }
            _ => Ok(()),
        }
    }

    pub fn layers(&self) -> Vec<LayerShape> {
        let mut dims = Vec::with_capacity(self.hidden_dims.len() + 2);
        dims.push(self.input_dim);
        dims.extend_from_slice(&self.hidden_dims);
        dims.push(self.num_classes);
        let mut offset = 0;
        dims.windows(2)
            .map(|w| {
                let shape = LayerShape {
                    fan_in: w[0],
                    fan_out: w[1],
                    offset,
                };
                offset += shape.len();
                shape
            })
            .collect()
    }

    pub fn num_params(&self) -> usize {
        self.layers().iter().map(LayerShape::len).sum()
    }

    /// Uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` for weights and biases.
    pub fn init_params<R: Rng + ?Sized>(&self, rng: &mut R) -> ParamVector {
        let mut values = Vec::with_capacity(self.num_params());
        for layer in self.layers() {
            let bound = 1.0 / (layer.fan_in as f64).sqrt();
            for _ in 0..layer.len() {
                values.push(rng.random_range(-bound..=bound));
            }
        }
        ParamVector::from_vec(values)
    }

    pub fn check_params(&self, params: &ParamVector) -> Result<()> {
        let expected = self.num_params();
        if params.len() != expected {
            return Err(Error::LengthMismatch {
                expected,
                got: params.len(),
            });
        }
        Ok(())
    }

    pub fn unflatten(&self, params: &ParamVector) -> Result<Vec<LayerParams>> {
        self.check_params(params)?;
        let p = params.as_slice();
        Ok(self
            .layers()
            .iter()
            .map(|l| LayerParams {
                weights: l.weights(p).to_vec(),
                bias: l.bias(p).to_vec(),
            })
            .collect())
    }

    pub fn flatten(&self, layers: &[LayerParams]) -> Result<ParamVector> {
        let shapes = self.layers();
        if shapes.len() != layers.len() {
            return Err(Error::LengthMismatch {
                expected: shapes.len(),
                got: layers.len(),
            });
        }
        let mut values = Vec::with_capacity(self.num_params());
        for (shape, layer) in shapes.iter().zip(layers) {
            if layer.weights.len() != shape.weight_len() {
                return Err(Error::LengthMismatch {
                    expected: shape.weight_len(),
                    got: layer.weights.len(),
                });
            }
            if layer.bias.len() != shape.fan_out {
                return Err(Error::LengthMismatch {
                    expected: shape.fan_out,
                    got: layer.bias.len(),
                });
            }
            values.extend_from_slice(&layer.weights);
            values.extend_from_slice(&layer.bias);
        }
        Ok(ParamVector::from_vec(values))
    }

    fn check_batch(&self, batch: &Batch) -> Result<()> {
        if batch.input_dim() != self.input_dim {
            return Err(Error::Config(format!(
                "batch has {} features, model expects {}",
                batch.input_dim(),
                self.input_dim
            )));
        }
        if batch.is_empty() {
            return Err(Error::Config("empty batch".into()));
        }
        if let Some(&bad) = batch.labels().iter().find(|&&y| y >= self.num_classes) {
            return Err(Error::Config(format!(
                "label {bad} out of range for {} classes",
                self.num_classes
            )));
        }
        Ok(())
    }
}

/// Labeled feature rows. Also used as the container for whole datasets
/// and client shards.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    input_dim: usize,
    features: Vec<f64>,
    labels: Vec<usize>,
}

impl Batch {
    pub fn new(input_dim: usize, features: Vec<f64>, labels: Vec<usize>) -> Result<Self> {
        if input_dim == 0 {
            return Err(Error::Config("batch input_dim must be positive".into()));
        }
        if features.len() != input_dim * labels.len() {
            return Err(Error::LengthMismatch {
                expected: input_dim * labels.len(),
                got: features.len(),
            });
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("batch features must be finite".into()));
        }
        Ok(Self {
            input_dim,
            features,
            labels,
        })
    }

    pub fn empty(input_dim: usize) -> Self {
        Self {
            input_dim,
            features: Vec::new(),
            labels: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.input_dim..(i + 1) * self.input_dim]
    }

    pub fn push(&mut self, row: &[f64], label: usize) {
        debug_assert_eq!(row.len(), self.input_dim);
        self.features.extend_from_slice(row);
        self.labels.push(label);
    }

    /// Rows at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Batch {
        let mut out = Batch::empty(self.input_dim);
        out.features.reserve(indices.len() * self.input_dim);
        out.labels.reserve(indices.len());
        for &i in indices {
            out.push(self.row(i), self.labels[i]);
        }
        out
    }

    pub fn concat<'a, I: IntoIterator<Item = &'a Batch>>(input_dim: usize, parts: I) -> Result<Batch> {
        let mut out = Batch::empty(input_dim);
        for part in parts {
            if part.input_dim != input_dim {
                return Err(Error::LengthMismatch {
                    expected: input_dim,
                    got: part.input_dim,
                });
            }
            out.features.extend_from_slice(&part.features);
            out.labels.extend_from_slice(&part.labels);
        }
        Ok(out)
    }
}

/// Per-sample forward pass. Returns the sample's loss and leaves the
/// activations and output probabilities in `acts`.
fn forward_sample(
    layers: &[LayerShape],
    params: &[f64],
    x: &[f64],
    y: usize,
    acts: &mut Vec<Vec<f64>>,
) -> Result<f64> {
    acts.resize(layers.len() + 1, Vec::new());
    acts[0].clear();
    acts[0].extend_from_slice(x);
    let last = layers.len() - 1;
    for (l, layer) in layers.iter().enumerate() {
        let w = layer.weights(params);
        let b = layer.bias(params);
        let (inputs, rest) = acts.split_at_mut(l + 1);
        let input = &inputs[l];
        let out = &mut rest[0];
        out.clear();
        for (row, bias) in w.chunks_exact(layer.fan_in).zip(b) {
            let z = bias + row.iter().zip(input).map(|(a, b)| a * b).sum::<f64>();
            if !z.is_finite() {
                return Err(Error::NonFinite { layer: l });
            }
            out.push(if l < last { z.tanh() } else { z });
        }
    }
    // softmax cross-entropy on the logits, in place
    let logits = &mut acts[layers.len()];
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let true_logit = logits[y] - max;
    let mut total = 0.0;
    for z in logits.iter_mut() {
        *z = (*z - max).exp();
        total += *z;
    }
    let loss = total.ln() - true_logit;
    for p in logits.iter_mut() {
        *p /= total;
    }
    if !loss.is_finite() {
        return Err(Error::NonFinite { layer: last });
    }
    Ok(loss.max(0.0))
}

fn backward_sample(
    layers: &[LayerShape],
    params: &[f64],
    y: usize,
    acts: &[Vec<f64>],
    grad: &mut [f64],
    delta: &mut Vec<f64>,
    scratch: &mut Vec<f64>,
) {
    delta.clear();
    delta.extend_from_slice(&acts[layers.len()]);
    delta[y] -= 1.0;
    for (l, layer) in layers.iter().enumerate().rev() {
        let input = &acts[l];
        let gw_start = layer.offset;
        let gb_start = layer.offset + layer.weight_len();
        for (i, d) in delta.iter().enumerate() {
            let row = &mut grad[gw_start + i * layer.fan_in..gw_start + (i + 1) * layer.fan_in];
            for (g, a) in row.iter_mut().zip(input) {
                *g += d * a;
            }
            grad[gb_start + i] += d;
        }
        if l > 0 {
            let w = layer.weights(params);
            scratch.clear();
            scratch.resize(layer.fan_in, 0.0);
            for (i, d) in delta.iter().enumerate() {
                for (s, wij) in scratch.iter_mut().zip(&w[i * layer.fan_in..(i + 1) * layer.fan_in]) {
                    *s += d * wij;
                }
            }
            for (s, a) in scratch.iter_mut().zip(input) {
                *s *= 1.0 - a * a;
            }
            std::mem::swap(delta, scratch);
        }
    }
}

/// Mean cross-entropy of `params` on `batch`.
pub fn forward_loss(spec: &ModelSpec, params: &ParamVector, batch: &Batch) -> Result<f64> {
    spec.check_params(params)?;
    spec.check_batch(batch)?;
    let layers = spec.layers();
    let mut acts = Vec::new();
    let mut total = 0.0;
    for i in 0..batch.len() {
        total += forward_sample(&layers, params.as_slice(), batch.row(i), batch.labels[i], &mut acts)?;
    }
    Ok(total / batch.len() as f64)
}

/// Mean loss and its gradient with respect to `params`.
pub fn loss_and_gradient(
    spec: &ModelSpec,
    params: &ParamVector,
    batch: &Batch,
) -> Result<(f64, ParamVector)> {
    spec.check_params(params)?;
    spec.check_batch(batch)?;
    let layers = spec.layers();
    let p = params.as_slice();
    let mut grad = vec![0.0; params.len()];
    let (mut acts, mut delta, mut scratch) = (Vec::new(), Vec::new(), Vec::new());
    let mut total = 0.0;
    for i in 0..batch.len() {
        let y = batch.labels[i];
        total += forward_sample(&layers, p, batch.row(i), y, &mut acts)?;
        backward_sample(&layers, p, y, &acts, &mut grad, &mut delta, &mut scratch);
    }
    let n = batch.len() as f64;
    for g in &mut grad {
        *g /= n;
    }
    if let Some(pos) = grad.iter().position(|g| !g.is_finite()) {
        let layer = layers
            .iter()
            .position(|l| pos < l.offset + l.len())
            .unwrap_or(layers.len() - 1);
        return Err(Error::NonFinite { layer });
    }
    Ok((total / n, ParamVector::from_vec(grad)))
}

pub fn gradient(spec: &ModelSpec, params: &ParamVector, batch: &Batch) -> Result<ParamVector> {
    loss_and_gradient(spec, params, batch).map(|(_, g)| g)
}

/// Arg-max class per row; ties go to the lowest index.
pub fn predict(spec: &ModelSpec, params: &ParamVector, batch: &Batch) -> Result<Vec<usize>> {
    spec.check_params(params)?;
    if batch.input_dim() != spec.input_dim {
        return Err(Error::Config("batch width does not match the model".into()));
    }
    let layers = spec.layers();
    let mut acts = Vec::new();
    (0..batch.len())
        .map(|i| {
            // label 0 is always in range; only the probabilities are used
            forward_sample(&layers, params.as_slice(), batch.row(i), 0, &mut acts)?;
            let probs = &acts[layers.len()];
            let mut best = 0;
            for (c, &p) in probs.iter().enumerate() {
                if p > probs[best] {
                    best = c;
                }
            }
            Ok(best)
        })
        .collect()
}

/// A differentiable scalar objective over a flat parameter vector.
pub trait Objective {
    fn dim(&self) -> usize;
    fn loss(&self, params: &ParamVector) -> Result<f64>;
    fn gradient(&self, params: &ParamVector) -> Result<ParamVector>;
}

/// Full-batch empirical loss of a model on a fixed dataset.
#[derive(Debug, Clone, Copy)]
pub struct DataObjective<'a> {
    pub spec: &'a ModelSpec,
    pub data: &'a Batch,
}

impl Objective for DataObjective<'_> {
    fn dim(&self) -> usize {
        self.spec.num_params()
    }

    fn loss(&self, params: &ParamVector) -> Result<f64> {
        forward_loss(self.spec, params, self.data)
    }

    fn gradient(&self, params: &ParamVector) -> Result<ParamVector> {
        gradient(self.spec, params, self.data)
    }
}
