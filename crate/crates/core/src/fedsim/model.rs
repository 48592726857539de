//! One-hidden-layer `tanh` classifier with softmax cross-entropy loss.
//!
//! Parameters live in one flat vector laid out as `W1 (hidden x input)`,
//! `b1 (hidden)`, `W2 (classes x hidden)`, `b2 (classes)`, all row-major.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::data::Sample;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpShape {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub classes: usize,
}

impl MlpShape {
    pub fn param_count(&self) -> usize {
        self.hidden_dim * self.input_dim
            + self.hidden_dim
            + self.classes * self.hidden_dim
            + self.classes
    }

    fn offsets(&self) -> [usize; 4] {
        let w1 = 0;
        let b1 = w1 + self.hidden_dim * self.input_dim;
        let w2 = b1 + self.hidden_dim;
        let b2 = w2 + self.classes * self.hidden_dim;
        [w1, b1, w2, b2]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalModel {
    shape: MlpShape,
    params: Vec<f64>,
}

impl GlobalModel {
    /// Uniform Glorot initialisation, zero biases.
    pub fn init<R: Rng>(shape: MlpShape, rng: &mut R) -> Self {
        let mut params = vec![0.0; shape.param_count()];
        let [w1, b1, w2, b2] = shape.offsets();
        let lim1 = (6.0 / (shape.input_dim + shape.hidden_dim) as f64).sqrt();
        let lim2 = (6.0 / (shape.hidden_dim + shape.classes) as f64).sqrt();
        params[w1..b1]
            .iter_mut()
            .for_each(|p| *p = rng.random_range(-lim1..lim1));
        params[w2..b2]
            .iter_mut()
            .for_each(|p| *p = rng.random_range(-lim2..lim2));
        GlobalModel { shape, params }
    }

    /// Rebuilds a model from a flat parameter vector.
    pub fn unflatten(shape: MlpShape, params: Vec<f64>) -> Option<Self> {
        (params.len() == shape.param_count() && params.iter().all(|p| p.is_finite()))
            .then_some(GlobalModel { shape, params })
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.params.clone()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn shape(&self) -> MlpShape {
        self.shape
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    /// `w <- w + step`.
    pub fn apply_step(&mut self, step: &[f64]) {
        assert_eq!(step.len(), self.params.len());
        self.params.iter_mut().zip(step).for_each(|(w, s)| *w += s);
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|p| p.is_finite())
    }

    pub fn predict(&self, features: &[f64]) -> usize {
        let (_, logits) = forward(self.shape, &self.params, features);
        logits
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i)
            .unwrap_or(0)
    }

    pub fn accuracy(&self, samples: &[Sample]) -> f64 {
        if samples.is_empty() {
            return 0.0;
        }
        let hits = samples
            .iter()
            .filter(|s| self.predict(&s.features) == s.label)
            .count();
        hits as f64 / samples.len() as f64
    }

    /// Mean loss over `batch`.
    pub fn loss(&self, batch: &[&Sample]) -> f64 {
        batch_loss_and_grad(self.shape, &self.params, batch, false).0
    }

    /// Mean loss and its gradient over `batch`.
    pub fn loss_and_grad(&self, batch: &[&Sample]) -> (f64, Vec<f64>) {
        batch_loss_and_grad(self.shape, &self.params, batch, true)
    }
}

fn forward(shape: MlpShape, params: &[f64], x: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let [w1, b1, w2, b2] = shape.offsets();
    let hidden: Vec<f64> = (0..shape.hidden_dim)
        .map(|h| {
            let row = &params[w1 + h * shape.input_dim..w1 + (h + 1) * shape.input_dim];
            let pre: f64 = row.iter().zip(x).map(|(w, xi)| w * xi).sum::<f64>() + params[b1 + h];
            pre.tanh()
        })
        .collect();
    let logits = (0..shape.classes)
        .map(|c| {
            let row = &params[w2 + c * shape.hidden_dim..w2 + (c + 1) * shape.hidden_dim];
            row.iter().zip(&hidden).map(|(w, h)| w * h).sum::<f64>() + params[b2 + c]
        })
        .collect();
    (hidden, logits)
}

fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|l| (l - m).exp()).sum::<f64>().ln();
    logits.iter().map(|l| l - lse).collect()
}

pub(crate) fn batch_loss_and_grad(
    shape: MlpShape,
    params: &[f64],
    batch: &[&Sample],
    with_grad: bool,
) -> (f64, Vec<f64>) {
    let [w1, b1, w2, b2] = shape.offsets();
    let mut grad = if with_grad {
        vec![0.0; params.len()]
    } else {
        Vec::new()
    };
    let mut loss = 0.0;
    let inv = 1.0 / batch.len().max(1) as f64;
    for sample in batch {
        let x = &sample.features;
        let (hidden, logits) = forward(shape, params, x);
        let logp = log_softmax(&logits);
        loss -= logp[sample.label];
        if !with_grad {
            continue;
        }
        // dL/dlogits = softmax - onehot
        let dlogits: Vec<f64> = logp
            .iter()
            .enumerate()
            .map(|(c, lp)| lp.exp() - if c == sample.label { 1.0 } else { 0.0 })
            .collect();
        let mut dhidden = vec![0.0; shape.hidden_dim];
        for c in 0..shape.classes {
            let d = dlogits[c] * inv;
            grad[b2 + c] += d;
            for h in 0..shape.hidden_dim {
                grad[w2 + c * shape.hidden_dim + h] += d * hidden[h];
                dhidden[h] += params[w2 + c * shape.hidden_dim + h] * d;
            }
        }
        for h in 0..shape.hidden_dim {
            let dpre = dhidden[h] * (1.0 - hidden[h] * hidden[h]);
            grad[b1 + h] += dpre;
            let row = &mut grad[w1 + h * shape.input_dim..w1 + (h + 1) * shape.input_dim];
            row.iter_mut().zip(x).for_each(|(g, xi)| *g += dpre * xi);
        }
    }
    (loss * inv, grad)
}
