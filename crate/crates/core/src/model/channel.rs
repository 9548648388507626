//! Per-token softmax head, the noisy channel on top of it, and dropout.

use ndarray::Array2;
use rand::Rng;

use crate::autodiff::{init_uniform, softmax_rows, Graph, ParamId, ParamStore, Tensor, Var};
use crate::distant::ConfusionMatrix;
use crate::error::{Error, Result};

/// Smoothing added to confusion probabilities before taking logs.
pub const CHANNEL_EPSILON: f64 = 1e-6;

#[derive(Debug, Clone, Copy)]
pub struct SoftmaxHead {
    pub weight: ParamId,
    pub bias: ParamId,
    pub labels: usize,
}

impl SoftmaxHead {
    pub fn new(store: &mut ParamStore, rng: &mut impl Rng, input: usize, labels: usize) -> Self {
        SoftmaxHead {
            weight: store.add("head.weight", init_uniform(rng, input, labels, input)),
            bias: store.add("head.bias", Array2::zeros((1, labels))),
            labels,
        }
    }

    pub fn params(&self) -> [ParamId; 2] {
        [self.weight, self.bias]
    }

    /// Clean label distribution for every row of `hidden`.
    pub fn probabilities(&self, g: &mut Graph, hidden: Var) -> Var {
        let w = g.param(self.weight);
        let b = g.param(self.bias);
        let z = g.matmul(hidden, w);
        let z = g.add_row(z, b);
        g.softmax_rows(z)
    }
}

/// Direct evaluation of the head for one hidden vector.
pub fn softmax_head(hidden: &[f64], head: &SoftmaxHead, store: &ParamStore) -> Result<Vec<f64>> {
    let w = store.get(head.weight);
    if hidden.len() != w.nrows() {
        return Err(Error::Dimension(format!(
            "hidden vector of {} dims, head expects {}",
            hidden.len(),
            w.nrows()
        )));
    }
    let h = Array2::from_shape_vec((1, hidden.len()), hidden.to_vec()).unwrap();
    let z = h.dot(w) + store.get(head.bias);
    Ok(softmax_rows(&z).row(0).to_vec())
}

/// Trainable label-corruption matrix; row `i` softmax-normalizes to
/// `p(noisy = j | clean = i)`.
#[derive(Debug, Clone, Copy)]
pub struct NoisyChannel {
    pub logits: ParamId,
    pub labels: usize,
}

impl NoisyChannel {
    pub fn new(store: &mut ParamStore, logits: Tensor) -> Self {
        let labels = logits.nrows();
        NoisyChannel {
            logits: store.add("channel.logits", logits),
            labels,
        }
    }

    /// Row-stochastic channel matrix.
    pub fn matrix(&self, store: &ParamStore) -> Tensor {
        softmax_rows(store.get(self.logits))
    }

    /// Noisy label distribution for each row of `clean`.
    pub fn apply(&self, g: &mut Graph, clean: Var) -> Var {
        let logits = g.param(self.logits);
        let channel = g.softmax_rows(logits);
        g.matmul(clean, channel)
    }
}

/// `p(noisy = j) = Σ_i p(noisy = j | clean = i) · p(clean = i)`.
pub fn noisy_channel_forward(clean: &[f64], channel: &Tensor) -> Result<Vec<f64>> {
    if channel.nrows() != clean.len() || channel.ncols() != clean.len() {
        return Err(Error::Dimension(format!(
            "{} clean probabilities for a {}x{} channel",
            clean.len(),
            channel.nrows(),
            channel.ncols()
        )));
    }
    Ok((0..channel.ncols())
        .map(|j| clean.iter().enumerate().map(|(i, p)| p * channel[[i, j]]).sum())
        .collect())
}

/// Channel logits `ln(p + ε)` from an estimated confusion matrix.
pub fn init_channel(confusion: &ConfusionMatrix, labels: usize) -> Result<Tensor> {
    let probs = &confusion.probs;
    if probs.nrows() != labels || probs.ncols() != labels {
        return Err(Error::Dimension(format!(
            "confusion matrix is {}x{}, label catalog has {labels} labels",
            probs.nrows(),
            probs.ncols()
        )));
    }
    Ok(probs.mapv(|p| (p + CHANNEL_EPSILON).ln()))
}

/// Inverted-dropout mask: each entry is 0 with probability `p`, otherwise
/// `1/(1-p)`.
pub fn dropout_mask(rng: &mut impl Rng, rows: usize, cols: usize, p: f64) -> Tensor {
    let keep = 1.0 / (1.0 - p);
    Array2::from_shape_fn((rows, cols), |_| if rng.gen::<f64>() < p { 0.0 } else { keep })
}

pub fn dropout(v: &[f64], p: f64, training: bool, rng: &mut impl Rng) -> Result<Vec<f64>> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::InvalidArgument(format!("dropout probability {p} outside [0, 1)")));
    }
    if !training || p == 0.0 {
        return Ok(v.to_vec());
    }
    let mask = dropout_mask(rng, 1, v.len(), p);
    Ok(v.iter().zip(mask.iter()).map(|(x, m)| x * m).collect())
}
