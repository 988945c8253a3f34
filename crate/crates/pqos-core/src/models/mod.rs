//! The three model families: gradient-boosted regression trees for tabular
//! rows, and a 1-D convolutional network plus a gated recurrent network for
//! 60-step lookback windows. Everything is trained deterministically from a
//! seed in double precision; trained models serialize to versioned JSON
//! (weight tensors as base64 blobs) and round-trip bit-exactly.

mod conv;
mod gbt;
mod recurrent;

pub use conv::{train_conv, ConvLayerSpec, ConvModel, ConvNetConfig};
pub use gbt::{train_gbt, GbtConfig, GbtModel};
pub use recurrent::{train_recurrent, RecurrentConfig, RecurrentModel};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::featureset::{FeatureDataset, WindowSet};

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("too few rows: {n} < {min}")]
    TooFewRows { n: usize, min: usize },
    #[error("non-finite loss at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },
    #[error("input shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },
    #[error("model serialization failed: {0}")]
    Serialization(String),
}

/// Model family identifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Gbt,
    Conv,
    Recurrent,
}

impl ModelKind {
    pub fn label(&self) -> &'static str {
        match self {
            ModelKind::Gbt => "gbt",
            ModelKind::Conv => "conv",
            ModelKind::Recurrent => "recurrent",
        }
    }

    pub fn parse(s: &str) -> Option<ModelKind> {
        match s.to_ascii_lowercase().as_str() {
            "gbt" | "xgb" | "tree" => Some(ModelKind::Gbt),
            "conv" | "cnn" => Some(ModelKind::Conv),
            "recurrent" | "lstm" | "rnn" => Some(ModelKind::Recurrent),
            _ => None,
        }
    }

    pub const ALL: [ModelKind; 3] = [ModelKind::Gbt, ModelKind::Conv, ModelKind::Recurrent];

    pub fn is_sequential(&self) -> bool {
        matches!(self, ModelKind::Conv | ModelKind::Recurrent)
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

/// Gradient descent flavor for the network trainers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    /// Plain mini-batch gradient descent with a fixed learning rate.
    #[default]
    Sgd,
    /// Adaptive moment estimation.
    Adam,
}

/// A fitted model of any family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "lowercase")]
pub enum TrainedModel {
    Gbt(GbtModel),
    Conv(ConvModel),
    Recurrent(RecurrentModel),
}

impl TrainedModel {
    pub fn kind(&self) -> ModelKind {
        match self {
            TrainedModel::Gbt(_) => ModelKind::Gbt,
            TrainedModel::Conv(_) => ModelKind::Conv,
            TrainedModel::Recurrent(_) => ModelKind::Recurrent,
        }
    }

    /// Training loss per boosting stage or epoch.
    pub fn loss_trace(&self) -> &[f64] {
        match self {
            TrainedModel::Gbt(m) => &m.loss_trace,
            TrainedModel::Conv(m) => &m.loss_trace,
            TrainedModel::Recurrent(m) => &m.loss_trace,
        }
    }

    pub fn to_json(&self) -> Result<String, ModelError> {
        serde_json::to_string(self).map_err(|e| ModelError::Serialization(e.to_string()))
    }

    pub fn from_json(json: &str) -> Result<TrainedModel, ModelError> {
        serde_json::from_str(json).map_err(|e| ModelError::Serialization(e.to_string()))
    }
}

/// Prediction input: feature rows for the tree model, lookback windows for
/// the sequence models.
pub enum ModelInput<'a> {
    Rows(&'a FeatureDataset),
    Windows(&'a WindowSet),
}

/// Deterministic prediction with shape checking.
pub fn predict(model: &TrainedModel, input: &ModelInput<'_>) -> Result<Vec<f64>, ModelError> {
    match (model, input) {
        (TrainedModel::Gbt(m), ModelInput::Rows(rows)) => m.predict_dataset(rows),
        (TrainedModel::Conv(m), ModelInput::Windows(w)) => m.predict(w),
        (TrainedModel::Recurrent(m), ModelInput::Windows(w)) => m.predict(w),
        (m, ModelInput::Rows(_)) => Err(ModelError::ShapeMismatch {
            expected: format!("{} expects windows", m.kind()),
            got: "feature rows".to_string(),
        }),
        (m, ModelInput::Windows(_)) => Err(ModelError::ShapeMismatch {
            expected: format!("{} expects feature rows", m.kind()),
            got: "windows".to_string(),
        }),
    }
}

/// Networks expose their flat parameter vector and batch loss/gradient so the
/// finite-difference check below can validate the hand-written
/// backpropagation.
pub trait DiffNet {
    fn params(&self) -> &[f64];
    fn params_mut(&mut self) -> &mut [f64];
    fn batch_loss(&self, windows: &WindowSet, batch: &[usize]) -> f64;
    fn batch_loss_and_grad(&self, windows: &WindowSet, batch: &[usize]) -> (f64, Vec<f64>);
}

/// Compare the analytic gradient against central finite differences for every
/// parameter; returns the maximum relative error
/// `|g_a - g_fd| / max(|g_a|, |g_fd|, 1e-8)`.
pub fn grad_check<M: DiffNet + Clone>(
    model: &M,
    windows: &WindowSet,
    batch: &[usize],
    epsilon: f64,
) -> f64 {
    let (_, analytic) = model.batch_loss_and_grad(windows, batch);
    let mut probe = model.clone();
    let mut max_rel: f64 = 0.0;
    for p in 0..analytic.len() {
        let original = probe.params()[p];
        probe.params_mut()[p] = original + epsilon;
        let loss_plus = probe.batch_loss(windows, batch);
        probe.params_mut()[p] = original - epsilon;
        let loss_minus = probe.batch_loss(windows, batch);
        probe.params_mut()[p] = original;
        let fd = (loss_plus - loss_minus) / (2.0 * epsilon);
        let denom = analytic[p].abs().max(fd.abs()).max(1e-8);
        max_rel = max_rel.max((analytic[p] - fd).abs() / denom);
    }
    max_rel
}

/// Serde codec storing `Vec<f64>` as base64 of the little-endian bytes, so
/// weight blobs survive JSON round trips bit-exactly.
pub(crate) mod weights_base64 {
    use base64::engine::general_purpose::STANDARD;
    use base64::Engine;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(values: &[f64], ser: S) -> Result<S::Ok, S::Error> {
        let mut bytes = Vec::with_capacity(values.len() * 8);
        for v in values {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        STANDARD.encode(bytes).serialize(ser)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(de: D) -> Result<Vec<f64>, D::Error> {
        let encoded = String::deserialize(de)?;
        let bytes = STANDARD
            .decode(encoded)
            .map_err(serde::de::Error::custom)?;
        if bytes.len() % 8 != 0 {
            return Err(serde::de::Error::custom("weight blob length not 8-aligned"));
        }
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

/// Shared trainer plumbing for the two network families.
pub(crate) mod net_common {
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    use super::{DiffNet, ModelError, Optimizer};
    use crate::featureset::WindowSet;

    /// Uniform fan-in initialization: U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
    pub fn init_uniform(rng: &mut ChaCha8Rng, fan_in: usize, out: &mut [f64]) {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        for w in out {
            *w = rng.gen_range(-bound..bound);
        }
    }

    pub struct AdamState {
        m: Vec<f64>,
        v: Vec<f64>,
        t: u64,
    }

    impl AdamState {
        pub fn new(n: usize) -> Self {
            AdamState {
                m: vec![0.0; n],
                v: vec![0.0; n],
                t: 0,
            }
        }
    }

    pub fn apply_update(
        optimizer: Optimizer,
        lr: f64,
        params: &mut [f64],
        grad: &[f64],
        adam: &mut AdamState,
    ) {
        match optimizer {
            Optimizer::Sgd => {
                for (p, g) in params.iter_mut().zip(grad) {
                    *p -= lr * g;
                }
            }
            Optimizer::Adam => {
                const B1: f64 = 0.9;
                const B2: f64 = 0.999;
                const EPS: f64 = 1e-8;
                adam.t += 1;
                let bc1 = 1.0 - B1.powi(adam.t as i32);
                let bc2 = 1.0 - B2.powi(adam.t as i32);
                for i in 0..params.len() {
                    adam.m[i] = B1 * adam.m[i] + (1.0 - B1) * grad[i];
                    adam.v[i] = B2 * adam.v[i] + (1.0 - B2) * grad[i] * grad[i];
                    let m_hat = adam.m[i] / bc1;
                    let v_hat = adam.v[i] / bc2;
                    params[i] -= lr * m_hat / (v_hat.sqrt() + EPS);
                }
            }
        }
    }

    /// Mini-batch training loop shared by both nets: seeded shuffling, batch
    /// loss averaging and the non-finite abort. Returns per-epoch mean loss.
    pub fn train_loop<M: DiffNet>(
        model: &mut M,
        windows: &WindowSet,
        epochs: usize,
        batch_size: usize,
        learning_rate: f64,
        optimizer: Optimizer,
        rng: &mut ChaCha8Rng,
    ) -> Result<Vec<f64>, ModelError> {
        let n = windows.n_windows;
        let batch_size = batch_size.max(1).min(n);
        let mut order: Vec<usize> = (0..n).collect();
        let mut adam = AdamState::new(model.params().len());
        let mut trace = Vec::with_capacity(epochs);
        for epoch in 0..epochs {
            order.shuffle(rng);
            let mut loss_sum = 0.0;
            let mut seen = 0usize;
            for batch in order.chunks(batch_size) {
                let (loss, grad) = model.batch_loss_and_grad(windows, batch);
                if !loss.is_finite() {
                    return Err(ModelError::NonFiniteLoss { epoch });
                }
                apply_update(optimizer, learning_rate, model.params_mut(), &grad, &mut adam);
                loss_sum += loss * batch.len() as f64;
                seen += batch.len();
            }
            trace.push(loss_sum / seen.max(1) as f64);
        }
        Ok(trace)
    }

    pub fn check_window_shape(
        windows: &WindowSet,
        lookback: usize,
        n_features: usize,
    ) -> Result<(), ModelError> {
        if windows.lookback != lookback || windows.n_features != n_features {
            return Err(ModelError::ShapeMismatch {
                expected: format!("{lookback}x{n_features} windows"),
                got: format!("{}x{}", windows.lookback, windows.n_features),
            });
        }
        Ok(())
    }
}
