//! Gated recurrent regressor (LSTM cell) unrolled over the lookback window.
//!
//! Input, forget and output gates plus a tanh candidate drive a cell state;
//! the final hidden state feeds a linear scalar head. Backpropagation through
//! time runs over the full window and is validated by the finite-difference
//! check. The forget-gate bias starts at 1 so early training retains state.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::net_common::{check_window_shape, init_uniform, train_loop};
use super::{weights_base64, DiffNet, ModelError, Optimizer};
use crate::featureset::WindowSet;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RecurrentConfig {
    pub lookback: usize,
    pub hidden_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub optimizer: Optimizer,
    pub seed: u64,
}

impl Default for RecurrentConfig {
    fn default() -> Self {
        RecurrentConfig {
            lookback: 60,
            hidden_size: 8,
            epochs: 100,
            learning_rate: 0.05,
            batch_size: 64,
            optimizer: Optimizer::Sgd,
            seed: 0,
        }
    }
}

impl RecurrentConfig {
    fn validate(&self) -> Result<(), ModelError> {
        if self.hidden_size < 1 {
            return Err(ModelError::InvalidConfig("hidden size must be >= 1".into()));
        }
        if self.epochs < 1 {
            return Err(ModelError::InvalidConfig("epochs must be >= 1".into()));
        }
        if self.lookback < 1 {
            return Err(ModelError::InvalidConfig("lookback must be >= 1".into()));
        }
        Ok(())
    }
}

/// Parameter layout: gate order is `[input, forget, candidate, output]`, each
/// block `hidden_size` rows.
///
/// `w_x`: 4H x F, `w_h`: 4H x H, `b`: 4H, `w_out`: H, `b_out`: 1.
#[derive(Debug, Clone, Copy)]
struct Layout {
    f: usize,
    h: usize,
    w_x: usize,
    w_h: usize,
    b: usize,
    w_out: usize,
    b_out: usize,
    total: usize,
}

fn layout(n_features: usize, hidden: usize) -> Layout {
    let w_x = 0;
    let w_h = w_x + 4 * hidden * n_features;
    let b = w_h + 4 * hidden * hidden;
    let w_out = b + 4 * hidden;
    let b_out = w_out + hidden;
    Layout {
        f: n_features,
        h: hidden,
        w_x,
        w_h,
        b,
        w_out,
        b_out,
        total: b_out + 1,
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Per-step forward cache.
struct StepCache {
    gate_i: Vec<f64>,
    gate_f: Vec<f64>,
    gate_g: Vec<f64>,
    gate_o: Vec<f64>,
    cell_tanh: Vec<f64>,
    hidden_prev: Vec<f64>,
    cell_prev: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecurrentModel {
    pub version: u32,
    pub config: RecurrentConfig,
    pub n_features: usize,
    #[serde(with = "weights_base64")]
    pub params: Vec<f64>,
    /// Mean training loss per epoch.
    pub loss_trace: Vec<f64>,
}

impl RecurrentModel {
    pub fn init(n_features: usize, cfg: &RecurrentConfig) -> Result<RecurrentModel, ModelError> {
        cfg.validate()?;
        if n_features == 0 {
            return Err(ModelError::InvalidConfig("need at least one feature".into()));
        }
        let lay = layout(n_features, cfg.hidden_size);
        let mut params = vec![0.0; lay.total];
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        init_uniform(&mut rng, n_features, &mut params[lay.w_x..lay.w_h]);
        init_uniform(&mut rng, cfg.hidden_size, &mut params[lay.w_h..lay.b]);
        init_uniform(&mut rng, cfg.hidden_size, &mut params[lay.w_out..lay.b_out]);
        // Forget-gate bias starts open.
        for j in 0..cfg.hidden_size {
            params[lay.b + lay.h + j] = 1.0;
        }
        Ok(RecurrentModel {
            version: 1,
            config: cfg.clone(),
            n_features,
            params,
            loss_trace: Vec::new(),
        })
    }

    fn forward(&self, lay: &Layout, window: &[f64], caches: Option<&mut Vec<StepCache>>) -> f64 {
        let p = &self.params;
        let h = lay.h;
        let mut hidden = vec![0.0; h];
        let mut cell = vec![0.0; h];
        let mut caches = caches;
        for t in 0..self.config.lookback {
            let x = &window[t * lay.f..(t + 1) * lay.f];
            let mut pre = vec![0.0; 4 * h];
            for row in 0..4 * h {
                let mut acc = p[lay.b + row];
                let wx_base = lay.w_x + row * lay.f;
                for (j, &xv) in x.iter().enumerate() {
                    acc += p[wx_base + j] * xv;
                }
                let wh_base = lay.w_h + row * h;
                for (j, &hv) in hidden.iter().enumerate() {
                    acc += p[wh_base + j] * hv;
                }
                pre[row] = acc;
            }
            let mut gate_i = vec![0.0; h];
            let mut gate_f = vec![0.0; h];
            let mut gate_g = vec![0.0; h];
            let mut gate_o = vec![0.0; h];
            for j in 0..h {
                gate_i[j] = sigmoid(pre[j]);
                gate_f[j] = sigmoid(pre[h + j]);
                gate_g[j] = pre[2 * h + j].tanh();
                gate_o[j] = sigmoid(pre[3 * h + j]);
            }
            let cell_prev = cell.clone();
            let hidden_prev = hidden.clone();
            let mut cell_tanh = vec![0.0; h];
            for j in 0..h {
                cell[j] = gate_f[j] * cell_prev[j] + gate_i[j] * gate_g[j];
                cell_tanh[j] = cell[j].tanh();
                hidden[j] = gate_o[j] * cell_tanh[j];
            }
            if let Some(caches) = caches.as_deref_mut() {
                caches.push(StepCache {
                    gate_i,
                    gate_f,
                    gate_g,
                    gate_o,
                    cell_tanh,
                    hidden_prev,
                    cell_prev,
                });
            }
        }
        let mut out = p[lay.b_out];
        for j in 0..h {
            out += p[lay.w_out + j] * hidden[j];
        }
        out
    }

    fn backward(
        &self,
        lay: &Layout,
        window: &[f64],
        caches: &[StepCache],
        dout: f64,
        grads: &mut [f64],
    ) {
        let p = &self.params;
        let h = lay.h;
        let last_hidden: Vec<f64> = caches
            .last()
            .map(|c| {
                (0..h)
                    .map(|j| c.gate_o[j] * c.cell_tanh[j])
                    .collect()
            })
            .unwrap_or_else(|| vec![0.0; h]);
        grads[lay.b_out] += dout;
        let mut dhidden = vec![0.0; h];
        for j in 0..h {
            grads[lay.w_out + j] += dout * last_hidden[j];
            dhidden[j] = dout * p[lay.w_out + j];
        }
        let mut dcell = vec![0.0; h];
        for t in (0..self.config.lookback).rev() {
            let cache = &caches[t];
            let x = &window[t * lay.f..(t + 1) * lay.f];
            let mut dpre = vec![0.0; 4 * h];
            for j in 0..h {
                let do_ = dhidden[j] * cache.cell_tanh[j];
                dcell[j] += dhidden[j] * cache.gate_o[j] * (1.0 - cache.cell_tanh[j].powi(2));
                let di = dcell[j] * cache.gate_g[j];
                let dg = dcell[j] * cache.gate_i[j];
                let df = dcell[j] * cache.cell_prev[j];
                dpre[j] = di * cache.gate_i[j] * (1.0 - cache.gate_i[j]);
                dpre[h + j] = df * cache.gate_f[j] * (1.0 - cache.gate_f[j]);
                dpre[2 * h + j] = dg * (1.0 - cache.gate_g[j].powi(2));
                dpre[3 * h + j] = do_ * cache.gate_o[j] * (1.0 - cache.gate_o[j]);
            }
            // Carry to the previous step.
            let mut dhidden_prev = vec![0.0; h];
            for row in 0..4 * h {
                let g = dpre[row];
                if g == 0.0 {
                    continue;
                }
                grads[lay.b + row] += g;
                let wx_base = lay.w_x + row * lay.f;
                for (j, &xv) in x.iter().enumerate() {
                    grads[wx_base + j] += g * xv;
                }
                let wh_base = lay.w_h + row * h;
                for j in 0..h {
                    grads[wh_base + j] += g * cache.hidden_prev[j];
                    dhidden_prev[j] += g * p[wh_base + j];
                }
            }
            for j in 0..h {
                dcell[j] *= cache.gate_f[j];
            }
            dhidden = dhidden_prev;
        }
    }

    pub fn predict(&self, windows: &WindowSet) -> Result<Vec<f64>, ModelError> {
        check_window_shape(windows, self.config.lookback, self.n_features)?;
        let lay = layout(self.n_features, self.config.hidden_size);
        Ok((0..windows.n_windows)
            .map(|i| self.forward(&lay, windows.window(i), None))
            .collect())
    }
}

impl DiffNet for RecurrentModel {
    fn params(&self) -> &[f64] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn batch_loss(&self, windows: &WindowSet, batch: &[usize]) -> f64 {
        let lay = layout(self.n_features, self.config.hidden_size);
        let mut loss = 0.0;
        for &i in batch {
            let pred = self.forward(&lay, windows.window(i), None);
            let err = pred - windows.targets[i];
            loss += err * err;
        }
        loss / batch.len().max(1) as f64
    }

    fn batch_loss_and_grad(&self, windows: &WindowSet, batch: &[usize]) -> (f64, Vec<f64>) {
        let lay = layout(self.n_features, self.config.hidden_size);
        let mut grads = vec![0.0; self.params.len()];
        let mut loss = 0.0;
        let scale = 1.0 / batch.len().max(1) as f64;
        let mut caches: Vec<StepCache> = Vec::with_capacity(self.config.lookback);
        for &i in batch {
            caches.clear();
            let window = windows.window(i);
            let pred = self.forward(&lay, window, Some(&mut caches));
            let err = pred - windows.targets[i];
            loss += err * err;
            self.backward(&lay, window, &caches, 2.0 * err * scale, &mut grads);
        }
        (loss * scale, grads)
    }
}

/// Train the recurrent model on a window set.
pub fn train_recurrent(
    windows: &WindowSet,
    cfg: &RecurrentConfig,
) -> Result<RecurrentModel, ModelError> {
    if windows.n_windows == 0 {
        return Err(ModelError::TooFewRows { n: 0, min: 1 });
    }
    if windows.lookback != cfg.lookback {
        return Err(ModelError::ShapeMismatch {
            expected: format!("lookback {}", cfg.lookback),
            got: format!("lookback {}", windows.lookback),
        });
    }
    let mut model = RecurrentModel::init(windows.n_features, cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x6c73746d));
    let trace = train_loop(
        &mut model,
        windows,
        cfg.epochs,
        cfg.batch_size,
        cfg.learning_rate,
        cfg.optimizer,
        &mut rng,
    )?;
    model.loss_trace = trace;
    Ok(model)
}
