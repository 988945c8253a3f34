//! Windowed one-dimensional convolutional regressor.
//!
//! Each lookback window is treated as `n_features` channels over the time
//! axis. Valid (unpadded) convolutions with tanh nonlinearities feed a global
//! average pool, a tanh dense layer and a linear scalar head. Trained by
//! mini-batch gradient descent on squared error; backpropagation is written
//! by hand and validated by the finite-difference check.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::net_common::{check_window_shape, init_uniform, train_loop};
use super::{weights_base64, DiffNet, ModelError, Optimizer};
use crate::featureset::WindowSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvLayerSpec {
    pub channels: usize,
    pub kernel: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ConvNetConfig {
    pub lookback: usize,
    pub conv_layers: Vec<ConvLayerSpec>,
    pub head_width: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub optimizer: Optimizer,
    pub seed: u64,
}

impl Default for ConvNetConfig {
    fn default() -> Self {
        ConvNetConfig {
            lookback: 60,
            conv_layers: vec![ConvLayerSpec {
                channels: 8,
                kernel: 5,
            }],
            head_width: 8,
            epochs: 100,
            learning_rate: 0.01,
            batch_size: 64,
            optimizer: Optimizer::Sgd,
            seed: 0,
        }
    }
}

impl ConvNetConfig {
    fn validate(&self) -> Result<(), ModelError> {
        if self.epochs < 1 {
            return Err(ModelError::InvalidConfig("epochs must be >= 1".into()));
        }
        if self.lookback < 1 {
            return Err(ModelError::InvalidConfig("lookback must be >= 1".into()));
        }
        if self.head_width < 1 {
            return Err(ModelError::InvalidConfig("head width must be >= 1".into()));
        }
        let mut t = self.lookback;
        for layer in &self.conv_layers {
            if layer.kernel > self.lookback {
                return Err(ModelError::InvalidConfig(
                    "kernel width must not exceed lookback".into(),
                ));
            }
            if layer.kernel < 1 || layer.channels < 1 {
                return Err(ModelError::InvalidConfig(
                    "conv layer needs kernel >= 1 and channels >= 1".into(),
                ));
            }
            if t < layer.kernel {
                return Err(ModelError::InvalidConfig(
                    "time axis shrinks below 1 before the last conv layer".into(),
                ));
            }
            t = t - layer.kernel + 1;
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct LayerDims {
    c_in: usize,
    c_out: usize,
    kernel: usize,
    t_in: usize,
    t_out: usize,
    w_off: usize,
    b_off: usize,
}

#[derive(Debug, Clone)]
struct ConvLayout {
    layers: Vec<LayerDims>,
    pooled_dim: usize,
    head_width: usize,
    h1_w: usize,
    h1_b: usize,
    h2_w: usize,
    h2_b: usize,
    total: usize,
}

fn layout(n_features: usize, cfg: &ConvNetConfig) -> ConvLayout {
    let mut layers = Vec::new();
    let mut c_in = n_features;
    let mut t = cfg.lookback;
    let mut off = 0usize;
    for spec in &cfg.conv_layers {
        let dims = LayerDims {
            c_in,
            c_out: spec.channels,
            kernel: spec.kernel,
            t_in: t,
            t_out: t - spec.kernel + 1,
            w_off: off,
            b_off: off + spec.channels * c_in * spec.kernel,
        };
        off = dims.b_off + spec.channels;
        c_in = spec.channels;
        t = dims.t_out;
        layers.push(dims);
    }
    let pooled_dim = c_in;
    let h1_w = off;
    let h1_b = h1_w + cfg.head_width * pooled_dim;
    let h2_w = h1_b + cfg.head_width;
    let h2_b = h2_w + cfg.head_width;
    ConvLayout {
        layers,
        pooled_dim,
        head_width: cfg.head_width,
        h1_w,
        h1_b,
        h2_w,
        h2_b,
        total: h2_b + 1,
    }
}

/// Per-window forward cache for backpropagation.
struct Cache {
    /// Post-tanh activations per conv layer, each `c_out * t_out`.
    activations: Vec<Vec<f64>>,
    pooled: Vec<f64>,
    hidden: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvModel {
    pub version: u32,
    pub config: ConvNetConfig,
    pub n_features: usize,
    #[serde(with = "weights_base64")]
    pub params: Vec<f64>,
    /// Mean training loss per epoch.
    pub loss_trace: Vec<f64>,
}

impl ConvModel {
    /// Freshly initialized (untrained) network.
    pub fn init(n_features: usize, cfg: &ConvNetConfig) -> Result<ConvModel, ModelError> {
        cfg.validate()?;
        if n_features == 0 {
            return Err(ModelError::InvalidConfig("need at least one feature".into()));
        }
        let lay = layout(n_features, cfg);
        let mut params = vec![0.0; lay.total];
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        for dims in &lay.layers {
            init_uniform(
                &mut rng,
                dims.c_in * dims.kernel,
                &mut params[dims.w_off..dims.b_off],
            );
        }
        let (h1_w, h1_b, h2_w, h2_b) = (lay.h1_w, lay.h1_b, lay.h2_w, lay.h2_b);
        init_uniform(&mut rng, lay.pooled_dim, &mut params[h1_w..h1_b]);
        init_uniform(&mut rng, lay.head_width, &mut params[h2_w..h2_b]);
        Ok(ConvModel {
            version: 1,
            config: cfg.clone(),
            n_features,
            params,
            loss_trace: Vec::new(),
        })
    }

    fn forward(&self, lay: &ConvLayout, window: &[f64]) -> (f64, Cache) {
        let p = &self.params;
        let mut activations: Vec<Vec<f64>> = Vec::with_capacity(lay.layers.len());
        // The raw window is channel-major-accessed input: in[c][t] = window[t*F + c].
        for (l, dims) in lay.layers.iter().enumerate() {
            let mut out = vec![0.0; dims.c_out * dims.t_out];
            let read_in = |c: usize, t: usize| -> f64 {
                if l == 0 {
                    window[t * self.n_features + c]
                } else {
                    activations[l - 1][c * dims.t_in + t]
                }
            };
            for co in 0..dims.c_out {
                let bias = p[dims.b_off + co];
                for t in 0..dims.t_out {
                    let mut acc = bias;
                    for ci in 0..dims.c_in {
                        let w_base = dims.w_off + (co * dims.c_in + ci) * dims.kernel;
                        for k in 0..dims.kernel {
                            acc += p[w_base + k] * read_in(ci, t + k);
                        }
                    }
                    out[co * dims.t_out + t] = acc.tanh();
                }
            }
            activations.push(out);
        }
        // Global average pooling over the time axis.
        let (last_c, last_t) = match lay.layers.last() {
            Some(d) => (d.c_out, d.t_out),
            None => (self.n_features, self.config.lookback),
        };
        let mut pooled = vec![0.0; lay.pooled_dim];
        for c in 0..last_c {
            let mut sum = 0.0;
            for t in 0..last_t {
                sum += match activations.last() {
                    Some(a) => a[c * last_t + t],
                    None => window[t * self.n_features + c],
                };
            }
            pooled[c] = sum / last_t as f64;
        }
        let mut hidden = vec![0.0; lay.head_width];
        for j in 0..lay.head_width {
            let mut acc = p[lay.h1_b + j];
            for c in 0..lay.pooled_dim {
                acc += p[lay.h1_w + j * lay.pooled_dim + c] * pooled[c];
            }
            hidden[j] = acc.tanh();
        }
        let mut out = p[lay.h2_b];
        for j in 0..lay.head_width {
            out += p[lay.h2_w + j] * hidden[j];
        }
        (
            out,
            Cache {
                activations,
                pooled,
                hidden,
            },
        )
    }

    fn backward(
        &self,
        lay: &ConvLayout,
        window: &[f64],
        cache: &Cache,
        dout: f64,
        grads: &mut [f64],
    ) {
        let p = &self.params;
        // Head.
        grads[lay.h2_b] += dout;
        let mut dhidden = vec![0.0; lay.head_width];
        for j in 0..lay.head_width {
            grads[lay.h2_w + j] += dout * cache.hidden[j];
            dhidden[j] = dout * p[lay.h2_w + j];
        }
        let mut dpooled = vec![0.0; lay.pooled_dim];
        for j in 0..lay.head_width {
            let dpre = dhidden[j] * (1.0 - cache.hidden[j] * cache.hidden[j]);
            grads[lay.h1_b + j] += dpre;
            for c in 0..lay.pooled_dim {
                grads[lay.h1_w + j * lay.pooled_dim + c] += dpre * cache.pooled[c];
                dpooled[c] += dpre * p[lay.h1_w + j * lay.pooled_dim + c];
            }
        }
        // Distribute pooling gradient onto the last activation map.
        let Some(last) = lay.layers.last() else {
            return; // no conv layers: gradient stops at the raw input
        };
        let mut dact = vec![0.0; last.c_out * last.t_out];
        for c in 0..last.c_out {
            let share = dpooled[c] / last.t_out as f64;
            for t in 0..last.t_out {
                dact[c * last.t_out + t] = share;
            }
        }
        // Conv layers, last to first.
        for (l, dims) in lay.layers.iter().enumerate().rev() {
            let act = &cache.activations[l];
            let mut din = vec![0.0; dims.c_in * dims.t_in];
            let read_in = |c: usize, t: usize| -> f64 {
                if l == 0 {
                    window[t * self.n_features + c]
                } else {
                    cache.activations[l - 1][c * dims.t_in + t]
                }
            };
            for co in 0..dims.c_out {
                for t in 0..dims.t_out {
                    let a = act[co * dims.t_out + t];
                    let dpre = dact[co * dims.t_out + t] * (1.0 - a * a);
                    if dpre == 0.0 {
                        continue;
                    }
                    grads[dims.b_off + co] += dpre;
                    for ci in 0..dims.c_in {
                        let w_base = dims.w_off + (co * dims.c_in + ci) * dims.kernel;
                        for k in 0..dims.kernel {
                            grads[w_base + k] += dpre * read_in(ci, t + k);
                            din[ci * dims.t_in + t + k] += dpre * p[w_base + k];
                        }
                    }
                }
            }
            dact = din; // becomes the post-tanh gradient of the previous layer
        }
    }

    pub fn predict(&self, windows: &WindowSet) -> Result<Vec<f64>, ModelError> {
        check_window_shape(windows, self.config.lookback, self.n_features)?;
        let lay = layout(self.n_features, &self.config);
        Ok((0..windows.n_windows)
            .map(|i| self.forward(&lay, windows.window(i)).0)
            .collect())
    }
}

impl DiffNet for ConvModel {
    fn params(&self) -> &[f64] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn batch_loss(&self, windows: &WindowSet, batch: &[usize]) -> f64 {
        let lay = layout(self.n_features, &self.config);
        let mut loss = 0.0;
        for &i in batch {
            let (pred, _) = self.forward(&lay, windows.window(i));
            let err = pred - windows.targets[i];
            loss += err * err;
        }
        loss / batch.len().max(1) as f64
    }

    fn batch_loss_and_grad(&self, windows: &WindowSet, batch: &[usize]) -> (f64, Vec<f64>) {
        let lay = layout(self.n_features, &self.config);
        let mut grads = vec![0.0; self.params.len()];
        let mut loss = 0.0;
        let scale = 1.0 / batch.len().max(1) as f64;
        for &i in batch {
            let window = windows.window(i);
            let (pred, cache) = self.forward(&lay, window);
            let err = pred - windows.targets[i];
            loss += err * err;
            self.backward(&lay, window, &cache, 2.0 * err * scale, &mut grads);
        }
        (loss * scale, grads)
    }
}

/// Train a conv net on a window set.
pub fn train_conv(windows: &WindowSet, cfg: &ConvNetConfig) -> Result<ConvModel, ModelError> {
    if windows.n_windows == 0 {
        return Err(ModelError::TooFewRows { n: 0, min: 1 });
    }
    if windows.lookback != cfg.lookback {
        return Err(ModelError::ShapeMismatch {
            expected: format!("lookback {}", cfg.lookback),
            got: format!("lookback {}", windows.lookback),
        });
    }
    let mut model = ConvModel::init(windows.n_features, cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x636f6e76));
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

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::grad_check;
    use rand_chacha::ChaCha8Rng;

    fn toy_windows(n: usize, lookback: usize, f: usize, seed: u64) -> WindowSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data: Vec<f64> = (0..n * lookback * f).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let targets: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        WindowSet {
            n_windows: n,
            lookback,
            n_features: f,
            data,
            targets,
        }
    }

    fn tiny_config(lookback: usize) -> ConvNetConfig {
        ConvNetConfig {
            lookback,
            conv_layers: vec![ConvLayerSpec {
                channels: 3,
                kernel: 3,
            }],
            head_width: 4,
            epochs: 1,
            learning_rate: 0.01,
            batch_size: 2,
            optimizer: Optimizer::Sgd,
            seed: 1,
        }
    }

    #[test]
    fn zeroed_head_outputs_zero_loss_on_zero_targets() {
        let mut windows = toy_windows(5, 8, 2, 3);
        windows.targets = vec![0.0; 5];
        let mut model = ConvModel::init(2, &tiny_config(8)).unwrap();
        // Zero the dense head only: output becomes the zero head bias.
        let lay_total = model.params.len();
        let head_start = lay_total - (4 * 3 + 4 + 4 + 1);
        for p in &mut model.params[head_start..] {
            *p = 0.0;
        }
        let loss = model.batch_loss(&windows, &[0, 1, 2, 3, 4]);
        assert_eq!(loss, 0.0);
    }

    #[test]
    fn gradient_check_full_network() {
        let windows = toy_windows(3, 8, 2, 4);
        let model = ConvModel::init(2, &tiny_config(8)).unwrap();
        let err = grad_check(&model, &windows, &[0, 1, 2], 1e-5);
        assert!(err < 1e-4, "max relative gradient error {err}");
    }

    #[test]
    fn gradient_check_two_layer_network() {
        let windows = toy_windows(3, 10, 3, 5);
        let cfg = ConvNetConfig {
            lookback: 10,
            conv_layers: vec![
                ConvLayerSpec {
                    channels: 4,
                    kernel: 3,
                },
                ConvLayerSpec {
                    channels: 3,
                    kernel: 3,
                },
            ],
            head_width: 3,
            epochs: 1,
            learning_rate: 0.01,
            batch_size: 3,
            optimizer: Optimizer::Sgd,
            seed: 6,
        };
        let model = ConvModel::init(3, &cfg).unwrap();
        let err = grad_check(&model, &windows, &[0, 1, 2], 1e-5);
        assert!(err < 1e-4, "max relative gradient error {err}");
    }

    #[test]
    fn training_reduces_loss_on_learnable_data() {
        // Target = mean of feature 0 over the window: linearly learnable.
        let n = 200;
        let lookback = 8;
        let f = 2;
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut data = Vec::new();
        let mut targets = Vec::new();
        for _ in 0..n {
            let mut sum = 0.0;
            for _ in 0..lookback {
                let v: f64 = rng.gen_range(-1.0..1.0);
                let w: f64 = rng.gen_range(-1.0..1.0);
                sum += v;
                data.push(v);
                data.push(w);
            }
            targets.push(sum / lookback as f64);
        }
        let windows = WindowSet {
            n_windows: n,
            lookback,
            n_features: f,
            data,
            targets,
        };
        let cfg = ConvNetConfig {
            epochs: 60,
            learning_rate: 0.02,
            ..tiny_config(lookback)
        };
        let model = train_conv(&windows, &cfg).unwrap();
        let first = model.loss_trace[0];
        let last = *model.loss_trace.last().unwrap();
        assert!(
            last < first * 0.5,
            "loss did not fall: {first} -> {last}"
        );
    }

    #[test]
    fn seeded_training_is_deterministic() {
        let windows = toy_windows(20, 8, 2, 9);
        let cfg = ConvNetConfig {
            epochs: 3,
            ..tiny_config(8)
        };
        let a = train_conv(&windows, &cfg).unwrap();
        let b = train_conv(&windows, &cfg).unwrap();
        let ja = crate::models::TrainedModel::Conv(a).to_json().unwrap();
        let jb = crate::models::TrainedModel::Conv(b).to_json().unwrap();
        assert_eq!(ja, jb);
    }

    #[test]
    fn predict_shape_mismatch() {
        let windows = toy_windows(4, 8, 2, 10);
        let model = ConvModel::init(2, &tiny_config(8)).unwrap();
        let wrong = toy_windows(4, 8, 3, 11);
        assert!(matches!(
            model.predict(&wrong),
            Err(ModelError::ShapeMismatch { .. })
        ));
        assert!(model.predict(&windows).is_ok());
    }

    #[test]
    fn kernel_wider_than_lookback_is_invalid() {
        let cfg = ConvNetConfig {
            lookback: 4,
            conv_layers: vec![ConvLayerSpec {
                channels: 2,
                kernel: 5,
            }],
            ..tiny_config(4)
        };
        assert!(matches!(
            ConvModel::init(2, &cfg),
            Err(ModelError::InvalidConfig(_))
        ));
    }

    #[test]
    fn batch_prediction_equals_per_window() {
        let windows = toy_windows(6, 8, 2, 12);
        let model = ConvModel::init(2, &tiny_config(8)).unwrap();
        let batch = model.predict(&windows).unwrap();
        for i in 0..windows.n_windows {
            let single = WindowSet {
                n_windows: 1,
                lookback: windows.lookback,
                n_features: windows.n_features,
                data: windows.window(i).to_vec(),
                targets: vec![windows.targets[i]],
            };
            assert_eq!(model.predict(&single).unwrap()[0], batch[i]);
        }
    }
}
