//! Conv1D x2 -> LSTM stack -> FC scalar-logit network, written from
//! scratch with exact gradients.
//!
//! All arithmetic runs in `f64`; parameters are kept on the `f32` grid so
//! the 32-bit weights file round-trips bit-exactly. A ReLU follows each
//! convolution; the sequence summary handed to the FC layer is the last
//! hidden state of the top LSTM layer.

mod adam;
mod conv;
mod io;
mod lstm;
mod train;

pub use adam::Adam;
pub use conv::{conv1d_backward, conv1d_forward, relu, relu_backward};
pub use io::{load_params, save_params, WEIGHTS_FORMAT_VERSION};
pub use lstm::{lstm_backward, lstm_forward, LstmLayerCache, LstmLayerParams};
pub use train::{train, EpochStat, TrainResult, TrainSignal};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pu::RiskError;
use crate::tensor::Tensor;

#[derive(Debug, Error)]
pub enum NetError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite activation")]
    NonFiniteActivation,
    #[error("empty dataset: {0}")]
    EmptyDataset(&'static str),
    #[error("training diverged at epoch {epoch}: non-finite loss")]
    DivergenceDetected { epoch: usize },
    #[error(transparent)]
    Risk(#[from] RiskError),
    #[error("invalid network config: {0}")]
    InvalidConfig(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("bad weights file: {0}")]
    BadWeightsFile(String),
}

/// Architecture and training hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub conv1_dim: usize,
    pub conv2_dim: usize,
    pub kernel_size: usize,
    pub lstm_layers: usize,
    pub lstm_dim: usize,
    pub input_channels: usize,
    pub seq_len: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub init_seed: u64,
}

impl Default for NetworkConfig {
    /// The tuned optimum of the default search space.
    fn default() -> Self {
        NetworkConfig {
            conv1_dim: 8,
            conv2_dim: 128,
            kernel_size: 3,
            lstm_layers: 2,
            lstm_dim: 16,
            input_channels: crate::dataio::NUM_CHANNELS,
            seq_len: 100,
            learning_rate: 1e-2,
            batch_size: 32,
            epochs: 50,
            init_seed: 0,
        }
    }
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<(), NetError> {
        for (name, v) in [
            ("conv1_dim", self.conv1_dim),
            ("conv2_dim", self.conv2_dim),
            ("kernel_size", self.kernel_size),
            ("lstm_layers", self.lstm_layers),
            ("lstm_dim", self.lstm_dim),
            ("input_channels", self.input_channels),
            ("seq_len", self.seq_len),
            ("batch_size", self.batch_size),
        ] {
            if v < 1 {
                return Err(NetError::InvalidConfig(format!("{name} must be >= 1")));
            }
        }
        if self.seq_len < self.kernel_size {
            return Err(NetError::InvalidConfig(format!(
                "seq_len {} shorter than kernel_size {}",
                self.seq_len, self.kernel_size
            )));
        }
        if self.learning_rate <= 0.0 || self.learning_rate.is_nan() {
            return Err(NetError::InvalidConfig("learning_rate must be > 0".into()));
        }
        Ok(())
    }
}

/// All weights of the network, versioned for serialization.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub format_version: u32,
    pub config: NetworkConfig,
    pub conv1_kernel: Tensor,
    pub conv1_bias: Tensor,
    pub conv2_kernel: Tensor,
    pub conv2_bias: Tensor,
    pub lstm: Vec<LstmLayerParams>,
    pub fc_weight: Tensor,
    pub fc_bias: Tensor,
}

impl ModelParams {
    /// Zero-valued parameters with shapes from `config`.
    pub fn zeros(config: &NetworkConfig) -> Result<Self, NetError> {
        config.validate()?;
        let c_in = config.input_channels;
        let k = config.kernel_size;
        let h = config.lstm_dim;
        let lstm = (0..config.lstm_layers)
            .map(|l| {
                let dim = if l == 0 { config.conv2_dim } else { h };
                LstmLayerParams::zeros(dim, h)
            })
            .collect();
        Ok(ModelParams {
            format_version: WEIGHTS_FORMAT_VERSION,
            config: config.clone(),
            conv1_kernel: Tensor::zeros(&[config.conv1_dim, c_in, k]),
            conv1_bias: Tensor::zeros(&[config.conv1_dim]),
            conv2_kernel: Tensor::zeros(&[config.conv2_dim, config.conv1_dim, k]),
            conv2_bias: Tensor::zeros(&[config.conv2_dim]),
            lstm,
            fc_weight: Tensor::zeros(&[1, h]),
            fc_bias: Tensor::zeros(&[1]),
        })
    }

    /// Seeded uniform initialization in +-sqrt(6 / (fan_in + fan_out)),
    /// everything rounded to the f32 grid. Biases draw from the same
    /// distribution as their layer's weights: an exactly-zero conv bias
    /// would park pre-activations exactly on the ReLU kink whenever a
    /// receptive field is all zero, breaking gradient checks.
    pub fn init(config: &NetworkConfig) -> Result<Self, NetError> {
        let mut params = Self::zeros(config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.init_seed);
        let k = config.kernel_size;
        let mut fill = |t: &mut Tensor, fan_in: usize, fan_out: usize| {
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for v in t.data_mut() {
                *v = rng.gen_range(-bound..bound);
            }
            t.quantize_f32();
        };
        let conv1_fan = (config.input_channels * k, config.conv1_dim * k);
        fill(&mut params.conv1_kernel, conv1_fan.0, conv1_fan.1);
        fill(&mut params.conv1_bias, conv1_fan.0, conv1_fan.1);
        let conv2_fan = (config.conv1_dim * k, config.conv2_dim * k);
        fill(&mut params.conv2_kernel, conv2_fan.0, conv2_fan.1);
        fill(&mut params.conv2_bias, conv2_fan.0, conv2_fan.1);
        for layer in &mut params.lstm {
            let (c_in, h) = (layer.input_dim(), layer.hidden());
            fill(&mut layer.w_x, c_in, 4 * h);
            fill(&mut layer.w_h, h, 4 * h);
            fill(&mut layer.bias, c_in, 4 * h);
        }
        fill(&mut params.fc_weight, config.lstm_dim, 1);
        fill(&mut params.fc_bias, config.lstm_dim, 1);
        Ok(params)
    }

    /// Stable iteration order over named tensors; the weights file and the
    /// optimizer both follow it.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = vec![
            ("conv1.kernel".to_string(), &self.conv1_kernel),
            ("conv1.bias".to_string(), &self.conv1_bias),
            ("conv2.kernel".to_string(), &self.conv2_kernel),
            ("conv2.bias".to_string(), &self.conv2_bias),
        ];
        for (i, layer) in self.lstm.iter().enumerate() {
            out.push((format!("lstm.{i}.w_x"), &layer.w_x));
            out.push((format!("lstm.{i}.w_h"), &layer.w_h));
            out.push((format!("lstm.{i}.bias"), &layer.bias));
        }
        out.push(("fc.weight".to_string(), &self.fc_weight));
        out.push(("fc.bias".to_string(), &self.fc_bias));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = vec![
            &mut self.conv1_kernel,
            &mut self.conv1_bias,
            &mut self.conv2_kernel,
            &mut self.conv2_bias,
        ];
        for layer in &mut self.lstm {
            out.push(&mut layer.w_x);
            out.push(&mut layer.w_h);
            out.push(&mut layer.bias);
        }
        out.push(&mut self.fc_weight);
        out.push(&mut self.fc_bias);
        out
    }

    pub fn num_parameters(&self) -> usize {
        self.named_tensors().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.named_tensors().iter().all(|(_, t)| t.all_finite())
    }
}

/// Intermediate activations kept for the backward pass.
pub struct ForwardCache {
    z1: Tensor,
    a1: Tensor,
    z2: Tensor,
    a2: Tensor,
    lstm: Vec<LstmLayerCache>,
    pub logit: f64,
}

/// Full forward pass on one `[T, C]` sample, keeping activations.
pub fn forward_cached(params: &ModelParams, sample: &Tensor) -> Result<ForwardCache, NetError> {
    let cfg = &params.config;
    if sample.shape() != [cfg.seq_len, cfg.input_channels] {
        return Err(NetError::ShapeMismatch(format!(
            "sample shape {:?}, expected [{}, {}]",
            sample.shape(),
            cfg.seq_len,
            cfg.input_channels
        )));
    }
    if !sample.all_finite() {
        return Err(NetError::NonFiniteActivation);
    }
    let z1 = conv1d_forward(sample, &params.conv1_kernel, &params.conv1_bias)?;
    let a1 = relu(&z1);
    let z2 = conv1d_forward(&a1, &params.conv2_kernel, &params.conv2_bias)?;
    let a2 = relu(&z2);

    let mut lstm_caches: Vec<LstmLayerCache> = Vec::with_capacity(params.lstm.len());
    for (l, layer) in params.lstm.iter().enumerate() {
        let cache = {
            let input = if l == 0 {
                &a2
            } else {
                &lstm_caches[l - 1].hidden
            };
            lstm_forward(input, layer)?
        };
        lstm_caches.push(cache);
    }

    let last_hidden = lstm_caches
        .last()
        .map(|c| c.hidden.row(cfg.seq_len - 1))
        .ok_or_else(|| NetError::InvalidConfig("no LSTM layers".into()))?;
    let mut logit = params.fc_bias.data()[0];
    for (w, h) in params.fc_weight.data().iter().zip(last_hidden) {
        logit += w * h;
    }
    Ok(ForwardCache {
        z1,
        a1,
        z2,
        a2,
        lstm: lstm_caches,
        logit,
    })
}

/// Scalar logit for one `[T, C]` sample.
pub fn forward(params: &ModelParams, sample: &Tensor) -> Result<f64, NetError> {
    forward_cached(params, sample).map(|c| c.logit)
}

/// Backpropagates `d_logit` through the cached forward pass, accumulating
/// parameter gradients into `grads` (a zero- or partially-filled mirror of
/// the parameters).
pub fn backward(
    params: &ModelParams,
    sample: &Tensor,
    cache: &ForwardCache,
    d_logit: f64,
    grads: &mut ModelParams,
) {
    let cfg = &params.config;
    let t_len = cfg.seq_len;
    let h = cfg.lstm_dim;

    // FC layer.
    let last_hidden = cache.lstm.last().unwrap().hidden.row(t_len - 1);
    for (g, hv) in grads.fc_weight.data_mut().iter_mut().zip(last_hidden) {
        *g += d_logit * hv;
    }
    grads.fc_bias.data_mut()[0] += d_logit;

    // Gradient w.r.t. the top layer's hidden sequence: only the last step.
    let mut d_hidden = Tensor::zeros(&[t_len, h]);
    for (slot, w) in d_hidden
        .row_mut(t_len - 1)
        .iter_mut()
        .zip(params.fc_weight.data())
    {
        *slot += d_logit * w;
    }

    // Down through the LSTM stack.
    let mut d_seq = d_hidden;
    for l in (0..params.lstm.len()).rev() {
        let input = if l == 0 {
            &cache.a2
        } else {
            &cache.lstm[l - 1].hidden
        };
        let layer_grads = &mut grads.lstm[l];
        d_seq = lstm_backward(
            input,
            &params.lstm[l],
            &cache.lstm[l],
            &d_seq,
            &mut layer_grads.w_x,
            &mut layer_grads.w_h,
            &mut layer_grads.bias,
        );
    }

    // Conv2 (through its ReLU).
    let d_z2 = relu_backward(&cache.z2, &d_seq);
    let mut d_a1 = Tensor::zeros(cache.a1.shape());
    conv1d_backward(
        &cache.a1,
        &params.conv2_kernel,
        &d_z2,
        &mut d_a1,
        &mut grads.conv2_kernel,
        &mut grads.conv2_bias,
    );

    // Conv1 (through its ReLU).
    let d_z1 = relu_backward(&cache.z1, &d_a1);
    let mut d_input = Tensor::zeros(sample.shape());
    conv1d_backward(
        sample,
        &params.conv1_kernel,
        &d_z1,
        &mut d_input,
        &mut grads.conv1_kernel,
        &mut grads.conv1_bias,
    );
}

/// Thresholded prediction: `intention = logit > threshold` (strict).
pub fn predict(
    params: &ModelParams,
    sample: &Tensor,
    threshold: f64,
) -> Result<(bool, f64), NetError> {
    let score = forward(params, sample)?;
    Ok((score > threshold, score))
}

/// Converts a stored f32 sample (row-major `[T, C]`) into a tensor.
pub fn sample_tensor(data: &[f32], seq_len: usize, channels: usize) -> Tensor {
    debug_assert_eq!(data.len(), seq_len * channels);
    Tensor::from_vec(
        &[seq_len, channels],
        data.iter().map(|&v| v as f64).collect(),
    )
}
