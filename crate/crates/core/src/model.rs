//! The 1D-CNN classifier.
//!
//! The network is a stack of conv blocks, each `(conv, relu, conv, relu,
//! maxpool, dropout)`, followed by a fully connected head with relu + dropout
//! between hidden layers and no activation after the final `Linear(·, 2)`.
//! The flattened output of the last pool (the tensor the head consumes) is
//! the feature tap used for patient-similarity weighting.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seed::rng_for;
use crate::tensor::ops::{
    conv1d, conv1d_out_len, dropout, linear, maxpool1d, maxpool1d_out_len, relu, reshape,
};
use crate::tensor::{Element, Tensor, TensorError};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub type Result<T> = std::result::Result<T, ModelError>;

/// One convolution layer: (in_channels, out_channels, kernel, stride).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvLayer {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
}

impl ConvLayer {
    pub fn new(in_channels: usize, out_channels: usize, kernel: usize, stride: usize) -> Self {
        ConvLayer {
            in_channels,
            out_channels,
            kernel,
            stride,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SozNetConfig {
    /// Samples per input window.
    pub input_length: usize,
    /// Convolution layers in order; consecutive pairs form one block.
    pub conv_spec: Vec<ConvLayer>,
    pub pool_kernel: usize,
    pub pool_stride: usize,
    pub conv_dropout: f64,
    /// Fully connected widths including the input width, e.g. [512, 256, 128, 64, 2].
    pub fc_spec: Vec<usize>,
    pub fc_dropout: f64,
    /// Padding applied to every convolution.
    pub padding: usize,
}

impl Default for SozNetConfig {
    /// Full-scale configuration: ten conv layers in five blocks, pool (4, 4),
    /// head 512 → 256 → 128 → 64 → 2, dropout 0.3 / 0.5, 3000-sample windows.
    fn default() -> Self {
        let chans = [
            (1, 32),
            (32, 32),
            (32, 64),
            (64, 64),
            (64, 128),
            (128, 128),
            (128, 256),
            (256, 256),
            (256, 256),
            (256, 256),
        ];
        SozNetConfig {
            input_length: 3000,
            conv_spec: chans
                .iter()
                .map(|&(i, o)| ConvLayer::new(i, o, 3, 1))
                .collect(),
            pool_kernel: 4,
            pool_stride: 4,
            conv_dropout: 0.3,
            fc_spec: vec![512, 256, 128, 64, 2],
            fc_dropout: 0.5,
            padding: 1,
        }
    }
}

impl SozNetConfig {
    /// Reduced configuration for desk-scale experiments: 750-sample windows
    /// (3 s at 250 Hz), four blocks, lighter dropout.
    pub fn desk() -> Self {
        let chans = [
            (1, 16),
            (16, 16),
            (16, 32),
            (32, 32),
            (32, 64),
            (64, 64),
            (64, 128),
            (128, 128),
        ];
        SozNetConfig {
            input_length: 750,
            conv_spec: chans
                .iter()
                .map(|&(i, o)| ConvLayer::new(i, o, 3, 1))
                .collect(),
            pool_kernel: 4,
            pool_stride: 4,
            conv_dropout: 0.1,
            fc_spec: vec![256, 64, 2],
            fc_dropout: 0.15,
            padding: 1,
        }
    }

    /// Per-block sequence lengths, starting with the input length and ending
    /// with the length after the final pool. Errors if any block collapses to
    /// zero length.
    pub fn block_lengths(&self) -> Result<Vec<usize>> {
        self.validate_layers()?;
        let mut lengths = vec![self.input_length];
        let mut l = self.input_length;
        for (b, pair) in self.conv_spec.chunks(2).enumerate() {
            for layer in pair {
                l = conv1d_out_len(l, layer.kernel, layer.stride, self.padding).ok_or_else(
                    || {
                        ModelError::InvalidConfig(format!(
                            "block {b}: kernel {} does not fit length {l}",
                            layer.kernel
                        ))
                    },
                )?;
            }
            l = maxpool1d_out_len(l, self.pool_kernel, self.pool_stride).unwrap_or(0);
            if l == 0 {
                return Err(ModelError::InvalidConfig(format!(
                    "block {b} pools the sequence down to length 0 \
                     (flatten width 0); shorten the stack or lengthen the input"
                )));
            }
            lengths.push(l);
        }
        Ok(lengths)
    }

    /// Channel count × final length after the conv stack.
    pub fn flatten_width(&self) -> Result<usize> {
        let lengths = self.block_lengths()?;
        let last_out = self
            .conv_spec
            .last()
            .expect("validate_layers checked non-empty")
            .out_channels;
        Ok(last_out * lengths.last().expect("at least the input length"))
    }

    fn validate_layers(&self) -> Result<()> {
        if self.conv_spec.is_empty() || self.conv_spec.len() % 2 != 0 {
            return Err(ModelError::InvalidConfig(format!(
                "conv_spec must hold a positive even number of layers (two per block), got {}",
                self.conv_spec.len()
            )));
        }
        if self.conv_spec[0].in_channels != 1 {
            return Err(ModelError::InvalidConfig(
                "first conv layer must take 1 input channel".into(),
            ));
        }
        for w in self.conv_spec.windows(2) {
            if w[1].in_channels != w[0].out_channels {
                return Err(ModelError::InvalidConfig(format!(
                    "conv chain broken: layer with in={} follows out={}",
                    w[1].in_channels, w[0].out_channels
                )));
            }
        }
        if self
            .conv_spec
            .iter()
            .any(|c| c.kernel == 0 || c.stride == 0 || c.out_channels == 0)
        {
            return Err(ModelError::InvalidConfig(
                "conv kernel, stride and channels must be >= 1".into(),
            ));
        }
        if self.pool_kernel == 0 || self.pool_stride == 0 {
            return Err(ModelError::InvalidConfig(
                "pool kernel and stride must be >= 1".into(),
            ));
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.validate_layers()?;
        if self.fc_spec.len() < 2 {
            return Err(ModelError::InvalidConfig(
                "fc_spec needs at least an input and an output width".into(),
            ));
        }
        if *self.fc_spec.last().expect("non-empty") != 2 {
            return Err(ModelError::InvalidConfig(
                "the classifier head must end in 2 classes".into(),
            ));
        }
        for &(p, name) in &[(self.conv_dropout, "conv_dropout"), (self.fc_dropout, "fc_dropout")] {
            if !(0.0..1.0).contains(&p) {
                return Err(ModelError::InvalidConfig(format!(
                    "{name} must be in [0, 1), got {p}"
                )));
            }
        }
        let flatten = self.flatten_width()?;
        if flatten != self.fc_spec[0] {
            return Err(ModelError::InvalidConfig(format!(
                "conv stack flattens to width {flatten} but the head expects {}",
                self.fc_spec[0]
            )));
        }
        Ok(())
    }

    /// Canonical JSON form, embedded in checkpoints and hashed into the
    /// model fingerprint.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }
}

/// One named parameter array.
#[derive(Debug, Clone)]
pub struct Param<E: Element> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<E>,
}

/// The classifier with its parameters.
#[derive(Debug, Clone)]
pub struct SozNet<E: Element> {
    pub config: SozNetConfig,
    pub seed: u64,
    params: Vec<Param<E>>,
}

/// Result of one forward pass. `features` is the flattened final-pool output,
/// exactly the tensor the first FC layer consumed.
pub struct ForwardPass<E: Element> {
    pub logits: Tensor<E>,
    pub features: Tensor<E>,
    /// Leaf tensors for each parameter (same order as `SozNet::params`);
    /// populated with gradients after `backward`.
    pub param_leaves: Vec<Tensor<E>>,
}

impl<E: Element> SozNet<E> {
    /// Kaiming-uniform weights (fan-in), zero biases; deterministic per seed.
    pub fn build(config: SozNetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = rng_for(seed, "model/init");
        let mut params = Vec::new();
        for (i, layer) in config.conv_spec.iter().enumerate() {
            let fan_in = layer.in_channels * layer.kernel;
            params.push(Param {
                name: format!("conv{i}.weight"),
                shape: vec![layer.out_channels, layer.in_channels, layer.kernel],
                data: kaiming_uniform(&mut rng, layer.out_channels * fan_in, fan_in),
            });
            params.push(Param {
                name: format!("conv{i}.bias"),
                shape: vec![layer.out_channels],
                data: vec![E::ZERO; layer.out_channels],
            });
        }
        for (i, pair) in config.fc_spec.windows(2).enumerate() {
            let (f_in, f_out) = (pair[0], pair[1]);
            params.push(Param {
                name: format!("fc{i}.weight"),
                shape: vec![f_out, f_in],
                data: kaiming_uniform(&mut rng, f_out * f_in, f_in),
            });
            params.push(Param {
                name: format!("fc{i}.bias"),
                shape: vec![f_out],
                data: vec![E::ZERO; f_out],
            });
        }
        Ok(SozNet {
            config,
            seed,
            params,
        })
    }

    pub fn params(&self) -> &[Param<E>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param<E>] {
        &mut self.params
    }

    pub(crate) fn set_params(config: SozNetConfig, seed: u64, params: Vec<Param<E>>) -> Self {
        SozNet {
            config,
            seed,
            params,
        }
    }

    /// Run the network on a `[N, 1, L]` batch.
    ///
    /// In training mode parameters become gradient-accumulating leaves and
    /// dropout is active (consuming `rng`); in eval mode the pass is a pure
    /// function of parameters and input.
    pub fn forward_graph(
        &self,
        batch: &Tensor<E>,
        training: bool,
        rng: &mut ChaCha8Rng,
    ) -> Result<ForwardPass<E>> {
        let (n, c, l) = match batch.shape() {
            [n, c, l] => (*n, *c, *l),
            other => {
                return Err(TensorError::ShapeMismatch(format!(
                    "model input expects [N, 1, L], got {other:?}"
                ))
                .into())
            }
        };
        if c != 1 || l != self.config.input_length {
            return Err(TensorError::ShapeMismatch(format!(
                "model input expects [N, 1, {}], got [{n}, {c}, {l}]",
                self.config.input_length
            ))
            .into());
        }

        let leaves: Vec<Tensor<E>> = self
            .params
            .iter()
            .map(|p| {
                if training {
                    Tensor::param(p.shape.clone(), p.data.clone())
                } else {
                    Tensor::from_vec(p.shape.clone(), p.data.clone())
                }
            })
            .collect::<std::result::Result<_, _>>()?;

        let mut x = batch.clone();
        let mut pi = 0;
        for pair in self.config.conv_spec.chunks(2) {
            for _ in pair {
                x = conv1d(&x, &leaves[pi], &leaves[pi + 1], 1, self.config.padding)?;
                pi += 2;
                x = relu(&x);
            }
            let (pooled, _) = maxpool1d(&x, self.config.pool_kernel, self.config.pool_stride)?;
            x = dropout(&pooled, self.config.conv_dropout, training, rng)?;
        }

        let flatten = self.config.flatten_width()?;
        let features = reshape(&x, vec![n, flatten])?;

        let n_fc = self.config.fc_spec.len() - 1;
        let mut y = features.clone();
        for i in 0..n_fc {
            y = linear(&y, &leaves[pi], &leaves[pi + 1])?;
            pi += 2;
            if i + 1 < n_fc {
                y = relu(&y);
                y = dropout(&y, self.config.fc_dropout, training, rng)?;
            }
        }

        Ok(ForwardPass {
            logits: y,
            features,
            param_leaves: leaves,
        })
    }

    /// Eval-mode logits.
    pub fn logits(&self, batch: &Tensor<E>) -> Result<Tensor<E>> {
        let mut rng = rng_for(0, "model/eval-unused");
        Ok(self.forward_graph(batch, false, &mut rng)?.logits)
    }

    /// Eval-mode feature rows (flattened final-pool activations), one row per
    /// window, width [`SozNetConfig::flatten_width`].
    pub fn extract_features(&self, batch: &Tensor<E>) -> Result<Vec<E>> {
        let mut rng = rng_for(0, "model/eval-unused");
        let pass = self.forward_graph(batch, false, &mut rng)?;
        Ok(pass.features.data().to_vec())
    }
}

fn kaiming_uniform<E: Element>(rng: &mut ChaCha8Rng, n: usize, fan_in: usize) -> Vec<E> {
    let bound = (6.0 / fan_in as f64).sqrt();
    (0..n)
        .map(|_| E::from_f64(rng.gen_range(-bound..bound)))
        .collect()
}

/// Per-patient matrix of feature-tap rows.
#[derive(Debug, Clone)]
pub struct FeatureSet {
    pub patient_id: String,
    pub rows: usize,
    pub dim: usize,
    /// Row-major `[rows × dim]`.
    pub data: Vec<f32>,
    /// Fingerprint of the checkpoint that produced these features.
    pub fingerprint: String,
}

impl FeatureSet {
    pub fn new(
        patient_id: String,
        rows: usize,
        dim: usize,
        data: Vec<f32>,
        fingerprint: String,
    ) -> Result<Self> {
        if rows * dim != data.len() {
            return Err(ModelError::InvalidConfig(format!(
                "feature matrix {rows}×{dim} does not match {} values",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(ModelError::InvalidConfig(format!(
                "feature rows for {patient_id} contain non-finite values"
            )));
        }
        Ok(FeatureSet {
            patient_id,
            rows,
            dim,
            data,
            fingerprint,
        })
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_block_arithmetic() {
        let cfg = SozNetConfig::default();
        assert_eq!(cfg.block_lengths().unwrap(), vec![3000, 750, 187, 46, 11, 2]);
        assert_eq!(cfg.flatten_width().unwrap(), 512);
        cfg.validate().unwrap();
    }

    #[test]
    fn short_input_at_default_depth_rejected() {
        let mut cfg = SozNetConfig::default();
        cfg.input_length = 750;
        let err = cfg.validate().unwrap_err().to_string();
        assert!(err.contains("0"), "error should carry the computed width: {err}");
    }

    #[test]
    fn same_seed_same_parameters() {
        let a = SozNet::<f32>::build(SozNetConfig::desk(), 7).unwrap();
        let b = SozNet::<f32>::build(SozNetConfig::desk(), 7).unwrap();
        for (pa, pb) in a.params().iter().zip(b.params()) {
            assert_eq!(pa.data, pb.data, "param {}", pa.name);
        }
        let c = SozNet::<f32>::build(SozNetConfig::desk(), 8).unwrap();
        assert_ne!(a.params()[0].data, c.params()[0].data);
    }

    #[test]
    fn default_net_parameter_inventory() {
        let net = SozNet::<f32>::build(SozNetConfig::default(), 1).unwrap();
        let conv_w = net.params().iter().filter(|p| p.name.contains("conv") && p.name.ends_with("weight")).count();
        let conv_b = net.params().iter().filter(|p| p.name.contains("conv") && p.name.ends_with("bias")).count();
        let fc_w = net.params().iter().filter(|p| p.name.contains("fc") && p.name.ends_with("weight")).count();
        let fc_b = net.params().iter().filter(|p| p.name.contains("fc") && p.name.ends_with("bias")).count();
        assert_eq!((conv_w, conv_b, fc_w, fc_b), (10, 10, 4, 4));
    }

    #[test]
    fn eval_forward_is_deterministic_and_finite() {
        let net = SozNet::<f32>::build(SozNetConfig::desk(), 3).unwrap();
        let batch = Tensor::from_vec(vec![2, 1, 750], vec![0.0; 2 * 750]).unwrap();
        let a = net.logits(&batch).unwrap();
        let b = net.logits(&batch).unwrap();
        assert_eq!(a.data(), b.data());
        assert!(a.data().iter().all(|v| v.is_finite()));
        assert_eq!(a.shape(), &[2, 2]);
    }

    #[test]
    fn wrong_window_length_rejected() {
        let net = SozNet::<f32>::build(SozNetConfig::desk(), 3).unwrap();
        let batch = Tensor::from_vec(vec![1, 1, 700], vec![0.0; 700]).unwrap();
        assert!(net.logits(&batch).is_err());
    }

    #[test]
    fn features_match_fc_input_width_and_are_repeatable() {
        let net = SozNet::<f32>::build(SozNetConfig::desk(), 3).unwrap();
        let data: Vec<f32> = (0..750).map(|i| (i as f32 * 0.01).sin()).collect();
        let batch = Tensor::from_vec(vec![1, 1, 750], data).unwrap();
        let f1 = net.extract_features(&batch).unwrap();
        let f2 = net.extract_features(&batch).unwrap();
        assert_eq!(f1.len(), net.config.flatten_width().unwrap());
        assert_eq!(f1, f2);
    }

    #[test]
    fn identical_windows_identical_feature_rows() {
        let net = SozNet::<f32>::build(SozNetConfig::desk(), 5).unwrap();
        let row: Vec<f32> = (0..750).map(|i| (i as f32 * 0.02).cos()).collect();
        let mut two = row.clone();
        two.extend_from_slice(&row);
        let batch = Tensor::from_vec(vec![2, 1, 750], two).unwrap();
        let f = net.extract_features(&batch).unwrap();
        let d = net.config.flatten_width().unwrap();
        assert_eq!(&f[..d], &f[d..]);
    }
}
