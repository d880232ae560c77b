//! Learnable parameters of the whole network and their initialization.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::numeric::ParamTensor;

/// Temporal scales shared by the pooling pyramid and the anchors.
pub const DEFAULT_SCALES: [usize; 4] = [4, 8, 16, 32];

/// Layer widths. The defaults (with `feature_dim = 1024`) give roughly
/// 4.2 M parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub feature_dim: usize,
    pub attn_dim: usize,
    pub fc1_dim: usize,
    pub fc2_dim: usize,
    pub fc3_dim: usize,
    pub meta_hidden: usize,
    pub scales: Vec<usize>,
    pub ln_eps: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            feature_dim: 1024,
            attn_dim: 128,
            fc1_dim: 512,
            fc2_dim: 512,
            fc3_dim: 256,
            meta_hidden: 16,
            scales: DEFAULT_SCALES.to_vec(),
            ln_eps: 1e-5,
        }
    }
}

impl ModelConfig {
    /// Default widths for a given feature dimension.
    pub fn with_feature_dim(feature_dim: usize) -> Self {
        ModelConfig {
            feature_dim,
            ..Self::default()
        }
    }

    /// Narrow widths for tests and gradient checks.
    pub fn tiny(feature_dim: usize) -> Self {
        ModelConfig {
            feature_dim,
            attn_dim: 4,
            fc1_dim: 8,
            fc2_dim: 8,
            fc3_dim: 8,
            meta_hidden: 4,
            scales: DEFAULT_SCALES.to_vec(),
            ln_eps: 1e-5,
        }
    }

    pub fn num_scales(&self) -> usize {
        self.scales.len()
    }

    pub fn validate(&self) -> Result<()> {
        let widths = [
            ("feature_dim", self.feature_dim),
            ("attn_dim", self.attn_dim),
            ("fc1_dim", self.fc1_dim),
            ("fc2_dim", self.fc2_dim),
            ("fc3_dim", self.fc3_dim),
            ("meta_hidden", self.meta_hidden),
        ];
        if let Some((name, _)) = widths.iter().find(|(_, w)| *w == 0) {
            return Err(Error::InvalidArgument(format!("{name} must be positive")));
        }
        if self.scales.is_empty() || self.scales.contains(&0) {
            return Err(Error::InvalidArgument(
                "scales must be non-empty and positive".into(),
            ));
        }
        if self.fc1_dim < 2 {
            return Err(Error::InvalidArgument(
                "fc1_dim must be >= 2 for layer norm".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub wq: ParamTensor,
    pub wk: ParamTensor,
    pub wv: ParamTensor,
    /// Projection from the attention width back to the feature dimension.
    pub wo: ParamTensor,
    pub bo: ParamTensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InterestHeadParams {
    pub w1: ParamTensor,
    pub b1: ParamTensor,
    pub ln_gain: ParamTensor,
    pub ln_bias: ParamTensor,
    pub w2: ParamTensor,
    pub b2: ParamTensor,
    pub w_cls: ParamTensor,
    pub b_cls: ParamTensor,
    pub w_reg: ParamTensor,
    pub b_reg: ParamTensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameHeadParams {
    pub w3: ParamTensor,
    pub b3: ParamTensor,
    pub w4: ParamTensor,
    pub b4: ParamTensor,
}

/// Per-frame MLP `(rho_t, p_kt) -> hidden (tanh) -> 1 (sigmoid)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MetaLearnerParams {
    pub w_hidden: ParamTensor,
    pub b_hidden: ParamTensor,
    pub w_out: ParamTensor,
    pub b_out: ParamTensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub encoder: EncoderParams,
    pub interest: InterestHeadParams,
    pub frame: FrameHeadParams,
    pub meta: MetaLearnerParams,
}

impl EncoderParams {
    fn tensors(&self) -> [&ParamTensor; 5] {
        [&self.wq, &self.wk, &self.wv, &self.wo, &self.bo]
    }

    fn tensors_mut(&mut self) -> [&mut ParamTensor; 5] {
        [
            &mut self.wq,
            &mut self.wk,
            &mut self.wv,
            &mut self.wo,
            &mut self.bo,
        ]
    }
}

impl InterestHeadParams {
    fn tensors(&self) -> [&ParamTensor; 10] {
        [
            &self.w1,
            &self.b1,
            &self.ln_gain,
            &self.ln_bias,
            &self.w2,
            &self.b2,
            &self.w_cls,
            &self.b_cls,
            &self.w_reg,
            &self.b_reg,
        ]
    }

    fn tensors_mut(&mut self) -> [&mut ParamTensor; 10] {
        [
            &mut self.w1,
            &mut self.b1,
            &mut self.ln_gain,
            &mut self.ln_bias,
            &mut self.w2,
            &mut self.b2,
            &mut self.w_cls,
            &mut self.b_cls,
            &mut self.w_reg,
            &mut self.b_reg,
        ]
    }
}

impl FrameHeadParams {
    fn tensors(&self) -> [&ParamTensor; 4] {
        [&self.w3, &self.b3, &self.w4, &self.b4]
    }

    fn tensors_mut(&mut self) -> [&mut ParamTensor; 4] {
        [&mut self.w3, &mut self.b3, &mut self.w4, &mut self.b4]
    }
}

impl MetaLearnerParams {
    pub fn tensors(&self) -> [&ParamTensor; 4] {
        [&self.w_hidden, &self.b_hidden, &self.w_out, &self.b_out]
    }

    pub fn tensors_mut(&mut self) -> [&mut ParamTensor; 4] {
        [
            &mut self.w_hidden,
            &mut self.b_hidden,
            &mut self.w_out,
            &mut self.b_out,
        ]
    }

    pub fn zeros(hidden: usize) -> Self {
        MetaLearnerParams {
            w_hidden: ParamTensor::zeros("meta.w_hidden", &[2, hidden]),
            b_hidden: ParamTensor::zeros("meta.b_hidden", &[hidden]),
            w_out: ParamTensor::zeros("meta.w_out", &[hidden, 1]),
            b_out: ParamTensor::zeros("meta.b_out", &[1]),
        }
    }
}

impl ModelParams {
    /// All-zero parameters (layer-norm gain included).
    pub fn zeros(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let d = config.feature_dim;
        let k = config.num_scales();
        let z = ParamTensor::zeros;
        Ok(ModelParams {
            config: config.clone(),
            encoder: EncoderParams {
                wq: z("encoder.wq", &[d, config.attn_dim]),
                wk: z("encoder.wk", &[d, config.attn_dim]),
                wv: z("encoder.wv", &[d, config.attn_dim]),
                wo: z("encoder.wo", &[config.attn_dim, d]),
                bo: z("encoder.bo", &[d]),
            },
            interest: InterestHeadParams {
                w1: z("interest.w1", &[k * d, config.fc1_dim]),
                b1: z("interest.b1", &[config.fc1_dim]),
                ln_gain: z("interest.ln_gain", &[config.fc1_dim]),
                ln_bias: z("interest.ln_bias", &[config.fc1_dim]),
                w2: z("interest.w2", &[config.fc1_dim, config.fc2_dim]),
                b2: z("interest.b2", &[config.fc2_dim]),
                w_cls: z("interest.w_cls", &[config.fc2_dim, 2 * k]),
                b_cls: z("interest.b_cls", &[2 * k]),
                w_reg: z("interest.w_reg", &[config.fc2_dim, 2 * k]),
                b_reg: z("interest.b_reg", &[2 * k]),
            },
            frame: FrameHeadParams {
                w3: z("frame.w3", &[(k + 1) * d, config.fc3_dim]),
                b3: z("frame.b3", &[config.fc3_dim]),
                w4: z("frame.w4", &[config.fc3_dim, 2]),
                b4: z("frame.b4", &[2]),
            },
            meta: MetaLearnerParams::zeros(config.meta_hidden),
        })
    }

    /// Xavier-uniform weight matrices from a seeded generator; biases zero
    /// and layer-norm gain one.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        let mut params = Self::zeros(config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for p in params.tensors_mut() {
            if let [rows, cols] = *p.shape() {
                *p = ParamTensor::xavier(p.name.clone(), rows, cols, &mut rng);
            }
        }
        params
            .interest
            .ln_gain
            .values
            .iter_mut()
            .for_each(|v| *v = 1.0);
        Ok(params)
    }

    /// Every tensor in a fixed order: encoder, interest head, frame head,
    /// meta-learner.
    pub fn tensors(&self) -> Vec<&ParamTensor> {
        let mut out = Vec::with_capacity(23);
        out.extend(self.encoder.tensors());
        out.extend(self.interest.tensors());
        out.extend(self.frame.tensors());
        out.extend(self.meta.tensors());
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut ParamTensor> {
        let mut out = Vec::with_capacity(23);
        out.extend(self.encoder.tensors_mut());
        out.extend(self.interest.tensors_mut());
        out.extend(self.frame.tensors_mut());
        out.extend(self.meta.tensors_mut());
        out
    }

    /// Tensors of the encoder and both heads (everything but the meta-learner).
    pub fn base_tensors(&self) -> Vec<&ParamTensor> {
        let mut out = Vec::new();
        out.extend(self.encoder.tensors());
        out.extend(self.interest.tensors());
        out.extend(self.frame.tensors());
        out
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors().iter().map(|p| p.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        self.tensors_mut()
            .into_iter()
            .for_each(ParamTensor::zero_grad);
    }

    pub fn flat_values(&self) -> Vec<f64> {
        self.tensors()
            .iter()
            .flat_map(|p| p.values.iter().copied())
            .collect()
    }

    pub fn flat_grads(&self) -> Vec<f64> {
        self.tensors()
            .iter()
            .flat_map(|p| p.grad.iter().copied())
            .collect()
    }

    pub fn set_flat_values(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_parameters() {
            return Err(Error::Shape(format!(
                "expected {} values, got {}",
                self.num_parameters(),
                flat.len()
            )));
        }
        let mut offset = 0;
        for p in self.tensors_mut() {
            let n = p.len();
            p.values.copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }

    /// SHA-256 over names, shapes and little-endian values of every tensor.
    pub fn checksum(&self) -> String {
        let mut hasher = Sha256::new();
        for p in self.tensors() {
            hasher.update(p.name.as_bytes());
            for s in p.shape() {
                hasher.update((*s as u64).to_le_bytes());
            }
            for v in &p.values {
                hasher.update(v.to_le_bytes());
            }
        }
        hex::encode(hasher.finalize())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_size_is_near_four_million() {
        let p = ModelParams::zeros(&ModelConfig::default()).unwrap();
        let n = p.num_parameters();
        assert!((4_000_000..4_500_000).contains(&n), "{n}");
    }

    #[test]
    fn init_is_seeded_and_bounded() {
        let cfg = ModelConfig::tiny(6);
        let a = ModelParams::init(&cfg, 9).unwrap();
        let b = ModelParams::init(&cfg, 9).unwrap();
        let c = ModelParams::init(&cfg, 10).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.checksum(), c.checksum());
        let w1 = &a.interest.w1;
        let bound = crate::numeric::xavier_bound(w1.shape()[0], w1.shape()[1]);
        assert!(w1.values.iter().all(|v| v.abs() <= bound));
        assert!(a.interest.b1.values.iter().all(|&v| v == 0.0));
        assert!(a.interest.ln_gain.values.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn flat_round_trip() {
        let cfg = ModelConfig::tiny(3);
        let a = ModelParams::init(&cfg, 1).unwrap();
        let mut b = ModelParams::zeros(&cfg).unwrap();
        b.interest.ln_gain.values.iter_mut().for_each(|v| *v = 1.0);
        b.set_flat_values(&a.flat_values()).unwrap();
        assert_eq!(a, b);
        assert!(b.set_flat_values(&[0.0]).is_err());
    }

    #[test]
    fn zero_width_is_rejected() {
        let cfg = ModelConfig {
            fc2_dim: 0,
            ..ModelConfig::tiny(4)
        };
        assert!(ModelParams::zeros(&cfg).is_err());
    }
}
