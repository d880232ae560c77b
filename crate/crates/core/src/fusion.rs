//! Soft decision fusion of the segment scores `P_S` and keyframe
//! probabilities `P_K` into final frame scores `Y`.
//!
//! In stacking mode the two vectors are intermediate features: the
//! meta-learner is fit to the ground-truth scores on top of them, and its
//! loss does not reach the base learners unless gradient flow is requested
//! explicitly.

use ndarray::{Array1, Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::MetaLearnerParams;
use crate::numeric::{affine, affine_backward, sigmoid, tanh_backward};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FusionMode {
    /// `Y = P_S`.
    SegmentsOnly,
    /// `Y = P_K`.
    FramesOnly,
    /// `Y = (P_S + P_K) / 2`.
    Average,
    /// `Y = MLP(P_S, P_K)` per frame.
    Meta,
}

impl std::str::FromStr for FusionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "segments-only" | "segments" => Ok(FusionMode::SegmentsOnly),
            "frames-only" | "frames" => Ok(FusionMode::FramesOnly),
            "average" => Ok(FusionMode::Average),
            "meta" => Ok(FusionMode::Meta),
            other => Err(Error::InvalidArgument(format!(
                "unknown fusion mode {other}"
            ))),
        }
    }
}

impl std::fmt::Display for FusionMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            FusionMode::SegmentsOnly => "segments-only",
            FusionMode::FramesOnly => "frames-only",
            FusionMode::Average => "average",
            FusionMode::Meta => "meta",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalScoreVector {
    pub y: Vec<f64>,
}

fn check_lengths(p_s: &[f64], p_k: &[f64]) -> Result<()> {
    if p_s.len() != p_k.len() {
        return Err(Error::Shape(format!(
            "P_S has {} frames, P_K has {}",
            p_s.len(),
            p_k.len()
        )));
    }
    Ok(())
}

pub fn fuse_average(p_s: &[f64], p_k: &[f64]) -> Result<FinalScoreVector> {
    check_lengths(p_s, p_k)?;
    Ok(FinalScoreVector {
        y: p_s.iter().zip(p_k).map(|(a, b)| 0.5 * (a + b)).collect(),
    })
}

#[derive(Debug, Clone)]
pub struct MetaCache {
    inputs: Array2<f64>,
    hidden: Array2<f64>,
    output: Array1<f64>,
}

pub fn fuse_meta(p_s: &[f64], p_k: &[f64], params: &MetaLearnerParams) -> Result<FinalScoreVector> {
    meta_forward(p_s, p_k, params).map(|(y, _)| y)
}

pub fn meta_forward(
    p_s: &[f64],
    p_k: &[f64],
    params: &MetaLearnerParams,
) -> Result<(FinalScoreVector, MetaCache)> {
    check_lengths(p_s, p_k)?;
    let inputs = Array2::from_shape_fn(
        (p_s.len(), 2),
        |(t, c)| if c == 0 { p_s[t] } else { p_k[t] },
    );
    let hidden =
        affine(inputs.view(), params.w_hidden.mat(), params.b_hidden.vec())?.mapv(f64::tanh);
    let logits = affine(hidden.view(), params.w_out.mat(), params.b_out.vec())?;
    let output: Array1<f64> = logits.column(0).mapv(sigmoid);
    Ok((
        FinalScoreVector { y: output.to_vec() },
        MetaCache {
            inputs,
            hidden,
            output,
        },
    ))
}

/// Accumulates meta-learner gradients for `d_y` and returns the gradient
/// with respect to the `(P_S, P_K)` inputs, `T x 2`.
pub fn meta_backward(
    cache: &MetaCache,
    d_y: ArrayView1<f64>,
    params: &mut MetaLearnerParams,
) -> Array2<f64> {
    let d_logit = Array2::from_shape_fn((d_y.len(), 1), |(t, _)| {
        let y = cache.output[t];
        d_y[t] * y * (1.0 - y)
    });
    let (d_hidden, d_wo, d_bo) =
        affine_backward(cache.hidden.view(), params.w_out.mat(), d_logit.view());
    params.w_out.grad_mat_mut().scaled_add(1.0, &d_wo);
    params.b_out.grad_vec_mut().scaled_add(1.0, &d_bo);
    let d_pre = tanh_backward(cache.hidden.view(), d_hidden.view());
    let (d_inputs, d_wh, d_bh) =
        affine_backward(cache.inputs.view(), params.w_hidden.mat(), d_pre.view());
    params.w_hidden.grad_mat_mut().scaled_add(1.0, &d_wh);
    params.b_hidden.grad_vec_mut().scaled_add(1.0, &d_bh);
    d_inputs
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::losses::{mse_grad, mse_loss};
    use crate::numeric::grad_check;

    fn random_meta(seed: u64) -> MetaLearnerParams {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = MetaLearnerParams::zeros(16);
        for t in p.tensors_mut() {
            t.values
                .iter_mut()
                .for_each(|v| *v = rng.random_range(-1.0..1.0));
        }
        p
    }

    #[test]
    fn average_cases() {
        assert_eq!(fuse_average(&[0.4], &[0.6]).unwrap().y, vec![0.5]);
        assert_eq!(
            fuse_average(&[0.0, 1.0], &[1.0, 1.0]).unwrap().y,
            vec![0.5, 1.0]
        );
        let v = [0.1, 0.7, 0.3];
        assert_eq!(fuse_average(&v, &v).unwrap().y, v.to_vec());
        assert!(fuse_average(&[0.1], &[0.1, 0.2]).is_err());
    }

    #[test]
    fn zero_meta_gives_half() {
        let y = fuse_meta(
            &[0.0, 0.3, 1.0],
            &[0.9, 0.2, 0.5],
            &MetaLearnerParams::zeros(16),
        )
        .unwrap();
        assert_eq!(y.y, vec![0.5; 3]);
    }

    #[test]
    fn meta_is_pointwise() {
        let p = random_meta(3);
        let ps = [0.1, 0.9, 0.4, 0.0];
        let pk = [0.8, 0.2, 0.6, 1.0];
        let y = fuse_meta(&ps, &pk, &p).unwrap().y;
        let perm = [3, 1, 0, 2];
        let ps2: Vec<f64> = perm.iter().map(|&i| ps[i]).collect();
        let pk2: Vec<f64> = perm.iter().map(|&i| pk[i]).collect();
        let y2 = fuse_meta(&ps2, &pk2, &p).unwrap().y;
        for (k, &i) in perm.iter().enumerate() {
            assert_eq!(y2[k], y[i]);
        }
        assert!(y.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn meta_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let t = 12;
        let ps: Vec<f64> = (0..t).map(|_| rng.random()).collect();
        let pk: Vec<f64> = (0..t).map(|_| rng.random()).collect();
        let gt: Vec<f64> = (0..t).map(|_| rng.random()).collect();
        let mut params = random_meta(4);

        let (y, cache) = meta_forward(&ps, &pk, &params).unwrap();
        let d_y = mse_grad(&y.y, &gt).unwrap();
        meta_backward(&cache, ArrayView1::from(&d_y), &mut params);
        let analytic: Vec<f64> = params
            .tensors()
            .iter()
            .flat_map(|p| p.grad.clone())
            .collect();
        let theta: Vec<f64> = params
            .tensors()
            .iter()
            .flat_map(|p| p.values.clone())
            .collect();

        let objective = |flat: &[f64]| {
            let mut p = params.clone();
            let mut off = 0;
            for tensor in p.tensors_mut() {
                let n = tensor.len();
                tensor.values.copy_from_slice(&flat[off..off + n]);
                off += n;
            }
            let y = fuse_meta(&ps, &pk, &p)?;
            mse_loss(&y.y, &gt).map(|m| m.raw)
        };
        let report = grad_check(objective, &theta, &analytic, 1e-5).unwrap();
        assert!(report.max_rel_error < 1e-6, "{report:?}");
    }
}
