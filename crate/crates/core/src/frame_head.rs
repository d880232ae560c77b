//! Frame-level keyframe labeling: Fc-3 (affine + tanh) over the pyramid and
//! the encoding, Fc-4 (affine + softmax) to two classes per frame.

use ndarray::{concatenate, s, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::encoder::{EncodedSequence, PooledPyramid};
use crate::error::{Error, Result};
use crate::model::FrameHeadParams;
use crate::numeric::{affine, affine_backward, softmax_rows, tanh_backward};

/// Probability column of the keyframe class.
pub const KEYFRAME: usize = 0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeyframeProbVector {
    /// Keyframe probability per frame (`full_probs` column 0).
    pub p_k: Vec<f64>,
    /// `T x 2` rows of (keyframe, non-keyframe) probabilities.
    pub full_probs: Vec<[f64; 2]>,
}

#[derive(Debug, Clone)]
pub struct FrameCache {
    input: Array2<f64>,
    encoding_dim: usize,
    hidden: Array2<f64>,
    /// `T x 2` softmax output, kept for loss gradients.
    pub probs: Array2<f64>,
}

pub fn frame_forward(
    pyramid: &PooledPyramid,
    encoded: &EncodedSequence,
    params: &FrameHeadParams,
) -> Result<(KeyframeProbVector, FrameCache)> {
    if pyramid.frames() != encoded.data.nrows() {
        return Err(Error::Shape(format!(
            "pyramid has {} frames, encoding has {}",
            pyramid.frames(),
            encoded.data.nrows()
        )));
    }
    let input = concatenate(Axis(1), &[pyramid.concat().view(), encoded.data.view()])
        .map_err(|e| Error::Shape(e.to_string()))?;
    if input.ncols() != params.w3.shape()[0] {
        return Err(Error::Shape(format!(
            "frame head input has {} channels, Fc-3 expects {}",
            input.ncols(),
            params.w3.shape()[0]
        )));
    }
    let hidden = affine(input.view(), params.w3.mat(), params.b3.vec())?.mapv(f64::tanh);
    let logits = affine(hidden.view(), params.w4.mat(), params.b4.vec())?;
    let probs = softmax_rows(logits.view());
    let full_probs: Vec<[f64; 2]> = probs.rows().into_iter().map(|r| [r[0], r[1]]).collect();
    let p_k = full_probs.iter().map(|r| r[KEYFRAME]).collect();
    Ok((
        KeyframeProbVector { p_k, full_probs },
        FrameCache {
            input,
            encoding_dim: encoded.data.ncols(),
            hidden,
            probs,
        },
    ))
}

/// Accumulates gradients for `d_logits` (`T x 2`, w.r.t. the pre-softmax
/// logits). Returns `(d_pyramid_concat, d_encoded)`.
pub fn frame_backward(
    cache: &FrameCache,
    d_logits: ArrayView2<f64>,
    params: &mut FrameHeadParams,
) -> (Array2<f64>, Array2<f64>) {
    let (d_hidden, d_w4, d_b4) = affine_backward(cache.hidden.view(), params.w4.mat(), d_logits);
    params.w4.grad_mat_mut().scaled_add(1.0, &d_w4);
    params.b4.grad_vec_mut().scaled_add(1.0, &d_b4);
    let d_pre = tanh_backward(cache.hidden.view(), d_hidden.view());
    let (d_input, d_w3, d_b3) = affine_backward(cache.input.view(), params.w3.mat(), d_pre.view());
    params.w3.grad_mat_mut().scaled_add(1.0, &d_w3);
    params.b3.grad_vec_mut().scaled_add(1.0, &d_b3);
    let split = d_input.ncols() - cache.encoding_dim;
    let d_concat = d_input.slice(s![.., ..split]).to_owned();
    let d_encoded = d_input.slice(s![.., split..]).to_owned();
    (d_concat, d_encoded)
}
