//! Self-attention re-encoding with an additive skip path, followed by the
//! multiscale temporal pooling pyramid shared by both heads.

use ndarray::{concatenate, s, Array2, ArrayView2, Axis};

use crate::error::{Error, Result};
use crate::model::EncoderParams;
use crate::numeric::{
    affine, affine_backward, attention, attention_backward, avg_pool_1d, avg_pool_1d_backward,
    AttentionCache,
};

/// `X + Proj(attention(X))`, same shape as the input features.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedSequence {
    pub data: Array2<f64>,
}

#[derive(Debug, Clone)]
pub struct EncoderCache {
    attn: AttentionCache,
    attended: Array2<f64>,
}

impl EncoderCache {
    pub fn attention_weights(&self) -> &Array2<f64> {
        &self.attn.weights
    }
}

pub fn encode(x: ArrayView2<f64>, params: &EncoderParams) -> Result<EncodedSequence> {
    encode_forward(x, params).map(|(e, _)| e)
}

pub fn encode_forward(
    x: ArrayView2<f64>,
    params: &EncoderParams,
) -> Result<(EncodedSequence, EncoderCache)> {
    if x.nrows() == 0 {
        return Err(Error::Shape("cannot encode an empty sequence".into()));
    }
    if x.ncols() != params.wq.shape()[0] {
        return Err(Error::Shape(format!(
            "features have dim {}, encoder expects {}",
            x.ncols(),
            params.wq.shape()[0]
        )));
    }
    let (attended, attn) = attention(x, params.wq.mat(), params.wk.mat(), params.wv.mat())?;
    let projected = affine(attended.view(), params.wo.mat(), params.bo.vec())?;
    let data = &x + &projected;
    Ok((EncodedSequence { data }, EncoderCache { attn, attended }))
}

/// Accumulates encoder parameter gradients for an upstream `d_encoded`.
pub fn encode_backward(
    cache: &EncoderCache,
    d_encoded: ArrayView2<f64>,
    params: &mut EncoderParams,
) {
    let (d_attended, d_wo, d_bo) =
        affine_backward(cache.attended.view(), params.wo.mat(), d_encoded);
    params.wo.grad_mat_mut().scaled_add(1.0, &d_wo);
    params.bo.grad_vec_mut().scaled_add(1.0, &d_bo);
    let (d_wq, d_wk, d_wv) = attention_backward(&cache.attn, d_attended.view());
    params.wq.grad_mat_mut().scaled_add(1.0, &d_wq);
    params.wk.grad_mat_mut().scaled_add(1.0, &d_wk);
    params.wv.grad_mat_mut().scaled_add(1.0, &d_wv);
}

/// One length-preserving pooled copy of the encoding per temporal scale.
#[derive(Debug, Clone, PartialEq)]
pub struct PooledPyramid {
    pub scales: Vec<usize>,
    pub levels: Vec<Array2<f64>>,
}

impl PooledPyramid {
    pub fn frames(&self) -> usize {
        self.levels.first().map_or(0, Array2::nrows)
    }

    /// Channel-wise concatenation of all levels, `T x (K d)`.
    pub fn concat(&self) -> Array2<f64> {
        let views: Vec<_> = self.levels.iter().map(|l| l.view()).collect();
        concatenate(Axis(1), &views).expect("levels share the frame count")
    }
}

pub fn pool_pyramid(encoded: &EncodedSequence, scales: &[usize]) -> Result<PooledPyramid> {
    let levels = scales
        .iter()
        .map(|&k| avg_pool_1d(encoded.data.view(), k))
        .collect::<Result<Vec<_>>>()?;
    Ok(PooledPyramid {
        scales: scales.to_vec(),
        levels,
    })
}

/// Maps a gradient on the concatenated pyramid back to the encoding.
pub fn pyramid_backward(d_concat: ArrayView2<f64>, scales: &[usize]) -> Array2<f64> {
    let dim = d_concat.ncols() / scales.len();
    let mut d_encoded = Array2::zeros((d_concat.nrows(), dim));
    for (i, &k) in scales.iter().enumerate() {
        let block = d_concat.slice(s![.., i * dim..(i + 1) * dim]);
        d_encoded += &avg_pool_1d_backward(block, k);
    }
    d_encoded
}
