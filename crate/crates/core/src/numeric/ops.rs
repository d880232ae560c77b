use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::error::{Error, Result};

/// `y = x W + b`, applied to every row of `x`.
pub fn affine(x: ArrayView2<f64>, w: ArrayView2<f64>, b: ArrayView1<f64>) -> Result<Array2<f64>> {
    if x.ncols() != w.nrows() || w.ncols() != b.len() {
        return Err(Error::Shape(format!(
            "affine: x is {}x{}, W is {}x{}, b has {}",
            x.nrows(),
            x.ncols(),
            w.nrows(),
            w.ncols(),
            b.len()
        )));
    }
    let mut y = x.dot(&w);
    y += &b;
    Ok(y)
}

/// Returns `(dx, dW, db)` for `y = x W + b` given `dy`.
pub fn affine_backward(
    x: ArrayView2<f64>,
    w: ArrayView2<f64>,
    dy: ArrayView2<f64>,
) -> (Array2<f64>, Array2<f64>, Array1<f64>) {
    let dx = dy.dot(&w.t());
    let dw = x.t().dot(&dy);
    let db = dy.sum_axis(Axis(0));
    (dx, dw, db)
}

/// Numerically stable softmax of one logit vector.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Row-wise softmax.
pub fn softmax_rows(logits: ArrayView2<f64>) -> Array2<f64> {
    let mut out = Array2::zeros(logits.raw_dim());
    for (src, mut dst) in logits.rows().into_iter().zip(out.rows_mut()) {
        let row = softmax(&src.to_vec());
        dst.assign(&ArrayView1::from(&row));
    }
    out
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Gradient through `a = tanh(z)` given the activations `a`.
pub fn tanh_backward(activated: ArrayView2<f64>, da: ArrayView2<f64>) -> Array2<f64> {
    let mut dz = da.to_owned();
    dz.zip_mut_with(&activated, |g, &a| *g *= 1.0 - a * a);
    dz
}

/// Layer normalization of a single vector.
pub fn layer_norm(
    x: ArrayView1<f64>,
    gain: ArrayView1<f64>,
    bias: ArrayView1<f64>,
    eps: f64,
) -> Array1<f64> {
    let n = x.len() as f64;
    let mean = x.sum() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let inv_std = 1.0 / (var + eps).sqrt();
    let mut y = x.mapv(|v| (v - mean) * inv_std);
    y *= &gain;
    y += &bias;
    y
}

#[derive(Debug, Clone)]
pub struct LayerNormCache {
    normalized: Array2<f64>,
    inv_std: Array1<f64>,
}

/// Layer normalization applied to each row of `x`.
pub fn layer_norm_rows(
    x: ArrayView2<f64>,
    gain: ArrayView1<f64>,
    bias: ArrayView1<f64>,
    eps: f64,
) -> (Array2<f64>, LayerNormCache) {
    let n = x.ncols() as f64;
    let mut normalized = Array2::zeros(x.raw_dim());
    let mut inv_std = Array1::zeros(x.nrows());
    for (i, row) in x.rows().into_iter().enumerate() {
        let mean = row.sum() / n;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let r = 1.0 / (var + eps).sqrt();
        inv_std[i] = r;
        normalized.row_mut(i).assign(&row.mapv(|v| (v - mean) * r));
    }
    let mut y = &normalized * &gain;
    y += &bias;
    (
        y,
        LayerNormCache {
            normalized,
            inv_std,
        },
    )
}

/// Returns `(dx, dgain, dbias)`.
pub fn layer_norm_rows_backward(
    cache: &LayerNormCache,
    gain: ArrayView1<f64>,
    dy: ArrayView2<f64>,
) -> (Array2<f64>, Array1<f64>, Array1<f64>) {
    let n = dy.ncols() as f64;
    let dgain = (&dy * &cache.normalized).sum_axis(Axis(0));
    let dbias = dy.sum_axis(Axis(0));
    let mut dx = Array2::zeros(dy.raw_dim());
    for i in 0..dy.nrows() {
        let xhat = cache.normalized.row(i);
        let dxhat = &dy.row(i) * &gain;
        let mean_d = dxhat.sum() / n;
        let mean_dx = (&dxhat * &xhat).sum() / n;
        let r = cache.inv_std[i];
        let row = dxhat
            .iter()
            .zip(xhat.iter())
            .map(|(&d, &h)| r * (d - mean_d - h * mean_dx));
        for (dst, v) in dx.row_mut(i).iter_mut().zip(row) {
            *dst = v;
        }
    }
    (dx, dgain, dbias)
}

/// Half-open row range averaged into output row `t` by a length-preserving
/// pool of width `kernel`: `ceil(k/2) - 1` rows to the left, `floor(k/2)`
/// to the right, clipped to `[0, len)`.
pub fn pool_window(t: usize, len: usize, kernel: usize) -> (usize, usize) {
    let left = kernel.div_ceil(2) - 1;
    let right = kernel / 2;
    let lo = t.saturating_sub(left);
    let hi = (t + right + 1).min(len);
    (lo, hi)
}

/// Stride-1 average pooling along time that keeps the sequence length.
/// Edge windows average only the rows that fall inside the sequence.
pub fn avg_pool_1d(x: ArrayView2<f64>, kernel: usize) -> Result<Array2<f64>> {
    if kernel < 1 {
        return Err(Error::InvalidArgument("pooling kernel must be >= 1".into()));
    }
    let len = x.nrows();
    let mut prefix = Array2::<f64>::zeros((len + 1, x.ncols()));
    for t in 0..len {
        let next = &prefix.row(t) + &x.row(t);
        prefix.row_mut(t + 1).assign(&next);
    }
    let mut out = Array2::zeros(x.raw_dim());
    for t in 0..len {
        let (lo, hi) = pool_window(t, len, kernel);
        let count = (hi - lo) as f64;
        let window = (&prefix.row(hi) - &prefix.row(lo)) / count;
        out.row_mut(t).assign(&window);
    }
    Ok(out)
}

pub fn avg_pool_1d_backward(dy: ArrayView2<f64>, kernel: usize) -> Array2<f64> {
    let len = dy.nrows();
    // Scatter each output gradient uniformly over its window using a
    // difference array.
    let mut diff = Array2::<f64>::zeros((len + 1, dy.ncols()));
    for t in 0..len {
        let (lo, hi) = pool_window(t, len, kernel);
        let share = &dy.row(t) / (hi - lo) as f64;
        let mut start = diff.row_mut(lo);
        start += &share;
        let mut end = diff.row_mut(hi);
        end -= &share;
    }
    let mut dx = Array2::zeros(dy.raw_dim());
    let mut running = Array1::<f64>::zeros(dy.ncols());
    for t in 0..len {
        running += &diff.row(t);
        dx.row_mut(t).assign(&running);
    }
    dx
}

#[derive(Debug, Clone)]
pub struct AttentionCache {
    input: Array2<f64>,
    query: Array2<f64>,
    key: Array2<f64>,
    value: Array2<f64>,
    /// Row-stochastic attention weights, `T x T`.
    pub weights: Array2<f64>,
    scale: f64,
}

/// Single-head scaled dot-product self-attention, scale `1/sqrt(h)`.
pub fn attention(
    x: ArrayView2<f64>,
    wq: ArrayView2<f64>,
    wk: ArrayView2<f64>,
    wv: ArrayView2<f64>,
) -> Result<(Array2<f64>, AttentionCache)> {
    let d = x.ncols();
    for (name, w) in [("Wq", &wq), ("Wk", &wk), ("Wv", &wv)] {
        if w.nrows() != d {
            return Err(Error::Shape(format!(
                "attention: {name} has {} rows, input has {d} columns",
                w.nrows()
            )));
        }
    }
    if wq.ncols() != wk.ncols() {
        return Err(Error::Shape("attention: Wq and Wk widths differ".into()));
    }
    let scale = 1.0 / (wq.ncols() as f64).sqrt();
    let query = x.dot(&wq);
    let key = x.dot(&wk);
    let value = x.dot(&wv);
    let scores = query.dot(&key.t()) * scale;
    let weights = softmax_rows(scores.view());
    let out = weights.dot(&value);
    Ok((
        out,
        AttentionCache {
            input: x.to_owned(),
            query,
            key,
            value,
            weights,
            scale,
        },
    ))
}

/// Gradients `(dWq, dWk, dWv)` of self-attention. The input is treated as
/// data, so no input gradient is produced.
pub fn attention_backward(
    cache: &AttentionCache,
    dout: ArrayView2<f64>,
) -> (Array2<f64>, Array2<f64>, Array2<f64>) {
    let a = &cache.weights;
    let dvalue = a.t().dot(&dout);
    let da = dout.dot(&cache.value.t());
    let mut dscores = Array2::zeros(a.raw_dim());
    for i in 0..a.nrows() {
        let ar = a.row(i);
        let dar = da.row(i);
        let dot = (&ar * &dar).sum();
        dscores
            .slice_mut(s![i, ..])
            .assign(&(&ar * &dar.mapv(|g| g - dot)));
    }
    dscores *= cache.scale;
    let dquery = dscores.dot(&cache.key);
    let dkey = dscores.t().dot(&cache.query);
    let x_t = cache.input.t();
    (x_t.dot(&dquery), x_t.dot(&dkey), x_t.dot(&dvalue))
}

#[cfg(test)]
mod tests {
    use ndarray::{array, Array2};

    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn affine_identity_and_swap() {
        let x = array![[1.0, 2.0]];
        let eye = Array2::eye(2);
        let y = affine(x.view(), eye.view(), array![0.0, 0.0].view()).unwrap();
        assert_eq!(y, array![[1.0, 2.0]]);
        let swap = array![[0.0, 1.0], [1.0, 0.0]];
        let y = affine(x.view(), swap.view(), array![1.0, 1.0].view()).unwrap();
        assert_eq!(y, array![[3.0, 2.0]]);
    }

    #[test]
    fn affine_rejects_bad_shapes() {
        let x = array![[1.0, 2.0, 3.0]];
        let w = Array2::eye(2);
        assert!(affine(x.view(), w.view(), array![0.0, 0.0].view()).is_err());
    }

    #[test]
    fn affine_bias_gradient_is_ones_for_sum() {
        let x = array![[1.0, -2.0], [0.5, 4.0], [3.0, 3.0]];
        let w = array![[0.3, -1.0, 2.0], [0.1, 0.2, 0.3]];
        let dy = Array2::ones((3, 3));
        let (_, _, db) = affine_backward(x.view(), w.view(), dy.view());
        // Three rows each contribute one.
        assert_eq!(db, array![3.0, 3.0, 3.0]);
        let dy1 = Array2::ones((1, 3));
        let (_, _, db1) = affine_backward(x.slice(s![0..1, ..]), w.view(), dy1.view());
        assert_eq!(db1, array![1.0, 1.0, 1.0]);
    }

    #[test]
    fn softmax_cases() {
        assert_eq!(softmax(&[0.0, 0.0]), vec![0.5, 0.5]);
        let p = softmax(&[1.0f64.ln(), 3.0f64.ln()]);
        assert!(close(p[0], 0.25, 1e-15) && close(p[1], 0.75, 1e-15));
        let p = softmax(&[1000.0, 1000.0]);
        assert_eq!(p, vec![0.5, 0.5]);
    }

    #[test]
    fn layer_norm_cases() {
        let ones = array![1.0, 1.0];
        let zeros = array![0.0, 0.0];
        let y = layer_norm(
            array![4.0, 4.0, 4.0].view(),
            array![1.0, 1.0, 1.0].view(),
            array![0.0, 0.0, 0.0].view(),
            1e-5,
        );
        assert!(y.iter().all(|&v| v == 0.0));
        let y = layer_norm(array![1.0, 3.0].view(), ones.view(), zeros.view(), 1e-12);
        assert!(close(y[0], -1.0, 1e-9) && close(y[1], 1.0, 1e-9));
        // Symmetric gain leaves the normalized part zero-mean, so the output
        // mean is the bias mean.
        let y = layer_norm(
            array![5.0, -2.0].view(),
            ones.view(),
            array![0.3, 0.9].view(),
            1e-5,
        );
        assert!(close(y.mean().unwrap(), 0.6, 1e-12));
    }

    #[test]
    fn avg_pool_examples() {
        let x = array![[1.0], [2.0], [3.0], [4.0]];
        let y = avg_pool_1d(x.view(), 2).unwrap();
        assert_eq!(y, array![[1.5], [2.5], [3.5], [4.0]]);
        assert_eq!(avg_pool_1d(x.view(), 1).unwrap(), x);
        let c = Array2::from_elem((7, 3), 2.5);
        for k in [1, 2, 3, 4, 8, 32] {
            let y = avg_pool_1d(c.view(), k).unwrap();
            assert!(y.iter().all(|&v| close(v, 2.5, 1e-15)));
        }
        assert!(avg_pool_1d(x.view(), 0).is_err());
    }

    #[test]
    fn pool_windows_for_kernel_four() {
        // left = 1, right = 2
        assert_eq!(pool_window(0, 10, 4), (0, 3));
        assert_eq!(pool_window(5, 10, 4), (4, 8));
        assert_eq!(pool_window(9, 10, 4), (8, 10));
        assert_eq!(pool_window(2, 10, 3), (1, 4));
    }

    #[test]
    fn avg_pool_backward_is_adjoint() {
        // <pool(x), y> == <x, pool^T(y)>
        let x = Array2::from_shape_fn((9, 2), |(i, j)| (i as f64 * 0.7 - j as f64).sin());
        let y = Array2::from_shape_fn((9, 2), |(i, j)| (i as f64 + 0.3 * j as f64).cos());
        for k in [1, 2, 3, 4, 8, 16] {
            let lhs = (&avg_pool_1d(x.view(), k).unwrap() * &y).sum();
            let rhs = (&x * &avg_pool_1d_backward(y.view(), k)).sum();
            assert!(close(lhs, rhs, 1e-12), "k={k}: {lhs} vs {rhs}");
        }
    }

    #[test]
    fn attention_identical_rows_and_singleton() {
        let x = Array2::from_shape_fn((5, 3), |(_, j)| j as f64 + 0.5);
        let wq = Array2::from_shape_fn((3, 2), |(i, j)| (i + 2 * j) as f64 * 0.1);
        let wk = Array2::from_shape_fn((3, 2), |(i, j)| (i * j) as f64 * 0.3 - 0.2);
        let wv = Array2::from_shape_fn((3, 2), |(i, j)| i as f64 - j as f64);
        let (out, cache) = attention(x.view(), wq.view(), wk.view(), wv.view()).unwrap();
        let expected = x.row(0).dot(&wv);
        for row in out.rows() {
            for (a, b) in row.iter().zip(expected.iter()) {
                assert!(close(*a, *b, 1e-12));
            }
        }
        for row in cache.weights.rows() {
            assert!(close(row.sum(), 1.0, 1e-12));
            assert!(row.iter().all(|&w| w >= 0.0));
        }
        let single = array![[0.4, -1.0, 2.0]];
        let (out, _) = attention(single.view(), wq.view(), wk.view(), wv.view()).unwrap();
        let expected = single.row(0).dot(&wv);
        assert!(close(out[[0, 0]], expected[0], 1e-15) && close(out[[0, 1]], expected[1], 1e-15));
    }
}
