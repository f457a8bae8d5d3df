//! Individual layer forward/backward passes. Every backward is the exact
//! adjoint of its forward, verified against central finite differences in
//! the test suite.

use crate::error::{Error, Result};
use crate::nn::par;
use crate::nn::tensor::Tensor;
use crate::prng::Prng;

/// Fixed negative slope for LeakyReLU.
pub const LEAKY_SLOPE: f64 = 0.01;

// ---------------------------------------------------------------------------
// conv1d, "same" padding, arbitrary stride
// ---------------------------------------------------------------------------

/// Output length and left padding for "same" convolution:
/// Lout = ceil(L/s), total pad = max(0, (Lout-1)*s + k - L), split
/// left = floor(total/2).
pub fn same_padding(len: usize, kernel: usize, stride: usize) -> (usize, usize) {
    let l_out = len.div_ceil(stride);
    let total = ((l_out - 1) * stride + kernel).saturating_sub(len);
    (l_out, total / 2)
}

pub struct Conv1dCache {
    x: Tensor,
    w: Tensor,
    stride: usize,
    pad_left: usize,
    l_out: usize,
}

/// x: [B, Cin, L], w: [Cout, Cin, k], b: [Cout] → [B, Cout, Lout].
pub fn conv1d_forward(
    x: &Tensor,
    w: &Tensor,
    b: &Tensor,
    stride: usize,
) -> Result<(Tensor, Conv1dCache)> {
    let [batch, c_in, len] = dims3(x, "conv1d input")?;
    let [c_out, w_cin, kernel] = dims3(w, "conv1d weight")?;
    if w_cin != c_in {
        return Err(Error::Shape(format!(
            "conv1d: input has {c_in} channels, weight expects {w_cin}"
        )));
    }
    b.expect_shape(&[c_out], "conv1d bias")?;
    let (l_out, pad_left) = same_padding(len, kernel, stride);

    let mut out = Tensor::zeros(&[batch, c_out, l_out]);
    let xd = &x.data;
    let wd = &w.data;
    let bd = &b.data;
    par::for_each_chunk(&mut out.data, c_out * l_out, |n, chunk| {
        let x_base = n * c_in * len;
        for co in 0..c_out {
            for t in 0..l_out {
                let mut acc = bd[co];
                for ci in 0..c_in {
                    let w_base = (co * c_in + ci) * kernel;
                    let x_ch = x_base + ci * len;
                    for j in 0..kernel {
                        let i = (t * stride + j) as isize - pad_left as isize;
                        if i >= 0 && (i as usize) < len {
                            acc += wd[w_base + j] * xd[x_ch + i as usize];
                        }
                    }
                }
                chunk[co * l_out + t] = acc;
            }
        }
    });
    let cache = Conv1dCache {
        x: x.clone(),
        w: w.clone(),
        stride,
        pad_left,
        l_out,
    };
    Ok((out, cache))
}

pub fn conv1d_backward(cache: &Conv1dCache, d_out: &Tensor) -> Result<(Tensor, Tensor, Tensor)> {
    let [batch, c_in, len] = dims3(&cache.x, "conv1d cached input")?;
    let [c_out, _, kernel] = dims3(&cache.w, "conv1d cached weight")?;
    d_out.expect_shape(&[batch, c_out, cache.l_out], "conv1d upstream gradient")?;
    let stride = cache.stride;
    let pad_left = cache.pad_left;
    let l_out = cache.l_out;
    let xd = &cache.x.data;
    let wd = &cache.w.data;
    let dod = &d_out.data;

    let mut dx = Tensor::zeros(&cache.x.shape);
    par::for_each_chunk(&mut dx.data, c_in * len, |n, chunk| {
        let do_base = n * c_out * l_out;
        for co in 0..c_out {
            for t in 0..l_out {
                let g = dod[do_base + co * l_out + t];
                if g == 0.0 {
                    continue;
                }
                for ci in 0..c_in {
                    let w_base = (co * c_in + ci) * kernel;
                    for j in 0..kernel {
                        let i = (t * stride + j) as isize - pad_left as isize;
                        if i >= 0 && (i as usize) < len {
                            chunk[ci * len + i as usize] += g * wd[w_base + j];
                        }
                    }
                }
            }
        }
    });

    // per-sample weight/bias partials, summed in batch order for determinism
    let w_len = cache.w.len();
    let partials: Vec<(Vec<f64>, Vec<f64>)> = par::map_indices(batch, |n| {
        let mut dw = vec![0.0; w_len];
        let mut db = vec![0.0; c_out];
        let x_base = n * c_in * len;
        let do_base = n * c_out * l_out;
        for co in 0..c_out {
            for t in 0..l_out {
                let g = dod[do_base + co * l_out + t];
                db[co] += g;
                if g == 0.0 {
                    continue;
                }
                for ci in 0..c_in {
                    let w_base = (co * c_in + ci) * kernel;
                    let x_ch = x_base + ci * len;
                    for j in 0..kernel {
                        let i = (t * stride + j) as isize - pad_left as isize;
                        if i >= 0 && (i as usize) < len {
                            dw[w_base + j] += g * xd[x_ch + i as usize];
                        }
                    }
                }
            }
        }
        (dw, db)
    });
    let mut dw = Tensor::zeros(&cache.w.shape);
    let mut db = Tensor::zeros(&[c_out]);
    for (pw, pb) in &partials {
        for (a, b) in dw.data.iter_mut().zip(pw) {
            *a += b;
        }
        for (a, b) in db.data.iter_mut().zip(pb) {
            *a += b;
        }
    }
    Ok((dx, dw, db))
}

// ---------------------------------------------------------------------------
// activations
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    LeakyRelu,
}

/// Elementwise activation. The cache is the pre-activation input.
pub fn activation_forward(kind: Activation, x: &Tensor) -> (Tensor, Tensor) {
    let mut y = x.clone();
    for v in &mut y.data {
        *v = match kind {
            Activation::Relu => v.max(0.0),
            Activation::LeakyRelu => {
                if *v > 0.0 {
                    *v
                } else {
                    LEAKY_SLOPE * *v
                }
            }
        };
    }
    (y, x.clone())
}

/// Subgradient at zero: 0 for ReLU, the leaky slope for LeakyReLU.
pub fn activation_backward(kind: Activation, cache: &Tensor, d_y: &Tensor) -> Result<Tensor> {
    d_y.expect_shape(&cache.shape, "activation upstream gradient")?;
    let mut dx = d_y.clone();
    for (g, &x) in dx.data.iter_mut().zip(&cache.data) {
        let factor = match kind {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::LeakyRelu => {
                if x > 0.0 {
                    1.0
                } else {
                    LEAKY_SLOPE
                }
            }
        };
        *g *= factor;
    }
    Ok(dx)
}

// ---------------------------------------------------------------------------
// batch normalization over [B, C, L], statistics per channel
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

pub struct BatchNormCache {
    x_hat: Tensor,
    gamma: Vec<f64>,
    inv_std: Vec<f64>,
}

/// Train mode normalizes by batch statistics (biased variance over the
/// B·L axis) and updates running stats r ← momentum·r + (1−momentum)·stat;
/// eval mode normalizes by the running stats.
#[allow(clippy::too_many_arguments)]
pub fn batchnorm1d_forward(
    x: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    running_mean: &mut Tensor,
    running_var: &mut Tensor,
    eps: f64,
    momentum: f64,
    mode: Mode,
) -> Result<(Tensor, Option<BatchNormCache>)> {
    let [batch, channels, len] = dims3(x, "batchnorm input")?;
    gamma.expect_shape(&[channels], "batchnorm gamma")?;
    beta.expect_shape(&[channels], "batchnorm beta")?;
    let m = batch * len;
    if mode == Mode::Train && m < 2 {
        return Err(Error::Data(format!(
            "batchnorm train mode needs at least 2 rows per channel, got {m}"
        )));
    }

    let mut y = Tensor::zeros(&x.shape);
    match mode {
        Mode::Train => {
            let mut x_hat = Tensor::zeros(&x.shape);
            let mut inv_std = vec![0.0; channels];
            for c in 0..channels {
                let mut mean = 0.0;
                for n in 0..batch {
                    let base = (n * channels + c) * len;
                    for t in 0..len {
                        mean += x.data[base + t];
                    }
                }
                mean /= m as f64;
                let mut var = 0.0;
                for n in 0..batch {
                    let base = (n * channels + c) * len;
                    for t in 0..len {
                        let d = x.data[base + t] - mean;
                        var += d * d;
                    }
                }
                var /= m as f64;
                let istd = 1.0 / (var + eps).sqrt();
                inv_std[c] = istd;
                for n in 0..batch {
                    let base = (n * channels + c) * len;
                    for t in 0..len {
                        let xh = (x.data[base + t] - mean) * istd;
                        x_hat.data[base + t] = xh;
                        y.data[base + t] = gamma.data[c] * xh + beta.data[c];
                    }
                }
                running_mean.data[c] = momentum * running_mean.data[c] + (1.0 - momentum) * mean;
                running_var.data[c] = momentum * running_var.data[c] + (1.0 - momentum) * var;
            }
            let cache = BatchNormCache {
                x_hat,
                gamma: gamma.data.clone(),
                inv_std,
            };
            Ok((y, Some(cache)))
        }
        Mode::Eval => {
            for c in 0..channels {
                let istd = 1.0 / (running_var.data[c] + eps).sqrt();
                let mean = running_mean.data[c];
                for n in 0..batch {
                    let base = (n * channels + c) * len;
                    for t in 0..len {
                        y.data[base + t] = gamma.data[c] * (x.data[base + t] - mean) * istd + beta.data[c];
                    }
                }
            }
            Ok((y, None))
        }
    }
}

/// Exact gradients through both the mean and the variance:
/// dX = inv_std/M · (M·dXhat − ΣdXhat − x̂·Σ(dXhat·x̂)).
pub fn batchnorm1d_backward(cache: &BatchNormCache, d_y: &Tensor) -> Result<(Tensor, Tensor, Tensor)> {
    let [batch, channels, len] = dims3(&cache.x_hat, "batchnorm cache")?;
    d_y.expect_shape(&cache.x_hat.shape, "batchnorm upstream gradient")?;
    let m = (batch * len) as f64;

    let mut dx = Tensor::zeros(&cache.x_hat.shape);
    let mut d_gamma = Tensor::zeros(&[channels]);
    let mut d_beta = Tensor::zeros(&[channels]);
    for c in 0..channels {
        let mut sum_dxhat = 0.0;
        let mut sum_dxhat_xhat = 0.0;
        let mut sum_dy = 0.0;
        let mut sum_dy_xhat = 0.0;
        for n in 0..batch {
            let base = (n * channels + c) * len;
            for t in 0..len {
                let dy = d_y.data[base + t];
                let xh = cache.x_hat.data[base + t];
                sum_dy += dy;
                sum_dy_xhat += dy * xh;
                let dxhat = dy * cache.gamma[c];
                sum_dxhat += dxhat;
                sum_dxhat_xhat += dxhat * xh;
            }
        }
        d_beta.data[c] = sum_dy;
        d_gamma.data[c] = sum_dy_xhat;
        let istd = cache.inv_std[c];
        for n in 0..batch {
            let base = (n * channels + c) * len;
            for t in 0..len {
                let dxhat = d_y.data[base + t] * cache.gamma[c];
                let xh = cache.x_hat.data[base + t];
                dx.data[base + t] = istd / m * (m * dxhat - sum_dxhat - xh * sum_dxhat_xhat);
            }
        }
    }
    Ok((dx, d_gamma, d_beta))
}

// ---------------------------------------------------------------------------
// dropout (inverted)
// ---------------------------------------------------------------------------

/// Train mode keeps each element with probability `keep_prob` and scales
/// survivors by 1/keep_prob; eval mode is the identity and draws nothing
/// from the generator. The mask doubles as the backward cache.
pub fn dropout_forward(
    x: &Tensor,
    keep_prob: f64,
    mode: Mode,
    prng: &mut Prng,
) -> Result<(Tensor, Option<Tensor>)> {
    if !(keep_prob > 0.0 && keep_prob <= 1.0) {
        return Err(Error::Config(format!("keep_prob must be in (0, 1], got {keep_prob}")));
    }
    if mode == Mode::Eval || keep_prob == 1.0 {
        let mask = if mode == Mode::Train {
            Some(Tensor::from_vec(&x.shape, vec![1.0; x.len()])?)
        } else {
            None
        };
        return Ok((x.clone(), mask));
    }
    let mut mask = Tensor::zeros(&x.shape);
    let mut y = Tensor::zeros(&x.shape);
    for i in 0..x.len() {
        if prng.next_f64() < keep_prob {
            mask.data[i] = 1.0;
            y.data[i] = x.data[i] / keep_prob;
        }
    }
    Ok((y, Some(mask)))
}

pub fn dropout_backward(mask: &Tensor, keep_prob: f64, d_y: &Tensor) -> Result<Tensor> {
    d_y.expect_shape(&mask.shape, "dropout upstream gradient")?;
    let mut dx = d_y.clone();
    for (g, &m) in dx.data.iter_mut().zip(&mask.data) {
        *g *= m / keep_prob;
    }
    Ok(dx)
}

// ---------------------------------------------------------------------------
// dense
// ---------------------------------------------------------------------------

pub struct DenseCache {
    x: Tensor,
    w: Tensor,
}

/// x: [B, in], w: [out, in], b: [out] → y = x·Wᵀ + b.
pub fn dense_forward(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<(Tensor, DenseCache)> {
    let [batch, d_in] = dims2(x, "dense input")?;
    let [d_out, w_in] = dims2(w, "dense weight")?;
    if w_in != d_in {
        return Err(Error::Shape(format!(
            "dense: input dim {d_in} vs weight dim {w_in}"
        )));
    }
    b.expect_shape(&[d_out], "dense bias")?;
    let mut y = Tensor::zeros(&[batch, d_out]);
    let xd = &x.data;
    let wd = &w.data;
    let bd = &b.data;
    par::for_each_chunk(&mut y.data, d_out, |n, row| {
        let x_row = &xd[n * d_in..(n + 1) * d_in];
        for o in 0..d_out {
            let w_row = &wd[o * d_in..(o + 1) * d_in];
            let mut acc = bd[o];
            for i in 0..d_in {
                acc += x_row[i] * w_row[i];
            }
            row[o] = acc;
        }
    });
    Ok((
        y,
        DenseCache {
            x: x.clone(),
            w: w.clone(),
        },
    ))
}

/// dX = dY·W, dW = dYᵀ·x, db = Σ_batch dY.
pub fn dense_backward(cache: &DenseCache, d_y: &Tensor) -> Result<(Tensor, Tensor, Tensor)> {
    let [batch, d_in] = dims2(&cache.x, "dense cached input")?;
    let [d_out, _] = dims2(&cache.w, "dense cached weight")?;
    d_y.expect_shape(&[batch, d_out], "dense upstream gradient")?;
    let xd = &cache.x.data;
    let wd = &cache.w.data;
    let dyd = &d_y.data;

    let mut dx = Tensor::zeros(&[batch, d_in]);
    par::for_each_chunk(&mut dx.data, d_in, |n, row| {
        let dy_row = &dyd[n * d_out..(n + 1) * d_out];
        for o in 0..d_out {
            let g = dy_row[o];
            if g == 0.0 {
                continue;
            }
            let w_row = &wd[o * d_in..(o + 1) * d_in];
            for i in 0..d_in {
                row[i] += g * w_row[i];
            }
        }
    });

    let mut dw = Tensor::zeros(&[d_out, d_in]);
    par::for_each_chunk(&mut dw.data, d_in, |o, row| {
        for n in 0..batch {
            let g = dyd[n * d_out + o];
            if g == 0.0 {
                continue;
            }
            let x_row = &xd[n * d_in..(n + 1) * d_in];
            for i in 0..d_in {
                row[i] += g * x_row[i];
            }
        }
    });

    let mut db = Tensor::zeros(&[d_out]);
    for n in 0..batch {
        for o in 0..d_out {
            db.data[o] += dyd[n * d_out + o];
        }
    }
    Ok((dx, dw, db))
}

// ---------------------------------------------------------------------------
// softmax
// ---------------------------------------------------------------------------

/// Row-wise stable softmax: exp(f − rowmax) / Σ exp(f − rowmax).
pub fn softmax(logits: &Tensor) -> Result<Tensor> {
    let [batch, classes] = dims2(logits, "softmax input")?;
    let mut out = Tensor::zeros(&[batch, classes]);
    for n in 0..batch {
        let row = &logits.data[n * classes..(n + 1) * classes];
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for (i, &v) in row.iter().enumerate() {
            let e = (v - max).exp();
            out.data[n * classes + i] = e;
            sum += e;
        }
        for i in 0..classes {
            out.data[n * classes + i] /= sum;
        }
    }
    Ok(out)
}

fn dims2(t: &Tensor, what: &str) -> Result<[usize; 2]> {
    match t.shape.as_slice() {
        &[a, b] => Ok([a, b]),
        other => Err(Error::Shape(format!("{what}: expected rank 2, got {other:?}"))),
    }
}

fn dims3(t: &Tensor, what: &str) -> Result<[usize; 3]> {
    match t.shape.as_slice() {
        &[a, b, c] => Ok([a, b, c]),
        other => Err(Error::Shape(format!("{what}: expected rank 3, got {other:?}"))),
    }
}
