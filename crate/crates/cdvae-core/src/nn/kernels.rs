//! Layer primitives shared by the tape and the inference-only forward path.

use crate::error::{Error, Result};
use crate::nn::matrix::Matrix;

/// `y = Wx + b` on raw slices; `w` is row-major `(out, in)`.
pub(crate) fn dense_into(y: &mut [f64], w: &[f64], b: &[f64], x: &[f64]) {
    let n_in = x.len();
    debug_assert_eq!(w.len(), y.len() * n_in);
    debug_assert_eq!(b.len(), y.len());
    for (o, out) in y.iter_mut().enumerate() {
        let row = &w[o * n_in..(o + 1) * n_in];
        let mut acc = b[o];
        for (wi, xi) in row.iter().zip(x) {
            acc = wi.mul_add(*xi, acc);
        }
        *out = acc;
    }
}

pub(crate) fn lrelu_into(y: &mut [f64], x: &[f64], slope: f64) {
    for (out, &v) in y.iter_mut().zip(x) {
        *out = if v > 0.0 { v } else { slope * v };
    }
}

/// Population mean and variance of a slice.
pub(crate) fn mean_var(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var)
}

pub(crate) fn layer_norm_into(y: &mut [f64], x: &[f64], gamma: &[f64], beta: &[f64], eps: f64) {
    let (mean, var) = mean_var(x);
    let inv_std = 1.0 / (var + eps).sqrt();
    for (((out, &v), &g), &b) in y.iter_mut().zip(x).zip(gamma).zip(beta) {
        *out = g * (v - mean) * inv_std + b;
    }
}

/// Dense affine map `y = Wx + b`.
pub fn dense_forward(x: &[f64], w: &Matrix, b: &[f64]) -> Result<Vec<f64>> {
    if w.cols() != x.len() {
        return Err(Error::Shape(format!(
            "dense: weight has {} columns but input has {} elements",
            w.cols(),
            x.len()
        )));
    }
    if w.rows() != b.len() {
        return Err(Error::Shape(format!(
            "dense: weight has {} rows but bias has {} elements",
            w.rows(),
            b.len()
        )));
    }
    let mut y = vec![0.0; w.rows()];
    dense_into(&mut y, w.data(), b, x);
    Ok(y)
}

/// Leaky rectifier with the given negative-side slope.
pub fn lrelu(x: &[f64], slope: f64) -> Vec<f64> {
    let mut y = vec![0.0; x.len()];
    lrelu_into(&mut y, x, slope);
    y
}

/// Layer normalization with learnable scale and shift:
/// `y_i = gamma_i * (x_i - mean(x)) / sqrt(var(x) + eps) + beta_i`
/// using the population variance; `eps` guards zero-variance inputs.
pub fn layer_norm(x: &[f64], gamma: &[f64], beta: &[f64], eps: f64) -> Result<Vec<f64>> {
    if gamma.len() != x.len() || beta.len() != x.len() {
        return Err(Error::Shape(format!(
            "layer_norm: input {}, gamma {}, beta {} lengths must agree",
            x.len(),
            gamma.len(),
            beta.len()
        )));
    }
    if !(eps > 0.0) {
        return Err(Error::Config("layer_norm: eps must be positive".into()));
    }
    let mut y = vec![0.0; x.len()];
    layer_norm_into(&mut y, x, gamma, beta, eps);
    Ok(y)
}
