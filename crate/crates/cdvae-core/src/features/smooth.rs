//! Gaussian low-pass smoothing along the time axis.

use crate::error::{Error, Result};
use crate::features::FeatureSequence;
use crate::nn::Matrix;

/// Per-dimension 1-D convolution with a normalized Gaussian window,
/// truncated at +-3 sigma and renormalized, with reflect padding at the
/// sequence boundaries. `sigma_frames = 0` is the identity.
pub fn gaussian_smooth(seq: &FeatureSequence, sigma_frames: f64) -> Result<FeatureSequence> {
    if !(sigma_frames >= 0.0) {
        return Err(Error::Config(format!(
            "gaussian_smooth: sigma must be >= 0, got {sigma_frames}"
        )));
    }
    if sigma_frames == 0.0 {
        return Ok(seq.clone());
    }
    let radius = (3.0 * sigma_frames).ceil() as i64;
    let mut kernel: Vec<f64> = (-radius..=radius)
        .map(|k| (-(k as f64) * (k as f64) / (2.0 * sigma_frames * sigma_frames)).exp())
        .collect();
    let norm: f64 = kernel.iter().sum();
    for w in &mut kernel {
        *w /= norm;
    }

    let t_len = seq.len();
    let dim = seq.dim();
    let mut out = Matrix::zeros(t_len, dim);
    for t in 0..t_len {
        let row = out.row_mut(t);
        for (k, w) in kernel.iter().enumerate() {
            let src = reflect_index(t as i64 + k as i64 - radius, t_len);
            for (o, v) in row.iter_mut().zip(seq.frames.row(src)) {
                *o += w * v;
            }
        }
    }
    let mut smoothed = seq.clone();
    smoothed.frames = out;
    Ok(smoothed)
}

/// Edge-duplicating reflection (`x[-1] -> x[0]`, `x[len] -> x[len-1]`),
/// which keeps total mass under the boundary folds.
fn reflect_index(mut i: i64, len: usize) -> usize {
    let n = len as i64;
    loop {
        if i < 0 {
            i = -i - 1;
        } else if i >= n {
            i = 2 * n - 1 - i;
        } else {
            return i as usize;
        }
    }
}
