//! Mel-warped cepstral analysis and synthesis.
//!
//! Analysis maps a positive spectral frame to cepstral coefficients in three
//! closed-form steps:
//!
//! 1. take the natural-log amplitude on the uniform 513-bin grid;
//! 2. resample it onto the all-pass warped frequency grid
//!    `phase(w) = w + 2 atan(alpha sin w / (1 - alpha cos w))`
//!    by linear interpolation (the inverse warp is the same map with
//!    `-alpha`);
//! 3. apply an orthonormal even-symmetric cosine transform (type-II DCT on
//!    the 513 points) and truncate.
//!
//! Synthesis zero-pads, applies the transpose transform, unwarps, and
//! exponentiates. With `alpha = 0` and full order the round trip is exact up
//! to rounding; with warping it is exact up to the two interpolations.

use crate::error::{Error, Result};
use crate::nn::Matrix;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MccWarpConfig {
    /// All-pass warping coefficient in `[0, 1)`.
    pub alpha: f64,
    /// Number of cepstral coefficients kept.
    pub order: usize,
    /// Spectral bins per frame.
    pub n_bins: usize,
}

impl Default for MccWarpConfig {
    fn default() -> Self {
        MccWarpConfig {
            alpha: 0.455,
            order: super::MCC_DIM,
            n_bins: super::SP_DIM,
        }
    }
}

/// Phase response of the first-order all-pass element; maps `[0, pi]` onto
/// itself monotonically, with the inverse given by negating `alpha`.
pub fn warp_phase(omega: f64, alpha: f64) -> f64 {
    omega + 2.0 * (alpha * omega.sin()).atan2(1.0 - alpha * omega.cos())
}

/// Precomputed basis and warp tables for one [`MccWarpConfig`].
#[derive(Debug, Clone)]
pub struct MccCodec {
    cfg: MccWarpConfig,
    /// Orthonormal cosine basis, `n_bins x n_bins`; row `k` is the k-th
    /// basis function, and the matrix transpose is its inverse.
    basis: Matrix,
    /// Fractional source index per analysis bin (inverse warp).
    analysis_pos: Vec<f64>,
    /// Fractional source index per synthesis bin (forward warp).
    synthesis_pos: Vec<f64>,
}

impl MccCodec {
    pub fn new(cfg: MccWarpConfig) -> Result<Self> {
        if cfg.order == 0 || cfg.n_bins < 2 {
            return Err(Error::Config(format!(
                "mcc: need order >= 1 and n_bins >= 2, got order {} n_bins {}",
                cfg.order, cfg.n_bins
            )));
        }
        if cfg.order > cfg.n_bins {
            return Err(Error::Config(format!(
                "mcc: order {} exceeds n_bins {}",
                cfg.order, cfg.n_bins
            )));
        }
        if !(0.0..1.0).contains(&cfg.alpha) {
            return Err(Error::Config(format!(
                "mcc: alpha must be in [0, 1), got {}",
                cfg.alpha
            )));
        }
        let n = cfg.n_bins;
        let mut basis = Matrix::zeros(n, n);
        let norm = (2.0 / n as f64).sqrt();
        for k in 0..n {
            let scale = if k == 0 { norm / 2f64.sqrt() } else { norm };
            let row = basis.row_mut(k);
            for (i, v) in row.iter_mut().enumerate() {
                *v = scale
                    * (std::f64::consts::PI * (2.0 * i as f64 + 1.0) * k as f64 / (2.0 * n as f64))
                        .cos();
            }
        }
        let grid_scale = (n - 1) as f64 / std::f64::consts::PI;
        let omega = |i: usize| std::f64::consts::PI * i as f64 / (n - 1) as f64;
        let analysis_pos = (0..n)
            .map(|i| warp_phase(omega(i), -cfg.alpha) * grid_scale)
            .collect();
        let synthesis_pos = (0..n)
            .map(|i| warp_phase(omega(i), cfg.alpha) * grid_scale)
            .collect();
        Ok(MccCodec {
            cfg,
            basis,
            analysis_pos,
            synthesis_pos,
        })
    }

    pub fn config(&self) -> &MccWarpConfig {
        &self.cfg
    }

    /// Spectral frame -> `order` cepstral coefficients.
    pub fn sp_to_mcc(&self, sp_frame: &[f64]) -> Result<Vec<f64>> {
        let n = self.cfg.n_bins;
        if sp_frame.len() != n {
            return Err(Error::Shape(format!(
                "sp_to_mcc: expected {n} bins, found {}",
                sp_frame.len()
            )));
        }
        if let Some(i) = sp_frame.iter().position(|v| !(*v > 0.0)) {
            return Err(Error::Domain(format!(
                "sp_to_mcc: bin {i} is non-positive ({})",
                sp_frame[i]
            )));
        }
        let log_spec: Vec<f64> = sp_frame.iter().map(|v| v.ln()).collect();
        let warped: Vec<f64> = self
            .analysis_pos
            .iter()
            .map(|&p| lerp(&log_spec, p))
            .collect();
        Ok((0..self.cfg.order)
            .map(|k| dot(self.basis.row(k), &warped))
            .collect())
    }

    /// Cepstral coefficients (length <= `n_bins`) -> spectral frame.
    pub fn mcc_to_sp(&self, mcc: &[f64]) -> Result<Vec<f64>> {
        let n = self.cfg.n_bins;
        if mcc.len() > n {
            return Err(Error::Shape(format!(
                "mcc_to_sp: {} coefficients exceed n_bins {n}",
                mcc.len()
            )));
        }
        // Transpose-apply the kept basis rows (zero padding is implicit).
        let mut warped = vec![0.0; n];
        for (k, &c) in mcc.iter().enumerate() {
            if c == 0.0 {
                continue;
            }
            for (w, b) in warped.iter_mut().zip(self.basis.row(k)) {
                *w += c * b;
            }
        }
        Ok(self
            .synthesis_pos
            .iter()
            .map(|&p| lerp(&warped, p).exp())
            .collect())
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |acc, (x, y)| x.mul_add(*y, acc))
}

/// Linear interpolation of `values` at fractional index `pos`, clamped to
/// the valid range.
fn lerp(values: &[f64], pos: f64) -> f64 {
    let last = values.len() - 1;
    if pos <= 0.0 {
        return values[0];
    }
    if pos >= last as f64 {
        return values[last];
    }
    let i = pos.floor() as usize;
    let frac = pos - i as f64;
    values[i] * (1.0 - frac) + values[i + 1] * frac
}

/// Convenience wrapper that builds a codec per call; pipelines should hold a
/// [`MccCodec`] instead.
pub fn sp_to_mcc(sp_frame: &[f64], cfg: &MccWarpConfig) -> Result<Vec<f64>> {
    MccCodec::new(*cfg)?.sp_to_mcc(sp_frame)
}

pub fn mcc_to_sp(mcc: &[f64], cfg: &MccWarpConfig) -> Result<Vec<f64>> {
    MccCodec::new(*cfg)?.mcc_to_sp(mcc)
}
