//! Energy normalization of spectral-envelope frames.
//!
//! A frame is split into its total energy and a log-amplitude shape:
//! `E = sum(sp)`, `norm_sp = log10(sp / E)`, `log_energy = log10(E)`.
//! [`denormalize_sp`] inverts this exactly.

use crate::error::{Error, Result};

/// Splits a positive spectral frame into a unit-energy log shape and its
/// log10 total energy.
pub fn normalize_sp(sp_frame: &[f64]) -> Result<(Vec<f64>, f64)> {
    if let Some(i) = sp_frame.iter().position(|v| !(*v > 0.0) || !v.is_finite()) {
        return Err(Error::Domain(format!(
            "spectral frame must be strictly positive and finite; bin {i} is {}",
            sp_frame[i]
        )));
    }
    let energy: f64 = sp_frame.iter().sum();
    let log_energy = energy.log10();
    let norm = sp_frame.iter().map(|v| (v / energy).log10()).collect();
    Ok((norm, log_energy))
}

/// Exact inverse of [`normalize_sp`]: `10^norm_sp * 10^log_energy` per bin.
pub fn denormalize_sp(norm_sp: &[f64], log_energy: f64) -> Vec<f64> {
    let scale = 10f64.powf(log_energy);
    norm_sp.iter().map(|v| 10f64.powf(*v) * scale).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Rng;

    #[test]
    fn unit_energy_frame() {
        // Two bins summing to 1: log_energy 0, norm = log10 of the values.
        let frame = [0.25, 0.75];
        let (norm, log_e) = normalize_sp(&frame).unwrap();
        assert_eq!(log_e, 0.0);
        assert!((norm[0] - 0.25f64.log10()).abs() < 1e-15);
        assert!((norm[1] - 0.75f64.log10()).abs() < 1e-15);
    }

    #[test]
    fn uniform_frame_hand_arithmetic() {
        let frame = vec![1.0 / 513.0; 513];
        let (norm, log_e) = normalize_sp(&frame).unwrap();
        assert!(log_e.abs() < 1e-12);
        for v in norm {
            assert!((v - (-2.7101)).abs() < 1e-4, "log10(1/513) = {v}");
        }
    }

    #[test]
    fn round_trip_on_random_positive_frames() {
        let mut rng = Rng::new(401);
        for _ in 0..20 {
            let frame: Vec<f64> = (0..513)
                .map(|_| (rng.standard_normal() * 2.0).exp())
                .collect();
            let (norm, log_e) = normalize_sp(&frame).unwrap();
            let back = denormalize_sp(&norm, log_e);
            for (a, b) in frame.iter().zip(&back) {
                assert!(((a - b) / a).abs() < 1e-12, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn denormalize_is_the_literal_definition() {
        // Zero log-shape with zero energy gives an all-ones frame.
        assert_eq!(denormalize_sp(&[0.0, 0.0, 0.0], 0.0), vec![1.0, 1.0, 1.0]);
        // +1 in log energy scales the output by 10.
        let a = denormalize_sp(&[-1.0, 0.5], 0.25);
        let b = denormalize_sp(&[-1.0, 0.5], 1.25);
        for (x, y) in a.iter().zip(&b) {
            assert!((y / x - 10.0).abs() < 1e-12);
        }
    }

    #[test]
    fn non_positive_entry_rejected() {
        assert!(matches!(normalize_sp(&[1.0, 0.0]), Err(Error::Domain(_))));
        assert!(matches!(normalize_sp(&[1.0, -2.0]), Err(Error::Domain(_))));
    }
}
