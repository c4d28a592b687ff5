//! Mel-cepstral distortion.

use crate::error::{Error, Result};
use crate::features::{FeatureSequence, SP_DIM};

/// `10 / ln 10`, the dB scale of the distortion measure.
const DB_SCALE: f64 = 4.342944819032518;

/// Silence gate: frames whose power is more than this far below the loudest
/// frame are excluded from sequence-level MCD.
pub const DEFAULT_SILENCE_THRESHOLD_DB: f64 = 40.0;

/// Frame-level mel-cepstral distortion in dB, excluding the 0th (power)
/// coefficient: `(10 / ln 10) * sqrt(2 * sum_{d>=1} (a_d - b_d)^2)`.
pub fn mcd_frame(mcc_a: &[f64], mcc_b: &[f64]) -> Result<f64> {
    if mcc_a.len() != mcc_b.len() {
        return Err(Error::Shape(format!(
            "mcd_frame: {} vs {} coefficients",
            mcc_a.len(),
            mcc_b.len()
        )));
    }
    let sq: f64 = mcc_a
        .iter()
        .zip(mcc_b)
        .skip(1)
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(DB_SCALE * (2.0 * sq).sqrt())
}

/// The 0th coefficient of the orthonormal cosine transform is
/// `sqrt(n_bins) * mean(ln amplitude)`, so frame power in dB is
/// `(20 / ln 10) * c0 / sqrt(n_bins)`.
fn c0_to_db(c0: f64) -> f64 {
    2.0 * DB_SCALE * c0 / (SP_DIM as f64).sqrt()
}

/// Sum of frame-level MCDs over non-silent frames plus the kept-frame
/// count, for pooling across utterances. A frame counts as non-silent when
/// the reference (`seq_ref`) power is within `silence_threshold_db` of the
/// loudest reference frame.
pub fn masked_mcd_sum(
    seq: &FeatureSequence,
    seq_ref: &FeatureSequence,
    silence_threshold_db: f64,
) -> Result<(f64, usize)> {
    if seq.len() != seq_ref.len() {
        return Err(Error::Shape(format!(
            "mcd: {} vs {} frames (sequences must be pre-aligned)",
            seq.len(),
            seq_ref.len()
        )));
    }
    let peak_db = seq_ref
        .frames
        .rows_iter()
        .map(|f| c0_to_db(f[0]))
        .fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    let mut kept = 0usize;
    for (frame, ref_frame) in seq.frames.rows_iter().zip(seq_ref.frames.rows_iter()) {
        if c0_to_db(ref_frame[0]) <= peak_db - silence_threshold_db {
            continue;
        }
        total += mcd_frame(frame, ref_frame)?;
        kept += 1;
    }
    Ok((total, kept))
}

/// Mean frame-level MCD over the non-silent frames of two pre-aligned
/// sequences.
pub fn mean_mcd(
    seq: &FeatureSequence,
    seq_ref: &FeatureSequence,
    silence_threshold_db: f64,
) -> Result<f64> {
    let (total, kept) = masked_mcd_sum(seq, seq_ref, silence_threshold_db)?;
    if kept == 0 {
        return Err(Error::Eval(
            "mean_mcd: no non-silent frames under the given threshold".into(),
        ));
    }
    Ok(total / kept as f64)
}
