//! Log-F0 statistics and the linear mean-variance F0 transform.

use crate::error::{Error, Result};
use crate::features::{FeatureKind, FeatureSequence, SpeakerStats};

/// Mean and population std of `ln(F0)` over voiced frames (`F0 > 0`);
/// unvoiced frames are ignored.
pub fn f0_statistics(sequences: &[&FeatureSequence]) -> Result<(f64, f64)> {
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    let mut n = 0usize;
    for seq in sequences {
        if seq.kind != FeatureKind::F0 {
            return Err(Error::Data(format!(
                "f0_statistics: expected f0 sequences, found {}",
                seq.kind.name()
            )));
        }
        for frame in seq.frames.rows_iter() {
            let f0 = frame[0];
            if f0 > 0.0 {
                let l = f0.ln();
                sum += l;
                sum_sq += l * l;
                n += 1;
            }
        }
    }
    if n == 0 {
        return Err(Error::Stats("f0_statistics: no voiced frames".into()));
    }
    let mean = sum / n as f64;
    let var = (sum_sq / n as f64 - mean * mean).max(0.0);
    Ok((mean, var.sqrt()))
}

/// Linear mean-variance transform in the log-F0 domain; unvoiced frames
/// (`f0 = 0`) pass through unchanged.
pub fn convert_f0(f0: f64, src: &SpeakerStats, tgt: &SpeakerStats) -> Result<f64> {
    if f0 == 0.0 {
        return Ok(0.0);
    }
    if !(src.logf0_std > 0.0) {
        return Err(Error::Stats(format!(
            "convert_f0: source speaker '{}' has degenerate log-F0 std {}",
            src.speaker_id, src.logf0_std
        )));
    }
    let z = (f0.ln() - src.logf0_mean) / src.logf0_std;
    Ok((z * tgt.logf0_std + tgt.logf0_mean).exp())
}
