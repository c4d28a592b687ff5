//! Global-variance post-filter for converted cepstral trajectories.

use crate::error::{Error, Result};
use crate::features::{FeatureKind, FeatureSequence, SpeakerStats};

/// Rescales every dimension d >= 1 so its temporal variance matches the
/// target speaker's global variance, keeping the temporal mean:
/// `y_t = sqrt(gv_d / var_d) * (x_t - mean_d) + mean_d`. The 0th (power)
/// dimension is left untouched. Dimensions where the sequence has zero
/// variance but the target GV is positive pass through with a warning.
pub fn gv_postfilter(seq: &FeatureSequence, tgt: &SpeakerStats) -> Result<FeatureSequence> {
    if seq.kind != FeatureKind::Mcc {
        return Err(Error::Data(format!(
            "gv_postfilter: expected mcc, found {}",
            seq.kind.name()
        )));
    }
    if seq.len() < 2 {
        return Err(Error::Data(
            "gv_postfilter: need at least two frames to estimate variance".into(),
        ));
    }
    if tgt.mcc_gv.len() != seq.dim() {
        return Err(Error::Shape(format!(
            "gv_postfilter: target GV has {} dims, sequence has {}",
            tgt.mcc_gv.len(),
            seq.dim()
        )));
    }
    let means = seq.frames.col_means();
    let vars = seq.frames.col_variances();
    let mut out = seq.clone();
    for d in 1..seq.dim() {
        let gv = tgt.mcc_gv[d];
        if vars[d] == 0.0 {
            if gv > 0.0 {
                eprintln!(
                    "warning: gv_postfilter: dimension {d} has zero variance, passing through"
                );
            }
            continue;
        }
        let scale = (gv / vars[d]).sqrt();
        for t in 0..seq.len() {
            let v = out.frames.get(t, d);
            out.frames.set(t, d, scale * (v - means[d]) + means[d]);
        }
    }
    Ok(out)
}
