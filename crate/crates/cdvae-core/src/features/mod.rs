//! Frame-level feature containers, codecs, and metrics.

pub mod f0;
pub mod mcc;
pub mod mcd;
pub mod postfilter;
pub mod smooth;
pub mod sp_norm;

pub use f0::{convert_f0, f0_statistics};
pub use mcc::{mcc_to_sp, sp_to_mcc, MccCodec, MccWarpConfig};
pub use mcd::{masked_mcd_sum, mcd_frame, mean_mcd, DEFAULT_SILENCE_THRESHOLD_DB};
pub use postfilter::gv_postfilter;
pub use smooth::gaussian_smooth;
pub use sp_norm::{denormalize_sp, normalize_sp};

use crate::error::{Error, Result};
use crate::nn::Matrix;

/// Bins per spectral-envelope / aperiodicity frame.
pub const SP_DIM: usize = 513;
/// Mel-cepstral coefficients per frame, including the 0th (power) term.
pub const MCC_DIM: usize = 35;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FeatureKind {
    /// Spectral envelope, positive amplitudes.
    Sp,
    /// Mel-cepstral coefficients.
    Mcc,
    /// Aperiodicity spectrum, positive.
    Ap,
    /// Fundamental frequency in Hz; 0 marks unvoiced frames.
    F0,
    /// Per-frame log10 energy removed by spectral normalization.
    LogEnergy,
}

impl FeatureKind {
    pub fn tag(self) -> u8 {
        match self {
            FeatureKind::Sp => 0,
            FeatureKind::Mcc => 1,
            FeatureKind::Ap => 2,
            FeatureKind::F0 => 3,
            FeatureKind::LogEnergy => 4,
        }
    }

    pub fn from_tag(tag: u8) -> Result<Self> {
        Ok(match tag {
            0 => FeatureKind::Sp,
            1 => FeatureKind::Mcc,
            2 => FeatureKind::Ap,
            3 => FeatureKind::F0,
            4 => FeatureKind::LogEnergy,
            other => return Err(Error::Parse(format!("unknown feature domain tag {other}"))),
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            FeatureKind::Sp => "sp",
            FeatureKind::Mcc => "mcc",
            FeatureKind::Ap => "ap",
            FeatureKind::F0 => "f0",
            FeatureKind::LogEnergy => "en",
        }
    }
}

/// Time-ordered frames of one feature domain with metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSequence {
    pub kind: FeatureKind,
    /// `T x D`, one row per frame.
    pub frames: Matrix,
    pub frame_period_ms: f64,
    pub speaker_id: String,
}

impl FeatureSequence {
    /// Validates the per-domain invariants: SP/AP are 513-dim and strictly
    /// positive, MCC is 35-dim, F0 is 1-dim and nonnegative, and T >= 1.
    pub fn new(
        kind: FeatureKind,
        frames: Matrix,
        frame_period_ms: f64,
        speaker_id: impl Into<String>,
    ) -> Result<Self> {
        if frames.rows() == 0 {
            return Err(Error::Data(
                "feature sequence needs at least one frame".into(),
            ));
        }
        let dim = frames.cols();
        match kind {
            FeatureKind::Sp | FeatureKind::Ap => {
                if dim != SP_DIM {
                    return Err(Error::Data(format!(
                        "{} frames must have {SP_DIM} bins, found {dim}",
                        kind.name()
                    )));
                }
                if frames.data().iter().any(|v| !(*v > 0.0)) {
                    return Err(Error::Domain(format!(
                        "{} frames must be strictly positive",
                        kind.name()
                    )));
                }
            }
            FeatureKind::Mcc => {
                if dim != MCC_DIM {
                    return Err(Error::Data(format!(
                        "mcc frames must have {MCC_DIM} coefficients, found {dim}"
                    )));
                }
            }
            FeatureKind::F0 => {
                if dim != 1 {
                    return Err(Error::Data(format!("f0 frames must be 1-dim, found {dim}")));
                }
                if frames.data().iter().any(|v| *v < 0.0) {
                    return Err(Error::Domain("f0 must be nonnegative".into()));
                }
            }
            FeatureKind::LogEnergy => {
                if dim != 1 {
                    return Err(Error::Data(format!(
                        "log-energy frames must be 1-dim, found {dim}"
                    )));
                }
            }
        }
        Ok(FeatureSequence {
            kind,
            frames,
            frame_period_ms,
            speaker_id: speaker_id.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.frames.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.frames.cols()
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        self.frames.row(t)
    }
}

/// Conversion-time statistics of one speaker, computed from training data.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeakerStats {
    pub speaker_id: String,
    /// Mean of ln(F0) over voiced frames.
    pub logf0_mean: f64,
    /// Population std of ln(F0) over voiced frames.
    pub logf0_std: f64,
    /// Per-dimension mean of training MCCs.
    pub mcc_mean: Vec<f64>,
    /// Per-dimension global variance of training MCCs.
    pub mcc_gv: Vec<f64>,
}
