//! Utterance conversion along the four encoder/decoder paths.
//!
//! Per frame, the input-domain encoder's posterior mean is decoded with the
//! output-domain decoder and the target speaker code (no sampling, so
//! conversion is deterministic). F0 moves through the log-domain
//! mean-variance transform; aperiodicity and energy pass through untouched.
//! MCC-domain outputs optionally receive the global-variance post-filter and
//! Gaussian temporal smoothing, in that order, before any spectrum is
//! synthesized from them.

use std::path::{Path, PathBuf};

use crate::corpus::{Corpus, Utterance};
use crate::error::{Error, Result};
use crate::features::{
    convert_f0, denormalize_sp, gaussian_smooth, gv_postfilter, normalize_sp, FeatureKind,
    FeatureSequence, MccCodec,
};
use crate::io::{write_feature_file, write_manifest, ManifestEntry};
use crate::model::{ObjectiveKind, SpectralDomain};
use crate::nn::Matrix;
use crate::train::Checkpoint;

/// Input-domain to output-domain conversion route.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ConversionPath {
    SpSp,
    SpMcc,
    MccSp,
    MccMcc,
}

impl ConversionPath {
    pub const ALL: [ConversionPath; 4] = [
        ConversionPath::SpSp,
        ConversionPath::SpMcc,
        ConversionPath::MccSp,
        ConversionPath::MccMcc,
    ];

    pub fn input_domain(self) -> SpectralDomain {
        match self {
            ConversionPath::SpSp | ConversionPath::SpMcc => SpectralDomain::Sp,
            ConversionPath::MccSp | ConversionPath::MccMcc => SpectralDomain::Mcc,
        }
    }

    pub fn output_domain(self) -> SpectralDomain {
        match self {
            ConversionPath::SpSp | ConversionPath::MccSp => SpectralDomain::Sp,
            ConversionPath::SpMcc | ConversionPath::MccMcc => SpectralDomain::Mcc,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ConversionPath::SpSp => "sp-sp",
            ConversionPath::SpMcc => "sp-mcc",
            ConversionPath::MccSp => "mcc-sp",
            ConversionPath::MccMcc => "mcc-mcc",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "sp-sp" => ConversionPath::SpSp,
            "sp-mcc" => ConversionPath::SpMcc,
            "mcc-sp" => ConversionPath::MccSp,
            "mcc-mcc" => ConversionPath::MccMcc,
            other => {
                return Err(Error::Config(format!(
                    "unknown conversion path '{other}' (expected sp-sp, sp-mcc, mcc-sp, or mcc-mcc)"
                )))
            }
        })
    }
}

/// Post-processing switches; both filters act on MCC-domain conversion
/// outputs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PostFilterFlags {
    pub gv: bool,
    pub smooth: bool,
    pub smooth_sigma: f64,
}

impl Default for PostFilterFlags {
    fn default() -> Self {
        PostFilterFlags {
            gv: true,
            smooth: true,
            smooth_sigma: 1.0,
        }
    }
}

impl PostFilterFlags {
    pub fn off() -> Self {
        PostFilterFlags {
            gv: false,
            smooth: false,
            smooth_sigma: 0.0,
        }
    }
}

/// A converted utterance: spectra in both representations plus the untouched
/// side streams and the latent trajectory that produced them.
#[derive(Debug, Clone)]
pub struct ConvertedUtterance {
    pub source_speaker: String,
    pub target_speaker: String,
    pub utt_id: String,
    pub path: ConversionPath,
    /// Converted spectral envelope carrying the source frame energies.
    pub sp: FeatureSequence,
    /// Cepstral view of the conversion output: the (post-filtered) decoder
    /// output for MCC paths, or coefficients derived from the converted
    /// spectrum for SP paths.
    pub mcc: FeatureSequence,
    pub f0: FeatureSequence,
    pub ap: FeatureSequence,
    pub log_energy: FeatureSequence,
    /// Per-frame posterior means, `T x latent_dim`.
    pub latent_means: Matrix,
}

/// Checks that the checkpoint's objective actually trained the networks the
/// path needs; single-domain baselines only cover their own within-domain
/// route.
pub fn check_path_supported(objective: ObjectiveKind, path: ConversionPath) -> Result<()> {
    let ok = match objective {
        ObjectiveKind::Cdvae => true,
        ObjectiveKind::VaeSp => path == ConversionPath::SpSp,
        ObjectiveKind::VaeMcc => path == ConversionPath::MccMcc,
    };
    if ok {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "path {} needs encoder/decoder pairs the {} baseline checkpoint never trained",
            path.name(),
            objective.name()
        )))
    }
}

/// Decoder outputs in the normalized-SP domain are clamped to this range
/// before exponentiation so a pathological checkpoint cannot overflow the
/// spectral invariants.
const NORM_SP_LIMIT: f64 = 18.0;

pub fn convert_utterance(
    ckpt: &Checkpoint,
    utt: &Utterance,
    target_speaker: &str,
    path: ConversionPath,
    flags: &PostFilterFlags,
    codec: &MccCodec,
) -> Result<ConvertedUtterance> {
    check_path_supported(ckpt.objective, path)?;
    let params = &ckpt.params;
    let src_stats = ckpt.stats.get(&utt.speaker_id).ok_or_else(|| {
        Error::Lookup(format!("no stored stats for speaker '{}'", utt.speaker_id))
    })?;
    let tgt_stats = ckpt
        .stats
        .get(target_speaker)
        .ok_or_else(|| Error::Lookup(format!("no stored stats for speaker '{target_speaker}'")))?;
    let code = params.speaker_code(target_speaker)?.to_vec();

    let frames = utt.frames();
    let in_domain = path.input_domain();
    let out_domain = path.output_domain();
    let latent_dim = params.config().latent_dim;
    let mut latent_means = Matrix::zeros(frames, latent_dim);
    let mut decoded: Vec<Vec<f64>> = Vec::with_capacity(frames);
    let mut src_log_energy = Vec::with_capacity(frames);

    for t in 0..frames {
        let (_, log_e) = normalize_sp(utt.sp.frame(t))?;
        src_log_energy.push(log_e);
        let x = match in_domain {
            SpectralDomain::Sp => normalize_sp(utt.sp.frame(t))?.0,
            SpectralDomain::Mcc => utt.mcc.frame(t).to_vec(),
        };
        let posterior = params.encode(in_domain, &x)?;
        latent_means.row_mut(t).copy_from_slice(&posterior.mean);
        decoded.push(params.decode(out_domain, &posterior.mean, &code)?);
    }

    let (sp, mcc) = match out_domain {
        SpectralDomain::Mcc => {
            let mut mcc_seq = FeatureSequence::new(
                FeatureKind::Mcc,
                Matrix::from_rows(&decoded)?,
                utt.mcc.frame_period_ms,
                target_speaker,
            )?;
            // GV needs a variance estimate; single-frame utterances skip it.
            if flags.gv && mcc_seq.len() >= 2 {
                mcc_seq = gv_postfilter(&mcc_seq, tgt_stats)?;
            }
            if flags.smooth {
                mcc_seq = gaussian_smooth(&mcc_seq, flags.smooth_sigma)?;
            }
            let mut sp_rows = Vec::with_capacity(frames);
            for t in 0..frames {
                let raw = codec.mcc_to_sp(mcc_seq.frame(t))?;
                let (shape, _) = normalize_sp(&raw)?;
                sp_rows.push(denormalize_sp(&shape, src_log_energy[t]));
            }
            let sp_seq = FeatureSequence::new(
                FeatureKind::Sp,
                Matrix::from_rows(&sp_rows)?,
                utt.sp.frame_period_ms,
                target_speaker,
            )?;
            (sp_seq, mcc_seq)
        }
        SpectralDomain::Sp => {
            let mut sp_rows = Vec::with_capacity(frames);
            let mut mcc_rows = Vec::with_capacity(frames);
            for (t, row) in decoded.iter().enumerate() {
                let shape: Vec<f64> = row
                    .iter()
                    .map(|v| v.clamp(-NORM_SP_LIMIT, NORM_SP_LIMIT))
                    .collect();
                let sp_row = denormalize_sp(&shape, src_log_energy[t]);
                mcc_rows.push(codec.sp_to_mcc(&sp_row)?);
                sp_rows.push(sp_row);
            }
            let sp_seq = FeatureSequence::new(
                FeatureKind::Sp,
                Matrix::from_rows(&sp_rows)?,
                utt.sp.frame_period_ms,
                target_speaker,
            )?;
            let mcc_seq = FeatureSequence::new(
                FeatureKind::Mcc,
                Matrix::from_rows(&mcc_rows)?,
                utt.mcc.frame_period_ms,
                target_speaker,
            )?;
            (sp_seq, mcc_seq)
        }
    };

    let mut f0_rows = Vec::with_capacity(frames);
    for t in 0..frames {
        f0_rows.push(vec![convert_f0(utt.f0.frame(t)[0], src_stats, tgt_stats)?]);
    }
    let f0 = FeatureSequence::new(
        FeatureKind::F0,
        Matrix::from_rows(&f0_rows)?,
        utt.f0.frame_period_ms,
        target_speaker,
    )?;
    let mut ap = utt.ap.clone();
    ap.speaker_id = target_speaker.to_string();
    let mut log_energy = utt.log_energy.clone();
    log_energy.speaker_id = target_speaker.to_string();

    Ok(ConvertedUtterance {
        source_speaker: utt.speaker_id.clone(),
        target_speaker: target_speaker.to_string(),
        utt_id: utt.utt_id.clone(),
        path,
        sp,
        mcc,
        f0,
        ap,
        log_energy,
        latent_means,
    })
}

/// Converts every utterance of each `(source, target)` speaker pair and
/// writes one feature-file bundle per utterance under `out_dir`, plus a
/// manifest covering all bundles. Returns the paths written (empty input,
/// empty output). Re-runs overwrite byte-identically.
pub fn batch_convert(
    ckpt: &Checkpoint,
    corpus: &Corpus,
    pairs: &[(String, String)],
    path: ConversionPath,
    flags: &PostFilterFlags,
    codec: &MccCodec,
    out_dir: &Path,
) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    let mut entries = Vec::new();
    for (src, tgt) in pairs {
        let utts = corpus.utterances_of(src);
        if utts.is_empty() {
            return Err(Error::Data(format!(
                "no utterances for source speaker '{src}'"
            )));
        }
        for utt in utts {
            let conv = convert_utterance(ckpt, utt, tgt, path, flags, codec)?;
            let bundle_dir = PathBuf::from(format!("{src}-to-{tgt}-{}", path.name()));
            let rel = |kind: FeatureKind| {
                bundle_dir.join(format!("{}.{}.cdvf", conv.utt_id, kind.name()))
            };
            let streams = [
                (&conv.sp, FeatureKind::Sp),
                (&conv.mcc, FeatureKind::Mcc),
                (&conv.ap, FeatureKind::Ap),
                (&conv.f0, FeatureKind::F0),
                (&conv.log_energy, FeatureKind::LogEnergy),
            ];
            for (seq, kind) in streams {
                let p = out_dir.join(rel(kind));
                write_feature_file(&p, seq)?;
                written.push(p);
            }
            entries.push(ManifestEntry {
                speaker_id: tgt.clone(),
                utt_id: format!("{src}-{}", conv.utt_id),
                sp: rel(FeatureKind::Sp),
                mcc: rel(FeatureKind::Mcc),
                ap: rel(FeatureKind::Ap),
                f0: rel(FeatureKind::F0),
                log_energy: rel(FeatureKind::LogEnergy),
            });
        }
    }
    if !entries.is_empty() {
        let manifest = out_dir.join("converted.tsv");
        write_manifest(&manifest, &entries)?;
        written.push(manifest);
    }
    Ok(written)
}
