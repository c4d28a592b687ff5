//! Deterministic synthetic two-domain corpus.
//!
//! Spectra are sums of Gaussian formant bumps on the 513-bin grid: each
//! phone has shared template formants, and each speaker applies consistent
//! frequency/amplitude perturbations (a vocal-tract-like warp). The same
//! phone scripts, voicing patterns, and energy envelopes are rendered for
//! every speaker, so utterances are frame-aligned across speakers and MCD
//! needs no time alignment. Training never uses that alignment.

use std::path::{Path, PathBuf};

use crate::corpus::{Corpus, Utterance};
use crate::error::{Error, Result};
use crate::features::{FeatureKind, FeatureSequence, MccCodec, MccWarpConfig, SP_DIM};
use crate::io::{write_feature_file, write_manifest, ManifestEntry};
use crate::nn::{Matrix, Rng};

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub seed: u64,
    pub n_speakers: usize,
    pub utterances_per_speaker: usize,
    pub frames_per_utterance: usize,
    /// Shared content classes (formant templates).
    pub n_phones: usize,
    /// Scale of the per-speaker formant/amplitude perturbations; 0 makes all
    /// speakers spectrally identical.
    pub formant_perturbation: f64,
    pub frame_period_ms: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            seed: 0,
            n_speakers: 2,
            utterances_per_speaker: 10,
            frames_per_utterance: 100,
            n_phones: 8,
            formant_perturbation: 0.3,
            frame_period_ms: 5.0,
        }
    }
}

impl SynthConfig {
    fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("n_speakers", self.n_speakers),
            ("utterances_per_speaker", self.utterances_per_speaker),
            ("frames_per_utterance", self.frames_per_utterance),
            ("n_phones", self.n_phones),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("synth: {name} must be >= 1")));
            }
        }
        if !(self.formant_perturbation >= 0.0) {
            return Err(Error::Config(
                "synth: formant_perturbation must be >= 0".into(),
            ));
        }
        Ok(())
    }
}

struct Formant {
    center: f64,
    bandwidth: f64,
    amplitude: f64,
}

struct Phone {
    formants: [Formant; 3],
    floor: f64,
}

struct SpeakerProfile {
    id: String,
    freq_scale: f64,
    formant_shift: [f64; 3],
    amp_scale: [f64; 3],
    tilt: f64,
    logf0_mean: f64,
    logf0_std: f64,
    noise_scale: f64,
}

struct Script {
    phone_at: Vec<usize>,
    voiced_at: Vec<bool>,
    energy_at: Vec<f64>,
    contour_at: Vec<f64>,
}

fn centered(rng: &mut Rng) -> f64 {
    2.0 * rng.next_f64() - 1.0
}

fn make_phones(rng: &mut Rng, n: usize) -> Vec<Phone> {
    (0..n)
        .map(|_| Phone {
            formants: [
                Formant {
                    center: 25.0 + rng.next_f64() * 65.0,
                    bandwidth: 8.0 + rng.next_f64() * 10.0,
                    amplitude: 2.0 + rng.next_f64() * 6.0,
                },
                Formant {
                    center: 110.0 + rng.next_f64() * 110.0,
                    bandwidth: 10.0 + rng.next_f64() * 12.0,
                    amplitude: 1.5 + rng.next_f64() * 4.0,
                },
                Formant {
                    center: 250.0 + rng.next_f64() * 140.0,
                    bandwidth: 12.0 + rng.next_f64() * 14.0,
                    amplitude: 1.0 + rng.next_f64() * 3.0,
                },
            ],
            floor: 0.02 + rng.next_f64() * 0.03,
        })
        .collect()
}

fn make_speakers(rng: &mut Rng, cfg: &SynthConfig) -> Vec<SpeakerProfile> {
    let p = cfg.formant_perturbation;
    (0..cfg.n_speakers)
        .map(|k| SpeakerProfile {
            id: format!("spk{k}"),
            freq_scale: 1.0 + p * 0.25 * centered(rng),
            formant_shift: [
                p * 12.0 * centered(rng),
                p * 12.0 * centered(rng),
                p * 12.0 * centered(rng),
            ],
            amp_scale: [
                1.0 + p * 0.3 * centered(rng),
                1.0 + p * 0.3 * centered(rng),
                1.0 + p * 0.3 * centered(rng),
            ],
            tilt: p * 0.6 * centered(rng),
            logf0_mean: (105.0f64).ln() + rng.next_f64() * 0.75,
            logf0_std: 0.08 + rng.next_f64() * 0.08,
            noise_scale: 0.03 * p,
        })
        .collect()
}

fn make_script(rng: &mut Rng, cfg: &SynthConfig) -> Script {
    let frames = cfg.frames_per_utterance;
    let mut phone_at = Vec::with_capacity(frames);
    while phone_at.len() < frames {
        let phone = rng.index_below(cfg.n_phones);
        let dur = 5 + rng.index_below(16);
        for _ in 0..dur {
            if phone_at.len() == frames {
                break;
            }
            phone_at.push(phone);
        }
    }
    let mut voiced_at = Vec::with_capacity(frames);
    let mut voiced = true;
    while voiced_at.len() < frames {
        let dur = if voiced {
            12 + rng.index_below(20)
        } else {
            2 + rng.index_below(6)
        };
        for _ in 0..dur {
            if voiced_at.len() == frames {
                break;
            }
            voiced_at.push(voiced);
        }
        voiced = !voiced;
    }
    let cycles = 1.0 + rng.index_below(3) as f64;
    let phase = rng.next_f64() * std::f64::consts::TAU;
    let energy_at = (0..frames)
        .map(|t| {
            (0.25 * (std::f64::consts::TAU * cycles * t as f64 / frames as f64 + phase).sin()).exp()
        })
        .collect();
    let contour_phase = rng.next_f64() * std::f64::consts::TAU;
    let contour_at = (0..frames)
        .map(|t| {
            0.8 * (std::f64::consts::TAU * t as f64 / 50.0 + contour_phase).sin()
                + 0.6 * rng.standard_normal()
        })
        .collect();
    Script {
        phone_at,
        voiced_at,
        energy_at,
        contour_at,
    }
}

fn render_frame(phone: &Phone, spk: &SpeakerProfile, energy: f64, rng: &mut Rng) -> Vec<f64> {
    let mut sp = vec![0.0f64; SP_DIM];
    let mut bumps: [(f64, f64, f64); 3] = [(0.0, 0.0, 0.0); 3];
    for (j, f) in phone.formants.iter().enumerate() {
        let center = (spk.freq_scale * f.center
            + spk.formant_shift[j]
            + spk.noise_scale * 10.0 * rng.standard_normal())
        .clamp(3.0, 509.0);
        let amp = f.amplitude
            * spk.amp_scale[j]
            * (1.0 + spk.noise_scale * rng.standard_normal()).max(0.1);
        bumps[j] = (center, f.bandwidth, amp);
    }
    for (bin, v) in sp.iter_mut().enumerate() {
        let mut acc = phone.floor;
        for (center, bw, amp) in bumps {
            let d = (bin as f64 - center) / bw;
            acc += amp * (-0.5 * d * d).exp();
        }
        let tilt = (spk.tilt * (bin as f64 / (SP_DIM - 1) as f64 - 0.5)).exp();
        *v = acc * tilt * energy;
    }
    sp
}

/// Builds the corpus in memory. Speakers are `spk0..spkN`, utterances
/// `u000..`; all speakers share utterance scripts so the corpus is
/// frame-aligned across speakers.
pub fn synth_corpus(cfg: &SynthConfig) -> Result<Corpus> {
    cfg.validate()?;
    let mut rng = Rng::new(cfg.seed);
    let phones = make_phones(&mut rng, cfg.n_phones);
    let speakers = make_speakers(&mut rng, cfg);
    let scripts: Vec<Script> = (0..cfg.utterances_per_speaker)
        .map(|_| make_script(&mut rng, cfg))
        .collect();
    let codec = MccCodec::new(MccWarpConfig::default())?;

    let mut utterances = Vec::new();
    for spk in &speakers {
        for (u, script) in scripts.iter().enumerate() {
            let frames = cfg.frames_per_utterance;
            let mut sp_rows = Vec::with_capacity(frames);
            let mut mcc_rows = Vec::with_capacity(frames);
            let mut f0_rows = Vec::with_capacity(frames);
            let mut en_rows = Vec::with_capacity(frames);
            for t in 0..frames {
                let sp = render_frame(
                    &phones[script.phone_at[t]],
                    spk,
                    script.energy_at[t],
                    &mut rng,
                );
                mcc_rows.push(codec.sp_to_mcc(&sp)?);
                en_rows.push(vec![sp.iter().sum::<f64>().log10()]);
                let f0 = if script.voiced_at[t] {
                    (spk.logf0_mean + spk.logf0_std * script.contour_at[t]).exp()
                } else {
                    0.0
                };
                f0_rows.push(vec![f0]);
                sp_rows.push(sp);
            }
            let utt_id = format!("u{u:03}");
            let seq = |kind, rows: Vec<Vec<f64>>| -> Result<FeatureSequence> {
                FeatureSequence::new(
                    kind,
                    Matrix::from_rows(&rows)?,
                    cfg.frame_period_ms,
                    spk.id.clone(),
                )
            };
            let ap_rows = vec![vec![0.5; SP_DIM]; frames];
            utterances.push(Utterance::new(
                spk.id.clone(),
                utt_id,
                seq(FeatureKind::Sp, sp_rows)?,
                seq(FeatureKind::Mcc, mcc_rows)?,
                seq(FeatureKind::Ap, ap_rows)?,
                seq(FeatureKind::F0, f0_rows)?,
                seq(FeatureKind::LogEnergy, en_rows)?,
            )?);
        }
    }
    Corpus::new(utterances)
}

/// Generates the corpus and writes one feature-file bundle per utterance
/// plus a manifest; returns the manifest path.
pub fn gen_synthetic_corpus(cfg: &SynthConfig, out_dir: &Path) -> Result<PathBuf> {
    let corpus = synth_corpus(cfg)?;
    let mut entries = Vec::new();
    for utt in &corpus.utterances {
        let rel = |kind: FeatureKind| {
            PathBuf::from(&utt.speaker_id).join(format!("{}.{}.cdvf", utt.utt_id, kind.name()))
        };
        let streams = [
            (&utt.sp, FeatureKind::Sp),
            (&utt.mcc, FeatureKind::Mcc),
            (&utt.ap, FeatureKind::Ap),
            (&utt.f0, FeatureKind::F0),
            (&utt.log_energy, FeatureKind::LogEnergy),
        ];
        for (seq, kind) in streams {
            write_feature_file(&out_dir.join(rel(kind)), seq)?;
        }
        entries.push(ManifestEntry {
            speaker_id: utt.speaker_id.clone(),
            utt_id: utt.utt_id.clone(),
            sp: rel(FeatureKind::Sp),
            mcc: rel(FeatureKind::Mcc),
            ap: rel(FeatureKind::Ap),
            f0: rel(FeatureKind::F0),
            log_energy: rel(FeatureKind::LogEnergy),
        });
    }
    let manifest = out_dir.join("manifest.tsv");
    write_manifest(&manifest, &entries)?;
    Ok(manifest)
}
