//! In-memory corpus: per-utterance bundles of the five feature streams.

use std::collections::BTreeSet;

use crate::error::{Error, Result};
use crate::features::{f0_statistics, normalize_sp, FeatureKind, FeatureSequence, SpeakerStats};
use crate::model::FrameSample;

/// One utterance: frame-aligned SP, MCC, AP, F0 and log-energy streams from
/// a single speaker.
#[derive(Debug, Clone)]
pub struct Utterance {
    pub speaker_id: String,
    pub utt_id: String,
    pub sp: FeatureSequence,
    pub mcc: FeatureSequence,
    pub ap: FeatureSequence,
    pub f0: FeatureSequence,
    pub log_energy: FeatureSequence,
}

impl Utterance {
    pub fn new(
        speaker_id: impl Into<String>,
        utt_id: impl Into<String>,
        sp: FeatureSequence,
        mcc: FeatureSequence,
        ap: FeatureSequence,
        f0: FeatureSequence,
        log_energy: FeatureSequence,
    ) -> Result<Self> {
        let speaker_id = speaker_id.into();
        let utt_id = utt_id.into();
        let streams = [
            (&sp, FeatureKind::Sp),
            (&mcc, FeatureKind::Mcc),
            (&ap, FeatureKind::Ap),
            (&f0, FeatureKind::F0),
            (&log_energy, FeatureKind::LogEnergy),
        ];
        let frames = sp.len();
        for (seq, kind) in &streams {
            if seq.kind != *kind {
                return Err(Error::Data(format!(
                    "utterance {speaker_id}/{utt_id}: expected {} stream, found {}",
                    kind.name(),
                    seq.kind.name()
                )));
            }
            if seq.len() != frames {
                return Err(Error::Data(format!(
                    "utterance {speaker_id}/{utt_id}: {} stream has {} frames, sp has {frames}",
                    kind.name(),
                    seq.len()
                )));
            }
        }
        Ok(Utterance {
            speaker_id,
            utt_id,
            sp,
            mcc,
            ap,
            f0,
            log_energy,
        })
    }

    pub fn frames(&self) -> usize {
        self.sp.len()
    }
}

#[derive(Debug, Clone, Default)]
pub struct Corpus {
    pub utterances: Vec<Utterance>,
}

impl Corpus {
    pub fn new(utterances: Vec<Utterance>) -> Result<Self> {
        if utterances.is_empty() {
            return Err(Error::Data("corpus has no utterances".into()));
        }
        Ok(Corpus { utterances })
    }

    /// Sorted unique speaker ids.
    pub fn speakers(&self) -> Vec<String> {
        let set: BTreeSet<&str> = self
            .utterances
            .iter()
            .map(|u| u.speaker_id.as_str())
            .collect();
        set.into_iter().map(String::from).collect()
    }

    pub fn utterances_of<'a>(&'a self, speaker_id: &str) -> Vec<&'a Utterance> {
        self.utterances
            .iter()
            .filter(|u| u.speaker_id == speaker_id)
            .collect()
    }

    /// Frame-aligned utterance pairs of two speakers, matched by utterance
    /// id.
    pub fn aligned_pairs<'a>(
        &'a self,
        src_speaker: &str,
        tgt_speaker: &str,
    ) -> Vec<(&'a Utterance, &'a Utterance)> {
        let mut pairs = Vec::new();
        for src in self.utterances_of(src_speaker) {
            if let Some(tgt) = self
                .utterances
                .iter()
                .find(|u| u.speaker_id == tgt_speaker && u.utt_id == src.utt_id)
            {
                if src.frames() == tgt.frames() {
                    pairs.push((src, tgt));
                }
            }
        }
        pairs
    }

    /// Flattens the corpus into training frames: energy-normalized SP plus
    /// raw MCC, per frame, tagged with the speaker.
    pub fn training_frames(&self) -> Result<Vec<FrameSample>> {
        let mut frames = Vec::new();
        for utt in &self.utterances {
            for t in 0..utt.frames() {
                let (x_sp, _log_e) = normalize_sp(utt.sp.frame(t))?;
                frames.push(FrameSample {
                    x_sp,
                    x_mcc: utt.mcc.frame(t).to_vec(),
                    speaker_id: utt.speaker_id.clone(),
                });
            }
        }
        if frames.is_empty() {
            return Err(Error::Data("corpus has no frames".into()));
        }
        Ok(frames)
    }

    /// Log-F0 statistics plus per-dimension MCC mean and global variance for
    /// one speaker, from this corpus.
    pub fn speaker_stats(&self, speaker_id: &str) -> Result<SpeakerStats> {
        let utts = self.utterances_of(speaker_id);
        if utts.is_empty() {
            return Err(Error::Lookup(format!(
                "no utterances for speaker '{speaker_id}'"
            )));
        }
        let f0_seqs: Vec<&FeatureSequence> = utts.iter().map(|u| &u.f0).collect();
        let (logf0_mean, logf0_std) = f0_statistics(&f0_seqs)?;

        let dim = utts[0].mcc.dim();
        let mut mean = vec![0.0; dim];
        let mut n = 0usize;
        for u in &utts {
            for frame in u.mcc.frames.rows_iter() {
                for (m, v) in mean.iter_mut().zip(frame) {
                    *m += v;
                }
                n += 1;
            }
        }
        for m in &mut mean {
            *m /= n as f64;
        }
        let mut gv = vec![0.0; dim];
        for u in &utts {
            for frame in u.mcc.frames.rows_iter() {
                for ((g, v), m) in gv.iter_mut().zip(frame).zip(&mean) {
                    let d = v - m;
                    *g += d * d;
                }
            }
        }
        for g in &mut gv {
            *g /= n as f64;
        }
        Ok(SpeakerStats {
            speaker_id: speaker_id.to_string(),
            logf0_mean,
            logf0_std,
            mcc_mean: mean,
            mcc_gv: gv,
        })
    }
}
