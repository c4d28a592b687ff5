//! Mini-batch training over a two-domain frame corpus, checkpointing, and
//! MCD evaluation.
//!
//! Frames (not utterances) are shuffled each epoch with the training RNG;
//! the same stream supplies the re-parameterization noise, so `(seed,
//! corpus, config)` fully determine every number, and a checkpoint resumes
//! bitwise.

use std::collections::BTreeMap;

use crate::convert::{check_path_supported, convert_utterance, ConversionPath, PostFilterFlags};
use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::features::{
    masked_mcd_sum, MccCodec, MccWarpConfig, SpeakerStats, DEFAULT_SILENCE_THRESHOLD_DB,
};
use crate::model::{
    batch_objective, CdvaeParams, FrameSample, LossBreakdown, LossWeights, ModelConfig,
    ObjectiveKind, ObjectiveOptions,
};
use crate::nn::{adam_step, AdamHyper, Rng};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub objective: ObjectiveKind,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub weights: LossWeights,
    pub sim_on_samples: bool,
    pub per_path_noise: bool,
    pub model: ModelConfig,
}

impl TrainConfig {
    /// Defaults per objective: learning rate 1e-4 everywhere, mini-batch 1
    /// for the cross-domain objective and 16 for the single-domain
    /// baselines.
    pub fn new(objective: ObjectiveKind) -> Self {
        TrainConfig {
            objective,
            lr: 1e-4,
            batch_size: match objective {
                ObjectiveKind::Cdvae => 1,
                _ => 16,
            },
            epochs: 1,
            seed: 0,
            weights: LossWeights::default(),
            sim_on_samples: false,
            per_path_noise: false,
            model: ModelConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) {
            return Err(Error::Config(format!(
                "train: lr must be > 0, got {}",
                self.lr
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("train: batch_size must be >= 1".into()));
        }
        if self.epochs == 0 {
            return Err(Error::Config("train: epochs must be >= 1".into()));
        }
        Ok(())
    }

    fn objective_options(&self) -> ObjectiveOptions {
        ObjectiveOptions {
            weights: self.weights,
            sim_on_samples: self.sim_on_samples,
            per_path_noise: self.per_path_noise,
        }
    }
}

/// Epoch-mean loss record; `batches` is the mini-batch count of the epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub batches: usize,
    pub loss: LossBreakdown,
}

/// Everything needed to continue training or convert: parameters with their
/// optimizer state, the RNG position, per-speaker statistics, and the
/// configuration echo.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub params: CdvaeParams,
    pub objective: ObjectiveKind,
    /// Epochs completed so far.
    pub epoch: usize,
    pub rng: Rng,
    pub stats: BTreeMap<String, SpeakerStats>,
    pub config: TrainConfig,
}

/// Trains from random initialization; returns the final checkpoint and the
/// per-epoch loss log.
pub fn train(corpus: &Corpus, config: &TrainConfig) -> Result<(Checkpoint, Vec<EpochRecord>)> {
    config.validate()?;
    let speakers = corpus.speakers();
    let mut rng = Rng::new(config.seed);
    let mut params = CdvaeParams::init(config.model.clone(), &speakers, &mut rng)?;
    let records = run_epochs(&mut params, &mut rng, corpus, config, 0, config.epochs)?;
    let stats = speaker_stats_table(corpus)?;
    Ok((
        Checkpoint {
            params,
            objective: config.objective,
            epoch: config.epochs,
            rng,
            stats,
            config: config.clone(),
        },
        records,
    ))
}

/// Continues training from a checkpoint for `additional_epochs`; bitwise
/// equivalent to having trained the combined epoch count in one run.
pub fn resume(
    ckpt: Checkpoint,
    corpus: &Corpus,
    additional_epochs: usize,
) -> Result<(Checkpoint, Vec<EpochRecord>)> {
    if additional_epochs == 0 {
        return Err(Error::Config(
            "resume: additional epochs must be >= 1".into(),
        ));
    }
    let speakers = corpus.speakers();
    if speakers != ckpt.params.speakers() {
        return Err(Error::Data(format!(
            "resume: corpus speakers {:?} do not match the checkpoint roster {:?}",
            speakers,
            ckpt.params.speakers()
        )));
    }
    let Checkpoint {
        mut params,
        objective,
        epoch,
        mut rng,
        stats: _,
        mut config,
    } = ckpt;
    let records = run_epochs(
        &mut params,
        &mut rng,
        corpus,
        &config,
        epoch,
        additional_epochs,
    )?;
    let stats = speaker_stats_table(corpus)?;
    config.epochs = epoch + additional_epochs;
    Ok((
        Checkpoint {
            params,
            objective,
            epoch: epoch + additional_epochs,
            rng,
            stats,
            config,
        },
        records,
    ))
}

fn run_epochs(
    params: &mut CdvaeParams,
    rng: &mut Rng,
    corpus: &Corpus,
    config: &TrainConfig,
    start_epoch: usize,
    n_epochs: usize,
) -> Result<Vec<EpochRecord>> {
    let frames: Vec<FrameSample> = corpus.training_frames()?;
    let hyper = AdamHyper {
        lr: config.lr,
        ..Default::default()
    };
    let opts = config.objective_options();
    let mut records = Vec::with_capacity(n_epochs);

    for e in 0..n_epochs {
        let epoch = start_epoch + e + 1;
        // Identity order re-seeded every epoch: the permutation depends only
        // on the RNG state at the epoch boundary, so resumed runs shuffle
        // identically to uninterrupted ones.
        let mut order: Vec<usize> = (0..frames.len()).collect();
        rng.shuffle(&mut order);
        let mut sums = LossBreakdown {
            within_recon: 0.0,
            kld: 0.0,
            cross_recon: 0.0,
            latent_sim: 0.0,
            total: 0.0,
            weights: opts.weights,
        };
        let mut batches = 0usize;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<FrameSample> = chunk.iter().map(|&i| frames[i].clone()).collect();
            let (breakdown, grads) = {
                let graph = batch_objective(params, &batch, config.objective, &opts, rng)
                    .map_err(|err| diverged(err, epoch, batches + 1))?;
                let grads = graph
                    .tape
                    .backward(graph.loss)
                    .map_err(|err| diverged(err, epoch, batches + 1))?;
                (graph.breakdown, grads)
            };
            if !breakdown.total.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    batch: batches + 1,
                    detail: format!("total loss {}", breakdown.total),
                });
            }
            adam_step(params.store_mut(), &grads, &hyper)?;
            sums.within_recon += breakdown.within_recon;
            sums.kld += breakdown.kld;
            sums.cross_recon += breakdown.cross_recon;
            sums.latent_sim += breakdown.latent_sim;
            batches += 1;
        }
        let n = batches as f64;
        let mut mean = LossBreakdown {
            within_recon: sums.within_recon / n,
            kld: sums.kld / n,
            cross_recon: sums.cross_recon / n,
            latent_sim: sums.latent_sim / n,
            total: 0.0,
            weights: opts.weights,
        };
        mean.total = mean.weighted_total();
        records.push(EpochRecord {
            epoch,
            batches,
            loss: mean,
        });
    }
    Ok(records)
}

/// Numeric blowups inside the objective surface as divergence with the
/// epoch/batch position; other errors pass through untouched.
fn diverged(err: Error, epoch: usize, batch: usize) -> Error {
    match err {
        Error::Numeric(detail) => Error::Divergence {
            epoch,
            batch,
            detail,
        },
        other => other,
    }
}

fn speaker_stats_table(corpus: &Corpus) -> Result<BTreeMap<String, SpeakerStats>> {
    let mut stats = BTreeMap::new();
    for speaker in corpus.speakers() {
        stats.insert(speaker.clone(), corpus.speaker_stats(&speaker)?);
    }
    Ok(stats)
}

/// Mean MCD of one conversion direction, pooled over the non-silent frames
/// of all aligned utterance pairs, next to the before-conversion floor.
#[derive(Debug, Clone, PartialEq)]
pub struct PairEvaluation {
    pub source: String,
    pub target: String,
    pub path: ConversionPath,
    pub utterance_pairs: usize,
    /// MCD of the untouched source against the aligned target.
    pub before_mcd: f64,
    pub converted_mcd: f64,
}

/// Converts every source utterance of each ordered speaker pair along
/// `path` and reports pooled mean MCD against the aligned targets, plus the
/// before-conversion row. Read-only on the checkpoint.
pub fn evaluate(
    corpus: &Corpus,
    ckpt: &Checkpoint,
    path: ConversionPath,
    flags: &PostFilterFlags,
) -> Result<Vec<PairEvaluation>> {
    check_path_supported(ckpt.objective, path)?;
    let codec = MccCodec::new(MccWarpConfig::default())?;
    let speakers = corpus.speakers();
    let mut rows = Vec::new();
    for src in &speakers {
        for tgt in &speakers {
            if src == tgt {
                continue;
            }
            let pairs = corpus.aligned_pairs(src, tgt);
            if pairs.is_empty() {
                continue;
            }
            let mut before = (0.0, 0usize);
            let mut converted = (0.0, 0usize);
            for (s, t) in &pairs {
                let (sum, n) = masked_mcd_sum(&s.mcc, &t.mcc, DEFAULT_SILENCE_THRESHOLD_DB)?;
                before.0 += sum;
                before.1 += n;
                let conv = convert_utterance(ckpt, s, tgt, path, flags, &codec)?;
                let (sum, n) = masked_mcd_sum(&conv.mcc, &t.mcc, DEFAULT_SILENCE_THRESHOLD_DB)?;
                converted.0 += sum;
                converted.1 += n;
            }
            if before.1 == 0 || converted.1 == 0 {
                return Err(Error::Eval(format!(
                    "{src}->{tgt}: no non-silent frames to evaluate"
                )));
            }
            rows.push(PairEvaluation {
                source: src.clone(),
                target: tgt.clone(),
                path,
                utterance_pairs: pairs.len(),
                before_mcd: before.0 / before.1 as f64,
                converted_mcd: converted.0 / converted.1 as f64,
            });
        }
    }
    if rows.is_empty() {
        return Err(Error::Eval(
            "evaluate: corpus has no aligned cross-speaker utterance pairs".into(),
        ));
    }
    Ok(rows)
}
