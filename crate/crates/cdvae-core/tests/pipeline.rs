//! Cross-module integration: checkpoint serialization, conversion
//! invariants, and batch output contracts.

use std::collections::BTreeMap;
use std::fs;
use std::path::PathBuf;

use cdvae_core::convert::{batch_convert, convert_utterance, ConversionPath, PostFilterFlags};
use cdvae_core::corpus::Corpus;
use cdvae_core::error::Error;
use cdvae_core::features::{denormalize_sp, normalize_sp, MccCodec, MccWarpConfig};
use cdvae_core::io::{load_checkpoint, load_corpus, read_manifest, save_checkpoint};
use cdvae_core::model::{ModelConfig, ObjectiveKind, SpectralDomain};
use cdvae_core::synth::{synth_corpus, SynthConfig};
use cdvae_core::train::{resume, train, Checkpoint, TrainConfig};

fn temp_dir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("cdvae-pipe-{tag}-{}", std::process::id()));
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    dir
}

fn small_model() -> ModelConfig {
    ModelConfig {
        latent_dim: 16,
        speaker_dim: 8,
        enc_sp_hidden: vec![32],
        enc_mcc_hidden: vec![24],
        dec_sp_hidden: vec![32],
        dec_mcc_hidden: vec![24],
        ..Default::default()
    }
}

fn small_corpus(seed: u64) -> Corpus {
    synth_corpus(&SynthConfig {
        seed,
        n_speakers: 2,
        utterances_per_speaker: 2,
        frames_per_utterance: 40,
        ..Default::default()
    })
    .unwrap()
}

fn trained_checkpoint(seed: u64, epochs: usize) -> (Corpus, Checkpoint) {
    let corpus = small_corpus(seed);
    let config = TrainConfig {
        epochs,
        seed,
        model: small_model(),
        ..TrainConfig::new(ObjectiveKind::Cdvae)
    };
    let (ckpt, _) = train(&corpus, &config).unwrap();
    (corpus, ckpt)
}

fn assert_params_bitwise(a: &Checkpoint, b: &Checkpoint) {
    assert_eq!(a.params.store().len(), b.params.store().len());
    for (pa, pb) in a.params.store().iter().zip(b.params.store().iter()) {
        assert_eq!(pa.name, pb.name);
        assert_eq!(pa.value, pb.value, "{} value differs", pa.name);
        assert_eq!(pa.m, pb.m, "{} adam m differs", pa.name);
        assert_eq!(pa.v, pb.v, "{} adam v differs", pa.name);
        assert_eq!(pa.t, pb.t, "{} adam t differs", pa.name);
    }
}

#[test]
fn checkpoint_save_load_is_bitwise() {
    let dir = temp_dir("ckpt");
    let (_, ckpt) = trained_checkpoint(11, 2);
    let path = dir.join("model.cdvc");
    save_checkpoint(&path, &ckpt).unwrap();
    let loaded = load_checkpoint(&path).unwrap();
    assert_params_bitwise(&ckpt, &loaded);
    assert_eq!(loaded.epoch, ckpt.epoch);
    assert_eq!(loaded.rng, ckpt.rng);
    assert_eq!(loaded.objective, ckpt.objective);
    assert_eq!(loaded.config, ckpt.config);
    let stats_a: BTreeMap<_, _> = ckpt.stats.iter().collect();
    let stats_b: BTreeMap<_, _> = loaded.stats.iter().collect();
    assert_eq!(stats_a, stats_b);
}

#[test]
fn save_load_then_step_equals_stepping_directly() {
    let dir = temp_dir("resume");
    let corpus = small_corpus(12);
    let config = TrainConfig {
        epochs: 2,
        seed: 12,
        model: small_model(),
        ..TrainConfig::new(ObjectiveKind::Cdvae)
    };
    let (ckpt, _) = train(&corpus, &config).unwrap();

    let path = dir.join("mid.cdvc");
    save_checkpoint(&path, &ckpt).unwrap();
    let (direct, _) = resume(ckpt, &corpus, 1).unwrap();
    let (via_disk, _) = resume(load_checkpoint(&path).unwrap(), &corpus, 1).unwrap();
    assert_params_bitwise(&direct, &via_disk);
    assert_eq!(direct.rng, via_disk.rng);
}

#[test]
fn conversion_preserves_side_streams_and_shapes() {
    let (corpus, ckpt) = trained_checkpoint(13, 3);
    let codec = MccCodec::new(MccWarpConfig::default()).unwrap();
    let utt = &corpus.utterances_of("spk0")[0];
    for path in ConversionPath::ALL {
        let conv = convert_utterance(
            &ckpt,
            utt,
            "spk1",
            path,
            &PostFilterFlags::default(),
            &codec,
        )
        .unwrap();
        assert_eq!(conv.sp.len(), utt.frames(), "{}", path.name());
        assert_eq!(conv.mcc.len(), utt.frames());
        assert_eq!(conv.f0.len(), utt.frames());
        // AP and log-energy pass through untouched.
        assert_eq!(conv.ap.frames, utt.ap.frames);
        assert_eq!(conv.log_energy.frames, utt.log_energy.frames);
        // Voiced/unvoiced pattern survives exactly.
        for t in 0..utt.frames() {
            let src_voiced = utt.f0.frame(t)[0] > 0.0;
            let out_voiced = conv.f0.frame(t)[0] > 0.0;
            assert_eq!(src_voiced, out_voiced, "frame {t}");
        }
    }
}

#[test]
fn conversion_is_deterministic_and_read_only() {
    let (corpus, ckpt) = trained_checkpoint(14, 3);
    let codec = MccCodec::new(MccWarpConfig::default()).unwrap();
    let before = ckpt.params.clone();
    let utt = &corpus.utterances_of("spk0")[0];
    let a = convert_utterance(
        &ckpt,
        utt,
        "spk1",
        ConversionPath::MccMcc,
        &PostFilterFlags::default(),
        &codec,
    )
    .unwrap();
    let b = convert_utterance(
        &ckpt,
        utt,
        "spk1",
        ConversionPath::MccMcc,
        &PostFilterFlags::default(),
        &codec,
    )
    .unwrap();
    assert_eq!(
        a.mcc.frames, b.mcc.frames,
        "posterior-mean conversion is bitwise"
    );
    assert_eq!(a.sp.frames, b.sp.frames);
    for (pa, pb) in before.store().iter().zip(ckpt.params.store().iter()) {
        assert_eq!(pa.value, pb.value);
    }
}

#[test]
fn sp_routes_share_the_latent_trajectory() {
    let (corpus, ckpt) = trained_checkpoint(15, 3);
    let codec = MccCodec::new(MccWarpConfig::default()).unwrap();
    let utt = &corpus.utterances_of("spk1")[0];
    let a = convert_utterance(
        &ckpt,
        utt,
        "spk0",
        ConversionPath::SpSp,
        &PostFilterFlags::off(),
        &codec,
    )
    .unwrap();
    let b = convert_utterance(
        &ckpt,
        utt,
        "spk0",
        ConversionPath::SpMcc,
        &PostFilterFlags::off(),
        &codec,
    )
    .unwrap();
    assert_eq!(
        a.latent_means, b.latent_means,
        "both routes use the SP encoder's posterior means"
    );
}

#[test]
fn self_conversion_is_the_model_reconstruction() {
    let (corpus, ckpt) = trained_checkpoint(16, 3);
    let codec = MccCodec::new(MccWarpConfig::default()).unwrap();
    let utt = &corpus.utterances_of("spk0")[0];
    let conv = convert_utterance(
        &ckpt,
        utt,
        "spk0",
        ConversionPath::SpSp,
        &PostFilterFlags::off(),
        &codec,
    )
    .unwrap();
    let code = ckpt.params.speaker_code("spk0").unwrap().to_vec();
    for t in 0..utt.frames() {
        let (x, log_e) = normalize_sp(utt.sp.frame(t)).unwrap();
        let posterior = ckpt.params.encode(SpectralDomain::Sp, &x).unwrap();
        let decoded = ckpt
            .params
            .decode(SpectralDomain::Sp, &posterior.mean, &code)
            .unwrap();
        let manual = denormalize_sp(&decoded, log_e);
        for (a, b) in conv.sp.frame(t).iter().zip(&manual) {
            assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0), "frame {t}");
        }
    }
}

#[test]
fn batch_convert_contracts() {
    let (corpus, ckpt) = trained_checkpoint(17, 2);
    let codec = MccCodec::new(MccWarpConfig::default()).unwrap();
    let dir = temp_dir("batch");

    // Empty pair list: success, no output.
    let written = batch_convert(
        &ckpt,
        &corpus,
        &[],
        ConversionPath::SpSp,
        &PostFilterFlags::default(),
        &codec,
        &dir,
    )
    .unwrap();
    assert!(written.is_empty());
    assert!(fs::read_dir(&dir).unwrap().next().is_none());

    // Two utterances in, two bundles (five files each) plus a manifest out.
    let pairs = vec![("spk0".to_string(), "spk1".to_string())];
    let written = batch_convert(
        &ckpt,
        &corpus,
        &pairs,
        ConversionPath::SpSp,
        &PostFilterFlags::default(),
        &codec,
        &dir,
    )
    .unwrap();
    assert_eq!(written.len(), 2 * 5 + 1);
    let manifest = dir.join("converted.tsv");
    let entries = read_manifest(&manifest).unwrap();
    assert_eq!(entries.len(), 2);
    let converted = load_corpus(&manifest).unwrap();
    assert_eq!(converted.utterances.len(), 2);

    // Idempotent overwrite: byte-identical on re-run.
    let snapshot: Vec<(PathBuf, Vec<u8>)> = written
        .iter()
        .map(|p| (p.clone(), fs::read(p).unwrap()))
        .collect();
    batch_convert(
        &ckpt,
        &corpus,
        &pairs,
        ConversionPath::SpSp,
        &PostFilterFlags::default(),
        &codec,
        &dir,
    )
    .unwrap();
    for (path, bytes) in snapshot {
        assert_eq!(fs::read(&path).unwrap(), bytes, "{}", path.display());
    }

    // Unknown source speaker names the problem.
    let bad = vec![("ghost".to_string(), "spk1".to_string())];
    assert!(matches!(
        batch_convert(
            &ckpt,
            &corpus,
            &bad,
            ConversionPath::SpSp,
            &PostFilterFlags::default(),
            &codec,
            &dir,
        ),
        Err(Error::Data(_))
    ));
}

#[test]
fn unknown_speakers_are_lookup_errors() {
    let (corpus, ckpt) = trained_checkpoint(18, 2);
    let codec = MccCodec::new(MccWarpConfig::default()).unwrap();
    let utt = &corpus.utterances_of("spk0")[0];
    assert!(matches!(
        convert_utterance(
            &ckpt,
            utt,
            "nobody",
            ConversionPath::SpSp,
            &PostFilterFlags::default(),
            &codec
        ),
        Err(Error::Lookup(_))
    ));
}
