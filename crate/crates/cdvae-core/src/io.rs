//! Binary feature files, corpus manifests, and checkpoint serialization.
//!
//! Feature files (`CDVF`, version 1): a fixed header followed by row-major
//! 32-bit little-endian frames.
//!
//! ```text
//! magic "CDVF" | version u16 | domain u8 | dim u32 | frames u32
//! | frame_period_ms f64 | payload frames*dim f32
//! ```
//!
//! Checkpoints (`CDVC`, version 1): a structured text header declaring the
//! configuration, speaker roster, RNG state, per-speaker statistics, and the
//! tensor table, followed by raw 64-bit little-endian payloads in the
//! declared order (value, ADAM m, ADAM v per tensor, then the statistics
//! vectors). Scalar floats in the header are stored as exact IEEE-754 bit
//! patterns so a load/save cycle is bitwise.
//!
//! Both formats are versioned; readers reject newer versions explicitly.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use crate::corpus::{Corpus, Utterance};
use crate::error::{io_err, Error, Result};
use crate::features::{FeatureKind, FeatureSequence, SpeakerStats};
use crate::model::{CdvaeParams, LossWeights, ModelConfig, ObjectiveKind};
use crate::nn::{Matrix, Rng};
use crate::train::{Checkpoint, TrainConfig};

const FEATURE_MAGIC: &[u8; 4] = b"CDVF";
const CHECKPOINT_MAGIC: &[u8; 4] = b"CDVC";
const FORMAT_VERSION: u16 = 1;

// ---------------------------------------------------------------------------
// Feature files
// ---------------------------------------------------------------------------

pub fn write_feature_file(path: &Path, seq: &FeatureSequence) -> Result<()> {
    let mut buf = Vec::with_capacity(23 + 4 * seq.len() * seq.dim());
    buf.extend_from_slice(FEATURE_MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    buf.push(seq.kind.tag());
    buf.extend_from_slice(&(seq.dim() as u32).to_le_bytes());
    buf.extend_from_slice(&(seq.len() as u32).to_le_bytes());
    buf.extend_from_slice(&seq.frame_period_ms.to_le_bytes());
    for v in seq.frames.data() {
        buf.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    write_atomic(path, &buf)
}

/// Reads a feature file; the speaker id is not part of the format and is
/// left empty for the caller (usually the manifest loader) to fill in.
pub fn read_feature_file(path: &Path) -> Result<FeatureSequence> {
    let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
    let ctx = path.display();
    if bytes.len() < 23 {
        return Err(Error::Parse(format!(
            "{ctx}: truncated header ({} bytes, need 23)",
            bytes.len()
        )));
    }
    if &bytes[0..4] != FEATURE_MAGIC {
        return Err(Error::Parse(format!("{ctx}: bad magic at offset 0")));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != FORMAT_VERSION {
        return Err(Error::Parse(format!(
            "{ctx}: unsupported feature-file version {version} (reader supports {FORMAT_VERSION})"
        )));
    }
    let kind = FeatureKind::from_tag(bytes[6])
        .map_err(|e| Error::Parse(format!("{ctx}: {e} at offset 6")))?;
    let dim = u32::from_le_bytes(bytes[7..11].try_into().unwrap()) as usize;
    let frames = u32::from_le_bytes(bytes[11..15].try_into().unwrap()) as usize;
    let frame_period_ms = f64::from_le_bytes(bytes[15..23].try_into().unwrap());
    let expected = 23 + 4 * frames * dim;
    if bytes.len() != expected {
        return Err(Error::Parse(format!(
            "{ctx}: payload length {} does not match header ({frames} frames x {dim} dims needs {expected} bytes)",
            bytes.len()
        )));
    }
    let mut data = Vec::with_capacity(frames * dim);
    for chunk in bytes[23..].chunks_exact(4) {
        data.push(f32::from_le_bytes(chunk.try_into().unwrap()) as f64);
    }
    let matrix =
        Matrix::from_vec(frames, dim, data).map_err(|e| Error::Parse(format!("{ctx}: {e}")))?;
    FeatureSequence::new(kind, matrix, frame_period_ms, "")
}

// ---------------------------------------------------------------------------
// Corpus manifest
// ---------------------------------------------------------------------------

/// One manifest record: an utterance and its five feature files, relative to
/// the manifest's directory.
#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub speaker_id: String,
    pub utt_id: String,
    pub sp: PathBuf,
    pub mcc: PathBuf,
    pub ap: PathBuf,
    pub f0: PathBuf,
    pub log_energy: PathBuf,
}

pub fn write_manifest(path: &Path, entries: &[ManifestEntry]) -> Result<()> {
    let mut out = String::from("# cdvae corpus manifest v1\n");
    for e in entries {
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
            e.speaker_id,
            e.utt_id,
            e.sp.display(),
            e.mcc.display(),
            e.ap.display(),
            e.f0.display(),
            e.log_energy.display()
        ));
    }
    write_atomic(path, out.as_bytes())
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let mut entries = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 7 {
            return Err(Error::Parse(format!(
                "{}:{}: expected 7 tab-separated fields, found {}",
                path.display(),
                lineno + 1,
                fields.len()
            )));
        }
        entries.push(ManifestEntry {
            speaker_id: fields[0].to_string(),
            utt_id: fields[1].to_string(),
            sp: fields[2].into(),
            mcc: fields[3].into(),
            ap: fields[4].into(),
            f0: fields[5].into(),
            log_energy: fields[6].into(),
        });
    }
    Ok(entries)
}

/// Loads every utterance referenced by a manifest; relative paths resolve
/// against the manifest's directory.
pub fn load_corpus(manifest_path: &Path) -> Result<Corpus> {
    let entries = read_manifest(manifest_path)?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let mut utterances = Vec::with_capacity(entries.len());
    for e in &entries {
        let read = |p: &PathBuf, speaker: &str| -> Result<FeatureSequence> {
            let full = if p.is_absolute() {
                p.clone()
            } else {
                base.join(p)
            };
            let mut seq = read_feature_file(&full)?;
            seq.speaker_id = speaker.to_string();
            Ok(seq)
        };
        utterances.push(Utterance::new(
            e.speaker_id.clone(),
            e.utt_id.clone(),
            read(&e.sp, &e.speaker_id)?,
            read(&e.mcc, &e.speaker_id)?,
            read(&e.ap, &e.speaker_id)?,
            read(&e.f0, &e.speaker_id)?,
            read(&e.log_energy, &e.speaker_id)?,
        )?);
    }
    Corpus::new(utterances)
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let cfg = &ckpt.config;
    let model = ckpt.params.config();
    let mut header = String::new();
    header.push_str(&format!("objective {}\n", cfg.objective.name()));
    header.push_str(&format!("epoch {}\n", ckpt.epoch));
    header.push_str(&format!("seed {}\n", cfg.seed));
    header.push_str(&format!("lr {}\n", cfg.lr.to_bits()));
    header.push_str(&format!("batch_size {}\n", cfg.batch_size));
    header.push_str(&format!("epochs {}\n", cfg.epochs));
    header.push_str(&format!(
        "weights {} {} {} {}\n",
        cfg.weights.within.to_bits(),
        cfg.weights.kld.to_bits(),
        cfg.weights.cross.to_bits(),
        cfg.weights.sim.to_bits()
    ));
    header.push_str(&format!(
        "flags {} {}\n",
        cfg.sim_on_samples as u8, cfg.per_path_noise as u8
    ));
    header.push_str(&format!(
        "dims {} {} {} {}\n",
        model.sp_dim, model.mcc_dim, model.latent_dim, model.speaker_dim
    ));
    for (name, widths) in [
        ("enc_sp_hidden", &model.enc_sp_hidden),
        ("enc_mcc_hidden", &model.enc_mcc_hidden),
        ("dec_sp_hidden", &model.dec_sp_hidden),
        ("dec_mcc_hidden", &model.dec_mcc_hidden),
    ] {
        header.push_str(&format!("{name} {}\n", widths_to_string(widths)));
    }
    header.push_str(&format!(
        "activation {} {}\n",
        model.lrelu_slope.to_bits(),
        model.ln_eps.to_bits()
    ));
    let (rng_seed, rng_counter, rng_cached) = ckpt.rng.state();
    header.push_str(&format!(
        "rng {rng_seed} {rng_counter} {}\n",
        match rng_cached {
            Some(v) => v.to_bits().to_string(),
            None => "none".to_string(),
        }
    ));
    header.push_str(&format!("speakers {}\n", ckpt.params.speakers().join(" ")));
    for (id, st) in &ckpt.stats {
        header.push_str(&format!(
            "stat {id} {} {}\n",
            st.logf0_mean.to_bits(),
            st.logf0_std.to_bits()
        ));
    }
    for p in ckpt.params.store().iter() {
        header.push_str(&format!(
            "tensor {} {} {} {}\n",
            p.name, p.rows, p.cols, p.t
        ));
    }
    for (id, st) in &ckpt.stats {
        header.push_str(&format!("statvec {id} {}\n", st.mcc_mean.len()));
    }
    header.push_str("end\n");

    let mut buf = Vec::new();
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(header.len() as u32).to_le_bytes());
    buf.extend_from_slice(header.as_bytes());
    for p in ckpt.params.store().iter() {
        for arr in [&p.value, &p.m, &p.v] {
            for v in arr.iter() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    for st in ckpt.stats.values() {
        for arr in [&st.mcc_mean, &st.mcc_gv] {
            for v in arr.iter() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    write_atomic(path, &buf)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
    let ctx = path.display();
    if bytes.len() < 10 {
        return Err(Error::Parse(format!("{ctx}: truncated checkpoint header")));
    }
    if &bytes[0..4] != CHECKPOINT_MAGIC {
        return Err(Error::Parse(format!("{ctx}: bad magic at offset 0")));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != FORMAT_VERSION {
        return Err(Error::Parse(format!(
            "{ctx}: unsupported checkpoint version {version} (reader supports {FORMAT_VERSION})"
        )));
    }
    let header_len = u32::from_le_bytes(bytes[6..10].try_into().unwrap()) as usize;
    if bytes.len() < 10 + header_len {
        return Err(Error::Parse(format!("{ctx}: truncated header text")));
    }
    let header = std::str::from_utf8(&bytes[10..10 + header_len])
        .map_err(|_| Error::Parse(format!("{ctx}: header is not UTF-8")))?;

    let mut objective = None;
    let mut epoch = 0usize;
    let mut seed = 0u64;
    let mut lr = 1e-4f64;
    let mut batch_size = 1usize;
    let mut epochs = 1usize;
    let mut weights = LossWeights::default();
    let mut sim_on_samples = false;
    let mut per_path_noise = false;
    let mut model = ModelConfig::default();
    let mut rng = Rng::new(0);
    let mut speakers: Vec<String> = Vec::new();
    let mut stat_scalars: BTreeMap<String, (f64, f64)> = BTreeMap::new();
    let mut tensors: Vec<(String, usize, usize, u64)> = Vec::new();
    let mut statvecs: Vec<(String, usize)> = Vec::new();

    let bad = |line: &str| Error::Parse(format!("{}: bad header line '{line}'", path.display()));
    for line in header.lines() {
        let mut it = line.split(' ');
        let key = it.next().unwrap_or("");
        let rest: Vec<&str> = it.collect();
        match key {
            "objective" => {
                objective = Some(ObjectiveKind::parse(
                    rest.first().ok_or_else(|| bad(line))?,
                )?)
            }
            "epoch" => epoch = parse_num(rest.first(), line)?,
            "seed" => seed = parse_num(rest.first(), line)?,
            "lr" => lr = f64::from_bits(parse_num(rest.first(), line)?),
            "batch_size" => batch_size = parse_num(rest.first(), line)?,
            "epochs" => epochs = parse_num(rest.first(), line)?,
            "weights" => {
                if rest.len() != 4 {
                    return Err(bad(line));
                }
                weights = LossWeights {
                    within: f64::from_bits(parse_num(rest.first(), line)?),
                    kld: f64::from_bits(parse_num(rest.get(1), line)?),
                    cross: f64::from_bits(parse_num(rest.get(2), line)?),
                    sim: f64::from_bits(parse_num(rest.get(3), line)?),
                };
            }
            "flags" => {
                sim_on_samples = rest.first() == Some(&"1");
                per_path_noise = rest.get(1) == Some(&"1");
            }
            "dims" => {
                if rest.len() != 4 {
                    return Err(bad(line));
                }
                model.sp_dim = parse_num(rest.first(), line)?;
                model.mcc_dim = parse_num(rest.get(1), line)?;
                model.latent_dim = parse_num(rest.get(2), line)?;
                model.speaker_dim = parse_num(rest.get(3), line)?;
            }
            "enc_sp_hidden" => model.enc_sp_hidden = widths_from_string(rest.first(), line)?,
            "enc_mcc_hidden" => model.enc_mcc_hidden = widths_from_string(rest.first(), line)?,
            "dec_sp_hidden" => model.dec_sp_hidden = widths_from_string(rest.first(), line)?,
            "dec_mcc_hidden" => model.dec_mcc_hidden = widths_from_string(rest.first(), line)?,
            "activation" => {
                model.lrelu_slope = f64::from_bits(parse_num(rest.first(), line)?);
                model.ln_eps = f64::from_bits(parse_num(rest.get(1), line)?);
            }
            "rng" => {
                let s: u64 = parse_num(rest.first(), line)?;
                let c: u64 = parse_num(rest.get(1), line)?;
                let cached = match rest.get(2) {
                    Some(&"none") => None,
                    Some(bits) => Some(f64::from_bits(bits.parse::<u64>().map_err(|_| bad(line))?)),
                    None => return Err(bad(line)),
                };
                rng = Rng::from_state(s, c, cached);
            }
            "speakers" => speakers = rest.iter().map(|s| s.to_string()).collect(),
            "stat" => {
                if rest.len() != 3 {
                    return Err(bad(line));
                }
                stat_scalars.insert(
                    rest[0].to_string(),
                    (
                        f64::from_bits(parse_num(rest.get(1), line)?),
                        f64::from_bits(parse_num(rest.get(2), line)?),
                    ),
                );
            }
            "tensor" => {
                if rest.len() != 4 {
                    return Err(bad(line));
                }
                tensors.push((
                    rest[0].to_string(),
                    parse_num(rest.get(1), line)?,
                    parse_num(rest.get(2), line)?,
                    parse_num(rest.get(3), line)?,
                ));
            }
            "statvec" => {
                if rest.len() != 2 {
                    return Err(bad(line));
                }
                statvecs.push((rest[0].to_string(), parse_num(rest.get(1), line)?));
            }
            "end" => break,
            other => return Err(Error::Parse(format!("{ctx}: unknown header key '{other}'"))),
        }
    }
    let objective =
        objective.ok_or_else(|| Error::Parse(format!("{ctx}: missing objective line")))?;
    if speakers.is_empty() {
        return Err(Error::Parse(format!("{ctx}: missing speakers line")));
    }

    // Rebuild the parameter structure, then overwrite every tensor from the
    // payload; the rebuild consumes a throwaway RNG.
    let mut params = CdvaeParams::init(model.clone(), &speakers, &mut Rng::new(0))?;
    if params.store().len() != tensors.len() {
        return Err(Error::Parse(format!(
            "{ctx}: header declares {} tensors, model has {}",
            tensors.len(),
            params.store().len()
        )));
    }

    let mut offset = 10 + header_len;
    let mut take = |count: usize, what: &str| -> Result<Vec<f64>> {
        let need = count * 8;
        if bytes.len() < offset + need {
            return Err(Error::Parse(format!(
                "{}: truncated payload for {what} at offset {offset}",
                path.display()
            )));
        }
        let out: Vec<f64> = bytes[offset..offset + need]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        offset += need;
        Ok(out)
    };

    for (i, (name, rows, cols, t)) in tensors.iter().enumerate() {
        let param = params.store_mut().iter_mut().nth(i).unwrap();
        if &param.name != name || param.rows != *rows || param.cols != *cols {
            return Err(Error::Parse(format!(
                "{ctx}: tensor {i} is '{}' {}x{} in the header but '{}' {}x{} in the model",
                name, rows, cols, param.name, param.rows, param.cols
            )));
        }
        param.value = take(rows * cols, name)?;
        param.m = take(rows * cols, name)?;
        param.v = take(rows * cols, name)?;
        param.t = *t;
    }

    let mut stats = BTreeMap::new();
    for (id, len) in &statvecs {
        let (logf0_mean, logf0_std) = *stat_scalars
            .get(id)
            .ok_or_else(|| Error::Parse(format!("{ctx}: statvec '{id}' has no stat line")))?;
        let mcc_mean = take(*len, "stat mean")?;
        let mcc_gv = take(*len, "stat gv")?;
        stats.insert(
            id.clone(),
            SpeakerStats {
                speaker_id: id.clone(),
                logf0_mean,
                logf0_std,
                mcc_mean,
                mcc_gv,
            },
        );
    }
    if offset != bytes.len() {
        return Err(Error::Parse(format!(
            "{ctx}: {} trailing bytes after payload",
            bytes.len() - offset
        )));
    }

    Ok(Checkpoint {
        params,
        objective,
        epoch,
        rng,
        stats,
        config: TrainConfig {
            objective,
            lr,
            batch_size,
            epochs,
            seed,
            weights,
            sim_on_samples,
            per_path_noise,
            model,
        },
    })
}

fn parse_num<T: std::str::FromStr>(field: Option<&&str>, line: &str) -> Result<T> {
    field
        .and_then(|s| s.parse::<T>().ok())
        .ok_or_else(|| Error::Parse(format!("bad header line '{line}'")))
}

fn widths_to_string(widths: &[usize]) -> String {
    if widths.is_empty() {
        "-".to_string()
    } else {
        widths
            .iter()
            .map(|w| w.to_string())
            .collect::<Vec<_>>()
            .join(",")
    }
}

fn widths_from_string(field: Option<&&str>, line: &str) -> Result<Vec<usize>> {
    let s = field.ok_or_else(|| Error::Parse(format!("bad header line '{line}'")))?;
    if *s == "-" {
        return Ok(Vec::new());
    }
    s.split(',')
        .map(|w| {
            w.parse::<usize>()
                .map_err(|_| Error::Parse(format!("bad width list '{line}'")))
        })
        .collect()
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
        }
    }
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp).map_err(|e| io_err(&tmp, e))?;
        f.write_all(bytes).map_err(|e| io_err(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| io_err(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::MCC_DIM;

    fn temp_dir(tag: &str) -> PathBuf {
        let dir = std::env::temp_dir().join(format!("cdvae-io-{tag}-{}", std::process::id()));
        fs::create_dir_all(&dir).unwrap();
        dir
    }

    fn sample_seq() -> FeatureSequence {
        let mut rng = Rng::new(7);
        let rows: Vec<Vec<f64>> = (0..6)
            .map(|_| (0..MCC_DIM).map(|_| rng.standard_normal()).collect())
            .collect();
        FeatureSequence::new(
            FeatureKind::Mcc,
            Matrix::from_rows(&rows).unwrap(),
            5.0,
            "spk",
        )
        .unwrap()
    }

    #[test]
    fn feature_file_round_trip_is_exact_at_f32() {
        let dir = temp_dir("roundtrip");
        let path = dir.join("x.mcc.cdvf");
        let seq = sample_seq();
        write_feature_file(&path, &seq).unwrap();
        let back = read_feature_file(&path).unwrap();
        assert_eq!(back.kind, FeatureKind::Mcc);
        assert_eq!(back.len(), seq.len());
        assert_eq!(back.frame_period_ms, 5.0);
        for (a, b) in seq.frames.data().iter().zip(back.frames.data()) {
            assert_eq!(*a as f32, *b as f32);
            assert_eq!(*b, (*a as f32) as f64, "payload is exactly f32-quantized");
        }
    }

    #[test]
    fn bad_magic_is_rejected() {
        let dir = temp_dir("magic");
        let path = dir.join("bad.cdvf");
        fs::write(&path, b"XXXX0123456789012345678").unwrap();
        match read_feature_file(&path) {
            Err(Error::Parse(msg)) => assert!(msg.contains("magic"), "{msg}"),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn truncated_payload_is_rejected() {
        let dir = temp_dir("trunc");
        let path = dir.join("t.cdvf");
        let seq = sample_seq();
        write_feature_file(&path, &seq).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        bytes.truncate(bytes.len() - 17);
        fs::write(&path, bytes).unwrap();
        match read_feature_file(&path) {
            Err(Error::Parse(msg)) => assert!(msg.contains("payload"), "{msg}"),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn future_version_is_rejected() {
        let dir = temp_dir("version");
        let path = dir.join("v.cdvf");
        let seq = sample_seq();
        write_feature_file(&path, &seq).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        bytes[4] = 99;
        fs::write(&path, bytes).unwrap();
        match read_feature_file(&path) {
            Err(Error::Parse(msg)) => assert!(msg.contains("version"), "{msg}"),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn manifest_round_trip() {
        let dir = temp_dir("manifest");
        let entries = vec![ManifestEntry {
            speaker_id: "alice".into(),
            utt_id: "u000".into(),
            sp: "alice/u000.sp.cdvf".into(),
            mcc: "alice/u000.mcc.cdvf".into(),
            ap: "alice/u000.ap.cdvf".into(),
            f0: "alice/u000.f0.cdvf".into(),
            log_energy: "alice/u000.en.cdvf".into(),
        }];
        let path = dir.join("manifest.tsv");
        write_manifest(&path, &entries).unwrap();
        assert_eq!(read_manifest(&path).unwrap(), entries);
    }

    #[test]
    fn missing_feature_file_names_the_path() {
        let dir = temp_dir("missing");
        let path = dir.join("nope.cdvf");
        match read_feature_file(&path) {
            Err(Error::Io(msg)) => assert!(msg.contains("nope.cdvf"), "{msg}"),
            other => panic!("expected io error, got {other:?}"),
        }
    }
}
