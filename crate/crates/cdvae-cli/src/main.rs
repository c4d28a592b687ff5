//! `cdvae`: synthetic corpora, training, conversion, evaluation, and file
//! inspection for the cross-domain VAE voice-conversion toolkit.
//!
//! Every failure prints a single machine-readable line
//! `error[<kind>]: <message>` on stderr; usage problems exit with 2, runtime
//! failures with 1.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use cdvae_core::convert::{batch_convert, ConversionPath, PostFilterFlags};
use cdvae_core::error::Error;
use cdvae_core::features::{MccCodec, MccWarpConfig};
use cdvae_core::io::{load_checkpoint, load_corpus, save_checkpoint};
use cdvae_core::model::ObjectiveKind;
use cdvae_core::synth::{gen_synthetic_corpus, SynthConfig};
use cdvae_core::train::{evaluate, resume, train, EpochRecord, TrainConfig};

const USAGE: &str = "\
cdvae: non-parallel voice conversion with a cross-domain VAE

usage:
  cdvae gen-synthetic --out DIR [--seed N] [--speakers N] [--utterances N]
                      [--frames N] [--phones N] [--perturbation X]
  cdvae train      --manifest FILE --out CKPT [--objective vae-sp|vae-mcc|cdvae]
                   [--epochs N] [--batch N] [--lr X] [--seed N] [--config FILE]
                   [--resume CKPT] [--loss-log FILE]
                   [--latent-dim N] [--speaker-dim N]
                   [--enc-sp-hidden W,..] [--enc-mcc-hidden W,..]
                   [--dec-sp-hidden W,..] [--dec-mcc-hidden W,..]
                   [--w-within X] [--w-kld X] [--w-cross X] [--w-sim X]
                   [--sim-on-samples] [--per-path-noise]
  cdvae convert    --checkpoint CKPT --manifest FILE --source SPK --target SPK
                   --path sp-sp|sp-mcc|mcc-sp|mcc-mcc --out DIR
                   [--no-postfilter] [--no-gv] [--no-smooth] [--smooth-sigma X]
  cdvae evaluate   --checkpoint CKPT --manifest FILE --path PATH
                   [--no-postfilter] [--no-gv] [--no-smooth] [--smooth-sigma X]
  cdvae inspect    FILE
";

enum CliError {
    Usage(String),
    Run(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Run(e)
    }
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    match dispatch(&args) {
        Ok(()) => {}
        Err(CliError::Usage(msg)) => {
            eprintln!("error[usage]: {msg}");
            eprint!("{USAGE}");
            std::process::exit(2);
        }
        Err(CliError::Run(err)) => {
            eprintln!("error[{}]: {err}", err.kind());
            std::process::exit(1);
        }
    }
}

fn dispatch(args: &[String]) -> Result<(), CliError> {
    let Some(cmd) = args.first() else {
        return Err(usage("missing subcommand"));
    };
    let rest = &args[1..];
    match cmd.as_str() {
        "gen-synthetic" => cmd_gen_synthetic(rest),
        "train" => cmd_train(rest),
        "convert" => cmd_convert(rest),
        "evaluate" => cmd_evaluate(rest),
        "inspect" => cmd_inspect(rest),
        "--help" | "-h" | "help" => {
            print!("{USAGE}");
            Ok(())
        }
        other => Err(usage(format!("unknown subcommand '{other}'"))),
    }
}

/// Declarative flag parser: `valued` flags take an argument (`--k v` or
/// `--k=v`), `switches` do not; anything else is a usage error.
struct Parsed {
    values: BTreeMap<String, String>,
    switches: Vec<String>,
    positional: Vec<String>,
}

fn parse_flags(
    args: &[String],
    valued: &[&str],
    switches: &[&str],
    max_positional: usize,
) -> Result<Parsed, CliError> {
    let mut out = Parsed {
        values: BTreeMap::new(),
        switches: Vec::new(),
        positional: Vec::new(),
    };
    let mut it = args.iter().peekable();
    while let Some(arg) = it.next() {
        if let Some(name) = arg.strip_prefix("--") {
            let (key, inline) = match name.split_once('=') {
                Some((k, v)) => (k, Some(v.to_string())),
                None => (name, None),
            };
            if switches.contains(&key) {
                if inline.is_some() {
                    return Err(usage(format!("flag --{key} takes no value")));
                }
                out.switches.push(key.to_string());
            } else if valued.contains(&key) {
                let value = match inline {
                    Some(v) => v,
                    None => it
                        .next()
                        .ok_or_else(|| usage(format!("flag --{key} needs a value")))?
                        .clone(),
                };
                if out.values.insert(key.to_string(), value).is_some() {
                    return Err(usage(format!("flag --{key} given twice")));
                }
            } else {
                return Err(usage(format!("unknown flag --{key}")));
            }
        } else {
            out.positional.push(arg.clone());
            if out.positional.len() > max_positional {
                return Err(usage(format!("unexpected argument '{arg}'")));
            }
        }
    }
    Ok(out)
}

impl Parsed {
    fn has(&self, switch: &str) -> bool {
        self.switches.iter().any(|s| s == switch)
    }

    fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    fn require(&self, key: &str) -> Result<&str, CliError> {
        self.get(key)
            .ok_or_else(|| usage(format!("missing required flag --{key}")))
    }

    fn parse_opt<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>, CliError> {
        match self.get(key) {
            None => Ok(None),
            Some(v) => v
                .parse::<T>()
                .map(Some)
                .map_err(|_| usage(format!("flag --{key}: cannot parse '{v}'"))),
        }
    }
}

fn parse_widths(spec: &str) -> Result<Vec<usize>, CliError> {
    if spec == "-" {
        return Ok(Vec::new());
    }
    spec.split(',')
        .map(|w| {
            w.parse::<usize>()
                .map_err(|_| usage(format!("bad width list '{spec}'")))
        })
        .collect()
}

fn cmd_gen_synthetic(args: &[String]) -> Result<(), CliError> {
    let p = parse_flags(
        args,
        &[
            "out",
            "seed",
            "speakers",
            "utterances",
            "frames",
            "phones",
            "perturbation",
            "frame-period",
        ],
        &[],
        0,
    )?;
    let out: PathBuf = p.require("out")?.into();
    let mut cfg = SynthConfig::default();
    if let Some(v) = p.parse_opt("seed")? {
        cfg.seed = v;
    }
    if let Some(v) = p.parse_opt("speakers")? {
        cfg.n_speakers = v;
    }
    if let Some(v) = p.parse_opt("utterances")? {
        cfg.utterances_per_speaker = v;
    }
    if let Some(v) = p.parse_opt("frames")? {
        cfg.frames_per_utterance = v;
    }
    if let Some(v) = p.parse_opt("phones")? {
        cfg.n_phones = v;
    }
    if let Some(v) = p.parse_opt("perturbation")? {
        cfg.formant_perturbation = v;
    }
    if let Some(v) = p.parse_opt("frame-period")? {
        cfg.frame_period_ms = v;
    }
    let manifest = gen_synthetic_corpus(&cfg, &out)?;
    println!(
        "wrote {} speakers x {} utterances x {} frames -> {}",
        cfg.n_speakers,
        cfg.utterances_per_speaker,
        cfg.frames_per_utterance,
        manifest.display()
    );
    Ok(())
}

/// `key=value` lines; flags override the file.
fn apply_config_file(path: &Path, values: &mut BTreeMap<String, String>) -> Result<(), CliError> {
    let text =
        fs::read_to_string(path).map_err(|e| CliError::Run(cdvae_core::error::io_err(path, e)))?;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(CliError::Run(Error::Parse(format!(
                "{}:{}: expected key=value",
                path.display(),
                lineno + 1
            ))));
        };
        values
            .entry(key.trim().to_string())
            .or_insert_with(|| value.trim().to_string());
    }
    Ok(())
}

fn cmd_train(args: &[String]) -> Result<(), CliError> {
    let valued = [
        "manifest",
        "out",
        "objective",
        "epochs",
        "batch",
        "lr",
        "seed",
        "config",
        "resume",
        "loss-log",
        "latent-dim",
        "speaker-dim",
        "enc-sp-hidden",
        "enc-mcc-hidden",
        "dec-sp-hidden",
        "dec-mcc-hidden",
        "w-within",
        "w-kld",
        "w-cross",
        "w-sim",
    ];
    let mut p = parse_flags(args, &valued, &["sim-on-samples", "per-path-noise"], 0)?;
    if let Some(cfg_path) = p.get("config").map(PathBuf::from) {
        apply_config_file(&cfg_path, &mut p.values)?;
    }
    let manifest: PathBuf = p.require("manifest")?.into();
    let out: PathBuf = p.require("out")?.into();
    let corpus = load_corpus(&manifest)?;

    let (ckpt, records) = if let Some(resume_path) = p.get("resume").map(PathBuf::from) {
        for key in [
            "objective",
            "batch",
            "lr",
            "seed",
            "latent-dim",
            "speaker-dim",
            "enc-sp-hidden",
            "enc-mcc-hidden",
            "dec-sp-hidden",
            "dec-mcc-hidden",
            "w-within",
            "w-kld",
            "w-cross",
            "w-sim",
        ] {
            if p.get(key).is_some() {
                return Err(usage(format!(
                    "--{key} cannot be changed when resuming; it is fixed by the checkpoint"
                )));
            }
        }
        let prev = load_checkpoint(&resume_path)?;
        let additional = p.parse_opt::<usize>("epochs")?.unwrap_or(1);
        resume(prev, &corpus, additional)?
    } else {
        let objective = match p.get("objective") {
            Some(s) => ObjectiveKind::parse(s)?,
            None => ObjectiveKind::Cdvae,
        };
        let mut config = TrainConfig::new(objective);
        if let Some(v) = p.parse_opt("epochs")? {
            config.epochs = v;
        }
        if let Some(v) = p.parse_opt("batch")? {
            config.batch_size = v;
        }
        if let Some(v) = p.parse_opt("lr")? {
            config.lr = v;
        }
        if let Some(v) = p.parse_opt("seed")? {
            config.seed = v;
        }
        if let Some(v) = p.parse_opt("latent-dim")? {
            config.model.latent_dim = v;
        }
        if let Some(v) = p.parse_opt("speaker-dim")? {
            config.model.speaker_dim = v;
        }
        if let Some(v) = p.get("enc-sp-hidden") {
            config.model.enc_sp_hidden = parse_widths(v)?;
        }
        if let Some(v) = p.get("enc-mcc-hidden") {
            config.model.enc_mcc_hidden = parse_widths(v)?;
        }
        if let Some(v) = p.get("dec-sp-hidden") {
            config.model.dec_sp_hidden = parse_widths(v)?;
        }
        if let Some(v) = p.get("dec-mcc-hidden") {
            config.model.dec_mcc_hidden = parse_widths(v)?;
        }
        if let Some(v) = p.parse_opt("w-within")? {
            config.weights.within = v;
        }
        if let Some(v) = p.parse_opt("w-kld")? {
            config.weights.kld = v;
        }
        if let Some(v) = p.parse_opt("w-cross")? {
            config.weights.cross = v;
        }
        if let Some(v) = p.parse_opt("w-sim")? {
            config.weights.sim = v;
        }
        config.sim_on_samples = p.has("sim-on-samples");
        config.per_path_noise = p.has("per-path-noise");
        train(&corpus, &config)?
    };

    if let Some(log_path) = p.get("loss-log").map(PathBuf::from) {
        write_loss_log(&log_path, &records)?;
    }
    save_checkpoint(&out, &ckpt)?;
    let last = records.last().expect("at least one epoch");
    println!(
        "trained {} to epoch {} (total {:.6}, within {:.6}, kld {:.6}, cross {:.6}, sim {:.6}) -> {}",
        ckpt.objective.name(),
        ckpt.epoch,
        last.loss.total,
        last.loss.within_recon,
        last.loss.kld,
        last.loss.cross_recon,
        last.loss.latent_sim,
        out.display()
    );
    Ok(())
}

fn write_loss_log(path: &Path, records: &[EpochRecord]) -> Result<(), CliError> {
    let mut out = String::from("# epoch\tbatches\twithin\tkld\tcross\tsim\ttotal\n");
    for r in records {
        out.push_str(&format!(
            "{}\t{}\t{:.12e}\t{:.12e}\t{:.12e}\t{:.12e}\t{:.12e}\n",
            r.epoch,
            r.batches,
            r.loss.within_recon,
            r.loss.kld,
            r.loss.cross_recon,
            r.loss.latent_sim,
            r.loss.total
        ));
    }
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)
                .map_err(|e| CliError::Run(cdvae_core::error::io_err(parent, e)))?;
        }
    }
    fs::write(path, out).map_err(|e| CliError::Run(cdvae_core::error::io_err(path, e)))
}

fn postfilter_flags(p: &Parsed) -> Result<PostFilterFlags, CliError> {
    let mut flags = PostFilterFlags::default();
    if p.has("no-postfilter") {
        flags = PostFilterFlags::off();
    }
    if p.has("no-gv") {
        flags.gv = false;
    }
    if p.has("no-smooth") {
        flags.smooth = false;
    }
    if let Some(sigma) = p.parse_opt("smooth-sigma")? {
        flags.smooth_sigma = sigma;
    }
    Ok(flags)
}

fn cmd_convert(args: &[String]) -> Result<(), CliError> {
    let p = parse_flags(
        args,
        &[
            "checkpoint",
            "manifest",
            "source",
            "target",
            "path",
            "out",
            "smooth-sigma",
        ],
        &["no-postfilter", "no-gv", "no-smooth"],
        0,
    )?;
    let ckpt = load_checkpoint(&PathBuf::from(p.require("checkpoint")?))?;
    let corpus = load_corpus(&PathBuf::from(p.require("manifest")?))?;
    let source = p.require("source")?.to_string();
    let target = p.require("target")?.to_string();
    let path = ConversionPath::parse(p.require("path")?)?;
    let out: PathBuf = p.require("out")?.into();
    let flags = postfilter_flags(&p)?;
    let codec = MccCodec::new(MccWarpConfig::default())?;
    let written = batch_convert(
        &ckpt,
        &corpus,
        &[(source.clone(), target.clone())],
        path,
        &flags,
        &codec,
        &out,
    )?;
    println!(
        "converted {} utterances {source} -> {target} via {} into {}",
        corpus.utterances_of(&source).len(),
        path.name(),
        out.display()
    );
    println!("{} files written", written.len());
    Ok(())
}

fn cmd_evaluate(args: &[String]) -> Result<(), CliError> {
    let p = parse_flags(
        args,
        &["checkpoint", "manifest", "path", "smooth-sigma"],
        &["no-postfilter", "no-gv", "no-smooth"],
        0,
    )?;
    let ckpt = load_checkpoint(&PathBuf::from(p.require("checkpoint")?))?;
    let corpus = load_corpus(&PathBuf::from(p.require("manifest")?))?;
    let path = ConversionPath::parse(p.require("path")?)?;
    let flags = postfilter_flags(&p)?;
    let rows = evaluate(&corpus, &ckpt, path, &flags)?;
    println!("source\ttarget\tpath\tutt-pairs\tbefore-dB\tconverted-dB\timprovement");
    for r in &rows {
        let improvement = 100.0 * (r.before_mcd - r.converted_mcd) / r.before_mcd;
        println!(
            "{}\t{}\t{}\t{}\t{:.4}\t{:.4}\t{:+.1}%",
            r.source,
            r.target,
            r.path.name(),
            r.utterance_pairs,
            r.before_mcd,
            r.converted_mcd,
            improvement
        );
    }
    Ok(())
}

fn cmd_inspect(args: &[String]) -> Result<(), CliError> {
    let p = parse_flags(args, &[], &[], 1)?;
    let Some(path) = p.positional.first().map(PathBuf::from) else {
        return Err(usage("inspect needs a file argument"));
    };
    let bytes = fs::read(&path).map_err(|e| CliError::Run(cdvae_core::error::io_err(&path, e)))?;
    match bytes.get(0..4) {
        Some(b"CDVF") => {
            let seq = cdvae_core::io::read_feature_file(&path)?;
            println!("feature file {}", path.display());
            println!("  domain        {}", seq.kind.name());
            println!("  frames        {}", seq.len());
            println!("  dim           {}", seq.dim());
            println!("  frame period  {} ms", seq.frame_period_ms);
        }
        Some(b"CDVC") => {
            let ckpt = load_checkpoint(&path)?;
            let cfg = ckpt.params.config();
            println!("checkpoint {}", path.display());
            println!("  objective     {}", ckpt.objective.name());
            println!("  epochs done   {}", ckpt.epoch);
            println!("  seed          {}", ckpt.config.seed);
            println!("  lr            {}", ckpt.config.lr);
            println!("  batch size    {}", ckpt.config.batch_size);
            println!(
                "  dims          sp {} / mcc {} / latent {} / speaker {}",
                cfg.sp_dim, cfg.mcc_dim, cfg.latent_dim, cfg.speaker_dim
            );
            println!("  speakers      {}", ckpt.params.speakers().join(" "));
            let (seed, counter, cached) = ckpt.rng.state();
            println!(
                "  rng           seed {seed} counter {counter} cached {}",
                cached.map_or("none".to_string(), |v| v.to_string())
            );
            println!("  tensors:");
            for t in ckpt.params.store().iter() {
                println!("    {:<20} {:>5} x {:<5} t={}", t.name, t.rows, t.cols, t.t);
            }
        }
        _ => {
            return Err(CliError::Run(Error::Parse(format!(
                "{}: unrecognized magic (not a cdvae file)",
                path.display()
            ))))
        }
    }
    Ok(())
}
