//! The cross-domain VAE: one encoder/decoder pair per spectral domain, a
//! learned speaker-code table, and the combined training objective.
//!
//! Training minimizes
//!
//! ```text
//! J = w_wi * (within-domain reconstruction)
//!   + w_kld * (KL divergence of both posteriors to N(0, I))
//!   + w_cross * (cross-domain reconstruction)
//!   + w_sim * (L1 distance between the two posterior means)
//! ```
//!
//! i.e. the negated evidence lower bound of each domain plus the two
//! cross-domain couplings. The single-domain VAE baseline is the degenerate
//! configuration with the cross and similarity terms absent.

use crate::error::{Error, Result};
use crate::nn::rng::sample_standard_normal;
use crate::nn::{kernels, NodeId, ParamId, ParamStore, Rng, Tape};

/// Which spectral feature domain an encoder/decoder pair handles.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SpectralDomain {
    Sp,
    Mcc,
}

impl SpectralDomain {
    pub fn name(self) -> &'static str {
        match self {
            SpectralDomain::Sp => "sp",
            SpectralDomain::Mcc => "mcc",
        }
    }
}

/// Network widths. Defaults: 513-bin SP and 35-dim MCC inputs, 128-dim
/// latent space and speaker codes, LReLU(0.2) hidden activations with layer
/// normalization after every hidden layer and none on the output layers.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub sp_dim: usize,
    pub mcc_dim: usize,
    pub latent_dim: usize,
    pub speaker_dim: usize,
    pub enc_sp_hidden: Vec<usize>,
    pub enc_mcc_hidden: Vec<usize>,
    pub dec_sp_hidden: Vec<usize>,
    pub dec_mcc_hidden: Vec<usize>,
    pub lrelu_slope: f64,
    pub ln_eps: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            sp_dim: crate::features::SP_DIM,
            mcc_dim: crate::features::MCC_DIM,
            latent_dim: 128,
            speaker_dim: 128,
            enc_sp_hidden: vec![256, 128],
            enc_mcc_hidden: vec![128, 128],
            dec_sp_hidden: vec![128, 256],
            dec_mcc_hidden: vec![128, 128],
            lrelu_slope: 0.2,
            ln_eps: 1e-5,
        }
    }
}

impl ModelConfig {
    pub fn input_dim(&self, domain: SpectralDomain) -> usize {
        match domain {
            SpectralDomain::Sp => self.sp_dim,
            SpectralDomain::Mcc => self.mcc_dim,
        }
    }

    fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("sp_dim", self.sp_dim),
            ("mcc_dim", self.mcc_dim),
            ("latent_dim", self.latent_dim),
            ("speaker_dim", self.speaker_dim),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("model: {name} must be >= 1")));
            }
        }
        if self
            .enc_sp_hidden
            .iter()
            .chain(&self.enc_mcc_hidden)
            .chain(&self.dec_sp_hidden)
            .chain(&self.dec_mcc_hidden)
            .any(|w| *w == 0)
        {
            return Err(Error::Config("model: hidden widths must be >= 1".into()));
        }
        Ok(())
    }
}

/// Per-frame diagonal-Gaussian posterior over the latent space.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentDistribution {
    pub mean: Vec<f64>,
    pub log_var: Vec<f64>,
}

/// `z = mean + exp(log_var / 2) * eps` for a standard-normal draw `eps`.
pub fn reparameterize(dist: &LatentDistribution, eps: &[f64]) -> Vec<f64> {
    dist.mean
        .iter()
        .zip(&dist.log_var)
        .zip(eps)
        .map(|((m, l), e)| m + (0.5 * l).exp() * e)
        .collect()
}

/// `1/2 * ||x - x_hat||^2`: Gaussian negative log-likelihood with identity
/// covariance, up to the dropped additive constant.
pub fn recon_loss(x: &[f64], x_hat: &[f64]) -> Result<f64> {
    if x.len() != x_hat.len() {
        return Err(Error::Shape(format!(
            "recon_loss: {} vs {} elements",
            x.len(),
            x_hat.len()
        )));
    }
    Ok(x.iter()
        .zip(x_hat)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        * 0.5)
}

/// Closed-form `D_KL(N(mean, diag(exp(log_var))) || N(0, I))`.
pub fn kld_loss(dist: &LatentDistribution) -> f64 {
    dist.mean
        .iter()
        .zip(&dist.log_var)
        .map(|(m, l)| m * m + l.exp() - l - 1.0)
        .sum::<f64>()
        * 0.5
}

/// L1 distance between the two domains' posterior means.
pub fn latent_sim_loss(mean_sp: &[f64], mean_mcc: &[f64]) -> Result<f64> {
    if mean_sp.len() != mean_mcc.len() {
        return Err(Error::Shape(format!(
            "latent_sim_loss: {} vs {} elements",
            mean_sp.len(),
            mean_mcc.len()
        )));
    }
    Ok(mean_sp
        .iter()
        .zip(mean_mcc)
        .map(|(a, b)| (a - b).abs())
        .sum())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub within: f64,
    pub kld: f64,
    pub cross: f64,
    pub sim: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            within: 1.0,
            kld: 1.0,
            cross: 1.0,
            sim: 1.0,
        }
    }
}

/// Objective variants that drive which loss terms exist and which side of
/// the model receives gradients.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ObjectiveKind {
    VaeSp,
    VaeMcc,
    Cdvae,
}

impl ObjectiveKind {
    pub fn name(self) -> &'static str {
        match self {
            ObjectiveKind::VaeSp => "vae-sp",
            ObjectiveKind::VaeMcc => "vae-mcc",
            ObjectiveKind::Cdvae => "cdvae",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "vae-sp" => ObjectiveKind::VaeSp,
            "vae-mcc" => ObjectiveKind::VaeMcc,
            "cdvae" => ObjectiveKind::Cdvae,
            other => {
                return Err(Error::Config(format!(
                    "unknown objective '{other}' (expected vae-sp, vae-mcc, or cdvae)"
                )))
            }
        })
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ObjectiveOptions {
    pub weights: LossWeights,
    /// Compute the similarity loss on sampled latents instead of posterior
    /// means.
    pub sim_on_samples: bool,
    /// Draw an independent noise vector per decoding path instead of sharing
    /// one draw per encoder.
    pub per_path_noise: bool,
}

/// The four objective terms and their weighted total for one batch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub within_recon: f64,
    pub kld: f64,
    pub cross_recon: f64,
    pub latent_sim: f64,
    pub total: f64,
    pub weights: LossWeights,
}

impl LossBreakdown {
    /// The exact summation the graph performs; `total` always equals this.
    pub fn weighted_total(&self) -> f64 {
        let w = self.weights;
        let mut acc = 0.0;
        acc += w.within * self.within_recon;
        acc += w.kld * self.kld;
        acc += w.cross * self.cross_recon;
        acc += w.sim * self.latent_sim;
        acc
    }
}

#[derive(Debug, Clone, Copy)]
struct DenseIds {
    w: ParamId,
    b: ParamId,
}

#[derive(Debug, Clone, Copy)]
struct NormIds {
    gamma: ParamId,
    beta: ParamId,
}

#[derive(Debug, Clone)]
struct EncoderIds {
    layers: Vec<(DenseIds, NormIds)>,
    mean: DenseIds,
    log_var: DenseIds,
}

#[derive(Debug, Clone)]
struct DecoderIds {
    layers: Vec<(DenseIds, NormIds)>,
    out: DenseIds,
}

/// All trainable parameters: two encoders, two decoders, and the speaker
/// codes, stored behind a [`ParamStore`] for the optimizer and checkpoints.
#[derive(Debug, Clone)]
pub struct CdvaeParams {
    cfg: ModelConfig,
    store: ParamStore,
    speakers: Vec<String>,
    enc_sp: EncoderIds,
    enc_mcc: EncoderIds,
    dec_sp: DecoderIds,
    dec_mcc: DecoderIds,
    speaker_codes: Vec<ParamId>,
}

impl CdvaeParams {
    /// Random initialization: He-style weights for the LReLU hidden stacks,
    /// smaller fan-in scaling for the linear heads, zero biases, unit
    /// layer-norm gains, and N(0, 0.01) speaker codes.
    pub fn init(cfg: ModelConfig, speakers: &[String], rng: &mut Rng) -> Result<Self> {
        cfg.validate()?;
        if speakers.is_empty() {
            return Err(Error::Config("model: need at least one speaker".into()));
        }
        let mut roster: Vec<String> = speakers.to_vec();
        roster.sort();
        roster.dedup();
        if roster.len() != speakers.len() {
            return Err(Error::Config("model: duplicate speaker ids".into()));
        }
        for id in &roster {
            if id.is_empty() || id.chars().any(|c| c.is_whitespace()) {
                return Err(Error::Config(format!(
                    "model: speaker id '{id}' must be non-empty without whitespace"
                )));
            }
        }

        let mut store = ParamStore::new();
        let dec_in = cfg.latent_dim + cfg.speaker_dim;
        let enc_sp = register_encoder(&mut store, rng, &cfg, "enc_sp", cfg.sp_dim);
        let enc_mcc = register_encoder(&mut store, rng, &cfg, "enc_mcc", cfg.mcc_dim);
        let dec_sp = register_decoder(&mut store, rng, &cfg, "dec_sp", dec_in, cfg.sp_dim);
        let dec_mcc = register_decoder(&mut store, rng, &cfg, "dec_mcc", dec_in, cfg.mcc_dim);
        let speaker_codes = roster
            .iter()
            .map(|id| {
                let code: Vec<f64> = (0..cfg.speaker_dim)
                    .map(|_| rng.standard_normal() * 0.1)
                    .collect();
                store.register(&format!("speaker.{id}"), cfg.speaker_dim, 1, code)
            })
            .collect();

        Ok(CdvaeParams {
            cfg,
            store,
            speakers: roster,
            enc_sp,
            enc_mcc,
            dec_sp,
            dec_mcc,
            speaker_codes,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn speakers(&self) -> &[String] {
        &self.speakers
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn speaker_index(&self, speaker_id: &str) -> Result<usize> {
        self.speakers
            .iter()
            .position(|s| s == speaker_id)
            .ok_or_else(|| Error::Lookup(format!("unknown speaker '{speaker_id}'")))
    }

    pub fn speaker_code(&self, speaker_id: &str) -> Result<&[f64]> {
        let idx = self.speaker_index(speaker_id)?;
        Ok(self.store.value(self.speaker_codes[idx]))
    }

    fn encoder(&self, domain: SpectralDomain) -> &EncoderIds {
        match domain {
            SpectralDomain::Sp => &self.enc_sp,
            SpectralDomain::Mcc => &self.enc_mcc,
        }
    }

    fn decoder(&self, domain: SpectralDomain) -> &DecoderIds {
        match domain {
            SpectralDomain::Sp => &self.dec_sp,
            SpectralDomain::Mcc => &self.dec_mcc,
        }
    }

    fn check_input(&self, domain: SpectralDomain, x: &[f64]) -> Result<()> {
        let want = self.cfg.input_dim(domain);
        if x.len() != want {
            return Err(Error::Shape(format!(
                "{} frame has {} elements, encoder expects {want}",
                domain.name(),
                x.len()
            )));
        }
        Ok(())
    }

    /// Deterministic posterior for one frame: hidden stack with LReLU and
    /// layer norm, then linear mean and log-variance heads.
    pub fn encode(&self, domain: SpectralDomain, x: &[f64]) -> Result<LatentDistribution> {
        self.check_input(domain, x)?;
        let ids = self.encoder(domain);
        let mut h = x.to_vec();
        for (dense, norm) in &ids.layers {
            h = self.apply_hidden(&h, dense, norm);
        }
        Ok(LatentDistribution {
            mean: self.apply_dense(&h, &ids.mean),
            log_var: self.apply_dense(&h, &ids.log_var),
        })
    }

    /// Deterministic decoding of `[z; y]`; the output layer is linear with
    /// no normalization.
    pub fn decode(&self, domain: SpectralDomain, z: &[f64], y: &[f64]) -> Result<Vec<f64>> {
        if z.len() != self.cfg.latent_dim || y.len() != self.cfg.speaker_dim {
            return Err(Error::Shape(format!(
                "decode: latent {} (want {}), speaker code {} (want {})",
                z.len(),
                self.cfg.latent_dim,
                y.len(),
                self.cfg.speaker_dim
            )));
        }
        let ids = self.decoder(domain);
        let mut h = Vec::with_capacity(z.len() + y.len());
        h.extend_from_slice(z);
        h.extend_from_slice(y);
        for (dense, norm) in &ids.layers {
            h = self.apply_hidden(&h, dense, norm);
        }
        Ok(self.apply_dense(&h, &ids.out))
    }

    fn apply_dense(&self, x: &[f64], ids: &DenseIds) -> Vec<f64> {
        let w = self.store.get(ids.w);
        let b = self.store.value(ids.b);
        let mut y = vec![0.0; w.rows];
        kernels::dense_into(&mut y, &w.value, b, x);
        y
    }

    fn apply_hidden(&self, x: &[f64], dense: &DenseIds, norm: &NormIds) -> Vec<f64> {
        let pre = self.apply_dense(x, dense);
        let mut act = vec![0.0; pre.len()];
        kernels::lrelu_into(&mut act, &pre, self.cfg.lrelu_slope);
        let mut out = vec![0.0; act.len()];
        kernels::layer_norm_into(
            &mut out,
            &act,
            self.store.value(norm.gamma),
            self.store.value(norm.beta),
            self.cfg.ln_eps,
        );
        out
    }

    fn tape_encoder(
        &self,
        tape: &mut Tape,
        domain: SpectralDomain,
        x: NodeId,
    ) -> Result<(NodeId, NodeId)> {
        let ids = self.encoder(domain);
        let mut h = x;
        for (dense, norm) in &ids.layers {
            h = tape.dense(dense.w, dense.b, h)?;
            h = tape.lrelu(h, self.cfg.lrelu_slope)?;
            h = tape.layer_norm(h, norm.gamma, norm.beta, self.cfg.ln_eps)?;
        }
        let mean = tape.dense(ids.mean.w, ids.mean.b, h)?;
        let log_var = tape.dense(ids.log_var.w, ids.log_var.b, h)?;
        Ok((mean, log_var))
    }

    fn tape_decoder(
        &self,
        tape: &mut Tape,
        domain: SpectralDomain,
        z: NodeId,
        code: NodeId,
    ) -> Result<NodeId> {
        let ids = self.decoder(domain);
        let mut h = tape.concat(z, code)?;
        for (dense, norm) in &ids.layers {
            h = tape.dense(dense.w, dense.b, h)?;
            h = tape.lrelu(h, self.cfg.lrelu_slope)?;
            h = tape.layer_norm(h, norm.gamma, norm.beta, self.cfg.ln_eps)?;
        }
        tape.dense(ids.out.w, ids.out.b, h)
    }
}

fn register_dense(
    store: &mut ParamStore,
    rng: &mut Rng,
    name: &str,
    out_dim: usize,
    in_dim: usize,
    std: f64,
) -> DenseIds {
    let w: Vec<f64> = (0..out_dim * in_dim)
        .map(|_| rng.standard_normal() * std)
        .collect();
    DenseIds {
        w: store.register(&format!("{name}.w"), out_dim, in_dim, w),
        b: store.register(&format!("{name}.b"), out_dim, 1, vec![0.0; out_dim]),
    }
}

fn register_norm(store: &mut ParamStore, name: &str, dim: usize) -> NormIds {
    NormIds {
        gamma: store.register(&format!("{name}.ln_g"), dim, 1, vec![1.0; dim]),
        beta: store.register(&format!("{name}.ln_b"), dim, 1, vec![0.0; dim]),
    }
}

fn register_encoder(
    store: &mut ParamStore,
    rng: &mut Rng,
    cfg: &ModelConfig,
    prefix: &str,
    input_dim: usize,
) -> EncoderIds {
    let hidden = match prefix {
        "enc_sp" => &cfg.enc_sp_hidden,
        _ => &cfg.enc_mcc_hidden,
    };
    let mut layers = Vec::new();
    let mut width = input_dim;
    for (i, &out) in hidden.iter().enumerate() {
        let std = (2.0 / width as f64).sqrt();
        let dense = register_dense(store, rng, &format!("{prefix}.h{i}"), out, width, std);
        let norm = register_norm(store, &format!("{prefix}.h{i}"), out);
        layers.push((dense, norm));
        width = out;
    }
    let head_std = (1.0 / width as f64).sqrt();
    EncoderIds {
        layers,
        mean: register_dense(
            store,
            rng,
            &format!("{prefix}.mean"),
            cfg.latent_dim,
            width,
            head_std,
        ),
        log_var: register_dense(
            store,
            rng,
            &format!("{prefix}.logvar"),
            cfg.latent_dim,
            width,
            head_std,
        ),
    }
}

fn register_decoder(
    store: &mut ParamStore,
    rng: &mut Rng,
    cfg: &ModelConfig,
    prefix: &str,
    input_dim: usize,
    output_dim: usize,
) -> DecoderIds {
    let hidden = match prefix {
        "dec_sp" => &cfg.dec_sp_hidden,
        _ => &cfg.dec_mcc_hidden,
    };
    let mut layers = Vec::new();
    let mut width = input_dim;
    for (i, &out) in hidden.iter().enumerate() {
        let std = (2.0 / width as f64).sqrt();
        let dense = register_dense(store, rng, &format!("{prefix}.h{i}"), out, width, std);
        let norm = register_norm(store, &format!("{prefix}.h{i}"), out);
        layers.push((dense, norm));
        width = out;
    }
    let out_std = (1.0 / width as f64).sqrt();
    DecoderIds {
        layers,
        out: register_dense(
            store,
            rng,
            &format!("{prefix}.out"),
            output_dim,
            width,
            out_std,
        ),
    }
}

/// One training frame: the same underlying speech frame in both domains.
#[derive(Debug, Clone)]
pub struct FrameSample {
    pub x_sp: Vec<f64>,
    pub x_mcc: Vec<f64>,
    pub speaker_id: String,
}

/// A built objective graph: differentiate with
/// `graph.tape.backward(graph.loss)`.
pub struct ObjectiveGraph<'p> {
    pub tape: Tape<'p>,
    pub loss: NodeId,
    pub breakdown: LossBreakdown,
}

/// Builds the mini-batch objective graph; per-batch terms are frame means.
///
/// Noise order per frame: the SP encoder's draw, then the MCC encoder's,
/// each reused by that encoder's within- and cross-domain paths (with
/// `per_path_noise` the cross paths draw two further vectors in the same
/// order).
pub fn batch_objective<'p>(
    params: &'p CdvaeParams,
    frames: &[FrameSample],
    kind: ObjectiveKind,
    opts: &ObjectiveOptions,
    rng: &mut Rng,
) -> Result<ObjectiveGraph<'p>> {
    if frames.is_empty() {
        return Err(Error::Data("objective: empty batch".into()));
    }
    let latent = params.cfg.latent_dim;
    let inv_b = 1.0 / frames.len() as f64;
    let mut tape = Tape::new(&params.store);
    let mut within_terms: Vec<(NodeId, f64)> = Vec::new();
    let mut kld_terms: Vec<(NodeId, f64)> = Vec::new();
    let mut cross_terms: Vec<(NodeId, f64)> = Vec::new();
    let mut sim_terms: Vec<(NodeId, f64)> = Vec::new();

    for frame in frames {
        let idx = params.speaker_index(&frame.speaker_id)?;
        let code = tape.param_vec(params.speaker_codes[idx])?;

        match kind {
            ObjectiveKind::VaeSp | ObjectiveKind::VaeMcc => {
                let domain = if kind == ObjectiveKind::VaeSp {
                    SpectralDomain::Sp
                } else {
                    SpectralDomain::Mcc
                };
                let x = match domain {
                    SpectralDomain::Sp => &frame.x_sp,
                    SpectralDomain::Mcc => &frame.x_mcc,
                };
                params.check_input(domain, x)?;
                let xin = tape.input(x.clone())?;
                let (mean, log_var) = params.tape_encoder(&mut tape, domain, xin)?;
                let eps = sample_standard_normal(rng, latent);
                let z = tape.reparameterize(mean, log_var, eps)?;
                let xhat = params.tape_decoder(&mut tape, domain, z, code)?;
                within_terms.push((tape.half_squared_error(xhat, x)?, inv_b));
                kld_terms.push((tape.gaussian_kl(mean, log_var)?, inv_b));
            }
            ObjectiveKind::Cdvae => {
                params.check_input(SpectralDomain::Sp, &frame.x_sp)?;
                params.check_input(SpectralDomain::Mcc, &frame.x_mcc)?;
                let x_sp = tape.input(frame.x_sp.clone())?;
                let x_mcc = tape.input(frame.x_mcc.clone())?;
                let (mean_sp, log_var_sp) =
                    params.tape_encoder(&mut tape, SpectralDomain::Sp, x_sp)?;
                let (mean_mcc, log_var_mcc) =
                    params.tape_encoder(&mut tape, SpectralDomain::Mcc, x_mcc)?;

                let eps_sp = sample_standard_normal(rng, latent);
                let eps_mcc = sample_standard_normal(rng, latent);
                let z_sp = tape.reparameterize(mean_sp, log_var_sp, eps_sp)?;
                let z_mcc = tape.reparameterize(mean_mcc, log_var_mcc, eps_mcc)?;
                let (z_sp_cross, z_mcc_cross) = if opts.per_path_noise {
                    let eps_sp2 = sample_standard_normal(rng, latent);
                    let eps_mcc2 = sample_standard_normal(rng, latent);
                    (
                        tape.reparameterize(mean_sp, log_var_sp, eps_sp2)?,
                        tape.reparameterize(mean_mcc, log_var_mcc, eps_mcc2)?,
                    )
                } else {
                    (z_sp, z_mcc)
                };

                // Within-domain paths (1) and (2).
                let sp_hat = params.tape_decoder(&mut tape, SpectralDomain::Sp, z_sp, code)?;
                let mcc_hat = params.tape_decoder(&mut tape, SpectralDomain::Mcc, z_mcc, code)?;
                within_terms.push((tape.half_squared_error(sp_hat, &frame.x_sp)?, inv_b));
                within_terms.push((tape.half_squared_error(mcc_hat, &frame.x_mcc)?, inv_b));

                // Cross-domain paths (3) and (4): each domain reconstructed
                // from the other domain's latent code.
                let mcc_from_sp =
                    params.tape_decoder(&mut tape, SpectralDomain::Mcc, z_sp_cross, code)?;
                let sp_from_mcc =
                    params.tape_decoder(&mut tape, SpectralDomain::Sp, z_mcc_cross, code)?;
                cross_terms.push((tape.half_squared_error(mcc_from_sp, &frame.x_mcc)?, inv_b));
                cross_terms.push((tape.half_squared_error(sp_from_mcc, &frame.x_sp)?, inv_b));

                kld_terms.push((tape.gaussian_kl(mean_sp, log_var_sp)?, inv_b));
                kld_terms.push((tape.gaussian_kl(mean_mcc, log_var_mcc)?, inv_b));

                let sim = if opts.sim_on_samples {
                    tape.l1_distance(z_sp, z_mcc)?
                } else {
                    tape.l1_distance(mean_sp, mean_mcc)?
                };
                sim_terms.push((sim, inv_b));
            }
        }
    }

    let within = tape.weighted_sum(&within_terms)?;
    let kld = tape.weighted_sum(&kld_terms)?;
    let cross = tape.weighted_sum(&cross_terms)?;
    let sim = tape.weighted_sum(&sim_terms)?;
    let w = opts.weights;
    let loss = tape.weighted_sum(&[
        (within, w.within),
        (kld, w.kld),
        (cross, w.cross),
        (sim, w.sim),
    ])?;

    let breakdown = LossBreakdown {
        within_recon: tape.scalar(within),
        kld: tape.scalar(kld),
        cross_recon: tape.scalar(cross),
        latent_sim: tape.scalar(sim),
        total: tape.scalar(loss),
        weights: w,
    };
    Ok(ObjectiveGraph {
        tape,
        loss,
        breakdown,
    })
}

/// Single-frame CDVAE objective evaluation.
pub fn cdvae_objective(
    params: &CdvaeParams,
    x_sp: &[f64],
    x_mcc: &[f64],
    speaker_id: &str,
    rng: &mut Rng,
    opts: &ObjectiveOptions,
) -> Result<LossBreakdown> {
    let frame = FrameSample {
        x_sp: x_sp.to_vec(),
        x_mcc: x_mcc.to_vec(),
        speaker_id: speaker_id.to_string(),
    };
    Ok(batch_objective(
        params,
        std::slice::from_ref(&frame),
        ObjectiveKind::Cdvae,
        opts,
        rng,
    )?
    .breakdown)
}

/// Single-frame baseline VAE objective (one domain, no cross or similarity
/// terms).
pub fn vae_objective(
    params: &CdvaeParams,
    domain: SpectralDomain,
    x: &[f64],
    speaker_id: &str,
    rng: &mut Rng,
    opts: &ObjectiveOptions,
) -> Result<LossBreakdown> {
    let kind = match domain {
        SpectralDomain::Sp => ObjectiveKind::VaeSp,
        SpectralDomain::Mcc => ObjectiveKind::VaeMcc,
    };
    let frame = FrameSample {
        x_sp: if domain == SpectralDomain::Sp {
            x.to_vec()
        } else {
            vec![0.0; params.cfg.sp_dim]
        },
        x_mcc: if domain == SpectralDomain::Mcc {
            x.to_vec()
        } else {
            vec![0.0; params.cfg.mcc_dim]
        },
        speaker_id: speaker_id.to_string(),
    };
    Ok(batch_objective(params, std::slice::from_ref(&frame), kind, opts, rng)?.breakdown)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{adam_step, AdamHyper};

    fn tiny_config() -> ModelConfig {
        ModelConfig {
            sp_dim: 8,
            mcc_dim: 5,
            latent_dim: 4,
            speaker_dim: 4,
            enc_sp_hidden: vec![6],
            enc_mcc_hidden: vec![6],
            dec_sp_hidden: vec![6],
            dec_mcc_hidden: vec![6],
            lrelu_slope: 0.2,
            ln_eps: 1e-5,
        }
    }

    fn tiny_model(seed: u64) -> CdvaeParams {
        let mut rng = Rng::new(seed);
        CdvaeParams::init(
            tiny_config(),
            &["alice".to_string(), "bob".to_string()],
            &mut rng,
        )
        .unwrap()
    }

    fn random_frame(rng: &mut Rng, dim: usize) -> Vec<f64> {
        (0..dim).map(|_| rng.standard_normal()).collect()
    }

    #[test]
    fn encode_shapes_and_determinism() {
        let model = tiny_model(1);
        let mut rng = Rng::new(2);
        let x = random_frame(&mut rng, 8);
        let a = model.encode(SpectralDomain::Sp, &x).unwrap();
        let b = model.encode(SpectralDomain::Sp, &x).unwrap();
        assert_eq!(a.mean.len(), 4);
        assert_eq!(a.log_var.len(), 4);
        assert_eq!(a, b, "encoding is deterministic");
        assert!(matches!(
            model.encode(SpectralDomain::Sp, &[0.0; 5]),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn encode_finite_over_input_sweep() {
        let model = tiny_model(3);
        let mut rng = Rng::new(4);
        for _ in 0..100 {
            let x: Vec<f64> = (0..8).map(|_| rng.range_f64(-10.0, 10.0)).collect();
            let post = model.encode(SpectralDomain::Sp, &x).unwrap();
            assert!(post.mean.iter().chain(&post.log_var).all(|v| v.is_finite()));
        }
    }

    #[test]
    fn decode_shapes_and_determinism() {
        let model = tiny_model(5);
        let mut rng = Rng::new(6);
        let z = random_frame(&mut rng, 4);
        let y = model.speaker_code("alice").unwrap().to_vec();
        let sp = model.decode(SpectralDomain::Sp, &z, &y).unwrap();
        let mcc = model.decode(SpectralDomain::Mcc, &z, &y).unwrap();
        assert_eq!(sp.len(), 8);
        assert_eq!(mcc.len(), 5);
        assert_eq!(sp, model.decode(SpectralDomain::Sp, &z, &y).unwrap());
        assert!(matches!(
            model.decode(SpectralDomain::Sp, &z[..3], &y),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn tape_forward_matches_inference_forward() {
        // The no-grad path and the tape path share kernels; their outputs
        // must agree bitwise.
        let model = tiny_model(7);
        let mut rng = Rng::new(8);
        let x = random_frame(&mut rng, 8);
        let post = model.encode(SpectralDomain::Sp, &x).unwrap();
        let mut tape = Tape::new(&model.store);
        let xin = tape.input(x.clone()).unwrap();
        let (mean, log_var) = model
            .tape_encoder(&mut tape, SpectralDomain::Sp, xin)
            .unwrap();
        assert_eq!(tape.value(mean), post.mean.as_slice());
        assert_eq!(tape.value(log_var), post.log_var.as_slice());

        let z = reparameterize(&post, &[0.0; 4]);
        let code = model.speaker_code("bob").unwrap().to_vec();
        let dec = model.decode(SpectralDomain::Mcc, &z, &code).unwrap();
        let zin = tape.input(z).unwrap();
        let cin = tape
            .param_vec(model.store.id("speaker.bob").unwrap())
            .unwrap();
        let out = model
            .tape_decoder(&mut tape, SpectralDomain::Mcc, zin, cin)
            .unwrap();
        assert_eq!(tape.value(out), dec.as_slice());
    }

    #[test]
    fn reparameterize_examples() {
        let dist = LatentDistribution {
            mean: vec![1.0, -2.0],
            log_var: vec![0.0, 0.0],
        };
        assert_eq!(reparameterize(&dist, &[0.0, 0.0]), vec![1.0, -2.0]);
        assert_eq!(reparameterize(&dist, &[0.5, 1.5]), vec![1.5, -0.5]);
    }

    #[test]
    fn reparameterize_monte_carlo_moments() {
        let dist = LatentDistribution {
            mean: vec![0.7, -1.2],
            log_var: vec![0.4, -0.9],
        };
        let mut rng = Rng::new(99);
        let n = 100_000usize;
        let mut sums = [0.0f64; 2];
        let mut sq = [0.0f64; 2];
        for _ in 0..n {
            let eps = sample_standard_normal(&mut rng, 2);
            let z = reparameterize(&dist, &eps);
            for d in 0..2 {
                sums[d] += z[d];
                sq[d] += z[d] * z[d];
            }
        }
        for d in 0..2 {
            let mean = sums[d] / n as f64;
            let var = sq[d] / n as f64 - mean * mean;
            assert!((mean - dist.mean[d]).abs() < 0.02 * dist.mean[d].abs().max(1.0));
            let want = dist.log_var[d].exp();
            assert!((var - want).abs() / want < 0.02, "var {var} vs {want}");
        }
    }

    #[test]
    fn recon_loss_examples() {
        assert_eq!(recon_loss(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(recon_loss(&[1.0, 1.0], &[0.0, 0.0]).unwrap(), 1.0);
        // Doubling the residual quadruples the loss.
        let l1 = recon_loss(&[2.0, -3.0], &[1.0, -2.0]).unwrap();
        let l2 = recon_loss(&[3.0, -4.0], &[1.0, -2.0]).unwrap();
        assert!((l2 - 4.0 * l1).abs() < 1e-12);
        assert!(matches!(
            recon_loss(&[1.0], &[1.0, 2.0]),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn kld_closed_form_examples() {
        let zero = LatentDistribution {
            mean: vec![0.0; 3],
            log_var: vec![0.0; 3],
        };
        assert_eq!(kld_loss(&zero), 0.0);
        let unit_mean = LatentDistribution {
            mean: vec![1.0],
            log_var: vec![0.0],
        };
        assert!((kld_loss(&unit_mean) - 0.5).abs() < 1e-15);
        let wide = LatentDistribution {
            mean: vec![0.0],
            log_var: vec![4f64.ln()],
        };
        let expected = 0.5 * (4.0 - 4f64.ln() - 1.0);
        assert!((kld_loss(&wide) - expected).abs() < 1e-12);
        assert!((expected - 0.8068528194400547).abs() < 1e-12);
    }

    #[test]
    fn kld_monte_carlo_oracle() {
        // Estimate E_q[ln q(z) - ln p(z)] by sampling from q.
        let dist = LatentDistribution {
            mean: vec![0.0],
            log_var: vec![4f64.ln()],
        };
        let sigma = 2.0;
        let mut rng = Rng::new(1234);
        let n = 1_000_000usize;
        let mut acc = 0.0;
        for _ in 0..n {
            let eps = rng.standard_normal();
            let z = sigma * eps;
            // ln q - ln p = -ln sigma - eps^2/2 + z^2/2
            acc += -sigma.ln() - 0.5 * eps * eps + 0.5 * z * z;
        }
        let mc = acc / n as f64;
        assert!(
            (mc - kld_loss(&dist)).abs() < 1e-2,
            "MC {mc} vs closed form {}",
            kld_loss(&dist)
        );
    }

    #[test]
    fn kld_nonnegative_and_zero_only_at_prior() {
        let mut rng = Rng::new(55);
        for _ in 0..200 {
            let dist = LatentDistribution {
                mean: (0..4).map(|_| rng.range_f64(-2.0, 2.0)).collect(),
                log_var: (0..4).map(|_| rng.range_f64(-2.0, 2.0)).collect(),
            };
            let k = kld_loss(&dist);
            assert!(k >= 0.0);
            let off_prior = dist.mean.iter().any(|m| m.abs() > 1e-9)
                || dist.log_var.iter().any(|l| l.abs() > 1e-9);
            if off_prior {
                assert!(k > 0.0);
            }
        }
    }

    #[test]
    fn latent_sim_examples_and_metric_properties() {
        assert_eq!(latent_sim_loss(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(latent_sim_loss(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 2.0);
        assert_eq!(latent_sim_loss(&[0.5], &[-0.5]).unwrap(), 1.0);
        let mut rng = Rng::new(77);
        for _ in 0..100 {
            let a: Vec<f64> = (0..6).map(|_| rng.standard_normal()).collect();
            let b: Vec<f64> = (0..6).map(|_| rng.standard_normal()).collect();
            let c: Vec<f64> = (0..6).map(|_| rng.standard_normal()).collect();
            let ab = latent_sim_loss(&a, &b).unwrap();
            let ba = latent_sim_loss(&b, &a).unwrap();
            let ac = latent_sim_loss(&a, &c).unwrap();
            let cb = latent_sim_loss(&c, &b).unwrap();
            assert_eq!(ab, ba);
            assert!(ab >= 0.0);
            assert!(ab <= ac + cb + 1e-12, "triangle inequality");
        }
    }

    #[test]
    fn objective_total_is_exactly_the_weighted_component_sum() {
        let model = tiny_model(11);
        let mut rng = Rng::new(12);
        let opts = ObjectiveOptions {
            weights: LossWeights {
                within: 0.9,
                kld: 0.4,
                cross: 1.3,
                sim: 0.25,
            },
            ..Default::default()
        };
        let x_sp = random_frame(&mut rng, 8);
        let x_mcc = random_frame(&mut rng, 5);
        let b = cdvae_objective(&model, &x_sp, &x_mcc, "alice", &mut rng, &opts).unwrap();
        assert_eq!(b.total, b.weighted_total());
    }

    #[test]
    fn constructed_fixed_point_zeroes_the_losses() {
        // Zero encoders give mean = log_var = 0; decoders with zero weights
        // and the frame as output bias reconstruct both domains exactly.
        let mut model = tiny_model(13);
        let mut rng = Rng::new(14);
        let x_sp = random_frame(&mut rng, 8);
        let x_mcc = random_frame(&mut rng, 5);
        for name in [
            "enc_sp.h0.w",
            "enc_sp.h0.b",
            "enc_sp.mean.w",
            "enc_sp.mean.b",
            "enc_sp.logvar.w",
            "enc_sp.logvar.b",
            "enc_mcc.h0.w",
            "enc_mcc.h0.b",
            "enc_mcc.mean.w",
            "enc_mcc.mean.b",
            "enc_mcc.logvar.w",
            "enc_mcc.logvar.b",
            "dec_sp.h0.w",
            "dec_sp.h0.b",
            "dec_sp.out.w",
            "dec_mcc.h0.w",
            "dec_mcc.h0.b",
            "dec_mcc.out.w",
        ] {
            let p = model.store.by_name_mut(name).unwrap();
            p.value.iter_mut().for_each(|v| *v = 0.0);
        }
        model.store.by_name_mut("dec_sp.out.b").unwrap().value = x_sp.clone();
        model.store.by_name_mut("dec_mcc.out.b").unwrap().value = x_mcc.clone();

        let opts = ObjectiveOptions {
            weights: LossWeights {
                within: 1.0,
                kld: 1.0,
                cross: 1.0,
                sim: 0.0,
            },
            ..Default::default()
        };
        let b = cdvae_objective(&model, &x_sp, &x_mcc, "alice", &mut rng, &opts).unwrap();
        assert_eq!(b.within_recon, 0.0);
        assert_eq!(b.cross_recon, 0.0);
        assert_eq!(b.kld, 0.0);
        assert_eq!(b.total, 0.0);
    }

    #[test]
    fn unknown_speaker_is_a_lookup_error() {
        let model = tiny_model(15);
        let mut rng = Rng::new(16);
        let x_sp = random_frame(&mut rng, 8);
        let x_mcc = random_frame(&mut rng, 5);
        assert!(matches!(
            cdvae_objective(
                &model,
                &x_sp,
                &x_mcc,
                "carol",
                &mut rng,
                &ObjectiveOptions::default()
            ),
            Err(Error::Lookup(_))
        ));
    }

    #[test]
    fn vae_objective_is_the_restricted_cdvae() {
        // With matched noise, the CDVAE objective with cross/sim weights
        // zeroed decomposes into the two baseline VAE objectives.
        let model = tiny_model(17);
        let mut data_rng = Rng::new(18);
        let x_sp = random_frame(&mut data_rng, 8);
        let x_mcc = random_frame(&mut data_rng, 5);
        let opts = ObjectiveOptions {
            weights: LossWeights {
                within: 1.0,
                kld: 1.0,
                cross: 0.0,
                sim: 0.0,
            },
            ..Default::default()
        };
        let seed = 777u64;
        let combined = {
            let mut rng = Rng::new(seed);
            cdvae_objective(&model, &x_sp, &x_mcc, "bob", &mut rng, &opts).unwrap()
        };
        // The CDVAE draws the SP noise first, then the MCC noise; replaying
        // the same stream across the two baselines matches the draws.
        let mut rng = Rng::new(seed);
        let sp = vae_objective(&model, SpectralDomain::Sp, &x_sp, "bob", &mut rng, &opts).unwrap();
        let mcc =
            vae_objective(&model, SpectralDomain::Mcc, &x_mcc, "bob", &mut rng, &opts).unwrap();
        assert!((combined.within_recon - (sp.within_recon + mcc.within_recon)).abs() < 1e-12);
        assert!((combined.kld - (sp.kld + mcc.kld)).abs() < 1e-12);
        assert_eq!(sp.cross_recon, 0.0);
        assert_eq!(sp.latent_sim, 0.0);
    }

    #[test]
    fn gradients_match_finite_differences_on_the_full_objective() {
        let mut model = tiny_model(19);
        let mut data_rng = Rng::new(20);
        let frames: Vec<FrameSample> = (0..3)
            .map(|i| FrameSample {
                x_sp: random_frame(&mut data_rng, 8),
                x_mcc: random_frame(&mut data_rng, 5),
                speaker_id: if i % 2 == 0 { "alice" } else { "bob" }.into(),
            })
            .collect();
        let opts = ObjectiveOptions::default();
        let noise_seed = 21u64;

        let grads = {
            let mut rng = Rng::new(noise_seed);
            let graph =
                batch_objective(&model, &frames, ObjectiveKind::Cdvae, &opts, &mut rng).unwrap();
            graph.tape.backward(graph.loss).unwrap()
        };

        let names: Vec<String> = model.store.iter().map(|p| p.name.clone()).collect();
        let h = 1e-5;
        for name in names {
            let len = model.store.by_name(&name).unwrap().value.len();
            // Every element for small tensors, a deterministic stride for
            // larger ones.
            let stride = (len / 7).max(1);
            for flat in (0..len).step_by(stride) {
                let orig = model.store.by_name(&name).unwrap().value[flat];
                let eval = |v: f64, model: &mut CdvaeParams| {
                    model.store.by_name_mut(&name).unwrap().value[flat] = v;
                    let mut rng = Rng::new(noise_seed);
                    let graph =
                        batch_objective(model, &frames, ObjectiveKind::Cdvae, &opts, &mut rng)
                            .unwrap();
                    graph.breakdown.total
                };
                let plus = eval(orig + h, &mut model);
                let minus = eval(orig - h, &mut model);
                model.store.by_name_mut(&name).unwrap().value[flat] = orig;
                let numeric = (plus - minus) / (2.0 * h);
                let id = model.store.id(&name).unwrap();
                let analytic = grads.get(id).map_or(0.0, |g| g[flat]);
                let denom = analytic.abs().max(numeric.abs()).max(1e-6);
                assert!(
                    (analytic - numeric).abs() / denom < 1e-4,
                    "{name}[{flat}]: analytic {analytic} vs numeric {numeric}"
                );
            }
        }
    }

    #[test]
    fn similarity_on_samples_flag_changes_the_term() {
        // With the flag, the similarity term is computed on sampled latents
        // rather than posterior means, so it picks up the noise.
        let model = tiny_model(27);
        let mut data_rng = Rng::new(28);
        let x_sp = random_frame(&mut data_rng, 8);
        let x_mcc = random_frame(&mut data_rng, 5);
        let on_means = {
            let mut rng = Rng::new(29);
            cdvae_objective(
                &model,
                &x_sp,
                &x_mcc,
                "alice",
                &mut rng,
                &ObjectiveOptions::default(),
            )
            .unwrap()
        };
        let on_samples = {
            let mut rng = Rng::new(29);
            let opts = ObjectiveOptions {
                sim_on_samples: true,
                ..Default::default()
            };
            cdvae_objective(&model, &x_sp, &x_mcc, "alice", &mut rng, &opts).unwrap()
        };
        assert_ne!(on_means.latent_sim, on_samples.latent_sim);
        // The reconstruction paths are untouched by the flag.
        assert_eq!(on_means.within_recon, on_samples.within_recon);
        assert_eq!(on_means.cross_recon, on_samples.cross_recon);
    }

    #[test]
    fn per_path_noise_flag_decouples_the_cross_paths() {
        let model = tiny_model(30);
        let mut data_rng = Rng::new(31);
        let x_sp = random_frame(&mut data_rng, 8);
        let x_mcc = random_frame(&mut data_rng, 5);
        let shared = {
            let mut rng = Rng::new(32);
            cdvae_objective(
                &model,
                &x_sp,
                &x_mcc,
                "bob",
                &mut rng,
                &ObjectiveOptions::default(),
            )
            .unwrap()
        };
        let independent = {
            let mut rng = Rng::new(32);
            let opts = ObjectiveOptions {
                per_path_noise: true,
                ..Default::default()
            };
            cdvae_objective(&model, &x_sp, &x_mcc, "bob", &mut rng, &opts).unwrap()
        };
        // Within-domain paths share the first two draws either way.
        assert_eq!(shared.within_recon, independent.within_recon);
        assert_ne!(shared.cross_recon, independent.cross_recon);
    }

    #[test]
    fn only_the_batch_speaker_code_moves() {
        let mut model = tiny_model(23);
        let mut rng = Rng::new(24);
        let frame = FrameSample {
            x_sp: random_frame(&mut rng, 8),
            x_mcc: random_frame(&mut rng, 5),
            speaker_id: "alice".into(),
        };
        let bob_before = model.speaker_code("bob").unwrap().to_vec();
        let alice_before = model.speaker_code("alice").unwrap().to_vec();
        let grads = {
            let graph = batch_objective(
                &model,
                std::slice::from_ref(&frame),
                ObjectiveKind::Cdvae,
                &ObjectiveOptions::default(),
                &mut rng,
            )
            .unwrap();
            graph.tape.backward(graph.loss).unwrap()
        };
        adam_step(&mut model.store, &grads, &AdamHyper::with_lr(1e-3)).unwrap();
        assert_eq!(model.speaker_code("bob").unwrap(), bob_before.as_slice());
        assert_ne!(
            model.speaker_code("alice").unwrap(),
            alice_before.as_slice()
        );
    }

    #[test]
    fn overfitting_one_frame_reconstructs_it() {
        // decode(encode-mean) after overfit training recovers the frame.
        let mut model = tiny_model(25);
        let mut rng = Rng::new(26);
        let frame = FrameSample {
            x_sp: random_frame(&mut rng, 8),
            x_mcc: random_frame(&mut rng, 5),
            speaker_id: "alice".into(),
        };
        let hyper = AdamHyper::with_lr(3e-3);
        let opts = ObjectiveOptions::default();
        for _ in 0..3000 {
            let grads = {
                let graph = batch_objective(
                    &model,
                    std::slice::from_ref(&frame),
                    ObjectiveKind::Cdvae,
                    &opts,
                    &mut rng,
                )
                .unwrap();
                graph.tape.backward(graph.loss).unwrap()
            };
            adam_step(&mut model.store, &grads, &hyper).unwrap();
        }
        let post = model.encode(SpectralDomain::Sp, &frame.x_sp).unwrap();
        let code = model.speaker_code("alice").unwrap().to_vec();
        let recon = model.decode(SpectralDomain::Sp, &post.mean, &code).unwrap();
        let mse: f64 = frame
            .x_sp
            .iter()
            .zip(&recon)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / frame.x_sp.len() as f64;
        assert!(mse < 1e-2, "reconstruction MSE {mse}");
    }
}
