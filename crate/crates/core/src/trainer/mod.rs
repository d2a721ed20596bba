//! Training orchestration: pretraining with the multi-resolution loss,
//! adversarial finetuning (MetricGAN or multi-resolution spectrogram
//! discriminators), personalized warm starts, the learning-rate schedule,
//! early stopping and checkpoint management.

use std::collections::HashMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::audio_io::Waveform;
use crate::data::{
    derive_example_seed, simulate_example, EnrollmentEmbedding, MixtureSpec, SimulationConfig,
    SourceKind, SourcePool,
};
use crate::dsp::{stft, Spectrogram};
use crate::error::{Error, Result};
use crate::model::{
    apply_bn_updates, build_forward, Checkpoint, GraphMode, Model, ModelConfig,
};
use crate::nn::optim::{clip_grad_norm, Adam};
use crate::nn::{sc, ParamStore, Scalar, Tape, Var};
use crate::objectives::{
    mgd_discriminator_term, mgd_generator_term, mr_loss, mr_loss_graph, mrsd_discriminator_term,
    mrsd_generator_terms, MetricGanConfig, MgdDiscriminator, MrLossConfig, MrsdConfig,
    MrsdDiscriminators, QualityOracle, SiSnrProxy,
};

const VAL_SEED_SALT: u64 = 0x76616c5f73656564; // "val_seed"

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainPhase {
    PretrainMr,
    FinetuneMgd,
    FinetuneMrsd,
}

impl std::fmt::Display for TrainPhase {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            TrainPhase::PretrainMr => "pretrain_mr",
            TrainPhase::FinetuneMgd => "finetune_mgd",
            TrainPhase::FinetuneMrsd => "finetune_mrsd",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub phase: TrainPhase,
    pub lr0: f64,
    pub lr_decay: f64,
    pub lr_decay_every: u64,
    pub clip_norm: f64,
    pub max_iters: u64,
    pub early_stop_window: u64,
    pub batch_size: usize,
    pub validation_every: u64,
    pub validation_examples: usize,
    pub seed: u64,
    /// Use only the 20 ms resolution for the reconstruction terms inside the
    /// MetricGAN objective instead of all four.
    pub single_resolution_finetune: bool,
}

impl TrainConfig {
    /// Reference schedule: 400k pretraining iterations at lr 1e-3, decayed
    /// by 0.98 every 20k, gradient clip 5, early stop after 20k iterations
    /// without a validation improvement.
    pub fn pretrain_defaults() -> Self {
        TrainConfig {
            phase: TrainPhase::PretrainMr,
            lr0: 1e-3,
            lr_decay: 0.98,
            lr_decay_every: 20_000,
            clip_norm: 5.0,
            max_iters: 400_000,
            early_stop_window: 20_000,
            batch_size: 4,
            validation_every: 1_000,
            validation_examples: 4,
            seed: 0,
            single_resolution_finetune: false,
        }
    }

    /// 100k finetuning iterations; everything else as in pretraining.
    pub fn finetune_defaults(phase: TrainPhase) -> Self {
        TrainConfig {
            phase,
            max_iters: 100_000,
            ..Self::pretrain_defaults()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.lr0 <= 0.0 || self.lr_decay <= 0.0 || self.lr_decay_every == 0 {
            return Err(Error::Config("invalid learning-rate schedule".into()));
        }
        if self.batch_size == 0 || self.validation_every == 0 {
            return Err(Error::Config("batch size and validation cadence must be positive".into()));
        }
        Ok(())
    }
}

/// `lr0 * decay^floor(iter / decay_every)`.
pub fn lr_schedule(cfg: &TrainConfig, iter: u64) -> f64 {
    cfg.lr0 * cfg.lr_decay.powi((iter / cfg.lr_decay_every) as i32)
}

#[derive(Debug, Clone, Serialize)]
pub struct StepStats {
    pub iter: u64,
    pub lr: f64,
    pub loss: f64,
    pub l_p: f64,
    pub l_s: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub l_g: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub l_d: Option<f64>,
    pub grad_norm: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainOutcome {
    pub completed_iters: u64,
    pub stopped_early: bool,
    pub best_val: f64,
    pub best_iter: u64,
}

/// Hook for tests: replaces the validation metric.
pub type ValidationOverride = Box<dyn FnMut(u64) -> f64>;

pub struct Trainer<F: Scalar> {
    pub model: Model<F>,
    pub config: TrainConfig,
    pub sim: SimulationConfig,
    pool: Arc<SourcePool>,
    oracle: Box<dyn QualityOracle>,
    gan_weights: MetricGanConfig,
    opt: Adam<F>,
    mgd: Option<(MgdDiscriminator<F>, Adam<F>)>,
    mrsd: Option<(MrsdDiscriminators<F>, Vec<Adam<F>>)>,
    iter: u64,
    best_val: Option<f64>,
    best_iter: u64,
    out_dir: PathBuf,
    log: Option<std::io::BufWriter<std::fs::File>>,
    embeddings: HashMap<PathBuf, Vec<F>>,
    pub validation_override: Option<ValidationOverride>,
}

impl<F: Scalar> Trainer<F> {
    pub fn new(
        model: Model<F>,
        config: TrainConfig,
        sim: SimulationConfig,
        pool: Arc<SourcePool>,
        out_dir: impl Into<PathBuf>,
    ) -> Result<Self> {
        config.validate()?;
        sim.validate()?;
        let out_dir = out_dir.into();
        std::fs::create_dir_all(&out_dir).map_err(|e| Error::io(&out_dir, e))?;
        let opt = Adam::new(&model.store);
        let mut trainer = Trainer {
            opt,
            model,
            config,
            sim,
            pool,
            oracle: Box::new(SiSnrProxy),
            gan_weights: MetricGanConfig::default(),
            mgd: None,
            mrsd: None,
            iter: 0,
            best_val: None,
            best_iter: 0,
            out_dir,
            log: None,
            embeddings: HashMap::new(),
            validation_override: None,
        };
        trainer.init_discriminators()?;
        trainer.open_log()?;
        Ok(trainer)
    }

    /// Resumes from a checkpoint written by this trainer, restoring model,
    /// optimizer moments, discriminators and bookkeeping bit-exactly.
    pub fn resume(
        path: impl AsRef<Path>,
        config: TrainConfig,
        sim: SimulationConfig,
        pool: Arc<SourcePool>,
        out_dir: impl Into<PathBuf>,
    ) -> Result<Self> {
        let ckpt = Checkpoint::load(path)?;
        let model = crate::model::model_from_checkpoint::<F>(&ckpt)?;
        let mut trainer = Self::new(model, config, sim, pool, out_dir)?;
        trainer.restore_state(&ckpt)?;
        Ok(trainer)
    }

    pub fn set_oracle(&mut self, oracle: Box<dyn QualityOracle>) {
        self.oracle = oracle;
    }

    pub fn completed_iters(&self) -> u64 {
        self.iter
    }

    fn init_discriminators(&mut self) -> Result<()> {
        match self.config.phase {
            TrainPhase::PretrainMr => {}
            TrainPhase::FinetuneMgd => {
                let disc = MgdDiscriminator::init(self.config.seed ^ 0xd15c)?;
                let opt = Adam::new(&disc.store);
                self.mgd = Some((disc, opt));
            }
            TrainPhase::FinetuneMrsd => {
                let cfg = MrsdConfig::for_rate(self.model.config.sample_rate);
                let discs = MrsdDiscriminators::init(cfg, self.config.seed ^ 0xd15c)?;
                let opts = discs.stores.iter().map(Adam::new).collect();
                self.mrsd = Some((discs, opts));
            }
        }
        Ok(())
    }

    fn open_log(&mut self) -> Result<()> {
        let path = self.out_dir.join("train_log.jsonl");
        let file = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| Error::io(&path, e))?;
        self.log = Some(std::io::BufWriter::new(file));
        Ok(())
    }

    fn log_record(&mut self, value: serde_json::Value) {
        if let Some(log) = &mut self.log {
            let _ = writeln!(log, "{value}");
            let _ = log.flush();
        }
    }

    fn mr_config(&self) -> MrLossConfig {
        MrLossConfig::for_rate(self.model.config.sample_rate)
    }

    fn finetune_recon_config(&self) -> MrLossConfig {
        if self.config.single_resolution_finetune {
            MrLossConfig::single_resolution(self.model.config.sample_rate)
        } else {
            self.mr_config()
        }
    }

    fn embedding_for(&mut self, record_path: &Path) -> Result<Vec<F>> {
        if let Some(e) = self.embeddings.get(record_path) {
            return Ok(e.clone());
        }
        let emb = EnrollmentEmbedding::load(record_path)?;
        if emb.dim() != self.model.config.embed_dim {
            return Err(Error::Config(format!(
                "embedding {record_path:?} has dim {}, model expects {}",
                emb.dim(),
                self.model.config.embed_dim
            )));
        }
        let v: Vec<F> = emb.vector.iter().map(|&x| sc::<F>(x as f64)).collect();
        self.embeddings.insert(record_path.into(), v.clone());
        Ok(v)
    }

    fn draw_example(&mut self, iter: u64, slot: usize) -> Result<(MixtureSpec, Option<Vec<F>>)> {
        let index = iter * self.config.batch_size as u64 + slot as u64;
        let seed = derive_example_seed(self.sim.seed ^ self.config.seed, index);
        let personalized = self.model.config.personalized;
        let example = simulate_example(&self.pool, &self.sim, personalized, seed)?;
        if example.mixture.sample_rate != self.model.config.sample_rate {
            return Err(Error::Config(format!(
                "catalog audio is {} Hz, model expects {}",
                example.mixture.sample_rate, self.model.config.sample_rate
            )));
        }
        let embedding = if personalized {
            let record = self
                .pool
                .record(SourceKind::Speech, example.draws.target_index)
                .ok_or_else(|| Error::Simulation("target record missing".into()))?;
            let emb_path = record.embedding_path.clone().ok_or_else(|| {
                Error::Config(format!(
                    "personalized training requires embedding_path on speech record {:?}",
                    record.path
                ))
            })?;
            let resolved = self.pool.catalog.resolve_path(&emb_path);
            Some(self.embedding_for(&resolved)?)
        } else {
            None
        };
        Ok((example, embedding))
    }

    fn to_scalar_vec(w: &Waveform) -> Vec<F> {
        w.samples.iter().map(|&v| sc::<F>(v as f64)).collect()
    }

    /// One optimization iteration (for GAN phases: one discriminator step
    /// then one generator step on the same batch).
    pub fn step(&mut self) -> Result<StepStats> {
        let iter = self.iter;
        let lr = sc::<F>(lr_schedule(&self.config, iter));
        let batch = self.config.batch_size;
        let inv_batch = F::one() / sc::<F>(batch as f64);
        let mr_cfg = self.mr_config();
        let recon_cfg = self.finetune_recon_config();

        // Draw the batch up front; both GAN substeps see the same examples.
        let mut examples = Vec::with_capacity(batch);
        for slot in 0..batch {
            examples.push(self.draw_example(iter, slot)?);
        }

        self.model.store.zero_grads();
        let mut sum_loss = 0.0;
        let mut sum_l_p = 0.0;
        let mut sum_l_s = 0.0;
        let mut sum_l_g: Option<f64> = None;
        let mut sum_l_d: Option<f64> = None;
        let mut bn_updates = Vec::new();

        // Discriminator gradients accumulate across the batch; one update
        // per iteration after the loop.
        if let Some((disc, _)) = &mut self.mgd {
            disc.store.zero_grads();
        }
        if let Some((discs, _)) = &mut self.mrsd {
            for store in discs.stores.iter_mut() {
                store.zero_grads();
            }
        }

        for (example, embedding) in &examples {
            let mix_spec: Spectrogram<F> = stft(&example.mixture, &self.model.config.stft)?;
            let mut tape: Tape<F> = Tape::new();
            let fwd = build_forward(
                &mut tape,
                &self.model,
                &mix_spec,
                embedding.as_deref(),
                GraphMode::Train,
            )?;
            let target_full = Self::to_scalar_vec(&example.target_anechoic);
            let target = &target_full[..fwd.span.min(target_full.len())];
            if target.len() != fwd.span {
                return Err(Error::Training(format!(
                    "target shorter than analysis span: {} < {}",
                    target.len(),
                    fwd.span
                )));
            }

            // Discriminator substep uses the current estimate, detached.
            match self.config.phase {
                TrainPhase::PretrainMr => {}
                TrainPhase::FinetuneMgd => {
                    let est_wave_f32: Vec<f32> = tape
                        .value(fwd.est_wave)
                        .iter()
                        .map(|&v| v.to_f64().unwrap_or(0.0) as f32)
                        .collect();
                    let est_wave = Waveform::new(est_wave_f32, example.mixture.sample_rate);
                    let target_wave = Waveform::new(
                        example.target_anechoic.samples[..fwd.span].to_vec(),
                        example.mixture.sample_rate,
                    );
                    let mix_wave = Waveform::new(
                        example.mixture.samples[..fwd.span].to_vec(),
                        example.mixture.sample_rate,
                    );
                    let q_est = self.oracle.score(&est_wave, &target_wave)?.clamp(0.0, 1.0);
                    let q_noisy = self.oracle.score(&mix_wave, &target_wave)?.clamp(0.0, 1.0);

                    let est_spec = crate::model::forward_to_spectrogram(
                        &tape,
                        &fwd,
                        self.model.config.stft,
                    );
                    let clean_spec: Spectrogram<F> =
                        stft(&target_wave, &self.model.config.stft)?;
                    let noisy_spec: Spectrogram<F> = stft(&mix_wave, &self.model.config.stft)?;

                    let (disc, _) = self.mgd.as_ref().unwrap();
                    let mut d_tape: Tape<F> = Tape::new();
                    let l_d = mgd_discriminator_term(
                        &mut d_tape,
                        disc,
                        &noisy_spec,
                        &clean_spec,
                        &est_spec,
                        sc::<F>(q_est),
                        sc::<F>(q_noisy),
                    )?;
                    let l_d_scaled = d_tape.scale(l_d, inv_batch);
                    let l_d_value = d_tape.value_scalar(l_d).to_f64().unwrap_or(f64::NAN);
                    d_tape.backward(l_d_scaled)?;
                    d_tape.apply_param_grads(&mut self.mgd.as_mut().unwrap().0.store);
                    *sum_l_d.get_or_insert(0.0) += l_d_value / batch as f64;
                }
                TrainPhase::FinetuneMrsd => {
                    let est_vals: Vec<F> = tape.value(fwd.est_wave).to_vec();
                    let (discs, _) = self.mrsd.as_ref().unwrap();
                    let mut d_tape: Tape<F> = Tape::new();
                    let l_d = mrsd_discriminator_term(&mut d_tape, discs, target, &est_vals)?;
                    let l_d_scaled = d_tape.scale(l_d, inv_batch);
                    let l_d_value = d_tape.value_scalar(l_d).to_f64().unwrap_or(f64::NAN);
                    d_tape.backward(l_d_scaled)?;
                    for store in self.mrsd.as_mut().unwrap().0.stores.iter_mut() {
                        d_tape.apply_param_grads(store);
                    }
                    *sum_l_d.get_or_insert(0.0) += l_d_value / batch as f64;
                }
            }

            // Generator loss on the forward tape.
            let loss: Var = match self.config.phase {
                TrainPhase::PretrainMr => {
                    let (l_p, l_s) = mr_loss_graph(&mut tape, fwd.est_wave, target, &mr_cfg)?;
                    sum_l_p += tape.value_scalar(l_p).to_f64().unwrap_or(f64::NAN) / batch as f64;
                    sum_l_s += tape.value_scalar(l_s).to_f64().unwrap_or(f64::NAN) / batch as f64;
                    tape.add(l_p, l_s)?
                }
                TrainPhase::FinetuneMgd => {
                    let (l_p, l_s) = mr_loss_graph(&mut tape, fwd.est_wave, target, &recon_cfg)?;
                    let clean_spec: Spectrogram<F> = {
                        let target_wave = Waveform::new(
                            example.target_anechoic.samples[..fwd.span].to_vec(),
                            example.mixture.sample_rate,
                        );
                        stft(&target_wave, &self.model.config.stft)?
                    };
                    let (disc, _) = self.mgd.as_ref().unwrap();
                    let l_g =
                        mgd_generator_term(&mut tape, disc, fwd.shat_re, fwd.shat_im, &clean_spec)?;
                    sum_l_p += tape.value_scalar(l_p).to_f64().unwrap_or(f64::NAN) / batch as f64;
                    sum_l_s += tape.value_scalar(l_s).to_f64().unwrap_or(f64::NAN) / batch as f64;
                    *sum_l_g.get_or_insert(0.0) +=
                        tape.value_scalar(l_g).to_f64().unwrap_or(f64::NAN) / batch as f64;
                    let w = &self.gan_weights;
                    let a = tape.scale(l_p, sc::<F>(w.lambda1));
                    let b = tape.scale(l_s, sc::<F>(w.lambda2));
                    let c = tape.scale(l_g, sc::<F>(w.lambda3));
                    let ab = tape.add(a, b)?;
                    tape.add(ab, c)?
                }
                TrainPhase::FinetuneMrsd => {
                    let (l_p, l_s) = mr_loss_graph(&mut tape, fwd.est_wave, target, &mr_cfg)?;
                    let (discs, _) = self.mrsd.as_ref().unwrap();
                    let terms = mrsd_generator_terms(
                        &mut tape,
                        discs,
                        fwd.est_wave,
                        target,
                        &self.model.config.stft,
                    )?;
                    sum_l_p += tape.value_scalar(l_p).to_f64().unwrap_or(f64::NAN) / batch as f64;
                    sum_l_s += tape.value_scalar(l_s).to_f64().unwrap_or(f64::NAN) / batch as f64;
                    *sum_l_g.get_or_insert(0.0) += tape
                        .value_scalar(terms.adversarial)
                        .to_f64()
                        .unwrap_or(f64::NAN)
                        / batch as f64;
                    let l_mr = tape.add(l_p, l_s)?;
                    let partial = tape.add(terms.adversarial, l_mr)?;
                    tape.add(partial, terms.l_mmel)?
                }
            };

            let loss_value = tape.value_scalar(loss).to_f64().unwrap_or(f64::NAN);
            sum_loss += loss_value / batch as f64;
            if !loss_value.is_finite() {
                let path = self.out_dir.join("diagnostic.bsrnn");
                let _ = self.save_checkpoint(&path);
                return Err(Error::Training(format!(
                    "non-finite loss at iteration {iter}; diagnostic checkpoint at {path:?}"
                )));
            }

            let scaled = tape.scale(loss, inv_batch);
            tape.backward(scaled)?;
            tape.apply_param_grads(&mut self.model.store);
            bn_updates.extend(fwd.bn_updates);
        }

        // Discriminator updates first (1 D-step per G-step), then generator.
        match self.config.phase {
            TrainPhase::PretrainMr => {}
            TrainPhase::FinetuneMgd => {
                let (disc, opt) = self.mgd.as_mut().unwrap();
                clip_grad_norm(&mut disc.store, sc::<F>(self.config.clip_norm));
                opt.step(&mut disc.store, lr)?;
            }
            TrainPhase::FinetuneMrsd => {
                let (discs, opts) = self.mrsd.as_mut().unwrap();
                for (store, opt) in discs.stores.iter_mut().zip(opts.iter_mut()) {
                    clip_grad_norm(store, sc::<F>(self.config.clip_norm));
                    opt.step(store, lr)?;
                }
            }
        }

        let grad_norm = clip_grad_norm(&mut self.model.store, sc::<F>(self.config.clip_norm));
        self.opt.step(&mut self.model.store, lr)?;
        apply_bn_updates(&mut self.model, &bn_updates);

        self.iter += 1;
        let stats = StepStats {
            iter: self.iter,
            lr: lr.to_f64().unwrap_or(0.0),
            loss: sum_loss,
            l_p: sum_l_p,
            l_s: sum_l_s,
            l_g: sum_l_g,
            l_d: sum_l_d,
            grad_norm: grad_norm.to_f64().unwrap_or(0.0),
        };
        Ok(stats)
    }

    /// Mean multi-resolution loss over a fixed seeded validation set,
    /// evaluated with the inference path.
    pub fn validate(&mut self) -> Result<f64> {
        if let Some(hook) = &mut self.validation_override {
            return Ok(hook(self.iter));
        }
        let mr_cfg = self.mr_config();
        let count = self.config.validation_examples.max(1);
        let mut total = 0.0;
        for i in 0..count {
            let seed = derive_example_seed(
                self.sim.seed ^ self.config.seed ^ VAL_SEED_SALT,
                i as u64,
            );
            let example = simulate_example(
                &self.pool,
                &self.sim,
                self.model.config.personalized,
                seed,
            )?;
            let embedding = if self.model.config.personalized {
                let record = self
                    .pool
                    .record(SourceKind::Speech, example.draws.target_index)
                    .unwrap();
                let emb_path = record.embedding_path.clone().ok_or_else(|| {
                    Error::Config("personalized validation requires embeddings".into())
                })?;
                let resolved = self.pool.catalog.resolve_path(&emb_path);
                Some(self.embedding_for(&resolved)?)
            } else {
                None
            };
            let enhanced =
                crate::model::enhance(&self.model, &example.mixture, embedding.as_deref())?;
            let est: Vec<F> = Self::to_scalar_vec(&enhanced);
            let tgt: Vec<F> = Self::to_scalar_vec(&example.target_anechoic);
            total += mr_loss(&tgt, &est, &mr_cfg)?;
        }
        Ok(total / count as f64)
    }

    /// Runs the configured phase: step, periodic validation/checkpointing,
    /// early stopping.
    pub fn run(&mut self) -> Result<TrainOutcome> {
        let mut stopped_early = false;
        while self.iter < self.config.max_iters {
            if let Some(_best) = self.best_val {
                if self.iter - self.best_iter >= self.config.early_stop_window {
                    stopped_early = true;
                    break;
                }
            }
            let stats = self.step()?;
            let mut record = serde_json::to_value(&stats)?;
            record["phase"] = json!(self.config.phase.to_string());

            if self.iter % self.config.validation_every == 0 {
                let val = self.validate()?;
                record["val"] = json!(val);
                let improved = self.best_val.map_or(true, |b| val < b);
                if improved {
                    self.best_val = Some(val);
                    self.best_iter = self.iter;
                    self.save_checkpoint(&self.out_dir.join("best.bsrnn"))?;
                }
                self.save_checkpoint(
                    &self.out_dir.join(format!("ckpt_{:08}.bsrnn", self.iter)),
                )?;
            }
            self.log_record(record);
        }
        self.save_checkpoint(&self.out_dir.join(format!("ckpt_{:08}.bsrnn", self.iter)))?;
        Ok(TrainOutcome {
            completed_iters: self.iter,
            stopped_early,
            best_val: self.best_val.unwrap_or(f64::NAN),
            best_iter: self.best_iter,
        })
    }

    /// Serializes model, optimizer moments, discriminators and bookkeeping.
    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        let meta = json!({
            "iter": self.iter,
            "phase": self.config.phase.to_string(),
            "best_val": self.best_val,
            "best_iter": self.best_iter,
            "adam_step": self.opt.step,
        });
        let mut ckpt = Checkpoint::from_model(&self.model, meta);
        push_adam_tensors(&mut ckpt, "optim", &self.model.store, &self.opt);
        if let Some((disc, opt)) = &self.mgd {
            push_store_tensors(&mut ckpt, "disc.mgd", &disc.store);
            push_adam_tensors(&mut ckpt, "optim.disc.mgd", &disc.store, opt);
            ckpt.meta["mgd_adam_step"] = json!(opt.step);
        }
        if let Some((discs, opts)) = &self.mrsd {
            let mut steps = Vec::new();
            for (k, (store, opt)) in discs.stores.iter().zip(opts).enumerate() {
                push_store_tensors(&mut ckpt, &format!("disc.mrsd.{k}"), store);
                push_adam_tensors(&mut ckpt, &format!("optim.disc.mrsd.{k}"), store, opt);
                steps.push(opt.step);
            }
            ckpt.meta["mrsd_adam_steps"] = json!(steps);
        }
        ckpt.save(path)
    }

    fn restore_state(&mut self, ckpt: &Checkpoint) -> Result<()> {
        let meta = &ckpt.meta;
        self.iter = meta["iter"].as_u64().unwrap_or(0);
        self.best_val = meta["best_val"].as_f64();
        self.best_iter = meta["best_iter"].as_u64().unwrap_or(0);
        self.opt.step = meta["adam_step"].as_u64().unwrap_or(0);
        restore_adam_tensors(ckpt, "optim", &self.model.store, &mut self.opt)?;
        if let Some((disc, opt)) = &mut self.mgd {
            if ckpt.tensor("disc.mgd.head.w").is_some() {
                restore_store_tensors(ckpt, "disc.mgd", &mut disc.store)?;
                restore_adam_tensors(ckpt, "optim.disc.mgd", &disc.store, opt)?;
                opt.step = meta["mgd_adam_step"].as_u64().unwrap_or(0);
            }
        }
        if let Some((discs, opts)) = &mut self.mrsd {
            if ckpt.tensor("disc.mrsd.0.head.w").is_some() {
                for (k, (store, opt)) in discs.stores.iter_mut().zip(opts.iter_mut()).enumerate() {
                    restore_store_tensors(ckpt, &format!("disc.mrsd.{k}"), store)?;
                    restore_adam_tensors(ckpt, &format!("optim.disc.mrsd.{k}"), store, opt)?;
                    opt.step = meta["mrsd_adam_steps"][k].as_u64().unwrap_or(0);
                }
            }
        }
        Ok(())
    }
}

fn push_store_tensors<F: Scalar>(ckpt: &mut Checkpoint, prefix: &str, store: &ParamStore<F>) {
    for (_, t) in store.iter() {
        ckpt.push_tensor(
            format!("{prefix}.{}", t.name),
            t.shape.clone(),
            t.data.iter().map(|v| v.to_f64().unwrap_or(0.0) as f32).collect(),
        );
    }
}

fn restore_store_tensors<F: Scalar>(
    ckpt: &Checkpoint,
    prefix: &str,
    store: &mut ParamStore<F>,
) -> Result<()> {
    let ids: Vec<_> = store.iter().map(|(id, t)| (id, t.name.clone())).collect();
    for (id, name) in ids {
        let full = format!("{prefix}.{name}");
        let (shape, data) = ckpt
            .tensor(&full)
            .ok_or_else(|| Error::Checkpoint(format!("missing tensor {full}")))?;
        let t = store.get_mut(id);
        if shape != t.shape.as_slice() {
            return Err(Error::Checkpoint(format!("shape mismatch for {full}")));
        }
        t.data = data.iter().map(|&v| sc::<F>(v as f64)).collect();
    }
    Ok(())
}

fn push_adam_tensors<F: Scalar>(
    ckpt: &mut Checkpoint,
    prefix: &str,
    store: &ParamStore<F>,
    adam: &Adam<F>,
) {
    for (idx, (_, t)) in store.iter().enumerate() {
        let (m, v) = adam.moments(idx);
        ckpt.push_tensor(
            format!("{prefix}.m.{}", t.name),
            t.shape.clone(),
            m.iter().map(|x| x.to_f64().unwrap_or(0.0) as f32).collect(),
        );
        ckpt.push_tensor(
            format!("{prefix}.v.{}", t.name),
            t.shape.clone(),
            v.iter().map(|x| x.to_f64().unwrap_or(0.0) as f32).collect(),
        );
    }
}

fn restore_adam_tensors<F: Scalar>(
    ckpt: &Checkpoint,
    prefix: &str,
    store: &ParamStore<F>,
    adam: &mut Adam<F>,
) -> Result<()> {
    for (idx, (_, t)) in store.iter().enumerate() {
        let name_m = format!("{prefix}.m.{}", t.name);
        let name_v = format!("{prefix}.v.{}", t.name);
        let (_, m_data) = ckpt
            .tensor(&name_m)
            .ok_or_else(|| Error::Checkpoint(format!("missing tensor {name_m}")))?;
        let (_, v_data) = ckpt
            .tensor(&name_v)
            .ok_or_else(|| Error::Checkpoint(format!("missing tensor {name_v}")))?;
        let (m, v) = adam.moments_mut(idx);
        *m = m_data.iter().map(|&x| sc::<F>(x as f64)).collect();
        *v = v_data.iter().map(|&x| sc::<F>(x as f64)).collect();
    }
    Ok(())
}

/// Builds a personalized model from a non-personalized checkpoint: every
/// base tensor is copied, and the enrollment projection starts as the
/// identity gating, so the first personalized forward equals the base model.
pub fn warm_start_pse<F: Scalar>(base: &Checkpoint, pse_config: ModelConfig) -> Result<Model<F>> {
    if !pse_config.personalized {
        return Err(Error::Config("warm start target must be personalized".into()));
    }
    if base.config.personalized {
        return Err(Error::Checkpoint(
            "base checkpoint is already personalized".into(),
        ));
    }
    let mut base_as_pse = base.config.clone();
    base_as_pse.personalized = true;
    base_as_pse.embed_dim = pse_config.embed_dim;
    if base_as_pse != pse_config {
        return Err(Error::Checkpoint(
            "personalized config differs from the base beyond the enrollment module".into(),
        ));
    }

    let mut model = Model::<F>::init(pse_config, 0)?;
    let mut consumed = vec![false; base.tensors.len()];
    let ids: Vec<_> = model.store.iter().map(|(id, t)| (id, t.name.clone())).collect();
    for (id, name) in ids {
        if name.starts_with("enroll.") {
            continue; // identity init from Model::init
        }
        let pos = base
            .tensors
            .iter()
            .position(|(n, _, _)| *n == name)
            .ok_or_else(|| Error::Checkpoint(format!("base checkpoint missing {name}")))?;
        if consumed[pos] {
            return Err(Error::Checkpoint(format!("tensor {name} consumed twice")));
        }
        consumed[pos] = true;
        let (_, shape, data) = &base.tensors[pos];
        let t = model.store.get_mut(id);
        if *shape != t.shape {
            return Err(Error::Checkpoint(format!("shape mismatch for {name}")));
        }
        t.data = data.iter().map(|&v| sc::<F>(v as f64)).collect();
    }
    if let Some(missed) = consumed.iter().position(|&c| !c) {
        return Err(Error::Checkpoint(format!(
            "base tensor {} not consumed by the warm start",
            base.tensors[missed].0
        )));
    }
    Ok(model)
}
