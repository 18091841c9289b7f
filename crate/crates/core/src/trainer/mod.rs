//! CycleGAN training: two generators, two discriminators, alternating updates,
//! generator averaging and checkpointing.

pub mod checkpoint;
mod ema;
mod schedule;

pub use checkpoint::{Archive, CheckpointKind, CheckpointMeta};
pub use ema::{ema_update, Ema};
pub use schedule::{lr_at, lr_factor, Scheduler};

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use candle_core::{DType, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::ExperimentConfig;
use crate::data::{seeded_rng, Dataset, Domain};
use crate::discriminator::{CacheBank, CacheSlot, Discriminator, HeadKind};
use crate::error::{Error, Result};
use crate::generator::Generator;
use crate::losses::{
    consistency_loss, cycle_loss, disc_loss_from_scores, gan_loss, gradient_penalty, identity_loss, interpolate,
    legacy_penalty, total_generator_loss, GeneratorLossParts, GpForm,
};
use crate::metrics::MetricsWriter;
use crate::nn::ops::scalar;
use crate::optim::{Adam, AdamConfig};
use checkpoint::{load_store, store_tensors, write_archive, RngState};

const INIT_STREAM: u64 = 0x1417;
const STEP_STREAM: u64 = 0x57e9;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub total_iters: u64,
    pub batch_size: usize,
    pub lr_gen: f64,
    pub lr_disc: f64,
    pub scheduler: Scheduler,
    /// Generator averaging momentum; 0 makes the averaged copies track the live weights.
    pub ema_momentum: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub seed: u64,
    /// Metrics are averaged over windows of this many iterations.
    pub log_every: u64,
    /// Intermediate checkpoint period in iterations (0 = only at the end).
    pub checkpoint_every: u64,
    /// Pretrained generator checkpoint used to initialize both generators.
    pub pretrained: Option<PathBuf>,
}

impl TrainConfig {
    pub fn full() -> Self {
        Self {
            total_iters: 1_000_000,
            batch_size: 1,
            lr_gen: 1e-4,
            lr_disc: 1e-4,
            scheduler: Scheduler::Constant,
            ema_momentum: 0.9999,
            beta1: 0.5,
            beta2: 0.99,
            seed: 0,
            log_every: 100,
            checkpoint_every: 50_000,
            pretrained: None,
        }
    }

    pub fn toy() -> Self {
        Self {
            total_iters: 2000,
            lr_gen: 5e-4,
            lr_disc: 5e-4,
            ema_momentum: 0.99,
            log_every: 10,
            checkpoint_every: 0,
            ..Self::full()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.total_iters == 0 || self.batch_size == 0 || self.log_every == 0 {
            return Err(Error::Config("total_iters, batch_size and log_every must be positive".into()));
        }
        if !(self.lr_gen > 0.0 && self.lr_disc > 0.0 && self.lr_gen.is_finite() && self.lr_disc.is_finite()) {
            return Err(Error::Config(format!(
                "learning rates must be positive, got {} / {}",
                self.lr_gen, self.lr_disc
            )));
        }
        if !(0.0..1.0).contains(&self.ema_momentum) {
            return Err(Error::Config(format!("ema momentum must be in [0, 1), got {}", self.ema_momentum)));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("adam betas must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Ablation {
    /// Style modulation disabled: every style vector is one.
    NoStyleMod,
    /// No batch head: scores come from the conv body and one plain conv.
    NoBatchHead,
    /// Older training setup: linear scheduler, legacy gradient penalty, no averaging.
    LegacyTraining,
}

impl Ablation {
    pub const ALL: [Ablation; 3] = [Ablation::NoStyleMod, Ablation::NoBatchHead, Ablation::LegacyTraining];
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Ablation::NoStyleMod => "no_style_mod",
            Ablation::NoBatchHead => "no_batch_head",
            Ablation::LegacyTraining => "legacy_training",
        })
    }
}

impl FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "no_style_mod" => Ok(Ablation::NoStyleMod),
            "no_batch_head" => Ok(Ablation::NoBatchHead),
            "legacy_training" => Ok(Ablation::LegacyTraining),
            _ => Err(Error::Config(format!(
                "unknown ablation {s:?} (no_style_mod, no_batch_head, legacy_training)"
            ))),
        }
    }
}

/// Gradient penalty weight and target norm of the older training setup.
pub const LEGACY_GP_LAMBDA: f64 = 0.1;
pub const LEGACY_GP_GAMMA: f64 = 100.0;

/// Returns `cfg` with one ablation applied.
pub fn ablation_variant(cfg: &ExperimentConfig, toggle: Ablation) -> ExperimentConfig {
    let mut out = cfg.clone();
    match toggle {
        Ablation::NoStyleMod => out.generator.style_modulation = false,
        Ablation::NoBatchHead => out.discriminator.head = HeadKind::None,
        Ablation::LegacyTraining => {
            out.train.scheduler = Scheduler::Linear;
            out.loss.gp_form = GpForm::Legacy;
            out.loss.lambda_gp = LEGACY_GP_LAMBDA;
            out.loss.legacy_gp_gamma = LEGACY_GP_GAMMA;
            out.train.ema_momentum = 0.0;
        }
    }
    out
}

/// Scalar losses of one iteration.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StepMetrics {
    pub loss_disc_a: f64,
    pub loss_disc_b: f64,
    pub loss_gp_a: f64,
    pub loss_gp_b: f64,
    pub loss_gan_ab: f64,
    pub loss_gan_ba: f64,
    pub loss_cyc_a: f64,
    pub loss_cyc_b: f64,
    pub loss_idt_a: f64,
    pub loss_idt_b: f64,
    pub loss_consist_a: f64,
    pub loss_consist_b: f64,
    pub loss_gen: f64,
    pub loss_disc: f64,
    pub lr_gen: f64,
    pub lr_disc: f64,
}

impl StepMetrics {
    pub fn fields(&self) -> Vec<(&'static str, f64)> {
        vec![
            ("loss_disc_a", self.loss_disc_a),
            ("loss_disc_b", self.loss_disc_b),
            ("loss_gp_a", self.loss_gp_a),
            ("loss_gp_b", self.loss_gp_b),
            ("loss_gan_ab", self.loss_gan_ab),
            ("loss_gan_ba", self.loss_gan_ba),
            ("loss_cyc_a", self.loss_cyc_a),
            ("loss_cyc_b", self.loss_cyc_b),
            ("loss_idt_a", self.loss_idt_a),
            ("loss_idt_b", self.loss_idt_b),
            ("loss_consist_a", self.loss_consist_a),
            ("loss_consist_b", self.loss_consist_b),
            ("loss_gen", self.loss_gen),
            ("loss_disc", self.loss_disc),
            ("lr_gen", self.lr_gen),
            ("lr_disc", self.lr_disc),
        ]
    }

    /// Cycle loss averaged over both directions.
    pub fn cycle(&self) -> f64 {
        0.5 * (self.loss_cyc_a + self.loss_cyc_b)
    }
}

/// Running mean of [`StepMetrics`] over a logging window.
#[derive(Debug, Default)]
struct Window {
    sums: Vec<f64>,
    count: usize,
}

impl Window {
    fn add(&mut self, m: &StepMetrics) {
        let vals: Vec<f64> = m.fields().into_iter().map(|(_, v)| v).collect();
        if self.sums.is_empty() {
            self.sums = vec![0.0; vals.len()];
        }
        for (s, v) in self.sums.iter_mut().zip(vals) {
            *s += v;
        }
        self.count += 1;
    }

    fn take(&mut self) -> Vec<(&'static str, f64)> {
        let n = self.count.max(1) as f64;
        let names = StepMetrics::default().fields();
        let out = names.into_iter().zip(&self.sums).map(|((k, _), s)| (k, s / n)).collect();
        self.sums.clear();
        self.count = 0;
        out
    }
}

fn prefixed(prefix: &str, g: &crate::params::ParamStore) -> Vec<(String, candle_core::Var)> {
    g.params()
        .iter()
        .map(|(k, v)| (format!("{prefix}{k}"), v.clone()))
        .collect()
}

fn deep_copy(g: &Generator) -> Result<Generator> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    Generator::from_store(g.config(), g.store().deep_clone()?, &mut rng)
}

fn check_finite(what: &str, iteration: u64, terms: &[(&str, f64)]) -> Result<()> {
    if terms.iter().all(|(_, v)| v.is_finite()) {
        return Ok(());
    }
    let detail = terms
        .iter()
        .map(|(k, v)| format!("{k}={v}"))
        .collect::<Vec<_>>()
        .join(" ");
    Err(Error::NonFinite {
        what: what.to_string(),
        iteration,
        detail,
    })
}

/// Complete training state.
pub struct Trainer {
    cfg: ExperimentConfig,
    pub gen_ab: Generator,
    pub gen_ba: Generator,
    pub ema_gen_ab: Generator,
    pub ema_gen_ba: Generator,
    ema_ab: Ema,
    ema_ba: Ema,
    pub disc_a: Discriminator,
    pub disc_b: Discriminator,
    opt_g: Adam,
    opt_d: Adam,
    bank: CacheBank,
    iteration: u64,
    rng: ChaCha8Rng,
}

impl Trainer {
    /// Fresh state from `cfg`; loads `train.pretrained` if set.
    pub fn new(cfg: &ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        let t = &cfg.train;
        let mut init = seeded_rng(&[t.seed, INIT_STREAM, 0, 0]);
        let gen_ab = Generator::new(&cfg.generator, DType::F32, &mut init)?;
        let gen_ba = Generator::new(&cfg.generator, DType::F32, &mut init)?;
        let disc_a = Discriminator::new(&cfg.discriminator, DType::F32, &mut init)?;
        let disc_b = Discriminator::new(&cfg.discriminator, DType::F32, &mut init)?;
        if let Some(path) = &t.pretrained {
            load_pretrained(path, cfg, &[&gen_ab, &gen_ba])?;
        }
        let adam = AdamConfig::adam(t.beta1, t.beta2);
        let mut gvars = prefixed("gen_ab.", gen_ab.store());
        gvars.extend(prefixed("gen_ba.", gen_ba.store()));
        let mut dvars = prefixed("disc_a.", disc_a.store());
        dvars.extend(prefixed("disc_b.", disc_b.store()));
        Ok(Self {
            cfg: cfg.clone(),
            ema_gen_ab: deep_copy(&gen_ab)?,
            ema_gen_ba: deep_copy(&gen_ba)?,
            ema_ab: Ema::new(gen_ab.store(), t.ema_momentum)?,
            ema_ba: Ema::new(gen_ba.store(), t.ema_momentum)?,
            gen_ab,
            gen_ba,
            disc_a,
            disc_b,
            opt_g: Adam::new(gvars, adam)?,
            opt_d: Adam::new(dvars, adam)?,
            bank: CacheBank::new(cfg.discriminator.cache_capacity),
            iteration: 0,
            rng: seeded_rng(&[t.seed, STEP_STREAM, 0, 0]),
        })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.cfg
    }

    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    pub fn bank(&self) -> &CacheBank {
        &self.bank
    }

    pub fn learning_rates(&self) -> (f64, f64) {
        let t = &self.cfg.train;
        lr_at(t.scheduler, self.iteration, t.total_iters, t.lr_gen, t.lr_disc)
    }

    /// Discriminator loss and gradient penalty for one domain.
    fn disc_side(
        &mut self,
        domain: Domain,
        real: &Tensor,
        fake: &Tensor,
    ) -> Result<(Tensor, Tensor, Tensor, Tensor)> {
        let (d, real_slot, fake_slot) = match domain {
            Domain::A => (&self.disc_a, CacheSlot::RealA, CacheSlot::FakeA),
            Domain::B => (&self.disc_b, CacheSlot::RealB, CacheSlot::FakeB),
        };
        let fr = d.features(real)?;
        let ff = d.features(fake)?;
        let sr = d.score_features(&fr, self.bank.get(real_slot))?;
        let sf = d.score_features(&ff, self.bank.get(fake_slot))?;
        let loss = disc_loss_from_scores(&sr, &sf)?;
        let w = &self.cfg.loss;
        let gp = if w.lambda_gp == 0.0 {
            loss.zeros_like()?
        } else {
            match w.gp_form {
                GpForm::R1 => gradient_penalty(d, real, &self.bank, real_slot, w.lambda_gp)?,
                GpForm::Legacy => {
                    let alpha: Vec<f64> = (0..real.dim(0)?).map(|_| self.rng.random::<f64>()).collect();
                    let x = interpolate(real, fake, &alpha)?;
                    let cache = self.bank.get(real_slot);
                    legacy_penalty(&|x| Ok(d.score(x, cache)?.0), &x, w.lambda_gp, w.legacy_gp_gamma)?
                }
            }
        };
        Ok((loss, gp, fr.detach(), ff.detach()))
    }

    /// Updates both discriminators on detached fakes, then pushes the batch
    /// features into the caches.
    pub fn discriminator_step(&mut self, a: &Tensor, b: &Tensor, m: &mut StepMetrics) -> Result<()> {
        let fake_b = self.gen_ab.forward(a)?;
        let fake_a = self.gen_ba.forward(b)?;
        self.discriminator_update(a, b, &fake_a, &fake_b, m)
    }

    fn discriminator_update(
        &mut self,
        a: &Tensor,
        b: &Tensor,
        fake_a: &Tensor,
        fake_b: &Tensor,
        m: &mut StepMetrics,
    ) -> Result<()> {
        let (_, lr_d) = self.learning_rates();
        self.disc_a.power_iterate()?;
        self.disc_b.power_iterate()?;
        let fake_b = fake_b.detach();
        let fake_a = fake_a.detach();
        let (la, gpa, fra, ffa) = self.disc_side(Domain::A, a, &fake_a)?;
        let (lb, gpb, frb, ffb) = self.disc_side(Domain::B, b, &fake_b)?;
        let total = (((&la + &lb)? + &gpa)? + &gpb)?;
        m.loss_disc_a = scalar(&la)?;
        m.loss_disc_b = scalar(&lb)?;
        m.loss_gp_a = scalar(&gpa)?;
        m.loss_gp_b = scalar(&gpb)?;
        m.loss_disc = scalar(&total)?;
        m.lr_disc = lr_d;
        check_finite(
            "discriminator loss",
            self.iteration,
            &[
                ("loss_disc_a", m.loss_disc_a),
                ("loss_disc_b", m.loss_disc_b),
                ("loss_gp_a", m.loss_gp_a),
                ("loss_gp_b", m.loss_gp_b),
            ],
        )?;
        let grads = total.backward()?;
        self.opt_d.step(&grads, lr_d)?;
        if self.cfg.discriminator.head != HeadKind::None {
            self.bank.real_a.push_batch(&fra)?;
            self.bank.fake_a.push_batch(&ffa)?;
            self.bank.real_b.push_batch(&frb)?;
            self.bank.fake_b.push_batch(&ffb)?;
        }
        Ok(())
    }

    /// Updates both generators with the adversarial, cycle and optional
    /// identity/consistency terms.
    pub fn generator_step(&mut self, a: &Tensor, b: &Tensor, m: &mut StepMetrics) -> Result<()> {
        let fake_b = self.gen_ab.forward(a)?;
        let fake_a = self.gen_ba.forward(b)?;
        self.generator_update(a, b, &fake_a, &fake_b, m)
    }

    /// `fake_a` and `fake_b` must still carry the generator graph.
    fn generator_update(
        &mut self,
        a: &Tensor,
        b: &Tensor,
        fake_a: &Tensor,
        fake_b: &Tensor,
        m: &mut StepMetrics,
    ) -> Result<()> {
        let (lr_g, _) = self.learning_rates();
        let w = self.cfg.loss;
        let rec_a = self.gen_ba.forward(fake_b)?;
        let rec_b = self.gen_ab.forward(fake_a)?;
        let score_b = self.disc_b.score(fake_b, self.bank.get(CacheSlot::FakeB))?.0;
        let score_a = self.disc_a.score(fake_a, self.bank.get(CacheSlot::FakeA))?.0;
        let (idt_a, idt_b) = if w.lambda_idt > 0.0 {
            (
                Some(identity_loss(b, &self.gen_ab.forward(b)?)?),
                Some(identity_loss(a, &self.gen_ba.forward(a)?)?),
            )
        } else {
            (None, None)
        };
        let (consist_a, consist_b) = if w.lambda_consist > 0.0 {
            (
                Some(consistency_loss(a, fake_b, w.consist_size)?),
                Some(consistency_loss(b, fake_a, w.consist_size)?),
            )
        } else {
            (None, None)
        };
        let parts = GeneratorLossParts {
            gan_a: gan_loss(&score_b, 1.0)?,
            gan_b: gan_loss(&score_a, 1.0)?,
            cyc_a: cycle_loss(a, &rec_a)?,
            cyc_b: cycle_loss(b, &rec_b)?,
            idt_a,
            idt_b,
            consist_a,
            consist_b,
        };
        let total = total_generator_loss(&parts, &w)?;
        let opt = |t: &Option<Tensor>| t.as_ref().map(scalar).transpose().map(|v| v.unwrap_or(0.0));
        m.loss_gan_ab = scalar(&parts.gan_a)?;
        m.loss_gan_ba = scalar(&parts.gan_b)?;
        m.loss_cyc_a = scalar(&parts.cyc_a)?;
        m.loss_cyc_b = scalar(&parts.cyc_b)?;
        m.loss_idt_a = opt(&parts.idt_a)?;
        m.loss_idt_b = opt(&parts.idt_b)?;
        m.loss_consist_a = opt(&parts.consist_a)?;
        m.loss_consist_b = opt(&parts.consist_b)?;
        m.loss_gen = scalar(&total)?;
        m.lr_gen = lr_g;
        check_finite(
            "generator loss",
            self.iteration,
            &[
                ("loss_gan_ab", m.loss_gan_ab),
                ("loss_gan_ba", m.loss_gan_ba),
                ("loss_cyc_a", m.loss_cyc_a),
                ("loss_cyc_b", m.loss_cyc_b),
                ("loss_gen", m.loss_gen),
            ],
        )?;
        let grads = total.backward()?;
        self.opt_g.step(&grads, lr_g)?;
        Ok(())
    }

    /// One full iteration: discriminator step, generator step, averaging.
    /// The generators do not change during the discriminator step, so one
    /// forward pass serves both steps.
    pub fn train_step(&mut self, a: &Tensor, b: &Tensor) -> Result<StepMetrics> {
        let mut m = StepMetrics::default();
        let fake_b = self.gen_ab.forward(a)?;
        let fake_a = self.gen_ba.forward(b)?;
        self.discriminator_update(a, b, &fake_a, &fake_b, &mut m)?;
        self.generator_update(a, b, &fake_a, &fake_b, &mut m)?;
        self.ema_ab.update(self.gen_ab.store(), self.ema_gen_ab.store())?;
        self.ema_ba.update(self.gen_ba.store(), self.ema_gen_ba.store())?;
        self.iteration += 1;
        Ok(m)
    }

    /// Trains until `train.total_iters`, appending window means to
    /// `out_dir/metrics.jsonl` and writing `out_dir/checkpoint.safetensors`.
    /// `on_log` sees every logged window.
    pub fn run(&mut self, ds: &Dataset, out_dir: &Path, mut on_log: impl FnMut(u64, &[(&str, f64)])) -> Result<()> {
        let t = self.cfg.train.clone();
        let mut writer = MetricsWriter::append(&out_dir.join("metrics.jsonl"))?;
        let mut window = Window::default();
        while self.iteration < t.total_iters {
            let a = ds.train_batch(Domain::A, self.iteration, t.batch_size, t.seed)?;
            let b = ds.train_batch(Domain::B, self.iteration, t.batch_size, t.seed)?;
            let m = match self.train_step(&a, &b) {
                Ok(m) => m,
                Err(e @ Error::NonFinite { .. }) => {
                    let snap = out_dir.join("nonfinite.safetensors");
                    self.save(&snap)?;
                    log::error!("diagnostic snapshot written to {}", snap.display());
                    return Err(e);
                }
                Err(e) => return Err(e),
            };
            window.add(&m);
            let it = self.iteration;
            if it.is_multiple_of(t.log_every) || it == t.total_iters {
                let fields = window.take();
                writer.write(it, &fields)?;
                on_log(it, &fields);
            }
            if t.checkpoint_every > 0 && it.is_multiple_of(t.checkpoint_every) && it < t.total_iters {
                self.save(&out_dir.join("checkpoint.safetensors"))?;
            }
        }
        self.save(&out_dir.join("checkpoint.safetensors"))
    }

    fn meta(&self) -> CheckpointMeta {
        CheckpointMeta {
            kind: CheckpointKind::Train,
            config: self.cfg.to_text(),
            config_hash: self.cfg.config_hash(),
            model_hash: self.cfg.model_hash(),
            generator_hash: self.cfg.generator_hash(),
            iteration: self.iteration,
            rng: Some(RngState {
                seed: self.rng.get_seed().iter().map(|b| format!("{b:02x}")).collect(),
                stream: self.rng.get_stream(),
                word_pos: self.rng.get_word_pos().to_string(),
            }),
            opt_g_steps: self.opt_g.steps(),
            opt_d_steps: self.opt_d.steps(),
            caches_serialized: false,
        }
    }

    fn tensors(&self) -> BTreeMap<String, Tensor> {
        let mut out = BTreeMap::new();
        store_tensors("gen_ab.", self.gen_ab.store(), &mut out);
        store_tensors("gen_ba.", self.gen_ba.store(), &mut out);
        store_tensors("disc_a.", self.disc_a.store(), &mut out);
        store_tensors("disc_b.", self.disc_b.store(), &mut out);
        for (prefix, ema) in [("ema_ab.", &self.ema_ab), ("ema_ba.", &self.ema_ba)] {
            for (k, v) in ema.master() {
                out.insert(format!("{prefix}{k}"), v.clone());
            }
        }
        for (prefix, opt) in [("opt_g.", &self.opt_g), ("opt_d.", &self.opt_d)] {
            for (k, v) in opt.state_tensors() {
                out.insert(format!("{prefix}{k}"), v);
            }
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_archive(path, &self.tensors(), &self.meta())
    }

    /// Rebuilds the state saved at `path` under `cfg`. The model sections of
    /// `cfg` must match the checkpoint; training settings may differ. Caches
    /// start empty.
    pub fn resume(cfg: &ExperimentConfig, path: &Path) -> Result<Self> {
        let ar = Archive::read(path)?;
        if ar.meta.kind != CheckpointKind::Train {
            return Err(Error::Checkpoint(format!("{} is not a training checkpoint", path.display())));
        }
        if ar.meta.model_hash != cfg.model_hash() {
            return Err(Error::ConfigMismatch {
                expected: cfg.model_hash(),
                found: ar.meta.model_hash.clone(),
            });
        }
        let mut cfg = cfg.clone();
        cfg.train.pretrained = None;
        let mut tr = Trainer::new(&cfg)?;
        load_store(tr.gen_ab.store(), &ar.getter("gen_ab."))?;
        load_store(tr.gen_ba.store(), &ar.getter("gen_ba."))?;
        load_store(tr.disc_a.store(), &ar.getter("disc_a."))?;
        load_store(tr.disc_b.store(), &ar.getter("disc_b."))?;
        tr.ema_ab.load_master(&ar.getter("ema_ab."))?;
        tr.ema_ba.load_master(&ar.getter("ema_ba."))?;
        tr.ema_ab.write_to(tr.ema_gen_ab.store())?;
        tr.ema_ba.write_to(tr.ema_gen_ba.store())?;
        tr.ema_gen_ab.store().assign_buffers_from(tr.gen_ab.store())?;
        tr.ema_gen_ba.store().assign_buffers_from(tr.gen_ba.store())?;
        tr.opt_g.load_state(&ar.getter("opt_g."), ar.meta.opt_g_steps)?;
        tr.opt_d.load_state(&ar.getter("opt_d."), ar.meta.opt_d_steps)?;
        tr.iteration = ar.meta.iteration;
        if let Some(r) = &ar.meta.rng {
            tr.rng = restore_rng(r)?;
        }
        Ok(tr)
    }
}

fn restore_rng(r: &RngState) -> Result<ChaCha8Rng> {
    let bad = || Error::Checkpoint("malformed rng state".into());
    if r.seed.len() != 64 {
        return Err(bad());
    }
    let mut seed = [0u8; 32];
    for (i, b) in seed.iter_mut().enumerate() {
        *b = u8::from_str_radix(&r.seed[2 * i..2 * i + 2], 16).map_err(|_| bad())?;
    }
    let mut rng = ChaCha8Rng::from_seed(seed);
    rng.set_stream(r.stream);
    rng.set_word_pos(r.word_pos.parse().map_err(|_| bad())?);
    Ok(rng)
}

/// Copies a pretrained generator checkpoint into every generator in `targets`.
fn load_pretrained(path: &Path, cfg: &ExperimentConfig, targets: &[&Generator]) -> Result<()> {
    let ar = Archive::read(path)?;
    if ar.meta.generator_hash != cfg.generator_hash() {
        return Err(Error::ConfigMismatch {
            expected: cfg.generator_hash(),
            found: ar.meta.generator_hash.clone(),
        });
    }
    for g in targets {
        load_store(g.store(), &ar.getter("generator."))?;
    }
    Ok(())
}

/// Which generator to read from a checkpoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    AToB,
    BToA,
}

impl FromStr for Direction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ab" | "a2b" => Ok(Direction::AToB),
            "ba" | "b2a" => Ok(Direction::BToA),
            _ => Err(Error::Config(format!("unknown direction {s:?} (ab, ba)"))),
        }
    }
}

/// Loads one generator from a training or pretraining checkpoint, together with
/// the configuration it was trained under. With `use_ema`, training
/// checkpoints yield the averaged weights.
pub fn load_generator(path: &Path, direction: Direction, use_ema: bool) -> Result<(ExperimentConfig, Generator)> {
    let ar = Archive::read(path)?;
    let cfg = ExperimentConfig::parse(&ar.meta.config)?;
    if cfg.generator_hash() != ar.meta.generator_hash {
        return Err(Error::ConfigMismatch {
            expected: ar.meta.generator_hash.clone(),
            found: cfg.generator_hash(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let g = Generator::new(&cfg.generator, DType::F32, &mut rng)?;
    let (live, avg) = match direction {
        Direction::AToB => ("gen_ab.", "ema_ab."),
        Direction::BToA => ("gen_ba.", "ema_ba."),
    };
    match ar.meta.kind {
        CheckpointKind::Pretrain => load_store(g.store(), &ar.getter("generator."))?,
        CheckpointKind::Train => {
            load_store(g.store(), &ar.getter(live))?;
            if use_ema {
                let mut ema = Ema::new(g.store(), 0.0)?;
                ema.load_master(&ar.getter(avg))?;
                ema.write_to(g.store())?;
            }
        }
    }
    Ok((cfg, g))
}

/// Saves a generator-only checkpoint as written by pretraining.
pub fn save_generator(path: &Path, cfg: &ExperimentConfig, g: &Generator, steps: u64) -> Result<()> {
    let mut tensors = BTreeMap::new();
    store_tensors("generator.", g.store(), &mut tensors);
    let meta = CheckpointMeta {
        kind: CheckpointKind::Pretrain,
        config: cfg.to_text(),
        config_hash: cfg.config_hash(),
        model_hash: cfg.model_hash(),
        generator_hash: cfg.generator_hash(),
        iteration: steps,
        rng: None,
        opt_g_steps: steps,
        opt_d_steps: 0,
        caches_serialized: false,
    };
    write_archive(path, &tensors, &meta)
}

/// Toy configuration shrunk further for unit tests.
pub fn tiny_config() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::toy();
    cfg.generator.features = [4, 4, 8, 8];
    cfg.generator.token_dim = 8;
    cfg.generator.n_blocks = 1;
    cfg.generator.n_heads = 2;
    cfg.generator.mlp_ratio = 2;
    cfg.discriminator.features = [4, 4, 8, 8];
    cfg
}
