//! Deterministic mini-batch training with AdamW, warmup plus cosine decay,
//! scheduled regularizers and per-epoch diagnostics.

use std::path::PathBuf;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::augmentation::{estimate_motion_region, sample_lambda, vocamix, LambdaSampler, MotionMask};
use crate::data::{Clip, Dataset, SoftLabel};
use crate::error::{Error, Result};
use crate::evaluation::{reversed_cosine_probe, InferenceConfig, ScoredSplit};
use crate::label_space::{CoOccurrenceStats, CompositionSpace};
use crate::losses::{component_loss, composition_loss, margin_loss, torc_loss, total_loss, LossParts, LossWeights};
use crate::metrics::EvalReport;
use crate::model::{compose_scores, shuffle_permutation, Model};
use crate::rng::{substream, Stream};
use crate::tensor::{Tape, Tensor, Var};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub base_lr: f64,
    pub warmup_epochs: usize,
    pub weight_decay: f64,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub eval_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 32,
            base_lr: 2e-3,
            warmup_epochs: 3,
            weight_decay: 1e-4,
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            eval_every: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs > 0 && self.warmup_epochs >= self.epochs {
            return Err(Error::Config("warmup_epochs must be smaller than epochs".into()));
        }
        if self.batch_size == 0 || self.eval_every == 0 {
            return Err(Error::Config("batch_size and eval_every must be positive".into()));
        }
        if !(self.base_lr >= 0.0) || !(self.weight_decay >= 0.0) {
            return Err(Error::Config("learning rate and weight decay must be non-negative".into()));
        }
        Ok(())
    }
}

/// Learning rate after `step` updates: linear warmup to `base_lr` over
/// `warmup_steps`, then cosine decay reaching 0 at `total_steps`.
pub fn lr_at(step: usize, total_steps: usize, warmup_steps: usize, base_lr: f64) -> f64 {
    if step < warmup_steps {
        return base_lr * step as f64 / warmup_steps as f64;
    }
    if total_steps <= warmup_steps {
        return base_lr;
    }
    let progress = ((step - warmup_steps) as f64 / (total_steps - warmup_steps) as f64).min(1.0);
    base_lr * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VocaConfig {
    pub enabled: bool,
    pub sampler: LambdaSampler,
    pub rho: f64,
    pub full_frame: bool,
}

impl Default for VocaConfig {
    fn default() -> Self {
        Self {
            enabled: false,
            sampler: LambdaSampler::default(),
            rho: 0.25,
            full_frame: false,
        }
    }
}

/// Decoupled-weight-decay Adam.
#[derive(Debug, Clone)]
pub struct AdamW {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: i32,
}

impl AdamW {
    pub fn new(params: &[Tensor]) -> Self {
        Self {
            m: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [Tensor], grads: &[Option<Vec<f64>>], lr: f64, cfg: &TrainConfig) {
        self.t += 1;
        let (b1, b2) = (cfg.beta1, cfg.beta2);
        let c1 = 1.0 - b1.powi(self.t);
        let c2 = 1.0 - b2.powi(self.t);
        for (i, p) in params.iter_mut().enumerate() {
            let Some(g) = &grads[i] else { continue };
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (j, x) in p.data_mut().iter_mut().enumerate() {
                m[j] = b1 * m[j] + (1.0 - b1) * g[j];
                v[j] = b2 * v[j] + (1.0 - b2) * g[j] * g[j];
                let update = (m[j] / c1) / ((v[j] / c2).sqrt() + cfg.eps);
                *x -= lr * (update + cfg.weight_decay * *x);
            }
        }
    }
}

/// Mean loss of each term over an epoch; absent terms were not active.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct TermLosses {
    pub com: f64,
    pub comp: f64,
    pub torc: Option<f64>,
    pub margin: Option<f64>,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    /// Completed epochs (1-based).
    pub epoch: usize,
    pub lr: f64,
    /// Schedule values used for this epoch's updates.
    pub gamma: f64,
    pub delta: f64,
    pub losses: TermLosses,
    pub mixed_samples: usize,
    pub mask_fallbacks: usize,
    pub report: Option<EvalReport>,
    pub mean_cos_rev: Option<f64>,
    pub wall_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct RunLog {
    pub entries: Vec<EpochLog>,
}

impl RunLog {
    /// The log with wall-clock timings zeroed, for reproducibility checks.
    pub fn without_timing(&self) -> RunLog {
        let mut out = self.clone();
        out.entries.iter_mut().for_each(|e| e.wall_ms = 0.0);
        out
    }
}

/// Everything `train` needs besides the model and the data.
#[derive(Debug, Clone)]
pub struct Trainer<'a> {
    pub cfg: TrainConfig,
    pub weights: LossWeights,
    pub voca: VocaConfig,
    pub space: &'a CompositionSpace,
    pub stats: &'a CoOccurrenceStats,
    /// Split evaluated every `eval_every` epochs.
    pub monitor: Option<&'a [Clip]>,
    pub checkpoint_dir: Option<PathBuf>,
}

struct StepOutcome {
    com: f64,
    comp: f64,
    torc: Option<f64>,
    margin: Option<f64>,
    total: f64,
}

struct Streams {
    order: rand_chacha::ChaCha8Rng,
    augment: rand_chacha::ChaCha8Rng,
    donor: rand_chacha::ChaCha8Rng,
    lambda: rand_chacha::ChaCha8Rng,
    shuffle: rand_chacha::ChaCha8Rng,
}

impl<'a> Trainer<'a> {
    pub fn new(space: &'a CompositionSpace, stats: &'a CoOccurrenceStats) -> Self {
        Self {
            cfg: TrainConfig::default(),
            weights: LossWeights::default(),
            voca: VocaConfig::default(),
            space,
            stats,
            monitor: None,
            checkpoint_dir: None,
        }
    }

    pub fn train(&self, mut model: Model, data: &Dataset) -> Result<(Model, RunLog)> {
        self.cfg.validate()?;
        self.weights.validate()?;
        if self.voca.enabled {
            self.voca.sampler.validate()?;
        }
        let (nv, no) = (model.config.n_verbs, model.config.n_objects);
        if (nv, no) != (self.space.n_verbs(), self.space.n_objects()) {
            return Err(Error::invalid("model and composition space disagree on vocabulary sizes"));
        }
        if let Some(c) = data.clips.iter().find(|c| c.verb >= nv || c.object >= no) {
            return Err(Error::data(format!("clip label ({}, {}) outside the space", c.verb, c.object)));
        }
        let mut log = RunLog::default();
        if self.cfg.epochs == 0 || data.is_empty() {
            return Ok((model, log));
        }
        let seed = self.cfg.seed;
        let mut rngs = Streams {
            order: substream(seed, Stream::DataOrder),
            augment: substream(seed, Stream::Augment),
            donor: substream(seed, Stream::Donor),
            lambda: substream(seed, Stream::Lambda),
            shuffle: substream(seed, Stream::Shuffle),
        };
        let freq = self.stats.freq_flat();
        let steps_per_epoch = data.len().div_ceil(self.cfg.batch_size);
        let total_steps = steps_per_epoch * self.cfg.epochs;
        let warmup_steps = steps_per_epoch * self.cfg.warmup_epochs;
        let mut opt = AdamW::new(model.params());
        let mut step = 0;
        let mut order: Vec<usize> = (0..data.len()).collect();
        for epoch in 0..self.cfg.epochs {
            let started = Instant::now();
            let e = epoch as f64;
            let (gamma, delta) = (self.weights.gamma_at(e), self.weights.delta_at(e));
            order.shuffle(&mut rngs.order);
            let mut sums = TermLosses::default();
            let (mut torc_sum, mut margin_sum) = (0.0, 0.0);
            let (mut mixed, mut fallbacks) = (0, 0);
            let mut lr = 0.0;
            for batch in order.chunks(self.cfg.batch_size) {
                let clips: Vec<&Clip> = batch.iter().map(|&i| &data.clips[i]).collect();
                let (inputs, labels, m, f) = self.augment(&clips, no, &mut rngs)?;
                mixed += m;
                fallbacks += f;
                step += 1;
                lr = lr_at(step, total_steps, warmup_steps, self.cfg.base_lr);
                let out = self.step(&mut model, &mut opt, &inputs, &labels, &freq, e, lr, &mut rngs)?;
                sums.com += out.com;
                sums.comp += out.comp;
                sums.total += out.total;
                torc_sum += out.torc.unwrap_or(0.0);
                margin_sum += out.margin.unwrap_or(0.0);
                sums.torc = sums.torc.or(out.torc.map(|_| 0.0));
                sums.margin = sums.margin.or(out.margin.map(|_| 0.0));
            }
            let n = steps_per_epoch as f64;
            let losses = TermLosses {
                com: sums.com / n,
                comp: sums.comp / n,
                torc: sums.torc.map(|_| torc_sum / n),
                margin: sums.margin.map(|_| margin_sum / n),
                total: sums.total / n,
            };
            let done = epoch + 1;
            let evaluate = done % self.cfg.eval_every == 0 || done == self.cfg.epochs;
            let (report, mean_cos_rev) = match (self.monitor, evaluate) {
                (Some(split), true) if !split.is_empty() => {
                    let scored = ScoredSplit::compute(&model, split)?;
                    let report = scored.report(&InferenceConfig::open_world(0.0), self.space, self.stats)?;
                    (Some(report), Some(reversed_cosine_probe(&model, split)?))
                }
                _ => (None, None),
            };
            if let (Some(dir), true) = (&self.checkpoint_dir, evaluate) {
                model.save(&dir.join(format!("checkpoint_epoch{done:03}.bin")))?;
            }
            log::info!(
                "epoch {done}: loss {:.4} (com {:.4}, comp {:.4}) lr {lr:.2e}",
                losses.total,
                losses.com,
                losses.comp
            );
            log.entries.push(EpochLog {
                epoch: done,
                lr,
                gamma,
                delta,
                losses,
                mixed_samples: mixed,
                mask_fallbacks: fallbacks,
                report,
                mean_cos_rev,
                wall_ms: started.elapsed().as_secs_f64() * 1e3,
            });
        }
        Ok((model, log))
    }

    /// Applies VOCAMix per sample with probability `p_aug`; returns the
    /// inputs, soft object labels, mixed count and mask fallbacks.
    fn augment(
        &self,
        clips: &[&Clip],
        n_objects: usize,
        rngs: &mut Streams,
    ) -> Result<(Vec<Clip>, Vec<SoftLabel>, usize, usize)> {
        let mut inputs = Vec::with_capacity(clips.len());
        let mut labels = Vec::with_capacity(clips.len());
        let (mut mixed, mut fallbacks) = (0, 0);
        for (i, c) in clips.iter().enumerate() {
            let apply = self.voca.enabled && clips.len() > 1 && rngs.augment.gen::<f64>() < self.voca.sampler.p_aug;
            if !apply {
                inputs.push((*c).clone());
                labels.push(SoftLabel::one_hot(c.object, n_objects));
                continue;
            }
            let others: Vec<usize> = (0..clips.len()).filter(|&j| j != i).collect();
            let distinct: Vec<usize> = others.iter().copied().filter(|&j| clips[j].object != c.object).collect();
            let pool = if distinct.is_empty() { &others } else { &distinct };
            let donor = clips[*pool.choose(&mut rngs.donor).expect("batch has another clip")];
            let lambda = sample_lambda(&self.voca.sampler, &mut rngs.lambda)?;
            let mask = if self.voca.full_frame {
                MotionMask::full(c.geometry.height, c.geometry.width)
            } else {
                let m = estimate_motion_region(c, self.voca.rho)?;
                fallbacks += usize::from(m.fallback);
                m
            };
            let (clip, label) = vocamix(c, donor, lambda, &mask, self.voca.full_frame, n_objects)?;
            inputs.push(clip);
            labels.push(label);
            mixed += 1;
        }
        Ok((inputs, labels, mixed, fallbacks))
    }

    #[allow(clippy::too_many_arguments)]
    fn step(
        &self,
        model: &mut Model,
        opt: &mut AdamW,
        inputs: &[Clip],
        labels: &[SoftLabel],
        freq: &std::collections::BTreeSet<usize>,
        epoch: f64,
        lr: f64,
        rngs: &mut Streams,
    ) -> Result<StepOutcome> {
        let no = model.config.n_objects;
        let refs: Vec<&Clip> = inputs.iter().collect();
        let verbs: Vec<usize> = inputs.iter().map(|c| c.verb).collect();
        // the composition target keeps the primary (majority) object
        let targets: Vec<usize> = inputs.iter().map(|c| c.verb * no + c.object).collect();
        let mut tape = Tape::new();
        let b = model.bind(&mut tape, true);
        let px = tape.constant(model.batch_pixels(&refs)?);
        let out = model.forward(&mut tape, &b, px)?;
        let (scores, _) = compose_scores(&mut tape, out.verb_logits, out.obj_logits, out.cond_vgo, out.cond_ogv)?;
        let com = component_loss(&mut tape, out.verb_logits, out.obj_logits, &verbs, labels)?;
        let comp = composition_loss(&mut tape, scores, &targets)?;
        let torc = if self.weights.gamma_at(epoch) > 0.0 && (self.weights.enable_cos || self.weights.enable_ent) {
            let t = model.config.geometry.frames;
            let perms = inputs
                .iter()
                .map(|_| shuffle_permutation(t, &mut rngs.shuffle))
                .collect::<Result<Vec<_>>>()?;
            let (f_rev, f_shuf) = model.reversed_and_shuffled(&mut tape, &b, out.frame_feats, &perms)?;
            torc_loss(
                &mut tape,
                out.verb_feat,
                f_rev,
                f_shuf,
                model.verb_embed(&b),
                model.config.temperature,
                self.weights.enable_cos,
                self.weights.enable_ent,
            )?
        } else {
            None
        };
        let margin = if self.weights.delta_at(epoch) > 0.0 {
            Some(margin_loss(&mut tape, scores, &targets, freq, self.weights.top_k, self.weights.margin_m)?)
        } else {
            None
        };
        let parts = LossParts { com, comp, torc, margin };
        let total = total_loss(&mut tape, &parts, &self.weights, epoch)?;
        let value = |tape: &Tape, v: Var, name: &str| -> Result<f64> {
            let x = tape.value(v).item();
            if x.is_finite() {
                Ok(x)
            } else {
                Err(Error::NonFinite(format!("{name} loss")))
            }
        };
        let outcome = StepOutcome {
            com: value(&tape, com, "component")?,
            comp: value(&tape, comp, "composition")?,
            torc: torc.map(|v| value(&tape, v, "TORC")).transpose()?,
            margin: margin.map(|v| value(&tape, v, "margin")).transpose()?,
            total: value(&tape, total, "total")?,
        };
        tape.backward(total)?;
        let grads: Vec<Option<Vec<f64>>> = b.vars().iter().map(|&v| tape.grad(v).map(<[f64]>::to_vec)).collect();
        for (name, g) in crate::model::PARAM_NAMES.iter().zip(&grads) {
            if g.as_ref().is_some_and(|g| g.iter().any(|x| !x.is_finite())) {
                return Err(Error::NonFinite(format!("gradient of {name}")));
            }
        }
        opt.step(model.params_mut(), &grads, lr, &self.cfg);
        Ok(outcome)
    }
}
