//! Experiment configuration: a flat TOML document with one table per
//! module (`data`, `model`, `voca`, `loss`, `train`, `eval`) plus the preset
//! name and seed. Every field is materialized; dotted-key overrides such as
//! `loss.enable_ent=false` are applied on top of a preset.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::augmentation::LambdaSampler;
use crate::data::{EvalCounts, Geometry, SynthConfig};
use crate::error::{Error, Result};
use crate::losses::{LossWeights, Schedule};
use crate::model::{ModelConfig, VerbEncoder};
use crate::trainer::{TrainConfig, VocaConfig};

pub const PRESETS: [&str; 8] = ["fig2a", "fig2b", "fig3", "fig4", "table1", "table2-synth", "ablate", "splits"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Benchmark {
    /// 4 × 4, diagonal-only training.
    Fig2b,
    /// `grid × grid` with `per_pair` clips for every pair.
    Balanced,
    /// Long-tailed 10 × 20 at 15% coverage.
    Skewed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    pub preset: String,
    pub seed: u64,
    pub out: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub benchmark: Benchmark,
    pub grid: usize,
    pub per_pair: u64,
    /// Count decay `head / rank^exponent` of the skewed benchmark.
    pub skew_exponent: f64,
    pub aligned_per_pair: usize,
    pub conflict_per_pair: usize,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub noise_std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub dim: usize,
    pub hidden: usize,
    pub verb_encoder: VerbEncoder,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VocaSection {
    pub enabled: bool,
    pub rho: f64,
    pub scale: f64,
    pub p_aug: f64,
    pub full_frame: bool,
    pub beta: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossSection {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub delta: f64,
    pub gamma_window: [f64; 2],
    pub delta_window: [f64; 2],
    pub margin_m: f64,
    pub top_k: usize,
    pub enable_cos: bool,
    pub enable_ent: bool,
    pub temperature: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub base_lr: f64,
    pub warmup_epochs: usize,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub eval_every: usize,
    /// Write a checkpoint every `eval_every` epochs.
    pub checkpoints: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    /// Bias used when `calibrate` is off.
    pub bias: f64,
    pub calibrate: bool,
    pub sweep_min: f64,
    pub sweep_max: f64,
    pub sweep_steps: usize,
    /// Tune the bias on the test split instead of validation.
    pub unsound_test_tuned: bool,
    /// Also write the test clips as `test.czsl` for the `eval` and `probe`
    /// subcommands.
    pub save_test_split: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentSection,
    pub data: DataSection,
    pub model: ModelSection,
    pub voca: VocaSection,
    pub loss: LossSection,
    pub train: TrainSection,
    pub eval: EvalSection,
}

impl ExperimentConfig {
    /// Defaults shared by all presets: full RCORE on the skewed benchmark.
    fn base(preset: &str) -> Self {
        let w = LossWeights::default();
        let t = TrainConfig::default();
        let s = LambdaSampler::default();
        Self {
            experiment: ExperimentSection {
                preset: preset.to_string(),
                seed: 0,
                out: format!("runs/{preset}"),
            },
            data: DataSection {
                benchmark: Benchmark::Skewed,
                grid: 10,
                per_pair: 8,
                skew_exponent: 0.5,
                aligned_per_pair: 4,
                conflict_per_pair: 6,
                frames: 8,
                height: 16,
                width: 16,
                noise_std: 0.05,
            },
            model: ModelSection {
                dim: 64,
                hidden: 64,
                verb_encoder: VerbEncoder::Temporal,
            },
            voca: VocaSection {
                enabled: true,
                rho: 0.25,
                scale: s.scale,
                p_aug: s.p_aug,
                full_frame: false,
                beta: [s.beta_a, s.beta_b],
            },
            loss: LossSection {
                alpha: w.alpha,
                beta: w.beta,
                gamma: w.gamma.peak,
                delta: w.delta.peak,
                gamma_window: [w.gamma.start, w.gamma.end],
                delta_window: [w.delta.start, w.delta.end],
                margin_m: w.margin_m,
                top_k: w.top_k,
                enable_cos: w.enable_cos,
                enable_ent: w.enable_ent,
                temperature: 0.07,
            },
            train: TrainSection {
                epochs: t.epochs,
                batch_size: t.batch_size,
                base_lr: 5e-4,
                warmup_epochs: t.warmup_epochs,
                weight_decay: t.weight_decay,
                beta1: t.beta1,
                beta2: t.beta2,
                eps: t.eps,
                eval_every: t.eval_every,
                checkpoints: false,
            },
            eval: EvalSection {
                bias: 0.0,
                calibrate: true,
                sweep_min: -5.0,
                sweep_max: 5.0,
                sweep_steps: 101,
                unsound_test_tuned: false,
                save_test_split: false,
            },
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        let mut c = Self::base(name);
        match name {
            "fig2a" => {
                c.train.base_lr = TrainConfig::default().base_lr;
                c.data.benchmark = Benchmark::Balanced;
                c.data.height = 32;
                c.data.width = 32;
                c.data.aligned_per_pair = 3;
                c.data.conflict_per_pair = 0;
                c.train.epochs = 10;
                c.set_baseline();
            }
            "fig2b" => {
                c.train.base_lr = TrainConfig::default().base_lr;
                c.data.benchmark = Benchmark::Fig2b;
                c.data.height = 32;
                c.data.width = 32;
                c.data.aligned_per_pair = 25;
                c.data.conflict_per_pair = 30;
                c.set_baseline();
            }
            "fig3" => c.set_baseline(),
            "fig4" => {
                c.train.base_lr = TrainConfig::default().base_lr;
                c.data.benchmark = Benchmark::Fig2b;
                c.data.height = 32;
                c.data.width = 32;
                c.data.aligned_per_pair = 25;
                c.data.conflict_per_pair = 30;
                c.train.epochs = 50;
            }
            "table1" | "table2-synth" | "ablate" | "splits" => {}
            _ => return Err(unknown_preset(name)),
        }
        Ok(c)
    }

    /// No TORC, no margin, no VOCAMix.
    pub fn set_baseline(&mut self) {
        self.loss.gamma = 0.0;
        self.loss.delta = 0.0;
        self.voca.enabled = false;
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let c: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml()?)?;
        Ok(())
    }

    /// Applies `key=value` overrides (`loss.enable_ent=false`). Values are
    /// read as TOML literals, falling back to bare strings.
    pub fn with_overrides<S: AsRef<str>>(&self, overrides: &[S]) -> Result<Self> {
        let mut doc = toml::Value::try_from(self).map_err(|e| Error::Config(e.to_string()))?;
        for o in overrides {
            let o = o.as_ref().trim_start_matches("--");
            let (key, raw) = o
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override `{o}` is not key=value")))?;
            set_dotted(&mut doc, key.trim(), parse_literal(raw.trim()))?;
        }
        let c: Self = doc.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if self.data.frames < 2 || self.data.height < 8 || self.data.width < 8 {
            return Err(Error::Config("data needs frames >= 2 and frames of at least 8x8".into()));
        }
        if self.data.benchmark == Benchmark::Balanced && !(1..=crate::data::MAX_VERBS).contains(&self.data.grid) {
            return Err(Error::Config(format!("data.grid must lie in 1..={}", crate::data::MAX_VERBS)));
        }
        if !(self.data.skew_exponent >= 0.0) || !(self.data.noise_std >= 0.0) {
            return Err(Error::Config("data.skew_exponent and data.noise_std must be non-negative".into()));
        }
        if !(self.eval.sweep_min <= self.eval.sweep_max) || self.eval.sweep_steps < 2 {
            return Err(Error::Config("eval sweep needs sweep_min <= sweep_max and at least 2 steps".into()));
        }
        if !(self.voca.rho > 0.0 && self.voca.rho < 1.0) {
            return Err(Error::Config("voca.rho must lie in (0, 1)".into()));
        }
        self.sampler().validate()?;
        self.loss_weights().validate()?;
        self.train_config().validate()?;
        Ok(())
    }

    pub fn seed(&self) -> u64 {
        self.experiment.seed
    }

    pub fn geometry(&self) -> Geometry {
        Geometry {
            frames: self.data.frames,
            channels: 3,
            height: self.data.height,
            width: self.data.width,
        }
    }

    pub fn synth_config(&self) -> Result<SynthConfig> {
        let seed = self.seed();
        let mut s = match self.data.benchmark {
            Benchmark::Fig2b => SynthConfig::fig2b(seed),
            Benchmark::Balanced => SynthConfig::balanced(self.data.grid, self.data.per_pair, seed),
            Benchmark::Skewed => SynthConfig::skewed(self.data.skew_exponent, seed),
        };
        s.geometry = self.geometry();
        s.noise_std = self.data.noise_std;
        s.validate()?;
        Ok(s)
    }

    pub fn eval_counts(&self) -> EvalCounts {
        EvalCounts {
            aligned_per_pair: self.data.aligned_per_pair,
            conflict_per_pair: self.data.conflict_per_pair,
        }
    }

    pub fn model_config(&self, n_verbs: usize, n_objects: usize) -> ModelConfig {
        ModelConfig {
            dim: self.model.dim,
            hidden: self.model.hidden,
            temperature: self.loss.temperature,
            verb_encoder: self.model.verb_encoder,
            ..ModelConfig::new(self.geometry(), n_verbs, n_objects)
        }
    }

    pub fn loss_weights(&self) -> LossWeights {
        let l = &self.loss;
        LossWeights {
            alpha: l.alpha,
            beta: l.beta,
            gamma: Schedule {
                start: l.gamma_window[0],
                end: l.gamma_window[1],
                peak: l.gamma,
            },
            delta: Schedule {
                start: l.delta_window[0],
                end: l.delta_window[1],
                peak: l.delta,
            },
            margin_m: l.margin_m,
            top_k: l.top_k,
            enable_cos: l.enable_cos,
            enable_ent: l.enable_ent,
        }
    }

    pub fn sampler(&self) -> LambdaSampler {
        LambdaSampler {
            beta_a: self.voca.beta[0],
            beta_b: self.voca.beta[1],
            scale: self.voca.scale,
            p_aug: self.voca.p_aug,
        }
    }

    pub fn voca_config(&self) -> VocaConfig {
        VocaConfig {
            enabled: self.voca.enabled,
            sampler: self.sampler(),
            rho: self.voca.rho,
            full_frame: self.voca.full_frame,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            epochs: t.epochs,
            batch_size: t.batch_size,
            base_lr: t.base_lr,
            warmup_epochs: t.warmup_epochs,
            weight_decay: t.weight_decay,
            seed: self.seed(),
            beta1: t.beta1,
            beta2: t.beta2,
            eps: t.eps,
            eval_every: t.eval_every,
        }
    }

    pub fn sweep(&self) -> Vec<f64> {
        let e = &self.eval;
        let n = e.sweep_steps - 1;
        (0..=n)
            .map(|i| e.sweep_min + (e.sweep_max - e.sweep_min) * i as f64 / n as f64)
            .collect()
    }
}

pub fn unknown_preset(name: &str) -> Error {
    Error::Config(format!("unknown preset `{name}`; available: {}", PRESETS.join(", ")))
}

fn parse_literal(raw: &str) -> toml::Value {
    match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

fn set_dotted(doc: &mut toml::Value, key: &str, value: toml::Value) -> Result<()> {
    let mut node = doc;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let table = node
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("`{key}` does not name a config field")))?;
        let slot = table
            .get_mut(*part)
            .ok_or_else(|| Error::Config(format!("unknown config key `{key}`")))?;
        if i + 1 == parts.len() {
            if slot.is_table() {
                return Err(Error::Config(format!("`{key}` is a section, not a field")));
            }
            *slot = coerce(slot, value);
            return Ok(());
        }
        node = slot;
    }
    Err(Error::Config("empty override key".into()))
}

/// Lets `--train.base_lr=1` set a float field and `--data.height=16.0` fail
/// later with a type error rather than silently truncating.
fn coerce(old: &toml::Value, new: toml::Value) -> toml::Value {
    match (old, &new) {
        (toml::Value::Float(_), toml::Value::Integer(i)) => toml::Value::Float(*i as f64),
        _ => new,
    }
}
