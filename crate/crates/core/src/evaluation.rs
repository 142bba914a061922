//! Open- and closed-world prediction, bias calibration and the
//! perturbed-feature probes.

use std::collections::BTreeSet;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::Clip;
use crate::error::{Error, Result};
use crate::label_space::{CoOccurrenceStats, CompositionSpace};
use crate::metrics::{auc_seen_unseen, harmonic_mean, EvalReport, Predictions};
use crate::model::{shuffle_permutation, Model};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InferenceMode {
    OpenWorld,
    ClosedWorld,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceConfig {
    pub mode: InferenceMode,
    /// Added to the score of every unseen composition.
    pub bias: f64,
    /// Flat indices allowed in closed-world mode.
    pub candidate_set: Option<BTreeSet<usize>>,
}

impl InferenceConfig {
    pub fn open_world(bias: f64) -> Self {
        Self {
            mode: InferenceMode::OpenWorld,
            bias,
            candidate_set: None,
        }
    }

    pub fn closed_world(candidates: BTreeSet<usize>, bias: f64) -> Result<Self> {
        if candidates.is_empty() {
            return Err(Error::invalid("closed-world inference needs a nonempty candidate set"));
        }
        Ok(Self {
            mode: InferenceMode::ClosedWorld,
            bias,
            candidate_set: Some(candidates),
        })
    }

    fn allows(&self, idx: usize) -> bool {
        match (self.mode, &self.candidate_set) {
            (InferenceMode::ClosedWorld, Some(c)) => c.contains(&idx),
            _ => true,
        }
    }
}

/// Index of the largest entry, lowest index on ties.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Prediction {
    pub comp: usize,
    pub verb: usize,
    pub object: usize,
}

/// Prediction for one sample from its composition scores and component
/// logits.
pub fn predict(
    scores: &[f64],
    verb_logits: &[f64],
    obj_logits: &[f64],
    cfg: &InferenceConfig,
    space: &CompositionSpace,
) -> Result<Prediction> {
    if scores.len() != space.n_compositions() {
        return Err(Error::invalid(format!(
            "predict: {} scores for a space of {}",
            scores.len(),
            space.n_compositions()
        )));
    }
    if cfg.mode == InferenceMode::ClosedWorld && cfg.candidate_set.as_ref().is_none_or(BTreeSet::is_empty) {
        return Err(Error::invalid("closed-world inference needs a nonempty candidate set"));
    }
    let mut best: Option<(usize, f64)> = None;
    for (i, &s) in scores.iter().enumerate() {
        if !cfg.allows(i) {
            continue;
        }
        let adjusted = if space.is_seen_flat(i) {
            s
        } else if cfg.bias.is_infinite() {
            // keeps ±∞ comparisons meaningful
            cfg.bias
        } else {
            s + cfg.bias
        };
        if best.is_none_or(|(_, b)| adjusted > b) {
            best = Some((i, adjusted));
        }
    }
    let (comp, _) = best.ok_or_else(|| Error::invalid("no candidate composition inside the space"))?;
    Ok(Prediction {
        comp,
        verb: argmax(verb_logits),
        object: argmax(obj_logits),
    })
}

/// Model outputs for a whole split, computed once and reused across
/// inference settings.
#[derive(Debug, Clone)]
pub struct ScoredSplit {
    pub scores: Vec<Vec<f64>>,
    pub verb_logits: Vec<Vec<f64>>,
    pub obj_logits: Vec<Vec<f64>>,
    pub verbs: Vec<usize>,
    pub objects: Vec<usize>,
}

const EVAL_BATCH: usize = 64;

fn rows(t: &Tensor) -> Vec<Vec<f64>> {
    t.rows().map(<[f64]>::to_vec).collect()
}

impl ScoredSplit {
    pub fn compute(model: &Model, clips: &[Clip]) -> Result<Self> {
        let mut out = ScoredSplit {
            scores: Vec::with_capacity(clips.len()),
            verb_logits: Vec::with_capacity(clips.len()),
            obj_logits: Vec::with_capacity(clips.len()),
            verbs: clips.iter().map(|c| c.verb).collect(),
            objects: clips.iter().map(|c| c.object).collect(),
        };
        for chunk in clips.chunks(EVAL_BATCH) {
            let refs: Vec<&Clip> = chunk.iter().collect();
            let inf = model.infer(&refs, None)?;
            out.scores.extend(rows(&inf.scores));
            out.verb_logits.extend(rows(&inf.verb_logits));
            out.obj_logits.extend(rows(&inf.obj_logits));
        }
        Ok(out)
    }

    pub fn len(&self) -> usize {
        self.verbs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.verbs.is_empty()
    }

    pub fn predictions(&self, cfg: &InferenceConfig, space: &CompositionSpace) -> Result<Predictions> {
        let mut p = Predictions {
            true_verb: self.verbs.clone(),
            true_object: self.objects.clone(),
            ..Default::default()
        };
        for i in 0..self.len() {
            let pr = predict(&self.scores[i], &self.verb_logits[i], &self.obj_logits[i], cfg, space)?;
            p.comp.push(pr.comp);
            p.verb.push(pr.verb);
            p.object.push(pr.object);
        }
        Ok(p)
    }

    pub fn report(&self, cfg: &InferenceConfig, space: &CompositionSpace, stats: &CoOccurrenceStats) -> Result<EvalReport> {
        EvalReport::from_predictions(&self.predictions(cfg, space)?, space, stats)
    }

    /// `(seen, unseen)` composition accuracy at one bias.
    pub fn seen_unseen(&self, cfg: &InferenceConfig, space: &CompositionSpace) -> Result<(f64, f64)> {
        let no = space.n_objects();
        let (mut hit, mut tot) = ([0usize; 2], [0usize; 2]);
        for i in 0..self.len() {
            let pr = predict(&self.scores[i], &self.verb_logits[i], &self.obj_logits[i], cfg, space)?;
            let side = usize::from(!space.is_seen(self.verbs[i], self.objects[i]));
            tot[side] += 1;
            hit[side] += usize::from(pr.comp == self.verbs[i] * no + self.objects[i]);
        }
        let pct = |h: usize, t: usize| if t == 0 { 0.0 } else { 100.0 * h as f64 / t as f64 };
        Ok((pct(hit[0], tot[0]), pct(hit[1], tot[1])))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub bias: f64,
    pub seen: f64,
    pub unseen: f64,
    pub hm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub bias: f64,
    pub curve: Vec<CurvePoint>,
}

impl Calibration {
    pub fn auc(&self) -> Result<f64> {
        let pts: Vec<(f64, f64)> = self.curve.iter().map(|p| (p.seen, p.unseen)).collect();
        auc_seen_unseen(&pts)
    }

    pub fn write_csv(&self, path: &std::path::Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["bias", "seen_acc", "unseen_acc", "hm"])?;
        for p in &self.curve {
            w.write_record([p.bias, p.seen, p.unseen, p.hm].map(|x| format!("{x:.6}")))?;
        }
        w.flush()?;
        Ok(())
    }
}

/// 101 evenly spaced biases over `[-5, 5]`.
pub fn default_sweep() -> Vec<f64> {
    (0..=100).map(|i| -5.0 + 0.1 * i as f64).collect()
}

/// Picks the bias maximizing the seen/unseen composition H.M. on the
/// split; ties go to the smaller `|bias|`.
pub fn calibrate_bias(split: &ScoredSplit, space: &CompositionSpace, sweep: &[f64]) -> Result<Calibration> {
    let unseen = split
        .verbs
        .iter()
        .zip(&split.objects)
        .filter(|(&v, &o)| !space.is_seen(v, o))
        .count();
    if unseen == 0 || unseen == split.len() {
        return Err(Error::invalid("calibration split needs both seen and unseen samples"));
    }
    if sweep.is_empty() {
        return Err(Error::invalid("empty bias sweep"));
    }
    let mut curve = Vec::with_capacity(sweep.len());
    for &bias in sweep {
        let (seen, unseen) = split.seen_unseen(&InferenceConfig::open_world(bias), space)?;
        curve.push(CurvePoint {
            bias,
            seen,
            unseen,
            hm: harmonic_mean(seen, unseen),
        });
    }
    let mut best = curve[0];
    for p in &curve[1..] {
        if p.hm > best.hm || (p.hm == best.hm && p.bias.abs() < best.bias.abs()) {
            best = *p;
        }
    }
    Ok(Calibration { bias: best.bias, curve })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShuffleProbe {
    pub orig_verb_acc: f64,
    pub shuffled_verb_acc: f64,
    pub gap: f64,
}

/// Verb accuracy from `f^V` and from `f^V_shuffled` (a fresh permutation
/// per clip), both scored against the verb embeddings.
pub fn shuffled_probe(model: &Model, clips: &[Clip], rng: &mut impl Rng) -> Result<ShuffleProbe> {
    if clips.is_empty() {
        return Err(Error::invalid("probe on an empty split"));
    }
    let t = model.config.geometry.frames;
    let (mut orig, mut shuf) = (0usize, 0usize);
    for chunk in clips.chunks(EVAL_BATCH) {
        let refs: Vec<&Clip> = chunk.iter().collect();
        let perms = chunk
            .iter()
            .map(|_| shuffle_permutation(t, rng))
            .collect::<Result<Vec<_>>>()?;
        let inf = model.infer(&refs, Some(&perms))?;
        let (_, f_shuf) = inf.perturbed.expect("perturbations requested");
        let shuf_logits = model.verb_logits_of(&f_shuf)?;
        for (i, c) in chunk.iter().enumerate() {
            orig += usize::from(argmax(inf.verb_logits.rows().nth(i).expect("row")) == c.verb);
            shuf += usize::from(argmax(shuf_logits.rows().nth(i).expect("row")) == c.verb);
        }
    }
    let n = clips.len() as f64;
    let (o, s) = (100.0 * orig as f64 / n, 100.0 * shuf as f64 / n);
    Ok(ShuffleProbe {
        orig_verb_acc: o,
        shuffled_verb_acc: s,
        gap: o - s,
    })
}

/// Mean `cos(f^V, f^V_rev)` over the clips.
pub fn reversed_cosine_probe(model: &Model, clips: &[Clip]) -> Result<f64> {
    if clips.is_empty() {
        return Err(Error::invalid("probe on an empty split"));
    }
    let t = model.config.geometry.frames;
    let mut total = 0.0;
    for chunk in clips.chunks(EVAL_BATCH) {
        let refs: Vec<&Clip> = chunk.iter().collect();
        let ident: Vec<Vec<usize>> = chunk.iter().map(|_| (0..t).collect()).collect();
        let inf = model.infer(&refs, Some(&ident))?;
        let (rev, _) = inf.perturbed.expect("perturbations requested");
        for (a, b) in inf.verb_feat.rows().zip(rev.rows()) {
            total += cosine(a, b);
        }
    }
    Ok(total / clips.len() as f64)
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if a == b {
        return 1.0;
    }
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (dot / (na * nb)).clamp(-1.0, 1.0)
}

/// Full report for a split at a given inference setting, with AUC taken
/// from `calibration` when provided.
pub fn evaluate(
    split: &ScoredSplit,
    cfg: &InferenceConfig,
    space: &CompositionSpace,
    stats: &CoOccurrenceStats,
    calibration: Option<&Calibration>,
) -> Result<EvalReport> {
    let mut r = split.report(cfg, space, stats)?;
    r.auc = calibration.map(Calibration::auc).transpose()?;
    Ok(r)
}
