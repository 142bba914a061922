//! Training objectives. Every loss is a batch mean of the per-sample loss,
//! built on the tape so gradients reach the model.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::data::SoftLabel;
use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

/// Zero before `start`, linear ramp to `peak` at `end`, then flat.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub start: f64,
    pub end: f64,
    pub peak: f64,
}

impl Schedule {
    pub fn at(&self, epoch: f64) -> f64 {
        if epoch < self.start {
            0.0
        } else if epoch >= self.end {
            self.peak
        } else {
            self.peak * (epoch - self.start) / (self.end - self.start)
        }
    }

    pub fn constant(value: f64) -> Self {
        Self {
            start: 0.0,
            end: 0.0,
            peak: value,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: Schedule,
    pub delta: Schedule,
    pub margin_m: f64,
    pub top_k: usize,
    pub enable_cos: bool,
    pub enable_ent: bool,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            alpha: 0.2,
            beta: 1.0,
            gamma: Schedule {
                start: 5.0,
                end: 10.0,
                peak: 1.0,
            },
            delta: Schedule {
                start: 15.0,
                end: 20.0,
                peak: 0.8,
            },
            margin_m: 1.0,
            top_k: 10,
            enable_cos: true,
            enable_ent: true,
        }
    }
}

impl LossWeights {
    /// Component and composition terms only.
    pub fn baseline() -> Self {
        Self {
            gamma: Schedule::constant(0.0),
            delta: Schedule::constant(0.0),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for s in [self.gamma, self.delta] {
            if s.end < s.start {
                return Err(Error::Config("loss schedule windows need start <= end".into()));
            }
        }
        if self.top_k == 0 {
            return Err(Error::Config("loss.top_k must be at least 1".into()));
        }
        Ok(())
    }

    pub fn gamma_at(&self, epoch: f64) -> f64 {
        self.gamma.at(epoch)
    }

    pub fn delta_at(&self, epoch: f64) -> f64 {
        self.delta.at(epoch)
    }
}

fn check_labels(op: &str, logits: &[usize], labels: &[usize], n: usize) -> Result<()> {
    if logits[0] != labels.len() {
        return Err(Error::invalid(format!("{op}: {} rows but {} labels", logits[0], labels.len())));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= n) {
        return Err(Error::invalid(format!("{op}: label {bad} out of range {n}")));
    }
    Ok(())
}

fn rows_cols(tape: &Tape, v: Var, op: &str) -> Result<(usize, usize)> {
    match *tape.shape(v) {
        [b, n] => Ok((b, n)),
        ref s => Err(Error::invalid(format!("{op}: expected [B, N] logits, got {s:?}"))),
    }
}

/// Mean over rows of `-log softmax(logits)[label]`.
pub fn cross_entropy(tape: &mut Tape, logits: Var, labels: &[usize]) -> Result<Var> {
    let (b, n) = rows_cols(tape, logits, "cross_entropy")?;
    check_labels("cross_entropy", &[b, n], labels, n)?;
    let ls = tape.log_softmax(logits);
    let picked = tape.gather(ls, labels.iter().enumerate().map(|(i, &l)| i * n + l).collect(), vec![b])?;
    let m = tape.mean(picked);
    Ok(tape.scale(m, -1.0))
}

/// Mean over rows of `-Σ_o target[o] log softmax(logits)[o]`.
pub fn soft_cross_entropy(tape: &mut Tape, logits: Var, targets: &[SoftLabel]) -> Result<Var> {
    let (b, n) = rows_cols(tape, logits, "soft_cross_entropy")?;
    if targets.len() != b || targets.iter().any(|t| t.probs().len() != n) {
        return Err(Error::invalid("soft_cross_entropy: targets do not match logits"));
    }
    let data = targets.iter().flat_map(|t| t.probs().iter().copied()).collect();
    let w = tape.constant(Tensor::new(vec![b, n], data)?);
    let ls = tape.log_softmax(logits);
    let prod = tape.mul(ls, w)?;
    let s = tape.sum(prod);
    Ok(tape.scale(s, -1.0 / b as f64))
}

/// `L_V + L_O`: hard cross-entropy on verbs, soft on objects.
pub fn component_loss(
    tape: &mut Tape,
    verb_logits: Var,
    obj_logits: Var,
    verbs: &[usize],
    objects: &[SoftLabel],
) -> Result<Var> {
    let lv = cross_entropy(tape, verb_logits, verbs)?;
    let lo = soft_cross_entropy(tape, obj_logits, objects)?;
    tape.add(lv, lo)
}

/// `-log ŷ(g)` with ŷ the softmax of the flat composition `scores`.
pub fn composition_loss(tape: &mut Tape, scores: Var, targets: &[usize]) -> Result<Var> {
    cross_entropy(tape, scores, targets)
}

/// Mean `cos(f^V, f^V_rev)` over the batch.
pub fn torc_cos(tape: &mut Tape, f_v: Var, f_v_rev: Var) -> Result<Var> {
    for v in [f_v, f_v_rev] {
        let t = tape.value(v);
        let d = *t.shape().last().unwrap_or(&0);
        if d == 0 || t.rows().any(|r| r.iter().all(|&x| x == 0.0)) {
            return Err(Error::NonFinite("torc_cos: zero verb feature (dead encoder)".into()));
        }
    }
    let c = tape.cosine(f_v, f_v_rev)?;
    Ok(tape.mean(c))
}

/// Mean over the batch of `Σ_i p_i log p_i`, with
/// `p = softmax(cos(f^V_shuffled, e^V) / τ)`.
pub fn torc_ent(tape: &mut Tape, f_v_shuffled: Var, verb_embed: Var, temperature: f64) -> Result<Var> {
    let f = if tape.shape(f_v_shuffled).len() == 1 {
        let d = tape.shape(f_v_shuffled)[0];
        tape.reshape(f_v_shuffled, vec![1, d])?
    } else {
        f_v_shuffled
    };
    let b = tape.shape(f)[0];
    let f = tape.normalize_rows(f);
    let e = tape.normalize_rows(verb_embed);
    let et = tape.transpose(e)?;
    let logits = tape.matmul(f, et)?;
    let logits = tape.scale(logits, 1.0 / temperature);
    let p = tape.softmax(logits);
    let lp = tape.log_softmax(logits);
    let plp = tape.mul(p, lp)?;
    let s = tape.sum(plp);
    Ok(tape.scale(s, 1.0 / b as f64))
}

/// `L_cos + L_ent` over the enabled terms; `None` when both are off.
#[allow(clippy::too_many_arguments)]
pub fn torc_loss(
    tape: &mut Tape,
    f_v: Var,
    f_v_rev: Var,
    f_v_shuffled: Var,
    verb_embed: Var,
    temperature: f64,
    enable_cos: bool,
    enable_ent: bool,
) -> Result<Option<Var>> {
    let cos = enable_cos.then(|| torc_cos(tape, f_v, f_v_rev)).transpose()?;
    let ent = enable_ent
        .then(|| torc_ent(tape, f_v_shuffled, verb_embed, temperature))
        .transpose()?;
    match (cos, ent) {
        (Some(c), Some(e)) => Ok(Some(tape.add(c, e)?)),
        (Some(t), None) | (None, Some(t)) => Ok(Some(t)),
        (None, None) => {
            log::warn!("both TORC terms are disabled; the TORC loss is zero");
            Ok(None)
        }
    }
}

/// `(top-K of ŷ excluding g) ∩ freq` for one row of scores.
pub fn margin_candidates(scores: &[f64], g: usize, freq: &BTreeSet<usize>, k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).filter(|&i| i != g).collect();
    // stable sort keeps the lower index first among equal scores
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    order.truncate(k);
    order.retain(|c| freq.contains(c));
    order.sort_unstable();
    order
}

/// Mean over rows of `Σ_{c ∈ C_margin} max(0, log ŷ(c) − log ŷ(g) + m)`.
pub fn margin_loss(
    tape: &mut Tape,
    scores: Var,
    targets: &[usize],
    freq: &BTreeSet<usize>,
    k: usize,
    m: f64,
) -> Result<Var> {
    let (b, n) = rows_cols(tape, scores, "margin_loss")?;
    check_labels("margin_loss", &[b, n], targets, n)?;
    if k == 0 {
        return Err(Error::invalid("margin_loss: K must be at least 1"));
    }
    let mut cand_idx = Vec::new();
    let mut gt_idx = Vec::new();
    for (i, &g) in targets.iter().enumerate() {
        let row = &tape.value(scores).data()[i * n..(i + 1) * n];
        for c in margin_candidates(row, g, freq, k) {
            cand_idx.push(i * n + c);
            gt_idx.push(i * n + g);
        }
    }
    if cand_idx.is_empty() {
        return Ok(tape.constant(Tensor::scalar(0.0)));
    }
    let len = cand_idx.len();
    let ls = tape.log_softmax(scores);
    let lc = tape.gather(ls, cand_idx, vec![len])?;
    let lg = tape.gather(ls, gt_idx, vec![len])?;
    let d = tape.sub(lc, lg)?;
    let d = tape.add_scalar(d, m);
    let h = tape.relu(d);
    let s = tape.sum(h);
    Ok(tape.scale(s, 1.0 / b as f64))
}

/// Loss terms of one step; optional terms are absent when disabled.
#[derive(Debug, Clone, Copy)]
pub struct LossParts {
    pub com: Var,
    pub comp: Var,
    pub torc: Option<Var>,
    pub margin: Option<Var>,
}

/// `α L_com + β L_comp + γ(e) L_TORC + δ(e) L_M`.
pub fn total_loss(tape: &mut Tape, parts: &LossParts, w: &LossWeights, epoch: f64) -> Result<Var> {
    let a = tape.scale(parts.com, w.alpha);
    let b = tape.scale(parts.comp, w.beta);
    let mut total = tape.add(a, b)?;
    for (term, weight) in [(parts.torc, w.gamma_at(epoch)), (parts.margin, w.delta_at(epoch))] {
        if let Some(t) = term {
            let s = tape.scale(t, weight);
            total = tape.add(total, s)?;
        }
    }
    Ok(total)
}
