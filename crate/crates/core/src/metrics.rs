//! Accuracy-style metrics. Percentages are in `[0, 100]`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::label_space::{CoOccurrenceStats, CompositionSpace};

pub fn harmonic_mean(a: f64, b: f64) -> f64 {
    if a + b == 0.0 {
        0.0
    } else {
        2.0 * a * b / (a + b)
    }
}

/// `acc_c − acc_v·acc_o/100`.
pub fn compositional_gap(acc_v: f64, acc_o: f64, acc_c: f64) -> f64 {
    acc_c - acc_v * acc_o / 100.0
}

/// Percentage of positions where `pred == truth`; `None` when empty.
pub fn accuracy(pred: &[usize], truth: &[usize]) -> Option<f64> {
    if pred.is_empty() {
        return None;
    }
    let hits = pred.iter().zip(truth).filter(|(p, t)| p == t).count();
    Some(100.0 * hits as f64 / pred.len() as f64)
}

/// Percentage of unseen-labelled samples predicted as a seen composition.
pub fn fsp_ratio(preds: &[usize], space: &CompositionSpace) -> Result<f64> {
    if preds.is_empty() {
        return Err(Error::invalid("FSP needs at least one unseen-labelled sample"));
    }
    let seen = preds.iter().filter(|&&p| space.is_seen_flat(p)).count();
    Ok(100.0 * seen as f64 / preds.len() as f64)
}

/// Among seen predictions, the percentage inside the frequent set.
/// `Ok(None)` when no prediction is seen (undefined, not zero).
pub fn fcp_ratio(preds: &[usize], stats: &CoOccurrenceStats, space: &CompositionSpace) -> Result<Option<f64>> {
    if preds.is_empty() {
        return Err(Error::invalid("FCP needs at least one unseen-labelled sample"));
    }
    let no = space.n_objects();
    let seen = preds.iter().filter(|&&p| space.is_seen_flat(p)).count();
    if seen == 0 {
        return Ok(None);
    }
    let freq = preds.iter().filter(|&&p| stats.is_frequent(p / no, p % no)).count();
    Ok(Some(100.0 * freq as f64 / seen as f64))
}

/// Area under the seen/unseen accuracy curve, in percent²/100 so a full
/// square of 100 × 100 scores 100.
pub fn auc_seen_unseen(curve: &[(f64, f64)]) -> Result<f64> {
    if curve.len() < 2 {
        return Err(Error::invalid("AUC needs at least two curve points"));
    }
    let mut pts = curve.to_vec();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(b.1.total_cmp(&a.1)));
    let max_seen = pts.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
    let max_unseen = pts.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
    pts.insert(0, (0.0, max_unseen));
    pts.push((max_seen, 0.0));
    let area: f64 = pts
        .windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[0].1 + w[1].1) / 2.0)
        .sum();
    Ok(area / 100.0)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub n: usize,
    /// Row-major `counts[truth][pred]`.
    pub counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(n: usize) -> Self {
        Self {
            n,
            counts: vec![0; n * n],
        }
    }

    pub fn from_predictions(pred: &[usize], truth: &[usize], n: usize) -> Result<Self> {
        let mut m = Self::new(n);
        for (&p, &t) in pred.iter().zip(truth) {
            if p >= n || t >= n {
                return Err(Error::invalid(format!("confusion index ({t}, {p}) out of range {n}")));
            }
            m.counts[t * n + p] += 1;
        }
        Ok(m)
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.n + pred]
    }

    pub fn row_total(&self, truth: usize) -> u64 {
        self.counts[truth * self.n..(truth + 1) * self.n].iter().sum()
    }

    /// Rows scaled to sum to one; empty rows stay zero.
    pub fn normalized(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.n * self.n];
        for t in 0..self.n {
            let total = self.row_total(t);
            if total > 0 {
                for p in 0..self.n {
                    out[t * self.n + p] = self.get(t, p) as f64 / total as f64;
                }
            }
        }
        out
    }
}

/// Metrics of one evaluated split. Sides without samples report 0 and are
/// flagged by the sample counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n_seen: usize,
    pub n_unseen: usize,
    pub acc_verb_seen: f64,
    pub acc_verb_unseen: f64,
    pub acc_obj_seen: f64,
    pub acc_obj_unseen: f64,
    pub acc_comp_seen: f64,
    pub acc_comp_unseen: f64,
    pub hm_verb: f64,
    pub hm_obj: f64,
    pub hm_comp: f64,
    pub cg_seen: f64,
    pub cg_unseen: f64,
    pub fsp: Option<f64>,
    pub fcp: Option<f64>,
    pub auc: Option<f64>,
    pub confusion_verb: ConfusionMatrix,
}

/// Predictions and labels of a split, all as flat indices.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Predictions {
    pub comp: Vec<usize>,
    pub verb: Vec<usize>,
    pub object: Vec<usize>,
    pub true_verb: Vec<usize>,
    pub true_object: Vec<usize>,
}

impl EvalReport {
    pub fn from_predictions(p: &Predictions, space: &CompositionSpace, stats: &CoOccurrenceStats) -> Result<Self> {
        let no = space.n_objects();
        let mut sides: [Predictions; 2] = Default::default();
        let mut unseen_comp = Vec::new();
        for i in 0..p.comp.len() {
            let seen = space.is_seen(p.true_verb[i], p.true_object[i]);
            let s = &mut sides[usize::from(!seen)];
            s.comp.push(p.comp[i]);
            s.verb.push(p.verb[i]);
            s.object.push(p.object[i]);
            s.true_verb.push(p.true_verb[i]);
            s.true_object.push(p.true_object[i]);
            if !seen {
                unseen_comp.push(p.comp[i]);
            }
        }
        let acc = |s: &Predictions| -> (f64, f64, f64) {
            let truth: Vec<usize> = s.true_verb.iter().zip(&s.true_object).map(|(v, o)| v * no + o).collect();
            (
                accuracy(&s.verb, &s.true_verb).unwrap_or(0.0),
                accuracy(&s.object, &s.true_object).unwrap_or(0.0),
                accuracy(&s.comp, &truth).unwrap_or(0.0),
            )
        };
        let (vs, os, cs) = acc(&sides[0]);
        let (vu, ou, cu) = acc(&sides[1]);
        let (fsp, fcp) = if unseen_comp.is_empty() {
            (None, None)
        } else {
            (
                Some(fsp_ratio(&unseen_comp, space)?),
                fcp_ratio(&unseen_comp, stats, space)?,
            )
        };
        Ok(Self {
            n_seen: sides[0].comp.len(),
            n_unseen: sides[1].comp.len(),
            acc_verb_seen: vs,
            acc_verb_unseen: vu,
            acc_obj_seen: os,
            acc_obj_unseen: ou,
            acc_comp_seen: cs,
            acc_comp_unseen: cu,
            hm_verb: harmonic_mean(vs, vu),
            hm_obj: harmonic_mean(os, ou),
            hm_comp: harmonic_mean(cs, cu),
            cg_seen: compositional_gap(vs, os, cs),
            cg_unseen: compositional_gap(vu, ou, cu),
            fsp,
            fcp,
            auc: None,
            confusion_verb: ConfusionMatrix::from_predictions(&p.verb, &p.true_verb, space.n_verbs())?,
        })
    }

    /// Verb accuracy over all samples of the split.
    pub fn acc_verb(&self) -> f64 {
        weighted(self.acc_verb_seen, self.n_seen, self.acc_verb_unseen, self.n_unseen)
    }

    pub fn acc_obj(&self) -> f64 {
        weighted(self.acc_obj_seen, self.n_seen, self.acc_obj_unseen, self.n_unseen)
    }

    pub fn acc_comp(&self) -> f64 {
        weighted(self.acc_comp_seen, self.n_seen, self.acc_comp_unseen, self.n_unseen)
    }
}

fn weighted(a: f64, na: usize, b: f64, nb: usize) -> f64 {
    if na + nb == 0 {
        0.0
    } else {
        (a * na as f64 + b * nb as f64) / (na + nb) as f64
    }
}
