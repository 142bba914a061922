//! Verb/object vocabularies, composition indexing and co-occurrence
//! statistics, including the frequent-composition set used by FCP and by the
//! margin loss.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `(verb index, object index)`.
pub type Pair = (usize, usize);

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub id: String,
    pub verb: String,
    pub object: String,
}

impl AnnotationRecord {
    pub fn new(id: impl Into<String>, verb: impl Into<String>, object: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            verb: verb.into(),
            object: object.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "SpaceDoc", try_from = "SpaceDoc")]
pub struct CompositionSpace {
    verbs: Vec<String>,
    objects: Vec<String>,
    /// Dense row-major `|V| × |O|` training counts.
    counts: Vec<u64>,
}

#[derive(Serialize, Deserialize)]
struct SpaceDoc {
    verbs: Vec<String>,
    objects: Vec<String>,
    /// `[verb, object, count]` for every seen pair.
    counts: Vec<(usize, usize, u64)>,
}

impl From<CompositionSpace> for SpaceDoc {
    fn from(s: CompositionSpace) -> Self {
        let counts = s.seen().map(|(v, o)| (v, o, s.count(v, o))).collect();
        SpaceDoc {
            verbs: s.verbs,
            objects: s.objects,
            counts,
        }
    }
}

impl TryFrom<SpaceDoc> for CompositionSpace {
    type Error = Error;

    fn try_from(doc: SpaceDoc) -> Result<Self> {
        let (nv, no) = (doc.verbs.len(), doc.objects.len());
        let mut counts = vec![0; nv * no];
        for (v, o, c) in doc.counts {
            if v >= nv || o >= no {
                return Err(Error::data(format!("count entry ({v}, {o}) outside {nv}x{no} space")));
            }
            counts[v * no + o] = c;
        }
        CompositionSpace::from_counts(doc.verbs, doc.objects, counts)
    }
}

impl CompositionSpace {
    /// Builds a space whose vocabularies and counts both come from `records`.
    pub fn build(records: &[AnnotationRecord]) -> Result<Self> {
        Self::build_with_vocabulary(records, records)
    }

    /// Vocabularies from `vocabulary` (sorted lexicographically), counts
    /// tallied from `counted`.
    pub fn build_with_vocabulary(
        vocabulary: &[AnnotationRecord],
        counted: &[AnnotationRecord],
    ) -> Result<Self> {
        if vocabulary.is_empty() || counted.is_empty() {
            return Err(Error::data("cannot build a composition space from zero records"));
        }
        let verbs: Vec<String> = vocabulary
            .iter()
            .map(|r| r.verb.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let objects: Vec<String> = vocabulary
            .iter()
            .map(|r| r.object.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let mut counts = vec![0; verbs.len() * objects.len()];
        for r in counted {
            let v = verbs
                .binary_search(&r.verb)
                .map_err(|_| Error::data(format!("record {}: verb {:?} not in vocabulary", r.id, r.verb)))?;
            let o = objects
                .binary_search(&r.object)
                .map_err(|_| Error::data(format!("record {}: object {:?} not in vocabulary", r.id, r.object)))?;
            counts[v * objects.len() + o] += 1;
        }
        Self::from_counts(verbs, objects, counts)
    }

    /// A space with explicit vocabularies (kept in the given order) and a
    /// dense row-major count matrix.
    pub fn from_counts(verbs: Vec<String>, objects: Vec<String>, counts: Vec<u64>) -> Result<Self> {
        if verbs.is_empty() || objects.is_empty() {
            return Err(Error::data("empty vocabulary"));
        }
        if counts.len() != verbs.len() * objects.len() {
            return Err(Error::data(format!(
                "count matrix has {} entries, expected {}x{}",
                counts.len(),
                verbs.len(),
                objects.len()
            )));
        }
        if counts.iter().all(|&c| c == 0) {
            return Err(Error::data("count matrix has no positive entry"));
        }
        Ok(Self {
            verbs,
            objects,
            counts,
        })
    }

    pub fn verbs(&self) -> &[String] {
        &self.verbs
    }

    pub fn objects(&self) -> &[String] {
        &self.objects
    }

    pub fn n_verbs(&self) -> usize {
        self.verbs.len()
    }

    pub fn n_objects(&self) -> usize {
        self.objects.len()
    }

    pub fn n_compositions(&self) -> usize {
        self.verbs.len() * self.objects.len()
    }

    pub fn verb_index(&self, name: &str) -> Option<usize> {
        self.verbs.iter().position(|v| v == name)
    }

    pub fn object_index(&self, name: &str) -> Option<usize> {
        self.objects.iter().position(|o| o == name)
    }

    pub fn count(&self, v: usize, o: usize) -> u64 {
        self.counts[v * self.objects.len() + o]
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn is_seen(&self, v: usize, o: usize) -> bool {
        self.count(v, o) > 0
    }

    pub fn is_seen_flat(&self, idx: usize) -> bool {
        self.counts.get(idx).is_some_and(|&c| c > 0)
    }

    /// Seen pairs in row-major order.
    pub fn seen(&self) -> impl Iterator<Item = Pair> + '_ {
        let no = self.objects.len();
        self.counts
            .iter()
            .enumerate()
            .filter(|(_, &c)| c > 0)
            .map(move |(i, _)| (i / no, i % no))
    }

    pub fn unseen(&self) -> impl Iterator<Item = Pair> + '_ {
        let no = self.objects.len();
        self.counts
            .iter()
            .enumerate()
            .filter(|(_, &c)| c == 0)
            .map(move |(i, _)| (i / no, i % no))
    }

    pub fn seen_set(&self) -> BTreeSet<Pair> {
        self.seen().collect()
    }

    /// `|seen| / (|V|·|O|)`.
    pub fn coverage_ratio(&self) -> f64 {
        self.seen().count() as f64 / self.n_compositions() as f64
    }

    /// Row-major flat index `v·|O| + o`.
    pub fn composition_index(&self, v: usize, o: usize) -> Result<usize> {
        if v >= self.n_verbs() || o >= self.n_objects() {
            return Err(Error::invalid(format!(
                "composition ({v}, {o}) outside {}x{} space",
                self.n_verbs(),
                self.n_objects()
            )));
        }
        Ok(v * self.n_objects() + o)
    }

    pub fn composition_pair(&self, idx: usize) -> Result<Pair> {
        if idx >= self.n_compositions() {
            return Err(Error::invalid(format!(
                "composition index {idx} outside {} compositions",
                self.n_compositions()
            )));
        }
        Ok((idx / self.n_objects(), idx % self.n_objects()))
    }

    pub fn write_json(&self, stats: &CoOccurrenceStats, path: &Path) -> Result<()> {
        let doc = SpaceFile {
            space: self.clone(),
            thresholds: (stats.threshold_ogv(), stats.threshold_vgo()),
            freq_set: stats.freq_set.iter().copied().collect(),
        };
        std::fs::write(path, serde_json::to_string_pretty(&doc)?)?;
        Ok(())
    }

    /// Reads a document written by `write_json`; the statistics are rebuilt
    /// from the stored counts.
    pub fn read_json(path: &Path) -> Result<(Self, CoOccurrenceStats)> {
        let doc: SpaceFile = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        let stats = CoOccurrenceStats::build(&doc.space);
        Ok((doc.space, stats))
    }
}

/// On-disk form of a space plus its co-occurrence thresholds.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpaceFile {
    pub space: CompositionSpace,
    pub thresholds: (f64, f64),
    pub freq_set: Vec<Pair>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoOccurrenceStats {
    n_objects: usize,
    /// `P(o | v)`, row-major `|V| × |O|`.
    pub p_obj_given_verb: Vec<f64>,
    /// `P(v | o)`, row-major `|V| × |O|`.
    pub p_verb_given_obj: Vec<f64>,
    pub mu_ogv: f64,
    pub sigma_ogv: f64,
    pub mu_vgo: f64,
    pub sigma_vgo: f64,
    pub freq_set: BTreeSet<Pair>,
}

impl CoOccurrenceStats {
    /// Conditional frequencies and the `μ + σ` frequent set. Mean and
    /// (population) standard deviation range over observed pairs only.
    pub fn build(space: &CompositionSpace) -> Self {
        let (p_ogv, p_vgo) = conditionals(space);
        let observed: Vec<usize> = (0..space.counts.len()).filter(|&i| space.counts[i] > 0).collect();
        let (mu_ogv, sigma_ogv) = mean_std(observed.iter().map(|&i| p_ogv[i]));
        let (mu_vgo, sigma_vgo) = mean_std(observed.iter().map(|&i| p_vgo[i]));
        let mut stats = Self {
            n_objects: space.n_objects(),
            p_obj_given_verb: p_ogv,
            p_verb_given_obj: p_vgo,
            mu_ogv,
            sigma_ogv,
            mu_vgo,
            sigma_vgo,
            freq_set: BTreeSet::new(),
        };
        stats.freq_set = stats.frequent_pairs(mu_ogv + sigma_ogv, mu_vgo + sigma_vgo);
        stats
    }

    /// Same conditionals, but the frequent set uses externally supplied
    /// thresholds (for instance values published for a benchmark).
    pub fn with_thresholds(space: &CompositionSpace, ogv_threshold: f64, vgo_threshold: f64) -> Self {
        let mut stats = Self::build(space);
        stats.mu_ogv = ogv_threshold;
        stats.sigma_ogv = 0.0;
        stats.mu_vgo = vgo_threshold;
        stats.sigma_vgo = 0.0;
        stats.freq_set = stats.frequent_pairs(ogv_threshold, vgo_threshold);
        stats
    }

    fn frequent_pairs(&self, t_ogv: f64, t_vgo: f64) -> BTreeSet<Pair> {
        let no = self.n_objects;
        (0..self.p_obj_given_verb.len())
            .filter(|&i| self.p_obj_given_verb[i] > t_ogv && self.p_verb_given_obj[i] > t_vgo)
            .map(|i| (i / no, i % no))
            .collect()
    }

    pub fn threshold_ogv(&self) -> f64 {
        self.mu_ogv + self.sigma_ogv
    }

    pub fn threshold_vgo(&self) -> f64 {
        self.mu_vgo + self.sigma_vgo
    }

    pub fn is_frequent(&self, v: usize, o: usize) -> bool {
        self.freq_set.contains(&(v, o))
    }

    /// Frequent set as flat composition indices.
    pub fn freq_flat(&self) -> BTreeSet<usize> {
        self.freq_set.iter().map(|&(v, o)| v * self.n_objects + o).collect()
    }
}

fn conditionals(space: &CompositionSpace) -> (Vec<f64>, Vec<f64>) {
    let (nv, no) = (space.n_verbs(), space.n_objects());
    let mut p_ogv = vec![0.0; nv * no];
    let mut p_vgo = vec![0.0; nv * no];
    for v in 0..nv {
        let row: u64 = (0..no).map(|o| space.count(v, o)).sum();
        if row > 0 {
            for o in 0..no {
                p_ogv[v * no + o] = space.count(v, o) as f64 / row as f64;
            }
        }
    }
    for o in 0..no {
        let col: u64 = (0..nv).map(|v| space.count(v, o)).sum();
        if col > 0 {
            for v in 0..nv {
                p_vgo[v * no + o] = space.count(v, o) as f64 / col as f64;
            }
        }
    }
    (p_ogv, p_vgo)
}

fn mean_std(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count();
    if n == 0 {
        return (0.0, 0.0);
    }
    let mean = values.clone().sum::<f64>() / n as f64;
    let var = values.map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
    (mean, var.sqrt())
}

/// Counts per composition of a record list, keyed by names.
pub fn tally(records: &[AnnotationRecord]) -> BTreeMap<(String, String), usize> {
    let mut out = BTreeMap::new();
    for r in records {
        *out.entry((r.verb.clone(), r.object.clone())).or_insert(0) += 1;
    }
    out
}
