//! Brute-force oracles and invariant checkers shared by the test targets.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet, HashSet};

pub mod grad;
pub mod oracle;

use czsl::data::{SplitParams, SplitSpec};
use czsl::label_space::AnnotationRecord;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Named = (String, String);

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

pub fn names(prefix: &str, n: usize) -> Vec<String> {
    (0..n).map(|i| format!("{prefix}{i}")).collect()
}

/// Conditionals and `μ + σ` thresholds by direct enumeration.
pub struct FreqOracle {
    pub ogv: Vec<Vec<f64>>,
    pub vgo: Vec<Vec<f64>>,
    pub t_ogv: f64,
    pub t_vgo: f64,
}

impl FreqOracle {
    pub fn new(nv: usize, no: usize, counts: &[u64]) -> Self {
        let c = |v: usize, o: usize| counts[v * no + o] as f64;
        let mut ogv = vec![vec![0.0; no]; nv];
        let mut vgo = vec![vec![0.0; no]; nv];
        let (mut a, mut b) = (Vec::new(), Vec::new());
        for v in 0..nv {
            for o in 0..no {
                if c(v, o) > 0.0 {
                    let row: f64 = (0..no).map(|j| c(v, j)).sum();
                    let col: f64 = (0..nv).map(|i| c(i, o)).sum();
                    ogv[v][o] = c(v, o) / row;
                    vgo[v][o] = c(v, o) / col;
                    a.push(ogv[v][o]);
                    b.push(vgo[v][o]);
                }
            }
        }
        let thr = |xs: &[f64]| {
            let n = xs.len() as f64;
            let m = xs.iter().sum::<f64>() / n;
            let var = xs.iter().map(|x| x * x).sum::<f64>() / n - m * m;
            m + var.max(0.0).sqrt()
        };
        Self {
            t_ogv: thr(&a),
            t_vgo: thr(&b),
            ogv,
            vgo,
        }
    }

    /// `Some(frequent?)`, or `None` when a conditional sits on its threshold
    /// within rounding.
    pub fn frequent(&self, v: usize, o: usize) -> Option<bool> {
        let (a, b) = (self.ogv[v][o] - self.t_ogv, self.vgo[v][o] - self.t_vgo);
        if a.abs() < 1e-9 || b.abs() < 1e-9 {
            return None;
        }
        Some(a > 0.0 && b > 0.0)
    }
}

/// Candidates by counting, for each `c ≠ g`, how many others rank ahead of it.
pub fn margin_oracle(scores: &[f64], g: usize, freq: &BTreeSet<usize>, k: usize) -> Vec<usize> {
    let n = scores.len();
    (0..n)
        .filter(|&c| c != g && freq.contains(&c))
        .filter(|&c| {
            let ahead = (0..n)
                .filter(|&d| d != g && d != c && (scores[d] > scores[c] || (scores[d] == scores[c] && d < c)))
                .count();
            ahead < k
        })
        .collect()
}

pub struct Pools {
    pub train: Vec<AnnotationRecord>,
    pub val: Vec<AnnotationRecord>,
    pub val_only: BTreeSet<Named>,
}

/// Random two-pool annotation set; `adversarial` plants compositions that
/// occur only in the val pool.
pub fn random_pools(seed: u64, adversarial: bool) -> Pools {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let nv = rng.gen_range(2..=7);
    let no = rng.gen_range(2..=7);
    let mut out = Pools {
        train: Vec::new(),
        val: Vec::new(),
        val_only: BTreeSet::new(),
    };
    let mut next = 0usize;
    for v in 0..nv {
        for o in 0..no {
            let roll: f64 = rng.gen();
            let (nt, nval) = if adversarial && roll < 0.3 {
                (0, rng.gen_range(6..20))
            } else if roll < 0.15 {
                (rng.gen_range(0..4), rng.gen_range(0..3))
            } else {
                (rng.gen_range(3..25), rng.gen_range(0..15))
            };
            let pair = (format!("v{v}"), format!("o{o}"));
            if nt == 0 && nval > 0 {
                out.val_only.insert(pair.clone());
            }
            for (n, dst) in [(nt, &mut out.train), (nval, &mut out.val)] {
                for _ in 0..n {
                    dst.push(AnnotationRecord::new(format!("r{next}"), &pair.0, &pair.1));
                    next += 1;
                }
            }
        }
    }
    out
}

/// Every split invariant: disjoint ids, seen closure, unseen disjointness,
/// per-composition ratio, and the fate of rare and val-only compositions.
pub fn check_split(p: &Pools, params: SplitParams, spec: &SplitSpec) -> Result<(), String> {
    let by_id: BTreeMap<&str, Named> = p
        .train
        .iter()
        .chain(&p.val)
        .map(|r| (r.id.as_str(), (r.verb.clone(), r.object.clone())))
        .collect();
    let mut totals: BTreeMap<Named, usize> = BTreeMap::new();
    for pair in by_id.values() {
        *totals.entry(pair.clone()).or_default() += 1;
    }
    let mut ids = HashSet::new();
    for id in spec.train.iter().chain(&spec.val).chain(&spec.test) {
        ensure!(ids.insert(id.as_str()), "id {id} assigned twice");
        ensure!(by_id.contains_key(id.as_str()), "unknown id {id}");
    }
    let comps = |list: &[String]| -> BTreeMap<Named, usize> {
        let mut m = BTreeMap::new();
        for id in list {
            *m.entry(by_id[id.as_str()].clone()).or_default() += 1;
        }
        m
    };
    let (train, val, test) = (comps(&spec.train), comps(&spec.val), comps(&spec.test));

    for pair in spec.seen_val.iter().chain(&spec.seen_test) {
        ensure!(train.contains_key(pair), "seen {pair:?} missing from train");
    }
    let train_verbs: BTreeSet<&String> = train.keys().map(|(v, _)| v).collect();
    let train_objects: BTreeSet<&String> = train.keys().map(|(_, o)| o).collect();
    for (v, o) in val.keys().chain(test.keys()) {
        ensure!(train_verbs.contains(v) && train_objects.contains(o), "({v}, {o}) uses an unseen primitive");
    }
    for pair in spec.unseen_val.iter().chain(&spec.unseen_test) {
        ensure!(!train.contains_key(pair), "unseen {pair:?} leaks into train");
    }
    let union = |a: &BTreeSet<Named>, b: &BTreeSet<Named>| a.union(b).cloned().collect::<BTreeSet<_>>();
    ensure!(
        union(&spec.seen_val, &spec.unseen_val) == val.keys().cloned().collect(),
        "val labels do not describe the val set"
    );
    ensure!(
        union(&spec.seen_test, &spec.unseen_test) == test.keys().cloned().collect(),
        "test labels do not describe the test set"
    );
    let (rv, rt) = params.val_test_ratio;
    for pair in val.keys().chain(test.keys()).collect::<BTreeSet<_>>() {
        let nv = val.get(pair).copied().unwrap_or(0) as f64;
        let nt = test.get(pair).copied().unwrap_or(0) as f64;
        let ideal = (nv + nt) * rv as f64 / (rv + rt) as f64;
        ensure!((nv - ideal).abs() <= 1.0, "{pair:?}: {nv} val of {}", nv + nt);
    }
    for (pair, &n) in &totals {
        let placed = [&train, &val, &test].iter().map(|m| m.get(pair).copied().unwrap_or(0)).sum::<usize>();
        if n <= params.min_count {
            ensure!(placed == 0 && spec.dropped.contains(pair), "rare {pair:?} survived");
        }
        if placed > 0 {
            ensure!(!spec.dropped.contains(pair), "{pair:?} both used and dropped");
            ensure!(placed == n, "{pair:?} lost samples");
        }
    }
    for pair in &p.val_only {
        ensure!(
            !train.contains_key(pair) && !val.contains_key(pair) && !test.contains_key(pair),
            "val-only {pair:?} survived"
        );
    }
    Ok(())
}

/// One property over a strategy, failures rendered with the offending input.
pub fn run<S: proptest::strategy::Strategy>(
    runner: &mut proptest::test_runner::TestRunner,
    strategy: &S,
    test: impl Fn(S::Value) -> Result<(), proptest::test_runner::TestCaseError>,
) -> Result<(), String> {
    use proptest::test_runner::TestError;
    runner.run(strategy, test).map_err(|e| match e {
        TestError::Abort(why) => format!("aborted: {why}"),
        TestError::Fail(why, input) => format!("{why} on {input:?}"),
    })
}
