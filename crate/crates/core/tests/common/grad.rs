//! Finite-difference properties for every loss, runnable from both the
//! proptest targets and the acceptance binary.

use std::collections::BTreeSet;

use czsl::data::SoftLabel;
use czsl::losses::{
    component_loss, composition_loss, cross_entropy, margin_candidates, margin_loss, soft_cross_entropy, torc_cos,
    torc_ent, total_loss, LossParts, LossWeights,
};
use czsl::tensor::{grad_check, GradCheckReport, Tape, Tensor, Var};
use proptest::prelude::*;
use proptest::test_runner::{Config, RngAlgorithm, TestRng, TestRunner};

use super::run;

pub const STEP: f64 = 1e-5;
pub const TOL: f64 = 1e-4;

pub const LOSSES: [&str; 8] = [
    "verb cross-entropy",
    "object soft cross-entropy",
    "component sum",
    "composition cross-entropy",
    "reversal cosine",
    "shuffled entropy",
    "frequent margin",
    "scheduled total",
];

fn matrix(rows: std::ops::RangeInclusive<usize>, cols: std::ops::RangeInclusive<usize>) -> impl Strategy<Value = Tensor> {
    (rows, cols).prop_flat_map(|(b, n)| {
        prop::collection::vec(-3.0f64..3.0, b * n).prop_map(move |d| Tensor::new(vec![b, n], d).unwrap())
    })
}

fn slice(tape: &mut Tape, x: Var, start: usize, shape: Vec<usize>) -> Var {
    let len: usize = shape.iter().product();
    tape.gather(x, (start..start + len).collect(), shape).unwrap()
}

fn passes(report: GradCheckReport) -> Result<(), TestCaseError> {
    prop_assert!(report.passed, "{report:?}");
    Ok(())
}

fn nonzero_rows(t: &Tensor) -> bool {
    t.rows().all(|r| r.iter().map(|x| x * x).sum::<f64>() > 0.1)
}

/// Rejects rows whose ordering or hinge sits within 1e-3 of a kink; returns
/// how many hinge terms are active.
fn margin_margins(row: &[f64], g: usize, freq: &BTreeSet<usize>, k: usize, m: f64) -> Result<usize, TestCaseError> {
    let mut sorted: Vec<f64> = row.iter().enumerate().filter(|&(c, _)| c != g).map(|(_, &s)| s).collect();
    sorted.sort_by(|a, b| b.total_cmp(a));
    prop_assume!(sorted.windows(2).all(|w| w[0] - w[1] > 1e-3));
    let mut active = 0;
    for c in margin_candidates(row, g, freq, k) {
        let arg = row[c] - row[g] + m;
        prop_assume!(arg.abs() > 1e-3);
        active += usize::from(arg > 0.0);
    }
    Ok(active)
}

/// Runs `cases` accepted configurations of one loss's gradient property with
/// a fixed ChaCha stream.
pub fn check(loss: &str, cases: u32) -> Result<(), String> {
    let mut runner = TestRunner::new_with_rng(
        Config {
            cases,
            failure_persistence: None,
            ..Config::default()
        },
        TestRng::deterministic_rng(RngAlgorithm::ChaCha),
    );
    match loss {
        "verb cross-entropy" => run(&mut runner, &(matrix(1..=6, 2..=10), any::<u64>()), |(x, seed)| {
            let (b, n) = (x.shape()[0], x.shape()[1]);
            let labels: Vec<usize> = (0..b).map(|i| (seed as usize).wrapping_add(i * 7) % n).collect();
            passes(grad_check(|t, v| cross_entropy(t, v, &labels), &x, STEP, TOL))
        }),
        "object soft cross-entropy" => {
            run(&mut runner, &(matrix(1..=6, 2..=10), any::<u64>(), 0.0f64..1.0), |(x, seed, lambda)| {
                let (b, n) = (x.shape()[0], x.shape()[1]);
                let targets: Vec<SoftLabel> = (0..b)
                    .map(|i| SoftLabel::mix((seed as usize + i) % n, (seed as usize / 3 + 2 * i) % n, lambda, n))
                    .collect();
                passes(grad_check(|t, v| soft_cross_entropy(t, v, &targets), &x, STEP, TOL))
            })
        }
        "component sum" => run(&mut runner, &(matrix(1..=5, 4..=12), 0.0f64..1.0), |(x, lambda)| {
            let (b, n) = (x.shape()[0], x.shape()[1]);
            let nv = n / 2;
            let no = n - nv;
            let verbs: Vec<usize> = (0..b).map(|i| i % nv).collect();
            let objects: Vec<SoftLabel> = (0..b).map(|i| SoftLabel::mix(i % no, (i + 1) % no, lambda, no)).collect();
            let f = |t: &mut Tape, v: Var| {
                let vl = t.gather(v, (0..b).flat_map(|r| (0..nv).map(move |c| r * n + c)).collect(), vec![b, nv])?;
                let ol = t.gather(v, (0..b).flat_map(|r| (nv..n).map(move |c| r * n + c)).collect(), vec![b, no])?;
                component_loss(t, vl, ol, &verbs, &objects)
            };
            passes(grad_check(f, &x, STEP, TOL))
        }),
        "composition cross-entropy" => run(&mut runner, &(matrix(1..=6, 2..=24), any::<u64>()), |(x, seed)| {
            let (b, n) = (x.shape()[0], x.shape()[1]);
            let targets: Vec<usize> = (0..b).map(|i| (seed as usize ^ i) % n).collect();
            passes(grad_check(|t, v| composition_loss(t, v, &targets), &x, STEP, TOL))
        }),
        "reversal cosine" => run(&mut runner, 
            &(matrix(1..=5, 2..=8), prop::collection::vec(-1.0f64..1.0, 40)),
            |(a, noise)| {
                let (b, d) = (a.shape()[0], a.shape()[1]);
                prop_assume!(nonzero_rows(&a));
                let other: Vec<f64> = a.data().iter().zip(noise.iter().cycle()).map(|(x, e)| -x + e).collect();
                let rev = Tensor::new(vec![b, d], other).unwrap();
                prop_assume!(nonzero_rows(&rev));
                let f = |t: &mut Tape, v: Var| {
                    let r = t.constant(rev.clone());
                    torc_cos(t, v, r)
                };
                passes(grad_check(f, &a, STEP, TOL))?;
                let g = |t: &mut Tape, v: Var| {
                    let fv = t.constant(a.clone());
                    torc_cos(t, fv, v)
                };
                passes(grad_check(g, &rev, STEP, TOL))
            },
        ),
        "shuffled entropy" => run(&mut runner, 
            &(
                matrix(1..=4, 3..=6),
                prop::collection::vec(-2.0f64..2.0, 36),
                2usize..=6,
                0.2f64..1.0,
            ),
            |(f, emb, nv, temperature)| {
                let d = f.shape()[1];
                prop_assume!(nonzero_rows(&f));
                let e = Tensor::new(vec![nv, d], emb[..nv * d].to_vec()).unwrap();
                prop_assume!(nonzero_rows(&e));
                let by_feature = |t: &mut Tape, v: Var| {
                    let ev = t.constant(e.clone());
                    torc_ent(t, v, ev, temperature)
                };
                passes(grad_check(by_feature, &f, STEP, TOL))?;
                let by_embedding = |t: &mut Tape, v: Var| {
                    let fv = t.constant(f.clone());
                    torc_ent(t, fv, v, temperature)
                };
                passes(grad_check(by_embedding, &e, STEP, TOL))
            },
        ),
        "frequent margin" => run(&mut runner, 
            &(
                matrix(1..=5, 3..=16),
                any::<u64>(),
                1usize..6,
                0.05f64..1.5,
                prop::collection::btree_set(0usize..16, 1..10),
            ),
            |(x, seed, k, m, freq_raw)| {
                let (b, n) = (x.shape()[0], x.shape()[1]);
                let freq: BTreeSet<usize> = freq_raw.into_iter().filter(|&c| c < n).collect();
                let targets: Vec<usize> = (0..b).map(|i| (seed as usize).wrapping_add(3 * i) % n).collect();
                let mut active = 0;
                for (i, row) in x.rows().enumerate() {
                    active += margin_margins(row, targets[i], &freq, k, m)?;
                }
                prop_assume!(active > 0);
                passes(grad_check(|t, v| margin_loss(t, v, &targets, &freq, k, m), &x, STEP, TOL))
            },
        ),
        "scheduled total" => run(&mut runner, 
            &(
                prop::collection::vec(-2.0f64..2.0, 2 * 3 + 2 * 4 + 2 * 12 + 3 * 2 * 5 + 3 * 5),
                0.0f64..25.0,
                0.0f64..1.0,
                any::<bool>(),
            ),
            |(raw, epoch, lambda, margin_on)| {
                let (b, nv, no, d) = (2usize, 3usize, 4usize, 5usize);
                let n = nv * no;
                let x = Tensor::from_vec(raw);
                let verbs = vec![0usize, 2];
                let objects = vec![SoftLabel::mix(1, 3, lambda, no), SoftLabel::one_hot(0, no)];
                let targets = vec![1usize, 2 * no];
                let freq: BTreeSet<usize> = (0..n).step_by(2).collect();
                let w = LossWeights::default();
                if margin_on {
                    let s = &x.data()[b * nv + b * no..b * nv + b * no + b * n];
                    for (i, &g) in targets.iter().enumerate() {
                        margin_margins(&s[i * n..(i + 1) * n], g, &freq, 3, 0.5)?;
                    }
                }
                let f = |t: &mut Tape, v: Var| {
                    let mut at = 0;
                    let mut take = |t: &mut Tape, shape: Vec<usize>| {
                        let s = slice(t, v, at, shape.clone());
                        at += shape.iter().product::<usize>();
                        s
                    };
                    let vl = take(t, vec![b, nv]);
                    let ol = take(t, vec![b, no]);
                    let scores = take(t, vec![b, n]);
                    let fv = take(t, vec![b, d]);
                    let fr = take(t, vec![b, d]);
                    let fs = take(t, vec![b, d]);
                    let emb = take(t, vec![nv, d]);
                    let com = component_loss(t, vl, ol, &verbs, &objects)?;
                    let comp = composition_loss(t, scores, &targets)?;
                    let cos = torc_cos(t, fv, fr)?;
                    let ent = torc_ent(t, fs, emb, 0.5)?;
                    let torc = t.add(cos, ent)?;
                    let margin = if margin_on { Some(margin_loss(t, scores, &targets, &freq, 3, 0.5)?) } else { None };
                    total_loss(t, &LossParts { com, comp, torc: Some(torc), margin }, &w, epoch)
                };
                passes(grad_check(f, &x, STEP, TOL))
            },
        ),
        other => Err(format!("no gradient property named {other}")),
    }
}
