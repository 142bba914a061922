//! Library results against brute-force enumeration on random spaces up to
//! 12×12.

use std::collections::BTreeSet;

use czsl::label_space::{CoOccurrenceStats, CompositionSpace};
use czsl::losses::margin_candidates;
use czsl::metrics::{fcp_ratio, fsp_ratio};
use proptest::prelude::*;
use proptest::test_runner::{Config, RngAlgorithm, TestRng, TestRunner};

use super::run;

use super::{margin_oracle, names, FreqOracle};

pub const PROPERTIES: [&str; 4] = ["frequent set", "FSP and FCP", "margin candidates", "composition index"];

fn space_strategy() -> impl Strategy<Value = (usize, usize, Vec<u64>)> {
    (1usize..=12, 1usize..=12).prop_flat_map(|(nv, no)| {
        let cell = prop_oneof![3 => Just(0u64), 2 => 1u64..60];
        (Just(nv), Just(no), prop::collection::vec(cell, nv * no))
            .prop_filter("at least one observed pair", |(_, _, c)| c.iter().any(|&x| x > 0))
    })
}

fn freq_set((nv, no, counts): (usize, usize, Vec<u64>)) -> Result<(), TestCaseError> {
    let space = CompositionSpace::from_counts(names("v", nv), names("o", no), counts.clone()).unwrap();
    let stats = CoOccurrenceStats::build(&space);
    let orc = FreqOracle::new(nv, no, &counts);
    prop_assert!((stats.threshold_ogv() - orc.t_ogv).abs() < 1e-9);
    prop_assert!((stats.threshold_vgo() - orc.t_vgo).abs() < 1e-9);
    for v in 0..nv {
        for o in 0..no {
            if let Some(f) = orc.frequent(v, o) {
                prop_assert_eq!(stats.is_frequent(v, o), f, "pair ({}, {})", v, o);
            }
        }
    }
    for &(v, o) in &stats.freq_set {
        prop_assert!(counts[v * no + o] > 0);
    }
    Ok(())
}

fn fsp_fcp(((nv, no, counts), raw): ((usize, usize, Vec<u64>), Vec<usize>)) -> Result<(), TestCaseError> {
    let space = CompositionSpace::from_counts(names("v", nv), names("o", no), counts.clone()).unwrap();
    let stats = CoOccurrenceStats::build(&space);
    let n = nv * no;
    let preds: Vec<usize> = raw.iter().map(|r| r % n).collect();
    let mut seen = 0usize;
    let mut freq = 0usize;
    for &p in &preds {
        let (v, o) = (p / no, p % no);
        if counts[p] > 0 {
            seen += 1;
            if stats.freq_set.iter().any(|&(fv, fo)| fv == v && fo == o) {
                freq += 1;
            }
        }
    }
    let fsp = fsp_ratio(&preds, &space).unwrap();
    prop_assert!((fsp - 100.0 * seen as f64 / preds.len() as f64).abs() < 1e-9);
    let fcp = fcp_ratio(&preds, &stats, &space).unwrap();
    if seen == 0 {
        prop_assert_eq!(fcp, None);
    } else {
        prop_assert!((fcp.unwrap() - 100.0 * freq as f64 / seen as f64).abs() < 1e-9);
    }
    Ok(())
}

fn margin((scores, g_raw, k, freq_raw): (Vec<f64>, usize, usize, BTreeSet<usize>)) -> Result<(), TestCaseError> {
    let n = scores.len();
    let g = g_raw % n;
    let freq: BTreeSet<usize> = freq_raw.into_iter().filter(|&c| c < n).collect();
    let expected = margin_oracle(&scores, g, &freq, k);
    let got = margin_candidates(&scores, g, &freq, k);
    prop_assert!(!got.contains(&g));
    prop_assert_eq!(got, expected);
    Ok(())
}

fn index_round_trip((nv, no, counts): (usize, usize, Vec<u64>)) -> Result<(), TestCaseError> {
    let space = CompositionSpace::from_counts(names("v", nv), names("o", no), counts).unwrap();
    let mut next = 0usize;
    for v in 0..nv {
        for o in 0..no {
            prop_assert_eq!(space.composition_index(v, o).unwrap(), next);
            prop_assert_eq!(space.composition_pair(next).unwrap(), (v, o));
            next += 1;
        }
    }
    prop_assert_eq!(space.n_compositions(), next);
    prop_assert!(space.composition_pair(next).is_err());
    prop_assert!(space.composition_index(nv, 0).is_err());
    prop_assert!(space.composition_index(0, no).is_err());
    Ok(())
}

pub fn check(property: &str, cases: u32) -> Result<(), String> {
    let mut runner = TestRunner::new_with_rng(
        Config {
            cases,
            failure_persistence: None,
            ..Config::default()
        },
        TestRng::deterministic_rng(RngAlgorithm::ChaCha),
    );
    match property {
        "frequent set" => run(&mut runner, &space_strategy(), freq_set),
        "FSP and FCP" => run(&mut runner, &(space_strategy(), prop::collection::vec(any::<usize>(), 1..40)), fsp_fcp),
        "margin candidates" => run(&mut runner, 
            &(
                prop::collection::vec((0i32..6).prop_map(|x| x as f64 * 0.25), 1..=144),
                any::<usize>(),
                0usize..12,
                prop::collection::btree_set(0usize..144, 0..40),
            ),
            margin,
        ),
        "composition index" => run(&mut runner, &space_strategy(), index_round_trip),
        other => Err(format!("no oracle property named {other}")),
    }
}
