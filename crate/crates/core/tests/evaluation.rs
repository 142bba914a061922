use std::collections::BTreeSet;

use czsl::evaluation::{argmax, calibrate_bias, default_sweep, predict, InferenceConfig, ScoredSplit};
use czsl::label_space::CompositionSpace;
use czsl::metrics::harmonic_mean;
use proptest::prelude::*;

#[derive(Debug, Clone)]
struct Case {
    space: CompositionSpace,
    split: ScoredSplit,
}

fn case_strategy() -> impl Strategy<Value = Case> {
    (2usize..=6, 2usize..=6, 1usize..30).prop_flat_map(|(nv, no, n)| {
        let seen = prop::collection::vec(prop::bool::weighted(0.4), nv * no)
            .prop_filter("seen and unseen compositions", |s| s.iter().any(|&b| b) && s.iter().any(|&b| !b));
        // coarse values so ties occur
        let score = (0i32..12).prop_map(|x| x as f64 / 6.0);
        (
            Just((nv, no)),
            seen,
            prop::collection::vec(prop::collection::vec(score, nv * no), n),
            prop::collection::vec((0..nv, 0..no), n),
            prop::collection::vec(prop::collection::vec(-2.0f64..2.0, nv), n),
            prop::collection::vec(prop::collection::vec(-2.0f64..2.0, no), n),
        )
            .prop_map(|((nv, no), seen, scores, truth, vl, ol)| {
                let counts = seen.iter().map(|&s| u64::from(s) * 3).collect();
                let space = CompositionSpace::from_counts(
                    (0..nv).map(|i| format!("v{i}")).collect(),
                    (0..no).map(|i| format!("o{i}")).collect(),
                    counts,
                )
                .unwrap();
                let split = ScoredSplit {
                    scores,
                    verb_logits: vl,
                    obj_logits: ol,
                    verbs: truth.iter().map(|t| t.0).collect(),
                    objects: truth.iter().map(|t| t.1).collect(),
                };
                Case { space, split }
            })
    })
}

fn comps(case: &Case, cfg: &InferenceConfig) -> Vec<usize> {
    case.split.predictions(cfg, &case.space).unwrap().comp
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn open_world_prediction_ignores_shifts_and_scales(
        case in case_strategy(),
        shift in -3.0f64..3.0,
        scale in 0.1f64..5.0,
        bias in -1.0f64..1.0,
    ) {
        let base = comps(&case, &InferenceConfig::open_world(bias));
        let mut shifted = case.clone();
        for row in &mut shifted.split.scores {
            row.iter_mut().for_each(|s| *s += shift);
        }
        prop_assert_eq!(comps(&shifted, &InferenceConfig::open_world(bias)), base);

        let plain = comps(&case, &InferenceConfig::open_world(0.0));
        let mut scaled = case.clone();
        for row in &mut scaled.split.scores {
            row.iter_mut().for_each(|s| *s *= scale);
        }
        prop_assert_eq!(comps(&scaled, &InferenceConfig::open_world(0.0)), plain);
    }

    #[test]
    fn closed_world_stays_inside_candidates_and_never_loses(case in case_strategy(), extra in prop::collection::btree_set(0usize..36, 0..6), bias in -1.0f64..1.0) {
        let no = case.space.n_objects();
        let n = case.space.n_compositions();
        let mut candidates: BTreeSet<usize> = case.split.verbs.iter().zip(&case.split.objects).map(|(v, o)| v * no + o).collect();
        candidates.extend(extra.into_iter().filter(|&c| c < n));
        let closed = comps(&case, &InferenceConfig::closed_world(candidates.clone(), bias).unwrap());
        let open = comps(&case, &InferenceConfig::open_world(bias));
        let mut hits = (0, 0);
        for i in 0..closed.len() {
            prop_assert!(candidates.contains(&closed[i]));
            let truth = case.split.verbs[i] * no + case.split.objects[i];
            if open[i] == truth {
                prop_assert_eq!(closed[i], truth);
            }
            hits.0 += usize::from(closed[i] == truth);
            hits.1 += usize::from(open[i] == truth);
        }
        prop_assert!(hits.0 >= hits.1);
    }

    #[test]
    fn infinite_bias_forces_one_side(case in case_strategy()) {
        for p in comps(&case, &InferenceConfig::open_world(f64::INFINITY)) {
            prop_assert!(!case.space.is_seen_flat(p));
        }
        for p in comps(&case, &InferenceConfig::open_world(f64::NEG_INFINITY)) {
            prop_assert!(case.space.is_seen_flat(p));
        }
    }

    #[test]
    fn unseen_accuracy_is_monotone_in_bias(case in case_strategy(), a in -3.0f64..3.0, d in 0.0f64..3.0) {
        let (s_lo, u_lo) = case.split.seen_unseen(&InferenceConfig::open_world(a), &case.space).unwrap();
        let (s_hi, u_hi) = case.split.seen_unseen(&InferenceConfig::open_world(a + d), &case.space).unwrap();
        prop_assert!(u_hi >= u_lo);
        prop_assert!(s_hi <= s_lo);
    }

    #[test]
    fn calibration_picks_the_best_point_of_its_curve(case in case_strategy()) {
        let unseen = case.split.verbs.iter().zip(&case.split.objects).filter(|(&v, &o)| !case.space.is_seen(v, o)).count();
        let cal = calibrate_bias(&case.split, &case.space, &default_sweep());
        if unseen == 0 || unseen == case.split.len() {
            prop_assert!(cal.is_err());
            return Ok(());
        }
        let cal = cal.unwrap();
        prop_assert_eq!(cal.curve.len(), 101);
        let best = cal.curve.iter().map(|p| p.hm).fold(f64::NEG_INFINITY, f64::max);
        let chosen = cal.curve.iter().find(|p| p.bias == cal.bias).unwrap();
        prop_assert_eq!(chosen.hm, best);
        for p in &cal.curve {
            let (s, u) = case.split.seen_unseen(&InferenceConfig::open_world(p.bias), &case.space).unwrap();
            prop_assert_eq!((p.seen, p.unseen, p.hm), (s, u, harmonic_mean(s, u)));
            if p.hm == best {
                prop_assert!(p.bias.abs() >= cal.bias.abs());
            }
        }
        let auc = cal.auc().unwrap();
        prop_assert!((0.0..=100.0).contains(&auc));
    }
}

#[test]
fn argmax_prefers_the_lowest_index_on_ties() {
    assert_eq!(argmax(&[0.5, 2.0, 2.0, 1.0]), 1);
    assert_eq!(argmax(&[3.0]), 0);
}

#[test]
fn predict_rejects_bad_inputs() {
    let space = CompositionSpace::from_counts(vec!["a".into(), "b".into()], vec!["x".into()], vec![1, 0]).unwrap();
    let cfg = InferenceConfig::open_world(0.0);
    assert!(predict(&[0.1], &[0.0, 0.0], &[0.0], &cfg, &space).is_err());
    assert!(InferenceConfig::closed_world(BTreeSet::new(), 0.0).is_err());
    let only_unseen = InferenceConfig::closed_world([1].into(), 0.0).unwrap();
    let p = predict(&[5.0, 0.0], &[0.0, 1.0], &[0.0], &only_unseen, &space).unwrap();
    assert_eq!((p.comp, p.verb, p.object), (1, 1, 0));
}
