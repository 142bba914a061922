mod common;

use czsl::data::{construct_compositional_splits, ingest_annotations, ColumnMapping, SplitParams};
use czsl::label_space::AnnotationRecord;
use czsl::Error;
use common::{check_split, random_pools};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn invariants_hold_on_random_annotation_sets() {
    let mut built = 0;
    for seed in 0..50u64 {
        let adversarial = seed % 2 == 1;
        let p = random_pools(seed, adversarial);
        let params = SplitParams::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        match construct_compositional_splits(&p.train, &p.val, params, &mut rng) {
            Ok(spec) => {
                check_split(&p, params, &spec).unwrap();
                built += 1;
            }
            Err(Error::Data(_)) => {}
            Err(e) => panic!("seed {seed}: {e}"),
        }
    }
    assert!(built >= 45, "only {built} of 50 sets produced splits");
}

#[test]
fn invariants_hold_across_swap_fractions_and_ratios() {
    for seed in 0..20u64 {
        let p = random_pools(500 + seed, true);
        let params = SplitParams {
            min_count: 1 + (seed as usize % 6),
            swap_fraction: seed as f64 / 19.0,
            val_test_ratio: (1 + seed as usize % 3, 1 + seed as usize % 5),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        if let Ok(spec) = construct_compositional_splits(&p.train, &p.val, params, &mut rng) {
            check_split(&p, params, &spec).unwrap();
        }
    }
}

#[test]
fn same_seed_same_split() {
    let p = random_pools(7, true);
    let run = |s| {
        let mut rng = ChaCha8Rng::seed_from_u64(s);
        construct_compositional_splits(&p.train, &p.val, SplitParams::default(), &mut rng).unwrap()
    };
    assert_eq!(run(3), run(3));
}

#[test]
fn all_val_only_is_reported_with_offenders() {
    let rec = |i: usize, v: &str, o: &str| AnnotationRecord::new(format!("r{i}"), v, o);
    let train: Vec<_> = (0..8).map(|i| rec(i, "a", "x")).collect();
    let val: Vec<_> = (0..8).map(|i| rec(100 + i, "b", "y")).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let err = construct_compositional_splits(&train, &val, SplitParams::default(), &mut rng).unwrap_err();
    assert!(matches!(err, Error::Data(_)));
    assert!(err.to_string().contains("(b, y)"), "{err}");
}

#[test]
fn ingestion_reads_rows_and_rejects_empty_fields() {
    let dir = tempfile::tempdir().unwrap();
    let good = dir.path().join("good.csv");
    std::fs::write(&good, "id,verb,object\n1,pour,cup\n2,open,jar\n3,pour,jar\n").unwrap();
    let rows = ingest_annotations(&good, &ColumnMapping::default()).unwrap();
    assert_eq!(rows.len(), 3);
    assert_eq!(rows[2].record, AnnotationRecord::new("3", "pour", "jar"));

    let bad = dir.path().join("bad.csv");
    std::fs::write(&bad, "id,verb,object\n1,pour,cup\n2,,jar\n").unwrap();
    match ingest_annotations(&bad, &ColumnMapping::default()) {
        Err(Error::Parse { line, path, .. }) => {
            assert_eq!(line, 3);
            assert_eq!(path, bad);
        }
        other => panic!("expected a parse error, got {other:?}"),
    }
}

#[test]
fn ingestion_handles_a_large_tab_separated_table() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("big.tsv");
    let mut text = String::from("clip\taction\tthing\tsplit\n");
    for i in 0..71238 {
        let pool = if i % 5 == 0 { "validation" } else { "train" };
        text.push_str(&format!("{i}\tv{}\to{}\t{pool}\n", i % 174, (i * 7) % 300));
    }
    std::fs::write(&path, text).unwrap();
    let mapping = ColumnMapping {
        id: "clip".into(),
        verb: "action".into(),
        object: "thing".into(),
        split: Some("split".into()),
    };
    let rows = ingest_annotations(&path, &mapping).unwrap();
    assert_eq!(rows.len(), 71238);
    assert_eq!(rows.iter().filter(|r| r.pool.as_deref() == Some("validation")).count(), 14248);
    assert_eq!(rows[71237].line, 71239);
}
