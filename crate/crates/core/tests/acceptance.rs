//! Acceptance suite: one PASS/FAIL line per criterion with the measured
//! values. `ACCEPTANCE_ONLY=4,8` restricts the run to the listed criteria.

mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::time::Instant;

use czsl::config::ExperimentConfig;
use czsl::data::{construct_compositional_splits, SplitParams};
use czsl::evaluation::{InferenceConfig, ScoredSplit};
use czsl::experiment::{run_experiment, table1_rows, train_and_evaluate, Bench, RunOutcome};
use czsl::metrics::harmonic_mean;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];

struct Verdict {
    pass: bool,
    detail: String,
}

impl Verdict {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self { pass, detail: detail.into() }
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn list(xs: &[f64]) -> String {
    xs.iter().map(|x| format!("{x:.2}")).collect::<Vec<_>>().join(" ")
}

fn at_seed(preset: &str, seed: u64, baseline: bool) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::preset(preset).expect("preset");
    cfg.experiment.seed = seed;
    if baseline {
        cfg.set_baseline();
    }
    cfg
}

/// Baseline and RCORE runs sharing one benchmark per seed.
struct Paired {
    base: Vec<RunOutcome>,
    rcore: Vec<RunOutcome>,
    benches: Vec<Bench>,
}

fn paired(preset: &str) -> Paired {
    let t0 = Instant::now();
    let mut p = Paired {
        base: Vec::new(),
        rcore: Vec::new(),
        benches: Vec::new(),
    };
    for &seed in &SEEDS {
        let rc = at_seed(preset, seed, false);
        let bench = Bench::build(&rc).expect("bench");
        p.base.push(train_and_evaluate(&at_seed(preset, seed, true), &bench, None).expect("baseline run"));
        p.rcore.push(train_and_evaluate(&rc, &bench, None).expect("rcore run"));
        p.benches.push(bench);
    }
    println!("     shared {preset} runs, 5 seeds x baseline/rcore ({:.1}s)", t0.elapsed().as_secs_f64());
    p
}

fn table1() -> Verdict {
    let rows = table1_rows();
    let (seen, unseen) = (rows[0].5, rows[1].5);
    let hm = harmonic_mean(63.60, 54.36);
    let pass = (seen - 3.24).abs() <= 0.01 && (unseen + 0.42).abs() <= 0.01 && (hm - 58.62).abs() <= 0.01;
    Verdict::new(pass, format!("cg seen {seen:+.2}, cg unseen {unseen:+.2}, hm {hm:.2}"))
}

fn gradients() -> Verdict {
    let mut failed = Vec::new();
    for loss in common::grad::LOSSES {
        if let Err(e) = common::grad::check(loss, 20) {
            failed.push(format!("{loss}: {e}"));
        }
    }
    let n = common::grad::LOSSES.len();
    Verdict::new(failed.is_empty(), format!("{}/{n} losses pass on 20 configurations each {}", n - failed.len(), failed.join("; ")))
}

fn oracles() -> Verdict {
    let mut failed = Vec::new();
    for p in common::oracle::PROPERTIES {
        if let Err(e) = common::oracle::check(p, 50) {
            failed.push(format!("{p}: {e}"));
        }
    }
    let n = common::oracle::PROPERTIES.len();
    Verdict::new(failed.is_empty(), format!("{}/{n} properties match on 50 instances {}", n - failed.len(), failed.join("; ")))
}

fn shortcut() -> Verdict {
    let runs: Vec<RunOutcome> = SEEDS
        .iter()
        .map(|&seed| {
            let cfg = at_seed("fig2b", seed, true);
            train_and_evaluate(&cfg, &Bench::build(&cfg).expect("bench"), None).expect("fig2b run")
        })
        .collect();
    let obj: Vec<f64> = runs.iter().map(|r| r.eval.open_world.acc_obj_unseen).collect();
    let verb: Vec<f64> = runs.iter().map(|r| r.eval.open_world.acc_verb_unseen).collect();
    let hits = obj.iter().zip(&verb).filter(|(o, v)| **o > 80.0 && **v < 25.0).count();
    Verdict::new(hits >= 4, format!("{hits}/5 seeds; conflict obj acc [{}], verb acc [{}]", list(&obj), list(&verb)))
}

fn asymmetry() -> Verdict {
    let mut hits = 0;
    let mut worst = Vec::new();
    for &seed in &SEEDS {
        let cfg = at_seed("fig2a", seed, true);
        let bench = Bench::build(&cfg).expect("bench");
        let run = train_and_evaluate(&cfg, &bench, None).expect("fig2a run");
        let gaps: Vec<f64> = run
            .log
            .entries
            .iter()
            .take(10)
            .filter_map(|e| e.report.as_ref().map(|r| r.acc_obj() - r.acc_verb()))
            .collect();
        let min = gaps.iter().copied().fold(f64::INFINITY, f64::min);
        if gaps.len() == 10 && min > 0.0 {
            hits += 1;
        }
        worst.push(min);
    }
    Verdict::new(hits >= 4, format!("{hits}/5 seeds; smallest obj-verb val gap per seed [{}]", list(&worst)))
}

fn reversal(fig4: &Paired) -> Verdict {
    let cos = |r: &RunOutcome, b: &Bench| czsl::evaluation::reversed_cosine_probe(&r.model, &b.test()).expect("probe");
    let base: Vec<f64> = fig4.base.iter().zip(&fig4.benches).map(|(r, b)| cos(r, b)).collect();
    let torc: Vec<f64> = fig4.rcore.iter().zip(&fig4.benches).map(|(r, b)| cos(r, b)).collect();
    let hits = base.iter().zip(&torc).filter(|(b, t)| **b > 0.5 && **t < 0.0).count();
    Verdict::new(hits >= 4, format!("{hits}/5 seeds; cos_rev baseline [{}], torc [{}]", list(&base), list(&torc)))
}

fn grounding(fig4: &Paired) -> Verdict {
    let gaps = |runs: &[RunOutcome]| {
        let seen: Vec<f64> = runs.iter().map(|r| r.probes.shuffle_seen.gap).collect();
        let unseen: Vec<f64> = runs.iter().map(|r| r.probes.shuffle_unseen.as_ref().expect("conflict split").gap).collect();
        (mean(&seen), mean(&unseen))
    };
    let (bs, bu) = gaps(&fig4.base);
    let (ts, tu) = gaps(&fig4.rcore);
    Verdict::new(
        ts > bs && tu > bu,
        format!("mean shuffle gap seen {bs:.2} -> {ts:.2}, unseen {bu:.2} -> {tu:.2} (baseline -> torc)"),
    )
}

fn fcp_at(run: &RunOutcome, epoch: usize) -> f64 {
    run.log.entries[epoch - 1].report.as_ref().and_then(|r| r.fcp).unwrap_or(f64::NAN)
}

fn cooccurrence(skewed: &Paired) -> Verdict {
    let space = &skewed.benches[0].space;
    let coverage = space.coverage_ratio();
    let base: Vec<(f64, f64)> = skewed.base.iter().map(|r| (fcp_at(r, 5), fcp_at(r, 30))).collect();
    let rc: Vec<(f64, f64)> = skewed.rcore.iter().map(|r| (fcp_at(r, 5), fcp_at(r, 30))).collect();
    let rises = base.iter().filter(|(a, b)| b > a).count();
    let held = rc.iter().filter(|(a, b)| *b <= a + 1.0).count();
    let fmt = |xs: &[(f64, f64)]| xs.iter().map(|(a, b)| format!("{a:.1}->{b:.1}")).collect::<Vec<_>>().join(" ");
    Verdict::new(
        rises >= 4 && held >= 4 && coverage <= 0.15,
        format!(
            "coverage {:.1}%; baseline rises {rises}/5 [{}]; rcore held {held}/5 [{}]",
            100.0 * coverage,
            fmt(&base),
            fmt(&rc)
        ),
    )
}

fn gap_sign(skewed: &Paired) -> Verdict {
    let pick = |runs: &[RunOutcome], f: fn(&czsl::metrics::EvalReport) -> f64| {
        mean(&runs.iter().map(|r| f(&r.eval.open_world)).collect::<Vec<_>>())
    };
    let (bc, rc) = (pick(&skewed.base, |r| r.cg_unseen), pick(&skewed.rcore, |r| r.cg_unseen));
    let (bh, rh) = (pick(&skewed.base, |r| r.hm_comp), pick(&skewed.rcore, |r| r.hm_comp));
    Verdict::new(
        rc > bc && rh > bh,
        format!("mean unseen cg {bc:.2} -> {rc:.2}, mean hm {bh:.2} -> {rh:.2} (baseline -> rcore)"),
    )
}

fn splits() -> Verdict {
    let mut built = 0;
    let mut failures = Vec::new();
    for seed in 0..50u64 {
        let p = common::random_pools(seed, seed % 2 == 1);
        let params = SplitParams::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        match construct_compositional_splits(&p.train, &p.val, params, &mut rng) {
            Ok(spec) => match common::check_split(&p, params, &spec) {
                Ok(()) => built += 1,
                Err(e) => failures.push(format!("set {seed}: {e}")),
            },
            Err(czsl::Error::Data(_)) => {}
            Err(e) => failures.push(format!("set {seed}: {e}")),
        }
    }
    Verdict::new(
        failures.is_empty() && built >= 45,
        format!("{built}/50 sets split with every invariant holding {}", failures.join("; ")),
    )
}

fn calibration(skewed: &Paired) -> Verdict {
    let mut problems = Vec::new();
    let (mut cal, mut uncal) = (Vec::new(), Vec::new());
    for (i, (run, bench)) in skewed.base.iter().chain(&skewed.rcore).zip(skewed.benches.iter().cycle()).enumerate() {
        let s = ScoredSplit::compute(&run.model, &bench.test()).expect("scores");
        let up = s.predictions(&InferenceConfig::open_world(f64::INFINITY), &bench.space).expect("predict");
        let down = s.predictions(&InferenceConfig::open_world(f64::NEG_INFINITY), &bench.space).expect("predict");
        if !up.comp.iter().all(|&c| !bench.space.is_seen_flat(c)) {
            problems.push(format!("run {i}: +inf left a seen prediction"));
        }
        if !down.comp.iter().all(|&c| bench.space.is_seen_flat(c)) {
            problems.push(format!("run {i}: -inf left an unseen prediction"));
        }
        let open = &run.eval.open_world;
        let c = run.eval.calibrated.as_ref().expect("calibrated report");
        cal.push(c.acc_comp_unseen);
        uncal.push(open.acc_comp_unseen);
        if c.acc_comp_unseen < open.acc_comp_unseen {
            problems.push(format!("run {i}: calibrated unseen {:.2} < {:.2}", c.acc_comp_unseen, open.acc_comp_unseen));
        }
        let closed = run.eval.closed_world.as_ref().expect("closed-world report");
        if closed.acc_comp() < open.acc_comp() {
            problems.push(format!("run {i}: closed {:.2} < open {:.2}", closed.acc_comp(), open.acc_comp()));
        }
    }
    Verdict::new(
        problems.is_empty(),
        format!(
            "10 runs; unseen acc uncalibrated [{}] calibrated [{}] {}",
            list(&uncal),
            list(&cal),
            problems.join("; ")
        ),
    )
}

fn files(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).expect("read dir") {
            let p = e.expect("entry").path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().to_path_buf(), std::fs::read(&p).expect("read"));
            }
        }
    }
    out
}

fn determinism() -> Verdict {
    let dir = tempfile::tempdir().expect("tempdir");
    let presets = ["table1", "fig2a", "fig2b", "fig3", "fig4", "table2-synth", "ablate", "splits"];
    let mut bad = Vec::new();
    let mut csvs = 0;
    for preset in presets {
        let cfg = ExperimentConfig::preset(preset)
            .expect("preset")
            .with_overrides(&["train.epochs=4", "train.warmup_epochs=1", "experiment.seed=3"])
            .expect("overrides");
        let (a, b) = (dir.path().join(format!("{preset}-a")), dir.path().join(format!("{preset}-b")));
        run_experiment(&cfg, &a).expect("first run");
        run_experiment(&cfg, &b).expect("second run");
        let (fa, fb) = (files(&a), files(&b));
        let names: BTreeSet<_> = fa.keys().chain(fb.keys()).collect();
        for name in names {
            if name.extension().is_some_and(|e| e == "csv") {
                csvs += 1;
            }
            if fa.get(name) != fb.get(name) {
                bad.push(format!("{preset}/{}", name.display()));
            }
        }
    }
    Verdict::new(
        bad.is_empty() && csvs > 0,
        format!("{} presets rerun, {csvs} csv files compared, mismatches: [{}]", presets.len(), bad.join(", ")),
    )
}

fn main() {
    let only: Option<BTreeSet<usize>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let wanted = |i: usize| only.as_ref().is_none_or(|s| s.contains(&i));
    let mut results: Vec<(usize, &str, Verdict, f64)> = Vec::new();
    let mut timed = |i: usize, name: &'static str, f: &mut dyn FnMut() -> Verdict| {
        if wanted(i) {
            let t0 = Instant::now();
            let v = f();
            let secs = t0.elapsed().as_secs_f64();
            println!("{} [{i:>2}] {name} ({secs:.1}s): {}", if v.pass { "PASS" } else { "FAIL" }, v.detail);
            results.push((i, name, v, secs));
        }
    };

    timed(1, "metric arithmetic", &mut table1);
    timed(2, "gradient checks", &mut gradients);
    timed(3, "oracle equivalence", &mut oracles);
    timed(4, "shortcut reproduction", &mut shortcut);
    timed(5, "asymmetric difficulty", &mut asymmetry);
    let fig4 = [6, 7].into_iter().any(&wanted).then(|| paired("fig4"));
    timed(6, "reversal cosine", &mut || reversal(fig4.as_ref().unwrap()));
    timed(7, "temporal grounding", &mut || grounding(fig4.as_ref().unwrap()));
    let skewed = [8, 9, 11].into_iter().any(&wanted).then(|| paired("table2-synth"));
    timed(8, "co-occurrence mitigation", &mut || cooccurrence(skewed.as_ref().unwrap()));
    timed(9, "compositional gap sign", &mut || gap_sign(skewed.as_ref().unwrap()));
    timed(10, "split protocol", &mut splits);
    timed(11, "calibration sanity", &mut || calibration(skewed.as_ref().unwrap()));
    timed(12, "determinism", &mut determinism);

    let failed = results.iter().filter(|r| !r.2.pass).count();
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
