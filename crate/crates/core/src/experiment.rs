//! Preset runners and artifact emission.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::config::{unknown_preset, ExperimentConfig};
use crate::data::{
    construct_compositional_splits, generate_biased_dataset, generate_validation_splits, ingest_annotations, Clip,
    ColumnMapping, Dataset, SplitParams, SynthConfig,
};
use crate::error::{Error, Result};
use crate::evaluation::{
    calibrate_bias, evaluate, reversed_cosine_probe, shuffled_probe, Calibration, InferenceConfig, ScoredSplit,
    ShuffleProbe,
};
use crate::label_space::{AnnotationRecord, CoOccurrenceStats, CompositionSpace};
use crate::metrics::{compositional_gap, harmonic_mean, EvalReport};
use crate::model::Model;
use crate::rng::{substream, Stream};
use crate::trainer::{RunLog, Trainer};

pub const RUNLOG_COLUMNS: [&str; 9] = [
    "epoch",
    "acc_comp_seen",
    "acc_comp_unseen",
    "fsp",
    "fcp",
    "cg_seen",
    "cg_unseen",
    "mean_cos_rev",
    "hm_comp",
];

/// Reference seen/unseen accuracies behind the `table1` preset: (verb, object, composition).
pub const TABLE1_SEEN: (f64, f64, f64) = (63.60, 67.72, 46.31);
pub const TABLE1_UNSEEN: (f64, f64, f64) = (54.36, 56.10, 30.08);

/// A generated synthetic benchmark with its label space.
#[derive(Debug, Clone)]
pub struct Bench {
    pub synth: SynthConfig,
    pub space: CompositionSpace,
    pub stats: CoOccurrenceStats,
    pub train: Dataset,
    /// Seen-composition test clips.
    pub aligned: Vec<Clip>,
    /// Unseen-composition test clips.
    pub conflict: Vec<Clip>,
    pub val: Vec<Clip>,
}

impl Bench {
    pub fn build(cfg: &ExperimentConfig) -> Result<Self> {
        let synth = cfg.synth_config()?;
        let d = generate_biased_dataset(&synth, cfg.eval_counts())?;
        let (val_aligned, val_conflict) = generate_validation_splits(&synth, cfg.eval_counts())?;
        let space = CompositionSpace::from_counts(synth.verb_names(), synth.object_names(), synth.bias_matrix.clone())?;
        let stats = CoOccurrenceStats::build(&space);
        let mut val = val_aligned.clips;
        val.extend(val_conflict.clips);
        Ok(Self {
            synth,
            space,
            stats,
            train: d.train,
            aligned: d.aligned_test.clips,
            conflict: d.conflict_test.clips,
            val,
        })
    }

    pub fn test(&self) -> Vec<Clip> {
        let mut t = self.aligned.clone();
        t.extend(self.conflict.iter().cloned());
        t
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Probes {
    pub cos_rev_seen: f64,
    pub cos_rev_unseen: Option<f64>,
    pub shuffle_seen: ShuffleProbe,
    pub shuffle_unseen: Option<ShuffleProbe>,
}

/// Test-split evaluation under the three inference settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    /// Open world at `eval.bias` (0 unless overridden).
    pub open_world: EvalReport,
    pub calibrated_bias: Option<f64>,
    /// Split the bias was tuned on.
    pub calibrated_on: Option<String>,
    pub calibrated: Option<EvalReport>,
    pub closed_world: Option<EvalReport>,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub model: Model,
    pub log: RunLog,
    pub eval: EvalSummary,
    pub calibration: Option<Calibration>,
    pub probes: Probes,
}

/// Trains one model on `bench` (monitoring the validation split) and
/// evaluates it on the test split.
pub fn train_and_evaluate(cfg: &ExperimentConfig, bench: &Bench, checkpoint_dir: Option<PathBuf>) -> Result<RunOutcome> {
    let (nv, no) = (bench.space.n_verbs(), bench.space.n_objects());
    let model = Model::new(cfg.model_config(nv, no), cfg.seed())?;
    let mut trainer = Trainer::new(&bench.space, &bench.stats);
    trainer.cfg = cfg.train_config();
    trainer.weights = cfg.loss_weights();
    trainer.voca = cfg.voca_config();
    trainer.monitor = Some(&bench.val);
    trainer.checkpoint_dir = checkpoint_dir;
    let (model, log) = trainer.train(model, &bench.train)?;
    let test = bench.test();
    let scored = ScoredSplit::compute(&model, &test)?;
    let has_both = !bench.aligned.is_empty() && !bench.conflict.is_empty();
    let calibration = if cfg.eval.calibrate && has_both {
        if cfg.eval.unsound_test_tuned {
            log::warn!("bias tuned on the test split; results are not a valid zero-shot estimate");
            Some(calibrate_bias(&scored, &bench.space, &cfg.sweep())?)
        } else {
            let val = ScoredSplit::compute(&model, &bench.val)?;
            Some(calibrate_bias(&val, &bench.space, &cfg.sweep())?)
        }
    } else {
        None
    };
    let open_world = evaluate(
        &scored,
        &InferenceConfig::open_world(cfg.eval.bias),
        &bench.space,
        &bench.stats,
        calibration.as_ref(),
    )?;
    let calibrated = calibration
        .as_ref()
        .map(|c| evaluate(&scored, &InferenceConfig::open_world(c.bias), &bench.space, &bench.stats, Some(c)))
        .transpose()?;
    let candidates: BTreeSet<usize> = test.iter().map(|c| c.verb * no + c.object).collect();
    let closed_world = if candidates.is_empty() {
        None
    } else {
        let ccfg = InferenceConfig::closed_world(candidates, 0.0)?;
        Some(evaluate(&scored, &ccfg, &bench.space, &bench.stats, None)?)
    };
    let probes = run_probes(&model, bench, cfg.seed())?;
    Ok(RunOutcome {
        model,
        log,
        eval: EvalSummary {
            open_world,
            calibrated_bias: calibration.as_ref().map(|c| c.bias),
            calibrated_on: calibration
                .as_ref()
                .map(|_| if cfg.eval.unsound_test_tuned { "test" } else { "validation" }.to_string()),
            calibrated,
            closed_world,
        },
        calibration,
        probes,
    })
}

pub fn run_probes(model: &Model, bench: &Bench, seed: u64) -> Result<Probes> {
    let mut rng = substream(seed, Stream::Probe);
    let seen = if bench.aligned.is_empty() { &bench.val } else { &bench.aligned };
    let cos_rev_seen = reversed_cosine_probe(model, seen)?;
    let shuffle_seen = shuffled_probe(model, seen, &mut rng)?;
    let (cos_rev_unseen, shuffle_unseen) = if bench.conflict.is_empty() {
        (None, None)
    } else {
        (
            Some(reversed_cosine_probe(model, &bench.conflict)?),
            Some(shuffled_probe(model, &bench.conflict, &mut rng)?),
        )
    };
    Ok(Probes {
        cos_rev_seen,
        cos_rev_unseen,
        shuffle_seen,
        shuffle_unseen,
    })
}

fn opt(x: Option<f64>) -> String {
    x.map(|v| format!("{v:.6}")).unwrap_or_default()
}

fn num(x: f64) -> String {
    format!("{x:.6}")
}

/// Writes `runlog.csv`, `runlog.json` and `eval.json`. Wall-clock timings
/// are left out so reruns are byte-identical.
pub fn emit_report(dir: &Path, log: &RunLog, eval: Option<&EvalSummary>) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut w = csv::Writer::from_path(dir.join("runlog.csv"))?;
    w.write_record(RUNLOG_COLUMNS)?;
    for e in &log.entries {
        let r = e.report.as_ref();
        w.write_record([
            e.epoch.to_string(),
            opt(r.map(|r| r.acc_comp_seen)),
            opt(r.map(|r| r.acc_comp_unseen)),
            opt(r.and_then(|r| r.fsp)),
            opt(r.and_then(|r| r.fcp)),
            opt(r.map(|r| r.cg_seen)),
            opt(r.map(|r| r.cg_unseen)),
            opt(e.mean_cos_rev),
            opt(r.map(|r| r.hm_comp)),
        ])?;
    }
    w.flush()?;
    std::fs::write(dir.join("runlog.json"), serde_json::to_string_pretty(&log.without_timing())?)?;
    let eval_doc = match eval {
        Some(e) => serde_json::to_string_pretty(e)?,
        None => "null".to_string(),
    };
    std::fs::write(dir.join("eval.json"), eval_doc)?;
    Ok(())
}

/// Verb confusion matrix, rows are true verbs.
pub fn write_confusion(path: &Path, report: Option<&EvalReport>, verbs: &[String]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["true_verb".to_string()];
    header.extend(verbs.iter().cloned());
    w.write_record(&header)?;
    if let Some(r) = report {
        let n = r.confusion_verb.n;
        for (t, name) in verbs.iter().enumerate().take(n) {
            let mut row = vec![name.clone()];
            row.extend((0..n).map(|p| r.confusion_verb.get(t, p).to_string()));
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}

fn write_calibration(path: &Path, cal: Option<&Calibration>) -> Result<()> {
    match cal {
        Some(c) => c.write_csv(path),
        None => {
            let mut w = csv::Writer::from_path(path)?;
            w.write_record(["bias", "seen_acc", "unseen_acc", "hm"])?;
            w.flush()?;
            Ok(())
        }
    }
}

/// All per-run artifacts of one trained model.
pub fn write_run(dir: &Path, bench: &Bench, run: &RunOutcome) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    emit_report(dir, &run.log, Some(&run.eval))?;
    write_calibration(&dir.join("calibration_curve.csv"), run.calibration.as_ref())?;
    write_confusion(&dir.join("confusion.csv"), Some(&run.eval.open_world), bench.space.verbs())?;
    std::fs::write(dir.join("probes.json"), serde_json::to_string_pretty(&run.probes)?)?;
    bench.space.write_json(&bench.stats, &dir.join("space.json"))?;
    run.model.save(&dir.join("model.bin"))?;
    Ok(())
}

/// Artifacts for presets that train nothing.
fn write_empty_run(dir: &Path, eval: Option<&EvalSummary>) -> Result<()> {
    emit_report(dir, &RunLog::default(), eval)?;
    write_calibration(&dir.join("calibration_curve.csv"), None)?;
    write_confusion(&dir.join("confusion.csv"), None, &[])
}

/// What a preset produced, keyed by run label (`baseline`, `rcore`, ...).
#[derive(Debug, Clone, Default)]
pub struct ExperimentSummary {
    pub runs: Vec<(String, RunOutcome)>,
}

impl ExperimentSummary {
    pub fn run(&self, label: &str) -> Option<&RunOutcome> {
        self.runs.iter().find(|(l, _)| l == label).map(|(_, r)| r)
    }
}

/// Materializes the config into `out`, then runs the preset it names.
pub fn run_experiment(cfg: &ExperimentConfig, out: &Path) -> Result<ExperimentSummary> {
    cfg.validate()?;
    std::fs::create_dir_all(out)?;
    cfg.write(&out.join("config.toml"))?;
    let ckpt = |dir: &Path| cfg.train.checkpoints.then(|| dir.join("checkpoints"));
    let mut summary = ExperimentSummary::default();
    let save_test = |bench: &Bench| -> Result<()> {
        if cfg.eval.save_test_split {
            Dataset { clips: bench.test() }.write_binary(&out.join("test.czsl"))?;
        }
        Ok(())
    };
    match cfg.experiment.preset.as_str() {
        "fig2a" | "fig2b" | "fig3" | "ablate" => {
            let bench = Bench::build(cfg)?;
            let run = train_and_evaluate(cfg, &bench, ckpt(out))?;
            write_run(out, &bench, &run)?;
            save_test(&bench)?;
            match cfg.experiment.preset.as_str() {
                "fig2a" => write_difficulty(&out.join("curves.csv"), &run.log)?,
                "ablate" => write_table(&out.join("ablation.csv"), &[("run", cfg, &run)])?,
                _ => {}
            }
            summary.runs.push((cfg.experiment.preset.clone(), run));
        }
        "fig4" | "table2-synth" => {
            let bench = Bench::build(cfg)?;
            let mut base_cfg = cfg.clone();
            base_cfg.set_baseline();
            let base_dir = out.join("baseline");
            let base = train_and_evaluate(&base_cfg, &bench, ckpt(&base_dir))?;
            write_run(&base_dir, &bench, &base)?;
            let rcore = train_and_evaluate(cfg, &bench, ckpt(out))?;
            write_run(out, &bench, &rcore)?;
            save_test(&bench)?;
            write_table(
                &out.join(if cfg.experiment.preset == "fig4" { "comparison.csv" } else { "table2.csv" }),
                &[("baseline", &base_cfg, &base), ("rcore", cfg, &rcore)],
            )?;
            summary.runs.push(("baseline".into(), base));
            summary.runs.push(("rcore".into(), rcore));
        }
        "table1" => {
            write_table1(&out.join("table1.csv"))?;
            write_empty_run(out, None)?;
        }
        "splits" => {
            synthetic_splits(cfg, out)?;
            write_empty_run(out, None)?;
        }
        other => return Err(unknown_preset(other)),
    }
    Ok(summary)
}

fn write_difficulty(path: &Path, log: &RunLog) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["epoch", "acc_verb", "acc_obj"])?;
    for e in &log.entries {
        if let Some(r) = &e.report {
            w.write_record([e.epoch.to_string(), num(r.acc_verb()), num(r.acc_obj())])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// One row per run: switches, then test metrics.
fn write_table(path: &Path, rows: &[(&str, &ExperimentConfig, &RunOutcome)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "method",
        "voca",
        "enable_cos",
        "enable_ent",
        "gamma",
        "delta",
        "top_k",
        "acc_verb_seen",
        "acc_verb_unseen",
        "hm_verb",
        "acc_obj_seen",
        "acc_obj_unseen",
        "hm_obj",
        "acc_comp_seen",
        "acc_comp_unseen",
        "hm_comp",
        "cg_seen",
        "cg_unseen",
        "fsp",
        "fcp",
        "calibrated_bias",
        "calibrated_comp_seen",
        "calibrated_comp_unseen",
        "calibrated_hm",
        "closed_hm_comp",
        "auc",
        "cos_rev_seen",
        "shuffle_gap_seen",
        "shuffle_gap_unseen",
    ])?;
    for (name, cfg, run) in rows {
        let r = &run.eval.open_world;
        let c = run.eval.calibrated.as_ref();
        w.write_record([
            name.to_string(),
            cfg.voca.enabled.to_string(),
            cfg.loss.enable_cos.to_string(),
            cfg.loss.enable_ent.to_string(),
            num(cfg.loss.gamma),
            num(cfg.loss.delta),
            cfg.loss.top_k.to_string(),
            num(r.acc_verb_seen),
            num(r.acc_verb_unseen),
            num(r.hm_verb),
            num(r.acc_obj_seen),
            num(r.acc_obj_unseen),
            num(r.hm_obj),
            num(r.acc_comp_seen),
            num(r.acc_comp_unseen),
            num(r.hm_comp),
            num(r.cg_seen),
            num(r.cg_unseen),
            opt(r.fsp),
            opt(r.fcp),
            opt(run.eval.calibrated_bias),
            opt(c.map(|c| c.acc_comp_seen)),
            opt(c.map(|c| c.acc_comp_unseen)),
            opt(c.map(|c| c.hm_comp)),
            opt(run.eval.closed_world.as_ref().map(|c| c.hm_comp)),
            opt(r.auc),
            num(run.probes.cos_rev_seen),
            num(run.probes.shuffle_seen.gap),
            opt(run.probes.shuffle_unseen.map(|s| s.gap)),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Compositional gap of the stored reference accuracies.
pub fn table1_rows() -> Vec<(&'static str, f64, f64, f64, f64, f64)> {
    [("seen", TABLE1_SEEN), ("unseen", TABLE1_UNSEEN)]
        .into_iter()
        .map(|(name, (v, o, c))| (name, v, o, v * o / 100.0, c, compositional_gap(v, o, c)))
        .collect()
}

fn write_table1(path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["split", "acc_verb", "acc_obj", "product", "acc_comp", "cg"])?;
    for (name, v, o, p, c, g) in table1_rows() {
        w.write_record([name.to_string(), num(v), num(o), num(p), num(c), format!("{g:+.2}")])?;
    }
    w.flush()?;
    let (v, o, _) = TABLE1_SEEN;
    let (vu, ou, _) = TABLE1_UNSEEN;
    log::info!("verb H.M. {:.2}, object H.M. {:.2}", harmonic_mean(v, vu), harmonic_mean(o, ou));
    Ok(())
}

/// Builds a long-tailed annotation file with train/val pools, reads it
/// back and runs the split protocol on it.
fn synthetic_splits(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    let mut rng = substream(cfg.seed(), Stream::Split);
    let verbs: Vec<String> = (0..12).map(|i| format!("verb{i:02}")).collect();
    let objects: Vec<String> = (0..15).map(|i| format!("object{i:02}")).collect();
    let path = out.join("annotations.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["id", "verb", "object", "split"])?;
    let mut id = 0usize;
    for (vi, v) in verbs.iter().enumerate() {
        for (oi, o) in objects.iter().enumerate() {
            if rng.gen::<f64>() > 0.3 {
                continue;
            }
            let n = (60.0 / (1.0 + ((vi * 7 + oi * 3) % 20) as f64)).round() as usize + rng.gen_range(0..3);
            let val_only = rng.gen::<f64>() < 0.1;
            for _ in 0..n {
                let pool = if val_only || rng.gen::<f64>() < 0.2 { "val" } else { "train" };
                w.write_record([format!("clip{id:05}"), v.clone(), o.clone(), pool.to_string()])?;
                id += 1;
            }
        }
    }
    w.flush()?;
    drop(w);
    split_annotations(&path, SplitParams::default(), &mut rng, &out.join("splits.json"))?;
    Ok(())
}

/// Reads an annotation file (`id`, `verb`, `object`, `split` columns),
/// constructs the compositional splits and writes them as JSON.
pub fn split_annotations(
    path: &Path,
    params: SplitParams,
    rng: &mut impl Rng,
    out: &Path,
) -> Result<crate::data::SplitSpec> {
    let mapping = ColumnMapping {
        split: Some("split".into()),
        ..ColumnMapping::default()
    };
    let rows = ingest_annotations(path, &mapping)?;
    let (mut train, mut val): (Vec<AnnotationRecord>, Vec<AnnotationRecord>) = (Vec::new(), Vec::new());
    for r in rows {
        match r.pool.as_deref() {
            Some("train") => train.push(r.record),
            Some("val") | Some("validation") => val.push(r.record),
            other => {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: r.line,
                    msg: format!("pool must be train or val, got {other:?}"),
                })
            }
        }
    }
    let spec = construct_compositional_splits(&train, &val, params, rng)?;
    spec.write_json(out)?;
    Ok(spec)
}
