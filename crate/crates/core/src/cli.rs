//! Command-line front end. Exit codes: 0 ok, 1 usage or config, 2 data,
//! 3 numeric failure.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::Serialize;

use crate::config::{ExperimentConfig, PRESETS};
use crate::data::{Dataset, SplitParams};
use crate::error::{Error, Result};
use crate::evaluation::{reversed_cosine_probe, shuffled_probe, InferenceConfig, ScoredSplit, ShuffleProbe};
use crate::experiment::{run_experiment, split_annotations, write_confusion};
use crate::label_space::CompositionSpace;
use crate::model::Model;
use crate::rng::{substream, Stream};

const RUN_HELP: &str = "\
Trailing options of `run`:
  --seed <N>              run seed (falls back to CZSL_SEED, then the preset's seed)
  --out <DIR>             output directory (experiment.out)
  --unsound-test-tuned    tune the calibration bias on the test split (eval.unsound_test_tuned)
  --<section>.<key>=<v>   override any config field, e.g. --loss.enable_ent=false

Presets: fig2a, fig2b, fig3, fig4, table1, table2-synth, ablate, splits";

#[derive(Debug, Parser)]
#[command(name = "czsl", version, about = "Compositional zero-shot action recognition laboratory")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a preset or a TOML config document.
    #[command(after_help = RUN_HELP)]
    Run {
        /// Preset name or path to a config file.
        target: String,
        /// `--seed`, `--out`, `--unsound-test-tuned` and dotted overrides.
        #[arg(trailing_var_arg = true, allow_hyphen_values = true, value_name = "OPTIONS")]
        options: Vec<String>,
    },
    /// Build compositional splits from an annotation file with
    /// `id,verb,object,split` columns.
    Splits {
        annotations: PathBuf,
        #[arg(long, default_value_t = 5)]
        min_count: usize,
        #[arg(long, default_value_t = 0.5)]
        swap: f64,
        #[arg(long)]
        seed: Option<u64>,
        /// Write `splits.json` here instead of printing it.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on a dataset file.
    Eval {
        checkpoint: PathBuf,
        dataset: PathBuf,
        /// Composition space; defaults to `space.json` beside the checkpoint.
        #[arg(long)]
        space: Option<PathBuf>,
        #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
        bias: f64,
        /// Write `eval.json` and `confusion.csv` here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Reversed-cosine and shuffled-order probes of a checkpoint.
    Probe {
        checkpoint: PathBuf,
        dataset: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Write `probes.json` here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Resolved `run` invocation.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRequest {
    pub config: ExperimentConfig,
    pub out: PathBuf,
}

/// Resolves the target and the trailing options of `run` into a fully
/// materialized config. `env_seed` is the value of `CZSL_SEED`.
pub fn resolve_run(target: &str, options: &[String], env_seed: Option<&str>) -> Result<RunRequest> {
    let mut config = if PRESETS.contains(&target) {
        ExperimentConfig::preset(target)?
    } else if Path::new(target).is_file() {
        ExperimentConfig::load(Path::new(target))?
    } else {
        return Err(crate::config::unknown_preset(target));
    };
    let mut seed = env_seed
        .map(|s| s.trim().parse::<u64>().map_err(|_| Error::Config(format!("CZSL_SEED `{s}` is not an integer"))))
        .transpose()?;
    let mut out = None;
    let mut overrides = Vec::new();
    let mut it = options.iter();
    while let Some(opt) = it.next() {
        let flag = opt
            .strip_prefix("--")
            .ok_or_else(|| Error::Config(format!("unexpected argument `{opt}`")))?;
        let (key, inline) = match flag.split_once('=') {
            Some((k, v)) => (k, Some(v.to_string())),
            None => (flag, None),
        };
        if key == "unsound-test-tuned" {
            overrides.push(format!("eval.unsound_test_tuned={}", inline.as_deref().unwrap_or("true")));
            continue;
        }
        let value = match inline {
            Some(v) => v,
            None => it
                .next()
                .cloned()
                .ok_or_else(|| Error::Config(format!("option `--{key}` needs a value")))?,
        };
        match key {
            "seed" => seed = Some(value.parse().map_err(|_| Error::Config(format!("--seed `{value}` is not an integer")))?),
            "out" => out = Some(value),
            k if k.contains('.') => overrides.push(format!("{k}={value}")),
            k => return Err(Error::Config(format!("unknown option `--{k}`"))),
        }
    }
    config = config.with_overrides(&overrides)?;
    if let Some(s) = seed {
        config.experiment.seed = s;
    }
    if let Some(o) = out {
        config.experiment.out = o;
    }
    config.validate()?;
    let out = PathBuf::from(&config.experiment.out);
    Ok(RunRequest { config, out })
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn execute(cmd: Command) -> Result<()> {
    let env_seed = std::env::var("CZSL_SEED").ok();
    match cmd {
        Command::Run { target, options } => {
            let req = resolve_run(&target, &options, env_seed.as_deref())?;
            log::info!("running {} (seed {}) into {}", req.config.experiment.preset, req.config.seed(), req.out.display());
            let summary = run_experiment(&req.config, &req.out)?;
            for (label, run) in &summary.runs {
                let r = &run.eval.open_world;
                println!(
                    "{label}: comp seen {:.2} unseen {:.2} hm {:.2} | cg unseen {:+.2} | fsp {} fcp {}",
                    r.acc_comp_seen,
                    r.acc_comp_unseen,
                    r.hm_comp,
                    r.cg_unseen,
                    fmt_opt(r.fsp),
                    fmt_opt(r.fcp)
                );
            }
            println!("artifacts in {}", req.out.display());
            Ok(())
        }
        Command::Splits {
            annotations,
            min_count,
            swap,
            seed,
            out,
        } => {
            let seed = resolve_seed(seed, env_seed.as_deref())?;
            let params = SplitParams {
                min_count,
                swap_fraction: swap,
                ..SplitParams::default()
            };
            let target = match &out {
                Some(dir) => {
                    std::fs::create_dir_all(dir)?;
                    dir.join("splits.json")
                }
                None => std::env::temp_dir().join(format!("czsl-splits-{}.json", std::process::id())),
            };
            let spec = split_annotations(&annotations, params, &mut substream(seed, Stream::Split), &target)?;
            if out.is_none() {
                std::fs::remove_file(&target)?;
                println!("{}", serde_json::to_string_pretty(&spec)?);
            } else {
                println!(
                    "train {} val {} test {} | unseen val {} unseen test {} | dropped {}",
                    spec.train.len(),
                    spec.val.len(),
                    spec.test.len(),
                    spec.unseen_val.len(),
                    spec.unseen_test.len(),
                    spec.dropped.len()
                );
            }
            Ok(())
        }
        Command::Eval {
            checkpoint,
            dataset,
            space,
            bias,
            out,
        } => {
            let model = Model::load(&checkpoint)?;
            let data = Dataset::read_binary(&dataset)?;
            let (space, stats) = CompositionSpace::read_json(&space_path(&checkpoint, space))?;
            let scored = ScoredSplit::compute(&model, &data.clips)?;
            let report = scored.report(&InferenceConfig::open_world(bias), &space, &stats)?;
            let text = serde_json::to_string_pretty(&report)?;
            match out {
                Some(dir) => {
                    std::fs::create_dir_all(&dir)?;
                    std::fs::write(dir.join("eval.json"), &text)?;
                    write_confusion(&dir.join("confusion.csv"), Some(&report), space.verbs())?;
                    println!("comp seen {:.2} unseen {:.2} hm {:.2}", report.acc_comp_seen, report.acc_comp_unseen, report.hm_comp);
                }
                None => println!("{text}"),
            }
            Ok(())
        }
        Command::Probe {
            checkpoint,
            dataset,
            seed,
            out,
        } => {
            let seed = resolve_seed(seed, env_seed.as_deref())?;
            let model = Model::load(&checkpoint)?;
            let data = Dataset::read_binary(&dataset)?;
            let report = ProbeReport {
                clips: data.len(),
                mean_cos_rev: reversed_cosine_probe(&model, &data.clips)?,
                shuffle: shuffled_probe(&model, &data.clips, &mut substream(seed, Stream::Probe))?,
            };
            let text = serde_json::to_string_pretty(&report)?;
            match out {
                Some(dir) => {
                    std::fs::create_dir_all(&dir)?;
                    std::fs::write(dir.join("probes.json"), &text)?;
                }
                None => println!("{text}"),
            }
            Ok(())
        }
    }
}

#[derive(Debug, Serialize)]
struct ProbeReport {
    clips: usize,
    mean_cos_rev: f64,
    shuffle: ShuffleProbe,
}

fn resolve_seed(flag: Option<u64>, env: Option<&str>) -> Result<u64> {
    match (flag, env) {
        (Some(s), _) => Ok(s),
        (None, Some(e)) => e
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("CZSL_SEED `{e}` is not an integer"))),
        (None, None) => Ok(0),
    }
}

fn space_path(checkpoint: &Path, explicit: Option<PathBuf>) -> PathBuf {
    explicit.unwrap_or_else(|| checkpoint.parent().unwrap_or(Path::new(".")).join("space.json"))
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(|v| format!("{v:.2}")).unwrap_or_else(|| "-".into())
}
