//! Command-line entry points for the `curlfm` binary.
//!
//! Each subcommand loads the shared JSON config (or defaults), applies its
//! flag overrides and writes every output atomically. [`run`] returns the
//! process exit code instead of exiting so it can be driven from tests.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
use crate::config::Config;
use crate::dataset::{ClipSet, Sampling};
use crate::encoder::EncoderParams;
use crate::error::{Error, Result};
use crate::eval::{
    aggregate, evaluate, export_embeddings, patient_kfold, roc_points, write_embeddings_csv, write_fold_csv,
    write_roc_csv, EmbeddingKind, MetricsReport,
};
use crate::experiment::{run_ablation, Axis, TAG_FT, TAG_INIT, TAG_PRE};
use crate::io;
use crate::rng::derive_seed;
use crate::synth::{generate_dataset_to, load_dataset, Recording};
use crate::training::{finetune, infer_video, predict_set, pretrain, FinetuneMode, StepLog};

#[derive(Debug, Parser)]
#[command(name = "curlfm", version, about = "Contrastive video pretraining and movement detection")]
pub struct Cli {
    /// JSON config file; every section is optional.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed override; takes precedence over CURL_SEED and the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        subjects: Option<usize>,
        /// Recording length in seconds.
        #[arg(long)]
        duration: Option<f64>,
    },
    /// Self-supervised pretraining of the encoder.
    Pretrain {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_parser = parse_enum::<Sampling>, default_value = "clean_cut")]
        sampling: Sampling,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        max_steps: Option<usize>,
        #[arg(long)]
        lambda_tc: Option<f64>,
    },
    /// Train the classifier (and optionally the encoder) on soft labels.
    Finetune {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_parser = parse_enum::<FinetuneMode>)]
        mode: Option<FinetuneMode>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        max_steps: Option<usize>,
    },
    /// Movement probability timeline for one video container.
    Infer {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        recording: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Patient-wise k-fold evaluation of a checkpoint's encoder.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        folds: Option<usize>,
        #[arg(long, value_parser = parse_enum::<FinetuneMode>)]
        mode: Option<FinetuneMode>,
    },
    /// Export clip embeddings for external plotting.
    Embed {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_parser = parse_enum::<EmbeddingKind>)]
        kind: Option<EmbeddingKind>,
    },
    /// Compare variants along one ablation axis on held-out subjects.
    Ablate {
        #[arg(long, value_parser = parse_enum::<Axis>)]
        axis: Axis,
        /// Existing dataset; generated from the config when absent.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Directory for the comparison table and per-run reports.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Comma-separated training seeds.
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
    },
}

fn parse_enum<T: DeserializeOwned>(s: &str) -> std::result::Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|e| e.to_string())
}

/// Parses `args` (program name first), runs the command and returns the
/// exit code. Diagnostics go to stderr.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if let Error::NonFinite(dump) = &e {
                eprintln!("{}", serde_json::to_string_pretty(dump).unwrap_or_default());
            }
            e.exit_code()
        }
    }
}

/// Loads the config, applies the seed overrides and validates.
pub fn resolve_config(path: Option<&Path>, seed: Option<u64>) -> Result<Config> {
    let mut cfg = match path {
        Some(p) => Config::load(require(p)?)?,
        None => Config::default(),
    };
    cfg.seed = seed.unwrap_or_else(|| cfg.effective_seed());
    Ok(cfg)
}

pub fn execute(cli: &Cli) -> Result<()> {
    let mut cfg = resolve_config(cli.config.as_deref(), cli.seed)?;
    match &cli.command {
        Command::Synth { out, subjects, duration } => {
            if let Some(n) = subjects {
                cfg.synth.n_subjects = *n;
            }
            if let Some(d) = duration {
                cfg.synth.duration_s = *d;
            }
            if cli.seed.is_some() || crate::rng::env_seed().is_some() {
                cfg.synth.seed = cfg.seed;
            }
            cfg.validate()?;
            let recs = generate_dataset_to(&cfg.synth, out)?;
            log::info!("wrote {} recordings to {}", recs.len(), out.display());
            Ok(())
        }
        Command::Pretrain { data, out, sampling, epochs, max_steps, lambda_tc } => {
            if let Some(e) = epochs {
                cfg.pretrain.epochs = *e;
            }
            if max_steps.is_some() {
                cfg.pretrain.max_steps = *max_steps;
            }
            if let Some(l) = lambda_tc {
                cfg.pretrain.lambda_tc = *l;
            }
            cfg.validate()?;
            let recs = load_data(data)?;
            let set = ClipSet::new(&recs, *sampling, &cfg.sampler, cfg.encoder.input_dims())?;
            let init = EncoderParams::init(&cfg.encoder, derive_seed(cfg.seed, &[TAG_INIT]))?;
            log::info!("pretraining on {} clips ({} parameters)", set.len(), init.n_params());
            let outcome = pretrain(init, &set, &cfg.pretrain, &cfg.augment, derive_seed(cfg.seed, &[TAG_PRE]), |l| {
                log::info!("step {} epoch {} loss {:.5}", l.step, l.epoch, l.l_total.unwrap_or(f64::NAN))
            })?;
            write_logs(out, &outcome.log)?;
            save_checkpoint(out, &Checkpoint::new(outcome.params, cfg.sampler.clone(), "pretrain"))
        }
        Command::Finetune { ckpt, data, out, mode, epochs, max_steps } => {
            if let Some(m) = mode {
                cfg.finetune.mode = *m;
            }
            if let Some(e) = epochs {
                cfg.finetune.epochs = *e;
            }
            if max_steps.is_some() {
                cfg.finetune.max_steps = *max_steps;
            }
            cfg.validate()?;
            let ck = load_checkpoint(require(ckpt)?)?;
            let recs = load_data(data)?;
            let set = ClipSet::sliding(&recs, &ck.meta.sampler, ck.params.config.input_dims())?;
            log::info!("fine-tuning ({}) on {} windows", cfg.finetune.mode.as_str(), set.len());
            let outcome = finetune(ck.params, &set, &cfg.finetune, derive_seed(cfg.seed, &[TAG_FT]), |l| {
                log::debug!("step {} loss {:.5}", l.step, l.l_ce.unwrap_or(f64::NAN))
            })?;
            write_logs(out, &outcome.log)?;
            let phase = format!("finetune_{}", cfg.finetune.mode.as_str());
            save_checkpoint(out, &Checkpoint::new(outcome.params, ck.meta.sampler, phase))
        }
        Command::Infer { ckpt, recording, out } => {
            let ck = load_checkpoint(require(ckpt)?)?;
            let video = io::read_video(require(recording)?)?;
            let id = recording.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            let points = infer_video(&ck.params, &video, &id, &ck.meta.sampler)?;
            io::write_jsonl(out, &points)
        }
        Command::Eval { ckpt, data, out, folds, mode } => {
            if let Some(k) = folds {
                cfg.eval.folds = *k;
            }
            if let Some(m) = mode {
                cfg.finetune.mode = *m;
            }
            cfg.validate()?;
            let ck = load_checkpoint(require(ckpt)?)?;
            let recs = load_data(data)?;
            cross_validate(&cfg, &ck, &recs, out)
        }
        Command::Embed { ckpt, data, out, kind } => {
            let ck = load_checkpoint(require(ckpt)?)?;
            let recs = load_data(data)?;
            let set = ClipSet::sliding(&recs, &ck.meta.sampler, ck.params.config.input_dims())?;
            let rows = export_embeddings(&ck.params, &set, kind.unwrap_or(cfg.eval.embedding))?;
            write_embeddings_csv(out, &rows)
        }
        Command::Ablate { axis, data, out, seeds } => {
            if let Some(s) = seeds {
                cfg.experiment.seeds = s.clone();
            }
            cfg.validate()?;
            let recs = match data {
                Some(d) => load_data(d)?,
                None => crate::synth::generate_dataset(&cfg.synth)?,
            };
            let report = run_ablation(&recs, &cfg, *axis, |r| {
                log::info!("{} seed {}: AUROC {:?} ({:.1} s)", r.variant, r.seed, r.report.auroc, r.seconds)
            })?;
            let (header, rows) = report.rows();
            println!("{}", header.join("\t"));
            for row in &rows {
                println!("{}", row.join("\t"));
            }
            if let Some(dir) = out {
                std::fs::create_dir_all(dir)?;
                let name = parse_name(axis);
                io::write_csv(&dir.join(format!("ablation_{name}.csv")), &header, &rows)?;
                io::write_json(&dir.join(format!("ablation_{name}.json")), &report)?;
            }
            Ok(())
        }
    }
}

fn parse_name<T: Serialize>(v: &T) -> String {
    serde_json::to_value(v).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default()
}

/// Missing inputs are usage errors; unreadable ones surface later as data errors.
fn require(path: &Path) -> Result<&Path> {
    if path.exists() {
        Ok(path)
    } else {
        Err(Error::Argument(format!("{} does not exist", path.display())))
    }
}

fn load_data(dir: &Path) -> Result<Vec<Recording>> {
    let recs = load_dataset(require(dir)?)?;
    if recs.is_empty() {
        return Err(Error::Argument(format!("no recordings in {}", dir.display())));
    }
    Ok(recs)
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

/// Step log as JSON lines plus a loss-curve CSV next to `out`.
fn write_logs(out: &Path, log: &[StepLog]) -> Result<()> {
    io::write_jsonl(&sibling(out, ".log.jsonl"), log)?;
    let fmt = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:.17e}"));
    let rows: Vec<Vec<String>> = log
        .iter()
        .map(|l| {
            vec![
                l.phase.clone(),
                l.step.to_string(),
                l.epoch.to_string(),
                format!("{:.17e}", l.lr),
                fmt(l.l_sc),
                fmt(l.l_tc),
                fmt(l.l_total),
                fmt(l.l_ce),
            ]
        })
        .collect();
    io::write_csv(
        &sibling(out, ".loss.csv"),
        &["phase", "step", "epoch", "lr", "L_sc", "L_tc", "L_total", "L_CE"],
        &rows,
    )
}

#[derive(Serialize)]
struct FoldReport<'a> {
    fold: usize,
    test_subjects: &'a [String],
    train_windows: usize,
    test_windows: usize,
    metrics: &'a MetricsReport,
}

/// Fits the probe on k−1 folds and scores the held-out fold, k times.
fn cross_validate(cfg: &Config, ck: &Checkpoint, recs: &[Recording], out: &Path) -> Result<()> {
    let all = ClipSet::sliding(recs, &ck.meta.sampler, ck.params.config.input_dims())?;
    let subjects: Vec<String> = all.subjects().into_iter().collect();
    let folds = patient_kfold(&subjects, cfg.eval.folds, cfg.seed)?;
    std::fs::create_dir_all(out)?;
    let mut reports = Vec::new();
    let mut recall_rows = Vec::new();
    for (f, test_subjects) in folds.iter().enumerate() {
        let train_subjects: Vec<&String> = subjects.iter().filter(|s| !test_subjects.contains(s)).collect();
        let train = all.restrict(&train_subjects);
        let test = all.restrict(test_subjects);
        let fit = finetune(ck.params.clone(), &train, &cfg.finetune, derive_seed(cfg.seed, &[TAG_FT, f as u64]), |_| {})?;
        let scores = predict_set(&fit.params, &test)?;
        let labels: Vec<f64> = test.items.iter().map(|i| i.p_movement).collect();
        let subtypes: Vec<_> = test.items.iter().map(|i| i.subtype).collect();
        let opts = cfg.eval.options();
        let report = evaluate(&scores, &labels, &subtypes, &opts);
        log::info!("fold {f}: AUROC {:?} bACC {:?}", report.auroc, report.bacc);

        let truth: Vec<Option<bool>> = crate::eval::binarize_eval_labels(&labels, opts.threshold, opts.exclusion_band);
        let (s, t): (Vec<f64>, Vec<bool>) = scores.iter().zip(&truth).filter_map(|(&s, t)| t.map(|t| (s, t))).unzip();
        write_roc_csv(&out.join(format!("roc_fold_{f}.csv")), &roc_points(&s, &t))?;
        for (name, r) in &report.per_archetype_recall {
            recall_rows.push(vec![f.to_string(), name.clone(), r.map_or("NA".into(), |x| format!("{x:.6}"))]);
        }
        io::write_json(
            &out.join(format!("fold_{f}.json")),
            &FoldReport {
                fold: f,
                test_subjects,
                train_windows: train.len(),
                test_windows: test.len(),
                metrics: &report,
            },
        )?;
        reports.push(report);
    }
    write_fold_csv(&out.join("folds.csv"), &reports)?;
    io::write_csv(&out.join("recall.csv"), &["fold", "archetype", "recall"], &recall_rows)?;
    io::write_json(&out.join("aggregate.json"), &aggregate(&reports))
}
