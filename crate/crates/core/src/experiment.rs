//! Held-out experiments and ablation grids on a recording collection.
//!
//! A run pretrains on the training subjects' clips (unless it trains from
//! scratch), fits the classifier on their sliding windows, and scores the
//! held-out subjects' sliding windows.

use std::collections::BTreeMap;
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::augment::{AugOp, AugmentConfig};
use crate::config::Config;
use crate::dataset::{ClipSet, Sampling};
use crate::encoder::EncoderParams;
use crate::error::{Error, Result};
use crate::eval::{evaluate, MetricsReport};
use crate::rng;
use crate::synth::Recording;
use crate::training::{finetune, predict_set, pretrain, FinetuneConfig, FinetuneMode, StepLog};

const TAG_SPLIT: u64 = 0x5B;
pub(crate) const TAG_INIT: u64 = 0x1A;
pub(crate) const TAG_PRE: u64 = 0x2B;
pub(crate) const TAG_FT: u64 = 0x3C;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<String>,
    pub test: Vec<String>,
}

/// Seeded split with `n_test` held-out subjects.
pub fn split_subjects(recordings: &[Recording], n_test: usize, seed: u64) -> Result<Split> {
    let mut ids: Vec<String> = recordings.iter().map(|r| r.id.clone()).collect();
    if n_test == 0 || n_test >= ids.len() {
        return Err(Error::Argument(format!(
            "cannot hold out {n_test} of {} subjects",
            ids.len()
        )));
    }
    ids.sort();
    ids.shuffle(&mut rng::stream(seed, &[TAG_SPLIT]));
    let mut test = ids.split_off(ids.len() - n_test);
    ids.sort();
    test.sort();
    Ok(Split { train: ids, test })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainSpec {
    pub sampling: Sampling,
    pub lambda_tc: f64,
    pub augment: AugmentConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Variant {
    pub name: String,
    /// `None` trains from random initialization.
    pub pretrain: Option<PretrainSpec>,
    pub mode: FinetuneMode,
}

impl Variant {
    /// Clean-cut pretraining with both losses, linear probe.
    pub fn curl(cfg: &Config) -> Self {
        Self {
            name: "curl".into(),
            pretrain: Some(PretrainSpec {
                sampling: Sampling::CleanCut,
                lambda_tc: cfg.pretrain.lambda_tc,
                augment: cfg.augment.clone(),
            }),
            mode: FinetuneMode::Linear,
        }
    }

    /// Random initialization, encoder and classifier trained on labels.
    pub fn scratch() -> Self {
        Self { name: "scratch".into(), pretrain: None, mode: FinetuneMode::Full }
    }

    pub fn with(mut self, name: &str, f: impl FnOnce(&mut Self)) -> Self {
        self.name = name.into();
        f(&mut self);
        self
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RunResult {
    pub variant: String,
    pub seed: u64,
    pub report: MetricsReport,
    pub pretrain_steps: usize,
    pub finetune_steps: usize,
    #[serde(skip)]
    pub pretrain_log: Vec<StepLog>,
    pub seconds: f64,
}

/// Runs variants on one recording collection, reusing pretrained encoders
/// across variants that share a pretraining spec and seed.
pub struct Runner<'a> {
    pub recordings: &'a [Recording],
    pub config: Config,
    pub split: Split,
    cache: BTreeMap<(String, u64), (EncoderParams, Vec<StepLog>)>,
}

impl<'a> Runner<'a> {
    pub fn new(recordings: &'a [Recording], config: Config) -> Result<Self> {
        config.validate()?;
        let split = split_subjects(recordings, config.experiment.test_subjects, config.seed)?;
        Ok(Self { recordings, config, split, cache: BTreeMap::new() })
    }

    fn set(&self, sampling: Sampling, subjects: &[String]) -> Result<ClipSet<'a>> {
        let dims = self.config.encoder.input_dims();
        Ok(ClipSet::new(self.recordings, sampling, &self.config.sampler, dims)?.restrict(subjects))
    }

    /// `(total, warmup)` pretraining steps shared by every variant.
    pub fn pretrain_budget(&self) -> Result<(usize, usize)> {
        let n = self.set(Sampling::CleanCut, &self.split.train)?.len();
        Ok(self.config.pretrain.schedule_for(n))
    }

    fn pretrained(&mut self, spec: &PretrainSpec, seed: u64) -> Result<(EncoderParams, Vec<StepLog>)> {
        let key = (serde_json::to_string(spec).expect("serializable"), seed);
        if let Some(hit) = self.cache.get(&key) {
            return Ok(hit.clone());
        }
        let (total, warmup) = self.pretrain_budget()?;
        let set = self.set(spec.sampling, &self.split.train)?;
        let mut pc = self.config.pretrain.clone();
        pc.lambda_tc = spec.lambda_tc;
        pc.total_steps = Some(total);
        pc.warmup_steps = Some(warmup);
        let init = EncoderParams::init(&self.config.encoder, rng::derive_seed(seed, &[TAG_INIT]))?;
        let out = pretrain(init, &set, &pc, &spec.augment, rng::derive_seed(seed, &[TAG_PRE]), |l| {
            log::debug!("{}", serde_json::to_string(l).unwrap_or_default())
        })?;
        self.cache.insert(key, (out.params.clone(), out.log.clone()));
        Ok((out.params, out.log))
    }

    pub fn run(&mut self, variant: &Variant, seed: u64) -> Result<RunResult> {
        let t0 = Instant::now();
        let train = self.set(Sampling::Sliding, &self.split.train)?;
        let test = self.set(Sampling::Sliding, &self.split.test)?;
        let probe_steps = self.config.finetune.steps_for(train.len());
        let (params, pretrain_log, ft) = match &variant.pretrain {
            Some(spec) => {
                let (p, log) = self.pretrained(spec, seed)?;
                let ft = FinetuneConfig { mode: variant.mode, ..self.config.finetune.clone() };
                (p, log, ft)
            }
            None => {
                // same optimizer-step budget as pretraining plus probing
                let budget = self.pretrain_budget()?.0 + probe_steps;
                let per_epoch = train.len().div_ceil(self.config.finetune.batch);
                let ft = FinetuneConfig {
                    mode: variant.mode,
                    epochs: budget.div_ceil(per_epoch),
                    max_steps: Some(budget),
                    ..self.config.finetune.clone()
                };
                let init = EncoderParams::init(&self.config.encoder, rng::derive_seed(seed, &[TAG_INIT]))?;
                (init, Vec::new(), ft)
            }
        };
        let out = finetune(params, &train, &ft, rng::derive_seed(seed, &[TAG_FT]), |_| {})?;
        let scores = predict_set(&out.params, &test)?;
        let labels: Vec<f64> = test.items.iter().map(|i| i.p_movement).collect();
        let subtypes: Vec<_> = test.items.iter().map(|i| i.subtype).collect();
        let report = evaluate(&scores, &labels, &subtypes, &self.config.eval.options());
        Ok(RunResult {
            variant: variant.name.clone(),
            seed,
            report,
            pretrain_steps: pretrain_log.len(),
            finetune_steps: out.log.len(),
            pretrain_log,
            seconds: t0.elapsed().as_secs_f64(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    Augmentation,
    Loss,
    Sampling,
    Mode,
}

impl std::str::FromStr for Axis {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "augmentation" => Ok(Self::Augmentation),
            "loss" => Ok(Self::Loss),
            "sampling" => Ok(Self::Sampling),
            "mode" => Ok(Self::Mode),
            _ => Err(Error::Argument(format!("unknown ablation axis `{s}`"))),
        }
    }
}

/// Rows compared along `axis`.
pub fn axis_variants(axis: Axis, cfg: &Config) -> Vec<Variant> {
    let curl = Variant::curl(cfg);
    let lam = |l: f64| move |v: &mut Variant| v.pretrain.as_mut().unwrap().lambda_tc = l;
    match axis {
        Axis::Loss => {
            let mut rows = Vec::new();
            for mode in [FinetuneMode::Full, FinetuneMode::Linear] {
                let m = mode.as_str();
                rows.push(curl.clone().with(&format!("L_sc / {m}"), |v| {
                    lam(0.0)(v);
                    v.mode = mode;
                }));
                rows.push(curl.clone().with(&format!("L_sc+L_tc / {m}"), |v| {
                    lam(1.0)(v);
                    v.mode = mode;
                }));
            }
            rows
        }
        Axis::Sampling => vec![
            curl.clone().with("clean_cut", |_| {}),
            curl.clone().with("sliding", |v| v.pretrain.as_mut().unwrap().sampling = Sampling::Sliding),
        ],
        Axis::Mode => vec![
            curl.clone().with("linear", |_| {}),
            curl.clone().with("full", |v| v.mode = FinetuneMode::Full),
            Variant::scratch(),
        ],
        Axis::Augmentation => {
            let aug = |name: &str, i: &[AugOp], j: &[AugOp]| {
                let (i, j) = (i.to_vec(), j.to_vec());
                curl.clone().with(name, move |v| {
                    v.pretrain.as_mut().unwrap().augment = AugmentConfig { branch_i: i, branch_j: j }
                })
            };
            let mut rows: Vec<Variant> = AugOp::ALL.iter().map(|&op| aug(op.as_str(), &[op], &[])).collect();
            rows.push(aug("spatial", &AugOp::SPATIAL, &AugOp::SPATIAL));
            rows.push(aug("temporal", &AugOp::TEMPORAL, &AugOp::TEMPORAL));
            rows.push(aug("spatial+temporal", &AugOp::ALL, &AugOp::ALL));
            rows
        }
    }
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

#[derive(Debug, Clone, Serialize)]
pub struct SummaryRow {
    pub variant: String,
    #[serde(rename = "bACC")]
    pub bacc: Option<f64>,
    #[serde(rename = "AUROC")]
    pub auroc: Option<f64>,
    pub seeds: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct AblationReport {
    pub axis: Axis,
    pub split: Split,
    pub runs: Vec<RunResult>,
    /// Medians over seeds per variant.
    pub summary: Vec<SummaryRow>,
}

pub fn summarize(variants: &[Variant], runs: &[RunResult]) -> Vec<SummaryRow> {
    variants
        .iter()
        .map(|v| {
            let rs: Vec<&RunResult> = runs.iter().filter(|r| r.variant == v.name).collect();
            let col = |f: fn(&MetricsReport) -> Option<f64>| median(&rs.iter().filter_map(|r| f(&r.report)).collect::<Vec<_>>());
            SummaryRow { variant: v.name.clone(), bacc: col(|r| r.bacc), auroc: col(|r| r.auroc), seeds: rs.len() }
        })
        .collect()
}

/// Every variant of `axis` for every configured seed.
pub fn run_ablation(
    recordings: &[Recording],
    cfg: &Config,
    axis: Axis,
    mut on_run: impl FnMut(&RunResult),
) -> Result<AblationReport> {
    let mut runner = Runner::new(recordings, cfg.clone())?;
    let variants = axis_variants(axis, cfg);
    let mut runs = Vec::new();
    for &seed in &cfg.experiment.seeds {
        for v in &variants {
            let r = runner.run(v, seed)?;
            on_run(&r);
            runs.push(r);
        }
    }
    Ok(AblationReport { axis, split: runner.split.clone(), summary: summarize(&variants, &runs), runs })
}

impl AblationReport {
    /// Table rows: one per run, then one median row per variant.
    pub fn rows(&self) -> (Vec<&'static str>, Vec<Vec<String>>) {
        let mut header = vec!["variant", "seed"];
        header.extend(crate::eval::METRIC_NAMES);
        let fmt = |v: Option<f64>| v.map_or("NA".to_string(), |x| format!("{x:.4}"));
        let mut rows: Vec<Vec<String>> = self
            .runs
            .iter()
            .map(|r| {
                let mut row = vec![r.variant.clone(), r.seed.to_string()];
                row.extend(crate::eval::METRIC_NAMES.iter().map(|m| fmt(r.report.get(m))));
                row
            })
            .collect();
        for s in &self.summary {
            let mut row = vec![s.variant.clone(), "median".to_string()];
            for m in crate::eval::METRIC_NAMES {
                let vals: Vec<f64> = self.runs.iter().filter(|r| r.variant == s.variant).filter_map(|r| r.report.get(m)).collect();
                row.push(fmt(median(&vals)));
            }
            rows.push(row);
        }
        (header, rows)
    }
}
