//! Self-supervised pretraining, fine-tuning and sliding-window inference.
//!
//! Contrastive losses couple every sample in a batch, so gradient
//! accumulation sums over whole contrastive micro-batches: each micro-batch
//! computes its own InfoNCE and k-means, and an optimizer step averages the
//! gradients of `effective_batch / micro_batch` such groups.
//!
//! Per-sample work runs on rayon in fixed-size chunks whose partial
//! gradients are summed in chunk order, so results do not depend on the
//! thread count.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::augment::{make_views, AugmentConfig};
use crate::data_model::VideoClip;
use crate::dataset::ClipSet;
use crate::encoder::{EncoderParams, HeadKind};
use crate::error::{Error, NumericDump, Result};
use crate::losses::{self, pretrain_loss, soft_target, TemporalParams};
use crate::optim::{lr_schedule, AdamW, Sgd};
use crate::rng;
use crate::io::RawVideo;
use crate::sampling::{self, SamplerConfig};
use crate::synth::Recording;

const CHUNK: usize = 4;
const TAG_SHUFFLE: u64 = 0x5A;
const TAG_VIEWS: u64 = 0x71;
const TAG_KMEANS: u64 = 0x4B;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PretrainConfig {
    pub epochs: usize,
    pub micro_batch: usize,
    pub effective_batch: usize,
    pub lr: f64,
    pub warmup_epochs: usize,
    pub weight_decay: f64,
    pub lambda_tc: f64,
    pub tau_ins: f64,
    pub tau_ca: f64,
    pub clusters: usize,
    /// Stop after this many optimizer steps (the schedule still spans all epochs).
    pub max_steps: Option<usize>,
    /// Fixed schedule length in optimizer steps, replacing `epochs`.
    pub total_steps: Option<usize>,
    /// Fixed warmup length in steps, replacing `warmup_epochs`.
    pub warmup_steps: Option<usize>,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            micro_batch: 32,
            effective_batch: 128,
            lr: 0.003,
            warmup_epochs: 3,
            weight_decay: 0.05,
            lambda_tc: 1.0,
            tau_ins: losses::TAU_INS,
            tau_ca: losses::TAU_CA,
            clusters: losses::DEFAULT_K,
            max_steps: None,
            total_steps: None,
            warmup_steps: None,
        }
    }
}

impl PretrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.micro_batch < 2 || self.effective_batch % self.micro_batch != 0 {
            return Err(Error::Config(format!(
                "micro_batch {} must be >= 2 and divide effective_batch {}",
                self.micro_batch, self.effective_batch
            )));
        }
        if self.clusters == 0 || self.clusters > self.micro_batch {
            return Err(Error::Config(format!(
                "clusters {} must be in 1..=micro_batch {}",
                self.clusters, self.micro_batch
            )));
        }
        if !(self.lr > 0.0 && self.tau_ins > 0.0 && self.tau_ca > 0.0 && self.weight_decay >= 0.0 && self.lambda_tc >= 0.0) {
            return Err(Error::Config("pretrain lr and temperatures must be > 0, weight_decay and lambda_tc >= 0".into()));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        Ok(())
    }

    pub fn accumulation(&self) -> usize {
        self.effective_batch / self.micro_batch
    }

    /// `(total, warmup)` optimizer steps for a set of `n` clips.
    pub fn schedule_for(&self, n: usize) -> (usize, usize) {
        let per_epoch = (n / self.micro_batch).div_ceil(self.accumulation());
        (
            self.total_steps.unwrap_or(self.epochs * per_epoch),
            self.warmup_steps.unwrap_or(self.warmup_epochs * per_epoch),
        )
    }

    pub fn temporal(&self) -> TemporalParams {
        TemporalParams { k: self.clusters, tau_ca: self.tau_ca, tau_assign: self.tau_ca, ..Default::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FinetuneMode {
    /// Frozen encoder, classifier only.
    Linear,
    /// Encoder and classifier.
    Full,
}

impl FinetuneMode {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Linear => "linear",
            Self::Full => "full",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FinetuneConfig {
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub momentum: f64,
    pub mode: FinetuneMode,
    pub max_steps: Option<usize>,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        Self { epochs: 10, batch: 16, lr: 0.01, momentum: 0.9, mode: FinetuneMode::Linear, max_steps: None }
    }
}

impl FinetuneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch == 0 || self.epochs == 0 || !(self.lr > 0.0) || !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config("finetune needs batch, epochs >= 1, lr > 0, momentum in [0, 1)".into()));
        }
        Ok(())
    }

    /// Optimizer steps for a set of `n` clips.
    pub fn steps_for(&self, n: usize) -> usize {
        let total = self.epochs * n.div_ceil(self.batch);
        self.max_steps.map_or(total, |m| m.min(total))
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub phase: String,
    pub step: usize,
    pub epoch: usize,
    pub lr: f64,
    #[serde(rename = "L_sc", skip_serializing_if = "Option::is_none", default)]
    pub l_sc: Option<f64>,
    #[serde(rename = "L_tc", skip_serializing_if = "Option::is_none", default)]
    pub l_tc: Option<f64>,
    #[serde(rename = "L_total", skip_serializing_if = "Option::is_none", default)]
    pub l_total: Option<f64>,
    #[serde(rename = "L_CE", skip_serializing_if = "Option::is_none", default)]
    pub l_ce: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: EncoderParams,
    pub log: Vec<StepLog>,
}

fn pretrain_trainable(name: &str) -> bool {
    !name.starts_with("classifier")
}

fn numeric_error(phase: &str, step: usize, epoch: usize, reason: &str, log: &[StepLog], params: &EncoderParams) -> Error {
    let last_losses = log
        .iter()
        .rev()
        .take(5)
        .filter_map(|l| l.l_total.or(l.l_ce))
        .collect();
    Error::NonFinite(Box::new(NumericDump {
        phase: phase.into(),
        step,
        epoch,
        reason: reason.into(),
        last_losses,
        param_norms: params.tensors().into_iter().map(|(n, t)| (n, t.norm())).collect(),
    }))
}

/// Runs `f` over `items` in fixed chunks and sums the per-chunk gradients
/// in chunk order. Returns the summed gradients and `f`'s value per item.
fn chunked_grads<T: Sync>(
    like: &EncoderParams,
    items: &[T],
    f: impl Fn(&T, &mut EncoderParams) -> Result<f64> + Sync,
) -> Result<(EncoderParams, Vec<f64>)> {
    let partials: Vec<(EncoderParams, Vec<f64>)> = items
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut g = like.zeros_like();
            let vals = chunk.iter().map(|it| f(it, &mut g)).collect::<Result<_>>()?;
            Ok((g, vals))
        })
        .collect::<Result<_>>()?;
    let mut total = like.zeros_like();
    let mut vals = Vec::with_capacity(items.len());
    for (p, v) in &partials {
        total.add_assign(p);
        vals.extend(v);
    }
    Ok((total, vals))
}

struct MicroResult {
    grads: EncoderParams,
    l_sc: f64,
    l_tc: f64,
    total: f64,
}

#[allow(clippy::too_many_arguments)]
fn pretrain_micro_batch(
    params: &EncoderParams,
    set: &ClipSet,
    idx: &[usize],
    epoch: usize,
    cfg: &PretrainConfig,
    aug: &AugmentConfig,
    seed: u64,
    kmeans_seed: u64,
) -> Result<MicroResult> {
    let (pi, pj) = aug.policies();
    let patch = params.config.patch_dims();
    let pairs: Vec<(VideoClip, VideoClip)> = idx
        .par_iter()
        .map(|&i| {
            let clip = set.clip(i)?;
            let mut r = rng::stream(seed, &[TAG_VIEWS, epoch as u64, i as u64]);
            make_views(&clip, &pi, &pj, patch, &mut r)
        })
        .collect::<Result<_>>()?;
    let n = pairs.len();
    let views: Vec<&VideoClip> = pairs.iter().map(|p| &p.0).chain(pairs.iter().map(|p| &p.1)).collect();
    let hs: Vec<Vec<f64>> = views.par_iter().map(|v| params.encode(v)).collect::<Result<_>>()?;
    let z: Vec<Vec<f64>> = hs.iter().map(|h| params.project_spatial(h)).collect();
    let m: Vec<Vec<f64>> = hs.iter().map(|h| params.project_temporal(h)).collect();
    let loss = pretrain_loss(
        [&z[..n], &z[n..]],
        [&m[..n], &m[n..]],
        cfg.tau_ins,
        &cfg.temporal(),
        cfg.lambda_tc,
        kmeans_seed,
    )?;
    let dz: Vec<&Vec<f64>> = loss.grad_z[0].iter().chain(&loss.grad_z[1]).collect();
    let dm: Vec<&Vec<f64>> = loss.grad_m[0].iter().chain(&loss.grad_m[1]).collect();
    let work: Vec<usize> = (0..2 * n).collect();
    let use_tc = cfg.lambda_tc != 0.0;
    let (grads, _) = chunked_grads(params, &work, |&v, g| {
        let h = &hs[v];
        let (_, tr) = params.head_sc.forward(h);
        let mut dh = params.head_sc.backward(h, &tr, dz[v], &mut g.head_sc);
        if use_tc {
            let (_, tr) = params.head_tc.forward(h);
            let d2 = params.head_tc.backward(h, &tr, dm[v], g.head_mut(HeadKind::Temporal));
            dh.iter_mut().zip(d2).for_each(|(a, b)| *a += b);
        }
        params.encode_backward(views[v], &dh, g)?;
        Ok(0.0)
    })?;
    Ok(MicroResult { grads, l_sc: loss.spatial.loss, l_tc: loss.temporal.loss, total: loss.total })
}

/// Pretrains encoder and both projection heads on clean-cut clips.
///
/// `on_step` sees each log line as it is produced.
pub fn pretrain(
    mut params: EncoderParams,
    set: &ClipSet,
    cfg: &PretrainConfig,
    aug: &AugmentConfig,
    seed: u64,
    mut on_step: impl FnMut(&StepLog),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    check_dims(&params, set)?;
    let micro_per_epoch = set.len() / cfg.micro_batch;
    if micro_per_epoch == 0 {
        return Err(Error::Argument(format!(
            "pretraining needs at least {} clips, got {}",
            cfg.micro_batch,
            set.len()
        )));
    }
    let accum = cfg.accumulation();
    let (total_steps, warmup) = cfg.schedule_for(set.len());
    let limit = cfg.max_steps.unwrap_or(usize::MAX).min(total_steps);
    let mut opt = AdamW::new(&params, cfg.weight_decay);
    let mut log = Vec::new();
    let mut step = 0;
    'outer: for epoch in 0.. {
        let order = shuffled(set.len(), seed, epoch);
        let micro: Vec<&[usize]> = order.chunks_exact(cfg.micro_batch).collect();
        for group in micro.chunks(accum) {
            if step >= limit {
                break 'outer;
            }
            let lr = lr_schedule(step, cfg.lr, warmup, total_steps);
            let mut grads = params.zeros_like();
            let (mut l_sc, mut l_tc, mut total) = (0.0, 0.0, 0.0);
            for (mi, idx) in group.iter().enumerate() {
                let ks = rng::derive_seed(seed, &[TAG_KMEANS, step as u64, mi as u64]);
                let r = pretrain_micro_batch(&params, set, idx, epoch, cfg, aug, seed, ks)?;
                grads.add_assign(&r.grads);
                l_sc += r.l_sc;
                l_tc += r.l_tc;
                total += r.total;
            }
            let g = group.len() as f64;
            grads.scale(1.0 / g);
            let entry = StepLog {
                phase: "pretrain".into(),
                step,
                epoch,
                lr,
                l_sc: Some(l_sc / g),
                l_tc: Some(l_tc / g),
                l_total: Some(total / g),
                l_ce: None,
            };
            on_step(&entry);
            log.push(entry);
            if !(total.is_finite() && grads.is_finite()) {
                return Err(numeric_error("pretrain", step, epoch, "non-finite loss or gradient", &log, &params));
            }
            opt.step(&mut params, &grads, lr, pretrain_trainable);
            if !params.is_finite() {
                return Err(numeric_error("pretrain", step, epoch, "non-finite parameters after update", &log, &params));
            }
            step += 1;
        }
    }
    Ok(TrainOutcome { params, log })
}

fn check_dims(params: &EncoderParams, set: &ClipSet) -> Result<()> {
    if params.config.input_dims() != set.dims {
        return Err(Error::Config(format!(
            "encoder input {:?} does not match clip dims {:?}",
            params.config.input, set.dims
        )));
    }
    Ok(())
}

fn shuffled(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    use rand::seq::SliceRandom;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::stream(seed, &[TAG_SHUFFLE, epoch as u64]));
    order
}

/// Clip representations for every item, in order.
pub fn encode_set(params: &EncoderParams, set: &ClipSet) -> Result<Vec<Vec<f64>>> {
    check_dims(params, set)?;
    (0..set.len())
        .into_par_iter()
        .map(|i| params.encode(&set.clip(i)?))
        .collect()
}

/// Trains the classifier (and in full mode the encoder) with soft-label
/// cross-entropy and momentum SGD at a constant learning rate.
pub fn finetune(
    mut params: EncoderParams,
    set: &ClipSet,
    cfg: &FinetuneConfig,
    seed: u64,
    mut on_step: impl FnMut(&StepLog),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    check_dims(&params, set)?;
    if set.is_empty() {
        return Err(Error::Argument("fine-tuning set is empty".into()));
    }
    let features = match cfg.mode {
        FinetuneMode::Linear => Some(encode_set(&params, set)?),
        FinetuneMode::Full => None,
    };
    let targets: Vec<Vec<f64>> = set.items.iter().map(|it| soft_target(it.p_movement)).collect();
    let limit = cfg.steps_for(set.len());
    let mut opt = Sgd::new(&params, cfg.momentum);
    let mut log = Vec::new();
    let mut step = 0;
    'outer: for epoch in 0..cfg.epochs {
        let order = shuffled(set.len(), seed, epoch);
        for batch in order.chunks(cfg.batch) {
            if step >= limit {
                break 'outer;
            }
            let y: Vec<Vec<f64>> = batch.iter().map(|&i| targets[i].clone()).collect();
            let bn = batch.len() as f64;
            let (loss, grads) = match &features {
                Some(f) => {
                    let logits: Vec<Vec<f64>> = batch.iter().map(|&i| params.classify_logits(&f[i])).collect();
                    let (loss, dl) = losses::soft_cross_entropy_logits(&logits, &y)?;
                    let mut g = params.zeros_like();
                    for (&i, d) in batch.iter().zip(&dl) {
                        params.classifier_backward(&f[i], d, &mut g);
                    }
                    (loss, g)
                }
                None => {
                    let work: Vec<(usize, &Vec<f64>)> = batch.iter().copied().zip(&y).collect();
                    let (g, per) = chunked_grads(&params, &work, |&(i, yi), g| {
                        let (h, trace) = params.encode_traced(&set.clip(i)?)?;
                        let logits = params.classify_logits(&h);
                        let (l, dl) = losses::soft_cross_entropy_logits(&[logits], &[yi.clone()])?;
                        let d: Vec<f64> = dl[0].iter().map(|x| x / bn).collect();
                        let dh = params.classifier_backward(&h, &d, g);
                        params.backward_traced(trace, &dh, g);
                        Ok(l)
                    })?;
                    (per.iter().sum::<f64>() / bn, g)
                }
            };
            let entry = StepLog {
                phase: format!("finetune_{}", cfg.mode.as_str()),
                step,
                epoch,
                lr: cfg.lr,
                l_sc: None,
                l_tc: None,
                l_total: None,
                l_ce: Some(loss),
            };
            on_step(&entry);
            log.push(entry);
            if !(loss.is_finite() && grads.is_finite()) {
                return Err(numeric_error("finetune", step, epoch, "non-finite loss or gradient", &log, &params));
            }
            match cfg.mode {
                FinetuneMode::Linear => opt.step(&mut params, &grads, cfg.lr, |n| n.starts_with("classifier")),
                FinetuneMode::Full => opt.step(&mut params, &grads, cfg.lr, |n| {
                    n.starts_with("classifier") || n.starts_with("encoder")
                }),
            }
            step += 1;
        }
    }
    Ok(TrainOutcome { params, log })
}

/// Movement probability of every item in `set`, in order.
pub fn predict_set(params: &EncoderParams, set: &ClipSet) -> Result<Vec<f64>> {
    Ok(encode_set(params, set)?.iter().map(|h| params.classify(h)[1]).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimelinePoint {
    pub start_s: f64,
    pub end_s: f64,
    pub p_movement: f64,
}

/// One forward pass per sliding window, no augmentation, in temporal order.
/// A recording shorter than one clip yields an empty timeline.
pub fn infer_timeline(params: &EncoderParams, recording: &Recording, sampler: &SamplerConfig) -> Result<Vec<TimelinePoint>> {
    infer_video(params, &recording.video, &recording.id, sampler)
}

/// Sliding-window movement probabilities for an unlabeled video.
pub fn infer_video(params: &EncoderParams, video: &RawVideo, id: &str, sampler: &SamplerConfig) -> Result<Vec<TimelinePoint>> {
    sampler.validate()?;
    let windows = sampling::sliding_spans(video.duration_s(), sampler);
    if windows.is_empty() {
        log::warn!("video {id} is shorter than one clip; no windows");
    }
    let dims = params.config.input_dims();
    windows
        .par_iter()
        .map(|&w| {
            let raw = sampling::materialize_clip(video, id, w, sampler)?;
            let h = params.encode(&sampling::resize_clip(&raw, dims)?)?;
            Ok(TimelinePoint { start_s: w.start_s, end_s: w.end_s, p_movement: params.classify(&h)[1] })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::EncoderConfig;
    use crate::synth::{generate_dataset, SynthConfig};

    fn recs() -> Vec<Recording> {
        let cfg = SynthConfig { n_subjects: 2, duration_s: 90.0, height: 32, width: 32, ..Default::default() };
        generate_dataset(&cfg).unwrap()
    }

    fn enc() -> EncoderConfig {
        EncoderConfig { input: [4, 16, 16], patch: [2, 8, 8], embed_dim: 16, depth: 1, heads: 2, ..EncoderConfig::tiny() }
    }

    fn small_pretrain() -> PretrainConfig {
        PretrainConfig { micro_batch: 8, effective_batch: 16, clusters: 3, epochs: 4, max_steps: Some(3), ..Default::default() }
    }

    #[test]
    fn pretrain_is_deterministic_and_respects_lambda() {
        let recs = recs();
        let set = ClipSet::clean_cut(&recs, &SamplerConfig::default(), (4, 16, 16)).unwrap();
        let p0 = EncoderParams::init(&enc(), 1).unwrap();
        let aug = AugmentConfig::default();
        let a = pretrain(p0.clone(), &set, &small_pretrain(), &aug, 5, |_| {}).unwrap();
        let b = pretrain(p0.clone(), &set, &small_pretrain(), &aug, 5, |_| {}).unwrap();
        assert_eq!(a.log, b.log);
        assert_eq!(a.params, b.params);
        assert_eq!(a.log.len(), 3);
        assert_eq!(a.params.classifier, p0.classifier);
        // lambda 0: L_tc still logged, head_tc untouched apart from weight decay
        let cfg0 = PretrainConfig { lambda_tc: 0.0, weight_decay: 0.0, ..small_pretrain() };
        let c = pretrain(p0.clone(), &set, &cfg0, &aug, 5, |_| {}).unwrap();
        assert!(c.log.iter().all(|l| l.l_tc.unwrap().is_finite()));
        assert_eq!(c.log[0].l_total, c.log[0].l_sc);
        assert_eq!(c.params.head_tc, p0.head_tc);
        assert_ne!(c.params.head_sc, p0.head_sc);
    }

    #[test]
    fn pretrain_rejects_tiny_sets_and_bad_dims() {
        let recs = recs();
        let set = ClipSet::clean_cut(&recs, &SamplerConfig::default(), (4, 16, 16)).unwrap();
        let few = ClipSet { items: set.items[..3].to_vec(), ..set.clone() };
        let p0 = EncoderParams::init(&enc(), 1).unwrap();
        let aug = AugmentConfig::default();
        assert!(matches!(pretrain(p0.clone(), &few, &small_pretrain(), &aug, 0, |_| {}), Err(Error::Argument(_))));
        let other = ClipSet { dims: (4, 32, 32), ..set.clone() };
        assert!(matches!(pretrain(p0, &other, &small_pretrain(), &aug, 0, |_| {}), Err(Error::Config(_))));
    }

    #[test]
    fn linear_mode_freezes_encoder() {
        let recs = recs();
        let set = ClipSet::sliding(&recs, &SamplerConfig::default(), (4, 16, 16)).unwrap();
        let set = ClipSet { items: set.items[..40].to_vec(), ..set };
        let p0 = EncoderParams::init(&enc(), 2).unwrap();
        let cfg = FinetuneConfig { epochs: 2, ..Default::default() };
        let out = finetune(p0.clone(), &set, &cfg, 3, |_| {}).unwrap();
        let mut a = out.params.clone();
        a.classifier = p0.classifier.clone();
        assert_eq!(a, p0);
        assert_ne!(out.params.classifier, p0.classifier);
        assert_eq!(out.log.len(), 2 * 3);
        let full = finetune(p0.clone(), &set, &FinetuneConfig { mode: FinetuneMode::Full, max_steps: Some(2), ..cfg }, 3, |_| {}).unwrap();
        assert_ne!(full.params.blocks, p0.blocks);
        assert_eq!(full.params.head_sc, p0.head_sc);
    }

    #[test]
    fn full_mode_gradient_matches_linear_for_classifier() {
        // With lr on the classifier only, full and linear produce the same first loss.
        let recs = recs();
        let set = ClipSet::sliding(&recs, &SamplerConfig::default(), (4, 16, 16)).unwrap();
        let set = ClipSet { items: set.items[..16].to_vec(), ..set };
        let p0 = EncoderParams::init(&enc(), 2).unwrap();
        let lin = finetune(p0.clone(), &set, &FinetuneConfig { max_steps: Some(1), ..Default::default() }, 1, |_| {}).unwrap();
        let full = finetune(
            p0,
            &set,
            &FinetuneConfig { max_steps: Some(1), mode: FinetuneMode::Full, ..Default::default() },
            1,
            |_| {},
        )
        .unwrap();
        assert!((lin.log[0].l_ce.unwrap() - full.log[0].l_ce.unwrap()).abs() < 1e-12);
        assert_eq!(lin.params.classifier, full.params.classifier);
    }

    #[test]
    fn hard_labels_reduce_to_hard_cross_entropy() {
        let logits = vec![vec![0.2, -1.0]];
        let (soft, _) = losses::soft_cross_entropy_logits(&logits, &[soft_target(1.0)]).unwrap();
        let p = crate::encoder::softmax(&logits[0]);
        assert!((soft + p[1].ln()).abs() < 1e-15);
    }

    #[test]
    fn infer_counts_and_constant_input() {
        let mut recs = recs();
        let p = EncoderParams::init(&enc(), 4).unwrap();
        let s = SamplerConfig::default();
        let tl = infer_timeline(&p, &recs[0], &s).unwrap();
        assert_eq!(tl.len(), sampling::sliding_windows(&recs[0].timeline, &s).len());
        assert!(tl.windows(2).all(|w| w[0].start_s < w[1].start_s));
        if let crate::io::FrameData::U8(d) = &mut recs[1].video.data {
            d.iter_mut().for_each(|x| *x = 0);
        }
        let tl = infer_timeline(&p, &recs[1], &s).unwrap();
        assert!(tl.iter().all(|x| x.p_movement == tl[0].p_movement));
        let short = SamplerConfig { clip_len_s: 200.0, ..s };
        assert!(infer_timeline(&p, &recs[0], &short).unwrap().is_empty());
    }

    #[test]
    fn config_validation() {
        assert!(PretrainConfig { micro_batch: 24, ..Default::default() }.validate().is_err());
        assert!(PretrainConfig { clusters: 40, ..Default::default() }.validate().is_err());
        assert!(FinetuneConfig { batch: 0, ..Default::default() }.validate().is_err());
    }
}
