//! Classification metrics, patient-wise cross-validation folds, report
//! aggregation and embedding export.
//!
//! Rates that depend on a class absent from the ground truth are `None`
//! (serialized as `null`), never 0.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data_model::Subtype;
use crate::dataset::ClipSet;
use crate::encoder::EncoderParams;
use crate::error::{Error, Result};
use crate::io;
use crate::rng;
use crate::training::encode_set;

/// Metric names as columns appear in reports.
pub const METRIC_NAMES: [&str; 6] = ["Spec.", "Sen.", "W.Prec", "W.F1", "bACC", "AUROC"];

/// Hard label per clip, `None` where the clip falls inside `exclusion`
/// (open interval).
pub fn binarize_eval_labels(p: &[f64], threshold: f64, exclusion: Option<(f64, f64)>) -> Vec<Option<bool>> {
    p.iter()
        .map(|&x| match exclusion {
            Some((a, b)) if x > a && x < b => None,
            _ => Some(x >= threshold),
        })
        .collect()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl Confusion {
    pub fn from_labels(pred: &[bool], truth: &[bool]) -> Self {
        let mut c = Self::default();
        for (&p, &t) in pred.iter().zip(truth) {
            match (p, t) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, false) => c.tn += 1,
                (false, true) => c.fn_ += 1,
            }
        }
        c
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// Recall of non-movement.
    #[serde(rename = "Spec.")]
    pub specificity: Option<f64>,
    /// Recall of movement.
    #[serde(rename = "Sen.")]
    pub sensitivity: Option<f64>,
    #[serde(rename = "W.Prec")]
    pub weighted_precision: Option<f64>,
    #[serde(rename = "W.F1")]
    pub weighted_f1: Option<f64>,
    #[serde(rename = "bACC")]
    pub bacc: Option<f64>,
    #[serde(rename = "AUROC")]
    pub auroc: Option<f64>,
    pub per_archetype_recall: BTreeMap<String, Option<f64>>,
    pub counts: Confusion,
}

impl MetricsReport {
    pub fn get(&self, name: &str) -> Option<f64> {
        match name {
            "Spec." => self.specificity,
            "Sen." => self.sensitivity,
            "W.Prec" => self.weighted_precision,
            "W.F1" => self.weighted_f1,
            "bACC" => self.bacc,
            "AUROC" => self.auroc,
            _ => None,
        }
    }
}

fn ratio(a: usize, b: usize) -> Option<f64> {
    (b > 0).then(|| a as f64 / b as f64)
}

fn f1(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// Every metric except AUROC from hard predictions.
///
/// Precision of a class that is never predicted counts as 0. Weighted
/// precision and F1 weight each class by its ground-truth support.
pub fn confusion_metrics(pred: &[bool], truth: &[bool]) -> MetricsReport {
    let c = Confusion::from_labels(pred, truth);
    let pos = c.tp + c.fn_;
    let neg = c.tn + c.fp;
    let sens = ratio(c.tp, pos);
    let spec = ratio(c.tn, neg);
    let n = c.total();
    let (mut wp, mut wf) = (None, None);
    if n > 0 {
        let prec_pos = ratio(c.tp, c.tp + c.fp).unwrap_or(0.0);
        let prec_neg = ratio(c.tn, c.tn + c.fn_).unwrap_or(0.0);
        let (wpos, wneg) = (pos as f64 / n as f64, neg as f64 / n as f64);
        wp = Some(wpos * prec_pos + wneg * prec_neg);
        wf = Some(wpos * f1(prec_pos, sens.unwrap_or(0.0)) + wneg * f1(prec_neg, spec.unwrap_or(0.0)));
    }
    MetricsReport {
        specificity: spec,
        sensitivity: sens,
        weighted_precision: wp,
        weighted_f1: wf,
        bacc: sens.zip(spec).map(|(a, b)| (a + b) / 2.0),
        auroc: None,
        per_archetype_recall: BTreeMap::new(),
        counts: c,
    }
}

/// Mann–Whitney statistic: `P(s⁺ > s⁻) + ½ P(s⁺ = s⁻)`.
pub fn auroc(scores: &[f64], truth: &[bool]) -> Option<f64> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let npos = truth.iter().filter(|&&t| t).count();
    let nneg = truth.len() - npos;
    if npos == 0 || nneg == 0 {
        return None;
    }
    // midranks over tie groups
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += mid * idx[i..=j].iter().filter(|&&k| truth[k]).count() as f64;
        i = j + 1;
    }
    let u = rank_sum - (npos * (npos + 1)) as f64 / 2.0;
    Some(u / (npos as f64 * nneg as f64))
}

/// ROC curve points `(fpr, tpr)` from the highest threshold down.
pub fn roc_points(scores: &[f64], truth: &[bool]) -> Vec<(f64, f64)> {
    let npos = truth.iter().filter(|&&t| t).count().max(1) as f64;
    let nneg = truth.iter().filter(|&&t| !t).count().max(1) as f64;
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut out = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0.0, 0.0);
    let mut i = 0;
    while i < idx.len() {
        let s = scores[idx[i]];
        while i < idx.len() && scores[idx[i]] == s {
            if truth[idx[i]] {
                tp += 1.0;
            } else {
                fp += 1.0;
            }
            i += 1;
        }
        out.push((fp / nneg, tp / npos));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalOptions {
    /// Movement iff `p ≥ threshold`, for both labels and predictions.
    pub threshold: f64,
    pub exclusion_band: Option<(f64, f64)>,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self { threshold: 0.5, exclusion_band: None }
    }
}

/// Full report from predicted movement probabilities and soft labels.
pub fn evaluate(scores: &[f64], p_labels: &[f64], subtypes: &[Option<Subtype>], opts: &EvalOptions) -> MetricsReport {
    let labels = binarize_eval_labels(p_labels, opts.threshold, opts.exclusion_band);
    let keep: Vec<usize> = (0..labels.len()).filter(|&i| labels[i].is_some()).collect();
    let truth: Vec<bool> = keep.iter().map(|&i| labels[i].unwrap()).collect();
    let s: Vec<f64> = keep.iter().map(|&i| scores[i]).collect();
    let pred: Vec<bool> = s.iter().map(|&x| x >= opts.threshold).collect();
    let mut r = confusion_metrics(&pred, &truth);
    r.auroc = auroc(&s, &truth);
    for st in Subtype::MOVEMENT {
        let members: Vec<usize> = (0..keep.len()).filter(|&j| truth[j] && subtypes[keep[j]] == Some(st)).collect();
        let hit = members.iter().filter(|&&j| pred[j]).count();
        r.per_archetype_recall.insert(st.as_str().to_string(), ratio(hit, members.len()));
    }
    r
}

/// Shuffled partition of subjects into `k` folds whose sizes differ by at
/// most one.
pub fn patient_kfold<S: AsRef<str>>(subjects: &[S], k: usize, seed: u64) -> Result<Vec<Vec<String>>> {
    let mut ids: Vec<String> = subjects.iter().map(|s| s.as_ref().to_string()).collect::<BTreeSet<_>>().into_iter().collect();
    if k < 2 || ids.len() < k {
        return Err(Error::Argument(format!("{} subjects cannot fill {k} folds", ids.len())));
    }
    ids.shuffle(&mut rng::stream(seed, &[0xF0]));
    let mut folds = vec![Vec::new(); k];
    for (i, id) in ids.into_iter().enumerate() {
        folds[i % k].push(id);
    }
    folds.iter_mut().for_each(|f| f.sort());
    Ok(folds)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Sample standard deviation (n − 1); 0 for a single value.
    pub std: f64,
    pub n: usize,
}

pub fn mean_std(values: &[f64]) -> Option<MeanStd> {
    if values.is_empty() {
        return None;
    }
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let std = if n > 1 {
        (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    Some(MeanStd { mean, std, n })
}

/// Mean ± sample std per metric over fold reports (undefined values skipped).
pub fn aggregate(reports: &[MetricsReport]) -> BTreeMap<String, Option<MeanStd>> {
    METRIC_NAMES
        .iter()
        .map(|&m| {
            let v: Vec<f64> = reports.iter().filter_map(|r| r.get(m)).collect();
            (m.to_string(), mean_std(&v))
        })
        .collect()
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| format!("{x:.6}"))
}

/// Per-fold rows plus `mean` and `std` rows, columns named as in [`METRIC_NAMES`].
pub fn write_fold_csv(path: &Path, reports: &[MetricsReport]) -> Result<()> {
    let mut header = vec!["fold"];
    header.extend(METRIC_NAMES);
    let mut rows: Vec<Vec<String>> = reports
        .iter()
        .enumerate()
        .map(|(i, r)| std::iter::once(i.to_string()).chain(METRIC_NAMES.iter().map(|m| cell(r.get(m)))).collect())
        .collect();
    let agg = aggregate(reports);
    for (label, pick) in [("mean", 0), ("std", 1)] {
        let mut row = vec![label.to_string()];
        for m in METRIC_NAMES {
            row.push(cell(agg[m].map(|a| if pick == 0 { a.mean } else { a.std })));
        }
        rows.push(row);
    }
    io::write_csv(path, &header, &rows)
}

pub fn write_roc_csv(path: &Path, points: &[(f64, f64)]) -> Result<()> {
    let rows: Vec<Vec<String>> = points.iter().map(|(f, t)| vec![f.to_string(), t.to_string()]).collect();
    io::write_csv(path, &["fpr", "tpr"], &rows)
}

/// Which vector an embedding row carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingKind {
    /// Encoder output `h` (dim D).
    Encoder,
    /// Temporal head output `M` (dim 128).
    Temporal,
    /// Spatial head output `z` (dim 128).
    Spatial,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingRow {
    pub clip_id: String,
    pub p_movement: f64,
    pub vector: Vec<f64>,
}

/// One row per clip in set order.
pub fn export_embeddings(params: &EncoderParams, set: &ClipSet, kind: EmbeddingKind) -> Result<Vec<EmbeddingRow>> {
    let hs = encode_set(params, set)?;
    Ok(hs
        .into_iter()
        .enumerate()
        .map(|(i, h)| EmbeddingRow {
            clip_id: set.clip_id(i),
            p_movement: set.items[i].p_movement,
            vector: match kind {
                EmbeddingKind::Encoder => h,
                EmbeddingKind::Temporal => params.project_temporal(&h),
                EmbeddingKind::Spatial => params.project_spatial(&h),
            },
        })
        .collect())
}

pub fn write_embeddings_csv(path: &Path, rows: &[EmbeddingRow]) -> Result<()> {
    let dim = rows.first().map_or(0, |r| r.vector.len());
    let names: Vec<String> = (0..dim).map(|j| format!("e{j}")).collect();
    let mut header = vec!["clip_id", "p_movement"];
    header.extend(names.iter().map(|s| s.as_str()));
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            let mut row = vec![r.clip_id.clone(), r.p_movement.to_string()];
            row.extend(r.vector.iter().map(|v| v.to_string()));
            row
        })
        .collect();
    io::write_csv(path, &header, &body)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng as _;

    fn pairs_oracle(scores: &[f64], truth: &[bool]) -> Option<f64> {
        let mut num = 0.0;
        let mut den = 0.0;
        for i in 0..scores.len() {
            for j in 0..scores.len() {
                if truth[i] && !truth[j] {
                    den += 1.0;
                    if scores[i] > scores[j] {
                        num += 1.0;
                    } else if scores[i] == scores[j] {
                        num += 0.5;
                    }
                }
            }
        }
        (den > 0.0).then(|| num / den)
    }

    #[test]
    fn label_binarization() {
        assert_eq!(binarize_eval_labels(&[1.0, 0.7, 0.2, 0.5], 0.5, None), vec![Some(true), Some(true), Some(false), Some(true)]);
        assert_eq!(binarize_eval_labels(&[1.0, 0.7, 0.0], 0.5, Some((0.0, 1.0))), vec![Some(true), None, Some(false)]);
    }

    #[test]
    fn confusion_examples() {
        let t = [true, false, true, false];
        let r = confusion_metrics(&t, &t);
        for m in ["Spec.", "Sen.", "W.Prec", "W.F1", "bACC"] {
            assert_eq!(r.get(m), Some(1.0));
        }
        let r = confusion_metrics(&[true; 4], &t);
        assert_eq!((r.sensitivity, r.specificity, r.bacc), (Some(1.0), Some(0.0), Some(0.5)));
        // TP=3 FP=1 TN=2 FN=2
        let pred = [true, true, true, true, false, false, false, false];
        let truth = [true, true, true, false, false, false, true, true];
        let r = confusion_metrics(&pred, &truth);
        assert_eq!(r.counts, Confusion { tp: 3, fp: 1, tn: 2, fn_: 2 });
        assert!((r.sensitivity.unwrap() - 0.6).abs() < 1e-15);
        assert!((r.specificity.unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert!((r.bacc.unwrap() - (0.6 + 2.0 / 3.0) / 2.0).abs() < 1e-15);
        let wp = (5.0 * 0.75 + 3.0 * 0.5) / 8.0;
        let wf = (5.0 * f1(0.75, 0.6) + 3.0 * f1(0.5, 2.0 / 3.0)) / 8.0;
        assert!((r.weighted_precision.unwrap() - wp).abs() < 1e-15);
        assert!((r.weighted_f1.unwrap() - wf).abs() < 1e-15);
        // single-class truth
        let r = confusion_metrics(&[true, false], &[true, true]);
        assert_eq!(r.specificity, None);
        assert_eq!(r.bacc, None);
        assert_eq!(r.sensitivity, Some(0.5));
    }

    #[test]
    fn auroc_examples() {
        assert_eq!(auroc(&[0.9, 0.8, 0.1, 0.2], &[true, true, false, false]), Some(1.0));
        assert_eq!(auroc(&[0.3; 5], &[true, false, true, false, false]), Some(0.5));
        assert_eq!(auroc(&[0.9, 0.8, 0.4], &[true, false, true]), Some(0.5));
        assert_eq!(auroc(&[0.9, 0.8], &[true, true]), None);
    }

    #[test]
    fn kfold_examples() {
        let ids: Vec<String> = (0..10).map(crate::synth::subject_id).collect();
        let folds = patient_kfold(&ids, 5, 3).unwrap();
        assert!(folds.iter().all(|f| f.len() == 2));
        let all: BTreeSet<&String> = folds.iter().flatten().collect();
        assert_eq!(all.len(), 10);
        assert_eq!(patient_kfold(&ids, 5, 3).unwrap(), folds);
        assert!(patient_kfold(&ids[..4], 5, 0).is_err());
        let f3 = patient_kfold(&ids, 3, 1).unwrap();
        let mut sizes: Vec<usize> = f3.iter().map(|f| f.len()).collect();
        sizes.sort();
        assert_eq!(sizes, vec![3, 3, 4]);
    }

    #[test]
    fn aggregate_uses_sample_std() {
        let mut a = confusion_metrics(&[true, false], &[true, false]);
        let mut b = a.clone();
        a.auroc = Some(0.8);
        b.auroc = Some(0.6);
        let agg = aggregate(&[a, b]);
        let m = agg["AUROC"].unwrap();
        assert!((m.mean - 0.7).abs() < 1e-15);
        assert!((m.std - (0.02f64).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn report_json_has_table_metric_keys() {
        let r = evaluate(&[0.9, 0.1, 0.6], &[1.0, 0.0, 0.3], &[Some(Subtype::Limb), None, None], &EvalOptions::default());
        let v = serde_json::to_value(&r).unwrap();
        for m in METRIC_NAMES {
            assert!(v.get(m).is_some(), "missing {m}");
        }
        assert_eq!(r.per_archetype_recall["limb"], Some(1.0));
        assert_eq!(r.per_archetype_recall["quick"], None);
    }

    #[test]
    fn roc_points_span_unit_square() {
        let p = roc_points(&[0.9, 0.1, 0.5, 0.5], &[true, false, true, false]);
        assert_eq!(p.first(), Some(&(0.0, 0.0)));
        assert_eq!(p.last(), Some(&(1.0, 1.0)));
    }

    proptest! {
        #[test]
        fn auroc_matches_pairs_and_is_rank_invariant(seed in 0u64..10_000, n in 2usize..30) {
            let mut r = rng::stream(seed, &[]);
            let scores: Vec<f64> = (0..n).map(|_| (r.gen_range(0..6) as f64) / 5.0).collect();
            let truth: Vec<bool> = (0..n).map(|_| r.gen()).collect();
            let a = auroc(&scores, &truth);
            prop_assert_eq!(a.is_some(), pairs_oracle(&scores, &truth).is_some());
            if let (Some(a), Some(o)) = (a, pairs_oracle(&scores, &truth)) {
                prop_assert!((a - o).abs() < 1e-12);
                let t: Vec<f64> = scores.iter().map(|s| (3.0 * s).exp() - 7.0).collect();
                prop_assert!((auroc(&t, &truth).unwrap() - a).abs() < 1e-12);
            }
        }

        #[test]
        fn confusion_is_permutation_invariant(seed in 0u64..10_000, n in 1usize..40) {
            let mut r = rng::stream(seed, &[]);
            let pred: Vec<bool> = (0..n).map(|_| r.gen()).collect();
            let truth: Vec<bool> = (0..n).map(|_| r.gen()).collect();
            let base = confusion_metrics(&pred, &truth);
            let mut idx: Vec<usize> = (0..n).collect();
            idx.shuffle(&mut r);
            let p2: Vec<bool> = idx.iter().map(|&i| pred[i]).collect();
            let t2: Vec<bool> = idx.iter().map(|&i| truth[i]).collect();
            prop_assert_eq!(confusion_metrics(&p2, &t2), base.clone());
            if let (Some(s), Some(p), Some(b)) = (base.sensitivity, base.specificity, base.bacc) {
                prop_assert_eq!(b, (s + p) / 2.0);
            }
        }
    }
}
