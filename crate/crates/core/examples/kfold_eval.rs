//! Patient-wise k-fold evaluation with per-fold and aggregate metrics.

use curl_core::dataset::ClipSet;
use curl_core::encoder::{EncoderConfig, EncoderParams};
use curl_core::eval::{aggregate, evaluate, patient_kfold, EvalOptions, METRIC_NAMES};
use curl_core::sampling::SamplerConfig;
use curl_core::synth::{generate_dataset, SynthConfig};
use curl_core::training::{finetune, predict_set, FinetuneConfig};

fn main() -> curl_core::Result<()> {
    let recs = generate_dataset(&SynthConfig { n_subjects: 6, duration_s: 60.0, ..Default::default() })?;
    let sampler = SamplerConfig { target_fps: 3.2, ..Default::default() };
    let enc = EncoderConfig { input: [16, 32, 32], embed_dim: 32, depth: 2, heads: 4, ..EncoderConfig::default() };
    let params = EncoderParams::init(&enc, 0)?;
    let all = ClipSet::sliding(&recs, &sampler, enc.input_dims())?;
    let subjects: Vec<String> = all.subjects().into_iter().collect();

    let folds = patient_kfold(&subjects, 3, 0)?;
    let mut reports = Vec::new();
    for (f, test_subjects) in folds.iter().enumerate() {
        let train_subjects: Vec<&String> = subjects.iter().filter(|s| !test_subjects.contains(s)).collect();
        let (train, test) = (all.restrict(&train_subjects), all.restrict(test_subjects));
        let fit = finetune(params.clone(), &train, &FinetuneConfig::default(), f as u64, |_| {})?;
        let labels: Vec<f64> = test.items.iter().map(|i| i.p_movement).collect();
        let subtypes: Vec<_> = test.items.iter().map(|i| i.subtype).collect();
        let r = evaluate(&predict_set(&fit.params, &test)?, &labels, &subtypes, &EvalOptions::default());
        println!("fold {f} {test_subjects:?}: AUROC {:?}", r.auroc);
        reports.push(r);
    }
    let agg = aggregate(&reports);
    for name in METRIC_NAMES {
        match &agg[name] {
            Some(m) => println!("{name:7} {:.4} ± {:.4}", m.mean, m.std),
            None => println!("{name:7} NA"),
        }
    }
    Ok(())
}
