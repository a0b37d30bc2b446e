//! Contrastive pretraining followed by a linear probe, scored on
//! held-out subjects. Sized to finish in about a minute on one core.

use curl_core::augment::AugmentConfig;
use curl_core::dataset::ClipSet;
use curl_core::encoder::{EncoderConfig, EncoderParams};
use curl_core::eval::{evaluate, EvalOptions};
use curl_core::experiment::split_subjects;
use curl_core::sampling::SamplerConfig;
use curl_core::synth::{generate_dataset, SynthConfig};
use curl_core::training::{finetune, predict_set, pretrain, FinetuneConfig, PretrainConfig};

fn main() -> curl_core::Result<()> {
    let recs = generate_dataset(&SynthConfig { n_subjects: 6, duration_s: 120.0, ..Default::default() })?;
    let split = split_subjects(&recs, 2, 0)?;
    let sampler = SamplerConfig { target_fps: 3.2, ..Default::default() };
    let enc = EncoderConfig { input: [16, 32, 32], embed_dim: 32, depth: 2, heads: 4, ..EncoderConfig::default() };
    let dims = enc.input_dims();

    let clean = ClipSet::clean_cut(&recs, &sampler, dims)?.restrict(&split.train);
    let pc = PretrainConfig { epochs: 6, warmup_epochs: 1, ..Default::default() };
    let init = EncoderParams::init(&enc, 0)?;
    println!("pretraining on {} clean-cut clips from {:?}", clean.len(), split.train);
    let pre = pretrain(init.clone(), &clean, &pc, &AugmentConfig::default(), 1, |l| {
        println!(
            "  step {:2} lr {:.5} L_sc {:.4} L_tc {:.4}",
            l.step,
            l.lr,
            l.l_sc.unwrap_or(f64::NAN),
            l.l_tc.unwrap_or(f64::NAN)
        )
    })?;

    let train = ClipSet::sliding(&recs, &sampler, dims)?.restrict(&split.train);
    let test = ClipSet::sliding(&recs, &sampler, dims)?.restrict(&split.test);
    let labels: Vec<f64> = test.items.iter().map(|i| i.p_movement).collect();
    let subtypes: Vec<_> = test.items.iter().map(|i| i.subtype).collect();
    let fc = FinetuneConfig::default();
    for (name, params) in [("random init", init), ("pretrained", pre.params)] {
        let probe = finetune(params, &train, &fc, 2, |_| {})?;
        let report = evaluate(&predict_set(&probe.params, &test)?, &labels, &subtypes, &EvalOptions::default());
        println!("{name}: linear-probe AUROC {:?} bACC {:?}", report.auroc, report.bacc);
    }
    Ok(())
}
