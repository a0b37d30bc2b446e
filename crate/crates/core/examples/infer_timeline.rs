//! Probability timeline over a recording from a fine-tuned checkpoint,
//! compared against the ground-truth movement fraction per window.

use curl_core::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
use curl_core::data_model::movement_fraction;
use curl_core::dataset::ClipSet;
use curl_core::encoder::{EncoderConfig, EncoderParams};
use curl_core::sampling::SamplerConfig;
use curl_core::synth::{generate_dataset, SynthConfig};
use curl_core::training::{finetune, infer_video, FinetuneConfig, FinetuneMode};

fn main() -> curl_core::Result<()> {
    let recs = generate_dataset(&SynthConfig { n_subjects: 3, duration_s: 90.0, ..Default::default() })?;
    let sampler = SamplerConfig { target_fps: 3.2, ..Default::default() };
    let enc = EncoderConfig { input: [16, 32, 32], embed_dim: 32, depth: 2, heads: 4, ..EncoderConfig::default() };
    let train = ClipSet::sliding(&recs[..2], &sampler, enc.input_dims())?;
    let fc = FinetuneConfig { mode: FinetuneMode::Full, epochs: 3, ..Default::default() };
    let fit = finetune(EncoderParams::init(&enc, 0)?, &train, &fc, 0, |_| {})?;

    let path = std::env::temp_dir().join("curl_infer_example.ckpt");
    save_checkpoint(&path, &Checkpoint::new(fit.params, sampler, "finetune_full"))?;
    let ck = load_checkpoint(&path)?;

    let rec = &recs[2];
    let points = infer_video(&ck.params, &rec.video, &rec.id, &ck.meta.sampler)?;
    println!("{} windows over {:.0} s", points.len(), rec.video.duration_s());
    for p in points.iter().step_by(5) {
        let truth = movement_fraction(&rec.timeline, p.start_s, p.end_s)?;
        let bar = "#".repeat((p.p_movement * 20.0).round() as usize);
        println!("{:5.1}s  p={:.2} truth={:.2} {bar}", p.start_s, p.p_movement, truth);
    }
    Ok(())
}
