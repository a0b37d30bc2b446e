//! One ablation axis on a reduced synthetic setting.
//!
//! `cargo run --example ablation [augmentation|loss|sampling|mode]`

use curl_core::config::Config;
use curl_core::experiment::{run_ablation, Axis};
use curl_core::synth::generate_dataset;

fn main() -> curl_core::Result<()> {
    let axis: Axis = std::env::args().nth(1).as_deref().unwrap_or("loss").parse()?;
    let mut cfg = Config::desk_experiment();
    cfg.synth.n_subjects = 8;
    cfg.synth.duration_s = 120.0;
    cfg.experiment.test_subjects = 2;
    cfg.experiment.seeds = vec![0];
    cfg.pretrain.epochs = 4;
    cfg.pretrain.warmup_epochs = 1;
    cfg.finetune.epochs = 3;
    let recs = generate_dataset(&cfg.synth)?;
    let report = run_ablation(&recs, &cfg, axis, |r| {
        eprintln!("{} done in {:.1} s", r.variant, r.seconds);
    })?;
    let (header, rows) = report.rows();
    println!("{}", header.join("\t"));
    for row in rows {
        println!("{}", row.join("\t"));
    }
    Ok(())
}
