//! Generates a small synthetic dataset, writes it to disk and reads it back.
//!
//! `cargo run --example synth_dataset [out_dir]`

use curl_core::data_model::{validate_timeline, Label};
use curl_core::synth::{generate_dataset_to, load_dataset, SynthConfig};

fn main() -> curl_core::Result<()> {
    let dir = match std::env::args().nth(1) {
        Some(d) => std::path::PathBuf::from(d),
        None => std::env::temp_dir().join("curl_synth_example"),
    };
    let cfg = SynthConfig { n_subjects: 3, duration_s: 60.0, height: 32, width: 32, ..Default::default() };
    let recs = generate_dataset_to(&cfg, &dir)?;
    for r in &recs {
        let moving: f64 = r.timeline.segments.iter().filter(|s| s.label == Label::Movement).map(|s| s.duration()).sum();
        println!(
            "{}: {} frames {}x{} at {} fps, {} segments, {:.1} s movement, {} violations",
            r.id,
            r.video.t,
            r.video.h,
            r.video.w,
            r.video.fps,
            r.timeline.segments.len(),
            moving,
            validate_timeline(&r.timeline).len()
        );
        for s in r.timeline.segments.iter().take(4) {
            println!("  [{:6.2}, {:6.2}) {:?} {}", s.start_s, s.end_s, s.label, s.subtype.as_str());
        }
    }
    let back = load_dataset(&dir)?;
    assert_eq!(back.len(), recs.len());
    assert!(back.iter().zip(&recs).all(|(a, b)| a.video == b.video && a.timeline == b.timeline));
    println!("round trip through {} ok", dir.display());
    Ok(())
}
