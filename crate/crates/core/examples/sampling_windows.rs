//! Clean-cut and sliding-window clips from one synthetic recording.

use curl_core::sampling::{clean_cut_windows, materialize_clip, resize_clip, sliding_windows, SamplerConfig};
use curl_core::synth::{generate_recording, SynthConfig};

fn main() -> curl_core::Result<()> {
    let synth = SynthConfig { duration_s: 90.0, ..Default::default() };
    let rec = generate_recording(&synth, 0)?;
    let cfg = SamplerConfig::default();

    let clean = clean_cut_windows(&rec.timeline, &cfg);
    println!("clean-cut: {} clips", clean.len());
    for w in clean.iter().take(5) {
        println!("  [{:6.2}, {:6.2}) p = {}", w.window.start_s, w.window.end_s, w.p_movement());
    }

    let sliding = sliding_windows(&rec.timeline, &cfg);
    let mixed = sliding.iter().filter(|w| w.p_movement > 0.0 && w.p_movement < 1.0).count();
    println!("sliding: {} windows, {} with mixed labels", sliding.len(), mixed);
    for w in sliding.iter().filter(|w| w.p_movement > 0.0 && w.p_movement < 1.0).take(5) {
        println!("  [{:6.2}, {:6.2}) p = {:.3}", w.window.start_s, w.window.end_s, w.p_movement);
    }

    let clip = materialize_clip(&rec.video, &rec.id, sliding[0].window, &cfg)?;
    println!("materialized clip {:?} at {} fps", clip.dims(), clip.fps());
    let small = resize_clip(&clip, (16, 32, 32))?;
    println!("resized to {:?}", small.dims());
    Ok(())
}
