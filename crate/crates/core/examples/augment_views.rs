//! Two augmented views of one clip under the default policies.

use curl_core::augment::{make_views, masked_units, sample_spec, AugmentConfig};
use curl_core::rng;
use curl_core::sampling::{materialize_clip, resize_clip, sliding_windows, SamplerConfig};
use curl_core::synth::{generate_recording, SynthConfig};

fn mean_abs_diff(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs() as f64).sum::<f64>() / a.len() as f64
}

fn main() -> curl_core::Result<()> {
    let rec = generate_recording(&SynthConfig { duration_s: 30.0, ..Default::default() }, 0)?;
    let cfg = SamplerConfig::default();
    let w = sliding_windows(&rec.timeline, &cfg)[0].window;
    let clip = resize_clip(&materialize_clip(&rec.video, &rec.id, w, &cfg)?, (16, 64, 64))?;

    let (pi, pj) = AugmentConfig::default().policies();
    let mut r = rng::stream(7, &[]);
    println!("sampled spec: {:?}", sample_spec(&pi, &mut r));
    let (xi, xj) = make_views(&clip, &pi, &pj, (2, 8, 8), &mut r)?;
    println!("|x - x_i| = {:.4}", mean_abs_diff(clip.frames(), xi.frames()));
    println!("|x - x_j| = {:.4}", mean_abs_diff(clip.frames(), xj.frames()));
    println!("|x_i - x_j| = {:.4}", mean_abs_diff(xi.frames(), xj.frames()));
    for rho in [0.0, 0.1, 0.3] {
        println!("ratio {rho}: {} of 64 tubes masked", masked_units(rho, 64));
    }
    Ok(())
}
