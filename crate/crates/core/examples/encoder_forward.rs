//! Patch geometry and a forward pass through the video transformer.

use curl_core::data_model::VideoClip;
use curl_core::encoder::{patchify, EncoderConfig, EncoderParams};
use curl_core::rng;
use rand::Rng;

fn main() -> curl_core::Result<()> {
    let full = EncoderConfig::full_scale();
    println!("full-size grid {:?} -> {} tokens", full.grid(), full.n_tokens());

    let cfg = EncoderConfig::desk();
    let params = EncoderParams::init(&cfg, 0)?;
    println!("desk encoder: {} tokens, {} parameters", cfg.n_tokens(), params.n_params());

    let (t, h, w) = cfg.input_dims();
    let mut r = rng::stream(1, &[]);
    let frames: Vec<f32> = (0..t * h * w).map(|_| r.gen()).collect();
    let clip = VideoClip::new(frames, (t, h, w), 3.2, "noise", 0.0)?;
    let tokens = patchify(clip.frames(), clip.dims(), cfg.patch_dims())?;
    println!("patchify: {} x {}", cfg.n_tokens(), tokens.len() / cfg.n_tokens());

    let hvec = params.encode(&clip)?;
    let z = params.project_spatial(&hvec);
    let m = params.project_temporal(&hvec);
    println!("h: {} dims, z: {} dims, M: {} dims", hvec.len(), z.len(), m.len());
    println!("P(movement) before training = {:.4}", params.classify(&hvec)[1]);
    Ok(())
}
