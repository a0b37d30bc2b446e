//! Paired-view construction.
//!
//! Spatial parameters are drawn once per clip and applied identically to
//! every frame, in the fixed order rotate → brightness → contrast → noise →
//! median blur. Temporal masking then zeroes tubes, whole frames, or random
//! spatiotemporal patches in input space.

use std::collections::BTreeSet;

use rand::seq::index;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data_model::VideoClip;
use crate::error::{Error, Result};
use crate::rng;

pub const ROTATION_RANGE_DEG: f64 = 30.0;
pub const FACTOR_RANGE: (f64, f64) = (0.5, 1.5);
pub const NOISE_SIGMA: f64 = 0.1;
pub const MEDIAN_RADIUS: usize = 3;
pub const MAX_MASK_RATIO: f64 = 0.3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AugOp {
    Rotate,
    Brightness,
    Contrast,
    GaussianNoise,
    MedianBlur,
    TubeMasking,
    FrameMasking,
    RandomMasking,
}

impl AugOp {
    pub const ALL: [AugOp; 8] = [
        AugOp::Rotate,
        AugOp::Brightness,
        AugOp::Contrast,
        AugOp::GaussianNoise,
        AugOp::MedianBlur,
        AugOp::TubeMasking,
        AugOp::FrameMasking,
        AugOp::RandomMasking,
    ];
    pub const SPATIAL: [AugOp; 5] = [
        AugOp::Rotate,
        AugOp::Brightness,
        AugOp::Contrast,
        AugOp::GaussianNoise,
        AugOp::MedianBlur,
    ];
    pub const TEMPORAL: [AugOp; 3] = [AugOp::TubeMasking, AugOp::FrameMasking, AugOp::RandomMasking];

    pub fn as_str(self) -> &'static str {
        match self {
            AugOp::Rotate => "rotate",
            AugOp::Brightness => "brightness",
            AugOp::Contrast => "contrast",
            AugOp::GaussianNoise => "gaussian_noise",
            AugOp::MedianBlur => "median_blur",
            AugOp::TubeMasking => "tube_masking",
            AugOp::FrameMasking => "frame_masking",
            AugOp::RandomMasking => "random_masking",
        }
    }
}

/// The set of enabled augmentations for one branch.
pub type Policy = BTreeSet<AugOp>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskKind {
    None,
    Tube,
    Frame,
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentationSpec {
    pub rotation_deg: f64,
    pub brightness_factor: f64,
    pub contrast_factor: f64,
    pub noise_sigma: f64,
    pub median_blur_radius: usize,
    pub mask_kind: MaskKind,
    pub mask_ratio: f64,
    pub rng_seed: u64,
}

impl AugmentationSpec {
    pub fn identity() -> Self {
        Self {
            rotation_deg: 0.0,
            brightness_factor: 1.0,
            contrast_factor: 1.0,
            noise_sigma: 0.0,
            median_blur_radius: 0,
            mask_kind: MaskKind::None,
            mask_ratio: 0.0,
            rng_seed: 0,
        }
    }
}

/// Policies for the two branches 𝒯 and 𝒯′.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentConfig {
    pub branch_i: Vec<AugOp>,
    pub branch_j: Vec<AugOp>,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            branch_i: AugOp::ALL.to_vec(),
            branch_j: AugOp::ALL.to_vec(),
        }
    }
}

impl AugmentConfig {
    pub fn policies(&self) -> (Policy, Policy) {
        (
            self.branch_i.iter().copied().collect(),
            self.branch_j.iter().copied().collect(),
        )
    }
}

pub fn sample_spec(policy: &Policy, r: &mut rng::Rng) -> AugmentationSpec {
    let mut spec = AugmentationSpec::identity();
    let (lo, hi) = FACTOR_RANGE;
    if policy.contains(&AugOp::Rotate) {
        spec.rotation_deg = r.gen_range(-ROTATION_RANGE_DEG..=ROTATION_RANGE_DEG);
    }
    if policy.contains(&AugOp::Brightness) {
        spec.brightness_factor = r.gen_range(lo..=hi);
    }
    if policy.contains(&AugOp::Contrast) {
        spec.contrast_factor = r.gen_range(lo..=hi);
    }
    if policy.contains(&AugOp::GaussianNoise) {
        spec.noise_sigma = NOISE_SIGMA;
    }
    if policy.contains(&AugOp::MedianBlur) {
        spec.median_blur_radius = MEDIAN_RADIUS;
    }
    let masks: Vec<MaskKind> = AugOp::TEMPORAL
        .iter()
        .filter(|op| policy.contains(op))
        .map(|op| match op {
            AugOp::TubeMasking => MaskKind::Tube,
            AugOp::FrameMasking => MaskKind::Frame,
            _ => MaskKind::Random,
        })
        .collect();
    if !masks.is_empty() {
        spec.mask_kind = masks[r.gen_range(0..masks.len())];
        spec.mask_ratio = r.gen_range(0.0..=MAX_MASK_RATIO);
    }
    spec.rng_seed = r.gen();
    spec
}

/// Applies the spatial part of `spec`, frame by frame with shared parameters.
pub fn apply_spatial(clip: &VideoClip, spec: &AugmentationSpec) -> VideoClip {
    let (t, h, w) = clip.dims();
    let mut out = Vec::with_capacity(t * h * w);
    for k in 0..t {
        out.extend(apply_spatial_frame(clip.frame(k), h, w, spec, k));
    }
    clip.with_frames(out)
}

/// One frame of [`apply_spatial`]; `frame_index` only keys the noise stream.
pub fn apply_spatial_frame(
    frame: &[f32],
    h: usize,
    w: usize,
    spec: &AugmentationSpec,
    frame_index: usize,
) -> Vec<f32> {
    let mut f = frame.to_vec();
    if spec.rotation_deg != 0.0 {
        f = rotate_bilinear(&f, h, w, spec.rotation_deg);
    }
    if spec.brightness_factor != 1.0 {
        let b = spec.brightness_factor as f32;
        f.iter_mut().for_each(|v| *v = (*v * b).clamp(0.0, 1.0));
    }
    if spec.contrast_factor != 1.0 {
        let c = spec.contrast_factor as f32;
        let mean = f.iter().sum::<f32>() / f.len() as f32;
        f.iter_mut()
            .for_each(|v| *v = ((*v - mean) * c + mean).clamp(0.0, 1.0));
    }
    if spec.noise_sigma > 0.0 {
        let mut r = rng::stream(spec.rng_seed, &[0x401, frame_index as u64]);
        let s = spec.noise_sigma;
        f.iter_mut().for_each(|v| {
            let n: f64 = StandardNormal.sample(&mut r);
            *v = (*v as f64 + s * n).clamp(0.0, 1.0) as f32;
        });
    }
    if spec.median_blur_radius > 0 {
        f = median_filter(&f, h, w, spec.median_blur_radius);
    }
    f
}

/// Rotates by `deg` about the frame centre, bilinear, zero outside the frame.
pub fn rotate_bilinear(src: &[f32], h: usize, w: usize, deg: f64) -> Vec<f32> {
    let (s, c) = deg.to_radians().sin_cos();
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let sample = |y: isize, x: isize| -> f64 {
        if y < 0 || x < 0 || y >= h as isize || x >= w as isize {
            0.0
        } else {
            src[y as usize * w + x as usize] as f64
        }
    };
    let mut out = vec![0.0f32; h * w];
    for y in 0..h {
        for x in 0..w {
            let (dy, dx) = (y as f64 - cy, x as f64 - cx);
            // inverse map: rotate the output coordinate by -deg
            let sx = c * dx + s * dy + cx;
            let sy = -s * dx + c * dy + cy;
            let (x0, y0) = (sx.floor(), sy.floor());
            let (fx, fy) = (sx - x0, sy - y0);
            let (x0, y0) = (x0 as isize, y0 as isize);
            let v = (1.0 - fy) * ((1.0 - fx) * sample(y0, x0) + fx * sample(y0, x0 + 1))
                + fy * ((1.0 - fx) * sample(y0 + 1, x0) + fx * sample(y0 + 1, x0 + 1));
            out[y * w + x] = v.clamp(0.0, 1.0) as f32;
        }
    }
    out
}

/// Median over a `(2r+1)²` window with edge clamping.
pub fn median_filter(src: &[f32], h: usize, w: usize, r: usize) -> Vec<f32> {
    let r = r as isize;
    let mut buf = Vec::with_capacity(((2 * r + 1) * (2 * r + 1)) as usize);
    let mut out = vec![0.0f32; h * w];
    for y in 0..h as isize {
        for x in 0..w as isize {
            buf.clear();
            for dy in -r..=r {
                let yy = (y + dy).clamp(0, h as isize - 1) as usize;
                for dx in -r..=r {
                    let xx = (x + dx).clamp(0, w as isize - 1) as usize;
                    buf.push(src[yy * w + xx]);
                }
            }
            let mid = buf.len() / 2;
            let (_, m, _) = buf.select_nth_unstable_by(mid, f32::total_cmp);
            out[y as usize * w + x as usize] = *m;
        }
    }
    out
}

/// Number of masked units for ratio `rho` over `units`.
pub fn masked_units(rho: f64, units: usize) -> usize {
    ((rho * units as f64) + 1e-9).floor() as usize
}

/// Applies the masking part of `spec`. Returns the masked clip and a flag per
/// element marking zeroed voxels. `patch` is the encoder's `(t, h, w)`.
pub fn apply_temporal(
    clip: &VideoClip,
    spec: &AugmentationSpec,
    patch: (usize, usize, usize),
) -> Result<(VideoClip, Vec<bool>)> {
    let (t, h, w) = clip.dims();
    let (pt, ph, pw) = patch;
    let n = t * h * w;
    if matches!(spec.mask_kind, MaskKind::Tube | MaskKind::Random)
        && (pt == 0 || ph == 0 || pw == 0 || t % pt != 0 || h % ph != 0 || w % pw != 0)
    {
        return Err(Error::Config(format!(
            "clip {t}x{h}x{w} not divisible by patch {pt}x{ph}x{pw}"
        )));
    }
    if spec.mask_kind == MaskKind::None || spec.mask_ratio <= 0.0 {
        return Ok((clip.clone(), vec![false; n]));
    }
    let mut r = rng::stream(spec.rng_seed, &[0x3A5C]);
    let mut mask = vec![false; n];
    match spec.mask_kind {
        MaskKind::None => {}
        MaskKind::Frame => {
            let k = masked_units(spec.mask_ratio, t);
            for f in index::sample(&mut r, t, k) {
                mask[f * h * w..(f + 1) * h * w].iter_mut().for_each(|m| *m = true);
            }
        }
        MaskKind::Tube => {
            let (gh, gw) = (h / ph, w / pw);
            let k = masked_units(spec.mask_ratio, gh * gw);
            for cell in index::sample(&mut r, gh * gw, k) {
                let (cy, cx) = (cell / gw, cell % gw);
                for f in 0..t {
                    mark_block(&mut mask, (h, w), (f, cy * ph, cx * pw), (1, ph, pw));
                }
            }
        }
        MaskKind::Random => {
            let (gt, gh, gw) = (t / pt, h / ph, w / pw);
            let k = masked_units(spec.mask_ratio, gt * gh * gw);
            for p in index::sample(&mut r, gt * gh * gw, k) {
                let (l, rem) = (p / (gh * gw), p % (gh * gw));
                mark_block(&mut mask, (h, w), (l * pt, (rem / gw) * ph, (rem % gw) * pw), (pt, ph, pw));
            }
        }
    }
    let frames: Vec<f32> = clip
        .frames()
        .iter()
        .zip(&mask)
        .map(|(&v, &m)| if m { 0.0 } else { v })
        .collect();
    Ok((clip.with_frames(frames), mask))
}

fn mark_block(mask: &mut [bool], (h, w): (usize, usize), (f0, y0, x0): (usize, usize, usize), (dt, dh, dw): (usize, usize, usize)) {
    for f in f0..f0 + dt {
        for y in y0..y0 + dh {
            let row = f * h * w + y * w;
            mask[row + x0..row + x0 + dw].iter_mut().for_each(|m| *m = true);
        }
    }
}

/// One augmented view: spatial then temporal.
pub fn augment_view(
    clip: &VideoClip,
    policy: &Policy,
    patch: (usize, usize, usize),
    r: &mut rng::Rng,
) -> Result<VideoClip> {
    let spec = sample_spec(policy, r);
    let spatial = apply_spatial(clip, &spec);
    Ok(apply_temporal(&spatial, &spec, patch)?.0)
}

/// `(x_i, x_j) = (𝒯(x), 𝒯′(x))` with independently sampled specs.
pub fn make_views(
    clip: &VideoClip,
    policy_i: &Policy,
    policy_j: &Policy,
    patch: (usize, usize, usize),
    r: &mut rng::Rng,
) -> Result<(VideoClip, VideoClip)> {
    let xi = augment_view(clip, policy_i, patch, r)?;
    let xj = augment_view(clip, policy_j, patch, r)?;
    Ok((xi, xj))
}
