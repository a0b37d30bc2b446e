//! Deterministic generator of ultrasound-like recordings with ground-truth
//! timelines.
//!
//! Each subject gets a static anatomy field, a bright "fetus" body blob and a
//! small limb blob. Non-movement segments show the anatomy alone; movement
//! segments add both blobs and animate them according to one of four
//! archetypes. Every frame is then multiplied by freshly drawn speckle
//! `(1 + sigma * n)`.

use std::f64::consts::PI;
use std::path::Path;

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data_model::{Label, Segment, SegmentTimeline, Subtype};
use crate::error::{Error, Result};
use crate::io::{self, FrameData, RawVideo};
use crate::rng;

/// Per-archetype `[min, max]` in seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchetypeRanges {
    pub respiratory: [f64; 2],
    pub quick: [f64; 2],
    pub head: [f64; 2],
    pub limb: [f64; 2],
}

/// One scalar per archetype.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchetypeValues {
    pub respiratory: f64,
    pub quick: f64,
    pub head: f64,
    pub limb: f64,
}

impl ArchetypeValues {
    pub fn get(&self, s: Subtype) -> f64 {
        match s {
            Subtype::Respiratory => self.respiratory,
            Subtype::Quick => self.quick,
            Subtype::Head => self.head,
            Subtype::Limb => self.limb,
            Subtype::Probe | Subtype::None => 0.0,
        }
    }

    fn sum(&self) -> f64 {
        self.respiratory + self.quick + self.head + self.limb
    }
}

impl ArchetypeRanges {
    pub fn get(&self, s: Subtype) -> [f64; 2] {
        match s {
            Subtype::Respiratory => self.respiratory,
            Subtype::Quick => self.quick,
            Subtype::Head => self.head,
            Subtype::Limb => self.limb,
            Subtype::Probe | Subtype::None => [0.0, 0.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub duration_s: f64,
    /// Source frame rate.
    pub fps: f64,
    pub height: usize,
    pub width: usize,
    pub n_subjects: usize,
    pub seed: u64,
    /// `[min, max]` duration of non-movement segments, seconds.
    pub non_movement_s: [f64; 2],
    pub durations: ArchetypeRanges,
    /// Archetype mix over movement segments; must sum to 1.
    pub mix: ArchetypeValues,
    /// Motion amplitude per archetype, as a fraction of frame height.
    pub amplitude: ArchetypeValues,
    /// Multiplicative speckle standard deviation.
    pub speckle_sigma: f64,
    /// Speckle cell size in pixels (1 = independent pixels).
    pub speckle_grain: usize,
    /// Adds global probe jitter to some non-movement segments.
    pub probe_jitter: bool,
    pub probe_jitter_px: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            duration_s: 240.0,
            fps: 23.0,
            height: 64,
            width: 64,
            n_subjects: 10,
            seed: 0,
            non_movement_s: [6.0, 30.0],
            durations: ArchetypeRanges {
                respiratory: [10.0, 35.0],
                quick: [0.6, 1.5],
                head: [4.0, 9.0],
                limb: [4.0, 9.0],
            },
            mix: ArchetypeValues {
                respiratory: 0.3,
                quick: 0.1,
                head: 0.3,
                limb: 0.3,
            },
            amplitude: ArchetypeValues {
                respiratory: 0.12,
                quick: 0.3,
                head: 0.4,
                limb: 0.16,
            },
            speckle_sigma: 0.15,
            speckle_grain: 1,
            probe_jitter: false,
            probe_jitter_px: 1.5,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.duration_s > 0.0) {
            return bad(format!("duration_s must be > 0, got {}", self.duration_s));
        }
        if !(self.fps > 0.0) {
            return bad(format!("fps must be > 0, got {}", self.fps));
        }
        if self.height == 0 || self.width == 0 {
            return bad("frame dims must be positive".into());
        }
        let mut ranges = vec![("non_movement_s", self.non_movement_s)];
        for s in Subtype::MOVEMENT {
            ranges.push((s.as_str(), self.durations.get(s)));
        }
        for (name, [lo, hi]) in ranges {
            if !(lo > 0.0 && hi >= lo) {
                return bad(format!("duration range {name} must satisfy 0 < min <= max, got [{lo}, {hi}]"));
            }
        }
        let w = [self.mix.respiratory, self.mix.quick, self.mix.head, self.mix.limb];
        if w.iter().any(|&x| x < 0.0) || (self.mix.sum() - 1.0).abs() > 1e-9 {
            return bad(format!("archetype mix weights must be >= 0 and sum to 1, got {w:?}"));
        }
        if self.speckle_sigma < 0.0 || self.speckle_grain == 0 {
            return bad("speckle_sigma must be >= 0 and speckle_grain >= 1".into());
        }
        Ok(())
    }

    pub fn n_frames(&self) -> usize {
        (self.duration_s * self.fps).round() as usize
    }
}

/// A generated or loaded recording with its annotation.
#[derive(Debug, Clone, PartialEq)]
pub struct Recording {
    pub id: String,
    pub video: RawVideo,
    pub timeline: SegmentTimeline,
}

pub fn subject_id(index: usize) -> String {
    format!("subject_{index:03}")
}

fn uniform(r: &mut rng::Rng, [lo, hi]: [f64; 2]) -> f64 {
    if hi > lo {
        r.gen_range(lo..hi)
    } else {
        lo
    }
}

fn pick_archetype(r: &mut rng::Rng, mix: &ArchetypeValues) -> Subtype {
    let u: f64 = r.gen::<f64>() * mix.sum();
    let mut acc = 0.0;
    for s in Subtype::MOVEMENT {
        acc += mix.get(s);
        if u < acc {
            return s;
        }
    }
    // fall through only on rounding; take the last archetype with weight
    *Subtype::MOVEMENT
        .iter()
        .rev()
        .find(|&&s| mix.get(s) > 0.0)
        .unwrap_or(&Subtype::Respiratory)
}

/// Timeline with boundaries on the source frame grid.
pub fn generate_timeline(config: &SynthConfig, subject_index: usize) -> Result<SegmentTimeline> {
    config.validate()?;
    let mut r = rng::stream(config.seed, &[subject_index as u64, 0x7117]);
    let fps = config.fps;
    let n = config.n_frames();
    if n == 0 {
        return Err(Error::Config("recording shorter than one frame".into()));
    }
    let mut segs: Vec<Segment> = Vec::new();
    let mut k = 0usize;
    let mut label = if r.gen_bool(0.5) { Label::Movement } else { Label::NonMovement };
    while k < n {
        let (d, subtype) = match label {
            Label::NonMovement => {
                let st = if config.probe_jitter && r.gen_bool(0.25) { Subtype::Probe } else { Subtype::None };
                (uniform(&mut r, config.non_movement_s), st)
            }
            Label::Movement => {
                let st = pick_archetype(&mut r, &config.mix);
                (uniform(&mut r, config.durations.get(st)), st)
            }
        };
        let frames = ((d * fps).round() as usize).max(1);
        let end = (k + frames).min(n);
        segs.push(Segment::new(k as f64 / fps, end as f64 / fps, label, subtype));
        k = end;
        label = label.other();
    }
    Ok(SegmentTimeline::new(subject_id(subject_index), n as f64 / fps, segs))
}

struct Blob {
    cy: f64,
    cx: f64,
    sigma: f64,
    amp: f64,
}

impl Blob {
    fn splat(&self, out: &mut [f64], h: usize, w: usize) {
        let reach = (3.0 * self.sigma).ceil() as isize;
        let (cy, cx) = (self.cy.round() as isize, self.cx.round() as isize);
        let inv = 1.0 / (2.0 * self.sigma * self.sigma);
        for y in (cy - reach).max(0)..(cy + reach + 1).min(h as isize) {
            let dy = y as f64 - self.cy;
            for x in (cx - reach).max(0)..(cx + reach + 1).min(w as isize) {
                let dx = x as f64 - self.cx;
                out[y as usize * w + x as usize] += self.amp * (-(dy * dy + dx * dx) * inv).exp();
            }
        }
    }
}

/// Static per-subject scene.
struct Scene {
    anatomy: Vec<f64>,
    body_sigma: f64,
    body_amp: f64,
    limb_offset: (f64, f64),
    limb_sigma: f64,
    limb_amp: f64,
}

fn build_scene(config: &SynthConfig, r: &mut rng::Rng) -> Scene {
    let (h, w) = (config.height, config.width);
    let s = h.min(w) as f64;
    let mut anatomy = vec![r.gen_range(0.22..0.34); h * w];
    // fan-shaped depth attenuation
    for y in 0..h {
        let att = 1.0 - 0.25 * y as f64 / h as f64;
        for x in 0..w {
            anatomy[y * w + x] *= att;
        }
    }
    for _ in 0..6 {
        Blob {
            cy: r.gen_range(0.0..h as f64),
            cx: r.gen_range(0.0..w as f64),
            sigma: s * r.gen_range(0.06..0.18),
            amp: r.gen_range(-0.1..0.15),
        }
        .splat(&mut anatomy, h, w);
    }
    for v in &mut anatomy {
        *v = v.clamp(0.02, 0.8);
    }
    Scene {
        anatomy,
        body_sigma: s * r.gen_range(0.09..0.13),
        body_amp: r.gen_range(0.3..0.4),
        limb_offset: (s * r.gen_range(-0.2..0.2), s * r.gen_range(0.12..0.22)),
        limb_sigma: s * 0.035,
        limb_amp: r.gen_range(0.3..0.4),
    }
}

/// Per-segment motion parameters.
struct Motion {
    dir: (f64, f64),
    freq: f64,
    freq2: f64,
}

fn random_dir(r: &mut rng::Rng) -> (f64, f64) {
    let a = r.gen_range(0.0..2.0 * PI);
    (a.sin(), a.cos())
}

/// Generates frames and timeline for one subject. Pure in `(config, subject_index)`.
pub fn generate_recording(config: &SynthConfig, subject_index: usize) -> Result<Recording> {
    let timeline = generate_timeline(config, subject_index)?;
    let (h, w) = (config.height, config.width);
    let s = h.min(w) as f64;
    let n = config.n_frames();
    let mut r = rng::stream(config.seed, &[subject_index as u64, 0x5CE4E]);
    let scene = build_scene(config, &mut r);

    let margin = 0.25 * s;
    let clamp_pos = |p: (f64, f64)| {
        (
            p.0.clamp(margin, h as f64 - margin),
            p.1.clamp(margin, w as f64 - margin),
        )
    };
    let mut rest = clamp_pos((
        h as f64 * r.gen_range(0.35..0.65),
        w as f64 * r.gen_range(0.3..0.6),
    ));

    let motions: Vec<Motion> = timeline
        .segments
        .iter()
        .map(|_| Motion {
            dir: random_dir(&mut r),
            freq: r.gen_range(0.5..1.0),
            freq2: r.gen_range(1.5..2.5),
        })
        .collect();

    let mut noise_rng = rng::stream(config.seed, &[subject_index as u64, 0x9015E]);
    let grain = config.speckle_grain;
    let mut data = Vec::with_capacity(n * h * w);
    let mut field = vec![0.0f64; h * w];
    let mut noise = vec![0.0f64; h * w];
    let mut seg_idx = 0usize;
    let mut seg_rest = rest;
    for k in 0..n {
        let tau = k as f64 / config.fps;
        while seg_idx + 1 < timeline.segments.len() && tau >= timeline.segments[seg_idx].end_s {
            // head drifts leave the body at a new rest position
            let seg = &timeline.segments[seg_idx];
            if seg.subtype == Subtype::Head {
                let amp = config.amplitude.head * s;
                let m = &motions[seg_idx].dir;
                rest = clamp_pos((rest.0 + amp * m.0, rest.1 + amp * m.1));
            }
            seg_idx += 1;
            seg_rest = rest;
        }
        let seg = &timeline.segments[seg_idx];
        let m = &motions[seg_idx];
        let u = ((tau - seg.start_s) / seg.duration()).clamp(0.0, 1.0);
        let local = tau - seg.start_s;
        let amp = config.amplitude.get(seg.subtype) * s;
        let mut body = seg_rest;
        let mut body_sigma = scene.body_sigma;
        let mut limb_delta = (0.0, 0.0);
        let mut limb_amp = scene.limb_amp;
        let mut shift = (0.0, 0.0);
        match seg.subtype {
            Subtype::Respiratory => {
                let a = amp * (2.0 * PI * m.freq * local).sin();
                body = (body.0 + a * m.dir.0, body.1 + a * m.dir.1);
            }
            Subtype::Quick => {
                let a = amp * (PI * u).sin();
                body = (body.0 + a * m.dir.0, body.1 + a * m.dir.1);
            }
            Subtype::Head => {
                body_sigma *= 1.3;
                let target = clamp_pos((body.0 + amp * m.dir.0, body.1 + amp * m.dir.1));
                body = (body.0 + (target.0 - body.0) * u, body.1 + (target.1 - body.1) * u);
            }
            Subtype::Limb => {
                let ph = 2.0 * PI * m.freq2 * local;
                limb_delta = (amp * ph.sin(), amp * (1.3 * ph).cos());
                limb_amp *= 0.75 + 0.25 * (2.0 * ph).cos();
            }
            Subtype::Probe => {
                let j = config.probe_jitter_px;
                shift = (j * (2.0 * PI * 3.1 * local).sin(), j * (2.0 * PI * 2.3 * local).cos());
            }
            Subtype::None => {}
        }

        field.copy_from_slice(&scene.anatomy);
        if seg.label == Label::Movement {
            Blob { cy: body.0, cx: body.1, sigma: body_sigma, amp: scene.body_amp }.splat(&mut field, h, w);
            Blob {
                cy: body.0 + scene.limb_offset.0 + limb_delta.0,
                cx: body.1 + scene.limb_offset.1 + limb_delta.1,
                sigma: scene.limb_sigma,
                amp: limb_amp,
            }
            .splat(&mut field, h, w);
        }
        if shift != (0.0, 0.0) {
            field = shift_nearest(&field, h, w, shift);
        }

        speckle(&mut noise, h, w, grain, &mut noise_rng);
        for (f, z) in field.iter().zip(&noise) {
            let v = (f * (1.0 + config.speckle_sigma * z)).clamp(0.0, 1.0);
            data.push((v * 255.0).round() as u8);
        }
    }
    let video = RawVideo::new((n, h, w), config.fps as f32, FrameData::U8(data))?;
    Ok(Recording {
        id: timeline.recording_id.clone(),
        video,
        timeline,
    })
}

fn shift_nearest(src: &[f64], h: usize, w: usize, (dy, dx): (f64, f64)) -> Vec<f64> {
    let (dy, dx) = (dy.round() as isize, dx.round() as isize);
    let mut out = vec![0.0; h * w];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let (sy, sx) = (y - dy, x - dx);
            if sy >= 0 && sy < h as isize && sx >= 0 && sx < w as isize {
                out[(y * w as isize + x) as usize] = src[(sy * w as isize + sx) as usize];
            }
        }
    }
    out
}

/// Unit-variance noise, piecewise constant over `grain × grain` cells.
fn speckle(out: &mut [f64], h: usize, w: usize, grain: usize, r: &mut rng::Rng) {
    if grain == 1 {
        for v in out.iter_mut() {
            *v = StandardNormal.sample(r);
        }
        return;
    }
    let (ch, cw) = (h.div_ceil(grain), w.div_ceil(grain));
    let cells: Vec<f64> = (0..ch * cw).map(|_| StandardNormal.sample(r)).collect();
    for y in 0..h {
        for x in 0..w {
            out[y * w + x] = cells[(y / grain) * cw + x / grain];
        }
    }
}

/// Generates every subject, in parallel, in subject order.
pub fn generate_dataset(config: &SynthConfig) -> Result<Vec<Recording>> {
    config.validate()?;
    (0..config.n_subjects)
        .into_par_iter()
        .map(|i| generate_recording(config, i))
        .collect()
}

/// Index file written beside the recordings.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetIndex {
    pub recordings: Vec<String>,
    #[serde(default)]
    pub synth: Option<SynthConfig>,
}

pub const INDEX_FILE: &str = "dataset.json";

pub fn video_path(dir: &Path, id: &str) -> std::path::PathBuf {
    dir.join(format!("{id}.vid"))
}

pub fn timeline_path(dir: &Path, id: &str) -> std::path::PathBuf {
    dir.join(format!("{id}.timeline.json"))
}

pub fn write_dataset(dir: &Path, recordings: &[Recording], synth: Option<&SynthConfig>) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for rec in recordings {
        io::write_video(&video_path(dir, &rec.id), &rec.video)?;
        io::write_timeline(&timeline_path(dir, &rec.id), &rec.timeline)?;
    }
    let index = DatasetIndex {
        recordings: recordings.iter().map(|r| r.id.clone()).collect(),
        synth: synth.cloned(),
    };
    io::write_json(&dir.join(INDEX_FILE), &index)
}

/// Generates the dataset and writes it under `dir`.
pub fn generate_dataset_to(config: &SynthConfig, dir: &Path) -> Result<Vec<Recording>> {
    let recs = generate_dataset(config)?;
    write_dataset(dir, &recs, Some(config))?;
    Ok(recs)
}

pub fn load_dataset(dir: &Path) -> Result<Vec<Recording>> {
    let index: DatasetIndex = io::read_json(&dir.join(INDEX_FILE))?;
    index
        .recordings
        .par_iter()
        .map(|id| load_recording(dir, id))
        .collect()
}

pub fn load_recording(dir: &Path, id: &str) -> Result<Recording> {
    let video = io::read_video(&video_path(dir, id))?;
    let timeline = io::read_timeline(&timeline_path(dir, id))?;
    if timeline.recording_id != id {
        return Err(Error::Schema {
            location: format!("{}:recording_id", timeline_path(dir, id).display()),
            message: format!("expected `{id}`, found `{}`", timeline.recording_id),
        });
    }
    let bad = crate::data_model::validate_timeline(&timeline);
    if !bad.is_empty() {
        return Err(Error::Schema {
            location: timeline_path(dir, id).display().to_string(),
            message: format!("invalid timeline: {bad:?}"),
        });
    }
    Ok(Recording { id: id.to_string(), video, timeline })
}

/// Mean absolute difference between consecutive frames `[k0, k1)`.
pub fn mean_frame_difference(video: &RawVideo, k0: usize, k1: usize) -> f64 {
    let n = video.frame_len();
    if k1 <= k0 + 1 {
        return 0.0;
    }
    let mut acc = 0.0;
    for k in k0 + 1..k1 {
        for i in 0..n {
            acc += (video.data.get(k * n + i) - video.data.get((k - 1) * n + i)).abs() as f64;
        }
    }
    acc / ((k1 - k0 - 1) * n) as f64
}
