//! Clip extraction: clean-cut windows for pretraining and sliding windows
//! with soft movement labels for fine-tuning and inference.

use serde::{Deserialize, Serialize};

use crate::data_model::{movement_fraction, Label, SegmentTimeline, Subtype, VideoClip};
use crate::error::{Error, Result};
use crate::io::{ManifestEntry, RawVideo};

const TIME_EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerConfig {
    pub clip_len_s: f64,
    pub target_fps: f64,
    /// Margin trimmed from both ends of every segment before clean-cut sampling.
    pub delta_s: f64,
    /// Sliding-window stride.
    pub stride_s: f64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            clip_len_s: 5.0,
            target_fps: 10.0,
            delta_s: 2.0,
            stride_s: 1.0,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.clip_len_s > 0.0 && self.target_fps > 0.0 && self.delta_s >= 0.0 && self.stride_s > 0.0) {
            return Err(Error::Config(format!(
                "sampler requires clip_len_s > 0, target_fps > 0, delta_s >= 0, stride_s > 0; got {self:?}"
            )));
        }
        if self.frames_per_clip() == 0 {
            return Err(Error::Config("clip would contain zero frames".into()));
        }
        Ok(())
    }

    pub fn frames_per_clip(&self) -> usize {
        (self.clip_len_s * self.target_fps).round() as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub start_s: f64,
    pub end_s: f64,
}

/// A window cut from inside one trimmed segment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CleanCutWindow {
    pub window: Window,
    pub label: Label,
    pub subtype: Subtype,
}

impl CleanCutWindow {
    pub fn p_movement(&self) -> f64 {
        if self.label == Label::Movement {
            1.0
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlidingWindow {
    pub window: Window,
    pub p_movement: f64,
}

/// Trims `delta_s` from both ends of each segment and tiles the remainder
/// with consecutive, left-aligned clips; the tail remainder is dropped.
pub fn clean_cut_windows(timeline: &SegmentTimeline, cfg: &SamplerConfig) -> Vec<CleanCutWindow> {
    let mut out = Vec::new();
    for seg in &timeline.segments {
        let a = seg.start_s + cfg.delta_s;
        let b = seg.end_s - cfg.delta_s;
        let mut i = 0usize;
        loop {
            let start = a + i as f64 * cfg.clip_len_s;
            let end = a + (i + 1) as f64 * cfg.clip_len_s;
            if end > b {
                break;
            }
            out.push(CleanCutWindow {
                window: Window { start_s: start, end_s: end },
                label: seg.label,
                subtype: seg.subtype,
            });
            i += 1;
        }
    }
    out
}

/// Window spans at `0, stride, 2·stride, …` that fit inside `duration_s`.
pub fn sliding_spans(duration_s: f64, cfg: &SamplerConfig) -> Vec<Window> {
    let mut out = Vec::new();
    let mut i = 0usize;
    loop {
        let start = i as f64 * cfg.stride_s;
        let end = start + cfg.clip_len_s;
        if end > duration_s + TIME_EPS {
            break;
        }
        out.push(Window { start_s: start, end_s: end.min(duration_s) });
        i += 1;
    }
    out
}

/// Sliding windows with soft movement labels.
pub fn sliding_windows(timeline: &SegmentTimeline, cfg: &SamplerConfig) -> Vec<SlidingWindow> {
    let mut out = Vec::new();
    for window in sliding_spans(timeline.duration_s, cfg) {
        let p = movement_fraction(timeline, window.start_s, window.end_s).expect("window inside recording");
        out.push(SlidingWindow { window, p_movement: p });
    }
    out
}

/// Source frame indices a window resamples to, nearest-index.
pub fn resample_indices(window: Window, source_fps: f64, cfg: &SamplerConfig) -> Vec<usize> {
    (0..cfg.frames_per_clip())
        .map(|j| ((window.start_s + j as f64 / cfg.target_fps) * source_fps).round() as usize)
        .collect()
}

/// Cuts `window` out of `video` at the target frame rate.
pub fn materialize_clip(
    video: &RawVideo,
    source_id: &str,
    window: Window,
    cfg: &SamplerConfig,
) -> Result<VideoClip> {
    let fps = video.fps as f64;
    if fps + TIME_EPS < cfg.target_fps {
        return Err(Error::Config(format!(
            "source fps {fps} below target fps {}",
            cfg.target_fps
        )));
    }
    if window.start_s < 0.0 || window.end_s > video.duration_s() + TIME_EPS || window.start_s >= window.end_s {
        return Err(Error::Range(format!(
            "window [{}, {}) outside recording [0, {})",
            window.start_s,
            window.end_s,
            video.duration_s()
        )));
    }
    let idx = resample_indices(window, fps, cfg);
    let mut frames = Vec::with_capacity(idx.len() * video.frame_len());
    for &k in &idx {
        if k >= video.t {
            return Err(Error::Range(format!("frame {k} beyond recording of {} frames", video.t)));
        }
        video.extend_frame(k, &mut frames);
    }
    VideoClip::new(
        frames,
        (idx.len(), video.h, video.w),
        cfg.target_fps,
        source_id,
        window.start_s,
    )
}

/// Reshapes a clip to `(t, h, w)`: nearest-index in time, box-average in space.
/// Spatial dims must divide the source dims.
pub fn resize_clip(clip: &VideoClip, dims: (usize, usize, usize)) -> Result<VideoClip> {
    let (st, sh, sw) = clip.dims();
    let (t, h, w) = dims;
    if clip.dims() == dims {
        return Ok(clip.clone());
    }
    if t == 0 || h == 0 || w == 0 || sh % h != 0 || sw % w != 0 {
        return Err(Error::Config(format!(
            "cannot resize {st}x{sh}x{sw} clip to {t}x{h}x{w}"
        )));
    }
    let (fy, fx) = (sh / h, sw / w);
    let norm = 1.0 / (fy * fx) as f32;
    let src = clip.frames();
    let mut out = Vec::with_capacity(t * h * w);
    for j in 0..t {
        let k = ((j as f64 + 0.5) * st as f64 / t as f64).floor() as usize;
        let frame = &src[k.min(st - 1) * sh * sw..][..sh * sw];
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0f32;
                for dy in 0..fy {
                    let row = &frame[(y * fy + dy) * sw + x * fx..][..fx];
                    acc += row.iter().sum::<f32>();
                }
                out.push((acc * norm).clamp(0.0, 1.0));
            }
        }
    }
    let fps = clip.fps() * t as f64 / st as f64;
    VideoClip::new(out, dims, fps, clip.source_id(), clip.start_time_s())
}

pub fn clean_cut_manifest(recording_id: &str, windows: &[CleanCutWindow]) -> Vec<ManifestEntry> {
    windows
        .iter()
        .map(|w| ManifestEntry {
            recording_id: recording_id.to_string(),
            start_s: w.window.start_s,
            end_s: w.window.end_s,
            p_movement: w.p_movement(),
        })
        .collect()
}

pub fn sliding_manifest(recording_id: &str, windows: &[SlidingWindow]) -> Vec<ManifestEntry> {
    windows
        .iter()
        .map(|w| ManifestEntry {
            recording_id: recording_id.to_string(),
            start_s: w.window.start_s,
            end_s: w.window.end_s,
            p_movement: w.p_movement,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data_model::Segment;
    use crate::io::FrameData;
    use proptest::prelude::*;

    fn one_segment(a: f64, b: f64, dur: f64) -> SegmentTimeline {
        let mut segs = Vec::new();
        if a > 0.0 {
            segs.push(Segment::new(0.0, a, Label::NonMovement, Subtype::None));
        }
        segs.push(Segment::new(a, b, Label::Movement, Subtype::Head));
        if b < dur {
            segs.push(Segment::new(b, dur, Label::NonMovement, Subtype::None));
        }
        SegmentTimeline::new("r", dur, segs)
    }

    #[test]
    fn clean_cut_trims_and_tiles() {
        let t = one_segment(100.0, 130.0, 140.0);
        let w: Vec<_> = clean_cut_windows(&t, &SamplerConfig::default())
            .into_iter()
            .filter(|w| w.label == Label::Movement)
            .collect();
        let starts: Vec<f64> = w.iter().map(|w| w.window.start_s).collect();
        assert_eq!(starts, vec![102.0, 107.0, 112.0, 117.0, 122.0]);
    }

    #[test]
    fn short_segment_yields_nothing() {
        let t = SegmentTimeline::new("r", 8.0, vec![Segment::new(0.0, 8.0, Label::Movement, Subtype::Limb)]);
        assert!(clean_cut_windows(&t, &SamplerConfig::default()).is_empty());
    }

    #[test]
    fn sliding_count_and_labels() {
        let t = SegmentTimeline::new(
            "r",
            30.0,
            vec![
                Segment::new(0.0, 13.5, Label::Movement, Subtype::Respiratory),
                Segment::new(13.5, 30.0, Label::NonMovement, Subtype::None),
            ],
        );
        let w = sliding_windows(&t, &SamplerConfig::default());
        assert_eq!(w.len(), 26);
        assert!((w[10].p_movement - 0.7).abs() < 1e-12);
        assert_eq!(w[20].p_movement, 0.0);
        let short = SegmentTimeline::new("r", 4.0, vec![Segment::new(0.0, 4.0, Label::Movement, Subtype::Quick)]);
        assert!(sliding_windows(&short, &SamplerConfig::default()).is_empty());
    }

    fn video(t: usize, fps: f32) -> RawVideo {
        let data = (0..t * 4).map(|i| (i / 4 % 256) as u8).collect();
        RawVideo::new((t, 2, 2), fps, FrameData::U8(data)).unwrap()
    }

    #[test]
    fn materialize_produces_fifty_frames_from_23fps() {
        let v = video(23 * 30, 23.0);
        let c = materialize_clip(&v, "s", Window { start_s: 3.0, end_s: 8.0 }, &SamplerConfig::default()).unwrap();
        assert_eq!(c.dims().0, 50);
        assert_eq!(c.start_time_s(), 3.0);
    }

    #[test]
    fn equal_fps_copies_frames() {
        let v = video(100, 10.0);
        let c = materialize_clip(&v, "s", Window { start_s: 2.0, end_s: 7.0 }, &SamplerConfig::default()).unwrap();
        let mut expect = Vec::new();
        for k in 20..70 {
            v.extend_frame(k, &mut expect);
        }
        assert_eq!(c.frames(), &expect[..]);
    }

    #[test]
    fn materialize_rejects_out_of_bounds() {
        let v = video(23 * 6, 23.0);
        let r = materialize_clip(&v, "s", Window { start_s: 3.0, end_s: 8.0 }, &SamplerConfig::default());
        assert!(matches!(r, Err(Error::Range(_))));
        let slow = video(50, 5.0);
        let r = materialize_clip(&slow, "s", Window { start_s: 0.0, end_s: 5.0 }, &SamplerConfig::default());
        assert!(matches!(r, Err(Error::Config(_))));
    }

    #[test]
    fn resize_box_averages() {
        let clip = VideoClip::new(
            vec![0.0, 1.0, 0.5, 0.5, 1.0, 1.0, 0.0, 0.0],
            (2, 2, 2),
            10.0,
            "s",
            0.0,
        )
        .unwrap();
        let r = resize_clip(&clip, (2, 1, 1)).unwrap();
        assert_eq!(r.frames(), &[0.5, 0.5]);
        assert!(resize_clip(&clip, (2, 3, 1)).is_err());
    }

    proptest! {
        #[test]
        fn resampled_indices_are_monotone_and_inside(start in 0.0f64..100.0, fps in 10.0f64..60.0) {
            let cfg = SamplerConfig::default();
            let w = Window { start_s: start, end_s: start + cfg.clip_len_s };
            let idx = resample_indices(w, fps, &cfg);
            prop_assert_eq!(idx.len(), 50);
            // enumeration oracle: index of the frame nearest to each target instant
            for (j, &k) in idx.iter().enumerate() {
                let t = start + j as f64 / cfg.target_fps;
                prop_assert!((k as f64 / fps - t).abs() <= 0.5 / fps + 1e-9);
                prop_assert!(k as f64 >= (start * fps).floor());
                prop_assert!((k as f64) < (w.end_s * fps).ceil() + 1.0);
            }
            prop_assert!(idx.windows(2).all(|p| p[0] <= p[1]));
        }
    }
}
