//! Core value types and the annotated-timeline algebra.
//!
//! Times are seconds (`f64`) and every interval is half-open `[start, end)`.
//! Frame indices are derived as `floor(t * fps)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Slack applied before flooring a time to a frame index, so that times on
/// the frame grid (`k / fps`) do not round down to `k - 1`.
const FRAME_EPS: f64 = 1e-9;

/// Frame index containing time `t` at `fps`.
pub fn frame_index(t: f64, fps: f64) -> usize {
    (t * fps + FRAME_EPS).floor().max(0.0) as usize
}

/// A fixed-length grayscale frame stack, stored `T × H × W` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoClip {
    frames: Vec<f32>,
    t: usize,
    h: usize,
    w: usize,
    fps: f64,
    source_id: String,
    start_time_s: f64,
}

impl VideoClip {
    pub fn new(
        frames: Vec<f32>,
        dims: (usize, usize, usize),
        fps: f64,
        source_id: impl Into<String>,
        start_time_s: f64,
    ) -> Result<Self> {
        let (t, h, w) = dims;
        if t == 0 || h == 0 || w == 0 {
            return Err(Error::Config(format!("clip dims must be positive, got {t}x{h}x{w}")));
        }
        if frames.len() != t * h * w {
            return Err(Error::Config(format!(
                "clip payload has {} values, expected {}",
                frames.len(),
                t * h * w
            )));
        }
        if !(fps > 0.0 && fps.is_finite()) {
            return Err(Error::Config(format!("fps must be positive, got {fps}")));
        }
        if let Some(i) = frames.iter().position(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Range(format!(
                "intensity {} at index {i} outside [0,1]",
                frames[i]
            )));
        }
        Ok(Self {
            frames,
            t,
            h,
            w,
            fps,
            source_id: source_id.into(),
            start_time_s,
        })
    }

    /// All-zero clip, handy for shape tests.
    pub fn zeros(dims: (usize, usize, usize), fps: f64) -> Self {
        Self::new(vec![0.0; dims.0 * dims.1 * dims.2], dims, fps, "zeros", 0.0)
            .expect("zero clip is valid")
    }

    /// Same metadata, new payload. Values are clamped into `[0, 1]`.
    pub fn with_frames(&self, mut frames: Vec<f32>) -> Self {
        assert_eq!(frames.len(), self.frames.len(), "payload size mismatch");
        for v in &mut frames {
            *v = v.clamp(0.0, 1.0);
        }
        Self {
            frames,
            ..self.clone_meta()
        }
    }

    fn clone_meta(&self) -> Self {
        Self {
            frames: Vec::new(),
            t: self.t,
            h: self.h,
            w: self.w,
            fps: self.fps,
            source_id: self.source_id.clone(),
            start_time_s: self.start_time_s,
        }
    }

    pub fn frames(&self) -> &[f32] {
        &self.frames
    }

    pub fn into_frames(self) -> Vec<f32> {
        self.frames
    }

    pub fn frame(&self, i: usize) -> &[f32] {
        let n = self.h * self.w;
        &self.frames[i * n..(i + 1) * n]
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.t, self.h, self.w)
    }

    pub fn fps(&self) -> f64 {
        self.fps
    }

    pub fn source_id(&self) -> &str {
        &self.source_id
    }

    pub fn start_time_s(&self) -> f64 {
        self.start_time_s
    }

    pub fn duration_s(&self) -> f64 {
        self.t as f64 / self.fps
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Movement,
    NonMovement,
}

impl Label {
    pub fn other(self) -> Self {
        match self {
            Label::Movement => Label::NonMovement,
            Label::NonMovement => Label::Movement,
        }
    }
}

/// Motion archetype carried by a segment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Subtype {
    /// Rhythmic oscillation (breathing, hiccups).
    Respiratory,
    /// Short jerk: kick, startle, twitch.
    Quick,
    /// Slow drift of a large structure: head or whole-body motion.
    Head,
    /// Small localized flicker: limb or hand.
    Limb,
    /// External or probe-induced global motion, labeled non-movement.
    Probe,
    None,
}

impl Subtype {
    pub const MOVEMENT: [Subtype; 4] = [
        Subtype::Respiratory,
        Subtype::Quick,
        Subtype::Head,
        Subtype::Limb,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Subtype::Respiratory => "respiratory",
            Subtype::Quick => "quick",
            Subtype::Head => "head",
            Subtype::Limb => "limb",
            Subtype::Probe => "probe",
            Subtype::None => "none",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Segment {
    pub start_s: f64,
    pub end_s: f64,
    pub label: Label,
    pub subtype: Subtype,
}

impl Segment {
    pub fn new(start_s: f64, end_s: f64, label: Label, subtype: Subtype) -> Self {
        Self {
            start_s,
            end_s,
            label,
            subtype,
        }
    }

    pub fn duration(&self) -> f64 {
        self.end_s - self.start_s
    }

    fn overlap(&self, a: f64, b: f64) -> f64 {
        (self.end_s.min(b) - self.start_s.max(a)).max(0.0)
    }
}

/// Ordered labeled intervals that tile a recording.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SegmentTimeline {
    pub recording_id: String,
    pub duration_s: f64,
    pub segments: Vec<Segment>,
}

/// A broken timeline invariant. Indices refer to `segments`.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    Empty,
    NonPositiveDuration { duration_s: f64 },
    EmptySegment { index: usize },
    Unsorted { index: usize },
    Gap { from: f64, to: f64 },
    Overlap { index: usize, from: f64, to: f64 },
    SameLabelAdjacent { index: usize },
    Overrun { end_s: f64 },
}

impl SegmentTimeline {
    pub fn new(recording_id: impl Into<String>, duration_s: f64, segments: Vec<Segment>) -> Self {
        Self {
            recording_id: recording_id.into(),
            duration_s,
            segments,
        }
    }

    /// Segment containing time `t`, if any.
    pub fn segment_at(&self, t: f64) -> Option<&Segment> {
        let idx = self.segments.partition_point(|s| s.end_s <= t);
        self.segments
            .get(idx)
            .filter(|s| s.start_s <= t && t < s.end_s)
    }

    /// Interior boundaries between consecutive segments.
    pub fn boundaries(&self) -> impl Iterator<Item = f64> + '_ {
        self.segments.iter().skip(1).map(|s| s.start_s)
    }
}

/// Every invariant violation in `timeline`; an empty list means valid.
pub fn validate_timeline(timeline: &SegmentTimeline) -> Vec<Violation> {
    let mut out = Vec::new();
    if !(timeline.duration_s > 0.0) {
        out.push(Violation::NonPositiveDuration {
            duration_s: timeline.duration_s,
        });
    }
    let segs = &timeline.segments;
    if segs.is_empty() {
        out.push(Violation::Empty);
        return out;
    }
    for (i, s) in segs.iter().enumerate() {
        if !(s.start_s < s.end_s) {
            out.push(Violation::EmptySegment { index: i });
        }
    }
    if segs[0].start_s > 0.0 {
        out.push(Violation::Gap {
            from: 0.0,
            to: segs[0].start_s,
        });
    } else if segs[0].start_s < 0.0 {
        out.push(Violation::Overlap {
            index: 0,
            from: segs[0].start_s,
            to: 0.0,
        });
    }
    for i in 1..segs.len() {
        let (prev, cur) = (&segs[i - 1], &segs[i]);
        if cur.start_s < prev.start_s {
            out.push(Violation::Unsorted { index: i });
            continue;
        }
        if cur.start_s > prev.end_s {
            out.push(Violation::Gap {
                from: prev.end_s,
                to: cur.start_s,
            });
        } else if cur.start_s < prev.end_s {
            out.push(Violation::Overlap {
                index: i,
                from: cur.start_s,
                to: prev.end_s,
            });
        }
        if cur.label == prev.label {
            out.push(Violation::SameLabelAdjacent { index: i });
        }
    }
    let last = segs.iter().map(|s| s.end_s).fold(f64::NEG_INFINITY, f64::max);
    if last < timeline.duration_s {
        out.push(Violation::Gap {
            from: last,
            to: timeline.duration_s,
        });
    } else if last > timeline.duration_s {
        out.push(Violation::Overrun { end_s: last });
    }
    out
}

/// Fraction of `[a, b)` covered by movement-labeled segments.
pub fn movement_fraction(timeline: &SegmentTimeline, a: f64, b: f64) -> Result<f64> {
    label_fraction(timeline, a, b, Label::Movement)
}

/// Fraction of `[a, b)` covered by segments carrying `label`.
pub fn label_fraction(timeline: &SegmentTimeline, a: f64, b: f64, label: Label) -> Result<f64> {
    if !(0.0 <= a && a < b && b <= timeline.duration_s) {
        return Err(Error::Range(format!(
            "window [{a}, {b}) outside recording [0, {})",
            timeline.duration_s
        )));
    }
    let first = timeline.segments.partition_point(|s| s.end_s <= a);
    let covered: f64 = timeline.segments[first..]
        .iter()
        .take_while(|s| s.start_s < b)
        .filter(|s| s.label == label)
        .map(|s| s.overlap(a, b))
        .sum();
    Ok((covered / (b - a)).clamp(0.0, 1.0))
}

/// A clip paired with its soft movement probability.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledClip {
    pub clip: VideoClip,
    pub p_movement: f64,
}

impl LabeledClip {
    pub fn new(clip: VideoClip, p_movement: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&p_movement) {
            return Err(Error::Range(format!("p_movement {p_movement} outside [0,1]")));
        }
        Ok(Self { clip, p_movement })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tl(segs: &[(f64, f64, Label)], duration: f64) -> SegmentTimeline {
        SegmentTimeline::new(
            "r",
            duration,
            segs.iter()
                .map(|&(a, b, l)| Segment::new(a, b, l, Subtype::None))
                .collect(),
        )
    }

    use Label::{Movement as M, NonMovement as N};

    #[test]
    fn valid_timeline_has_no_violations() {
        assert!(validate_timeline(&tl(&[(0.0, 10.0, M), (10.0, 30.0, N)], 30.0)).is_empty());
    }

    #[test]
    fn gap_is_reported() {
        let v = validate_timeline(&tl(&[(0.0, 10.0, M), (12.0, 30.0, N)], 30.0));
        assert_eq!(v, vec![Violation::Gap { from: 10.0, to: 12.0 }]);
    }

    #[test]
    fn same_label_adjacency_is_reported() {
        let v = validate_timeline(&tl(&[(0.0, 10.0, M), (10.0, 30.0, M)], 30.0));
        assert_eq!(v, vec![Violation::SameLabelAdjacent { index: 1 }]);
    }

    #[test]
    fn overlap_unsorted_and_overrun() {
        let v = validate_timeline(&tl(&[(0.0, 12.0, M), (10.0, 30.0, N)], 30.0));
        assert!(matches!(v[0], Violation::Overlap { index: 1, .. }));
        let v = validate_timeline(&tl(&[(10.0, 30.0, N), (0.0, 10.0, M)], 30.0));
        assert!(v.contains(&Violation::Unsorted { index: 1 }));
        let v = validate_timeline(&tl(&[(0.0, 10.0, M), (10.0, 31.0, N)], 30.0));
        assert_eq!(v, vec![Violation::Overrun { end_s: 31.0 }]);
    }

    #[test]
    fn movement_fraction_examples() {
        let t = tl(&[(0.0, 10.0, N), (10.0, 13.5, M), (13.5, 30.0, N)], 30.0);
        assert_eq!(movement_fraction(&t, 10.5, 13.0).unwrap(), 1.0);
        assert!((movement_fraction(&t, 10.0, 15.0).unwrap() - 0.7).abs() < 1e-12);
        assert_eq!(movement_fraction(&t, 20.0, 25.0).unwrap(), 0.0);
        assert!(matches!(movement_fraction(&t, 28.0, 31.0), Err(Error::Range(_))));
        assert!(matches!(movement_fraction(&t, -1.0, 3.0), Err(Error::Range(_))));
    }

    #[test]
    fn timeline_json_rejects_unknown_fields() {
        let ok = r#"{"recording_id":"a","duration_s":5,"segments":[{"start_s":0,"end_s":5,"label":"movement","subtype":"quick"}]}"#;
        let t: SegmentTimeline = serde_json::from_str(ok).unwrap();
        assert_eq!(t.segments[0].label, Label::Movement);
        let bad = r#"{"recording_id":"a","duration_s":5,"extra":1,"segments":[]}"#;
        assert!(serde_json::from_str::<SegmentTimeline>(bad).is_err());
    }

    #[test]
    fn clip_rejects_out_of_range_intensity() {
        assert!(VideoClip::new(vec![0.5, 1.5], (1, 1, 2), 10.0, "x", 0.0).is_err());
        assert!(VideoClip::new(vec![0.5], (1, 1, 2), 10.0, "x", 0.0).is_err());
        assert!(VideoClip::new(vec![0.5, 0.5], (1, 1, 2), 0.0, "x", 0.0).is_err());
    }

    /// Random valid timeline with boundaries on an integer grid.
    fn arb_timeline() -> impl Strategy<Value = SegmentTimeline> {
        (prop::collection::vec(1u32..20, 1..12), any::<bool>()).prop_map(|(lens, first_mov)| {
            let mut segs = Vec::new();
            let mut t = 0.0;
            let mut label = if first_mov { M } else { N };
            for l in lens {
                segs.push(Segment::new(t, t + l as f64, label, Subtype::None));
                t += l as f64;
                label = label.other();
            }
            SegmentTimeline::new("p", t, segs)
        })
    }

    proptest! {
        #[test]
        fn fraction_is_additive(t in arb_timeline(), u in 0.0f64..1.0, v in 0.0f64..1.0, w in 0.0f64..1.0) {
            let mut pts = [u, v, w].map(|x| x * t.duration_s);
            pts.sort_by(f64::total_cmp);
            let [a, b, c] = pts;
            prop_assume!(a < b && b < c);
            let whole = movement_fraction(&t, a, c).unwrap() * (c - a);
            let parts = movement_fraction(&t, a, b).unwrap() * (b - a)
                + movement_fraction(&t, b, c).unwrap() * (c - b);
            prop_assert!((whole - parts).abs() < 1e-9);
        }

        #[test]
        fn complement_label_fraction(t in arb_timeline(), u in 0.0f64..1.0, v in 0.0f64..1.0) {
            let (a, b) = (u.min(v) * t.duration_s, u.max(v) * t.duration_s);
            prop_assume!(a < b);
            let p = movement_fraction(&t, a, b).unwrap();
            let q = label_fraction(&t, a, b, N).unwrap();
            prop_assert!((p + q - 1.0).abs() < 1e-12);
        }

        #[test]
        fn generated_timelines_validate(t in arb_timeline()) {
            prop_assert!(validate_timeline(&t).is_empty());
            // frame-level scan: every frame lies in exactly one segment
            let fps = 7.0;
            let n = (t.duration_s * fps) as usize;
            for k in 0..n {
                let time = k as f64 / fps;
                let hits = t.segments.iter().filter(|s| s.start_s <= time && time < s.end_s).count();
                prop_assert_eq!(hits, 1);
            }
        }
    }
}
