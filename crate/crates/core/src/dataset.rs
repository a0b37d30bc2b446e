//! Clip sets: windows over loaded recordings, materialized on demand at the
//! encoder's input geometry.

use std::collections::BTreeSet;

use crate::data_model::{Label, Subtype, VideoClip};
use crate::error::{Error, Result};
use crate::io::ManifestEntry;
use crate::sampling::{self, SamplerConfig, Window};
use crate::synth::Recording;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClipItem {
    pub recording: usize,
    pub window: Window,
    pub p_movement: f64,
    /// Movement archetype covering most of the window, if any.
    pub subtype: Option<Subtype>,
}

/// Which sampler produced a set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sampling {
    CleanCut,
    Sliding,
}

#[derive(Debug, Clone)]
pub struct ClipSet<'a> {
    pub recordings: &'a [Recording],
    pub items: Vec<ClipItem>,
    pub sampler: SamplerConfig,
    /// `(T, H, W)` every clip is resized to.
    pub dims: (usize, usize, usize),
}

fn dominant_subtype(rec: &Recording, w: Window) -> Option<Subtype> {
    let mut best: Option<(f64, Subtype)> = None;
    for s in &rec.timeline.segments {
        if s.label != Label::Movement {
            continue;
        }
        let overlap = s.end_s.min(w.end_s) - s.start_s.max(w.start_s);
        if overlap > 0.0 && best.map_or(true, |(o, _)| overlap > o) {
            best = Some((overlap, s.subtype));
        }
    }
    best.map(|(_, s)| s)
}

impl<'a> ClipSet<'a> {
    pub fn new(
        recordings: &'a [Recording],
        sampling: Sampling,
        sampler: &SamplerConfig,
        dims: (usize, usize, usize),
    ) -> Result<Self> {
        sampler.validate()?;
        let mut items = Vec::new();
        for (ri, rec) in recordings.iter().enumerate() {
            match sampling {
                Sampling::CleanCut => {
                    for w in sampling::clean_cut_windows(&rec.timeline, sampler) {
                        items.push(ClipItem {
                            recording: ri,
                            window: w.window,
                            p_movement: w.p_movement(),
                            subtype: (w.label == Label::Movement).then_some(w.subtype),
                        });
                    }
                }
                Sampling::Sliding => {
                    for w in sampling::sliding_windows(&rec.timeline, sampler) {
                        items.push(ClipItem {
                            recording: ri,
                            window: w.window,
                            p_movement: w.p_movement,
                            subtype: dominant_subtype(rec, w.window),
                        });
                    }
                }
            }
        }
        Ok(Self { recordings, items, sampler: sampler.clone(), dims })
    }

    pub fn clean_cut(recordings: &'a [Recording], sampler: &SamplerConfig, dims: (usize, usize, usize)) -> Result<Self> {
        Self::new(recordings, Sampling::CleanCut, sampler, dims)
    }

    pub fn sliding(recordings: &'a [Recording], sampler: &SamplerConfig, dims: (usize, usize, usize)) -> Result<Self> {
        Self::new(recordings, Sampling::Sliding, sampler, dims)
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn subject(&self, i: usize) -> &str {
        &self.recordings[self.items[i].recording].id
    }

    pub fn subjects(&self) -> BTreeSet<String> {
        self.items.iter().map(|it| self.recordings[it.recording].id.clone()).collect()
    }

    /// Item `i` cut at the sampler's frame rate and resized to `dims`.
    pub fn clip(&self, i: usize) -> Result<VideoClip> {
        let it = self.items.get(i).ok_or_else(|| Error::Argument(format!("clip {i} out of range")))?;
        let rec = &self.recordings[it.recording];
        let raw = sampling::materialize_clip(&rec.video, &rec.id, it.window, &self.sampler)?;
        sampling::resize_clip(&raw, self.dims)
    }

    /// Items whose subject is in `subjects`.
    pub fn restrict<S: AsRef<str>>(&self, subjects: &[S]) -> Self {
        let keep: BTreeSet<&str> = subjects.iter().map(|s| s.as_ref()).collect();
        let items = self
            .items
            .iter()
            .filter(|it| keep.contains(self.recordings[it.recording].id.as_str()))
            .copied()
            .collect();
        Self { items, ..self.clone() }
    }

    pub fn manifest(&self) -> Vec<ManifestEntry> {
        self.items
            .iter()
            .map(|it| ManifestEntry {
                recording_id: self.recordings[it.recording].id.clone(),
                start_s: it.window.start_s,
                end_s: it.window.end_s,
                p_movement: it.p_movement,
            })
            .collect()
    }

    /// Stable identifier `<subject>@<start>`.
    pub fn clip_id(&self, i: usize) -> String {
        format!("{}@{:.3}", self.subject(i), self.items[i].window.start_s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate_dataset, SynthConfig};

    fn small() -> Vec<Recording> {
        let cfg = SynthConfig { n_subjects: 2, duration_s: 60.0, height: 32, width: 32, ..Default::default() };
        generate_dataset(&cfg).unwrap()
    }

    #[test]
    fn clean_cut_items_are_pure_and_resized() {
        let recs = small();
        let set = ClipSet::clean_cut(&recs, &SamplerConfig::default(), (8, 16, 16)).unwrap();
        assert!(!set.is_empty());
        for (i, it) in set.items.iter().enumerate() {
            assert!(it.p_movement == 0.0 || it.p_movement == 1.0);
            assert_eq!(it.subtype.is_some(), it.p_movement == 1.0);
            if i < 3 {
                assert_eq!(set.clip(i).unwrap().dims(), (8, 16, 16));
            }
        }
    }

    #[test]
    fn restrict_keeps_only_named_subjects() {
        let recs = small();
        let set = ClipSet::sliding(&recs, &SamplerConfig::default(), (8, 16, 16)).unwrap();
        assert_eq!(set.len(), 2 * 56);
        let one = set.restrict(&[recs[1].id.clone()]);
        assert_eq!(one.len(), 56);
        assert!((0..one.len()).all(|i| one.subject(i) == recs[1].id));
        assert_eq!(one.manifest().len(), 56);
    }
}
