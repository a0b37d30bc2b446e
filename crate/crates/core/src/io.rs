//! On-disk formats: raw video containers, timelines, clip manifests,
//! checkpoints and reports.
//!
//! Video container layout (all integers little-endian):
//!
//! ```text
//! offset  size  field
//! 0       8     magic "CURLVID1"
//! 8       4     u32 T (frames)
//! 12      4     u32 H
//! 16      4     u32 W
//! 20      4     f32 fps
//! 24      1     u8 dtype (0 = u8 intensities / 255, 1 = f32)
//! 25      ..    payload, temporal-major then row-major
//! ```

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::data_model::SegmentTimeline;
use crate::error::{Error, Result};

pub const VIDEO_MAGIC: &[u8; 8] = b"CURLVID1";
const VIDEO_HEADER_LEN: u64 = 25;

#[derive(Debug, Clone, PartialEq)]
pub enum FrameData {
    U8(Vec<u8>),
    F32(Vec<f32>),
}

impl FrameData {
    pub fn len(&self) -> usize {
        match self {
            FrameData::U8(v) => v.len(),
            FrameData::F32(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn dtype_tag(&self) -> u8 {
        match self {
            FrameData::U8(_) => 0,
            FrameData::F32(_) => 1,
        }
    }

    /// Intensity at flat index `i`, decoded into `[0, 1]`.
    #[inline]
    pub fn get(&self, i: usize) -> f32 {
        match self {
            FrameData::U8(v) => v[i] as f32 / 255.0,
            FrameData::F32(v) => v[i],
        }
    }
}

/// A decoded raw video: `T × H × W` frames at `fps`.
#[derive(Debug, Clone, PartialEq)]
pub struct RawVideo {
    pub t: usize,
    pub h: usize,
    pub w: usize,
    pub fps: f32,
    pub data: FrameData,
}

impl RawVideo {
    pub fn new(dims: (usize, usize, usize), fps: f32, data: FrameData) -> Result<Self> {
        let (t, h, w) = dims;
        if data.len() != t * h * w {
            return Err(Error::Config(format!(
                "video payload has {} values, expected {}",
                data.len(),
                t * h * w
            )));
        }
        if !(fps > 0.0) {
            return Err(Error::Config(format!("fps must be positive, got {fps}")));
        }
        Ok(Self { t, h, w, fps, data })
    }

    pub fn frame_len(&self) -> usize {
        self.h * self.w
    }

    pub fn duration_s(&self) -> f64 {
        self.t as f64 / self.fps as f64
    }

    /// Decoded frame `k` appended to `out`.
    pub fn extend_frame(&self, k: usize, out: &mut Vec<f32>) {
        let n = self.frame_len();
        let base = k * n;
        match &self.data {
            FrameData::U8(v) => out.extend(v[base..base + n].iter().map(|&b| b as f32 / 255.0)),
            FrameData::F32(v) => out.extend_from_slice(&v[base..base + n]),
        }
    }
}

pub fn encode_video(video: &RawVideo) -> Vec<u8> {
    let mut buf = Vec::with_capacity(VIDEO_HEADER_LEN as usize + video.data.len() * 4);
    buf.extend_from_slice(VIDEO_MAGIC);
    for d in [video.t, video.h, video.w] {
        buf.extend_from_slice(&(d as u32).to_le_bytes());
    }
    buf.extend_from_slice(&video.fps.to_le_bytes());
    buf.push(video.data.dtype_tag());
    match &video.data {
        FrameData::U8(v) => buf.extend_from_slice(v),
        FrameData::F32(v) => {
            for x in v {
                buf.extend_from_slice(&x.to_le_bytes());
            }
        }
    }
    buf
}

pub fn decode_video(bytes: &[u8], path: Option<&Path>) -> Result<RawVideo> {
    let need = |off: u64, len: u64| -> Result<()> {
        if (bytes.len() as u64) < off + len {
            Err(Error::format(
                path,
                bytes.len() as u64,
                format!("truncated header: expected at least {} bytes, got {}", off + len, bytes.len()),
            ))
        } else {
            Ok(())
        }
    };
    need(0, 8)?;
    if &bytes[..8] != VIDEO_MAGIC {
        return Err(Error::format(path, 0, "bad magic, expected \"CURLVID1\""));
    }
    need(8, VIDEO_HEADER_LEN - 8)?;
    let u32_at = |off: usize| u32::from_le_bytes(bytes[off..off + 4].try_into().unwrap()) as usize;
    let (t, h, w) = (u32_at(8), u32_at(12), u32_at(16));
    let fps = f32::from_le_bytes(bytes[20..24].try_into().unwrap());
    let dtype = bytes[24];
    let elem = match dtype {
        0 => 1,
        1 => 4,
        other => return Err(Error::format(path, 24, format!("unknown dtype tag {other}"))),
    };
    if !(fps > 0.0) {
        return Err(Error::format(path, 20, format!("fps must be positive, got {fps}")));
    }
    let expected = VIDEO_HEADER_LEN + (t * h * w * elem) as u64;
    if bytes.len() as u64 != expected {
        return Err(Error::format(
            path,
            bytes.len().min(expected as usize) as u64,
            format!("payload length mismatch: expected {expected} bytes total, got {}", bytes.len()),
        ));
    }
    let payload = &bytes[VIDEO_HEADER_LEN as usize..];
    let data = if dtype == 0 {
        FrameData::U8(payload.to_vec())
    } else {
        let mut v = Vec::with_capacity(t * h * w);
        for (i, c) in payload.chunks_exact(4).enumerate() {
            let x = f32::from_le_bytes(c.try_into().unwrap());
            if !(0.0..=1.0).contains(&x) {
                return Err(Error::format(
                    path,
                    VIDEO_HEADER_LEN + 4 * i as u64,
                    format!("intensity {x} outside [0,1]"),
                ));
            }
            v.push(x);
        }
        FrameData::F32(v)
    };
    Ok(RawVideo { t, h, w, fps, data })
}

pub fn write_video(path: &Path, video: &RawVideo) -> Result<()> {
    write_atomic(path, &encode_video(video))
}

pub fn read_video(path: &Path) -> Result<RawVideo> {
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    decode_video(&bytes, Some(path))
}

/// Writes `bytes` to a temporary file beside `path`, then renames it over.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

/// Parses JSON, reporting the path to the first offending key on failure.
pub fn from_json_str<T: DeserializeOwned>(s: &str) -> Result<T> {
    let de = &mut serde_json::Deserializer::from_str(s);
    serde_path_to_error::deserialize(de).map_err(|e| Error::Schema {
        location: e.path().to_string(),
        message: e.inner().to_string(),
    })
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let s = std::fs::read_to_string(path)?;
    from_json_str(&s).map_err(|e| match e {
        Error::Schema { location, message } => Error::Schema {
            location: format!("{}:{location}", path.display()),
            message,
        },
        other => other,
    })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value).expect("serializable");
    s.push('\n');
    write_atomic(path, s.as_bytes())
}

pub fn read_timeline(path: &Path) -> Result<SegmentTimeline> {
    read_json(path)
}

pub fn write_timeline(path: &Path, timeline: &SegmentTimeline) -> Result<()> {
    write_json(path, timeline)
}

/// One clip reference in a JSON-lines manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub recording_id: String,
    pub start_s: f64,
    pub end_s: f64,
    pub p_movement: f64,
}

pub fn write_manifest(path: &Path, entries: &[ManifestEntry]) -> Result<()> {
    write_jsonl(path, entries)
}

pub fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut buf = Vec::new();
    for r in rows {
        serde_json::to_writer(&mut buf, r).expect("serializable");
        buf.push(b'\n');
    }
    write_atomic(path, &buf)
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    read_jsonl(path)
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let row = from_json_str(&line).map_err(|e| match e {
            Error::Schema { location, message } => Error::Schema {
                location: format!("{}:{}:{location}", path.display(), i + 1),
                message,
            },
            other => other,
        })?;
        out.push(row);
    }
    Ok(out)
}

pub(crate) fn buffered(path: &Path) -> Result<(tempfile::NamedTempFile, BufWriter<File>)> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir)?;
    let tmp = tempfile::NamedTempFile::new_in(dir)?;
    let w = BufWriter::new(tmp.reopen()?);
    Ok((tmp, w))
}

pub(crate) fn commit(tmp: tempfile::NamedTempFile, mut w: BufWriter<File>, path: &Path) -> Result<()> {
    w.flush()?;
    drop(w);
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

/// Writes a CSV table atomically.
pub fn write_csv<S: AsRef<str>>(path: &Path, header: &[&str], rows: &[Vec<S>]) -> Result<()> {
    let (tmp, w) = buffered(path)?;
    let mut csv = csv::Writer::from_writer(w);
    let io_err = |e: csv::Error| Error::Io(std::io::Error::other(e));
    csv.write_record(header).map_err(io_err)?;
    for r in rows {
        csv.write_record(r.iter().map(|c| c.as_ref())).map_err(io_err)?;
    }
    let w = csv.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    commit(tmp, w, path)
}

/// Reads a CSV table as header plus string rows.
pub fn read_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::format(Some(path), 0, e.to_string()))?;
    let header = r
        .headers()
        .map_err(|e| Error::format(Some(path), 0, e.to_string()))?
        .iter()
        .map(String::from)
        .collect();
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| {
            let off = e.position().map_or(0, |p| p.byte());
            Error::format(Some(path), off, e.to_string())
        })?;
        rows.push(rec.iter().map(String::from).collect());
    }
    Ok((header, rows))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_u8() -> RawVideo {
        let data: Vec<u8> = (0..16 * 64 * 64).map(|i| (i * 31 % 256) as u8).collect();
        RawVideo::new((16, 64, 64), 23.0, FrameData::U8(data)).unwrap()
    }

    #[test]
    fn video_round_trip_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.vid");
        let v = sample_u8();
        write_video(&p, &v).unwrap();
        let back = read_video(&p).unwrap();
        assert_eq!(back, v);
        assert_eq!(std::fs::read(&p).unwrap(), encode_video(&back));
    }

    #[test]
    fn f32_video_round_trip() {
        let v = RawVideo::new((2, 2, 2), 10.0, FrameData::F32(vec![0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 1.0])).unwrap();
        assert_eq!(decode_video(&encode_video(&v), None).unwrap(), v);
    }

    #[test]
    fn truncated_video_names_lengths() {
        let bytes = encode_video(&sample_u8());
        let err = decode_video(&bytes[..bytes.len() - 10], None).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains(&format!("expected {}", bytes.len())), "{msg}");
        assert!(msg.contains(&format!("got {}", bytes.len() - 10)), "{msg}");
    }

    #[test]
    fn bad_magic_and_dtype() {
        let mut bytes = encode_video(&sample_u8());
        bytes[24] = 7;
        assert!(matches!(decode_video(&bytes, None), Err(Error::Format { offset: 24, .. })));
        bytes[0] = b'X';
        assert!(matches!(decode_video(&bytes, None), Err(Error::Format { offset: 0, .. })));
    }

    #[test]
    fn u8_255_decodes_to_one() {
        let v = RawVideo::new((1, 1, 2), 10.0, FrameData::U8(vec![255, 0])).unwrap();
        assert_eq!(v.data.get(0), 1.0);
        assert_eq!(v.data.get(1), 0.0);
    }

    #[test]
    fn manifest_round_trip_and_unknown_field() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.jsonl");
        let rows = vec![
            ManifestEntry { recording_id: "s0".into(), start_s: 1.0, end_s: 6.0, p_movement: 0.1 + 0.2 },
            ManifestEntry { recording_id: "s1".into(), start_s: 0.0, end_s: 5.0, p_movement: 1.0 / 3.0 },
        ];
        write_manifest(&p, &rows).unwrap();
        assert_eq!(read_manifest(&p).unwrap(), rows);

        std::fs::write(&p, "{\"recording_id\":\"a\",\"start_s\":0,\"end_s\":5,\"p_movement\":0.5,\"bogus\":1}\n").unwrap();
        match read_manifest(&p) {
            Err(Error::Schema { location, message }) => {
                assert!(location.contains(":1:"), "{location}");
                assert!(message.contains("bogus"), "{message}");
            }
            other => panic!("expected schema error, got {other:?}"),
        }
    }
}
