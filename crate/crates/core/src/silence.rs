//! Ten-dimensional silence features from VAD speech segments.
//!
//! VAD file format:
//!
//! ```text
//! # total_duration_sec=12.480
//! start_sec,end_sec
//! 0.310,2.020
//! 2.650,5.118
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SILENCE_DIM: usize = 10;

/// Component names in vector order.
pub const SILENCE_FEATURE_NAMES: [&str; SILENCE_DIM] = [
    "silence_count_per_sec",
    "silence_to_speech_ratio",
    "sil_max",
    "sil_min",
    "sil_mean",
    "sil_std",
    "sp_max",
    "sp_min",
    "sp_mean",
    "sp_std",
];

/// A speech interval in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VadSegment {
    pub start: f64,
    pub end: f64,
}

impl VadSegment {
    pub fn new(start: f64, end: f64) -> Self {
        VadSegment { start, end }
    }

    pub fn duration(&self) -> f64 {
        self.end - self.start
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VadFile {
    pub total_duration: f64,
    pub segments: Vec<VadSegment>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SilenceVector(pub [f64; SILENCE_DIM]);

impl SilenceVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn silence_count_per_sec(&self) -> f64 {
        self.0[0]
    }

    pub fn silence_to_speech_ratio(&self) -> f64 {
        self.0[1]
    }
}

/// max, min, mean and population standard deviation.
fn describe(values: &[f64]) -> [f64; 4] {
    if values.is_empty() {
        return [0.0; 4];
    }
    let n = values.len() as f64;
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    [max, min, mean, var.sqrt()]
}

/// Computes the silence vector for ordered, disjoint speech segments.
///
/// Silences are the positive gaps between consecutive segments; time before
/// the first and after the last segment is not counted.
pub fn silence_vector(segments: &[VadSegment], total_duration: f64) -> Result<SilenceVector> {
    let last = segments
        .last()
        .ok_or_else(|| Error::invalid("silence features need at least one speech segment"))?;
    for (i, s) in segments.iter().enumerate() {
        if !(s.start.is_finite() && s.end.is_finite()) || s.start < 0.0 || s.end <= s.start {
            return Err(Error::invalid(format!(
                "segment {i} [{}, {}] is not a positive interval",
                s.start, s.end
            )));
        }
        if i > 0 && s.start < segments[i - 1].end {
            return Err(Error::invalid(format!(
                "segment {i} starts at {} before segment {} ends at {}",
                s.start,
                i - 1,
                segments[i - 1].end
            )));
        }
    }
    if !(total_duration >= last.end) {
        return Err(Error::invalid(format!(
            "total duration {total_duration} is shorter than the covered span ending at {}",
            last.end
        )));
    }

    let speech: Vec<f64> = segments.iter().map(VadSegment::duration).collect();
    let silences: Vec<f64> = segments
        .windows(2)
        .map(|w| w[1].start - w[0].end)
        .filter(|&g| g > 0.0)
        .collect();

    let mut v = [0.0; SILENCE_DIM];
    v[0] = silences.len() as f64 / total_duration;
    v[1] = silences.iter().sum::<f64>() / speech.iter().sum::<f64>();
    v[2..6].copy_from_slice(&describe(&silences));
    v[6..10].copy_from_slice(&describe(&speech));
    Ok(SilenceVector(v))
}

pub fn parse_vad(path: &Path) -> Result<VadFile> {
    let text = crate::error::read_to_string(path)?;
    parse_vad_str(&text, path)
}

pub fn parse_vad_str(text: &str, source: &Path) -> Result<VadFile> {
    let mut total = None;
    let mut header_seen = false;
    let mut segments = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(comment) = line.strip_prefix('#') {
            if let Some(value) = comment.trim().strip_prefix("total_duration_sec=") {
                let t: f64 = value.trim().parse().map_err(|_| {
                    Error::parse(source, lineno, format!("non-numeric total duration {value:?}"))
                })?;
                if !t.is_finite() || t <= 0.0 {
                    return Err(Error::parse(source, lineno, "total duration must be positive"));
                }
                total = Some(t);
            }
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if !header_seen {
            header_seen = true;
            if fields == ["start_sec", "end_sec"] {
                continue;
            }
            return Err(Error::parse(source, lineno, "expected header start_sec,end_sec"));
        }
        if fields.len() != 2 {
            return Err(Error::parse(
                source,
                lineno,
                format!("expected 2 columns, found {}", fields.len()),
            ));
        }
        let parse = |raw: &str| -> Result<f64> {
            raw.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite() && *v >= 0.0)
                .ok_or_else(|| Error::parse(source, lineno, format!("bad timestamp {raw:?}")))
        };
        let seg = VadSegment::new(parse(fields[0])?, parse(fields[1])?);
        if seg.end <= seg.start {
            return Err(Error::parse(source, lineno, "segment end is not after start"));
        }
        if let Some(prev) = segments.last() {
            let prev: &VadSegment = prev;
            if seg.start < prev.end {
                return Err(Error::parse(source, lineno, "segment overlaps the previous one"));
            }
        }
        segments.push(seg);
    }
    let total_duration = total.ok_or_else(|| {
        Error::parse(source, 1, "missing `# total_duration_sec=` header line")
    })?;
    Ok(VadFile {
        total_duration,
        segments,
    })
}

pub fn format_vad(file: &VadFile) -> String {
    let mut out = format!(
        "# total_duration_sec={:.3}\nstart_sec,end_sec\n",
        file.total_duration
    );
    for s in &file.segments {
        out.push_str(&format!("{:.3},{:.3}\n", s.start, s.end));
    }
    out
}
