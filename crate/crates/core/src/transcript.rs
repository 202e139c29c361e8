//! Transcript cleaning and forced-alignment file parsing.
//!
//! Annotation grammar for raw transcripts:
//!
//! * `[TAG ...]`: a square-bracketed tag (speaker turns, noises, comments).
//!   Tags do not nest.
//! * `(...)`: a parenthesized mark, typically an inter-utterance duration
//!   such as `(2.4)`. Marks do not nest.
//!
//! Everything outside those spans is speech. After the spans are removed the
//! text is lowercased, every character other than a letter, digit or
//! apostrophe becomes a separator, and the result is split on whitespace.
//!
//! Alignment files are CSV with the header `token,start_sec,end_sec`; pause
//! rows carry the token `SIL`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Token text used by the aligner for pauses.
pub const SIL: &str = "SIL";

/// A word or pause with timestamps in seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignedToken {
    pub text: String,
    pub start: f64,
    pub end: f64,
}

impl AlignedToken {
    pub fn new(text: impl Into<String>, start: f64, end: f64) -> Self {
        AlignedToken {
            text: text.into(),
            start,
            end,
        }
    }

    pub fn is_pause(&self) -> bool {
        self.text == SIL
    }

    /// `end - start`, rounded to the nearest nanosecond so that decimal
    /// timestamps such as `1.8`/`2.3` yield exactly `0.5`.
    pub fn duration(&self) -> f64 {
        quantize(self.end - self.start)
    }
}

/// Rounds a duration in seconds to the nearest nanosecond.
pub fn quantize(seconds: f64) -> f64 {
    (seconds * 1e9).round() / 1e9
}

/// A transcript with annotations, punctuation and case removed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CleanTranscript {
    pub tokens: Vec<String>,
    pub source: Option<PathBuf>,
    pub annotations_removed: usize,
}

impl CleanTranscript {
    pub fn text(&self) -> String {
        self.tokens.join(" ")
    }
}

/// Removes annotation spans, punctuation and case from a raw transcript.
pub fn strip_annotations(raw: &str) -> Result<CleanTranscript> {
    let mut speech = String::with_capacity(raw.len());
    let mut open: Option<(char, usize)> = None;
    let mut removed = 0;

    for (offset, c) in raw.char_indices() {
        match (open, c) {
            (None, '[') => open = Some((']', offset)),
            (None, '(') => open = Some((')', offset)),
            (None, ']') | (None, ')') => {
                return Err(Error::Annotation {
                    offset,
                    message: format!("closing {c:?} without an opening delimiter"),
                })
            }
            (None, _) => speech.push(c),
            (Some((close, _)), _) if c == close => {
                open = None;
                removed += 1;
                speech.push(' ');
            }
            (Some((_, start)), '[' | '(' | ']' | ')') => {
                return Err(Error::Annotation {
                    offset,
                    message: format!("{c:?} inside the annotation opened at byte {start}"),
                })
            }
            (Some(_), _) => {}
        }
    }
    if let Some((close, start)) = open {
        return Err(Error::Annotation {
            offset: start,
            message: format!("annotation never closed (expected {close:?})"),
        });
    }

    let tokens = speech
        .to_lowercase()
        .chars()
        .map(|c| {
            if c.is_alphanumeric() || c == '\'' {
                c
            } else {
                ' '
            }
        })
        .collect::<String>()
        .split_whitespace()
        .map(str::to_string)
        .collect();

    Ok(CleanTranscript {
        tokens,
        source: None,
        annotations_removed: removed,
    })
}

/// Reads and cleans a transcript file.
pub fn load_transcript(path: &Path) -> Result<CleanTranscript> {
    let raw = crate::error::read_to_string(path)?;
    let mut clean = strip_annotations(&raw)?;
    clean.source = Some(path.to_path_buf());
    Ok(clean)
}

/// Reads an alignment file.
pub fn parse_alignment(path: &Path) -> Result<Vec<AlignedToken>> {
    let text = crate::error::read_to_string(path)?;
    parse_alignment_str(&text, path)
}

/// Parses alignment CSV text; `source` only labels errors.
pub fn parse_alignment_str(text: &str, source: &Path) -> Result<Vec<AlignedToken>> {
    let mut tokens: Vec<AlignedToken> = Vec::new();
    let mut header_seen = false;
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if !header_seen {
            header_seen = true;
            if fields == ["token", "start_sec", "end_sec"] {
                continue;
            }
            return Err(Error::parse(
                source,
                lineno,
                "expected header token,start_sec,end_sec",
            ));
        }
        if fields.len() != 3 {
            return Err(Error::parse(
                source,
                lineno,
                format!("expected 3 columns, found {}", fields.len()),
            ));
        }
        let number = |raw: &str, what: &str| -> Result<f64> {
            let v: f64 = raw.parse().map_err(|_| {
                Error::parse(source, lineno, format!("non-numeric {what} {raw:?}"))
            })?;
            if !v.is_finite() || v < 0.0 {
                return Err(Error::parse(
                    source,
                    lineno,
                    format!("{what} {raw:?} must be a finite non-negative number"),
                ));
            }
            Ok(v)
        };
        let text = fields[0];
        if text.is_empty() {
            return Err(Error::parse(source, lineno, "empty token"));
        }
        let start = number(fields[1], "start_sec")?;
        let end = number(fields[2], "end_sec")?;
        if end <= start {
            return Err(Error::parse(
                source,
                lineno,
                format!("token {text:?}: end {end} is not after start {start}"),
            ));
        }
        if let Some(prev) = tokens.last() {
            if start < prev.end {
                return Err(Error::parse(
                    source,
                    lineno,
                    format!(
                        "token {text:?} starts at {start}, overlapping previous token ending at {}",
                        prev.end
                    ),
                ));
            }
        }
        tokens.push(AlignedToken::new(text, start, end));
    }
    Ok(tokens)
}

/// Serializes tokens in alignment-file format with millisecond precision.
pub fn format_alignment(tokens: &[AlignedToken]) -> String {
    let mut out = String::from("token,start_sec,end_sec\n");
    for t in tokens {
        out.push_str(&format!("{},{:.3},{:.3}\n", t.text, t.start, t.end));
    }
    out
}
