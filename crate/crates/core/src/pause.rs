//! Pause encoding of force-aligned transcripts.
//!
//! Pauses between words become standalone symbol tokens by duration:
//! `,` below 0.5 s, `.` from 0.5 s to 2.0 s inclusive, `...` above 2.0 s.
//! Pauses before the first and after the last word are dropped.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::transcript::{quantize, AlignedToken};

/// Durations below this are short pauses.
pub const SHORT_MAX_SEC: f64 = 0.5;
/// Durations above this are long pauses.
pub const LONG_MIN_SEC: f64 = 2.0;
/// Unmarked inter-word gaps at least this long count as pauses.
pub const DEFAULT_MIN_GAP_SEC: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum PauseClass {
    Short,
    Medium,
    Long,
}

impl PauseClass {
    pub fn symbol(self) -> &'static str {
        match self {
            PauseClass::Short => ",",
            PauseClass::Medium => ".",
            PauseClass::Long => "...",
        }
    }

    pub fn from_symbol(s: &str) -> Option<Self> {
        match s {
            "," => Some(PauseClass::Short),
            "." => Some(PauseClass::Medium),
            "..." => Some(PauseClass::Long),
            _ => None,
        }
    }
}

/// Classifies a positive pause duration in seconds.
pub fn classify_pause(duration: f64) -> Result<PauseClass> {
    if !(duration > 0.0) || !duration.is_finite() {
        return Err(Error::invalid(format!(
            "pause duration must be positive and finite, got {duration}"
        )));
    }
    Ok(if duration < SHORT_MAX_SEC {
        PauseClass::Short
    } else if duration <= LONG_MIN_SEC {
        PauseClass::Medium
    } else {
        PauseClass::Long
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum EncodedToken {
    Word(String),
    Pause(PauseClass),
}

impl EncodedToken {
    pub fn as_str(&self) -> &str {
        match self {
            EncodedToken::Word(w) => w,
            EncodedToken::Pause(p) => p.symbol(),
        }
    }

    pub fn is_pause(&self) -> bool {
        matches!(self, EncodedToken::Pause(_))
    }
}

impl fmt::Display for EncodedToken {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A pause-encoded token sequence.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PauseEncoded {
    pub tokens: Vec<EncodedToken>,
    pub warnings: Vec<String>,
}

impl PauseEncoded {
    pub fn as_strs(&self) -> Vec<&str> {
        self.tokens.iter().map(EncodedToken::as_str).collect()
    }

    pub fn words(&self) -> impl Iterator<Item = &str> {
        self.tokens.iter().filter_map(|t| match t {
            EncodedToken::Word(w) => Some(w.as_str()),
            EncodedToken::Pause(_) => None,
        })
    }

    /// One line, tokens separated by single spaces.
    pub fn to_line(&self) -> String {
        self.as_strs().join(" ")
    }

    /// Parses the whitespace-separated file form back into tokens.
    pub fn from_line(line: &str) -> Self {
        PauseEncoded {
            tokens: line
                .split_whitespace()
                .map(|t| match PauseClass::from_symbol(t) {
                    Some(p) => EncodedToken::Pause(p),
                    None => EncodedToken::Word(t.to_string()),
                })
                .collect(),
            warnings: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PauseEncoder {
    pub min_gap: f64,
}

impl Default for PauseEncoder {
    fn default() -> Self {
        PauseEncoder {
            min_gap: DEFAULT_MIN_GAP_SEC,
        }
    }
}

impl PauseEncoder {
    /// Encodes a time-ordered token stream.
    ///
    /// The pause between two consecutive words spans from the end of the
    /// first to the start of the second. It is emitted when SIL rows lie in
    /// between or when the unmarked gap reaches `min_gap`. Word text is
    /// lowercased.
    pub fn encode(&self, tokens: &[AlignedToken]) -> PauseEncoded {
        let mut out = PauseEncoded::default();
        let words: Vec<usize> = tokens
            .iter()
            .enumerate()
            .filter(|(_, t)| !t.is_pause())
            .map(|(i, _)| i)
            .collect();
        if words.is_empty() {
            if !tokens.is_empty() {
                let msg = format!("alignment of {} tokens contains no words", tokens.len());
                log::warn!("{msg}");
                out.warnings.push(msg);
            }
            return out;
        }

        for (k, &wi) in words.iter().enumerate() {
            if k > 0 {
                let prev = words[k - 1];
                let marked = wi - prev > 1;
                let gap = quantize(tokens[wi].start - tokens[prev].end);
                if (marked || gap >= self.min_gap) && gap > 0.0 {
                    let class = classify_pause(gap).expect("gap is positive");
                    out.tokens.push(EncodedToken::Pause(class));
                }
            }
            out.tokens
                .push(EncodedToken::Word(tokens[wi].text.to_lowercase()));
        }
        out
    }
}

/// [`PauseEncoder::encode`] with default settings.
pub fn encode(tokens: &[AlignedToken]) -> PauseEncoded {
    PauseEncoder::default().encode(tokens)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tok(text: &str, start: f64, end: f64) -> AlignedToken {
        AlignedToken::new(text, start, end)
    }

    #[test]
    fn thresholds() {
        assert_eq!(classify_pause(0.3).unwrap(), PauseClass::Short);
        assert_eq!(classify_pause(1.0).unwrap(), PauseClass::Medium);
        assert_eq!(classify_pause(2.5).unwrap(), PauseClass::Long);
        assert_eq!(classify_pause(0.5).unwrap(), PauseClass::Medium);
        assert_eq!(classify_pause(2.0).unwrap(), PauseClass::Medium);
        assert_eq!(classify_pause(0.49999).unwrap(), PauseClass::Short);
        assert_eq!(classify_pause(2.00001).unwrap(), PauseClass::Long);
        assert!(classify_pause(0.0).is_err());
        assert!(classify_pause(-1.0).is_err());
        assert!(classify_pause(f64::NAN).is_err());
    }

    #[test]
    fn symbols_are_distinct() {
        let s: std::collections::HashSet<_> = [PauseClass::Short, PauseClass::Medium, PauseClass::Long]
            .iter()
            .map(|p| p.symbol())
            .collect();
        assert_eq!(s.len(), 3);
    }

    #[test]
    fn trims_edges_and_classifies_interior() {
        let t = [
            tok("SIL", 0.0, 1.2),
            tok("the", 1.2, 1.5),
            tok("SIL", 1.5, 1.8),
            tok("boy", 1.8, 2.1),
            tok("SIL", 2.1, 5.1),
        ];
        assert_eq!(encode(&t).as_strs(), ["the", ",", "boy"]);
    }

    #[test]
    fn long_pause_and_identity() {
        let t = [tok("p", 0.0, 0.3), tok("SIL", 0.3, 2.8), tok("pan", 2.8, 3.2)];
        assert_eq!(encode(&t).as_strs(), ["p", "...", "pan"]);
        assert_eq!(encode(&[tok("cat", 0.0, 0.4)]).as_strs(), ["cat"]);
    }

    #[test]
    fn only_silence_warns() {
        let e = encode(&[tok("SIL", 0.0, 1.0), tok("SIL", 1.0, 2.0)]);
        assert!(e.tokens.is_empty());
        assert_eq!(e.warnings.len(), 1);
        assert!(encode(&[]).warnings.is_empty());
    }

    #[test]
    fn unmarked_gaps() {
        let t = [tok("a", 0.0, 0.2), tok("b", 0.24, 0.5), tok("c", 0.55, 0.9)];
        // 40 ms gap ignored, 50 ms gap is a short pause.
        assert_eq!(encode(&t).as_strs(), ["a", "b", ",", "c"]);
    }

    #[test]
    fn consecutive_sil_rows_merge() {
        let t = [
            tok("a", 0.0, 0.2),
            tok("SIL", 0.2, 0.6),
            tok("SIL", 0.6, 1.0),
            tok("b", 1.0, 1.2),
        ];
        assert_eq!(encode(&t).as_strs(), ["a", ".", "b"]);
    }

    #[test]
    fn line_round_trip() {
        let e = PauseEncoded::from_line("the , boy ... took . it");
        assert_eq!(e.to_line(), "the , boy ... took . it");
        assert_eq!(e.words().collect::<Vec<_>>(), ["the", "boy", "took", "it"]);
    }
}
