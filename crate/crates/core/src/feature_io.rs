//! The `BAF1` binary feature format and the CTC vocabulary file.
//!
//! Layout (all little-endian, no padding):
//!
//! | offset | size | field                          |
//! |--------|------|--------------------------------|
//! | 0      | 4    | magic `b"BAF1"`                |
//! | 4      | 1    | kind: 0 logits, 1 embeddings, 2 vad_probs |
//! | 5      | 4    | rows (u32)                     |
//! | 9      | 4    | cols (u32)                     |
//! | 13     | 4    | frame_seconds (f32)            |
//! | 17     | 4·rows·cols | data (f32, row-major)   |

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"BAF1";
pub const HEADER_LEN: usize = 17;
/// Allowed deviation of a logits row's logsumexp from zero.
pub const LOGSUMEXP_TOLERANCE: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FeatureKind {
    Logits = 0,
    Embeddings = 1,
    VadProbs = 2,
}

impl FeatureKind {
    pub fn from_byte(b: u8) -> Result<Self> {
        match b {
            0 => Ok(FeatureKind::Logits),
            1 => Ok(FeatureKind::Embeddings),
            2 => Ok(FeatureKind::VadProbs),
            other => Err(Error::Format(format!("unknown feature kind byte {other}"))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            FeatureKind::Logits => "logits",
            FeatureKind::Embeddings => "embeddings",
            FeatureKind::VadProbs => "vad_probs",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub kind: FeatureKind,
    pub rows: usize,
    pub cols: usize,
    /// Seconds per row for logits and VAD probabilities; 0.0 for embeddings.
    pub frame_seconds: f32,
    pub data: Vec<f32>,
}

impl FeatureMatrix {
    /// Builds and validates a matrix.
    pub fn new(
        kind: FeatureKind,
        rows: usize,
        cols: usize,
        frame_seconds: f32,
        data: Vec<f32>,
    ) -> Result<Self> {
        let m = FeatureMatrix {
            kind,
            rows,
            cols,
            frame_seconds,
            data,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn from_rows(kind: FeatureKind, frame_seconds: f32, rows: &[Vec<f32>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != cols) {
            return Err(Error::DimensionMismatch {
                left: cols,
                right: bad.len(),
            });
        }
        Self::new(kind, rows.len(), cols, frame_seconds, rows.concat())
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f32]> {
        self.data.chunks_exact(self.cols)
    }

    /// Duration covered by all rows, in seconds.
    pub fn duration_seconds(&self) -> f64 {
        self.rows as f64 * self.frame_seconds as f64
    }

    pub fn validate(&self) -> Result<()> {
        if self.rows == 0 || self.cols == 0 {
            return Err(Error::validation(
                "shape",
                format!("{}x{} matrix must be non-empty", self.rows, self.cols),
            ));
        }
        if self.rows > u32::MAX as usize || self.cols > u32::MAX as usize {
            return Err(Error::validation("shape", "dimension exceeds u32"));
        }
        if self.data.len() != self.rows * self.cols {
            return Err(Error::validation(
                "data",
                format!(
                    "{} values for a {}x{} matrix",
                    self.data.len(),
                    self.rows,
                    self.cols
                ),
            ));
        }
        if !self.frame_seconds.is_finite() || self.frame_seconds < 0.0 {
            return Err(Error::validation(
                "frame_seconds",
                format!("{} is not a valid frame duration", self.frame_seconds),
            ));
        }
        if let Some(i) = self.data.iter().position(|v| !v.is_finite()) {
            return Err(Error::validation(
                "data",
                format!("non-finite value at row {}", i / self.cols),
            ));
        }
        match self.kind {
            FeatureKind::Logits => {
                for (i, row) in self.iter_rows().enumerate() {
                    let lse = logsumexp(row);
                    if lse.abs() > LOGSUMEXP_TOLERANCE {
                        return Err(Error::validation(
                            "logits",
                            format!("row {i} has logsumexp {lse:.6}, expected 0"),
                        ));
                    }
                }
            }
            FeatureKind::VadProbs => {
                if self.cols != 1 {
                    return Err(Error::validation(
                        "cols",
                        format!("vad_probs must have 1 column, got {}", self.cols),
                    ));
                }
                if let Some(i) = self.data.iter().position(|p| !(0.0..=1.0).contains(p)) {
                    return Err(Error::validation(
                        "vad_probs",
                        format!("row {i} value {} outside [0, 1]", self.data[i]),
                    ));
                }
            }
            FeatureKind::Embeddings => {}
        }
        Ok(())
    }

    pub fn expect_kind(&self, kind: FeatureKind) -> Result<()> {
        if self.kind != kind {
            return Err(Error::validation(
                "kind",
                format!("expected {}, got {}", kind.as_str(), self.kind.as_str()),
            ));
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + 4 * self.data.len());
        out.extend_from_slice(MAGIC);
        out.push(self.kind as u8);
        out.extend_from_slice(&(self.rows as u32).to_le_bytes());
        out.extend_from_slice(&(self.cols as u32).to_le_bytes());
        out.extend_from_slice(&self.frame_seconds.to_le_bytes());
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN {
            return Err(Error::Length {
                expected: HEADER_LEN as u64,
                actual: bytes.len() as u64,
            });
        }
        if &bytes[0..4] != MAGIC {
            return Err(Error::Format(format!(
                "bad magic {:?}, expected \"BAF1\"",
                String::from_utf8_lossy(&bytes[0..4])
            )));
        }
        let kind = FeatureKind::from_byte(bytes[4])?;
        let le_u32 = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap());
        let rows = le_u32(5) as usize;
        let cols = le_u32(9) as usize;
        let frame_seconds = f32::from_le_bytes(bytes[13..17].try_into().unwrap());
        let expected = HEADER_LEN as u64 + 4 * rows as u64 * cols as u64;
        if bytes.len() as u64 != expected {
            return Err(Error::Length {
                expected,
                actual: bytes.len() as u64,
            });
        }
        let data = bytes[HEADER_LEN..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        FeatureMatrix::new(kind, rows, cols, frame_seconds, data)
    }
}

/// Numerically stable log(Σ exp(x)), accumulated in f64.
pub fn logsumexp(row: &[f32]) -> f64 {
    let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v as f64));
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + row.iter().map(|&v| (v as f64 - max).exp()).sum::<f64>().ln()
}

pub fn write_features(m: &FeatureMatrix, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    m.validate()?;
    fs::write(path, m.to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn read_features(path: impl AsRef<Path>) -> Result<FeatureMatrix> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    FeatureMatrix::from_bytes(&bytes)
}

/// `<dir>/<doc_id>.<tag>.baf`
pub fn feature_path(dir: &Path, doc_id: &str, tag: &str) -> PathBuf {
    dir.join(format!("{doc_id}.{tag}.baf"))
}

/// CTC output vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenVocab {
    tokens: Vec<String>,
    blank_index: usize,
    word_delimiter: Option<usize>,
    index: HashMap<String, usize>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct VocabFile {
    tokens: Vec<String>,
    blank_index: usize,
    #[serde(default)]
    word_delimiter: Option<String>,
}

/// Token used as the word delimiter when the vocab file does not name one.
pub const DEFAULT_WORD_DELIMITER: &str = "|";

impl TokenVocab {
    /// `word_delimiter`: `None` picks `"|"` if the vocab contains it.
    pub fn new(
        tokens: Vec<String>,
        blank_index: usize,
        word_delimiter: Option<&str>,
    ) -> Result<Self> {
        if tokens.is_empty() {
            return Err(Error::validation("tokens", "empty vocabulary"));
        }
        if blank_index >= tokens.len() {
            return Err(Error::validation(
                "blank_index",
                format!("{blank_index} out of range for {} tokens", tokens.len()),
            ));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::validation("tokens", format!("duplicate token {t:?}")));
            }
        }
        let word_delimiter = match word_delimiter {
            Some(d) => Some(*index.get(d).ok_or_else(|| {
                Error::validation("word_delimiter", format!("{d:?} is not in the vocabulary"))
            })?),
            None => index.get(DEFAULT_WORD_DELIMITER).copied(),
        };
        if word_delimiter == Some(blank_index) {
            return Err(Error::validation("word_delimiter", "cannot be the blank token"));
        }
        Ok(TokenVocab {
            tokens,
            blank_index,
            word_delimiter,
            index,
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn blank_index(&self) -> usize {
        self.blank_index
    }

    pub fn word_delimiter(&self) -> Option<usize> {
        self.word_delimiter
    }

    pub fn token(&self, i: usize) -> &str {
        &self.tokens[i]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn lookup(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }
}

pub fn parse_vocab(json: &str) -> Result<TokenVocab> {
    let f: VocabFile = serde_json::from_str(json).map_err(|e| Error::Parse {
        location: "vocab".into(),
        message: e.to_string(),
    })?;
    TokenVocab::new(f.tokens, f.blank_index, f.word_delimiter.as_deref())
}

pub fn read_vocab(path: impl AsRef<Path>) -> Result<TokenVocab> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_vocab(&text).map_err(|e| match e {
        Error::Parse { message, .. } => Error::Parse {
            location: path.display().to_string(),
            message,
        },
        other => other,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn half_half() -> f32 {
        0.5f32.ln()
    }

    #[test]
    fn vad_1x1_is_21_bytes() {
        let m = FeatureMatrix::new(FeatureKind::VadProbs, 1, 1, 0.02, vec![0.5]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.vad.baf");
        write_features(&m, &p).unwrap();
        assert_eq!(fs::metadata(&p).unwrap().len(), 21);
        assert_eq!(read_features(&p).unwrap(), m);
    }

    #[test]
    fn embeddings_2x3_is_41_bytes() {
        let m = FeatureMatrix::new(
            FeatureKind::Embeddings,
            2,
            3,
            0.0,
            vec![1.0, 2.0, 3.0, -4.0, 5.5, 6.25],
        )
        .unwrap();
        let bytes = m.to_bytes();
        assert_eq!(bytes.len(), 17 + 2 * 3 * 4);
        assert_eq!(bytes.len(), 41);
        assert_eq!(&bytes[..5], b"BAF1\x01");
        assert_eq!(&bytes[5..9], &2u32.to_le_bytes());
        assert_eq!(&bytes[9..13], &3u32.to_le_bytes());
        assert_eq!(FeatureMatrix::from_bytes(&bytes).unwrap(), m);
    }

    #[test]
    fn normalized_logits_row_passes() {
        let m = FeatureMatrix::new(FeatureKind::Logits, 1, 2, 0.02, vec![half_half(), half_half()]);
        assert!(m.is_ok());
    }

    #[test]
    fn unnormalized_logits_row_fails() {
        // logsumexp(0, 0) = ln 2 ≈ 0.693
        let m = FeatureMatrix::new(FeatureKind::Logits, 1, 2, 0.02, vec![0.0, 0.0]);
        assert!(matches!(m, Err(Error::Validation { .. })));
        let mut bytes = FeatureMatrix {
            kind: FeatureKind::Logits,
            rows: 1,
            cols: 2,
            frame_seconds: 0.02,
            data: vec![0.0, 0.0],
        }
        .to_bytes();
        assert!(matches!(FeatureMatrix::from_bytes(&bytes), Err(Error::Validation { .. })));
        bytes[0..4].copy_from_slice(b"XXXX");
        assert!(matches!(FeatureMatrix::from_bytes(&bytes), Err(Error::Format(_))));
    }

    #[test]
    fn truncated_file_reports_lengths() {
        let m = FeatureMatrix::new(FeatureKind::Embeddings, 2, 2, 0.0, vec![1.0; 4]).unwrap();
        let bytes = m.to_bytes();
        match FeatureMatrix::from_bytes(&bytes[..bytes.len() - 3]) {
            Err(Error::Length { expected, actual }) => {
                assert_eq!(expected, 33);
                assert_eq!(actual, 30);
            }
            other => panic!("unexpected {other:?}"),
        }
        let mut long = bytes.clone();
        long.push(0);
        assert!(matches!(FeatureMatrix::from_bytes(&long), Err(Error::Length { .. })));
        assert!(matches!(FeatureMatrix::from_bytes(b"BAF"), Err(Error::Length { .. })));
    }

    #[test]
    fn vad_constraints() {
        assert!(FeatureMatrix::new(FeatureKind::VadProbs, 1, 2, 0.02, vec![0.1, 0.2]).is_err());
        assert!(FeatureMatrix::new(FeatureKind::VadProbs, 1, 1, 0.02, vec![1.5]).is_err());
        assert!(FeatureMatrix::new(FeatureKind::Embeddings, 0, 3, 0.0, vec![]).is_err());
        let mut bytes = FeatureMatrix::new(FeatureKind::VadProbs, 1, 1, 0.02, vec![0.1])
            .unwrap()
            .to_bytes();
        bytes[4] = 7;
        assert!(matches!(FeatureMatrix::from_bytes(&bytes), Err(Error::Format(_))));
    }

    #[test]
    fn vocab_parsing() {
        let v = parse_vocab(r#"{"tokens":["<b>","a","b"],"blank_index":0}"#).unwrap();
        assert_eq!(v.len(), 3);
        assert_eq!(v.lookup("b"), Some(2));
        assert_eq!(v.word_delimiter(), None);
        assert!(matches!(
            parse_vocab(r#"{"tokens":["<b>","a","b"],"blank_index":3}"#),
            Err(Error::Validation { field, .. }) if field == "blank_index"
        ));
        assert!(matches!(
            parse_vocab(r#"{"tokens":["<b>","a","a"],"blank_index":0}"#),
            Err(Error::Validation { field, .. }) if field == "tokens"
        ));
        let v = parse_vocab(r#"{"tokens":["<b>","|","a"],"blank_index":0}"#).unwrap();
        assert_eq!(v.word_delimiter(), Some(1));
        assert!(parse_vocab(r#"{"tokens":["<b>","a"],"blank_index":0,"word_delimiter":"_"}"#).is_err());
    }
}
