//! Shared data model: languages, documents, utterance records and JSONL
//! manifests.
//!
//! A manifest line carries the keys, in this order:
//! `doc_id, audio_path, audio_seconds, sample_rate_hz, src_lang, tgt_lang,
//! start_s, end_s, source_text, target_text, sigma?, tau?, provenance`.
//! `sigma` and `tau` are omitted together when a record has no scores.

use std::collections::HashSet;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sample rate every document is normalized to upstream.
pub const SAMPLE_RATE_HZ: u32 = 16_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum LangCode {
    Asm,
    Ben,
    Guj,
    Hin,
    Kan,
    Mal,
    Mar,
    Npi,
    Ory,
    Pan,
    Snd,
    Tam,
    Tel,
    Urd,
    Eng,
    Mni,
}

impl LangCode {
    pub const ALL: [LangCode; 16] = [
        LangCode::Asm,
        LangCode::Ben,
        LangCode::Guj,
        LangCode::Hin,
        LangCode::Kan,
        LangCode::Mal,
        LangCode::Mar,
        LangCode::Npi,
        LangCode::Ory,
        LangCode::Pan,
        LangCode::Snd,
        LangCode::Tam,
        LangCode::Tel,
        LangCode::Urd,
        LangCode::Eng,
        LangCode::Mni,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            LangCode::Asm => "asm",
            LangCode::Ben => "ben",
            LangCode::Guj => "guj",
            LangCode::Hin => "hin",
            LangCode::Kan => "kan",
            LangCode::Mal => "mal",
            LangCode::Mar => "mar",
            LangCode::Npi => "npi",
            LangCode::Ory => "ory",
            LangCode::Pan => "pan",
            LangCode::Snd => "snd",
            LangCode::Tam => "tam",
            LangCode::Tel => "tel",
            LangCode::Urd => "urd",
            LangCode::Eng => "eng",
            LangCode::Mni => "mni",
        }
    }

    /// English display name.
    pub fn name(self) -> &'static str {
        match self {
            LangCode::Asm => "Assamese",
            LangCode::Ben => "Bengali",
            LangCode::Guj => "Gujarati",
            LangCode::Hin => "Hindi",
            LangCode::Kan => "Kannada",
            LangCode::Mal => "Malayalam",
            LangCode::Mar => "Marathi",
            LangCode::Npi => "Nepali",
            LangCode::Ory => "Odia",
            LangCode::Pan => "Punjabi",
            LangCode::Snd => "Sindhi",
            LangCode::Tam => "Tamil",
            LangCode::Tel => "Telugu",
            LangCode::Urd => "Urdu",
            LangCode::Eng => "English",
            LangCode::Mni => "Manipuri",
        }
    }

    /// ISO 15924 script tag (lowercase) the language's text is expected in.
    /// Manipuri is carried in Bengali script.
    pub fn script(self) -> &'static str {
        match self {
            LangCode::Asm | LangCode::Ben | LangCode::Mni => "beng",
            LangCode::Guj => "gujr",
            LangCode::Hin | LangCode::Mar | LangCode::Npi => "deva",
            LangCode::Kan => "knda",
            LangCode::Mal => "mlym",
            LangCode::Ory => "orya",
            LangCode::Pan => "guru",
            LangCode::Snd | LangCode::Urd => "arab",
            LangCode::Tam => "taml",
            LangCode::Tel => "telu",
            LangCode::Eng => "latn",
        }
    }

    pub fn is_english(self) -> bool {
        self == LangCode::Eng
    }
}

impl fmt::Display for LangCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LangCode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.len() != 3 || !s.bytes().all(|b| b.is_ascii_lowercase()) {
            return Err(Error::validation(
                "lang",
                format!("{s:?} is not a 3-letter lowercase code"),
            ));
        }
        LangCode::ALL
            .into_iter()
            .find(|l| l.as_str() == s)
            .ok_or_else(|| Error::validation("lang", format!("unknown language code {s:?}")))
    }
}

impl Serialize for LangCode {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for LangCode {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// A translation direction. Exactly one side is English.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Direction {
    source: LangCode,
    target: LangCode,
}

impl Direction {
    pub fn new(source: LangCode, target: LangCode) -> Result<Self> {
        if source == target {
            return Err(Error::validation(
                "tgt_lang",
                format!("source and target are both {source}"),
            ));
        }
        if source.is_english() == target.is_english() {
            return Err(Error::validation(
                "tgt_lang",
                format!("{source}->{target}: exactly one side must be eng"),
            ));
        }
        Ok(Direction { source, target })
    }

    pub fn source(self) -> LangCode {
        self.source
    }

    pub fn target(self) -> LangCode {
        self.target
    }

    /// The non-English side.
    pub fn indic(self) -> LangCode {
        if self.source.is_english() {
            self.target
        } else {
            self.source
        }
    }

    /// `"en-xx"` or `"xx-en"`.
    pub fn label(self) -> &'static str {
        if self.source.is_english() {
            "en-xx"
        } else {
            "xx-en"
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.source, self.target)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocumentRef {
    pub doc_id: String,
    pub audio_path: String,
    pub audio_seconds: f64,
    pub sample_rate_hz: u32,
}

impl DocumentRef {
    pub fn validate(&self) -> Result<()> {
        if self.doc_id.is_empty() {
            return Err(Error::validation("doc_id", "empty"));
        }
        if !(self.audio_seconds > 0.0 && self.audio_seconds.is_finite()) {
            return Err(Error::validation(
                "audio_seconds",
                format!("{} is not a positive duration", self.audio_seconds),
            ));
        }
        if self.sample_rate_hz != SAMPLE_RATE_HZ {
            return Err(Error::validation(
                "sample_rate_hz",
                format!("{} != {SAMPLE_RATE_HZ}", self.sample_rate_hz),
            ));
        }
        Ok(())
    }
}

/// Mining score `sigma` (cosine) and alignment score `tau` (edit similarity).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QualityScores {
    pub sigma: f64,
    pub tau: f64,
}

impl QualityScores {
    pub fn new(sigma: f64, tau: f64) -> Result<Self> {
        let s = QualityScores { sigma, tau };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(-1.0..=1.0).contains(&self.sigma) {
            return Err(Error::validation("sigma", format!("{} not in [-1, 1]", self.sigma)));
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return Err(Error::validation("tau", format!("{} not in [0, 1]", self.tau)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Existing,
    Mined,
    Synthetic,
}

impl Provenance {
    pub fn as_str(self) -> &'static str {
        match self {
            Provenance::Existing => "existing",
            Provenance::Mined => "mined",
            Provenance::Synthetic => "synthetic",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UtteranceRecord {
    pub doc: DocumentRef,
    pub direction: Direction,
    pub start_s: f64,
    pub end_s: f64,
    pub source_text: String,
    pub target_text: String,
    pub scores: Option<QualityScores>,
    pub provenance: Provenance,
}

impl UtteranceRecord {
    pub fn validate(&self) -> Result<()> {
        self.doc.validate()?;
        if !(self.start_s >= 0.0) {
            return Err(Error::validation("start_s", format!("{} < 0", self.start_s)));
        }
        if !(self.end_s > self.start_s) {
            return Err(Error::validation(
                "end_s",
                format!("end_s {} must exceed start_s {}", self.end_s, self.start_s),
            ));
        }
        if self.end_s > self.doc.audio_seconds {
            return Err(Error::validation(
                "end_s",
                format!(
                    "end_s {} exceeds audio_seconds {}",
                    self.end_s, self.doc.audio_seconds
                ),
            ));
        }
        if self.source_text.trim().is_empty() {
            return Err(Error::validation("source_text", "empty"));
        }
        if self.target_text.trim().is_empty() {
            return Err(Error::validation("target_text", "empty"));
        }
        match (&self.scores, self.provenance) {
            (Some(s), _) => s.validate()?,
            (None, Provenance::Mined) => {
                return Err(Error::validation("sigma", "mined record without scores"))
            }
            (None, _) => {}
        }
        Ok(())
    }

    /// Duration rounded to whole microseconds.
    pub fn duration_micros(&self) -> i64 {
        seconds_to_micros(self.end_s - self.start_s)
    }

    /// Identity of the audio span, used for train/test separation.
    pub fn span_key(&self) -> (String, u64, u64) {
        (
            self.doc.doc_id.clone(),
            self.start_s.to_bits(),
            self.end_s.to_bits(),
        )
    }
}

pub fn seconds_to_micros(s: f64) -> i64 {
    (s * 1e6).round() as i64
}

/// Rounds a time in seconds to microsecond resolution.
pub fn round_micros(s: f64) -> f64 {
    seconds_to_micros(s) as f64 / 1e6
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Manifest {
    /// `None` when the split is not known, e.g. a freshly mined manifest.
    pub split: Option<Split>,
    pub records: Vec<UtteranceRecord>,
}

impl Manifest {
    pub fn new(split: Option<Split>, records: Vec<UtteranceRecord>) -> Self {
        Manifest { split, records }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn duration_micros(&self) -> i64 {
        self.records.iter().map(UtteranceRecord::duration_micros).sum()
    }
}

/// Total duration in seconds, summed exactly at microsecond resolution.
pub fn manifest_duration(m: &Manifest) -> f64 {
    m.duration_micros() as f64 / 1e6
}

/// Fails if any (doc_id, start_s, end_s) triple appears in both manifests.
pub fn check_disjoint(test: &Manifest, train: &Manifest) -> Result<()> {
    let keys: HashSet<_> = test.records.iter().map(UtteranceRecord::span_key).collect();
    if let Some(r) = train.records.iter().find(|r| keys.contains(&r.span_key())) {
        return Err(Error::validation(
            "split",
            format!(
                "span {} [{}, {}] appears in both test and train",
                r.doc.doc_id, r.start_s, r.end_s
            ),
        ));
    }
    Ok(())
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WireRecord {
    doc_id: String,
    audio_path: String,
    audio_seconds: f64,
    sample_rate_hz: u32,
    src_lang: LangCode,
    tgt_lang: LangCode,
    start_s: f64,
    end_s: f64,
    source_text: String,
    target_text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    sigma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    tau: Option<f64>,
    provenance: Provenance,
}

impl From<&UtteranceRecord> for WireRecord {
    fn from(r: &UtteranceRecord) -> Self {
        WireRecord {
            doc_id: r.doc.doc_id.clone(),
            audio_path: r.doc.audio_path.clone(),
            audio_seconds: r.doc.audio_seconds,
            sample_rate_hz: r.doc.sample_rate_hz,
            src_lang: r.direction.source(),
            tgt_lang: r.direction.target(),
            start_s: r.start_s,
            end_s: r.end_s,
            source_text: r.source_text.clone(),
            target_text: r.target_text.clone(),
            sigma: r.scores.map(|s| s.sigma),
            tau: r.scores.map(|s| s.tau),
            provenance: r.provenance,
        }
    }
}

impl TryFrom<WireRecord> for UtteranceRecord {
    type Error = Error;

    fn try_from(w: WireRecord) -> Result<Self> {
        let scores = match (w.sigma, w.tau) {
            (Some(sigma), Some(tau)) => Some(QualityScores { sigma, tau }),
            (None, None) => None,
            (Some(_), None) => return Err(Error::validation("tau", "sigma present without tau")),
            (None, Some(_)) => return Err(Error::validation("sigma", "tau present without sigma")),
        };
        let rec = UtteranceRecord {
            doc: DocumentRef {
                doc_id: w.doc_id,
                audio_path: w.audio_path,
                audio_seconds: w.audio_seconds,
                sample_rate_hz: w.sample_rate_hz,
            },
            direction: Direction::new(w.src_lang, w.tgt_lang)?,
            start_s: w.start_s,
            end_s: w.end_s,
            source_text: w.source_text,
            target_text: w.target_text,
            scores,
            provenance: w.provenance,
        };
        rec.validate()?;
        Ok(rec)
    }
}

/// Serializes one record as a single JSON line (without the trailing newline).
pub fn record_to_json(r: &UtteranceRecord) -> String {
    serde_json::to_string(&WireRecord::from(r)).expect("record serialization is infallible")
}

pub fn record_from_json(line: &str) -> Result<UtteranceRecord> {
    let wire: WireRecord = serde_json::from_str(line).map_err(|e| Error::Parse {
        location: "record".into(),
        message: e.to_string(),
    })?;
    wire.try_into()
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<Manifest> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut records = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let location = format!("{}:{lineno}", path.display());
        let wire: WireRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            location: location.clone(),
            message: e.to_string(),
        })?;
        let rec = UtteranceRecord::try_from(wire).map_err(|e| match e {
            Error::Validation { field, message } => Error::Validation {
                field,
                message: format!("{message} (line {location})"),
            },
            other => other,
        })?;
        records.push(rec);
    }
    Ok(Manifest {
        split: None,
        records,
    })
}

/// Writes records as JSONL to `out`.
pub fn write_manifest_to<W: Write>(m: &Manifest, out: &mut W) -> std::io::Result<()> {
    for r in &m.records {
        out.write_all(record_to_json(r).as_bytes())?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn write_manifest(m: &Manifest, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    for r in &m.records {
        r.validate()?;
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_manifest_to(m, &mut w).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}
