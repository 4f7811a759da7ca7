//! Splits long recordings into alignable chunks from per-frame speech
//! probabilities.
//!
//! Frame `k` covers `[k·frame_seconds, (k+1)·frame_seconds)`.

use serde::{Deserialize, Serialize};

use crate::corpus_model::round_micros;
use crate::error::{Error, Result};
use crate::feature_io::{FeatureKind, FeatureMatrix};

const EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpeechSpan {
    pub start_s: f64,
    pub end_s: f64,
}

impl SpeechSpan {
    pub fn duration(&self) -> f64 {
        self.end_s - self.start_s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VadConfig {
    pub on_threshold: f64,
    pub off_threshold: f64,
    pub min_speech_s: f64,
    pub min_silence_s: f64,
    pub pad_s: f64,
    pub max_chunk_s: f64,
}

impl Default for VadConfig {
    fn default() -> Self {
        VadConfig {
            on_threshold: 0.5,
            off_threshold: 0.35,
            min_speech_s: 0.25,
            min_silence_s: 0.10,
            pad_s: 0.05,
            max_chunk_s: 30.0,
        }
    }
}

impl VadConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 < self.off_threshold
            && self.off_threshold <= self.on_threshold
            && self.on_threshold < 1.0)
        {
            return Err(Error::Config(format!(
                "VAD thresholds must satisfy 0 < off ({}) <= on ({}) < 1",
                self.off_threshold, self.on_threshold
            )));
        }
        if self.min_speech_s < 0.0 || self.min_silence_s < 0.0 || self.pad_s < 0.0 {
            return Err(Error::Config("VAD durations must be non-negative".into()));
        }
        if !(self.max_chunk_s > self.min_speech_s) {
            return Err(Error::Config(format!(
                "max_chunk_s ({}) must exceed min_speech_s ({})",
                self.max_chunk_s, self.min_speech_s
            )));
        }
        Ok(())
    }
}

/// Number of whole frames needed to cover `seconds`, tolerant of round-off.
fn frames_for(seconds: f64, frame_seconds: f64) -> usize {
    (seconds / frame_seconds - 1e-6).ceil().max(0.0) as usize
}

/// Hysteresis speech detection, then drop/pad/merge/split as configured.
pub fn detect_speech(probs: &FeatureMatrix, cfg: &VadConfig) -> Result<Vec<SpeechSpan>> {
    probs.expect_kind(FeatureKind::VadProbs)?;
    if !(probs.frame_seconds > 0.0) {
        return Err(Error::validation(
            "frame_seconds",
            format!("{} must be positive", probs.frame_seconds),
        ));
    }
    cfg.validate()?;
    let fs = probs.frame_seconds as f64;
    let p = &probs.data;
    let min_silence_frames = frames_for(cfg.min_silence_s, fs).max(1);

    // Raw spans as half-open frame ranges.
    let mut raw: Vec<(usize, usize)> = Vec::new();
    let mut open: Option<usize> = None;
    let mut silence_start: Option<usize> = None;
    for (t, &v) in p.iter().enumerate() {
        let v = v as f64;
        match open {
            None => {
                if v >= cfg.on_threshold {
                    open = Some(t);
                    silence_start = None;
                }
            }
            Some(start) => {
                if v < cfg.off_threshold {
                    let s = *silence_start.get_or_insert(t);
                    if t + 1 - s >= min_silence_frames {
                        raw.push((start, s));
                        open = None;
                        silence_start = None;
                    }
                } else {
                    silence_start = None;
                }
            }
        }
    }
    if let Some(start) = open {
        raw.push((start, silence_start.unwrap_or(p.len())));
    }

    let total = probs.duration_seconds();
    let mut spans: Vec<SpeechSpan> = Vec::new();
    for (a, b) in raw {
        let span = SpeechSpan {
            start_s: round_micros(a as f64 * fs),
            end_s: round_micros(b as f64 * fs),
        };
        if span.duration() + EPS < cfg.min_speech_s {
            continue;
        }
        let padded = SpeechSpan {
            start_s: round_micros((span.start_s - cfg.pad_s).max(0.0)),
            end_s: round_micros((span.end_s + cfg.pad_s).min(total)),
        };
        match spans.last_mut() {
            Some(last) if padded.start_s <= last.end_s + EPS => last.end_s = last.end_s.max(padded.end_s),
            _ => spans.push(padded),
        }
    }

    let mut out = Vec::with_capacity(spans.len());
    for s in spans {
        split_long(s, p, fs, cfg.max_chunk_s, &mut out);
    }
    Ok(out)
}

/// Splits at the least-probable frame boundary inside the middle third until
/// every piece fits in `max_chunk_s`.
fn split_long(span: SpeechSpan, p: &[f32], fs: f64, max_chunk_s: f64, out: &mut Vec<SpeechSpan>) {
    if span.duration() <= max_chunk_s + EPS {
        out.push(span);
        return;
    }
    let lo = (span.start_s / fs + 1e-6).floor() as usize;
    let hi = ((span.end_s / fs - 1e-6).ceil() as usize).min(p.len());
    let len = hi.saturating_sub(lo);
    let (a, b) = (lo + len / 3, lo + 2 * len / 3);
    let candidate = (a.max(lo + 1)..b)
        .min_by(|&x, &y| p[x].total_cmp(&p[y]).then(x.cmp(&y)))
        .map(|k| round_micros(k as f64 * fs))
        .filter(|&t| t > span.start_s + EPS && t < span.end_s - EPS);
    let cut = candidate.unwrap_or((span.start_s + span.end_s) / 2.0);
    split_long(
        SpeechSpan {
            start_s: span.start_s,
            end_s: cut,
        },
        p,
        fs,
        max_chunk_s,
        out,
    );
    split_long(
        SpeechSpan {
            start_s: cut,
            end_s: span.end_s,
        },
        p,
        fs,
        max_chunk_s,
        out,
    );
}

/// Rows of `logits` covering `span`, plus the index of the first row.
pub fn slice_logits(logits: &FeatureMatrix, span: &SpeechSpan) -> Result<(FeatureMatrix, usize)> {
    logits.expect_kind(FeatureKind::Logits)?;
    let fs = logits.frame_seconds as f64;
    if !(fs > 0.0) {
        return Err(Error::validation("frame_seconds", "must be positive"));
    }
    let x0 = span.start_s / fs;
    let x1 = span.end_s / fs;
    let snap = |x: f64| 1e-3 + x.abs() * 1e-7;
    let first = (x0 + snap(x0)).floor();
    let last = (x1 - snap(x1)).ceil();
    if span.start_s < 0.0 || first < 0.0 || last > logits.rows as f64 || last <= first {
        return Err(Error::validation(
            "span",
            format!(
                "[{}, {}] outside [0, {}] or empty",
                span.start_s,
                span.end_s,
                logits.duration_seconds()
            ),
        ));
    }
    let (first, last) = (first as usize, last as usize);
    let data = logits.data[first * logits.cols..last * logits.cols].to_vec();
    let m = FeatureMatrix {
        kind: FeatureKind::Logits,
        rows: last - first,
        cols: logits.cols,
        frame_seconds: logits.frame_seconds,
        data,
    };
    Ok((m, first))
}
