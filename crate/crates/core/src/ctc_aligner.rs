//! CTC forced alignment: Viterbi over the blank-interleaved label trellis,
//! producing token, word and segment frame spans.

use serde::{Deserialize, Serialize};

use crate::corpus_model::{round_micros, DocumentRef};
use crate::error::{Error, Result};
use crate::feature_io::{FeatureKind, FeatureMatrix, TokenVocab};
use crate::text_normalize::{collapse_whitespace, strip_punctuation};
use crate::vad_chunker::SpeechSpan;

/// Token ids with their word and segment membership.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetSequence {
    pub tokens: Vec<usize>,
    /// Word id of each token.
    pub word_index: Vec<usize>,
    /// Segment id of each word.
    pub segment_index: Vec<usize>,
}

fn check_dense(ids: &[usize], what: &str) -> Result<()> {
    if let Some(&first) = ids.first() {
        if first != 0 {
            return Err(Error::validation(what, "must start at 0"));
        }
    }
    if ids.windows(2).any(|w| w[1] != w[0] && w[1] != w[0] + 1) {
        return Err(Error::validation(what, "must be nondecreasing without gaps"));
    }
    Ok(())
}

impl TargetSequence {
    pub fn new(tokens: Vec<usize>, word_index: Vec<usize>, segment_index: Vec<usize>) -> Result<Self> {
        let t = TargetSequence {
            tokens,
            word_index,
            segment_index,
        };
        t.validate()?;
        Ok(t)
    }

    /// One word, one segment.
    pub fn single_word(tokens: Vec<usize>) -> Self {
        let n = tokens.len();
        TargetSequence {
            tokens,
            word_index: vec![0; n],
            segment_index: if n == 0 { vec![] } else { vec![0] },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.word_index.len() != self.tokens.len() {
            return Err(Error::CountMismatch {
                expected: self.tokens.len(),
                actual: self.word_index.len(),
            });
        }
        check_dense(&self.word_index, "word_index")?;
        let words = self.word_index.last().map_or(0, |w| w + 1);
        if self.segment_index.len() != words {
            return Err(Error::CountMismatch {
                expected: words,
                actual: self.segment_index.len(),
            });
        }
        check_dense(&self.segment_index, "segment_index")
    }

    pub fn word_count(&self) -> usize {
        self.segment_index.len()
    }

    pub fn segment_count(&self) -> usize {
        self.segment_index.last().map_or(0, |s| s + 1)
    }

    /// Minimum frames a CTC path needs: one per token plus one blank between
    /// each pair of identical adjacent tokens.
    pub fn min_frames(&self) -> usize {
        let repeats = self.tokens.windows(2).filter(|w| w[0] == w[1]).count();
        self.tokens.len() + repeats
    }
}

/// Text form used for CTC targets: lowercased, punctuation removed,
/// whitespace collapsed.
pub fn alignment_text(s: &str) -> String {
    collapse_whitespace(&strip_punctuation(&s.to_lowercase()))
}

/// Character-level target for a list of sentences.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenizedSentences {
    pub target: TargetSequence,
    /// Input sentence index of each segment; sentences with no tokens in the
    /// vocabulary produce no segment.
    pub segment_sentence: Vec<usize>,
    /// Characters dropped because the vocabulary lacks them.
    pub unknown_chars: usize,
}

/// Splits each sentence into per-character tokens. When the vocabulary has a
/// word delimiter it is inserted after every word except the very last and
/// belongs to the word before it.
pub fn tokenize_sentences(sentences: &[String], vocab: &TokenVocab) -> TokenizedSentences {
    let mut tokens = Vec::new();
    let mut word_index = Vec::new();
    let mut segment_index = Vec::new();
    let mut segment_sentence = Vec::new();
    let mut unknown_chars = 0;
    let mut buf = [0u8; 4];
    for (si, sentence) in sentences.iter().enumerate() {
        let mut seg_has_words = false;
        for word in alignment_text(sentence).split(' ') {
            let ids: Vec<usize> = word
                .chars()
                .filter_map(|c| {
                    let id = vocab.lookup(c.encode_utf8(&mut buf));
                    if id.is_none() || id == Some(vocab.blank_index()) {
                        unknown_chars += 1;
                        return None;
                    }
                    id
                })
                .collect();
            if ids.is_empty() {
                continue;
            }
            if let (Some(delim), false) = (vocab.word_delimiter(), tokens.is_empty()) {
                tokens.push(delim);
                word_index.push(segment_index.len() - 1);
            }
            if !seg_has_words {
                seg_has_words = true;
                segment_sentence.push(si);
            }
            let w = segment_index.len();
            segment_index.push(segment_sentence.len() - 1);
            word_index.extend(std::iter::repeat_n(w, ids.len()));
            tokens.extend(ids);
        }
    }
    TokenizedSentences {
        target: TargetSequence {
            tokens,
            word_index,
            segment_index,
        },
        segment_sentence,
        unknown_chars,
    }
}

/// Inclusive frame range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameSpan {
    pub start_frame: usize,
    pub end_frame: usize,
}

impl FrameSpan {
    fn hull(self, other: FrameSpan) -> FrameSpan {
        FrameSpan {
            start_frame: self.start_frame.min(other.start_frame),
            end_frame: self.end_frame.max(other.end_frame),
        }
    }

    fn shifted(self, by: usize) -> FrameSpan {
        FrameSpan {
            start_frame: self.start_frame + by,
            end_frame: self.end_frame + by,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentResult {
    pub token_spans: Vec<FrameSpan>,
    pub word_spans: Vec<FrameSpan>,
    pub segment_spans: Vec<FrameSpan>,
    pub path_log_prob: f64,
    pub frame_seconds: f64,
}

const STAY: u8 = 0;
const STEP: u8 = 1;
const SKIP: u8 = 2;

/// Best CTC state path for `target`.
///
/// Ties are broken towards staying in the same state, then advancing by one,
/// then skipping a blank; at the last frame the trailing blank wins a tie
/// against the last token.
pub fn ctc_viterbi_align(
    logits: &FeatureMatrix,
    vocab: &TokenVocab,
    target: &TargetSequence,
) -> Result<AlignmentResult> {
    logits.expect_kind(FeatureKind::Logits)?;
    target.validate()?;
    if target.tokens.is_empty() {
        return Err(Error::Precondition("empty target sequence".into()));
    }
    if logits.cols != vocab.len() {
        return Err(Error::DimensionMismatch {
            left: logits.cols,
            right: vocab.len(),
        });
    }
    let blank = vocab.blank_index();
    if let Some(&bad) = target.tokens.iter().find(|&&t| t == blank || t >= vocab.len()) {
        return Err(Error::validation(
            "tokens",
            format!("token id {bad} is blank or outside the vocabulary"),
        ));
    }
    let frames = logits.rows;
    let required = target.min_frames();
    if frames < required {
        return Err(Error::Infeasible {
            required,
            available: frames,
        });
    }

    let states = 2 * target.tokens.len() + 1;
    let label = |s: usize| if s.is_multiple_of(2) { blank } else { target.tokens[s / 2] };
    let can_skip: Vec<bool> = (0..states)
        .map(|s| s >= 2 && s % 2 == 1 && label(s) != label(s - 2))
        .collect();

    let mut prev = vec![f64::NEG_INFINITY; states];
    let mut cur = vec![f64::NEG_INFINITY; states];
    let mut back = vec![STAY; frames * states];
    let row0 = logits.row(0);
    prev[0] = row0[label(0)] as f64;
    prev[1] = row0[label(1)] as f64;

    for t in 1..frames {
        let row = logits.row(t);
        // states beyond 2t+1 are unreachable at frame t
        let reach = (2 * t + 2).min(states);
        let bp = &mut back[t * states..(t + 1) * states];
        for s in 0..reach {
            let mut best = prev[s];
            let mut from = STAY;
            if s >= 1 && prev[s - 1] > best {
                best = prev[s - 1];
                from = STEP;
            }
            if can_skip[s] && prev[s - 2] > best {
                best = prev[s - 2];
                from = SKIP;
            }
            bp[s] = from;
            cur[s] = if best == f64::NEG_INFINITY {
                best
            } else {
                best + row[label(s)] as f64
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }

    let (last_blank, last_token) = (states - 1, states - 2);
    let mut state = if prev[last_blank] >= prev[last_token] {
        last_blank
    } else {
        last_token
    };
    let path_log_prob = prev[state];
    if path_log_prob == f64::NEG_INFINITY {
        return Err(Error::Infeasible {
            required,
            available: frames,
        });
    }

    let mut path = vec![0usize; frames];
    for t in (0..frames).rev() {
        path[t] = state;
        if t > 0 {
            state -= back[t * states + state] as usize;
        }
    }

    let mut token_spans: Vec<Option<FrameSpan>> = vec![None; target.tokens.len()];
    for (t, &s) in path.iter().enumerate() {
        if s % 2 == 1 {
            let here = FrameSpan {
                start_frame: t,
                end_frame: t,
            };
            let slot = &mut token_spans[s / 2];
            *slot = Some(slot.map_or(here, |sp| sp.hull(here)));
        }
    }
    let token_spans: Vec<FrameSpan> = token_spans
        .into_iter()
        .map(|s| s.expect("every token state is visited on a complete path"))
        .collect();
    let word_spans = hulls(&token_spans, &target.word_index);
    let segment_spans = hulls(&word_spans, &target.segment_index);
    Ok(AlignmentResult {
        token_spans,
        word_spans,
        segment_spans,
        path_log_prob,
        frame_seconds: logits.frame_seconds as f64,
    })
}

fn hulls(spans: &[FrameSpan], group: &[usize]) -> Vec<FrameSpan> {
    let mut out: Vec<FrameSpan> = Vec::new();
    for (&sp, &g) in spans.iter().zip(group) {
        if g == out.len() {
            out.push(sp);
        } else {
            out[g] = out[g].hull(sp);
        }
    }
    out
}

/// Re-bases chunk-local frame indices to document frames.
pub fn offset_alignment(a: &AlignmentResult, chunk_start_frame: usize) -> AlignmentResult {
    let shift = |v: &[FrameSpan]| v.iter().map(|s| s.shifted(chunk_start_frame)).collect();
    AlignmentResult {
        token_spans: shift(&a.token_spans),
        word_spans: shift(&a.word_spans),
        segment_spans: shift(&a.segment_spans),
        path_log_prob: a.path_log_prob,
        frame_seconds: a.frame_seconds,
    }
}

/// Time span of an inclusive frame range, at microsecond resolution.
pub fn frame_span_seconds(span: FrameSpan, frame_seconds: f64) -> SpeechSpan {
    SpeechSpan {
        start_s: round_micros(span.start_frame as f64 * frame_seconds),
        end_s: round_micros((span.end_frame + 1) as f64 * frame_seconds),
    }
}

/// Pairs each aligned segment with its sentence, as seconds clipped to the
/// document's audio.
pub fn segments_to_utterances(
    a: &AlignmentResult,
    doc: &DocumentRef,
    sentences: &[String],
) -> Result<Vec<(SpeechSpan, String)>> {
    if a.segment_spans.len() != sentences.len() {
        return Err(Error::CountMismatch {
            expected: a.segment_spans.len(),
            actual: sentences.len(),
        });
    }
    Ok(a.segment_spans
        .iter()
        .zip(sentences)
        .map(|(&sp, text)| {
            let mut span = frame_span_seconds(sp, a.frame_seconds);
            span.end_s = span.end_s.min(doc.audio_seconds);
            (span, text.clone())
        })
        .collect())
}

/// Best-path decoding of rows `frames`: per-frame argmax, repeats collapsed,
/// blanks dropped, the word delimiter rendered as a space.
pub fn greedy_decode(
    logits: &FeatureMatrix,
    vocab: &TokenVocab,
    frames: std::ops::Range<usize>,
) -> String {
    let mut out = String::new();
    let mut last = None;
    for t in frames {
        let row = logits.row(t);
        let best = row
            .iter()
            .enumerate()
            .fold((0, f32::NEG_INFINITY), |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc })
            .0;
        if Some(best) != last && best != vocab.blank_index() {
            if Some(best) == vocab.word_delimiter() {
                out.push(' ');
            } else {
                out.push_str(vocab.token(best));
            }
        }
        last = Some(best);
    }
    collapse_whitespace(&out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChunkAssignment {
    /// Sentence index range `[start, end)` assigned to each chunk.
    pub ranges: Vec<(usize, usize)>,
}

/// Monotone assignment of sentences to chunks by character mass: sentence
/// `i` goes to the chunk whose share of decoded characters contains the
/// midpoint of the sentence's share of transcript characters.
pub fn assign_to_chunks(chunk_chars: &[usize], sentence_chars: &[usize]) -> ChunkAssignment {
    let k = chunk_chars.len();
    if k == 0 {
        return ChunkAssignment { ranges: vec![] };
    }
    let chunk_total: usize = chunk_chars.iter().sum();
    let sent_total: usize = sentence_chars.iter().sum();
    // cumulative chunk boundaries on [0, 1]; empty decodes still get a sliver
    let weights: Vec<f64> = if chunk_total == 0 {
        vec![1.0; k]
    } else {
        chunk_chars.iter().map(|&c| c as f64 + 1e-9).collect()
    };
    let wsum: f64 = weights.iter().sum();
    let mut bounds = Vec::with_capacity(k);
    let mut acc = 0.0;
    for w in &weights {
        acc += w / wsum;
        bounds.push(acc);
    }
    let mut owner = Vec::with_capacity(sentence_chars.len());
    let mut before = 0usize;
    for (i, &c) in sentence_chars.iter().enumerate() {
        let mid = if sent_total == 0 {
            (i as f64 + 0.5) / sentence_chars.len() as f64
        } else {
            (before as f64 + c as f64 / 2.0) / sent_total as f64
        };
        before += c;
        owner.push(bounds.iter().position(|&b| mid < b).unwrap_or(k - 1));
    }
    let mut ranges = vec![(0, 0); k];
    let mut start = 0;
    for (chunk, range) in ranges.iter_mut().enumerate() {
        let end = start + owner[start..].iter().take_while(|&&o| o == chunk).count();
        *range = (start, end);
        start = end;
    }
    ChunkAssignment { ranges }
}
