//! Seeded random instances and the checks comparing library output with
//! the oracles. Shared by the oracle tests and the acceptance runner.

#![allow(dead_code)]

use rand::rngs::StdRng;
use rand::Rng;

use speechmine::bitext_dp::{align_documents, total_score};
use speechmine::corpus_model::{
    Direction, DocumentRef, LangCode, Manifest, Provenance, QualityScores, UtteranceRecord,
};
use speechmine::ctc_aligner::{ctc_viterbi_align, FrameSpan, TargetSequence};
use speechmine::feature_io::{FeatureKind, FeatureMatrix, TokenVocab};
use speechmine::Error;

use super::oracles;

// ---------------------------------------------------------------- CTC

#[derive(Debug, Clone)]
pub struct CtcCase {
    pub rows: Vec<Vec<f32>>,
    pub vocab_size: usize,
    pub blank: usize,
    pub target: TargetSequence,
}

fn log_softmax(raw: &[f32]) -> Vec<f32> {
    let max = raw.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
    let lse = max as f64 + raw.iter().map(|&x| ((x - max) as f64).exp()).sum::<f64>().ln();
    raw.iter().map(|&x| (x as f64 - lse) as f32).collect()
}

/// T <= 6, L <= 3, vocab <= 4. Half the cases use coarse dyadic logits so
/// that many paths tie exactly.
pub fn ctc_case(rng: &mut StdRng) -> CtcCase {
    let vocab_size = rng.random_range(2..=4);
    let blank = rng.random_range(0..vocab_size);
    let frames = rng.random_range(1..=6);
    let len = rng.random_range(1..=3);
    let tokens: Vec<usize> = (0..len)
        .map(|_| {
            let t = rng.random_range(0..vocab_size - 1);
            if t >= blank {
                t + 1
            } else {
                t
            }
        })
        .collect();
    let mut word_index = vec![0];
    for _ in 1..len {
        let w = *word_index.last().unwrap();
        word_index.push(if rng.random_bool(0.4) { w + 1 } else { w });
    }
    let words = word_index.last().unwrap() + 1;
    let mut segment_index = vec![0];
    for _ in 1..words {
        let s = *segment_index.last().unwrap();
        segment_index.push(if rng.random_bool(0.5) { s + 1 } else { s });
    }
    let quantized = rng.random_bool(0.5);
    let rows = (0..frames)
        .map(|_| {
            if quantized {
                (0..vocab_size)
                    .map(|_| -0.5 * rng.random_range(0..5) as f32)
                    .collect()
            } else {
                let raw: Vec<f32> = (0..vocab_size).map(|_| rng.random_range(-4.0..4.0)).collect();
                log_softmax(&raw)
            }
        })
        .collect();
    CtcCase {
        rows,
        vocab_size,
        blank,
        target: TargetSequence::new(tokens, word_index, segment_index).unwrap(),
    }
}

/// Token spans fix the whole state path: frames between tokens sit in the
/// blank state separating them.
fn path_from_spans(spans: &[FrameSpan], frames: usize) -> Vec<usize> {
    let mut path = vec![0; frames];
    for t in 0..frames {
        let mut state = 0;
        for (k, sp) in spans.iter().enumerate() {
            if t >= sp.start_frame && t <= sp.end_frame {
                state = 2 * k + 1;
            } else if t > sp.end_frame {
                state = 2 * k + 2;
            }
        }
        path[t] = state;
    }
    path
}

pub fn check_ctc(case: &CtcCase) -> Result<(), String> {
    let vocab = TokenVocab::new(
        (0..case.vocab_size).map(|i| format!("t{i}")).collect(),
        case.blank,
        None,
    )
    .unwrap();
    // built directly: dyadic rows are deliberately not normalized
    let logits = FeatureMatrix {
        kind: FeatureKind::Logits,
        rows: case.rows.len(),
        cols: case.vocab_size,
        frame_seconds: 0.02,
        data: case.rows.concat(),
    };
    let got = ctc_viterbi_align(&logits, &vocab, &case.target);
    let want = oracles::ctc_brute_force(&case.rows, case.blank, &case.target.tokens);
    match (got, want) {
        (Err(Error::Infeasible { .. }), None) => Ok(()),
        (Ok(a), Some(b)) => {
            if (a.path_log_prob - b.score).abs() > 1e-9 {
                return Err(format!("score {} vs oracle {}", a.path_log_prob, b.score));
            }
            let path = path_from_spans(&a.token_spans, case.rows.len());
            if path != b.path {
                return Err(format!("path {path:?} vs oracle {:?}", b.path));
            }
            let pairs = |v: &[FrameSpan]| -> Vec<(usize, usize)> {
                v.iter().map(|s| (s.start_frame, s.end_frame)).collect()
            };
            let tokens = oracles::token_spans(&b.path, case.target.tokens.len());
            let words = oracles::group_hulls(&tokens, &case.target.word_index);
            let segments = oracles::group_hulls(&words, &case.target.segment_index);
            if pairs(&a.token_spans) != tokens
                || pairs(&a.word_spans) != words
                || pairs(&a.segment_spans) != segments
            {
                return Err("span hulls differ".into());
            }
            Ok(())
        }
        (got, want) => Err(format!("library {got:?} vs oracle {want:?}")),
    }
}

// ---------------------------------------------------------------- bitext

#[derive(Debug, Clone)]
pub struct BitextCase {
    pub src: Vec<Vec<f32>>,
    pub tgt: Vec<Vec<f32>>,
    pub penalty: f64,
}

/// Up to 6x6 sentences. Half the cases draw from a few axis vectors so
/// scores repeat and pooled pairs can cancel to zero.
pub fn bitext_case(rng: &mut StdRng) -> BitextCase {
    let n = rng.random_range(1..=6);
    let m = rng.random_range(1..=6);
    if rng.random_bool(0.5) {
        let dim = 4;
        let mut side = |k: usize| -> Vec<Vec<f32>> {
            (0..k)
                .map(|_| loop {
                    let v: Vec<f32> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
                    if v.iter().any(|x| *x != 0.0) {
                        break v;
                    }
                })
                .collect()
        };
        let (src, tgt) = (side(n), side(m));
        BitextCase {
            src,
            tgt,
            penalty: rng.random_range(0.0..1.0),
        }
    } else {
        let axes: [[f32; 3]; 5] = [
            [1.0, 0.0, 0.0],
            [0.0, 1.0, 0.0],
            [0.0, 0.0, 1.0],
            [-1.0, 0.0, 0.0],
            [0.0, -1.0, 0.0],
        ];
        let mut side = |k: usize| -> Vec<Vec<f32>> {
            (0..k).map(|_| axes[rng.random_range(0..axes.len())].to_vec()).collect()
        };
        let (src, tgt) = (side(n), side(m));
        BitextCase {
            src,
            tgt,
            penalty: [0.0, 0.25, 0.5, 1.0][rng.random_range(0..4)],
        }
    }
}

pub fn check_bitext(case: &BitextCase) -> Result<(), String> {
    let emb = |rows: &[Vec<f32>]| FeatureMatrix::from_rows(FeatureKind::Embeddings, 0.0, rows).unwrap();
    let ops = align_documents(&emb(&case.src), &emb(&case.tgt), case.penalty).map_err(|e| e.to_string())?;
    let (want_total, want_ops) = oracles::bitext_brute_force(&case.src, &case.tgt, case.penalty);
    let got_total = total_score(&ops);
    if (got_total - want_total).abs() > 1e-9 {
        return Err(format!("total {got_total} vs oracle {want_total}"));
    }
    let got_ops: Vec<oracles::OracleOp> = ops
        .iter()
        .map(|o| (o.kind, o.src_span.clone(), o.tgt_span.clone()))
        .collect();
    if got_ops != want_ops {
        return Err(format!("ops {got_ops:?} vs oracle {want_ops:?}"));
    }
    Ok(())
}

// ---------------------------------------------------------------- strings

pub fn random_string(rng: &mut StdRng, max_len: usize) -> String {
    const ALPHABET: &[char] = &['a', 'b', 'c', 'd', ' ', 'क', 'ख', 'ा', 'é', 'ß'];
    let n = rng.random_range(0..=max_len);
    (0..n).map(|_| ALPHABET[rng.random_range(0..ALPHABET.len())]).collect()
}

// ---------------------------------------------------------------- LLM structure

const LEXICON: &[&str] = &[
    "the", "cat", "sat", "on", "mat", "Hello", "world", "good", "morning", "यह", "घर", "अच्छा",
    "है", "नमस्ते", "river", "mango", "कल", "school", "ten", "बारिश",
];
const BEFORE: &[&str] = &["(", "\"", "«", "'"];
const AFTER: &[&str] = &[",", ".", "!", "?", ";", ":", "।", ")", "»", "..."];

fn random_words(rng: &mut StdRng) -> Vec<&'static str> {
    let n = rng.random_range(1..=12);
    (0..n).map(|_| LEXICON[rng.random_range(0..LEXICON.len())]).collect()
}

/// Joins words with punctuation attached at random and irregular spacing.
fn punctuate(rng: &mut StdRng, words: &[&str]) -> String {
    let mut out = String::new();
    for (i, w) in words.iter().enumerate() {
        if i > 0 {
            out.push_str(if rng.random_bool(0.1) { "  " } else { " " });
        }
        if rng.random_bool(0.15) {
            out.push_str(BEFORE[rng.random_range(0..BEFORE.len())]);
        }
        out.push_str(w);
        if rng.random_bool(0.4) {
            out.push_str(AFTER[rng.random_range(0..AFTER.len())]);
        }
    }
    if rng.random_bool(0.5) {
        out.push_str(AFTER[rng.random_range(0..3)]);
    }
    out
}

/// (input, output) where the output only adds punctuation and spacing.
pub fn valid_pair(rng: &mut StdRng) -> (String, String) {
    let words = random_words(rng);
    (words.join(" "), punctuate(rng, &words))
}

/// (input, output) where the output reorders, adds or removes one word.
pub fn mutated_pair(rng: &mut StdRng) -> (String, String) {
    let words = random_words(rng);
    let mut changed = words.clone();
    let distinct = (0..words.len().saturating_sub(1)).filter(|&i| words[i] != words[i + 1]);
    let swaps: Vec<usize> = distinct.collect();
    match rng.random_range(0..3) {
        0 if !swaps.is_empty() => {
            let i = swaps[rng.random_range(0..swaps.len())];
            changed.swap(i, i + 1);
        }
        1 => {
            changed.remove(rng.random_range(0..changed.len()));
        }
        _ => {
            let at = rng.random_range(0..=changed.len());
            changed.insert(at, LEXICON[rng.random_range(0..LEXICON.len())]);
        }
    }
    (words.join(" "), punctuate(rng, &changed))
}

// ---------------------------------------------------------------- features

pub fn random_matrix(rng: &mut StdRng) -> FeatureMatrix {
    let kind = [FeatureKind::Logits, FeatureKind::Embeddings, FeatureKind::VadProbs][rng.random_range(0..3)];
    let rows = rng.random_range(1..=40);
    let cols = if kind == FeatureKind::VadProbs { 1 } else { rng.random_range(1..=16) };
    let frame_seconds = if kind == FeatureKind::Embeddings {
        0.0
    } else {
        rng.random_range(0.001f32..0.1)
    };
    let data: Vec<f32> = match kind {
        FeatureKind::Logits => (0..rows)
            .flat_map(|_| {
                let raw: Vec<f32> = (0..cols).map(|_| rng.random_range(-10.0..10.0)).collect();
                log_softmax(&raw)
            })
            .collect(),
        FeatureKind::VadProbs => (0..rows).map(|_| rng.random::<f32>()).collect(),
        // arbitrary finite bit patterns, including subnormals and -0.0
        FeatureKind::Embeddings => (0..rows * cols)
            .map(|_| loop {
                let v = f32::from_bits(rng.random::<u32>());
                if v.is_finite() {
                    break v;
                }
            })
            .collect(),
    };
    FeatureMatrix::new(kind, rows, cols, frame_seconds, data).unwrap()
}

pub fn bits(m: &FeatureMatrix) -> Vec<u32> {
    m.data.iter().map(|v| v.to_bits()).collect()
}

// ---------------------------------------------------------------- sampling

pub fn ten_directions() -> Vec<Direction> {
    use LangCode::*;
    let mut out: Vec<Direction> = [Hin, Mar, Ben, Tam, Tel]
        .into_iter()
        .map(|l| Direction::new(Eng, l).unwrap())
        .collect();
    out.extend(
        [Guj, Kan, Mal, Pan, Urd]
            .into_iter()
            .map(|l| Direction::new(l, Eng).unwrap()),
    );
    out
}

/// 250 to 300 scored utterances of 5 to 20 s per direction, 20 per document,
/// groups interleaved so the input order mixes directions.
pub fn ten_language_manifest(rng: &mut StdRng) -> Manifest {
    let mut per_group: Vec<Vec<UtteranceRecord>> = Vec::new();
    for (g, direction) in ten_directions().into_iter().enumerate() {
        let count = rng.random_range(250..=300);
        let durations: Vec<f64> = (0..count)
            .map(|_| rng.random_range(5000..=20000) as f64 / 1000.0)
            .collect();
        let mut records = Vec::new();
        for (d, chunk) in durations.chunks(20).enumerate() {
            let audio = chunk.iter().sum::<f64>() + 1.0;
            let doc = DocumentRef {
                doc_id: format!("g{g}_d{d}"),
                audio_path: format!("audio/g{g}_d{d}.wav"),
                audio_seconds: audio,
                sample_rate_hz: 16_000,
            };
            let mut t = 0.5;
            for (k, dur) in chunk.iter().enumerate() {
                let start = (t * 1000.0f64).round() / 1000.0;
                let end = ((t + dur) * 1000.0f64).round() / 1000.0;
                records.push(UtteranceRecord {
                    doc: doc.clone(),
                    direction,
                    start_s: start,
                    end_s: end,
                    source_text: format!("source {g} {d} {k}"),
                    target_text: format!("target {g} {d} {k}"),
                    scores: Some(QualityScores::new(0.9, 0.95).unwrap()),
                    provenance: Provenance::Mined,
                });
                t = end;
            }
        }
        per_group.push(records);
    }
    let mut records = Vec::new();
    let longest = per_group.iter().map(Vec::len).max().unwrap();
    for k in 0..longest {
        for g in &per_group {
            if let Some(r) = g.get(k) {
                records.push(r.clone());
            }
        }
    }
    Manifest::new(None, records)
}
