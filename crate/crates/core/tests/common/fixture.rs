//! Synthetic three-document corpus with known ground truth.
//!
//! Each spoken character gets two frames where it has probability 0.9,
//! followed by one blank frame; words are separated by the delimiter token
//! emitted the same way. Sentences are separated by 15 silent frames.
//! Target embeddings are `cos(t) e_j + sin(t) e_last`, so sigma of a 1-1
//! pair is `cos(t)`. A spoken form that differs from the transcript in `k`
//! of `n` characters gives tau `1 - k/n`.

#![allow(dead_code)]

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use speechmine::feature_io::{write_features, FeatureKind, FeatureMatrix};

pub const FRAME_SECONDS: f32 = 0.02;
pub const DIM: usize = 16;
const SILENCE_FRAMES: usize = 15;
const EDGE_FRAMES: usize = 10;

pub struct Sentence {
    pub text: &'static str,
    pub spoken: &'static str,
    pub translation: &'static str,
    pub cos: f64,
}

pub struct Doc {
    pub id: &'static str,
    pub src: &'static str,
    pub tgt: &'static str,
    pub sentences: Vec<Sentence>,
}

pub struct Expected {
    pub doc_id: &'static str,
    /// Sentence text as segmented: terminal punctuation removed.
    pub source_text: &'static str,
    pub sigma: f64,
    pub tau: f64,
    pub kept: bool,
}

fn s(text: &'static str, spoken: &'static str, translation: &'static str, cos: f64) -> Sentence {
    Sentence {
        text,
        spoken,
        translation,
        cos,
    }
}

pub fn docs() -> Vec<Doc> {
    vec![
        Doc {
            id: "doc_a",
            src: "eng",
            tgt: "hin",
            sentences: vec![
                s("Hello world.", "hello world", "नमस्ते दुनिया।", 0.9),
                s("Good morning.", "good morning", "सुप्रभात।", 0.85),
                s("See you soon.", "see you soon", "फिर मिलेंगे।", 0.95),
            ],
        },
        Doc {
            id: "doc_b",
            src: "eng",
            tgt: "hin",
            sentences: vec![
                s("Thank you.", "thank you", "धन्यवाद।", 0.5),
                s("Hello.", "hallo", "नमस्ते।", 0.8),
                s("Welcome home.", "welcome home", "घर में स्वागत है।", 0.7),
            ],
        },
        Doc {
            id: "doc_c",
            src: "hin",
            tgt: "eng",
            sentences: vec![
                s("सब घर।", "सच दर", "All homes.", 0.9),
                s("वह अच्छा है।", "वह अच्छा है", "He is good.", 0.75),
            ],
        },
    ]
}

fn comparison(text: &str) -> Vec<char> {
    text.to_lowercase()
        .chars()
        .filter(|c| !matches!(c, '.' | '।' | ',' | '!' | '?'))
        .collect()
}

/// Hamming count is the edit distance here: spoken forms substitute
/// characters only.
fn tau(text: &str, spoken: &str) -> f64 {
    let a = comparison(text);
    let b: Vec<char> = spoken.chars().collect();
    assert_eq!(a.len(), b.len(), "fixture spoken form must keep length");
    let k = a.iter().zip(&b).filter(|(x, y)| x != y).count();
    1.0 - k as f64 / a.len() as f64
}

pub fn expected() -> Vec<Expected> {
    let mut out = Vec::new();
    for d in docs() {
        for s in &d.sentences {
            let t = tau(s.text, s.spoken);
            out.push(Expected {
                doc_id: d.id,
                source_text: s.text.trim_end_matches(['.', '।']),
                sigma: s.cos,
                tau: t,
                kept: s.cos >= 0.6 && t >= 0.8,
            });
        }
    }
    out
}

pub fn vocab_tokens() -> Vec<String> {
    let mut chars = BTreeSet::new();
    for d in docs() {
        for s in &d.sentences {
            chars.extend(s.spoken.chars().filter(|c| *c != ' '));
            chars.extend(comparison(s.text).into_iter().filter(|c| *c != ' '));
        }
    }
    let mut tokens = vec!["<b>".to_string(), "|".to_string()];
    tokens.extend(chars.into_iter().map(String::from));
    tokens
}

fn row(v: usize, hot: usize, p: f64) -> Vec<f32> {
    let rest = ((1.0 - p) / (v - 1) as f64).ln() as f32;
    let mut r = vec![rest; v];
    r[hot] = p.ln() as f32;
    r
}

pub struct Layout {
    pub root: PathBuf,
    pub docs_dir: PathBuf,
    pub features_dir: PathBuf,
    pub work_dir: PathBuf,
}

impl Layout {
    pub fn new(root: &Path) -> Self {
        Layout {
            root: root.to_path_buf(),
            docs_dir: root.join("docs"),
            features_dir: root.join("features"),
            work_dir: root.join("work"),
        }
    }
}

/// Writes descriptors, vocab and all feature files under `root`.
pub fn build(root: &Path) -> Layout {
    let lay = Layout::new(root);
    fs::create_dir_all(&lay.docs_dir).unwrap();
    fs::create_dir_all(&lay.features_dir).unwrap();
    let tokens = vocab_tokens();
    let v = tokens.len();
    let id_of = |c: char| tokens.iter().position(|t| *t == c.to_string()).unwrap();
    fs::write(
        lay.features_dir.join("vocab.json"),
        serde_json::json!({ "tokens": tokens, "blank_index": 0 }).to_string(),
    )
    .unwrap();

    for d in docs() {
        let mut logits: Vec<Vec<f32>> = Vec::new();
        let mut vad: Vec<Vec<f32>> = Vec::new();
        let silence = |logits: &mut Vec<Vec<f32>>, vad: &mut Vec<Vec<f32>>, n: usize| {
            for _ in 0..n {
                logits.push(row(v, 0, 0.9));
                vad.push(vec![0.05]);
            }
        };
        silence(&mut logits, &mut vad, EDGE_FRAMES);
        for (i, s) in d.sentences.iter().enumerate() {
            if i > 0 {
                silence(&mut logits, &mut vad, SILENCE_FRAMES);
            }
            for (k, word) in s.spoken.split(' ').enumerate() {
                let mut ids: Vec<usize> = word.chars().map(id_of).collect();
                if k > 0 {
                    ids.insert(0, 1);
                }
                for id in ids {
                    for _ in 0..2 {
                        logits.push(row(v, id, 0.9));
                        vad.push(vec![0.9]);
                    }
                    logits.push(row(v, 0, 0.9));
                    vad.push(vec![0.9]);
                }
            }
        }
        silence(&mut logits, &mut vad, EDGE_FRAMES);
        let frames = logits.len();
        write_features(
            &FeatureMatrix::from_rows(FeatureKind::Logits, FRAME_SECONDS, &logits).unwrap(),
            lay.features_dir.join(format!("{}.logits.baf", d.id)),
        )
        .unwrap();
        write_features(
            &FeatureMatrix::from_rows(FeatureKind::VadProbs, FRAME_SECONDS, &vad).unwrap(),
            lay.features_dir.join(format!("{}.vad.baf", d.id)),
        )
        .unwrap();

        let n = d.sentences.len();
        let src: Vec<Vec<f32>> = (0..n)
            .map(|j| {
                let mut e = vec![0.0f32; DIM];
                e[j] = 1.0;
                e
            })
            .collect();
        let tgt: Vec<Vec<f32>> = d
            .sentences
            .iter()
            .enumerate()
            .map(|(j, s)| {
                let mut e = vec![0.0f32; DIM];
                e[j] = s.cos as f32;
                e[DIM - 1] = (1.0 - s.cos * s.cos).sqrt() as f32;
                e
            })
            .collect();
        for (tag, rows) in [("src_emb", src), ("tgt_emb", tgt)] {
            write_features(
                &FeatureMatrix::from_rows(FeatureKind::Embeddings, 0.0, &rows).unwrap(),
                lay.features_dir.join(format!("{}.{tag}.baf", d.id)),
            )
            .unwrap();
        }

        let transcript: Vec<&str> = d.sentences.iter().map(|s| s.text).collect();
        let translation: Vec<&str> = d.sentences.iter().map(|s| s.translation).collect();
        let desc = serde_json::json!({
            "doc_id": d.id,
            "audio_path": format!("audio/{}.wav", d.id),
            "audio_seconds": frames as f64 * FRAME_SECONDS as f64,
            "sample_rate_hz": 16000,
            "src_lang": d.src,
            "tgt_lang": d.tgt,
            "transcript": transcript.join(" "),
            "translation": translation.join(" "),
        });
        fs::write(lay.docs_dir.join(format!("{}.json", d.id)), desc.to_string()).unwrap();
    }
    lay
}

/// Pipeline config text for the layout, relative to `root`.
pub fn config_toml() -> &'static str {
    "input_dir = \"docs\"\nfeatures_dir = \"features\"\nwork_dir = \"work\"\n\n[sample]\nseed = 42\n"
}
