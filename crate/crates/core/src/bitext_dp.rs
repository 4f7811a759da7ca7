//! Monotone sentence alignment between a source document and its translation
//! over the cosine similarity of sentence embeddings.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feature_io::{FeatureKind, FeatureMatrix};
use crate::quality::dot;

pub const DEFAULT_SKIP_PENALTY: f64 = 0.25;

/// Variants are listed in tie-break preference order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OpKind {
    OneOne,
    TwoOne,
    OneTwo,
    SkipSrc,
    SkipTgt,
}

impl OpKind {
    pub const ALL: [OpKind; 5] = [
        OpKind::OneOne,
        OpKind::TwoOne,
        OpKind::OneTwo,
        OpKind::SkipSrc,
        OpKind::SkipTgt,
    ];

    /// Sentences consumed on the (source, target) side.
    pub fn sizes(self) -> (usize, usize) {
        match self {
            OpKind::OneOne => (1, 1),
            OpKind::TwoOne => (2, 1),
            OpKind::OneTwo => (1, 2),
            OpKind::SkipSrc => (1, 0),
            OpKind::SkipTgt => (0, 1),
        }
    }

    pub fn is_skip(self) -> bool {
        matches!(self, OpKind::SkipSrc | OpKind::SkipTgt)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignOp {
    pub kind: OpKind,
    pub src_span: Range<usize>,
    pub tgt_span: Range<usize>,
    pub score: f64,
}

/// Scores for every op anchored at a prefix cell, precomputed from unit
/// embeddings.
pub struct OpScorer {
    src: Vec<Vec<f64>>,
    tgt: Vec<Vec<f64>>,
    skip_penalty: f64,
}

/// Mean of `raw`, scaled to unit length.
fn mean_unit(raw: &[Vec<f64>]) -> Option<Vec<f64>> {
    let d = raw[0].len();
    let mut m = vec![0.0; d];
    for r in raw {
        for (a, b) in m.iter_mut().zip(r) {
            *a += b;
        }
    }
    let n = dot(&m, &m).sqrt();
    (n > 0.0).then(|| m.into_iter().map(|x| x / n).collect())
}

impl OpScorer {
    pub fn new(src_emb: &FeatureMatrix, tgt_emb: &FeatureMatrix, skip_penalty: f64) -> Result<Self> {
        src_emb.expect_kind(FeatureKind::Embeddings)?;
        tgt_emb.expect_kind(FeatureKind::Embeddings)?;
        if src_emb.cols != tgt_emb.cols {
            return Err(Error::DimensionMismatch {
                left: src_emb.cols,
                right: tgt_emb.cols,
            });
        }
        if !(skip_penalty >= 0.0) {
            return Err(Error::Config(format!(
                "skip penalty must be non-negative, got {skip_penalty}"
            )));
        }
        Ok(OpScorer {
            src: raw_rows(src_emb, "source")?,
            tgt: raw_rows(tgt_emb, "target")?,
            skip_penalty,
        })
    }

    pub fn src_len(&self) -> usize {
        self.src.len()
    }

    pub fn tgt_len(&self) -> usize {
        self.tgt.len()
    }

    /// Score of `kind` consuming source `src` and target `tgt`; `None` when
    /// a pooled embedding degenerates to zero.
    pub fn score(&self, kind: OpKind, src: Range<usize>, tgt: Range<usize>) -> Option<f64> {
        if kind.is_skip() {
            return Some(-self.skip_penalty);
        }
        let s = mean_unit(&self.src[src])?;
        let t = mean_unit(&self.tgt[tgt])?;
        Some(dot(&s, &t).clamp(-1.0, 1.0))
    }
}

/// Raw rows in f64, rejecting zero rows.
fn raw_rows(m: &FeatureMatrix, what: &str) -> Result<Vec<Vec<f64>>> {
    m.iter_rows()
        .enumerate()
        .map(|(i, r)| {
            let row: Vec<f64> = r.iter().map(|&x| x as f64).collect();
            if dot(&row, &row) == 0.0 {
                return Err(Error::Degenerate(format!("{what} row {i} has zero norm")));
            }
            Ok(row)
        })
        .collect()
}

/// Maximum-score monotone decomposition of both documents into
/// 1-1, 2-1, 1-2 and skip operations. Ties prefer, at each step taken
/// backwards from the end, one_one > two_one > one_two > skip_src > skip_tgt.
pub fn align_documents(
    src_emb: &FeatureMatrix,
    tgt_emb: &FeatureMatrix,
    skip_penalty: f64,
) -> Result<Vec<AlignOp>> {
    let scorer = OpScorer::new(src_emb, tgt_emb, skip_penalty)?;
    Ok(align_with(&scorer))
}

pub fn align_with(scorer: &OpScorer) -> Vec<AlignOp> {
    let (n, m) = (scorer.src_len(), scorer.tgt_len());
    let w = m + 1;
    let mut best = vec![f64::NEG_INFINITY; (n + 1) * w];
    let mut choice: Vec<Option<(OpKind, f64)>> = vec![None; (n + 1) * w];
    best[0] = 0.0;
    for i in 0..=n {
        for j in 0..=m {
            if i == 0 && j == 0 {
                continue;
            }
            let mut cell = f64::NEG_INFINITY;
            let mut pick = None;
            for kind in OpKind::ALL {
                let (di, dj) = kind.sizes();
                if i < di || j < dj {
                    continue;
                }
                let prev = best[(i - di) * w + (j - dj)];
                if prev == f64::NEG_INFINITY {
                    continue;
                }
                let Some(s) = scorer.score(kind, i - di..i, j - dj..j) else {
                    continue;
                };
                let total = prev + s;
                if pick.is_none() || total > cell {
                    cell = total;
                    pick = Some((kind, s));
                }
            }
            best[i * w + j] = cell;
            choice[i * w + j] = pick;
        }
    }
    let mut ops = Vec::new();
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        let (kind, score) = choice[i * w + j].expect("skips make every cell reachable");
        let (di, dj) = kind.sizes();
        ops.push(AlignOp {
            kind,
            src_span: i - di..i,
            tgt_span: j - dj..j,
            score,
        });
        i -= di;
        j -= dj;
    }
    ops.reverse();
    ops
}

/// Sum of op scores, accumulated in order.
pub fn total_score(ops: &[AlignOp]) -> f64 {
    ops.iter().fold(0.0, |acc, op| acc + op.score)
}

/// Text pairs for the matched ops; merged sides are joined with single
/// spaces.
pub fn ops_to_pairs(
    ops: &[AlignOp],
    src_sents: &[String],
    tgt_sents: &[String],
) -> Vec<(String, String, f64)> {
    ops.iter()
        .filter(|op| !op.kind.is_skip())
        .map(|op| {
            (
                src_sents[op.src_span.clone()].join(" "),
                tgt_sents[op.tgt_span.clone()].join(" "),
                op.score,
            )
        })
        .collect()
}
