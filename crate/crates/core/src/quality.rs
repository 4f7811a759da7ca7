//! Quality scores: edit-similarity alignment score `tau` between a reference
//! transcript and an ASR hypothesis, and cosine mining score `sigma` between
//! sentence embeddings.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::feature_io::{FeatureKind, FeatureMatrix};
use crate::text_normalize::comparison_form;

/// Levenshtein distance over Unicode scalar values.
pub fn levenshtein_distance(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    levenshtein_chars(&a, &b)
}

pub fn levenshtein_chars<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    if a.len() < b.len() {
        return levenshtein_chars(b, a);
    }
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, ca) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, cb) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ca != cb);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// `1 - d / max(|r|, |h|)` over the comparison forms of both texts; 1.0 when
/// both are empty.
pub fn alignment_score_tau(reference: &str, hypothesis: &str) -> f64 {
    let r: Vec<char> = comparison_form(reference).chars().collect();
    let h: Vec<char> = comparison_form(hypothesis).chars().collect();
    let longest = r.len().max(h.len());
    if longest == 0 {
        return 1.0;
    }
    1.0 - levenshtein_chars(&r, &h) as f64 / longest as f64
}

fn norm<T: Copy + Into<f64>>(v: &[T]) -> f64 {
    v.iter().map(|&x| x.into() * x.into()).sum::<f64>().sqrt()
}

/// Cosine similarity clamped to [-1, 1].
pub fn cosine_sigma<T: Copy + Into<f64>>(u: &[T], v: &[T]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::DimensionMismatch {
            left: u.len(),
            right: v.len(),
        });
    }
    let (nu, nv) = (norm(u), norm(v));
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::Degenerate("zero-norm embedding".into()));
    }
    let dot: f64 = u.iter().zip(v).map(|(&a, &b)| a.into() * b.into()).sum();
    Ok((dot / (nu * nv)).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoredPair {
    pub source_idx: usize,
    pub target_idx: usize,
    pub sigma: f64,
}

/// Rows scaled to unit length, in f64.
pub(crate) fn unit_rows(m: &FeatureMatrix, what: &str) -> Result<Vec<Vec<f64>>> {
    m.iter_rows()
        .enumerate()
        .map(|(i, row)| {
            let n = norm(row);
            if n == 0.0 {
                return Err(Error::Degenerate(format!("{what} row {i} has zero norm")));
            }
            Ok(row.iter().map(|&x| x as f64 / n).collect())
        })
        .collect()
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

const SOURCE_BLOCK: usize = 32;
const TARGET_TILE: usize = 256;

/// Greedy best-match mining: each source row is paired with its most similar
/// target row (smallest index on ties).
pub fn mine_pairs(src_emb: &FeatureMatrix, tgt_emb: &FeatureMatrix) -> Result<Vec<ScoredPair>> {
    src_emb.expect_kind(FeatureKind::Embeddings)?;
    tgt_emb.expect_kind(FeatureKind::Embeddings)?;
    if src_emb.cols != tgt_emb.cols {
        return Err(Error::DimensionMismatch {
            left: src_emb.cols,
            right: tgt_emb.cols,
        });
    }
    let src = unit_rows(src_emb, "source")?;
    let tgt = unit_rows(tgt_emb, "target")?;
    let pairs = src
        .par_chunks(SOURCE_BLOCK)
        .enumerate()
        .flat_map_iter(|(block, rows)| {
            let mut best = vec![(f64::NEG_INFINITY, 0usize); rows.len()];
            for (tile_idx, tile) in tgt.chunks(TARGET_TILE).enumerate() {
                let base = tile_idx * TARGET_TILE;
                for (r, s) in rows.iter().enumerate() {
                    for (k, t) in tile.iter().enumerate() {
                        let sim = dot(s, t);
                        if sim > best[r].0 {
                            best[r] = (sim, base + k);
                        }
                    }
                }
            }
            best.into_iter().enumerate().map(move |(r, (sim, j))| ScoredPair {
                source_idx: block * SOURCE_BLOCK + r,
                target_idx: j,
                sigma: sim.clamp(-1.0, 1.0),
            })
        })
        .collect();
    Ok(pairs)
}

/// Equal-width histogram over [0, 1]. Bins are right-exclusive except the
/// last; values outside [0, 1] are clamped into the end bins.
pub fn score_histogram(sigmas: &[f64], bins: usize) -> Vec<u64> {
    let bins = bins.max(1);
    let mut counts = vec![0u64; bins];
    for &s in sigmas {
        let v = if s > 0.0 { s.min(1.0) } else { 0.0 };
        let idx = ((v * bins as f64).floor() as usize).min(bins - 1);
        counts[idx] += 1;
    }
    counts
}

/// CSV with header `bin_low,bin_high,count`.
pub fn histogram_csv(counts: &[u64]) -> String {
    let bins = counts.len();
    let mut out = String::from("bin_low,bin_high,count\n");
    for (i, c) in counts.iter().enumerate() {
        let lo = i as f64 / bins as f64;
        let hi = (i + 1) as f64 / bins as f64;
        out.push_str(&format!("{lo},{hi},{c}\n"));
    }
    out
}
