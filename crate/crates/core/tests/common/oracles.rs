//! Brute-force reference implementations used only by tests.

#![allow(dead_code)]

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::ops::Range;

use speechmine::bitext_dp::OpKind;

// ---------------------------------------------------------------- CTC

#[derive(Debug, Clone, PartialEq)]
pub struct CtcBest {
    pub score: f64,
    /// Trellis state per frame.
    pub path: Vec<usize>,
}

/// Enumerates every CTC state path for `tokens` over `rows`.
///
/// Among paths of equal score the winner ends in the trailing blank if it
/// can, and then, reading backwards, prefers stay < step < skip at each
/// frame.
pub fn ctc_brute_force(rows: &[Vec<f32>], blank: usize, tokens: &[usize]) -> Option<CtcBest> {
    let mut ext = vec![blank];
    for &t in tokens {
        ext.push(t);
        ext.push(blank);
    }
    let mut best: Option<(CtcBest, Vec<usize>)> = None;
    let mut path = Vec::with_capacity(rows.len());

    fn key(path: &[usize], n: usize) -> Vec<usize> {
        let mut k = vec![usize::from(*path.last().unwrap() != n - 1)];
        for t in (1..path.len()).rev() {
            k.push(path[t] - path[t - 1]);
        }
        k
    }

    fn walk(
        rows: &[Vec<f32>],
        ext: &[usize],
        path: &mut Vec<usize>,
        score: f64,
        best: &mut Option<(CtcBest, Vec<usize>)>,
    ) {
        let n = ext.len();
        let t = path.len();
        if t == rows.len() {
            let last = *path.last().unwrap();
            if last + 2 < n {
                return;
            }
            let k = key(path, n);
            let better = match best {
                None => true,
                Some((b, bk)) => match score.partial_cmp(&b.score).unwrap() {
                    Ordering::Greater => true,
                    Ordering::Less => false,
                    Ordering::Equal => k < *bk,
                },
            };
            if better {
                *best = Some((
                    CtcBest {
                        score,
                        path: path.clone(),
                    },
                    k,
                ));
            }
            return;
        }
        let next: Vec<usize> = match path.last() {
            None => vec![0, 1],
            Some(&s) => {
                let mut v = vec![s];
                if s + 1 < n {
                    v.push(s + 1);
                }
                if s + 2 < n && (s + 2) % 2 == 1 && ext[s + 2] != ext[s] {
                    v.push(s + 2);
                }
                v
            }
        };
        for s in next {
            let add = rows[t][ext[s]] as f64;
            let sc = if t == 0 { add } else { score + add };
            path.push(s);
            walk(rows, ext, path, sc, best);
            path.pop();
        }
    }

    walk(rows, &ext, &mut path, 0.0, &mut best);
    best.map(|(b, _)| b)
}

/// Inclusive (first, last) frame of each token state on `path`.
pub fn token_spans(path: &[usize], tokens: usize) -> Vec<(usize, usize)> {
    (0..tokens)
        .map(|k| {
            let frames: Vec<usize> = (0..path.len()).filter(|&t| path[t] == 2 * k + 1).collect();
            (frames[0], *frames.last().unwrap())
        })
        .collect()
}

/// Hull of spans sharing a group id.
pub fn group_hulls(spans: &[(usize, usize)], group: &[usize]) -> Vec<(usize, usize)> {
    let groups = group.iter().max().map_or(0, |g| g + 1);
    (0..groups)
        .map(|g| {
            let members: Vec<&(usize, usize)> =
                spans.iter().zip(group).filter(|(_, &x)| x == g).map(|(s, _)| s).collect();
            (
                members.iter().map(|s| s.0).min().unwrap(),
                members.iter().map(|s| s.1).max().unwrap(),
            )
        })
        .collect()
}

// ---------------------------------------------------------------- bitext

fn unit_mean(rows: &[Vec<f32>]) -> Option<Vec<f64>> {
    let mut m = vec![0.0f64; rows[0].len()];
    for r in rows {
        for (a, &b) in m.iter_mut().zip(r) {
            *a += b as f64;
        }
    }
    let norm = m.iter().map(|x| x * x).sum::<f64>().sqrt();
    (norm > 0.0).then(|| m.iter().map(|x| x / norm).collect())
}

fn pooled_cosine(a: &[Vec<f32>], b: &[Vec<f32>]) -> Option<f64> {
    let (u, v) = (unit_mean(a)?, unit_mean(b)?);
    Some(u.iter().zip(&v).map(|(x, y)| x * y).sum::<f64>().clamp(-1.0, 1.0))
}

pub type OracleOp = (OpKind, Range<usize>, Range<usize>);

fn rank(k: OpKind) -> usize {
    match k {
        OpKind::OneOne => 0,
        OpKind::TwoOne => 1,
        OpKind::OneTwo => 2,
        OpKind::SkipSrc => 3,
        OpKind::SkipTgt => 4,
    }
}

/// Every monotone decomposition into 1-1, 2-1, 1-2 and skip ops; the best
/// total wins, ties going to the smallest kind rank read from the end.
pub fn bitext_brute_force(src: &[Vec<f32>], tgt: &[Vec<f32>], penalty: f64) -> (f64, Vec<OracleOp>) {
    const KINDS: [(OpKind, usize, usize); 5] = [
        (OpKind::OneOne, 1, 1),
        (OpKind::TwoOne, 2, 1),
        (OpKind::OneTwo, 1, 2),
        (OpKind::SkipSrc, 1, 0),
        (OpKind::SkipTgt, 0, 1),
    ];
    let (n, m) = (src.len(), tgt.len());
    let op_score = |k: OpKind, i: usize, j: usize, a: usize, b: usize| -> Option<f64> {
        match k {
            OpKind::SkipSrc | OpKind::SkipTgt => Some(-penalty),
            _ => pooled_cosine(&src[i..i + a], &tgt[j..j + b]),
        }
    };

    struct Search<'a> {
        n: usize,
        m: usize,
        score: &'a dyn Fn(OpKind, usize, usize, usize, usize) -> Option<f64>,
        ops: Vec<(OpKind, usize, usize, usize, usize)>,
        best: Option<(f64, Vec<(OpKind, usize, usize, usize, usize)>)>,
    }

    fn reversed_ranks(ops: &[(OpKind, usize, usize, usize, usize)]) -> Vec<usize> {
        ops.iter().rev().map(|o| rank(o.0)).collect()
    }

    fn go(s: &mut Search, i: usize, j: usize, total: f64) {
        if i == s.n && j == s.m {
            let better = match &s.best {
                None => true,
                Some((b, ops)) => {
                    total > *b || (total == *b && reversed_ranks(&s.ops) < reversed_ranks(ops))
                }
            };
            if better {
                s.best = Some((total, s.ops.clone()));
            }
            return;
        }
        for (k, a, b) in KINDS {
            if i + a > s.n || j + b > s.m {
                continue;
            }
            let Some(sc) = (s.score)(k, i, j, a, b) else {
                continue;
            };
            s.ops.push((k, i, j, a, b));
            go(s, i + a, j + b, total + sc);
            s.ops.pop();
        }
    }

    let mut s = Search {
        n,
        m,
        score: &op_score,
        ops: Vec::new(),
        best: None,
    };
    go(&mut s, 0, 0, 0.0);
    let (total, ops) = s.best.expect("skip ops always complete a decomposition");
    (
        total,
        ops.into_iter()
            .map(|(k, i, j, a, b)| (k, i..i + a, j..j + b))
            .collect(),
    )
}

// ---------------------------------------------------------------- edit distance

/// Full-matrix Wagner-Fischer.
pub fn levenshtein_textbook(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let mut d = vec![vec![0usize; b.len() + 1]; a.len() + 1];
    for (i, row) in d.iter_mut().enumerate() {
        row[0] = i;
    }
    for j in 0..=b.len() {
        d[0][j] = j;
    }
    for i in 1..=a.len() {
        for j in 1..=b.len() {
            let cost = if a[i - 1] == b[j - 1] { 0 } else { 1 };
            d[i][j] = (d[i - 1][j] + 1).min(d[i][j - 1] + 1).min(d[i - 1][j - 1] + cost);
        }
    }
    d[a.len()][b.len()]
}

// ---------------------------------------------------------------- chrF++

fn ngrams(items: &[String], n: usize) -> BTreeMap<String, usize> {
    let mut out = BTreeMap::new();
    if items.len() >= n {
        for i in 0..=items.len() - n {
            *out.entry(items[i..i + n].join("\u{1}")).or_insert(0) += 1;
        }
    }
    out
}

fn words(s: &str) -> Vec<String> {
    let mut out = Vec::new();
    for tok in s.split_whitespace() {
        let cs: Vec<char> = tok.chars().collect();
        if cs.len() > 1 && cs[cs.len() - 1].is_ascii_punctuation() {
            out.push(cs[..cs.len() - 1].iter().collect());
            out.push(cs[cs.len() - 1].to_string());
        } else if cs.len() > 1 && cs[0].is_ascii_punctuation() {
            out.push(cs[0].to_string());
            out.push(cs[1..].iter().collect());
        } else {
            out.push(tok.to_string());
        }
    }
    out
}

/// Per-order (hyp, ref, match) counts over 6 char and 2 word orders.
pub fn chrf_counts(hyp: &str, reference: &str) -> Vec<(usize, usize, usize)> {
    let chars = |s: &str| -> Vec<String> {
        s.chars().filter(|c| !c.is_whitespace()).map(String::from).collect()
    };
    let mut units = vec![(chars(hyp), chars(reference), 6)];
    units.push((words(hyp), words(reference), 2));
    let mut out = Vec::new();
    for (h, r, orders) in units {
        for n in 1..=orders {
            let (hc, rc) = (ngrams(&h, n), ngrams(&r, n));
            let matched = hc.iter().map(|(g, c)| (*c).min(*rc.get(g).unwrap_or(&0))).sum();
            let rtotal: usize = rc.values().sum();
            let htotal = if rtotal == 0 { 0 } else { hc.values().sum() };
            out.push((htotal, rtotal, matched));
        }
    }
    out
}

/// Corpus chrF++ over summed counts: average P and R across orders where
/// both sides have n-grams, then F with beta 2.
pub fn chrf_oracle(pairs: &[(&str, &str)]) -> f64 {
    let mut total = vec![(0usize, 0usize, 0usize); 8];
    for (h, r) in pairs {
        for (t, c) in total.iter_mut().zip(chrf_counts(h, r)) {
            t.0 += c.0;
            t.1 += c.1;
            t.2 += c.2;
        }
    }
    let used: Vec<_> = total.iter().filter(|c| c.0 > 0 && c.1 > 0).collect();
    if used.is_empty() {
        return 0.0;
    }
    let k = used.len() as f64;
    let p = used.iter().map(|c| c.2 as f64 / c.0 as f64).sum::<f64>() / k;
    let r = used.iter().map(|c| c.2 as f64 / c.1 as f64).sum::<f64>() / k;
    if p + r == 0.0 {
        return 0.0;
    }
    100.0 * 5.0 * p * r / (4.0 * p + r)
}
