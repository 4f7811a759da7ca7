//! chrF++ with the sacreBLEU 2.3.1 defaults for signature
//! `nrefs:1|case:mixed|eff:yes|nc:6|nw:2|space:no`.

use std::collections::HashMap;
use std::hash::Hash;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus_model::LangCode;
use crate::error::{Error, Result};
use crate::text_normalize::is_punctuation;

/// How per-order precision and recall become one score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChrfAveraging {
    /// Average P and R over effective orders, then one F-beta (sacreBLEU).
    #[default]
    PrecisionRecall,
    /// Mean of per-order F-beta over effective orders.
    MeanF,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChrfConfig {
    pub char_order: usize,
    pub word_order: usize,
    pub beta: f64,
    pub effective_order: bool,
    pub lowercase: bool,
    pub whitespace: bool,
    pub averaging: ChrfAveraging,
    /// Pre-split words with [`tokenize_indic`] before scoring.
    pub indic_tokenize: Option<LangCode>,
}

impl Default for ChrfConfig {
    fn default() -> Self {
        ChrfConfig {
            char_order: 6,
            word_order: 2,
            beta: 2.0,
            effective_order: true,
            lowercase: false,
            whitespace: false,
            averaging: ChrfAveraging::PrecisionRecall,
            indic_tokenize: None,
        }
    }
}

impl ChrfConfig {
    pub fn signature(&self) -> String {
        format!(
            "nrefs:1|case:{}|eff:{}|nc:{}|nw:{}|space:{}",
            if self.lowercase { "lc" } else { "mixed" },
            if self.effective_order { "yes" } else { "no" },
            self.char_order,
            self.word_order,
            if self.whitespace { "yes" } else { "no" },
        )
    }

    pub fn orders(&self) -> usize {
        self.char_order + self.word_order
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChrfReport {
    pub corpus_score: f64,
    pub per_segment: Vec<f64>,
    pub signature: String,
}

/// (hyp total, ref total, clipped matches) for one order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct OrderStats {
    pub hyp: u64,
    pub reference: u64,
    pub matches: u64,
}

fn counts<T: Eq + Hash + Clone>(items: &[T], n: usize) -> HashMap<&[T], u64> {
    let mut m = HashMap::new();
    if n > 0 && items.len() >= n {
        for w in items.windows(n) {
            *m.entry(w).or_insert(0) += 1;
        }
    }
    m
}

fn order_stats<T: Eq + Hash + Clone>(hyp: &[T], reference: &[T], n: usize) -> OrderStats {
    let h = counts(hyp, n);
    let r = counts(reference, n);
    let matches = h
        .iter()
        .map(|(g, &c)| c.min(r.get(g).copied().unwrap_or(0)))
        .sum();
    // as in sacreBLEU, hypothesis n-grams are not counted for an order the
    // reference lacks; this matters once segments are summed
    OrderStats {
        hyp: if r.is_empty() { 0 } else { h.values().sum() },
        reference: r.values().sum(),
        matches,
    }
}

/// sacreBLEU word split: one leading or trailing ASCII punctuation mark is
/// detached from each whitespace token longer than one character.
pub fn chrf_words(s: &str) -> Vec<&str> {
    let mut out = Vec::new();
    for tok in s.split_whitespace() {
        let first = tok.chars().next();
        let last = tok.chars().next_back();
        let multi = tok.chars().nth(1).is_some();
        match (first, last) {
            (_, Some(c)) if multi && c.is_ascii_punctuation() => {
                let k = tok.len() - c.len_utf8();
                out.push(&tok[..k]);
                out.push(&tok[k..]);
            }
            (Some(c), _) if multi && c.is_ascii_punctuation() => {
                let k = c.len_utf8();
                out.push(&tok[..k]);
                out.push(&tok[k..]);
            }
            _ => out.push(tok),
        }
    }
    out
}

fn prepare(s: &str, cfg: &ChrfConfig) -> String {
    let s = if cfg.lowercase { s.to_lowercase() } else { s.to_string() };
    match cfg.indic_tokenize {
        Some(lang) => tokenize_indic(&s, lang).join(" "),
        None => s,
    }
}

/// Per-order statistics of one segment: char orders first, then word orders.
pub fn segment_stats(hyp: &str, reference: &str, cfg: &ChrfConfig) -> Vec<OrderStats> {
    let (hyp, reference) = (prepare(hyp, cfg), prepare(reference, cfg));
    let chars = |s: &str| -> Vec<char> {
        if cfg.whitespace {
            s.chars().collect()
        } else {
            s.chars().filter(|c| !c.is_whitespace()).collect()
        }
    };
    let (hc, rc) = (chars(&hyp), chars(&reference));
    let mut out: Vec<OrderStats> = (1..=cfg.char_order)
        .map(|n| order_stats(&hc, &rc, n))
        .collect();
    if cfg.word_order > 0 {
        let (hw, rw) = (chrf_words(&hyp), chrf_words(&reference));
        out.extend((1..=cfg.word_order).map(|n| order_stats(&hw, &rw, n)));
    }
    out
}

const EPS: f64 = 1e-16;

/// Score in [0, 100] from summed per-order statistics.
pub fn score_from_stats(stats: &[OrderStats], cfg: &ChrfConfig) -> f64 {
    let factor = cfg.beta * cfg.beta;
    let f_beta = |p: f64, r: f64| {
        let denom = factor * p + r;
        if denom > 0.0 {
            (1.0 + factor) * p * r / denom
        } else {
            0.0
        }
    };
    let mut effective = 0usize;
    let (mut sum_p, mut sum_r, mut sum_f) = (0.0, 0.0, 0.0);
    for s in stats {
        let p = if s.hyp > 0 { s.matches as f64 / s.hyp as f64 } else { EPS };
        let r = if s.reference > 0 {
            s.matches as f64 / s.reference as f64
        } else {
            EPS
        };
        let counted = !cfg.effective_order || (s.hyp > 0 && s.reference > 0);
        if counted {
            effective += 1;
            sum_p += p;
            sum_r += r;
            sum_f += f_beta(p, r);
        }
    }
    if effective == 0 {
        return 0.0;
    }
    let k = effective as f64;
    let score = match cfg.averaging {
        ChrfAveraging::PrecisionRecall => f_beta(sum_p / k, sum_r / k),
        ChrfAveraging::MeanF => sum_f / k,
    };
    100.0 * score
}

pub fn chrf_pp(hypotheses: &[String], references: &[String], cfg: &ChrfConfig) -> Result<ChrfReport> {
    if references.is_empty() {
        return Err(Error::Precondition("empty reference set".into()));
    }
    if hypotheses.len() != references.len() {
        return Err(Error::CountMismatch {
            expected: references.len(),
            actual: hypotheses.len(),
        });
    }
    let seg: Vec<Vec<OrderStats>> = hypotheses
        .par_iter()
        .zip(references)
        .map(|(h, r)| segment_stats(h, r, cfg))
        .collect();
    let mut total = vec![OrderStats::default(); cfg.orders()];
    for s in &seg {
        for (t, o) in total.iter_mut().zip(s) {
            t.hyp += o.hyp;
            t.reference += o.reference;
            t.matches += o.matches;
        }
    }
    Ok(ChrfReport {
        corpus_score: score_from_stats(&total, cfg),
        per_segment: seg.iter().map(|s| score_from_stats(s, cfg)).collect(),
        signature: cfg.signature(),
    })
}

/// Whitespace split with leading and trailing punctuation (ASCII and
/// Unicode, so `।`, `॥` and `۔` included) detached one mark per token.
pub fn tokenize_indic(text: &str, _lang: LangCode) -> Vec<String> {
    let mut out = Vec::new();
    for tok in text.split_whitespace() {
        let chars: Vec<char> = tok.chars().collect();
        let lead = chars.iter().take_while(|c| is_punctuation(**c)).count();
        if lead == chars.len() {
            out.extend(chars.iter().map(|c| c.to_string()));
            continue;
        }
        let trail = chars.iter().rev().take_while(|c| is_punctuation(**c)).count();
        out.extend(chars[..lead].iter().map(|c| c.to_string()));
        out.push(chars[lead..chars.len() - trail].iter().collect());
        out.extend(chars[chars.len() - trail..].iter().map(|c| c.to_string()));
    }
    out
}
