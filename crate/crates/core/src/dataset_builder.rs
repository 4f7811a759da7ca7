//! Corpus assembly: score filtering, seeded test-set sampling and
//! statistics tables.
//!
//! Test sampling shuffles each (src_lang, tgt_lang) group with SplitMix64
//! and a Fisher-Yates pass:
//!
//! ```text
//! state  = seed ^ fnv1a64("<src>-<tgt>")
//! next() : state += 0x9E3779B97F4A7C15
//!          z = state
//!          z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
//!          z = (z ^ (z >> 27)) * 0x94D049BB133111EB
//!          return z ^ (z >> 31)
//! for i in (1..n).rev(): j = (next() as u128 * (i + 1) as u128) >> 64; swap(i, j)
//! ```
//!
//! All arithmetic wraps modulo 2^64. Records are then taken in shuffled
//! order until the cumulative duration (in whole microseconds) reaches the
//! target; the record that crosses the target is included.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus_model::{
    seconds_to_micros, Direction, LangCode, Manifest, Provenance, Split, UtteranceRecord,
};
use crate::error::{Error, Result};

pub const DEFAULT_SIGMA_MIN: f64 = 0.6;
pub const DEFAULT_TAU_MIN: f64 = 0.8;
pub const DEFAULT_TARGET_SECONDS: f64 = 1200.0;

/// Per-language thresholds; a missing field falls back to the default.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThresholdOverride {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma_min: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau_min: Option<f64>,
}

/// Overrides are keyed by the non-English language of a record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterPolicy {
    pub sigma_min: f64,
    pub tau_min: f64,
    #[serde(rename = "overrides")]
    pub per_language_overrides: BTreeMap<LangCode, ThresholdOverride>,
}

impl Default for FilterPolicy {
    fn default() -> Self {
        FilterPolicy {
            sigma_min: DEFAULT_SIGMA_MIN,
            tau_min: DEFAULT_TAU_MIN,
            per_language_overrides: BTreeMap::new(),
        }
    }
}

fn check_threshold(name: &str, v: f64, lo: f64) -> Result<()> {
    if !(lo..=1.0).contains(&v) {
        return Err(Error::Config(format!("{name} = {v} is outside [{lo}, 1]")));
    }
    Ok(())
}

impl FilterPolicy {
    pub fn validate(&self) -> Result<()> {
        check_threshold("sigma_min", self.sigma_min, -1.0)?;
        check_threshold("tau_min", self.tau_min, 0.0)?;
        for (lang, o) in &self.per_language_overrides {
            if let Some(s) = o.sigma_min {
                check_threshold(&format!("overrides.{lang}.sigma_min"), s, -1.0)?;
            }
            if let Some(t) = o.tau_min {
                check_threshold(&format!("overrides.{lang}.tau_min"), t, 0.0)?;
            }
        }
        Ok(())
    }

    /// Effective (sigma_min, tau_min) for a direction.
    pub fn thresholds(&self, direction: Direction) -> (f64, f64) {
        let o = self
            .per_language_overrides
            .get(&direction.indic())
            .copied()
            .unwrap_or_default();
        (
            o.sigma_min.unwrap_or(self.sigma_min),
            o.tau_min.unwrap_or(self.tau_min),
        )
    }

    /// Parses a TOML policy:
    ///
    /// ```toml
    /// sigma_min = 0.6
    /// tau_min = 0.8
    /// [overrides.hin]
    /// sigma_min = 0.7
    /// ```
    pub fn from_toml(s: &str) -> Result<Self> {
        let p: FilterPolicy = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        p.validate()?;
        Ok(p)
    }

    /// Reads overrides from a TOML file on top of `self`. Top-level
    /// thresholds in the file replace the current ones only when present.
    pub fn with_overrides_file(mut self, path: impl AsRef<Path>) -> Result<Self> {
        #[derive(Deserialize)]
        #[serde(deny_unknown_fields)]
        struct File {
            sigma_min: Option<f64>,
            tau_min: Option<f64>,
            #[serde(default)]
            overrides: BTreeMap<LangCode, ThresholdOverride>,
        }
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let f: File = toml::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        if let Some(s) = f.sigma_min {
            self.sigma_min = s;
        }
        if let Some(t) = f.tau_min {
            self.tau_min = t;
        }
        self.per_language_overrides.extend(f.overrides);
        self.validate()?;
        Ok(self)
    }

    /// Whether a record passes. Records without scores pass unless mined.
    pub fn accepts(&self, r: &UtteranceRecord) -> Result<bool> {
        match r.scores {
            None if r.provenance == Provenance::Mined => Err(Error::validation(
                "sigma",
                format!("mined record {} [{}, {}] has no scores", r.doc.doc_id, r.start_s, r.end_s),
            )),
            None => Ok(true),
            Some(s) => {
                let (sigma_min, tau_min) = self.thresholds(r.direction);
                Ok(s.sigma >= sigma_min && s.tau >= tau_min)
            }
        }
    }
}

/// Splits `m` into (kept, dropped), preserving order within each.
pub fn filter_manifest(m: &Manifest, policy: &FilterPolicy) -> Result<(Manifest, Manifest)> {
    policy.validate()?;
    let mut kept = Manifest::new(m.split, Vec::new());
    let mut dropped = Manifest::new(m.split, Vec::new());
    for r in &m.records {
        if policy.accepts(r)? {
            kept.records.push(r.clone());
        } else {
            dropped.records.push(r.clone());
        }
    }
    Ok((kept, dropped))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SampleSpec {
    pub target_seconds: f64,
    pub seed: u64,
}

impl Default for SampleSpec {
    fn default() -> Self {
        SampleSpec {
            target_seconds: DEFAULT_TARGET_SECONDS,
            seed: 0,
        }
    }
}

impl SampleSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.target_seconds > 0.0 && self.target_seconds.is_finite()) {
            return Err(Error::Config(format!(
                "target_seconds must be positive, got {}",
                self.target_seconds
            )));
        }
        Ok(())
    }
}

pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        SplitMix64 { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform-ish index in `0..n` by multiply-shift.
    pub fn below(&mut self, n: u64) -> u64 {
        ((self.next_u64() as u128 * n as u128) >> 64) as u64
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i as u64 + 1) as usize;
            items.swap(i, j);
        }
    }
}

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xCBF2_9CE4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    h
}

pub fn group_seed(seed: u64, direction: Direction) -> u64 {
    seed ^ fnv1a64(direction.to_string().as_bytes())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupSample {
    pub direction: String,
    pub records: usize,
    pub total_micros: i64,
    pub test_records: usize,
    pub test_micros: i64,
    /// The whole group went to test because it could not exceed the target.
    pub saturated: bool,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct SampleReport {
    pub groups: Vec<GroupSample>,
}

impl SampleReport {
    pub fn warnings(&self) -> Vec<String> {
        self.groups
            .iter()
            .filter(|g| g.saturated)
            .map(|g| {
                format!(
                    "group {}: total {:.6} s does not exceed the target; all {} records go to test",
                    g.direction,
                    g.total_micros as f64 / 1e6,
                    g.records
                )
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleOutcome {
    pub test: Manifest,
    pub train: Manifest,
    pub report: SampleReport,
}

/// Seeded per-direction test sampling. Both outputs keep the input order.
pub fn sample_test_set(m: &Manifest, spec: &SampleSpec) -> Result<SampleOutcome> {
    spec.validate()?;
    let target = seconds_to_micros(spec.target_seconds);
    let mut groups: BTreeMap<Direction, Vec<usize>> = BTreeMap::new();
    for (i, r) in m.records.iter().enumerate() {
        groups.entry(r.direction).or_default().push(i);
    }
    let mut in_test = vec![false; m.records.len()];
    let mut report = SampleReport::default();
    for (direction, idx) in &groups {
        let total: i64 = idx.iter().map(|&i| m.records[i].duration_micros()).sum();
        let mut order = idx.clone();
        SplitMix64::new(group_seed(spec.seed, *direction)).shuffle(&mut order);
        let mut acc = 0i64;
        let mut taken = 0usize;
        for &i in &order {
            if acc >= target {
                break;
            }
            acc += m.records[i].duration_micros();
            in_test[i] = true;
            taken += 1;
        }
        report.groups.push(GroupSample {
            direction: direction.to_string(),
            records: idx.len(),
            total_micros: total,
            test_records: taken,
            test_micros: acc,
            saturated: total <= target,
        });
    }
    let mut test = Manifest::new(Some(Split::Test), Vec::new());
    let mut train = Manifest::new(Some(Split::Train), Vec::new());
    for (r, t) in m.records.iter().zip(&in_test) {
        if *t {
            test.records.push(r.clone());
        } else {
            train.records.push(r.clone());
        }
    }
    Ok(SampleOutcome {
        test,
        train,
        report,
    })
}

/// Micros to hundredths of an hour, rounded half to even.
pub fn centihours_half_even(micros: i64) -> i64 {
    const D: i64 = 36_000_000;
    let (q, r) = (micros.div_euclid(D), micros.rem_euclid(D));
    match (2 * r).cmp(&D) {
        std::cmp::Ordering::Greater => q + 1,
        std::cmp::Ordering::Equal if q % 2 != 0 => q + 1,
        _ => q,
    }
}

pub fn format_centihours(c: i64) -> String {
    let sign = if c < 0 { "-" } else { "" };
    format!("{sign}{}.{:02}", c.abs() / 100, c.abs() % 100)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct StatsKey {
    pub language: LangCode,
    pub direction: &'static str,
    pub provenance: Provenance,
    pub split: Option<Split>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StatsRow {
    pub key: StatsKey,
    pub micros: i64,
    /// Rounded hours times 100.
    pub centihours: i64,
    pub utterances: usize,
}

/// One row per (language, direction, provenance, split). Per-language and
/// grand totals sum the rounded row values so the printed columns add up.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct StatsTable {
    pub rows: Vec<StatsRow>,
}

pub const STATS_HEADER: [&str; 6] = [
    "language",
    "direction",
    "provenance",
    "split",
    "hours",
    "utterances",
];

impl StatsTable {
    /// (centihours, utterances) over all rows.
    pub fn total(&self) -> (i64, usize) {
        self.rows
            .iter()
            .fold((0, 0), |(h, n), r| (h + r.centihours, n + r.utterances))
    }

    pub fn language_totals(&self) -> BTreeMap<LangCode, (i64, usize)> {
        let mut out: BTreeMap<LangCode, (i64, usize)> = BTreeMap::new();
        for r in &self.rows {
            let e = out.entry(r.key.language).or_default();
            e.0 += r.centihours;
            e.1 += r.utterances;
        }
        out
    }

    fn lines(&self) -> Vec<[String; 6]> {
        let mut out = Vec::new();
        for r in &self.rows {
            out.push([
                r.key.language.to_string(),
                r.key.direction.to_string(),
                r.key.provenance.as_str().to_string(),
                r.key.split.map_or("none", Split::as_str).to_string(),
                format_centihours(r.centihours),
                r.utterances.to_string(),
            ]);
        }
        for (lang, (h, n)) in self.language_totals() {
            out.push([
                lang.to_string(),
                "all".into(),
                "all".into(),
                "all".into(),
                format_centihours(h),
                n.to_string(),
            ]);
        }
        let (h, n) = self.total();
        out.push([
            "total".into(),
            "all".into(),
            "all".into(),
            "all".into(),
            format_centihours(h),
            n.to_string(),
        ]);
        out
    }

    pub fn to_csv(&self) -> String {
        let mut s = STATS_HEADER.join(",");
        s.push('\n');
        for l in self.lines() {
            s.push_str(&l.join(","));
            s.push('\n');
        }
        s
    }

    /// Space-padded columns; numbers are right-aligned.
    pub fn to_text(&self) -> String {
        let lines = self.lines();
        let mut widths = STATS_HEADER.map(str::len);
        for l in &lines {
            for (w, c) in widths.iter_mut().zip(l) {
                *w = (*w).max(c.chars().count());
            }
        }
        let mut s = String::new();
        let header = STATS_HEADER.map(String::from);
        for l in std::iter::once(&header).chain(&lines) {
            let cells: Vec<String> = l
                .iter()
                .zip(widths)
                .enumerate()
                .map(|(i, (c, w))| {
                    if i >= 4 {
                        format!("{c:>w$}")
                    } else {
                        format!("{c:<w$}")
                    }
                })
                .collect();
            let _ = writeln!(s, "{}", cells.join("  "));
        }
        s
    }
}

pub fn stats_report(manifests: &[Manifest]) -> StatsTable {
    let mut acc: BTreeMap<StatsKey, (i64, usize)> = BTreeMap::new();
    for m in manifests {
        for r in &m.records {
            let key = StatsKey {
                language: r.direction.indic(),
                direction: r.direction.label(),
                provenance: r.provenance,
                split: m.split,
            };
            let e = acc.entry(key).or_default();
            e.0 += r.duration_micros();
            e.1 += 1;
        }
    }
    StatsTable {
        rows: acc
            .into_iter()
            .map(|(key, (micros, utterances))| StatsRow {
                key,
                micros,
                centihours: centihours_half_even(micros),
                utterances,
            })
            .collect(),
    }
}
