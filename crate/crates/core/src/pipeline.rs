//! Stage driver over a directory layout.
//!
//! Inputs:
//!
//! ```text
//! <input_dir>/<doc_id>.json        document descriptor (see DocDescriptor)
//! <features_dir>/vocab.json        CTC vocabulary; <doc_id>.vocab.json overrides it
//! <features_dir>/<doc_id>.logits.baf
//! <features_dir>/<doc_id>.vad.baf      (only when VAD is enabled)
//! <features_dir>/<doc_id>.src_emb.baf  one row per line of normalize/<doc_id>.src.txt
//! <features_dir>/<doc_id>.tgt_emb.baf  one row per line of normalize/<doc_id>.tgt.txt
//! ```
//!
//! Outputs under `<work_dir>`: `<stage>/<doc_id>.*` and `<stage>.status.json`
//! for the per-document stages, then `mined.jsonl`, `kept.jsonl`,
//! `dropped.jsonl`, `test.jsonl`, `train.jsonl`, `sample_report.json`,
//! `stats.csv`, `stats.txt` and `chrf.json`. `progress.jsonl` is appended to
//! on every run.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::io::Write as _;
use std::ops::Range;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::bitext_dp::{align_documents, DEFAULT_SKIP_PENALTY};
use crate::corpus_model::{
    read_manifest, write_manifest_to, Direction, DocumentRef, LangCode, Manifest, Provenance,
    QualityScores, Split, UtteranceRecord,
};
use crate::ctc_aligner::{
    alignment_text, assign_to_chunks, ctc_viterbi_align, frame_span_seconds, greedy_decode,
    offset_alignment, tokenize_sentences, FrameSpan,
};
use crate::dataset_builder::{
    filter_manifest, sample_test_set, stats_report, FilterPolicy, SampleSpec,
};
use crate::error::{Error, Result};
use crate::feature_io::{feature_path, read_features, read_vocab, FeatureKind, FeatureMatrix, TokenVocab};
use crate::llm_client::{LlmClient, LlmMode, ServiceConfig};
use crate::metrics::{chrf_pp, ChrfAveraging, ChrfConfig};
use crate::quality::{alignment_score_tau, mine_pairs};
use crate::text_normalize::{clean_text_with, segment_sentences, NoisePatterns, DEFAULT_SENTINEL};
use crate::vad_chunker::{detect_speech, slice_logits, SpeechSpan, VadConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Stage {
    Normalize,
    Chunk,
    Align,
    Score,
    Mine,
    Filter,
    Sample,
    Stats,
    Chrf,
}

impl Stage {
    pub const ALL: [Stage; 9] = [
        Stage::Normalize,
        Stage::Chunk,
        Stage::Align,
        Stage::Score,
        Stage::Mine,
        Stage::Filter,
        Stage::Sample,
        Stage::Stats,
        Stage::Chrf,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Normalize => "normalize",
            Stage::Chunk => "chunk",
            Stage::Align => "align",
            Stage::Score => "score",
            Stage::Mine => "mine",
            Stage::Filter => "filter",
            Stage::Sample => "sample",
            Stage::Stats => "stats",
            Stage::Chrf => "chrf",
        }
    }

    pub fn is_per_doc(self) -> bool {
        matches!(
            self,
            Stage::Normalize | Stage::Chunk | Stage::Align | Stage::Score | Stage::Mine
        )
    }

    fn previous(self) -> Option<Stage> {
        match self {
            Stage::Chunk => Some(Stage::Normalize),
            Stage::Align => Some(Stage::Chunk),
            Stage::Score => Some(Stage::Align),
            Stage::Mine => Some(Stage::Score),
            _ => None,
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|st| st.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown stage {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MiningMode {
    Greedy,
    #[default]
    Dp,
}

impl FromStr for MiningMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "greedy" => Ok(MiningMode::Greedy),
            "dp" => Ok(MiningMode::Dp),
            _ => Err(Error::Config(format!("unknown mining mode {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LlmModeName {
    Service,
    #[default]
    Fallback,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChrfFiles {
    pub hyp: PathBuf,
    pub reference: PathBuf,
    #[serde(default)]
    pub averaging: ChrfAveraging,
}

/// TOML-backed pipeline settings. Relative paths in a loaded file are taken
/// relative to the file's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub input_dir: PathBuf,
    pub features_dir: PathBuf,
    pub work_dir: PathBuf,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub noise_patterns: Option<PathBuf>,
    pub llm_mode: LlmModeName,
    pub mining_mode: MiningMode,
    pub skip_penalty: f64,
    pub vad_enabled: bool,
    pub vad: VadConfig,
    pub filter: FilterPolicy,
    pub sample: SampleSpec,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub chrf: Option<ChrfFiles>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            input_dir: "docs".into(),
            features_dir: "features".into(),
            work_dir: "work".into(),
            noise_patterns: None,
            llm_mode: LlmModeName::Fallback,
            mining_mode: MiningMode::Dp,
            skip_penalty: DEFAULT_SKIP_PENALTY,
            vad_enabled: true,
            vad: VadConfig::default(),
            filter: FilterPolicy::default(),
            sample: SampleSpec::default(),
            chrf: None,
        }
    }
}

fn must_exist(p: &Path) -> Result<()> {
    fs::metadata(p).map(|_| ()).map_err(|e| Error::io(p, e))
}

impl PipelineConfig {
    pub fn from_toml(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        let rebase = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        rebase(&mut cfg.input_dir);
        rebase(&mut cfg.features_dir);
        rebase(&mut cfg.work_dir);
        if let Some(p) = cfg.noise_patterns.as_mut() {
            rebase(p);
        }
        if let Some(c) = cfg.chrf.as_mut() {
            rebase(&mut c.hyp);
            rebase(&mut c.reference);
        }
        Ok(cfg)
    }

    /// Value checks only; see [`PipelineConfig::check_paths`].
    pub fn validate(&self) -> Result<()> {
        if !(self.skip_penalty >= 0.0) {
            return Err(Error::Config(format!(
                "skip_penalty must be non-negative, got {}",
                self.skip_penalty
            )));
        }
        self.vad.validate()?;
        self.filter.validate()?;
        self.sample.validate()
    }

    /// Input paths a stage reads must exist.
    pub fn check_paths(&self, stage: Stage) -> Result<()> {
        match stage {
            Stage::Normalize => {
                must_exist(&self.input_dir)?;
                if let Some(p) = &self.noise_patterns {
                    must_exist(p)?;
                }
            }
            Stage::Chunk | Stage::Align | Stage::Mine => must_exist(&self.features_dir)?,
            Stage::Chrf => {
                let c = self
                    .chrf
                    .as_ref()
                    .ok_or_else(|| Error::Config("chrf needs hyp and reference files".into()))?;
                must_exist(&c.hyp)?;
                must_exist(&c.reference)?;
            }
            _ => {}
        }
        Ok(())
    }

    fn stage_dir(&self, stage: Stage) -> PathBuf {
        self.work_dir.join(stage.as_str())
    }

    fn status_path(&self, stage: Stage) -> PathBuf {
        self.work_dir.join(format!("{stage}.status.json"))
    }

    pub fn output(&self, name: &str) -> PathBuf {
        self.work_dir.join(name)
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    /// Halt on the first document failure.
    pub strict: bool,
    /// Worker threads; 0 uses every logical core.
    pub jobs: usize,
}

/// Per-document input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DocDescriptor {
    pub doc_id: String,
    pub audio_path: String,
    pub audio_seconds: f64,
    pub sample_rate_hz: u32,
    /// Language spoken in the audio and written in `transcript`.
    pub src_lang: LangCode,
    pub tgt_lang: LangCode,
    pub transcript: String,
    pub translation: String,
    #[serde(default = "mined")]
    pub provenance: Provenance,
}

fn mined() -> Provenance {
    Provenance::Mined
}

impl DocDescriptor {
    pub fn doc_ref(&self) -> DocumentRef {
        DocumentRef {
            doc_id: self.doc_id.clone(),
            audio_path: self.audio_path.clone(),
            audio_seconds: self.audio_seconds,
            sample_rate_hz: self.sample_rate_hz,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizedDocOut {
    pub doc: DocumentRef,
    pub src_lang: LangCode,
    pub tgt_lang: LangCode,
    pub provenance: Provenance,
    pub punctuation_valid: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub punctuation_violation: Option<String>,
    pub source_sentences: Vec<String>,
    pub target_sentences: Vec<String>,
}

impl NormalizedDocOut {
    pub fn direction(&self) -> Result<Direction> {
        Direction::new(self.src_lang, self.tgt_lang)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChunkOut {
    pub doc_id: String,
    pub vad: bool,
    pub spans: Vec<SpeechSpan>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignedSegment {
    pub sentence_index: usize,
    pub start_frame: usize,
    pub end_frame: usize,
    pub start_s: f64,
    pub end_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Unaligned {
    pub sentence_index: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignOut {
    pub doc_id: String,
    pub frame_seconds: f64,
    pub unknown_chars: usize,
    pub segments: Vec<AlignedSegment>,
    pub unaligned: Vec<Unaligned>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredSegment {
    #[serde(flatten)]
    pub segment: AlignedSegment,
    pub text: String,
    pub hypothesis: String,
    pub tau: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreOut {
    pub doc_id: String,
    pub segments: Vec<ScoredSegment>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DocStatus {
    Ok,
    Failed,
    Skipped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocEntry {
    pub doc_id: String,
    pub status: DocStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatusFile {
    pub stage: String,
    pub docs: Vec<DocEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProgressEvent {
    pub stage: String,
    pub doc_id: Option<String>,
    pub status: DocStatus,
    pub duration_ms: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageSummary {
    pub stage: String,
    pub documents: usize,
    pub succeeded: usize,
    pub failed: usize,
    pub skipped: usize,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
    #[serde(skip)]
    pub events: Vec<ProgressEvent>,
}

impl StageSummary {
    fn new(stage: Stage) -> Self {
        StageSummary {
            stage: stage.to_string(),
            documents: 0,
            succeeded: 0,
            failed: 0,
            skipped: 0,
            notes: Vec::new(),
            events: Vec::new(),
        }
    }
}

/// Process exit code for a fatal error: 2 missing input, 3 invalid data,
/// 4 configuration, 1 anything else.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        e if e.is_not_found() => 2,
        Error::Config(_) => 4,
        Error::Io { .. } | Error::Transport(_) => 1,
        _ => 3,
    }
}

/// Writes through a sibling temp file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(format!(".tmp{}", std::process::id()));
    let tmp = PathBuf::from(tmp);
    let res = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    res.map_err(|e| {
        let _ = fs::remove_file(&tmp);
        Error::io(path, e)
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| Error::Format(e.to_string()))?;
    s.push('\n');
    write_atomic(path, s.as_bytes())
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        location: format!("{}:{}", path.display(), e.line()),
        message: e.to_string(),
    })
}

fn manifest_bytes(m: &Manifest) -> Result<Vec<u8>> {
    for r in &m.records {
        r.validate()?;
    }
    let mut buf = Vec::new();
    write_manifest_to(m, &mut buf).map_err(|e| Error::Format(e.to_string()))?;
    Ok(buf)
}

fn write_manifest_atomic(m: &Manifest, path: &Path) -> Result<()> {
    write_atomic(path, &manifest_bytes(m)?)
}

fn lines_file(lines: &[String]) -> Vec<u8> {
    let mut s = String::new();
    for l in lines {
        s.push_str(l);
        s.push('\n');
    }
    s.into_bytes()
}

fn append_progress(cfg: &PipelineConfig, events: &[ProgressEvent]) -> Result<()> {
    let path = cfg.output("progress.jsonl");
    fs::create_dir_all(&cfg.work_dir).map_err(|e| Error::io(&cfg.work_dir, e))?;
    let mut f = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(&path)
        .map_err(|e| Error::io(&path, e))?;
    let mut buf = String::new();
    for ev in events {
        buf.push_str(&serde_json::to_string(ev).expect("progress events serialize"));
        buf.push('\n');
    }
    f.write_all(buf.as_bytes()).map_err(|e| Error::io(&path, e))
}

fn pool(opts: &RunOptions) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(opts.jobs)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))
}

/// Document ids, sorted, from the descriptor file names.
pub fn discover_docs(input_dir: &Path) -> Result<Vec<String>> {
    let rd = fs::read_dir(input_dir).map_err(|e| Error::io(input_dir, e))?;
    let mut ids = Vec::new();
    for entry in rd {
        let path = entry.map_err(|e| Error::io(input_dir, e))?.path();
        if path.extension().is_some_and(|x| x == "json") && path.is_file() {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                ids.push(stem.to_owned());
            }
        }
    }
    ids.sort();
    Ok(ids)
}

struct Ctx<'a> {
    cfg: &'a PipelineConfig,
}

impl Ctx<'_> {
    fn out(&self, stage: Stage, doc_id: &str, ext: &str) -> PathBuf {
        self.cfg.stage_dir(stage).join(format!("{doc_id}.{ext}"))
    }

    fn vocab(&self, doc_id: &str) -> Result<TokenVocab> {
        let own = self.cfg.features_dir.join(format!("{doc_id}.vocab.json"));
        if own.exists() {
            read_vocab(own)
        } else {
            read_vocab(self.cfg.features_dir.join("vocab.json"))
        }
    }

    fn features(&self, doc_id: &str, tag: &str, kind: FeatureKind) -> Result<FeatureMatrix> {
        let path = feature_path(&self.cfg.features_dir, doc_id, tag);
        let m = read_features(&path).map_err(|e| match e {
            Error::Io { .. } => e,
            other => Error::Format(format!("{}: {other}", path.display())),
        })?;
        m.expect_kind(kind)?;
        Ok(m)
    }

    fn logits(&self, doc_id: &str, vocab: &TokenVocab) -> Result<FeatureMatrix> {
        let m = self.features(doc_id, "logits", FeatureKind::Logits)?;
        if m.cols != vocab.len() {
            return Err(Error::DimensionMismatch {
                left: m.cols,
                right: vocab.len(),
            });
        }
        Ok(m)
    }

    fn normalized(&self, doc_id: &str) -> Result<NormalizedDocOut> {
        read_json(&self.out(Stage::Normalize, doc_id, "json"))
    }
}

struct Cleaned {
    desc: DocDescriptor,
    transcript: String,
    translation: String,
}

fn load_descriptor(cfg: &PipelineConfig, noise: &NoisePatterns, doc_id: &str) -> Result<Cleaned> {
    let path = cfg.input_dir.join(format!("{doc_id}.json"));
    let desc: DocDescriptor = read_json(&path)?;
    if desc.doc_id != doc_id {
        return Err(Error::validation(
            "doc_id",
            format!("{:?} does not match file name {}", desc.doc_id, path.display()),
        ));
    }
    desc.doc_ref().validate()?;
    Direction::new(desc.src_lang, desc.tgt_lang)?;
    let transcript = clean_text_with(&desc.transcript, noise);
    let translation = clean_text_with(&desc.translation, noise);
    if transcript.is_empty() {
        return Err(Error::validation("transcript", "empty after cleaning"));
    }
    if translation.is_empty() {
        return Err(Error::validation("translation", "empty after cleaning"));
    }
    Ok(Cleaned {
        desc,
        transcript,
        translation,
    })
}

fn finish_normalize(ctx: &Ctx, c: Cleaned, punct: Result<crate::llm_client::LlmResponse>) -> Result<()> {
    let (text, valid, violation) = match punct {
        Ok(r) if r.valid => (r.parsed_text, true, None),
        Ok(r) => (c.transcript.clone(), false, r.violation),
        Err(e) => (c.transcript.clone(), false, Some(e.to_string())),
    };
    let src = segment_sentences(&text, c.desc.src_lang, DEFAULT_SENTINEL)?.sentences;
    let tgt = segment_sentences(&c.translation, c.desc.tgt_lang, DEFAULT_SENTINEL)?.sentences;
    let id = &c.desc.doc_id;
    let out = NormalizedDocOut {
        doc: c.desc.doc_ref(),
        src_lang: c.desc.src_lang,
        tgt_lang: c.desc.tgt_lang,
        provenance: c.desc.provenance,
        punctuation_valid: valid,
        punctuation_violation: violation,
        source_sentences: src,
        target_sentences: tgt,
    };
    write_atomic(&ctx.out(Stage::Normalize, id, "src.txt"), &lines_file(&out.source_sentences))?;
    write_atomic(&ctx.out(Stage::Normalize, id, "tgt.txt"), &lines_file(&out.target_sentences))?;
    write_json(&ctx.out(Stage::Normalize, id, "json"), &out)
}

fn chunk_doc(ctx: &Ctx, doc_id: &str) -> Result<()> {
    let norm = ctx.normalized(doc_id)?;
    let spans = if ctx.cfg.vad_enabled {
        let probs = ctx.features(doc_id, "vad", FeatureKind::VadProbs)?;
        detect_speech(&probs, &ctx.cfg.vad)?
    } else {
        vec![SpeechSpan {
            start_s: 0.0,
            end_s: norm.doc.audio_seconds,
        }]
    };
    let out = ChunkOut {
        doc_id: doc_id.to_owned(),
        vad: ctx.cfg.vad_enabled,
        spans,
    };
    write_json(&ctx.out(Stage::Chunk, doc_id, "json"), &out)
}

fn non_space_chars(s: &str) -> usize {
    s.chars().filter(|c| !c.is_whitespace()).count()
}

fn align_doc(ctx: &Ctx, doc_id: &str) -> Result<()> {
    let norm = ctx.normalized(doc_id)?;
    let chunks: ChunkOut = read_json(&ctx.out(Stage::Chunk, doc_id, "json"))?;
    let vocab = ctx.vocab(doc_id)?;
    let logits = ctx.logits(doc_id, &vocab)?;
    let fs = logits.frame_seconds as f64;
    if !(fs > 0.0) {
        return Err(Error::validation("frame_seconds", "logits need a positive frame duration"));
    }
    let total = logits.rows as f64 * fs;
    let slices: Vec<(FeatureMatrix, usize)> = chunks
        .spans
        .iter()
        .filter(|s| s.start_s < total)
        .map(|s| {
            let span = SpeechSpan {
                start_s: s.start_s,
                end_s: s.end_s.min(total),
            };
            slice_logits(&logits, &span)
        })
        .collect::<Result<_>>()?;
    let chunk_chars: Vec<usize> = slices
        .iter()
        .map(|(m, _)| non_space_chars(&greedy_decode(m, &vocab, 0..m.rows)))
        .collect();
    let sents = &norm.source_sentences;
    let sentence_chars: Vec<usize> = sents.iter().map(|s| non_space_chars(&alignment_text(s))).collect();
    let assignment = assign_to_chunks(&chunk_chars, &sentence_chars);

    type ChunkResult = (Vec<AlignedSegment>, Vec<Unaligned>, usize);
    let per_chunk: Vec<ChunkResult> = assignment
        .ranges
        .par_iter()
        .zip(&slices)
        .map(|(&(a, b), (m, first))| -> Result<ChunkResult> {
            if a == b {
                return Ok((vec![], vec![], 0));
            }
            let tok = tokenize_sentences(&sents[a..b], &vocab);
            if tok.target.tokens.is_empty() {
                return Ok((vec![], vec![], tok.unknown_chars));
            }
            match ctc_viterbi_align(m, &vocab, &tok.target) {
                Ok(res) => {
                    let res = offset_alignment(&res, *first);
                    let segs = res
                        .segment_spans
                        .iter()
                        .zip(&tok.segment_sentence)
                        .map(|(sp, &local)| {
                            let t = frame_span_seconds(*sp, fs);
                            AlignedSegment {
                                sentence_index: a + local,
                                start_frame: sp.start_frame,
                                end_frame: sp.end_frame,
                                start_s: t.start_s,
                                end_s: t.end_s.min(norm.doc.audio_seconds),
                            }
                        })
                        .collect();
                    Ok((segs, vec![], tok.unknown_chars))
                }
                Err(e @ Error::Infeasible { .. }) => Ok((
                    vec![],
                    (a..b)
                        .map(|i| Unaligned {
                            sentence_index: i,
                            reason: e.to_string(),
                        })
                        .collect(),
                    tok.unknown_chars,
                )),
                Err(e) => Err(e),
            }
        })
        .collect::<Result<_>>()?;

    let mut segments = Vec::new();
    let mut unaligned = Vec::new();
    let mut unknown_chars = 0;
    for (s, u, k) in per_chunk {
        segments.extend(s);
        unaligned.extend(u);
        unknown_chars += k;
    }
    segments.retain(|s| {
        let ok = s.start_s < s.end_s;
        if !ok {
            unaligned.push(Unaligned {
                sentence_index: s.sentence_index,
                reason: "segment lies outside the audio".into(),
            });
        }
        ok
    });
    let mut covered = vec![false; sents.len()];
    for i in segments.iter().map(|s| s.sentence_index).chain(unaligned.iter().map(|u| u.sentence_index)) {
        covered[i] = true;
    }
    for (i, c) in covered.iter().enumerate() {
        if !c {
            unaligned.push(Unaligned {
                sentence_index: i,
                reason: if slices.is_empty() {
                    "no speech chunks".into()
                } else {
                    "no characters in the vocabulary".into()
                },
            });
        }
    }
    unaligned.sort_by_key(|u| u.sentence_index);
    let out = AlignOut {
        doc_id: doc_id.to_owned(),
        frame_seconds: fs,
        unknown_chars,
        segments,
        unaligned,
    };
    write_json(&ctx.out(Stage::Align, doc_id, "json"), &out)
}

fn score_doc(ctx: &Ctx, doc_id: &str) -> Result<()> {
    let norm = ctx.normalized(doc_id)?;
    let aligned: AlignOut = read_json(&ctx.out(Stage::Align, doc_id, "json"))?;
    let vocab = ctx.vocab(doc_id)?;
    let logits = ctx.logits(doc_id, &vocab)?;
    let segments = aligned
        .segments
        .into_iter()
        .map(|seg| {
            let text = norm
                .source_sentences
                .get(seg.sentence_index)
                .ok_or_else(|| Error::validation("sentence_index", format!("{} out of range", seg.sentence_index)))?
                .clone();
            let hypothesis = greedy_decode(&logits, &vocab, seg.start_frame..seg.end_frame + 1);
            let tau = alignment_score_tau(&text, &hypothesis);
            Ok(ScoredSegment {
                segment: seg,
                text,
                hypothesis,
                tau,
            })
        })
        .collect::<Result<_>>()?;
    let out = ScoreOut {
        doc_id: doc_id.to_owned(),
        segments,
    };
    write_json(&ctx.out(Stage::Score, doc_id, "json"), &out)
}

fn check_rows(m: &FeatureMatrix, sentences: usize) -> Result<()> {
    if m.rows != sentences {
        return Err(Error::CountMismatch {
            expected: sentences,
            actual: m.rows,
        });
    }
    Ok(())
}

/// Mined records of one document, plus the number of candidate pairs
/// dropped because a source sentence had no audio span.
fn mine_doc(ctx: &Ctx, doc_id: &str) -> Result<(Manifest, usize)> {
    let norm = ctx.normalized(doc_id)?;
    let direction = norm.direction()?;
    let scored: ScoreOut = read_json(&ctx.out(Stage::Score, doc_id, "json"))?;
    let vocab = ctx.vocab(doc_id)?;
    let logits = ctx.logits(doc_id, &vocab)?;
    let src_emb = ctx.features(doc_id, "src_emb", FeatureKind::Embeddings)?;
    let tgt_emb = ctx.features(doc_id, "tgt_emb", FeatureKind::Embeddings)?;
    check_rows(&src_emb, norm.source_sentences.len())
        .map_err(|e| Error::Format(format!("{doc_id}.src_emb.baf: {e}")))?;
    check_rows(&tgt_emb, norm.target_sentences.len())
        .map_err(|e| Error::Format(format!("{doc_id}.tgt_emb.baf: {e}")))?;

    let candidates: Vec<(Range<usize>, Range<usize>, f64)> = match ctx.cfg.mining_mode {
        MiningMode::Dp => align_documents(&src_emb, &tgt_emb, ctx.cfg.skip_penalty)?
            .into_iter()
            .filter(|op| !op.kind.is_skip())
            .map(|op| (op.src_span, op.tgt_span, op.score))
            .collect(),
        MiningMode::Greedy => mine_pairs(&src_emb, &tgt_emb)?
            .into_iter()
            .map(|p| (p.source_idx..p.source_idx + 1, p.target_idx..p.target_idx + 1, p.sigma))
            .collect(),
    };
    let frames: HashMap<usize, FrameSpan> = scored
        .segments
        .iter()
        .map(|s| {
            (
                s.segment.sentence_index,
                FrameSpan {
                    start_frame: s.segment.start_frame,
                    end_frame: s.segment.end_frame,
                },
            )
        })
        .collect();
    let fs = logits.frame_seconds as f64;
    let mut records = Vec::new();
    let mut unaligned = 0;
    for (src, tgt, sigma) in candidates {
        let spans: Option<Vec<FrameSpan>> = src.clone().map(|i| frames.get(&i).copied()).collect();
        let Some(spans) = spans else {
            unaligned += 1;
            continue;
        };
        let hull = FrameSpan {
            start_frame: spans.iter().map(|s| s.start_frame).min().expect("non-empty span"),
            end_frame: spans.iter().map(|s| s.end_frame).max().expect("non-empty span"),
        };
        let time = frame_span_seconds(hull, fs);
        let end_s = time.end_s.min(norm.doc.audio_seconds);
        if time.start_s >= end_s {
            unaligned += 1;
            continue;
        }
        let source_text = norm.source_sentences[src].join(" ");
        let hypothesis = greedy_decode(&logits, &vocab, hull.start_frame..hull.end_frame + 1);
        let tau = alignment_score_tau(&source_text, &hypothesis);
        let r = UtteranceRecord {
            doc: norm.doc.clone(),
            direction,
            start_s: time.start_s,
            end_s,
            source_text,
            target_text: norm.target_sentences[tgt].join(" "),
            scores: Some(QualityScores {
                sigma: sigma.clamp(-1.0, 1.0),
                tau,
            }),
            provenance: norm.provenance,
        };
        r.validate()?;
        records.push(r);
    }
    let m = Manifest::new(None, records);
    write_manifest_atomic(&m, &ctx.out(Stage::Mine, doc_id, "jsonl"))?;
    Ok((m, unaligned))
}

fn doc_ids_for(cfg: &PipelineConfig, stage: Stage) -> Result<Vec<(String, Option<String>)>> {
    match stage.previous() {
        None => Ok(discover_docs(&cfg.input_dir)?.into_iter().map(|d| (d, None)).collect()),
        Some(prev) => {
            let status: StatusFile = read_json(&cfg.status_path(prev))?;
            Ok(status
                .docs
                .into_iter()
                .map(|d| {
                    let skip = (d.status != DocStatus::Ok).then(|| format!("{prev} did not succeed"));
                    (d.doc_id, skip)
                })
                .collect())
        }
    }
}

fn remove_doc_outputs(cfg: &PipelineConfig, stage: Stage, doc_id: &str) {
    let exts: &[&str] = match stage {
        Stage::Normalize => &["json", "src.txt", "tgt.txt"],
        Stage::Mine => &["jsonl"],
        _ => &["json"],
    };
    for ext in exts {
        let _ = fs::remove_file(cfg.stage_dir(stage).join(format!("{doc_id}.{ext}")));
    }
}

type DocResult = (String, std::result::Result<Option<String>, Error>, u64, bool);

fn run_per_doc(
    stage: Stage,
    cfg: &PipelineConfig,
    opts: &RunOptions,
    summary: &mut StageSummary,
) -> Result<()> {
    let docs = doc_ids_for(cfg, stage)?;
    let ctx = Ctx { cfg };
    let pool = pool(opts)?;
    let timed = |f: &dyn Fn() -> Result<Option<String>>| {
        let t = Instant::now();
        let r = f();
        (r, t.elapsed().as_millis() as u64)
    };

    let results: Vec<DocResult> = pool.install(|| match stage {
        Stage::Normalize => {
            let noise_owned;
            let noise = match &cfg.noise_patterns {
                Some(p) => {
                    noise_owned = NoisePatterns::from_file(p);
                    match &noise_owned {
                        Ok(n) => n,
                        Err(e) => return Err(Error::Config(e.to_string())),
                    }
                }
                None => NoisePatterns::builtin(),
            };
            let client = match cfg.llm_mode {
                LlmModeName::Fallback => LlmClient::fallback(),
                LlmModeName::Service => LlmClient::new(LlmMode::Service(ServiceConfig::from_env()?)),
            };
            let loaded: Vec<(String, Result<Cleaned>, u64)> = docs
                .par_iter()
                .map(|(id, _)| {
                    let t = Instant::now();
                    let r = load_descriptor(cfg, noise, id);
                    (id.clone(), r, t.elapsed().as_millis() as u64)
                })
                .collect();
            let requests: Vec<(String, LangCode)> = loaded
                .iter()
                .filter_map(|(_, r, _)| r.as_ref().ok().map(|c| (c.transcript.clone(), c.desc.src_lang)))
                .collect();
            let t = Instant::now();
            let mut replies = client.punctuate_batch(&requests).into_iter();
            let llm_ms = t.elapsed().as_millis() as u64 / requests.len().max(1) as u64;
            let pending: Vec<_> = loaded
                .into_iter()
                .map(|(id, r, ms)| {
                    let reply = r.is_ok().then(|| replies.next().expect("one reply per request"));
                    (id, r, reply, ms)
                })
                .collect();
            Ok(pending
                .into_par_iter()
                .map(|(id, r, reply, ms)| {
                    let t = Instant::now();
                    let res = r.and_then(|c| {
                        let reply = reply.expect("reply exists for loaded docs");
                        finish_normalize(&ctx, c, reply).map(|_| None)
                    });
                    (id, res, ms + llm_ms + t.elapsed().as_millis() as u64, false)
                })
                .collect())
        }
        _ => Ok(docs
            .par_iter()
            .map(|(id, skip)| {
                if let Some(reason) = skip {
                    return (id.clone(), Ok(Some(reason.clone())), 0, true);
                }
                let (r, ms) = timed(&|| match stage {
                    Stage::Chunk => chunk_doc(&ctx, id).map(|_| None),
                    Stage::Align => align_doc(&ctx, id).map(|_| None),
                    Stage::Score => score_doc(&ctx, id).map(|_| None),
                    Stage::Mine => mine_doc(&ctx, id).map(|(m, unaligned)| {
                        Some(format!("records={} unaligned_pairs={unaligned}", m.len()))
                    }),
                    _ => unreachable!("corpus stages are not per document"),
                });
                (id.clone(), r, ms, false)
            })
            .collect()),
    })?;

    let mut entries = Vec::new();
    let mut first_err = None;
    for (id, r, ms, skipped) in results {
        summary.documents += 1;
        let (status, message) = match r {
            Ok(msg) if skipped => {
                summary.skipped += 1;
                remove_doc_outputs(cfg, stage, &id);
                (DocStatus::Skipped, msg)
            }
            Ok(msg) => {
                summary.succeeded += 1;
                (DocStatus::Ok, msg)
            }
            Err(e) => {
                summary.failed += 1;
                remove_doc_outputs(cfg, stage, &id);
                let msg = e.to_string();
                summary.notes.push(format!("{id}: {msg}"));
                if first_err.is_none() {
                    first_err = Some(e);
                }
                (DocStatus::Failed, Some(msg))
            }
        };
        summary.events.push(ProgressEvent {
            stage: stage.to_string(),
            doc_id: Some(id.clone()),
            status,
            duration_ms: ms,
            message: message.clone(),
        });
        entries.push(DocEntry {
            doc_id: id,
            status,
            message,
        });
    }
    write_json(
        &cfg.status_path(stage),
        &StatusFile {
            stage: stage.to_string(),
            docs: entries.clone(),
        },
    )?;
    if stage == Stage::Mine {
        let mut all = Manifest::default();
        for e in entries.iter().filter(|e| e.status == DocStatus::Ok) {
            all.records.extend(read_manifest(ctx.out(Stage::Mine, &e.doc_id, "jsonl"))?.records);
        }
        write_manifest_atomic(&all, &cfg.output("mined.jsonl"))?;
        summary.notes.push(format!("mined {} records", all.len()));
    }
    match first_err {
        Some(e) if opts.strict => Err(e),
        _ => Ok(()),
    }
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text.lines().map(str::to_owned).collect())
}

fn run_corpus(stage: Stage, cfg: &PipelineConfig, summary: &mut StageSummary) -> Result<()> {
    match stage {
        Stage::Filter => {
            let mined = read_manifest(cfg.output("mined.jsonl"))?;
            let (kept, dropped) = filter_manifest(&mined, &cfg.filter)?;
            write_manifest_atomic(&kept, &cfg.output("kept.jsonl"))?;
            write_manifest_atomic(&dropped, &cfg.output("dropped.jsonl"))?;
            summary.notes.push(format!("kept {} of {} records", kept.len(), mined.len()));
        }
        Stage::Sample => {
            let kept = read_manifest(cfg.output("kept.jsonl"))?;
            let out = sample_test_set(&kept, &cfg.sample)?;
            write_manifest_atomic(&out.test, &cfg.output("test.jsonl"))?;
            write_manifest_atomic(&out.train, &cfg.output("train.jsonl"))?;
            write_json(&cfg.output("sample_report.json"), &out.report)?;
            summary.notes.push(format!("test {} records, train {}", out.test.len(), out.train.len()));
            summary.notes.extend(out.report.warnings());
        }
        Stage::Stats => {
            let mut test = read_manifest(cfg.output("test.jsonl"))?;
            let mut train = read_manifest(cfg.output("train.jsonl"))?;
            test.split = Some(Split::Test);
            train.split = Some(Split::Train);
            let table = stats_report(&[test, train]);
            write_atomic(&cfg.output("stats.csv"), table.to_csv().as_bytes())?;
            write_atomic(&cfg.output("stats.txt"), table.to_text().as_bytes())?;
        }
        Stage::Chrf => {
            let files = cfg
                .chrf
                .as_ref()
                .ok_or_else(|| Error::Config("chrf needs hyp and reference files".into()))?;
            let hyp = read_lines(&files.hyp)?;
            let reference = read_lines(&files.reference)?;
            let chrf_cfg = ChrfConfig {
                averaging: files.averaging,
                ..Default::default()
            };
            let report = chrf_pp(&hyp, &reference, &chrf_cfg)?;
            write_json(&cfg.output("chrf.json"), &report)?;
            summary.notes.push(format!("chrF2++ = {:.2}", report.corpus_score));
        }
        _ => unreachable!("per-document stages are handled separately"),
    }
    summary.documents = 0;
    Ok(())
}

/// Runs one stage. Per-document failures are recorded in the summary and
/// only become an error under `strict`.
pub fn run_stage(stage: Stage, cfg: &PipelineConfig, opts: &RunOptions) -> Result<StageSummary> {
    cfg.validate()?;
    cfg.check_paths(stage)?;
    let mut summary = StageSummary::new(stage);
    let start = Instant::now();
    let res = if stage.is_per_doc() {
        run_per_doc(stage, cfg, opts, &mut summary)
    } else {
        run_corpus(stage, cfg, &mut summary)
    };
    if !stage.is_per_doc() {
        summary.events.push(ProgressEvent {
            stage: stage.to_string(),
            doc_id: None,
            status: if res.is_ok() { DocStatus::Ok } else { DocStatus::Failed },
            duration_ms: start.elapsed().as_millis() as u64,
            message: summary.notes.first().cloned(),
        });
    }
    if cfg.work_dir.exists() || res.is_ok() {
        append_progress(cfg, &summary.events)?;
    }
    res.map(|_| summary)
}

/// Every stage in order; chrf only when hyp and reference files are set.
pub fn run_all(cfg: &PipelineConfig, opts: &RunOptions) -> Result<Vec<StageSummary>> {
    Stage::ALL
        .into_iter()
        .filter(|s| *s != Stage::Chrf || cfg.chrf.is_some())
        .map(|s| run_stage(s, cfg, opts))
        .collect()
}
