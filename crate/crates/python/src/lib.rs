//! Python module `speechmine`.
//!
//! Records cross the boundary as plain dicts with the manifest's JSON keys.

use std::path::PathBuf;

use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyFileNotFoundError};
use pyo3::prelude::*;
use pyo3::types::{PyBytes, PyDict, PyList};

use speechmine_core::corpus_model::{
    read_manifest as read_manifest_file, record_from_json, record_to_json,
    write_manifest as write_manifest_file, LangCode, Manifest,
};
use speechmine_core::ctc_aligner::{ctc_viterbi_align, tokenize_sentences};
use speechmine_core::dataset_builder::{filter_manifest, sample_test_set, FilterPolicy, SampleSpec};
use speechmine_core::feature_io::{
    read_features, read_vocab, write_features, FeatureKind, FeatureMatrix, TokenVocab,
};
use speechmine_core::metrics::{chrf_pp, ChrfAveraging, ChrfConfig};
use speechmine_core::pipeline::{run_all as run_all_stages, run_stage as run_one_stage, PipelineConfig, RunOptions};
use speechmine_core::quality::{alignment_score_tau, cosine_sigma, levenshtein_distance, score_histogram};
use speechmine_core::text_normalize::{clean_text as clean, segment_sentences, DEFAULT_SENTINEL};
use speechmine_core::vad_chunker::{detect_speech as detect, VadConfig};
use speechmine_core::Error;

create_exception!(speechmine, SpeechmineError, PyException);

fn to_py(e: Error) -> PyErr {
    if e.is_not_found() {
        PyFileNotFoundError::new_err(e.to_string())
    } else {
        SpeechmineError::new_err(e.to_string())
    }
}

fn lang(code: &str) -> PyResult<LangCode> {
    code.parse().map_err(to_py)
}

fn kind(name: &str) -> PyResult<FeatureKind> {
    match name {
        "logits" => Ok(FeatureKind::Logits),
        "embeddings" => Ok(FeatureKind::Embeddings),
        "vad_probs" => Ok(FeatureKind::VadProbs),
        other => Err(SpeechmineError::new_err(format!("unknown feature kind {other:?}"))),
    }
}

/// A BAF1 feature matrix.
#[pyclass(name = "FeatureMatrix", module = "speechmine", frozen)]
struct PyFeatureMatrix {
    inner: FeatureMatrix,
}

#[pymethods]
impl PyFeatureMatrix {
    /// `kind` is "logits", "embeddings" or "vad_probs".
    #[new]
    fn new(kind_name: &str, rows: Vec<Vec<f32>>, frame_seconds: f32) -> PyResult<Self> {
        let inner = FeatureMatrix::from_rows(kind(kind_name)?, frame_seconds, &rows).map_err(to_py)?;
        Ok(PyFeatureMatrix { inner })
    }

    #[staticmethod]
    fn read(path: PathBuf) -> PyResult<Self> {
        Ok(PyFeatureMatrix {
            inner: read_features(path).map_err(to_py)?,
        })
    }

    fn write(&self, path: PathBuf) -> PyResult<()> {
        write_features(&self.inner, path).map_err(to_py)
    }

    #[staticmethod]
    fn from_bytes(data: &[u8]) -> PyResult<Self> {
        Ok(PyFeatureMatrix {
            inner: FeatureMatrix::from_bytes(data).map_err(to_py)?,
        })
    }

    fn to_bytes<'py>(&self, py: Python<'py>) -> Bound<'py, PyBytes> {
        PyBytes::new(py, &self.inner.to_bytes())
    }

    #[getter]
    fn kind(&self) -> &'static str {
        self.inner.kind.as_str()
    }

    #[getter]
    fn rows(&self) -> usize {
        self.inner.rows
    }

    #[getter]
    fn cols(&self) -> usize {
        self.inner.cols
    }

    #[getter]
    fn frame_seconds(&self) -> f32 {
        self.inner.frame_seconds
    }

    fn to_list(&self) -> Vec<Vec<f32>> {
        self.inner.iter_rows().map(<[f32]>::to_vec).collect()
    }

    fn __len__(&self) -> usize {
        self.inner.rows
    }

    fn __repr__(&self) -> String {
        format!(
            "FeatureMatrix(kind={:?}, rows={}, cols={}, frame_seconds={})",
            self.inner.kind.as_str(),
            self.inner.rows,
            self.inner.cols,
            self.inner.frame_seconds
        )
    }
}

#[pyfunction]
fn levenshtein(a: &str, b: &str) -> usize {
    levenshtein_distance(a, b)
}

/// Alignment score between a reference transcript and an ASR hypothesis.
#[pyfunction]
fn tau(reference: &str, hypothesis: &str) -> f64 {
    alignment_score_tau(reference, hypothesis)
}

/// Cosine mining score.
#[pyfunction]
fn cosine(u: Vec<f64>, v: Vec<f64>) -> PyResult<f64> {
    cosine_sigma(&u, &v).map_err(to_py)
}

#[pyfunction]
fn clean_text(raw: &str, lang_code: &str) -> PyResult<String> {
    Ok(clean(raw, lang(lang_code)?))
}

/// Splits cleaned text into sentences; terminal punctuation is dropped.
#[pyfunction]
fn segment(text: &str, lang_code: &str) -> PyResult<Vec<String>> {
    Ok(segment_sentences(text, lang(lang_code)?, DEFAULT_SENTINEL)
        .map_err(to_py)?
        .sentences)
}

#[pyfunction]
fn histogram(sigmas: Vec<f64>, bins: usize) -> Vec<u64> {
    score_histogram(&sigmas, bins)
}

/// Corpus chrF++ (sacreBLEU defaults). Returns a dict with `score`,
/// `per_segment` and `signature`.
#[pyfunction]
#[pyo3(signature = (hypotheses, references, mean_f=false))]
fn chrf<'py>(
    py: Python<'py>,
    hypotheses: Vec<String>,
    references: Vec<String>,
    mean_f: bool,
) -> PyResult<Bound<'py, PyDict>> {
    let cfg = ChrfConfig {
        averaging: if mean_f {
            ChrfAveraging::MeanF
        } else {
            ChrfAveraging::PrecisionRecall
        },
        ..Default::default()
    };
    let r = chrf_pp(&hypotheses, &references, &cfg).map_err(to_py)?;
    let d = PyDict::new(py);
    d.set_item("score", r.corpus_score)?;
    d.set_item("per_segment", r.per_segment)?;
    d.set_item("signature", r.signature)?;
    Ok(d)
}

/// Speech spans `(start_s, end_s)` from per-frame probabilities. Unset
/// options take the library defaults.
#[pyfunction]
#[pyo3(signature = (probs, frame_seconds, on_threshold=None, off_threshold=None, min_speech_s=None, min_silence_s=None, pad_s=None, max_chunk_s=None))]
#[allow(clippy::too_many_arguments)]
fn detect_speech(
    probs: Vec<f32>,
    frame_seconds: f32,
    on_threshold: Option<f64>,
    off_threshold: Option<f64>,
    min_speech_s: Option<f64>,
    min_silence_s: Option<f64>,
    pad_s: Option<f64>,
    max_chunk_s: Option<f64>,
) -> PyResult<Vec<(f64, f64)>> {
    let d = VadConfig::default();
    let cfg = VadConfig {
        on_threshold: on_threshold.unwrap_or(d.on_threshold),
        off_threshold: off_threshold.unwrap_or(d.off_threshold),
        min_speech_s: min_speech_s.unwrap_or(d.min_speech_s),
        min_silence_s: min_silence_s.unwrap_or(d.min_silence_s),
        pad_s: pad_s.unwrap_or(d.pad_s),
        max_chunk_s: max_chunk_s.unwrap_or(d.max_chunk_s),
    };
    let n = probs.len();
    let m = FeatureMatrix::new(FeatureKind::VadProbs, n, 1, frame_seconds, probs).map_err(to_py)?;
    Ok(detect(&m, &cfg)
        .map_err(to_py)?
        .into_iter()
        .map(|s| (s.start_s, s.end_s))
        .collect())
}

/// CTC forced alignment of `sentences` to `logits`.
///
/// `vocab` is either a path to a vocab JSON file or a token list whose
/// first entry is the blank. Returns a dict with `path_log_prob`,
/// `unknown_chars` and `segments`: one `(sentence_index, start_frame,
/// end_frame)` per sentence that has alignable characters.
#[pyfunction]
fn ctc_align<'py>(
    py: Python<'py>,
    logits: &PyFeatureMatrix,
    vocab: &Bound<'py, PyAny>,
    sentences: Vec<String>,
) -> PyResult<Bound<'py, PyDict>> {
    let vocab = if let Ok(tokens) = vocab.extract::<Vec<String>>() {
        TokenVocab::new(tokens, 0, None).map_err(to_py)?
    } else {
        read_vocab(vocab.extract::<PathBuf>()?).map_err(to_py)?
    };
    let t = tokenize_sentences(&sentences, &vocab);
    let a = ctc_viterbi_align(&logits.inner, &vocab, &t.target).map_err(to_py)?;
    let segments: Vec<(usize, usize, usize)> = a
        .segment_spans
        .iter()
        .zip(&t.segment_sentence)
        .map(|(s, &i)| (i, s.start_frame, s.end_frame))
        .collect();
    let d = PyDict::new(py);
    d.set_item("path_log_prob", a.path_log_prob)?;
    d.set_item("unknown_chars", t.unknown_chars)?;
    d.set_item("segments", segments)?;
    Ok(d)
}

fn manifest_from_py(records: &Bound<'_, PyList>) -> PyResult<Manifest> {
    let json = records.py().import("json")?;
    let mut out = Vec::with_capacity(records.len());
    for r in records.iter() {
        let line: String = json.call_method1("dumps", (r,))?.extract()?;
        out.push(record_from_json(&line).map_err(to_py)?);
    }
    Ok(Manifest::new(None, out))
}

fn manifest_to_py<'py>(py: Python<'py>, m: &Manifest) -> PyResult<Bound<'py, PyList>> {
    let json = py.import("json")?;
    let items = m
        .records
        .iter()
        .map(|r| json.call_method1("loads", (record_to_json(r),)))
        .collect::<PyResult<Vec<_>>>()?;
    PyList::new(py, items)
}

#[pyfunction]
fn read_manifest<'py>(py: Python<'py>, path: PathBuf) -> PyResult<Bound<'py, PyList>> {
    manifest_to_py(py, &read_manifest_file(path).map_err(to_py)?)
}

#[pyfunction]
fn write_manifest(records: &Bound<'_, PyList>, path: PathBuf) -> PyResult<()> {
    write_manifest_file(&manifest_from_py(records)?, path).map_err(to_py)
}

/// `(kept, dropped)` under the given thresholds.
#[pyfunction]
#[pyo3(signature = (records, sigma_min=0.6, tau_min=0.8))]
fn filter_records<'py>(
    py: Python<'py>,
    records: &Bound<'py, PyList>,
    sigma_min: f64,
    tau_min: f64,
) -> PyResult<(Bound<'py, PyList>, Bound<'py, PyList>)> {
    let policy = FilterPolicy {
        sigma_min,
        tau_min,
        ..Default::default()
    };
    policy.validate().map_err(to_py)?;
    let (kept, dropped) = filter_manifest(&manifest_from_py(records)?, &policy).map_err(to_py)?;
    Ok((manifest_to_py(py, &kept)?, manifest_to_py(py, &dropped)?))
}

/// `(test, train, warnings)` from seeded per-direction sampling.
#[pyfunction]
#[pyo3(signature = (records, target_seconds=1200.0, seed=0))]
fn sample_test<'py>(
    py: Python<'py>,
    records: &Bound<'py, PyList>,
    target_seconds: f64,
    seed: u64,
) -> PyResult<(Bound<'py, PyList>, Bound<'py, PyList>, Vec<String>)> {
    let spec = SampleSpec { target_seconds, seed };
    let out = sample_test_set(&manifest_from_py(records)?, &spec).map_err(to_py)?;
    Ok((
        manifest_to_py(py, &out.test)?,
        manifest_to_py(py, &out.train)?,
        out.report.warnings(),
    ))
}

/// Runs one stage (or `"all"`) for a pipeline config file; returns stage
/// summaries as dicts.
#[pyfunction]
#[pyo3(signature = (config, stage="all", strict=false, jobs=0))]
fn run_pipeline<'py>(
    py: Python<'py>,
    config: PathBuf,
    stage: &str,
    strict: bool,
    jobs: usize,
) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let cfg = PipelineConfig::load(config).map_err(to_py)?;
    let opts = RunOptions { strict, jobs };
    let summaries = if stage == "all" {
        run_all_stages(&cfg, &opts).map_err(to_py)?
    } else {
        vec![run_one_stage(stage.parse().map_err(to_py)?, &cfg, &opts).map_err(to_py)?]
    };
    summaries
        .iter()
        .map(|s| {
            let d = PyDict::new(py);
            d.set_item("stage", &s.stage)?;
            d.set_item("documents", s.documents)?;
            d.set_item("succeeded", s.succeeded)?;
            d.set_item("failed", s.failed)?;
            d.set_item("skipped", s.skipped)?;
            d.set_item("notes", &s.notes)?;
            Ok(d)
        })
        .collect()
}

#[pymodule]
fn speechmine(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("SpeechmineError", m.py().get_type::<SpeechmineError>())?;
    m.add_class::<PyFeatureMatrix>()?;
    m.add_function(wrap_pyfunction!(levenshtein, m)?)?;
    m.add_function(wrap_pyfunction!(tau, m)?)?;
    m.add_function(wrap_pyfunction!(cosine, m)?)?;
    m.add_function(wrap_pyfunction!(clean_text, m)?)?;
    m.add_function(wrap_pyfunction!(segment, m)?)?;
    m.add_function(wrap_pyfunction!(histogram, m)?)?;
    m.add_function(wrap_pyfunction!(chrf, m)?)?;
    m.add_function(wrap_pyfunction!(detect_speech, m)?)?;
    m.add_function(wrap_pyfunction!(ctc_align, m)?)?;
    m.add_function(wrap_pyfunction!(read_manifest, m)?)?;
    m.add_function(wrap_pyfunction!(write_manifest, m)?)?;
    m.add_function(wrap_pyfunction!(filter_records, m)?)?;
    m.add_function(wrap_pyfunction!(sample_test, m)?)?;
    m.add_function(wrap_pyfunction!(run_pipeline, m)?)?;
    Ok(())
}
