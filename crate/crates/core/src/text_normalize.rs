//! Transcript cleaning and sentence segmentation.

use std::collections::HashMap;
use std::path::Path;

use regex::Regex;
use unicode_general_category::{get_general_category, GeneralCategory};

use crate::corpus_model::LangCode;
use crate::error::{Error, Result};

/// U+241E SYMBOL FOR RECORD SEPARATOR.
pub const DEFAULT_SENTINEL: char = '\u{241E}';

const DEFAULT_NOISE_CONFIG: &str = include_str!("../config/noise_patterns.txt");

const MAX_CLEAN_PASSES: usize = 8;

/// True for Unicode punctuation (categories P*) and ASCII punctuation/symbols.
pub fn is_punctuation(c: char) -> bool {
    if c.is_ascii() {
        return c.is_ascii_punctuation();
    }
    matches!(
        get_general_category(c),
        GeneralCategory::ConnectorPunctuation
            | GeneralCategory::DashPunctuation
            | GeneralCategory::OpenPunctuation
            | GeneralCategory::ClosePunctuation
            | GeneralCategory::InitialPunctuation
            | GeneralCategory::FinalPunctuation
            | GeneralCategory::OtherPunctuation
    )
}

pub fn strip_punctuation(s: &str) -> String {
    s.chars().filter(|&c| !is_punctuation(c)).collect()
}

pub fn collapse_whitespace(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Whitespace tokens after deleting punctuation.
pub fn content_tokens(s: &str) -> Vec<String> {
    strip_punctuation(s)
        .split_whitespace()
        .map(str::to_owned)
        .collect()
}

/// Comparison form: cleaned, lowercased, punctuation removed, whitespace
/// collapsed.
pub fn comparison_form(s: &str) -> String {
    collapse_whitespace(&strip_punctuation(&clean_text_with(s, NoisePatterns::builtin()).to_lowercase()))
}

/// Ordered list of noise patterns removed from transcripts.
#[derive(Debug, Clone)]
pub struct NoisePatterns {
    patterns: Vec<Regex>,
}

impl NoisePatterns {
    /// Parses the line-oriented pattern file format.
    pub fn parse(config: &str) -> Result<Self> {
        let mut patterns = Vec::new();
        for (i, raw) in config.lines().enumerate() {
            let line = raw.trim_end_matches(['\r', '\n']);
            if line.trim().is_empty() || line.trim_start().starts_with('#') {
                continue;
            }
            let source = match line.strip_prefix("re:") {
                Some(re) => re.to_owned(),
                None => regex::escape(&unescape_literal(line, i + 1)?),
            };
            let re = Regex::new(&source).map_err(|e| Error::Parse {
                location: format!("noise pattern line {}", i + 1),
                message: e.to_string(),
            })?;
            patterns.push(re);
        }
        Ok(NoisePatterns { patterns })
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// The pattern list shipped with the crate.
    pub fn builtin() -> &'static NoisePatterns {
        static BUILTIN: std::sync::OnceLock<NoisePatterns> = std::sync::OnceLock::new();
        BUILTIN.get_or_init(|| {
            NoisePatterns::parse(DEFAULT_NOISE_CONFIG).expect("builtin noise config parses")
        })
    }

    pub fn len(&self) -> usize {
        self.patterns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patterns.is_empty()
    }
}

fn unescape_literal(line: &str, lineno: usize) -> Result<String> {
    let mut out = String::with_capacity(line.len());
    let mut rest = line;
    while let Some(pos) = rest.find("\\u{") {
        out.push_str(&rest[..pos]);
        let after = &rest[pos + 3..];
        let end = after.find('}').ok_or_else(|| Error::Parse {
            location: format!("noise pattern line {lineno}"),
            message: "unterminated \\u{...} escape".into(),
        })?;
        let c = u32::from_str_radix(&after[..end], 16)
            .ok()
            .and_then(char::from_u32)
            .ok_or_else(|| Error::Parse {
                location: format!("noise pattern line {lineno}"),
                message: format!("invalid escape \\u{{{}}}", &after[..end]),
            })?;
        out.push(c);
        rest = &after[end + 1..];
    }
    out.push_str(rest);
    Ok(out)
}

fn clean_pass(s: &str, noise: &NoisePatterns) -> String {
    let mut text: String = s
        .chars()
        .filter_map(|c| match c {
            '\n' | '\r' | '\t' => Some(' '),
            c if c.is_control() => None,
            c => Some(c),
        })
        .collect();
    for re in &noise.patterns {
        if let std::borrow::Cow::Owned(replaced) = re.replace_all(&text, "") {
            text = replaced;
        }
    }
    collapse_whitespace(&text)
}

/// Cleans a transcript with the builtin noise patterns.
pub fn clean_text(raw: &str, lang: LangCode) -> String {
    let _ = lang;
    clean_text_with(raw, NoisePatterns::builtin())
}

/// Removes control characters and noise patterns, turns line breaks into
/// spaces, collapses whitespace and trims. Repeats until nothing changes so
/// the result is a fixed point.
pub fn clean_text_with(raw: &str, noise: &NoisePatterns) -> String {
    let mut current = clean_pass(raw, noise);
    for _ in 1..MAX_CLEAN_PASSES {
        let next = clean_pass(&current, noise);
        if next == current {
            break;
        }
        current = next;
    }
    current
}

/// Like [`clean_text`] for raw bytes, rejecting invalid UTF-8.
pub fn clean_bytes(raw: &[u8], lang: LangCode) -> Result<String> {
    let s = std::str::from_utf8(raw).map_err(|e| Error::Parse {
        location: format!("byte {}", e.valid_up_to()),
        message: "invalid UTF-8".into(),
    })?;
    Ok(clean_text(s, lang))
}

/// Per-language terminal punctuation sets.
#[derive(Debug, Clone, PartialEq)]
#[derive(Default)]
pub struct TerminalSets {
    overrides: HashMap<LangCode, Vec<char>>,
}

const LATIN_TERMINALS: &[char] = &['.', '!', '?', '…'];
const DANDA_TERMINALS: &[char] = &['.', '!', '?', '…', '।', '॥'];
const ARABIC_TERMINALS: &[char] = &['.', '!', '?', '…', '۔', '؟'];


impl TerminalSets {
    pub fn with_override(mut self, lang: LangCode, terminals: Vec<char>) -> Self {
        self.overrides.insert(lang, terminals);
        self
    }

    pub fn terminals(&self, lang: LangCode) -> &[char] {
        if let Some(t) = self.overrides.get(&lang) {
            return t;
        }
        default_terminals(lang)
    }
}

pub fn default_terminals(lang: LangCode) -> &'static [char] {
    use LangCode::*;
    match lang {
        Hin | Mar | Npi | Ben | Asm | Mni | Pan | Ory => DANDA_TERMINALS,
        Urd | Snd => ARABIC_TERMINALS,
        _ => LATIN_TERMINALS,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedDoc {
    pub sentences: Vec<String>,
    pub sentinel: char,
}

/// Replaces every terminal punctuation mark with `sentinel`.
pub fn mark_terminals(cleaned: &str, terminals: &[char], sentinel: char) -> Result<String> {
    if cleaned.contains(sentinel) {
        return Err(Error::Precondition(format!(
            "input already contains sentinel {sentinel:?}"
        )));
    }
    Ok(cleaned
        .chars()
        .map(|c| if terminals.contains(&c) { sentinel } else { c })
        .collect())
}

pub fn segment_sentences(cleaned: &str, lang: LangCode, sentinel: char) -> Result<NormalizedDoc> {
    segment_sentences_with(cleaned, TerminalSets::default().terminals(lang), sentinel)
}

pub fn segment_sentences_with(
    cleaned: &str,
    terminals: &[char],
    sentinel: char,
) -> Result<NormalizedDoc> {
    let marked = mark_terminals(cleaned, terminals, sentinel)?;
    let sentences = marked
        .split(sentinel)
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(str::to_owned)
        .collect();
    Ok(NormalizedDoc { sentences, sentinel })
}
