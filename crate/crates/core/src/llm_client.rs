//! Client for an OpenAI-compatible chat endpoint, carrying the punctuation
//! restoration and translation prompts, plus an offline fallback.

use std::collections::HashMap;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use serde_json::{json, Value};

use crate::corpus_model::LangCode;
use crate::error::{Error, Result};
use crate::text_normalize::{content_tokens, default_terminals};

pub const ENV_URL: &str = "SPEECHMINE_LLM_URL";
pub const ENV_MODEL: &str = "SPEECHMINE_LLM_MODEL";
pub const ENV_KEY: &str = "SPEECHMINE_LLM_KEY";

const PUNCTUATE_TEMPLATE: &str = include_str!("../config/prompts/punctuate.txt");
const TRANSLATE_NORMAL_TEMPLATE: &str = include_str!("../config/prompts/translate_normal.txt");
const TRANSLATE_COLLOQUIAL_TEMPLATE: &str =
    include_str!("../config/prompts/translate_colloquial.txt");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PromptTask {
    Punctuate,
    TranslateNormal,
    TranslateColloquial,
}

impl PromptTask {
    pub fn is_translation(self) -> bool {
        !matches!(self, PromptTask::Punctuate)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LangMeta {
    pub name: String,
    pub expected_terminator: String,
}

pub fn default_lang_meta() -> HashMap<LangCode, LangMeta> {
    LangCode::ALL
        .into_iter()
        .map(|l| {
            let terminator = match l {
                LangCode::Hin
                | LangCode::Mar
                | LangCode::Npi
                | LangCode::Ben
                | LangCode::Asm
                | LangCode::Mni
                | LangCode::Pan
                | LangCode::Ory => "।",
                LangCode::Urd | LangCode::Snd => "۔",
                _ => ".",
            };
            (
                l,
                LangMeta {
                    name: l.name().to_owned(),
                    expected_terminator: terminator.to_owned(),
                },
            )
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct PromptSpec {
    pub task: PromptTask,
    pub lang_meta: HashMap<LangCode, LangMeta>,
    pub body_template: String,
}

impl PromptSpec {
    pub fn builtin(task: PromptTask) -> Self {
        let body = match task {
            PromptTask::Punctuate => PUNCTUATE_TEMPLATE,
            PromptTask::TranslateNormal => TRANSLATE_NORMAL_TEMPLATE,
            PromptTask::TranslateColloquial => TRANSLATE_COLLOQUIAL_TEMPLATE,
        };
        PromptSpec {
            task,
            lang_meta: default_lang_meta(),
            body_template: body.to_owned(),
        }
    }

    pub fn with_template_file(mut self, path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        self.body_template = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(self)
    }

    fn describe(&self, lang: LangCode) -> Result<String> {
        let meta = self.lang_meta.get(&lang).ok_or_else(|| {
            Error::Config(format!("no prompt metadata for language {lang}"))
        })?;
        Ok(format!(
            "{} ({lang}; expected sentence terminator: \"{}\")",
            meta.name, meta.expected_terminator
        ))
    }
}

pub fn build_prompt(
    spec: &PromptSpec,
    text: &str,
    src: LangCode,
    tgt: Option<LangCode>,
) -> Result<String> {
    if text.trim().is_empty() {
        return Err(Error::Precondition("prompt text is empty".into()));
    }
    match (spec.task.is_translation(), tgt) {
        (true, None) => {
            return Err(Error::Precondition("translation prompt needs a target language".into()))
        }
        (false, Some(_)) => {
            return Err(Error::Precondition("punctuation prompt takes no target language".into()))
        }
        _ => {}
    }
    if spec.body_template.matches("{TEXT}").count() != 1 {
        return Err(Error::Config("template must contain {TEXT} exactly once".into()));
    }
    let mut out = spec.body_template.replace("{SRC_LANG}", &spec.describe(src)?);
    if let Some(tgt) = tgt {
        out = out.replace("{TGT_LANG}", &spec.describe(tgt)?);
    }
    // Substitute the text last so placeholders inside it stay literal.
    Ok(out.replace("{TEXT}", text))
}

#[derive(Debug, Clone, PartialEq)]
pub struct LlmResponse {
    pub raw: String,
    pub parsed_text: String,
    pub valid: bool,
    pub violation: Option<String>,
}

/// Checks that `output` differs from `input` only in punctuation and
/// whitespace.
pub fn validate_punctuation(input: &str, output: &str) -> LlmResponse {
    let want = content_tokens(input);
    let got = content_tokens(output);
    let violation = match want.iter().zip(&got).position(|(a, b)| a != b) {
        Some(i) => Some(format!("token {i}: expected {:?}, found {:?}", want[i], got[i])),
        None if got.len() > want.len() => Some(format!(
            "token {}: unexpected extra word {:?}",
            want.len(),
            got[want.len()]
        )),
        None if got.len() < want.len() => Some(format!(
            "token {}: missing word {:?}",
            got.len(),
            want[got.len()]
        )),
        None => None,
    };
    let valid = violation.is_none() && !output.trim().is_empty();
    LlmResponse {
        raw: output.to_owned(),
        parsed_text: output.to_owned(),
        valid,
        violation: violation.or_else(|| (!valid).then(|| "empty output".to_owned())),
    }
}

/// Settings for the HTTP chat endpoint.
#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub url: String,
    pub model: String,
    pub api_key: Option<String>,
    pub temperature: f32,
    pub timeout: Duration,
    pub max_attempts: u32,
    /// Delay before the first retry; doubles on each further retry.
    pub backoff_base: Duration,
    /// Field of the JSON object in the model reply that holds the text.
    pub payload_field: String,
    pub max_in_flight: usize,
}

impl ServiceConfig {
    pub fn new(url: impl Into<String>, model: impl Into<String>) -> Self {
        ServiceConfig {
            url: url.into(),
            model: model.into(),
            api_key: None,
            temperature: 0.0,
            timeout: Duration::from_secs(120),
            max_attempts: 3,
            backoff_base: Duration::from_secs(1),
            payload_field: "text".into(),
            max_in_flight: 4,
        }
    }

    pub fn from_env() -> Result<Self> {
        let url = std::env::var(ENV_URL)
            .map_err(|_| Error::Config(format!("{ENV_URL} is not set")))?;
        let model = std::env::var(ENV_MODEL)
            .map_err(|_| Error::Config(format!("{ENV_MODEL} is not set")))?;
        let mut cfg = ServiceConfig::new(url, model);
        cfg.api_key = std::env::var(ENV_KEY).ok();
        Ok(cfg)
    }
}

fn strip_code_fence(s: &str) -> &str {
    let t = s.trim();
    let Some(rest) = t.strip_prefix("```") else {
        return t;
    };
    let rest = rest.strip_prefix("json").unwrap_or(rest);
    rest.strip_suffix("```").unwrap_or(rest).trim()
}

/// Extracts `payload_field` from a chat-completion response body.
pub fn parse_chat_response(body: &str, payload_field: &str) -> Result<String> {
    let protocol = |message: String| Error::Protocol {
        message,
        raw: body.to_owned(),
    };
    let v: Value = serde_json::from_str(body).map_err(|e| protocol(format!("response is not JSON: {e}")))?;
    let content = v
        .pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .ok_or_else(|| protocol("missing choices[0].message.content".into()))?;
    let inner: Value = serde_json::from_str(strip_code_fence(content))
        .map_err(|e| protocol(format!("model reply is not JSON: {e}")))?;
    let text = inner
        .get(payload_field)
        .and_then(Value::as_str)
        .ok_or_else(|| protocol(format!("model reply has no string field {payload_field:?}")))?;
    Ok(text.to_owned())
}

enum Attempt {
    Retry(String),
    Fatal(Error),
}

fn post_once(agent: &ureq::Agent, cfg: &ServiceConfig, body: &Value) -> Result<String, Attempt> {
    let mut req = agent.post(&cfg.url).header("Content-Type", "application/json");
    if let Some(key) = &cfg.api_key {
        req = req.header("Authorization", &format!("Bearer {key}"));
    }
    let mut resp = req
        .send(body.to_string())
        .map_err(|e| Attempt::Retry(e.to_string()))?;
    let status = resp.status().as_u16();
    let text = resp
        .body_mut()
        .read_to_string()
        .map_err(|e| Attempt::Retry(e.to_string()))?;
    match status {
        200..=299 => Ok(text),
        429 | 500..=599 => Err(Attempt::Retry(format!("HTTP {status}"))),
        _ => Err(Attempt::Fatal(Error::Transport(format!("HTTP {status}: {text}")))),
    }
}

/// Sends one chat request, retrying transient failures with exponential
/// backoff. The returned response is unvalidated (`valid` reflects only that
/// a payload was extracted).
pub fn call_llm(prompt: &str, cfg: &ServiceConfig) -> Result<LlmResponse> {
    let agent: ureq::Agent = ureq::Agent::config_builder()
        .timeout_global(Some(cfg.timeout))
        .http_status_as_error(false)
        .build()
        .into();
    let body = json!({
        "model": cfg.model,
        "messages": [{"role": "user", "content": prompt}],
        "temperature": cfg.temperature,
    });
    let attempts = cfg.max_attempts.max(1);
    let mut last = String::new();
    for attempt in 0..attempts {
        if attempt > 0 {
            std::thread::sleep(cfg.backoff_base * (1 << (attempt - 1)));
        }
        match post_once(&agent, cfg, &body) {
            Ok(raw) => {
                let parsed_text = parse_chat_response(&raw, &cfg.payload_field)?;
                let valid = !parsed_text.trim().is_empty();
                return Ok(LlmResponse {
                    raw,
                    parsed_text,
                    valid,
                    violation: (!valid).then(|| "empty payload".to_owned()),
                });
            }
            Err(Attempt::Fatal(e)) => return Err(e),
            Err(Attempt::Retry(msg)) => last = msg,
        }
    }
    Err(Error::Transport(format!(
        "{} after {attempts} attempts: {last}",
        cfg.url
    )))
}

/// Deterministic offline stand-in: appends the language's expected terminator
/// unless the text already ends with one of its terminal marks.
pub fn fallback_complete(text: &str, lang: LangCode, meta: &HashMap<LangCode, LangMeta>) -> Result<String> {
    let trimmed = text.trim_end();
    let meta = meta
        .get(&lang)
        .ok_or_else(|| Error::Config(format!("no prompt metadata for language {lang}")))?;
    let ends_terminated = trimmed
        .chars()
        .last()
        .is_some_and(|c| default_terminals(lang).contains(&c) || meta.expected_terminator.ends_with(c));
    if trimmed.is_empty() || ends_terminated {
        Ok(trimmed.to_owned())
    } else {
        Ok(format!("{trimmed}{}", meta.expected_terminator))
    }
}

#[derive(Debug, Clone)]
pub enum LlmMode {
    Service(ServiceConfig),
    Fallback,
}

#[derive(Debug, Clone)]
pub struct LlmClient {
    mode: LlmMode,
    punctuate: PromptSpec,
    normal: PromptSpec,
    colloquial: PromptSpec,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TranslationStyle {
    Normal,
    Colloquial,
}

impl LlmClient {
    pub fn new(mode: LlmMode) -> Self {
        LlmClient {
            mode,
            punctuate: PromptSpec::builtin(PromptTask::Punctuate),
            normal: PromptSpec::builtin(PromptTask::TranslateNormal),
            colloquial: PromptSpec::builtin(PromptTask::TranslateColloquial),
        }
    }

    pub fn fallback() -> Self {
        Self::new(LlmMode::Fallback)
    }

    pub fn with_prompt(mut self, spec: PromptSpec) -> Self {
        match spec.task {
            PromptTask::Punctuate => self.punctuate = spec,
            PromptTask::TranslateNormal => self.normal = spec,
            PromptTask::TranslateColloquial => self.colloquial = spec,
        }
        self
    }

    pub fn mode(&self) -> &LlmMode {
        &self.mode
    }

    /// Restores punctuation. An invalid reply comes back with `valid = false`
    /// and the violation; callers decide whether to keep the input instead.
    pub fn punctuate(&self, text: &str, lang: LangCode) -> Result<LlmResponse> {
        let prompt = build_prompt(&self.punctuate, text, lang, None)?;
        let reply = match &self.mode {
            LlmMode::Fallback => fallback_complete(text, lang, &self.punctuate.lang_meta)?,
            LlmMode::Service(cfg) => call_llm(&prompt, cfg)?.parsed_text,
        };
        Ok(validate_punctuation(text, &reply))
    }

    /// Translation replies are checked for JSON shape only.
    pub fn translate(
        &self,
        text: &str,
        src: LangCode,
        tgt: LangCode,
        style: TranslationStyle,
    ) -> Result<LlmResponse> {
        let spec = match style {
            TranslationStyle::Normal => &self.normal,
            TranslationStyle::Colloquial => &self.colloquial,
        };
        let prompt = build_prompt(spec, text, src, Some(tgt))?;
        match &self.mode {
            LlmMode::Fallback => {
                let out = fallback_complete(text, tgt, &spec.lang_meta)?;
                Ok(LlmResponse {
                    raw: out.clone(),
                    parsed_text: out,
                    valid: true,
                    violation: None,
                })
            }
            LlmMode::Service(cfg) => call_llm(&prompt, cfg),
        }
    }

    /// Punctuates many texts with at most `max_in_flight` requests at once.
    /// Results are returned in input order.
    pub fn punctuate_batch(&self, items: &[(String, LangCode)]) -> Vec<Result<LlmResponse>> {
        let limit = match &self.mode {
            LlmMode::Service(cfg) => cfg.max_in_flight.max(1),
            LlmMode::Fallback => 1,
        }
        .min(items.len().max(1));
        let next = AtomicUsize::new(0);
        let results: Mutex<Vec<Option<Result<LlmResponse>>>> =
            Mutex::new((0..items.len()).map(|_| None).collect());
        std::thread::scope(|scope| {
            for _ in 0..limit {
                scope.spawn(|| loop {
                    let id = next.fetch_add(1, Ordering::Relaxed);
                    let Some((text, lang)) = items.get(id) else {
                        break;
                    };
                    let r = self.punctuate(text, *lang);
                    results.lock().unwrap()[id] = Some(r);
                });
            }
        });
        results
            .into_inner()
            .unwrap()
            .into_iter()
            .map(|r| r.expect("every request id is answered"))
            .collect()
    }
}
