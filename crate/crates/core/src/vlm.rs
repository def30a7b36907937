//! Vision-language model backends, failure-localization parsing and
//! narrative requests.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::LazyLock;
use std::time::Duration;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::evidence::{parse_context, KiteContext, PromptBundle, PromptImage, ImageRole};
use crate::http::{post_json, HttpError, RetryPolicy};

pub const LOCALIZATION_INSTRUCTION: &str = "Identify the frame where the robot's execution first visibly deviates from the intended task. \
Reply with strict JSON only, exactly of the form {\"candidates\":[{\"frame_num\": INT, \"confidence\": FLOAT}, ...]}, \
listing up to three candidate frame numbers taken from the [KF ...] tags with confidence values in [0,1].";

pub const NARRATIVE_INSTRUCTION: &str = "Using the storyboard and the context above, write a concise causal narrative of what happened in this episode. \
Refer to keyframes explicitly as \"KF <frame index>\" with their timestamps. \
Finish with one high-level and one low-level correction on separate lines starting with \"High-level:\" and \"Low-level:\".";

/// Upper bound on localization candidates kept.
pub const MAX_CANDIDATES: usize = 3;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum VlmError {
    #[error("TIMEOUT: {0}")]
    Timeout(String),
    #[error("BACKEND_UNREACHABLE: {0}")]
    Unreachable(String),
    #[error("BACKEND_MALFORMED: {0}")]
    Malformed(String),
    #[error("NO_JSON_FOUND: response contains no JSON object")]
    NoJsonFound,
    #[error("SCHEMA_VIOLATION: {0}")]
    SchemaViolation(String),
    #[error("NO_CANDIDATES: localization produced no candidates")]
    NoCandidates,
    #[error("INVALID_CONFIG: {0}")]
    InvalidConfig(String),
}

impl VlmError {
    pub fn code(&self) -> &'static str {
        match self {
            Self::Timeout(_) => "TIMEOUT",
            Self::Unreachable(_) => "BACKEND_UNREACHABLE",
            Self::Malformed(_) => "BACKEND_MALFORMED",
            Self::NoJsonFound => "NO_JSON_FOUND",
            Self::SchemaViolation(_) => "SCHEMA_VIOLATION",
            Self::NoCandidates => "NO_CANDIDATES",
            Self::InvalidConfig(_) => "INVALID_CONFIG",
        }
    }
}

impl From<HttpError> for VlmError {
    fn from(e: HttpError) -> Self {
        match e {
            HttpError::Timeout { .. } => Self::Timeout(e.to_string()),
            HttpError::Unreachable { .. } => Self::Unreachable(e.to_string()),
            HttpError::Malformed(m) => Self::Malformed(m),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum VlmKind {
    HttpChat,
    Mock,
}

fn default_timeout() -> f64 {
    120.0
}

fn default_retries() -> u32 {
    2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VlmBackendRef {
    pub kind: VlmKind,
    /// Chat endpoint URL, or the mock script path for MOCK.
    pub endpoint: String,
    #[serde(default)]
    pub model_name: String,
    #[serde(default = "default_timeout")]
    pub timeout_secs: f64,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
}

impl VlmBackendRef {
    pub fn new(kind: VlmKind, endpoint: impl Into<String>, model_name: impl Into<String>) -> Self {
        Self {
            kind,
            endpoint: endpoint.into(),
            model_name: model_name.into(),
            timeout_secs: default_timeout(),
            max_retries: default_retries(),
        }
    }

    pub fn validate(&self) -> Result<(), VlmError> {
        if !(self.timeout_secs.is_finite() && self.timeout_secs > 0.0) {
            return Err(VlmError::InvalidConfig(format!("timeout must be > 0, got {}", self.timeout_secs)));
        }
        Ok(())
    }

    pub fn connect(&self) -> Result<Box<dyn VlmBackend>, VlmError> {
        self.validate()?;
        Ok(match self.kind {
            VlmKind::HttpChat => Box::new(HttpChat {
                url: self.endpoint.clone(),
                model: self.model_name.clone(),
                timeout: Duration::from_secs_f64(self.timeout_secs),
                retry: RetryPolicy { max_retries: self.max_retries, ..RetryPolicy::default() },
            }),
            VlmKind::Mock if self.endpoint.is_empty() => Box::new(MockVlm::new(MockScript::default())),
            VlmKind::Mock => Box::new(MockVlm::from_file(Path::new(&self.endpoint))?),
        })
    }
}

pub trait VlmBackend: Send + Sync {
    fn complete(&self, bundle: &PromptBundle) -> Result<String, VlmError>;
}

/// Send a bundle and return the completion text, rejecting empty replies.
pub fn query(backend: &dyn VlmBackend, bundle: &PromptBundle) -> Result<String, VlmError> {
    let text = backend.complete(bundle)?;
    if text.trim().is_empty() {
        return Err(VlmError::Malformed("empty completion".into()));
    }
    Ok(text)
}

struct HttpChat {
    url: String,
    model: String,
    timeout: Duration,
    retry: RetryPolicy,
}

/// Chat-completions request body: images first, then the prompt text.
pub fn chat_request(model: &str, bundle: &PromptBundle) -> Value {
    let mut content: Vec<Value> = bundle
        .images
        .iter()
        .map(|img| json!({"type": "image", "image": B64.encode(&img.png)}))
        .collect();
    content.push(json!({"type": "text", "text": bundle.text}));
    json!({"model": model, "messages": [{"role": "user", "content": content}]})
}

impl VlmBackend for HttpChat {
    fn complete(&self, bundle: &PromptBundle) -> Result<String, VlmError> {
        let body = post_json(&self.url, &chat_request(&self.model, bundle), self.timeout, &self.retry)?;
        if body.trim().is_empty() {
            return Err(VlmError::Malformed("empty response body".into()));
        }
        let v: Value = serde_json::from_str(&body).map_err(|e| VlmError::Malformed(e.to_string()))?;
        v.pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| VlmError::Malformed("missing choices[0].message.content".into()))
    }
}

/// Hex SHA-256 of a question; the lookup key for scripted responses.
pub fn question_key(question: &str) -> String {
    Sha256::digest(question.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
}

/// Scripted completions. `by_question` entries are hashed on load and merged
/// into `responses`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MockScript {
    pub responses: BTreeMap<String, String>,
    pub by_question: BTreeMap<String, String>,
    pub default: Option<String>,
}

pub struct MockVlm {
    responses: BTreeMap<String, String>,
    default: Option<String>,
    calls: AtomicUsize,
}

impl MockVlm {
    pub fn new(script: MockScript) -> Self {
        let mut responses = script.responses;
        for (q, a) in script.by_question {
            responses.insert(question_key(&q), a);
        }
        Self { responses, default: script.default, calls: AtomicUsize::new(0) }
    }

    pub fn from_file(path: &Path) -> Result<Self, VlmError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| VlmError::InvalidConfig(format!("mock script {}: {e}", path.display())))?;
        let script = serde_json::from_str(&text).map_err(|e| VlmError::InvalidConfig(format!("mock script: {e}")))?;
        Ok(Self::new(script))
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl VlmBackend for MockVlm {
    fn complete(&self, bundle: &PromptBundle) -> Result<String, VlmError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.responses
            .get(&question_key(&bundle.question))
            .or(self.default.as_ref())
            .cloned()
            .ok_or_else(|| VlmError::Malformed("no scripted response for this question".into()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub frame_num: i64,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalizationResult {
    pub candidates: Vec<Candidate>,
    pub raw_text: String,
    /// Frame numbers that were dropped for lying outside the valid set.
    #[serde(default)]
    pub dropped_frames: Vec<i64>,
}

impl LocalizationResult {
    /// The candidates in the strict response schema.
    pub fn to_json(&self) -> String {
        serde_json::to_string(&json!({ "candidates": self.candidates })).expect("candidates serialize")
    }
}

/// First `{` position at which a complete JSON object parses.
fn first_json_object(raw: &str) -> Option<Value> {
    raw.match_indices('{').find_map(|(i, _)| {
        let mut stream = serde_json::Deserializer::from_str(&raw[i..]).into_iter::<Value>();
        match stream.next() {
            Some(Ok(v @ Value::Object(_))) => Some(v),
            _ => None,
        }
    })
}

fn schema(reason: impl Into<String>) -> VlmError {
    VlmError::SchemaViolation(reason.into())
}

/// Extract localization candidates from a free-form completion.
///
/// The first JSON object in the text is used, so code fences and surrounding
/// prose are tolerated. Confidences are clamped to `[0, 1]`; frames outside
/// `valid_frames` are dropped and listed in `dropped_frames`. The result is
/// sorted by confidence (descending) then frame (ascending) and capped at
/// [`MAX_CANDIDATES`].
pub fn parse_localization(raw: &str, valid_frames: &BTreeSet<i64>) -> Result<LocalizationResult, VlmError> {
    let obj = first_json_object(raw).ok_or(VlmError::NoJsonFound)?;
    let list = obj
        .get("candidates")
        .ok_or_else(|| schema("missing \"candidates\""))?
        .as_array()
        .ok_or_else(|| schema("\"candidates\" is not an array"))?;
    let mut candidates = Vec::with_capacity(list.len());
    let mut dropped_frames = Vec::new();
    for (i, c) in list.iter().enumerate() {
        let c = c.as_object().ok_or_else(|| schema(format!("candidate {i} is not an object")))?;
        let frame_num = c
            .get("frame_num")
            .ok_or_else(|| schema(format!("candidate {i} lacks frame_num")))?
            .as_i64()
            .ok_or_else(|| schema(format!("candidate {i} frame_num is not an integer")))?;
        let confidence = c
            .get("confidence")
            .ok_or_else(|| schema(format!("candidate {i} lacks confidence")))?
            .as_f64()
            .ok_or_else(|| schema(format!("candidate {i} confidence is not a number")))?;
        if !valid_frames.contains(&frame_num) {
            dropped_frames.push(frame_num);
            continue;
        }
        candidates.push(Candidate { frame_num, confidence: confidence.clamp(0.0, 1.0) });
    }
    candidates.sort_by(|a, b| b.confidence.total_cmp(&a.confidence).then(a.frame_num.cmp(&b.frame_num)));
    candidates.truncate(MAX_CANDIDATES);
    Ok(LocalizationResult { candidates, raw_text: raw.to_string(), dropped_frames })
}

pub fn top_candidate(r: &LocalizationResult) -> Result<Candidate, VlmError> {
    r.candidates.first().copied().ok_or(VlmError::NoCandidates)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Narrative {
    pub text: String,
    pub referenced_keyframes: Vec<usize>,
    pub high_level_correction: String,
    pub low_level_correction: String,
}

static KF_REF: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\bKF\s*#?(\d+)").unwrap());
static HIGH: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)high-level:[ \t]*(.*?)[ \t]*(?:low-level:|\n|$)").unwrap());
static LOW: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)low-level:[ \t]*(.*?)[ \t]*(?:high-level:|\n|$)").unwrap());

/// Pull keyframe references and the two corrections out of narrative text.
/// References are kept in first-mention order and, when `known` is
/// non-empty, limited to those indices.
pub fn extract_narrative(text: &str, known: &BTreeSet<usize>) -> Narrative {
    let mut refs = Vec::new();
    for c in KF_REF.captures_iter(text) {
        if let Ok(k) = c[1].parse::<usize>() {
            if (known.is_empty() || known.contains(&k)) && !refs.contains(&k) {
                refs.push(k);
            }
        }
    }
    let grab = |re: &Regex| re.captures(text).map(|c| c[1].trim().to_string()).unwrap_or_default();
    Narrative {
        text: text.to_string(),
        referenced_keyframes: refs,
        high_level_correction: grab(&HIGH),
        low_level_correction: grab(&LOW),
    }
}

/// Ask for a causal narrative over the storyboard and context.
pub fn request_narrative(backend: &dyn VlmBackend, ctx: &KiteContext, storyboard_png: &[u8]) -> Result<Narrative, VlmError> {
    let mut text = ctx.text.clone();
    if !text.ends_with('\n') {
        text.push('\n');
    }
    text.push_str(NARRATIVE_INSTRUCTION);
    let bundle = PromptBundle {
        images: vec![PromptImage { role: ImageRole::Rgb, keyframe_ordinal: 0, png: storyboard_png.to_vec() }],
        text,
        question: NARRATIVE_INSTRUCTION.to_string(),
    };
    let reply = query(backend, &bundle)?;
    let known: BTreeSet<usize> = parse_context(&ctx.text)
        .map(|e| e.keyframes.iter().map(|(i, _)| *i).collect())
        .unwrap_or_default();
    Ok(extract_narrative(&reply, &known))
}
