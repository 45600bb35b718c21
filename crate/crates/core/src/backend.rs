//! Text-generation backends.
//!
//! Every pipeline stage produces text through the [`TextBackend`] trait, so a
//! whole run can be served by a remote model ([`HttpBackend`]), replayed from
//! canned fixtures ([`ScriptedBackend`]), or mixed per stage through a
//! [`BackendRouter`]. Chat framing is part of the prompt text itself (the
//! template layer renders it); backends only move strings.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};

/// Pipeline stage a generation request belongs to.
///
/// Tags let a router serve different stages from different models and let
/// tests count traffic per stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StageTag {
    ToolGen,
    RelatedGen,
    InstructionGen,
    ReasoningGen,
    Select,
    VqGen,
    VqAnswer,
    ParamGen,
    ParamVerify,
    CallConstruct,
}

impl StageTag {
    pub const ALL: [StageTag; 10] = [
        StageTag::ToolGen,
        StageTag::RelatedGen,
        StageTag::InstructionGen,
        StageTag::ReasoningGen,
        StageTag::Select,
        StageTag::VqGen,
        StageTag::VqAnswer,
        StageTag::ParamGen,
        StageTag::ParamVerify,
        StageTag::CallConstruct,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            StageTag::ToolGen => "tool-gen",
            StageTag::RelatedGen => "related-gen",
            StageTag::InstructionGen => "instruction-gen",
            StageTag::ReasoningGen => "reasoning-gen",
            StageTag::Select => "select",
            StageTag::VqGen => "vq-gen",
            StageTag::VqAnswer => "vq-answer",
            StageTag::ParamGen => "param-gen",
            StageTag::ParamVerify => "param-verify",
            StageTag::CallConstruct => "call-construct",
        }
    }
}

impl fmt::Display for StageTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for StageTag {
    type Err = BackendError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        StageTag::ALL
            .iter()
            .copied()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| BackendError::UnknownStage(s.to_string()))
    }
}

/// Decoding controls sent with every request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingParams {
    pub temperature: f64,
    pub top_p: f64,
    pub max_tokens: u32,
    pub seed: Option<u64>,
}

impl Default for SamplingParams {
    fn default() -> Self {
        SamplingParams {
            temperature: 0.7,
            top_p: 0.9,
            max_tokens: 512,
            seed: None,
        }
    }
}

impl SamplingParams {
    pub fn with_seed(seed: u64) -> Self {
        SamplingParams {
            seed: Some(seed),
            ..SamplingParams::default()
        }
    }
}

/// One generation request: the full prompt text plus decoding controls.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRequest {
    pub prompt: String,
    pub params: SamplingParams,
    pub tag: StageTag,
}

impl GenerationRequest {
    pub fn new(prompt: impl Into<String>, tag: StageTag) -> Self {
        GenerationRequest {
            prompt: prompt.into(),
            params: SamplingParams::default(),
            tag,
        }
    }

    pub fn seeded(prompt: impl Into<String>, tag: StageTag, seed: u64) -> Self {
        GenerationRequest {
            prompt: prompt.into(),
            params: SamplingParams::with_seed(seed),
            tag,
        }
    }

    fn validate(&self) -> Result<(), BackendError> {
        if self.prompt.is_empty() {
            return Err(BackendError::EmptyPrompt);
        }
        let p = &self.params;
        if p.temperature.is_nan() || p.temperature < 0.0 {
            return Err(BackendError::InvalidParams(format!(
                "temperature {} out of range",
                p.temperature
            )));
        }
        if !(p.top_p > 0.0 && p.top_p <= 1.0) {
            return Err(BackendError::InvalidParams(format!(
                "top_p {} out of range",
                p.top_p
            )));
        }
        if p.max_tokens == 0 {
            return Err(BackendError::InvalidParams("max_tokens must be positive".into()));
        }
        Ok(())
    }
}

/// Model output for one request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationResponse {
    pub text: String,
    pub backend_id: String,
    /// Set when the backend stopped early; only then may `text` be empty.
    pub truncated: bool,
}

/// A (stage, prompt, response) triple recorded while running an episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    pub tag: StageTag,
    pub prompt: String,
    pub response: String,
}

#[derive(Debug, thiserror::Error)]
pub enum BackendError {
    #[error("prompt must not be empty")]
    EmptyPrompt,
    #[error("invalid sampling params: {0}")]
    InvalidParams(String),
    #[error("unknown stage tag `{0}`")]
    UnknownStage(String),
    #[error("transport failure talking to the endpoint: {0}")]
    Transport(String),
    #[error("endpoint returned a malformed response: {0}")]
    Protocol(String),
    #[error("no scripted rule matches {tag} prompt starting {prompt_head:?}")]
    UnmatchedScript { tag: StageTag, prompt_head: String },
    #[error("bad scripted rule: {0}")]
    BadRule(String),
}

/// Anything that can turn a prompt into a continuation.
pub trait TextBackend: Send + Sync {
    fn generate(&self, request: &GenerationRequest) -> Result<GenerationResponse, BackendError>;
    fn id(&self) -> &str;
}

// ---------------------------------------------------------------------------
// Scripted backend
// ---------------------------------------------------------------------------

/// On-disk shape of one scripted rule.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScriptRuleFile {
    /// Substring to find in the prompt, or a regex when `regex` is set.
    pub r#match: String,
    pub response: String,
    #[serde(default)]
    pub once: bool,
    #[serde(default)]
    pub regex: bool,
}

enum Matcher {
    Substring(String),
    Pattern(regex::Regex),
}

impl Matcher {
    fn matches(&self, prompt: &str) -> bool {
        match self {
            Matcher::Substring(s) => prompt.contains(s.as_str()),
            Matcher::Pattern(re) => re.is_match(prompt),
        }
    }
}

struct ScriptRule {
    matcher: Matcher,
    response: String,
    once: bool,
}

#[derive(Default)]
struct ScriptState {
    consumed: Vec<bool>,
    requests: Vec<Transcript>,
    calls_by_tag: HashMap<StageTag, usize>,
}

/// Deterministic test double that answers prompts from an ordered rule list.
///
/// The first live rule whose matcher hits the prompt wins; a rule marked
/// `once` is dead after it fires. A prompt no rule matches is an error, so a
/// fixture gap fails loudly instead of feeding empty text downstream. All
/// traffic is recorded and countable per stage.
pub struct ScriptedBackend {
    rules: Vec<ScriptRule>,
    state: Mutex<ScriptState>,
    id: String,
}

impl ScriptedBackend {
    pub fn new(rules: Vec<ScriptRuleFile>) -> Result<Self, BackendError> {
        let compiled = rules
            .into_iter()
            .map(|r| {
                let matcher = if r.regex {
                    let re = regex::Regex::new(&r.r#match)
                        .map_err(|e| BackendError::BadRule(format!("{}: {e}", r.r#match)))?;
                    Matcher::Pattern(re)
                } else {
                    Matcher::Substring(r.r#match)
                };
                Ok(ScriptRule {
                    matcher,
                    response: r.response,
                    once: r.once,
                })
            })
            .collect::<Result<Vec<_>, BackendError>>()?;
        let n = compiled.len();
        Ok(ScriptedBackend {
            rules: compiled,
            state: Mutex::new(ScriptState {
                consumed: vec![false; n],
                ..ScriptState::default()
            }),
            id: "scripted".to_string(),
        })
    }

    pub fn from_json(text: &str) -> Result<Self, BackendError> {
        let rules: Vec<ScriptRuleFile> =
            serde_json::from_str(text).map_err(|e| BackendError::BadRule(e.to_string()))?;
        ScriptedBackend::new(rules)
    }

    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.id = id.into();
        self
    }

    /// Every request served so far, in order.
    pub fn requests(&self) -> Vec<Transcript> {
        self.state.lock().unwrap().requests.clone()
    }

    /// How many requests carried the given stage tag.
    pub fn calls_for(&self, tag: StageTag) -> usize {
        self.state
            .lock()
            .unwrap()
            .calls_by_tag
            .get(&tag)
            .copied()
            .unwrap_or(0)
    }

    /// Stage tags of all requests, in serving order.
    pub fn tag_sequence(&self) -> Vec<StageTag> {
        self.state
            .lock()
            .unwrap()
            .requests
            .iter()
            .map(|t| t.tag)
            .collect()
    }
}

impl TextBackend for ScriptedBackend {
    fn generate(&self, request: &GenerationRequest) -> Result<GenerationResponse, BackendError> {
        request.validate()?;
        let mut state = self.state.lock().unwrap();
        let hit = self
            .rules
            .iter()
            .enumerate()
            .find(|(i, rule)| !(rule.once && state.consumed[*i]) && rule.matcher.matches(&request.prompt));
        let (idx, rule) = match hit {
            Some(found) => found,
            None => {
                return Err(BackendError::UnmatchedScript {
                    tag: request.tag,
                    prompt_head: request.prompt.chars().take(80).collect(),
                })
            }
        };
        if rule.once {
            state.consumed[idx] = true;
        }
        state.requests.push(Transcript {
            tag: request.tag,
            prompt: request.prompt.clone(),
            response: rule.response.clone(),
        });
        *state.calls_by_tag.entry(request.tag).or_insert(0) += 1;
        Ok(GenerationResponse {
            text: rule.response.clone(),
            backend_id: self.id.clone(),
            truncated: rule.response.is_empty(),
        })
    }

    fn id(&self) -> &str {
        &self.id
    }
}

// ---------------------------------------------------------------------------
// HTTP backend
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct WireRequest<'a> {
    prompt: &'a str,
    temperature: f64,
    top_p: f64,
    max_tokens: u32,
    seed: Option<u64>,
}

#[derive(Deserialize)]
struct WireResponse {
    text: String,
}

/// Remote model endpoint speaking a one-shot POST protocol.
pub struct HttpBackend {
    url: String,
    token: Option<String>,
    client: reqwest::blocking::Client,
    retries: u32,
    backoff: Duration,
    id: String,
}

impl HttpBackend {
    pub fn new(url: impl Into<String>) -> Self {
        let url = url.into();
        HttpBackend {
            id: format!("http:{url}"),
            url,
            token: None,
            client: reqwest::blocking::Client::builder()
                .timeout(Duration::from_secs(120))
                .build()
                .expect("default HTTP client"),
            retries: 2,
            backoff: Duration::from_millis(250),
        }
    }

    /// Reads TOOLVERIFY_ENDPOINT and TOOLVERIFY_TOKEN.
    pub fn from_env() -> Result<Self, BackendError> {
        let url = std::env::var("TOOLVERIFY_ENDPOINT")
            .map_err(|_| BackendError::Transport("TOOLVERIFY_ENDPOINT is not set".into()))?;
        let mut backend = HttpBackend::new(url);
        if let Ok(token) = std::env::var("TOOLVERIFY_TOKEN") {
            if !token.is_empty() {
                backend.token = Some(token);
            }
        }
        Ok(backend)
    }

    pub fn with_token(mut self, token: impl Into<String>) -> Self {
        self.token = Some(token.into());
        self
    }

    pub fn with_retries(mut self, retries: u32, backoff: Duration) -> Self {
        self.retries = retries;
        self.backoff = backoff;
        self
    }

    fn post_once(&self, request: &GenerationRequest) -> Result<GenerationResponse, BackendError> {
        let body = WireRequest {
            prompt: &request.prompt,
            temperature: request.params.temperature,
            top_p: request.params.top_p,
            max_tokens: request.params.max_tokens,
            seed: request.params.seed,
        };
        let mut call = self.client.post(&self.url).json(&body);
        if let Some(token) = &self.token {
            call = call.bearer_auth(token);
        }
        let response = call.send().map_err(|e| BackendError::Transport(e.to_string()))?;
        let status = response.status();
        if !status.is_success() {
            return Err(BackendError::Protocol(format!("HTTP status {status}")));
        }
        let wire: WireResponse = response
            .json()
            .map_err(|e| BackendError::Protocol(e.to_string()))?;
        if wire.text.is_empty() {
            return Err(BackendError::Protocol("empty completion".into()));
        }
        Ok(GenerationResponse {
            text: wire.text,
            backend_id: self.id.clone(),
            truncated: false,
        })
    }
}

impl TextBackend for HttpBackend {
    fn generate(&self, request: &GenerationRequest) -> Result<GenerationResponse, BackendError> {
        request.validate()?;
        let mut wait = self.backoff;
        let mut attempt = 0;
        loop {
            match self.post_once(request) {
                Ok(response) => return Ok(response),
                // Only transport failures are worth retrying; a malformed
                // response will be malformed again.
                Err(BackendError::Transport(detail)) if attempt < self.retries => {
                    attempt += 1;
                    let _ = detail;
                    std::thread::sleep(wait);
                    wait *= 2;
                }
                Err(other) => return Err(other),
            }
        }
    }

    fn id(&self) -> &str {
        &self.id
    }
}

// ---------------------------------------------------------------------------
// Router
// ---------------------------------------------------------------------------

/// Maps stage tags to backends.
///
/// One default backend serves everything unless a stage has an override. The
/// second-opinion parameter prediction gets its own slot because it shares
/// the `param-gen` tag with the primary prediction while needing a different
/// model.
pub struct BackendRouter {
    default: std::sync::Arc<dyn TextBackend>,
    overrides: HashMap<StageTag, std::sync::Arc<dyn TextBackend>>,
    param_alt: Option<std::sync::Arc<dyn TextBackend>>,
}

impl BackendRouter {
    pub fn new(default: std::sync::Arc<dyn TextBackend>) -> Self {
        BackendRouter {
            default,
            overrides: HashMap::new(),
            param_alt: None,
        }
    }

    pub fn with_override(mut self, tag: StageTag, backend: std::sync::Arc<dyn TextBackend>) -> Self {
        self.overrides.insert(tag, backend);
        self
    }

    pub fn with_param_alt(mut self, backend: std::sync::Arc<dyn TextBackend>) -> Self {
        self.param_alt = Some(backend);
        self
    }

    pub fn for_stage(&self, tag: StageTag) -> &dyn TextBackend {
        self.overrides
            .get(&tag)
            .map(|b| b.as_ref())
            .unwrap_or(self.default.as_ref())
    }

    /// Backend for the second parameter prediction; falls back to the
    /// regular `param-gen` route when no alternate is configured.
    pub fn param_alt(&self) -> &dyn TextBackend {
        self.param_alt
            .as_ref()
            .map(|b| b.as_ref())
            .unwrap_or_else(|| self.for_stage(StageTag::ParamGen))
    }
}
