//! Tool-call scoring by canonical equivalence, batch evaluation, and
//! optional live execution.
//!
//! A call string is reduced to a canonical form: HTTP verb, normalized base
//! URL, and a sorted map of decoded query parameters with numeric values
//! brought to one spelling. Two calls are equivalent when those parts match,
//! so scoring is insensitive to quoting, parameter order, percent-encoding,
//! and numeric formatting. Batch evaluation runs the full selection and
//! parameter pipeline per sample against a pooled candidate list.

use std::collections::{BTreeMap, HashMap};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::backend::{BackendRouter, StageTag};
use crate::paramgen::{self, ConstructionMode};
use crate::registry::{self, CandidateSet, Registry, RegistryError};
use crate::selector::{self, SelectOptions, VqCache};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("cannot parse call at byte {position}: {detail}")]
    Parse { detail: String, position: usize },
    #[error("gold call does not match any registry tool: {0}")]
    UnknownGoldTool(String),
    #[error(transparent)]
    Registry(#[from] RegistryError),
    #[error("bad evaluation input: {0}")]
    Precondition(String),
    #[error("live execution refused: {0}")]
    LiveRefused(String),
    #[error("live execution failed: {0}")]
    LiveTransport(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("task file line {line}: {detail}")]
    TaskFormat { line: usize, detail: String },
}

/// Literal value optional parameters take when absent.
pub const DEFAULT_NONE_TOKEN: &str = "none";

/// Brings numeric text to a single spelling; non-numeric text is only
/// trimmed. Integers keep full precision, everything else goes through the
/// shortest float round trip.
pub fn canonical_scalar(text: &str) -> String {
    let trimmed = text.trim();
    if let Ok(int) = trimmed.parse::<i128>() {
        return int.to_string();
    }
    if let Ok(float) = trimmed.parse::<f64>() {
        if float.is_finite() {
            return format!("{float}");
        }
    }
    trimmed.to_string()
}

/// Order- and encoding-independent form of an HTTP tool call.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CanonicalCall {
    pub method: String,
    pub base_url: String,
    pub params: BTreeMap<String, String>,
    pub auth_placeholder_stripped: bool,
}

fn value_is_auth_placeholder(value: &str) -> bool {
    value
        .strip_prefix('{')
        .and_then(|rest| rest.strip_suffix('}'))
        .is_some_and(registry::is_env_placeholder)
}

struct Token {
    text: String,
    position: usize,
}

fn tokenize(call: &str) -> Result<Vec<Token>, EvalError> {
    let mut tokens = Vec::new();
    let bytes = call.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i].is_ascii_whitespace() {
            i += 1;
            continue;
        }
        let start = i;
        let mut text = String::new();
        while i < bytes.len() && !bytes[i].is_ascii_whitespace() {
            let b = bytes[i];
            if b == b'\'' || b == b'"' {
                let quote = b;
                let close = call[i + 1..].find(quote as char).ok_or(EvalError::Parse {
                    detail: "unterminated quote".to_string(),
                    position: i,
                })?;
                text.push_str(&call[i + 1..i + 1 + close]);
                i += close + 2;
            } else {
                text.push(b as char);
                i += 1;
            }
        }
        tokens.push(Token {
            text,
            position: start,
        });
    }
    Ok(tokens)
}

fn looks_like_url(token: &str) -> bool {
    token.starts_with("http://") || token.starts_with("https://")
}

/// Parses a curl command or bare URL into its canonical form.
pub fn parse_call(call: &str) -> Result<CanonicalCall, EvalError> {
    let tokens = tokenize(call)?;
    if tokens.is_empty() {
        return Err(EvalError::Parse {
            detail: "empty call".to_string(),
            position: 0,
        });
    }
    let mut method = "GET".to_string();
    let mut url_token: Option<&Token> = None;
    if tokens[0].text == "curl" {
        let mut i = 1;
        while i < tokens.len() {
            let token = &tokens[i];
            match token.text.as_str() {
                "-X" | "--request" => {
                    let value = tokens.get(i + 1).ok_or(EvalError::Parse {
                        detail: "-X expects a method".to_string(),
                        position: token.position,
                    })?;
                    method = value.text.to_uppercase();
                    i += 2;
                }
                "-H" | "--header" | "-d" | "--data" | "--data-raw" | "-u" | "--user" | "-o"
                | "--output" => {
                    i += 2;
                }
                flag if flag.starts_with('-') => {
                    i += 1;
                }
                text if looks_like_url(text) => {
                    url_token = Some(token);
                    i += 1;
                }
                _ => {
                    return Err(EvalError::Parse {
                        detail: format!("unexpected token `{}`", token.text),
                        position: token.position,
                    })
                }
            }
        }
    } else if looks_like_url(&tokens[0].text) {
        url_token = Some(&tokens[0]);
        if tokens.len() > 1 {
            return Err(EvalError::Parse {
                detail: format!("unexpected token `{}` after URL", tokens[1].text),
                position: tokens[1].position,
            });
        }
    } else {
        return Err(EvalError::Parse {
            detail: format!("`{}` is neither curl nor a URL", tokens[0].text),
            position: tokens[0].position,
        });
    }
    let url_token = url_token.ok_or(EvalError::Parse {
        detail: "no URL found".to_string(),
        position: 0,
    })?;
    let url = url::Url::parse(&url_token.text).map_err(|e| EvalError::Parse {
        detail: e.to_string(),
        position: url_token.position,
    })?;
    if url.scheme() != "http" && url.scheme() != "https" {
        return Err(EvalError::Parse {
            detail: format!("unsupported scheme `{}`", url.scheme()),
            position: url_token.position,
        });
    }
    let host = url.host_str().ok_or(EvalError::Parse {
        detail: "URL has no host".to_string(),
        position: url_token.position,
    })?;
    let base_url = match url.port() {
        Some(port) => format!("{}://{}:{}{}", url.scheme(), host, port, url.path()),
        None => format!("{}://{}{}", url.scheme(), host, url.path()),
    };
    let mut params = BTreeMap::new();
    let mut auth_placeholder_stripped = false;
    for (name, value) in url.query_pairs() {
        if value_is_auth_placeholder(&value) {
            auth_placeholder_stripped = true;
            continue;
        }
        params.insert(name.to_string(), canonical_scalar(&value));
    }
    Ok(CanonicalCall {
        method,
        base_url,
        params,
        auth_placeholder_stripped,
    })
}

/// How absent optional parameters compare.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NonePolicy {
    /// none-valued parameters must appear literally on both sides.
    Strict,
    /// A parameter valued at the none token compares equal to an absent one.
    Lenient,
}

fn reduced_params(call: &CanonicalCall) -> BTreeMap<&str, &str> {
    call.params
        .iter()
        .filter(|(_, v)| !v.eq_ignore_ascii_case(DEFAULT_NONE_TOKEN))
        .map(|(k, v)| (k.as_str(), v.as_str()))
        .collect()
}

/// True when two canonical calls would hit the same endpoint with the same
/// arguments.
pub fn calls_equivalent(a: &CanonicalCall, b: &CanonicalCall, policy: NonePolicy) -> bool {
    if a.method != b.method || a.base_url != b.base_url {
        return false;
    }
    match policy {
        NonePolicy::Strict => a.params == b.params,
        NonePolicy::Lenient => reduced_params(a) == reduced_params(b),
    }
}

/// One evaluation sample.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TaskItem {
    pub instruction: String,
    pub gold_call: String,
    pub task: String,
}

/// Reads a line-delimited task file.
pub fn load_task_file(path: impl AsRef<std::path::Path>) -> Result<Vec<TaskItem>, EvalError> {
    let text = std::fs::read_to_string(path)?;
    let mut items = Vec::new();
    for (line_no, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let item: TaskItem = serde_json::from_str(line).map_err(|e| EvalError::TaskFormat {
            line: line_no + 1,
            detail: e.to_string(),
        })?;
        items.push(item);
    }
    Ok(items)
}

/// Outcome of one evaluated sample.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalRecord {
    pub instruction: String,
    pub gold_call: String,
    pub gold_tool: String,
    pub predicted_tool: Option<String>,
    pub predicted_call: Option<String>,
    pub selection_correct: bool,
    pub call_success: bool,
    /// First stage that went wrong, when the sample failed.
    pub failure_stage: Option<String>,
    pub flags: Vec<String>,
}

/// Aggregate results for one task.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TaskReport {
    pub task: String,
    pub n: usize,
    pub selection_accuracy: f64,
    pub success_rate: f64,
    pub failure_breakdown: BTreeMap<String, usize>,
    pub records: Vec<EvalRecord>,
}

impl TaskReport {
    fn from_records(task: &str, records: Vec<EvalRecord>) -> Self {
        let n = records.len();
        let selected = records.iter().filter(|r| r.selection_correct).count();
        let succeeded = records.iter().filter(|r| r.call_success).count();
        let mut failure_breakdown = BTreeMap::new();
        for record in &records {
            if let Some(stage) = &record.failure_stage {
                *failure_breakdown.entry(stage.clone()).or_insert(0) += 1;
            }
        }
        TaskReport {
            task: task.to_string(),
            n,
            selection_accuracy: percentage(selected, n),
            success_rate: percentage(succeeded, n),
            failure_breakdown,
            records,
        }
    }
}

fn percentage(part: usize, whole: usize) -> f64 {
    if whole == 0 {
        0.0
    } else {
        100.0 * part as f64 / whole as f64
    }
}

/// Pipeline toggles for a batch evaluation run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalConfig {
    pub tool_verify: bool,
    pub param_verify: bool,
    pub condition_on_instruction: bool,
    pub n_shots: usize,
    pub construction: ConstructionMode,
    pub none_policy: NonePolicy,
    pub workers: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            tool_verify: true,
            param_verify: true,
            condition_on_instruction: false,
            n_shots: 3,
            construction: ConstructionMode::Template,
            none_policy: NonePolicy::Strict,
            workers: 4,
        }
    }
}

/// Maps (method, base URL) of instantiated call templates back to tool
/// names, so gold calls resolve to their tools.
fn endpoint_index(registry: &Registry) -> Result<HashMap<(String, String), String>, EvalError> {
    let mut index = HashMap::new();
    for tool in registry.tools() {
        if tool.call_template.is_empty() {
            continue;
        }
        let rendered = registry::instantiate_template(&tool.name, &tool.call_template, |name| {
            tool.param(name).map(|p| p.name.clone())
        })?;
        let canonical = parse_call(&rendered).map_err(|e| {
            EvalError::Precondition(format!(
                "call template of `{}` does not parse: {e}",
                tool.name
            ))
        })?;
        let key = (canonical.method.clone(), canonical.base_url.clone());
        if let Some(existing) = index.insert(key, tool.name.clone()) {
            return Err(EvalError::Precondition(format!(
                "`{existing}` and `{}` share an endpoint; gold calls would be ambiguous",
                tool.name
            )));
        }
    }
    Ok(index)
}

fn resolve_gold_tool(
    index: &HashMap<(String, String), String>,
    gold: &CanonicalCall,
) -> Result<String, EvalError> {
    index
        .get(&(gold.method.clone(), gold.base_url.clone()))
        .cloned()
        .ok_or_else(|| EvalError::UnknownGoldTool(format!("{} {}", gold.method, gold.base_url)))
}

struct PreparedSample<'a> {
    item: &'a TaskItem,
    gold_tool: String,
    gold: CanonicalCall,
}

fn evaluate_sample(
    prepared: &PreparedSample,
    pool: &CandidateSet,
    registry: &Registry,
    router: &BackendRouter,
    cache: &VqCache,
    config: &EvalConfig,
) -> EvalRecord {
    let item = prepared.item;
    let gold_tool = prepared.gold_tool.as_str();
    let gold_canonical = &prepared.gold;
    let mut record = EvalRecord {
        instruction: item.instruction.clone(),
        gold_call: item.gold_call.clone(),
        gold_tool: gold_tool.to_string(),
        predicted_tool: None,
        predicted_call: None,
        selection_correct: false,
        call_success: false,
        failure_stage: None,
        flags: Vec::new(),
    };
    let mut candidates = pool.clone();
    candidates.ground_truth = Some(gold_tool.to_string());

    let opts = SelectOptions {
        verify: config.tool_verify,
        condition_on_instruction: config.condition_on_instruction,
    };
    let trace = match selector::verified_select(
        &item.instruction,
        &candidates,
        registry,
        router,
        cache,
        &opts,
    ) {
        Ok(trace) => trace,
        Err(e) => {
            record.failure_stage = Some("selection".to_string());
            record.flags.push(format!("selection-error: {e}"));
            return record;
        }
    };
    record.flags.extend(trace.flags.iter().cloned());
    record.predicted_tool = Some(trace.final_choice.clone());
    record.selection_correct = trace.final_choice == *gold_tool;
    if !record.selection_correct {
        record.failure_stage = Some("selection".to_string());
        return record;
    }

    let tool = match registry.require(&trace.final_choice) {
        Ok(tool) => tool,
        Err(e) => {
            record.failure_stage = Some("selection".to_string());
            record.flags.push(format!("selection-error: {e}"));
            return record;
        }
    };
    let verified = match paramgen::predict_parameters(
        &item.instruction,
        tool,
        router,
        config.n_shots,
        config.param_verify,
    ) {
        Ok(verified) => verified,
        Err(e) => {
            record.failure_stage = Some("parameters".to_string());
            record.flags.push(format!("parameter-error: {e}"));
            return record;
        }
    };
    record.flags.extend(verified.flags.iter().cloned());

    let constructed = match paramgen::construct_call(
        tool,
        &verified,
        config.construction,
        Some(router.for_stage(StageTag::CallConstruct)),
    ) {
        Ok(constructed) => constructed,
        Err(e) => {
            record.failure_stage = Some("construction".to_string());
            record.flags.push(format!("construction-error: {e}"));
            return record;
        }
    };
    record.flags.extend(constructed.flags.iter().cloned());
    record.predicted_call = Some(constructed.call.clone());

    match parse_call(&constructed.call) {
        Ok(predicted) => {
            if calls_equivalent(gold_canonical, &predicted, config.none_policy) {
                record.call_success = true;
            } else {
                record.failure_stage = Some("equivalence".to_string());
            }
        }
        Err(e) => {
            record.failure_stage = Some("construction".to_string());
            record.flags.push(format!("construction-error: {e}"));
        }
    }
    record
}

/// Evaluates a task against the full registry as the candidate pool.
pub fn run_eval(
    name: &str,
    task: &[TaskItem],
    registry: &Registry,
    router: &BackendRouter,
    cache: &VqCache,
    config: &EvalConfig,
) -> Result<TaskReport, EvalError> {
    if task.is_empty() {
        return Err(EvalError::Precondition("task has no samples".into()));
    }
    let index = endpoint_index(registry)?;
    let mut prepared = Vec::with_capacity(task.len());
    for item in task {
        let gold = parse_call(&item.gold_call)?;
        let gold_tool = resolve_gold_tool(&index, &gold)?;
        prepared.push(PreparedSample {
            item,
            gold_tool,
            gold,
        });
    }
    let pool = CandidateSet::new(
        registry.tools().iter().map(|t| t.name.clone()).collect(),
        None,
        false,
    )?;

    let workers = config.workers.max(1).min(prepared.len());
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<EvalRecord>>> =
        (0..prepared.len()).map(|_| Mutex::new(None)).collect();
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= prepared.len() {
                    break;
                }
                let record =
                    evaluate_sample(&prepared[i], &pool, registry, router, cache, config);
                *slots[i].lock().expect("record slot poisoned") = Some(record);
            });
        }
    });
    let records = slots
        .into_iter()
        .map(|slot| {
            slot.into_inner()
                .expect("record slot poisoned")
                .expect("every sample evaluated")
        })
        .collect();
    Ok(TaskReport::from_records(name, records))
}

static HOST_LAST_CALL: Mutex<Option<HashMap<String, Instant>>> = Mutex::new(None);
const LIVE_MIN_INTERVAL: Duration = Duration::from_millis(200);

fn rate_limit(host: &str) {
    let wait = {
        let mut guard = HOST_LAST_CALL.lock().expect("rate limit lock poisoned");
        let map = guard.get_or_insert_with(HashMap::new);
        let now = Instant::now();
        let wait = map.get(host).and_then(|last| {
            LIVE_MIN_INTERVAL.checked_sub(now.saturating_duration_since(*last))
        });
        map.insert(host.to_string(), now + wait.unwrap_or_default());
        wait
    };
    if let Some(wait) = wait {
        std::thread::sleep(wait);
    }
}

/// Substitutes `{UPPERCASE}` environment placeholders in a call string.
pub fn substitute_env_placeholders(call: &str) -> Result<String, EvalError> {
    let mut out = String::with_capacity(call.len());
    let mut rest = call;
    while let Some(start) = rest.find('{') {
        out.push_str(&rest[..start]);
        let after = &rest[start + 1..];
        match after.find('}') {
            Some(end) if registry::is_env_placeholder(&after[..end]) => {
                let name = &after[..end];
                let value = std::env::var(name).map_err(|_| {
                    EvalError::LiveRefused(format!("environment variable `{name}` is not set"))
                })?;
                out.push_str(&value);
                rest = &after[end + 1..];
            }
            _ => {
                out.push('{');
                rest = after;
            }
        }
    }
    out.push_str(rest);
    Ok(out)
}

/// Executes a GET call against an allowlisted host and returns the body.
pub fn execute_live(call: &str, allowlist: &[String]) -> Result<String, EvalError> {
    let resolved = substitute_env_placeholders(call)?;
    let canonical = parse_call(&resolved)?;
    if canonical.method != "GET" {
        return Err(EvalError::LiveRefused(format!(
            "only GET calls are executed, got {}",
            canonical.method
        )));
    }
    let url = url::Url::parse(
        tokenize(&resolved)?
            .iter()
            .map(|t| t.text.as_str())
            .find(|t| looks_like_url(t))
            .ok_or(EvalError::Parse {
                detail: "no URL found".to_string(),
                position: 0,
            })?,
    )
    .map_err(|e| EvalError::Parse {
        detail: e.to_string(),
        position: 0,
    })?;
    let host = url.host_str().unwrap_or_default().to_ascii_lowercase();
    if !allowlist.iter().any(|h| h.eq_ignore_ascii_case(&host)) {
        return Err(EvalError::LiveRefused(format!(
            "host `{host}` is not on the allowlist"
        )));
    }
    rate_limit(&host);
    let client = reqwest::blocking::Client::builder()
        .timeout(Duration::from_secs(30))
        .build()
        .map_err(|e| EvalError::LiveTransport(e.to_string()))?;
    let response = client
        .get(url)
        .send()
        .map_err(|e| EvalError::LiveTransport(e.to_string()))?;
    if !response.status().is_success() {
        return Err(EvalError::LiveTransport(format!(
            "status {}",
            response.status()
        )));
    }
    response
        .text()
        .map_err(|e| EvalError::LiveTransport(e.to_string()))
}
