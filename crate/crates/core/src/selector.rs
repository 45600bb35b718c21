//! Tool selection with contrastive self-verification.
//!
//! Selection runs in two passes: a first pick over the full candidate set,
//! then a second pick with the first removed. A contrastive question about
//! the two finalists is generated (or served from the offline cache), the
//! question is answered against the user instruction, and a last two-way
//! selection with that answer in context decides between them. Every stage
//! failure downgrades to the best earlier decision and is flagged on the
//! trace instead of aborting.

use std::collections::HashMap;
use std::io::{BufRead, Write};
use std::path::Path;
use std::sync::{Mutex, RwLock};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::backend::{
    BackendError, BackendRouter, GenerationRequest, StageTag, TextBackend, Transcript,
};
use crate::prompts::{self, PromptError, TemplateId};
use crate::registry::{CandidateSet, Registry, RegistryError, ToolSpec};

#[derive(Debug, thiserror::Error)]
pub enum SelectorError {
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Registry(#[from] RegistryError),
    #[error("no tool action or candidate name found in: {0:?}")]
    Unparseable(String),
    #[error("selected tool `{0}` is not in the candidate set")]
    OutOfSet(String),
    #[error("bad selection input: {0}")]
    Precondition(String),
    #[error("cannot read question cache: {0}")]
    CacheIo(#[from] std::io::Error),
    #[error("malformed question cache record: {0}")]
    CacheFormat(String),
}

/// Full record of one selection episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionTrace {
    pub instruction: String,
    pub candidates: CandidateSet,
    pub top1: String,
    pub top2: Option<String>,
    pub question: String,
    pub answer: String,
    #[serde(rename = "final")]
    pub final_choice: String,
    pub transcripts: Vec<Transcript>,
    /// Downgrade markers recorded when a verification stage was skipped or
    /// its outcome discarded.
    pub flags: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelectOptions {
    pub verify: bool,
    /// Generate the verification question from the instruction as well as
    /// the two tools. Instruction-dependent questions bypass the cache.
    pub condition_on_instruction: bool,
}

impl Default for SelectOptions {
    fn default() -> Self {
        SelectOptions {
            verify: true,
            condition_on_instruction: false,
        }
    }
}

fn head(text: &str) -> String {
    text.chars().take(120).collect()
}

/// Extracts the chosen tool name from model text: the identifier inside the
/// first `CALLTOOL[…(` occurrence, or failing that, a candidate name that
/// appears verbatim (earliest occurrence wins, longest name on ties).
pub fn parse_tool_action<S: AsRef<str>>(
    text: &str,
    candidates: &[S],
) -> Result<String, SelectorError> {
    if let Some(start) = text.find("CALLTOOL[") {
        let after = &text[start + "CALLTOOL[".len()..];
        if let Some(open) = after.find('(') {
            let name = after[..open].trim();
            if !name.is_empty() && !name.contains(']') {
                return Ok(name.to_string());
            }
        }
    }
    let trimmed = text.trim();
    if let Some(exact) = candidates.iter().find(|c| c.as_ref() == trimmed) {
        return Ok(exact.as_ref().to_string());
    }
    let mut best: Option<(usize, &str)> = None;
    for candidate in candidates {
        let name = candidate.as_ref();
        if name.is_empty() {
            continue;
        }
        if let Some(pos) = text.find(name) {
            let better = match best {
                None => true,
                Some((best_pos, best_name)) => {
                    pos < best_pos || (pos == best_pos && name.len() > best_name.len())
                }
            };
            if better {
                best = Some((pos, name));
            }
        }
    }
    match best {
        Some((_, name)) => Ok(name.to_string()),
        None => Err(SelectorError::Unparseable(head(text))),
    }
}

fn generate_one(
    backend: &dyn TextBackend,
    tag: StageTag,
    prompt: String,
) -> Result<(String, Transcript), SelectorError> {
    let request = GenerationRequest::new(prompt.clone(), tag);
    let response = backend.generate(&request)?;
    let transcript = Transcript {
        tag,
        prompt,
        response: response.text.clone(),
    };
    Ok((response.text, transcript))
}

/// One zero-shot selection pass over a candidate list. The parsed choice
/// must be a member of the list.
pub fn select_once(
    instruction: &str,
    candidates: &[(&str, &str)],
    backend: &dyn TextBackend,
) -> Result<(String, Transcript), SelectorError> {
    if candidates.is_empty() {
        return Err(SelectorError::Precondition(
            "candidate set must not be empty".into(),
        ));
    }
    let prompt = prompts::render(
        TemplateId::Select,
        &[
            ("instruction", instruction),
            ("tools", &prompts::candidate_list(candidates)),
        ],
    )?;
    let (text, transcript) = generate_one(backend, StageTag::Select, prompt)?;
    let names: Vec<&str> = candidates.iter().map(|(n, _)| *n).collect();
    let choice = parse_tool_action(&text, &names)?;
    if !names.contains(&choice.as_str()) {
        return Err(SelectorError::OutOfSet(choice));
    }
    Ok((choice, transcript))
}

/// Two selection passes: full set, then the set with the first pick removed
/// (remaining order unchanged).
pub fn top_two(
    instruction: &str,
    candidates: &[(&str, &str)],
    backend: &dyn TextBackend,
) -> Result<(String, String, Vec<Transcript>), SelectorError> {
    if candidates.len() < 2 {
        return Err(SelectorError::Precondition(
            "two-pass selection needs at least two candidates".into(),
        ));
    }
    let (first, t1) = select_once(instruction, candidates, backend)?;
    let rest: Vec<(&str, &str)> = candidates
        .iter()
        .filter(|(n, _)| *n != first)
        .copied()
        .collect();
    let (second, t2) = select_once(instruction, &rest, backend)?;
    Ok((first, second, vec![t1, t2]))
}

/// Digest of a tool identity used for cache keys: SHA-256 over the
/// length-prefixed name and description.
pub fn tool_digest(name: &str, description: &str) -> [u8; 32] {
    let mut hasher = Sha256::new();
    hasher.update((name.len() as u64).to_le_bytes());
    hasher.update(name.as_bytes());
    hasher.update((description.len() as u64).to_le_bytes());
    hasher.update(description.as_bytes());
    hasher.finalize().into()
}

/// Unordered pair of tool digests.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct VqCacheKey {
    lo: [u8; 32],
    hi: [u8; 32],
}

impl VqCacheKey {
    pub fn new(a: &ToolSpec, b: &ToolSpec) -> Self {
        let da = tool_digest(&a.name, &a.description);
        let db = tool_digest(&b.name, &b.description);
        if da <= db {
            VqCacheKey { lo: da, hi: db }
        } else {
            VqCacheKey { lo: db, hi: da }
        }
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn unhex(text: &str) -> Result<[u8; 32], SelectorError> {
    if text.len() != 64 || !text.bytes().all(|b| b.is_ascii_hexdigit()) {
        return Err(SelectorError::CacheFormat(format!(
            "digest `{text}` is not 64 hex characters"
        )));
    }
    let mut out = [0u8; 32];
    for (i, chunk) in text.as_bytes().chunks(2).enumerate() {
        let byte = u8::from_str_radix(std::str::from_utf8(chunk).unwrap(), 16)
            .map_err(|e| SelectorError::CacheFormat(e.to_string()))?;
        out[i] = byte;
    }
    Ok(out)
}

#[derive(Debug, Serialize, Deserialize)]
struct CacheRecord {
    digest_a: String,
    digest_b: String,
    name_a: String,
    name_b: String,
    question: String,
}

/// Offline store of contrastive questions, keyed by unordered tool-pair
/// digest. Optionally backed by an append-only record file.
pub struct VqCache {
    map: RwLock<HashMap<VqCacheKey, String>>,
    file: Option<Mutex<std::fs::File>>,
}

impl VqCache {
    pub fn in_memory() -> Self {
        VqCache {
            map: RwLock::new(HashMap::new()),
            file: None,
        }
    }

    /// Opens a persistent cache, loading any existing records and appending
    /// new ones to the same file.
    pub fn open(path: impl AsRef<Path>) -> Result<Self, SelectorError> {
        let path = path.as_ref();
        let mut map = HashMap::new();
        if path.exists() {
            let reader = std::io::BufReader::new(std::fs::File::open(path)?);
            for (line_no, line) in reader.lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let record: CacheRecord = serde_json::from_str(&line).map_err(|e| {
                    SelectorError::CacheFormat(format!("line {}: {e}", line_no + 1))
                })?;
                let key = VqCacheKey {
                    lo: unhex(&record.digest_a)?,
                    hi: unhex(&record.digest_b)?,
                };
                if key.lo > key.hi {
                    return Err(SelectorError::CacheFormat(format!(
                        "line {}: digests out of order",
                        line_no + 1
                    )));
                }
                map.insert(key, record.question);
            }
        }
        let file = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)?;
        Ok(VqCache {
            map: RwLock::new(map),
            file: Some(Mutex::new(file)),
        })
    }

    pub fn get(&self, key: &VqCacheKey) -> Option<String> {
        self.map.read().expect("cache lock poisoned").get(key).cloned()
    }

    pub fn len(&self) -> usize {
        self.map.read().expect("cache lock poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Stores a question for a tool pair. Pre-existing keys are left as is;
    /// new entries are appended to the backing file when one is configured.
    pub fn insert(
        &self,
        a: &ToolSpec,
        b: &ToolSpec,
        question: &str,
    ) -> Result<bool, SelectorError> {
        let key = VqCacheKey::new(a, b);
        let mut map = self.map.write().expect("cache lock poisoned");
        if map.contains_key(&key) {
            return Ok(false);
        }
        map.insert(key, question.to_string());
        if let Some(file) = &self.file {
            let da = tool_digest(&a.name, &a.description);
            let db = tool_digest(&b.name, &b.description);
            let (first, second) = if da <= db { (a, b) } else { (b, a) };
            let record = CacheRecord {
                digest_a: hex(&key.lo),
                digest_b: hex(&key.hi),
                name_a: first.name.clone(),
                name_b: second.name.clone(),
                question: question.to_string(),
            };
            let mut file = file.lock().expect("cache file lock poisoned");
            serde_json::to_writer(&mut *file, &record)
                .map_err(|e| SelectorError::CacheFormat(e.to_string()))?;
            file.write_all(b"\n")?;
            file.flush()?;
        }
        Ok(true)
    }
}

fn generate_question_text(
    t1: &ToolSpec,
    t2: &ToolSpec,
    instruction: Option<&str>,
    backend: &dyn TextBackend,
) -> Result<(String, Transcript), SelectorError> {
    let prompt = match instruction {
        Some(instruction) => prompts::render(
            TemplateId::VqGenInst,
            &[
                ("instruction", instruction),
                ("name1", t1.name.as_str()),
                ("description1", t1.description.as_str()),
                ("name2", t2.name.as_str()),
                ("description2", t2.description.as_str()),
            ],
        )?,
        None => prompts::render(
            TemplateId::VqGen,
            &[
                ("name1", t1.name.as_str()),
                ("description1", t1.description.as_str()),
                ("name2", t2.name.as_str()),
                ("description2", t2.description.as_str()),
            ],
        )?,
    };
    let (text, transcript) = generate_one(backend, StageTag::VqGen, prompt)?;
    Ok((text.trim().to_string(), transcript))
}

/// Returns the contrastive question for a tool pair, serving cache hits
/// without a backend call and caching misses under the symmetric key.
pub fn contrastive_question(
    t1: &ToolSpec,
    t2: &ToolSpec,
    backend: &dyn TextBackend,
    cache: &VqCache,
) -> Result<String, SelectorError> {
    contrastive_question_traced(t1, t2, backend, cache).map(|(question, _)| question)
}

/// As `contrastive_question`, also returning the generation transcript when
/// the cache missed.
pub fn contrastive_question_traced(
    t1: &ToolSpec,
    t2: &ToolSpec,
    backend: &dyn TextBackend,
    cache: &VqCache,
) -> Result<(String, Option<Transcript>), SelectorError> {
    if t1.name == t2.name {
        return Err(SelectorError::Precondition(
            "contrastive question needs two distinct tools".into(),
        ));
    }
    let key = VqCacheKey::new(t1, t2);
    if let Some(question) = cache.get(&key) {
        return Ok((question, None));
    }
    let (question, transcript) = generate_question_text(t1, t2, None, backend)?;
    cache.insert(t1, t2, &question)?;
    Ok((question, Some(transcript)))
}

/// Generates and caches questions for every unordered pair of registry
/// tools. Returns the number of newly generated entries.
pub fn precompute_questions(
    registry: &Registry,
    backend: &dyn TextBackend,
    cache: &VqCache,
) -> Result<usize, SelectorError> {
    let tools = registry.tools();
    let mut new_entries = 0;
    for i in 0..tools.len() {
        for j in (i + 1)..tools.len() {
            let key = VqCacheKey::new(&tools[i], &tools[j]);
            if cache.get(&key).is_some() {
                continue;
            }
            let (question, _) = generate_question_text(&tools[i], &tools[j], None, backend)?;
            if cache.insert(&tools[i], &tools[j], &question)? {
                new_entries += 1;
            }
        }
    }
    Ok(new_entries)
}

/// Answers a verification question against the user instruction.
pub fn answer_question(
    question: &str,
    instruction: &str,
    backend: &dyn TextBackend,
) -> Result<(String, Transcript), SelectorError> {
    if question.trim().is_empty() {
        return Err(SelectorError::Precondition(
            "verification question must not be empty".into(),
        ));
    }
    let prompt = prompts::render(
        TemplateId::VqAnswer,
        &[("instruction", instruction), ("question", question)],
    )?;
    let (text, transcript) = generate_one(backend, StageTag::VqAnswer, prompt)?;
    Ok((text.trim().to_string(), transcript))
}

fn final_two_way(
    instruction: &str,
    finalists: &[(&str, &str); 2],
    answer: &str,
    backend: &dyn TextBackend,
) -> Result<(String, Transcript), SelectorError> {
    let prompt = prompts::render(
        TemplateId::SelectFinal,
        &[
            ("instruction", instruction),
            ("tools", &prompts::candidate_list(finalists)),
            ("hint", answer),
        ],
    )?;
    let (text, transcript) = generate_one(backend, StageTag::Select, prompt)?;
    let names = [finalists[0].0, finalists[1].0];
    let choice = parse_tool_action(&text, &names)?;
    if !names.contains(&choice.as_str()) {
        return Err(SelectorError::OutOfSet(choice));
    }
    Ok((choice, transcript))
}

/// Runs the full select-then-verify procedure and returns the trace.
///
/// With `verify` off, or with fewer than two candidates, the first pick is
/// final and no question is asked. Failures after the first pick never abort
/// the episode; they downgrade the result and leave a flag.
pub fn verified_select(
    instruction: &str,
    candidates: &CandidateSet,
    registry: &Registry,
    router: &BackendRouter,
    cache: &VqCache,
    opts: &SelectOptions,
) -> Result<SelectionTrace, SelectorError> {
    let described = registry.describe_candidates(candidates)?;
    if described.is_empty() {
        return Err(SelectorError::Precondition(
            "candidate set must not be empty".into(),
        ));
    }
    let mut transcripts = Vec::new();
    let mut flags = Vec::new();

    let (top1, t1) = select_once(instruction, &described, router.for_stage(StageTag::Select))?;
    transcripts.push(t1);

    let mut trace = SelectionTrace {
        instruction: instruction.to_string(),
        candidates: candidates.clone(),
        top1: top1.clone(),
        top2: None,
        question: String::new(),
        answer: String::new(),
        final_choice: top1.clone(),
        transcripts: Vec::new(),
        flags: Vec::new(),
    };

    if !opts.verify || described.len() < 2 {
        trace.transcripts = transcripts;
        return Ok(trace);
    }

    let rest: Vec<(&str, &str)> = described
        .iter()
        .filter(|(n, _)| *n != top1)
        .copied()
        .collect();
    let top2 = match select_once(instruction, &rest, router.for_stage(StageTag::Select)) {
        Ok((name, t2)) => {
            transcripts.push(t2);
            name
        }
        Err(_) => {
            flags.push("second-pass-failed".to_string());
            trace.transcripts = transcripts;
            trace.flags = flags;
            return Ok(trace);
        }
    };
    trace.top2 = Some(top2.clone());

    let spec1 = registry.require(&top1)?;
    let spec2 = registry.require(&top2)?;
    let question = if opts.condition_on_instruction {
        match generate_question_text(spec1, spec2, Some(instruction), router.for_stage(StageTag::VqGen)) {
            Ok((question, transcript)) => {
                transcripts.push(transcript);
                question
            }
            Err(_) => String::new(),
        }
    } else {
        match contrastive_question_traced(spec1, spec2, router.for_stage(StageTag::VqGen), cache) {
            Ok((question, transcript)) => {
                transcripts.extend(transcript);
                question
            }
            Err(_) => String::new(),
        }
    };
    if question.is_empty() {
        flags.push("question-generation-failed".to_string());
        trace.transcripts = transcripts;
        trace.flags = flags;
        return Ok(trace);
    }
    trace.question = question.clone();

    let answer = match answer_question(&question, instruction, router.for_stage(StageTag::VqAnswer))
    {
        Ok((answer, transcript)) => {
            transcripts.push(transcript);
            answer
        }
        Err(_) => String::new(),
    };
    if answer.is_empty() {
        flags.push("empty-answer".to_string());
        trace.transcripts = transcripts;
        trace.flags = flags;
        return Ok(trace);
    }
    trace.answer = answer.clone();

    let finalists = [
        (spec1.name.as_str(), spec1.description.as_str()),
        (spec2.name.as_str(), spec2.description.as_str()),
    ];
    match final_two_way(instruction, &finalists, &answer, router.for_stage(StageTag::Select)) {
        Ok((choice, transcript)) => {
            transcripts.push(transcript);
            trace.final_choice = choice;
        }
        Err(_) => {
            flags.push("final-pass-failed".to_string());
        }
    }
    trace.transcripts = transcripts;
    trace.flags = flags;
    Ok(trace)
}
