//! Synthetic tool-selection corpus generation.
//!
//! The pipeline has two layers. The library layer grows a tool catalog from
//! a small seed pool: few-shot generation proposes new (name, description)
//! pairs, near-duplicates are rejected by embedding cosine, and each
//! accepted tool replaces its most similar pool member so later prompts stay
//! diverse. Every library tool then gets related near-miss tools and user
//! instructions. The sample layer turns each (tool, instruction) pair into a
//! training sample: a candidate set, a generated reasoning note, and the
//! serialized "Thought/Act" target.

use std::io::{BufRead, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backend::{BackendError, GenerationRequest, StageTag, TextBackend};
use crate::prompts::{self, PromptError, TemplateId};
use crate::registry::{
    CandidateMode, CandidateSet, Registry, RegistryError, ToolSpec,
};
use crate::selector::parse_tool_action;
use crate::similarity::{text_similarity, Embedder};

/// Rotating few-shot pool for the tool-generation prompt.
#[derive(Debug, Clone)]
pub struct SeedPool {
    tools: Vec<(String, String)>,
    capacity: usize,
}

pub const DEFAULT_POOL_CAPACITY: usize = 8;

impl SeedPool {
    pub fn new(tools: Vec<(String, String)>, capacity: usize) -> Result<Self, DatagenError> {
        if tools.is_empty() {
            return Err(DatagenError::Precondition("seed pool must not be empty".into()));
        }
        if capacity == 0 || tools.len() > capacity {
            return Err(DatagenError::Precondition(format!(
                "seed pool holds {} tools but capacity is {capacity}",
                tools.len()
            )));
        }
        let mut seen = std::collections::HashSet::new();
        for (name, _) in &tools {
            if name.trim().is_empty() || !seen.insert(name.to_lowercase()) {
                return Err(DatagenError::Precondition(format!(
                    "seed pool names must be non-empty and unique, got `{name}`"
                )));
            }
        }
        Ok(SeedPool { tools, capacity })
    }

    /// The eight hand-written starter tools.
    pub fn default_seeds() -> Self {
        let tools = vec![
            ("Humidity", "Computes humidity at a location on a date"),
            ("Trip Booking", "Makes a travel booking"),
            (
                "Currency Conversion",
                "Converts an amount from one currency to another.",
            ),
            (
                "Age Calculator",
                "Calculates the age based on a given birthdate and the current date.",
            ),
            ("Search Engine", "Searches online about a query"),
            (
                "Restaurant Finder",
                "The Restaurant Finder tool finds the restaurants based on its location, cuisine and the number of people.",
            ),
            (
                "Movie Review",
                "The Movie Review tool gets top-rated movie reviews for a particular movie.",
            ),
            (
                "Pizza Order",
                "The Pizza Order tool orders a pizza with provided toppings and size.",
            ),
        ];
        SeedPool::new(
            tools
                .into_iter()
                .map(|(n, d)| (n.to_string(), d.to_string()))
                .collect(),
            DEFAULT_POOL_CAPACITY,
        )
        .expect("default seeds are valid")
    }

    pub fn tools(&self) -> &[(String, String)] {
        &self.tools
    }

    pub fn len(&self) -> usize {
        self.tools.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tools.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }
}

/// One training sample of the selection corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSample {
    pub instruction: String,
    pub candidates: CandidateSet,
    pub ground_truth: String,
    pub reasoning_note: String,
    pub target: String,
    pub hard: bool,
}

/// Corpus-level summary numbers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub n_samples: usize,
    pub n_tools: usize,
    pub n_hard: usize,
    pub avg_candidates: f64,
    pub min_candidates: usize,
    pub max_candidates: usize,
    pub avg_note_chars: f64,
    /// Hard slots that fell back to random sampling because the tool has no
    /// related links.
    pub hard_fallbacks: usize,
    /// Samples dropped by the target-parse gate.
    pub n_dropped: usize,
}

/// Outcome of the library-growing phase.
#[derive(Debug, Clone)]
pub struct LibraryOutcome {
    /// Seed tools followed by accepted generated tools.
    pub tools: Vec<(String, String)>,
    /// Generation rounds whose text yielded no usable pair.
    pub skipped_rounds: usize,
    /// Parsed pairs rejected as near-duplicates.
    pub rejected_duplicates: usize,
}

#[derive(Debug, thiserror::Error)]
pub enum DatagenError {
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Registry(#[from] RegistryError),
    #[error("bad datagen input: {0}")]
    Precondition(String),
    #[error("could not generate two distinct related tools for `{0}`")]
    RelatedGenFailure(String),
    #[error("resample bound exhausted while generating {0}")]
    ResampleExhausted(String),
    #[error("invalid sample: {0}")]
    InvalidSample(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("dataset file does not parse: {0}")]
    Import(String),
}

/// How many times a blank or colliding generation is retried.
const RESAMPLE_BOUND: usize = 4;

/// Near-duplicate threshold on the cosine of "name: description" embeddings.
pub const DEDUP_THRESHOLD: f64 = 0.9;

fn embedding_text(name: &str, description: &str, name_only: bool) -> String {
    if name_only {
        name.to_string()
    } else {
        format!("{name}: {description}")
    }
}

/// Extracts consecutive "Name: … / Description: …" pairs from generated
/// text. Orphan name lines and trailing junk are ignored; only pairs with a
/// non-empty name and description survive.
pub fn parse_tool_generation(text: &str) -> Vec<(String, String)> {
    let mut pairs = Vec::new();
    let mut pending: Option<String> = None;
    for line in text.lines() {
        if let Some(value) = line.strip_prefix("Name:") {
            let name = value.trim();
            pending = if name.is_empty() { None } else { Some(name.to_string()) };
        } else if let Some(value) = line.strip_prefix("Description:") {
            if let Some(name) = pending.take() {
                let description = value.trim();
                if !description.is_empty() {
                    pairs.push((name, description.to_string()));
                }
            }
        }
    }
    pairs
}

/// Truncates text to at most `max_words` whitespace-delimited words,
/// preserving the original spacing of what remains.
pub fn truncate_words(text: &str, max_words: usize) -> &str {
    if max_words == 0 {
        return "";
    }
    let mut words = 0;
    let mut in_word = false;
    for (i, ch) in text.char_indices() {
        if ch.is_whitespace() {
            if in_word {
                words += 1;
                if words == max_words {
                    return &text[..i];
                }
                in_word = false;
            }
        } else {
            in_word = true;
        }
    }
    text
}

/// Grows the tool library from the seed pool.
///
/// One generation per round; each accepted tool immediately rotates the
/// pool, so later rounds see it. The returned list starts with the seeds.
pub fn generate_tool_library(
    seed: &SeedPool,
    backend: &dyn TextBackend,
    embedder: &dyn Embedder,
    rounds: usize,
    per_round: usize,
    rng: &mut ChaCha8Rng,
) -> Result<LibraryOutcome, DatagenError> {
    if rounds == 0 || per_round == 0 {
        return Err(DatagenError::Precondition(
            "rounds and per_round must be at least 1".into(),
        ));
    }
    let mut pool = seed.tools().to_vec();
    let mut library = seed.tools().to_vec();
    let mut skipped_rounds = 0;
    let mut rejected_duplicates = 0;

    for _ in 0..rounds {
        let pool_refs: Vec<(&str, &str)> = pool
            .iter()
            .map(|(n, d)| (n.as_str(), d.as_str()))
            .collect();
        let prompt = prompts::render(
            TemplateId::ToolGen,
            &[("pool", &prompts::seed_pool_block(&pool_refs))],
        )?;
        let request = GenerationRequest::seeded(prompt, StageTag::ToolGen, rng.gen());
        let response = backend.generate(&request)?;
        // The prompt ends with a dangling "Name:"; stitch it back on so the
        // first generated tool parses like the rest.
        let parsed = parse_tool_generation(&format!("Name:{}", response.text));
        if parsed.is_empty() {
            skipped_rounds += 1;
            continue;
        }
        for (name, description) in parsed.into_iter().take(per_round) {
            let text = embedding_text(&name, &description, false);
            let duplicate_name = library
                .iter()
                .any(|(n, _)| n.eq_ignore_ascii_case(&name));
            let near_duplicate = library.iter().any(|(n, d)| {
                text_similarity(embedder, &text, &embedding_text(n, d, false)) > DEDUP_THRESHOLD
            });
            if duplicate_name || near_duplicate {
                rejected_duplicates += 1;
                continue;
            }
            library.push((name.clone(), description.clone()));
            if pool.len() < seed.capacity() {
                pool.push((name, description));
            } else {
                let (most_similar, _) = pool
                    .iter()
                    .enumerate()
                    .map(|(i, (n, d))| {
                        (i, text_similarity(embedder, &text, &embedding_text(n, d, false)))
                    })
                    .max_by(|a, b| a.1.total_cmp(&b.1))
                    .expect("pool is never empty");
                pool[most_similar] = (name, description);
            }
        }
    }
    Ok(LibraryOutcome {
        tools: library,
        skipped_rounds,
        rejected_duplicates,
    })
}

fn normalize_name(name: &str) -> String {
    name.split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}

fn first_line(text: &str) -> &str {
    text.lines().next().unwrap_or("").trim()
}

/// Generates two distinct related-tool names for a tool, one generation at a
/// time with fresh seeds; collisions are resampled a bounded number of
/// times.
pub fn generate_related_tools(
    tool_name: &str,
    backend: &dyn TextBackend,
    rng: &mut ChaCha8Rng,
) -> Result<(String, String), DatagenError> {
    let prompt = prompts::render(TemplateId::RelatedGen, &[("name", tool_name)])?;
    let mut names: Vec<String> = Vec::new();
    let forbidden = normalize_name(tool_name);
    while names.len() < 2 {
        let mut accepted = None;
        for _ in 0..=RESAMPLE_BOUND {
            let request =
                GenerationRequest::seeded(prompt.clone(), StageTag::RelatedGen, rng.gen());
            let candidate = first_line(&backend.generate(&request)?.text).to_string();
            let normalized = normalize_name(&candidate);
            let collides = normalized.is_empty()
                || normalized == forbidden
                || names.iter().any(|n| normalize_name(n) == normalized);
            if !collides {
                accepted = Some(candidate);
                break;
            }
        }
        match accepted {
            Some(name) => names.push(name),
            None => return Err(DatagenError::RelatedGenFailure(tool_name.to_string())),
        }
    }
    let second = names.pop().expect("two names collected");
    let first = names.pop().expect("two names collected");
    Ok((first, second))
}

/// Generates a description for a tool that so far has only a name, using the
/// tool-generation pool as few-shot context.
pub fn generate_description(
    name: &str,
    seed: &SeedPool,
    backend: &dyn TextBackend,
    rng: &mut ChaCha8Rng,
) -> Result<String, DatagenError> {
    let pool_refs: Vec<(&str, &str)> = seed
        .tools()
        .iter()
        .map(|(n, d)| (n.as_str(), d.as_str()))
        .collect();
    let prompt = prompts::render(
        TemplateId::ToolDesc,
        &[
            ("pool", &prompts::seed_pool_block(&pool_refs)),
            ("name", name),
        ],
    )?;
    for _ in 0..=RESAMPLE_BOUND {
        let request = GenerationRequest::seeded(prompt.clone(), StageTag::ToolGen, rng.gen());
        let description = first_line(&backend.generate(&request)?.text).to_string();
        if !description.is_empty() {
            return Ok(description);
        }
    }
    Err(DatagenError::ResampleExhausted(format!(
        "a description for `{name}`"
    )))
}

/// Generates `n` distinct instructions for a tool.
pub fn generate_instructions(
    tool_name: &str,
    tool_description: &str,
    backend: &dyn TextBackend,
    n: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<String>, DatagenError> {
    if n == 0 {
        return Err(DatagenError::Precondition(
            "instruction count must be at least 1".into(),
        ));
    }
    let prompt = prompts::render(
        TemplateId::InstructionGen,
        &[("name", tool_name), ("description", tool_description)],
    )?;
    let mut instructions: Vec<String> = Vec::new();
    while instructions.len() < n {
        let mut accepted = None;
        for _ in 0..=RESAMPLE_BOUND {
            let request =
                GenerationRequest::seeded(prompt.clone(), StageTag::InstructionGen, rng.gen());
            let candidate = first_line(&backend.generate(&request)?.text).to_string();
            if !candidate.is_empty() && !instructions.contains(&candidate) {
                accepted = Some(candidate);
                break;
            }
        }
        match accepted {
            Some(instruction) => instructions.push(instruction),
            None => {
                return Err(DatagenError::ResampleExhausted(format!(
                    "instruction {} for `{tool_name}`",
                    instructions.len() + 1
                )))
            }
        }
    }
    Ok(instructions)
}

/// Asks why the ground-truth tool fits and truncates the answer to the word
/// cap. An empty generation falls back to a stock note naming the tool.
pub fn generate_reasoning_note(
    instruction: &str,
    candidates: &[(&str, &str)],
    ground_truth: &str,
    backend: &dyn TextBackend,
    max_tokens: usize,
    rng: &mut ChaCha8Rng,
) -> Result<String, DatagenError> {
    if !candidates.iter().any(|(n, _)| *n == ground_truth) {
        return Err(DatagenError::Precondition(format!(
            "ground truth `{ground_truth}` is not among the candidates"
        )));
    }
    let prompt = prompts::render(
        TemplateId::ReasoningGen,
        &[
            ("tools", &prompts::candidate_list(candidates)),
            ("instruction", instruction),
            ("name", ground_truth),
        ],
    )?;
    let request = GenerationRequest::seeded(prompt, StageTag::ReasoningGen, rng.gen());
    let text = backend.generate(&request)?.text.trim().to_string();
    let note = if text.is_empty() {
        format!("The \"{ground_truth}\" tool fits this request best. I need to use this tool.")
    } else {
        text
    };
    Ok(truncate_words(&note, max_tokens).to_string())
}

/// Knobs for corpus assembly.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatagenConfig {
    /// Fraction of samples drawn with related-only candidate sets.
    pub hard_ratio: f64,
    /// Non-ground-truth candidates per random sample.
    pub k: usize,
    pub seed: u64,
    /// Word cap for reasoning notes.
    pub max_note_tokens: usize,
    /// Shuffle candidate order; when off, the ground truth is listed first.
    pub shuffle: bool,
    pub instructions_per_tool: usize,
}

impl Default for DatagenConfig {
    fn default() -> Self {
        DatagenConfig {
            hard_ratio: 75.0 / 555.0,
            k: 7,
            seed: 0,
            max_note_tokens: 480,
            shuffle: true,
            instructions_per_tool: 3,
        }
    }
}

/// Builds the full training corpus over a registry.
pub fn assemble_dataset(
    registry: &Registry,
    backend: &dyn TextBackend,
    config: &DatagenConfig,
) -> Result<(Vec<TrainingSample>, DatasetStats), DatagenError> {
    if registry.is_empty() {
        return Err(DatagenError::Precondition("registry must not be empty".into()));
    }
    if !(0.0..=1.0).contains(&config.hard_ratio) {
        return Err(DatagenError::Precondition(format!(
            "hard_ratio {} out of [0, 1]",
            config.hard_ratio
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let mut slots: Vec<(usize, String)> = Vec::new();
    for (tool_index, tool) in registry.tools().iter().enumerate() {
        let instructions = generate_instructions(
            &tool.name,
            &tool.description,
            backend,
            config.instructions_per_tool,
            &mut rng,
        )?;
        for instruction in instructions {
            slots.push((tool_index, instruction));
        }
    }

    let n_hard_target = (config.hard_ratio * slots.len() as f64).round() as usize;
    let mut hard_flags = vec![false; slots.len()];
    let mut order: Vec<usize> = (0..slots.len()).collect();
    use rand::seq::SliceRandom;
    order.shuffle(&mut rng);
    for slot in order.into_iter().take(n_hard_target) {
        hard_flags[slot] = true;
    }

    let mut samples = Vec::with_capacity(slots.len());
    let mut hard_fallbacks = 0;
    let mut n_dropped = 0;
    for ((tool_index, instruction), want_hard) in slots.into_iter().zip(hard_flags) {
        let tool = &registry.tools()[tool_index];
        let mode = if want_hard && !tool.related.is_empty() {
            CandidateMode::RelatedOnly
        } else {
            if want_hard {
                hard_fallbacks += 1;
            }
            CandidateMode::RandomK
        };
        let mut set = registry.build_candidate_set(&tool.name, mode, config.k, rng.gen())?;
        if config.shuffle {
            set.tools.shuffle(&mut rng);
        } else {
            let gt_pos = set
                .tools
                .iter()
                .position(|t| *t == tool.name)
                .expect("ground truth is a member");
            set.tools.swap(0, gt_pos);
        }
        let descriptions = registry.describe_candidates(&set)?;
        let note = generate_reasoning_note(
            &instruction,
            &descriptions,
            &tool.name,
            backend,
            config.max_note_tokens,
            &mut rng,
        )?;
        let target = prompts::serialize_target(&note, &tool.name)?;
        match parse_tool_action(&target, &set.tools) {
            Ok(parsed) if parsed == tool.name => samples.push(TrainingSample {
                instruction,
                candidates: set,
                ground_truth: tool.name.clone(),
                reasoning_note: note,
                target,
                hard: mode == CandidateMode::RelatedOnly,
            }),
            _ => n_dropped += 1,
        }
    }

    let stats = compute_stats(&samples, registry.len(), hard_fallbacks, n_dropped);
    Ok((samples, stats))
}

fn compute_stats(
    samples: &[TrainingSample],
    n_tools: usize,
    hard_fallbacks: usize,
    n_dropped: usize,
) -> DatasetStats {
    let n_samples = samples.len();
    let n_hard = samples.iter().filter(|s| s.hard).count();
    let sizes: Vec<usize> = samples.iter().map(|s| s.candidates.len()).collect();
    let avg_candidates = if n_samples == 0 {
        0.0
    } else {
        sizes.iter().sum::<usize>() as f64 / n_samples as f64
    };
    let avg_note_chars = if n_samples == 0 {
        0.0
    } else {
        samples
            .iter()
            .map(|s| s.reasoning_note.chars().count())
            .sum::<usize>() as f64
            / n_samples as f64
    };
    DatasetStats {
        n_samples,
        n_tools,
        n_hard,
        avg_candidates,
        min_candidates: sizes.iter().copied().min().unwrap_or(0),
        max_candidates: sizes.iter().copied().max().unwrap_or(0),
        avg_note_chars,
        hard_fallbacks,
        n_dropped,
    }
}

/// Runs the library phase end to end and returns a registry of synthetic
/// selection-only tools: the grown library plus related tools with generated
/// descriptions, cross-linked for hard sampling.
pub fn build_library_registry(
    seed: &SeedPool,
    backend: &dyn TextBackend,
    embedder: &dyn Embedder,
    rounds: usize,
    per_round: usize,
    rng_seed: u64,
) -> Result<(Registry, LibraryOutcome), DatagenError> {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let outcome = generate_tool_library(seed, backend, embedder, rounds, per_round, &mut rng)?;

    let mut tools: Vec<ToolSpec> = Vec::new();
    let mut names: std::collections::HashSet<String> = std::collections::HashSet::new();
    for (name, description) in &outcome.tools {
        names.insert(normalize_name(name));
        tools.push(selection_tool(name, description, Vec::new()));
    }

    let base_count = tools.len();
    for i in 0..base_count {
        let parent = tools[i].name.clone();
        let related = match generate_related_tools(&parent, backend, &mut rng) {
            Ok((first, second)) => vec![first, second],
            // A tool that cannot get distinct related names stays linkless.
            Err(DatagenError::RelatedGenFailure(_)) => continue,
            Err(other) => return Err(other),
        };
        for name in related {
            if names.insert(normalize_name(&name)) {
                let description = generate_description(&name, seed, backend, &mut rng)?;
                tools.push(selection_tool(&name, &description, vec![parent.clone()]));
            }
            tools[i].related.push(name);
        }
    }
    // Related names can collide across parents; a link to an already-created
    // tool is kept only once.
    for tool in &mut tools {
        tool.related.dedup();
    }
    Ok((Registry::from_tools(tools)?, outcome))
}

fn selection_tool(name: &str, description: &str, related: Vec<String>) -> ToolSpec {
    ToolSpec {
        name: name.to_string(),
        description: description.to_string(),
        params: Vec::new(),
        demonstrations: Vec::new(),
        call_template: String::new(),
        related,
        synthetic: true,
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct FinetuneRecord {
    input: String,
    output: String,
    instruction: String,
    ground_truth: String,
    candidates: CandidateSet,
    hard: bool,
}

/// Renders the selection-stage prompt a sample trains on.
pub fn render_sample_input(
    registry: &Registry,
    sample: &TrainingSample,
) -> Result<String, DatagenError> {
    let descriptions = registry.describe_candidates(&sample.candidates)?;
    Ok(prompts::render(
        TemplateId::Select,
        &[
            ("instruction", sample.instruction.as_str()),
            ("tools", &prompts::candidate_list(&descriptions)),
        ],
    )?)
}

/// Writes samples as line-delimited records; returns the record count.
pub fn export_finetune(
    samples: &[TrainingSample],
    registry: &Registry,
    path: impl AsRef<Path>,
) -> Result<usize, DatagenError> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for sample in samples {
        match parse_tool_action(&sample.target, &sample.candidates.tools) {
            Ok(parsed) if parsed == sample.ground_truth => {}
            _ => {
                return Err(DatagenError::InvalidSample(format!(
                    "target of `{}` sample does not parse back to its ground truth",
                    sample.ground_truth
                )))
            }
        }
        let record = FinetuneRecord {
            input: render_sample_input(registry, sample)?,
            output: sample.target.clone(),
            instruction: sample.instruction.clone(),
            ground_truth: sample.ground_truth.clone(),
            candidates: sample.candidates.clone(),
            hard: sample.hard,
        };
        serde_json::to_writer(&mut out, &record)
            .map_err(|e| DatagenError::Import(e.to_string()))?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(samples.len())
}

/// Reads an exported dataset back into samples.
pub fn import_finetune(path: impl AsRef<Path>) -> Result<Vec<TrainingSample>, DatagenError> {
    let file = std::fs::File::open(path)?;
    let mut samples = Vec::new();
    for (line_no, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: FinetuneRecord = serde_json::from_str(&line)
            .map_err(|e| DatagenError::Import(format!("line {}: {e}", line_no + 1)))?;
        // The note sits between the Thought prefix and the final Act line.
        let note = record
            .output
            .strip_prefix("Thought: ")
            .and_then(|rest| rest.rsplit_once("\n\nAct: CALLTOOL["))
            .map(|(note, _)| note.to_string())
            .ok_or_else(|| {
                DatagenError::Import(format!("line {}: output is not a Thought/Act pair", line_no + 1))
            })?;
        samples.push(TrainingSample {
            instruction: record.instruction,
            candidates: record.candidates,
            ground_truth: record.ground_truth,
            reasoning_note: note,
            target: record.output,
            hard: record.hard,
        });
    }
    Ok(samples)
}

/// Serializable run summary for the stats CLI output.
pub fn stats_document(stats: &DatasetStats) -> serde_json::Value {
    serde_json::json!({
        "n_samples": stats.n_samples,
        "n_tools": stats.n_tools,
        "n_hard": stats.n_hard,
        "avg_candidates": stats.avg_candidates,
        "min_candidates": stats.min_candidates,
        "max_candidates": stats.max_candidates,
        "avg_note_chars": stats.avg_note_chars,
        "hard_fallbacks": stats.hard_fallbacks,
        "n_dropped": stats.n_dropped,
    })
}

/// Recomputes summary numbers for samples read back from a dataset file.
/// The tool count is the number of distinct candidate names; the fallback
/// and drop counters are not recorded per sample and read zero.
pub fn recompute_stats(samples: &[TrainingSample]) -> DatasetStats {
    let names: std::collections::HashSet<&str> = samples
        .iter()
        .flat_map(|s| s.candidates.tools.iter())
        .map(String::as_str)
        .collect();
    compute_stats(samples, names.len(), 0, 0)
}

pub use crate::registry::CandidateMode as Mode;
