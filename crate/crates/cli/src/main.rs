//! Command-line front end for the two-stage tool calling pipeline: corpus
//! generation, question-cache precomputation, single-shot selection and
//! calling, batch evaluation, and dataset statistics.

use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use toolverify::backend::{
    BackendError, BackendRouter, GenerationRequest, GenerationResponse, HttpBackend,
    ScriptedBackend, StageTag, TextBackend, Transcript,
};
use toolverify::datagen::{
    assemble_dataset, build_library_registry, export_finetune, import_finetune, recompute_stats,
    stats_document, DatagenConfig, SeedPool,
};
use toolverify::eval::{load_task_file, run_eval, EvalConfig, NonePolicy, TaskItem, TaskReport};
use toolverify::paramgen::{construct_call, predict_parameters, ConstructionMode};
use toolverify::registry::{CandidateSet, Registry};
use toolverify::selector::{precompute_questions, verified_select, SelectOptions, VqCache};
use toolverify::similarity::HashedNgramEmbedder;

#[derive(Parser)]
#[command(
    name = "toolverify",
    version,
    about = "Two-stage tool calling with contrastive self-verification"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic tool-selection training corpus.
    Datagen(DatagenArgs),
    /// Cache a contrastive question for every tool pair in a registry.
    PrecomputeVq(PrecomputeArgs),
    /// Pick the tool for one instruction and print the selection trace.
    Select(SelectArgs),
    /// Run selection and parameterization for one instruction and print the
    /// final call.
    Call(CallArgs),
    /// Score a task file of gold calls and print a report table.
    Eval(EvalArgs),
    /// Recompute summary statistics for an existing dataset file.
    Stats(StatsArgs),
}

/// Backend wiring shared by every subcommand.
#[derive(Args, Debug)]
struct BackendArgs {
    /// Rule file for a scripted default backend. Without it the default is
    /// the HTTP endpoint from TOOLVERIFY_ENDPOINT (token from
    /// TOOLVERIFY_TOKEN).
    #[arg(long, value_name = "FILE", global = true)]
    script: Option<PathBuf>,

    /// Per-stage backend override as TAG=SPEC, where SPEC is either
    /// script:FILE or an http(s) URL. Repeatable. Stages without an override
    /// use the default backend.
    #[arg(long = "stage-backend", value_name = "TAG=SPEC", global = true)]
    stage_backend: Vec<String>,

    /// Backend for the second parameter prediction (same SPEC forms as
    /// --stage-backend).
    #[arg(long = "param-alt", value_name = "SPEC", global = true)]
    param_alt: Option<String>,

    /// Override the sampling temperature on every request.
    #[arg(long, global = true)]
    temperature: Option<f64>,

    /// Override the nucleus sampling mass on every request.
    #[arg(long = "top-p", global = true)]
    top_p: Option<f64>,

    /// Override the generation token budget on every request.
    #[arg(long = "max-tokens", global = true)]
    max_tokens: Option<u32>,

    /// Fixed sampling seed sent with every request.
    #[arg(long = "sampling-seed", global = true)]
    sampling_seed: Option<u64>,
}

#[derive(Args, Debug)]
struct DatagenArgs {
    #[command(flatten)]
    backend: BackendArgs,

    /// Existing registry to draw tools from. Without it a synthetic library
    /// is grown from the built-in seed pool first.
    #[arg(long, value_name = "FILE")]
    registry: Option<PathBuf>,

    /// Library growth rounds when no registry is given.
    #[arg(long, default_value_t = 2)]
    rounds: usize,

    /// New tools accepted per growth round.
    #[arg(long = "per-round", default_value_t = 4)]
    per_round: usize,

    /// RNG seed for the library growth phase.
    #[arg(long = "library-seed", default_value_t = 0)]
    library_seed: u64,

    /// RNG seed for candidate sampling and shuffling.
    #[arg(long, default_value_t = 0)]
    seed: u64,

    /// Fraction of samples drawn with related-only candidate sets.
    #[arg(long = "hard-ratio", default_value_t = 75.0 / 555.0)]
    hard_ratio: f64,

    /// Non-ground-truth candidates per random sample.
    #[arg(long, default_value_t = 7)]
    k: usize,

    /// Word cap for reasoning notes.
    #[arg(long = "max-note-tokens", default_value_t = 480)]
    max_note_tokens: usize,

    /// List the ground truth first instead of shuffling candidates.
    #[arg(long = "no-shuffle")]
    no_shuffle: bool,

    /// Instructions generated per tool.
    #[arg(long = "instructions-per-tool", default_value_t = 3)]
    instructions_per_tool: usize,

    /// Dataset output path (line-delimited JSON).
    #[arg(long, value_name = "FILE")]
    out: PathBuf,

    /// Also write the statistics document here.
    #[arg(long = "stats-out", value_name = "FILE")]
    stats_out: Option<PathBuf>,

    /// Write the registry the corpus was drawn from (useful when grown).
    #[arg(long = "registry-out", value_name = "FILE")]
    registry_out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct PrecomputeArgs {
    #[command(flatten)]
    backend: BackendArgs,

    /// Registry whose tool pairs get questions.
    #[arg(long, value_name = "FILE")]
    registry: PathBuf,

    /// Question cache file, created when absent and extended otherwise.
    #[arg(long = "vq-cache", value_name = "FILE")]
    vq_cache: PathBuf,
}

#[derive(Args, Debug)]
struct SelectArgs {
    #[command(flatten)]
    backend: BackendArgs,

    /// Registry of candidate tools.
    #[arg(long, value_name = "FILE")]
    registry: PathBuf,

    /// User instruction to select a tool for.
    #[arg(long)]
    instruction: String,

    /// Skip selection verification and keep the first pick.
    #[arg(long = "no-verify")]
    no_verify: bool,

    /// Condition verification questions on the instruction (bypasses the
    /// question cache).
    #[arg(long = "condition-on-instruction")]
    condition_on_instruction: bool,

    /// Persistent question cache file.
    #[arg(long = "vq-cache", value_name = "FILE")]
    vq_cache: Option<PathBuf>,

    /// Directory for the prompt/response transcript log.
    #[arg(long, value_name = "DIR")]
    transcripts: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct CallArgs {
    #[command(flatten)]
    backend: BackendArgs,

    /// Registry of candidate tools.
    #[arg(long, value_name = "FILE")]
    registry: PathBuf,

    /// User instruction to build a call for.
    #[arg(long)]
    instruction: String,

    /// Demonstrations per parameter prompt.
    #[arg(long = "n-shots", default_value_t = 3)]
    n_shots: usize,

    /// How the final call string is built.
    #[arg(long, value_enum, default_value_t = ConstructionArg::Template)]
    construction: ConstructionArg,

    /// Skip selection verification.
    #[arg(long = "no-tool-verify")]
    no_tool_verify: bool,

    /// Skip parameter verification.
    #[arg(long = "no-param-verify")]
    no_param_verify: bool,

    /// Skip both verification stages.
    #[arg(long = "no-verify")]
    no_verify: bool,

    /// Condition verification questions on the instruction (bypasses the
    /// question cache).
    #[arg(long = "condition-on-instruction")]
    condition_on_instruction: bool,

    /// Persistent question cache file.
    #[arg(long = "vq-cache", value_name = "FILE")]
    vq_cache: Option<PathBuf>,

    /// Directory for the prompt/response transcript log.
    #[arg(long, value_name = "DIR")]
    transcripts: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[command(flatten)]
    backend: BackendArgs,

    /// Registry acting as the candidate pool for every sample.
    #[arg(long, value_name = "FILE")]
    registry: PathBuf,

    /// Task file: one {instruction, gold_call, task} object per line.
    #[arg(long, value_name = "FILE")]
    task: PathBuf,

    /// Concurrent samples.
    #[arg(long, default_value_t = 4)]
    workers: usize,

    /// Run all four verification configurations instead of one.
    #[arg(long)]
    sweep: bool,

    /// Skip selection verification.
    #[arg(long = "no-tool-verify")]
    no_tool_verify: bool,

    /// Skip parameter verification.
    #[arg(long = "no-param-verify")]
    no_param_verify: bool,

    /// Skip both verification stages.
    #[arg(long = "no-verify")]
    no_verify: bool,

    /// Condition verification questions on the instruction (bypasses the
    /// question cache).
    #[arg(long = "condition-on-instruction")]
    condition_on_instruction: bool,

    /// Demonstrations per parameter prompt.
    #[arg(long = "n-shots", default_value_t = 3)]
    n_shots: usize,

    /// How final call strings are built.
    #[arg(long, value_enum, default_value_t = ConstructionArg::Template)]
    construction: ConstructionArg,

    /// How absent optional parameters compare.
    #[arg(long = "none-policy", value_enum, default_value_t = NonePolicyArg::Strict)]
    none_policy: NonePolicyArg,

    /// Persistent question cache file.
    #[arg(long = "vq-cache", value_name = "FILE")]
    vq_cache: Option<PathBuf>,

    /// Write the full report document here.
    #[arg(long = "report-out", value_name = "FILE")]
    report_out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct StatsArgs {
    /// Dataset file written by the datagen command.
    #[arg(long, value_name = "FILE")]
    dataset: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ConstructionArg {
    Template,
    Model,
}

impl From<ConstructionArg> for ConstructionMode {
    fn from(arg: ConstructionArg) -> Self {
        match arg {
            ConstructionArg::Template => ConstructionMode::Template,
            ConstructionArg::Model => ConstructionMode::Model,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum NonePolicyArg {
    Strict,
    Lenient,
}

impl From<NonePolicyArg> for NonePolicy {
    fn from(arg: NonePolicyArg) -> Self {
        match arg {
            NonePolicyArg::Strict => NonePolicy::Strict,
            NonePolicyArg::Lenient => NonePolicy::Lenient,
        }
    }
}

/// One backend endpoint: a scripted rule file or an HTTP URL.
#[derive(Debug, Clone)]
enum BackendSpec {
    Script(PathBuf),
    Http(String),
}

impl BackendSpec {
    fn parse(text: &str) -> Result<Self> {
        if let Some(path) = text.strip_prefix("script:") {
            return Ok(BackendSpec::Script(PathBuf::from(path)));
        }
        if text.starts_with("http://") || text.starts_with("https://") {
            return Ok(BackendSpec::Http(text.to_string()));
        }
        bail!("backend spec `{text}` is neither script:FILE nor an http(s) URL");
    }

    fn build(&self) -> Result<Arc<dyn TextBackend>> {
        match self {
            BackendSpec::Script(path) => Ok(Arc::new(load_script(path)?)),
            BackendSpec::Http(url) => {
                let mut backend = HttpBackend::new(url.clone());
                if let Ok(token) = std::env::var("TOOLVERIFY_TOKEN") {
                    backend = backend.with_token(token);
                }
                Ok(Arc::new(backend))
            }
        }
    }
}

fn load_script(path: &Path) -> Result<ScriptedBackend> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read script file {}", path.display()))?;
    let backend = ScriptedBackend::from_json(&text)
        .with_context(|| format!("bad script file {}", path.display()))?;
    Ok(backend.with_id(path.display().to_string()))
}

/// Sampling fields rewritten on every request when set.
#[derive(Debug, Clone, Copy, Default)]
struct SamplingOverrides {
    temperature: Option<f64>,
    top_p: Option<f64>,
    max_tokens: Option<u32>,
    seed: Option<u64>,
}

impl SamplingOverrides {
    fn is_noop(&self) -> bool {
        self.temperature.is_none()
            && self.top_p.is_none()
            && self.max_tokens.is_none()
            && self.seed.is_none()
    }
}

struct SamplingOverrideBackend {
    inner: Arc<dyn TextBackend>,
    overrides: SamplingOverrides,
}

impl TextBackend for SamplingOverrideBackend {
    fn generate(&self, request: &GenerationRequest) -> Result<GenerationResponse, BackendError> {
        let mut request = request.clone();
        if let Some(t) = self.overrides.temperature {
            request.params.temperature = t;
        }
        if let Some(p) = self.overrides.top_p {
            request.params.top_p = p;
        }
        if let Some(m) = self.overrides.max_tokens {
            request.params.max_tokens = m;
        }
        if let Some(s) = self.overrides.seed {
            request.params.seed = Some(s);
        }
        self.inner.generate(&request)
    }

    fn id(&self) -> &str {
        self.inner.id()
    }
}

/// Resolved settings for one command run: where the registry lives, which
/// backend serves each stage tag, sampling overrides, the verification
/// toggles, corpus shape knobs, seeds, and output paths. Referenced input
/// paths are checked up front; building the router fails on unknown stage
/// tags.
#[derive(Debug, Default)]
struct RunConfig {
    registry_path: Option<PathBuf>,
    script: Option<PathBuf>,
    stage_backends: Vec<(StageTag, BackendSpec)>,
    param_alt: Option<BackendSpec>,
    sampling: SamplingOverrides,
    tool_verify: bool,
    param_verify: bool,
    condition_on_instruction: bool,
    shuffle: bool,
    hard_ratio: f64,
    k: usize,
    seed: u64,
    library_seed: u64,
    vq_cache: Option<PathBuf>,
    transcripts_dir: Option<PathBuf>,
    out: Option<PathBuf>,
    stats_out: Option<PathBuf>,
    registry_out: Option<PathBuf>,
    report_out: Option<PathBuf>,
}

impl RunConfig {
    fn from_backend_args(args: &BackendArgs) -> Result<Self> {
        let mut stage_backends = Vec::new();
        for entry in &args.stage_backend {
            let (tag, spec) = entry
                .split_once('=')
                .with_context(|| format!("--stage-backend `{entry}` is not TAG=SPEC"))?;
            let tag = StageTag::from_str(tag)?;
            stage_backends.push((tag, BackendSpec::parse(spec)?));
        }
        let param_alt = args.param_alt.as_deref().map(BackendSpec::parse).transpose()?;
        Ok(RunConfig {
            script: args.script.clone(),
            stage_backends,
            param_alt,
            sampling: SamplingOverrides {
                temperature: args.temperature,
                top_p: args.top_p,
                max_tokens: args.max_tokens,
                seed: args.sampling_seed,
            },
            tool_verify: true,
            param_verify: true,
            shuffle: true,
            ..RunConfig::default()
        })
    }

    fn require_input(&self, path: &Path, what: &str) -> Result<()> {
        if !path.exists() {
            bail!("{what} {} does not exist", path.display());
        }
        Ok(())
    }

    fn wrap(&self, backend: Arc<dyn TextBackend>) -> Arc<dyn TextBackend> {
        if self.sampling.is_noop() {
            backend
        } else {
            Arc::new(SamplingOverrideBackend {
                inner: backend,
                overrides: self.sampling,
            })
        }
    }

    fn router(&self) -> Result<BackendRouter> {
        let default: Arc<dyn TextBackend> = match &self.script {
            Some(path) => {
                self.require_input(path, "script file")?;
                Arc::new(load_script(path)?)
            }
            None => Arc::new(HttpBackend::from_env()?),
        };
        let mut router = BackendRouter::new(self.wrap(default));
        for (tag, spec) in &self.stage_backends {
            router = router.with_override(*tag, self.wrap(spec.build()?));
        }
        if let Some(spec) = &self.param_alt {
            router = router.with_param_alt(self.wrap(spec.build()?));
        }
        Ok(router)
    }

    fn load_registry(&self) -> Result<Registry> {
        let path = self
            .registry_path
            .as_ref()
            .context("no registry path configured")?;
        self.require_input(path, "registry file")?;
        Registry::load(path).with_context(|| format!("cannot load registry {}", path.display()))
    }

    fn open_cache(&self) -> Result<VqCache> {
        match &self.vq_cache {
            Some(path) => {
                if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
                    std::fs::create_dir_all(parent)?;
                }
                VqCache::open(path)
                    .with_context(|| format!("cannot open question cache {}", path.display()))
            }
            None => Ok(VqCache::in_memory()),
        }
    }
}

fn full_pool(registry: &Registry) -> Result<CandidateSet> {
    let names = registry.tools().iter().map(|t| t.name.clone()).collect();
    Ok(CandidateSet::new(names, None, false)?)
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
}

fn write_transcripts(dir: &Path, transcripts: &[Transcript]) -> Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let path = dir.join("transcripts.jsonl");
    let mut text = String::new();
    for transcript in transcripts {
        text.push_str(&serde_json::to_string(transcript)?);
        text.push('\n');
    }
    std::fs::write(&path, text).with_context(|| format!("cannot write {}", path.display()))?;
    Ok(path)
}

fn cmd_datagen(config: &RunConfig, args: &DatagenArgs) -> Result<()> {
    let router = config.router()?;
    let backend = router.for_stage(StageTag::ToolGen);

    let registry = match &config.registry_path {
        Some(_) => config.load_registry()?,
        None => {
            let embedder = HashedNgramEmbedder::default();
            let (registry, outcome) = build_library_registry(
                &SeedPool::default_seeds(),
                backend,
                &embedder,
                args.rounds,
                args.per_round,
                config.library_seed,
            )?;
            eprintln!(
                "library: {} tools ({} rounds skipped, {} duplicates rejected)",
                outcome.tools.len(),
                outcome.skipped_rounds,
                outcome.rejected_duplicates
            );
            registry
        }
    };

    let datagen_config = DatagenConfig {
        hard_ratio: config.hard_ratio,
        k: config.k,
        seed: config.seed,
        max_note_tokens: args.max_note_tokens,
        shuffle: config.shuffle,
        instructions_per_tool: args.instructions_per_tool,
    };
    let (samples, stats) = assemble_dataset(&registry, backend, &datagen_config)?;

    let out = config.out.as_ref().expect("datagen always sets --out");
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    let written = export_finetune(&samples, &registry, out)?;
    eprintln!("wrote {written} samples to {}", out.display());

    let document = stats_document(&stats);
    if let Some(path) = &config.stats_out {
        write_json(path, &document)?;
    }
    if let Some(path) = &config.registry_out {
        let doc = serde_json::json!({
            "notes": registry.notes(),
            "tools": registry.tools(),
        });
        write_json(path, &doc)?;
    }
    println!("{}", serde_json::to_string_pretty(&document)?);
    Ok(())
}

fn cmd_precompute_vq(config: &RunConfig) -> Result<()> {
    let registry = config.load_registry()?;
    let router = config.router()?;
    let cache = config.open_cache()?;
    let fresh = precompute_questions(&registry, router.for_stage(StageTag::VqGen), &cache)?;
    println!(
        "{}",
        serde_json::json!({ "new": fresh, "total": cache.len() })
    );
    Ok(())
}

fn cmd_select(config: &RunConfig, instruction: &str) -> Result<()> {
    let registry = config.load_registry()?;
    let router = config.router()?;
    let cache = config.open_cache()?;
    let options = SelectOptions {
        verify: config.tool_verify,
        condition_on_instruction: config.condition_on_instruction,
    };
    let trace = verified_select(
        instruction,
        &full_pool(&registry)?,
        &registry,
        &router,
        &cache,
        &options,
    )?;
    if let Some(dir) = &config.transcripts_dir {
        let path = write_transcripts(dir, &trace.transcripts)?;
        eprintln!("transcripts: {}", path.display());
    }
    println!("{}", serde_json::to_string_pretty(&trace)?);
    Ok(())
}

fn cmd_call(config: &RunConfig, args: &CallArgs) -> Result<()> {
    let registry = config.load_registry()?;
    let router = config.router()?;
    let cache = config.open_cache()?;
    let options = SelectOptions {
        verify: config.tool_verify,
        condition_on_instruction: config.condition_on_instruction,
    };
    let trace = verified_select(
        &args.instruction,
        &full_pool(&registry)?,
        &registry,
        &router,
        &cache,
        &options,
    )?;
    let tool = registry.require(&trace.final_choice)?;
    let params = predict_parameters(
        &args.instruction,
        tool,
        &router,
        args.n_shots,
        config.param_verify,
    )?;
    let mode = ConstructionMode::from(args.construction);
    let constructed = match mode {
        ConstructionMode::Template => construct_call(tool, &params, mode, None)?,
        ConstructionMode::Model => construct_call(
            tool,
            &params,
            mode,
            Some(router.for_stage(StageTag::CallConstruct)),
        )?,
    };

    if let Some(dir) = &config.transcripts_dir {
        let mut transcripts = trace.transcripts.clone();
        transcripts.extend(params.transcripts.iter().cloned());
        if let Some(t) = &constructed.transcript {
            transcripts.push(t.clone());
        }
        let path = write_transcripts(dir, &transcripts)?;
        eprintln!("transcripts: {}", path.display());
    }

    let mut flags = trace.flags.clone();
    flags.extend(params.flags.iter().cloned());
    flags.extend(constructed.flags.iter().cloned());
    let document = serde_json::json!({
        "instruction": args.instruction,
        "selection": trace,
        "parameters": params,
        "call": constructed.call,
        "flags": flags,
    });
    println!("{}", serde_json::to_string_pretty(&document)?);
    Ok(())
}

/// Task groups in file order of first appearance.
fn group_by_task(items: &[TaskItem]) -> Vec<(String, Vec<TaskItem>)> {
    let mut groups: Vec<(String, Vec<TaskItem>)> = Vec::new();
    for item in items {
        match groups.iter_mut().find(|(name, _)| *name == item.task) {
            Some((_, bucket)) => bucket.push(item.clone()),
            None => groups.push((item.task.clone(), vec![item.clone()])),
        }
    }
    groups
}

fn config_label(tool_verify: bool, param_verify: bool) -> &'static str {
    match (tool_verify, param_verify) {
        (false, false) => "none",
        (true, false) => "tool-only",
        (false, true) => "param-only",
        (true, true) => "both",
    }
}

fn print_report_table(rows: &[(String, &TaskReport)]) {
    println!(
        "{:<20} {:<12} {:>5} {:>12} {:>10}",
        "task", "config", "n", "selection%", "success%"
    );
    for (label, report) in rows {
        println!(
            "{:<20} {:<12} {:>5} {:>12.2} {:>10.2}",
            report.task, label, report.n, report.selection_accuracy, report.success_rate
        );
    }
}

fn print_sample_log(label: &str, report: &TaskReport) {
    println!("== {} / {} ==", report.task, label);
    for (i, record) in report.records.iter().enumerate() {
        let outcome = match &record.failure_stage {
            None => "ok".to_string(),
            Some(stage) => format!("fail={stage}"),
        };
        println!(
            "sample {} gold={} predicted={} {}",
            i + 1,
            record.gold_tool,
            record.predicted_tool.as_deref().unwrap_or("-"),
            outcome
        );
    }
}

fn cmd_eval(config: &RunConfig, args: &EvalArgs) -> Result<()> {
    config.require_input(&args.task, "task file")?;
    let registry = config.load_registry()?;
    let router = config.router()?;
    let items = load_task_file(&args.task)?;
    if items.is_empty() {
        bail!("task file {} holds no samples", args.task.display());
    }
    let groups = group_by_task(&items);

    let toggle_sets: Vec<(bool, bool)> = if args.sweep {
        vec![(false, false), (true, false), (false, true), (true, true)]
    } else {
        vec![(config.tool_verify, config.param_verify)]
    };

    let mut runs: Vec<(String, Vec<TaskReport>)> = Vec::new();
    for (tool_verify, param_verify) in toggle_sets {
        let label = config_label(tool_verify, param_verify).to_string();
        let eval_config = EvalConfig {
            tool_verify,
            param_verify,
            condition_on_instruction: config.condition_on_instruction,
            n_shots: args.n_shots,
            construction: args.construction.into(),
            none_policy: args.none_policy.into(),
            workers: args.workers,
        };
        let mut reports = Vec::new();
        for (task_name, task_items) in &groups {
            let cache = config.open_cache()?;
            let report = run_eval(
                task_name,
                task_items,
                &registry,
                &router,
                &cache,
                &eval_config,
            )?;
            reports.push(report);
        }
        runs.push((label, reports));
    }

    let rows: Vec<(String, &TaskReport)> = runs
        .iter()
        .flat_map(|(label, reports)| reports.iter().map(move |r| (label.clone(), r)))
        .collect();
    print_report_table(&rows);
    println!();
    for (label, report) in &rows {
        print_sample_log(label, report);
    }

    if let Some(path) = &config.report_out {
        let document = serde_json::json!(runs
            .iter()
            .map(|(label, reports)| serde_json::json!({
                "config": label,
                "reports": reports,
            }))
            .collect::<Vec<_>>());
        write_json(path, &document)?;
    }
    Ok(())
}

fn cmd_stats(args: &StatsArgs) -> Result<()> {
    if !args.dataset.exists() {
        bail!("dataset file {} does not exist", args.dataset.display());
    }
    let samples = import_finetune(&args.dataset)?;
    let stats = recompute_stats(&samples);
    println!("{}", serde_json::to_string_pretty(&stats_document(&stats))?);
    Ok(())
}

fn run() -> Result<()> {
    let cli = Cli::parse();
    match &cli.command {
        Command::Datagen(args) => {
            let mut config = RunConfig::from_backend_args(&args.backend)?;
            config.registry_path = args.registry.clone();
            config.shuffle = !args.no_shuffle;
            config.hard_ratio = args.hard_ratio;
            config.k = args.k;
            config.seed = args.seed;
            config.library_seed = args.library_seed;
            config.out = Some(args.out.clone());
            config.stats_out = args.stats_out.clone();
            config.registry_out = args.registry_out.clone();
            cmd_datagen(&config, args)
        }
        Command::PrecomputeVq(args) => {
            let mut config = RunConfig::from_backend_args(&args.backend)?;
            config.registry_path = Some(args.registry.clone());
            config.vq_cache = Some(args.vq_cache.clone());
            cmd_precompute_vq(&config)
        }
        Command::Select(args) => {
            let mut config = RunConfig::from_backend_args(&args.backend)?;
            config.registry_path = Some(args.registry.clone());
            config.tool_verify = !args.no_verify;
            config.condition_on_instruction = args.condition_on_instruction;
            config.vq_cache = args.vq_cache.clone();
            config.transcripts_dir = args.transcripts.clone();
            cmd_select(&config, &args.instruction)
        }
        Command::Call(args) => {
            let mut config = RunConfig::from_backend_args(&args.backend)?;
            config.registry_path = Some(args.registry.clone());
            config.tool_verify = !(args.no_tool_verify || args.no_verify);
            config.param_verify = !(args.no_param_verify || args.no_verify);
            config.condition_on_instruction = args.condition_on_instruction;
            config.vq_cache = args.vq_cache.clone();
            config.transcripts_dir = args.transcripts.clone();
            cmd_call(&config, args)
        }
        Command::Eval(args) => {
            let mut config = RunConfig::from_backend_args(&args.backend)?;
            config.registry_path = Some(args.registry.clone());
            config.tool_verify = !(args.no_tool_verify || args.no_verify);
            config.param_verify = !(args.no_param_verify || args.no_verify);
            config.condition_on_instruction = args.condition_on_instruction;
            config.vq_cache = args.vq_cache.clone();
            config.report_out = args.report_out.clone();
            cmd_eval(&config, args)
        }
        Command::Stats(args) => cmd_stats(args),
    }
}

/// Dying quietly on a closed pipe beats a panic from println.
#[cfg(unix)]
fn reset_sigpipe() {
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
}

#[cfg(not(unix))]
fn reset_sigpipe() {}

fn main() {
    reset_sigpipe();
    if let Err(error) = run() {
        eprintln!("error: {error:#}");
        std::process::exit(1);
    }
}
