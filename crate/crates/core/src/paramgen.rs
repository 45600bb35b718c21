//! Parameter prediction with dual-model verification and call construction.
//!
//! A few-shot prompt built from the tool's own demonstrations yields a
//! primary "param: value" prediction; a chat-framed variant of the same
//! prompt yields a second opinion. Parameters where the two disagree after
//! normalization are settled one at a time by a multiple-choice question
//! whose answer is option a, option b, or "None". The verified values then
//! render the tool call, either through the tool's template or by one more
//! few-shot generation that is validated against the template render.

use std::collections::BTreeMap;

use once_cell::sync::Lazy;
use serde::{Deserialize, Serialize};

use crate::backend::{
    BackendError, BackendRouter, GenerationRequest, StageTag, TextBackend, Transcript,
};
use crate::eval::{calls_equivalent, canonical_scalar, parse_call, NonePolicy};
use crate::prompts::{self, PromptError, TemplateId};
use crate::registry::{ParamSpec, RegistryError, ToolSpec};

#[derive(Debug, thiserror::Error)]
pub enum ParamError {
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Registry(#[from] RegistryError),
    #[error("no parameter lines found in reply for `{tool}`: {head:?}")]
    Unparseable { tool: String, head: String },
    #[error("verification reply for `{param}` is neither an option nor None: {head:?}")]
    VerdictUnparseable { param: String, head: String },
    #[error("bad parameter input: {0}")]
    Precondition(String),
    #[error("tool `{0}` has no call template")]
    NoTemplate(String),
    #[error("model-constructed call rejected: {0}")]
    ModelCallInvalid(String),
}

/// Outcome of the per-parameter multiple-choice verification.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    A,
    B,
    #[serde(rename = "NONE")]
    None,
    #[serde(rename = "AGREE")]
    Agree,
}

/// Both predictions and the settled value for one parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamPrediction {
    pub param: String,
    pub primary_value: String,
    pub secondary_value: String,
    pub verdict: Verdict,
    pub final_value: String,
}

/// Settled values for every declared parameter of one tool.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VerifiedParamSet {
    pub tool: String,
    pub instruction: String,
    pub predictions: Vec<ParamPrediction>,
    pub transcripts: Vec<Transcript>,
    pub flags: Vec<String>,
}

impl VerifiedParamSet {
    pub fn final_values(&self) -> BTreeMap<String, String> {
        self.predictions
            .iter()
            .map(|p| (p.param.clone(), p.final_value.clone()))
            .collect()
    }
}

/// One few-shot parameter generation plus parse bookkeeping.
#[derive(Debug, Clone)]
pub struct ParamGeneration {
    pub values: BTreeMap<String, String>,
    /// Declared parameters the reply never mentioned (set to none token).
    pub missing: Vec<String>,
    pub transcript: Transcript,
}

fn normalize_value(value: &str, none_token: &str) -> String {
    let trimmed = value.trim();
    if trimmed.eq_ignore_ascii_case(none_token) {
        return none_token.to_string();
    }
    canonical_scalar(trimmed)
}

fn demo_param_lines(tool: &ToolSpec, demo: &crate::registry::Demonstration) -> Vec<(String, String)> {
    tool.params
        .iter()
        .map(|p| {
            let value = demo
                .assignments
                .get(&p.name)
                .cloned()
                .unwrap_or_else(|| p.none_token.clone());
            (p.name.clone(), value)
        })
        .collect()
}

fn demo_section_for(tool: &ToolSpec, n_shots: usize, with_api: bool) -> String {
    let blocks: Vec<String> = tool
        .demonstrations
        .iter()
        .take(n_shots)
        .map(|demo| {
            let params = demo_param_lines(tool, demo);
            let param_refs: Vec<(&str, &str)> = params
                .iter()
                .map(|(n, v)| (n.as_str(), v.as_str()))
                .collect();
            let api = with_api.then_some(demo.rendered_call.as_str());
            prompts::demo_block(&demo.instruction, &param_refs, api)
        })
        .collect();
    prompts::demo_section(&blocks)
}

fn parse_param_block(tool: &ToolSpec, text: &str) -> BTreeMap<String, String> {
    let mut values = BTreeMap::new();
    for line in text.lines() {
        let line = line.trim();
        if line.starts_with("INS:") || line.starts_with("API:") {
            break;
        }
        if let Some((name, value)) = line.split_once(':') {
            let name = name.trim();
            if tool.param(name).is_some() && !values.contains_key(name) {
                values.insert(name.to_string(), value.trim().to_string());
            }
        }
    }
    values
}

fn generate_with_template(
    instruction: &str,
    tool: &ToolSpec,
    backend: &dyn TextBackend,
    n_shots: usize,
    template: TemplateId,
) -> Result<ParamGeneration, ParamError> {
    let prompt = prompts::render(
        template,
        &[
            ("demos", &demo_section_for(tool, n_shots, false)),
            ("instruction", instruction),
        ],
    )?;
    let request = GenerationRequest::new(prompt.clone(), StageTag::ParamGen);
    let response = backend.generate(&request)?;
    let transcript = Transcript {
        tag: StageTag::ParamGen,
        prompt,
        response: response.text.clone(),
    };
    let mut values = parse_param_block(tool, &response.text);
    if values.is_empty() && !tool.params.is_empty() {
        return Err(ParamError::Unparseable {
            tool: tool.name.clone(),
            head: response.text.chars().take(120).collect(),
        });
    }
    let mut missing = Vec::new();
    for param in &tool.params {
        if !values.contains_key(&param.name) {
            values.insert(param.name.clone(), param.none_token.clone());
            missing.push(param.name.clone());
        }
    }
    Ok(ParamGeneration {
        values,
        missing,
        transcript,
    })
}

/// Predicts a value for every declared parameter by few-shot prompting with
/// the tool's demonstrations.
pub fn generate_parameters(
    instruction: &str,
    tool: &ToolSpec,
    backend: &dyn TextBackend,
    n_shots: usize,
) -> Result<ParamGeneration, ParamError> {
    generate_with_template(instruction, tool, backend, n_shots, TemplateId::ParamGen)
}

/// Same prediction task phrased as a chat prompt, for the second model.
pub fn second_opinion(
    instruction: &str,
    tool: &ToolSpec,
    alt_backend: &dyn TextBackend,
    n_shots: usize,
) -> Result<ParamGeneration, ParamError> {
    generate_with_template(instruction, tool, alt_backend, n_shots, TemplateId::ParamGenChat)
}

static OPTION_BRACKET: Lazy<regex::Regex> =
    Lazy::new(|| regex::Regex::new(r"\[\s*([abAB])\s*\]").expect("valid pattern"));
static NONE_WORD: Lazy<regex::Regex> =
    Lazy::new(|| regex::Regex::new(r"(?i)\bnone\b").expect("valid pattern"));

fn parse_verdict(param: &str, text: &str) -> Result<Verdict, ParamError> {
    if let Some(capture) = OPTION_BRACKET.captures(text) {
        return match capture
            .get(1)
            .expect("group 1 always present")
            .as_str()
            .to_ascii_lowercase()
            .as_str()
        {
            "a" => Ok(Verdict::A),
            _ => Ok(Verdict::B),
        };
    }
    if NONE_WORD.is_match(text) {
        return Ok(Verdict::None);
    }
    Err(ParamError::VerdictUnparseable {
        param: param.to_string(),
        head: text.chars().take(120).collect(),
    })
}

/// Settles a disagreement between two predicted values with a two-option
/// multiple-choice question; the primary prediction is always option a.
pub fn verify_parameter(
    instruction: &str,
    spec: &ParamSpec,
    a: &str,
    b: &str,
    backend: &dyn TextBackend,
) -> Result<(Verdict, Transcript), ParamError> {
    if normalize_value(a, &spec.none_token) == normalize_value(b, &spec.none_token) {
        return Err(ParamError::Precondition(format!(
            "values for `{}` agree; nothing to verify",
            spec.name
        )));
    }
    let definition = format!("{}: {}", spec.name, spec.description);
    let prompt = prompts::render(
        TemplateId::ParamVerify,
        &[
            ("instruction", instruction),
            ("parameter_definition", definition.as_str()),
            ("parameter_name", spec.name.as_str()),
            ("prediction_1", a),
            ("prediction_2", b),
        ],
    )?;
    let request = GenerationRequest::new(prompt.clone(), StageTag::ParamVerify);
    let response = backend.generate(&request)?;
    let transcript = Transcript {
        tag: StageTag::ParamVerify,
        prompt,
        response: response.text.clone(),
    };
    let verdict = parse_verdict(&spec.name, &response.text)?;
    Ok((verdict, transcript))
}

/// Applies per-parameter verification across a whole tool. Agreement
/// short-circuits without backend traffic; per-parameter failures fall back
/// to the primary value and are flagged, never aborting the set.
pub fn verify_all(
    instruction: &str,
    tool: &ToolSpec,
    primary: &BTreeMap<String, String>,
    secondary: &BTreeMap<String, String>,
    backend: &dyn TextBackend,
) -> Result<VerifiedParamSet, ParamError> {
    for param in &tool.params {
        if !primary.contains_key(&param.name) || !secondary.contains_key(&param.name) {
            return Err(ParamError::Precondition(format!(
                "both prediction maps must cover `{}`",
                param.name
            )));
        }
    }
    let mut predictions = Vec::with_capacity(tool.params.len());
    let mut transcripts = Vec::new();
    let mut flags = Vec::new();
    for param in &tool.params {
        let a = primary[&param.name].clone();
        let b = secondary[&param.name].clone();
        let (verdict, final_value) =
            if normalize_value(&a, &param.none_token) == normalize_value(&b, &param.none_token) {
                (Verdict::Agree, a.clone())
            } else {
                match verify_parameter(instruction, param, &a, &b, backend) {
                    Ok((verdict, transcript)) => {
                        transcripts.push(transcript);
                        let final_value = match verdict {
                            Verdict::A => a.clone(),
                            Verdict::B => b.clone(),
                            Verdict::None => {
                                if param.required {
                                    flags.push(format!("required-missing:{}", param.name));
                                }
                                param.none_token.clone()
                            }
                            Verdict::Agree => unreachable!("verify never returns AGREE"),
                        };
                        (verdict, final_value)
                    }
                    Err(ParamError::VerdictUnparseable { .. }) | Err(ParamError::Backend(_)) => {
                        flags.push(format!("verification-unparseable:{}", param.name));
                        (Verdict::A, a.clone())
                    }
                    Err(other) => return Err(other),
                }
            };
        predictions.push(ParamPrediction {
            param: param.name.clone(),
            primary_value: a,
            secondary_value: b,
            verdict,
            final_value,
        });
    }
    Ok(VerifiedParamSet {
        tool: tool.name.clone(),
        instruction: instruction.to_string(),
        predictions,
        transcripts,
        flags,
    })
}

/// Runs the full parameter stage: primary prediction, optionally a second
/// opinion plus verification, and returns the settled set.
pub fn predict_parameters(
    instruction: &str,
    tool: &ToolSpec,
    router: &BackendRouter,
    n_shots: usize,
    verify: bool,
) -> Result<VerifiedParamSet, ParamError> {
    let primary = generate_parameters(
        instruction,
        tool,
        router.for_stage(StageTag::ParamGen),
        n_shots,
    )?;
    let mut head_flags: Vec<String> = primary
        .missing
        .iter()
        .map(|name| format!("missing-param:{name}"))
        .collect();
    let mut head_transcripts = vec![primary.transcript.clone()];
    if !verify {
        let predictions = tool
            .params
            .iter()
            .map(|param| {
                let value = primary.values[&param.name].clone();
                ParamPrediction {
                    param: param.name.clone(),
                    primary_value: value.clone(),
                    secondary_value: value.clone(),
                    verdict: Verdict::Agree,
                    final_value: value,
                }
            })
            .collect();
        return Ok(VerifiedParamSet {
            tool: tool.name.clone(),
            instruction: instruction.to_string(),
            predictions,
            transcripts: head_transcripts,
            flags: head_flags,
        });
    }
    let secondary = second_opinion(instruction, tool, router.param_alt(), n_shots)?;
    head_flags.extend(
        secondary
            .missing
            .iter()
            .map(|name| format!("missing-param-secondary:{name}")),
    );
    head_transcripts.push(secondary.transcript.clone());
    let mut verified = verify_all(
        instruction,
        tool,
        &primary.values,
        &secondary.values,
        router.for_stage(StageTag::ParamVerify),
    )?;
    head_flags.append(&mut verified.flags);
    verified.flags = head_flags;
    head_transcripts.append(&mut verified.transcripts);
    verified.transcripts = head_transcripts;
    Ok(verified)
}

/// How the final call string is produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstructionMode {
    /// Deterministic render of the tool's call template.
    Template,
    /// Few-shot generation validated against the template render.
    Model,
}

/// A constructed call plus any fallback bookkeeping.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConstructedCall {
    pub call: String,
    pub flags: Vec<String>,
    pub transcript: Option<Transcript>,
}

fn first_call_line(text: &str) -> Option<&str> {
    text.lines().map(str::trim).find(|l| !l.is_empty())
}

/// Builds the tool call from verified parameters.
pub fn construct_call(
    tool: &ToolSpec,
    params: &VerifiedParamSet,
    mode: ConstructionMode,
    backend: Option<&dyn TextBackend>,
) -> Result<ConstructedCall, ParamError> {
    if params.tool != tool.name {
        return Err(ParamError::Precondition(format!(
            "parameter set belongs to `{}`, not `{}`",
            params.tool, tool.name
        )));
    }
    for param in &tool.params {
        if !params.predictions.iter().any(|p| p.param == param.name) {
            return Err(ParamError::Precondition(format!(
                "parameter set is missing `{}`",
                param.name
            )));
        }
    }
    let values = params.final_values();
    let template_call = if tool.call_template.is_empty() {
        None
    } else {
        Some(tool.render_call(&values)?)
    };
    match mode {
        ConstructionMode::Template => {
            let call = template_call.ok_or_else(|| ParamError::NoTemplate(tool.name.clone()))?;
            Ok(ConstructedCall {
                call,
                flags: Vec::new(),
                transcript: None,
            })
        }
        ConstructionMode::Model => {
            let backend = backend.ok_or_else(|| {
                ParamError::Precondition("model construction needs a backend".into())
            })?;
            let param_lines: Vec<String> = tool
                .params
                .iter()
                .map(|p| format!("{}: {}", p.name, values[&p.name]))
                .collect();
            let param_str = param_lines.join("\n");
            let prompt = prompts::render(
                TemplateId::CallConstruct,
                &[
                    ("demos", &demo_section_for(tool, tool.demonstrations.len(), true)),
                    ("instruction", params.instruction.as_str()),
                    ("param_str", &param_str),
                ],
            )?;
            let request = GenerationRequest::new(prompt.clone(), StageTag::CallConstruct);
            let response = backend.generate(&request)?;
            let transcript = Transcript {
                tag: StageTag::CallConstruct,
                prompt,
                response: response.text.clone(),
            };
            let model_call = first_call_line(&response.text).map(str::to_string);
            let validated = model_call.as_deref().and_then(|call| {
                let parsed = parse_call(call).ok()?;
                match &template_call {
                    Some(template) => {
                        let reference = parse_call(template).ok()?;
                        calls_equivalent(&parsed, &reference, NonePolicy::Strict).then_some(())
                    }
                    None => {
                        let declared: std::collections::BTreeMap<String, String> = tool
                            .params
                            .iter()
                            .map(|p| (p.name.clone(), canonical_scalar(&values[&p.name])))
                            .collect();
                        (parsed.params == declared).then_some(())
                    }
                }
            });
            match (validated, template_call) {
                (Some(()), _) => Ok(ConstructedCall {
                    call: model_call.expect("validated implies present"),
                    flags: Vec::new(),
                    transcript: Some(transcript),
                }),
                (None, Some(template)) => Ok(ConstructedCall {
                    call: template,
                    flags: vec!["model-call-rejected".to_string()],
                    transcript: Some(transcript),
                }),
                (None, None) => Err(ParamError::ModelCallInvalid(format!(
                    "reply for `{}` does not match the verified parameters and no template fallback exists",
                    tool.name
                ))),
            }
        }
    }
}
