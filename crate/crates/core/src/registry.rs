//! Tool catalog: schemas, demonstrations, call templates, candidate sets.
//!
//! A registry is immutable once loaded and validated. Call templates use
//! single-brace `{param}` placeholders; an all-uppercase placeholder such as
//! `{API_KEY}` is an environment slot that renders verbatim and is filled
//! only at live-execution time.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Parameter value space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParamKind {
    String,
    Number,
    Enum(Vec<String>),
    Boolean,
}

fn default_none_token() -> String {
    "none".to_string()
}

/// Schema of one tool parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    /// Natural-language definition, quoted in verification prompts.
    pub description: String,
    pub kind: ParamKind,
    #[serde(default)]
    pub required: bool,
    /// Literal rendered when the parameter is absent.
    #[serde(default = "default_none_token")]
    pub none_token: String,
}

/// Worked example attached to a tool: what the user said, which parameter
/// values that implies, and the resulting call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Demonstration {
    pub instruction: String,
    pub assignments: BTreeMap<String, String>,
    pub rendered_call: String,
}

/// One tool: identity, schema, demonstrations, call surface.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolSpec {
    pub name: String,
    pub description: String,
    #[serde(default)]
    pub params: Vec<ParamSpec>,
    #[serde(default)]
    pub demonstrations: Vec<Demonstration>,
    /// Templated call string; empty for tools that exist only as selection
    /// training material.
    #[serde(default)]
    pub call_template: String,
    #[serde(default)]
    pub related: Vec<String>,
    #[serde(default)]
    pub synthetic: bool,
}

/// Candidate list offered to the selection model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateSet {
    pub tools: Vec<String>,
    pub ground_truth: Option<String>,
    pub hard: bool,
}

impl CandidateSet {
    pub fn new(
        tools: Vec<String>,
        ground_truth: Option<String>,
        hard: bool,
    ) -> Result<Self, RegistryError> {
        let mut seen = HashSet::new();
        for tool in &tools {
            if !seen.insert(tool.as_str()) {
                return Err(RegistryError::Validation(format!(
                    "candidate set lists `{tool}` twice"
                )));
            }
        }
        if let Some(gt) = &ground_truth {
            if !tools.iter().any(|t| t == gt) {
                return Err(RegistryError::Validation(format!(
                    "ground truth `{gt}` is not among the candidates"
                )));
            }
        }
        Ok(CandidateSet {
            tools,
            ground_truth,
            hard,
        })
    }

    pub fn len(&self) -> usize {
        self.tools.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tools.is_empty()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tools.iter().any(|t| t == name)
    }
}

/// How a candidate set is drawn for a ground-truth tool.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CandidateMode {
    /// k random other tools plus the ground truth, order shuffled.
    RandomK,
    /// Only the ground truth and its related tools; marked hard.
    RelatedOnly,
}

#[derive(Debug, thiserror::Error)]
pub enum RegistryError {
    #[error("cannot read registry file: {0}")]
    Io(#[from] std::io::Error),
    #[error("registry file does not parse: {0}")]
    Parse(String),
    #[error("invalid registry: {0}")]
    Validation(String),
    #[error("unknown tool `{0}`")]
    UnknownTool(String),
    #[error("tool `{0}` has no related tools to build a hard candidate set from")]
    NoRelatedTools(String),
    #[error("call template of `{tool}` is malformed: {detail}")]
    MalformedTemplate { tool: String, detail: String },
}

/// True for `{API_KEY}`-style environment placeholders, which are not
/// parameters and render verbatim.
pub fn is_env_placeholder(name: &str) -> bool {
    let mut chars = name.chars();
    match chars.next() {
        Some(c) if c.is_ascii_uppercase() => {}
        _ => return false,
    }
    chars.all(|c| c.is_ascii_uppercase() || c.is_ascii_digit() || c == '_')
}

/// Substitutes `{placeholder}` slots in a call template. Environment
/// placeholders stay verbatim; every other placeholder is resolved through
/// `lookup`. Substituted values are not re-scanned.
pub fn instantiate_template(
    tool: &str,
    template: &str,
    lookup: impl Fn(&str) -> Option<String>,
) -> Result<String, RegistryError> {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(start) = rest.find('{') {
        out.push_str(&rest[..start]);
        let after = &rest[start + 1..];
        let end = after.find('}').ok_or_else(|| RegistryError::MalformedTemplate {
            tool: tool.to_string(),
            detail: "unterminated placeholder".to_string(),
        })?;
        let name = &after[..end];
        if is_env_placeholder(name) {
            out.push('{');
            out.push_str(name);
            out.push('}');
        } else {
            match lookup(name) {
                Some(value) => out.push_str(&value),
                None => {
                    return Err(RegistryError::MalformedTemplate {
                        tool: tool.to_string(),
                        detail: format!("placeholder `{name}` names no parameter"),
                    })
                }
            }
        }
        rest = &after[end + 1..];
    }
    out.push_str(rest);
    Ok(out)
}

impl ToolSpec {
    pub fn param(&self, name: &str) -> Option<&ParamSpec> {
        self.params.iter().find(|p| p.name == name)
    }

    /// Renders the call template with the given values; declared parameters
    /// without a value fall back to their none token.
    pub fn render_call(
        &self,
        values: &BTreeMap<String, String>,
    ) -> Result<String, RegistryError> {
        instantiate_template(&self.name, &self.call_template, |placeholder| {
            if let Some(value) = values.get(placeholder) {
                return Some(value.clone());
            }
            self.param(placeholder).map(|p| p.none_token.clone())
        })
    }

    fn validate(&self) -> Result<(), RegistryError> {
        if self.name.trim().is_empty() {
            return Err(RegistryError::Validation("a tool has an empty name".into()));
        }
        let mut param_names = HashSet::new();
        for param in &self.params {
            if param.name.trim().is_empty() {
                return Err(RegistryError::Validation(format!(
                    "tool `{}` declares a parameter with an empty name",
                    self.name
                )));
            }
            if !param_names.insert(param.name.as_str()) {
                return Err(RegistryError::Validation(format!(
                    "tool `{}` declares parameter `{}` twice",
                    self.name, param.name
                )));
            }
            if let ParamKind::Enum(values) = &param.kind {
                if values.is_empty() {
                    return Err(RegistryError::Validation(format!(
                        "enum parameter `{}` of `{}` has no values",
                        param.name, self.name
                    )));
                }
            }
        }
        // Walking the template with a param-only lookup rejects both stray
        // placeholders and syntax damage in one pass.
        instantiate_template(&self.name, &self.call_template, |placeholder| {
            if param_names.contains(placeholder) {
                Some(String::new())
            } else {
                None
            }
        })?;
        for (i, demo) in self.demonstrations.iter().enumerate() {
            for key in demo.assignments.keys() {
                if !param_names.contains(key.as_str()) {
                    return Err(RegistryError::Validation(format!(
                        "demonstration {i} of `{}` assigns undeclared parameter `{key}`",
                        self.name
                    )));
                }
            }
            let rendered = self.render_call(&demo.assignments)?;
            if rendered != demo.rendered_call {
                return Err(RegistryError::Validation(format!(
                    "demonstration {i} of `{}` (\"{}\") renders to {rendered:?}, but the file says {:?}",
                    self.name, demo.instruction, demo.rendered_call
                )));
            }
        }
        Ok(())
    }
}

/// On-disk registry document.
#[derive(Debug, Serialize, Deserialize)]
struct RegistryFile {
    #[serde(default)]
    notes: String,
    tools: Vec<ToolSpec>,
}

/// Validated, immutable tool catalog.
#[derive(Debug)]
pub struct Registry {
    tools: Vec<ToolSpec>,
    index: HashMap<String, usize>,
    notes: String,
}

impl Registry {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, RegistryError> {
        let text = std::fs::read_to_string(path)?;
        Registry::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self, RegistryError> {
        let file: RegistryFile =
            serde_json::from_str(text).map_err(|e| RegistryError::Parse(e.to_string()))?;
        let mut registry = Registry::from_tools(file.tools)?;
        registry.notes = file.notes;
        Ok(registry)
    }

    pub fn from_tools(tools: Vec<ToolSpec>) -> Result<Self, RegistryError> {
        let mut index = HashMap::new();
        for (i, tool) in tools.iter().enumerate() {
            tool.validate()?;
            if index.insert(tool.name.clone(), i).is_some() {
                return Err(RegistryError::Validation(format!(
                    "tool name `{}` appears more than once",
                    tool.name
                )));
            }
        }
        for tool in &tools {
            for related in &tool.related {
                if !index.contains_key(related) {
                    return Err(RegistryError::Validation(format!(
                        "tool `{}` lists unknown related tool `{related}`",
                        tool.name
                    )));
                }
            }
        }
        Ok(Registry {
            tools,
            index,
            notes: String::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.tools.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tools.is_empty()
    }

    pub fn notes(&self) -> &str {
        &self.notes
    }

    pub fn get(&self, name: &str) -> Option<&ToolSpec> {
        self.index.get(name).map(|i| &self.tools[*i])
    }

    pub fn require(&self, name: &str) -> Result<&ToolSpec, RegistryError> {
        self.get(name)
            .ok_or_else(|| RegistryError::UnknownTool(name.to_string()))
    }

    /// Tools in file order.
    pub fn tools(&self) -> &[ToolSpec] {
        &self.tools
    }

    /// Draws a candidate set for a ground-truth tool.
    ///
    /// `random_k` sampling works over the lexicographically sorted pool of
    /// other tool names, so which tools a given seed picks does not depend
    /// on file order.
    pub fn build_candidate_set(
        &self,
        ground_truth: &str,
        mode: CandidateMode,
        k: usize,
        rng_seed: u64,
    ) -> Result<CandidateSet, RegistryError> {
        let gt = self.require(ground_truth)?;
        match mode {
            CandidateMode::RandomK => {
                let mut pool: Vec<&str> = self
                    .tools
                    .iter()
                    .map(|t| t.name.as_str())
                    .filter(|n| *n != ground_truth)
                    .collect();
                pool.sort_unstable();
                let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
                pool.shuffle(&mut rng);
                let take = k.min(pool.len());
                let mut names: Vec<String> =
                    pool[..take].iter().map(|n| n.to_string()).collect();
                names.push(ground_truth.to_string());
                names.shuffle(&mut rng);
                CandidateSet::new(names, Some(ground_truth.to_string()), false)
            }
            CandidateMode::RelatedOnly => {
                if gt.related.is_empty() {
                    return Err(RegistryError::NoRelatedTools(ground_truth.to_string()));
                }
                let mut names = vec![ground_truth.to_string()];
                names.extend(gt.related.iter().cloned());
                CandidateSet::new(names, Some(ground_truth.to_string()), true)
            }
        }
    }

    /// Resolves candidate names to (name, description) pairs for prompt
    /// rendering, in candidate order.
    pub fn describe_candidates<'a>(
        &'a self,
        set: &'a CandidateSet,
    ) -> Result<Vec<(&'a str, &'a str)>, RegistryError> {
        set.tools
            .iter()
            .map(|name| {
                self.require(name)
                    .map(|t| (t.name.as_str(), t.description.as_str()))
            })
            .collect()
    }
}
