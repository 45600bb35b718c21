//! Prompt templates and rendering.
//!
//! Every prompt the pipeline sends is rendered from a named template asset
//! embedded at compile time. Assets carry a small front-matter header (stage
//! tag and whether the body gets the chat frame) followed by the body text.
//! Placeholders use `{{name}}` so literal single-brace tokens such as
//! `{API_KEY}` inside demonstrations pass through untouched; substituted
//! values are never re-scanned.
//!
//! Rendering is strict in both directions: a placeholder without a binding
//! and a binding without a placeholder are both errors, so template drift
//! surfaces at the call site instead of as silently malformed prompts.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use once_cell::sync::Lazy;

use crate::backend::StageTag;

/// Frame applied to chat-style prompts around the body.
pub const CHAT_PREFIX: &str = "[INST] <<SYS>>\nYou are a helpful assistant.\n<</SYS>>\n\n";
pub const CHAT_SUFFIX: &str = "[/INST]";

/// All known templates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TemplateId {
    /// Few-shot tool generation over the current seed pool.
    ToolGen,
    /// Description generation for a tool that so far has only a name.
    ToolDesc,
    /// Few-shot related-tool-name generation.
    RelatedGen,
    /// Few-shot instruction generation for one tool.
    InstructionGen,
    /// Chat prompt asking why the ground-truth tool fits an instruction.
    ReasoningGen,
    /// Selection prompt in the fine-tuned "User / Tool Choices" shape.
    Select,
    /// Two-finalist selection with the verification answer as a hint line.
    SelectFinal,
    /// Zero-shot chat selection.
    Select0Shot,
    /// Contrastive-question generation from two names and descriptions.
    VqGen,
    /// Instruction-conditioned variant of [`TemplateId::VqGen`].
    VqGenInst,
    /// Answering a contrastive question against the user instruction.
    VqAnswer,
    /// Few-shot parameter prediction.
    ParamGen,
    /// Chat-framed twin of [`TemplateId::ParamGen`] for the second opinion.
    ParamGenChat,
    /// Per-parameter multiple-choice verification.
    ParamVerify,
    /// Few-shot call construction ending in "API:".
    CallConstruct,
}

impl TemplateId {
    pub const ALL: [TemplateId; 15] = [
        TemplateId::ToolGen,
        TemplateId::ToolDesc,
        TemplateId::RelatedGen,
        TemplateId::InstructionGen,
        TemplateId::ReasoningGen,
        TemplateId::Select,
        TemplateId::SelectFinal,
        TemplateId::Select0Shot,
        TemplateId::VqGen,
        TemplateId::VqGenInst,
        TemplateId::VqAnswer,
        TemplateId::ParamGen,
        TemplateId::ParamGenChat,
        TemplateId::ParamVerify,
        TemplateId::CallConstruct,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TemplateId::ToolGen => "tool-gen",
            TemplateId::ToolDesc => "tool-desc",
            TemplateId::RelatedGen => "related-gen",
            TemplateId::InstructionGen => "instruction-gen",
            TemplateId::ReasoningGen => "reasoning-gen",
            TemplateId::Select => "select",
            TemplateId::SelectFinal => "select-final",
            TemplateId::Select0Shot => "select-0shot",
            TemplateId::VqGen => "vq-gen",
            TemplateId::VqGenInst => "vq-gen-inst",
            TemplateId::VqAnswer => "vq-answer",
            TemplateId::ParamGen => "param-gen",
            TemplateId::ParamGenChat => "param-gen-chat",
            TemplateId::ParamVerify => "param-verify",
            TemplateId::CallConstruct => "call-construct",
        }
    }

    /// Stage tag requests rendered from this template are sent under.
    pub fn stage(self) -> StageTag {
        template(self).stage
    }

    /// Whether rendering wraps the body in the chat frame.
    pub fn chat_wrapped(self) -> bool {
        template(self).chat
    }
}

impl fmt::Display for TemplateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TemplateId {
    type Err = PromptError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        TemplateId::ALL
            .iter()
            .copied()
            .find(|id| id.as_str() == s)
            .ok_or_else(|| PromptError::UnknownTemplate(s.to_string()))
    }
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum PromptError {
    #[error("unknown template `{0}`")]
    UnknownTemplate(String),
    #[error("template {template} has no binding for placeholder `{placeholder}`")]
    UnboundPlaceholder {
        template: TemplateId,
        placeholder: String,
    },
    #[error("binding `{binding}` matches no placeholder in template {template}")]
    UnusedBinding { template: TemplateId, binding: String },
    #[error("tool name must not be empty")]
    EmptyToolName,
}

struct Template {
    stage: StageTag,
    chat: bool,
    body: String,
}

fn parse_asset(name: &str, raw: &str) -> Template {
    let (header, body) = raw
        .split_once("---\n")
        .unwrap_or_else(|| panic!("template asset {name} is missing the --- separator"));
    let mut stage = None;
    let mut chat = None;
    for line in header.lines() {
        let (key, value) = line
            .split_once(':')
            .unwrap_or_else(|| panic!("template asset {name}: bad header line {line:?}"));
        match key.trim() {
            "stage" => {
                stage = Some(
                    value
                        .trim()
                        .parse::<StageTag>()
                        .unwrap_or_else(|_| panic!("template asset {name}: bad stage")),
                )
            }
            "chat" => {
                chat = Some(
                    value
                        .trim()
                        .parse::<bool>()
                        .unwrap_or_else(|_| panic!("template asset {name}: bad chat flag")),
                )
            }
            other => panic!("template asset {name}: unknown header key {other:?}"),
        }
    }
    // The asset file ends in one newline that belongs to the file, not the
    // body; bodies that end mid-line (e.g. a trailing "Name:") depend on it
    // being stripped, and bodies with a meaningful trailing space keep it.
    let body = body
        .strip_suffix('\n')
        .unwrap_or_else(|| panic!("template asset {name} must end with a newline"));
    Template {
        stage: stage.unwrap_or_else(|| panic!("template asset {name}: missing stage")),
        chat: chat.unwrap_or_else(|| panic!("template asset {name}: missing chat flag")),
        body: body.to_string(),
    }
}

static TEMPLATES: Lazy<HashMap<TemplateId, Template>> = Lazy::new(|| {
    let assets: [(TemplateId, &str); 15] = [
        (TemplateId::ToolGen, include_str!("../templates/tool-gen.txt")),
        (TemplateId::ToolDesc, include_str!("../templates/tool-desc.txt")),
        (TemplateId::RelatedGen, include_str!("../templates/related-gen.txt")),
        (
            TemplateId::InstructionGen,
            include_str!("../templates/instruction-gen.txt"),
        ),
        (
            TemplateId::ReasoningGen,
            include_str!("../templates/reasoning-gen.txt"),
        ),
        (TemplateId::Select, include_str!("../templates/select.txt")),
        (TemplateId::SelectFinal, include_str!("../templates/select-final.txt")),
        (TemplateId::Select0Shot, include_str!("../templates/select-0shot.txt")),
        (TemplateId::VqGen, include_str!("../templates/vq-gen.txt")),
        (TemplateId::VqGenInst, include_str!("../templates/vq-gen-inst.txt")),
        (TemplateId::VqAnswer, include_str!("../templates/vq-answer.txt")),
        (TemplateId::ParamGen, include_str!("../templates/param-gen.txt")),
        (
            TemplateId::ParamGenChat,
            include_str!("../templates/param-gen-chat.txt"),
        ),
        (TemplateId::ParamVerify, include_str!("../templates/param-verify.txt")),
        (
            TemplateId::CallConstruct,
            include_str!("../templates/call-construct.txt"),
        ),
    ];
    assets
        .into_iter()
        .map(|(id, raw)| (id, parse_asset(id.as_str(), raw)))
        .collect()
});

fn template(id: TemplateId) -> &'static Template {
    TEMPLATES.get(&id).expect("every TemplateId has an asset")
}

/// Renders a template with the given placeholder bindings.
///
/// Pure in (id, bindings). Every `{{placeholder}}` must have a binding and
/// every binding must be consumed at least once.
pub fn render(id: TemplateId, bindings: &[(&str, &str)]) -> Result<String, PromptError> {
    let t = template(id);
    let mut used = vec![false; bindings.len()];
    let mut out = String::with_capacity(t.body.len() + 128);
    let mut rest = t.body.as_str();
    while let Some(start) = rest.find("{{") {
        out.push_str(&rest[..start]);
        let after = &rest[start + 2..];
        let end = after
            .find("}}")
            .unwrap_or_else(|| panic!("template {id} has an unterminated placeholder"));
        let name = &after[..end];
        match bindings.iter().position(|(key, _)| *key == name) {
            Some(i) => {
                used[i] = true;
                out.push_str(bindings[i].1);
            }
            None => {
                return Err(PromptError::UnboundPlaceholder {
                    template: id,
                    placeholder: name.to_string(),
                })
            }
        }
        rest = &after[end + 2..];
    }
    out.push_str(rest);
    if let Some(i) = used.iter().position(|u| !u) {
        return Err(PromptError::UnusedBinding {
            template: id,
            binding: bindings[i].0.to_string(),
        });
    }
    if t.chat {
        Ok(format!("{CHAT_PREFIX}{out}{CHAT_SUFFIX}"))
    } else {
        Ok(out)
    }
}

/// Training-target serialization: the reasoning note followed by the action.
pub fn serialize_target(thought: &str, tool_name: &str) -> Result<String, PromptError> {
    if tool_name.is_empty() {
        return Err(PromptError::EmptyToolName);
    }
    Ok(format!("Thought: {thought}\n\nAct: CALLTOOL[{tool_name}()]"))
}

/// Candidate tools as bulleted "Name: Description" lines, one per tool, in
/// the given order. No trailing newline.
pub fn candidate_list(tools: &[(&str, &str)]) -> String {
    tools
        .iter()
        .map(|(name, description)| format!("- {name}: {description}"))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Seed-pool block for the tool-generation prompt: repeated
/// "Name/Description" stanzas, each followed by a blank line, so the
/// template's closing "Name:" starts a fresh stanza.
pub fn seed_pool_block(tools: &[(&str, &str)]) -> String {
    let mut out = String::new();
    for (name, description) in tools {
        out.push_str(&format!("Name: {name}\nDescription: {description}\n\n"));
    }
    out
}

/// One few-shot demonstration stanza: the INS line, one "param: value" line
/// per parameter in declared order, and optionally the API line.
pub fn demo_block(instruction: &str, params: &[(&str, &str)], api: Option<&str>) -> String {
    let mut out = format!("INS: A user says, \"{instruction}\"\n");
    for (name, value) in params {
        out.push_str(&format!("{name}: {value}\n"));
    }
    if let Some(call) = api {
        out.push_str(&format!("API: {call}\n"));
    }
    out
}

/// Joins demonstration stanzas for the `{{demos}}` slot: each block already
/// ends in a newline, and one blank line separates it from what follows.
pub fn demo_section(blocks: &[String]) -> String {
    let mut out = String::new();
    for block in blocks {
        out.push_str(block);
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_templates_load() {
        for id in TemplateId::ALL {
            let t = template(id);
            assert!(!t.body.is_empty(), "{id} has an empty body");
        }
        assert_eq!(TemplateId::ToolGen.stage(), StageTag::ToolGen);
        assert_eq!(TemplateId::ToolDesc.stage(), StageTag::ToolGen);
        assert_eq!(TemplateId::SelectFinal.stage(), StageTag::Select);
        assert_eq!(TemplateId::ParamGenChat.stage(), StageTag::ParamGen);
        assert!(TemplateId::VqGen.chat_wrapped());
        assert!(!TemplateId::Select.chat_wrapped());
    }

    #[test]
    fn unknown_template_name_is_an_error() {
        assert_eq!(
            "select-9shot".parse::<TemplateId>(),
            Err(PromptError::UnknownTemplate("select-9shot".into()))
        );
    }

    #[test]
    fn missing_binding_names_the_placeholder() {
        let err = render(TemplateId::VqAnswer, &[("instruction", "hi")]).unwrap_err();
        assert_eq!(
            err,
            PromptError::UnboundPlaceholder {
                template: TemplateId::VqAnswer,
                placeholder: "question".into()
            }
        );
    }

    #[test]
    fn stray_binding_is_an_error() {
        let err = render(
            TemplateId::VqAnswer,
            &[("instruction", "hi"), ("question", "q"), ("extra", "x")],
        )
        .unwrap_err();
        assert_eq!(
            err,
            PromptError::UnusedBinding {
                template: TemplateId::VqAnswer,
                binding: "extra".into()
            }
        );
    }

    #[test]
    fn chat_frame_wraps_body() {
        let out = render(
            TemplateId::VqAnswer,
            &[("instruction", "find a car"), ("question", "Which one?")],
        )
        .unwrap();
        assert_eq!(
            out,
            "[INST] <<SYS>>\nYou are a helpful assistant.\n<</SYS>>\n\nA user said, \"find a car\"\n\nWhich one?[/INST]"
        );
    }

    #[test]
    fn values_are_not_rescanned_for_placeholders() {
        let out = render(
            TemplateId::VqAnswer,
            &[("instruction", "literal {{question}} stays"), ("question", "q")],
        )
        .unwrap();
        assert!(out.contains("literal {{question}} stays"));
    }

    #[test]
    fn single_braces_pass_through() {
        let out = render(
            TemplateId::CallConstruct,
            &[
                ("demos", "INS: A user says, \"x\"\nlat: 1\nAPI: curl -X GET 'https://h/p?appid={API_KEY}'\n\n"),
                ("instruction", "y"),
                ("param_str", "lat: 2"),
            ],
        )
        .unwrap();
        assert!(out.contains("{API_KEY}"));
        assert!(out.ends_with("INS: A user says, \"y\"\nlat: 2\nAPI:"));
    }

    #[test]
    fn render_is_pure() {
        let bindings = [("instruction", "i"), ("question", "q")];
        assert_eq!(
            render(TemplateId::VqAnswer, &bindings).unwrap(),
            render(TemplateId::VqAnswer, &bindings).unwrap()
        );
    }

    #[test]
    fn target_serialization_shape() {
        assert_eq!(
            serialize_target("t", "X").unwrap(),
            "Thought: t\n\nAct: CALLTOOL[X()]"
        );
        assert_eq!(serialize_target("t", ""), Err(PromptError::EmptyToolName));
    }

    #[test]
    fn narrated_note_carries_the_call_action() {
        let out = serialize_target(
            "Since I need to find the car within 10 miles, \u{201c}Car Finder\u{201d} tool seems to be the right choice here. I need to use this tool.",
            "CarFinder",
        )
        .unwrap();
        assert!(out.contains("CALLTOOL[CarFinder()]"));
    }

    #[test]
    fn candidate_list_shape() {
        let out = candidate_list(&[("A", "does a"), ("B", "does b")]);
        assert_eq!(out, "- A: does a\n- B: does b");
    }

    #[test]
    fn param_verify_prompt_ends_with_bracket_cue() {
        let out = render(
            TemplateId::ParamVerify,
            &[
                ("instruction", "book a room under $300"),
                ("parameter_definition", "min-price: Minimum price of the hotel room."),
                ("parameter_name", "min-price"),
                ("prediction_1", "300"),
                ("prediction_2", "0"),
            ],
        )
        .unwrap();
        assert!(
            out.ends_with("respond with the chosen option only in square brackets []. [/INST]"),
            "got tail: {:?}",
            &out[out.len().saturating_sub(70)..]
        );
    }

    #[test]
    fn zero_shot_selection_prompt_tail() {
        let out = render(
            TemplateId::Select0Shot,
            &[
                ("tools", &candidate_list(&[("A", "a"), ("B", "b")])),
                ("instruction", "do something"),
            ],
        )
        .unwrap();
        assert!(out.ends_with("Respond with just the name of the tool[/INST]"));
    }

    #[test]
    fn demo_block_shapes() {
        let with_api = demo_block("do it", &[("lat", "1.0"), ("lon", "2.0")], Some("curl -X GET 'https://h/p'"));
        assert_eq!(
            with_api,
            "INS: A user says, \"do it\"\nlat: 1.0\nlon: 2.0\nAPI: curl -X GET 'https://h/p'\n"
        );
        let without = demo_block("do it", &[("lat", "1.0")], None);
        assert_eq!(without, "INS: A user says, \"do it\"\nlat: 1.0\n");
        assert_eq!(
            demo_section(&[without.clone(), without.clone()]),
            format!("{without}\n{without}\n")
        );
    }
}
