use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use super::records::{NlAction, Provenance, TypeList, TypeListEntry, TypeTree};
use super::StepId;
use crate::llm::NO_FEEDBACK;
use crate::pddl::{is_reserved, is_valid_identifier, TypeHierarchy, OBJECT};
use crate::validator::{ActionDraft, TaskDraft};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum StepParseError {
    #[error("no fenced ```{tag} block found; end the answer with exactly one")]
    MissingBlock { tag: String },
    #[error("{count} fenced ```{tag} blocks found; give exactly one")]
    DuplicateBlock { tag: String, count: usize },
    #[error("```{tag} block: {message}")]
    Grammar { tag: String, message: String },
}

/// Parsed payload of a step answer, before any cross-step checks.
#[derive(Clone, Debug, PartialEq)]
pub enum StepOutput {
    Types(TypeList),
    /// `(name, parent)` lines in answer order.
    Hierarchy(Vec<(String, String)>),
    Actions(Vec<NlAction>),
    Action { draft: ActionDraft, text: String },
    Task { draft: TaskDraft, text: String },
    /// `None` is the no-change sentinel.
    Feedback(Option<String>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Parsed {
    pub output: StepOutput,
    pub warnings: Vec<String>,
}

/// Fenced blocks as `(tag, body)`; an unclosed block runs to the end.
fn fenced_blocks(text: &str) -> Vec<(String, String)> {
    let mut out = Vec::new();
    let mut open: Option<(String, Vec<&str>)> = None;
    for line in text.lines() {
        let t = line.trim();
        match &mut open {
            None => {
                if let Some(tag) = t.strip_prefix("```") {
                    open = Some((tag.trim().to_ascii_lowercase(), Vec::new()));
                }
            }
            Some((tag, body)) => {
                if t == "```" {
                    out.push((std::mem::take(tag), body.join("\n")));
                    open = None;
                } else {
                    body.push(line);
                }
            }
        }
    }
    if let Some((tag, body)) = open {
        out.push((tag, body.join("\n")));
    }
    out
}

/// Body of the only block tagged `tag`.
pub fn tagged_block(text: &str, tag: &str) -> Result<String, StepParseError> {
    let mut found: Vec<String> = fenced_blocks(text).into_iter().filter(|(t, _)| t == tag).map(|(_, b)| b).collect();
    match found.len() {
        0 => Err(StepParseError::MissingBlock { tag: tag.into() }),
        1 => Ok(found.remove(0)),
        count => Err(StepParseError::DuplicateBlock { tag: tag.into(), count }),
    }
}

fn grammar(tag: &str, message: impl Into<String>) -> StepParseError {
    StepParseError::Grammar { tag: tag.into(), message: message.into() }
}

/// Lowercases and joins words with underscores.
fn normalize_name(raw: &str) -> String {
    raw.trim().trim_start_matches("- ").split_whitespace().collect::<Vec<_>>().join("_").to_ascii_lowercase()
}

fn check_name(tag: &str, name: &str) -> Result<(), StepParseError> {
    if !is_valid_identifier(name) || (is_reserved(name) && name != OBJECT) {
        return Err(grammar(tag, format!("'{name}' is not a usable name")));
    }
    Ok(())
}

fn content_lines(body: &str) -> impl Iterator<Item = (usize, &str)> {
    body.lines().enumerate().map(|(i, l)| (i + 1, l.trim())).filter(|(_, l)| !l.is_empty())
}

pub(super) fn parse_types(body: &str, warnings: &mut Vec<String>) -> Result<TypeList, StepParseError> {
    let mut entries: Vec<TypeListEntry> = Vec::new();
    for (n, line) in content_lines(body) {
        let (name, description) = line.split_once(':').unwrap_or((line, ""));
        let name = normalize_name(name);
        if name.is_empty() {
            return Err(grammar("types", format!("line {n} has no type name")));
        }
        check_name("types", &name)?;
        if name == OBJECT {
            warnings.push("dropped the root type object from the type list".into());
            continue;
        }
        if entries.iter().any(|e| e.name == name) {
            warnings.push(format!("duplicate type '{name}' dropped"));
            continue;
        }
        entries.push(TypeListEntry { name, description: description.trim().to_string() });
    }
    if entries.is_empty() {
        return Err(grammar("types", "no types listed"));
    }
    Ok(TypeList { entries })
}

pub(super) fn parse_hierarchy(body: &str) -> Result<Vec<(String, String)>, StepParseError> {
    let mut out: Vec<(String, String)> = Vec::new();
    for (n, line) in content_lines(body) {
        let Some((name, parent)) = line.split_once(':') else {
            return Err(grammar("hierarchy", format!("line {n} is not 'name: parent'")));
        };
        let (name, parent) = (normalize_name(name), normalize_name(parent));
        check_name("hierarchy", &name)?;
        check_name("hierarchy", &parent)?;
        if let Some((_, p)) = out.iter().find(|(x, _)| *x == name) {
            if *p != parent {
                return Err(grammar("hierarchy", format!("type '{name}' has two parents: {p} and {parent}")));
            }
            continue;
        }
        out.push((name, parent));
    }
    if out.is_empty() {
        return Err(grammar("hierarchy", "no types listed"));
    }
    Ok(out)
}

pub(super) fn parse_actions(body: &str, warnings: &mut Vec<String>) -> Result<Vec<NlAction>, StepParseError> {
    let mut out: Vec<NlAction> = Vec::new();
    let mut field: Option<&'static str> = None;
    for (n, line) in content_lines(body) {
        let line = line.trim_start_matches("- ");
        let key = line.split_once(':').map(|(k, v)| (k.trim().to_ascii_lowercase(), v.trim()));
        match key.as_ref().map(|(k, v)| (k.as_str(), *v)) {
            Some(("name", v)) => {
                out.push(NlAction { name: normalize_name(v), description: String::new(), example: String::new() });
                field = Some("name");
            }
            Some(("description", v)) if !out.is_empty() => {
                out.last_mut().unwrap().description = v.to_string();
                field = Some("description");
            }
            Some(("example", v)) if !out.is_empty() => {
                out.last_mut().unwrap().example = v.to_string();
                field = Some("example");
            }
            _ => {
                let Some(a) = out.last_mut() else {
                    return Err(grammar("actions", format!("line {n}: expected 'name: ...'")));
                };
                match field {
                    Some("description") => a.description = format!("{} {line}", a.description),
                    Some("example") => a.example = format!("{} {line}", a.example),
                    _ => return Err(grammar("actions", format!("line {n}: expected 'description: ...'"))),
                }
            }
        }
    }
    let mut seen = BTreeSet::new();
    let mut kept = Vec::new();
    for a in out {
        check_name("actions", &a.name)?;
        if a.description.trim().is_empty() || a.example.trim().is_empty() {
            return Err(grammar("actions", format!("action '{}' needs a description and an example", a.name)));
        }
        if !seen.insert(a.name.clone()) {
            warnings.push(format!("duplicate action '{}' dropped", a.name));
            continue;
        }
        kept.push(a);
    }
    if kept.is_empty() {
        return Err(grammar("actions", "no actions listed"));
    }
    Ok(kept)
}

/// Extracts a step's payload from the terminal fenced block of an answer.
/// Reasoning before the block is ignored.
pub fn parse_step_output(step: StepId, raw: &str) -> Result<Parsed, StepParseError> {
    let tag = step.block_tag();
    let body = tagged_block(raw, tag)?;
    let mut warnings = Vec::new();
    let output = match step {
        StepId::TypeExtraction => StepOutput::Types(parse_types(&body, &mut warnings)?),
        StepId::HierarchyConstruction => StepOutput::Hierarchy(parse_hierarchy(&body)?),
        StepId::ActionExtraction => StepOutput::Actions(parse_actions(&body, &mut warnings)?),
        StepId::ActionConstruction => {
            let draft = ActionDraft::parse(&body).map_err(|e| grammar(tag, e.to_string()))?;
            StepOutput::Action { draft, text: body.trim().to_string() }
        }
        StepId::TaskExtraction => {
            let draft = TaskDraft::parse(&body).map_err(|e| grammar(tag, e.to_string()))?;
            StepOutput::Task { draft, text: body.trim().to_string() }
        }
        StepId::Planning => return Err(grammar(tag, "planning has no model output")),
    };
    Ok(Parsed { output, warnings })
}

/// Reads a review answer: `None` when it is the no-change sentinel.
pub fn parse_feedback(raw: &str) -> Result<Option<String>, StepParseError> {
    let body = tagged_block(raw, "feedback")?;
    let body = body.trim();
    if body.is_empty() {
        return Err(grammar("feedback", format!("empty; write '{NO_FEEDBACK}' to accept")));
    }
    Ok(if body == NO_FEEDBACK { None } else { Some(body.to_string()) })
}

/// Checks hierarchy lines against the extracted types: every type placed,
/// no undeclared parents, no cycles. Types the model added without
/// sub-types are dropped with a warning; edited additions are kept.
pub fn build_tree(
    lines: &[(String, String)],
    types: &TypeList,
    added: Provenance,
    warnings: &mut Vec<String>,
) -> Result<TypeTree, StepParseError> {
    let err = |m: String| grammar("hierarchy", m);
    let declared: BTreeSet<&str> = lines.iter().map(|(n, _)| n.as_str()).collect();
    if let Some(missing) = types.names().find(|t| !declared.contains(t)) {
        return Err(err(format!("type '{missing}' is missing")));
    }
    let mut lines: Vec<(String, String)> = lines.iter().filter(|(n, _)| n != OBJECT).cloned().collect();
    for (n, p) in &lines {
        if p != OBJECT && !declared.contains(p.as_str()) {
            return Err(err(format!("parent '{p}' of '{n}' has no line of its own")));
        }
    }
    let requested: BTreeSet<&str> = types.names().collect();
    // dropping a childless parent can leave its own parent childless
    #[allow(clippy::while_immutable_condition)]
    while added == Provenance::SynthesizedParent {
        let childless: Vec<String> = lines
            .iter()
            .filter(|(n, _)| !requested.contains(n.as_str()) && !lines.iter().any(|(_, p)| p == n))
            .map(|(n, _)| n.clone())
            .collect();
        if childless.is_empty() {
            break;
        }
        for c in &childless {
            warnings.push(format!("added type '{c}' has no sub-types and was dropped"));
        }
        lines.retain(|(n, _)| !childless.contains(n));
    }
    let descriptions: BTreeMap<&str, &str> =
        types.entries.iter().map(|e| (e.name.as_str(), e.description.as_str())).collect();
    let hierarchy = TypeHierarchy::from_entries(
        lines.iter().map(|(n, p)| (n.as_str(), p.as_str(), descriptions.get(n.as_str()).copied().unwrap_or(""))),
    )
    .map_err(|e| err(e.to_string()))?;
    let provenance = hierarchy
        .names()
        .map(|n| (n.to_string(), if requested.contains(n) { Provenance::Requested } else { added }))
        .collect();
    Ok(TypeTree { hierarchy, provenance })
}
