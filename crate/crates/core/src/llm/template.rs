use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Literal line a feedback model uses to accept a solution unchanged.
pub const NO_FEEDBACK: &str = "No feedback.";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TemplateKind {
    Main,
    Feedback,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub id: String,
    pub kind: TemplateKind,
    /// Placeholders the caller must bind; `checklist` is bound from the
    /// checklist itself and is not listed here.
    #[serde(default)]
    pub placeholders: Vec<String>,
    pub body: String,
    #[serde(default)]
    pub checklist: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TemplateError {
    #[error("template {template}: no binding for {}", names.join(", "))]
    MissingBinding { template: String, names: Vec<String> },
    #[error("template {template}: unknown placeholder {name}")]
    UnknownPlaceholder { template: String, name: String },
    #[error("template {template}: {message}")]
    Invalid { template: String, message: String },
    #[error("no template with id {0}")]
    NotFound(String),
    #[error("template file {path}: {message}")]
    Load { path: String, message: String },
}

/// Names between `{{` and `}}` in order of appearance.
fn placeholders(body: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut rest = body;
    while let Some(start) = rest.find("{{") {
        let after = &rest[start + 2..];
        let Some(end) = after.find("}}") else { break };
        out.push(after[..end].trim());
        rest = &after[end + 2..];
    }
    out
}

impl PromptTemplate {
    /// Checks the template contract: placeholders in the body match the
    /// declared ones, feedback templates carry a checklist and an accepted
    /// exemplar.
    pub fn check(&self) -> Result<(), TemplateError> {
        let invalid = |message: String| TemplateError::Invalid { template: self.id.clone(), message };
        let declared: BTreeSet<&str> = self.placeholders.iter().map(String::as_str).collect();
        let used: BTreeSet<&str> = placeholders(&self.body).into_iter().collect();
        for u in &used {
            if *u != "checklist" && !declared.contains(u) {
                return Err(TemplateError::UnknownPlaceholder { template: self.id.clone(), name: u.to_string() });
            }
        }
        for d in &declared {
            if !used.contains(d) {
                return Err(invalid(format!("declared placeholder {d} is not used in the body")));
            }
        }
        match self.kind {
            TemplateKind::Feedback => {
                if self.checklist.is_empty() || !used.contains("checklist") {
                    return Err(invalid("feedback templates need a checklist and a {{checklist}} slot".into()));
                }
                if !self.body.contains(NO_FEEDBACK) {
                    return Err(invalid(format!("no exemplar accepted with '{NO_FEEDBACK}'")));
                }
            }
            TemplateKind::Main => {
                if !self.checklist.is_empty() || used.contains("checklist") {
                    return Err(invalid("main templates have no checklist".into()));
                }
            }
        }
        Ok(())
    }

    fn checklist_text(&self) -> String {
        self.checklist.iter().enumerate().map(|(i, q)| format!("{}. {q}", i + 1)).collect::<Vec<_>>().join("\n")
    }
}

/// Substitutes every `{{name}}` in one pass; substituted text is never
/// rescanned.
pub fn render_template(template: &PromptTemplate, bindings: &BTreeMap<String, String>) -> Result<String, TemplateError> {
    let declared: BTreeSet<&str> = template.placeholders.iter().map(String::as_str).collect();
    if let Some(extra) = bindings.keys().find(|k| !declared.contains(k.as_str())) {
        return Err(TemplateError::UnknownPlaceholder { template: template.id.clone(), name: extra.clone() });
    }
    let missing: Vec<String> =
        template.placeholders.iter().filter(|p| !bindings.contains_key(*p)).cloned().collect();
    if !missing.is_empty() {
        return Err(TemplateError::MissingBinding { template: template.id.clone(), names: missing });
    }
    let checklist = template.checklist_text();
    let mut out = String::with_capacity(template.body.len());
    let mut rest = template.body.as_str();
    while let Some(start) = rest.find("{{") {
        let after = &rest[start + 2..];
        let Some(end) = after.find("}}") else { break };
        out.push_str(&rest[..start]);
        let name = after[..end].trim();
        match bindings.get(name) {
            Some(v) => out.push_str(v),
            None if name == "checklist" && template.kind == TemplateKind::Feedback => out.push_str(&checklist),
            None => {
                return Err(TemplateError::UnknownPlaceholder { template: template.id.clone(), name: name.to_string() })
            }
        }
        rest = &after[end + 2..];
    }
    out.push_str(rest);
    Ok(out)
}

const BUILTIN: &[(&str, &str)] = &[
    ("type_extraction", include_str!("../../templates/type_extraction.toml")),
    ("type_extraction_feedback", include_str!("../../templates/type_extraction_feedback.toml")),
    ("hierarchy_construction", include_str!("../../templates/hierarchy_construction.toml")),
    ("hierarchy_construction_feedback", include_str!("../../templates/hierarchy_construction_feedback.toml")),
    ("action_extraction", include_str!("../../templates/action_extraction.toml")),
    ("action_extraction_feedback", include_str!("../../templates/action_extraction_feedback.toml")),
    ("action_construction", include_str!("../../templates/action_construction.toml")),
    ("action_construction_feedback", include_str!("../../templates/action_construction_feedback.toml")),
    ("task_extraction", include_str!("../../templates/task_extraction.toml")),
    ("task_extraction_feedback", include_str!("../../templates/task_extraction_feedback.toml")),
    ("baseline_cot", include_str!("../../templates/baseline_cot.toml")),
];

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TemplateSet {
    templates: BTreeMap<String, PromptTemplate>,
}

impl TemplateSet {
    /// The templates shipped with the crate.
    pub fn builtin() -> Self {
        let mut templates = BTreeMap::new();
        for (id, text) in BUILTIN {
            let t: PromptTemplate = toml::from_str(text).unwrap_or_else(|e| panic!("builtin template {id}: {e}"));
            assert_eq!(&t.id, id);
            templates.insert(t.id.clone(), t);
        }
        TemplateSet { templates }
    }

    /// Builtins overridden by any `*.toml` in `dir` with a matching id.
    pub fn with_overrides(dir: &Path) -> Result<Self, TemplateError> {
        let mut set = Self::builtin();
        let load = |p: &Path, m: String| TemplateError::Load { path: p.display().to_string(), message: m };
        let entries = std::fs::read_dir(dir).map_err(|e| load(dir, e.to_string()))?;
        for e in entries {
            let path = e.map_err(|e| load(dir, e.to_string()))?.path();
            if path.extension().is_none_or(|x| x != "toml") {
                continue;
            }
            let text = std::fs::read_to_string(&path).map_err(|e| load(&path, e.to_string()))?;
            let t: PromptTemplate = toml::from_str(&text).map_err(|e| load(&path, e.to_string()))?;
            t.check()?;
            set.templates.insert(t.id.clone(), t);
        }
        Ok(set)
    }

    pub fn get(&self, id: &str) -> Result<&PromptTemplate, TemplateError> {
        self.templates.get(id).ok_or_else(|| TemplateError::NotFound(id.to_string()))
    }

    pub fn render(&self, id: &str, bindings: &[(&str, &str)]) -> Result<String, TemplateError> {
        let map = bindings.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect();
        render_template(self.get(id)?, &map)
    }

    pub fn iter(&self) -> impl Iterator<Item = &PromptTemplate> {
        self.templates.values()
    }
}
