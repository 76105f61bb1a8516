//! Prompt templates.
//!
//! One plain-text file per prompt role, `{{name}}` placeholders. Defaults are
//! compiled in from `templates/`; a directory of overrides can replace any
//! subset of them.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::trajectory::{Action, Document, Payload};

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("template `{template}` references unbound variable `{name}`")]
    Unbound { template: &'static str, name: String },
    #[error("reading template {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PromptRole {
    Sufficiency,
    ClassificationFull,
    ClassificationPartial,
    PerActionLocalization,
    NoiseScreen,
    AnswerRewrite,
    ReReason,
    QueryRewrite,
    RetrievalAnswer,
    Plan,
    PlanReason,
    PlanAnswer,
    AgentStep,
    StepVerification,
    FinalAnswer,
}

impl PromptRole {
    pub const ALL: [PromptRole; 15] = [
        PromptRole::Sufficiency,
        PromptRole::ClassificationFull,
        PromptRole::ClassificationPartial,
        PromptRole::PerActionLocalization,
        PromptRole::NoiseScreen,
        PromptRole::AnswerRewrite,
        PromptRole::ReReason,
        PromptRole::QueryRewrite,
        PromptRole::RetrievalAnswer,
        PromptRole::Plan,
        PromptRole::PlanReason,
        PromptRole::PlanAnswer,
        PromptRole::AgentStep,
        PromptRole::StepVerification,
        PromptRole::FinalAnswer,
    ];

    /// Template file stem, also the template id used in request fingerprints.
    pub fn id(self) -> &'static str {
        match self {
            PromptRole::Sufficiency => "sufficiency",
            PromptRole::ClassificationFull => "classification-full",
            PromptRole::ClassificationPartial => "classification-partial",
            PromptRole::PerActionLocalization => "per-action-localization",
            PromptRole::NoiseScreen => "noise-screen",
            PromptRole::AnswerRewrite => "answer-rewrite",
            PromptRole::ReReason => "re-reason",
            PromptRole::QueryRewrite => "query-rewrite",
            PromptRole::RetrievalAnswer => "retrieval-answer",
            PromptRole::Plan => "plan",
            PromptRole::PlanReason => "plan-reason",
            PromptRole::PlanAnswer => "plan-answer",
            PromptRole::AgentStep => "agent-step",
            PromptRole::StepVerification => "step-verification",
            PromptRole::FinalAnswer => "final-answer",
        }
    }

    fn default_text(self) -> &'static str {
        match self {
            PromptRole::Sufficiency => include_str!("../templates/sufficiency.txt"),
            PromptRole::ClassificationFull => include_str!("../templates/classification-full.txt"),
            PromptRole::ClassificationPartial => {
                include_str!("../templates/classification-partial.txt")
            }
            PromptRole::PerActionLocalization => {
                include_str!("../templates/per-action-localization.txt")
            }
            PromptRole::NoiseScreen => include_str!("../templates/noise-screen.txt"),
            PromptRole::AnswerRewrite => include_str!("../templates/answer-rewrite.txt"),
            PromptRole::ReReason => include_str!("../templates/re-reason.txt"),
            PromptRole::QueryRewrite => include_str!("../templates/query-rewrite.txt"),
            PromptRole::RetrievalAnswer => include_str!("../templates/retrieval-answer.txt"),
            PromptRole::Plan => include_str!("../templates/plan.txt"),
            PromptRole::PlanReason => include_str!("../templates/plan-reason.txt"),
            PromptRole::PlanAnswer => include_str!("../templates/plan-answer.txt"),
            PromptRole::AgentStep => include_str!("../templates/agent-step.txt"),
            PromptRole::StepVerification => include_str!("../templates/step-verification.txt"),
            PromptRole::FinalAnswer => include_str!("../templates/final-answer.txt"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct PromptTemplates {
    texts: HashMap<PromptRole, String>,
}

impl Default for PromptTemplates {
    fn default() -> Self {
        PromptTemplates {
            texts: PromptRole::ALL
                .iter()
                .map(|r| (*r, r.default_text().to_string()))
                .collect(),
        }
    }
}

impl PromptTemplates {
    /// Defaults overridden by any `<role>.txt` present in `dir`.
    pub fn load_dir(dir: &Path) -> Result<Self, PromptError> {
        let mut templates = PromptTemplates::default();
        for role in PromptRole::ALL {
            let path = dir.join(format!("{}.txt", role.id()));
            if path.exists() {
                let text = fs::read_to_string(&path).map_err(|source| PromptError::Io {
                    path: path.display().to_string(),
                    source,
                })?;
                templates.texts.insert(role, text);
            }
        }
        Ok(templates)
    }

    pub fn text(&self, role: PromptRole) -> &str {
        &self.texts[&role]
    }

    pub fn render(&self, role: PromptRole, vars: &[(&str, &str)]) -> Result<String, PromptError> {
        render(role.id(), self.text(role), vars)
    }
}

fn render(template: &'static str, text: &str, vars: &[(&str, &str)]) -> Result<String, PromptError> {
    let mut out = String::with_capacity(text.len());
    let mut rest = text;
    while let Some(start) = rest.find("{{") {
        out.push_str(&rest[..start]);
        let after = &rest[start + 2..];
        let Some(end) = after.find("}}") else {
            out.push_str(&rest[start..]);
            rest = "";
            break;
        };
        let name = after[..end].trim();
        match vars.iter().find(|(k, _)| *k == name) {
            Some((_, v)) => out.push_str(v),
            None => {
                return Err(PromptError::Unbound {
                    template,
                    name: name.to_string(),
                })
            }
        }
        rest = &after[end + 2..];
    }
    out.push_str(rest);
    Ok(out)
}

pub fn render_documents<'a>(docs: impl IntoIterator<Item = &'a Document>) -> String {
    let lines: Vec<String> = docs
        .into_iter()
        .enumerate()
        .map(|(i, d)| format!("[{}] {} ({}): {}", i + 1, d.title, d.doc_id, d.text))
        .collect();
    if lines.is_empty() {
        "(none)".to_string()
    } else {
        lines.join("\n")
    }
}

/// Numbered rendering of actions, starting at 1-based index `first`.
pub fn render_actions(actions: &[Action], first: usize) -> String {
    if actions.is_empty() {
        return "(none)".to_string();
    }
    actions
        .iter()
        .enumerate()
        .map(|(i, a)| format!("{}. {}", first + i, render_action(a)))
        .collect::<Vec<_>>()
        .join("\n")
}

pub fn render_action(a: &Action) -> String {
    match &a.payload {
        Payload::Reason(t) => format!("REASON: {t}"),
        Payload::Search(q) => format!("SEARCH: {q}"),
        Payload::Information(docs) => {
            let titles: Vec<_> = docs.iter().map(|d| d.title.as_str()).collect();
            format!("INFORMATION: {}", titles.join("; "))
        }
        Payload::Answer(t) => format!("ANSWER: {t}"),
    }
}

/// Collapses whitespace in a salient fingerprint variable.
pub fn normalize_salient(value: &str) -> String {
    value.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// `template:var1:var2…` key used by scripted backends.
pub fn fingerprint(template: &str, salient: &[String]) -> String {
    let mut fp = template.to_string();
    for s in salient {
        fp.push(':');
        fp.push_str(&normalize_salient(s));
    }
    fp
}
