//! Coverage-gated failure diagnosis.
//!
//! A failed trajectory is first judged for evidence coverage, then classified
//! into one of the error types admissible under that coverage, then localized
//! to its earliest erroneous action. Nothing here ever reads the gold answer.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::backends::{BackendError, Bucket, Meter, ModelHandle, ModelRequest};
use crate::prompts::{render_action, render_actions, render_documents, PromptError, PromptRole, PromptTemplates};
use crate::trajectory::{aggregate_documents, ActionKind, DocumentSet, Trajectory, TrajectoryError};

pub const FLAG_COVERAGE_UNPARSEABLE: &str = "coverage_unparseable";
pub const FLAG_COVERAGE_ORACLE_UNAVAILABLE: &str = "coverage_oracle_unavailable";
pub const FLAG_CLASSIFY_FALLBACK: &str = "classification_fallback";
pub const FLAG_LOCALIZE_UNPARSEABLE: &str = "localization_unparseable";
pub const FLAG_LOCALIZE_LATEST: &str = "localization_fallback_latest";
pub const FLAG_NOISE_UNPARSEABLE: &str = "noise_screen_unparseable";

/// Meta key holding a simulator injection label.
pub const META_INJECTION: &str = "injection";

#[derive(Debug, Error)]
pub enum DiagnosisError {
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Trajectory(#[from] TrajectoryError),
    #[error("cannot localize {error_type}: trajectory has no {kind} actions")]
    Degenerate {
        error_type: ErrorType,
        kind: &'static str,
    },
    #[error("injection label: {0}")]
    Label(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CoverageValue {
    Full,
    Partial,
}

impl CoverageValue {
    pub fn as_str(self) -> &'static str {
        match self {
            CoverageValue::Full => "full",
            CoverageValue::Partial => "partial",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoverageSource {
    OracleEvidence,
    JudgeModel,
    InjectionLabel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Coverage {
    pub value: CoverageValue,
    pub source: CoverageSource,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ErrorType {
    #[serde(rename = "format")]
    FormatError,
    #[serde(rename = "reasoning")]
    ReasoningError,
    #[serde(rename = "retriever")]
    RetrieverError,
    #[serde(rename = "search")]
    SearchError,
}

impl ErrorType {
    pub const ALL: [ErrorType; 4] = [
        ErrorType::FormatError,
        ErrorType::ReasoningError,
        ErrorType::RetrieverError,
        ErrorType::SearchError,
    ];

    /// Short lowercase name used in files and on the command line.
    pub fn short(self) -> &'static str {
        match self {
            ErrorType::FormatError => "format",
            ErrorType::ReasoningError => "reasoning",
            ErrorType::RetrieverError => "retriever",
            ErrorType::SearchError => "search",
        }
    }

    /// Label name shown to the judge.
    pub fn label(self) -> &'static str {
        match self {
            ErrorType::FormatError => "FormatError",
            ErrorType::ReasoningError => "ReasoningError",
            ErrorType::RetrieverError => "RetrieverError",
            ErrorType::SearchError => "SearchError",
        }
    }

    pub fn description(self) -> &'static str {
        match self {
            ErrorType::FormatError => {
                "the final answer contains the right content but violates the expected short-answer format"
            }
            ErrorType::ReasoningError => {
                "the evidence was sufficient but a reasoning step drew a wrong conclusion from it"
            }
            ErrorType::RetrieverError => {
                "a reasonable search query was issued but retrieval returned irrelevant or incomplete documents"
            }
            ErrorType::SearchError => {
                "a reasoning step produced an invalid, vague or incomplete search query"
            }
        }
    }

    /// Kind of action the failure is localized to; `None` for the terminal answer.
    pub fn candidate_kind(self) -> Option<ActionKind> {
        match self {
            ErrorType::FormatError => None,
            ErrorType::ReasoningError | ErrorType::SearchError => Some(ActionKind::Reason),
            ErrorType::RetrieverError => Some(ActionKind::Information),
        }
    }

    fn mentions(self) -> [String; 4] {
        let s = self.short();
        [
            format!("{s}error"),
            format!("{s} error"),
            format!("{s}_error"),
            format!("{s}-error"),
        ]
    }
}

impl fmt::Display for ErrorType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for ErrorType {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.trim().to_ascii_lowercase().replace(['_', '-', ' '], "");
        ErrorType::ALL
            .into_iter()
            .find(|e| norm == e.short() || norm == format!("{}error", e.short()))
            .ok_or_else(|| format!("unknown error type `{s}` (expected format, reasoning, retriever or search)"))
    }
}

/// Error types admissible under a coverage verdict.
pub fn admissible_labels(coverage: CoverageValue) -> &'static [ErrorType] {
    match coverage {
        CoverageValue::Full => &[ErrorType::FormatError, ErrorType::ReasoningError],
        CoverageValue::Partial => &[
            ErrorType::FormatError,
            ErrorType::RetrieverError,
            ErrorType::SearchError,
        ],
    }
}

/// Label-of-last-resort when classification cannot be parsed.
pub fn fallback_label(coverage: CoverageValue) -> ErrorType {
    match coverage {
        CoverageValue::Full => ErrorType::ReasoningError,
        CoverageValue::Partial => ErrorType::SearchError,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnosis {
    pub error_type: ErrorType,
    pub k_dagger: usize,
    pub coverage: Coverage,
    pub rationale: String,
    pub diagnosis_tokens: u64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flags: Vec<String>,
}

impl Diagnosis {
    /// Checks the index bounds and the coverage gating against `t`.
    pub fn check(&self, t: &Trajectory) -> Result<(), String> {
        t.check_index(self.k_dagger).map_err(|e| e.to_string())?;
        if !admissible_labels(self.coverage.value).contains(&self.error_type) {
            return Err(format!(
                "{} is not admissible under {} coverage",
                self.error_type,
                self.coverage.value.as_str()
            ));
        }
        if self.error_type == ErrorType::FormatError && self.k_dagger != t.terminal_index() {
            return Err(format!(
                "FormatError must localize to {}, got {}",
                t.terminal_index(),
                self.k_dagger
            ));
        }
        Ok(())
    }
}

/// Ground truth recorded by the failure injector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InjectionLabel {
    pub error_type: ErrorType,
    pub k_dagger: usize,
    pub description: String,
    pub coverage: CoverageValue,
}

impl InjectionLabel {
    pub fn from_meta(t: &Trajectory) -> Option<Result<InjectionLabel, String>> {
        t.meta.get(META_INJECTION).map(|v| {
            serde_json::from_value(v.clone()).map_err(|e| format!("meta.{META_INJECTION}: {e}"))
        })
    }

    pub fn to_value(&self) -> Value {
        serde_json::to_value(self).expect("label serialization is infallible")
    }
}

/// Returns the injected label verbatim as a diagnosis with zero cost.
pub fn oracle_diagnose(t: &Trajectory, truth: &InjectionLabel) -> Result<Diagnosis, DiagnosisError> {
    let d = Diagnosis {
        error_type: truth.error_type,
        k_dagger: truth.k_dagger,
        coverage: Coverage {
            value: truth.coverage,
            source: CoverageSource::InjectionLabel,
        },
        rationale: truth.description.clone(),
        diagnosis_tokens: 0,
        flags: Vec::new(),
    };
    d.check(t).map_err(DiagnosisError::Label)?;
    Ok(d)
}

/// Full iff every gold doc_id was retrieved.
pub fn oracle_coverage(docs: &DocumentSet, gold_evidence: &[String]) -> CoverageValue {
    if gold_evidence.iter().all(|id| docs.contains(id)) {
        CoverageValue::Full
    } else {
        CoverageValue::Partial
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CoverageMode {
    #[serde(alias = "oracle_evidence")]
    Oracle,
    #[default]
    Judge,
}

impl FromStr for CoverageMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "oracle" | "oracle_evidence" => Ok(CoverageMode::Oracle),
            "judge" => Ok(CoverageMode::Judge),
            other => Err(format!("unknown coverage mode `{other}` (expected oracle or judge)")),
        }
    }
}

#[derive(Debug, Clone)]
pub struct DiagnosisConfig {
    pub coverage_mode: CoverageMode,
    pub model: String,
    pub max_tokens: u32,
}

impl Default for DiagnosisConfig {
    fn default() -> Self {
        DiagnosisConfig {
            coverage_mode: CoverageMode::Judge,
            model: String::new(),
            max_tokens: 256,
        }
    }
}

fn first_word_upper(text: &str) -> String {
    text.lines()
        .map(str::trim)
        .find(|l| !l.is_empty())
        .and_then(|l| l.split_whitespace().next())
        .map(|w| {
            w.trim_matches(|c: char| !c.is_alphanumeric())
                .to_ascii_uppercase()
        })
        .unwrap_or_default()
}

/// `YES` / `NO` on the first non-empty line.
pub fn parse_yes_no(text: &str) -> Option<bool> {
    match first_word_upper(text).as_str() {
        "YES" => Some(true),
        "NO" => Some(false),
        _ => None,
    }
}

/// Earliest-mentioned admissible label; inadmissible labels are ignored.
pub fn parse_label(text: &str, admissible: &[ErrorType]) -> Option<ErrorType> {
    let lower = text.to_ascii_lowercase();
    admissible
        .iter()
        .filter_map(|e| {
            e.mentions()
                .iter()
                .filter_map(|m| lower.find(m.as_str()))
                .min()
                .map(|pos| (pos, *e))
        })
        .min()
        .map(|(_, e)| e)
}

pub struct Diagnoser<'a> {
    pub judge: &'a dyn ModelHandle,
    pub templates: &'a PromptTemplates,
    pub config: DiagnosisConfig,
}

impl<'a> Diagnoser<'a> {
    pub fn new(judge: &'a dyn ModelHandle, templates: &'a PromptTemplates, config: DiagnosisConfig) -> Self {
        Diagnoser {
            judge,
            templates,
            config,
        }
    }

    fn request(&self, role: PromptRole, salient: Vec<String>, prompt: String) -> ModelRequest {
        let mut req = ModelRequest::new(role, salient, prompt).with_model(&self.config.model);
        req.max_tokens = self.config.max_tokens;
        req
    }

    /// One call plus one retry if the reply does not parse.
    fn ask<T>(
        &self,
        meter: &mut Meter,
        req: &ModelRequest,
        parse: impl Fn(&str) -> Option<T>,
    ) -> Result<(Option<T>, String), BackendError> {
        let mut last = String::new();
        for _ in 0..2 {
            let reply = meter.chat(self.judge, Bucket::Diagnosis, req)?;
            if !reply.refusal {
                if let Some(v) = parse(&reply.text) {
                    return Ok((Some(v), reply.text));
                }
            }
            last = reply.text;
        }
        Ok((None, last))
    }

    pub fn assess_coverage(
        &self,
        meter: &mut Meter,
        t: &Trajectory,
        flags: &mut Vec<String>,
    ) -> Result<Coverage, DiagnosisError> {
        let docs = aggregate_documents(t);
        if self.config.coverage_mode == CoverageMode::Oracle {
            match &t.gold_evidence {
                Some(gold) => {
                    return Ok(Coverage {
                        value: oracle_coverage(&docs, gold),
                        source: CoverageSource::OracleEvidence,
                    })
                }
                None => flags.push(FLAG_COVERAGE_ORACLE_UNAVAILABLE.into()),
            }
        }
        let prompt = self.templates.render(
            PromptRole::Sufficiency,
            &[
                ("question", &t.question),
                ("documents", &render_documents(docs.iter())),
            ],
        )?;
        let req = self.request(PromptRole::Sufficiency, vec![t.id.clone()], prompt);
        let (verdict, _) = self.ask(meter, &req, parse_yes_no)?;
        let value = match verdict {
            Some(true) => CoverageValue::Full,
            Some(false) => CoverageValue::Partial,
            None => {
                flags.push(FLAG_COVERAGE_UNPARSEABLE.into());
                CoverageValue::Partial
            }
        };
        Ok(Coverage {
            value,
            source: CoverageSource::JudgeModel,
        })
    }

    pub fn classify_error(
        &self,
        meter: &mut Meter,
        t: &Trajectory,
        coverage: CoverageValue,
        flags: &mut Vec<String>,
    ) -> Result<(ErrorType, String), DiagnosisError> {
        let admissible = admissible_labels(coverage);
        let labels: Vec<String> = admissible
            .iter()
            .map(|e| format!("- {}: {}", e.label(), e.description()))
            .collect();
        let role = match coverage {
            CoverageValue::Full => PromptRole::ClassificationFull,
            CoverageValue::Partial => PromptRole::ClassificationPartial,
        };
        let prompt = self.templates.render(
            role,
            &[
                ("question", &t.question),
                ("trajectory", &render_actions(t.body(), 1)),
                ("answer", &t.predicted_answer),
                ("labels", &labels.join("\n")),
            ],
        )?;
        let req = self.request(role, vec![t.id.clone()], prompt);
        let (label, text) = self.ask(meter, &req, |s| parse_label(s, admissible))?;
        let label = label.unwrap_or_else(|| {
            flags.push(FLAG_CLASSIFY_FALLBACK.into());
            fallback_label(coverage)
        });
        Ok((label, text.trim().to_string()))
    }

    /// Earliest candidate action the judge marks erroneous.
    pub fn localize_failure(
        &self,
        meter: &mut Meter,
        t: &Trajectory,
        error_type: ErrorType,
        flags: &mut Vec<String>,
    ) -> Result<usize, DiagnosisError> {
        let Some(kind) = error_type.candidate_kind() else {
            return Ok(t.terminal_index());
        };
        let candidates: Vec<usize> = t
            .indexed()
            .filter(|(_, a)| a.kind() == kind)
            .map(|(k, _)| k)
            .collect();
        let Some(&last) = candidates.last() else {
            return Err(DiagnosisError::Degenerate {
                error_type,
                kind: kind.as_str(),
            });
        };
        let mut unparseable = false;
        for &k in &candidates {
            let action = &t.actions[k - 1];
            let prompt = self.templates.render(
                PromptRole::PerActionLocalization,
                &[
                    ("error_type", error_type.label()),
                    ("error_description", error_type.description()),
                    ("question", &t.question),
                    ("trajectory", &render_actions(&t.actions[..k - 1], 1)),
                    ("index", &k.to_string()),
                    ("kind", kind.as_str()),
                    ("step", &render_action(action)),
                ],
            )?;
            let req = self.request(
                PromptRole::PerActionLocalization,
                vec![t.id.clone(), k.to_string()],
                prompt,
            );
            match self.ask(meter, &req, parse_yes_no)?.0 {
                Some(true) => return Ok(k),
                Some(false) => {}
                None => unparseable = true,
            }
        }
        if unparseable {
            flags.push(FLAG_LOCALIZE_UNPARSEABLE.into());
        }
        flags.push(FLAG_LOCALIZE_LATEST.into());
        Ok(last)
    }

    pub fn diagnose(&self, t: &Trajectory) -> Result<Diagnosis, DiagnosisError> {
        let mut meter = Meter::new();
        self.diagnose_metered(&mut meter, t)
    }

    pub fn diagnose_metered(&self, meter: &mut Meter, t: &Trajectory) -> Result<Diagnosis, DiagnosisError> {
        let before = meter.ledger().diagnosis_tokens;
        let mut flags = Vec::new();
        let coverage = self.assess_coverage(meter, t, &mut flags)?;
        let (error_type, rationale) = self.classify_error(meter, t, coverage.value, &mut flags)?;
        let k_dagger = self.localize_failure(meter, t, error_type, &mut flags)?;
        Ok(Diagnosis {
            error_type,
            k_dagger,
            coverage,
            rationale,
            diagnosis_tokens: meter.ledger().diagnosis_tokens - before,
            flags,
        })
    }

    /// `true` when the judge deems the question itself unanswerable.
    pub fn is_dataset_noise(
        &self,
        meter: &mut Meter,
        t: &Trajectory,
        flags: &mut Vec<String>,
    ) -> Result<bool, DiagnosisError> {
        let prompt = self
            .templates
            .render(PromptRole::NoiseScreen, &[("question", &t.question)])?;
        let req = self.request(PromptRole::NoiseScreen, vec![t.id.clone()], prompt);
        match self.ask(meter, &req, parse_yes_no)?.0 {
            Some(answerable) => Ok(!answerable),
            None => {
                flags.push(FLAG_NOISE_UNPARSEABLE.into());
                Ok(false)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::{CannedReply, Script, ScriptedModel, Usage};
    use crate::trajectory::{Action, Document};

    fn traj() -> Trajectory {
        let mut t = Trajectory::from_parts(
            "Q1",
            "Which is further south?",
            vec![
                Action::reason("find a", 3),
                Action::search("a location", 2),
                Action::information(vec![Document::new("d1", "A", "a text", 1.0)], 0),
                Action::reason("find b", 3),
                Action::search("b location", 2),
                Action::information(vec![Document::new("d2", "B", "b text", 1.0)], 0),
                Action::reason("so B", 3),
            ],
            Action::answer("B", 1),
        );
        t.gold_answer = Some("Zebulon-Unique-Gold".into());
        t
    }

    fn diag(script: Script) -> (ScriptedModel, PromptTemplates) {
        (ScriptedModel::new(script), PromptTemplates::default())
    }

    #[test]
    fn labels_gate_by_coverage() {
        assert_eq!(admissible_labels(CoverageValue::Full), [ErrorType::FormatError, ErrorType::ReasoningError]);
        assert_eq!(
            admissible_labels(CoverageValue::Partial),
            [ErrorType::FormatError, ErrorType::RetrieverError, ErrorType::SearchError]
        );
    }

    #[test]
    fn label_parsing() {
        let full = admissible_labels(CoverageValue::Full);
        assert_eq!(parse_label("FormatError\nbecause", full), Some(ErrorType::FormatError));
        assert_eq!(parse_label("RetrieverError", full), None);
        assert_eq!(parse_label("a reasoning error, not a format error", full), Some(ErrorType::ReasoningError));
        assert_eq!("search".parse::<ErrorType>(), Ok(ErrorType::SearchError));
        assert_eq!("RetrieverError".parse::<ErrorType>(), Ok(ErrorType::RetrieverError));
        assert!("noise".parse::<ErrorType>().is_err());
        assert_eq!(parse_yes_no("\n yes. enough"), Some(true));
        assert_eq!(parse_yes_no("Maybe"), None);
    }

    #[test]
    fn oracle_coverage_subset() {
        let t = traj();
        let docs = aggregate_documents(&t);
        assert_eq!(oracle_coverage(&docs, &["d1".into(), "d2".into()]), CoverageValue::Full);
        assert_eq!(oracle_coverage(&docs, &["d1".into(), "d9".into()]), CoverageValue::Partial);
    }

    #[test]
    fn scripted_partial_search_diagnosis() {
        let mut s = Script::default();
        s.push("sufficiency:Q1", CannedReply::new("NO", Usage::new(100, 1)))
            .push("classification-partial:Q1", CannedReply::new("SearchError\nvague query", Usage::new(200, 5)))
            .push("per-action-localization:Q1:1", CannedReply::new("NO", Usage::new(50, 1)))
            .push("per-action-localization:Q1:4", CannedReply::new("YES", Usage::new(60, 1)));
        let (m, tpl) = diag(s);
        let d = Diagnoser::new(&m, &tpl, DiagnosisConfig::default()).diagnose(&traj()).unwrap();
        assert_eq!(d.error_type, ErrorType::SearchError);
        assert_eq!(d.k_dagger, 4);
        assert_eq!(d.coverage.value, CoverageValue::Partial);
        assert_eq!(d.diagnosis_tokens, 101 + 205 + 51 + 61);
        assert!(d.flags.is_empty());
        for c in m.captured() {
            assert!(!c.prompt.contains("Zebulon-Unique-Gold"));
        }
    }

    #[test]
    fn inadmissible_reply_falls_back_with_flag() {
        let mut s = Script::default();
        s.push_text("sufficiency:Q1", "YES")
            .push_text("classification-full:Q1", "RetrieverError")
            .push_text("per-action-localization:*", "NO");
        let (m, tpl) = diag(s);
        let d = Diagnoser::new(&m, &tpl, DiagnosisConfig::default()).diagnose(&traj()).unwrap();
        assert_eq!(d.error_type, ErrorType::ReasoningError);
        assert!(d.flags.contains(&FLAG_CLASSIFY_FALLBACK.to_string()));
        // none marked erroneous -> latest reason action
        assert_eq!(d.k_dagger, 7);
        assert!(d.flags.contains(&FLAG_LOCALIZE_LATEST.to_string()));
    }

    #[test]
    fn format_localizes_to_terminal_without_calls() {
        let mut s = Script::default();
        s.push_text("sufficiency:Q1", "YES").push_text("classification-full:Q1", "FormatError");
        let (m, tpl) = diag(s);
        let d = Diagnoser::new(&m, &tpl, DiagnosisConfig::default()).diagnose(&traj()).unwrap();
        assert_eq!((d.error_type, d.k_dagger), (ErrorType::FormatError, 8));
        assert_eq!(m.captured().len(), 2);
    }

    #[test]
    fn retriever_localizes_over_information_actions() {
        let mut s = Script::default();
        s.push_text("per-action-localization:Q1:3", "NO")
            .push_text("per-action-localization:Q1:6", "YES");
        let (m, tpl) = diag(s);
        let dg = Diagnoser::new(&m, &tpl, DiagnosisConfig::default());
        let k = dg
            .localize_failure(&mut Meter::new(), &traj(), ErrorType::RetrieverError, &mut vec![])
            .unwrap();
        assert_eq!(k, 6);
    }

    #[test]
    fn unparseable_sufficiency_is_partial_after_one_retry() {
        let mut s = Script::default();
        s.push_text("sufficiency:Q1", "hmm");
        let (m, tpl) = diag(s);
        let dg = Diagnoser::new(&m, &tpl, DiagnosisConfig::default());
        let mut flags = vec![];
        let c = dg.assess_coverage(&mut Meter::new(), &traj(), &mut flags).unwrap();
        assert_eq!(c.value, CoverageValue::Partial);
        assert_eq!(flags, [FLAG_COVERAGE_UNPARSEABLE]);
        assert_eq!(m.captured().len(), 2);
    }

    #[test]
    fn oracle_mode_uses_gold_evidence() {
        let mut t = traj();
        t.gold_evidence = Some(vec!["d1".into(), "d2".into()]);
        let (m, tpl) = diag(Script::default());
        let dg = Diagnoser::new(
            &m,
            &tpl,
            DiagnosisConfig {
                coverage_mode: CoverageMode::Oracle,
                ..DiagnosisConfig::default()
            },
        );
        let c = dg.assess_coverage(&mut Meter::new(), &t, &mut vec![]).unwrap();
        assert_eq!(c, Coverage { value: CoverageValue::Full, source: CoverageSource::OracleEvidence });
        assert!(m.captured().is_empty());
    }

    #[test]
    fn oracle_diagnose_passes_through() {
        let t = traj();
        let label = InjectionLabel {
            error_type: ErrorType::SearchError,
            k_dagger: 4,
            description: "vague".into(),
            coverage: CoverageValue::Partial,
        };
        let d = oracle_diagnose(&t, &label).unwrap();
        assert_eq!((d.error_type, d.k_dagger, d.diagnosis_tokens), (ErrorType::SearchError, 4, 0));
        let bad = InjectionLabel { k_dagger: 3, error_type: ErrorType::FormatError, ..label };
        assert!(oracle_diagnose(&t, &bad).is_err());
    }

    #[test]
    fn no_candidates_is_degenerate() {
        let t = Trajectory::from_parts("x", "q", vec![Action::search("s", 1)], Action::answer("a", 1));
        let (m, tpl) = diag(Script::default());
        let dg = Diagnoser::new(&m, &tpl, DiagnosisConfig::default());
        assert!(matches!(
            dg.localize_failure(&mut Meter::new(), &t, ErrorType::ReasoningError, &mut vec![]),
            Err(DiagnosisError::Degenerate { .. })
        ));
    }
}
