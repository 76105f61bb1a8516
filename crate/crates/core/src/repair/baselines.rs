use serde::{Deserialize, Serialize};

use super::{
    extract_answer, finish, select_operator, RepairError, RepairMethod, RepairOperatorId,
    RepairOutcome, Repairer, FLAG_EMPTY_REWRITE, FLAG_VERIFY_ALL_ACTIONS, FLAG_VERIFY_UNPARSEABLE,
};
use crate::backends::{run_agent, Agent, AgentConfig, Bucket, Meter};
use crate::diagnosis::{Diagnosis, ErrorType};
use crate::prompts::{render_action, render_actions, render_documents, PromptRole};
use crate::trajectory::{aggregate_documents, prefix, ActionKind, Trajectory};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationMode {
    NoTaxonomy,
    NoLocalization,
}

fn parse_valid(text: &str) -> Option<bool> {
    let word = text
        .lines()
        .map(str::trim)
        .find(|l| !l.is_empty())?
        .split_whitespace()
        .next()?
        .trim_matches(|c: char| !c.is_alphanumeric())
        .to_ascii_uppercase();
    match word.as_str() {
        "VALID" => Some(true),
        "INVALID" => Some(false),
        _ => None,
    }
}

impl Repairer<'_> {
    fn agent(&self) -> Agent<'_> {
        Agent {
            llm: self.llm,
            retriever: self.retriever,
            templates: self.templates,
            config: AgentConfig {
                max_steps: self.config.max_steps,
                top_k: self.config.base_top_k,
                model: self.config.model.clone(),
                max_tokens: self.config.max_tokens,
            },
        }
    }

    /// Discards the trajectory and runs the agent from the bare question.
    pub fn rerun(&self, meter: &mut Meter, t: &Trajectory) -> Result<RepairOutcome, RepairError> {
        let run = run_agent(&self.agent(), meter, Bucket::Repair, &t.id, &t.question, &[])?;
        let mut body = run.actions;
        body.pop();
        finish(t, body, run.answer, RepairMethod::Rerun, 0, meter, run.flags)
    }

    /// Verifies reasoning steps in order and regenerates from the first invalid one.
    ///
    /// Verification usage is booked as diagnosis tokens.
    pub fn stepwise_retry(&self, meter: &mut Meter, t: &Trajectory) -> Result<RepairOutcome, RepairError> {
        let mut flags = Vec::new();
        let mut candidates: Vec<usize> = t
            .indexed()
            .filter(|(_, a)| a.kind() == ActionKind::Reason)
            .map(|(k, _)| k)
            .collect();
        if candidates.is_empty() && t.k() > 0 {
            flags.push(FLAG_VERIFY_ALL_ACTIONS.to_string());
            candidates = (1..=t.k()).collect();
        }
        let mut first_invalid = None;
        for k in candidates {
            let prompt = self.templates.render(
                PromptRole::StepVerification,
                &[
                    ("question", &t.question),
                    ("history", &render_actions(&t.actions[..k - 1], 1)),
                    ("index", &k.to_string()),
                    ("step", &render_action(&t.actions[k - 1])),
                ],
            )?;
            let req = self.request(PromptRole::StepVerification, vec![t.id.clone(), k.to_string()], prompt);
            let mut verdict = parse_valid(&meter.chat(self.llm, Bucket::Diagnosis, &req)?.text);
            if verdict.is_none() {
                verdict = parse_valid(&meter.chat(self.llm, Bucket::Diagnosis, &req)?.text);
            }
            match verdict {
                Some(false) => {
                    first_invalid = Some(k);
                    break;
                }
                Some(true) => {}
                None => {
                    if !flags.iter().any(|f| f == FLAG_VERIFY_UNPARSEABLE) {
                        flags.push(FLAG_VERIFY_UNPARSEABLE.to_string());
                    }
                }
            }
        }
        match first_invalid {
            Some(k) => {
                let head = prefix(t, k)?;
                let run = run_agent(&self.agent(), meter, Bucket::Repair, &t.id, &t.question, head)?;
                flags.extend(run.flags);
                let mut body = head.to_vec();
                body.extend(run.actions);
                body.pop();
                finish(t, body, run.answer, RepairMethod::StepwiseRetry, k - 1, meter, flags)
            }
            None => {
                let docs = aggregate_documents(t);
                let prompt = self.templates.render(
                    PromptRole::FinalAnswer,
                    &[
                        ("question", &t.question),
                        ("history", &render_actions(t.body(), 1)),
                        ("documents", &render_documents(docs.iter())),
                    ],
                )?;
                let req = self.request(PromptRole::FinalAnswer, vec![t.id.clone()], prompt);
                let (answer, _) = extract_answer(&meter.chat(self.llm, Bucket::Repair, &req)?.text);
                let answer = if answer.is_empty() {
                    flags.push(FLAG_EMPTY_REWRITE.to_string());
                    t.predicted_answer.clone()
                } else {
                    answer
                };
                finish(t, t.body().to_vec(), answer, RepairMethod::StepwiseRetry, t.k(), meter, flags)
            }
        }
    }

    /// Repairs with part of the diagnosis deliberately ignored.
    pub fn ablation(
        &self,
        meter: &mut Meter,
        t: &Trajectory,
        diagnosis: &Diagnosis,
        mode: AblationMode,
    ) -> Result<RepairOutcome, RepairError> {
        match mode {
            AblationMode::NoTaxonomy => {
                self.apply(meter, t, RepairOperatorId::PlanBasedRepair, diagnosis.k_dagger)
            }
            AblationMode::NoLocalization => {
                let op = select_operator(diagnosis.error_type);
                let k = if diagnosis.error_type == ErrorType::FormatError {
                    t.terminal_index()
                } else {
                    1
                };
                self.apply(meter, t, op, k)
            }
        }
    }
}
