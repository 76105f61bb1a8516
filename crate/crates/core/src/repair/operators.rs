use super::{
    extract_answer, finish, outcome, RepairError, RepairMethod, RepairOutcome, Repairer,
    FLAG_EMPTY_QUERY_SET, FLAG_EMPTY_REWRITE, FLAG_PLAN_BUDGET, FLAG_PLAN_LINE_SKIPPED,
    FLAG_SUFFIX_BUDGET, FLAG_UNTAGGED_ANSWER,
};
use crate::backends::{Bucket, Meter, RetrievalRequest};
use crate::prompts::{render_actions, render_documents, PromptRole};
use crate::trajectory::{
    aggregate_documents, approx_tokens, collect_queries, documents_of, prefix, Action, Trajectory,
};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PlanStep {
    Reason(String),
    Search(String),
}

/// Parses numbered `REASON: …` / `SEARCH: …` lines, returning the steps and
/// the number of non-empty lines that were skipped.
pub fn parse_plan(text: &str) -> (Vec<PlanStep>, usize) {
    let mut steps = Vec::new();
    let mut skipped = 0;
    for line in text.lines() {
        let l = line
            .trim()
            .trim_start_matches(|c: char| c.is_ascii_digit() || matches!(c, '.' | ')' | '-' | '*'))
            .trim();
        if l.is_empty() {
            continue;
        }
        let upper = l.to_ascii_uppercase();
        let step = if let Some(rest) = upper.strip_prefix("REASON:") {
            Some(PlanStep::Reason(l[l.len() - rest.len()..].trim().to_string()))
        } else if let Some(rest) = upper.strip_prefix("SEARCH:") {
            Some(PlanStep::Search(l[l.len() - rest.len()..].trim().to_string()))
        } else {
            None
        };
        match step {
            Some(PlanStep::Reason(s)) | Some(PlanStep::Search(s)) if s.is_empty() => skipped += 1,
            Some(s) => steps.push(s),
            None => skipped += 1,
        }
    }
    (steps, skipped)
}

impl Repairer<'_> {
    /// Rewrites only the terminal answer.
    pub fn repair_format(&self, meter: &mut Meter, t: &Trajectory) -> Result<RepairOutcome, RepairError> {
        let docs = aggregate_documents(t);
        let prompt = self.templates.render(
            PromptRole::AnswerRewrite,
            &[
                ("question", &t.question),
                ("documents", &render_documents(docs.iter())),
                ("answer", &t.predicted_answer),
            ],
        )?;
        let req = self.request(PromptRole::AnswerRewrite, vec![t.id.clone()], prompt);
        let reply = meter.chat(self.llm, Bucket::Repair, &req)?;
        let (answer, _) = extract_answer(&reply.text);
        let mut flags = Vec::new();
        let answer = if answer.is_empty() {
            flags.push(FLAG_EMPTY_REWRITE.to_string());
            t.predicted_answer.clone()
        } else {
            answer
        };
        let k = t.k();
        finish(t, t.body().to_vec(), answer, RepairMethod::AnswerRewrite, k, meter, flags)
    }

    /// Regenerates reasoning from `prefix(t, k†)` over the aggregated documents, without retrieval.
    pub fn repair_reasoning(
        &self,
        meter: &mut Meter,
        t: &Trajectory,
        k_dagger: usize,
    ) -> Result<RepairOutcome, RepairError> {
        let head = prefix(t, k_dagger)?;
        let docs = aggregate_documents(t);
        let prompt = self.templates.render(
            PromptRole::ReReason,
            &[
                ("question", &t.question),
                ("documents", &render_documents(docs.iter())),
                ("prefix", &render_actions(head, 1)),
            ],
        )?;
        let req = self.request(
            PromptRole::ReReason,
            vec![t.id.clone(), k_dagger.to_string()],
            prompt,
        );
        let reply = meter.chat(self.llm, Bucket::Repair, &req)?;
        let mut flags = Vec::new();
        let mut reasons = Vec::new();
        let mut answer = None;
        for line in reply.text.lines() {
            let out = crate::backends::parse_agent_output(line);
            if !out.reasoning.is_empty() {
                reasons.push(out.reasoning);
            }
            if out.answer.is_some() {
                answer = out.answer;
                break;
            }
        }
        let answer = match answer {
            Some(a) => a,
            None => {
                flags.push(FLAG_UNTAGGED_ANSWER.to_string());
                reasons.pop().unwrap_or_default()
            }
        };
        if answer.is_empty() {
            flags.push(FLAG_EMPTY_REWRITE.to_string());
            return outcome(t, t.clone(), RepairMethod::EvidenceGroundedReReason, k_dagger - 1, meter, flags);
        }
        if reasons.len() + 1 > self.config.max_steps {
            flags.push(FLAG_SUFFIX_BUDGET.to_string());
            return outcome(t, t.clone(), RepairMethod::EvidenceGroundedReReason, k_dagger - 1, meter, flags);
        }
        let mut body = head.to_vec();
        body.extend(reasons.iter().map(|r| Action::reason(r, approx_tokens(r))));
        finish(t, body, answer, RepairMethod::EvidenceGroundedReReason, k_dagger - 1, meter, flags)
    }

    /// Rewrites every earlier query, re-retrieves with an enlarged top-k and answers once.
    pub fn repair_retriever(
        &self,
        meter: &mut Meter,
        t: &Trajectory,
        k_dagger: usize,
    ) -> Result<RepairOutcome, RepairError> {
        let head = prefix(t, k_dagger)?;
        let mut flags = Vec::new();
        let mut queries = collect_queries(t, k_dagger)?;
        if queries.is_empty() {
            flags.push(FLAG_EMPTY_QUERY_SET.to_string());
            queries.push(t.question.clone());
        }
        let mut body = head.to_vec();
        for q in &queries {
            let prompt = self.templates.render(
                PromptRole::QueryRewrite,
                &[("question", &t.question), ("query", q)],
            )?;
            let req = self.request(PromptRole::QueryRewrite, vec![t.id.clone(), q.clone()], prompt);
            let reply = meter.chat(self.llm, Bucket::Repair, &req)?;
            let out = crate::backends::parse_agent_output(&reply.text);
            let rewrite = out
                .search
                .or_else(|| {
                    reply
                        .text
                        .lines()
                        .map(str::trim)
                        .find(|l| !l.is_empty())
                        .map(str::to_string)
                })
                .filter(|r| !r.is_empty())
                .unwrap_or_else(|| {
                    flags.push(FLAG_EMPTY_REWRITE.to_string());
                    q.clone()
                });
            let results = meter
                .retrieve(self.retriever, &RetrievalRequest::new(&rewrite, self.config.augmented_top_k()))?
                .results;
            body.push(Action::search(&rewrite, approx_tokens(&rewrite)));
            body.push(Action::information(results, 0));
        }
        let docs = documents_of(&body);
        let prompt = self.templates.render(
            PromptRole::RetrievalAnswer,
            &[
                ("question", &t.question),
                ("prefix", &render_actions(&body, 1)),
                ("documents", &render_documents(docs.iter())),
            ],
        )?;
        let req = self.request(
            PromptRole::RetrievalAnswer,
            vec![t.id.clone(), k_dagger.to_string()],
            prompt,
        );
        let reply = meter.chat(self.llm, Bucket::Repair, &req)?;
        let (answer, _) = extract_answer(&reply.text);
        let answer = if answer.is_empty() {
            flags.push(FLAG_EMPTY_REWRITE.to_string());
            t.predicted_answer.clone()
        } else {
            answer
        };
        finish(t, body, answer, RepairMethod::QueryRewriteTopK, k_dagger - 1, meter, flags)
    }

    /// Plans a new suffix from `prefix(t, k†)` and executes it.
    pub fn repair_search(
        &self,
        meter: &mut Meter,
        t: &Trajectory,
        k_dagger: usize,
    ) -> Result<RepairOutcome, RepairError> {
        let head = prefix(t, k_dagger)?;
        let mut flags = Vec::new();
        let prompt = self.templates.render(
            PromptRole::Plan,
            &[
                ("question", &t.question),
                ("prefix", &render_actions(head, 1)),
                ("max_steps", &self.config.max_steps.to_string()),
            ],
        )?;
        let req = self.request(PromptRole::Plan, vec![t.id.clone(), k_dagger.to_string()], prompt);
        let mut parsed = parse_plan(&meter.chat(self.llm, Bucket::Repair, &req)?.text);
        if parsed.0.is_empty() {
            parsed = parse_plan(&meter.chat(self.llm, Bucket::Repair, &req)?.text);
        }
        let (steps, skipped) = parsed;
        if steps.is_empty() {
            return Err(RepairError::PlanUnparseable);
        }
        if skipped > 0 {
            flags.push(FLAG_PLAN_LINE_SKIPPED.to_string());
        }
        let mut body = head.to_vec();
        for (i, step) in steps.iter().enumerate() {
            let cost = match step {
                PlanStep::Reason(_) => 1,
                PlanStep::Search(_) => 2,
            };
            if body.len() - head.len() + cost > self.config.max_steps {
                flags.push(FLAG_PLAN_BUDGET.to_string());
                break;
            }
            match step {
                PlanStep::Search(q) => {
                    let results = meter
                        .retrieve(self.retriever, &RetrievalRequest::new(q, self.config.base_top_k))?
                        .results;
                    body.push(Action::search(q, approx_tokens(q)));
                    body.push(Action::information(results, 0));
                }
                PlanStep::Reason(s) => {
                    let prompt = self.templates.render(
                        PromptRole::PlanReason,
                        &[
                            ("question", &t.question),
                            ("context", &render_actions(&body, 1)),
                            ("step", s),
                        ],
                    )?;
                    let req = self.request(
                        PromptRole::PlanReason,
                        vec![t.id.clone(), k_dagger.to_string(), (i + 1).to_string()],
                        prompt,
                    );
                    let reply = meter.chat(self.llm, Bucket::Repair, &req)?;
                    let text = reply.text.split_whitespace().collect::<Vec<_>>().join(" ");
                    let text = if text.is_empty() { s.clone() } else { text };
                    body.push(Action::reason(&text, approx_tokens(&text)));
                }
            }
        }
        let docs = documents_of(&body);
        let prompt = self.templates.render(
            PromptRole::PlanAnswer,
            &[
                ("question", &t.question),
                ("context", &render_actions(&body, 1)),
                ("documents", &render_documents(docs.iter())),
            ],
        )?;
        let req = self.request(
            PromptRole::PlanAnswer,
            vec![t.id.clone(), k_dagger.to_string()],
            prompt,
        );
        let reply = meter.chat(self.llm, Bucket::Repair, &req)?;
        let (answer, _) = extract_answer(&reply.text);
        let answer = if answer.is_empty() {
            flags.push(FLAG_EMPTY_REWRITE.to_string());
            t.predicted_answer.clone()
        } else {
            answer
        };
        finish(t, body, answer, RepairMethod::PlanBasedRepair, k_dagger - 1, meter, flags)
    }
}
