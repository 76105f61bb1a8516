//! Simulated instances over the toy corpus: clean trajectories, an injected
//! failure suite and a script whose judge and repairers behave as specified.

use std::path::Path;

use serde_json::json;

use super::inject::inject_failure;
use super::HarnessError;
use crate::backends::{toy_corpus, CannedReply, Script, Usage};
use crate::diagnosis::{fallback_label, CoverageValue, ErrorType, InjectionLabel};
use crate::trajectory::{approx_tokens, to_line, Action, ActionKind, Document, Trajectory};

/// Fictional town pairs present in the toy corpus: (name, latitude) twice.
pub const PAIRS: [(&str, f64, &str, f64); 10] = [
    ("Arvenna", 41.2, "Bruxholm", 44.7),
    ("Caldor Bay", 36.5, "Dunmere", 38.9),
    ("Elsworth", 47.3, "Fennick", 45.1),
    ("Galdric", 29.8, "Harrowgate", 33.4),
    ("Ivelle", 52.6, "Jorvik Falls", 50.2),
    ("Kestrel Point", 31.1, "Lindqvist", 35.7),
    ("Morrowind Hollow", 43.9, "Nethercombe", 40.4),
    ("Oakhaven", 37.2, "Pellinore", 39.6),
    ("Quarry Glen", 48.8, "Ravensholt", 46.0),
    ("Sablewick", 27.5, "Thornbury", 30.3),
];

pub fn doc_id_for(name: &str) -> String {
    format!("ent-{}", name.to_lowercase().replace(',', "").replace(' ', "-"))
}

fn entity_doc(name: &str) -> Document {
    let id = doc_id_for(name);
    let mut d = toy_corpus()
        .into_iter()
        .find(|d| d.doc_id == id)
        .unwrap_or_else(|| panic!("toy corpus lacks {id}"));
    d.score = 0.92;
    d
}

fn act(text: &str, kind: ActionKind) -> Action {
    let tokens = approx_tokens(text);
    match kind {
        ActionKind::Reason => Action::reason(text, tokens),
        ActionKind::Search => Action::search(text, tokens),
        _ => Action::answer(text, tokens),
    }
}

/// Clean 8-action success trajectory for pair `i`: R S I R S I R A.
pub fn clean_trajectory(i: usize) -> Trajectory {
    let (a, la, b, lb) = PAIRS[i % PAIRS.len()];
    let gold = if la < lb { a } else { b };
    let question = format!("Which of these is further south, {a} or {b}?");
    let body = vec![
        act(&format!("I need to find where {a} is located."), ActionKind::Reason),
        act(&format!("{a} location"), ActionKind::Search),
        Action::information(vec![entity_doc(a)], 0),
        act(&format!("Now I need to find where {b} is located."), ActionKind::Reason),
        act(&format!("{b} location"), ActionKind::Search),
        Action::information(vec![entity_doc(b)], 0),
        act(
            &format!("{a} lies at {la:.1} degrees north and {b} at {lb:.1} degrees north, so {gold} is further south."),
            ActionKind::Reason,
        ),
    ];
    let mut t = Trajectory::from_parts(format!("sim-{i:02}"), question, body, act(gold, ActionKind::Answer));
    t.gold_answer = Some(gold.to_string());
    t.gold_evidence = Some(vec![doc_id_for(a), doc_id_for(b)]);
    t.meta.insert("agent".into(), json!("sim"));
    t
}

/// 40 injected failures: 10 per error type, seeded by pair index.
pub fn injected_suite() -> Vec<Trajectory> {
    let mut out = Vec::new();
    for target in ErrorType::ALL {
        for i in 0..PAIRS.len() {
            let (mut t, _) = inject_failure(&clean_trajectory(i), target, i as u64)
                .expect("simulated trajectories admit every error type");
            t.id = format!("sim-{}-{i:02}", target.short());
            out.push(t);
        }
    }
    out
}

/// How often, out of each block of ten, the scripted components succeed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SimBehaviour {
    pub judge_correct: usize,
    pub rerun_correct: usize,
    pub stepwise_correct: usize,
}

impl Default for SimBehaviour {
    fn default() -> Self {
        SimBehaviour {
            judge_correct: 8,
            rerun_correct: 4,
            stepwise_correct: 3,
        }
    }
}

const JUDGE_USAGE: Usage = Usage {
    prompt_tokens: 40,
    completion_tokens: 2,
};

fn gen(text: String, actions: u64) -> CannedReply {
    CannedReply::new(text, Usage::new(60, 100 * actions))
}

fn wrong_label(truth: ErrorType, coverage: CoverageValue) -> ErrorType {
    match truth {
        ErrorType::FormatError => fallback_label(coverage),
        ErrorType::ReasoningError => ErrorType::FormatError,
        ErrorType::RetrieverError => ErrorType::SearchError,
        ErrorType::SearchError => ErrorType::RetrieverError,
    }
}

/// Script for a suite produced by [`injected_suite`].
///
/// The judge reports the true coverage, classifies correctly for the first
/// `judge_correct` instances of each ten and marks exactly the true failure
/// index erroneous. Operators applied at the true index with the true type
/// reach the gold answer; anything else answers "unknown".
pub fn suite_script(suite: &[Trajectory], behaviour: SimBehaviour) -> Script {
    let mut s = Script {
        toy_fallback: true,
        ..Script::default()
    };
    for pattern in [
        "answer-rewrite:*",
        "re-reason:*",
        "retrieval-answer:*",
        "plan-answer:*",
        "final-answer:*",
    ] {
        s.push(pattern, gen("ANSWER[unknown]".into(), 1));
    }
    s.push("agent-step:*", gen("ANSWER[unknown]".into(), 1));
    s.push("query-rewrite:*", gen("town location latitude".into(), 1));
    s.push("plan:*", gen("1. REASON: reconsider the question".into(), 1));
    s.push("plan-reason:*", gen("Reconsidering the evidence.".into(), 1));
    s.push("step-verification:*", CannedReply::new("VALID", JUDGE_USAGE));
    s.push("per-action-localization:*", CannedReply::new("NO", JUDGE_USAGE));
    s.push("noise-screen:*", CannedReply::new("YES", JUDGE_USAGE));

    for (n, t) in suite.iter().enumerate() {
        let label = InjectionLabel::from_meta(t)
            .expect("suite instances carry labels")
            .expect("labels are well-formed");
        let gold = t.gold_answer.clone().unwrap_or_default();
        let id = &t.id;
        let k = label.k_dagger;
        let slot = n % 10;
        let verdict = if label.coverage == CoverageValue::Full { "YES" } else { "NO" };
        s.push(format!("sufficiency:{id}"), CannedReply::new(verdict, JUDGE_USAGE));
        let classified = if slot < behaviour.judge_correct {
            label.error_type
        } else {
            wrong_label(label.error_type, label.coverage)
        };
        let role = match label.coverage {
            CoverageValue::Full => "classification-full",
            CoverageValue::Partial => "classification-partial",
        };
        s.push(format!("{role}:{id}"), CannedReply::new(classified.label(), JUDGE_USAGE));
        s.push(format!("per-action-localization:{id}:{k}"), CannedReply::new("YES", JUDGE_USAGE));

        let answer = format!("ANSWER[{gold}]");
        match label.error_type {
            ErrorType::FormatError => {
                s.push(format!("answer-rewrite:{id}"), gen(answer, 1));
            }
            ErrorType::ReasoningError => {
                let reasons = t.k() + 1 - k;
                s.push(
                    format!("re-reason:{id}:{k}"),
                    gen(format!("Comparing the latitudes again.\n{answer}"), reasons as u64 + 1),
                );
            }
            ErrorType::RetrieverError => {
                s.push(format!("retrieval-answer:{id}:{k}"), gen(answer, 1));
            }
            ErrorType::SearchError => {
                let q = t.question.trim_end_matches('?').to_string();
                s.push(
                    format!("plan:{id}:{k}"),
                    gen(format!("1. SEARCH: {q} latitude\n2. REASON: compare the latitudes"), 2),
                );
                s.push(format!("plan-answer:{id}:{k}"), gen(answer, 1));
            }
        }
        if slot < behaviour.rerun_correct {
            s.push(
                format!("agent-step:{id}:1:1"),
                gen(format!("I recall both towns.\nANSWER[{gold}]"), 2),
            );
        }
        if slot < behaviour.stepwise_correct {
            s.push(format!("final-answer:{id}"), gen(format!("ANSWER[{gold}]"), 1));
        }
    }
    s
}

/// Writes `dataset.jsonl`, `script.json` and `config.toml` for the injected suite.
pub fn write_simulation(dir: &Path) -> Result<(), HarnessError> {
    let io = |path: &Path, e: std::io::Error| HarnessError::Io {
        path: path.display().to_string(),
        source: e,
    };
    std::fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
    let suite = injected_suite();
    let script = suite_script(&suite, SimBehaviour::default());
    let dataset: String = suite.iter().map(|t| to_line(t) + "\n").collect();
    let files = [
        ("dataset.jsonl", dataset),
        (
            "script.json",
            serde_json::to_string_pretty(&script).expect("script serializes"),
        ),
        (
            "config.toml",
            "[run]\nstrategy = \"drrag\"\ncoverage_mode = \"judge\"\nconcurrency = 4\n\n[retrieval]\nbase_top_k = 5\ntop_k_multiplier = 2\n\n[agent]\nmax_steps = 10\n\n[paths]\noutput = \"report\"\n\n[backend]\nscript = \"script.json\"\n"
                .to_string(),
        ),
    ];
    for (name, body) in files {
        let path = dir.join(name);
        std::fs::write(&path, body).map_err(|e| io(&path, e))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::exact_match;

    #[test]
    fn pairs_match_the_corpus() {
        for (a, la, b, lb) in PAIRS {
            for (name, lat) in [(a, la), (b, lb)] {
                let d = entity_doc(name);
                assert!(d.text.contains(&format!("latitude {lat:.1} degrees")), "{name}");
            }
        }
    }

    #[test]
    fn clean_trajectories_are_valid_successes() {
        for i in 0..PAIRS.len() {
            let t = clean_trajectory(i);
            t.validate().unwrap();
            assert_eq!(t.k(), 7);
            assert_eq!(exact_match(&t.predicted_answer, t.gold_answer.as_ref().unwrap()), 1);
        }
    }

    #[test]
    fn suite_has_ten_of_each_type() {
        let suite = injected_suite();
        assert_eq!(suite.len(), 40);
        for target in ErrorType::ALL {
            let n = suite
                .iter()
                .filter(|t| InjectionLabel::from_meta(t).unwrap().unwrap().error_type == target)
                .count();
            assert_eq!(n, 10);
        }
        let ids: std::collections::HashSet<_> = suite.iter().map(|t| &t.id).collect();
        assert_eq!(ids.len(), 40);
    }
}
