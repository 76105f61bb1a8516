//! Seeded failure injection with known ground truth.

use std::sync::OnceLock;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::backends::toy_corpus;
use crate::diagnosis::{oracle_coverage, CoverageValue, ErrorType, InjectionLabel, META_INJECTION};
use crate::metrics::{exact_match, normalize_answer};
use crate::trajectory::{aggregate_documents, approx_tokens, Action, ActionKind, Document, Payload, Trajectory};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum InjectError {
    #[error("trajectory `{id}` is not a clean success: {reason}")]
    NotClean { id: String, reason: String },
    #[error("cannot inject {target} into `{id}`: {reason}")]
    Skip {
        id: String,
        target: ErrorType,
        reason: String,
    },
}

const FORMAT_WRAPPERS: [&str; 3] = [
    "Based on the evidence, the answer would be the {gold} region.",
    "After weighing all of the retrieved documents, my conclusion is that it is {gold}, most likely.",
    "The final answer to the question, according to the reasoning above, is {gold} (see sources).",
];

const VAGUE_QUERIES: [&str; 4] = ["more information", "the answer", "which one", "details about it"];

/// Corrupts clean trajectories, drawing off-topic documents from a pool.
#[derive(Debug, Clone)]
pub struct Injector {
    pool: Vec<Document>,
}

impl Injector {
    pub fn new(pool: Vec<Document>) -> Self {
        Injector { pool }
    }

    /// Uses the `misc-*` documents of the bundled toy corpus as distractors.
    pub fn toy() -> &'static Injector {
        static TOY: OnceLock<Injector> = OnceLock::new();
        TOY.get_or_init(|| {
            Injector::new(
                toy_corpus()
                    .into_iter()
                    .filter(|d| d.doc_id.starts_with("misc-"))
                    .collect(),
            )
        })
    }

    pub fn inject(
        &self,
        clean: &Trajectory,
        target: ErrorType,
        seed: u64,
    ) -> Result<(Trajectory, InjectionLabel), InjectError> {
        let gold = clean.gold_answer.clone().ok_or_else(|| InjectError::NotClean {
            id: clean.id.clone(),
            reason: "no gold answer".into(),
        })?;
        if exact_match(&clean.predicted_answer, &gold) == 0 {
            return Err(InjectError::NotClean {
                id: clean.id.clone(),
                reason: "predicted answer does not match gold".into(),
            });
        }
        let skip = |reason: &str| InjectError::Skip {
            id: clean.id.clone(),
            target,
            reason: reason.into(),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut t = clean.clone();
        let coverage_now = match &clean.gold_evidence {
            Some(gold_ev) => oracle_coverage(&aggregate_documents(clean), gold_ev),
            None => CoverageValue::Full,
        };
        let (k_dagger, description, coverage) = match target {
            ErrorType::FormatError => {
                let wrapper = FORMAT_WRAPPERS.choose(&mut rng).expect("non-empty");
                let verbose = wrapper.replace("{gold}", &gold);
                set_answer(&mut t, verbose);
                (
                    t.terminal_index(),
                    "answer wrapped in verbose text".to_string(),
                    coverage_now,
                )
            }
            ErrorType::ReasoningError => {
                if coverage_now != CoverageValue::Full {
                    return Err(skip("evidence is not sufficient"));
                }
                let k = pick(&t, ActionKind::Reason, &mut rng).ok_or_else(|| skip("no reason actions"))?;
                let wrong = self.distractor(&t, &gold, &mut rng);
                let text = format!("{wrong} must be the answer, so {gold} can be ruled out.");
                t.actions[k - 1] = Action::reason(&text, approx_tokens(&text));
                set_answer(&mut t, wrong);
                (k, format!("contradictory conclusion at step {k}"), CoverageValue::Full)
            }
            ErrorType::RetrieverError => {
                let k = pick_where(&t, &mut rng, |a| !a.docs().is_empty())
                    .ok_or_else(|| skip("no information actions with documents"))?;
                let n = t.actions[k - 1].docs().len().max(2);
                let offtopic = self.offtopic(&t, n, &mut rng);
                let removed: Vec<String> = t.actions[k - 1].docs().iter().map(|d| d.doc_id.clone()).collect();
                t.actions[k - 1] = Action::information(offtopic, 0);
                self.starve(&mut t, &removed, target)?;
                let wrong = self.distractor(clean, &gold, &mut rng);
                set_answer(&mut t, wrong);
                (k, format!("off-topic documents retrieved at step {k}"), CoverageValue::Partial)
            }
            ErrorType::SearchError => {
                let searches: Vec<(usize, usize)> = t
                    .indexed()
                    .filter(|(_, a)| a.kind() == ActionKind::Search)
                    .filter_map(|(k, _)| {
                        (1..k)
                            .rev()
                            .find(|&j| t.actions[j - 1].kind() == ActionKind::Reason)
                            .map(|r| (k, r))
                    })
                    .collect();
                let &(k_search, k_reason) = searches
                    .choose(&mut rng)
                    .ok_or_else(|| skip("no search action preceded by reasoning"))?;
                let query = VAGUE_QUERIES.choose(&mut rng).expect("non-empty");
                t.actions[k_search - 1] = Action::search(*query, approx_tokens(query));
                let mut removed = Vec::new();
                if let Some(a) = t.actions.get(k_search) {
                    if a.kind() == ActionKind::Information {
                        removed = a.docs().iter().map(|d| d.doc_id.clone()).collect();
                        let n = a.docs().len().max(2);
                        let offtopic = self.offtopic(&t, n, &mut rng);
                        t.actions[k_search] = Action::information(offtopic, 0);
                    }
                }
                self.starve(&mut t, &removed, target)?;
                let wrong = self.distractor(clean, &gold, &mut rng);
                set_answer(&mut t, wrong);
                (
                    k_reason,
                    format!("under-specified query at step {k_search} issued after step {k_reason}"),
                    CoverageValue::Partial,
                )
            }
        };
        let label = InjectionLabel {
            error_type: target,
            k_dagger,
            description,
            coverage,
        };
        t.meta.insert(META_INJECTION.into(), label.to_value());
        debug_assert!(t.validate().is_ok());
        Ok((t, label))
    }

    /// Removes gold evidence (and `removed`) from every information action.
    fn starve(&self, t: &mut Trajectory, removed: &[String], target: ErrorType) -> Result<(), InjectError> {
        let gold_ev = t.gold_evidence.clone().unwrap_or_default();
        for a in t.actions.iter_mut() {
            if let Payload::Information(docs) = &mut a.payload {
                docs.retain(|d| !gold_ev.contains(&d.doc_id) && !removed.contains(&d.doc_id));
            }
        }
        if let Some(gold_ev) = &t.gold_evidence {
            if oracle_coverage(&aggregate_documents(t), gold_ev) == CoverageValue::Full {
                return Err(InjectError::Skip {
                    id: t.id.clone(),
                    target,
                    reason: "gold evidence is empty; coverage cannot be reduced".into(),
                });
            }
        }
        Ok(())
    }

    fn offtopic(&self, t: &Trajectory, n: usize, rng: &mut ChaCha8Rng) -> Vec<Document> {
        let present = aggregate_documents(t);
        let mut pool: Vec<&Document> = self.pool.iter().filter(|d| !present.contains(&d.doc_id)).collect();
        pool.shuffle(rng);
        pool.into_iter()
            .take(n)
            .enumerate()
            .map(|(i, d)| Document {
                score: 0.5 - 0.05 * i as f64,
                ..d.clone()
            })
            .collect()
    }

    /// A wrong answer drawn from the trajectory's own document titles.
    fn distractor(&self, t: &Trajectory, gold: &str, rng: &mut ChaCha8Rng) -> String {
        let g = normalize_answer(gold);
        let mut titles: Vec<String> = aggregate_documents(t)
            .iter()
            .map(|d| d.title.clone())
            .filter(|title| {
                let n = normalize_answer(title);
                !n.is_empty() && n != g
            })
            .collect();
        titles.dedup();
        titles.choose(rng).cloned().unwrap_or_else(|| "unknown".to_string())
    }
}

fn set_answer(t: &mut Trajectory, answer: String) {
    let tokens = approx_tokens(&answer);
    let last = t.actions.len() - 1;
    t.actions[last] = Action::answer(&answer, tokens);
    t.predicted_answer = answer;
}

fn pick(t: &Trajectory, kind: ActionKind, rng: &mut ChaCha8Rng) -> Option<usize> {
    pick_where(t, rng, |a| a.kind() == kind)
}

fn pick_where(t: &Trajectory, rng: &mut ChaCha8Rng, pred: impl Fn(&Action) -> bool) -> Option<usize> {
    let ks: Vec<usize> = t.indexed().filter(|(_, a)| pred(a)).map(|(k, _)| k).collect();
    if ks.is_empty() {
        None
    } else {
        Some(ks[rng.gen_range(0..ks.len())])
    }
}

/// Injects with the toy-corpus distractor pool.
pub fn inject_failure(
    clean: &Trajectory,
    target: ErrorType,
    seed: u64,
) -> Result<(Trajectory, InjectionLabel), InjectError> {
    Injector::toy().inject(clean, target, seed)
}
