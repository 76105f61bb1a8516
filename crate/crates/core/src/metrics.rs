//! Answer-quality and repair-quality metrics for multi-hop QA.
//!
//! EM and F1 operate on SQuAD-normalized answers. ROUGE-L uses the usual
//! ROUGE tokenizer (lowercase, punctuation stripped, articles kept). Repair
//! statistics compare per-instance metric triples before and after repair.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("before/after length mismatch: {before} vs {after}")]
    LengthMismatch { before: usize, after: usize },
    #[error("instance {index} had EM=1 before repair but its metrics changed")]
    TouchedCorrectInstance { index: usize },
}

/// Lowercase, strip ASCII punctuation, drop the articles a/an/the, collapse whitespace.
pub fn normalize_answer(text: &str) -> String {
    let lowered = text.to_lowercase();
    let no_punct: String = lowered
        .chars()
        .filter(|c| !c.is_ascii_punctuation())
        .collect();
    no_punct
        .split_whitespace()
        .filter(|w| !matches!(*w, "a" | "an" | "the"))
        .collect::<Vec<_>>()
        .join(" ")
}

fn tokens(text: &str) -> Vec<String> {
    normalize_answer(text)
        .split_whitespace()
        .map(str::to_string)
        .collect()
}

pub fn exact_match(pred: &str, gold: &str) -> u8 {
    u8::from(normalize_answer(pred) == normalize_answer(gold))
}

fn f_measure(overlap: usize, pred_len: usize, gold_len: usize) -> f64 {
    if overlap == 0 {
        return 0.0;
    }
    let precision = overlap as f64 / pred_len as f64;
    let recall = overlap as f64 / gold_len as f64;
    2.0 * precision * recall / (precision + recall)
}

/// Token-level F1 with multiset overlap.
pub fn token_f1(pred: &str, gold: &str) -> f64 {
    let p = tokens(pred);
    let g = tokens(gold);
    match (p.is_empty(), g.is_empty()) {
        (true, true) => return 1.0,
        (true, false) | (false, true) => return 0.0,
        _ => {}
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for t in &g {
        *counts.entry(t.as_str()).or_default() += 1;
    }
    let mut overlap = 0;
    for t in &p {
        if let Some(c) = counts.get_mut(t.as_str()) {
            if *c > 0 {
                *c -= 1;
                overlap += 1;
            }
        }
    }
    f_measure(overlap, p.len(), g.len())
}

/// Lowercase and strip punctuation; articles are kept.
fn rouge_tokens(text: &str) -> Vec<String> {
    text.to_lowercase()
        .chars()
        .filter(|c| !c.is_ascii_punctuation())
        .collect::<String>()
        .split_whitespace()
        .map(str::to_string)
        .collect()
}

fn lcs_len(a: &[String], b: &[String]) -> usize {
    // single-row DP
    let mut row = vec![0usize; b.len() + 1];
    for x in a {
        let mut diag = 0;
        for (j, y) in b.iter().enumerate() {
            let up = row[j + 1];
            row[j + 1] = if x == y { diag + 1 } else { up.max(row[j]) };
            diag = up;
        }
    }
    row[b.len()]
}

/// ROUGE-L F-measure with beta = 1.
pub fn rouge_l(pred: &str, gold: &str) -> f64 {
    let p = rouge_tokens(pred);
    let g = rouge_tokens(gold);
    match (p.is_empty(), g.is_empty()) {
        (true, true) => return 1.0,
        (true, false) | (false, true) => return 0.0,
        _ => {}
    }
    f_measure(lcs_len(&p, &g), p.len(), g.len())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricTriple {
    pub em: u8,
    pub f1: f64,
    pub rouge_l: f64,
}

impl MetricTriple {
    pub fn score(pred: &str, gold: &str) -> Self {
        MetricTriple {
            em: exact_match(pred, gold),
            f1: token_f1(pred, gold),
            rouge_l: rouge_l(pred, gold),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RepairStats {
    pub total: usize,
    pub initially_failed: usize,
    pub corrected: usize,
    /// Fraction in [0, 1].
    pub repair_rate: f64,
    /// Percentage points.
    pub delta_em: f64,
    pub delta_f1: f64,
    pub delta_rouge_l: f64,
}

fn mean_by(xs: &[MetricTriple], f: impl Fn(&MetricTriple) -> f64) -> f64 {
    xs.iter().map(f).sum::<f64>() / xs.len() as f64
}

pub fn repair_stats(
    before: &[MetricTriple],
    after: &[MetricTriple],
) -> Result<RepairStats, MetricsError> {
    if before.len() != after.len() {
        return Err(MetricsError::LengthMismatch {
            before: before.len(),
            after: after.len(),
        });
    }
    for (index, (b, a)) in before.iter().zip(after).enumerate() {
        if b.em == 1 && b != a {
            return Err(MetricsError::TouchedCorrectInstance { index });
        }
    }
    let total = before.len();
    if total == 0 {
        return Ok(RepairStats::default());
    }
    let initially_failed = before.iter().filter(|m| m.em == 0).count();
    let corrected = before
        .iter()
        .zip(after)
        .filter(|(b, a)| b.em == 0 && a.em == 1)
        .count();
    let repair_rate = if initially_failed == 0 {
        0.0
    } else {
        corrected as f64 / initially_failed as f64
    };
    Ok(RepairStats {
        total,
        initially_failed,
        corrected,
        repair_rate,
        delta_em: corrected as f64 / total as f64 * 100.0,
        delta_f1: (mean_by(after, |m| m.f1) - mean_by(before, |m| m.f1)) * 100.0,
        delta_rouge_l: (mean_by(after, |m| m.rouge_l) - mean_by(before, |m| m.rouge_l)) * 100.0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn normalization_rules() {
        assert_eq!(normalize_answer("The Pulandian District."), "pulandian district");
        assert_eq!(normalize_answer(""), "");
        assert_eq!(normalize_answer("  An  apple,  a day "), "apple day");
    }

    #[test]
    fn exact_match_cases() {
        assert_eq!(exact_match("Paris", "paris"), 1);
        assert_eq!(exact_match("Kaiyuan, Liaoning", "Pulandian District"), 0);
        assert_eq!(exact_match("the answer", "answer"), 1);
    }

    #[test]
    fn f1_cases() {
        assert_eq!(token_f1("same words here", "same words here"), 1.0);
        assert!((token_f1("south of liaoning", "liaoning south") - 0.8).abs() < 1e-12);
        assert_eq!(token_f1("alpha beta", "gamma delta"), 0.0);
        assert_eq!(token_f1("", ""), 1.0);
        assert_eq!(token_f1("x", ""), 0.0);
        // multiset, not set, overlap
        assert!((token_f1("x x", "x y") - 0.5).abs() < 1e-12);
    }

    #[test]
    fn rouge_cases() {
        assert_eq!(rouge_l("one two three", "one two three"), 1.0);
        assert!((rouge_l("a b c", "a c b") - 2.0 / 3.0).abs() < 1e-12);
        assert!((rouge_l("The Pulandian District.", "pulandian district") - 0.8).abs() < 1e-12);
        assert_eq!(rouge_l("", ""), 1.0);
        assert_eq!(rouge_l("", "x"), 0.0);
    }

    #[test]
    fn f1_one_does_not_imply_rouge_one() {
        assert_eq!(token_f1("x y", "y x"), 1.0);
        assert_eq!(rouge_l("x y", "y x"), 0.5);
    }

    #[test]
    fn repair_stats_cases() {
        let ok = MetricTriple { em: 1, f1: 1.0, rouge_l: 1.0 };
        let bad = MetricTriple { em: 0, f1: 0.0, rouge_l: 0.0 };
        let s = repair_stats(&[ok; 3], &[ok; 3]).unwrap();
        assert_eq!(s.initially_failed, 0);
        assert_eq!(s.repair_rate, 0.0);
        assert_eq!((s.delta_em, s.delta_f1, s.delta_rouge_l), (0.0, 0.0, 0.0));

        let mut before = vec![ok; 6];
        before.extend([bad; 4]);
        let mut after = before.clone();
        after[6] = ok;
        after[7] = ok;
        let s = repair_stats(&before, &after).unwrap();
        assert_eq!(s.repair_rate, 0.5);
        assert!((s.delta_em - 20.0).abs() < 1e-12);
        assert!((s.delta_f1 - 20.0).abs() < 1e-9);

        assert!(matches!(
            repair_stats(&before, &after[..3]),
            Err(MetricsError::LengthMismatch { .. })
        ));
        let mut touched = after.clone();
        touched[0] = bad;
        assert_eq!(
            repair_stats(&before, &touched),
            Err(MetricsError::TouchedCorrectInstance { index: 0 })
        );
        assert_eq!(repair_stats(&[], &[]).unwrap(), RepairStats::default());
    }

    fn word() -> impl Strategy<Value = String> {
        prop::sample::select(vec![
            "a", "an", "the", "The", "x", "y", "z", "Paris", "paris.", "south", "of", "liaoning",
            "!", "B-2", "é",
        ])
        .prop_map(str::to_string)
    }

    fn sentence() -> impl Strategy<Value = String> {
        prop::collection::vec(word(), 0..8).prop_map(|ws| ws.join(" "))
    }

    fn triple() -> impl Strategy<Value = MetricTriple> {
        (0u8..2, 0.0f64..=1.0, 0.0f64..=1.0).prop_map(|(em, f1, rl)| {
            if em == 1 {
                MetricTriple { em, f1: 1.0, rouge_l: 1.0 }
            } else {
                MetricTriple { em, f1, rouge_l: rl }
            }
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn normalize_is_idempotent(s in "\\PC{0,40}") {
            let once = normalize_answer(&s);
            prop_assert_eq!(normalize_answer(&once), once);
        }

        #[test]
        fn metrics_are_bounded_and_symmetric(p in sentence(), g in sentence()) {
            let f = token_f1(&p, &g);
            let r = rouge_l(&p, &g);
            prop_assert!((0.0..=1.0).contains(&f));
            prop_assert!((0.0..=1.0).contains(&r));
            prop_assert!((f - token_f1(&g, &p)).abs() < 1e-12);
            prop_assert!((r - rouge_l(&g, &p)).abs() < 1e-12);
            if exact_match(&p, &g) == 1 {
                prop_assert_eq!(f, 1.0);
            }
            if p.to_lowercase() == g.to_lowercase() {
                prop_assert_eq!(r, 1.0);
            }
        }

        #[test]
        fn delta_em_identity(before in prop::collection::vec(triple(), 1..40), flips in prop::collection::vec(any::<bool>(), 40)) {
            let after: Vec<_> = before.iter().zip(&flips).map(|(b, &flip)| {
                if b.em == 0 && flip { MetricTriple { em: 1, f1: 1.0, rouge_l: 1.0 } } else { *b }
            }).collect();
            let s = repair_stats(&before, &after).unwrap();
            let expected = s.repair_rate * (s.initially_failed as f64 / s.total as f64) * 100.0;
            prop_assert!((s.delta_em - expected).abs() < 1e-9);
            prop_assert!(s.delta_em >= 0.0);
        }
    }
}
