//! Batch pipeline behaviour: pass-through, error isolation, aborts and input checks.

use std::sync::Arc;

use trajfix::backends::{BackendError, FnModel, ModelHandle, Script, ScriptedModel, ScriptedRetriever};
use trajfix::harness::sim::{clean_trajectory, injected_suite, suite_script, SimBehaviour};
use trajfix::harness::{
    parse_dataset, run_pipeline, Backends, HarnessError, InstanceStatus, RunConfig, Strategy,
};
use trajfix::prompts::PromptTemplates;
use trajfix::trajectory::{to_line, Trajectory};

fn config(strategy: Strategy) -> RunConfig {
    RunConfig {
        strategy,
        ..RunConfig::default()
    }
}

/// Sim backends whose model fails with `err` on any fingerprint naming `poisoned`.
fn poisoned(suite: &[Trajectory], poisoned: &'static str, err: BackendError) -> Backends {
    let script = suite_script(suite, SimBehaviour::default());
    let retriever = Arc::new(ScriptedRetriever::from_script(&script));
    let inner = ScriptedModel::new(script);
    let llm = FnModel::new(move |req| {
        if req.fingerprint().contains(poisoned) {
            Err(err.clone())
        } else {
            inner.complete(req)
        }
    });
    Backends {
        llm: Arc::new(llm),
        retriever,
    }
}

#[test]
fn all_correct_dataset_passes_through_without_calls() {
    let clean: Vec<Trajectory> = (0..10).map(clean_trajectory).collect();
    let backends = Backends::scripted(Script::default());
    let r = run_pipeline(&clean, &config(Strategy::DrRag), &backends, &PromptTemplates::default()).unwrap();
    let s = &r.aggregates.stats;
    assert_eq!((s.total, s.initially_failed, s.corrected), (10, 0, 0));
    assert_eq!((s.delta_em, s.delta_f1, s.delta_rouge_l), (0.0, 0.0, 0.0));
    assert!(r.per_type.is_empty());
    assert_eq!(r.confusion.diagnosed, 0);
    assert!(r.records.iter().all(|x| x.status == InstanceStatus::Passed));
    assert_eq!(r.aggregates.total_tokens, 0);
}

#[test]
fn oracle_on_a_mixed_set_lifts_em_by_the_failure_fraction() {
    let suite = injected_suite();
    let mut data: Vec<Trajectory> = (0..6).map(clean_trajectory).collect();
    data.extend([0, 10, 20, 30].map(|i| suite[i].clone()));
    let backends = Backends::scripted(suite_script(&suite, SimBehaviour::default()));
    let r = run_pipeline(&data, &config(Strategy::Oracle), &backends, &PromptTemplates::default()).unwrap();
    let s = &r.aggregates.stats;
    assert_eq!(s.repair_rate, 1.0);
    // 4 of 10 flip from 0 to 1: +40 points.
    assert!((s.delta_em - 40.0).abs() < 1e-9, "{}", s.delta_em);
    for (before, after) in data.iter().zip(&r.records) {
        if after.status == InstanceStatus::Passed {
            assert_eq!(after.trajectory.as_ref(), Some(before));
        }
    }
}

#[test]
fn soft_errors_are_recorded_and_counted_as_uncorrected() {
    let suite = injected_suite();
    let miss = BackendError::ScriptMiss {
        fingerprint: "forced".into(),
    };
    let backends = poisoned(&suite, "sim-reasoning-01", miss);
    let r = run_pipeline(&suite, &config(Strategy::DrRag), &backends, &PromptTemplates::default()).unwrap();
    let bad = r.records.iter().find(|x| x.id == "sim-reasoning-01").unwrap();
    assert_eq!(bad.status, InstanceStatus::Errored);
    assert_eq!(bad.after, bad.before);
    assert!(bad.error.as_deref().unwrap().contains("forced"));
    assert_eq!(r.aggregates.errored, 1);
    assert_eq!(r.aggregates.stats.initially_failed, 40);
    assert_eq!(r.aggregates.stats.corrected, 31);
}

#[test]
fn hard_failures_abort_with_a_partial_report() {
    let suite = injected_suite();
    let backends = poisoned(&suite, "sim-retriever-00", BackendError::Transport("connection refused".into()));
    let err = run_pipeline(&suite, &config(Strategy::DrRag), &backends, &PromptTemplates::default()).unwrap_err();
    assert!(err.is_backend());
    let HarnessError::Aborted { error, partial } = err else {
        panic!("expected an abort, got {err}");
    };
    assert!(matches!(error, BackendError::Transport(_)));
    let failing = suite.iter().position(|t| t.id == "sim-retriever-00").unwrap();
    assert!(!partial.records.is_empty());
    assert!(partial.records.len() < suite.len());
    assert!(partial.records.iter().all(|r| r.index != failing));
}

#[test]
fn noise_screen_skips_unanswerable_questions() {
    let suite = injected_suite();
    let mut script = suite_script(&suite, SimBehaviour::default());
    script.push_text("noise-screen:sim-format-02", "NO");
    let backends = Backends::scripted(script);
    let cfg = RunConfig {
        screen_noise: true,
        ..config(Strategy::DrRag)
    };
    let r = run_pipeline(&suite, &cfg, &backends, &PromptTemplates::default()).unwrap();
    let skipped: Vec<_> = r
        .records
        .iter()
        .filter(|x| x.status == InstanceStatus::SkippedNoise)
        .map(|x| x.id.as_str())
        .collect();
    assert_eq!(skipped, ["sim-format-02"]);
    assert_eq!(r.aggregates.skipped_noise, 1);
    assert_eq!(r.aggregates.stats.corrected, 31);
}

#[test]
fn input_problems_are_reported_with_line_numbers() {
    let clean = clean_trajectory(0);
    let mut no_gold = clean.clone();
    no_gold.gold_answer = None;
    let backends = Backends::scripted(Script::default());
    let tpl = PromptTemplates::default();
    let err = run_pipeline(&[clean.clone(), no_gold], &config(Strategy::DrRag), &backends, &tpl).unwrap_err();
    assert!(matches!(err, HarnessError::Input { line: 2, .. }), "{err}");

    let mut unlabeled = clean.clone();
    unlabeled.predicted_answer = "wrong".into();
    let last = unlabeled.actions.len() - 1;
    unlabeled.actions[last] = trajfix::trajectory::Action::answer("wrong", 1);
    let err = run_pipeline(&[unlabeled], &config(Strategy::Oracle), &backends, &tpl).unwrap_err();
    assert!(matches!(err, HarnessError::Input { line: 1, .. }), "{err}");

    let text = format!("{}\n\n{}\n{{\"id\": 1}}\n", to_line(&clean), to_line(&clean));
    let err = parse_dataset(&text).unwrap_err();
    assert!(matches!(err, HarnessError::Input { line: 4, .. }), "{err}");
    assert!(err.to_string().contains("line 4"));
}
