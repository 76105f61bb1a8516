use std::path::Path;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;

use super::config::{RunConfig, Strategy};
use super::report::{EvalReport, InstanceRecord, InstanceStatus, OutcomeSummary};
use super::HarnessError;
use crate::backends::{
    BackendError, HttpRetriever, KeywordRetriever, Meter, ModelHandle, OpenAiClient, RetrieverHandle, Script,
    ScriptedModel, ScriptedRetriever,
};
use crate::diagnosis::{
    oracle_diagnose, Diagnoser, Diagnosis, DiagnosisConfig, DiagnosisError, InjectionLabel,
};
use crate::metrics::MetricTriple;
use crate::prompts::PromptTemplates;
use crate::repair::{select_operator, AblationMode, RepairError, RepairOutcome, Repairer};
use crate::trajectory::{parse_line, CostLedger, Trajectory};

/// Model and retriever handles shared by all workers.
#[derive(Clone)]
pub struct Backends {
    pub llm: Arc<dyn ModelHandle>,
    pub retriever: Arc<dyn RetrieverHandle>,
}

impl Backends {
    pub fn scripted(script: Script) -> Self {
        let retriever = ScriptedRetriever::from_script(&script);
        Backends {
            llm: Arc::new(ScriptedModel::new(script)),
            retriever: Arc::new(retriever),
        }
    }

    /// Scripted when a script is configured, otherwise live endpoints. Without
    /// a retriever endpoint the bundled toy-corpus retriever is used.
    pub fn from_config(config: &RunConfig) -> Result<Self, HarnessError> {
        let b = &config.backend;
        if let Some(path) = &b.script {
            return Ok(Self::scripted(Script::load(path)?));
        }
        let base = b.llm_base_url.as_deref().ok_or_else(|| {
            HarnessError::Config("no script and no LLM base URL configured (set LLM_BASE_URL)".into())
        })?;
        let llm = OpenAiClient::new(base, b.llm_api_key.clone(), b.llm_model.as_deref().unwrap_or_default())?;
        let retriever: Arc<dyn RetrieverHandle> = match &b.retriever_base_url {
            Some(url) => Arc::new(HttpRetriever::new(url)?),
            None => {
                log::warn!("no retriever endpoint configured; using the bundled toy corpus");
                Arc::new(KeywordRetriever::toy())
            }
        };
        Ok(Backends {
            llm: Arc::new(llm),
            retriever,
        })
    }
}

/// Parses JSONL, reporting the 1-based line of the first bad record.
pub fn parse_dataset(text: &str) -> Result<Vec<Trajectory>, HarnessError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            parse_line(l).map_err(|e| HarnessError::Input {
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

pub fn load_dataset(path: &Path) -> Result<Vec<Trajectory>, HarnessError> {
    let text = std::fs::read_to_string(path).map_err(|e| HarnessError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    parse_dataset(&text)
}

/// Failure while running a strategy on one trajectory.
#[derive(Debug, thiserror::Error)]
pub enum InstanceError {
    #[error(transparent)]
    Diagnosis(#[from] DiagnosisError),
    #[error(transparent)]
    Repair(#[from] RepairError),
    #[error("oracle strategy needs an injection label: {0}")]
    MissingLabel(String),
}

impl InstanceError {
    /// The backend error when it is unrecoverable.
    pub fn hard_failure(&self) -> Option<&BackendError> {
        let b = match self {
            InstanceError::Diagnosis(DiagnosisError::Backend(b)) => b,
            InstanceError::Repair(RepairError::Backend(b)) => b,
            _ => return None,
        };
        b.is_hard_failure().then_some(b)
    }
}

/// Diagnosis and repair produced for one trajectory.
#[derive(Debug, Clone)]
pub struct InstanceRun {
    pub diagnosis: Option<Diagnosis>,
    /// `None` when the noise screen skipped the trajectory.
    pub outcome: Option<RepairOutcome>,
    pub flags: Vec<String>,
    pub ledger: CostLedger,
}

/// Runs the configured strategy on one trajectory, ignoring any gold answer.
pub fn repair_instance(
    t: &Trajectory,
    config: &RunConfig,
    backends: &Backends,
    templates: &PromptTemplates,
) -> Result<InstanceRun, InstanceError> {
    let ctx = Context {
        config,
        backends,
        templates,
    };
    let truth = match InjectionLabel::from_meta(t) {
        Some(Ok(l)) => Some(l),
        Some(Err(e)) if config.strategy == Strategy::Oracle => return Err(InstanceError::MissingLabel(e)),
        None if config.strategy == Strategy::Oracle => {
            return Err(InstanceError::MissingLabel(format!("trajectory `{}` has none", t.id)))
        }
        _ => None,
    };
    let mut meter = Meter::new();
    let mut diagnosis = None;
    let mut flags = Vec::new();
    let outcome = ctx.run_strategy(&mut meter, t, truth.as_ref(), &mut diagnosis, &mut flags)?;
    Ok(InstanceRun {
        diagnosis,
        outcome,
        flags,
        ledger: meter.ledger(),
    })
}

struct Context<'a> {
    config: &'a RunConfig,
    backends: &'a Backends,
    templates: &'a PromptTemplates,
}

impl Context<'_> {
    fn diagnoser(&self) -> Diagnoser<'_> {
        Diagnoser::new(
            self.backends.llm.as_ref(),
            self.templates,
            DiagnosisConfig {
                coverage_mode: self.config.coverage_mode,
                model: self.config.backend.llm_model.clone().unwrap_or_default(),
                ..DiagnosisConfig::default()
            },
        )
    }

    fn repairer(&self) -> Repairer<'_> {
        let mut rc = self.config.repair.clone();
        rc.model = self.config.backend.llm_model.clone().unwrap_or_default();
        Repairer::new(self.backends.llm.as_ref(), self.backends.retriever.as_ref(), self.templates, rc)
    }

    /// `Ok(None)` means the instance was screened out as dataset noise.
    fn run_strategy(
        &self,
        meter: &mut Meter,
        t: &Trajectory,
        truth: Option<&InjectionLabel>,
        diagnosis: &mut Option<Diagnosis>,
        flags: &mut Vec<String>,
    ) -> Result<Option<RepairOutcome>, InstanceError> {
        let strategy = self.config.strategy;
        let repairer = self.repairer();
        if strategy.diagnoses() {
            let dg = self.diagnoser();
            if self.config.screen_noise && dg.is_dataset_noise(meter, t, flags)? {
                return Ok(None);
            }
            let d = dg.diagnose_metered(meter, t)?;
            *diagnosis = Some(d.clone());
            let out = match strategy {
                Strategy::DrRag => repairer.apply(meter, t, select_operator(d.error_type), d.k_dagger)?,
                Strategy::DrRagNoTaxonomy => repairer.ablation(meter, t, &d, AblationMode::NoTaxonomy)?,
                _ => repairer.ablation(meter, t, &d, AblationMode::NoLocalization)?,
            };
            return Ok(Some(out));
        }
        let out = match strategy {
            Strategy::Rerun => repairer.rerun(meter, t)?,
            Strategy::Stepwise => repairer.stepwise_retry(meter, t)?,
            _ => {
                let label = truth.ok_or_else(|| InstanceError::MissingLabel(t.id.clone()))?;
                let d = oracle_diagnose(t, label)?;
                *diagnosis = Some(d.clone());
                repairer.apply(meter, t, select_operator(d.error_type), d.k_dagger)?
            }
        };
        Ok(Some(out))
    }

    fn process(&self, index: usize, t: &Trajectory) -> Result<InstanceRecord, BackendError> {
        let gold = t.gold_answer.as_deref().unwrap_or_default();
        let before = MetricTriple::score(&t.predicted_answer, gold);
        let truth = InjectionLabel::from_meta(t).and_then(Result::ok);
        let mut record = InstanceRecord {
            index,
            id: t.id.clone(),
            status: InstanceStatus::Passed,
            before,
            after: before,
            diagnosis: None,
            truth: truth.clone(),
            outcome: None,
            ledger: Default::default(),
            error: None,
            trajectory: Some(t.clone()),
        };
        if before.em == 1 {
            return Ok(record);
        }
        let start = Instant::now();
        let mut meter = Meter::new();
        let mut flags = Vec::new();
        let result = self.run_strategy(&mut meter, t, truth.as_ref(), &mut record.diagnosis, &mut flags);
        record.ledger = meter.ledger();
        record.ledger.wall_time_ms = start.elapsed().as_millis() as u64;
        match result {
            Ok(Some(outcome)) => {
                record.status = InstanceStatus::Repaired;
                record.after = MetricTriple::score(&outcome.new_predicted_answer, gold);
                let mut summary = OutcomeSummary::from(&outcome);
                summary.flags.extend(flags);
                record.outcome = Some(summary);
                record.trajectory = Some(outcome.repaired);
            }
            Ok(None) => record.status = InstanceStatus::SkippedNoise,
            Err(e) => {
                if let Some(hard) = e.hard_failure() {
                    return Err(hard.clone());
                }
                log::warn!("instance {} ({}) failed: {e}", index, t.id);
                record.status = InstanceStatus::Errored;
                record.error = Some(e.to_string());
            }
        }
        Ok(record)
    }
}

/// Runs the configured strategy over every EM=0 instance.
pub fn run_pipeline(
    dataset: &[Trajectory],
    config: &RunConfig,
    backends: &Backends,
    templates: &PromptTemplates,
) -> Result<EvalReport, HarnessError> {
    config.validate()?;
    for (i, t) in dataset.iter().enumerate() {
        if t.gold_answer.is_none() {
            return Err(HarnessError::Input {
                line: i + 1,
                message: format!("trajectory `{}` has no gold_answer; evaluation needs one", t.id),
            });
        }
        if config.strategy == Strategy::Oracle {
            match InjectionLabel::from_meta(t) {
                Some(Ok(_)) => {}
                Some(Err(e)) => return Err(HarnessError::Input { line: i + 1, message: e }),
                None => {
                    let gold = t.gold_answer.as_deref().unwrap_or_default();
                    if MetricTriple::score(&t.predicted_answer, gold).em == 0 {
                        return Err(HarnessError::Input {
                            line: i + 1,
                            message: format!(
                                "oracle strategy needs an injection label on failed trajectory `{}`",
                                t.id
                            ),
                        });
                    }
                }
            }
        }
    }
    let ctx = Context {
        config,
        backends,
        templates,
    };
    let abort = AtomicBool::new(false);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.concurrency)
        .build()
        .map_err(|e| HarnessError::Config(e.to_string()))?;
    let results: Vec<Option<Result<InstanceRecord, BackendError>>> = pool.install(|| {
        dataset
            .par_iter()
            .enumerate()
            .map(|(i, t)| {
                if abort.load(Ordering::SeqCst) {
                    return None;
                }
                let r = ctx.process(i, t);
                if r.is_err() {
                    abort.store(true, Ordering::SeqCst);
                }
                Some(r)
            })
            .collect()
    });
    let mut records = Vec::with_capacity(results.len());
    let mut hard = None;
    for r in results.into_iter().flatten() {
        match r {
            Ok(rec) => records.push(rec),
            Err(e) => {
                hard.get_or_insert(e);
            }
        }
    }
    let report = EvalReport::build(config.strategy.name(), config.summary(), records)?;
    match hard {
        Some(error) => Err(HarnessError::Aborted {
            error,
            partial: Box::new(report),
        }),
        None => Ok(report),
    }
}
