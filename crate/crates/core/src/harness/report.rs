//! Evaluation report: per-instance records, aggregates, breakdowns and files.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::diagnosis::{Diagnosis, ErrorType, InjectionLabel};
use crate::metrics::{repair_stats, MetricTriple, MetricsError, RepairStats};
use crate::repair::{RepairMethod, RepairOutcome};
use crate::trajectory::{to_line, CostLedger, Trajectory};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InstanceStatus {
    /// EM = 1 already; left untouched.
    Passed,
    /// A repair strategy ran to completion.
    Repaired,
    /// The strategy failed for this instance; counted as not corrected.
    Errored,
    /// Skipped by the dataset-noise screen.
    SkippedNoise,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeSummary {
    pub method: RepairMethod,
    pub prefix_len: usize,
    pub retrieval_calls: u64,
    pub new_predicted_answer: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flags: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub retrieval_top_ks: Vec<usize>,
}

impl From<&RepairOutcome> for OutcomeSummary {
    fn from(o: &RepairOutcome) -> Self {
        OutcomeSummary {
            method: o.method,
            prefix_len: o.prefix_len,
            retrieval_calls: o.retrieval_calls,
            new_predicted_answer: o.new_predicted_answer.clone(),
            flags: o.flags.clone(),
            retrieval_top_ks: o.retrieval_top_ks.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceRecord {
    pub index: usize,
    pub id: String,
    pub status: InstanceStatus,
    pub before: MetricTriple,
    pub after: MetricTriple,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diagnosis: Option<Diagnosis>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth: Option<InjectionLabel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outcome: Option<OutcomeSummary>,
    pub ledger: CostLedger,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// Trajectory after repair (the original when untouched).
    #[serde(skip)]
    pub trajectory: Option<Trajectory>,
}

impl InstanceRecord {
    pub fn attempted(&self) -> bool {
        self.before.em == 0
    }

    pub fn corrected(&self) -> bool {
        self.before.em == 0 && self.after.em == 1
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Aggregates {
    pub stats: RepairStats,
    pub errored: usize,
    pub skipped_noise: usize,
    pub total_tokens: u64,
    pub total_retrieval_calls: u64,
    /// Means over initially failed instances.
    pub mean_tokens: f64,
    pub mean_diagnosis_tokens: f64,
    pub mean_repair_tokens: f64,
    pub mean_retrieval_calls: f64,
    pub mean_wall_time_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerTypeRow {
    pub coverage: String,
    pub error_type: String,
    pub instances: usize,
    pub corrected: usize,
    pub repair_rate: f64,
}

pub const CONFUSION_COLUMNS: [&str; 5] = [
    "full_format",
    "full_reasoning",
    "partial_format",
    "partial_retriever",
    "partial_search",
];

pub const CONFUSION_ROWS: [&str; 5] = ["format", "reasoning", "retriever", "search", "unlabeled"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionRow {
    pub truth: String,
    pub counts: Vec<usize>,
    pub total: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub columns: Vec<String>,
    pub rows: Vec<ConfusionRow>,
    pub diagnosed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub strategy: String,
    pub config: serde_json::Value,
    pub records: Vec<InstanceRecord>,
    pub aggregates: Aggregates,
    pub per_type: Vec<PerTypeRow>,
    pub confusion: ConfusionMatrix,
}

fn mean(xs: impl Iterator<Item = f64>, n: usize) -> f64 {
    if n == 0 {
        0.0
    } else {
        xs.sum::<f64>() / n as f64
    }
}

fn type_key(r: &InstanceRecord) -> (String, String) {
    if let Some(t) = &r.truth {
        (t.coverage.as_str().into(), t.error_type.short().into())
    } else if let Some(d) = &r.diagnosis {
        (d.coverage.value.as_str().into(), d.error_type.short().into())
    } else {
        ("unknown".into(), "unknown".into())
    }
}

fn confusion_column(d: &Diagnosis) -> usize {
    let name = format!("{}_{}", d.coverage.value.as_str(), d.error_type.short());
    CONFUSION_COLUMNS
        .iter()
        .position(|c| *c == name)
        .expect("diagnoses are gated, so every pair has a column")
}

impl EvalReport {
    /// Derives aggregates and breakdowns from the records.
    pub fn build(
        strategy: &str,
        config: serde_json::Value,
        mut records: Vec<InstanceRecord>,
    ) -> Result<EvalReport, MetricsError> {
        records.sort_by_key(|r| r.index);
        let before: Vec<MetricTriple> = records.iter().map(|r| r.before).collect();
        let after: Vec<MetricTriple> = records.iter().map(|r| r.after).collect();
        let stats = repair_stats(&before, &after)?;
        let failed: Vec<&InstanceRecord> = records.iter().filter(|r| r.attempted()).collect();
        let n = failed.len();
        let aggregates = Aggregates {
            stats,
            errored: records.iter().filter(|r| r.status == InstanceStatus::Errored).count(),
            skipped_noise: records
                .iter()
                .filter(|r| r.status == InstanceStatus::SkippedNoise)
                .count(),
            total_tokens: records.iter().map(|r| r.ledger.total_tokens()).sum(),
            total_retrieval_calls: records.iter().map(|r| r.ledger.retrieval_calls).sum(),
            mean_tokens: mean(failed.iter().map(|r| r.ledger.total_tokens() as f64), n),
            mean_diagnosis_tokens: mean(failed.iter().map(|r| r.ledger.diagnosis_tokens as f64), n),
            mean_repair_tokens: mean(failed.iter().map(|r| r.ledger.repair_tokens as f64), n),
            mean_retrieval_calls: mean(failed.iter().map(|r| r.ledger.retrieval_calls as f64), n),
            mean_wall_time_ms: mean(failed.iter().map(|r| r.ledger.wall_time_ms as f64), n),
        };

        let mut groups: BTreeMap<(String, String), (usize, usize)> = BTreeMap::new();
        for r in &failed {
            let e = groups.entry(type_key(r)).or_default();
            e.0 += 1;
            e.1 += usize::from(r.corrected());
        }
        let per_type = groups
            .into_iter()
            .map(|((coverage, error_type), (instances, corrected))| PerTypeRow {
                coverage,
                error_type,
                instances,
                corrected,
                repair_rate: corrected as f64 / instances as f64,
            })
            .collect();

        let mut counts = vec![vec![0usize; CONFUSION_COLUMNS.len()]; CONFUSION_ROWS.len()];
        let mut diagnosed = 0;
        for r in &records {
            if let Some(d) = &r.diagnosis {
                let row = match &r.truth {
                    Some(t) => ErrorType::ALL.iter().position(|e| *e == t.error_type).unwrap(),
                    None => CONFUSION_ROWS.len() - 1,
                };
                counts[row][confusion_column(d)] += 1;
                diagnosed += 1;
            }
        }
        let confusion = ConfusionMatrix {
            columns: CONFUSION_COLUMNS.iter().map(|s| s.to_string()).collect(),
            rows: CONFUSION_ROWS
                .iter()
                .zip(counts)
                .map(|(truth, counts)| ConfusionRow {
                    truth: truth.to_string(),
                    total: counts.iter().sum(),
                    counts,
                })
                .collect(),
            diagnosed,
        };
        Ok(EvalReport {
            strategy: strategy.to_string(),
            config,
            records,
            aggregates,
            per_type,
            confusion,
        })
    }

    /// The report as JSON with every wall-clock field zeroed.
    pub fn deterministic_view(&self) -> serde_json::Value {
        let mut r = self.clone();
        r.aggregates.mean_wall_time_ms = 0.0;
        for rec in &mut r.records {
            rec.ledger.wall_time_ms = 0;
        }
        r.config["concurrency"] = serde_json::Value::Null;
        serde_json::to_value(&r).expect("report serializes")
    }

    pub fn summary_markdown(&self) -> String {
        let mut out = String::from("| Strategy | Tokens | Repair Rate | ΔEM | ΔF1 | ΔR-L |\n");
        out.push_str("|---|---|---|---|---|---|\n");
        let a = &self.aggregates;
        if a.stats.total > 0 {
            let _ = writeln!(
                out,
                "| {} | {:.1} | {:.1} | {:.1} | {:.1} | {:.1} |",
                self.strategy,
                a.mean_tokens,
                a.stats.repair_rate * 100.0,
                a.stats.delta_em,
                a.stats.delta_f1,
                a.stats.delta_rouge_l
            );
        }
        out
    }

    pub fn per_type_csv(&self) -> String {
        let mut out = String::from("coverage,error_type,instances,corrected,repair_rate\n");
        for r in &self.per_type {
            let _ = writeln!(
                out,
                "{},{},{},{},{:.1}",
                r.coverage,
                r.error_type,
                r.instances,
                r.corrected,
                r.repair_rate * 100.0
            );
        }
        out
    }

    pub fn confusion_csv(&self) -> String {
        let mut out = format!("truth,{},total\n", self.confusion.columns.join(","));
        for r in &self.confusion.rows {
            let cells: Vec<String> = r.counts.iter().map(|c| c.to_string()).collect();
            let _ = writeln!(out, "{},{},{}", r.truth, cells.join(","), r.total);
        }
        out
    }

    pub fn repaired_jsonl(&self) -> String {
        self.records
            .iter()
            .filter_map(|r| r.trajectory.as_ref())
            .map(|t| to_line(t) + "\n")
            .collect()
    }

    /// Sidecar outcome records: `{id, operator, prefix_len, diagnosis, ledger}`.
    pub fn outcomes_jsonl(&self) -> String {
        self.records
            .iter()
            .filter(|r| r.attempted())
            .map(|r| {
                serde_json::json!({
                    "id": r.id,
                    "operator": r.outcome.as_ref().map(|o| o.method),
                    "prefix_len": r.outcome.as_ref().map(|o| o.prefix_len),
                    "diagnosis": r.diagnosis,
                    "ledger": r.ledger,
                    "status": r.status,
                })
                .to_string()
                    + "\n"
            })
            .collect()
    }
}

/// Writes report.json, summary.md, per_type.csv, confusion.csv, repaired.jsonl and outcomes.jsonl.
pub fn emit_report(report: &EvalReport, out_dir: &Path) -> Result<(), HarnessError> {
    let io = |path: &Path, e: std::io::Error| HarnessError::Io {
        path: path.display().to_string(),
        source: e,
    };
    std::fs::create_dir_all(out_dir).map_err(|e| io(out_dir, e))?;
    let files = [
        (
            "report.json",
            serde_json::to_string_pretty(report).expect("report serializes") + "\n",
        ),
        ("summary.md", report.summary_markdown()),
        ("per_type.csv", report.per_type_csv()),
        ("confusion.csv", report.confusion_csv()),
        ("repaired.jsonl", report.repaired_jsonl()),
        ("outcomes.jsonl", report.outcomes_jsonl()),
    ];
    for (name, body) in files {
        let path = out_dir.join(name);
        std::fs::write(&path, body).map_err(|e| io(&path, e))?;
    }
    Ok(())
}
