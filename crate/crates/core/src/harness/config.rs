use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::diagnosis::CoverageMode;
use crate::repair::RepairConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Strategy {
    #[serde(rename = "drrag")]
    DrRag,
    #[serde(rename = "rerun")]
    Rerun,
    #[serde(rename = "stepwise")]
    Stepwise,
    #[serde(rename = "no-taxonomy")]
    DrRagNoTaxonomy,
    #[serde(rename = "no-localization")]
    DrRagNoLocalization,
    #[serde(rename = "oracle")]
    Oracle,
}

impl Strategy {
    pub const ALL: [Strategy; 6] = [
        Strategy::DrRag,
        Strategy::Rerun,
        Strategy::Stepwise,
        Strategy::DrRagNoTaxonomy,
        Strategy::DrRagNoLocalization,
        Strategy::Oracle,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::DrRag => "drrag",
            Strategy::Rerun => "rerun",
            Strategy::Stepwise => "stepwise",
            Strategy::DrRagNoTaxonomy => "no-taxonomy",
            Strategy::DrRagNoLocalization => "no-localization",
            Strategy::Oracle => "oracle",
        }
    }

    /// Whether the strategy runs the diagnosis module.
    pub fn diagnoses(self) -> bool {
        matches!(
            self,
            Strategy::DrRag | Strategy::DrRagNoTaxonomy | Strategy::DrRagNoLocalization
        )
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim().to_ascii_lowercase().replace('_', "-");
        Strategy::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| {
                let names: Vec<_> = Strategy::ALL.iter().map(|s| s.name()).collect();
                format!("unknown strategy `{s}` (expected one of {})", names.join(", "))
            })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BackendConfig {
    /// Scripted mode: replay this script instead of calling live endpoints.
    pub script: Option<PathBuf>,
    pub llm_base_url: Option<String>,
    #[serde(skip)]
    pub llm_api_key: Option<String>,
    pub llm_model: Option<String>,
    pub retriever_base_url: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub strategy: Strategy,
    pub coverage_mode: CoverageMode,
    pub concurrency: usize,
    pub screen_noise: bool,
    pub repair: RepairConfig,
    pub templates: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub backend: BackendConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            strategy: Strategy::DrRag,
            coverage_mode: CoverageMode::Judge,
            concurrency: 1,
            screen_noise: false,
            repair: RepairConfig::default(),
            templates: None,
            output: None,
            backend: BackendConfig::default(),
        }
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    #[serde(default)]
    run: RunSection,
    #[serde(default)]
    retrieval: RetrievalSection,
    #[serde(default)]
    agent: AgentSection,
    #[serde(default)]
    paths: PathsSection,
    #[serde(default)]
    backend: BackendSection,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RunSection {
    strategy: Option<String>,
    coverage_mode: Option<String>,
    concurrency: Option<usize>,
    screen_noise: Option<bool>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RetrievalSection {
    base_top_k: Option<usize>,
    top_k_multiplier: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct AgentSection {
    max_steps: Option<usize>,
    max_tokens: Option<u32>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct PathsSection {
    templates: Option<PathBuf>,
    output: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct BackendSection {
    script: Option<PathBuf>,
    llm_base_url: Option<String>,
    llm_model: Option<String>,
    retriever_base_url: Option<String>,
}

fn resolve(base: &Path, p: PathBuf) -> PathBuf {
    if p.is_absolute() {
        p
    } else {
        base.join(p)
    }
}

impl RunConfig {
    /// Applies `LLM_BASE_URL`, `LLM_API_KEY`, `LLM_MODEL` and `RETRIEVER_BASE_URL`.
    pub fn apply_env(&mut self, get: impl Fn(&str) -> Option<String>) {
        if let Some(v) = get("LLM_BASE_URL") {
            self.backend.llm_base_url = Some(v);
        }
        if let Some(v) = get("LLM_API_KEY") {
            self.backend.llm_api_key = Some(v);
        }
        if let Some(v) = get("LLM_MODEL") {
            self.backend.llm_model = Some(v);
        }
        if let Some(v) = get("RETRIEVER_BASE_URL") {
            self.backend.retriever_base_url = Some(v);
        }
    }

    /// Overlays a TOML config file; relative paths resolve against its directory.
    pub fn apply_file(&mut self, path: &Path) -> Result<(), HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        self.apply_toml(&text, path.parent().unwrap_or(Path::new(".")))
            .map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))
    }

    pub fn apply_toml(&mut self, text: &str, base: &Path) -> Result<(), String> {
        let file: FileConfig = toml::from_str(text).map_err(|e| e.to_string())?;
        if let Some(s) = file.run.strategy {
            self.strategy = s.parse()?;
        }
        if let Some(s) = file.run.coverage_mode {
            self.coverage_mode = s.parse()?;
        }
        if let Some(n) = file.run.concurrency {
            self.concurrency = n;
        }
        if let Some(b) = file.run.screen_noise {
            self.screen_noise = b;
        }
        if let Some(n) = file.retrieval.base_top_k {
            self.repair.base_top_k = n;
        }
        if let Some(n) = file.retrieval.top_k_multiplier {
            self.repair.top_k_multiplier = n;
        }
        if let Some(n) = file.agent.max_steps {
            self.repair.max_steps = n;
        }
        if let Some(n) = file.agent.max_tokens {
            self.repair.max_tokens = n;
        }
        if let Some(p) = file.paths.templates {
            self.templates = Some(resolve(base, p));
        }
        if let Some(p) = file.paths.output {
            self.output = Some(resolve(base, p));
        }
        if let Some(p) = file.backend.script {
            self.backend.script = Some(resolve(base, p));
        }
        if let Some(v) = file.backend.llm_base_url {
            self.backend.llm_base_url = Some(v);
        }
        if let Some(v) = file.backend.llm_model {
            self.backend.llm_model = Some(v);
        }
        if let Some(v) = file.backend.retriever_base_url {
            self.backend.retriever_base_url = Some(v);
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let counts = [
            ("concurrency", self.concurrency),
            ("base_top_k", self.repair.base_top_k),
            ("top_k_multiplier", self.repair.top_k_multiplier),
            ("max_steps", self.repair.max_steps),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(HarnessError::Config(format!("{name} must be at least 1")));
            }
        }
        Ok(())
    }

    /// Serializable view of the run settings, embedded in reports.
    pub fn summary(&self) -> serde_json::Value {
        serde_json::json!({
            "strategy": self.strategy,
            "coverage_mode": self.coverage_mode,
            "concurrency": self.concurrency,
            "screen_noise": self.screen_noise,
            "base_top_k": self.repair.base_top_k,
            "top_k_multiplier": self.repair.top_k_multiplier,
            "max_steps": self.repair.max_steps,
            "scripted": self.backend.script.is_some(),
        })
    }
}
