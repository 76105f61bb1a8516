use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::model::{ModelHandle, ModelReply, ModelRequest, Usage};
use super::retriever::{normalize_results, KeywordRetriever, RetrievalReply, RetrievalRequest, RetrieverHandle};
use super::BackendError;
use crate::metrics::normalize_answer;
use crate::trajectory::{approx_tokens, Document};

/// One canned model reply. A bare JSON string is accepted as shorthand.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "CannedRepr")]
pub struct CannedReply {
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub usage: Option<Usage>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum CannedRepr {
    Text(String),
    Full {
        text: String,
        #[serde(default)]
        usage: Option<Usage>,
    },
}

impl From<CannedRepr> for CannedReply {
    fn from(r: CannedRepr) -> Self {
        match r {
            CannedRepr::Text(text) => CannedReply { text, usage: None },
            CannedRepr::Full { text, usage } => CannedReply { text, usage },
        }
    }
}

impl CannedReply {
    pub fn new(text: impl Into<String>, usage: Usage) -> Self {
        CannedReply {
            text: text.into(),
            usage: Some(usage),
        }
    }

    pub fn text(text: impl Into<String>) -> Self {
        CannedReply {
            text: text.into(),
            usage: None,
        }
    }
}

/// Canned replies keyed by request fingerprint.
///
/// Keys ending in `*` match any fingerprint with that prefix; exact keys win,
/// then the longest prefix. Each key owns a reply queue consumed in order; the
/// last reply repeats once the queue is exhausted.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Script {
    #[serde(default)]
    pub model: BTreeMap<String, Vec<CannedReply>>,
    /// Canned result sets keyed by normalized query.
    #[serde(default)]
    pub retrieval: BTreeMap<String, Vec<Document>>,
    /// Unmatched queries go to the bundled toy-corpus retriever instead of failing.
    #[serde(default)]
    pub toy_fallback: bool,
}

impl Script {
    pub fn load(path: &Path) -> Result<Self, BackendError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| BackendError::Config(format!("reading script {}: {e}", path.display())))?;
        let de = &mut serde_json::Deserializer::from_str(&text);
        serde_path_to_error::deserialize(de).map_err(|e| BackendError::Parse {
            path: e.path().to_string(),
            message: e.into_inner().to_string(),
        })
    }

    pub fn push(&mut self, fingerprint: impl Into<String>, reply: CannedReply) -> &mut Self {
        self.model.entry(fingerprint.into()).or_default().push(reply);
        self
    }

    pub fn push_text(&mut self, fingerprint: impl Into<String>, text: impl Into<String>) -> &mut Self {
        self.push(fingerprint, CannedReply::text(text))
    }

    pub fn add_retrieval(&mut self, query: &str, docs: Vec<Document>) -> &mut Self {
        self.retrieval.insert(normalize_answer(query), docs);
        self
    }

    pub fn extend(&mut self, other: Script) {
        for (k, v) in other.model {
            self.model.entry(k).or_default().extend(v);
        }
        self.retrieval.extend(other.retrieval);
        self.toy_fallback |= other.toy_fallback;
    }

    fn lookup(&self, fingerprint: &str) -> Option<(&str, &[CannedReply])> {
        if let Some((k, v)) = self.model.get_key_value(fingerprint) {
            return Some((k, v));
        }
        self.model
            .iter()
            .filter(|(k, _)| k.ends_with('*') && fingerprint.starts_with(&k[..k.len() - 1]))
            .max_by_key(|(k, _)| k.len())
            .map(|(k, v)| (k.as_str(), v.as_slice()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CapturedRequest {
    pub fingerprint: String,
    pub prompt: String,
    pub reply: String,
}

#[derive(Default)]
struct ScriptState {
    cursors: HashMap<String, usize>,
    log: Vec<CapturedRequest>,
}

/// Deterministic model backend replaying a [`Script`].
pub struct ScriptedModel {
    script: Script,
    state: Mutex<ScriptState>,
}

impl ScriptedModel {
    pub fn new(script: Script) -> Self {
        ScriptedModel {
            script,
            state: Mutex::new(ScriptState::default()),
        }
    }

    pub fn script(&self) -> &Script {
        &self.script
    }

    /// Every request served so far, in arrival order.
    pub fn captured(&self) -> Vec<CapturedRequest> {
        self.state.lock().unwrap().log.clone()
    }

    /// Rewinds all cursors and clears the capture log.
    pub fn reset(&self) {
        *self.state.lock().unwrap() = ScriptState::default();
    }
}

impl ModelHandle for ScriptedModel {
    fn complete(&self, req: &ModelRequest) -> Result<ModelReply, BackendError> {
        let fingerprint = req.fingerprint();
        let (key, queue) = self
            .script
            .lookup(&fingerprint)
            .filter(|(_, q)| !q.is_empty())
            .ok_or_else(|| BackendError::ScriptMiss {
                fingerprint: fingerprint.clone(),
            })?;
        let prompt = req.prompt_text();
        let mut state = self.state.lock().unwrap();
        let cursor = state.cursors.entry(key.to_string()).or_default();
        let canned = &queue[(*cursor).min(queue.len() - 1)];
        *cursor += 1;
        let usage = canned
            .usage
            .unwrap_or_else(|| Usage::new(approx_tokens(&prompt), approx_tokens(&canned.text)));
        state.log.push(CapturedRequest {
            fingerprint,
            prompt,
            reply: canned.text.clone(),
        });
        Ok(ModelReply {
            text: canned.text.clone(),
            usage,
            refusal: false,
        })
    }
}

type ModelFn = dyn Fn(&ModelRequest) -> Result<ModelReply, BackendError> + Send + Sync;

/// Model handle backed by a closure; handy for adversarial or computed replies.
pub struct FnModel {
    f: Box<ModelFn>,
}

impl FnModel {
    pub fn new(f: impl Fn(&ModelRequest) -> Result<ModelReply, BackendError> + Send + Sync + 'static) -> Self {
        FnModel { f: Box::new(f) }
    }

    /// Replies with the closure's text; usage is the whitespace-token approximation.
    pub fn text(f: impl Fn(&ModelRequest) -> String + Send + Sync + 'static) -> Self {
        Self::new(move |req| {
            let text = f(req);
            Ok(ModelReply {
                usage: Usage::new(approx_tokens(&req.prompt_text()), approx_tokens(&text)),
                text,
                refusal: false,
            })
        })
    }
}

impl ModelHandle for FnModel {
    fn complete(&self, req: &ModelRequest) -> Result<ModelReply, BackendError> {
        (self.f)(req)
    }
}

/// Retriever serving canned result sets, optionally falling back to the toy corpus.
pub struct ScriptedRetriever {
    canned: BTreeMap<String, Vec<Document>>,
    fallback: Option<KeywordRetriever>,
}

impl ScriptedRetriever {
    pub fn new(canned: BTreeMap<String, Vec<Document>>, fallback: Option<KeywordRetriever>) -> Self {
        let canned = canned
            .into_iter()
            .map(|(k, v)| (normalize_answer(&k), v))
            .collect();
        ScriptedRetriever { canned, fallback }
    }

    pub fn from_script(script: &Script) -> Self {
        Self::new(
            script.retrieval.clone(),
            script.toy_fallback.then(KeywordRetriever::toy),
        )
    }
}

impl RetrieverHandle for ScriptedRetriever {
    fn retrieve(&self, req: &RetrievalRequest) -> Result<RetrievalReply, BackendError> {
        if let Some(docs) = self.canned.get(&normalize_answer(&req.query)) {
            return Ok(RetrievalReply {
                results: normalize_results(docs.clone(), req.top_k),
            });
        }
        match &self.fallback {
            Some(r) => r.retrieve(req),
            None => Err(BackendError::ScriptMiss {
                fingerprint: format!("retrieve:{}", req.query),
            }),
        }
    }
}
