use std::collections::{HashMap, HashSet};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{excerpt, map_reqwest, BackendError, RetryPolicy};
use crate::trajectory::{Document, TrajectoryError};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetrievalRequest {
    pub query: String,
    pub top_k: usize,
}

impl RetrievalRequest {
    pub fn new(query: impl Into<String>, top_k: usize) -> Self {
        RetrievalRequest {
            query: query.into(),
            top_k,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RetrievalReply {
    pub results: Vec<Document>,
}

pub trait RetrieverHandle: Send + Sync {
    fn retrieve(&self, req: &RetrievalRequest) -> Result<RetrievalReply, BackendError>;
}

/// Sorts by descending score (stable), drops repeated doc_ids and truncates to `top_k`.
pub fn normalize_results(mut docs: Vec<Document>, top_k: usize) -> Vec<Document> {
    docs.sort_by(|a, b| b.score.total_cmp(&a.score));
    let mut seen = HashSet::new();
    docs.retain(|d| seen.insert(d.doc_id.clone()));
    docs.truncate(top_k);
    docs
}

/// Client for the `POST {base}/search` JSON endpoint.
pub struct HttpRetriever {
    base_url: String,
    client: reqwest::blocking::Client,
    retry: RetryPolicy,
}

impl HttpRetriever {
    pub fn new(base_url: &str) -> Result<Self, BackendError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(30))
            .build()
            .map_err(|e| BackendError::Config(e.to_string()))?;
        Ok(HttpRetriever {
            base_url: base_url.trim_end_matches('/').to_string(),
            client,
            retry: RetryPolicy::default(),
        })
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    /// Reads `RETRIEVER_BASE_URL`.
    pub fn from_env() -> Result<Self, BackendError> {
        let base = std::env::var("RETRIEVER_BASE_URL")
            .map_err(|_| BackendError::Config("RETRIEVER_BASE_URL is not set".into()))?;
        Self::new(&base)
    }

    pub fn parse_reply(body: &str) -> Result<RetrievalReply, BackendError> {
        let de = &mut serde_json::Deserializer::from_str(body);
        serde_path_to_error::deserialize(de).map_err(|e| BackendError::Parse {
            path: e.path().to_string(),
            message: e.into_inner().to_string(),
        })
    }
}

impl RetrieverHandle for HttpRetriever {
    fn retrieve(&self, req: &RetrievalRequest) -> Result<RetrievalReply, BackendError> {
        if req.top_k == 0 {
            return Ok(RetrievalReply::default());
        }
        let url = format!("{}/search", self.base_url);
        let body = json!({ "query": req.query, "top_k": req.top_k });
        let text = self.retry.run(|| {
            let resp = self
                .client
                .post(&url)
                .json(&body)
                .send()
                .map_err(map_reqwest)?;
            let status = resp.status().as_u16();
            let text = resp.text().map_err(map_reqwest)?;
            if status >= 400 {
                return Err(BackendError::Http {
                    status,
                    body: excerpt(&text),
                });
            }
            Ok(text)
        })?;
        let reply = Self::parse_reply(&text)?;
        Ok(RetrievalReply {
            results: normalize_results(reply.results, req.top_k),
        })
    }
}

const STOPWORDS: &[&str] = &[
    "a", "an", "and", "are", "as", "at", "be", "by", "for", "from", "in", "is", "it", "its", "of",
    "on", "or", "that", "the", "this", "to", "was", "which", "with", "what", "who", "where",
];

fn terms(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty() && !STOPWORDS.contains(w))
        .map(str::to_string)
        .collect()
}

/// IDF-weighted keyword-overlap retriever over an in-memory corpus.
#[derive(Debug, Clone)]
pub struct KeywordRetriever {
    docs: Vec<Document>,
    doc_terms: Vec<HashSet<String>>,
    idf: HashMap<String, f64>,
}

impl KeywordRetriever {
    pub fn new(docs: Vec<Document>) -> Self {
        let doc_terms: Vec<HashSet<String>> = docs
            .iter()
            .map(|d| terms(&format!("{} {}", d.title, d.text)).into_iter().collect())
            .collect();
        let mut df: HashMap<String, usize> = HashMap::new();
        for set in &doc_terms {
            for t in set {
                *df.entry(t.clone()).or_default() += 1;
            }
        }
        let n = docs.len() as f64;
        let idf = df
            .into_iter()
            .map(|(t, c)| (t, (n / c as f64).ln() + 1.0))
            .collect();
        KeywordRetriever {
            docs,
            doc_terms,
            idf,
        }
    }

    /// The bundled toy corpus.
    pub fn toy() -> Self {
        Self::new(toy_corpus())
    }

    pub fn docs(&self) -> &[Document] {
        &self.docs
    }

    pub fn search(&self, query: &str, top_k: usize) -> Vec<Document> {
        let q: HashSet<String> = terms(query).into_iter().collect();
        let scored: Vec<Document> = self
            .docs
            .iter()
            .zip(&self.doc_terms)
            .filter_map(|(d, dt)| {
                let score: f64 = q.iter().filter(|t| dt.contains(*t)).map(|t| self.idf[t]).sum();
                (score > 0.0).then(|| Document {
                    score: (score * 1e6).round() / 1e6,
                    ..d.clone()
                })
            })
            .collect();
        normalize_results(scored, top_k)
    }
}

impl RetrieverHandle for KeywordRetriever {
    fn retrieve(&self, req: &RetrievalRequest) -> Result<RetrievalReply, BackendError> {
        Ok(RetrievalReply {
            results: self.search(&req.query, req.top_k),
        })
    }
}

/// Parses a JSONL corpus of documents.
pub fn parse_corpus(text: &str) -> Result<Vec<Document>, TrajectoryError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l)
                .map_err(|e| TrajectoryError::Json(format!("corpus line {}: {e}", i + 1)))
        })
        .collect()
}

pub fn toy_corpus() -> Vec<Document> {
    parse_corpus(include_str!("../../data/toy_corpus.jsonl")).expect("bundled corpus is valid")
}
