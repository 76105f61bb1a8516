//! Action-level trajectory model.
//!
//! A trajectory is the ordered list of reason / search / information actions an
//! agent produced for one question, closed by a terminal answer action. Indices
//! are 1-based: the non-terminal actions occupy `1..=K` and the terminal answer
//! sits at `K + 1`.
//!
//! Besides the data types this module holds the structural operations the
//! repair operators are built from: prefix truncation, document aggregation
//! and query collection.

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

/// Meta key set when token counts were approximated at parse time.
pub const META_TOKENS_APPROXIMATED: &str = "tokens_approximated";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrajectoryError {
    #[error("schema violation at `{field}`: {reason}")]
    Schema { field: String, reason: String },
    #[error("invariant violated: {0}")]
    Invariant(String),
    #[error("index {index} out of range 1..={max}")]
    Range { index: usize, max: usize },
    #[error("malformed JSON: {0}")]
    Json(String),
}

impl TrajectoryError {
    fn schema(field: impl Into<String>, reason: impl Into<String>) -> Self {
        TrajectoryError::Schema {
            field: field.into(),
            reason: reason.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Document {
    pub doc_id: String,
    pub title: String,
    pub text: String,
    pub score: f64,
}

impl Document {
    pub fn new(
        doc_id: impl Into<String>,
        title: impl Into<String>,
        text: impl Into<String>,
        score: f64,
    ) -> Self {
        Document {
            doc_id: doc_id.into(),
            title: title.into(),
            text: text.into(),
            score,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActionKind {
    Reason,
    Search,
    Information,
    Answer,
}

impl ActionKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ActionKind::Reason => "reason",
            ActionKind::Search => "search",
            ActionKind::Information => "information",
            ActionKind::Answer => "answer",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    Reason(String),
    Search(String),
    Information(Vec<Document>),
    Answer(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Action {
    pub payload: Payload,
    pub tokens: u64,
}

impl Action {
    pub fn reason(text: impl Into<String>, tokens: u64) -> Self {
        Action {
            payload: Payload::Reason(text.into()),
            tokens,
        }
    }

    pub fn search(query: impl Into<String>, tokens: u64) -> Self {
        Action {
            payload: Payload::Search(query.into()),
            tokens,
        }
    }

    pub fn information(docs: Vec<Document>, tokens: u64) -> Self {
        Action {
            payload: Payload::Information(docs),
            tokens,
        }
    }

    pub fn answer(text: impl Into<String>, tokens: u64) -> Self {
        Action {
            payload: Payload::Answer(text.into()),
            tokens,
        }
    }

    pub fn kind(&self) -> ActionKind {
        match self.payload {
            Payload::Reason(_) => ActionKind::Reason,
            Payload::Search(_) => ActionKind::Search,
            Payload::Information(_) => ActionKind::Information,
            Payload::Answer(_) => ActionKind::Answer,
        }
    }

    /// Text payload of reason / answer actions, query of search actions.
    pub fn text(&self) -> Option<&str> {
        match &self.payload {
            Payload::Reason(t) | Payload::Search(t) | Payload::Answer(t) => Some(t),
            Payload::Information(_) => None,
        }
    }

    pub fn docs(&self) -> &[Document] {
        match &self.payload {
            Payload::Information(docs) => docs,
            _ => &[],
        }
    }
}

/// Whitespace-token approximation used when an agent did not record usage.
pub fn approx_tokens(text: &str) -> u64 {
    text.split_whitespace().count() as u64
}

fn approx_payload_tokens(payload: &Payload) -> u64 {
    match payload {
        Payload::Reason(t) | Payload::Search(t) | Payload::Answer(t) => approx_tokens(t),
        Payload::Information(docs) => docs
            .iter()
            .map(|d| approx_tokens(&d.title) + approx_tokens(&d.text))
            .sum(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub id: String,
    pub question: String,
    pub gold_answer: Option<String>,
    pub gold_evidence: Option<Vec<String>>,
    /// Non-terminal actions followed by the terminal answer (when non-empty).
    pub actions: Vec<Action>,
    pub predicted_answer: String,
    pub meta: Map<String, Value>,
}

impl Trajectory {
    /// Builds a trajectory whose terminal answer action is appended to `body`.
    pub fn from_parts(
        id: impl Into<String>,
        question: impl Into<String>,
        mut body: Vec<Action>,
        answer: Action,
    ) -> Self {
        let predicted_answer = answer.text().unwrap_or_default().to_string();
        body.push(answer);
        Trajectory {
            id: id.into(),
            question: question.into(),
            gold_answer: None,
            gold_evidence: None,
            actions: body,
            predicted_answer,
            meta: Map::new(),
        }
    }

    /// Number of non-terminal actions (K).
    pub fn k(&self) -> usize {
        match self.actions.last() {
            Some(a) if a.kind() == ActionKind::Answer => self.actions.len() - 1,
            _ => self.actions.len(),
        }
    }

    pub fn terminal_index(&self) -> usize {
        self.k() + 1
    }

    pub fn body(&self) -> &[Action] {
        &self.actions[..self.k()]
    }

    /// Action at a 1-based index.
    pub fn action(&self, index: usize) -> Option<&Action> {
        index.checked_sub(1).and_then(|i| self.actions.get(i))
    }

    /// Non-terminal actions paired with their 1-based index.
    pub fn indexed(&self) -> impl Iterator<Item = (usize, &Action)> {
        self.body().iter().enumerate().map(|(i, a)| (i + 1, a))
    }

    pub fn check_index(&self, k_dagger: usize) -> Result<(), TrajectoryError> {
        let max = self.terminal_index();
        if k_dagger == 0 || k_dagger > max {
            return Err(TrajectoryError::Range {
                index: k_dagger,
                max,
            });
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), TrajectoryError> {
        let n = self.actions.len();
        for (i, action) in self.actions.iter().enumerate() {
            let is_last = i + 1 == n;
            match &action.payload {
                Payload::Answer(text) => {
                    if !is_last {
                        return Err(TrajectoryError::Invariant(format!(
                            "answer action at index {} is not terminal",
                            i + 1
                        )));
                    }
                    if text != &self.predicted_answer {
                        return Err(TrajectoryError::Invariant(format!(
                            "terminal mismatch: answer action {:?} != predicted_answer {:?}",
                            text, self.predicted_answer
                        )));
                    }
                }
                _ if is_last => {
                    return Err(TrajectoryError::Invariant(format!(
                        "last action is {} but a non-empty trajectory must end with an answer",
                        action.kind().as_str()
                    )));
                }
                Payload::Search(q) => {
                    if q.trim().is_empty() {
                        return Err(TrajectoryError::Invariant(format!(
                            "empty search query at index {}",
                            i + 1
                        )));
                    }
                }
                Payload::Information(docs) => {
                    let mut seen = HashSet::new();
                    for d in docs {
                        if d.doc_id.is_empty() {
                            return Err(TrajectoryError::Invariant(format!(
                                "empty doc_id at index {}",
                                i + 1
                            )));
                        }
                        if !seen.insert(d.doc_id.as_str()) {
                            return Err(TrajectoryError::Invariant(format!(
                                "duplicate doc_id {:?} at index {}",
                                d.doc_id,
                                i + 1
                            )));
                        }
                        if !d.score.is_finite() {
                            return Err(TrajectoryError::Invariant(format!(
                                "non-finite score for {:?}",
                                d.doc_id
                            )));
                        }
                    }
                }
                Payload::Reason(_) => {}
            }
        }
        Ok(())
    }
}

/// Cost accounting for one diagnosis + repair.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostLedger {
    pub diagnosis_tokens: u64,
    pub repair_tokens: u64,
    pub retrieval_calls: u64,
    pub wall_time_ms: u64,
}

impl CostLedger {
    pub fn total_tokens(&self) -> u64 {
        self.diagnosis_tokens + self.repair_tokens
    }

    pub fn merge(&self, other: &CostLedger) -> CostLedger {
        CostLedger {
            diagnosis_tokens: self.diagnosis_tokens + other.diagnosis_tokens,
            repair_tokens: self.repair_tokens + other.repair_tokens,
            retrieval_calls: self.retrieval_calls + other.retrieval_calls,
            wall_time_ms: self.wall_time_ms + other.wall_time_ms,
        }
    }
}

impl std::ops::AddAssign for CostLedger {
    fn add_assign(&mut self, rhs: CostLedger) {
        *self = self.merge(&rhs);
    }
}

/// Ordered, doc_id-deduplicated document collection.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DocumentSet {
    docs: Vec<Document>,
    index: HashMap<String, usize>,
}

impl DocumentSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts a document; a duplicate doc_id keeps its first position and
    /// the higher score.
    pub fn insert(&mut self, doc: Document) {
        match self.index.get(&doc.doc_id) {
            Some(&i) => {
                if doc.score > self.docs[i].score {
                    self.docs[i] = doc;
                }
            }
            None => {
                self.index.insert(doc.doc_id.clone(), self.docs.len());
                self.docs.push(doc);
            }
        }
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn contains(&self, doc_id: &str) -> bool {
        self.index.contains_key(doc_id)
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Document> {
        self.docs.iter()
    }

    pub fn as_slice(&self) -> &[Document] {
        &self.docs
    }

    pub fn into_vec(self) -> Vec<Document> {
        self.docs
    }
}

impl FromIterator<Document> for DocumentSet {
    fn from_iter<I: IntoIterator<Item = Document>>(iter: I) -> Self {
        let mut set = DocumentSet::new();
        for d in iter {
            set.insert(d);
        }
        set
    }
}

impl Extend<Document> for DocumentSet {
    fn extend<I: IntoIterator<Item = Document>>(&mut self, iter: I) {
        for d in iter {
            self.insert(d);
        }
    }
}

/// Validated prefix `ρ(1) … ρ(k†−1)`.
pub fn prefix(t: &Trajectory, k_dagger: usize) -> Result<&[Action], TrajectoryError> {
    t.check_index(k_dagger)?;
    Ok(&t.actions[..k_dagger - 1])
}

/// Union of every document observed in the trajectory.
pub fn aggregate_documents(t: &Trajectory) -> DocumentSet {
    documents_of(&t.actions)
}

pub fn documents_of(actions: &[Action]) -> DocumentSet {
    actions
        .iter()
        .flat_map(|a| a.docs().iter().cloned())
        .collect()
}

/// Search queries issued strictly before `k_dagger`.
pub fn collect_queries(t: &Trajectory, k_dagger: usize) -> Result<Vec<String>, TrajectoryError> {
    let head = prefix(t, k_dagger)?;
    Ok(head
        .iter()
        .filter_map(|a| match &a.payload {
            Payload::Search(q) => Some(q.clone()),
            _ => None,
        })
        .collect())
}

// ---- JSONL schema ----

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawAction {
    kind: ActionKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    query: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    docs: Option<Vec<Document>>,
    #[serde(default)]
    tokens: Option<u64>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTrajectory {
    id: String,
    question: String,
    #[serde(default)]
    gold_answer: Option<String>,
    #[serde(default)]
    gold_evidence: Option<Vec<String>>,
    actions: Vec<RawAction>,
    predicted_answer: String,
    #[serde(default)]
    meta: Map<String, Value>,
}

fn payload_from_raw(i: usize, raw: RawAction) -> Result<Payload, TrajectoryError> {
    let field = |name: &str| format!("actions[{i}].{name}");
    let present = [
        ("text", raw.text.is_some()),
        ("query", raw.query.is_some()),
        ("docs", raw.docs.is_some()),
    ];
    let expected = match raw.kind {
        ActionKind::Reason | ActionKind::Answer => "text",
        ActionKind::Search => "query",
        ActionKind::Information => "docs",
    };
    if present.iter().any(|&(name, p)| name == expected && !p) {
        return Err(TrajectoryError::schema(
            field(expected),
            format!("required for kind {}", raw.kind.as_str()),
        ));
    }
    for (name, is_present) in present {
        if name != expected && is_present {
            return Err(TrajectoryError::schema(
                field(name),
                format!("not allowed for kind {}", raw.kind.as_str()),
            ));
        }
    }
    Ok(match raw.kind {
        ActionKind::Reason => Payload::Reason(raw.text.unwrap_or_default()),
        ActionKind::Answer => Payload::Answer(raw.text.unwrap_or_default()),
        ActionKind::Search => Payload::Search(raw.query.unwrap_or_default()),
        ActionKind::Information => Payload::Information(raw.docs.unwrap_or_default()),
    })
}

/// Parses one JSONL record into a validated trajectory.
pub fn parse_trajectory(record: &Value) -> Result<Trajectory, TrajectoryError> {
    let raw: RawTrajectory = serde_path_to_error::deserialize(record).map_err(|e| {
        let path = e.path().to_string();
        TrajectoryError::schema(path, e.into_inner().to_string())
    })?;
    let mut meta = raw.meta;
    let mut approximated = false;
    let mut actions = Vec::with_capacity(raw.actions.len());
    for (i, ra) in raw.actions.into_iter().enumerate() {
        let tokens = ra.tokens;
        let payload = payload_from_raw(i, ra)?;
        let tokens = tokens.unwrap_or_else(|| {
            approximated = true;
            approx_payload_tokens(&payload)
        });
        actions.push(Action { payload, tokens });
    }
    if approximated {
        meta.insert(META_TOKENS_APPROXIMATED.into(), Value::Bool(true));
    }
    let t = Trajectory {
        id: raw.id,
        question: raw.question,
        gold_answer: raw.gold_answer,
        gold_evidence: raw.gold_evidence,
        actions,
        predicted_answer: raw.predicted_answer,
        meta,
    };
    t.validate()?;
    Ok(t)
}

pub fn parse_line(line: &str) -> Result<Trajectory, TrajectoryError> {
    let value: Value =
        serde_json::from_str(line).map_err(|e| TrajectoryError::Json(e.to_string()))?;
    parse_trajectory(&value)
}

pub fn serialize_trajectory(t: &Trajectory) -> Value {
    let raw = RawTrajectory {
        id: t.id.clone(),
        question: t.question.clone(),
        gold_answer: t.gold_answer.clone(),
        gold_evidence: t.gold_evidence.clone(),
        actions: t
            .actions
            .iter()
            .map(|a| {
                let mut ra = RawAction {
                    kind: a.kind(),
                    text: None,
                    query: None,
                    docs: None,
                    tokens: Some(a.tokens),
                };
                match &a.payload {
                    Payload::Reason(s) | Payload::Answer(s) => ra.text = Some(s.clone()),
                    Payload::Search(q) => ra.query = Some(q.clone()),
                    Payload::Information(d) => ra.docs = Some(d.clone()),
                }
                ra
            })
            .collect(),
        predicted_answer: t.predicted_answer.clone(),
        meta: t.meta.clone(),
    };
    serde_json::to_value(raw).expect("trajectory serialization is infallible")
}

/// Single-line JSON encoding.
pub fn to_line(t: &Trajectory) -> String {
    serialize_trajectory(t).to_string()
}
