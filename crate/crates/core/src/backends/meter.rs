use super::model::{ModelHandle, ModelReply, ModelRequest};
use super::retriever::{RetrievalReply, RetrievalRequest, RetrieverHandle};
use super::BackendError;
use crate::trajectory::CostLedger;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Bucket {
    Diagnosis,
    Repair,
}

/// Routes every external call through one place so each is counted exactly once.
#[derive(Debug, Clone, Default)]
pub struct Meter {
    ledger: CostLedger,
    model_calls: u64,
    top_ks: Vec<usize>,
}

impl Meter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn chat(
        &mut self,
        llm: &dyn ModelHandle,
        bucket: Bucket,
        req: &ModelRequest,
    ) -> Result<ModelReply, BackendError> {
        let reply = llm.complete(req)?;
        self.model_calls += 1;
        let used = reply.usage.total();
        match bucket {
            Bucket::Diagnosis => self.ledger.diagnosis_tokens += used,
            Bucket::Repair => self.ledger.repair_tokens += used,
        }
        Ok(reply)
    }

    pub fn retrieve(
        &mut self,
        retriever: &dyn RetrieverHandle,
        req: &RetrievalRequest,
    ) -> Result<RetrievalReply, BackendError> {
        let reply = retriever.retrieve(req)?;
        self.ledger.retrieval_calls += 1;
        self.top_ks.push(req.top_k);
        Ok(reply)
    }

    pub fn ledger(&self) -> CostLedger {
        self.ledger
    }

    pub fn model_calls(&self) -> u64 {
        self.model_calls
    }

    /// `top_k` of every retrieval issued, in order.
    pub fn top_ks(&self) -> &[usize] {
        &self.top_ks
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::{FnModel, KeywordRetriever, Usage};
    use crate::prompts::PromptRole;

    #[test]
    fn usage_lands_in_the_right_bucket_once() {
        let llm = FnModel::new(|_| {
            Ok(ModelReply {
                text: "ok".into(),
                usage: Usage::new(10, 2),
                refusal: false,
            })
        });
        let mut m = Meter::new();
        let req = ModelRequest::new(PromptRole::Sufficiency, vec![], "p".into());
        m.chat(&llm, Bucket::Diagnosis, &req).unwrap();
        m.chat(&llm, Bucket::Repair, &req).unwrap();
        m.chat(&llm, Bucket::Repair, &req).unwrap();
        assert_eq!(m.ledger().diagnosis_tokens, 12);
        assert_eq!(m.ledger().repair_tokens, 24);
        assert_eq!(m.model_calls(), 3);

        let r = KeywordRetriever::toy();
        m.retrieve(&r, &RetrievalRequest::new("kaiyuan", 10)).unwrap();
        assert_eq!(m.ledger().retrieval_calls, 1);
        assert_eq!(m.top_ks(), [10]);
    }
}
