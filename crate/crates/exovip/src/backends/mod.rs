//! Model-facing interfaces: detector, VQA, captioner, embedder, segmenter,
//! image editor, planner, and ranker. Every interface has a deterministic
//! mock backed by fixture tables and a generic remote-inference client.

pub mod mock;
pub mod prompt;
#[cfg(feature = "remote")]
pub mod remote;

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::runtime::value::{BBox, ImageHandle};

pub use prompt::{render_prompt, PlannerRequest};

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("fixture miss for key `{key}`")]
    FixtureMiss { key: String },
    #[error("backend timeout after {latency_ms} ms")]
    Timeout { latency_ms: u64 },
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("server error: {0}")]
    Server(String),
    #[error("ranker reply unusable: {0}")]
    RankUnavailable(String),
    #[error("backend unhealthy: {0}")]
    Unhealthy(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredBox {
    pub bbox: BBox,
    pub p: f64,
}

pub trait Detector: Send + Sync {
    fn detect(&self, image: &ImageHandle, object: &str) -> Result<Vec<ScoredBox>, BackendError>;
    fn health(&self) -> Result<(), BackendError> {
        Ok(())
    }
}

pub trait VqaModel: Send + Sync {
    /// Open-ended answering: scored answer tokens, highest first or in
    /// backend order (the runtime sorts).
    fn answer(
        &self,
        image: &ImageHandle,
        question: &str,
    ) -> Result<Vec<(String, f64)>, BackendError>;
    /// Probabilities for answering `yes` and `no` to a closed question.
    fn yes_no(&self, image: &ImageHandle, question: &str) -> Result<(f64, f64), BackendError>;
    fn health(&self) -> Result<(), BackendError> {
        Ok(())
    }
}

pub trait Captioner: Send + Sync {
    fn caption(&self, image: &ImageHandle) -> Result<String, BackendError>;
    fn health(&self) -> Result<(), BackendError> {
        Ok(())
    }
}

/// Unit-normalized embeddings; similarity is fixed to the inner product.
pub trait Embedder: Send + Sync {
    fn embed_text(&self, text: &str) -> Result<Vec<f64>, BackendError>;
    fn embed_image(&self, image: &ImageHandle) -> Result<Vec<f64>, BackendError>;
    /// Embeddings of an image's visual parts (for part alignment).
    fn embed_image_parts(&self, image: &ImageHandle) -> Result<Vec<Vec<f64>>, BackendError>;
    fn health(&self) -> Result<(), BackendError> {
        Ok(())
    }
}

pub trait Segmenter: Send + Sync {
    /// Scored mask handles.
    fn segment(&self, image: &ImageHandle) -> Result<Vec<(String, f64)>, BackendError>;
    fn health(&self) -> Result<(), BackendError> {
        Ok(())
    }
}

/// Image-editing backend behind REPLACE; always mock at desk scale.
pub trait Editor: Send + Sync {
    fn replace(
        &self,
        image: &ImageHandle,
        object: &str,
        prompt: &str,
    ) -> Result<Vec<(ImageHandle, f64)>, BackendError>;
    fn health(&self) -> Result<(), BackendError> {
        Ok(())
    }
}

pub trait Planner: Send + Sync {
    /// Program texts for the query; the harness parses and validates them.
    fn plan(&self, req: &PlannerRequest) -> Result<Vec<String>, BackendError>;
    fn health(&self) -> Result<(), BackendError> {
        Ok(())
    }
}

pub trait Ranker: Send + Sync {
    /// Raw reply to a ranking instruction over rendered traces; callers
    /// parse it with [`rank`].
    fn rank_reply(&self, traces: &[String], instruction: &str) -> Result<String, BackendError>;
    fn health(&self) -> Result<(), BackendError> {
        Ok(())
    }
}

/// The full set of model handles used by one run.
#[derive(Clone)]
pub struct BackendSuite {
    pub detector: Arc<dyn Detector>,
    pub vqa: Arc<dyn VqaModel>,
    pub captioner: Arc<dyn Captioner>,
    pub embedder: Arc<dyn Embedder>,
    pub segmenter: Arc<dyn Segmenter>,
    pub editor: Arc<dyn Editor>,
    pub planner: Arc<dyn Planner>,
    pub ranker: Arc<dyn Ranker>,
}

impl BackendSuite {
    /// Probes every handle; a run must not start against an unhealthy suite.
    pub fn health_check(&self) -> Result<(), BackendError> {
        self.detector.health()?;
        self.vqa.health()?;
        self.captioner.health()?;
        self.embedder.health()?;
        self.segmenter.health()?;
        self.editor.health()?;
        self.planner.health()?;
        self.ranker.health()?;
        Ok(())
    }
}

/// Plans programs for a query: calls the planner and removes exact-duplicate
/// texts, keeping first occurrences, capped at `req.n_programs`.
pub fn plan(planner: &dyn Planner, req: &PlannerRequest) -> Result<Vec<String>, BackendError> {
    let raw = planner.plan(req)?;
    let mut seen: Vec<String> = Vec::new();
    for text in raw {
        if !seen.contains(&text) {
            seen.push(text);
        }
        if seen.len() == req.n_programs {
            break;
        }
    }
    Ok(seen)
}

/// Asks the ranker for a total order over rendered traces and parses the
/// reply into a zero-based permutation. Replies are expected as one-based
/// comma- or whitespace-separated indices, e.g. `2,1`.
pub fn rank(
    ranker: &dyn Ranker,
    traces: &[String],
    instruction_template: &str,
) -> Result<Vec<usize>, BackendError> {
    let reply = ranker.rank_reply(traces, instruction_template)?;
    parse_permutation(&reply, traces.len())
}

fn parse_permutation(reply: &str, n: usize) -> Result<Vec<usize>, BackendError> {
    let mut out = Vec::with_capacity(n);
    for token in reply.split(|c: char| c == ',' || c.is_whitespace()) {
        if token.is_empty() {
            continue;
        }
        let idx: usize = token.parse().map_err(|_| {
            BackendError::RankUnavailable(format!("non-numeric token `{token}` in `{reply}`"))
        })?;
        if idx == 0 || idx > n {
            return Err(BackendError::RankUnavailable(format!(
                "index {idx} out of range 1..={n}"
            )));
        }
        if out.contains(&(idx - 1)) {
            return Err(BackendError::RankUnavailable(format!(
                "index {idx} repeated in `{reply}`"
            )));
        }
        out.push(idx - 1);
    }
    if out.len() != n {
        return Err(BackendError::RankUnavailable(format!(
            "expected {n} indices, got {} in `{reply}`",
            out.len()
        )));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_one_based_permutation() {
        assert_eq!(parse_permutation("2,1", 2).unwrap(), vec![1, 0]);
        assert_eq!(parse_permutation("3 1 2", 3).unwrap(), vec![2, 0, 1]);
    }

    #[test]
    fn rejects_malformed_replies() {
        assert!(parse_permutation("best: trace 1", 2).is_err());
        assert!(parse_permutation("1,1", 2).is_err());
        assert!(parse_permutation("1", 2).is_err());
        assert!(parse_permutation("1,3", 2).is_err());
    }
}
