//! Fixture-table mocks. Every mock resolves requests by exact match on a
//! canonical key and fails loudly on a miss; responses are bit-deterministic.
//!
//! Canonical keys:
//!   detector / vqa / vqa_yesno : `<image-handle>|<object-or-question>`
//!   captions / segments / replace / image embeddings : `<image-handle>`
//!   text embeddings : `text:<text>`, image part embeddings : `parts:<handle>`
//!   plans : `<query>|<seed>`, ranks : `n=<trace-count>`

use std::sync::Arc;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use super::{
    BackendError, BackendSuite, Captioner, Detector, Editor, Embedder, Planner, PlannerRequest,
    Ranker, ScoredBox, Segmenter, VqaModel,
};
use crate::runtime::value::ImageHandle;

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct MockFixtures {
    #[serde(default)]
    pub detector: IndexMap<String, Vec<ScoredBox>>,
    #[serde(default)]
    pub vqa: IndexMap<String, Vec<(String, f64)>>,
    #[serde(default)]
    pub vqa_yesno: IndexMap<String, (f64, f64)>,
    #[serde(default)]
    pub captions: IndexMap<String, String>,
    #[serde(default)]
    pub embeddings: IndexMap<String, Vec<f64>>,
    #[serde(default)]
    pub image_parts: IndexMap<String, Vec<Vec<f64>>>,
    #[serde(default)]
    pub segments: IndexMap<String, Vec<(String, f64)>>,
    #[serde(default)]
    pub replace: IndexMap<String, Vec<(ImageHandle, f64)>>,
    #[serde(default)]
    pub plans: IndexMap<String, Vec<String>>,
    #[serde(default)]
    pub ranks: IndexMap<String, String>,
}

impl MockFixtures {
    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn from_file(path: &std::path::Path) -> Result<Self, BackendError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| BackendError::Unhealthy(format!("fixture file {path:?}: {e}")))?;
        Self::from_json(&text).map_err(|e| BackendError::Unhealthy(format!("fixture json: {e}")))
    }
}

pub fn image_key(image: &ImageHandle, suffix: &str) -> String {
    format!("{}|{}", image.handle, suffix)
}

fn miss(key: &str) -> BackendError {
    BackendError::FixtureMiss { key: key.to_string() }
}

#[derive(Clone)]
pub struct MockBackend {
    fixtures: Arc<MockFixtures>,
}

impl MockBackend {
    pub fn new(fixtures: MockFixtures) -> Self {
        MockBackend { fixtures: Arc::new(fixtures) }
    }

    pub fn shared(fixtures: Arc<MockFixtures>) -> Self {
        MockBackend { fixtures }
    }

    /// Full suite serving every interface from the same fixture tables.
    pub fn suite(fixtures: MockFixtures) -> BackendSuite {
        let shared = Arc::new(fixtures);
        let b = MockBackend::shared(shared);
        BackendSuite {
            detector: Arc::new(b.clone()),
            vqa: Arc::new(b.clone()),
            captioner: Arc::new(b.clone()),
            embedder: Arc::new(b.clone()),
            segmenter: Arc::new(b.clone()),
            editor: Arc::new(b.clone()),
            planner: Arc::new(b.clone()),
            ranker: Arc::new(b),
        }
    }
}

impl Detector for MockBackend {
    fn detect(&self, image: &ImageHandle, object: &str) -> Result<Vec<ScoredBox>, BackendError> {
        let key = image_key(image, object);
        self.fixtures.detector.get(&key).cloned().ok_or_else(|| miss(&key))
    }
}

impl VqaModel for MockBackend {
    fn answer(
        &self,
        image: &ImageHandle,
        question: &str,
    ) -> Result<Vec<(String, f64)>, BackendError> {
        let key = image_key(image, question);
        self.fixtures.vqa.get(&key).cloned().ok_or_else(|| miss(&key))
    }

    fn yes_no(&self, image: &ImageHandle, question: &str) -> Result<(f64, f64), BackendError> {
        let key = image_key(image, question);
        self.fixtures.vqa_yesno.get(&key).copied().ok_or_else(|| miss(&key))
    }
}

impl Captioner for MockBackend {
    fn caption(&self, image: &ImageHandle) -> Result<String, BackendError> {
        self.fixtures
            .captions
            .get(&image.handle)
            .cloned()
            .ok_or_else(|| miss(&image.handle))
    }
}

impl Embedder for MockBackend {
    fn embed_text(&self, text: &str) -> Result<Vec<f64>, BackendError> {
        let key = format!("text:{text}");
        self.fixtures.embeddings.get(&key).cloned().ok_or_else(|| miss(&key))
    }

    fn embed_image(&self, image: &ImageHandle) -> Result<Vec<f64>, BackendError> {
        let key = format!("image:{}", image.handle);
        self.fixtures.embeddings.get(&key).cloned().ok_or_else(|| miss(&key))
    }

    fn embed_image_parts(&self, image: &ImageHandle) -> Result<Vec<Vec<f64>>, BackendError> {
        let key = format!("parts:{}", image.handle);
        self.fixtures.image_parts.get(&key).cloned().ok_or_else(|| miss(&key))
    }
}

impl Segmenter for MockBackend {
    fn segment(&self, image: &ImageHandle) -> Result<Vec<(String, f64)>, BackendError> {
        self.fixtures
            .segments
            .get(&image.handle)
            .cloned()
            .ok_or_else(|| miss(&image.handle))
    }
}

impl Editor for MockBackend {
    fn replace(
        &self,
        image: &ImageHandle,
        object: &str,
        prompt: &str,
    ) -> Result<Vec<(ImageHandle, f64)>, BackendError> {
        let key = format!("{}|{}|{}", image.handle, object, prompt);
        self.fixtures.replace.get(&key).cloned().ok_or_else(|| miss(&key))
    }
}

impl Planner for MockBackend {
    fn plan(&self, req: &PlannerRequest) -> Result<Vec<String>, BackendError> {
        let key = format!("{}|{}", req.query, req.perturbation_seed);
        self.fixtures.plans.get(&key).cloned().ok_or_else(|| miss(&key))
    }
}

impl Ranker for MockBackend {
    fn rank_reply(&self, traces: &[String], _instruction: &str) -> Result<String, BackendError> {
        let key = format!("n={}", traces.len());
        self.fixtures.ranks.get(&key).cloned().ok_or_else(|| miss(&key))
    }
}

/// Planner that returns a fixed program list for every query.
pub struct StaticPlanner {
    pub programs: Vec<String>,
}

impl Planner for StaticPlanner {
    fn plan(&self, _req: &PlannerRequest) -> Result<Vec<String>, BackendError> {
        Ok(self.programs.clone())
    }
}

/// Ranker that reverses the given order (useful in tests).
pub struct ReversingRanker;

impl Ranker for ReversingRanker {
    fn rank_reply(&self, traces: &[String], _instruction: &str) -> Result<String, BackendError> {
        let order: Vec<String> = (1..=traces.len()).rev().map(|i| i.to_string()).collect();
        Ok(order.join(","))
    }
}

/// Ranker that always fails, exercising the fallback path.
pub struct FailingRanker;

impl Ranker for FailingRanker {
    fn rank_reply(&self, _traces: &[String], _instruction: &str) -> Result<String, BackendError> {
        Err(BackendError::Server("ranker offline".into()))
    }
}
