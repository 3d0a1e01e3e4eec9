//! Generic remote-inference client. One JSON contract serves every
//! interface: `POST {base}/infer` with `{"task": ..., "inputs": ...}`,
//! answered by `{"ok": true, "output": ...}` or `{"ok": false, "error": ...}`.
//! Transient failures (transport errors, 5xx) are retried with exponential
//! backoff; application and protocol errors are not.

use std::time::Duration;

use serde::de::DeserializeOwned;
use serde_json::{json, Value as Json};

use super::{
    BackendError, Captioner, Detector, Editor, Embedder, Planner, PlannerRequest, Ranker,
    ScoredBox, Segmenter, VqaModel,
};
use crate::runtime::value::ImageHandle;

#[derive(Debug, Clone)]
pub struct RemoteConfig {
    pub base_url: String,
    pub timeout_ms: u64,
    /// Additional attempts after the first, so `retries = 2` means up to
    /// three requests.
    pub retries: u32,
    pub backoff_ms: u64,
}

impl RemoteConfig {
    pub fn new(base_url: impl Into<String>) -> RemoteConfig {
        RemoteConfig {
            base_url: base_url.into(),
            timeout_ms: 5_000,
            retries: 2,
            backoff_ms: 50,
        }
    }
}

pub struct RemoteBackend {
    cfg: RemoteConfig,
    agent: ureq::Agent,
}

impl RemoteBackend {
    pub fn new(cfg: RemoteConfig) -> RemoteBackend {
        let agent = ureq::AgentBuilder::new()
            .timeout(Duration::from_millis(cfg.timeout_ms))
            .build();
        RemoteBackend { cfg, agent }
    }

    fn attempt(&self, task: &str, inputs: &Json) -> Result<Json, BackendError> {
        let url = format!("{}/infer", self.cfg.base_url.trim_end_matches('/'));
        let result = self
            .agent
            .post(&url)
            .send_json(json!({ "task": task, "inputs": inputs }));
        let response = match result {
            Ok(r) => r,
            Err(ureq::Error::Status(code, resp)) => {
                let body = resp.into_string().unwrap_or_default();
                let err = if code >= 500 {
                    BackendError::Server(format!("status {code}: {body}"))
                } else {
                    BackendError::Protocol(format!("status {code}: {body}"))
                };
                return Err(err);
            }
            Err(ureq::Error::Transport(t)) => {
                let msg = t.to_string();
                let err = if msg.contains("timed out") || msg.contains("timeout") {
                    BackendError::Timeout { latency_ms: self.cfg.timeout_ms }
                } else {
                    BackendError::Server(msg)
                };
                return Err(err);
            }
        };
        let body: Json = response
            .into_json()
            .map_err(|e| BackendError::Protocol(format!("invalid json body: {e}")))?;
        match body.get("ok").and_then(Json::as_bool) {
            Some(true) => body
                .get("output")
                .cloned()
                .ok_or_else(|| BackendError::Protocol("reply lacks `output`".into())),
            Some(false) => Err(BackendError::Server(
                body.get("error")
                    .and_then(Json::as_str)
                    .unwrap_or("unspecified")
                    .to_string(),
            )),
            None => Err(BackendError::Protocol("reply lacks `ok`".into())),
        }
    }

    fn retryable(err: &BackendError) -> bool {
        matches!(err, BackendError::Timeout { .. } | BackendError::Server(_))
    }

    fn call<T: DeserializeOwned>(&self, task: &str, inputs: Json) -> Result<T, BackendError> {
        let mut last = None;
        for attempt in 0..=self.cfg.retries {
            if attempt > 0 {
                let backoff = self.cfg.backoff_ms << (attempt - 1);
                std::thread::sleep(Duration::from_millis(backoff));
            }
            match self.attempt(task, &inputs) {
                Ok(output) => {
                    return serde_json::from_value(output).map_err(|e| {
                        BackendError::Protocol(format!("unexpected `{task}` output shape: {e}"))
                    })
                }
                Err(e) if Self::retryable(&e) => last = Some(e),
                Err(e) => return Err(e),
            }
        }
        Err(last.expect("at least one attempt ran"))
    }
}

impl Detector for RemoteBackend {
    fn detect(&self, image: &ImageHandle, object: &str) -> Result<Vec<ScoredBox>, BackendError> {
        self.call("detect", json!({ "image": image, "object": object }))
    }

    fn health(&self) -> Result<(), BackendError> {
        let url = format!("{}/health", self.cfg.base_url.trim_end_matches('/'));
        self.agent
            .get(&url)
            .call()
            .map(|_| ())
            .map_err(|e| BackendError::Unhealthy(e.to_string()))
    }
}

impl VqaModel for RemoteBackend {
    fn answer(
        &self,
        image: &ImageHandle,
        question: &str,
    ) -> Result<Vec<(String, f64)>, BackendError> {
        self.call("vqa", json!({ "image": image, "question": question }))
    }

    fn yes_no(&self, image: &ImageHandle, question: &str) -> Result<(f64, f64), BackendError> {
        self.call("vqa_yesno", json!({ "image": image, "question": question }))
    }
}

impl Captioner for RemoteBackend {
    fn caption(&self, image: &ImageHandle) -> Result<String, BackendError> {
        self.call("caption", json!({ "image": image }))
    }
}

impl Embedder for RemoteBackend {
    fn embed_text(&self, text: &str) -> Result<Vec<f64>, BackendError> {
        self.call("embed_text", json!({ "text": text }))
    }

    fn embed_image(&self, image: &ImageHandle) -> Result<Vec<f64>, BackendError> {
        self.call("embed_image", json!({ "image": image }))
    }

    fn embed_image_parts(&self, image: &ImageHandle) -> Result<Vec<Vec<f64>>, BackendError> {
        self.call("embed_image_parts", json!({ "image": image }))
    }
}

impl Segmenter for RemoteBackend {
    fn segment(&self, image: &ImageHandle) -> Result<Vec<(String, f64)>, BackendError> {
        self.call("segment", json!({ "image": image }))
    }
}

impl Editor for RemoteBackend {
    fn replace(
        &self,
        image: &ImageHandle,
        object: &str,
        prompt: &str,
    ) -> Result<Vec<(ImageHandle, f64)>, BackendError> {
        self.call(
            "replace",
            json!({ "image": image, "object": object, "prompt": prompt }),
        )
    }
}

impl Planner for RemoteBackend {
    fn plan(&self, req: &PlannerRequest) -> Result<Vec<String>, BackendError> {
        self.call(
            "plan",
            json!({
                "query": req.query,
                "prompt": super::render_prompt(super::prompt::DEFAULT_PLANNER_TEMPLATE, req),
                "n_programs": req.n_programs,
                "seed": req.perturbation_seed,
            }),
        )
    }
}

impl Ranker for RemoteBackend {
    fn rank_reply(&self, traces: &[String], instruction: &str) -> Result<String, BackendError> {
        self.call("rank", json!({ "traces": traces, "instruction": instruction }))
    }
}
