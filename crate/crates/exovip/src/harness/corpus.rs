//! Task corpora: one structured record per instance, JSON lines on disk.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::runtime::value::{BBox, ImageHandle};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("empty corpus")]
    Empty,
    #[error("duplicate instance id `{0}`")]
    DuplicateId(String),
    #[error("instance `{id}`: gold {gold} does not match task kind {kind:?}")]
    GoldMismatch { id: String, kind: TaskKind, gold: String },
    #[error("instance `{id}`: {msg}")]
    BadInstance { id: String, msg: String },
    #[error("corpus line {line}: {source}")]
    Parse { line: usize, source: serde_json::Error },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskKind {
    Qa,
    Grounding,
    Nlvr,
    Abstract,
    EditingMock,
    VideoQa,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Gold {
    Answer(String),
    Box(BBox),
    Bool(bool),
    Index(usize),
    Interval { start: usize, end: usize },
}

impl Gold {
    fn describe(&self) -> &'static str {
        match self {
            Gold::Answer(_) => "answer",
            Gold::Box(_) => "box",
            Gold::Bool(_) => "bool",
            Gold::Index(_) => "index",
            Gold::Interval { .. } => "interval",
        }
    }

    fn matches_kind(&self, kind: TaskKind) -> bool {
        matches!(
            (kind, self),
            (TaskKind::Qa, Gold::Answer(_))
                | (TaskKind::Grounding, Gold::Box(_))
                | (TaskKind::Nlvr, Gold::Bool(_))
                | (TaskKind::Abstract, Gold::Index(_))
                | (TaskKind::EditingMock, Gold::Answer(_))
                | (TaskKind::VideoQa, Gold::Interval { .. })
        )
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TaskInstance {
    pub id: String,
    pub kind: TaskKind,
    pub query: String,
    /// One or two input images; video-qa instances carry frame scores instead.
    #[serde(default)]
    pub images: Vec<ImageHandle>,
    #[serde(default)]
    pub frame_scores: Option<Vec<f64>>,
    /// Abstract-reasoning option texts: comma-separated part phrases.
    #[serde(default)]
    pub options: Option<Vec<String>>,
    pub gold: Gold,
}

#[derive(Debug, Clone)]
pub struct Corpus {
    pub instances: Vec<TaskInstance>,
}

impl Corpus {
    pub fn new(instances: Vec<TaskInstance>) -> Result<Corpus, CorpusError> {
        if instances.is_empty() {
            return Err(CorpusError::Empty);
        }
        for (i, inst) in instances.iter().enumerate() {
            if instances[..i].iter().any(|x| x.id == inst.id) {
                return Err(CorpusError::DuplicateId(inst.id.clone()));
            }
            if !inst.gold.matches_kind(inst.kind) {
                return Err(CorpusError::GoldMismatch {
                    id: inst.id.clone(),
                    kind: inst.kind,
                    gold: inst.gold.describe().into(),
                });
            }
            match inst.kind {
                TaskKind::VideoQa => {
                    if inst.frame_scores.as_ref().is_none_or(|f| f.is_empty()) {
                        return Err(CorpusError::BadInstance {
                            id: inst.id.clone(),
                            msg: "video-qa needs non-empty frame_scores".into(),
                        });
                    }
                }
                TaskKind::Abstract => {
                    if inst.images.is_empty()
                        || inst.options.as_ref().is_none_or(|o| o.is_empty())
                    {
                        return Err(CorpusError::BadInstance {
                            id: inst.id.clone(),
                            msg: "abstract needs an image and options".into(),
                        });
                    }
                }
                _ => {
                    if inst.images.is_empty() || inst.images.len() > 2 {
                        return Err(CorpusError::BadInstance {
                            id: inst.id.clone(),
                            msg: "expected 1 or 2 input images".into(),
                        });
                    }
                }
            }
        }
        Ok(Corpus { instances })
    }

    /// Loads a JSON-lines corpus file (one TaskInstance per line).
    pub fn from_jsonl(text: &str) -> Result<Corpus, CorpusError> {
        let mut instances = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let inst: TaskInstance = serde_json::from_str(line)
                .map_err(|source| CorpusError::Parse { line: i + 1, source })?;
            instances.push(inst);
        }
        Corpus::new(instances)
    }

    pub fn from_file(path: &std::path::Path) -> Result<Corpus, CorpusError> {
        Corpus::from_jsonl(&std::fs::read_to_string(path)?)
    }

    pub fn to_jsonl(&self) -> String {
        self.instances
            .iter()
            .map(|i| serde_json::to_string(i).expect("instances serialize"))
            .collect::<Vec<_>>()
            .join("\n")
    }
}
