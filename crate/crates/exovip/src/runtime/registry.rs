//! Module registry: per-operation signature, executor binding, verifier
//! configuration, and calibration scaling factor.

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::value::ValueTag;

#[derive(Debug, Error)]
pub enum RegistryError {
    #[error("registry config: {0}")]
    Config(String),
    #[error("scaling factor for `{op}` must be >= 1, got {tau}")]
    BadTau { op: String, tau: f64 },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Which built-in execution routine serves an operation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExecutorKind {
    Detect,
    Select,
    Vqa,
    Segment,
    Classify,
    Replace,
    Align,
    Count,
    Eval,
    Result,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerifierKind {
    Itm,
    Caption,
    Vqa,
}

/// Where the answer phrase fed to the verifiers comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnswerSource {
    /// The candidate value itself rendered as text (VQA, CLASSIFY answers).
    CandidateText,
    /// A named step argument (e.g. the `object` queried by LOC).
    Arg(String),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ArgSig {
    pub name: String,
    pub tag: ValueTag,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Signature {
    pub args: Vec<ArgSig>,
    pub output: ValueTag,
}

impl Signature {
    pub fn arg(&self, name: &str) -> Option<&ArgSig> {
        self.args.iter().find(|a| a.name == name)
    }
}

/// Verification templates, each with one `{}` placeholder.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VerifierTemplates {
    #[serde(default = "default_itm_template")]
    pub itm: String,
    #[serde(default = "default_cap_template")]
    pub caption: String,
    #[serde(default = "default_vqa_template")]
    pub vqa: String,
}

fn default_itm_template() -> String {
    "a photo of {}".to_string()
}

fn default_cap_template() -> String {
    "the image describe {}".to_string()
}

fn default_vqa_template() -> String {
    "Is there any {} in the image?".to_string()
}

impl Default for VerifierTemplates {
    fn default() -> Self {
        VerifierTemplates {
            itm: default_itm_template(),
            caption: default_cap_template(),
            vqa: default_vqa_template(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModuleEntry {
    pub name: String,
    pub signature: Signature,
    pub executor: ExecutorKind,
    /// Symbolic ops (COUNT, EVAL, RESULT) are not verifiable; their steps
    /// carry no verification score.
    pub verifiable: bool,
    #[serde(default)]
    pub verifiers: Vec<VerifierKind>,
    #[serde(default)]
    pub templates: VerifierTemplates,
    #[serde(default = "default_answer_source")]
    pub answer_source: AnswerSource,
    pub tau: f64,
}

fn default_answer_source() -> AnswerSource {
    AnswerSource::CandidateText
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModuleRegistry {
    ops: IndexMap<String, ModuleEntry>,
    /// Candidate cutoff per step; defaults to the search width K.
    #[serde(default = "default_top_k")]
    pub top_k: usize,
}

fn default_top_k() -> usize {
    4
}

impl ModuleRegistry {
    pub fn from_entries(entries: Vec<ModuleEntry>, top_k: usize) -> Result<Self, RegistryError> {
        let mut ops = IndexMap::new();
        for e in entries {
            if e.tau < 1.0 {
                return Err(RegistryError::BadTau {
                    op: e.name,
                    tau: e.tau,
                });
            }
            if ops.insert(e.name.clone(), e).is_some() {
                return Err(RegistryError::Config("duplicate op entry".into()));
            }
        }
        Ok(ModuleRegistry { ops, top_k })
    }

    pub fn from_json(text: &str) -> Result<Self, RegistryError> {
        let reg: ModuleRegistry = serde_json::from_str(text)?;
        for e in reg.ops.values() {
            if e.tau < 1.0 {
                return Err(RegistryError::BadTau {
                    op: e.name.clone(),
                    tau: e.tau,
                });
            }
        }
        Ok(reg)
    }

    pub fn from_file(path: &std::path::Path) -> Result<Self, RegistryError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn get(&self, op: &str) -> Option<&ModuleEntry> {
        self.ops.get(op)
    }

    pub fn ops(&self) -> impl Iterator<Item = &ModuleEntry> {
        self.ops.values()
    }

    /// The stock module set: LOC, SELECT, VQA, SEG, CLASSIFY, REPLACE,
    /// ALIGN plus the symbolic COUNT, EVAL, RESULT.
    pub fn builtin() -> ModuleRegistry {
        Self::from_json(BUILTIN_REGISTRY_JSON).expect("builtin registry is well-formed")
    }
}

/// Shipped registry configuration; also written out by `exovip-cli` so
/// operators can edit a copy.
pub const BUILTIN_REGISTRY_JSON: &str = include_str!("../../assets/registry.json");
