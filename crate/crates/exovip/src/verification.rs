//! Step-wise verification: the three sub-verifiers, negative sampling, the
//! averaged verification score, and probability calibration.

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::{BackendError, BackendSuite, Captioner, Embedder, VqaModel};
use crate::dsl::{ArgValue, Step};
use crate::runtime::exec::{Candidate, CandidateSet};
use crate::runtime::registry::{AnswerSource, ModuleEntry, VerifierKind};
use crate::runtime::value::{ImageHandle, Value};

#[derive(Debug, Error)]
pub enum VerifyError {
    #[error("no semantic opposite available for `{answer}`")]
    NoOppositeAvailable { answer: String },
    #[error("candidate is missing verification scores")]
    MissingScores,
    #[error("candidate has no answer phrase for verification")]
    NoAnswerPhrase,
    #[error(transparent)]
    Backend(#[from] BackendError),
}

/// Per-candidate verification scores. For every enabled sub-verifier the
/// report holds the candidate's score and the semantic opposite's score;
/// `s_final` is the mean of the per-verifier differences.
#[derive(Debug, Clone, Serialize)]
pub struct VerifierReport {
    pub negative_answer: String,
    pub s_itm: Option<f64>,
    pub s_cap: Option<f64>,
    pub s_vqa: Option<f64>,
    pub n_itm: Option<f64>,
    pub n_cap: Option<f64>,
    pub n_vqa: Option<f64>,
    pub s_final: f64,
}

impl VerifierReport {
    /// The mean-of-differences mixture; equals mean(candidate scores) minus
    /// mean(negative scores) over the enabled verifiers.
    pub fn mix(&self) -> f64 {
        let pairs = [
            (self.s_itm, self.n_itm),
            (self.s_cap, self.n_cap),
            (self.s_vqa, self.n_vqa),
        ];
        let diffs: Vec<f64> = pairs
            .iter()
            .filter_map(|(s, n)| s.map(|s| s - n.unwrap_or(0.0)))
            .collect();
        if diffs.is_empty() {
            0.0
        } else {
            diffs.iter().sum::<f64>() / diffs.len() as f64
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OppositePolicy {
    /// Deterministically take the minimum-similarity token.
    Lowest,
    /// Uniform draw from the sub-threshold list, reproducible per seed.
    Sampled { seed: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredToken {
    pub token: String,
    pub sim: f64,
}

/// Map from answer token to its scored opposite candidates. Only tokens
/// with similarity below `theta` qualify as opposites.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct NegativeVocabulary {
    pub entries: IndexMap<String, Vec<ScoredToken>>,
    #[serde(default)]
    pub fallback: Vec<ScoredToken>,
    #[serde(default = "default_theta")]
    pub theta: f64,
}

fn default_theta() -> f64 {
    0.5
}

impl NegativeVocabulary {
    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn from_file(path: &std::path::Path) -> std::io::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
    }

    /// Builds entries by embedding each answer against a candidate pool and
    /// keeping tokens whose similarity falls below `theta`.
    pub fn build(
        answers: &[String],
        pool: &[String],
        embedder: &dyn Embedder,
        theta: f64,
    ) -> Result<Self, BackendError> {
        let mut entries = IndexMap::new();
        for answer in answers {
            let a = embedder.embed_text(answer)?;
            let mut opposites = Vec::new();
            for token in pool {
                if token == answer {
                    continue;
                }
                let t = embedder.embed_text(token)?;
                let sim: f64 = a.iter().zip(&t).map(|(x, y)| x * y).sum();
                if sim < theta {
                    opposites.push(ScoredToken { token: token.clone(), sim });
                }
            }
            entries.insert(answer.clone(), opposites);
        }
        Ok(NegativeVocabulary { entries, fallback: Vec::new(), theta })
    }

    fn opposites_for(&self, answer: &str) -> &[ScoredToken] {
        match self.entries.get(answer) {
            Some(list) if !list.is_empty() => list,
            _ => &self.fallback,
        }
    }
}

fn fnv1a(text: &str) -> u64 {
    let mut hash: u64 = 0xcbf29ce484222325;
    for b in text.bytes() {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x100000001b3);
    }
    hash
}

/// Selects the semantic opposite of an answer token.
pub fn semantic_opposite(
    answer: &str,
    vocab: &NegativeVocabulary,
    policy: OppositePolicy,
) -> Result<String, VerifyError> {
    let below: Vec<&ScoredToken> = vocab
        .opposites_for(answer)
        .iter()
        .filter(|t| t.sim < vocab.theta)
        .collect();
    if below.is_empty() {
        return Err(VerifyError::NoOppositeAvailable { answer: answer.to_string() });
    }
    match policy {
        OppositePolicy::Lowest => {
            let mut best = below[0];
            for t in &below[1..] {
                if t.sim < best.sim || (t.sim == best.sim && t.token < best.token) {
                    best = t;
                }
            }
            Ok(best.token.clone())
        }
        OppositePolicy::Sampled { seed } => {
            use rand::Rng;
            use rand::SeedableRng;
            let mut rng =
                rand_chacha::ChaCha8Rng::seed_from_u64(seed ^ fnv1a(answer));
            let idx = rng.gen_range(0..below.len());
            Ok(below[idx].token.clone())
        }
    }
}

/// Fills the single `{}` placeholder of a verifier template.
pub fn fill_template(template: &str, answer: &str) -> String {
    template.replacen("{}", answer, 1)
}

/// Turns a question-answer pair into a declarative sentence: the leading
/// wh-word and auxiliary are stripped and the answer is appended with "is".
pub fn qa_to_sentence(question: &str, answer: &str) -> String {
    let stripped = question.trim().trim_end_matches('?').trim();
    let mut words: Vec<&str> = stripped.split_whitespace().collect();
    const WH: &[&str] = &["what", "who", "where", "when", "which", "how", "why", "whose"];
    const AUX: &[&str] = &["is", "are", "was", "were", "does", "do", "did"];
    if let Some(first) = words.first() {
        if WH.contains(&first.to_lowercase().as_str()) {
            words.remove(0);
            if let Some(next) = words.first() {
                if AUX.contains(&next.to_lowercase().as_str()) {
                    words.remove(0);
                }
            }
        }
    }
    let stem = words.join(" ");
    if stem.is_empty() {
        format!("it is {answer}")
    } else {
        format!("{stem} is {answer}")
    }
}

fn sim(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Image-text matching verifier: similarity between the image embedding and
/// the filled-template sentence embedding.
pub fn verify_itm(
    answer: &str,
    image: &ImageHandle,
    template: &str,
    embedder: &dyn Embedder,
) -> Result<f64, VerifyError> {
    let sentence = fill_template(template, answer);
    let img_emb = embedder.embed_image(image)?;
    let txt_emb = embedder.embed_text(&sentence)?;
    Ok(sim(&img_emb, &txt_emb))
}

/// Caption verifier: the image is captioned, the candidate is rendered into
/// a description (declarative sentence first, for QA pairs), and the two
/// sentence embeddings are compared.
pub fn verify_caption(
    answer: &str,
    question: Option<&str>,
    image: &ImageHandle,
    template: &str,
    captioner: &dyn Captioner,
    embedder: &dyn Embedder,
) -> Result<f64, VerifyError> {
    let statement = match question {
        Some(q) => qa_to_sentence(q, answer),
        None => answer.to_string(),
    };
    let description = fill_template(template, &statement);
    let caption = captioner.caption(image)?;
    let cap_emb = embedder.embed_text(&caption)?;
    let desc_emb = embedder.embed_text(&description)?;
    Ok(sim(&cap_emb, &desc_emb))
}

/// VQA verifier: difference between the yes and no answer probabilities for
/// the templated question; lies in [-1, 1] for probabilities in [0, 1].
pub fn verify_vqa(
    answer: &str,
    image: &ImageHandle,
    question_template: &str,
    vqa: &dyn VqaModel,
) -> Result<f64, VerifyError> {
    let question = fill_template(question_template, answer);
    let (p_yes, p_no) = vqa.yes_no(image, &question)?;
    Ok(p_yes - p_no)
}

/// The answer phrase a candidate is verified under.
pub fn answer_phrase(step: &Step, entry: &ModuleEntry, candidate: &Candidate) -> Option<String> {
    match &entry.answer_source {
        AnswerSource::CandidateText => match &candidate.value {
            Value::Text(t) => Some(t.clone()),
            Value::Number(n) => Some(n.to_string()),
            Value::Bool(b) => Some(b.to_string()),
            _ => None,
        },
        AnswerSource::Arg(name) => match step.arg(name) {
            Some(ArgValue::Str(s)) => Some(s.clone()),
            Some(ArgValue::Var(_)) | Some(ArgValue::Num(_)) | Some(ArgValue::Bool(_)) | None => {
                None
            }
        },
    }
}

/// The image a candidate is verified against: box candidates are verified
/// on the crop region, image candidates on themselves, everything else on
/// the step's input image.
pub fn verification_image(base: &ImageHandle, candidate: &Candidate) -> ImageHandle {
    match &candidate.value {
        Value::Box(b) => ImageHandle {
            handle: format!("{}#crop({},{},{},{})", base.handle, b.x0, b.y0, b.x1, b.y1),
            width: (b.x1 - b.x0).round() as u32,
            height: (b.y1 - b.y0).round() as u32,
        },
        Value::Image(img) => img.clone(),
        _ => base.clone(),
    }
}

/// Scores one candidate with the module's enabled sub-verifiers, sampling a
/// semantic opposite when negative sampling is on.
#[allow(clippy::too_many_arguments)]
pub fn verification_score(
    answer: &str,
    question: Option<&str>,
    image: &ImageHandle,
    entry: &ModuleEntry,
    vocab: &NegativeVocabulary,
    policy: OppositePolicy,
    negative_sampling: bool,
    suite: &BackendSuite,
) -> Result<VerifierReport, VerifyError> {
    let negative = if negative_sampling {
        Some(semantic_opposite(answer, vocab, policy)?)
    } else {
        None
    };
    let mut report = VerifierReport {
        negative_answer: negative.clone().unwrap_or_default(),
        s_itm: None,
        s_cap: None,
        s_vqa: None,
        n_itm: None,
        n_cap: None,
        n_vqa: None,
        s_final: 0.0,
    };
    for kind in &entry.verifiers {
        match kind {
            VerifierKind::Itm => {
                report.s_itm = Some(verify_itm(
                    answer,
                    image,
                    &entry.templates.itm,
                    suite.embedder.as_ref(),
                )?);
                if let Some(neg) = &negative {
                    report.n_itm = Some(verify_itm(
                        neg,
                        image,
                        &entry.templates.itm,
                        suite.embedder.as_ref(),
                    )?);
                }
            }
            VerifierKind::Caption => {
                report.s_cap = Some(verify_caption(
                    answer,
                    question,
                    image,
                    &entry.templates.caption,
                    suite.captioner.as_ref(),
                    suite.embedder.as_ref(),
                )?);
                if let Some(neg) = &negative {
                    report.n_cap = Some(verify_caption(
                        neg,
                        question,
                        image,
                        &entry.templates.caption,
                        suite.captioner.as_ref(),
                        suite.embedder.as_ref(),
                    )?);
                }
            }
            VerifierKind::Vqa => {
                report.s_vqa = Some(verify_vqa(
                    answer,
                    image,
                    &entry.templates.vqa,
                    suite.vqa.as_ref(),
                )?);
                if let Some(neg) = &negative {
                    report.n_vqa = Some(verify_vqa(
                        neg,
                        image,
                        &entry.templates.vqa,
                        suite.vqa.as_ref(),
                    )?);
                }
            }
        }
    }
    report.s_final = report.mix();
    Ok(report)
}

/// Runs verification over a whole candidate set. Symbolic (non-verifiable)
/// modules are left untouched: their scores carry through unchanged.
#[allow(clippy::too_many_arguments)]
pub fn verify_candidate_set(
    cs: &mut CandidateSet,
    step_image: &ImageHandle,
    entry: &ModuleEntry,
    vocab: &NegativeVocabulary,
    policy: OppositePolicy,
    negative_sampling: bool,
    suite: &BackendSuite,
) -> Result<(), VerifyError> {
    if !entry.verifiable || entry.verifiers.is_empty() {
        return Ok(());
    }
    let question = cs
        .step
        .arg("question")
        .and_then(|a| match a {
            ArgValue::Str(s) => Some(s.clone()),
            _ => None,
        });
    for candidate in &mut cs.candidates {
        let answer = answer_phrase(&cs.step, entry, candidate)
            .ok_or(VerifyError::NoAnswerPhrase)?;
        let image = verification_image(step_image, candidate);
        let report = verification_score(
            &answer,
            question.as_deref(),
            &image,
            entry,
            vocab,
            policy,
            negative_sampling,
            suite,
        )?;
        candidate.report = Some(report);
    }
    Ok(())
}

/// Rescales verification scores into weights `w` in `[1/tau, tau]` and
/// multiplies them into the module probabilities; candidates are re-sorted
/// by the calibrated probability with stable ties. When all scores are
/// equal (including singleton sets) `w` is 1 for every candidate.
pub fn calibrate(cs: &mut CandidateSet, tau: f64) -> Result<(), VerifyError> {
    let scores: Vec<f64> = cs
        .candidates
        .iter()
        .map(|c| c.s_final().ok_or(VerifyError::MissingScores))
        .collect::<Result<_, _>>()?;
    let s_min = scores.iter().cloned().fold(f64::INFINITY, f64::min);
    let s_max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    for (candidate, s) in cs.candidates.iter_mut().zip(&scores) {
        let w = if s_max == s_min {
            1.0
        } else {
            (s - s_min) / (s_max - s_min) * (tau - 1.0 / tau) + 1.0 / tau
        };
        candidate.w = Some(w);
        candidate.p_cal = Some(w * candidate.p);
    }
    cs.sort();
    Ok(())
}
