//! Step dispatch: resolve arguments, call the registered executor, and
//! return the full scored candidate set (never just the argmax).

use serde::Serialize;

use crate::backends::{BackendError, BackendSuite};
use crate::dsl::{ArgValue, Step};
use crate::verification::VerifierReport;

use super::align::part_alignment_score;
use super::env::{Environment, Provenance, RebindError};
use super::eval::eval_expr;
use super::registry::{ExecutorKind, ModuleRegistry};
use super::value::{ImageHandle, Value, ValueTag};

#[derive(Debug, thiserror::Error)]
pub enum RuntimeError {
    #[error("unknown operation `{op}` at line {line}")]
    UnknownOp { op: String, line: usize },
    #[error("unknown variable `{var}` at line {line}")]
    UnknownVariable { var: String, line: usize },
    #[error("argument `{arg}` of {op} at line {line}: expected {expected:?}, found {found:?}")]
    ArgType {
        op: String,
        arg: String,
        line: usize,
        expected: ValueTag,
        found: ValueTag,
    },
    #[error("missing argument `{arg}` of {op} at line {line}")]
    MissingArg { op: String, arg: String, line: usize },
    #[error("executor for {op} at line {line} failed: {reason}")]
    ExecutorFailure { op: String, line: usize, reason: String },
    #[error(transparent)]
    Rebind(#[from] RebindError),
}

impl RuntimeError {
    pub fn is_prunable(&self) -> bool {
        matches!(self, RuntimeError::ExecutorFailure { .. })
    }
}

/// One possible output of a step.
#[derive(Debug, Clone, Serialize)]
pub struct Candidate {
    pub value: Value,
    /// Module probability reported by the executor backend.
    pub p: f64,
    /// Sub-verifier scores; filled by the verification pass.
    pub report: Option<VerifierReport>,
    /// Calibration weight w and calibrated probability p' = w * p.
    pub w: Option<f64>,
    pub p_cal: Option<f64>,
}

impl Candidate {
    pub fn new(value: Value, p: f64) -> Candidate {
        Candidate { value, p, report: None, w: None, p_cal: None }
    }

    pub fn s_final(&self) -> Option<f64> {
        self.report.as_ref().map(|r| r.s_final)
    }

    /// The currently authoritative score: p' after calibration, p before.
    pub fn authoritative(&self) -> f64 {
        self.p_cal.unwrap_or(self.p)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CandidateSet {
    pub step: Step,
    /// Non-empty, sorted descending by the authoritative score.
    pub candidates: Vec<Candidate>,
}

impl CandidateSet {
    pub fn top(&self) -> &Candidate {
        &self.candidates[0]
    }

    /// Stable descending re-sort by the authoritative score.
    pub fn sort(&mut self) {
        self.candidates.sort_by(|a, b| {
            b.authoritative()
                .partial_cmp(&a.authoritative())
                .unwrap_or(std::cmp::Ordering::Equal)
        });
    }
}

fn exec_failure(step: &Step, reason: impl std::fmt::Display) -> RuntimeError {
    RuntimeError::ExecutorFailure {
        op: step.op_name.clone(),
        line: step.line_no,
        reason: reason.to_string(),
    }
}

fn backend_failure(step: &Step, err: BackendError) -> RuntimeError {
    exec_failure(step, err)
}

fn resolve_args(step: &Step, env: &Environment) -> Result<Vec<(String, Value)>, RuntimeError> {
    step.args
        .iter()
        .map(|(name, arg)| {
            let value = match arg {
                ArgValue::Var(var) => env
                    .lookup(var)
                    .cloned()
                    .ok_or_else(|| RuntimeError::UnknownVariable {
                        var: var.clone(),
                        line: step.line_no,
                    })?,
                ArgValue::Str(s) => Value::Text(s.clone()),
                ArgValue::Num(n) => Value::Number(*n),
                ArgValue::Bool(b) => Value::Bool(*b),
            };
            Ok((name.clone(), value))
        })
        .collect()
}

fn required<'a>(
    step: &Step,
    args: &'a [(String, Value)],
    name: &str,
) -> Result<&'a Value, RuntimeError> {
    args.iter()
        .find(|(n, _)| n == name)
        .map(|(_, v)| v)
        .ok_or_else(|| RuntimeError::MissingArg {
            op: step.op_name.clone(),
            arg: name.to_string(),
            line: step.line_no,
        })
}

fn required_image<'a>(
    step: &Step,
    args: &'a [(String, Value)],
    name: &str,
) -> Result<&'a ImageHandle, RuntimeError> {
    let v = required(step, args, name)?;
    v.as_image().ok_or_else(|| RuntimeError::ArgType {
        op: step.op_name.clone(),
        arg: name.to_string(),
        line: step.line_no,
        expected: ValueTag::Image,
        found: v.tag(),
    })
}

fn required_text<'a>(
    step: &Step,
    args: &'a [(String, Value)],
    name: &str,
) -> Result<&'a str, RuntimeError> {
    let v = required(step, args, name)?;
    v.as_text().ok_or_else(|| RuntimeError::ArgType {
        op: step.op_name.clone(),
        arg: name.to_string(),
        line: step.line_no,
        expected: ValueTag::Text,
        found: v.tag(),
    })
}

/// Executes one step against the registry and backends, returning the full
/// candidate set ordered by module probability. The environment is not
/// mutated; candidate choice happens later via [`bind_candidate`].
pub fn execute_step(
    step: &Step,
    env: &Environment,
    registry: &ModuleRegistry,
    suite: &BackendSuite,
) -> Result<CandidateSet, RuntimeError> {
    let entry = registry
        .get(&step.op_name)
        .ok_or_else(|| RuntimeError::UnknownOp {
            op: step.op_name.clone(),
            line: step.line_no,
        })?;
    let args = resolve_args(step, env)?;

    let mut raw: Vec<Candidate> = match entry.executor {
        ExecutorKind::Detect => {
            let image = required_image(step, &args, "image")?;
            let object = required_text(step, &args, "object")?;
            suite
                .detector
                .detect(image, object)
                .map_err(|e| backend_failure(step, e))?
                .into_iter()
                .map(|b| Candidate::new(Value::Box(b.bbox), b.p))
                .collect()
        }
        ExecutorKind::Select => {
            let image = required_image(step, &args, "image")?;
            let query = required_text(step, &args, "query")?;
            suite
                .detector
                .detect(image, query)
                .map_err(|e| backend_failure(step, e))?
                .into_iter()
                .map(|b| Candidate::new(Value::Box(b.bbox), b.p))
                .collect()
        }
        ExecutorKind::Vqa => {
            let image = required_image(step, &args, "image")?;
            let question = required_text(step, &args, "question")?;
            suite
                .vqa
                .answer(image, question)
                .map_err(|e| backend_failure(step, e))?
                .into_iter()
                .map(|(text, p)| Candidate::new(Value::Text(text), p))
                .collect()
        }
        ExecutorKind::Segment => {
            let image = required_image(step, &args, "image")?;
            suite
                .segmenter
                .segment(image)
                .map_err(|e| backend_failure(step, e))?
                .into_iter()
                .map(|(handle, p)| Candidate::new(Value::Mask { handle }, p))
                .collect()
        }
        ExecutorKind::Classify => {
            let image = required_image(step, &args, "image")?;
            let categories = required_text(step, &args, "categories")?;
            classify(image, categories, suite).map_err(|e| backend_failure(step, e))?
        }
        ExecutorKind::Replace => {
            let image = required_image(step, &args, "image")?;
            let object = required_text(step, &args, "object")?;
            let prompt = required_text(step, &args, "prompt")?;
            suite
                .editor
                .replace(image, object, prompt)
                .map_err(|e| backend_failure(step, e))?
                .into_iter()
                .map(|(img, p)| Candidate::new(Value::Image(img), p))
                .collect()
        }
        ExecutorKind::Align => {
            let image = required_image(step, &args, "image")?;
            let parts = required_text(step, &args, "parts")?;
            let text_parts: Result<Vec<Vec<f64>>, BackendError> = parts
                .split(',')
                .map(|part| suite.embedder.embed_text(part.trim()))
                .collect();
            let text_parts = text_parts.map_err(|e| backend_failure(step, e))?;
            let visual_parts = suite
                .embedder
                .embed_image_parts(image)
                .map_err(|e| backend_failure(step, e))?;
            let alignment = part_alignment_score(&text_parts, &visual_parts)
                .map_err(|e| exec_failure(step, e))?;
            vec![Candidate::new(Value::Number(alignment.score), 1.0)]
        }
        ExecutorKind::Count => {
            let v = required(step, &args, "var")?;
            let n = match v {
                Value::List(items) => items.len() as f64,
                _ => 1.0,
            };
            vec![Candidate::new(Value::Number(n), 1.0)]
        }
        ExecutorKind::Eval => {
            let expr = required_text(step, &args, "expr")?;
            let value = eval_expr(expr, env).map_err(|e| exec_failure(step, e))?;
            vec![Candidate::new(value, 1.0)]
        }
        ExecutorKind::Result => {
            let v = required(step, &args, "var")?;
            vec![Candidate::new(v.clone(), 1.0)]
        }
    };

    if raw.is_empty() {
        return Err(exec_failure(step, "backend returned no candidates"));
    }
    if let Some(c) = raw.iter().find(|c| !c.p.is_finite()) {
        return Err(exec_failure(step, format!("non-finite probability {}", c.p)));
    }
    let mut set = CandidateSet { step: step.clone(), candidates: std::mem::take(&mut raw) };
    set.sort();
    set.candidates.truncate(registry.top_k);
    Ok(set)
}

/// Zero-shot classification via embedding similarity: softmax over the
/// inner products between the image embedding and each category embedding.
fn classify(
    image: &ImageHandle,
    categories: &str,
    suite: &BackendSuite,
) -> Result<Vec<Candidate>, BackendError> {
    let img_emb = suite.embedder.embed_image(image)?;
    let mut sims: Vec<(String, f64)> = Vec::new();
    for cat in categories.split(',') {
        let cat = cat.trim();
        let emb = suite.embedder.embed_text(cat)?;
        let sim: f64 = img_emb.iter().zip(&emb).map(|(a, b)| a * b).sum();
        sims.push((cat.to_string(), sim));
    }
    let max = sims.iter().map(|(_, s)| *s).fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = sims.iter().map(|(_, s)| (s - max).exp()).sum();
    Ok(sims
        .into_iter()
        .map(|(cat, s)| Candidate::new(Value::Text(cat), (s - max).exp() / z))
        .collect())
}

/// Binds the chosen candidate's value to the step's output variable,
/// returning a child environment; the parent is unchanged.
pub fn bind_candidate(
    env: &Environment,
    step: &Step,
    candidate: &Candidate,
    candidate_index: usize,
) -> Result<Environment, RebindError> {
    env.bind(
        step.out_var.clone(),
        candidate.value.clone(),
        Some(Provenance { step_line: step.line_no, candidate_index }),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::mock::{MockBackend, MockFixtures};
    use crate::backends::ScoredBox;
    use crate::dsl::parse_program;
    use crate::runtime::value::BBox;

    fn image() -> Value {
        Value::Image(ImageHandle { handle: "img1".into(), width: 640, height: 480 })
    }

    fn env() -> Environment {
        Environment::with_inputs([("IMAGE".to_string(), image())])
    }

    fn suite(fx: MockFixtures) -> BackendSuite {
        MockBackend::suite(fx)
    }

    #[test]
    fn loc_returns_candidates_ordered_by_probability() {
        let mut fx = MockFixtures::default();
        fx.detector.insert(
            "img1|nightstand".into(),
            vec![
                ScoredBox { bbox: BBox::new(0.0, 0.0, 10.0, 10.0).unwrap(), p: 0.6 },
                ScoredBox { bbox: BBox::new(5.0, 5.0, 20.0, 20.0).unwrap(), p: 0.9 },
            ],
        );
        let p = parse_program("BOX0=LOC(image=IMAGE,object='nightstand')").unwrap();
        let cs = execute_step(&p.steps()[0], &env(), &ModuleRegistry::builtin(), &suite(fx)).unwrap();
        assert_eq!(cs.candidates.len(), 2);
        assert_eq!(cs.candidates[0].p, 0.9);
        assert_eq!(cs.candidates[1].p, 0.6);
    }

    #[test]
    fn vqa_tie_keeps_fixture_insertion_order() {
        let mut fx = MockFixtures::default();
        fx.vqa.insert(
            "img1|which side?".into(),
            vec![("left".into(), 0.5), ("right".into(), 0.5)],
        );
        let p = parse_program("ANS0=VQA(image=IMAGE,question='which side?')").unwrap();
        let cs = execute_step(&p.steps()[0], &env(), &ModuleRegistry::builtin(), &suite(fx)).unwrap();
        assert_eq!(cs.candidates[0].value, Value::Text("left".into()));
        assert_eq!(cs.candidates[1].value, Value::Text("right".into()));
    }

    #[test]
    fn result_is_the_identity_terminal() {
        let env = env()
            .bind("ANS0".into(), Value::Text("lamp".into()), None)
            .unwrap();
        let p = parse_program("FINAL=RESULT(var=ANS0)").unwrap();
        let cs = execute_step(
            &p.steps()[0],
            &env,
            &ModuleRegistry::builtin(),
            &suite(MockFixtures::default()),
        )
        .unwrap();
        assert_eq!(cs.candidates.len(), 1);
        assert_eq!(cs.candidates[0].p, 1.0);
        assert_eq!(cs.candidates[0].value, Value::Text("lamp".into()));
    }

    #[test]
    fn empty_backend_output_is_executor_failure() {
        let mut fx = MockFixtures::default();
        fx.detector.insert("img1|sofa".into(), vec![]);
        let p = parse_program("BOX0=LOC(image=IMAGE,object='sofa')").unwrap();
        let err =
            execute_step(&p.steps()[0], &env(), &ModuleRegistry::builtin(), &suite(fx)).unwrap_err();
        assert!(err.is_prunable(), "{err}");
    }

    #[test]
    fn fixture_miss_is_executor_failure() {
        let p = parse_program("BOX0=LOC(image=IMAGE,object='sofa')").unwrap();
        let err = execute_step(
            &p.steps()[0],
            &env(),
            &ModuleRegistry::builtin(),
            &suite(MockFixtures::default()),
        )
        .unwrap_err();
        assert!(err.is_prunable());
    }

    #[test]
    fn candidates_are_cut_at_top_k() {
        let mut fx = MockFixtures::default();
        fx.vqa.insert(
            "img1|q".into(),
            (0..8).map(|i| (format!("a{i}"), 0.1 * i as f64)).collect(),
        );
        let p = parse_program("ANS0=VQA(image=IMAGE,question='q')").unwrap();
        let reg = ModuleRegistry::builtin();
        let cs = execute_step(&p.steps()[0], &env(), &reg, &suite(fx)).unwrap();
        assert_eq!(cs.candidates.len(), reg.top_k);
        assert_eq!(cs.candidates[0].value, Value::Text("a7".into()));
    }

    #[test]
    fn execute_does_not_mutate_env() {
        let env = env();
        let before = env.names();
        let p = parse_program("FINAL=RESULT(var=IMAGE)").unwrap();
        let _ = execute_step(
            &p.steps()[0],
            &env,
            &ModuleRegistry::builtin(),
            &suite(MockFixtures::default()),
        )
        .unwrap();
        assert_eq!(env.names(), before);
    }
}
