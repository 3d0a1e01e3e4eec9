//! Benchmark runner: executes a corpus under one ablation configuration and
//! aggregates metrics. Timings are reported separately so the metrics file is
//! byte-identical across repeated runs.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::{BackendError, BackendSuite, Planner, PlannerRequest};
use crate::runtime::registry::ModuleRegistry;
use crate::runtime::temporal::locate_temporal_segment;
use crate::runtime::value::Value;
use crate::runtime::{part_alignment_score, Environment};
use crate::search::{search, SearchConfig, SearchError, SearchParams};
use crate::verification::{NegativeVocabulary, OppositePolicy};

use super::corpus::{Corpus, Gold, TaskInstance, TaskKind};
use super::metrics::{box_iou, interval_iou, mean};

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("trace log: {0}")]
    Io(#[from] std::io::Error),
    #[error("backend: {0}")]
    Backend(#[from] BackendError),
    #[error("search config: {0}")]
    Search(#[from] SearchError),
}

/// Which stages of the method are active.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct AblationFlags {
    pub negative_sampling: bool,
    pub calibration: bool,
    pub trs: bool,
    pub psc: bool,
}

impl Default for AblationFlags {
    fn default() -> Self {
        AblationFlags { negative_sampling: true, calibration: true, trs: true, psc: true }
    }
}

impl AblationFlags {
    pub fn baseline() -> Self {
        AblationFlags { negative_sampling: false, calibration: false, trs: false, psc: false }
    }

    pub fn label(&self) -> String {
        let mut parts = vec!["base"];
        if self.negative_sampling {
            parts.push("neg");
        }
        if self.calibration {
            parts.push("cal");
        }
        if self.trs {
            parts.push("trs");
        }
        if self.psc {
            parts.push("psc");
        }
        parts.join("+")
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    #[serde(default)]
    pub flags: AblationFlags,
    #[serde(default)]
    pub search: SearchParams,
    #[serde(default)]
    pub planner_seed: u64,
    #[serde(default)]
    pub opposite_seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            flags: AblationFlags::default(),
            search: SearchParams::default(),
            planner_seed: 0,
            opposite_seed: 0,
        }
    }
}

impl RunConfig {
    pub fn from_file(path: &Path) -> std::io::Result<RunConfig> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text)
            .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
    }

    /// Lowers ablation flags into the search configuration. Verification is
    /// active whenever any stage that consumes scores is on; with TRS off the
    /// beam degenerates to greedy selection and PSC is meaningless.
    pub fn to_search_config(&self) -> SearchConfig {
        let f = self.flags;
        let verify = f.calibration || f.trs || f.psc || f.negative_sampling;
        let mut params = self.search;
        params.psc_enabled = f.psc && f.trs;
        if !f.trs {
            params.children_per_step = 1;
        }
        SearchConfig {
            params,
            verify,
            negative_sampling: f.negative_sampling,
            calibration: f.calibration,
            trs: f.trs,
            policy: OppositePolicy::Sampled { seed: self.opposite_seed },
            planner_seed: self.planner_seed,
            in_context_examples: Vec::new(),
            rank_instruction: SearchConfig::default().rank_instruction,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InstanceRecord {
    pub id: String,
    pub kind: TaskKind,
    pub predicted: String,
    pub correct: bool,
    pub iou: Option<f64>,
    /// False when planning produced no executable program.
    pub executable: bool,
    pub plan_steps: usize,
    pub mean_score: f64,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsReport {
    pub config: String,
    pub n_instances: usize,
    /// Exact-match accuracy over qa, nlvr, abstract and editing-mock tasks.
    pub accuracy: Option<f64>,
    pub mean_iou: Option<f64>,
    pub grounding_acc_at_05: Option<f64>,
    pub interval_hit_rate: Option<f64>,
    pub mean_plan_steps: f64,
    /// Fraction of planner-driven instances with no executable program.
    pub unexecutable_rate: f64,
    pub mean_trace_score: f64,
    pub records: Vec<InstanceRecord>,
}

impl MetricsReport {
    pub fn from_records(label: &str, records: Vec<InstanceRecord>) -> MetricsReport {
        let acc_kinds = [TaskKind::Qa, TaskKind::Nlvr, TaskKind::Abstract, TaskKind::EditingMock];
        let acc: Vec<f64> = records
            .iter()
            .filter(|r| acc_kinds.contains(&r.kind))
            .map(|r| r.correct as u8 as f64)
            .collect();
        let ious: Vec<f64> = records
            .iter()
            .filter(|r| r.kind == TaskKind::Grounding)
            .map(|r| r.iou.unwrap_or(0.0))
            .collect();
        let hits: Vec<f64> = records
            .iter()
            .filter(|r| r.kind == TaskKind::VideoQa)
            .map(|r| r.correct as u8 as f64)
            .collect();
        let planned: Vec<&InstanceRecord> =
            records.iter().filter(|r| r.kind != TaskKind::VideoQa && r.kind != TaskKind::Abstract).collect();
        let unexecutable = planned.iter().filter(|r| !r.executable).count();
        let scored: Vec<f64> = planned
            .iter()
            .filter(|r| r.executable && r.error.is_none())
            .map(|r| r.mean_score)
            .collect();
        MetricsReport {
            config: label.to_string(),
            n_instances: records.len(),
            accuracy: if acc.is_empty() { None } else { Some(mean(&acc)) },
            mean_iou: if ious.is_empty() { None } else { Some(mean(&ious)) },
            grounding_acc_at_05: if ious.is_empty() {
                None
            } else {
                Some(mean(
                    &ious.iter().map(|&i| (i >= 0.5) as u8 as f64).collect::<Vec<_>>(),
                ))
            },
            interval_hit_rate: if hits.is_empty() { None } else { Some(mean(&hits)) },
            mean_plan_steps: mean(
                &planned.iter().map(|r| r.plan_steps as f64).collect::<Vec<_>>(),
            ),
            unexecutable_rate: if planned.is_empty() {
                0.0
            } else {
                unexecutable as f64 / planned.len() as f64
            },
            mean_trace_score: mean(&scored),
            records,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Wall-clock stage timings for one run; kept out of the metrics report so
/// that file stays deterministic.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TimingReport {
    pub total_ms: f64,
    pub planning_ms: f64,
    pub module_ms: f64,
}

/// Planner wrapper accumulating time spent inside the planner backend.
struct TimedPlanner {
    inner: Arc<dyn Planner>,
    elapsed: Arc<Mutex<Duration>>,
}

impl Planner for TimedPlanner {
    fn plan(&self, req: &PlannerRequest) -> Result<Vec<String>, BackendError> {
        let t0 = Instant::now();
        let out = self.inner.plan(req);
        *self.elapsed.lock().unwrap() += t0.elapsed();
        out
    }

    fn health(&self) -> Result<(), BackendError> {
        self.inner.health()
    }
}

fn predicted_text(value: &Value) -> String {
    match value {
        Value::Text(t) => t.clone(),
        Value::Image(img) => img.handle.clone(),
        Value::Number(n) => {
            if n.fract() == 0.0 {
                format!("{}", *n as i64)
            } else {
                format!("{n}")
            }
        }
        Value::Bool(b) => if *b { "yes" } else { "no" }.to_string(),
        other => other.summary(),
    }
}

fn value_as_bool(value: &Value) -> Option<bool> {
    match value {
        Value::Bool(b) => Some(*b),
        Value::Text(t) => match t.trim().to_ascii_lowercase().as_str() {
            "yes" | "true" => Some(true),
            "no" | "false" => Some(false),
            _ => None,
        },
        _ => None,
    }
}

fn search_inputs(inst: &TaskInstance) -> Vec<(String, Value)> {
    let mut inputs = vec![("IMAGE".to_string(), Value::Image(inst.images[0].clone()))];
    if inst.images.len() == 2 {
        inputs.push(("LEFT".to_string(), Value::Image(inst.images[0].clone())));
        inputs.push(("RIGHT".to_string(), Value::Image(inst.images[1].clone())));
    }
    inputs
}

fn record(inst: &TaskInstance) -> InstanceRecord {
    InstanceRecord {
        id: inst.id.clone(),
        kind: inst.kind,
        predicted: String::new(),
        correct: false,
        iou: None,
        executable: true,
        plan_steps: 0,
        mean_score: 0.0,
        error: None,
    }
}

fn eval_video(inst: &TaskInstance) -> InstanceRecord {
    let mut rec = record(inst);
    let frames = inst.frame_scores.as_deref().unwrap_or_default();
    match locate_temporal_segment(frames) {
        Ok(seg) => {
            rec.predicted = format!("[{}..{}]", seg.start, seg.end);
            if let Gold::Interval { start, end } = inst.gold {
                let iou = interval_iou((seg.start, seg.end), (start, end));
                rec.iou = Some(iou);
                rec.correct = iou >= 0.5;
            }
        }
        Err(e) => rec.error = Some(e.to_string()),
    }
    rec
}

fn eval_abstract(inst: &TaskInstance, suite: &BackendSuite) -> InstanceRecord {
    let mut rec = record(inst);
    let options = inst.options.as_deref().unwrap_or_default();
    let visual = match suite.embedder.embed_image_parts(&inst.images[0]) {
        Ok(v) => v,
        Err(e) => {
            rec.error = Some(e.to_string());
            return rec;
        }
    };
    let mut best: Option<(usize, f64)> = None;
    for (idx, option) in options.iter().enumerate() {
        let mut text_embs = Vec::new();
        let mut failed = None;
        for part in option.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            match suite.embedder.embed_text(part) {
                Ok(e) => text_embs.push(e),
                Err(e) => {
                    failed = Some(e);
                    break;
                }
            }
        }
        if let Some(e) = failed {
            rec.error = Some(e.to_string());
            return rec;
        }
        match part_alignment_score(&text_embs, &visual) {
            Ok(alignment) => {
                if best.is_none_or(|(_, s)| alignment.score > s) {
                    best = Some((idx, alignment.score));
                }
            }
            Err(e) => {
                rec.error = Some(e.to_string());
                return rec;
            }
        }
    }
    if let Some((idx, score)) = best {
        rec.predicted = options[idx].clone();
        rec.mean_score = score;
        if let Gold::Index(gold) = inst.gold {
            rec.correct = idx == gold;
        }
    } else {
        rec.error = Some("no option scored".into());
    }
    rec
}

fn eval_search(
    inst: &TaskInstance,
    scfg: &SearchConfig,
    registry: &ModuleRegistry,
    suite: &BackendSuite,
    vocab: &NegativeVocabulary,
    sink: Option<&mut dyn Write>,
) -> InstanceRecord {
    let mut rec = record(inst);
    let inputs = search_inputs(inst);
    match search(&inst.query, &inputs, registry, suite, vocab, scfg, sink) {
        Ok(outcome) => {
            rec.predicted = predicted_text(&outcome.answer);
            rec.plan_steps = outcome.stats.plan_steps;
            rec.mean_score = outcome.mean_score();
            rec.correct = match &inst.gold {
                Gold::Answer(gold) => {
                    rec.predicted.trim().eq_ignore_ascii_case(gold.trim())
                }
                Gold::Bool(gold) => value_as_bool(&outcome.answer) == Some(*gold),
                Gold::Box(gold) => {
                    if let Value::Box(b) = &outcome.answer {
                        let iou = box_iou(b, gold);
                        rec.iou = Some(iou);
                        iou >= 0.5
                    } else {
                        rec.iou = Some(0.0);
                        false
                    }
                }
                _ => false,
            };
            if rec.kind == TaskKind::Grounding && rec.iou.is_none() {
                rec.iou = Some(0.0);
            }
        }
        Err(SearchError::PlanningFailed { .. }) => {
            rec.executable = false;
            rec.error = Some("no executable plan".into());
            if rec.kind == TaskKind::Grounding {
                rec.iou = Some(0.0);
            }
        }
        Err(e) => {
            rec.error = Some(e.to_string());
            if rec.kind == TaskKind::Grounding {
                rec.iou = Some(0.0);
            }
        }
    }
    rec
}

/// Runs every instance and aggregates. When `trace_dir` is given, one
/// JSON-lines trace log per planner-driven instance is written there.
pub fn run_benchmark(
    corpus: &Corpus,
    cfg: &RunConfig,
    registry: &ModuleRegistry,
    suite: &BackendSuite,
    vocab: &NegativeVocabulary,
    trace_dir: Option<&Path>,
) -> Result<(MetricsReport, TimingReport), BenchError> {
    let scfg = cfg.to_search_config();
    scfg.params.validate()?;
    let planning = Arc::new(Mutex::new(Duration::ZERO));
    let timed_suite = BackendSuite {
        planner: Arc::new(TimedPlanner {
            inner: suite.planner.clone(),
            elapsed: planning.clone(),
        }),
        ..suite.clone()
    };
    if let Some(dir) = trace_dir {
        std::fs::create_dir_all(dir)?;
    }

    let t0 = Instant::now();
    let mut records = Vec::with_capacity(corpus.instances.len());
    for inst in &corpus.instances {
        let rec = match inst.kind {
            TaskKind::VideoQa => eval_video(inst),
            TaskKind::Abstract => eval_abstract(inst, &timed_suite),
            _ => {
                let mut file = match trace_dir {
                    Some(dir) => Some(BufWriter::new(File::create(
                        dir.join(format!("trace_{}.jsonl", inst.id)),
                    )?)),
                    None => None,
                };
                let sink = file.as_mut().map(|f| f as &mut dyn Write);
                let rec = eval_search(inst, &scfg, registry, &timed_suite, vocab, sink);
                if let Some(mut f) = file {
                    f.flush()?;
                }
                rec
            }
        };
        records.push(rec);
    }
    let total = t0.elapsed();
    let planning = *planning.lock().unwrap();

    let report = MetricsReport::from_records(&cfg.flags.label(), records);
    let timings = TimingReport {
        total_ms: total.as_secs_f64() * 1e3,
        planning_ms: planning.as_secs_f64() * 1e3,
        module_ms: (total.saturating_sub(planning)).as_secs_f64() * 1e3,
    };
    Ok((report, timings))
}

/// Greedy single-step convenience used by tests: executes a fixed program
/// without planning or search.
pub fn run_program_greedy(
    program: &crate::dsl::Program,
    inputs: &[(String, Value)],
    registry: &ModuleRegistry,
    suite: &BackendSuite,
) -> Result<Value, crate::runtime::RuntimeError> {
    use crate::runtime::exec::{bind_candidate, execute_step};
    let mut env = Environment::with_inputs(inputs.iter().cloned());
    let mut last = None;
    for step in program.steps() {
        let cs = execute_step(step, &env, registry, suite)?;
        let candidate = cs.candidates.first().expect("non-empty candidate set").clone();
        env = bind_candidate(&env, step, &candidate, 0).expect("fresh variable");
        last = Some(candidate.value);
    }
    Ok(last.expect("programs are non-empty"))
}
