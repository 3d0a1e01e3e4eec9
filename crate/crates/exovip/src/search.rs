//! Tree search over reasoning traces: beam selection guided by verification
//! scores (TRS) with optional planner-based re-ranking of the beam (PSC).

use std::io::Write;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::{plan, rank, BackendSuite, PlannerRequest};
use crate::dsl::{self, Program, Step};
use crate::runtime::exec::{bind_candidate, execute_step, Candidate};
use crate::runtime::registry::ModuleRegistry;
use crate::runtime::value::{Value, ValueTag};
use crate::runtime::Environment;
use crate::verification::{
    calibrate, verify_candidate_set, NegativeVocabulary, OppositePolicy,
};

#[derive(Debug, Error)]
pub enum SearchError {
    #[error("planner produced no executable program ({proposed} proposed, {malformed} malformed)")]
    PlanningFailed { proposed: usize, malformed: usize },
    #[error("open list exhausted without reaching a goal")]
    NoTraceFound,
    #[error("search exceeded max depth {0}")]
    DepthExceeded(usize),
    #[error("search params: {0}")]
    BadParams(String),
    #[error("planner backend: {0}")]
    Planner(#[from] crate::backends::BackendError),
    #[error("trace log: {0}")]
    Sink(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SearchParams {
    /// Beam width K: traces kept per iteration.
    pub k: usize,
    /// Post-rank width P, P < K.
    pub p: usize,
    /// Branching factor B: alternative programs requested from the planner.
    pub b: usize,
    pub max_depth: usize,
    /// Children emitted per proposed step (top-m candidates).
    pub children_per_step: usize,
    pub psc_enabled: bool,
    /// Optional closeness gate: PSC only runs when the beam's cum-score
    /// spread is below this value.
    pub psc_gate: Option<f64>,
}

impl Default for SearchParams {
    fn default() -> Self {
        SearchParams {
            k: 4,
            p: 2,
            b: 3,
            max_depth: 16,
            children_per_step: 1,
            psc_enabled: true,
            psc_gate: None,
        }
    }
}

impl SearchParams {
    pub fn validate(&self) -> Result<(), SearchError> {
        if self.k == 0 || self.b == 0 || self.children_per_step == 0 {
            return Err(SearchError::BadParams("K, B, m must be >= 1".into()));
        }
        if self.psc_enabled && !(1 <= self.p && self.p < self.k) {
            return Err(SearchError::BadParams(format!(
                "need 1 <= P < K, got P={} K={}",
                self.p, self.k
            )));
        }
        Ok(())
    }
}

/// Ablation switches plus search parameters for one run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SearchConfig {
    pub params: SearchParams,
    /// Verification scoring on candidates (needed by calibration and TRS).
    pub verify: bool,
    pub negative_sampling: bool,
    pub calibration: bool,
    /// Tree search over branches; off degenerates to greedy execution of
    /// the planner's first program.
    pub trs: bool,
    pub policy: OppositePolicy,
    pub planner_seed: u64,
    #[serde(default)]
    pub in_context_examples: Vec<(String, String)>,
    #[serde(default = "default_rank_instruction")]
    pub rank_instruction: String,
}

fn default_rank_instruction() -> String {
    "Rank the candidate reasoning traces from best to worst for answering the question. \
     Reply with the trace numbers in order, comma separated."
        .to_string()
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            params: SearchParams::default(),
            verify: true,
            negative_sampling: true,
            calibration: true,
            trs: true,
            policy: OppositePolicy::Sampled { seed: 0 },
            planner_seed: 0,
            in_context_examples: Vec::new(),
            rank_instruction: default_rank_instruction(),
        }
    }
}

struct NodeInner {
    id: u64,
    parent: Option<TraceNode>,
    /// Root nodes carry no step.
    step: Option<Step>,
    chosen: Option<Candidate>,
    env: Environment,
    /// s_final of the chosen candidate; None for symbolic steps and roots,
    /// which are excluded from the path mean.
    score: Option<f64>,
    score_sum: f64,
    score_count: usize,
    depth: usize,
}

/// One node of the reasoning-trace tree; cheap to clone and share.
#[derive(Clone)]
pub struct TraceNode {
    inner: Arc<NodeInner>,
}

impl TraceNode {
    fn root(id: u64, env: Environment) -> TraceNode {
        TraceNode {
            inner: Arc::new(NodeInner {
                id,
                parent: None,
                step: None,
                chosen: None,
                env,
                score: None,
                score_sum: 0.0,
                score_count: 0,
                depth: 0,
            }),
        }
    }

    pub fn id(&self) -> u64 {
        self.inner.id
    }

    pub fn depth(&self) -> usize {
        self.inner.depth
    }

    pub fn step(&self) -> Option<&Step> {
        self.inner.step.as_ref()
    }

    pub fn chosen(&self) -> Option<&Candidate> {
        self.inner.chosen.as_ref()
    }

    pub fn env(&self) -> &Environment {
        &self.inner.env
    }

    pub fn score(&self) -> Option<f64> {
        self.inner.score
    }

    /// Mean s_final along the path, counting only verifiable steps.
    pub fn cum_score(&self) -> f64 {
        if self.inner.score_count == 0 {
            0.0
        } else {
            self.inner.score_sum / self.inner.score_count as f64
        }
    }

    pub fn is_goal(&self) -> bool {
        self.inner
            .step
            .as_ref()
            .is_some_and(|s| s.op_name == dsl::RESULT_OP)
    }

    /// Steps executed from the root to this node, in order.
    pub fn executed_steps(&self) -> Vec<Step> {
        let mut steps = Vec::with_capacity(self.inner.depth);
        let mut cur = Some(self);
        while let Some(node) = cur {
            if let Some(s) = &node.inner.step {
                steps.push(s.clone());
            }
            cur = node.inner.parent.as_ref();
        }
        steps.reverse();
        steps
    }

    /// Path of nodes from the root (exclusive) to this node.
    pub fn path(&self) -> Vec<TraceNode> {
        let mut nodes = Vec::new();
        let mut cur = Some(self.clone());
        while let Some(node) = cur {
            if node.inner.step.is_some() {
                nodes.push(node.clone());
            }
            cur = node.inner.parent.clone();
        }
        nodes.reverse();
        nodes
    }

    /// Text rendering of the trace for the PSC ranker.
    pub fn render_trace(&self) -> String {
        self.path()
            .iter()
            .map(|n| {
                let step = n.inner.step.as_ref().expect("path nodes carry steps");
                let value = n
                    .inner
                    .chosen
                    .as_ref()
                    .map(|c| c.value.summary())
                    .unwrap_or_default();
                match n.inner.score {
                    Some(s) => format!("{} -> {} (score {:.3})", step.render(), value, s),
                    None => format!("{} -> {}", step.render(), value),
                }
            })
            .collect::<Vec<_>>()
            .join("\n")
    }
}

/// One line of the structured trace log.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TraceRecord {
    pub id: u64,
    pub parent: Option<u64>,
    pub line: usize,
    pub step: String,
    pub value: String,
    pub p: f64,
    pub w: Option<f64>,
    pub p_cal: Option<f64>,
    pub s_itm: Option<f64>,
    pub s_cap: Option<f64>,
    pub s_vqa: Option<f64>,
    pub s_final: Option<f64>,
    pub cum_score: f64,
}

impl TraceRecord {
    pub fn from_node(node: &TraceNode) -> Option<TraceRecord> {
        let step = node.step()?;
        let chosen = node.chosen()?;
        let report = chosen.report.as_ref();
        Some(TraceRecord {
            id: node.id(),
            parent: node.inner.parent.as_ref().map(|p| p.id()),
            line: step.line_no,
            step: step.render(),
            value: chosen.value.summary(),
            p: chosen.p,
            w: chosen.w,
            p_cal: chosen.p_cal,
            s_itm: report.and_then(|r| r.s_itm),
            s_cap: report.and_then(|r| r.s_cap),
            s_vqa: report.and_then(|r| r.s_vqa),
            s_final: node.score(),
            cum_score: node.cum_score(),
        })
    }
}

/// Terminal line of a trace log, naming the goal node the search returned.
/// Distinguished from node lines by its `final_node` field.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FinalRecord {
    pub final_node: u64,
    pub answer: String,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct PlanStats {
    pub proposed: usize,
    pub malformed: usize,
    /// Steps in the executed path's program.
    pub plan_steps: usize,
    /// Times the PSC ranker failed and the score order was used instead.
    pub rank_fallbacks: usize,
    pub nodes_expanded: usize,
    pub branches_pruned: usize,
}

pub struct SearchOutcome {
    pub path: Vec<TraceNode>,
    pub answer: Value,
    pub stats: PlanStats,
}

impl SearchOutcome {
    /// Mean verification score of the returned path (verifiable steps only).
    pub fn mean_score(&self) -> f64 {
        self.path.last().map_or(0.0, |n| n.cum_score())
    }
}

struct SearchCtx<'a, 's> {
    registry: &'a ModuleRegistry,
    suite: &'a BackendSuite,
    vocab: &'a NegativeVocabulary,
    cfg: &'a SearchConfig,
    programs: Vec<Program>,
    next_id: u64,
    stats: PlanStats,
    sink: Option<&'s mut dyn Write>,
}

impl SearchCtx<'_, '_> {
    fn log(&mut self, node: &TraceNode) -> Result<(), SearchError> {
        if let (Some(sink), Some(record)) = (self.sink.as_mut(), TraceRecord::from_node(node)) {
            serde_json::to_writer(&mut **sink, &record)
                .map_err(|e| std::io::Error::new(std::io::ErrorKind::Other, e))?;
            sink.write_all(b"\n")?;
        }
        Ok(())
    }

    fn log_final(&mut self, node: &TraceNode, answer: &Value) -> Result<(), SearchError> {
        if let Some(sink) = self.sink.as_mut() {
            let record = FinalRecord { final_node: node.id(), answer: answer.summary() };
            serde_json::to_writer(&mut **sink, &record)
                .map_err(|e| std::io::Error::new(std::io::ErrorKind::Other, e))?;
            sink.write_all(b"\n")?;
        }
        Ok(())
    }

    /// Distinct next steps proposed for a node: each pooled program whose
    /// step prefix matches the node's executed steps contributes its next
    /// step.
    fn proposals(&self, node: &TraceNode) -> Vec<Step> {
        let prefix = node.executed_steps();
        let mut out: Vec<Step> = Vec::new();
        for program in &self.programs {
            let steps = program.steps();
            if steps.len() <= prefix.len() {
                continue;
            }
            if steps[..prefix.len()] != prefix[..] {
                continue;
            }
            let next = steps[prefix.len()].clone();
            if !out.contains(&next) {
                out.push(next);
            }
        }
        out
    }
}

/// Expands one node: executes every proposed next step, verifies and
/// calibrates the candidates, and emits one child per surviving candidate.
/// Failed branches are pruned, never fatal.
fn expand(node: &TraceNode, ctx: &mut SearchCtx<'_, '_>) -> Result<Vec<TraceNode>, SearchError> {
    let mut children = Vec::new();
    let proposals = ctx.proposals(node);
    for step in proposals {
        let mut cs = match execute_step(&step, node.env(), ctx.registry, ctx.suite) {
            Ok(cs) => cs,
            Err(_) => {
                ctx.stats.branches_pruned += 1;
                continue;
            }
        };
        let entry = ctx
            .registry
            .get(&step.op_name)
            .expect("execute_step resolved the entry");
        let verified = ctx.cfg.verify && entry.verifiable && !entry.verifiers.is_empty();
        if verified {
            let image = step_image(&step, node.env());
            let ok = image.is_some()
                && verify_candidate_set(
                    &mut cs,
                    image.as_ref().unwrap(),
                    entry,
                    ctx.vocab,
                    ctx.cfg.policy,
                    ctx.cfg.negative_sampling,
                    ctx.suite,
                )
                .is_ok();
            if !ok {
                ctx.stats.branches_pruned += 1;
                continue;
            }
            if ctx.cfg.calibration && calibrate(&mut cs, entry.tau).is_err() {
                ctx.stats.branches_pruned += 1;
                continue;
            }
        }
        let m = ctx.cfg.params.children_per_step.min(cs.candidates.len());
        for (idx, candidate) in cs.candidates.iter().take(m).enumerate() {
            let env = match bind_candidate(node.env(), &step, candidate, idx) {
                Ok(env) => env,
                Err(_) => {
                    ctx.stats.branches_pruned += 1;
                    continue;
                }
            };
            let score = if verified { candidate.s_final() } else { None };
            let (score_sum, score_count) = match score {
                Some(s) => (node.inner.score_sum + s, node.inner.score_count + 1),
                None => (node.inner.score_sum, node.inner.score_count),
            };
            ctx.next_id += 1;
            let child = TraceNode {
                inner: Arc::new(NodeInner {
                    id: ctx.next_id,
                    parent: Some(node.clone()),
                    step: Some(step.clone()),
                    chosen: Some(candidate.clone()),
                    env,
                    score,
                    score_sum,
                    score_count,
                    depth: node.depth() + 1,
                }),
            };
            ctx.log(&child)?;
            children.push(child);
        }
        ctx.stats.nodes_expanded += 1;
    }
    Ok(children)
}

/// The image a step's candidates are verified against: the step's `image`
/// argument when present, else the root IMAGE binding.
fn step_image(step: &Step, env: &Environment) -> Option<crate::runtime::value::ImageHandle> {
    use crate::dsl::ArgValue;
    let from_arg = step.args.iter().find_map(|(name, v)| match (name.as_str(), v) {
        ("image", ArgValue::Var(var)) => env.lookup(var).and_then(|v| v.as_image().cloned()),
        _ => None,
    });
    from_arg.or_else(|| env.lookup("IMAGE").and_then(|v| v.as_image().cloned()))
}

/// Stable top-K selection by cumulative score (descending; insertion order
/// preserved on ties).
pub fn trs_select(mut open: Vec<TraceNode>, k: usize) -> Vec<TraceNode> {
    open.sort_by(|a, b| {
        b.cum_score()
            .partial_cmp(&a.cum_score())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    open.truncate(k);
    open
}

/// Re-ranks the beam with the planner-side ranker and keeps the top P.
/// A failed or malformed ranker reply falls back to the verification-score
/// order already present in `nodes`.
pub fn psc_rank(
    nodes: Vec<TraceNode>,
    p: usize,
    suite: &BackendSuite,
    instruction: &str,
    fallbacks: &mut usize,
) -> Vec<TraceNode> {
    if nodes.len() <= 1 {
        return nodes;
    }
    let rendered: Vec<String> = nodes.iter().map(TraceNode::render_trace).collect();
    match rank(suite.ranker.as_ref(), &rendered, instruction) {
        Ok(perm) => {
            let mut ranked: Vec<TraceNode> =
                perm.into_iter().map(|i| nodes[i].clone()).collect();
            ranked.truncate(p);
            ranked
        }
        Err(_) => {
            *fallbacks += 1;
            let mut fallback = nodes;
            fallback.truncate(p);
            fallback
        }
    }
}

/// Runs the full loop: plan programs, then iterate sort / top-K / PSC /
/// goal-test / expand until a goal trace is found or the open list empties.
pub fn search(
    query: &str,
    inputs: &[(String, Value)],
    registry: &ModuleRegistry,
    suite: &BackendSuite,
    vocab: &NegativeVocabulary,
    cfg: &SearchConfig,
    sink: Option<&mut dyn Write>,
) -> Result<SearchOutcome, SearchError> {
    cfg.params.validate()?;
    let n_programs = if cfg.trs { cfg.params.b } else { 1 };
    let mut req = PlannerRequest::new(query, n_programs, cfg.planner_seed);
    req.in_context_examples = cfg.in_context_examples.clone();
    let texts = plan(suite.planner.as_ref(), &req)?;
    let proposed = texts.len();

    let declared: Vec<(&str, ValueTag)> = inputs
        .iter()
        .map(|(name, value)| (name.as_str(), value.tag()))
        .collect();
    let mut programs = Vec::new();
    let mut malformed = 0usize;
    for text in &texts {
        match dsl::parse_program(text) {
            Ok(program) => {
                if dsl::validate(&program, registry, &declared).is_clean() {
                    programs.push(program);
                } else {
                    malformed += 1;
                }
            }
            Err(_) => malformed += 1,
        }
    }
    if programs.is_empty() {
        return Err(SearchError::PlanningFailed { proposed, malformed });
    }

    let env = Environment::with_inputs(inputs.iter().cloned());
    let mut ctx = SearchCtx {
        registry,
        suite,
        vocab,
        cfg,
        programs,
        next_id: 0,
        stats: PlanStats { proposed, malformed, ..Default::default() },
        sink,
    };

    // Distinct roots per program first-step set collapse into one shared
    // root: proposals at depth 0 already enumerate every program.
    let root = TraceNode::root(0, env);
    let beam_width = if cfg.trs { cfg.params.k } else { 1 };

    let mut open: Vec<TraceNode> = vec![root];
    let mut depth_exceeded = false;
    while !open.is_empty() {
        let mut closed = trs_select(std::mem::take(&mut open), beam_width);
        if cfg.params.psc_enabled && closed.iter().any(|n| n.depth() > 0) {
            let gate_open = match cfg.params.psc_gate {
                None => true,
                Some(eps) => {
                    let scores: Vec<f64> = closed.iter().map(TraceNode::cum_score).collect();
                    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let min = scores.iter().cloned().fold(f64::INFINITY, f64::min);
                    max - min < eps
                }
            };
            if gate_open {
                closed = psc_rank(
                    closed,
                    cfg.params.p,
                    suite,
                    &cfg.rank_instruction,
                    &mut ctx.stats.rank_fallbacks,
                );
            }
        }
        for node in closed {
            if node.is_goal() {
                let path = node.path();
                let answer = node
                    .chosen()
                    .map(|c| c.value.clone())
                    .expect("goal nodes carry a candidate");
                ctx.stats.plan_steps = path.len();
                ctx.log_final(&node, &answer)?;
                return Ok(SearchOutcome { path, answer, stats: ctx.stats });
            }
            if node.depth() >= cfg.params.max_depth {
                depth_exceeded = true;
                continue;
            }
            let children = expand(&node, &mut ctx)?;
            open.extend(children);
        }
    }
    if depth_exceeded {
        Err(SearchError::DepthExceeded(cfg.params.max_depth))
    } else {
        Err(SearchError::NoTraceFound)
    }
}
