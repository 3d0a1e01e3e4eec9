//! Synthetic benchmark with a controllable verifier signal.
//!
//! Each instance is a two-hop question: the first VQA answer feeds the
//! second question, so an early wrong pick poisons the rest of the trace.
//! Module probabilities are noisy (per-step accuracy `module_acc`), while
//! the planted verifier scores separate right from wrong answers with a
//! tunable `strength` in [0, 1]; at 0 they are pure noise.

use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backends::mock::{MockBackend, MockFixtures};
use crate::backends::{BackendError, BackendSuite, Ranker};
use crate::runtime::registry::{ModuleRegistry, VerifierKind};
use crate::runtime::value::ImageHandle;
use crate::search::SearchParams;
use crate::verification::{NegativeVocabulary, ScoredToken};

use super::bench::{run_benchmark, AblationFlags, BenchError, MetricsReport, RunConfig};
use super::corpus::{Corpus, Gold, TaskInstance, TaskKind};
use super::metrics::spearman;

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SimConfig {
    pub n_instances: usize,
    pub seed: u64,
    /// Verifier signal strength in [0, 1].
    pub strength: f64,
    /// Per-step probability that the module ranks the right answer first.
    pub module_acc: f64,
    /// Probability that the trace ranker prefers a correct trace.
    pub ranker_bias: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            n_instances: 60,
            seed: 17,
            strength: 0.7,
            module_acc: 0.55,
            ranker_bias: 0.9,
        }
    }
}

/// Ranker that recognizes planted correct answers (their tokens carry a
/// `_c` suffix) and prefers them with probability `bias`; otherwise it
/// returns the order it was given. Fully deterministic per input.
pub struct OracleBiasedRanker {
    pub bias: f64,
    pub seed: u64,
}

fn fnv1a(text: &str) -> u64 {
    let mut hash: u64 = 0xcbf29ce484222325;
    for b in text.bytes() {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x100000001b3);
    }
    hash
}

impl Ranker for OracleBiasedRanker {
    fn rank_reply(&self, traces: &[String], _instruction: &str) -> Result<String, BackendError> {
        let h = fnv1a(&traces.join("\x1f")) ^ self.seed;
        let u = (h >> 11) as f64 / (1u64 << 53) as f64;
        let mut order: Vec<usize> = (0..traces.len()).collect();
        if u < self.bias {
            // Judge each trace by its latest step's value.
            let good: Vec<bool> = traces
                .iter()
                .map(|t| t.lines().last().unwrap_or_default().contains("_c"))
                .collect();
            order.sort_by_key(|&i| !good[i]);
        }
        Ok(order
            .iter()
            .map(|i| (i + 1).to_string())
            .collect::<Vec<_>>()
            .join(","))
    }
}

/// The generated world: corpus plus every fixture the run needs.
pub struct SimWorld {
    pub corpus: Corpus,
    pub fixtures: MockFixtures,
    pub vocab: NegativeVocabulary,
    pub registry: ModuleRegistry,
}

fn clamp01(p: f64) -> f64 {
    p.clamp(0.01, 0.99)
}

/// Places the correct answer first with probability `acc`, else second.
fn arrange(
    correct: &str,
    wrong1: &str,
    wrong2: &str,
    acc: f64,
    rng: &mut ChaCha8Rng,
) -> Vec<(String, f64)> {
    let probs = [0.42, 0.38, 0.20];
    let order = if rng.gen::<f64>() < acc {
        [correct, wrong1, wrong2]
    } else {
        [wrong1, correct, wrong2]
    };
    order
        .iter()
        .zip(probs)
        .map(|(t, p)| (t.to_string(), p))
        .collect()
}

pub fn build_world(cfg: &SimConfig) -> SimWorld {
    let mut fx = MockFixtures::default();
    let mut instances = Vec::with_capacity(cfg.n_instances);
    let sigma = cfg.strength.clamp(0.0, 1.0);

    for k in 0..cfg.n_instances {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ (k as u64).wrapping_mul(0x9e3779b97f4a7c15));
        let image = ImageHandle { handle: format!("sim{k}"), width: 64, height: 64 };
        let query = format!("sim query {k}");
        let q1 = format!("first question {k}");

        let s1 = [format!("i{k}a_c"), format!("i{k}a_w1"), format!("i{k}a_w2")];
        let s2 = [format!("i{k}b_c"), format!("i{k}b_w1"), format!("i{k}b_w2")];
        let off = [format!("i{k}b_x1"), format!("i{k}b_x2")];

        fx.vqa.insert(
            format!("sim{k}|{q1}"),
            arrange(&s1[0], &s1[1], &s1[2], cfg.module_acc, &mut rng),
        );
        fx.vqa.insert(
            format!("sim{k}|{}", s1[0]),
            arrange(&s2[0], &s2[1], &s2[2], cfg.module_acc, &mut rng),
        );
        fx.vqa.insert(
            format!("sim{k}|{}", s1[1]),
            vec![(off[0].clone(), 0.6), (off[1].clone(), 0.4)],
        );
        fx.vqa.insert(
            format!("sim{k}|{}", s1[2]),
            vec![(off[1].clone(), 0.6), (off[0].clone(), 0.4)],
        );

        let mut plant = |token: &str, dir: f64, rng: &mut ChaCha8Rng| {
            let noise = (1.0 - sigma) * rng.gen_range(-0.4..0.4);
            let p_yes = clamp01(0.5 + 0.45 * dir * sigma + noise);
            fx.vqa_yesno.insert(
                format!("sim{k}|Is there any {token} in the image?"),
                (p_yes, 1.0 - p_yes),
            );
        };
        plant(&s1[0], 1.0, &mut rng);
        plant(&s2[0], 1.0, &mut rng);
        for t in s1[1..].iter().chain(&s2[1..]).chain(&off) {
            plant(t, -1.0, &mut rng);
        }
        fx.vqa_yesno
            .insert(format!("sim{k}|Is there any nothing in the image?"), (0.5, 0.5));

        let program = format!(
            "A0=VQA(image=IMAGE,question='{q1}')\n\
             A1=VQA(image=IMAGE,question=A0)\n\
             FINAL=RESULT(var=A1)"
        );
        fx.plans.insert(format!("{query}|0"), vec![program]);

        instances.push(TaskInstance {
            id: format!("sim{k}"),
            kind: TaskKind::Qa,
            query,
            images: vec![image],
            frame_scores: None,
            options: None,
            gold: Gold::Answer(s2[0].clone()),
        });
    }

    let vocab = NegativeVocabulary {
        entries: Default::default(),
        fallback: vec![ScoredToken { token: "nothing".into(), sim: 0.0 }],
        theta: 0.5,
    };

    // The synthetic world only plants yes/no probes, so VQA verification
    // runs on that single sub-verifier.
    let mut entries: Vec<_> = ModuleRegistry::builtin().ops().cloned().collect();
    for e in &mut entries {
        if e.name == "VQA" {
            e.verifiers = vec![VerifierKind::Vqa];
        }
    }
    let registry = ModuleRegistry::from_entries(entries, 4).expect("builtin stays valid");

    SimWorld { corpus: Corpus::new(instances).expect("generated corpus is valid"), fixtures: fx, vocab, registry }
}

fn sim_params() -> SearchParams {
    SearchParams { k: 4, p: 2, b: 3, max_depth: 8, children_per_step: 3, psc_enabled: true, psc_gate: None }
}

/// Runs the generated corpus under one ablation configuration.
pub fn run_simulation(
    cfg: &SimConfig,
    flags: AblationFlags,
    trace_dir: Option<&Path>,
) -> Result<MetricsReport, BenchError> {
    let world = build_world(cfg);
    let suite = BackendSuite {
        ranker: Arc::new(OracleBiasedRanker { bias: cfg.ranker_bias, seed: cfg.seed }),
        ..MockBackend::suite(world.fixtures)
    };
    let run = RunConfig { flags, search: sim_params(), planner_seed: 0, opposite_seed: cfg.seed };
    let (report, _) = run_benchmark(&world.corpus, &run, &world.registry, &suite, &world.vocab, trace_dir)?;
    Ok(report)
}

/// The four standard ablation rows, in cumulative order.
pub fn ablation_flags() -> Vec<AblationFlags> {
    vec![
        AblationFlags::baseline(),
        AblationFlags { negative_sampling: true, calibration: true, trs: false, psc: false },
        AblationFlags { negative_sampling: true, calibration: true, trs: true, psc: false },
        AblationFlags { negative_sampling: true, calibration: true, trs: true, psc: true },
    ]
}

/// Accuracy per ablation row on the same generated world.
pub fn ablation_table(cfg: &SimConfig) -> Result<Vec<(String, f64)>, BenchError> {
    let mut rows = Vec::new();
    for flags in ablation_flags() {
        let report = run_simulation(cfg, flags, None)?;
        rows.push((flags.label(), report.accuracy.unwrap_or(0.0)));
    }
    Ok(rows)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorrelationRow {
    pub strength: f64,
    pub accuracy: f64,
    pub mean_score: f64,
    /// Spearman rank correlation between per-trace mean verification score
    /// and per-instance correctness; None when either side is constant.
    pub spearman: Option<f64>,
}

/// Sweeps the verifier signal strength with verification scoring on but
/// selection untouched (greedy by raw module probability), so correctness
/// varies while scores are observed passively.
pub fn correlation_study(
    n_instances: usize,
    seed: u64,
    strengths: &[f64],
) -> Result<Vec<CorrelationRow>, BenchError> {
    let passive = AblationFlags {
        negative_sampling: true,
        calibration: false,
        trs: false,
        psc: false,
    };
    let mut rows = Vec::new();
    for &strength in strengths {
        let cfg = SimConfig { n_instances, seed, strength, ..Default::default() };
        let report = run_simulation(&cfg, passive, None)?;
        let usable: Vec<&super::bench::InstanceRecord> = report
            .records
            .iter()
            .filter(|r| r.executable && r.error.is_none())
            .collect();
        let scores: Vec<f64> = usable.iter().map(|r| r.mean_score).collect();
        let correct: Vec<f64> = usable.iter().map(|r| r.correct as u8 as f64).collect();
        rows.push(CorrelationRow {
            strength,
            accuracy: report.accuracy.unwrap_or(0.0),
            mean_score: super::metrics::mean(&scores),
            spearman: spearman(&scores, &correct),
        });
    }
    Ok(rows)
}
