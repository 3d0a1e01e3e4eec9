//! Few-shot prompt assembly with seeded example perturbation.
//!
//! Trace diversity comes from perturbing the in-context examples: the seed
//! deterministically shuffles the example list and keeps a subset, so two
//! seeds render two different prompts for the same query.

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlannerRequest {
    pub query: String,
    /// (query, program) pairs for few-shot planners.
    pub in_context_examples: Vec<(String, String)>,
    pub n_programs: usize,
    pub perturbation_seed: u64,
}

impl PlannerRequest {
    pub fn new(query: impl Into<String>, n_programs: usize, seed: u64) -> Self {
        PlannerRequest {
            query: query.into(),
            in_context_examples: Vec::new(),
            n_programs: n_programs.max(1),
            perturbation_seed: seed,
        }
    }
}

/// Deterministic shuffle-and-subset of the example list.
pub fn perturb_examples(
    examples: &[(String, String)],
    seed: u64,
) -> Vec<(String, String)> {
    if examples.is_empty() {
        return Vec::new();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut shuffled: Vec<(String, String)> = examples.to_vec();
    shuffled.shuffle(&mut rng);
    let min_keep = examples.len().div_ceil(2).max(1);
    let keep = rng.gen_range(min_keep..=examples.len());
    shuffled.truncate(keep);
    shuffled
}

/// Renders the planner prompt. Pure in (template, examples, seed, query);
/// the template carries `{examples}` and `{query}` placeholders.
pub fn render_prompt(template: &str, req: &PlannerRequest) -> String {
    let examples = perturb_examples(&req.in_context_examples, req.perturbation_seed);
    let rendered: Vec<String> = examples
        .iter()
        .map(|(q, p)| format!("Question: {q}\nProgram:\n{p}"))
        .collect();
    template
        .replace("{examples}", &rendered.join("\n\n"))
        .replace("{query}", &req.query)
}

pub const DEFAULT_PLANNER_TEMPLATE: &str = "Decompose the question into a program, one operation per line.\n\n{examples}\n\nQuestion: {query}\nProgram:\n";
