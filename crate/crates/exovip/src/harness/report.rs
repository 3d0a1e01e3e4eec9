//! Post-hoc reports recomputed from saved trace logs, independent of the
//! run that produced them.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::search::{FinalRecord, TraceRecord};

use super::metrics::{mean, variance};

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("trace log {path}: {msg}")]
    BadLog { path: PathBuf, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One parsed trace log: all expanded nodes plus the chosen goal, if the
/// search reached one.
#[derive(Debug, Clone)]
pub struct TraceLog {
    pub path: PathBuf,
    pub nodes: Vec<TraceRecord>,
    pub finale: Option<FinalRecord>,
}

impl TraceLog {
    pub fn from_file(path: &Path) -> Result<TraceLog, ReportError> {
        let text = std::fs::read_to_string(path)?;
        let mut nodes = Vec::new();
        let mut finale = None;
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Ok(f) = serde_json::from_str::<FinalRecord>(line) {
                finale = Some(f);
            } else {
                let node: TraceRecord = serde_json::from_str(line).map_err(|e| {
                    ReportError::BadLog {
                        path: path.to_path_buf(),
                        msg: format!("line {}: {e}", i + 1),
                    }
                })?;
                nodes.push(node);
            }
        }
        Ok(TraceLog { path: path.to_path_buf(), nodes, finale })
    }

    /// Mean verification score of the returned trace: the goal node's
    /// cumulative score, recomputed purely from the log.
    pub fn final_trace_score(&self) -> Option<f64> {
        let finale = self.finale.as_ref()?;
        self.nodes
            .iter()
            .find(|n| n.id == finale.final_node)
            .map(|n| n.cum_score)
    }
}

fn jsonl_files(dir: &Path) -> Result<Vec<PathBuf>, ReportError> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
        .collect();
    files.sort();
    Ok(files)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScoreHistogram {
    pub lo: f64,
    pub hi: f64,
    pub counts: Vec<usize>,
    pub n: usize,
    pub mean: f64,
    pub variance: f64,
}

impl ScoreHistogram {
    pub fn build(values: &[f64], lo: f64, hi: f64, bins: usize) -> ScoreHistogram {
        assert!(bins > 0 && hi > lo);
        let mut counts = vec![0usize; bins];
        for &v in values {
            let t = ((v - lo) / (hi - lo)).clamp(0.0, 1.0);
            let idx = ((t * bins as f64) as usize).min(bins - 1);
            counts[idx] += 1;
        }
        ScoreHistogram {
            lo,
            hi,
            counts,
            n: values.len(),
            mean: mean(values),
            variance: variance(values),
        }
    }

    /// Rows of `bin-start bin-end count bar` for terminal display.
    pub fn render(&self) -> String {
        let bins = self.counts.len();
        let peak = self.counts.iter().copied().max().unwrap_or(0).max(1);
        let width = (self.hi - self.lo) / bins as f64;
        let mut out = String::new();
        for (i, &c) in self.counts.iter().enumerate() {
            let a = self.lo + width * i as f64;
            let b = a + width;
            let bar = "#".repeat(c * 40 / peak);
            out.push_str(&format!("{a:>7.3} .. {b:>7.3}  {c:>5}  {bar}\n"));
        }
        out.push_str(&format!(
            "n={} mean={:.4} var={:.4}\n",
            self.n, self.mean, self.variance
        ));
        out
    }
}

/// Per-trace mean verification scores for every completed log in `dir`.
pub fn trace_scores(dir: &Path) -> Result<Vec<f64>, ReportError> {
    let mut scores = Vec::new();
    for path in jsonl_files(dir)? {
        if let Some(s) = TraceLog::from_file(&path)?.final_trace_score() {
            scores.push(s);
        }
    }
    Ok(scores)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DistributionReport {
    pub primary: ScoreHistogram,
    pub baseline: Option<ScoreHistogram>,
    /// mean(primary) - mean(baseline), when both sides are present.
    pub mean_shift: Option<f64>,
}

/// Histograms of per-trace mean scores, on a shared binning when a baseline
/// directory is given (e.g. the same corpus with tree search off).
pub fn score_distribution_report(
    primary_dir: &Path,
    baseline_dir: Option<&Path>,
    bins: usize,
) -> Result<DistributionReport, ReportError> {
    let a = trace_scores(primary_dir)?;
    let b = match baseline_dir {
        Some(dir) => Some(trace_scores(dir)?),
        None => None,
    };
    let all: Vec<f64> = a.iter().chain(b.iter().flatten()).copied().collect();
    if all.is_empty() {
        return Err(ReportError::BadLog {
            path: primary_dir.to_path_buf(),
            msg: "no completed traces found".into(),
        });
    }
    let lo = all.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = all.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let (lo, hi) = if hi > lo { (lo, hi) } else { (lo - 0.5, hi + 0.5) };
    let primary = ScoreHistogram::build(&a, lo, hi, bins);
    let baseline = b.as_deref().map(|v| ScoreHistogram::build(v, lo, hi, bins));
    let mean_shift = baseline.as_ref().filter(|h| h.n > 0 && primary.n > 0).map(|h| primary.mean - h.mean);
    Ok(DistributionReport { primary, baseline, mean_shift })
}
