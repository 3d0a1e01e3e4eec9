//! Exact part alignment: injective matching of the smaller embedding list
//! into the larger one maximizing total cosine similarity.

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum AlignError {
    #[error("empty part-embedding list")]
    EmptyInput,
    #[error("embedding dimension mismatch: {a} vs {b}")]
    DimensionMismatch { a: usize, b: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Alignment {
    /// Mean similarity over matched pairs, in [-1, 1] for unit vectors.
    pub score: f64,
    /// Pairs (text_index, visual_index), one per element of the smaller side.
    pub matching: Vec<(usize, usize)>,
}

/// Optimal assignment via the Hungarian algorithm with potentials, O(n^2 m).
/// `cost` must have `rows <= cols`; returns the matched column per row.
fn hungarian_min(cost: &[Vec<f64>]) -> Vec<usize> {
    let n = cost.len();
    let m = cost[0].len();
    debug_assert!(n <= m);
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; m + 1];
    // p[j] = row (1-based) matched to column j; 0 = unmatched.
    let mut p = vec![0usize; m + 1];
    for i in 1..=n {
        let mut links = vec![0usize; m + 1];
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        p[0] = i;
        let mut j0 = 0usize;
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=m {
                if !used[j] {
                    let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        links[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = links[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0usize; n];
    for j in 1..=m {
        if p[j] != 0 {
            assignment[p[j] - 1] = j - 1;
        }
    }
    assignment
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Aligns text parts with visual parts. Similarity is the inner product of
/// unit vectors; the smaller side is matched injectively into the larger.
pub fn part_alignment_score(
    text_parts: &[Vec<f64>],
    visual_parts: &[Vec<f64>],
) -> Result<Alignment, AlignError> {
    if text_parts.is_empty() || visual_parts.is_empty() {
        return Err(AlignError::EmptyInput);
    }
    let dim = text_parts[0].len();
    for e in text_parts.iter().chain(visual_parts) {
        if e.len() != dim {
            return Err(AlignError::DimensionMismatch { a: dim, b: e.len() });
        }
    }

    let text_is_smaller = text_parts.len() <= visual_parts.len();
    let (rows, cols): (&[Vec<f64>], &[Vec<f64>]) = if text_is_smaller {
        (text_parts, visual_parts)
    } else {
        (visual_parts, text_parts)
    };
    let sim: Vec<Vec<f64>> = rows
        .iter()
        .map(|r| cols.iter().map(|c| dot(r, c)).collect())
        .collect();
    let cost: Vec<Vec<f64>> = sim.iter().map(|row| row.iter().map(|s| -s).collect()).collect();
    let assignment = hungarian_min(&cost);

    let mut matching: Vec<(usize, usize)> = assignment
        .iter()
        .enumerate()
        .map(|(r, &c)| if text_is_smaller { (r, c) } else { (c, r) })
        .collect();
    matching.sort_unstable();
    let total: f64 = assignment.iter().enumerate().map(|(r, &c)| sim[r][c]).sum();
    let score = total / rows.len() as f64;
    Ok(Alignment { score, matching })
}

#[cfg(test)]
pub fn brute_force(text_parts: &[Vec<f64>], visual_parts: &[Vec<f64>]) -> Alignment {
    fn injections(k: usize, n: usize) -> Vec<Vec<usize>> {
        fn rec(k: usize, pool: &[usize], prefix: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
            if prefix.len() == k {
                out.push(prefix.clone());
                return;
            }
            for (i, &c) in pool.iter().enumerate() {
                prefix.push(c);
                let rest: Vec<usize> = pool
                    .iter()
                    .enumerate()
                    .filter(|(j, _)| *j != i)
                    .map(|(_, &x)| x)
                    .collect();
                rec(k, &rest, prefix, out);
                prefix.pop();
            }
        }
        let pool: Vec<usize> = (0..n).collect();
        let mut out = Vec::new();
        rec(k, &pool, &mut Vec::new(), &mut out);
        out
    }

    let text_is_smaller = text_parts.len() <= visual_parts.len();
    let (rows, cols) = if text_is_smaller {
        (text_parts, visual_parts)
    } else {
        (visual_parts, text_parts)
    };
    let mut best: Option<(f64, Vec<usize>)> = None;
    for inj in injections(rows.len(), cols.len()) {
        let total: f64 = inj
            .iter()
            .enumerate()
            .map(|(r, &c)| dot(&rows[r], &cols[c]))
            .sum();
        if best.as_ref().map_or(true, |(b, _)| total > *b) {
            best = Some((total, inj));
        }
    }
    let (total, inj) = best.unwrap();
    let mut matching: Vec<(usize, usize)> = inj
        .iter()
        .enumerate()
        .map(|(r, &c)| if text_is_smaller { (r, c) } else { (c, r) })
        .collect();
    matching.sort_unstable();
    Alignment { score: total / rows.len() as f64, matching }
}
