//! Temporal localization over per-frame similarity scores.
//!
//! The selected segment maximizes `length * min(score within segment)`,
//! found with a monotonic-stack largest-rectangle pass in O(n). Ties go to
//! the earliest start, then the shortest length.

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum TemporalError {
    #[error("empty frame-score sequence")]
    EmptyInput,
    #[error("non-finite frame score at index {0}")]
    NonFinite(usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    pub start: usize,
    pub end: usize,
    pub score: f64,
}

fn better(a: (f64, usize, usize), b: (f64, usize, usize)) -> bool {
    // (area, start, len): larger area, then earlier start, then shorter.
    if a.0 != b.0 {
        return a.0 > b.0;
    }
    if a.1 != b.1 {
        return a.1 < b.1;
    }
    a.2 < b.2
}

/// Returns `(start_idx, end_idx, area)` of the best contiguous segment,
/// inclusive on both ends.
pub fn locate_temporal_segment(frame_scores: &[f64]) -> Result<Segment, TemporalError> {
    if frame_scores.is_empty() {
        return Err(TemporalError::EmptyInput);
    }
    if let Some(i) = frame_scores.iter().position(|s| !s.is_finite()) {
        return Err(TemporalError::NonFinite(i));
    }

    // With no non-negative frame, every multi-frame segment scores below the
    // best single frame, so return that frame directly.
    let max = frame_scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max <= 0.0 {
        let start = frame_scores.iter().position(|&s| s == max).unwrap();
        return Ok(Segment { start, end: start, score: max });
    }

    // Largest rectangle over scores clamped at zero. Segments spanning a
    // negative frame then score zero and cannot beat the positive optimum.
    let h: Vec<f64> = frame_scores.iter().map(|&s| s.max(0.0)).collect();
    let n = h.len();
    let mut stack: Vec<usize> = Vec::new();
    let mut best = (f64::NEG_INFINITY, 0usize, 0usize);
    for i in 0..=n {
        let cur = if i < n { h[i] } else { -1.0 };
        while let Some(&top) = stack.last() {
            if h[top] > cur {
                stack.pop();
                let left = stack.last().map_or(0, |&l| l + 1);
                let len = i - left;
                let cand = (h[top] * len as f64, left, len);
                if better(cand, best) {
                    best = cand;
                }
            } else {
                break;
            }
        }
        // Equal heights stay on the stack: the deepest one pops last and
        // yields the full-width rectangle with the earliest start.
        if i < n {
            stack.push(i);
        }
    }
    let (area, start, len) = best;
    Ok(Segment { start, end: start + len - 1, score: area })
}

#[cfg(test)]
pub fn brute_force(frame_scores: &[f64]) -> Segment {
    let n = frame_scores.len();
    let mut best = (f64::NEG_INFINITY, 0usize, 0usize);
    for start in 0..n {
        let mut min = f64::INFINITY;
        for end in start..n {
            min = min.min(frame_scores[end]);
            let len = end - start + 1;
            let cand = (min * len as f64, start, len);
            if better(cand, best) {
                best = cand;
            }
        }
    }
    Segment { start: best.1, end: best.1 + best.2 - 1, score: best.0 }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_frame() {
        assert_eq!(
            locate_temporal_segment(&[5.0]).unwrap(),
            Segment { start: 0, end: 0, score: 5.0 }
        );
    }

    #[test]
    fn classic_histogram_instance() {
        let got = locate_temporal_segment(&[2.0, 1.0, 5.0, 6.0, 2.0, 3.0]).unwrap();
        assert_eq!(got, Segment { start: 2, end: 3, score: 10.0 });
    }

    #[test]
    fn all_equal_takes_the_full_span() {
        let got = locate_temporal_segment(&[3.0, 3.0, 3.0, 3.0]).unwrap();
        assert_eq!(got, Segment { start: 0, end: 3, score: 12.0 });
    }

    #[test]
    fn empty_input_is_an_error() {
        assert_eq!(locate_temporal_segment(&[]), Err(TemporalError::EmptyInput));
    }

    #[test]
    fn tie_on_area_picks_earliest_start() {
        let got = locate_temporal_segment(&[4.0, 1.0, 4.0]).unwrap();
        assert_eq!(got, Segment { start: 0, end: 0, score: 4.0 });
    }

    #[test]
    fn all_negative_picks_best_single_frame() {
        let got = locate_temporal_segment(&[-3.0, -1.0, -2.0]).unwrap();
        assert_eq!(got, Segment { start: 1, end: 1, score: -1.0 });
    }

    #[test]
    fn matches_brute_force_on_small_integer_arrays() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..2000 {
            let len = rng.gen_range(1..=12);
            let scores: Vec<f64> = (0..len).map(|_| rng.gen_range(0..10) as f64).collect();
            let fast = locate_temporal_segment(&scores).unwrap();
            let slow = brute_force(&scores);
            assert_eq!(fast, slow, "scores {scores:?}");
        }
    }

    #[test]
    fn matches_brute_force_with_negative_scores() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..2000 {
            let len = rng.gen_range(1..=10);
            let scores: Vec<f64> = (0..len).map(|_| rng.gen_range(-5..6) as f64).collect();
            let fast = locate_temporal_segment(&scores).unwrap();
            let slow = brute_force(&scores);
            assert_eq!(fast, slow, "scores {scores:?}");
        }
    }
}
