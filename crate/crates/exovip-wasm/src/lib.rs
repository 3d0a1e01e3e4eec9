//! Browser bindings for the interactive demo page: calibration curves,
//! histogram interval localization, and part alignment. All functions take
//! plain numbers or JSON strings and return JSON, so the page needs no
//! generated TypeScript glue.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use exovip::runtime::exec::{Candidate, CandidateSet};
use exovip::runtime::temporal::locate_temporal_segment;
use exovip::verification::VerifierReport;
use exovip::{calibrate, parse_program, part_alignment_score, Value};

fn err_json(msg: impl std::fmt::Display) -> String {
    serde_json::json!({ "error": msg.to_string() }).to_string()
}

fn to_json(value: &impl Serialize) -> String {
    serde_json::to_string(value).unwrap_or_else(|e| err_json(e))
}

#[derive(Serialize)]
struct CalibratedRow {
    p: f64,
    s: f64,
    w: f64,
    p_cal: f64,
}

#[derive(Serialize)]
struct CalibratedSet {
    rows: Vec<CalibratedRow>,
    /// Input index of the winner before and after calibration.
    argmax_before: usize,
    argmax_after: usize,
}

/// Calibrates one candidate set: `probs[i]` is the module probability and
/// `scores[i]` the verification score of candidate `i`. Returns the weights
/// and calibrated probabilities in input order plus the argmax shift.
#[wasm_bindgen]
pub fn calibrate_set(probs: Vec<f64>, scores: Vec<f64>, tau: f64) -> String {
    if probs.is_empty() || probs.len() != scores.len() {
        return err_json("probs and scores must be non-empty and equally long");
    }
    if !(tau >= 1.0) || !tau.is_finite() {
        return err_json("tau must be a finite number >= 1");
    }
    if probs.iter().chain(&scores).any(|x| !x.is_finite()) {
        return err_json("non-finite input value");
    }
    let program = parse_program("A0=VQA(image=IMAGE,question='q')").expect("static program");
    let candidates = probs
        .iter()
        .zip(&scores)
        .enumerate()
        .map(|(i, (&p, &s))| {
            let mut c = Candidate::new(Value::Text(i.to_string()), p);
            c.report = Some(VerifierReport {
                negative_answer: String::new(),
                s_itm: Some(s),
                s_cap: None,
                s_vqa: None,
                n_itm: Some(0.0),
                n_cap: None,
                n_vqa: None,
                s_final: s,
            });
            c
        })
        .collect();
    let mut cs = CandidateSet { step: program.steps()[0].clone(), candidates };
    if let Err(e) = calibrate(&mut cs, tau) {
        return err_json(e);
    }
    let index_of = |c: &Candidate| match &c.value {
        Value::Text(t) => t.parse::<usize>().unwrap_or(0),
        _ => 0,
    };
    let argmax_after = index_of(cs.top());
    let mut rows: Vec<(usize, CalibratedRow)> = cs
        .candidates
        .iter()
        .map(|c| {
            (
                index_of(c),
                CalibratedRow {
                    p: c.p,
                    s: c.report.as_ref().map(|r| r.s_final).unwrap_or(0.0),
                    w: c.w.unwrap_or(1.0),
                    p_cal: c.p_cal.unwrap_or(c.p),
                },
            )
        })
        .collect();
    rows.sort_by_key(|(i, _)| *i);
    let argmax_before = probs
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.partial_cmp(b.1).unwrap_or(std::cmp::Ordering::Equal))
        .map(|(i, _)| i)
        .unwrap_or(0);
    to_json(&CalibratedSet {
        rows: rows.into_iter().map(|(_, r)| r).collect(),
        argmax_before,
        argmax_after,
    })
}

#[derive(Serialize)]
struct SegmentOut {
    start: usize,
    end: usize,
    score: f64,
}

/// Best contiguous frame interval by `length * min(score)`; inclusive ends.
#[wasm_bindgen]
pub fn locate_segment(frame_scores: Vec<f64>) -> String {
    match locate_temporal_segment(&frame_scores) {
        Ok(seg) => to_json(&SegmentOut { start: seg.start, end: seg.end, score: seg.score }),
        Err(e) => err_json(e),
    }
}

#[derive(Serialize)]
struct AlignmentOut {
    score: f64,
    matching: Vec<(usize, usize)>,
}

/// Optimal injective matching between two JSON lists of embedding vectors
/// (`[[f64,...],...]`), maximizing mean inner product.
#[wasm_bindgen]
pub fn align_parts(text_json: &str, visual_json: &str) -> String {
    let parse = |label: &str, text: &str| -> Result<Vec<Vec<f64>>, String> {
        serde_json::from_str(text).map_err(|e| format!("{label}: {e}"))
    };
    let text = match parse("text parts", text_json) {
        Ok(v) => v,
        Err(e) => return err_json(e),
    };
    let visual = match parse("visual parts", visual_json) {
        Ok(v) => v,
        Err(e) => return err_json(e),
    };
    match part_alignment_score(&text, &visual) {
        Ok(a) => to_json(&AlignmentOut { score: a.score, matching: a.matching }),
        Err(e) => err_json(e),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn calibrate_set_reports_the_flip() {
        let out = calibrate_set(vec![0.6, 0.4], vec![0.0, 1.0], 2.0);
        let v: serde_json::Value = serde_json::from_str(&out).unwrap();
        assert_eq!(v["argmax_before"], 0);
        assert_eq!(v["argmax_after"], 1);
        assert!((v["rows"][1]["w"].as_f64().unwrap() - 2.0).abs() < 1e-12);
        assert!((v["rows"][0]["w"].as_f64().unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn calibrate_set_rejects_bad_input() {
        for bad in [
            calibrate_set(vec![], vec![], 2.0),
            calibrate_set(vec![0.5], vec![0.1, 0.2], 2.0),
            calibrate_set(vec![0.5], vec![0.1], 0.5),
            calibrate_set(vec![f64::NAN], vec![0.1], 2.0),
        ] {
            let v: serde_json::Value = serde_json::from_str(&bad).unwrap();
            assert!(v["error"].is_string(), "{bad}");
        }
    }

    #[test]
    fn locate_segment_round_trips() {
        let out = locate_segment(vec![2.0, 1.0, 5.0, 6.0, 2.0, 3.0]);
        let v: serde_json::Value = serde_json::from_str(&out).unwrap();
        assert_eq!(v["start"], 2);
        assert_eq!(v["end"], 3);
        assert_eq!(v["score"], 10.0);
        let empty = locate_segment(vec![]);
        let v: serde_json::Value = serde_json::from_str(&empty).unwrap();
        assert!(v["error"].is_string());
    }

    #[test]
    fn align_parts_recovers_a_permutation() {
        let out = align_parts("[[1,0],[0,1]]", "[[0,1],[1,0]]");
        let v: serde_json::Value = serde_json::from_str(&out).unwrap();
        assert!((v["score"].as_f64().unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(v["matching"][0][1], 1);
        let bad = align_parts("not json", "[[1]]");
        let v: serde_json::Value = serde_json::from_str(&bad).unwrap();
        assert!(v["error"].is_string());
    }
}
