//! Acceptance gate: every shipped guarantee checked end to end, one
//! pass/fail line per criterion.

use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use exovip::backends::mock::{MockBackend, MockFixtures};
use exovip::dsl::{ArgValue, Program, Step, ViolationKind};
use exovip::harness::bench::{run_benchmark, AblationFlags, RunConfig};
use exovip::harness::demo::{demo_world, planning_failure_world};
use exovip::harness::simulate::{ablation_table, correlation_study, SimConfig};
use exovip::runtime::exec::{Candidate, CandidateSet};
use exovip::runtime::registry::{ModuleRegistry, VerifierKind};
use exovip::runtime::temporal::{locate_temporal_segment, Segment};
use exovip::runtime::value::{ImageHandle, ValueTag};
use exovip::search::{SearchConfig, SearchError, SearchParams};
use exovip::verification::{
    calibrate, NegativeVocabulary, ScoredToken, VerifierReport,
};
use exovip::{parse_program, part_alignment_score, search, serialize, validate, Value};

fn report_with(s_final: f64) -> VerifierReport {
    VerifierReport {
        negative_answer: String::new(),
        s_itm: Some(s_final),
        s_cap: None,
        s_vqa: None,
        n_itm: Some(0.0),
        n_cap: None,
        n_vqa: None,
        s_final,
    }
}

fn candidate_set(ps: &[f64], scores: &[f64]) -> CandidateSet {
    let program = parse_program("A0=VQA(image=IMAGE,question='q')").unwrap();
    let candidates = ps
        .iter()
        .zip(scores)
        .enumerate()
        .map(|(i, (&p, &s))| {
            let mut c = Candidate::new(Value::Text(format!("a{i}")), p);
            c.report = Some(report_with(s));
            c
        })
        .collect();
    CandidateSet { step: program.steps()[0].clone(), candidates }
}

fn check(ok: bool, msg: String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg)
    }
}

/// 1. Calibration exactness: endpoint weights 1/tau and tau, the linear
/// formula in between, tau=1 as identity, uniform scores as argmax-neutral.
fn calibration_exactness() -> Result<(), String> {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let taus = [1.0, 1.2, 1.5, 2.0];
    for case in 0..1000 {
        let n = rng.gen_range(1..=8);
        let tau = taus[case % taus.len()];
        let uniform = case % 4 == 3;
        let ps: Vec<f64> = (0..n).map(|i| 1.0 / (i + 2) as f64).collect();
        let flat = rng.gen_range(-1.0..1.0);
        let scores: Vec<f64> = (0..n)
            .map(|_| if uniform { flat } else { rng.gen_range(-1.0..1.0) })
            .collect();
        let mut cs = candidate_set(&ps, &scores);
        let before_top = cs.top().value.clone();
        calibrate(&mut cs, tau).map_err(|e| e.to_string())?;

        let s_min = scores.iter().cloned().fold(f64::INFINITY, f64::min);
        let s_max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        for c in &cs.candidates {
            let s = c.report.as_ref().unwrap().s_final;
            let w = c.w.unwrap();
            let expected = if s_max == s_min {
                1.0
            } else {
                (s - s_min) / (s_max - s_min) * (tau - 1.0 / tau) + 1.0 / tau
            };
            check((w - expected).abs() < 1e-12, format!("w {w} != {expected}"))?;
            if s_max > s_min && s == s_min {
                check((w - 1.0 / tau).abs() < 1e-12, format!("min w {w} tau {tau}"))?;
            }
            if s_max > s_min && s == s_max {
                check((w - tau).abs() < 1e-12, format!("max w {w} tau {tau}"))?;
            }
            if tau == 1.0 {
                check((c.p_cal.unwrap() - c.p).abs() < 1e-12, "tau=1 changed p".into())?;
            }
        }
        if uniform {
            check(
                cs.top().value == before_top,
                format!("uniform scores moved the argmax (case {case})"),
            )?;
        }
    }
    check(t0.elapsed().as_secs_f64() < 1.0, format!("too slow: {:?}", t0.elapsed()))
}

/// 2. Mixture identity: mean of per-verifier differences equals candidate
/// average minus negative average over the enabled verifiers.
fn mixture_identity() -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    for case in 0..1000 {
        let mask = rng.gen_range(1..8u8); // at least one verifier enabled
        let with_negatives = case % 3 != 0;
        let mut s = [None; 3];
        let mut n = [None; 3];
        for i in 0..3 {
            if mask & (1 << i) != 0 {
                s[i] = Some(rng.gen_range(-1.0..1.0));
                if with_negatives {
                    n[i] = Some(rng.gen_range(-1.0..1.0));
                }
            }
        }
        let report = VerifierReport {
            negative_answer: String::new(),
            s_itm: s[0],
            s_cap: s[1],
            s_vqa: s[2],
            n_itm: n[0],
            n_cap: n[1],
            n_vqa: n[2],
            s_final: 0.0,
        };
        let enabled: Vec<usize> = (0..3).filter(|i| s[*i].is_some()).collect();
        let cand_avg: f64 =
            enabled.iter().map(|&i| s[i].unwrap()).sum::<f64>() / enabled.len() as f64;
        let neg_avg: f64 =
            enabled.iter().map(|&i| n[i].unwrap_or(0.0)).sum::<f64>() / enabled.len() as f64;
        let expected = cand_avg - neg_avg;
        check(
            (report.mix() - expected).abs() < 1e-12,
            format!("mix {} != {expected}", report.mix()),
        )?;
    }
    Ok(())
}

fn vqa_registry() -> ModuleRegistry {
    let mut entries: Vec<_> = ModuleRegistry::builtin().ops().cloned().collect();
    for e in &mut entries {
        if e.verifiable {
            e.verifiers = vec![VerifierKind::Vqa];
        }
    }
    ModuleRegistry::from_entries(entries, 4).unwrap()
}

fn nothing_vocab() -> NegativeVocabulary {
    NegativeVocabulary {
        entries: Default::default(),
        fallback: vec![ScoredToken { token: "nothing".into(), sim: 0.0 }],
        theta: 0.5,
    }
}

fn image_input(handle: &str) -> Vec<(String, Value)> {
    vec![(
        "IMAGE".to_string(),
        Value::Image(ImageHandle { handle: handle.into(), width: 64, height: 64 }),
    )]
}

/// 3. Beam-exhaustive equivalence: with PSC off and a beam wider than any
/// level, the search returns the exhaustive-maximum cum-score trace.
fn beam_exhaustive_equivalence() -> Result<(), String> {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let grid: Vec<f64> = (1..=9).map(|i| i as f64 / 10.0).collect();
    for world in 0..100 {
        let depth = rng.gen_range(1..=4usize);
        let bf = rng.gen_range(2..=3usize);
        let mut fx = MockFixtures::default();
        let mut lines = Vec::new();
        // Per step: `bf` answer tokens with distinct planted yes-probabilities.
        let mut step_scores: Vec<Vec<f64>> = Vec::new();
        for i in 0..depth {
            let mut pys = grid.clone();
            pys.shuffle(&mut rng);
            pys.truncate(bf);
            let tokens: Vec<String> = (0..bf).map(|j| format!("t{i}_{j}")).collect();
            fx.vqa.insert(
                format!("img|q{i}"),
                tokens
                    .iter()
                    .enumerate()
                    .map(|(j, t)| (t.clone(), 0.5 / (j + 1) as f64))
                    .collect(),
            );
            for (t, py) in tokens.iter().zip(&pys) {
                fx.vqa_yesno.insert(
                    format!("img|Is there any {t} in the image?"),
                    (*py, 1.0 - *py),
                );
            }
            step_scores.push(pys.iter().map(|py| 2.0 * py - 1.0).collect());
            lines.push(format!("A{i}=VQA(image=IMAGE,question='q{i}')"));
        }
        fx.vqa_yesno
            .insert("img|Is there any nothing in the image?".into(), (0.5, 0.5));
        lines.push(format!("FINAL=RESULT(var=A{})", depth - 1));
        fx.plans.insert("tree|0".into(), vec![lines.join("\n")]);

        // Exhaustive oracle: every root-to-leaf candidate combination.
        let mut best = f64::NEG_INFINITY;
        let mut best_last = 0usize;
        let combos = bf.pow(depth as u32);
        for mut c in 0..combos {
            let mut sum = 0.0;
            let mut last = 0;
            for scores in &step_scores {
                last = c % bf;
                sum += scores[last];
                c /= bf;
            }
            let mean = sum / depth as f64;
            if mean > best {
                best = mean;
                best_last = last;
            }
        }

        let mut cfg = SearchConfig::default();
        cfg.params = SearchParams {
            k: 128,
            p: 2,
            b: 1,
            max_depth: 8,
            children_per_step: 3,
            psc_enabled: false,
            psc_gate: None,
        };
        let suite = MockBackend::suite(fx);
        let out = search(
            "tree",
            &image_input("img"),
            &vqa_registry(),
            &suite,
            &nothing_vocab(),
            &cfg,
            None,
        )
        .map_err(|e| format!("world {world}: {e}"))?;
        check(
            (out.mean_score() - best).abs() < 1e-9,
            format!("world {world}: score {} != exhaustive {best}", out.mean_score()),
        )?;
        let want = Value::Text(format!("t{}_{best_last}", depth - 1));
        check(out.answer == want, format!("world {world}: answer {:?}", out.answer))?;
    }
    check(t0.elapsed().as_secs_f64() < 5.0, format!("too slow: {:?}", t0.elapsed()))
}

/// 4. Search-loop conformance: the first program dies at step two but an
/// alternate survives; the full configuration recovers, the baseline fails.
fn correction_narrative() -> Result<(), String> {
    let mut fx = MockFixtures::default();
    fx.plans.insert(
        "fig|0".into(),
        vec![
            "A0=VQA(image=IMAGE,question='qa')\nA1=VQA(image=IMAGE,question='qa2')\n\
             FINAL=RESULT(var=A1)"
                .into(),
            "B0=VQA(image=IMAGE,question='qb')\nFINAL=RESULT(var=B0)".into(),
        ],
    );
    fx.vqa.insert("img|qa".into(), vec![("stepone".into(), 1.0)]);
    // No fixture for qa2: the first program's second step cannot execute.
    fx.vqa.insert("img|qb".into(), vec![("ok".into(), 0.9)]);
    fx.vqa_yesno.insert("img|Is there any stepone in the image?".into(), (0.6, 0.4));
    fx.vqa_yesno.insert("img|Is there any ok in the image?".into(), (0.8, 0.2));
    fx.vqa_yesno.insert("img|Is there any nothing in the image?".into(), (0.5, 0.5));

    let registry = vqa_registry();
    let vocab = nothing_vocab();
    let suite = MockBackend::suite(fx);

    let full = SearchConfig::default();
    let out = search("fig", &image_input("img"), &registry, &suite, &vocab, &full, None)
        .map_err(|e| format!("full config failed: {e}"))?;
    check(out.answer == Value::Text("ok".into()), format!("answer {:?}", out.answer))?;

    let baseline = RunConfig { flags: AblationFlags::baseline(), ..Default::default() }
        .to_search_config();
    match search("fig", &image_input("img"), &registry, &suite, &vocab, &baseline, None) {
        Err(SearchError::NoTraceFound) => Ok(()),
        Ok(out) => Err(format!("baseline unexpectedly answered {:?}", out.answer)),
        Err(e) => Err(format!("baseline failed differently: {e}")),
    }
}

/// 5. Ablation direction: accuracy never drops as stages are added, and the
/// full configuration beats the baseline.
fn ablation_direction() -> Result<(), String> {
    let t0 = Instant::now();
    let cfg = SimConfig { n_instances: 500, seed: 17, strength: 0.7, ..Default::default() };
    let rows = ablation_table(&cfg).map_err(|e| e.to_string())?;
    check(rows.len() == 4, format!("{} rows", rows.len()))?;
    for pair in rows.windows(2) {
        check(
            pair[1].1 >= pair[0].1 - 1e-12,
            format!("{} {} > {} {}", pair[0].0, pair[0].1, pair[1].0, pair[1].1),
        )?;
    }
    check(
        rows[3].1 > rows[0].1,
        format!("full {} <= baseline {}", rows[3].1, rows[0].1),
    )?;
    check(t0.elapsed().as_secs_f64() < 60.0, format!("too slow: {:?}", t0.elapsed()))
}

/// 6. Correlation study: planted signal separates scores from noise.
fn correlation_direction() -> Result<(), String> {
    let rows = correlation_study(500, 17, &[0.0, 0.7]).map_err(|e| e.to_string())?;
    let rho0 = rows[0].spearman.ok_or("no rho at strength 0")?;
    let rho7 = rows[1].spearman.ok_or("no rho at strength 0.7")?;
    check(rho0.abs() < 0.1, format!("|rho(0)| = {}", rho0.abs()))?;
    check(rho7 > 0.3, format!("rho(0.7) = {rho7}"))
}

fn temporal_oracle(scores: &[f64]) -> Segment {
    let n = scores.len();
    let mut best: Option<(f64, usize, usize)> = None;
    for start in 0..n {
        let mut min = f64::INFINITY;
        for end in start..n {
            min = min.min(scores[end]);
            let len = end - start + 1;
            let cand = (min * len as f64, start, len);
            let better = match &best {
                None => true,
                Some(b) => {
                    cand.0 > b.0
                        || (cand.0 == b.0 && (cand.1 < b.1 || (cand.1 == b.1 && cand.2 < b.2)))
                }
            };
            if better {
                best = Some(cand);
            }
        }
    }
    let (score, start, len) = best.unwrap();
    Segment { start, end: start + len - 1, score }
}

fn alignment_oracle(text: &[Vec<f64>], visual: &[Vec<f64>]) -> f64 {
    fn dot(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| x * y).sum()
    }
    fn best_injection(rows: &[Vec<f64>], cols: &[Vec<f64>], free: &mut Vec<bool>, r: usize) -> f64 {
        if r == rows.len() {
            return 0.0;
        }
        let mut best = f64::NEG_INFINITY;
        for c in 0..cols.len() {
            if free[c] {
                free[c] = false;
                let total = dot(&rows[r], &cols[c]) + best_injection(rows, cols, free, r + 1);
                free[c] = true;
                best = best.max(total);
            }
        }
        best
    }
    let (rows, cols) = if text.len() <= visual.len() { (text, visual) } else { (visual, text) };
    let mut free = vec![true; cols.len()];
    best_injection(rows, cols, &mut free, 0) / rows.len() as f64
}

/// 7. Oracle equivalence for the two exact algorithms.
fn exact_algorithm_oracles() -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(707);
    for case in 0..10_000 {
        let len = rng.gen_range(1..=12);
        // Half-integer scores make every area comparison exact.
        let scores: Vec<f64> = (0..len).map(|_| rng.gen_range(-10..=11) as f64 / 2.0).collect();
        let fast = locate_temporal_segment(&scores).map_err(|e| e.to_string())?;
        let slow = temporal_oracle(&scores);
        check(fast == slow, format!("case {case}: {fast:?} != {slow:?} for {scores:?}"))?;
    }
    let unit = |rng: &mut ChaCha8Rng, dim: usize| -> Vec<f64> {
        let v: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-9);
        v.into_iter().map(|x| x / norm).collect()
    };
    for case in 0..1000 {
        let a = rng.gen_range(1..=6);
        let b = rng.gen_range(1..=6);
        let dim = rng.gen_range(2..=4);
        let text: Vec<Vec<f64>> = (0..a).map(|_| unit(&mut rng, dim)).collect();
        let visual: Vec<Vec<f64>> = (0..b).map(|_| unit(&mut rng, dim)).collect();
        let fast = part_alignment_score(&text, &visual).map_err(|e| e.to_string())?;
        let slow = alignment_oracle(&text, &visual);
        check(
            (fast.score - slow).abs() < 1e-9,
            format!("case {case}: {} != {slow} for {a}x{b}", fast.score),
        )?;
    }
    Ok(())
}

fn gen_ident(rng: &mut ChaCha8Rng) -> String {
    const FIRST: &[u8] = b"abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ_";
    const REST: &[u8] = b"abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ_0123456789";
    loop {
        let len = rng.gen_range(1..=6);
        let mut s = String::new();
        s.push(FIRST[rng.gen_range(0..FIRST.len())] as char);
        for _ in 1..len {
            s.push(REST[rng.gen_range(0..REST.len())] as char);
        }
        if s != "true" && s != "false" {
            return s;
        }
    }
}

fn gen_value(rng: &mut ChaCha8Rng) -> ArgValue {
    const CHARS: &[u8] = b"abcdefghijklmnopqrstuvwxyz 0123456789.,!?-_()=";
    match rng.gen_range(0..4) {
        0 => ArgValue::Var(gen_ident(rng)),
        1 => {
            let len = rng.gen_range(0..=20);
            let s: String =
                (0..len).map(|_| CHARS[rng.gen_range(0..CHARS.len())] as char).collect();
            ArgValue::Str(s)
        }
        2 => ArgValue::Num(rng.gen_range(-1e3..1e3)),
        _ => ArgValue::Bool(rng.gen()),
    }
}

fn gen_program(rng: &mut ChaCha8Rng) -> Program {
    let n = rng.gen_range(1..=6);
    let mut steps: Vec<Step> = Vec::new();
    while steps.len() < n {
        let out_var = gen_ident(rng);
        if steps.iter().any(|s| s.out_var == out_var) {
            continue;
        }
        let mut args: Vec<(String, ArgValue)> = Vec::new();
        for _ in 0..rng.gen_range(0..=4) {
            let key = gen_ident(rng);
            if args.iter().all(|(k, _)| *k != key) {
                args.push((key, gen_value(rng)));
            }
        }
        steps.push(Step { op_name: gen_ident(rng), args, out_var, line_no: steps.len() + 1 });
    }
    Program::from_steps(steps).unwrap()
}

/// 8. DSL round trip plus validator soundness on the same corpus: the
/// unknown-op and unknown-variable verdicts match an independent check.
fn dsl_round_trip() -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(808);
    let registry = ModuleRegistry::builtin();
    for case in 0..200 {
        let program = gen_program(&mut rng);
        let parsed = parse_program(&serialize(&program))
            .map_err(|e| format!("case {case}: {e}"))?;
        check(parsed == program, format!("case {case}: round trip changed the program"))?;

        let report = validate(&program, &registry, &[("IMAGE", ValueTag::Image)]);
        let mut flagged_ops: Vec<String> = report
            .violations
            .iter()
            .filter_map(|v| match &v.kind {
                ViolationKind::UnknownOp { op } => Some(op.clone()),
                _ => None,
            })
            .collect();
        let mut flagged_vars: Vec<String> = report
            .violations
            .iter()
            .filter_map(|v| match &v.kind {
                ViolationKind::UnknownVariable { var } => Some(var.clone()),
                _ => None,
            })
            .collect();
        let mut oracle_ops = Vec::new();
        let mut oracle_vars = Vec::new();
        let mut bound = vec!["IMAGE".to_string()];
        for step in program.steps() {
            if registry.get(&step.op_name).is_none() {
                oracle_ops.push(step.op_name.clone());
            }
            for (_, value) in &step.args {
                if let ArgValue::Var(v) = value {
                    if !bound.contains(v) {
                        oracle_vars.push(v.clone());
                    }
                }
            }
            bound.push(step.out_var.clone());
        }
        for list in [&mut flagged_ops, &mut flagged_vars, &mut oracle_ops, &mut oracle_vars] {
            list.sort();
        }
        check(flagged_ops == oracle_ops, format!("case {case}: ops {flagged_ops:?} vs {oracle_ops:?}"))?;
        check(flagged_vars == oracle_vars, format!("case {case}: vars {flagged_vars:?} vs {oracle_vars:?}"))?;
    }
    Ok(())
}

/// 9. Determinism: two runs over the bundled ten-instance corpus produce
/// byte-identical metrics and trace logs.
fn determinism() -> Result<(), String> {
    let run_once = |dir: &Path| -> Result<String, String> {
        let world = demo_world();
        let suite = MockBackend::suite(world.fixtures);
        let cfg = RunConfig::default();
        let (metrics, _) =
            run_benchmark(&world.corpus, &cfg, &world.registry, &suite, &world.vocab, Some(dir))
                .map_err(|e| e.to_string())?;
        Ok(metrics.to_json())
    };
    let dir_a = tempfile::tempdir().map_err(|e| e.to_string())?;
    let dir_b = tempfile::tempdir().map_err(|e| e.to_string())?;
    let json_a = run_once(dir_a.path())?;
    let json_b = run_once(dir_b.path())?;
    check(json_a == json_b, "metrics differ between runs".into())?;

    let list = |dir: &Path| -> Result<Vec<String>, String> {
        let mut names: Vec<String> = std::fs::read_dir(dir)
            .map_err(|e| e.to_string())?
            .filter_map(|e| e.ok())
            .map(|e| e.file_name().to_string_lossy().into_owned())
            .collect();
        names.sort();
        Ok(names)
    };
    let names = list(dir_a.path())?;
    check(!names.is_empty(), "no trace logs written".into())?;
    check(names == list(dir_b.path())?, "trace file sets differ".into())?;
    for name in &names {
        let a = std::fs::read(dir_a.path().join(name)).map_err(|e| e.to_string())?;
        let b = std::fs::read(dir_b.path().join(name)).map_err(|e| e.to_string())?;
        check(a == b, format!("{name} differs between runs"))?;
    }
    Ok(())
}

/// 10. Plan statistics: two garbage plans out of ten give exactly a 20%
/// unexecutable rate, and mean plan steps covers the executed programs.
fn plan_statistics() -> Result<(), String> {
    let world = planning_failure_world(2);
    let suite = MockBackend::suite(world.fixtures);
    let cfg = RunConfig::default();
    let (report, _) =
        run_benchmark(&world.corpus, &cfg, &world.registry, &suite, &world.vocab, None)
            .map_err(|e| e.to_string())?;
    check(
        report.unexecutable_rate == 0.2,
        format!("unexecutable rate {}", report.unexecutable_rate),
    )?;
    // Eight two-step programs over ten planned instances.
    check(
        (report.mean_plan_steps - 1.6).abs() < 1e-12,
        format!("mean plan steps {}", report.mean_plan_steps),
    )
}

#[test]
fn acceptance() {
    let criteria: Vec<(&str, fn() -> Result<(), String>)> = vec![
        ("calibration exactness", calibration_exactness),
        ("mixture identity", mixture_identity),
        ("beam-exhaustive equivalence", beam_exhaustive_equivalence),
        ("correction narrative", correction_narrative),
        ("ablation direction", ablation_direction),
        ("correlation direction", correlation_direction),
        ("exact algorithm oracles", exact_algorithm_oracles),
        ("dsl round trip and validator soundness", dsl_round_trip),
        ("determinism", determinism),
        ("plan statistics", plan_statistics),
    ];
    let mut failures = Vec::new();
    for (i, (name, run)) in criteria.iter().enumerate() {
        match run() {
            Ok(()) => println!("PASS {:2}. {name}", i + 1),
            Err(msg) => {
                println!("FAIL {:2}. {name}: {msg}", i + 1);
                failures.push(format!("{}. {name}: {msg}", i + 1));
            }
        }
    }
    assert!(failures.is_empty(), "failed criteria:\n{}", failures.join("\n"));
}
