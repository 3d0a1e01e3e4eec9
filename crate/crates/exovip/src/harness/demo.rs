//! A small hand-built corpus with matching fixtures, used by the CLI demo
//! files and the end-to-end tests. Several instances are planted so the
//! baseline picks the wrong candidate and calibration corrects it.

use crate::backends::mock::MockFixtures;
use crate::runtime::registry::{ModuleRegistry, VerifierKind};
use crate::runtime::value::{BBox, ImageHandle};
use crate::verification::{NegativeVocabulary, ScoredToken};

use super::corpus::{Corpus, Gold, TaskInstance, TaskKind};

pub struct DemoWorld {
    pub corpus: Corpus,
    pub fixtures: MockFixtures,
    pub vocab: NegativeVocabulary,
    pub registry: ModuleRegistry,
}

fn img(handle: &str) -> ImageHandle {
    ImageHandle { handle: handle.into(), width: 640, height: 480 }
}

/// Registry variant where verification runs on the yes/no probe alone,
/// keeping the fixture tables small.
pub fn demo_registry() -> ModuleRegistry {
    let mut entries: Vec<_> = ModuleRegistry::builtin().ops().cloned().collect();
    for e in &mut entries {
        if e.verifiable {
            e.verifiers = vec![VerifierKind::Vqa];
        }
    }
    ModuleRegistry::from_entries(entries, 4).expect("builtin stays valid")
}

fn demo_vocab() -> NegativeVocabulary {
    NegativeVocabulary {
        entries: Default::default(),
        fallback: vec![ScoredToken { token: "void".into(), sim: 0.0 }],
        theta: 0.5,
    }
}

fn probe(token: &str) -> String {
    format!("Is there any {token} in the image?")
}

struct DemoBuilder {
    fx: MockFixtures,
    instances: Vec<TaskInstance>,
}

impl DemoBuilder {
    fn plant_yesno(&mut self, image: &str, token: &str, p_yes: f64) {
        self.fx
            .vqa_yesno
            .insert(format!("{image}|{}", probe(token)), (p_yes, 1.0 - p_yes));
    }

    fn plant_void(&mut self, image: &str) {
        self.plant_yesno(image, "void", 0.3);
    }

    fn plan(&mut self, query: &str, program: &str) {
        self.fx.plans.insert(format!("{query}|0"), vec![program.to_string()]);
    }

    /// Single-hop VQA instance; `answers` are (token, p, p_yes), gold first
    /// in the argument list but not necessarily by probability.
    fn qa(&mut self, id: &str, question: &str, answers: &[(&str, f64, f64)], gold: &str) {
        let program = format!(
            "A0=VQA(image=IMAGE,question='{question}')\nFINAL=RESULT(var=A0)"
        );
        self.plan(question, &program);
        self.fx.vqa.insert(
            format!("{id}|{question}"),
            answers.iter().map(|(t, p, _)| (t.to_string(), *p)).collect(),
        );
        for (t, _, p_yes) in answers {
            self.plant_yesno(id, t, *p_yes);
        }
        self.plant_void(id);
        self.instances.push(TaskInstance {
            id: id.into(),
            kind: TaskKind::Qa,
            query: question.into(),
            images: vec![img(id)],
            frame_scores: None,
            options: None,
            gold: Gold::Answer(gold.into()),
        });
    }

    /// LOC grounding instance; `boxes` are (bbox, p, p_yes on the crop).
    fn grounding(&mut self, id: &str, object: &str, boxes: &[(BBox, f64, f64)], gold: BBox) {
        let query = format!("find the {object}");
        let program = format!(
            "BOX0=LOC(image=IMAGE,object='{object}')\nFINAL=RESULT(var=BOX0)"
        );
        self.plan(&query, &program);
        self.fx.detector.insert(
            format!("{id}|{object}"),
            boxes
                .iter()
                .map(|(b, p, _)| crate::backends::ScoredBox { bbox: *b, p: *p })
                .collect(),
        );
        for (b, _, p_yes) in boxes {
            let crop = format!("{id}#crop({},{},{},{})", b.x0, b.y0, b.x1, b.y1);
            self.plant_yesno(&crop, object, *p_yes);
            self.plant_void(&crop);
        }
        self.instances.push(TaskInstance {
            id: id.into(),
            kind: TaskKind::Grounding,
            query,
            images: vec![img(id)],
            frame_scores: None,
            options: None,
            gold: Gold::Box(gold),
        });
    }
}

/// Ten instances: five QA, one mock edit, two grounding, one NLVR-style
/// boolean, one temporal localization.
pub fn demo_world() -> DemoWorld {
    let mut b = DemoBuilder { fx: MockFixtures::default(), instances: Vec::new() };

    b.qa(
        "d1",
        "what is on the nightstand?",
        &[("lamp", 0.7, 0.8), ("book", 0.3, 0.3)],
        "lamp",
    );
    // Baseline picks "blue"; the probes say otherwise and calibration at
    // tau 1.2 flips the order (0.45 * 1.2 > 0.55 / 1.2).
    b.qa(
        "d2",
        "what color is the car?",
        &[("red", 0.45, 0.9), ("blue", 0.55, 0.2)],
        "red",
    );
    b.qa(
        "d3",
        "how many chairs are there?",
        &[("two", 0.6, 0.7), ("three", 0.4, 0.4)],
        "two",
    );
    b.qa(
        "d4",
        "what animal is shown?",
        &[("dog", 0.5, 0.85), ("cat", 0.3, 0.4), ("fox", 0.2, 0.3)],
        "dog",
    );
    // Second planted calibration flip.
    b.qa(
        "d5",
        "what is the man holding?",
        &[("phone", 0.45, 0.9), ("cup", 0.55, 0.25)],
        "phone",
    );

    // Mock edit: the better edit has the lower module probability.
    {
        let query = "replace the dog with a cat";
        let program =
            "IMG0=REPLACE(image=IMAGE,object='dog',prompt='a cat')\nFINAL=RESULT(var=IMG0)";
        b.plan(query, program);
        b.fx.replace.insert(
            "d6|dog|a cat".into(),
            vec![(img("d6_bad"), 0.55), (img("d6_edit"), 0.45)],
        );
        b.plant_yesno("d6_edit", "a cat", 0.9);
        b.plant_yesno("d6_bad", "a cat", 0.2);
        b.plant_void("d6_edit");
        b.plant_void("d6_bad");
        b.instances.push(TaskInstance {
            id: "d6".into(),
            kind: TaskKind::EditingMock,
            query: query.into(),
            images: vec![img("d6")],
            frame_scores: None,
            options: None,
            gold: Gold::Answer("d6_edit".into()),
        });
    }

    let b1 = BBox::new(10.0, 10.0, 40.0, 40.0).unwrap();
    let b2 = BBox::new(50.0, 50.0, 60.0, 60.0).unwrap();
    b.grounding("d7", "dog", &[(b1, 0.6, 0.9), (b2, 0.4, 0.2)], b1);
    // Wrong box leads on probability; LOC's tau of 2 lets the probes win.
    let c1 = BBox::new(0.0, 0.0, 20.0, 20.0).unwrap();
    let c2 = BBox::new(30.0, 30.0, 60.0, 60.0).unwrap();
    b.grounding("d8", "cat", &[(c1, 0.6, 0.2), (c2, 0.4, 0.9)], c2);

    // Boolean composition through EVAL.
    {
        let query = "are there two dogs?";
        let program = "A0=VQA(image=IMAGE,question='are there two dogs?')\n\
                       F0=EVAL(expr='{A0} == \"yes\"')\n\
                       FINAL=RESULT(var=F0)";
        b.plan(query, program);
        b.fx.vqa.insert(
            "d9|are there two dogs?".into(),
            vec![("yes".into(), 0.8), ("no".into(), 0.2)],
        );
        b.plant_yesno("d9", "yes", 0.8);
        b.plant_yesno("d9", "no", 0.3);
        b.plant_void("d9");
        b.instances.push(TaskInstance {
            id: "d9".into(),
            kind: TaskKind::Nlvr,
            query: query.into(),
            images: vec![img("d9")],
            frame_scores: None,
            options: None,
            gold: Gold::Bool(true),
        });
    }

    b.instances.push(TaskInstance {
        id: "d10".into(),
        kind: TaskKind::VideoQa,
        query: "when does the action happen?".into(),
        images: vec![],
        frame_scores: Some(vec![0.2, 0.1, 3.0, 4.0, 0.5]),
        options: None,
        gold: Gold::Interval { start: 2, end: 3 },
    });

    DemoWorld {
        corpus: Corpus::new(b.instances).expect("demo corpus is valid"),
        fixtures: b.fx,
        vocab: demo_vocab(),
        registry: demo_registry(),
    }
}

/// Ten single-hop QA instances of which the first `n_bad` get garbage
/// planner output, so their plans never validate.
pub fn planning_failure_world(n_bad: usize) -> DemoWorld {
    let mut b = DemoBuilder { fx: MockFixtures::default(), instances: Vec::new() };
    for k in 0..10 {
        let id = format!("p{k}");
        let question = format!("ping {k}");
        let answer = format!("pong{k}");
        b.qa(&id, &question, &[(answer.as_str(), 0.9, 0.8)], &answer);
        if k < n_bad {
            b.fx
                .plans
                .insert(format!("{question}|0"), vec!["???this is not a program".into()]);
        }
    }
    DemoWorld {
        corpus: Corpus::new(b.instances).expect("corpus is valid"),
        fixtures: b.fx,
        vocab: demo_vocab(),
        registry: demo_registry(),
    }
}
