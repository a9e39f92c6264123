mod common;

use isaaq_core::attention::AttentionMode;
use isaaq_core::corpus::{Corpus, DatasetSplit, Lesson, Question, QuestionKind, Sentence, SplitName, Subject};
use isaaq_core::eval::{ablate, evaluate, export_attention, AblationPlan, AblationVariant, Predictions};
use isaaq_core::solvers::{DiagramMcSolver, Solver};
use isaaq_core::vision::GridHistogram;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn oracle(corpus: &Corpus, split: SplitName) -> Predictions {
    corpus.questions_in(split).iter().map(|q| (q.id.clone(), q.answer_index)).collect()
}

#[test]
fn oracle_predictions_score_full_marks() {
    let ds = common::toy_dataset();
    let preds = oracle(&ds.corpus, SplitName::Test);
    let r = evaluate(&ds.corpus, SplitName::Test, &[("oracle", &preds)]).unwrap();
    let row = &r.rows[0];
    assert_eq!(row.overall.accuracy, 100.0);
    assert!(row.by_kind.values().chain(row.by_subject.values()).all(|a| a.accuracy == 100.0));
    // accounting: subjects and types both sum to the split size
    let n = ds.corpus.questions_in(SplitName::Test).len();
    assert_eq!(r.totals.values().sum::<usize>(), n);
    assert_eq!(row.by_kind.values().map(|a| a.total).sum::<usize>(), n);
    assert_eq!(row.by_subject.values().map(|a| a.total).sum::<usize>(), n);
    assert_eq!(r.outcomes.len(), n);
    assert!(r.to_csv().starts_with("row,all,true_false,text_mc,diagram_mc,life,earth,physical\noracle,100.00"));
    assert_eq!(r.outcomes_csv().lines().count(), n + 1);
}

fn hand_corpus() -> Corpus {
    let lesson = |id: &str, subject| Lesson {
        id: id.into(),
        subject,
        sentences: vec![Sentence { id: format!("{id}.0"), text: "text".into(), position: 0 }],
        diagrams: vec![],
    };
    let q = |id: &str, kind, lesson: &str, n: usize| Question {
        id: id.into(),
        kind,
        stem: "stem".into(),
        options: if kind == QuestionKind::TrueFalse { vec!["true".into(), "false".into()] } else { (0..n).map(|i| format!("o{i}")).collect() },
        answer_index: 1,
        lesson_id: lesson.into(),
        diagram: None,
    };
    Corpus::new(
        vec![lesson("life", Subject::Life), lesson("earth", Subject::Earth)],
        vec![
            q("t1", QuestionKind::TrueFalse, "life", 2),
            q("t2", QuestionKind::TrueFalse, "earth", 2),
            q("m1", QuestionKind::TextMc, "life", 4),
            q("m2", QuestionKind::TextMc, "earth", 4),
            q("m3", QuestionKind::TextMc, "earth", 4),
        ],
        vec![DatasetSplit { name: SplitName::Test, lesson_ids: ["life".to_string(), "earth".to_string()].into() }],
    )
    .unwrap()
}

#[test]
fn hand_counted_fixture() {
    let c = hand_corpus();
    let tf: Predictions = [("t1", 1), ("t2", 0)].iter().map(|(q, p)| (q.to_string(), *p)).collect();
    let mc: Predictions = [("m1", 1), ("m2", 1), ("m3", 3)].iter().map(|(q, p)| (q.to_string(), *p)).collect();
    let all: Predictions = tf.iter().chain(&mc).map(|(k, v)| (k.clone(), *v)).collect();
    let r = evaluate(&c, SplitName::Test, &[("tf", &tf), ("mc", &mc), ("isaaq", &all)]).unwrap();
    assert_eq!(r.rows[0].overall.correct, 1);
    assert_eq!(r.rows[0].overall.total, 2);
    assert!(!r.rows[0].by_kind.contains_key(&QuestionKind::TextMc));
    let isaaq = &r.rows[2];
    assert_eq!((isaaq.overall.correct, isaaq.overall.total), (3, 5));
    assert_eq!(isaaq.by_kind[&QuestionKind::TextMc].correct, 2);
    assert!((isaaq.by_kind[&QuestionKind::TextMc].accuracy - 200.0 / 3.0).abs() < 1e-12);
    assert_eq!((isaaq.by_subject[&Subject::Life].correct, isaaq.by_subject[&Subject::Life].total), (2, 2));
    assert_eq!((isaaq.by_subject[&Subject::Earth].correct, isaaq.by_subject[&Subject::Earth].total), (1, 3));
    assert!(evaluate(&c, SplitName::Train, &[]).is_err());
    let bad: Predictions = [("m1".to_string(), 9)].into();
    assert!(evaluate(&c, SplitName::Test, &[("bad", &bad)]).is_err());
}

#[test]
fn random_guessing_is_near_chance() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let lesson = Lesson {
        id: "l".into(),
        subject: Subject::Physical,
        sentences: vec![Sentence { id: "s".into(), text: "t".into(), position: 0 }],
        diagrams: vec![],
    };
    let qs: Vec<Question> = (0..1000)
        .map(|i| Question {
            id: format!("q{i}"),
            kind: QuestionKind::TextMc,
            stem: "s".into(),
            options: (0..4).map(|k| k.to_string()).collect(),
            answer_index: rng.gen_range(0..4),
            lesson_id: "l".into(),
            diagram: None,
        })
        .collect();
    let c = Corpus::new(vec![lesson], qs, vec![DatasetSplit { name: SplitName::Test, lesson_ids: ["l".to_string()].into() }]).unwrap();
    let guesses: Predictions = c.questions().iter().map(|q| (q.id.clone(), rng.gen_range(0..4))).collect();
    let r = evaluate(&c, SplitName::Test, &[("random", &guesses)]).unwrap();
    assert!((r.rows[0].overall.accuracy - 25.0).abs() <= 4.0, "{}", r.rows[0].overall.accuracy);
}

#[test]
fn ablation_report_rows_and_variant_semantics() {
    let ds = common::toy_dataset();
    let fz = GridHistogram::default();
    let tr = ds.diagram_inputs(Some(SplitName::Train), &fz).unwrap();
    let va = ds.diagram_inputs(Some(SplitName::Validation), &fz).unwrap();
    let te = ds.diagram_inputs(Some(SplitName::Test), &fz).unwrap();
    let cfg = isaaq_core::train::TrainConfig { target_train_accuracy: None, ..common::toy_config(QuestionKind::DiagramMc, 2) };
    let make = |_| DiagramMcSolver::new("dmc", common::toy_encoder(&ds, 16, 1), 1000, 48, 2);
    let report = ablate(&AblationPlan::all(), make, &cfg, &tr, &va, &te).unwrap();
    let labels: Vec<&str> = report.ablation.iter().map(|r| r.label.as_str()).collect();
    assert_eq!(
        labels,
        ["text", "text+visual", "text+visual+background diagram", "text+visual+BU attention", "text+visual+BUTD attention"]
    );
    assert!(report.ablation.iter().all(|r| (0.0..=100.0).contains(&r.test_accuracy)));
    assert!(report.to_csv().starts_with("variant,best_epoch,validation,test\ntext,"));

    let mut solver = make(AblationVariant::BottomUp).unwrap();
    AblationVariant::BottomUp.configure(&mut solver);
    assert_eq!(solver.mode, AttentionMode::BottomUp);
    let bu = AblationVariant::BottomUp.example(&tr[0]);
    let m = bu.rois.as_ref().unwrap().len() + bu.background_rois.as_ref().unwrap().len();
    let (boxes, att) = solver.attention_map(&bu).unwrap();
    assert_eq!(boxes.len(), m);
    assert!(att.alpha.data().iter().all(|&a| a == 1.0 / m as f64));

    let mut text = make(AblationVariant::Text).unwrap();
    AblationVariant::Text.configure(&mut text);
    let ex = AblationVariant::Text.example(&tr[0]);
    let mut shaken = ex.clone();
    for r in &mut shaken.rois.as_mut().unwrap().rois {
        r.feature.iter_mut().for_each(|f| *f = 1.0 - *f * 3.0);
        r.bbox = isaaq_core::vision::BBox::new(0.2, 0.2, 0.3, 0.9);
    }
    assert_eq!(text.score(&ex).unwrap(), text.score(&shaken).unwrap());

    let vis = AblationVariant::Visual.example(&tr[0]);
    assert_eq!(vis.rois.as_ref().unwrap().rois, [tr[0].global.clone()]);
    assert!(vis.background_rois.is_none());
    let bg = AblationVariant::BackgroundDiagram.example(&tr[0]);
    assert_eq!(bg.background_rois.unwrap().rois, [tr[0].background_global.clone().unwrap()]);

    assert!(AblationPlan::parse(["+BU", "+depth"]).is_err());
}

#[test]
fn attention_export_rows() {
    let ds = common::toy_dataset();
    let inputs = ds.diagram_inputs(None, &GridHistogram::default()).unwrap();
    let s = DiagramMcSolver::new("dmc", common::toy_encoder(&ds, 16, 1), 1000, 48, 2).unwrap();
    let rows = export_attention(&s, &inputs[0].example).unwrap();
    assert_eq!(rows.len(), 4);
    for (i, r) in rows.iter().enumerate() {
        assert_eq!(r.option_index, i);
        assert_eq!(r.bboxes.len(), r.alpha.len());
        assert!((r.alpha.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }
}
