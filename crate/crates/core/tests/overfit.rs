mod common;

use isaaq_core::corpus::QuestionKind;
use isaaq_core::solvers::{DiagramMcSolver, TextMcSolver, TrueFalseSolver};
use isaaq_core::train::train;
use isaaq_core::vision::GridHistogram;

#[test]
fn true_false_overfits() {
    let ds = common::toy_dataset();
    let data = ds.examples(QuestionKind::TrueFalse, None);
    let mut s = TrueFalseSolver::new("tf", common::toy_encoder(&ds, 32, 1), 48, 2);
    let run = train(&mut s, &common::toy_config(QuestionKind::TrueFalse, 200), &data, &[]).unwrap();
    assert_eq!(run.log.last().unwrap().train_accuracy, Some(100.0));
}

#[test]
fn text_mc_overfits() {
    let ds = common::toy_dataset();
    let data = ds.examples(QuestionKind::TextMc, None);
    let mut s = TextMcSolver::new("mc", common::toy_encoder(&ds, 32, 3), 48, 4);
    let run = train(&mut s, &common::toy_config(QuestionKind::TextMc, 200), &data, &[]).unwrap();
    assert_eq!(run.log.last().unwrap().train_accuracy, Some(100.0));
}

#[test]
fn diagram_mc_overfits() {
    let ds = common::toy_dataset();
    let data: Vec<_> = ds.diagram_inputs(None, &GridHistogram::default()).unwrap().into_iter().map(|d| d.example).collect();
    let mut s = DiagramMcSolver::new("dmc", common::toy_encoder(&ds, 32, 5), 1000, 48, 6).unwrap();
    let run = train(&mut s, &common::toy_config(QuestionKind::DiagramMc, 200), &data, &[]).unwrap();
    assert_eq!(run.log.last().unwrap().train_accuracy, Some(100.0));
}
