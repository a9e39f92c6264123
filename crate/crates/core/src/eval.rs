//! Accuracy reports, the visual ablation runner, and attention export.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt::Write;

use serde::{Deserialize, Serialize};

use crate::attention::AttentionMode;
use crate::corpus::{Corpus, QuestionKind, SplitName, Subject};
use crate::solvers::{DiagramMcSolver, Example};
use crate::train::{accuracy, train, TrainConfig};
use crate::vision::{BBox, RoI, RoISet};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Accuracy {
    pub correct: usize,
    pub total: usize,
    /// Percentage in `[0, 100]`; zero when `total` is zero.
    pub accuracy: f64,
}

impl Accuracy {
    fn add(&mut self, hit: bool) {
        self.total += 1;
        self.correct += usize::from(hit);
        self.accuracy = 100.0 * self.correct as f64 / self.total as f64;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub name: String,
    pub overall: Accuracy,
    pub by_kind: BTreeMap<QuestionKind, Accuracy>,
    pub by_subject: BTreeMap<Subject, Accuracy>,
}

/// One question as seen by one row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Outcome {
    pub row: String,
    pub question_id: String,
    pub kind: QuestionKind,
    pub subject: Subject,
    pub predicted: usize,
    pub answer: usize,
    pub hit: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub label: String,
    pub best_epoch: usize,
    pub validation_accuracy: f64,
    pub test_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EvalReport {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<SplitName>,
    /// Questions in the split per type.
    pub totals: BTreeMap<QuestionKind, usize>,
    pub rows: Vec<ReportRow>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub ablation: Vec<AblationRow>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub outcomes: Vec<Outcome>,
}

/// Predicted option index per question id.
pub type Predictions = BTreeMap<String, usize>;

/// Scores every named prediction set against `split`. A row only counts the
/// questions it has predictions for, so a per-type solver fills one column.
pub fn evaluate(corpus: &Corpus, split: SplitName, rows: &[(&str, &Predictions)]) -> Result<EvalReport> {
    let questions = corpus.questions_in(split);
    if questions.is_empty() {
        return Err(Error::Config(format!("split {} has no questions", split.as_str())));
    }
    let mut report = EvalReport { split: Some(split), ..EvalReport::default() };
    for q in &questions {
        *report.totals.entry(q.kind).or_default() += 1;
    }
    for (name, preds) in rows {
        let mut row = ReportRow {
            name: name.to_string(),
            overall: Accuracy::default(),
            by_kind: BTreeMap::new(),
            by_subject: BTreeMap::new(),
        };
        for q in &questions {
            let Some(&predicted) = preds.get(&q.id) else { continue };
            if predicted >= q.num_options() {
                return Err(Error::OptionOutOfRange { index: predicted, count: q.num_options() });
            }
            let subject = corpus.subject_of(q).ok_or_else(|| Error::NotFound { kind: "lesson", id: q.lesson_id.clone() })?;
            let hit = predicted == q.answer_index;
            row.overall.add(hit);
            row.by_kind.entry(q.kind).or_default().add(hit);
            row.by_subject.entry(subject).or_default().add(hit);
            report.outcomes.push(Outcome {
                row: name.to_string(),
                question_id: q.id.clone(),
                kind: q.kind,
                subject,
                predicted,
                answer: q.answer_index,
                hit,
            });
        }
        report.rows.push(row);
    }
    Ok(report)
}

impl EvalReport {
    /// One line per row: overall then per type and per subject accuracy.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        if !self.rows.is_empty() {
            out.push_str("row,all");
            for k in QuestionKind::ALL {
                let _ = write!(out, ",{}", k.as_str());
            }
            for s in Subject::ALL {
                let _ = write!(out, ",{}", s.as_str());
            }
            out.push('\n');
            for r in &self.rows {
                out.push_str(&r.name);
                let _ = write!(out, ",{}", cell(Some(&r.overall)));
                for k in QuestionKind::ALL {
                    let _ = write!(out, ",{}", cell(r.by_kind.get(&k)));
                }
                for s in Subject::ALL {
                    let _ = write!(out, ",{}", cell(r.by_subject.get(&s)));
                }
                out.push('\n');
            }
        }
        if !self.ablation.is_empty() {
            out.push_str("variant,best_epoch,validation,test\n");
            for a in &self.ablation {
                let _ = writeln!(out, "{},{},{:.2},{:.2}", a.label, a.best_epoch, a.validation_accuracy, a.test_accuracy);
            }
        }
        out
    }

    /// Hit/miss listing as CSV.
    pub fn outcomes_csv(&self) -> String {
        let mut out = String::from("row,question_id,kind,subject,predicted,answer,hit\n");
        for o in &self.outcomes {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                o.row,
                o.question_id,
                o.kind.as_str(),
                o.subject.as_str(),
                o.predicted,
                o.answer,
                u8::from(o.hit)
            );
        }
        out
    }
}

fn cell(a: Option<&Accuracy>) -> String {
    match a {
        Some(a) if a.total > 0 => format!("{:.2}", a.accuracy),
        _ => String::new(),
    }
}

/// Rows of the visual ablation, from text only to full attention.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationVariant {
    Text,
    Visual,
    BackgroundDiagram,
    BottomUp,
    TopDown,
}

impl AblationVariant {
    pub const ALL: [AblationVariant; 5] = [
        AblationVariant::Text,
        AblationVariant::Visual,
        AblationVariant::BackgroundDiagram,
        AblationVariant::BottomUp,
        AblationVariant::TopDown,
    ];

    pub fn label(self) -> &'static str {
        match self {
            AblationVariant::Text => "text",
            AblationVariant::Visual => "text+visual",
            AblationVariant::BackgroundDiagram => "text+visual+background diagram",
            AblationVariant::BottomUp => "text+visual+BU attention",
            AblationVariant::TopDown => "text+visual+BUTD attention",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        let key = s.trim().trim_start_matches('+').to_ascii_lowercase();
        let v = match key.as_str() {
            "text" | "text-only" | "text_only" => AblationVariant::Text,
            "visual" | "text+visual" => AblationVariant::Visual,
            "background-diagram" | "background_diagram" | "text+visual+background diagram" => AblationVariant::BackgroundDiagram,
            "bu" | "bottom_up" | "text+visual+bu attention" => AblationVariant::BottomUp,
            "butd" | "top_down" | "text+visual+butd attention" => AblationVariant::TopDown,
            _ => return Err(Error::Config(format!("unknown ablation variant {s:?}"))),
        };
        Ok(v)
    }

    pub fn attention_mode(self) -> AttentionMode {
        match self {
            AblationVariant::Text => AttentionMode::TextOnly,
            AblationVariant::TopDown => AttentionMode::TopDown,
            _ => AttentionMode::BottomUp,
        }
    }

    /// Sets the attention mode and background use on `solver`.
    pub fn configure(self, solver: &mut DiagramMcSolver) {
        solver.mode = self.attention_mode();
        solver.use_background = !matches!(self, AblationVariant::Text | AblationVariant::Visual);
    }

    /// Region inputs this variant sees. The two whole-diagram variants use the
    /// global region only; the attention variants use the detected regions.
    pub fn example(self, input: &DiagramInput) -> Example {
        let mut ex = input.example.clone();
        let single = |diagram_id: &str, roi: &RoI| RoISet { diagram_id: diagram_id.into(), rois: vec![roi.clone()] };
        let qid = input.example.rois.as_ref().map_or_else(String::new, |r| r.diagram_id.clone());
        match self {
            AblationVariant::Text => ex.background_rois = None,
            AblationVariant::Visual => {
                ex.rois = Some(single(&qid, &input.global));
                ex.background_rois = None;
            }
            AblationVariant::BackgroundDiagram => {
                ex.rois = Some(single(&qid, &input.global));
                ex.background_rois = input.background_global.as_ref().map(|g| {
                    let id = input.example.background_rois.as_ref().map_or_else(String::new, |r| r.diagram_id.clone());
                    single(&id, g)
                });
            }
            AblationVariant::BottomUp | AblationVariant::TopDown => {}
        }
        ex
    }
}

/// Ordered, de-duplicated variant list.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AblationPlan {
    pub variants: Vec<AblationVariant>,
}

impl AblationPlan {
    pub fn all() -> Self {
        Self { variants: AblationVariant::ALL.to_vec() }
    }

    pub fn parse<'a>(names: impl IntoIterator<Item = &'a str>) -> Result<Self> {
        let mut variants = names.into_iter().map(AblationVariant::parse).collect::<Result<Vec<_>>>()?;
        variants.sort();
        variants.dedup();
        if variants.is_empty() {
            return Err(Error::Config("empty ablation plan".into()));
        }
        Ok(Self { variants })
    }
}

/// A diagram example plus the whole-image regions the coarse variants use.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagramInput {
    pub example: Example,
    pub global: RoI,
    pub background_global: Option<RoI>,
}

/// Trains a fresh solver per variant and reports validation and test
/// accuracy of its best epoch.
pub fn ablate<F>(
    plan: &AblationPlan,
    mut make_solver: F,
    cfg: &TrainConfig,
    train_set: &[DiagramInput],
    validation: &[DiagramInput],
    test: &[DiagramInput],
) -> Result<EvalReport>
where
    F: FnMut(AblationVariant) -> Result<DiagramMcSolver>,
{
    let mut rows = Vec::with_capacity(plan.variants.len());
    for &v in &plan.variants {
        let mut solver = make_solver(v)?;
        v.configure(&mut solver);
        let map = |xs: &[DiagramInput]| xs.iter().map(|x| v.example(x)).collect::<Vec<_>>();
        let (tr, va, te) = (map(train_set), map(validation), map(test));
        let run = train(&mut solver, cfg, &tr, &va)?;
        rows.push(AblationRow {
            label: v.label().into(),
            best_epoch: run.best_epoch,
            validation_accuracy: run.best_validation_accuracy,
            test_accuracy: accuracy(&run.best, &te)?,
        });
    }
    Ok(EvalReport { ablation: rows, ..EvalReport::default() })
}

/// Attention weights of one option over the regions it saw.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionRecord {
    pub question_id: String,
    pub option_index: usize,
    pub bboxes: Vec<BBox>,
    pub alpha: Vec<f64>,
}

pub fn export_attention(solver: &DiagramMcSolver, ex: &Example) -> Result<Vec<AttentionRecord>> {
    let (bboxes, res) = solver.attention_map(ex)?;
    Ok((0..ex.question.num_options())
        .map(|i| AttentionRecord {
            question_id: ex.question.id.clone(),
            option_index: i,
            bboxes: bboxes.clone(),
            alpha: res.alpha.row(i).to_vec(),
        })
        .collect())
}
