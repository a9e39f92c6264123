//! Lessons, questions and splits of a textbook QA dataset.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Subject {
    Life,
    Earth,
    Physical,
}

impl Subject {
    pub const ALL: [Subject; 3] = [Subject::Life, Subject::Earth, Subject::Physical];

    pub fn as_str(self) -> &'static str {
        match self {
            Subject::Life => "life",
            Subject::Earth => "earth",
            Subject::Physical => "physical",
        }
    }
}

/// Identifier of a diagram image; resolves to `diagrams/<id>.png`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DiagramRef(pub String);

impl DiagramRef {
    pub fn new(id: impl Into<String>) -> Self {
        Self(id.into())
    }

    pub fn id(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for DiagramRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sentence {
    pub id: String,
    pub text: String,
    pub position: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Lesson {
    pub id: String,
    pub subject: Subject,
    pub sentences: Vec<Sentence>,
    #[serde(default)]
    pub diagrams: Vec<DiagramRef>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuestionKind {
    TrueFalse,
    TextMc,
    DiagramMc,
}

impl QuestionKind {
    pub const ALL: [QuestionKind; 3] = [QuestionKind::TrueFalse, QuestionKind::TextMc, QuestionKind::DiagramMc];

    pub fn as_str(self) -> &'static str {
        match self {
            QuestionKind::TrueFalse => "true_false",
            QuestionKind::TextMc => "text_mc",
            QuestionKind::DiagramMc => "diagram_mc",
        }
    }
}

/// Option labels every true/false question carries, in order.
pub const TRUE_FALSE_OPTIONS: [&str; 2] = ["true", "false"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Question {
    pub id: String,
    pub kind: QuestionKind,
    pub stem: String,
    pub options: Vec<String>,
    pub answer_index: usize,
    pub lesson_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diagram: Option<DiagramRef>,
}

impl Question {
    pub fn num_options(&self) -> usize {
        self.options.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitName {
    Train,
    Validation,
    Test,
}

impl SplitName {
    pub const ALL: [SplitName; 3] = [SplitName::Train, SplitName::Validation, SplitName::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            SplitName::Train => "train",
            SplitName::Validation => "validation",
            SplitName::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "train" => Some(SplitName::Train),
            "validation" | "val" => Some(SplitName::Validation),
            "test" => Some(SplitName::Test),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub name: SplitName,
    pub lesson_ids: BTreeSet<String>,
}

/// A validated, indexed dataset. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    lessons: Vec<Lesson>,
    questions: Vec<Question>,
    splits: Vec<DatasetSplit>,
    lesson_index: BTreeMap<String, usize>,
    question_index: BTreeMap<String, usize>,
}

fn invalid(id: &str, reason: impl Into<String>) -> Error {
    Error::Validation { id: id.into(), reason: reason.into() }
}

/// Lowercases and trims true/false labels, then checks the option list.
fn normalise_true_false(q: &mut Question) -> Result<()> {
    let labels: Vec<String> = q.options.iter().map(|o| o.trim().to_lowercase()).collect();
    if labels != TRUE_FALSE_OPTIONS {
        return Err(invalid(&q.id, format!("true/false options must be {TRUE_FALSE_OPTIONS:?}, found {:?}", q.options)));
    }
    q.options = labels;
    Ok(())
}

impl Corpus {
    /// Validates every invariant and builds the lookup indices.
    pub fn new(lessons: Vec<Lesson>, mut questions: Vec<Question>, splits: Vec<DatasetSplit>) -> Result<Self> {
        let mut lesson_index = BTreeMap::new();
        for (i, l) in lessons.iter().enumerate() {
            if lesson_index.insert(l.id.clone(), i).is_some() {
                return Err(invalid(&l.id, "duplicate lesson id"));
            }
            let mut ids = BTreeSet::new();
            for (k, s) in l.sentences.iter().enumerate() {
                if !ids.insert(s.id.as_str()) {
                    return Err(invalid(&l.id, format!("duplicate sentence id {}", s.id)));
                }
                if s.text.trim().is_empty() {
                    return Err(invalid(&l.id, format!("sentence {} is empty", s.id)));
                }
                if k > 0 && s.position <= l.sentences[k - 1].position {
                    return Err(invalid(&l.id, format!("sentence {} position not increasing", s.id)));
                }
            }
        }

        let mut question_index = BTreeMap::new();
        for (i, q) in questions.iter_mut().enumerate() {
            if question_index.insert(q.id.clone(), i).is_some() {
                return Err(invalid(&q.id, "duplicate question id"));
            }
            if !lesson_index.contains_key(&q.lesson_id) {
                return Err(invalid(&q.id, format!("unknown lesson {}", q.lesson_id)));
            }
            match q.kind {
                QuestionKind::TrueFalse => normalise_true_false(q)?,
                _ if q.options.len() < 2 => return Err(invalid(&q.id, "fewer than two options")),
                _ => {}
            }
            if q.answer_index >= q.options.len() {
                return Err(invalid(
                    &q.id,
                    format!("answer_index {} out of range for {} options", q.answer_index, q.options.len()),
                ));
            }
            match (q.kind, &q.diagram) {
                (QuestionKind::DiagramMc, None) => return Err(invalid(&q.id, "diagram question without a diagram")),
                (QuestionKind::DiagramMc, Some(_)) => {}
                (_, Some(_)) => return Err(invalid(&q.id, "only diagram questions may carry a diagram")),
                (_, None) => {}
            }
        }

        for s in &splits {
            for id in &s.lesson_ids {
                if !lesson_index.contains_key(id) {
                    return Err(invalid(id, format!("split {} names an unknown lesson", s.name.as_str())));
                }
            }
        }
        for (i, a) in splits.iter().enumerate() {
            for b in &splits[i + 1..] {
                if a.name == b.name {
                    return Err(invalid(a.name.as_str(), "split declared twice"));
                }
                if let Some(shared) = a.lesson_ids.intersection(&b.lesson_ids).next() {
                    return Err(invalid(
                        shared,
                        format!("lesson in both {} and {} splits", a.name.as_str(), b.name.as_str()),
                    ));
                }
            }
        }

        Ok(Self { lessons, questions, splits, lesson_index, question_index })
    }

    pub fn lessons(&self) -> &[Lesson] {
        &self.lessons
    }

    pub fn questions(&self) -> &[Question] {
        &self.questions
    }

    pub fn splits(&self) -> &[DatasetSplit] {
        &self.splits
    }

    pub fn lesson(&self, id: &str) -> Result<&Lesson> {
        self.lesson_index
            .get(id)
            .map(|&i| &self.lessons[i])
            .ok_or_else(|| Error::NotFound { kind: "lesson", id: id.into() })
    }

    pub fn question(&self, id: &str) -> Result<&Question> {
        self.question_index
            .get(id)
            .map(|&i| &self.questions[i])
            .ok_or_else(|| Error::NotFound { kind: "question", id: id.into() })
    }

    /// The lesson that owns `question_id`.
    pub fn lesson_of(&self, question_id: &str) -> Result<&Lesson> {
        let q = self.question(question_id)?;
        self.lesson(&q.lesson_id)
    }

    pub fn split(&self, name: SplitName) -> Option<&DatasetSplit> {
        self.splits.iter().find(|s| s.name == name)
    }

    /// Questions whose lesson belongs to `name`, in corpus order.
    pub fn questions_in(&self, name: SplitName) -> Vec<&Question> {
        match self.split(name) {
            Some(s) => self.questions.iter().filter(|q| s.lesson_ids.contains(&q.lesson_id)).collect(),
            None => Vec::new(),
        }
    }

    pub fn subject_of(&self, question: &Question) -> Option<Subject> {
        self.lesson(&question.lesson_id).ok().map(|l| l.subject)
    }

    /// Every diagram referenced by a lesson or a question.
    pub fn diagram_refs(&self) -> BTreeSet<&DiagramRef> {
        let mut out: BTreeSet<&DiagramRef> = self.lessons.iter().flat_map(|l| &l.diagrams).collect();
        out.extend(self.questions.iter().filter_map(|q| q.diagram.as_ref()));
        out
    }

    /// Every text in the corpus, for building a vocabulary.
    pub fn texts(&self) -> impl Iterator<Item = &str> {
        self.lessons
            .iter()
            .flat_map(|l| l.sentences.iter().map(|s| s.text.as_str()))
            .chain(self.questions.iter().flat_map(|q| core::iter::once(q.stem.as_str()).chain(q.options.iter().map(String::as_str))))
    }

    pub fn into_parts(self) -> (Vec<Lesson>, Vec<Question>, Vec<DatasetSplit>) {
        (self.lessons, self.questions, self.splits)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;
    use alloc::vec;

    fn lesson() -> Lesson {
        Lesson {
            id: "L1".into(),
            subject: Subject::Earth,
            sentences: vec![
                Sentence { id: "S1".into(), text: "Soil forms slowly.".into(), position: 0 },
                Sentence { id: "S2".into(), text: "Topsoil is rich.".into(), position: 1 },
            ],
            diagrams: vec![],
        }
    }

    fn mc() -> Question {
        Question {
            id: "Q1".into(),
            kind: QuestionKind::TextMc,
            stem: "Which layer is rich?".into(),
            options: ["topsoil", "bedrock", "subsoil", "clay"].iter().map(|s| s.to_string()).collect(),
            answer_index: 0,
            lesson_id: "L1".into(),
            diagram: None,
        }
    }

    fn split(name: SplitName, ids: &[&str]) -> DatasetSplit {
        DatasetSplit { name, lesson_ids: ids.iter().map(|s| s.to_string()).collect() }
    }

    #[test]
    fn minimal_fixture_counts() {
        let c = Corpus::new(vec![lesson()], vec![mc()], vec![split(SplitName::Train, &["L1"])]).unwrap();
        assert_eq!(c.lessons().len(), 1);
        assert_eq!(c.lessons()[0].sentences.len(), 2);
        assert_eq!(c.questions().len(), 1);
        assert_eq!(c.lesson_of("Q1").unwrap().id, "L1");
        assert!(matches!(c.lesson_of("nope"), Err(Error::NotFound { .. })));
        assert_eq!(c.questions_in(SplitName::Train).len(), 1);
    }

    #[test]
    fn answer_index_out_of_range() {
        let mut q = mc();
        q.answer_index = 4;
        let err = Corpus::new(vec![lesson()], vec![q], vec![]).unwrap_err();
        assert!(matches!(err, Error::Validation { ref id, .. } if id == "Q1"), "{err}");
    }

    #[test]
    fn true_false_labels_normalised() {
        let mut q = mc();
        q.kind = QuestionKind::TrueFalse;
        q.options = vec![" True".into(), "FALSE".into()];
        let c = Corpus::new(vec![lesson()], vec![q.clone()], vec![]).unwrap();
        assert_eq!(c.questions()[0].options, TRUE_FALSE_OPTIONS);
        q.options = vec!["yes".into(), "no".into()];
        assert!(Corpus::new(vec![lesson()], vec![q], vec![]).is_err());
    }

    #[test]
    fn diagram_presence_tracks_kind() {
        let mut q = mc();
        q.diagram = Some(DiagramRef::new("D1"));
        assert!(Corpus::new(vec![lesson()], vec![q.clone()], vec![]).is_err());
        q.kind = QuestionKind::DiagramMc;
        assert!(Corpus::new(vec![lesson()], vec![q.clone()], vec![]).is_ok());
        q.diagram = None;
        assert!(Corpus::new(vec![lesson()], vec![q], vec![]).is_err());
    }

    #[test]
    fn overlapping_splits_rejected() {
        let err = Corpus::new(
            vec![lesson()],
            vec![],
            vec![split(SplitName::Train, &["L1"]), split(SplitName::Test, &["L1"])],
        )
        .unwrap_err();
        assert!(matches!(err, Error::Validation { .. }));
    }

    #[test]
    fn sentence_invariants() {
        let mut l = lesson();
        l.sentences[1].position = 0;
        assert!(Corpus::new(vec![l.clone()], vec![], vec![]).is_err());
        l.sentences[1].position = 1;
        l.sentences[1].text = "  ".into();
        assert!(Corpus::new(vec![l.clone()], vec![], vec![]).is_err());
        l.sentences[1].text = "x".into();
        l.sentences[1].id = "S1".into();
        assert!(Corpus::new(vec![l], vec![], vec![]).is_err());
    }
}
