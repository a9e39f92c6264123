//! One-shot converter from the original TQA release to the dataset layout.
//!
//! Expects `train/tqa_v1_train.json`, `val/tqa_v1_val.json` and a test file
//! (`test/tqa_v1_test.json` or `test/tqa_v2_test.json`), each a list of
//! lessons, with image paths relative to the JSON file's directory.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use isaaq_core::corpus::{
    Corpus, DatasetSplit, DiagramRef, Lesson, Question, QuestionKind, Sentence, SplitName, Subject,
};
use serde::Serialize;
use serde_json::Value;

use crate::dataset::{image_path, load_image, read_json, save_dataset, save_image};
use crate::error::{Error, Result};

const SPLIT_FILES: [(SplitName, &[&str]); 3] = [
    (SplitName::Train, &["train/tqa_v1_train.json"]),
    (SplitName::Validation, &["val/tqa_v1_val.json"]),
    (SplitName::Test, &["test/tqa_v1_test.json", "test/tqa_v2_test.json"]),
];

#[derive(Debug, Clone, Default, Serialize)]
pub struct ConvertSummary {
    pub lessons: usize,
    pub sentences: usize,
    pub diagrams: usize,
    pub questions: BTreeMap<QuestionKind, usize>,
    pub split_questions: BTreeMap<SplitName, usize>,
    /// Raw question types that have no counterpart here, with counts.
    pub skipped: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, Default)]
pub struct ConvertOptions {
    /// Lesson id → subject; consulted when a lesson carries no `subject`.
    pub subjects: BTreeMap<String, Subject>,
    pub default_subject: Option<Subject>,
}

/// Splits prose on `.`, `!` and `?` followed by whitespace.
pub fn split_sentences(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    let mut chars = text.chars().peekable();
    while let Some(c) = chars.next() {
        cur.push(c);
        if matches!(c, '.' | '!' | '?') && chars.peek().is_none_or(|n| n.is_whitespace()) {
            let s = cur.trim();
            if !s.is_empty() {
                out.push(s.to_string());
            }
            cur.clear();
        }
    }
    let s = cur.trim();
    if !s.is_empty() {
        out.push(s.to_string());
    }
    out
}

fn text_of(v: &Value) -> Option<String> {
    v.get("processedText").or_else(|| v.get("rawText")).and_then(Value::as_str).map(|s| s.trim().to_string())
}

fn bad(path: &Path, reason: impl Into<String>) -> Error {
    Error::Format { path: path.into(), reason: reason.into() }
}

/// Diagram id from an image path: its file stem.
fn diagram_id(image: &str) -> String {
    Path::new(image).file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| image.to_string())
}

struct Converter<'o> {
    out: &'o Path,
    opts: &'o ConvertOptions,
    written: BTreeSet<String>,
    summary: ConvertSummary,
}

impl Converter<'_> {
    fn copy_diagram(&mut self, base: &Path, rel: &str) -> Result<DiagramRef> {
        let id = diagram_id(rel);
        if self.written.insert(id.clone()) {
            let img = load_image(&base.join(rel))?;
            save_image(&image_path(self.out, &id), &img)?;
            self.summary.diagrams += 1;
        }
        Ok(DiagramRef::new(id))
    }

    fn subject(&self, file: &Path, id: &str, raw: &Value) -> Result<Subject> {
        if let Some(s) = raw.get("subject").and_then(Value::as_str) {
            return serde_json::from_value(Value::String(s.to_lowercase()))
                .map_err(|_| bad(file, format!("lesson {id}: unknown subject {s:?}")));
        }
        self.opts
            .subjects
            .get(id)
            .copied()
            .or(self.opts.default_subject)
            .ok_or_else(|| bad(file, format!("lesson {id} has no subject; pass a subject map")))
    }

    fn lesson(&mut self, file: &Path, raw: &Value, questions: &mut Vec<Question>) -> Result<Lesson> {
        let base = file.parent().unwrap_or(Path::new("."));
        let id = raw.get("globalID").and_then(Value::as_str).ok_or_else(|| bad(file, "lesson without globalID"))?;
        let subject = self.subject(file, id, raw)?;

        let mut sentences = Vec::new();
        for section in ["topics", "adjunctTopics"] {
            let Some(topics) = raw.get(section).and_then(Value::as_object) else { continue };
            for topic in topics.values() {
                let text = topic.pointer("/content/text").and_then(Value::as_str).unwrap_or("");
                for s in split_sentences(text) {
                    let position = sentences.len();
                    sentences.push(Sentence { id: format!("{id}.s{position}"), text: s, position });
                }
            }
        }
        self.summary.sentences += sentences.len();

        let mut diagrams = Vec::new();
        if let Some(dd) = raw.get("instructionalDiagrams").and_then(Value::as_object) {
            for d in dd.values() {
                if let Some(p) = d.get("imagePath").and_then(Value::as_str) {
                    diagrams.push(self.copy_diagram(base, p)?);
                }
            }
        }

        let qs = raw.get("questions");
        for (section, is_diagram) in [("nonDiagramQuestions", false), ("diagramQuestions", true)] {
            let Some(map) = qs.and_then(|q| q.get(section)).and_then(Value::as_object) else { continue };
            for (qid, q) in map {
                let raw_type = q.get("questionType").and_then(Value::as_str).unwrap_or("");
                let kind = match (is_diagram, raw_type) {
                    (true, _) => QuestionKind::DiagramMc,
                    (false, "True or False") => QuestionKind::TrueFalse,
                    (false, "Multiple Choice") => QuestionKind::TextMc,
                    _ => {
                        *self.summary.skipped.entry(raw_type.to_string()).or_default() += 1;
                        continue;
                    }
                };
                questions.push(self.question(file, base, id, qid, kind, q)?);
            }
        }
        Ok(Lesson { id: id.to_string(), subject, sentences, diagrams })
    }

    fn question(&mut self, file: &Path, base: &Path, lesson: &str, qid: &str, kind: QuestionKind, q: &Value) -> Result<Question> {
        let stem = q.get("beingAsked").and_then(text_of).ok_or_else(|| bad(file, format!("{qid}: no question text")))?;
        let choices = q.get("answerChoices").and_then(Value::as_object).ok_or_else(|| bad(file, format!("{qid}: no choices")))?;
        // serde_json maps iterate in key order, so letters come out a, b, c, …
        let letters: Vec<&String> = choices.keys().collect();
        let mut options: Vec<String> = choices.values().map(|c| text_of(c).unwrap_or_default()).collect();
        let answer = q.get("correctAnswer").and_then(text_of).ok_or_else(|| bad(file, format!("{qid}: no answer")))?;
        let answer = answer.trim_end_matches('.').to_lowercase();
        let mut answer_index = letters
            .iter()
            .position(|l| l.to_lowercase() == answer)
            .or_else(|| options.iter().position(|o| o.to_lowercase() == answer))
            .ok_or_else(|| bad(file, format!("{qid}: answer {answer:?} matches no choice")))?;
        if kind == QuestionKind::TrueFalse {
            let truth = options[answer_index].trim().to_lowercase();
            answer_index = match truth.as_str() {
                "true" => 0,
                "false" => 1,
                _ => return Err(bad(file, format!("{qid}: true/false answer is {truth:?}"))),
            };
            options = vec!["true".into(), "false".into()];
        }
        let diagram = match kind {
            QuestionKind::DiagramMc => {
                let p = q.get("imagePath").and_then(Value::as_str).ok_or_else(|| bad(file, format!("{qid}: no imagePath")))?;
                Some(self.copy_diagram(base, p)?)
            }
            _ => None,
        };
        Ok(Question { id: qid.to_string(), kind, stem, options, answer_index, lesson_id: lesson.to_string(), diagram })
    }
}

fn find_split_file(raw: &Path, candidates: &[&str]) -> Option<PathBuf> {
    candidates.iter().map(|c| raw.join(c)).find(|p| p.exists())
}

/// Converts the release under `raw` into a dataset root at `out`.
pub fn convert(raw: &Path, out: &Path, opts: &ConvertOptions) -> Result<ConvertSummary> {
    let mut conv = Converter { out, opts, written: BTreeSet::new(), summary: ConvertSummary::default() };
    let mut lessons = Vec::new();
    let mut questions = Vec::new();
    let mut splits = Vec::new();
    for (name, candidates) in SPLIT_FILES {
        let Some(file) = find_split_file(raw, candidates) else { continue };
        let list: Vec<Value> = read_json(&file)?;
        let mut ids = BTreeSet::new();
        let before = questions.len();
        for raw_lesson in &list {
            let l = conv.lesson(&file, raw_lesson, &mut questions)?;
            ids.insert(l.id.clone());
            lessons.push(l);
        }
        conv.summary.split_questions.insert(name, questions.len() - before);
        splits.push(DatasetSplit { name, lesson_ids: ids });
    }
    if splits.is_empty() {
        return Err(Error::Usage(format!("no TQA split files found under {}", raw.display())));
    }
    for q in &questions {
        *conv.summary.questions.entry(q.kind).or_default() += 1;
    }
    conv.summary.lessons = lessons.len();
    let corpus = Corpus::new(lessons, questions, splits)?;
    save_dataset(&corpus, out)?;
    Ok(conv.summary)
}
