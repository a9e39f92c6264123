//! The normalised dataset layout on disk.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use isaaq_core::corpus::{Corpus, DatasetSplit, Lesson, Question, SplitName};
use isaaq_core::vision::{BoxAnnotation, GrayImage};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{io, json, Error, Result};

pub const CORPUS_FILE: &str = "corpus.json";
pub const QUESTIONS_FILE: &str = "questions.json";
pub const SPLITS_FILE: &str = "splits.json";
pub const DIAGRAM_DIR: &str = "diagrams";

#[derive(Debug, Serialize, Deserialize)]
struct CorpusFile {
    lessons: Vec<Lesson>,
}

#[derive(Debug, Serialize, Deserialize)]
struct QuestionsFile {
    questions: Vec<Question>,
}

/// `splits.json` maps split names to lesson-id lists.
type SplitsFile = BTreeMap<SplitName, Vec<String>>;

pub(crate) fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(io(path))?;
    serde_json::from_str(&text).map_err(json(path))
}

pub(crate) fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io(dir))?;
    }
    let mut text = serde_json::to_string_pretty(value).map_err(json(path))?;
    text.push('\n');
    fs::write(path, text).map_err(io(path))
}

/// Loads and validates a dataset root.
pub fn load_dataset(root: &Path) -> Result<Corpus> {
    let corpus: CorpusFile = read_json(&root.join(CORPUS_FILE))?;
    let questions: QuestionsFile = read_json(&root.join(QUESTIONS_FILE))?;
    let splits: SplitsFile = read_json(&root.join(SPLITS_FILE))?;
    let splits = splits
        .into_iter()
        .map(|(name, ids)| DatasetSplit { name, lesson_ids: ids.into_iter().collect() })
        .collect();
    Ok(Corpus::new(corpus.lessons, questions.questions, splits)?)
}

/// Writes the three JSON files of a dataset root. Diagrams are not touched.
pub fn save_dataset(corpus: &Corpus, root: &Path) -> Result<()> {
    write_json(&root.join(CORPUS_FILE), &CorpusFile { lessons: corpus.lessons().to_vec() })?;
    write_json(&root.join(QUESTIONS_FILE), &QuestionsFile { questions: corpus.questions().to_vec() })?;
    let splits: SplitsFile =
        corpus.splits().iter().map(|s| (s.name, s.lesson_ids.iter().cloned().collect())).collect();
    write_json(&root.join(SPLITS_FILE), &splits)
}

pub fn image_path(root: &Path, diagram_id: &str) -> PathBuf {
    root.join(DIAGRAM_DIR).join(format!("{diagram_id}.png"))
}

pub fn boxes_path(root: &Path, diagram_id: &str) -> PathBuf {
    root.join(DIAGRAM_DIR).join(format!("{diagram_id}.boxes.json"))
}

/// Reads any PNG as 8-bit grayscale.
pub fn load_image(path: &Path) -> Result<GrayImage> {
    let img = image::open(path).map_err(|source| match source {
        image::ImageError::IoError(e) => Error::Io { path: path.into(), source: e },
        source => Error::Image { path: path.into(), source },
    })?;
    let luma = img.to_luma8();
    let (w, h) = luma.dimensions();
    Ok(GrayImage::new(w as usize, h as usize, luma.into_raw())?)
}

pub fn save_image(path: &Path, img: &GrayImage) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io(dir))?;
    }
    let buf = image::GrayImage::from_raw(img.width as u32, img.height as u32, img.pixels.clone())
        .ok_or_else(|| Error::Format { path: path.into(), reason: "pixel buffer does not match size".into() })?;
    buf.save(path).map_err(|source| Error::Image { path: path.into(), source })
}

pub fn load_boxes(path: &Path) -> Result<Vec<BoxAnnotation>> {
    read_json(path)
}

pub fn save_boxes(path: &Path, boxes: &[BoxAnnotation]) -> Result<()> {
    write_json(path, boxes)
}
