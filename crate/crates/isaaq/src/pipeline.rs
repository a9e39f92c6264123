//! Glue between the on-disk caches and the core algorithms.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use isaaq_core::corpus::{Corpus, Question, QuestionKind, SplitName};
use isaaq_core::encoder::TextEncoder;
use isaaq_core::eval::DiagramInput;
use isaaq_core::params::Parameters;
use isaaq_core::retrieval::{
    closest_feature, ir_retrieve, nn_retrieve, nsp_retrieve, Bm25Index, EncoderEmbedder, EncoderNsp, Passage,
    RetrieverConfig, RetrieverKind,
};
use isaaq_core::solvers::{Example, SolverScores};
use isaaq_core::train::{train, EpochLog, TrainConfig};
use isaaq_core::tokenizer::Vocab;
use sha2::{Digest, Sha256};

use crate::cache::{append_passages, config_hash, passage_path, read_passages, PassageMap, PassageRecord};
use crate::checkpoint::AnySolver;
use crate::config::RunConfig;
use crate::dataset::{read_json, write_json};
use crate::error::{io, Error, Result};
use crate::features::FeatureStore;
use crate::weights::{load_vocab, load_weights, save_vocab, save_weights};

/// The question a retriever sees. True/false questions have no option text
/// worth searching for, so their stem stands in as the single option.
pub fn retrieval_query(q: &Question) -> Question {
    match q.kind {
        QuestionKind::TrueFalse => Question { options: vec![q.stem.clone()], answer_index: 0, ..q.clone() },
        _ => q.clone(),
    }
}

/// Frozen encoder used by the NSP and NN retrievers.
#[derive(Debug, Clone)]
pub struct FrozenEncoder {
    pub encoder: TextEncoder,
    pub max_len: usize,
    pub seed: u64,
}

impl FrozenEncoder {
    /// Hash input covering the weights, so a changed encoder invalidates
    /// cached passages.
    pub fn fingerprint(&self) -> Vec<u8> {
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(&self.encoder.spec).expect("spec serialises"));
        h.update(self.encoder.vocab.to_text());
        self.encoder.params.visit("", &mut |name, m| {
            h.update(name);
            for v in m.data() {
                h.update(v.to_le_bytes());
            }
        });
        h.update(self.max_len.to_le_bytes());
        h.update(self.seed.to_le_bytes());
        h.finalize().to_vec()
    }
}

/// Toy encoder over the corpus vocabulary, shaped by `cfg`.
pub fn corpus_encoder(corpus: &Corpus, cfg: &RunConfig) -> Result<TextEncoder> {
    let vocab = Vocab::build(corpus.texts());
    let spec = cfg.encoder.spec(vocab.len(), cfg.train.dropout);
    Ok(TextEncoder::new(vocab, spec, cfg.train.seed)?)
}

/// An encoder directory holds `spec.json`, `vocab.txt` and `weights.{bin,json}`.
pub fn save_encoder(dir: &Path, encoder: &TextEncoder) -> Result<()> {
    write_json(&dir.join("spec.json"), &encoder.spec)?;
    save_vocab(&dir.join("vocab.txt"), &encoder.vocab)?;
    save_weights(&dir.join("weights.bin"), &encoder.params)
}

/// Loads an externally exported encoder, checking it against its spec.
pub fn load_encoder(dir: &Path) -> Result<TextEncoder> {
    let spec = read_json(&dir.join("spec.json"))?;
    let vocab = load_vocab(&dir.join("vocab.txt"))?;
    let mut encoder = TextEncoder::new(vocab, spec, 0)?;
    load_weights(&dir.join("weights.bin"), &mut encoder.params)?;
    Ok(encoder)
}

fn options_to_retrieve(q: &Question) -> std::ops::Range<usize> {
    match q.kind {
        QuestionKind::TrueFalse => 0..1,
        _ => 0..q.options.len(),
    }
}

/// Retrieves backgrounds for every question of `split`.
pub fn retrieve_split(
    corpus: &Corpus,
    split: SplitName,
    kind: RetrieverKind,
    cfg: &RetrieverConfig,
    frozen: Option<&FrozenEncoder>,
) -> Result<Vec<Passage>> {
    let questions = corpus.questions_in(split);
    let mut out = Vec::new();
    match kind {
        RetrieverKind::Ir => {
            let index = Bm25Index::build(corpus, &cfg.stopwords);
            for q in questions {
                let rq = retrieval_query(q);
                for i in options_to_retrieve(q) {
                    out.push(ir_retrieve(&rq, i, &index, cfg)?);
                }
            }
        }
        RetrieverKind::Nsp | RetrieverKind::Nn => {
            let frozen = frozen.ok_or_else(|| Error::Usage(format!("{} retrieval needs an encoder", kind.as_str())))?;
            let nsp = EncoderNsp::new(frozen.encoder.clone(), frozen.max_len, frozen.seed);
            let nn = EncoderEmbedder { encoder: frozen.encoder.clone(), max_len: frozen.max_len };
            for q in questions {
                let rq = retrieval_query(q);
                let lesson = corpus.lesson(&q.lesson_id)?;
                for i in options_to_retrieve(q) {
                    out.push(match kind {
                        RetrieverKind::Nsp => nsp_retrieve(&rq, i, lesson, &nsp, cfg)?,
                        _ => nn_retrieve(&rq, i, lesson, &nn, cfg)?,
                    });
                }
            }
        }
    }
    Ok(out)
}

fn hash_path(cache: &Path, split: SplitName, kind: RetrieverKind) -> std::path::PathBuf {
    passage_path(cache, split, kind).with_extension("hash")
}

/// Retrieves and appends to the cache, recording the config hash as current.
pub fn retrieve_to_cache(
    cache: &Path,
    corpus: &Corpus,
    split: SplitName,
    kind: RetrieverKind,
    cfg: &RetrieverConfig,
    frozen: Option<&FrozenEncoder>,
) -> Result<(String, usize)> {
    let extra = frozen.map(FrozenEncoder::fingerprint).unwrap_or_default();
    let hash = config_hash(kind, cfg, &extra);
    let passages = retrieve_split(corpus, split, kind, cfg, frozen)?;
    let records: Vec<PassageRecord> = passages.iter().map(|p| PassageRecord::new(p, &hash)).collect();
    append_passages(&passage_path(cache, split, kind), &records)?;
    let hp = hash_path(cache, split, kind);
    fs::write(&hp, &hash).map_err(io(&hp))?;
    Ok((hash, records.len()))
}

/// Passages written by the latest `retrieve` run for `(split, kind)`.
pub fn cached_passages(cache: &Path, split: SplitName, kind: RetrieverKind) -> Result<PassageMap> {
    let hp = hash_path(cache, split, kind);
    let hash = fs::read_to_string(&hp).map_err(|_| Error::MissingCache {
        what: format!("{} passages for the {} split", kind.as_str(), split.as_str()),
        path: passage_path(cache, split, kind),
        command: format!("retrieve --retriever {} --split {}", kind.as_str(), split.as_str()),
    })?;
    read_passages(&passage_path(cache, split, kind), hash.trim())
}

fn missing(q: &Question, option: usize, kind: RetrieverKind) -> Error {
    Error::MissingCache {
        what: format!("{} passage for {} option {option}", kind.as_str(), q.id),
        path: "passages".into(),
        command: format!("retrieve --retriever {}", kind.as_str()),
    }
}

/// Sentence text by id, preferring the question's own lesson.
fn sentence_text<'c>(corpus: &'c Corpus, q: &Question, id: &str) -> Option<&'c str> {
    let own = corpus.lesson(&q.lesson_id).ok()?;
    own.sentences
        .iter()
        .chain(corpus.lessons().iter().flat_map(|l| l.sentences.iter()))
        .find(|s| s.id == id)
        .map(|s| s.text.as_str())
}

/// Example for one question from cached passages; regions are filled in by
/// [`diagram_inputs`].
pub fn text_example(corpus: &Corpus, q: &Question, passages: &PassageMap, kind: RetrieverKind) -> Result<Example> {
    let backgrounds = match q.kind {
        QuestionKind::TrueFalse => {
            let r = passages.get(&(q.id.clone(), 0)).ok_or_else(|| missing(q, 0, kind))?;
            let texts: Option<Vec<String>> =
                r.sentence_ids.iter().map(|id| sentence_text(corpus, q, id).map(str::to_string)).collect();
            texts.unwrap_or_else(|| vec![r.text.clone()])
        }
        _ => (0..q.options.len())
            .map(|i| passages.get(&(q.id.clone(), i)).map(|r| r.text.clone()).ok_or_else(|| missing(q, i, kind)))
            .collect::<Result<_>>()?,
    };
    Ok(Example { question: q.clone(), backgrounds, rois: None, background_rois: None })
}

pub fn text_examples(
    corpus: &Corpus,
    split: SplitName,
    task: QuestionKind,
    passages: &PassageMap,
    kind: RetrieverKind,
) -> Result<Vec<Example>> {
    corpus
        .questions_in(split)
        .into_iter()
        .filter(|q| q.kind == task)
        .map(|q| text_example(corpus, q, passages, kind))
        .collect()
}

/// Attaches question and background-diagram regions to a diagram example.
/// The background diagram is the lesson diagram whose whole-image feature is
/// closest to the question diagram's.
pub fn diagram_input(corpus: &Corpus, mut example: Example, features: &FeatureStore) -> Result<DiagramInput> {
    let q = &example.question;
    let id = q.diagram.as_ref().map(|d| d.id().to_string()).ok_or_else(|| {
        isaaq_core::Error::Validation { id: q.id.clone(), reason: "diagram question without a diagram".into() }
    })?;
    let global = features.global(&id)?;
    let lesson = corpus.lesson(&q.lesson_id)?;
    let candidates: Vec<&str> = lesson
        .diagrams
        .iter()
        .map(|d| d.id())
        .filter(|d| *d != id && features.manifest.diagrams.contains_key(*d))
        .collect();
    let globals = candidates.iter().map(|d| features.global(d).map(|r| r.feature)).collect::<Result<Vec<_>>>()?;
    let background = closest_feature(&global.feature, &globals).map(|(i, _)| candidates[i]);
    example.rois = Some(features.rois(&id)?);
    let (background_rois, background_global) = match background {
        Some(b) => (Some(features.rois(b)?), Some(features.global(b)?)),
        None => (None, None),
    };
    example.background_rois = background_rois;
    Ok(DiagramInput { example, global, background_global })
}

pub fn diagram_inputs(
    corpus: &Corpus,
    split: SplitName,
    passages: &PassageMap,
    kind: RetrieverKind,
    features: &FeatureStore,
) -> Result<Vec<DiagramInput>> {
    text_examples(corpus, split, QuestionKind::DiagramMc, passages, kind)?
        .into_iter()
        .map(|ex| diagram_input(corpus, ex, features))
        .collect()
}

/// Examples of `task` for `split`, reading every cache the task needs.
pub fn load_examples(
    cache: &Path,
    corpus: &Corpus,
    split: SplitName,
    task: QuestionKind,
    kind: RetrieverKind,
) -> Result<Vec<Example>> {
    if corpus.questions_in(split).iter().all(|q| q.kind != task) {
        return Ok(Vec::new());
    }
    let passages = cached_passages(cache, split, kind)?;
    match task {
        QuestionKind::DiagramMc => {
            let features = FeatureStore::open(&cache.join("features"))?;
            Ok(diagram_inputs(corpus, split, &passages, kind, &features)?.into_iter().map(|d| d.example).collect())
        }
        _ => text_examples(corpus, split, task, &passages, kind),
    }
}

#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub best_epoch: usize,
    pub best_validation_accuracy: f64,
    pub log: Vec<EpochLog>,
}

/// Trains whichever solver `solver` holds and returns its best checkpoint.
pub fn train_any(solver: &mut AnySolver, cfg: &TrainConfig, tr: &[Example], va: &[Example]) -> Result<(AnySolver, TrainSummary)> {
    macro_rules! run {
        ($s:expr, $wrap:path) => {{
            let run = train($s, cfg, tr, va)?;
            let summary = TrainSummary {
                best_epoch: run.best_epoch,
                best_validation_accuracy: run.best_validation_accuracy,
                log: run.log,
            };
            ($wrap(run.best), summary)
        }};
    }
    Ok(match solver {
        AnySolver::TrueFalse(s) => run!(s, AnySolver::TrueFalse),
        AnySolver::TextMc(s) => run!(s, AnySolver::TextMc),
        AnySolver::DiagramMc(s) => run!(s, AnySolver::DiagramMc),
    })
}

/// Scores every example, spreading questions over the available cores.
pub fn score_all(solver: &AnySolver, examples: &[Example]) -> Result<Vec<SolverScores>> {
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get()).min(examples.len().max(1));
    let chunk = examples.len().div_ceil(workers).max(1);
    std::thread::scope(|scope| {
        let handles: Vec<_> = examples
            .chunks(chunk)
            .map(|part| scope.spawn(move || part.iter().map(|ex| solver.score(ex)).collect::<Result<Vec<_>>>()))
            .collect();
        let mut out = Vec::with_capacity(examples.len());
        for h in handles {
            out.extend(h.join().expect("scoring thread panicked")?);
        }
        Ok(out)
    })
}

pub fn write_scores(path: &Path, scores: &[SolverScores]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io(dir))?;
    }
    let mut text = String::new();
    for s in scores {
        text.push_str(&serde_json::to_string(s).expect("scores serialise"));
        text.push('\n');
    }
    fs::write(path, text).map_err(io(path))
}

pub fn read_scores(path: &Path) -> Result<Vec<SolverScores>> {
    let text = fs::read_to_string(path).map_err(io(path))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, line)| {
            let mut s: SolverScores = serde_json::from_str(line)
                .map_err(|e| Error::Format { path: path.into(), reason: format!("line {}: {e}", n + 1) })?;
            s.refresh();
            Ok(s)
        })
        .collect()
}

pub fn labels(corpus: &Corpus, split: SplitName) -> BTreeMap<String, usize> {
    corpus.questions_in(split).into_iter().map(|q| (q.id.clone(), q.answer_index)).collect()
}
