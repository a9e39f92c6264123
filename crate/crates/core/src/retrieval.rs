//! Background passages for a (question, option) pair.
//!
//! Three text retrievers rank sentences and concatenate the top `n`:
//! lexical BM25 search over the whole corpus (restricted to sentences sharing
//! a content word with the option), next-sentence probability within the
//! lesson, and pooled-embedding cosine similarity within the lesson. A fourth
//! retriever picks the lesson diagram closest to the question diagram.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, DiagramRef, Lesson, Question};
use crate::encoder::{check_ids, Mode, TextEncoder};
use crate::params::glorot;
use crate::sequence::{pair, single, Truncate};
use crate::tensor::{cosine, softmax, Matrix};
use crate::tokenizer::words;
use crate::vision::{DiagramFeaturizer, GrayImage, BBox};
use crate::{Error, Result};

/// The shipped stopword list.
pub const STOPWORDS_V1: &str = include_str!("../data/stopwords-en-v1.txt");

pub const BM25_K1: f64 = 1.2;
pub const BM25_B: f64 = 0.75;

pub fn default_stopwords() -> BTreeSet<String> {
    STOPWORDS_V1
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(String::from)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RetrieverKind {
    Ir,
    Nsp,
    Nn,
}

impl RetrieverKind {
    pub const ALL: [RetrieverKind; 3] = [RetrieverKind::Ir, RetrieverKind::Nsp, RetrieverKind::Nn];

    pub fn as_str(self) -> &'static str {
        match self {
            RetrieverKind::Ir => "ir",
            RetrieverKind::Nsp => "nsp",
            RetrieverKind::Nn => "nn",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.as_str().eq_ignore_ascii_case(s))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scope {
    WholeCorpus,
    LessonOnly,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetrieverConfig {
    pub n: usize,
    pub scope: Scope,
    pub stopwords: BTreeSet<String>,
}

impl RetrieverConfig {
    pub fn new(n: usize, scope: Scope) -> Result<Self> {
        if n == 0 {
            return Err(Error::Config("retriever budget n must be at least 1".into()));
        }
        Ok(Self { n, scope, stopwords: default_stopwords() })
    }

    /// Default settings for a retriever: budget 10, whole corpus for IR and
    /// the question's lesson otherwise.
    pub fn for_kind(kind: RetrieverKind) -> Self {
        let scope = match kind {
            RetrieverKind::Ir => Scope::WholeCorpus,
            _ => Scope::LessonOnly,
        };
        Self { n: 10, scope, stopwords: default_stopwords() }
    }

    pub fn content_words(&self, text: &str) -> Vec<String> {
        words(text).into_iter().filter(|w| !self.stopwords.contains(w)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedSentence {
    pub sentence_id: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Passage {
    pub question_id: String,
    pub option_index: usize,
    pub retriever: RetrieverKind,
    pub sentences: Vec<RankedSentence>,
    pub text: String,
}

impl Passage {
    pub fn top_score(&self) -> Option<f64> {
        self.sentences.first().map(|s| s.score)
    }
}

/// A scored candidate with its tie-break keys.
#[derive(Debug, Clone)]
struct Candidate<'a> {
    lesson: &'a str,
    position: usize,
    id: &'a str,
    text: &'a str,
    score: f64,
}

/// Score descending; ties by sentence position, then sentence id, then lesson id.
fn rank_order(a: &Candidate<'_>, b: &Candidate<'_>) -> Ordering {
    b.score
        .partial_cmp(&a.score)
        .unwrap_or(Ordering::Equal)
        .then_with(|| a.position.cmp(&b.position))
        .then_with(|| a.id.cmp(b.id))
        .then_with(|| a.lesson.cmp(b.lesson))
}

fn compose(q: &Question, option_index: usize, retriever: RetrieverKind, mut cands: Vec<Candidate<'_>>, n: usize) -> Passage {
    cands.sort_by(rank_order);
    cands.truncate(n);
    let text = cands.iter().map(|c| c.text).collect::<Vec<_>>().join(" ");
    Passage {
        question_id: q.id.clone(),
        option_index,
        retriever,
        sentences: cands.iter().map(|c| RankedSentence { sentence_id: c.id.to_string(), score: c.score }).collect(),
        text,
    }
}

fn option_text(q: &Question, option_index: usize) -> Result<&str> {
    q.options
        .get(option_index)
        .map(String::as_str)
        .ok_or(Error::OptionOutOfRange { index: option_index, count: q.options.len() })
}

#[derive(Debug, Clone)]
struct Doc {
    lesson: usize,
    sentence: usize,
    terms: BTreeMap<String, u32>,
    len: usize,
}

/// Okapi BM25 over every sentence of a corpus.
#[derive(Debug, Clone)]
pub struct Bm25Index<'c> {
    corpus: &'c Corpus,
    docs: Vec<Doc>,
    df: BTreeMap<String, usize>,
    avg_len: f64,
    stopwords: BTreeSet<String>,
}

impl<'c> Bm25Index<'c> {
    pub fn build(corpus: &'c Corpus, stopwords: &BTreeSet<String>) -> Self {
        let mut docs = Vec::new();
        let mut df: BTreeMap<String, usize> = BTreeMap::new();
        for (li, lesson) in corpus.lessons().iter().enumerate() {
            for (si, s) in lesson.sentences.iter().enumerate() {
                let toks: Vec<String> = words(&s.text).into_iter().filter(|w| !stopwords.contains(w)).collect();
                let mut terms = BTreeMap::new();
                for t in &toks {
                    *terms.entry(t.clone()).or_insert(0) += 1;
                }
                for t in terms.keys() {
                    *df.entry(t.clone()).or_insert(0) += 1;
                }
                docs.push(Doc { lesson: li, sentence: si, terms, len: toks.len() });
            }
        }
        let avg_len = if docs.is_empty() { 0.0 } else { docs.iter().map(|d| d.len).sum::<usize>() as f64 / docs.len() as f64 };
        Self { corpus, docs, df, avg_len, stopwords: stopwords.clone() }
    }

    pub fn num_docs(&self) -> usize {
        self.docs.len()
    }

    /// `ln(1 + (N − df + 0.5) / (df + 0.5))`.
    pub fn idf(&self, term: &str) -> f64 {
        let n = self.docs.len() as f64;
        let df = self.df.get(term).copied().unwrap_or(0) as f64;
        libm::log(1.0 + (n - df + 0.5) / (df + 0.5))
    }

    fn score_doc(&self, doc: &Doc, query: &BTreeSet<String>) -> f64 {
        let norm = if self.avg_len > 0.0 { doc.len as f64 / self.avg_len } else { 0.0 };
        query
            .iter()
            .filter_map(|t| doc.terms.get(t).map(|&tf| (t, tf as f64)))
            .map(|(t, tf)| self.idf(t) * tf * (BM25_K1 + 1.0) / (tf + BM25_K1 * (1.0 - BM25_B + BM25_B * norm)))
            .sum()
    }

    /// BM25 score of one sentence against a free-text query. Query terms are
    /// de-duplicated.
    pub fn score(&self, lesson: usize, sentence: usize, query: &str) -> f64 {
        let q: BTreeSet<String> = words(query).into_iter().filter(|w| !self.stopwords.contains(w)).collect();
        self.docs
            .iter()
            .find(|d| d.lesson == lesson && d.sentence == sentence)
            .map_or(0.0, |d| self.score_doc(d, &q))
    }
}

/// Lexical retrieval for option `option_index` of `q`.
pub fn ir_retrieve(q: &Question, option_index: usize, index: &Bm25Index<'_>, cfg: &RetrieverConfig) -> Result<Passage> {
    let option = option_text(q, option_index)?;
    let option_terms: BTreeSet<String> = cfg.content_words(option).into_iter().collect();
    let query: BTreeSet<String> =
        cfg.content_words(&format!("{} {}", q.stem, option)).into_iter().collect();
    let lessons = index.corpus.lessons();
    let cands = index
        .docs
        .iter()
        .filter(|d| cfg.scope == Scope::WholeCorpus || lessons[d.lesson].id == q.lesson_id)
        .filter(|d| option_terms.iter().any(|t| d.terms.contains_key(t)))
        .map(|d| {
            let l = &lessons[d.lesson];
            let s = &l.sentences[d.sentence];
            Candidate { lesson: &l.id, position: s.position, id: &s.id, text: &s.text, score: index.score_doc(d, &query) }
        })
        .collect();
    Ok(compose(q, option_index, RetrieverKind::Ir, cands, cfg.n))
}

/// Probability that `second` follows `first`.
pub trait NextSentenceScorer {
    fn is_next(&self, first: &str, second: &str) -> Result<f64>;
}

/// Text → pooled vector.
pub trait PooledEmbedder {
    fn embed(&self, text: &str) -> Result<Vec<f64>>;
}

impl<F: Fn(&str, &str) -> f64> NextSentenceScorer for F {
    fn is_next(&self, first: &str, second: &str) -> Result<f64> {
        Ok(self(first, second))
    }
}

fn qa_text(q: &Question, option: &str) -> String {
    format!("{} {}", q.stem, option)
}

/// Ranks the question's lesson sentences by next-sentence probability of
/// `seq([q, a_i], ls_j)`.
pub fn nsp_retrieve(
    q: &Question,
    option_index: usize,
    lesson: &Lesson,
    scorer: &dyn NextSentenceScorer,
    cfg: &RetrieverConfig,
) -> Result<Passage> {
    let qa = qa_text(q, option_text(q, option_index)?);
    let mut cands = Vec::with_capacity(lesson.sentences.len());
    for s in &lesson.sentences {
        let score = scorer.is_next(&qa, &s.text)?;
        cands.push(Candidate { lesson: &lesson.id, position: s.position, id: &s.id, text: &s.text, score });
    }
    Ok(compose(q, option_index, RetrieverKind::Nsp, cands, cfg.n))
}

/// Ranks the question's lesson sentences by cosine similarity of pooled
/// vectors. A zero-norm embedding scores −1.
pub fn nn_retrieve(
    q: &Question,
    option_index: usize,
    lesson: &Lesson,
    embedder: &dyn PooledEmbedder,
    cfg: &RetrieverConfig,
) -> Result<Passage> {
    let query = embedder.embed(&qa_text(q, option_text(q, option_index)?))?;
    let mut cands = Vec::with_capacity(lesson.sentences.len());
    for s in &lesson.sentences {
        let v = embedder.embed(&s.text)?;
        let score = cosine(&query, &v).unwrap_or(-1.0);
        cands.push(Candidate { lesson: &lesson.id, position: s.position, id: &s.id, text: &s.text, score });
    }
    Ok(compose(q, option_index, RetrieverKind::Nn, cands, cfg.n))
}

/// Index of the candidate feature closest to `query` by cosine; ties go to the
/// lowest index, zero-norm vectors score −1.
pub fn closest_feature(query: &[f64], candidates: &[Vec<f64>]) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (i, c) in candidates.iter().enumerate() {
        let s = cosine(query, c).unwrap_or(-1.0);
        if best.is_none_or(|(_, b)| s > b) {
            best = Some((i, s));
        }
    }
    best
}

/// Picks the lesson diagram most similar to the question diagram.
pub fn diagram_retrieve(
    question_image: &GrayImage,
    lesson_diagrams: &[(DiagramRef, GrayImage)],
    featurizer: &dyn DiagramFeaturizer,
) -> Option<(DiagramRef, f64)> {
    let q = featurizer.featurize(question_image, &BBox::WHOLE);
    let feats: Vec<Vec<f64>> = lesson_diagrams.iter().map(|(_, img)| featurizer.featurize(img, &BBox::WHOLE)).collect();
    closest_feature(&q, &feats).map(|(i, s)| (lesson_diagrams[i].0.clone(), s))
}

/// Frozen encoder with a two-way `[isNext, notNext]` head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderNsp {
    pub encoder: TextEncoder,
    pub head_weight: Matrix,
    pub head_bias: Matrix,
    pub max_len: usize,
}

impl EncoderNsp {
    pub fn new(encoder: TextEncoder, max_len: usize, seed: u64) -> Self {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let h = encoder.hidden();
        Self { encoder, head_weight: glorot(&mut rng, h, 2), head_bias: Matrix::zeros(1, 2), max_len }
    }
}

impl NextSentenceScorer for EncoderNsp {
    fn is_next(&self, first: &str, second: &str) -> Result<f64> {
        let v = &self.encoder.vocab;
        let seq = pair(v, v.encode(first), v.encode(second), self.max_len, Truncate::SecondThenFirst);
        check_ids(&self.encoder.spec, &seq)?;
        let out = self.encoder.encode(&seq, &mut Mode::Eval)?;
        let logits = Matrix::row_vector(out.pooled).matmul(&self.head_weight);
        let logits: Vec<f64> = logits.data().iter().zip(self.head_bias.data()).map(|(a, b)| a + b).collect();
        Ok(softmax(&logits)[0])
    }
}

/// Pooled `[CLS]` vector of `[CLS] text [SEP]`.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderEmbedder {
    pub encoder: TextEncoder,
    pub max_len: usize,
}

impl PooledEmbedder for EncoderEmbedder {
    fn embed(&self, text: &str) -> Result<Vec<f64>> {
        let seq = single(&self.encoder.vocab, text, self.max_len);
        Ok(self.encoder.encode(&seq, &mut Mode::Eval)?.pooled)
    }
}
