//! Question-type solvers: true/false entailment, text multiple choice, and
//! diagram multiple choice with region attention.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attention::{attend_graph, AttentionMode, AttentionParams, AttentionResult};
use crate::autodiff::{Graph, Var};
use crate::corpus::{Question, QuestionKind, TRUE_FALSE_OPTIONS};
use crate::encoder::{check_ids, dropout, forward, Mode, TextEncoder};
use crate::params::{glorot, join, Parameters};
use crate::sequence::{build_sequence, build_sequence_tf};
use crate::tensor::{argmax, softmax, Matrix};
use crate::vision::{embed_rois_graph, BBox, RoIEmbedderParams, RoISet, MAX_ROIS};
use crate::{Error, Result};

/// Per-option scores of one solver on one question.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverScores {
    pub question_id: String,
    pub solver_id: String,
    pub logits: Vec<f64>,
    #[serde(default, skip_serializing)]
    pub probs: Vec<f64>,
    pub predicted: usize,
}

impl SolverScores {
    pub fn new(question_id: impl Into<String>, solver_id: impl Into<String>, logits: Vec<f64>) -> Self {
        let probs = softmax(&logits);
        let predicted = argmax(&logits);
        Self { question_id: question_id.into(), solver_id: solver_id.into(), logits, probs, predicted }
    }

    /// Recomputes `probs` and `predicted` from `logits`.
    pub fn refresh(&mut self) {
        self.probs = softmax(&self.logits);
        self.predicted = argmax(&self.logits);
    }
}

/// Everything a solver reads for one question.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub question: Question,
    /// One background passage per option for multiple choice; the premise
    /// sentences for true/false.
    pub backgrounds: Vec<String>,
    pub rois: Option<RoISet>,
    pub background_rois: Option<RoISet>,
}

impl Example {
    pub fn label(&self) -> usize {
        self.question.answer_index
    }
}

/// A trainable question-type solver.
pub trait Solver: Parameters {
    fn id(&self) -> &str;
    fn kind(&self) -> QuestionKind;

    /// Builds the `1 × N` logits row on `g`, creating parameters in
    /// [`Parameters::visit`] order.
    fn logits_graph(&self, g: &mut Graph, ex: &Example, mode: &mut Mode<'_>) -> Result<Var>;

    /// Eval-mode scores.
    fn score(&self, ex: &Example) -> Result<SolverScores> {
        let mut g = Graph::new();
        let logits = self.logits_graph(&mut g, ex, &mut Mode::Eval)?;
        Ok(SolverScores::new(ex.question.id.clone(), self.id(), g.value(logits).data().to_vec()))
    }

    /// Negative log-likelihood of the correct option and its gradients, in
    /// visit order.
    fn loss_and_grads(&self, ex: &Example, mode: &mut Mode<'_>) -> Result<(f64, Vec<Matrix>)> {
        let mut g = Graph::new();
        let logits = self.logits_graph(&mut g, ex, mode)?;
        let loss = g.cross_entropy(logits, ex.label());
        let grads = g.backward(loss).params();
        Ok((g.value(loss).get(0, 0), grads))
    }

    fn loss(&self, ex: &Example, mode: &mut Mode<'_>) -> Result<f64> {
        let mut g = Graph::new();
        let logits = self.logits_graph(&mut g, ex, mode)?;
        let loss = g.cross_entropy(logits, ex.label());
        Ok(g.value(loss).get(0, 0))
    }
}

fn check_kind(solver: &'static str, q: &Question, want: QuestionKind) -> Result<()> {
    if q.kind == want {
        Ok(())
    } else {
        Err(Error::WrongKind { solver, question_id: q.id.clone() })
    }
}

/// How the true/false solver consumes its premise sentences.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PremiseMode {
    /// All premise sentences joined into one premise.
    #[default]
    Passage,
    /// Each sentence scored alone; the most confident sentence decides.
    PerSentenceMax,
}

/// Entailment classifier over `[CLS] q [SEP] premise [SEP]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrueFalseSolver {
    pub id: String,
    pub encoder: TextEncoder,
    /// `H × 2`, columns ordered `[true, false]`.
    pub head_weight: Matrix,
    pub head_bias: Matrix,
    pub max_len: usize,
    pub premise_mode: PremiseMode,
}

impl TrueFalseSolver {
    pub fn new(id: impl Into<String>, encoder: TextEncoder, max_len: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = encoder.hidden();
        Self {
            id: id.into(),
            encoder,
            head_weight: glorot(&mut rng, h, 2),
            head_bias: Matrix::zeros(1, 2),
            max_len,
            premise_mode: PremiseMode::Passage,
        }
    }
}

impl Parameters for TrueFalseSolver {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Matrix)) {
        self.encoder.params.visit(&join(prefix, "encoder"), f);
        f(&join(prefix, "head.weight"), &self.head_weight);
        f(&join(prefix, "head.bias"), &self.head_bias);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Matrix)) {
        self.encoder.params.visit_mut(&join(prefix, "encoder"), f);
        f(&join(prefix, "head.weight"), &mut self.head_weight);
        f(&join(prefix, "head.bias"), &mut self.head_bias);
    }
}

impl Solver for TrueFalseSolver {
    fn id(&self) -> &str {
        &self.id
    }

    fn kind(&self) -> QuestionKind {
        QuestionKind::TrueFalse
    }

    fn logits_graph(&self, g: &mut Graph, ex: &Example, mode: &mut Mode<'_>) -> Result<Var> {
        let q = &ex.question;
        check_kind("true/false", q, QuestionKind::TrueFalse)?;
        let order: Vec<usize> = q
            .options
            .iter()
            .map(|o| TRUE_FALSE_OPTIONS.iter().position(|l| o.trim().eq_ignore_ascii_case(l)))
            .collect::<Option<_>>()
            .ok_or_else(|| Error::Validation { id: q.id.clone(), reason: "options are not true/false".into() })?;
        let premises: Vec<String> = match self.premise_mode {
            PremiseMode::Passage => alloc::vec![ex.backgrounds.join(" ")],
            PremiseMode::PerSentenceMax if ex.backgrounds.is_empty() => alloc::vec![String::new()],
            PremiseMode::PerSentenceMax => ex.backgrounds.clone(),
        };
        let seqs: Vec<_> = premises.iter().map(|p| build_sequence_tf(&self.encoder.vocab, &q.stem, p, self.max_len)).collect();
        for s in &seqs {
            check_ids(&self.encoder.spec, s)?;
        }

        let enc = self.encoder.params.bind(g);
        let w = g.param(&self.head_weight);
        let b = g.param(&self.head_bias);
        let mut rows = Vec::with_capacity(seqs.len());
        for s in &seqs {
            let out = forward(g, &self.encoder.spec, &enc, s, mode);
            let pooled = dropout(g, out.pooled, self.encoder.spec.dropout, mode);
            rows.push(g.affine(pooled, w, b));
        }
        let pick = if rows.len() == 1 {
            rows[0]
        } else {
            let conf = |g: &Graph, v: Var| {
                let d = g.value(v).data();
                (d[0] - d[1]).abs()
            };
            let best = (0..rows.len()).fold(0, |best, k| if conf(g, rows[k]) > conf(g, rows[best]) { k } else { best });
            rows[best]
        };
        let two = g.transpose(pick);
        let ordered = g.gather(two, &order);
        Ok(g.transpose(ordered))
    }
}

/// Shared linear head over `[CLS] p_i [SEP] q a_i [SEP]` for each option.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextMcSolver {
    pub id: String,
    pub encoder: TextEncoder,
    /// `H × 1`
    pub head_weight: Matrix,
    pub head_bias: Matrix,
    pub max_len: usize,
}

impl TextMcSolver {
    pub fn new(id: impl Into<String>, encoder: TextEncoder, max_len: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = encoder.hidden();
        Self { id: id.into(), encoder, head_weight: glorot(&mut rng, h, 1), head_bias: Matrix::zeros(1, 1), max_len }
    }
}

impl Parameters for TextMcSolver {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Matrix)) {
        self.encoder.params.visit(&join(prefix, "encoder"), f);
        f(&join(prefix, "head.weight"), &self.head_weight);
        f(&join(prefix, "head.bias"), &self.head_bias);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Matrix)) {
        self.encoder.params.visit_mut(&join(prefix, "encoder"), f);
        f(&join(prefix, "head.weight"), &mut self.head_weight);
        f(&join(prefix, "head.bias"), &mut self.head_bias);
    }
}

/// Pooled vectors of every option, `N × H`.
fn option_pooled(
    g: &mut Graph,
    encoder: &TextEncoder,
    enc: &crate::encoder::EncoderVars,
    ex: &Example,
    max_len: usize,
    mode: &mut Mode<'_>,
) -> Result<Var> {
    let q = &ex.question;
    if ex.backgrounds.len() != q.options.len() {
        return Err(Error::Validation {
            id: q.id.clone(),
            reason: format!("{} passages for {} options", ex.backgrounds.len(), q.options.len()),
        });
    }
    let mut rows = Vec::with_capacity(q.options.len());
    for (opt, passage) in q.options.iter().zip(&ex.backgrounds) {
        let s = build_sequence(&encoder.vocab, passage, &q.stem, opt, max_len);
        check_ids(&encoder.spec, &s)?;
        rows.push(forward(g, &encoder.spec, enc, &s, mode).pooled);
    }
    let c = g.concat_rows(&rows);
    Ok(dropout(g, c, encoder.spec.dropout, mode))
}

impl Solver for TextMcSolver {
    fn id(&self) -> &str {
        &self.id
    }

    fn kind(&self) -> QuestionKind {
        QuestionKind::TextMc
    }

    fn logits_graph(&self, g: &mut Graph, ex: &Example, mode: &mut Mode<'_>) -> Result<Var> {
        check_kind("text multiple choice", &ex.question, QuestionKind::TextMc)?;
        let enc = self.encoder.params.bind(g);
        let w = g.param(&self.head_weight);
        let b = g.param(&self.head_bias);
        let c = option_pooled(g, &self.encoder, &enc, ex, self.max_len, mode)?;
        let n = g.value(c).rows();
        let s = g.affine(c, w, b);
        Ok(g.reshape(s, 1, n))
    }
}

/// Text branch plus region attention, scored by `softmax(U · W_u)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagramMcSolver {
    pub id: String,
    pub encoder: TextEncoder,
    pub embedder: RoIEmbedderParams,
    pub attention: AttentionParams,
    pub max_len: usize,
    pub mode: AttentionMode,
    /// Append background-diagram regions after the question's own.
    pub use_background: bool,
}

impl DiagramMcSolver {
    /// Fails unless the region embedding width equals the encoder hidden size.
    pub fn new(id: impl Into<String>, encoder: TextEncoder, feature_dim: usize, max_len: usize, seed: u64) -> Result<Self> {
        let h = encoder.hidden();
        Ok(Self {
            id: id.into(),
            attention: AttentionParams::init(h, h, seed.wrapping_add(1))?,
            embedder: RoIEmbedderParams::init(feature_dim, crate::vision::POSITION_DIM, h, seed),
            encoder,
            max_len,
            mode: AttentionMode::TopDown,
            use_background: true,
        })
    }

    /// Question-diagram regions first, then background regions, capped jointly.
    pub fn regions<'a>(&self, ex: &'a Example) -> Result<Vec<&'a crate::vision::RoI>> {
        let rois = ex.rois.as_ref().ok_or_else(|| Error::NotFound {
            kind: "diagram regions",
            id: ex.question.diagram.as_ref().map_or_else(|| ex.question.id.clone(), |d| d.id().to_string()),
        })?;
        let mut out: Vec<&crate::vision::RoI> = rois.rois.iter().take(MAX_ROIS).collect();
        if self.use_background {
            if let Some(bg) = &ex.background_rois {
                let room = MAX_ROIS - out.len();
                out.extend(bg.rois.iter().take(room));
            }
        }
        if out.is_empty() {
            return Err(Error::Validation { id: ex.question.id.clone(), reason: "diagram has no regions".into() });
        }
        Ok(out)
    }

    fn build(&self, g: &mut Graph, ex: &Example, mode: &mut Mode<'_>) -> Result<(Var, crate::attention::AttendVars)> {
        check_kind("diagram multiple choice", &ex.question, QuestionKind::DiagramMc)?;
        let regions = self.regions(ex)?;
        let fdim = self.embedder.feature_dim();
        if let Some(r) = regions.iter().find(|r| r.feature.len() != fdim) {
            return Err(Error::Shape { context: "region feature".into(), expected: (1, fdim), got: (1, r.feature.len()) });
        }
        let f = Matrix::from_rows(&regions.iter().map(|r| r.feature.clone()).collect::<Vec<_>>());
        let p = Matrix::from_rows(&regions.iter().map(|r| r.bbox.position().to_vec()).collect::<Vec<_>>());

        let enc = self.encoder.params.bind(g);
        let emb = self.embedder.bind(g);
        let att = self.attention.bind(g);
        let c = option_pooled(g, &self.encoder, &enc, ex, self.max_len, mode)?;
        let fv = g.constant(f);
        let pv = g.constant(p);
        let v = embed_rois_graph(g, &emb, fv, pv);
        let out = attend_graph(g, &att, c, v, self.mode);
        let n = g.value(c).rows();
        let s = g.matmul(out.fused, att.output);
        Ok((g.reshape(s, 1, n), out))
    }

    /// Eval-mode attention weights with the boxes they refer to.
    pub fn attention_map(&self, ex: &Example) -> Result<(Vec<BBox>, AttentionResult)> {
        let boxes = self.regions(ex)?.iter().map(|r| r.bbox).collect();
        let mut g = Graph::new();
        let (_, out) = self.build(&mut g, ex, &mut Mode::Eval)?;
        let n = ex.question.options.len();
        let get = |v: Option<Var>| v.map_or_else(|| Matrix::zeros(n, 0), |v| g.value(v).clone());
        Ok((boxes, AttentionResult { alpha: get(out.alpha), attended: get(out.attended), fused: g.value(out.fused).clone() }))
    }
}

impl Parameters for DiagramMcSolver {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Matrix)) {
        self.encoder.params.visit(&join(prefix, "encoder"), f);
        self.embedder.visit(&join(prefix, "roi_embedder"), f);
        self.attention.visit(&join(prefix, "attention"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Matrix)) {
        self.encoder.params.visit_mut(&join(prefix, "encoder"), f);
        self.embedder.visit_mut(&join(prefix, "roi_embedder"), f);
        self.attention.visit_mut(&join(prefix, "attention"), f);
    }
}

impl Solver for DiagramMcSolver {
    fn id(&self) -> &str {
        &self.id
    }

    fn kind(&self) -> QuestionKind {
        QuestionKind::DiagramMc
    }

    fn logits_graph(&self, g: &mut Graph, ex: &Example, mode: &mut Mode<'_>) -> Result<Var> {
        Ok(self.build(g, ex, mode)?.0)
    }
}

/// Option logits `(C ∘ v̂) · W_u` for given pooled vectors and region
/// embeddings.
pub fn diagram_logits(c: &Matrix, v: &Matrix, params: &AttentionParams, mode: AttentionMode) -> Result<Vec<f64>> {
    let r = crate::attention::attend(c, v, params, mode)?;
    Ok(r.fused.matmul(&params.output).into_vec())
}

/// Scores each option by the lexical score of its best retrieved sentence.
pub fn ir_baseline_scores(question: &Question, solver_id: &str, top_scores: &[Option<f64>]) -> Result<SolverScores> {
    if top_scores.len() != question.options.len() {
        return Err(Error::Validation {
            id: question.id.clone(),
            reason: format!("{} retrieval scores for {} options", top_scores.len(), question.options.len()),
        });
    }
    Ok(SolverScores::new(question.id.clone(), solver_id, top_scores.iter().map(|s| s.unwrap_or(0.0)).collect()))
}
