//! Trained solvers on disk: `meta.json`, `vocab.txt` and `weights.{bin,json}`.

use std::path::Path;

use isaaq_core::attention::AttentionMode;
use isaaq_core::corpus::QuestionKind;
use isaaq_core::encoder::{EncoderSpec, TextEncoder};
use isaaq_core::params::Parameters;
use isaaq_core::retrieval::RetrieverKind;
use isaaq_core::solvers::{DiagramMcSolver, Example, PremiseMode, Solver, SolverScores, TextMcSolver, TrueFalseSolver};
use isaaq_core::train::EpochLog;
use serde::{Deserialize, Serialize};

use crate::dataset::{read_json, write_json};
use crate::error::Result;
use crate::weights::{load_vocab, load_weights, save_vocab, save_weights};

#[derive(Debug, Clone, PartialEq)]
pub enum AnySolver {
    TrueFalse(TrueFalseSolver),
    TextMc(TextMcSolver),
    DiagramMc(DiagramMcSolver),
}

impl AnySolver {
    pub fn new(kind: QuestionKind, id: &str, encoder: TextEncoder, feature_dim: usize, max_len: usize, seed: u64) -> Result<Self> {
        Ok(match kind {
            QuestionKind::TrueFalse => AnySolver::TrueFalse(TrueFalseSolver::new(id, encoder, max_len, seed)),
            QuestionKind::TextMc => AnySolver::TextMc(TextMcSolver::new(id, encoder, max_len, seed)),
            QuestionKind::DiagramMc => AnySolver::DiagramMc(DiagramMcSolver::new(id, encoder, feature_dim, max_len, seed)?),
        })
    }

    pub fn as_solver(&self) -> &dyn Solver {
        match self {
            AnySolver::TrueFalse(s) => s,
            AnySolver::TextMc(s) => s,
            AnySolver::DiagramMc(s) => s,
        }
    }

    pub fn as_solver_mut(&mut self) -> &mut dyn Solver {
        match self {
            AnySolver::TrueFalse(s) => s,
            AnySolver::TextMc(s) => s,
            AnySolver::DiagramMc(s) => s,
        }
    }

    pub fn kind(&self) -> QuestionKind {
        self.as_solver().kind()
    }

    pub fn id(&self) -> &str {
        self.as_solver().id()
    }

    pub fn score(&self, ex: &Example) -> Result<SolverScores> {
        Ok(self.as_solver().score(ex)?)
    }

    pub fn encoder(&self) -> &TextEncoder {
        match self {
            AnySolver::TrueFalse(s) => &s.encoder,
            AnySolver::TextMc(s) => &s.encoder,
            AnySolver::DiagramMc(s) => &s.encoder,
        }
    }

    fn max_len(&self) -> usize {
        match self {
            AnySolver::TrueFalse(s) => s.max_len,
            AnySolver::TextMc(s) => s.max_len,
            AnySolver::DiagramMc(s) => s.max_len,
        }
    }
}

/// Everything about a checkpoint except its tensors and vocabulary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub solver_id: String,
    pub kind: QuestionKind,
    pub retriever: RetrieverKind,
    pub max_len: usize,
    pub encoder: EncoderSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feature_dim: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub premise_mode: Option<PremiseMode>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attention_mode: Option<AttentionMode>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub use_background: Option<bool>,
    #[serde(default)]
    pub best_epoch: usize,
    #[serde(default)]
    pub best_validation_accuracy: f64,
    #[serde(default)]
    pub log: Vec<EpochLog>,
}

impl CheckpointMeta {
    pub fn describe(solver: &AnySolver, retriever: RetrieverKind) -> Self {
        let mut meta = CheckpointMeta {
            solver_id: solver.id().into(),
            kind: solver.kind(),
            retriever,
            max_len: solver.max_len(),
            encoder: solver.encoder().spec.clone(),
            feature_dim: None,
            premise_mode: None,
            attention_mode: None,
            use_background: None,
            best_epoch: 0,
            best_validation_accuracy: 0.0,
            log: Vec::new(),
        };
        match solver {
            AnySolver::TrueFalse(s) => meta.premise_mode = Some(s.premise_mode),
            AnySolver::TextMc(_) => {}
            AnySolver::DiagramMc(s) => {
                meta.feature_dim = Some(s.embedder.feature_dim());
                meta.attention_mode = Some(s.mode);
                meta.use_background = Some(s.use_background);
            }
        }
        meta
    }
}

pub fn save_checkpoint(dir: &Path, solver: &AnySolver, meta: &CheckpointMeta) -> Result<()> {
    write_json(&dir.join("meta.json"), meta)?;
    save_vocab(&dir.join("vocab.txt"), &solver.encoder().vocab)?;
    let params: &dyn Parameters = solver.as_solver();
    save_weights(&dir.join("weights.bin"), params)
}

pub fn load_checkpoint(dir: &Path) -> Result<(AnySolver, CheckpointMeta)> {
    let meta: CheckpointMeta = read_json(&dir.join("meta.json"))?;
    let vocab = load_vocab(&dir.join("vocab.txt"))?;
    let encoder = TextEncoder::new(vocab, meta.encoder.clone(), 0)?;
    let mut solver =
        AnySolver::new(meta.kind, &meta.solver_id, encoder, meta.feature_dim.unwrap_or(1), meta.max_len, 0)?;
    match &mut solver {
        AnySolver::TrueFalse(s) => s.premise_mode = meta.premise_mode.unwrap_or_default(),
        AnySolver::TextMc(_) => {}
        AnySolver::DiagramMc(s) => {
            s.mode = meta.attention_mode.unwrap_or(AttentionMode::TopDown);
            s.use_background = meta.use_background.unwrap_or(true);
        }
    }
    let params: &mut dyn Parameters = solver.as_solver_mut();
    load_weights(&dir.join("weights.bin"), params)?;
    Ok((solver, meta))
}
