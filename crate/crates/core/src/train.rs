//! Adam with linear warm-up and decay, best-epoch selection, and multi-stage
//! fine-tuning.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::QuestionKind;
use crate::encoder::{Mode, TextEncoder};
use crate::params::Parameters;
use crate::retrieval::RetrieverKind;
use crate::solvers::{DiagramMcSolver, Example, Solver, TextMcSolver, TrueFalseSolver};
use crate::tensor::Matrix;
use crate::{Error, Result};

/// Lowest and highest peak learning rate accepted for paper-parity configs.
pub const PARITY_LR_RANGE: (f64, f64) = (1e-6, 5e-5);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub task: QuestionKind,
    pub retriever: RetrieverKind,
    pub peak_lr: f64,
    #[serde(default = "default_warmup")]
    pub warmup_fraction: f64,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_dropout")]
    pub dropout: f64,
    pub max_len: usize,
    #[serde(default)]
    pub seed: u64,
    /// Stop as soon as eval-mode training accuracy reaches this percentage.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_train_accuracy: Option<f64>,
}

fn default_warmup() -> f64 {
    0.1
}
fn default_epochs() -> usize {
    4
}
fn default_batch() -> usize {
    8
}
fn default_dropout() -> f64 {
    0.1
}

impl TrainConfig {
    /// Settings for `task` with the defaults used at full scale.
    pub fn paper(task: QuestionKind, retriever: RetrieverKind) -> Self {
        let (peak_lr, max_len) = match task {
            QuestionKind::TrueFalse => (1e-5, 64),
            QuestionKind::TextMc => (1e-5, 180),
            QuestionKind::DiagramMc => (1e-6, 180),
        };
        Self {
            task,
            retriever,
            peak_lr,
            warmup_fraction: default_warmup(),
            epochs: default_epochs(),
            batch_size: default_batch(),
            dropout: default_dropout(),
            max_len,
            seed: 0,
            target_train_accuracy: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.warmup_fraction) {
            return Err(Error::Config(format!("warmup_fraction {} outside [0, 1]", self.warmup_fraction)));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if !(self.peak_lr > 0.0 && self.peak_lr.is_finite()) {
            return Err(Error::Config(format!("peak_lr {} must be positive", self.peak_lr)));
        }
        if self.max_len < crate::sequence::MIN_MAX_LEN {
            return Err(Error::Config(format!("max_len {} below {}", self.max_len, crate::sequence::MIN_MAX_LEN)));
        }
        Ok(())
    }

    /// Additionally requires the peak rate inside [`PARITY_LR_RANGE`].
    pub fn validate_parity(&self) -> Result<()> {
        self.validate()?;
        let (lo, hi) = PARITY_LR_RANGE;
        if !(lo..=hi).contains(&self.peak_lr) {
            return Err(Error::Config(format!("peak_lr {} outside [{lo}, {hi}]", self.peak_lr)));
        }
        Ok(())
    }
}

/// Linear warm-up to `peak` then linear decay to zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearSchedule {
    pub peak: f64,
    pub warmup_steps: usize,
    pub total_steps: usize,
}

impl LinearSchedule {
    pub fn new(peak: f64, warmup_fraction: f64, total_steps: usize) -> Self {
        let warmup_steps = libm::round(warmup_fraction * total_steps as f64) as usize;
        Self { peak, warmup_steps: warmup_steps.min(total_steps), total_steps }
    }

    pub fn lr(&self, step: usize) -> f64 {
        if step < self.warmup_steps {
            return self.peak * step as f64 / self.warmup_steps as f64;
        }
        let decay = self.total_steps.saturating_sub(self.warmup_steps);
        if decay == 0 {
            return 0.0;
        }
        self.peak * (self.total_steps.saturating_sub(step)) as f64 / decay as f64
    }
}

/// Adam without weight decay.
#[derive(Debug, Clone)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<Matrix>,
    v: Vec<Matrix>,
    t: i32,
}

impl Adam {
    pub fn new(params: &dyn Parameters) -> Self {
        let mut m = Vec::new();
        params.visit("", &mut |_, p| m.push(Matrix::zeros(p.rows(), p.cols())));
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8, v: m.clone(), m, t: 0 }
    }

    pub fn step(&mut self, params: &mut dyn Parameters, grads: &[Matrix], lr: f64) {
        self.t += 1;
        let bc1 = 1.0 - libm::pow(self.beta1, self.t as f64);
        let bc2 = 1.0 - libm::pow(self.beta2, self.t as f64);
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        let mut k = 0;
        let (ms, vs) = (&mut self.m, &mut self.v);
        params.visit_mut("", &mut |_, p| {
            let g = &grads[k];
            let (m, v) = (&mut ms[k], &mut vs[k]);
            for i in 0..p.len() {
                let gi = g.data()[i];
                let mi = b1 * m.data()[i] + (1.0 - b1) * gi;
                let vi = b2 * v.data()[i] + (1.0 - b2) * gi * gi;
                m.data_mut()[i] = mi;
                v.data_mut()[i] = vi;
                p.data_mut()[i] -= lr * (mi / bc1) / (libm::sqrt(vi / bc2) + eps);
            }
            k += 1;
        });
    }
}

/// Solvers the training loop can drive.
pub trait Trainable: Solver + Clone {
    fn encoder_mut(&mut self) -> &mut TextEncoder;
}

impl Trainable for TrueFalseSolver {
    fn encoder_mut(&mut self) -> &mut TextEncoder {
        &mut self.encoder
    }
}

impl Trainable for TextMcSolver {
    fn encoder_mut(&mut self) -> &mut TextEncoder {
        &mut self.encoder
    }
}

impl Trainable for DiagramMcSolver {
    fn encoder_mut(&mut self) -> &mut TextEncoder {
        &mut self.encoder
    }
}

/// Percentage of examples whose eval-mode prediction is correct.
pub fn accuracy<S: Solver + ?Sized>(solver: &S, examples: &[Example]) -> Result<f64> {
    if examples.is_empty() {
        return Ok(0.0);
    }
    let mut correct = 0;
    for ex in examples {
        if solver.score(ex)?.predicted == ex.label() {
            correct += 1;
        }
    }
    Ok(100.0 * correct as f64 / examples.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub mean_loss: f64,
    pub validation_accuracy: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_accuracy: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainRun<S> {
    /// Parameters from the best validation epoch.
    pub best: S,
    pub best_epoch: usize,
    pub best_validation_accuracy: f64,
    pub log: Vec<EpochLog>,
}

fn check_examples<S: Solver>(solver: &S, examples: &[Example]) -> Result<()> {
    if let Some(ex) = examples.iter().find(|e| e.question.kind != solver.kind()) {
        return Err(Error::WrongKind { solver: "training data", question_id: ex.question.id.clone() });
    }
    Ok(())
}

/// Trains `solver` in place and returns the best-epoch checkpoint. When
/// `validation` is empty the training set stands in for it.
pub fn train<S: Trainable>(solver: &mut S, cfg: &TrainConfig, train: &[Example], validation: &[Example]) -> Result<TrainRun<S>> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::Config("no training examples".into()));
    }
    check_examples(solver, train)?;
    check_examples(solver, validation)?;
    solver.encoder_mut().spec.dropout = cfg.dropout;

    let steps_per_epoch = train.len().div_ceil(cfg.batch_size);
    let schedule = LinearSchedule::new(cfg.peak_lr, cfg.warmup_fraction, steps_per_epoch * cfg.epochs);
    let mut adam = Adam::new(solver);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let val = if validation.is_empty() { train } else { validation };

    let mut step = 0;
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(usize, f64, S)> = None;
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut total_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let mut acc: Option<Vec<Matrix>> = None;
            for &i in batch {
                let (loss, grads) = solver.loss_and_grads(&train[i], &mut Mode::Train(&mut rng))?;
                total_loss += loss;
                match &mut acc {
                    None => acc = Some(grads),
                    Some(a) => a.iter_mut().zip(&grads).for_each(|(x, g)| x.add_assign(g)),
                }
            }
            let scale = 1.0 / batch.len() as f64;
            let grads: Vec<Matrix> = acc.expect("non-empty batch").into_iter().map(|g| g.scale(scale)).collect();
            adam.step(solver, &grads, schedule.lr(step));
            step += 1;
        }
        let validation_accuracy = accuracy(solver, val)?;
        let train_accuracy = match cfg.target_train_accuracy {
            Some(_) => Some(accuracy(solver, train)?),
            None => None,
        };
        log.push(EpochLog { epoch, mean_loss: total_loss / train.len() as f64, validation_accuracy, train_accuracy });
        if best.as_ref().is_none_or(|(_, b, _)| validation_accuracy > *b) {
            best = Some((epoch, validation_accuracy, solver.clone()));
        }
        if let (Some(target), Some(acc)) = (cfg.target_train_accuracy, train_accuracy) {
            if acc >= target {
                break;
            }
        }
    }
    let (best_epoch, best_validation_accuracy, best) = best.expect("at least one epoch");
    Ok(TrainRun { best, best_epoch, best_validation_accuracy, log })
}

/// One fine-tuning stage.
#[derive(Debug, Clone)]
pub struct Stage {
    pub name: String,
    pub train: Vec<Example>,
    pub validation: Vec<Example>,
    pub peak_lr: f64,
    pub epochs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageLog {
    pub name: String,
    pub best_epoch: usize,
    pub best_validation_accuracy: f64,
    pub epochs: Vec<EpochLog>,
}

/// Runs stages in order, each starting from the previous stage's best
/// checkpoint. Every stage's data is checked before any training starts.
pub fn multi_stage_finetune<S: Trainable>(solver: S, stages: &[Stage], base: &TrainConfig) -> Result<(S, Vec<StageLog>)> {
    for st in stages {
        check_examples(&solver, &st.train)?;
        check_examples(&solver, &st.validation)?;
        if st.epochs > 0 && st.train.is_empty() {
            return Err(Error::Config(format!("stage {} has no training data", st.name)));
        }
    }
    let mut current = solver;
    let mut logs = Vec::with_capacity(stages.len());
    for st in stages {
        if st.epochs == 0 {
            logs.push(StageLog { name: st.name.clone(), best_epoch: 0, best_validation_accuracy: 0.0, epochs: Vec::new() });
            continue;
        }
        let cfg = TrainConfig { peak_lr: st.peak_lr, epochs: st.epochs, ..base.clone() };
        let mut working = current.clone();
        let run = train(&mut working, &cfg, &st.train, &st.validation)?;
        logs.push(StageLog {
            name: st.name.clone(),
            best_epoch: run.best_epoch,
            best_validation_accuracy: run.best_validation_accuracy,
            epochs: run.log,
        });
        current = run.best;
    }
    Ok((current, logs))
}
