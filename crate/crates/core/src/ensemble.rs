//! Two-step calibrated ensembling of solver scores.
//!
//! Step one fits, per solver, a logistic regression from option-level
//! features (the raw score and its softmax across the question's options) to
//! correct/incorrect. Step two fits a logistic regression from the vector of
//! calibrated per-solver probabilities to correctness; its output is the
//! ensemble score of each option.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::autodiff::sigmoid;
use crate::solvers::SolverScores;
use crate::tensor::{argmax, softmax};
use crate::{Error, Result};

/// L2 penalty on non-intercept weights.
pub const L2_PENALTY: f64 = 1e-4;

/// A binary logistic regression `σ(b + w·x)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticRegression {
    pub intercept: f64,
    pub weights: Vec<f64>,
}

/// Solves `A x = b` for symmetric positive definite `A` (row-major `n × n`).
fn cholesky_solve(a: &[f64], b: &[f64], n: usize) -> Option<Vec<f64>> {
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            if i == j {
                if s <= 0.0 {
                    return None;
                }
                l[i * n + i] = libm::sqrt(s);
            } else {
                l[i * n + j] = s / l[j * n + j];
            }
        }
    }
    let mut y = vec![0.0; n];
    for i in 0..n {
        let s: f64 = (0..i).map(|k| l[i * n + k] * y[k]).sum();
        y[i] = (b[i] - s) / l[i * n + i];
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let s: f64 = (i + 1..n).map(|k| l[k * n + i] * x[k]).sum();
        x[i] = (y[i] - s) / l[i * n + i];
    }
    Some(x)
}

impl LogisticRegression {
    pub fn predict(&self, x: &[f64]) -> f64 {
        sigmoid(self.intercept + x.iter().zip(&self.weights).map(|(a, b)| a * b).sum::<f64>())
    }

    /// Penalised negative log-likelihood.
    pub fn objective(&self, xs: &[Vec<f64>], ys: &[bool], l2: f64) -> f64 {
        let mut j = 0.5 * l2 * self.weights.iter().map(|w| w * w).sum::<f64>();
        for (x, &y) in xs.iter().zip(ys) {
            let z = self.intercept + x.iter().zip(&self.weights).map(|(a, b)| a * b).sum::<f64>();
            // log(1 + e^z) − y z, computed stably
            let softplus = if z > 0.0 { z + libm::log1p(libm::exp(-z)) } else { libm::log1p(libm::exp(z)) };
            j += softplus - if y { z } else { 0.0 };
        }
        j
    }

    /// Damped Newton iterations on the penalised likelihood.
    pub fn fit(xs: &[Vec<f64>], ys: &[bool], l2: f64) -> Result<Self> {
        if xs.is_empty() || xs.len() != ys.len() {
            return Err(Error::Calibration("no training rows".into()));
        }
        if ys.iter().all(|&y| y) || ys.iter().all(|&y| !y) {
            return Err(Error::Calibration("labels contain a single class".into()));
        }
        let d = xs[0].len();
        if xs.iter().any(|x| x.len() != d) {
            return Err(Error::Calibration("ragged feature rows".into()));
        }
        let n = d + 1;
        let mut model = Self { intercept: 0.0, weights: vec![0.0; d] };
        let mut obj = model.objective(xs, ys, l2);
        for _ in 0..200 {
            let mut grad = vec![0.0; n];
            let mut hess = vec![0.0; n * n];
            for (x, &y) in xs.iter().zip(ys) {
                let p = model.predict(x);
                let r = p - if y { 1.0 } else { 0.0 };
                let w = (p * (1.0 - p)).max(1e-12);
                let row: Vec<f64> = core::iter::once(1.0).chain(x.iter().copied()).collect();
                for i in 0..n {
                    grad[i] += r * row[i];
                    for j in 0..n {
                        hess[i * n + j] += w * row[i] * row[j];
                    }
                }
            }
            for k in 0..d {
                grad[k + 1] += l2 * model.weights[k];
                hess[(k + 1) * n + k + 1] += l2;
            }
            let Some(step) = cholesky_solve(&hess, &grad, n) else {
                return Err(Error::Calibration("singular Hessian".into()));
            };
            let mut t = 1.0;
            let mut accepted = false;
            for _ in 0..60 {
                let cand = Self {
                    intercept: model.intercept - t * step[0],
                    weights: model.weights.iter().zip(&step[1..]).map(|(w, s)| w - t * s).collect(),
                };
                let c = cand.objective(xs, ys, l2);
                if c <= obj {
                    model = cand;
                    obj = c;
                    accepted = true;
                    break;
                }
                t *= 0.5;
            }
            let size = step.iter().fold(0.0f64, |m, s| m.max((t * s).abs()));
            if !accepted || size < 1e-12 {
                break;
            }
        }
        if !model.intercept.is_finite() || model.weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::Calibration("fit diverged".into()));
        }
        Ok(model)
    }
}

/// Option-level features fed to the step-one regressions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureSet {
    /// Raw score and its softmax across options.
    #[default]
    RawAndSoftmax,
    /// Adds the gap to the best option's raw score.
    WithMargin,
}

impl FeatureSet {
    pub fn names(self) -> Vec<String> {
        let mut v = vec![String::from("raw"), String::from("softmax")];
        if self == FeatureSet::WithMargin {
            v.push(String::from("margin"));
        }
        v
    }

    /// Feature rows for every option of one question.
    pub fn rows(self, logits: &[f64]) -> Vec<Vec<f64>> {
        let p = softmax(logits);
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        logits
            .iter()
            .zip(&p)
            .map(|(&s, &q)| match self {
                FeatureSet::RawAndSoftmax => vec![s, q],
                FeatureSet::WithMargin => vec![s, q, s - max],
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverCalibration {
    pub solver_id: String,
    pub feature_names: Vec<String>,
    pub model: LogisticRegression,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationModel {
    pub features: FeatureSet,
    /// Sorted by solver id.
    pub solvers: Vec<SolverCalibration>,
    /// Weights follow the order of `solvers`.
    pub combiner: LogisticRegression,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibratedScores {
    pub question_id: String,
    pub scores: Vec<f64>,
    pub predicted: usize,
}

impl CalibratedScores {
    /// As a `SolverScores` row with solver id `ensemble`.
    pub fn to_solver_scores(&self) -> SolverScores {
        let mut s = SolverScores::new(self.question_id.clone(), "ensemble", self.scores.clone());
        s.predicted = self.predicted;
        s
    }
}

/// Scores keyed by solver id, then question id.
pub type ScoreTable = BTreeMap<String, BTreeMap<String, SolverScores>>;

/// Groups a flat list of scores into a [`ScoreTable`].
pub fn score_table<'a>(scores: impl IntoIterator<Item = &'a SolverScores>) -> ScoreTable {
    let mut t = ScoreTable::new();
    for s in scores {
        t.entry(s.solver_id.clone()).or_default().insert(s.question_id.clone(), s.clone());
    }
    t
}

/// Fits both calibration steps on training scores. `labels` maps question id
/// to the correct option index.
pub fn fit_calibration(table: &ScoreTable, labels: &BTreeMap<String, usize>, features: FeatureSet) -> Result<CalibrationModel> {
    if table.is_empty() {
        return Err(Error::Calibration("no solvers".into()));
    }
    let mut gaps = Vec::new();
    for (sid, rows) in table {
        for qid in labels.keys() {
            if !rows.contains_key(qid) {
                gaps.push(format!("{sid}:{qid}"));
            }
        }
    }
    if !gaps.is_empty() {
        return Err(Error::MissingScores(gaps));
    }

    let mut ys = Vec::new();
    for (qid, &answer) in labels {
        let n = table.values().next().expect("non-empty")[qid].logits.len();
        for (sid, rows) in table {
            if rows[qid].logits.len() != n {
                return Err(Error::Calibration(format!("{sid} has a different option count on {qid}")));
            }
        }
        if answer >= n {
            return Err(Error::Calibration(format!("label {answer} out of range on {qid}")));
        }
        ys.extend((0..n).map(|i| i == answer));
    }

    let mut solvers = Vec::new();
    let mut calibrated: Vec<Vec<f64>> = vec![Vec::new(); ys.len()];
    for (sid, rows) in table {
        let xs: Vec<Vec<f64>> = labels.keys().flat_map(|qid| features.rows(&rows[qid].logits)).collect();
        let model = LogisticRegression::fit(&xs, &ys, L2_PENALTY)?;
        for (row, x) in calibrated.iter_mut().zip(&xs) {
            row.push(model.predict(x));
        }
        solvers.push(SolverCalibration { solver_id: sid.clone(), feature_names: features.names(), model });
    }
    let combiner = LogisticRegression::fit(&calibrated, &ys, L2_PENALTY)?;
    Ok(CalibrationModel { features, solvers, combiner })
}

impl CalibrationModel {
    pub fn solver_ids(&self) -> Vec<&str> {
        self.solvers.iter().map(|s| s.solver_id.as_str()).collect()
    }

    /// Step-one calibrated probability of every option for one solver.
    pub fn calibrate(&self, solver_id: &str, logits: &[f64]) -> Result<Vec<f64>> {
        let cal = self
            .solvers
            .iter()
            .find(|s| s.solver_id == solver_id)
            .ok_or_else(|| Error::NotFound { kind: "solver", id: solver_id.into() })?;
        Ok(self.features.rows(logits).iter().map(|x| cal.model.predict(x)).collect())
    }
}

/// Combines one question's per-solver scores into ensemble scores in `[0, 1]`.
pub fn ensemble_predict(model: &CalibrationModel, scores: &[SolverScores]) -> Result<CalibratedScores> {
    let first = scores.first().ok_or_else(|| Error::MissingScores(vec!["no solver scores".into()]))?;
    let known: BTreeSet<&str> = model.solver_ids().into_iter().collect();
    if let Some(s) = scores.iter().find(|s| !known.contains(s.solver_id.as_str())) {
        return Err(Error::NotFound { kind: "solver", id: s.solver_id.clone() });
    }
    let n = first.logits.len();
    let mut per_solver = Vec::with_capacity(model.solvers.len());
    let mut missing = Vec::new();
    for cal in &model.solvers {
        match scores.iter().find(|s| s.solver_id == cal.solver_id) {
            Some(s) if s.logits.len() == n => per_solver.push(model.calibrate(&cal.solver_id, &s.logits)?),
            Some(s) => {
                return Err(Error::Calibration(format!("{} has {} options, expected {n}", s.solver_id, s.logits.len())))
            }
            None => missing.push(format!("{}:{}", cal.solver_id, first.question_id)),
        }
    }
    if !missing.is_empty() {
        return Err(Error::MissingScores(missing));
    }
    let out: Vec<f64> = (0..n)
        .map(|i| {
            let x: Vec<f64> = per_solver.iter().map(|p| p[i]).collect();
            model.combiner.predict(&x)
        })
        .collect();
    Ok(CalibratedScores { question_id: first.question_id.clone(), predicted: argmax(&out), scores: out })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairComplementarity {
    pub missed_by: String,
    pub recovered_by: String,
    pub missed: usize,
    pub recovered: usize,
    /// Percentage in `[0, 100]`.
    pub percent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplementarityReport {
    pub questions: usize,
    pub pairs: Vec<PairComplementarity>,
    /// Questions missed by at least one solver.
    pub missed_by_some: usize,
    /// Of those, questions some other solver answers correctly.
    pub recovered_by_other: usize,
    pub percent: f64,
}

fn percent(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        100.0 * num as f64 / den as f64
    }
}

/// How often a question one solver misses is answered by another.
pub fn complementarity_report(table: &ScoreTable, labels: &BTreeMap<String, usize>) -> Result<ComplementarityReport> {
    if table.len() < 2 {
        return Err(Error::Calibration("complementarity needs at least two solvers".into()));
    }
    let mut shared: Option<BTreeSet<&String>> = None;
    for rows in table.values() {
        let keys: BTreeSet<&String> = rows.keys().filter(|k| labels.contains_key(*k)).collect();
        shared = Some(match shared {
            None => keys,
            Some(s) => s.intersection(&keys).copied().collect(),
        });
    }
    let shared = shared.unwrap_or_default();
    if shared.is_empty() {
        return Err(Error::Calibration("solvers share no labelled questions".into()));
    }
    let hit = |sid: &String, qid: &String| table[sid][qid].predicted == labels[qid];
    let ids: Vec<&String> = table.keys().collect();
    let mut pairs = Vec::new();
    for a in &ids {
        for b in &ids {
            if a == b {
                continue;
            }
            let missed: Vec<&&String> = shared.iter().filter(|q| !hit(a, q)).collect();
            let recovered = missed.iter().filter(|q| hit(b, q)).count();
            pairs.push(PairComplementarity {
                missed_by: (*a).clone(),
                recovered_by: (*b).clone(),
                missed: missed.len(),
                recovered,
                percent: percent(recovered, missed.len()),
            });
        }
    }
    let missed_some: Vec<&&String> = shared.iter().filter(|q| ids.iter().any(|s| !hit(s, q))).collect();
    let recovered = missed_some.iter().filter(|q| ids.iter().any(|s| hit(s, q))).count();
    Ok(ComplementarityReport {
        questions: shared.len(),
        pairs,
        missed_by_some: missed_some.len(),
        recovered_by_other: recovered,
        percent: percent(recovered, missed_some.len()),
    })
}
