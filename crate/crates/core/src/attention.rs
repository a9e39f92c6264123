//! Top-down attention over bottom-up region embeddings.
//!
//! For option `i` with pooled text vector `C_i` and region embeddings `v_j`:
//! `a_ij = w_a · gated_tanh([v_j; C_i])`, `α_i = softmax_j(a_ij)`,
//! `v̂_i = Σ_j α_ij v_j`, and the fused vector is `u_i = C_i ∘ v̂_i`.

use alloc::format;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::params::{glorot, join, Parameters};
use crate::tensor::Matrix;
use crate::{Error, Result};

/// How region embeddings enter the diagram solver.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttentionMode {
    /// Regions ignored: `u_i = C_i`.
    TextOnly,
    /// Uniform weights `α_ij = 1/m`.
    BottomUp,
    /// Question-conditioned weights.
    TopDown,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionParams {
    /// `(d_v + H) × H`, inside the tanh.
    pub tanh_weight: Matrix,
    pub tanh_bias: Matrix,
    /// `(d_v + H) × H`, inside the sigmoid gate.
    pub gate_weight: Matrix,
    pub gate_bias: Matrix,
    /// `H × 1` attention scorer `w_a`.
    pub score: Matrix,
    /// `H × 1` output projection `W_u`.
    pub output: Matrix,
}

pub struct AttentionVars {
    tw: Var,
    tb: Var,
    gw: Var,
    gb: Var,
    score: Var,
    pub(crate) output: Var,
}

impl AttentionParams {
    /// Fails unless `embed_dim == hidden`, which the Hadamard fusion needs.
    pub fn init(hidden: usize, embed_dim: usize, seed: u64) -> Result<Self> {
        if hidden != embed_dim {
            return Err(Error::Config(format!(
                "region embedding width {embed_dim} must equal encoder hidden size {hidden}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let input = embed_dim + hidden;
        Ok(Self {
            tanh_weight: glorot(&mut rng, input, hidden),
            tanh_bias: Matrix::zeros(1, hidden),
            gate_weight: glorot(&mut rng, input, hidden),
            gate_bias: Matrix::zeros(1, hidden),
            score: glorot(&mut rng, hidden, 1),
            output: glorot(&mut rng, hidden, 1),
        })
    }

    pub fn hidden(&self) -> usize {
        self.tanh_weight.cols()
    }

    pub fn bind(&self, g: &mut Graph) -> AttentionVars {
        AttentionVars {
            tw: g.param(&self.tanh_weight),
            tb: g.param(&self.tanh_bias),
            gw: g.param(&self.gate_weight),
            gb: g.param(&self.gate_bias),
            score: g.param(&self.score),
            output: g.param(&self.output),
        }
    }
}

impl Parameters for AttentionParams {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Matrix)) {
        f(&join(prefix, "gated_tanh.tanh.weight"), &self.tanh_weight);
        f(&join(prefix, "gated_tanh.tanh.bias"), &self.tanh_bias);
        f(&join(prefix, "gated_tanh.gate.weight"), &self.gate_weight);
        f(&join(prefix, "gated_tanh.gate.bias"), &self.gate_bias);
        f(&join(prefix, "score"), &self.score);
        f(&join(prefix, "output"), &self.output);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Matrix)) {
        f(&join(prefix, "gated_tanh.tanh.weight"), &mut self.tanh_weight);
        f(&join(prefix, "gated_tanh.tanh.bias"), &mut self.tanh_bias);
        f(&join(prefix, "gated_tanh.gate.weight"), &mut self.gate_weight);
        f(&join(prefix, "gated_tanh.gate.bias"), &mut self.gate_bias);
        f(&join(prefix, "score"), &mut self.score);
        f(&join(prefix, "output"), &mut self.output);
    }
}

/// `tanh(x·W_t + b_t) ∘ σ(x·W_g + b_g)` row-wise.
pub fn gated_tanh_graph(g: &mut Graph, vars: &AttentionVars, x: Var) -> Var {
    let t = g.affine(x, vars.tw, vars.tb);
    let t = g.tanh(t);
    let s = g.affine(x, vars.gw, vars.gb);
    let s = g.sigmoid(s);
    g.mul(t, s)
}

/// Tape handles produced by [`attend_graph`].
#[derive(Debug, Clone, Copy)]
pub struct AttendVars {
    /// `N × m`; absent in text-only mode.
    pub alpha: Option<Var>,
    /// `N × d_v`; absent in text-only mode.
    pub attended: Option<Var>,
    /// `N × H`.
    pub fused: Var,
}

/// Attention on the tape. `c` is `N × H`, `v` is `m × d_v` with `m ≥ 1`.
pub fn attend_graph(g: &mut Graph, vars: &AttentionVars, c: Var, v: Var, mode: AttentionMode) -> AttendVars {
    let n = g.value(c).rows();
    let m = g.value(v).rows();
    let alpha = match mode {
        AttentionMode::TextOnly => return AttendVars { alpha: None, attended: None, fused: c },
        AttentionMode::BottomUp => g.constant(Matrix::filled(n, m, 1.0 / m as f64)),
        AttentionMode::TopDown => {
            let region_idx: Vec<usize> = (0..n).flat_map(|_| 0..m).collect();
            let option_idx: Vec<usize> = (0..n).flat_map(|i| core::iter::repeat(i).take(m)).collect();
            let vr = g.gather(v, &region_idx);
            let cr = g.gather(c, &option_idx);
            let x = g.concat_cols(&[vr, cr]);
            let gt = gated_tanh_graph(g, vars, x);
            let a = g.matmul(gt, vars.score);
            let a = g.reshape(a, n, m);
            g.softmax_rows(a)
        }
    };
    let attended = g.matmul(alpha, v);
    let fused = g.mul(c, attended);
    AttendVars { alpha: Some(alpha), attended: Some(attended), fused }
}

/// Concrete attention outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionResult {
    pub alpha: Matrix,
    pub attended: Matrix,
    pub fused: Matrix,
}

/// Gated tanh of a single `(d_v + H)` vector.
pub fn gated_tanh(x: &[f64], params: &AttentionParams) -> Result<Vec<f64>> {
    if x.len() != params.tanh_weight.rows() {
        return Err(Error::Shape {
            context: "gated tanh input".into(),
            expected: (1, params.tanh_weight.rows()),
            got: (1, x.len()),
        });
    }
    let mut g = Graph::new();
    let vars = params.bind(&mut g);
    let xv = g.constant(Matrix::row_vector(x.to_vec()));
    let y = gated_tanh_graph(&mut g, &vars, xv);
    Ok(g.value(y).data().to_vec())
}

/// Top-down attention of `N` pooled vectors over `m` region embeddings.
pub fn butd_attend(c: &Matrix, v: &Matrix, params: &AttentionParams) -> Result<AttentionResult> {
    attend(c, v, params, AttentionMode::TopDown)
}

pub fn attend(c: &Matrix, v: &Matrix, params: &AttentionParams, mode: AttentionMode) -> Result<AttentionResult> {
    let h = params.hidden();
    if c.cols() != h || v.cols() != h {
        return Err(Error::Shape { context: "attention inputs".into(), expected: (c.rows(), h), got: (v.rows(), v.cols()) });
    }
    if v.rows() == 0 {
        return Err(Error::Config("attention needs at least one region".into()));
    }
    let mut g = Graph::new();
    let vars = params.bind(&mut g);
    let cv = g.constant(c.clone());
    let vv = g.constant(v.clone());
    let out = attend_graph(&mut g, &vars, cv, vv, mode);
    let alpha = out.alpha.map_or_else(|| Matrix::zeros(c.rows(), 0), |a| g.value(a).clone());
    let attended = out.attended.map_or_else(|| Matrix::zeros(c.rows(), 0), |a| g.value(a).clone());
    Ok(AttentionResult { alpha, attended, fused: g.value(out.fused).clone() })
}
