//! Post-norm transformer encoder with sinusoidal positions and GELU
//! feed-forward blocks. The pooled representation is the hidden state at the
//! `[CLS]` position.

use alloc::format;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::params::{glorot, join, uniform, Parameters};
use crate::sequence::EncodedSequence;
use crate::tensor::Matrix;
use crate::tokenizer::Vocab;
use crate::{Error, Result};

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Architecture hyper-parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderSpec {
    pub vocab_size: usize,
    pub hidden: usize,
    pub layers: usize,
    pub heads: usize,
    pub ffn: usize,
    pub max_positions: usize,
    pub dropout: f64,
    /// Pass the `[CLS]` state through a learned `tanh` pooler.
    #[serde(default)]
    pub pooler: bool,
}

impl EncoderSpec {
    pub fn toy(vocab_size: usize, hidden: usize, layers: usize) -> Self {
        Self {
            vocab_size,
            hidden,
            layers,
            heads: 2,
            ffn: hidden * 2,
            max_positions: 512,
            dropout: 0.1,
            pooler: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.heads == 0 || self.hidden % self.heads != 0 {
            return Err(Error::Config(format!("hidden size {} not divisible by {} heads", self.hidden, self.heads)));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if self.vocab_size < 4 || self.layers == 0 || self.ffn == 0 {
            return Err(Error::Config("degenerate encoder dimensions".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerParams {
    pub query: Matrix,
    pub query_bias: Matrix,
    pub key: Matrix,
    pub key_bias: Matrix,
    pub value: Matrix,
    pub value_bias: Matrix,
    pub output: Matrix,
    pub output_bias: Matrix,
    pub attn_norm_gain: Matrix,
    pub attn_norm_bias: Matrix,
    pub ffn_in: Matrix,
    pub ffn_in_bias: Matrix,
    pub ffn_out: Matrix,
    pub ffn_out_bias: Matrix,
    pub ffn_norm_gain: Matrix,
    pub ffn_norm_bias: Matrix,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderParams {
    pub token_embedding: Matrix,
    pub segment_embedding: Matrix,
    pub embed_norm_gain: Matrix,
    pub embed_norm_bias: Matrix,
    pub layers: Vec<LayerParams>,
    pub pooler: Option<(Matrix, Matrix)>,
}

impl LayerParams {
    fn init(rng: &mut ChaCha8Rng, h: usize, f: usize) -> Self {
        Self {
            query: glorot(rng, h, h),
            query_bias: Matrix::zeros(1, h),
            key: glorot(rng, h, h),
            key_bias: Matrix::zeros(1, h),
            value: glorot(rng, h, h),
            value_bias: Matrix::zeros(1, h),
            output: glorot(rng, h, h),
            output_bias: Matrix::zeros(1, h),
            attn_norm_gain: Matrix::filled(1, h, 1.0),
            attn_norm_bias: Matrix::zeros(1, h),
            ffn_in: glorot(rng, h, f),
            ffn_in_bias: Matrix::zeros(1, f),
            ffn_out: glorot(rng, f, h),
            ffn_out_bias: Matrix::zeros(1, h),
            ffn_norm_gain: Matrix::filled(1, h, 1.0),
            ffn_norm_bias: Matrix::zeros(1, h),
        }
    }

    fn entries(&self) -> [(&'static str, &Matrix); 16] {
        [
            ("attn.query.weight", &self.query),
            ("attn.query.bias", &self.query_bias),
            ("attn.key.weight", &self.key),
            ("attn.key.bias", &self.key_bias),
            ("attn.value.weight", &self.value),
            ("attn.value.bias", &self.value_bias),
            ("attn.output.weight", &self.output),
            ("attn.output.bias", &self.output_bias),
            ("attn.norm.gain", &self.attn_norm_gain),
            ("attn.norm.bias", &self.attn_norm_bias),
            ("ffn.in.weight", &self.ffn_in),
            ("ffn.in.bias", &self.ffn_in_bias),
            ("ffn.out.weight", &self.ffn_out),
            ("ffn.out.bias", &self.ffn_out_bias),
            ("ffn.norm.gain", &self.ffn_norm_gain),
            ("ffn.norm.bias", &self.ffn_norm_bias),
        ]
    }

    fn entries_mut(&mut self) -> [(&'static str, &mut Matrix); 16] {
        [
            ("attn.query.weight", &mut self.query),
            ("attn.query.bias", &mut self.query_bias),
            ("attn.key.weight", &mut self.key),
            ("attn.key.bias", &mut self.key_bias),
            ("attn.value.weight", &mut self.value),
            ("attn.value.bias", &mut self.value_bias),
            ("attn.output.weight", &mut self.output),
            ("attn.output.bias", &mut self.output_bias),
            ("attn.norm.gain", &mut self.attn_norm_gain),
            ("attn.norm.bias", &mut self.attn_norm_bias),
            ("ffn.in.weight", &mut self.ffn_in),
            ("ffn.in.bias", &mut self.ffn_in_bias),
            ("ffn.out.weight", &mut self.ffn_out),
            ("ffn.out.bias", &mut self.ffn_out_bias),
            ("ffn.norm.gain", &mut self.ffn_norm_gain),
            ("ffn.norm.bias", &mut self.ffn_norm_bias),
        ]
    }
}

impl EncoderParams {
    pub fn init(spec: &EncoderSpec, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = spec.hidden;
        Self {
            token_embedding: uniform(&mut rng, spec.vocab_size, h, 0.5),
            segment_embedding: uniform(&mut rng, 2, h, 0.5),
            embed_norm_gain: Matrix::filled(1, h, 1.0),
            embed_norm_bias: Matrix::zeros(1, h),
            layers: (0..spec.layers).map(|_| LayerParams::init(&mut rng, h, spec.ffn)).collect(),
            pooler: spec.pooler.then(|| (glorot(&mut rng, h, h), Matrix::zeros(1, h))),
        }
    }

    /// Checks every tensor against the shapes `spec` implies.
    pub fn check_against(&self, spec: &EncoderSpec) -> Result<()> {
        let reference = Self::init(spec, 0);
        let mine = self.named_tensors();
        let want = reference.named_tensors();
        let mut problems = Vec::new();
        for (name, m) in &want {
            match mine.iter().find(|(n, _)| n == name) {
                Some((_, t)) if t.shape() == m.shape() => {}
                Some((_, t)) => problems.push(format!("{name}: expected {:?}, found {:?}", m.shape(), t.shape())),
                None => problems.push(format!("{name}: missing")),
            }
        }
        for (name, _) in &mine {
            if !want.iter().any(|(n, _)| n == name) {
                problems.push(format!("{name}: unexpected tensor"));
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::ParamMismatch(problems))
        }
    }
}

impl Parameters for EncoderParams {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Matrix)) {
        f(&join(prefix, "embeddings.token"), &self.token_embedding);
        f(&join(prefix, "embeddings.segment"), &self.segment_embedding);
        f(&join(prefix, "embeddings.norm.gain"), &self.embed_norm_gain);
        f(&join(prefix, "embeddings.norm.bias"), &self.embed_norm_bias);
        for (i, layer) in self.layers.iter().enumerate() {
            let p = join(prefix, &format!("layers.{i}"));
            for (name, m) in layer.entries() {
                f(&join(&p, name), m);
            }
        }
        if let Some((w, b)) = &self.pooler {
            f(&join(prefix, "pooler.weight"), w);
            f(&join(prefix, "pooler.bias"), b);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Matrix)) {
        f(&join(prefix, "embeddings.token"), &mut self.token_embedding);
        f(&join(prefix, "embeddings.segment"), &mut self.segment_embedding);
        f(&join(prefix, "embeddings.norm.gain"), &mut self.embed_norm_gain);
        f(&join(prefix, "embeddings.norm.bias"), &mut self.embed_norm_bias);
        for (i, layer) in self.layers.iter_mut().enumerate() {
            let p = join(prefix, &format!("layers.{i}"));
            for (name, m) in layer.entries_mut() {
                f(&join(&p, name), m);
            }
        }
        if let Some((w, b)) = &mut self.pooler {
            f(&join(prefix, "pooler.weight"), w);
            f(&join(prefix, "pooler.bias"), b);
        }
    }
}

/// Graph handles for one layer, in visit order.
struct LayerVars([Var; 16]);

/// Encoder parameters bound to a [`Graph`].
pub struct EncoderVars {
    token: Var,
    segment: Var,
    norm_gain: Var,
    norm_bias: Var,
    layers: Vec<LayerVars>,
    pooler: Option<(Var, Var)>,
}

impl EncoderParams {
    /// Creates graph parameters in [`Parameters::visit`] order.
    pub fn bind(&self, g: &mut Graph) -> EncoderVars {
        EncoderVars {
            token: g.param(&self.token_embedding),
            segment: g.param(&self.segment_embedding),
            norm_gain: g.param(&self.embed_norm_gain),
            norm_bias: g.param(&self.embed_norm_bias),
            layers: self.layers.iter().map(|l| LayerVars(l.entries().map(|(_, m)| g.param(m)))).collect(),
            pooler: self.pooler.as_ref().map(|(w, b)| (g.param(w), g.param(b))),
        }
    }
}

/// Train or eval behaviour for stochastic layers.
pub enum Mode<'a> {
    Eval,
    Train(&'a mut ChaCha8Rng),
}

impl Mode<'_> {
    pub fn is_train(&self) -> bool {
        matches!(self, Mode::Train(_))
    }
}

/// Inverted dropout as an elementwise product with a constant mask.
pub fn dropout(g: &mut Graph, x: Var, p: f64, mode: &mut Mode<'_>) -> Var {
    let Mode::Train(rng) = mode else { return x };
    if p <= 0.0 {
        return x;
    }
    let (r, c) = g.value(x).shape();
    let keep = 1.0 / (1.0 - p);
    let mask = Matrix::from_vec(r, c, (0..r * c).map(|_| if rng.gen::<f64>() < p { 0.0 } else { keep }).collect());
    let m = g.constant(mask);
    g.mul(x, m)
}

/// Sinusoidal position table, `len × hidden`.
pub fn positions(len: usize, hidden: usize) -> Matrix {
    let mut m = Matrix::zeros(len, hidden);
    for pos in 0..len {
        for i in 0..hidden {
            let rate = libm::pow(10000.0, (2 * (i / 2)) as f64 / hidden as f64);
            let angle = pos as f64 / rate;
            m.set(pos, i, if i % 2 == 0 { libm::sin(angle) } else { libm::cos(angle) });
        }
    }
    m
}

/// Graph outputs of a forward pass.
#[derive(Debug, Clone, Copy)]
pub struct EncoderOutput {
    /// `len × H` hidden states.
    pub tokens: Var,
    /// `1 × H` pooled representation.
    pub pooled: Var,
}

pub fn check_ids(spec: &EncoderSpec, seq: &EncodedSequence) -> Result<()> {
    if let Some(&id) = seq.token_ids.iter().find(|&&id| id as usize >= spec.vocab_size) {
        return Err(Error::OutOfVocab { id, vocab_size: spec.vocab_size });
    }
    if seq.len() > spec.max_positions {
        return Err(Error::Config(format!("sequence of {} tokens exceeds {} positions", seq.len(), spec.max_positions)));
    }
    Ok(())
}

/// Runs the encoder on the tape. Ids must already be checked.
pub fn forward(g: &mut Graph, spec: &EncoderSpec, vars: &EncoderVars, seq: &EncodedSequence, mode: &mut Mode<'_>) -> EncoderOutput {
    let h = spec.hidden;
    let len = seq.len();
    let ids: Vec<usize> = seq.token_ids.iter().map(|&t| t as usize).collect();
    let segs: Vec<usize> = seq.segment_ids.iter().map(|&s| s as usize).collect();
    let tok = g.gather(vars.token, &ids);
    let seg = g.gather(vars.segment, &segs);
    let pos = g.constant(positions(len, h));
    let x = g.add(tok, seg);
    let x = g.add(x, pos);
    let x = g.layer_norm(x, vars.norm_gain, vars.norm_bias, LAYER_NORM_EPS);
    let mut x = dropout(g, x, spec.dropout, mode);

    let masked = seq.attention_mask.iter().any(|&m| m == 0);
    let mask = masked.then(|| {
        let mut m = Matrix::zeros(len, len);
        for r in 0..len {
            for (c, &keep) in seq.attention_mask.iter().enumerate() {
                if keep == 0 {
                    m.set(r, c, -1e9);
                }
            }
        }
        g.constant(m)
    });

    let dh = h / spec.heads;
    let scale = 1.0 / libm::sqrt(dh as f64);
    for layer in &vars.layers {
        let [wq, bq, wk, bk, wv, bv, wo, bo, g1, b1, wi, bi, wf, bf, g2, b2] = layer.0;
        let q = g.affine(x, wq, bq);
        let k = g.affine(x, wk, bk);
        let v = g.affine(x, wv, bv);
        let mut heads = Vec::with_capacity(spec.heads);
        for hd in 0..spec.heads {
            let qh = g.col_slice(q, hd * dh, dh);
            let kh = g.col_slice(k, hd * dh, dh);
            let vh = g.col_slice(v, hd * dh, dh);
            let kt = g.transpose(kh);
            let s = g.matmul(qh, kt);
            let mut s = g.scale(s, scale);
            if let Some(m) = mask {
                s = g.add(s, m);
            }
            let a = g.softmax_rows(s);
            heads.push(g.matmul(a, vh));
        }
        let cat = if heads.len() == 1 { heads[0] } else { g.concat_cols(&heads) };
        let o = g.affine(cat, wo, bo);
        let o = dropout(g, o, spec.dropout, mode);
        let r = g.add(x, o);
        x = g.layer_norm(r, g1, b1, LAYER_NORM_EPS);
        let f = g.affine(x, wi, bi);
        let f = g.gelu(f);
        let f = g.affine(f, wf, bf);
        let f = dropout(g, f, spec.dropout, mode);
        let r = g.add(x, f);
        x = g.layer_norm(r, g2, b2, LAYER_NORM_EPS);
    }
    let mut pooled = g.gather(x, &[0]);
    if let Some((w, b)) = vars.pooler {
        let p = g.affine(pooled, w, b);
        pooled = g.tanh(p);
    }
    EncoderOutput { tokens: x, pooled }
}

/// Concrete outputs of [`TextEncoder::encode`].
#[derive(Debug, Clone, PartialEq)]
pub struct Encoding {
    pub token_reps: Matrix,
    pub pooled: Vec<f64>,
}

/// Vocabulary, architecture and weights together.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextEncoder {
    pub vocab: Vocab,
    pub spec: EncoderSpec,
    pub params: EncoderParams,
}

impl TextEncoder {
    pub fn new(vocab: Vocab, spec: EncoderSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        if vocab.len() != spec.vocab_size {
            return Err(Error::Config(format!("vocab has {} tokens, spec declares {}", vocab.len(), spec.vocab_size)));
        }
        let params = EncoderParams::init(&spec, seed);
        Ok(Self { vocab, spec, params })
    }

    pub fn from_parts(vocab: Vocab, spec: EncoderSpec, params: EncoderParams) -> Result<Self> {
        spec.validate()?;
        params.check_against(&spec)?;
        Ok(Self { vocab, spec, params })
    }

    pub fn hidden(&self) -> usize {
        self.spec.hidden
    }

    /// Per-token representations and the pooled vector.
    pub fn encode(&self, seq: &EncodedSequence, mode: &mut Mode<'_>) -> Result<Encoding> {
        check_ids(&self.spec, seq)?;
        let mut g = Graph::new();
        let vars = self.params.bind(&mut g);
        let out = forward(&mut g, &self.spec, &vars, seq, mode);
        Ok(Encoding { token_reps: g.value(out.tokens).clone(), pooled: g.value(out.pooled).data().to_vec() })
    }
}
