//! Pre-norm transformer encoder.
//!
//! Each layer computes `x + Attn(LN(x))` followed by `x + FF(LN(x))`, with a
//! final layer norm after the stack. The feed-forward block uses GELU.

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::embedding::INIT_STD;
use crate::error::{Result, StatError};
use crate::params::{ParamId, ParameterStore};
use crate::rng::StreamRng;

pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub layers: usize,
    pub dim: usize,
    pub heads: usize,
    pub ff_dim: usize,
    pub dropout: f64,
    pub seed: u64,
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 {
            return Err(StatError::InvalidArgument("encoder needs at least one layer".into()));
        }
        if self.heads == 0 || self.dim == 0 || !self.dim.is_multiple_of(self.heads) {
            return Err(StatError::InvalidArgument(format!(
                "dim {} must be a positive multiple of heads {}",
                self.dim, self.heads
            )));
        }
        if self.ff_dim == 0 {
            return Err(StatError::InvalidArgument("ff_dim must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(StatError::InvalidArgument(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
struct LayerParams {
    ln1_gamma: ParamId,
    ln1_beta: ParamId,
    wq: ParamId,
    bq: ParamId,
    wk: ParamId,
    bk: ParamId,
    wv: ParamId,
    bv: ParamId,
    wo: ParamId,
    bo: ParamId,
    ln2_gamma: ParamId,
    ln2_beta: ParamId,
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
}

#[derive(Clone, Debug)]
pub struct Encoder {
    pub config: EncoderConfig,
    layers: Vec<LayerParams>,
    final_gamma: ParamId,
    final_beta: ParamId,
}

/// Tape handles produced by one forward pass.
#[derive(Clone, Debug)]
pub struct EncoderPass {
    pub output: Var,
    /// Per layer, per head attention probabilities.
    pub attention: Vec<Vec<Var>>,
    /// Per layer, the first layer-norm output before its affine transform.
    pub normalized: Vec<Var>,
}

/// Result of encoding one sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedSequence {
    pub output: Array2<f64>,
    pub layers: Vec<LayerTrace>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerTrace {
    pub attention: Vec<Array2<f64>>,
    pub normalized: Array2<f64>,
}

impl EncodedSequence {
    pub fn cls(&self) -> ndarray::ArrayView1<'_, f64> {
        self.output.row(0)
    }
}

impl Encoder {
    pub fn new<R: Rng>(store: &mut ParameterStore, config: EncoderConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let (d, f) = (config.dim, config.ff_dim);
        let ones = || Array2::ones((1, d));
        let zeros = |n| Array2::zeros((1, n));
        let mut layers = Vec::with_capacity(config.layers);
        for i in 0..config.layers {
            let p = format!("encoder.layer{i}");
            layers.push(LayerParams {
                ln1_gamma: store.register(format!("{p}.ln1.gamma"), ones())?,
                ln1_beta: store.register(format!("{p}.ln1.beta"), zeros(d))?,
                wq: store.register_normal(format!("{p}.attn.wq"), (d, d), INIT_STD, rng)?,
                bq: store.register(format!("{p}.attn.bq"), zeros(d))?,
                wk: store.register_normal(format!("{p}.attn.wk"), (d, d), INIT_STD, rng)?,
                bk: store.register(format!("{p}.attn.bk"), zeros(d))?,
                wv: store.register_normal(format!("{p}.attn.wv"), (d, d), INIT_STD, rng)?,
                bv: store.register(format!("{p}.attn.bv"), zeros(d))?,
                wo: store.register_normal(format!("{p}.attn.wo"), (d, d), INIT_STD, rng)?,
                bo: store.register(format!("{p}.attn.bo"), zeros(d))?,
                ln2_gamma: store.register(format!("{p}.ln2.gamma"), ones())?,
                ln2_beta: store.register(format!("{p}.ln2.beta"), zeros(d))?,
                w1: store.register_normal(format!("{p}.ff.w1"), (d, f), INIT_STD, rng)?,
                b1: store.register(format!("{p}.ff.b1"), zeros(f))?,
                w2: store.register_normal(format!("{p}.ff.w2"), (f, d), INIT_STD, rng)?,
                b2: store.register(format!("{p}.ff.b2"), zeros(d))?,
            });
        }
        Ok(Encoder {
            config,
            layers,
            final_gamma: store.register("encoder.final_norm.gamma", ones())?,
            final_beta: store.register("encoder.final_norm.beta", zeros(d))?,
        })
    }

    fn layer_norm(&self, tape: &mut Tape, store: &ParameterStore, x: Var, gamma: ParamId, beta: ParamId) -> (Var, Var) {
        let n = tape.normalize_rows(x, LAYER_NORM_EPS);
        let g = tape.param(store, gamma);
        let b = tape.param(store, beta);
        let scaled = tape.mul_row(n, g);
        (tape.add_row(scaled, b), n)
    }

    fn linear(&self, tape: &mut Tape, store: &ParameterStore, x: Var, w: ParamId, b: ParamId) -> Var {
        let w = tape.param(store, w);
        let b = tape.param(store, b);
        let xw = tape.matmul(x, w);
        tape.add_row(xw, b)
    }

    fn dropout(&self, tape: &mut Tape, x: Var, rng: &mut Option<&mut StreamRng>) -> Var {
        let p = self.config.dropout;
        match rng {
            Some(rng) if p > 0.0 => {
                let keep = 1.0 / (1.0 - p);
                let dim = tape.value(x).dim();
                let mask = Array2::from_shape_simple_fn(dim, || if rng.random::<f64>() < p { 0.0 } else { keep });
                tape.mul_const(x, mask)
            }
            _ => x,
        }
    }

    /// Record a forward pass. Dropout is active only when `dropout_rng` is given.
    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParameterStore,
        input: Var,
        mut dropout_rng: Option<&mut StreamRng>,
    ) -> Result<EncoderPass> {
        let (_, cols) = tape.value(input).dim();
        if cols != self.config.dim {
            return Err(StatError::DimensionMismatch(format!(
                "encoder input has {cols} columns, expected {}",
                self.config.dim
            )));
        }
        let heads = self.config.heads;
        let head_dim = self.config.dim / heads;
        let scale = 1.0 / (head_dim as f64).sqrt();
        let mut x = input;
        let mut attention = Vec::with_capacity(self.layers.len());
        let mut normalized = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let (h, n) = self.layer_norm(tape, store, x, layer.ln1_gamma, layer.ln1_beta);
            normalized.push(n);
            let q = self.linear(tape, store, h, layer.wq, layer.bq);
            let k = self.linear(tape, store, h, layer.wk, layer.bk);
            let v = self.linear(tape, store, h, layer.wv, layer.bv);
            let mut head_out = Vec::with_capacity(heads);
            let mut probs = Vec::with_capacity(heads);
            for i in 0..heads {
                let (a, b) = (i * head_dim, (i + 1) * head_dim);
                let qh = tape.slice_cols(q, a, b);
                let kh = tape.slice_cols(k, a, b);
                let vh = tape.slice_cols(v, a, b);
                let scores = tape.matmul_nt(qh, kh);
                let scores = tape.scale(scores, scale);
                let p = tape.softmax_rows(scores);
                probs.push(p);
                head_out.push(tape.matmul(p, vh));
            }
            attention.push(probs);
            let merged = if heads == 1 { head_out[0] } else { tape.concat_cols(&head_out) };
            let attn = self.linear(tape, store, merged, layer.wo, layer.bo);
            let attn = self.dropout(tape, attn, &mut dropout_rng);
            x = tape.add(x, attn);

            let (h, _) = self.layer_norm(tape, store, x, layer.ln2_gamma, layer.ln2_beta);
            let f = self.linear(tape, store, h, layer.w1, layer.b1);
            let f = tape.gelu(f);
            let f = self.linear(tape, store, f, layer.w2, layer.b2);
            let f = self.dropout(tape, f, &mut dropout_rng);
            x = tape.add(x, f);
        }
        let (output, _) = self.layer_norm(tape, store, x, self.final_gamma, self.final_beta);
        Ok(EncoderPass { output, attention, normalized })
    }

    /// Encode a plain input matrix without dropout, keeping per-layer traces.
    pub fn encode(&self, store: &ParameterStore, input: &Array2<f64>) -> Result<EncodedSequence> {
        if input.iter().any(|v| !v.is_finite()) {
            return Err(StatError::NonFinite("encoder input"));
        }
        let mut tape = Tape::new();
        let x = tape.constant(input.clone());
        let pass = self.forward(&mut tape, store, x, None)?;
        let layers = pass
            .attention
            .iter()
            .zip(&pass.normalized)
            .map(|(heads, n)| LayerTrace {
                attention: heads.iter().map(|h| tape.value(*h).clone()).collect(),
                normalized: tape.value(*n).clone(),
            })
            .collect();
        let output = tape.value(pass.output).clone();
        if output.iter().any(|v| !v.is_finite()) {
            return Err(StatError::NonFinite("encoder output"));
        }
        Ok(EncodedSequence { output, layers })
    }
}
