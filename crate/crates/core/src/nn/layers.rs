//! Layers built from tape ops. Each layer only holds parameter ids; values
//! live in the owning [`ParamStore`].

use rand::Rng;

use super::params::{ParamId, ParamStore};
use super::tape::{Mat, Tape, Var};
use crate::error::Result;

#[derive(Debug, Clone)]
pub struct Dense {
    pub w: ParamId,
    pub b: ParamId,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Dense {
    pub fn new(store: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Self {
        let w = store.add_glorot(format!("{name}.w"), fan_in, fan_out, rng);
        let b = store.add(format!("{name}.b"), Mat::zeros((1, fan_out)));
        Self { w, b, fan_in, fan_out }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let w = tape.param(store, self.w)?;
        let b = tape.param(store, self.b)?;
        let y = tape.matmul(x, w)?;
        tape.add_bias(y, b)
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize) -> Self {
        let gamma = store.add(format!("{name}.gamma"), Mat::ones((1, dim)));
        let beta = store.add(format!("{name}.beta"), Mat::zeros((1, dim)));
        Self { gamma, beta }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let g = tape.param(store, self.gamma)?;
        let b = tape.param(store, self.beta)?;
        tape.layer_norm(x, g, b)
    }
}

#[derive(Debug, Clone)]
pub struct MultiHeadAttention {
    pub q: Dense,
    pub k: Dense,
    pub v: Dense,
    pub out: Dense,
    pub heads: usize,
}

impl MultiHeadAttention {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize, heads: usize, rng: &mut impl Rng) -> Self {
        Self {
            q: Dense::new(store, &format!("{name}.q"), dim, dim, rng),
            k: Dense::new(store, &format!("{name}.k"), dim, dim, rng),
            v: Dense::new(store, &format!("{name}.v"), dim, dim, rng),
            out: Dense::new(store, &format!("{name}.o"), dim, dim, rng),
            heads,
        }
    }

    /// `x` holds `batch * q_len` query tokens, `context` holds
    /// `batch * kv_len` key/value tokens.
    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        x: Var,
        context: Var,
        q_len: usize,
        kv_len: usize,
    ) -> Result<Var> {
        let q = self.q.forward(tape, store, x)?;
        let k = self.k.forward(tape, store, context)?;
        let v = self.v.forward(tape, store, context)?;
        let a = tape.attention(q, k, v, self.heads, q_len, kv_len)?;
        self.out.forward(tape, store, a)
    }
}

/// Pre-norm residual block: attention followed by a GELU feed-forward layer.
/// Attends to itself when no context is given, otherwise to the context.
#[derive(Debug, Clone)]
pub struct AttentionBlock {
    norm_q: LayerNorm,
    norm_kv: Option<LayerNorm>,
    attn: MultiHeadAttention,
    norm_ff: LayerNorm,
    ff_in: Dense,
    ff_out: Dense,
}

impl AttentionBlock {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize, heads: usize, cross: bool, rng: &mut impl Rng) -> Self {
        Self {
            norm_q: LayerNorm::new(store, &format!("{name}.ln_q"), dim),
            norm_kv: cross.then(|| LayerNorm::new(store, &format!("{name}.ln_kv"), dim)),
            attn: MultiHeadAttention::new(store, &format!("{name}.attn"), dim, heads, rng),
            norm_ff: LayerNorm::new(store, &format!("{name}.ln_ff"), dim),
            ff_in: Dense::new(store, &format!("{name}.ff1"), dim, 2 * dim, rng),
            ff_out: Dense::new(store, &format!("{name}.ff2"), 2 * dim, dim, rng),
        }
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        x: Var,
        context: Option<(Var, usize)>,
        len: usize,
    ) -> Result<Var> {
        let h = self.norm_q.forward(tape, store, x)?;
        let a = match (context, &self.norm_kv) {
            (Some((ctx, ctx_len)), Some(norm)) => {
                let c = norm.forward(tape, store, ctx)?;
                self.attn.forward(tape, store, h, c, len, ctx_len)?
            }
            _ => self.attn.forward(tape, store, h, h, len, len)?,
        };
        let x = tape.add(x, a)?;
        let h = self.norm_ff.forward(tape, store, x)?;
        let h = self.ff_in.forward(tape, store, h)?;
        let h = tape.gelu(h)?;
        let h = self.ff_out.forward(tape, store, h)?;
        tape.add(x, h)
    }
}
