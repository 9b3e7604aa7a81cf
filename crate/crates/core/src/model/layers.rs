use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::params::ParamStore;
use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};

pub type DropRng<'a> = Option<&'a mut dyn RngCore>;

/// Registers freshly initialized parameters.
pub(crate) struct Init<'a> {
    pub store: &'a mut ParamStore,
    pub rng: ChaCha8Rng,
}

impl Init<'_> {
    /// Weight matrix with entries `N(0, 1/fan_in)`.
    pub fn weight(&mut self, name: &str, fan_in: usize, fan_out: usize) -> Result<usize> {
        let t = Tensor::randn(&[fan_in, fan_out], (1.0 / fan_in as f64).sqrt(), &mut self.rng);
        self.store.add(name, t)
    }

    pub fn normal(&mut self, name: &str, shape: &[usize], std: f64) -> Result<usize> {
        let t = Tensor::randn(shape, std, &mut self.rng);
        self.store.add(name, t)
    }

    pub fn zeros(&mut self, name: &str, shape: &[usize]) -> Result<usize> {
        self.store.add(name, Tensor::zeros(shape))
    }

    pub fn linear(&mut self, name: &str, fan_in: usize, fan_out: usize, bias: bool) -> Result<Linear> {
        let w = self.weight(&format!("{name}.w"), fan_in, fan_out)?;
        let b = if bias {
            Some(self.zeros(&format!("{name}.b"), &[fan_out])?)
        } else {
            None
        };
        Ok(Linear { w, b })
    }
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub w: usize,
    pub b: Option<usize>,
}

impl Linear {
    pub fn apply(&self, tape: &mut Tape, p: &[Var], x: Var) -> Result<Var> {
        tape.linear(x, p[self.w], self.b.map(|b| p[b]))
    }
}

/// `Linear -> GELU -> Linear`.
#[derive(Clone, Debug)]
pub struct Mlp {
    pub fc1: Linear,
    pub fc2: Linear,
}

impl Mlp {
    pub(crate) fn new(init: &mut Init, name: &str, input: usize, hidden: usize, output: usize) -> Result<Self> {
        Ok(Self {
            fc1: init.linear(&format!("{name}.fc1"), input, hidden, true)?,
            fc2: init.linear(&format!("{name}.fc2"), hidden, output, true)?,
        })
    }

    pub fn apply(&self, tape: &mut Tape, p: &[Var], x: Var) -> Result<Var> {
        let h = self.fc1.apply(tape, p, x)?;
        let h = tape.gelu(h);
        self.fc2.apply(tape, p, h)
    }
}

/// Multi-head attention `softmax((Q K^T + B) / sqrt(d_z)) V` followed by an
/// output projection. `B` comes from a learned (bins x heads) table when the
/// layer has one.
#[derive(Clone, Debug)]
pub struct Attention {
    pub wq: usize,
    pub wk: usize,
    pub wv: usize,
    pub wo: Linear,
    pub trpe: Option<usize>,
    pub heads: usize,
    pub head_dim: usize,
}

pub struct AttentionOut {
    pub out: Var,
    /// `(heads, queries, keys)` row-stochastic weights.
    pub weights: Var,
}

impl Attention {
    pub(crate) fn new(init: &mut Init, name: &str, dim: usize, heads: usize, trpe_bins: Option<usize>) -> Result<Self> {
        let wq = init.weight(&format!("{name}.wq"), dim, dim)?;
        let wk = init.weight(&format!("{name}.wk"), dim, dim)?;
        let wv = init.weight(&format!("{name}.wv"), dim, dim)?;
        let wo = init.linear(&format!("{name}.wo"), dim, dim, true)?;
        let trpe = match trpe_bins {
            Some(bins) => Some(init.zeros(&format!("{name}.trpe"), &[bins, heads])?),
            None => None,
        };
        Ok(Self {
            wq,
            wk,
            wv,
            wo,
            trpe,
            heads,
            head_dim: dim / heads,
        })
    }

    /// A standalone layer with random weights registered in `store`; the bias
    /// table, if any, is drawn from `N(0, 1)` instead of starting at zero.
    pub fn with_random_weights(
        store: &mut ParamStore,
        name: &str,
        dim: usize,
        heads: usize,
        trpe_bins: Option<usize>,
        seed: u64,
    ) -> Result<Self> {
        if heads == 0 || dim % heads != 0 {
            return Err(Error::Invalid(format!("{dim} not divisible into {heads} heads")));
        }
        let mut init = Init {
            store,
            rng: ChaCha8Rng::seed_from_u64(seed),
        };
        let layer = Self::new(&mut init, name, dim, heads, trpe_bins)?;
        if let Some(t) = layer.trpe {
            let shape = init.store.get(t).shape().to_vec();
            *init.store.get_mut(t) = Tensor::randn(&shape, 1.0, &mut init.rng);
        }
        if let Some(b) = layer.wo.b {
            *init.store.get_mut(b) = Tensor::randn(&[dim], 0.1, &mut init.rng);
        }
        Ok(layer)
    }

    /// `(heads, nq, nk)` bias gathered from the layer's table.
    pub fn bias(&self, tape: &mut Tape, p: &[Var], bins: &[usize], nq: usize, nk: usize) -> Result<Option<Var>> {
        let Some(table) = self.trpe else { return Ok(None) };
        let rows = tape.gather_rows(p[table], bins)?;
        let per_head = tape.transpose(rows, 0, 1)?;
        Ok(Some(tape.reshape(per_head, &[self.heads, nq, nk])?))
    }

    /// `xq` is `(nq, D)`, `xkv` is `(nk, D)`; `bins` holds one bin per
    /// (query, key) pair when the layer is biased.
    pub fn apply(&self, tape: &mut Tape, p: &[Var], xq: Var, xkv: Var, bins: Option<&[usize]>) -> Result<AttentionOut> {
        let (h, dz) = (self.heads, self.head_dim);
        let nq = tape.shape(xq)[0];
        let nk = tape.shape(xkv)[0];
        let dim = h * dz;

        let q = tape.matmul(xq, p[self.wq])?;
        let q = tape.reshape(q, &[nq, h, dz])?;
        let q = tape.transpose(q, 0, 1)?;

        let k = tape.matmul(xkv, p[self.wk])?;
        let kt = tape.transpose(k, 0, 1)?;
        let kt = tape.reshape(kt, &[h, dz, nk])?;

        let v = tape.matmul(xkv, p[self.wv])?;
        let v = tape.reshape(v, &[nk, h, dz])?;
        let v = tape.transpose(v, 0, 1)?;

        let mut logits = tape.matmul(q, kt)?;
        if let Some(bins) = bins {
            if let Some(b) = self.bias(tape, p, bins, nq, nk)? {
                logits = tape.add(logits, b)?;
            }
        }
        let logits = tape.scale(logits, 1.0 / (dz as f64).sqrt());
        let weights = tape.softmax(logits, 2)?;
        let ctx = tape.matmul(weights, v)?;
        let ctx = tape.transpose(ctx, 0, 1)?;
        let ctx = tape.reshape(ctx, &[nq, dim])?;
        let out = self.wo.apply(tape, p, ctx)?;
        Ok(AttentionOut { out, weights })
    }
}

pub(crate) fn dropout(tape: &mut Tape, x: Var, rate: f64, rng: &mut DropRng) -> Result<Var> {
    tape.dropout(x, rate, rng.as_deref_mut())
}

/// Pre-norm self-attention block.
#[derive(Clone, Debug)]
pub struct EncoderBlock {
    pub attn: Attention,
    pub ffn: Mlp,
}

/// Pre-norm cross-attention block: queries attend to a second token set.
#[derive(Clone, Debug)]
pub struct CrossBlock {
    pub attn: Attention,
    pub ffn: Mlp,
}

/// Self-attention over queries, cross-attention to memory, feed-forward.
#[derive(Clone, Debug)]
pub struct DecoderBlock {
    pub self_attn: Attention,
    pub cross_attn: Attention,
    pub ffn: Mlp,
}

pub(crate) struct BlockCtx<'a, 'r> {
    pub p: &'a [Var],
    pub eps: f64,
    pub dropout: f64,
    pub rng: &'a mut DropRng<'r>,
    pub weights: &'a mut Vec<(String, Var)>,
}

impl BlockCtx<'_, '_> {
    fn residual(&mut self, tape: &mut Tape, x: Var, branch: Var) -> Result<Var> {
        let branch = dropout(tape, branch, self.dropout, self.rng)?;
        tape.add(x, branch)
    }

    fn ffn(&mut self, tape: &mut Tape, ffn: &Mlp, x: Var) -> Result<Var> {
        let h = tape.layer_norm(x, self.eps);
        let f = ffn.apply(tape, self.p, h)?;
        self.residual(tape, x, f)
    }
}

impl EncoderBlock {
    pub(crate) fn apply(&self, tape: &mut Tape, ctx: &mut BlockCtx, name: &str, x: Var, bins: &[usize]) -> Result<Var> {
        let h = tape.layer_norm(x, ctx.eps);
        let a = self.attn.apply(tape, ctx.p, h, h, Some(bins))?;
        ctx.weights.push((format!("{name}.self"), a.weights));
        let x = ctx.residual(tape, x, a.out)?;
        ctx.ffn(tape, &self.ffn, x)
    }
}

impl CrossBlock {
    pub(crate) fn apply(
        &self,
        tape: &mut Tape,
        ctx: &mut BlockCtx,
        name: &str,
        x: Var,
        keys: Var,
        bins: &[usize],
    ) -> Result<Var> {
        let h = tape.layer_norm(x, ctx.eps);
        let kv = tape.layer_norm(keys, ctx.eps);
        let a = self.attn.apply(tape, ctx.p, h, kv, Some(bins))?;
        ctx.weights.push((format!("{name}.cross"), a.weights));
        let x = ctx.residual(tape, x, a.out)?;
        ctx.ffn(tape, &self.ffn, x)
    }
}

impl DecoderBlock {
    pub(crate) fn apply(&self, tape: &mut Tape, ctx: &mut BlockCtx, name: &str, q: Var, memory: Var) -> Result<Var> {
        let h = tape.layer_norm(q, ctx.eps);
        let a = self.self_attn.apply(tape, ctx.p, h, h, None)?;
        ctx.weights.push((format!("{name}.self"), a.weights));
        let q = ctx.residual(tape, q, a.out)?;
        let h = tape.layer_norm(q, ctx.eps);
        let c = self.cross_attn.apply(tape, ctx.p, h, memory, None)?;
        ctx.weights.push((format!("{name}.cross"), c.weights));
        let q = ctx.residual(tape, q, c.out)?;
        ctx.ffn(tape, &self.ffn, q)
    }
}
