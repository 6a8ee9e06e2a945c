//! Learned layers on top of the tape: linear, MLP, layer norm, pre-LN
//! multi-head attention. Layers hold parameter indices into a registry; the
//! registry's matrices are re-inserted as tape leaves for every forward pass.

use super::tape::{Matrix, Tape, VarId};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Index into the parameter registry.
pub type ParamId = usize;

/// Owns every learned matrix of a model, keyed by layer path.
#[derive(Debug, Clone, Default)]
pub struct ParamRegistry {
    pub names: Vec<String>,
    pub values: Vec<Matrix>,
}

impl ParamRegistry {
    pub fn alloc(&mut self, name: &str, value: Matrix) -> ParamId {
        self.names.push(name.to_string());
        self.values.push(value);
        self.values.len() - 1
    }

    pub fn count(&self) -> usize {
        self.values.iter().map(|m| m.len()).sum()
    }

    /// Inserts every parameter as a tape leaf; leaf i belongs to parameter i.
    pub fn leaves(&self, tape: &mut Tape) -> Vec<VarId> {
        self.values.iter().map(|m| tape.leaf(m.clone())).collect()
    }
}

/// Forward-pass context: the tape plus the parameter leaves of this pass.
pub struct Ctx<'a> {
    pub tape: &'a mut Tape,
    pub params: &'a [VarId],
}

impl Ctx<'_> {
    pub fn var(&self, p: ParamId) -> VarId {
        self.params[p]
    }
}

fn xavier(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    Matrix {
        rows,
        cols,
        data: (0..rows * cols).map(|_| rng.gen_range(-limit..limit)).collect(),
    }
}

#[derive(Debug, Clone)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

impl Linear {
    pub fn new(
        reg: &mut ParamRegistry,
        rng: &mut ChaCha8Rng,
        name: &str,
        d_in: usize,
        d_out: usize,
    ) -> Self {
        Linear {
            w: reg.alloc(&format!("{name}.w"), xavier(rng, d_in, d_out)),
            b: reg.alloc(&format!("{name}.b"), Matrix::zeros(1, d_out)),
        }
    }

    pub fn forward(&self, ctx: &mut Ctx, x: VarId) -> VarId {
        let m = ctx.tape.matmul(x, ctx.var(self.w));
        ctx.tape.add_row(m, ctx.var(self.b))
    }
}

/// 3-layer MLP with GELU activations between layers.
#[derive(Debug, Clone)]
pub struct Mlp3 {
    pub l1: Linear,
    pub l2: Linear,
    pub l3: Linear,
}

impl Mlp3 {
    pub fn new(
        reg: &mut ParamRegistry,
        rng: &mut ChaCha8Rng,
        name: &str,
        d_in: usize,
        d_hidden: usize,
        d_out: usize,
    ) -> Self {
        Mlp3 {
            l1: Linear::new(reg, rng, &format!("{name}.l1"), d_in, d_hidden),
            l2: Linear::new(reg, rng, &format!("{name}.l2"), d_hidden, d_hidden),
            l3: Linear::new(reg, rng, &format!("{name}.l3"), d_hidden, d_out),
        }
    }

    pub fn forward(&self, ctx: &mut Ctx, x: VarId) -> VarId {
        let h1 = self.l1.forward(ctx, x);
        let h1 = ctx.tape.gelu(h1);
        let h2 = self.l2.forward(ctx, h1);
        let h2 = ctx.tape.gelu(h2);
        self.l3.forward(ctx, h2)
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new(reg: &mut ParamRegistry, name: &str, d: usize) -> Self {
        LayerNorm {
            gamma: reg.alloc(
                &format!("{name}.gamma"),
                Matrix {
                    rows: 1,
                    cols: d,
                    data: vec![1.0; d],
                },
            ),
            beta: reg.alloc(&format!("{name}.beta"), Matrix::zeros(1, d)),
        }
    }

    pub fn forward(&self, ctx: &mut Ctx, x: VarId) -> VarId {
        let n = ctx.tape.row_norm(x);
        let s = ctx.tape.mul_row(n, ctx.var(self.gamma));
        ctx.tape.add_row(s, ctx.var(self.beta))
    }
}

/// Pre-layer-norm attention block:
/// x + MHA(LN(x), LN(kv)) then y + FFN(LN(y)); feed-forward expansion x4.
#[derive(Debug, Clone)]
pub struct AttentionBlock {
    pub ln_attn: LayerNorm,
    pub ln_ffn: LayerNorm,
    pub wq: Linear,
    pub wk: Linear,
    pub wv: Linear,
    pub wo: Linear,
    pub ff1: Linear,
    pub ff2: Linear,
    pub heads: usize,
    pub d: usize,
}

impl AttentionBlock {
    pub fn new(
        reg: &mut ParamRegistry,
        rng: &mut ChaCha8Rng,
        name: &str,
        d: usize,
        heads: usize,
    ) -> Self {
        assert!(d % heads == 0, "head count must divide hidden dim");
        AttentionBlock {
            ln_attn: LayerNorm::new(reg, &format!("{name}.ln_attn"), d),
            ln_ffn: LayerNorm::new(reg, &format!("{name}.ln_ffn"), d),
            wq: Linear::new(reg, rng, &format!("{name}.wq"), d, d),
            wk: Linear::new(reg, rng, &format!("{name}.wk"), d, d),
            wv: Linear::new(reg, rng, &format!("{name}.wv"), d, d),
            wo: Linear::new(reg, rng, &format!("{name}.wo"), d, d),
            ff1: Linear::new(reg, rng, &format!("{name}.ff1"), d, 4 * d),
            ff2: Linear::new(reg, rng, &format!("{name}.ff2"), 4 * d, d),
            heads,
            d,
        }
    }

    /// `bias`: optional per-head additive attention bias (each Nq x Nk).
    /// Returns `x` unchanged when the key/value side is empty.
    pub fn forward(&self, ctx: &mut Ctx, x: VarId, kv: VarId, bias: Option<&[VarId]>) -> VarId {
        let (nk, _) = ctx.tape.shape(kv);
        if nk == 0 {
            return x;
        }
        let dh = self.d / self.heads;
        let scale = 1.0 / (dh as f64).sqrt();

        let xn = self.ln_attn.forward(ctx, x);
        let kvn = if kv == x {
            xn
        } else {
            self.ln_attn.forward(ctx, kv)
        };
        let q = self.wq.forward(ctx, xn);
        let k = self.wk.forward(ctx, kvn);
        let v = self.wv.forward(ctx, kvn);

        let mut head_outs = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let qh = ctx.tape.slice_cols(q, h * dh, dh);
            let kh = ctx.tape.slice_cols(k, h * dh, dh);
            let vh = ctx.tape.slice_cols(v, h * dh, dh);
            let kt = ctx.tape.transpose(kh);
            let scores = ctx.tape.matmul(qh, kt);
            let mut scores = ctx.tape.scale(scores, scale);
            if let Some(bias) = bias {
                scores = ctx.tape.add(scores, bias[h]);
            }
            let attn = ctx.tape.softmax_rows(scores);
            head_outs.push(ctx.tape.matmul(attn, vh));
        }
        let merged = ctx.tape.concat_cols(&head_outs);
        let proj = self.wo.forward(ctx, merged);
        let y = ctx.tape.add(x, proj);

        let yn = self.ln_ffn.forward(ctx, y);
        let f = self.ff1.forward(ctx, yn);
        let f = ctx.tape.gelu(f);
        let f = self.ff2.forward(ctx, f);
        ctx.tape.add(y, f)
    }
}
