use crate::error::{Error, Result};
use crate::nn::{LayerNorm, Linear};
use crate::tensor::{GradTape, ParamStore, Var};
use rand::{Rng, RngCore};

/// Multi-head scaled dot-product attention with separate query and
/// key/value sources.
#[derive(Clone, Copy, Debug)]
pub struct Attention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub heads: usize,
}

impl Attention {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, dim: usize, heads: usize, rng: &mut R) -> Self {
        Self {
            q: Linear::new(store, &format!("{name}.q"), dim, dim, true, rng),
            k: Linear::new(store, &format!("{name}.k"), dim, dim, true, rng),
            v: Linear::new(store, &format!("{name}.v"), dim, dim, true, rng),
            o: Linear::new(store, &format!("{name}.o"), dim, dim, true, rng),
            heads,
        }
    }

    fn split_heads(&self, tape: &mut GradTape, x: Var, transpose: bool) -> Result<Var> {
        let s = tape.shape(x).to_vec();
        let (b, l, d) = (s[0], s[1], s[2]);
        let x = tape.reshape(x, &[b, l, self.heads, d / self.heads])?;
        tape.permute(x, if transpose { &[0, 2, 3, 1] } else { &[0, 2, 1, 3] })
    }

    /// `xq: [B, Lq, D]`, `xkv: [B, Lk, D]` → `[B, Lq, D]`.
    pub fn forward(&self, tape: &mut GradTape, store: &ParamStore, xq: Var, xkv: Var) -> Result<Var> {
        let sq = tape.shape(xq).to_vec();
        let skv = tape.shape(xkv).to_vec();
        if sq.len() != 3 || skv.len() != 3 || sq[0] != skv[0] || sq[2] != skv[2] || sq[2] % self.heads != 0 {
            return Err(Error::shape("attention", &sq, &skv));
        }
        let (b, lq, d) = (sq[0], sq[1], sq[2]);
        let q = self.q.forward(tape, store, xq)?;
        let k = self.k.forward(tape, store, xkv)?;
        let v = self.v.forward(tape, store, xkv)?;
        let q = self.split_heads(tape, q, false)?;
        let kt = self.split_heads(tape, k, true)?;
        let v = self.split_heads(tape, v, false)?;
        let scores = tape.matmul(q, kt)?;
        let scores = tape.scale(scores, 1.0 / ((d / self.heads) as f64).sqrt());
        let attn = tape.softmax_lastdim(scores)?;
        let ctx = tape.matmul(attn, v)?;
        let ctx = tape.permute(ctx, &[0, 2, 1, 3])?;
        let ctx = tape.reshape(ctx, &[b, lq, d])?;
        self.o.forward(tape, store, ctx)
    }
}

/// Randomness for stochastic depth; `None` means evaluation mode.
pub struct Mode<'a> {
    pub rng: Option<&'a mut dyn RngCore>,
}

impl<'a> Mode<'a> {
    pub fn eval() -> Self {
        Self { rng: None }
    }

    pub fn train(rng: &'a mut dyn RngCore) -> Self {
        Self { rng: Some(rng) }
    }

    pub fn is_train(&self) -> bool {
        self.rng.is_some()
    }
}

/// Drops the whole residual branch per sample with probability `rate`,
/// rescaling survivors by `1/(1−rate)`.
pub fn drop_path(tape: &mut GradTape, x: Var, rate: f64, mode: &mut Mode<'_>) -> Result<Var> {
    let Some(rng) = mode.rng.as_deref_mut() else {
        return Ok(x);
    };
    if rate <= 0.0 {
        return Ok(x);
    }
    let keep = 1.0 - rate;
    let b = tape.shape(x)[0];
    let factors = (0..b).map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 }).collect();
    tape.row_scale(x, factors)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Norm {
    /// `x + f(LN(x))`
    Pre,
    /// `LN(x + f(x))`
    Post,
}

#[derive(Clone, Copy, Debug)]
pub struct Block {
    pub ln1: LayerNorm,
    pub attn: Attention,
    pub ln2: LayerNorm,
    pub fc1: Linear,
    pub fc2: Linear,
    pub norm: Norm,
    pub drop_path: f64,
}

impl Block {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        dim: usize,
        heads: usize,
        ffn_ratio: usize,
        norm: Norm,
        drop_path: f64,
        rng: &mut R,
    ) -> Self {
        Self {
            ln1: LayerNorm::new(store, &format!("{name}.ln1"), dim),
            attn: Attention::new(store, &format!("{name}.attn"), dim, heads, rng),
            ln2: LayerNorm::new(store, &format!("{name}.ln2"), dim),
            fc1: Linear::new(store, &format!("{name}.fc1"), dim, dim * ffn_ratio, true, rng),
            fc2: Linear::new(store, &format!("{name}.fc2"), dim * ffn_ratio, dim, true, rng),
            norm,
            drop_path,
        }
    }

    fn ffn(&self, tape: &mut GradTape, store: &ParamStore, x: Var) -> Result<Var> {
        let h = self.fc1.forward(tape, store, x)?;
        let h = tape.gelu(h);
        self.fc2.forward(tape, store, h)
    }

    pub fn forward(&self, tape: &mut GradTape, store: &ParamStore, x: Var, mode: &mut Mode<'_>) -> Result<Var> {
        match self.norm {
            Norm::Pre => {
                let h = self.ln1.forward(tape, store, x)?;
                let a = self.attn.forward(tape, store, h, h)?;
                let a = drop_path(tape, a, self.drop_path, mode)?;
                let x = tape.add(x, a)?;
                let h = self.ln2.forward(tape, store, x)?;
                let f = self.ffn(tape, store, h)?;
                let f = drop_path(tape, f, self.drop_path, mode)?;
                tape.add(x, f)
            }
            Norm::Post => {
                let a = self.attn.forward(tape, store, x, x)?;
                let a = drop_path(tape, a, self.drop_path, mode)?;
                let y = tape.add(x, a)?;
                let y = self.ln1.forward(tape, store, y)?;
                let f = self.ffn(tape, store, y)?;
                let f = drop_path(tape, f, self.drop_path, mode)?;
                let y2 = tape.add(y, f)?;
                self.ln2.forward(tape, store, y2)
            }
        }
    }
}
