use super::gemm::gemm;
use super::ops::{self, inverse_perm, matmul_plan, split_at_axis};
use super::params::{ParamId, ParamStore};
use super::Tensor;
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`GradTape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    /// `rhs` may match a trailing suffix of `lhs`'s shape (bias-style broadcast).
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    MulConst(Var, Tensor),
    Sum(Var),
    Softmax(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        rstd: Vec<f64>,
    },
    Gelu(Var),
    Softplus(Var),
    Reshape(Var),
    Permute(Var, Vec<usize>),
    Concat(Var, Var, usize),
    Gather {
        x: Var,
        idx: Vec<usize>,
    },
    BroadcastTo(Var),
    RowScale(Var, Vec<f64>),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Records differentiable operations for one forward pass.
///
/// A tape is single-threaded and single-use: [`GradTape::backward`]
/// consumes it. Build a fresh tape per training step.
#[derive(Debug, Default)]
pub struct GradTape {
    nodes: Vec<Node>,
}

/// Result of a backward pass: one optional gradient per recorded value.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    params: Vec<(ParamId, usize)>,
}

impl Gradients {
    /// Gradient of the loss with respect to `v`, if `v` requires grad and
    /// the loss depends on it.
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Accumulates (`+=`) parameter gradients into the store.
    pub fn accumulate_into(&self, store: &mut ParamStore) -> Result<()> {
        for &(id, node) in &self.params {
            if let Some(g) = &self.grads[node] {
                store.get_mut(id).grad.add_assign(g)?;
            }
        }
        Ok(())
    }
}

impl GradTape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// A differentiable input that is not a stored parameter.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// A value no gradient flows into.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Brings a stored parameter onto the tape.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.push(store.value(id).clone(), Op::Param(id), true)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = ops::matmul(self.value(a), self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::MatMul(a, b), rg))
    }

    /// Element-wise sum; `b` may have the shape of a trailing suffix of `a`.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sb.len() > sa.len() || sa[sa.len() - sb.len()..] != *sb {
            return Err(Error::shape("add", sa, sb));
        }
        let bd = self.value(b).data();
        let n = bd.len().max(1);
        let mut out = self.value(a).clone();
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            *v += bd[i % n];
        }
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_same("sub", a, b, |x, y| x - y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_same("mul", a, b, |x, y| x * y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Mul(a, b), rg))
    }

    fn zip_same(&self, op: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::shape(op, ta.shape(), tb.shape()));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(ta.shape(), data)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let out = self.value(a).map(|x| x * s);
        let rg = self.rg(a);
        self.push(out, Op::Scale(a, s), rg)
    }

    /// Element-wise product with a fixed (non-differentiable) tensor.
    pub fn mul_const(&mut self, a: Var, c: Tensor) -> Result<Var> {
        let ta = self.value(a);
        if ta.shape() != c.shape() {
            return Err(Error::shape("mul_const", ta.shape(), c.shape()));
        }
        let data = ta.data().iter().zip(c.data()).map(|(x, y)| x * y).collect();
        let out = Tensor::new(ta.shape(), data)?;
        let rg = self.rg(a);
        Ok(self.push(out, Op::MulConst(a, c), rg))
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&mut self, a: Var) -> Var {
        let out = Tensor::scalar(self.value(a).sum());
        let rg = self.rg(a);
        self.push(out, Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).len().max(1) as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    /// Softmax over the last axis. NaN inputs propagate to NaN outputs.
    pub fn softmax_lastdim(&mut self, a: Var) -> Result<Var> {
        if self.shape(a).last().copied().unwrap_or(0) == 0 {
            return Err(Error::Contract("softmax over an empty axis".into()));
        }
        let out = ops::softmax_lastdim(self.value(a));
        let rg = self.rg(a);
        Ok(self.push(out, Op::Softmax(a), rg))
    }

    /// Normalizes each row over the last axis, then applies `gamma`, `beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let d = *self.shape(x).last().unwrap_or(&0);
        if self.shape(gamma) != [d] || self.shape(beta) != [d] {
            return Err(Error::shape("layer_norm", self.shape(x), self.shape(gamma)));
        }
        let xs = self.value(x).data();
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let rows = xs.len() / d.max(1);
        let mut xhat = Vec::with_capacity(xs.len());
        let mut rstd = Vec::with_capacity(rows);
        let mut out = Vec::with_capacity(xs.len());
        for row in xs.chunks(d) {
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let r = 1.0 / (var + eps).sqrt();
            rstd.push(r);
            for (j, v) in row.iter().enumerate() {
                let h = (v - mean) * r;
                xhat.push(h);
                out.push(h * g[j] + b[j]);
            }
        }
        let out = Tensor::new(self.shape(x), out)?;
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        Ok(self.push(
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            },
            rg,
        ))
    }

    /// Exact GELU, `x·Φ(x)`.
    pub fn gelu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(ops::gelu);
        let rg = self.rg(a);
        self.push(out, Op::Gelu(a), rg)
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        let out = self.value(a).map(ops::softplus);
        let rg = self.rg(a);
        self.push(out, Op::Softplus(a), rg)
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(a).reshape(shape)?;
        let rg = self.rg(a);
        Ok(self.push(out, Op::Reshape(a), rg))
    }

    pub fn permute(&mut self, a: Var, perm: &[usize]) -> Result<Var> {
        let out = ops::permute(self.value(a), perm)?;
        let rg = self.rg(a);
        Ok(self.push(out, Op::Permute(a, perm.to_vec()), rg))
    }

    /// Swaps the last two axes.
    pub fn transpose_last2(&mut self, a: Var) -> Result<Var> {
        let nd = self.shape(a).len();
        if nd < 2 {
            return Err(Error::shape("transpose_last2", self.shape(a), &[]));
        }
        let mut perm: Vec<usize> = (0..nd).collect();
        perm.swap(nd - 2, nd - 1);
        self.permute(a, &perm)
    }

    pub fn concat(&mut self, a: Var, b: Var, axis: usize) -> Result<Var> {
        let out = ops::concat(self.value(a), self.value(b), axis)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Concat(a, b, axis), rg))
    }

    /// `out[b, i, :] = x[b, indices[b][i], :]` for `x` of shape `[B, L, D]`.
    pub fn gather_tokens(&mut self, x: Var, indices: &[Vec<usize>]) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.len() != 3 || indices.len() != shape[0] {
            return Err(Error::shape("gather_tokens", &shape, &[indices.len()]));
        }
        let (bsz, l, d) = (shape[0], shape[1], shape[2]);
        let l_out = indices.first().map_or(0, Vec::len);
        let mut flat = Vec::with_capacity(bsz * l_out);
        for row in indices {
            if row.len() != l_out {
                return Err(Error::shape("gather_tokens", &[l_out], &[row.len()]));
            }
            for &i in row {
                if i >= l {
                    return Err(Error::Index { index: i, len: l });
                }
                flat.push(i);
            }
        }
        let xs = self.value(x).data();
        let mut out = Vec::with_capacity(bsz * l_out * d);
        for b in 0..bsz {
            for &i in &flat[b * l_out..(b + 1) * l_out] {
                let o = (b * l + i) * d;
                out.extend_from_slice(&xs[o..o + d]);
            }
        }
        let out = Tensor::new(&[bsz, l_out, d], out)?;
        let rg = self.rg(x);
        Ok(self.push(out, Op::Gather { x, idx: flat }, rg))
    }

    /// Repeats `a` over new leading axes; `a`'s shape must be a trailing
    /// suffix of `shape`.
    pub fn broadcast_to(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let sa = self.shape(a);
        if sa.len() > shape.len() || shape[shape.len() - sa.len()..] != *sa {
            return Err(Error::shape("broadcast_to", sa, shape));
        }
        let src = self.value(a).data();
        let reps = shape.iter().product::<usize>() / src.len().max(1);
        let mut out = Vec::with_capacity(src.len() * reps);
        for _ in 0..reps {
            out.extend_from_slice(src);
        }
        let out = Tensor::new(shape, out)?;
        let rg = self.rg(a);
        Ok(self.push(out, Op::BroadcastTo(a), rg))
    }

    /// Multiplies each slice along axis 0 by its own constant factor.
    pub fn row_scale(&mut self, a: Var, factors: Vec<f64>) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if shape.first() != Some(&factors.len()) {
            return Err(Error::shape("row_scale", &shape, &[factors.len()]));
        }
        let mut out = self.value(a).clone();
        let per = out.len() / factors.len().max(1);
        for (chunk, f) in out.data_mut().chunks_mut(per.max(1)).zip(&factors) {
            chunk.iter_mut().for_each(|v| *v *= f);
        }
        let rg = self.rg(a);
        Ok(self.push(out, Op::RowScale(a, factors), rg))
    }

    /// Back-propagates from the scalar `loss`, consuming the tape.
    pub fn backward(self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let n = self.nodes.len();
        let mut grads: Vec<Option<Tensor>> = (0..n).map(|_| None).collect();
        let mut params = Vec::new();
        grads[loss.0] = Some(Tensor::full(self.shape(loss), 1.0));

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let g = match &node.op {
                Op::Leaf => continue,
                Op::Param(id) => {
                    params.push((*id, i));
                    continue;
                }
                _ => match grads[i].take() {
                    Some(g) => g,
                    None => continue,
                },
            };
            self.backward_node(node, &g, &mut grads)?;
        }
        Ok(Gradients { grads, params })
    }

    fn acc(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) -> Result<()> {
        if !self.rg(v) {
            return Ok(());
        }
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&g),
            slot @ None => {
                *slot = Some(g);
                Ok(())
            }
        }
    }

    fn backward_node(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        match &node.op {
            Op::Leaf | Op::Param(_) => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let p = matmul_plan(ta.shape(), tb.shape())?;
                let (m, k, n) = (p.m, p.k, p.n);
                if self.rg(*a) {
                    let mut da = vec![0.0; ta.len()];
                    if !p.a_batched && !p.b_batched {
                        gemm(p.batch * m, n, k, g.data(), false, tb.data(), true, &mut da, false);
                    } else {
                        for i in 0..p.batch {
                            let bo = if p.b_batched { i * k * n } else { 0 };
                            let ao = if p.a_batched { i * m * k } else { 0 };
                            gemm(
                                m,
                                n,
                                k,
                                &g.data()[i * m * n..(i + 1) * m * n],
                                false,
                                &tb.data()[bo..bo + k * n],
                                true,
                                &mut da[ao..ao + m * k],
                                true,
                            );
                        }
                    }
                    self.acc(grads, *a, Tensor::new(ta.shape(), da)?)?;
                }
                if self.rg(*b) {
                    let mut db = vec![0.0; tb.len()];
                    if !p.a_batched && !p.b_batched {
                        gemm(k, p.batch * m, n, ta.data(), true, g.data(), false, &mut db, false);
                    } else {
                        for i in 0..p.batch {
                            let ao = if p.a_batched { i * m * k } else { 0 };
                            let bo = if p.b_batched { i * k * n } else { 0 };
                            gemm(
                                k,
                                m,
                                n,
                                &ta.data()[ao..ao + m * k],
                                true,
                                &g.data()[i * m * n..(i + 1) * m * n],
                                false,
                                &mut db[bo..bo + k * n],
                                true,
                            );
                        }
                    }
                    self.acc(grads, *b, Tensor::new(tb.shape(), db)?)?;
                }
            }
            Op::Add(a, b) => {
                self.acc(grads, *a, g.clone())?;
                if self.rg(*b) {
                    let sb = self.shape(*b);
                    let n = self.value(*b).len();
                    let mut db = vec![0.0; n];
                    for (i, v) in g.data().iter().enumerate() {
                        db[i % n.max(1)] += v;
                    }
                    self.acc(grads, *b, Tensor::new(sb, db)?)?;
                }
            }
            Op::Sub(a, b) => {
                self.acc(grads, *a, g.clone())?;
                self.acc(grads, *b, g.map(|v| -v))?;
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                if self.rg(*a) {
                    let d = g.data().iter().zip(tb.data()).map(|(x, y)| x * y).collect();
                    self.acc(grads, *a, Tensor::new(g.shape(), d)?)?;
                }
                if self.rg(*b) {
                    let d = g.data().iter().zip(ta.data()).map(|(x, y)| x * y).collect();
                    self.acc(grads, *b, Tensor::new(g.shape(), d)?)?;
                }
            }
            Op::Scale(a, s) => self.acc(grads, *a, g.map(|v| v * s))?,
            Op::MulConst(a, c) => {
                let d = g.data().iter().zip(c.data()).map(|(x, y)| x * y).collect();
                self.acc(grads, *a, Tensor::new(g.shape(), d)?)?;
            }
            Op::Sum(a) => {
                let gv = g.item();
                self.acc(grads, *a, Tensor::full(self.shape(*a), gv))?;
            }
            Op::Softmax(a) => {
                let y = &node.value;
                let d = *y.shape().last().unwrap();
                let mut dx = Vec::with_capacity(y.len());
                for (yr, gr) in y.data().chunks(d).zip(g.data().chunks(d)) {
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    dx.extend(yr.iter().zip(gr).map(|(yv, gv)| yv * (gv - dot)));
                }
                self.acc(grads, *a, Tensor::new(y.shape(), dx)?)?;
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            } => {
                let d = *self.shape(*x).last().unwrap();
                let gam = self.value(*gamma).data();
                let mut dgamma = vec![0.0; d];
                let mut dbeta = vec![0.0; d];
                let mut dx = Vec::with_capacity(xhat.len());
                for ((gr, hr), r) in g.data().chunks(d).zip(xhat.chunks(d)).zip(rstd) {
                    let mut mean_dh = 0.0;
                    let mut mean_dh_h = 0.0;
                    for j in 0..d {
                        dgamma[j] += gr[j] * hr[j];
                        dbeta[j] += gr[j];
                        let dh = gr[j] * gam[j];
                        mean_dh += dh;
                        mean_dh_h += dh * hr[j];
                    }
                    mean_dh /= d as f64;
                    mean_dh_h /= d as f64;
                    for j in 0..d {
                        let dh = gr[j] * gam[j];
                        dx.push(r * (dh - mean_dh - hr[j] * mean_dh_h));
                    }
                }
                self.acc(grads, *x, Tensor::new(self.shape(*x), dx)?)?;
                self.acc(grads, *gamma, Tensor::from_vec(dgamma))?;
                self.acc(grads, *beta, Tensor::from_vec(dbeta))?;
            }
            Op::Gelu(a) => {
                let xs = self.value(*a).data();
                let d = g.data().iter().zip(xs).map(|(gv, &x)| gv * ops::gelu_grad(x)).collect();
                self.acc(grads, *a, Tensor::new(g.shape(), d)?)?;
            }
            Op::Softplus(a) => {
                let xs = self.value(*a).data();
                let d = g.data().iter().zip(xs).map(|(gv, &x)| gv * ops::sigmoid(x)).collect();
                self.acc(grads, *a, Tensor::new(g.shape(), d)?)?;
            }
            Op::Reshape(a) => {
                self.acc(grads, *a, g.reshape(self.shape(*a))?)?;
            }
            Op::Permute(a, perm) => {
                self.acc(grads, *a, ops::permute(g, &inverse_perm(perm))?)?;
            }
            Op::Concat(a, b, axis) => {
                let (outer, n_out, inner) = split_at_axis(g.shape(), *axis);
                let na = self.shape(*a)[*axis];
                let nb = n_out - na;
                let mut da = Vec::with_capacity(outer * na * inner);
                let mut db = Vec::with_capacity(outer * nb * inner);
                for o in 0..outer {
                    let base = o * n_out * inner;
                    da.extend_from_slice(&g.data()[base..base + na * inner]);
                    db.extend_from_slice(&g.data()[base + na * inner..base + n_out * inner]);
                }
                self.acc(grads, *a, Tensor::new(self.shape(*a), da)?)?;
                self.acc(grads, *b, Tensor::new(self.shape(*b), db)?)?;
            }
            Op::Gather { x, idx } => {
                let shape = self.shape(*x);
                let (bsz, l, d) = (shape[0], shape[1], shape[2]);
                let l_out = idx.len() / bsz.max(1);
                let mut dx = vec![0.0; bsz * l * d];
                for b in 0..bsz {
                    for (j, &i) in idx[b * l_out..(b + 1) * l_out].iter().enumerate() {
                        let src = &g.data()[(b * l_out + j) * d..(b * l_out + j + 1) * d];
                        let dst = &mut dx[(b * l + i) * d..(b * l + i + 1) * d];
                        dst.iter_mut().zip(src).for_each(|(o, s)| *o += s);
                    }
                }
                self.acc(grads, *x, Tensor::new(shape, dx)?)?;
            }
            Op::BroadcastTo(a) => {
                let n = self.value(*a).len().max(1);
                let mut da = vec![0.0; n];
                for (i, v) in g.data().iter().enumerate() {
                    da[i % n] += v;
                }
                self.acc(grads, *a, Tensor::new(self.shape(*a), da)?)?;
            }
            Op::RowScale(a, factors) => {
                let mut da = g.clone();
                let per = da.len() / factors.len().max(1);
                for (chunk, f) in da.data_mut().chunks_mut(per.max(1)).zip(factors) {
                    chunk.iter_mut().for_each(|v| *v *= f);
                }
                self.acc(grads, *a, da)?;
            }
        }
        Ok(())
    }
}
