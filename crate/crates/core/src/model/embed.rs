use crate::error::{Error, Result};
use crate::nn::Linear;
use crate::tensor::{GradTape, ParamStore, Tensor, Var};
use rand::Rng;

/// Non-overlapping `p×p` patches projected to `D` features; equivalent to a
/// convolution whose kernel and stride are both `p`.
#[derive(Clone, Copy, Debug)]
pub struct PatchEmbed {
    pub proj: Linear,
    pub channels: usize,
    pub patch: usize,
}

impl PatchEmbed {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        channels: usize,
        patch: usize,
        dim: usize,
        rng: &mut R,
    ) -> Self {
        Self {
            proj: Linear::new(store, name, channels * patch * patch, dim, true, rng),
            channels,
            patch,
        }
    }

    /// `[B, C, M, K] → [B, L, D]`, tokens in row-major patch order.
    pub fn forward(&self, tape: &mut GradTape, store: &ParamStore, x: Var) -> Result<Var> {
        let s = tape.shape(x).to_vec();
        let p = self.patch;
        if s.len() != 4 || s[1] != self.channels || s[2] % p != 0 || s[3] % p != 0 {
            return Err(Error::shape("patch_embed", &s, &[self.channels, p, p]));
        }
        let (b, c, mp, kp) = (s[0], s[1], s[2] / p, s[3] / p);
        let x = tape.reshape(x, &[b, c, mp, p, kp, p])?;
        let x = tape.permute(x, &[0, 2, 4, 1, 3, 5])?;
        let x = tape.reshape(x, &[b, mp * kp, c * p * p])?;
        self.proj.forward(tape, store, x)
    }
}

/// `[B, L, C·p·p] → [B, C, M, K]`, the inverse of the patch layout above.
pub fn unpatchify(tape: &mut GradTape, x: Var, channels: usize, patch: usize, m: usize, k: usize) -> Result<Var> {
    let s = tape.shape(x).to_vec();
    let (mp, kp) = (m / patch, k / patch);
    if s.len() != 3 || s[1] != mp * kp || s[2] != channels * patch * patch {
        return Err(Error::shape("unpatchify", &s, &[mp * kp, channels * patch * patch]));
    }
    let x = tape.reshape(x, &[s[0], mp, kp, channels, patch, patch])?;
    let x = tape.permute(x, &[0, 3, 1, 4, 2, 5])?;
    tape.reshape(x, &[s[0], channels, m, k])
}

/// Patch index of grid cell `(m, k)`.
pub fn patch_of(m: usize, k: usize, patch: usize, n_tx: usize) -> usize {
    (m / patch) * (n_tx / patch) + k / patch
}

/// Fixed 2-D sine-cosine table of shape `[rows·cols, D]`.
///
/// The first `D/2` entries encode the row index and the rest the column
/// index, each as interleaved `sin(i/ω_k), cos(i/ω_k)` with
/// `ω_k = 10000^(2k/D)`.
pub fn positional_encoding_2d(rows: usize, cols: usize, dim: usize) -> Result<Tensor> {
    if dim == 0 || dim % 4 != 0 {
        return Err(Error::Config(format!("positional encoding width {dim} is not a multiple of 4")));
    }
    let omega: Vec<f64> = (0..dim / 4).map(|k| 10000f64.powf(2.0 * k as f64 / dim as f64)).collect();
    let mut out = Vec::with_capacity(rows * cols * dim);
    for i in 0..rows {
        for j in 0..cols {
            for pos in [i, j] {
                for w in &omega {
                    let a = pos as f64 / w;
                    out.push(a.sin());
                    out.push(a.cos());
                }
            }
        }
    }
    Tensor::new(&[rows * cols, dim], out)
}
