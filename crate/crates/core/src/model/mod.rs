//! Dual-branch masked auto-encoder for antenna-domain channel extrapolation.
//!
//! CSI and multipath-feature grids are cut into patches, embedded, masked
//! with a shared plan, encoded by separate transformer stacks and fused by
//! cross-attention. A light decoder restores the full token sequence and
//! projects it back to the CSI grid.

mod embed;
mod layers;

pub use embed::{patch_of, positional_encoding_2d, unpatchify, PatchEmbed};
pub use layers::{drop_path, Attention, Block, Mode, Norm};

use crate::error::{Error, Result};
use crate::features::{FeatureCase, NormStats};
use crate::masking::MaskPlan;
use crate::nn::{LayerNorm, Linear};
use crate::tensor::{GradTape, ParamStore, Tensor, Var};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

/// How the multipath branch meets the CSI branch.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FusionMode {
    /// Cross-attention with multipath queries over CSI keys and values.
    Proposed,
    /// Cross-attention with CSI queries over multipath keys and values.
    Swapped,
    /// Token-wise concatenation followed by a linear map back to `D`.
    Concat,
    /// No multipath branch; the CSI encoder feeds the decoder directly.
    Baseline,
}

impl FusionMode {
    pub const ALL: [FusionMode; 4] = [FusionMode::Proposed, FusionMode::Swapped, FusionMode::Concat, FusionMode::Baseline];

    pub fn as_str(self) -> &'static str {
        match self {
            FusionMode::Proposed => "proposed",
            FusionMode::Swapped => "swapped",
            FusionMode::Concat => "concat",
            FusionMode::Baseline => "baseline",
        }
    }

    pub fn uses_multipath(self) -> bool {
        self != FusionMode::Baseline
    }
}

impl fmt::Display for FusionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FusionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown fusion mode {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExtrapolatorConfig {
    pub n_rx: usize,
    pub n_tx: usize,
    pub patch: usize,
    pub embed_dim: usize,
    pub encoder_depth: usize,
    pub decoder_depth: usize,
    pub heads: usize,
    pub ffn_ratio: usize,
    pub drop_path: f64,
    pub decoder_dim: usize,
    pub fusion: FusionMode,
    pub feature_case: FeatureCase,
}

impl Default for ExtrapolatorConfig {
    fn default() -> Self {
        Self {
            n_rx: 8,
            n_tx: 16,
            patch: 2,
            embed_dim: 128,
            encoder_depth: 4,
            decoder_depth: 2,
            heads: 4,
            ffn_ratio: 4,
            drop_path: 0.1,
            decoder_dim: 64,
            fusion: FusionMode::Proposed,
            feature_case: FeatureCase::Proposed,
        }
    }
}

impl ExtrapolatorConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.patch == 0 || self.n_rx % self.patch != 0 || self.n_tx % self.patch != 0 {
            return bad(format!("grid {}x{} is not divisible by patch {}", self.n_rx, self.n_tx, self.patch));
        }
        if self.heads == 0 || self.embed_dim % self.heads != 0 || self.decoder_dim % self.heads != 0 {
            return bad(format!("widths {} / {} must divide into {} heads", self.embed_dim, self.decoder_dim, self.heads));
        }
        if self.embed_dim % 4 != 0 || self.decoder_dim % 4 != 0 {
            return bad("embedding widths must be multiples of 4".into());
        }
        if self.decoder_dim == 0 || self.decoder_dim > self.embed_dim {
            return bad(format!("decoder width {} must lie in 1..={}", self.decoder_dim, self.embed_dim));
        }
        if !(0.0..1.0).contains(&self.drop_path) {
            return bad(format!("drop-path rate {} outside [0, 1)", self.drop_path));
        }
        if self.ffn_ratio == 0 {
            return bad("ffn ratio must be positive".into());
        }
        Ok(())
    }

    pub fn grid_rows(&self) -> usize {
        self.n_rx / self.patch
    }

    pub fn grid_cols(&self) -> usize {
        self.n_tx / self.patch
    }

    pub fn tokens(&self) -> usize {
        self.grid_rows() * self.grid_cols()
    }

    pub fn mp_channels(&self) -> usize {
        self.feature_case.channels()
    }

    /// Values produced per output token: real and imaginary planes of one patch.
    pub fn patch_values(&self) -> usize {
        2 * self.patch * self.patch
    }
}

/// Normalized model inputs for one batch.
#[derive(Clone, Debug)]
pub struct Batch {
    /// `[B, 2, n_rx, n_tx]`
    pub csi: Tensor,
    /// `[B, C_mp, n_rx, n_tx]`; ignored by the baseline.
    pub multipath: Tensor,
    pub plans: Vec<MaskPlan>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.plans.len()
    }

    pub fn is_empty(&self) -> bool {
        self.plans.is_empty()
    }
}

#[derive(Clone, Debug)]
struct Decoder {
    embed: Linear,
    mask_token: crate::tensor::ParamId,
    blocks: Vec<Block>,
    norm: LayerNorm,
    head: Linear,
}

#[derive(Clone, Debug)]
enum Fusion {
    Cross(Attention),
    Concat(Linear),
    None,
}

#[derive(Clone, Debug)]
pub struct Extrapolator {
    pub config: ExtrapolatorConfig,
    pub params: ParamStore,
    pub csi_stats: NormStats,
    pub mp_stats: NormStats,
    csi_embed: PatchEmbed,
    mp_embed: Option<PatchEmbed>,
    csi_blocks: Vec<Block>,
    mp_blocks: Vec<Block>,
    fusion: Fusion,
    decoder: Decoder,
    pos: Tensor,
    dec_pos: Tensor,
}

impl Extrapolator {
    pub fn new<R: Rng + ?Sized>(config: ExtrapolatorConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let c = &config;
        let (d, h) = (c.embed_dim, c.heads);
        let mut p = ParamStore::new();
        let encoder = |p: &mut ParamStore, name: &str, rng: &mut R| {
            (0..c.encoder_depth)
                .map(|i| Block::new(p, &format!("{name}.{i}"), d, h, c.ffn_ratio, Norm::Pre, c.drop_path, rng))
                .collect::<Vec<_>>()
        };
        let csi_embed = PatchEmbed::new(&mut p, "csi_embed", 2, c.patch, d, rng);
        let csi_blocks = encoder(&mut p, "csi_encoder", rng);
        let (mp_embed, mp_blocks) = if c.fusion.uses_multipath() {
            let e = PatchEmbed::new(&mut p, "mp_embed", c.mp_channels(), c.patch, d, rng);
            (Some(e), encoder(&mut p, "mp_encoder", rng))
        } else {
            (None, Vec::new())
        };
        let fusion = match c.fusion {
            FusionMode::Proposed | FusionMode::Swapped => Fusion::Cross(Attention::new(&mut p, "fusion", d, h, rng)),
            FusionMode::Concat => Fusion::Concat(Linear::new(&mut p, "fusion.concat", 2 * d, d, true, rng)),
            FusionMode::Baseline => Fusion::None,
        };
        let decoder = Decoder {
            embed: Linear::new(&mut p, "decoder.embed", d, c.decoder_dim, true, rng),
            mask_token: p.add_no_decay("decoder.mask_token", Tensor::randn(&[c.decoder_dim], 0.02, rng)),
            blocks: (0..c.decoder_depth)
                .map(|i| {
                    Block::new(&mut p, &format!("decoder.{i}"), c.decoder_dim, h, c.ffn_ratio, Norm::Post, 0.0, rng)
                })
                .collect(),
            norm: LayerNorm::new(&mut p, "decoder.norm", c.decoder_dim),
            head: Linear::new(&mut p, "decoder.head", c.decoder_dim, c.patch_values(), true, rng),
        };
        let pos = positional_encoding_2d(c.grid_rows(), c.grid_cols(), d)?;
        let dec_pos = positional_encoding_2d(c.grid_rows(), c.grid_cols(), c.decoder_dim)?;
        Ok(Self {
            csi_stats: NormStats::identity(1),
            mp_stats: NormStats::identity(c.mp_channels()),
            config,
            params: p,
            csi_embed,
            mp_embed,
            csi_blocks,
            mp_blocks,
            fusion,
            decoder,
            pos,
            dec_pos,
        })
    }

    /// Shared encoder positional table `[L, D]`.
    pub fn positional_table(&self) -> &Tensor {
        &self.pos
    }

    fn check_batch(&self, batch: &Batch) -> Result<()> {
        let c = &self.config;
        let b = batch.len();
        if batch.csi.shape() != [b, 2, c.n_rx, c.n_tx] {
            return Err(Error::shape("extrapolator csi", batch.csi.shape(), &[b, 2, c.n_rx, c.n_tx]));
        }
        if c.fusion.uses_multipath() && batch.multipath.shape() != [b, c.mp_channels(), c.n_rx, c.n_tx] {
            return Err(Error::shape(
                "extrapolator multipath",
                batch.multipath.shape(),
                &[b, c.mp_channels(), c.n_rx, c.n_tx],
            ));
        }
        for p in &batch.plans {
            if p.len() != c.tokens() {
                return Err(Error::shape("extrapolator plan", &[p.len()], &[c.tokens()]));
            }
        }
        Ok(())
    }

    /// Embeds, adds positions, masks, and encodes one modality. Returns the
    /// position-encoded visible tokens and the encoder output.
    fn encode_branch(
        &self,
        tape: &mut GradTape,
        embed: &PatchEmbed,
        blocks: &[Block],
        x: Var,
        plans: &[MaskPlan],
        mode: &mut Mode<'_>,
    ) -> Result<(Var, Var)> {
        let tokens = embed.forward(tape, &self.params, x)?;
        let pos = tape.constant(self.pos.clone());
        let tokens = tape.add(tokens, pos)?;
        let keep: Vec<Vec<usize>> = plans.iter().map(|p| p.ids_keep.clone()).collect();
        let visible = tape.gather_tokens(tokens, &keep)?;
        let mut z = visible;
        for blk in blocks {
            z = blk.forward(tape, &self.params, z, mode)?;
        }
        Ok((visible, z))
    }

    /// Full forward pass; returns the normalized CSI estimate `[B, 2, n_rx, n_tx]`.
    pub fn forward(&self, tape: &mut GradTape, batch: &Batch, mode: &mut Mode<'_>) -> Result<Var> {
        self.check_batch(batch)?;
        let c = &self.config;
        let b = batch.len();
        let csi = tape.constant(batch.csi.clone());
        let (csi_visible, z_csi) = self.encode_branch(tape, &self.csi_embed, &self.csi_blocks, csi, &batch.plans, mode)?;

        let dec_in = match (&self.fusion, &self.mp_embed) {
            (Fusion::None, _) => z_csi,
            (fusion, Some(mp_embed)) => {
                let mp = tape.constant(batch.multipath.clone());
                let (_, z_mp) = self.encode_branch(tape, mp_embed, &self.mp_blocks, mp, &batch.plans, mode)?;
                let fused = match fusion {
                    Fusion::Cross(attn) if c.fusion == FusionMode::Swapped => {
                        attn.forward(tape, &self.params, z_csi, z_mp)?
                    }
                    Fusion::Cross(attn) => attn.forward(tape, &self.params, z_mp, z_csi)?,
                    Fusion::Concat(lin) => {
                        let cat = tape.concat(z_mp, z_csi, 2)?;
                        lin.forward(tape, &self.params, cat)?
                    }
                    Fusion::None => unreachable!(),
                };
                tape.add(fused, csi_visible)?
            }
            (_, None) => return Err(Error::Contract("fusion without a multipath branch".into())),
        };

        let dec = &self.decoder;
        let y = dec.embed.forward(tape, &self.params, dec_in)?;
        let keep = batch.plans.first().map_or(0, MaskPlan::keep);
        let n_mask = c.tokens() - keep;
        let y = if n_mask > 0 {
            let mt = tape.param(&self.params, dec.mask_token);
            let mt = tape.broadcast_to(mt, &[b, n_mask, c.decoder_dim])?;
            tape.concat(y, mt, 1)?
        } else {
            y
        };
        let restore: Vec<Vec<usize>> = batch.plans.iter().map(|p| p.ids_restore.clone()).collect();
        let y = tape.gather_tokens(y, &restore)?;
        let dpos = tape.constant(self.dec_pos.clone());
        let mut y = tape.add(y, dpos)?;
        for blk in &dec.blocks {
            y = blk.forward(tape, &self.params, y, mode)?;
        }
        let y = dec.norm.forward(tape, &self.params, y)?;
        let y = dec.head.forward(tape, &self.params, y)?;
        unpatchify(tape, y, 2, c.patch, c.n_rx, c.n_tx)
    }

    /// Records the masked reconstruction loss of a batch.
    pub fn loss_var(&self, tape: &mut GradTape, batch: &Batch, mode: &mut Mode<'_>) -> Result<Var> {
        let pred = self.forward(tape, batch, mode)?;
        masked_mse_var(tape, pred, &batch.csi, &batch.plans, self.config.patch)
    }

    /// Masked reconstruction loss in evaluation mode.
    pub fn loss(&self, batch: &Batch) -> Result<f64> {
        let mut tape = GradTape::new();
        let l = self.loss_var(&mut tape, batch, &mut Mode::eval())?;
        Ok(tape.value(l).item())
    }

    /// Normalized prediction in evaluation mode.
    pub fn predict(&self, batch: &Batch) -> Result<Tensor> {
        let mut tape = GradTape::new();
        let y = self.forward(&mut tape, batch, &mut Mode::eval())?;
        Ok(tape.value(y).clone())
    }

    /// Normalizes raw inputs into a batch. `csi` is `[B, 2, n_rx, n_tx]`,
    /// `multipath` `[B, C_mp, n_rx, n_tx]` (may be empty for the baseline).
    pub fn normalize(&self, csi: &Tensor, multipath: &Tensor, plans: Vec<MaskPlan>) -> Result<Batch> {
        let b = plans.len();
        let mut csi = csi.clone();
        let per = csi.len() / b.max(1);
        for s in csi.data_mut().chunks_mut(per.max(1)) {
            self.csi_stats.apply(s)?;
        }
        let mut mp = multipath.clone();
        if self.config.fusion.uses_multipath() {
            let per = mp.len() / b.max(1);
            for s in mp.data_mut().chunks_mut(per.max(1)) {
                self.mp_stats.apply(s)?;
            }
        }
        Ok(Batch {
            csi,
            multipath: mp,
            plans,
        })
    }

    /// Reconstructs full CSI grids from partially known ones in raw units.
    ///
    /// Unknown cells of `csi` are ignored. With `paste_back`, cells inside
    /// known patches are returned unchanged.
    pub fn extrapolate(&self, csi: &Tensor, multipath: &Tensor, plans: &[MaskPlan], paste_back: bool) -> Result<Tensor> {
        let batch = self.normalize(csi, multipath, plans.to_vec())?;
        let mut out = self.predict(&batch)?;
        let per = out.len() / plans.len().max(1);
        for s in out.data_mut().chunks_mut(per.max(1)) {
            self.csi_stats.invert(s)?;
        }
        if paste_back {
            let c = &self.config;
            let cells = c.n_rx * c.n_tx;
            for (b, plan) in plans.iter().enumerate() {
                for ch in 0..2 {
                    for m in 0..c.n_rx {
                        for k in 0..c.n_tx {
                            if !plan.is_masked(patch_of(m, k, c.patch, c.n_tx)) {
                                let i = (b * 2 + ch) * cells + m * c.n_tx + k;
                                out.data_mut()[i] = csi.data()[i];
                            }
                        }
                    }
                }
            }
        }
        Ok(out)
    }

    /// Overwrites parameters by name from `(name, tensor)` pairs; every
    /// parameter must be covered.
    pub fn load_params(&mut self, named: &[(String, Tensor)]) -> Result<()> {
        load_named(&mut self.params, named)
    }
}

pub(crate) fn load_named(store: &mut ParamStore, named: &[(String, Tensor)]) -> Result<()> {
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let name = store.get(id).name.clone();
        let t = named
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, t)| t.clone())
            .ok_or_else(|| Error::Format(format!("checkpoint lacks parameter {name}")))?;
        store.set_value(id, t)?;
    }
    Ok(())
}

/// Per-cell weights: `1/|masked patches|` inside masked patches, 0 elsewhere.
fn masked_weights(shape: &[usize], plans: &[MaskPlan], patch: usize) -> Result<Option<Tensor>> {
    if shape.len() != 4 || shape[0] != plans.len() {
        return Err(Error::shape("masked_mse", shape, &[plans.len()]));
    }
    let (b, ch, m, k) = (shape[0], shape[1], shape[2], shape[3]);
    let total: usize = plans.iter().map(MaskPlan::masked).sum();
    if total == 0 {
        log::warn!("masked loss over a batch with no masked patches is defined as 0");
        return Ok(None);
    }
    let w = 1.0 / total as f64;
    let mut out = vec![0.0; b * ch * m * k];
    for (bi, plan) in plans.iter().enumerate() {
        if plan.len() != (m / patch) * (k / patch) {
            return Err(Error::shape("masked_mse", &[plan.len()], &[m / patch, k / patch]));
        }
        for c in 0..ch {
            for r in 0..m {
                for col in 0..k {
                    if plan.is_masked(patch_of(r, col, patch, k)) {
                        out[((bi * ch + c) * m + r) * k + col] = w;
                    }
                }
            }
        }
    }
    Tensor::new(shape, out).map(Some)
}

/// Mean over masked patches of each patch's squared error norm.
pub fn masked_mse(pred: &Tensor, target: &Tensor, plans: &[MaskPlan], patch: usize) -> Result<f64> {
    if pred.shape() != target.shape() {
        return Err(Error::shape("masked_mse", pred.shape(), target.shape()));
    }
    let Some(w) = masked_weights(pred.shape(), plans, patch)? else {
        return Ok(0.0);
    };
    Ok(pred
        .data()
        .iter()
        .zip(target.data())
        .zip(w.data())
        .map(|((p, t), w)| w * (p - t) * (p - t))
        .sum())
}

pub fn masked_mse_var(tape: &mut GradTape, pred: Var, target: &Tensor, plans: &[MaskPlan], patch: usize) -> Result<Var> {
    if tape.shape(pred) != target.shape() {
        return Err(Error::shape("masked_mse", tape.shape(pred), target.shape()));
    }
    let Some(w) = masked_weights(target.shape(), plans, patch)? else {
        let z = tape.mul_const(pred, Tensor::zeros(target.shape()))?;
        return Ok(tape.sum(z));
    };
    let t = tape.constant(target.clone());
    let d = tape.sub(pred, t)?;
    let d2 = tape.mul(d, d)?;
    let wd = tape.mul_const(d2, w)?;
    Ok(tape.sum(wd))
}
