//! Random token masking shared by the CSI and multipath streams.

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use rand::Rng;

#[derive(Clone, Debug, PartialEq)]
pub struct MaskPlan {
    pub mask_ratio: f64,
    pub noise: Vec<f64>,
    /// Token indices sorted by ascending noise.
    pub ids_shuffle: Vec<usize>,
    pub ids_keep: Vec<usize>,
    /// Inverse of `ids_shuffle`.
    pub ids_restore: Vec<usize>,
    /// 0 for kept tokens, 1 for masked ones.
    pub binary_mask: Vec<u8>,
}

/// Visible token count for a ratio: `max(1, floor(L·(1−ρ)))`.
pub fn keep_count(l_total: usize, rho: f64) -> usize {
    ((l_total as f64 * (1.0 - rho)).floor() as usize).clamp(1, l_total.max(1))
}

impl MaskPlan {
    /// Builds a plan from explicit noise values.
    pub fn from_noise(noise: Vec<f64>, rho: f64) -> Result<Self> {
        let l = noise.len();
        if l == 0 {
            return Err(Error::Config("mask plan needs at least one token".into()));
        }
        if !(0.0..1.0).contains(&rho) {
            return Err(Error::Config(format!("mask ratio must lie in [0, 1), got {rho}")));
        }
        if noise.iter().any(|v| v.is_nan()) {
            return Err(Error::Config("mask noise contains NaN".into()));
        }
        let mut ids_shuffle: Vec<usize> = (0..l).collect();
        ids_shuffle.sort_by(|&a, &b| noise[a].total_cmp(&noise[b]));
        let mut ids_restore = vec![0; l];
        for (pos, &tok) in ids_shuffle.iter().enumerate() {
            ids_restore[tok] = pos;
        }
        let keep = keep_count(l, rho);
        let ids_keep = ids_shuffle[..keep].to_vec();
        let mut binary_mask = vec![1u8; l];
        for &i in &ids_keep {
            binary_mask[i] = 0;
        }
        Ok(Self {
            mask_ratio: rho,
            noise,
            ids_shuffle,
            ids_keep,
            ids_restore,
            binary_mask,
        })
    }

    /// Plan where `known` lists the visible tokens, in that order.
    pub fn from_known(l_total: usize, known: &[usize]) -> Result<Self> {
        let mut noise = vec![1.0; l_total];
        for (rank, &i) in known.iter().enumerate() {
            if i >= l_total {
                return Err(Error::Index { index: i, len: l_total });
            }
            noise[i] = rank as f64 / l_total as f64 - 1.0;
        }
        let rho = 1.0 - known.len() as f64 / l_total.max(1) as f64;
        let mut plan = Self::from_noise(noise, rho.max(0.0))?;
        if plan.ids_keep.len() != known.len() {
            // Floating rounding in `rho` can drop one token; pin the count.
            let keep = known.len().max(1).min(l_total);
            plan.ids_keep = plan.ids_shuffle[..keep].to_vec();
            plan.binary_mask = vec![1; l_total];
            for &i in &plan.ids_keep {
                plan.binary_mask[i] = 0;
            }
        }
        Ok(plan)
    }

    pub fn len(&self) -> usize {
        self.noise.len()
    }

    pub fn is_empty(&self) -> bool {
        self.noise.is_empty()
    }

    pub fn keep(&self) -> usize {
        self.ids_keep.len()
    }

    pub fn masked(&self) -> usize {
        self.len() - self.keep()
    }

    pub fn is_masked(&self, token: usize) -> bool {
        self.binary_mask[token] == 1
    }
}

pub fn make_mask_plan<R: Rng + ?Sized>(l_total: usize, rho: f64, rng: &mut R) -> Result<MaskPlan> {
    let noise = (0..l_total).map(|_| rng.random::<f64>()).collect();
    MaskPlan::from_noise(noise, rho)
}

/// One independent plan per batch element.
pub fn make_mask_plans<R: Rng + ?Sized>(batch: usize, l_total: usize, rho: f64, rng: &mut R) -> Result<Vec<MaskPlan>> {
    (0..batch).map(|_| make_mask_plan(l_total, rho, rng)).collect()
}

fn check_plans(shape: &[usize], plans: &[MaskPlan], op: &'static str) -> Result<()> {
    if shape.len() != 3 || shape[0] != plans.len() {
        return Err(Error::shape(op, shape, &[plans.len()]));
    }
    let keep = plans.first().map_or(0, MaskPlan::keep);
    for p in plans {
        if p.keep() != keep {
            return Err(Error::Contract("all plans in a batch must keep the same token count".into()));
        }
    }
    Ok(())
}

/// Gathers kept tokens `[B, L, D] → [B, L_keep, D]` in `ids_keep` order.
pub fn apply_mask(tokens: &Tensor, plans: &[MaskPlan]) -> Result<Tensor> {
    check_plans(tokens.shape(), plans, "apply_mask")?;
    let (l, d) = (tokens.shape()[1], tokens.shape()[2]);
    let keep = plans.first().map_or(0, MaskPlan::keep);
    let mut out = Vec::with_capacity(plans.len() * keep * d);
    for (b, p) in plans.iter().enumerate() {
        if p.len() != l {
            return Err(Error::shape("apply_mask", tokens.shape(), &[p.len()]));
        }
        for &i in &p.ids_keep {
            let o = (b * l + i) * d;
            out.extend_from_slice(&tokens.data()[o..o + d]);
        }
    }
    Tensor::new(&[plans.len(), keep, d], out)
}

/// Scatters visible tokens back to full length, filling masked slots with `mask_token`.
pub fn restore_sequence(visible: &Tensor, mask_token: &[f64], plans: &[MaskPlan]) -> Result<Tensor> {
    check_plans(visible.shape(), plans, "restore_sequence")?;
    let (keep, d) = (visible.shape()[1], visible.shape()[2]);
    if mask_token.len() != d {
        return Err(Error::shape("restore_sequence", visible.shape(), &[mask_token.len()]));
    }
    let l = plans.first().map_or(0, MaskPlan::len);
    let mut out = Vec::with_capacity(plans.len() * l * d);
    for (b, p) in plans.iter().enumerate() {
        if p.keep() != keep || p.len() != l {
            return Err(Error::shape("restore_sequence", visible.shape(), &[p.len(), p.keep()]));
        }
        for &pos in &p.ids_restore {
            if pos < keep {
                let o = (b * keep + pos) * d;
                out.extend_from_slice(&visible.data()[o..o + d]);
            } else {
                out.extend_from_slice(mask_token);
            }
        }
    }
    Tensor::new(&[plans.len(), l, d], out)
}
