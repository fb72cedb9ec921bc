//! Model checkpoints: `magic | version | kind | header_len | TOML header |
//! tensor_count | tensors | crc32`, little-endian. Each tensor is stored as
//! `name_len | name | ndim | dims (u64) | data (f64)`.

use crate::c2p::{C2pConfig, CsiToPdp};
use crate::dataset::{put_f64s, Reader};
use crate::error::{Error, Result};
use crate::features::NormStats;
use crate::model::{Extrapolator, ExtrapolatorConfig};
use crate::tensor::{ParamStore, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use std::path::Path;

const MAGIC: &[u8; 8] = b"CHANEXCK";
const VERSION: u32 = 1;
const KIND_C2P: u32 = 1;
const KIND_EXTRAPOLATOR: u32 = 2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct C2pHeader {
    config: C2pConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct ExtrapolatorHeader {
    config: ExtrapolatorConfig,
    csi_stats: NormStats,
    mp_stats: NormStats,
    /// Multipath features came from ground-truth PDPs.
    ground_truth_features: bool,
}

/// A trained extrapolator plus how its features were produced.
#[derive(Clone, Debug)]
pub struct ExtrapolatorCheckpoint {
    pub model: Extrapolator,
    pub ground_truth_features: bool,
}

fn encode<H: Serialize>(kind: u32, header: &H, params: &ParamStore) -> Result<Vec<u8>> {
    let header = toml::to_string(header).map_err(|e| Error::Format(e.to_string()))?;
    let mut w = Vec::new();
    w.extend_from_slice(MAGIC);
    w.extend_from_slice(&VERSION.to_le_bytes());
    w.extend_from_slice(&kind.to_le_bytes());
    w.extend_from_slice(&(header.len() as u32).to_le_bytes());
    w.extend_from_slice(header.as_bytes());
    w.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for p in params.iter() {
        w.extend_from_slice(&(p.name.len() as u32).to_le_bytes());
        w.extend_from_slice(p.name.as_bytes());
        w.extend_from_slice(&(p.value.ndim() as u32).to_le_bytes());
        for &d in p.value.shape() {
            w.extend_from_slice(&(d as u64).to_le_bytes());
        }
        put_f64s(&mut w, p.value.data());
    }
    let crc = crc32fast::hash(&w);
    w.extend_from_slice(&crc.to_le_bytes());
    Ok(w)
}

fn decode<H: DeserializeOwned>(bytes: &[u8], kind: u32) -> Result<(H, Vec<(String, Tensor)>)> {
    if bytes.len() < MAGIC.len() + 20 {
        return Err(Error::Format("checkpoint is truncated".into()));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    if crc32fast::hash(body) != u32::from_le_bytes(tail.try_into().expect("4 bytes")) {
        return Err(Error::Format("checkpoint checksum mismatch".into()));
    }
    let mut r = Reader { buf: body, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(Error::Format("not a checkpoint".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let found = r.u32()?;
    if found != kind {
        return Err(Error::Format(format!("checkpoint holds model kind {found}, expected {kind}")));
    }
    let hlen = r.u32()? as usize;
    let text = std::str::from_utf8(r.take(hlen)?).map_err(|e| Error::Format(e.to_string()))?;
    let header: H = toml::from_str(text).map_err(|e| Error::Format(e.to_string()))?;
    let count = r.u32()? as usize;
    let mut tensors = Vec::with_capacity(count);
    for _ in 0..count {
        let nlen = r.u32()? as usize;
        let name = String::from_utf8(r.take(nlen)?.to_vec()).map_err(|e| Error::Format(e.to_string()))?;
        let ndim = r.u32()? as usize;
        let shape = (0..ndim)
            .map(|_| r.u64().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let n = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
        let n = n.ok_or_else(|| Error::Format(format!("tensor {name} is too large")))?;
        tensors.push((name, Tensor::new(&shape, r.f64s(n)?)?));
    }
    if r.pos != body.len() {
        return Err(Error::Format("trailing bytes in checkpoint".into()));
    }
    Ok((header, tensors))
}

pub fn c2p_to_bytes(model: &CsiToPdp) -> Result<Vec<u8>> {
    encode(KIND_C2P, &C2pHeader { config: model.config }, &model.params)
}

pub fn c2p_from_bytes(bytes: &[u8]) -> Result<CsiToPdp> {
    let (h, tensors): (C2pHeader, _) = decode(bytes, KIND_C2P)?;
    let mut params = ParamStore::new();
    for (name, t) in tensors {
        if name.ends_with(".bias") {
            params.add_no_decay(name, t);
        } else {
            params.add(name, t);
        }
    }
    CsiToPdp::from_params(h.config, params)
}

pub fn extrapolator_to_bytes(ckpt: &ExtrapolatorCheckpoint) -> Result<Vec<u8>> {
    let m = &ckpt.model;
    let header = ExtrapolatorHeader {
        config: m.config.clone(),
        csi_stats: m.csi_stats.clone(),
        mp_stats: m.mp_stats.clone(),
        ground_truth_features: ckpt.ground_truth_features,
    };
    encode(KIND_EXTRAPOLATOR, &header, &m.params)
}

pub fn extrapolator_from_bytes(bytes: &[u8]) -> Result<ExtrapolatorCheckpoint> {
    let (h, tensors): (ExtrapolatorHeader, _) = decode(bytes, KIND_EXTRAPOLATOR)?;
    // weights are overwritten below; the seed only fixes the layout
    let mut model = Extrapolator::new(h.config, &mut ChaCha8Rng::seed_from_u64(0))?;
    if tensors.len() != model.params.len() {
        return Err(Error::Format(format!(
            "checkpoint has {} tensors, model expects {}",
            tensors.len(),
            model.params.len()
        )));
    }
    model.load_params(&tensors)?;
    if h.csi_stats.groups() != 1 || h.mp_stats.groups() != model.config.mp_channels() {
        return Err(Error::Format("normalization statistics do not match the model".into()));
    }
    model.csi_stats = h.csi_stats;
    model.mp_stats = h.mp_stats;
    Ok(ExtrapolatorCheckpoint {
        model,
        ground_truth_features: h.ground_truth_features,
    })
}

pub fn save_c2p(model: &CsiToPdp, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, c2p_to_bytes(model)?)?;
    Ok(())
}

pub fn load_c2p(path: impl AsRef<Path>) -> Result<CsiToPdp> {
    c2p_from_bytes(&std::fs::read(path)?)
}

pub fn save_extrapolator(ckpt: &ExtrapolatorCheckpoint, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, extrapolator_to_bytes(ckpt)?)?;
    Ok(())
}

pub fn load_extrapolator(path: impl AsRef<Path>) -> Result<ExtrapolatorCheckpoint> {
    extrapolator_from_bytes(&std::fs::read(path)?)
}
