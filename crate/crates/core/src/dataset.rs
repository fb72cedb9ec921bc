//! Synthetic datasets and their on-disk format.
//!
//! A file is `magic | version | flags | header_len | TOML header | samples |
//! crc32`, all integers and floats little-endian. Each sample stores the
//! CSI planes, then (if flagged) the per-pair PDPs, then (if flagged) the
//! path set with its per-pair jitter.

use crate::c2p::PowerDelayProfile;
use crate::channel::{
    pair_pdps, sample_paths, synthesize_csi, ArrayGeometry, CarrierConfig, ChannelMatrix, PairJitter, Path, PathSet,
    PdpBinning, ScenarioConfig,
};
use crate::error::{Error, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path as FsPath;

const MAGIC: &[u8; 8] = b"CHANEXDS";
const VERSION: u32 = 1;
const FLAG_PDPS: u32 = 1;
const FLAG_PATHS: u32 = 2;

/// One channel realization.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub csi: ChannelMatrix,
    /// Ground-truth PDP per antenna pair, row-major over `(m, k)`.
    pub pdps: Vec<PowerDelayProfile>,
    pub paths: Option<PathSet>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub geometry: ArrayGeometry,
    pub carrier: CarrierConfig,
    pub binning: PdpBinning,
    pub count: usize,
    pub seed: Option<u64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub geometry: ArrayGeometry,
    pub carrier: CarrierConfig,
    pub binning: PdpBinning,
    pub seed: Option<u64>,
    pub samples: Vec<Sample>,
}

/// Everything needed to draw a dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerateConfig {
    pub geometry: ArrayGeometry,
    pub carrier: CarrierConfig,
    pub binning: PdpBinning,
    pub scenario: ScenarioConfig,
    pub keep_paths: bool,
}

impl Default for GenerateConfig {
    fn default() -> Self {
        Self {
            geometry: ArrayGeometry::default(),
            carrier: CarrierConfig::default().with_subcarriers(64),
            binning: PdpBinning::default(),
            scenario: ScenarioConfig::default(),
            keep_paths: true,
        }
    }
}

/// RNG for sample `index` of a run seeded with `seed`; independent of the
/// order in which samples are produced.
pub fn sample_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Builds a sample from a path set: CSI, per-pair PDPs, optionally the paths.
pub fn realize(paths: PathSet, geometry: &ArrayGeometry, carrier: &CarrierConfig, binning: PdpBinning, keep_paths: bool) -> Result<Sample> {
    let csi = synthesize_csi(&paths, geometry, carrier)?;
    let pdps = pair_pdps(&paths, geometry, binning)?;
    Ok(Sample {
        csi,
        pdps,
        paths: keep_paths.then_some(paths),
    })
}

pub fn generate(config: &GenerateConfig, n_samples: usize, seed: u64) -> Result<Dataset> {
    let g = &config.geometry;
    g.validate()?;
    config.carrier.validate()?;
    if config.scenario.max_delay() >= config.binning.window() {
        return Err(Error::Config(format!(
            "scenario delays reach {:e} s but the PDP window is {:e} s",
            config.scenario.max_delay(),
            config.binning.window()
        )));
    }
    let samples = (0..n_samples)
        .map(|i| {
            let mut rng = sample_rng(seed, i as u64);
            let mut paths = sample_paths(&config.scenario, g.n_rx, g.n_tx, &mut rng)?;
            paths.scale_amplitudes(config.scenario.carrier_gain(config.carrier.center_frequency));
            realize(paths, g, &config.carrier, config.binning, config.keep_paths)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        geometry: *g,
        carrier: config.carrier,
        binning: config.binning,
        seed: Some(seed),
        samples,
    })
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Splits into `(train, test)` with the last `test_fraction` held out.
    pub fn split(&self, test_fraction: f64) -> (&[Sample], &[Sample]) {
        let n = self.samples.len();
        let n_test = ((n as f64 * test_fraction).round() as usize).min(n);
        self.samples.split_at(n - n_test)
    }

    pub fn header(&self) -> DatasetHeader {
        DatasetHeader {
            geometry: self.geometry,
            carrier: self.carrier,
            binning: self.binning,
            count: self.samples.len(),
            seed: self.seed,
        }
    }

    fn flags(&self) -> u32 {
        let pdps = self.samples.iter().all(|s| !s.pdps.is_empty());
        let paths = !self.samples.is_empty() && self.samples.iter().all(|s| s.paths.is_some());
        (if pdps { FLAG_PDPS } else { 0 }) | (if paths { FLAG_PATHS } else { 0 })
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = toml::to_string(&self.header()).map_err(|e| Error::Format(e.to_string()))?;
        let flags = self.flags();
        let mut w = Vec::new();
        w.extend_from_slice(MAGIC);
        w.extend_from_slice(&VERSION.to_le_bytes());
        w.extend_from_slice(&flags.to_le_bytes());
        w.extend_from_slice(&(header.len() as u32).to_le_bytes());
        w.extend_from_slice(header.as_bytes());
        let g = &self.geometry;
        for s in &self.samples {
            if s.csi.n_rx != g.n_rx || s.csi.n_tx != g.n_tx || s.csi.n_subcarriers != self.carrier.n_subcarriers {
                return Err(Error::shape(
                    "dataset sample",
                    &[s.csi.n_rx, s.csi.n_tx, s.csi.n_subcarriers],
                    &[g.n_rx, g.n_tx, self.carrier.n_subcarriers],
                ));
            }
            put_f64s(&mut w, &s.csi.re);
            put_f64s(&mut w, &s.csi.im);
            if flags & FLAG_PDPS != 0 {
                for p in &s.pdps {
                    if p.len() != self.binning.n_bins {
                        return Err(Error::shape("dataset pdp", &[p.len()], &[self.binning.n_bins]));
                    }
                    put_f64s(&mut w, &p.bins);
                }
            }
            if flags & FLAG_PATHS != 0 {
                let ps = s.paths.as_ref().expect("flag checked");
                w.extend_from_slice(&(ps.paths.len() as u32).to_le_bytes());
                for p in &ps.paths {
                    put_f64s(
                        &mut w,
                        &[p.amplitude, p.phase, p.delay, p.aoa_az, p.aoa_el, p.aod_az, p.aod_el],
                    );
                }
                match &ps.jitter {
                    None => w.push(0),
                    Some(j) => {
                        w.push(1);
                        put_f64s(&mut w, &j.amplitude);
                        put_f64s(&mut w, &j.phase);
                        put_f64s(&mut w, &j.delay);
                    }
                }
            }
        }
        let crc = crc32fast::hash(&w);
        w.extend_from_slice(&crc.to_le_bytes());
        Ok(w)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < MAGIC.len() + 16 {
            return Err(Error::Format("dataset file is truncated".into()));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
        if crc32fast::hash(body) != stored {
            return Err(Error::Format("dataset checksum mismatch".into()));
        }
        let mut r = Reader { buf: body, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Format("not a dataset file".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported dataset version {version}")));
        }
        let flags = r.u32()?;
        let hlen = r.u32()? as usize;
        let header: DatasetHeader = toml::from_str(
            std::str::from_utf8(r.take(hlen)?).map_err(|e| Error::Format(e.to_string()))?,
        )
        .map_err(|e| Error::Format(e.to_string()))?;
        let g = header.geometry;
        let n_sc = header.carrier.n_subcarriers;
        let pairs = g.n_rx * g.n_tx;
        let mut samples = Vec::with_capacity(header.count);
        for _ in 0..header.count {
            let mut csi = ChannelMatrix::zeros(g.n_rx, g.n_tx, n_sc);
            csi.re = r.f64s(pairs * n_sc)?;
            csi.im = r.f64s(pairs * n_sc)?;
            let mut pdps = Vec::new();
            if flags & FLAG_PDPS != 0 {
                for _ in 0..pairs {
                    pdps.push(PowerDelayProfile::new(r.f64s(header.binning.n_bins)?, header.binning.bin_width)?);
                }
            }
            let paths = if flags & FLAG_PATHS != 0 {
                let l = r.u32()? as usize;
                let mut paths = Vec::with_capacity(l);
                for _ in 0..l {
                    let v = r.f64s(7)?;
                    paths.push(Path {
                        amplitude: v[0],
                        phase: v[1],
                        delay: v[2],
                        aoa_az: v[3],
                        aoa_el: v[4],
                        aod_az: v[5],
                        aod_el: v[6],
                    });
                }
                let jitter = match r.take(1)?[0] {
                    0 => None,
                    1 => Some(PairJitter {
                        n_rx: g.n_rx,
                        n_tx: g.n_tx,
                        amplitude: r.f64s(pairs * l)?,
                        phase: r.f64s(pairs * l)?,
                        delay: r.f64s(pairs * l)?,
                    }),
                    t => return Err(Error::Format(format!("bad jitter tag {t}"))),
                };
                Some(PathSet { paths, jitter })
            } else {
                None
            };
            samples.push(Sample { csi, pdps, paths });
        }
        if r.pos != body.len() {
            return Err(Error::Format(format!("{} trailing bytes in dataset", body.len() - r.pos)));
        }
        Ok(Self {
            geometry: g,
            carrier: header.carrier,
            binning: header.binning,
            seed: header.seed,
            samples,
        })
    }

    pub fn save(&self, path: impl AsRef<FsPath>) -> Result<()> {
        let bytes = self.to_bytes()?;
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        f.write_all(&bytes)?;
        f.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<FsPath>) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }
}

pub(crate) fn put_f64s(w: &mut Vec<u8>, xs: &[f64]) {
    w.reserve(xs.len() * 8);
    for x in xs {
        w.extend_from_slice(&x.to_le_bytes());
    }
}

pub(crate) struct Reader<'a> {
    pub buf: &'a [u8],
    pub pos: usize,
}

impl<'a> Reader<'a> {
    pub fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let Some(end) = end else {
            return Err(Error::Format("unexpected end of file".into()));
        };
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    pub fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(n.checked_mul(8).ok_or_else(|| Error::Format("length overflow".into()))?)?;
        Ok(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
    }
}
