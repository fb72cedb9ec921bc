//! Multipath features derived from power delay profiles, plus Z-score
//! normalization for both input modalities.

use crate::c2p::PowerDelayProfile;
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

/// One resolved path of a PDP: bin power and bin delay in seconds.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EffectivePath {
    pub power: f64,
    pub delay: f64,
}

/// Bins whose power is strictly above one third of the peak, by ascending delay.
pub fn effective_paths(pdp: &PowerDelayProfile) -> Result<Vec<EffectivePath>> {
    let max = pdp.bins.iter().copied().fold(0.0, f64::max);
    if max <= 0.0 {
        return Err(Error::EmptyProfile);
    }
    let threshold = max / 3.0;
    Ok(pdp
        .bins
        .iter()
        .enumerate()
        .filter(|(_, &p)| p > threshold)
        .map(|(i, &p)| EffectivePath {
            power: p,
            delay: pdp.delay(i),
        })
        .collect())
}

/// Total effective power and power-weighted delay of one PDP.
pub fn extract_features(pdp: &PowerDelayProfile) -> Result<(f64, f64)> {
    summarize(&effective_paths(pdp)?)
}

fn summarize(paths: &[EffectivePath]) -> Result<(f64, f64)> {
    if paths.is_empty() {
        return Err(Error::EmptyProfile);
    }
    let total: f64 = paths.iter().map(|p| p.power).sum();
    let weighted: f64 = paths.iter().map(|p| p.power * p.delay).sum::<f64>() / total;
    Ok((total, weighted))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureCase {
    /// Total effective power and power-weighted delay.
    Proposed,
    /// Power and delay of the earliest effective path.
    Case1,
    /// Power and delay of the strongest path.
    Case2,
    /// Proposed followed by Case1.
    Case3,
    /// Proposed followed by Case2.
    Case4,
    /// Proposed, averaged over antenna pairs and broadcast back.
    Average,
}

impl FeatureCase {
    pub const ALL: [FeatureCase; 6] = [
        FeatureCase::Proposed,
        FeatureCase::Case1,
        FeatureCase::Case2,
        FeatureCase::Case3,
        FeatureCase::Case4,
        FeatureCase::Average,
    ];

    pub fn channels(self) -> usize {
        match self {
            FeatureCase::Case3 | FeatureCase::Case4 => 4,
            _ => 2,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            FeatureCase::Proposed => "proposed",
            FeatureCase::Case1 => "case1",
            FeatureCase::Case2 => "case2",
            FeatureCase::Case3 => "case3",
            FeatureCase::Case4 => "case4",
            FeatureCase::Average => "average",
        }
    }
}

impl fmt::Display for FeatureCase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FeatureCase {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown feature case {s:?}")))
    }
}

/// Multipath feature grid in channel-major layout `[C, n_rx, n_tx]`.
#[derive(Clone, Debug, PartialEq)]
pub struct MultipathFeatures {
    pub channels: usize,
    pub n_rx: usize,
    pub n_tx: usize,
    pub data: Vec<f64>,
}

impl MultipathFeatures {
    pub fn get(&self, c: usize, m: usize, k: usize) -> f64 {
        self.data[(c * self.n_rx + m) * self.n_tx + k]
    }

    /// Total power plane (channel 0).
    pub fn total_power(&self) -> &[f64] {
        &self.data[..self.n_rx * self.n_tx]
    }

    /// Weighted delay plane (channel 1).
    pub fn weighted_delay(&self) -> &[f64] {
        let n = self.n_rx * self.n_tx;
        &self.data[n..2 * n]
    }
}

/// Builds the feature grid of one realization from per-pair PDPs indexed `m·n_tx + k`.
pub fn build_variant(pdps: &[PowerDelayProfile], n_rx: usize, n_tx: usize, case: FeatureCase) -> Result<MultipathFeatures> {
    let n = n_rx * n_tx;
    if pdps.len() != n {
        return Err(Error::shape("build_variant", &[pdps.len()], &[n_rx, n_tx]));
    }
    let c = case.channels();
    let mut data = vec![0.0; c * n];
    for (i, pdp) in pdps.iter().enumerate() {
        let paths = effective_paths(pdp)?;
        let proposed = summarize(&paths)?;
        let first = paths[0];
        let strongest = paths
            .iter()
            .copied()
            .fold(paths[0], |best, p| if p.power > best.power { p } else { best });
        let vals: [f64; 4] = match case {
            FeatureCase::Proposed | FeatureCase::Average => [proposed.0, proposed.1, 0.0, 0.0],
            FeatureCase::Case1 => [first.power, first.delay, 0.0, 0.0],
            FeatureCase::Case2 => [strongest.power, strongest.delay, 0.0, 0.0],
            FeatureCase::Case3 => [proposed.0, proposed.1, first.power, first.delay],
            FeatureCase::Case4 => [proposed.0, proposed.1, strongest.power, strongest.delay],
        };
        for ch in 0..c {
            data[ch * n + i] = vals[ch];
        }
    }
    if case == FeatureCase::Average {
        for plane in data.chunks_mut(n) {
            let mean = plane.iter().sum::<f64>() / n as f64;
            plane.fill(mean);
        }
    }
    Ok(MultipathFeatures {
        channels: c,
        n_rx,
        n_tx,
        data,
    })
}

/// Mean and standard deviation per normalization group.
///
/// A single group normalizes every element with one pair of statistics;
/// `G` groups split each sample into `G` equal contiguous planes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub eps: f64,
}

impl NormStats {
    pub const DEFAULT_EPS: f64 = 1e-12;

    pub fn identity(groups: usize) -> Self {
        Self {
            mean: vec![0.0; groups],
            std: vec![1.0; groups],
            eps: Self::DEFAULT_EPS,
        }
    }

    pub fn groups(&self) -> usize {
        self.mean.len()
    }

    fn group_len(&self, len: usize) -> Result<usize> {
        let g = self.groups();
        if g == 0 || len % g != 0 {
            return Err(Error::shape("zscore", &[len], &[g]));
        }
        Ok(len / g)
    }

    /// Normalizes one sample in place.
    pub fn apply(&self, x: &mut [f64]) -> Result<()> {
        let per = self.group_len(x.len())?;
        for (g, plane) in x.chunks_mut(per.max(1)).enumerate() {
            let (mu, sd) = (self.mean[g], self.std[g]);
            plane.iter_mut().for_each(|v| *v = (*v - mu) / sd);
        }
        Ok(())
    }

    /// Maps a normalized sample back to raw units in place.
    pub fn invert(&self, x: &mut [f64]) -> Result<()> {
        let per = self.group_len(x.len())?;
        for (g, plane) in x.chunks_mut(per.max(1)).enumerate() {
            let (mu, sd) = (self.mean[g], self.std[g]);
            plane.iter_mut().for_each(|v| *v = *v * sd + mu);
        }
        Ok(())
    }
}

/// Fits `groups` mean/std pairs over a set of equally sized samples.
/// Standard deviations are population values clamped below at `eps`.
pub fn zscore_fit<'a, I>(samples: I, groups: usize, eps: f64) -> Result<NormStats>
where
    I: IntoIterator<Item = &'a [f64]>,
{
    if groups == 0 {
        return Err(Error::Config("zscore needs at least one group".into()));
    }
    let mut count = 0usize;
    let mut sum = vec![0.0; groups];
    let mut sum_sq = vec![0.0; groups];
    let mut len = None;
    let samples: Vec<&[f64]> = samples.into_iter().collect();
    for s in &samples {
        if *len.get_or_insert(s.len()) != s.len() || s.len() % groups != 0 || s.is_empty() {
            return Err(Error::shape("zscore_fit", &[s.len()], &[groups]));
        }
        let per = s.len() / groups;
        for (g, plane) in s.chunks(per).enumerate() {
            sum[g] += plane.iter().sum::<f64>();
        }
        count += per;
    }
    if count == 0 {
        return Err(Error::Empty);
    }
    let mean: Vec<f64> = sum.iter().map(|s| s / count as f64).collect();
    for s in &samples {
        let per = s.len() / groups;
        for (g, plane) in s.chunks(per).enumerate() {
            sum_sq[g] += plane.iter().map(|v| (v - mean[g]) * (v - mean[g])).sum::<f64>();
        }
    }
    let std = sum_sq.iter().map(|s| (s / count as f64).sqrt().max(eps)).collect();
    Ok(NormStats { mean, std, eps })
}
