//! Synthetic multipath MIMO channels.
//!
//! Every antenna pair `(m, k)` sees the same set of propagation paths up to
//! small per-pair perturbations. The frequency response on subcarrier `n` is
//!
//! ```text
//! h_mk(f_n) = Σ_l α_l e^{jφ_l} e^{-j2π f_n τ_l} a_r[m](θʳ_l, φʳ_l) a_t[k]*(θᵗ_l, φᵗ_l)
//! ```
//!
//! with `f_n` the baseband offset of the subcarrier from the carrier.

use crate::c2p::PowerDelayProfile;
use crate::error::{Error, Result};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::f64::consts::{PI, TAU};

/// Element arrangement of an antenna array.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum ArrayLayout {
    /// Elements on a line along the azimuth axis.
    Linear,
    /// Row-major grid with `columns` elements per row; columns follow
    /// azimuth, rows follow elevation.
    Planar { columns: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ArraySide {
    Tx,
    Rx,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArrayGeometry {
    pub n_tx: usize,
    pub n_rx: usize,
    pub layout: ArrayLayout,
    /// Inter-element spacing in wavelengths.
    pub element_spacing: f64,
}

impl Default for ArrayGeometry {
    /// 16 base-station (transmit) and 8 user (receive) antennas.
    fn default() -> Self {
        Self {
            n_tx: 16,
            n_rx: 8,
            layout: ArrayLayout::Linear,
            element_spacing: 0.5,
        }
    }
}

impl ArrayGeometry {
    pub fn validate(&self) -> Result<()> {
        if self.n_tx == 0 || self.n_rx == 0 {
            return Err(Error::Config("antenna counts must be at least 1".into()));
        }
        if !(self.element_spacing > 0.0) {
            return Err(Error::Config("element spacing must be positive".into()));
        }
        if let ArrayLayout::Planar { columns } = self.layout {
            if columns == 0 {
                return Err(Error::Config("planar layout needs at least one column".into()));
            }
        }
        Ok(())
    }

    pub fn n_pairs(&self) -> usize {
        self.n_tx * self.n_rx
    }

    fn count(&self, side: ArraySide) -> usize {
        match side {
            ArraySide::Tx => self.n_tx,
            ArraySide::Rx => self.n_rx,
        }
    }
}

/// Unit-modulus response of one side of the array toward (`az`, `el`).
///
/// Element `n` of a linear array gets phase `2π·d·n·sin(az)·cos(el)`.
pub fn array_response(geometry: &ArrayGeometry, az: f64, el: f64, side: ArraySide) -> Vec<Complex64> {
    let n = geometry.count(side);
    let d = geometry.element_spacing;
    let u = az.sin() * el.cos();
    let v = el.sin();
    (0..n)
        .map(|i| {
            let phase = match geometry.layout {
                ArrayLayout::Linear => TAU * d * i as f64 * u,
                ArrayLayout::Planar { columns } => {
                    let (row, col) = (i / columns, i % columns);
                    TAU * d * (col as f64 * u + row as f64 * v)
                }
            };
            Complex64::from_polar(1.0, phase)
        })
        .collect()
}

/// One propagation path.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Path {
    /// Linear amplitude gain.
    pub amplitude: f64,
    /// Radians in `[0, 2π)`.
    pub phase: f64,
    /// Seconds.
    pub delay: f64,
    pub aoa_az: f64,
    pub aoa_el: f64,
    pub aod_az: f64,
    pub aod_el: f64,
}

/// Per-antenna-pair perturbations of every path, indexed `[(m·n_tx + k)·L + l]`.
#[derive(Clone, Debug, PartialEq)]
pub struct PairJitter {
    pub n_rx: usize,
    pub n_tx: usize,
    /// Multiplicative amplitude factors.
    pub amplitude: Vec<f64>,
    /// Additive phase offsets (radians).
    pub phase: Vec<f64>,
    /// Additive delay offsets (seconds).
    pub delay: Vec<f64>,
}

/// The paths shared by all antenna pairs of one channel realization.
#[derive(Clone, Debug, PartialEq)]
pub struct PathSet {
    pub paths: Vec<Path>,
    pub jitter: Option<PairJitter>,
}

impl PathSet {
    pub fn new(paths: Vec<Path>) -> Self {
        Self { paths, jitter: None }
    }

    pub fn len(&self) -> usize {
        self.paths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.paths.is_empty()
    }

    /// The paths as seen by antenna pair `(m, k)`, perturbations applied.
    pub fn pair_paths(&self, m: usize, k: usize) -> Vec<Path> {
        let Some(j) = &self.jitter else {
            return self.paths.clone();
        };
        let l = self.paths.len();
        let base = (m * j.n_tx + k) * l;
        self.paths
            .iter()
            .enumerate()
            .map(|(i, p)| Path {
                amplitude: p.amplitude * j.amplitude[base + i],
                phase: (p.phase + j.phase[base + i]).rem_euclid(TAU),
                delay: (p.delay + j.delay[base + i]).max(0.0),
                ..*p
            })
            .collect()
    }

    /// Multiplies every amplitude by `factor`.
    pub fn scale_amplitudes(&mut self, factor: f64) {
        for p in &mut self.paths {
            p.amplitude *= factor;
        }
    }

    pub fn total_power(&self) -> f64 {
        self.paths.iter().map(|p| p.amplitude * p.amplitude).sum()
    }

    pub fn max_delay(&self) -> f64 {
        let jit = self
            .jitter
            .as_ref()
            .map_or(0.0, |j| j.delay.iter().fold(0.0_f64, |a, d| a.max(*d)));
        self.paths.iter().fold(0.0_f64, |a, p| a.max(p.delay)) + jit
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CarrierConfig {
    /// Hz.
    pub center_frequency: f64,
    pub n_subcarriers: usize,
    /// Hz.
    pub subcarrier_spacing: f64,
    /// Nominal system bandwidth in Hz. Stored independently of
    /// `n_subcarriers × subcarrier_spacing`; the two need not agree.
    pub bandwidth: f64,
}

impl Default for CarrierConfig {
    fn default() -> Self {
        Self::preset_3p5ghz()
    }
}

impl CarrierConfig {
    pub fn preset_3p5ghz() -> Self {
        Self {
            center_frequency: 3.5e9,
            n_subcarriers: 200,
            subcarrier_spacing: 60e3,
            bandwidth: 160e6,
        }
    }

    pub fn preset_5p9ghz() -> Self {
        Self {
            center_frequency: 5.9e9,
            ..Self::preset_3p5ghz()
        }
    }

    pub fn preset_28ghz() -> Self {
        Self {
            center_frequency: 28e9,
            ..Self::preset_3p5ghz()
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "3.5ghz" | "3p5ghz" => Ok(Self::preset_3p5ghz()),
            "5.9ghz" | "5p9ghz" => Ok(Self::preset_5p9ghz()),
            "28ghz" => Ok(Self::preset_28ghz()),
            other => Err(Error::Config(format!("unknown carrier preset {other:?}"))),
        }
    }

    pub fn with_subcarriers(mut self, n: usize) -> Self {
        self.n_subcarriers = n;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_subcarriers == 0 {
            return Err(Error::Config("need at least one subcarrier".into()));
        }
        if !(self.subcarrier_spacing > 0.0) || !(self.center_frequency > 0.0) {
            return Err(Error::Config("carrier frequencies must be positive".into()));
        }
        Ok(())
    }

    /// Occupied bandwidth `n_subcarriers × subcarrier_spacing`.
    pub fn effective_bandwidth(&self) -> f64 {
        self.n_subcarriers as f64 * self.subcarrier_spacing
    }

    /// Baseband offset of subcarrier `n` from the carrier, centred on zero.
    pub fn subcarrier_frequency(&self, n: usize) -> f64 {
        (n as f64 - (self.n_subcarriers / 2) as f64) * self.subcarrier_spacing
    }
}

/// Per-pair perturbation magnitudes (standard deviations).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct JitterConfig {
    pub amplitude_db: f64,
    pub phase_rad: f64,
    pub delay_s: f64,
}

impl Default for JitterConfig {
    fn default() -> Self {
        Self {
            amplitude_db: 0.5,
            phase_rad: 0.05,
            delay_s: 0.2e-9,
        }
    }
}

impl JitterConfig {
    pub fn none() -> Self {
        Self {
            amplitude_db: 0.0,
            phase_rad: 0.0,
            delay_s: 0.0,
        }
    }

    fn is_zero(&self) -> bool {
        self.amplitude_db == 0.0 && self.phase_rad == 0.0 && self.delay_s == 0.0
    }
}

/// Statistical prior of the parametric path generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub n_paths: usize,
    pub max_paths: usize,
    /// Range of the earliest arrival, seconds.
    pub first_delay: (f64, f64),
    /// Mean excess delay of later paths, seconds.
    pub delay_spread: f64,
    /// Excess delays are truncated to this value, seconds.
    pub max_excess_delay: f64,
    /// Amplitudes decay as `exp(-decay_exponent · excess / delay_spread)`.
    pub decay_exponent: f64,
    /// Log-normal per-path amplitude spread, dB.
    pub amplitude_jitter_db: f64,
    /// Large-scale gain drawn uniformly in dB; total path power equals it.
    pub gain_db: (f64, f64),
    pub aoa_az: (f64, f64),
    pub aoa_el: (f64, f64),
    pub aod_az: (f64, f64),
    pub aod_el: (f64, f64),
    /// Standard deviation (radians) of path angles around the per-realization
    /// mean direction.
    pub angular_spread: f64,
    pub pair_jitter: JitterConfig,
    /// Frequency at which `gain_db` applies; other carriers are attenuated
    /// by `(reference / f)^carrier_loss_exponent` in amplitude.
    pub reference_frequency: f64,
    pub carrier_loss_exponent: f64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            n_paths: 10,
            max_paths: 32,
            first_delay: (20e-9, 120e-9),
            delay_spread: 60e-9,
            max_excess_delay: 250e-9,
            decay_exponent: 1.0,
            amplitude_jitter_db: 2.0,
            gain_db: (-3.0, 3.0),
            aoa_az: (-PI / 3.0, PI / 3.0),
            aoa_el: (-PI / 12.0, PI / 12.0),
            aod_az: (-PI / 3.0, PI / 3.0),
            aod_el: (-PI / 12.0, PI / 12.0),
            angular_spread: 0.15,
            pair_jitter: JitterConfig::default(),
            reference_frequency: 3.5e9,
            carrier_loss_exponent: 1.0,
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_paths == 0 {
            return Err(Error::Config("path count must be at least 1".into()));
        }
        if self.n_paths > self.max_paths {
            return Err(Error::Config(format!(
                "path count {} exceeds maximum {}",
                self.n_paths, self.max_paths
            )));
        }
        if self.first_delay.0 < 0.0 || self.first_delay.1 < self.first_delay.0 {
            return Err(Error::Config("invalid first-delay range".into()));
        }
        if !(self.delay_spread > 0.0) || self.max_excess_delay < 0.0 {
            return Err(Error::Config("delay spread must be positive".into()));
        }
        for (lo, hi) in [self.aoa_az, self.aoa_el, self.aod_az, self.aod_el, self.gain_db] {
            if hi < lo {
                return Err(Error::Config("empty range in scenario".into()));
            }
        }
        Ok(())
    }

    /// Amplitude factor applied to paths at carrier `frequency`.
    pub fn carrier_gain(&self, frequency: f64) -> f64 {
        (self.reference_frequency / frequency).powf(self.carrier_loss_exponent)
    }

    /// Worst-case path delay this prior can produce, jitter included.
    pub fn max_delay(&self) -> f64 {
        self.first_delay.1 + self.max_excess_delay + 6.0 * self.pair_jitter.delay_s
    }
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

/// Draws one channel realization from `scenario`, including per-pair
/// jitter for a `n_rx × n_tx` array.
///
/// Paths come back sorted by amplitude, strongest first.
pub fn sample_paths<R: Rng + ?Sized>(
    scenario: &ScenarioConfig,
    n_rx: usize,
    n_tx: usize,
    rng: &mut R,
) -> Result<PathSet> {
    scenario.validate()?;
    let l = scenario.n_paths;
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");

    let first = uniform(rng, scenario.first_delay);
    let s = scenario.delay_spread;
    let cap = scenario.max_excess_delay;
    // Truncated exponential excess delays, earliest first.
    let mut excess: Vec<f64> = std::iter::once(0.0)
        .chain((1..l).map(|_| {
            let u: f64 = rng.random();
            -s * (1.0 - u * (1.0 - (-cap / s).exp())).ln()
        }))
        .collect();
    excess[1..].sort_by(f64::total_cmp);

    let mut amps: Vec<f64> = excess
        .iter()
        .map(|x| {
            let shadow_db = scenario.amplitude_jitter_db * std_normal.sample(rng);
            (-scenario.decay_exponent * x / s).exp() * 10f64.powf(shadow_db / 20.0)
        })
        .collect();
    let gain = 10f64.powf(uniform(rng, scenario.gain_db) / 10.0);
    let norm = (gain / amps.iter().map(|a| a * a).sum::<f64>()).sqrt();
    amps.iter_mut().for_each(|a| *a *= norm);

    let centre = [
        uniform(rng, scenario.aoa_az),
        uniform(rng, scenario.aoa_el),
        uniform(rng, scenario.aod_az),
        uniform(rng, scenario.aod_el),
    ];
    let spread = |rng: &mut R, c: f64, (lo, hi): (f64, f64)| {
        (c + scenario.angular_spread * std_normal.sample(rng)).clamp(lo.min(c), hi.max(c))
    };

    let mut paths: Vec<Path> = excess
        .iter()
        .zip(&amps)
        .enumerate()
        .map(|(i, (&x, &a))| {
            let phase = rng.random_range(0.0..TAU);
            let (aoa_az, aoa_el, aod_az, aod_el) = if i == 0 {
                (centre[0], centre[1], centre[2], centre[3])
            } else {
                (
                    spread(rng, centre[0], scenario.aoa_az),
                    spread(rng, centre[1], scenario.aoa_el),
                    spread(rng, centre[2], scenario.aod_az),
                    spread(rng, centre[3], scenario.aod_el),
                )
            };
            Path {
                amplitude: a,
                phase,
                delay: first + x,
                aoa_az,
                aoa_el,
                aod_az,
                aod_el,
            }
        })
        .collect();
    paths.sort_by(|a, b| b.amplitude.total_cmp(&a.amplitude));

    let jc = scenario.pair_jitter;
    let jitter = if jc.is_zero() {
        None
    } else {
        let n = n_rx * n_tx * l;
        let mut draw = |std: f64| -> Vec<f64> { (0..n).map(|_| std * std_normal.sample(rng)).collect() };
        let amplitude = draw(jc.amplitude_db).into_iter().map(|db| 10f64.powf(db / 20.0)).collect();
        let phase = draw(jc.phase_rad);
        let delay = draw(jc.delay_s)
            .into_iter()
            .map(|d| d.clamp(-6.0 * jc.delay_s, 6.0 * jc.delay_s))
            .collect();
        Some(PairJitter {
            n_rx,
            n_tx,
            amplitude,
            phase,
            delay,
        })
    };
    Ok(PathSet { paths, jitter })
}

/// Complex CSI over `(n_rx, n_tx, n_subcarriers)`, stored as two real planes
/// indexed `[(m·n_tx + k)·n_sc + n]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelMatrix {
    pub n_rx: usize,
    pub n_tx: usize,
    pub n_subcarriers: usize,
    pub re: Vec<f64>,
    pub im: Vec<f64>,
}

impl ChannelMatrix {
    pub fn zeros(n_rx: usize, n_tx: usize, n_subcarriers: usize) -> Self {
        let n = n_rx * n_tx * n_subcarriers;
        Self {
            n_rx,
            n_tx,
            n_subcarriers,
            re: vec![0.0; n],
            im: vec![0.0; n],
        }
    }

    fn idx(&self, m: usize, k: usize, n: usize) -> usize {
        (m * self.n_tx + k) * self.n_subcarriers + n
    }

    pub fn get(&self, m: usize, k: usize, n: usize) -> Complex64 {
        let i = self.idx(m, k, n);
        Complex64::new(self.re[i], self.im[i])
    }

    pub fn set(&mut self, m: usize, k: usize, n: usize, v: Complex64) {
        let i = self.idx(m, k, n);
        self.re[i] = v.re;
        self.im[i] = v.im;
    }

    /// One pair's CSI across subcarriers as `[re_0..re_{N-1}, im_0..im_{N-1}]`.
    pub fn pair_vector(&self, m: usize, k: usize) -> Vec<f64> {
        let s = self.idx(m, k, 0);
        let n = self.n_subcarriers;
        let mut v = Vec::with_capacity(2 * n);
        v.extend_from_slice(&self.re[s..s + n]);
        v.extend_from_slice(&self.im[s..s + n]);
        v
    }

    /// One subcarrier as a `[2, n_rx, n_tx]` real/imaginary grid.
    pub fn subcarrier_slice(&self, n: usize) -> Vec<f64> {
        let pairs = self.n_rx * self.n_tx;
        let mut out = vec![0.0; 2 * pairs];
        for p in 0..pairs {
            out[p] = self.re[p * self.n_subcarriers + n];
            out[pairs + p] = self.im[p * self.n_subcarriers + n];
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.re.iter().chain(&self.im).all(|v| v.is_finite())
    }

    pub fn energy(&self) -> f64 {
        self.re.iter().chain(&self.im).map(|v| v * v).sum()
    }
}

/// Superimposes every path on every antenna pair and subcarrier.
pub fn synthesize_csi(paths: &PathSet, geometry: &ArrayGeometry, carrier: &CarrierConfig) -> Result<ChannelMatrix> {
    geometry.validate()?;
    carrier.validate()?;
    if let Some(j) = &paths.jitter {
        if j.n_rx != geometry.n_rx || j.n_tx != geometry.n_tx {
            return Err(Error::shape(
                "synthesize_csi",
                &[j.n_rx, j.n_tx],
                &[geometry.n_rx, geometry.n_tx],
            ));
        }
    }
    let rx: Vec<Vec<Complex64>> = paths
        .paths
        .iter()
        .map(|p| array_response(geometry, p.aoa_az, p.aoa_el, ArraySide::Rx))
        .collect();
    let tx: Vec<Vec<Complex64>> = paths
        .paths
        .iter()
        .map(|p| array_response(geometry, p.aod_az, p.aod_el, ArraySide::Tx))
        .collect();
    let freqs: Vec<f64> = (0..carrier.n_subcarriers).map(|n| carrier.subcarrier_frequency(n)).collect();

    let mut h = ChannelMatrix::zeros(geometry.n_rx, geometry.n_tx, carrier.n_subcarriers);
    for m in 0..geometry.n_rx {
        for k in 0..geometry.n_tx {
            let base = h.idx(m, k, 0);
            for (l, p) in paths.pair_paths(m, k).iter().enumerate() {
                let c = Complex64::from_polar(p.amplitude, p.phase) * rx[l][m] * tx[l][k].conj();
                for (n, f) in freqs.iter().enumerate() {
                    let v = c * Complex64::from_polar(1.0, -TAU * f * p.delay);
                    h.re[base + n] += v.re;
                    h.im[base + n] += v.im;
                }
            }
        }
    }
    Ok(h)
}

/// Delay-axis discretization of a power delay profile.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PdpBinning {
    pub n_bins: usize,
    /// Seconds.
    pub bin_width: f64,
}

impl Default for PdpBinning {
    /// 64 bins at the 6.25 ns resolution of a 160 MHz channel.
    fn default() -> Self {
        Self {
            n_bins: 64,
            bin_width: 1.0 / 160e6,
        }
    }
}

impl PdpBinning {
    pub fn window(&self) -> f64 {
        self.n_bins as f64 * self.bin_width
    }
}

/// Accumulates `α²` of each path into the bin containing its delay.
pub fn ground_truth_pdp(paths: &[Path], binning: PdpBinning) -> Result<PowerDelayProfile> {
    if !(binning.bin_width > 0.0) || binning.n_bins == 0 {
        return Err(Error::Config("PDP binning needs positive width and bins".into()));
    }
    let mut bins = vec![0.0; binning.n_bins];
    for (i, p) in paths.iter().enumerate() {
        let b = (p.delay / binning.bin_width).floor();
        if !(p.delay >= 0.0) || b >= binning.n_bins as f64 {
            return Err(Error::DelayOutOfRange {
                path: i,
                delay: p.delay,
                window: binning.window(),
            });
        }
        bins[b as usize] += p.amplitude * p.amplitude;
    }
    PowerDelayProfile::new(bins, binning.bin_width)
}

/// Ground-truth PDP of every antenna pair, row-major over `(m, k)`.
pub fn pair_pdps(paths: &PathSet, geometry: &ArrayGeometry, binning: PdpBinning) -> Result<Vec<PowerDelayProfile>> {
    let mut out = Vec::with_capacity(geometry.n_pairs());
    for m in 0..geometry.n_rx {
        for k in 0..geometry.n_tx {
            out.push(ground_truth_pdp(&paths.pair_paths(m, k), binning)?);
        }
    }
    Ok(out)
}

/// Wraps a phase into `[0, 2π)`.
pub fn wrap_phase(x: f64) -> f64 {
    x.rem_euclid(TAU)
}
