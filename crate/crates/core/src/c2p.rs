//! CSI-to-PDP auto-encoder.
//!
//! The encoder maps a power delay profile to a vector shaped like one
//! antenna pair's CSI; the decoder maps that vector back to the PDP. The
//! joint loss pulls the latent toward the true CSI, so after training the
//! decoder alone turns measured CSI into a PDP estimate.

use crate::error::{Error, Result};
use crate::nn::Linear;
use crate::tensor::{GradTape, ParamStore, Tensor, Var};
use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Received power per delay bin; bin `i` sits at delay `i·bin_width`.
#[derive(Clone, Debug, PartialEq)]
pub struct PowerDelayProfile {
    pub bins: Vec<f64>,
    pub bin_width: f64,
}

impl PowerDelayProfile {
    pub fn new(bins: Vec<f64>, bin_width: f64) -> Result<Self> {
        if bins.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(Error::Contract("PDP bins must be finite and nonnegative".into()));
        }
        Ok(Self { bins, bin_width })
    }

    pub fn len(&self) -> usize {
        self.bins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bins.is_empty()
    }

    pub fn delay(&self, i: usize) -> f64 {
        i as f64 * self.bin_width
    }

    pub fn total_power(&self) -> f64 {
        self.bins.iter().sum()
    }
}

/// Log compression `y = ln(1 + p/p₀)` applied to PDP bins before the loss.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PdpCompression {
    pub reference_power: f64,
}

impl PdpCompression {
    pub fn forward(&self, p: f64) -> f64 {
        (p / self.reference_power).ln_1p()
    }

    pub fn inverse(&self, y: f64) -> f64 {
        self.reference_power * y.exp_m1()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct C2pConfig {
    pub n_bins: usize,
    /// Latent width: `2 × n_subcarriers` (real parts, then imaginary parts).
    pub csi_dim: usize,
    pub hidden: usize,
    pub bin_width: f64,
    pub compression: PdpCompression,
}

impl C2pConfig {
    pub fn new(n_bins: usize, n_subcarriers: usize, bin_width: f64) -> Self {
        Self {
            n_bins,
            csi_dim: 2 * n_subcarriers,
            hidden: 512,
            bin_width,
            compression: PdpCompression { reference_power: 1e-3 },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_bins == 0 || self.csi_dim == 0 || self.hidden == 0 {
            return Err(Error::Config("C2P dimensions must be positive".into()));
        }
        if !(self.compression.reference_power > 0.0) {
            return Err(Error::Config("PDP reference power must be positive".into()));
        }
        Ok(())
    }
}

/// One training pair: a PDP and the CSI vector it belongs to.
#[derive(Clone, Debug, PartialEq)]
pub struct C2pSample {
    pub pdp: PowerDelayProfile,
    pub csi: Vec<f64>,
}

/// Rotates one pair's CSI vector (`[re.., im..]`) by a common phase so its
/// subcarrier sum is real and positive.
///
/// A PDP is blind to a common phase rotation of its pair's CSI, so both
/// training and inference feed the auto-encoder this canonical form.
pub fn canonicalize_phase(csi: &[f64]) -> Vec<f64> {
    let n = csi.len() / 2;
    let (re, im) = csi.split_at(n);
    let s: Complex64 = re.iter().zip(im).map(|(&a, &b)| Complex64::new(a, b)).sum();
    if s.norm() <= f64::MIN_POSITIVE {
        return csi.to_vec();
    }
    let rot = s.conj() / s.norm();
    let mut out = vec![0.0; csi.len()];
    for i in 0..n {
        let v = Complex64::new(re[i], im[i]) * rot;
        out[i] = v.re;
        out[n + i] = v.im;
    }
    out
}

/// `(1/N) Σ_i (‖P_i − P̂_i‖² + ‖x_i − z_i‖²)` over already-compressed PDPs.
pub fn joint_objective(pdp: &[Vec<f64>], recon: &[Vec<f64>], csi: &[Vec<f64>], latent: &[Vec<f64>]) -> Result<f64> {
    let n = pdp.len();
    if n == 0 {
        return Err(Error::Empty);
    }
    if recon.len() != n || csi.len() != n || latent.len() != n {
        return Err(Error::shape("joint_objective", &[n], &[recon.len(), csi.len(), latent.len()]));
    }
    let sq = |a: &[f64], b: &[f64]| -> Result<f64> {
        if a.len() != b.len() {
            return Err(Error::shape("joint_objective", &[a.len()], &[b.len()]));
        }
        Ok(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum())
    };
    let mut total = 0.0;
    for i in 0..n {
        total += sq(&pdp[i], &recon[i])? + sq(&csi[i], &latent[i])?;
    }
    Ok(total / n as f64)
}

/// The auto-encoder: three fully-connected layers each way with GELU, and a
/// softplus head on the decoder.
#[derive(Clone, Debug)]
pub struct CsiToPdp {
    pub config: C2pConfig,
    pub params: ParamStore,
    encoder: [Linear; 3],
    decoder: [Linear; 3],
}

impl CsiToPdp {
    pub fn new<R: Rng + ?Sized>(config: C2pConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore::new();
        let (b, h, c) = (config.n_bins, config.hidden, config.csi_dim);
        let encoder = [
            Linear::new(&mut params, "encoder.0", b, h, true, rng),
            Linear::new(&mut params, "encoder.1", h, h, true, rng),
            Linear::new(&mut params, "encoder.2", h, c, true, rng),
        ];
        let decoder = [
            Linear::new(&mut params, "decoder.0", c, h, true, rng),
            Linear::new(&mut params, "decoder.1", h, h, true, rng),
            Linear::new(&mut params, "decoder.2", h, b, true, rng),
        ];
        Ok(Self {
            config,
            params,
            encoder,
            decoder,
        })
    }

    /// Rebuilds the layer handles around a loaded parameter store.
    pub fn from_params(config: C2pConfig, params: ParamStore) -> Result<Self> {
        config.validate()?;
        let find = |name: &str| {
            params
                .find(name)
                .ok_or_else(|| Error::Format(format!("checkpoint lacks parameter {name}")))
        };
        let dims = [
            (config.n_bins, config.hidden),
            (config.hidden, config.hidden),
            (config.hidden, config.csi_dim),
            (config.csi_dim, config.hidden),
            (config.hidden, config.hidden),
            (config.hidden, config.n_bins),
        ];
        let mut layers = Vec::with_capacity(6);
        for (i, (fan_in, fan_out)) in dims.into_iter().enumerate() {
            let prefix = if i < 3 {
                format!("encoder.{i}")
            } else {
                format!("decoder.{}", i - 3)
            };
            let weight = find(&format!("{prefix}.weight"))?;
            if params.value(weight).shape() != [fan_in, fan_out] {
                return Err(Error::shape("CsiToPdp::from_params", params.value(weight).shape(), &[fan_in, fan_out]));
            }
            layers.push(Linear {
                weight,
                bias: Some(find(&format!("{prefix}.bias"))?),
                fan_in,
                fan_out,
            });
        }
        Ok(Self {
            config,
            params,
            encoder: [layers[0], layers[1], layers[2]],
            decoder: [layers[3], layers[4], layers[5]],
        })
    }

    fn mlp(&self, tape: &mut GradTape, layers: &[Linear; 3], x: Var) -> Result<Var> {
        let mut h = layers[0].forward(tape, &self.params, x)?;
        h = tape.gelu(h);
        h = layers[1].forward(tape, &self.params, h)?;
        h = tape.gelu(h);
        layers[2].forward(tape, &self.params, h)
    }

    /// Encoder on a `[B, n_bins]` batch of compressed PDPs.
    pub fn encode_var(&self, tape: &mut GradTape, pdp: Var) -> Result<Var> {
        self.mlp(tape, &self.encoder, pdp)
    }

    /// Decoder on a `[B, csi_dim]` batch; output is compressed PDP bins.
    pub fn decode_var(&self, tape: &mut GradTape, latent: Var) -> Result<Var> {
        let y = self.mlp(tape, &self.decoder, latent)?;
        Ok(tape.softplus(y))
    }

    fn compress(&self, pdp: &PowerDelayProfile) -> Result<Vec<f64>> {
        if pdp.len() != self.config.n_bins {
            return Err(Error::shape("c2p", &[pdp.len()], &[self.config.n_bins]));
        }
        Ok(pdp.bins.iter().map(|&p| self.config.compression.forward(p)).collect())
    }

    fn stack(rows: &[Vec<f64>], width: usize, op: &'static str) -> Result<Tensor> {
        let mut data = Vec::with_capacity(rows.len() * width);
        for r in rows {
            if r.len() != width {
                return Err(Error::shape(op, &[r.len()], &[width]));
            }
            data.extend_from_slice(r);
        }
        Tensor::new(&[rows.len(), width], data)
    }

    /// PDP → CSI-shaped latent.
    pub fn encode(&self, pdp: &PowerDelayProfile) -> Result<Vec<f64>> {
        Ok(self.encode_batch(std::slice::from_ref(pdp))?.remove(0))
    }

    pub fn encode_batch(&self, pdps: &[PowerDelayProfile]) -> Result<Vec<Vec<f64>>> {
        let rows = pdps.iter().map(|p| self.compress(p)).collect::<Result<Vec<_>>>()?;
        let mut tape = GradTape::new();
        let x = tape.constant(Self::stack(&rows, self.config.n_bins, "c2p_encode")?);
        let z = self.encode_var(&mut tape, x)?;
        Ok(tape.value(z).data().chunks(self.config.csi_dim).map(<[f64]>::to_vec).collect())
    }

    /// Latent (or measured CSI) → PDP in linear power.
    pub fn decode(&self, latent: &[f64]) -> Result<PowerDelayProfile> {
        Ok(self.decode_batch(&[latent.to_vec()])?.remove(0))
    }

    pub fn decode_batch(&self, latents: &[Vec<f64>]) -> Result<Vec<PowerDelayProfile>> {
        if latents.is_empty() {
            return Ok(Vec::new());
        }
        let mut tape = GradTape::new();
        let z = tape.constant(Self::stack(latents, self.config.csi_dim, "c2p_decode")?);
        let y = self.decode_var(&mut tape, z)?;
        tape.value(y)
            .data()
            .chunks(self.config.n_bins)
            .map(|row| {
                let bins = row.iter().map(|&v| self.config.compression.inverse(v).max(0.0)).collect();
                PowerDelayProfile::new(bins, self.config.bin_width)
            })
            .collect()
    }

    /// Estimates a pair's PDP from its measured CSI vector (`[re.., im..]`).
    /// The vector is phase-canonicalized first.
    pub fn infer_pdp(&self, csi: &[f64]) -> Result<PowerDelayProfile> {
        self.decode(&canonicalize_phase(csi))
    }

    pub fn infer_pdp_batch(&self, csi: &[Vec<f64>]) -> Result<Vec<PowerDelayProfile>> {
        let canon: Vec<Vec<f64>> = csi.iter().map(|c| canonicalize_phase(c)).collect();
        self.decode_batch(&canon)
    }

    /// Records the joint loss of a batch on `tape`.
    pub fn loss_var(&self, tape: &mut GradTape, batch: &[C2pSample]) -> Result<Var> {
        if batch.is_empty() {
            return Err(Error::Empty);
        }
        let pdp_rows = batch.iter().map(|s| self.compress(&s.pdp)).collect::<Result<Vec<_>>>()?;
        let csi_rows: Vec<Vec<f64>> = batch.iter().map(|s| s.csi.clone()).collect();
        let p = tape.constant(Self::stack(&pdp_rows, self.config.n_bins, "c2p_loss")?);
        let x = tape.constant(Self::stack(&csi_rows, self.config.csi_dim, "c2p_loss")?);
        let z = self.encode_var(tape, p)?;
        let p_hat = self.decode_var(tape, z)?;
        let dp = tape.sub(p, p_hat)?;
        let dz = tape.sub(x, z)?;
        let dp2 = tape.mul(dp, dp)?;
        let dz2 = tape.mul(dz, dz)?;
        let a = tape.sum(dp2);
        let b = tape.sum(dz2);
        let total = tape.add(a, b)?;
        Ok(tape.scale(total, 1.0 / batch.len() as f64))
    }

    /// Joint loss of a batch, evaluated without gradients.
    pub fn loss(&self, batch: &[C2pSample]) -> Result<f64> {
        let mut tape = GradTape::new();
        let l = self.loss_var(&mut tape, batch)?;
        Ok(tape.value(l).item())
    }

    pub fn compressed(&self, pdp: &PowerDelayProfile) -> Result<Vec<f64>> {
        self.compress(pdp)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny() -> CsiToPdp {
        let mut cfg = C2pConfig::new(16, 8, 6.25e-9);
        cfg.hidden = 24;
        CsiToPdp::new(cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap()
    }

    fn random_pdp(rng: &mut ChaCha8Rng, n: usize) -> PowerDelayProfile {
        let bins = (0..n).map(|_| if rng.random_bool(0.3) { rng.random::<f64>() } else { 0.0 }).collect();
        PowerDelayProfile::new(bins, 6.25e-9).unwrap()
    }

    #[test]
    fn latent_has_csi_width() {
        let m = tiny();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let z = m.encode(&random_pdp(&mut rng, 16)).unwrap();
        assert_eq!(z.len(), 2 * 8);
        assert_eq!(m.config.csi_dim, 16);
    }

    #[test]
    fn encode_is_deterministic() {
        let m = tiny();
        let p = random_pdp(&mut ChaCha8Rng::seed_from_u64(3), 16);
        assert_eq!(m.encode(&p).unwrap(), m.encode(&p).unwrap());
    }

    #[test]
    fn decoder_output_is_nonnegative_with_right_length() {
        let m = tiny();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let z: Vec<f64> = (0..16).map(|_| rng.random_range(-50.0..50.0)).collect();
            let p = m.decode(&z).unwrap();
            assert_eq!(p.len(), 16);
            assert!(p.bins.iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn infer_ignores_common_phase() {
        let m = tiny();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let z: Vec<f64> = (0..16).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (c, s) = (0.3f64.cos(), 0.3f64.sin());
        let mut rotated = z.clone();
        for i in 0..8 {
            rotated[i] = z[i] * c - z[8 + i] * s;
            rotated[8 + i] = z[i] * s + z[8 + i] * c;
        }
        let a = m.infer_pdp(&z).unwrap();
        let b = m.infer_pdp(&rotated).unwrap();
        for (x, y) in a.bins.iter().zip(&b.bins) {
            assert!((x - y).abs() < 1e-9 * x.max(1e-6));
        }
        assert_eq!(a, m.decode(&canonicalize_phase(&z)).unwrap());
    }

    #[test]
    fn shape_mismatches_are_rejected() {
        let m = tiny();
        assert!(m.decode(&[0.0; 3]).is_err());
        let p = PowerDelayProfile::new(vec![1.0; 5], 1e-9).unwrap();
        assert!(m.encode(&p).is_err());
    }

    #[test]
    fn objective_zero_when_exact() {
        let p = vec![vec![0.5, 1.0]];
        let x = vec![vec![1.0, -2.0, 3.0]];
        assert_eq!(joint_objective(&p, &p, &x, &x).unwrap(), 0.0);
    }

    #[test]
    fn objective_counts_unit_latent_offsets() {
        let p = vec![vec![0.5, 1.0]];
        let x = vec![vec![1.0, -2.0, 3.0, 0.25]];
        let z = vec![x[0].iter().map(|v| v + 1.0).collect()];
        assert_eq!(joint_objective(&p, &p, &x, &z).unwrap(), 4.0);
    }

    #[test]
    fn objective_rejects_empty_batch() {
        assert!(matches!(joint_objective(&[], &[], &[], &[]), Err(Error::Empty)));
        assert!(matches!(tiny().loss(&[]), Err(Error::Empty)));
    }

    #[test]
    fn model_loss_matches_objective_and_is_nonnegative() {
        let m = tiny();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let batch: Vec<C2pSample> = (0..4)
            .map(|_| C2pSample {
                pdp: random_pdp(&mut rng, 16),
                csi: (0..16).map(|_| rng.random_range(-1.0..1.0)).collect(),
            })
            .collect();
        let pdps: Vec<Vec<f64>> = batch.iter().map(|s| m.compressed(&s.pdp).unwrap()).collect();
        let latents = m.encode_batch(&batch.iter().map(|s| s.pdp.clone()).collect::<Vec<_>>()).unwrap();
        let mut tape = GradTape::new();
        let z = tape.constant(CsiToPdp::stack(&latents, 16, "t").unwrap());
        let y = m.decode_var(&mut tape, z).unwrap();
        let recon: Vec<Vec<f64>> = tape.value(y).data().chunks(16).map(<[f64]>::to_vec).collect();
        let csi: Vec<Vec<f64>> = batch.iter().map(|s| s.csi.clone()).collect();
        let expected = joint_objective(&pdps, &recon, &csi, &latents).unwrap();
        let got = m.loss(&batch).unwrap();
        assert!((got - expected).abs() < 1e-10 * expected.max(1.0));
        assert!(got >= 0.0);
    }

    #[test]
    fn canonical_phase_is_rotation_with_real_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let v: Vec<f64> = (0..10).map(|_| rng.random_range(-1.0..1.0)).collect();
        let c = canonicalize_phase(&v);
        let n = 5;
        let sum_im: f64 = c[n..].iter().sum();
        let sum_re: f64 = c[..n].iter().sum();
        assert!(sum_im.abs() < 1e-12 && sum_re > 0.0);
        for i in 0..n {
            let a = v[i].hypot(v[n + i]);
            let b = c[i].hypot(c[n + i]);
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn compression_round_trips() {
        let c = PdpCompression { reference_power: 1e-3 };
        for p in [0.0, 1e-6, 0.3, 12.0] {
            assert!((c.inverse(c.forward(p)) - p).abs() <= 1e-12 * p.max(1.0));
        }
    }
}
