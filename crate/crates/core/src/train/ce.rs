use super::{check_finite, Adam, AdamConfig, EpochRecord, History, ScheduleConfig};
use crate::c2p::CsiToPdp;
use crate::dataset::Sample;
use crate::error::{Error, Result};
use crate::features::{build_variant, zscore_fit, FeatureCase, NormStats};
use crate::masking::{make_mask_plans, MaskPlan};
use crate::model::{patch_of, Batch, Extrapolator, ExtrapolatorConfig, Mode};
use crate::tensor::{GradTape, Tensor};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CeTrainConfig {
    pub batch_size: usize,
    pub schedule: ScheduleConfig,
    pub optimizer: AdamConfig,
    /// Each batch masks with one ratio drawn from this list.
    pub mask_ratios: Vec<f64>,
    pub test_fraction: f64,
    /// Subcarriers drawn per training realization and epoch.
    pub subcarriers_per_sample: usize,
    /// Subcarriers per held-out realization in the per-epoch test loss.
    pub test_subcarriers: usize,
    /// Derive multipath features from ground-truth PDPs instead of the
    /// CSI-to-PDP decoder.
    pub bypass_c2p: bool,
}

impl Default for CeTrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 100,
            schedule: ScheduleConfig::default(),
            optimizer: AdamConfig::adamw(),
            mask_ratios: vec![0.75, 0.8, 0.85, 0.9, 0.95],
            test_fraction: 0.1,
            subcarriers_per_sample: 1,
            test_subcarriers: 4,
            bypass_c2p: false,
        }
    }
}

impl CeTrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.schedule.validate()?;
        self.optimizer.validate()?;
        if self.batch_size == 0 || self.subcarriers_per_sample == 0 {
            return Err(Error::Config("batch size and subcarriers per sample must be positive".into()));
        }
        if self.mask_ratios.is_empty() || self.mask_ratios.iter().any(|r| !(0.0..1.0).contains(r)) {
            return Err(Error::Config("mask ratios must be a non-empty list in [0, 1)".into()));
        }
        if !(0.0..1.0).contains(&self.test_fraction) {
            return Err(Error::Config("test fraction must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

/// Where per-pair PDPs come from when building multipath features.
#[derive(Clone, Copy, Debug)]
pub enum FeatureSource<'a> {
    /// Decoded from each pair's measured CSI.
    Inferred(&'a CsiToPdp),
    GroundTruth,
}

/// Raw (unnormalized) multipath features, one `[C, n_rx, n_tx]` block per
/// realization.
#[derive(Clone, Debug, PartialEq)]
pub struct Features {
    pub case: FeatureCase,
    pub channels: usize,
    pub data: Vec<Vec<f64>>,
}

pub fn multipath_features(samples: &[Sample], case: FeatureCase, source: FeatureSource<'_>) -> Result<Features> {
    // averaging happens per mask plan, over known pairs only
    let base = if case == FeatureCase::Average {
        FeatureCase::Proposed
    } else {
        case
    };
    let mut data = Vec::with_capacity(samples.len());
    for s in samples {
        let (n_rx, n_tx) = (s.csi.n_rx, s.csi.n_tx);
        let inferred;
        let pdps = match source {
            FeatureSource::GroundTruth => {
                if s.pdps.len() != n_rx * n_tx {
                    return Err(Error::Contract("ground-truth features need PDPs for every pair".into()));
                }
                &s.pdps
            }
            FeatureSource::Inferred(c2p) => {
                let vectors: Vec<Vec<f64>> = (0..n_rx * n_tx).map(|p| s.csi.pair_vector(p / n_tx, p % n_tx)).collect();
                inferred = c2p.infer_pdp_batch(&vectors)?;
                &inferred
            }
        };
        data.push(build_variant(pdps, n_rx, n_tx, base)?.data);
    }
    Ok(Features {
        case,
        channels: case.channels(),
        data,
    })
}

/// Realizations plus their features (absent for the baseline).
#[derive(Clone, Copy, Debug)]
pub struct CeData<'a> {
    pub samples: &'a [Sample],
    pub features: Option<&'a Features>,
}

/// `(realization, subcarrier)` pairs and mask plans fixed in advance.
#[derive(Clone, Debug, PartialEq)]
pub struct FixedEval {
    pub items: Vec<(usize, usize)>,
    pub plans: Vec<MaskPlan>,
}

impl FixedEval {
    /// `per_sample` evenly spaced subcarriers of every realization, masked
    /// at `rho` with plans drawn from `seed`.
    pub fn new(n_samples: usize, n_subcarriers: usize, per_sample: usize, tokens: usize, rho: f64, seed: u64) -> Result<Self> {
        let per = per_sample.clamp(1, n_subcarriers.max(1));
        let items: Vec<(usize, usize)> = (0..n_samples)
            .flat_map(|i| (0..per).map(move |j| (i, j * n_subcarriers / per)))
            .collect();
        let plans = make_mask_plans(items.len(), tokens, rho, &mut ChaCha8Rng::seed_from_u64(seed))?;
        Ok(Self { items, plans })
    }
}

/// Raw `[B, 2, n_rx, n_tx]` CSI and `[B, C, n_rx, n_tx]` multipath inputs for
/// the given `(realization, subcarrier)` items.
pub fn gather_inputs(
    config: &ExtrapolatorConfig,
    data: CeData<'_>,
    items: &[(usize, usize)],
    plans: &[MaskPlan],
) -> Result<(Tensor, Tensor)> {
    let (m, k) = (config.n_rx, config.n_tx);
    let cells = m * k;
    let b = items.len();
    let mut csi = Vec::with_capacity(b * 2 * cells);
    for &(i, n) in items {
        let s = data.samples.get(i).ok_or(Error::Index {
            index: i,
            len: data.samples.len(),
        })?;
        if s.csi.n_rx != m || s.csi.n_tx != k || n >= s.csi.n_subcarriers {
            return Err(Error::shape("gather_inputs", &[s.csi.n_rx, s.csi.n_tx, n], &[m, k, s.csi.n_subcarriers]));
        }
        csi.extend(s.csi.subcarrier_slice(n));
    }
    let csi = Tensor::new(&[b, 2, m, k], csi)?;
    let c = config.mp_channels();
    let mp = match (data.features, config.fusion.uses_multipath()) {
        (_, false) => Tensor::zeros(&[b, c, m, k]),
        (None, true) => return Err(Error::Contract("multipath fusion needs features".into())),
        (Some(f), true) => {
            if f.channels != c || f.case != config.feature_case || f.data.len() != data.samples.len() {
                return Err(Error::Contract(format!(
                    "features are {} with {} channels for {} realizations; model wants {} with {c}",
                    f.case,
                    f.channels,
                    f.data.len(),
                    config.feature_case
                )));
            }
            let mut out = Vec::with_capacity(b * c * cells);
            for (&(i, _), plan) in items.iter().zip(plans) {
                let mut block = f.data[i].clone();
                if f.case == FeatureCase::Average {
                    average_over_known(&mut block, plan, config);
                }
                out.extend(block);
            }
            Tensor::new(&[b, c, m, k], out)?
        }
    };
    Ok((csi, mp))
}

/// Replaces every plane by its mean over cells in unmasked patches.
fn average_over_known(block: &mut [f64], plan: &MaskPlan, config: &ExtrapolatorConfig) {
    let (m, k) = (config.n_rx, config.n_tx);
    for plane in block.chunks_mut(m * k) {
        let (mut sum, mut count) = (0.0, 0usize);
        for r in 0..m {
            for c in 0..k {
                if !plan.is_masked(patch_of(r, c, config.patch, k)) {
                    sum += plane[r * k + c];
                    count += 1;
                }
            }
        }
        plane.fill(sum / count.max(1) as f64);
    }
}

/// Normalized model batch for the given items.
pub fn build_batch(model: &Extrapolator, data: CeData<'_>, items: &[(usize, usize)], plans: Vec<MaskPlan>) -> Result<Batch> {
    let (csi, mp) = gather_inputs(&model.config, data, items, &plans)?;
    model.normalize(&csi, &mp, plans)
}

/// Fits the CSI statistics (one group) and the multipath statistics (one
/// group per channel) on the training split.
fn fit_stats(model: &mut Extrapolator, data: CeData<'_>) -> Result<()> {
    let csi = data.samples.iter().flat_map(|s| [s.csi.re.as_slice(), s.csi.im.as_slice()]);
    model.csi_stats = zscore_fit(csi, 1, NormStats::DEFAULT_EPS)?;
    if let (true, Some(f)) = (model.config.fusion.uses_multipath(), data.features) {
        model.mp_stats = zscore_fit(f.data.iter().map(Vec::as_slice), f.channels, NormStats::DEFAULT_EPS)?;
    }
    Ok(())
}

/// Mean masked loss over a fixed evaluation set.
pub fn fixed_loss(model: &Extrapolator, data: CeData<'_>, eval: &FixedEval, batch_size: usize) -> Result<f64> {
    let mut total = 0.0;
    for (items, plans) in eval.items.chunks(batch_size).zip(eval.plans.chunks(batch_size)) {
        let batch = build_batch(model, data, items, plans.to_vec())?;
        total += model.loss(&batch)? * items.len() as f64;
    }
    Ok(total / eval.items.len().max(1) as f64)
}

/// Trains an extrapolator. Normalization statistics come from `train`;
/// `test`, when non-empty, is scored after every epoch.
pub fn train_ce(
    config: ExtrapolatorConfig,
    train: CeData<'_>,
    test: CeData<'_>,
    cfg: &CeTrainConfig,
    seed: u64,
) -> Result<(Extrapolator, History)> {
    cfg.validate()?;
    if train.samples.is_empty() {
        return Err(Error::Empty);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = Extrapolator::new(config, &mut rng)?;
    fit_stats(&mut model, train)?;
    let tokens = model.config.tokens();
    let n_sc = train.samples[0].csi.n_subcarriers;
    let mid_ratio = cfg.mask_ratios[cfg.mask_ratios.len() / 2];
    let fixed = FixedEval::new(test.samples.len(), n_sc, cfg.test_subcarriers, tokens, mid_ratio, seed ^ 0x7e57)?;
    let mut opt = Adam::new(cfg.optimizer, &model.params)?;
    let mut history = History::default();
    let epochs = cfg.schedule.total_epochs;
    for epoch in 0..epochs {
        let mut items: Vec<(usize, usize)> = (0..train.samples.len())
            .flat_map(|i| (0..cfg.subcarriers_per_sample).map(move |_| i))
            .map(|i| (i, rng.random_range(0..n_sc)))
            .collect();
        items.shuffle(&mut rng);
        let steps = items.len().div_ceil(cfg.batch_size);
        let (mut sum, mut lr) = (0.0, 0.0);
        for (b, chunk) in items.chunks(cfg.batch_size).enumerate() {
            let rho = *cfg.mask_ratios.choose(&mut rng).expect("validated non-empty");
            let plans = make_mask_plans(chunk.len(), tokens, rho, &mut rng)?;
            let batch = build_batch(&model, train, chunk, plans)?;
            lr = cfg.schedule.lr_for(epoch, b, steps);
            model.params.zero_grad();
            let mut tape = GradTape::new();
            let loss = model.loss_var(&mut tape, &batch, &mut Mode::train(&mut rng))?;
            let value = check_finite(tape.value(loss).item(), opt.step as usize, b)?;
            tape.backward(loss)?.accumulate_into(&mut model.params)?;
            if lr > 0.0 {
                opt.step(&mut model.params, lr)?;
            }
            sum += value * chunk.len() as f64;
        }
        let record = EpochRecord {
            epoch: epoch + 1,
            train_loss: sum / items.len() as f64,
            test_loss: if test.samples.is_empty() {
                None
            } else {
                Some(fixed_loss(&model, test, &fixed, cfg.batch_size)?)
            },
            lr,
        };
        log::info!(
            "ce epoch {}: train {:.4e} test {:?} lr {:.3e}",
            record.epoch,
            record.train_loss,
            record.test_loss,
            record.lr
        );
        history.records.push(record);
    }
    Ok((model, history))
}
