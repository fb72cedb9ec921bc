use super::{check_finite, Adam, AdamConfig, EpochRecord, History};
use crate::c2p::{canonicalize_phase, C2pConfig, C2pSample, CsiToPdp};
use crate::dataset::{Dataset, Sample};
use crate::error::{Error, Result};
use crate::tensor::GradTape;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct C2pTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub optimizer: AdamConfig,
    pub hidden: usize,
    /// Power that maps to 1 nat in the log compression of PDP bins.
    pub reference_power: f64,
    pub test_fraction: f64,
    /// Antenna pairs drawn from each realization.
    pub pairs_per_sample: usize,
}

impl Default for C2pTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 400,
            batch_size: 100,
            lr: 1e-4,
            optimizer: AdamConfig::adam(),
            hidden: 512,
            reference_power: 1e-3,
            test_fraction: 0.1,
            pairs_per_sample: 1,
        }
    }
}

impl C2pTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.pairs_per_sample == 0 {
            return Err(Error::Config("epochs, batch size and pairs per sample must be positive".into()));
        }
        if !(self.lr > 0.0) || !(0.0..1.0).contains(&self.test_fraction) {
            return Err(Error::Config("need lr > 0 and test fraction in [0, 1)".into()));
        }
        self.optimizer.validate()
    }

    pub fn model_config(&self, dataset: &Dataset) -> C2pConfig {
        let mut c = C2pConfig::new(dataset.binning.n_bins, dataset.carrier.n_subcarriers, dataset.binning.bin_width);
        c.hidden = self.hidden;
        c.compression.reference_power = self.reference_power;
        c
    }
}

/// Draws `per_sample` distinct antenna pairs from every realization and
/// pairs each PDP with its phase-canonical CSI vector.
pub fn c2p_pairs<R: Rng + ?Sized>(samples: &[Sample], per_sample: usize, rng: &mut R) -> Result<Vec<C2pSample>> {
    let mut out = Vec::with_capacity(samples.len() * per_sample);
    for s in samples {
        let n_pairs = s.csi.n_rx * s.csi.n_tx;
        if s.pdps.len() != n_pairs {
            return Err(Error::Contract("CSI-to-PDP training needs ground-truth PDPs for every pair".into()));
        }
        for p in rand::seq::index::sample(rng, n_pairs, per_sample.min(n_pairs)) {
            let (m, k) = (p / s.csi.n_tx, p % s.csi.n_tx);
            out.push(C2pSample {
                pdp: s.pdps[p].clone(),
                csi: canonicalize_phase(&s.csi.pair_vector(m, k)),
            });
        }
    }
    Ok(out)
}

fn mean_loss(model: &CsiToPdp, samples: &[C2pSample], batch_size: usize) -> Result<f64> {
    let mut total = 0.0;
    for chunk in samples.chunks(batch_size) {
        total += model.loss(chunk)? * chunk.len() as f64;
    }
    Ok(total / samples.len() as f64)
}

/// Trains the auto-encoder on the head of `dataset` and reports the
/// held-out tail after every epoch.
pub fn train_c2p(dataset: &Dataset, cfg: &C2pTrainConfig, seed: u64) -> Result<(CsiToPdp, History)> {
    cfg.validate()?;
    let (train, test) = dataset.split(cfg.test_fraction);
    if train.is_empty() {
        return Err(Error::Empty);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let train = c2p_pairs(train, cfg.pairs_per_sample, &mut rng)?;
    let test = c2p_pairs(test, cfg.pairs_per_sample, &mut rng)?;
    let mut model = CsiToPdp::new(cfg.model_config(dataset), &mut rng)?;
    let mut opt = Adam::new(cfg.optimizer, &model.params)?;
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut history = History::default();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        for (b, idx) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<C2pSample> = idx.iter().map(|&i| train[i].clone()).collect();
            model.params.zero_grad();
            let mut tape = GradTape::new();
            let loss = model.loss_var(&mut tape, &batch)?;
            let value = check_finite(tape.value(loss).item(), opt.step as usize, b)?;
            tape.backward(loss)?.accumulate_into(&mut model.params)?;
            opt.step(&mut model.params, cfg.lr)?;
            sum += value * batch.len() as f64;
        }
        let record = EpochRecord {
            epoch: epoch + 1,
            train_loss: sum / train.len() as f64,
            test_loss: if test.is_empty() {
                None
            } else {
                Some(mean_loss(&model, &test, cfg.batch_size)?)
            },
            lr: cfg.lr,
        };
        log::info!(
            "c2p epoch {}: train {:.4e} test {:?}",
            record.epoch,
            record.train_loss,
            record.test_loss
        );
        history.records.push(record);
    }
    Ok((model, history))
}
