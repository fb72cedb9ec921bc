//! Optimizers, the learning-rate schedule and the two training loops.

mod c2p;
mod ce;
mod optim;
mod schedule;

pub use c2p::{c2p_pairs, train_c2p, C2pTrainConfig};
pub use ce::{
    build_batch, fixed_loss, gather_inputs, multipath_features, train_ce, CeData, CeTrainConfig, FeatureSource,
    Features, FixedEval,
};
pub use optim::{Adam, AdamConfig};
pub use schedule::ScheduleConfig;

use crate::error::{Error, Result};
use std::fmt::Write as _;
use std::path::Path;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRecord {
    /// Counted from 1.
    pub epoch: usize,
    /// Sample-weighted mean of the batch losses seen during the epoch.
    pub train_loss: f64,
    /// Loss on the held-out split after the epoch, if there is one.
    pub test_loss: Option<f64>,
    pub lr: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct History {
    pub records: Vec<EpochRecord>,
}

impl History {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn first(&self) -> Option<&EpochRecord> {
        self.records.first()
    }

    pub fn last(&self) -> Option<&EpochRecord> {
        self.records.last()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,train_loss,test_loss,lr\n");
        for r in &self.records {
            let test = r.test_loss.map(|t| format!("{t:e}")).unwrap_or_default();
            let _ = writeln!(s, "{},{:e},{},{:e}", r.epoch, r.train_loss, test, r.lr);
        }
        s
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }
}

fn check_finite(value: f64, step: usize, batch: usize) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        log::error!("loss became {value} at optimizer step {step}, batch {batch}; aborting");
        Err(Error::NonFiniteLoss { value, step, batch })
    }
}
