//! Evaluation metrics, ablation sweeps and latency measurement.

use crate::c2p::CsiToPdp;
use crate::error::{Error, Result};
use crate::masking::{make_mask_plans, MaskPlan};
use crate::model::{patch_of, Extrapolator, ExtrapolatorConfig};
use crate::train::{gather_inputs, multipath_features, CeData, FeatureSource, Features};
use crate::dataset::Sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::time::Instant;

/// Lowest reported NMSE; exact reconstructions land here.
pub const NMSE_FLOOR_DB: f64 = -120.0;

pub fn ratio_to_db(ratio: f64) -> f64 {
    if ratio <= 10f64.powf(NMSE_FLOOR_DB / 10.0) {
        NMSE_FLOOR_DB
    } else {
        10.0 * ratio.log10()
    }
}

/// `Σ‖ŷ − y‖² / Σ‖y‖²`.
pub fn nmse(pred: &[f64], truth: &[f64]) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(Error::shape("nmse", &[pred.len()], &[truth.len()]));
    }
    let err: f64 = pred.iter().zip(truth).map(|(p, t)| (p - t) * (p - t)).sum();
    let energy: f64 = truth.iter().map(|t| t * t).sum();
    if energy == 0.0 {
        return if err == 0.0 {
            Ok(0.0)
        } else {
            Err(Error::Contract("NMSE against an all-zero reference".into()))
        };
    }
    Ok(err / energy)
}

pub fn nmse_db(pred: &[f64], truth: &[f64]) -> Result<f64> {
    nmse(pred, truth).map(ratio_to_db)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Known-CSI percentages; the mask ratio is `1 − pct/100`.
    pub percentages: Vec<f64>,
    pub mask_seeds: Vec<u64>,
    /// Evenly spaced subcarriers scored per realization.
    pub subcarriers_per_sample: usize,
    pub batch_size: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            percentages: vec![5.0, 10.0, 15.0, 20.0, 25.0],
            mask_seeds: vec![0, 1, 2],
            subcarriers_per_sample: 8,
            batch_size: 100,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.percentages.is_empty() || self.percentages.iter().any(|p| !(*p > 0.0 && *p <= 100.0)) {
            return Err(Error::Config("known-CSI percentages must lie in (0, 100]".into()));
        }
        if self.mask_seeds.is_empty() || self.subcarriers_per_sample == 0 || self.batch_size == 0 {
            return Err(Error::Config("need mask seeds, subcarriers and a positive batch size".into()));
        }
        Ok(())
    }
}

/// Scores for one (variant, known-CSI percentage) cell.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalRow {
    pub axis: String,
    pub value: String,
    pub percentage: f64,
    /// Aggregate NMSE over cells in masked patches.
    pub nmse_masked_db: f64,
    /// Aggregate NMSE over whole grids, known cells pasted back.
    pub nmse_full_db: f64,
    /// Spread of the per-grid masked NMSE (dB) across scored grids.
    pub std_masked_db: f64,
    /// Mean squared error per masked real value, raw units.
    pub mse_masked: f64,
    pub samples: usize,
    pub seeds: usize,
}

pub const EVAL_CSV_HEADER: &str =
    "axis,value,known_pct,nmse_masked_db,nmse_full_db,std_masked_db,mse_masked,samples,seeds";

pub fn eval_csv(rows: &[EvalRow]) -> String {
    let mut s = format!("{EVAL_CSV_HEADER}\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{:.6},{:.6},{:.6},{:e},{},{}",
            r.axis,
            r.value,
            r.percentage,
            r.nmse_masked_db,
            r.nmse_full_db,
            r.std_masked_db,
            r.mse_masked,
            r.samples,
            r.seeds
        );
    }
    s
}

pub fn eval_table(rows: &[EvalRow]) -> String {
    let mut s = format!(
        "{:<10} {:<16} {:>6} {:>14} {:>12} {:>8}\n",
        "axis", "value", "known%", "masked NMSE dB", "full NMSE dB", "std dB"
    );
    for r in rows {
        let _ = writeln!(
            s,
            "{:<10} {:<16} {:>6} {:>14.3} {:>12.3} {:>8.3}",
            r.axis, r.value, r.percentage, r.nmse_masked_db, r.nmse_full_db, r.std_masked_db
        );
    }
    s
}

/// Mask plans for one (percentage, seed) cell; identical for every model
/// with the same token count.
pub fn eval_plans(n: usize, tokens: usize, percentage: f64, seed: u64) -> Result<Vec<MaskPlan>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((percentage * 1000.0).round() as u64);
    make_mask_plans(n, tokens, 1.0 - percentage / 100.0, &mut rng)
}

fn eval_items(samples: &[Sample], per_sample: usize) -> Vec<(usize, usize)> {
    samples
        .iter()
        .enumerate()
        .flat_map(|(i, s)| {
            let n_sc = s.csi.n_subcarriers;
            let per = per_sample.clamp(1, n_sc.max(1));
            (0..per).map(move |j| (i, j * n_sc / per))
        })
        .collect()
}

/// Scores `model` on `data` at every configured percentage.
pub fn evaluate(model: &Extrapolator, data: CeData<'_>, cfg: &EvalConfig, axis: &str, value: &str) -> Result<Vec<EvalRow>> {
    cfg.validate()?;
    if data.samples.is_empty() {
        return Err(Error::Empty);
    }
    let c = &model.config;
    let items = eval_items(data.samples, cfg.subcarriers_per_sample);
    let mut rows = Vec::with_capacity(cfg.percentages.len());
    for &pct in &cfg.percentages {
        let (mut err_m, mut en_m, mut err_f, mut en_f, mut cells_m) = (0.0, 0.0, 0.0, 0.0, 0usize);
        let mut per_grid = Vec::with_capacity(items.len() * cfg.mask_seeds.len());
        for &seed in &cfg.mask_seeds {
            let plans = eval_plans(items.len(), c.tokens(), pct, seed)?;
            for (chunk, plan_chunk) in items.chunks(cfg.batch_size).zip(plans.chunks(cfg.batch_size)) {
                let (csi, mp) = gather_inputs(c, data, chunk, plan_chunk)?;
                let out = model.extrapolate(&csi, &mp, plan_chunk, true)?;
                let grid = 2 * c.n_rx * c.n_tx;
                for (b, plan) in plan_chunk.iter().enumerate() {
                    let truth = &csi.data()[b * grid..(b + 1) * grid];
                    let pred = &out.data()[b * grid..(b + 1) * grid];
                    let (mut e, mut n) = (0.0, 0.0);
                    for (i, (p, t)) in pred.iter().zip(truth).enumerate() {
                        let cell = i % (c.n_rx * c.n_tx);
                        let d2 = (p - t) * (p - t);
                        err_f += d2;
                        en_f += t * t;
                        if plan.is_masked(patch_of(cell / c.n_tx, cell % c.n_tx, c.patch, c.n_tx)) {
                            e += d2;
                            n += t * t;
                            cells_m += 1;
                        }
                    }
                    err_m += e;
                    en_m += n;
                    if n > 0.0 {
                        per_grid.push(ratio_to_db(e / n));
                    }
                }
            }
        }
        let mean = per_grid.iter().sum::<f64>() / per_grid.len().max(1) as f64;
        let var = per_grid.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / per_grid.len().max(1) as f64;
        rows.push(EvalRow {
            axis: axis.to_string(),
            value: value.to_string(),
            percentage: pct,
            nmse_masked_db: if en_m > 0.0 { ratio_to_db(err_m / en_m) } else { NMSE_FLOOR_DB },
            nmse_full_db: if en_f > 0.0 { ratio_to_db(err_f / en_f) } else { NMSE_FLOOR_DB },
            std_masked_db: var.sqrt(),
            mse_masked: if cells_m > 0 { err_m / cells_m as f64 } else { 0.0 },
            samples: items.len(),
            seeds: cfg.mask_seeds.len(),
        });
    }
    Ok(rows)
}

/// Multipath features matching `config`, or `None` for the baseline.
pub fn features_for(
    config: &ExtrapolatorConfig,
    samples: &[Sample],
    ground_truth: bool,
    c2p: Option<&CsiToPdp>,
) -> Result<Option<Features>> {
    if !config.fusion.uses_multipath() {
        return Ok(None);
    }
    let source = match (ground_truth, c2p) {
        (true, _) => FeatureSource::GroundTruth,
        (false, Some(m)) => FeatureSource::Inferred(m),
        (false, None) => {
            return Err(Error::Config("model uses inferred PDPs but no CSI-to-PDP checkpoint was given".into()))
        }
    };
    multipath_features(samples, config.feature_case, source).map(Some)
}

/// One variant in an ablation sweep.
#[derive(Clone, Copy, Debug)]
pub struct AblationEntry<'a> {
    pub axis: &'a str,
    pub value: &'a str,
    pub model: &'a Extrapolator,
    pub data: CeData<'a>,
}

/// One row per (entry, percentage), in entry order.
pub fn ablate(entries: &[AblationEntry<'_>], cfg: &EvalConfig) -> Result<Vec<EvalRow>> {
    let mut rows = Vec::with_capacity(entries.len() * cfg.percentages.len());
    for e in entries {
        rows.extend(evaluate(e.model, e.data, cfg, e.axis, e.value)?);
    }
    Ok(rows)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub percentages: Vec<f64>,
    pub warmup: usize,
    pub runs: usize,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            percentages: vec![5.0, 10.0, 15.0, 20.0, 25.0],
            warmup: 20,
            runs: 200,
            seed: 0,
        }
    }
}

/// Single-sample latency of the fused model and the baseline at one
/// percentage. Milliseconds; hardware-dependent.
#[derive(Clone, Debug, PartialEq)]
pub struct BenchRow {
    pub percentage: f64,
    pub baseline_mean_ms: f64,
    pub baseline_std_ms: f64,
    pub proposed_mean_ms: f64,
    pub proposed_std_ms: f64,
    pub runs: usize,
}

impl BenchRow {
    pub fn overhead_ms(&self) -> f64 {
        self.proposed_mean_ms - self.baseline_mean_ms
    }
}

pub const BENCH_CSV_HEADER: &str =
    "known_pct,baseline_mean_ms,baseline_std_ms,proposed_mean_ms,proposed_std_ms,overhead_ms,runs";

pub fn bench_csv(rows: &[BenchRow]) -> String {
    let mut s = format!("{BENCH_CSV_HEADER}\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{:.6},{:.6},{:.6},{:.6},{:.6},{}",
            r.percentage,
            r.baseline_mean_ms,
            r.baseline_std_ms,
            r.proposed_mean_ms,
            r.proposed_std_ms,
            r.overhead_ms(),
            r.runs
        );
    }
    s
}

pub fn bench_table(rows: &[BenchRow]) -> String {
    let mut s = String::from("latency per sample (hardware-dependent)\n");
    let _ = writeln!(s, "{:>6} {:>16} {:>16} {:>12}", "known%", "baseline ms", "proposed ms", "overhead ms");
    for r in rows {
        let _ = writeln!(
            s,
            "{:>6} {:>9.4} ±{:<6.4} {:>9.4} ±{:<6.4} {:>12.4}",
            r.percentage,
            r.baseline_mean_ms,
            r.baseline_std_ms,
            r.proposed_mean_ms,
            r.proposed_std_ms,
            r.overhead_ms()
        );
    }
    s
}

fn time_runs(model: &Extrapolator, data: CeData<'_>, pct: f64, cfg: &BenchConfig) -> Result<(f64, f64)> {
    let items = eval_items(data.samples, 1);
    let plans = eval_plans(cfg.warmup + cfg.runs, model.config.tokens(), pct, cfg.seed)?;
    let mut times = Vec::with_capacity(cfg.runs);
    for (i, plan) in plans.iter().enumerate() {
        let item = [items[i % items.len()]];
        let plan = std::slice::from_ref(plan);
        let (csi, mp) = gather_inputs(&model.config, data, &item, plan)?;
        let t = Instant::now();
        let out = model.extrapolate(&csi, &mp, plan, true)?;
        let dt = t.elapsed().as_secs_f64() * 1e3;
        std::hint::black_box(out);
        if i >= cfg.warmup {
            times.push(dt);
        }
    }
    let n = times.len() as f64;
    let mean = times.iter().sum::<f64>() / n;
    let var = times.iter().map(|t| (t - mean) * (t - mean)).sum::<f64>() / (n - 1.0).max(1.0);
    Ok((mean, var.sqrt()))
}

/// Times single-sample extrapolation for both variants; warmup runs are
/// discarded.
pub fn bench(
    proposed: &Extrapolator,
    proposed_data: CeData<'_>,
    baseline: &Extrapolator,
    baseline_data: CeData<'_>,
    cfg: &BenchConfig,
) -> Result<Vec<BenchRow>> {
    if cfg.runs < 2 {
        return Err(Error::Config("bench needs at least two timed runs".into()));
    }
    if proposed_data.samples.is_empty() || baseline_data.samples.is_empty() {
        return Err(Error::Empty);
    }
    cfg.percentages
        .iter()
        .map(|&pct| {
            let (bm, bs) = time_runs(baseline, baseline_data, pct, cfg)?;
            let (pm, ps) = time_runs(proposed, proposed_data, pct, cfg)?;
            Ok(BenchRow {
                percentage: pct,
                baseline_mean_ms: bm,
                baseline_std_ms: bs,
                proposed_mean_ms: pm,
                proposed_std_ms: ps,
                runs: cfg.runs,
            })
        })
        .collect()
}
