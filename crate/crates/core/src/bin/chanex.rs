use chanex::channel::CarrierConfig;
use chanex::checkpoint::{load_c2p, load_extrapolator, save_c2p, save_extrapolator, ExtrapolatorCheckpoint};
use chanex::dataset::{generate, Dataset, GenerateConfig};
use chanex::harness::{
    ablate, bench, bench_csv, bench_table, eval_csv, eval_table, evaluate, features_for, AblationEntry, BenchConfig,
    EvalConfig,
};
use chanex::model::ExtrapolatorConfig;
use chanex::train::{train_c2p, train_ce, C2pTrainConfig, CeData, CeTrainConfig, Features};
use chanex::{Error, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

/// Multipath-assisted MIMO channel extrapolation.
#[derive(Parser)]
#[command(version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// TOML experiment file with optional [generate], [c2p], [ce], [model],
    /// [eval] and [bench] tables.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Override one config value, e.g. `ce.schedule.total_epochs=100`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a synthetic dataset.
    Generate {
        out: PathBuf,
        #[arg(long)]
        seed: u64,
        #[arg(long, short = 'n', default_value_t = 2000)]
        samples: usize,
        /// Carrier preset (3.5ghz, 5.9ghz, 28ghz); overrides the config.
        #[arg(long)]
        carrier: Option<String>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Train the CSI-to-PDP auto-encoder.
    TrainC2p {
        dataset: PathBuf,
        out: PathBuf,
        #[arg(long)]
        seed: u64,
        /// Per-epoch loss CSV; defaults to `<out>.history.csv`.
        #[arg(long)]
        history: Option<PathBuf>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Train the channel extrapolator.
    TrainCe {
        dataset: PathBuf,
        out: PathBuf,
        #[arg(long)]
        seed: u64,
        /// CSI-to-PDP checkpoint used to infer multipath features.
        #[arg(long)]
        c2p: Option<PathBuf>,
        /// Use ground-truth PDPs instead of a CSI-to-PDP checkpoint.
        #[arg(long)]
        bypass_c2p: bool,
        #[arg(long)]
        history: Option<PathBuf>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Masked and full-grid NMSE per known-CSI percentage.
    Eval {
        checkpoint: PathBuf,
        dataset: PathBuf,
        #[arg(long)]
        c2p: Option<PathBuf>,
        /// Comma-separated known-CSI percentages.
        #[arg(long, value_delimiter = ',')]
        percentages: Option<Vec<f64>>,
        #[command(flatten)]
        split: SplitArgs,
        /// CSV destination; stdout when absent.
        #[arg(long, short)]
        out: Option<PathBuf>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Evaluate a set of checkpoints along one ablation axis.
    Ablate {
        dataset: PathBuf,
        #[arg(required = true)]
        checkpoints: Vec<PathBuf>,
        #[arg(long, value_enum)]
        axis: Axis,
        /// Extra datasets for zero-shot evaluation along `frequency-preset`.
        #[arg(long = "zero-shot")]
        zero_shot: Vec<PathBuf>,
        #[arg(long)]
        c2p: Option<PathBuf>,
        #[arg(long, value_delimiter = ',')]
        percentages: Option<Vec<f64>>,
        #[command(flatten)]
        split: SplitArgs,
        #[arg(long, short)]
        out: Option<PathBuf>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Single-sample latency of a fused model against the baseline.
    Bench {
        proposed: PathBuf,
        baseline: PathBuf,
        dataset: PathBuf,
        #[arg(long)]
        c2p: Option<PathBuf>,
        #[arg(long, value_delimiter = ',')]
        percentages: Option<Vec<f64>>,
        #[arg(long)]
        runs: Option<usize>,
        #[arg(long)]
        warmup: Option<usize>,
        #[arg(long, short)]
        out: Option<PathBuf>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
}

#[derive(Args)]
struct SplitArgs {
    /// Score the trailing fraction of the dataset (the training hold-out).
    #[arg(long, default_value_t = 0.1)]
    test_fraction: f64,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Axis {
    FeatureCase,
    FusionVariant,
    AverageVsAntennawise,
    FrequencyPreset,
}

impl Axis {
    fn name(self) -> &'static str {
        match self {
            Axis::FeatureCase => "feature_case",
            Axis::FusionVariant => "fusion",
            Axis::AverageVsAntennawise => "average",
            Axis::FrequencyPreset => "frequency",
        }
    }
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct Experiment {
    generate: GenerateConfig,
    c2p: C2pTrainConfig,
    ce: CeTrainConfig,
    model: ExtrapolatorConfig,
    eval: EvalConfig,
    bench: BenchConfig,
}

fn config_error(e: impl std::fmt::Display) -> Error {
    Error::Config(e.to_string())
}

impl ConfigArgs {
    fn load(&self) -> Result<Experiment> {
        // Defaults first so partial tables keep the experiment's own values.
        let mut table = toml::Table::try_from(Experiment::default()).map_err(config_error)?;
        if let Some(p) = &self.config {
            merge(&mut table, std::fs::read_to_string(p)?.parse::<toml::Table>().map_err(config_error)?);
        }
        for o in &self.overrides {
            apply_override(&mut table, o)?;
        }
        toml::Value::Table(table).try_into().map_err(config_error)
    }
}

fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// Sets a dotted key in `table`. The value is read as TOML and falls back
/// to a bare string.
fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{assignment}` is not KEY=VALUE")))?;
    let value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let parts: Vec<&str> = key.trim().split('.').collect();
    let (last, path) = parts.split_last().expect("split yields at least one part");
    let mut cur = table;
    for p in path {
        cur = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("`{p}` in `{key}` is not a table")))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

fn write_output(out: Option<&Path>, csv: &str) -> Result<()> {
    match out {
        Some(p) => std::fs::write(p, csv)?,
        None => print!("{csv}"),
    }
    Ok(())
}

fn history_path(explicit: Option<PathBuf>, out: &Path) -> PathBuf {
    explicit.unwrap_or_else(|| {
        let mut s = out.as_os_str().to_owned();
        s.push(".history.csv");
        PathBuf::from(s)
    })
}

fn test_split(ds: &Dataset, fraction: f64) -> Result<&[chanex::dataset::Sample]> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Config("test fraction must lie in (0, 1]".into()));
    }
    let (_, test) = ds.split(fraction);
    if test.is_empty() {
        return Err(Error::Empty);
    }
    Ok(test)
}

/// Loads a checkpoint together with the features it expects on `samples`.
fn with_features(
    ckpt: &ExtrapolatorCheckpoint,
    samples: &[chanex::dataset::Sample],
    c2p: Option<&Path>,
) -> Result<Option<Features>> {
    let c2p = match (ckpt.ground_truth_features, ckpt.model.config.fusion.uses_multipath(), c2p) {
        (false, true, Some(p)) => Some(load_c2p(p)?),
        _ => None,
    };
    features_for(&ckpt.model.config, samples, ckpt.ground_truth_features, c2p.as_ref())
}

fn percentages(cfg: &mut EvalConfig, list: Option<Vec<f64>>) {
    if let Some(p) = list {
        cfg.percentages = p;
    }
}

fn carrier_label(ds: &Dataset) -> String {
    format!("{}GHz", ds.carrier.center_frequency / 1e9)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate {
            out,
            seed,
            samples,
            carrier,
            cfg,
        } => {
            let mut g = cfg.load()?.generate;
            if let Some(name) = carrier {
                g.carrier = CarrierConfig::preset(&name)?.with_subcarriers(g.carrier.n_subcarriers);
            }
            let ds = generate(&g, samples, seed)?;
            ds.save(&out)?;
            eprintln!("wrote {} samples to {}", ds.len(), out.display());
        }
        Command::TrainC2p {
            dataset,
            out,
            seed,
            history,
            cfg,
        } => {
            let c = cfg.load()?.c2p;
            let ds = Dataset::load(&dataset)?;
            let (model, h) = train_c2p(&ds, &c, seed)?;
            save_c2p(&model, &out)?;
            h.write_csv(history_path(history, &out))?;
            if let (Some(first), Some(last)) = (h.first(), h.last()) {
                eprintln!("train loss {:.4e} -> {:.4e}", first.train_loss, last.train_loss);
            }
        }
        Command::TrainCe {
            dataset,
            out,
            seed,
            c2p,
            bypass_c2p,
            history,
            cfg,
        } => {
            let exp = cfg.load()?;
            let mut tc = exp.ce;
            tc.bypass_c2p |= bypass_c2p;
            let mut mc = exp.model;
            let ds = Dataset::load(&dataset)?;
            mc.n_rx = ds.geometry.n_rx;
            mc.n_tx = ds.geometry.n_tx;
            let c2p = match (&c2p, tc.bypass_c2p, mc.fusion.uses_multipath()) {
                (Some(p), false, true) => Some(load_c2p(p)?),
                (None, false, true) => {
                    return Err(Error::Config(
                        "training a fused model needs --c2p or --bypass-c2p".into(),
                    ))
                }
                _ => None,
            };
            let (train, test) = ds.split(tc.test_fraction);
            let ftr = features_for(&mc, train, tc.bypass_c2p, c2p.as_ref())?;
            let fte = features_for(&mc, test, tc.bypass_c2p, c2p.as_ref())?;
            let (model, h) = train_ce(
                mc,
                CeData {
                    samples: train,
                    features: ftr.as_ref(),
                },
                CeData {
                    samples: test,
                    features: fte.as_ref(),
                },
                &tc,
                seed,
            )?;
            let ckpt = ExtrapolatorCheckpoint {
                model,
                ground_truth_features: tc.bypass_c2p,
            };
            save_extrapolator(&ckpt, &out)?;
            h.write_csv(history_path(history, &out))?;
            if let (Some(first), Some(last)) = (h.first(), h.last()) {
                eprintln!("masked MSE {:.4e} -> {:.4e}", first.train_loss, last.train_loss);
            }
        }
        Command::Eval {
            checkpoint,
            dataset,
            c2p,
            percentages: pct,
            split,
            out,
            cfg,
        } => {
            let mut ec = cfg.load()?.eval;
            percentages(&mut ec, pct);
            let ckpt = load_extrapolator(&checkpoint)?;
            let ds = Dataset::load(&dataset)?;
            let samples = test_split(&ds, split.test_fraction)?;
            let f = with_features(&ckpt, samples, c2p.as_deref())?;
            let data = CeData {
                samples,
                features: f.as_ref(),
            };
            let rows = evaluate(&ckpt.model, data, &ec, "model", ckpt.model.config.fusion.as_str())?;
            eprint!("{}", eval_table(&rows));
            write_output(out.as_deref(), &eval_csv(&rows))?;
        }
        Command::Ablate {
            dataset,
            checkpoints,
            axis,
            zero_shot,
            c2p,
            percentages: pct,
            split,
            out,
            cfg,
        } => {
            let mut ec = cfg.load()?.eval;
            percentages(&mut ec, pct);
            if axis != Axis::FrequencyPreset && !zero_shot.is_empty() {
                return Err(Error::Config("--zero-shot only applies to the frequency-preset axis".into()));
            }
            let ckpts = checkpoints
                .iter()
                .map(load_extrapolator)
                .collect::<Result<Vec<_>>>()?;
            let mut sets = vec![Dataset::load(&dataset)?];
            for p in &zero_shot {
                sets.push(Dataset::load(p)?);
            }
            // (checkpoint, dataset, features, label)
            let mut cells = Vec::new();
            for ck in &ckpts {
                for ds in &sets {
                    let samples = test_split(ds, split.test_fraction)?;
                    let f = with_features(ck, samples, c2p.as_deref())?;
                    let c = &ck.model.config;
                    let label = match axis {
                        Axis::FeatureCase => c.feature_case.to_string(),
                        Axis::FusionVariant => c.fusion.to_string(),
                        Axis::AverageVsAntennawise => c.feature_case.to_string(),
                        Axis::FrequencyPreset => format!("{}@{}", c.fusion, carrier_label(ds)),
                    };
                    cells.push((ck, samples, f, label));
                }
            }
            let entries: Vec<AblationEntry<'_>> = cells
                .iter()
                .map(|(ck, samples, f, label)| AblationEntry {
                    axis: axis.name(),
                    value: label,
                    model: &ck.model,
                    data: CeData {
                        samples,
                        features: f.as_ref(),
                    },
                })
                .collect();
            let rows = ablate(&entries, &ec)?;
            eprint!("{}", eval_table(&rows));
            write_output(out.as_deref(), &eval_csv(&rows))?;
        }
        Command::Bench {
            proposed,
            baseline,
            dataset,
            c2p,
            percentages: pct,
            runs,
            warmup,
            out,
            cfg,
        } => {
            let mut bc = cfg.load()?.bench;
            if let Some(p) = pct {
                bc.percentages = p;
            }
            bc.runs = runs.unwrap_or(bc.runs);
            bc.warmup = warmup.unwrap_or(bc.warmup);
            let p = load_extrapolator(&proposed)?;
            let b = load_extrapolator(&baseline)?;
            let ds = Dataset::load(&dataset)?;
            let fp = with_features(&p, &ds.samples, c2p.as_deref())?;
            let fb = with_features(&b, &ds.samples, c2p.as_deref())?;
            let rows = bench(
                &p.model,
                CeData {
                    samples: &ds.samples,
                    features: fp.as_ref(),
                },
                &b.model,
                CeData {
                    samples: &ds.samples,
                    features: fb.as_ref(),
                },
                &bc,
            )?;
            eprint!("{}", bench_table(&rows));
            write_output(out.as_deref(), &bench_csv(&rows))?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
