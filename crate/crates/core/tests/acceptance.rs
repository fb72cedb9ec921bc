//! Acceptance criteria 1–8. Every test writes one `criterion N: PASS|FAIL`
//! line to stderr, bypassing output capture, before asserting.

use chanex::c2p::{CsiToPdp, PowerDelayProfile};
use chanex::channel::{ground_truth_pdp, CarrierConfig, Path, PdpBinning};
use chanex::dataset::{generate, realize, Dataset, GenerateConfig};
use chanex::features::{effective_paths, extract_features, FeatureCase};
use chanex::harness::{bench, bench_table, evaluate, features_for, nmse_db, BenchConfig, EvalConfig};
use chanex::masking::{apply_mask, keep_count, make_mask_plan, make_mask_plans, restore_sequence, MaskPlan};
use chanex::model::{Batch, Extrapolator, ExtrapolatorConfig, FusionMode, Mode};
use chanex::tensor::gradcheck::{check_inputs, check_params};
use chanex::tensor::{GradTape, ParamStore, Tensor, Var};
use chanex::train::{
    c2p_pairs, train_c2p, train_ce, Adam, AdamConfig, C2pTrainConfig, CeData, CeTrainConfig, Features, ScheduleConfig,
};
use chanex::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::io::Write;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

const DATA_SEED: u64 = 42;
const N_SAMPLES: usize = 2000;
const TEST_FRACTION: f64 = 0.1;
const REPEATS: [u64; 3] = [101, 202, 303];
const CE_EPOCHS: usize = 120;
const KNOWN_PCT: f64 = 10.0;

fn report(n: u32, pass: bool, detail: &str) {
    let line = format!("criterion {n}: {} | {detail}\n", if pass { "PASS" } else { "FAIL" });
    let _ = std::io::stderr().write_all(line.as_bytes());
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn rand(shape: &[usize], seed: u64) -> Tensor {
    Tensor::randn(shape, 1.0, &mut rng(seed))
}

// ---------------------------------------------------------------- fixtures

fn dataset() -> &'static Dataset {
    static DS: OnceLock<Dataset> = OnceLock::new();
    DS.get_or_init(|| generate(&GenerateConfig::default(), N_SAMPLES, DATA_SEED).unwrap())
}

fn c2p_config() -> C2pTrainConfig {
    C2pTrainConfig {
        epochs: 400,
        hidden: 128,
        reference_power: 1e-1,
        pairs_per_sample: 4,
        test_fraction: TEST_FRACTION,
        ..Default::default()
    }
}

struct C2pRun {
    model: CsiToPdp,
    first_loss: f64,
    last_loss: f64,
    elapsed: Duration,
}

fn c2p() -> &'static C2pRun {
    static RUN: OnceLock<C2pRun> = OnceLock::new();
    RUN.get_or_init(|| {
        let t = Instant::now();
        let (model, history) = train_c2p(dataset(), &c2p_config(), 7).unwrap();
        C2pRun {
            model,
            first_loss: history.first().unwrap().train_loss,
            last_loss: history.last().unwrap().train_loss,
            elapsed: t.elapsed(),
        }
    })
}

fn ce_model_config(fusion: FusionMode, case: FeatureCase) -> ExtrapolatorConfig {
    let g = dataset().geometry;
    ExtrapolatorConfig {
        n_rx: g.n_rx,
        n_tx: g.n_tx,
        embed_dim: 32,
        heads: 4,
        encoder_depth: 2,
        decoder_depth: 1,
        decoder_dim: 32,
        drop_path: 0.0,
        fusion,
        feature_case: case,
        ..Default::default()
    }
}

fn ce_train_config() -> CeTrainConfig {
    CeTrainConfig {
        schedule: ScheduleConfig {
            base_lr: 3e-3,
            warmup_epochs: CE_EPOCHS / 10,
            total_epochs: CE_EPOCHS,
            ..Default::default()
        },
        batch_size: 25,
        test_fraction: TEST_FRACTION,
        ..Default::default()
    }
}

/// Multipath features for both splits from ground-truth PDPs, or `None`
/// for the baseline.
fn split_features(config: &ExtrapolatorConfig, ds: &Dataset) -> (Option<Features>, Option<Features>) {
    let (train, test) = ds.split(TEST_FRACTION);
    (
        features_for(config, train, true, None).unwrap(),
        features_for(config, test, true, None).unwrap(),
    )
}

struct Trained {
    model: Extrapolator,
    masked_db: f64,
}

fn masked_nmse(model: &Extrapolator, samples: &[chanex::dataset::Sample], features: Option<&Features>) -> f64 {
    let cfg = EvalConfig {
        percentages: vec![KNOWN_PCT],
        ..Default::default()
    };
    evaluate(model, CeData { samples, features }, &cfg, "acceptance", model.config.fusion.as_str()).unwrap()[0].nmse_masked_db
}

fn train_variant(fusion: FusionMode, case: FeatureCase, seed: u64) -> Trained {
    let ds = dataset();
    let config = ce_model_config(fusion, case);
    let (ftr, fte) = split_features(&config, ds);
    let (train, test) = ds.split(TEST_FRACTION);
    let (model, _) = train_ce(
        config,
        CeData { samples: train, features: ftr.as_ref() },
        CeData { samples: test, features: fte.as_ref() },
        &ce_train_config(),
        seed,
    )
    .unwrap();
    let masked_db = masked_nmse(&model, test, fte.as_ref());
    Trained { model, masked_db }
}

const VARIANTS: [(FusionMode, FeatureCase); 5] = [
    (FusionMode::Baseline, FeatureCase::Proposed),
    (FusionMode::Proposed, FeatureCase::Proposed),
    (FusionMode::Proposed, FeatureCase::Case2),
    (FusionMode::Swapped, FeatureCase::Proposed),
    (FusionMode::Concat, FeatureCase::Proposed),
];

struct Repeat {
    seed: u64,
    runs: Vec<Trained>,
}

impl Repeat {
    fn get(&self, fusion: FusionMode, case: FeatureCase) -> &Trained {
        let i = VARIANTS.iter().position(|v| *v == (fusion, case)).unwrap();
        &self.runs[i]
    }
}

fn repeats() -> &'static (Vec<Repeat>, Duration) {
    static RUNS: OnceLock<(Vec<Repeat>, Duration)> = OnceLock::new();
    RUNS.get_or_init(|| {
        let t = Instant::now();
        let runs = REPEATS
            .iter()
            .map(|&seed| Repeat {
                seed,
                runs: VARIANTS.iter().map(|&(f, c)| train_variant(f, c, seed)).collect(),
            })
            .collect();
        (runs, t.elapsed())
    })
}

// ---------------------------------------------------------------- criterion 1

type Build = dyn Fn(&mut GradTape, &[Var]) -> Result<Var>;

/// Weighted sum so every output element gets a distinct upstream gradient.
fn project(t: &mut GradTape, v: Var, seed: u64) -> Result<Var> {
    let w = rand(t.shape(v), seed);
    let p = t.mul_const(v, w)?;
    Ok(t.sum(p))
}

fn op_cases() -> Vec<(&'static str, Vec<Tensor>, Box<Build>)> {
    vec![
        (
            "matmul",
            vec![rand(&[2, 3, 4], 1), rand(&[4, 5], 2)],
            Box::new(|t, v| {
                let y = t.matmul(v[0], v[1])?;
                project(t, y, 3)
            }),
        ),
        (
            "batched matmul",
            vec![rand(&[2, 3, 4], 4), rand(&[2, 4, 2], 5)],
            Box::new(|t, v| {
                let y = t.matmul(v[0], v[1])?;
                project(t, y, 6)
            }),
        ),
        (
            "add sub mul scale",
            vec![rand(&[2, 3, 4], 7), rand(&[4], 8)],
            Box::new(|t, v| {
                let a = t.add(v[0], v[1])?;
                let s = t.sub(a, v[0])?;
                let m = t.mul(a, s)?;
                let y = t.scale(m, -0.3);
                project(t, y, 9)
            }),
        ),
        (
            "gelu",
            vec![rand(&[4, 6], 10)],
            Box::new(|t, v| {
                let y = t.gelu(v[0]);
                project(t, y, 11)
            }),
        ),
        (
            "softplus",
            vec![rand(&[4, 6], 12)],
            Box::new(|t, v| {
                let y = t.softplus(v[0]);
                project(t, y, 13)
            }),
        ),
        (
            "softmax",
            vec![rand(&[3, 5], 14)],
            Box::new(|t, v| {
                let y = t.softmax_lastdim(v[0])?;
                project(t, y, 15)
            }),
        ),
        (
            "layer norm",
            vec![rand(&[3, 5], 16), rand(&[5], 17), rand(&[5], 18)],
            Box::new(|t, v| {
                let y = t.layer_norm(v[0], v[1], v[2], 1e-6)?;
                project(t, y, 19)
            }),
        ),
        (
            "concat permute reshape transpose",
            vec![rand(&[2, 3, 4], 20), rand(&[2, 2, 4], 21)],
            Box::new(|t, v| {
                let c = t.concat(v[0], v[1], 1)?;
                let p = t.permute(c, &[1, 0, 2])?;
                let r = t.reshape(p, &[5, 8])?;
                let r = t.reshape(r, &[2, 5, 4])?;
                let tr = t.transpose_last2(r)?;
                project(t, tr, 22)
            }),
        ),
        (
            "gather tokens",
            vec![rand(&[2, 5, 3], 23)],
            Box::new(|t, v| {
                let g = t.gather_tokens(v[0], &[vec![4, 0, 0], vec![1, 2, 3]])?;
                project(t, g, 24)
            }),
        ),
        (
            "broadcast row scale mean",
            vec![rand(&[4], 25)],
            Box::new(|t, v| {
                let b = t.broadcast_to(v[0], &[2, 3, 4])?;
                let r = t.row_scale(b, vec![0.5, -2.0])?;
                let m = t.mean(r);
                let p = project(t, r, 26)?;
                t.add(p, m)
            }),
        ),
    ]
}

fn tiny_extrapolator(fusion: FusionMode) -> ExtrapolatorConfig {
    ExtrapolatorConfig {
        n_rx: 4,
        n_tx: 8,
        patch: 2,
        embed_dim: 16,
        encoder_depth: 1,
        decoder_depth: 1,
        heads: 2,
        ffn_ratio: 2,
        drop_path: 0.0,
        decoder_dim: 8,
        fusion,
        feature_case: FeatureCase::Proposed,
    }
}

fn random_probes(store: &ParamStore, n: usize, seed: u64) -> Vec<(chanex::tensor::ParamId, usize)> {
    let ids: Vec<_> = store.ids().collect();
    let mut r = rng(seed);
    (0..n)
        .map(|_| {
            let id = ids[r.random_range(0..ids.len())];
            (id, r.random_range(0..store.get(id).value.len()))
        })
        .collect()
}

fn end_to_end_error(fusion: FusionMode) -> f64 {
    let cfg = tiny_extrapolator(fusion);
    let mut m = Extrapolator::new(cfg.clone(), &mut rng(30)).unwrap();
    let mut r = rng(31);
    let batch = Batch {
        csi: Tensor::randn(&[2, 2, cfg.n_rx, cfg.n_tx], 1.0, &mut r),
        multipath: Tensor::randn(&[2, cfg.mp_channels(), cfg.n_rx, cfg.n_tx], 1.0, &mut r),
        plans: make_mask_plans(2, cfg.tokens(), 0.5, &mut r).unwrap(),
    };
    m.params.zero_grad();
    let mut tape = GradTape::new();
    let l = m.loss_var(&mut tape, &batch, &mut Mode::eval()).unwrap();
    tape.backward(l).unwrap().accumulate_into(&mut m.params).unwrap();
    let probes = random_probes(&m.params, 24, 32);
    let shadow = m.clone();
    let loss = |p: &ParamStore| {
        let mut probe = shadow.clone();
        probe.params = p.clone();
        probe.loss(&batch)
    };
    check_params(&mut m.params, &probes, &loss, 1e-5, 1e-6).unwrap().max_rel_error
}

fn c2p_end_to_end_error() -> f64 {
    let ds = generate(&GenerateConfig::default(), 4, 33).unwrap();
    let mut cfg = C2pTrainConfig::default().model_config(&ds);
    cfg.hidden = 16;
    let mut m = CsiToPdp::new(cfg.clone(), &mut rng(34)).unwrap();
    let batch = c2p_pairs(&ds.samples, 2, &mut rng(35)).unwrap();
    m.params.zero_grad();
    let mut tape = GradTape::new();
    let l = m.loss_var(&mut tape, &batch).unwrap();
    tape.backward(l).unwrap().accumulate_into(&mut m.params).unwrap();
    let probes = random_probes(&m.params, 24, 36);
    let loss = |p: &ParamStore| CsiToPdp::from_params(cfg.clone(), p.clone())?.loss(&batch);
    check_params(&mut m.params, &probes, &loss, 1e-5, 1e-6).unwrap().max_rel_error
}

#[test]
fn criterion_1_gradient_suite() {
    let t = Instant::now();
    let mut worst_op = (0.0f64, "");
    for (name, inputs, build) in op_cases() {
        let r = check_inputs(&inputs, build.as_ref(), 1e-5, 1e-6).unwrap();
        if r.max_rel_error >= worst_op.0 {
            worst_op = (r.max_rel_error, name);
        }
    }
    let mut worst_model = (c2p_end_to_end_error(), "c2p".to_string());
    for f in FusionMode::ALL {
        let e = end_to_end_error(f);
        if e >= worst_model.0 {
            worst_model = (e, f.to_string());
        }
    }
    let elapsed = t.elapsed();
    let pass = worst_op.0 < 1e-4 && worst_model.0 < 1e-3 && elapsed < Duration::from_secs(120);
    report(
        1,
        pass,
        &format!(
            "ops max rel err {:.2e} ({}), end-to-end max rel err {:.2e} ({}), {:.1}s",
            worst_op.0,
            worst_op.1,
            worst_model.0,
            worst_model.1,
            elapsed.as_secs_f64()
        ),
    );
    assert!(pass);
}

// ---------------------------------------------------------------- criterion 2

fn brute_features(bins: &[f64], width: f64) -> (f64, f64) {
    let mut peak = 0.0;
    for &b in bins {
        if b > peak {
            peak = b;
        }
    }
    let (mut total, mut moment) = (0.0, 0.0);
    for (i, &b) in bins.iter().enumerate() {
        if 3.0 * b > peak {
            total += b;
            moment += b * (i as f64 * width);
        }
    }
    (total, moment / total)
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1e-300)
}

fn oracle_features(r: &mut ChaCha8Rng) -> bool {
    (0..500).all(|_| {
        let width = 6.25e-9;
        let bins: Vec<f64> = (0..64).map(|_| if r.random::<f64>() < 0.3 { r.random::<f64>() } else { 0.0 }).collect();
        if bins.iter().all(|&b| b == 0.0) {
            return true;
        }
        let pdp = PowerDelayProfile::new(bins.clone(), width).unwrap();
        let (p, d) = extract_features(&pdp).unwrap();
        let (bp, bd) = brute_features(&bins, width);
        close(p, bp, 1e-12) && close(d, bd, 1e-12)
    })
}

fn oracle_threshold(r: &mut ChaCha8Rng) -> bool {
    let effective = |bins: &[f64]| -> Vec<usize> {
        let pdp = PowerDelayProfile::new(bins.to_vec(), 1.0).unwrap();
        effective_paths(&pdp).unwrap().iter().map(|p| p.delay as usize).collect()
    };
    // a bin exactly at one third of the peak is not effective
    let tie = effective(&[3.0, 1.0, 1.000001, 0.5]) == [0, 2];
    tie && (0..500).all(|_| {
        let bins: Vec<f64> = (0..32).map(|_| r.random::<f64>()).collect();
        let peak = bins.iter().copied().fold(0.0, f64::max);
        let want: Vec<usize> = (0..bins.len()).filter(|&i| 3.0 * bins[i] > peak).collect();
        effective(&bins) == want
    })
}

fn oracle_binning(r: &mut ChaCha8Rng) -> bool {
    let binning = PdpBinning { n_bins: 64, bin_width: 6.25e-9 };
    (0..300).all(|_| {
        let paths: Vec<Path> = (0..r.random_range(1..12))
            .map(|_| Path {
                amplitude: r.random::<f64>(),
                phase: 0.0,
                delay: r.random::<f64>() * binning.window() * 0.999,
                aoa_az: 0.0,
                aoa_el: 0.0,
                aod_az: 0.0,
                aod_el: 0.0,
            })
            .collect();
        let pdp = ground_truth_pdp(&paths, binning).unwrap();
        (0..binning.n_bins).all(|i| {
            let lo = i as f64 * binning.bin_width;
            let hi = lo + binning.bin_width;
            let want: f64 = paths
                .iter()
                .filter(|p| p.delay >= lo && p.delay < hi)
                .map(|p| p.amplitude * p.amplitude)
                .sum();
            close(pdp.bins[i], want, 1e-12) || (want == 0.0 && pdp.bins[i] == 0.0)
        })
    })
}

fn oracle_nmse(r: &mut ChaCha8Rng) -> bool {
    (0..500).all(|_| {
        let n = r.random_range(1..100);
        let truth: Vec<f64> = (0..n).map(|_| r.random::<f64>() * 2.0 - 1.0).collect();
        let pred: Vec<f64> = truth.iter().map(|t| t + 0.1 * (r.random::<f64>() - 0.5)).collect();
        let (mut e, mut s) = (0.0, 0.0);
        for i in 0..n {
            e += (pred[i] - truth[i]).powi(2);
            s += truth[i].powi(2);
        }
        close(nmse_db(&pred, &truth).unwrap(), 10.0 * (e / s).log10(), 1e-12)
    })
}

/// Ten AdamW/Adam steps on `f(x, y) = a·x² + b·y² + c·x·y` against a
/// scalar re-derivation.
fn oracle_optimizer(config: AdamConfig) -> bool {
    let (a, b, c) = (1.5, 0.5, -0.4);
    let grad = |x: f64, y: f64| (2.0 * a * x + c * y, 2.0 * b * y + c * x);
    let lr = 0.05;
    let mut store = ParamStore::new();
    let id = store.add("xy", Tensor::from_vec(vec![1.0, -2.0]));
    let mut opt = Adam::new(config, &store).unwrap();
    let mut theta = [1.0f64, -2.0];
    let (mut m, mut v) = ([0.0f64; 2], [0.0f64; 2]);
    for step in 1..=10 {
        let g = grad(store.value(id).data()[0], store.value(id).data()[1]);
        store.get_mut(id).grad = Tensor::from_vec(vec![g.0, g.1]);
        opt.step(&mut store, lr).unwrap();

        let g = grad(theta[0], theta[1]);
        for (i, gi) in [g.0, g.1].into_iter().enumerate() {
            let gi = if config.decoupled {
                theta[i] -= lr * config.weight_decay * theta[i];
                gi
            } else {
                gi + config.weight_decay * theta[i]
            };
            m[i] = config.beta1 * m[i] + (1.0 - config.beta1) * gi;
            v[i] = config.beta2 * v[i] + (1.0 - config.beta2) * gi * gi;
            let mh = m[i] / (1.0 - config.beta1.powi(step));
            let vh = v[i] / (1.0 - config.beta2.powi(step));
            theta[i] -= lr * mh / (vh.sqrt() + config.eps);
        }
    }
    let got = store.value(id).data();
    (0..2).all(|i| (got[i] - theta[i]).abs() <= 1e-12)
}

#[test]
fn criterion_2_oracle_suite() {
    let t = Instant::now();
    let mut r = rng(40);
    let checks = [
        ("features", oracle_features(&mut r)),
        ("threshold", oracle_threshold(&mut r)),
        ("binning", oracle_binning(&mut r)),
        ("nmse", oracle_nmse(&mut r)),
        ("adamw", oracle_optimizer(AdamConfig::adamw())),
        ("adam", oracle_optimizer(AdamConfig { weight_decay: 0.01, ..AdamConfig::adam() })),
    ];
    let elapsed = t.elapsed();
    let failed: Vec<&str> = checks.iter().filter(|c| !c.1).map(|c| c.0).collect();
    let pass = failed.is_empty() && elapsed < Duration::from_secs(60);
    report(
        2,
        pass,
        &format!("{} oracles, failed {:?}, {:.1}s", checks.len(), failed, elapsed.as_secs_f64()),
    );
    assert!(pass);
}

// ---------------------------------------------------------------- criterion 3

fn plan_invariants(l: usize, rho: f64, seed: u64) -> bool {
    let mut r = rng(seed);
    let batch = 3;
    let plans: Vec<MaskPlan> = (0..batch).map(|_| make_mask_plan(l, rho, &mut r).unwrap()).collect();
    let keep = keep_count(l, rho);
    let want_keep = ((l as f64 * (1.0 - rho)).floor() as usize).max(1);
    let counts = keep == want_keep
        && plans.iter().all(|p| {
            p.keep() == keep
                && p.masked() == l - keep
                && p.binary_mask.iter().filter(|&&b| b == 0).count() == keep
        });
    let sorted = plans.iter().all(|p| {
        p.ids_shuffle.windows(2).all(|w| p.noise[w[0]] <= p.noise[w[1]])
            && p.ids_keep == p.ids_shuffle[..keep]
            && (0..l).all(|i| p.ids_shuffle[p.ids_restore[i]] == i)
    });
    // tokens carry their own index so gathers can be traced
    let d = 2;
    let tokens = |offset: f64| {
        let data = (0..batch * l).flat_map(|i| [offset + (i % l) as f64, -((i % l) as f64)]).collect();
        Tensor::new(&[batch, l, d], data).unwrap()
    };
    let csi = apply_mask(&tokens(0.0), &plans).unwrap();
    let mp = apply_mask(&tokens(1000.0), &plans).unwrap();
    let shared = csi
        .data()
        .chunks(d)
        .zip(mp.data().chunks(d))
        .all(|(a, b)| a[0] + 1000.0 == b[0] && a[1] == b[1]);
    let mask_token = [-7.0, -7.0];
    let restored = restore_sequence(&csi, &mask_token, &plans).unwrap();
    let round_trip = plans.iter().enumerate().all(|(b, p)| {
        (0..l).all(|i| {
            let row = &restored.data()[(b * l + i) * d..(b * l + i + 1) * d];
            if p.is_masked(i) {
                row == mask_token
            } else {
                row == [i as f64, -(i as f64)]
            }
        })
    });
    counts && sorted && shared && round_trip
}

#[test]
fn criterion_3_masking_suite() {
    let t = Instant::now();
    let rhos: Vec<f64> = (0..20).map(|i| i as f64 * 0.05).chain([0.75, 0.9, 0.95, 0.99]).collect();
    let mut cases = 0;
    let mut failures = Vec::new();
    for l in 1..=64 {
        for &rho in &rhos {
            for seed in 0..4 {
                cases += 1;
                if !plan_invariants(l, rho, (l as u64) << 16 | seed) {
                    failures.push((l, rho));
                }
            }
        }
    }
    let elapsed = t.elapsed();
    let pass = failures.is_empty() && elapsed < Duration::from_secs(30);
    report(
        3,
        pass,
        &format!("{cases} plans, {} failures {:?}, {:.1}s", failures.len(), &failures[..failures.len().min(5)], elapsed.as_secs_f64()),
    );
    assert!(pass);
}

// ---------------------------------------------------------------- criterion 4

#[test]
fn criterion_4_c2p_training() {
    let run = c2p();
    let (_, test) = dataset().split(TEST_FRACTION);
    let pairs = c2p_pairs(test, 4, &mut rng(1)).unwrap();
    let (mut truth, mut recon) = (Vec::new(), Vec::new());
    for p in &pairs {
        let z = run.model.encode(&p.pdp).unwrap();
        truth.extend_from_slice(&p.pdp.bins);
        recon.extend(run.model.decode(&z).unwrap().bins);
    }
    let nmse = nmse_db(&recon, &truth).unwrap();
    let ratio = run.last_loss / run.first_loss;
    let pass = ratio < 0.2 && nmse < -10.0;
    report(
        4,
        pass,
        &format!(
            "loss ratio {:.4} (epoch 1 {:.4e}, final {:.4e}), held-out reconstruction NMSE {:.2} dB, {:.0}s",
            ratio,
            run.first_loss,
            run.last_loss,
            nmse,
            run.elapsed.as_secs_f64()
        ),
    );
    assert!(pass);
}

// ---------------------------------------------------------------- criteria 5 and 6

#[test]
fn criterion_5_multipath_beats_baseline() {
    let (runs, elapsed) = repeats();
    let mut lines = Vec::new();
    let mut every_repeat = true;
    let (mut proposed_sum, mut case2_sum) = (0.0, 0.0);
    for r in runs {
        let base = r.get(FusionMode::Baseline, FeatureCase::Proposed).masked_db;
        let prop = r.get(FusionMode::Proposed, FeatureCase::Proposed).masked_db;
        let case2 = r.get(FusionMode::Proposed, FeatureCase::Case2).masked_db;
        every_repeat &= prop < base;
        proposed_sum += prop;
        case2_sum += case2;
        lines.push(format!("seed {}: baseline {base:.2} proposed {prop:.2} case2 {case2:.2} gap {:.2}", r.seed, base - prop));
    }
    let n = runs.len() as f64;
    let pass = every_repeat && proposed_sum / n <= case2_sum / n;
    report(
        5,
        pass,
        &format!(
            "masked NMSE dB at {KNOWN_PCT}% known; {}; mean proposed {:.2} vs case2 {:.2}; {:.0}s for all trainings",
            lines.join("; "),
            proposed_sum / n,
            case2_sum / n,
            elapsed.as_secs_f64()
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_6_cross_attention_beats_concat() {
    let (runs, _) = repeats();
    let mut lines = Vec::new();
    let mut pass = true;
    for r in runs {
        let concat = r.get(FusionMode::Concat, FeatureCase::Proposed).masked_db;
        let prop = r.get(FusionMode::Proposed, FeatureCase::Proposed).masked_db;
        let swapped = r.get(FusionMode::Swapped, FeatureCase::Proposed).masked_db;
        pass &= prop < concat && swapped < concat;
        lines.push(format!(
            "seed {}: concat {concat:.2} proposed {prop:.2} swapped {swapped:.2} gap {:.2}",
            r.seed,
            concat - prop.min(swapped)
        ));
    }
    report(6, pass, &format!("masked NMSE dB at {KNOWN_PCT}% known; {}", lines.join("; ")));
    assert!(pass);
}

// ---------------------------------------------------------------- criterion 7

/// The 28 GHz preset drawn from the training seed, so every realization
/// keeps its path geometry and only the carrier and amplitudes change.
fn aligned_28ghz() -> Dataset {
    let mut g = GenerateConfig::default();
    g.carrier = CarrierConfig::preset_28ghz().with_subcarriers(g.carrier.n_subcarriers);
    generate(&g, N_SAMPLES, DATA_SEED).unwrap()
}

/// `ds` with every path's angles redrawn uniformly over the prior's ranges;
/// delays, amplitudes and PDPs are untouched.
fn geometry_randomized(ds: &Dataset, seed: u64) -> Dataset {
    let s = GenerateConfig::default().scenario;
    let mut r = rng(seed);
    let mut uniform = |(lo, hi): (f64, f64)| lo + (hi - lo) * r.random::<f64>();
    let samples = ds
        .samples
        .iter()
        .map(|x| {
            let mut paths = x.paths.clone().unwrap();
            for p in &mut paths.paths {
                p.aoa_az = uniform(s.aoa_az);
                p.aoa_el = uniform(s.aoa_el);
                p.aod_az = uniform(s.aod_az);
                p.aod_el = uniform(s.aod_el);
            }
            realize(paths, &ds.geometry, &ds.carrier, ds.binning, false).unwrap()
        })
        .collect();
    Dataset { samples, ..ds.clone() }
}

#[test]
fn criterion_7_zero_shot_frequency() {
    let (runs, _) = repeats();
    let model = &runs[0].get(FusionMode::Proposed, FeatureCase::Proposed).model;
    let score = |ds: &Dataset| {
        let (_, fte) = split_features(&model.config, ds);
        masked_nmse(model, ds.split(TEST_FRACTION).1, fte.as_ref())
    };
    let home = score(dataset());
    let aligned = aligned_28ghz();
    let random = geometry_randomized(&aligned, 70);
    let (a, g) = (score(&aligned) - home, score(&random) - home);
    let pass = a < g && a.is_finite() && g.is_finite();
    report(
        7,
        pass,
        &format!(
            "3.5 GHz {home:.2} dB; degradation at 28 GHz aligned {a:+.2} dB, geometry-randomized {g:+.2} dB (angles redrawn, attenuation {:.3})",
            GenerateConfig::default().scenario.carrier_gain(28e9)
        ),
    );
    assert!(pass);
}

// ---------------------------------------------------------------- criterion 8

#[test]
fn criterion_8_timing_harness() {
    let (runs, _) = repeats();
    let proposed = &runs[0].get(FusionMode::Proposed, FeatureCase::Proposed).model;
    let baseline = &runs[0].get(FusionMode::Baseline, FeatureCase::Proposed).model;
    let (_, test) = dataset().split(TEST_FRACTION);
    let (_, fte) = split_features(&proposed.config, dataset());
    let cfg = BenchConfig {
        percentages: vec![5.0, 10.0, 25.0],
        ..Default::default()
    };
    let rows = bench(
        proposed,
        CeData { samples: test, features: fte.as_ref() },
        baseline,
        CeData { samples: test, features: None },
        &cfg,
    )
    .unwrap();
    let table = bench_table(&rows);
    let pass = rows.len() == cfg.percentages.len()
        && rows.iter().all(|r| r.runs >= 200 && r.overhead_ms().is_finite())
        && !table.is_empty();
    let overheads: Vec<String> = rows.iter().map(|r| format!("{}%: {:+.3} ms", r.percentage, r.overhead_ms())).collect();
    let _ = std::io::stderr().write_all(table.as_bytes());
    report(
        8,
        pass,
        &format!("{} timed runs per cell, {} warmup; fusion overhead {}", cfg.runs, cfg.warmup, overheads.join(", ")),
    );
    assert!(pass);
}
