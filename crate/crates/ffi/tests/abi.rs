use chanex::c2p::{C2pConfig, CsiToPdp};
use chanex::channel::{ArrayGeometry, CarrierConfig};
use chanex::checkpoint::{save_c2p, save_extrapolator, ExtrapolatorCheckpoint};
use chanex::dataset::GenerateConfig;
use chanex::features::FeatureCase;
use chanex::harness::{evaluate, features_for, EvalConfig};
use chanex::masking::MaskPlan;
use chanex::model::{Extrapolator, ExtrapolatorConfig, FusionMode};
use chanex::tensor::Tensor;
use chanex::train::{gather_inputs, CeData};
use chanex_ffi::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::ffi::{CStr, CString};
use std::path::Path;
use std::ptr;

fn small_config() -> GenerateConfig {
    GenerateConfig {
        geometry: ArrayGeometry {
            n_rx: 4,
            n_tx: 4,
            ..ArrayGeometry::default()
        },
        carrier: CarrierConfig::default().with_subcarriers(8),
        ..GenerateConfig::default()
    }
}

fn cpath(p: &Path) -> CString {
    CString::new(p.to_str().unwrap()).unwrap()
}

fn last_error() -> String {
    let p = chanex_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn make_dataset(n: usize) -> *mut ChanexDataset {
    let toml = CString::new(toml::to_string(&small_config()).unwrap()).unwrap();
    let mut ds = ptr::null_mut();
    let st = unsafe { chanex_dataset_generate(toml.as_ptr(), n, 7, &mut ds) };
    assert_eq!(st, ChanexStatus::Ok);
    ds
}

fn tiny_model(fusion: FusionMode) -> Extrapolator {
    let cfg = ExtrapolatorConfig {
        n_rx: 4,
        n_tx: 4,
        embed_dim: 8,
        heads: 2,
        encoder_depth: 1,
        decoder_depth: 1,
        decoder_dim: 8,
        ffn_ratio: 2,
        fusion,
        feature_case: FeatureCase::Proposed,
        ..ExtrapolatorConfig::default()
    };
    Extrapolator::new(cfg, &mut ChaCha8Rng::seed_from_u64(3)).unwrap()
}

#[test]
fn dataset_shape_and_contents_survive_the_boundary() {
    let dir = tempfile::tempdir().unwrap();
    let ds = make_dataset(5);
    let (mut n, mut rx, mut tx, mut sc) = (0, 0, 0, 0);
    assert_eq!(unsafe { chanex_dataset_shape(ds, &mut n, &mut rx, &mut tx, &mut sc) }, ChanexStatus::Ok);
    assert_eq!((n, rx, tx, sc), (5, 4, 4, 8));

    let path = cpath(&dir.path().join("d.bin"));
    assert_eq!(unsafe { chanex_dataset_save(ds, path.as_ptr()) }, ChanexStatus::Ok);
    let mut back = ptr::null_mut();
    assert_eq!(unsafe { chanex_dataset_load(path.as_ptr(), &mut back) }, ChanexStatus::Ok);

    let len = rx * tx * sc;
    let (mut re, mut im) = (vec![0.0; len], vec![0.0; len]);
    let (mut re2, mut im2) = (vec![0.0; len], vec![0.0; len]);
    unsafe {
        assert_eq!(chanex_dataset_csi(ds, 4, re.as_mut_ptr(), im.as_mut_ptr(), len), ChanexStatus::Ok);
        assert_eq!(chanex_dataset_csi(back, 4, re2.as_mut_ptr(), im2.as_mut_ptr(), len), ChanexStatus::Ok);
    }
    assert_eq!((&re, &im), (&re2, &im2));
    assert!(re.iter().any(|v| *v != 0.0));

    let mut pdp = vec![0.0; 64];
    assert_eq!(unsafe { chanex_dataset_pdp(ds, 0, 3, 2, pdp.as_mut_ptr(), 64) }, ChanexStatus::Ok);
    assert!(pdp.iter().sum::<f64>() > 0.0);

    assert_eq!(
        unsafe { chanex_dataset_csi(ds, 5, re.as_mut_ptr(), im.as_mut_ptr(), len) },
        ChanexStatus::ShapeMismatch
    );
    assert_eq!(
        unsafe { chanex_dataset_csi(ds, 0, re.as_mut_ptr(), im.as_mut_ptr(), len - 1) },
        ChanexStatus::InvalidArgument
    );
    assert!(last_error().contains("length"));
    unsafe {
        chanex_dataset_free(ds);
        chanex_dataset_free(back);
    }
}

#[test]
fn failures_report_codes_and_messages() {
    let mut ds = ptr::null_mut();
    assert_eq!(unsafe { chanex_dataset_load(ptr::null(), &mut ds) }, ChanexStatus::NullPointer);
    assert!(last_error().contains("path"));

    let missing = CString::new("/nonexistent/chanex/data.bin").unwrap();
    assert_eq!(unsafe { chanex_dataset_load(missing.as_ptr(), &mut ds) }, ChanexStatus::Io);
    assert!(ds.is_null());

    let bad = CString::new("geometry = 3").unwrap();
    assert_eq!(unsafe { chanex_dataset_generate(bad.as_ptr(), 2, 0, &mut ds) }, ChanexStatus::InvalidArgument);

    let dir = tempfile::tempdir().unwrap();
    let junk = dir.path().join("junk.ck");
    std::fs::write(&junk, b"not a checkpoint at all, just bytes").unwrap();
    let mut m = ptr::null_mut();
    assert_eq!(unsafe { chanex_model_load(cpath(&junk).as_ptr(), &mut m) }, ChanexStatus::MalformedFile);

    let v = unsafe { CStr::from_ptr(chanex_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
    unsafe { chanex_dataset_free(ptr::null_mut()) };
}

#[test]
fn c2p_inference_matches_the_library() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = C2pConfig::new(64, 8, 1.0 / 160e6);
    cfg.hidden = 16;
    let model = CsiToPdp::new(cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let path = dir.path().join("c2p.ck");
    save_c2p(&model, &path).unwrap();

    let mut h = ptr::null_mut();
    assert_eq!(unsafe { chanex_c2p_load(cpath(&path).as_ptr(), &mut h) }, ChanexStatus::Ok);
    let (mut csi_len, mut bins) = (0, 0);
    assert_eq!(unsafe { chanex_c2p_shape(h, &mut csi_len, &mut bins) }, ChanexStatus::Ok);
    assert_eq!((csi_len, bins), (16, 64));
    let csi: Vec<f64> = (0..16).map(|i| (i as f64 * 0.37).sin()).collect();
    let mut pdp = vec![0.0; 64];
    assert_eq!(unsafe { chanex_c2p_infer(h, csi.as_ptr(), 16, pdp.as_mut_ptr(), 64) }, ChanexStatus::Ok);
    assert_eq!(pdp, model.infer_pdp(&csi).unwrap().bins);
    unsafe { chanex_c2p_free(h) };
}

#[test]
fn extrapolation_and_evaluation_match_the_library() {
    let dir = tempfile::tempdir().unwrap();
    let ds_handle = make_dataset(6);
    let ds = chanex::dataset::generate(&small_config(), 6, 7).unwrap();

    let model = tiny_model(FusionMode::Proposed);
    let path = dir.path().join("m.ck");
    let ckpt = ExtrapolatorCheckpoint {
        model: model.clone(),
        ground_truth_features: true,
    };
    save_extrapolator(&ckpt, &path).unwrap();
    let mut h = ptr::null_mut();
    assert_eq!(unsafe { chanex_model_load(cpath(&path).as_ptr(), &mut h) }, ChanexStatus::Ok);
    let (mut rx, mut tx, mut patch, mut tokens, mut ch) = (0, 0, 0, 0, 0);
    assert_eq!(
        unsafe { chanex_model_shape(h, &mut rx, &mut tx, &mut patch, &mut tokens, &mut ch) },
        ChanexStatus::Ok
    );
    assert_eq!((rx, tx, patch, tokens, ch), (4, 4, 2, 4, 2));

    let feats = features_for(&model.config, &ds.samples, true, None).unwrap();
    let data = CeData {
        samples: &ds.samples,
        features: feats.as_ref(),
    };
    let known = [2usize];
    let plan = MaskPlan::from_known(tokens, &known).unwrap();
    let (csi, mp) = gather_inputs(&model.config, data, &[(1, 3)], std::slice::from_ref(&plan)).unwrap();
    let want = model.extrapolate(&csi, &mp, &[plan], true).unwrap();
    let mut out = vec![0.0; 32];
    let st = unsafe {
        chanex_model_extrapolate(h, csi.data().as_ptr(), mp.data().as_ptr(), known.as_ptr(), 1, out.as_mut_ptr())
    };
    assert_eq!(st, ChanexStatus::Ok);
    assert_eq!(out.as_slice(), want.data());

    let missing_mp = unsafe {
        chanex_model_extrapolate(h, csi.data().as_ptr(), ptr::null(), known.as_ptr(), 1, out.as_mut_ptr())
    };
    assert_eq!(missing_mp, ChanexStatus::NullPointer);

    let (mut masked, mut full) = (0.0, 0.0);
    let st = unsafe { chanex_model_evaluate(h, ds_handle, ptr::null(), 25.0, 1, 1.0, &mut masked, &mut full) };
    assert_eq!(st, ChanexStatus::Ok);
    let cfg = EvalConfig {
        percentages: vec![25.0],
        mask_seeds: vec![1],
        ..EvalConfig::default()
    };
    let rows = evaluate(&model, data, &cfg, "m", "p").unwrap();
    assert_eq!((masked, full), (rows[0].nmse_masked_db, rows[0].nmse_full_db));
    unsafe {
        chanex_model_free(h);
        chanex_dataset_free(ds_handle);
    }
}

#[test]
fn baseline_extrapolation_needs_no_multipath() {
    let dir = tempfile::tempdir().unwrap();
    let model = tiny_model(FusionMode::Baseline);
    let path = dir.path().join("b.ck");
    let ckpt = ExtrapolatorCheckpoint {
        model: model.clone(),
        ground_truth_features: false,
    };
    save_extrapolator(&ckpt, &path).unwrap();
    let mut h = ptr::null_mut();
    assert_eq!(unsafe { chanex_model_load(cpath(&path).as_ptr(), &mut h) }, ChanexStatus::Ok);
    let csi: Vec<f64> = (0..32).map(|i| i as f64 / 10.0 - 1.0).collect();
    let known = [0usize, 3];
    let mut out = vec![0.0; 32];
    let st = unsafe { chanex_model_extrapolate(h, csi.as_ptr(), ptr::null(), known.as_ptr(), 2, out.as_mut_ptr()) };
    assert_eq!(st, ChanexStatus::Ok);
    let plan = MaskPlan::from_known(4, &known).unwrap();
    let grid = Tensor::new(&[1, 2, 4, 4], csi).unwrap();
    let want = model
        .extrapolate(&grid, &Tensor::zeros(&[1, 0, 4, 4]), &[plan], true)
        .unwrap();
    assert_eq!(out.as_slice(), want.data());
    unsafe { chanex_model_free(h) };
}

#[test]
fn header_declares_the_api_and_parses_as_c() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/chanex.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for name in [
        "chanex_last_error",
        "chanex_dataset_generate",
        "chanex_c2p_infer",
        "chanex_model_extrapolate",
        "chanex_model_evaluate",
        "CHANEX_STATUS_PANIC",
    ] {
        assert!(text.contains(name), "{name} missing from header");
    }
    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    match std::process::Command::new(&cc)
        .args(["-fsyntax-only", "-Wall", "-Werror", "-x", "c"])
        .arg(&header)
        .output()
    {
        Ok(o) => assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr)),
        Err(_) => eprintln!("no C compiler at `{cc}`; skipped the syntax check"),
    }
}
