//! C ABI over `chanex`.
//!
//! Every fallible function returns a [`ChanexStatus`]. On failure a message
//! describing the error can be read with [`chanex_last_error`] from the same
//! thread. Objects are opaque handles released with their `*_free` function.

use chanex::c2p::CsiToPdp;
use chanex::checkpoint::{load_c2p, load_extrapolator, ExtrapolatorCheckpoint};
use chanex::dataset::{generate, Dataset, GenerateConfig};
use chanex::harness::{evaluate, features_for, EvalConfig};
use chanex::masking::MaskPlan;
use chanex::tensor::Tensor;
use chanex::train::CeData;
use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ChanexStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    ShapeMismatch = 3,
    MalformedFile = 4,
    Io = 5,
    Empty = 6,
    NonFinite = 7,
    ContractViolation = 8,
    Panic = 9,
}

/// A synthetic or imported dataset.
pub struct ChanexDataset(Dataset);

/// A trained CSI-to-PDP decoder.
pub struct ChanexC2p(CsiToPdp);

/// A trained channel extrapolator.
pub struct ChanexModel(ExtrapolatorCheckpoint);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

enum Failure {
    Null(&'static str),
    Arg(String),
    Lib(chanex::Error),
}

impl From<chanex::Error> for Failure {
    fn from(e: chanex::Error) -> Self {
        Failure::Lib(e)
    }
}

impl Failure {
    fn status(&self) -> ChanexStatus {
        use chanex::Error as E;
        match self {
            Failure::Null(_) => ChanexStatus::NullPointer,
            Failure::Arg(_) => ChanexStatus::InvalidArgument,
            Failure::Lib(e) => match e {
                E::Shape { .. } | E::Index { .. } => ChanexStatus::ShapeMismatch,
                E::Config(_) | E::DelayOutOfRange { .. } => ChanexStatus::InvalidArgument,
                E::Format(_) => ChanexStatus::MalformedFile,
                E::Io(_) => ChanexStatus::Io,
                E::Empty | E::EmptyProfile => ChanexStatus::Empty,
                E::NonFiniteLoss { .. } => ChanexStatus::NonFinite,
                E::Contract(_) => ChanexStatus::ContractViolation,
            },
        }
    }

    fn message(&self) -> String {
        match self {
            Failure::Null(what) => format!("{what} is null"),
            Failure::Arg(m) => m.clone(),
            Failure::Lib(e) => e.to_string(),
        }
    }
}

type Outcome = std::result::Result<(), Failure>;

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior NULs replaced");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Outcome) -> ChanexStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => ChanexStatus::Ok,
        Ok(Err(fail)) => {
            set_error(fail.message());
            fail.status()
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            ChanexStatus::Panic
        }
    }
}

unsafe fn handle<'a, T>(p: *const T, what: &'static str) -> std::result::Result<&'a T, Failure> {
    p.as_ref().ok_or(Failure::Null(what))
}

unsafe fn text<'a>(p: *const c_char, what: &'static str) -> std::result::Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure::Arg(format!("{what} is not valid UTF-8")))
}

unsafe fn input<'a, T>(p: *const T, len: usize, what: &'static str) -> std::result::Result<&'a [T], Failure> {
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn output<'a, T>(p: *mut T, len: usize, what: &'static str) -> std::result::Result<&'a mut [T], Failure> {
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn put<T>(p: *mut T, v: T, what: &'static str) -> Outcome {
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    p.write(v);
    Ok(())
}

fn expect_len(what: &str, got: usize, want: usize) -> Outcome {
    if got == want {
        Ok(())
    } else {
        Err(Failure::Arg(format!("{what} has length {got}, expected {want}")))
    }
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn chanex_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or NULL. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn chanex_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

/// Draws `n_samples` realizations. `config_toml` may be NULL for the
/// default desk configuration.
///
/// # Safety
/// `config_toml` must be NULL or a NUL-terminated string; `out` must be
/// writable.
#[no_mangle]
pub unsafe extern "C" fn chanex_dataset_generate(
    config_toml: *const c_char,
    n_samples: usize,
    seed: u64,
    out: *mut *mut ChanexDataset,
) -> ChanexStatus {
    guard(|| {
        let cfg: GenerateConfig = if config_toml.is_null() {
            GenerateConfig::default()
        } else {
            toml::from_str(text(config_toml, "config_toml")?).map_err(|e| Failure::Arg(e.to_string()))?
        };
        let ds = generate(&cfg, n_samples, seed)?;
        put(out, Box::into_raw(Box::new(ChanexDataset(ds))), "out")
    })
}

/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn chanex_dataset_load(path: *const c_char, out: *mut *mut ChanexDataset) -> ChanexStatus {
    guard(|| {
        let ds = Dataset::load(text(path, "path")?)?;
        put(out, Box::into_raw(Box::new(ChanexDataset(ds))), "out")
    })
}

/// # Safety
/// `dataset` must come from this library; `path` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn chanex_dataset_save(dataset: *const ChanexDataset, path: *const c_char) -> ChanexStatus {
    guard(|| {
        handle(dataset, "dataset")?.0.save(text(path, "path")?)?;
        Ok(())
    })
}

/// # Safety
/// `dataset` must be NULL or come from this library, and not be used again.
#[no_mangle]
pub unsafe extern "C" fn chanex_dataset_free(dataset: *mut ChanexDataset) {
    if !dataset.is_null() {
        drop(Box::from_raw(dataset));
    }
}

/// Sample count and CSI dimensions.
///
/// # Safety
/// `dataset` must come from this library; every out pointer must be writable.
#[no_mangle]
pub unsafe extern "C" fn chanex_dataset_shape(
    dataset: *const ChanexDataset,
    samples: *mut usize,
    n_rx: *mut usize,
    n_tx: *mut usize,
    n_subcarriers: *mut usize,
) -> ChanexStatus {
    guard(|| {
        let ds = &handle(dataset, "dataset")?.0;
        put(samples, ds.len(), "samples")?;
        put(n_rx, ds.geometry.n_rx, "n_rx")?;
        put(n_tx, ds.geometry.n_tx, "n_tx")?;
        put(n_subcarriers, ds.carrier.n_subcarriers, "n_subcarriers")
    })
}

/// Copies the CSI of sample `index` into `re` and `im`, each of length
/// `n_rx·n_tx·n_subcarriers`, indexed `(m·n_tx + k)·n_subcarriers + n`.
///
/// # Safety
/// `dataset` must come from this library; `re` and `im` must hold `len`
/// values.
#[no_mangle]
pub unsafe extern "C" fn chanex_dataset_csi(
    dataset: *const ChanexDataset,
    index: usize,
    re: *mut f64,
    im: *mut f64,
    len: usize,
) -> ChanexStatus {
    guard(|| {
        let ds = &handle(dataset, "dataset")?.0;
        let s = ds.samples.get(index).ok_or(chanex::Error::Index { index, len: ds.len() })?;
        expect_len("csi buffer", len, s.csi.re.len())?;
        output(re, len, "re")?.copy_from_slice(&s.csi.re);
        output(im, len, "im")?.copy_from_slice(&s.csi.im);
        Ok(())
    })
}

/// Copies the ground-truth PDP of antenna pair `(m, k)` of sample `index`.
///
/// # Safety
/// `dataset` must come from this library; `out` must hold `len` values.
#[no_mangle]
pub unsafe extern "C" fn chanex_dataset_pdp(
    dataset: *const ChanexDataset,
    index: usize,
    m: usize,
    k: usize,
    out: *mut f64,
    len: usize,
) -> ChanexStatus {
    guard(|| {
        let ds = &handle(dataset, "dataset")?.0;
        let s = ds.samples.get(index).ok_or(chanex::Error::Index { index, len: ds.len() })?;
        if m >= s.csi.n_rx || k >= s.csi.n_tx {
            return Err(Failure::Arg(format!("antenna pair ({m}, {k}) is outside the array")));
        }
        let pdp = s
            .pdps
            .get(m * s.csi.n_tx + k)
            .ok_or_else(|| Failure::Arg("dataset carries no PDPs".into()))?;
        expect_len("pdp buffer", len, pdp.bins.len())?;
        output(out, len, "out")?.copy_from_slice(&pdp.bins);
        Ok(())
    })
}

/// # Safety
/// `path` must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn chanex_c2p_load(path: *const c_char, out: *mut *mut ChanexC2p) -> ChanexStatus {
    guard(|| {
        let m = load_c2p(text(path, "path")?)?;
        put(out, Box::into_raw(Box::new(ChanexC2p(m))), "out")
    })
}

/// # Safety
/// `model` must be NULL or come from this library, and not be used again.
#[no_mangle]
pub unsafe extern "C" fn chanex_c2p_free(model: *mut ChanexC2p) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Length of the CSI input (`2·n_subcarriers`) and of the PDP output.
///
/// # Safety
/// `model` must come from this library; out pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn chanex_c2p_shape(model: *const ChanexC2p, csi_len: *mut usize, n_bins: *mut usize) -> ChanexStatus {
    guard(|| {
        let c = &handle(model, "model")?.0.config;
        put(csi_len, c.csi_dim, "csi_len")?;
        put(n_bins, c.n_bins, "n_bins")
    })
}

/// Infers the PDP of one antenna pair from its CSI across subcarriers
/// (real parts, then imaginary parts).
///
/// # Safety
/// `model` must come from this library; buffers must hold the stated lengths.
#[no_mangle]
pub unsafe extern "C" fn chanex_c2p_infer(
    model: *const ChanexC2p,
    csi: *const f64,
    csi_len: usize,
    pdp: *mut f64,
    pdp_len: usize,
) -> ChanexStatus {
    guard(|| {
        let m = &handle(model, "model")?.0;
        expect_len("csi", csi_len, m.config.csi_dim)?;
        expect_len("pdp buffer", pdp_len, m.config.n_bins)?;
        let p = m.infer_pdp(input(csi, csi_len, "csi")?)?;
        output(pdp, pdp_len, "pdp")?.copy_from_slice(&p.bins);
        Ok(())
    })
}

/// # Safety
/// `path` must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn chanex_model_load(path: *const c_char, out: *mut *mut ChanexModel) -> ChanexStatus {
    guard(|| {
        let m = load_extrapolator(text(path, "path")?)?;
        put(out, Box::into_raw(Box::new(ChanexModel(m))), "out")
    })
}

/// # Safety
/// `model` must be NULL or come from this library, and not be used again.
#[no_mangle]
pub unsafe extern "C" fn chanex_model_free(model: *mut ChanexModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Grid size, patch edge, token count and multipath channels (0 for the
/// baseline).
///
/// # Safety
/// `model` must come from this library; out pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn chanex_model_shape(
    model: *const ChanexModel,
    n_rx: *mut usize,
    n_tx: *mut usize,
    patch: *mut usize,
    tokens: *mut usize,
    mp_channels: *mut usize,
) -> ChanexStatus {
    guard(|| {
        let c = &handle(model, "model")?.0.model.config;
        put(n_rx, c.n_rx, "n_rx")?;
        put(n_tx, c.n_tx, "n_tx")?;
        put(patch, c.patch, "patch")?;
        put(tokens, c.tokens(), "tokens")?;
        put(mp_channels, if c.fusion.uses_multipath() { c.mp_channels() } else { 0 }, "mp_channels")
    })
}

/// Reconstructs one `[2, n_rx, n_tx]` CSI grid from the patches listed in
/// `known` (row-major token indices). Known cells are copied to `out`
/// unchanged. `multipath` is `[mp_channels, n_rx, n_tx]` in raw units and
/// may be NULL for the baseline.
///
/// # Safety
/// `model` must come from this library; buffers must hold the lengths
/// implied by [`chanex_model_shape`].
#[no_mangle]
pub unsafe extern "C" fn chanex_model_extrapolate(
    model: *const ChanexModel,
    csi: *const f64,
    multipath: *const f64,
    known: *const usize,
    n_known: usize,
    out: *mut f64,
) -> ChanexStatus {
    guard(|| {
        let m = &handle(model, "model")?.0.model;
        let c = &m.config;
        let cells = c.n_rx * c.n_tx;
        let grid = Tensor::new(&[1, 2, c.n_rx, c.n_tx], input(csi, 2 * cells, "csi")?.to_vec())?;
        let mp = if c.fusion.uses_multipath() {
            let ch = c.mp_channels();
            Tensor::new(&[1, ch, c.n_rx, c.n_tx], input(multipath, ch * cells, "multipath")?.to_vec())?
        } else {
            Tensor::zeros(&[1, 0, c.n_rx, c.n_tx])
        };
        let plan = MaskPlan::from_known(c.tokens(), input(known, n_known, "known")?)?;
        let y = m.extrapolate(&grid, &mp, &[plan], true)?;
        output(out, 2 * cells, "out")?.copy_from_slice(y.data());
        Ok(())
    })
}

/// Masked-region and full-grid NMSE (dB) on the trailing `test_fraction`
/// of `dataset` at one known-CSI percentage. `c2p` is required when the
/// model was trained on inferred PDPs, and ignored otherwise.
///
/// # Safety
/// Handles must come from this library (`c2p` may be NULL); out pointers
/// must be writable.
#[no_mangle]
pub unsafe extern "C" fn chanex_model_evaluate(
    model: *const ChanexModel,
    dataset: *const ChanexDataset,
    c2p: *const ChanexC2p,
    known_pct: f64,
    mask_seed: u64,
    test_fraction: f64,
    nmse_masked_db: *mut f64,
    nmse_full_db: *mut f64,
) -> ChanexStatus {
    guard(|| {
        let ck = &handle(model, "model")?.0;
        let ds = &handle(dataset, "dataset")?.0;
        if !(test_fraction > 0.0 && test_fraction <= 1.0) {
            return Err(Failure::Arg("test_fraction must lie in (0, 1]".into()));
        }
        let (_, samples) = ds.split(test_fraction);
        let c2p = c2p.as_ref().map(|h| &h.0);
        let f = features_for(&ck.model.config, samples, ck.ground_truth_features, c2p)?;
        let cfg = EvalConfig {
            percentages: vec![known_pct],
            mask_seeds: vec![mask_seed],
            ..EvalConfig::default()
        };
        let data = CeData {
            samples,
            features: f.as_ref(),
        };
        let row = evaluate(&ck.model, data, &cfg, "model", ck.model.config.fusion.as_str())?.remove(0);
        put(nmse_masked_db, row.nmse_masked_db, "nmse_masked_db")?;
        put(nmse_full_db, row.nmse_full_db, "nmse_full_db")
    })
}
