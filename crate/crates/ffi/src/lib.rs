//! C ABI over the distgan simulator.
//!
//! Every function returns a [`DgStatus`]; on failure the message is available
//! from [`dg_last_error`] on the same thread. Networks are opaque handles
//! owned by the caller and released with [`dg_network_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use distgan::harness::{run_experiment, ExperimentConfig, Overrides};
use distgan::metrics::mode_coverage;
use distgan::nn::gradcheck::{self, GradcheckOptions};
use distgan::nn::{Matrix, Network, NetworkSpec, Preset};
use distgan::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DgStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    Config = 4,
    Shape = 5,
    Numeric = 6,
    Io = 7,
    Panic = 8,
}

/// Which network of a preset to build.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DgRole {
    Generator = 0,
    Discriminator = 1,
}

/// Opaque network handle.
pub struct DgNetwork {
    inner: Network,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let text = msg.into().replace('\0', " ");
    let c = CString::new(text).expect("interior nul removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(err: &Error) -> DgStatus {
    match err {
        Error::Shape { .. } | Error::Layout => DgStatus::Shape,
        Error::NonFinite { .. } | Error::NonFiniteValue(_) => DgStatus::Numeric,
        Error::Io(_) | Error::Csv(_) | Error::MissingFile(_) | Error::Idx { .. } => DgStatus::Io,
        Error::InvalidArgument(_) => DgStatus::InvalidArgument,
        _ => DgStatus::Config,
    }
}

fn fail(err: Error) -> DgStatus {
    let status = status_of(&err);
    set_error(err.to_string());
    status
}

fn guard(f: impl FnOnce() -> DgStatus) -> DgStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(_) => {
            set_error("internal panic");
            DgStatus::Panic
        }
    }
}

unsafe fn read_str<'a>(p: *const c_char) -> Result<&'a str, DgStatus> {
    if p.is_null() {
        set_error("null string argument");
        return Err(DgStatus::NullPointer);
    }
    CStr::from_ptr(p).to_str().map_err(|_| {
        set_error("string argument is not valid UTF-8");
        DgStatus::InvalidUtf8
    })
}

macro_rules! try_status {
    ($e:expr) => {
        match $e {
            Ok(v) => v,
            Err(s) => return s,
        }
    };
}

macro_rules! non_null {
    ($($p:expr),+) => {
        if $($p.is_null())||+ {
            set_error("null pointer argument");
            return DgStatus::NullPointer;
        }
    };
}

/// Message for the last failure on this thread, or null. Valid until the
/// next failing call on the same thread.
#[no_mangle]
pub extern "C" fn dg_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static nul-terminated string.
#[no_mangle]
pub extern "C" fn dg_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

fn boxed(net: Network, out: *mut *mut DgNetwork) -> DgStatus {
    unsafe { *out = Box::into_raw(Box::new(DgNetwork { inner: net })) };
    DgStatus::Ok
}

/// Builds a preset network (`"ring"` or `"mnist"`). For the generator,
/// `input_dim` is the noise size and `output_dim` the sample size; for the
/// discriminator `input_dim` is the sample size and `output_dim` is ignored.
///
/// # Safety
/// `preset` must be a nul-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn dg_network_from_preset(
    preset: *const c_char,
    role: DgRole,
    input_dim: usize,
    hidden: usize,
    output_dim: usize,
    slope: f64,
    seed: u64,
    out: *mut *mut DgNetwork,
) -> DgStatus {
    guard(|| {
        non_null!(out);
        let name = try_status!(read_str(preset));
        let preset = match name {
            "ring" => Preset::Ring,
            "mnist" => Preset::Mnist,
            other => return fail(Error::InvalidArgument(format!("unknown preset {other:?}"))),
        };
        let spec = match role {
            DgRole::Generator => preset.generator(input_dim, hidden, output_dim),
            DgRole::Discriminator => preset.discriminator(input_dim, hidden, slope),
        };
        match spec.and_then(|s| Network::build(s, seed)) {
            Ok(net) => boxed(net, out),
            Err(e) => fail(e),
        }
    })
}

/// Builds a network from a TOML architecture document.
///
/// # Safety
/// `spec_toml` must be a nul-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn dg_network_from_spec_toml(
    spec_toml: *const c_char,
    seed: u64,
    out: *mut *mut DgNetwork,
) -> DgStatus {
    guard(|| {
        non_null!(out);
        let text = try_status!(read_str(spec_toml));
        match NetworkSpec::from_toml(text).and_then(|s| Network::build(s, seed)) {
            Ok(net) => boxed(net, out),
            Err(e) => fail(e),
        }
    })
}

/// # Safety
/// `net` must come from this library and not be used afterwards. Null is a no-op.
#[no_mangle]
pub unsafe extern "C" fn dg_network_free(net: *mut DgNetwork) {
    if !net.is_null() {
        drop(Box::from_raw(net));
    }
}

/// # Safety
/// `net` must be a live handle; the out pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn dg_network_dims(
    net: *const DgNetwork,
    input_dim: *mut usize,
    output_dim: *mut usize,
    param_count: *mut usize,
) -> DgStatus {
    guard(|| {
        non_null!(net, input_dim, output_dim, param_count);
        let n = &(*net).inner;
        *input_dim = n.input_dim();
        *output_dim = n.output_dim();
        *param_count = n.params().len();
        DgStatus::Ok
    })
}

/// Copies the flat parameter vector into `out` (`len` must equal the
/// parameter count).
///
/// # Safety
/// `out` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn dg_network_params(net: *const DgNetwork, out: *mut f64, len: usize) -> DgStatus {
    guard(|| {
        non_null!(net, out);
        let values = (*net).inner.params().values();
        if values.len() != len {
            return fail(Error::shape("parameter buffer", values.len(), len));
        }
        std::slice::from_raw_parts_mut(out, len).copy_from_slice(values);
        DgStatus::Ok
    })
}

/// Forward pass over `rows` row-major inputs of the network's input width.
/// `output` must hold `rows * output_dim` doubles.
///
/// # Safety
/// Buffers must be valid for the stated lengths.
#[no_mangle]
pub unsafe extern "C" fn dg_network_forward(
    net: *const DgNetwork,
    input: *const f64,
    rows: usize,
    cols: usize,
    output: *mut f64,
    output_len: usize,
) -> DgStatus {
    guard(|| {
        non_null!(net, input, output);
        let n = &(*net).inner;
        if cols != n.input_dim() {
            return fail(Error::shape("forward input width", n.input_dim(), cols));
        }
        if output_len != rows * n.output_dim() {
            return fail(Error::shape("forward output buffer", rows * n.output_dim(), output_len));
        }
        let data = std::slice::from_raw_parts(input, rows * cols).to_vec();
        let x = try_status!(Matrix::new(rows, cols, data).map_err(fail));
        match n.forward(&x) {
            Ok(y) => {
                std::slice::from_raw_parts_mut(output, output_len).copy_from_slice(y.as_slice());
                DgStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// Mode coverage of `n` samples against `m` centers, both row-major with `dim` columns.
///
/// # Safety
/// Buffers must be valid for the stated lengths; out pointers writable.
#[no_mangle]
pub unsafe extern "C" fn dg_mode_coverage(
    samples: *const f64,
    n: usize,
    centers: *const f64,
    m: usize,
    dim: usize,
    sigma: f64,
    threshold_count: usize,
    covered_modes: *mut usize,
    quality: *mut f64,
) -> DgStatus {
    guard(|| {
        non_null!(samples, centers, covered_modes, quality);
        let s = try_status!(Matrix::new(n, dim, std::slice::from_raw_parts(samples, n * dim).to_vec()).map_err(fail));
        let c = try_status!(Matrix::new(m, dim, std::slice::from_raw_parts(centers, m * dim).to_vec()).map_err(fail));
        match mode_coverage(&s, &c, sigma, threshold_count) {
            Ok(r) => {
                *covered_modes = r.covered_modes;
                *quality = r.high_quality_fraction;
                DgStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// Finite-difference gradient check over `trials` random networks. Returns
/// `DG_STATUS_NUMERIC` when the worst relative error reaches tolerance.
///
/// # Safety
/// `max_relative_error` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dg_gradcheck(seed: u64, trials: usize, max_relative_error: *mut f64) -> DgStatus {
    guard(|| {
        non_null!(max_relative_error);
        let opts = GradcheckOptions {
            seed,
            trials,
            ..Default::default()
        };
        match gradcheck::run(&opts) {
            Ok(r) => {
                *max_relative_error = r.max_relative_error;
                if r.passed() {
                    DgStatus::Ok
                } else {
                    set_error(format!("max relative error {:e} above tolerance", r.max_relative_error));
                    DgStatus::Numeric
                }
            }
            Err(e) => fail(e),
        }
    })
}

/// Runs an experiment from a TOML config document. `out_dir` may be null to
/// use the config's directory. `exit_code` receives the CLI-equivalent code.
///
/// # Safety
/// Strings must be nul-terminated; `exit_code` writable.
#[no_mangle]
pub unsafe extern "C" fn dg_run_experiment(
    config_toml: *const c_char,
    out_dir: *const c_char,
    exit_code: *mut i32,
) -> DgStatus {
    guard(|| {
        non_null!(exit_code);
        let text = try_status!(read_str(config_toml));
        let out = if out_dir.is_null() {
            None
        } else {
            Some(PathBuf::from(try_status!(read_str(out_dir))))
        };
        let cfg = match ExperimentConfig::from_toml(text) {
            Ok(c) => c,
            Err(e) => {
                *exit_code = distgan::harness::exit_code(&e);
                return fail(e);
            }
        };
        let overrides = Overrides {
            out,
            ..Default::default()
        };
        match run_experiment(cfg, &overrides) {
            Ok(report) => {
                *exit_code = report.exit_code();
                DgStatus::Ok
            }
            Err(f) => {
                *exit_code = f.exit_code();
                fail(f.error)
            }
        }
    })
}
