//! C interface to audexplain.
//!
//! Every object crosses the boundary as an opaque pointer created by a
//! constructor such as `axp_audio_load` and released with the matching
//! `axp_*_free`.
//! Fallible calls return an [`AxpStatus`]; on failure the message is kept in
//! thread-local storage and read back with [`axp_last_error`].
//!
//! Strings returned by accessors are owned by the handle they came from and
//! stay valid until that handle is freed.

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;
use std::time::Duration;

use audexplain::decompose::{
    hpss_decompose, load_stem_dir, segment_time, Decomposer, Decomposition,
};
use audexplain::explain::{
    explain_decomposition, render_explanation, top_component, ExplainConfig, Explanation,
    KernelChoice, TopComponent,
};
use audexplain::predict::{ExternalPredictor, LinearClassifier, Predictor};
use audexplain::signal::{load_wav, save_wav, AudioBuffer};
use audexplain::Error;

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AxpStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    Io = 4,
    Audio = 5,
    Decompose = 6,
    Predictor = 7,
    Explain = 8,
    NoPositiveCoefficients = 9,
    Panic = 255,
}

/// Kernel selection for [`AxpExplainConfig`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AxpKernel {
    /// Uniform on exhaustive neighborhoods, exponential otherwise.
    Auto = 0,
    Uniform = 1,
    Exponential = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct AxpExplainConfig {
    pub n_max: usize,
    pub kernel: AxpKernel,
    /// Only read when `kernel` is `Exponential`.
    pub kernel_width: f64,
    pub ridge_lambda: f64,
    pub include_residual: bool,
    pub seed: u64,
}

pub struct AxpAudio {
    inner: AudioBuffer,
}

pub struct AxpDecomposition {
    inner: Decomposition,
    name: String,
    labels: Vec<CString>,
}

pub struct AxpPredictor {
    inner: Box<dyn Predictor>,
}

pub struct AxpExplanation {
    inner: Explanation,
    target: CString,
    labels: Vec<CString>,
    json: CString,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(AxpStatus, String);

impl Failure {
    fn arg(msg: impl Into<String>) -> Self {
        Failure(AxpStatus::InvalidArgument, msg.into())
    }

    fn from_core(status: AxpStatus, e: Error) -> Self {
        let status = match e {
            Error::NoPositiveCoefficients => AxpStatus::NoPositiveCoefficients,
            Error::InvalidArgument(_) => AxpStatus::InvalidArgument,
            Error::Unreadable { .. } | Error::Unwritable { .. } | Error::Io(_) => AxpStatus::Io,
            _ => status,
        };
        Failure(status, e.to_string())
    }
}

fn set_last_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

/// Runs `f`, converting failures and panics into a status code.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> AxpStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            AxpStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_last_error(&msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(&format!("panic: {msg}"));
            AxpStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure(AxpStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(AxpStatus::InvalidUtf8, format!("{what} is not valid UTF-8")))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref()
        .ok_or_else(|| Failure(AxpStatus::NullPointer, format!("{what} is null")))
}

unsafe fn out_ptr<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut()
        .ok_or_else(|| Failure(AxpStatus::NullPointer, format!("{what} is null")))
}

fn cstring(s: &str) -> CString {
    CString::new(s.replace('\0', " ")).unwrap_or_default()
}

unsafe fn free_box<T>(p: *mut T) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// Message of the last failed call on this thread, or null when the most
/// recent status-returning call succeeded. Valid until the next
/// status-returning call on the same thread.
#[no_mangle]
pub extern "C" fn axp_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn axp_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

// Audio

#[no_mangle]
pub unsafe extern "C" fn axp_audio_load(path: *const c_char, out: *mut *mut AxpAudio) -> AxpStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        *out = ptr::null_mut();
        let path = str_arg(path, "path")?;
        let inner = load_wav(path).map_err(|e| Failure::from_core(AxpStatus::Audio, e))?;
        *out = Box::into_raw(Box::new(AxpAudio { inner }));
        Ok(())
    })
}

/// Copies `len` mono samples into a new buffer.
#[no_mangle]
pub unsafe extern "C" fn axp_audio_from_samples(
    samples: *const f32,
    len: usize,
    sample_rate: u32,
    out: *mut *mut AxpAudio,
) -> AxpStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        *out = ptr::null_mut();
        if samples.is_null() {
            return Err(Failure(AxpStatus::NullPointer, "samples is null".into()));
        }
        let data = std::slice::from_raw_parts(samples, len).to_vec();
        let inner = AudioBuffer::new(data, sample_rate).map_err(|e| Failure::from_core(AxpStatus::Audio, e))?;
        *out = Box::into_raw(Box::new(AxpAudio { inner }));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn axp_audio_save(audio: *const AxpAudio, path: *const c_char) -> AxpStatus {
    guard(|| {
        let audio = handle(audio, "audio")?;
        let path = str_arg(path, "path")?;
        save_wav(&audio.inner, path).map_err(|e| Failure::from_core(AxpStatus::Io, e))
    })
}

/// Number of samples, or 0 for a null handle.
#[no_mangle]
pub unsafe extern "C" fn axp_audio_len(audio: *const AxpAudio) -> usize {
    audio.as_ref().map_or(0, |a| a.inner.samples().len())
}

/// Sample rate in Hz, or 0 for a null handle.
#[no_mangle]
pub unsafe extern "C" fn axp_audio_sample_rate(audio: *const AxpAudio) -> u32 {
    audio.as_ref().map_or(0, |a| a.inner.sample_rate())
}

/// Borrowed pointer to the samples, valid while `audio` lives.
#[no_mangle]
pub unsafe extern "C" fn axp_audio_samples(audio: *const AxpAudio) -> *const f32 {
    audio.as_ref().map_or(ptr::null(), |a| a.inner.samples().as_ptr())
}

#[no_mangle]
pub unsafe extern "C" fn axp_audio_free(audio: *mut AxpAudio) {
    free_box(audio);
}

// Decomposition

fn wrap_decomposition(d: Decomposition, tau: usize, name: String) -> Result<AxpDecomposition, Failure> {
    let inner = if tau > 1 {
        segment_time(&d, tau).map_err(|e| Failure::from_core(AxpStatus::Decompose, e))?
    } else if tau == 0 {
        return Err(Failure::arg("tau must be at least 1"));
    } else {
        d
    };
    let labels = inner.component_labels().iter().map(|l| cstring(l)).collect();
    let name = if tau > 1 { format!("{name}+tau{tau}") } else { name };
    Ok(AxpDecomposition { inner, name, labels })
}

/// Harmonic/percussive separation of `audio`, split into `tau` time
/// segments per source.
#[no_mangle]
pub unsafe extern "C" fn axp_decompose_hpss(
    audio: *const AxpAudio,
    harmonic_kernel: usize,
    percussive_kernel: usize,
    tau: usize,
    out: *mut *mut AxpDecomposition,
) -> AxpStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        *out = ptr::null_mut();
        let audio = handle(audio, "audio")?;
        let d = hpss_decompose(&audio.inner, harmonic_kernel, percussive_kernel)
            .map_err(|e| Failure::from_core(AxpStatus::Decompose, e))?;
        let name = format!("hpss(h={harmonic_kernel},p={percussive_kernel})");
        *out = Box::into_raw(Box::new(wrap_decomposition(d, tau, name)?));
        Ok(())
    })
}

/// Oracle decomposition of a directory holding `mix.wav` and one WAV per
/// stem.
#[no_mangle]
pub unsafe extern "C" fn axp_decompose_stem_dir(
    dir: *const c_char,
    tau: usize,
    out: *mut *mut AxpDecomposition,
) -> AxpStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        *out = ptr::null_mut();
        let dir = PathBuf::from(str_arg(dir, "dir")?);
        let (mix, oracle) = load_stem_dir(&dir).map_err(|e| Failure::from_core(AxpStatus::Decompose, e))?;
        let d = oracle
            .decompose(&mix)
            .map_err(|e| Failure::from_core(AxpStatus::Decompose, e))?;
        *out = Box::into_raw(Box::new(wrap_decomposition(d, tau, oracle.name())?));
        Ok(())
    })
}

/// Number of interpretable components, or 0 for a null handle.
#[no_mangle]
pub unsafe extern "C" fn axp_decomposition_d_prime(d: *const AxpDecomposition) -> usize {
    d.as_ref().map_or(0, |d| d.inner.d_prime())
}

/// Label of component `index`, or null when out of range.
#[no_mangle]
pub unsafe extern "C" fn axp_decomposition_label(d: *const AxpDecomposition, index: usize) -> *const c_char {
    d.as_ref()
        .and_then(|d| d.labels.get(index))
        .map_or(ptr::null(), |c| c.as_ptr())
}

/// New buffer with the mix of the components selected by `mask` (`d′`
/// bytes, nonzero = keep).
#[no_mangle]
pub unsafe extern "C" fn axp_decomposition_remix(
    d: *const AxpDecomposition,
    mask: *const u8,
    mask_len: usize,
    include_residual: bool,
    out: *mut *mut AxpAudio,
) -> AxpStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        *out = ptr::null_mut();
        let d = handle(d, "decomposition")?;
        if mask.is_null() {
            return Err(Failure(AxpStatus::NullPointer, "mask is null".into()));
        }
        let bits = std::slice::from_raw_parts(mask, mask_len).iter().map(|&b| b != 0).collect();
        let inner = d
            .inner
            .remix(&audexplain::decompose::InterpretableMask::new(bits), include_residual)
            .map_err(|e| Failure::from_core(AxpStatus::InvalidArgument, e))?;
        *out = Box::into_raw(Box::new(AxpAudio { inner }));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn axp_decomposition_free(d: *mut AxpDecomposition) {
    free_box(d);
}

// Predictors

/// Built-in classifier from a model file written by `train-builtin`.
#[no_mangle]
pub unsafe extern "C" fn axp_predictor_load_builtin(
    model_path: *const c_char,
    out: *mut *mut AxpPredictor,
) -> AxpStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        *out = ptr::null_mut();
        let path = PathBuf::from(str_arg(model_path, "model_path")?);
        let model = LinearClassifier::load(&path).map_err(|e| Failure::from_core(AxpStatus::Predictor, e))?;
        *out = Box::into_raw(Box::new(AxpPredictor { inner: Box::new(model) }));
        Ok(())
    })
}

/// External predictor run as `command` through the manifest protocol.
/// `labels` is a comma-separated list and may be empty.
#[no_mangle]
pub unsafe extern "C" fn axp_predictor_external(
    command: *const c_char,
    workdir: *const c_char,
    timeout_secs: f64,
    labels: *const c_char,
    out: *mut *mut AxpPredictor,
) -> AxpStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        *out = ptr::null_mut();
        let command = str_arg(command, "command")?;
        let workdir = str_arg(workdir, "workdir")?;
        let labels = str_arg(labels, "labels")?;
        if !(timeout_secs.is_finite() && timeout_secs > 0.0) {
            return Err(Failure::arg("timeout_secs must be positive"));
        }
        let labels: Vec<String> = labels
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(String::from)
            .collect();
        let p = ExternalPredictor::new(command, workdir, Duration::from_secs_f64(timeout_secs), labels);
        *out = Box::into_raw(Box::new(AxpPredictor { inner: Box::new(p) }));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn axp_predictor_free(p: *mut AxpPredictor) {
    free_box(p);
}

// Explanations

#[no_mangle]
pub extern "C" fn axp_explain_config_default() -> AxpExplainConfig {
    let d = ExplainConfig::default();
    AxpExplainConfig {
        n_max: d.n_max,
        kernel: AxpKernel::Auto,
        kernel_width: audexplain::explain::DEFAULT_KERNEL_WIDTH,
        ridge_lambda: d.ridge_lambda,
        include_residual: d.include_residual,
        seed: d.seed,
    }
}

impl AxpExplainConfig {
    fn to_core(self) -> ExplainConfig {
        ExplainConfig {
            n_max: self.n_max,
            kernel: match self.kernel {
                AxpKernel::Auto => KernelChoice::Auto,
                AxpKernel::Uniform => KernelChoice::Uniform,
                AxpKernel::Exponential => KernelChoice::Exponential {
                    width: self.kernel_width,
                },
            },
            ridge_lambda: self.ridge_lambda,
            include_residual: self.include_residual,
            seed: self.seed,
        }
    }
}

/// Explains `predictor`'s score for `target_label` on `d`. A null
/// `target_label` explains the label predicted for the unperturbed mix; a
/// null `config` uses the defaults.
#[no_mangle]
pub unsafe extern "C" fn axp_explain(
    d: *const AxpDecomposition,
    predictor: *const AxpPredictor,
    target_label: *const c_char,
    config: *const AxpExplainConfig,
    out: *mut *mut AxpExplanation,
) -> AxpStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        *out = ptr::null_mut();
        let d = handle(d, "decomposition")?;
        let predictor = handle(predictor, "predictor")?;
        let config = config.as_ref().copied().unwrap_or_else(|| axp_explain_config_default()).to_core();
        let target = if target_label.is_null() {
            let p = predictor
                .inner
                .predict(std::slice::from_ref(d.inner.mix()))
                .map_err(|e| Failure::from_core(AxpStatus::Predictor, e))?;
            p.first()
                .and_then(|p| p.top_label())
                .map(str::to_string)
                .ok_or_else(|| Failure(AxpStatus::Predictor, "predictor returned no labels".into()))?
        } else {
            str_arg(target_label, "target_label")?.to_string()
        };
        let inner = explain_decomposition(&d.inner, predictor.inner.as_ref(), &target, &config, &d.name)
            .map_err(|e| Failure::from_core(AxpStatus::Explain, e))?;
        let json = inner.to_json().map_err(|e| Failure::from_core(AxpStatus::Explain, e))?;
        *out = Box::into_raw(Box::new(AxpExplanation {
            target: cstring(&inner.target_label),
            labels: inner.component_labels.iter().map(|l| cstring(l)).collect(),
            json: cstring(&json),
            inner,
        }));
        Ok(())
    })
}

/// Number of coefficients, or 0 for a null handle.
#[no_mangle]
pub unsafe extern "C" fn axp_explanation_len(e: *const AxpExplanation) -> usize {
    e.as_ref().map_or(0, |e| e.inner.coefficients.len())
}

/// Copies up to `capacity` coefficients into `buf` in component order and
/// returns the total count.
#[no_mangle]
pub unsafe extern "C" fn axp_explanation_coefficients(
    e: *const AxpExplanation,
    buf: *mut f64,
    capacity: usize,
) -> usize {
    let Some(e) = e.as_ref() else { return 0 };
    let c = &e.inner.coefficients;
    if !buf.is_null() {
        let n = c.len().min(capacity);
        ptr::copy_nonoverlapping(c.as_ptr(), buf, n);
    }
    c.len()
}

/// Surrogate intercept, or NaN for a null handle.
#[no_mangle]
pub unsafe extern "C" fn axp_explanation_intercept(e: *const AxpExplanation) -> f64 {
    e.as_ref().map_or(f64::NAN, |e| e.inner.intercept)
}

/// Weighted correlation between surrogate and black box; 0 with
/// `*defined = false` when either side is constant.
#[no_mangle]
pub unsafe extern "C" fn axp_explanation_faithfulness(e: *const AxpExplanation, defined: *mut bool) -> f64 {
    let Some(e) = e.as_ref() else { return f64::NAN };
    if let Some(d) = defined.as_mut() {
        *d = e.inner.faithfulness_defined;
    }
    e.inner.faithfulness_r
}

/// Index of the component with the largest positive coefficient, or -1.
#[no_mangle]
pub unsafe extern "C" fn axp_explanation_top_component(e: *const AxpExplanation) -> i64 {
    match e.as_ref().map(|e| top_component(&e.inner.coefficients)) {
        Some(TopComponent::Component(i)) => i as i64,
        _ => -1,
    }
}

#[no_mangle]
pub unsafe extern "C" fn axp_explanation_target(e: *const AxpExplanation) -> *const c_char {
    e.as_ref().map_or(ptr::null(), |e| e.target.as_ptr())
}

#[no_mangle]
pub unsafe extern "C" fn axp_explanation_label(e: *const AxpExplanation, index: usize) -> *const c_char {
    e.as_ref()
        .and_then(|e| e.labels.get(index))
        .map_or(ptr::null(), |c| c.as_ptr())
}

/// The explanation serialized as JSON.
#[no_mangle]
pub unsafe extern "C" fn axp_explanation_json(e: *const AxpExplanation) -> *const c_char {
    e.as_ref().map_or(ptr::null(), |e| e.json.as_ptr())
}

/// Mix of the `k` components with the largest positive coefficients.
#[no_mangle]
pub unsafe extern "C" fn axp_explanation_render(
    e: *const AxpExplanation,
    d: *const AxpDecomposition,
    k: usize,
    out: *mut *mut AxpAudio,
) -> AxpStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        *out = ptr::null_mut();
        let e = handle(e, "explanation")?;
        let d = handle(d, "decomposition")?;
        let inner = render_explanation(&d.inner, &e.inner, k).map_err(|e| Failure::from_core(AxpStatus::Explain, e))?;
        *out = Box::into_raw(Box::new(AxpAudio { inner }));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn axp_explanation_free(e: *mut AxpExplanation) {
    free_box(e);
}
