//! C ABI over `guidelab`.
//!
//! Every fallible function returns a [`GlStatus`]; on failure a message is
//! available from [`gl_last_error`] on the same thread. Objects are opaque
//! heap handles released with the matching `*_free` function.

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use guidelab::guidance::{sample_batch, GuidanceConfig, StabilizerConfig, StabilizerState};
use guidelab::{AnalyticDenoiser, ClassifierHandle, Error, GmmSpec, GuidancePath, Mlp, PosteriorVariance, Schedule};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GlStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    InvalidUtf8 = 3,
    Parse = 4,
    DimensionMismatch = 5,
    OutOfRange = 6,
    /// Every chain of a batch diverged.
    Diverged = 7,
    Io = 8,
    Panic = 9,
}

pub struct GlSchedule(Schedule);

pub struct GlDenoiser {
    inner: AnalyticDenoiser,
    spec: GmmSpec,
}

pub struct GlClassifier(ClassifierHandle);

pub struct GlStabilizer {
    config: StabilizerConfig,
    state: StabilizerState,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).unwrap_or_default());
}

fn status_of(e: &Error) -> GlStatus {
    match e {
        Error::DimensionMismatch { .. } => GlStatus::DimensionMismatch,
        Error::StepOutOfRange { .. } | Error::ClassOutOfRange { .. } => GlStatus::OutOfRange,
        Error::Json(_) | Error::Csv(_) | Error::Config(_) => GlStatus::Parse,
        Error::Io { .. } | Error::MissingArtifact { .. } => GlStatus::Io,
        Error::EmptyReport { .. } | Error::GuidanceDivergence { .. } => GlStatus::Diverged,
        _ => GlStatus::InvalidArgument,
    }
}

struct Fail(GlStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn fail<T>(status: GlStatus, msg: impl Into<String>) -> Result<T, Fail> {
    Err(Fail(status, msg.into()))
}

/// Runs `f`, converting errors and panics into a status plus last-error message.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> GlStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            GlStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            GlStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return fail(GlStatus::NullPointer, format!("{name} is null"));
    }
    CStr::from_ptr(p).to_str().or_else(|_| fail(GlStatus::InvalidUtf8, format!("{name} is not UTF-8")))
}

unsafe fn ref_arg<'a, T>(p: *const T, name: &str) -> Result<&'a T, Fail> {
    p.as_ref().map_or_else(|| fail(GlStatus::NullPointer, format!("{name} is null")), Ok)
}

unsafe fn slice_arg<'a>(p: *const f64, len: usize, name: &str) -> Result<&'a [f64], Fail> {
    if p.is_null() {
        return fail(GlStatus::NullPointer, format!("{name} is null"));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn out_slice<'a, T>(p: *mut T, len: usize, name: &str) -> Result<&'a mut [T], Fail> {
    if p.is_null() {
        return fail(GlStatus::NullPointer, format!("{name} is null"));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn put<T>(out: *mut T, value: T, name: &str) -> Result<(), Fail> {
    if out.is_null() {
        return fail(GlStatus::NullPointer, format!("{name} is null"));
    }
    out.write(value);
    Ok(())
}

unsafe fn free<T>(p: *mut T) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn gl_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread; empty after a success.
/// Valid until the next call into the library on this thread.
#[no_mangle]
pub extern "C" fn gl_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Linear beta schedule. `tilde_variance` selects the posterior variance
/// instead of beta for the reverse steps.
#[no_mangle]
pub unsafe extern "C" fn gl_schedule_linear(
    steps: usize,
    beta_start: f64,
    beta_end: f64,
    tilde_variance: bool,
    out: *mut *mut GlSchedule,
) -> GlStatus {
    guard(|| {
        let v = if tilde_variance { PosteriorVariance::BetaTilde } else { PosteriorVariance::Beta };
        let s = Schedule::linear(steps, beta_start, beta_end)?.with_variance(v);
        put(out, Box::into_raw(Box::new(GlSchedule(s))), "out")
    })
}

#[no_mangle]
pub unsafe extern "C" fn gl_schedule_free(s: *mut GlSchedule) {
    free(s)
}

#[no_mangle]
pub unsafe extern "C" fn gl_schedule_steps(s: *const GlSchedule) -> usize {
    s.as_ref().map_or(0, |s| s.0.steps())
}

/// Cumulative product of alphas at `t` (`t = 0` gives 1).
#[no_mangle]
pub unsafe extern "C" fn gl_schedule_alpha_bar(s: *const GlSchedule, t: usize, out: *mut f64) -> GlStatus {
    guard(|| {
        let s = &ref_arg(s, "schedule")?.0;
        if t > s.steps() {
            return Err(Error::StepOutOfRange { t, max: s.steps() }.into());
        }
        put(out, s.alpha_bar(t), "out")
    })
}

/// Analytic denoiser for a mixture given either as a preset name or as
/// mixture JSON. The schedule is copied.
#[no_mangle]
pub unsafe extern "C" fn gl_denoiser_new(spec: *const c_char, schedule: *const GlSchedule, out: *mut *mut GlDenoiser) -> GlStatus {
    guard(|| {
        let text = str_arg(spec, "spec")?;
        let sched = &ref_arg(schedule, "schedule")?.0;
        let spec = if text.trim_start().starts_with('{') {
            let s: GmmSpec = serde_json::from_str(text).map_err(Error::from)?;
            s.validate()?;
            s
        } else {
            GmmSpec::preset(text.trim())?
        };
        let inner = AnalyticDenoiser::new(&spec, sched)?;
        put(out, Box::into_raw(Box::new(GlDenoiser { inner, spec })), "out")
    })
}

#[no_mangle]
pub unsafe extern "C" fn gl_denoiser_free(d: *mut GlDenoiser) {
    free(d)
}

#[no_mangle]
pub unsafe extern "C" fn gl_denoiser_dim(d: *const GlDenoiser) -> usize {
    d.as_ref().map_or(0, |d| d.inner.dim())
}

/// Posterior mean of x0 given `x` (length `dim`) at step `t`, written to `out` (length `dim`).
#[no_mangle]
pub unsafe extern "C" fn gl_denoiser_posterior_mean(d: *const GlDenoiser, x: *const f64, dim: usize, t: usize, out: *mut f64) -> GlStatus {
    guard(|| {
        let d = ref_arg(d, "denoiser")?;
        let x = slice_arg(x, dim, "x")?;
        let mean = d.inner.posterior_mean_x0(x, t)?;
        out_slice(out, dim, "out")?.copy_from_slice(&mean);
        Ok(())
    })
}

/// Trained classifier from checkpoint JSON text.
#[no_mangle]
pub unsafe extern "C" fn gl_classifier_from_json(json: *const c_char, robust: bool, out: *mut *mut GlClassifier) -> GlStatus {
    guard(|| {
        let m = Mlp::from_json(str_arg(json, "json")?)?;
        let h = if robust { ClassifierHandle::Robust(m) } else { ClassifierHandle::NonRobust(m) };
        put(out, Box::into_raw(Box::new(GlClassifier(h))), "out")
    })
}

/// Trained classifier from a checkpoint file.
#[no_mangle]
pub unsafe extern "C" fn gl_classifier_load(path: *const c_char, robust: bool, out: *mut *mut GlClassifier) -> GlStatus {
    guard(|| {
        let m = Mlp::load(str_arg(path, "path")?)?;
        let h = if robust { ClassifierHandle::Robust(m) } else { ClassifierHandle::NonRobust(m) };
        put(out, Box::into_raw(Box::new(GlClassifier(h))), "out")
    })
}

/// Bayes-optimal classifier for the denoiser's mixture.
#[no_mangle]
pub unsafe extern "C" fn gl_classifier_oracle(d: *const GlDenoiser, out: *mut *mut GlClassifier) -> GlStatus {
    guard(|| {
        let h = ClassifierHandle::bayes_oracle(&ref_arg(d, "denoiser")?.spec)?;
        put(out, Box::into_raw(Box::new(GlClassifier(h))), "out")
    })
}

#[no_mangle]
pub unsafe extern "C" fn gl_classifier_free(c: *mut GlClassifier) {
    free(c)
}

#[no_mangle]
pub unsafe extern "C" fn gl_classifier_num_classes(c: *const GlClassifier) -> usize {
    c.as_ref().map_or(0, |c| c.0.num_classes())
}

/// Logits for `x` (length `dim`) into `out` (length `classes`).
#[no_mangle]
pub unsafe extern "C" fn gl_classifier_logits(c: *const GlClassifier, x: *const f64, dim: usize, out: *mut f64, classes: usize) -> GlStatus {
    guard(|| {
        let c = &ref_arg(c, "classifier")?.0;
        if classes != c.num_classes() {
            return Err(Error::DimensionMismatch { expected: c.num_classes(), got: classes }.into());
        }
        let logits = c.predict_logits(slice_arg(x, dim, "x")?)?;
        out_slice(out, classes, "out")?.copy_from_slice(&logits);
        Ok(())
    })
}

/// Stabilizer with fresh zero state. `kind` is `identity`, `ema:BETA`,
/// `adam` or `adam:B1:B2:EPS`.
#[no_mangle]
pub unsafe extern "C" fn gl_stabilizer_new(kind: *const c_char, dim: usize, out: *mut *mut GlStabilizer) -> GlStatus {
    guard(|| {
        let config: StabilizerConfig = str_arg(kind, "kind")?.parse()?;
        let st = GlStabilizer { config, state: StabilizerState::new(dim) };
        put(out, Box::into_raw(Box::new(st)), "out")
    })
}

#[no_mangle]
pub unsafe extern "C" fn gl_stabilizer_free(s: *mut GlStabilizer) {
    free(s)
}

/// Feeds gradient `g` and writes the stabilized vector to `out`; both of length `dim`.
#[no_mangle]
pub unsafe extern "C" fn gl_stabilizer_step(s: *mut GlStabilizer, g: *const f64, dim: usize, out: *mut f64) -> GlStatus {
    guard(|| {
        let s = match s.as_mut() {
            Some(s) => s,
            None => return fail(GlStatus::NullPointer, "stabilizer is null"),
        };
        let nu = s.state.stabilize(&s.config, slice_arg(g, dim, "g")?)?;
        out_slice(out, dim, "out")?.copy_from_slice(&nu);
        Ok(())
    })
}

/// Runs `n` guided chains. `path` is `raw`, `x0pred` or `x0pred-stopgrad`
/// and `stabilizer` uses the [`gl_stabilizer_new`] syntax. `samples` receives `n * dim` values row-major
/// (NaN rows for diverged chains), `diverged` receives `n` flags and
/// `n_diverged` the count. Returns `Diverged` if every chain diverged.
#[no_mangle]
pub unsafe extern "C" fn gl_sample_batch(
    d: *const GlDenoiser,
    c: *const GlClassifier,
    target: usize,
    scale: f64,
    path: *const c_char,
    stabilizer: *const c_char,
    n: usize,
    seed: u64,
    samples: *mut f64,
    diverged: *mut u8,
    n_diverged: *mut usize,
) -> GlStatus {
    guard(|| {
        let d = ref_arg(d, "denoiser")?;
        let c = &ref_arg(c, "classifier")?.0;
        let path: GuidancePath = str_arg(path, "path")?.parse()?;
        let stab: StabilizerConfig = str_arg(stabilizer, "stabilizer")?.parse()?;
        let cfg = GuidanceConfig { scale, path, stabilizer: stab, ..GuidanceConfig::new(c, target) };
        let dim = d.inner.dim();
        let out = out_slice(samples, n * dim, "samples")?;
        let flags = out_slice(diverged, n, "diverged")?;
        let batch = sample_batch(&d.inner, &cfg, n, seed)?;
        for (i, ch) in batch.chains.iter().enumerate() {
            let row = &mut out[i * dim..(i + 1) * dim];
            match &ch.sample {
                Some(x) => row.copy_from_slice(x),
                None => row.fill(f64::NAN),
            }
            flags[i] = u8::from(ch.sample.is_none());
        }
        put(n_diverged, batch.n_diverged(), "n_diverged")?;
        if n > 0 && batch.n_diverged() == n {
            return fail(GlStatus::Diverged, format!("all {n} chains diverged"));
        }
        Ok(())
    })
}

/// Fréchet distance between Gaussians fitted to two row-major point sets.
#[no_mangle]
pub unsafe extern "C" fn gl_frechet_distance(a: *const f64, n_a: usize, b: *const f64, n_b: usize, dim: usize, out: *mut f64) -> GlStatus {
    guard(|| {
        if dim == 0 {
            return fail(GlStatus::InvalidArgument, "dim must be positive");
        }
        let rows = |p: &[f64]| p.chunks(dim).map(<[f64]>::to_vec).collect::<Vec<_>>();
        let a = rows(slice_arg(a, n_a * dim, "a")?);
        let b = rows(slice_arg(b, n_b * dim, "b")?);
        put(out, guidelab::eval::frechet_distance(&a, &b)?, "out")
    })
}

/// Static name of a status code.
#[no_mangle]
pub extern "C" fn gl_status_name(status: GlStatus) -> *const c_char {
    let s: &'static str = match status {
        GlStatus::Ok => "ok\0",
        GlStatus::NullPointer => "null_pointer\0",
        GlStatus::InvalidArgument => "invalid_argument\0",
        GlStatus::InvalidUtf8 => "invalid_utf8\0",
        GlStatus::Parse => "parse\0",
        GlStatus::DimensionMismatch => "dimension_mismatch\0",
        GlStatus::OutOfRange => "out_of_range\0",
        GlStatus::Diverged => "diverged\0",
        GlStatus::Io => "io\0",
        GlStatus::Panic => "panic\0",
    };
    s.as_ptr().cast()
}
