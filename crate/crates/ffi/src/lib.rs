//! C ABI over `gkdv-core`. Functions return a [`GkdvStatus`]; on failure the
//! message is available from [`gkdv_last_error`] on the same thread.
//! Objects cross the boundary as opaque handles released by their `_free`
//! function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use gkdv_core::cli::{dispatch, Command};
use gkdv_core::evolver::{evolve, EvolveOptions};
use gkdv_core::linop::{cached_edge_eigenpair, edge_eigenpair, EdgeSpectrum};
use gkdv_core::snapshot::{load_snapshot, save_snapshot};
use gkdv_core::soliton::{soliton_field, SolitonParams};
use gkdv_core::{Error, Field, Grid1D};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GkdvStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Numerical = 3,
    Io = 4,
    Format = 5,
    Panic = 6,
}

/// Sampled field with its time stamp.
pub struct GkdvField {
    field: Field,
    t: f64,
}

/// Edge eigenpair of the linearized operator.
pub struct GkdvSpectrum {
    spectrum: EdgeSpectrum,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn status_of(e: &Error) -> GkdvStatus {
    match e {
        Error::Io(_) => GkdvStatus::Io,
        Error::BadMagic | Error::SnapshotVersion { .. } | Error::Truncated { .. } | Error::Json(_) => GkdvStatus::Format,
        e if !e.is_numerical() => GkdvStatus::InvalidArgument,
        _ => GkdvStatus::Numerical,
    }
}

fn guard(f: impl FnOnce() -> Result<(), (GkdvStatus, String)>) -> GkdvStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => GkdvStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            GkdvStatus::Panic
        }
    }
}

fn core<T>(r: gkdv_core::Result<T>) -> Result<T, (GkdvStatus, String)> {
    r.map_err(|e| (status_of(&e), e.to_string()))
}

fn null<T>(name: &str) -> Result<T, (GkdvStatus, String)> {
    Err((GkdvStatus::NullPointer, format!("{name} is null")))
}

unsafe fn path_arg(p: *const c_char, name: &str) -> Result<PathBuf, (GkdvStatus, String)> {
    if p.is_null() {
        return null(name);
    }
    CStr::from_ptr(p)
        .to_str()
        .map(PathBuf::from)
        .map_err(|_| (GkdvStatus::InvalidArgument, format!("{name} is not valid UTF-8")))
}

/// Message of the last failed call on this thread, or null. The pointer is
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn gkdv_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn gkdv_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Creates a field on a periodic grid of length `length` with `n` samples
/// copied from `values`.
///
/// # Safety
/// `values` must point to `n` doubles and `out` to writable storage.
#[no_mangle]
pub unsafe extern "C" fn gkdv_field_new(
    length: f64,
    n: usize,
    values: *const f64,
    t: f64,
    out: *mut *mut GkdvField,
) -> GkdvStatus {
    guard(|| {
        if values.is_null() {
            return null("values");
        }
        if out.is_null() {
            return null("out");
        }
        let grid = core(Grid1D::new(length, n))?;
        let v = std::slice::from_raw_parts(values, n).to_vec();
        let field = core(Field::new(grid, v))?;
        *out = Box::into_raw(Box::new(GkdvField { field, t }));
        Ok(())
    })
}

/// Traveling wave `Q_c(x - c t - x0)` for exponent `p` sampled at time `t`.
///
/// # Safety
/// `out` must point to writable storage.
#[no_mangle]
pub unsafe extern "C" fn gkdv_soliton(
    p: u32,
    c: f64,
    x0: f64,
    t: f64,
    length: f64,
    n: usize,
    out: *mut *mut GkdvField,
) -> GkdvStatus {
    guard(|| {
        if out.is_null() {
            return null("out");
        }
        let grid = core(Grid1D::new(length, n))?;
        let params = core(SolitonParams::new(c, x0))?;
        let field = core(soliton_field(p, params, t, &grid))?;
        *out = Box::into_raw(Box::new(GkdvField { field, t }));
        Ok(())
    })
}

/// # Safety
/// `field` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn gkdv_field_free(field: *mut GkdvField) {
    if !field.is_null() {
        drop(Box::from_raw(field));
    }
}

/// Number of samples, or 0 for a null handle.
///
/// # Safety
/// `field` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn gkdv_field_len(field: *const GkdvField) -> usize {
    field.as_ref().map_or(0, |f| f.field.grid().n())
}

/// # Safety
/// `field` must be a live handle and `length`, `t` writable.
#[no_mangle]
pub unsafe extern "C" fn gkdv_field_info(field: *const GkdvField, length: *mut f64, t: *mut f64) -> GkdvStatus {
    guard(|| {
        let Some(f) = field.as_ref() else { return null("field") };
        if length.is_null() || t.is_null() {
            return null("length/t");
        }
        *length = f.field.grid().length();
        *t = f.t;
        Ok(())
    })
}

/// Copies the samples into `buf`, which must hold `len` doubles with
/// `len >= gkdv_field_len(field)`.
///
/// # Safety
/// `buf` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn gkdv_field_values(field: *const GkdvField, buf: *mut f64, len: usize) -> GkdvStatus {
    guard(|| {
        let Some(f) = field.as_ref() else { return null("field") };
        if buf.is_null() {
            return null("buf");
        }
        let v = f.field.values();
        if len < v.len() {
            return Err((GkdvStatus::InvalidArgument, format!("buffer holds {len} values, need {}", v.len())));
        }
        std::ptr::copy_nonoverlapping(v.as_ptr(), buf, v.len());
        Ok(())
    })
}

/// Mass `∫u²` and energy `½∫u_x² - ∫u^{p+1}/(p+1)`.
///
/// # Safety
/// `field` must be a live handle; `mass`, `energy` writable.
#[no_mangle]
pub unsafe extern "C" fn gkdv_field_conserved(
    field: *const GkdvField,
    p: u32,
    mass: *mut f64,
    energy: *mut f64,
) -> GkdvStatus {
    guard(|| {
        let Some(f) = field.as_ref() else { return null("field") };
        if mass.is_null() || energy.is_null() {
            return null("mass/energy");
        }
        let (m, e) = gkdv_core::soliton::conserved_quantities(&f.field, p);
        *mass = m;
        *energy = e;
        Ok(())
    })
}

/// Integrates `field` from its time stamp to `t1` with maximal step `dt`
/// (0 selects the default).
///
/// # Safety
/// `field` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn gkdv_evolve(
    field: *const GkdvField,
    p: u32,
    t1: f64,
    dt: f64,
    out: *mut *mut GkdvField,
) -> GkdvStatus {
    guard(|| {
        let Some(f) = field.as_ref() else { return null("field") };
        if out.is_null() {
            return null("out");
        }
        let mut opts = EvolveOptions::default();
        if dt > 0.0 {
            opts.dt = dt;
        }
        let tr = core(evolve(&f.field, p, f.t, t1, &opts))?;
        let field = tr.final_field().clone();
        *out = Box::into_raw(Box::new(GkdvField { field, t: t1 }));
        Ok(())
    })
}

/// # Safety
/// `field` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn gkdv_snapshot_save(field: *const GkdvField, path: *const c_char) -> GkdvStatus {
    guard(|| {
        let Some(f) = field.as_ref() else { return null("field") };
        let path = path_arg(path, "path")?;
        core(save_snapshot(&f.field, f.t, path))
    })
}

/// # Safety
/// `path` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn gkdv_snapshot_load(path: *const c_char, out: *mut *mut GkdvField) -> GkdvStatus {
    guard(|| {
        let path = path_arg(path, "path")?;
        if out.is_null() {
            return null("out");
        }
        let (field, t) = core(load_snapshot(path))?;
        *out = Box::into_raw(Box::new(GkdvField { field, t }));
        Ok(())
    })
}

/// Edge eigenpair for exponent `p` on a grid of length `length` with `n`
/// points. `cache_dir` may be null to skip the on-disk cache. Fails for
/// `p <= 5`.
///
/// # Safety
/// `cache_dir` must be null or NUL-terminated; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn gkdv_spectrum_compute(
    p: u32,
    length: f64,
    n: usize,
    cache_dir: *const c_char,
    out: *mut *mut GkdvSpectrum,
) -> GkdvStatus {
    guard(|| {
        if out.is_null() {
            return null("out");
        }
        let grid = core(Grid1D::new(length, n))?;
        let spectrum = if cache_dir.is_null() {
            core(edge_eigenpair(p, &grid))?
        } else {
            core(cached_edge_eigenpair(p, &grid, path_arg(cache_dir, "cache_dir")?))?
        };
        *out = Box::into_raw(Box::new(GkdvSpectrum { spectrum }));
        Ok(())
    })
}

/// Writes `e₀`, the tail rate `η₀` and `∫Z⁺Z⁻`.
///
/// # Safety
/// `s` must be a live handle; the outputs writable.
#[no_mangle]
pub unsafe extern "C" fn gkdv_spectrum_values(
    s: *const GkdvSpectrum,
    e0: *mut f64,
    eta0: *mut f64,
    gram: *mut f64,
) -> GkdvStatus {
    guard(|| {
        let Some(s) = s.as_ref() else { return null("spectrum") };
        if e0.is_null() || eta0.is_null() || gram.is_null() {
            return null("e0/eta0/gram");
        }
        *e0 = s.spectrum.e0;
        *eta0 = s.spectrum.eta0;
        *gram = s.spectrum.gram();
        Ok(())
    })
}

/// # Safety
/// `s` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn gkdv_spectrum_free(s: *mut GkdvSpectrum) {
    if !s.is_null() {
        drop(Box::from_raw(s));
    }
}

/// Runs a CLI command (`"profile"`, `"spectrum"`, `"coercivity"`,
/// `"evolve"`, `"construct"`, `"verify"`) and returns its exit code, or -1
/// for an unknown command. `config` and `out` may be null.
///
/// # Safety
/// Non-null arguments must be NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn gkdv_run(command: *const c_char, config: *const c_char, out: *const c_char) -> i32 {
    let parsed = (|| {
        let cmd = match path_arg(command, "command")?.to_str() {
            Some("profile") => Command::Profile,
            Some("spectrum") => Command::Spectrum,
            Some("coercivity") => Command::Coercivity,
            Some("evolve") => Command::Evolve,
            Some("construct") => Command::Construct,
            Some("verify") => Command::Verify,
            other => return Err((GkdvStatus::InvalidArgument, format!("unknown command {other:?}"))),
        };
        let config = if config.is_null() { None } else { Some(path_arg(config, "config")?) };
        let out = if out.is_null() { None } else { Some(path_arg(out, "out")?) };
        Ok((cmd, config, out))
    })();
    match parsed {
        Ok((cmd, config, out)) => catch_unwind(|| dispatch(cmd, config.as_deref(), out.as_deref())).unwrap_or_else(|_| {
            set_error("internal panic");
            -1
        }),
        Err((_, msg)) => {
            set_error(msg);
            -1
        }
    }
}
