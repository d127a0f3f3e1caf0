//! C ABI over `sns-core`.
//!
//! Objects cross the boundary as opaque heap handles that the caller frees
//! with the matching `*_free`. Every fallible call returns an [`SnsStatus`];
//! on failure the message is kept per thread and read back with
//! [`sns_last_error_message`]. Panics never unwind into C.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use sns_core::experiment::{run_verify, ExperimentConfig};
use sns_core::field_ops::{divergence, gaussian_divfree, leray_project, taylor_green};
use sns_core::flow::heat_semigroup;
use sns_core::lp::{besov_norm, BesovParams, DyadicPartition};
use sns_core::solver::{theta1, theta2};
use sns_core::{Error, GridSpec, SpectralField};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SnsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    AuditFailure = 4,
    CalibrationFailure = 5,
    Refused = 6,
    Panic = 7,
    VerificationFailed = 8,
}

impl From<&Error> for SnsStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::Io { .. } | Error::Json(_) => SnsStatus::Io,
            Error::UnauditedNoise(_) => SnsStatus::AuditFailure,
            Error::CalibrationFailure(_) => SnsStatus::CalibrationFailure,
            Error::Refused(_) => SnsStatus::Refused,
            _ => SnsStatus::InvalidArgument,
        }
    }
}

/// Opaque grid handle.
pub struct SnsGrid(GridSpec);

/// Opaque spectral field handle.
pub struct SnsField(SpectralField);

/// Opaque dyadic partition handle.
pub struct SnsPartition(DyadicPartition);

thread_local! {
    static LAST_ERROR: RefCell<Vec<u8>> = const { RefCell::new(Vec::new()) };
}

fn set_error(msg: &str) {
    LAST_ERROR.with(|e| {
        let mut e = e.borrow_mut();
        e.clear();
        e.extend(msg.bytes().filter(|&b| b != 0));
    });
}

fn guard(f: impl FnOnce() -> Result<(), SnsStatus>) -> SnsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            SnsStatus::Ok
        }
        Ok(Err(status)) => status,
        Err(_) => {
            set_error("panic inside sns-core");
            SnsStatus::Panic
        }
    }
}

fn check<T>(r: sns_core::Result<T>) -> Result<T, SnsStatus> {
    r.map_err(|e| {
        set_error(&e.to_string());
        SnsStatus::from(&e)
    })
}

unsafe fn deref<'a, T>(p: *const T) -> Result<&'a T, SnsStatus> {
    p.as_ref().ok_or_else(|| {
        set_error("null pointer argument");
        SnsStatus::NullPointer
    })
}

unsafe fn write<T>(out: *mut T, value: T) -> Result<(), SnsStatus> {
    if out.is_null() {
        set_error("null output pointer");
        return Err(SnsStatus::NullPointer);
    }
    out.write(value);
    Ok(())
}

unsafe fn boxed<T>(out: *mut *mut T, value: T) -> Result<(), SnsStatus> {
    write(out, Box::into_raw(Box::new(value)))
}

/// Copies the calling thread's last error message into `buf` (NUL
/// terminated, truncated to `len`). Returns the full message length.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn sns_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let e = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = e.len().min(len - 1);
            std::ptr::copy_nonoverlapping(e.as_ptr(), buf as *mut u8, n);
            *buf.add(n) = 0;
        }
        e.len()
    })
}

/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sns_grid_new(
    dimension: usize,
    points_per_axis: usize,
    box_length: f64,
    out: *mut *mut SnsGrid,
) -> SnsStatus {
    guard(|| {
        let g = check(GridSpec::new(dimension, points_per_axis, box_length))?;
        boxed(out, SnsGrid(g))
    })
}

/// # Safety
/// `grid` must come from `sns_grid_new` and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn sns_grid_free(grid: *mut SnsGrid) {
    if !grid.is_null() {
        drop(Box::from_raw(grid));
    }
}

/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn sns_partition_new(
    grid: *const SnsGrid,
    out: *mut *mut SnsPartition,
) -> SnsStatus {
    guard(|| {
        let g = deref(grid)?;
        let p = check(DyadicPartition::build(&g.0))?;
        boxed(out, SnsPartition(p))
    })
}

/// # Safety
/// `partition` must come from `sns_partition_new` and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn sns_partition_free(partition: *mut SnsPartition) {
    if !partition.is_null() {
        drop(Box::from_raw(partition));
    }
}

/// Shell range `[j_min, j_max]` and the partition-of-unity residual on
/// the resolvable band.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn sns_partition_info(
    partition: *const SnsPartition,
    j_min: *mut i32,
    j_max: *mut i32,
    residual: *mut f64,
) -> SnsStatus {
    guard(|| {
        let p = &deref(partition)?.0;
        let d = p.diagnostics();
        write(j_min, d.j_min)?;
        write(j_max, d.j_max)?;
        write(residual, d.residual_in_band)
    })
}

/// Taylor-Green vortex of amplitude `amplitude` and wavenumber `k`.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn sns_field_taylor_green(
    grid: *const SnsGrid,
    amplitude: f64,
    k: f64,
    out: *mut *mut SnsField,
) -> SnsStatus {
    guard(|| {
        let g = deref(grid)?;
        boxed(out, SnsField(taylor_green(g.0, amplitude, k)))
    })
}

/// Seeded divergence-free Gaussian field with the given RMS velocity.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn sns_field_gaussian(
    grid: *const SnsGrid,
    amplitude_rms: f64,
    correlation_length: f64,
    seed: u64,
    out: *mut *mut SnsField,
) -> SnsStatus {
    guard(|| {
        let g = deref(grid)?;
        if !(correlation_length > 0.0) || !(amplitude_rms >= 0.0) {
            set_error("amplitude must be >= 0 and correlation length > 0");
            return Err(SnsStatus::InvalidArgument);
        }
        let mut rng = sns_core::rng::stream(seed, &[sns_core::rng::tag::INITIAL_DATA]);
        boxed(out, SnsField(gaussian_divfree(g.0, amplitude_rms, correlation_length, &mut rng)))
    })
}

/// Builds a vector field from physical samples laid out component-major,
/// row-major within a component (`dimension · n^dimension` values).
///
/// # Safety
/// `values` must point to `len` readable doubles.
#[no_mangle]
pub unsafe extern "C" fn sns_field_from_physical(
    grid: *const SnsGrid,
    values: *const f64,
    len: usize,
    out: *mut *mut SnsField,
) -> SnsStatus {
    guard(|| {
        let g = deref(grid)?.0;
        deref(values)?;
        let per = g.len();
        if len != per * g.dimension {
            set_error(&format!("expected {} values, got {len}", per * g.dimension));
            return Err(SnsStatus::InvalidArgument);
        }
        let data = std::slice::from_raw_parts(values, len);
        let comps: Vec<Vec<f64>> = data.chunks(per).map(<[f64]>::to_vec).collect();
        let f = check(SpectralField::from_physical(g, &comps))?;
        boxed(out, SnsField(f))
    })
}

/// Writes physical samples in the layout of [`sns_field_from_physical`].
///
/// # Safety
/// `values` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn sns_field_to_physical(
    field: *const SnsField,
    values: *mut f64,
    len: usize,
) -> SnsStatus {
    guard(|| {
        let f = &deref(field)?.0;
        if values.is_null() {
            set_error("null output pointer");
            return Err(SnsStatus::NullPointer);
        }
        let phys = f.to_physical();
        let total: usize = phys.iter().map(Vec::len).sum();
        if len != total {
            set_error(&format!("expected room for {total} values, got {len}"));
            return Err(SnsStatus::InvalidArgument);
        }
        let out = std::slice::from_raw_parts_mut(values, len);
        for (dst, src) in out.chunks_mut(phys[0].len()).zip(&phys) {
            dst.copy_from_slice(src);
        }
        Ok(())
    })
}

/// # Safety
/// `field` must come from an `sns_field_*` constructor and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn sns_field_free(field: *mut SnsField) {
    if !field.is_null() {
        drop(Box::from_raw(field));
    }
}

/// Leray projection into a new field.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn sns_field_leray_project(
    field: *const SnsField,
    out: *mut *mut SnsField,
) -> SnsStatus {
    guard(|| {
        let f = &deref(field)?.0;
        if f.num_components() != f.grid().dimension {
            set_error("Leray projection needs a d-vector field");
            return Err(SnsStatus::InvalidArgument);
        }
        boxed(out, SnsField(leray_project(f)))
    })
}

/// `e^{tΔ}u` into a new field.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn sns_field_heat(
    field: *const SnsField,
    t: f64,
    out: *mut *mut SnsField,
) -> SnsStatus {
    guard(|| {
        let f = &deref(field)?.0;
        let h = check(heat_semigroup(f, t))?;
        boxed(out, SnsField(h))
    })
}

/// `L²` norm of the field and of its divergence.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn sns_field_norms(
    field: *const SnsField,
    l2: *mut f64,
    divergence_l2: *mut f64,
) -> SnsStatus {
    guard(|| {
        let f = &deref(field)?.0;
        write(l2, f.l2_norm())?;
        write(divergence_l2, divergence(f).l2_norm())
    })
}

/// Homogeneous Besov norm `‖u‖_{Ḃ^s_{p,r}}` with finite `p, r ≥ 2`.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn sns_besov_norm(
    field: *const SnsField,
    partition: *const SnsPartition,
    s: f64,
    p: f64,
    r: f64,
    out: *mut f64,
) -> SnsStatus {
    guard(|| {
        let f = &deref(field)?.0;
        let part = &deref(partition)?.0;
        if f.grid() != part.grid() {
            set_error("field and partition live on different grids");
            return Err(SnsStatus::InvalidArgument);
        }
        let params = check(BesovParams::new(s, p, r))?;
        write(out, besov_norm(f, &params, part))
    })
}

/// # Safety
/// `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn sns_theta1(x: f64, radius: f64, out: *mut f64) -> SnsStatus {
    guard(|| write(out, check(theta1(x, radius))?))
}

/// # Safety
/// `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn sns_theta2(x: f64, n: f64, out: *mut f64) -> SnsStatus {
    guard(|| write(out, check(theta2(x, n))?))
}

/// Runs the verification suites for a config file. Returns
/// `SNS_STATUS_VERIFICATION_FAILED` when any suite fails.
///
/// # Safety
/// `config_path` must be a NUL-terminated UTF-8 path.
#[no_mangle]
pub unsafe extern "C" fn sns_verify(config_path: *const c_char) -> SnsStatus {
    guard(|| {
        deref(config_path)?;
        let path = CStr::from_ptr(config_path).to_str().map_err(|_| {
            set_error("config path is not UTF-8");
            SnsStatus::InvalidArgument
        })?;
        let config = check(ExperimentConfig::from_file(Path::new(path)))?;
        let verdict = check(run_verify(&config))?;
        if verdict.passed {
            Ok(())
        } else {
            let failed: Vec<&str> = verdict
                .suites
                .iter()
                .filter(|s| !s.passed)
                .map(|s| s.name.as_str())
                .collect();
            set_error(&format!("failed suites: {}", failed.join(", ")));
            Err(SnsStatus::VerificationFailed)
        }
    })
}
