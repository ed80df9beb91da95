//! C ABI over the registration engine: opaque handles, integer status
//! codes, and a per-thread error message.
//!
//! Conventions:
//! - Every fallible call returns [`MrStatus`]; `MR_STATUS_OK` is 0.
//! - On failure, [`mr_last_error`] returns a message describing the most
//!   recent error on the calling thread; the pointer stays valid until
//!   the next failing call on that thread.
//! - Handles created by `*_create`, `*_read`, or an out-parameter must
//!   be released with the matching `*_free`; strings returned through
//!   `char **` out-parameters with [`mr_string_free`].
//! - Buffers passed to `*_create` are copied; data pointers returned by
//!   accessors remain valid until the owning handle is freed.
//! - Volumes are dense row-major with x fastest; displacement fields
//!   store three consecutive f32 components per voxel, in voxel units,
//!   following `warped(p) = moving(p + u(p))`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use multireg::{
    evaluate_all, jacobian_det_stats, read_mvol, register_pair, warp_labels, warp_scalar,
    AnyVolume, DisplacementField, Error, LabelVolume, RegistrationConfig, ScalarVolume,
    WeightingMode,
};

/// Status code returned by every fallible function.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MrStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidArgument = 2,
    Io = 3,
    Panic = 4,
}

/// Values accepted in [`MrConfig::weighting`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MrWeighting {
    None = 0,
    Intensity = 1,
    Gradient = 2,
    Full = 3,
}

/// Plain-data mirror of the engine configuration. Obtain defaults from
/// [`mr_config_default`], then override fields as needed.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct MrConfig {
    /// Number of resolution levels (>= 1).
    pub levels: usize,
    /// Descent iterations per stage.
    pub iters: usize,
    /// Initial step length in voxels of the current level.
    pub step: f64,
    /// Smoothness weight.
    pub lambda: f64,
    /// One of the [`MrWeighting`] values.
    pub weighting: u32,
    pub gain: f64,
    pub bias: f64,
    /// True integrates each increment as a stationary velocity.
    pub diff: bool,
    /// Scaling-and-squaring steps used when `diff` is set.
    pub squaring_steps: u32,
    /// Correlation window edge (odd), or 0 for global correlation.
    pub ncc_window: usize,
}

/// Opaque scalar volume handle.
pub struct MrVolume(ScalarVolume);
/// Opaque label volume handle.
pub struct MrLabels(LabelVolume);
/// Opaque displacement field handle.
pub struct MrField(DisplacementField);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn fail(status: MrStatus, msg: impl std::fmt::Display) -> MrStatus {
    let text = msg.to_string().replace('\0', " ");
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(text).expect("NUL bytes stripped");
    });
    status
}

fn fail_err(e: Error) -> MrStatus {
    let status = match e {
        Error::Io { .. }
        | Error::BadMagic { .. }
        | Error::UnsupportedVersion { .. }
        | Error::UnsupportedDtype { .. }
        | Error::Truncated { .. }
        | Error::MalformedFile { .. } => MrStatus::Io,
        _ => MrStatus::InvalidArgument,
    };
    fail(status, e)
}

fn null_arg(what: &str) -> MrStatus {
    fail(MrStatus::NullArgument, format!("{what} must not be null"))
}

/// Runs a body that may touch caller pointers, converting panics into
/// `MR_STATUS_PANIC` instead of unwinding across the ABI.
fn guarded(f: impl FnOnce() -> MrStatus) -> MrStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(status) => status,
        Err(_) => fail(MrStatus::Panic, "internal panic"),
    }
}

unsafe fn path_from(ptr: *const c_char) -> Result<PathBuf, MrStatus> {
    if ptr.is_null() {
        return Err(null_arg("path"));
    }
    match CStr::from_ptr(ptr).to_str() {
        Ok(s) => Ok(PathBuf::from(s)),
        Err(_) => Err(fail(MrStatus::InvalidArgument, "path is not valid UTF-8")),
    }
}

unsafe fn give_string(out: *mut *mut c_char, text: String) -> MrStatus {
    let c = match CString::new(text) {
        Ok(c) => c,
        Err(_) => return fail(MrStatus::InvalidArgument, "output contained NUL"),
    };
    *out = c.into_raw();
    MrStatus::Ok
}

/// Shared bodies for the per-kind handle functions.
mod plumbing {
    use super::*;

    pub type Dims = (usize, usize, usize);
    pub type Spacing = (f32, f32, f32);

    pub trait Payload: Sized {
        type Elem: Copy + Default;
        const COMPONENTS: usize;
        fn from_vec(dims: Dims, spacing: Spacing, data: Vec<Self::Elem>) -> multireg::Result<Self>;
        fn extract(any: AnyVolume) -> multireg::Result<Self>;
        fn write(&self, path: &std::path::Path) -> multireg::Result<()>;
        fn dims(&self) -> Dims;
        fn spacing(&self) -> Spacing;
        fn data_ptr(&self) -> *const Self::Elem;
    }

    impl Payload for ScalarVolume {
        type Elem = f32;
        const COMPONENTS: usize = 1;
        fn from_vec(dims: Dims, spacing: Spacing, data: Vec<f32>) -> multireg::Result<Self> {
            ScalarVolume::from_vec(dims, spacing, data)
        }
        fn extract(any: AnyVolume) -> multireg::Result<Self> {
            any.into_scalar()
        }
        fn write(&self, path: &std::path::Path) -> multireg::Result<()> {
            self.write_mvol(path)
        }
        fn dims(&self) -> Dims {
            self.dims
        }
        fn spacing(&self) -> Spacing {
            self.spacing
        }
        fn data_ptr(&self) -> *const f32 {
            self.data.as_ptr()
        }
    }

    impl Payload for LabelVolume {
        type Elem = u16;
        const COMPONENTS: usize = 1;
        fn from_vec(dims: Dims, spacing: Spacing, data: Vec<u16>) -> multireg::Result<Self> {
            LabelVolume::from_vec(dims, spacing, data)
        }
        fn extract(any: AnyVolume) -> multireg::Result<Self> {
            any.into_labels()
        }
        fn write(&self, path: &std::path::Path) -> multireg::Result<()> {
            self.write_mvol(path)
        }
        fn dims(&self) -> Dims {
            self.dims
        }
        fn spacing(&self) -> Spacing {
            self.spacing
        }
        fn data_ptr(&self) -> *const u16 {
            self.data.as_ptr()
        }
    }

    impl Payload for DisplacementField {
        type Elem = f32;
        const COMPONENTS: usize = 3;
        fn from_vec(dims: Dims, spacing: Spacing, data: Vec<f32>) -> multireg::Result<Self> {
            DisplacementField::from_vec(dims, spacing, data)
        }
        fn extract(any: AnyVolume) -> multireg::Result<Self> {
            any.into_field()
        }
        fn write(&self, path: &std::path::Path) -> multireg::Result<()> {
            self.write_mvol(path)
        }
        fn dims(&self) -> Dims {
            self.dims
        }
        fn spacing(&self) -> Spacing {
            self.spacing
        }
        fn data_ptr(&self) -> *const f32 {
            self.data.as_ptr()
        }
    }

    pub unsafe fn create<P: Payload, H>(
        wrap: impl FnOnce(P) -> H,
        dims: Dims,
        spacing: Spacing,
        data: *const P::Elem,
        out: *mut *mut H,
    ) -> MrStatus {
        guarded(|| {
            if out.is_null() {
                return null_arg("out");
            }
            if dims.0 == 0 || dims.1 == 0 || dims.2 == 0 {
                return fail(MrStatus::InvalidArgument, "dimensions must be positive");
            }
            if ![spacing.0, spacing.1, spacing.2]
                .iter()
                .all(|s| s.is_finite() && *s > 0.0)
            {
                return fail(
                    MrStatus::InvalidArgument,
                    "spacing must be positive and finite",
                );
            }
            let n = dims
                .0
                .checked_mul(dims.1)
                .and_then(|v| v.checked_mul(dims.2))
                .and_then(|v| v.checked_mul(P::COMPONENTS));
            let Some(n) = n else {
                return fail(MrStatus::InvalidArgument, "dimensions overflow");
            };
            let vec = if data.is_null() {
                vec![P::Elem::default(); n]
            } else {
                std::slice::from_raw_parts(data, n).to_vec()
            };
            match P::from_vec(dims, spacing, vec) {
                Ok(v) => {
                    *out = Box::into_raw(Box::new(wrap(v)));
                    MrStatus::Ok
                }
                Err(e) => fail_err(e),
            }
        })
    }

    pub unsafe fn read<P: Payload, H>(
        wrap: impl FnOnce(P) -> H,
        path: *const c_char,
        out: *mut *mut H,
    ) -> MrStatus {
        guarded(|| {
            if out.is_null() {
                return null_arg("out");
            }
            let path = match path_from(path) {
                Ok(p) => p,
                Err(s) => return s,
            };
            match read_mvol(&path).and_then(P::extract) {
                Ok(v) => {
                    *out = Box::into_raw(Box::new(wrap(v)));
                    MrStatus::Ok
                }
                Err(e) => fail_err(e),
            }
        })
    }

    pub unsafe fn write<P: Payload>(v: Option<&P>, path: *const c_char) -> MrStatus {
        guarded(|| {
            let Some(v) = v else {
                return null_arg("handle");
            };
            let path = match path_from(path) {
                Ok(p) => p,
                Err(s) => return s,
            };
            match v.write(&path) {
                Ok(()) => MrStatus::Ok,
                Err(e) => fail_err(e),
            }
        })
    }

    pub unsafe fn dims<P: Payload>(
        v: Option<&P>,
        nx: *mut usize,
        ny: *mut usize,
        nz: *mut usize,
    ) -> MrStatus {
        guarded(|| {
            let Some(v) = v else {
                return null_arg("handle");
            };
            if nx.is_null() || ny.is_null() || nz.is_null() {
                return null_arg("dimension out-parameters");
            }
            (*nx, *ny, *nz) = v.dims();
            MrStatus::Ok
        })
    }

    pub unsafe fn spacing<P: Payload>(
        v: Option<&P>,
        sx: *mut f32,
        sy: *mut f32,
        sz: *mut f32,
    ) -> MrStatus {
        guarded(|| {
            let Some(v) = v else {
                return null_arg("handle");
            };
            if sx.is_null() || sy.is_null() || sz.is_null() {
                return null_arg("spacing out-parameters");
            }
            (*sx, *sy, *sz) = v.spacing();
            MrStatus::Ok
        })
    }
}

use plumbing::Payload;

/// Message for the most recent failure on this thread, as a
/// NUL-terminated string. Never null; empty before any failure.
#[no_mangle]
pub extern "C" fn mr_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn mr_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Frees a string returned through a `char **` out-parameter.
///
/// # Safety
/// `s` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn mr_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Fills `out` with the library defaults.
///
/// # Safety
/// `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn mr_config_default(out: *mut MrConfig) -> MrStatus {
    guarded(|| {
        if out.is_null() {
            return null_arg("out");
        }
        let d = RegistrationConfig::default();
        *out = MrConfig {
            levels: d.depth,
            iters: d.iters_per_level,
            step: d.step_init,
            lambda: d.lambda,
            weighting: MrWeighting::Full as u32,
            gain: d.gain,
            bias: d.bias,
            diff: d.diff,
            squaring_steps: d.squaring_steps,
            ncc_window: d.ncc_window[0],
        };
        MrStatus::Ok
    })
}

fn to_engine_config(c: &MrConfig) -> Result<RegistrationConfig, MrStatus> {
    let weighting_mode = match c.weighting {
        0 => WeightingMode::None,
        1 => WeightingMode::Intensity,
        2 => WeightingMode::Gradient,
        3 => WeightingMode::Full,
        other => {
            return Err(fail(
                MrStatus::InvalidArgument,
                format!("weighting must be 0..=3, got {other}"),
            ))
        }
    };
    Ok(RegistrationConfig {
        depth: c.levels,
        iters_per_level: c.iters,
        step_init: c.step,
        lambda: c.lambda,
        weighting_mode,
        gain: c.gain,
        bias: c.bias,
        diff: c.diff,
        squaring_steps: c.squaring_steps,
        ncc_window: vec![c.ncc_window],
    })
}

// ---------------------------------------------------------------------
// Scalar volume handles.

/// Copies `nx*ny*nz` samples into a new scalar volume; a null `data`
/// yields zeros.
///
/// # Safety
/// `data`, when non-null, must point at `nx*ny*nz` readable floats.
#[no_mangle]
pub unsafe extern "C" fn mr_volume_create(
    nx: usize,
    ny: usize,
    nz: usize,
    sx: f32,
    sy: f32,
    sz: f32,
    data: *const f32,
    out: *mut *mut MrVolume,
) -> MrStatus {
    plumbing::create(MrVolume, (nx, ny, nz), (sx, sy, sz), data, out)
}

/// Reads a scalar volume from a file.
///
/// # Safety
/// `path` must be NUL-terminated; `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn mr_volume_read(path: *const c_char, out: *mut *mut MrVolume) -> MrStatus {
    plumbing::read(MrVolume, path, out)
}

/// Writes a scalar volume to a file.
///
/// # Safety
/// Pointers must be valid; `path` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn mr_volume_write(v: *const MrVolume, path: *const c_char) -> MrStatus {
    plumbing::write(v.as_ref().map(|v| &v.0), path)
}

/// Stores the grid dimensions into `nx`, `ny`, `nz`.
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn mr_volume_dims(
    v: *const MrVolume,
    nx: *mut usize,
    ny: *mut usize,
    nz: *mut usize,
) -> MrStatus {
    plumbing::dims(v.as_ref().map(|v| &v.0), nx, ny, nz)
}

/// Stores the voxel spacing into `sx`, `sy`, `sz`.
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn mr_volume_spacing(
    v: *const MrVolume,
    sx: *mut f32,
    sy: *mut f32,
    sz: *mut f32,
) -> MrStatus {
    plumbing::spacing(v.as_ref().map(|v| &v.0), sx, sy, sz)
}

/// Borrow of the sample buffer (`nx*ny*nz` floats, x fastest). Null if
/// the handle is null; dies with the handle.
///
/// # Safety
/// `v` must be a valid handle or null.
#[no_mangle]
pub unsafe extern "C" fn mr_volume_data(v: *const MrVolume) -> *const f32 {
    v.as_ref().map_or(std::ptr::null(), |v| v.0.data_ptr())
}

/// Releases a scalar volume handle; null is ignored.
///
/// # Safety
/// `v` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn mr_volume_free(v: *mut MrVolume) {
    if !v.is_null() {
        drop(Box::from_raw(v));
    }
}

// ---------------------------------------------------------------------
// Label volume handles.

/// Copies `nx*ny*nz` labels into a new label volume; a null `data`
/// yields all-background.
///
/// # Safety
/// `data`, when non-null, must point at `nx*ny*nz` readable u16 values.
#[no_mangle]
pub unsafe extern "C" fn mr_labels_create(
    nx: usize,
    ny: usize,
    nz: usize,
    sx: f32,
    sy: f32,
    sz: f32,
    data: *const u16,
    out: *mut *mut MrLabels,
) -> MrStatus {
    plumbing::create(MrLabels, (nx, ny, nz), (sx, sy, sz), data, out)
}

/// Reads a label volume from a file.
///
/// # Safety
/// `path` must be NUL-terminated; `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn mr_labels_read(path: *const c_char, out: *mut *mut MrLabels) -> MrStatus {
    plumbing::read(MrLabels, path, out)
}

/// Writes a label volume to a file.
///
/// # Safety
/// Pointers must be valid; `path` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn mr_labels_write(v: *const MrLabels, path: *const c_char) -> MrStatus {
    plumbing::write(v.as_ref().map(|v| &v.0), path)
}

/// Stores the grid dimensions into `nx`, `ny`, `nz`.
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn mr_labels_dims(
    v: *const MrLabels,
    nx: *mut usize,
    ny: *mut usize,
    nz: *mut usize,
) -> MrStatus {
    plumbing::dims(v.as_ref().map(|v| &v.0), nx, ny, nz)
}

/// Stores the voxel spacing into `sx`, `sy`, `sz`.
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn mr_labels_spacing(
    v: *const MrLabels,
    sx: *mut f32,
    sy: *mut f32,
    sz: *mut f32,
) -> MrStatus {
    plumbing::spacing(v.as_ref().map(|v| &v.0), sx, sy, sz)
}

/// Borrow of the label buffer (`nx*ny*nz` u16 values, x fastest). Null
/// if the handle is null; dies with the handle.
///
/// # Safety
/// `v` must be a valid handle or null.
#[no_mangle]
pub unsafe extern "C" fn mr_labels_data(v: *const MrLabels) -> *const u16 {
    v.as_ref().map_or(std::ptr::null(), |v| v.0.data_ptr())
}

/// Releases a label volume handle; null is ignored.
///
/// # Safety
/// `v` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn mr_labels_free(v: *mut MrLabels) {
    if !v.is_null() {
        drop(Box::from_raw(v));
    }
}

// ---------------------------------------------------------------------
// Displacement field handles.

/// Copies `3*nx*ny*nz` components (three per voxel) into a new field; a
/// null `data` yields the identity (zero) field.
///
/// # Safety
/// `data`, when non-null, must point at `3*nx*ny*nz` readable floats.
#[no_mangle]
pub unsafe extern "C" fn mr_field_create(
    nx: usize,
    ny: usize,
    nz: usize,
    sx: f32,
    sy: f32,
    sz: f32,
    data: *const f32,
    out: *mut *mut MrField,
) -> MrStatus {
    plumbing::create(MrField, (nx, ny, nz), (sx, sy, sz), data, out)
}

/// Reads a displacement field from a file.
///
/// # Safety
/// `path` must be NUL-terminated; `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn mr_field_read(path: *const c_char, out: *mut *mut MrField) -> MrStatus {
    plumbing::read(MrField, path, out)
}

/// Writes a displacement field to a file.
///
/// # Safety
/// Pointers must be valid; `path` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn mr_field_write(v: *const MrField, path: *const c_char) -> MrStatus {
    plumbing::write(v.as_ref().map(|v| &v.0), path)
}

/// Stores the grid dimensions into `nx`, `ny`, `nz`.
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn mr_field_dims(
    v: *const MrField,
    nx: *mut usize,
    ny: *mut usize,
    nz: *mut usize,
) -> MrStatus {
    plumbing::dims(v.as_ref().map(|v| &v.0), nx, ny, nz)
}

/// Stores the voxel spacing into `sx`, `sy`, `sz`.
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn mr_field_spacing(
    v: *const MrField,
    sx: *mut f32,
    sy: *mut f32,
    sz: *mut f32,
) -> MrStatus {
    plumbing::spacing(v.as_ref().map(|v| &v.0), sx, sy, sz)
}

/// Borrow of the component buffer (`3*nx*ny*nz` floats: ux, uy, uz per
/// voxel, x fastest). Null if the handle is null; dies with the handle.
///
/// # Safety
/// `v` must be a valid handle or null.
#[no_mangle]
pub unsafe extern "C" fn mr_field_data(v: *const MrField) -> *const f32 {
    v.as_ref().map_or(std::ptr::null(), |v| v.0.data_ptr())
}

/// Releases a displacement field handle; null is ignored.
///
/// # Safety
/// `v` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn mr_field_free(v: *mut MrField) {
    if !v.is_null() {
        drop(Box::from_raw(v));
    }
}

// ---------------------------------------------------------------------
// Engine operations.

/// Registers `moving` onto `fixed`, producing the displacement field
/// and, when `out_json` is non-null, the full report as a JSON string.
/// Label handles are optional but must be given as a pair; they enable
/// overlap tracking in the report.
///
/// # Safety
/// Non-null pointers must be valid for the call.
#[no_mangle]
pub unsafe extern "C" fn mr_register(
    fixed: *const MrVolume,
    moving: *const MrVolume,
    fixed_labels: *const MrLabels,
    moving_labels: *const MrLabels,
    config: *const MrConfig,
    out_field: *mut *mut MrField,
    out_json: *mut *mut c_char,
) -> MrStatus {
    guarded(|| {
        let (Some(fixed), Some(moving)) = (fixed.as_ref(), moving.as_ref()) else {
            return null_arg("fixed and moving volumes");
        };
        let Some(config) = config.as_ref() else {
            return null_arg("config");
        };
        if out_field.is_null() {
            return null_arg("out_field");
        }
        let labels = match (fixed_labels.as_ref(), moving_labels.as_ref()) {
            (Some(f), Some(m)) => Some((&f.0, &m.0)),
            (None, None) => None,
            _ => {
                return fail(
                    MrStatus::InvalidArgument,
                    "labels must be given as a pair or not at all",
                )
            }
        };
        let engine_config = match to_engine_config(config) {
            Ok(c) => c,
            Err(s) => return s,
        };
        let report = match register_pair(&fixed.0, &moving.0, &engine_config, labels) {
            Ok(r) => r,
            Err(e) => return fail_err(e),
        };
        if !out_json.is_null() {
            let text = match serde_json::to_string(&report) {
                Ok(t) => t,
                Err(e) => return fail(MrStatus::InvalidArgument, e),
            };
            let status = give_string(out_json, text);
            if status != MrStatus::Ok {
                return status;
            }
        }
        *out_field = Box::into_raw(Box::new(MrField(report.field)));
        MrStatus::Ok
    })
}

/// Resamples a scalar volume through a displacement field.
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn mr_warp_volume(
    moving: *const MrVolume,
    field: *const MrField,
    out: *mut *mut MrVolume,
) -> MrStatus {
    guarded(|| {
        let (Some(moving), Some(field)) = (moving.as_ref(), field.as_ref()) else {
            return null_arg("moving and field");
        };
        if out.is_null() {
            return null_arg("out");
        }
        match warp_scalar(&moving.0, &field.0) {
            Ok(v) => {
                *out = Box::into_raw(Box::new(MrVolume(v)));
                MrStatus::Ok
            }
            Err(e) => fail_err(e),
        }
    })
}

/// Resamples a label volume through a displacement field with
/// nearest-neighbor lookups.
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn mr_warp_labels(
    moving: *const MrLabels,
    field: *const MrField,
    out: *mut *mut MrLabels,
) -> MrStatus {
    guarded(|| {
        let (Some(moving), Some(field)) = (moving.as_ref(), field.as_ref()) else {
            return null_arg("moving labels and field");
        };
        if out.is_null() {
            return null_arg("out");
        }
        match warp_labels(&moving.0, &field.0) {
            Ok(v) => {
                *out = Box::into_raw(Box::new(MrLabels(v)));
                MrStatus::Ok
            }
            Err(e) => fail_err(e),
        }
    })
}

/// Compares label volumes and summarizes field regularity; the report
/// is returned as a JSON string through `out_json`.
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn mr_evaluate(
    fixed_labels: *const MrLabels,
    warped_labels: *const MrLabels,
    field: *const MrField,
    out_json: *mut *mut c_char,
) -> MrStatus {
    guarded(|| {
        let (Some(f), Some(w), Some(field)) =
            (fixed_labels.as_ref(), warped_labels.as_ref(), field.as_ref())
        else {
            return null_arg("labels and field");
        };
        if out_json.is_null() {
            return null_arg("out_json");
        }
        match evaluate_all(&f.0, &w.0, &field.0) {
            Ok(report) => match serde_json::to_string(&report) {
                Ok(text) => give_string(out_json, text),
                Err(e) => fail(MrStatus::InvalidArgument, e),
            },
            Err(e) => fail_err(e),
        }
    })
}

/// Stores the smallest local deformation-Jacobian determinant and the
/// fraction of voxels where it is non-positive.
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn mr_field_jacobian(
    field: *const MrField,
    min_det: *mut f64,
    frac_nonpositive: *mut f64,
) -> MrStatus {
    guarded(|| {
        let Some(field) = field.as_ref() else {
            return null_arg("field");
        };
        if min_det.is_null() || frac_nonpositive.is_null() {
            return null_arg("out-parameters");
        }
        let stats = jacobian_det_stats(&field.0);
        *min_det = stats.min_det;
        *frac_nonpositive = stats.frac_nonpositive;
        MrStatus::Ok
    })
}
