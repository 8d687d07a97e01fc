//! C ABI over the lightmux toolkit.
//!
//! All objects are opaque handles created and destroyed by this library.
//! Every fallible call returns an [`LmxStatus`]; on failure a thread-local
//! message is retrievable with [`lmx_last_error`]. Pointers returned by
//! constructors must be released with the matching `_free` function; `_free`
//! accepts null.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use lightmux::model::load_model;
use lightmux::mux::{optimize_snr_restarts, predicted_mse, sigma_w};
use lightmux::noise::{CameraSettings, NoiseModel};
use lightmux::relight::{render_clean, render_noisy, IlluminationState};
use lightmux::{Error, IlluminationMatrix, RelightableModel};

/// Result codes mirroring the CLI exit-code contract.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LmxStatus {
    /// Success.
    LmxOk = 0,
    /// I/O or other runtime failure.
    LmxErrRuntime = 1,
    /// Invalid argument or configuration.
    LmxErrInvalid = 2,
    /// Numerical failure (ill-conditioning, degenerate fit).
    LmxErrNumerical = 3,
    /// Null pointer passed where an object was required.
    LmxErrNullPointer = 4,
}

/// Opaque calibrated noise model.
pub struct LmxNoiseModel(NoiseModel);
/// Opaque relightable scene model.
pub struct LmxModel(RelightableModel);
/// Opaque illumination matrix.
pub struct LmxMatrix(IlluminationMatrix);

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: &str) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg.to_string());
}

fn status_of(err: &Error) -> LmxStatus {
    match err.exit_code() {
        2 => LmxStatus::LmxErrInvalid,
        3 => LmxStatus::LmxErrNumerical,
        _ => LmxStatus::LmxErrRuntime,
    }
}

fn fail(err: Error) -> LmxStatus {
    set_error(&err.to_string());
    status_of(&err)
}

/// Run a closure, translating errors and panics into status codes.
fn guarded(f: impl FnOnce() -> Result<LmxStatus, Error>) -> LmxStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(s)) => s,
        Ok(Err(e)) => fail(e),
        Err(_) => {
            set_error("internal panic");
            LmxStatus::LmxErrRuntime
        }
    }
}

unsafe fn path_arg<'a>(ptr: *const c_char) -> Result<&'a Path, Error> {
    if ptr.is_null() {
        return Err(Error::Parameter("null path".into()));
    }
    let s = CStr::from_ptr(ptr)
        .to_str()
        .map_err(|_| Error::Parameter("path is not valid UTF-8".into()))?;
    Ok(Path::new(s))
}

/// Copy the last error message into `buf` (NUL-terminated, truncated to
/// `len`). Returns the full message length in bytes, excluding the NUL.
#[no_mangle]
pub unsafe extern "C" fn lmx_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        let bytes = msg.as_bytes();
        if !buf.is_null() && len > 0 {
            let n = bytes.len().min(len - 1);
            ptr::copy_nonoverlapping(bytes.as_ptr(), buf.cast::<u8>(), n);
            *buf.add(n) = 0;
        }
        bytes.len()
    })
}

// ---------------------------------------------------------------- noise model

/// Create a noise model from its affine parameters at a reference setting.
#[no_mangle]
pub unsafe extern "C" fn lmx_noise_model_new(
    sigma_p2: f64,
    sigma_r2: f64,
    gain_db: f64,
    exposure_ms: f64,
    out: *mut *mut LmxNoiseModel,
) -> LmxStatus {
    guarded(|| {
        if out.is_null() {
            return Ok(LmxStatus::LmxErrNullPointer);
        }
        let reference = CameraSettings::new(gain_db, exposure_ms)?;
        if !(sigma_p2.is_finite() && sigma_r2.is_finite()) || sigma_p2 < 0.0 || sigma_r2 < 0.0 {
            return Err(Error::Parameter(
                "noise parameters must be finite and non-negative".into(),
            ));
        }
        let model = NoiseModel::new(sigma_p2, sigma_r2, reference);
        *out = Box::into_raw(Box::new(LmxNoiseModel(model)));
        Ok(LmxStatus::LmxOk)
    })
}

/// Load a noise model from the key-value file written by the calibrator.
#[no_mangle]
pub unsafe extern "C" fn lmx_noise_model_load(
    path: *const c_char,
    out: *mut *mut LmxNoiseModel,
) -> LmxStatus {
    guarded(|| {
        if out.is_null() {
            return Ok(LmxStatus::LmxErrNullPointer);
        }
        let model = NoiseModel::load(path_arg(path)?)?;
        *out = Box::into_raw(Box::new(LmxNoiseModel(model)));
        Ok(LmxStatus::LmxOk)
    })
}

/// Re-reference the model's parameters to another gain/exposure setting.
#[no_mangle]
pub unsafe extern "C" fn lmx_noise_model_generalize(
    model: *const LmxNoiseModel,
    gain_db: f64,
    exposure_ms: f64,
    out: *mut *mut LmxNoiseModel,
) -> LmxStatus {
    guarded(|| {
        if model.is_null() || out.is_null() {
            return Ok(LmxStatus::LmxErrNullPointer);
        }
        let settings = CameraSettings::new(gain_db, exposure_ms)?;
        let generalized = (*model).0.generalize(settings);
        *out = Box::into_raw(Box::new(LmxNoiseModel(generalized)));
        Ok(LmxStatus::LmxOk)
    })
}

/// Read the affine parameters (photon slope, read-noise intercept).
#[no_mangle]
pub unsafe extern "C" fn lmx_noise_model_params(
    model: *const LmxNoiseModel,
    sigma_p2: *mut f64,
    sigma_r2: *mut f64,
) -> LmxStatus {
    guarded(|| {
        if model.is_null() || sigma_p2.is_null() || sigma_r2.is_null() {
            return Ok(LmxStatus::LmxErrNullPointer);
        }
        *sigma_p2 = (*model).0.sigma_p2;
        *sigma_r2 = (*model).0.sigma_r2;
        Ok(LmxStatus::LmxOk)
    })
}

#[no_mangle]
pub unsafe extern "C" fn lmx_noise_model_free(model: *mut LmxNoiseModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

// -------------------------------------------------------- illumination matrix

/// Build a matrix from a row-major `n x m` buffer of weights in [0,1].
#[no_mangle]
pub unsafe extern "C" fn lmx_matrix_new(
    n: usize,
    m: usize,
    row_major: *const f64,
    binary: bool,
    out: *mut *mut LmxMatrix,
) -> LmxStatus {
    guarded(|| {
        if row_major.is_null() || out.is_null() {
            return Ok(LmxStatus::LmxErrNullPointer);
        }
        let data = std::slice::from_raw_parts(row_major, n * m);
        let w = nalgebra::DMatrix::from_row_slice(n, m, data);
        let matrix = IlluminationMatrix::new(w, binary)?;
        *out = Box::into_raw(Box::new(LmxMatrix(matrix)));
        Ok(LmxStatus::LmxOk)
    })
}

/// Load a matrix from its CSV form.
#[no_mangle]
pub unsafe extern "C" fn lmx_matrix_load_csv(
    path: *const c_char,
    out: *mut *mut LmxMatrix,
) -> LmxStatus {
    guarded(|| {
        if out.is_null() {
            return Ok(LmxStatus::LmxErrNullPointer);
        }
        let text = std::fs::read_to_string(path_arg(path)?)?;
        let matrix = IlluminationMatrix::from_csv(&text)?;
        *out = Box::into_raw(Box::new(LmxMatrix(matrix)));
        Ok(LmxStatus::LmxOk)
    })
}

/// Number of illuminants (rows) and acquisitions (columns).
#[no_mangle]
pub unsafe extern "C" fn lmx_matrix_dims(
    matrix: *const LmxMatrix,
    n: *mut usize,
    m: *mut usize,
) -> LmxStatus {
    guarded(|| {
        if matrix.is_null() || n.is_null() || m.is_null() {
            return Ok(LmxStatus::LmxErrNullPointer);
        }
        *n = (*matrix).0.num_illuminants();
        *m = (*matrix).0.num_acquisitions();
        Ok(LmxStatus::LmxOk)
    })
}

/// Predicted per-illuminant demultiplexing MSE under the noise model, for an
/// average scene reflectance `r_bar` in gray levels.
#[no_mangle]
pub unsafe extern "C" fn lmx_matrix_predicted_mse(
    matrix: *const LmxMatrix,
    noise: *const LmxNoiseModel,
    r_bar: f64,
    out_mse: *mut f64,
) -> LmxStatus {
    guarded(|| {
        if matrix.is_null() || noise.is_null() || out_mse.is_null() {
            return Ok(LmxStatus::LmxErrNullPointer);
        }
        let sigma = sigma_w(&(*matrix).0, r_bar, &(*noise).0)?;
        *out_mse = predicted_mse(&(*matrix).0, &sigma)?;
        Ok(LmxStatus::LmxOk)
    })
}

/// Stochastic search for the matrix minimizing predicted demultiplexing MSE.
#[no_mangle]
pub unsafe extern "C" fn lmx_matrix_optimize_snr(
    n: usize,
    m: usize,
    noise: *const LmxNoiseModel,
    r_bar: f64,
    iterations: usize,
    seed: u64,
    binary: bool,
    restarts: usize,
    out: *mut *mut LmxMatrix,
) -> LmxStatus {
    guarded(|| {
        if noise.is_null() || out.is_null() {
            return Ok(LmxStatus::LmxErrNullPointer);
        }
        let matrix = optimize_snr_restarts(
            n,
            m,
            &(*noise).0,
            r_bar,
            iterations,
            seed,
            lightmux::mux::DEFAULT_COND_THRESHOLD,
            binary,
            restarts,
        )?;
        *out = Box::into_raw(Box::new(LmxMatrix(matrix)));
        Ok(LmxStatus::LmxOk)
    })
}

#[no_mangle]
pub unsafe extern "C" fn lmx_matrix_free(matrix: *mut LmxMatrix) {
    if !matrix.is_null() {
        drop(Box::from_raw(matrix));
    }
}

// ----------------------------------------------------------- relightable model

/// Load a relightable model directory (manifest + per-illuminant images).
#[no_mangle]
pub unsafe extern "C" fn lmx_model_load(
    dir_path: *const c_char,
    out: *mut *mut LmxModel,
) -> LmxStatus {
    guarded(|| {
        if out.is_null() {
            return Ok(LmxStatus::LmxErrNullPointer);
        }
        let model = load_model(path_arg(dir_path)?)?;
        *out = Box::into_raw(Box::new(LmxModel(model)));
        Ok(LmxStatus::LmxOk)
    })
}

/// Image width, height, and illuminant count of a loaded model.
#[no_mangle]
pub unsafe extern "C" fn lmx_model_dims(
    model: *const LmxModel,
    width: *mut usize,
    height: *mut usize,
    num_illuminants: *mut usize,
) -> LmxStatus {
    guarded(|| {
        if model.is_null() || width.is_null() || height.is_null() || num_illuminants.is_null() {
            return Ok(LmxStatus::LmxErrNullPointer);
        }
        *width = (*model).0.width;
        *height = (*model).0.height;
        *num_illuminants = (*model).0.num_illuminants();
        Ok(LmxStatus::LmxOk)
    })
}

#[no_mangle]
pub unsafe extern "C" fn lmx_model_free(model: *mut LmxModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

// ---------------------------------------------------------------- rendering

/// Render the noise-free mean image under per-illuminant `weights`
/// (length = illuminant count) into `out_pixels` (length = width*height,
/// row-major gray levels).
#[no_mangle]
pub unsafe extern "C" fn lmx_render_clean(
    model: *const LmxModel,
    weights: *const f64,
    weights_len: usize,
    gain_db: f64,
    exposure_ms: f64,
    out_pixels: *mut f64,
) -> LmxStatus {
    guarded(|| {
        if model.is_null() || weights.is_null() || out_pixels.is_null() {
            return Ok(LmxStatus::LmxErrNullPointer);
        }
        let state =
            IlluminationState::new(std::slice::from_raw_parts(weights, weights_len).to_vec())?;
        let settings = CameraSettings::new(gain_db, exposure_ms)?;
        let img = render_clean(&(*model).0, &state, settings)?;
        ptr::copy_nonoverlapping(img.data.as_ptr(), out_pixels, img.data.len());
        Ok(LmxStatus::LmxOk)
    })
}

/// Render with calibrated noise, clipping, and quantization; deterministic
/// for a given seed.
#[no_mangle]
pub unsafe extern "C" fn lmx_render_noisy(
    model: *const LmxModel,
    weights: *const f64,
    weights_len: usize,
    gain_db: f64,
    exposure_ms: f64,
    noise: *const LmxNoiseModel,
    seed: u64,
    gray_max: f64,
    out_pixels: *mut f64,
) -> LmxStatus {
    guarded(|| {
        if model.is_null() || weights.is_null() || noise.is_null() || out_pixels.is_null() {
            return Ok(LmxStatus::LmxErrNullPointer);
        }
        let state =
            IlluminationState::new(std::slice::from_raw_parts(weights, weights_len).to_vec())?;
        let settings = CameraSettings::new(gain_db, exposure_ms)?;
        let rendered = render_noisy(&(*model).0, &state, settings, &(*noise).0, seed, gray_max)?;
        ptr::copy_nonoverlapping(
            rendered.pixels.data.as_ptr(),
            out_pixels,
            rendered.pixels.data.len(),
        );
        Ok(LmxStatus::LmxOk)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn noise_model_round_trip_through_ffi() {
        unsafe {
            let mut handle: *mut LmxNoiseModel = ptr::null_mut();
            let st = lmx_noise_model_new(0.7, 66.0, 15.0, 30.0, &mut handle);
            assert_eq!(st, LmxStatus::LmxOk);
            let mut gen: *mut LmxNoiseModel = ptr::null_mut();
            assert_eq!(
                lmx_noise_model_generalize(handle, 6.0, 84.0, &mut gen),
                LmxStatus::LmxOk
            );
            let (mut p, mut r) = (0.0, 0.0);
            assert_eq!(lmx_noise_model_params(gen, &mut p, &mut r), LmxStatus::LmxOk);
            assert!((p - 0.25).abs() < 0.25 * 0.02, "sigma_p2 {p}");
            assert!((r - 8.35).abs() < 8.35 * 0.02, "sigma_r2 {r}");
            lmx_noise_model_free(gen);
            lmx_noise_model_free(handle);
        }
    }

    #[test]
    fn invalid_arguments_set_error_message() {
        unsafe {
            let mut handle: *mut LmxNoiseModel = ptr::null_mut();
            let st = lmx_noise_model_new(-1.0, 66.0, 15.0, 30.0, &mut handle);
            assert_eq!(st, LmxStatus::LmxErrInvalid);
            let mut buf = [0i8; 128];
            let len = lmx_last_error(buf.as_mut_ptr(), buf.len());
            assert!(len > 0);
            let msg = CStr::from_ptr(buf.as_ptr()).to_str().unwrap();
            assert!(msg.contains("non-negative"), "{msg}");
        }
    }

    #[test]
    fn matrix_mse_matches_library_value() {
        unsafe {
            let mut noise: *mut LmxNoiseModel = ptr::null_mut();
            assert_eq!(
                lmx_noise_model_new(0.0, 1.0, 15.0, 30.0, &mut noise),
                LmxStatus::LmxOk
            );
            // 2x2 identity
            let data = [1.0, 0.0, 0.0, 1.0];
            let mut matrix: *mut LmxMatrix = ptr::null_mut();
            assert_eq!(
                lmx_matrix_new(2, 2, data.as_ptr(), true, &mut matrix),
                LmxStatus::LmxOk
            );
            let (mut n, mut m) = (0usize, 0usize);
            assert_eq!(lmx_matrix_dims(matrix, &mut n, &mut m), LmxStatus::LmxOk);
            assert_eq!((n, m), (2, 2));
            let mut mse = 0.0;
            assert_eq!(
                lmx_matrix_predicted_mse(matrix, noise, 100.0, &mut mse),
                LmxStatus::LmxOk
            );
            // identity demux of unit read noise leaves unit variance per pixel
            assert!((mse - 1.0).abs() < 1e-12, "mse {mse}");
            lmx_matrix_free(matrix);
            lmx_noise_model_free(noise);
        }
    }

    #[test]
    fn null_pointers_are_rejected_not_crashed() {
        unsafe {
            let mut mse = 0.0;
            let st = lmx_matrix_predicted_mse(ptr::null(), ptr::null(), 1.0, &mut mse);
            assert_eq!(st, LmxStatus::LmxErrNullPointer);
            let st = lmx_noise_model_load(ptr::null(), ptr::null_mut());
            assert_eq!(st, LmxStatus::LmxErrNullPointer);
        }
    }
}
