//! Multipoint distribution values as finite-dimensional determinants
//! `det(I - P̄_a K P̄_a)` over truncated windows, with window doubling until
//! the value stabilizes.

use crate::hitting::{extended_kernel, KernelMatrix, Window};
use crate::kernels::{Engine, KernelError};
use crate::model::{validate_initial, validate_request, ModelError, ModelSpec, ObservationRequest};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FredholmError {
    #[error("determinant did not stabilize: window {window}, last delta {delta:.3e}")]
    NotConverged { window: i64, delta: f64 },
    #[error("determinant {raw} outside [0,1] beyond tolerance; kernel assembly is broken")]
    SignedLeakage { raw: f64 },
    #[error("kernel error: {0}")]
    Kernel(#[from] KernelError),
    #[error("model error: {0}")]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone)]
pub struct CdfResult {
    /// Value clipped to [0, 1].
    pub value: f64,
    /// Raw determinant before clipping.
    pub raw: f64,
    pub est_error: f64,
    pub window_used: i64,
    pub theta: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct FredholmOptions {
    pub start_window: i64,
    pub max_window: i64,
    pub det_tol: f64,
}

impl Default for FredholmOptions {
    fn default() -> Self {
        FredholmOptions {
            start_window: 24,
            max_window: 512,
            det_tol: 1e-10,
        }
    }
}

/// Thresholds act through strict exceedance on the lattice: `x > a` for
/// integer `x` means `x >= floor(a) + 1`, so the complementary projection
/// keeps `x <= floor(a)`.
fn lattice_threshold(a: f64) -> Option<i64> {
    if a == f64::NEG_INFINITY {
        None
    } else {
        Some(a.floor() as i64)
    }
}

fn determinant_at(
    engine: &Engine,
    y: &[i64],
    req: &ObservationRequest,
    width: i64,
) -> Result<(f64, f64), FredholmError> {
    let mut indices = Vec::new();
    let mut windows = Vec::new();
    for (idx, a) in req.indices.iter().zip(req.thresholds.iter()) {
        if let Some(cap) = lattice_threshold(*a) {
            indices.push(*idx);
            windows.push(Window::new(cap - width + 1, cap));
        }
    }
    if indices.is_empty() {
        return Ok((1.0, 0.0));
    }
    let kernel: KernelMatrix = extended_kernel(engine, y, &indices, &windows)?;
    Ok((kernel.flatten().det_i_minus(), kernel.tail_bound))
}

/// `P(X_t(n_i) > a_i for all i)` via the Fredholm determinant of the extended
/// kernel, doubling the per-index window until the value stabilizes.
pub fn multipoint_cdf(
    spec: &ModelSpec,
    y: &[i64],
    req: &ObservationRequest,
    opts: &FredholmOptions,
) -> Result<CdfResult, FredholmError> {
    validate_request(spec, req)?;
    validate_initial(y, spec)?;
    let engine = Engine::new(spec, req.t)?;
    let mut width = opts.start_window;
    let (mut prev, _) = determinant_at(&engine, y, req, width)?;
    loop {
        let next_width = width * 2;
        if next_width > opts.max_window {
            return Err(FredholmError::NotConverged {
                window: width,
                delta: f64::NAN,
            });
        }
        let (cur, _) = determinant_at(&engine, y, req, next_width)?;
        let delta = (cur - prev).abs();
        if delta <= opts.det_tol {
            if !(-1e-6..=1.0 + 1e-6).contains(&cur) {
                return Err(FredholmError::SignedLeakage { raw: cur });
            }
            return Ok(CdfResult {
                value: cur.clamp(0.0, 1.0),
                raw: cur,
                est_error: delta,
                window_used: next_width,
                theta: spec.theta,
            });
        }
        prev = cur;
        width = next_width;
    }
}

/// Determinant values at window widths `W, 2W, 4W` for convergence reporting.
pub fn det_stability_report(
    spec: &ModelSpec,
    y: &[i64],
    req: &ObservationRequest,
    base_width: i64,
) -> Result<Vec<(i64, f64)>, FredholmError> {
    validate_request(spec, req)?;
    validate_initial(y, spec)?;
    let engine = Engine::new(spec, req.t)?;
    let mut rows = Vec::new();
    for mult in [1, 2, 4] {
        let w = base_width * mult;
        let (det, _) = determinant_at(&engine, y, req, w)?;
        rows.push((w, det));
    }
    Ok(rows)
}
