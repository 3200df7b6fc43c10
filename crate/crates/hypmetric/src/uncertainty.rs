//! Distance-to-origin uncertainty and the batch-relative quantities derived
//! from it: the adaptive contrastive temperature and the adaptive triplet
//! margin.
//!
//! An embedding close to the ball's origin is treated as uncertain, one far
//! out as confident:
//!
//! ```text
//! uncertainty(x) = 1 - d(x, 0)
//! ```
//!
//! The raw value can go negative (the distance to the origin is unbounded
//! inside the clipped ball), so a positive floor keeps the downstream
//! logarithms defined while preserving the ordering of non-degenerate
//! samples.

use crate::ball::dist_to_origin;
use crate::error::{Error, Result};
use crate::{BallPoint, Curvature};

/// Floor applied to raw uncertainty values before they enter a ratio.
pub const UNCERTAINTY_FLOOR: f64 = 1e-3;

/// Floor on the adaptive temperature; guards the contrastive exponent on
/// pathological batches.
pub const TAU_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UncertaintyValue {
    /// `1 - d(x, 0)`; may be negative for far-out points.
    pub raw: f64,
    /// `max(raw, UNCERTAINTY_FLOOR)`, always in `(0, 1]`.
    pub clamped: f64,
}

pub fn uncertainty(x: &BallPoint) -> UncertaintyValue {
    let raw = 1.0 - dist_to_origin(x);
    UncertaintyValue {
        raw,
        clamped: raw.max(UNCERTAINTY_FLOOR),
    }
}

/// Clamped uncertainties of a batch together with the batch maximum,
/// recomputed every step.
#[derive(Debug, Clone)]
pub(crate) struct BatchUncertainty {
    pub clamped: Vec<f64>,
    pub max: f64,
}

pub(crate) fn batch_uncertainty(batch: &[BallPoint]) -> Result<BatchUncertainty> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let clamped: Vec<f64> = batch.iter().map(|x| uncertainty(x).clamped).collect();
    let max = clamped.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(BatchUncertainty { clamped, max })
}

/// Per-sample contrastive temperatures
/// `tau_i = ln(U_i / max_j U_j + 1) / scale`, floored at [`TAU_FLOOR`].
///
/// The sample attaining the batch maximum gets exactly `ln(2)/scale`.
#[derive(Debug, Clone)]
pub struct AdaptiveTau {
    pub tau: Vec<f64>,
    pub scale: f64,
}

pub fn adaptive_tau(batch: &[BallPoint], scale: f64) -> Result<AdaptiveTau> {
    if scale <= 0.0 || !scale.is_finite() {
        return Err(Error::InvalidConfig(format!(
            "scale must be positive, got {scale}"
        )));
    }
    let u = batch_uncertainty(batch)?;
    let tau = u
        .clamped
        .iter()
        .map(|&ui| ((ui / u.max + 1.0).ln() / scale).max(TAU_FLOOR))
        .collect();
    Ok(AdaptiveTau { tau, scale })
}

/// Per-anchor triplet margins
/// `alpha_i = ln(U_i / max_j U_j + 1) * exp(c)`.
///
/// The maximal-uncertainty anchor gets exactly `ln(2) * exp(c)`.
#[derive(Debug, Clone)]
pub struct AdaptiveMargin {
    pub alpha: Vec<f64>,
    pub curvature: Curvature,
}

pub fn adaptive_margin(anchors: &[BallPoint]) -> Result<AdaptiveMargin> {
    let u = batch_uncertainty(anchors)?;
    let curvature = anchors[0].curvature();
    let factor = curvature.get().exp();
    let alpha = u
        .clamped
        .iter()
        .map(|&ui| (ui / u.max + 1.0).ln() * factor)
        .collect();
    Ok(AdaptiveMargin { alpha, curvature })
}
