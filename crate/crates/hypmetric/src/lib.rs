//! Poincare-ball metric learning over precomputed backbone features.
//!
//! The crate trains a small projection head (linear layer -> norm clip ->
//! origin exponential map) into the curvature-`c` Poincare ball, measures
//! per-sample uncertainty as one minus the hyperbolic distance to the origin,
//! and uses that value to adapt the contrastive temperature or the triplet
//! margin per sample. Retrieval quality is scored with CMC recall@k.
//!
//! Modules follow the pipeline:
//!
//! * [`ball`] - exact ball geometry, generic over the scalar type
//! * [`diff`] - analytic pullbacks plus the finite-difference referee
//! * [`uncertainty`] - distance-to-origin uncertainty, adaptive tau / margin
//! * [`losses`] - contrastive and triplet objectives with gradients
//! * [`head`] - the trainable projection head and checkpoint persistence
//! * [`trainer`] - class-balanced sampling, Adam, the training loop
//! * [`eval`] - distance matrices and CMC recall@k reports
//! * [`io`] - feature files, splits, synthetic data, embedding exports
//! * [`gradcheck`] - the primitive registry checked against finite differences
//! * [`plot`] - SVG rendering of 2-d ball embeddings

pub mod ball;
pub mod diff;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod head;
pub mod io;
pub mod losses;
pub mod plot;
pub mod trainer;
pub mod uncertainty;

pub use error::{Error, Result};

/// Scalar type used by the training pipeline. Stored features are 32-bit and
/// widened on load; all arithmetic runs in 64-bit because `atanh` near the
/// boundary loses precision quickly.
pub type Real = f64;

pub type Curvature = ball::Curvature<Real>;
pub type BallPoint = ball::BallPoint<Real>;
pub type EuclideanVec = ball::EuclideanVec<Real>;
