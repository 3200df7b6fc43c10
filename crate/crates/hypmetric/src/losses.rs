//! The two training objectives: contrastive loss with per-sample adaptive
//! temperature and triplet loss with per-anchor adaptive margin, plus the
//! fixed-value baselines used for ablations.
//!
//! Similarities are negative hyperbolic distances, `s(x, y) = -d(x, y)`.
//! For each anchor `i` with positive `p` the contrastive term is
//!
//! ```text
//! -ln( exp(s_ip / tau_i) / sum_{j != i} exp(s_ij / tau_i) )
//! ```
//!
//! averaged over all ordered positive pairs. The triplet term per anchor is
//! `[d(a, p) - d(a, n) + alpha_a]_+` with batch-hard or batch-all mining,
//! averaged per anchor (batch-hard) or per triple (batch-all).
//!
//! In adaptive mode the temperature / margin is *set* from each sample's
//! uncertainty, recomputed every step; it enters the loss as a per-batch
//! constant and carries no gradient. The uncertainty is a readout of the
//! geometry, not a learned function, so gradients flow only through the
//! distance terms. The `*_with_*` forms take those per-sample values
//! explicitly and are the functions whose gradients the optimizer applies.

use crate::diff::{hyp_distance_raw, hyp_distance_vjp};
use crate::error::{Error, Result};
use crate::head::{head_backward, head_forward, HeadParams};
use crate::io::FeatureRecord;
use crate::uncertainty::{adaptive_margin, adaptive_tau, batch_uncertainty};
use crate::BallPoint;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TauMode {
    /// `tau_i = ln(U_i / max_j U_j + 1) / scale`
    Adaptive { scale: f64 },
    Fixed { tau: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MarginMode {
    /// `alpha_i = ln(U_i / max_j U_j + 1) * exp(c)`
    Adaptive,
    Fixed { alpha: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mining {
    /// Hardest positive and hardest negative per anchor; ties break to the
    /// lowest index.
    BatchHard,
    /// Every (anchor, positive, negative) triple.
    BatchAll,
}

/// Which objective the pipeline optimizes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LossKind {
    Contrastive { mode: TauMode },
    Triplet { mode: MarginMode, mining: Mining },
}

/// A batch of ball embeddings with integer class labels.
#[derive(Debug, Clone)]
pub struct LabeledBatch {
    embeddings: Vec<BallPoint>,
    labels: Vec<u32>,
}

impl LabeledBatch {
    pub fn new(embeddings: Vec<BallPoint>, labels: Vec<u32>) -> Result<Self> {
        if embeddings.is_empty() {
            return Err(Error::EmptyBatch);
        }
        if embeddings.len() != labels.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} embeddings, {} labels",
                embeddings.len(),
                labels.len()
            )));
        }
        let first = &embeddings[0];
        for e in &embeddings[1..] {
            if e.curvature() != first.curvature() {
                return Err(Error::CurvatureMismatch {
                    left: first.curvature().get(),
                    right: e.curvature().get(),
                });
            }
            if e.dim() != first.dim() {
                return Err(Error::DimensionMismatch {
                    expected: first.dim(),
                    got: e.dim(),
                });
            }
        }
        Ok(LabeledBatch { embeddings, labels })
    }

    pub fn len(&self) -> usize {
        self.embeddings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.embeddings.is_empty()
    }

    pub fn embeddings(&self) -> &[BallPoint] {
        &self.embeddings
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }
}

/// Loss value, exact gradient with respect to every embedding, and the
/// per-sample diagnostics the trainer logs.
#[derive(Debug, Clone)]
pub struct LossOutput {
    pub loss: f64,
    pub grad_embeddings: Vec<Vec<f64>>,
    /// Per-sample temperature (contrastive) or margin (triplet).
    pub tau_or_alpha: Vec<f64>,
    /// Per-sample clamped uncertainty.
    pub uncertainty: Vec<f64>,
}

fn positives_of(labels: &[u32]) -> Vec<Vec<usize>> {
    labels
        .iter()
        .enumerate()
        .map(|(i, &li)| {
            labels
                .iter()
                .enumerate()
                .filter(|&(j, &lj)| j != i && lj == li)
                .map(|(j, _)| j)
                .collect()
        })
        .collect()
}

fn pairwise_distances(batch: &LabeledBatch) -> Vec<Vec<f64>> {
    let b = batch.len();
    let c = batch.embeddings[0].curvature().get();
    let mut d = vec![vec![0.0; b]; b];
    for i in 0..b {
        for j in (i + 1)..b {
            let v = hyp_distance_raw(
                c,
                batch.embeddings[i].coords(),
                batch.embeddings[j].coords(),
            );
            d[i][j] = v;
            d[j][i] = v;
        }
    }
    d
}

/// Accumulates distance cotangents `g_d[i][j]` (for i < j) into embedding
/// gradients through the pairwise-distance pullback.
fn chain_distance_grads(batch: &LabeledBatch, g_d: &[Vec<f64>], grad: &mut [Vec<f64>]) {
    let b = batch.len();
    let c = batch.embeddings[0].curvature().get();
    for i in 0..b {
        for j in (i + 1)..b {
            let cot = g_d[i][j];
            if cot == 0.0 {
                continue;
            }
            let (gi, gj) = hyp_distance_vjp(
                c,
                batch.embeddings[i].coords(),
                batch.embeddings[j].coords(),
                cot,
            );
            for (acc, v) in grad[i].iter_mut().zip(&gi) {
                *acc += v;
            }
            for (acc, v) in grad[j].iter_mut().zip(&gj) {
                *acc += v;
            }
        }
    }
}

pub fn contrastive_loss(batch: &LabeledBatch, mode: TauMode) -> Result<LossOutput> {
    let tau = match mode {
        TauMode::Fixed { tau } => {
            if !(tau.is_finite() && tau > 0.0) {
                return Err(Error::InvalidConfig(format!(
                    "fixed tau must be positive, got {tau}"
                )));
            }
            vec![tau; batch.len()]
        }
        TauMode::Adaptive { scale } => adaptive_tau(&batch.embeddings, scale)?.tau,
    };
    contrastive_with_taus(batch, &tau)
}

/// Contrastive loss for explicit per-sample temperatures, the form the
/// optimizer differentiates each step.
pub fn contrastive_with_taus(batch: &LabeledBatch, tau: &[f64]) -> Result<LossOutput> {
    let b = batch.len();
    if tau.len() != b || tau.iter().any(|t| !(t.is_finite() && *t > 0.0)) {
        return Err(Error::InvalidConfig(
            "need one positive finite temperature per sample".into(),
        ));
    }
    let positives = positives_of(&batch.labels);
    for (i, p) in positives.iter().enumerate() {
        if p.is_empty() {
            return Err(Error::NoPositivePairs {
                index: i,
                label: batch.labels[i],
            });
        }
    }
    let u = batch_uncertainty(&batch.embeddings)?;

    let d = pairwise_distances(batch);
    let n_pos: usize = positives.iter().map(|p| p.len()).sum();
    let inv_pairs = 1.0 / n_pos as f64;

    let mut loss = 0.0;
    let mut g_s = vec![vec![0.0; b]; b]; // dL/ds_ij, anchor i
    for i in 0..b {
        let ti = tau[i];
        let mut max_logit = f64::NEG_INFINITY;
        for j in 0..b {
            if j != i {
                max_logit = max_logit.max(-d[i][j] / ti);
            }
        }
        let mut z = 0.0;
        for j in 0..b {
            if j != i {
                z += (-d[i][j] / ti - max_logit).exp();
            }
        }
        let lse = max_logit + z.ln();
        let k_i = positives[i].len() as f64;

        for &p in &positives[i] {
            loss += (d[i][p] / ti + lse) * inv_pairs;
        }
        for j in 0..b {
            if j == i {
                continue;
            }
            let sigma = (-d[i][j] / ti - max_logit).exp() / z;
            g_s[i][j] += inv_pairs * k_i * sigma / ti;
        }
        for &p in &positives[i] {
            g_s[i][p] -= inv_pairs / ti;
        }
    }

    // s = -d: flip each pair of ordered similarity cotangents into one
    // distance cotangent per unordered pair.
    let mut g_d = vec![vec![0.0; b]; b];
    for i in 0..b {
        for j in (i + 1)..b {
            g_d[i][j] = -(g_s[i][j] + g_s[j][i]);
        }
    }
    let mut grad = vec![vec![0.0; batch.embeddings[0].dim()]; b];
    chain_distance_grads(batch, &g_d, &mut grad);

    Ok(LossOutput {
        loss,
        grad_embeddings: grad,
        tau_or_alpha: tau.to_vec(),
        uncertainty: u.clamped,
    })
}

pub fn triplet_loss(batch: &LabeledBatch, mode: MarginMode, mining: Mining) -> Result<LossOutput> {
    let alpha = match mode {
        MarginMode::Fixed { alpha } => {
            if !(alpha.is_finite() && alpha > 0.0) {
                return Err(Error::InvalidConfig(format!(
                    "fixed margin must be positive, got {alpha}"
                )));
            }
            vec![alpha; batch.len()]
        }
        MarginMode::Adaptive => adaptive_margin(&batch.embeddings)?.alpha,
    };
    triplet_with_margins(batch, &alpha, mining)
}

/// Triplet loss for explicit per-anchor margins, the form the optimizer
/// differentiates each step.
pub fn triplet_with_margins(
    batch: &LabeledBatch,
    alpha: &[f64],
    mining: Mining,
) -> Result<LossOutput> {
    let b = batch.len();
    if alpha.len() != b || alpha.iter().any(|a| !(a.is_finite() && *a > 0.0)) {
        return Err(Error::InvalidConfig(
            "need one positive finite margin per anchor".into(),
        ));
    }
    let u = batch_uncertainty(&batch.embeddings)?;

    let d = pairwise_distances(batch);
    let positives = positives_of(&batch.labels);
    let negatives: Vec<Vec<usize>> = (0..b)
        .map(|i| {
            (0..b)
                .filter(|&j| batch.labels[j] != batch.labels[i])
                .collect()
        })
        .collect();

    let mut loss = 0.0;
    let mut g_d = vec![vec![0.0; b]; b]; // unordered, [min][max]
    let add_gd = |a: usize, x: usize, w: f64, g_d: &mut Vec<Vec<f64>>| {
        let (lo, hi) = if a < x { (a, x) } else { (x, a) };
        g_d[lo][hi] += w;
    };

    match mining {
        Mining::BatchHard => {
            let mut anchors = 0usize;
            let mut active = Vec::new();
            for a in 0..b {
                if positives[a].is_empty() || negatives[a].is_empty() {
                    continue;
                }
                anchors += 1;
                // Strict comparisons keep the lowest index on ties.
                let mut hardest_p = positives[a][0];
                for &p in &positives[a][1..] {
                    if d[a][p] > d[a][hardest_p] {
                        hardest_p = p;
                    }
                }
                let mut hardest_n = negatives[a][0];
                for &n in &negatives[a][1..] {
                    if d[a][n] < d[a][hardest_n] {
                        hardest_n = n;
                    }
                }
                let term = d[a][hardest_p] - d[a][hardest_n] + alpha[a];
                if term > 0.0 {
                    active.push((a, hardest_p, hardest_n));
                    loss += term;
                }
            }
            if anchors == 0 {
                return Err(Error::NoValidTriplets);
            }
            let inv = 1.0 / anchors as f64;
            loss *= inv;
            for (a, p, n) in active {
                add_gd(a, p, inv, &mut g_d);
                add_gd(a, n, -inv, &mut g_d);
            }
        }
        Mining::BatchAll => {
            let total: usize = (0..b)
                .map(|a| positives[a].len() * negatives[a].len())
                .sum();
            if total == 0 {
                return Err(Error::NoValidTriplets);
            }
            let inv = 1.0 / total as f64;
            for a in 0..b {
                for &p in &positives[a] {
                    for &n in &negatives[a] {
                        let term = d[a][p] - d[a][n] + alpha[a];
                        if term > 0.0 {
                            loss += term * inv;
                            add_gd(a, p, inv, &mut g_d);
                            add_gd(a, n, -inv, &mut g_d);
                        }
                    }
                }
            }
        }
    }

    let mut grad = vec![vec![0.0; batch.embeddings[0].dim()]; b];
    chain_distance_grads(batch, &g_d, &mut grad);

    Ok(LossOutput {
        loss,
        grad_embeddings: grad,
        tau_or_alpha: alpha.to_vec(),
        uncertainty: u.clamped,
    })
}

/// One full forward/backward pass: features through the head into the
/// selected loss, then back through the exponential map, the norm clip, and
/// the linear layer.
#[derive(Debug, Clone)]
pub struct StepOutput {
    pub output: LossOutput,
    pub grad_w: Vec<f64>,
    pub grad_b: Vec<f64>,
}

pub fn loss_step(
    features: &[FeatureRecord],
    head: &HeadParams,
    kind: LossKind,
) -> Result<StepOutput> {
    let rows: Vec<Vec<f64>> = features.iter().map(|r| r.widened()).collect();
    let labels: Vec<u32> = features.iter().map(|r| r.label).collect();
    let embeddings = head_forward(&rows, head)?;
    let batch = LabeledBatch::new(embeddings, labels)?;
    let output = match kind {
        LossKind::Contrastive { mode } => contrastive_loss(&batch, mode)?,
        LossKind::Triplet { mode, mining } => triplet_loss(&batch, mode, mining)?,
    };
    let (grad_w, grad_b) = head_backward(&rows, head, &output.grad_embeddings)?;
    Ok(StepOutput {
        output,
        grad_w,
        grad_b,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ball::{exp_map_0, hyp_distance, BallPoint as GenBallPoint, Curvature as GenCurvature};
    use crate::diff::{finite_diff, max_rel_err, FD_STEP, GRAD_TOL};
    use crate::head::init_head;
    use crate::EuclideanVec;
    use approx::assert_relative_eq;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn c64(c: f64) -> GenCurvature<f64> {
        GenCurvature::new(c).unwrap()
    }

    fn from_tangent(coords: &[f64], c: f64) -> BallPoint {
        exp_map_0(&EuclideanVec::new(coords.to_vec()).unwrap(), c64(c))
    }

    /// Batch with well-separated uncertainties and distances: safe for finite
    /// differences (no clamp, max, mining, or hinge kink nearby).
    fn fd_safe_batch(seed: u64, c: f64) -> LabeledBatch {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let norms = [0.05, 0.12, 0.2, 0.28, 0.35, 0.44];
        let embeddings: Vec<BallPoint> = norms
            .iter()
            .map(|&n| {
                let dir: Vec<f64> = (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let len = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
                from_tangent(
                    &dir.iter().map(|v| v / len * n).collect::<Vec<_>>(),
                    c,
                )
            })
            .collect();
        LabeledBatch::new(embeddings, vec![0, 0, 1, 1, 2, 2]).unwrap()
    }

    fn loss_of_coords(
        coords: &[Vec<f64>],
        labels: &[u32],
        c: f64,
        kind: LossKind,
    ) -> f64 {
        let embeddings: Vec<BallPoint> = coords
            .iter()
            .map(|v| GenBallPoint::new(v.clone(), c64(c)).unwrap())
            .collect();
        let batch = LabeledBatch::new(embeddings, labels.to_vec()).unwrap();
        match kind {
            LossKind::Contrastive { mode } => contrastive_loss(&batch, mode).unwrap().loss,
            LossKind::Triplet { mode, mining } => {
                triplet_loss(&batch, mode, mining).unwrap().loss
            }
        }
    }

    /// FD referee for the per-step loss: the adaptive tau / margin values are
    /// frozen at the base point, exactly as the optimizer treats them.
    fn check_loss_gradient(batch: &LabeledBatch, kind: LossKind) {
        let c = batch.embeddings()[0].curvature().get();
        let (out, mining) = match kind {
            LossKind::Contrastive { mode } => (contrastive_loss(batch, mode).unwrap(), None),
            LossKind::Triplet { mode, mining } => {
                (triplet_loss(batch, mode, mining).unwrap(), Some(mining))
            }
        };
        let frozen = out.tau_or_alpha.clone();
        let coords: Vec<Vec<f64>> = batch
            .embeddings()
            .iter()
            .map(|e| e.coords().to_vec())
            .collect();
        let frozen_loss = |local: &[Vec<f64>]| -> f64 {
            let embeddings: Vec<BallPoint> = local
                .iter()
                .map(|v| GenBallPoint::new(v.clone(), c64(c)).unwrap())
                .collect();
            let b = LabeledBatch::new(embeddings, batch.labels().to_vec()).unwrap();
            match mining {
                None => contrastive_with_taus(&b, &frozen).unwrap().loss,
                Some(m) => triplet_with_margins(&b, &frozen, m).unwrap().loss,
            }
        };
        for i in 0..batch.len() {
            let numeric = finite_diff(
                |pt| {
                    let mut local = coords.clone();
                    local[i] = pt.to_vec();
                    frozen_loss(&local)
                },
                &coords[i],
                FD_STEP,
            )
            .unwrap();
            let err = max_rel_err(&out.grad_embeddings[i], &numeric);
            assert!(err <= GRAD_TOL, "embedding {i}: rel err {err}");
        }
    }

    #[test]
    fn saturated_softmax_gives_near_zero_loss() {
        // Identical positives, far negatives: the softmax saturates toward
        // the positive and the loss vanishes.
        let a = from_tangent(&[0.0, 0.0], 1.0);
        let far = from_tangent(&[3.0, 0.0], 1.0);
        let batch = LabeledBatch::new(
            vec![a.clone(), a, far.clone(), far],
            vec![0, 0, 1, 1],
        )
        .unwrap();
        let out = contrastive_loss(&batch, TauMode::Fixed { tau: 0.2 }).unwrap();
        assert!(out.loss < 1e-9, "loss {}", out.loss);
    }

    #[test]
    fn two_identical_positives_alone_have_exactly_zero_loss() {
        // B = 2, one positive pair at identical points: the softmax
        // denominator holds only the positive term, so the loss is 0.
        let x = from_tangent(&[0.2, 0.1], 0.1);
        let batch = LabeledBatch::new(vec![x.clone(), x], vec![4, 4]).unwrap();
        let out = contrastive_loss(&batch, TauMode::Fixed { tau: 0.2 }).unwrap();
        assert_eq!(out.loss, 0.0);
    }

    #[test]
    fn fixed_tau_equals_adaptive_under_uniform_uncertainty() {
        // Equal radii make every tau = ln(2)/scale; with scale = ln(2)/0.2
        // the adaptive loss must match the fixed tau = 0.2 baseline.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let embeddings: Vec<BallPoint> = (0..6)
            .map(|_| {
                let dir: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let len = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
                from_tangent(
                    &dir.iter().map(|v| v / len * 0.2).collect::<Vec<_>>(),
                    0.1,
                )
            })
            .collect();
        let batch = LabeledBatch::new(embeddings, vec![0, 0, 1, 1, 2, 2]).unwrap();
        let fixed = contrastive_loss(&batch, TauMode::Fixed { tau: 0.2 }).unwrap();
        let scale = 2f64.ln() / 0.2;
        let adaptive = contrastive_loss(&batch, TauMode::Adaptive { scale }).unwrap();
        assert!((fixed.loss - adaptive.loss).abs() <= 1e-10);
    }

    #[test]
    fn contrastive_gradients_match_finite_differences() {
        for (seed, c) in [(1u64, 0.05), (2, 0.1), (3, 0.3)] {
            let batch = fd_safe_batch(seed, c);
            check_loss_gradient(
                &batch,
                LossKind::Contrastive {
                    mode: TauMode::Adaptive { scale: 0.02 },
                },
            );
            check_loss_gradient(
                &batch,
                LossKind::Contrastive {
                    mode: TauMode::Fixed { tau: 0.2 },
                },
            );
        }
    }

    #[test]
    fn triplet_gradients_match_finite_differences() {
        for (seed, c) in [(4u64, 0.05), (5, 0.1), (6, 0.3)] {
            let batch = fd_safe_batch(seed, c);
            for mining in [Mining::BatchHard, Mining::BatchAll] {
                check_loss_gradient(
                    &batch,
                    LossKind::Triplet {
                        mode: MarginMode::Adaptive,
                        mining,
                    },
                );
                check_loss_gradient(
                    &batch,
                    LossKind::Triplet {
                        mode: MarginMode::Fixed { alpha: 0.3 },
                        mining,
                    },
                );
            }
        }
    }

    #[test]
    fn missing_positive_partner_is_an_error() {
        let batch = LabeledBatch::new(
            vec![
                from_tangent(&[0.1, 0.0], 0.1),
                from_tangent(&[0.0, 0.1], 0.1),
                from_tangent(&[0.2, 0.0], 0.1),
            ],
            vec![0, 0, 1],
        )
        .unwrap();
        let err = contrastive_loss(&batch, TauMode::Fixed { tau: 0.2 }).unwrap_err();
        assert!(
            matches!(err, Error::NoPositivePairs { index: 2, label: 1 }),
            "{err}"
        );
    }

    #[test]
    fn identical_embeddings_give_uniform_softmax_loss() {
        // All pairwise similarities equal: each positive term is ln(B-1).
        let x = from_tangent(&[0.1, 0.05, -0.02], 0.1);
        let batch =
            LabeledBatch::new(vec![x; 6], vec![0, 0, 1, 1, 2, 2]).unwrap();
        for mode in [
            TauMode::Fixed { tau: 0.2 },
            TauMode::Adaptive { scale: 0.02 },
        ] {
            let out = contrastive_loss(&batch, mode).unwrap();
            assert_relative_eq!(out.loss, 5f64.ln(), max_relative = 1e-12);
        }
    }

    #[test]
    fn separated_clusters_have_zero_triplet_loss_and_gradient() {
        let batch = LabeledBatch::new(
            vec![
                from_tangent(&[0.01, 0.0], 1.0),
                from_tangent(&[0.0, 0.01], 1.0),
                from_tangent(&[3.0, 0.0], 1.0),
                from_tangent(&[3.0, 0.05], 1.0),
            ],
            vec![0, 0, 1, 1],
        )
        .unwrap();
        for mining in [Mining::BatchHard, Mining::BatchAll] {
            let out = triplet_loss(&batch, MarginMode::Fixed { alpha: 0.3 }, mining).unwrap();
            assert_eq!(out.loss, 0.0);
            assert!(out
                .grad_embeddings
                .iter()
                .flatten()
                .all(|&g| g == 0.0));
        }
    }

    #[test]
    fn hinge_arithmetic_matches_hand_computation() {
        // Collinear points at c = 1: anchor at the origin, positive at
        // distance 0.5, negatives at 0.6 and 1.0.
        let a = from_tangent(&[0.0, 0.0], 1.0);
        let p = from_tangent(&[0.25, 0.0], 1.0);
        let n1 = from_tangent(&[0.3, 0.0], 1.0);
        let n2 = from_tangent(&[0.5, 0.0], 1.0);
        let batch = LabeledBatch::new(
            vec![a.clone(), p.clone(), n1.clone(), n2.clone()],
            vec![0, 0, 1, 1],
        )
        .unwrap();
        let alpha = 0.3;
        let out =
            triplet_loss(&batch, MarginMode::Fixed { alpha }, Mining::BatchHard).unwrap();

        // Anchor 0's term is d(a,p) - d(a,n1) + alpha = 0.5 - 0.6 + 0.3.
        let points = [a, p, n1, n2];
        let labels = [0u32, 0, 1, 1];
        let mut expected_terms = Vec::new();
        for anchor in 0..4 {
            let dist = |j: usize| hyp_distance(&points[anchor], &points[j]).unwrap();
            let hardest_p = (0..4)
                .filter(|&j| j != anchor && labels[j] == labels[anchor])
                .fold((f64::NEG_INFINITY, 0), |acc, j| {
                    if dist(j) > acc.0 {
                        (dist(j), j)
                    } else {
                        acc
                    }
                });
            let hardest_n = (0..4)
                .filter(|&j| labels[j] != labels[anchor])
                .fold((f64::INFINITY, 0), |acc, j| {
                    if dist(j) < acc.0 {
                        (dist(j), j)
                    } else {
                        acc
                    }
                });
            expected_terms.push((hardest_p.0 - hardest_n.0 + alpha).max(0.0));
        }
        assert_relative_eq!(expected_terms[0], 0.2, max_relative = 1e-9);
        let expected = expected_terms.iter().sum::<f64>() / 4.0;
        assert_relative_eq!(out.loss, expected, max_relative = 1e-12);
    }

    #[test]
    fn adaptive_margin_sweep_stays_in_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let c = 0.1f64;
        let cap = 2f64.ln() * c.exp();
        for _ in 0..100 {
            let embeddings: Vec<BallPoint> = (0..6)
                .map(|_| {
                    let v: Vec<f64> = (0..4).map(|_| rng.gen_range(-0.4..0.4)).collect();
                    from_tangent(&v, c)
                })
                .collect();
            let batch = LabeledBatch::new(embeddings, vec![0, 0, 1, 1, 2, 2]).unwrap();
            let out = triplet_loss(&batch, MarginMode::Adaptive, Mining::BatchHard).unwrap();
            assert!(out.loss.is_finite() && out.loss >= 0.0);
            for &a in &out.tau_or_alpha {
                assert!(a > 0.0 && a <= cap * (1.0 + 1e-12), "alpha {a} outside (0, {cap}]");
            }
        }
    }

    #[test]
    fn single_class_batch_has_no_triplets() {
        let batch = LabeledBatch::new(
            vec![from_tangent(&[0.1, 0.0], 0.1); 4],
            vec![3, 3, 3, 3],
        )
        .unwrap();
        assert!(matches!(
            triplet_loss(&batch, MarginMode::Fixed { alpha: 0.3 }, Mining::BatchHard),
            Err(Error::NoValidTriplets)
        ));
    }

    #[test]
    fn losses_are_permutation_invariant() {
        let batch = fd_safe_batch(11, 0.1);
        let perm: Vec<usize> = vec![4, 2, 0, 5, 1, 3];
        let permuted = LabeledBatch::new(
            perm.iter().map(|&i| batch.embeddings()[i].clone()).collect(),
            perm.iter().map(|&i| batch.labels()[i]).collect(),
        )
        .unwrap();
        let kinds = [
            LossKind::Contrastive {
                mode: TauMode::Adaptive { scale: 0.02 },
            },
            LossKind::Triplet {
                mode: MarginMode::Adaptive,
                mining: Mining::BatchHard,
            },
            LossKind::Triplet {
                mode: MarginMode::Fixed { alpha: 0.3 },
                mining: Mining::BatchAll,
            },
        ];
        for kind in kinds {
            let coords_a: Vec<Vec<f64>> = batch
                .embeddings()
                .iter()
                .map(|e| e.coords().to_vec())
                .collect();
            let coords_b: Vec<Vec<f64>> = permuted
                .embeddings()
                .iter()
                .map(|e| e.coords().to_vec())
                .collect();
            let la = loss_of_coords(&coords_a, batch.labels(), 0.1, kind);
            let lb = loss_of_coords(&coords_b, permuted.labels(), 0.1, kind);
            assert!((la - lb).abs() <= 1e-10, "{kind:?}: {la} vs {lb}");
        }
    }

    #[test]
    fn zero_head_gives_uniform_contrastive_loss() {
        let records: Vec<FeatureRecord> = (0..6)
            .map(|i| FeatureRecord {
                feature: vec![i as f32, 1.0, -0.5, 2.0],
                label: (i / 2) as u32,
                id: i as u64,
            })
            .collect();
        let head = HeadParams {
            w: vec![0.0; 4 * 8],
            b: vec![0.0; 8],
            d_in: 4,
            d_out: 8,
            curvature: c64(0.1),
        };
        let step = loss_step(
            &records,
            &head,
            LossKind::Contrastive {
                mode: TauMode::Adaptive { scale: 0.02 },
            },
        )
        .unwrap();
        assert_relative_eq!(step.output.loss, 5f64.ln(), max_relative = 1e-12);
    }

    #[test]
    fn feature_scale_is_not_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let records: Vec<FeatureRecord> = (0..6)
            .map(|i| FeatureRecord {
                feature: (0..4).map(|_| rng.gen_range(-0.5..0.5)).collect(),
                label: (i / 2) as u32,
                id: i as u64,
            })
            .collect();
        let doubled: Vec<FeatureRecord> = records
            .iter()
            .map(|r| FeatureRecord {
                feature: r.feature.iter().map(|v| v * 2.0).collect(),
                ..r.clone()
            })
            .collect();
        let head = init_head(4, 8, c64(0.1), 17);
        let kind = LossKind::Contrastive {
            mode: TauMode::Fixed { tau: 0.2 },
        };
        let a = loss_step(&records, &head, kind).unwrap().output.loss;
        let b = loss_step(&doubled, &head, kind).unwrap().output.loss;
        assert!((a - b).abs() > 1e-6, "doubling features must change the loss");
    }

    #[test]
    fn loss_step_rejects_wrong_feature_dimension() {
        let head = init_head(4, 8, c64(0.1), 1);
        let records = vec![FeatureRecord {
            feature: vec![1.0, 2.0],
            label: 0,
            id: 0,
        }];
        assert!(matches!(
            loss_step(
                &records,
                &head,
                LossKind::Contrastive {
                    mode: TauMode::Fixed { tau: 0.2 }
                }
            ),
            Err(Error::DimensionMismatch { .. })
        ));
    }
}
