//! Registry of differentiable primitives, checked against the
//! central-difference oracle at seeded random configurations.
//!
//! Every primitive's analytic pullback must match finite differences of the
//! scalar probe `<g, f(inputs)>` within [`crate::diff::GRAD_TOL`]. Configs
//! are rejection-sampled away from the kinks (clamp floors, batch-max ties,
//! mining ties, hinge boundaries) so the oracle measures the smooth regions
//! the training loop lives in.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::ball::{exp_map_0, log_map_0, mobius_add};
use crate::diff::{
    dist_to_origin_vjp, exp_map_0_vjp, finite_diff, hyp_distance_raw, hyp_distance_vjp,
    linear_vjp, log_map_0_vjp, max_rel_err, mobius_add_vjp, FD_STEP, GRAD_TOL,
};
use crate::error::{Error, Result};
use crate::head::HeadParams;
use crate::losses::{contrastive_with_taus, triplet_with_margins, LabeledBatch, Mining};
use crate::uncertainty::uncertainty;
use crate::{BallPoint, Curvature, EuclideanVec};

pub const CURVATURE_GRID: [f64; 3] = [0.05, 0.1, 0.3];
pub const CONFIGS_PER_CURVATURE: usize = 10;

/// Registered primitives plus the composite head chain, in report order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum PrimitiveId {
    ContrastiveLoss,
    ExpMap0,
    HeadChain,
    HypDistance,
    Linear,
    LogMap0,
    MobiusAdd,
    TripletLoss,
    Uncertainty,
}

impl PrimitiveId {
    pub const ALL: [PrimitiveId; 9] = [
        PrimitiveId::ContrastiveLoss,
        PrimitiveId::ExpMap0,
        PrimitiveId::HeadChain,
        PrimitiveId::HypDistance,
        PrimitiveId::Linear,
        PrimitiveId::LogMap0,
        PrimitiveId::MobiusAdd,
        PrimitiveId::TripletLoss,
        PrimitiveId::Uncertainty,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PrimitiveId::ContrastiveLoss => "contrastive_loss",
            PrimitiveId::ExpMap0 => "exp_map_0",
            PrimitiveId::HeadChain => "head_chain",
            PrimitiveId::HypDistance => "hyp_distance",
            PrimitiveId::Linear => "linear",
            PrimitiveId::LogMap0 => "log_map_0",
            PrimitiveId::MobiusAdd => "mobius_add",
            PrimitiveId::TripletLoss => "triplet_loss",
            PrimitiveId::Uncertainty => "uncertainty",
        }
    }
}

pub fn parse_primitive(name: &str) -> Result<PrimitiveId> {
    PrimitiveId::ALL
        .iter()
        .copied()
        .find(|p| p.name() == name)
        .ok_or_else(|| Error::UnknownPrimitive(name.to_string()))
}

/// One concrete invocation of a primitive: differentiated inputs plus the
/// fixed context (curvature, labels, probe, head frame, frozen per-sample
/// temperatures and margins).
#[derive(Debug, Clone)]
pub struct PrimitiveCall {
    pub c: f64,
    /// Differentiated input slots (coordinate vectors, or W/b for the chain).
    pub inputs: Vec<Vec<f64>>,
    /// Cotangent used for vector-valued outputs; `[1.0]` for scalar outputs.
    pub probe: Vec<f64>,
    pub labels: Vec<u32>,
    /// Head chain only: fixed feature rows.
    pub features: Vec<Vec<f64>>,
    /// (d_out, d_in) for `linear` and `head_chain`.
    pub dims: (usize, usize),
    /// Per-sample contrastive temperatures, frozen at the base point.
    pub taus: Vec<f64>,
    /// Per-anchor triplet margins, frozen at the base point.
    pub alphas: Vec<f64>,
}

fn ball_point(coords: &[f64], c: f64) -> BallPoint {
    BallPoint::new(coords.to_vec(), Curvature::new(c).unwrap()).unwrap()
}

fn batch_of(call: &PrimitiveCall) -> LabeledBatch {
    let embeddings = call
        .inputs
        .iter()
        .map(|v| ball_point(v, call.c))
        .collect();
    LabeledBatch::new(embeddings, call.labels.clone()).unwrap()
}

fn chain_batch(call: &PrimitiveCall, head: &HeadParams) -> LabeledBatch {
    let embeddings = crate::head::head_forward(&call.features, head).unwrap();
    LabeledBatch::new(embeddings, call.labels.clone()).unwrap()
}

fn head_of(call: &PrimitiveCall) -> HeadParams {
    HeadParams {
        w: call.inputs[0].clone(),
        b: call.inputs[1].clone(),
        d_in: call.dims.1,
        d_out: call.dims.0,
        curvature: Curvature::new(call.c).unwrap(),
    }
}

/// Forward value of a primitive on a call. Losses and the head chain return
/// their scalar as a one-element vector (the chain sums both losses).
pub fn forward(id: PrimitiveId, call: &PrimitiveCall) -> Result<Vec<f64>> {
    Ok(match id {
        PrimitiveId::MobiusAdd => {
            let x = ball_point(&call.inputs[0], call.c);
            let y = ball_point(&call.inputs[1], call.c);
            mobius_add(&x, &y)?.into_coords()
        }
        PrimitiveId::HypDistance => {
            vec![hyp_distance_raw(call.c, &call.inputs[0], &call.inputs[1])]
        }
        PrimitiveId::ExpMap0 => exp_map_0(
            &EuclideanVec::new(call.inputs[0].clone())?,
            Curvature::new(call.c)?,
        )
        .into_coords(),
        PrimitiveId::LogMap0 => log_map_0(&ball_point(&call.inputs[0], call.c)).into_coords(),
        PrimitiveId::Linear => {
            let (rows, cols) = call.dims;
            let w = &call.inputs[0];
            let x = &call.inputs[1];
            (0..rows)
                .map(|i| {
                    w[i * cols..(i + 1) * cols]
                        .iter()
                        .zip(x)
                        .map(|(a, b)| a * b)
                        .sum()
                })
                .collect()
        }
        PrimitiveId::Uncertainty => {
            vec![uncertainty(&ball_point(&call.inputs[0], call.c)).raw]
        }
        PrimitiveId::ContrastiveLoss => {
            let batch = batch_of(call);
            vec![contrastive_with_taus(&batch, &call.taus)?.loss]
        }
        PrimitiveId::TripletLoss => {
            let batch = batch_of(call);
            vec![triplet_with_margins(&batch, &call.alphas, Mining::BatchHard)?.loss]
        }
        PrimitiveId::HeadChain => {
            let head = head_of(call);
            let batch = chain_batch(call, &head);
            let contrastive = contrastive_with_taus(&batch, &call.taus)?.loss;
            let triplet = triplet_with_margins(&batch, &call.alphas, Mining::BatchHard)?.loss;
            vec![contrastive + triplet]
        }
    })
}

/// Analytic input cotangents for a primitive call; linear in `cotangent`.
pub fn vjp(id: PrimitiveId, call: &PrimitiveCall, cotangent: &[f64]) -> Result<Vec<Vec<f64>>> {
    Ok(match id {
        PrimitiveId::MobiusAdd => {
            let (gx, gy) = mobius_add_vjp(call.c, &call.inputs[0], &call.inputs[1], cotangent);
            vec![gx, gy]
        }
        PrimitiveId::HypDistance => {
            let (gx, gy) =
                hyp_distance_vjp(call.c, &call.inputs[0], &call.inputs[1], cotangent[0]);
            vec![gx, gy]
        }
        PrimitiveId::ExpMap0 => vec![exp_map_0_vjp(call.c, &call.inputs[0], cotangent)],
        PrimitiveId::LogMap0 => vec![log_map_0_vjp(call.c, &call.inputs[0], cotangent)],
        PrimitiveId::Linear => {
            let (rows, cols) = call.dims;
            let (gw, gx) = linear_vjp(&call.inputs[0], &call.inputs[1], rows, cols, cotangent);
            vec![gw, gx]
        }
        PrimitiveId::Uncertainty => {
            // raw = 1 - d(x, 0)
            vec![dist_to_origin_vjp(call.c, &call.inputs[0], -cotangent[0])]
        }
        PrimitiveId::ContrastiveLoss => {
            let batch = batch_of(call);
            let out = contrastive_with_taus(&batch, &call.taus)?;
            out.grad_embeddings
                .into_iter()
                .map(|g| g.into_iter().map(|v| v * cotangent[0]).collect())
                .collect()
        }
        PrimitiveId::TripletLoss => {
            let batch = batch_of(call);
            let out = triplet_with_margins(&batch, &call.alphas, Mining::BatchHard)?;
            out.grad_embeddings
                .into_iter()
                .map(|g| g.into_iter().map(|v| v * cotangent[0]).collect())
                .collect()
        }
        PrimitiveId::HeadChain => {
            let head = head_of(call);
            let batch = chain_batch(call, &head);
            let contrastive = contrastive_with_taus(&batch, &call.taus)?;
            let triplet = triplet_with_margins(&batch, &call.alphas, Mining::BatchHard)?;
            let combined: Vec<Vec<f64>> = contrastive
                .grad_embeddings
                .iter()
                .zip(&triplet.grad_embeddings)
                .map(|(a, b)| {
                    a.iter()
                        .zip(b)
                        .map(|(x, y)| (x + y) * cotangent[0])
                        .collect()
                })
                .collect();
            let (gw, gb) = crate::head::head_backward(&call.features, &head, &combined)?;
            vec![gw, gb]
        }
    })
}

/// Central differences of `<probe, forward>` with respect to every input
/// coordinate of the call.
pub fn finite_diff_primitive(
    id: PrimitiveId,
    call: &PrimitiveCall,
    step: f64,
) -> Result<Vec<Vec<f64>>> {
    let mut out = Vec::with_capacity(call.inputs.len());
    for slot in 0..call.inputs.len() {
        let grads = finite_diff(
            |pt| {
                let mut local = call.clone();
                local.inputs[slot] = pt.to_vec();
                let f = forward(id, &local).expect("forward must succeed near the base point");
                call.probe.iter().zip(&f).map(|(p, v)| p * v).sum()
            },
            &call.inputs[slot],
            step,
        )?;
        out.push(grads);
    }
    Ok(out)
}

/// Pass/fail verdict for one primitive across all curvatures and configs.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub primitive: String,
    pub configs: usize,
    /// Max relative error per input slot, maximized over configs.
    pub max_rel_err_per_input: Vec<f64>,
    pub max_rel_err: f64,
    pub threshold: f64,
    pub pass: bool,
}

fn unit_vec(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-3 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

fn scaled_dir(rng: &mut ChaCha8Rng, dim: usize, norm: f64) -> Vec<f64> {
    unit_vec(rng, dim).into_iter().map(|x| x * norm).collect()
}

/// Tangent-norm ladder giving well-separated uncertainties: U = 1 - 2|v|.
fn tangent_ladder(rng: &mut ChaCha8Rng, count: usize) -> Vec<f64> {
    (0..count)
        .map(|i| 0.06 + 0.065 * i as f64 + rng.gen_range(0.0..0.02))
        .collect()
}

/// Rejects loss configs whose gradients are not finite-difference safe:
/// near-coincident points, near-tied mining candidates, or hinge terms close
/// to the kink (for both the adaptive and a fixed 0.3 margin).
fn losses_config_safe(coords: &[Vec<f64>], labels: &[u32], c: f64) -> bool {
    let b = coords.len();
    let mut d = vec![vec![0.0; b]; b];
    for i in 0..b {
        for j in (i + 1)..b {
            let v = hyp_distance_raw(c, &coords[i], &coords[j]);
            if v < 1e-2 {
                return false;
            }
            d[i][j] = v;
            d[j][i] = v;
        }
    }
    let batch = LabeledBatch::new(
        coords.iter().map(|v| ball_point(v, c)).collect(),
        labels.to_vec(),
    )
    .unwrap();
    let adaptive = crate::uncertainty::adaptive_margin(batch.embeddings())
        .unwrap()
        .alpha;
    for a in 0..b {
        let neg: Vec<usize> = (0..b).filter(|&j| labels[j] != labels[a]).collect();
        let pos: Vec<usize> = (0..b)
            .filter(|&j| j != a && labels[j] == labels[a])
            .collect();
        let mut neg_d: Vec<f64> = neg.iter().map(|&j| d[a][j]).collect();
        neg_d.sort_by(|x, y| x.partial_cmp(y).unwrap());
        if neg_d.len() >= 2 && neg_d[1] - neg_d[0] < 1e-3 {
            return false;
        }
        for &p in &pos {
            for &n in &neg {
                for alpha in [adaptive[a], 0.3] {
                    if (d[a][p] - d[a][n] + alpha).abs() < 5e-3 {
                        return false;
                    }
                }
            }
        }
    }
    true
}

fn loss_config(rng: &mut ChaCha8Rng, c: f64, scale: f64) -> PrimitiveCall {
    let labels = vec![0u32, 0, 1, 1, 2, 2];
    loop {
        let norms = tangent_ladder(rng, 6);
        let coords: Vec<Vec<f64>> = norms
            .iter()
            .map(|&n| {
                exp_map_0(
                    &EuclideanVec::new(scaled_dir(rng, 5, n)).unwrap(),
                    Curvature::new(c).unwrap(),
                )
                .into_coords()
            })
            .collect();
        if losses_config_safe(&coords, &labels, c) {
            let batch = LabeledBatch::new(
                coords.iter().map(|v| ball_point(v, c)).collect(),
                labels.clone(),
            )
            .unwrap();
            let taus = crate::uncertainty::adaptive_tau(batch.embeddings(), scale)
                .unwrap()
                .tau;
            let alphas = crate::uncertainty::adaptive_margin(batch.embeddings())
                .unwrap()
                .alpha;
            return PrimitiveCall {
                c,
                inputs: coords,
                probe: vec![1.0],
                labels,
                features: Vec::new(),
                dims: (0, 0),
                taus,
                alphas,
            };
        }
    }
}

fn head_chain_config(rng: &mut ChaCha8Rng, c: f64) -> PrimitiveCall {
    let (d_out, d_in) = (4usize, 5usize);
    let labels = vec![0u32, 0, 1, 1, 2, 2];
    loop {
        let features: Vec<Vec<f64>> = (0..6)
            .map(|_| {
                (0..d_in)
                    .map(|_| (rng.gen_range(-0.25..0.25) as f32) as f64)
                    .collect()
            })
            .collect();
        let bound = 1.0 / (d_in as f64).sqrt();
        let w: Vec<f64> = (0..d_in * d_out)
            .map(|_| rng.gen_range(-bound..bound))
            .collect();
        let b: Vec<f64> = (0..d_out).map(|_| rng.gen_range(-0.05..0.05)).collect();
        let head = HeadParams {
            w: w.clone(),
            b: b.clone(),
            d_in,
            d_out,
            curvature: Curvature::new(c).unwrap(),
        };
        let embedded: Vec<Vec<f64>> = crate::head::head_forward(&features, &head)
            .unwrap()
            .into_iter()
            .map(|e| e.into_coords())
            .collect();
        if losses_config_safe(&embedded, &labels, c) {
            let batch = LabeledBatch::new(
                embedded.iter().map(|v| ball_point(v, c)).collect(),
                labels.clone(),
            )
            .unwrap();
            let taus = crate::uncertainty::adaptive_tau(batch.embeddings(), 0.02)
                .unwrap()
                .tau;
            let alphas = crate::uncertainty::adaptive_margin(batch.embeddings())
                .unwrap()
                .alpha;
            return PrimitiveCall {
                c,
                inputs: vec![w, b],
                probe: vec![1.0],
                labels,
                features,
                dims: (d_out, d_in),
                taus,
                alphas,
            };
        }
    }
}

/// Builds a random FD-safe call for a primitive at the given curvature.
pub fn sample_call(id: PrimitiveId, c: f64, rng: &mut ChaCha8Rng) -> PrimitiveCall {
    let base = PrimitiveCall {
        c,
        inputs: Vec::new(),
        probe: Vec::new(),
        labels: Vec::new(),
        features: Vec::new(),
        dims: (0, 0),
        taus: Vec::new(),
        alphas: Vec::new(),
    };
    match id {
        PrimitiveId::MobiusAdd => {
            let r = 1.0 / c.sqrt();
            let nx = rng.gen_range(0.1..0.6) * r;
            let ny = rng.gen_range(0.1..0.6) * r;
            PrimitiveCall {
                inputs: vec![scaled_dir(rng, 4, nx), scaled_dir(rng, 4, ny)],
                probe: (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                ..base
            }
        }
        PrimitiveId::HypDistance => loop {
            let r = 1.0 / c.sqrt();
            let nx = rng.gen_range(0.05..0.6) * r;
            let ny = rng.gen_range(0.05..0.6) * r;
            let x = scaled_dir(rng, 4, nx);
            let y = scaled_dir(rng, 4, ny);
            if hyp_distance_raw(c, &x, &y) >= 0.05 {
                break PrimitiveCall {
                    inputs: vec![x, y],
                    probe: vec![1.0],
                    ..base
                };
            }
        },
        PrimitiveId::ExpMap0 => {
            let n = rng.gen_range(0.1..1.5) / c.sqrt();
            PrimitiveCall {
                inputs: vec![scaled_dir(rng, 5, n)],
                probe: (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                ..base
            }
        }
        PrimitiveId::LogMap0 => {
            let n = rng.gen_range(0.05..0.8) / c.sqrt();
            PrimitiveCall {
                inputs: vec![scaled_dir(rng, 5, n)],
                probe: (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                ..base
            }
        }
        PrimitiveId::Linear => {
            let (rows, cols) = (4usize, 6usize);
            PrimitiveCall {
                inputs: vec![
                    (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                    (0..cols).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                ],
                probe: (0..rows).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                dims: (rows, cols),
                ..base
            }
        }
        PrimitiveId::Uncertainty => {
            // Place the point at distance-to-origin in (0.1, 0.9) so the raw
            // value sits far from the clamp floor.
            let d0 = rng.gen_range(0.1..0.9);
            let v = scaled_dir(rng, 4, d0 / 2.0);
            PrimitiveCall {
                inputs: vec![exp_map_0(
                    &EuclideanVec::new(v).unwrap(),
                    Curvature::new(c).unwrap(),
                )
                .into_coords()],
                probe: vec![1.0],
                ..base
            }
        }
        PrimitiveId::ContrastiveLoss | PrimitiveId::TripletLoss => loss_config(rng, c, 0.02),
        PrimitiveId::HeadChain => head_chain_config(rng, c),
    }
}

/// Runs the finite-difference referee over every primitive at
/// [`CONFIGS_PER_CURVATURE`] seeded configurations per curvature in
/// [`CURVATURE_GRID`]. Deterministic given the seed; reports are sorted by
/// primitive name.
pub fn gradcheck_all(seed: u64) -> Vec<GradCheckReport> {
    PrimitiveId::ALL
        .iter()
        .enumerate()
        .map(|(idx, &id)| {
            let mut per_input: Vec<f64> = Vec::new();
            let mut configs = 0;
            for (ci, &c) in CURVATURE_GRID.iter().enumerate() {
                let stream = seed
                    .wrapping_add((idx as u64 + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15))
                    .wrapping_add(ci as u64);
                let mut rng = ChaCha8Rng::seed_from_u64(stream);
                for _ in 0..CONFIGS_PER_CURVATURE {
                    let call = sample_call(id, c, &mut rng);
                    let analytic = vjp(id, &call, &call.probe).expect("vjp on valid call");
                    let numeric =
                        finite_diff_primitive(id, &call, FD_STEP).expect("fd on valid call");
                    if per_input.len() < analytic.len() {
                        per_input.resize(analytic.len(), 0.0);
                    }
                    for (slot, (a, n)) in analytic.iter().zip(&numeric).enumerate() {
                        per_input[slot] = per_input[slot].max(max_rel_err(a, n));
                    }
                    configs += 1;
                }
            }
            let max_rel_err = per_input.iter().copied().fold(0.0, f64::max);
            GradCheckReport {
                primitive: id.name().to_string(),
                configs,
                max_rel_err_per_input: per_input,
                max_rel_err,
                threshold: GRAD_TOL,
                pass: max_rel_err <= GRAD_TOL,
            }
        })
        .collect()
}

/// Aligned text rendering, one line per primitive.
pub fn render_reports(reports: &[GradCheckReport]) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "{:<18} {:>8} {:>13} {:>11}   status\n",
        "primitive", "configs", "max rel err", "threshold"
    ));
    for r in reports {
        out.push_str(&format!(
            "{:<18} {:>8} {:>13.3e} {:>11.1e}   {}\n",
            r.primitive,
            r.configs,
            r.max_rel_err,
            r.threshold,
            if r.pass { "pass" } else { "FAIL" }
        ));
    }
    out
}
