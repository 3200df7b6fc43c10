//! The trainable projection head: a linear layer from the backbone feature
//! dimension to the embedding dimension, a norm clip, and the origin
//! exponential map into the ball. Also owns checkpoint persistence.
//!
//! Checkpoint files ("HYPU") are little-endian and checksummed:
//!
//! ```text
//! magic "HYPU" | version u32 | d_in u32 | d_out u32 | curvature f64
//! step u64 | config fingerprint u32
//! W | b | m_w | m_b | v_w | v_b      (f64 dumps)
//! crc32 over all preceding bytes
//! ```

use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::ball::exp_map_0;
use crate::diff::{clip_norm_raw, clip_norm_vjp, exp_map_0_vjp, linear_vjp};
use crate::error::{Error, Result};
use crate::io::{open_checked, seal};
use crate::{BallPoint, Curvature, EuclideanVec};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"HYPU";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Trainable linear projection `v = W f + b` feeding the ball.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadParams {
    /// Row-major `d_out x d_in`.
    pub w: Vec<f64>,
    pub b: Vec<f64>,
    pub d_in: usize,
    pub d_out: usize,
    pub curvature: Curvature,
}

impl HeadParams {
    pub fn param_count(&self) -> usize {
        self.w.len() + self.b.len()
    }
}

/// Uniform fan-in initialization, `W ~ U(-1/sqrt(d_in), 1/sqrt(d_in))`,
/// `b = 0`. Small initial norms keep early embeddings near the origin where
/// the exponential map is well conditioned.
pub fn init_head(d_in: usize, d_out: usize, curvature: Curvature, seed: u64) -> HeadParams {
    assert!(d_in > 0 && d_out > 0, "head dimensions must be positive");
    let bound = 1.0 / (d_in as f64).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = (0..d_in * d_out)
        .map(|_| rng.gen_range(-bound..bound))
        .collect();
    HeadParams {
        w,
        b: vec![0.0; d_out],
        d_in,
        d_out,
        curvature,
    }
}

fn linear_rows(features: &[Vec<f64>], params: &HeadParams) -> Result<Vec<Vec<f64>>> {
    let mut out = Vec::with_capacity(features.len());
    for f in features {
        if f.len() != params.d_in {
            return Err(Error::DimensionMismatch {
                expected: params.d_in,
                got: f.len(),
            });
        }
        let mut v = params.b.clone();
        for (i, vi) in v.iter_mut().enumerate() {
            let row = &params.w[i * params.d_in..(i + 1) * params.d_in];
            let mut acc = 0.0;
            for (wj, fj) in row.iter().zip(f) {
                acc += wj * fj;
            }
            *vi += acc;
        }
        if let Some(index) = v.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFiniteInput { index });
        }
        out.push(v);
    }
    Ok(out)
}

/// `exp_0(clip(W f + b))` per row; every output satisfies the ball invariant.
pub fn head_forward(features: &[Vec<f64>], params: &HeadParams) -> Result<Vec<BallPoint>> {
    let max_norm = params.curvature.max_norm();
    linear_rows(features, params)?
        .into_iter()
        .map(|v| {
            let clipped = clip_norm_raw(&v, max_norm);
            Ok(exp_map_0(
                &EuclideanVec::new(clipped)?,
                params.curvature,
            ))
        })
        .collect()
}

/// Chain-rule gradients of the head for given per-embedding cotangents.
/// Returns `(grad_w, grad_b)` shaped like `params.w` / `params.b`.
pub fn head_backward(
    features: &[Vec<f64>],
    params: &HeadParams,
    grad_embeddings: &[Vec<f64>],
) -> Result<(Vec<f64>, Vec<f64>)> {
    if grad_embeddings.len() != features.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} upstream gradients for {} samples",
            grad_embeddings.len(),
            features.len()
        )));
    }
    let c = params.curvature.get();
    let max_norm = params.curvature.max_norm();
    let pre = linear_rows(features, params)?;
    let mut grad_w = vec![0.0; params.w.len()];
    let mut grad_b = vec![0.0; params.d_out];
    for ((f, v), g) in features.iter().zip(&pre).zip(grad_embeddings) {
        if g.len() != params.d_out {
            return Err(Error::ShapeMismatch(format!(
                "upstream gradient has dim {}, head outputs {}",
                g.len(),
                params.d_out
            )));
        }
        let clipped = clip_norm_raw(v, max_norm);
        let g_clip = exp_map_0_vjp(c, &clipped, g);
        let g_v = clip_norm_vjp(v, max_norm, &g_clip);
        let (gw, _) = linear_vjp(&params.w, f, params.d_out, params.d_in, &g_v);
        for (acc, val) in grad_w.iter_mut().zip(&gw) {
            *acc += val;
        }
        for (acc, val) in grad_b.iter_mut().zip(&g_v) {
            *acc += val;
        }
    }
    Ok((grad_w, grad_b))
}

/// Adam moment tensors shaped like [`HeadParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct Moments {
    pub m_w: Vec<f64>,
    pub v_w: Vec<f64>,
    pub m_b: Vec<f64>,
    pub v_b: Vec<f64>,
}

impl Moments {
    pub fn zeros_like(params: &HeadParams) -> Self {
        Moments {
            m_w: vec![0.0; params.w.len()],
            v_w: vec![0.0; params.w.len()],
            m_b: vec![0.0; params.b.len()],
            v_b: vec![0.0; params.b.len()],
        }
    }
}

/// Head parameters plus optimizer state; round-trips bit-exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: HeadParams,
    pub moments: Moments,
    pub step: u64,
    pub config_fingerprint: u32,
}

pub fn checkpoint_bytes(ckpt: &Checkpoint) -> Vec<u8> {
    let p = &ckpt.params;
    let mut buf = Vec::new();
    buf.extend_from_slice(&CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(p.d_in as u32).to_le_bytes());
    buf.extend_from_slice(&(p.d_out as u32).to_le_bytes());
    buf.extend_from_slice(&p.curvature.get().to_le_bytes());
    buf.extend_from_slice(&ckpt.step.to_le_bytes());
    buf.extend_from_slice(&ckpt.config_fingerprint.to_le_bytes());
    for chunk in [
        &p.w,
        &p.b,
        &ckpt.moments.m_w,
        &ckpt.moments.m_b,
        &ckpt.moments.v_w,
        &ckpt.moments.v_b,
    ] {
        for v in chunk {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    seal(buf)
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    std::fs::write(path, checkpoint_bytes(ckpt))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let buf = std::fs::read(path)?;
    let mut r = open_checked(&buf, &CHECKPOINT_MAGIC)?;
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::VersionMismatch {
            found: version,
            current: CHECKPOINT_VERSION,
        });
    }
    let d_in = r.u32()? as usize;
    let d_out = r.u32()? as usize;
    let curvature = Curvature::new(r.f64()?)?;
    let step = r.u64()?;
    let config_fingerprint = r.u32()?;
    let mut read_block = |len: usize| -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(len);
        for _ in 0..len {
            out.push(r.f64()?);
        }
        Ok(out)
    };
    let w = read_block(d_in * d_out)?;
    let b = read_block(d_out)?;
    let m_w = read_block(d_in * d_out)?;
    let m_b = read_block(d_out)?;
    let v_w = read_block(d_in * d_out)?;
    let v_b = read_block(d_out)?;
    Ok(Checkpoint {
        params: HeadParams {
            w,
            b,
            d_in,
            d_out,
            curvature,
        },
        moments: Moments { m_w, v_w, m_b, v_b },
        step,
        config_fingerprint,
    })
}
