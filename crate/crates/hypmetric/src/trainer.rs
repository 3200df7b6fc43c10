//! Deterministic training loop: class-balanced P x K batch sampling, Adam
//! with decoupled weight decay, and per-interval metrics logging.
//!
//! Reproducibility contract: a fixed seed produces the identical batch
//! sequence, loss trajectory, and final parameters on the same build. The
//! sampler uses a named counter-based generator (ChaCha8) rather than a
//! platform default, and all reductions run in a fixed order.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::head::{init_head, Checkpoint, HeadParams, Moments};
use crate::io::FeatureRecord;
use crate::losses::{loss_step, LossKind, MarginMode, Mining, TauMode};
use crate::Curvature;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossSelect {
    Contrastive,
    Triplet,
}

/// Adaptive uses the uncertainty-derived value; fixed carries tau_0 or
/// alpha_0 depending on the selected loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ModeSelect {
    Adaptive,
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub loss: LossSelect,
    pub mode: ModeSelect,
    pub mining: Mining,
    pub curvature: f64,
    pub scale: f64,
    pub lr: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub samples_per_class: usize,
    pub dim_out: usize,
    pub seed: u64,
    pub log_interval: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            loss: LossSelect::Contrastive,
            mode: ModeSelect::Adaptive,
            mining: Mining::BatchHard,
            curvature: 0.1,
            scale: 0.02,
            lr: 3e-5,
            weight_decay: 0.01,
            epochs: 50,
            batch_size: 30,
            samples_per_class: 3,
            dim_out: 128,
            seed: 42,
            log_interval: 10,
        }
    }
}

impl TrainConfig {
    pub fn loss_kind(&self) -> LossKind {
        match self.loss {
            LossSelect::Contrastive => LossKind::Contrastive {
                mode: match self.mode {
                    ModeSelect::Adaptive => TauMode::Adaptive { scale: self.scale },
                    ModeSelect::Fixed(tau) => TauMode::Fixed { tau },
                },
            },
            LossSelect::Triplet => LossKind::Triplet {
                mode: match self.mode {
                    ModeSelect::Adaptive => MarginMode::Adaptive,
                    ModeSelect::Fixed(alpha) => MarginMode::Fixed { alpha },
                },
                mining: self.mining,
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("curvature", self.curvature),
            ("scale", self.scale),
            ("lr", self.lr),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidConfig(format!(
                    "{name} must be positive, got {v}"
                )));
            }
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "weight decay must be nonnegative, got {}",
                self.weight_decay
            )));
        }
        if let ModeSelect::Fixed(v) = self.mode {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidConfig(format!(
                    "fixed tau/margin must be positive, got {v}"
                )));
            }
        }
        if self.samples_per_class < 2 {
            return Err(Error::InvalidConfig(
                "samples-per-class must be at least 2 so every sample has a positive".into(),
            ));
        }
        if self.batch_size == 0 || !self.batch_size.is_multiple_of(self.samples_per_class) {
            return Err(Error::InvalidConfig(format!(
                "batch size {} must be a positive multiple of samples-per-class {}",
                self.batch_size, self.samples_per_class
            )));
        }
        if self.dim_out == 0 {
            return Err(Error::InvalidConfig("output dimension must be positive".into()));
        }
        if self.log_interval == 0 {
            return Err(Error::InvalidConfig("log interval must be positive".into()));
        }
        Ok(())
    }

    /// Stable fingerprint of the configuration, stored in checkpoints.
    pub fn fingerprint(&self) -> u32 {
        crc32fast::hash(self.canonical_string().as_bytes())
    }

    fn canonical_string(&self) -> String {
        let loss = match self.loss {
            LossSelect::Contrastive => "contrastive",
            LossSelect::Triplet => "triplet",
        };
        let mode = match self.mode {
            ModeSelect::Adaptive => "adaptive".to_string(),
            ModeSelect::Fixed(v) => format!("fixed:{v}"),
        };
        let mining = match self.mining {
            Mining::BatchHard => "batch-hard",
            Mining::BatchAll => "batch-all",
        };
        format!(
            "loss={loss};mode={mode};mining={mining};c={};scale={};lr={};wd={};epochs={};b={};k={};dim={};seed={};log={}",
            self.curvature,
            self.scale,
            self.lr,
            self.weight_decay,
            self.epochs,
            self.batch_size,
            self.samples_per_class,
            self.dim_out,
            self.seed,
            self.log_interval,
        )
    }
}

/// Adam moments plus the step counter (beta1 = 0.9, beta2 = 0.999,
/// eps = 1e-8).
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub moments: Moments,
    pub step: u64,
}

impl AdamState {
    pub fn new(params: &HeadParams) -> Self {
        AdamState {
            moments: Moments::zeros_like(params),
            step: 0,
        }
    }
}

fn adam_update(
    params: &mut [f64],
    grads: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    lr: f64,
    weight_decay: f64,
    bias1: f64,
    bias2: f64,
) {
    for i in 0..params.len() {
        // Decoupled decay first, then the bias-corrected Adam delta.
        params[i] -= lr * weight_decay * params[i];
        m[i] = BETA1 * m[i] + (1.0 - BETA1) * grads[i];
        v[i] = BETA2 * v[i] + (1.0 - BETA2) * grads[i] * grads[i];
        let m_hat = m[i] / bias1;
        let v_hat = v[i] / bias2;
        params[i] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
    }
}

/// One Adam step with decoupled weight decay applied before the delta.
pub fn adam_step(
    params: &mut HeadParams,
    grad_w: &[f64],
    grad_b: &[f64],
    state: &mut AdamState,
    lr: f64,
    weight_decay: f64,
) -> Result<()> {
    if grad_w.len() != params.w.len() || grad_b.len() != params.b.len() {
        return Err(Error::ShapeMismatch(format!(
            "gradient shapes ({}, {}) do not match parameters ({}, {})",
            grad_w.len(),
            grad_b.len(),
            params.w.len(),
            params.b.len()
        )));
    }
    state.step += 1;
    let bias1 = 1.0 - BETA1.powi(state.step as i32);
    let bias2 = 1.0 - BETA2.powi(state.step as i32);
    adam_update(
        &mut params.w,
        grad_w,
        &mut state.moments.m_w,
        &mut state.moments.v_w,
        lr,
        weight_decay,
        bias1,
        bias2,
    );
    adam_update(
        &mut params.b,
        grad_b,
        &mut state.moments.m_b,
        &mut state.moments.v_b,
        lr,
        weight_decay,
        bias1,
        bias2,
    );
    Ok(())
}

/// P distinct classes chosen uniformly without replacement, K samples per
/// class without replacement; deterministic per generator state. Classes are
/// enumerated in sorted label order before drawing.
pub fn sample_batch(
    records: &[FeatureRecord],
    p: usize,
    k: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<FeatureRecord>> {
    let mut by_label: Vec<(u32, Vec<usize>)> = Vec::new();
    for (idx, r) in records.iter().enumerate() {
        match by_label.binary_search_by_key(&r.label, |e| e.0) {
            Ok(pos) => by_label[pos].1.push(idx),
            Err(pos) => by_label.insert(pos, (r.label, vec![idx])),
        }
    }
    if by_label.len() < p {
        return Err(Error::InsufficientClasses {
            needed: p,
            available: by_label.len(),
        });
    }
    // Partial Fisher-Yates over the sorted class list.
    let mut class_order: Vec<usize> = (0..by_label.len()).collect();
    for i in 0..p {
        let j = rng.gen_range(i..class_order.len());
        class_order.swap(i, j);
    }
    let mut batch = Vec::with_capacity(p * k);
    for &ci in &class_order[..p] {
        let (label, members) = &by_label[ci];
        if members.len() < k {
            return Err(Error::InsufficientSamples {
                label: *label,
                needed: k,
                available: members.len(),
            });
        }
        let mut order: Vec<usize> = (0..members.len()).collect();
        for i in 0..k {
            let j = rng.gen_range(i..order.len());
            order.swap(i, j);
        }
        for &oi in &order[..k] {
            batch.push(records[members[oi]].clone());
        }
    }
    Ok(batch)
}

/// One metrics log record.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub step: u64,
    pub epoch: usize,
    pub loss: f64,
    pub mean_tau_or_alpha: f64,
    pub mean_uncertainty: f64,
}

pub fn render_metrics(rows: &[MetricsRow]) -> String {
    let mut out = String::from("step,epoch,loss,mean_tau_or_alpha,mean_uncertainty\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.step, r.epoch, r.loss, r.mean_tau_or_alpha, r.mean_uncertainty
        ));
    }
    out
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub checkpoint: Checkpoint,
    pub metrics: Vec<MetricsRow>,
}

fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.iter().sum::<f64>() / values.len() as f64
}

/// Runs `epochs x floor(N / batch_size)` steps over freshly sampled class-
/// balanced batches and returns the final checkpoint plus the metrics log.
/// Aborts with diagnostics if the loss leaves the finite range.
pub fn train(records: &[FeatureRecord], config: &TrainConfig) -> Result<TrainOutput> {
    config.validate()?;
    if records.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let d_in = records[0].feature.len();
    for r in records {
        if r.feature.len() != d_in {
            return Err(Error::DimensionMismatch {
                expected: d_in,
                got: r.feature.len(),
            });
        }
    }
    let steps_per_epoch = records.len() / config.batch_size;
    if config.epochs > 0 && steps_per_epoch == 0 {
        return Err(Error::InvalidConfig(format!(
            "batch size {} exceeds the dataset ({} records)",
            config.batch_size,
            records.len()
        )));
    }

    let curvature = Curvature::new(config.curvature)?;
    let mut head = init_head(d_in, config.dim_out, curvature, config.seed);
    let mut adam = AdamState::new(&head);
    // Separate stream from the init draws.
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(0x9e37_79b9_7f4a_7c15));
    let kind = config.loss_kind();
    let p = config.batch_size / config.samples_per_class;

    let mut metrics = Vec::new();
    let mut global_step: u64 = 0;
    for epoch in 1..=config.epochs {
        for _ in 0..steps_per_epoch {
            let batch = sample_batch(records, p, config.samples_per_class, &mut rng)?;
            let step = loss_step(&batch, &head, kind)?;
            global_step += 1;
            if !step.output.loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    step: global_step,
                    details: format!(
                        "epoch {epoch}, mean tau/alpha {}, mean uncertainty {}",
                        mean(&step.output.tau_or_alpha),
                        mean(&step.output.uncertainty)
                    ),
                });
            }
            adam_step(
                &mut head,
                &step.grad_w,
                &step.grad_b,
                &mut adam,
                config.lr,
                config.weight_decay,
            )?;
            if global_step.is_multiple_of(config.log_interval as u64) {
                metrics.push(MetricsRow {
                    step: global_step,
                    epoch,
                    loss: step.output.loss,
                    mean_tau_or_alpha: mean(&step.output.tau_or_alpha),
                    mean_uncertainty: mean(&step.output.uncertainty),
                });
            }
        }
    }

    Ok(TrainOutput {
        checkpoint: Checkpoint {
            params: head,
            moments: adam.moments,
            step: adam.step,
            config_fingerprint: config.fingerprint(),
        },
        metrics,
    })
}
