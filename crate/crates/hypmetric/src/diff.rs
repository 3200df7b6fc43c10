//! Hand-derived pullbacks (vector-Jacobian products) for every differentiable
//! primitive, plus the central-difference oracle used to referee them.
//!
//! The computation graph is shallow and fixed (linear -> norm clip -> exp map
//! -> loss), so analytic pullbacks are tractable and keep the kernel free of a
//! general tape. All functions here operate on raw `f64` slices; the typed
//! wrappers live in the modules that own each operation.

use crate::error::{Error, Result};

/// Minimum admissible central-difference step.
pub const MIN_FD_STEP: f64 = 1e-10;

/// Step used by the gradient-check suites: the sweet spot between truncation
/// and rounding error in 64-bit arithmetic.
pub const FD_STEP: f64 = 1e-5;

/// Relative-error threshold for analytic-vs-numeric agreement.
pub const GRAD_TOL: f64 = 1e-4;

/// Coordinates where both gradients are below this magnitude are skipped when
/// computing relative errors.
pub const GRAD_SKIP: f64 = 1e-8;

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Central differences `(f(x+h) - f(x-h)) / 2h` per coordinate.
pub fn finite_diff<F>(f: F, point: &[f64], step: f64) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> f64,
{
    if step < MIN_FD_STEP {
        return Err(Error::StepTooSmall(step));
    }
    let mut probe = point.to_vec();
    let mut grads = Vec::with_capacity(point.len());
    for i in 0..point.len() {
        probe[i] = point[i] + step;
        let plus = f(&probe);
        probe[i] = point[i] - step;
        let minus = f(&probe);
        probe[i] = point[i];
        grads.push((plus - minus) / (2.0 * step));
    }
    Ok(grads)
}

/// Max relative error between analytic and numeric gradients, skipping
/// coordinates where both are below [`GRAD_SKIP`].
pub fn max_rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    let mut worst = 0.0f64;
    for (&a, &n) in analytic.iter().zip(numeric) {
        if a.abs() < GRAD_SKIP && n.abs() < GRAD_SKIP {
            continue;
        }
        worst = worst.max((a - n).abs() / a.abs().max(n.abs()));
    }
    worst
}

/// `y = W x` adjoint: returns (`g y^T -> W` contribution, `W^T g -> x` contribution).
///
/// `w` is row-major `rows x cols`.
pub fn linear_vjp(w: &[f64], x: &[f64], rows: usize, cols: usize, cot: &[f64]) -> (Vec<f64>, Vec<f64>) {
    debug_assert_eq!(w.len(), rows * cols);
    debug_assert_eq!(x.len(), cols);
    debug_assert_eq!(cot.len(), rows);
    let mut gw = vec![0.0; rows * cols];
    let mut gx = vec![0.0; cols];
    for i in 0..rows {
        let g = cot[i];
        let row = &w[i * cols..(i + 1) * cols];
        for j in 0..cols {
            gw[i * cols + j] = g * x[j];
            gx[j] += row[j] * g;
        }
    }
    (gw, gx)
}

/// Pullback of Mobius addition `m(x, y) = (A x + B y) / D` with
/// `A = 1 + 2c<x,y> + c|y|^2`, `B = 1 - c|x|^2`,
/// `D = 1 + 2c<x,y> + c^2 |x|^2 |y|^2`.
pub fn mobius_add_vjp(c: f64, x: &[f64], y: &[f64], cot: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let xx = dot(x, x);
    let yy = dot(y, y);
    let xy = dot(x, y);
    let a = 1.0 + 2.0 * c * xy + c * yy;
    let b = 1.0 - c * xx;
    let den = 1.0 + 2.0 * c * xy + c * c * xx * yy;

    let m: Vec<f64> = x
        .iter()
        .zip(y)
        .map(|(&xi, &yi)| (a * xi + b * yi) / den)
        .collect();
    let gx_dot = dot(cot, x);
    let gy_dot = dot(cot, y);
    let gm_dot = dot(cot, &m);

    let gx: Vec<f64> = (0..x.len())
        .map(|l| {
            (2.0 * c * gx_dot * y[l] + a * cot[l] - 2.0 * c * gy_dot * x[l]) / den
                - gm_dot / den * (2.0 * c * y[l] + 2.0 * c * c * yy * x[l])
        })
        .collect();
    let gy: Vec<f64> = (0..y.len())
        .map(|l| {
            (gx_dot * (2.0 * c * x[l] + 2.0 * c * y[l]) + b * cot[l]) / den
                - gm_dot / den * (2.0 * c * x[l] + 2.0 * c * c * xx * y[l])
        })
        .collect();
    (gx, gy)
}

/// Forward value of the raw (unclipped) Mobius addition.
pub(crate) fn mobius_add_raw(c: f64, x: &[f64], y: &[f64]) -> Vec<f64> {
    let xx = dot(x, x);
    let yy = dot(y, y);
    let xy = dot(x, y);
    let a = 1.0 + 2.0 * c * xy + c * yy;
    let b = 1.0 - c * xx;
    let den = 1.0 + 2.0 * c * xy + c * c * xx * yy;
    x.iter()
        .zip(y)
        .map(|(&xi, &yi)| (a * xi + b * yi) / den)
        .collect()
}

/// Forward value of `d(x, y) = (2/sqrt(c)) atanh(sqrt(c) |(-x) (+) y|)` on raw
/// coordinate slices.
pub(crate) fn hyp_distance_raw(c: f64, x: &[f64], y: &[f64]) -> f64 {
    if x == y {
        return 0.0;
    }
    let neg_x: Vec<f64> = x.iter().map(|v| -v).collect();
    let m = mobius_add_raw(c, &neg_x, y);
    let sqrt_c = c.sqrt();
    let arg = (sqrt_c * norm(&m)).min(1.0 - crate::ball::BALL_MARGIN);
    2.0 / sqrt_c * arg.atanh()
}

/// Pullback of the pairwise distance; `cot` multiplies the scalar output.
/// The gradient at coincident points is taken as zero (subgradient of the
/// norm kink).
pub fn hyp_distance_vjp(c: f64, x: &[f64], y: &[f64], cot: f64) -> (Vec<f64>, Vec<f64>) {
    if x == y {
        return (vec![0.0; x.len()], vec![0.0; y.len()]);
    }
    let neg_x: Vec<f64> = x.iter().map(|v| -v).collect();
    let m = mobius_add_raw(c, &neg_x, y);
    let r = norm(&m);
    if r == 0.0 {
        return (vec![0.0; x.len()], vec![0.0; y.len()]);
    }
    // d = (2/sqrt(c)) atanh(sqrt(c) r): dd/dr = 2 / (1 - c r^2)
    let dd_dr = 2.0 / (1.0 - c * r * r);
    let gm: Vec<f64> = m.iter().map(|&mi| cot * dd_dr * mi / r).collect();
    let (ga, gy) = mobius_add_vjp(c, &neg_x, y, &gm);
    let gx: Vec<f64> = ga.iter().map(|v| -v).collect();
    (gx, gy)
}

/// Pullback of the distance to the origin `(2/sqrt(c)) atanh(sqrt(c)|x|)`.
pub fn dist_to_origin_vjp(c: f64, x: &[f64], cot: f64) -> Vec<f64> {
    let r = norm(x);
    if r == 0.0 {
        return vec![0.0; x.len()];
    }
    let dd_dr = 2.0 / (1.0 - c * r * r);
    x.iter().map(|&xi| cot * dd_dr * xi / r).collect()
}

/// Pullback of `exp_0(v) = tanh(a)/a * v` with `a = sqrt(c)|v|`.
pub fn exp_map_0_vjp(c: f64, v: &[f64], cot: &[f64]) -> Vec<f64> {
    let n = norm(v);
    let sqrt_c = c.sqrt();
    let a = sqrt_c * n;
    if a < 1e-8 {
        // s -> 1, s' -> 0 at the origin: the Jacobian is the identity.
        return cot.to_vec();
    }
    let t = a.tanh();
    let s = t / a;
    // ds/da = (a sech^2 a - tanh a) / a^2, via series below a = 1e-4 to dodge
    // the cancellation in the difference.
    let ds_da = if a < 1e-4 {
        -2.0 * a / 3.0
    } else {
        let sech2 = 1.0 - t * t;
        (a * sech2 - t) / (a * a)
    };
    let ds_dn = sqrt_c * ds_da;
    let gv_dot = dot(cot, v);
    v.iter()
        .zip(cot)
        .map(|(&vi, &gi)| s * gi + ds_dn * vi / n * gv_dot)
        .collect()
}

/// Pullback of `log_0(x) = atanh(b)/b * x` with `b = sqrt(c)|x|`.
pub fn log_map_0_vjp(c: f64, x: &[f64], cot: &[f64]) -> Vec<f64> {
    let r = norm(x);
    let sqrt_c = c.sqrt();
    let b = sqrt_c * r;
    if b < 1e-8 {
        return cot.to_vec();
    }
    let at = b.atanh();
    let s = at / b;
    let ds_db = if b < 1e-4 {
        2.0 * b / 3.0
    } else {
        (b / (1.0 - b * b) - at) / (b * b)
    };
    let ds_dr = sqrt_c * ds_db;
    let gx_dot = dot(cot, x);
    x.iter()
        .zip(cot)
        .map(|(&xi, &gi)| s * gi + ds_dr * xi / r * gx_dot)
        .collect()
}

/// Norm clip forward on a raw slice: identity inside `max_norm`, rescale onto
/// the sphere of radius `max_norm` outside.
pub(crate) fn clip_norm_raw(v: &[f64], max_norm: f64) -> Vec<f64> {
    let n = norm(v);
    if n <= max_norm {
        v.to_vec()
    } else {
        v.iter().map(|&x| x * max_norm / n).collect()
    }
}

/// Pullback of the norm clip. Inside the radius it is the identity; when the
/// clip is active the Jacobian of `R v / |v|` rescales and removes the radial
/// component (gradients at the boundary are rescaled, not zeroed).
pub fn clip_norm_vjp(v: &[f64], max_norm: f64, cot: &[f64]) -> Vec<f64> {
    let n = norm(v);
    if n <= max_norm {
        return cot.to_vec();
    }
    let gv_dot = dot(cot, v);
    v.iter()
        .zip(cot)
        .map(|(&vi, &gi)| max_norm / n * (gi - gv_dot * vi / (n * n)))
        .collect()
}
