//! Poincare-ball primitives for curvature `c > 0`.
//!
//! The model is the open ball of radius `1/sqrt(c)` carrying the conformal
//! metric `lambda_x^c = 2 / (1 - c*|x|^2)`. Geodesic distance is
//!
//! ```text
//! d(x, y) = (2/sqrt(c)) * atanh( sqrt(c) * |(-x) (+) y| )
//! ```
//!
//! which recovers `2*|x - y|` as `c -> 0`. All points are kept a fixed
//! multiplicative margin below the boundary so that `atanh` stays finite.
//!
//! The scalar type is generic; the rest of the crate uses the `f64` aliases
//! exported from the crate root.

use num_traits::Float;

use crate::error::{Error, Result};

/// Multiplicative boundary margin: points satisfy `sqrt(c)*|x| <= 1 - BALL_MARGIN`.
pub const BALL_MARGIN: f64 = 1e-5;

/// Floor on the Mobius-addition denominator; below this the inputs are
/// near-antipodal boundary points and the result is meaningless.
pub const DENOM_FLOOR: f64 = 1e-15;

fn k<T: Float>(v: f64) -> T {
    T::from(v).expect("constant representable in scalar type")
}

fn dot<T: Float>(a: &[T], b: &[T]) -> T {
    a.iter()
        .zip(b.iter())
        .fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

fn norm_sq<T: Float>(a: &[T]) -> T {
    dot(a, a)
}

fn norm<T: Float>(a: &[T]) -> T {
    norm_sq(a).sqrt()
}

fn check_finite<T: Float>(coords: &[T]) -> Result<()> {
    if let Some(index) = coords.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFiniteInput { index });
    }
    Ok(())
}

/// Positive curvature parameter; the implied ball radius is `1/sqrt(c)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Curvature<T>(T);

impl<T: Float> Curvature<T> {
    pub fn new(c: T) -> Result<Self> {
        if !(c.is_finite() && c > T::zero()) {
            return Err(Error::InvalidConfig(format!(
                "curvature must be a positive finite real, got {}",
                c.to_f64().unwrap_or(f64::NAN)
            )));
        }
        Ok(Curvature(c))
    }

    pub fn get(self) -> T {
        self.0
    }

    pub fn sqrt_c(self) -> T {
        self.0.sqrt()
    }

    /// Largest Euclidean norm a point may have: `(1 - BALL_MARGIN)/sqrt(c)`.
    pub fn max_norm(self) -> T {
        (T::one() - k::<T>(BALL_MARGIN)) / self.sqrt_c()
    }
}

/// A point inside the clipped Poincare ball.
#[derive(Debug, Clone, PartialEq)]
pub struct BallPoint<T> {
    coords: Vec<T>,
    curvature: Curvature<T>,
}

impl<T: Float> BallPoint<T> {
    /// Validates finiteness and the clipped-radius bound.
    pub fn new(coords: Vec<T>, curvature: Curvature<T>) -> Result<Self> {
        check_finite(&coords)?;
        let scaled = (curvature.sqrt_c() * norm(&coords)).to_f64().unwrap();
        let limit = 1.0 - BALL_MARGIN;
        // Tiny rounding headroom so that freshly projected points are accepted.
        if scaled > limit * (1.0 + 1e-12) {
            return Err(Error::BoundaryViolation {
                scaled_norm: scaled,
                limit,
            });
        }
        Ok(BallPoint { coords, curvature })
    }

    /// Skips validation; callers must guarantee the invariant already holds
    /// (e.g. outputs of `project_to_ball`).
    pub(crate) fn new_unchecked(coords: Vec<T>, curvature: Curvature<T>) -> Self {
        BallPoint { coords, curvature }
    }

    pub fn origin(dim: usize, curvature: Curvature<T>) -> Self {
        BallPoint {
            coords: vec![T::zero(); dim],
            curvature,
        }
    }

    pub fn coords(&self) -> &[T] {
        &self.coords
    }

    pub fn into_coords(self) -> Vec<T> {
        self.coords
    }

    pub fn curvature(&self) -> Curvature<T> {
        self.curvature
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    pub fn norm(&self) -> T {
        norm(&self.coords)
    }

    pub fn neg(&self) -> Self {
        BallPoint {
            coords: self.coords.iter().map(|&v| -v).collect(),
            curvature: self.curvature,
        }
    }
}

/// An unconstrained tangent vector (all entries finite).
#[derive(Debug, Clone, PartialEq)]
pub struct EuclideanVec<T>(Vec<T>);

impl<T: Float> EuclideanVec<T> {
    pub fn new(coords: Vec<T>) -> Result<Self> {
        check_finite(&coords)?;
        Ok(EuclideanVec(coords))
    }

    pub fn coords(&self) -> &[T] {
        &self.0
    }

    pub fn into_coords(self) -> Vec<T> {
        self.0
    }

    pub fn norm(&self) -> T {
        norm(&self.0)
    }
}

fn same_frame<T: Float>(x: &BallPoint<T>, y: &BallPoint<T>) -> Result<()> {
    if x.curvature != y.curvature {
        return Err(Error::CurvatureMismatch {
            left: x.curvature.get().to_f64().unwrap(),
            right: y.curvature.get().to_f64().unwrap(),
        });
    }
    if x.dim() != y.dim() {
        return Err(Error::DimensionMismatch {
            expected: x.dim(),
            got: y.dim(),
        });
    }
    Ok(())
}

/// Conformal factor `lambda_x^c = 2 / (1 - c*|x|^2)`, always `>= 2`.
pub fn conformal_factor<T: Float>(x: &BallPoint<T>) -> T {
    let c = x.curvature.get();
    k::<T>(2.0) / (T::one() - c * norm_sq(&x.coords))
}

/// Mobius (gyrovector) addition `x (+) y`, re-projected onto the clipped ball.
pub fn mobius_add<T: Float>(x: &BallPoint<T>, y: &BallPoint<T>) -> Result<BallPoint<T>> {
    same_frame(x, y)?;
    let c = x.curvature.get();
    let xx = norm_sq(&x.coords);
    let yy = norm_sq(&y.coords);
    let xy = dot(&x.coords, &y.coords);
    let two = k::<T>(2.0);

    let coef_x = T::one() + two * c * xy + c * yy;
    let coef_y = T::one() - c * xx;
    let den = T::one() + two * c * xy + c * c * xx * yy;
    if den.abs() < k::<T>(DENOM_FLOOR) {
        return Err(Error::DenominatorUnderflow {
            value: den.to_f64().unwrap(),
            floor: DENOM_FLOOR,
        });
    }

    let coords: Vec<T> = x
        .coords
        .iter()
        .zip(y.coords.iter())
        .map(|(&a, &b)| (coef_x * a + coef_y * b) / den)
        .collect();
    Ok(clip_coords(coords, x.curvature))
}

/// Geodesic distance `(2/sqrt(c)) * atanh(sqrt(c) * |(-x) (+) y|)`.
///
/// Symmetric, zero iff `x == y`, and `-> 2|x - y|` as `c -> 0`.
pub fn hyp_distance<T: Float>(x: &BallPoint<T>, y: &BallPoint<T>) -> Result<T> {
    same_frame(x, y)?;
    // Coincident points are exactly at distance zero; the Mobius route would
    // leave an ulp-sized residue.
    if x.coords == y.coords {
        return Ok(T::zero());
    }
    let delta = mobius_add(&x.neg(), y)?;
    let sqrt_c = x.curvature.sqrt_c();
    let arg = (sqrt_c * delta.norm()).min(T::one() - k::<T>(BALL_MARGIN));
    Ok(k::<T>(2.0) / sqrt_c * arg.atanh())
}

/// Geodesic distance to the origin, `(2/sqrt(c)) * atanh(sqrt(c)*|x|)`.
pub fn dist_to_origin<T: Float>(x: &BallPoint<T>) -> T {
    let sqrt_c = x.curvature.sqrt_c();
    let arg = (sqrt_c * x.norm()).min(T::one() - k::<T>(BALL_MARGIN));
    k::<T>(2.0) / sqrt_c * arg.atanh()
}

/// Exponential map at the origin: `tanh(sqrt(c)*|v|) * v / (sqrt(c)*|v|)`.
pub fn exp_map_0<T: Float>(v: &EuclideanVec<T>, curvature: Curvature<T>) -> BallPoint<T> {
    let n = v.norm();
    if n == T::zero() {
        return BallPoint::origin(v.0.len(), curvature);
    }
    let a = curvature.sqrt_c() * n;
    let scale = a.tanh() / a;
    clip_coords(v.0.iter().map(|&x| x * scale).collect(), curvature)
}

/// Logarithmic map at the origin, the inverse of [`exp_map_0`].
pub fn log_map_0<T: Float>(x: &BallPoint<T>) -> EuclideanVec<T> {
    let n = x.norm();
    if n == T::zero() {
        return EuclideanVec(vec![T::zero(); x.dim()]);
    }
    let a = (x.curvature.sqrt_c() * n).min(T::one() - k::<T>(BALL_MARGIN));
    let scale = a.atanh() / a;
    EuclideanVec(x.coords.iter().map(|&v| v * scale).collect())
}

/// Exponential map at a general base point `x`:
/// `x (+) ( tanh(sqrt(c)*lambda_x*|v|/2) * v/(sqrt(c)*|v|) )`.
///
/// The training pipeline only uses the origin form; this exists for
/// completeness and is exercised by tests.
pub fn exp_map<T: Float>(
    x: &BallPoint<T>,
    v: &EuclideanVec<T>,
    ) -> Result<BallPoint<T>> {
    let n = v.norm();
    if n == T::zero() {
        return Ok(x.clone());
    }
    let sqrt_c = x.curvature.sqrt_c();
    let lambda = conformal_factor(x);
    let scale = (sqrt_c * lambda * n / k::<T>(2.0)).tanh() / (sqrt_c * n);
    let u = clip_coords(v.0.iter().map(|&e| e * scale).collect(), x.curvature);
    mobius_add(x, &u)
}

/// Norm-clipped projection: vectors at or inside the clipped radius pass
/// through unchanged, anything longer is rescaled onto it.
pub fn project_to_ball<T: Float>(v: &EuclideanVec<T>, curvature: Curvature<T>) -> BallPoint<T> {
    clip_coords(v.0.clone(), curvature)
}

fn clip_coords<T: Float>(coords: Vec<T>, curvature: Curvature<T>) -> BallPoint<T> {
    let n = norm(&coords);
    let max_norm = curvature.max_norm();
    if n <= max_norm {
        BallPoint::new_unchecked(coords, curvature)
    } else {
        let scale = max_norm / n;
        BallPoint::new_unchecked(coords.iter().map(|&v| v * scale).collect(), curvature)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn c64(c: f64) -> Curvature<f64> {
        Curvature::new(c).unwrap()
    }

    fn point(coords: &[f64], c: f64) -> BallPoint<f64> {
        BallPoint::new(coords.to_vec(), c64(c)).unwrap()
    }

    /// Random point with scaled norm in [0, max_scaled).
    fn random_point(rng: &mut ChaCha8Rng, dim: usize, c: f64, max_scaled: f64) -> BallPoint<f64> {
        let dir: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let n = dir.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
        let target = rng.gen_range(0.0..max_scaled) / c.sqrt();
        point(
            &dir.iter().map(|v| v / n * target).collect::<Vec<_>>(),
            c,
        )
    }

    #[test]
    fn conformal_factor_closed_forms() {
        let origin = BallPoint::origin(3, c64(0.3));
        assert_eq!(conformal_factor(&origin), 2.0);
        // c = 1, |x| = 0.5 -> 2/(1 - 0.25) = 8/3
        let x = point(&[0.3, 0.4], 1.0);
        assert_relative_eq!(conformal_factor(&x), 8.0 / 3.0, max_relative = 1e-14);
        // c = 0.1, |x| = 1 -> 2/(1 - 0.1) = 20/9
        let x = point(&[0.6, 0.8], 0.1);
        assert_relative_eq!(conformal_factor(&x), 20.0 / 9.0, max_relative = 1e-14);
    }

    #[test]
    fn ball_point_rejects_boundary_violation() {
        let err = BallPoint::new(vec![0.9999999, 0.0], c64(1.0)).unwrap_err();
        assert!(matches!(err, Error::BoundaryViolation { .. }), "{err}");
        let err = BallPoint::new(vec![f64::NAN], c64(1.0)).unwrap_err();
        assert!(matches!(err, Error::NonFiniteInput { index: 0 }), "{err}");
    }

    #[test]
    fn mobius_identity_element() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for &c in &[0.05, 0.1, 0.3, 1.0] {
            for _ in 0..50 {
                let x = random_point(&mut rng, 4, c, 0.95);
                let zero = BallPoint::origin(4, c64(c));
                let out = mobius_add(&x, &zero).unwrap();
                for (a, b) in out.coords().iter().zip(x.coords()) {
                    assert_relative_eq!(a, b, max_relative = 1e-12);
                }
            }
        }
    }

    #[test]
    fn mobius_left_inverse() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for &c in &[0.05, 0.1, 0.3, 1.0] {
            for _ in 0..200 {
                let x = random_point(&mut rng, 4, c, 0.95);
                let out = mobius_add(&x.neg(), &x).unwrap();
                assert!(out.norm() <= 1e-9, "|(-x)+x| = {}", out.norm());
            }
        }
    }

    #[test]
    fn mobius_collinear_reduces_to_tanh_addition() {
        // 1-d gyroaddition: tanh(atanh(0.3) + atanh(0.4)) = 0.625
        let x = point(&[0.3, 0.0], 1.0);
        let y = point(&[0.4, 0.0], 1.0);
        let out = mobius_add(&x, &y).unwrap();
        assert_relative_eq!(out.coords()[0], 0.625, max_relative = 1e-14);
        assert_relative_eq!(out.coords()[1], 0.0);
    }

    #[test]
    fn mobius_rejects_mismatched_frames() {
        let x = point(&[0.1], 1.0);
        let y = point(&[0.1], 0.5);
        assert!(matches!(
            mobius_add(&x, &y),
            Err(Error::CurvatureMismatch { .. })
        ));
        let z = point(&[0.1, 0.0], 1.0);
        assert!(matches!(
            mobius_add(&x, &z),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn mobius_denominator_underflow_for_raw_antipodes() {
        // Only reachable past the clip margin, hence the unchecked constructor.
        let r = 1.0 - 1e-9;
        let x = BallPoint::new_unchecked(vec![r, 0.0], c64(1.0));
        let y = BallPoint::new_unchecked(vec![-r, 0.0], c64(1.0));
        let err = mobius_add(&x, &y).unwrap_err();
        assert!(matches!(err, Error::DenominatorUnderflow { .. }), "{err}");
    }

    #[test]
    fn distance_zero_on_diagonal_and_frozen_value() {
        let x = point(&[0.2, -0.3, 0.1], 0.3);
        assert_eq!(hyp_distance(&x, &x).unwrap(), 0.0);
        // c = 1: d(0, (0.5, 0)) = 2*atanh(0.5) = ln 3
        let o = BallPoint::origin(2, c64(1.0));
        let y = point(&[0.5, 0.0], 1.0);
        assert_relative_eq!(
            hyp_distance(&o, &y).unwrap(),
            1.0986122886681098,
            max_relative = 1e-12
        );
        assert_relative_eq!(
            dist_to_origin(&y),
            1.0986122886681098,
            max_relative = 1e-12
        );
    }

    #[test]
    fn distance_euclidean_limit() {
        // c -> 0: d(x, y) -> 2|x - y|, checked at c = 1e-6 with norms <= 1.
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let c = 1e-6;
        for _ in 0..200 {
            let x: Vec<f64> = (0..3).map(|_| rng.gen_range(-0.55..0.55)).collect();
            let y: Vec<f64> = (0..3).map(|_| rng.gen_range(-0.55..0.55)).collect();
            let euclid: f64 = 2.0
                * x.iter()
                    .zip(&y)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt();
            if euclid < 1e-3 {
                continue;
            }
            let d = hyp_distance(&point(&x, c), &point(&y, c)).unwrap();
            assert!(
                ((d - euclid) / euclid).abs() <= 1e-3,
                "c→0 limit violated: hyp {d} vs 2|x-y| {euclid}"
            );
        }
    }

    #[test]
    fn distance_monotone_in_radius() {
        let o = BallPoint::origin(2, c64(0.1));
        let mut last = -1.0;
        for i in 1..30 {
            let r = i as f64 * 0.1;
            let d = hyp_distance(&o, &point(&[r, 0.0], 0.1)).unwrap();
            assert!(d > last, "distance to origin must grow with |x|");
            last = d;
        }
    }

    #[test]
    fn exp_map_frozen_values_and_saturation() {
        let o = exp_map_0(&EuclideanVec::new(vec![0.0, 0.0]).unwrap(), c64(0.3));
        assert_eq!(o.coords(), &[0.0, 0.0]);
        // c = 1: exp_0((atanh(0.9), 0)) = (0.9, 0)
        let v = EuclideanVec::new(vec![1.4722194895832202, 0.0]).unwrap();
        let x = exp_map_0(&v, c64(1.0));
        assert_relative_eq!(x.coords()[0], 0.9, max_relative = 1e-12);
        // Huge inputs saturate at the clipped radius, never beyond.
        for &c in &[0.05, 1.0] {
            let v = EuclideanVec::new(vec![1e9, -3e8]).unwrap();
            let x = exp_map_0(&v, c64(c));
            let limit = (1.0 - BALL_MARGIN) / c.sqrt();
            assert!(x.norm() <= limit * (1.0 + 1e-12));
        }
    }

    #[test]
    fn log_map_frozen_value_and_roundtrip() {
        let x = point(&[0.5, 0.0], 1.0);
        let v = log_map_0(&x);
        assert_relative_eq!(v.coords()[0], 0.5493061443340548, max_relative = 1e-12);
        assert_eq!(log_map_0(&BallPoint::origin(3, c64(0.1))).coords(), &[0.0; 3]);

        // 1000 random tangent vectors with |v| <= 3: max elementwise error <= 1e-6.
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut worst = 0.0f64;
        for i in 0..1000 {
            let c = [0.05, 0.1, 0.3, 1.0][i % 4];
            let v: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.5..1.5)).collect();
            let v = EuclideanVec::new(v).unwrap();
            let back = log_map_0(&exp_map_0(&v, c64(c)));
            for (a, b) in back.coords().iter().zip(v.coords()) {
                worst = worst.max((a - b).abs());
            }
        }
        assert!(worst <= 1e-6, "exp/log round-trip error {worst}");
    }

    #[test]
    fn exp_map_general_base_matches_origin_form() {
        let v = EuclideanVec::new(vec![0.4, -0.2, 0.7]).unwrap();
        let o = BallPoint::origin(3, c64(0.3));
        let a = exp_map(&o, &v).unwrap();
        let b = exp_map_0(&v, c64(0.3));
        for (x, y) in a.coords().iter().zip(b.coords()) {
            assert_relative_eq!(x, y, max_relative = 1e-12);
        }
        // At a nonzero base the map still lands inside the ball.
        let base = point(&[0.3, 0.1, -0.2], 0.3);
        let out = exp_map(&base, &v).unwrap();
        assert!(out.curvature().sqrt_c() * out.norm() <= 1.0 - BALL_MARGIN + 1e-12);
    }

    #[test]
    fn project_examples() {
        let inside = EuclideanVec::new(vec![0.1, 0.2]).unwrap();
        assert_eq!(
            project_to_ball(&inside, c64(1.0)).coords(),
            inside.coords()
        );
        let far = EuclideanVec::new(vec![2.0, 0.0]).unwrap();
        let p = project_to_ball(&far, c64(1.0));
        assert_relative_eq!(p.coords()[0], 1.0 - 1e-5, max_relative = 1e-14);
        let zero = EuclideanVec::new(vec![0.0, 0.0]).unwrap();
        assert_eq!(project_to_ball(&zero, c64(1.0)).norm(), 0.0);
    }

    #[test]
    fn generic_scalar_f32_roundtrip() {
        // The geometry core is scalar-generic; f32 works at loose tolerance.
        let c = Curvature::new(0.1f32).unwrap();
        let v = EuclideanVec::new(vec![0.4f32, -0.1, 0.2]).unwrap();
        let back = log_map_0(&exp_map_0(&v, c));
        for (a, b) in back.coords().iter().zip(v.coords()) {
            assert!((a - b).abs() < 1e-5);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn prop_distance_symmetric_and_triangle(
            seed in 0u64..1_000_000,
            c_idx in 0usize..4,
        ) {
            let c = [0.05, 0.1, 0.3, 1.0][c_idx];
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = random_point(&mut rng, 3, c, 0.9);
            let y = random_point(&mut rng, 3, c, 0.9);
            let z = random_point(&mut rng, 3, c, 0.9);
            let dxy = hyp_distance(&x, &y).unwrap();
            let dyx = hyp_distance(&y, &x).unwrap();
            prop_assert!((dxy - dyx).abs() <= 1e-9);
            let dxz = hyp_distance(&x, &z).unwrap();
            let dyz = hyp_distance(&y, &z).unwrap();
            prop_assert!(dxz <= dxy + dyz + 1e-8);
        }

        #[test]
        fn prop_exp_log_inverse(
            v in prop::collection::vec(-3.0f64..3.0, 2..6),
            c_idx in 0usize..4,
        ) {
            let c = [0.05, 0.1, 0.3, 1.0][c_idx];
            let n: f64 = v.iter().map(|e| e * e).sum::<f64>().sqrt();
            prop_assume!(n <= 3.0);
            let vv = EuclideanVec::new(v.clone()).unwrap();
            let back = log_map_0(&exp_map_0(&vv, c64(c)));
            for (a, b) in back.coords().iter().zip(&v) {
                prop_assert!((a - b).abs() <= 1e-6);
            }
        }
    }
}
