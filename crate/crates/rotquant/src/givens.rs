//! Givens rotations: the two-axis orthogonal primitive, the closed-form
//! angle that balances a coordinate pair's magnitudes, and the n-1-rotation
//! chain mapping an arbitrary vector onto the first axis.
//!
//! Convention is row-vector action throughout: a rotation G acts as v ↦ vG,
//! and for axes (i, j) with angle θ the touched pair transforms as
//! (vᵢ, vⱼ) ↦ (vᵢ·cosθ + vⱼ·sinθ, −vᵢ·sinθ + vⱼ·cosθ).

use std::fmt;

use serde::Serialize;

use crate::matrix::{vec_norm, DenseMatrix};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub enum GivensError {
    /// Rotation axes must be distinct and inside the vector.
    AxisOutOfRange { i: usize, j: usize, len: usize },
    /// The balancing angle is undefined for the zero pair.
    ZeroPair,
    /// a + b == 0 exactly: the arctan form is undefined (see
    /// `smoothing_angle_or_fallback` for the documented fallback).
    DegeneratePair { a: f64, b: f64 },
    /// Axis-mapping chain requires a nonzero vector.
    ZeroVector,
}

impl fmt::Display for GivensError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::AxisOutOfRange { i, j, len } => {
                write!(f, "rotation axes ({i},{j}) out of range for length {len}")
            }
            Self::ZeroPair => write!(f, "smoothing angle undefined for the zero pair"),
            Self::DegeneratePair { a, b } => {
                write!(
                    f,
                    "degenerate pair a={a}, b={b}: a+b=0 leaves arctan((b-a)/(a+b)) undefined"
                )
            }
            Self::ZeroVector => write!(f, "axis mapping requires a nonzero vector"),
        }
    }
}

impl std::error::Error for GivensError {}

/// Plane rotation acting on axes `i` and `j` by angle `theta` (radians).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GivensRotation<F> {
    pub i: usize,
    pub j: usize,
    pub theta: F,
}

impl<F: Scalar> GivensRotation<F> {
    pub fn new(i: usize, j: usize, theta: F) -> Self {
        assert_ne!(i, j, "rotation axes must differ");
        Self { i, j, theta }
    }

    pub fn inverse(self) -> Self {
        Self {
            theta: -self.theta,
            ..self
        }
    }

    /// Apply in place; only components `i` and `j` change.
    pub fn apply_in_place(&self, v: &mut [F]) -> Result<(), GivensError> {
        if self.i >= v.len() || self.j >= v.len() || self.i == self.j {
            return Err(GivensError::AxisOutOfRange {
                i: self.i,
                j: self.j,
                len: v.len(),
            });
        }
        let (c, s) = (self.theta.cos(), self.theta.sin());
        let (vi, vj) = (v[self.i], v[self.j]);
        v[self.i] = vi * c + vj * s;
        v[self.j] = -vi * s + vj * c;
        Ok(())
    }

    /// Dense n×n form of the rotation, for materialized plans and oracles.
    pub fn materialize(&self, n: usize) -> DenseMatrix<F> {
        let mut m = DenseMatrix::identity(n);
        let (c, s) = (self.theta.cos(), self.theta.sin());
        m[(self.i, self.i)] = c;
        m[(self.i, self.j)] = -s;
        m[(self.j, self.i)] = s;
        m[(self.j, self.j)] = c;
        m
    }
}

/// Apply a rotation out of place.
pub fn apply_givens<F: Scalar>(v: &[F], g: &GivensRotation<F>) -> Result<Vec<F>, GivensError> {
    let mut out = v.to_vec();
    g.apply_in_place(&mut out)?;
    Ok(out)
}

/// Ordered composition of plane rotations, applied left to right.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct GivensChain<F> {
    rotations: Vec<GivensRotation<F>>,
}

impl<F: Scalar> GivensChain<F> {
    pub fn new(rotations: Vec<GivensRotation<F>>) -> Self {
        Self { rotations }
    }

    pub fn rotations(&self) -> &[GivensRotation<F>] {
        &self.rotations
    }

    pub fn len(&self) -> usize {
        self.rotations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rotations.is_empty()
    }

    pub fn apply_in_place(&self, v: &mut [F]) -> Result<(), GivensError> {
        for g in &self.rotations {
            g.apply_in_place(v)?;
        }
        Ok(())
    }

    pub fn apply(&self, v: &[F]) -> Result<Vec<F>, GivensError> {
        let mut out = v.to_vec();
        self.apply_in_place(&mut out)?;
        Ok(out)
    }

    /// Reversed order with negated angles: the exact inverse composition.
    pub fn inverse(&self) -> Self {
        Self {
            rotations: self.rotations.iter().rev().map(|g| g.inverse()).collect(),
        }
    }

    /// Dense form; product of the rotations in application order.
    pub fn materialize(&self, n: usize) -> DenseMatrix<F> {
        let mut m = DenseMatrix::identity(n);
        for g in &self.rotations {
            m = m.matmul(&g.materialize(n)).expect("square factors compose");
        }
        m
    }
}

/// The closed-form angle θ = arctan((b−a)/(a+b)) that minimizes
/// max(|x₁|, |x₂|) over all plane rotations of the pair (a, b); the rotated
/// pair has both magnitudes equal to sqrt((a²+b²)/2).
///
/// Errors on the zero pair and on a+b == 0, where the arctan form is
/// undefined; `smoothing_angle_or_fallback` documents the fallback used for
/// the latter.
pub fn optimal_smoothing_angle<F: Scalar>(a: F, b: F) -> Result<F, GivensError> {
    if a == F::zero() && b == F::zero() {
        return Err(GivensError::ZeroPair);
    }
    if a + b == F::zero() {
        return Err(GivensError::DegeneratePair {
            a: a.to_f64().unwrap_or(f64::NAN),
            b: b.to_f64().unwrap_or(f64::NAN),
        });
    }
    Ok(((b - a) / (a + b)).atan())
}

/// `optimal_smoothing_angle`, with the degenerate a+b == 0 case resolved by
/// continuity: as a+b → 0 the arctan argument diverges and the angle tends
/// to ±π/2, and θ = π/2 maps (a, −a) to (−a, −a), balancing the magnitudes
/// at sqrt((a²+b²)/2) like every non-degenerate case.
pub fn smoothing_angle_or_fallback<F: Scalar>(a: F, b: F) -> Result<F, GivensError> {
    match optimal_smoothing_angle(a, b) {
        Err(GivensError::DegeneratePair { .. }) => Ok(F::FRAC_PI_2()),
        other => other,
    }
}

/// Chain of exactly n−1 rotations mapping `v` onto (‖v‖₂, 0, …, 0).
///
/// Rotation k acts on axes (0, k+1) and zeroes component k+1 while folding
/// its magnitude into component 0, so cost is linear in n.
pub fn map_to_axis<F: Scalar>(v: &[F]) -> Result<GivensChain<F>, GivensError> {
    let norm = vec_norm(v);
    if norm == F::zero() {
        return Err(GivensError::ZeroVector);
    }
    let mut head = v[0];
    let mut rotations = Vec::with_capacity(v.len().saturating_sub(1));
    for (k, &vk) in v.iter().enumerate().skip(1) {
        let theta = vk.atan2(head);
        rotations.push(GivensRotation::new(0, k, theta));
        head = head.hypot(vk);
    }
    Ok(GivensChain::new(rotations))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeededRng;
    use proptest::prelude::*;

    #[test]
    fn unit_rotation_quarter_turn() {
        let g = GivensRotation::new(0, 1, std::f64::consts::FRAC_PI_4);
        let out = apply_givens(&[1.0, 0.0], &g).unwrap();
        let r = std::f64::consts::FRAC_1_SQRT_2;
        assert!((out[0] - r).abs() < 1e-15);
        assert!((out[1] + r).abs() < 1e-15);
    }

    #[test]
    fn zero_angle_is_identity() {
        let g = GivensRotation::new(2, 5, 0.0);
        let v: Vec<f64> = (0..8).map(|i| i as f64).collect();
        assert_eq!(apply_givens(&v, &g).unwrap(), v);
    }

    #[test]
    fn untouched_components_are_bit_identical() {
        let mut rng = SeededRng::new(2);
        let v: Vec<f64> = (0..16).map(|_| rng.next_normal()).collect();
        let g = GivensRotation::new(3, 11, 0.7);
        let out = apply_givens(&v, &g).unwrap();
        for (k, (a, b)) in v.iter().zip(out.iter()).enumerate() {
            if k != 3 && k != 11 {
                assert_eq!(a.to_bits(), b.to_bits(), "component {k} moved");
            }
        }
    }

    #[test]
    fn out_of_range_axis_errors() {
        let g = GivensRotation::new(0, 9, 0.3);
        assert!(matches!(
            apply_givens(&[1.0f64, 2.0], &g),
            Err(GivensError::AxisOutOfRange { j: 9, len: 2, .. })
        ));
    }

    #[test]
    fn rotation_preserves_norm() {
        let mut rng = SeededRng::new(3);
        for _ in 0..50 {
            let v: Vec<f64> = (0..32).map(|_| rng.next_normal()).collect();
            let i = rng.next_index(32);
            let mut j = rng.next_index(32);
            if j == i {
                j = (j + 1) % 32;
            }
            let g = GivensRotation::new(i, j, rng.next_normal());
            let out = apply_givens(&v, &g).unwrap();
            let (n0, n1) = (vec_norm(&v), vec_norm(&out));
            assert!((n0 - n1).abs() <= 1e-12 * n0.max(1.0));
        }
    }

    #[test]
    fn inverse_restores_input() {
        let mut rng = SeededRng::new(4);
        let v: Vec<f64> = (0..8).map(|_| rng.next_normal()).collect();
        let g = GivensRotation::new(1, 6, 1.234_f64);
        let back = apply_givens(&apply_givens(&v, &g).unwrap(), &g.inverse()).unwrap();
        for (a, b) in v.iter().zip(back.iter()) {
            assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn smoothing_angle_balanced_pair_is_zero() {
        let theta = optimal_smoothing_angle(1.0f64, 1.0).unwrap();
        assert_eq!(theta, 0.0);
        let out = apply_givens(&[1.0, 1.0], &GivensRotation::new(0, 1, theta)).unwrap();
        assert_eq!(out, vec![1.0, 1.0]);
    }

    #[test]
    fn smoothing_angle_three_one() {
        let theta = optimal_smoothing_angle(3.0f64, 1.0).unwrap();
        assert!((theta - (-0.5f64).atan()).abs() < 1e-15);
        assert!((theta + 0.4636476090008061).abs() < 1e-12);
        let out = apply_givens(&[3.0, 1.0], &GivensRotation::new(0, 1, theta)).unwrap();
        let expected = 5.0f64.sqrt();
        assert!((out[0].abs() - expected).abs() < 1e-12);
        assert!((out[1].abs() - expected).abs() < 1e-12);
    }

    #[test]
    fn smoothing_angle_axis_aligned() {
        // (1, 0): formula gives arctan(-1) = -π/4; magnitudes land at √(1/2).
        let theta = optimal_smoothing_angle(1.0f64, 0.0).unwrap();
        assert!((theta + std::f64::consts::FRAC_PI_4).abs() < 1e-15);
        let out = apply_givens(&[1.0, 0.0], &GivensRotation::new(0, 1, theta)).unwrap();
        let expected = 0.5f64.sqrt();
        assert!((out[0].abs() - expected).abs() < 1e-15);
        assert!((out[1].abs() - expected).abs() < 1e-15);
    }

    #[test]
    fn smoothing_angle_errors() {
        assert!(matches!(
            optimal_smoothing_angle(0.0f64, 0.0),
            Err(GivensError::ZeroPair)
        ));
        assert!(matches!(
            optimal_smoothing_angle(2.0f64, -2.0),
            Err(GivensError::DegeneratePair { .. })
        ));
    }

    #[test]
    fn degenerate_fallback_balances() {
        let theta = smoothing_angle_or_fallback(2.0f64, -2.0).unwrap();
        assert_eq!(theta, std::f64::consts::FRAC_PI_2);
        let out = apply_givens(&[2.0, -2.0], &GivensRotation::new(0, 1, theta)).unwrap();
        let expected = (4.0f64 + 4.0) / 2.0;
        assert!((out[0].abs() - expected.sqrt()).abs() < 1e-12);
        assert!((out[1].abs() - expected.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn smoothing_matches_grid_search_oracle() {
        // The closed form must beat a dense angle grid and hit the
        // sqrt((a²+b²)/2) value exactly.
        let mut rng = SeededRng::new(12);
        for _ in 0..200 {
            let a = rng.next_normal() * 10.0;
            let b = rng.next_normal() * 10.0;
            if (a + b).abs() < 1e-9 || (a == 0.0 && b == 0.0) {
                continue;
            }
            let theta = optimal_smoothing_angle(a, b).unwrap();
            let closed = apply_givens(&[a, b], &GivensRotation::new(0, 1, theta)).unwrap();
            let closed_max = closed[0].abs().max(closed[1].abs());

            let mut grid_min = f64::INFINITY;
            let steps = 20_000;
            for k in 0..steps {
                let t = -std::f64::consts::PI
                    + 2.0 * std::f64::consts::PI * (k as f64) / (steps as f64);
                let x1 = a * t.cos() + b * t.sin();
                let x2 = -a * t.sin() + b * t.cos();
                grid_min = grid_min.min(x1.abs().max(x2.abs()));
            }
            assert!(closed_max <= grid_min + 1e-6, "a={a} b={b}");
            let expected = ((a * a + b * b) / 2.0).sqrt();
            assert!((closed_max - expected).abs() <= 1e-9 * expected);
        }
    }

    #[test]
    fn map_to_axis_already_aligned() {
        let chain = map_to_axis(&[5.0f64, 0.0, 0.0]).unwrap();
        assert_eq!(chain.len(), 2);
        let out = chain.apply(&[5.0, 0.0, 0.0]).unwrap();
        assert_eq!(out, vec![5.0, 0.0, 0.0]);
    }

    #[test]
    fn map_to_axis_three_four_five() {
        let chain = map_to_axis(&[3.0f64, 4.0]).unwrap();
        assert_eq!(chain.len(), 1);
        let out = chain.apply(&[3.0, 4.0]).unwrap();
        assert!((out[0] - 5.0).abs() < 1e-12);
        assert!(out[1].abs() < 1e-12);
    }

    #[test]
    fn map_to_axis_large_random() {
        let mut rng = SeededRng::new(8);
        let v: Vec<f64> = (0..128).map(|_| rng.next_normal()).collect();
        let norm = vec_norm(&v);
        let chain = map_to_axis(&v).unwrap();
        assert_eq!(chain.len(), 127);
        let out = chain.apply(&v).unwrap();
        assert!((out[0] - norm).abs() <= 1e-10 * norm);
        for &x in &out[1..] {
            assert!(x.abs() <= 1e-10 * norm);
        }
    }

    #[test]
    fn map_to_axis_rejects_zero_vector() {
        assert!(matches!(
            map_to_axis(&[0.0f64, 0.0]),
            Err(GivensError::ZeroVector)
        ));
    }

    #[test]
    fn chain_inverse_is_identity() {
        let mut rng = SeededRng::new(21);
        let v: Vec<f64> = (0..64).map(|_| rng.next_normal()).collect();
        let chain = map_to_axis(&v).unwrap();
        let back = chain.inverse().apply(&chain.apply(&v).unwrap()).unwrap();
        for (a, b) in v.iter().zip(back.iter()) {
            assert!((a - b).abs() <= 1e-10);
        }
    }

    proptest! {
        #[test]
        fn chain_preserves_norm(seed in 0u64..1000, n in 2usize..200) {
            let mut rng = SeededRng::new(seed);
            let v: Vec<f64> = (0..n).map(|_| rng.next_normal()).collect();
            prop_assume!(vec_norm(&v) > 1e-9);
            let chain = map_to_axis(&v).unwrap();
            let x: Vec<f64> = (0..n).map(|_| rng.next_normal()).collect();
            let out = chain.apply(&x).unwrap();
            let (n0, n1) = (vec_norm(&x), vec_norm(&out));
            prop_assert!((n0 - n1).abs() <= 1e-10 * n0.max(1.0));
        }

        #[test]
        fn smoothing_value_formula(a in -100.0f64..100.0, b in -100.0f64..100.0) {
            prop_assume!((a + b).abs() > 1e-6);
            prop_assume!(a != 0.0 || b != 0.0);
            let theta = optimal_smoothing_angle(a, b).unwrap();
            let out = apply_givens(&[a, b], &GivensRotation::new(0, 1, theta)).unwrap();
            let expected = ((a * a + b * b) / 2.0).sqrt();
            prop_assert!((out[0].abs() - expected).abs() <= 1e-9 * expected.max(1e-12));
            prop_assert!((out[1].abs() - expected).abs() <= 1e-9 * expected.max(1e-12));
        }
    }

    #[test]
    fn chain_norm_preservation_large_n() {
        let mut rng = SeededRng::new(30);
        let v: Vec<f64> = (0..4096).map(|_| rng.next_normal()).collect();
        let chain = map_to_axis(&v).unwrap();
        let x: Vec<f64> = (0..4096).map(|_| rng.next_normal()).collect();
        let out = chain.apply(&x).unwrap();
        let (n0, n1) = (vec_norm(&x), vec_norm(&out));
        assert!((n0 - n1).abs() <= 1e-10 * n0);
    }
}
