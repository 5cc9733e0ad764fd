//! Uniformity rotation: map a representative activation profile onto an
//! equal-norm, uniformly spread target through two vector-to-axis Givens
//! chains. The composition costs O(n) to apply and carries exactly 2(n−1)
//! plane rotations.

use std::fmt;

use serde::Serialize;

use crate::givens::{map_to_axis, GivensChain, GivensError};
use crate::matrix::{vec_norm, DenseMatrix};
use crate::rng::SeededRng;
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub enum UrtError {
    /// Target construction needs n >= 2.
    TooFewChannels(usize),
    /// Target norm must be positive.
    BadNorm(f64),
    /// The profile being mapped must be nonzero.
    ZeroVector,
}

impl fmt::Display for UrtError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::TooFewChannels(n) => write!(f, "uniform target needs n >= 2, got {n}"),
            Self::BadNorm(v) => write!(f, "uniform target norm must be positive, got {v}"),
            Self::ZeroVector => {
                write!(f, "cannot build a uniformity rotation for the zero profile")
            }
        }
    }
}

impl std::error::Error for UrtError {}

impl From<GivensError> for UrtError {
    fn from(e: GivensError) -> Self {
        match e {
            GivensError::ZeroVector => Self::ZeroVector,
            other => panic!("axis mapping failed unexpectedly: {other}"),
        }
    }
}

/// Deterministic uniformly spread target: the equispaced grid
/// uₖ = −1 + 2(k+0.5)/n, seed-permuted and rescaled to the requested norm.
/// Each grid cell holds exactly one value, so the histogram is flat by
/// construction.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UniformTarget<F> {
    values: Vec<F>,
    norm: F,
}

impl<F: Scalar> UniformTarget<F> {
    pub fn values(&self) -> &[F] {
        &self.values
    }

    pub fn norm(&self) -> F {
        self.norm
    }
}

pub fn make_uniform_target<F: Scalar>(
    n: usize,
    norm: F,
    rng: &mut SeededRng,
) -> Result<UniformTarget<F>, UrtError> {
    if n < 2 {
        return Err(UrtError::TooFewChannels(n));
    }
    // Rejects non-positive and NaN norms alike.
    if norm.partial_cmp(&F::zero()) != Some(std::cmp::Ordering::Greater) {
        return Err(UrtError::BadNorm(norm.to_f64().unwrap_or(f64::NAN)));
    }
    let mut values: Vec<F> = (0..n)
        .map(|k| F::from_f64_lossy(-1.0 + 2.0 * (k as f64 + 0.5) / n as f64))
        .collect();
    rng.shuffle(&mut values);
    let grid_norm = vec_norm(&values);
    let rescale = norm / grid_norm;
    for v in values.iter_mut() {
        *v *= rescale;
    }
    Ok(UniformTarget { values, norm })
}

/// The uniformity rotation as two chains: `forward` maps the profile onto
/// (‖v‖, 0, …, 0) and `inverse` continues from the axis onto the target.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UrtPlan<F> {
    forward_chain: GivensChain<F>,
    inverse_chain: GivensChain<F>,
    target: UniformTarget<F>,
    n: usize,
}

impl<F: Scalar> UrtPlan<F> {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn target(&self) -> &UniformTarget<F> {
        &self.target
    }

    pub fn forward_chain(&self) -> &GivensChain<F> {
        &self.forward_chain
    }

    pub fn inverse_chain(&self) -> &GivensChain<F> {
        &self.inverse_chain
    }

    /// Total plane rotations applied: exactly 2(n−1).
    pub fn rotation_count(&self) -> usize {
        self.forward_chain.len() + self.inverse_chain.len()
    }

    pub fn apply_in_place(&self, v: &mut [F]) {
        self.forward_chain
            .apply_in_place(v)
            .expect("chain axes are within the plan width");
        self.inverse_chain
            .apply_in_place(v)
            .expect("chain axes are within the plan width");
    }

    pub fn apply_vec(&self, v: &[F]) -> Vec<F> {
        let mut out = v.to_vec();
        self.apply_in_place(&mut out);
        out
    }

    /// Inverse action: target side back to the profile side.
    pub fn apply_inverse_vec(&self, v: &[F]) -> Vec<F> {
        let mut out = v.to_vec();
        self.inverse_chain
            .inverse()
            .apply_in_place(&mut out)
            .expect("chain axes are within the plan width");
        self.forward_chain
            .inverse()
            .apply_in_place(&mut out)
            .expect("chain axes are within the plan width");
        out
    }

    /// Dense n×n form, for composition at small factor sizes.
    pub fn materialize(&self) -> DenseMatrix<F> {
        let mut m = self.forward_chain.materialize(self.n);
        m = m
            .matmul(&self.inverse_chain.materialize(self.n))
            .expect("square factors compose");
        m
    }
}

/// Build the rotation mapping `v` onto a fresh uniform target of equal norm.
/// The target permutation is drawn from `rng`.
pub fn build_urt<F: Scalar>(v: &[F], rng: &mut SeededRng) -> Result<UrtPlan<F>, UrtError> {
    let norm = vec_norm(v);
    if norm == F::zero() {
        return Err(UrtError::ZeroVector);
    }
    let target = make_uniform_target(v.len(), norm, rng)?;
    build_urt_to_target(v, target)
}

/// Build the rotation mapping `v` onto a given equal-norm target.
pub fn build_urt_to_target<F: Scalar>(
    v: &[F],
    target: UniformTarget<F>,
) -> Result<UrtPlan<F>, UrtError> {
    let forward_chain = map_to_axis(v)?;
    let target_chain = map_to_axis(target.values())?;
    Ok(UrtPlan {
        forward_chain,
        inverse_chain: target_chain.inverse(),
        target,
        n: v.len(),
    })
}

/// Representative per-channel profile of a T×n activation matrix: the signed
/// value each channel takes at its own max-magnitude token.
pub fn representative_profile<F: Scalar>(x: &DenseMatrix<F>) -> Vec<F> {
    let (rows, cols) = x.shape();
    assert!(rows >= 1, "profile needs at least one token");
    let mut profile = vec![F::zero(); cols];
    let mut best = vec![F::zero(); cols];
    for r in 0..rows {
        for (c, &v) in x.row(r).iter().enumerate() {
            let a = v.abs();
            if a > best[c] {
                best[c] = a;
                profile[c] = v;
            }
        }
    }
    profile
}

/// Alternative profile: per-channel median of the signed values (midpoint of
/// the two central order statistics for even T).
pub fn representative_profile_median<F: Scalar>(x: &DenseMatrix<F>) -> Vec<F> {
    let (rows, cols) = x.shape();
    assert!(rows >= 1, "profile needs at least one token");
    let half = F::from_f64_lossy(0.5);
    (0..cols)
        .map(|c| {
            let mut column: Vec<F> = (0..rows).map(|r| x[(r, c)]).collect();
            column.sort_by(|a, b| a.partial_cmp(b).expect("finite activations"));
            if rows % 2 == 1 {
                column[rows / 2]
            } else {
                (column[rows / 2 - 1] + column[rows / 2]) * half
            }
        })
        .collect()
}
