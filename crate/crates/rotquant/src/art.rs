//! Alignment rotation: detect the channel carrying the largest activation
//! magnitude, pair it with the calmest channel, and build the orthogonal
//! plan that balances the pair with the closed-form optimal angle while a
//! random orthogonal block keeps the remaining subspace metric-invariant.

use std::fmt;

use serde::Serialize;

use crate::givens::{smoothing_angle_or_fallback, GivensError, GivensRotation};
use crate::matrix::{random_orthogonal, DenseMatrix, MatrixError};
use crate::rng::SeededRng;
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub enum ArtError {
    /// Detection needs at least two channels.
    TooFewChannels(usize),
    /// Every activation entry is zero; there is no pair to balance.
    ZeroActivations,
    Givens(GivensError),
    Matrix(MatrixError),
}

impl fmt::Display for ArtError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::TooFewChannels(n) => {
                write!(f, "outlier detection needs n >= 2 channels, got {n}")
            }
            Self::ZeroActivations => write!(f, "all-zero activations have no outlier pair"),
            Self::Givens(e) => write!(f, "{e}"),
            Self::Matrix(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for ArtError {}

impl From<GivensError> for ArtError {
    fn from(e: GivensError) -> Self {
        match e {
            GivensError::ZeroPair => Self::ZeroActivations,
            other => Self::Givens(other),
        }
    }
}

impl From<MatrixError> for ArtError {
    fn from(e: MatrixError) -> Self {
        Self::Matrix(e)
    }
}

/// Where the outlier and anchor channels live, with their per-channel
/// max-|value| statistics and the token row on which the outlier peaks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OutlierReport<F> {
    pub outlier_dim: usize,
    pub anchor_dim: usize,
    pub outlier_score: F,
    pub anchor_score: F,
    /// Token (row) achieving the outlier channel's max magnitude; the
    /// representative vector the rotation angle is computed from.
    pub peak_token: usize,
}

/// Fill for the (n−2)-dimensional complement of the rotated pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum BulkMode {
    /// Seeded random orthogonal block (the default).
    Random,
    /// Identity block; isolates the pair rotation in tests.
    Identity,
}

/// Orthogonal smoothing plan: a permutation bringing (outlier, anchor) into
/// slots (0, 1), the closed-form pair rotation on those slots, and an
/// orthogonal bulk block on the rest. The permutation is conjugated (applied
/// and then undone), so channels keep their positions.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ArtPlan<F> {
    /// slot -> source channel; slots 0 and 1 hold the outlier/anchor pair.
    permutation: Vec<usize>,
    givens: GivensRotation<F>,
    bulk_block: DenseMatrix<F>,
    n: usize,
}

/// Applies lazily instead of materializing above this width.
const MATERIALIZE_LIMIT: usize = 512;

impl<F: Scalar> ArtPlan<F> {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn givens(&self) -> &GivensRotation<F> {
        &self.givens
    }

    pub fn permutation(&self) -> &[usize] {
        &self.permutation
    }

    pub fn bulk_block(&self) -> &DenseMatrix<F> {
        &self.bulk_block
    }

    /// Row action v ↦ v·R without materializing R: gather the permuted
    /// frame, rotate slots (0, 1), multiply the tail by the bulk block,
    /// scatter back.
    pub fn apply_vec(&self, v: &[F]) -> Vec<F> {
        assert_eq!(v.len(), self.n, "plan built for width {}", self.n);
        let mut frame: Vec<F> = self.permutation.iter().map(|&src| v[src]).collect();
        self.givens
            .apply_in_place(&mut frame)
            .expect("slots (0,1) exist for n >= 2");
        if self.n > 2 {
            let tail = &frame[2..];
            let o = &self.bulk_block;
            let mut mixed = vec![F::zero(); self.n - 2];
            for (r, &t) in tail.iter().enumerate() {
                if t == F::zero() {
                    continue;
                }
                for (m, &orc) in mixed.iter_mut().zip(o.row(r).iter()) {
                    *m += t * orc;
                }
            }
            frame[2..].copy_from_slice(&mixed);
        }
        let mut out = vec![F::zero(); self.n];
        for (slot, &src) in self.permutation.iter().enumerate() {
            out[src] = frame[slot];
        }
        out
    }

    /// Apply to every row of a T×n matrix, materializing the plan once when
    /// the width is small enough for the dense product to win.
    pub fn apply_to_matrix(&self, x: &DenseMatrix<F>) -> DenseMatrix<F> {
        assert_eq!(x.cols(), self.n);
        if self.n <= MATERIALIZE_LIMIT {
            let r = self.materialize();
            return x.matmul(&r).expect("widths agree");
        }
        let mut out = DenseMatrix::zeros(x.rows(), x.cols());
        for r in 0..x.rows() {
            let rotated = self.apply_vec(x.row(r));
            out.row_mut(r).copy_from_slice(&rotated);
        }
        out
    }

    /// Dense n×n form: the permutation-conjugated block diagonal of the pair
    /// rotation and the bulk block.
    pub fn materialize(&self) -> DenseMatrix<F> {
        let n = self.n;
        let mut inverse_perm = vec![0usize; n];
        for (slot, &src) in self.permutation.iter().enumerate() {
            inverse_perm[src] = slot;
        }
        let g = self.givens.materialize(2);
        DenseMatrix::from_fn(n, n, |p, q| {
            let (a, b) = (inverse_perm[p], inverse_perm[q]);
            match (a < 2, b < 2) {
                (true, true) => g[(a, b)],
                (false, false) => self.bulk_block[(a - 2, b - 2)],
                _ => F::zero(),
            }
        })
    }
}

/// Scan per-channel max magnitudes: the outlier channel is the argmax, the
/// anchor the argmin, ties broken toward the lowest index.
pub fn detect_outlier<F: Scalar>(x: &DenseMatrix<F>) -> Result<OutlierReport<F>, ArtError> {
    let n = x.cols();
    if n < 2 {
        return Err(ArtError::TooFewChannels(n));
    }
    assert!(x.rows() >= 1, "detection needs at least one token");
    let scores = x.column_max_abs();
    let mut outlier_dim = 0;
    let mut anchor_dim = 0;
    for (c, &s) in scores.iter().enumerate() {
        if s > scores[outlier_dim] {
            outlier_dim = c;
        }
        if s < scores[anchor_dim] {
            anchor_dim = c;
        }
    }
    if anchor_dim == outlier_dim {
        // All channels tied (constant-magnitude input): pick (0, 1).
        outlier_dim = 0;
        anchor_dim = 1;
    }
    let mut peak_token = 0;
    for t in 0..x.rows() {
        if x[(t, outlier_dim)].abs() > x[(peak_token, outlier_dim)].abs() {
            peak_token = t;
        }
    }
    Ok(OutlierReport {
        outlier_dim,
        anchor_dim,
        outlier_score: scores[outlier_dim],
        anchor_score: scores[anchor_dim],
        peak_token,
    })
}

/// Build the smoothing plan for a detected outlier pair. The rotation angle
/// comes from the signed (outlier, anchor) values at the peak token, so the
/// balanced magnitude sqrt((a²+b²)/2) is achieved exactly on that vector.
pub fn build_art<F: Scalar>(
    report: &OutlierReport<F>,
    x: &DenseMatrix<F>,
    rng: &mut SeededRng,
    bulk: BulkMode,
) -> Result<ArtPlan<F>, ArtError> {
    let n = x.cols();
    if n < 2 {
        return Err(ArtError::TooFewChannels(n));
    }
    assert!(
        report.outlier_dim < n && report.anchor_dim < n && report.peak_token < x.rows(),
        "report does not match the activation shape"
    );
    let a = x[(report.peak_token, report.outlier_dim)];
    let b = x[(report.peak_token, report.anchor_dim)];
    let theta = smoothing_angle_or_fallback(a, b)?;

    let mut permutation = Vec::with_capacity(n);
    permutation.push(report.outlier_dim);
    permutation.push(report.anchor_dim);
    permutation.extend((0..n).filter(|&c| c != report.outlier_dim && c != report.anchor_dim));

    let bulk_block = match (bulk, n) {
        (_, 2) => DenseMatrix::zeros(0, 0),
        (BulkMode::Identity, _) => DenseMatrix::identity(n - 2),
        (BulkMode::Random, _) => random_orthogonal(n - 2, rng)?,
    };

    Ok(ArtPlan {
        permutation,
        givens: GivensRotation::new(0, 1, theta),
        bulk_block,
        n,
    })
}

/// Outcome of k successive detect → build → apply passes.
#[derive(Debug, Clone)]
pub struct ArtIteration<F> {
    pub plans: Vec<ArtPlan<F>>,
    /// Global max |entry| after each pass.
    pub max_abs_trace: Vec<F>,
    pub rotated: DenseMatrix<F>,
}

pub fn art_iterate<F: Scalar>(
    x: &DenseMatrix<F>,
    k: usize,
    rng: &mut SeededRng,
    bulk: BulkMode,
) -> Result<ArtIteration<F>, ArtError> {
    assert!(k >= 1, "at least one pass");
    let mut current = x.clone();
    let mut plans = Vec::with_capacity(k);
    let mut max_abs_trace = Vec::with_capacity(k);
    for _ in 0..k {
        let report = detect_outlier(&current)?;
        let plan = build_art(&report, &current, rng, bulk)?;
        current = plan.apply_to_matrix(&current);
        max_abs_trace.push(current.max_abs());
        plans.push(plan);
    }
    Ok(ArtIteration {
        plans,
        max_abs_trace,
        rotated: current,
    })
}
