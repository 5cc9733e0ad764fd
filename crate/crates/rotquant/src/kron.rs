//! Kronecker-structured rotations: balanced factorization of the width and
//! the fused apply that replaces the n×n product with two small-matrix
//! products on the row-major reshape, taking the per-row cost from O(n²)
//! down to O(n·(n₁+n₂)) — O(n^{3/2}) for balanced factors.

use std::fmt;

use serde::Serialize;

use crate::matrix::{DenseMatrix, MatrixError};
use crate::parallel::map_rows;
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub enum KronError {
    /// Factorization needs n >= 2.
    WidthTooSmall(usize),
    /// Vector length disagrees with the factor pair.
    LengthMismatch {
        expected: usize,
        got: usize,
    },
    /// A factor matrix is not orthogonal to the required tolerance.
    FactorNotOrthogonal {
        side: &'static str,
        residual: f64,
    },
    Matrix(MatrixError),
}

impl fmt::Display for KronError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::WidthTooSmall(n) => write!(f, "cannot factorize width {n}, need n >= 2"),
            Self::LengthMismatch { expected, got } => {
                write!(f, "vector length {got} does not match n1*n2 = {expected}")
            }
            Self::FactorNotOrthogonal { side, residual } => {
                write!(
                    f,
                    "{side} factor is not orthogonal: residual {residual:.3e}"
                )
            }
            Self::Matrix(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for KronError {}

impl From<MatrixError> for KronError {
    fn from(e: MatrixError) -> Self {
        Self::Matrix(e)
    }
}

/// Factorization n = n₁·n₂ with n₁ ≤ n₂, preferring the most balanced pair
/// whose second factor is a power of two (the side that hosts the Hadamard).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct FactorPair {
    pub n1: usize,
    pub n2: usize,
}

impl FactorPair {
    pub fn n(&self) -> usize {
        self.n1 * self.n2
    }

    /// Prime widths degrade to (1, n): the left factor is a ±1 scalar and
    /// the fused path is a single dense rotation.
    pub fn is_degenerate(&self) -> bool {
        self.n1 == 1
    }

    /// Whether the n₂ side can host a Sylvester Hadamard.
    pub fn hadamard_side_pow2(&self) -> bool {
        self.n2.is_power_of_two()
    }
}

/// Enumerate divisor pairs (n₁ ≤ n₂) and pick, in order of preference:
/// the most balanced pair with n₂ a power of two, else the most balanced
/// pair outright (callers then swap the Hadamard for a seeded random
/// orthogonal block).
pub fn factorize(n: usize) -> Result<FactorPair, KronError> {
    if n < 2 {
        return Err(KronError::WidthTooSmall(n));
    }
    let mut best_any: Option<FactorPair> = None;
    let mut best_pow2: Option<FactorPair> = None;
    let mut d = 1usize;
    while d * d <= n {
        if n.is_multiple_of(d) {
            let pair = FactorPair { n1: d, n2: n / d };
            best_any = Some(pair); // d grows, so the last hit is most balanced
            if pair.hadamard_side_pow2() {
                best_pow2 = Some(pair);
            }
        }
        d += 1;
    }
    Ok(best_pow2.or(best_any).expect("n >= 2 always has (1, n)"))
}

/// Orthogonal factor pair applied through the reshape identity
/// v·(R₁⊗R₂) = rowvec(R₁ᵀ · V · R₂) with V the row-major n₁×n₂ reshape.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KronPlan<F> {
    r1: DenseMatrix<F>,
    r2: DenseMatrix<F>,
    factors: FactorPair,
}

const FACTOR_ORTHO_TOL: f64 = 1e-8;

impl<F: Scalar> KronPlan<F> {
    /// Validates shapes and orthogonality of both factors.
    pub fn new(r1: DenseMatrix<F>, r2: DenseMatrix<F>) -> Result<Self, KronError> {
        assert_eq!(r1.rows(), r1.cols(), "left factor must be square");
        assert_eq!(r2.rows(), r2.cols(), "right factor must be square");
        for (side, m) in [("left", &r1), ("right", &r2)] {
            let residual = m.orthogonality_residual().to_f64().unwrap_or(f64::INFINITY);
            if residual > FACTOR_ORTHO_TOL {
                return Err(KronError::FactorNotOrthogonal { side, residual });
            }
        }
        let factors = FactorPair {
            n1: r1.rows(),
            n2: r2.rows(),
        };
        Ok(Self { r1, r2, factors })
    }

    pub fn identity(factors: FactorPair) -> Self {
        Self {
            r1: DenseMatrix::identity(factors.n1),
            r2: DenseMatrix::identity(factors.n2),
            factors,
        }
    }

    pub fn factors(&self) -> FactorPair {
        self.factors
    }

    pub fn r1(&self) -> &DenseMatrix<F> {
        &self.r1
    }

    pub fn r2(&self) -> &DenseMatrix<F> {
        &self.r2
    }

    /// Plan for the inverse rotation; transposes both orthogonal factors.
    pub fn transposed(&self) -> Self {
        Self {
            r1: self.r1.transpose(),
            r2: self.r2.transpose(),
            factors: self.factors,
        }
    }

    /// Explicit n×n Kronecker product, for oracles and the dense baseline.
    pub fn materialize(&self) -> DenseMatrix<F> {
        let (n1, n2) = (self.factors.n1, self.factors.n2);
        let n = n1 * n2;
        let mut out = DenseMatrix::zeros(n, n);
        for i in 0..n1 {
            for k in 0..n1 {
                let a = self.r1[(i, k)];
                if a == F::zero() {
                    continue;
                }
                for j in 0..n2 {
                    for l in 0..n2 {
                        out[(i * n2 + j, k * n2 + l)] = a * self.r2[(j, l)];
                    }
                }
            }
        }
        out
    }
}

fn fused_apply_into<F: Scalar>(v: &[F], plan: &KronPlan<F>, out: &mut [F], scratch: &mut [F]) {
    let (n1, n2) = (plan.factors.n1, plan.factors.n2);
    // scratch = R₁ᵀ · V   (V is the row-major n₁×n₂ view of v)
    scratch.fill(F::zero());
    for k in 0..n1 {
        let v_row = &v[k * n2..(k + 1) * n2];
        let r1_row = plan.r1.row(k);
        for (i, &r1_ki) in r1_row.iter().enumerate() {
            if r1_ki == F::zero() {
                continue;
            }
            let s_row = &mut scratch[i * n2..(i + 1) * n2];
            for (s, &x) in s_row.iter_mut().zip(v_row.iter()) {
                *s += r1_ki * x;
            }
        }
    }
    // out = scratch · R₂, flattened row-major
    out.fill(F::zero());
    for i in 0..n1 {
        let s_row = &scratch[i * n2..(i + 1) * n2];
        let o_row = &mut out[i * n2..(i + 1) * n2];
        for (j, &s_ij) in s_row.iter().enumerate() {
            if s_ij == F::zero() {
                continue;
            }
            let r2_row = plan.r2.row(j);
            for (o, &r) in o_row.iter_mut().zip(r2_row.iter()) {
                *o += s_ij * r;
            }
        }
    }
}

/// Fused application of R₁⊗R₂ to one row vector; cost O(n₁n₂(n₁+n₂)).
pub fn fused_apply<F: Scalar>(v: &[F], plan: &KronPlan<F>) -> Result<Vec<F>, KronError> {
    let n = plan.factors.n();
    if v.len() != n {
        return Err(KronError::LengthMismatch {
            expected: n,
            got: v.len(),
        });
    }
    let mut out = vec![F::zero(); n];
    let mut scratch = vec![F::zero(); n];
    fused_apply_into(v, plan, &mut out, &mut scratch);
    Ok(out)
}

/// Row-wise fused application to a T×n matrix.
pub fn fused_apply_batch<F: Scalar>(
    x: &DenseMatrix<F>,
    plan: &KronPlan<F>,
) -> Result<DenseMatrix<F>, KronError> {
    fused_apply_batch_threaded(x, plan, 1)
}

/// Row-wise fused application with up to `threads` workers. Rows are pure
/// functions of their inputs, so the output is schedule-independent.
pub fn fused_apply_batch_threaded<F: Scalar>(
    x: &DenseMatrix<F>,
    plan: &KronPlan<F>,
    threads: usize,
) -> Result<DenseMatrix<F>, KronError> {
    let n = plan.factors.n();
    if x.cols() != n {
        return Err(KronError::LengthMismatch {
            expected: n,
            got: x.cols(),
        });
    }
    Ok(map_rows(x, n, threads, |_r, row_in, row_out| {
        let mut scratch = vec![F::zero(); n];
        fused_apply_into(row_in, plan, row_out, &mut scratch);
    }))
}
