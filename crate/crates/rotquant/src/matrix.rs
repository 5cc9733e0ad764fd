//! Dense row-major matrices and the small amount of linear algebra the
//! rotation constructions need.

use std::fmt;
use std::ops::{Index, IndexMut};

use serde::Serialize;

use crate::rng::SeededRng;
use crate::scalar::Scalar;

/// Errors from shape-checked matrix operations.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MatrixError {
    /// Inner dimensions disagree for a product.
    DimMismatch {
        left: (usize, usize),
        right: (usize, usize),
    },
    /// Two matrices were expected to share a shape.
    ShapeMismatch {
        left: (usize, usize),
        right: (usize, usize),
    },
    /// A dimension argument was zero where a positive size is required.
    EmptyDimension,
}

impl fmt::Display for MatrixError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::DimMismatch { left, right } => write!(
                f,
                "dimension mismatch: {}x{} cannot multiply {}x{}",
                left.0, left.1, right.0, right.1
            ),
            Self::ShapeMismatch { left, right } => write!(
                f,
                "shape mismatch: {}x{} vs {}x{}",
                left.0, left.1, right.0, right.1
            ),
            Self::EmptyDimension => write!(f, "dimension must be at least 1"),
        }
    }
}

impl std::error::Error for MatrixError {}

/// Dense row-major real matrix; the carrier for activations, weights and
/// rotation blocks.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DenseMatrix<F> {
    rows: usize,
    cols: usize,
    data: Vec<F>,
}

impl<F: Scalar> DenseMatrix<F> {
    /// Build from a row-major buffer; panics if the length disagrees with
    /// the shape (construction from files goes through `io`, which checks).
    pub fn from_vec(rows: usize, cols: usize, data: Vec<F>) -> Self {
        assert_eq!(
            data.len(),
            rows * cols,
            "row-major buffer length {} does not match {}x{}",
            data.len(),
            rows,
            cols
        );
        Self { rows, cols, data }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![F::zero(); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = F::one();
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> F) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    /// Convenience constructor from nested rows; all rows must agree in length.
    pub fn from_rows(rows: &[Vec<F>]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c, "ragged rows");
            data.extend_from_slice(row);
        }
        Self {
            rows: r,
            cols: c,
            data,
        }
    }

    /// Matrix of i.i.d. standard normal entries; pure function of the rng state.
    pub fn gaussian(rows: usize, cols: usize, rng: &mut SeededRng) -> Self {
        let data = (0..rows * cols).map(|_| rng.normal()).collect();
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn data(&self) -> &[F] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [F] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<F> {
        self.data
    }

    pub fn row(&self, r: usize) -> &[F] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [F] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// Reinterpret the buffer under a new shape with the same element count.
    pub fn reshaped(mut self, rows: usize, cols: usize) -> Self {
        assert_eq!(
            self.data.len(),
            rows * cols,
            "reshape changes element count"
        );
        self.rows = rows;
        self.cols = cols;
        self
    }

    pub fn transpose(&self) -> Self {
        let mut out = Self::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out[(c, r)] = self[(r, c)];
            }
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs(&self) -> F {
        self.data.iter().fold(F::zero(), |acc, v| acc.max(v.abs()))
    }

    /// Largest |entry| per column, scanned over all rows.
    pub fn column_max_abs(&self) -> Vec<F> {
        let mut maxes = vec![F::zero(); self.cols];
        for r in 0..self.rows {
            for (c, v) in self.row(r).iter().enumerate() {
                let a = v.abs();
                if a > maxes[c] {
                    maxes[c] = a;
                }
            }
        }
        maxes
    }

    pub fn map(&self, f: impl Fn(F) -> F) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scale(&self, s: F) -> Self {
        self.map(|v| v * s)
    }

    /// Standard product with real64-class accumulation (ikj loop order).
    pub fn matmul(&self, other: &Self) -> Result<Self, MatrixError> {
        if self.cols != other.rows {
            return Err(MatrixError::DimMismatch {
                left: self.shape(),
                right: other.shape(),
            });
        }
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let a_row = self.row(i);
            for (k, &a_ik) in a_row.iter().enumerate() {
                if a_ik == F::zero() {
                    continue;
                }
                let b_row = other.row(k);
                let out_row = out.row_mut(i);
                for (o, &b) in out_row.iter_mut().zip(b_row.iter()) {
                    *o += a_ik * b;
                }
            }
        }
        Ok(out)
    }

    pub fn sub(&self, other: &Self) -> Result<Self, MatrixError> {
        if self.shape() != other.shape() {
            return Err(MatrixError::ShapeMismatch {
                left: self.shape(),
                right: other.shape(),
            });
        }
        Ok(Self {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(other.data.iter())
                .map(|(&a, &b)| a - b)
                .collect(),
        })
    }

    pub fn add(&self, other: &Self) -> Result<Self, MatrixError> {
        if self.shape() != other.shape() {
            return Err(MatrixError::ShapeMismatch {
                left: self.shape(),
                right: other.shape(),
            });
        }
        Ok(Self {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(other.data.iter())
                .map(|(&a, &b)| a + b)
                .collect(),
        })
    }

    pub fn frobenius_norm(&self) -> F {
        self.data
            .iter()
            .fold(F::zero(), |acc, &v| acc + v * v)
            .sqrt()
    }

    /// ‖a − b‖_F; zero iff the matrices are equal.
    pub fn frobenius_distance(&self, other: &Self) -> Result<F, MatrixError> {
        if self.shape() != other.shape() {
            return Err(MatrixError::ShapeMismatch {
                left: self.shape(),
                right: other.shape(),
            });
        }
        let sum = self
            .data
            .iter()
            .zip(other.data.iter())
            .fold(F::zero(), |acc, (&a, &b)| {
                let d = a - b;
                acc + d * d
            });
        Ok(sum.sqrt())
    }

    /// max |entry| of (selfᵀ·self − I); the orthogonality residual.
    pub fn orthogonality_residual(&self) -> F {
        let gram = self
            .transpose()
            .matmul(self)
            .expect("transpose product shapes always agree");
        let n = gram.rows();
        let mut worst = F::zero();
        for i in 0..n {
            for j in 0..n {
                let target = if i == j { F::one() } else { F::zero() };
                let dev = (gram[(i, j)] - target).abs();
                if dev > worst {
                    worst = dev;
                }
            }
        }
        worst
    }

    /// Solve self · X = rhs by Gaussian elimination with partial pivoting.
    /// Returns `None` when a pivot underflows (singular system).
    pub fn solve(&self, rhs: &Self) -> Option<Self> {
        assert_eq!(self.rows, self.cols, "solve requires a square system");
        assert_eq!(self.rows, rhs.rows, "rhs row count must match");
        let n = self.rows;
        let mut a = self.clone();
        let mut b = rhs.clone();
        for col in 0..n {
            let mut pivot = col;
            let mut best = a[(col, col)].abs();
            for r in col + 1..n {
                let cand = a[(r, col)].abs();
                if cand > best {
                    best = cand;
                    pivot = r;
                }
            }
            if best == F::zero() {
                return None;
            }
            if pivot != col {
                for c in 0..n {
                    let tmp = a[(col, c)];
                    a[(col, c)] = a[(pivot, c)];
                    a[(pivot, c)] = tmp;
                }
                for c in 0..b.cols {
                    let tmp = b[(col, c)];
                    b[(col, c)] = b[(pivot, c)];
                    b[(pivot, c)] = tmp;
                }
            }
            let inv = F::one() / a[(col, col)];
            for r in col + 1..n {
                let factor = a[(r, col)] * inv;
                if factor == F::zero() {
                    continue;
                }
                for c in col..n {
                    let v = a[(col, c)];
                    a[(r, c)] -= factor * v;
                }
                for c in 0..b.cols {
                    let v = b[(col, c)];
                    b[(r, c)] -= factor * v;
                }
            }
        }
        // Back substitution.
        let mut x = DenseMatrix::zeros(n, b.cols);
        for col in 0..b.cols {
            for r in (0..n).rev() {
                let mut acc = b[(r, col)];
                for k in r + 1..n {
                    acc -= a[(r, k)] * x[(k, col)];
                }
                x[(r, col)] = acc / a[(r, r)];
            }
        }
        Some(x)
    }
}

impl<F: Scalar> Index<(usize, usize)> for DenseMatrix<F> {
    type Output = F;

    fn index(&self, (r, c): (usize, usize)) -> &F {
        debug_assert!(r < self.rows && c < self.cols);
        &self.data[r * self.cols + c]
    }
}

impl<F: Scalar> IndexMut<(usize, usize)> for DenseMatrix<F> {
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut F {
        debug_assert!(r < self.rows && c < self.cols);
        &mut self.data[r * self.cols + c]
    }
}

/// Euclidean norm of a vector slice.
pub fn vec_norm<F: Scalar>(v: &[F]) -> F {
    v.iter().fold(F::zero(), |acc, &x| acc + x * x).sqrt()
}

/// Haar-ish random orthogonal matrix: Gaussian fill followed by Householder
/// QR with the R diagonal sign fixed so the factorization is unique and the
/// result is deterministic under the seed.
pub fn random_orthogonal<F: Scalar>(
    n: usize,
    rng: &mut SeededRng,
) -> Result<DenseMatrix<F>, MatrixError> {
    if n == 0 {
        return Err(MatrixError::EmptyDimension);
    }
    let a = DenseMatrix::<F>::gaussian(n, n, rng);
    Ok(householder_q(&a))
}

/// Nearest-QR orthonormalization: the Q factor of `a` with sign-fixed
/// diagonal. Used to squash accumulated drift in iterated rotations.
pub fn orthonormalize<F: Scalar>(a: &DenseMatrix<F>) -> DenseMatrix<F> {
    householder_q(a)
}

/// Orthogonal Q of the Householder QR of `a`, columns sign-fixed so that the
/// corresponding R has a non-negative diagonal.
fn householder_q<F: Scalar>(a: &DenseMatrix<F>) -> DenseMatrix<F> {
    let n = a.rows();
    let mut r = a.clone();
    // Householder vectors, stored per reflection.
    let mut vs: Vec<Vec<F>> = Vec::with_capacity(n);
    for k in 0..n {
        let mut v: Vec<F> = (k..n).map(|i| r[(i, k)]).collect();
        let alpha = vec_norm(&v);
        if alpha == F::zero() {
            // Degenerate column: skip the reflection (v stays zero).
            vs.push(vec![F::zero(); n - k]);
            continue;
        }
        let sign = if v[0] >= F::zero() {
            F::one()
        } else {
            -F::one()
        };
        v[0] += sign * alpha;
        let vnorm = vec_norm(&v);
        for x in v.iter_mut() {
            *x /= vnorm;
        }
        // Apply reflection to the trailing block of R.
        for col in k..n {
            let mut dot = F::zero();
            for (i, &vi) in v.iter().enumerate() {
                dot += vi * r[(k + i, col)];
            }
            let two_dot = dot + dot;
            for (i, &vi) in v.iter().enumerate() {
                r[(k + i, col)] -= two_dot * vi;
            }
        }
        vs.push(v);
    }
    // Accumulate Q = H_0 · H_1 · ... · H_{n-1} by applying reflections to I.
    let mut q = DenseMatrix::<F>::identity(n);
    for k in (0..n).rev() {
        let v = &vs[k];
        if v.iter().all(|&x| x == F::zero()) {
            continue;
        }
        for col in 0..n {
            let mut dot = F::zero();
            for (i, &vi) in v.iter().enumerate() {
                dot += vi * q[(k + i, col)];
            }
            let two_dot = dot + dot;
            for (i, &vi) in v.iter().enumerate() {
                q[(k + i, col)] -= two_dot * vi;
            }
        }
    }
    // Fix signs so R's diagonal is non-negative: Q <- Q * diag(sign(R_kk)).
    for k in 0..n {
        if r[(k, k)] < F::zero() {
            for row in 0..n {
                q[(row, k)] = -q[(row, k)];
            }
        }
    }
    q
}
