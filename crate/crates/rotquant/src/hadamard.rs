//! Normalized Hadamard matrices via the Sylvester construction.

use std::fmt;

use crate::matrix::DenseMatrix;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NonPowerOfTwo(pub usize);

impl fmt::Display for NonPowerOfTwo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "Hadamard dimension {} unsupported: the Sylvester construction needs a power of two",
            self.0
        )
    }
}

impl std::error::Error for NonPowerOfTwo {}

/// Normalized n×n Hadamard matrix, entries ±1/√n.
///
/// Sylvester sign pattern in closed form: `H[i][j] = (−1)^popcount(i & j)`.
/// The matrix is symmetric and orthogonal, so it is its own inverse.
pub fn hadamard<F: Scalar>(n: usize) -> Result<DenseMatrix<F>, NonPowerOfTwo> {
    if n == 0 || !n.is_power_of_two() {
        return Err(NonPowerOfTwo(n));
    }
    let scale = (F::one() / F::from_f64_lossy(n as f64)).sqrt();
    Ok(DenseMatrix::from_fn(n, n, |i, j| {
        if (i & j).count_ones() % 2 == 0 {
            scale
        } else {
            -scale
        }
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_by_one() {
        let h = hadamard::<f64>(1).unwrap();
        assert_eq!(h.data(), &[1.0]);
    }

    #[test]
    fn sylvester_base() {
        let h = hadamard::<f64>(2).unwrap();
        let r = std::f64::consts::FRAC_1_SQRT_2;
        assert_eq!(h.data(), &[r, r, r, -r]);
    }

    #[test]
    fn recursion_matches_blocks() {
        // H_{2n} = [[H_n, H_n], [H_n, -H_n]] (up to normalization).
        let h4 = hadamard::<f64>(4).unwrap();
        let h2 = hadamard::<f64>(2).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                let base = h2[(i, j)] / 2.0f64.sqrt();
                assert!((h4[(i, j)] - base).abs() < 1e-15);
                assert!((h4[(i, j + 2)] - base).abs() < 1e-15);
                assert!((h4[(i + 2, j)] - base).abs() < 1e-15);
                assert!((h4[(i + 2, j + 2)] + base).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn orthogonal_at_64() {
        let h = hadamard::<f64>(64).unwrap();
        assert!(h.orthogonality_residual() <= 1e-12);
    }

    #[test]
    fn symmetric_and_involutive() {
        let h = hadamard::<f64>(16).unwrap();
        assert_eq!(h, h.transpose());
        let hh = h.matmul(&h).unwrap();
        assert!(hh.frobenius_distance(&DenseMatrix::identity(16)).unwrap() < 1e-12);
    }

    #[test]
    fn rejects_non_power_of_two() {
        assert_eq!(hadamard::<f64>(12).unwrap_err(), NonPowerOfTwo(12));
        assert_eq!(hadamard::<f64>(0).unwrap_err(), NonPowerOfTwo(0));
    }
}
