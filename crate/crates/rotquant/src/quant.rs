//! Round-to-nearest fake quantization at configurable bit width and
//! granularity, plus the quality metrics the pipeline reports.
//!
//! Rounding is half-away-from-zero everywhere, so integer codes are a pure
//! function of the input on every platform.

use std::fmt;

use serde::Serialize;

use crate::matrix::DenseMatrix;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Granularity {
    PerTensor,
    /// One scale per row; the per-token default for activations.
    PerRow,
    /// One scale per column; the per-output-channel default for weights
    /// stored input-major.
    PerColumn,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct QuantConfig {
    pub bits: u32,
    pub symmetric: bool,
    pub granularity: Granularity,
    /// Fraction of the group's max magnitude kept before saturation; 1.0
    /// disables clipping.
    pub clip_ratio: f64,
}

impl QuantConfig {
    pub fn w4a4_activations() -> Self {
        Self {
            bits: 4,
            symmetric: true,
            granularity: Granularity::PerRow,
            clip_ratio: 1.0,
        }
    }

    pub fn w4a4_weights() -> Self {
        Self {
            bits: 4,
            symmetric: true,
            granularity: Granularity::PerRow,
            clip_ratio: 1.0,
        }
    }

    pub fn with_bits(mut self, bits: u32) -> Self {
        self.bits = bits;
        self
    }

    /// Number of representable levels: 2^b − 1 symmetric (codes −qmax..qmax),
    /// 2^b asymmetric.
    pub fn level_count(&self) -> usize {
        if self.symmetric {
            (1usize << self.bits) - 1
        } else {
            1usize << self.bits
        }
    }

    fn validate(&self) -> Result<(), QuantError> {
        if !(2..=8).contains(&self.bits) {
            return Err(QuantError::BadBits(self.bits));
        }
        if !(self.clip_ratio > 0.0 && self.clip_ratio <= 1.0) {
            return Err(QuantError::BadClipRatio(self.clip_ratio));
        }
        Ok(())
    }
}

impl Default for QuantConfig {
    fn default() -> Self {
        Self {
            bits: 4,
            symmetric: true,
            granularity: Granularity::PerTensor,
            clip_ratio: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum QuantError {
    BadBits(u32),
    BadClipRatio(f64),
    NonFiniteInput,
}

impl fmt::Display for QuantError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::BadBits(b) => write!(f, "bit width {b} outside supported range 2..=8"),
            Self::BadClipRatio(c) => write!(f, "clip ratio {c} outside (0, 1]"),
            Self::NonFiniteInput => write!(f, "input contains non-finite values"),
        }
    }
}

impl std::error::Error for QuantError {}

/// Integer codes plus per-group scale/zero-point.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedTensor<F> {
    codes: Vec<i32>,
    scales: Vec<F>,
    zero_points: Vec<F>,
    config: QuantConfig,
    rows: usize,
    cols: usize,
}

impl<F: Scalar> QuantizedTensor<F> {
    pub fn codes(&self) -> &[i32] {
        &self.codes
    }

    pub fn scales(&self) -> &[F] {
        &self.scales
    }

    pub fn zero_points(&self) -> &[F] {
        &self.zero_points
    }

    pub fn config(&self) -> &QuantConfig {
        &self.config
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    fn group_of(&self, r: usize, c: usize) -> usize {
        match self.config.granularity {
            Granularity::PerTensor => 0,
            Granularity::PerRow => r,
            Granularity::PerColumn => c,
        }
    }
}

fn group_count(rows: usize, cols: usize, granularity: Granularity) -> usize {
    match granularity {
        Granularity::PerTensor => 1,
        Granularity::PerRow => rows,
        Granularity::PerColumn => cols,
    }
}

fn group_of(r: usize, c: usize, granularity: Granularity) -> usize {
    match granularity {
        Granularity::PerTensor => 0,
        Granularity::PerRow => r,
        Granularity::PerColumn => c,
    }
}

/// Round-to-nearest quantization.
///
/// Symmetric: scale = clip·max|group| / (2^{b−1}−1), zero scale replaced by 1
/// so all-zero groups encode to zero codes. Asymmetric: scale spans the
/// clipped [min, max] range with a real zero point at the group minimum.
pub fn quantize<F: Scalar>(
    x: &DenseMatrix<F>,
    cfg: &QuantConfig,
) -> Result<QuantizedTensor<F>, QuantError> {
    cfg.validate()?;
    if !x.is_finite() {
        return Err(QuantError::NonFiniteInput);
    }
    let (rows, cols) = x.shape();
    let groups = group_count(rows, cols, cfg.granularity);
    let clip = F::from_f64_lossy(cfg.clip_ratio);

    let mut scales = vec![F::zero(); groups];
    let mut zero_points = vec![F::zero(); groups];

    if cfg.symmetric {
        let qmax = F::from_f64_lossy(((1i64 << (cfg.bits - 1)) - 1) as f64);
        let mut max_abs = vec![F::zero(); groups];
        for r in 0..rows {
            for c in 0..cols {
                let g = group_of(r, c, cfg.granularity);
                let a = x[(r, c)].abs();
                if a > max_abs[g] {
                    max_abs[g] = a;
                }
            }
        }
        for g in 0..groups {
            scales[g] = if max_abs[g] == F::zero() {
                F::one()
            } else {
                clip * max_abs[g] / qmax
            };
        }
        let qmax_i = (1i32 << (cfg.bits - 1)) - 1;
        let mut codes = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                let g = group_of(r, c, cfg.granularity);
                let q = (x[(r, c)] / scales[g]).round();
                let q = q.to_f64().expect("rounded code fits f64") as i64;
                codes.push(q.clamp(-(qmax_i as i64), qmax_i as i64) as i32);
            }
        }
        Ok(QuantizedTensor {
            codes,
            scales,
            zero_points,
            config: *cfg,
            rows,
            cols,
        })
    } else {
        let levels = F::from_f64_lossy(((1i64 << cfg.bits) - 1) as f64);
        let mut mins = vec![F::infinity(); groups];
        let mut maxs = vec![F::neg_infinity(); groups];
        for r in 0..rows {
            for c in 0..cols {
                let g = group_of(r, c, cfg.granularity);
                let v = x[(r, c)];
                if v < mins[g] {
                    mins[g] = v;
                }
                if v > maxs[g] {
                    maxs[g] = v;
                }
            }
        }
        for g in 0..groups {
            let range = clip * (maxs[g] - mins[g]);
            if range == F::zero() {
                scales[g] = F::one();
                zero_points[g] = mins[g];
            } else {
                scales[g] = range / levels;
                zero_points[g] = mins[g];
            }
        }
        let top = (1i64 << cfg.bits) - 1;
        let mut codes = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                let g = group_of(r, c, cfg.granularity);
                let q = ((x[(r, c)] - zero_points[g]) / scales[g]).round();
                let q = q.to_f64().expect("rounded code fits f64") as i64;
                codes.push(q.clamp(0, top) as i32);
            }
        }
        Ok(QuantizedTensor {
            codes,
            scales,
            zero_points,
            config: *cfg,
            rows,
            cols,
        })
    }
}

/// Reconstruct reals from codes: code·scale (+ zero point when asymmetric).
pub fn dequantize<F: Scalar>(q: &QuantizedTensor<F>) -> DenseMatrix<F> {
    let (rows, cols) = q.shape();
    DenseMatrix::from_fn(rows, cols, |r, c| {
        let g = q.group_of(r, c);
        let code = F::from_f64_lossy(f64::from(q.codes[r * cols + c]));
        if q.config.symmetric {
            code * q.scales[g]
        } else {
            code * q.scales[g] + q.zero_points[g]
        }
    })
}

/// Quantize-dequantize in one step; the fake-quant operator.
pub fn fake_quantize<F: Scalar>(
    x: &DenseMatrix<F>,
    cfg: &QuantConfig,
) -> Result<DenseMatrix<F>, QuantError> {
    Ok(dequantize(&quantize(x, cfg)?))
}

/// Mean squared dequantization error over all entries.
pub fn quant_mse<F: Scalar>(x: &DenseMatrix<F>, cfg: &QuantConfig) -> Result<F, QuantError> {
    let deq = fake_quantize(x, cfg)?;
    let n = F::from_f64_lossy((x.rows() * x.cols()) as f64);
    let sum = x
        .data()
        .iter()
        .zip(deq.data().iter())
        .fold(F::zero(), |acc, (&a, &b)| {
            let d = a - b;
            acc + d * d
        });
    Ok(sum / n)
}

/// Fraction of quantization levels occupied by at least one code, averaged
/// over groups. Low utilization means outlier-stretched scales.
pub fn space_utilization<F: Scalar>(
    x: &DenseMatrix<F>,
    cfg: &QuantConfig,
) -> Result<f64, QuantError> {
    let q = quantize(x, cfg)?;
    let (rows, cols) = q.shape();
    let groups = group_count(rows, cols, cfg.granularity);
    let levels = cfg.level_count();
    let offset = if cfg.symmetric {
        (1i32 << (cfg.bits - 1)) - 1
    } else {
        0
    };
    let mut occupied = vec![vec![false; levels]; groups];
    for r in 0..rows {
        for c in 0..cols {
            let g = group_of(r, c, cfg.granularity);
            let idx = (q.codes[r * cols + c] + offset) as usize;
            occupied[g][idx] = true;
        }
    }
    let total: usize = occupied
        .iter()
        .map(|g| g.iter().filter(|&&b| b).count())
        .sum();
    Ok(total as f64 / (groups * levels) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeededRng;

    type M = DenseMatrix<f64>;

    #[test]
    fn zeros_quantize_to_zero() {
        let x = M::zeros(3, 4);
        let q = quantize(&x, &QuantConfig::default()).unwrap();
        assert!(q.codes().iter().all(|&c| c == 0));
        assert_eq!(q.scales(), &[1.0]);
        assert_eq!(dequantize(&q), x);
    }

    #[test]
    fn four_bit_scale_one_example() {
        // Max magnitude 7 with 4 bits gives scale exactly 1; 3.4 rounds to 3.
        let x = M::from_rows(&[vec![7.0, 3.4, -7.0, 0.6]]);
        let q = quantize(&x, &QuantConfig::default()).unwrap();
        assert_eq!(q.scales(), &[1.0]);
        assert_eq!(q.codes(), &[7, 3, -7, 1]);
        let deq = dequantize(&q);
        assert_eq!(deq.data()[1], 3.0);
    }

    #[test]
    fn rounding_is_half_away_from_zero() {
        let x = M::from_rows(&[vec![7.0, 3.5, -3.5, 2.5]]);
        let q = quantize(&x, &QuantConfig::default()).unwrap();
        assert_eq!(q.codes(), &[7, 4, -4, 3]);
    }

    #[test]
    fn error_bounded_by_half_scale() {
        let mut rng = SeededRng::new(77);
        let x = M::gaussian(16, 16, &mut rng);
        for granularity in [
            Granularity::PerTensor,
            Granularity::PerRow,
            Granularity::PerColumn,
        ] {
            let cfg = QuantConfig {
                granularity,
                ..QuantConfig::default()
            };
            let q = quantize(&x, &cfg).unwrap();
            let deq = dequantize(&q);
            for r in 0..16 {
                for c in 0..16 {
                    let g = q.group_of(r, c);
                    let bound = q.scales()[g] / 2.0 + 1e-12;
                    assert!(
                        (x[(r, c)] - deq[(r, c)]).abs() <= bound,
                        "granularity {granularity:?} entry ({r},{c})"
                    );
                }
            }
        }
    }

    #[test]
    fn round_trip_error_matches_scalar_oracle() {
        let mut rng = SeededRng::new(78);
        let x = M::gaussian(8, 8, &mut rng);
        let cfg = QuantConfig::default();
        let q = quantize(&x, &cfg).unwrap();
        let deq = dequantize(&q);
        let scale = q.scales()[0];
        for (xv, dv) in x.data().iter().zip(deq.data().iter()) {
            let expect = scale * (xv / scale).round();
            // clamp never binds for the max-abs derived scale at clip 1
            assert!((dv - expect).abs() < 1e-15);
        }
    }

    #[test]
    fn grid_values_recover_exactly() {
        let scale = 0.25;
        let x = M::from_fn(1, 15, |_, c| (c as f64 - 7.0) * scale);
        let q = quantize(&x, &QuantConfig::default()).unwrap();
        let deq = dequantize(&q);
        assert_eq!(x, deq);
    }

    #[test]
    fn saturated_codes_dequantize_to_clip_level() {
        let x = M::from_rows(&[vec![-9.0, 9.0]]);
        let cfg = QuantConfig::default();
        let q = quantize(&x, &cfg).unwrap();
        assert_eq!(q.codes(), &[-7, 7]);
        let deq = dequantize(&q);
        assert!((deq.data()[1] - 9.0).abs() < 1e-12);
    }

    #[test]
    fn quantization_is_idempotent() {
        let mut rng = SeededRng::new(79);
        let x = M::gaussian(12, 12, &mut rng);
        for granularity in [
            Granularity::PerTensor,
            Granularity::PerRow,
            Granularity::PerColumn,
        ] {
            let cfg = QuantConfig {
                granularity,
                ..QuantConfig::default()
            };
            let q1 = quantize(&x, &cfg).unwrap();
            let q2 = quantize(&dequantize(&q1), &cfg).unwrap();
            assert_eq!(q1.codes(), q2.codes());
        }
    }

    #[test]
    fn scaling_covariance() {
        let mut rng = SeededRng::new(80);
        let x = M::gaussian(10, 10, &mut rng);
        let cfg = QuantConfig {
            granularity: Granularity::PerRow,
            ..QuantConfig::default()
        };
        let base = quantize(&x, &cfg).unwrap();
        for alpha in [0.5, 2.0, 4.0, 1.5] {
            let scaled = quantize(&x.scale(alpha), &cfg).unwrap();
            assert_eq!(base.codes(), scaled.codes(), "alpha {alpha}");
            for (s0, s1) in base.scales().iter().zip(scaled.scales().iter()) {
                assert!((s1 - alpha * s0).abs() <= 1e-12 * s1.abs());
            }
        }
    }

    #[test]
    fn asymmetric_round_trip_constant() {
        let x = M::from_fn(2, 3, |_, _| 5.5);
        let cfg = QuantConfig {
            symmetric: false,
            ..QuantConfig::default()
        };
        let q = quantize(&x, &cfg).unwrap();
        assert!(q.codes().iter().all(|&c| c == 0));
        assert_eq!(dequantize(&q), x);
    }

    #[test]
    fn asymmetric_codes_in_range() {
        let mut rng = SeededRng::new(81);
        let x = M::gaussian(8, 8, &mut rng);
        let cfg = QuantConfig {
            symmetric: false,
            bits: 3,
            ..QuantConfig::default()
        };
        let q = quantize(&x, &cfg).unwrap();
        assert!(q.codes().iter().all(|&c| (0..8).contains(&c)));
        let deq = dequantize(&q);
        let bound = q.scales()[0] / 2.0 + 1e-12;
        for (a, b) in x.data().iter().zip(deq.data().iter()) {
            assert!((a - b).abs() <= bound);
        }
    }

    #[test]
    fn mse_zero_on_grid_and_matches_oracle() {
        let grid = M::from_fn(1, 15, |_, c| c as f64 - 7.0);
        assert_eq!(quant_mse(&grid, &QuantConfig::default()).unwrap(), 0.0);

        let c = 0.6;
        let x = M::from_fn(4, 4, |_, _| c);
        // Constant x: scale = c/7, every entry rounds exactly to code 7.
        let mse = quant_mse(&x, &QuantConfig::default()).unwrap();
        assert!(mse.abs() < 1e-28);

        let mut rng = SeededRng::new(82);
        let x = M::gaussian(9, 9, &mut rng);
        let cfg = QuantConfig::default();
        let deq = fake_quantize(&x, &cfg).unwrap();
        let mut acc = 0.0;
        for (a, b) in x.data().iter().zip(deq.data().iter()) {
            acc += (a - b) * (a - b);
        }
        let expect = acc / 81.0;
        assert!((quant_mse(&x, &cfg).unwrap() - expect).abs() < 1e-18);
    }

    #[test]
    fn utilization_full_grid_is_one() {
        let grid = M::from_fn(1, 15, |_, c| c as f64 - 7.0);
        assert_eq!(
            space_utilization(&grid, &QuantConfig::default()).unwrap(),
            1.0
        );
    }

    #[test]
    fn utilization_collapses_under_outlier() {
        let mut x = M::from_fn(1, 64, |_, c| ((c % 5) as f64 - 2.0) * 0.01);
        x[(0, 0)] = 100.0;
        let util = space_utilization(&x, &QuantConfig::default()).unwrap();
        assert!(util <= 3.0 / 15.0, "utilization {util}");
    }

    #[test]
    fn utilization_grows_as_outlier_shrinks() {
        let mut rng = SeededRng::new(83);
        let bulk = M::gaussian(4, 64, &mut rng);
        let mut last = 0.0;
        for beta in [100.0, 50.0, 25.0, 12.0, 6.0, 3.0] {
            let mut x = bulk.clone();
            x[(0, 0)] = beta;
            let util = space_utilization(&x, &QuantConfig::default()).unwrap();
            assert!(util >= last - 1e-12, "beta {beta}: {util} < {last}");
            last = util;
        }
    }

    #[test]
    fn rejects_bad_configs_and_inputs() {
        let x = M::zeros(1, 1);
        let bad_bits = QuantConfig {
            bits: 9,
            ..QuantConfig::default()
        };
        assert!(matches!(
            quantize(&x, &bad_bits),
            Err(QuantError::BadBits(9))
        ));
        let bad_clip = QuantConfig {
            clip_ratio: 0.0,
            ..QuantConfig::default()
        };
        assert!(matches!(
            quantize(&x, &bad_clip),
            Err(QuantError::BadClipRatio(_))
        ));
        let nan = M::from_vec(1, 1, vec![f64::NAN]);
        assert!(matches!(
            quantize(&nan, &QuantConfig::default()),
            Err(QuantError::NonFiniteInput)
        ));
    }
}
