//! Synthetic calibration data with the two outlier populations the
//! rotations target: a standard Gaussian bulk, a small set of channels
//! scaled up across every token (persistent moderate outliers), and a
//! sparse set of individual entries scaled up massively.

use serde::Serialize;

use crate::matrix::DenseMatrix;
use crate::rng::SeededRng;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SynthConfig {
    pub tokens: usize,
    pub channels: usize,
    /// Fraction of channels scaled by `channel_gain` across all tokens.
    pub outlier_channel_frac: f64,
    pub channel_gain: f64,
    /// Fraction of individual entries scaled by `entry_gain`.
    pub massive_entry_frac: f64,
    pub entry_gain: f64,
}

impl SynthConfig {
    /// The documented default family: σ=1 bulk, 1% of channels ×8,
    /// 0.1% of entries ×100.
    pub fn new(tokens: usize, channels: usize) -> Self {
        Self {
            tokens,
            channels,
            outlier_channel_frac: 0.01,
            channel_gain: 8.0,
            massive_entry_frac: 0.001,
            entry_gain: 100.0,
        }
    }

    /// Gaussian bulk only.
    pub fn benign(tokens: usize, channels: usize) -> Self {
        Self {
            tokens,
            channels,
            outlier_channel_frac: 0.0,
            channel_gain: 1.0,
            massive_entry_frac: 0.0,
            entry_gain: 1.0,
        }
    }
}

fn pick_count(fraction: f64, total: usize) -> usize {
    if fraction <= 0.0 {
        return 0;
    }
    ((fraction * total as f64).round() as usize).clamp(1, total)
}

/// Draw a synthetic activation matrix; a pure function of (config, seed).
pub fn synthetic_activations<F: Scalar>(cfg: &SynthConfig, rng: &mut SeededRng) -> DenseMatrix<F> {
    let mut x = DenseMatrix::<F>::gaussian(cfg.tokens, cfg.channels, rng);

    let boosted_channels = pick_count(cfg.outlier_channel_frac, cfg.channels);
    if boosted_channels > 0 {
        let mut channels: Vec<usize> = (0..cfg.channels).collect();
        rng.shuffle(&mut channels);
        let gain = F::from_f64_lossy(cfg.channel_gain);
        for &c in &channels[..boosted_channels] {
            for t in 0..cfg.tokens {
                x[(t, c)] *= gain;
            }
        }
    }

    let total = cfg.tokens * cfg.channels;
    let massive_entries = pick_count(cfg.massive_entry_frac, total);
    if massive_entries > 0 {
        let gain = F::from_f64_lossy(cfg.entry_gain);
        let mut hit = vec![false; total];
        let mut placed = 0;
        while placed < massive_entries {
            let idx = rng.next_index(total);
            if !hit[idx] {
                hit[idx] = true;
                x.data_mut()[idx] = x.data_mut()[idx] * gain;
                placed += 1;
            }
        }
    }
    x
}

/// Plain Gaussian weight matrix (out_channels × in_channels).
pub fn gaussian_weights<F: Scalar>(
    out_channels: usize,
    in_channels: usize,
    rng: &mut SeededRng,
) -> DenseMatrix<F> {
    DenseMatrix::gaussian(out_channels, in_channels, rng)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_under_seed() {
        let cfg = SynthConfig::new(32, 128);
        let a = synthetic_activations::<f64>(&cfg, &mut SeededRng::new(7));
        let b = synthetic_activations::<f64>(&cfg, &mut SeededRng::new(7));
        assert_eq!(a, b);
    }

    #[test]
    fn outliers_dominate_the_bulk() {
        let cfg = SynthConfig::new(64, 256);
        let x = synthetic_activations::<f64>(&cfg, &mut SeededRng::new(8));
        // A massive entry at gain 100 dwarfs the Gaussian bulk.
        assert!(x.max_abs() > 30.0);
        let benign =
            synthetic_activations::<f64>(&SynthConfig::benign(64, 256), &mut SeededRng::new(8));
        assert!(benign.max_abs() < 6.0);
    }

    #[test]
    fn entry_count_matches_fraction() {
        let cfg = SynthConfig::new(100, 100);
        let bulk_only = SynthConfig {
            massive_entry_frac: 0.0,
            ..cfg
        };
        let with_mo = synthetic_activations::<f64>(&cfg, &mut SeededRng::new(9));
        let without = synthetic_activations::<f64>(&bulk_only, &mut SeededRng::new(9));
        let changed = with_mo
            .data()
            .iter()
            .zip(without.data().iter())
            .filter(|(a, b)| a != b)
            .count();
        // 0.1% of 10_000 entries.
        assert_eq!(changed, 10);
    }
}
