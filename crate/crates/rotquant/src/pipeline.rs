//! End-to-end rotation pipeline: factorize the width, calibrate the
//! alignment and uniformity rotations per Kronecker mode in a single pass
//! over the activations, apply the fused rotation to activations and
//! weights, quantize, and report quality metrics per rotation mode.
//!
//! The full rotation is R = (R₁ᵁ·Rᴬ)ᵀ ⊗ (H·R₂ᵁ): the alignment rotation Rᴬ
//! and mode-1 uniformity rotation R₁ᵁ act on the n₁ side, the Hadamard and
//! the mode-2 uniformity rotation on the n₂ side. In the row convention
//! used throughout, the transposed left factor composes as
//! (alignment, then uniformity) acting on mode-1 row vectors.
//!
//! Calibration never invokes the quantizer: the rotation is a fixed linear
//! map chosen from activation statistics alone, with no feedback loop
//! (structurally: `calibrate` takes no quantization config at all).

use std::collections::BTreeMap;
use std::fmt;
use std::time::Instant;

use serde::Serialize;

use crate::art::{art_iterate, ArtError, ArtPlan, BulkMode};
use crate::hadamard::hadamard;
use crate::kron::{factorize, fused_apply_batch_threaded, FactorPair, KronError, KronPlan};
use crate::matrix::{random_orthogonal, DenseMatrix, MatrixError};
use crate::quant::{
    fake_quantize, quant_mse, space_utilization, Granularity, QuantConfig, QuantError,
};
use crate::rng::SeededRng;
use crate::scalar::Scalar;
use crate::urt::{build_urt, representative_profile, UrtError, UrtPlan};

#[derive(Debug)]
pub enum PipelineError {
    /// The pipeline needs a factorizable width of at least 4.
    WidthTooSmall(usize),
    /// All-zero activations cannot be calibrated.
    ZeroActivations,
    /// Input width does not match the calibrated plan.
    Shape {
        expected: usize,
        got: usize,
    },
    /// Weight and activation widths disagree.
    WidthMismatch {
        activations: usize,
        weights: usize,
    },
    Art(ArtError),
    Urt(UrtError),
    Kron(KronError),
    Quant(QuantError),
    Matrix(MatrixError),
}

impl fmt::Display for PipelineError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::WidthTooSmall(n) => write!(f, "pipeline needs width n >= 4, got {n}"),
            Self::ZeroActivations => write!(f, "cannot calibrate on all-zero activations"),
            Self::Shape { expected, got } => {
                write!(f, "input width {got} does not match plan width {expected}")
            }
            Self::WidthMismatch {
                activations,
                weights,
            } => write!(
                f,
                "activation width {activations} and weight width {weights} disagree"
            ),
            Self::Art(e) => write!(f, "{e}"),
            Self::Urt(e) => write!(f, "{e}"),
            Self::Kron(e) => write!(f, "{e}"),
            Self::Quant(e) => write!(f, "{e}"),
            Self::Matrix(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for PipelineError {}

impl From<ArtError> for PipelineError {
    fn from(e: ArtError) -> Self {
        match e {
            ArtError::ZeroActivations => Self::ZeroActivations,
            other => Self::Art(other),
        }
    }
}

impl From<UrtError> for PipelineError {
    fn from(e: UrtError) -> Self {
        match e {
            UrtError::ZeroVector => Self::ZeroActivations,
            other => Self::Urt(other),
        }
    }
}

impl From<KronError> for PipelineError {
    fn from(e: KronError) -> Self {
        Self::Kron(e)
    }
}

impl From<QuantError> for PipelineError {
    fn from(e: QuantError) -> Self {
        Self::Quant(e)
    }
}

impl From<MatrixError> for PipelineError {
    fn from(e: MatrixError) -> Self {
        Self::Matrix(e)
    }
}

/// Which rotation components are active. Every mode except `Identity`
/// keeps the Hadamard on the n₂ side; the alignment and uniformity
/// rotations toggle around it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub enum RotationMode {
    /// No rotation at all; the unrotated baseline.
    Identity,
    /// Hadamard only: both alignment and uniformity disabled.
    Hadamard,
    /// Alignment rotation plus Hadamard.
    Art,
    /// Uniformity rotations (both modes) plus Hadamard.
    Urt,
    /// The full construction.
    ArtUrt,
}

impl RotationMode {
    pub const ALL: [RotationMode; 5] = [
        RotationMode::Identity,
        RotationMode::Hadamard,
        RotationMode::Art,
        RotationMode::Urt,
        RotationMode::ArtUrt,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::Identity => "identity",
            Self::Hadamard => "hadamard",
            Self::Art => "art",
            Self::Urt => "urt",
            Self::ArtUrt => "art-urt",
        }
    }

    pub fn parse(token: &str) -> Option<Self> {
        match token.trim().to_ascii_lowercase().as_str() {
            "identity" => Some(Self::Identity),
            "hadamard" => Some(Self::Hadamard),
            "art" => Some(Self::Art),
            "urt" => Some(Self::Urt),
            "art-urt" | "art_urt" | "art+urt" => Some(Self::ArtUrt),
            _ => None,
        }
    }

    fn uses_art(self) -> bool {
        matches!(self, Self::Art | Self::ArtUrt)
    }

    fn uses_urt(self) -> bool {
        matches!(self, Self::Urt | Self::ArtUrt)
    }

    fn uses_hadamard(self) -> bool {
        !matches!(self, Self::Identity)
    }
}

impl fmt::Display for RotationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct CalibrateOptions {
    /// Successive alignment passes on the mode-1 statistics.
    pub art_passes: usize,
    pub bulk: BulkMode,
    /// Worker threads for the batched rotation applies.
    pub threads: usize,
}

impl Default for CalibrateOptions {
    fn default() -> Self {
        Self {
            art_passes: 1,
            bulk: BulkMode::Random,
            threads: 1,
        }
    }
}

/// Calibrated rotation: component plans plus the compiled Kronecker factor
/// pair actually used to apply it.
#[derive(Debug, Clone, Serialize)]
pub struct RotationPlan<F> {
    mode: RotationMode,
    factors: FactorPair,
    art_plans: Vec<ArtPlan<F>>,
    urt1: Option<UrtPlan<F>>,
    urt2: Option<UrtPlan<F>>,
    /// True when the n₂ side carries a Sylvester Hadamard; false for the
    /// identity mode or when the width forced the random-orthogonal
    /// substitute.
    hadamard_on_right: bool,
    /// Set when n₂ is not a power of two and a seeded random orthogonal
    /// block stands in for the Hadamard.
    hadamard_replaced: bool,
    /// Set when n is prime: the n₁ side is the 1×1 identity and the whole
    /// rotation is a single dense block.
    degenerate: bool,
    kron: KronPlan<F>,
}

impl<F: Scalar> RotationPlan<F> {
    pub fn mode(&self) -> RotationMode {
        self.mode
    }

    pub fn factors(&self) -> FactorPair {
        self.factors
    }

    pub fn width(&self) -> usize {
        self.factors.n()
    }

    pub fn kron(&self) -> &KronPlan<F> {
        &self.kron
    }

    pub fn art_plans(&self) -> &[ArtPlan<F>] {
        &self.art_plans
    }

    pub fn urt1(&self) -> Option<&UrtPlan<F>> {
        self.urt1.as_ref()
    }

    pub fn urt2(&self) -> Option<&UrtPlan<F>> {
        self.urt2.as_ref()
    }

    pub fn hadamard_replaced(&self) -> bool {
        self.hadamard_replaced
    }

    pub fn is_degenerate(&self) -> bool {
        self.degenerate
    }

    /// Explicit n×n rotation; intended for small widths and oracles.
    pub fn materialize(&self) -> DenseMatrix<F> {
        self.kron.materialize()
    }

    /// Stable JSON encoding of the full plan; byte-identical for identical
    /// (input, seed) calibrations.
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("plan serializes")
    }
}

/// Mode-1 view: every n₂-strided column of every reshaped row, stacked into
/// a (T·n₂) × n₁ matrix whose rows are the vectors the left factor acts on.
fn mode1_view<F: Scalar>(x: &DenseMatrix<F>, factors: FactorPair) -> DenseMatrix<F> {
    let (t, _) = x.shape();
    let (n1, n2) = (factors.n1, factors.n2);
    let mut view = DenseMatrix::zeros(t * n2, n1);
    for row in 0..t {
        for j in 0..n2 {
            for i in 0..n1 {
                view[(row * n2 + j, i)] = x[(row, i * n2 + j)];
            }
        }
    }
    view
}

/// Mode-2 view: the row-major reshape itself, (T·n₁) × n₂.
fn mode2_view<F: Scalar>(x: &DenseMatrix<F>, factors: FactorPair) -> DenseMatrix<F> {
    let (t, _) = x.shape();
    x.clone().reshaped(t * factors.n1, factors.n2)
}

/// Calibrate the full rotation (alignment + uniformity + Hadamard) from one
/// pass over the activations.
pub fn calibrate<F: Scalar>(
    x: &DenseMatrix<F>,
    seed: u64,
    opts: &CalibrateOptions,
) -> Result<RotationPlan<F>, PipelineError> {
    calibrate_mode(x, seed, opts, RotationMode::ArtUrt)
}

/// Calibrate with a chosen subset of rotation components. Component
/// randomness comes from fixed sub-streams of `seed`, so a component shared
/// by two modes is identical in both.
pub fn calibrate_mode<F: Scalar>(
    x: &DenseMatrix<F>,
    seed: u64,
    opts: &CalibrateOptions,
    mode: RotationMode,
) -> Result<RotationPlan<F>, PipelineError> {
    let n = x.cols();
    if n < 4 {
        return Err(PipelineError::WidthTooSmall(n));
    }
    // A tokenless batch carries no statistics; same failure as all zeros.
    if x.rows() == 0 || x.max_abs() == F::zero() {
        return Err(PipelineError::ZeroActivations);
    }

    let factors = factorize(n)?;
    let (n1, n2) = (factors.n1, factors.n2);

    let mut base = SeededRng::new(seed);
    let mut rng_art = base.split();
    let mut rng_urt1 = base.split();
    let mut rng_urt2 = base.split();
    let mut rng_fallback = base.split();

    // Left factor (n₁ side): alignment first, then uniformity, both in the
    // row convention on mode-1 vectors.
    let mut art_plans = Vec::new();
    let mut urt1 = None;
    let mut left = DenseMatrix::<F>::identity(n1);
    if n1 >= 2 {
        let mut view1 = mode1_view(x, factors);
        if mode.uses_art() {
            let iteration = art_iterate(&view1, opts.art_passes.max(1), &mut rng_art, opts.bulk)?;
            for plan in &iteration.plans {
                left = left.matmul(&plan.materialize())?;
            }
            view1 = iteration.rotated;
            art_plans = iteration.plans;
        }
        if mode.uses_urt() {
            let profile = representative_profile(&view1);
            let plan = build_urt(&profile, &mut rng_urt1)?;
            left = left.matmul(&plan.materialize())?;
            urt1 = Some(plan);
        }
    }

    // Right factor (n₂ side): Hadamard (or its substitute), then uniformity.
    let mut right = DenseMatrix::<F>::identity(n2);
    let mut hadamard_on_right = false;
    let mut hadamard_replaced = false;
    if mode.uses_hadamard() {
        if factors.hadamard_side_pow2() {
            right = hadamard(n2).expect("n2 checked to be a power of two");
            hadamard_on_right = true;
        } else {
            right = random_orthogonal(n2, &mut rng_fallback)?;
            hadamard_replaced = true;
        }
    }
    let mut urt2 = None;
    if mode.uses_urt() {
        let view2 = mode2_view(x, factors).matmul(&right)?;
        let profile = representative_profile(&view2);
        let plan = build_urt(&profile, &mut rng_urt2)?;
        right = right.matmul(&plan.materialize())?;
        urt2 = Some(plan);
    }

    let kron = KronPlan::new(left, right)?;
    Ok(RotationPlan {
        mode,
        factors,
        art_plans,
        urt1,
        urt2,
        hadamard_on_right,
        hadamard_replaced,
        degenerate: factors.is_degenerate(),
        kron,
    })
}

fn check_width<F: Scalar>(m: &DenseMatrix<F>, plan: &RotationPlan<F>) -> Result<(), PipelineError> {
    if m.cols() != plan.width() {
        return Err(PipelineError::Shape {
            expected: plan.width(),
            got: m.cols(),
        });
    }
    Ok(())
}

/// Rotate activations: every row is mapped through the fused Kronecker apply.
pub fn apply_to_activations<F: Scalar>(
    x: &DenseMatrix<F>,
    plan: &RotationPlan<F>,
    threads: usize,
) -> Result<DenseMatrix<F>, PipelineError> {
    check_width(x, plan)?;
    Ok(fused_apply_batch_threaded(x, &plan.kron, threads)?)
}

/// Rotate weights (out_channels × n): the same row action on the input
/// dimension, so (XR)·(WR)ᵀ = X·Wᵀ. Output channels stay untouched.
pub fn apply_to_weights<F: Scalar>(
    w: &DenseMatrix<F>,
    plan: &RotationPlan<F>,
    threads: usize,
) -> Result<DenseMatrix<F>, PipelineError> {
    check_width(w, plan)?;
    Ok(fused_apply_batch_threaded(w, &plan.kron, threads)?)
}

/// Undo the rotation.
pub fn apply_inverse<F: Scalar>(
    x: &DenseMatrix<F>,
    plan: &RotationPlan<F>,
    threads: usize,
) -> Result<DenseMatrix<F>, PipelineError> {
    check_width(x, plan)?;
    Ok(fused_apply_batch_threaded(
        x,
        &plan.kron.transposed(),
        threads,
    )?)
}

/// Per-mode quantization quality, all in f64 for reporting.
#[derive(Debug, Clone, Serialize)]
pub struct ModeReport {
    /// ‖(XR)(WR)ᵀ − XWᵀ‖_F / ‖XWᵀ‖_F for this mode's rotation.
    pub invariance_residual: f64,
    pub x_quant_mse: f64,
    pub w_quant_mse: f64,
    /// Mean squared error of Q(XR)·Q(WR)ᵀ against the exact product.
    pub product_quant_mse: f64,
    pub x_space_utilization: f64,
    pub w_space_utilization: f64,
    pub x_max_abs: f64,
    /// Per-channel max |value| of the rotated activations.
    pub x_channel_max_abs: Vec<f64>,
    pub hadamard_replaced: bool,
    pub degenerate_factorization: bool,
}

/// Unrotated reference statistics.
#[derive(Debug, Clone, Serialize)]
pub struct BaselineStats {
    pub x_quant_mse: f64,
    pub w_quant_mse: f64,
    pub product_quant_mse: f64,
    pub x_space_utilization: f64,
    pub w_space_utilization: f64,
    pub x_max_abs: f64,
    pub x_channel_max_abs: Vec<f64>,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct TimingsNs {
    pub calibrate_ns: u128,
    pub apply_ns: u128,
    pub quantize_ns: u128,
}

/// Full report over the requested rotation modes.
#[derive(Debug, Clone, Serialize)]
pub struct QuantReport {
    pub tokens: usize,
    pub width: usize,
    pub out_channels: usize,
    pub bits: u32,
    pub seed: u64,
    pub factors: FactorPair,
    pub pre: BaselineStats,
    pub modes: BTreeMap<String, ModeReport>,
    /// Worst invariance residual across modes.
    pub invariance_residual: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub timings_ns: Option<TimingsNs>,
}

/// Quantization configs the pipeline derives from a base config: per-token
/// (row) scales for activations, per-output-channel (row of W) scales for
/// weights.
fn derive_configs(base: &QuantConfig) -> (QuantConfig, QuantConfig) {
    let act = QuantConfig {
        granularity: Granularity::PerRow,
        ..*base
    };
    let weights = QuantConfig {
        granularity: Granularity::PerRow,
        ..*base
    };
    (act, weights)
}

fn to_f64_vec<F: Scalar>(v: &[F]) -> Vec<f64> {
    v.iter().map(|x| x.to_f64().expect("finite")).collect()
}

fn product_mse<F: Scalar>(
    approx: &DenseMatrix<F>,
    exact: &DenseMatrix<F>,
) -> Result<f64, PipelineError> {
    let d = approx.frobenius_distance(exact)?;
    let d = d.to_f64().expect("finite");
    let count = (exact.rows() * exact.cols()) as f64;
    Ok(d * d / count)
}

/// Run the pipeline over `modes`: calibrate, rotate, quantize both sides,
/// and compare the quantized product against the exact one.
pub fn run<F: Scalar>(
    x: &DenseMatrix<F>,
    w: &DenseMatrix<F>,
    base_cfg: &QuantConfig,
    seed: u64,
    opts: &CalibrateOptions,
    modes: &[RotationMode],
) -> Result<QuantReport, PipelineError> {
    if x.cols() != w.cols() {
        return Err(PipelineError::WidthMismatch {
            activations: x.cols(),
            weights: w.cols(),
        });
    }
    if x.rows() == 0 || w.rows() == 0 {
        return Err(PipelineError::ZeroActivations);
    }
    let (act_cfg, w_cfg) = derive_configs(base_cfg);
    let exact = x.matmul(&w.transpose())?;

    let mut calibrate_ns = 0u128;
    let mut apply_ns = 0u128;
    let mut quantize_ns = 0u128;

    let t0 = Instant::now();
    let pre = BaselineStats {
        x_quant_mse: quant_mse(x, &act_cfg)?.to_f64().expect("finite"),
        w_quant_mse: quant_mse(w, &w_cfg)?.to_f64().expect("finite"),
        product_quant_mse: {
            let qx = fake_quantize(x, &act_cfg)?;
            let qw = fake_quantize(w, &w_cfg)?;
            product_mse(&qx.matmul(&qw.transpose())?, &exact)?
        },
        x_space_utilization: space_utilization(x, &act_cfg)?,
        w_space_utilization: space_utilization(w, &w_cfg)?,
        x_max_abs: x.max_abs().to_f64().expect("finite"),
        x_channel_max_abs: to_f64_vec(&x.column_max_abs()),
    };
    quantize_ns += t0.elapsed().as_nanos();

    let mut mode_reports = BTreeMap::new();
    let mut worst_residual = 0.0f64;
    for &mode in modes {
        let t0 = Instant::now();
        let plan = calibrate_mode(x, seed, opts, mode)?;
        calibrate_ns += t0.elapsed().as_nanos();

        let t0 = Instant::now();
        let xr = apply_to_activations(x, &plan, opts.threads)?;
        let wr = apply_to_weights(w, &plan, opts.threads)?;
        apply_ns += t0.elapsed().as_nanos();

        let residual = {
            let product = xr.matmul(&wr.transpose())?;
            let num = product
                .frobenius_distance(&exact)?
                .to_f64()
                .expect("finite");
            let den = exact.frobenius_norm().to_f64().expect("finite");
            if den == 0.0 {
                num
            } else {
                num / den
            }
        };
        worst_residual = worst_residual.max(residual);

        let t0 = Instant::now();
        let qx = fake_quantize(&xr, &act_cfg)?;
        let qw = fake_quantize(&wr, &w_cfg)?;
        let product_quant_mse = product_mse(&qx.matmul(&qw.transpose())?, &exact)?;
        let report = ModeReport {
            invariance_residual: residual,
            x_quant_mse: quant_mse(&xr, &act_cfg)?.to_f64().expect("finite"),
            w_quant_mse: quant_mse(&wr, &w_cfg)?.to_f64().expect("finite"),
            product_quant_mse,
            x_space_utilization: space_utilization(&xr, &act_cfg)?,
            w_space_utilization: space_utilization(&wr, &w_cfg)?,
            x_max_abs: xr.max_abs().to_f64().expect("finite"),
            x_channel_max_abs: to_f64_vec(&xr.column_max_abs()),
            hadamard_replaced: plan.hadamard_replaced(),
            degenerate_factorization: plan.is_degenerate(),
        };
        quantize_ns += t0.elapsed().as_nanos();
        mode_reports.insert(mode.name().to_string(), report);
    }

    Ok(QuantReport {
        tokens: x.rows(),
        width: x.cols(),
        out_channels: w.rows(),
        bits: base_cfg.bits,
        seed,
        factors: factorize(x.cols())?,
        pre,
        modes: mode_reports,
        invariance_residual: worst_residual,
        timings_ns: Some(TimingsNs {
            calibrate_ns,
            apply_ns,
            quantize_ns,
        }),
    })
}
