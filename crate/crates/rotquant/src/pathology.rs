//! Cayley SGD simulation on the orthogonal group, contrasting a smooth
//! control objective (which converges) with the straight-through-estimator
//! surrogate gradient of a quantized loss (which hits a gradient-norm floor
//! and oscillates).
//!
//! The quantized loss is L(R) = ‖Q(XR)·(RᵀWᵀ) − XWᵀ‖²_F / (T·C) with Q the
//! round-to-nearest fake quantizer; its STE gradient passes identity through
//! the rounding step with the scale detached. Because (XR)(RᵀWᵀ) = XWᵀ for
//! orthogonal R, the residual is pure quantization error and never vanishes.
//! The smooth control replaces the rotated pair with a one-sided objective
//! L(R) = ‖XRWᵀ − XWᵀ‖²_F / (T·C), a plain smooth problem on the manifold
//! with minimum value zero at the identity.

use std::fmt;

use serde::Serialize;

use crate::matrix::{orthonormalize, random_orthogonal, DenseMatrix};
use crate::quant::{dequantize, quantize, Granularity, QuantConfig};
use crate::rng::SeededRng;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum LrSchedule {
    Constant,
    /// lr_t = lr·(1 − t/steps); stays positive through the final step.
    LinearDecay,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct SimConfig {
    /// Rotation dimension.
    pub n: usize,
    /// Token count of the synthetic activation batch.
    pub tokens: usize,
    /// Weight output channels. Kept at 4n by default so the rectangular
    /// Gaussian factors are well conditioned and the smooth control has a
    /// healthy worst-case curvature; a square Gaussian weight would leave
    /// near-singular directions that converge too slowly to act as a
    /// control.
    pub out_channels: usize,
    pub steps: usize,
    pub lr: f64,
    pub lr_schedule: LrSchedule,
    pub bits: u32,
    /// True: quantizer in the loss, STE surrogate gradient.
    /// False: the smooth control objective with its analytic gradient.
    pub quantize_in_loss: bool,
    /// Differentiate through the per-row scale instead of detaching it.
    pub differentiate_scale: bool,
    pub seed: u64,
}

impl SimConfig {
    pub fn new(n: usize, tokens: usize, steps: usize) -> Self {
        Self {
            n,
            tokens,
            out_channels: 4 * n,
            steps,
            lr: 0.1,
            lr_schedule: LrSchedule::LinearDecay,
            bits: 4,
            quantize_in_loss: true,
            differentiate_scale: false,
            seed: 1,
        }
    }

    fn act_quant(&self) -> QuantConfig {
        QuantConfig {
            bits: self.bits,
            symmetric: true,
            granularity: Granularity::PerRow,
            clip_ratio: 1.0,
        }
    }

    pub fn lr_at(&self, step: usize) -> f64 {
        match self.lr_schedule {
            LrSchedule::Constant => self.lr,
            LrSchedule::LinearDecay => self.lr * (1.0 - step as f64 / self.steps as f64),
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct TraceRecord {
    pub step: usize,
    pub loss: f64,
    pub riemannian_grad_norm: f64,
}

#[derive(Debug)]
pub enum SimError {
    /// (I + lr/2·A) became singular even after halving the step.
    SingularCayleyStep,
}

impl fmt::Display for SimError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::SingularCayleyStep => write!(f, "Cayley update singular after lr retry"),
        }
    }
}

impl std::error::Error for SimError {}

/// The fixed problem instance: Gaussian activations and weights plus the
/// exact product target. With the target built from the same weights, the
/// identity rotation is a global minimizer of the smooth control (loss 0).
#[derive(Debug, Clone)]
pub struct SimInstance<F> {
    pub x: DenseMatrix<F>,
    pub w: DenseMatrix<F>,
    pub target: DenseMatrix<F>,
}

impl<F: Scalar> SimInstance<F> {
    pub fn generate(cfg: &SimConfig, rng: &mut SeededRng) -> Self {
        let x = DenseMatrix::gaussian(cfg.tokens, cfg.n, rng);
        let w = DenseMatrix::gaussian(cfg.out_channels, cfg.n, rng);
        let target = x.matmul(&w.transpose()).expect("widths agree");
        Self { x, w, target }
    }
}

/// Loss and Euclidean gradient at `r`.
///
/// Smooth mode: analytic gradient of the control objective. STE mode:
/// forward pass keeps the quantized values, backward treats rounding as
/// identity (scale detached unless `differentiate_scale`).
pub fn ste_loss_and_grad<F: Scalar>(
    r: &DenseMatrix<F>,
    instance: &SimInstance<F>,
    cfg: &SimConfig,
) -> (F, DenseMatrix<F>) {
    let (x, w, y) = (&instance.x, &instance.w, &instance.target);
    let count = F::from_f64_lossy((y.rows() * y.cols()) as f64);
    let two = F::from_f64_lossy(2.0);

    if !cfg.quantize_in_loss {
        // L = ‖XRWᵀ − Y‖² / (T·C); ∇ = 2·Xᵀ(XRWᵀ − Y)·W / (T·C)
        let xr = x.matmul(r).expect("widths agree");
        let diff = xr
            .matmul(&w.transpose())
            .expect("widths agree")
            .sub(y)
            .expect("shapes agree");
        let loss = {
            let f = diff.frobenius_norm();
            f * f / count
        };
        let grad = x
            .transpose()
            .matmul(&diff)
            .expect("widths agree")
            .matmul(w)
            .expect("widths agree")
            .scale(two / count);
        return (loss, grad);
    }

    let act_cfg = cfg.act_quant();
    let a = x.matmul(r).expect("widths agree");
    let q = quantize(&a, &act_cfg).expect("finite activations");
    let a_bar = dequantize(&q);
    let b = r.transpose().matmul(&w.transpose()).expect("widths agree");
    let diff = a_bar
        .matmul(&b)
        .expect("widths agree")
        .sub(y)
        .expect("shapes agree");
    let loss = {
        let f = diff.frobenius_norm();
        f * f / count
    };

    // Backward. dL/dĀ = 2·D·Bᵀ flows through Q; dL/dB flows into Rᵀ.
    let mut grad_a = diff.matmul(&b.transpose()).expect("widths agree");
    if cfg.differentiate_scale {
        // Per-row scale s = max|row|/qmax: Q(a) = s·round(a/s). Passing the
        // rounding through as identity but keeping s attached adds
        // (code − a/s)·ds/da, and ds/da is supported on the row's argmax.
        let qmax = F::from_f64_lossy(((1i64 << (cfg.bits - 1)) - 1) as f64);
        for t in 0..a.rows() {
            let row = a.row(t);
            let mut m = 0usize;
            for (c, v) in row.iter().enumerate() {
                if v.abs() > row[m].abs() {
                    m = c;
                }
            }
            let scale = q.scales()[t];
            let mut coupling = F::zero();
            for c in 0..a.cols() {
                let code = F::from_f64_lossy(f64::from(q.codes()[t * a.cols() + c]));
                coupling += grad_a[(t, c)] * (code - a[(t, c)] / scale);
            }
            let sign = if row[m] >= F::zero() {
                F::one()
            } else {
                -F::one()
            };
            grad_a[(t, m)] += coupling * sign / qmax;
        }
    }
    let grad_from_a = x.transpose().matmul(&grad_a).expect("widths agree");
    let grad_from_b = w
        .transpose()
        .matmul(&diff.transpose())
        .expect("widths agree")
        .matmul(&a_bar)
        .expect("widths agree");
    let grad = grad_from_a
        .add(&grad_from_b)
        .expect("shapes agree")
        .scale(two / count);
    (loss, grad)
}

/// Skew projection A = G·Rᵀ − R·Gᵀ used by both the Cayley update and the
/// Riemannian gradient norm ‖∇_M L‖ = ‖A‖_F / 2.
pub fn skew_projection<F: Scalar>(r: &DenseMatrix<F>, grad: &DenseMatrix<F>) -> DenseMatrix<F> {
    let grt = grad.matmul(&r.transpose()).expect("square");
    let rgt = r.matmul(&grad.transpose()).expect("square");
    grt.sub(&rgt).expect("shapes agree")
}

pub fn riemannian_grad_norm<F: Scalar>(r: &DenseMatrix<F>, grad: &DenseMatrix<F>) -> F {
    skew_projection(r, grad).frobenius_norm() / F::from_f64_lossy(2.0)
}

/// One Cayley update: r ← (I + lr/2·A)⁻¹ (I − lr/2·A) r with A the skew
/// projection of the gradient. The transform is orthogonal in exact
/// arithmetic; a singular system halves lr once, then errors.
pub fn cayley_step<F: Scalar>(
    r: &DenseMatrix<F>,
    grad: &DenseMatrix<F>,
    lr: F,
) -> Result<DenseMatrix<F>, SimError> {
    let a = skew_projection(r, grad);
    let n = r.rows();
    let identity = DenseMatrix::<F>::identity(n);
    let half = F::from_f64_lossy(0.5);
    let mut try_lr = lr;
    for _ in 0..2 {
        let scaled = a.scale(try_lr * half);
        let plus = identity.add(&scaled).expect("shapes agree");
        let minus = identity.sub(&scaled).expect("shapes agree");
        let rhs = minus.matmul(r).expect("square");
        if let Some(next) = plus.solve(&rhs) {
            return Ok(next);
        }
        try_lr *= half;
    }
    Err(SimError::SingularCayleyStep)
}

#[derive(Debug, Clone, Serialize)]
pub struct SimOutcome {
    pub trace: Vec<TraceRecord>,
    /// Times the trajectory drifted past the orthogonality tolerance and
    /// was re-orthonormalized.
    pub reorthogonalizations: usize,
}

const ORTHO_DRIFT_TOL: f64 = 1e-6;

/// Full simulation: seeded instance, seeded orthogonal start, `steps`
/// Cayley updates under the configured schedule.
pub fn run_simulation<F: Scalar>(cfg: &SimConfig) -> Result<SimOutcome, SimError> {
    let mut rng = SeededRng::new(cfg.seed);
    let instance = SimInstance::<F>::generate(cfg, &mut rng);
    let mut r = random_orthogonal::<F>(cfg.n, &mut rng).expect("n >= 1");
    let mut trace = Vec::with_capacity(cfg.steps);
    let mut reorthogonalizations = 0usize;

    for step in 0..cfg.steps {
        let (loss, grad) = ste_loss_and_grad(&r, &instance, cfg);
        let grad_norm = riemannian_grad_norm(&r, &grad);
        trace.push(TraceRecord {
            step,
            loss: loss.to_f64().expect("finite loss"),
            riemannian_grad_norm: grad_norm.to_f64().expect("finite grad"),
        });
        let lr = F::from_f64_lossy(cfg.lr_at(step));
        r = cayley_step(&r, &grad, lr)?;
        let drift = r.orthogonality_residual().to_f64().expect("finite");
        if drift > ORTHO_DRIFT_TOL {
            r = orthonormalize(&r);
            reorthogonalizations += 1;
        }
    }
    Ok(SimOutcome {
        trace,
        reorthogonalizations,
    })
}

/// Summary statistics the floor/decay checks are stated over.
#[derive(Debug, Clone, Serialize)]
pub struct SimSummary {
    pub steps: usize,
    pub quantize_in_loss: bool,
    pub first100_mean_grad: f64,
    pub final100_mean_grad: f64,
    /// final100 / first100; small for a converging run.
    pub decay_ratio: f64,
    pub median_grad: f64,
    pub final20pct_mean_grad: f64,
    /// final-20% mean / overall median; near 1 for a gradient floor.
    pub floor_ratio: f64,
    pub final_loss: f64,
    pub reorthogonalizations: usize,
}

pub fn summarize(cfg: &SimConfig, outcome: &SimOutcome) -> SimSummary {
    let grads: Vec<f64> = outcome
        .trace
        .iter()
        .map(|t| t.riemannian_grad_norm)
        .collect();
    let steps = grads.len();
    let window = 100.min(steps);
    let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
    let first100 = mean(&grads[..window]);
    let final100 = mean(&grads[steps - window..]);
    let final20 = mean(&grads[steps - (steps / 5).max(1)..]);
    let median = {
        let mut sorted = grads.clone();
        sorted.sort_by(f64::total_cmp);
        sorted[steps / 2]
    };
    SimSummary {
        steps,
        quantize_in_loss: cfg.quantize_in_loss,
        first100_mean_grad: first100,
        final100_mean_grad: final100,
        decay_ratio: if first100 > 0.0 {
            final100 / first100
        } else {
            0.0
        },
        median_grad: median,
        final20pct_mean_grad: final20,
        floor_ratio: if median > 0.0 { final20 / median } else { 0.0 },
        final_loss: outcome.trace.last().map_or(0.0, |t| t.loss),
        reorthogonalizations: outcome.reorthogonalizations,
    }
}

/// Deterministic CSV encoding of a trace: `step,loss,grad_norm`.
pub fn trace_to_csv(trace: &[TraceRecord]) -> String {
    let mut out = String::from("step,loss,grad_norm\n");
    for t in trace {
        out.push_str(&format!(
            "{},{},{}\n",
            t.step, t.loss, t.riemannian_grad_norm
        ));
    }
    out
}

/// Measured gradient jump across one rounding boundary.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct BoundaryProbe {
    /// Straddle width as a fraction of the quantization scale.
    pub relative_width: f64,
    /// ‖∇STE(R⁺) − ∇STE(R⁻)‖_F / ‖R⁺ − R⁻‖_F.
    pub jump_ratio: f64,
}

fn rotate_along<F: Scalar>(r0: &DenseMatrix<F>, skew: &DenseMatrix<F>, s: F) -> DenseMatrix<F> {
    let n = r0.rows();
    let half = F::from_f64_lossy(0.5);
    let identity = DenseMatrix::<F>::identity(n);
    let scaled = skew.scale(s * half);
    let plus = identity.add(&scaled).expect("shapes agree");
    let minus = identity.sub(&scaled).expect("shapes agree");
    plus.solve(&minus.matmul(r0).expect("square"))
        .expect("Cayley path is regular for small s")
}

fn codes_at<F: Scalar>(instance: &SimInstance<F>, cfg: &SimConfig, r: &DenseMatrix<F>) -> Vec<i32> {
    let a = instance.x.matmul(r).expect("widths agree");
    quantize(&a, &cfg.act_quant())
        .expect("finite")
        .codes()
        .to_vec()
}

/// Walk a one-parameter orthogonal path R(s) from a seeded start, locate a
/// parameter where exactly one quantization code flips, and measure the STE
/// gradient jump across that boundary at each requested relative width.
///
/// The jump norm stays near the fixed discontinuity size while the straddle
/// shrinks, so the ratio grows as widths decrease; this is the empirical
/// form of the missing Lipschitz bound.
pub fn boundary_jump_ratios<F: Scalar>(
    cfg: &SimConfig,
    relative_widths: &[f64],
) -> Vec<BoundaryProbe> {
    assert!(
        cfg.quantize_in_loss,
        "boundary probing needs the quantized loss"
    );
    let mut rng = SeededRng::new(cfg.seed);
    let instance = SimInstance::<F>::generate(cfg, &mut rng);
    let r0 = random_orthogonal::<F>(cfg.n, &mut rng).expect("n >= 1");
    let skew = {
        let g = DenseMatrix::<F>::gaussian(cfg.n, cfg.n, &mut rng);
        let s = g.sub(&g.transpose()).expect("shapes agree");
        s.scale(F::one() / s.frobenius_norm())
    };

    // Coarse scan for an interval with exactly one code flip.
    let coarse = F::from_f64_lossy(1e-4);
    let base_codes = codes_at(&instance, cfg, &r0);
    let mut lo = F::zero();
    let mut lo_codes = base_codes;
    let mut bracket = None;
    for k in 1..40_000usize {
        let hi = coarse * F::from_f64_lossy(k as f64);
        let hi_codes = codes_at(&instance, cfg, &rotate_along(&r0, &skew, hi));
        let flips = lo_codes
            .iter()
            .zip(hi_codes.iter())
            .filter(|(a, b)| a != b)
            .count();
        if flips == 1 {
            bracket = Some((lo, hi));
            break;
        }
        lo = hi;
        lo_codes = hi_codes;
    }
    let (mut lo, mut hi) = bracket.expect("a single-flip interval exists along the path");

    // Bisect to the crossing parameter.
    for _ in 0..60 {
        let mid = (lo + hi) * F::from_f64_lossy(0.5);
        let mid_codes = codes_at(&instance, cfg, &rotate_along(&r0, &skew, mid));
        let lo_codes = codes_at(&instance, cfg, &rotate_along(&r0, &skew, lo));
        let flips = lo_codes
            .iter()
            .zip(mid_codes.iter())
            .filter(|(a, b)| a != b)
            .count();
        if flips >= 1 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let s_star = (lo + hi) * F::from_f64_lossy(0.5);

    // Identify the flipped entry and the local movement rate |da/ds|.
    let probe = F::from_f64_lossy(5e-5);
    let c_lo = codes_at(&instance, cfg, &rotate_along(&r0, &skew, s_star - probe));
    let c_hi = codes_at(&instance, cfg, &rotate_along(&r0, &skew, s_star + probe));
    let flipped = c_lo
        .iter()
        .zip(c_hi.iter())
        .position(|(a, b)| a != b)
        .expect("bisected crossing flips an entry");
    let act_cfg = cfg.act_quant();
    let entry_at = |s: F| -> (F, F) {
        let r = rotate_along(&r0, &skew, s);
        let a = instance.x.matmul(&r).expect("widths agree");
        let q = quantize(&a, &act_cfg).expect("finite");
        let row = flipped / cfg.n;
        (a.data()[flipped], q.scales()[row])
    };
    let (a_lo, scale) = entry_at(s_star - probe);
    let (a_hi, _) = entry_at(s_star + probe);
    let rate = ((a_hi - a_lo) / (probe + probe)).abs();

    relative_widths
        .iter()
        .map(|&w| {
            let h = F::from_f64_lossy(w) * scale / (rate + rate);
            let r_minus = rotate_along(&r0, &skew, s_star - h);
            let r_plus = rotate_along(&r0, &skew, s_star + h);
            let (_, g_minus) = ste_loss_and_grad(&r_minus, &instance, cfg);
            let (_, g_plus) = ste_loss_and_grad(&r_plus, &instance, cfg);
            let num = g_plus
                .frobenius_distance(&g_minus)
                .expect("shapes agree")
                .to_f64()
                .expect("finite");
            let den = r_plus
                .frobenius_distance(&r_minus)
                .expect("shapes agree")
                .to_f64()
                .expect("finite");
            BoundaryProbe {
                relative_width: w,
                jump_ratio: num / den,
            }
        })
        .collect()
}
