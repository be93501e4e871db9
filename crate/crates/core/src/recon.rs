//! Back-projection and compressed-sensing iterative reconstruction.
//!
//! The iterative solver minimises
//!
//! ```text
//! F(x) = ‖K x − y‖² + α ‖x‖₁ + β TV(x)
//! ```
//!
//! by proximal gradient descent. The smooth part of each step uses the data
//! gradient `2 Re(Kᴴ (K x − y))` plus `β` times the gradient of an
//! ε-smoothed anisotropic TV; the L1 term is handled exactly by soft
//! thresholding.

use std::fmt;
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{PactError, Result};
use crate::forward::{MeasurementMatrix, Samples, SensorData};
use crate::geometry::{ImageField, ImagingGrid};
use crate::parkernel::Kernels;

pub const DEFAULT_ITERATIONS: usize = 90;
pub const DEFAULT_TV_EPSILON: f64 = 1e-3;
pub const DEFAULT_POWER_ITERATIONS: usize = 30;
/// Consecutive objective increases that end a run as diverged.
pub const DIVERGENCE_STREAK: usize = 5;
/// Multiplier applied to the power-iteration estimate of `σ_max²` when the
/// step size is chosen automatically; power iteration approaches from below.
pub const LIPSCHITZ_SAFETY: f64 = 1.2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StepSize {
    Auto,
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconConfig {
    pub alpha: f64,
    pub beta: f64,
    pub iterations: usize,
    pub step: StepSize,
    pub tv_epsilon: f64,
    pub nonneg: bool,
    /// Stop once the relative objective change drops below this; 0 disables.
    pub tolerance: f64,
    pub power_iterations: usize,
    pub seed: u64,
}

impl Default for ReconConfig {
    fn default() -> Self {
        Self {
            alpha: 0.0,
            beta: 0.0,
            iterations: DEFAULT_ITERATIONS,
            step: StepSize::Auto,
            tv_epsilon: DEFAULT_TV_EPSILON,
            nonneg: false,
            tolerance: 0.0,
            power_iterations: DEFAULT_POWER_ITERATIONS,
            seed: 0,
        }
    }
}

impl ReconConfig {
    /// Default configuration with data-scaled regularisation:
    /// `α = 1e-3 ‖2 Kᴴ y‖∞` and `β = 1e-2 α`.
    pub fn calibrated(k: &MeasurementMatrix, y: &SensorData, kernels: Kernels<'_>) -> Result<Self> {
        k.check_data(y)?;
        let peak = k
            .apply_adjoint(y.samples(), kernels)?
            .iter()
            .fold(0.0f64, |m, v| m.max((2.0 * v).abs()));
        let alpha = 1e-3 * peak;
        Ok(Self {
            alpha,
            beta: 1e-2 * alpha,
            ..Self::default()
        })
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(PactError::invalid(format!("alpha must be >= 0, got {}", self.alpha)));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(PactError::invalid(format!("beta must be >= 0, got {}", self.beta)));
        }
        if self.iterations == 0 {
            return Err(PactError::invalid("iterations must be >= 1"));
        }
        if let StepSize::Fixed(h) = self.step {
            if !(h > 0.0 && h.is_finite()) {
                return Err(PactError::invalid(format!("step must be > 0, got {h}")));
            }
        }
        if !(self.tv_epsilon > 0.0 && self.tv_epsilon.is_finite()) {
            return Err(PactError::invalid(format!(
                "tv_epsilon must be > 0, got {}",
                self.tv_epsilon
            )));
        }
        if !(self.tolerance >= 0.0) {
            return Err(PactError::invalid(format!(
                "tolerance must be >= 0, got {}",
                self.tolerance
            )));
        }
        if self.power_iterations == 0 {
            return Err(PactError::invalid("power_iterations must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    MaxIterations,
    Tolerance,
    Divergence,
}

impl fmt::Display for StopReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StopReason::MaxIterations => "max_iterations",
            StopReason::Tolerance => "tolerance",
            StopReason::Divergence => "divergence",
        })
    }
}

#[derive(Debug, Clone)]
pub struct ReconResult {
    pub image: ImageField,
    pub objective_history: Vec<f64>,
    pub data_term_history: Vec<f64>,
    pub l1_history: Vec<f64>,
    pub tv_history: Vec<f64>,
    pub iterations_run: usize,
    pub stopped_by: StopReason,
    pub step: f64,
}

/// Value of `F` and its three parts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Objective {
    pub total: f64,
    pub data: f64,
    pub l1: f64,
    pub tv: f64,
}

impl Objective {
    fn from_parts(data: f64, l1: f64, tv: f64, alpha: f64, beta: f64) -> Self {
        Self {
            total: data + alpha * l1 + beta * tv,
            data,
            l1,
            tv,
        }
    }
}

/// `Re(Kᴴ y)` scaled to unit peak magnitude (left at zero when `Kᴴ y = 0`).
pub fn back_project(k: &MeasurementMatrix, y: &SensorData, kernels: Kernels<'_>) -> Result<ImageField> {
    k.check_data(y)?;
    let values = k.apply_adjoint(y.samples(), kernels)?;
    let grid = image_grid(k)?;
    Ok(ImageField::from_values(grid, values)?.max_normalized())
}

/// Grid of the matrix's image space: its provenance grid when known,
/// otherwise a unit-pitch square grid when the column count is square.
fn image_grid(k: &MeasurementMatrix) -> Result<ImagingGrid> {
    if let Some(p) = k.provenance() {
        return Ok(p.grid);
    }
    let n = (k.cols() as f64).sqrt().round() as usize;
    let (nx, ny) = if n * n == k.cols() { (n, n) } else { (k.cols(), 1) };
    ImagingGrid::new(nx, ny, 1.0, [0.0, 0.0])
}

/// `2 Re(Kᴴ (K x − y))`, the gradient of `‖K x − y‖²`.
pub fn data_gradient(
    k: &MeasurementMatrix,
    x: &ImageField,
    y: &SensorData,
    kernels: Kernels<'_>,
) -> Result<ImageField> {
    k.check_image(x)?;
    k.check_data(y)?;
    let residual = k.apply(x.values(), kernels)?.sub(y.samples())?;
    let g = gradient_from_residual(k, &residual, kernels)?;
    ImageField::from_values(*x.grid(), g)
}

fn gradient_from_residual(k: &MeasurementMatrix, r: &Samples, kernels: Kernels<'_>) -> Result<Vec<f64>> {
    let mut g = k.apply_adjoint(r, kernels)?;
    g.iter_mut().for_each(|v| *v *= 2.0);
    Ok(g)
}

/// Elementwise `sign(v)·max(|v| − λ, 0)`.
pub fn soft_threshold(v: &ImageField, lambda: f64) -> Result<ImageField> {
    if !(lambda >= 0.0) {
        return Err(PactError::invalid(format!("threshold must be >= 0, got {lambda}")));
    }
    let mut out = v.values().to_vec();
    shrink(&mut out, lambda);
    ImageField::from_values(*v.grid(), out)
}

fn shrink(values: &mut [f64], lambda: f64) {
    for v in values {
        let mag = v.abs() - lambda;
        *v = if mag > 0.0 { v.signum() * mag } else { 0.0 };
    }
}

/// Anisotropic TV over forward differences that stay on the grid.
pub fn tv_value(x: &ImageField) -> f64 {
    let (nx, ny) = (x.grid().nx(), x.grid().ny());
    let v = x.values();
    let mut total = 0.0;
    for j in 0..ny {
        let row = &v[j * nx..(j + 1) * nx];
        for i in 0..nx {
            if i + 1 < nx {
                total += (row[i + 1] - row[i]).abs();
            }
            if j + 1 < ny {
                total += (v[(j + 1) * nx + i] - row[i]).abs();
            }
        }
    }
    total
}

/// Gradient of `Σ √(d² + ε²)` over the same forward differences as
/// [`tv_value`].
pub fn tv_gradient(x: &ImageField, epsilon: f64) -> Result<ImageField> {
    if !(epsilon > 0.0) {
        return Err(PactError::invalid(format!("tv epsilon must be > 0, got {epsilon}")));
    }
    let mut g = vec![0.0; x.values().len()];
    accumulate_tv_gradient(x.grid(), x.values(), epsilon, 1.0, &mut g);
    ImageField::from_values(*x.grid(), g)
}

/// Adds `scale · ∇TV_ε(values)` into `out`.
fn accumulate_tv_gradient(grid: &ImagingGrid, v: &[f64], eps: f64, scale: f64, out: &mut [f64]) {
    let (nx, ny) = (grid.nx(), grid.ny());
    let eps2 = eps * eps;
    for j in 0..ny {
        for i in 0..nx {
            let q = j * nx + i;
            if i + 1 < nx {
                let d = v[q + 1] - v[q];
                let w = scale * d / (d * d + eps2).sqrt();
                out[q + 1] += w;
                out[q] -= w;
            }
            if j + 1 < ny {
                let d = v[q + nx] - v[q];
                let w = scale * d / (d * d + eps2).sqrt();
                out[q + nx] += w;
                out[q] -= w;
            }
        }
    }
}

pub fn objective(
    k: &MeasurementMatrix,
    x: &ImageField,
    y: &SensorData,
    config: &ReconConfig,
    kernels: Kernels<'_>,
) -> Result<Objective> {
    k.check_image(x)?;
    k.check_data(y)?;
    let data = k.apply(x.values(), kernels)?.sub(y.samples())?.norm_sqr();
    let l1 = x.values().iter().map(|v| v.abs()).sum();
    Ok(Objective::from_parts(data, l1, tv_value(x), config.alpha, config.beta))
}

/// Power-iteration estimate of the largest eigenvalue of `Re(KᴴK)` over real
/// images, i.e. `σ_max(K)²` for the real-input operator. Deterministic in
/// `seed`.
pub fn estimate_lipschitz(
    k: &MeasurementMatrix,
    iterations: usize,
    seed: u64,
    kernels: Kernels<'_>,
) -> Result<f64> {
    if iterations == 0 {
        return Err(PactError::invalid("power iteration needs >= 1 iteration"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v: Vec<f64> = (0..k.cols()).map(|_| StandardNormal.sample(&mut rng)).collect();
    if !normalize(&mut v) {
        return Ok(0.0);
    }
    let mut estimate = 0.0;
    for _ in 0..iterations {
        let kv = k.apply(&v, kernels)?;
        estimate = kv.norm_sqr();
        let mut w = k.apply_adjoint(&kv, kernels)?;
        if !normalize(&mut w) {
            return Ok(0.0);
        }
        v = w;
    }
    let kv = k.apply(&v, kernels)?;
    Ok(estimate.max(kv.norm_sqr()))
}

fn normalize(v: &mut [f64]) -> bool {
    let n = v.iter().map(|a| a * a).sum::<f64>().sqrt();
    if n == 0.0 || !n.is_finite() {
        return false;
    }
    v.iter_mut().for_each(|a| *a /= n);
    true
}

/// Step `1 / L` with `L = 2 · 1.2 σ̂² + 8 β / ε`: the data-term curvature from
/// a safety-scaled power-iteration estimate plus a bound on the smoothed-TV
/// curvature (`‖D‖² ≤ 8` for the two difference operators, second
/// derivative of `√(d² + ε²)` at most `1/ε`).
pub fn auto_step(sigma_sq: f64, beta: f64, tv_epsilon: f64) -> f64 {
    let lipschitz = 2.0 * LIPSCHITZ_SAFETY * sigma_sq + 8.0 * beta / tv_epsilon;
    if lipschitz > 0.0 {
        1.0 / lipschitz
    } else {
        1.0
    }
}

/// Buckets of solver wall time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    /// Products with `K` and `Kᴴ`: the residual `K x − y`, the gradient
    /// `Kᴴ r`, the initial `Kᴴ y`, and the power-iteration products behind an
    /// automatic step size.
    GradientProducts,
    TvGradient,
    Prox,
    Objective,
}

impl Stage {
    pub const ALL: [Stage; 4] = [
        Stage::GradientProducts,
        Stage::TvGradient,
        Stage::Prox,
        Stage::Objective,
    ];

    pub fn label(&self) -> &'static str {
        match self {
            Stage::GradientProducts => "gradient_products",
            Stage::TvGradient => "tv_gradient",
            Stage::Prox => "prox",
            Stage::Objective => "objective",
        }
    }
}

/// Accumulated time per [`Stage`].
#[derive(Debug, Clone, Default)]
pub struct StageTimes {
    spent: [Duration; 4],
}

impl StageTimes {
    pub fn get(&self, stage: Stage) -> Duration {
        self.spent[stage as usize]
    }

    pub fn total(&self) -> Duration {
        self.spent.iter().sum()
    }

    fn time<R>(this: &mut Option<&mut Self>, stage: Stage, f: impl FnOnce() -> R) -> R {
        match this {
            Some(times) => {
                let start = Instant::now();
                let out = f();
                times.spent[stage as usize] += start.elapsed();
                out
            }
            None => f(),
        }
    }
}

/// Proximal-gradient minimisation of `F` starting from `x = 0`.
///
/// Each iteration takes `x ← prox(x − η (∇data + β ∇TV_ε), η α)`, clamps to
/// `x ≥ 0` when `nonneg` is set, and records `F` at the new iterate. Runs stop
/// after `iterations`, when the relative change of `F` falls below
/// `tolerance`, or when `F` rises [`DIVERGENCE_STREAK`] times in a row or
/// stops being finite (the last finite iterate is returned).
pub fn iterative_reconstruct(
    k: &MeasurementMatrix,
    y: &SensorData,
    config: &ReconConfig,
    kernels: Kernels<'_>,
) -> Result<ReconResult> {
    run_solver(k, y, config, kernels, None)
}

/// [`iterative_reconstruct`] with per-stage timing.
pub fn iterative_reconstruct_profiled(
    k: &MeasurementMatrix,
    y: &SensorData,
    config: &ReconConfig,
    kernels: Kernels<'_>,
    times: &mut StageTimes,
) -> Result<ReconResult> {
    run_solver(k, y, config, kernels, Some(times))
}

fn run_solver(
    k: &MeasurementMatrix,
    y: &SensorData,
    config: &ReconConfig,
    kernels: Kernels<'_>,
    mut times: Option<&mut StageTimes>,
) -> Result<ReconResult> {
    config.validate()?;
    k.check_data(y)?;
    let grid = image_grid(k)?;
    let (alpha, beta) = (config.alpha, config.beta);

    let step = match config.step {
        StepSize::Fixed(h) => h,
        StepSize::Auto => {
            let sigma_sq = StageTimes::time(&mut times, Stage::GradientProducts, || {
                estimate_lipschitz(k, config.power_iterations, config.seed, kernels)
            })?;
            auto_step(sigma_sq, beta, config.tv_epsilon)
        }
    };

    let n = k.cols();
    let mut x = vec![0.0; n];
    // K·0 − y
    let mut residual = y.samples().negated();
    let mut previous = y.samples().norm_sqr();

    let mut result = ReconResult {
        image: ImageField::zeros(grid),
        objective_history: Vec::with_capacity(config.iterations),
        data_term_history: Vec::with_capacity(config.iterations),
        l1_history: Vec::with_capacity(config.iterations),
        tv_history: Vec::with_capacity(config.iterations),
        iterations_run: 0,
        stopped_by: StopReason::MaxIterations,
        step,
    };
    let mut rising = 0usize;

    for _ in 0..config.iterations {
        let mut grad = StageTimes::time(&mut times, Stage::GradientProducts, || {
            gradient_from_residual(k, &residual, kernels)
        })?;
        if beta > 0.0 {
            StageTimes::time(&mut times, Stage::TvGradient, || {
                accumulate_tv_gradient(&grid, &x, config.tv_epsilon, beta, &mut grad)
            });
        }
        let candidate = StageTimes::time(&mut times, Stage::Prox, || {
            let mut v: Vec<f64> = x.iter().zip(&grad).map(|(a, g)| a - step * g).collect();
            shrink(&mut v, step * alpha);
            if config.nonneg {
                v.iter_mut().for_each(|a| *a = a.max(0.0));
            }
            v
        });
        if candidate.iter().any(|v| !v.is_finite()) {
            result.stopped_by = StopReason::Divergence;
            break;
        }
        let next_residual = StageTimes::time(&mut times, Stage::GradientProducts, || {
            k.apply(&candidate, kernels)?.sub(y.samples())
        })?;
        let obj = StageTimes::time(&mut times, Stage::Objective, || {
            let l1 = candidate.iter().map(|v| v.abs()).sum();
            let tv = tv_value(&ImageField::from_values(grid, candidate.clone()).expect("finite"));
            Objective::from_parts(next_residual.norm_sqr(), l1, tv, alpha, beta)
        });
        if !obj.total.is_finite() {
            result.stopped_by = StopReason::Divergence;
            break;
        }

        x = candidate;
        residual = next_residual;
        result.objective_history.push(obj.total);
        result.data_term_history.push(obj.data);
        result.l1_history.push(obj.l1);
        result.tv_history.push(obj.tv);
        result.iterations_run += 1;

        rising = if obj.total > previous { rising + 1 } else { 0 };
        if rising >= DIVERGENCE_STREAK {
            result.stopped_by = StopReason::Divergence;
            break;
        }
        let scale = previous.abs().max(obj.total.abs());
        let change = if scale > 0.0 { (previous - obj.total).abs() / scale } else { 0.0 };
        previous = obj.total;
        if config.tolerance > 0.0 && change < config.tolerance {
            result.stopped_by = StopReason::Tolerance;
            break;
        }
    }

    result.image = ImageField::from_values(grid, x)?;
    Ok(result)
}

fn check_same_shape(a: &ImageField, b: &ImageField) -> Result<()> {
    if !a.grid().same_shape(b.grid()) {
        return Err(PactError::dims(format!(
            "images are {}x{} and {}x{}",
            a.grid().nx(),
            a.grid().ny(),
            b.grid().nx(),
            b.grid().ny()
        )));
    }
    Ok(())
}

fn mse(a: &ImageField, b: &ImageField) -> Result<f64> {
    check_same_shape(a, b)?;
    let n = a.values().len() as f64;
    Ok(a.values()
        .iter()
        .zip(b.values())
        .map(|(u, v)| (u - v).powi(2))
        .sum::<f64>()
        / n)
}

pub fn rmse(a: &ImageField, b: &ImageField) -> Result<f64> {
    Ok(mse(a, b)?.sqrt())
}

/// `10 log₁₀(peak² / mse)`; identical images give `+∞`.
pub fn psnr(a: &ImageField, b: &ImageField, peak: f64) -> Result<f64> {
    let m = mse(a, b)?;
    if m == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / m).log10())
}

/// Pixels whose magnitude exceeds `fraction` of the image peak while the
/// reference is zero there.
pub fn artifact_count(image: &ImageField, truth: &ImageField, fraction: f64) -> Result<usize> {
    check_same_shape(image, truth)?;
    let limit = fraction * image.max_abs();
    Ok(image
        .values()
        .iter()
        .zip(truth.values())
        .filter(|(v, t)| **t == 0.0 && v.abs() > limit)
        .count())
}
