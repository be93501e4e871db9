//! Timing harness: serial versus tiled-parallel matmul, back-projection
//! versus iterative reconstruction, and per-stage solver profiles.
//!
//! Every timed region is repeated and the minimum wall time is kept. Each
//! parallel result is compared with its serial oracle before its time is
//! recorded, and every entry carries a checksum of the result it timed.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::hint::black_box;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{PactError, Result};
use crate::forward::Operator;
use crate::geometry::ImageField;
use crate::parkernel::{
    hardware_workers, matmul_serial, matmul_tiled_parallel, max_relative_deviation, DenseMatrix,
    Kernels, ScalarKind, TileSpec, WorkerPool,
};
use crate::recon::{
    back_project, iterative_reconstruct, iterative_reconstruct_profiled, rmse, ReconConfig,
    ReconResult, Stage, StageTimes,
};
use crate::scene::{Scene, SceneSpec};

pub const DEFAULT_REPETITIONS: usize = 5;
pub const MIN_MATMUL_REPETITIONS: usize = 3;
/// Relative tolerance for accepting a parallel product against the oracle.
pub const MATMUL_TOLERANCE: f64 = 1e-12;
/// Timings shorter than this are too close to timer resolution to compare.
pub const MEASUREMENT_FLOOR: Duration = Duration::from_millis(1);

/// Matmul shapes `(rows, inner, cols)` of the two large scenarios.
pub const MATMUL_PRESETS: [(&str, [usize; 3]); 2] = [
    ("tall", [6144, 16384, 1]),
    ("wide", [16384, 6144, 1]),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchEntry {
    pub label: String,
    pub wall_seconds: f64,
    pub repetitions: usize,
    pub checksum: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Speedup {
    pub label: String,
    pub baseline: String,
    pub candidate: String,
    pub ratio: f64,
    /// Set when either timing is under [`MEASUREMENT_FLOOR`].
    pub below_floor: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Environment {
    pub worker_counts: Vec<usize>,
    pub hardware_workers: usize,
    pub scalar_kind: ScalarKind,
    pub matrix_rows: usize,
    pub matrix_cols: usize,
    pub grid: Option<[usize; 2]>,
    pub sensors: Option<usize>,
    pub samples: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageShare {
    pub category: String,
    pub seconds: f64,
    pub percent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub scenario: String,
    pub entries: Vec<BenchEntry>,
    pub speedups: Vec<Speedup>,
    pub environment: Environment,
    /// Oracle agreement for each parallel entry, keyed by label.
    pub verification: BTreeMap<String, bool>,
    pub metrics: BTreeMap<String, f64>,
    pub breakdown: Vec<StageShare>,
}

impl BenchReport {
    pub fn entry(&self, label: &str) -> Option<&BenchEntry> {
        self.entries.iter().find(|e| e.label == label)
    }

    pub fn speedup(&self, label: &str) -> Option<&Speedup> {
        self.speedups.iter().find(|s| s.label == label)
    }

    pub fn share(&self, category: &str) -> Option<f64> {
        self.breakdown
            .iter()
            .find(|s| s.category == category)
            .map(|s| s.percent)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// The report with every wall time zeroed and timing-derived numbers
    /// removed, leaving the fields that must be identical across runs.
    pub fn without_timings(&self) -> BenchReport {
        let mut out = self.clone();
        out.entries.iter_mut().for_each(|e| e.wall_seconds = 0.0);
        out.speedups.clear();
        out.breakdown.iter_mut().for_each(|s| {
            s.seconds = 0.0;
            s.percent = 0.0;
        });
        out.metrics.retain(|k, _| !k.contains("time"));
        out
    }

    fn push_speedup(&mut self, label: &str, baseline: &str, candidate: &str) {
        let (Some(b), Some(c)) = (self.entry(baseline), self.entry(candidate)) else {
            return;
        };
        let floor = MEASUREMENT_FLOOR.as_secs_f64();
        let speedup = Speedup {
            label: label.to_string(),
            baseline: baseline.to_string(),
            candidate: candidate.to_string(),
            ratio: b.wall_seconds / c.wall_seconds,
            below_floor: b.wall_seconds < floor || c.wall_seconds < floor,
        };
        self.speedups.push(speedup);
    }
}

impl fmt::Display for BenchReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "scenario: {}", self.scenario)?;
        let env = &self.environment;
        let mut shape = format!("{}x{} {}", env.matrix_rows, env.matrix_cols, env.scalar_kind);
        if let Some([nx, ny]) = env.grid {
            let _ = write!(shape, ", grid {nx}x{ny}");
        }
        if let (Some(p), Some(q)) = (env.sensors, env.samples) {
            let _ = write!(shape, ", {p} sensors x {q} samples");
        }
        writeln!(
            f,
            "matrix: {shape}; workers {:?} (host has {})",
            env.worker_counts, env.hardware_workers
        )?;

        let width = self
            .entries
            .iter()
            .map(|e| e.label.len())
            .chain(self.breakdown.iter().map(|s| s.category.len()))
            .chain(self.speedups.iter().map(|s| s.label.len()))
            .max()
            .unwrap_or(0)
            .max(8);

        writeln!(f)?;
        writeln!(f, "{:<width$}  {:>12}  {:>4}  {:>22}  verified", "method", "time (s)", "reps", "checksum")?;
        for e in &self.entries {
            let verified = match self.verification.get(&e.label) {
                Some(true) => "yes",
                Some(false) => "NO",
                None => "-",
            };
            writeln!(
                f,
                "{:<width$}  {:>12.6}  {:>4}  {:>22.15e}  {verified}",
                e.label, e.wall_seconds, e.repetitions, e.checksum
            )?;
        }
        if !self.speedups.is_empty() {
            writeln!(f)?;
            writeln!(f, "{:<width$}  {:>12}", "speedup", "ratio")?;
            for s in &self.speedups {
                let note = if s.below_floor { "  (below measurement floor)" } else { "" };
                writeln!(f, "{:<width$}  {:>12.3}{note}", s.label, s.ratio)?;
            }
        }
        if !self.breakdown.is_empty() {
            writeln!(f)?;
            writeln!(f, "{:<width$}  {:>12}  {:>7}", "category", "time (s)", "share")?;
            for s in &self.breakdown {
                writeln!(f, "{:<width$}  {:>12.6}  {:>6.2}%", s.category, s.seconds, s.percent)?;
            }
        }
        if !self.metrics.is_empty() {
            writeln!(f)?;
            for (k, v) in &self.metrics {
                writeln!(f, "{k} = {v}")?;
            }
        }
        Ok(())
    }
}

/// Runs `op` `reps` times and returns the fastest run with the last result.
fn time_min<R>(reps: usize, mut op: impl FnMut() -> Result<R>) -> Result<(Duration, R)> {
    let mut best = Duration::MAX;
    let mut last = None;
    for _ in 0..reps.max(1) {
        let start = Instant::now();
        let out = black_box(op()?);
        best = best.min(start.elapsed());
        last = Some(out);
    }
    // A zero reading would make ratios meaningless; clamp to one tick.
    Ok((best.max(Duration::from_nanos(1)), last.expect("at least one repetition")))
}

fn entry(label: impl Into<String>, wall: Duration, reps: usize, checksum: f64) -> BenchEntry {
    BenchEntry {
        label: label.into(),
        wall_seconds: wall.as_secs_f64(),
        repetitions: reps.max(1),
        checksum,
    }
}

fn image_checksum(image: &ImageField) -> f64 {
    image.values().iter().sum()
}

fn random_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DenseMatrix<f64> {
    DenseMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
}

fn parallel_label(prefix: &str, workers: usize) -> String {
    format!("{prefix}_w{workers}")
}

/// Times the serial oracle against the tiled parallel product for each
/// worker count, on seeded uniform `[-1, 1)` matrices.
pub fn bench_matmul(
    rows: usize,
    inner: usize,
    cols: usize,
    workers: &[usize],
    reps: usize,
    seed: u64,
) -> Result<BenchReport> {
    if rows == 0 || inner == 0 || cols == 0 {
        return Err(PactError::InvalidArgument(format!(
            "matmul dimensions must be >= 1, got {rows}x{inner}x{cols}"
        )));
    }
    if reps < MIN_MATMUL_REPETITIONS {
        return Err(PactError::InvalidArgument(format!(
            "matmul benchmark needs at least {MIN_MATMUL_REPETITIONS} repetitions, got {reps}"
        )));
    }
    if workers.is_empty() {
        return Err(PactError::InvalidArgument("at least one worker count is required".into()));
    }
    let pools = workers
        .iter()
        .map(|&w| WorkerPool::new(w))
        .collect::<Result<Vec<_>>>()?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = random_matrix(rows, inner, &mut rng);
    let b = random_matrix(inner, cols, &mut rng);

    let mut report = BenchReport {
        scenario: format!("matmul {rows}x{inner} * {inner}x{cols}, seed {seed}"),
        entries: Vec::new(),
        speedups: Vec::new(),
        environment: Environment {
            worker_counts: workers.to_vec(),
            hardware_workers: hardware_workers(),
            scalar_kind: ScalarKind::Real64,
            matrix_rows: rows,
            matrix_cols: inner,
            grid: None,
            sensors: None,
            samples: None,
        },
        verification: BTreeMap::new(),
        metrics: BTreeMap::new(),
        breakdown: Vec::new(),
    };

    let (serial_time, oracle) = time_min(reps, || matmul_serial(&a, &b))?;
    let checksum = oracle.data().iter().sum();
    report.entries.push(entry("serial", serial_time, reps, checksum));

    let tiles = TileSpec::default();
    for pool in &pools {
        let label = parallel_label("tiled", pool.worker_count());
        let got = matmul_tiled_parallel(&a, &b, tiles, pool)?;
        let deviation = max_relative_deviation(&a, &b, &got, &oracle);
        if deviation > MATMUL_TOLERANCE {
            return Err(PactError::Verification(format!(
                "{label} deviates from the serial product by {deviation:e} (limit {MATMUL_TOLERANCE:e})"
            )));
        }
        report.verification.insert(label.clone(), true);
        report
            .metrics
            .insert(format!("{label}_max_relative_deviation"), deviation);
        let (t, out) = time_min(reps, || matmul_tiled_parallel(&a, &b, tiles, pool))?;
        report
            .entries
            .push(entry(label.clone(), t, reps, out.data().iter().sum()));
        report.push_speedup(&format!("speedup_w{}", pool.worker_count()), "serial", &label);
    }
    // Thread scaling of the tiled kernel alone, separate from the gain that
    // cache blocking gives over the i,j,k oracle.
    let single = parallel_label("tiled", 1);
    for &w in workers.iter().filter(|&&w| w != 1) {
        report.push_speedup(&format!("scaling_w{w}"), &single, &parallel_label("tiled", w));
    }
    Ok(report)
}

fn scene_environment(scene: &Scene, workers: &[usize]) -> Environment {
    let kind = match scene.matrix.operator() {
        Operator::Time(_) => ScalarKind::Real64,
        Operator::Frequency(_) => ScalarKind::Complex128,
    };
    Environment {
        worker_counts: workers.to_vec(),
        hardware_workers: hardware_workers(),
        scalar_kind: kind,
        matrix_rows: scene.matrix.rows(),
        matrix_cols: scene.matrix.cols(),
        grid: Some([scene.grid.nx(), scene.grid.ny()]),
        sensors: Some(scene.matrix.sensors()),
        samples: Some(scene.matrix.samples_per_sensor()),
    }
}

fn scenario_name(kind: &str, spec: &SceneSpec) -> String {
    format!(
        "{kind} {n}x{n} grid, {p} sensors, {q} samples, {d} domain, phantom seed {s}",
        n = spec.grid_size,
        p = spec.sensors,
        q = spec.samples,
        d = spec.domain,
        s = spec.phantom_seed
    )
}

fn resolve_config(scene: &Scene, config: Option<&ReconConfig>) -> Result<ReconConfig> {
    match config {
        Some(c) => Ok(c.clone()),
        None => ReconConfig::calibrated(&scene.matrix, &scene.data, Kernels::Serial),
    }
}

fn record_solver(report: &mut BenchReport, prefix: &str, result: &ReconResult) {
    report
        .metrics
        .insert(format!("{prefix}_iterations_run"), result.iterations_run as f64);
    if let Some(&last) = result.objective_history.last() {
        report.metrics.insert(format!("{prefix}_final_objective"), last);
    }
}

/// Times back-projection, serial-kernel IR and parallel-kernel IR on a
/// built scene. Without an explicit `config` the data-calibrated defaults
/// are used. RMSE against the phantom is recorded for both reconstructions.
pub fn bench_recon(
    scene: &Scene,
    config: Option<&ReconConfig>,
    workers: usize,
    reps: usize,
) -> Result<BenchReport> {
    if reps == 0 {
        return Err(PactError::InvalidArgument("repetitions must be >= 1".into()));
    }
    let pool = WorkerPool::new(workers)?;
    let config = resolve_config(scene, config)?;
    config.validate()?;
    let spec = &scene.spec;

    let mut report = BenchReport {
        scenario: scenario_name("recon", spec),
        entries: Vec::new(),
        speedups: Vec::new(),
        environment: scene_environment(scene, &[workers]),
        verification: BTreeMap::new(),
        metrics: BTreeMap::new(),
        breakdown: Vec::new(),
    };

    let (t_bp, bp) = time_min(reps, || back_project(&scene.matrix, &scene.data, Kernels::Serial))?;
    report.entries.push(entry("bp", t_bp, reps, image_checksum(&bp)));

    let (t_serial, serial) = time_min(reps, || {
        iterative_reconstruct(&scene.matrix, &scene.data, &config, Kernels::Serial)
    })?;
    report
        .entries
        .push(entry("ir_serial", t_serial, reps, image_checksum(&serial.image)));

    let label = parallel_label("ir_parallel", workers);
    let parallel = Kernels::Parallel(&pool);
    let probe = iterative_reconstruct(&scene.matrix, &scene.data, &config, parallel)?;
    let agrees = probe.image == serial.image && probe.objective_history == serial.objective_history;
    if !agrees {
        return Err(PactError::Verification(format!(
            "{label} reconstruction differs from the serial-kernel run"
        )));
    }
    report.verification.insert(label.clone(), true);
    let (t_par, par) = time_min(reps, || {
        iterative_reconstruct(&scene.matrix, &scene.data, &config, parallel)
    })?;
    report
        .entries
        .push(entry(label.clone(), t_par, reps, image_checksum(&par.image)));

    report.push_speedup("ir_parallel_speedup", "ir_serial", &label);
    report
        .metrics
        .insert("ir_to_bp_time_ratio".into(), t_serial.as_secs_f64() / t_bp.as_secs_f64());
    report.metrics.insert("rmse_bp".into(), rmse(&bp, &scene.truth)?);
    report.metrics.insert("rmse_ir".into(), rmse(&serial.image, &scene.truth)?);
    report.metrics.insert(
        "rmse_ir_normalized".into(),
        rmse(&serial.image.max_normalized(), &scene.truth)?,
    );
    record_solver(&mut report, "ir", &serial);
    Ok(report)
}

/// Label of the unattributed remainder in [`profile_breakdown`].
pub const OTHER_CATEGORY: &str = "other";

/// Runs one instrumented IR solve and splits its wall time into the solver
/// stages plus [`OTHER_CATEGORY`]. Percentages sum to 100.
pub fn profile_breakdown(
    scene: &Scene,
    config: Option<&ReconConfig>,
    pool: Option<&WorkerPool>,
) -> Result<BenchReport> {
    let kernels = pool.map_or(Kernels::Serial, Kernels::Parallel);
    let config = resolve_config(scene, config)?;

    let mut times = StageTimes::default();
    let start = Instant::now();
    let result =
        iterative_reconstruct_profiled(&scene.matrix, &scene.data, &config, kernels, &mut times)?;
    let total = start.elapsed().max(Duration::from_nanos(1));

    let workers = vec![kernels.worker_count()];
    let mut report = BenchReport {
        scenario: scenario_name("profile", &scene.spec),
        entries: vec![entry("ir_profiled", total, 1, image_checksum(&result.image))],
        speedups: Vec::new(),
        environment: scene_environment(scene, &workers),
        verification: BTreeMap::new(),
        metrics: BTreeMap::new(),
        breakdown: Vec::new(),
    };

    let total_s = total.as_secs_f64();
    let mut attributed = 0.0;
    for stage in Stage::ALL {
        let s = times.get(stage).as_secs_f64();
        attributed += s;
        report.breakdown.push(StageShare {
            category: stage.label().to_string(),
            seconds: s,
            percent: 100.0 * s / total_s,
        });
    }
    let other = (total_s - attributed).max(0.0);
    report.breakdown.push(StageShare {
        category: OTHER_CATEGORY.to_string(),
        seconds: other,
        percent: 100.0 * other / total_s,
    });
    record_solver(&mut report, "ir", &result);
    Ok(report)
}
