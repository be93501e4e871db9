use std::path::Path;
use std::time::Instant;

use serde_json::json;

use pact_core::bench::{bench_matmul, bench_recon, profile_breakdown, BenchReport, MATMUL_PRESETS};
use pact_core::forward::{
    add_noise, build_matrix, forward_project, AcousticConfig, Domain, MeasurementMatrix, SensorData,
};
use pact_core::geometry::{make_point_phantom, make_vessel_phantom, ImageField, ImagingGrid, TransducerRing};
use pact_core::io;
use pact_core::parkernel::{hardware_workers, Kernels, WorkerPool};
use pact_core::recon::{back_project, iterative_reconstruct, rmse, ReconConfig, StepSize};
use pact_core::scene::{Preset, SceneSpec};

use crate::error::{with_path, CliError};
use crate::manifest::{write_text, Run};
use crate::params::Params;

type CliResult<T> = Result<T, CliError>;

/// Replaces `auto` in `workers` with the host's worker count.
fn worker_list(p: &mut Params) -> CliResult<Vec<usize>> {
    if p.is_auto("workers") {
        p.set("workers", hardware_workers());
    }
    p.worker_list()
}

fn main_pool(p: &mut Params) -> CliResult<WorkerPool> {
    let workers = worker_list(p)?;
    Ok(WorkerPool::new(workers[0])?)
}

fn grid_from(p: &mut Params) -> CliResult<ImagingGrid> {
    let nx = p.count("nx")?;
    if p.is_auto("ny") {
        p.set("ny", nx);
    }
    Ok(ImagingGrid::centered(nx, p.count("ny")?, p.real("dx")?)?)
}

/// Ring concentric with `grid` and its acoustic sampling, with every `auto`
/// value replaced by the one actually used.
fn geometry_from(p: &mut Params, grid: &ImagingGrid) -> CliResult<(TransducerRing, AcousticConfig)> {
    if p.is_auto("radius") {
        let radius = p.real("radius-factor")? * grid.half_diagonal().max(grid.dx());
        p.set("radius", radius);
    }
    let ring = TransducerRing::new(p.count("sensors")?, p.real("radius")?, grid.center(), grid)?;
    let c = p.real("sound-speed")?;
    let samples = p.count("samples")?;
    if p.is_auto("dt") {
        p.set("dt", AcousticConfig::fitted(grid, &ring, c, samples)?.dt());
    }
    if p.is_auto("freq-samples") {
        p.set("freq-samples", (samples / 2).max(1));
    }
    let acoustic = AcousticConfig::new(c, p.real("dt")?, samples, p.count("freq-samples")?)?;
    Ok((ring, acoustic))
}

fn warn_truncation(k: &MeasurementMatrix) {
    if let Some(msg) = k.truncation_warning() {
        eprintln!("warning: {msg}");
    }
}

fn save_image_pair(run: &mut Run, image: &ImageField) -> CliResult<()> {
    let csv = run.artifact(".csv");
    io::save_image_csv(image, &csv).map_err(with_path(&csv))?;
    let pgm = run.artifact(".pgm");
    io::save_image_pgm(image, &pgm).map_err(with_path(&pgm))?;
    Ok(())
}

fn finish(run: Run) -> CliResult<()> {
    let path = run.finish()?;
    println!("manifest: {}", path.display());
    Ok(())
}

pub fn phantom(mut p: Params) -> CliResult<()> {
    let grid = grid_from(&mut p)?;
    let seed = p.seed()?;
    let image = match p.text("kind") {
        "point" => {
            if p.is_auto("i") {
                p.set("i", grid.nx() / 2);
            }
            if p.is_auto("j") {
                p.set("j", grid.ny() / 2);
            }
            make_point_phantom(grid, p.count("i")?, p.count("j")?, p.real("amplitude")?)?
        }
        "vessel" => make_vessel_phantom(grid, seed, p.count("branches")?)?,
        other => {
            return Err(CliError::usage(format!(
                "--kind must be point or vessel, got `{other}`"
            )))
        }
    };
    let mut run = Run::new("phantom", p)?;
    save_image_pair(&mut run, &image)?;
    run.result("nonzero_pixels", image.nonzero_count());
    finish(run)
}

pub fn simulate(mut p: Params) -> CliResult<()> {
    let phantom_path = p.required_text("phantom")?.to_string();
    let truth = io::read_image(Path::new(&phantom_path)).map_err(with_path(Path::new(&phantom_path)))?;
    let domain: Domain = p.parsed("domain")?;
    let pool = main_pool(&mut p)?;
    let grid = *truth.grid();
    let (ring, acoustic) = geometry_from(&mut p, &grid)?;
    let k = build_matrix(domain, &grid, &ring, &acoustic)?;
    warn_truncation(&k);
    let clean = forward_project(&k, &truth, Kernels::Parallel(&pool))?;
    let y = add_noise(&clean, p.real("noise-sigma")?, p.seed()?)?;

    let save_matrix = p.flag("save-matrix")?;
    let mut run = Run::new("simulate", p)?;
    let sig = run.artifact(".pactsig");
    io::save_signal(&y, &sig).map_err(with_path(&sig))?;
    if save_matrix {
        let mat = run.artifact(".pactmat");
        io::save_matrix(&k, &mat).map_err(with_path(&mat))?;
    }
    run.result("domain", domain.to_string());
    run.result("rows", k.rows());
    run.result("cols", k.cols());
    run.result("truncated_pairs", k.truncated_pairs());
    finish(run)
}

/// Solver settings from the parameters; `auto` weights are calibrated on
/// the data and recorded.
fn solver_config(
    p: &mut Params,
    k: &MeasurementMatrix,
    y: &SensorData,
    kernels: Kernels<'_>,
) -> CliResult<ReconConfig> {
    let calibrated = ReconConfig::calibrated(k, y, kernels)?;
    if p.is_auto("alpha") {
        p.set("alpha", calibrated.alpha);
    }
    let alpha = p.real("alpha")?;
    if p.is_auto("beta") {
        p.set("beta", 1e-2 * alpha);
    }
    let step = if p.is_auto("step") {
        StepSize::Auto
    } else {
        StepSize::Fixed(p.real("step")?)
    };
    let config = ReconConfig {
        alpha,
        beta: p.real("beta")?,
        iterations: p.count("iterations")?,
        step,
        tv_epsilon: p.real("tv-epsilon")?,
        nonneg: p.flag("nonneg")?,
        tolerance: p.real("tolerance")?,
        power_iterations: p.count("power-iterations")?,
        seed: p.seed()?,
    };
    config.validate()?;
    Ok(config)
}

pub fn reconstruct(mut p: Params) -> CliResult<()> {
    let signal_path = p.required_text("signal")?.to_string();
    let y = io::load_signal(Path::new(&signal_path)).map_err(with_path(Path::new(&signal_path)))?;
    let pool = main_pool(&mut p)?;
    let kernels = Kernels::Parallel(&pool);
    let grid = grid_from(&mut p)?;

    if p.is_auto("sensors") {
        p.set("sensors", y.sensors());
    }
    let q = y.samples_per_sensor();
    if p.is_auto("samples") {
        p.set("samples", if y.domain() == Domain::Frequency { 2 * q } else { q });
    }
    if p.is_auto("freq-samples") && y.domain() == Domain::Frequency {
        p.set("freq-samples", q);
    }

    let k = match p.optional_text("matrix").map(str::to_string) {
        Some(path) => {
            let k = io::load_matrix(Path::new(&path), y.sensors()).map_err(with_path(Path::new(&path)))?;
            if k.cols() != grid.len() {
                return Err(CliError::usage(format!(
                    "matrix has {} columns but the {}x{} grid has {} pixels",
                    k.cols(),
                    grid.nx(),
                    grid.ny(),
                    grid.len()
                )));
            }
            k
        }
        None => {
            let (ring, acoustic) = geometry_from(&mut p, &grid)?;
            let k = build_matrix(y.domain(), &grid, &ring, &acoustic)?;
            warn_truncation(&k);
            k
        }
    };
    k.check_data(&y)?;

    let truth = match p.optional_text("truth").map(str::to_string) {
        Some(path) => Some(io::read_image(Path::new(&path)).map_err(with_path(Path::new(&path)))?),
        None => None,
    };
    let method = p.text("method").to_string();
    let mut results = Vec::new();
    let start = Instant::now();
    let (image, history) = match method.as_str() {
        "bp" => (back_project(&k, &y, kernels)?, None),
        "ir" => {
            let config = solver_config(&mut p, &k, &y, kernels)?;
            let r = iterative_reconstruct(&k, &y, &config, kernels)?;
            results.push(("stopped_by", json!(r.stopped_by.to_string())));
            results.push(("iterations_run", json!(r.iterations_run)));
            results.push(("step", json!(r.step)));
            if let Some(&f) = r.objective_history.last() {
                println!("final objective: {f:e}");
                results.push(("final_objective", json!(f)));
            }
            println!("stopped by: {} after {} iterations", r.stopped_by, r.iterations_run);
            (r.image.clone(), Some(r))
        }
        other => return Err(CliError::usage(format!("--method must be bp or ir, got `{other}`"))),
    };
    println!("wall time: {:.6} s", start.elapsed().as_secs_f64());
    let image = ImageField::from_values(grid, image.into_values())?;

    if let Some(truth) = &truth {
        let e = rmse(&image, truth)?;
        println!("rmse: {e:e}");
        results.push(("rmse", json!(e)));
    }

    let mut run = Run::new("reconstruct", p)?;
    save_image_pair(&mut run, &image)?;
    if let Some(r) = &history {
        let path = run.artifact("_history.csv");
        io::save_history(r, &path).map_err(with_path(&path))?;
    }
    run.result("method", method);
    for (key, value) in results {
        run.result(key, value);
    }
    finish(run)
}

fn write_report(run: &mut Run, report: &BenchReport) -> CliResult<()> {
    let json_path = run.artifact(".json");
    write_text(&json_path, &(report.to_json() + "\n"))?;
    let txt_path = run.artifact(".txt");
    let table = report.to_string();
    write_text(&txt_path, &table)?;
    print!("{table}");
    let checksums: serde_json::Map<String, serde_json::Value> = report
        .entries
        .iter()
        .map(|e| (e.label.clone(), json!(e.checksum)))
        .collect();
    run.result("checksums", serde_json::Value::Object(checksums));
    run.result("verification", json!(report.verification));
    Ok(())
}

pub fn bench_matmul_cmd(mut p: Params) -> CliResult<()> {
    if let Some(shape) = p.optional_text("shape").map(str::to_string) {
        let [rows, inner, cols] = MATMUL_PRESETS
            .iter()
            .find(|(name, _)| *name == shape)
            .map(|(_, dims)| *dims)
            .ok_or_else(|| CliError::usage(format!("unknown matmul shape `{shape}` (expected tall or wide)")))?;
        p.set("rows", rows);
        p.set("inner", inner);
        p.set("cols", cols);
    }
    let workers = worker_list(&mut p)?;
    let report = bench_matmul(
        p.count("rows")?,
        p.count("inner")?,
        p.count("cols")?,
        &workers,
        p.count("reps")?,
        p.seed()?,
    )?;
    let mut run = Run::new("bench matmul", p)?;
    write_report(&mut run, &report)?;
    finish(run)
}

fn scene_spec(p: &mut Params) -> CliResult<SceneSpec> {
    let preset: Preset = p.parsed("preset")?;
    let base = SceneSpec::preset(preset);
    for (key, value) in [("nx", base.grid_size), ("sensors", base.sensors), ("samples", base.samples)] {
        if p.is_auto(key) {
            p.set(key, value);
        }
    }
    Ok(SceneSpec {
        grid_size: p.count("nx")?,
        sensors: p.count("sensors")?,
        samples: p.count("samples")?,
        domain: p.parsed("domain")?,
        branches: p.count("branches")?,
        phantom_seed: p.seed()?,
        ..base
    })
}

pub fn bench_recon_cmd(mut p: Params) -> CliResult<()> {
    let spec = scene_spec(&mut p)?;
    let pool = main_pool(&mut p)?;
    let scene = spec.build_with(Kernels::Parallel(&pool))?;
    warn_truncation(&scene.matrix);
    let config = solver_config(&mut p, &scene.matrix, &scene.data, Kernels::Parallel(&pool))?;
    let report = bench_recon(&scene, Some(&config), pool.worker_count(), p.count("reps")?)?;
    let mut run = Run::new("bench recon", p)?;
    write_report(&mut run, &report)?;
    for key in ["rmse_bp", "rmse_ir", "ir_iterations_run", "ir_final_objective"] {
        if let Some(v) = report.metrics.get(key) {
            run.result(key, *v);
        }
    }
    finish(run)
}

pub fn bench_profile_cmd(mut p: Params) -> CliResult<()> {
    let spec = scene_spec(&mut p)?;
    let pool = main_pool(&mut p)?;
    let scene = spec.build_with(Kernels::Parallel(&pool))?;
    warn_truncation(&scene.matrix);
    let config = solver_config(&mut p, &scene.matrix, &scene.data, Kernels::Parallel(&pool))?;
    let report = profile_breakdown(&scene, Some(&config), Some(&pool))?;
    let mut run = Run::new("bench profile", p)?;
    write_report(&mut run, &report)?;
    let categories: Vec<&str> = report.breakdown.iter().map(|s| s.category.as_str()).collect();
    run.result("categories", json!(categories));
    finish(run)
}
