use pact_core::bench::{bench_matmul, profile_breakdown, MATMUL_PRESETS};
use pact_core::parkernel::{hardware_workers, matmul_serial, DenseMatrix};
use pact_core::recon::Stage;
use pact_core::scene::{Preset, SceneSpec};
use std::time::Instant;

fn serial_seconds(rows: usize, inner: usize, cols: usize) -> f64 {
    let a = DenseMatrix::from_fn(rows, inner, |i, k| ((i * 7 + k * 3) % 11) as f64 - 5.0);
    let b = DenseMatrix::from_fn(inner, cols, |k, j| ((k * 5 + j) % 13) as f64 - 6.0);
    let mut best = f64::INFINITY;
    for _ in 0..5 {
        let start = Instant::now();
        let c = std::hint::black_box(matmul_serial(&a, &b).unwrap());
        best = best.min(start.elapsed().as_secs_f64());
        assert!(c.data().iter().all(|v| v.is_finite()));
    }
    best
}

#[test]
fn doubling_inner_dimension_doubles_serial_time() {
    let base = serial_seconds(128, 256, 128);
    let doubled = serial_seconds(128, 512, 128);
    assert!(doubled >= 2.0 * base * 0.75, "base {base} doubled {doubled}");
}

#[test]
fn large_matmul_shapes_are_accepted() {
    assert_eq!(MATMUL_PRESETS[0].1, [6144, 16384, 1]);
    assert_eq!(MATMUL_PRESETS[1].1, [16384, 6144, 1]);
    let a = DenseMatrix::<f64>::zeros(6144, 16384);
    let b = DenseMatrix::<f64>::zeros(16384, 1);
    assert_eq!(matmul_serial(&a, &b).unwrap().rows(), 6144);
}

#[test]
fn matmul_speedup_is_reported_for_every_pool() {
    let r = bench_matmul(512, 512, 512, &[1, 4], 3, 1).unwrap();
    assert!(r.verification.values().all(|&v| v));
    assert!(r.speedup("speedup_w4").is_some());
    if hardware_workers() >= 4 {
        assert!(r.speedup("speedup_w4").unwrap().ratio > 1.0);
    }
}

#[test]
fn gradient_products_dominate_the_profile() {
    let r = profile_breakdown(&SceneSpec::preset(Preset::Desk32).build().unwrap(), None, None).unwrap();
    let grad = r.share(Stage::GradientProducts.label()).unwrap();
    for s in &r.breakdown {
        assert!(s.percent <= grad, "{} exceeds the gradient share", s.category);
    }
}
