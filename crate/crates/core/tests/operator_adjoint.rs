use num_complex::Complex64;
use pact_core::forward::{build_matrix, Domain, Operator, Samples};
use pact_core::parkernel::{matvec_adjoint_serial, matvec_serial, Kernels, WorkerPool};
use pact_core::scene::{Preset, SceneSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const PAIRS: u64 = 20;
const TOLERANCE: f64 = 1e-10;

fn desk32(domain: Domain) -> pact_core::forward::MeasurementMatrix {
    let spec = SceneSpec { domain, ..SceneSpec::preset(Preset::Desk32) };
    let grid = spec.grid().unwrap();
    let (ring, acoustic) = spec.geometry(&grid).unwrap();
    build_matrix(domain, &grid, &ring, &acoustic).unwrap()
}

fn uniform(rng: &mut ChaCha8Rng) -> f64 {
    rng.random_range(-1.0..1.0)
}

fn dot_c(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    a.iter().zip(b).map(|(u, v)| u.conj() * v).sum()
}

fn norm_c(a: &[Complex64]) -> f64 {
    a.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
}

#[test]
fn time_domain_adjoint_identity() {
    let k = desk32(Domain::Time);
    let Operator::Time(m) = k.operator() else { unreachable!() };
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..PAIRS {
        let x: Vec<f64> = (0..k.cols()).map(|_| uniform(&mut rng)).collect();
        let y: Vec<f64> = (0..k.rows()).map(|_| uniform(&mut rng)).collect();
        let kx = matvec_serial(m, &x).unwrap();
        let khy = matvec_adjoint_serial(m, &y).unwrap();
        let lhs: f64 = kx.iter().zip(&y).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&khy).map(|(a, b)| a * b).sum();
        let scale = kx.iter().map(|v| v * v).sum::<f64>().sqrt() * y.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((lhs - rhs).abs() <= TOLERANCE * scale, "{lhs} vs {rhs}");
    }
}

#[test]
fn frequency_domain_adjoint_identity() {
    let k = desk32(Domain::Frequency);
    let Operator::Frequency(m) = k.operator() else { unreachable!() };
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..PAIRS {
        let x: Vec<Complex64> = (0..k.cols()).map(|_| Complex64::new(uniform(&mut rng), uniform(&mut rng))).collect();
        let y: Vec<Complex64> = (0..k.rows()).map(|_| Complex64::new(uniform(&mut rng), uniform(&mut rng))).collect();
        let kx = matvec_serial(m, &x).unwrap();
        let khy = matvec_adjoint_serial(m, &y).unwrap();
        let lhs = dot_c(&y, &kx);
        let rhs = dot_c(&khy, &x);
        assert!((lhs - rhs).norm() <= TOLERANCE * norm_c(&kx) * norm_c(&y), "{lhs} vs {rhs}");
    }
}

#[test]
fn real_image_adjoint_matches_real_part() {
    let pool = WorkerPool::new(3).unwrap();
    for domain in [Domain::Time, Domain::Frequency] {
        let k = desk32(domain);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x: Vec<f64> = (0..k.cols()).map(|_| uniform(&mut rng)).collect();
        let y = match domain {
            Domain::Time => Samples::Time((0..k.rows()).map(|_| uniform(&mut rng)).collect()),
            Domain::Frequency => Samples::Frequency(
                (0..k.rows()).map(|_| Complex64::new(uniform(&mut rng), uniform(&mut rng))).collect(),
            ),
        };
        let kx = k.apply(&x, Kernels::Parallel(&pool)).unwrap();
        let back = k.apply_adjoint(&y, Kernels::Parallel(&pool)).unwrap();
        let lhs = match (&kx, &y) {
            (Samples::Time(a), Samples::Time(b)) => a.iter().zip(b).map(|(u, v)| u * v).sum::<f64>(),
            (Samples::Frequency(a), Samples::Frequency(b)) => dot_c(b, a).re,
            _ => unreachable!(),
        };
        let rhs: f64 = x.iter().zip(&back).map(|(a, b)| a * b).sum();
        let scale = kx.norm_sqr().sqrt() * y.norm_sqr().sqrt();
        assert!((lhs - rhs).abs() <= TOLERANCE * scale, "{domain}: {lhs} vs {rhs}");
    }
}

#[test]
fn forward_model_is_linear() {
    for domain in [Domain::Time, Domain::Frequency] {
        let k = desk32(domain);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x1: Vec<f64> = (0..k.cols()).map(|_| uniform(&mut rng)).collect();
        let x2: Vec<f64> = (0..k.cols()).map(|_| uniform(&mut rng)).collect();
        let (a, b) = (1.7, -0.3);
        let mix: Vec<f64> = x1.iter().zip(&x2).map(|(u, v)| a * u + b * v).collect();
        let lhs = k.apply(&mix, Kernels::Serial).unwrap();
        let y1 = k.apply(&x1, Kernels::Serial).unwrap();
        let y2 = k.apply(&x2, Kernels::Serial).unwrap();
        let diff = match (&lhs, &y1, &y2) {
            (Samples::Time(l), Samples::Time(p), Samples::Time(q)) => l
                .iter()
                .zip(p.iter().zip(q))
                .map(|(l, (p, q))| (l - (a * p + b * q)).powi(2))
                .sum::<f64>(),
            (Samples::Frequency(l), Samples::Frequency(p), Samples::Frequency(q)) => l
                .iter()
                .zip(p.iter().zip(q))
                .map(|(l, (p, q))| (l - (p * a + q * b)).norm_sqr())
                .sum::<f64>(),
            _ => unreachable!(),
        };
        assert!(diff.sqrt() <= 1e-12 * lhs.norm_sqr().sqrt(), "{domain}");
    }
}
