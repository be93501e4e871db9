//! Discrete photoacoustic forward operators.
//!
//! Two measurement matrices are available, both dense with one column per
//! pixel and one block of rows per sensor:
//!
//! * time domain: entry `(m, s), (i, j)` is `δ(s·Δt − |r_ij − r_m| / c) / (2πc)`,
//!   with the delta spread over the two bracketing samples by linear
//!   interpolation;
//! * frequency domain: entry `(m, n), (i, j)` is
//!   `i·c·k_n·exp(−i·k_n·d) / d` with `d = |r_ij − r_m|`.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{PactError, Result};
use crate::geometry::{distance, ImageField, ImagingGrid, TransducerRing};
use crate::parkernel::{DenseMatrix, Kernels, ScalarKind};

pub const DEFAULT_SOUND_SPEED: f64 = 1500.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Time,
    Frequency,
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Domain::Time => "time",
            Domain::Frequency => "frequency",
        })
    }
}

impl FromStr for Domain {
    type Err = PactError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "time" => Ok(Domain::Time),
            "frequency" => Ok(Domain::Frequency),
            other => Err(PactError::invalid(format!(
                "unknown domain `{other}` (expected time or frequency)"
            ))),
        }
    }
}

/// Propagation speed and sampling of the acquisition window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AcousticConfig {
    sound_speed: f64,
    dt: f64,
    time_samples: usize,
    freq_samples: usize,
}

impl AcousticConfig {
    pub fn new(sound_speed: f64, dt: f64, time_samples: usize, freq_samples: usize) -> Result<Self> {
        if !(sound_speed > 0.0 && sound_speed.is_finite()) {
            return Err(PactError::invalid(format!(
                "sound speed must be > 0, got {sound_speed}"
            )));
        }
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(PactError::invalid(format!("dt must be > 0, got {dt}")));
        }
        if time_samples == 0 || freq_samples == 0 {
            return Err(PactError::invalid(format!(
                "sample counts must be >= 1, got q_s={time_samples}, q_n={freq_samples}"
            )));
        }
        Ok(Self {
            sound_speed,
            dt,
            time_samples,
            freq_samples,
        })
    }

    /// Chooses `dt` so the window of `time_samples` samples ends 2% past the
    /// farthest pixel-sensor delay. Frequency samples default to half the
    /// time samples (bins 1 through Nyquist).
    pub fn fitted(
        grid: &ImagingGrid,
        ring: &TransducerRing,
        sound_speed: f64,
        time_samples: usize,
    ) -> Result<Self> {
        let (_, far) = ring.distance_range(grid);
        let dt = 1.02 * far / (sound_speed * time_samples.max(1) as f64);
        Self::new(sound_speed, dt, time_samples, (time_samples / 2).max(1))
    }

    pub fn with_freq_samples(mut self, freq_samples: usize) -> Result<Self> {
        if freq_samples == 0 {
            return Err(PactError::invalid("frequency sample count must be >= 1"));
        }
        self.freq_samples = freq_samples;
        Ok(self)
    }

    pub fn sound_speed(&self) -> f64 {
        self.sound_speed
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn time_samples(&self) -> usize {
        self.time_samples
    }

    pub fn freq_samples(&self) -> usize {
        self.freq_samples
    }

    /// `k_n = 2π f_n / c` with `f_n = n / (q_s Δt)`, `n = 1..=q_n`.
    pub fn wavenumbers(&self) -> Vec<f64> {
        let window = self.time_samples as f64 * self.dt;
        (1..=self.freq_samples)
            .map(|n| 2.0 * PI * (n as f64 / window) / self.sound_speed)
            .collect()
    }

    pub fn samples_per_sensor(&self, domain: Domain) -> usize {
        match domain {
            Domain::Time => self.time_samples,
            Domain::Frequency => self.freq_samples,
        }
    }
}

/// Parameters a matrix was built from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub grid: ImagingGrid,
    pub ring: TransducerRing,
    pub acoustic: AcousticConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Operator {
    Time(DenseMatrix<f64>),
    Frequency(DenseMatrix<Complex64>),
}

impl Operator {
    pub fn domain(&self) -> Domain {
        match self {
            Operator::Time(_) => Domain::Time,
            Operator::Frequency(_) => Domain::Frequency,
        }
    }

    pub fn rows(&self) -> usize {
        match self {
            Operator::Time(m) => m.rows(),
            Operator::Frequency(m) => m.rows(),
        }
    }

    pub fn cols(&self) -> usize {
        match self {
            Operator::Time(m) => m.cols(),
            Operator::Frequency(m) => m.cols(),
        }
    }

    pub fn scalar_kind(&self) -> ScalarKind {
        match self {
            Operator::Time(m) => m.scalar_kind(),
            Operator::Frequency(m) => m.scalar_kind(),
        }
    }
}

/// Dense measurement matrix `K` with sensor-major rows.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementMatrix {
    operator: Operator,
    sensors: usize,
    samples_per_sensor: usize,
    provenance: Option<Provenance>,
    truncated_pairs: usize,
}

impl MeasurementMatrix {
    /// Wraps an existing operator; its rows must split into `sensors` blocks
    /// of `samples_per_sensor`.
    pub fn from_operator(operator: Operator, sensors: usize, samples_per_sensor: usize) -> Result<Self> {
        if sensors == 0 || samples_per_sensor == 0 {
            return Err(PactError::invalid("sensor and sample counts must be >= 1"));
        }
        if operator.rows() != sensors * samples_per_sensor {
            return Err(PactError::dims(format!(
                "{} matrix rows do not split into {sensors} sensors x {samples_per_sensor} samples",
                operator.rows()
            )));
        }
        Ok(Self {
            operator,
            sensors,
            samples_per_sensor,
            provenance: None,
            truncated_pairs: 0,
        })
    }

    pub fn operator(&self) -> &Operator {
        &self.operator
    }

    pub fn domain(&self) -> Domain {
        self.operator.domain()
    }

    pub fn rows(&self) -> usize {
        self.operator.rows()
    }

    pub fn cols(&self) -> usize {
        self.operator.cols()
    }

    pub fn sensors(&self) -> usize {
        self.sensors
    }

    pub fn samples_per_sensor(&self) -> usize {
        self.samples_per_sensor
    }

    pub fn provenance(&self) -> Option<&Provenance> {
        self.provenance.as_ref()
    }

    /// Pixel-sensor pairs whose delay fell (partly) outside the time window.
    pub fn truncated_pairs(&self) -> usize {
        self.truncated_pairs
    }

    pub fn truncation_warning(&self) -> Option<String> {
        (self.truncated_pairs > 0).then(|| {
            format!(
                "{} pixel-sensor delays fall partly outside the {}-sample window; \
                 their contributions are truncated",
                self.truncated_pairs, self.samples_per_sensor
            )
        })
    }

    /// `K x` for a real image vector.
    pub fn apply(&self, x: &[f64], kernels: Kernels<'_>) -> Result<Samples> {
        Ok(match &self.operator {
            Operator::Time(m) => Samples::Time(kernels.matvec(m, x)?),
            Operator::Frequency(m) => {
                let xc: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
                Samples::Frequency(kernels.matvec(m, &xc)?)
            }
        })
    }

    /// `Re(Kᴴ y)`.
    pub fn apply_adjoint(&self, y: &Samples, kernels: Kernels<'_>) -> Result<Vec<f64>> {
        match (&self.operator, y) {
            (Operator::Time(m), Samples::Time(v)) => kernels.matvec_adjoint(m, v),
            (Operator::Frequency(m), Samples::Frequency(v)) => Ok(kernels
                .matvec_adjoint(m, v)?
                .into_iter()
                .map(|c| c.re)
                .collect()),
            _ => Err(PactError::DomainMismatch {
                expected: self.domain(),
                found: y.domain(),
            }),
        }
    }

    /// Errors unless `y` has this matrix's domain and row count.
    pub fn check_data(&self, y: &SensorData) -> Result<()> {
        if y.domain() != self.domain() {
            return Err(PactError::DomainMismatch {
                expected: self.domain(),
                found: y.domain(),
            });
        }
        if y.len() != self.rows() {
            return Err(PactError::dims(format!(
                "signal has {} samples ({} sensors x {}), matrix has {} rows",
                y.len(),
                y.sensors(),
                y.samples_per_sensor(),
                self.rows()
            )));
        }
        Ok(())
    }

    pub fn check_image(&self, x: &ImageField) -> Result<()> {
        if x.values().len() != self.cols() {
            return Err(PactError::dims(format!(
                "image has {} pixels, matrix has {} columns",
                x.values().len(),
                self.cols()
            )));
        }
        Ok(())
    }
}

/// Stacked per-sensor samples.
#[derive(Debug, Clone, PartialEq)]
pub enum Samples {
    Time(Vec<f64>),
    Frequency(Vec<Complex64>),
}

impl Samples {
    pub fn domain(&self) -> Domain {
        match self {
            Samples::Time(_) => Domain::Time,
            Samples::Frequency(_) => Domain::Frequency,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Samples::Time(v) => v.len(),
            Samples::Frequency(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn norm_sqr(&self) -> f64 {
        match self {
            Samples::Time(v) => v.iter().map(|a| a * a).sum(),
            Samples::Frequency(v) => v.iter().map(|a| a.norm_sqr()).sum(),
        }
    }

    pub fn negated(&self) -> Samples {
        match self {
            Samples::Time(v) => Samples::Time(v.iter().map(|a| -a).collect()),
            Samples::Frequency(v) => Samples::Frequency(v.iter().map(|a| -a).collect()),
        }
    }

    /// `self − other`; domains and lengths must agree.
    pub fn sub(&self, other: &Samples) -> Result<Samples> {
        if self.len() != other.len() {
            return Err(PactError::dims(format!(
                "cannot subtract signals of length {} and {}",
                self.len(),
                other.len()
            )));
        }
        match (self, other) {
            (Samples::Time(a), Samples::Time(b)) => {
                Ok(Samples::Time(a.iter().zip(b).map(|(x, y)| x - y).collect()))
            }
            (Samples::Frequency(a), Samples::Frequency(b)) => Ok(Samples::Frequency(
                a.iter().zip(b).map(|(x, y)| x - y).collect(),
            )),
            _ => Err(PactError::DomainMismatch {
                expected: self.domain(),
                found: other.domain(),
            }),
        }
    }

    fn is_finite(&self) -> bool {
        match self {
            Samples::Time(v) => v.iter().all(|a| a.is_finite()),
            Samples::Frequency(v) => v.iter().all(|a| a.re.is_finite() && a.im.is_finite()),
        }
    }
}

/// Measurement vector `y`; sensor `m` owns samples `m*q .. (m+1)*q`.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorData {
    sensors: usize,
    samples_per_sensor: usize,
    samples: Samples,
}

impl SensorData {
    pub fn new(sensors: usize, samples_per_sensor: usize, samples: Samples) -> Result<Self> {
        if samples.len() != sensors * samples_per_sensor {
            return Err(PactError::dims(format!(
                "{} samples do not fill {sensors} sensors x {samples_per_sensor}",
                samples.len()
            )));
        }
        if !samples.is_finite() {
            return Err(PactError::invalid("sensor data contains non-finite values"));
        }
        Ok(Self {
            sensors,
            samples_per_sensor,
            samples,
        })
    }

    pub fn zeros(domain: Domain, sensors: usize, samples_per_sensor: usize) -> Self {
        let n = sensors * samples_per_sensor;
        let samples = match domain {
            Domain::Time => Samples::Time(vec![0.0; n]),
            Domain::Frequency => Samples::Frequency(vec![Complex64::new(0.0, 0.0); n]),
        };
        Self {
            sensors,
            samples_per_sensor,
            samples,
        }
    }

    pub fn domain(&self) -> Domain {
        self.samples.domain()
    }

    pub fn sensors(&self) -> usize {
        self.sensors
    }

    pub fn samples_per_sensor(&self) -> usize {
        self.samples_per_sensor
    }

    pub fn samples(&self) -> &Samples {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

fn check_enclosure(grid: &ImagingGrid, ring: &TransducerRing) -> Result<()> {
    for (q, p) in grid.centers().enumerate() {
        for (m, &s) in ring.positions().iter().enumerate() {
            if distance(p, s) <= 0.0 {
                return Err(PactError::Geometry(format!(
                    "pixel ({}, {}) coincides with sensor {m}",
                    q % grid.nx(),
                    q / grid.nx()
                )));
            }
        }
    }
    Ok(())
}

/// Time-domain matrix, `p·q_s` rows by `nx·ny` columns. Row `m·q_s + (s−1)`
/// holds sample time `s·Δt`, `s = 1..=q_s`. A delay `τ` between samples `s₀`
/// and `s₀+1` puts `(1−f)/(2πc)` on `s₀` and `f/(2πc)` on `s₀+1`, where `f`
/// is the fractional part of `τ/Δt`. Weights landing outside the window are
/// dropped and counted in [`MeasurementMatrix::truncated_pairs`].
pub fn build_time_matrix(
    grid: &ImagingGrid,
    ring: &TransducerRing,
    acoustic: &AcousticConfig,
) -> Result<MeasurementMatrix> {
    check_enclosure(grid, ring)?;
    let (p, q) = (ring.count(), acoustic.time_samples());
    let cols = grid.len();
    let c = acoustic.sound_speed();
    let dt = acoustic.dt();
    let weight = 1.0 / (2.0 * PI * c);
    let centers: Vec<[f64; 2]> = grid.centers().collect();
    let mut data = vec![0.0f64; p * q * cols];

    let truncated: usize = data
        .par_chunks_mut(q * cols)
        .zip(ring.positions().par_iter())
        .map(|(block, &sensor)| {
            let mut cut = 0usize;
            for (col, &pix) in centers.iter().enumerate() {
                let u = distance(pix, sensor) / c / dt;
                let s0 = u.floor();
                let frac = u - s0;
                let mut outside = false;
                let mut put = |s: f64, w: f64, block: &mut [f64]| {
                    if w == 0.0 {
                        return;
                    }
                    if s >= 1.0 && s <= q as f64 {
                        block[(s as usize - 1) * cols + col] = w;
                    } else {
                        outside = true;
                    }
                };
                put(s0, (1.0 - frac) * weight, block);
                put(s0 + 1.0, frac * weight, block);
                cut += outside as usize;
            }
            cut
        })
        .sum();

    Ok(MeasurementMatrix {
        operator: Operator::Time(DenseMatrix::from_raw(p * q, cols, data)),
        sensors: p,
        samples_per_sensor: q,
        provenance: Some(Provenance {
            grid: *grid,
            ring: ring.clone(),
            acoustic: *acoustic,
        }),
        truncated_pairs: truncated,
    })
}

/// Frequency-domain matrix, `p·q_n` rows by `nx·ny` columns; row
/// `m·q_n + (n−1)` belongs to wavenumber `k_n`.
pub fn build_freq_matrix(
    grid: &ImagingGrid,
    ring: &TransducerRing,
    acoustic: &AcousticConfig,
) -> Result<MeasurementMatrix> {
    check_enclosure(grid, ring)?;
    let (p, q) = (ring.count(), acoustic.freq_samples());
    let cols = grid.len();
    let c = acoustic.sound_speed();
    let ks = acoustic.wavenumbers();
    let centers: Vec<[f64; 2]> = grid.centers().collect();
    let mut data = vec![Complex64::new(0.0, 0.0); p * q * cols];

    data.par_chunks_mut(q * cols)
        .zip(ring.positions().par_iter())
        .for_each(|(block, &sensor)| {
            for (col, &pix) in centers.iter().enumerate() {
                let d = distance(pix, sensor);
                for (n, &k) in ks.iter().enumerate() {
                    block[n * cols + col] = freq_entry(c, k, d);
                }
            }
        });

    Ok(MeasurementMatrix {
        operator: Operator::Frequency(DenseMatrix::from_raw(p * q, cols, data)),
        sensors: p,
        samples_per_sensor: q,
        provenance: Some(Provenance {
            grid: *grid,
            ring: ring.clone(),
            acoustic: *acoustic,
        }),
        truncated_pairs: 0,
    })
}

/// `i·c·k·exp(−i·k·d) / d`.
#[inline]
pub fn freq_entry(c: f64, k: f64, d: f64) -> Complex64 {
    let mag = c * k / d;
    let (s, co) = (k * d).sin_cos();
    // i·(cos θ − i sin θ) = sin θ + i cos θ
    Complex64::new(mag * s, mag * co)
}

pub fn build_matrix(
    domain: Domain,
    grid: &ImagingGrid,
    ring: &TransducerRing,
    acoustic: &AcousticConfig,
) -> Result<MeasurementMatrix> {
    match domain {
        Domain::Time => build_time_matrix(grid, ring, acoustic),
        Domain::Frequency => build_freq_matrix(grid, ring, acoustic),
    }
}

/// `y = K vec(x)`.
pub fn forward_project(k: &MeasurementMatrix, x: &ImageField, kernels: Kernels<'_>) -> Result<SensorData> {
    k.check_image(x)?;
    let samples = k.apply(x.values(), kernels)?;
    SensorData::new(k.sensors(), k.samples_per_sensor(), samples)
}

/// Adds seeded i.i.d. Gaussian noise; real and imaginary parts are perturbed
/// independently in the frequency domain.
pub fn add_noise(y: &SensorData, sigma: f64, seed: u64) -> Result<SensorData> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(PactError::invalid(format!("noise sigma must be >= 0, got {sigma}")));
    }
    if sigma == 0.0 {
        return Ok(y.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, sigma).map_err(|e| PactError::invalid(e.to_string()))?;
    let samples = match &y.samples {
        Samples::Time(v) => Samples::Time(v.iter().map(|a| a + normal.sample(&mut rng)).collect()),
        Samples::Frequency(v) => Samples::Frequency(
            v.iter()
                .map(|a| {
                    let re = normal.sample(&mut rng);
                    let im = normal.sample(&mut rng);
                    a + Complex64::new(re, im)
                })
                .collect(),
        ),
    };
    SensorData::new(y.sensors, y.samples_per_sensor, samples)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::make_point_phantom;
    use crate::parkernel::WorkerPool;
    use rand::Rng;

    /// Single sensor at (200, 0), pixels on the x axis at 189.5, 190, ...;
    /// with `c = 2` and `dt = 0.5` a pixel at distance d has delay d samples.
    fn line_setup(xs: usize) -> (ImagingGrid, TransducerRing, AcousticConfig) {
        let grid = ImagingGrid::new(xs, 1, 0.5, [189.5, 0.0]).unwrap();
        let ring = TransducerRing::new(1, 100.0, [100.0, 0.0], &grid).unwrap();
        let acoustic = AcousticConfig::new(2.0, 0.5, 32, 16).unwrap();
        (grid, ring, acoustic)
    }

    fn time_matrix(k: &MeasurementMatrix) -> &DenseMatrix<f64> {
        match k.operator() {
            Operator::Time(m) => m,
            _ => panic!("expected time matrix"),
        }
    }

    #[test]
    fn integer_delay_hits_one_sample() {
        let (grid, ring, acoustic) = line_setup(4);
        let k = build_time_matrix(&grid, &ring, &acoustic).unwrap();
        let m = time_matrix(&k);
        // Pixel 1 is 10 = 10·dt·c away from the sensor.
        let col = 1;
        assert_eq!(distance(grid.pixel_center(col, 0), ring.positions()[0]), 10.0);
        let w = 1.0 / (2.0 * PI * 2.0);
        let nonzero: Vec<(usize, f64)> = (0..m.rows())
            .filter(|&r| m.get(r, col) != 0.0)
            .map(|r| (r, m.get(r, col)))
            .collect();
        // Sample s = 10 lives at row offset s − 1.
        assert_eq!(nonzero, vec![(9, w)]);
    }

    #[test]
    fn half_sample_delay_splits_evenly() {
        let (grid, ring, acoustic) = line_setup(4);
        let k = build_time_matrix(&grid, &ring, &acoustic).unwrap();
        let m = time_matrix(&k);
        // Pixel 0 is 10.5 away.
        let col = 0;
        assert_eq!(distance(grid.pixel_center(col, 0), ring.positions()[0]), 10.5);
        let w = 1.0 / (2.0 * PI * 2.0);
        let rows: Vec<usize> = (0..m.rows()).filter(|&r| m.get(r, col) != 0.0).collect();
        assert_eq!(rows, vec![9, 10]);
        assert!((m.get(9, col) - 0.5 * w).abs() < 1e-15);
        assert!((m.get(10, col) - 0.5 * w).abs() < 1e-15);
        assert!((m.get(9, col) + m.get(10, col) - w).abs() <= f64::EPSILON * w);
    }

    #[test]
    fn largest_preset_matrix_shape_arithmetic() {
        // 24 sensors x 256 samples over a 128x128 grid.
        let grid = ImagingGrid::centered(128, 128, 1e-4).unwrap();
        let rows = 24 * 256;
        assert_eq!((rows, grid.len()), (6144, 16384));
    }

    fn desk_scene(n: usize, sensors: usize, samples: usize) -> (ImagingGrid, TransducerRing, AcousticConfig) {
        let grid = ImagingGrid::centered(n, n, 1e-4).unwrap();
        let ring = TransducerRing::new(sensors, 1.25 * grid.half_diagonal(), [0.0, 0.0], &grid).unwrap();
        let acoustic = AcousticConfig::fitted(&grid, &ring, DEFAULT_SOUND_SPEED, samples).unwrap();
        (grid, ring, acoustic)
    }

    #[test]
    fn time_weights_sum_per_pixel_sensor_pair() {
        let (grid, ring, acoustic) = desk_scene(12, 6, 48);
        let k = build_time_matrix(&grid, &ring, &acoustic).unwrap();
        assert_eq!(k.truncated_pairs(), 0);
        let m = time_matrix(&k);
        let w = 1.0 / (2.0 * PI * acoustic.sound_speed());
        let q = acoustic.time_samples();
        for s in 0..ring.count() {
            for col in 0..grid.len() {
                let block: Vec<f64> = (0..q).map(|r| m.get(s * q + r, col)).collect();
                assert!(block.iter().all(|&v| v >= 0.0));
                assert!(block.iter().filter(|&&v| v != 0.0).count() <= 2);
                let total: f64 = block.iter().sum();
                assert!((total - w).abs() <= f64::EPSILON * w, "{total} vs {w}");
            }
        }
    }

    #[test]
    fn short_window_records_truncation() {
        let (grid, ring, _) = desk_scene(12, 6, 48);
        let (_, far) = ring.distance_range(&grid);
        let acoustic = AcousticConfig::new(1500.0, 0.5 * far / 1500.0 / 48.0, 48, 24).unwrap();
        let k = build_time_matrix(&grid, &ring, &acoustic).unwrap();
        assert!(k.truncated_pairs() > 0);
        assert!(k.truncation_warning().is_some());
    }

    #[test]
    fn frequency_magnitude_law_on_random_samples() {
        let (grid, ring, acoustic) = desk_scene(10, 5, 32);
        let k = build_freq_matrix(&grid, &ring, &acoustic).unwrap();
        let m = match k.operator() {
            Operator::Frequency(m) => m,
            _ => unreachable!(),
        };
        let ks = acoustic.wavenumbers();
        assert!(ks.iter().all(|&k| k > 0.0));
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let q = acoustic.freq_samples();
        for _ in 0..200 {
            let s = rng.random_range(0..ring.count());
            let n = rng.random_range(0..q);
            let col = rng.random_range(0..grid.len());
            let d = distance(grid.pixel_center(col % 10, col / 10), ring.positions()[s]);
            let want = acoustic.sound_speed() * ks[n] / d;
            let got = m.get(s * q + n, col).norm();
            assert!(((got - want) / want).abs() <= 1e-12);
        }
    }

    #[test]
    fn equidistant_pixels_share_entries() {
        // Sensor 0 at angle 0 on the x axis; pixels mirrored across it.
        let grid = ImagingGrid::new(1, 3, 1.0, [0.0, -1.0]).unwrap();
        let ring = TransducerRing::new(3, 5.0, [0.0, 0.0], &grid).unwrap();
        let acoustic = AcousticConfig::new(1500.0, 1e-3, 16, 8).unwrap();
        let k = build_freq_matrix(&grid, &ring, &acoustic).unwrap();
        let Operator::Frequency(m) = k.operator() else { unreachable!() };
        for n in 0..8 {
            assert_eq!(m.get(n, 0), m.get(n, 2));
        }
    }

    #[test]
    fn doubling_wavenumber_doubles_magnitude_and_phase() {
        let (c, k, d) = (1500.0, 37.0, 0.011);
        let a = freq_entry(c, k, d);
        let b = freq_entry(c, 2.0 * k, d);
        assert!((b.norm() / a.norm() - 2.0).abs() < 1e-12);
        let i = Complex64::new(0.0, 1.0);
        let phase = |z: Complex64| (z / i).arg();
        let wrap = |t: f64| t.rem_euclid(2.0 * PI);
        assert!((wrap(phase(a)) - wrap(-k * d)).abs() < 1e-9);
        assert!((wrap(phase(b)) - wrap(2.0 * phase(a))).abs() < 1e-9);
    }

    #[test]
    fn builds_are_bit_identical() {
        let (grid, ring, acoustic) = desk_scene(8, 4, 32);
        assert_eq!(
            build_time_matrix(&grid, &ring, &acoustic).unwrap(),
            build_time_matrix(&grid, &ring, &acoustic).unwrap()
        );
        assert_eq!(
            build_freq_matrix(&grid, &ring, &acoustic).unwrap(),
            build_freq_matrix(&grid, &ring, &acoustic).unwrap()
        );
    }

    #[test]
    fn forward_of_point_is_scaled_column() {
        let (grid, ring, acoustic) = desk_scene(8, 4, 32);
        let pool = WorkerPool::new(2).unwrap();
        for domain in [Domain::Time, Domain::Frequency] {
            let k = build_matrix(domain, &grid, &ring, &acoustic).unwrap();
            let zero = forward_project(&k, &ImageField::zeros(grid), Kernels::Parallel(&pool)).unwrap();
            assert_eq!(zero, SensorData::zeros(domain, 4, k.samples_per_sensor()));
            let point = make_point_phantom(grid, 3, 5, 2.5).unwrap();
            let y = forward_project(&k, &point, Kernels::Parallel(&pool)).unwrap();
            let col = grid.index(3, 5);
            match (k.operator(), y.samples()) {
                (Operator::Time(m), Samples::Time(v)) => {
                    for (r, &val) in v.iter().enumerate() {
                        assert_eq!(val, 2.5 * m.get(r, col));
                    }
                }
                (Operator::Frequency(m), Samples::Frequency(v)) => {
                    for (r, &val) in v.iter().enumerate() {
                        assert_eq!(val, m.get(r, col) * 2.5);
                    }
                }
                _ => unreachable!(),
            }
        }
    }

    #[test]
    fn point_signal_energy_scales_with_amplitude_squared() {
        let (grid, ring, acoustic) = desk_scene(8, 4, 32);
        let k = build_time_matrix(&grid, &ring, &acoustic).unwrap();
        let energy = |a: f64| {
            let p = make_point_phantom(grid, 4, 4, a).unwrap();
            forward_project(&k, &p, Kernels::Serial).unwrap().samples().norm_sqr()
        };
        let e1 = energy(1.0);
        assert!(e1 > 0.0);
        assert!((energy(3.0) / e1 - 9.0).abs() < 1e-12);
    }

    #[test]
    fn forward_rejects_wrong_image_size() {
        let (grid, ring, acoustic) = desk_scene(8, 4, 32);
        let k = build_time_matrix(&grid, &ring, &acoustic).unwrap();
        let other = ImageField::zeros(ImagingGrid::centered(4, 4, 1e-4).unwrap());
        assert!(matches!(
            forward_project(&k, &other, Kernels::Serial),
            Err(PactError::DimensionMismatch(_))
        ));
    }

    #[test]
    fn noise_is_seeded_and_calibrated() {
        let y = SensorData::zeros(Domain::Time, 64, 128);
        assert_eq!(add_noise(&y, 0.0, 3).unwrap(), y);
        let a = add_noise(&y, 0.2, 3).unwrap();
        assert_eq!(a, add_noise(&y, 0.2, 3).unwrap());
        assert_ne!(a, add_noise(&y, 0.2, 4).unwrap());
        let Samples::Time(v) = a.samples() else { unreachable!() };
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        let sd = (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt();
        assert!((sd - 0.2).abs() < 0.02, "sd {sd}");
        assert!(add_noise(&y, -1.0, 0).is_err());

        let yf = SensorData::zeros(Domain::Frequency, 32, 128);
        let Samples::Frequency(v) = add_noise(&yf, 0.5, 9).unwrap().samples().clone() else {
            unreachable!()
        };
        let sd_re = (v.iter().map(|z| z.re * z.re).sum::<f64>() / v.len() as f64).sqrt();
        let sd_im = (v.iter().map(|z| z.im * z.im).sum::<f64>() / v.len() as f64).sqrt();
        assert!((sd_re - 0.5).abs() < 0.05 && (sd_im - 0.5).abs() < 0.05);
    }

    #[test]
    fn domain_parsing() {
        assert_eq!("time".parse::<Domain>().unwrap(), Domain::Time);
        assert_eq!("frequency".parse::<Domain>().unwrap(), Domain::Frequency);
        assert!("fourier".parse::<Domain>().is_err());
    }
}
