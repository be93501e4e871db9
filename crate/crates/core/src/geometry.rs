//! Imaging grid, circular transducer ring and synthetic phantoms.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{PactError, Result};

/// Upper bound on the fraction of nonzero pixels in a vessel phantom.
pub const MAX_VESSEL_FILL: f64 = 0.15;

/// Square-pitched pixel lattice. Pixel `(i, j)` is centred at
/// `origin + (i * dx, j * dx)`; `i` runs along x, `j` along y.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImagingGrid {
    nx: usize,
    ny: usize,
    dx: f64,
    origin: [f64; 2],
}

impl ImagingGrid {
    pub fn new(nx: usize, ny: usize, dx: f64, origin: [f64; 2]) -> Result<Self> {
        if nx == 0 || ny == 0 {
            return Err(PactError::invalid(format!(
                "grid dimensions must be >= 1, got {nx}x{ny}"
            )));
        }
        if !(dx > 0.0 && dx.is_finite()) {
            return Err(PactError::invalid(format!("pixel pitch must be > 0, got {dx}")));
        }
        if !origin.iter().all(|v| v.is_finite()) {
            return Err(PactError::invalid("grid origin must be finite"));
        }
        Ok(Self { nx, ny, dx, origin })
    }

    /// Grid whose pixel centres are symmetric about `(0, 0)`.
    pub fn centered(nx: usize, ny: usize, dx: f64) -> Result<Self> {
        let ox = -((nx.max(1) - 1) as f64) * dx / 2.0;
        let oy = -((ny.max(1) - 1) as f64) * dx / 2.0;
        Self::new(nx, ny, dx, [ox, oy])
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    pub fn dx(&self) -> f64 {
        self.dx
    }

    pub fn origin(&self) -> [f64; 2] {
        self.origin
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Row-major linear index, `j * nx + i`.
    pub fn index(&self, i: usize, j: usize) -> usize {
        j * self.nx + i
    }

    pub fn pixel_center(&self, i: usize, j: usize) -> [f64; 2] {
        [
            self.origin[0] + i as f64 * self.dx,
            self.origin[1] + j as f64 * self.dx,
        ]
    }

    /// Pixel centres in linear-index order.
    pub fn centers(&self) -> impl Iterator<Item = [f64; 2]> + '_ {
        (0..self.ny).flat_map(move |j| (0..self.nx).map(move |i| self.pixel_center(i, j)))
    }

    /// Midpoint between the extreme pixel centres.
    pub fn center(&self) -> [f64; 2] {
        let far = self.pixel_center(self.nx - 1, self.ny - 1);
        [
            (self.origin[0] + far[0]) / 2.0,
            (self.origin[1] + far[1]) / 2.0,
        ]
    }

    /// Distance from [`center`](Self::center) to a corner pixel centre.
    pub fn half_diagonal(&self) -> f64 {
        distance(self.center(), self.origin)
    }

    pub fn same_shape(&self, other: &ImagingGrid) -> bool {
        self.nx == other.nx && self.ny == other.ny
    }
}

pub(crate) fn distance(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

/// `count` sensors spaced `2π / count` apart on a circle, the first at angle 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransducerRing {
    count: usize,
    radius: f64,
    center: [f64; 2],
    positions: Vec<[f64; 2]>,
}

impl TransducerRing {
    /// Builds the ring and checks that every pixel centre of `grid` lies
    /// strictly inside it.
    pub fn new(count: usize, radius: f64, center: [f64; 2], grid: &ImagingGrid) -> Result<Self> {
        if count == 0 {
            return Err(PactError::invalid("ring needs at least one sensor"));
        }
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(PactError::invalid(format!("ring radius must be > 0, got {radius}")));
        }
        for j in 0..grid.ny() {
            for i in 0..grid.nx() {
                let r = distance(grid.pixel_center(i, j), center);
                if r >= radius {
                    return Err(PactError::Geometry(format!(
                        "pixel ({i}, {j}) lies {r:.6e} m from the ring centre, \
                         not inside radius {radius:.6e} m"
                    )));
                }
            }
        }
        let positions = (0..count)
            .map(|m| {
                let angle = 2.0 * PI * m as f64 / count as f64;
                [
                    center[0] + radius * angle.cos(),
                    center[1] + radius * angle.sin(),
                ]
            })
            .collect();
        Ok(Self {
            count,
            radius,
            center,
            positions,
        })
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn center(&self) -> [f64; 2] {
        self.center
    }

    pub fn positions(&self) -> &[[f64; 2]] {
        &self.positions
    }

    /// Smallest and largest pixel-to-sensor distance.
    pub fn distance_range(&self, grid: &ImagingGrid) -> (f64, f64) {
        let mut lo = f64::INFINITY;
        let mut hi = 0.0f64;
        for p in grid.centers() {
            for &s in &self.positions {
                let d = distance(p, s);
                lo = lo.min(d);
                hi = hi.max(d);
            }
        }
        (lo, hi)
    }
}

/// Scalar field over a grid, row-major (`j * nx + i`). Values are finite.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageField {
    grid: ImagingGrid,
    values: Vec<f64>,
}

impl ImageField {
    pub fn zeros(grid: ImagingGrid) -> Self {
        Self {
            values: vec![0.0; grid.len()],
            grid,
        }
    }

    pub fn from_values(grid: ImagingGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(PactError::dims(format!(
                "{}x{} grid needs {} values, got {}",
                grid.nx(),
                grid.ny(),
                grid.len(),
                values.len()
            )));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(PactError::invalid(format!(
                "non-finite value at pixel ({}, {})",
                pos % grid.nx(),
                pos / grid.nx()
            )));
        }
        Ok(Self { grid, values })
    }

    pub fn grid(&self) -> &ImagingGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[self.grid.index(i, j)]
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn nonzero_count(&self) -> usize {
        self.values.iter().filter(|v| **v != 0.0).count()
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }

    /// Copy scaled so that the largest magnitude is 1; all-zero fields are
    /// returned unchanged.
    pub fn max_normalized(&self) -> Self {
        let peak = self.max_abs();
        if peak == 0.0 {
            return self.clone();
        }
        Self {
            grid: self.grid,
            values: self.values.iter().map(|v| v / peak).collect(),
        }
    }
}

pub fn make_point_phantom(grid: ImagingGrid, i: usize, j: usize, amplitude: f64) -> Result<ImageField> {
    if i >= grid.nx() || j >= grid.ny() {
        return Err(PactError::invalid(format!(
            "point ({i}, {j}) is outside the {}x{} grid",
            grid.nx(),
            grid.ny()
        )));
    }
    if !amplitude.is_finite() {
        return Err(PactError::invalid("point amplitude must be finite"));
    }
    let mut field = ImageField::zeros(grid);
    field.values[grid.index(i, j)] = amplitude;
    Ok(field)
}

/// Procedural vessel tree: `branches` curvilinear segments, 1 to 3 pixels
/// wide, on a zero background. The first segment starts near the centre;
/// later ones sprout from points already painted. Painting stops once
/// [`MAX_VESSEL_FILL`] of the pixels are set. The result is scaled to peak 1.
pub fn make_vessel_phantom(grid: ImagingGrid, seed: u64, branches: usize) -> Result<ImageField> {
    if branches == 0 {
        return Err(PactError::invalid("vessel phantom needs at least one branch"));
    }
    let (nx, ny) = (grid.nx(), grid.ny());
    let budget = (MAX_VESSEL_FILL * grid.len() as f64).floor() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let wiggle = Normal::new(0.0, 0.12).expect("valid normal");
    let mut values = vec![0.0f64; grid.len()];
    let mut painted = 0usize;
    let mut trunk: Vec<(f64, f64)> = Vec::new();
    let span = nx.min(ny) as f64;

    'branches: for b in 0..branches {
        let (mut x, mut y) = if b == 0 || trunk.is_empty() {
            (
                nx as f64 * rng.random_range(0.3..0.7),
                ny as f64 * rng.random_range(0.3..0.7),
            )
        } else {
            trunk[rng.random_range(0..trunk.len())]
        };
        let mut heading = rng.random_range(0.0..2.0 * PI);
        let mut turn = 0.0f64;
        let half_width: f64 = [0.5, 1.0, 1.5][rng.random_range(0..3)];
        let level = rng.random_range(0.4..1.0);
        let steps = (span * rng.random_range(0.6..1.6)).ceil() as usize;

        for _ in 0..steps {
            let reach = half_width.ceil() as i64;
            let (ci, cj) = (x.round() as i64, y.round() as i64);
            for dj in -reach..=reach {
                for di in -reach..=reach {
                    let (pi, pj) = (ci + di, cj + dj);
                    if pi < 0 || pj < 0 || pi >= nx as i64 || pj >= ny as i64 {
                        continue;
                    }
                    let (px, py) = (pi as f64 - x, pj as f64 - y);
                    if px * px + py * py > half_width * half_width + 0.25 {
                        continue;
                    }
                    let slot = &mut values[grid.index(pi as usize, pj as usize)];
                    if *slot == 0.0 {
                        if painted + 1 > budget {
                            break 'branches;
                        }
                        painted += 1;
                    }
                    *slot = slot.max(level);
                }
            }
            trunk.push((x, y));
            turn = 0.8 * turn + wiggle.sample(&mut rng);
            heading += turn;
            x += 0.7 * heading.cos();
            y += 0.7 * heading.sin();
            if x < -0.5 || y < -0.5 || x > nx as f64 - 0.5 || y > ny as f64 - 0.5 {
                break;
            }
        }
    }

    let peak = values.iter().cloned().fold(0.0, f64::max);
    if peak > 0.0 {
        values.iter_mut().for_each(|v| *v /= peak);
    }
    ImageField::from_values(grid, values)
}
