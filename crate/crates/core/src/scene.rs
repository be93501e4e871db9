//! Reproducible scenes: grid, ring, acoustics, phantom, matrix and data.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{PactError, Result};
use crate::forward::{
    add_noise, build_matrix, forward_project, AcousticConfig, Domain, MeasurementMatrix, SensorData,
    DEFAULT_SOUND_SPEED,
};
use crate::geometry::{make_vessel_phantom, ImageField, ImagingGrid, TransducerRing};
use crate::parkernel::Kernels;

pub const DEFAULT_PITCH: f64 = 1e-4;
/// Ring radius as a multiple of the grid's half-diagonal.
pub const DEFAULT_RADIUS_FACTOR: f64 = 1.25;
pub const DEFAULT_BRANCHES: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    /// 32x32 grid, 16 sensors, 64 time samples.
    Desk32,
    /// 64x64 grid, 32 sensors, 128 time samples.
    Desk64,
    /// 127x127 grid, 24 sensors x 256 samples = 6144 rows.
    Paper127,
}

impl Preset {
    pub fn name(&self) -> &'static str {
        match self {
            Preset::Desk32 => "desk32",
            Preset::Desk64 => "desk64",
            Preset::Paper127 => "paper127",
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Preset {
    type Err = PactError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk32" => Ok(Preset::Desk32),
            "desk64" => Ok(Preset::Desk64),
            "paper127" => Ok(Preset::Paper127),
            other => Err(PactError::invalid(format!(
                "unknown preset `{other}` (expected desk32, desk64 or paper127)"
            ))),
        }
    }
}

/// Everything needed to rebuild a simulated acquisition bit for bit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub grid_size: usize,
    pub sensors: usize,
    pub samples: usize,
    pub pitch: f64,
    pub sound_speed: f64,
    pub radius_factor: f64,
    pub domain: Domain,
    pub phantom_seed: u64,
    pub branches: usize,
    pub noise_sigma: f64,
}

impl SceneSpec {
    pub fn preset(preset: Preset) -> Self {
        let (grid_size, sensors, samples) = match preset {
            Preset::Desk32 => (32, 16, 64),
            Preset::Desk64 => (64, 32, 128),
            Preset::Paper127 => (127, 24, 256),
        };
        Self {
            grid_size,
            sensors,
            samples,
            pitch: DEFAULT_PITCH,
            sound_speed: DEFAULT_SOUND_SPEED,
            radius_factor: DEFAULT_RADIUS_FACTOR,
            domain: Domain::Time,
            phantom_seed: 1,
            branches: DEFAULT_BRANCHES,
            noise_sigma: 0.0,
        }
    }

    pub fn grid(&self) -> Result<ImagingGrid> {
        ImagingGrid::centered(self.grid_size, self.grid_size, self.pitch)
    }

    /// Ring concentric with the grid and an acoustic window fitted to it.
    pub fn geometry(&self, grid: &ImagingGrid) -> Result<(TransducerRing, AcousticConfig)> {
        let radius = self.radius_factor * grid.half_diagonal().max(grid.dx());
        let ring = TransducerRing::new(self.sensors, radius, grid.center(), grid)?;
        let acoustic = AcousticConfig::fitted(grid, &ring, self.sound_speed, self.samples)?;
        Ok((ring, acoustic))
    }

    pub fn build(&self) -> Result<Scene> {
        self.build_with(Kernels::Serial)
    }

    pub fn build_with(&self, kernels: Kernels<'_>) -> Result<Scene> {
        let grid = self.grid()?;
        let (ring, acoustic) = self.geometry(&grid)?;
        let truth = make_vessel_phantom(grid, self.phantom_seed, self.branches)?;
        let matrix = build_matrix(self.domain, &grid, &ring, &acoustic)?;
        let clean = forward_project(&matrix, &truth, kernels)?;
        let data = add_noise(&clean, self.noise_sigma, self.phantom_seed.wrapping_add(1))?;
        Ok(Scene {
            spec: self.clone(),
            grid,
            ring,
            acoustic,
            truth,
            matrix,
            data,
        })
    }
}

pub struct Scene {
    pub spec: SceneSpec,
    pub grid: ImagingGrid,
    pub ring: TransducerRing,
    pub acoustic: AcousticConfig,
    pub truth: ImageField,
    pub matrix: MeasurementMatrix,
    pub data: SensorData,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_fit_window_without_truncation() {
        for preset in [Preset::Desk32, Preset::Desk64] {
            let scene = SceneSpec::preset(preset).build().unwrap();
            assert_eq!(scene.matrix.truncated_pairs(), 0, "{preset}");
            let (near, _) = scene.ring.distance_range(&scene.grid);
            assert!(near > scene.acoustic.dt() * scene.acoustic.sound_speed());
        }
        let spec = SceneSpec::preset(Preset::Paper127);
        assert_eq!(spec.sensors * spec.samples, 6144);
        assert_eq!(spec.grid().unwrap().len(), 127 * 127);
    }

    #[test]
    fn preset_names_round_trip() {
        for p in [Preset::Desk32, Preset::Desk64, Preset::Paper127] {
            assert_eq!(p.name().parse::<Preset>().unwrap(), p);
        }
        assert!("desk16".parse::<Preset>().is_err());
    }
}
