//! Parameter tables and layered resolution.
//!
//! Every command declares its keys with a default. Values are merged in the
//! order defaults, `--config` file, command-line flags, and kept as strings
//! until a command asks for a typed value.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use clap::{Arg, ArgMatches, Command};

use crate::error::CliError;

/// Marker default for values derived from other inputs at run time.
pub const AUTO: &str = "auto";

pub struct Key {
    pub name: &'static str,
    pub default: &'static str,
    pub help: &'static str,
}

const fn key(name: &'static str, default: &'static str, help: &'static str) -> Key {
    Key { name, default, help }
}

pub const GLOBAL: &[Key] = &[
    key("seed", "0", "Seed for phantoms, noise and power iteration"),
    key("workers", AUTO, "Worker counts, comma separated (first one used outside matmul)"),
    key("out-dir", ".", "Directory for all outputs"),
];

pub const PHANTOM: &[&[Key]] = &[&[
    key("kind", "vessel", "point or vessel"),
    key("nx", "64", "Grid width in pixels"),
    key("ny", AUTO, "Grid height in pixels (defaults to nx)"),
    key("dx", "1e-4", "Pixel pitch in metres"),
    key("i", AUTO, "Point column (defaults to the centre)"),
    key("j", AUTO, "Point row (defaults to the centre)"),
    key("amplitude", "1", "Point amplitude"),
    key("branches", "6", "Number of vessel branches"),
    key("name", "phantom", "Output file stem"),
]];

const RING: &[Key] = &[
    key("radius", AUTO, "Ring radius in metres (defaults to radius-factor x half-diagonal)"),
    key("radius-factor", "1.25", "Ring radius as a multiple of the grid half-diagonal"),
    key("sound-speed", "1500", "Speed of sound in m/s"),
    key("dt", AUTO, "Sampling interval in seconds (defaults to a window covering all delays)"),
    key("freq-samples", AUTO, "Frequency samples per sensor (defaults to samples / 2)"),
];

pub const SIMULATE: &[&[Key]] = &[
    &[
        key("phantom", "", "Phantom image (CSV or PGM)"),
        key("domain", "time", "time or frequency"),
        key("noise-sigma", "0", "Standard deviation of additive Gaussian noise"),
        key("save-matrix", "false", "Also write the measurement matrix"),
        key("name", "signal", "Output file stem"),
        key("sensors", "32", "Number of transducers on the ring"),
        key("samples", "128", "Time samples per sensor"),
    ],
    RING,
];

pub const RECONSTRUCT: &[&[Key]] = &[
    &[
        key("signal", "", "Sensor data file (PACTSIG)"),
        key("matrix", "", "Measurement matrix file (PACTMAT); rebuilt from geometry when empty"),
        key("nx", "64", "Grid width in pixels"),
        key("ny", AUTO, "Grid height in pixels (defaults to nx)"),
        key("dx", "1e-4", "Pixel pitch in metres"),
        key("method", "ir", "bp or ir"),
        key("truth", "", "Ground-truth image for RMSE reporting"),
        key("name", "recon", "Output file stem"),
        key("sensors", AUTO, "Number of transducers (defaults to the signal's sensor count)"),
        key("samples", AUTO, "Time samples per sensor (defaults from the signal)"),
    ],
    RING,
    SOLVER,
];

const SOLVER: &[Key] = &[
    key("alpha", AUTO, "L1 weight (defaults to 1e-3 x max|2 K^H y|)"),
    key("beta", AUTO, "TV weight (defaults to alpha / 100)"),
    key("iterations", "90", "Maximum iterations"),
    key("step", AUTO, "Step size, or auto for the Lipschitz-based step"),
    key("tv-epsilon", "1e-3", "TV smoothing constant"),
    key("nonneg", "false", "Clamp the iterate to x >= 0"),
    key("tolerance", "0", "Relative objective change that stops the solver (0 disables)"),
    key("power-iterations", "30", "Power iterations for the auto step"),
];

pub const BENCH_MATMUL: &[&[Key]] = &[&[
    key("rows", "512", "Rows of A"),
    key("inner", "512", "Columns of A and rows of B"),
    key("cols", "512", "Columns of B"),
    key("shape", "", "Named shape (tall or wide) overriding rows, inner and cols"),
    key("reps", "5", "Repetitions per timing (minimum is kept)"),
    key("name", "bench_matmul", "Output file stem"),
]];

const SCENE: &[Key] = &[
    key("preset", "desk64", "Scene preset: desk32, desk64 or paper127"),
    key("nx", AUTO, "Grid size overriding the preset"),
    key("sensors", AUTO, "Sensor count overriding the preset"),
    key("samples", AUTO, "Time samples overriding the preset"),
    key("domain", "time", "time or frequency"),
    key("branches", "6", "Vessel branches in the phantom"),
];

pub const BENCH_RECON: &[&[Key]] = &[
    SCENE,
    SOLVER,
    &[
        key("reps", "5", "Repetitions per timing (minimum is kept)"),
        key("name", "bench_recon", "Output file stem"),
    ],
];

pub const BENCH_PROFILE: &[&[Key]] = &[
    SCENE,
    SOLVER,
    &[key("name", "bench_profile", "Output file stem")],
];

pub fn add_args(mut cmd: Command, groups: &[&[Key]]) -> Command {
    for group in groups {
        for k in group.iter() {
            let help = if k.default.is_empty() {
                k.help.to_string()
            } else {
                format!("{} [default: {}]", k.help, k.default)
            };
            cmd = cmd.arg(Arg::new(k.name).long(k.name).value_name("VALUE").help(help));
        }
    }
    cmd
}

pub fn add_global_args(cmd: Command) -> Command {
    let cmd = cmd.arg(
        Arg::new("config")
            .long("config")
            .global(true)
            .value_name("PATH")
            .help("key=value file, or a run manifest whose parameters are reused"),
    );
    GLOBAL.iter().fold(cmd, |cmd, k| {
        cmd.arg(
            Arg::new(k.name)
                .long(k.name)
                .global(true)
                .value_name("VALUE")
                .help(format!("{} [default: {}]", k.help, k.default)),
        )
    })
}

/// Resolved parameters of one command.
#[derive(Debug, Clone)]
pub struct Params {
    values: BTreeMap<String, String>,
}

impl Params {
    /// Merges defaults, the config file named by `--config`, and flags.
    pub fn resolve(groups: &[&[Key]], matches: &ArgMatches) -> Result<Self, CliError> {
        let mut values = BTreeMap::new();
        for k in GLOBAL.iter().chain(groups.iter().flat_map(|g| g.iter())) {
            values.insert(k.name.to_string(), k.default.to_string());
        }
        if let Some(path) = matches.get_one::<String>("config") {
            for (k, v) in read_config(Path::new(path))? {
                if !values.contains_key(&k) {
                    return Err(CliError::usage(format!(
                        "config key `{k}` is not a parameter of this command"
                    )));
                }
                values.insert(k, v);
            }
        }
        for name in values.keys().cloned().collect::<Vec<_>>() {
            if let Some(v) = matches.get_one::<String>(&name) {
                values.insert(name, v.clone());
            }
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &BTreeMap<String, String> {
        &self.values
    }

    pub fn raw(&self, name: &str) -> &str {
        self.values
            .get(name)
            .map(String::as_str)
            .unwrap_or_else(|| panic!("parameter `{name}` is not declared"))
    }

    pub fn is_auto(&self, name: &str) -> bool {
        self.raw(name) == AUTO
    }

    /// Records the concrete value chosen for an `auto` (or any) parameter.
    pub fn set(&mut self, name: &str, value: impl ToString) {
        self.values.insert(name.to_string(), value.to_string());
    }

    pub fn text(&self, name: &str) -> &str {
        self.raw(name)
    }

    pub fn optional_text(&self, name: &str) -> Option<&str> {
        Some(self.raw(name)).filter(|v| !v.is_empty())
    }

    pub fn required_text(&self, name: &str) -> Result<&str, CliError> {
        self.optional_text(name)
            .ok_or_else(|| CliError::usage(format!("--{name} is required")))
    }

    pub fn real(&self, name: &str) -> Result<f64, CliError> {
        parse_real(name, self.raw(name))
    }

    pub fn count(&self, name: &str) -> Result<usize, CliError> {
        parse_count(name, self.raw(name))
    }

    pub fn seed(&self) -> Result<u64, CliError> {
        parse_count("seed", self.raw("seed")).map(|v| v as u64)
    }

    pub fn flag(&self, name: &str) -> Result<bool, CliError> {
        match self.raw(name) {
            "true" | "1" | "yes" => Ok(true),
            "false" | "0" | "no" => Ok(false),
            other => Err(CliError::usage(format!("--{name} expects true or false, got `{other}`"))),
        }
    }

    pub fn parsed<T: std::str::FromStr>(&self, name: &str) -> Result<T, CliError>
    where
        T::Err: std::fmt::Display,
    {
        self.raw(name)
            .parse()
            .map_err(|e| CliError::usage(format!("--{name}: {e}")))
    }

    pub fn worker_list(&self) -> Result<Vec<usize>, CliError> {
        let list = self
            .raw("workers")
            .split(',')
            .map(|w| parse_count("workers", w.trim()))
            .collect::<Result<Vec<_>, _>>()?;
        if list.contains(&0) {
            return Err(CliError::usage("--workers entries must be >= 1"));
        }
        Ok(list)
    }
}

/// Accepts plain and scientific notation; rejects non-finite values.
pub fn parse_real(name: &str, raw: &str) -> Result<f64, CliError> {
    match raw.trim().parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(CliError::usage(format!("--{name} expects a finite number, got `{raw}`"))),
    }
}

/// A non-negative whole number, also written as e.g. `1e3`.
pub fn parse_count(name: &str, raw: &str) -> Result<usize, CliError> {
    let raw = raw.trim();
    if let Ok(v) = raw.parse::<usize>() {
        return Ok(v);
    }
    match raw.parse::<f64>() {
        Ok(v) if v >= 0.0 && v.fract() == 0.0 && v <= 9_007_199_254_740_992.0 => Ok(v as usize),
        _ => Err(CliError::usage(format!(
            "--{name} expects a non-negative whole number, got `{raw}`"
        ))),
    }
}

/// Reads `key = value` lines (`#` starts a comment), or the `parameters`
/// object of a JSON run manifest.
pub fn read_config(path: &Path) -> Result<Vec<(String, String)>, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::io(format!("cannot read config {}: {e}", path.display())))?;
    if text.trim_start().starts_with('{') {
        let json: serde_json::Value = serde_json::from_str(&text)
            .map_err(|e| CliError::usage(format!("config {} is not valid JSON: {e}", path.display())))?;
        let params = json
            .get("parameters")
            .and_then(|p| p.as_object())
            .ok_or_else(|| CliError::usage(format!("{} has no `parameters` object", path.display())))?;
        return params
            .iter()
            .map(|(k, v)| match v {
                serde_json::Value::String(s) => Ok((k.clone(), s.clone())),
                serde_json::Value::Number(n) => Ok((k.clone(), n.to_string())),
                serde_json::Value::Bool(b) => Ok((k.clone(), b.to_string())),
                _ => Err(CliError::usage(format!("parameter `{k}` must be a scalar"))),
            })
            .collect();
    }
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            CliError::usage(format!("{}:{}: expected key = value", path.display(), n + 1))
        })?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}
