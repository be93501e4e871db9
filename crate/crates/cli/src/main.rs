//! `pact`: phantoms, simulation, reconstruction and benchmarks from the
//! command line. Every run writes its outputs plus a JSON manifest.

mod commands;
mod error;
mod manifest;
mod params;

use std::process::ExitCode;

use clap::{ArgMatches, Command};

use crate::error::CliError;
use crate::params::{Key, Params};

fn subcommand(name: &'static str, about: &'static str, groups: &[&[Key]]) -> Command {
    params::add_args(Command::new(name).about(about), groups)
}

fn cli() -> Command {
    let bench = Command::new("bench")
        .about("Benchmark kernels and reconstructions")
        .subcommand_required(true)
        .arg_required_else_help(true)
        .subcommand(subcommand(
            "matmul",
            "Serial versus tiled parallel matrix product",
            params::BENCH_MATMUL,
        ))
        .subcommand(subcommand(
            "recon",
            "Back-projection versus iterative reconstruction timing",
            params::BENCH_RECON,
        ))
        .subcommand(subcommand(
            "profile",
            "Per-stage time breakdown of one iterative reconstruction",
            params::BENCH_PROFILE,
        ));
    let root = Command::new("pact")
        .version(env!("CARGO_PKG_VERSION"))
        .about("Photoacoustic tomography simulation and reconstruction")
        .subcommand_required(true)
        .arg_required_else_help(true)
        .subcommand(subcommand("phantom", "Write a synthetic phantom image", params::PHANTOM))
        .subcommand(subcommand(
            "simulate",
            "Build the measurement matrix and simulate sensor data",
            params::SIMULATE,
        ))
        .subcommand(subcommand(
            "reconstruct",
            "Reconstruct an image by back-projection or iterative reconstruction",
            params::RECONSTRUCT,
        ))
        .subcommand(bench);
    params::add_global_args(root)
}

fn dispatch(matches: &ArgMatches) -> Result<(), CliError> {
    match matches.subcommand() {
        Some(("phantom", m)) => commands::phantom(Params::resolve(params::PHANTOM, m)?),
        Some(("simulate", m)) => commands::simulate(Params::resolve(params::SIMULATE, m)?),
        Some(("reconstruct", m)) => commands::reconstruct(Params::resolve(params::RECONSTRUCT, m)?),
        Some(("bench", b)) => match b.subcommand() {
            Some(("matmul", m)) => commands::bench_matmul_cmd(Params::resolve(params::BENCH_MATMUL, m)?),
            Some(("recon", m)) => commands::bench_recon_cmd(Params::resolve(params::BENCH_RECON, m)?),
            Some(("profile", m)) => {
                commands::bench_profile_cmd(Params::resolve(params::BENCH_PROFILE, m)?)
            }
            _ => unreachable!("clap requires a bench scenario"),
        },
        _ => unreachable!("clap requires a subcommand"),
    }
}

fn main() -> ExitCode {
    let matches = cli().get_matches();
    match dispatch(&matches) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
