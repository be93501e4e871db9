//! Photoacoustic computed tomography toolkit.
//!
//! The crate is organised bottom-up:
//!
//! - [`parkernel`]: serial reference and data-parallel dense kernels (tiled
//!   matmul, matrix-vector products, tree reduction).
//! - [`geometry`]: imaging grid, circular transducer ring, synthetic phantoms.
//! - [`forward`]: time- and frequency-domain measurement matrices and the
//!   forward model `y = K x`.
//! - [`recon`]: back-projection and L1/TV-regularised iterative reconstruction.
//! - [`scene`]: reproducible scene presets shared by the benchmarks and CLI.
//! - [`bench`]: timing, speedup and profiling reports.
//! - [`io`]: image, matrix and signal file formats.

pub mod bench;
pub mod error;
pub mod forward;
pub mod geometry;
pub mod io;
pub mod parkernel;
pub mod recon;
pub mod scene;

pub use error::{PactError, Result};
