//! Delayed-acceptance MCMC for PDE-constrained Bayesian inversion, with a
//! 2-D electrical impedance tomography test problem.
//!
//! The crate is organized bottom-up:
//!
//! * [`grid`]: square cell grids, conductivity fields, electrode layout,
//!   block coarsening, text/PGM I/O.
//! * [`solver`]: finite-volume forward map from a conductivity field to
//!   mean-centered electrode voltages, at three fidelities (direct banded
//!   Cholesky, truncated preconditioned CG, coarse-grid).
//! * [`prior`]: pixel-space Markov random field priors and a latent
//!   process-convolution prior.
//! * [`posterior`]: noise model, Gaussian likelihoods, and the adaptive
//!   bias-corrected likelihood that tracks surrogate error online.
//! * [`sampler`]: Metropolis kernels — single-site sweeps, random-walk
//!   vectors, two-level coupling, delayed acceptance (per proposal and over
//!   surrogate subchains), and the adaptive bias-corrected variant.
//! * [`toy`]: a 2×2-pixel problem small enough to enumerate, used to test
//!   every kernel against the exact posterior.
//! * [`trace`], [`diagnostics`], [`run`], [`config`], [`data`]: experiment
//!   plumbing — thinned trace records, checkpoint/resume, effective sample
//!   size and mode-switch counting, run orchestration, key=value configs,
//!   synthetic data generation.
//!
//! All randomness flows through explicitly seeded ChaCha8 streams; a run is
//! reproducible byte-for-byte from (config, seed), and counters of forward
//! solves at each fidelity are part of every run's receipt.

pub mod config;
pub mod data;
pub mod diagnostics;
pub mod error;
pub mod grid;
mod linalg;
pub mod posterior;
pub mod prior;
pub mod run;
pub mod sampler;
pub mod solver;
pub mod toy;
pub mod trace;

pub use error::{Error, Result};

use std::path::Path;

/// Writes `bytes` to `path` via a temporary file in the same directory plus
/// an atomic rename, so readers never observe a partially written file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    let tmp = match dir {
        Some(d) => tempfile::NamedTempFile::new_in(d),
        None => tempfile::NamedTempFile::new_in("."),
    }?;
    std::fs::write(tmp.path(), bytes)?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}
