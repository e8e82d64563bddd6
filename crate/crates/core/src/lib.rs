//! Simulation and finite-size analysis of post-selected monitored quantum
//! circuits and Gaussian random tensor networks.
//!
//! * [`linalg`]: Haar and Gaussian sampling, spectra, seeded RNG streams.
//! * [`state`]: pure and density registers with a `ln Z` ledger.
//! * [`circuit`]: brickwork protocols, trajectory engine, ancilla probes.
//! * [`rtn`]: random tensor network contraction.
//! * [`probes`]: tripartite information, half-cut entropy, free energy.
//! * [`analysis`]: scaling collapse and the finite-size fitters.
//! * [`experiment`]: seeded disorder ensembles and their CSV/JSON outputs.

pub mod analysis;
pub mod circuit;
pub mod error;
pub mod experiment;
pub mod linalg;
pub mod probes;
pub mod rtn;
pub mod state;

pub use error::{ConfigError, ConfigResult};
