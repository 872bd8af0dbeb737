//! Riemannian Hamiltonian Monte Carlo on the log-barrier geometry of polytopes,
//! with Gaussian-cooling volume estimation.

pub mod barrier;
pub mod collocation;
pub mod constants;
pub mod cooling;
pub mod diagnostics;
pub mod dynamics;
pub mod error;
pub mod io;
pub mod oracles;
pub mod polytope;
pub mod sampler;
pub mod verify;

pub use barrier::{GibbsTarget, PointState};
pub use error::{Result, RhmcError};
pub use polytope::{generate, BodyKind, GenParams, Polytope};
pub use sampler::{run_chains, ChainReport, SampleSet, SamplerConfig};
