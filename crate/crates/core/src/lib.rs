//! Simulation and analysis of critical long-range percolation on the
//! hierarchical lattice and the discrete torus.

pub mod branching;
pub mod coalescent;
pub mod error;
pub mod estimators;
pub mod experiments;
pub mod geometry;
pub mod graphstats;
pub mod kernel;
pub mod numeric;
pub mod rng;
pub mod sampler;
pub mod stats;
pub mod unionfind;

pub use error::{Error, Result};
pub use geometry::{LatticeSpec, TorusSpec, VertexId};
pub use kernel::{KernelSpec, ModelParams};
pub use rng::{RngPolicy, StreamTag};
pub use sampler::{ComponentSummary, PercolationSample, Stage};
pub use branching::{BranchingRun, CouplingReport};
pub use coalescent::{LimitSample, WeightedConfig};
pub use estimators::{DiagnosticsReport, ShellEstimate};
pub use experiments::{ExperimentConfig, RunManifest, Suite};
