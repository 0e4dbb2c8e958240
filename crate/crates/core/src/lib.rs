//! Mean-field dynamics of fermions with pseudo-relativistic dispersion.

pub mod container;
pub mod density;
pub mod dynamics;
pub mod ed;
pub mod eigs;
pub mod error;
pub mod hf;
pub mod krylov;
pub mod linalg;
pub mod meanfield;
pub mod semiclassics;
pub mod spectral;
pub mod vlasov;

pub use density::{hs_distance_squared, trace_norm, LowRankOperator, OrbitalSet};
pub use error::{Error, Result};
pub use meanfield::{hf_energy, mean_field_operator_apply, MeanField, MeanFieldTerms};
pub use spectral::{make_grid, DispersionKind, Field, Grid, PotentialSpec};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
