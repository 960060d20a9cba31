//! Hard random quadratic instances, a counted matrix-vector oracle, first-order
//! solvers, and Monte-Carlo checks of the closed-form predictions around them.

pub mod error;
pub mod harness;
pub mod identities;
pub mod instances;
pub mod linalg;
pub mod oracle;
pub mod replica;
pub mod rng;
pub mod solvers;
pub mod spectral;

pub use error::{Error, Result};

/// Version stamp carried by every JSON and CSV artifact.
pub const SCHEMA_VERSION: &str = "v1";
