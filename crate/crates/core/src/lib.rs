//! Gate set tomography toolkit.

pub mod circuit_engine;
pub mod diagnostics;
pub mod error;
pub mod estimation;
pub mod experiment_design;
pub mod gateset_model;
pub mod gauge_opt;
pub mod hs_algebra;
pub mod lgst;
pub mod linalg;
pub mod models;
pub mod scaling;
pub mod uncertainty;
pub mod util;

pub use error::{GstError, Result};
