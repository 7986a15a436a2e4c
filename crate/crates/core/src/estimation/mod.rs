//! Objective functions, the staged long-sequence fit, and extended LGST.

pub mod elgst;
pub mod fit;
pub mod lm;
pub mod objective;

pub use elgst::{elgst, refine_germ, ElgstResult};
pub use fit::{fit, FitOptions, FitResult, StageReport};
pub use lm::{least_squares, local_least_squares, LsqOptions, LsqResult};
pub use objective::{
    chi2, loglikelihood, max_logl, two_delta_logl, CompiledData, Objective, ObjectiveKind, DEFAULT_P_MIN,
};
