//! Small numerical kernels shared by the solver modules: adaptive quadrature,
//! grid interpolation, and deterministic statistics reductions.

pub mod interp;
pub mod quad;
pub mod stats;

pub use interp::{cubic4_weights, hermite_mid, lerp};
pub use quad::adaptive_simpson;
pub use stats::{mean_and_stderr, pairwise_sum, quantile_nearest};
