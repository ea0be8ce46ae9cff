//! Stationary gradient estimation for contracting stochastic recursions
//! `x' = f(x, ξ, θ)` by forward sensitivity analysis, with Monte Carlo
//! certificates for the contraction conditions that make the estimator
//! valid and a finite-difference oracle to cross-check it.

pub mod certify;
pub mod cost;
pub mod error;
pub mod finsler;
pub mod model;
pub mod norm;
pub mod oracle;
pub mod rng;
pub mod runner;
pub mod sensitivity;
pub mod stats;
pub mod transport;
pub mod zoo;

pub use error::{Error, Result};
pub use rng::RngStream;

/// Library version string recorded in result documents.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Maps `f` over `0..n`, in parallel when the `parallel` feature is on.
/// Results keep index order.
pub(crate) fn par_map<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        (0..n).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).map(f).collect()
    }
}
