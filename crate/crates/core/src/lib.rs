//! Adaptive nonparametric drift estimation for ergodic scalar diffusions.
//!
//! The pipeline runs from a simulated path to a drift estimate:
//!
//! 1. [`sim`] simulates `dX = S(X) dt + sigma(X) dW` with stationary start.
//! 2. [`spectral`] computes the sigma^2-weighted empirical characteristic function.
//! 3. [`selector`] scores a finite family of spectral weights by estimated
//!    risk and keeps the minimizer.
//! 4. [`estimator`] builds the quotient estimator from the selected kernel.
//!
//! [`invariant`] supplies exact invariant densities and minimax constants used
//! as ground truth, and [`bench`] runs Monte-Carlo risk experiments.

// `!(x > 0.0)` rejects NaN along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bench;
pub mod error;
pub mod estimator;
pub mod grid;
pub mod interp;
pub mod invariant;
pub mod io;
pub mod quad;
pub mod selector;
pub mod sim;
pub mod spectral;

pub use error::{Error, Result};
pub use estimator::{adaptive_drift, adaptive_fit, drift_estimate, kernel_eval, nonadaptive_drift, DriftEstimate, QKernel};
pub use grid::UniformGrid;
pub use invariant::{
    density_fourier, invariant_density, optimal_weight, pinsker_constant, pinsker_constant_general, CfTable,
    DensityTable,
};
pub use selector::{build_grid, risk_score, select_weight, SelectionTrace, SpectralWeight, WeightGrid};
pub use sim::{sample_stationary, simulate_path, DiffusionModel, Init, Path};
pub use spectral::{cf_sq_unbiased, delta_oracle, empirical_cf, sigma_hat_sq, EcfOptions, EcfTable};
