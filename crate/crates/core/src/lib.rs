//! Spectral Galerkin laboratory for the stochastic reaction-diffusion equation
//! `dX = (A X + F(X) + B(X)) dt + dW` on `[0, 1]` with space-time white noise,
//! a dissipative polynomial reaction `F` and a bounded Hölder drift `B`.

pub mod drift;
pub mod error;
pub mod noise;
pub mod parallel;
pub mod rng;
pub mod semigroup;
pub mod solver;
pub mod spectral;
pub mod stats;
pub mod trajectory;

pub use drift::{
    empirical_holder_seminorm, fejer_projection, mollify_drift, HolderDrift, PolynomialReaction,
    Profile, ScalarHolder,
};
pub use error::{Error, Result};
pub use noise::{sample_noise, stochastic_convolution, NoisePath, NoisePathSpec};
pub use semigroup::{
    bismut_elworthy_derivative, estimate_pt, estimate_resolvent, smoothing_rate_fit,
    vectorial_pt, EstimatorResult, Model, ScalarMap, TestFunctional,
};
pub use solver::{
    first_variation, second_variation, solve_mild, variation_of_constants_check, SolverConfig,
};
pub use spectral::{build_operator, Boundary, Field, GridSpec, SpectralOperator};
pub use trajectory::Trajectory;
