//! Entropy-regularized mean-field control with controlled common noise.
//!
//! The crate solves the linear-quadratic problem in closed form through a
//! Riccati system, runs the two-layer Gibbs fixed-point iteration on
//! Gaussian and tabular policies, and simulates the finite-population
//! particle system to estimate values by Monte Carlo.
//!
//! Numerical routines are generic over [`Real`] (`f32` or `f64`); the
//! aliases below fix the scalar to `f64`.

// Negated comparisons are how NaN inputs get rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod error;
pub mod fixed_point;
pub mod hamiltonian;
pub mod linalg;
pub mod mc_eval;
pub mod measure;
pub mod model;
pub mod ode;
pub mod particle_sim;
pub mod policy;
pub mod quadrature;
pub mod riccati;
pub mod rng;
pub mod scalar;

pub use error::{Error, Result};
pub use scalar::Real;

pub use config::{load_model, serialize_model};
pub use fixed_point::{
    evaluate_policy, gibbs_map, inner_fixed_point, outer_iterate, two_layer_solve, FixedPointTrace,
    InnerConfig, OuterConfig,
};
pub use hamiltonian::{
    hamiltonian, hjb_residual, integrated_hamiltonian, iq_function, variational_derivative,
    Quadrature, ValueDerivatives,
};
pub use mc_eval::{
    convergence_study, estimate_value_relaxed, estimate_value_sampled, improvement_check, McConfig,
};
pub use model::{CoeffKey, Coefficient, Dims};
pub use particle_sim::{
    conditional_moments, simulate_relaxed, simulate_sampled, DecisionGrid, SimConfig,
};
pub use policy::Policy;
pub use riccati::{auxiliary_blocks, optimal_policy, riccati_rhs, solve_backward};

pub type LqModelF64 = model::LqModel<f64>;
pub type LqModelF32 = model::LqModel<f32>;
pub type RiccatiSolutionF64 = riccati::RiccatiSolution<f64>;
pub type GaussianPolicyF64 = policy::GaussianPolicy<f64>;
pub type TabularPolicyF64 = policy::TabularPolicy<f64>;
pub type PolicyValueSolutionF64 = fixed_point::PolicyValueSolution<f64>;
pub type MeasureSliceF64 = measure::MeasureSlice<f64>;
pub type QuadraticBundleF64 = hamiltonian::QuadraticBundle<f64>;
pub type SimConfigF64 = particle_sim::SimConfig<f64>;
pub type TrajectoryF64 = particle_sim::Trajectory<f64>;
pub type McConfigF64 = mc_eval::McConfig<f64>;
