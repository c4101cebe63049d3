//! Controlled superprocesses: finite atomic measures, measure calculus,
//! particle approximations, an HJB solver for the exponential-cost family
//! and Monte Carlo verification tools.

pub mod calculus;
pub mod measure_space;
pub mod model;
pub mod oracles;
pub mod particle_sim;
pub mod stats;
pub mod hjb_solver;
pub mod mc_harness;
pub mod config;
pub mod selftest;
