//! Construction and desk-scale verification of shear-flow controls that move
//! Fourier mass of the advection-diffusion equation on the torus from mode to
//! mode, producing superexponential decay of the scalar.
//!
//! The crate is organized around a reduced ODE system on a Fourier line
//! {a + kb}: `spectrum` builds its exact diffusion coefficients, `planner`
//! chooses the mode-to-mode transfers in 2D/3D/4D, `controller` synthesizes
//! the time-dependent coefficient fields, `integrator` advances the stiff
//! system with an exact integrating factor, `pde_bridge` lifts everything to
//! divergence-free velocity fields on the torus and cross-checks against a
//! full-lattice Galerkin oracle, and `pipeline` chains transfers into
//! cascades, measures decay rates, and renders reports.

pub mod config;
pub mod controller;
pub mod integrator;
pub mod pde_bridge;
pub mod pipeline;
pub mod planner;
pub mod report;
pub mod spectrum;

pub use config::Config;
