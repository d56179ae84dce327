//! Quantum linear Boltzmann model for a test particle in a hard-sphere gas.
//!
//! Reduced units throughout: ħ = 1, sphere radius a = 1, gas-particle mass m = 1.
//! The test-particle mass is `M = 1/λ` and the reduced mass `m* = 1/(1+λ)`.
//!
//! Modules, bottom-up:
//! - [`specfun`]: spherical Bessel functions, Legendre polynomials, Gauss rules.
//! - [`scattering`]: partial-wave amplitude, cross sections, angular sampling.
//! - [`collision_kernel`]: escape rate, jump kernel, energy shift, velocity, fiber pieces.
//! - [`markov_sim`]: exact-event simulation of the momentum jump process.
//! - [`diffusion`]: the diffusion constant and its kinetic and jump parts.
//! - [`fiber_spectral`]: discretized fiber generator, eigenvalues and time evolution.
//! - [`cli`]: configuration, subcommands and run manifests.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod specfun;
pub mod scattering;
pub mod collision_kernel;
pub mod markov_sim;
pub mod diffusion;
pub mod fiber_spectral;
pub mod cli;
