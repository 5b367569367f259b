//! Structured Koopman-generator surrogates of port-Hamiltonian systems.
//!
//! The crate follows one pipeline:
//!
//! 1. [`ph_model`]: the physical system `ẋ = (J - R)∇H + Gu` and its simulation.
//! 2. [`observables`]: a dictionary `Ψ` and the pointwise generator action
//!    `𝒦_J ψ`, `𝒦_R ψ`, `𝒦_u ψ`.
//! 3. [`galerkin`]: weighted projection onto the dictionary, giving a
//!    [`KpHModel`] with `K_J` skew and `K_R ⪰ 0` by construction.
//! 4. [`lifted`]: the linear surrogate, storage functions, passivity checks.
//! 5. [`control`]: damping injection, Lyapunov solvers, finite-horizon MPC.
//!
//! Data-parallel loops take an [`Execution`] policy; with the `parallel`
//! feature off everything runs serially with identical results.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod control;
pub mod error;
pub mod exec;
pub mod galerkin;
pub mod lifted;
pub mod linalg;
pub mod observables;
pub mod ph_model;
pub mod samples;

pub use error::{KphError, Result};
pub use exec::Execution;
pub use galerkin::KpHModel;
pub use linalg::{PsdMatrix, SkewMatrix};
pub use observables::{builtin_dictionary, BuiltinDictionary, Dictionary, DictionaryKind};
pub use ph_model::{linear_ph, pendulum, LinearPHSystem, PHSystem, Pendulum, PortHamiltonian, Trajectory};
pub use samples::SampleSet;
