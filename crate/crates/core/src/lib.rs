//! Galerkin discretization of the one-dimensional fractional Laplacian with
//! mixed nonlocal boundary conditions: homogeneous Dirichlet data on Σ₁ and
//! nonlocal Neumann data on Σ₂.

pub mod assembly;
pub mod cli;
pub mod config;
pub mod domain;
pub mod error;
pub mod field;
pub mod kernel;
pub mod quadrature;
pub mod solve;
pub mod verify;
pub mod walker;

pub use error::{Error, Result};
