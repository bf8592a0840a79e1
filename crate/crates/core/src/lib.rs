//! Bayesian nonparametric binary regression with a Dirichlet process mixture
//! of multivariate normals on a latent response and the covariates.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod cli;
pub mod compare;
pub mod data;
pub mod dist;
pub mod error;
pub mod functionals;
pub mod gibbs;
pub mod hyper;
pub mod io;
pub mod kernel;
pub mod mixture;
pub mod prior;
pub mod sampler;
mod serde_mat;
pub mod special;
pub mod validation;

pub use error::{Error, ErrorClass, Result};
