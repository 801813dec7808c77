//! Patient first-mean stability for stochastic switched systems.
//!
//! A switched system redraws its update map from a finite family (or an
//! interval ensemble of linear maps) at every step. This crate builds the
//! nonnegative Lipschitz comparison system, embeds maps and matrices in
//! delay space, computes p-radii of the comparison system, and decides
//! whether the system stays first-mean stable under every bounded random
//! delay pattern. A Monte Carlo engine checks the certificates against
//! simulated trajectories.
//!
//! Modules:
//! - [`linalg`]: dense matrices, Perron roots, Kronecker powers, companion
//!   matrices and isoradial reduction.
//! - [`systems`]: tanh-affine maps, switched systems, interval ensembles,
//!   Lipschitz matrices and shared fixed points.
//! - [`delay`]: delay matrices, delay-space embeddings and delay policies.
//! - [`stability`]: p-radius, stability reports and verdicts.
//! - [`sim`]: trajectory batches, decay estimates, Monte Carlo p-radius.
//! - [`cli`]: JSON spec files and the `patience` command line.

pub mod cli;
pub mod delay;
pub mod linalg;
pub mod sim;
pub mod stability;
pub mod systems;

pub use linalg::Matrix;
