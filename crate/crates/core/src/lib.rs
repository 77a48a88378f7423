//! Trainable time-series quantum kernels on a simulated statevector backend.
//!
//! The pipeline: embed each time slice of a series into a small register,
//! evolve it with a learnable diagonalized Hamiltonian, read out fidelity
//! kernels per time step, learn a convex combination of those kernels, and
//! hand the combined Gram matrix to a soft-margin SVM.

pub mod ansatz;
pub mod cli;
pub mod data;
pub mod error;
pub mod kernel;
pub mod qccnet;
pub mod qmp;
pub mod sim;
pub mod svm;
pub mod timeprobe;
pub mod util;

pub use error::{Error, Result};
