//! Low-rank matrix recovery by Schatten p-quasi-norm minimization.
//!
//! The crate is organised bottom-up:
//!
//! * [`linalg`] / [`schatten`]: dense square matrices, sorted SVDs, Schatten
//!   and weak-Schatten quasi-norms, spectral truncation and the block
//!   decompositions used by the stability analysis.
//! * [`measurements`]: Gaussian and entry-mask operators, restricted
//!   extremal constant probing.
//! * [`solvers`]: nuclear-norm splitting solver, IRLS for p < 1 and a
//!   brute-force oracle for tiny problems.
//! * [`stability`]: the explicit stability constants and bound verification.
//! * [`geometry`]: kernel, null-space and width experiments.
//! * [`harness`]: configuration, seeded experiment orchestration and
//!   persistence.
//! * [`io`]: SMAT and JSON matrix files, vectors and operator headers.
//!
//! Trial loops run through [`exec::Exec`], which uses rayon when the
//! `parallel` feature is enabled and plain iteration otherwise.

pub mod error;
pub mod exec;
pub mod geometry;
pub mod harness;
pub mod io;
pub mod linalg;
pub mod measurements;
pub mod rng;
pub mod schatten;
pub mod solvers;
pub mod stability;

pub use error::{Error, Result};
pub use exec::Exec;
pub use linalg::{svd, Mat, SvdFactors};
