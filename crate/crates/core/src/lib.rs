//! Numerical core for fitting generalized linear models on vertically
//! partitioned data with block coordinate descent.
//!
//! The crate is organised around a handful of building blocks:
//!
//! * [`design`] — centered feature blocks and validated target vectors.
//! * [`family`] — GLM families with canonical links and the IRLS working set.
//! * [`linalg`] — dense QR / SVD primitives used by everything else.
//! * [`fit`] — the full-data reference estimator (the verification oracle).
//! * [`bcd`] — cyclic and block coordinate descent run in a single process.
//! * [`stderr`] — standard-error recovery from the iteration trace alone.
//! * [`attack`] — reconstruction attacks quantifying what predictions reveal.
//! * [`sim`] — data generators for benchmarks and replication studies.
//!
//! Numeric routines are generic over the scalar type via [`scalar::Scalar`];
//! the crate-level aliases fix `f64`, which is what the wire protocol and the
//! command line use.

pub mod attack;
pub mod bcd;
pub mod design;
pub mod family;
pub mod fit;
pub mod linalg;
pub mod scalar;
pub mod sim;
pub mod stderr;

pub use scalar::Scalar;

/// Scalar type used by the protocol, the trace pipeline and the CLI.
pub type Real = f64;

/// Feature block over the default scalar.
pub type DesignBlock = design::DesignBlock<Real>;
/// Target vector over the default scalar.
pub type TargetVector = design::TargetVector<Real>;
/// Working set over the default scalar.
pub type WorkingSet = family::WorkingSet<Real>;
/// Full-data fit over the default scalar.
pub type FullFit = fit::FullFit<Real>;
/// Descent configuration over the default scalar.
pub type DescentConfig = bcd::DescentConfig<Real>;
