//! Lower and upper bounds on the genuine multipartite entanglement of
//! three-qubit states from the expectation value of a single Hermitian
//! operator.
//!
//! Basis index convention: |q1 q2 q3⟩ has index k = 4·q1 + 2·q2 + q3, so
//! qubit 1 is the most significant bit and |110⟩ is index 6.
//!
//! - [`qstate`]: states, operators, Pauli decomposition, measurement settings.
//! - [`measures`]: Concurrence Fill and GMC of pure states.
//! - [`estimators`]: fiber calibration, bounds, parameter tuning.
//! - [`convexroof`]: numerical convex-roof oracle for mixed states.
//! - [`lab`]: simulated preparation, counts, expectation estimates, tomography.
//! - [`reproduce`]: end-to-end benchmark pipelines.

pub mod convexroof;
pub mod error;
pub mod estimators;
pub mod lab;
pub mod measures;
pub mod optim;
pub mod qstate;
pub mod reproduce;
pub mod rng;

pub use error::{Error, Result};
