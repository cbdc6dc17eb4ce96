//! Dense arithmetic, the Adam optimizer, seeded random streams and a
//! finite-difference gradient oracle.

pub mod adam;
pub mod finite_diff;
pub mod linalg;
pub mod rng;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use finite_diff::{finite_diff_grad, max_relative_error};
pub use linalg::Matrix;
pub use rng::Rng;
