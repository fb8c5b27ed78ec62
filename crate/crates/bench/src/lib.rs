//! Shared fixtures for the solver benchmarks.

use jumpbvp::{BoundaryMap, JumpPath, LinearCoefficients};

/// The linear reference problem used across benchmarks.
pub fn reference_problem() -> (LinearCoefficients, BoundaryMap) {
    (
        LinearCoefficients::constants(1.0, 0.5, 1.0, 0.5),
        BoundaryMap::affine(-1.0, 0.0),
    )
}

/// A representative three-jump path.
pub fn reference_path() -> JumpPath {
    JumpPath::new(vec![0.21, 0.54, 0.87]).unwrap()
}
