//! Rigid pose estimation of a known triangle mesh from sparse, sequential
//! surface-point measurements.
//!
//! The estimator is a linear Kalman filter over the object's rotation
//! quaternion whose measurements are differences of point pairs, so
//! translation drops out and is recovered afterwards from centroids
//! ([`filter`]). The next measurement can be chosen by one-step lookahead,
//! maximizing the KL divergence between the predicted posterior and the
//! current belief ([`active`]). [`harness`] runs the full touch loop in
//! simulation and compares random against active selection.

pub mod active;
pub mod cli;
pub mod config;
pub mod correspondence;
pub mod error;
pub mod filter;
pub mod geom;
pub mod harness;
pub mod mesh;
pub mod report;
pub mod seeds;

pub use error::{Error, Result};
pub use filter::{FilterState, TiqfConfig};
pub use geom::{Pose, Quaternion, Vec3};
pub use mesh::TriangleMesh;
