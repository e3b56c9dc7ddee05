//! Rotation-invariant, chirality-sensitive shape matching with 3D Zernike
//! moments.
//!
//! A point cloud is projected onto the real 3D Zernike basis, the evolved
//! spectrum is aligned to a target spectrum by optimizing a unit quaternion
//! on S³, and the aligned spectral error is differentiated with respect to
//! the points and weights through the alignment optimum.
//!
//! Module map:
//!
//! - [`cloud`], [`fixtures`]: point clouds, normalization, synthetic shapes
//! - [`zernike`]: basis evaluation and moment projection
//! - [`rotation`]: quaternions and real Wigner-D blocks
//! - [`alignment`]: the quaternion inner problem
//! - [`loss`]: the matching loss and its gradients
//! - [`metrics`]: baseline distances and spectral invariants
//! - [`optimize`]: direct shape optimization
//! - [`diagnostics`]: Hessian, gimbal-lock and runtime probes
//! - [`io`], [`config`], [`cli`]: files, run configuration, command line

pub mod alignment;
pub mod cli;
pub mod cloud;
pub mod config;
pub mod diagnostics;
pub mod error;
pub mod fixtures;
pub mod io;
pub mod loss;
pub mod metrics;
pub mod optimize;
pub mod rng;
pub mod rotation;
pub mod zernike;

pub use cloud::{Axis, NormalizedCloud, Point, PointCloud};
pub use error::{Error, Result};
pub use rotation::{UnitQuaternion, WignerBlockSet};
pub use zernike::{MomentTensor, ZernikeBasis};
