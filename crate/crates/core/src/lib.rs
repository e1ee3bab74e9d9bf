//! Volumetric radiative transfer and scattering tomography.
//!
//! The crate renders multi-view sky images of a heterogeneous scattering
//! atmosphere with three Monte Carlo methods (plain forward tracking with
//! local estimation, backward tracking, and a voxelized forward method that
//! caches per-voxel scattered radiance toward each camera), and recovers the
//! 3D aerosol extinction field from such images by surrogate-function
//! gradient descent.

pub mod error;
pub mod image;
pub mod inverse;
pub mod math;
pub mod optics;
pub mod oracle;
pub mod rng;
pub mod scene;
pub mod sensor;
pub mod transport;
pub mod vfmc;

pub use error::{Error, Result};
pub use math::Vec3;
pub use scene::{Camera, Channel, Medium, Scene, Sun, VoxelGrid};
