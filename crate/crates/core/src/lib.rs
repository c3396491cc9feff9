//! Geometry, simulation and data layer for learned viewpoint planning around occluders.
//!
//! Everything numeric in [`se3`] is generic over [`Scalar`]; the simulator and
//! dataset work in `f64` through the aliases below.

pub mod dataset;
pub mod episode;
pub mod error;
pub mod expert;
pub mod scalar;
pub mod se3;
pub mod sim;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Vec3d = se3::Vec3<f64>;
pub type Quatd = se3::Quat<f64>;
pub type Pose = se3::Pose<f64>;
pub type PoseDelta = se3::PoseDelta<f64>;
pub type Trajectory = se3::Trajectory<f64>;
pub type Pose32 = se3::Pose<f32>;
pub type PoseDelta32 = se3::PoseDelta<f32>;
