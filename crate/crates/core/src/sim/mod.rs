//! Synthetic occlusion scenes, RGB-D ray casting and visibility ground truth.

pub mod camera;
#[cfg(any(test, feature = "oracle"))]
pub mod oracle;
pub mod render;
pub mod scene;
pub mod viewpoints;
pub mod visibility;

pub use camera::CameraIntrinsics;
pub use render::{render, Frame, HIT_BACKGROUND, HIT_FIRST_OCCLUDER, HIT_TARGET};
pub use scene::{
    certify, generate_scene, Aabb, Certification, Difficulty, Occluder, OccluderShape, Scene,
    Shell, Sphere,
};
pub use viewpoints::{sample_initial_viewpoints, shell_lattice, shell_lattice_around};
pub use visibility::{
    is_success, observe, visibility, Observation, VisibilityReport, DEFAULT_TAU_V,
};
