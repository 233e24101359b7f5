//! Joint refinement of a 3D human body and an indoor scene.
//!
//! The engine takes initial estimates of a room layout, object boxes with meshes, the camera
//! pitch/roll and an articulated body, together with 2D detections and keypoints, and refines
//! them by minimizing a weighted sum of reprojection, collision, ground-support and contact
//! energies in two stages.
//!
//! Module map:
//!
//! * [`geometry`]: boxes, camera, projection and IoU
//! * [`mesh`]: triangle meshes, BVH distance queries, winding numbers and SDF grids
//! * [`body`]: the articulated body model and its priors
//! * [`losses`]: every energy term and the weighted total
//! * [`optim`]: parameter packing, gradients, Adam, L-BFGS and the two-stage schedule
//! * [`metrics`]: evaluation measures
//! * [`io`]: scene documents, configuration, synthetic scenes and mesh export
//! * [`cli`]: the command-line surface

pub mod body;
pub mod cli;
pub mod error;
pub mod geometry;
pub mod io;
pub mod losses;
pub mod mesh;
pub mod metrics;
pub mod optim;

pub use error::{Error, Result};
pub use geometry::{BBox3D, CameraPose, Intrinsics, Rect2D, RoomLayout, Vec2, Vec3};
