//! Fundamental geometry: rigid/similarity transforms, pinhole projection,
//! triangle meshes with BVH-accelerated ray casting, and point-in-mesh tests.
//!
//! All distances are millimeters. All types are immutable after construction
//! and safe to share across threads.

mod bvh;
mod camera;
mod mesh;
mod ray;
mod transform;

pub use camera::{CameraError, PinholeCamera};
pub use mesh::{distance_to_surface_naive, ray_cast_naive, MeshError, RayHit, TriMesh};
pub use ray::{ray_triangle, Ray, RayError, EPSILON_ORIGIN};
pub use transform::{RigidTransform, SimilarityTransform, TransformError};

/// Points closer to the surface than this count as inside the mesh.
/// Localized poses can sit numerically on the cavity wall.
pub const EPSILON_SURFACE: f64 = 1e-3;
