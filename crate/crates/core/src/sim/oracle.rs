//! Naive visibility oracle: exhaustive face iteration with an independent
//! ray/triangle formulation (plane intersection + barycentric test), no
//! acceleration structure. `visitation::visible_vertices` must agree with
//! this exactly.

use std::collections::BTreeSet;

use nalgebra::{Point3, Vector3};

use crate::geom::{PinholeCamera, RigidTransform, EPSILON_ORIGIN};
use crate::localization::camera_center;
use crate::phantom::LabeledMesh;
use crate::visitation::VisibilityParams;

/// Same contract as `visitation::visible_vertices`, computed by testing
/// every occlusion ray against every face.
pub fn brute_force_visibility(
    mesh: &LabeledMesh,
    cam: &PinholeCamera,
    pose: &RigidTransform,
    params: &VisibilityParams,
) -> BTreeSet<u32> {
    let tri = mesh.mesh();
    let center = camera_center(pose);
    let vertices = tri.vertices();
    let faces = tri.faces();
    let mut visible = BTreeSet::new();

    for (idx, vertex) in vertices.iter().enumerate() {
        let p_cam = pose.apply(vertex);
        let Some((u, v)) = cam.project(&p_cam) else {
            continue;
        };
        if !cam.in_bounds(u, v) {
            continue;
        }
        let to_vertex = vertex - center;
        let dist = to_vertex.norm();
        if dist > params.max_view_distance_mm || dist < 1e-12 {
            continue;
        }
        let dir = to_vertex / dist;

        let mut nearest = f64::INFINITY;
        for f in faces {
            let a = &vertices[f[0] as usize];
            let b = &vertices[f[1] as usize];
            let c = &vertices[f[2] as usize];
            if let Some(t) = ray_triangle_plane(&center, &dir, a, b, c) {
                nearest = nearest.min(t);
            }
        }
        if nearest >= dist - params.occlusion_epsilon_mm {
            visible.insert(idx as u32);
        }
    }
    visible
}

/// Plane-intersection + barycentric inside test; an implementation
/// independent of the Möller-Trumbore routine used by the accelerated
/// path. Returns the hit distance for `t > EPSILON_ORIGIN`.
fn ray_triangle_plane(
    origin: &Point3<f64>,
    dir: &Vector3<f64>,
    a: &Point3<f64>,
    b: &Point3<f64>,
    c: &Point3<f64>,
) -> Option<f64> {
    let v0 = b - a;
    let v1 = c - a;
    let normal = v0.cross(&v1);
    let denom = normal.dot(dir);
    if denom.abs() < 1e-14 {
        return None;
    }
    let t = normal.dot(&(a - origin)) / denom;
    if t <= EPSILON_ORIGIN {
        return None;
    }
    let p = origin + t * dir;
    let v2 = p - a;
    let d00 = v0.dot(&v0);
    let d01 = v0.dot(&v1);
    let d11 = v1.dot(&v1);
    let d20 = v2.dot(&v0);
    let d21 = v2.dot(&v1);
    let det = d00 * d11 - d01 * d01;
    if det.abs() < 1e-20 {
        return None;
    }
    let v = (d11 * d20 - d01 * d21) / det;
    let w = (d00 * d21 - d01 * d20) / det;
    if v >= 0.0 && w >= 0.0 && v + w <= 1.0 {
        Some(t)
    } else {
        None
    }
}
