use nalgebra::{Point3, Vector3};
use thiserror::Error;

/// Intersections closer to the ray origin than this (mm) are discarded so a
/// ray starting on a surface does not hit it again.
pub const EPSILON_ORIGIN: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum RayError {
    #[error("ray direction must be non-zero")]
    ZeroDirection,
}

/// A half-line with unit direction.
#[derive(Debug, Clone, Copy)]
pub struct Ray {
    pub origin: Point3<f64>,
    pub direction: Vector3<f64>,
}

impl Ray {
    pub fn new(origin: Point3<f64>, direction: Vector3<f64>) -> Result<Self, RayError> {
        let norm = direction.norm();
        if norm == 0.0 || !norm.is_finite() {
            return Err(RayError::ZeroDirection);
        }
        Ok(Self {
            origin,
            direction: direction / norm,
        })
    }

    pub fn point_at(&self, t: f64) -> Point3<f64> {
        self.origin + t * self.direction
    }
}

/// Möller–Trumbore ray/triangle intersection, two-sided.
///
/// Returns `(t, u, v)` where `t > EPSILON_ORIGIN` is the hit distance and
/// `(u, v)` are barycentric coordinates of the hit with respect to `(b, c)`.
pub fn ray_triangle(
    ray: &Ray,
    a: &Point3<f64>,
    b: &Point3<f64>,
    c: &Point3<f64>,
) -> Option<(f64, f64, f64)> {
    let e1 = b - a;
    let e2 = c - a;
    let pvec = ray.direction.cross(&e2);
    let det = e1.dot(&pvec);
    if det.abs() < 1e-14 {
        return None; // ray parallel to triangle plane
    }
    let inv_det = 1.0 / det;
    let tvec = ray.origin - a;
    let u = tvec.dot(&pvec) * inv_det;
    if !(0.0..=1.0).contains(&u) {
        return None;
    }
    let qvec = tvec.cross(&e1);
    let v = ray.direction.dot(&qvec) * inv_det;
    if v < 0.0 || u + v > 1.0 {
        return None;
    }
    let t = e2.dot(&qvec) * inv_det;
    if t > EPSILON_ORIGIN {
        Some((t, u, v))
    } else {
        None
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hits_front_and_back_faces() {
        let a = Point3::new(-1.0, -1.0, 5.0);
        let b = Point3::new(1.0, -1.0, 5.0);
        let c = Point3::new(0.0, 1.0, 5.0);
        let forward = Ray::new(Point3::origin(), Vector3::z()).unwrap();
        let (t, _, _) = ray_triangle(&forward, &a, &b, &c).unwrap();
        assert!((t - 5.0).abs() < 1e-12);
        // Same triangle seen from the other side.
        let behind = Ray::new(Point3::new(0.0, 0.0, 10.0), -Vector3::z()).unwrap();
        let (t, _, _) = ray_triangle(&behind, &a, &b, &c).unwrap();
        assert!((t - 5.0).abs() < 1e-12);
    }

    #[test]
    fn miss_and_near_origin_hits_rejected() {
        let a = Point3::new(-1.0, -1.0, 5.0);
        let b = Point3::new(1.0, -1.0, 5.0);
        let c = Point3::new(0.0, 1.0, 5.0);
        let away = Ray::new(Point3::origin(), -Vector3::z()).unwrap();
        assert!(ray_triangle(&away, &a, &b, &c).is_none());

        let on_surface = Ray::new(Point3::new(0.0, 0.0, 5.0), Vector3::z()).unwrap();
        assert!(ray_triangle(&on_surface, &a, &b, &c).is_none());
    }

    #[test]
    fn zero_direction_rejected() {
        assert!(Ray::new(Point3::origin(), Vector3::zeros()).is_err());
    }
}
