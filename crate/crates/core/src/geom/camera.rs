use nalgebra::{Point3, Vector3};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CameraError {
    #[error("focal lengths and image size must be positive")]
    NonPositiveParameter,
    #[error("principal point ({cx}, {cy}) outside image {width}x{height}")]
    PrincipalPointOutsideImage {
        cx: f64,
        cy: f64,
        width: u32,
        height: u32,
    },
}

/// Pinhole camera intrinsics. Pixels are assumed pre-undistorted; +z is the
/// viewing direction in camera coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PinholeCamera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl PinholeCamera {
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: u32,
        height: u32,
    ) -> Result<Self, CameraError> {
        if !(fx > 0.0 && fy > 0.0) || width == 0 || height == 0 {
            return Err(CameraError::NonPositiveParameter);
        }
        if !(0.0..width as f64).contains(&cx) || !(0.0..height as f64).contains(&cy) {
            return Err(CameraError::PrincipalPointOutsideImage {
                cx,
                cy,
                width,
                height,
            });
        }
        Ok(Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        })
    }

    /// Projects a camera-frame point to pixel coordinates, or `None` when the
    /// point is behind the camera (z <= 0).
    pub fn project(&self, p_cam: &Point3<f64>) -> Option<(f64, f64)> {
        if p_cam.z <= 0.0 {
            return None;
        }
        Some((
            self.fx * p_cam.x / p_cam.z + self.cx,
            self.fy * p_cam.y / p_cam.z + self.cy,
        ))
    }

    /// Camera-frame point at depth `z` that projects to pixel `(u, v)`.
    pub fn unproject(&self, u: f64, v: f64, z: f64) -> Point3<f64> {
        Point3::new((u - self.cx) / self.fx * z, (v - self.cy) / self.fy * z, z)
    }

    /// Normalized image coordinates `(x, y) = ((u-cx)/fx, (v-cy)/fy)`.
    pub fn normalized(&self, u: f64, v: f64) -> (f64, f64) {
        ((u - self.cx) / self.fx, (v - self.cy) / self.fy)
    }

    /// Unit bearing vector through pixel `(u, v)`.
    pub fn bearing(&self, u: f64, v: f64) -> Vector3<f64> {
        let (x, y) = self.normalized(u, v);
        Vector3::new(x, y, 1.0).normalize()
    }

    /// Inclusive-left, exclusive-right bounds test: `[0, width) x [0, height)`.
    pub fn in_bounds(&self, u: f64, v: f64) -> bool {
        u >= 0.0 && u < self.width as f64 && v >= 0.0 && v < self.height as f64
    }

    pub fn mean_focal(&self) -> f64 {
        0.5 * (self.fx + self.fy)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn cam() -> PinholeCamera {
        PinholeCamera::new(100.0, 100.0, 50.0, 50.0, 100, 100).unwrap()
    }

    #[test]
    fn optical_axis_hits_principal_point() {
        assert_eq!(cam().project(&Point3::new(0.0, 0.0, 1.0)), Some((50.0, 50.0)));
    }

    #[test]
    fn offset_point_projects_linearly() {
        assert_eq!(cam().project(&Point3::new(0.1, 0.0, 1.0)), Some((60.0, 50.0)));
    }

    #[test]
    fn behind_camera_is_marker_not_error() {
        assert_eq!(cam().project(&Point3::new(0.0, 0.0, -1.0)), None);
        assert_eq!(cam().project(&Point3::new(0.0, 0.0, 0.0)), None);
    }

    #[test]
    fn unproject_inverts_project() {
        let c = cam();
        let p = Point3::new(0.37, -0.21, 2.5);
        let (u, v) = c.project(&p).unwrap();
        assert_relative_eq!(c.unproject(u, v, p.z), p, epsilon = 1e-9);
    }

    #[test]
    fn project_unproject_property() {
        use rand::{Rng, SeedableRng};
        let c = cam();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let p = Point3::new(
                rng.random_range(-5.0..5.0),
                rng.random_range(-5.0..5.0),
                rng.random_range(1e-3..100.0),
            );
            let (u, v) = c.project(&p).unwrap();
            assert!((c.unproject(u, v, p.z) - p).norm() < 1e-9);
        }
    }

    #[test]
    fn invalid_parameters_rejected() {
        assert!(PinholeCamera::new(0.0, 1.0, 0.0, 0.0, 10, 10).is_err());
        assert!(PinholeCamera::new(1.0, 1.0, 10.0, 0.0, 10, 10).is_err());
        assert!(PinholeCamera::new(1.0, 1.0, 0.0, 0.0, 0, 10).is_err());
    }
}
