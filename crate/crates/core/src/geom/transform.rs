use nalgebra::{Point3, Quaternion, UnitQuaternion, Vector3};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TransformError {
    #[error("quaternion norm {norm} deviates from 1 beyond tolerance")]
    NonUnitQuaternion { norm: f64 },
    #[error("similarity scale must be positive, got {0}")]
    NonPositiveScale(f64),
}

/// An element of SE(3): rotation followed by translation (millimeters).
///
/// The stored quaternion is canonicalized to `w >= 0` so serialization is
/// unique.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    rotation: UnitQuaternion<f64>,
    translation: Vector3<f64>,
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            rotation: UnitQuaternion::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: UnitQuaternion<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation: canonicalize(rotation),
            translation,
        }
    }

    pub fn from_translation(translation: Vector3<f64>) -> Self {
        Self::new(UnitQuaternion::identity(), translation)
    }

    /// Builds a transform from raw quaternion components `(w, x, y, z)` and a
    /// translation. The quaternion must be unit length within 1e-6 (it is
    /// re-normalized exactly); used when reading poses from files.
    pub fn from_quaternion_wxyz(
        w: f64,
        x: f64,
        y: f64,
        z: f64,
        translation: Vector3<f64>,
    ) -> Result<Self, TransformError> {
        let q = Quaternion::new(w, x, y, z);
        let norm = q.norm();
        if !norm.is_finite() || (norm - 1.0).abs() > 1e-6 {
            return Err(TransformError::NonUnitQuaternion { norm });
        }
        // Skip the division when the components are already unit within
        // rounding, so serialization round-trips bit-exactly.
        let unit = if (norm - 1.0).abs() < 1e-12 {
            UnitQuaternion::new_unchecked(q)
        } else {
            UnitQuaternion::new_normalize(q)
        };
        Ok(Self::new(unit, translation))
    }

    pub fn rotation(&self) -> &UnitQuaternion<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    /// Quaternion components in `(w, x, y, z)` order.
    pub fn quaternion_wxyz(&self) -> [f64; 4] {
        let q = self.rotation.quaternion();
        [q.w, q.i, q.j, q.k]
    }

    /// Returns the transform that applies `other` first, then `self`.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        RigidTransform::new(
            self.rotation * other.rotation,
            self.rotation * other.translation + self.translation,
        )
    }

    pub fn apply(&self, p: &Point3<f64>) -> Point3<f64> {
        self.rotation * p + self.translation
    }

    pub fn apply_vector(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * v
    }

    pub fn inverse(&self) -> RigidTransform {
        let inv_rot = self.rotation.inverse();
        RigidTransform::new(inv_rot, -(inv_rot * self.translation))
    }

    /// Relative rotation angle to `other`, radians.
    pub fn rotation_angle_to(&self, other: &RigidTransform) -> f64 {
        self.rotation.angle_to(&other.rotation)
    }
}

/// An element of Sim(3): `p' = scale * R * p + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimilarityTransform {
    rigid: RigidTransform,
    scale: f64,
}

impl SimilarityTransform {
    pub fn new(rigid: RigidTransform, scale: f64) -> Result<Self, TransformError> {
        if !(scale > 0.0) || !scale.is_finite() {
            return Err(TransformError::NonPositiveScale(scale));
        }
        Ok(Self { rigid, scale })
    }

    pub fn identity() -> Self {
        Self {
            rigid: RigidTransform::identity(),
            scale: 1.0,
        }
    }

    pub fn from_rigid(rigid: RigidTransform) -> Self {
        Self { rigid, scale: 1.0 }
    }

    pub fn rigid(&self) -> &RigidTransform {
        &self.rigid
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn apply(&self, p: &Point3<f64>) -> Point3<f64> {
        Point3::from(self.scale * (self.rigid.rotation * p.coords)) + self.rigid.translation
    }
}

fn canonicalize(q: UnitQuaternion<f64>) -> UnitQuaternion<f64> {
    let c = q.quaternion();
    let flip = if c.w != 0.0 {
        c.w < 0.0
    } else if c.i != 0.0 {
        c.i < 0.0
    } else if c.j != 0.0 {
        c.j < 0.0
    } else {
        c.k < 0.0
    };
    if flip {
        UnitQuaternion::new_unchecked(-c)
    } else {
        q
    }
}
