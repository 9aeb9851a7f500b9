//! Stage-1 registration (point-to-point ICP with manual initialization)
//! and the reconstruction-quality metrics evaluated against the anatomy
//! mesh: single-sided chamfer, percentile Hausdorff, coverage, reprojection
//! error, and fiducial-based trajectory alignment.

mod align;
mod icp;
pub mod metrics;

pub use align::{
    align_fiducials, align_fiducials_with, target_registration_error, umeyama, AlignParams,
};
pub use icp::{icp_register, IcpParams, RegistrationResult};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum RegistrationError {
    #[error("point cloud is empty")]
    EmptyCloud,
    #[error("ICP parameters must be positive")]
    InvalidParams,
    #[error(
        "no correspondences within {cutoff_mm} mm at the initial transform; \
         initialization is too far from the target"
    )]
    InitializationTooFar { cutoff_mm: f64 },
    #[error("fiducial alignment needs at least 3 non-collinear pairs")]
    DegenerateFiducials,
    #[error("held-out pair set is empty")]
    EmptyHeldOut,
}
