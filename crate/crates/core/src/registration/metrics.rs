//! Reconstruction-quality metrics: chamfer, percentile Hausdorff, coverage,
//! and reprojection error.
//!
//! Per-point distances are computed in parallel but reduced in slice order,
//! so results are bit-stable across thread counts.

use nalgebra::Point3;
use rayon::prelude::*;
use thiserror::Error;

use crate::cloud::{KdTree3, PointCloud};
use crate::geom::{PinholeCamera, RigidTransform, TriMesh};
use crate::util::mean_stddev;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("point cloud is empty")]
    EmptyCloud,
    #[error("percentile must be in (0, 100], got {0}")]
    InvalidPercentile(f64),
    #[error("coverage radius must be positive, got {0}")]
    InvalidRadius(f64),
    #[error("no observations in front of their cameras")]
    NoValidObservations,
}

fn point_to_mesh_distances(source: &PointCloud, target: &TriMesh) -> Vec<f64> {
    source
        .points
        .par_iter()
        .map(|p| target.distance_to_surface(p))
        .collect()
}

/// Mean and standard deviation of the exact point-to-surface distance from
/// every source point to the target mesh (single-sided).
pub fn single_sided_chamfer(
    source: &PointCloud,
    target: &TriMesh,
) -> Result<(f64, f64), MetricsError> {
    source
        .require_non_empty()
        .map_err(|_| MetricsError::EmptyCloud)?;
    Ok(mean_stddev(&point_to_mesh_distances(source, target)))
}

/// Nearest-rank percentile of the sorted point-to-surface distances.
/// `p = 100` is the maximum.
pub fn hausdorff_percentile(
    source: &PointCloud,
    target: &TriMesh,
    p: f64,
) -> Result<f64, MetricsError> {
    source
        .require_non_empty()
        .map_err(|_| MetricsError::EmptyCloud)?;
    if !(p > 0.0 && p <= 100.0) {
        return Err(MetricsError::InvalidPercentile(p));
    }
    let mut distances = point_to_mesh_distances(source, target);
    distances.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap());
    let rank = ((p / 100.0) * distances.len() as f64).ceil() as usize;
    Ok(distances[rank.max(1) - 1])
}

/// Percentage of `ct_points` with a `recon_points` neighbor within
/// `radius_mm`.
pub fn coverage(
    ct_points: &PointCloud,
    recon_points: &PointCloud,
    radius_mm: f64,
) -> Result<f64, MetricsError> {
    ct_points
        .require_non_empty()
        .map_err(|_| MetricsError::EmptyCloud)?;
    recon_points
        .require_non_empty()
        .map_err(|_| MetricsError::EmptyCloud)?;
    if !(radius_mm > 0.0) {
        return Err(MetricsError::InvalidRadius(radius_mm));
    }
    let tree = KdTree3::build(&recon_points.points);
    let covered = ct_points
        .points
        .par_iter()
        .map(|p| {
            let (_, d) = tree.nearest_one(p).expect("non-empty tree");
            usize::from(d <= radius_mm)
        })
        .collect::<Vec<_>>()
        .iter()
        .sum::<usize>();
    Ok(100.0 * covered as f64 / ct_points.len() as f64)
}

/// One 2D feature observation of a known 3D point.
#[derive(Debug, Clone)]
pub struct ReprojectionObservation {
    /// Camera-from-world pose of the frame.
    pub pose: RigidTransform,
    pub camera: PinholeCamera,
    pub point_world: Point3<f64>,
    pub observed_px: [f64; 2],
}

#[derive(Debug, Clone, Copy)]
pub struct ReprojectionStats {
    pub mean_px: f64,
    pub used: usize,
    /// Observations whose point fell behind the camera, excluded from the
    /// mean.
    pub excluded_behind_camera: usize,
}

/// Mean pixel distance between observed features and the projections of
/// their 3D points.
pub fn reprojection_error(
    observations: &[ReprojectionObservation],
) -> Result<ReprojectionStats, MetricsError> {
    let mut total = 0.0;
    let mut used = 0usize;
    let mut excluded = 0usize;
    for obs in observations {
        let p_cam = obs.pose.apply(&obs.point_world);
        match obs.camera.project(&p_cam) {
            Some((u, v)) => {
                let du = u - obs.observed_px[0];
                let dv = v - obs.observed_px[1];
                total += (du * du + dv * dv).sqrt();
                used += 1;
            }
            None => excluded += 1,
        }
    }
    if used == 0 {
        return Err(MetricsError::NoValidObservations);
    }
    Ok(ReprojectionStats {
        mean_px: total / used as f64,
        used,
        excluded_behind_camera: excluded,
    })
}
