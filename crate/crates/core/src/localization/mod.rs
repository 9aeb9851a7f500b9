//! Stage-2a query localization: descriptor retrieval, essential-matrix
//! match verification, robust absolute pose estimation, and spatio-temporal
//! consistency filtering.
//!
//! Frames that cannot be localized are first-class outcomes, not failures:
//! every input frame comes back with a status.

mod essential;
mod filters;
mod matching;
mod pnp;
mod retrieval;

pub use essential::{verify_pair_essential, PairRejection, PairVerification};
pub use filters::{spatial_filter, temporal_filter};
pub use matching::match_descriptors;
pub use pnp::{estimate_absolute_pose, Correspondence2d3d, PoseEstimate};
pub use retrieval::retrieve_candidates;

use std::collections::{BTreeMap, HashMap};

use nalgebra::Point3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cloud::PointCloud;
use crate::geom::{MeshError, PinholeCamera, RigidTransform};
use crate::phantom::LabeledMesh;
use crate::registration::RegistrationResult;
use crate::util::derive_seed;

#[derive(Debug, Error)]
pub enum LocalizationError {
    #[error("descriptor dimension mismatch: query {query}, model {model}")]
    DimensionMismatch { query: usize, model: usize },
    #[error("timestamps must be strictly increasing (violated at frame {frame_id})")]
    NonMonotonicTimestamps { frame_id: u64 },
    #[error("frame {frame_id} keypoint references 3D point {point_id} but cloud has {cloud_len}")]
    PointIdOutOfRange {
        frame_id: u64,
        point_id: u32,
        cloud_len: usize,
    },
    #[error("frame {frame_id} global descriptor norm {norm} is not unit")]
    InvalidGlobalDescriptor { frame_id: u64, norm: f64 },
    #[error("reference frame {frame_id} keypoint ({u}, {v}) outside image bounds")]
    KeypointOutOfBounds { frame_id: u64, u: f64, v: f64 },
    #[error("invalid localization parameter: {0}")]
    InvalidParams(String),
    #[error(transparent)]
    Mesh(#[from] MeshError),
}

/// A detected image feature: pixel position, local descriptor, and (for
/// reference frames) the id of the 3D cloud point it observes.
#[derive(Debug, Clone, PartialEq)]
pub struct Keypoint {
    pub pixel: [f64; 2],
    pub descriptor: Vec<f64>,
    pub point3d_id: Option<u32>,
}

/// A timestamped query video frame with features.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryFrame {
    pub frame_id: u64,
    pub timestamp_s: f64,
    pub global_descriptor: Vec<f64>,
    pub keypoints: Vec<Keypoint>,
}

/// A posed frame of the reference reconstruction. The pose maps world (CT)
/// coordinates into the camera frame.
#[derive(Debug, Clone)]
pub struct ReferenceFrame {
    pub frame_id: u64,
    pub pose: RigidTransform,
    pub global_descriptor: Vec<f64>,
    pub keypoints: Vec<Keypoint>,
}

/// Reconstruction point cloud plus posed reference frames, already in the
/// CT frame. The localization prior for every query video of the phantom.
#[derive(Debug)]
pub struct ReferenceModel {
    cloud: PointCloud,
    frames: Vec<ReferenceFrame>,
    registration: RegistrationResult,
    by_id: BTreeMap<u64, usize>,
}

impl ReferenceModel {
    /// Validates point-id links and global descriptors. Frames without
    /// keypoints are dropped (they cannot support localization).
    pub fn new(
        cloud: PointCloud,
        frames: Vec<ReferenceFrame>,
        registration: RegistrationResult,
    ) -> Result<Self, LocalizationError> {
        let mut kept = Vec::with_capacity(frames.len());
        for frame in frames {
            if frame.keypoints.is_empty() {
                log::warn!("reference frame {} has no keypoints; dropped", frame.frame_id);
                continue;
            }
            let norm: f64 = frame
                .global_descriptor
                .iter()
                .map(|v| v * v)
                .sum::<f64>()
                .sqrt();
            if (norm - 1.0).abs() > 1e-6 {
                return Err(LocalizationError::InvalidGlobalDescriptor {
                    frame_id: frame.frame_id,
                    norm,
                });
            }
            for kp in &frame.keypoints {
                if let Some(id) = kp.point3d_id {
                    if id as usize >= cloud.len() {
                        return Err(LocalizationError::PointIdOutOfRange {
                            frame_id: frame.frame_id,
                            point_id: id,
                            cloud_len: cloud.len(),
                        });
                    }
                }
            }
            kept.push(frame);
        }
        let by_id = kept
            .iter()
            .enumerate()
            .map(|(i, f)| (f.frame_id, i))
            .collect();
        Ok(Self {
            cloud,
            frames: kept,
            registration,
            by_id,
        })
    }

    pub fn cloud(&self) -> &PointCloud {
        &self.cloud
    }

    pub fn frames(&self) -> &[ReferenceFrame] {
        &self.frames
    }

    pub fn registration(&self) -> &RegistrationResult {
        &self.registration
    }

    pub fn frame_by_id(&self, frame_id: u64) -> Option<&ReferenceFrame> {
        self.by_id.get(&frame_id).map(|&i| &self.frames[i])
    }
}

/// Outcome classification for a localized frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrameStatus {
    Accepted,
    RejectedSpatial,
    RejectedTemporal,
    Unlocalized,
}

impl FrameStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            FrameStatus::Accepted => "accepted",
            FrameStatus::RejectedSpatial => "rejected_spatial",
            FrameStatus::RejectedTemporal => "rejected_temporal",
            FrameStatus::Unlocalized => "unlocalized",
        }
    }
}

impl std::str::FromStr for FrameStatus {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "accepted" => Ok(FrameStatus::Accepted),
            "rejected_spatial" => Ok(FrameStatus::RejectedSpatial),
            "rejected_temporal" => Ok(FrameStatus::RejectedTemporal),
            "unlocalized" => Ok(FrameStatus::Unlocalized),
            other => Err(format!("unknown frame status `{other}`")),
        }
    }
}

/// Per-frame localization result. `pose` is camera-from-world and present
/// for every status except `Unlocalized`.
#[derive(Debug, Clone)]
pub struct LocalizedFrame {
    pub frame_id: u64,
    pub timestamp_s: f64,
    pub pose: Option<RigidTransform>,
    pub inlier_count: u32,
    pub inlier_ratio: f64,
    pub status: FrameStatus,
}

impl LocalizedFrame {
    /// Camera center in world coordinates.
    pub fn camera_center(&self) -> Option<Point3<f64>> {
        self.pose.as_ref().map(camera_center)
    }
}

/// World-frame camera center of a camera-from-world pose.
pub fn camera_center(pose: &RigidTransform) -> Point3<f64> {
    pose.inverse().apply(&Point3::origin())
}

/// Tunables for the stage-2a pipeline. Defaults are stated openly here
/// because the corresponding upstream heuristics are not published; every
/// value can be overridden from the config file.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct LocalizationParams {
    pub retrieval_k: usize,
    pub min_match_count: usize,
    pub min_inlier_count: usize,
    pub min_inlier_ratio: f64,
    pub essential_sampson_threshold_px: f64,
    pub pnp_reprojection_threshold_px: f64,
    pub ransac_iterations: u32,
    pub rng_seed: u64,
    pub v_max_mm_per_s: f64,
    pub lowe_ratio: f64,
}

impl Default for LocalizationParams {
    fn default() -> Self {
        Self {
            retrieval_k: 10,
            min_match_count: 20,
            min_inlier_count: 15,
            min_inlier_ratio: 0.3,
            essential_sampson_threshold_px: 2.0,
            pnp_reprojection_threshold_px: 4.0,
            ransac_iterations: 2000,
            rng_seed: 0,
            v_max_mm_per_s: 135.0,
            lowe_ratio: 0.8,
        }
    }
}

impl LocalizationParams {
    pub fn validate(&self) -> Result<(), LocalizationError> {
        let err = |m: &str| Err(LocalizationError::InvalidParams(m.to_string()));
        if self.retrieval_k == 0 {
            return err("retrieval_k must be positive");
        }
        if self.min_match_count == 0 || self.min_inlier_count == 0 {
            return err("match/inlier minimums must be positive");
        }
        if !(self.min_inlier_ratio > 0.0 && self.min_inlier_ratio <= 1.0) {
            return err("min_inlier_ratio must be in (0, 1]");
        }
        if !(self.lowe_ratio > 0.0 && self.lowe_ratio <= 1.0) {
            return err("lowe_ratio must be in (0, 1]");
        }
        if !(self.essential_sampson_threshold_px > 0.0)
            || !(self.pnp_reprojection_threshold_px > 0.0)
            || !(self.v_max_mm_per_s > 0.0)
        {
            return err("thresholds must be positive");
        }
        if self.ransac_iterations == 0 {
            return err("ransac_iterations must be positive");
        }
        Ok(())
    }
}

/// Localizes every query frame against the reference model, then applies
/// the spatial (inside-mesh) and temporal (velocity bound) filters.
///
/// Per-frame work runs in parallel; results are deterministic for a given
/// `rng_seed` regardless of thread count because every frame derives its
/// own seed from `(rng_seed, frame_id)`.
pub fn localize_video(
    query: &[QueryFrame],
    model: &ReferenceModel,
    mesh: &LabeledMesh,
    cam: &PinholeCamera,
    params: &LocalizationParams,
) -> Result<Vec<LocalizedFrame>, LocalizationError> {
    params.validate()?;
    for pair in query.windows(2) {
        if pair[1].timestamp_s <= pair[0].timestamp_s {
            return Err(LocalizationError::NonMonotonicTimestamps {
                frame_id: pair[1].frame_id,
            });
        }
    }
    if let Some(frame) = model.frames().first() {
        if let Some(q) = query.first() {
            if q.global_descriptor.len() != frame.global_descriptor.len() {
                return Err(LocalizationError::DimensionMismatch {
                    query: q.global_descriptor.len(),
                    model: frame.global_descriptor.len(),
                });
            }
        }
    }
    for frame in model.frames() {
        for kp in &frame.keypoints {
            if !cam.in_bounds(kp.pixel[0], kp.pixel[1]) {
                return Err(LocalizationError::KeypointOutOfBounds {
                    frame_id: frame.frame_id,
                    u: kp.pixel[0],
                    v: kp.pixel[1],
                });
            }
        }
    }

    let mut frames: Vec<LocalizedFrame> = query
        .par_iter()
        .map(|q| localize_frame(q, model, cam, params))
        .collect();

    spatial_filter(&mut frames, mesh.mesh())?;
    temporal_filter(&mut frames, params.v_max_mm_per_s)?;
    Ok(frames)
}

fn localize_frame(
    query: &QueryFrame,
    model: &ReferenceModel,
    cam: &PinholeCamera,
    params: &LocalizationParams,
) -> LocalizedFrame {
    let frame_seed = derive_seed(params.rng_seed, query.frame_id);
    let unlocalized = LocalizedFrame {
        frame_id: query.frame_id,
        timestamp_s: query.timestamp_s,
        pose: None,
        inlier_count: 0,
        inlier_ratio: 0.0,
        status: FrameStatus::Unlocalized,
    };

    if query.keypoints.is_empty() {
        return unlocalized;
    }
    let candidates = match retrieve_candidates(query, model, params.retrieval_k) {
        Ok(c) => c,
        Err(_) => return unlocalized,
    };

    // Pool 2D-3D correspondences from verified pairs. Candidates arrive in
    // descending similarity order, so the first writer for a query keypoint
    // is the most similar reference frame.
    let mut pooled: HashMap<usize, u32> = HashMap::new();
    for (rank, (ref_id, _sim)) in candidates.iter().enumerate() {
        let reference = model
            .frame_by_id(*ref_id)
            .expect("retrieval returns known frames");
        let matches = match_descriptors(&query.keypoints, &reference.keypoints, params.lowe_ratio);
        let verification = verify_pair_essential(
            &matches,
            &query.keypoints,
            &reference.keypoints,
            cam,
            params,
            derive_seed(frame_seed, rank as u64 + 1),
        );
        if !verification.accepted {
            continue;
        }
        for (m, &(q_idx, r_idx)) in matches.iter().enumerate() {
            if !verification.inlier_mask[m] {
                continue;
            }
            if let Some(point_id) = reference.keypoints[r_idx].point3d_id {
                pooled.entry(q_idx).or_insert(point_id);
            }
        }
    }

    if pooled.len() < 4 {
        return unlocalized;
    }
    let mut corr_indices: Vec<(usize, u32)> = pooled.into_iter().collect();
    corr_indices.sort_unstable();
    let corrs: Vec<Correspondence2d3d> = corr_indices
        .iter()
        .map(|&(q_idx, point_id)| Correspondence2d3d {
            pixel: query.keypoints[q_idx].pixel,
            point: model.cloud().points[point_id as usize],
        })
        .collect();

    match estimate_absolute_pose(&corrs, cam, params, derive_seed(frame_seed, 0)) {
        Some(estimate) => LocalizedFrame {
            frame_id: query.frame_id,
            timestamp_s: query.timestamp_s,
            pose: Some(estimate.pose),
            inlier_count: estimate.inlier_count as u32,
            inlier_ratio: estimate.inlier_count as f64 / corrs.len() as f64,
            status: FrameStatus::Accepted,
        },
        None => unlocalized,
    }
}
