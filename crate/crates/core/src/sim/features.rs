//! Synthetic features with ground-truth correspondence labels.
//!
//! Each mesh vertex owns a persistent random unit descriptor, so mutual-NN
//! matching recovers ground truth exactly and the geometric pipeline can be
//! tested in isolation. Realism of the descriptors is explicitly not a
//! goal.

use nalgebra::Point3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{PosedFrame, SimError};
use crate::cloud::PointCloud;
use crate::geom::PinholeCamera;
use crate::localization::{Keypoint, QueryFrame, ReferenceFrame, ReferenceModel};
use crate::phantom::LabeledMesh;
use crate::registration::RegistrationResult;
use crate::util::derive_seed;
use crate::visitation::{visible_vertices, VisibilityParams};

/// Cap on keypoints emitted per frame; beyond this, the most salient
/// visible vertices are kept.
pub const MAX_KEYPOINTS_PER_FRAME: usize = 200;

/// Global descriptors are position histograms on a fixed 4x4x4 grid,
/// independent of the local descriptor dimension.
pub const GLOBAL_DESCRIPTOR_DIM: usize = 64;

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseSpec {
    pub pixel_noise_sigma_px: f64,
    /// Fraction of keypoints replaced by uniform-random pixels with fresh
    /// descriptors.
    pub outlier_fraction: f64,
    pub descriptor_dim: usize,
    pub seed: u64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self {
            pixel_noise_sigma_px: 0.0,
            outlier_fraction: 0.0,
            descriptor_dim: 64,
            seed: 0,
        }
    }
}

/// Features for one video plus per-keypoint truth labels (the mesh vertex
/// each keypoint observes; `None` for injected outliers).
#[derive(Debug, Clone)]
pub struct SynthesizedFeatures {
    pub frames: Vec<QueryFrame>,
    pub truth: Vec<Vec<Option<u32>>>,
}

/// Generates per-frame features: visible-vertex keypoints with Gaussian
/// pixel noise and persistent per-vertex descriptors, a configurable
/// outlier fraction, and a global descriptor built from a position
/// histogram of the visible surface (nearby frames get similar
/// descriptors). Frames that see nothing produce empty keypoint lists.
pub fn synthesize_features(
    phantom: &LabeledMesh,
    cam: &PinholeCamera,
    frames: &[PosedFrame],
    nspec: &NoiseSpec,
    vis: &VisibilityParams,
) -> Result<SynthesizedFeatures, SimError> {
    if !(nspec.pixel_noise_sigma_px >= 0.0) {
        return Err(SimError::InvalidSpec("pixel noise sigma must be >= 0".into()));
    }
    if !(0.0..1.0).contains(&nspec.outlier_fraction) {
        return Err(SimError::InvalidSpec(
            "outlier_fraction must be in [0, 1)".into(),
        ));
    }
    if nspec.descriptor_dim == 0 {
        return Err(SimError::InvalidSpec("descriptor_dim must be positive".into()));
    }
    let (bb_min, bb_max) = phantom.mesh().bounds();
    let mut out_frames = Vec::with_capacity(frames.len());
    let mut out_truth = Vec::with_capacity(frames.len());

    for frame in frames {
        let visible = visible_vertices(phantom, cam, &frame.pose, vis);
        if visible.is_empty() {
            log::warn!("frame {} sees no surface points", frame.frame_id);
            out_frames.push(QueryFrame {
                frame_id: frame.frame_id,
                timestamp_s: frame.timestamp_s,
                global_descriptor: vec![0.0; GLOBAL_DESCRIPTOR_DIM],
                keypoints: Vec::new(),
            });
            out_truth.push(Vec::new());
            continue;
        }

        let visible: Vec<u32> = visible.into_iter().collect();
        // Keep the most salient visible vertices. Salience is a persistent
        // per-vertex score, so overlapping frames select nearly the same
        // subset -- the way real detectors refire on the same structure.
        // A positional stride would give two dense frames almost disjoint
        // keypoint sets and nothing to match.
        let selected: Vec<u32> = if visible.len() <= MAX_KEYPOINTS_PER_FRAME {
            visible.clone()
        } else {
            let mut ranked: Vec<u32> = visible.clone();
            ranked.sort_unstable_by_key(|&vid| (vertex_salience(vid), vid));
            let mut kept: Vec<u32> = ranked[..MAX_KEYPOINTS_PER_FRAME].to_vec();
            kept.sort_unstable();
            kept
        };

        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(nspec.seed, frame.frame_id));
        let noise = Normal::new(0.0, nspec.pixel_noise_sigma_px.max(1e-300)).unwrap();
        let mut keypoints = Vec::with_capacity(selected.len());
        let mut truth = Vec::with_capacity(selected.len());
        for &vid in &selected {
            let vertex = phantom.mesh().vertices()[vid as usize];
            let (u, v) = cam
                .project(&frame.pose.apply(&vertex))
                .expect("visible vertices are in front of the camera");
            let mut pixel = [u, v];
            if nspec.pixel_noise_sigma_px > 0.0 {
                pixel[0] += noise.sample(&mut rng);
                pixel[1] += noise.sample(&mut rng);
            }
            pixel[0] = pixel[0].clamp(0.0, cam.width as f64 - 1e-6);
            pixel[1] = pixel[1].clamp(0.0, cam.height as f64 - 1e-6);
            keypoints.push(Keypoint {
                pixel,
                descriptor: vertex_descriptor(nspec, vid),
                point3d_id: None,
            });
            truth.push(Some(vid));
        }

        // Replace a seeded subset with outliers: random pixel, fresh
        // descriptor, no truth label.
        let n_outliers =
            ((keypoints.len() as f64) * nspec.outlier_fraction).round() as usize;
        if n_outliers > 0 {
            let chosen = rand::seq::index::sample(&mut rng, keypoints.len(), n_outliers);
            for idx in chosen.iter() {
                keypoints[idx].pixel = [
                    rng.random_range(0.0..cam.width as f64),
                    rng.random_range(0.0..cam.height as f64),
                ];
                keypoints[idx].descriptor =
                    random_unit_descriptor(&mut rng, nspec.descriptor_dim);
                truth[idx] = None;
            }
        }

        let global = global_descriptor(phantom, &visible, &bb_min, &bb_max, GLOBAL_DESCRIPTOR_DIM);
        out_frames.push(QueryFrame {
            frame_id: frame.frame_id,
            timestamp_s: frame.timestamp_s,
            global_descriptor: global,
            keypoints,
        });
        out_truth.push(truth);
    }

    Ok(SynthesizedFeatures {
        frames: out_frames,
        truth: out_truth,
    })
}

/// Persistent per-vertex detector salience; lower sorts first.
fn vertex_salience(vertex_id: u32) -> u64 {
    derive_seed(0x7361_6c69_656e_6365, vertex_id as u64)
}

/// Persistent descriptor for a mesh vertex. Deliberately independent of
/// the per-video noise seed: descriptors stand in for the physical
/// appearance of a surface point, so every video of the same phantom must
/// observe the same vector for the same vertex.
fn vertex_descriptor(nspec: &NoiseSpec, vertex_id: u32) -> Vec<f64> {
    let mut rng =
        ChaCha8Rng::seed_from_u64(derive_seed(0x6465_7363_7269_7074, vertex_id as u64));
    random_unit_descriptor(&mut rng, nspec.descriptor_dim)
}

fn random_unit_descriptor(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    let normal = Normal::new(0.0, 1.0).unwrap();
    loop {
        let v: Vec<f64> = (0..dim).map(|_| normal.sample(rng)).collect();
        let norm: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-9 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

/// Normalized histogram of visible-vertex positions over a fixed grid of
/// the mesh bounding box. Frames seeing the same region of anatomy get
/// high cosine similarity; disjoint regions score near zero.
fn global_descriptor(
    phantom: &LabeledMesh,
    visible: &[u32],
    bb_min: &Point3<f64>,
    bb_max: &Point3<f64>,
    dim: usize,
) -> Vec<f64> {
    let side = (dim as f64).cbrt().ceil().max(1.0) as usize;
    let mut hist = vec![0.0f64; dim];
    for &vid in visible {
        let p = &phantom.mesh().vertices()[vid as usize];
        let mut flat = 0usize;
        for axis in 0..3 {
            let extent = (bb_max[axis] - bb_min[axis]).max(1e-9);
            let cell = (((p[axis] - bb_min[axis]) / extent) * side as f64)
                .floor()
                .clamp(0.0, side as f64 - 1.0) as usize;
            flat = flat * side + cell;
        }
        hist[flat % dim] += 1.0;
    }
    let norm: f64 = hist.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        for h in &mut hist {
            *h /= norm;
        }
    }
    hist
}

/// Assembles a reference model from synthesized reference-video features:
/// the cloud holds every distinct observed vertex, and each keypoint links
/// to its cloud point. The model is already in the phantom (CT) frame, so
/// the registration is the identity.
pub fn build_reference_model(
    phantom: &LabeledMesh,
    frames: &[PosedFrame],
    synth: &SynthesizedFeatures,
) -> ReferenceModel {
    let mut seen: Vec<u32> = synth
        .truth
        .iter()
        .flatten()
        .filter_map(|t| *t)
        .collect();
    seen.sort_unstable();
    seen.dedup();
    let cloud_index: std::collections::HashMap<u32, u32> = seen
        .iter()
        .enumerate()
        .map(|(i, &vid)| (vid, i as u32))
        .collect();
    let cloud = PointCloud::new(
        seen.iter()
            .map(|&vid| phantom.mesh().vertices()[vid as usize])
            .collect(),
    );

    let ref_frames: Vec<ReferenceFrame> = frames
        .iter()
        .zip(&synth.frames)
        .zip(&synth.truth)
        .map(|((posed, feat), truth)| ReferenceFrame {
            frame_id: feat.frame_id,
            pose: posed.pose,
            global_descriptor: feat.global_descriptor.clone(),
            keypoints: feat
                .keypoints
                .iter()
                .zip(truth)
                .map(|(kp, t)| Keypoint {
                    pixel: kp.pixel,
                    descriptor: kp.descriptor.clone(),
                    point3d_id: t.map(|vid| cloud_index[&vid]),
                })
                .collect(),
        })
        .collect();

    ReferenceModel::new(cloud, ref_frames, RegistrationResult::identity())
        .expect("synthesized model is internally consistent")
}
