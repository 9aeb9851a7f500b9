//! Stage-2b: ray-cast vertex visibility per localized pose, aggregation
//! over a video, per-calyx visitation scores, threshold classification,
//! and repeated k-fold threshold cross-validation.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::Point3;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{PinholeCamera, Ray, RigidTransform};
use crate::localization::camera_center;
use crate::phantom::LabeledMesh;
use crate::util::derive_seed;

#[derive(Debug, Error)]
pub enum VisitationError {
    #[error("visibility parameters must be positive")]
    InvalidParams,
    #[error("classification threshold must be in [0, 1], got {0}")]
    ThresholdOutOfRange(f64),
    #[error("one of the score sets is empty (repeat {repeat}, fold {fold})")]
    DegenerateFold { repeat: usize, fold: usize },
    #[error("{videos} videos cannot be split into {k} equal folds")]
    UnevenFolds { videos: usize, k: usize },
    #[error("no annotated videos supplied")]
    NoVideos,
    #[error("video {video_id}: expert labels and scores cover different calyces")]
    LabelScoreMismatch { video_id: String },
}

/// Visibility model parameters. The view distance bound stands in for the
/// effective illumination range of the scope; both knobs are pinned by the
/// acceptance tests and configurable in the CLI.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct VisibilityParams {
    pub max_view_distance_mm: f64,
    pub occlusion_epsilon_mm: f64,
}

impl Default for VisibilityParams {
    fn default() -> Self {
        Self {
            max_view_distance_mm: 50.0,
            occlusion_epsilon_mm: 0.1,
        }
    }
}

impl VisibilityParams {
    pub fn validate(&self) -> Result<(), VisitationError> {
        if self.max_view_distance_mm > 0.0 && self.occlusion_epsilon_mm > 0.0 {
            Ok(())
        } else {
            Err(VisitationError::InvalidParams)
        }
    }
}

/// Mesh vertices visible from a camera pose.
///
/// A vertex is visible iff it is in front of the camera, projects inside
/// the image bounds, lies within `max_view_distance_mm` of the camera
/// center, and the ray toward it hits the mesh no closer than the vertex
/// distance minus `occlusion_epsilon_mm` (so a vertex's own incident faces
/// never occlude it).
pub fn visible_vertices(
    mesh: &LabeledMesh,
    cam: &PinholeCamera,
    pose: &RigidTransform,
    params: &VisibilityParams,
) -> BTreeSet<u32> {
    let tri = mesh.mesh();
    let center = camera_center(pose);
    let mut visible = BTreeSet::new();
    for (idx, vertex) in tri.vertices().iter().enumerate() {
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
        let ray = Ray::new(center, to_vertex).expect("non-zero direction");
        let unoccluded = match tri.ray_cast(&ray) {
            Some(hit) => hit.distance >= dist - params.occlusion_epsilon_mm,
            None => true,
        };
        if unoccluded {
            visible.insert(idx as u32);
        }
    }
    visible
}

/// Union of per-frame visible sets.
pub fn aggregate_visited(per_frame_sets: &[BTreeSet<u32>]) -> BTreeSet<u32> {
    let mut all = BTreeSet::new();
    for set in per_frame_sets {
        all.extend(set.iter().copied());
    }
    all
}

/// Per-calyx fraction of vertices that were viewed. Label-0 vertices
/// (pelvis/ureter/entrance) are excluded.
pub fn visitation_scores(mesh: &LabeledMesh, visited: &BTreeSet<u32>) -> BTreeMap<u32, f64> {
    let mut totals: BTreeMap<u32, (usize, usize)> = BTreeMap::new();
    for (idx, &label) in mesh.labels().iter().enumerate() {
        if label == 0 {
            continue;
        }
        let entry = totals.entry(label).or_insert((0, 0));
        entry.0 += 1;
        if visited.contains(&(idx as u32)) {
            entry.1 += 1;
        }
    }
    totals
        .into_iter()
        .map(|(id, (total, seen))| (id, seen as f64 / total as f64))
        .collect()
}

/// Binary visitation outcome for a calyx.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Classification {
    Visited,
    Missed,
}

impl Classification {
    pub fn as_str(&self) -> &'static str {
        match self {
            Classification::Visited => "visited",
            Classification::Missed => "missed",
        }
    }
}

/// A calyx counts as visited only when its score is strictly greater than
/// the threshold.
pub fn classify(
    scores: &BTreeMap<u32, f64>,
    threshold: f64,
) -> Result<BTreeMap<u32, Classification>, VisitationError> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(VisitationError::ThresholdOutOfRange(threshold));
    }
    Ok(scores
        .iter()
        .map(|(&id, &score)| {
            let class = if score > threshold {
                Classification::Visited
            } else {
                Classification::Missed
            };
            (id, class)
        })
        .collect())
}

/// Decision threshold for one fold: the midpoint between the mean scores
/// of the expert-visited and expert-missed calyces.
pub fn fold_threshold(
    visited_scores: &[f64],
    non_visited_scores: &[f64],
) -> Result<f64, VisitationError> {
    if visited_scores.is_empty() || non_visited_scores.is_empty() {
        return Err(VisitationError::DegenerateFold { repeat: 0, fold: 0 });
    }
    let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
    Ok((mean(visited_scores) + mean(non_visited_scores)) / 2.0)
}

/// One exploration video with expert per-calyx annotations and the
/// pipeline's computed scores.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AnnotatedVideo {
    pub video_id: String,
    pub labels: BTreeMap<u32, Classification>,
    pub scores: BTreeMap<u32, f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FoldResult {
    pub repeat: usize,
    pub fold: usize,
    pub threshold: f64,
    pub accuracy: f64,
    pub test_videos: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CrossValidation {
    pub k: usize,
    pub repeats: usize,
    pub seed: u64,
    pub folds: Vec<FoldResult>,
    pub repeat_accuracies: Vec<f64>,
    pub mean_accuracy: f64,
    /// Normal-approximation 95% interval over the repeat means.
    pub ci_low: f64,
    pub ci_high: f64,
    pub mean_threshold: f64,
    pub threshold_std: f64,
}

/// Repeated k-fold cross-validation of the visitation threshold.
///
/// Videos are shuffled with a repeat-specific seed and partitioned into
/// contiguous folds. Each fold's threshold comes from the train-set calyx
/// scores via [`fold_threshold`]; accuracy is the fraction of held-out
/// calyces classified to match the expert label.
pub fn cross_validate(
    videos: &[AnnotatedVideo],
    k: usize,
    repeats: usize,
    seed: u64,
) -> Result<CrossValidation, VisitationError> {
    if videos.is_empty() {
        return Err(VisitationError::NoVideos);
    }
    if k == 0 || repeats == 0 || !videos.len().is_multiple_of(k) {
        return Err(VisitationError::UnevenFolds {
            videos: videos.len(),
            k,
        });
    }
    for video in videos {
        let label_ids: Vec<&u32> = video.labels.keys().collect();
        let score_ids: Vec<&u32> = video.scores.keys().collect();
        if label_ids != score_ids {
            return Err(VisitationError::LabelScoreMismatch {
                video_id: video.video_id.clone(),
            });
        }
    }

    let fold_size = videos.len() / k;
    let mut folds = Vec::with_capacity(k * repeats);
    let mut repeat_accuracies = Vec::with_capacity(repeats);

    for repeat in 0..repeats {
        let mut order: Vec<usize> = (0..videos.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, repeat as u64));
        order.shuffle(&mut rng);

        let mut repeat_correct = 0usize;
        let mut repeat_total = 0usize;
        for fold in 0..k {
            let test_idx = &order[fold * fold_size..(fold + 1) * fold_size];
            let mut visited_scores = Vec::new();
            let mut missed_scores = Vec::new();
            for (i, video) in videos.iter().enumerate() {
                if test_idx.contains(&i) {
                    continue;
                }
                for (id, &score) in &video.scores {
                    match video.labels[id] {
                        Classification::Visited => visited_scores.push(score),
                        Classification::Missed => missed_scores.push(score),
                    }
                }
            }
            let threshold = fold_threshold(&visited_scores, &missed_scores)
                .map_err(|_| VisitationError::DegenerateFold { repeat, fold })?;

            let mut correct = 0usize;
            let mut total = 0usize;
            for &i in test_idx {
                let video = &videos[i];
                for (id, &score) in &video.scores {
                    let predicted = if score > threshold {
                        Classification::Visited
                    } else {
                        Classification::Missed
                    };
                    if predicted == video.labels[id] {
                        correct += 1;
                    }
                    total += 1;
                }
            }
            repeat_correct += correct;
            repeat_total += total;
            folds.push(FoldResult {
                repeat,
                fold,
                threshold,
                accuracy: correct as f64 / total.max(1) as f64,
                test_videos: test_idx.iter().map(|&i| videos[i].video_id.clone()).collect(),
            });
        }
        repeat_accuracies.push(repeat_correct as f64 / repeat_total.max(1) as f64);
    }

    let mean_accuracy =
        repeat_accuracies.iter().sum::<f64>() / repeat_accuracies.len() as f64;
    let stderr = if repeat_accuracies.len() > 1 {
        let var = repeat_accuracies
            .iter()
            .map(|a| (a - mean_accuracy).powi(2))
            .sum::<f64>()
            / (repeat_accuracies.len() - 1) as f64;
        (var / repeat_accuracies.len() as f64).sqrt()
    } else {
        0.0
    };
    let thresholds: Vec<f64> = folds.iter().map(|f| f.threshold).collect();
    let (mean_threshold, threshold_std) = crate::util::mean_stddev(&thresholds);

    Ok(CrossValidation {
        k,
        repeats,
        seed,
        folds,
        mean_accuracy,
        ci_low: mean_accuracy - 1.96 * stderr,
        ci_high: mean_accuracy + 1.96 * stderr,
        repeat_accuracies,
        mean_threshold,
        threshold_std,
    })
}

/// Frame bookkeeping for a processed video; statuses partition the
/// processed set.
#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct FrameCounts {
    pub input: usize,
    pub processed: usize,
    pub accepted: usize,
    pub rejected_spatial: usize,
    pub rejected_temporal: usize,
    pub unlocalized: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CalyxVisitation {
    pub calyx_id: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub vertex_count: usize,
    pub score: f64,
    pub classification: Classification,
}

/// Per-video assessment output: per-calyx scores and classifications,
/// the threshold used, and frame status counts.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VisitationReport {
    pub threshold: f64,
    pub calyces: Vec<CalyxVisitation>,
    pub frame_counts: FrameCounts,
    pub visited_vertex_count: usize,
}

impl VisitationReport {
    pub fn build(
        mesh: &LabeledMesh,
        visited: &BTreeSet<u32>,
        threshold: f64,
        frame_counts: FrameCounts,
    ) -> Result<Self, VisitationError> {
        let scores = visitation_scores(mesh, visited);
        let classes = classify(&scores, threshold)?;
        let summaries = mesh.calyx_summaries();
        let calyces = summaries
            .iter()
            .map(|s| CalyxVisitation {
                calyx_id: s.calyx_id,
                name: mesh.calyx_names().get(&s.calyx_id).cloned(),
                vertex_count: s.vertex_count,
                score: scores[&s.calyx_id],
                classification: classes[&s.calyx_id],
            })
            .collect();
        Ok(Self {
            threshold,
            calyces,
            frame_counts,
            visited_vertex_count: visited.len(),
        })
    }
}

/// Interior camera pose looking along `direction` from `center`, as a
/// camera-from-world transform. Shared by the simulator and tests.
pub fn look_at_pose(center: &Point3<f64>, direction: &nalgebra::Vector3<f64>) -> RigidTransform {
    let z = direction.normalize();
    // Any up vector not parallel to z.
    let helper = if z.x.abs() < 0.9 {
        nalgebra::Vector3::x()
    } else {
        nalgebra::Vector3::y()
    };
    let x = helper.cross(&z).normalize();
    let y = z.cross(&x);
    let rot = nalgebra::Rotation3::from_matrix_unchecked(nalgebra::Matrix3::from_columns(&[
        x, y, z,
    ]));
    let cam_from_world_rot = nalgebra::UnitQuaternion::from_rotation_matrix(&rot).inverse();
    let translation = -(cam_from_world_rot * center.coords);
    RigidTransform::new(cam_from_world_rot, translation)
}
