//! Orchestration: file-based configs, the end-to-end assess pipeline,
//! reconstruction metrics, and the simulator front door used by the CLI.
//!
//! All distances are millimeters, time is seconds. Outputs are
//! deterministic for fixed inputs and seeds, so reruns overwrite with
//! byte-identical files.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cloud::PointCloud;
use crate::formats::{self, CameraRecord, FormatError, TrajectoryRow, TransformRecord};
use crate::geom::{MeshError, PinholeCamera, RigidTransform, SimilarityTransform};
use crate::localization::{
    camera_center, localize_video, FrameStatus, Keypoint, LocalizationError, LocalizationParams,
    LocalizedFrame, QueryFrame, ReferenceFrame, ReferenceModel,
};
use crate::phantom::{self, LabeledMesh, PhantomError};
use crate::registration::metrics::{
    coverage, hausdorff_percentile, reprojection_error, single_sided_chamfer, MetricsError,
    ReprojectionObservation,
};
use crate::registration::{
    align_fiducials_with, target_registration_error, AlignParams, RegistrationError,
    RegistrationResult,
};
use crate::sim::{
    self, generate_phantom, generate_trajectory, synthesize_features, NoiseSpec, PhantomSpec,
    SimError, TrajectorySpec,
};
use crate::visitation::{
    aggregate_visited, visible_vertices, FrameCounts, VisibilityParams, VisitationError,
    VisitationReport,
};

#[derive(Debug, Error)]
pub enum AssessError {
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error(transparent)]
    Phantom(#[from] PhantomError),
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Localization(#[from] LocalizationError),
    #[error(transparent)]
    Visitation(#[from] VisitationError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Registration(#[from] RegistrationError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

fn io_err(path: &Path, source: std::io::Error) -> AssessError {
    AssessError::Io {
        path: path.display().to_string(),
        source,
    }
}

// ---------------------------------------------------------------------------
// Config
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PathsSection {
    pub mesh: PathBuf,
    pub camera: PathBuf,
    pub reference_features: PathBuf,
    pub reference_trajectory: PathBuf,
    pub reference_cloud: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub registration: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub query_features: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub em_trajectory: Option<PathBuf>,
    pub output_dir: PathBuf,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct MetricsSection {
    /// Every n-th localized reference frame becomes an alignment fiducial.
    pub fiducial_every: usize,
    /// Solve for scale in the fiducial alignment.
    pub with_scale: bool,
    pub coverage_radius_mm: f64,
    pub hausdorff_percentile: f64,
}

impl Default for MetricsSection {
    fn default() -> Self {
        Self {
            fiducial_every: 10,
            with_scale: true,
            coverage_radius_mm: 1.0,
            hausdorff_percentile: 99.0,
        }
    }
}

fn default_schema_version() -> u32 {
    1
}

fn default_stride() -> usize {
    2
}

/// The assess/localize/metrics configuration document (TOML on disk).
/// Relative paths resolve against the config file's directory.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AssessConfig {
    #[serde(default = "default_schema_version")]
    pub schema_version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phantom_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub video_id: Option<String>,
    #[serde(default = "default_stride")]
    pub frame_stride: usize,
    /// Fixed classification threshold; mutually exclusive with
    /// `threshold_file`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
    /// Cross-validation output JSON whose `mean_threshold` is used.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold_file: Option<PathBuf>,
    pub paths: PathsSection,
    #[serde(default)]
    pub localization: LocalizationParams,
    #[serde(default)]
    pub visibility: VisibilityParams,
    #[serde(default)]
    pub metrics: MetricsSection,
}

impl AssessConfig {
    pub fn load(path: &Path) -> Result<Self, AssessError> {
        let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        let mut config: AssessConfig = toml::from_str(&text)
            .map_err(|e| AssessError::Config(format!("{}: {e}", path.display())))?;
        if config.frame_stride == 0 {
            return Err(AssessError::Config("frame_stride must be >= 1".into()));
        }
        config.localization.validate()?;
        config.visibility.validate()?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        config.resolve_paths(base);
        Ok(config)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&p);
            }
        };
        resolve(&mut self.paths.mesh);
        resolve(&mut self.paths.camera);
        resolve(&mut self.paths.reference_features);
        resolve(&mut self.paths.reference_trajectory);
        resolve(&mut self.paths.reference_cloud);
        if let Some(p) = self.paths.registration.as_mut() {
            resolve(p);
        }
        if let Some(p) = self.paths.query_features.as_mut() {
            resolve(p);
        }
        if let Some(p) = self.paths.em_trajectory.as_mut() {
            resolve(p);
        }
        resolve(&mut self.paths.output_dir);
        if let Some(p) = self.threshold_file.as_mut() {
            resolve(p);
        }
    }

    fn resolve_threshold(&self) -> Result<f64, AssessError> {
        match (self.threshold, &self.threshold_file) {
            (Some(t), None) => Ok(t),
            (None, Some(path)) => {
                let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
                let cv: crate::visitation::CrossValidation = serde_json::from_str(&text)
                    .map_err(|e| {
                        AssessError::Config(format!("{}: {e}", path.display()))
                    })?;
                Ok(cv.mean_threshold)
            }
            (Some(_), Some(_)) => Err(AssessError::Config(
                "set either threshold or threshold_file, not both".into(),
            )),
            (None, None) => Err(AssessError::Config(
                "assess requires a threshold or threshold_file".into(),
            )),
        }
    }

    fn query_features_path(&self) -> Result<&Path, AssessError> {
        self.paths
            .query_features
            .as_deref()
            .ok_or_else(|| AssessError::Config("paths.query_features is required".into()))
    }
}

// ---------------------------------------------------------------------------
// Shared loading
// ---------------------------------------------------------------------------

pub struct LoadedInputs {
    pub mesh: LabeledMesh,
    pub camera: PinholeCamera,
    pub model: ReferenceModel,
}

/// Loads mesh, camera, and the reference model; when a registration file is
/// configured, the reconstruction is mapped into the mesh (CT) frame.
pub fn load_inputs(config: &AssessConfig) -> Result<LoadedInputs, AssessError> {
    let mesh = phantom::load_labeled_mesh(&config.paths.mesh)?;
    let camera = formats::read_camera(&config.paths.camera)?;

    let features = formats::read_features(&config.paths.reference_features)?;
    let pose_rows = formats::read_trajectory(&config.paths.reference_trajectory)?;
    let mut cloud = formats::read_point_cloud(&config.paths.reference_cloud)?;

    let registration = match &config.paths.registration {
        Some(path) => {
            let record = formats::read_transform(path)?;
            if (record.scale - 1.0).abs() > 1e-9 {
                return Err(AssessError::Config(
                    "stage-1 registration must be rigid (scale 1)".into(),
                ));
            }
            RegistrationResult {
                transform: record.to_rigid().map_err(FormatError::from)?,
                mean_residual_mm: record.mean_residual_mm.unwrap_or(0.0),
                iterations_used: record.iterations_used.unwrap_or(0),
                residual_history: Vec::new(),
            }
        }
        None => RegistrationResult::identity(),
    };

    // Map cloud and poses into the CT frame.
    let t = &registration.transform;
    for p in &mut cloud.points {
        *p = t.apply(p);
    }
    let t_inv = t.inverse();
    let mut frames = Vec::with_capacity(features.len());
    for feat in features {
        let Some(row) = pose_rows.iter().find(|r| r.frame_id == feat.frame_id) else {
            return Err(AssessError::Config(format!(
                "reference frame {} has no pose in the trajectory file",
                feat.frame_id
            )));
        };
        let Some(pose) = row.pose else {
            return Err(AssessError::Config(format!(
                "reference frame {} has an empty pose", feat.frame_id
            )));
        };
        frames.push(ReferenceFrame {
            frame_id: feat.frame_id,
            pose: pose.compose(&t_inv),
            global_descriptor: feat.global_descriptor,
            keypoints: feat.keypoints,
        });
    }
    let model = ReferenceModel::new(cloud, frames, registration)?;
    Ok(LoadedInputs {
        mesh,
        camera,
        model,
    })
}

fn load_query(config: &AssessConfig) -> Result<Vec<QueryFrame>, AssessError> {
    Ok(formats::read_features(config.query_features_path()?)?)
}

fn strided<T: Clone>(items: &[T], stride: usize) -> Vec<T> {
    items.iter().step_by(stride).cloned().collect()
}

fn frames_to_rows(frames: &[LocalizedFrame]) -> Vec<TrajectoryRow> {
    frames
        .iter()
        .map(|f| TrajectoryRow {
            frame_id: f.frame_id,
            timestamp_s: f.timestamp_s,
            status: f.status.as_str().to_string(),
            pose: f.pose,
            inlier_count: f.inlier_count,
            inlier_ratio: f.inlier_ratio,
        })
        .collect()
}

fn count_statuses(input: usize, frames: &[LocalizedFrame]) -> FrameCounts {
    let mut counts = FrameCounts {
        input,
        processed: frames.len(),
        ..FrameCounts::default()
    };
    for f in frames {
        match f.status {
            FrameStatus::Accepted => counts.accepted += 1,
            FrameStatus::RejectedSpatial => counts.rejected_spatial += 1,
            FrameStatus::RejectedTemporal => counts.rejected_temporal += 1,
            FrameStatus::Unlocalized => counts.unlocalized += 1,
        }
    }
    counts
}

// ---------------------------------------------------------------------------
// assess / localize
// ---------------------------------------------------------------------------

/// Full assess output document.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AssessReport {
    pub schema_version: u32,
    pub phantom_id: String,
    pub video_id: String,
    pub frame_stride: usize,
    pub localization: LocalizationParams,
    pub visibility: VisibilityParams,
    #[serde(flatten)]
    pub visitation: VisitationReport,
}

/// Runs the full stage-2 pipeline: stride, localize, per-frame visibility,
/// aggregate, score, classify. Writes `report.json`, `trajectory.csv`, and
/// `visited_mesh.ply` into the output directory and returns the report.
/// Missed calyces are results, not errors.
pub fn run_assess(config: &AssessConfig) -> Result<AssessReport, AssessError> {
    let threshold = config.resolve_threshold()?;
    let inputs = load_inputs(config)?;
    let query = load_query(config)?;

    let processed = strided(&query, config.frame_stride);
    let localized = localize_video(
        &processed,
        &inputs.model,
        &inputs.mesh,
        &inputs.camera,
        &config.localization,
    )?;
    let counts = count_statuses(query.len(), &localized);

    let per_frame: Vec<BTreeSet<u32>> = localized
        .par_iter()
        .filter(|f| f.status == FrameStatus::Accepted)
        .map(|f| {
            let pose = f.pose.as_ref().expect("accepted frames carry a pose");
            visible_vertices(&inputs.mesh, &inputs.camera, pose, &config.visibility)
        })
        .collect();
    let visited = aggregate_visited(&per_frame);

    let visitation = VisitationReport::build(&inputs.mesh, &visited, threshold, counts)?;
    let report = AssessReport {
        schema_version: 1,
        phantom_id: id_or_stem(&config.phantom_id, &config.paths.mesh),
        video_id: id_or_stem(&config.video_id, config.query_features_path()?),
        frame_stride: config.frame_stride,
        localization: config.localization,
        visibility: config.visibility,
        visitation,
    };

    let out = &config.paths.output_dir;
    fs::create_dir_all(out).map_err(|e| io_err(out, e))?;
    let report_path = out.join("report.json");
    let json = serde_json::to_string_pretty(&report).expect("report serializes");
    fs::write(&report_path, json + "\n").map_err(|e| io_err(&report_path, e))?;
    formats::write_trajectory(&out.join("trajectory.csv"), &frames_to_rows(&localized))?;
    phantom::save_visited_mesh(&out.join("visited_mesh.ply"), &inputs.mesh, &|v| {
        visited.contains(&(v as u32))
    })?;
    Ok(report)
}

/// Localization only: writes `trajectory.csv` and returns the frames.
pub fn run_localize(config: &AssessConfig) -> Result<Vec<LocalizedFrame>, AssessError> {
    let inputs = load_inputs(config)?;
    let query = load_query(config)?;
    let processed = strided(&query, config.frame_stride);
    let localized = localize_video(
        &processed,
        &inputs.model,
        &inputs.mesh,
        &inputs.camera,
        &config.localization,
    )?;
    let out = &config.paths.output_dir;
    fs::create_dir_all(out).map_err(|e| io_err(out, e))?;
    formats::write_trajectory(&out.join("trajectory.csv"), &frames_to_rows(&localized))?;
    Ok(localized)
}

fn id_or_stem(explicit: &Option<String>, path: &Path) -> String {
    explicit.clone().unwrap_or_else(|| {
        path.file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "unknown".to_string())
    })
}

// ---------------------------------------------------------------------------
// metrics
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReprojectionReport {
    pub mean_px: f64,
    pub observations: usize,
    pub excluded_behind_camera: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TreReport {
    pub fiducial_count: usize,
    pub held_out_count: usize,
    pub with_scale: bool,
    pub scale: f64,
    pub mean_mm: f64,
    pub std_mm: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsReport {
    pub schema_version: u32,
    pub phantom_id: String,
    pub chamfer_mean_mm: f64,
    pub chamfer_std_mm: f64,
    pub hausdorff_percentile: f64,
    pub hausdorff_mm: f64,
    pub coverage_radius_mm: f64,
    pub coverage_pct: f64,
    /// Absent when the reference model carries no 2D-3D links.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reprojection: Option<ReprojectionReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tre: Option<TreReport>,
}

/// Reconstruction-quality metrics for the reference model against the
/// mesh; when an EM ground-truth trajectory is configured, also aligns the
/// localized reference poses to it (every n-th frame as fiducial) and
/// reports the target registration error on the held-out frames.
pub fn run_metrics(config: &AssessConfig) -> Result<MetricsReport, AssessError> {
    let inputs = load_inputs(config)?;
    let cloud = inputs.model.cloud();

    let (chamfer_mean_mm, chamfer_std_mm) = single_sided_chamfer(cloud, inputs.mesh.mesh())?;
    let hausdorff_mm = hausdorff_percentile(
        cloud,
        inputs.mesh.mesh(),
        config.metrics.hausdorff_percentile,
    )?;
    let ct_cloud = PointCloud::new(inputs.mesh.mesh().vertices().to_vec());
    let coverage_pct = coverage(&ct_cloud, cloud, config.metrics.coverage_radius_mm)?;

    let mut observations = Vec::new();
    for frame in inputs.model.frames() {
        for kp in &frame.keypoints {
            if let Some(pid) = kp.point3d_id {
                observations.push(ReprojectionObservation {
                    pose: frame.pose,
                    camera: inputs.camera,
                    point_world: cloud.points[pid as usize],
                    observed_px: kp.pixel,
                });
            }
        }
    }
    let reprojection = if observations.is_empty() {
        None
    } else {
        let stats = reprojection_error(&observations)?;
        Some(ReprojectionReport {
            mean_px: stats.mean_px,
            observations: stats.used,
            excluded_behind_camera: stats.excluded_behind_camera,
        })
    };

    let tre = match &config.paths.em_trajectory {
        None => None,
        Some(path) => Some(compute_tre(config, &inputs, path)?),
    };

    let report = MetricsReport {
        schema_version: 1,
        phantom_id: id_or_stem(&config.phantom_id, &config.paths.mesh),
        chamfer_mean_mm,
        chamfer_std_mm,
        hausdorff_percentile: config.metrics.hausdorff_percentile,
        hausdorff_mm,
        coverage_radius_mm: config.metrics.coverage_radius_mm,
        coverage_pct,
        reprojection,
        tre,
    };

    let out = &config.paths.output_dir;
    fs::create_dir_all(out).map_err(|e| io_err(out, e))?;
    let path = out.join("metrics.json");
    let json = serde_json::to_string_pretty(&report).expect("report serializes");
    fs::write(&path, json + "\n").map_err(|e| io_err(&path, e))?;
    Ok(report)
}

fn compute_tre(
    config: &AssessConfig,
    inputs: &LoadedInputs,
    em_path: &Path,
) -> Result<TreReport, AssessError> {
    let em_rows = formats::read_trajectory(em_path)?;
    let mut pairs: Vec<(nalgebra::Point3<f64>, nalgebra::Point3<f64>)> = Vec::new();
    for frame in inputs.model.frames() {
        let Some(row) = em_rows.iter().find(|r| r.frame_id == frame.frame_id) else {
            continue;
        };
        let Some(em_pose) = row.pose else {
            continue;
        };
        pairs.push((camera_center(&frame.pose), camera_center(&em_pose)));
    }
    if pairs.len() < 4 {
        return Err(AssessError::Config(
            "too few frames shared between the reference model and the EM trajectory".into(),
        ));
    }
    let every = config.metrics.fiducial_every.max(1);
    let fiducials: Vec<_> = pairs.iter().step_by(every).cloned().collect();
    let held_out: Vec<_> = pairs
        .iter()
        .enumerate()
        .filter(|(i, _)| i % every != 0)
        .map(|(_, p)| *p)
        .collect();
    let align_params = AlignParams {
        with_scale: config.metrics.with_scale,
        ..AlignParams::default()
    };
    let (transform, _) = align_fiducials_with(&fiducials, &align_params)?;
    let (mean_mm, std_mm) = if held_out.is_empty() {
        (0.0, 0.0)
    } else {
        target_registration_error(&transform, &held_out)?
    };
    Ok(TreReport {
        fiducial_count: fiducials.len(),
        held_out_count: held_out.len(),
        with_scale: config.metrics.with_scale,
        scale: transform.scale(),
        mean_mm,
        std_mm,
    })
}

// ---------------------------------------------------------------------------
// simulate
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
pub struct VideoSpec {
    #[serde(default)]
    pub trajectory: TrajectorySpec,
    #[serde(default)]
    pub noise: NoiseSpec,
}

fn default_sim_camera() -> CameraRecord {
    CameraRecord {
        fx: 200.0,
        fy: 200.0,
        cx: 200.0,
        cy: 200.0,
        width: 400,
        height: 400,
    }
}

/// Simulation scenario (TOML on disk): one phantom, one slow reference
/// exploration, one query exploration.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SimulateSpec {
    pub phantom: PhantomSpec,
    pub camera: CameraRecord,
    pub visibility: VisibilityParams,
    /// Reference video; an empty visit plan is filled with all calyces
    /// (the reference exploration must be thorough).
    pub reference: VideoSpec,
    /// Query video; an empty visit plan means a pelvis-only orbit.
    pub query: VideoSpec,
}

impl Default for SimulateSpec {
    fn default() -> Self {
        Self {
            phantom: PhantomSpec::default(),
            camera: default_sim_camera(),
            visibility: VisibilityParams::default(),
            reference: VideoSpec {
                trajectory: TrajectorySpec {
                    speed_mm_per_s: 10.0,
                    dwell_s: 1.0,
                    ..TrajectorySpec::default()
                },
                noise: NoiseSpec::default(),
            },
            query: VideoSpec::default(),
        }
    }
}

impl SimulateSpec {
    pub fn load(path: &Path) -> Result<Self, AssessError> {
        let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        toml::from_str(&text)
            .map_err(|e| AssessError::Config(format!("{}: {e}", path.display())))
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SimulationSummary {
    pub output_dir: PathBuf,
    pub vertices: usize,
    pub faces: usize,
    pub calyces: u32,
    pub reference_frames: usize,
    pub query_frames: usize,
    pub assess_config: PathBuf,
}

#[derive(Serialize)]
struct TruthLabels<'a> {
    schema_version: u32,
    reference: &'a [Vec<Option<u32>>],
    query: &'a [Vec<Option<u32>>],
}

/// Generates a phantom, a reference exploration, and a query exploration,
/// and writes every artifact the pipeline consumes, including a ready-to-
/// run assess config.
pub fn run_simulate(spec: &SimulateSpec, out_dir: &Path) -> Result<SimulationSummary, AssessError> {
    fs::create_dir_all(out_dir).map_err(|e| io_err(out_dir, e))?;
    let camera = spec.camera.to_camera().map_err(FormatError::from)?;

    let (phantom, tree) = generate_phantom(&spec.phantom)?;

    let mut ref_traj_spec = spec.reference.trajectory.clone();
    if ref_traj_spec.visit_plan.is_empty() {
        ref_traj_spec.visit_plan = (1..=spec.phantom.n_calyces).collect();
    }
    let ref_frames = generate_trajectory(&tree, &ref_traj_spec)?;
    let ref_synth = synthesize_features(
        &phantom,
        &camera,
        &ref_frames,
        &spec.reference.noise,
        &spec.visibility,
    )?;
    let model = sim::build_reference_model(&phantom, &ref_frames, &ref_synth);

    let query_frames = generate_trajectory(&tree, &spec.query.trajectory)?;
    let query_synth = synthesize_features(
        &phantom,
        &camera,
        &query_frames,
        &spec.query.noise,
        &spec.visibility,
    )?;

    // Phantom, camera, reference model artifacts.
    phantom::save_labeled_mesh(&out_dir.join("phantom.ply"), &phantom)?;
    formats::write_camera(&out_dir.join("camera.toml"), &camera)?;
    formats::write_point_cloud(&out_dir.join("reference_cloud.ply"), model.cloud())?;
    formats::write_transform(
        &out_dir.join("registration.json"),
        &TransformRecord::from_rigid(&RigidTransform::identity()),
    )?;

    // Reference features carry 3D point ids; rebuild QueryFrame records
    // with the ids filled in for serialization.
    let ref_features: Vec<QueryFrame> = model
        .frames()
        .iter()
        .zip(&ref_synth.frames)
        .map(|(rf, feat)| QueryFrame {
            frame_id: rf.frame_id,
            timestamp_s: feat.timestamp_s,
            global_descriptor: rf.global_descriptor.clone(),
            keypoints: rf
                .keypoints
                .iter()
                .map(|kp| Keypoint {
                    pixel: kp.pixel,
                    descriptor: kp.descriptor.clone(),
                    point3d_id: kp.point3d_id,
                })
                .collect(),
        })
        .collect();
    formats::write_features(&out_dir.join("reference.features"), &ref_features)?;
    formats::write_trajectory(
        &out_dir.join("reference_trajectory.csv"),
        &posed_to_rows(&ref_frames),
    )?;

    formats::write_features(&out_dir.join("query.features"), &query_synth.frames)?;
    formats::write_trajectory(
        &out_dir.join("query_trajectory.csv"),
        &posed_to_rows(&query_frames),
    )?;

    let truth = TruthLabels {
        schema_version: 1,
        reference: &ref_synth.truth,
        query: &query_synth.truth,
    };
    let truth_path = out_dir.join("truth_labels.json");
    let json = serde_json::to_string(&truth).expect("truth serializes");
    fs::write(&truth_path, json + "\n").map_err(|e| io_err(&truth_path, e))?;

    // Ready-to-run assess config.
    let assess_config_path = out_dir.join("assess_config.toml");
    let config = AssessConfig {
        schema_version: 1,
        phantom_id: Some("sim_phantom".to_string()),
        video_id: Some("sim_query".to_string()),
        frame_stride: 2,
        threshold: Some(0.45),
        threshold_file: None,
        paths: PathsSection {
            mesh: "phantom.ply".into(),
            camera: "camera.toml".into(),
            reference_features: "reference.features".into(),
            reference_trajectory: "reference_trajectory.csv".into(),
            reference_cloud: "reference_cloud.ply".into(),
            registration: Some("registration.json".into()),
            query_features: Some("query.features".into()),
            // The simulator's exact reference poses stand in for an
            // EM-tracked recording of the reference video.
            em_trajectory: Some("reference_trajectory.csv".into()),
            output_dir: "out".into(),
        },
        localization: LocalizationParams::default(),
        visibility: spec.visibility,
        metrics: MetricsSection::default(),
    };
    let toml_text = toml::to_string(&config)
        .map_err(|e| AssessError::Config(format!("serializing assess config: {e}")))?;
    fs::write(&assess_config_path, toml_text).map_err(|e| io_err(&assess_config_path, e))?;

    Ok(SimulationSummary {
        output_dir: out_dir.to_path_buf(),
        vertices: phantom.mesh().vertices().len(),
        faces: phantom.mesh().faces().len(),
        calyces: spec.phantom.n_calyces,
        reference_frames: ref_frames.len(),
        query_frames: query_frames.len(),
        assess_config: assess_config_path,
    })
}

fn posed_to_rows(frames: &[sim::PosedFrame]) -> Vec<TrajectoryRow> {
    frames
        .iter()
        .map(|f| TrajectoryRow {
            frame_id: f.frame_id,
            timestamp_s: f.timestamp_s,
            status: "ground_truth".to_string(),
            pose: Some(f.pose),
            inlier_count: 0,
            inlier_ratio: 0.0,
        })
        .collect()
}

// ---------------------------------------------------------------------------
// register
// ---------------------------------------------------------------------------

/// ICP registration of a reconstruction cloud onto the mesh vertices,
/// starting from a manual initial transform. Writes the resulting
/// transform record.
pub fn run_register(
    source_cloud: &Path,
    target_mesh: &Path,
    init_transform: Option<&Path>,
    params: &crate::registration::IcpParams,
    out: &Path,
) -> Result<RegistrationResult, AssessError> {
    let source = formats::read_point_cloud(source_cloud)?;
    let target_labeled = phantom::load_labeled_mesh(target_mesh)?;
    let target = PointCloud::new(target_labeled.mesh().vertices().to_vec());
    let init = match init_transform {
        Some(path) => formats::read_transform(path)?
            .to_rigid()
            .map_err(FormatError::from)?,
        None => RigidTransform::identity(),
    };
    let result = crate::registration::icp_register(&source, &target, &init, params)?;
    let mut record = TransformRecord::from_rigid(&result.transform);
    record.mean_residual_mm = Some(result.mean_residual_mm);
    record.iterations_used = Some(result.iterations_used);
    formats::write_transform(out, &record)?;
    Ok(result)
}

/// Applies a similarity transform to every pose center in a trajectory,
/// used by tests that build EM ground truth in a different frame.
pub fn transform_trajectory_centers(
    rows: &[TrajectoryRow],
    transform: &SimilarityTransform,
) -> Vec<TrajectoryRow> {
    rows.iter()
        .map(|row| {
            let pose = row.pose.map(|p| {
                let center = camera_center(&p);
                let new_center = transform.apply(&center);
                let rotation = *p.rotation();
                RigidTransform::new(rotation, -(rotation * new_center.coords))
            });
            TrajectoryRow {
                pose,
                ..row.clone()
            }
        })
        .collect()
}
