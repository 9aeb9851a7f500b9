//! End-to-end pipeline tests against the simulator: localization accuracy,
//! status bookkeeping, the full assess flow through files, and metrics.

use std::fs;

use nalgebra::Point3;

use calyx_core::assess::{run_assess, run_metrics, run_simulate, AssessConfig, SimulateSpec};
use calyx_core::formats;
use calyx_core::geom::{PinholeCamera, TriMesh};
use calyx_core::localization::{
    localize_video, FrameStatus, Keypoint, LocalizationParams, QueryFrame,
    ReferenceModel,
};
use calyx_core::phantom::LabeledMesh;
use calyx_core::sim::{
    build_reference_model, generate_phantom, generate_trajectory, synthesize_features, NoiseSpec,
    PhantomSpec, PosedFrame, TrajectorySpec,
};
use calyx_core::visitation::{Classification, VisibilityParams};

fn camera() -> PinholeCamera {
    PinholeCamera::new(200.0, 200.0, 200.0, 200.0, 400, 400).unwrap()
}

struct Scenario {
    phantom: LabeledMesh,
    model: ReferenceModel,
    query: Vec<QueryFrame>,
    query_truth: Vec<PosedFrame>,
}

fn scenario(query_plan: Vec<u32>, query_noise: NoiseSpec) -> Scenario {
    let (phantom, tree) = generate_phantom(&PhantomSpec::default()).unwrap();
    let cam = camera();
    let vis = VisibilityParams::default();

    let ref_frames = generate_trajectory(
        &tree,
        &TrajectorySpec {
            visit_plan: (1..=6).collect(),
            speed_mm_per_s: 10.0,
            fps: 4.0,
            dwell_s: 1.0,
            seed: 1,
        },
    )
    .unwrap();
    let ref_synth =
        synthesize_features(&phantom, &cam, &ref_frames, &NoiseSpec::default(), &vis).unwrap();
    let model = build_reference_model(&phantom, &ref_frames, &ref_synth);

    let query_truth = generate_trajectory(
        &tree,
        &TrajectorySpec {
            visit_plan: query_plan,
            speed_mm_per_s: 20.0,
            fps: 5.0,
            dwell_s: 1.0,
            seed: 2,
        },
    )
    .unwrap();
    let query_synth =
        synthesize_features(&phantom, &cam, &query_truth, &query_noise, &vis).unwrap();

    Scenario {
        phantom,
        model,
        query: query_synth.frames,
        query_truth,
    }
}

#[test]
fn exact_features_localize_accurately() {
    let s = scenario(vec![1, 3], NoiseSpec::default());
    let frames = localize_video(
        &s.query,
        &s.model,
        &s.phantom,
        &camera(),
        &LocalizationParams::default(),
    )
    .unwrap();

    assert_eq!(frames.len(), s.query.len());
    let accepted: Vec<_> = frames
        .iter()
        .filter(|f| f.status == FrameStatus::Accepted)
        .collect();
    let accept_rate = accepted.len() as f64 / frames.len() as f64;
    assert!(
        accept_rate >= 0.95,
        "only {:.1}% of frames accepted",
        accept_rate * 100.0
    );

    let mut total_err = 0.0;
    for f in &accepted {
        let truth = &s.query_truth[f.frame_id as usize];
        let err = (f.camera_center().unwrap() - truth.camera_center()).norm();
        total_err += err;
    }
    let mean_err = total_err / accepted.len() as f64;
    assert!(mean_err < 1.0, "mean position error {mean_err} mm");
}

#[test]
fn statuses_partition_the_frame_set() {
    let s = scenario(
        vec![2],
        NoiseSpec {
            pixel_noise_sigma_px: 1.0,
            outlier_fraction: 0.2,
            ..NoiseSpec::default()
        },
    );
    let frames = localize_video(
        &s.query,
        &s.model,
        &s.phantom,
        &camera(),
        &LocalizationParams::default(),
    )
    .unwrap();
    assert_eq!(frames.len(), s.query.len());
    let by_status = |status: FrameStatus| frames.iter().filter(|f| f.status == status).count();
    let total = by_status(FrameStatus::Accepted)
        + by_status(FrameStatus::RejectedSpatial)
        + by_status(FrameStatus::RejectedTemporal)
        + by_status(FrameStatus::Unlocalized);
    assert_eq!(total, frames.len());
    for f in &frames {
        match f.status {
            FrameStatus::Unlocalized => assert!(f.pose.is_none()),
            _ => assert!(f.pose.is_some()),
        }
    }
}

#[test]
fn random_descriptor_video_is_fully_unlocalized() {
    let s = scenario(vec![1], NoiseSpec::default());
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
    fn unit(rng: &mut rand_chacha::ChaCha8Rng, dim: usize) -> Vec<f64> {
        let v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-9);
        v.into_iter().map(|x| x / n).collect()
    }
    let mut junk = Vec::new();
    for i in 0..20u64 {
        let keypoints = (0..100)
            .map(|_| Keypoint {
                pixel: [rng.random_range(0.0..400.0), rng.random_range(0.0..400.0)],
                descriptor: unit(&mut rng, 64),
                point3d_id: None,
            })
            .collect();
        junk.push(QueryFrame {
            frame_id: i,
            timestamp_s: i as f64 / 30.0,
            global_descriptor: unit(&mut rng, 64),
            keypoints,
        });
    }
    let frames = localize_video(
        &junk,
        &s.model,
        &s.phantom,
        &camera(),
        &LocalizationParams::default(),
    )
    .unwrap();
    assert_eq!(frames.len(), 20);
    assert!(frames.iter().all(|f| f.status == FrameStatus::Unlocalized));
}

fn small_sim_spec(visit_plan: Vec<u32>) -> SimulateSpec {
    let mut spec = SimulateSpec::default();
    spec.reference.trajectory.fps = 4.0;
    spec.reference.trajectory.speed_mm_per_s = 10.0;
    spec.reference.trajectory.dwell_s = 1.0;
    spec.query.trajectory.visit_plan = visit_plan;
    spec.query.trajectory.fps = 6.0;
    spec.query.trajectory.dwell_s = 1.0;
    spec
}

#[test]
fn assess_marks_exactly_the_planned_calyces() {
    let dir = tempfile::tempdir().unwrap();
    let spec = small_sim_spec(vec![1, 2, 3]);
    let summary = run_simulate(&spec, dir.path()).unwrap();
    let config = AssessConfig::load(&summary.assess_config).unwrap();
    let report = run_assess(&config).unwrap();

    assert_eq!(report.visitation.calyces.len(), 6);
    for calyx in &report.visitation.calyces {
        let expected = if calyx.calyx_id <= 3 {
            Classification::Visited
        } else {
            Classification::Missed
        };
        assert_eq!(
            calyx.classification, expected,
            "calyx {} score {}",
            calyx.calyx_id, calyx.score
        );
    }
    assert!(dir.path().join("out/report.json").exists());
    assert!(dir.path().join("out/trajectory.csv").exists());
    assert!(dir.path().join("out/visited_mesh.ply").exists());

    // The visited-mesh export round-trips as a labeled PLY with flags.
    let ply = formats::read_ply(&dir.path().join("out/visited_mesh.ply")).unwrap();
    let visited = ply.visited.expect("visited property present");
    assert_eq!(visited.len(), ply.vertices.len());
    assert_eq!(
        visited.iter().filter(|&&v| v == 1).count(),
        report.visitation.visited_vertex_count
    );
}

#[test]
fn empty_query_video_yields_all_missed() {
    let dir = tempfile::tempdir().unwrap();
    let spec = small_sim_spec(vec![1]);
    let summary = run_simulate(&spec, dir.path()).unwrap();
    // Overwrite the query features with an empty file.
    formats::write_features(&dir.path().join("query.features"), &[]).unwrap();
    let config = AssessConfig::load(&summary.assess_config).unwrap();
    let report = run_assess(&config).unwrap();
    assert_eq!(report.visitation.frame_counts.accepted, 0);
    assert_eq!(report.visitation.frame_counts.processed, 0);
    assert!(report
        .visitation
        .calyces
        .iter()
        .all(|c| c.classification == Classification::Missed && c.score == 0.0));
}

#[test]
fn stride_bookkeeping_is_ceil_of_input_over_stride() {
    let dir = tempfile::tempdir().unwrap();
    let spec = small_sim_spec(vec![1]);
    let summary = run_simulate(&spec, dir.path()).unwrap();
    let mut config = AssessConfig::load(&summary.assess_config).unwrap();
    config.frame_stride = 4;
    let report = run_assess(&config).unwrap();
    let input = report.visitation.frame_counts.input;
    assert_eq!(report.visitation.frame_counts.processed, input.div_ceil(4));
    let c = &report.visitation.frame_counts;
    assert_eq!(
        c.accepted + c.rejected_spatial + c.rejected_temporal + c.unlocalized,
        c.processed
    );
    let _ = summary;
}

#[test]
fn assess_reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let spec = small_sim_spec(vec![2, 5]);
    let summary = run_simulate(&spec, dir.path()).unwrap();
    let config = AssessConfig::load(&summary.assess_config).unwrap();

    run_assess(&config).unwrap();
    let out = dir.path().join("out");
    let snapshot = |name: &str| fs::read(out.join(name)).unwrap();
    let report1 = snapshot("report.json");
    let traj1 = snapshot("trajectory.csv");
    let mesh1 = snapshot("visited_mesh.ply");

    run_assess(&config).unwrap();
    assert_eq!(report1, snapshot("report.json"));
    assert_eq!(traj1, snapshot("trajectory.csv"));
    assert_eq!(mesh1, snapshot("visited_mesh.ply"));
}

#[test]
fn metrics_on_simulated_model_and_exact_em() {
    let dir = tempfile::tempdir().unwrap();
    let spec = small_sim_spec(vec![1, 4]);
    let summary = run_simulate(&spec, dir.path()).unwrap();

    // Full-coverage cloud: every mesh vertex, so chamfer is 0 and coverage
    // is 100.
    let phantom = calyx_core::phantom::load_labeled_mesh(&dir.path().join("phantom.ply")).unwrap();
    formats::write_point_cloud(
        &dir.path().join("reference_cloud.ply"),
        &calyx_core::cloud::PointCloud::new(phantom.mesh().vertices().to_vec()),
    )
    .unwrap();
    // That invalidates keypoint point ids, so strip them from the features.
    let feats = formats::read_features(&dir.path().join("reference.features")).unwrap();
    let stripped: Vec<QueryFrame> = feats
        .into_iter()
        .map(|mut f| {
            for kp in &mut f.keypoints {
                kp.point3d_id = None;
            }
            f
        })
        .collect();
    formats::write_features(&dir.path().join("reference.features"), &stripped).unwrap();

    let mut config = AssessConfig::load(&summary.assess_config).unwrap();
    // EM ground truth = the exact reference poses.
    config.paths.em_trajectory = Some(dir.path().join("reference_trajectory.csv"));
    let report = run_metrics(&config).unwrap();

    assert!(report.chamfer_mean_mm < 1e-9, "chamfer {}", report.chamfer_mean_mm);
    assert!(report.hausdorff_mm < 1e-9);
    assert_eq!(report.coverage_pct, 100.0);
    assert!(report.reprojection.is_none());
    let tre = report.tre.expect("EM trajectory configured");
    assert!(tre.mean_mm < 1e-6, "TRE {}", tre.mean_mm);
    assert!((tre.scale - 1.0).abs() < 1e-6);
    assert!(dir.path().join("out/metrics.json").exists());
}

#[test]
fn metrics_reports_reprojection_on_simulated_features() {
    let dir = tempfile::tempdir().unwrap();
    let spec = small_sim_spec(vec![3]);
    let summary = run_simulate(&spec, dir.path()).unwrap();
    let config = AssessConfig::load(&summary.assess_config).unwrap();
    let report = run_metrics(&config).unwrap();
    // Noiseless synthetic features project exactly.
    let reproj = report.reprojection.expect("model has 2D-3D links");
    assert!(reproj.mean_px < 1e-9, "reprojection {}", reproj.mean_px);
    assert_eq!(reproj.excluded_behind_camera, 0);
    // The simulated reconstruction covers a good part of the anatomy but
    // not all of it.
    assert!(report.coverage_pct > 20.0);
    assert!(report.chamfer_mean_mm < 1e-9);
}

#[test]
fn planar_offset_chamfer_through_files() {
    // A flat plate and a cloud hovering 2 mm above it: chamfer exactly 2,
    // coverage at 1 mm exactly 0.
    let dir = tempfile::tempdir().unwrap();
    let s = 100.0;
    let mesh = TriMesh::new(
        vec![
            Point3::new(-s, -s, 0.0),
            Point3::new(s, -s, 0.0),
            Point3::new(s, s, 0.0),
            Point3::new(-s, s, 0.0),
        ],
        vec![[0, 1, 2], [0, 2, 3]],
    )
    .unwrap();
    let labeled = LabeledMesh::new(mesh, vec![0; 4], Default::default()).unwrap();
    calyx_core::phantom::save_labeled_mesh(&dir.path().join("plate.ply"), &labeled).unwrap();

    let cloud = calyx_core::cloud::PointCloud::new(
        (0..100)
            .map(|i| Point3::new((i % 10) as f64 * 5.0 - 25.0, (i / 10) as f64 * 5.0 - 25.0, 2.0))
            .collect(),
    );
    formats::write_point_cloud(&dir.path().join("cloud.ply"), &cloud).unwrap();
    formats::write_camera(&dir.path().join("camera.toml"), &camera()).unwrap();
    formats::write_features(&dir.path().join("reference.features"), &[]).unwrap();
    formats::write_trajectory(&dir.path().join("reference_trajectory.csv"), &[]).unwrap();

    let config_text = r#"
threshold = 0.45
[paths]
mesh = "plate.ply"
camera = "camera.toml"
reference_features = "reference.features"
reference_trajectory = "reference_trajectory.csv"
reference_cloud = "cloud.ply"
output_dir = "out"
"#;
    let config_path = dir.path().join("metrics.toml");
    fs::write(&config_path, config_text).unwrap();
    let config = AssessConfig::load(&config_path).unwrap();
    let report = run_metrics(&config).unwrap();
    assert!((report.chamfer_mean_mm - 2.0).abs() < 1e-6);
    assert!(report.chamfer_std_mm < 1e-9);
    assert_eq!(report.coverage_pct, 0.0);
    assert!((report.hausdorff_mm - 2.0).abs() < 1e-6);
}


#[test]
fn registration_transform_maps_model_into_mesh_frame() {
    // Simulate, then displace the reference model artifacts by a known
    // rigid transform and hand assess the inverse as the registration:
    // results must match the unregistered run exactly.
    let dir = tempfile::tempdir().unwrap();
    let spec = small_sim_spec(vec![2]);
    let summary = run_simulate(&spec, dir.path()).unwrap();
    let baseline_config = AssessConfig::load(&summary.assess_config).unwrap();
    let baseline = run_assess(&baseline_config).unwrap();

    // Displace cloud and poses out of the CT frame by T.
    let t = calyx_core::geom::RigidTransform::new(
        nalgebra::UnitQuaternion::from_axis_angle(
            &nalgebra::Unit::new_normalize(nalgebra::Vector3::new(0.3, 1.0, -0.5)),
            0.8,
        ),
        nalgebra::Vector3::new(20.0, -12.0, 7.0),
    );
    let t_inv = t.inverse();
    let cloud = formats::read_point_cloud(&dir.path().join("reference_cloud.ply")).unwrap();
    let moved = calyx_core::cloud::PointCloud::new(
        cloud.points.iter().map(|p| t_inv.apply(p)).collect(),
    );
    formats::write_point_cloud(&dir.path().join("reference_cloud.ply"), &moved).unwrap();
    let rows = formats::read_trajectory(&dir.path().join("reference_trajectory.csv")).unwrap();
    let moved_rows: Vec<formats::TrajectoryRow> = rows
        .into_iter()
        .map(|mut r| {
            // Poses are camera-from-world; moving the world by t_inv means
            // composing with t on the right.
            r.pose = r.pose.map(|p| p.compose(&t));
            r
        })
        .collect();
    formats::write_trajectory(&dir.path().join("reference_trajectory.csv"), &moved_rows).unwrap();
    formats::write_transform(
        &dir.path().join("registration.json"),
        &formats::TransformRecord::from_rigid(&t),
    )
    .unwrap();

    let config = AssessConfig::load(&summary.assess_config).unwrap();
    let report = run_assess(&config).unwrap();
    assert_eq!(
        report.visitation.frame_counts.accepted,
        baseline.visitation.frame_counts.accepted
    );
    for (a, b) in report
        .visitation
        .calyces
        .iter()
        .zip(&baseline.visitation.calyces)
    {
        assert_eq!(a.classification, b.classification);
        assert!(
            (a.score - b.score).abs() < 1e-6,
            "calyx {} score {} vs baseline {}",
            a.calyx_id,
            a.score,
            b.score
        );
    }
}
