use nalgebra::Point3;

use super::align::umeyama;
use super::RegistrationError;
use crate::cloud::{KdTree3, PointCloud};
use crate::geom::RigidTransform;

/// Point-to-point ICP parameters. The cutoff discards nearest-neighbor
/// pairs farther than `correspondence_cutoff_mm`, which makes the first
/// iteration double as an initialization sanity check.
#[derive(Debug, Clone, Copy)]
pub struct IcpParams {
    pub max_iterations: u32,
    /// Stop when the mean residual improves by less than this (mm).
    pub convergence_delta_mm: f64,
    pub correspondence_cutoff_mm: f64,
}

impl Default for IcpParams {
    fn default() -> Self {
        Self {
            max_iterations: 100,
            convergence_delta_mm: 1e-4,
            correspondence_cutoff_mm: 10.0,
        }
    }
}

impl IcpParams {
    fn validate(&self) -> Result<(), RegistrationError> {
        if self.max_iterations == 0
            || !(self.convergence_delta_mm > 0.0)
            || !(self.correspondence_cutoff_mm > 0.0)
        {
            return Err(RegistrationError::InvalidParams);
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct RegistrationResult {
    pub transform: RigidTransform,
    pub mean_residual_mm: f64,
    pub iterations_used: u32,
    /// Mean residual before any update, then after each accepted update.
    /// Non-increasing by construction.
    pub residual_history: Vec<f64>,
}

impl RegistrationResult {
    pub fn identity() -> Self {
        Self {
            transform: RigidTransform::identity(),
            mean_residual_mm: 0.0,
            iterations_used: 0,
            residual_history: Vec::new(),
        }
    }
}

struct Correspondences {
    source_points: Vec<Point3<f64>>,
    target_points: Vec<Point3<f64>>,
    mean_residual: f64,
}

fn correspondences(
    source: &PointCloud,
    target: &PointCloud,
    tree: &KdTree3,
    transform: &RigidTransform,
    cutoff: f64,
) -> Option<Correspondences> {
    let mut source_points = Vec::new();
    let mut target_points = Vec::new();
    let mut total = 0.0;
    for s in &source.points {
        let moved = transform.apply(s);
        if let Some((idx, dist)) = tree.nearest_one(&moved) {
            if dist <= cutoff {
                source_points.push(*s);
                target_points.push(target.points[idx as usize]);
                total += dist;
            }
        }
    }
    if source_points.is_empty() {
        None
    } else {
        let mean_residual = total / source_points.len() as f64;
        Some(Correspondences {
            source_points,
            target_points,
            mean_residual,
        })
    }
}

/// Rigid registration of `source` onto `target`, starting from `init`
/// (manual initialization is an input, never estimated here).
///
/// Each iteration matches transformed source points to their nearest target
/// points under the cutoff and re-fits the full rigid transform in closed
/// form. An update that would increase the mean residual is rejected and the
/// iteration stops, so the residual history is monotone non-increasing.
pub fn icp_register(
    source: &PointCloud,
    target: &PointCloud,
    init: &RigidTransform,
    params: &IcpParams,
) -> Result<RegistrationResult, RegistrationError> {
    params.validate()?;
    if source.is_empty() || target.is_empty() {
        return Err(RegistrationError::EmptyCloud);
    }
    let tree = KdTree3::build(&target.points);
    let cutoff = params.correspondence_cutoff_mm;

    let mut transform = *init;
    let mut corr = correspondences(source, target, &tree, &transform, cutoff).ok_or(
        RegistrationError::InitializationTooFar { cutoff_mm: cutoff },
    )?;
    let mut history = vec![corr.mean_residual];

    for _ in 0..params.max_iterations {
        let (candidate, _scale) = umeyama(&corr.source_points, &corr.target_points, false);
        let Some(next) = correspondences(source, target, &tree, &candidate, cutoff) else {
            break;
        };
        let last = *history.last().expect("history is non-empty");
        if next.mean_residual > last + 1e-12 {
            break; // update rejected; transform unchanged
        }
        let improvement = last - next.mean_residual;
        transform = candidate;
        history.push(next.mean_residual);
        corr = next;
        if improvement < params.convergence_delta_mm {
            break;
        }
    }

    Ok(RegistrationResult {
        transform,
        mean_residual_mm: *history.last().expect("history is non-empty"),
        iterations_used: (history.len() - 1) as u32,
        residual_history: history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{UnitQuaternion, Vector3};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_cloud(n: usize, seed: u64) -> PointCloud {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        PointCloud::new(
            (0..n)
                .map(|_| {
                    Point3::new(
                        rng.random_range(-30.0..30.0),
                        rng.random_range(-20.0..20.0),
                        rng.random_range(-25.0..25.0),
                    )
                })
                .collect(),
        )
    }

    #[test]
    fn identical_clouds_converge_to_identity() {
        let cloud = random_cloud(500, 1);
        let result = icp_register(
            &cloud,
            &cloud,
            &RigidTransform::identity(),
            &IcpParams::default(),
        )
        .unwrap();
        assert!(result.mean_residual_mm < 1e-9);
        assert!(result.transform.translation().norm() < 1e-6);
        assert!(
            result
                .transform
                .rotation_angle_to(&RigidTransform::identity())
                < 1e-6
        );
    }

    #[test]
    fn recovers_small_known_transform() {
        let source = random_cloud(1000, 2);
        let truth = RigidTransform::new(
            UnitQuaternion::from_axis_angle(&nalgebra::Unit::new_normalize(Vector3::new(0.3, 1.0, -0.2)), 5f64.to_radians()),
            Vector3::new(3.0, -2.0, 2.5),
        );
        let target = PointCloud::new(source.points.iter().map(|p| truth.apply(p)).collect());
        let result = icp_register(
            &source,
            &target,
            &RigidTransform::identity(),
            &IcpParams::default(),
        )
        .unwrap();
        let rot_err_deg = result.transform.rotation_angle_to(&truth).to_degrees();
        let trans_err = (result.transform.translation() - truth.translation()).norm();
        assert!(rot_err_deg < 0.1, "rotation error {rot_err_deg} deg");
        assert!(trans_err < 0.1, "translation error {trans_err} mm");
        assert!(result.mean_residual_mm < 1e-3);
    }

    #[test]
    fn far_initialization_errors() {
        let source = random_cloud(200, 3);
        let target = PointCloud::new(
            source
                .points
                .iter()
                .map(|p| p + Vector3::new(100.0, 0.0, 0.0))
                .collect(),
        );
        let err = icp_register(
            &source,
            &target,
            &RigidTransform::identity(),
            &IcpParams::default(),
        )
        .unwrap_err();
        assert!(matches!(err, RegistrationError::InitializationTooFar { .. }));
    }

    #[test]
    fn residual_history_is_monotone() {
        let source = random_cloud(400, 4);
        let truth = RigidTransform::new(
            UnitQuaternion::from_axis_angle(&Vector3::z_axis(), 8f64.to_radians()),
            Vector3::new(4.0, 1.0, -3.0),
        );
        // Add noise so convergence takes several iterations.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let target = PointCloud::new(
            source
                .points
                .iter()
                .map(|p| {
                    truth.apply(p)
                        + Vector3::new(
                            rng.random_range(-0.2..0.2),
                            rng.random_range(-0.2..0.2),
                            rng.random_range(-0.2..0.2),
                        )
                })
                .collect(),
        );
        let result = icp_register(
            &source,
            &target,
            &RigidTransform::identity(),
            &IcpParams::default(),
        )
        .unwrap();
        for pair in result.residual_history.windows(2) {
            assert!(
                pair[1] <= pair[0] + 1e-12,
                "residual increased: {} -> {}",
                pair[0],
                pair[1]
            );
        }
        assert_eq!(
            result.iterations_used as usize,
            result.residual_history.len() - 1
        );
    }

    #[test]
    fn empty_cloud_rejected() {
        let cloud = random_cloud(10, 6);
        let empty = PointCloud::default();
        assert!(matches!(
            icp_register(&empty, &cloud, &RigidTransform::identity(), &IcpParams::default()),
            Err(RegistrationError::EmptyCloud)
        ));
    }
}
