use nalgebra::{Matrix3, Point3, Rotation3, UnitQuaternion, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::RegistrationError;
use crate::geom::{RigidTransform, SimilarityTransform};
use crate::util::mean_stddev;

/// Robust fiducial alignment settings. The RANSAC wrapper samples minimal
/// 3-pair subsets and refits on the consensus set.
#[derive(Debug, Clone, Copy)]
pub struct AlignParams {
    pub with_scale: bool,
    pub ransac_iterations: u32,
    pub inlier_threshold_mm: f64,
    pub rng_seed: u64,
}

impl Default for AlignParams {
    fn default() -> Self {
        Self {
            with_scale: true,
            ransac_iterations: 1000,
            inlier_threshold_mm: 5.0,
            rng_seed: 0,
        }
    }
}

/// Closed-form least-squares alignment of `source` onto `target`
/// (Umeyama). Returns the rigid part and the scale (1 when `with_scale`
/// is false).
///
/// Callers must guarantee equal, non-zero lengths and a non-degenerate
/// source spread; [`align_fiducials_with`] performs those checks.
pub fn umeyama(
    source: &[Point3<f64>],
    target: &[Point3<f64>],
    with_scale: bool,
) -> (RigidTransform, f64) {
    let n = source.len() as f64;
    let mu_s = centroid(source);
    let mu_t = centroid(target);

    let mut sigma = Matrix3::zeros();
    let mut var_s = 0.0;
    for (s, t) in source.iter().zip(target) {
        let ds = s - mu_s;
        let dt = t - mu_t;
        sigma += dt * ds.transpose();
        var_s += ds.norm_squared();
    }
    sigma /= n;
    var_s /= n;

    let svd = sigma.svd(true, true);
    let u = svd.u.expect("3x3 svd");
    let v_t = svd.v_t.expect("3x3 svd");
    let mut s_diag = Vector3::new(1.0, 1.0, 1.0);
    if (u * v_t).determinant() < 0.0 {
        s_diag.z = -1.0;
    }
    let rot_mat = u * Matrix3::from_diagonal(&s_diag) * v_t;
    let rotation = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(rot_mat));

    let scale = if with_scale && var_s > 0.0 {
        (svd.singular_values.component_mul(&s_diag)).sum() / var_s
    } else {
        1.0
    };
    let translation = mu_t.coords - scale * (rot_mat * mu_s.coords);
    (RigidTransform::new(rotation, translation), scale)
}

fn centroid(points: &[Point3<f64>]) -> Point3<f64> {
    let mut sum = Vector3::zeros();
    for p in points {
        sum += p.coords;
    }
    Point3::from(sum / points.len() as f64)
}

/// Spread check: points must not be (near-)collinear for a well-posed
/// rotation estimate.
fn is_degenerate(points: &[Point3<f64>]) -> bool {
    if points.len() < 3 {
        return true;
    }
    let mu = centroid(points);
    let mut cov = Matrix3::zeros();
    for p in points {
        let d = p - mu;
        cov += d * d.transpose();
    }
    cov /= points.len() as f64;
    let mut eig: Vec<f64> = cov.symmetric_eigenvalues().iter().copied().collect();
    eig.sort_by(|a, b| b.partial_cmp(a).unwrap());
    // Second principal axis must carry real extent.
    eig[1] <= 1e-12 * eig[0].max(1.0)
}

/// Least-squares similarity (or rigid) alignment of fiducial pairs,
/// wrapped in RANSAC over minimal 3-pair samples with a final fit on the
/// consensus inliers. Returns the transform and the inlier mask.
pub fn align_fiducials_with(
    pairs: &[(Point3<f64>, Point3<f64>)],
    params: &AlignParams,
) -> Result<(SimilarityTransform, Vec<bool>), RegistrationError> {
    if pairs.len() < 3 {
        return Err(RegistrationError::DegenerateFiducials);
    }
    let sources: Vec<Point3<f64>> = pairs.iter().map(|p| p.0).collect();
    let targets: Vec<Point3<f64>> = pairs.iter().map(|p| p.1).collect();
    if is_degenerate(&sources) {
        return Err(RegistrationError::DegenerateFiducials);
    }

    if pairs.len() == 3 {
        let (rigid, scale) = umeyama(&sources, &targets, params.with_scale);
        let transform = SimilarityTransform::new(rigid, scale)
            .map_err(|_| RegistrationError::DegenerateFiducials)?;
        return Ok((transform, vec![true; 3]));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(params.rng_seed);
    let mut best: Option<(usize, f64, Vec<bool>)> = None;
    for _ in 0..params.ransac_iterations {
        let sample = rand::seq::index::sample(&mut rng, pairs.len(), 3);
        let s: Vec<Point3<f64>> = sample.iter().map(|i| sources[i]).collect();
        let t: Vec<Point3<f64>> = sample.iter().map(|i| targets[i]).collect();
        if is_degenerate(&s) {
            continue;
        }
        let (rigid, scale) = umeyama(&s, &t, params.with_scale);
        if !(scale > 0.0 && scale.is_finite()) {
            continue;
        }
        let candidate = SimilarityTransform::new(rigid, scale).expect("scale checked");
        let mut inliers = vec![false; pairs.len()];
        let mut count = 0;
        let mut err_sum = 0.0;
        for (i, (s, t)) in pairs.iter().enumerate() {
            let e = (candidate.apply(s) - t).norm();
            if e < params.inlier_threshold_mm {
                inliers[i] = true;
                count += 1;
                err_sum += e;
            }
        }
        let better = match &best {
            None => true,
            Some((bc, be, _)) => count > *bc || (count == *bc && err_sum < *be),
        };
        if better {
            best = Some((count, err_sum, inliers));
        }
    }

    let (_, _, inliers) = best.ok_or(RegistrationError::DegenerateFiducials)?;
    let in_s: Vec<Point3<f64>> = pairs
        .iter()
        .zip(&inliers)
        .filter(|(_, &keep)| keep)
        .map(|(p, _)| p.0)
        .collect();
    let in_t: Vec<Point3<f64>> = pairs
        .iter()
        .zip(&inliers)
        .filter(|(_, &keep)| keep)
        .map(|(p, _)| p.1)
        .collect();
    if in_s.len() < 3 || is_degenerate(&in_s) {
        return Err(RegistrationError::DegenerateFiducials);
    }
    let (rigid, scale) = umeyama(&in_s, &in_t, params.with_scale);
    let transform =
        SimilarityTransform::new(rigid, scale).map_err(|_| RegistrationError::DegenerateFiducials)?;
    Ok((transform, inliers))
}

/// Default-parameter alignment; see [`align_fiducials_with`].
pub fn align_fiducials(
    pairs: &[(Point3<f64>, Point3<f64>)],
    with_scale: bool,
) -> Result<SimilarityTransform, RegistrationError> {
    let params = AlignParams {
        with_scale,
        ..AlignParams::default()
    };
    align_fiducials_with(pairs, &params).map(|(t, _)| t)
}

/// Mean and standard deviation of `|t(source) - target|` over held-out
/// pairs (disjoint from the fiducials; the split is the caller's duty).
pub fn target_registration_error(
    transform: &SimilarityTransform,
    held_out_pairs: &[(Point3<f64>, Point3<f64>)],
) -> Result<(f64, f64), RegistrationError> {
    if held_out_pairs.is_empty() {
        return Err(RegistrationError::EmptyHeldOut);
    }
    let errors: Vec<f64> = held_out_pairs
        .iter()
        .map(|(s, t)| (transform.apply(s) - t).norm())
        .collect();
    Ok(mean_stddev(&errors))
}
