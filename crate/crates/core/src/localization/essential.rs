use nalgebra::{DMatrix, Matrix3, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Keypoint, LocalizationParams};
use crate::geom::PinholeCamera;

const RANSAC_CONFIDENCE: f64 = 0.999;

/// Why a candidate reference pair was rejected.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PairRejection {
    /// Fewer than 8 matches; the essential matrix cannot be estimated.
    TooFewMatches,
    /// Match count, inlier count, or inlier ratio below the configured
    /// minimums.
    BelowThresholds,
}

/// Result of essential-matrix verification for one query/reference pair.
#[derive(Debug, Clone)]
pub struct PairVerification {
    /// One flag per input match.
    pub inlier_mask: Vec<bool>,
    pub inlier_count: usize,
    pub inlier_ratio: f64,
    pub accepted: bool,
    pub rejection: Option<PairRejection>,
}

impl PairVerification {
    fn rejected(n: usize, reason: PairRejection) -> Self {
        Self {
            inlier_mask: vec![false; n],
            inlier_count: 0,
            inlier_ratio: 0.0,
            accepted: false,
            rejection: Some(reason),
        }
    }
}

/// RANSAC essential-matrix verification of candidate matches.
///
/// Matches are converted to normalized image coordinates, an essential
/// matrix is fit to minimal 8-match samples, and inliers are counted by
/// Sampson distance below `essential_sampson_threshold_px` (converted to
/// normalized units via the mean focal length). The pair is accepted when
/// the match count, inlier count, and inlier ratio all clear their
/// minimums. Deterministic for a given `seed`.
pub fn verify_pair_essential(
    matches: &[(usize, usize)],
    q_kps: &[Keypoint],
    r_kps: &[Keypoint],
    cam: &PinholeCamera,
    params: &LocalizationParams,
    seed: u64,
) -> PairVerification {
    let n = matches.len();
    if n < 8 {
        return PairVerification::rejected(n, PairRejection::TooFewMatches);
    }

    let x_q: Vec<(f64, f64)> = matches
        .iter()
        .map(|&(qi, _)| cam.normalized(q_kps[qi].pixel[0], q_kps[qi].pixel[1]))
        .collect();
    let x_r: Vec<(f64, f64)> = matches
        .iter()
        .map(|&(_, ri)| cam.normalized(r_kps[ri].pixel[0], r_kps[ri].pixel[1]))
        .collect();
    let threshold = params.essential_sampson_threshold_px / cam.mean_focal();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<(usize, f64, Matrix3<f64>)> = None;
    let mut needed = params.ransac_iterations as f64;
    let mut iter = 0u32;
    while (iter as f64) < needed && iter < params.ransac_iterations {
        iter += 1;
        let sample = rand::seq::index::sample(&mut rng, n, 8);
        let s_q: Vec<(f64, f64)> = sample.iter().map(|i| x_q[i]).collect();
        let s_r: Vec<(f64, f64)> = sample.iter().map(|i| x_r[i]).collect();
        let Some(e) = eight_point(&s_q, &s_r) else {
            continue;
        };
        let mut count = 0usize;
        let mut err_sum = 0.0;
        for i in 0..n {
            let d = sampson_distance(&e, x_q[i], x_r[i]);
            if d < threshold {
                count += 1;
                err_sum += d;
            }
        }
        let better = match &best {
            None => count > 0,
            Some((bc, be, _)) => count > *bc || (count == *bc && err_sum < *be),
        };
        if better {
            best = Some((count, err_sum, e));
            let w = count as f64 / n as f64;
            let p_sample = w.powi(8);
            if p_sample > 1e-12 {
                needed = ((1.0 - RANSAC_CONFIDENCE).ln() / (1.0 - p_sample).ln()).ceil();
            }
        }
    }

    let Some((count, _, e)) = best else {
        return PairVerification::rejected(n, PairRejection::BelowThresholds);
    };
    let inlier_mask: Vec<bool> = (0..n)
        .map(|i| sampson_distance(&e, x_q[i], x_r[i]) < threshold)
        .collect();
    let inlier_ratio = count as f64 / n as f64;
    let accepted = count >= params.min_inlier_count
        && inlier_ratio >= params.min_inlier_ratio
        && n >= params.min_match_count;
    PairVerification {
        inlier_mask,
        inlier_count: count,
        inlier_ratio,
        accepted,
        rejection: (!accepted).then_some(PairRejection::BelowThresholds),
    }
}

/// Normalized 8-point estimate of the essential matrix satisfying
/// `x_r^T E x_q = 0`, with the rank-2 unit-singular-value constraint
/// enforced. `None` on degenerate samples.
fn eight_point(x_q: &[(f64, f64)], x_r: &[(f64, f64)]) -> Option<Matrix3<f64>> {
    let (tq, nq) = hartley_normalize(x_q)?;
    let (tr, nr) = hartley_normalize(x_r)?;

    let n = x_q.len();
    let mut a = DMatrix::<f64>::zeros(n, 9);
    for i in 0..n {
        let (x1, y1) = nq[i];
        let (x2, y2) = nr[i];
        a[(i, 0)] = x2 * x1;
        a[(i, 1)] = x2 * y1;
        a[(i, 2)] = x2;
        a[(i, 3)] = y2 * x1;
        a[(i, 4)] = y2 * y1;
        a[(i, 5)] = y2;
        a[(i, 6)] = x1;
        a[(i, 7)] = y1;
        a[(i, 8)] = 1.0;
    }
    // Nullspace of A via the smallest eigenvector of A^T A. (A thin SVD of
    // the 8x9 system would not expose the nullspace direction at all.)
    let ata = a.transpose() * &a;
    let eigen = ata.symmetric_eigen();
    let mut min_idx = 0;
    for i in 1..9 {
        if eigen.eigenvalues[i] < eigen.eigenvalues[min_idx] {
            min_idx = i;
        }
    }
    let h = eigen.eigenvectors.column(min_idx);
    let e_norm = Matrix3::new(h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7], h[8]);

    // Undo normalization, then project onto the essential manifold.
    let e = tr.transpose() * e_norm * tq;
    let svd = e.svd(true, true);
    let u = svd.u?;
    let v_t = svd.v_t?;
    Some(u * Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, 0.0)) * v_t)
}

/// Similarity transform taking the points to zero centroid and sqrt(2) RMS
/// distance; returns the 3x3 homogeneous transform and transformed points.
fn hartley_normalize(points: &[(f64, f64)]) -> Option<(Matrix3<f64>, Vec<(f64, f64)>)> {
    let n = points.len() as f64;
    let cx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let cy = points.iter().map(|p| p.1).sum::<f64>() / n;
    let mean_dist = points
        .iter()
        .map(|p| ((p.0 - cx).powi(2) + (p.1 - cy).powi(2)).sqrt())
        .sum::<f64>()
        / n;
    if mean_dist < 1e-12 {
        return None;
    }
    let s = std::f64::consts::SQRT_2 / mean_dist;
    let t = Matrix3::new(s, 0.0, -s * cx, 0.0, s, -s * cy, 0.0, 0.0, 1.0);
    let transformed = points
        .iter()
        .map(|p| (s * (p.0 - cx), s * (p.1 - cy)))
        .collect();
    Some((t, transformed))
}

fn sampson_distance(e: &Matrix3<f64>, x_q: (f64, f64), x_r: (f64, f64)) -> f64 {
    let xq = Vector3::new(x_q.0, x_q.1, 1.0);
    let xr = Vector3::new(x_r.0, x_r.1, 1.0);
    let e_xq = e * xq;
    let et_xr = e.transpose() * xr;
    let num = xr.dot(&e_xq);
    let den = e_xq.x * e_xq.x + e_xq.y * e_xq.y + et_xr.x * et_xr.x + et_xr.y * et_xr.y;
    if den <= 0.0 {
        return f64::INFINITY;
    }
    (num * num / den).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{Point3, UnitQuaternion};
    use rand::{Rng, SeedableRng};

    use crate::geom::RigidTransform;

    fn camera() -> PinholeCamera {
        PinholeCamera::new(200.0, 200.0, 200.0, 200.0, 400, 400).unwrap()
    }

    fn kp(pixel: (f64, f64)) -> Keypoint {
        Keypoint {
            pixel: [pixel.0, pixel.1],
            descriptor: Vec::new(),
            point3d_id: None,
        }
    }

    /// Two views of a random point set: query camera at identity, reference
    /// camera displaced by a known rigid motion.
    fn two_view_keypoints(
        n: usize,
        seed: u64,
    ) -> (Vec<Keypoint>, Vec<Keypoint>, Vec<(usize, usize)>) {
        let cam = camera();
        let motion = RigidTransform::new(
            UnitQuaternion::from_axis_angle(&nalgebra::Unit::new_normalize(Vector3::new(0.2, 1.0, 0.1)), 0.15),
            Vector3::new(4.0, -1.0, 2.0),
        );
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut q = Vec::new();
        let mut r = Vec::new();
        while q.len() < n {
            let p = Point3::new(
                rng.random_range(-20.0..20.0),
                rng.random_range(-20.0..20.0),
                rng.random_range(15.0..50.0),
            );
            let (Some(uq), Some(ur)) = (cam.project(&p), cam.project(&motion.apply(&p))) else {
                continue;
            };
            if !cam.in_bounds(uq.0, uq.1) || !cam.in_bounds(ur.0, ur.1) {
                continue;
            }
            q.push(kp(uq));
            r.push(kp(ur));
        }
        let matches = (0..n).map(|i| (i, i)).collect();
        (q, r, matches)
    }

    #[test]
    fn clean_geometry_with_outliers_is_accepted() {
        let (mut q, mut r, mut matches) = two_view_keypoints(100, 1);
        // 100 uniform outlier matches.
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for i in 0..100 {
            q.push(kp((rng.random_range(0.0..400.0), rng.random_range(0.0..400.0))));
            r.push(kp((rng.random_range(0.0..400.0), rng.random_range(0.0..400.0))));
            matches.push((100 + i, 100 + i));
        }
        let params = LocalizationParams::default();
        let v = verify_pair_essential(&matches, &q, &r, &camera(), &params, 7);
        assert!(v.accepted);
        let true_kept = v.inlier_mask[..100].iter().filter(|&&b| b).count();
        let outliers_kept = v.inlier_mask[100..].iter().filter(|&&b| b).count();
        assert!(true_kept >= 90, "only {true_kept} true matches kept");
        assert!(outliers_kept <= 5, "{outliers_kept} outliers kept");
    }

    #[test]
    fn too_few_matches_rejected() {
        let (q, r, matches) = two_view_keypoints(5, 3);
        let params = LocalizationParams::default();
        let v = verify_pair_essential(&matches, &q, &r, &camera(), &params, 7);
        assert!(!v.accepted);
        assert_eq!(v.rejection, Some(PairRejection::TooFewMatches));
        assert_eq!(v.inlier_mask.len(), 5);
    }

    #[test]
    fn all_outlier_matches_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut q = Vec::new();
        let mut r = Vec::new();
        let mut matches = Vec::new();
        for i in 0..200 {
            q.push(kp((rng.random_range(0.0..400.0), rng.random_range(0.0..400.0))));
            r.push(kp((rng.random_range(0.0..400.0), rng.random_range(0.0..400.0))));
            matches.push((i, i));
        }
        let params = LocalizationParams::default();
        let v = verify_pair_essential(&matches, &q, &r, &camera(), &params, 11);
        assert!(!v.accepted);
        assert!(v.inlier_ratio < params.min_inlier_ratio);
    }

    #[test]
    fn deterministic_given_seed() {
        let (q, r, matches) = two_view_keypoints(60, 5);
        let params = LocalizationParams::default();
        let a = verify_pair_essential(&matches, &q, &r, &camera(), &params, 42);
        let b = verify_pair_essential(&matches, &q, &r, &camera(), &params, 42);
        assert_eq!(a.inlier_mask, b.inlier_mask);
        assert_eq!(a.inlier_count, b.inlier_count);
    }

    #[test]
    fn reported_inliers_respect_threshold() {
        let (q, r, matches) = two_view_keypoints(80, 6);
        let params = LocalizationParams::default();
        let v = verify_pair_essential(&matches, &q, &r, &camera(), &params, 9);
        // Every flagged inlier must satisfy the Sampson bound by definition;
        // spot-check via a reconstruction of the math: recompute distances
        // against the best model is not exposed, so assert the count matches
        // the mask instead.
        assert_eq!(
            v.inlier_count,
            v.inlier_mask.iter().filter(|&&b| b).count()
        );
    }
}
