use nalgebra::{DMatrix, Matrix6, Point3, UnitQuaternion, Vector3, Vector6};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::LocalizationParams;
use crate::geom::{PinholeCamera, RigidTransform};
use crate::registration::umeyama;

const RANSAC_CONFIDENCE: f64 = 0.999;
const BEHIND_CAMERA_RESIDUAL: f64 = 1e6;

/// A 2D pixel observation of a known 3D world point.
#[derive(Debug, Clone, Copy)]
pub struct Correspondence2d3d {
    pub pixel: [f64; 2],
    pub point: Point3<f64>,
}

/// Robust absolute pose result. The pose is camera-from-world.
#[derive(Debug, Clone)]
pub struct PoseEstimate {
    pub pose: RigidTransform,
    pub inlier_mask: Vec<bool>,
    pub inlier_count: usize,
    /// RMS pixel reprojection error over the inliers.
    pub rms_reprojection_px: f64,
}

/// RANSAC absolute pose from 2D-3D correspondences: minimal 3-point solver
/// with a 4th sampled point for disambiguation, inliers by reprojection
/// error, then Levenberg-Marquardt refinement on the consensus set.
///
/// Returns `None` (unlocalized) with fewer than 4 correspondences or when
/// the best consensus stays below `min_inlier_count`. Deterministic for a
/// given `seed`.
pub fn estimate_absolute_pose(
    corrs: &[Correspondence2d3d],
    cam: &PinholeCamera,
    params: &LocalizationParams,
    seed: u64,
) -> Option<PoseEstimate> {
    let n = corrs.len();
    if n < 4 {
        return None;
    }
    let threshold = params.pnp_reprojection_threshold_px;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<(usize, f64, RigidTransform)> = None;
    let mut needed = params.ransac_iterations as f64;
    let mut iter = 0u32;
    while (iter as f64) < needed && iter < params.ransac_iterations {
        iter += 1;
        let sample = rand::seq::index::sample(&mut rng, n, 4);
        let idx: Vec<usize> = sample.iter().collect();
        let world = [corrs[idx[0]].point, corrs[idx[1]].point, corrs[idx[2]].point];
        let bearings = [
            cam.bearing(corrs[idx[0]].pixel[0], corrs[idx[0]].pixel[1]),
            cam.bearing(corrs[idx[1]].pixel[0], corrs[idx[1]].pixel[1]),
            cam.bearing(corrs[idx[2]].pixel[0], corrs[idx[2]].pixel[1]),
        ];
        let candidates = p3p(&world, &bearings);
        if candidates.is_empty() {
            continue;
        }
        // Disambiguate with the 4th sampled point.
        let probe = &corrs[idx[3]];
        let pose = candidates
            .into_iter()
            .map(|pose| (reprojection_px(&pose, cam, probe), pose))
            .min_by(|a, b| a.0.partial_cmp(&b.0).unwrap())
            .map(|(_, pose)| pose)?;

        let (count, rms) = score(&pose, cam, corrs, threshold);
        let better = match &best {
            None => count > 0,
            Some((bc, brms, _)) => count > *bc || (count == *bc && rms < *brms),
        };
        if better {
            best = Some((count, rms, pose));
            let w = count as f64 / n as f64;
            let p_sample = w.powi(4);
            if p_sample > 1e-12 {
                needed = ((1.0 - RANSAC_CONFIDENCE).ln() / (1.0 - p_sample).ln()).ceil();
            }
        }
    }

    let (count, _, ransac_pose) = best?;
    if count < params.min_inlier_count {
        return None;
    }
    let ransac_mask: Vec<bool> = corrs
        .iter()
        .map(|c| reprojection_px(&ransac_pose, cam, c) < threshold)
        .collect();

    let inliers: Vec<Correspondence2d3d> = corrs
        .iter()
        .zip(&ransac_mask)
        .filter(|(_, &keep)| keep)
        .map(|(c, _)| *c)
        .collect();
    let refined = refine_pose(&ransac_pose, cam, &inliers);

    // Keep whichever pose explains more correspondences (refinement cannot
    // lose on its own inlier set, but the recomputed mask may differ).
    let mut final_pose = ransac_pose;
    let mut final_score = score(&ransac_pose, cam, corrs, threshold);
    let refined_score = score(&refined, cam, corrs, threshold);
    if refined_score.0 > final_score.0 || (refined_score.0 == final_score.0 && refined_score.1 <= final_score.1)
    {
        final_pose = refined;
        final_score = refined_score;
    }
    if final_score.0 < params.min_inlier_count {
        return None;
    }
    let inlier_mask: Vec<bool> = corrs
        .iter()
        .map(|c| reprojection_px(&final_pose, cam, c) < threshold)
        .collect();
    Some(PoseEstimate {
        pose: final_pose,
        inlier_count: final_score.0,
        rms_reprojection_px: final_score.1,
        inlier_mask,
    })
}

/// Pixel reprojection error of one correspondence; huge when the point is
/// behind the camera so it can never count as an inlier.
fn reprojection_px(pose: &RigidTransform, cam: &PinholeCamera, corr: &Correspondence2d3d) -> f64 {
    match cam.project(&pose.apply(&corr.point)) {
        Some((u, v)) => {
            let du = u - corr.pixel[0];
            let dv = v - corr.pixel[1];
            (du * du + dv * dv).sqrt()
        }
        None => BEHIND_CAMERA_RESIDUAL,
    }
}

/// Inlier count and RMS error over inliers for a candidate pose.
fn score(
    pose: &RigidTransform,
    cam: &PinholeCamera,
    corrs: &[Correspondence2d3d],
    threshold: f64,
) -> (usize, f64) {
    let mut count = 0usize;
    let mut sq_sum = 0.0;
    for c in corrs {
        let e = reprojection_px(pose, cam, c);
        if e < threshold {
            count += 1;
            sq_sum += e * e;
        }
    }
    let rms = if count > 0 {
        (sq_sum / count as f64).sqrt()
    } else {
        f64::INFINITY
    };
    (count, rms)
}

/// Minimal absolute pose: given 3 world points and their unit bearing
/// vectors in the camera frame, returns up to four camera-from-world
/// candidates (Grunert's distance formulation, quartic in the distance
/// ratio).
fn p3p(world: &[Point3<f64>; 3], bearings: &[Vector3<f64>; 3]) -> Vec<RigidTransform> {
    let a = (world[1] - world[2]).norm();
    let b = (world[0] - world[2]).norm();
    let c = (world[0] - world[1]).norm();
    if a < 1e-9 || b < 1e-9 || c < 1e-9 {
        return Vec::new();
    }
    let cos_alpha = bearings[1].dot(&bearings[2]);
    let cos_beta = bearings[0].dot(&bearings[2]);
    let cos_gamma = bearings[0].dot(&bearings[1]);

    let c2 = c * c;
    let d = (b * b - a * a) / c2;
    let e = (b * b) / c2;

    // v = n(u) / den(u); substituting into the law-of-cosines system leaves
    // a quartic in u = s2/s1.
    let n_poly = [1.0 - d, 2.0 * d * cos_gamma, -(1.0 + d)];
    let den_poly = [2.0 * cos_beta, -2.0 * cos_alpha];
    let e_poly = [1.0 - e, 2.0 * e * cos_gamma, -e];

    let n_sq = poly_mul(&n_poly, &n_poly);
    let n_den = poly_mul(&n_poly, &den_poly);
    let den_sq = poly_mul(&den_poly, &den_poly);
    let e_den_sq = poly_mul(&e_poly, &den_sq);

    let mut quartic = [0.0; 5];
    for i in 0..5 {
        quartic[i] = n_sq.get(i).copied().unwrap_or(0.0)
            - 2.0 * cos_beta * n_den.get(i).copied().unwrap_or(0.0)
            + e_den_sq.get(i).copied().unwrap_or(0.0);
    }

    let mut poses = Vec::new();
    for u in real_roots(&quartic) {
        if u <= 0.0 {
            continue;
        }
        let den = den_poly[0] + den_poly[1] * u;
        if den.abs() < 1e-12 {
            continue;
        }
        let v = (n_poly[0] + n_poly[1] * u + n_poly[2] * u * u) / den;
        if v <= 0.0 {
            continue;
        }
        let g = 1.0 + u * u - 2.0 * u * cos_gamma;
        if g <= 1e-12 {
            continue;
        }
        let s1 = c / g.sqrt();
        let s2 = u * s1;
        let s3 = v * s1;
        let camera_pts = vec![bearings[0] * s1, bearings[1] * s2, bearings[2] * s3];
        let camera_pts: Vec<Point3<f64>> = camera_pts.into_iter().map(Point3::from).collect();
        let (pose, _) = umeyama(world.as_slice(), &camera_pts, false);
        poses.push(pose);
    }
    poses
}

/// Coefficient-list polynomial product (index = power).
fn poly_mul(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; a.len() + b.len() - 1];
    for (i, &x) in a.iter().enumerate() {
        for (j, &y) in b.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
    out
}

/// Real roots of a polynomial with coefficients in ascending power order,
/// via the companion matrix. Degenerate leading coefficients reduce the
/// degree.
fn real_roots(coeffs: &[f64]) -> Vec<f64> {
    let mut c: Vec<f64> = coeffs.to_vec();
    while let Some(&last) = c.last() {
        if last.abs() < 1e-14 && c.len() > 1 {
            c.pop();
        } else {
            break;
        }
    }
    let degree = c.len() - 1;
    match degree {
        0 => Vec::new(),
        1 => vec![-c[0] / c[1]],
        2 => {
            let (a, b, c0) = (c[2], c[1], c[0]);
            let disc = b * b - 4.0 * a * c0;
            if disc < 0.0 {
                Vec::new()
            } else {
                let s = disc.sqrt();
                vec![(-b + s) / (2.0 * a), (-b - s) / (2.0 * a)]
            }
        }
        _ => {
            let lead = c[degree];
            let mut companion = DMatrix::<f64>::zeros(degree, degree);
            for i in 0..degree {
                companion[(0, i)] = -c[degree - 1 - i] / lead;
            }
            for i in 1..degree {
                companion[(i, i - 1)] = 1.0;
            }
            let eigen = companion.complex_eigenvalues();
            let mut roots: Vec<f64> = eigen
                .iter()
                .filter(|z| z.im.abs() < 1e-8)
                .map(|z| z.re)
                .collect();
            roots.sort_by(|a, b| a.partial_cmp(b).unwrap());
            roots.dedup_by(|a, b| (*a - *b).abs() < 1e-10);
            roots
        }
    }
}

/// Levenberg-Marquardt refinement of the pose on a fixed correspondence
/// set, minimizing squared pixel reprojection error. Steps are only
/// accepted when the cost decreases, so the returned pose is never worse
/// than the input on this set.
fn refine_pose(
    initial: &RigidTransform,
    cam: &PinholeCamera,
    corrs: &[Correspondence2d3d],
) -> RigidTransform {
    if corrs.is_empty() {
        return *initial;
    }
    let mut x = pack(initial);
    let mut cost = cost_of(&x, cam, corrs);
    let mut lambda = 1e-3;

    for _ in 0..30 {
        let (jtj, jtr) = normal_equations(&x, cam, corrs);
        let mut damped = jtj;
        for i in 0..6 {
            let d = jtj[(i, i)].max(1e-12);
            damped[(i, i)] = jtj[(i, i)] + lambda * d;
        }
        let Some(chol) = damped.cholesky() else {
            lambda *= 10.0;
            if lambda > 1e10 {
                break;
            }
            continue;
        };
        let delta = chol.solve(&(-jtr));
        let x_new = x + delta;
        let new_cost = cost_of(&x_new, cam, corrs);
        if new_cost < cost {
            let improvement = cost - new_cost;
            x = x_new;
            cost = new_cost;
            lambda = (lambda / 10.0).max(1e-12);
            if delta.norm() < 1e-12 || improvement < 1e-16 * cost.max(1.0) {
                break;
            }
        } else {
            lambda *= 10.0;
            if lambda > 1e10 {
                break;
            }
        }
    }
    unpack(&x)
}

fn pack(pose: &RigidTransform) -> Vector6<f64> {
    let w = pose.rotation().scaled_axis();
    let t = pose.translation();
    Vector6::new(w.x, w.y, w.z, t.x, t.y, t.z)
}

fn unpack(x: &Vector6<f64>) -> RigidTransform {
    RigidTransform::new(
        UnitQuaternion::from_scaled_axis(Vector3::new(x[0], x[1], x[2])),
        Vector3::new(x[3], x[4], x[5]),
    )
}

fn residuals(x: &Vector6<f64>, cam: &PinholeCamera, corrs: &[Correspondence2d3d]) -> Vec<f64> {
    let pose = unpack(x);
    let mut r = Vec::with_capacity(2 * corrs.len());
    for c in corrs {
        match cam.project(&pose.apply(&c.point)) {
            Some((u, v)) => {
                r.push(u - c.pixel[0]);
                r.push(v - c.pixel[1]);
            }
            None => {
                r.push(BEHIND_CAMERA_RESIDUAL);
                r.push(BEHIND_CAMERA_RESIDUAL);
            }
        }
    }
    r
}

fn cost_of(x: &Vector6<f64>, cam: &PinholeCamera, corrs: &[Correspondence2d3d]) -> f64 {
    residuals(x, cam, corrs).iter().map(|r| r * r).sum()
}

/// J^T J and J^T r with a central-difference Jacobian.
fn normal_equations(
    x: &Vector6<f64>,
    cam: &PinholeCamera,
    corrs: &[Correspondence2d3d],
) -> (Matrix6<f64>, Vector6<f64>) {
    let r0 = residuals(x, cam, corrs);
    let m = r0.len();
    let mut jacobian = vec![[0.0f64; 6]; m];
    for j in 0..6 {
        let h = 1e-6 * x[j].abs().max(1.0);
        let mut xp = *x;
        let mut xm = *x;
        xp[j] += h;
        xm[j] -= h;
        let rp = residuals(&xp, cam, corrs);
        let rm = residuals(&xm, cam, corrs);
        for i in 0..m {
            jacobian[i][j] = (rp[i] - rm[i]) / (2.0 * h);
        }
    }
    let mut jtj = Matrix6::<f64>::zeros();
    let mut jtr = Vector6::<f64>::zeros();
    for i in 0..m {
        for a in 0..6 {
            jtr[a] += jacobian[i][a] * r0[i];
            for b in a..6 {
                jtj[(a, b)] += jacobian[i][a] * jacobian[i][b];
            }
        }
    }
    for a in 0..6 {
        for b in 0..a {
            jtj[(a, b)] = jtj[(b, a)];
        }
    }
    (jtj, jtr)
}
