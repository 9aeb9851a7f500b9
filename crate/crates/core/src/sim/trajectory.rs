//! Ground-truth camera trajectories along phantom centerlines, and
//! teleport-outlier injection for exercising the velocity filter.

use nalgebra::{Point3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{CenterlineTree, SimError};
use crate::geom::RigidTransform;
use crate::visitation::look_at_pose;

/// Camera stops this far (mm) before the cap center of a visited calyx.
const TIP_MARGIN_MM: f64 = 1.0;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TrajectorySpec {
    /// Calyx ids to visit in order; empty means a pelvis-only orbit.
    pub visit_plan: Vec<u32>,
    pub speed_mm_per_s: f64,
    pub fps: f64,
    /// Pause at each calyx tip, seconds.
    pub dwell_s: f64,
    pub seed: u64,
}

impl Default for TrajectorySpec {
    fn default() -> Self {
        Self {
            visit_plan: Vec::new(),
            speed_mm_per_s: 20.0,
            fps: 30.0,
            dwell_s: 2.0,
            seed: 0,
        }
    }
}

/// A ground-truth posed frame; the pose is camera-from-world.
#[derive(Debug, Clone)]
pub struct PosedFrame {
    pub frame_id: u64,
    pub timestamp_s: f64,
    pub pose: RigidTransform,
}

impl PosedFrame {
    pub fn camera_center(&self) -> Point3<f64> {
        crate::localization::camera_center(&self.pose)
    }
}

/// One piece of the exploration timeline.
enum Piece {
    /// Constant-speed travel along a polyline, looking along the motion.
    Travel { path: Vec<Point3<f64>>, length: f64 },
    /// Stationary dwell looking along `look`.
    Dwell { at: Point3<f64>, look: Vector3<f64>, duration: f64 },
}

impl Piece {
    fn duration(&self, speed: f64) -> f64 {
        match self {
            Piece::Travel { length, .. } => length / speed,
            Piece::Dwell { duration, .. } => *duration,
        }
    }
}

fn polyline_length(path: &[Point3<f64>]) -> f64 {
    path.windows(2).map(|w| (w[1] - w[0]).norm()).sum()
}

/// Position and tangent at arc length `s` along a polyline.
fn sample_polyline(path: &[Point3<f64>], s: f64) -> (Point3<f64>, Vector3<f64>) {
    let mut remaining = s.max(0.0);
    for w in path.windows(2) {
        let seg = w[1] - w[0];
        let len = seg.norm();
        if remaining <= len || len == 0.0 {
            let dir = if len > 0.0 { seg / len } else { Vector3::z() };
            return (w[0] + dir * remaining.min(len), dir);
        }
        remaining -= len;
    }
    let last = path[path.len() - 1];
    let prev = path[path.len() - 2];
    let dir = (last - prev).normalize();
    (last, dir)
}

/// Camera trajectory through the planned calyces: out along each
/// centerline, a dwell at the tip, and back to the pelvis center. An empty
/// plan orbits inside the pelvis. Frames are spaced at `1/fps`; travel
/// speed is exact along the path.
pub fn generate_trajectory(
    tree: &CenterlineTree,
    spec: &TrajectorySpec,
) -> Result<Vec<PosedFrame>, SimError> {
    if !(spec.fps > 0.0) || !(spec.speed_mm_per_s > 0.0) || spec.dwell_s < 0.0 {
        return Err(SimError::InvalidSpec(
            "fps and speed must be positive, dwell non-negative".into(),
        ));
    }

    let mut pieces: Vec<Piece> = Vec::new();
    if spec.visit_plan.is_empty() {
        // Circular orbit at 40% pelvis radius in the equatorial plane.
        let orbit_radius = 0.4 * tree.pelvis_radius_mm;
        let steps = 72;
        let path: Vec<Point3<f64>> = (0..=steps)
            .map(|k| {
                let a = std::f64::consts::TAU * k as f64 / steps as f64;
                Point3::new(orbit_radius * a.cos(), orbit_radius * a.sin(), 0.0)
            })
            .collect();
        let length = polyline_length(&path);
        pieces.push(Piece::Travel { path, length });
    } else {
        for &calyx_id in &spec.visit_plan {
            let calyx = tree
                .calyces
                .iter()
                .find(|c| c.calyx_id == calyx_id)
                .ok_or(SimError::UnknownCalyx(calyx_id))?;
            let mut outbound = calyx.polyline.clone();
            // Stop short of the cap center.
            let total = polyline_length(&outbound);
            let (stop, look) = sample_polyline(&outbound, total - TIP_MARGIN_MM);
            while polyline_length(&outbound) > total - TIP_MARGIN_MM
                && outbound.len() > 2
                && (outbound[outbound.len() - 1] - outbound[outbound.len() - 2]).norm()
                    < TIP_MARGIN_MM
            {
                outbound.pop();
            }
            *outbound.last_mut().expect("non-empty polyline") = stop;

            let mut inbound = outbound.clone();
            inbound.reverse();
            let length = polyline_length(&outbound);
            pieces.push(Piece::Travel {
                path: outbound,
                length,
            });
            if spec.dwell_s > 0.0 {
                pieces.push(Piece::Dwell {
                    at: stop,
                    look,
                    duration: spec.dwell_s,
                });
            }
            pieces.push(Piece::Travel {
                path: inbound,
                length,
            });
        }
    }

    let total_duration: f64 = pieces.iter().map(|p| p.duration(spec.speed_mm_per_s)).sum();
    let n_frames = (total_duration * spec.fps).ceil() as u64;
    let mut frames = Vec::with_capacity(n_frames as usize);
    for k in 0..n_frames {
        let t = k as f64 / spec.fps;
        if t >= total_duration {
            break;
        }
        let mut remaining = t;
        let mut placed = None;
        for piece in &pieces {
            let d = piece.duration(spec.speed_mm_per_s);
            if remaining <= d {
                placed = Some(match piece {
                    Piece::Travel { path, .. } => {
                        let s = remaining * spec.speed_mm_per_s;
                        sample_polyline(path, s)
                    }
                    Piece::Dwell { at, look, .. } => (*at, *look),
                });
                break;
            }
            remaining -= d;
        }
        let (center, look) = placed.unwrap_or_else(|| match pieces.last().expect("pieces") {
            Piece::Travel { path, length } => sample_polyline(path, *length),
            Piece::Dwell { at, look, .. } => (*at, *look),
        });
        frames.push(PosedFrame {
            frame_id: k,
            timestamp_s: t,
            pose: look_at_pose(&center, &look),
        });
    }
    Ok(frames)
}

/// Displaces `teleport_count` frames by `teleport_distance_mm` in random
/// directions and returns the injected indices (ground truth for velocity-
/// filter tests). Injected frames are never the first frame and never
/// adjacent to each other, so a correct filter rejects exactly them.
pub fn perturb_trajectory(
    frames: &[PosedFrame],
    teleport_count: usize,
    teleport_distance_mm: f64,
    seed: u64,
) -> (Vec<PosedFrame>, Vec<usize>) {
    let mut out = frames.to_vec();
    if teleport_count == 0 || frames.len() < 3 {
        return (out, Vec::new());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen: Vec<usize> = Vec::new();
    let mut candidates: Vec<usize> = (1..frames.len()).collect();
    while chosen.len() < teleport_count && !candidates.is_empty() {
        let pick = candidates[rng.random_range(0..candidates.len())];
        chosen.push(pick);
        candidates.retain(|&c| c + 1 < pick || c > pick + 1);
    }
    chosen.sort_unstable();

    for &idx in &chosen {
        let dir = loop {
            let v = Vector3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            );
            if v.norm() > 1e-3 {
                break v.normalize();
            }
        };
        let frame = &mut out[idx];
        let center = frame.camera_center() + dir * teleport_distance_mm;
        let rotation = *frame.pose.rotation();
        frame.pose = RigidTransform::new(rotation, -(rotation * center.coords));
    }
    (out, chosen)
}
