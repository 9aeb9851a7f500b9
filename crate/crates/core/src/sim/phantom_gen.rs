//! Procedural labeled phantom: an icosphere pelvis with bent tubular
//! calyces stitched onto circular mouth openings.
//!
//! The tube axes are circular arcs (anatomical calyces curve away from the
//! pelvis, and a straight tube would leave its far cap visible from the
//! pelvis center, which defeats visitation scoring). Vertices on each tube
//! and its cap carry the calyx id; pelvis and mouth-junction vertices are
//! label 0.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use nalgebra::{Point3, Unit, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::SimError;
use crate::phantom::LabeledMesh;

/// Total bend of each calyx axis. Chosen so the cap is never in direct
/// line of sight from the pelvis interior.
const BEND_ANGLE_RAD: f64 = 80.0 * std::f64::consts::PI / 180.0;
/// Clearance demanded between tube centerlines beyond two tube radii.
const TUBE_CLEARANCE_MM: f64 = 1.0;
/// Each calyx connects through a narrower neck (infundibulum): the mouth
/// opens at this fraction of the calyx radius and flares to full radius by
/// `NECK_RAMP_END` of the arc length. Together with the bend this keeps
/// the calyx interior out of line of sight from the pelvis.
const NECK_RADIUS_FRACTION: f64 = 0.5;
const NECK_RAMP_END: f64 = 0.45;

/// Tube radius profile along the arc parameter `t` in [0, 1].
fn radius_profile(tube_radius: f64, t: f64) -> f64 {
    let s = (t / NECK_RAMP_END).clamp(0.0, 1.0);
    let smooth = s * s * (3.0 - 2.0 * s);
    tube_radius * (NECK_RADIUS_FRACTION + (1.0 - NECK_RADIUS_FRACTION) * smooth)
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct PhantomSpec {
    pub n_calyces: u32,
    pub calyx_diameter_mm: f64,
    pub calyx_depth_mm: f64,
    pub pelvis_radius_mm: f64,
    /// Segments per tube ring; also controls pelvis tessellation.
    pub mesh_resolution: u32,
    pub seed: u64,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        Self {
            n_calyces: 6,
            calyx_diameter_mm: 10.0,
            calyx_depth_mm: 25.0,
            pelvis_radius_mm: 15.0,
            mesh_resolution: 16,
            seed: 0,
        }
    }
}

/// Axis polyline of one calyx, from the pelvis center to the cap center.
#[derive(Debug, Clone)]
pub struct CalyxCenterline {
    pub calyx_id: u32,
    pub polyline: Vec<Point3<f64>>,
}

/// Centerline tree for trajectory planning.
#[derive(Debug, Clone)]
pub struct CenterlineTree {
    pub pelvis_radius_mm: f64,
    pub calyces: Vec<CalyxCenterline>,
}

pub fn generate_phantom(spec: &PhantomSpec) -> Result<(LabeledMesh, CenterlineTree), SimError> {
    validate_spec(spec)?;
    let tube_radius = spec.calyx_diameter_mm / 2.0;
    let pelvis_radius = spec.pelvis_radius_mm;
    let neck_radius = tube_radius * NECK_RADIUS_FRACTION;
    let mouth_angle = (neck_radius / pelvis_radius).asin();
    let res = spec.mesh_resolution as usize;
    let tube_edge = std::f64::consts::TAU * tube_radius / res as f64;

    // Pelvis tessellation must resolve the mouth openings.
    let edge_target = tube_edge.min(pelvis_radius * mouth_angle / 2.5);
    let subdivisions = ((1.05146 * pelvis_radius / edge_target).log2().ceil() as u32).clamp(1, 7);
    let edge_angle = 1.05146 / 2f64.powi(subdivisions as i32);

    let (directions, bends) = calyx_directions(spec)?;
    let min_separation = 2.0 * mouth_angle + 2.0 * edge_angle + 0.05;
    for i in 0..directions.len() {
        for j in (i + 1)..directions.len() {
            let angle = directions[i].angle(&directions[j]);
            if angle < min_separation {
                return Err(SimError::GenerationFailed(format!(
                    "calyx directions {i} and {j} are {angle:.3} rad apart; need {min_separation:.3}"
                )));
            }
        }
    }

    let (sphere_verts, sphere_faces) = icosphere(subdivisions, pelvis_radius);

    // Assign sphere vertices inside a mouth cone to that calyx.
    let mut claimed: Vec<Option<u32>> = vec![None; sphere_verts.len()];
    for (ci, d) in directions.iter().enumerate() {
        for (vi, v) in sphere_verts.iter().enumerate() {
            if v.coords.normalize().dot(d).acos() < mouth_angle {
                if claimed[vi].is_some() {
                    return Err(SimError::GenerationFailed(format!(
                        "vertex {vi} claimed by two mouth openings"
                    )));
                }
                claimed[vi] = Some(ci as u32 + 1);
            }
        }
    }
    for (ci, _) in directions.iter().enumerate() {
        let id = ci as u32 + 1;
        if !claimed.contains(&Some(id)) {
            return Err(SimError::GenerationFailed(format!(
                "mesh resolution too low to cut a mouth opening for calyx {id}"
            )));
        }
    }

    // Keep faces with no claimed vertex; removed faces belong to the calyx
    // that claimed one of their vertices.
    let mut kept_faces: Vec<[u32; 3]> = Vec::new();
    let mut removed_by: Vec<Vec<[u32; 3]>> = vec![Vec::new(); directions.len()];
    for f in &sphere_faces {
        let owners: BTreeSet<u32> = f
            .iter()
            .filter_map(|&v| claimed[v as usize])
            .collect();
        match owners.len() {
            0 => kept_faces.push(*f),
            1 => {
                let id = *owners.iter().next().expect("one owner");
                removed_by[(id - 1) as usize].push(*f);
            }
            _ => {
                return Err(SimError::GenerationFailed(
                    "mouth openings overlap on a face".to_string(),
                ))
            }
        }
    }

    // Final mesh arrays: kept pelvis vertices first.
    let mut vertices: Vec<Point3<f64>> = Vec::new();
    let mut labels: Vec<u32> = Vec::new();
    let mut faces: Vec<[u32; 3]> = Vec::new();
    let mut remap: Vec<Option<u32>> = vec![None; sphere_verts.len()];
    for (vi, v) in sphere_verts.iter().enumerate() {
        let used = claimed[vi].is_none();
        if used {
            remap[vi] = Some(vertices.len() as u32);
            vertices.push(*v);
            labels.push(0);
        }
    }
    for f in &kept_faces {
        faces.push([
            remap[f[0] as usize].expect("kept faces use kept vertices"),
            remap[f[1] as usize].expect("kept faces use kept vertices"),
            remap[f[2] as usize].expect("kept faces use kept vertices"),
        ]);
    }

    let mut centerlines = Vec::new();
    for (ci, direction) in directions.iter().enumerate() {
        let calyx_id = ci as u32 + 1;
        let boundary = boundary_loop(&kept_faces, &removed_by[ci], calyx_id)?;
        let boundary: Vec<u32> = order_loop(&boundary, &sphere_verts, direction)?;

        let centerline = build_calyx(
            &mut vertices,
            &mut labels,
            &mut faces,
            &remap,
            &boundary,
            direction,
            &bends[ci],
            calyx_id,
            spec,
            tube_radius,
            mouth_angle,
            tube_edge,
        )?;
        centerlines.push(centerline);
    }

    // Tube centerlines must stay clear of one another.
    for i in 0..centerlines.len() {
        for j in (i + 1)..centerlines.len() {
            let min_dist = polyline_distance(
                &centerlines[i].polyline[1..],
                &centerlines[j].polyline[1..],
            );
            if min_dist < 2.0 * tube_radius + TUBE_CLEARANCE_MM {
                return Err(SimError::GenerationFailed(format!(
                    "calyces {} and {} are {min_dist:.2} mm apart",
                    i + 1,
                    j + 1
                )));
            }
        }
    }

    let mesh = crate::geom::TriMesh::new(vertices, faces)
        .map_err(|e| SimError::GenerationFailed(format!("mesh validation: {e}")))?;
    if !mesh.is_watertight() {
        return Err(SimError::GenerationFailed(
            "assembled mesh is not watertight".to_string(),
        ));
    }
    let names: BTreeMap<u32, String> = (1..=spec.n_calyces)
        .map(|id| (id, format!("calyx_{id}")))
        .collect();
    let labeled = LabeledMesh::new(mesh, labels, names)
        .map_err(|e| SimError::GenerationFailed(format!("label validation: {e}")))?;

    Ok((
        labeled,
        CenterlineTree {
            pelvis_radius_mm: pelvis_radius,
            calyces: centerlines,
        },
    ))
}

fn validate_spec(spec: &PhantomSpec) -> Result<(), SimError> {
    if spec.n_calyces < 1 {
        return Err(SimError::InvalidSpec("n_calyces must be >= 1".into()));
    }
    if !(spec.calyx_diameter_mm > 0.0 && spec.calyx_depth_mm > 0.0 && spec.pelvis_radius_mm > 0.0)
    {
        return Err(SimError::InvalidSpec(
            "diameter, depth, and pelvis radius must be positive".into(),
        ));
    }
    if spec.mesh_resolution < 6 {
        return Err(SimError::GenerationFailed(
            "mesh_resolution below 6 cannot close a tube ring".into(),
        ));
    }
    if spec.calyx_diameter_mm / 2.0 >= 0.9 * spec.pelvis_radius_mm {
        return Err(SimError::InvalidSpec(
            "tube radius must be well below the pelvis radius".into(),
        ));
    }
    Ok(())
}

/// Calyx directions on a latitude-banded spiral with small seeded jitter,
/// plus per-calyx bend directions (perpendicular, pointing equatorward).
fn calyx_directions(spec: &PhantomSpec) -> Result<(Vec<Vector3<f64>>, Vec<Vector3<f64>>), SimError> {
    let n = spec.n_calyces as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    let theta_min = 30f64.to_radians();
    let theta_max = 110f64.to_radians();
    let mut directions = Vec::with_capacity(n);
    let mut bends = Vec::with_capacity(n);
    for i in 0..n {
        let theta = theta_min
            + (theta_max - theta_min) * ((i as f64 + 0.5) / n as f64)
            + rng.random_range(-0.04..0.04);
        let phi = golden * i as f64 + rng.random_range(-0.04..0.04);
        let d = Vector3::new(
            theta.sin() * phi.cos(),
            theta.sin() * phi.sin(),
            theta.cos(),
        );
        // Bend away from the +z pole: the perpendicular component of -z,
        // with a little azimuthal jitter.
        let equatorward = (-Vector3::z() - d * (-Vector3::z()).dot(&d)).normalize();
        let jitter = UnitQuaternion::from_axis_angle(
            &Unit::new_normalize(d),
            rng.random_range(-0.15..0.15),
        );
        directions.push(d);
        bends.push(jitter * equatorward);
    }
    Ok((directions, bends))
}

/// Extracts the hole boundary: edges shared by one kept face and one face
/// removed for this calyx, chained into a single closed loop.
fn boundary_loop(
    kept_faces: &[[u32; 3]],
    removed_faces: &[[u32; 3]],
    calyx_id: u32,
) -> Result<Vec<u32>, SimError> {
    let mut kept_edges: BTreeSet<(u32, u32)> = BTreeSet::new();
    for f in kept_faces {
        for k in 0..3 {
            let a = f[k];
            let b = f[(k + 1) % 3];
            kept_edges.insert((a.min(b), a.max(b)));
        }
    }
    let mut boundary_edges: Vec<(u32, u32)> = Vec::new();
    for f in removed_faces {
        for k in 0..3 {
            let a = f[k];
            let b = f[(k + 1) % 3];
            let key = (a.min(b), a.max(b));
            if kept_edges.contains(&key) {
                boundary_edges.push(key);
            }
        }
    }
    boundary_edges.sort_unstable();
    boundary_edges.dedup();
    if boundary_edges.len() < 3 {
        return Err(SimError::GenerationFailed(format!(
            "calyx {calyx_id}: mouth boundary has {} edges",
            boundary_edges.len()
        )));
    }

    let mut adjacency: BTreeMap<u32, Vec<u32>> = BTreeMap::new();
    for &(a, b) in &boundary_edges {
        adjacency.entry(a).or_default().push(b);
        adjacency.entry(b).or_default().push(a);
    }
    for (v, neighbors) in &adjacency {
        if neighbors.len() != 2 {
            return Err(SimError::GenerationFailed(format!(
                "calyx {calyx_id}: boundary vertex {v} has {} neighbors",
                neighbors.len()
            )));
        }
    }

    let start = *adjacency.keys().next().expect("non-empty boundary");
    let mut loop_verts = vec![start];
    let mut prev = start;
    let mut current = adjacency[&start][0];
    while current != start {
        loop_verts.push(current);
        let next = if adjacency[&current][0] == prev {
            adjacency[&current][1]
        } else {
            adjacency[&current][0]
        };
        prev = current;
        current = next;
        if loop_verts.len() > adjacency.len() {
            return Err(SimError::GenerationFailed(format!(
                "calyx {calyx_id}: boundary walk did not close"
            )));
        }
    }
    if loop_verts.len() != adjacency.len() {
        return Err(SimError::GenerationFailed(format!(
            "calyx {calyx_id}: boundary has multiple loops"
        )));
    }
    Ok(loop_verts)
}

/// Orients the loop counter-clockwise around the mouth direction and
/// rotates it to start near azimuth zero.
fn order_loop(
    loop_verts: &[u32],
    sphere_verts: &[Point3<f64>],
    direction: &Vector3<f64>,
) -> Result<Vec<u32>, SimError> {
    let (e1, e2) = perp_basis(direction);
    let azimuth = |v: u32| -> f64 {
        let p = &sphere_verts[v as usize].coords;
        (p.dot(&e2)).atan2(p.dot(&e1))
    };
    let mut verts = loop_verts.to_vec();
    let mut signed_total = 0.0;
    for i in 0..verts.len() {
        let a = azimuth(verts[i]);
        let b = azimuth(verts[(i + 1) % verts.len()]);
        let mut delta = b - a;
        while delta > std::f64::consts::PI {
            delta -= std::f64::consts::TAU;
        }
        while delta < -std::f64::consts::PI {
            delta += std::f64::consts::TAU;
        }
        signed_total += delta;
    }
    if signed_total < 0.0 {
        verts.reverse();
    }
    // Start at the vertex whose azimuth is closest to zero (the first
    // mouth-ring vertex sits at azimuth zero).
    let start = verts
        .iter()
        .enumerate()
        .min_by(|a, b| {
            let wrap = |x: f64| x.rem_euclid(std::f64::consts::TAU);
            wrap(azimuth(*a.1))
                .partial_cmp(&wrap(azimuth(*b.1)))
                .unwrap()
        })
        .map(|(i, _)| i)
        .expect("non-empty loop");
    verts.rotate_left(start);
    Ok(verts)
}

/// Builds one calyx: mouth ring on the sphere, stitch to the hole
/// boundary, bent tube rings, hemispherical cap, apex. Returns the
/// centerline.
#[allow(clippy::too_many_arguments)]
fn build_calyx(
    vertices: &mut Vec<Point3<f64>>,
    labels: &mut Vec<u32>,
    faces: &mut Vec<[u32; 3]>,
    remap: &[Option<u32>],
    boundary: &[u32],
    direction: &Vector3<f64>,
    bend: &Vector3<f64>,
    calyx_id: u32,
    spec: &PhantomSpec,
    tube_radius: f64,
    mouth_angle: f64,
    tube_edge: f64,
) -> Result<CalyxCenterline, SimError> {
    let res = spec.mesh_resolution as usize;
    let pelvis_radius = spec.pelvis_radius_mm;
    let depth = spec.calyx_depth_mm;
    let (e1, e2) = perp_basis(direction);

    // Mouth ring: circle of neck radius on the sphere surface.
    let neck_radius = tube_radius * NECK_RADIUS_FRACTION;
    let mouth_center = pelvis_radius * mouth_angle.cos() * direction;
    let mouth_ring_start = vertices.len() as u32;
    for j in 0..res {
        let phi = std::f64::consts::TAU * j as f64 / res as f64;
        let radial = phi.cos() * e1 + phi.sin() * e2;
        vertices.push(Point3::from(mouth_center + neck_radius * radial));
        labels.push(0); // junction
    }

    // Stitch the jagged hole boundary to the smooth mouth ring with a
    // fraction-balanced zipper.
    let nb = boundary.len();
    let mut i = 0usize;
    let mut j = 0usize;
    let b_vert =
        |k: usize| remap[boundary[k % nb] as usize].expect("boundary vertices are kept");
    let r_vert = |k: usize| mouth_ring_start + (k % res) as u32;
    while i < nb || j < res {
        let advance_boundary = if j >= res {
            true
        } else if i >= nb {
            false
        } else {
            (i + 1) as f64 / nb as f64 <= (j + 1) as f64 / res as f64
        };
        if advance_boundary {
            faces.push([b_vert(i), b_vert(i + 1), r_vert(j)]);
            i += 1;
        } else {
            faces.push([r_vert(j + 1), r_vert(j), b_vert(i)]);
            j += 1;
        }
    }

    // Bent tube axis: circular arc of length `depth`, starting at the
    // mouth circle center heading along `direction`, curving toward
    // `bend`.
    let arc_radius = depth / BEND_ANGLE_RAD;
    let n_rings = ((depth / tube_edge).round() as usize).max(3);
    let position = |t: f64| -> Point3<f64> {
        let swept = BEND_ANGLE_RAD * t;
        Point3::from(
            mouth_center + arc_radius * (swept.sin() * direction + (1.0 - swept.cos()) * bend),
        )
    };
    let tangent = |t: f64| -> Vector3<f64> {
        let swept = BEND_ANGLE_RAD * t;
        swept.cos() * direction + swept.sin() * bend
    };

    // Parallel-transport the ring frame along the arc so strips do not twist.
    let mut frame_e1 = e1;
    let mut prev_ring_start = mouth_ring_start;
    let mut centerline = vec![Point3::origin(), Point3::from(mouth_center)];
    for k in 1..=n_rings {
        let t = k as f64 / n_rings as f64;
        let center = position(t);
        let tan = tangent(t);
        frame_e1 = (frame_e1 - tan * frame_e1.dot(&tan)).normalize();
        let frame_e2 = tan.cross(&frame_e1);

        let ring_radius = radius_profile(tube_radius, t);
        let ring_start = vertices.len() as u32;
        for jj in 0..res {
            let phi = std::f64::consts::TAU * jj as f64 / res as f64;
            let v = center + ring_radius * (phi.cos() * frame_e1 + phi.sin() * frame_e2);
            if v.coords.norm() <= pelvis_radius + 0.01 {
                return Err(SimError::GenerationFailed(format!(
                    "calyx {calyx_id}: tube ring {k} re-enters the pelvis"
                )));
            }
            vertices.push(v);
            labels.push(calyx_id);
        }
        push_ring_strip(faces, prev_ring_start, ring_start, res);
        prev_ring_start = ring_start;
        centerline.push(center);
    }

    // Hemispherical cap.
    let cap_center = position(1.0);
    let cap_forward = tangent(1.0);
    let cap_e1 = frame_e1;
    let cap_e2 = cap_forward.cross(&cap_e1);
    let cap_rings = (res / 4).max(2);
    for m in 1..cap_rings {
        let psi = std::f64::consts::FRAC_PI_2 * m as f64 / cap_rings as f64;
        let ring_start = vertices.len() as u32;
        for jj in 0..res {
            let phi = std::f64::consts::TAU * jj as f64 / res as f64;
            let radial = phi.cos() * cap_e1 + phi.sin() * cap_e2;
            vertices.push(Point3::from(
                cap_center.coords + tube_radius * (psi.cos() * radial + psi.sin() * cap_forward),
            ));
            labels.push(calyx_id);
        }
        push_ring_strip(faces, prev_ring_start, ring_start, res);
        prev_ring_start = ring_start;
    }
    let apex = vertices.len() as u32;
    vertices.push(Point3::from(cap_center.coords + tube_radius * cap_forward));
    labels.push(calyx_id);
    for jj in 0..res {
        faces.push([
            prev_ring_start + jj as u32,
            prev_ring_start + ((jj + 1) % res) as u32,
            apex,
        ]);
    }

    Ok(CalyxCenterline {
        calyx_id,
        polyline: centerline,
    })
}

fn push_ring_strip(faces: &mut Vec<[u32; 3]>, ring_a: u32, ring_b: u32, res: usize) {
    for j in 0..res {
        let j1 = ((j + 1) % res) as u32;
        let j0 = j as u32;
        faces.push([ring_a + j0, ring_a + j1, ring_b + j0]);
        faces.push([ring_a + j1, ring_b + j1, ring_b + j0]);
    }
}

/// Deterministic orthonormal basis perpendicular to `d`.
fn perp_basis(d: &Vector3<f64>) -> (Vector3<f64>, Vector3<f64>) {
    let helper = if d.x.abs() < 0.9 {
        Vector3::x()
    } else {
        Vector3::y()
    };
    let e1 = helper.cross(d).normalize();
    let e2 = d.cross(&e1);
    (e1, e2)
}

/// Minimum distance between two sampled polylines.
fn polyline_distance(a: &[Point3<f64>], b: &[Point3<f64>]) -> f64 {
    let mut min = f64::INFINITY;
    for p in a {
        for q in b {
            min = min.min((p - q).norm());
        }
    }
    min
}

/// Icosphere with the given subdivision level, scaled to `radius`.
fn icosphere(subdivisions: u32, radius: f64) -> (Vec<Point3<f64>>, Vec<[u32; 3]>) {
    let phi = (1.0 + 5f64.sqrt()) / 2.0;
    let mut vertices: Vec<Vector3<f64>> = vec![
        Vector3::new(-1.0, phi, 0.0),
        Vector3::new(1.0, phi, 0.0),
        Vector3::new(-1.0, -phi, 0.0),
        Vector3::new(1.0, -phi, 0.0),
        Vector3::new(0.0, -1.0, phi),
        Vector3::new(0.0, 1.0, phi),
        Vector3::new(0.0, -1.0, -phi),
        Vector3::new(0.0, 1.0, -phi),
        Vector3::new(phi, 0.0, -1.0),
        Vector3::new(phi, 0.0, 1.0),
        Vector3::new(-phi, 0.0, -1.0),
        Vector3::new(-phi, 0.0, 1.0),
    ]
    .into_iter()
    .map(|v| v.normalize())
    .collect();
    let mut faces: Vec<[u32; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];

    for _ in 0..subdivisions {
        let mut midpoints: HashMap<(u32, u32), u32> = HashMap::new();
        let mut new_faces = Vec::with_capacity(faces.len() * 4);
        for f in &faces {
            let mut mid = [0u32; 3];
            for k in 0..3 {
                let a = f[k];
                let b = f[(k + 1) % 3];
                let key = (a.min(b), a.max(b));
                mid[k] = *midpoints.entry(key).or_insert_with(|| {
                    let m = (vertices[a as usize] + vertices[b as usize]).normalize();
                    vertices.push(m);
                    (vertices.len() - 1) as u32
                });
            }
            new_faces.push([f[0], mid[0], mid[2]]);
            new_faces.push([f[1], mid[1], mid[0]]);
            new_faces.push([f[2], mid[2], mid[1]]);
            new_faces.push([mid[0], mid[1], mid[2]]);
        }
        faces = new_faces;
    }

    (
        vertices
            .into_iter()
            .map(|v| Point3::from(v * radius))
            .collect(),
        faces,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::formats;
    use std::collections::BTreeSet;

    #[test]
    fn default_phantom_is_valid_and_watertight() {
        let (phantom, tree) = generate_phantom(&PhantomSpec::default()).unwrap();
        assert!(phantom.mesh().is_watertight());
        let ids: BTreeSet<u32> = phantom.labels().iter().copied().collect();
        assert_eq!(ids, (0..=6).collect());
        assert_eq!(tree.calyces.len(), 6);
        // Every calyx clears the 50-vertex validation floor by construction.
        for s in phantom.calyx_summaries() {
            assert!(s.vertex_count >= 50);
        }
    }

    #[test]
    fn single_calyx_phantom() {
        let spec = PhantomSpec {
            n_calyces: 1,
            ..PhantomSpec::default()
        };
        let (phantom, _) = generate_phantom(&spec).unwrap();
        let ids: BTreeSet<u32> = phantom.labels().iter().copied().collect();
        assert_eq!(ids, BTreeSet::from([0, 1]));
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let spec = PhantomSpec::default();
        let dir = tempfile::tempdir().unwrap();
        let a_path = dir.path().join("a.ply");
        let b_path = dir.path().join("b.ply");
        let (a, _) = generate_phantom(&spec).unwrap();
        let (b, _) = generate_phantom(&spec).unwrap();
        crate::phantom::save_labeled_mesh(&a_path, &a).unwrap();
        crate::phantom::save_labeled_mesh(&b_path, &b).unwrap();
        assert_eq!(
            std::fs::read(&a_path).unwrap(),
            std::fs::read(&b_path).unwrap()
        );
        let _ = formats::read_ply(&a_path).unwrap();
    }

    #[test]
    fn different_seeds_differ() {
        // The seed jitters calyx placement, so tube tips move.
        let (_, tree_a) = generate_phantom(&PhantomSpec::default()).unwrap();
        let (_, tree_b) = generate_phantom(&PhantomSpec {
            seed: 9,
            ..PhantomSpec::default()
        })
        .unwrap();
        let tip = |t: &CenterlineTree| *t.calyces[0].polyline.last().unwrap();
        assert_ne!(tip(&tree_a), tip(&tree_b));
    }

    #[test]
    fn too_low_resolution_fails() {
        let spec = PhantomSpec {
            mesh_resolution: 4,
            ..PhantomSpec::default()
        };
        assert!(matches!(
            generate_phantom(&spec),
            Err(SimError::GenerationFailed(_))
        ));
    }

    #[test]
    fn too_many_calyces_fail_cleanly() {
        let spec = PhantomSpec {
            n_calyces: 14,
            ..PhantomSpec::default()
        };
        assert!(matches!(
            generate_phantom(&spec),
            Err(SimError::GenerationFailed(_))
        ));
    }

    #[test]
    fn centerlines_start_at_origin_and_reach_outward() {
        let (_, tree) = generate_phantom(&PhantomSpec::default()).unwrap();
        for calyx in &tree.calyces {
            assert_eq!(calyx.polyline[0], Point3::origin());
            let tip = calyx.polyline.last().unwrap();
            assert!(tip.coords.norm() > tree.pelvis_radius_mm);
        }
    }

    #[test]
    fn interior_points_are_inside() {
        let (phantom, tree) = generate_phantom(&PhantomSpec::default()).unwrap();
        let mesh = phantom.mesh();
        assert!(mesh.point_inside(&Point3::origin()).unwrap());
        for calyx in &tree.calyces {
            for p in &calyx.polyline {
                assert!(
                    mesh.point_inside(p).unwrap(),
                    "centerline point {p:?} of calyx {} is outside",
                    calyx.calyx_id
                );
            }
        }
        assert!(!mesh.point_inside(&Point3::new(100.0, 0.0, 0.0)).unwrap());
    }
}
