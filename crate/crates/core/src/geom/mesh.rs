use std::collections::HashMap;

use nalgebra::{Point3, Vector3};
use thiserror::Error;

use super::bvh::{closest_point_on_triangle, Bvh};
use super::ray::{ray_triangle, Ray};
use super::EPSILON_SURFACE;

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("face {face} references vertex {vertex} but mesh has {vertex_count} vertices")]
    FaceIndexOutOfRange {
        face: usize,
        vertex: u32,
        vertex_count: usize,
    },
    #[error("face {face} has zero area")]
    DegenerateFace { face: usize },
    #[error("operation requires a watertight mesh")]
    WatertightnessRequired,
}

/// Nearest ray/mesh intersection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RayHit {
    pub distance: f64,
    pub face: u32,
}

/// Probe directions for the point-in-mesh parity test. Deliberately
/// irrational-ish so axis-aligned geometry is never grazed edge-on; the
/// first is used unless a crossing lands on an edge, then the next is tried.
const PROBE_DIRECTIONS: [[f64; 3]; 3] = [
    [0.8049844718999243, 0.4975197504394355, 0.3233343117549676],
    [-0.3050851043361822, 0.7365265338582337, 0.6037033839033771],
    [0.5163977794943222, -0.2581988897471611, 0.816_496_580_927_726],
];

/// A triangle mesh in millimeters, validated and immutable.
///
/// Validation rejects out-of-range face indices and zero-area faces;
/// watertightness (every edge shared by exactly two faces) is computed once
/// at construction. A BVH over the faces is built for ray casting and
/// closest-point queries.
#[derive(Debug)]
pub struct TriMesh {
    vertices: Vec<Point3<f64>>,
    faces: Vec<[u32; 3]>,
    watertight: bool,
    bvh: Bvh,
}

impl TriMesh {
    pub fn new(vertices: Vec<Point3<f64>>, faces: Vec<[u32; 3]>) -> Result<Self, MeshError> {
        let vertex_count = vertices.len();
        for (i, f) in faces.iter().enumerate() {
            for &v in f {
                if v as usize >= vertex_count {
                    return Err(MeshError::FaceIndexOutOfRange {
                        face: i,
                        vertex: v,
                        vertex_count,
                    });
                }
            }
            let a = &vertices[f[0] as usize];
            let b = &vertices[f[1] as usize];
            let c = &vertices[f[2] as usize];
            let cross = (b - a).cross(&(c - a));
            if cross.norm_squared() <= 1e-24 {
                return Err(MeshError::DegenerateFace { face: i });
            }
        }
        let watertight = compute_watertight(&faces);
        let bvh = Bvh::build(&vertices, &faces);
        Ok(Self {
            vertices,
            faces,
            watertight,
            bvh,
        })
    }

    pub fn vertices(&self) -> &[Point3<f64>] {
        &self.vertices
    }

    pub fn faces(&self) -> &[[u32; 3]] {
        &self.faces
    }

    pub fn is_watertight(&self) -> bool {
        self.watertight
    }

    pub fn triangle(&self, face: u32) -> (&Point3<f64>, &Point3<f64>, &Point3<f64>) {
        let f = &self.faces[face as usize];
        (
            &self.vertices[f[0] as usize],
            &self.vertices[f[1] as usize],
            &self.vertices[f[2] as usize],
        )
    }

    /// Axis-aligned bounds of the vertex set, `(min, max)`.
    pub fn bounds(&self) -> (Point3<f64>, Point3<f64>) {
        let mut min = Point3::new(f64::INFINITY, f64::INFINITY, f64::INFINITY);
        let mut max = Point3::new(f64::NEG_INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
        for v in &self.vertices {
            for i in 0..3 {
                min[i] = min[i].min(v[i]);
                max[i] = max[i].max(v[i]);
            }
        }
        (min, max)
    }

    /// Nearest intersection with distance `> EPSILON_ORIGIN`, ties between
    /// coincident faces broken by the lowest face index. BVH-accelerated;
    /// returns exactly what [`ray_cast_naive`] returns.
    pub fn ray_cast(&self, ray: &Ray) -> Option<RayHit> {
        self.bvh
            .ray_nearest(&self.vertices, &self.faces, ray)
            .map(|(distance, face)| RayHit { distance, face })
    }

    /// Closest point on the surface: `(distance, face, point)`.
    /// `None` only for an empty mesh.
    pub fn closest_point(&self, p: &Point3<f64>) -> Option<(f64, u32, Point3<f64>)> {
        self.bvh.nearest_surface(&self.vertices, &self.faces, p)
    }

    /// Exact point-to-surface distance (infinite for an empty mesh).
    pub fn distance_to_surface(&self, p: &Point3<f64>) -> f64 {
        self.closest_point(p).map_or(f64::INFINITY, |(d, _, _)| d)
    }

    /// Whether `p` is inside the mesh. Points within `EPSILON_SURFACE` of the
    /// surface count as inside; elsewhere the crossing parity of a fixed
    /// probe ray decides. Requires a watertight mesh.
    pub fn point_inside(&self, p: &Point3<f64>) -> Result<bool, MeshError> {
        if !self.watertight {
            return Err(MeshError::WatertightnessRequired);
        }
        if self.distance_to_surface(p) <= EPSILON_SURFACE {
            return Ok(true);
        }
        for dir in PROBE_DIRECTIONS {
            let ray = Ray::new(*p, Vector3::new(dir[0], dir[1], dir[2]))
                .expect("probe directions are non-zero");
            let hits = self.bvh.ray_all(&self.vertices, &self.faces, &ray);
            if hits_are_clean(&hits) {
                return Ok(hits.len() % 2 == 1);
            }
        }
        // Every probe grazed an edge; dedup crossings that are the same
        // edge counted by both incident faces and use the last probe.
        let ray = Ray::new(
            *p,
            Vector3::new(
                PROBE_DIRECTIONS[2][0],
                PROBE_DIRECTIONS[2][1],
                PROBE_DIRECTIONS[2][2],
            ),
        )
        .expect("probe directions are non-zero");
        let mut ts: Vec<f64> = self
            .bvh
            .ray_all(&self.vertices, &self.faces, &ray)
            .iter()
            .map(|h| h.0)
            .collect();
        ts.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap());
        ts.dedup_by(|a, b| (*a - *b).abs() < 1e-9);
        Ok(ts.len() % 2 == 1)
    }
}

/// Any crossing that grazes a triangle edge or vertex (barycentric
/// coordinate at a boundary), or that coincides in distance with another
/// crossing, makes the parity count unreliable.
fn hits_are_clean(hits: &[(f64, f64, f64, u32)]) -> bool {
    const EDGE_EPS: f64 = 1e-9;
    for (i, &(t, u, v, _)) in hits.iter().enumerate() {
        let w = 1.0 - u - v;
        if u < EDGE_EPS || v < EDGE_EPS || w < EDGE_EPS {
            return false;
        }
        for &(t2, _, _, _) in &hits[i + 1..] {
            if (t - t2).abs() < EDGE_EPS {
                return false;
            }
        }
    }
    true
}

/// Naive all-faces nearest-hit scan; the oracle the BVH path is checked
/// against.
pub fn ray_cast_naive(mesh: &TriMesh, ray: &Ray) -> Option<RayHit> {
    let mut best: Option<RayHit> = None;
    for (i, f) in mesh.faces().iter().enumerate() {
        let a = &mesh.vertices()[f[0] as usize];
        let b = &mesh.vertices()[f[1] as usize];
        let c = &mesh.vertices()[f[2] as usize];
        if let Some((t, _, _)) = ray_triangle(ray, a, b, c) {
            let face = i as u32;
            let better = match best {
                None => true,
                Some(h) => t < h.distance || (t == h.distance && face < h.face),
            };
            if better {
                best = Some(RayHit { distance: t, face });
            }
        }
    }
    best
}

/// Exact distance from a point to the mesh surface by scanning every face.
pub fn distance_to_surface_naive(mesh: &TriMesh, p: &Point3<f64>) -> f64 {
    let mut best = f64::INFINITY;
    for f in mesh.faces() {
        let a = &mesh.vertices()[f[0] as usize];
        let b = &mesh.vertices()[f[1] as usize];
        let c = &mesh.vertices()[f[2] as usize];
        let q = closest_point_on_triangle(p, a, b, c);
        best = best.min((p - q).norm());
    }
    best
}

fn compute_watertight(faces: &[[u32; 3]]) -> bool {
    if faces.is_empty() {
        return false;
    }
    let mut edge_counts: HashMap<(u32, u32), u32> = HashMap::new();
    for f in faces {
        for k in 0..3 {
            let a = f[k];
            let b = f[(k + 1) % 3];
            let key = (a.min(b), a.max(b));
            *edge_counts.entry(key).or_insert(0) += 1;
        }
    }
    edge_counts.values().all(|&c| c == 2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Two triangles forming the square [-1,1]^2 at the given z.
    fn square_at(z: f64, base: u32) -> (Vec<Point3<f64>>, Vec<[u32; 3]>) {
        let vs = vec![
            Point3::new(-1.0, -1.0, z),
            Point3::new(1.0, -1.0, z),
            Point3::new(1.0, 1.0, z),
            Point3::new(-1.0, 1.0, z),
        ];
        let fs = vec![[base, base + 1, base + 2], [base, base + 2, base + 3]];
        (vs, fs)
    }

    fn unit_cube() -> TriMesh {
        // Centered at the origin, side 1.
        let h = 0.5;
        let vertices = vec![
            Point3::new(-h, -h, -h),
            Point3::new(h, -h, -h),
            Point3::new(h, h, -h),
            Point3::new(-h, h, -h),
            Point3::new(-h, -h, h),
            Point3::new(h, -h, h),
            Point3::new(h, h, h),
            Point3::new(-h, h, h),
        ];
        let faces = vec![
            [0, 2, 1],
            [0, 3, 2], // z = -h
            [4, 5, 6],
            [4, 6, 7], // z = +h
            [0, 1, 5],
            [0, 5, 4], // y = -h
            [2, 3, 7],
            [2, 7, 6], // y = +h
            [1, 2, 6],
            [1, 6, 5], // x = +h
            [3, 0, 4],
            [3, 4, 7], // x = -h
        ];
        TriMesh::new(vertices, faces).unwrap()
    }

    #[test]
    fn ray_cast_square_hit_and_miss() {
        let (vs, fs) = square_at(5.0, 0);
        let mesh = TriMesh::new(vs, fs).unwrap();
        let forward = Ray::new(Point3::origin(), Vector3::z()).unwrap();
        let hit = mesh.ray_cast(&forward).unwrap();
        assert!((hit.distance - 5.0).abs() < 1e-12);
        let backward = Ray::new(Point3::origin(), -Vector3::z()).unwrap();
        assert!(mesh.ray_cast(&backward).is_none());
    }

    #[test]
    fn ray_cast_returns_nearest_of_two_squares() {
        let (mut vs, mut fs) = square_at(3.0, 0);
        let (vs2, fs2) = square_at(7.0, 4);
        vs.extend(vs2);
        fs.extend(fs2);
        let mesh = TriMesh::new(vs, fs).unwrap();
        let ray = Ray::new(Point3::new(0.2, 0.1, 0.0), Vector3::z()).unwrap();
        let hit = mesh.ray_cast(&ray).unwrap();
        assert!((hit.distance - 3.0).abs() < 1e-12);
    }

    #[test]
    fn coincident_faces_tie_break_on_lowest_index() {
        let (mut vs, mut fs) = square_at(2.0, 0);
        let (vs2, fs2) = square_at(2.0, 4);
        vs.extend(vs2);
        fs.extend(fs2);
        let mesh = TriMesh::new(vs, fs).unwrap();
        let ray = Ray::new(Point3::new(0.3, -0.2, 0.0), Vector3::z()).unwrap();
        let bvh_hit = mesh.ray_cast(&ray).unwrap();
        let naive_hit = ray_cast_naive(&mesh, &ray).unwrap();
        assert_eq!(bvh_hit, naive_hit);
        assert!(bvh_hit.face < 2);
    }

    #[test]
    fn validation_rejects_bad_faces() {
        let vs = vec![
            Point3::new(0.0, 0.0, 0.0),
            Point3::new(1.0, 0.0, 0.0),
            Point3::new(0.0, 1.0, 0.0),
        ];
        assert!(matches!(
            TriMesh::new(vs.clone(), vec![[0, 1, 3]]),
            Err(MeshError::FaceIndexOutOfRange { .. })
        ));
        assert!(matches!(
            TriMesh::new(vs, vec![[0, 1, 1]]),
            Err(MeshError::DegenerateFace { .. })
        ));
    }

    #[test]
    fn cube_is_watertight_and_square_is_not() {
        assert!(unit_cube().is_watertight());
        let (vs, fs) = square_at(0.0, 0);
        assert!(!TriMesh::new(vs, fs).unwrap().is_watertight());
    }

    #[test]
    fn point_inside_cube_cases() {
        let cube = unit_cube();
        assert!(cube.point_inside(&Point3::origin()).unwrap());
        assert!(!cube.point_inside(&Point3::new(2.0, 0.0, 0.0)).unwrap());
        // Face center counts as inside (boundary rule).
        assert!(cube.point_inside(&Point3::new(0.5, 0.0, 0.0)).unwrap());
        // Just outside the boundary epsilon: outside.
        assert!(!cube.point_inside(&Point3::new(0.5 + 2e-3, 0.0, 0.0)).unwrap());
    }

    #[test]
    fn point_inside_requires_watertight() {
        let (vs, fs) = square_at(0.0, 0);
        let open = TriMesh::new(vs, fs).unwrap();
        assert!(matches!(
            open.point_inside(&Point3::origin()),
            Err(MeshError::WatertightnessRequired)
        ));
    }

    #[test]
    fn point_inside_invariant_to_probe_direction() {
        // The implementation already falls through probes only on grazing;
        // here we check all three probes agree by computing the parity
        // manually for points away from the surface.
        let cube = unit_cube();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let p = Point3::new(
                rng.random_range(-1.2..1.2),
                rng.random_range(-1.2..1.2),
                rng.random_range(-1.2..1.2),
            );
            if cube.distance_to_surface(&p) <= 2.0 * EPSILON_SURFACE {
                continue;
            }
            let expected = p.x.abs() < 0.5 && p.y.abs() < 0.5 && p.z.abs() < 0.5;
            for dir in PROBE_DIRECTIONS {
                let ray = Ray::new(p, Vector3::new(dir[0], dir[1], dir[2])).unwrap();
                let hits = cube.bvh.ray_all(cube.vertices(), cube.faces(), &ray);
                assert!(hits_are_clean(&hits), "probe grazed at {p:?}");
                assert_eq!(hits.len() % 2 == 1, expected, "probe {dir:?} at {p:?}");
            }
            assert_eq!(cube.point_inside(&p).unwrap(), expected);
        }
    }

    #[test]
    fn bvh_matches_naive_scan_on_random_soup() {
        // Random triangle soup plus random rays; BVH and naive scan must
        // agree exactly, including the face chosen on ties.
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut vs = Vec::new();
        let mut fs = Vec::new();
        for i in 0..300u32 {
            let center = Point3::new(
                rng.random_range(-10.0..10.0),
                rng.random_range(-10.0..10.0),
                rng.random_range(-10.0..10.0),
            );
            for _ in 0..3 {
                vs.push(Point3::new(
                    center.x + rng.random_range(-2.0..2.0),
                    center.y + rng.random_range(-2.0..2.0),
                    center.z + rng.random_range(-2.0..2.0),
                ));
            }
            fs.push([3 * i, 3 * i + 1, 3 * i + 2]);
        }
        let mesh = TriMesh::new(vs, fs).unwrap();
        for _ in 0..1000 {
            let origin = Point3::new(
                rng.random_range(-12.0..12.0),
                rng.random_range(-12.0..12.0),
                rng.random_range(-12.0..12.0),
            );
            let dir = Vector3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            );
            if dir.norm() < 1e-6 {
                continue;
            }
            let ray = Ray::new(origin, dir).unwrap();
            assert_eq!(mesh.ray_cast(&ray), ray_cast_naive(&mesh, &ray));
        }
    }

    #[test]
    fn closest_point_matches_naive_distance() {
        let cube = unit_cube();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..500 {
            let p = Point3::new(
                rng.random_range(-2.0..2.0),
                rng.random_range(-2.0..2.0),
                rng.random_range(-2.0..2.0),
            );
            let fast = cube.distance_to_surface(&p);
            let slow = distance_to_surface_naive(&cube, &p);
            assert!((fast - slow).abs() < 1e-12, "{fast} vs {slow} at {p:?}");
        }
    }
}
