//! Axis-aligned bounding volume hierarchy over mesh faces.
//!
//! Built once at mesh load; traversal results are bit-identical to a naive
//! all-faces scan (same intersection routine, same lowest-face-index tie
//! rule), which the tests assert directly.

use nalgebra::{Point3, Vector3};

use super::ray::{ray_triangle, Ray};

const LEAF_SIZE: usize = 8;

#[derive(Debug, Clone, Copy)]
struct Aabb {
    min: Point3<f64>,
    max: Point3<f64>,
}

impl Aabb {
    fn empty() -> Self {
        Self {
            min: Point3::new(f64::INFINITY, f64::INFINITY, f64::INFINITY),
            max: Point3::new(f64::NEG_INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY),
        }
    }

    fn grow(&mut self, p: &Point3<f64>) {
        for i in 0..3 {
            self.min[i] = self.min[i].min(p[i]);
            self.max[i] = self.max[i].max(p[i]);
        }
    }

    fn merge(&mut self, other: &Aabb) {
        self.grow(&other.min);
        self.grow(&other.max);
    }

    /// Entry distance of the ray into the box, or `None` when it misses.
    /// The interval is clipped to `[0, inf)` so a ray starting inside the box
    /// reports entry 0.
    fn ray_entry(&self, origin: &Point3<f64>, inv_dir: &Vector3<f64>) -> Option<f64> {
        let mut t_near: f64 = 0.0;
        let mut t_far = f64::INFINITY;
        for i in 0..3 {
            let t1 = (self.min[i] - origin[i]) * inv_dir[i];
            let t2 = (self.max[i] - origin[i]) * inv_dir[i];
            let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
            // NaN from 0 * inf means the ray is parallel and inside the slab;
            // skip the axis in that case.
            if lo.is_nan() || hi.is_nan() {
                continue;
            }
            t_near = t_near.max(lo);
            t_far = t_far.min(hi);
            if t_near > t_far {
                return None;
            }
        }
        Some(t_near)
    }

    fn distance_squared(&self, p: &Point3<f64>) -> f64 {
        let mut d2 = 0.0;
        for i in 0..3 {
            let v = if p[i] < self.min[i] {
                self.min[i] - p[i]
            } else if p[i] > self.max[i] {
                p[i] - self.max[i]
            } else {
                0.0
            };
            d2 += v * v;
        }
        d2
    }
}

#[derive(Debug)]
enum Node {
    Leaf {
        aabb: Aabb,
        start: usize,
        count: usize,
    },
    Inner {
        aabb: Aabb,
        left: usize,
        right: usize,
    },
}

impl Node {
    fn aabb(&self) -> &Aabb {
        match self {
            Node::Leaf { aabb, .. } | Node::Inner { aabb, .. } => aabb,
        }
    }
}

#[derive(Debug)]
pub(crate) struct Bvh {
    nodes: Vec<Node>,
    /// Face indices, permuted so each leaf owns a contiguous range.
    order: Vec<u32>,
}

impl Bvh {
    pub fn build(vertices: &[Point3<f64>], faces: &[[u32; 3]]) -> Self {
        let mut order: Vec<u32> = (0..faces.len() as u32).collect();
        let centroids: Vec<Point3<f64>> = faces
            .iter()
            .map(|f| {
                let (a, b, c) = triangle(vertices, f);
                Point3::from((a.coords + b.coords + c.coords) / 3.0)
            })
            .collect();
        let mut nodes = Vec::new();
        if !faces.is_empty() {
            build_node(vertices, faces, &centroids, &mut order, 0, faces.len(), &mut nodes);
        }
        Self { nodes, order }
    }

    /// Nearest intersection along the ray. Ties in distance are broken by the
    /// lowest face index, matching the naive scan exactly.
    pub fn ray_nearest(
        &self,
        vertices: &[Point3<f64>],
        faces: &[[u32; 3]],
        ray: &Ray,
    ) -> Option<(f64, u32)> {
        if self.nodes.is_empty() {
            return None;
        }
        let inv_dir = Vector3::new(
            1.0 / ray.direction.x,
            1.0 / ray.direction.y,
            1.0 / ray.direction.z,
        );
        let mut best: Option<(f64, u32)> = None;
        let mut stack = vec![0usize];
        while let Some(idx) = stack.pop() {
            let node = &self.nodes[idx];
            match node.aabb().ray_entry(&ray.origin, &inv_dir) {
                // Prune strictly: an equal-distance face elsewhere may win the
                // index tie, so boxes at exactly the best distance stay live.
                Some(entry) => {
                    if let Some((bt, _)) = best {
                        if entry > bt {
                            continue;
                        }
                    }
                }
                None => continue,
            }
            match node {
                Node::Leaf { start, count, .. } => {
                    for &face_idx in &self.order[*start..*start + *count] {
                        let (a, b, c) = triangle(vertices, &faces[face_idx as usize]);
                        if let Some((t, _, _)) = ray_triangle(ray, a, b, c) {
                            let better = match best {
                                None => true,
                                Some((bt, bf)) => t < bt || (t == bt && face_idx < bf),
                            };
                            if better {
                                best = Some((t, face_idx));
                            }
                        }
                    }
                }
                Node::Inner { left, right, .. } => {
                    stack.push(*right);
                    stack.push(*left);
                }
            }
        }
        best
    }

    /// All intersections along the ray, unordered, as `(t, u, v, face)`.
    pub fn ray_all(
        &self,
        vertices: &[Point3<f64>],
        faces: &[[u32; 3]],
        ray: &Ray,
    ) -> Vec<(f64, f64, f64, u32)> {
        let mut hits = Vec::new();
        if self.nodes.is_empty() {
            return hits;
        }
        let inv_dir = Vector3::new(
            1.0 / ray.direction.x,
            1.0 / ray.direction.y,
            1.0 / ray.direction.z,
        );
        let mut stack = vec![0usize];
        while let Some(idx) = stack.pop() {
            let node = &self.nodes[idx];
            if node.aabb().ray_entry(&ray.origin, &inv_dir).is_none() {
                continue;
            }
            match node {
                Node::Leaf { start, count, .. } => {
                    for &face_idx in &self.order[*start..*start + *count] {
                        let (a, b, c) = triangle(vertices, &faces[face_idx as usize]);
                        if let Some((t, u, v)) = ray_triangle(ray, a, b, c) {
                            hits.push((t, u, v, face_idx));
                        }
                    }
                }
                Node::Inner { left, right, .. } => {
                    stack.push(*right);
                    stack.push(*left);
                }
            }
        }
        hits
    }

    /// Closest point on the mesh surface: `(distance, face, point)`.
    pub fn nearest_surface(
        &self,
        vertices: &[Point3<f64>],
        faces: &[[u32; 3]],
        p: &Point3<f64>,
    ) -> Option<(f64, u32, Point3<f64>)> {
        if self.nodes.is_empty() {
            return None;
        }
        let mut best: Option<(f64, u32, Point3<f64>)> = None;
        // (lower bound, node) stack; explore nearer child first.
        let mut stack = vec![(self.nodes[0].aabb().distance_squared(p), 0usize)];
        while let Some((bound2, idx)) = stack.pop() {
            if let Some((bd, _, _)) = best {
                if bound2 > bd * bd {
                    continue;
                }
            }
            match &self.nodes[idx] {
                Node::Leaf { start, count, .. } => {
                    for &face_idx in &self.order[*start..*start + *count] {
                        let (a, b, c) = triangle(vertices, &faces[face_idx as usize]);
                        let q = closest_point_on_triangle(p, a, b, c);
                        let d = (p - q).norm();
                        let better = match best {
                            None => true,
                            Some((bd, bf, _)) => d < bd || (d == bd && face_idx < bf),
                        };
                        if better {
                            best = Some((d, face_idx, q));
                        }
                    }
                }
                Node::Inner { left, right, .. } => {
                    let dl = self.nodes[*left].aabb().distance_squared(p);
                    let dr = self.nodes[*right].aabb().distance_squared(p);
                    // Push the farther child first so the nearer one pops next.
                    if dl <= dr {
                        stack.push((dr, *right));
                        stack.push((dl, *left));
                    } else {
                        stack.push((dl, *left));
                        stack.push((dr, *right));
                    }
                }
            }
        }
        best
    }
}

fn triangle<'a>(
    vertices: &'a [Point3<f64>],
    face: &[u32; 3],
) -> (&'a Point3<f64>, &'a Point3<f64>, &'a Point3<f64>) {
    (
        &vertices[face[0] as usize],
        &vertices[face[1] as usize],
        &vertices[face[2] as usize],
    )
}

fn face_aabb(vertices: &[Point3<f64>], face: &[u32; 3]) -> Aabb {
    let mut aabb = Aabb::empty();
    let (a, b, c) = triangle(vertices, face);
    aabb.grow(a);
    aabb.grow(b);
    aabb.grow(c);
    aabb
}

fn build_node(
    vertices: &[Point3<f64>],
    faces: &[[u32; 3]],
    centroids: &[Point3<f64>],
    order: &mut [u32],
    start: usize,
    count: usize,
    nodes: &mut Vec<Node>,
) -> usize {
    let mut aabb = Aabb::empty();
    for &f in &order[start..start + count] {
        aabb.merge(&face_aabb(vertices, &faces[f as usize]));
    }

    let node_idx = nodes.len();
    if count <= LEAF_SIZE {
        nodes.push(Node::Leaf { aabb, start, count });
        return node_idx;
    }

    // Split along the largest extent of the centroid bounds, at the median.
    let mut cbounds = Aabb::empty();
    for &f in &order[start..start + count] {
        cbounds.grow(&centroids[f as usize]);
    }
    let extent = cbounds.max - cbounds.min;
    let axis = if extent.x >= extent.y && extent.x >= extent.z {
        0
    } else if extent.y >= extent.z {
        1
    } else {
        2
    };

    let slice = &mut order[start..start + count];
    slice.sort_unstable_by(|&a, &b| {
        let ca = centroids[a as usize][axis];
        let cb = centroids[b as usize][axis];
        ca.partial_cmp(&cb).unwrap().then(a.cmp(&b))
    });
    let mid = count / 2;

    nodes.push(Node::Inner {
        aabb,
        left: 0,
        right: 0,
    });
    let left = build_node(vertices, faces, centroids, order, start, mid, nodes);
    let right = build_node(vertices, faces, centroids, order, start + mid, count - mid, nodes);
    if let Node::Inner {
        left: l, right: r, ..
    } = &mut nodes[node_idx]
    {
        *l = left;
        *r = right;
    }
    node_idx
}

/// Closest point on triangle `abc` to `p` (Ericson, Real-Time Collision
/// Detection §5.1.5).
pub(crate) fn closest_point_on_triangle(
    p: &Point3<f64>,
    a: &Point3<f64>,
    b: &Point3<f64>,
    c: &Point3<f64>,
) -> Point3<f64> {
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;

    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return *a;
    }

    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return *b;
    }

    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return a + v * ab;
    }

    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return *c;
    }

    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return a + w * ac;
    }

    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return b + w * (c - b);
    }

    let denom = 1.0 / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    a + ab * v + ac * w
}
