//! Point clouds and a small exact nearest-neighbor index.

use nalgebra::Point3;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CloudError {
    #[error("point cloud is empty")]
    Empty,
}

/// A bag of 3D points, millimeters.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Point3<f64>>,
}

impl PointCloud {
    pub fn new(points: Vec<Point3<f64>>) -> Self {
        Self { points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn require_non_empty(&self) -> Result<(), CloudError> {
        if self.is_empty() {
            Err(CloudError::Empty)
        } else {
            Ok(())
        }
    }
}

const LEAF_SIZE: usize = 16;

#[derive(Debug)]
enum Node {
    Leaf {
        start: usize,
        count: usize,
    },
    Split {
        axis: usize,
        /// Largest coordinate in the left subtree / smallest in the right;
        /// used for pruning.
        left_max: f64,
        right_min: f64,
        left: usize,
        right: usize,
    },
}

/// Exact nearest-neighbor index over a fixed set of points.
/// Deterministic construction (median split, index tie-break).
#[derive(Debug)]
pub struct KdTree3 {
    points: Vec<Point3<f64>>,
    order: Vec<u32>,
    nodes: Vec<Node>,
}

impl KdTree3 {
    pub fn build(points: &[Point3<f64>]) -> Self {
        let points = points.to_vec();
        let mut order: Vec<u32> = (0..points.len() as u32).collect();
        let mut nodes = Vec::new();
        if !points.is_empty() {
            build_node(&points, &mut order, 0, points.len(), &mut nodes);
        }
        Self {
            points,
            order,
            nodes,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Index and distance of the nearest point, ties broken by lowest index.
    pub fn nearest_one(&self, p: &Point3<f64>) -> Option<(u32, f64)> {
        if self.nodes.is_empty() {
            return None;
        }
        let mut best: Option<(u32, f64)> = None;
        self.search(0, p, &mut best);
        best
    }

    fn search(&self, node_idx: usize, p: &Point3<f64>, best: &mut Option<(u32, f64)>) {
        match &self.nodes[node_idx] {
            Node::Leaf { start, count } => {
                for &idx in &self.order[*start..*start + *count] {
                    let d = (self.points[idx as usize] - p).norm();
                    let better = match *best {
                        None => true,
                        Some((bi, bd)) => d < bd || (d == bd && idx < bi),
                    };
                    if better {
                        *best = Some((idx, d));
                    }
                }
            }
            Node::Split {
                axis,
                left_max,
                right_min,
                left,
                right,
            } => {
                let coord = p[*axis];
                let (first, second, second_gap) = if coord - left_max <= right_min - coord {
                    (*left, *right, right_min - coord)
                } else {
                    (*right, *left, coord - left_max)
                };
                self.search(first, p, best);
                let bd = best.map_or(f64::INFINITY, |(_, d)| d);
                if second_gap <= bd {
                    self.search(second, p, best);
                }
            }
        }
    }
}

fn build_node(
    points: &[Point3<f64>],
    order: &mut [u32],
    start: usize,
    count: usize,
    nodes: &mut Vec<Node>,
) -> usize {
    let node_idx = nodes.len();
    if count <= LEAF_SIZE {
        nodes.push(Node::Leaf { start, count });
        return node_idx;
    }

    let mut min = [f64::INFINITY; 3];
    let mut max = [f64::NEG_INFINITY; 3];
    for &i in &order[start..start + count] {
        let p = &points[i as usize];
        for a in 0..3 {
            min[a] = min[a].min(p[a]);
            max[a] = max[a].max(p[a]);
        }
    }
    let extent = [max[0] - min[0], max[1] - min[1], max[2] - min[2]];
    let axis = if extent[0] >= extent[1] && extent[0] >= extent[2] {
        0
    } else if extent[1] >= extent[2] {
        1
    } else {
        2
    };

    let slice = &mut order[start..start + count];
    slice.sort_unstable_by(|&a, &b| {
        points[a as usize][axis]
            .partial_cmp(&points[b as usize][axis])
            .unwrap()
            .then(a.cmp(&b))
    });
    let mid = count / 2;
    let left_max = points[slice[mid - 1] as usize][axis];
    let right_min = points[slice[mid] as usize][axis];

    nodes.push(Node::Split {
        axis,
        left_max,
        right_min,
        left: 0,
        right: 0,
    });
    let left = build_node(points, order, start, mid, nodes);
    let right = build_node(points, order, start + mid, count - mid, nodes);
    if let Node::Split {
        left: l, right: r, ..
    } = &mut nodes[node_idx]
    {
        *l = left;
        *r = right;
    }
    node_idx
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn nearest_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let points: Vec<Point3<f64>> = (0..2000)
            .map(|_| {
                Point3::new(
                    rng.random_range(-50.0..50.0),
                    rng.random_range(-50.0..50.0),
                    rng.random_range(-50.0..50.0),
                )
            })
            .collect();
        let tree = KdTree3::build(&points);
        for _ in 0..500 {
            let q = Point3::new(
                rng.random_range(-60.0..60.0),
                rng.random_range(-60.0..60.0),
                rng.random_range(-60.0..60.0),
            );
            let (idx, dist) = tree.nearest_one(&q).unwrap();
            let brute = points
                .iter()
                .enumerate()
                .map(|(i, p)| (i as u32, (p - q).norm()))
                .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(a.0.cmp(&b.0)))
                .unwrap();
            assert_eq!((idx, dist), brute);
        }
    }

    #[test]
    fn empty_tree_returns_none() {
        let tree = KdTree3::build(&[]);
        assert!(tree.nearest_one(&Point3::origin()).is_none());
    }
}
