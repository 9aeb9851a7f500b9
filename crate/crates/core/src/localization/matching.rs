use super::Keypoint;

/// Mutual nearest-neighbor descriptor matching with a Lowe ratio test.
///
/// A pair `(q, r)` survives when `r` is `q`'s nearest reference descriptor,
/// `q` is `r`'s nearest query descriptor, and the nearest distance is below
/// `ratio` times the second-nearest (a single candidate passes trivially).
/// Each index appears at most once. Pairs are returned in ascending query
/// index order.
pub fn match_descriptors(
    q_kps: &[Keypoint],
    r_kps: &[Keypoint],
    ratio: f64,
) -> Vec<(usize, usize)> {
    if q_kps.is_empty() || r_kps.is_empty() {
        return Vec::new();
    }

    // Nearest and second-nearest reference for each query.
    let mut best_r: Vec<(usize, f64, f64)> = Vec::with_capacity(q_kps.len());
    for q in q_kps {
        let mut first = (usize::MAX, f64::INFINITY);
        let mut second = f64::INFINITY;
        for (j, r) in r_kps.iter().enumerate() {
            let d = distance_sq(&q.descriptor, &r.descriptor);
            if d < first.1 {
                second = first.1;
                first = (j, d);
            } else if d < second {
                second = d;
            }
        }
        best_r.push((first.0, first.1, second));
    }

    // Nearest query for each reference.
    let mut best_q: Vec<usize> = vec![usize::MAX; r_kps.len()];
    let mut best_q_dist: Vec<f64> = vec![f64::INFINITY; r_kps.len()];
    for (i, q) in q_kps.iter().enumerate() {
        for (j, r) in r_kps.iter().enumerate() {
            let d = distance_sq(&q.descriptor, &r.descriptor);
            if d < best_q_dist[j] {
                best_q_dist[j] = d;
                best_q[j] = i;
            }
        }
    }

    let ratio_sq = ratio * ratio;
    let mut matches = Vec::new();
    for (i, &(j, d1, d2)) in best_r.iter().enumerate() {
        if j == usize::MAX || best_q[j] != i {
            continue;
        }
        // Distances are squared, so the ratio test compares d1 < r^2 * d2.
        if d2.is_finite() && d1 >= ratio_sq * d2 {
            continue;
        }
        matches.push((i, j));
    }
    matches
}

fn distance_sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}
