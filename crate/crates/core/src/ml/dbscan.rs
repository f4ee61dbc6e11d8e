use super::{sq_dist, Matrix, MlError};

pub const NOISE: i64 = -1;

/// Density-based clustering by brute-force neighbourhood search.
///
/// Points are visited in input order; a core point not yet labelled starts a
/// new cluster numbered from 0. A border point reachable from several
/// clusters keeps the first one that reached it. `min_pts` counts the point
/// itself.
pub fn dbscan(x: &Matrix, eps: f64, min_pts: usize) -> Result<Vec<i64>, MlError> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(MlError::InvalidArg(format!("eps must be > 0, got {eps}")));
    }
    if min_pts == 0 {
        return Err(MlError::InvalidArg("min_pts must be >= 1".into()));
    }
    let n = x.nrows();
    let eps2 = eps * eps;
    let neighbours: Vec<Vec<usize>> = (0..n)
        .map(|i| {
            (0..n)
                .filter(|&j| sq_dist(x.row(i), x.row(j)) <= eps2)
                .collect()
        })
        .collect();
    let core: Vec<bool> = neighbours.iter().map(|nb| nb.len() >= min_pts).collect();

    let mut labels = vec![NOISE; n];
    let mut next = 0i64;
    let mut stack = Vec::new();
    for start in 0..n {
        if labels[start] != NOISE || !core[start] {
            continue;
        }
        labels[start] = next;
        stack.push(start);
        while let Some(p) = stack.pop() {
            for &q in &neighbours[p] {
                if labels[q] == NOISE {
                    labels[q] = next;
                    if core[q] {
                        stack.push(q);
                    }
                }
            }
        }
        next += 1;
    }
    Ok(labels)
}
