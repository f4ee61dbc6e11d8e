use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{sq_dist, Matrix, MlError};

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    pub labels: Vec<usize>,
    pub centroids: Matrix,
    pub inertia: f64,
    /// Inertia after every assignment step.
    pub history: Vec<f64>,
    pub iterations: usize,
}

fn nearest(row: &[f64], centroids: &Matrix) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for c in 0..centroids.nrows() {
        let d = sq_dist(row, centroids.row(c));
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn plus_plus(x: &Matrix, k: usize, rng: &mut ChaCha8Rng) -> Matrix {
    let n = x.nrows();
    let mut centroids = Matrix::zeros(k, x.ncols());
    let first = rng.random_range(0..n);
    centroids.row_mut(0).copy_from_slice(x.row(first));
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(x.row(i), x.row(first))).collect();
    for c in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut idx = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if target < w {
                    idx = i;
                    break;
                }
                target -= w;
            }
            idx
        } else {
            rng.random_range(0..n)
        };
        centroids.row_mut(c).copy_from_slice(x.row(pick));
        for (i, v) in d2.iter_mut().enumerate() {
            *v = v.min(sq_dist(x.row(i), x.row(pick)));
        }
    }
    centroids
}

/// Lloyd's algorithm from k-means++ seeding.
///
/// A cluster that loses all its points is re-seeded at the point farthest
/// from its current centroid. Ties in assignment go to the lower centroid
/// index.
pub fn kmeans(x: &Matrix, k: usize, seed: u64, max_iter: usize) -> Result<KMeansResult, MlError> {
    let n = x.nrows();
    if k == 0 || k > n {
        return Err(MlError::InvalidArg(format!("k = {k} with {n} rows")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = plus_plus(x, k, &mut rng);
    let mut labels = vec![usize::MAX; n];
    let mut history = Vec::new();
    let mut iterations = 0;
    let d = x.ncols();

    for _ in 0..max_iter.max(1) {
        iterations += 1;
        let mut changed = false;
        let mut inertia = 0.0;
        let mut dist = vec![0.0; n];
        for i in 0..n {
            let (c, dd) = nearest(x.row(i), &centroids);
            if labels[i] != c {
                labels[i] = c;
                changed = true;
            }
            dist[i] = dd;
            inertia += dd;
        }
        history.push(inertia);
        if !changed && iterations > 1 {
            break;
        }

        let mut sums = Matrix::zeros(k, d);
        let mut counts = vec![0usize; k];
        for i in 0..n {
            counts[labels[i]] += 1;
            for (s, v) in sums.row_mut(labels[i]).iter_mut().zip(x.row(i)) {
                *s += v;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                let inv = 1.0 / counts[c] as f64;
                for (dst, s) in centroids.row_mut(c).iter_mut().zip(sums.row(c)) {
                    *dst = s * inv;
                }
            } else {
                let far = (0..n)
                    .max_by(|&a, &b| dist[a].total_cmp(&dist[b]).then(b.cmp(&a)))
                    .expect("n > 0");
                centroids.row_mut(c).copy_from_slice(x.row(far));
                dist[far] = 0.0;
            }
        }
    }
    let inertia = *history.last().expect("at least one iteration");
    Ok(KMeansResult {
        labels,
        centroids,
        inertia,
        history,
        iterations,
    })
}

/// Best of `n_init` runs by inertia; run `r` uses a seed derived from
/// `seed` and `r`.
pub fn kmeans_restarts(
    x: &Matrix,
    k: usize,
    seed: u64,
    max_iter: usize,
    n_init: usize,
) -> Result<KMeansResult, MlError> {
    let mut best: Option<KMeansResult> = None;
    for r in 0..n_init.max(1) as u64 {
        let run = kmeans(x, k, seed.wrapping_add(r.wrapping_mul(0x9e37_79b9_7f4a_7c15)), max_iter)?;
        if best.as_ref().is_none_or(|b| run.inertia < b.inertia) {
            best = Some(run);
        }
    }
    Ok(best.expect("n_init >= 1"))
}
