use super::{kmeans_restarts, Matrix, MlError};

/// Per-dimension variance floor.
pub const VAR_FLOOR: f64 = 1e-6;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Diagonal-covariance Gaussian mixture fitted by EM.
#[derive(Debug, Clone, PartialEq)]
pub struct GmmModel {
    pub weights: Vec<f64>,
    /// `k x d`.
    pub means: Matrix,
    /// `k x d` diagonal variances.
    pub variances: Matrix,
    /// `n x k` posterior membership probabilities.
    pub responsibilities: Matrix,
    /// Total log-likelihood after each E step.
    pub log_likelihood: Vec<f64>,
    pub converged: bool,
}

impl GmmModel {
    pub fn k(&self) -> usize {
        self.weights.len()
    }

    /// Most probable component per row.
    pub fn labels(&self) -> Vec<usize> {
        (0..self.responsibilities.nrows())
            .map(|i| {
                let r = self.responsibilities.row(i);
                (0..r.len())
                    .max_by(|&a, &b| r[a].total_cmp(&r[b]).then(b.cmp(&a)))
                    .unwrap_or(0)
            })
            .collect()
    }
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// E step: fills `resp` and returns the total log-likelihood.
fn e_step(x: &Matrix, weights: &[f64], means: &Matrix, vars: &Matrix, resp: &mut Matrix) -> f64 {
    let (k, d) = (weights.len(), x.ncols());
    let consts: Vec<f64> = (0..k)
        .map(|c| {
            weights[c].ln()
                - 0.5 * (d as f64 * LN_2PI + vars.row(c).iter().map(|v| v.ln()).sum::<f64>())
        })
        .collect();
    let mut lp = vec![0.0; k];
    let mut total = 0.0;
    for i in 0..x.nrows() {
        let row = x.row(i);
        for c in 0..k {
            let (mu, var) = (means.row(c), vars.row(c));
            let q: f64 = (0..d).map(|j| (row[j] - mu[j]).powi(2) / var[j]).sum();
            lp[c] = consts[c] - 0.5 * q;
        }
        let norm = log_sum_exp(&lp);
        total += norm;
        for (r, l) in resp.row_mut(i).iter_mut().zip(&lp) {
            *r = (l - norm).exp();
        }
    }
    total
}

/// EM for a `k`-component diagonal mixture, initialized from k-means.
///
/// Stops when the log-likelihood improves by less than `tol` (absolute) or
/// after `max_iter` EM rounds.
pub fn gmm_fit(
    x: &Matrix,
    k: usize,
    seed: u64,
    max_iter: usize,
    tol: f64,
) -> Result<GmmModel, MlError> {
    let (n, d) = (x.nrows(), x.ncols());
    if k == 0 || k > n {
        return Err(MlError::InvalidArg(format!("k = {k} with {n} rows")));
    }
    let init = kmeans_restarts(x, k, seed, 100, 4)?;
    let mut resp = Matrix::zeros(n, k);
    for (i, &l) in init.labels.iter().enumerate() {
        resp.set(i, l, 1.0);
    }
    let mut weights = vec![0.0; k];
    let mut means = Matrix::zeros(k, d);
    let mut vars = Matrix::zeros(k, d);
    m_step(x, &resp, &mut weights, &mut means, &mut vars);

    let mut history = Vec::new();
    let mut converged = false;
    for _ in 0..max_iter.max(1) {
        let ll = e_step(x, &weights, &means, &vars, &mut resp);
        if let Some(&prev) = history.last() {
            if ll - prev < tol {
                history.push(ll);
                converged = true;
                break;
            }
        }
        history.push(ll);
        m_step(x, &resp, &mut weights, &mut means, &mut vars);
    }
    Ok(GmmModel {
        weights,
        means,
        variances: vars,
        responsibilities: resp,
        log_likelihood: history,
        converged,
    })
}

fn m_step(x: &Matrix, resp: &Matrix, weights: &mut [f64], means: &mut Matrix, vars: &mut Matrix) {
    let (n, d, k) = (x.nrows(), x.ncols(), weights.len());
    for c in 0..k {
        let nk: f64 = (0..n).map(|i| resp.get(i, c)).sum();
        if nk < 1e-12 {
            // component collapsed to nothing; leave its parameters but give
            // it negligible mass
            weights[c] = 1e-300;
            continue;
        }
        weights[c] = nk / n as f64;
        let mut mu = vec![0.0; d];
        for i in 0..n {
            let r = resp.get(i, c);
            for (m, v) in mu.iter_mut().zip(x.row(i)) {
                *m += r * v;
            }
        }
        mu.iter_mut().for_each(|m| *m /= nk);
        let mut var = vec![0.0; d];
        for i in 0..n {
            let r = resp.get(i, c);
            for j in 0..d {
                var[j] += r * (x.get(i, j) - mu[j]).powi(2);
            }
        }
        for j in 0..d {
            means.set(c, j, mu[j]);
            vars.set(c, j, (var[j] / nk).max(VAR_FLOOR));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ml::adjusted_rand_index;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn blob(center: &[f64], n: usize, sd: f64, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
        (0..n)
            .map(|_| center.iter().map(|c| c + sd * (rng.random::<f64>() - 0.5) * 3.4).collect())
            .collect()
    }

    #[test]
    fn single_blob_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Matrix::from_rows(&blob(&[1.0, -2.0, 0.5], 80, 1.0, &mut rng)).unwrap();
        let g = gmm_fit(&x, 1, 0, 50, 1e-12).unwrap();
        for (a, b) in g.means.row(0).iter().zip(x.column_means()) {
            assert!((a - b).abs() < 1e-9);
        }
        assert!((g.weights[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn two_blobs_one_hot() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut rows = blob(&[0.0, 0.0], 60, 1.0, &mut rng);
        rows.extend(blob(&[8.0, 8.0], 60, 1.0, &mut rng));
        let truth: Vec<usize> = (0..120).map(|i| i / 60).collect();
        let x = Matrix::from_rows(&rows).unwrap();
        let g = gmm_fit(&x, 2, 5, 100, 1e-9).unwrap();
        assert!(adjusted_rand_index(&g.labels(), &truth) >= 0.99);
        for i in 0..120 {
            let r = g.responsibilities.row(i);
            assert!(r.iter().copied().fold(0.0, f64::max) > 0.99);
        }
    }

    #[test]
    fn log_likelihood_monotone() {
        for seed in 0..8 {
            let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
            let rows: Vec<Vec<f64>> = (0..90)
                .map(|_| (0..4).map(|_| rng.random_range(-1.0..1.0)).collect())
                .collect();
            let x = Matrix::from_rows(&rows).unwrap();
            let g = gmm_fit(&x, 3, seed, 200, 0.0).unwrap();
            for w in g.log_likelihood.windows(2) {
                assert!(w[1] >= w[0] - 1e-9, "seed {seed}: {w:?}");
            }
        }
    }

    #[test]
    fn duplicated_rows_stay_finite() {
        let mut rows = vec![vec![1.0, 1.0]; 10];
        rows.extend(vec![vec![3.0, 0.0]; 10]);
        let x = Matrix::from_rows(&rows).unwrap();
        let g = gmm_fit(&x, 2, 0, 50, 1e-9).unwrap();
        assert!(g.log_likelihood.iter().all(|l| l.is_finite()));
        assert!(g.variances.data().iter().all(|&v| v >= VAR_FLOOR));
    }
}
