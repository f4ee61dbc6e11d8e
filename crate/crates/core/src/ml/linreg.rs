use super::{Matrix, MlError};

/// Ridge strength used when the design is rank-deficient or too short.
pub const RIDGE_LAMBDA: f64 = 1e-8;

/// Relative pivot size below which a QR column counts as dependent.
const RANK_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    pub coef: Vec<f64>,
    pub intercept: f64,
    /// True when the ridge fallback produced the fit.
    pub ridge: bool,
}

/// Ordinary least squares with an unpenalized intercept.
///
/// Solved by Householder QR on the centered design. When there are no more
/// rows than columns, or QR finds a dependent column, the ridge normal
/// equations with [`RIDGE_LAMBDA`] are solved instead.
pub fn linreg_fit(x: &Matrix, y: &[f64]) -> Result<LinearModel, MlError> {
    let (n, d) = (x.nrows(), x.ncols());
    if y.len() != n {
        return Err(MlError::Shape(format!("{n} rows but {} targets", y.len())));
    }
    if n == 0 {
        return Err(MlError::InvalidArg("no rows".into()));
    }
    let xm = x.column_means();
    let ym = y.iter().sum::<f64>() / n as f64;
    let mut a = x.clone();
    for i in 0..n {
        for (j, v) in a.row_mut(i).iter_mut().enumerate() {
            *v -= xm[j];
        }
    }
    let yc: Vec<f64> = y.iter().map(|v| v - ym).collect();

    let (coef, ridge) = match (n > d).then(|| qr_solve(&a, &yc)).flatten() {
        Some(c) => (c, false),
        None => (ridge_solve(&a, &yc, RIDGE_LAMBDA), true),
    };
    let intercept = ym - coef.iter().zip(&xm).map(|(c, m)| c * m).sum::<f64>();
    Ok(LinearModel {
        coef,
        intercept,
        ridge,
    })
}

pub fn linreg_predict(model: &LinearModel, x: &Matrix) -> Result<Vec<f64>, MlError> {
    if x.ncols() != model.coef.len() {
        return Err(MlError::Shape(format!(
            "{} columns, model has {}",
            x.ncols(),
            model.coef.len()
        )));
    }
    Ok(x.rows_iter()
        .map(|r| model.intercept + r.iter().zip(&model.coef).map(|(v, c)| v * c).sum::<f64>())
        .collect())
}

/// Returns `None` when the design is numerically rank-deficient.
fn qr_solve(a: &Matrix, y: &[f64]) -> Option<Vec<f64>> {
    let (n, d) = (a.nrows(), a.ncols());
    let mut r = a.clone();
    let mut qty = y.to_vec();
    let scale = (0..d)
        .map(|j| r.col(j).iter().map(|v| v * v).sum::<f64>().sqrt())
        .fold(0.0, f64::max);
    if d > 0 && scale == 0.0 {
        return None;
    }
    let mut v = vec![0.0; n];
    for k in 0..d {
        let norm = (k..n).map(|i| r.get(i, k).powi(2)).sum::<f64>().sqrt();
        if norm <= RANK_TOL * scale {
            return None;
        }
        let alpha = if r.get(k, k) > 0.0 { -norm } else { norm };
        for i in k..n {
            v[i] = r.get(i, k);
        }
        v[k] -= alpha;
        let vnorm2: f64 = (k..n).map(|i| v[i] * v[i]).sum();
        for j in k..d {
            let dot: f64 = (k..n).map(|i| v[i] * r.get(i, j)).sum();
            let f = 2.0 * dot / vnorm2;
            for i in k..n {
                let cur = r.get(i, j);
                r.set(i, j, cur - f * v[i]);
            }
        }
        let dot: f64 = (k..n).map(|i| v[i] * qty[i]).sum();
        let f = 2.0 * dot / vnorm2;
        for i in k..n {
            qty[i] -= f * v[i];
        }
    }
    let mut beta = vec![0.0; d];
    for k in (0..d).rev() {
        let s: f64 = (k + 1..d).map(|j| r.get(k, j) * beta[j]).sum();
        beta[k] = (qty[k] - s) / r.get(k, k);
    }
    Some(beta)
}

fn ridge_solve(a: &Matrix, y: &[f64], lambda: f64) -> Vec<f64> {
    let d = a.ncols();
    let mut g = Matrix::zeros(d, d);
    let mut b = vec![0.0; d];
    for (i, row) in a.rows_iter().enumerate() {
        for p in 0..d {
            b[p] += row[p] * y[i];
            for q in p..d {
                let cur = g.get(p, q);
                g.set(p, q, cur + row[p] * row[q]);
            }
        }
    }
    for p in 0..d {
        for q in 0..p {
            g.set(p, q, g.get(q, p));
        }
        g.set(p, p, g.get(p, p) + lambda);
    }
    // Cholesky, lower factor stored in place
    for j in 0..d {
        let s = g.get(j, j) - (0..j).map(|k| g.get(j, k).powi(2)).sum::<f64>();
        let l = s.max(f64::MIN_POSITIVE).sqrt();
        g.set(j, j, l);
        for i in j + 1..d {
            let s = g.get(i, j) - (0..j).map(|k| g.get(i, k) * g.get(j, k)).sum::<f64>();
            g.set(i, j, s / l);
        }
    }
    let mut z = vec![0.0; d];
    for i in 0..d {
        let s: f64 = (0..i).map(|k| g.get(i, k) * z[k]).sum();
        z[i] = (b[i] - s) / g.get(i, i);
    }
    let mut beta = vec![0.0; d];
    for i in (0..d).rev() {
        let s: f64 = (i + 1..d).map(|k| g.get(k, i) * beta[k]).sum();
        beta[i] = (z[i] - s) / g.get(i, i);
    }
    beta
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn exact_line() {
        let x = Matrix::from_rows(&(0..10).map(|i| vec![f64::from(i)]).collect::<Vec<_>>()).unwrap();
        let y: Vec<f64> = (0..10).map(|i| 2.0 * f64::from(i) + 1.0).collect();
        let m = linreg_fit(&x, &y).unwrap();
        assert!((m.coef[0] - 2.0).abs() < 1e-10);
        assert!((m.intercept - 1.0).abs() < 1e-10);
        assert!(!m.ridge);
    }

    #[test]
    fn residuals_orthogonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..5 {
            let (n, d) = (60, 7);
            let data: Vec<f64> = (0..n * d).map(|_| rng.random_range(-2.0..2.0)).collect();
            let x = Matrix::from_vec(n, d, data).unwrap();
            let y: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let m = linreg_fit(&x, &y).unwrap();
            let yhat = linreg_predict(&m, &x).unwrap();
            let res: Vec<f64> = y.iter().zip(&yhat).map(|(a, b)| a - b).collect();
            assert!(res.iter().sum::<f64>().abs() < 1e-8);
            for j in 0..d {
                let dot: f64 = (0..n).map(|i| res[i] * x.get(i, j)).sum();
                assert!(dot.abs() < 1e-8, "column {j}: {dot}");
            }
        }
    }

    #[test]
    fn constant_target() {
        let x = Matrix::from_rows(&[vec![1.0, 0.0], vec![2.0, 5.0], vec![0.0, 1.0], vec![4.0, 4.0]])
            .unwrap();
        let m = linreg_fit(&x, &[3.0; 4]).unwrap();
        assert!(m.coef.iter().all(|c| c.abs() < 1e-12));
        assert!((m.intercept - 3.0).abs() < 1e-12);
    }

    #[test]
    fn collinear_falls_back_to_ridge() {
        let rows: Vec<Vec<f64>> = (0..8).map(|i| vec![f64::from(i), 2.0 * f64::from(i)]).collect();
        let x = Matrix::from_rows(&rows).unwrap();
        let y: Vec<f64> = (0..8).map(|i| 5.0 * f64::from(i)).collect();
        let m = linreg_fit(&x, &y).unwrap();
        assert!(m.ridge);
        let yhat = linreg_predict(&m, &x).unwrap();
        for (a, b) in y.iter().zip(&yhat) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn short_design_uses_ridge() {
        let x = Matrix::from_rows(&[vec![1.0, 2.0, 3.0], vec![0.0, 1.0, 0.0]]).unwrap();
        let m = linreg_fit(&x, &[1.0, 2.0]).unwrap();
        assert!(m.ridge);
        assert!(m.coef.iter().all(|c| c.is_finite()));
    }
}
