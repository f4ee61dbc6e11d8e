//! Cyclic Jacobi eigensolver for dense symmetric matrices.

use super::{Matrix, MlError};

const MAX_SWEEPS: usize = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct SymEigen {
    /// Eigenvalues, descending.
    pub values: Vec<f64>,
    /// Column `j` is the unit eigenvector of `values[j]`, signed so that its
    /// largest-magnitude entry is positive.
    pub vectors: Matrix,
}

pub fn symmetric_eigen(a: &Matrix) -> Result<SymEigen, MlError> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(MlError::Shape(format!("{}x{} is not square", n, a.ncols())));
    }
    for i in 0..n {
        for j in 0..i {
            let (x, y) = (a.get(i, j), a.get(j, i));
            if (x - y).abs() > 1e-9 * (1.0 + x.abs().max(y.abs())) {
                return Err(MlError::InvalidArg(format!("not symmetric at ({i}, {j})")));
            }
        }
    }
    let mut m = a.data().to_vec();
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    let norm: f64 = m.iter().map(|x| x * x).sum::<f64>().sqrt();

    for _ in 0..MAX_SWEEPS {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m[i * n + j] * m[i * n + j])
            .sum();
        if off.sqrt() <= f64::EPSILON * norm * 1e-2 || off == 0.0 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let theta = (m[q * n + q] - m[p * n + p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (kp, kq) = (m[k * n + p], m[k * n + q]);
                    m[k * n + p] = c * kp - s * kq;
                    m[k * n + q] = s * kp + c * kq;
                }
                for k in 0..n {
                    let (pk, qk) = (m[p * n + k], m[q * n + k]);
                    m[p * n + k] = c * pk - s * qk;
                    m[q * n + k] = s * pk + c * qk;
                }
                for k in 0..n {
                    let (kp, kq) = (v[k * n + p], v[k * n + q]);
                    v[k * n + p] = c * kp - s * kq;
                    v[k * n + q] = s * kp + c * kq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[j * n + j].total_cmp(&m[i * n + i]).then(i.cmp(&j)));
    let values = order.iter().map(|&i| m[i * n + i]).collect();
    let mut vectors = Matrix::zeros(n, n);
    for (col, &src) in order.iter().enumerate() {
        let mut lead = 0.0f64;
        for k in 0..n {
            let x = v[k * n + src];
            if x.abs() > lead.abs() {
                lead = x;
            }
        }
        let sign = if lead < 0.0 { -1.0 } else { 1.0 };
        for k in 0..n {
            vectors.set(k, col, sign * v[k * n + src]);
        }
    }
    Ok(SymEigen { values, vectors })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_sym(n: usize, seed: u64) -> Matrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut a = Matrix::zeros(n, n);
        for i in 0..n {
            for j in 0..=i {
                let x: f64 = rng.random_range(-1.0..1.0);
                a.set(i, j, x);
                a.set(j, i, x);
            }
        }
        a
    }

    #[test]
    fn diagonal_input() {
        let a = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 3.0]]).unwrap();
        let e = symmetric_eigen(&a).unwrap();
        assert_eq!(e.values, vec![3.0, 1.0]);
        assert_eq!(e.vectors.col(0), vec![0.0, 1.0]);
    }

    #[test]
    fn two_by_two_by_hand() {
        // [[2,1],[1,2]] has eigenpairs 3 -> (1,1)/sqrt2, 1 -> (1,-1)/sqrt2
        let a = Matrix::from_rows(&[vec![2.0, 1.0], vec![1.0, 2.0]]).unwrap();
        let e = symmetric_eigen(&a).unwrap();
        assert!((e.values[0] - 3.0).abs() < 1e-14);
        assert!((e.values[1] - 1.0).abs() < 1e-14);
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert!((e.vectors.get(0, 0) - h).abs() < 1e-14);
        assert!((e.vectors.get(1, 0) - h).abs() < 1e-14);
    }

    #[test]
    fn matches_nalgebra() {
        for (n, seed) in [(5, 1), (20, 2), (73, 3)] {
            let a = random_sym(n, seed);
            let e = symmetric_eigen(&a).unwrap();
            let oracle = DMatrix::from_row_slice(n, n, a.data()).symmetric_eigen();
            let mut ov: Vec<f64> = oracle.eigenvalues.iter().copied().collect();
            ov.sort_by(|x, y| y.total_cmp(x));
            for (x, y) in e.values.iter().zip(&ov) {
                assert!((x - y).abs() < 1e-10, "n={n}: {x} vs {y}");
            }
            // A v = lambda v and V orthonormal
            for j in 0..n {
                for i in 0..n {
                    let av: f64 = (0..n).map(|k| a.get(i, k) * e.vectors.get(k, j)).sum();
                    assert!((av - e.values[j] * e.vectors.get(i, j)).abs() < 1e-10);
                }
                for l in 0..n {
                    let dot: f64 = (0..n).map(|k| e.vectors.get(k, j) * e.vectors.get(k, l)).sum();
                    let want = if j == l { 1.0 } else { 0.0 };
                    assert!((dot - want).abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn rejects_non_square() {
        assert!(symmetric_eigen(&Matrix::zeros(2, 3)).is_err());
    }
}
