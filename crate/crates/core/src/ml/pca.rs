use super::eigen::symmetric_eigen;
use super::standardize::apply;
use super::{Matrix, MlError};

#[derive(Debug, Clone, PartialEq)]
pub struct PcaModel {
    pub mean: Vec<f64>,
    /// Divisor applied after centering. All ones unless the model was
    /// fitted with [`PcaModel::fit_standardized`].
    pub scale: Vec<f64>,
    /// `p x d`, one orthonormal principal axis per row.
    pub components: Matrix,
    /// Eigenvalue of each component, non-increasing.
    pub explained_variance: Vec<f64>,
    /// Sum of all covariance eigenvalues.
    pub total_variance: f64,
}

/// Fits the top `p` principal axes of the sample covariance of `x`.
pub fn pca_fit(x: &Matrix, p: usize) -> Result<PcaModel, MlError> {
    fit(x, p, vec![1.0; x.ncols()])
}

fn fit(x: &Matrix, p: usize, scale: Vec<f64>) -> Result<PcaModel, MlError> {
    let d = x.ncols();
    if p > d {
        return Err(MlError::InvalidArg(format!("p = {p} exceeds {d} columns")));
    }
    if x.nrows() < 2 {
        return Err(MlError::InvalidArg("pca needs at least 2 rows".into()));
    }
    let mean = x.column_means();
    let scaled = apply(x, &vec![0.0; d], &scale)?;
    let eig = symmetric_eigen(&scaled.covariance())?;
    let mut components = Matrix::zeros(p, d);
    for c in 0..p {
        for j in 0..d {
            components.set(c, j, eig.vectors.get(j, c));
        }
    }
    Ok(PcaModel {
        mean: mean.iter().zip(&scale).map(|(m, s)| m / s).collect(),
        scale,
        components,
        explained_variance: eig.values[..p].to_vec(),
        total_variance: eig.values.iter().sum(),
    })
}

impl PcaModel {
    /// Standardizes with population std (constant columns scaled by 1),
    /// then fits.
    pub fn fit_standardized(x: &Matrix, p: usize) -> Result<Self, MlError> {
        let s = super::standardize(x)?;
        fit(x, p, s.scale)
    }

    pub fn n_components(&self) -> usize {
        self.components.nrows()
    }

    /// Maps reduced coordinates back to (scaled) input space.
    pub fn inverse_transform(&self, z: &Matrix) -> Result<Matrix, MlError> {
        let (p, d) = (self.components.nrows(), self.components.ncols());
        if z.ncols() != p {
            return Err(MlError::Shape(format!("{} columns, model has {p}", z.ncols())));
        }
        let mut out = Matrix::zeros(z.nrows(), d);
        for i in 0..z.nrows() {
            let zi = z.row(i);
            let oi = out.row_mut(i);
            for j in 0..d {
                oi[j] = self.mean[j]
                    + (0..p).map(|c| zi[c] * self.components.get(c, j)).sum::<f64>();
            }
        }
        Ok(out)
    }
}

/// Projects rows of `x` onto the model's components.
pub fn pca_transform(model: &PcaModel, x: &Matrix) -> Result<Matrix, MlError> {
    let (p, d) = (model.components.nrows(), model.components.ncols());
    let centered = apply(x, &vec![0.0; d], &model.scale)?;
    let mut out = Matrix::zeros(x.nrows(), p);
    for i in 0..x.nrows() {
        let r = centered.row(i);
        for c in 0..p {
            let axis = model.components.row(c);
            let v: f64 = (0..d).map(|j| (r[j] - model.mean[j]) * axis[j]).sum();
            out.set(i, c, v);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ml::sq_dist;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect();
        Matrix::from_vec(rows, cols, data).unwrap()
    }

    #[test]
    fn line_y_equals_x() {
        let x = Matrix::from_rows(&[vec![0.0, 0.0], vec![1.0, 1.0], vec![2.0, 2.0], vec![3.0, 3.0]])
            .unwrap();
        let m = pca_fit(&x, 1).unwrap();
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert!((m.components.get(0, 0) - h).abs() < 1e-12);
        assert!((m.components.get(0, 1) - h).abs() < 1e-12);
    }

    #[test]
    fn full_rank_is_isometry() {
        let x = random(30, 6, 9);
        let m = pca_fit(&x, 6).unwrap();
        let z = pca_transform(&m, &x).unwrap();
        for i in 0..x.nrows() {
            for j in 0..i {
                let a = sq_dist(x.row(i), x.row(j)).sqrt();
                let b = sq_dist(z.row(i), z.row(j)).sqrt();
                assert!((a - b).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn orthonormal_and_sorted() {
        let x = random(50, 10, 4);
        let m = pca_fit(&x, 10).unwrap();
        for a in 0..10 {
            for b in 0..10 {
                let dot: f64 = (0..10)
                    .map(|j| m.components.get(a, j) * m.components.get(b, j))
                    .sum();
                assert!((dot - if a == b { 1.0 } else { 0.0 }).abs() < 1e-8);
            }
        }
        assert!(m.explained_variance.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn reconstruction_error_non_increasing() {
        let x = random(40, 8, 2);
        let mut prev = f64::INFINITY;
        for p in 0..=8 {
            let m = pca_fit(&x, p).unwrap();
            let back = m.inverse_transform(&pca_transform(&m, &x).unwrap()).unwrap();
            let err: f64 = (0..x.nrows()).map(|i| sq_dist(x.row(i), back.row(i))).sum();
            assert!(err <= prev + 1e-9);
            prev = err;
        }
        assert!(prev < 1e-18);
    }

    #[test]
    fn too_many_components() {
        assert!(pca_fit(&random(5, 3, 1), 4).is_err());
    }

    #[test]
    fn standardized_fit_ignores_units() {
        let x = random(30, 3, 5);
        let mut y = x.clone();
        for i in 0..y.nrows() {
            y.row_mut(i)[1] *= 1000.0;
        }
        let a = PcaModel::fit_standardized(&x, 3).unwrap();
        let b = PcaModel::fit_standardized(&y, 3).unwrap();
        for (u, v) in a.explained_variance.iter().zip(&b.explained_variance) {
            assert!((u - v).abs() < 1e-9);
        }
    }
}
