use super::{Matrix, MlError};

/// Column scale below which a column is treated as constant.
const CONST_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct Standardized {
    pub x: Matrix,
    pub mean: Vec<f64>,
    /// Population standard deviation; 1 for constant columns.
    pub scale: Vec<f64>,
    /// Columns whose variance was zero.
    pub constant: Vec<bool>,
}

impl Standardized {
    /// Applies the fitted mean and scale to new rows.
    pub fn apply(&self, x: &Matrix) -> Result<Matrix, MlError> {
        apply(x, &self.mean, &self.scale)
    }
}

pub(crate) fn apply(x: &Matrix, mean: &[f64], scale: &[f64]) -> Result<Matrix, MlError> {
    if x.ncols() != mean.len() {
        return Err(MlError::Shape(format!(
            "{} columns, model expects {}",
            x.ncols(),
            mean.len()
        )));
    }
    let mut out = x.clone();
    for i in 0..out.nrows() {
        for (j, v) in out.row_mut(i).iter_mut().enumerate() {
            *v = (*v - mean[j]) / scale[j];
        }
    }
    Ok(out)
}

/// Z-scores every column with the population standard deviation.
pub fn standardize(x: &Matrix) -> Result<Standardized, MlError> {
    if x.nrows() < 2 {
        return Err(MlError::InvalidArg("standardize needs at least 2 rows".into()));
    }
    let mean = x.column_means();
    let n = x.nrows() as f64;
    let mut var = vec![0.0; x.ncols()];
    for r in x.rows_iter() {
        for (j, v) in r.iter().enumerate() {
            var[j] += (v - mean[j]) * (v - mean[j]);
        }
    }
    let mut constant = vec![false; x.ncols()];
    let scale: Vec<f64> = var
        .iter()
        .enumerate()
        .map(|(j, v)| {
            let s = (v / n).sqrt();
            if s <= CONST_EPS * (1.0 + mean[j].abs()) {
                constant[j] = true;
                1.0
            } else {
                s
            }
        })
        .collect();
    let z = apply(x, &mean, &scale)?;
    Ok(Standardized {
        x: z,
        mean,
        scale,
        constant,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_column_flagged() {
        let x = Matrix::from_rows(&[vec![5.0, 1.0], vec![5.0, 3.0]]).unwrap();
        let s = standardize(&x).unwrap();
        assert_eq!(s.constant, vec![true, false]);
        assert_eq!(s.scale[0], 1.0);
        assert_eq!(s.x.col(0), vec![0.0, 0.0]);
    }

    #[test]
    fn hand_two_by_two() {
        // col0: 1, 3 -> mean 2, pop std 1 -> -1, 1
        // col1: 10, 30 -> mean 20, pop std 10 -> -1, 1
        let x = Matrix::from_rows(&[vec![1.0, 10.0], vec![3.0, 30.0]]).unwrap();
        let s = standardize(&x).unwrap();
        assert_eq!(s.mean, vec![2.0, 20.0]);
        assert_eq!(s.scale, vec![1.0, 10.0]);
        assert_eq!(s.x.data(), &[-1.0, -1.0, 1.0, 1.0]);
    }

    #[test]
    fn idempotent() {
        let x = Matrix::from_rows(&[
            vec![1.0, 0.5],
            vec![2.0, -1.0],
            vec![4.0, 3.0],
            vec![-2.0, 0.0],
        ])
        .unwrap();
        let a = standardize(&x).unwrap();
        let b = standardize(&a.x).unwrap();
        for (u, v) in a.x.data().iter().zip(b.x.data()) {
            assert!((u - v).abs() < 1e-12);
        }
    }

    #[test]
    fn needs_two_rows() {
        let x = Matrix::from_rows(&[vec![1.0]]).unwrap();
        assert!(standardize(&x).is_err());
    }
}
