use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Column-wise min-max map onto `[-1, 1]`. Constant columns map to 0.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl Scaler {
    pub fn fit(data: ArrayView2<f64>) -> Result<Self> {
        if data.nrows() == 0 {
            return Err(Error::InvalidArgument("cannot fit a scaler on empty data".into()));
        }
        let mut min = vec![f64::INFINITY; data.ncols()];
        let mut max = vec![f64::NEG_INFINITY; data.ncols()];
        for row in data.rows() {
            for (j, &v) in row.iter().enumerate() {
                min[j] = min[j].min(v);
                max[j] = max[j].max(v);
            }
        }
        Ok(Self { min, max })
    }

    /// Scaler that leaves `[-1, 1]` data unchanged.
    pub fn identity(n: usize) -> Self {
        Self {
            min: vec![-1.0; n],
            max: vec![1.0; n],
        }
    }

    pub fn dim(&self) -> usize {
        self.min.len()
    }

    /// `dx / dx_norm` of column `j`.
    pub fn half_range(&self, j: usize) -> f64 {
        0.5 * (self.max[j] - self.min[j])
    }

    /// `dx_norm / dx` of column `j`; zero for constant columns.
    pub fn inv_half_range(&self, j: usize) -> f64 {
        let r = self.max[j] - self.min[j];
        if r > 0.0 {
            2.0 / r
        } else {
            0.0
        }
    }

    pub fn apply_value(&self, j: usize, x: f64) -> f64 {
        let r = self.max[j] - self.min[j];
        if r > 0.0 {
            2.0 * (x - self.min[j]) / r - 1.0
        } else {
            0.0
        }
    }

    pub fn invert_value(&self, j: usize, y: f64) -> f64 {
        (y + 1.0) * 0.5 * (self.max[j] - self.min[j]) + self.min[j]
    }

    fn check(&self, x: &ArrayView2<f64>) -> Result<()> {
        if x.ncols() != self.dim() {
            return Err(Error::Shape(format!("scaler has {} columns, data has {}", self.dim(), x.ncols())));
        }
        Ok(())
    }

    pub fn apply(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check(&x)?;
        Ok(Array2::from_shape_fn(x.dim(), |(i, j)| self.apply_value(j, x[[i, j]])))
    }

    pub fn invert(&self, y: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check(&y)?;
        Ok(Array2::from_shape_fn(y.dim(), |(i, j)| self.invert_value(j, y[[i, j]])))
    }

    /// Sub-scaler over a set of columns.
    pub fn select(&self, columns: &[usize]) -> Scaler {
        Scaler {
            min: columns.iter().map(|&j| self.min[j]).collect(),
            max: columns.iter().map(|&j| self.max[j]).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    #[test]
    fn maps_range_onto_unit_interval() {
        let s = Scaler::fit(array![[0.0], [5.0], [10.0]].view()).unwrap();
        let y = s.apply(array![[0.0], [5.0], [10.0]].view()).unwrap();
        assert_eq!(y, array![[-1.0], [0.0], [1.0]]);
    }

    #[test]
    fn constant_column_maps_to_zero() {
        let s = Scaler::fit(array![[7.0], [7.0]].view()).unwrap();
        let y = s.apply(array![[7.0], [7.0]].view()).unwrap();
        assert_eq!(y, array![[0.0], [0.0]]);
        assert_eq!(s.invert(y.view()).unwrap(), array![[7.0], [7.0]]);
        assert_eq!(s.inv_half_range(0), 0.0);
    }

    #[test]
    fn empty_fit_is_rejected() {
        assert!(Scaler::fit(Array2::<f64>::zeros((0, 3)).view()).is_err());
    }

    proptest! {
        #[test]
        fn round_trip(values in proptest::collection::vec(-1e4..1e4f64, 2..40)) {
            let x = Array2::from_shape_vec((values.len() / 2, 2), values[..values.len() / 2 * 2].to_vec()).unwrap();
            let s = Scaler::fit(x.view()).unwrap();
            let back = s.invert(s.apply(x.view()).unwrap().view()).unwrap();
            for (a, b) in x.iter().zip(back.iter()) {
                prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0) * 10.0);
            }
            let y = s.apply(x.view()).unwrap();
            prop_assert!(y.iter().all(|v| (-1.0 - 1e-12..=1.0 + 1e-12).contains(v)));
        }
    }
}
