use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-sample error summed over output components, averaged over samples.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    /// `mean_i |y_i - y*_i|^2`
    Mse,
    /// `mean_i sum_j |y_ij - y*_ij|`
    Mae,
}

impl std::str::FromStr for LossKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mse" => Ok(LossKind::Mse),
            "mae" => Ok(LossKind::Mae),
            other => Err(Error::InvalidArgument(format!("unknown loss {other:?}"))),
        }
    }
}

fn check(y: &ArrayView2<f64>, y_star: &ArrayView2<f64>) -> Result<()> {
    if y.dim() != y_star.dim() {
        return Err(Error::Shape(format!("prediction {:?} vs label {:?}", y.dim(), y_star.dim())));
    }
    if y.nrows() == 0 {
        return Err(Error::Shape("empty batch".into()));
    }
    Ok(())
}

pub fn loss(kind: LossKind, y: ArrayView2<f64>, y_star: ArrayView2<f64>) -> Result<f64> {
    check(&y, &y_star)?;
    let m = y.nrows() as f64;
    let total: f64 = match kind {
        LossKind::Mse => y.iter().zip(y_star.iter()).map(|(a, b)| (a - b) * (a - b)).sum(),
        LossKind::Mae => y.iter().zip(y_star.iter()).map(|(a, b)| (a - b).abs()).sum(),
    };
    Ok(total / m)
}

/// `dL/dY`; the MAE subgradient at a zero residual is taken as zero.
pub fn loss_grad(kind: LossKind, y: ArrayView2<f64>, y_star: ArrayView2<f64>) -> Result<Array2<f64>> {
    check(&y, &y_star)?;
    let m = y.nrows() as f64;
    let mut g = &y - &y_star;
    match kind {
        LossKind::Mse => g.mapv_inplace(|r| 2.0 * r / m),
        LossKind::Mae => g.mapv_inplace(|r| {
            if r > 0.0 {
                1.0 / m
            } else if r < 0.0 {
                -1.0 / m
            } else {
                0.0
            }
        }),
    }
    Ok(g)
}
