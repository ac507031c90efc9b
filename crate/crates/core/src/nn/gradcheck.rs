//! Central finite-difference verification of analytic gradients.
//!
//! Central differences with step `h` carry a round-off error of roughly
//! `eps_mach * |L| / h`, so a gradient component much smaller than `|L|`
//! cannot be resolved in relative terms. Relative errors are therefore
//! measured against `max(|analytic|, |numeric|, GRAD_FLOOR_REL * |L|)`.
//! Components whose perturbation crosses a kink (a ReLU-type activation
//! switching sides or an absolute-value residual changing sign) are
//! non-differentiable there and are excluded.

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use super::adam::ParamSet;
use super::loss::{loss, loss_grad, LossKind};
use super::mlp::{backward, forward, MlpParams, MlpSpec};
use crate::error::Result;

pub const GRAD_FLOOR_REL: f64 = 1e-3;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub checked: usize,
    pub excluded: usize,
}

impl GradCheckReport {
    pub fn merge(self, other: GradCheckReport) -> GradCheckReport {
        GradCheckReport {
            max_rel_error: self.max_rel_error.max(other.max_rel_error),
            checked: self.checked + other.checked,
            excluded: self.excluded + other.excluded,
        }
    }
}

/// Compares `analytic[i]` with `(L(+h) - L(-h)) / 2h`. `loss_at(i, delta)`
/// returns the loss with parameter `i` shifted by `delta` and a kink
/// signature; differing signatures between the two sides exclude `i`.
pub fn compare_gradients<F>(analytic: &[f64], base_loss: f64, h: f64, mut loss_at: F) -> Result<GradCheckReport>
where
    F: FnMut(usize, f64) -> Result<(f64, u64)>,
{
    let floor = GRAD_FLOOR_REL * base_loss.abs().max(f64::MIN_POSITIVE);
    let mut report = GradCheckReport::default();
    for (i, &a) in analytic.iter().enumerate() {
        let (lp, sp) = loss_at(i, h)?;
        let (lm, sm) = loss_at(i, -h)?;
        if sp != sm {
            report.excluded += 1;
            continue;
        }
        let numeric = (lp - lm) / (2.0 * h);
        let denom = a.abs().max(numeric.abs()).max(floor);
        report.max_rel_error = report.max_rel_error.max((a - numeric).abs() / denom);
        report.checked += 1;
    }
    Ok(report)
}

pub(crate) fn residual_signature(y: &Array2<f64>, y_star: ArrayView2<f64>, kind: LossKind) -> u64 {
    if kind == LossKind::Mse {
        return 0;
    }
    let mut h: u64 = 0x51_7cc1_b727_220a;
    for (a, b) in y.iter().zip(y_star.iter()) {
        h = (h ^ u64::from(a > b)).wrapping_mul(0x1000_0000_01b3).rotate_left(1);
    }
    h
}

/// Checks `backward` of a single network against central differences.
pub fn gradient_check(
    spec: &MlpSpec,
    params: &MlpParams,
    x: ArrayView2<f64>,
    y_star: ArrayView2<f64>,
    kind: LossKind,
    h: f64,
) -> Result<GradCheckReport> {
    let (y, cache) = forward(params, spec, x)?;
    let base = loss(kind, y.view(), y_star)?;
    let d_y = loss_grad(kind, y.view(), y_star)?;
    let (grads, _) = backward(params, spec, &cache, d_y.view())?;
    let analytic = grads.to_flat();

    // Map flat indices back to (slice, offset).
    let lens: Vec<usize> = params.slices().iter().map(|s| s.len()).collect();
    let mut work = params.clone();
    compare_gradients(&analytic, base, h, |i, delta| {
        let (mut k, mut off) = (0, i);
        while off >= lens[k] {
            off -= lens[k];
            k += 1;
        }
        let original = work.slices()[k][off];
        work.slices_mut()[k][off] = original + delta;
        let out = forward(&work, spec, x).and_then(|(y, c)| {
            let l = loss(kind, y.view(), y_star)?;
            Ok((l, c.kink_signature() ^ residual_signature(&y, y_star, kind)))
        });
        work.slices_mut()[k][off] = original;
        out
    })
}
