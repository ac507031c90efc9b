//! Drained triaxial compression driver: axial strain `eps33` is prescribed
//! and the lateral stresses are held at their initial value.

use super::{integrate_step, IntegratorTolerances, MaterialState, StepResult, WgParams};
use crate::error::{Error, Result};
use crate::mech::{strain_invariants, PrincipalVec3};

#[derive(Clone, Copy, Debug)]
pub struct TriaxialPoint {
    pub state: MaterialState,
    pub step: StepResult,
    pub d_eps: PrincipalVec3,
}

/// Runs drained triaxial compression from an isotropic state until the
/// equivalent shear strain of the total strain reaches `gamma_target`.
pub fn drained_triaxial(
    p_in: f64,
    e_in: f64,
    d_axial: f64,
    gamma_target: f64,
    params: &WgParams,
    tol: &IntegratorTolerances,
) -> Result<Vec<TriaxialPoint>> {
    if !(d_axial > 0.0) {
        return Err(Error::InvalidArgument(format!("axial increment must be positive, got {d_axial}")));
    }
    let lateral = p_in;
    let mut state = MaterialState::isotropic(p_in, e_in);
    let mut out = Vec::new();
    let mut guess = -0.3 * d_axial;
    while strain_invariants(&state.eps).gamma < gamma_target {
        let residual = |x: f64| -> Result<(f64, StepResult)> {
            let d_eps = PrincipalVec3::new(x, x, d_axial);
            let r = integrate_step(&state, &d_eps, params, tol)?;
            let s = state.sigma + r.d_sigma;
            Ok((0.5 * (s[0] + s[1]) - lateral, r))
        };
        let mut x0 = guess;
        let mut x1 = guess - 0.1 * d_axial;
        let (mut r0, _) = residual(x0)?;
        let (mut r1, mut res1) = residual(x1)?;
        let mut converged = false;
        for _ in 0..60 {
            if r1.abs() <= 1e-10 * lateral {
                converged = true;
                break;
            }
            let denom = r1 - r0;
            if denom == 0.0 {
                break;
            }
            let x2 = x1 - r1 * (x1 - x0) / denom;
            x0 = x1;
            r0 = r1;
            x1 = x2;
            (r1, res1) = residual(x1)?;
        }
        if !converged {
            return Err(Error::IntegrationFailure {
                iterations: 60,
                f_residual: r1,
                stress_residual: r1,
            });
        }
        guess = x1;
        let d_eps = PrincipalVec3::new(x1, x1, d_axial);
        state = res1.apply(&state, &d_eps);
        out.push(TriaxialPoint {
            state,
            step: res1,
            d_eps,
        });
    }
    Ok(out)
}
