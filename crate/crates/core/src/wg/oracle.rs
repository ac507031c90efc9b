//! Explicit sub-stepped integrator used to cross-check the return mapping.
//!
//! Each substep takes an elastic predictor, then, if the predictor lies
//! outside the yield surface, corrects it along the flow direction frozen
//! at the start of the substep (or at the predictor when the start is the
//! isotropic apex) until the yield condition holds. The scheme is first
//! order in the substep size.

use super::{critical_void_ratio, dilatancy_coefficient, mobilized_friction, yield_value, MaterialState, StepResult, WgParams};
use crate::error::{Error, Result};
use crate::mech::{stress_invariants, PrincipalVec3};

const F_ABS: f64 = 1e-9;

struct SubState {
    sigma: PrincipalVec3,
    gamma_p: f64,
    e: f64,
}

fn flow_direction(sigma: &PrincipalVec3, gamma_p: f64, e: f64, params: &WgParams) -> Result<Option<PrincipalVec3>> {
    let inv = stress_invariants(sigma);
    if inv.degenerate || inv.p <= 0.0 {
        return Ok(None);
    }
    let e_cs = critical_void_ratio(inv.p, params)?;
    let n = dilatancy_coefficient(mobilized_friction(gamma_p, e, e_cs, params)?, e, e_cs, params)?;
    let dir = inv.s * (1.5 / inv.q);
    Ok(Some(dir - PrincipalVec3::splat(n / 3.0)))
}

fn isotropic_response(g: f64, k: f64, v: &PrincipalVec3) -> PrincipalVec3 {
    let mean = v.sum() / 3.0;
    PrincipalVec3::new(
        3.0 * k * mean + 2.0 * g * (v[0] - mean),
        3.0 * k * mean + 2.0 * g * (v[1] - mean),
        3.0 * k * mean + 2.0 * g * (v[2] - mean),
    )
}

/// Yield value that reports `None` where the model is undefined.
fn safe_yield(sigma: &PrincipalVec3, gamma_p: f64, e: f64, params: &WgParams) -> Option<f64> {
    if !(sigma.sum() > 0.0) {
        return None;
    }
    yield_value(sigma, gamma_p, e, params).ok().filter(|f| f.is_finite())
}

fn substep(st: &mut SubState, d: &PrincipalVec3, params: &WgParams) -> Result<(f64, PrincipalVec3)> {
    let e_next = st.e - (1.0 + st.e) * d.sum();
    if !(e_next > 0.0 && e_next < 2.17) {
        return Err(Error::InvalidStressState(format!("void ratio {e_next} outside the model range")));
    }
    // Elastic predictor with moduli at the end of the substep; closed form in sqrt(p).
    let factor = params.g0 * (2.17 - e_next) / (1.0 + e_next) * params.p0.sqrt();
    let ratio = 2.0 * (1.0 + params.nu) / (3.0 * (1.0 - 2.0 * params.nu));
    let p_old = st.sigma.sum() / 3.0;
    let b = ratio * factor * d.sum();
    let root = 0.5 * (b + (b * b + 4.0 * p_old).sqrt());
    let g = factor * root;
    let k = ratio * g;
    let p_tr = root * root;
    let dev_old = st.sigma - PrincipalVec3::splat(p_old);
    let dev_d = *d - PrincipalVec3::splat(d.sum() / 3.0);
    let trial = dev_old + dev_d * (2.0 * g) + PrincipalVec3::splat(p_tr);

    let f_trial = yield_value(&trial, st.gamma_p, e_next, params)?;
    if f_trial <= F_ABS {
        st.sigma = trial;
        st.e = e_next;
        return Ok((0.0, PrincipalVec3::ZERO));
    }

    let m = match flow_direction(&st.sigma, st.gamma_p, st.e, params)? {
        Some(m) => m,
        None => flow_direction(&trial, st.gamma_p, e_next, params)?
            .ok_or_else(|| Error::InvalidStressState("no flow direction at the apex".into()))?,
    };
    let relax = isotropic_response(g, k, &m);
    let f_at = |dl: f64| safe_yield(&(trial - relax * dl), st.gamma_p + dl, e_next, params);

    // Bracket the root of F along the correction path.
    let (mut lo, mut f_lo) = (0.0, f_trial);
    let mut hi = (f_trial / (3.0 * g)).max(1e-14);
    let mut f_hi = None;
    for _ in 0..200 {
        match f_at(hi) {
            Some(f) if f <= 0.0 => {
                f_hi = Some(f);
                break;
            }
            Some(f) => {
                lo = hi;
                f_lo = f;
                hi *= 2.0;
            }
            None => hi = lo + 0.5 * (hi - lo),
        }
    }
    let mut f_hi = f_hi.ok_or(Error::IntegrationFailure {
        iterations: 200,
        f_residual: f_lo,
        stress_residual: 0.0,
    })?;

    // Illinois regula falsi.
    let p_scale = p_tr.max(params.p0);
    let mut root_dl = hi;
    let mut side = 0;
    for _ in 0..200 {
        let mid = (lo * f_hi - hi * f_lo) / (f_hi - f_lo);
        let mid = if mid > lo && mid < hi { mid } else { 0.5 * (lo + hi) };
        let f_mid = f_at(mid).ok_or_else(|| Error::InvalidStressState("oracle correction left the model domain".into()))?;
        root_dl = mid;
        if f_mid.abs() <= 1e-13 * p_scale || hi - lo <= 1e-16 * hi {
            break;
        }
        if f_mid > 0.0 {
            lo = mid;
            f_lo = f_mid;
            if side == 1 {
                f_hi *= 0.5;
            }
            side = 1;
        } else {
            hi = mid;
            f_hi = f_mid;
            if side == -1 {
                f_lo *= 0.5;
            }
            side = -1;
        }
    }
    st.sigma = trial - relax * root_dl;
    st.gamma_p += root_dl;
    st.e = e_next;
    Ok((root_dl, m * root_dl))
}

/// Forward-Euler sub-stepping of the rate equations over `n_sub` equal substeps.
pub fn integrate_path_explicit_oracle(
    state: &MaterialState,
    d_eps: &PrincipalVec3,
    n_sub: usize,
    params: &WgParams,
) -> Result<StepResult> {
    if n_sub == 0 {
        return Err(Error::InvalidArgument("n_sub must be at least 1".into()));
    }
    state.validate()?;
    let d = *d_eps * (1.0 / n_sub as f64);
    let mut st = SubState {
        sigma: state.sigma,
        gamma_p: state.gamma_p(),
        e: state.e,
    };
    let mut d_lambda = 0.0;
    let mut d_eps_p = PrincipalVec3::ZERO;
    for _ in 0..n_sub {
        let (dl, dp) = substep(&mut st, &d, params)?;
        d_lambda += dl;
        d_eps_p += dp;
    }
    let p = st.sigma.sum() / 3.0;
    if !(p > 0.0) {
        return Err(Error::InvalidStressState(format!("mean stress {p} after oracle integration")));
    }
    let e_cs = critical_void_ratio(p, params)?;
    let dilatancy = dilatancy_coefficient(mobilized_friction(st.gamma_p, st.e, e_cs, params)?, st.e, e_cs, params)?;
    Ok(StepResult {
        d_sigma: st.sigma - state.sigma,
        d_eps_p,
        d_e: st.e - state.e,
        d_lambda,
        iterations: n_sub,
        plastic: d_lambda > 0.0,
        dilatancy,
        yield_value: yield_value(&st.sigma, st.gamma_p, st.e, params)?,
    })
}
