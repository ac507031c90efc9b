//! Backward-Euler return mapping in principal space.
//!
//! Unknowns are the end-of-step principal stresses and the plastic
//! multiplier. Moduli, the yield function and the flow direction are all
//! evaluated at the end of the step. The void ratio update is explicit
//! because the total strain increment is prescribed.

use serde::{Deserialize, Serialize};

use super::{MaterialState, StepResult, WgParams};
use crate::error::{Error, Result};
use crate::mech::{is_degenerate_q, stress_invariants, void_ratio_increment, PrincipalVec3};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntegratorTolerances {
    /// Yield residual tolerance relative to `max(p, p0)`.
    pub f_rel: f64,
    /// Stress residual tolerance relative to `max(|sigma|, p0)`.
    pub sig_rel: f64,
    /// Trial yield value (kPa) at or below which the step is elastic.
    pub f_abs: f64,
    pub max_iter: usize,
}

impl Default for IntegratorTolerances {
    fn default() -> Self {
        Self {
            f_rel: 1e-9,
            sig_rel: 1e-10,
            f_abs: 1e-9,
            max_iter: 50,
        }
    }
}

/// Everything the Newton iteration needs at one candidate `(sigma, d_lambda)`.
struct Local {
    residual: [f64; 4],
    jacobian: [[f64; 4]; 4],
    m: PrincipalVec3,
    n: f64,
    p: f64,
}

/// Fixed data of one step.
struct StepData<'a> {
    params: &'a WgParams,
    sigma_n: PrincipalVec3,
    d_eps: PrincipalVec3,
    gamma_p_n: f64,
    e_new: f64,
    /// `G = shear_factor * sqrt(p)` at the end-of-step void ratio.
    shear_factor: f64,
    r: f64,
}

impl StepData<'_> {
    /// Isotropic elastic response `C(p) : v`.
    fn elastic(&self, p: f64, v: &PrincipalVec3) -> PrincipalVec3 {
        let g = self.shear_factor * p.sqrt();
        let k = self.r * g;
        v.deviator() * (2.0 * g) + PrincipalVec3::splat(k * v.sum())
    }

    fn lame(&self, p: f64) -> (f64, f64) {
        let g = self.shear_factor * p.sqrt();
        (self.r * g - 2.0 * g / 3.0, g)
    }

    /// Residuals and analytic Jacobian at `(sigma, d_lambda)`.
    fn evaluate(&self, sigma: &PrincipalVec3, d_lambda: f64) -> Result<Local> {
        let prm = self.params;
        let inv = stress_invariants(sigma);
        let p = inv.p;
        if !(p > 0.0) {
            return Err(Error::InvalidStressState(format!("mean stress {p} during return mapping")));
        }
        if is_degenerate_q(inv.q, p) {
            return Err(Error::InvalidStressState("return mapping reached the cone apex".into()));
        }
        let q = inv.q;
        let s = inv.s;
        let gamma = self.gamma_p_n + d_lambda;
        let e = self.e_new;

        // Hardening chain and its derivatives with respect to p and gamma.
        let e_cs = prm.e_cs0 * (-(p / prm.h).powf(prm.n)).exp();
        let de_cs_dp = -e_cs * prm.n * (p / prm.h).powf(prm.n - 1.0) / prm.h;
        let ratio = e / e_cs;
        let frac = gamma / (prm.a + gamma);
        let sin_phi = ratio.powf(-prm.beta) * frac * prm.sin_phi_cs;
        if !(0.0..1.0).contains(&sin_phi) {
            return Err(Error::InvalidStressState(format!("mobilized friction {sin_phi} outside [0, 1)")));
        }
        let dsin_de_cs = prm.beta * sin_phi / e_cs;
        let dsin_dgamma = ratio.powf(-prm.beta) * prm.sin_phi_cs * prm.a / (prm.a + gamma).powi(2);

        let a_dil = ratio.powf(prm.alpha_wg) * prm.sin_phi_cs;
        let da_de_cs = -prm.alpha_wg * a_dil / e_cs;
        let den = 1.0 - a_dil * sin_phi;
        if den.abs() < 1e-12 {
            return Err(Error::InvalidStressState("dilatancy denominator vanishes".into()));
        }
        let n = (sin_phi - a_dil) / den;
        let dn_dsin = (1.0 - a_dil * a_dil) / (den * den);
        let dn_da = (sin_phi * sin_phi - 1.0) / (den * den);
        let dn_de_cs = dn_dsin * dsin_de_cs + dn_da * da_de_cs;
        let dn_dp = dn_de_cs * de_cs_dp;
        let dn_dgamma = dn_dsin * dsin_dgamma;

        let t = inv.t;
        let mu = prm.mu;
        let m_tc = 6.0 * sin_phi / (3.0 - sin_phi);
        let dmtc_dsin = 18.0 / (3.0 - sin_phi).powi(2);
        let lode_den = (1.0 + mu) - (1.0 - mu) * t;
        let m_fric = 2.0 * mu * m_tc / lode_den;
        let dm_dt = m_fric * (1.0 - mu) / lode_den;
        let dm_dmtc = 2.0 * mu / lode_den;
        let dm_dp = dm_dmtc * dmtc_dsin * dsin_de_cs * de_cs_dp;
        let dm_dgamma = dm_dmtc * dmtc_dsin * dsin_dgamma;

        // Unit deviatoric direction n_i = 3 s_i / (2 q) and the Lode gradient.
        let nd = s * (1.5 / q);
        let pair = s[1] * s[2] + s[0] * s[2] + s[0] * s[1];
        let dj3 = PrincipalVec3::new(
            s[1] * s[2] - pair / 3.0,
            s[0] * s[2] - pair / 3.0,
            s[0] * s[1] - pair / 3.0,
        );
        let dt = dj3 * (13.5 / (q * q * q)) - nd * (3.0 * t / q);

        let m = nd - PrincipalVec3::splat(n / 3.0);
        let v = self.d_eps - m * d_lambda;
        let stress_inc = self.elastic(p, &v);
        let r_sigma = *sigma - self.sigma_n - stress_inc;
        let r_f = q - m_fric * p;

        let (lam, g) = self.lame(p);
        // dm_k / dsigma_j
        let mut dm = [[0.0; 3]; 3];
        for k in 0..3 {
            for j in 0..3 {
                let delta = if k == j { 1.0 } else { 0.0 };
                dm[k][j] = 1.5 / q * (delta - 1.0 / 3.0) - nd[k] * nd[j] / q - dn_dp / 9.0;
            }
        }
        let dm_dlambda = -dn_dgamma / 3.0;

        let mut jac = [[0.0; 4]; 4];
        for i in 0..3 {
            for j in 0..3 {
                // Pressure dependence of the moduli: both scale with sqrt(p).
                let mut d = stress_inc[i] / (6.0 * p);
                // Through the elastic strain: L_ik (-d_lambda dm_k/dsigma_j).
                for k in 0..3 {
                    let l_ik = lam + if i == k { 2.0 * g } else { 0.0 };
                    d -= l_ik * d_lambda * dm[k][j];
                }
                jac[i][j] = if i == j { 1.0 } else { 0.0 } - d;
            }
            let mut dl = 0.0;
            for k in 0..3 {
                let l_ik = lam + if i == k { 2.0 * g } else { 0.0 };
                dl += l_ik * (m[k] + d_lambda * dm_dlambda);
            }
            jac[i][3] = dl;
        }
        for j in 0..3 {
            jac[3][j] = nd[j] - m_fric / 3.0 - p * (dm_dt * dt[j] + dm_dp / 3.0);
        }
        jac[3][3] = -p * dm_dgamma;

        Ok(Local {
            residual: [r_sigma[0], r_sigma[1], r_sigma[2], r_f],
            jacobian: jac,
            m,
            n,
            p,
        })
    }

    fn converged(&self, tol: &IntegratorTolerances, sigma: &PrincipalVec3, local: &Local) -> bool {
        let r = &local.residual;
        let rs = (r[0] * r[0] + r[1] * r[1] + r[2] * r[2]).sqrt();
        r[3].abs() <= tol.f_rel * local.p.max(self.params.p0)
            && rs <= tol.sig_rel * sigma.norm().max(self.params.p0)
    }

    /// Scaled residual norm used as the line-search merit.
    fn merit(&self, sigma: &PrincipalVec3, local: &Local) -> f64 {
        let r = &local.residual;
        let ss = sigma.norm().max(self.params.p0);
        let sf = local.p.max(self.params.p0);
        ((r[0] * r[0] + r[1] * r[1] + r[2] * r[2]) / (ss * ss) + r[3] * r[3] / (sf * sf)).sqrt()
    }

    /// Finite-difference Jacobian of the residuals, used when the analytic one fails.
    fn fd_jacobian(&self, sigma: &PrincipalVec3, d_lambda: f64) -> Result<[[f64; 4]; 4]> {
        let mut jac = [[0.0; 4]; 4];
        for j in 0..4 {
            let (mut sp, mut sm) = (*sigma, *sigma);
            let (mut lp, mut lm) = (d_lambda, d_lambda);
            let h;
            if j < 3 {
                h = 1e-7 * sigma[j].abs().max(self.params.p0);
                sp[j] += h;
                sm[j] -= h;
            } else {
                h = 1e-7 * d_lambda.abs().max(1e-8);
                lp += h;
                lm = (lm - h).max(0.0);
            }
            let fp = self.evaluate(&sp, lp)?.residual;
            let fm = self.evaluate(&sm, lm)?.residual;
            let width = if j < 3 { 2.0 * h } else { lp - lm };
            for i in 0..4 {
                jac[i][j] = (fp[i] - fm[i]) / width;
            }
        }
        Ok(jac)
    }
}

/// Gaussian elimination with partial pivoting on a small dense system.
pub(crate) fn solve_dense<const N: usize>(mut a: [[f64; N]; N], mut b: [f64; N]) -> Option<[f64; N]> {
    for col in 0..N {
        let piv = (col..N).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if !(a[piv][col].abs() > 1e-300) || !a[piv][col].is_finite() {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..N {
            let f = a[row][col] / a[col][col];
            for k in col..N {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = [0.0; N];
    for row in (0..N).rev() {
        let mut acc = b[row];
        for k in row + 1..N {
            acc -= a[row][k] * x[k];
        }
        x[row] = acc / a[row][row];
    }
    x.iter().all(|v| v.is_finite()).then_some(x)
}

/// Implicit elastic predictor. With `K = c sqrt(p)` the backward-Euler
/// volumetric update `p = p_n + c sqrt(p) d_eps_v` is a quadratic in `sqrt(p)`
/// whose positive root is taken; the result is always positive.
fn elastic_trial(data: &StepData<'_>) -> (PrincipalVec3, f64) {
    let p_n = data.sigma_n.sum() / 3.0;
    let c = data.r * data.shear_factor;
    let dv = data.d_eps.sum();
    let x = 0.5 * (c * dv + (c * c * dv * dv + 4.0 * p_n).sqrt());
    let p = x * x;
    let g = data.shear_factor * x;
    let s = data.sigma_n.deviator() + data.d_eps.deviator() * (2.0 * g);
    (s + PrincipalVec3::splat(p), p)
}

struct Solution {
    sigma: PrincipalVec3,
    d_lambda: f64,
    iterations: usize,
    m: PrincipalVec3,
    n: f64,
    f: f64,
}

enum JacobianKind {
    Analytic,
    FiniteDifference,
}

fn newton(
    data: &StepData<'_>,
    tol: &IntegratorTolerances,
    sigma0: PrincipalVec3,
    kind: JacobianKind,
) -> std::result::Result<Solution, (f64, f64)> {
    let mut sigma = sigma0;
    let mut d_lambda = 0.0;
    let mut local = match data.evaluate(&sigma, d_lambda) {
        Ok(l) => l,
        Err(_) => return Err((f64::NAN, f64::NAN)),
    };
    let residuals = |l: &Local| {
        let r = &l.residual;
        (r[3].abs(), (r[0] * r[0] + r[1] * r[1] + r[2] * r[2]).sqrt())
    };
    for it in 0..tol.max_iter {
        if data.converged(tol, &sigma, &local) {
            return Ok(Solution {
                sigma,
                d_lambda,
                iterations: it,
                m: local.m,
                n: local.n,
                f: local.residual[3],
            });
        }
        let jac = match kind {
            JacobianKind::Analytic => local.jacobian,
            JacobianKind::FiniteDifference => match data.fd_jacobian(&sigma, d_lambda) {
                Ok(j) => j,
                Err(_) => return Err(residuals(&local)),
            },
        };
        let rhs = local.residual.map(|v| -v);
        let Some(dx) = solve_dense(jac, rhs) else {
            return Err(residuals(&local));
        };
        let merit0 = data.merit(&sigma, &local);
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..30 {
            let cand_sigma = sigma + PrincipalVec3::new(dx[0], dx[1], dx[2]) * step;
            let cand_lambda = (d_lambda + step * dx[3]).max(0.0);
            if let Ok(cand) = data.evaluate(&cand_sigma, cand_lambda) {
                let merit = data.merit(&cand_sigma, &cand);
                if merit.is_finite() && (merit < merit0 * (1.0 - 1e-4 * step) || merit < 1e-14) {
                    accepted = Some((cand_sigma, cand_lambda, cand));
                    break;
                }
            }
            step *= 0.5;
        }
        let Some((s, l, c)) = accepted else {
            return Err(residuals(&local));
        };
        sigma = s;
        d_lambda = l;
        local = c;
    }
    if data.converged(tol, &sigma, &local) {
        return Ok(Solution {
            sigma,
            d_lambda,
            iterations: tol.max_iter,
            m: local.m,
            n: local.n,
            f: local.residual[3],
        });
    }
    Err(residuals(&local))
}

/// For a fixed multiplier, solve the stress residual alone.
fn solve_stress(data: &StepData<'_>, tol: &IntegratorTolerances, start: PrincipalVec3, d_lambda: f64) -> Option<(PrincipalVec3, Local)> {
    let mut sigma = start;
    let mut local = data.evaluate(&sigma, d_lambda).ok()?;
    for _ in 0..tol.max_iter {
        let r = &local.residual;
        let rs = (r[0] * r[0] + r[1] * r[1] + r[2] * r[2]).sqrt();
        if rs <= 0.1 * tol.sig_rel * sigma.norm().max(data.params.p0) {
            return Some((sigma, local));
        }
        let mut a = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                a[i][j] = local.jacobian[i][j];
            }
        }
        let dx = solve_dense(a, [-r[0], -r[1], -r[2]])?;
        let mut step = 1.0;
        let mut next = None;
        for _ in 0..30 {
            let cand = sigma + PrincipalVec3::from(dx) * step;
            if let Ok(l) = data.evaluate(&cand, d_lambda) {
                let rc = &l.residual;
                let rsc = (rc[0] * rc[0] + rc[1] * rc[1] + rc[2] * rc[2]).sqrt();
                if rsc < rs {
                    next = Some((cand, l));
                    break;
                }
            }
            step *= 0.5;
        }
        let (s, l) = next?;
        sigma = s;
        local = l;
    }
    None
}

/// Bisection on the plastic multiplier with a nested stress solve.
fn bisection(data: &StepData<'_>, tol: &IntegratorTolerances, trial: PrincipalVec3) -> Option<Solution> {
    let scale = data.d_eps.deviator().norm().max(1e-12);
    let mut lo = 0.0;
    let mut lo_sigma = trial;
    let mut hi = scale;
    let mut bracketed = false;
    for _ in 0..40 {
        match solve_stress(data, tol, lo_sigma, hi) {
            Some((_, l)) if l.residual[3] < 0.0 => {
                bracketed = true;
                break;
            }
            Some((s, _)) => {
                lo = hi;
                lo_sigma = s;
                hi *= 2.0;
            }
            None => hi = 0.5 * (lo + hi),
        }
    }
    if !bracketed {
        return None;
    }
    let mut iterations = 0;
    for _ in 0..200 {
        iterations += 1;
        let mid = 0.5 * (lo + hi);
        let (s, l) = solve_stress(data, tol, lo_sigma, mid)?;
        if data.converged(tol, &s, &l) {
            return Some(Solution {
                sigma: s,
                d_lambda: mid,
                iterations,
                m: l.m,
                n: l.n,
                f: l.residual[3],
            });
        }
        if l.residual[3] > 0.0 {
            lo = mid;
            lo_sigma = s;
        } else {
            hi = mid;
        }
        if hi - lo <= f64::EPSILON * hi {
            break;
        }
    }
    None
}

/// Integrates one strain increment `d_eps` from `state`.
pub fn integrate_step(
    state: &MaterialState,
    d_eps: &PrincipalVec3,
    params: &WgParams,
    tol: &IntegratorTolerances,
) -> Result<StepResult> {
    state.validate()?;
    if !d_eps.is_finite() {
        return Err(Error::InvalidArgument("non-finite strain increment".into()));
    }
    let d_e = void_ratio_increment(state.e, d_eps.sum())?;
    let e_new = state.e + d_e;
    if !(e_new > 0.0 && e_new < 2.17) {
        return Err(Error::InvalidStressState(format!("void ratio {e_new} outside the model range")));
    }
    let data = StepData {
        params,
        sigma_n: state.sigma,
        d_eps: *d_eps,
        gamma_p_n: state.gamma_p(),
        e_new,
        shear_factor: params.shear_density_factor(e_new) * params.p0.sqrt(),
        r: params.bulk_shear_ratio(),
    };

    let (trial, p_trial) = elastic_trial(&data);
    let f_trial = super::yield_value(&trial, data.gamma_p_n, e_new, params)?;
    if f_trial <= tol.f_abs {
        let n = super::dilatancy_coefficient(
            super::mobilized_friction(data.gamma_p_n, e_new, super::critical_void_ratio(p_trial, params)?, params)?,
            e_new,
            super::critical_void_ratio(p_trial, params)?,
            params,
        )?;
        return Ok(StepResult {
            d_sigma: trial - state.sigma,
            d_eps_p: PrincipalVec3::ZERO,
            d_e,
            d_lambda: 0.0,
            iterations: 0,
            plastic: false,
            dilatancy: n,
            yield_value: f_trial,
        });
    }

    let solution = match newton(&data, tol, trial, JacobianKind::Analytic) {
        Ok(s) => s,
        Err(_) => match newton(&data, tol, trial, JacobianKind::FiniteDifference) {
            Ok(s) => s,
            Err(last) => match bisection(&data, tol, trial) {
                Some(s) => s,
                None => {
                    return Err(Error::IntegrationFailure {
                        iterations: tol.max_iter,
                        f_residual: last.0,
                        stress_residual: last.1,
                    })
                }
            },
        },
    };
    let p_new = solution.sigma.sum() / 3.0;
    if !(p_new > 0.0) {
        return Err(Error::InvalidStressState(format!("mean stress {p_new} after return mapping")));
    }
    if !(solution.d_lambda > 0.0) {
        // The trial state was outside the surface, so a converged zero
        // multiplier means the return collapsed onto the apex.
        return Err(Error::InvalidStressState("return mapping produced a zero multiplier".into()));
    }
    Ok(StepResult {
        d_sigma: solution.sigma - state.sigma,
        d_eps_p: solution.m * solution.d_lambda,
        d_e,
        d_lambda: solution.d_lambda,
        iterations: solution.iterations,
        plastic: true,
        dilatancy: solution.n,
        yield_value: solution.f,
    })
}
