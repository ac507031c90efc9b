//! WG elasto-plastic model for sands.
//!
//! Hypo-elasticity with pressure- and density-dependent moduli, a
//! Mohr-Coulomb type yield surface `F = q - M p`, a non-associated plastic
//! potential `P = q - N p` built on Rowe's stress-dilatancy, and hardening
//! through the equivalent plastic shear strain and the void ratio.

mod integrator;
mod oracle;
mod triaxial;

pub use integrator::{integrate_step, IntegratorTolerances};
pub use oracle::integrate_path_explicit_oracle;
pub use triaxial::{drained_triaxial, TriaxialPoint};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mech::{stress_invariants, strain_invariants, PrincipalVec3, P_REF};

/// Calibration constants of the WG model.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WgParams {
    /// Reference shear modulus (kPa).
    pub g0: f64,
    pub nu: f64,
    pub mu: f64,
    pub sin_phi_cs: f64,
    pub beta: f64,
    pub a: f64,
    pub e_cs0: f64,
    /// Pressure constant of the critical state line (kPa).
    pub h: f64,
    pub n: f64,
    /// Exponent of the void ratio ratio in the dilatancy law.
    pub alpha_wg: f64,
    /// Reference mean stress (kPa).
    pub p0: f64,
}

impl WgParams {
    /// Ottawa sand calibration.
    pub const OTTAWA: WgParams = WgParams {
        g0: 900.0,
        nu: 0.3,
        mu: 0.8,
        sin_phi_cs: 0.53,
        beta: 1.3,
        a: 8.0e-3,
        e_cs0: 0.74,
        h: 5.65e5,
        n: 0.4,
        alpha_wg: 1.5,
        p0: P_REF,
    };

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("g0", self.g0),
            ("mu", self.mu),
            ("beta", self.beta),
            ("a", self.a),
            ("e_cs0", self.e_cs0),
            ("h", self.h),
            ("n", self.n),
            ("alpha_wg", self.alpha_wg),
            ("p0", self.p0),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::InvalidArgument(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.nu > 0.0 && self.nu < 0.5) {
            return Err(Error::InvalidArgument(format!("nu must lie in (0, 0.5), got {}", self.nu)));
        }
        if !(self.sin_phi_cs > 0.0 && self.sin_phi_cs < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "sin_phi_cs must lie in (0, 1), got {}",
                self.sin_phi_cs
            )));
        }
        Ok(())
    }

    /// Bulk-to-shear modulus ratio `R`.
    pub fn bulk_shear_ratio(&self) -> f64 {
        2.0 * (1.0 + self.nu) / (3.0 * (1.0 - 2.0 * self.nu))
    }

    /// Density factor of the shear modulus, `G = factor * sqrt(p p0)`.
    pub(crate) fn shear_density_factor(&self, e: f64) -> f64 {
        self.g0 * (2.17 - e) / (1.0 + e)
    }
}

impl Default for WgParams {
    fn default() -> Self {
        Self::OTTAWA
    }
}

/// Principal-space state of a material point.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaterialState {
    pub sigma: PrincipalVec3,
    pub eps: PrincipalVec3,
    pub eps_p: PrincipalVec3,
    pub e: f64,
}

impl MaterialState {
    /// Isotropic virgin state at mean stress `p` and void ratio `e`.
    pub fn isotropic(p: f64, e: f64) -> Self {
        Self {
            sigma: PrincipalVec3::splat(p),
            eps: PrincipalVec3::ZERO,
            eps_p: PrincipalVec3::ZERO,
            e,
        }
    }

    /// Equivalent plastic shear strain of the accumulated plastic strain.
    pub fn gamma_p(&self) -> f64 {
        strain_invariants(&self.eps_p).gamma
    }

    pub fn mean_stress(&self) -> f64 {
        self.sigma.sum() / 3.0
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma.is_finite() && self.eps.is_finite() && self.eps_p.is_finite() && self.e.is_finite()) {
            return Err(Error::InvalidStressState("non-finite state component".into()));
        }
        if !(self.e > 0.0) {
            return Err(Error::InvalidStressState(format!("void ratio must be positive, got {}", self.e)));
        }
        let p = self.mean_stress();
        if !(p > 0.0) {
            return Err(Error::InvalidStressState(format!("mean stress must be positive, got {p}")));
        }
        Ok(())
    }
}

/// Outcome of one strain-controlled integration step.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepResult {
    pub d_sigma: PrincipalVec3,
    pub d_eps_p: PrincipalVec3,
    pub d_e: f64,
    /// Plastic multiplier increment; zero exactly when the step is elastic.
    pub d_lambda: f64,
    pub iterations: usize,
    pub plastic: bool,
    /// Dilatancy coefficient at the end of the step.
    pub dilatancy: f64,
    /// Yield function value at the end of the step (kPa).
    pub yield_value: f64,
}

impl StepResult {
    /// State after applying this result with strain increment `d_eps`.
    pub fn apply(&self, state: &MaterialState, d_eps: &PrincipalVec3) -> MaterialState {
        MaterialState {
            sigma: state.sigma + self.d_sigma,
            eps: state.eps + *d_eps,
            eps_p: state.eps_p + self.d_eps_p,
            e: state.e + self.d_e,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ElasticModuli {
    /// Tangent shear modulus (kPa).
    pub g: f64,
    /// Bulk-to-shear ratio.
    pub r: f64,
    /// Tangent bulk modulus (kPa).
    pub k: f64,
}

pub fn elastic_moduli(p: f64, e: f64, params: &WgParams) -> Result<ElasticModuli> {
    if !(p > 0.0) {
        return Err(Error::InvalidStressState(format!("mean stress must be positive, got {p}")));
    }
    let g = params.shear_density_factor(e) * (p * params.p0).sqrt();
    let r = params.bulk_shear_ratio();
    Ok(ElasticModuli { g, r, k: r * g })
}

pub fn critical_void_ratio(p: f64, params: &WgParams) -> Result<f64> {
    if !(p > 0.0) {
        return Err(Error::InvalidStressState(format!("mean stress must be positive, got {p}")));
    }
    Ok(params.e_cs0 * (-(p / params.h).powf(params.n)).exp())
}

/// Mobilized friction `sin(phi)` from the equivalent plastic shear strain and density state.
pub fn mobilized_friction(gamma_p: f64, e: f64, e_cs: f64, params: &WgParams) -> Result<f64> {
    if !(gamma_p >= 0.0) {
        return Err(Error::InvalidArgument(format!("gamma_p must be non-negative, got {gamma_p}")));
    }
    if !(e > 0.0 && e_cs > 0.0) {
        return Err(Error::InvalidArgument(format!("void ratios must be positive, got e={e}, e_cs={e_cs}")));
    }
    if gamma_p.is_infinite() {
        return Ok((e / e_cs).powf(-params.beta) * params.sin_phi_cs);
    }
    Ok((e / e_cs).powf(-params.beta) * gamma_p / (params.a + gamma_p) * params.sin_phi_cs)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FrictionCoefficient {
    pub m: f64,
    /// Friction coefficient in triaxial compression.
    pub m_tc: f64,
}

pub fn friction_coefficient(sin_phi: f64, t: f64, params: &WgParams) -> Result<FrictionCoefficient> {
    if !(0.0..1.0).contains(&sin_phi) {
        return Err(Error::InvalidArgument(format!("sin_phi must lie in [0, 1), got {sin_phi}")));
    }
    if !(-1.0..=1.0).contains(&t) {
        return Err(Error::InvalidArgument(format!("Lode parameter must lie in [-1, 1], got {t}")));
    }
    let m_tc = 6.0 * sin_phi / (3.0 - sin_phi);
    let mu = params.mu;
    Ok(FrictionCoefficient {
        m: 2.0 * mu * m_tc / ((1.0 + mu) - (1.0 - mu) * t),
        m_tc,
    })
}

pub fn dilatancy_coefficient(sin_phi: f64, e: f64, e_cs: f64, params: &WgParams) -> Result<f64> {
    if !(e > 0.0 && e_cs > 0.0) {
        return Err(Error::InvalidArgument(format!("void ratios must be positive, got e={e}, e_cs={e_cs}")));
    }
    let a = (e / e_cs).powf(params.alpha_wg) * params.sin_phi_cs;
    let den = 1.0 - a * sin_phi;
    if den.abs() < 1e-12 {
        return Err(Error::InvalidArgument(format!(
            "dilatancy denominator vanishes (sin_phi={sin_phi}, e/e_cs={})",
            e / e_cs
        )));
    }
    Ok((sin_phi - a) / den)
}

pub fn yield_value(sigma: &PrincipalVec3, gamma_p: f64, e: f64, params: &WgParams) -> Result<f64> {
    let inv = stress_invariants(sigma);
    let e_cs = critical_void_ratio(inv.p, params)?;
    let sin_phi = mobilized_friction(gamma_p, e, e_cs, params)?;
    let fc = friction_coefficient(sin_phi, inv.t, params)?;
    Ok(inv.q - fc.m * inv.p)
}

/// Gradient of the plastic potential `P = q - N p` with respect to stress.
pub fn plastic_flow_direction(sigma: &PrincipalVec3, n: f64) -> Result<PrincipalVec3> {
    let inv = stress_invariants(sigma);
    if inv.degenerate {
        return Err(Error::InvalidStressState(format!(
            "flow direction undefined at q = {:.3e} (p = {:.3e})",
            inv.q, inv.p
        )));
    }
    Ok(inv.s * (1.5 / inv.q) - PrincipalVec3::splat(n / 3.0))
}
