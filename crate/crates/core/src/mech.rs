//! Principal-space stress and strain algebra.
//!
//! All tensors are diagonal in the principal frame and stored as 3-vectors.
//! Compression is positive.

use serde::{Deserialize, Serialize};
use std::ops::{Add, AddAssign, Index, IndexMut, Mul, Neg, Sub};

use crate::error::{Error, Result};

/// Reference mean stress in kPa.
pub const P_REF: f64 = 1.0;

/// Relative threshold below which `q` is treated as zero.
pub const Q_DEGENERATE_REL: f64 = 1e-9;

/// Three principal components of a stress (kPa) or strain tensor.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PrincipalVec3(pub [f64; 3]);

impl PrincipalVec3 {
    pub const ZERO: Self = Self([0.0; 3]);

    pub const fn new(a: f64, b: f64, c: f64) -> Self {
        Self([a, b, c])
    }

    pub const fn splat(v: f64) -> Self {
        Self([v; 3])
    }

    pub fn sum(&self) -> f64 {
        self.0[0] + self.0[1] + self.0[2]
    }

    pub fn dot(&self, other: &Self) -> f64 {
        self.0[0] * other.0[0] + self.0[1] * other.0[1] + self.0[2] * other.0[2]
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.0.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    /// Deviatoric part `v - tr(v)/3`.
    pub fn deviator(&self) -> Self {
        let mean = self.sum() / 3.0;
        Self([self.0[0] - mean, self.0[1] - mean, self.0[2] - mean])
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self([f(self.0[0]), f(self.0[1]), f(self.0[2])])
    }

    pub fn as_array(&self) -> [f64; 3] {
        self.0
    }
}

impl From<[f64; 3]> for PrincipalVec3 {
    fn from(v: [f64; 3]) -> Self {
        Self(v)
    }
}

impl Index<usize> for PrincipalVec3 {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl IndexMut<usize> for PrincipalVec3 {
    fn index_mut(&mut self, i: usize) -> &mut f64 {
        &mut self.0[i]
    }
}

impl Add for PrincipalVec3 {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self([self.0[0] + o.0[0], self.0[1] + o.0[1], self.0[2] + o.0[2]])
    }
}

impl AddAssign for PrincipalVec3 {
    fn add_assign(&mut self, o: Self) {
        for i in 0..3 {
            self.0[i] += o.0[i];
        }
    }
}

impl Sub for PrincipalVec3 {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Self([self.0[0] - o.0[0], self.0[1] - o.0[1], self.0[2] - o.0[2]])
    }
}

impl Neg for PrincipalVec3 {
    type Output = Self;
    fn neg(self) -> Self {
        Self([-self.0[0], -self.0[1], -self.0[2]])
    }
}

impl Mul<f64> for PrincipalVec3 {
    type Output = Self;
    fn mul(self, c: f64) -> Self {
        Self([self.0[0] * c, self.0[1] * c, self.0[2] * c])
    }
}

impl Mul<PrincipalVec3> for f64 {
    type Output = PrincipalVec3;
    fn mul(self, v: PrincipalVec3) -> PrincipalVec3 {
        v * self
    }
}

/// Invariants of a principal stress state.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StressInvariants {
    /// Mean stress (kPa).
    pub p: f64,
    /// Von Mises equivalent shear stress (kPa).
    pub q: f64,
    /// Deviatoric stress (kPa).
    pub s: PrincipalVec3,
    pub j2: f64,
    pub j3: f64,
    /// Lode parameter: +1 in triaxial compression, -1 in triaxial extension.
    pub t: f64,
    /// Set when `q` is too small for the Lode parameter to be meaningful.
    pub degenerate: bool,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StrainInvariants {
    pub eps_v: f64,
    pub gamma: f64,
}

/// True when `q` is below the relative degeneracy threshold for mean stress `p`.
pub fn is_degenerate_q(q: f64, p: f64) -> bool {
    q < Q_DEGENERATE_REL * p.abs().max(P_REF)
}

pub fn stress_invariants(sigma: &PrincipalVec3) -> StressInvariants {
    let p = sigma.sum() / 3.0;
    let s = sigma.deviator();
    let ss = s.dot(&s);
    let q = (1.5 * ss).sqrt();
    let j2 = q * q / 3.0;
    let j3 = s[0] * s[1] * s[2];
    let degenerate = is_degenerate_q(q, p);
    let t = if degenerate {
        0.0
    } else {
        // t = J3/2 (3/J2)^{3/2} = 27 J3 / (2 q^3)
        (13.5 * j3 / (q * q * q)).clamp(-1.0, 1.0)
    };
    StressInvariants {
        p,
        q,
        s,
        j2,
        j3,
        t,
        degenerate,
    }
}

pub fn strain_invariants(eps: &PrincipalVec3) -> StrainInvariants {
    let eps_v = eps.sum();
    let dev = eps.deviator();
    StrainInvariants {
        eps_v,
        gamma: (2.0 / 3.0 * dev.dot(&dev)).sqrt(),
    }
}

/// Void ratio change for a volumetric strain increment (compression positive).
pub fn void_ratio_increment(e: f64, d_eps_v: f64) -> Result<f64> {
    if !(e > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "void ratio must be positive, got {e}"
        )));
    }
    Ok(-(1.0 + e) * d_eps_v)
}
