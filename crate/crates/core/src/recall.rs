//! Recall-mode simulation: a trained model drives its own state forward.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::arch::Model;
use crate::datagen::{cols, N_FEATURES, N_LABELS};
use crate::error::{Error, Result};
use crate::mech::{strain_invariants, stress_invariants, PrincipalVec3};
use crate::wg::{integrate_step, IntegratorTolerances, MaterialState, WgParams};

/// Strain-controlled loading program.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Driver {
    /// `d_eps = direction * magnitudes[k]` at step `k`.
    Proportional { direction: PrincipalVec3, magnitudes: Vec<f64> },
    /// `d_eps = (eps, eps, alpha * eps)`. The sign of `eps` makes the axial
    /// increment compressive; `alpha = -2` is undrained.
    Axisymmetric { alpha: f64, step: f64, n_steps: usize },
}

impl Driver {
    pub fn proportional(direction: PrincipalVec3, magnitude: f64, n_steps: usize) -> Result<Self> {
        let d = Driver::Proportional {
            direction,
            magnitudes: vec![magnitude; n_steps],
        };
        d.validate()?;
        Ok(d)
    }

    pub fn axisymmetric(alpha: f64, step: f64, n_steps: usize) -> Result<Self> {
        let d = Driver::Axisymmetric { alpha, step, n_steps };
        d.validate()?;
        Ok(d)
    }

    /// Axisymmetric driver whose increments have Euclidean norm `norm`.
    pub fn axisymmetric_with_norm(alpha: f64, norm: f64, n_steps: usize) -> Result<Self> {
        Self::axisymmetric(alpha, norm / (2.0 + alpha * alpha).sqrt(), n_steps)
    }

    pub fn undrained(norm: f64, n_steps: usize) -> Result<Self> {
        Self::axisymmetric_with_norm(-2.0, norm, n_steps)
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Driver::Proportional { direction, magnitudes } => {
                if !direction.is_finite() || (direction.norm() - 1.0).abs() > 1e-9 {
                    return Err(Error::InvalidArgument("proportional direction must be a unit vector".into()));
                }
                if magnitudes.iter().any(|&m| !(m > 0.0 && m.is_finite())) {
                    return Err(Error::InvalidArgument("step magnitudes must be positive".into()));
                }
            }
            Driver::Axisymmetric { alpha, step, .. } => {
                if !alpha.is_finite() {
                    return Err(Error::InvalidArgument("alpha must be finite".into()));
                }
                if !(*step > 0.0 && step.is_finite()) {
                    return Err(Error::InvalidArgument("axisymmetric step must be positive".into()));
                }
            }
        }
        Ok(())
    }

    pub fn n_steps(&self) -> usize {
        match self {
            Driver::Proportional { magnitudes, .. } => magnitudes.len(),
            Driver::Axisymmetric { n_steps, .. } => *n_steps,
        }
    }

    pub fn increment(&self, k: usize) -> PrincipalVec3 {
        match self {
            Driver::Proportional { direction, magnitudes } => *direction * magnitudes[k],
            Driver::Axisymmetric { alpha, step, .. } => {
                let eps = if *alpha < 0.0 { -step } else { *step };
                PrincipalVec3::new(eps, eps, alpha * eps)
            }
        }
    }
}

/// Derived quantities of one recorded state.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRow {
    pub step: usize,
    pub eps33: f64,
    pub p: f64,
    pub q: f64,
    pub eps_v: f64,
    pub gamma: f64,
    pub eps_vp: f64,
    pub gamma_p: f64,
    pub e: f64,
}

impl TrajectoryRow {
    pub fn of(step: usize, s: &MaterialState) -> Self {
        let si = stress_invariants(&s.sigma);
        let ei = strain_invariants(&s.eps);
        let pi = strain_invariants(&s.eps_p);
        Self {
            step,
            eps33: s.eps[2],
            p: si.p,
            q: si.q,
            eps_v: ei.eps_v,
            gamma: ei.gamma,
            eps_vp: pi.eps_v,
            gamma_p: pi.gamma,
            e: s.e,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub states: Vec<MaterialState>,
    pub rows: Vec<TrajectoryRow>,
    /// Why and where the path stopped early, if it did.
    pub truncated: Option<String>,
    /// Steps whose model inputs fell outside the training scaler range.
    pub out_of_range_steps: Vec<usize>,
}

impl Trajectory {
    fn start(init: MaterialState) -> Self {
        Self {
            states: vec![init],
            rows: vec![TrajectoryRow::of(0, &init)],
            truncated: None,
            out_of_range_steps: Vec::new(),
        }
    }

    fn push(&mut self, s: MaterialState) {
        self.rows.push(TrajectoryRow::of(self.states.len(), &s));
        self.states.push(s);
    }

    pub fn last(&self) -> &TrajectoryRow {
        self.rows.last().expect("trajectory holds its initial state")
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["step", "eps33", "p", "q", "eps_v", "gamma", "eps_vp", "gamma_p", "e"])?;
        for r in &self.rows {
            let mut rec = vec![r.step.to_string()];
            rec.extend([r.eps33, r.p, r.q, r.eps_v, r.gamma, r.eps_vp, r.gamma_p, r.e].iter().map(|v| format!("{v:.16e}")));
            w.write_record(rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn features_of(state: &MaterialState, d_eps: &PrincipalVec3) -> [f64; N_FEATURES] {
    let mut f = [0.0; N_FEATURES];
    f[cols::EPS].copy_from_slice(&state.eps.0);
    f[cols::SIG].copy_from_slice(&state.sigma.0);
    f[cols::E] = state.e;
    f[cols::EPS_P].copy_from_slice(&state.eps_p.0);
    f[cols::D_EPS].copy_from_slice(&d_eps.0);
    f
}

/// One additive recall update. Returns the new state and whether any input
/// lay outside the range the model was trained on.
pub fn recall_step(model: &Model, state: &MaterialState, d_eps: &PrincipalVec3) -> Result<(MaterialState, bool)> {
    let features = features_of(state, d_eps);
    let out_of_range = features
        .iter()
        .enumerate()
        .any(|(j, &v)| model.feature_scaler.apply_value(j, v).abs() > 1.0 + 1e-9);
    let y: [f64; N_LABELS] = model.predict(&features)?;
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("model prediction {y:?}")));
    }
    let pick = |r: std::ops::Range<usize>| PrincipalVec3::new(y[r.start], y[r.start + 1], y[r.start + 2]);
    let next = MaterialState {
        sigma: state.sigma + pick(cols::D_SIG),
        eps: state.eps + *d_eps,
        eps_p: state.eps_p + pick(cols::D_EPS_P),
        e: state.e + y[cols::D_E],
    };
    Ok((next, out_of_range))
}

/// Recall-mode path from an isotropic state; failures truncate the trajectory.
pub fn simulate(model: &Model, driver: &Driver, p_in: f64, e_in: f64) -> Result<Trajectory> {
    driver.validate()?;
    let init = MaterialState::isotropic(p_in, e_in);
    init.validate()?;
    let mut traj = Trajectory::start(init);
    for k in 0..driver.n_steps() {
        let state = *traj.states.last().expect("non-empty");
        match recall_step(model, &state, &driver.increment(k)) {
            Ok((next, oor)) => {
                if oor {
                    traj.out_of_range_steps.push(k + 1);
                }
                traj.push(next);
            }
            Err(e) => {
                traj.truncated = Some(format!("step {}: {e}", k + 1));
                break;
            }
        }
    }
    Ok(traj)
}

/// Same loading program integrated with the constitutive model itself.
pub fn ground_truth(driver: &Driver, p_in: f64, e_in: f64, params: &WgParams, tol: &IntegratorTolerances) -> Result<Trajectory> {
    driver.validate()?;
    let init = MaterialState::isotropic(p_in, e_in);
    init.validate()?;
    let mut traj = Trajectory::start(init);
    for k in 0..driver.n_steps() {
        let state = *traj.states.last().expect("non-empty");
        let d_eps = driver.increment(k);
        match integrate_step(&state, &d_eps, params, tol) {
            Ok(r) => traj.push(r.apply(&state, &d_eps)),
            Err(e) => {
                traj.truncated = Some(format!("step {}: {e}", k + 1));
                break;
            }
        }
    }
    Ok(traj)
}

pub const COMPARED: [&str; 5] = ["p", "q", "eps_vp", "gamma_p", "e"];

fn compared_values(r: &TrajectoryRow) -> [f64; 5] {
    [r.p, r.q, r.eps_vp, r.gamma_p, r.e]
}

/// Pointwise relative errors of a model trajectory against the truth.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub n: usize,
    pub length_mismatch: bool,
    /// `errors[k][i]`: quantity `COMPARED[i]` at step `k`.
    pub errors: Vec<[f64; 5]>,
    pub end_errors: [f64; 5],
    pub max_errors: [f64; 5],
    pub model: Vec<TrajectoryRow>,
    pub truth: Vec<TrajectoryRow>,
}

/// Relative error `|a - b| / max(|b|, 1e-3 max|b|)`; the floor keeps
/// quantities that start at zero (plastic strains) meaningful.
pub fn compare(model: &Trajectory, truth: &Trajectory) -> Comparison {
    let n = model.rows.len().min(truth.rows.len());
    let mut floor = [0.0_f64; 5];
    for r in &truth.rows[..n] {
        for (f, v) in floor.iter_mut().zip(compared_values(r)) {
            *f = f.max(1e-3 * v.abs());
        }
    }
    let errors: Vec<[f64; 5]> = (0..n)
        .map(|k| {
            let (a, b) = (compared_values(&model.rows[k]), compared_values(&truth.rows[k]));
            std::array::from_fn(|i| {
                let denom = b[i].abs().max(floor[i]);
                if denom > 0.0 {
                    (a[i] - b[i]).abs() / denom
                } else {
                    (a[i] - b[i]).abs()
                }
            })
        })
        .collect();
    let end_errors = errors.last().copied().unwrap_or([0.0; 5]);
    let max_errors = errors.iter().fold([0.0_f64; 5], |m, e| std::array::from_fn(|i| m[i].max(e[i])));
    Comparison {
        n,
        length_mismatch: model.rows.len() != truth.rows.len(),
        errors,
        end_errors,
        max_errors,
        model: model.rows[..n].to_vec(),
        truth: truth.rows[..n].to_vec(),
    }
}

impl Comparison {
    /// Columns: step, then model, truth and error for each compared quantity,
    /// then the per-step void ratio increments of both trajectories.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["step".to_string()];
        for q in COMPARED {
            header.extend([format!("{q}_model"), format!("{q}_truth"), format!("{q}_rel_err")]);
        }
        header.extend(["de_model".to_string(), "de_truth".to_string()]);
        w.write_record(&header)?;
        for k in 0..self.n {
            let (a, b) = (compared_values(&self.model[k]), compared_values(&self.truth[k]));
            let mut rec = vec![k.to_string()];
            for i in 0..5 {
                rec.extend([a[i], b[i], self.errors[k][i]].iter().map(|v| format!("{v:.16e}")));
            }
            let de = |rows: &[TrajectoryRow]| if k == 0 { 0.0 } else { rows[k].e - rows[k - 1].e };
            rec.push(format!("{:.16e}", de(&self.model)));
            rec.push(format!("{:.16e}", de(&self.truth)));
            w.write_record(rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::{assemble_default, ArchKind};
    use crate::nn::MlpParams;

    fn frozen_model() -> Model {
        let mut m = assemble_default(ArchKind::Parallel, 0).unwrap();
        for s in m.subnets.values_mut() {
            s.params = MlpParams::zeros(&s.spec);
        }
        // Zero normalized output must denormalize to a zero increment.
        m.label_scaler.min = vec![-1.0; N_LABELS];
        m.label_scaler.max = vec![1.0; N_LABELS];
        m
    }

    #[test]
    fn frozen_model_only_accumulates_strain() {
        let m = frozen_model();
        let s0 = MaterialState::isotropic(100.0, 0.6);
        let d = PrincipalVec3::new(1e-4, -2e-4, 3e-4);
        let (s1, _) = recall_step(&m, &s0, &d).unwrap();
        assert_eq!(s1.sigma, s0.sigma);
        assert_eq!(s1.eps_p, s0.eps_p);
        assert_eq!(s1.e, s0.e);
        assert_eq!(s1.eps, d);
    }

    #[test]
    fn undrained_increments_are_isochoric() {
        let d = Driver::axisymmetric(-2.0, 1e-3, 5).unwrap();
        for k in 0..5 {
            let inc = d.increment(k);
            assert_eq!(inc.sum(), 0.0);
            assert!((strain_invariants(&inc).gamma - 2e-3).abs() < 1e-15);
            assert!(inc[2] > 0.0);
        }
        let d = Driver::axisymmetric_with_norm(-1000.0, 8e-4, 1).unwrap();
        assert!((d.increment(0).norm() - 8e-4).abs() < 1e-15);
        assert!(d.increment(0)[2] > 0.0);
    }

    #[test]
    fn zero_steps_gives_initial_state() {
        let d = Driver::axisymmetric(-2.0, 1e-3, 0).unwrap();
        let t = simulate(&frozen_model(), &d, 200.0, 0.7).unwrap();
        assert_eq!(t.states.len(), 1);
        let g = ground_truth(&d, 200.0, 0.7, &WgParams::OTTAWA, &IntegratorTolerances::default()).unwrap();
        assert_eq!(g.rows, t.rows);
    }

    #[test]
    fn invalid_drivers_are_rejected() {
        assert!(Driver::axisymmetric(f64::NAN, 1e-3, 3).is_err());
        assert!(Driver::axisymmetric(-2.0, 0.0, 3).is_err());
        assert!(Driver::proportional(PrincipalVec3::new(1.0, 1.0, 0.0), 1e-3, 3).is_err());
    }

    #[test]
    fn undrained_truth_keeps_void_ratio() {
        let d = Driver::undrained(8e-4, 60).unwrap();
        let t = ground_truth(&d, 225.0, 0.62, &WgParams::OTTAWA, &IntegratorTolerances::default()).unwrap();
        assert!(t.truncated.is_none());
        assert!(t.states.iter().all(|s| (s.e - 0.62).abs() <= 1e-14));
        let again = ground_truth(&d, 225.0, 0.62, &WgParams::OTTAWA, &IntegratorTolerances::default()).unwrap();
        let c = compare(&again, &t);
        assert_eq!(c.max_errors, [0.0; 5]);
        assert!(!c.length_mismatch);
    }

    #[test]
    fn comparison_uses_shorter_prefix() {
        let d = Driver::undrained(8e-4, 10).unwrap();
        let t = ground_truth(&d, 225.0, 0.62, &WgParams::OTTAWA, &IntegratorTolerances::default()).unwrap();
        let mut short = t.clone();
        short.rows.truncate(4);
        short.states.truncate(4);
        let c = compare(&short, &t);
        assert_eq!(c.n, 4);
        assert!(c.length_mismatch);
        let mut buf = Vec::new();
        c.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 5);
        assert!(text.lines().next().unwrap().ends_with("de_model,de_truth"));
    }
}
