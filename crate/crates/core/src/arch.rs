//! Surrogate architectures built from sub-networks.
//!
//! All three map the 13 normalized features to the 7 normalized labels
//! `(dsig1..3, depsp1..3, de)`. The parallel model runs three independent
//! subnets, the serial model feeds the predicted internal-variable
//! increments into the stress subnet, and the EPNN replaces the stress
//! subnet by a secant bulk modulus subnet plus a trainable shear-to-bulk
//! ratio `r`, reconstructing `dsig = C_sec (deps - deps_p)` in kPa.

use std::collections::BTreeMap;

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::datagen::{cols, splitmix64, N_FEATURES, N_LABELS};
use crate::error::{Error, Result};
use crate::nn::{
    backward, compare_gradients, forward, loss, loss_grad, residual_signature, ForwardCache, GradCheckReport, LossKind, MlpParams,
    MlpSpec, ParamSet, Scaler,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ArchKind {
    Parallel,
    Serial,
    Epnn,
}

impl ArchKind {
    pub const ALL: [ArchKind; 3] = [ArchKind::Parallel, ArchKind::Serial, ArchKind::Epnn];

    pub fn roles(self) -> [SubnetRole; 3] {
        match self {
            ArchKind::Parallel | ArchKind::Serial => [SubnetRole::VoidRatio, SubnetRole::PlasticStrain, SubnetRole::Stress],
            ArchKind::Epnn => [SubnetRole::VoidRatio, SubnetRole::PlasticStrain, SubnetRole::Elasticity],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ArchKind::Parallel => "parallel",
            ArchKind::Serial => "serial",
            ArchKind::Epnn => "epnn",
        }
    }
}

impl std::fmt::Display for ArchKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for ArchKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "parallel" => Ok(ArchKind::Parallel),
            "serial" => Ok(ArchKind::Serial),
            "epnn" => Ok(ArchKind::Epnn),
            other => Err(Error::InvalidArgument(format!("unknown architecture {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubnetRole {
    VoidRatio,
    PlasticStrain,
    Stress,
    Elasticity,
}

impl SubnetRole {
    pub fn output_dim(self) -> usize {
        match self {
            SubnetRole::VoidRatio | SubnetRole::Elasticity => 1,
            SubnetRole::PlasticStrain | SubnetRole::Stress => 3,
        }
    }

    pub fn input_dim(self, kind: ArchKind) -> usize {
        match (self, kind) {
            (SubnetRole::Stress, ArchKind::Serial) => N_FEATURES + 4,
            (SubnetRole::Elasticity, _) => ELASTICITY_INPUTS.len(),
            _ => N_FEATURES,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SubnetRole::VoidRatio => "void_ratio",
            SubnetRole::PlasticStrain => "plastic_strain",
            SubnetRole::Stress => "stress",
            SubnetRole::Elasticity => "elasticity",
        }
    }

    /// Label columns this role is scored against.
    pub fn label_columns(self) -> std::ops::Range<usize> {
        match self {
            SubnetRole::VoidRatio => cols::D_E..cols::D_E + 1,
            SubnetRole::PlasticStrain => cols::D_EPS_P,
            SubnetRole::Stress | SubnetRole::Elasticity => cols::D_SIG,
        }
    }
}

impl std::fmt::Display for SubnetRole {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Feature columns seen by the elasticity subnet: everything but the plastic strain.
pub const ELASTICITY_INPUTS: [usize; 10] = [0, 1, 2, 3, 4, 5, 6, 10, 11, 12];

pub const DEFAULT_EPNN_RATIO: f64 = 0.5;

pub fn default_spec(role: SubnetRole, kind: ArchKind) -> MlpSpec {
    let (layers, width) = match role {
        SubnetRole::PlasticStrain => (4, 75),
        _ => (3, 60),
    };
    MlpSpec::new(role.input_dim(kind), layers, width, role.output_dim())
}

pub fn default_hyper(kind: ArchKind) -> BTreeMap<SubnetRole, MlpSpec> {
    kind.roles().into_iter().map(|r| (r, default_spec(r, kind))).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Subnet {
    pub spec: MlpSpec,
    pub params: MlpParams,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub kind: ArchKind,
    pub subnets: BTreeMap<SubnetRole, Subnet>,
    pub feature_scaler: Scaler,
    pub label_scaler: Scaler,
    /// Maps the elasticity subnet output to the secant bulk modulus in kPa.
    pub stiffness_scaler: Scaler,
    /// Shear-to-bulk secant modulus ratio `G_sec / K_sec` (EPNN only).
    pub epnn_ratio: f64,
}

pub fn assemble(kind: ArchKind, hyper: &BTreeMap<SubnetRole, MlpSpec>, seed: u64) -> Result<Model> {
    let mut subnets = BTreeMap::new();
    for role in kind.roles() {
        let spec = *hyper
            .get(&role)
            .ok_or_else(|| Error::InvalidArgument(format!("{kind} model needs a {role} subnet")))?;
        if spec.input_dim != role.input_dim(kind) || spec.output_dim != role.output_dim() {
            return Err(Error::InvalidArgument(format!(
                "{role} subnet of a {kind} model must be {}->{}, got {}->{}",
                role.input_dim(kind),
                role.output_dim(),
                spec.input_dim,
                spec.output_dim
            )));
        }
        let params = MlpParams::init_seeded(&spec, splitmix64(seed ^ (role as u64 + 1).wrapping_mul(0xA076_1D64_78BD_642F)))?;
        subnets.insert(role, Subnet { spec, params });
    }
    if let Some(extra) = hyper.keys().find(|r| !kind.roles().contains(r)) {
        return Err(Error::InvalidArgument(format!("{kind} model has no {extra} subnet")));
    }
    Ok(Model {
        kind,
        subnets,
        feature_scaler: Scaler::identity(N_FEATURES),
        label_scaler: Scaler::identity(N_LABELS),
        stiffness_scaler: Scaler::identity(1),
        epnn_ratio: DEFAULT_EPNN_RATIO,
    })
}

pub fn assemble_default(kind: ArchKind, seed: u64) -> Result<Model> {
    assemble(kind, &default_hyper(kind), seed)
}

/// Secant bulk modulus `dp / deps_e_v` implied by physical features and labels.
/// Samples with a near-zero elastic volumetric increment are skipped.
pub fn implied_bulk_moduli(x: ArrayView2<f64>, y: ArrayView2<f64>) -> Vec<f64> {
    let de_v: Vec<f64> = (0..x.nrows())
        .map(|i| (0..3).map(|j| x[[i, cols::D_EPS.start + j]] - y[[i, cols::D_EPS_P.start + j]]).sum())
        .collect();
    let cutoff = 1e-3 * de_v.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    (0..x.nrows())
        .filter(|&i| de_v[i].abs() > cutoff && cutoff > 0.0)
        .map(|i| (y[[i, 0]] + y[[i, 1]] + y[[i, 2]]) / 3.0 / de_v[i])
        .collect()
}

impl Model {
    /// Fits all scalers on physical training data.
    pub fn fit_scalers(&mut self, x: ArrayView2<f64>, y: ArrayView2<f64>) -> Result<()> {
        check_cols(&x, N_FEATURES, "features")?;
        check_cols(&y, N_LABELS, "labels")?;
        self.feature_scaler = Scaler::fit(x)?;
        self.label_scaler = Scaler::fit(y)?;
        if self.kind == ArchKind::Epnn {
            let k = implied_bulk_moduli(x, y);
            if k.is_empty() {
                return Err(Error::InvalidArgument("no sample has a usable elastic volumetric increment".into()));
            }
            let k = Array2::from_shape_vec((k.len(), 1), k).map_err(|e| Error::Shape(e.to_string()))?;
            self.stiffness_scaler = Scaler::fit(k.view())?;
        }
        Ok(())
    }

    /// Hash over every scaler bound.
    pub fn scaler_digest(&self) -> String {
        let mut h = Sha256::new();
        for s in [&self.feature_scaler, &self.label_scaler, &self.stiffness_scaler] {
            for v in s.min.iter().chain(&s.max) {
                h.update(v.to_bits().to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    pub fn normalize_features(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.feature_scaler.apply(x)
    }

    pub fn normalize_labels(&self, y: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.label_scaler.apply(y)
    }

    pub fn denormalize_labels(&self, y: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.label_scaler.invert(y)
    }

    pub fn subnet(&self, role: SubnetRole) -> &Subnet {
        &self.subnets[&role]
    }

    pub fn n_params(&self) -> usize {
        ParamSet::n_params(self)
    }

    /// Physical-unit prediction for one sample.
    pub fn predict(&self, features: &[f64; N_FEATURES]) -> Result<[f64; N_LABELS]> {
        let x = ArrayView2::from_shape((1, N_FEATURES), features).map_err(|e| Error::Shape(e.to_string()))?;
        let y = self.denormalize_labels(model_forward(self, self.normalize_features(x)?.view())?.0.view())?;
        let mut out = [0.0; N_LABELS];
        out.copy_from_slice(y.as_slice().expect("standard layout"));
        Ok(out)
    }

    /// Number of samples for which the EPNN predicts a negative bulk modulus.
    pub fn negative_stiffness_count(&self, x_norm: ArrayView2<f64>) -> Result<usize> {
        let (_, cache) = model_forward(self, x_norm)?;
        Ok(cache.epnn.map_or(0, |c| c.k.iter().filter(|&&k| k < 0.0).count()))
    }
}

impl ParamSet for Model {
    fn slices(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = self.subnets.values().flat_map(|s| s.params.slices()).collect();
        if self.kind == ArchKind::Epnn {
            out.push(std::slice::from_ref(&self.epnn_ratio));
        }
        out
    }

    fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        let epnn = self.kind == ArchKind::Epnn;
        let mut out: Vec<&mut [f64]> = self.subnets.values_mut().flat_map(|s| s.params.slices_mut()).collect();
        if epnn {
            out.push(std::slice::from_mut(&mut self.epnn_ratio));
        }
        out
    }
}

/// Gradients of a cost with respect to every trainable parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelGrads {
    pub subnets: BTreeMap<SubnetRole, MlpParams>,
    pub epnn_ratio: Option<f64>,
}

impl ParamSet for ModelGrads {
    fn slices(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = self.subnets.values().flat_map(|p| p.slices()).collect();
        if let Some(r) = &self.epnn_ratio {
            out.push(std::slice::from_ref(r));
        }
        out
    }

    fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = self.subnets.values_mut().flat_map(|p| p.slices_mut()).collect();
        if let Some(r) = &mut self.epnn_ratio {
            out.push(std::slice::from_mut(r));
        }
        out
    }
}

#[derive(Clone, Debug)]
struct EpnnCache {
    /// Secant bulk modulus per sample, kPa.
    k: Array1<f64>,
    /// Elastic strain increment per sample.
    de_el: Array2<f64>,
    ratio: f64,
}

#[derive(Clone, Debug)]
pub struct ModelCache {
    subnets: BTreeMap<SubnetRole, ForwardCache>,
    epnn: Option<EpnnCache>,
}

impl ModelCache {
    pub fn kink_signature(&self) -> u64 {
        self.subnets
            .values()
            .fold(0, |h, c| h.rotate_left(7) ^ c.kink_signature())
    }
}

fn check_cols(x: &ArrayView2<f64>, n: usize, what: &str) -> Result<()> {
    if x.ncols() != n {
        return Err(Error::Shape(format!("{what} need {n} columns, got {}", x.ncols())));
    }
    Ok(())
}

/// Isotropic secant elasticity: `dsig_i = K de_v + 2 r K (de_i - de_v / 3)`.
pub fn isotropic_stress_increment(k: f64, ratio: f64, de_el: [f64; 3]) -> [f64; 3] {
    let de_v = de_el[0] + de_el[1] + de_el[2];
    de_el.map(|d| k * de_v + 2.0 * ratio * k * (d - de_v / 3.0))
}

/// Normalized features to normalized labels.
pub fn model_forward(m: &Model, x: ArrayView2<f64>) -> Result<(Array2<f64>, ModelCache)> {
    forward_reusing(m, x, &BTreeMap::new())
}

/// Forward pass that takes the raw outputs of some subnets as given.
/// Reused subnets leave no cache entry, so the result cannot be back-propagated.
fn forward_reusing(
    m: &Model,
    x: ArrayView2<f64>,
    reuse: &BTreeMap<SubnetRole, Array2<f64>>,
) -> Result<(Array2<f64>, ModelCache)> {
    check_cols(&x, N_FEATURES, "features")?;
    let n = x.nrows();
    let mut caches = BTreeMap::new();
    let mut y = Array2::zeros((n, N_LABELS));

    let mut run = |role: SubnetRole, input: ArrayView2<f64>| -> Result<Array2<f64>> {
        if let Some(out) = reuse.get(&role) {
            return Ok(out.clone());
        }
        let s = m.subnet(role);
        let (out, cache) = forward(&s.params, &s.spec, input)?;
        caches.insert(role, cache);
        Ok(out)
    };
    let y_e = run(SubnetRole::VoidRatio, x)?;
    let y_p = run(SubnetRole::PlasticStrain, x)?;
    y.slice_mut(s![.., cols::D_E..cols::D_E + 1]).assign(&y_e);
    y.slice_mut(s![.., cols::D_EPS_P]).assign(&y_p);

    let mut epnn = None;
    match m.kind {
        ArchKind::Parallel => {
            let y_s = run(SubnetRole::Stress, x)?;
            y.slice_mut(s![.., cols::D_SIG]).assign(&y_s);
        }
        ArchKind::Serial => {
            let mut input = Array2::zeros((n, N_FEATURES + 4));
            input.slice_mut(s![.., ..N_FEATURES]).assign(&x);
            input.slice_mut(s![.., N_FEATURES..N_FEATURES + 1]).assign(&y_e);
            input.slice_mut(s![.., N_FEATURES + 1..]).assign(&y_p);
            let y_s = run(SubnetRole::Stress, input.view())?;
            y.slice_mut(s![.., cols::D_SIG]).assign(&y_s);
        }
        ArchKind::Epnn => {
            let input = x.select(Axis(1), &ELASTICITY_INPUTS);
            let y_k = run(SubnetRole::Elasticity, input.view())?;
            let (fs, ls) = (&m.feature_scaler, &m.label_scaler);
            let k = y_k.column(0).mapv(|v| m.stiffness_scaler.invert_value(0, v));
            let mut de_el = Array2::zeros((n, 3));
            for i in 0..n {
                let mut de = [0.0; 3];
                for j in 0..3 {
                    let d_eps = fs.invert_value(cols::D_EPS.start + j, x[[i, cols::D_EPS.start + j]]);
                    let d_eps_p = ls.invert_value(cols::D_EPS_P.start + j, y_p[[i, j]]);
                    de[j] = d_eps - d_eps_p;
                    de_el[[i, j]] = de[j];
                }
                let d_sig = isotropic_stress_increment(k[i], m.epnn_ratio, de);
                for j in 0..3 {
                    y[[i, cols::D_SIG.start + j]] = ls.apply_value(cols::D_SIG.start + j, d_sig[j]);
                }
            }
            epnn = Some(EpnnCache {
                k,
                de_el,
                ratio: m.epnn_ratio,
            });
        }
    }
    Ok((y, ModelCache { subnets: caches, epnn }))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CostParts {
    pub cf_i: f64,
    pub cf_sigma: f64,
    pub cf: f64,
}

pub fn cost_of(y: ArrayView2<f64>, y_star: ArrayView2<f64>, kind: LossKind) -> Result<CostParts> {
    if y.dim() != y_star.dim() {
        return Err(Error::Shape(format!("prediction {:?} vs label {:?}", y.dim(), y_star.dim())));
    }
    let cf_i = loss(kind, y.slice(s![.., cols::D_EPS_P.start..]), y_star.slice(s![.., cols::D_EPS_P.start..]))?;
    let cf_sigma = loss(kind, y.slice(s![.., cols::D_SIG]), y_star.slice(s![.., cols::D_SIG]))?;
    Ok(CostParts {
        cf_i,
        cf_sigma,
        cf: cf_i + cf_sigma,
    })
}

pub fn model_cost(m: &Model, x: ArrayView2<f64>, y_star: ArrayView2<f64>, kind: LossKind) -> Result<CostParts> {
    check_cols(&y_star, N_LABELS, "labels")?;
    let (y, _) = model_forward(m, x)?;
    cost_of(y.view(), y_star, kind)
}

/// Back-propagates `dCF/dY` through the architecture.
pub fn model_backward(m: &Model, cache: &ModelCache, d_y: ArrayView2<f64>) -> Result<ModelGrads> {
    check_cols(&d_y, N_LABELS, "label gradients")?;
    let n = d_y.nrows();
    let mut g_e = d_y.slice(s![.., cols::D_E..cols::D_E + 1]).to_owned();
    let mut g_p = d_y.slice(s![.., cols::D_EPS_P]).to_owned();
    let g_s = d_y.slice(s![.., cols::D_SIG]);
    let mut grads = BTreeMap::new();
    let mut ratio_grad = None;

    let back = |role: SubnetRole, g: ArrayView2<f64>| {
        let s = m.subnet(role);
        let c = cache
            .subnets
            .get(&role)
            .ok_or_else(|| Error::InvalidArgument(format!("cache lacks the {role} subnet")))?;
        backward(&s.params, &s.spec, c, g)
    };

    match m.kind {
        ArchKind::Parallel => {
            grads.insert(SubnetRole::Stress, back(SubnetRole::Stress, g_s)?.0);
        }
        ArchKind::Serial => {
            let (g, d_in) = back(SubnetRole::Stress, g_s)?;
            grads.insert(SubnetRole::Stress, g);
            g_e += &d_in.slice(s![.., N_FEATURES..N_FEATURES + 1]);
            g_p += &d_in.slice(s![.., N_FEATURES + 1..]);
        }
        ArchKind::Epnn => {
            let ec = cache
                .epnn
                .as_ref()
                .ok_or_else(|| Error::InvalidArgument("cache lacks the elasticity head".into()))?;
            if ec.ratio.to_bits() != m.epnn_ratio.to_bits() {
                return Err(Error::InvalidArgument("forward cache does not belong to these parameters".into()));
            }
            let (ls, ks) = (&m.label_scaler, &m.stiffness_scaler);
            let r = m.epnn_ratio;
            let mut g_k = Array2::zeros((n, 1));
            let mut g_r = 0.0;
            for i in 0..n {
                let a: [f64; 3] = std::array::from_fn(|j| g_s[[i, j]] * ls.inv_half_range(cols::D_SIG.start + j));
                let de: [f64; 3] = std::array::from_fn(|j| ec.de_el[[i, j]]);
                let de_v = de[0] + de[1] + de[2];
                let k = ec.k[i];
                let a_sum = a[0] + a[1] + a[2];
                let mut dk = 0.0;
                for j in 0..3 {
                    let dev = de[j] - de_v / 3.0;
                    dk += a[j] * (de_v + 2.0 * r * dev);
                    g_r += a[j] * 2.0 * k * dev;
                    // d(dsig)/d(de_el_j), then de_el = d_eps - d_eps_p.
                    let d_de = k * a_sum + 2.0 * r * k * (a[j] - a_sum / 3.0);
                    g_p[[i, j]] -= d_de * ls.half_range(cols::D_EPS_P.start + j);
                }
                g_k[[i, 0]] = dk * ks.half_range(0);
            }
            grads.insert(SubnetRole::Elasticity, back(SubnetRole::Elasticity, g_k.view())?.0);
            ratio_grad = Some(g_r);
        }
    }
    grads.insert(SubnetRole::VoidRatio, back(SubnetRole::VoidRatio, g_e.view())?.0);
    grads.insert(SubnetRole::PlasticStrain, back(SubnetRole::PlasticStrain, g_p.view())?.0);
    Ok(ModelGrads {
        subnets: grads,
        epnn_ratio: ratio_grad,
    })
}

/// Cost and its gradient with respect to all trainable parameters.
pub fn model_gradients(m: &Model, x: ArrayView2<f64>, y_star: ArrayView2<f64>, kind: LossKind) -> Result<(CostParts, ModelGrads)> {
    check_cols(&y_star, N_LABELS, "labels")?;
    let (y, cache) = model_forward(m, x)?;
    let cost = cost_of(y.view(), y_star, kind)?;
    let d_y = loss_grad(kind, y.view(), y_star)?;
    Ok((cost, model_backward(m, &cache, d_y.view())?))
}

fn subnet_outputs(m: &Model, x: ArrayView2<f64>) -> Result<BTreeMap<SubnetRole, Array2<f64>>> {
    let mut out: BTreeMap<SubnetRole, Array2<f64>> = BTreeMap::new();
    for role in m.kind.roles() {
        let s = m.subnet(role);
        let input = match (role, m.kind) {
            (SubnetRole::Elasticity, _) => x.select(Axis(1), &ELASTICITY_INPUTS),
            (SubnetRole::Stress, ArchKind::Serial) => {
                let mut input = Array2::zeros((x.nrows(), N_FEATURES + 4));
                input.slice_mut(s![.., ..N_FEATURES]).assign(&x);
                input.slice_mut(s![.., N_FEATURES..N_FEATURES + 1]).assign(&out[&SubnetRole::VoidRatio]);
                input.slice_mut(s![.., N_FEATURES + 1..]).assign(&out[&SubnetRole::PlasticStrain]);
                input
            }
            _ => x.to_owned(),
        };
        out.insert(role, forward(&s.params, &s.spec, input.view())?.0);
    }
    Ok(out)
}

/// Central-difference check of `model_gradients`, reported per subnet role
/// and for the EPNN ratio (key `"ratio"`).
pub fn model_gradient_check(
    m: &Model,
    x: ArrayView2<f64>,
    y_star: ArrayView2<f64>,
    kind: LossKind,
    h: f64,
) -> Result<BTreeMap<String, GradCheckReport>> {
    let (cost, grads) = model_gradients(m, x, y_star, kind)?;
    let outputs = subnet_outputs(m, x)?;
    let mut work = m.clone();
    let eval = |work: &Model, reuse: &BTreeMap<SubnetRole, Array2<f64>>| -> Result<(f64, u64)> {
        let (y, cache) = forward_reusing(work, x, reuse)?;
        let c = cost_of(y.view(), y_star, kind)?;
        Ok((c.cf, cache.kink_signature() ^ residual_signature(&y, y_star, kind)))
    };
    let mut out = BTreeMap::new();
    for role in m.kind.roles() {
        // Only the perturbed subnet and whatever consumes its output need re-running.
        let mut reuse = outputs.clone();
        reuse.remove(&role);
        if m.kind == ArchKind::Serial {
            reuse.remove(&SubnetRole::Stress);
        }
        let analytic = grads.subnets[&role].to_flat();
        let lens: Vec<usize> = m.subnet(role).params.slices().iter().map(|s| s.len()).collect();
        let report = compare_gradients(&analytic, cost.cf, h, |i, delta| {
            let (mut k, mut off) = (0, i);
            while off >= lens[k] {
                off -= lens[k];
                k += 1;
            }
            let params = &mut work.subnets.get_mut(&role).expect("role present").params;
            let original = params.slices()[k][off];
            params.slices_mut()[k][off] = original + delta;
            let r = eval(&work, &reuse);
            work.subnets.get_mut(&role).expect("role present").params.slices_mut()[k][off] = original;
            r
        })?;
        out.insert(role.name().to_string(), report);
    }
    if let Some(g) = grads.epnn_ratio {
        let report = compare_gradients(&[g], cost.cf, h, |_, delta| {
            let original = work.epnn_ratio;
            work.epnn_ratio = original + delta;
            let r = eval(&work, &outputs);
            work.epnn_ratio = original;
            r
        })?;
        out.insert("ratio".to_string(), report);
    }
    Ok(out)
}

/// One row of a gradient-check sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradCheckRow {
    pub instance: usize,
    pub arch: ArchKind,
    /// Subnet role, or `"ratio"` for the EPNN shear-to-bulk ratio.
    pub target: String,
    pub shape: String,
    pub report: GradCheckReport,
}

fn shape_label(spec: &MlpSpec) -> String {
    format!("{}->{}x{}->{}", spec.input_dim, spec.hidden_layers, spec.hidden_width, spec.output_dim)
}

/// Random scalers with distinct physical ranges, so every chain-rule factor is exercised.
fn random_scalers<R: rand::Rng>(m: &mut Model, rng: &mut R) {
    let span = |rng: &mut R, scale: f64| {
        let lo = -scale * rng.random_range(0.2..1.0);
        (lo, scale * rng.random_range(0.2..1.0))
    };
    let feature_scales = [1e-2, 1e-2, 1e-2, 500.0, 500.0, 500.0, 0.8, 5e-3, 5e-3, 5e-3, 1.6e-3, 1.6e-3, 1.6e-3];
    let label_scales = [40.0, 40.0, 40.0, 1e-3, 1e-3, 1e-3, 1e-3];
    let (fmin, fmax): (Vec<f64>, Vec<f64>) = feature_scales.iter().map(|&sc| span(rng, sc)).unzip();
    let (lmin, lmax): (Vec<f64>, Vec<f64>) = label_scales.iter().map(|&sc| span(rng, sc)).unzip();
    m.feature_scaler = Scaler { min: fmin, max: fmax };
    m.label_scaler = Scaler { min: lmin, max: lmax };
    let k_lo = rng.random_range(1e3..1e4);
    m.stiffness_scaler = Scaler {
        min: vec![k_lo],
        max: vec![k_lo * rng.random_range(10.0..100.0)],
    };
    m.epnn_ratio = rng.random_range(0.3..0.7);
}

/// Gradient checks of default-size parallel and EPNN models, which together
/// cover every subnet shape and the ratio `r`.
pub fn gradient_check_suite(instances: usize, batch: usize, h: f64, seed: u64) -> Result<Vec<GradCheckRow>> {
    use rand::{Rng, SeedableRng};
    let mut rows = Vec::new();
    for instance in 0..instances {
        for kind in [ArchKind::Parallel, ArchKind::Epnn] {
            let inst_seed = splitmix64(seed ^ ((instance as u64) << 8) ^ kind as u64);
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(inst_seed);
            let mut m = assemble_default(kind, inst_seed)?;
            random_scalers(&mut m, &mut rng);
            let x = Array2::from_shape_simple_fn((batch, N_FEATURES), || rng.random_range(-1.0..1.0));
            let y = Array2::from_shape_simple_fn((batch, N_LABELS), || rng.random_range(-1.0..1.0));
            for (target, report) in model_gradient_check(&m, x.view(), y.view(), LossKind::Mae, h)? {
                let shape = match kind.roles().into_iter().find(|r| r.name() == target) {
                    Some(role) => shape_label(&m.subnet(role).spec),
                    None => "scalar".to_string(),
                };
                rows.push(GradCheckRow {
                    instance,
                    arch: kind,
                    target,
                    shape,
                    report,
                });
            }
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn zero_model(kind: ArchKind) -> Model {
        let mut m = assemble_default(kind, 0).unwrap();
        for s in m.subnets.values_mut() {
            s.params = MlpParams::zeros(&s.spec);
        }
        m
    }

    #[test]
    fn default_shapes() {
        let m = assemble_default(ArchKind::Parallel, 1).unwrap();
        let dims: Vec<(usize, usize)> = m.subnets.values().map(|s| (s.spec.input_dim, s.spec.output_dim)).collect();
        assert_eq!(dims, vec![(13, 1), (13, 3), (13, 3)]);
        let m = assemble_default(ArchKind::Epnn, 1).unwrap();
        let el = &m.subnet(SubnetRole::Elasticity).spec;
        assert_eq!((el.input_dim, el.output_dim), (10, 1));
        assert_eq!(m.epnn_ratio, 0.5);
        let m = assemble_default(ArchKind::Serial, 1).unwrap();
        assert_eq!(m.subnet(SubnetRole::Stress).spec.input_dim, 17);
        let p = &m.subnet(SubnetRole::PlasticStrain).spec;
        assert_eq!((p.hidden_layers, p.hidden_width), (4, 75));
        assert!(!p.output_bias);
    }

    #[test]
    fn same_seed_same_model() {
        assert_eq!(assemble_default(ArchKind::Epnn, 3).unwrap(), assemble_default(ArchKind::Epnn, 3).unwrap());
        assert_ne!(assemble_default(ArchKind::Epnn, 3).unwrap(), assemble_default(ArchKind::Epnn, 4).unwrap());
    }

    #[test]
    fn inconsistent_hyper_is_rejected() {
        let mut h = default_hyper(ArchKind::Serial);
        h.insert(SubnetRole::Stress, MlpSpec::new(13, 3, 60, 3));
        assert!(assemble(ArchKind::Serial, &h, 0).is_err());
        let mut h = default_hyper(ArchKind::Parallel);
        h.insert(SubnetRole::Elasticity, default_spec(SubnetRole::Elasticity, ArchKind::Epnn));
        assert!(assemble(ArchKind::Parallel, &h, 0).is_err());
        let mut h = default_hyper(ArchKind::Epnn);
        h.remove(&SubnetRole::Elasticity);
        assert!(assemble(ArchKind::Epnn, &h, 0).is_err());
    }

    #[test]
    fn isotropic_elasticity_arithmetic() {
        let d = isotropic_stress_increment(3000.0, 1000.0 / 3000.0, [0.001, 0.0, 0.0]);
        let expected = [4.0 + 1.0 / 3.0, 2.0 + 1.0 / 3.0, 2.0 + 1.0 / 3.0];
        for (a, b) in d.iter().zip(expected) {
            assert!((a - b).abs() < 1e-12, "{d:?}");
        }
    }

    #[test]
    fn zero_parallel_model_outputs_zero() {
        let m = zero_model(ArchKind::Parallel);
        let x = Array2::from_elem((3, 13), 0.4);
        let (y, _) = model_forward(&m, x.view()).unwrap();
        assert!(y.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn epnn_with_plastic_equal_total_strain_gives_no_stress() {
        let mut m = zero_model(ArchKind::Epnn);
        // Identity scalers make normalized and physical values coincide; a
        // plastic subnet that copies the strain increment leaves no elastic part.
        let p = m.subnets.get_mut(&SubnetRole::PlasticStrain).unwrap();
        for l in 0..p.params.layers.len() {
            let w = &mut p.params.layers[l].weight;
            for j in 0..3 {
                w[[if l == 0 { 10 + j } else { j }, j]] = 1.0;
            }
        }
        m.subnets.get_mut(&SubnetRole::Elasticity).unwrap().params =
            MlpParams::init_seeded(&m.subnet(SubnetRole::Elasticity).spec, 5).unwrap();
        let mut x = Array2::from_elem((2, 13), -0.3);
        x.slice_mut(s![.., 10..13]).assign(&array![[0.2, 0.1, 0.4], [0.05, 0.3, 0.01]]);
        let (y, _) = model_forward(&m, x.view()).unwrap();
        for v in y.slice(s![.., 0..3]) {
            assert!(v.abs() < 1e-15, "{y}");
        }
    }

    #[test]
    fn duplicated_batch_has_same_cost() {
        let m = assemble_default(ArchKind::Serial, 2).unwrap();
        let x = Array2::from_shape_fn((3, 13), |(i, j)| ((i * 13 + j) as f64 * 0.37).sin());
        let y = Array2::from_shape_fn((3, 7), |(i, j)| ((i * 7 + j) as f64 * 0.11).cos());
        let c1 = model_cost(&m, x.view(), y.view(), LossKind::Mae).unwrap();
        let x2 = ndarray::concatenate(Axis(0), &[x.view(), x.view()]).unwrap();
        let y2 = ndarray::concatenate(Axis(0), &[y.view(), y.view()]).unwrap();
        let c2 = model_cost(&m, x2.view(), y2.view(), LossKind::Mae).unwrap();
        assert!((c1.cf - c2.cf).abs() < 1e-14);
        let (yp, _) = model_forward(&m, x.view()).unwrap();
        assert_eq!(model_cost(&m, x.view(), yp.view(), LossKind::Mae).unwrap().cf, 0.0);
    }

    fn random_batch(m: usize, seed: u64) -> (Array2<f64>, Array2<f64>) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let x = Array2::from_shape_simple_fn((m, N_FEATURES), || rng.random_range(-1.0..1.0));
        let y = Array2::from_shape_simple_fn((m, N_LABELS), || rng.random_range(-1.0..1.0));
        (x, y)
    }

    /// Scalers with distinct physical ranges so every chain-rule factor matters.
    fn with_scalers(mut m: Model) -> Model {
        m.feature_scaler = Scaler {
            min: (0..13).map(|j| -1e-3 * (j as f64 + 1.0)).collect(),
            max: (0..13).map(|j| 2e-3 * (j as f64 + 1.0)).collect(),
        };
        m.label_scaler = Scaler {
            min: vec![-30.0, -20.0, -25.0, -1e-3, -2e-3, -1.5e-3, -1e-3],
            max: vec![40.0, 35.0, 30.0, 2e-3, 1e-3, 1.2e-3, 5e-4],
        };
        m.stiffness_scaler = Scaler {
            min: vec![2e3],
            max: vec![9e4],
        };
        m
    }

    #[test]
    fn gradients_match_finite_differences() {
        for kind in ArchKind::ALL {
            let mut hyper = default_hyper(kind);
            for spec in hyper.values_mut() {
                spec.hidden_width = 6;
                spec.hidden_layers = 2;
            }
            let m = with_scalers(assemble(kind, &hyper, 11).unwrap());
            let (x, y) = random_batch(5, 12);
            for loss_kind in [LossKind::Mse, LossKind::Mae] {
                let report = model_gradient_check(&m, x.view(), y.view(), loss_kind, 1e-6).unwrap();
                assert_eq!(report.contains_key("ratio"), kind == ArchKind::Epnn);
                for (role, r) in &report {
                    assert!(r.checked > 0, "{kind} {role} {r:?}");
                    assert!(r.max_rel_error < 1e-6, "{kind} {role} {loss_kind:?} {r:?}");
                }
            }
        }
    }

    #[test]
    fn plastic_subnet_couples_into_stress_cost_except_in_parallel() {
        let (x, y) = random_batch(6, 4);
        for kind in ArchKind::ALL {
            let m = with_scalers(assemble_default(kind, 9).unwrap());
            let (y_pred, cache) = model_forward(&m, x.view()).unwrap();
            // Gradient of CF_sigma only.
            let mut d_y = loss_grad(LossKind::Mae, y_pred.view(), y.view()).unwrap();
            d_y.slice_mut(s![.., cols::D_EPS_P.start..]).fill(0.0);
            let g = model_backward(&m, &cache, d_y.view()).unwrap();
            let norm: f64 = g.subnets[&SubnetRole::PlasticStrain].to_flat().iter().map(|v| v.abs()).sum();
            let mut perturbed = m.clone();
            perturbed.subnets.get_mut(&SubnetRole::PlasticStrain).unwrap().params.layers[0].weight[[3, 2]] += 0.05;
            let before = model_cost(&m, x.view(), y.view(), LossKind::Mae).unwrap().cf_sigma;
            let after = model_cost(&perturbed, x.view(), y.view(), LossKind::Mae).unwrap().cf_sigma;
            if kind == ArchKind::Parallel {
                assert_eq!(norm, 0.0);
                assert_eq!(before, after);
            } else {
                assert!(norm > 0.0, "{kind}");
                assert_ne!(before, after, "{kind}");
            }
        }
    }

    #[test]
    fn epnn_stress_is_isotropic_under_axisymmetric_elastic_strain() {
        let mut m = with_scalers(assemble_default(ArchKind::Epnn, 17).unwrap());
        // Axisymmetric total strain and a zero plastic head give an
        // axisymmetric elastic increment.
        let p = m.subnets.get_mut(&SubnetRole::PlasticStrain).unwrap();
        p.params = MlpParams::zeros(&p.spec);
        m.label_scaler.min[3..6].copy_from_slice(&[-1e-3; 3]);
        m.label_scaler.max[3..6].copy_from_slice(&[1e-3; 3]);
        for seed in 0..5 {
            let (mut x, _) = random_batch(4, 40 + seed);
            for i in 0..4 {
                let lateral = m.feature_scaler.apply_value(10, 7e-4 * (i as f64 - 1.5));
                x[[i, 10]] = lateral;
                x[[i, 11]] = m.feature_scaler.apply_value(11, m.feature_scaler.invert_value(10, lateral));
            }
            let y = m.denormalize_labels(model_forward(&m, x.view()).unwrap().0.view()).unwrap();
            for i in 0..4 {
                let (a, b) = (y[[i, 0]], y[[i, 1]]);
                assert!((a - b).abs() <= 1e-10 * a.abs().max(1.0), "{a} vs {b}");
            }
        }
    }

    #[test]
    fn implied_bulk_modulus_of_isotropic_data() {
        let k = 5000.0;
        let x = array![[0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.7, 0.0, 0.0, 0.0, 1e-3, 2e-3, -5e-4]];
        let d = isotropic_stress_increment(k, 0.4, [1e-3, 2e-3, -5e-4]);
        let y = array![[d[0], d[1], d[2], 0.0, 0.0, 0.0, 0.0]];
        let got = implied_bulk_moduli(x.view(), y.view());
        assert!((got[0] - k).abs() < 1e-9 * k);
    }
}
