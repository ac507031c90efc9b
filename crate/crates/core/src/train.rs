//! Splitting, training, evaluation, learning curves and checkpoints.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::{s, Array2, ArrayView2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::arch::{assemble_default, model_backward, model_forward, cost_of, ArchKind, CostParts, Model, SubnetRole};
use crate::datagen::{cols, splitmix64, Dataset, N_FEATURES, N_LABELS};
use crate::error::{Error, Result};
use crate::nn::{loss_grad, AdamState, LossKind, ParamSet, ScalarParam};

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LearningRates {
    pub void_ratio: f64,
    pub plastic_strain: f64,
    pub stress: f64,
    pub elasticity: f64,
    pub ratio: f64,
}

impl Default for LearningRates {
    fn default() -> Self {
        Self {
            void_ratio: 1e-3,
            plastic_strain: 1e-3,
            stress: 3e-4,
            elasticity: 1e-2,
            ratio: 1e-3,
        }
    }
}

impl LearningRates {
    pub fn for_role(&self, role: SubnetRole) -> f64 {
        match role {
            SubnetRole::VoidRatio => self.void_ratio,
            SubnetRole::PlasticStrain => self.plastic_strain,
            SubnetRole::Stress => self.stress,
            SubnetRole::Elasticity => self.elasticity,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Train, cross-validation and test fractions.
    pub split: [f64; 3],
    pub epochs: usize,
    pub loss: LossKind,
    pub learning_rates: LearningRates,
    pub seed: u64,
    pub curve_stride: usize,
    /// Mini-batch size; `None` trains on the full batch every epoch.
    pub batch_size: Option<usize>,
    pub subsample_fraction: f64,
    pub repeats: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            split: [0.6, 0.2, 0.2],
            epochs: 2000,
            loss: LossKind::Mae,
            learning_rates: LearningRates::default(),
            seed: 0,
            curve_stride: 100,
            batch_size: None,
            subsample_fraction: 1.0,
            repeats: 5,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let sum: f64 = self.split.iter().sum();
        if self.split.iter().any(|&r| !(r > 0.0)) || (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!("split ratios {:?} must be positive and sum to 1", self.split)));
        }
        if self.curve_stride == 0 {
            return Err(Error::InvalidArgument("curve stride must be positive".into()));
        }
        if self.batch_size == Some(0) {
            return Err(Error::InvalidArgument("batch size must be positive".into()));
        }
        if !(self.subsample_fraction > 0.0 && self.subsample_fraction <= 1.0) {
            return Err(Error::InvalidArgument(format!("subsample fraction {} outside (0, 1]", self.subsample_fraction)));
        }
        if self.repeats == 0 {
            return Err(Error::InvalidArgument("at least one repeat is needed".into()));
        }
        let rates = self.learning_rates;
        if [rates.void_ratio, rates.plastic_strain, rates.stress, rates.elasticity, rates.ratio]
            .iter()
            .any(|r| !(r.is_finite() && *r >= 0.0))
        {
            return Err(Error::InvalidArgument(format!("invalid learning rates {rates:?}")));
        }
        Ok(())
    }
}

/// Physical-unit feature and label matrices.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleSet {
    pub x: Array2<f64>,
    pub y: Array2<f64>,
}

impl SampleSet {
    pub fn from_dataset(ds: &Dataset) -> Self {
        let n = ds.len();
        let mut x = Array2::zeros((n, N_FEATURES));
        let mut y = Array2::zeros((n, N_LABELS));
        for (i, s) in ds.samples.iter().enumerate() {
            x.row_mut(i).assign(&ndarray::aview1(&s.features));
            y.row_mut(i).assign(&ndarray::aview1(&s.labels));
        }
        Self { x, y }
    }

    pub fn len(&self) -> usize {
        self.x.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn rows(&self, indices: &[usize]) -> SampleSet {
        SampleSet {
            x: self.x.select(ndarray::Axis(0), indices),
            y: self.y.select(ndarray::Axis(0), indices),
        }
    }
}

/// Samples normalized by a particular model's scalers.
#[derive(Clone, Debug, PartialEq)]
pub struct NormalizedSet {
    pub x: Array2<f64>,
    pub y: Array2<f64>,
    pub scaler_digest: String,
}

impl NormalizedSet {
    pub fn new(model: &Model, set: &SampleSet) -> Result<Self> {
        Ok(Self {
            x: model.normalize_features(set.x.view())?,
            y: model.normalize_labels(set.y.view())?,
            scaler_digest: model.scaler_digest(),
        })
    }

    pub fn len(&self) -> usize {
        self.x.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn check(&self, model: &Model) -> Result<()> {
        if self.scaler_digest != model.scaler_digest() {
            return Err(Error::InvalidArgument("sample set was normalized with different scalers".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Splits {
    pub train: Dataset,
    pub cv: Dataset,
    pub test: Dataset,
}

/// Seeded shuffle, then contiguous train / cv / test blocks.
pub fn split(ds: &Dataset, config: &TrainConfig) -> Result<Splits> {
    config.validate()?;
    let n = ds.len();
    if n < 5 {
        return Err(Error::InvalidArgument(format!("need at least 5 samples to split, got {n}")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(config.seed));
    let n_train = ((config.split[0] * n as f64).round() as usize).clamp(1, n - 2);
    let n_cv = ((config.split[1] * n as f64).round() as usize).clamp(1, n - n_train - 1);
    Ok(Splits {
        train: ds.subset(&order[..n_train]),
        cv: ds.subset(&order[n_train..n_train + n_cv]),
        test: ds.subset(&order[n_train + n_cv..]),
    })
}

/// `100 |Y - Y*|_F / |Y*|_F`.
pub fn frobenius_error(y: ArrayView2<f64>, y_star: ArrayView2<f64>) -> Result<f64> {
    if y.dim() != y_star.dim() {
        return Err(Error::Shape(format!("prediction {:?} vs reference {:?}", y.dim(), y_star.dim())));
    }
    let reference = y_star.iter().map(|v| v * v).sum::<f64>().sqrt();
    if reference == 0.0 {
        return Err(Error::InvalidArgument("Frobenius error against an all-zero reference".into()));
    }
    let diff = y.iter().zip(y_star.iter()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
    Ok(100.0 * diff / reference)
}

/// Percent errors per output group; `stress` is reconstructed for the EPNN.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RoleErrors {
    pub void_ratio: f64,
    pub plastic_strain: f64,
    pub stress: f64,
}

impl RoleErrors {
    pub const NAMES: [&'static str; 3] = ["void_ratio", "plastic_strain", "stress"];

    pub fn values(&self) -> [f64; 3] {
        [self.void_ratio, self.plastic_strain, self.stress]
    }

    pub fn from_values(v: [f64; 3]) -> Self {
        Self {
            void_ratio: v[0],
            plastic_strain: v[1],
            stress: v[2],
        }
    }
}

/// Errors in physical units for a normalized set.
fn role_errors(model: &Model, set: &NormalizedSet) -> Result<RoleErrors> {
    set.check(model)?;
    let (y, _) = model_forward(model, set.x.view())?;
    let pred = model.denormalize_labels(y.view())?;
    let truth = model.denormalize_labels(set.y.view())?;
    let group = |r: std::ops::Range<usize>| frobenius_error(pred.slice(s![.., r.clone()]), truth.slice(s![.., r]));
    Ok(RoleErrors {
        void_ratio: group(cols::D_E..cols::D_E + 1)?,
        plastic_strain: group(cols::D_EPS_P)?,
        stress: group(cols::D_SIG)?,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub x: f64,
    pub train: RoleErrors,
    pub cv: RoleErrors,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub model: Model,
    pub config: TrainConfig,
    pub dataset_digest: String,
    pub epochs: usize,
    pub final_cost: CostParts,
    pub final_train: RoleErrors,
    pub final_cv: RoleErrors,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        if !ParamSet::to_flat(&self.model).iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("refusing to save a checkpoint with non-finite parameters".into()));
        }
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ckpt: Checkpoint = serde_json::from_str(&fs::read_to_string(path)?)?;
        if ckpt.format_version != CHECKPOINT_FORMAT_VERSION {
            return Err(Error::Format(format!(
                "checkpoint format {} is not supported (expected {CHECKPOINT_FORMAT_VERSION})",
                ckpt.format_version
            )));
        }
        for (role, s) in &ckpt.model.subnets {
            if !s.params.matches(&s.spec) {
                return Err(Error::Format(format!("{role} parameters do not match their declared shape")));
            }
        }
        Ok(ckpt)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub curve: Vec<CurvePoint>,
}

fn diagnostic(model: &Model, epoch: usize, cost: &CostParts) -> String {
    let ranges: BTreeMap<&str, f64> = model
        .subnets
        .iter()
        .map(|(r, s)| (r.name(), s.params.to_flat().iter().fold(0.0_f64, |m, v| m.max(v.abs()))))
        .collect();
    format!(
        "non-finite cost at epoch {epoch}: cf_i={} cf_sigma={} ratio={} max |param| per subnet {ranges:?}",
        cost.cf_i, cost.cf_sigma, model.epnn_ratio
    )
}

/// Trains a model whose scalers are already fit on the training data.
pub fn train(
    mut model: Model,
    train_set: &NormalizedSet,
    cv_set: &NormalizedSet,
    config: &TrainConfig,
    dataset_digest: &str,
) -> Result<TrainOutcome> {
    config.validate()?;
    train_set.check(&model)?;
    cv_set.check(&model)?;
    if train_set.is_empty() || cv_set.is_empty() {
        return Err(Error::InvalidArgument("training and cross-validation sets must be non-empty".into()));
    }
    let mut adam: BTreeMap<SubnetRole, AdamState> =
        model.subnets.iter().map(|(r, s)| (*r, AdamState::new(&s.params))).collect();
    let mut ratio_adam = AdamState::new(&ScalarParam([model.epnn_ratio]));
    let mut curve = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(config.seed ^ 0xB47C_4000));
    let n = train_set.len();
    let mut order: Vec<usize> = (0..n).collect();

    let record = |model: &Model, epoch: usize, curve: &mut Vec<CurvePoint>| -> Result<()> {
        curve.push(CurvePoint {
            x: epoch as f64,
            train: role_errors(model, train_set)?,
            cv: role_errors(model, cv_set)?,
        });
        Ok(())
    };
    record(&model, 0, &mut curve)?;

    for epoch in 1..=config.epochs {
        let batches: Vec<Option<Vec<usize>>> = match config.batch_size {
            None => vec![None],
            Some(b) => {
                order.shuffle(&mut rng);
                order.chunks(b).map(|c| Some(c.to_vec())).collect()
            }
        };
        for batch in batches {
            let (x, y) = match &batch {
                None => (train_set.x.view().to_owned(), train_set.y.view().to_owned()),
                Some(idx) => (
                    train_set.x.select(ndarray::Axis(0), idx),
                    train_set.y.select(ndarray::Axis(0), idx),
                ),
            };
            let (pred, cache) = model_forward(&model, x.view())?;
            let cost = cost_of(pred.view(), y.view(), config.loss)?;
            if !cost.cf.is_finite() {
                return Err(Error::NonFinite(diagnostic(&model, epoch, &cost)));
            }
            let d_y = loss_grad(config.loss, pred.view(), y.view())?;
            let grads = model_backward(&model, &cache, d_y.view())?;
            for (role, subnet) in model.subnets.iter_mut() {
                let lr = config.learning_rates.for_role(*role);
                adam.get_mut(role).expect("state per subnet").update(&mut subnet.params, &grads.subnets[role], lr);
            }
            if let Some(g) = grads.epnn_ratio {
                let mut r = ScalarParam([model.epnn_ratio]);
                ratio_adam.update(&mut r, &ScalarParam([g]), config.learning_rates.ratio);
                model.epnn_ratio = r.0[0];
            }
        }
        if epoch % config.curve_stride == 0 || epoch == config.epochs {
            record(&model, epoch, &mut curve)?;
        }
    }

    let (pred, _) = model_forward(&model, train_set.x.view())?;
    let final_cost = cost_of(pred.view(), train_set.y.view(), config.loss)?;
    if !final_cost.cf.is_finite() {
        return Err(Error::NonFinite(diagnostic(&model, config.epochs, &final_cost)));
    }
    let last = *curve.last().expect("initial point recorded");
    Ok(TrainOutcome {
        checkpoint: Checkpoint {
            format_version: CHECKPOINT_FORMAT_VERSION,
            model,
            config: config.clone(),
            dataset_digest: dataset_digest.to_string(),
            epochs: config.epochs,
            final_cost,
            final_train: last.train,
            final_cv: last.cv,
        },
        curve,
    })
}

/// Fits scalers on `train_set`, then trains.
pub fn fit_and_train(
    mut model: Model,
    train_set: &SampleSet,
    cv_set: &SampleSet,
    config: &TrainConfig,
    dataset_digest: &str,
) -> Result<TrainOutcome> {
    model.fit_scalers(train_set.x.view(), train_set.y.view())?;
    let tr = NormalizedSet::new(&model, train_set)?;
    let cv = NormalizedSet::new(&model, cv_set)?;
    train(model, &tr, &cv, config, dataset_digest)
}

pub fn evaluate(ckpt: &Checkpoint, set: &NormalizedSet) -> Result<RoleErrors> {
    role_errors(&ckpt.model, set)
}

/// Mean and standard deviation over repeats at one training-set fraction.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LearningPoint {
    pub fraction: f64,
    pub n_train: usize,
    pub train_mean: RoleErrors,
    pub train_sd: RoleErrors,
    pub cv_mean: RoleErrors,
    pub cv_sd: RoleErrors,
}

fn mean_sd(values: &[RoleErrors]) -> (RoleErrors, RoleErrors) {
    let n = values.len() as f64;
    let mut mean = [0.0; 3];
    let mut sd = [0.0; 3];
    for k in 0..3 {
        mean[k] = values.iter().map(|v| v.values()[k]).sum::<f64>() / n;
        sd[k] = (values.iter().map(|v| (v.values()[k] - mean[k]).powi(2)).sum::<f64>() / n).sqrt();
    }
    (RoleErrors::from_values(mean), RoleErrors::from_values(sd))
}

/// Model seed for repeat `r`; repeat 0 uses the configured seed itself.
pub fn repeat_seed(seed: u64, r: usize) -> u64 {
    if r == 0 {
        seed
    } else {
        splitmix64(seed ^ (r as u64).wrapping_mul(0xD1B5_4A32_D192_ED03))
    }
}

/// Trains from scratch on `repeats` random subsets per fraction and averages
/// subset-train and full-cv errors. A fraction of 1 uses the whole set in order.
pub fn learning_curve(
    kind: ArchKind,
    train_set: &SampleSet,
    cv_set: &SampleSet,
    fractions: &[f64],
    config: &TrainConfig,
    dataset_digest: &str,
) -> Result<Vec<LearningPoint>> {
    config.validate()?;
    let n = train_set.len();
    let mut points = Vec::with_capacity(fractions.len());
    for (fi, &fraction) in fractions.iter().enumerate() {
        if !(fraction > 0.0 && fraction <= 1.0) {
            return Err(Error::InvalidArgument(format!("training fraction {fraction} outside (0, 1]")));
        }
        let n_sub = ((fraction * n as f64).round() as usize).max(1);
        let mut train_errs = Vec::with_capacity(config.repeats);
        let mut cv_errs = Vec::with_capacity(config.repeats);
        for r in 0..config.repeats {
            let subset = if n_sub == n {
                train_set.clone()
            } else {
                let mut idx: Vec<usize> = (0..n).collect();
                let draw_seed = splitmix64(config.seed ^ splitmix64(((fi as u64) << 32) | r as u64));
                idx.shuffle(&mut ChaCha8Rng::seed_from_u64(draw_seed));
                idx.truncate(n_sub);
                idx.sort_unstable();
                train_set.rows(&idx)
            };
            let model = assemble_default(kind, repeat_seed(config.seed, r))?;
            let out = fit_and_train(model, &subset, cv_set, config, dataset_digest)?;
            train_errs.push(out.checkpoint.final_train);
            cv_errs.push(out.checkpoint.final_cv);
        }
        let (train_mean, train_sd) = mean_sd(&train_errs);
        let (cv_mean, cv_sd) = mean_sd(&cv_errs);
        points.push(LearningPoint {
            fraction,
            n_train: n_sub,
            train_mean,
            train_sd,
            cv_mean,
            cv_sd,
        });
    }
    Ok(points)
}

/// Curve CSV with columns `x, role, train_err_pct, cv_err_pct`.
pub fn write_curve_csv<W: Write>(out: W, points: impl IntoIterator<Item = (f64, RoleErrors, RoleErrors)>) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["x", "role", "train_err_pct", "cv_err_pct"])?;
    for (x, train, cv) in points {
        for (k, role) in RoleErrors::NAMES.iter().enumerate() {
            w.write_record([x.to_string(), role.to_string(), format!("{:.16e}", train.values()[k]), format!("{:.16e}", cv.values()[k])])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn training_curve_rows(curve: &[CurvePoint]) -> impl Iterator<Item = (f64, RoleErrors, RoleErrors)> + '_ {
    curve.iter().map(|p| (p.x, p.train, p.cv))
}

pub fn learning_curve_rows(points: &[LearningPoint]) -> impl Iterator<Item = (f64, RoleErrors, RoleErrors)> + '_ {
    points.iter().map(|p| (p.n_train as f64, p.train_mean, p.cv_mean))
}
