//! Synthetic dataset generation from random proportional strain paths.
//!
//! Initial conditions sweep a grid of mean stress and void ratio. From each
//! condition a number of monotonic proportional strain paths are driven with
//! a fixed random direction and a random magnitude per step. Every accepted
//! step becomes one sample: the state at the start of the step plus the
//! strain increment as features, the increments of stress, plastic strain
//! and void ratio as labels.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::mech::{stress_invariants, strain_invariants, PrincipalVec3};
use crate::wg::{integrate_step, IntegratorTolerances, MaterialState, StepResult, WgParams};

pub const N_FEATURES: usize = 13;
pub const N_LABELS: usize = 7;

pub const FEATURE_NAMES: [&str; N_FEATURES] = [
    "eps1", "eps2", "eps3", "sig1", "sig2", "sig3", "e", "epsp1", "epsp2", "epsp3", "deps1", "deps2", "deps3",
];
pub const LABEL_NAMES: [&str; N_LABELS] = ["dsig1", "dsig2", "dsig3", "depsp1", "depsp2", "depsp3", "de"];

/// Column ranges inside the feature vector.
pub mod cols {
    use std::ops::Range;
    pub const EPS: Range<usize> = 0..3;
    pub const SIG: Range<usize> = 3..6;
    pub const E: usize = 6;
    pub const EPS_P: Range<usize> = 7..10;
    pub const D_EPS: Range<usize> = 10..13;
    /// Label columns.
    pub const D_SIG: Range<usize> = 0..3;
    pub const D_EPS_P: Range<usize> = 3..6;
    pub const D_E: usize = 6;
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    pub p_grid: Vec<f64>,
    pub e_grid: Vec<f64>,
    pub tests_per_condition: usize,
    pub max_steps: usize,
    pub step_mag_range: [f64; 2],
    pub p_bounds: [f64; 2],
    pub master_seed: u64,
    #[serde(default)]
    pub params: WgParams,
    #[serde(default)]
    pub tolerances: IntegratorTolerances,
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => vec![],
        1 => vec![lo],
        _ => (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect(),
    }
}

impl GenConfig {
    /// Full-size protocol: 10 x 10 initial conditions, 20 paths each, up to 200 steps.
    pub fn paper_scale(master_seed: u64) -> Self {
        Self {
            p_grid: linspace(50.0, 500.0, 10),
            e_grid: linspace(0.5, 0.74, 10),
            tests_per_condition: 20,
            max_steps: 200,
            step_mag_range: [0.0, 1.6e-3],
            p_bounds: [1.0, 1.0e5],
            master_seed,
            params: WgParams::OTTAWA,
            tolerances: IntegratorTolerances::default(),
        }
    }

    /// Desk-scale protocol: 3 x 3 conditions, 5 paths each, up to 100 steps.
    pub fn desk_scale(master_seed: u64) -> Self {
        Self {
            p_grid: linspace(50.0, 500.0, 3),
            e_grid: linspace(0.5, 0.74, 3),
            tests_per_condition: 5,
            max_steps: 100,
            ..Self::paper_scale(master_seed)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let [lo, hi] = self.step_mag_range;
        if !(0.0 <= lo && lo <= hi && hi <= 0.01) {
            return Err(Error::InvalidArgument(format!("step_mag_range must lie within [0, 0.01], got [{lo}, {hi}]")));
        }
        let [pmin, pmax] = self.p_bounds;
        if !(pmin >= self.params.p0 && pmax > pmin) {
            return Err(Error::InvalidArgument(format!("invalid p_bounds [{pmin}, {pmax}]")));
        }
        if self.p_grid.iter().any(|&p| !(p > 0.0)) || self.e_grid.iter().any(|&e| !(e > 0.0)) {
            return Err(Error::InvalidArgument("grid values must be positive".into()));
        }
        self.params.validate()
    }

    /// Mean strain increment norm of the random step magnitudes.
    pub fn mean_step_magnitude(&self) -> f64 {
        0.5 * (self.step_mag_range[0] + self.step_mag_range[1])
    }

    pub fn digest(&self) -> String {
        digest_json(self)
    }
}

pub(crate) fn digest_json<T: Serialize>(value: &T) -> String {
    let json = serde_json::to_vec(value).expect("serializable value");
    hex::encode(Sha256::digest(&json))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub condition: usize,
    pub test: usize,
    pub step: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PathSample {
    pub features: [f64; N_FEATURES],
    pub labels: [f64; N_LABELS],
    pub provenance: Option<Provenance>,
}

impl PathSample {
    pub fn new(state: &MaterialState, d_eps: &PrincipalVec3, result: &StepResult, provenance: Option<Provenance>) -> Self {
        let mut features = [0.0; N_FEATURES];
        features[cols::EPS].copy_from_slice(&state.eps.0);
        features[cols::SIG].copy_from_slice(&state.sigma.0);
        features[cols::E] = state.e;
        features[cols::EPS_P].copy_from_slice(&state.eps_p.0);
        features[cols::D_EPS].copy_from_slice(&d_eps.0);
        let mut labels = [0.0; N_LABELS];
        labels[cols::D_SIG].copy_from_slice(&result.d_sigma.0);
        labels[cols::D_EPS_P].copy_from_slice(&result.d_eps_p.0);
        labels[cols::D_E] = result.d_e;
        Self {
            features,
            labels,
            provenance,
        }
    }

    pub fn state(&self) -> MaterialState {
        let f = &self.features;
        MaterialState {
            eps: PrincipalVec3::new(f[0], f[1], f[2]),
            sigma: PrincipalVec3::new(f[3], f[4], f[5]),
            e: f[cols::E],
            eps_p: PrincipalVec3::new(f[7], f[8], f[9]),
        }
    }

    pub fn d_eps(&self) -> PrincipalVec3 {
        PrincipalVec3::new(self.features[10], self.features[11], self.features[12])
    }

    pub fn d_sigma(&self) -> PrincipalVec3 {
        PrincipalVec3::new(self.labels[0], self.labels[1], self.labels[2])
    }

    pub fn d_eps_p(&self) -> PrincipalVec3 {
        PrincipalVec3::new(self.labels[3], self.labels[4], self.labels[5])
    }
}

/// Why a generated path stopped.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum PathEnd {
    Completed,
    LeftPressureBounds,
    IntegrationFailed,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PathCounts {
    pub completed: usize,
    pub left_bounds: usize,
    pub failed: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub samples: Vec<PathSample>,
    pub config_digest: String,
    pub path_counts: PathCounts,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Digest of every feature and label bit pattern, in order.
    pub fn content_digest(&self) -> String {
        content_digest(self.samples.iter())
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            samples: indices.iter().map(|&i| self.samples[i].clone()).collect(),
            config_digest: self.config_digest.clone(),
            path_counts: PathCounts::default(),
        }
    }
}

pub(crate) fn content_digest<'a>(samples: impl Iterator<Item = &'a PathSample>) -> String {
    let mut h = Sha256::new();
    for s in samples {
        for v in s.features.iter().chain(s.labels.iter()) {
            h.update(v.to_bits().to_le_bytes());
        }
    }
    hex::encode(h.finalize())
}

/// Uniform direction on the unit sphere of principal strain space.
pub fn sample_direction<R: Rng + ?Sized>(rng: &mut R) -> PrincipalVec3 {
    loop {
        let v = PrincipalVec3::new(
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
        );
        let n = v.norm();
        if n > 1e-8 {
            return v * (1.0 / n);
        }
    }
}

pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Seed of one path, a pure function of the master seed and the path indices.
pub fn path_seed(master_seed: u64, condition: usize, test: usize) -> u64 {
    splitmix64(splitmix64(master_seed) ^ splitmix64(((condition as u64) << 32) | test as u64))
}

/// Drives one proportional path. Samples up to a failure are kept.
pub fn generate_path<R: Rng + ?Sized>(
    p_in: f64,
    e_in: f64,
    direction: &PrincipalVec3,
    rng: &mut R,
    config: &GenConfig,
    ids: Option<(usize, usize)>,
) -> Result<(Vec<PathSample>, PathEnd)> {
    if (direction.norm() - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument("direction must be a unit vector".into()));
    }
    let mut state = MaterialState::isotropic(p_in, e_in);
    state.validate()?;
    let [lo, hi] = config.step_mag_range;
    let [p_min, p_max] = config.p_bounds;
    let mut samples = Vec::with_capacity(config.max_steps);
    for step in 0..config.max_steps {
        let mag = if hi > lo { rng.random_range(lo..hi) } else { lo };
        let d_eps = *direction * mag;
        let result = match integrate_step(&state, &d_eps, &config.params, &config.tolerances) {
            Ok(r) => r,
            Err(_) => return Ok((samples, PathEnd::IntegrationFailed)),
        };
        let next = result.apply(&state, &d_eps);
        let p = next.mean_stress();
        if !(p >= p_min && p <= p_max) {
            return Ok((samples, PathEnd::LeftPressureBounds));
        }
        let provenance = ids.map(|(condition, test)| Provenance { condition, test, step });
        samples.push(PathSample::new(&state, &d_eps, &result, provenance));
        state = next;
    }
    Ok((samples, PathEnd::Completed))
}

/// Initial condition of a flattened condition index (p varies slowest).
pub fn condition_at(config: &GenConfig, condition: usize) -> (f64, f64) {
    let ne = config.e_grid.len();
    (config.p_grid[condition / ne], config.e_grid[condition % ne])
}

/// Regenerates a single path of the dataset described by `config`.
pub fn regenerate_path(config: &GenConfig, condition: usize, test: usize) -> Result<(Vec<PathSample>, PathEnd, PrincipalVec3)> {
    let (p_in, e_in) = condition_at(config, condition);
    let mut rng = ChaCha8Rng::seed_from_u64(path_seed(config.master_seed, condition, test));
    let direction = sample_direction(&mut rng);
    let (samples, end) = generate_path(p_in, e_in, &direction, &mut rng, config, Some((condition, test)))?;
    Ok((samples, end, direction))
}

pub fn generate_dataset(config: &GenConfig) -> Result<Dataset> {
    config.validate()?;
    let n_conditions = config.p_grid.len() * config.e_grid.len();
    let mut samples = Vec::new();
    let mut counts = PathCounts::default();
    for condition in 0..n_conditions {
        for test in 0..config.tests_per_condition {
            let (path, end, _) = regenerate_path(config, condition, test)?;
            match end {
                PathEnd::Completed => counts.completed += 1,
                PathEnd::LeftPressureBounds => counts.left_bounds += 1,
                PathEnd::IntegrationFailed => counts.failed += 1,
            }
            samples.extend(path);
        }
    }
    Ok(Dataset {
        samples,
        config_digest: config.digest(),
        path_counts: counts,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ColumnStats {
    pub mean: f64,
    pub min: f64,
    pub max: f64,
    pub sd: f64,
}

impl ColumnStats {
    fn from_values(values: impl Iterator<Item = f64>) -> Self {
        let (mut n, mut mean, mut m2) = (0.0, 0.0, 0.0);
        let (mut min, mut max) = (f64::INFINITY, f64::NEG_INFINITY);
        for v in values {
            n += 1.0;
            let delta = v - mean;
            mean += delta / n;
            m2 += delta * (v - mean);
            min = min.min(v);
            max = max.max(v);
        }
        Self {
            mean,
            min,
            max,
            sd: (m2 / n).max(0.0).sqrt(),
        }
    }
}

/// Summary rows of derived quantities. Increment rows of shear measures
/// (`dgamma`, `dgamma_p`, `dq`) are invariants of the increment itself and
/// therefore non-negative.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub rows: Vec<(String, String, ColumnStats)>,
}

impl DatasetStats {
    pub fn get(&self, name: &str) -> Option<&ColumnStats> {
        self.rows.iter().find(|(n, _, _)| n == name).map(|(_, _, s)| s)
    }

    pub fn to_table(&self) -> String {
        let mut out = format!("{:<10} {:<5} {:>12} {:>12} {:>12} {:>12}\n", "data", "unit", "mean", "min", "max", "sd");
        for (name, unit, s) in &self.rows {
            out.push_str(&format!(
                "{:<10} {:<5} {:>12.3e} {:>12.3e} {:>12.3e} {:>12.3e}\n",
                name, unit, s.mean, s.min, s.max, s.sd
            ));
        }
        out
    }
}

pub fn dataset_stats(ds: &Dataset) -> Result<DatasetStats> {
    if ds.is_empty() {
        return Err(Error::InvalidArgument("statistics of an empty dataset".into()));
    }
    type Extract = fn(&PathSample) -> f64;
    let rows: [(&str, &str, Extract); 14] = [
        ("eps_v", "-", |s| s.state().eps.sum()),
        ("deps_v", "-", |s| s.d_eps().sum()),
        ("gamma", "-", |s| strain_invariants(&s.state().eps).gamma),
        ("dgamma", "-", |s| strain_invariants(&s.d_eps()).gamma),
        ("eps_vp", "-", |s| s.state().eps_p.sum()),
        ("deps_vp", "-", |s| s.d_eps_p().sum()),
        ("gamma_p", "-", |s| s.state().gamma_p()),
        ("dgamma_p", "-", |s| strain_invariants(&s.d_eps_p()).gamma),
        ("p", "kPa", |s| s.state().mean_stress()),
        ("dp", "kPa", |s| s.d_sigma().sum() / 3.0),
        ("q", "kPa", |s| stress_invariants(&s.state().sigma).q),
        ("dq", "kPa", |s| stress_invariants(&s.d_sigma()).q),
        ("e", "-", |s| s.features[cols::E]),
        ("de", "-", |s| s.labels[cols::D_E]),
    ];
    Ok(DatasetStats {
        rows: rows
            .iter()
            .map(|(name, unit, f)| (name.to_string(), unit.to_string(), ColumnStats::from_values(ds.samples.iter().map(f))))
            .collect(),
    })
}

/// Writes the dataset as CSV with a fixed header and 17 significant digits.
pub fn write_dataset_csv(ds: &Dataset, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(FEATURE_NAMES.iter().chain(LABEL_NAMES.iter()))?;
    for s in &ds.samples {
        w.write_record(s.features.iter().chain(s.labels.iter()).map(|v| format!("{v:.16e}")))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_dataset_csv(path: &Path) -> Result<Dataset> {
    let mut r = csv::Reader::from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    let expected: Vec<&str> = FEATURE_NAMES.iter().chain(LABEL_NAMES.iter()).copied().collect();
    if header != expected {
        return Err(Error::Format(format!("unexpected dataset header {header:?}")));
    }
    let mut samples = Vec::new();
    for (row, rec) in r.records().enumerate() {
        let rec = rec?;
        if rec.len() != N_FEATURES + N_LABELS {
            return Err(Error::Format(format!("row {row}: expected {} columns", N_FEATURES + N_LABELS)));
        }
        let mut values = [0.0; N_FEATURES + N_LABELS];
        for (i, field) in rec.iter().enumerate() {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| Error::Format(format!("row {row}, column {i}: bad number {field:?}")))?;
            if !v.is_finite() {
                return Err(Error::NonFinite(format!("row {row}, column {i}")));
            }
            values[i] = v;
        }
        let mut features = [0.0; N_FEATURES];
        let mut labels = [0.0; N_LABELS];
        features.copy_from_slice(&values[..N_FEATURES]);
        labels.copy_from_slice(&values[N_FEATURES..]);
        samples.push(PathSample {
            features,
            labels,
            provenance: None,
        });
    }
    Ok(Dataset {
        samples,
        config_digest: String::new(),
        path_counts: PathCounts::default(),
    })
}

/// Sidecar metadata written next to a dataset file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetMetadata {
    pub format_version: u32,
    pub config: GenConfig,
    pub config_digest: String,
    pub content_digest: String,
    pub n_samples: usize,
    pub path_counts: PathCounts,
    pub stats: Option<DatasetStats>,
}

impl DatasetMetadata {
    pub fn new(config: &GenConfig, ds: &Dataset) -> Self {
        Self {
            format_version: 1,
            config: config.clone(),
            config_digest: config.digest(),
            content_digest: ds.content_digest(),
            n_samples: ds.len(),
            path_counts: ds.path_counts,
            stats: dataset_stats(ds).ok(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn directions_are_unit_and_deterministic() {
        let mut a = ChaCha8Rng::seed_from_u64(7);
        let mut b = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..1000 {
            let d = sample_direction(&mut a);
            assert!((d.norm() - 1.0).abs() < 1e-12);
            assert_eq!(d, sample_direction(&mut b));
        }
    }

    #[test]
    fn directions_are_uniform_on_average() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut acc = PrincipalVec3::ZERO;
        let n = 100_000;
        for _ in 0..n {
            acc += sample_direction(&mut rng);
        }
        let mean = acc * (1.0 / n as f64);
        assert!(mean.max_abs() < 0.02, "{mean:?}");
    }

    #[test]
    fn path_seeds_differ_between_paths() {
        let s: Vec<u64> = (0..4).flat_map(|c| (0..4).map(move |t| path_seed(1, c, t))).collect();
        let mut sorted = s.clone();
        sorted.sort_unstable();
        sorted.dedup();
        assert_eq!(sorted.len(), s.len());
        assert_ne!(path_seed(1, 0, 0), path_seed(2, 0, 0));
    }

    #[test]
    fn isotropic_direction_void_ratio_label() {
        let config = GenConfig {
            max_steps: 1,
            step_mag_range: [1e-3, 1e-3],
            ..GenConfig::desk_scale(3)
        };
        let dir = PrincipalVec3::splat(1.0 / 3f64.sqrt());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (samples, end) = generate_path(200.0, 0.74, &dir, &mut rng, &config, None).unwrap();
        assert_eq!(end, PathEnd::Completed);
        assert_eq!(samples.len(), 1);
        let s = &samples[0];
        let d = s.d_eps();
        for i in 0..3 {
            assert!((d[i] - 1e-3 / 3f64.sqrt()).abs() < 1e-18);
        }
        assert_eq!(s.labels[cols::D_E], -(1.0 + 0.74) * d.sum());
    }

    #[test]
    fn expansion_path_leaves_pressure_bounds() {
        let config = GenConfig::desk_scale(5);
        let dir = PrincipalVec3::new(-1.0, -1.0, -0.5);
        let dir = dir * (1.0 / dir.norm());
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (samples, end) = generate_path(50.0, 0.6, &dir, &mut rng, &config, None).unwrap();
        assert_eq!(end, PathEnd::LeftPressureBounds);
        assert!(samples.len() < config.max_steps);
        assert!(samples.iter().all(|s| s.state().mean_stress() >= 1.0));
    }

    #[test]
    fn empty_grid_gives_empty_dataset() {
        let config = GenConfig {
            p_grid: vec![],
            ..GenConfig::desk_scale(1)
        };
        let ds = generate_dataset(&config).unwrap();
        assert!(ds.is_empty());
        assert!(dataset_stats(&ds).is_err());
    }

    #[test]
    fn single_sample_stats_are_degenerate() {
        let config = GenConfig {
            p_grid: vec![200.0],
            e_grid: vec![0.7],
            tests_per_condition: 1,
            max_steps: 1,
            ..GenConfig::desk_scale(9)
        };
        let ds = generate_dataset(&config).unwrap();
        assert_eq!(ds.len(), 1);
        let stats = dataset_stats(&ds).unwrap();
        for (_, _, s) in &stats.rows {
            assert_eq!(s.mean, s.min);
            assert_eq!(s.max, s.min);
            assert_eq!(s.sd, 0.0);
        }
    }

    #[test]
    fn config_validation() {
        let mut c = GenConfig::desk_scale(0);
        c.validate().unwrap();
        c.step_mag_range = [0.0, 0.02];
        assert!(c.validate().is_err());
        c = GenConfig::desk_scale(0);
        c.p_bounds = [0.5, 1e5];
        assert!(c.validate().is_err());
    }
}
