use std::path::{Path, PathBuf};

use epnn_core::arch::ArchKind;
use epnn_core::datagen::GenConfig;
use epnn_core::train::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    #[default]
    Desk,
    Paper,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerateSection {
    pub scale: Scale,
    pub p_grid: Option<Vec<f64>>,
    pub e_grid: Option<Vec<f64>>,
    pub tests_per_condition: Option<usize>,
    pub max_steps: Option<usize>,
    pub step_mag_range: Option<[f64; 2]>,
    pub p_bounds: Option<[f64; 2]>,
}

impl GenerateSection {
    pub fn resolve(&self, seed: u64) -> GenConfig {
        let mut c = match self.scale {
            Scale::Desk => GenConfig::desk_scale(seed),
            Scale::Paper => GenConfig::paper_scale(seed),
        };
        if let Some(v) = &self.p_grid {
            c.p_grid = v.clone();
        }
        if let Some(v) = &self.e_grid {
            c.e_grid = v.clone();
        }
        if let Some(v) = self.tests_per_condition {
            c.tests_per_condition = v;
        }
        if let Some(v) = self.max_steps {
            c.max_steps = v;
        }
        if let Some(v) = self.step_mag_range {
            c.step_mag_range = v;
        }
        if let Some(v) = self.p_bounds {
            c.p_bounds = v;
        }
        c
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainSection {
    pub arch: ArchKind,
    #[serde(flatten)]
    pub config: TrainConfig,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            arch: ArchKind::Epnn,
            config: TrainConfig::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum DriverKind {
    Proportional,
    #[default]
    Axisym,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateSection {
    pub driver: DriverKind,
    pub alpha: f64,
    pub steps: usize,
    /// Norm of each strain increment; defaults to the mean training magnitude.
    pub step_size: Option<f64>,
    pub pin: f64,
    pub ein: f64,
    /// Unit direction of a proportional driver (normalized on use).
    pub direction: [f64; 3],
    pub ground_truth: bool,
}

impl Default for SimulateSection {
    fn default() -> Self {
        Self {
            driver: DriverKind::Axisym,
            alpha: -2.0,
            steps: 70,
            step_size: None,
            pin: 225.0,
            ein: 0.62,
            direction: [0.0, 0.0, 1.0],
            ground_truth: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CurvesSection {
    pub fractions: Vec<f64>,
}

impl Default for CurvesSection {
    fn default() -> Self {
        Self {
            fractions: vec![0.05, 0.25, 1.0],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradcheckSection {
    pub instances: usize,
    pub batch: usize,
    pub h: f64,
    pub threshold: f64,
}

impl Default for GradcheckSection {
    fn default() -> Self {
        Self {
            instances: 5,
            batch: 8,
            h: 1e-6,
            threshold: 1e-6,
        }
    }
}

/// Everything a run needs; loaded from TOML, then overridden by flags.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub dataset: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub generate: GenerateSection,
    pub train: TrainSection,
    pub simulate: SimulateSection,
    pub curves: CurvesSection,
    pub gradcheck: GradcheckSection,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::new("missing-file", format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::new("config", format!("{}: {e}", path.display())))
    }

    pub fn out_dir(&self) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from("."))
    }

    pub fn dataset_path(&self) -> PathBuf {
        self.dataset.clone().unwrap_or_else(|| self.out_dir().join("dataset.csv"))
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        self.checkpoint
            .clone()
            .unwrap_or_else(|| self.out_dir().join(format!("checkpoint_{}.json", self.train.arch)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dotted_keys_and_sections_parse() {
        let cfg: RunConfig = toml::from_str(
            r#"
            seed = 7
            train.arch = "serial"
            train.epochs = 10
            generate.scale = "desk"
            generate.max_steps = 20
            [simulate]
            alpha = -1000.0
            "#,
        )
        .unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.train.arch, ArchKind::Serial);
        assert_eq!(cfg.train.config.epochs, 10);
        assert_eq!(cfg.train.config.curve_stride, 100);
        assert_eq!(cfg.generate.resolve(1).max_steps, 20);
        assert_eq!(cfg.simulate.alpha, -1000.0);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<RunConfig>("generate.nonsense = 1").is_err());
    }
}
