//! Run configuration loaded from TOML.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::detector_model::DetectorModel;
use crate::fisher::{DEFAULT_CRB_FRAMES, MIN_STEP_TESLA, RELATIVE_STEP};
use crate::spectral_meter::{PhysicalConfig, SchemeConfig};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("cannot parse {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// Photon-number grid: an explicit list or log-spaced points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum NGrid {
    List(Vec<f64>),
    Log { min: f64, max: f64, points: usize },
}

impl Default for NGrid {
    fn default() -> Self {
        NGrid::Log { min: 1e5, max: 1e11, points: 24 }
    }
}

impl NGrid {
    pub fn values(&self) -> Vec<f64> {
        match *self {
            NGrid::List(ref v) => v.clone(),
            NGrid::Log { min, max, points } => {
                if points == 1 {
                    return vec![min];
                }
                let (a, b) = (min.log10(), max.log10());
                (0..points).map(|i| 10f64.powf(a + (b - a) * i as f64 / (points - 1) as f64)).collect()
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    /// True field in T.
    pub b_true: f64,
    pub n_grid: NGrid,
    /// Frame count behind the reported precision bound.
    pub frames_for_crb: usize,
    /// Derivative step relative to `b_true`.
    pub relative_step: f64,
    /// Absolute lower bound on the derivative step, in T.
    pub min_step: f64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            b_true: 0.028,
            n_grid: NGrid::default(),
            frames_for_crb: DEFAULT_CRB_FRAMES,
            relative_step: RELATIVE_STEP,
            min_step: MIN_STEP_TESLA,
        }
    }
}

impl SweepConfig {
    pub fn step(&self) -> f64 {
        (self.relative_step * self.b_true.abs()).max(self.min_step)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimationConfig {
    pub pool_size: usize,
    pub batch_size: usize,
    pub repeats: usize,
    /// Search bracket is `[0, bracket_factor·B]`.
    pub bracket_factor: f64,
    /// Bracket half-width scale in T when `B = 0`.
    pub zero_bracket_scale: f64,
}

impl Default for EstimationConfig {
    fn default() -> Self {
        Self { pool_size: 600, batch_size: 60, repeats: 50, bracket_factor: 4.0, zero_bracket_scale: 1e-3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
    pub fisher_csv: String,
    pub precision_csv: String,
    pub estimate_csv: String,
    pub pools_dir: String,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("out"),
            fisher_csv: "fisher_sweep.csv".into(),
            precision_csv: "precision_sweep.csv".into(),
            estimate_csv: "estimate.csv".into(),
            pools_dir: "pools".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    #[serde(default)]
    pub physical: PhysicalConfig,
    #[serde(default)]
    pub detector: DetectorModel,
    pub schemes: Vec<SchemeConfig>,
    #[serde(default)]
    pub sweep: SweepConfig,
    #[serde(default)]
    pub estimation: EstimationConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Read { path: path.to_owned(), source })?;
        let cfg = Self::from_toml(&text).map_err(|message| ConfigError::Parse { path: path.to_owned(), message })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |m: String| Err(ConfigError::Invalid(m));
        if self.schemes.is_empty() {
            return invalid("scheme list is empty".into());
        }
        self.physical.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.detector.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        for s in &self.schemes {
            s.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        }
        if let NGrid::Log { min, max, points } = self.sweep.n_grid {
            if points == 0 || !(min > 0.0 && max >= min && max.is_finite()) {
                return invalid(format!("log grid needs 0 < min <= max and points >= 1, got {min}, {max}, {points}"));
            }
        }
        let grid = self.sweep.n_grid.values();
        if grid.is_empty() {
            return invalid("n_grid is empty".into());
        }
        if grid.iter().any(|&n| !(n > 0.0 && n.is_finite())) {
            return invalid("n_grid values must be positive and finite".into());
        }
        if grid.windows(2).any(|w| w[1] <= w[0]) {
            return invalid("n_grid must be strictly ascending".into());
        }
        if !self.sweep.b_true.is_finite() {
            return invalid("b_true must be finite".into());
        }
        if self.sweep.frames_for_crb == 0 {
            return invalid("frames_for_crb must be at least 1".into());
        }
        if !(self.sweep.relative_step > 0.0 && self.sweep.min_step > 0.0) {
            return invalid("derivative steps must be positive".into());
        }
        let e = &self.estimation;
        if e.batch_size == 0 || e.repeats == 0 || e.pool_size < e.batch_size {
            return invalid(format!(
                "estimation needs 1 <= batch_size <= pool_size and repeats >= 1, got {}/{}/{}",
                e.batch_size, e.pool_size, e.repeats
            ));
        }
        if !(e.bracket_factor > 1.0 && e.zero_bracket_scale > 0.0) {
            return invalid("bracket_factor must exceed 1 and zero_bracket_scale must be positive".into());
        }
        Ok(())
    }

    /// Hex SHA-256 of the resolved configuration, output locations excluded.
    pub fn hash(&self) -> String {
        let content = RunConfig { output: OutputConfig::default(), ..self.clone() };
        let json = serde_json::to_string(&content).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral_meter::Scheme;

    const MINIMAL: &str = r#"
        seed = 7
        [[schemes]]
        scheme = "CM"
        [[schemes]]
        scheme = "BWM"
        epsilon = 0.2
        bias_order = 5
        extinction_ratio = 90000.0
    "#;

    #[test]
    fn minimal_config_gets_defaults() {
        let cfg = RunConfig::from_toml(MINIMAL).unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.schemes[1].scheme, Scheme::BiasedWeak);
        assert_eq!(cfg.schemes[0].extinction_ratio, f64::INFINITY);
        let grid = cfg.sweep.n_grid.values();
        assert_eq!(grid.len(), 24);
        assert!((grid[0] - 1e5).abs() < 1e-6 && (grid[23] / 1e11 - 1.0).abs() < 1e-12);
        assert_eq!(cfg.estimation.pool_size, 600);
        assert!((cfg.sweep.step() - 2.8e-6).abs() < 1e-18);
    }

    #[test]
    fn explicit_grid_and_infinite_ratio() {
        let text = "seed = 1\nschemes = [{ scheme = \"SWM\", epsilon = 0.1, extinction_ratio = inf }]\n[sweep]\nn_grid = [1e5, 1e6]\nb_true = 1.43e-7\n";
        let cfg = RunConfig::from_toml(text).unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.sweep.n_grid.values(), vec![1e5, 1e6]);
        assert_eq!(cfg.sweep.step(), 1e-10);
    }

    #[test]
    fn bad_configs_are_rejected() {
        assert!(RunConfig::from_toml("schemes = []").is_err(), "seed is required");
        let empty = RunConfig::from_toml("seed = 1\nschemes = []").unwrap();
        assert!(empty.validate().is_err());
        let descending = RunConfig::from_toml(&format!("{MINIMAL}\n[sweep]\nn_grid = [1e6, 1e5]")).unwrap();
        assert!(descending.validate().is_err());
        assert!(RunConfig::from_toml(&format!("{MINIMAL}\nbogus = 1")).is_err());
    }

    #[test]
    fn hash_tracks_content() {
        let a = RunConfig::from_toml(MINIMAL).unwrap();
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.output.dir = PathBuf::from("elsewhere");
        assert_eq!(a.hash(), b.hash());
        b.seed = 8;
        assert_ne!(a.hash(), b.hash());
    }
}
