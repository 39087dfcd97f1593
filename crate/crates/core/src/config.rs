//! JSON run configuration consumed by the `oed` binary.

use std::collections::BTreeMap;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::criteria::IllPosedPolicy;
use crate::error::{OedError, Result};
use crate::optimizer::{GammaSweepConfig, OptimizerConfig};
use crate::postproc::{Metric, NominalParameterDistribution, RandomDesignKind};
use crate::scenarios::default_level_rule;
use crate::structural::TieredTowerConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ModelSpec {
    /// `{"preset": "demo"}`
    Preset {
        preset: String,
    },
    Tower(Box<TieredTowerConfig>),
}

impl Default for ModelSpec {
    fn default() -> Self {
        ModelSpec::Preset {
            preset: "demo".into(),
        }
    }
}

impl ModelSpec {
    pub fn tower(&self) -> Result<TieredTowerConfig> {
        match self {
            ModelSpec::Preset { preset } if preset == "demo" => Ok(TieredTowerConfig::demo()),
            ModelSpec::Preset { preset } => Err(OedError::InvalidConfig(format!(
                "unknown model preset {preset:?}"
            ))),
            ModelSpec::Tower(t) => Ok((**t).clone()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum OptimizeMode {
    #[default]
    Classical,
    RobustOneout,
    RobustPof,
    RobustClipping,
}

impl OptimizeMode {
    pub fn as_str(self) -> &'static str {
        match self {
            OptimizeMode::Classical => "classical",
            OptimizeMode::RobustOneout => "robust-oneout",
            OptimizeMode::RobustPof => "robust-pof",
            OptimizeMode::RobustClipping => "robust-clipping",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PofSpec {
    /// Failure probability per structural level.
    pub level_rule: BTreeMap<u32, f64>,
    /// Explicit per-sensor failure probabilities; overrides `level_rule`.
    pub q: Option<Vec<f64>>,
}

impl Default for PofSpec {
    fn default() -> Self {
        Self {
            level_rule: default_level_rule(),
            q: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClipSpec {
    pub threshold: f64,
    pub n_realizations: usize,
    /// Isotropic force variance; tuned from `target_level`/`target_rate`
    /// when absent.
    pub force_variance: Option<f64>,
    pub target_level: Option<u32>,
    pub target_rate: f64,
}

impl Default for ClipSpec {
    fn default() -> Self {
        Self {
            threshold: 500.0,
            n_realizations: 100,
            force_variance: None,
            target_level: None,
            target_rate: 0.8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScenarioSpec {
    NoFailure,
    /// Every set of `k` simultaneous failures, optionally only among the
    /// sensors a design uses.
    KOut {
        k: usize,
        #[serde(default)]
        support_only: bool,
    },
    Bernoulli {
        n_samps: usize,
    },
    Clipping,
    File {
        csv: PathBuf,
        summary: PathBuf,
    },
}

impl ScenarioSpec {
    pub fn label(&self) -> String {
        match self {
            ScenarioSpec::NoFailure => "nofailure".into(),
            ScenarioSpec::KOut { k, support_only } => {
                format!("{k}out{}", if *support_only { "_support" } else { "" })
            }
            ScenarioSpec::Bernoulli { .. } => "bernoulli".into(),
            ScenarioSpec::Clipping => "clipping".into(),
            ScenarioSpec::File { csv, .. } => csv
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "file".into()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RandomBaselineSpec {
    pub count: usize,
    /// Defaults to the largest support among the evaluated designs.
    #[serde(default)]
    pub support_size: Option<usize>,
    pub kind: RandomDesignKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateSpec {
    pub designs: Vec<PathBuf>,
    pub scenarios: Vec<ScenarioSpec>,
    pub metrics: Vec<Metric>,
    pub fractional_renorm: bool,
    pub random_baselines: Option<RandomBaselineSpec>,
    pub theta0: Option<NominalParameterDistribution>,
    pub n_test: usize,
    pub display_range: Option<[f64; 2]>,
}

impl Default for EvaluateSpec {
    fn default() -> Self {
        Self {
            designs: Vec::new(),
            scenarios: vec![ScenarioSpec::KOut {
                k: 1,
                support_only: false,
            }],
            metrics: vec![Metric::Logdet],
            fractional_renorm: false,
            random_baselines: None,
            theta0: None,
            n_test: 10,
            display_range: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub model: ModelSpec,
    /// Use an exported FRF instead of assembling the model.
    pub frf_csv: Option<PathBuf>,
    pub noise_sigma: f64,
    pub budget: f64,
    pub costs: Option<Vec<f64>>,
    pub mode: OptimizeMode,
    /// Run the penalty sweep for a binary design; otherwise stop at the
    /// unpenalized relaxed optimum.
    pub binary: bool,
    pub optimizer: OptimizerConfig,
    pub sweep: GammaSweepConfig,
    pub pof: PofSpec,
    pub clipping: ClipSpec,
    pub illposed_policy: IllPosedPolicy,
    pub evaluate: EvaluateSpec,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            model: ModelSpec::default(),
            frf_csv: None,
            noise_sigma: 1.0,
            budget: 12.0,
            costs: None,
            mode: OptimizeMode::default(),
            binary: true,
            optimizer: OptimizerConfig::default(),
            sweep: GammaSweepConfig::default(),
            pof: PofSpec::default(),
            clipping: ClipSpec::default(),
            illposed_policy: IllPosedPolicy::default(),
            evaluate: EvaluateSpec::default(),
        }
    }
}

impl RunConfig {
    /// Parses JSON, reporting the line and column of syntax errors.
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| {
            OedError::InvalidConfig(format!("line {}, column {}: {e}", e.line(), e.column()))
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.noise_sigma > 0.0) {
            return Err(OedError::InvalidConfig(
                "noise_sigma must be positive".into(),
            ));
        }
        if !(self.budget > 0.0) {
            return Err(OedError::Infeasible(format!(
                "budget must be positive, got {}",
                self.budget
            )));
        }
        self.optimizer.validate()?;
        self.sweep.validate()?;
        if self.frf_csv.is_none() {
            self.model.tower()?;
        }
        if self.evaluate.n_test == 0 {
            return Err(OedError::InvalidConfig(
                "evaluate.n_test must be at least 1".into(),
            ));
        }
        Ok(())
    }
}
