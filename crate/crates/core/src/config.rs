//! Experiment configuration: one schema-versioned TOML file describing the
//! deterioration model, the correlation structure, the structural system,
//! the cost model, and optional training / heuristic-search settings.
//! Unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::correlation::{conditional_initial_belief, fit_loadings, CorrelationSpec};
use crate::ddmac::TrainConfig;
use crate::discretization::{DeteriorationModel, FatigueParams};
use crate::environment::{CostModel, EnvConfig, Environment, RiskMode};
use crate::error::{Error, Result};
use crate::exec::ExecMode;
use crate::heuristics::SearchProtocol;
use crate::reliability::{
    demo_frame, synthetic_jacket_frame, FrameSystem, LoadModel, ResistanceTable, SystemModel,
};

pub const SCHEMA_VERSION: u32 = 1;

/// Top-level experiment description.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub environment: EnvironmentSection,
    pub discretization: DiscretizationSection,
    #[serde(default = "CorrelationSpec::independent")]
    pub correlation: CorrelationSpec,
    /// Seed for the correlation-fit hyperparameter search.
    #[serde(default = "default_fit_seed")]
    pub correlation_fit_seed: u64,
    pub system: SystemSection,
    #[serde(default)]
    pub training: Option<TrainConfig>,
    #[serde(default)]
    pub heuristics: Option<SearchProtocol>,
}

fn default_fit_seed() -> u64 {
    3
}

/// Horizon, discounting, costs, and risk accounting.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvironmentSection {
    pub n_components: usize,
    pub horizon_years: usize,
    pub gamma: f64,
    pub cost_model: CostModel,
    pub r_fail: f64,
    #[serde(default)]
    pub risk_mode: RiskMode,
    /// Base seed recorded in the environment config (episode seeds come
    /// from the command line).
    #[serde(default)]
    pub seed: u64,
}

impl EnvironmentSection {
    pub fn to_env_config(&self) -> EnvConfig {
        EnvConfig {
            n_components: self.n_components,
            horizon_years: self.horizon_years,
            gamma: self.gamma,
            cost_model: self.cost_model.clone(),
            r_fail: self.r_fail,
            risk_mode: self.risk_mode,
            seed: self.seed,
        }
    }
}

/// Grid sizes and Monte Carlo effort for the transition-table build.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiscretizationSection {
    #[serde(default)]
    pub fatigue: FatigueParams,
    pub n_crack: usize,
    pub n_rate: usize,
    pub mc_samples: usize,
    pub pod_mean: f64,
    pub build_seed: u64,
}

/// Structural system choice.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SystemSection {
    KOutOfN {
        k: usize,
    },
    /// Built-in 3-element demonstration frame.
    DemoFrame,
    /// Built-in synthetic 13-element jacket frame.
    JacketFrame,
    /// Frame loaded from a resistance-table file.
    Frame {
        resistance_table: PathBuf,
        hotspots_of_element: Vec<Vec<usize>>,
        #[serde(default)]
        load: LoadModel,
    },
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::Config(format!("config parse error: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self)
            .map_err(|e| Error::Config(format!("config serialization failed: {e}")))
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "schema_version {} unsupported (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        self.environment.to_env_config().validate()?;
        self.correlation.validate(self.environment.n_components)?;
        if let Some(t) = &self.training {
            t.validate()?;
        }
        if let SystemSection::KOutOfN { k } = self.system {
            if k == 0 || k > self.environment.n_components {
                return Err(Error::Config(format!(
                    "k-out-of-n requires 1 <= k <= {}, got {k}",
                    self.environment.n_components
                )));
            }
        }
        Ok(())
    }

    /// Builds the structural system; frame resistance-table paths resolve
    /// relative to `base_dir`.
    pub fn build_system(&self, base_dir: &Path) -> Result<SystemModel> {
        Ok(match &self.system {
            SystemSection::KOutOfN { k } => {
                SystemModel::KOutOfN { k: *k, n: self.environment.n_components }
            }
            SystemSection::DemoFrame => SystemModel::Frame(demo_frame()),
            SystemSection::JacketFrame => SystemModel::Frame(synthetic_jacket_frame()),
            SystemSection::Frame { resistance_table, hotspots_of_element, load } => {
                let path = if resistance_table.is_absolute() {
                    resistance_table.clone()
                } else {
                    base_dir.join(resistance_table)
                };
                let resistance = ResistanceTable::read_file(&path)?;
                SystemModel::Frame(FrameSystem {
                    hotspots_of_element: hotspots_of_element.clone(),
                    resistance,
                    load: *load,
                })
            }
        })
    }

    /// Builds the full environment: transition tables, fitted correlation
    /// loadings, conditional initial beliefs, and the structural system.
    pub fn build_environment(&self, base_dir: &Path, mode: ExecMode) -> Result<Environment> {
        let d = &self.discretization;
        let model = DeteriorationModel::build(
            d.fatigue.clone(),
            d.n_crack,
            d.n_rate,
            d.mc_samples,
            d.pod_mean,
            d.build_seed,
            mode,
        )?;
        let structure = fit_loadings(
            &self.correlation,
            self.environment.n_components,
            self.correlation_fit_seed,
        )?;
        let prior = conditional_initial_belief(&structure, &model.grids, model.params.d0_mean);
        let system = self.build_system(base_dir)?;
        Environment::new(self.environment.to_env_config(), model, structure, prior, system)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal_toml() -> String {
        r#"
schema_version = 1

[environment]
n_components = 2
horizon_years = 8
gamma = 0.95
r_fail = -10000.0
cost_model = { kind = "individual", r_ins = -1.0, r_rep = -20.0 }

[discretization]
n_crack = 12
n_rate = 8
mc_samples = 10000
pod_mean = 8.0
build_seed = 99

[system]
kind = "k_out_of_n"
k = 2
"#
        .to_string()
    }

    #[test]
    fn minimal_config_parses_and_builds() {
        let cfg = ExperimentConfig::from_toml(&minimal_toml()).unwrap();
        assert_eq!(cfg.schema_version, 1);
        assert!(cfg.training.is_none());
        assert!(cfg.correlation.n_hyper == 0);
        let env = cfg.build_environment(Path::new("."), ExecMode::Sequential).unwrap();
        assert_eq!(env.config.n_components, 2);
        assert_eq!(env.model.grids.n_crack, 12);
        // defaults flow through
        assert_eq!(env.model.params.d_crit, 20.0);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let bad = minimal_toml().replace("[system]", "mystery_key = 1\n\n[system]");
        let err = ExperimentConfig::from_toml(&bad).unwrap_err();
        assert!(err.to_string().contains("mystery_key"), "{err}");

        let bad_nested =
            minimal_toml().replace("pod_mean = 8.0", "pod_mean = 8.0\ntypo_field = 3");
        assert!(ExperimentConfig::from_toml(&bad_nested).is_err());
    }

    #[test]
    fn wrong_schema_version_is_rejected() {
        let bad = minimal_toml().replace("schema_version = 1", "schema_version = 2");
        let err = ExperimentConfig::from_toml(&bad).unwrap_err();
        assert!(err.to_string().contains("schema_version"), "{err}");
    }

    #[test]
    fn invalid_k_is_rejected() {
        let bad = minimal_toml().replace("k = 2", "k = 5");
        assert!(ExperimentConfig::from_toml(&bad).is_err());
    }

    #[test]
    fn correlated_campaign_config_with_training_sections() {
        let toml = format!(
            "{}\n{}",
            minimal_toml().replace(
                r#"cost_model = { kind = "individual", r_ins = -1.0, r_rep = -20.0 }"#,
                r#"cost_model = { kind = "campaign", r_camp = -5.0, r_ins_surplus = -0.3, r_rep = -20.0 }"#,
            ),
            r#"
[correlation]
mode = "equal"
rho = 0.8
n_hyper = 1
n_alpha_states = 10

[training]
episodes = 500

[heuristics]
stage1_realizations = 100
"#
        );
        let cfg = ExperimentConfig::from_toml(&toml).unwrap();
        assert_eq!(cfg.training.as_ref().unwrap().episodes, 500);
        // unspecified training fields fall back to defaults
        assert_eq!(cfg.training.as_ref().unwrap().batch_size, 64);
        assert_eq!(cfg.heuristics.unwrap().stage1_realizations, 100);
        assert_eq!(cfg.heuristics.unwrap().shortlist, 5);
        let env = cfg.build_environment(Path::new("."), ExecMode::Sequential).unwrap();
        assert!(!env.structure.is_independent());
    }

    #[test]
    fn frame_config_resolves_table_relative_to_base_dir() {
        let dir = tempfile::tempdir().unwrap();
        let frame = demo_frame();
        frame.resistance.write_file(dir.path().join("table.txt")).unwrap();
        let toml = minimal_toml().replace(
            "[system]\nkind = \"k_out_of_n\"\nk = 2\n",
            r#"[system]
kind = "frame"
resistance_table = "table.txt"
hotspots_of_element = [[0], [1]]
"#,
        );
        let cfg = ExperimentConfig::from_toml(&toml).unwrap();
        let system = cfg.build_system(dir.path()).unwrap();
        match system {
            SystemModel::Frame(f) => {
                assert_eq!(f.resistance.n_elements, 3);
                assert_eq!(f.load.mean_kn, 70.0);
            }
            _ => panic!("expected frame"),
        }
        // built-ins need no paths
        let toml2 = minimal_toml().replace("kind = \"k_out_of_n\"\nk = 2", "kind = \"demo_frame\"");
        let cfg2 = ExperimentConfig::from_toml(&toml2).unwrap();
        assert!(matches!(cfg2.build_system(Path::new("/nonexistent")).unwrap(), SystemModel::Frame(_)));
    }

    #[test]
    fn round_trips_through_toml() {
        let cfg = ExperimentConfig::from_toml(&minimal_toml()).unwrap();
        let text = cfg.to_toml().unwrap();
        let back = ExperimentConfig::from_toml(&text).unwrap();
        assert_eq!(back.environment.n_components, 2);
        assert_eq!(back.discretization.mc_samples, 10_000);
    }
}
