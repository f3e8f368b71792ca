//! Experiment configuration: a TOML document with nested sections, loaded,
//! validated, and resolved into the exact values a run will use. The
//! resolved form is echoed into every output directory.

use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::factorization::FactorizationMethod;
use crate::mathx::is_positive_finite;
use crate::privacy::{NoiseMechanism, PrivacyBudget};

pub const CONFIG_SCHEMA_VERSION: u32 = 1;

/// Which experiment a config drives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    BnormStudy,
    ImpactTau,
    BudgetComparison,
    Custom,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSection {
    pub learners: usize,
    pub rounds: usize,
    pub tau: usize,
    #[serde(default = "default_dim")]
    pub dim: usize,
    #[serde(default = "default_clip")]
    pub clip_bound: f64,
    #[serde(default = "default_eta_g")]
    pub eta_g: f64,
    /// Explicit effective step; when absent it is derived from the data as
    /// `1 / (8 L_hat)`.
    #[serde(default)]
    pub eta_tilde: Option<f64>,
    #[serde(default = "default_mechanism")]
    pub mechanism: String,
    #[serde(default = "default_scale")]
    pub sensitivity_scale: f64,
}

fn default_dim() -> usize {
    5
}
fn default_clip() -> f64 {
    1.0
}
fn default_eta_g() -> f64 {
    1.0
}
fn default_mechanism() -> String {
    "correlated_mf".into()
}
fn default_scale() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BudgetSection {
    pub epsilon: f64,
    pub delta: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    #[serde(default = "default_het")]
    pub alpha: f64,
    #[serde(default = "default_het")]
    pub beta: f64,
    /// Rescale features to norm at most 1 so clipping is provably inactive.
    #[serde(default = "default_true")]
    pub normalize: bool,
    /// Optional CSV cache path: read if present, else generated and written.
    #[serde(default)]
    pub cache: Option<PathBuf>,
}

fn default_het() -> f64 {
    0.1
}
fn default_true() -> bool {
    true
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection {
            alpha: 0.1,
            beta: 0.1,
            normalize: true,
            cache: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FactorizationSection {
    #[serde(default = "default_method")]
    pub method: String,
    /// Optional directory for CSV bundles: read if present, else written.
    #[serde(default)]
    pub cache_dir: Option<PathBuf>,
    #[serde(default = "default_fact_iters")]
    pub max_iters: usize,
    #[serde(default = "default_fact_tol")]
    pub tol: f64,
}

fn default_method() -> String {
    "sqrt_normalized".into()
}
fn default_fact_iters() -> usize {
    crate::factorization::DEFAULT_OPTIMIZE_MAX_ITERS
}
fn default_fact_tol() -> f64 {
    crate::factorization::DEFAULT_OPTIMIZE_TOL
}

impl Default for FactorizationSection {
    fn default() -> Self {
        FactorizationSection {
            method: default_method(),
            cache_dir: None,
            max_iters: default_fact_iters(),
            tol: default_fact_tol(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImpactTauSection {
    pub tau_list: Vec<usize>,
    pub rounds_list: Vec<usize>,
}

/// Which step the baseline's tuning grid divides.
///
/// `server_matched` starts from eta_tilde itself, equalizing the per-round
/// noise injection scale of the two mechanisms (the baseline's per-round
/// direction is the tau-summed batch gradient, so its signal magnitude is
/// larger until the grid shrinks it). `local_matched` starts from
/// eta_tilde / tau, equalizing per-round signal movement instead; the
/// baseline's noise is then tau-times smaller per round than the mechanism
/// comparison intends, because its calibration is round-count-free.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineStepPolicy {
    ServerMatched,
    LocalMatched,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BudgetComparisonSection {
    pub epsilons: Vec<f64>,
    pub deltas: Vec<f64>,
    /// The baseline step grid, as divisors of the policy's base step.
    #[serde(default = "default_grid")]
    pub baseline_grid_denoms: Vec<u32>,
    #[serde(default = "default_policy")]
    pub baseline_step_policy: BaselineStepPolicy,
}

fn default_grid() -> Vec<u32> {
    vec![1, 2, 4, 8]
}

fn default_policy() -> BaselineStepPolicy {
    BaselineStepPolicy::LocalMatched
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BnormSection {
    pub rounds_list: Vec<usize>,
    #[serde(default = "default_bnorm_methods")]
    pub methods: Vec<String>,
}

fn default_bnorm_methods() -> Vec<String> {
    vec!["sqrt_normalized".into(), "trivial_identity_c".into()]
}

/// The on-disk experiment configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_schema")]
    pub schema_version: u32,
    pub experiment: ExperimentKind,
    pub seed: u64,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    /// 0 means "use all available cores".
    #[serde(default)]
    pub jobs: usize,
    pub sim: SimSection,
    pub budget: BudgetSection,
    #[serde(default)]
    pub data: DataSection,
    #[serde(default)]
    pub factorization: FactorizationSection,
    #[serde(default)]
    pub impact_tau: Option<ImpactTauSection>,
    #[serde(default)]
    pub budget_comparison: Option<BudgetComparisonSection>,
    #[serde(default)]
    pub bnorm: Option<BnormSection>,
}

fn default_schema() -> u32 {
    CONFIG_SCHEMA_VERSION
}
fn default_trials() -> usize {
    20
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::Config(format!("bad config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(format!("serialize: {e}")))
    }

    pub fn mechanism(&self) -> Result<NoiseMechanism> {
        NoiseMechanism::parse(&self.sim.mechanism).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn factorization_method(&self) -> Result<FactorizationMethod> {
        FactorizationMethod::parse(&self.factorization.method)
            .map_err(|e| Error::Config(e.to_string()))
    }

    pub fn privacy_budget(&self) -> Result<PrivacyBudget> {
        PrivacyBudget::new(self.budget.epsilon, self.budget.delta)
            .map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != CONFIG_SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "unsupported schema_version {} (expected {CONFIG_SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if self.trials == 0 {
            return Err(Error::Config("trials must be at least 1".into()));
        }
        if self.sim.learners == 0 || self.sim.rounds == 0 || self.sim.tau == 0 || self.sim.dim == 0
        {
            return Err(Error::Config(
                "sim.learners, sim.rounds, sim.tau, sim.dim must all be at least 1".into(),
            ));
        }
        if let Some(eta_tilde) = self.sim.eta_tilde {
            if !eta_tilde.is_finite() || eta_tilde <= 0.0 {
                return Err(Error::Config("sim.eta_tilde must be positive".into()));
            }
        }
        if !is_positive_finite(self.sim.eta_g) || !is_positive_finite(self.sim.clip_bound) {
            return Err(Error::Config(
                "sim.eta_g and sim.clip_bound must be positive".into(),
            ));
        }
        if self.data.alpha < 0.0 || self.data.beta < 0.0 {
            return Err(Error::Config(
                "data.alpha and data.beta must be nonnegative".into(),
            ));
        }
        self.mechanism()?;
        self.factorization_method()?;
        self.privacy_budget()?;
        if self.experiment == ExperimentKind::ImpactTau {
            let section = self
                .impact_tau
                .as_ref()
                .ok_or_else(|| Error::Config("impact_tau section is required".into()))?;
            if section.tau_list.is_empty() || section.tau_list.len() != section.rounds_list.len() {
                return Err(Error::Config(
                    "impact_tau.tau_list and rounds_list must be nonempty and aligned".into(),
                ));
            }
            // Equal total data across settings: tau_k * R_k constant.
            let total: Vec<usize> = section
                .tau_list
                .iter()
                .zip(&section.rounds_list)
                .map(|(t, r)| t * r)
                .collect();
            if total.windows(2).any(|w| w[0] != w[1]) {
                return Err(Error::Config(format!(
                    "impact_tau requires tau_k * rounds_k constant across settings, got {total:?}"
                )));
            }
        }
        if self.experiment == ExperimentKind::BudgetComparison {
            let section = self
                .budget_comparison
                .as_ref()
                .ok_or_else(|| Error::Config("budget_comparison section is required".into()))?;
            if section.epsilons.is_empty() || section.epsilons.len() != section.deltas.len() {
                return Err(Error::Config(
                    "budget_comparison.epsilons and deltas must be nonempty and aligned".into(),
                ));
            }
            if section.baseline_grid_denoms.is_empty() || section.baseline_grid_denoms.contains(&0)
            {
                return Err(Error::Config(
                    "budget_comparison.baseline_grid_denoms must be nonzero".into(),
                ));
            }
            for (&e, &d) in section.epsilons.iter().zip(&section.deltas) {
                PrivacyBudget::new(e, d).map_err(|err| Error::Config(err.to_string()))?;
            }
        }
        if self.experiment == ExperimentKind::BnormStudy && self.bnorm.is_none() {
            return Err(Error::Config("bnorm section is required".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
experiment = "custom"
seed = 7

[sim]
learners = 2
rounds = 10
tau = 2

[budget]
epsilon = 5.0
delta = 1e-3
"#;

    #[test]
    fn minimal_config_parses_with_defaults() {
        let cfg = ExperimentConfig::from_toml_str(MINIMAL).unwrap();
        assert_eq!(cfg.trials, 20);
        assert_eq!(cfg.sim.dim, 5);
        assert_eq!(cfg.sim.eta_g, 1.0);
        assert_eq!(cfg.sim.clip_bound, 1.0);
        assert!(cfg.data.normalize);
        assert_eq!(cfg.factorization.method, "sqrt_normalized");
        assert_eq!(cfg.mechanism().unwrap(), NoiseMechanism::CorrelatedMf);
    }

    #[test]
    fn roundtrips_through_toml() {
        let cfg = ExperimentConfig::from_toml_str(MINIMAL).unwrap();
        let text = cfg.to_toml_string().unwrap();
        let again = ExperimentConfig::from_toml_str(&text).unwrap();
        assert_eq!(again.seed, cfg.seed);
        assert_eq!(again.sim.rounds, cfg.sim.rounds);
    }

    #[test]
    fn impact_tau_requires_equal_total_data() {
        let text = format!("{MINIMAL}\n[impact_tau]\ntau_list = [1, 2]\nrounds_list = [10, 4]\n");
        let mut cfg = ExperimentConfig::from_toml_str(&text).unwrap();
        cfg.experiment = ExperimentKind::ImpactTau;
        assert!(cfg.validate().is_err());
        let ok = format!("{MINIMAL}\n[impact_tau]\ntau_list = [1, 2]\nrounds_list = [10, 5]\n");
        let mut cfg = ExperimentConfig::from_toml_str(&ok).unwrap();
        cfg.experiment = ExperimentKind::ImpactTau;
        cfg.validate().unwrap();
    }

    #[test]
    fn rejects_bad_values() {
        assert!(ExperimentConfig::from_toml_str("experiment = \"custom\"").is_err());
        let bad_eps = MINIMAL.replace("epsilon = 5.0", "epsilon = -1.0");
        assert!(ExperimentConfig::from_toml_str(&bad_eps).is_err());
        let bad_mech = format!("{MINIMAL}\n[x]\n").replace("[x]", "");
        assert!(ExperimentConfig::from_toml_str(&bad_mech).is_ok());
        let unknown = format!("{MINIMAL}\nnot_a_field = 3\n");
        assert!(ExperimentConfig::from_toml_str(&unknown).is_err());
    }
}
