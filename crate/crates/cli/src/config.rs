use std::path::{Path, PathBuf};

use netdr::analysis::{AnalysisSpec, OutcomeModel};
use netdr::estimators::{Estimand, EstimatorKind, Pooling};
use netdr::outcome::OutcomeDesign;
use netdr::propensity::PropensitySpec;
use netdr::simulate::Study;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// Which contrasts `analyze` reports at every alpha.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EffectKind {
    De,
    Ie,
    Te,
    Oe,
}

/// Config file of the `analyze` subcommand.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisConfig {
    /// Edge list, one `src,dst` pair per line.
    pub edges: Option<PathBuf>,
    /// Node attributes: `Z`, `Y`, covariates, and optionally `id`.
    pub nodes: Option<PathBuf>,
    /// The edge list starts with a header line.
    pub header: bool,
    pub drop_isolates: bool,
    pub propensity: PropensitySpec,
    pub outcome: OutcomeDesign,
    pub outcome_model: OutcomeModel,
    pub estimators: Vec<EstimatorKind>,
    pub alphas: Vec<f64>,
    /// Reference allocation of IE, TE and OE.
    pub alpha_prime: f64,
    pub effects: Vec<EffectKind>,
    pub confidence: f64,
    pub pooling: Pooling,
    pub small_sample: bool,
    /// Recorded for reproducibility; the analysis itself draws no random numbers.
    pub seed: u64,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            edges: None,
            nodes: None,
            header: false,
            drop_isolates: false,
            propensity: PropensitySpec::default(),
            outcome: OutcomeDesign::default(),
            outcome_model: OutcomeModel::Fixed,
            estimators: EstimatorKind::ALL.to_vec(),
            alphas: (1..=9).map(|k| k as f64 / 10.0).collect(),
            alpha_prime: 0.4,
            effects: vec![EffectKind::De, EffectKind::Ie],
            confidence: 0.95,
            pooling: Pooling::Canonical,
            small_sample: false,
            seed: 1,
        }
    }
}

impl AnalysisConfig {
    pub fn estimands(&self) -> Vec<Estimand> {
        let mut out = Vec::new();
        for &alpha in &self.alphas {
            let alpha_prime = self.alpha_prime;
            for kind in &self.effects {
                out.push(match kind {
                    EffectKind::De => Estimand::De { alpha },
                    EffectKind::Ie => Estimand::Ie { alpha, alpha_prime },
                    EffectKind::Te => Estimand::Te { alpha, alpha_prime },
                    EffectKind::Oe => Estimand::Oe { alpha, alpha_prime },
                });
            }
        }
        out
    }

    pub fn spec(&self) -> AnalysisSpec {
        AnalysisSpec {
            propensity: self.propensity.clone(),
            outcome: self.outcome.clone(),
            outcome_model: self.outcome_model,
            estimators: self.estimators.clone(),
            estimands: self.estimands(),
            pooling: self.pooling,
            small_sample: self.small_sample,
            confidence: self.confidence,
            variance: true,
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.edges.is_none() || self.nodes.is_none() {
            return Err(CliError::Config("both `edges` and `nodes` paths are required".into()));
        }
        if self.alphas.is_empty() {
            return Err(CliError::Config("the alpha grid is empty".into()));
        }
        if self.effects.is_empty() {
            return Err(CliError::Config("no effects requested".into()));
        }
        self.spec().validate()?;
        Ok(())
    }
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

pub fn load_analysis(path: Option<&Path>) -> Result<AnalysisConfig, CliError> {
    path.map_or_else(|| Ok(AnalysisConfig::default()), read_json)
}

pub fn load_study(path: Option<&Path>) -> Result<Study, CliError> {
    path.map_or_else(|| Ok(Study::default()), read_json)
}

pub fn to_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("config serializes")
}
