//! Flat key-value run configuration (TOML syntax). Every key is optional and
//! falls back to the default; unknown keys are errors.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::aggregation::{AggregatorKind, AggregatorSpec};
use crate::attacks::{AttackConfig, AttackKind, SignFlipRule, Surface};
use crate::contracts::TrustParams;
use crate::error::{Error, Result};
use crate::hsic::{Bandwidth, KernelSpec};
use crate::learning::ModelSpec;
use crate::simulator::{Mode, RunConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BandwidthValue {
    Fixed(f64),
    Named(AutoToken),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AutoToken {
    Auto,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelName {
    Linear,
    Rbf,
}

/// The on-disk shape of a run configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConfigFile {
    pub seed: u64,
    pub rounds: u64,
    pub clients: usize,
    pub miners: usize,
    pub samples_per_client: usize,
    pub test_size: usize,
    pub class_separation: f64,
    pub imbalance: f64,

    pub input_dim: usize,
    pub hidden_dim: usize,
    pub classes: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub local_epochs: usize,

    pub q: usize,
    pub alpha: f64,
    pub lambda: f64,
    /// Defaults to `q` when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ban_duration: Option<u64>,
    pub warmup_rounds: u64,

    pub attack: AttackKind,
    pub gamma: f64,
    pub noise_mean: f64,
    pub noise_std: f64,
    pub zeta: f64,
    pub byzantine_ratio: f64,
    pub surface: Surface,
    pub sign_flip_rule: SignFlipRule,
    pub literal_negation: bool,

    pub aggregator: AggregatorKind,
    pub trim_fraction: f64,
    pub kernel: KernelName,
    pub bandwidth: BandwidthValue,
    pub hsic_sample_cap: usize,

    pub mode: Mode,
    pub force_reject_rounds: Vec<u64>,
}

impl Default for ConfigFile {
    fn default() -> Self {
        let mut f = ConfigFile::from(&RunConfig::default());
        f.ban_duration = None;
        f
    }
}

impl From<&RunConfig> for ConfigFile {
    fn from(c: &RunConfig) -> Self {
        let (kernel, bandwidth) = match c.kernel {
            KernelSpec::Linear => (KernelName::Linear, BandwidthValue::Named(AutoToken::Auto)),
            KernelSpec::Rbf {
                bandwidth: Bandwidth::Auto,
            } => (KernelName::Rbf, BandwidthValue::Named(AutoToken::Auto)),
            KernelSpec::Rbf {
                bandwidth: Bandwidth::Fixed(h),
            } => (KernelName::Rbf, BandwidthValue::Fixed(h)),
        };
        Self {
            seed: c.seed,
            rounds: c.rounds,
            clients: c.clients,
            miners: c.miners,
            samples_per_client: c.samples_per_client,
            test_size: c.test_size,
            class_separation: c.class_separation,
            imbalance: c.imbalance,
            input_dim: c.model.input_dim,
            hidden_dim: c.model.hidden_dim,
            classes: c.model.classes,
            learning_rate: c.model.learning_rate,
            batch_size: c.model.batch_size,
            local_epochs: c.model.local_epochs,
            q: c.trust.q,
            alpha: c.trust.alpha,
            lambda: c.trust.lambda,
            ban_duration: Some(c.trust.ban_duration),
            warmup_rounds: c.trust.warmup_rounds,
            attack: c.attack.kind,
            gamma: c.attack.gamma,
            noise_mean: c.attack.noise_mean,
            noise_std: c.attack.noise_std,
            zeta: c.attack.zeta,
            byzantine_ratio: c.attack.byzantine_ratio,
            surface: c.attack.surface,
            sign_flip_rule: c.attack.sign_flip_rule,
            literal_negation: c.attack.literal_negation,
            aggregator: c.aggregator.kind,
            trim_fraction: c.aggregator.trim_fraction,
            kernel,
            bandwidth,
            hsic_sample_cap: c.hsic_sample_cap,
            mode: c.mode,
            force_reject_rounds: c.force_reject_rounds.clone(),
        }
    }
}

impl ConfigFile {
    pub fn into_run_config(self) -> RunConfig {
        let kernel = match (self.kernel, self.bandwidth) {
            (KernelName::Linear, _) => KernelSpec::Linear,
            (KernelName::Rbf, BandwidthValue::Named(AutoToken::Auto)) => KernelSpec::Rbf {
                bandwidth: Bandwidth::Auto,
            },
            (KernelName::Rbf, BandwidthValue::Fixed(h)) => KernelSpec::Rbf {
                bandwidth: Bandwidth::Fixed(h),
            },
        };
        RunConfig {
            seed: self.seed,
            rounds: self.rounds,
            clients: self.clients,
            miners: self.miners,
            samples_per_client: self.samples_per_client,
            test_size: self.test_size,
            class_separation: self.class_separation,
            imbalance: self.imbalance,
            trust: TrustParams {
                q: self.q,
                alpha: self.alpha,
                lambda: self.lambda,
                ban_duration: self.ban_duration.unwrap_or(self.q as u64),
                warmup_rounds: self.warmup_rounds,
            },
            model: ModelSpec {
                input_dim: self.input_dim,
                hidden_dim: self.hidden_dim,
                classes: self.classes,
                learning_rate: self.learning_rate,
                batch_size: self.batch_size,
                local_epochs: self.local_epochs,
            },
            attack: AttackConfig {
                kind: self.attack,
                gamma: self.gamma,
                noise_mean: self.noise_mean,
                noise_std: self.noise_std,
                zeta: self.zeta,
                byzantine_ratio: self.byzantine_ratio,
                surface: self.surface,
                sign_flip_rule: self.sign_flip_rule,
                literal_negation: self.literal_negation,
            },
            aggregator: AggregatorSpec {
                kind: self.aggregator,
                trim_fraction: self.trim_fraction,
            },
            kernel,
            hsic_sample_cap: self.hsic_sample_cap,
            mode: self.mode,
            force_reject_rounds: self.force_reject_rounds,
        }
    }
}

/// Parses and validates configuration text. Warnings are returned alongside.
pub fn parse_config(text: &str) -> Result<(RunConfig, Vec<String>)> {
    let file: ConfigFile = toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
    let cfg = file.into_run_config();
    let warnings = cfg.validate()?;
    Ok((cfg, warnings))
}

pub fn load_config(path: &Path) -> Result<(RunConfig, Vec<String>)> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    parse_config(&text)
}

/// Every key with its resolved value, in the config file syntax.
pub fn to_config_text(cfg: &RunConfig) -> String {
    toml::to_string(&ConfigFile::from(cfg)).expect("flat config always serialises")
}
