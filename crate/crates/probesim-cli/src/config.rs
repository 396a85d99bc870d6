//! Scenario configuration: one JSON document wiring together the network
//! source, prober, forwarding and experiment settings.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use probesim::experiments::{DisclosureAssignment, WorkloadConfig};
use probesim::forwarding::ForwardingConfig;
use probesim::prober::{AttackerConfig, ProberConfig};
use probesim::topology::{ConfigError, TopologyConfig};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioConfig {
    /// Master seed; all randomness in a run derives from it.
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    /// Exactly one of `topology` and `snapshot` must be present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub topology: Option<TopologyConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub snapshot: Option<PathBuf>,
    #[serde(default)]
    pub prober: ProberConfig,
    #[serde(default)]
    pub forwarding: ForwardingConfig,
    #[serde(default)]
    pub attacker: AttackerConfig,
    #[serde(default)]
    pub experiment: ExperimentSection,
    #[serde(default = "default_htlc_timeout_ms")]
    pub htlc_timeout_ms: u64,
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("reports")
}

fn default_htlc_timeout_ms() -> u64 {
    probesim::sweep::default_htlc_timeout_ms()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentSection {
    #[serde(default)]
    pub workload: WorkloadConfig,
    #[serde(default = "default_paired_seeds")]
    pub paired_seeds: u32,
    #[serde(default = "default_disclosure")]
    pub disclosure: DisclosureAssignment,
}

fn default_paired_seeds() -> u32 {
    10
}

fn default_disclosure() -> DisclosureAssignment {
    DisclosureAssignment::AllAlways
}

impl Default for ExperimentSection {
    fn default() -> Self {
        ExperimentSection {
            workload: WorkloadConfig::default(),
            paired_seeds: default_paired_seeds(),
            disclosure: default_disclosure(),
        }
    }
}

impl ScenarioConfig {
    pub fn from_path(path: &Path) -> Result<Self, ConfigError> {
        let raw = fs::read_to_string(path)
            .map_err(|e| ConfigError::field("config", &format!("cannot read {}: {e}", path.display())))?;
        let cfg: ScenarioConfig = serde_json::from_str(&raw)
            .map_err(|e| ConfigError::field("config", &e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// The testnet-scale preset: generated topology at the public-testnet
    /// size, default attacker and prober.
    pub fn testnet_scale(seed: u64) -> Self {
        ScenarioConfig {
            seed,
            out_dir: default_out_dir(),
            topology: Some(probesim::sweep::testnet_scale_preset(0)),
            snapshot: None,
            prober: ProberConfig::default(),
            forwarding: ForwardingConfig::default(),
            attacker: AttackerConfig::default(),
            experiment: ExperimentSection::default(),
            htlc_timeout_ms: default_htlc_timeout_ms(),
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        match (&self.topology, &self.snapshot) {
            (Some(_), Some(_)) => {
                return Err(ConfigError::field(
                    "topology",
                    "exactly one of topology and snapshot may be set",
                ))
            }
            (None, None) => {
                return Err(ConfigError::field(
                    "topology",
                    "one of topology or snapshot is required",
                ))
            }
            _ => {}
        }
        if let Some(topology) = &self.topology {
            topology.validate()?;
        }
        self.prober.validate()?;
        Ok(())
    }
}
