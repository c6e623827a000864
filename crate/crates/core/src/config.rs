//! Scenario configuration: one TOML document per scenario.

use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::compliance::{PenaltySchedule, DEFAULT_BLACKOUT_DAYS};
use crate::ids::RespondentId;
use crate::pricing::{DisutilityTable, ScheduleParams};
use crate::qf::QfRound;
use crate::sim::{default_binary_question, Agent, AgentPolicy, FeeContext, SimConfig, WorldModel};
use crate::survey::{PayoutRule, Question, Role, SurveyRound};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub schema_version: u32,
    pub master_seed: u64,
    pub survey: Option<SurveyRound>,
    pub payouts: Option<PayoutSection>,
    pub disutilities: Option<DisutilityTable>,
    pub schedule: Option<ScheduleParams>,
    pub qf: Option<QfSection>,
    pub penalties: Option<PenaltySchedule>,
    pub compliance: Option<ComplianceSection>,
    pub simulation: Option<SimulationSection>,
    pub outputs: Option<OutputSection>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PayoutSection {
    pub floor: Option<f64>,
    pub roles: Option<Vec<Role>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QfSection {
    #[serde(flatten)]
    pub round: QfRound,
    /// Cosine-similarity threshold for funding-collusion flags.
    #[serde(default = "default_funding_threshold")]
    pub collusion_threshold: f64,
}

fn default_funding_threshold() -> f64 {
    0.99
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComplianceSection {
    #[serde(default = "default_detection_threshold")]
    pub detection_threshold: f64,
    pub survey_date: Option<DateTime<Utc>>,
    #[serde(default = "default_blackout")]
    pub blackout_days: i64,
    /// Line-delimited JSON events, relative to the config file.
    pub event_log: Option<PathBuf>,
    /// Actors bound by the blackout; survey developers when absent.
    pub indemnified: Option<Vec<String>>,
    #[serde(default)]
    pub confirmed_groups: Vec<Vec<RespondentId>>,
    #[serde(default)]
    pub whistleblowers: Vec<RespondentId>,
}

fn default_detection_threshold() -> f64 {
    0.9
}

fn default_blackout() -> i64 {
    DEFAULT_BLACKOUT_DAYS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationSection {
    pub model: WorldModel,
    pub roster: Vec<Agent>,
    pub questions: Option<Vec<Question>>,
    #[serde(default = "one")]
    pub alpha: f64,
    #[serde(default = "one")]
    pub payout_scale: f64,
    #[serde(default)]
    pub pseudo_count: f64,
    pub payout_floor: Option<f64>,
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    pub subject: Option<RespondentId>,
    pub deviations: Option<Vec<AgentPolicy>>,
    pub fee: Option<FeeContext>,
    pub scale_grid: Option<Vec<f64>>,
    pub honest_shares: Option<Vec<f64>>,
    pub peer_deviation: Option<AgentPolicy>,
}

fn one() -> f64 {
    1.0
}

fn default_replicates() -> usize {
    1000
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub dir: Option<PathBuf>,
}

#[derive(Debug)]
pub enum ConfigError {
    Io(PathBuf, std::io::Error),
    Parse(String),
    Schema(String),
}

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ConfigError::Io(p, e) => write!(f, "cannot read {}: {e}", p.display()),
            ConfigError::Parse(m) | ConfigError::Schema(m) => f.write_str(m),
        }
    }
}

/// A parsed config together with the digest of its bytes.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: ScenarioConfig,
    pub sha256: String,
    pub base_dir: PathBuf,
}

impl ScenarioConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let config: ScenarioConfig =
            toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        if config.schema_version != SCHEMA_VERSION {
            return Err(ConfigError::Schema(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                config.schema_version
            )));
        }
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<LoadedConfig, ConfigError> {
        let bytes = std::fs::read(path).map_err(|e| ConfigError::Io(path.to_owned(), e))?;
        let text = String::from_utf8(bytes.clone())
            .map_err(|_| ConfigError::Parse(format!("{} is not UTF-8", path.display())))?;
        let config = Self::parse(&text)?;
        Ok(LoadedConfig {
            config,
            sha256: sha256_hex(&bytes),
            base_dir: path.parent().map(Path::to_owned).unwrap_or_default(),
        })
    }

    pub fn payout_rule(&self, scale: f64) -> PayoutRule {
        let section = self.payouts.clone().unwrap_or_default();
        PayoutRule {
            scale,
            floor: section.floor,
            roles: section.roles,
        }
    }
}

impl SimulationSection {
    pub fn to_sim_config(&self, master_seed: u64) -> SimConfig {
        SimConfig {
            model: self.model.clone(),
            roster: self.roster.clone(),
            questions: self
                .questions
                .clone()
                .unwrap_or_else(|| vec![default_binary_question("q1", 0)]),
            alpha: self.alpha,
            payout_scale: self.payout_scale,
            pseudo_count: self.pseudo_count,
            payout_floor: self.payout_floor,
            replicates: self.replicates,
            master_seed,
            subject: self.subject.clone(),
            deviations: self.deviations.clone(),
            fee: self.fee.clone(),
            scale_grid: self.scale_grid.clone(),
            honest_shares: self.honest_shares.clone(),
            peer_deviation: self.peer_deviation.clone(),
        }
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}
