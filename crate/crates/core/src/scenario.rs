//! Scenario files.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adversary::{AdversarySpec, ClientStrategy};
use crate::constructions::Construction;
use crate::netsim::Tick;
use crate::types::{ClientId, Payload};
use crate::validity::{FusionModel, ValidityModel};

/// One scripted client request.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkloadItem {
    pub tick: Tick,
    pub client: ClientId,
    pub payload: Payload,
}

fn default_grace() -> u64 {
    3
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub n: u32,
    pub f: u32,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub gst: Tick,
    pub delta: Tick,
    pub horizon_instances: u64,
    pub max_block_size: usize,
    /// Required by `run` and `sweep`; `compare` runs both constructions.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub construction: Option<Construction>,
    /// Decided instances a pending valid transaction may wait after its
    /// last correct receipt before it counts as starved.
    #[serde(default = "default_grace")]
    pub grace: u64,
    /// Ticks between an instance becoming decidable and its decision;
    /// defaults to `delta`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decision_latency: Option<Tick>,
    /// Simulation budget; derived from the horizon when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_ticks: Option<Tick>,
    pub validity: ValidityModel,
    #[serde(default)]
    pub fusion: FusionModel,
    #[serde(default)]
    pub adversary: AdversarySpec,
    #[serde(default)]
    pub workload: Vec<WorkloadItem>,
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum ConfigError {
    #[error("invalid scenario: {0}")]
    Parse(String),
    #[error("f: \"f < n/3\" violated: {f} ≥ {n}/3")]
    FaultBound { n: u32, f: u32 },
    #[error("{field}: {message}")]
    Field {
        field: &'static str,
        message: String,
    },
}

fn field(field: &'static str, message: impl Into<String>) -> ConfigError {
    ConfigError::Field {
        field,
        message: message.into(),
    }
}

impl Scenario {
    /// A small honest scenario to build on.
    pub fn basic(n: u32, f: u32, construction: Construction) -> Self {
        Scenario {
            n,
            f,
            seed: 0,
            gst: 0,
            delta: 5,
            horizon_instances: 10,
            max_block_size: 8,
            construction: Some(construction),
            grace: default_grace(),
            decision_latency: None,
            max_ticks: None,
            validity: ValidityModel::Set,
            fusion: FusionModel::default(),
            adversary: AdversarySpec::default(),
            workload: Vec::new(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let s: Scenario = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario is representable in TOML")
    }

    pub fn decision_latency(&self) -> Tick {
        self.decision_latency.unwrap_or(self.delta)
    }

    fn last_workload_tick(&self) -> Tick {
        self.workload.iter().map(|w| w.tick).max().unwrap_or(0)
    }

    /// The tick budget: enough for every instance to complete after GST.
    pub fn max_ticks(&self) -> Tick {
        self.max_ticks.unwrap_or_else(|| {
            let per_instance = 3 * self.delta + self.decision_latency() + 1;
            self.gst.max(self.last_workload_tick())
                + (self.horizon_instances + 2) * per_instance
                + 100
        })
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.n == 0 {
            return Err(field("n", "at least one replica is required"));
        }
        if 3 * self.f >= self.n {
            return Err(ConfigError::FaultBound {
                n: self.n,
                f: self.f,
            });
        }
        if self.delta == 0 {
            return Err(field("delta", "must be at least 1"));
        }
        if self.horizon_instances == 0 {
            return Err(field("horizon_instances", "must be at least 1"));
        }
        if self.max_block_size == 0 {
            return Err(field("max_block_size", "must be at least 1"));
        }
        if self.grace == 0 {
            return Err(field("grace", "must be at least 1"));
        }
        let adv = &self.adversary;
        if adv.corrupt_replicas.len() > self.f as usize {
            return Err(field(
                "adversary.corrupt_replicas",
                format!(
                    "{} corrupt replicas but f = {}",
                    adv.corrupt_replicas.len(),
                    self.f
                ),
            ));
        }
        if let Some(r) = adv.corrupt_replicas.iter().find(|r| r.0 >= self.n) {
            return Err(field(
                "adversary.corrupt_replicas",
                format!("{r} does not exist (n = {})", self.n),
            ));
        }
        if let ClientStrategy::SpamInvalidator { sink } = &adv.client_strategy {
            if sink.is_empty() {
                return Err(field(
                    "adversary.client_strategy.sink",
                    "must name an account",
                ));
            }
        }
        if let ValidityModel::Account { accounts } = &self.validity {
            let mut names: Vec<&str> = accounts.iter().map(|a| a.name.as_str()).collect();
            names.sort_unstable();
            if let Some(w) = names.windows(2).find(|w| w[0] == w[1]) {
                return Err(field(
                    "validity.accounts",
                    format!("account {} declared twice", w[0]),
                ));
            }
        }
        let budget = self.max_ticks();
        if let Some(w) = self.workload.iter().find(|w| w.tick > budget) {
            return Err(field(
                "workload",
                format!(
                    "request at tick {} is beyond the run's {budget} ticks",
                    w.tick
                ),
            ));
        }
        Ok(())
    }
}
