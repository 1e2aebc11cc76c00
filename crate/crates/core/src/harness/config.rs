//! Experiment configuration.
//!
//! A config file is TOML. Each subcommand starts from a built-in preset;
//! keys present in the file replace the preset's, table by table. The fully
//! resolved config is written next to the results.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::envs::{GarnetSpec, GridworldSpec, LogisticsSpec};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::pasa::PasaParams;
use crate::sarsa::SarsaParams;

pub const SCHEMA_VERSION: u32 = 1;

/// The experiment families the command line exposes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Experiment {
    GarnetPerf,
    GarnetMse,
    Gridworld,
    Logistics,
    CycleStats,
    Timing,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Experiment::GarnetPerf => "garnet-perf",
            Experiment::GarnetMse => "garnet-mse",
            Experiment::Gridworld => "gridworld",
            Experiment::Logistics => "logistics",
            Experiment::CycleStats => "cycle-stats",
            Experiment::Timing => "timing",
        }
    }

    fn preset(self) -> &'static str {
        match self {
            Experiment::GarnetPerf => GARNET_PERF,
            Experiment::GarnetMse => GARNET_MSE,
            Experiment::Gridworld => GRIDWORLD,
            Experiment::Logistics => LOGISTICS,
            Experiment::CycleStats => CYCLE_STATS,
            Experiment::Timing => TIMING,
        }
    }
}

const GARNET_PERF: &str = r#"
trials = 20
iterations = 5_000_000
agents = ["fixed", "pasa"]
[env]
family = "garnet"
states = 2000
zeta = 30.0
[cells]
x = 200
[sarsa]
reciprocal_pi_weighting = "step"
[pasa]
varsigma = 2.5e-7
"#;

const GARNET_MSE: &str = r#"
trials = 20
iterations = 5_000_000
agents = ["fixed", "pasa"]
[env]
family = "garnet"
states = 250
zeta = 30.0
[cells]
x = 70
[sarsa]
reciprocal_pi_weighting = "step"
[pasa]
varsigma = 2.5e-7
[mse]
policy_epsilon = 0.01
"#;

const GRIDWORLD: &str = r#"
trials = 20
iterations = 5_000_000
agents = ["fixed", "pasa", "tabular"]
[env]
family = "gridworld"
side = 32
reward_positions = 24
[cells]
x = 140
x0 = 70
[sarsa]
reciprocal_pi_weighting = "step"
[pasa]
varsigma = 2.5e-7
"#;

const LOGISTICS: &str = r#"
trials = 20
iterations = 5_000_000
agents = ["fixed", "pasa"]
[env]
family = "logistics"
[cells]
x = 140
x0 = 70
[sarsa]
reciprocal_pi_weighting = "step"
[pasa]
varsigma = 2.5e-7
"#;

const CYCLE_STATS: &str = r#"
agents = []
[env]
family = "garnet"
states = 10000
zeta = 1.0
[cells]
x = 1
[cycle]
states = 10000
samples = 10000
"#;

const TIMING: &str = r#"
trials = 1
iterations = 2_000_000
agents = ["fixed", "pasa"]
[env]
family = "garnet"
states = 8000
zeta = 30.0
[cells]
x = 380
[sarsa]
reciprocal_pi_weighting = "step"
[timing]
repeats = 5
"#;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AgentKind {
    Tabular,
    Fixed,
    Pasa,
}

impl AgentKind {
    pub fn name(self) -> &'static str {
        match self {
            AgentKind::Tabular => "tabular",
            AgentKind::Fixed => "fixed",
            AgentKind::Pasa => "pasa",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum EnvSpec {
    Garnet(GarnetSpec),
    /// A GARNET instance stored with `Garnet::save`, reused by every trial.
    GarnetFile { path: PathBuf },
    Gridworld(GridworldSpec),
    Logistics(LogisticsSpec),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CellsConfig {
    /// Total number of cells `X`.
    pub x: usize,
    /// Base cells for the adaptive agent; defaults to `X / 2`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub x0: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MseConfig {
    /// Exploration mass of the fixed epsilon-deterministic policy.
    pub policy_epsilon: f64,
    /// Error evaluations per trial.
    #[serde(default = "default_checkpoints")]
    pub checkpoints: u64,
}

fn default_checkpoints() -> u64 {
    100
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CycleConfig {
    pub states: usize,
    pub samples: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimingConfig {
    /// Timed runs per agent; the fastest is reported.
    pub repeats: usize,
}

fn default_schema() -> u32 {
    SCHEMA_VERSION
}

fn default_trials() -> usize {
    1
}

fn default_windows() -> u64 {
    100
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_schema")]
    pub schema: u32,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default)]
    pub iterations: u64,
    /// Number of reward-averaging windows per trial.
    #[serde(default = "default_windows")]
    pub windows: u64,
    #[serde(default)]
    pub execution: Execution,
    pub agents: Vec<AgentKind>,
    /// Write one line per repartition of each adaptive agent.
    #[serde(default)]
    pub log_events: bool,
    pub env: EnvSpec,
    pub cells: CellsConfig,
    #[serde(default)]
    pub sarsa: SarsaParams,
    #[serde(default)]
    pub pasa: PasaParams,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mse: Option<MseConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cycle: Option<CycleConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timing: Option<TimingConfig>,
}

/// Overlay `top` onto `base`, merging nested tables key by key.
fn merge(base: &mut toml::Table, top: toml::Table) {
    for (key, value) in top {
        match (base.get_mut(&key), value) {
            (Some(toml::Value::Table(b)), toml::Value::Table(t)) => {
                // a different env family replaces the whole table
                let same_family = b.get("family") == t.get("family") || !t.contains_key("family");
                if same_family {
                    merge(b, t);
                } else {
                    *b = t;
                }
            }
            (_, v) => {
                base.insert(key, v);
            }
        }
    }
}

/// Resolve the config for `experiment`, overlaying `file` on the preset.
pub fn load_config(experiment: Experiment, file: Option<&Path>) -> Result<ExperimentConfig> {
    let mut table: toml::Table = experiment
        .preset()
        .parse()
        .expect("built-in presets are valid TOML");
    let origin = file.map_or_else(|| experiment.name().to_string(), |p| p.display().to_string());
    if let Some(path) = file {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let user: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::config(&origin, e.message()))?;
        merge(&mut table, user);
    }
    let cfg: ExperimentConfig = toml::Value::Table(table)
        .try_into()
        .map_err(|e: toml::de::Error| Error::config(&origin, e.message()))?;
    cfg.validate()?;
    Ok(cfg)
}

impl ExperimentConfig {
    /// Number of states in the configured environment family.
    pub fn state_count(&self) -> Result<usize> {
        Ok(match &self.env {
            EnvSpec::Garnet(g) => g.states,
            EnvSpec::GarnetFile { path } => {
                use crate::envs::Environment;
                crate::envs::Garnet::load(path)?.num_states()
            }
            EnvSpec::Gridworld(g) => g.side * g.side,
            EnvSpec::Logistics(l) => 1usize << l.encoding_bits(),
        })
    }

    pub fn x0(&self) -> usize {
        self.cells.x0.unwrap_or((self.cells.x / 2).max(1))
    }

    pub fn window(&self) -> u64 {
        (self.iterations / self.windows.max(1)).max(1)
    }

    pub fn validate(&self) -> Result<()> {
        let wrap = |field: &str, r: Result<()>| {
            r.map_err(|e| match e {
                Error::InvalidArgument(m) => Error::config(field, m),
                other => other,
            })
        };
        if self.schema != SCHEMA_VERSION {
            return Err(Error::config(
                "schema",
                format!("unsupported schema {} (expected {SCHEMA_VERSION})", self.schema),
            ));
        }
        if self.trials == 0 {
            return Err(Error::config("trials", "must be at least 1"));
        }
        if self.windows == 0 {
            return Err(Error::config("windows", "must be at least 1"));
        }
        wrap("sarsa", self.sarsa.validate())?;
        wrap("pasa", self.pasa.validate())?;
        match &self.env {
            EnvSpec::Garnet(g) => wrap("env", g.validate())?,
            EnvSpec::Logistics(l) => wrap("env", l.validate())?,
            EnvSpec::Gridworld(g) => {
                if g.side == 0 || g.reward_positions == 0 || 2 * g.reward_positions > g.side * g.side {
                    return Err(Error::config("env.reward_positions", "does not fit on the grid"));
                }
            }
            EnvSpec::GarnetFile { .. } => {}
        }
        if let Some(m) = &self.mse {
            if !(0.0..=1.0).contains(&m.policy_epsilon) {
                return Err(Error::config("mse.policy_epsilon", "must lie in [0,1]"));
            }
            if m.checkpoints == 0 {
                return Err(Error::config("mse.checkpoints", "must be at least 1"));
            }
        }
        if let Some(c) = &self.cycle {
            if c.states < 2 || c.samples < 2 {
                return Err(Error::config("cycle", "need at least two states and samples"));
            }
        }
        if self.agents.is_empty() {
            return Ok(());
        }
        let states = self.state_count()?;
        let x = self.cells.x;
        let x0 = self.x0();
        if x == 0 || x > states {
            return Err(Error::config("cells.x", format!("must lie in 1..={states}")));
        }
        if x0 == 0 || x0 > x {
            return Err(Error::config("cells.x0", format!("must lie in 1..={x}")));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_resolve() {
        for e in [
            Experiment::GarnetPerf,
            Experiment::GarnetMse,
            Experiment::Gridworld,
            Experiment::Logistics,
            Experiment::CycleStats,
            Experiment::Timing,
        ] {
            let cfg = load_config(e, None).unwrap();
            let back: ExperimentConfig = toml::from_str(&cfg.to_toml()).unwrap();
            assert_eq!(back, cfg, "{}", e.name());
        }
    }

    #[test]
    fn defaults_follow_parameter_table() {
        let cfg = load_config(Experiment::GarnetPerf, None).unwrap();
        assert_eq!(cfg.sarsa.gamma, 0.98);
        assert_eq!(cfg.sarsa.eta, 3e-4);
        assert_eq!(cfg.sarsa.epsilon, 0.01);
        assert_eq!(cfg.pasa.nu, 50_000);
        assert_eq!(cfg.pasa.vartheta, 0.9);
        assert_eq!(cfg.x0(), 100);
        assert_eq!(cfg.sarsa.reciprocal_pi_weighting, crate::sarsa::PiWeighting::Step);
    }
}
