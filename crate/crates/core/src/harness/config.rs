//! Experiment configuration (TOML).
//!
//! ```toml
//! environment = "gridworld"      # gridworld | chain
//! aei = "identity"               # identity | constant | reward_bonus(c, gamma_q) | aligning(gamma_p, gamma_q)
//! inverse = false                # wrap the agent in the interface's inverter
//! baseline_values = [0.0, -1.0, -5.0]
//! i_max = 500
//! trials = 10000
//! master_seed = 1
//! output_dir = "results"
//! threads = 0                    # 0 = all cores
//! memory = "off"                 # off | hash | full
//! include_terminal = true        # terminal update in per-episode Δ/L averages
//! horizon = 1000000
//! write_traces = false
//! return_windows = [[400, 500]]  # per-trial mean return over episodes [from, to)
//!
//! [agent]                        # any BacConfig field; alpha/beta default per environment
//! lambda = 0.8
//!
//! [bins]
//! delta = ["(-inf,-5]", "(-5,-1]", "(-1,-1e-6]", "(-1e-6,1e-6]", "(1e-6,1)", "[1,5)", "[5,inf)"]
//! likelihood = ["(0,0.5]", "(0.5,0.9]", "(0.9,0.999999]", "(0.999999,1.000001]", "(1.000001,1.1)", "[1.1,2)", "[2,inf)"]
//!
//! [[objectives]]
//! kind = "reward_qualia"
//! gamma_q = 0.9
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::aei::AeiSpec;
use crate::agents::{BacConfig, MemoryRecording, Values};
use crate::environments::EnvironmentModel;
use crate::error::{Error, Result};
use crate::metrics::{BandSpec, Bins, ObjectiveKind, ObjectiveSpec, DEFAULT_DELTA_BINS, DEFAULT_L_BINS};
use crate::process::DEFAULT_HORIZON;

/// Agent fields as written in a config; unset fields take the environment defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentSection {
    pub theta0: Option<Values>,
    pub w0: Option<Values>,
    pub gamma: Option<f64>,
    pub lambda: Option<f64>,
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    pub td_bonus: Option<f64>,
    pub td_bonus_invert_critic: Option<bool>,
    pub td_bonus_invert_actor: Option<bool>,
    pub clip_tau: Option<f64>,
}

/// Step sizes used when a config leaves them unset.
pub fn default_agent(environment: &str) -> BacConfig {
    let beta = match environment {
        "chain" => 0.1,
        _ => 0.01,
    };
    BacConfig { alpha: 0.1, beta, ..BacConfig::default() }
}

impl AgentSection {
    pub fn resolve(&self, environment: &str) -> BacConfig {
        let d = default_agent(environment);
        BacConfig {
            theta0: self.theta0.clone().unwrap_or(d.theta0),
            w0: self.w0.clone().unwrap_or(d.w0),
            gamma: self.gamma.unwrap_or(d.gamma),
            lambda: self.lambda.unwrap_or(d.lambda),
            alpha: self.alpha.unwrap_or(d.alpha),
            beta: self.beta.unwrap_or(d.beta),
            baseline_c: d.baseline_c,
            td_bonus: self.td_bonus.unwrap_or(d.td_bonus),
            td_bonus_invert_critic: self.td_bonus_invert_critic.unwrap_or(d.td_bonus_invert_critic),
            td_bonus_invert_actor: self.td_bonus_invert_actor.unwrap_or(d.td_bonus_invert_actor),
            clip_tau: self.clip_tau.or(d.clip_tau),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BinsSection {
    pub delta: Vec<String>,
    pub likelihood: Vec<String>,
}

impl Default for BinsSection {
    fn default() -> Self {
        Self {
            delta: DEFAULT_DELTA_BINS.iter().map(|s| s.to_string()).collect(),
            likelihood: DEFAULT_L_BINS.iter().map(|s| s.to_string()).collect(),
        }
    }
}

impl BinsSection {
    pub fn bands(&self) -> Result<BandSpec> {
        BandSpec::new(Bins::parse(&self.delta)?, Bins::parse(&self.likelihood)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub environment: String,
    pub aei: AeiSpec,
    pub inverse: bool,
    pub agent: AgentSection,
    pub baseline_values: Vec<f64>,
    pub i_max: usize,
    pub trials: usize,
    pub master_seed: u64,
    pub bins: BinsSection,
    pub objectives: Vec<ObjectiveSpec>,
    pub output_dir: PathBuf,
    /// Worker threads; 0 uses every core.
    pub threads: usize,
    pub memory: MemoryRecording,
    pub include_terminal: bool,
    pub horizon: usize,
    pub write_traces: bool,
    pub return_windows: Vec<[usize; 2]>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            environment: "gridworld".into(),
            aei: AeiSpec::Identity,
            inverse: false,
            agent: AgentSection::default(),
            baseline_values: vec![0.0, -1.0, -5.0],
            i_max: 500,
            trials: 10_000,
            master_seed: 1,
            bins: BinsSection::default(),
            objectives: vec![ObjectiveSpec::new(ObjectiveKind::Performance)],
            output_dir: PathBuf::from("results"),
            threads: 0,
            memory: MemoryRecording::Off,
            include_terminal: true,
            horizon: DEFAULT_HORIZON,
            write_traces: false,
            return_windows: Vec::new(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serialises")
    }

    pub fn env(&self) -> Result<EnvironmentModel> {
        EnvironmentModel::from_name(&self.environment)
    }

    /// Agent config for one entry of the baseline sweep.
    pub fn agent_config(&self, baseline_c: f64) -> BacConfig {
        self.agent.resolve(&self.environment).with_baseline(baseline_c)
    }

    pub fn validate(&self) -> Result<()> {
        let env = self.env()?;
        if self.trials < 2 {
            return Err(Error::Config(format!("trials = {}; at least 2 are required", self.trials)));
        }
        if self.i_max == 0 {
            return Err(Error::Config("i_max must be at least 1".into()));
        }
        if self.baseline_values.is_empty() {
            return Err(Error::Config("baseline_values must not be empty".into()));
        }
        if self.baseline_values.iter().any(|c| !c.is_finite()) {
            return Err(Error::Config("baseline values must be finite".into()));
        }
        if self.horizon == 0 {
            return Err(Error::Config("horizon must be positive".into()));
        }
        if u32::try_from(self.trials).is_err() || u32::try_from(self.baseline_values.len()).is_err() {
            return Err(Error::Config("trials and sweep size are limited to 2^32".into()));
        }
        let aei = self.aei.build()?;
        if self.inverse && self.aei.inverter()?.is_none() {
            return Err(Error::Config(format!("interface {} has no inverter", self.aei)));
        }
        let states = aei.agent_state_count(env.state_count());
        let actions = aei.agent_action_count(env.action_count());
        for &c in &self.baseline_values {
            self.agent_config(c).validate(states, actions)?;
        }
        self.bins.bands()?;
        for spec in &self.objectives {
            spec.validate()?;
            if spec.kind.needs_snapshots() && self.memory != MemoryRecording::Full {
                return Err(Error::Config(format!("objective {} needs memory = \"full\"", spec.kind)));
            }
        }
        for &[from, to] in &self.return_windows {
            if from >= to || to > self.i_max {
                return Err(Error::Config(format!("return window [{from}, {to}) must lie within [0, {})", self.i_max)));
            }
        }
        Ok(())
    }
}
