//! Basic actor-critic with a tabular softmax policy and a tabular value function.
//!
//! Beyond the plain algorithm the agent supports a constant reinforcement baseline in
//! the actor, an explicit TD-error bonus (optionally undone in critic and/or actor),
//! TD-error clipping, and arbitrary initial weights for pessimistic value estimates.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::process::{Action, Agent, AgentOutput, AgentSignals, MemorySnapshot, Observation, Perception};
use crate::seeding::ProcessRng;

/// A parameter vector given either as one value for every entry or as a full table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Values {
    Constant(f64),
    Table(Vec<f64>),
}

impl Default for Values {
    fn default() -> Self {
        Values::Constant(0.0)
    }
}

impl Values {
    pub fn expand(&self, len: usize, what: &str) -> Result<Vec<f64>> {
        match self {
            Values::Constant(x) => Ok(vec![*x; len]),
            Values::Table(v) if v.len() == len => Ok(v.clone()),
            Values::Table(v) => Err(Error::Config(format!("{what} has {} entries, expected {len}", v.len()))),
        }
    }

    fn at(&self, i: usize) -> f64 {
        match self {
            Values::Constant(x) => *x,
            Values::Table(v) => v[i],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BacConfig {
    pub theta0: Values,
    pub w0: Values,
    pub gamma: f64,
    pub lambda: f64,
    pub alpha: f64,
    pub beta: f64,
    /// Reinforcement baseline `b(s)`, subtracted from the TD error in the actor only.
    pub baseline_c: Values,
    /// Explicit bonus added to every stored TD error.
    pub td_bonus: f64,
    pub td_bonus_invert_critic: bool,
    pub td_bonus_invert_actor: bool,
    /// `Δ <- max(τ, Δ)` when set.
    pub clip_tau: Option<f64>,
}

impl Default for BacConfig {
    fn default() -> Self {
        Self {
            theta0: Values::default(),
            w0: Values::default(),
            gamma: 1.0,
            lambda: 0.8,
            alpha: 0.1,
            beta: 0.01,
            baseline_c: Values::default(),
            td_bonus: 0.0,
            td_bonus_invert_critic: false,
            td_bonus_invert_actor: false,
            clip_tau: None,
        }
    }
}

impl BacConfig {
    pub fn validate(&self, states: usize, actions: usize) -> Result<()> {
        let unit = |x: f64, name: &str| {
            if (0.0..=1.0).contains(&x) {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} = {x} must lie in [0, 1]")))
            }
        };
        unit(self.gamma, "gamma")?;
        unit(self.lambda, "lambda")?;
        for (x, name) in [(self.alpha, "alpha"), (self.beta, "beta")] {
            if !(x.is_finite() && x >= 0.0) {
                return Err(Error::Config(format!("{name} = {x} must be a finite non-negative step size")));
            }
        }
        if !self.td_bonus.is_finite() || self.clip_tau.is_some_and(|t| !t.is_finite()) {
            return Err(Error::Config("td_bonus and clip_tau must be finite".into()));
        }
        self.theta0.expand(states * actions, "theta0")?;
        self.w0.expand(states, "w0")?;
        self.baseline_c.expand(states, "baseline_c")?;
        Ok(())
    }

    /// Copy of this config with a constant reinforcement baseline.
    pub fn with_baseline(&self, c: f64) -> Self {
        Self { baseline_c: Values::Constant(c), ..self.clone() }
    }

    /// Copy with an explicit TD bonus that both learners undo.
    pub fn with_inverted_bonus(&self, c: f64) -> Self {
        Self { td_bonus: c, td_bonus_invert_critic: true, td_bonus_invert_actor: true, ..self.clone() }
    }

    /// Copy with both step sizes zero: a fixed policy and fixed value estimates.
    pub fn frozen(&self) -> Self {
        Self { alpha: 0.0, beta: 0.0, ..self.clone() }
    }
}

/// `M_t` without the perception/action pair the process records separately.
#[derive(Debug, Clone, PartialEq)]
pub struct BacMemory {
    pub theta: Vec<f64>,
    pub w: Vec<f64>,
    pub e: Vec<f64>,
    pub last_perception: Observation,
    pub last_action: Action,
    pub last_delta: Option<f64>,
}

/// How much of the memory each step record keeps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MemoryRecording {
    /// No memory summary (hash 0); signals only.
    Off,
    /// FNV-1a hash of the parameter bits.
    #[default]
    Hash,
    /// Hash plus a full copy of θ, w and e.
    Full,
}

fn softmax_row_into(theta_row: &[f64], out: &mut [f64]) {
    let max = theta_row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for (o, &t) in out.iter_mut().zip(theta_row) {
        *o = (t - max).exp();
        total += *o;
    }
    for o in out.iter_mut() {
        *o /= total;
    }
}

/// Action probabilities of state `s` under `theta` (row-major `state x action`).
pub fn softmax_row(theta: &[f64], actions: usize, s: usize) -> Vec<f64> {
    let mut out = vec![0.0; actions];
    softmax_row_into(&theta[s * actions..(s + 1) * actions], &mut out);
    out
}

/// `π(s, a, θ)`.
pub fn softmax_prob(theta: &[f64], actions: usize, s: usize, a: usize) -> f64 {
    softmax_row(theta, actions, s)[a]
}

/// `∂ ln π(s, a, θ) / ∂θ` for the tabular softmax policy.
pub fn compatible_features(theta: &[f64], actions: usize, s: usize, a: usize) -> Vec<f64> {
    let mut grad = vec![0.0; theta.len()];
    for (k, p) in softmax_row(theta, actions, s).into_iter().enumerate() {
        grad[s * actions + k] = if k == a { 1.0 - p } else { -p };
    }
    grad
}

/// `π(s, a, θ_after) / π(s, a, θ_before)`.
pub fn likelihood_ratio(theta_before: &[f64], theta_after: &[f64], actions: usize, s: usize, a: usize) -> f64 {
    softmax_prob(theta_after, actions, s, a) / softmax_prob(theta_before, actions, s, a)
}

fn sample_action(probs: &[f64], rng: &mut ProcessRng) -> usize {
    let u: f64 = rng.gen();
    let mut cumulative = 0.0;
    for (a, p) in probs.iter().enumerate() {
        cumulative += p;
        if u < cumulative {
            return a;
        }
    }
    probs.len() - 1
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a(mut hash: u64, values: &[f64]) -> u64 {
    for v in values {
        for byte in v.to_bits().to_le_bytes() {
            hash ^= u64::from(byte);
            hash = hash.wrapping_mul(FNV_PRIME);
        }
    }
    hash
}

impl BacMemory {
    pub fn summary(&self) -> u64 {
        fnv1a(fnv1a(fnv1a(FNV_OFFSET, &self.theta), &self.w), &self.e)
    }
}

/// The BAC agent; owns `M_{t-1}` between calls.
#[derive(Debug, Clone)]
pub struct BacAgent {
    config: BacConfig,
    states: usize,
    actions: usize,
    recording: MemoryRecording,
    memory: Option<BacMemory>,
    t: usize,
    probs: Vec<f64>,
    probs_after: Vec<f64>,
}

impl BacAgent {
    pub fn new(config: BacConfig, states: usize, actions: usize) -> Result<Self> {
        config.validate(states, actions)?;
        Ok(Self {
            config,
            states,
            actions,
            recording: MemoryRecording::default(),
            memory: None,
            t: 0,
            probs: vec![0.0; actions],
            probs_after: vec![0.0; actions],
        })
    }

    pub fn with_recording(mut self, recording: MemoryRecording) -> Self {
        self.recording = recording;
        self
    }

    pub fn config(&self) -> &BacConfig {
        &self.config
    }

    pub fn memory(&self) -> Option<&BacMemory> {
        self.memory.as_ref()
    }

    fn row(&self, s: usize) -> std::ops::Range<usize> {
        s * self.actions..(s + 1) * self.actions
    }

    fn standard_update(memory: &mut BacMemory, cfg: &BacConfig, actions: usize, perception: &Perception, probs: &mut [f64], probs_after: &mut [f64]) -> AgentSignals {
        let prev_s = memory.last_perception.index().expect("standard update follows a non-terminal perception");
        let prev_a = memory.last_action.index().expect("non-terminal perceptions carry a real action");
        let v_next = perception.observation.index().map_or(0.0, |s| memory.w[s]);
        let td_raw = perception.reward + cfg.gamma * v_next - memory.w[prev_s];
        let mut delta = td_raw + cfg.td_bonus;
        if let Some(tau) = cfg.clip_tau {
            delta = delta.max(tau);
        }
        // Without clipping the undone bonus is exactly the raw error.
        let undo = |flag: bool| match (flag, cfg.clip_tau) {
            (false, _) => delta,
            (true, None) => td_raw,
            (true, Some(_)) => delta - cfg.td_bonus,
        };
        let delta_critic = undo(cfg.td_bonus_invert_critic);
        let actor_delta = undo(cfg.td_bonus_invert_actor) - cfg.baseline_c.at(prev_s);

        let decay = cfg.gamma * cfg.lambda;
        for e in memory.e.iter_mut() {
            *e *= decay;
        }
        memory.e[prev_s] += 1.0;
        let step = cfg.alpha * delta_critic;
        for (w, e) in memory.w.iter_mut().zip(&memory.e) {
            *w += step * e;
        }

        let row = prev_s * actions..(prev_s + 1) * actions;
        softmax_row_into(&memory.theta[row.clone()], probs);
        let scale = cfg.beta * actor_delta;
        for (k, theta) in memory.theta[row.clone()].iter_mut().enumerate() {
            let feature = if k == prev_a { 1.0 - probs[k] } else { -probs[k] };
            *theta += scale * feature;
        }
        softmax_row_into(&memory.theta[row], probs_after);
        let likelihood_ratio = probs_after[prev_a] / probs[prev_a];

        memory.last_delta = Some(delta);
        AgentSignals {
            td_error: Some(delta),
            td_raw: Some(td_raw),
            actor_delta: Some(actor_delta),
            likelihood_ratio: Some(likelihood_ratio),
        }
    }
}

impl Agent for BacAgent {
    fn step(&mut self, perception: &Perception, rng: &mut ProcessRng) -> Result<AgentOutput> {
        let t = self.t;
        self.t += 1;
        if let Observation::State(s) = perception.observation {
            if s >= self.states {
                return Err(Error::contract(t, format!("perception state {s} outside {} agent states", self.states)));
            }
        }
        let mut signals = AgentSignals::default();
        match self.memory.as_mut() {
            None => {
                self.memory = Some(BacMemory {
                    theta: self.config.theta0.expand(self.states * self.actions, "theta0")?,
                    w: self.config.w0.expand(self.states, "w0")?,
                    e: vec![0.0; self.states],
                    last_perception: perception.observation,
                    last_action: Action::Terminal,
                    last_delta: None,
                });
            }
            Some(memory) if memory.last_perception.is_terminal() => {
                memory.e.iter_mut().for_each(|e| *e = 0.0);
                memory.last_delta = None;
            }
            Some(memory) => {
                signals = Self::standard_update(memory, &self.config, self.actions, perception, &mut self.probs, &mut self.probs_after);
            }
        }
        let action = match perception.observation {
            Observation::Terminal => Action::Terminal,
            Observation::State(s) => {
                let row = self.row(s);
                let memory = self.memory.as_ref().expect("memory initialised above");
                softmax_row_into(&memory.theta[row], &mut self.probs);
                if !self.probs.iter().all(|p| p.is_finite()) {
                    return Err(Error::NonFinite(format!("policy row for state {s} is {:?}", self.probs)));
                }
                Action::Index(sample_action(&self.probs, rng))
            }
        };
        let memory = self.memory.as_mut().expect("memory initialised above");
        memory.last_perception = perception.observation;
        memory.last_action = action;
        let memory_summary = match self.recording {
            MemoryRecording::Off => 0,
            _ => memory.summary(),
        };
        let snapshot = (self.recording == MemoryRecording::Full).then(|| MemorySnapshot {
            theta: memory.theta.clone(),
            w: memory.w.clone(),
            e: memory.e.clone(),
            action_count: self.actions,
        });
        Ok(AgentOutput { action, signals, memory_summary, snapshot })
    }
}

/// Functional form of one BAC memory update: returns `M_t` and the step output for `M_{t-1}`.
pub fn bac_step(
    memory: Option<&BacMemory>,
    perception: &Perception,
    config: &BacConfig,
    states: usize,
    actions: usize,
    rng: &mut ProcessRng,
) -> Result<(BacMemory, AgentOutput)> {
    let mut agent = BacAgent::new(config.clone(), states, actions)?;
    agent.memory = memory.cloned();
    let out = agent.step(perception, rng)?;
    Ok((agent.memory.expect("step always leaves a memory"), out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeding::TrialSeed;
    use approx::assert_abs_diff_eq;

    fn rng() -> ProcessRng {
        TrialSeed::from(5).rng()
    }

    #[test]
    fn softmax_examples() {
        let theta = vec![0.0; 8];
        for a in 0..4 {
            assert_eq!(softmax_prob(&theta, 4, 1, a), 0.25);
        }
        let mut theta = vec![0.0; 4];
        theta[0] = 2f64.ln();
        assert_abs_diff_eq!(softmax_prob(&theta, 4, 0, 0), 0.4, epsilon = 1e-15);
        let shifted: Vec<f64> = theta.iter().map(|t| t + 700.0).collect();
        assert_abs_diff_eq!(softmax_prob(&shifted, 4, 0, 0), 0.4, epsilon = 1e-12);
    }

    #[test]
    fn compatible_features_uniform() {
        let theta = vec![0.0; 8];
        let g = compatible_features(&theta, 4, 1, 2);
        assert_eq!(&g[..4], &[0.0; 4]);
        assert_eq!(&g[4..], &[-0.25, -0.25, 0.75, -0.25]);
    }

    #[test]
    fn likelihood_ratio_examples() {
        let before = vec![0.0; 4];
        assert_eq!(likelihood_ratio(&before, &before, 4, 0, 1), 1.0);
        let mut after = before.clone();
        after[1] = 1.0;
        let e = std::f64::consts::E;
        assert_abs_diff_eq!(likelihood_ratio(&before, &after, 4, 0, 1), (e / (e + 3.0)) / 0.25, epsilon = 1e-14);
    }

    #[test]
    fn initialisation_branch() {
        let cfg = BacConfig { theta0: Values::Constant(0.5), w0: Values::Constant(-2.0), ..BacConfig::default() };
        let p = Perception::new(Observation::State(0), 0.0);
        let (m, out) = bac_step(None, &p, &cfg, 3, 2, &mut rng()).unwrap();
        assert_eq!(m.theta, vec![0.5; 6]);
        assert_eq!(m.w, vec![-2.0; 3]);
        assert_eq!(m.e, vec![0.0; 3]);
        assert!(matches!(out.action, Action::Index(a) if a < 2));
        assert_eq!(out.signals, AgentSignals::default());
    }

    #[test]
    fn episode_start_clears_traces() {
        let cfg = BacConfig::default();
        let memory = BacMemory {
            theta: vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6],
            w: vec![1.0, 2.0, 3.0],
            e: vec![0.7, 0.0, 0.2],
            last_perception: Observation::Terminal,
            last_action: Action::Terminal,
            last_delta: Some(1.0),
        };
        let p = Perception::new(Observation::State(0), 0.0);
        let (m, out) = bac_step(Some(&memory), &p, &cfg, 3, 2, &mut rng()).unwrap();
        assert_eq!(m.theta, memory.theta);
        assert_eq!(m.w, memory.w);
        assert_eq!(m.e, vec![0.0; 3]);
        assert_eq!(out.signals.td_error, None);
    }

    #[test]
    fn chain_first_termination_td_error() {
        let cfg = BacConfig { beta: 0.1, ..BacConfig::default() };
        let memory = BacMemory {
            theta: vec![0.0; 6],
            w: vec![0.0; 3],
            e: vec![0.0; 3],
            last_perception: Observation::State(0),
            last_action: Action::Index(0),
            last_delta: None,
        };
        let p = Perception::new(Observation::Terminal, 1.0);
        let (m, out) = bac_step(Some(&memory), &p, &cfg, 3, 2, &mut rng()).unwrap();
        assert_eq!(out.signals.td_error, Some(1.0));
        assert_eq!(out.action, Action::Terminal);
        assert_eq!(m.e, vec![1.0, 0.0, 0.0]);
        assert_abs_diff_eq!(m.w[0], 0.1, epsilon = 1e-15);
        // θ row 0 moves by β·Δ·(1-π, -π) = 0.1·(0.5, -0.5)
        assert_abs_diff_eq!(m.theta[0], 0.05, epsilon = 1e-15);
        assert_abs_diff_eq!(m.theta[1], -0.05, epsilon = 1e-15);
        let ratio = out.signals.likelihood_ratio.unwrap();
        assert_abs_diff_eq!(ratio, softmax_prob(&m.theta, 2, 0, 0) / 0.5, epsilon = 1e-15);
    }

    #[test]
    fn baseline_enters_actor_only() {
        let cfg = BacConfig { beta: 0.1, baseline_c: Values::Constant(-5.0), ..BacConfig::default() };
        let memory = BacMemory {
            theta: vec![0.0; 4],
            w: vec![0.0; 2],
            e: vec![0.0; 2],
            last_perception: Observation::State(0),
            last_action: Action::Index(1),
            last_delta: None,
        };
        let p = Perception::new(Observation::State(1), -1.0);
        let (m, out) = bac_step(Some(&memory), &p, &cfg, 2, 2, &mut rng()).unwrap();
        assert_eq!(out.signals.td_error, Some(-1.0));
        assert_eq!(out.signals.actor_delta, Some(4.0));
        assert_abs_diff_eq!(m.w[0], -0.1, epsilon = 1e-15);
        assert!(out.signals.likelihood_ratio.unwrap() > 1.0);
    }

    #[test]
    fn clipping_bounds_delta() {
        let cfg = BacConfig { clip_tau: Some(0.0), ..BacConfig::default() };
        let memory = BacMemory {
            theta: vec![0.0; 4],
            w: vec![0.0; 2],
            e: vec![0.0; 2],
            last_perception: Observation::State(0),
            last_action: Action::Index(0),
            last_delta: None,
        };
        let p = Perception::new(Observation::State(1), -1.0);
        let (m, out) = bac_step(Some(&memory), &p, &cfg, 2, 2, &mut rng()).unwrap();
        assert_eq!(out.signals.td_error, Some(0.0));
        assert_eq!(out.signals.td_raw, Some(-1.0));
        assert_eq!(m.w, vec![0.0, 0.0]);
    }

    #[test]
    fn out_of_range_perception_rejected() {
        let mut agent = BacAgent::new(BacConfig::default(), 2, 2).unwrap();
        let err = agent.step(&Perception::new(Observation::State(2), 0.0), &mut rng()).unwrap_err();
        assert!(matches!(err, Error::Contract { t: 0, .. }));
    }

    #[test]
    fn config_validation() {
        assert!(BacConfig { gamma: 1.5, ..BacConfig::default() }.validate(2, 2).is_err());
        assert!(BacConfig { alpha: -0.1, ..BacConfig::default() }.validate(2, 2).is_err());
        assert!(BacConfig { theta0: Values::Table(vec![0.0; 3]), ..BacConfig::default() }.validate(2, 2).is_err());
        assert!(BacConfig::default().frozen().validate(2, 2).is_ok());
    }

    #[test]
    fn recording_levels() {
        let p = Perception::new(Observation::State(0), 0.0);
        let mut off = BacAgent::new(BacConfig::default(), 1, 2).unwrap().with_recording(MemoryRecording::Off);
        assert_eq!(off.step(&p, &mut rng()).unwrap().memory_summary, 0);
        let mut full = BacAgent::new(BacConfig::default(), 1, 2).unwrap().with_recording(MemoryRecording::Full);
        let out = full.step(&p, &mut rng()).unwrap();
        assert_ne!(out.memory_summary, 0);
        assert_eq!(out.snapshot.unwrap().theta, vec![0.0, 0.0]);
    }
}
