//! Agent-environment interfaces and their inverters.
//!
//! An interface sits between a base environment and the agent. Per step it updates
//! its state from the base perception (`d_y`), builds the agent perception and reward
//! (`f_p`, `f_r`), updates again from the agent action (`d_y'`) and emits the base
//! action (`f_ā`).

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::process::{Action, Agent, AgentOutput, Observation, Perception};
use crate::seeding::ProcessRng;

/// Interface state `Y_t` / `Y'_t`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct AeiState(pub i64);

pub trait Interface: Send + Sync {
    fn name(&self) -> String;

    fn agent_state_count(&self, base_states: usize) -> usize {
        base_states
    }

    fn agent_action_count(&self, base_actions: usize) -> usize {
        base_actions
    }

    /// `Y_t ~ d_y(Y'_{t-1}, P̄_t)`; `previous` is `None` at `t = 0`.
    fn update_pre(&self, previous: Option<AeiState>, base: &Perception, rng: &mut ProcessRng) -> AeiState;

    /// `P_t = f_p(Y_t, P̄_t)` with `R_t = f_r(P_t)` folded in.
    fn agent_perception(&self, y: AeiState, base: &Perception) -> Perception;

    /// `Y'_t ~ d_y'(Y_t, A_t)`.
    fn update_post(&self, y: AeiState, action: Action, rng: &mut ProcessRng) -> AeiState;

    /// `Ā_t = f_ā(Y'_t, A_t)`.
    fn base_action(&self, y_post: AeiState, action: Action) -> Action;
}

/// Passes everything through unchanged.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityAei;

impl Interface for IdentityAei {
    fn name(&self) -> String {
        "identity".into()
    }

    fn update_pre(&self, _: Option<AeiState>, _: &Perception, _: &mut ProcessRng) -> AeiState {
        AeiState(0)
    }

    fn agent_perception(&self, _: AeiState, base: &Perception) -> Perception {
        *base
    }

    fn update_post(&self, y: AeiState, _: Action, _: &mut ProcessRng) -> AeiState {
        y
    }

    fn base_action(&self, _: AeiState, action: Action) -> Action {
        action
    }
}

/// Adds `c` to every non-terminal reward and `c / (1 - γ_q)` to the terminal one.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardBonusAei {
    c: f64,
    gamma_q: f64,
}

impl RewardBonusAei {
    pub fn new(c: f64, gamma_q: f64) -> Result<Self> {
        if !c.is_finite() || !(0.0..1.0).contains(&gamma_q) {
            return Err(Error::Config(format!(
                "reward bonus needs finite c and gamma_q in [0, 1); got c={c}, gamma_q={gamma_q}"
            )));
        }
        Ok(Self { c, gamma_q })
    }

    pub fn bonus(&self, terminal: bool) -> f64 {
        if terminal {
            self.c / (1.0 - self.gamma_q)
        } else {
            self.c
        }
    }

    pub fn inverter(&self) -> RewardBonusInverter {
        RewardBonusInverter { aei: *self }
    }
}

impl Interface for RewardBonusAei {
    fn name(&self) -> String {
        format!("reward_bonus({}, {})", self.c, self.gamma_q)
    }

    fn update_pre(&self, _: Option<AeiState>, _: &Perception, _: &mut ProcessRng) -> AeiState {
        AeiState(0)
    }

    fn agent_perception(&self, _: AeiState, base: &Perception) -> Perception {
        Perception {
            observation: base.observation,
            reward: base.reward + self.bonus(base.is_terminal()),
            base_reward: Some(base.reward),
        }
    }

    fn update_post(&self, y: AeiState, _: Action, _: &mut ProcessRng) -> AeiState {
        y
    }

    fn base_action(&self, _: AeiState, action: Action) -> Action {
        action
    }
}

/// Rescales rewards by `(γ_p / γ_q)^dur(t)`; the interface state counts `dur(t)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AligningAei {
    gamma_p: f64,
    gamma_q: f64,
}

/// `Y'` value after `a_inf`, so that the next `Y` is `-1` (episode start).
const ALIGN_RESET: i64 = -2;

impl AligningAei {
    pub fn new(gamma_p: f64, gamma_q: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&gamma_p) || !(gamma_q > 0.0 && gamma_q <= 1.0) {
            return Err(Error::Config(format!(
                "aligning interface needs gamma_p in [0, 1] and gamma_q in (0, 1]; got {gamma_p}, {gamma_q}"
            )));
        }
        Ok(Self { gamma_p, gamma_q })
    }

    /// Reward factor at the given `dur`; episode-start rewards (`dur = -1`) are unscaled.
    pub fn factor(&self, dur: i64) -> f64 {
        if dur < 0 {
            return 1.0;
        }
        let d = i32::try_from(dur).unwrap_or(i32::MAX);
        self.gamma_p.powi(d) / self.gamma_q.powi(d)
    }
}

impl Interface for AligningAei {
    fn name(&self) -> String {
        format!("aligning({}, {})", self.gamma_p, self.gamma_q)
    }

    fn update_pre(&self, previous: Option<AeiState>, _: &Perception, _: &mut ProcessRng) -> AeiState {
        AeiState(previous.map_or(ALIGN_RESET, |y| y.0) + 1)
    }

    fn agent_perception(&self, y: AeiState, base: &Perception) -> Perception {
        Perception { observation: base.observation, reward: self.factor(y.0) * base.reward, base_reward: Some(base.reward) }
    }

    fn update_post(&self, y: AeiState, action: Action, _: &mut ProcessRng) -> AeiState {
        match action {
            Action::Terminal => AeiState(ALIGN_RESET),
            Action::Index(_) => y,
        }
    }

    fn base_action(&self, _: AeiState, action: Action) -> Action {
        action
    }
}

/// Severs the agent from the environment: one perception, one action, zero reward.
#[derive(Debug, Clone, Copy, Default)]
pub struct ConstantAei;

impl Interface for ConstantAei {
    fn name(&self) -> String {
        "constant".into()
    }

    fn agent_state_count(&self, _: usize) -> usize {
        1
    }

    fn agent_action_count(&self, _: usize) -> usize {
        1
    }

    fn update_pre(&self, _: Option<AeiState>, _: &Perception, _: &mut ProcessRng) -> AeiState {
        AeiState(0)
    }

    fn agent_perception(&self, _: AeiState, base: &Perception) -> Perception {
        let observation = if base.is_terminal() { Observation::Terminal } else { Observation::State(0) };
        Perception { observation, reward: 0.0, base_reward: Some(base.reward) }
    }

    fn update_post(&self, y: AeiState, _: Action, _: &mut ProcessRng) -> AeiState {
        y
    }

    fn base_action(&self, _: AeiState, action: Action) -> Action {
        match action {
            Action::Terminal => Action::Terminal,
            Action::Index(_) => Action::Index(0),
        }
    }
}

/// Functions an inverse algorithm uses to undo an interface: `g_p̄` and `g_a`.
pub trait Inverter: Send + Sync {
    fn invert_perception(&self, perception: &Perception) -> Perception;
    fn pretransform_action(&self, action: Action) -> Action;
}

impl<I: Inverter + ?Sized> Inverter for Box<I> {
    fn invert_perception(&self, perception: &Perception) -> Perception {
        (**self).invert_perception(perception)
    }

    fn pretransform_action(&self, action: Action) -> Action {
        (**self).pretransform_action(action)
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityInverter;

impl Inverter for IdentityInverter {
    fn invert_perception(&self, perception: &Perception) -> Perception {
        *perception
    }

    fn pretransform_action(&self, action: Action) -> Action {
        action
    }
}

/// Undoes a [`RewardBonusAei`]: the embedded base reward is restored exactly, and a
/// perception without one has the bonus subtracted.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardBonusInverter {
    aei: RewardBonusAei,
}

impl Inverter for RewardBonusInverter {
    fn invert_perception(&self, perception: &Perception) -> Perception {
        let reward = perception
            .base_reward
            .unwrap_or_else(|| perception.reward - self.aei.bonus(perception.is_terminal()));
        Perception::new(perception.observation, reward)
    }

    fn pretransform_action(&self, action: Action) -> Action {
        action
    }
}

/// An agent whose perceptions pass through `g_p̄` and whose actions pass through `g_a`.
pub struct InverseAgent<A, I> {
    inner: A,
    inverter: I,
}

impl<A, I> InverseAgent<A, I> {
    pub fn inner(&self) -> &A {
        &self.inner
    }
}

pub fn wrap_inverse<A: Agent, I: Inverter>(agent: A, inverter: I) -> InverseAgent<A, I> {
    InverseAgent { inner: agent, inverter }
}

impl<A: Agent, I: Inverter> Agent for InverseAgent<A, I> {
    fn step(&mut self, perception: &Perception, rng: &mut ProcessRng) -> Result<AgentOutput> {
        let base = self.inverter.invert_perception(perception);
        let mut out = self.inner.step(&base, rng)?;
        out.action = self.inverter.pretransform_action(out.action);
        Ok(out)
    }
}

/// Interface selection as written in configs and on the command line.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum AeiSpec {
    Identity,
    RewardBonus { c: f64, gamma_q: f64 },
    Aligning { gamma_p: f64, gamma_q: f64 },
    Constant,
}

impl AeiSpec {
    pub fn build(&self) -> Result<Box<dyn Interface>> {
        Ok(match *self {
            AeiSpec::Identity => Box::new(IdentityAei),
            AeiSpec::RewardBonus { c, gamma_q } => Box::new(RewardBonusAei::new(c, gamma_q)?),
            AeiSpec::Aligning { gamma_p, gamma_q } => Box::new(AligningAei::new(gamma_p, gamma_q)?),
            AeiSpec::Constant => Box::new(ConstantAei),
        })
    }

    /// The matching inverter, if this interface has one.
    pub fn inverter(&self) -> Result<Option<Box<dyn Inverter>>> {
        Ok(match *self {
            AeiSpec::Identity => Some(Box::new(IdentityInverter)),
            AeiSpec::RewardBonus { c, gamma_q } => Some(Box::new(RewardBonusAei::new(c, gamma_q)?.inverter())),
            AeiSpec::Aligning { .. } | AeiSpec::Constant => None,
        })
    }
}

impl fmt::Display for AeiSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AeiSpec::Identity => write!(f, "identity"),
            AeiSpec::RewardBonus { c, gamma_q } => write!(f, "reward_bonus({c}, {gamma_q})"),
            AeiSpec::Aligning { gamma_p, gamma_q } => write!(f, "aligning({gamma_p}, {gamma_q})"),
            AeiSpec::Constant => write!(f, "constant"),
        }
    }
}

impl FromStr for AeiSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let (name, args) = match s.find('(') {
            Some(open) if s.ends_with(')') => (&s[..open], Some(&s[open + 1..s.len() - 1])),
            Some(_) => return Err(Error::Config(format!("unbalanced parentheses in interface '{s}'"))),
            None => (s, None),
        };
        let numbers = |n: usize| -> Result<Vec<f64>> {
            let parts: Vec<f64> = args
                .unwrap_or("")
                .split(',')
                .map(|p| p.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Config(format!("bad number in interface '{s}': {e}")))?;
            if parts.len() == n {
                Ok(parts)
            } else {
                Err(Error::Config(format!("interface '{name}' takes {n} arguments")))
            }
        };
        match (name.trim(), args) {
            ("identity", None) => Ok(AeiSpec::Identity),
            ("constant", None) => Ok(AeiSpec::Constant),
            ("reward_bonus", Some(_)) => {
                let v = numbers(2)?;
                RewardBonusAei::new(v[0], v[1])?;
                Ok(AeiSpec::RewardBonus { c: v[0], gamma_q: v[1] })
            }
            ("aligning", Some(_)) => {
                let v = numbers(2)?;
                AligningAei::new(v[0], v[1])?;
                Ok(AeiSpec::Aligning { gamma_p: v[0], gamma_q: v[1] })
            }
            _ => Err(Error::Config(format!(
                "unknown interface '{s}' (expected identity, constant, reward_bonus(c, gamma_q) or aligning(gamma_p, gamma_q))"
            ))),
        }
    }
}

impl TryFrom<String> for AeiSpec {
    type Error = Error;

    fn try_from(value: String) -> Result<Self> {
        value.parse()
    }
}

impl From<AeiSpec> for String {
    fn from(spec: AeiSpec) -> String {
        spec.to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeding::TrialSeed;

    fn rng() -> ProcessRng {
        TrialSeed::from(1).rng()
    }

    #[test]
    fn reward_bonus_examples() {
        let aei = RewardBonusAei::new(1.0, 0.5).unwrap();
        let p = aei.agent_perception(AeiState(0), &Perception::new(Observation::State(3), -1.0));
        assert_eq!(p.reward, 0.0);
        assert_eq!(p.base_reward, Some(-1.0));
        let end = aei.agent_perception(AeiState(0), &Perception::new(Observation::Terminal, 0.0));
        assert_eq!(end.reward, 2.0);
        assert!(RewardBonusAei::new(1.0, 1.0).is_err());
    }

    #[test]
    fn bonus_inverter_restores_base() {
        let aei = RewardBonusAei::new(0.3, 0.0).unwrap();
        let inv = aei.inverter();
        for base in [Perception::new(Observation::State(0), -1.0), Perception::new(Observation::Terminal, 0.0)] {
            let p = aei.agent_perception(AeiState(0), &base);
            assert_eq!(inv.invert_perception(&p), base);
            let stripped = Perception::new(p.observation, p.reward);
            assert!((inv.invert_perception(&stripped).reward - base.reward).abs() < 1e-15);
        }
    }

    #[test]
    fn aligning_factor_and_dur_tracking() {
        let aei = AligningAei::new(0.9, 1.0).unwrap();
        assert!((-aei.factor(2) + 0.81).abs() < 1e-15);
        assert_eq!(AligningAei::new(0.7, 0.7).unwrap().factor(5), 1.0);
        let mut r = rng();
        let base = Perception::new(Observation::State(0), 0.0);
        let y0 = aei.update_pre(None, &base, &mut r);
        assert_eq!(y0, AeiState(-1));
        let y1 = aei.update_pre(Some(aei.update_post(y0, Action::Index(0), &mut r)), &base, &mut r);
        assert_eq!(y1, AeiState(0));
        let post_end = aei.update_post(AeiState(4), Action::Terminal, &mut r);
        assert_eq!(aei.update_pre(Some(post_end), &base, &mut r), AeiState(-1));
        assert!(AligningAei::new(0.9, 0.0).is_err());
    }

    #[test]
    fn constant_interface_collapses() {
        let aei = ConstantAei;
        let p = aei.agent_perception(AeiState(0), &Perception::new(Observation::State(7), -1.0));
        assert_eq!((p.observation, p.reward), (Observation::State(0), 0.0));
        let end = aei.agent_perception(AeiState(0), &Perception::new(Observation::Terminal, 3.0));
        assert!(end.is_terminal());
        assert_eq!(aei.base_action(AeiState(0), Action::Index(0)), Action::Index(0));
        assert_eq!(aei.agent_action_count(4), 1);
    }

    #[test]
    fn spec_parsing_round_trip() {
        for text in ["identity", "constant", "reward_bonus(1, 0.5)", "aligning(0.9, 1)"] {
            let spec: AeiSpec = text.parse().unwrap();
            assert_eq!(spec.to_string().parse::<AeiSpec>().unwrap(), spec);
        }
        assert_eq!("reward_bonus( -2 , 0.9 )".parse::<AeiSpec>().unwrap(), AeiSpec::RewardBonus { c: -2.0, gamma_q: 0.9 });
        assert!("reward_bonus(1)".parse::<AeiSpec>().is_err());
        assert!("reward_bonus(1, 1)".parse::<AeiSpec>().is_err());
        assert!("aligning(0.5, 0)".parse::<AeiSpec>().is_err());
        assert!("mirror".parse::<AeiSpec>().is_err());
    }
}
