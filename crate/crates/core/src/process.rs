//! Agent-environment process engine.
//!
//! [`run_aerp`] generates `S_t -> P_t (R_t) -> M_t -> A_t` exactly in that order and
//! [`run_aierp`] generates the interface-mediated order
//! `X_t -> P̄_t (R̄_t) -> Y_t -> P_t (R_t) -> M_t -> A_t -> Y'_t -> Ā_t`.
//! Each sampling step receives only its conditioning arguments, so the Markov
//! structure is enforced by the call signatures.
//!
//! Episodes are chained into one long sequence: the terminal state `s_inf` ends an
//! episode and the next state is drawn from the initial distribution.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::aei::{AeiState, Interface};
use crate::environments::EnvironmentModel;
use crate::error::{Error, Result};
use crate::seeding::{ProcessRng, TrialSeed};

/// Default per-episode horizon guard.
pub const DEFAULT_HORIZON: usize = 1_000_000;

/// State or perception id; `Terminal` is `s_inf` / `p_inf`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Observation {
    State(usize),
    Terminal,
}

impl Observation {
    pub fn is_terminal(self) -> bool {
        matches!(self, Observation::Terminal)
    }

    pub fn index(self) -> Option<usize> {
        match self {
            Observation::State(s) => Some(s),
            Observation::Terminal => None,
        }
    }
}

/// Action id; `Terminal` is `a_inf`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Action {
    Index(usize),
    Terminal,
}

impl Action {
    pub fn index(self) -> Option<usize> {
        match self {
            Action::Index(a) => Some(a),
            Action::Terminal => None,
        }
    }
}

/// Perception `P_t = (S_t, R_t)`.
///
/// Interfaces that rewrite rewards keep the untouched base reward alongside, so a
/// perception is the pair `(P̄_t, R_t)` and an inverter can recover `P̄_t` exactly.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Perception {
    pub observation: Observation,
    pub reward: f64,
    pub base_reward: Option<f64>,
}

impl Perception {
    pub fn new(observation: Observation, reward: f64) -> Self {
        Self { observation, reward, base_reward: None }
    }

    pub fn is_terminal(&self) -> bool {
        self.observation.is_terminal()
    }

    /// The embedded base perception `P̄_t`.
    pub fn base(&self) -> Perception {
        Perception::new(self.observation, self.base_reward.unwrap_or(self.reward))
    }
}

/// Full copy of a tabular agent memory, stored only in debug runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemorySnapshot {
    pub theta: Vec<f64>,
    pub w: Vec<f64>,
    pub e: Vec<f64>,
    pub action_count: usize,
}

/// Learning signals produced by one memory update.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct AgentSignals {
    /// TD error as stored in memory (bonus and clipping applied).
    pub td_error: Option<f64>,
    /// `R + γ v(P, w_prev) - v(P_prev, w_prev)` before any intervention.
    pub td_raw: Option<f64>,
    /// The value multiplying the compatible features in the actor update
    /// (baseline already subtracted).
    pub actor_delta: Option<f64>,
    /// `π(S_prev, A_prev, θ_after) / π(S_prev, A_prev, θ_before)`.
    pub likelihood_ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentOutput {
    pub action: Action,
    pub signals: AgentSignals,
    pub memory_summary: u64,
    pub snapshot: Option<MemorySnapshot>,
}

/// Next-memory distribution and action function of an agent (`d_m`, `f_a`).
///
/// `step` is called once per time step with `P_t`; the agent owns `M_{t-1}`.
pub trait Agent {
    fn step(&mut self, perception: &Perception, rng: &mut ProcessRng) -> Result<AgentOutput>;
}

impl<A: Agent + ?Sized> Agent for Box<A> {
    fn step(&mut self, perception: &Perception, rng: &mut ProcessRng) -> Result<AgentOutput> {
        (**self).step(perception, rng)
    }
}

/// Interface-side values of an AIERP step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InterfaceRecord {
    pub base_reward: f64,
    pub aei_state: AeiState,
    pub aei_post_state: AeiState,
    pub base_action: Action,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub t: usize,
    /// `S_t`, or the base state `X_t` in interface runs.
    pub state: Observation,
    pub perception: Observation,
    /// Agent reward `R_t`.
    pub reward: f64,
    pub memory_summary: u64,
    pub action: Action,
    pub td_error: Option<f64>,
    pub td_raw: Option<f64>,
    pub actor_delta: Option<f64>,
    pub likelihood_ratio: Option<f64>,
    pub interface: Option<InterfaceRecord>,
    pub snapshot: Option<Box<MemorySnapshot>>,
}

impl StepRecord {
    /// Reward generated by the base environment (`R̄_t`); equals `R_t` without an interface.
    pub fn base_reward(&self) -> f64 {
        self.interface.map_or(self.reward, |i| i.base_reward)
    }

    pub fn base_action(&self) -> Action {
        self.interface.map_or(self.action, |i| i.base_action)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpisodeIndex {
    pub episode: usize,
    pub start: usize,
    pub end: usize,
}

impl EpisodeIndex {
    /// Number of non-terminal states in the episode.
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }

    pub fn contains(&self, t: usize) -> bool {
        self.start <= t && t <= self.end
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub steps: Vec<StepRecord>,
    pub episodes: Vec<EpisodeIndex>,
    pub seed: TrialSeed,
}

impl Trace {
    pub fn from_steps(steps: Vec<StepRecord>, seed: TrialSeed) -> Result<Self> {
        let episodes = episode_bounds(&steps)?;
        Ok(Self { steps, episodes, seed })
    }

    pub fn episode_count(&self) -> usize {
        self.episodes.len()
    }

    pub fn episode(&self, i: usize) -> Result<&EpisodeIndex> {
        self.episodes
            .get(i)
            .ok_or_else(|| Error::Trace(format!("episode {i} not in trace ({} episodes)", self.episodes.len())))
    }

    /// Steps `start(i)..=end(i)`.
    pub fn episode_steps(&self, i: usize) -> Result<&[StepRecord]> {
        let ep = self.episode(i)?;
        Ok(&self.steps[ep.start..=ep.end])
    }

    /// The episode containing time `t`.
    pub fn episode_of(&self, t: usize) -> Result<&EpisodeIndex> {
        let idx = self.episodes.partition_point(|e| e.end < t);
        self.episodes
            .get(idx)
            .filter(|e| e.contains(t))
            .ok_or_else(|| Error::Trace(format!("time {t} is not inside a complete episode")))
    }

    pub fn has_snapshots(&self) -> bool {
        !self.steps.is_empty() && self.steps.iter().all(|s| s.snapshot.is_some())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunOptions {
    pub horizon: usize,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self { horizon: DEFAULT_HORIZON }
    }
}

fn check_agent_action(t: usize, perception: Observation, action: Action, action_count: usize) -> Result<()> {
    match (perception, action) {
        (Observation::Terminal, Action::Terminal) => Ok(()),
        (Observation::Terminal, Action::Index(a)) => {
            Err(Error::contract(t, format!("agent chose action {a} on the terminal perception")))
        }
        (Observation::State(_), Action::Terminal) => {
            Err(Error::contract(t, "agent chose a_inf on a non-terminal perception"))
        }
        (Observation::State(_), Action::Index(a)) if a >= action_count => Err(Error::contract(
            t,
            format!("agent action {a} outside the action set of size {action_count}"),
        )),
        _ => Ok(()),
    }
}

struct EpisodeCounter {
    target: usize,
    horizon: usize,
    completed: usize,
    start: usize,
}

impl EpisodeCounter {
    /// Returns true once the requested number of episodes is complete.
    fn observe(&mut self, t: usize, state: Observation) -> Result<bool> {
        if state.is_terminal() {
            self.completed += 1;
            self.start = t + 1;
            Ok(self.completed == self.target)
        } else if t - self.start >= self.horizon {
            Err(Error::HorizonExceeded { episode: self.completed, horizon: self.horizon })
        } else {
            Ok(false)
        }
    }
}

fn record(t: usize, state: Observation, perception: &Perception, out: AgentOutput) -> StepRecord {
    StepRecord {
        t,
        state,
        perception: perception.observation,
        reward: perception.reward,
        memory_summary: out.memory_summary,
        action: out.action,
        td_error: out.signals.td_error,
        td_raw: out.signals.td_raw,
        actor_delta: out.signals.actor_delta,
        likelihood_ratio: out.signals.likelihood_ratio,
        interface: None,
        snapshot: out.snapshot.map(Box::new),
    }
}

/// Run an agent-environment reward process until `episodes` episodes are complete.
pub fn run_aerp(
    env: &EnvironmentModel,
    agent: &mut dyn Agent,
    episodes: usize,
    seed: TrialSeed,
    options: &RunOptions,
) -> Result<Trace> {
    if episodes == 0 {
        return Err(Error::Config("at least one episode is required".into()));
    }
    let mut rng = seed.rng();
    let mut counter = EpisodeCounter { target: episodes, horizon: options.horizon, completed: 0, start: 0 };
    let mut steps = Vec::new();
    let mut previous: Option<(Observation, Action)> = None;
    for t in 0.. {
        // S_t ~ d_s(S_{t-1}, A_{t-1}); P_t = f_p(S_t) carries R_t
        let (state, reward) = env.next_state(previous, &mut rng).map_err(|m| Error::contract(t, m))?;
        let perception = Perception::new(state, reward);
        // M_t ~ d_m(M_{t-1}, P_t); A_t = f_a(M_t)
        let out = agent.step(&perception, &mut rng)?;
        check_agent_action(t, state, out.action, env.action_count())?;
        let action = out.action;
        steps.push(record(t, state, &perception, out));
        if counter.observe(t, state)? {
            break;
        }
        previous = Some((state, action));
    }
    Trace::from_steps(steps, seed)
}

/// Run an agent-interface-environment reward process.
pub fn run_aierp(
    env: &EnvironmentModel,
    aei: &dyn Interface,
    agent: &mut dyn Agent,
    episodes: usize,
    seed: TrialSeed,
    options: &RunOptions,
) -> Result<Trace> {
    if episodes == 0 {
        return Err(Error::Config("at least one episode is required".into()));
    }
    let mut rng = seed.rng();
    let mut counter = EpisodeCounter { target: episodes, horizon: options.horizon, completed: 0, start: 0 };
    let agent_actions = aei.agent_action_count(env.action_count());
    let mut steps = Vec::new();
    let mut previous: Option<(Observation, Action)> = None;
    let mut previous_post: Option<AeiState> = None;
    for t in 0.. {
        // X_t ~ d_x(X_{t-1}, Ā_{t-1}); P̄_t = f_p̄(X_t); R̄_t = f_r̄(P̄_t)
        let (base_state, base_reward) =
            env.next_state(previous, &mut rng).map_err(|m| Error::contract(t, m))?;
        let base = Perception::new(base_state, base_reward);
        // Y_t ~ d_y(Y'_{t-1}, P̄_t)
        let y = aei.update_pre(previous_post, &base, &mut rng);
        // P_t = f_p(Y_t, P̄_t); R_t = f_r(P_t)
        let perception = aei.agent_perception(y, &base);
        if perception.is_terminal() != base.is_terminal() {
            return Err(Error::contract(t, "interface does not preserve episode termination"));
        }
        let out = agent.step(&perception, &mut rng)?;
        check_agent_action(t, perception.observation, out.action, agent_actions)?;
        let action = out.action;
        // Y'_t ~ d_y'(Y_t, A_t); Ā_t = f_ā(Y'_t, A_t)
        let y_post = aei.update_post(y, action, &mut rng);
        let base_action = aei.base_action(y_post, action);
        check_agent_action(t, base_state, base_action, env.action_count())
            .map_err(|_| Error::contract(t, format!("interface emitted base action {base_action:?} outside the base action set")))?;
        let mut rec = record(t, base_state, &perception, out);
        rec.interface = Some(InterfaceRecord { base_reward, aei_state: y, aei_post_state: y_post, base_action });
        steps.push(rec);
        if counter.observe(t, base_state)? {
            break;
        }
        previous = Some((base_state, base_action));
        previous_post = Some(y_post);
    }
    Trace::from_steps(steps, seed)
}

/// Recover `start(i)`/`end(i)` for every episode of a step sequence.
pub fn episode_bounds(steps: &[StepRecord]) -> Result<Vec<EpisodeIndex>> {
    if steps.is_empty() {
        return Err(Error::Trace("empty trace".into()));
    }
    if !steps.last().is_some_and(|s| s.state.is_terminal()) {
        return Err(Error::Trace("trace ends mid-episode; request whole episodes".into()));
    }
    let mut bounds = Vec::new();
    let mut start = 0;
    for (t, step) in steps.iter().enumerate() {
        if step.t != t {
            return Err(Error::Trace(format!("time index {} at position {t}", step.t)));
        }
        if step.state.is_terminal() {
            if t == start {
                return Err(Error::Trace(format!("episode {} starts in s_inf at t={t}", bounds.len())));
            }
            bounds.push(EpisodeIndex { episode: bounds.len(), start, end: t });
            start = t + 1;
        }
    }
    Ok(bounds)
}

/// `dur(t) = t - (start(i) + 1)`, defined for reward times `start(i) < t <= end(i)`.
pub fn dur(t: usize, bounds: &EpisodeIndex) -> Result<usize> {
    if t > bounds.start && t <= bounds.end {
        Ok(t - (bounds.start + 1))
    } else {
        Err(Error::Trace(format!(
            "dur({t}) undefined for episode {} spanning [{}, {}]",
            bounds.episode, bounds.start, bounds.end
        )))
    }
}

/// Which reward a return is computed from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RewardChannel {
    /// `R_t`, what the agent perceives.
    Agent,
    /// `R̄_t`, what the base environment produced.
    Base,
}

impl RewardChannel {
    pub fn of(self, step: &StepRecord) -> f64 {
        match self {
            RewardChannel::Agent => step.reward,
            RewardChannel::Base => step.base_reward(),
        }
    }
}

/// `γ^d`, with `0^0 = 1`.
pub fn discount(gamma: f64, d: usize) -> f64 {
    gamma.powi(i32::try_from(d).unwrap_or(i32::MAX))
}

/// `Σ_{t=start+1}^{end} γ^{dur(t)} R_t` over one episode on the given channel.
pub fn episode_return(trace: &Trace, i: usize, gamma: f64, channel: RewardChannel) -> Result<f64> {
    let ep = trace.episode(i)?;
    let mut total = 0.0;
    for (d, step) in trace.steps[ep.start + 1..=ep.end].iter().enumerate() {
        total += discount(gamma, d) * channel.of(step);
    }
    Ok(total)
}

/// Discounted return `G_i` of episode `i` (agent rewards; `R_start(i)` excluded).
pub fn discounted_return_episode(trace: &Trace, i: usize, gamma: f64) -> Result<f64> {
    episode_return(trace, i, gamma, RewardChannel::Agent)
}

/// Discounted return from time `t`: `Σ_{k=t+1}^{end(t)} γ^{k-(t+1)} R_k`, zero at `p_inf`.
pub fn discounted_return_from(trace: &Trace, t: usize, gamma: f64) -> Result<f64> {
    let ep = trace.episode_of(t)?;
    if trace.steps[t].perception.is_terminal() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for (d, step) in trace.steps[t + 1..=ep.end].iter().enumerate() {
        total += discount(gamma, d) * step.reward;
    }
    Ok(total)
}

/// Fields compared by [`first_divergence`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TraceField {
    Time,
    State,
    Perception,
    Reward,
    Memory,
    Action,
    TdError,
    TdRaw,
    ActorDelta,
    LikelihoodRatio,
    BaseReward,
    AeiState,
    BaseAction,
}

impl TraceField {
    pub const ALL: [TraceField; 13] = [
        TraceField::Time,
        TraceField::State,
        TraceField::Perception,
        TraceField::Reward,
        TraceField::Memory,
        TraceField::Action,
        TraceField::TdError,
        TraceField::TdRaw,
        TraceField::ActorDelta,
        TraceField::LikelihoodRatio,
        TraceField::BaseReward,
        TraceField::AeiState,
        TraceField::BaseAction,
    ];
}

fn bits(x: Option<f64>) -> Option<u64> {
    x.map(f64::to_bits)
}

fn field_equal(a: &StepRecord, b: &StepRecord, field: TraceField) -> bool {
    match field {
        TraceField::Time => a.t == b.t,
        TraceField::State => a.state == b.state,
        TraceField::Perception => a.perception == b.perception,
        TraceField::Reward => a.reward.to_bits() == b.reward.to_bits(),
        TraceField::Memory => a.memory_summary == b.memory_summary && a.snapshot == b.snapshot,
        TraceField::Action => a.action == b.action,
        TraceField::TdError => bits(a.td_error) == bits(b.td_error),
        TraceField::TdRaw => bits(a.td_raw) == bits(b.td_raw),
        TraceField::ActorDelta => bits(a.actor_delta) == bits(b.actor_delta),
        TraceField::LikelihoodRatio => bits(a.likelihood_ratio) == bits(b.likelihood_ratio),
        TraceField::BaseReward => a.base_reward().to_bits() == b.base_reward().to_bits(),
        TraceField::AeiState => {
            a.interface.map(|i| (i.aei_state, i.aei_post_state)) == b.interface.map(|i| (i.aei_state, i.aei_post_state))
        }
        TraceField::BaseAction => a.base_action() == b.base_action(),
    }
}

/// First `(t, field)` where two traces differ, ignoring `skip`. Floats compare bitwise.
/// A length mismatch is reported at the first missing step as [`TraceField::Time`].
pub fn first_divergence(a: &Trace, b: &Trace, skip: &[TraceField]) -> Option<(usize, TraceField)> {
    for (sa, sb) in a.steps.iter().zip(&b.steps) {
        for field in TraceField::ALL {
            if !skip.contains(&field) && !field_equal(sa, sb, field) {
                return Some((sa.t, field));
            }
        }
    }
    if a.steps.len() != b.steps.len() {
        return Some((a.steps.len().min(b.steps.len()), TraceField::Time));
    }
    None
}

fn opt_cell(x: Option<f64>) -> String {
    x.map(crate::harness::output::fmt_sig9).unwrap_or_default()
}

pub const TRACE_CSV_HEADER: &str =
    "trial,t,episode,state,perception_is_terminal,reward,action,td_error,likelihood_ratio";

/// Append one CSV row per step. Terminal states and actions are written as `inf`.
pub fn write_trace_csv<W: Write>(out: &mut W, trial: usize, trace: &Trace) -> std::io::Result<()> {
    let mut episode = 0;
    for step in &trace.steps {
        let state = step.state.index().map_or_else(|| "inf".to_string(), |s| s.to_string());
        let action = step.action.index().map_or_else(|| "inf".to_string(), |a| a.to_string());
        writeln!(
            out,
            "{trial},{},{episode},{state},{},{},{action},{},{}",
            step.t,
            u8::from(step.perception.is_terminal()),
            crate::harness::output::fmt_sig9(step.reward),
            opt_cell(step.td_error),
            opt_cell(step.likelihood_ratio),
        )?;
        if step.state.is_terminal() {
            episode += 1;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn step(t: usize, state: Observation, reward: f64) -> StepRecord {
        StepRecord {
            t,
            state,
            perception: state,
            reward,
            memory_summary: 0,
            action: if state.is_terminal() { Action::Terminal } else { Action::Index(0) },
            td_error: None,
            td_raw: None,
            actor_delta: None,
            likelihood_ratio: None,
            interface: None,
            snapshot: None,
        }
    }

    fn trace_of(states: &[Option<usize>], rewards: &[f64]) -> Trace {
        let steps = states
            .iter()
            .zip(rewards)
            .enumerate()
            .map(|(t, (s, r))| step(t, s.map_or(Observation::Terminal, Observation::State), *r))
            .collect();
        Trace::from_steps(steps, TrialSeed::from(0)).unwrap()
    }

    #[test]
    fn single_episode_bounds() {
        // states [1, 25, s_inf]
        let tr = trace_of(&[Some(0), Some(24), None], &[0.0, -1.0, 0.0]);
        assert_eq!(tr.episodes, vec![EpisodeIndex { episode: 0, start: 0, end: 2 }]);
        assert_eq!(tr.episodes[0].len(), 2);
    }

    #[test]
    fn chained_episode_bounds() {
        let tr = trace_of(&[Some(0), Some(1), None, Some(0), Some(1), Some(2), None], &[0.0; 7]);
        let b: Vec<_> = tr.episodes.iter().map(|e| (e.start, e.end)).collect();
        assert_eq!(b, vec![(0, 2), (3, 6)]);
    }

    #[test]
    fn mid_episode_trace_rejected() {
        let steps = vec![step(0, Observation::State(0), 0.0), step(1, Observation::State(1), -1.0)];
        assert!(matches!(episode_bounds(&steps), Err(Error::Trace(_))));
        assert!(episode_bounds(&[]).is_err());
    }

    #[test]
    fn dur_values() {
        let ep = EpisodeIndex { episode: 0, start: 10, end: 19 };
        assert_eq!(dur(11, &ep).unwrap(), 0);
        assert_eq!(dur(14, &ep).unwrap(), 3);
        assert_eq!(ep.len(), 9);
        assert_eq!(dur(19, &ep).unwrap(), 8);
        assert!(dur(10, &ep).is_err());
        assert!(dur(20, &ep).is_err());
    }

    #[test]
    fn returns_exclude_start_reward() {
        // start reward 5 must not count
        let tr = trace_of(&[Some(0), Some(1), Some(2), None], &[5.0, -1.0, -1.0, 0.0]);
        assert_eq!(discounted_return_episode(&tr, 0, 1.0).unwrap(), -2.0);
        assert_eq!(discounted_return_episode(&tr, 0, 0.0).unwrap(), -1.0);
        assert_eq!(discounted_return_episode(&tr, 0, 0.5).unwrap(), -1.5);
        assert_eq!(discounted_return_from(&tr, 0, 1.0).unwrap(), discounted_return_episode(&tr, 0, 1.0).unwrap());
        assert_eq!(discounted_return_from(&tr, 2, 1.0).unwrap(), 0.0);
        assert_eq!(discounted_return_from(&tr, 3, 1.0).unwrap(), 0.0);
    }

    #[test]
    fn divergence_detects_first_field() {
        let a = trace_of(&[Some(0), Some(1), None], &[0.0, -1.0, 0.0]);
        let mut b = a.clone();
        b.steps[1].reward = 3.0;
        assert_eq!(first_divergence(&a, &b, &[]), Some((1, TraceField::Reward)));
        assert_eq!(first_divergence(&a, &b, &[TraceField::Reward, TraceField::BaseReward]), None);
    }

    #[test]
    fn trace_csv_rows() {
        let tr = trace_of(&[Some(0), Some(1), None], &[0.0, -1.0, 0.0]);
        let mut buf = Vec::new();
        write_trace_csv(&mut buf, 3, &tr).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines.len(), 3);
        assert_eq!(lines[1], "3,1,0,1,0,-1,0,,");
        assert_eq!(lines[2], "3,2,0,inf,1,0,inf,,");
    }
}
