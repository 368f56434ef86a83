//! Tabular episodic environments embedded as reward processes with `P_t = (S_t, R_t)`.

use rand::Rng;

use crate::error::{Error, Result};
use crate::process::{Action, Observation};
use crate::seeding::ProcessRng;

const PMF_TOLERANCE: f64 = 1e-12;
const VALUE_ITERATION_CAP: usize = 100_000;

/// One possible result of taking an action in a state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Outcome {
    pub next: Observation,
    pub probability: f64,
    pub reward: f64,
}

/// A finite MDP with terminal state `s_inf`.
///
/// The reward of a transition is stored with its outcome, and the first reward of
/// every episode (previous state `s_inf`) is `start_reward`.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvironmentModel {
    name: String,
    labels: Vec<String>,
    action_count: usize,
    initial: Vec<f64>,
    start_reward: f64,
    transitions: Vec<Vec<Vec<Outcome>>>,
}

fn check_pmf(what: &str, probabilities: impl Iterator<Item = f64>) -> Result<()> {
    let mut total = 0.0;
    for p in probabilities {
        if !(p.is_finite() && p >= 0.0) {
            return Err(Error::Distribution(format!("{what}: probability {p} is not a finite non-negative number")));
        }
        total += p;
    }
    if (total - 1.0).abs() > PMF_TOLERANCE {
        return Err(Error::Distribution(format!("{what}: probabilities sum to {total}")));
    }
    Ok(())
}

fn sample_index(rng: &mut ProcessRng, weights: impl Iterator<Item = f64> + Clone) -> usize {
    let u: f64 = rng.gen();
    let mut cumulative = 0.0;
    let mut last_positive = 0;
    for (i, w) in weights.enumerate() {
        if w > 0.0 {
            last_positive = i;
        }
        cumulative += w;
        if u < cumulative {
            return i;
        }
    }
    last_positive
}

impl EnvironmentModel {
    /// Validate and build a model. `transitions[s][a]` lists the outcomes of action `a` in state `s`.
    pub fn new(
        name: impl Into<String>,
        labels: Vec<String>,
        action_count: usize,
        initial: Vec<f64>,
        start_reward: f64,
        transitions: Vec<Vec<Vec<Outcome>>>,
    ) -> Result<Self> {
        let state_count = transitions.len();
        if state_count == 0 || action_count == 0 {
            return Err(Error::Config("an environment needs at least one state and one action".into()));
        }
        if labels.len() != state_count || initial.len() != state_count {
            return Err(Error::Config("labels and initial distribution must cover every state".into()));
        }
        check_pmf("initial distribution", initial.iter().copied())?;
        for (s, row) in transitions.iter().enumerate() {
            if row.len() != action_count {
                return Err(Error::Config(format!("state {s} defines {} actions, expected {action_count}", row.len())));
            }
            for (a, outcomes) in row.iter().enumerate() {
                if outcomes.is_empty() {
                    return Err(Error::Distribution(format!("state {s} action {a} has no outcomes")));
                }
                if let Some(bad) = outcomes.iter().find(|o| matches!(o.next, Observation::State(n) if n >= state_count)) {
                    return Err(Error::Config(format!("state {s} action {a} leads to unknown state {:?}", bad.next)));
                }
                check_pmf(&format!("state {s} action {a}"), outcomes.iter().map(|o| o.probability))?;
            }
        }
        Ok(Self { name: name.into(), labels, action_count, initial, start_reward, transitions })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// Number of non-terminal states.
    pub fn state_count(&self) -> usize {
        self.transitions.len()
    }

    pub fn action_count(&self) -> usize {
        self.action_count
    }

    pub fn initial_distribution(&self) -> &[f64] {
        &self.initial
    }

    pub fn start_reward(&self) -> f64 {
        self.start_reward
    }

    pub fn outcomes(&self, state: usize, action: usize) -> &[Outcome] {
        &self.transitions[state][action]
    }

    pub fn label(&self, observation: Observation) -> &str {
        match observation {
            Observation::State(s) => &self.labels[s],
            Observation::Terminal => "s_inf",
        }
    }

    /// Draw an initial state. Consumes randomness only if more than one state is possible.
    pub fn sample_initial(&self, rng: &mut ProcessRng) -> usize {
        let mut support = self.initial.iter().enumerate().filter(|(_, &p)| p > 0.0);
        match (support.next(), support.next()) {
            (Some((s, _)), None) => s,
            _ => sample_index(rng, self.initial.iter().copied()),
        }
    }

    /// Draw the outcome of `action` in `state`.
    pub fn sample_outcome(&self, state: usize, action: usize, rng: &mut ProcessRng) -> Outcome {
        let outcomes = &self.transitions[state][action];
        if outcomes.len() == 1 {
            outcomes[0]
        } else {
            outcomes[sample_index(rng, outcomes.iter().map(|o| o.probability))]
        }
    }

    /// `d_s` together with the reward of the new state: from `s_inf` (or at `t = 0`) the
    /// next state comes from the initial distribution.
    pub fn next_state(
        &self,
        previous: Option<(Observation, Action)>,
        rng: &mut ProcessRng,
    ) -> std::result::Result<(Observation, f64), String> {
        match previous {
            None | Some((Observation::Terminal, _)) => {
                Ok((Observation::State(self.sample_initial(rng)), self.start_reward))
            }
            Some((Observation::State(s), Action::Index(a))) => {
                if s >= self.state_count() || a >= self.action_count {
                    return Err(format!("state {s} / action {a} outside {}", self.name));
                }
                let outcome = self.sample_outcome(s, a, rng);
                Ok((outcome.next, outcome.reward))
            }
            Some((Observation::State(s), Action::Terminal)) => Err(format!("a_inf taken in non-terminal state {s}")),
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "gridworld" => Ok(gridworld()),
            "chain" => Ok(chain()),
            "single_state" => Ok(single_state()),
            other => Err(Error::Config(format!("unknown environment '{other}' (expected gridworld or chain)"))),
        }
    }
}

fn deterministic(next: Observation, reward: f64) -> Vec<Outcome> {
    vec![Outcome { next, probability: 1.0, reward }]
}

pub const GRID_SIDE: usize = 5;
pub const UP: usize = 0;
pub const DOWN: usize = 1;
pub const LEFT: usize = 2;
pub const RIGHT: usize = 3;

/// 5x5 gridworld, states labelled 1-25 row-major (ids 0-24), start top-left.
/// Actions: 0 up, 1 down, 2 left, 3 right; walls leave the agent in place.
pub fn gridworld() -> EnvironmentModel {
    let n = GRID_SIDE * GRID_SIDE;
    let goal = n - 1;
    let transitions = (0..n)
        .map(|s| {
            let (row, col) = (s / GRID_SIDE, s % GRID_SIDE);
            (0..4)
                .map(|a| {
                    if s == goal {
                        return deterministic(Observation::Terminal, 0.0);
                    }
                    let next = match a {
                        UP if row > 0 => s - GRID_SIDE,
                        DOWN if row + 1 < GRID_SIDE => s + GRID_SIDE,
                        LEFT if col > 0 => s - 1,
                        RIGHT if col + 1 < GRID_SIDE => s + 1,
                        _ => s,
                    };
                    deterministic(Observation::State(next), -1.0)
                })
                .collect()
        })
        .collect();
    let mut initial = vec![0.0; n];
    initial[0] = 1.0;
    let labels = (1..=n).map(|k| k.to_string()).collect();
    EnvironmentModel::new("gridworld", labels, 4, initial, 0.0, transitions).expect("gridworld is well formed")
}

pub const CHAIN_END: usize = 0;
pub const CHAIN_CONTINUE: usize = 1;

/// Three-state chain. `a1` (id 0) ends the episode with reward 1 from `s1`/`s2`;
/// `a2` (id 1) advances with reward 0; both actions in `s3` end with reward 10.
pub fn chain() -> EnvironmentModel {
    let advance = |s: usize| {
        vec![deterministic(Observation::Terminal, 1.0), deterministic(Observation::State(s + 1), 0.0)]
    };
    let transitions = vec![
        advance(0),
        advance(1),
        vec![deterministic(Observation::Terminal, 10.0), deterministic(Observation::Terminal, 10.0)],
    ];
    let labels = vec!["s1".into(), "s2".into(), "s3".into()];
    EnvironmentModel::new("chain", labels, 2, vec![1.0, 0.0, 0.0], 0.0, transitions).expect("chain is well formed")
}

/// One state, one action, zero reward; every episode lasts a single move.
pub fn single_state() -> EnvironmentModel {
    EnvironmentModel::new(
        "single_state",
        vec!["s".into()],
        1,
        vec![1.0],
        0.0,
        vec![vec![deterministic(Observation::Terminal, 0.0)]],
    )
    .expect("single-state environment is well formed")
}

/// Maximal expected undiscounted return from the initial distribution, by value iteration.
pub fn optimal_return_oracle(env: &EnvironmentModel) -> Result<f64> {
    let n = env.state_count();
    let mut values = vec![0.0; n];
    for _ in 0..VALUE_ITERATION_CAP {
        let mut change: f64 = 0.0;
        let next: Vec<f64> = (0..n)
            .map(|s| {
                (0..env.action_count())
                    .map(|a| {
                        env.outcomes(s, a)
                            .iter()
                            .map(|o| o.probability * (o.reward + o.next.index().map_or(0.0, |k| values[k])))
                            .sum::<f64>()
                    })
                    .fold(f64::NEG_INFINITY, f64::max)
            })
            .collect();
        for (old, new) in values.iter().zip(&next) {
            change = change.max((old - new).abs());
        }
        values = next;
        if !change.is_finite() {
            break;
        }
        if change <= 1e-12 {
            return Ok(env.initial.iter().zip(&values).map(|(p, v)| p * v).sum());
        }
    }
    Err(Error::Divergence { iterations: VALUE_ITERATION_CAP })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeding::TrialSeed;

    fn step(env: &EnvironmentModel, s: usize, a: usize) -> (Observation, f64) {
        let mut rng = TrialSeed::from(0).rng();
        env.next_state(Some((Observation::State(s), Action::Index(a))), &mut rng).unwrap()
    }

    #[test]
    fn gridworld_moves() {
        let g = gridworld();
        assert_eq!(g.state_count(), 25);
        assert_eq!(step(&g, 0, RIGHT), (Observation::State(1), -1.0));
        assert_eq!(step(&g, 0, UP), (Observation::State(0), -1.0));
        assert_eq!(step(&g, 0, LEFT), (Observation::State(0), -1.0));
        assert_eq!(step(&g, 0, DOWN), (Observation::State(5), -1.0));
        assert_eq!(step(&g, 4, RIGHT), (Observation::State(4), -1.0));
        for a in 0..4 {
            assert_eq!(step(&g, 24, a), (Observation::Terminal, 0.0));
        }
        assert_eq!(g.label(Observation::State(6)), "7");
    }

    #[test]
    fn episode_start_reward_is_zero() {
        let g = gridworld();
        let mut rng = TrialSeed::from(0).rng();
        assert_eq!(g.next_state(None, &mut rng).unwrap(), (Observation::State(0), 0.0));
        assert_eq!(
            g.next_state(Some((Observation::Terminal, Action::Terminal)), &mut rng).unwrap(),
            (Observation::State(0), 0.0)
        );
    }

    #[test]
    fn chain_moves() {
        let c = chain();
        assert_eq!(step(&c, 0, CHAIN_END), (Observation::Terminal, 1.0));
        assert_eq!(step(&c, 1, CHAIN_END), (Observation::Terminal, 1.0));
        assert_eq!(step(&c, 0, CHAIN_CONTINUE), (Observation::State(1), 0.0));
        assert_eq!(step(&c, 1, CHAIN_CONTINUE), (Observation::State(2), 0.0));
        assert_eq!(step(&c, 2, CHAIN_END), (Observation::Terminal, 10.0));
        assert_eq!(step(&c, 2, CHAIN_CONTINUE), (Observation::Terminal, 10.0));
    }

    #[test]
    fn oracle_values() {
        assert_eq!(optimal_return_oracle(&gridworld()).unwrap(), -8.0);
        assert_eq!(optimal_return_oracle(&chain()).unwrap(), 10.0);
        assert_eq!(optimal_return_oracle(&single_state()).unwrap(), 0.0);
    }

    #[test]
    fn oracle_detects_divergence() {
        let looping = EnvironmentModel::new(
            "loop",
            vec!["s".into()],
            1,
            vec![1.0],
            0.0,
            vec![vec![deterministic(Observation::State(0), 1.0)]],
        )
        .unwrap();
        assert!(matches!(optimal_return_oracle(&looping), Err(Error::Divergence { .. })));
    }

    #[test]
    fn invalid_models_rejected() {
        let bad = EnvironmentModel::new(
            "bad",
            vec!["s".into()],
            1,
            vec![0.5],
            0.0,
            vec![vec![deterministic(Observation::Terminal, 0.0)]],
        );
        assert!(matches!(bad, Err(Error::Distribution(_))));
        let unknown = EnvironmentModel::new(
            "bad",
            vec!["s".into()],
            1,
            vec![1.0],
            0.0,
            vec![vec![deterministic(Observation::State(3), 0.0)]],
        );
        assert!(matches!(unknown, Err(Error::Config(_))));
        assert!(EnvironmentModel::from_name("maze").is_err());
    }

    #[test]
    fn stochastic_outcomes_follow_probabilities() {
        let coin = EnvironmentModel::new(
            "coin",
            vec!["a".into(), "b".into()],
            1,
            vec![0.5, 0.5],
            0.0,
            vec![vec![deterministic(Observation::Terminal, 0.0)]; 2],
        )
        .unwrap();
        let mut rng = TrialSeed::from(3).rng();
        let n = 20_000;
        let firsts = (0..n).filter(|_| coin.sample_initial(&mut rng) == 0).count();
        assert!((firsts as f64 / n as f64 - 0.5).abs() < 0.02);
    }
}
