//! Information measures over finite alphabets, representation maps, and the
//! seed-coupled exploitability checks.
//!
//! Measures are computed with natural logarithms and converted to bits on return,
//! except relative entropy which is reported in nats.

use std::f64::consts::LN_2;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::Serialize;

use crate::aei::{wrap_inverse, IdentityAei, RewardBonusAei};
use crate::agents::{softmax_prob, BacAgent, BacConfig};
use crate::environments::EnvironmentModel;
use crate::error::{Error, Result};
use crate::metrics::{trial_performance, trial_reward_qualia};
use crate::process::{
    first_divergence, run_aerp, run_aierp, Action, MemorySnapshot, Observation, RunOptions, Trace, TraceField,
};
use crate::seeding::TrialSeed;

/// Tolerance for a probability vector to count as normalised.
pub const PMF_TOLERANCE: f64 = 1e-12;
/// Largest deviation accepted by the invariance checks.
pub const INVARIANCE_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct FinitePmf {
    probabilities: Vec<f64>,
}

impl FinitePmf {
    pub fn new(probabilities: Vec<f64>) -> Result<Self> {
        if probabilities.is_empty() {
            return Err(Error::Distribution("empty alphabet".into()));
        }
        if let Some(p) = probabilities.iter().find(|p| !(p.is_finite() && **p >= 0.0)) {
            return Err(Error::Distribution(format!("entry {p} is not a finite non-negative number")));
        }
        let total: f64 = probabilities.iter().sum();
        if (total - 1.0).abs() > PMF_TOLERANCE {
            return Err(Error::Distribution(format!("probabilities sum to {total}")));
        }
        Ok(Self { probabilities })
    }

    /// Normalise non-negative weights.
    pub fn from_weights(weights: &[f64]) -> Result<Self> {
        let total: f64 = weights.iter().sum();
        if !(total > 0.0 && total.is_finite()) {
            return Err(Error::Distribution("weights must have a positive finite sum".into()));
        }
        Self::new(weights.iter().map(|w| w / total).collect())
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.probabilities
    }

    pub fn len(&self) -> usize {
        self.probabilities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probabilities.is_empty()
    }

    /// The distribution of `map(X)`.
    pub fn reencode(&self, map: &RepresentationMap) -> Result<Self> {
        map.check_alphabet(self.len())?;
        let mut out = vec![0.0; self.len()];
        for (x, &p) in self.probabilities.iter().enumerate() {
            out[map.apply(x)] = p;
        }
        Ok(Self { probabilities: out })
    }
}

fn neg_p_ln_p(p: f64) -> f64 {
    if p > 0.0 {
        -p * p.ln()
    } else {
        0.0
    }
}

/// Shannon entropy in bits, with `0 log 0 = 0`.
pub fn shannon_entropy(p: &FinitePmf) -> f64 {
    p.probabilities.iter().map(|&x| neg_p_ln_p(x)).sum::<f64>() / LN_2
}

/// Plug-in entropy in bits of the empirical distribution given by `counts`.
pub fn entropy_from_counts(counts: impl IntoIterator<Item = usize>) -> f64 {
    let counts: Vec<usize> = counts.into_iter().collect();
    let total: usize = counts.iter().sum();
    if total == 0 {
        return 0.0;
    }
    let n = total as f64;
    counts.iter().map(|&c| neg_p_ln_p(c as f64 / n)).sum::<f64>() / LN_2
}

/// A joint pmf over `rows x cols`, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct JointPmf {
    rows: usize,
    cols: usize,
    pmf: FinitePmf,
}

impl JointPmf {
    pub fn new(rows: usize, cols: usize, probabilities: Vec<f64>) -> Result<Self> {
        if rows * cols != probabilities.len() {
            return Err(Error::Distribution(format!("{} entries for a {rows}x{cols} joint", probabilities.len())));
        }
        Ok(Self { rows, cols, pmf: FinitePmf::new(probabilities)? })
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.pmf.probabilities[x * self.cols + y]
    }

    pub fn marginals(&self) -> (Vec<f64>, Vec<f64>) {
        let mut px = vec![0.0; self.rows];
        let mut py = vec![0.0; self.cols];
        for x in 0..self.rows {
            for y in 0..self.cols {
                px[x] += self.get(x, y);
                py[y] += self.get(x, y);
            }
        }
        (px, py)
    }

    /// The joint of `(f(X), g(Y))`.
    pub fn reencode(&self, fx: &RepresentationMap, gy: &RepresentationMap) -> Result<Self> {
        fx.check_alphabet(self.rows)?;
        gy.check_alphabet(self.cols)?;
        let mut out = vec![0.0; self.rows * self.cols];
        for x in 0..self.rows {
            for y in 0..self.cols {
                out[fx.apply(x) * self.cols + gy.apply(y)] = self.get(x, y);
            }
        }
        Ok(Self { rows: self.rows, cols: self.cols, pmf: FinitePmf { probabilities: out } })
    }
}

/// Mutual information in bits.
pub fn mutual_information(joint: &JointPmf) -> f64 {
    let (px, py) = joint.marginals();
    let mut total = 0.0;
    for (x, &pxv) in px.iter().enumerate() {
        for (y, &pyv) in py.iter().enumerate() {
            let p = joint.get(x, y);
            if p > 0.0 {
                total += p * (p / (pxv * pyv)).ln();
            }
        }
    }
    total / LN_2
}

/// Relative entropy `D(p || q)` in nats.
pub fn kl_divergence(p: &FinitePmf, q: &FinitePmf) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::Distribution("distributions over different alphabets".into()));
    }
    let mut total = 0.0;
    for (&a, &b) in p.probabilities.iter().zip(&q.probabilities) {
        if a > 0.0 {
            if b == 0.0 {
                return Err(Error::SupportMismatch);
            }
            total += a * (a / b).ln();
        }
    }
    Ok(total)
}

/// Differential entropy in bits of the uniform distribution on `[a, b]`.
pub fn differential_entropy_uniform(a: f64, b: f64) -> Result<f64> {
    if !(b > a) || !a.is_finite() || !b.is_finite() {
        return Err(Error::Distribution(format!("uniform on [{a}, {b}] needs finite a < b")));
    }
    Ok((b - a).log2())
}

/// A bijection on `{0, ..., n-1}`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RepresentationMap {
    forward: Vec<usize>,
    label: String,
}

impl RepresentationMap {
    pub fn new(forward: Vec<usize>, label: impl Into<String>) -> Result<Self> {
        let label = label.into();
        let mut seen = vec![false; forward.len()];
        for &y in &forward {
            if y >= forward.len() || std::mem::replace(&mut seen[y], true) {
                return Err(Error::Representation(format!("map '{label}' is not a bijection on {} ids", forward.len())));
            }
        }
        Ok(Self { forward, label })
    }

    pub fn identity(n: usize) -> Self {
        Self { forward: (0..n).collect(), label: "identity".into() }
    }

    pub fn random<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Self {
        let mut forward: Vec<usize> = (0..n).collect();
        forward.shuffle(rng);
        Self { forward, label: "random".into() }
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn len(&self) -> usize {
        self.forward.len()
    }

    pub fn is_empty(&self) -> bool {
        self.forward.is_empty()
    }

    pub fn apply(&self, x: usize) -> usize {
        self.forward[x]
    }

    pub fn inverse(&self) -> Self {
        let mut back = vec![0; self.forward.len()];
        for (x, &y) in self.forward.iter().enumerate() {
            back[y] = x;
        }
        Self { forward: back, label: format!("{}^-1", self.label) }
    }

    fn check_alphabet(&self, n: usize) -> Result<()> {
        if self.forward.len() == n {
            Ok(())
        } else {
            Err(Error::Representation(format!("map '{}' covers {} ids, alphabet has {n}", self.label, self.forward.len())))
        }
    }
}

/// A named pass/fail check with its largest observed deviation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckResult {
    pub check: String,
    pub max_deviation: f64,
    pub passed: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

impl CheckResult {
    fn within(check: impl Into<String>, max_deviation: f64, tolerance: f64) -> Self {
        Self { check: check.into(), max_deviation, passed: max_deviation <= tolerance, detail: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Measure {
    Entropy,
    MutualInformation,
    RelativeEntropy,
}

impl std::str::FromStr for Measure {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "entropy" => Ok(Measure::Entropy),
            "mi" | "mutual_information" => Ok(Measure::MutualInformation),
            "kl" | "relative_entropy" => Ok(Measure::RelativeEntropy),
            other => Err(Error::Config(format!("unknown measure '{other}' (expected entropy, mi or kl)"))),
        }
    }
}

fn random_weights<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<f64> {
    // An occasional zero exercises the 0 log 0 convention.
    (0..n).map(|_| if rng.gen_bool(0.1) { 0.0 } else { rng.gen::<f64>() }).collect()
}

fn random_pmf<R: Rng + ?Sized>(n: usize, rng: &mut R) -> FinitePmf {
    loop {
        if let Ok(p) = FinitePmf::from_weights(&random_weights(n, rng)) {
            return p;
        }
    }
}

/// Sample random pmfs and bijections and report the largest change of `measure`
/// under re-encoding. For mutual information `n` is the size of each variable's
/// alphabet and each variable gets its own permutation; for relative entropy both
/// distributions share one permutation.
pub fn check_invariance(measure: Measure, n: usize, trials: usize, seed: u64) -> Result<CheckResult> {
    if n < 2 {
        return Err(Error::Config("invariance checks need an alphabet of at least 2".into()));
    }
    let mut rng = TrialSeed::new(seed, 0).rng();
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let deviation = match measure {
            Measure::Entropy => {
                let p = random_pmf(n, &mut rng);
                let map = RepresentationMap::random(n, &mut rng);
                (shannon_entropy(&p) - shannon_entropy(&p.reencode(&map)?)).abs()
            }
            Measure::MutualInformation => {
                let joint = JointPmf::new(n, n, random_pmf(n * n, &mut rng).probabilities)?;
                let fx = RepresentationMap::random(n, &mut rng);
                let gy = RepresentationMap::random(n, &mut rng);
                (mutual_information(&joint) - mutual_information(&joint.reencode(&fx, &gy)?)).abs()
            }
            Measure::RelativeEntropy => {
                let q = FinitePmf::from_weights(&(0..n).map(|_| rng.gen::<f64>() + 1e-3).collect::<Vec<_>>())?;
                let p = random_pmf(n, &mut rng);
                let map = RepresentationMap::random(n, &mut rng);
                (kl_divergence(&p, &q)? - kl_divergence(&p.reencode(&map)?, &q.reencode(&map)?)?).abs()
            }
        };
        worst = worst.max(deviation);
    }
    let name = match measure {
        Measure::Entropy => "entropy_invariance",
        Measure::MutualInformation => "mutual_information_invariance",
        Measure::RelativeEntropy => "relative_entropy_invariance",
    };
    Ok(CheckResult::within(name, worst, INVARIANCE_TOLERANCE))
}

/// Per-field re-encodings applied by [`reencode_trace`].
#[derive(Debug, Clone, Default)]
pub struct TraceMaps {
    /// Applied to states and perceptions; `s_inf` / `p_inf` are always fixed.
    pub state: Option<RepresentationMap>,
    /// Applied to agent and base actions; `a_inf` is always fixed.
    pub action: Option<RepresentationMap>,
    /// XOR mask on memory summaries (a bijection on 64-bit ids).
    pub memory_mask: u64,
    /// Added to the agent reward of every non-terminal step.
    pub reward_shift: Option<f64>,
}

fn map_observation(o: Observation, map: Option<&RepresentationMap>) -> Result<Observation> {
    match (o, map) {
        (Observation::State(s), Some(m)) if s >= m.len() => {
            Err(Error::Representation(format!("state {s} outside map '{}'", m.label())))
        }
        (Observation::State(s), Some(m)) => Ok(Observation::State(m.apply(s))),
        (o, _) => Ok(o),
    }
}

fn map_action(a: Action, map: Option<&RepresentationMap>) -> Result<Action> {
    match (a, map) {
        (Action::Index(x), Some(m)) if x >= m.len() => {
            Err(Error::Representation(format!("action {x} outside map '{}'", m.label())))
        }
        (Action::Index(x), Some(m)) => Ok(Action::Index(m.apply(x))),
        (a, _) => Ok(a),
    }
}

fn map_snapshot(snap: &MemorySnapshot, states: Option<&RepresentationMap>, actions: Option<&RepresentationMap>) -> Result<MemorySnapshot> {
    let n_actions = snap.action_count;
    let n_states = snap.w.len();
    let sigma = |s: usize| states.map_or(s, |m| m.apply(s));
    let tau = |a: usize| actions.map_or(a, |m| m.apply(a));
    if states.is_some_and(|m| m.len() != n_states) || actions.is_some_and(|m| m.len() != n_actions) {
        return Err(Error::Representation("map size differs from the memory layout".into()));
    }
    let mut theta = vec![0.0; snap.theta.len()];
    let mut w = vec![0.0; n_states];
    let mut e = vec![0.0; n_states];
    for s in 0..n_states {
        w[sigma(s)] = snap.w[s];
        e[sigma(s)] = snap.e[s];
        for a in 0..n_actions {
            theta[sigma(s) * n_actions + tau(a)] = snap.theta[s * n_actions + a];
        }
    }
    Ok(MemorySnapshot { theta, w, e, action_count: n_actions })
}

/// Apply termination-preserving re-encodings to every id field of a trace.
pub fn reencode_trace(trace: &Trace, maps: &TraceMaps) -> Result<Trace> {
    let (sm, am) = (maps.state.as_ref(), maps.action.as_ref());
    let mut out = trace.clone();
    for step in &mut out.steps {
        step.state = map_observation(step.state, sm)?;
        step.perception = map_observation(step.perception, sm)?;
        step.action = map_action(step.action, am)?;
        step.memory_summary ^= maps.memory_mask;
        if let (Some(c), false) = (maps.reward_shift, step.perception.is_terminal()) {
            step.reward += c;
        }
        if let Some(iface) = step.interface.as_mut() {
            iface.base_action = map_action(iface.base_action, am)?;
        }
        if let Some(snap) = step.snapshot.as_mut() {
            **snap = map_snapshot(snap, sm, am)?;
        }
    }
    Ok(out)
}

/// Likelihood ratios recomputed from memory snapshots: for every step carrying a
/// recorded ratio, `π(S_{t-1}, A_{t-1}, θ_t) / π(S_{t-1}, A_{t-1}, θ_{t-1})`.
pub fn recompute_likelihood_ratios(trace: &Trace) -> Result<Vec<Option<f64>>> {
    if !trace.has_snapshots() {
        return Err(Error::Trace("recomputing likelihood ratios needs full memory snapshots".into()));
    }
    let mut out = vec![None; trace.steps.len()];
    for t in 1..trace.steps.len() {
        if trace.steps[t].likelihood_ratio.is_none() {
            continue;
        }
        let prev = &trace.steps[t - 1];
        let (Some(s), Some(a)) = (prev.perception.index(), prev.action.index()) else {
            return Err(Error::Trace(format!("standard update at t={t} follows a terminal step")));
        };
        let before = prev.snapshot.as_deref().expect("checked above");
        let after = trace.steps[t].snapshot.as_deref().expect("checked above");
        let n = before.action_count;
        out[t] = Some(softmax_prob(&after.theta, n, s, a) / softmax_prob(&before.theta, n, s, a));
    }
    Ok(out)
}

/// Outcome of a batch of seed-coupled trial pairs.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoupledReport {
    pub trials: usize,
    pub checks: Vec<CheckResult>,
}

impl CoupledReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

fn divergence_check(name: &str, divergences: &[(usize, usize, TraceField)]) -> CheckResult {
    let detail = divergences
        .first()
        .map(|(trial, t, field)| format!("trial {trial}: first divergence in {field:?} at t={t}"));
    CheckResult { check: name.into(), max_deviation: divergences.len() as f64, passed: divergences.is_empty(), detail }
}

/// Seed-coupled pairs `(BAC, identity)` vs `(inverse BAC, reward bonus c)`.
///
/// Checks that every field except the agent reward is identical, that the per-trial
/// reward-qualia difference equals `c i_max / (1 - γ_q)` to 1e-9 relative, and that
/// the performance difference is exactly zero.
pub fn exploitability_demo(
    env: &EnvironmentModel,
    config: &BacConfig,
    c: f64,
    gamma_q: f64,
    i_max: usize,
    trials: usize,
    seed: u64,
) -> Result<CoupledReport> {
    let bonus = RewardBonusAei::new(c, gamma_q)?;
    let expected = c * i_max as f64 / (1.0 - gamma_q);
    let opts = RunOptions::default();
    let mut divergences = Vec::new();
    let (mut worst_qualia, mut worst_perf): (f64, f64) = (0.0, 0.0);
    for trial in 0..trials {
        let trial_seed = TrialSeed::derive(seed, 0, trial as u32);
        let mut plain = BacAgent::new(config.clone(), env.state_count(), env.action_count())?;
        let reference = run_aierp(env, &IdentityAei, &mut plain, i_max, trial_seed, &opts)?;
        let mut inverse = wrap_inverse(BacAgent::new(config.clone(), env.state_count(), env.action_count())?, bonus.inverter());
        let exploited = run_aierp(env, &bonus, &mut inverse, i_max, trial_seed, &opts)?;
        if let Some((t, field)) = first_divergence(&reference, &exploited, &[TraceField::Reward]) {
            divergences.push((trial, t, field));
        }
        let dq = trial_reward_qualia(&exploited, gamma_q, i_max)? - trial_reward_qualia(&reference, gamma_q, i_max)?;
        worst_qualia = worst_qualia.max((dq - expected).abs() / expected.abs().max(1.0));
        let dp = trial_performance(&exploited, i_max)? - trial_performance(&reference, i_max)?;
        worst_perf = worst_perf.max(dp.abs());
    }
    Ok(CoupledReport {
        trials,
        checks: vec![
            divergence_check("non_reward_fields_identical", &divergences),
            CheckResult::within(format!("reward_qualia_difference == {expected}"), worst_qualia, 1e-9),
            CheckResult::within("performance_difference == 0", worst_perf, 0.0),
        ],
    })
}

/// Seed-coupled pairs of vanilla BAC and BAC with a TD bonus `c` undone in both
/// critic and actor: every field except the stored TD error must match, and the
/// stored TD error must exceed the vanilla one by exactly `c`.
pub fn td_bonus_inversion_demo(
    env: &EnvironmentModel,
    config: &BacConfig,
    c: f64,
    episodes: usize,
    trials: usize,
    seed: u64,
) -> Result<CoupledReport> {
    let bonus_config = config.with_inverted_bonus(c);
    let opts = RunOptions::default();
    let mut divergences = Vec::new();
    let mut worst: f64 = 0.0;
    for trial in 0..trials {
        let trial_seed = TrialSeed::derive(seed, 1, trial as u32);
        let mut plain = BacAgent::new(config.clone(), env.state_count(), env.action_count())?;
        let reference = run_aerp(env, &mut plain, episodes, trial_seed, &opts)?;
        let mut bonused = BacAgent::new(bonus_config.clone(), env.state_count(), env.action_count())?;
        let shifted = run_aerp(env, &mut bonused, episodes, trial_seed, &opts)?;
        if let Some((t, field)) = first_divergence(&reference, &shifted, &[TraceField::TdError]) {
            divergences.push((trial, t, field));
        }
        for (a, b) in reference.steps.iter().zip(&shifted.steps) {
            if let (Some(x), Some(y)) = (a.td_error, b.td_error) {
                worst = worst.max((y - x - c).abs());
            }
        }
    }
    Ok(CoupledReport {
        trials,
        checks: vec![
            divergence_check("non_td_fields_identical", &divergences),
            CheckResult::within(format!("td_error_shift == {c}"), worst, 1e-12),
        ],
    })
}
