//! Monte Carlo estimators over sets of traces.
//!
//! Per-trial values are computed from one trace at a time and folded in trial order,
//! so every estimate is independent of how trials were scheduled.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::agents::softmax_prob;
use crate::error::{Error, Result};
use crate::process::{discount, episode_return, Observation, RewardChannel, StepRecord, Trace};
use crate::robustness::entropy_from_counts;

/// Trials below which plug-in entropy estimates carry a warning.
pub const ENTROPY_MIN_TRIALS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectiveKind {
    Performance,
    RewardQualia,
    TdeExplicit,
    TdeImplicit,
    ReinfSum,
    ReinfPerStep,
    ReinfRecentSum,
    ReinfRecentPerStep,
    EntropyPerception,
}

impl ObjectiveKind {
    pub fn name(self) -> &'static str {
        match self {
            ObjectiveKind::Performance => "performance",
            ObjectiveKind::RewardQualia => "reward_qualia",
            ObjectiveKind::TdeExplicit => "tde_explicit",
            ObjectiveKind::TdeImplicit => "tde_implicit",
            ObjectiveKind::ReinfSum => "reinf_sum",
            ObjectiveKind::ReinfPerStep => "reinf_per_step",
            ObjectiveKind::ReinfRecentSum => "reinf_recent_sum",
            ObjectiveKind::ReinfRecentPerStep => "reinf_recent_per_step",
            ObjectiveKind::EntropyPerception => "entropy_perception",
        }
    }

    /// Whether the objective needs full memory snapshots in the trace.
    pub fn needs_snapshots(self) -> bool {
        matches!(self, ObjectiveKind::ReinfRecentSum | ObjectiveKind::ReinfRecentPerStep)
    }

    /// Whether the objective is a cross-trial quantity rather than a mean of per-trial values.
    pub fn is_cross_trial(self) -> bool {
        self == ObjectiveKind::EntropyPerception
    }
}

impl fmt::Display for ObjectiveKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectiveSpec {
    pub kind: ObjectiveKind,
    #[serde(default = "one")]
    pub gamma_q: f64,
    /// `Λ` of the recent-behavior variants.
    #[serde(default)]
    pub capital_lambda: f64,
}

fn one() -> f64 {
    1.0
}

impl ObjectiveSpec {
    pub fn new(kind: ObjectiveKind) -> Self {
        Self { kind, gamma_q: 1.0, capital_lambda: 0.0 }
    }

    pub fn with_gamma(kind: ObjectiveKind, gamma_q: f64) -> Self {
        Self { kind, gamma_q, capital_lambda: 0.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.gamma_q) || !(0.0..=1.0).contains(&self.capital_lambda) {
            return Err(Error::Config(format!(
                "objective {}: gamma_q and capital_lambda must lie in [0, 1]",
                self.kind
            )));
        }
        Ok(())
    }
}

/// Mean of per-trial values with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Estimate {
    pub estimate: f64,
    pub std_err: f64,
    pub n: usize,
}

/// Streaming mean and variance (Welford), folded in a fixed order.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Moments {
    n: usize,
    mean: f64,
    m2: f64,
}

impl Moments {
    pub fn push(&mut self, x: f64) {
        if x.is_nan() {
            return;
        }
        self.n += 1;
        let delta = x - self.mean;
        self.mean += delta / self.n as f64;
        self.m2 += delta * (x - self.mean);
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn mean(&self) -> f64 {
        if self.n == 0 {
            f64::NAN
        } else {
            self.mean
        }
    }

    /// Sample standard deviation (`n - 1` denominator).
    pub fn std_dev(&self) -> f64 {
        if self.n < 2 {
            f64::NAN
        } else {
            (self.m2 / (self.n - 1) as f64).max(0.0).sqrt()
        }
    }

    pub fn std_err(&self) -> f64 {
        self.std_dev() / (self.n as f64).sqrt()
    }

    pub fn estimate(&self) -> Estimate {
        Estimate { estimate: self.mean(), std_err: self.std_err(), n: self.n }
    }
}

impl FromIterator<f64> for Moments {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut m = Moments::default();
        iter.into_iter().for_each(|x| m.push(x));
        m
    }
}

fn require_episodes(trace: &Trace, i_max: usize) -> Result<()> {
    if i_max == 0 {
        return Err(Error::Config("i_max must be at least 1".into()));
    }
    if trace.episode_count() < i_max {
        return Err(Error::Trace(format!("trace has {} episodes, {i_max} required", trace.episode_count())));
    }
    Ok(())
}

/// `Σ_{i < i_max} G_i` with `γ = 1` on base rewards.
pub fn trial_performance(trace: &Trace, i_max: usize) -> Result<f64> {
    require_episodes(trace, i_max)?;
    (0..i_max).map(|i| episode_return(trace, i, 1.0, RewardChannel::Base)).sum()
}

/// `Σ_{i < i_max} G_i` with discount `γ_p` on base rewards.
pub fn trial_discounted_performance(trace: &Trace, gamma_p: f64, i_max: usize) -> Result<f64> {
    require_episodes(trace, i_max)?;
    (0..i_max).map(|i| episode_return(trace, i, gamma_p, RewardChannel::Base)).sum()
}

/// `Σ_{i < i_max} Σ_{t=start+1}^{end} γ_q^{dur(t)} R_t` on agent rewards.
pub fn trial_reward_qualia(trace: &Trace, gamma_q: f64, i_max: usize) -> Result<f64> {
    require_episodes(trace, i_max)?;
    (0..i_max).map(|i| episode_return(trace, i, gamma_q, RewardChannel::Agent)).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TdeMode {
    /// The TD error as stored by the agent, bonus included.
    Explicit,
    /// `R + γ v(P) - v(P_prev)` before any intervention.
    Implicit,
}

/// `Σ_i Σ_{t=start+1}^{end-1} γ_q^{dur(t)} δ_t`.
pub fn trial_tde_qualia(trace: &Trace, gamma_q: f64, mode: TdeMode, i_max: usize) -> Result<f64> {
    require_episodes(trace, i_max)?;
    let mut total = 0.0;
    for ep in &trace.episodes[..i_max] {
        for (d, step) in trace.steps[ep.start + 1..ep.end].iter().enumerate() {
            let delta = match mode {
                TdeMode::Explicit => step.td_error,
                TdeMode::Implicit => step.td_raw,
            }
            .ok_or_else(|| Error::Trace(format!("no TD error recorded at t={}", step.t)))?;
            total += discount(gamma_q, d) * delta;
        }
    }
    Ok(total)
}

fn recorded_ratio(step: &StepRecord) -> Result<f64> {
    step.likelihood_ratio
        .ok_or_else(|| Error::Trace(format!("no likelihood ratio recorded at t={}", step.t)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Normalisation {
    /// `ξ(i) = 1`.
    Sum,
    /// `ξ(i) = 1 / len(i)`.
    PerStep,
}

/// `Σ_i ξ(i) Σ_{t=start}^{end-1} L_t`. `L_t` is recorded by the update at `t + 1`.
pub fn trial_reinforcement(trace: &Trace, norm: Normalisation, i_max: usize) -> Result<f64> {
    require_episodes(trace, i_max)?;
    let mut total = 0.0;
    for ep in &trace.episodes[..i_max] {
        let mut sum = 0.0;
        for step in &trace.steps[ep.start + 1..=ep.end] {
            sum += recorded_ratio(step)?;
        }
        total += match norm {
            Normalisation::Sum => sum,
            Normalisation::PerStep => sum / ep.len() as f64,
        };
    }
    Ok(total)
}

/// `Σ_i ξ(i) Σ_{t=start}^{end-1} Σ_{k=start}^{t} Λ^{t-k} π(S_k, A_k, Θ_{t+1}) / π(S_k, A_k, Θ_t)`.
pub fn trial_recent_reinforcement(trace: &Trace, norm: Normalisation, capital_lambda: f64, i_max: usize) -> Result<f64> {
    require_episodes(trace, i_max)?;
    if !trace.has_snapshots() {
        return Err(Error::Trace(
            "recent-behavior objectives need full memory snapshots; rerun with memory recording set to full".into(),
        ));
    }
    let mut total = 0.0;
    for ep in &trace.episodes[..i_max] {
        let mut sum = 0.0;
        for t in ep.start..ep.end {
            let before = trace.steps[t].snapshot.as_deref().expect("checked above");
            let after = trace.steps[t + 1].snapshot.as_deref().expect("checked above");
            for k in ep.start..=t {
                let step = &trace.steps[k];
                let (Some(s), Some(a)) = (step.perception.index(), step.action.index()) else {
                    return Err(Error::Trace(format!("terminal perception inside episode at t={k}")));
                };
                let n = before.action_count;
                let ratio = softmax_prob(&after.theta, n, s, a) / softmax_prob(&before.theta, n, s, a);
                sum += discount(capital_lambda, t - k) * ratio;
            }
        }
        total += match norm {
            Normalisation::Sum => sum,
            Normalisation::PerStep => sum / ep.len() as f64,
        };
    }
    Ok(total)
}

/// Value of a per-trial objective on one trace.
pub fn trial_objective(trace: &Trace, spec: &ObjectiveSpec, i_max: usize) -> Result<f64> {
    match spec.kind {
        ObjectiveKind::Performance => trial_performance(trace, i_max),
        ObjectiveKind::RewardQualia => trial_reward_qualia(trace, spec.gamma_q, i_max),
        ObjectiveKind::TdeExplicit => trial_tde_qualia(trace, spec.gamma_q, TdeMode::Explicit, i_max),
        ObjectiveKind::TdeImplicit => trial_tde_qualia(trace, spec.gamma_q, TdeMode::Implicit, i_max),
        ObjectiveKind::ReinfSum => trial_reinforcement(trace, Normalisation::Sum, i_max),
        ObjectiveKind::ReinfPerStep => trial_reinforcement(trace, Normalisation::PerStep, i_max),
        ObjectiveKind::ReinfRecentSum => {
            trial_recent_reinforcement(trace, Normalisation::Sum, spec.capital_lambda, i_max)
        }
        ObjectiveKind::ReinfRecentPerStep => {
            trial_recent_reinforcement(trace, Normalisation::PerStep, spec.capital_lambda, i_max)
        }
        ObjectiveKind::EntropyPerception => {
            Err(Error::Config("entropy_perception is a cross-trial estimate; use entropy_qualia".into()))
        }
    }
}

/// Mean and standard error of a per-trial objective over a trace set.
pub fn objective_estimate(traces: &[Trace], spec: &ObjectiveSpec, i_max: usize) -> Result<Estimate> {
    let mut m = Moments::default();
    for trace in traces {
        m.push(trial_objective(trace, spec, i_max)?);
    }
    Ok(m.estimate())
}

pub fn performance_objective(traces: &[Trace], i_max: usize) -> Result<Estimate> {
    objective_estimate(traces, &ObjectiveSpec::new(ObjectiveKind::Performance), i_max)
}

pub fn reward_qualia(traces: &[Trace], gamma_q: f64, i_max: usize) -> Result<Estimate> {
    objective_estimate(traces, &ObjectiveSpec::with_gamma(ObjectiveKind::RewardQualia, gamma_q), i_max)
}

pub fn tde_qualia(traces: &[Trace], gamma_q: f64, mode: TdeMode, i_max: usize) -> Result<Estimate> {
    let kind = match mode {
        TdeMode::Explicit => ObjectiveKind::TdeExplicit,
        TdeMode::Implicit => ObjectiveKind::TdeImplicit,
    };
    objective_estimate(traces, &ObjectiveSpec::with_gamma(kind, gamma_q), i_max)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EntropyEstimate {
    /// Bits.
    pub estimate: f64,
    pub trials: usize,
    pub warning: Option<String>,
}

/// `Σ_{(i, d)} γ_q^d Ĥ(P at slot (i, d))`, slots aligned by episode and `dur`.
///
/// A perception is the pair (observation, reward). Trials whose episode `i` is shorter
/// than `d + 1` rewards contribute an explicit "episode over" outcome to the slot.
pub fn entropy_qualia(traces: &[Trace], gamma_q: f64, i_max: usize) -> Result<EntropyEstimate> {
    let mut acc = EntropyAccumulator::new(gamma_q, i_max);
    for trace in traces {
        acc.push(trace)?;
    }
    acc.finish()
}

/// Streaming form of [`entropy_qualia`]: keeps perception counts per slot.
#[derive(Debug, Clone)]
pub struct EntropyAccumulator {
    gamma_q: f64,
    i_max: usize,
    slots: Vec<Vec<BTreeMap<(Observation, u64), usize>>>,
    trials: usize,
}

impl EntropyAccumulator {
    pub fn new(gamma_q: f64, i_max: usize) -> Self {
        Self { gamma_q, i_max, slots: vec![Vec::new(); i_max], trials: 0 }
    }

    pub fn push(&mut self, trace: &Trace) -> Result<()> {
        require_episodes(trace, self.i_max)?;
        for (slots, ep) in self.slots.iter_mut().zip(&trace.episodes) {
            if slots.len() < ep.len() {
                slots.resize_with(ep.len(), BTreeMap::new);
            }
            for (d, step) in trace.steps[ep.start + 1..=ep.end].iter().enumerate() {
                *slots[d].entry((step.perception, step.reward.to_bits())).or_default() += 1;
            }
        }
        self.trials += 1;
        Ok(())
    }

    pub fn finish(&self) -> Result<EntropyEstimate> {
        if self.trials == 0 {
            return Err(Error::Config("entropy estimate needs at least one trace".into()));
        }
        let mut total = 0.0;
        for slots in &self.slots {
            for (d, counts) in slots.iter().enumerate() {
                let present: usize = counts.values().sum();
                let finished = self.trials - present;
                let all = counts.values().copied().chain((finished > 0).then_some(finished));
                total += discount(self.gamma_q, d) * entropy_from_counts(all);
            }
        }
        let warning = (self.trials < ENTROPY_MIN_TRIALS).then(|| {
            format!("plug-in entropy from {} trials is biased low; use at least {ENTROPY_MIN_TRIALS}", self.trials)
        });
        Ok(EntropyEstimate { estimate: total, trials: self.trials, warning })
    }
}

/// One interval of a histogram band specification, e.g. `(-inf,-5]` or `[1,5)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Bin {
    pub lower: f64,
    pub lower_closed: bool,
    pub upper: f64,
    pub upper_closed: bool,
    pub label: String,
}

impl Bin {
    pub fn contains(&self, x: f64) -> bool {
        let above = if self.lower_closed { x >= self.lower } else { x > self.lower };
        let below = if self.upper_closed { x <= self.upper } else { x < self.upper };
        above && below
    }
}

fn parse_edge(text: &str) -> Result<f64> {
    match text.trim() {
        "-inf" | "-∞" => Ok(f64::NEG_INFINITY),
        "inf" | "+inf" | "∞" => Ok(f64::INFINITY),
        t => t.parse().map_err(|e| Error::Config(format!("bad bin edge '{t}': {e}"))),
    }
}

impl FromStr for Bin {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let bad = || Error::Config(format!("bin '{s}' is not of the form (a,b], [a,b), ..."));
        let lower_closed = match s.chars().next() {
            Some('[') => true,
            Some('(') => false,
            _ => return Err(bad()),
        };
        let upper_closed = match s.chars().last() {
            Some(']') => true,
            Some(')') => false,
            _ => return Err(bad()),
        };
        let inner = &s[1..s.len() - 1];
        let (lo, hi) = inner.split_once(',').ok_or_else(bad)?;
        let (lower, upper) = (parse_edge(lo)?, parse_edge(hi)?);
        if !(lower < upper) || (lower_closed && lower.is_infinite()) || (upper_closed && upper.is_infinite()) {
            return Err(Error::Config(format!("bin '{s}' is empty or closed at infinity")));
        }
        Ok(Bin { lower, lower_closed, upper, upper_closed, label: s.replace(' ', "") })
    }
}

/// Contiguous, non-overlapping intervals in increasing order.
#[derive(Debug, Clone, PartialEq)]
pub struct Bins(Vec<Bin>);

impl Bins {
    pub fn new(bins: Vec<Bin>) -> Result<Self> {
        if bins.is_empty() {
            return Err(Error::Config("at least one bin is required".into()));
        }
        for pair in bins.windows(2) {
            if pair[0].upper != pair[1].lower || pair[0].upper_closed == pair[1].lower_closed {
                return Err(Error::Config(format!(
                    "bins {} and {} are not contiguous and disjoint",
                    pair[0].label, pair[1].label
                )));
            }
        }
        Ok(Self(bins))
    }

    pub fn parse<S: AsRef<str>>(labels: &[S]) -> Result<Self> {
        Self::new(labels.iter().map(|l| l.as_ref().parse()).collect::<Result<_>>()?)
    }

    pub fn bins(&self) -> &[Bin] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn labels(&self) -> Vec<String> {
        self.0.iter().map(|b| b.label.clone()).collect()
    }

    pub fn find(&self, x: f64) -> Option<usize> {
        self.0.iter().position(|b| b.contains(x))
    }

    /// Whether a bin with exactly these edges (to 1e-12) and closure is present.
    pub fn has_band(&self, lower: f64, upper: f64) -> bool {
        self.0
            .iter()
            .any(|b| (b.lower - lower).abs() < 1e-12 && (b.upper - upper).abs() < 1e-12 && !b.lower_closed && b.upper_closed)
    }
}

pub const NEAR_ZERO: f64 = 1e-6;

pub const DEFAULT_DELTA_BINS: [&str; 7] =
    ["(-inf,-5]", "(-5,-1]", "(-1,-1e-6]", "(-1e-6,1e-6]", "(1e-6,1)", "[1,5)", "[5,inf)"];

pub const DEFAULT_L_BINS: [&str; 7] =
    ["(0,0.5]", "(0.5,0.9]", "(0.9,0.999999]", "(0.999999,1.000001]", "(1.000001,1.1)", "[1.1,2)", "[2,inf)"];

pub fn default_delta_bins() -> Bins {
    Bins::parse(&DEFAULT_DELTA_BINS).expect("default bins are valid")
}

pub fn default_l_bins() -> Bins {
    Bins::parse(&DEFAULT_L_BINS).expect("default bins are valid")
}

/// Histogram bands for the reported TD error and the likelihood ratio.
#[derive(Debug, Clone, PartialEq)]
pub struct BandSpec {
    pub delta: Bins,
    pub likelihood: Bins,
}

impl Default for BandSpec {
    fn default() -> Self {
        Self { delta: default_delta_bins(), likelihood: default_l_bins() }
    }
}

impl BandSpec {
    /// Both specs must contain the fixed near-zero / near-one bands.
    pub fn new(delta: Bins, likelihood: Bins) -> Result<Self> {
        if !delta.has_band(-NEAR_ZERO, NEAR_ZERO) {
            return Err(Error::Config("delta bins must include the band (-1e-6,1e-6]".into()));
        }
        if !likelihood.has_band(1.0 - NEAR_ZERO, 1.0 + NEAR_ZERO) {
            return Err(Error::Config("likelihood bins must include the band (0.999999,1.000001]".into()));
        }
        Ok(Self { delta, likelihood })
    }
}

/// Statistics of one episode of one trial.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeSummary {
    /// Undiscounted return on base rewards.
    pub ret: f64,
    /// Mean of the TD error entering the actor (baseline included) over standard updates.
    pub mean_delta: f64,
    pub mean_l: f64,
    /// Fraction of those updates with a negative TD error.
    pub neg_delta_frac: f64,
    pub negatives: u32,
    pub delta_counts: Vec<u32>,
    pub l_counts: Vec<u32>,
}

/// Summaries of the first `i_max` episodes of a trace.
///
/// Averages run over the standard updates at `start+1 ..= end`; with
/// `include_terminal = false` the update at `end` is left out.
pub fn summarize_episodes(trace: &Trace, i_max: usize, bands: &BandSpec, include_terminal: bool) -> Result<Vec<EpisodeSummary>> {
    require_episodes(trace, i_max)?;
    let mut out = Vec::with_capacity(i_max);
    for (i, ep) in trace.episodes[..i_max].iter().enumerate() {
        let last = if include_terminal { ep.end } else { ep.end - 1 };
        let mut delta_counts = vec![0u32; bands.delta.len()];
        let mut l_counts = vec![0u32; bands.likelihood.len()];
        let (mut sum_delta, mut sum_l, mut negatives, mut n) = (0.0, 0.0, 0usize, 0usize);
        for step in &trace.steps[ep.start + 1..=last] {
            let delta = step
                .actor_delta
                .ok_or_else(|| Error::Trace(format!("no TD error recorded at t={}", step.t)))?;
            let l = recorded_ratio(step)?;
            let db = bands.delta.find(delta).ok_or_else(|| Error::Trace(format!("TD error {delta} outside every bin")))?;
            let lb = bands.likelihood.find(l).ok_or_else(|| Error::Trace(format!("likelihood ratio {l} outside every bin")))?;
            delta_counts[db] += 1;
            l_counts[lb] += 1;
            sum_delta += delta;
            sum_l += l;
            negatives += usize::from(delta < 0.0);
            n += 1;
        }
        let per = |x: f64| if n == 0 { f64::NAN } else { x / n as f64 };
        out.push(EpisodeSummary {
            ret: episode_return(trace, i, 1.0, RewardChannel::Base)?,
            mean_delta: per(sum_delta),
            mean_l: per(sum_l),
            neg_delta_frac: per(negatives as f64),
            negatives: negatives as u32,
            delta_counts,
            l_counts,
        });
    }
    Ok(out)
}

/// Everything the aggregator needs from one trial.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialSummary {
    pub episodes: Vec<EpisodeSummary>,
    pub objectives: Vec<f64>,
    /// Mean return over each configured episode window.
    pub windows: Vec<f64>,
}

pub fn summarize_trial(
    trace: &Trace,
    i_max: usize,
    bands: &BandSpec,
    objectives: &[ObjectiveSpec],
    include_terminal: bool,
    windows: &[[usize; 2]],
) -> Result<TrialSummary> {
    let episodes = summarize_episodes(trace, i_max, bands, include_terminal)?;
    let windows = windows
        .iter()
        .map(|&[from, to]| {
            let eps = episodes.get(from..to).filter(|e| !e.is_empty()).ok_or_else(|| {
                Error::Config(format!("return window [{from}, {to}) outside the first {i_max} episodes"))
            })?;
            Ok(eps.iter().map(|e| e.ret).sum::<f64>() / eps.len() as f64)
        })
        .collect::<Result<_>>()?;
    let objectives = objectives
        .iter()
        .filter(|s| !s.kind.is_cross_trial())
        .map(|s| trial_objective(trace, s, i_max))
        .collect::<Result<_>>()?;
    Ok(TrialSummary { episodes, objectives, windows })
}

#[derive(Debug, Clone, Default)]
struct EpisodeAccumulator {
    ret: Moments,
    delta: Moments,
    l: Moments,
    neg: Moments,
    delta_counts: Vec<u64>,
    l_counts: Vec<u64>,
    negatives: u64,
}

/// Cross-trial statistics of one episode index.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpisodeAggregate {
    pub episode: usize,
    pub n: usize,
    pub mean_return: f64,
    pub std_return: f64,
    pub stderr_return: f64,
    pub mean_delta: f64,
    pub stderr_delta: f64,
    pub mean_l: f64,
    pub stderr_l: f64,
    /// Mean over trials of the per-trial fraction of negative TD errors.
    pub mean_neg_delta: f64,
    pub stderr_neg_delta: f64,
    /// Negative TD errors over all updates pooled across trials.
    pub pooled_neg_delta: f64,
    pub delta_proportions: Vec<f64>,
    pub l_proportions: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ObjectiveEstimate {
    pub kind: ObjectiveKind,
    pub gamma_q: f64,
    pub capital_lambda: f64,
    pub estimate: f64,
    pub std_err: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WindowEstimate {
    pub from: usize,
    pub to: usize,
    pub estimate: f64,
    pub std_err: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggregateResult {
    pub trials: usize,
    pub delta_labels: Vec<String>,
    pub l_labels: Vec<String>,
    pub per_episode: Vec<EpisodeAggregate>,
    pub objectives: Vec<ObjectiveEstimate>,
    pub windows: Vec<WindowEstimate>,
}

impl AggregateResult {
    /// Mean over trials of the average return of episodes `from..to`.
    pub fn window_return(&self, from: usize, to: usize) -> f64 {
        let eps = &self.per_episode[from..to];
        eps.iter().map(|e| e.mean_return).sum::<f64>() / eps.len() as f64
    }
}

/// Folds trial summaries in the order they are pushed.
#[derive(Debug, Clone)]
pub struct StatsAccumulator {
    i_max: usize,
    delta_labels: Vec<String>,
    l_labels: Vec<String>,
    objectives: Vec<ObjectiveSpec>,
    episodes: Vec<EpisodeAccumulator>,
    objective_moments: Vec<Moments>,
    windows: Vec<[usize; 2]>,
    window_moments: Vec<Moments>,
    trials: usize,
}

impl StatsAccumulator {
    pub fn new(i_max: usize, bands: &BandSpec, objectives: &[ObjectiveSpec], windows: &[[usize; 2]]) -> Self {
        let per_trial: Vec<ObjectiveSpec> = objectives.iter().filter(|s| !s.kind.is_cross_trial()).copied().collect();
        let episode = EpisodeAccumulator {
            delta_counts: vec![0; bands.delta.len()],
            l_counts: vec![0; bands.likelihood.len()],
            ..EpisodeAccumulator::default()
        };
        Self {
            i_max,
            delta_labels: bands.delta.labels(),
            l_labels: bands.likelihood.labels(),
            objective_moments: vec![Moments::default(); per_trial.len()],
            objectives: per_trial,
            episodes: vec![episode; i_max],
            windows: windows.to_vec(),
            window_moments: vec![Moments::default(); windows.len()],
            trials: 0,
        }
    }

    pub fn push(&mut self, summary: &TrialSummary) -> Result<()> {
        if summary.episodes.len() != self.i_max
            || summary.objectives.len() != self.objectives.len()
            || summary.windows.len() != self.windows.len()
        {
            return Err(Error::Trace("trial summary shape does not match the accumulator".into()));
        }
        for (acc, ep) in self.episodes.iter_mut().zip(&summary.episodes) {
            acc.ret.push(ep.ret);
            acc.delta.push(ep.mean_delta);
            acc.l.push(ep.mean_l);
            acc.neg.push(ep.neg_delta_frac);
            for (c, &k) in acc.delta_counts.iter_mut().zip(&ep.delta_counts) {
                *c += u64::from(k);
            }
            for (c, &k) in acc.l_counts.iter_mut().zip(&ep.l_counts) {
                *c += u64::from(k);
            }
            acc.negatives += u64::from(ep.negatives);
        }
        for (m, &v) in self.objective_moments.iter_mut().zip(&summary.objectives) {
            m.push(v);
        }
        for (m, &v) in self.window_moments.iter_mut().zip(&summary.windows) {
            m.push(v);
        }
        self.trials += 1;
        Ok(())
    }

    pub fn trials(&self) -> usize {
        self.trials
    }

    pub fn finish(self) -> Result<AggregateResult> {
        if self.trials < 2 {
            return Err(Error::Config(format!("{} trial(s): standard errors need at least 2", self.trials)));
        }
        let proportions = |counts: &[u64]| {
            let total: u64 = counts.iter().sum();
            counts.iter().map(|&c| c as f64 / total as f64).collect::<Vec<_>>()
        };
        let per_episode = self
            .episodes
            .iter()
            .enumerate()
            .map(|(episode, acc)| {
                let total: u64 = acc.delta_counts.iter().sum();
                EpisodeAggregate {
                    episode,
                    n: acc.ret.n(),
                    mean_return: acc.ret.mean(),
                    std_return: acc.ret.std_dev(),
                    stderr_return: acc.ret.std_err(),
                    mean_delta: acc.delta.mean(),
                    stderr_delta: acc.delta.std_err(),
                    mean_l: acc.l.mean(),
                    stderr_l: acc.l.std_err(),
                    mean_neg_delta: acc.neg.mean(),
                    stderr_neg_delta: acc.neg.std_err(),
                    pooled_neg_delta: acc.negatives as f64 / total as f64,
                    delta_proportions: proportions(&acc.delta_counts),
                    l_proportions: proportions(&acc.l_counts),
                }
            })
            .collect();
        let objectives = self
            .objectives
            .iter()
            .zip(&self.objective_moments)
            .map(|(spec, m)| ObjectiveEstimate {
                kind: spec.kind,
                gamma_q: spec.gamma_q,
                capital_lambda: spec.capital_lambda,
                estimate: m.mean(),
                std_err: m.std_err(),
            })
            .collect();
        let windows = self
            .windows
            .iter()
            .zip(&self.window_moments)
            .map(|(&[from, to], m)| WindowEstimate { from, to, estimate: m.mean(), std_err: m.std_err() })
            .collect();
        Ok(AggregateResult {
            trials: self.trials,
            delta_labels: self.delta_labels,
            l_labels: self.l_labels,
            per_episode,
            objectives,
            windows,
        })
    }
}

/// Per-episode statistics of a trace set (terminal updates included in the averages).
pub fn episode_statistics(traces: &[Trace], i_max: usize, bands: &BandSpec) -> Result<AggregateResult> {
    let mut acc = StatsAccumulator::new(i_max, bands, &[], &[]);
    for trace in traces {
        acc.push(&summarize_trial(trace, i_max, bands, &[], true, &[])?)?;
    }
    acc.finish()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn moments_match_two_pass() {
        let xs = [1.0, 4.0, -2.5, 7.25, 0.0];
        let m: Moments = xs.iter().copied().collect();
        let mean = xs.iter().sum::<f64>() / 5.0;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 4.0;
        assert!((m.mean() - mean).abs() < 1e-14);
        assert!((m.std_dev() - var.sqrt()).abs() < 1e-14);
        assert!((m.std_err() - var.sqrt() / 5f64.sqrt()).abs() < 1e-14);
        assert!(Moments::default().mean().is_nan());
    }

    #[test]
    fn bin_parsing_and_membership() {
        let b: Bin = "(-1e-6, 1e-6]".parse().unwrap();
        assert!(b.contains(1e-6) && !b.contains(-1e-6) && b.contains(0.0));
        let r: Bin = "[1,5)".parse().unwrap();
        assert!(r.contains(1.0) && !r.contains(5.0));
        assert!("[-inf,0)".parse::<Bin>().is_err());
        assert!("(2,1]".parse::<Bin>().is_err());
        assert!("2,1".parse::<Bin>().is_err());
    }

    #[test]
    fn default_bins_partition_the_line() {
        let d = default_delta_bins();
        for x in [-100.0, -5.0, -1.0, -1e-6, 0.0, 1e-6, 0.5, 1.0, 5.0, 1e9] {
            assert!(d.find(x).is_some(), "{x}");
        }
        assert_eq!(d.find(-5.0), Some(0));
        assert_eq!(d.find(1.0), Some(5));
        let l = default_l_bins();
        assert_eq!(l.find(1.0), Some(3));
        assert!(BandSpec::new(d, l).is_ok());
    }

    #[test]
    fn band_spec_requires_fixed_bands() {
        let coarse = Bins::parse(&["(-inf,0]", "(0,inf)"]).unwrap();
        assert!(BandSpec::new(coarse, default_l_bins()).is_err());
        assert!(Bins::parse(&["(-inf,0]", "[0,inf)"]).is_err());
        assert!(Bins::parse(&["(-inf,0)", "(0,inf)"]).is_err());
    }

    #[test]
    fn objective_spec_serde() {
        let s: ObjectiveSpec = toml::from_str("kind = \"reinf_recent_sum\"\ncapital_lambda = 0.5").unwrap();
        assert_eq!(s.kind, ObjectiveKind::ReinfRecentSum);
        assert_eq!(s.gamma_q, 1.0);
        assert!(ObjectiveSpec::with_gamma(ObjectiveKind::RewardQualia, 1.5).validate().is_err());
    }
}
