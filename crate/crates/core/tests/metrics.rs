use approx::assert_abs_diff_eq;

use qualia_core::agents::BacConfig;
use qualia_core::environments::chain;
use qualia_core::harness::experiment::{for_each_trial, TrialSetup};
use qualia_core::metrics::{
    default_delta_bins, default_l_bins, entropy_qualia, episode_statistics, performance_objective, reward_qualia,
    summarize_episodes, tde_qualia, trial_performance, trial_reinforcement, trial_reward_qualia, trial_tde_qualia,
    BandSpec, Bins, Moments, Normalisation, TdeMode, ENTROPY_MIN_TRIALS,
};
use qualia_core::process::{Action, Observation, StepRecord, Trace};
use qualia_core::seeding::TrialSeed;

struct Row {
    state: Option<usize>,
    reward: f64,
    delta: Option<f64>,
    raw: Option<f64>,
    l: Option<f64>,
}

fn row(state: Option<usize>, reward: f64, delta: Option<f64>, l: Option<f64>) -> Row {
    Row { state, reward, delta, raw: delta, l }
}

fn trace(rows: Vec<Row>) -> Trace {
    let steps = rows
        .into_iter()
        .enumerate()
        .map(|(t, r)| {
            let obs = r.state.map_or(Observation::Terminal, Observation::State);
            StepRecord {
                t,
                state: obs,
                perception: obs,
                reward: r.reward,
                memory_summary: 0,
                action: if obs.is_terminal() { Action::Terminal } else { Action::Index(0) },
                td_error: r.delta,
                td_raw: r.raw,
                actor_delta: r.delta,
                likelihood_ratio: r.l,
                interface: None,
                snapshot: None,
            }
        })
        .collect();
    Trace::from_steps(steps, TrialSeed::from(0)).unwrap()
}

/// Two episodes: `[s0 s1 ∞]` then `[s0 ∞]`, with a start reward that must be ignored.
fn sample() -> Trace {
    trace(vec![
        row(Some(0), 0.0, None, None),
        row(Some(1), -1.0, Some(-0.5), Some(0.8)),
        row(None, 5.0, Some(4.0), Some(1.5)),
        row(Some(0), 7.0, None, None),
        row(None, 2.0, Some(2.5), Some(1.2)),
    ])
}

#[test]
fn performance_and_reward_qualia() {
    let t = sample();
    assert_eq!(trial_performance(&t, 2).unwrap(), 4.0 + 2.0);
    assert_eq!(trial_reward_qualia(&t, 1.0, 2).unwrap(), 6.0);
    assert_eq!(trial_reward_qualia(&t, 0.5, 2).unwrap(), (-1.0 + 0.5 * 5.0) + 2.0);
    assert_eq!(trial_performance(&t, 1).unwrap(), 4.0);
    assert!(trial_performance(&t, 3).is_err());
}

#[test]
fn tde_sums_skip_the_terminal_update() {
    let t = sample();
    assert_eq!(trial_tde_qualia(&t, 1.0, TdeMode::Explicit, 2).unwrap(), -0.5);
    let mut shifted = sample();
    shifted.steps[1].td_raw = Some(-1.5);
    assert_eq!(trial_tde_qualia(&shifted, 1.0, TdeMode::Implicit, 2).unwrap(), -1.5);
    assert_eq!(trial_tde_qualia(&shifted, 1.0, TdeMode::Explicit, 2).unwrap(), -0.5);
}

#[test]
fn reinforcement_objectives() {
    let t = sample();
    assert_abs_diff_eq!(trial_reinforcement(&t, Normalisation::Sum, 2).unwrap(), 0.8 + 1.5 + 1.2, epsilon = 1e-15);
    assert_abs_diff_eq!(trial_reinforcement(&t, Normalisation::PerStep, 2).unwrap(), (0.8 + 1.5) / 2.0 + 1.2, epsilon = 1e-15);
}

#[test]
fn set_estimates_use_sample_standard_error() {
    let a = sample();
    let mut b = sample();
    b.steps[4].reward = 4.0;
    let est = performance_objective(&[a.clone(), b.clone()], 2).unwrap();
    assert_eq!(est.estimate, 7.0);
    assert_abs_diff_eq!(est.std_err, (2f64).sqrt() / (2f64).sqrt(), epsilon = 1e-15);
    assert_eq!(est.n, 2);
    assert_eq!(reward_qualia(&[a.clone(), b], 1.0, 2).unwrap().estimate, 7.0);
    assert_eq!(tde_qualia(&[a], 1.0, TdeMode::Explicit, 2).unwrap().estimate, -0.5);
}

#[test]
fn entropy_of_identical_and_split_traces() {
    let same = vec![sample(), sample()];
    let est = entropy_qualia(&same, 1.0, 2).unwrap();
    assert_eq!(est.estimate, 0.0);
    assert!(est.warning.is_some());

    // second trial ends episode 0 one step early: slot (0,0) differs in reward, slot
    // (0,1) is "finished" for one trial; episode 1 matches
    let short = trace(vec![
        row(Some(0), 0.0, None, None),
        row(None, 1.0, Some(1.0), Some(1.0)),
        row(Some(0), 0.0, None, None),
        row(None, 2.0, Some(2.5), Some(1.2)),
    ]);
    let est = entropy_qualia(&[sample(), short.clone()], 0.5, 2).unwrap();
    assert_abs_diff_eq!(est.estimate, 1.0 + 0.5 * 1.0, epsilon = 1e-15);

    let many: Vec<Trace> = (0..ENTROPY_MIN_TRIALS).map(|_| short.clone()).collect();
    assert!(entropy_qualia(&many, 1.0, 2).unwrap().warning.is_none());
}

#[test]
fn bins_partition_with_half_open_edges() {
    let delta = default_delta_bins();
    let label = |x: f64| delta.labels()[delta.find(x).unwrap()].clone();
    assert_eq!(label(-5.0), "(-inf,-5]");
    assert_eq!(label(-1.0), "(-5,-1]");
    assert_eq!(label(-1e-6), "(-1,-1e-6]");
    assert_eq!(label(1e-6), "(-1e-6,1e-6]");
    assert_eq!(label(0.5), "(1e-6,1)");
    assert_eq!(label(1.0), "[1,5)");
    assert_eq!(label(5.0), "[5,inf)");
    let l = default_l_bins();
    assert_eq!(l.labels()[l.find(1.0).unwrap()], "(0.999999,1.000001]");
    assert!(Bins::parse(&["(0,1]", "(2,3]"]).is_err());
    assert!(BandSpec::new(Bins::parse(&["(-inf,0]", "(0,inf)"]).unwrap(), default_l_bins()).is_err());
}

#[test]
fn episode_summaries_and_aggregates() {
    let bands = BandSpec::new(default_delta_bins(), default_l_bins()).unwrap();
    let t = sample();
    let eps = summarize_episodes(&t, 2, &bands, true).unwrap();
    assert_eq!(eps[0].ret, 4.0);
    assert_eq!(eps[0].mean_delta, 1.75);
    assert_eq!(eps[0].neg_delta_frac, 0.5);
    assert_eq!(eps[0].delta_counts.iter().sum::<u32>(), 2);
    let without = summarize_episodes(&t, 2, &bands, false).unwrap();
    assert_eq!(without[0].mean_delta, -0.5);
    assert!(without[1].mean_delta.is_nan());

    let agg = episode_statistics(&[sample(), sample(), sample()], 2, &bands).unwrap();
    assert_eq!(agg.trials, 3);
    for ep in &agg.per_episode {
        assert_eq!(ep.n, 3);
        assert_abs_diff_eq!(ep.delta_proportions.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(ep.l_proportions.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
        assert_eq!(ep.std_return, 0.0);
    }
    assert!(episode_statistics(&[sample()], 2, &bands).is_err());
}

#[test]
fn moments_match_two_pass() {
    let xs = [3.0, -1.5, 2.25, 10.0, 0.0, 7.5];
    let mut m = Moments::default();
    xs.iter().for_each(|&x| m.push(x));
    let mean = xs.iter().sum::<f64>() / 6.0;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 5.0;
    assert_abs_diff_eq!(m.mean(), mean, epsilon = 1e-14);
    assert_abs_diff_eq!(m.std_dev(), var.sqrt(), epsilon = 1e-14);
    assert_abs_diff_eq!(m.std_err(), (var / 6.0).sqrt(), epsilon = 1e-14);
}

#[test]
fn learning_traces_satisfy_objective_identities() {
    let setup = TrialSetup::new(chain(), BacConfig { beta: 0.1, ..BacConfig::default() }, 40);
    for_each_trial(&setup, 5, 0, 16, |_, t| {
        assert_eq!(trial_reward_qualia(&t, 1.0, 40)?, trial_performance(&t, 40)?);
        let explicit = trial_tde_qualia(&t, 0.9, TdeMode::Explicit, 40)?;
        assert_eq!(explicit.to_bits(), trial_tde_qualia(&t, 0.9, TdeMode::Implicit, 40)?.to_bits());
        Ok(())
    })
    .unwrap();
}
