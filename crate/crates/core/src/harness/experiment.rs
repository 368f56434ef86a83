//! Parallel seeded trials with an ordered reduction.

use std::time::Instant;

use rayon::prelude::*;

use crate::aei::{wrap_inverse, AeiSpec};
use crate::agents::{BacAgent, BacConfig, MemoryRecording};
use crate::environments::EnvironmentModel;
use crate::error::{Error, Result};
use crate::harness::config::ExperimentConfig;
use crate::metrics::{
    summarize_trial, AggregateResult, BandSpec, EntropyAccumulator, EntropyEstimate, ObjectiveSpec, StatsAccumulator,
    TrialSummary,
};
use crate::process::{run_aerp, run_aierp, Agent, RunOptions, Trace};
use crate::seeding::TrialSeed;

/// Trials generated per parallel batch before the ordered fold.
const CHUNK: usize = 256;

/// Everything needed to generate one trial's trace.
#[derive(Debug, Clone)]
pub struct TrialSetup {
    pub env: EnvironmentModel,
    pub aei: AeiSpec,
    pub inverse: bool,
    pub agent: BacConfig,
    pub episodes: usize,
    pub memory: MemoryRecording,
    pub options: RunOptions,
}

impl TrialSetup {
    pub fn new(env: EnvironmentModel, agent: BacConfig, episodes: usize) -> Self {
        Self {
            env,
            aei: AeiSpec::Identity,
            inverse: false,
            agent,
            episodes,
            memory: MemoryRecording::Off,
            options: RunOptions::default(),
        }
    }

    pub fn run(&self, seed: TrialSeed) -> Result<Trace> {
        let aei = self.aei.build()?;
        let states = aei.agent_state_count(self.env.state_count());
        let actions = aei.agent_action_count(self.env.action_count());
        let bac = BacAgent::new(self.agent.clone(), states, actions)?.with_recording(self.memory);
        let mut agent: Box<dyn Agent> = match (self.inverse, self.aei.inverter()?) {
            (false, _) => Box::new(bac),
            (true, Some(inverter)) => Box::new(wrap_inverse(bac, inverter)),
            (true, None) => return Err(Error::Config(format!("interface {} has no inverter", self.aei))),
        };
        if self.aei == AeiSpec::Identity && !self.inverse {
            run_aerp(&self.env, agent.as_mut(), self.episodes, seed, &self.options)
        } else {
            run_aierp(&self.env, aei.as_ref(), agent.as_mut(), self.episodes, seed, &self.options)
        }
    }
}

/// Run `trials` trials of `setup` in parallel and hand each `(trial, trace)` to `visit`
/// in trial order.
pub fn for_each_trial(
    setup: &TrialSetup,
    master_seed: u64,
    group: u32,
    trials: usize,
    visit: impl FnMut(usize, Trace) -> Result<()>,
) -> Result<()> {
    for_each_trial_in(None, setup, master_seed, group, trials, visit)
}

fn for_each_trial_in(
    pool: Option<&rayon::ThreadPool>,
    setup: &TrialSetup,
    master_seed: u64,
    group: u32,
    trials: usize,
    mut visit: impl FnMut(usize, Trace) -> Result<()>,
) -> Result<()> {
    for chunk_start in (0..trials).step_by(CHUNK) {
        let chunk_end = (chunk_start + CHUNK).min(trials);
        let batch = || -> Vec<Result<Trace>> {
            (chunk_start..chunk_end)
                .into_par_iter()
                .map(|trial| setup.run(TrialSeed::derive(master_seed, group, trial as u32)))
                .collect()
        };
        let traces = match pool {
            Some(pool) => pool.install(batch),
            None => batch(),
        };
        for (offset, trace) in traces.into_iter().enumerate() {
            visit(chunk_start + offset, trace?)?;
        }
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct GroupResult {
    pub baseline_c: f64,
    pub aggregate: AggregateResult,
    pub entropy: Vec<(ObjectiveSpec, EntropyEstimate)>,
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub config: ExperimentConfig,
    pub groups: Vec<GroupResult>,
    pub wall_seconds: f64,
    pub threads: usize,
}

struct Reducer<'a> {
    bands: &'a BandSpec,
    cfg: &'a ExperimentConfig,
}

impl Reducer<'_> {
    fn summarize(&self, trace: &Trace) -> Result<TrialSummary> {
        summarize_trial(
            trace,
            self.cfg.i_max,
            self.bands,
            &self.cfg.objectives,
            self.cfg.include_terminal,
            &self.cfg.return_windows,
        )
    }
}

/// Run every group of the sweep, calling `sink(group, trial, trace)` in order for each trace.
pub fn run_experiment_with(
    cfg: &ExperimentConfig,
    mut sink: impl FnMut(usize, usize, &Trace) -> Result<()>,
) -> Result<ExperimentResult> {
    cfg.validate()?;
    let started = Instant::now();
    let env = cfg.env()?;
    let bands = cfg.bins.bands()?;
    let reducer = Reducer { bands: &bands, cfg };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let threads = pool.current_num_threads();
    let entropy_specs: Vec<ObjectiveSpec> = cfg.objectives.iter().filter(|s| s.kind.is_cross_trial()).copied().collect();
    let groups = {
        cfg.baseline_values
            .iter()
            .enumerate()
            .map(|(group, &c)| {
                let setup = TrialSetup {
                    env: env.clone(),
                    aei: cfg.aei,
                    inverse: cfg.inverse,
                    agent: cfg.agent_config(c),
                    episodes: cfg.i_max,
                    memory: cfg.memory,
                    options: RunOptions { horizon: cfg.horizon },
                };
                let mut stats = StatsAccumulator::new(cfg.i_max, &bands, &cfg.objectives, &cfg.return_windows);
                let mut entropy: Vec<EntropyAccumulator> =
                    entropy_specs.iter().map(|s| EntropyAccumulator::new(s.gamma_q, cfg.i_max)).collect();
                for_each_trial_in(Some(&pool), &setup, cfg.master_seed, group as u32, cfg.trials, |trial, trace| {
                    stats.push(&reducer.summarize(&trace)?)?;
                    for acc in &mut entropy {
                        acc.push(&trace)?;
                    }
                    sink(group, trial, &trace)
                })?;
                Ok(GroupResult {
                    baseline_c: c,
                    aggregate: stats.finish()?,
                    entropy: entropy_specs
                        .iter()
                        .zip(&entropy)
                        .map(|(s, acc)| Ok((*s, acc.finish()?)))
                        .collect::<Result<_>>()?,
                })
            })
            .collect::<Result<Vec<_>>>()?
    };
    Ok(ExperimentResult { config: cfg.clone(), groups, wall_seconds: started.elapsed().as_secs_f64(), threads })
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    run_experiment_with(cfg, |_, _, _| Ok(()))
}
