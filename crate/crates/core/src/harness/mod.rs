//! Seeded multi-trial experiments and their result files.
//!
//! Trial `i` draws every random stream from `(seed, i)`, so all agents of one
//! experiment see the same sampled environments, the same initial states and
//! the same environment noise. Trials are independent and may run on the
//! worker pool; results are merged by index, which keeps every output file
//! except `timings.csv` byte-identical between runs.

mod config;
mod output;
pub mod stats;

use std::path::Path;
use std::time::Instant;

pub use config::{
    load_config, AgentKind, CellsConfig, CycleConfig, EnvSpec, Experiment, ExperimentConfig, MseConfig,
    TimingConfig, SCHEMA_VERSION,
};
pub use output::{
    read_results, write_outputs, ResultRow, CURVE_SCHEMA, CYCLE_SCHEMA, RESULTS_SCHEMA, SCORES_SCHEMA,
    TIMINGS_SCHEMA,
};

use crate::envs::{Environment, Garnet, Gridworld, Logistics, MdpTables};
use crate::error::{Error, Result};
use crate::eval::{self, CycleStats, FixedPolicy, StationaryMethod};
use crate::partition::OrderedPartition;
use crate::pasa::Pasa;
use crate::rng::{stream, Purpose, SimRng};
use crate::sarsa::{self, Agent, Architecture, Behavior, RunOptions, RunRngs, RunStats};

/// Largest state count accepted for exact value-error scoring.
pub const MSE_STATE_LIMIT: usize = 20_000;

/// Command-line overrides applied on top of a resolved config.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub trials: Option<usize>,
    pub iterations: Option<u64>,
    pub agent: Option<AgentKind>,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut ExperimentConfig) -> Result<()> {
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(t) = self.trials {
            cfg.trials = t;
        }
        if let Some(i) = self.iterations {
            cfg.iterations = i;
        }
        if let Some(a) = self.agent {
            cfg.agents = vec![a];
        }
        cfg.validate()
    }
}

/// One (trial, checkpoint) evaluation in fixed-policy mode.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreRow {
    pub agent: AgentKind,
    pub trial: usize,
    pub iteration: u64,
    pub mse: f64,
    pub l: f64,
    pub l_tilde: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrialResult {
    pub agent: AgentKind,
    pub trial: usize,
    pub iterations: u64,
    pub window_means: Vec<f64>,
    pub final_reward: f64,
    /// Root of the mean MSE over the final fifth (fixed-policy mode only).
    pub sqrt_mse: Option<f64>,
    pub repartitions: u64,
    pub micros_per_iter: f64,
    pub scores: Vec<ScoreRow>,
    pub events: Vec<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AgentSummary {
    pub agent: AgentKind,
    pub trials: usize,
    pub iterations: u64,
    pub final_reward: f64,
    pub final_reward_ci95: f64,
    pub sqrt_mse: Option<f64>,
    pub sqrt_mse_ci95: Option<f64>,
    pub repartitions: f64,
}

/// Per-window reward averaged across trials.
#[derive(Clone, Debug, PartialEq)]
pub struct CurvePoint {
    pub agent: AgentKind,
    pub window: usize,
    pub iteration: u64,
    pub mean_reward: f64,
    pub ci95: f64,
}

/// Best-of-repeats cost of one iteration.
#[derive(Clone, Debug, PartialEq)]
pub struct TimingRow {
    pub agent: AgentKind,
    pub iterations: u64,
    pub repeats: usize,
    /// `None` when there was nothing to time.
    pub micros_per_iter: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Report {
    pub experiment: String,
    pub trials: Vec<TrialResult>,
    pub summaries: Vec<AgentSummary>,
    pub curve: Vec<CurvePoint>,
    pub timing: Vec<TimingRow>,
    pub cycle: Option<CycleStats>,
}

impl Report {
    pub fn summary(&self, agent: AgentKind) -> Option<&AgentSummary> {
        self.summaries.iter().find(|s| s.agent == agent)
    }

    /// Relative PASA overhead over the fixed aggregation, when both were timed.
    pub fn overhead(&self) -> Option<f64> {
        let get = |k| {
            self.timing
                .iter()
                .find(|t| t.agent == k)
                .and_then(|t| t.micros_per_iter)
        };
        Some(get(AgentKind::Pasa)? / get(AgentKind::Fixed)? - 1.0)
    }
}

/// A sampled environment of any supported family.
#[derive(Clone, Debug)]
pub enum EnvInstance {
    Garnet(Garnet),
    Gridworld(Gridworld),
    Logistics(Logistics),
}

impl EnvInstance {
    fn num_states(&self) -> usize {
        match self {
            EnvInstance::Garnet(e) => e.num_states(),
            EnvInstance::Gridworld(e) => e.num_states(),
            EnvInstance::Logistics(e) => e.num_states(),
        }
    }

    fn num_actions(&self) -> usize {
        match self {
            EnvInstance::Garnet(e) => e.num_actions(),
            EnvInstance::Gridworld(e) => e.num_actions(),
            EnvInstance::Logistics(e) => e.num_actions(),
        }
    }

    fn initial_state(&self) -> usize {
        match self {
            EnvInstance::Garnet(e) => e.initial_state(),
            EnvInstance::Gridworld(e) => e.initial_state(),
            EnvInstance::Logistics(e) => e.initial_state(),
        }
    }

    fn tables(&self) -> Option<MdpTables> {
        match self {
            EnvInstance::Garnet(e) => e.tables(),
            EnvInstance::Gridworld(e) => e.tables(),
            EnvInstance::Logistics(e) => e.tables(),
        }
    }

    fn run(
        &self,
        agent: &mut Agent,
        behavior: Behavior<'_>,
        opts: RunOptions,
        rngs: RunRngs<'_>,
        hook: &mut dyn FnMut(u64, &Agent),
    ) -> Result<RunStats> {
        match self {
            EnvInstance::Garnet(e) => sarsa::run(e, agent, behavior, opts, rngs, hook),
            EnvInstance::Gridworld(e) => sarsa::run(e, agent, behavior, opts, rngs, hook),
            EnvInstance::Logistics(e) => sarsa::run(e, agent, behavior, opts, rngs, hook),
        }
    }
}

/// Environment source resolved once per experiment.
enum EnvSource {
    Sampled(EnvSpec),
    Stored(Garnet),
}

impl EnvSource {
    fn new(spec: &EnvSpec) -> Result<Self> {
        Ok(match spec {
            EnvSpec::GarnetFile { path } => EnvSource::Stored(Garnet::load(path)?),
            other => EnvSource::Sampled(other.clone()),
        })
    }

    fn instance(&self, seed: u64, trial: usize) -> Result<EnvInstance> {
        let mut rng = stream(seed, trial as u64, Purpose::EnvSample);
        Ok(match self {
            EnvSource::Stored(g) => EnvInstance::Garnet(g.clone()),
            EnvSource::Sampled(EnvSpec::Garnet(s)) => EnvInstance::Garnet(Garnet::sample(s, &mut rng)?),
            EnvSource::Sampled(EnvSpec::Gridworld(s)) => {
                EnvInstance::Gridworld(Gridworld::sample(s, &mut rng)?)
            }
            EnvSource::Sampled(EnvSpec::Logistics(s)) => {
                EnvInstance::Logistics(Logistics::sample(s, &mut rng)?)
            }
            EnvSource::Sampled(EnvSpec::GarnetFile { .. }) => unreachable!("resolved in EnvSource::new"),
        })
    }
}

/// Build the agent of kind `kind` for an environment with `states` states.
pub fn build_agent(cfg: &ExperimentConfig, kind: AgentKind, states: usize, actions: usize) -> Result<Agent> {
    let arch = match kind {
        AgentKind::Tabular => Architecture::Tabular { states },
        AgentKind::Fixed => Architecture::Fixed(OrderedPartition::equal(states, cfg.cells.x)?),
        AgentKind::Pasa => {
            let base = OrderedPartition::base(states, cfg.x0())?;
            let mut pasa = Pasa::new(base, cfg.cells.x, cfg.pasa.clone())?;
            if cfg.log_events {
                pasa.enable_event_log();
            }
            Architecture::Adaptive(Box::new(pasa))
        }
    };
    Agent::new(arch, actions, cfg.sarsa.clone())
}

/// Fixed policy and exact scoring data for one trial.
struct Oracle {
    tables: MdpTables,
    pi: FixedPolicy,
    q_true: Vec<f64>,
    weights: Vec<f64>,
}

fn oracle(cfg: &ExperimentConfig, mse: &MseConfig, env: &EnvInstance, trial: usize) -> Result<Oracle> {
    let states = env.num_states();
    if states > MSE_STATE_LIMIT {
        return Err(Error::Capacity(format!(
            "exact scoring supports at most {MSE_STATE_LIMIT} states, got {states}"
        )));
    }
    let tables = env.tables().ok_or_else(|| {
        Error::Capacity("this environment family has no transition tables for exact scoring".into())
    })?;
    let mut rng = stream(cfg.seed, trial as u64, Purpose::Policy);
    let pi = FixedPolicy::sample_epsilon_deterministic(states, tables.actions, mse.policy_epsilon, &mut rng)?;
    let q_true = eval::true_q(&tables, &pi, cfg.sarsa.gamma, 1e-10)?;
    let psi = eval::stationary_distribution(&tables, &pi, env.initial_state(), StationaryMethod::Power {
        tol: 1e-12,
    })?;
    let w_tilde: Vec<f64> = (0..states).flat_map(|s| pi.row(s).to_vec()).collect();
    let weights = eval::psi_weights(&psi, &w_tilde, tables.actions);
    Ok(Oracle {
        tables,
        pi,
        q_true,
        weights,
    })
}

fn q_vector(agent: &Agent, states: usize, actions: usize) -> Vec<f64> {
    let mut q = Vec::with_capacity(states * actions);
    for s in 0..states {
        let row = agent.theta().row(agent.cell(s));
        q.extend_from_slice(row);
    }
    q
}

fn run_trial(cfg: &ExperimentConfig, source: &EnvSource, kind: AgentKind, trial: usize) -> Result<TrialResult> {
    let env = source.instance(cfg.seed, trial)?;
    let (states, actions) = (env.num_states(), env.num_actions());
    let oracle = match &cfg.mse {
        Some(m) => Some(oracle(cfg, m, &env, trial)?),
        None => None,
    };
    let mut agent = build_agent(cfg, kind, states, actions)?;
    let checkpoint_every = match (&cfg.mse, cfg.iterations) {
        (Some(m), t) if t > 0 => (t / m.checkpoints).max(1),
        _ => 0,
    };
    let opts = RunOptions {
        iterations: cfg.iterations,
        window: cfg.window(),
        checkpoint_every,
    };
    let mut env_rng = stream(cfg.seed, trial as u64, Purpose::EnvStep);
    let mut explore = stream(cfg.seed, trial as u64, Purpose::Explore);
    let mut scores = Vec::new();
    let behavior = match &oracle {
        Some(o) => Behavior::Fixed(&o.pi),
        None => Behavior::EpsilonGreedy,
    };
    let mut hook = |t: u64, a: &Agent| {
        if let Some(o) = &oracle {
            let q = q_vector(a, states, actions);
            scores.push(ScoreRow {
                agent: kind,
                trial,
                iteration: t,
                mse: eval::score_mse(&q, &o.q_true, &o.weights),
                l: eval::score_l(&o.tables, &o.pi, cfg.sarsa.gamma, &q, &o.weights),
                l_tilde: eval::score_l_tilde(&o.tables, &o.pi, cfg.sarsa.gamma, &q, &o.weights),
            });
        }
    };
    let rngs = RunRngs {
        env: &mut env_rng,
        policy: &mut explore,
    };
    let start = Instant::now();
    let stats = env.run(&mut agent, behavior, opts, rngs, &mut hook)?;
    let elapsed = start.elapsed().as_secs_f64();
    let sqrt_mse = oracle.as_ref().and_then(|_| final_fifth_sqrt_mse(&scores, cfg.iterations));
    let events = agent
        .pasa_mut()
        .map(|p| p.take_events())
        .unwrap_or_default()
        .into_iter()
        .map(|line| format!("agent={} trial={trial} {line}", kind.name()))
        .collect();
    Ok(TrialResult {
        agent: kind,
        trial,
        iterations: stats.iterations,
        window_means: stats.window_means,
        final_reward: stats.final_fifth_mean,
        sqrt_mse,
        repartitions: stats.repartitions,
        micros_per_iter: if cfg.iterations > 0 {
            elapsed * 1e6 / cfg.iterations as f64
        } else {
            f64::NAN
        },
        scores,
        events,
    })
}

/// `sqrt` of the mean MSE over checkpoints in the last fifth of the run,
/// falling back to the last checkpoint when none lies there.
fn final_fifth_sqrt_mse(scores: &[ScoreRow], iterations: u64) -> Option<f64> {
    let tail_start = iterations - iterations / 5;
    let tail: Vec<f64> = scores
        .iter()
        .filter(|s| s.iteration > tail_start)
        .map(|s| s.mse)
        .collect();
    if tail.is_empty() {
        return scores.last().map(|s| s.mse.sqrt());
    }
    Some((tail.iter().sum::<f64>() / tail.len() as f64).sqrt())
}

fn summarize(cfg: &ExperimentConfig, trials: &[TrialResult]) -> (Vec<AgentSummary>, Vec<CurvePoint>) {
    let mut summaries = Vec::new();
    let mut curve = Vec::new();
    for &kind in &cfg.agents {
        let mine: Vec<&TrialResult> = trials.iter().filter(|t| t.agent == kind).collect();
        let rewards: Vec<f64> = mine.iter().map(|t| t.final_reward).collect();
        let (final_reward, final_reward_ci95) = stats::ci95(&rewards);
        let mses: Option<Vec<f64>> = mine.iter().map(|t| t.sqrt_mse).collect();
        let (sqrt_mse, sqrt_mse_ci95) = match mses {
            Some(v) if !v.is_empty() => {
                let (m, h) = stats::ci95(&v);
                (Some(m), Some(h))
            }
            _ => (None, None),
        };
        let repartitions =
            mine.iter().map(|t| t.repartitions as f64).sum::<f64>() / mine.len().max(1) as f64;
        summaries.push(AgentSummary {
            agent: kind,
            trials: mine.len(),
            iterations: cfg.iterations,
            final_reward,
            final_reward_ci95,
            sqrt_mse,
            sqrt_mse_ci95,
            repartitions,
        });
        let windows = mine.iter().map(|t| t.window_means.len()).min().unwrap_or(0);
        for w in 0..windows {
            let v: Vec<f64> = mine.iter().map(|t| t.window_means[w]).collect();
            let (mean_reward, ci95) = stats::ci95(&v);
            curve.push(CurvePoint {
                agent: kind,
                window: w,
                iteration: (w as u64 + 1) * cfg.window(),
                mean_reward,
                ci95,
            });
        }
    }
    (summaries, curve)
}

/// Run every configured agent on every trial. In fixed-policy mode (an
/// `[mse]` section is present) the agents follow a sampled policy and the
/// report carries value-error scores.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Report> {
    cfg.validate()?;
    let source = EnvSource::new(&cfg.env)?;
    let agents = cfg.agents.len();
    let jobs = cfg.trials * agents;
    let results = cfg
        .execution
        .map_indexed(jobs, |j| run_trial(cfg, &source, cfg.agents[j % agents], j / agents));
    let mut trials = results.into_iter().collect::<Result<Vec<_>>>()?;
    // agent-major order for the result files
    trials.sort_by_key(|t| (cfg.agents.iter().position(|&a| a == t.agent), t.trial));
    let (summaries, curve) = summarize(cfg, &trials);
    Ok(Report {
        experiment: String::new(),
        trials,
        summaries,
        curve,
        timing: Vec::new(),
        cycle: None,
    })
}

/// [`run_experiment`] that insists on fixed-policy scoring.
pub fn run_mse_experiment(cfg: &ExperimentConfig) -> Result<Report> {
    if cfg.mse.is_none() {
        return Err(Error::config("mse", "section required for value-error experiments"));
    }
    run_experiment(cfg)
}

/// Time each agent on the trial-0 environment. Runs alternate between agents
/// and the fastest of `repeats` is kept. Environment sampling is excluded.
pub fn measure_iteration_cost(cfg: &ExperimentConfig) -> Result<Report> {
    cfg.validate()?;
    let repeats = cfg.timing.as_ref().map_or(3, |t| t.repeats.max(1));
    let source = EnvSource::new(&cfg.env)?;
    let env = source.instance(cfg.seed, 0)?;
    let (states, actions) = (env.num_states(), env.num_actions());
    let mut best = vec![f64::INFINITY; cfg.agents.len()];
    let mut trials: Vec<Option<TrialResult>> = vec![None; cfg.agents.len()];
    for _ in 0..repeats {
        for (k, &kind) in cfg.agents.iter().enumerate() {
            let mut agent = build_agent(cfg, kind, states, actions)?;
            let mut env_rng: SimRng = stream(cfg.seed, 0, Purpose::EnvStep);
            let mut explore = stream(cfg.seed, 0, Purpose::Explore);
            let opts = RunOptions {
                iterations: cfg.iterations,
                window: cfg.window(),
                checkpoint_every: 0,
            };
            let rngs = RunRngs {
                env: &mut env_rng,
                policy: &mut explore,
            };
            let start = Instant::now();
            let stats = env.run(&mut agent, Behavior::EpsilonGreedy, opts, rngs, &mut |_, _| {})?;
            let secs = start.elapsed().as_secs_f64();
            best[k] = best[k].min(secs);
            trials[k].get_or_insert_with(|| TrialResult {
                agent: kind,
                trial: 0,
                iterations: stats.iterations,
                final_reward: stats.final_fifth_mean,
                window_means: stats.window_means,
                sqrt_mse: None,
                repartitions: stats.repartitions,
                micros_per_iter: f64::NAN,
                scores: Vec::new(),
                events: Vec::new(),
            });
        }
    }
    let timing = cfg
        .agents
        .iter()
        .zip(&best)
        .map(|(&agent, &secs)| TimingRow {
            agent,
            iterations: cfg.iterations,
            repeats,
            micros_per_iter: (cfg.iterations > 0).then(|| secs * 1e6 / cfg.iterations as f64),
        })
        .collect();
    let mut trials: Vec<TrialResult> = trials.into_iter().flatten().collect();
    for (t, row) in trials.iter_mut().zip(&timing) {
        let row: &TimingRow = row;
        t.micros_per_iter = row.micros_per_iter.unwrap_or(f64::NAN);
    }
    let (summaries, curve) = summarize(cfg, &trials);
    Ok(Report {
        experiment: String::new(),
        trials,
        summaries,
        curve,
        timing,
        cycle: None,
    })
}

/// Monte Carlo cycle structure of random successor maps.
pub fn run_cycle_stats(cfg: &ExperimentConfig) -> Result<Report> {
    let c = cfg
        .cycle
        .as_ref()
        .ok_or_else(|| Error::config("cycle", "section required for cycle statistics"))?;
    let stats = eval::cycle_statistics(c.states, c.samples, cfg.seed, cfg.execution)?;
    Ok(Report {
        cycle: Some(stats),
        ..Report::default()
    })
}

/// Dispatch `experiment`, returning its report.
pub fn execute(experiment: Experiment, cfg: &ExperimentConfig) -> Result<Report> {
    let mut report = match experiment {
        Experiment::GarnetMse => run_mse_experiment(cfg)?,
        Experiment::CycleStats => run_cycle_stats(cfg)?,
        Experiment::Timing => measure_iteration_cost(cfg)?,
        Experiment::GarnetPerf | Experiment::Gridworld | Experiment::Logistics => run_experiment(cfg)?,
    };
    report.experiment = experiment.name().to_string();
    Ok(report)
}

/// Run `experiment` and write its files (plus the resolved config) to `out`.
pub fn execute_to(experiment: Experiment, cfg: &ExperimentConfig, out: &Path) -> Result<Report> {
    let report = execute(experiment, cfg)?;
    write_outputs(&report, cfg, out)?;
    Ok(report)
}
