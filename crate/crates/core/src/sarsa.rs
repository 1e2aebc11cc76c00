//! SARSA(0) over a state aggregation.
//!
//! The approximation is a matrix `theta` with one row per cell: the value
//! of `(s, a)` is `theta[cell(s)][a]`. The cell map is the identity for the
//! tabular baseline, a frozen [`OrderedPartition`] for SARSA-F and the
//! partition maintained by [`Pasa`] for SARSA-P.

use std::fmt::Write as _;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::envs::Environment;
use crate::error::{Error, Result};
use crate::eval::FixedPolicy;
use crate::partition::{Interval, OrderedPartition};
use crate::pasa::Pasa;
use crate::rng::SimRng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SarsaParams {
    pub eta: f64,
    pub gamma: f64,
    pub epsilon: f64,
    /// Reweight updates by the reciprocal of the updated action's
    /// probability.
    pub reciprocal_pi_weighting: PiWeighting,
    /// Remap `theta` onto the new cells after every repartition.
    pub weight_transfer: bool,
}

impl Default for SarsaParams {
    fn default() -> Self {
        SarsaParams {
            eta: 3e-4,
            gamma: 0.98,
            epsilon: 0.01,
            reciprocal_pi_weighting: PiWeighting::Off,
            weight_transfer: true,
        }
    }
}

/// How the probability `pi(a|s)` of the updated action enters an update.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PiWeighting {
    #[default]
    Off,
    /// Bootstrap term `gamma * d` becomes `gamma * d / pi(a|s)`.
    Bootstrap,
    /// Whole step scaled: `eta / pi(a|s)`, capped at one. Rare actions learn
    /// as fast as common ones and the tabular fixed point is unchanged.
    Step,
}

impl SarsaParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(Error::invalid(format!("eta {} must be positive", self.eta)));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::invalid(format!("gamma {} outside [0,1)", self.gamma)));
        }
        if !(0.0..=1.0).contains(&self.epsilon) {
            return Err(Error::invalid(format!("epsilon {} outside [0,1]", self.epsilon)));
        }
        Ok(())
    }
}

/// The `X x A` parameter matrix, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightMatrix {
    cells: usize,
    actions: usize,
    theta: Vec<f64>,
}

impl WeightMatrix {
    pub fn zeros(cells: usize, actions: usize) -> Self {
        WeightMatrix {
            cells,
            actions,
            theta: vec![0.0; cells * actions],
        }
    }

    pub fn cells(&self) -> usize {
        self.cells
    }

    pub fn actions(&self) -> usize {
        self.actions
    }

    #[inline]
    pub fn q_value(&self, cell: usize, action: usize) -> f64 {
        self.theta[cell * self.actions + action]
    }

    #[inline]
    pub fn set(&mut self, cell: usize, action: usize, value: f64) {
        self.theta[cell * self.actions + action] = value;
    }

    #[inline]
    pub fn row(&self, cell: usize) -> &[f64] {
        &self.theta[cell * self.actions..(cell + 1) * self.actions]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.theta
    }

    pub fn is_finite(&self) -> bool {
        self.theta.iter().all(|v| v.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.theta.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Lowest-index maximiser of a row.
    #[inline]
    pub fn greedy(&self, cell: usize) -> usize {
        let row = self.row(cell);
        let mut best = 0;
        for (j, &v) in row.iter().enumerate().skip(1) {
            if v > row[best] {
                best = j;
            }
        }
        best
    }

    /// One line per cell, space separated, full precision.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for k in 0..self.cells {
            for (j, v) in self.row(k).iter().enumerate() {
                if j > 0 {
                    out.push(' ');
                }
                let _ = write!(out, "{v:?}");
            }
            out.push('\n');
        }
        out
    }
}

/// epsilon-greedy choice in `cell`; returns the action and the
/// probability the rule gave it.
#[inline]
pub fn select_action(theta: &WeightMatrix, cell: usize, epsilon: f64, rng: &mut SimRng) -> (usize, f64) {
    let greedy = theta.greedy(cell);
    let a = theta.actions();
    let action = if epsilon > 0.0 && rng.random::<f64>() < epsilon {
        rng.random_range(0..a)
    } else {
        greedy
    };
    (action, greedy_probability(greedy, action, epsilon, a))
}

#[inline]
fn greedy_probability(greedy: usize, action: usize, epsilon: f64, actions: usize) -> f64 {
    let explore = epsilon / actions as f64;
    if action == greedy {
        1.0 - epsilon + explore
    } else {
        explore
    }
}

/// Probability that epsilon-greedy picks `action` in `cell`.
pub fn action_probability(theta: &WeightMatrix, cell: usize, action: usize, epsilon: f64) -> f64 {
    greedy_probability(theta.greedy(cell), action, epsilon, theta.actions())
}

/// One temporal-difference step on `theta[cell][action]`.
///
/// `pi_prob` is the probability the behaviour policy gave `action`; it is
/// only read when reciprocal weighting is on.
#[allow(clippy::too_many_arguments)]
#[inline]
pub fn td_update(
    theta: &mut WeightMatrix,
    cell: usize,
    action: usize,
    reward: f64,
    next_cell: usize,
    next_action: usize,
    pi_prob: f64,
    params: &SarsaParams,
) -> Result<()> {
    let mut d = theta.q_value(next_cell, next_action);
    let mut eta = params.eta;
    if params.reciprocal_pi_weighting != PiWeighting::Off && !(pi_prob > 0.0) {
        return Err(Error::invalid("reciprocal weighting needs a positive pi_prob"));
    }
    match params.reciprocal_pi_weighting {
        PiWeighting::Off => {}
        PiWeighting::Bootstrap => d /= pi_prob,
        PiWeighting::Step => eta = (eta / pi_prob).min(1.0),
    }
    let i = cell * theta.actions + action;
    theta.theta[i] += eta * (reward + params.gamma * d - theta.theta[i]);
    Ok(())
}

/// Tabular SARSA(0): [`td_update`] with one cell per state.
#[allow(clippy::too_many_arguments)]
pub fn tabular_update(
    q: &mut WeightMatrix,
    state: usize,
    action: usize,
    reward: f64,
    next_state: usize,
    next_action: usize,
    pi_prob: f64,
    params: &SarsaParams,
) -> Result<()> {
    td_update(q, state, action, reward, next_state, next_action, pi_prob, params)
}

/// Extra term added during a transfer for the transition that straddles it.
#[derive(Clone, Copy, Debug)]
pub struct TransferCorrection {
    /// Old cell (0-based) of the last state.
    pub old_cell: usize,
    pub action: usize,
    /// `eta * d` from the straddling update.
    pub amount: f64,
}

/// Rebuild `theta` for `new_cells`: every new row is the mean of the old
/// rows whose cells overlap it. With a correction, new cells overlapping
/// `old_cell` also get `amount` added in column `action`.
pub fn weight_transfer(
    theta: &mut WeightMatrix,
    old_cells: &[Interval],
    new_cells: &[Interval],
    correction: Option<TransferCorrection>,
) {
    debug_assert_eq!(theta.cells(), old_cells.len());
    let mut order: Vec<usize> = (0..old_cells.len()).collect();
    order.sort_unstable_by_key(|&k| old_cells[k].lo());
    // overlapping old cells form a contiguous run in `order`
    let spans: Vec<(usize, usize)> = new_cells
        .iter()
        .map(|cell| {
            let start = order.partition_point(|&k| old_cells[k].hi() < cell.lo());
            let end = order.partition_point(|&k| old_cells[k].lo() <= cell.hi());
            (start, end)
        })
        .collect();
    let mut column = vec![0.0; old_cells.len()];
    let a = theta.actions();
    let mut out = vec![0.0; new_cells.len() * a];
    for l in 0..a {
        for (k, c) in column.iter_mut().enumerate() {
            *c = theta.q_value(k, l);
        }
        for (j, &(start, end)) in spans.iter().enumerate() {
            let members = &order[start..end];
            let sum: f64 = members.iter().map(|&k| column[k]).sum();
            let mut value = sum / members.len() as f64;
            if let Some(c) = correction {
                if c.action == l && members.contains(&c.old_cell) {
                    value += c.amount;
                }
            }
            out[j * a + l] = value;
        }
    }
    theta.cells = new_cells.len();
    theta.theta = out;
}

/// How states map to rows of `theta`.
#[derive(Clone, Debug)]
pub enum Architecture {
    Tabular { states: usize },
    Fixed(OrderedPartition),
    Adaptive(Box<Pasa>),
}

/// Which action the agent takes next.
#[derive(Clone, Copy, Debug)]
pub enum Behavior<'a> {
    EpsilonGreedy,
    /// Follow a given policy; only the value estimate is learned.
    Fixed(&'a FixedPolicy),
}

#[derive(Clone, Debug)]
pub struct Agent {
    params: SarsaParams,
    theta: WeightMatrix,
    arch: Architecture,
}

impl Agent {
    pub fn new(arch: Architecture, actions: usize, params: SarsaParams) -> Result<Self> {
        params.validate()?;
        if actions == 0 {
            return Err(Error::invalid("need at least one action"));
        }
        let cells = match &arch {
            Architecture::Tabular { states } => *states,
            Architecture::Fixed(p) => p.len(),
            Architecture::Adaptive(p) => p.partition().len(),
        };
        Ok(Agent {
            params,
            theta: WeightMatrix::zeros(cells, actions),
            arch,
        })
    }

    pub fn params(&self) -> &SarsaParams {
        &self.params
    }

    pub fn theta(&self) -> &WeightMatrix {
        &self.theta
    }

    pub fn theta_mut(&mut self) -> &mut WeightMatrix {
        &mut self.theta
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn partition(&self) -> Option<&OrderedPartition> {
        match &self.arch {
            Architecture::Tabular { .. } => None,
            Architecture::Fixed(p) => Some(p),
            Architecture::Adaptive(p) => Some(p.partition()),
        }
    }

    pub fn pasa(&self) -> Option<&Pasa> {
        match &self.arch {
            Architecture::Adaptive(p) => Some(p),
            _ => None,
        }
    }

    pub fn pasa_mut(&mut self) -> Option<&mut Pasa> {
        match &mut self.arch {
            Architecture::Adaptive(p) => Some(p),
            _ => None,
        }
    }

    /// Row of `theta` used for 0-based `state`.
    #[inline]
    pub fn cell(&self, state: usize) -> usize {
        match &self.arch {
            Architecture::Tabular { .. } => state,
            Architecture::Fixed(p) => p.lookup(state),
            Architecture::Adaptive(p) => p.partition().lookup(state),
        }
    }

    /// Current estimate of `Q(state, action)`.
    pub fn q(&self, state: usize, action: usize) -> f64 {
        self.theta.q_value(self.cell(state), action)
    }

    /// Feed a visit to PASA; returns `true` if the partition changed shape
    /// (and `theta` was remapped when transfer is on).
    #[inline]
    fn observe(&mut self, cell: usize) -> bool {
        let Architecture::Adaptive(pasa) = &mut self.arch else {
            return false;
        };
        if !pasa.tick_cell(cell) {
            return false;
        }
        if self.params.weight_transfer {
            let new_cells = pasa.partition().cells();
            let old_cells = pasa.previous_cells();
            if new_cells != old_cells {
                weight_transfer(&mut self.theta, old_cells, new_cells, None);
            }
        }
        true
    }

    #[inline]
    fn choose(&self, state: usize, cell: usize, behavior: Behavior<'_>, rng: &mut SimRng) -> (usize, f64) {
        match behavior {
            Behavior::EpsilonGreedy => select_action(&self.theta, cell, self.params.epsilon, rng),
            Behavior::Fixed(pi) => {
                let a = pi.sample(state, rng);
                (a, pi.prob(state, a))
            }
        }
    }
}

/// Options for [`run`].
#[derive(Clone, Copy, Debug)]
pub struct RunOptions {
    pub iterations: u64,
    /// Rewards are averaged over windows of this many iterations.
    pub window: u64,
    /// Call the checkpoint hook every this many iterations (0 = never).
    pub checkpoint_every: u64,
}

/// What a run produced besides the trained agent.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunStats {
    pub iterations: u64,
    pub window_means: Vec<f64>,
    pub total_reward: f64,
    /// Mean reward over the last fifth of the run.
    pub final_fifth_mean: f64,
    pub repartitions: u64,
    pub max_abs_theta: f64,
}

/// Random streams consumed by [`run`].
pub struct RunRngs<'a> {
    pub env: &'a mut SimRng,
    pub policy: &'a mut SimRng,
}

/// Continuing SARSA loop: act, observe, (PASA tick), pick the next action,
/// update. The hook sees the iteration count and the agent.
pub fn run<E: Environment>(
    env: &E,
    agent: &mut Agent,
    behavior: Behavior<'_>,
    opts: RunOptions,
    rngs: RunRngs<'_>,
    hook: &mut dyn FnMut(u64, &Agent),
) -> Result<RunStats> {
    let RunRngs { env: env_rng, policy: rng } = rngs;
    if agent.theta.actions() != env.num_actions() {
        return Err(Error::invalid("agent and environment disagree on the action count"));
    }
    let needed = match &agent.arch {
        Architecture::Tabular { states } => *states,
        _ => agent.partition().map_or(0, OrderedPartition::states),
    };
    if needed != env.num_states() {
        return Err(Error::invalid(format!(
            "agent covers {needed} states, environment has {}",
            env.num_states()
        )));
    }
    let t_total = opts.iterations;
    let window = opts.window.max(1);
    let tail_start = t_total - t_total / 5;
    let mut stats = RunStats {
        iterations: t_total,
        ..RunStats::default()
    };
    let mut window_sum = 0.0;
    let mut tail_sum = 0.0;
    let mut state = env.initial_state();
    let mut cell = agent.cell(state);
    let (mut action, mut prob) = agent.choose(state, cell, behavior, rng);
    for t in 0..t_total {
        let (next, reward) = env.step(state, action, env_rng);
        let mut next_cell = agent.cell(next);
        if agent.observe(next_cell) {
            cell = agent.cell(state);
            next_cell = agent.cell(next);
        }
        let (next_action, next_prob) = agent.choose(next, next_cell, behavior, rng);
        td_update(
            &mut agent.theta,
            cell,
            action,
            reward,
            next_cell,
            next_action,
            prob,
            &agent.params,
        )?;
        stats.total_reward += reward;
        window_sum += reward;
        if t >= tail_start {
            tail_sum += reward;
        }
        let done = t + 1;
        if done % window == 0 {
            stats.window_means.push(window_sum / window as f64);
            window_sum = 0.0;
            if !agent.theta.is_finite() {
                return Err(Error::Diverged(format!("non-finite weight at iteration {done}")));
            }
        }
        if opts.checkpoint_every > 0 && done % opts.checkpoint_every == 0 {
            hook(done, agent);
        }
        state = next;
        cell = next_cell;
        action = next_action;
        prob = next_prob;
    }
    let tail = t_total - tail_start;
    stats.final_fifth_mean = if tail > 0 { tail_sum / tail as f64 } else { 0.0 };
    stats.repartitions = agent.pasa().map_or(0, Pasa::repartitions);
    stats.max_abs_theta = agent.theta.max_abs();
    if !agent.theta.is_finite() {
        return Err(Error::Diverged("non-finite weight at end of run".into()));
    }
    Ok(stats)
}
