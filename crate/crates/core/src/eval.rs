//! Exact policy evaluation and scoring for table-backed MDPs, plus Monte
//! Carlo statistics of random successor maps.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::envs::{MdpTables, TableMdp};
use crate::envs::Environment;
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::rng::{stream, Purpose, SimRng};

/// A stationary policy as an `S x A` probability table.
#[derive(Clone, Debug, PartialEq)]
pub struct FixedPolicy {
    states: usize,
    actions: usize,
    probs: Vec<f64>,
}

impl FixedPolicy {
    pub fn new(states: usize, actions: usize, probs: Vec<f64>) -> Result<Self> {
        if probs.len() != states * actions || actions == 0 {
            return Err(Error::invalid("policy table has the wrong shape"));
        }
        for (s, row) in probs.chunks(actions).enumerate() {
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > 1e-12 || row.iter().any(|p| !(*p >= 0.0)) {
                return Err(Error::invalid(format!("policy row {s} is not a distribution")));
            }
        }
        Ok(FixedPolicy {
            states,
            actions,
            probs,
        })
    }

    /// Always take `choices[s]`.
    pub fn deterministic(choices: &[usize], actions: usize) -> Result<Self> {
        Self::epsilon_deterministic(choices, actions, 0.0)
    }

    /// Take `choices[s]` with probability `1 - epsilon`, otherwise a
    /// uniform action.
    pub fn epsilon_deterministic(choices: &[usize], actions: usize, epsilon: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&epsilon) {
            return Err(Error::invalid("epsilon outside [0,1]"));
        }
        if choices.iter().any(|&c| c >= actions) {
            return Err(Error::invalid("policy choice out of range"));
        }
        let spread = epsilon / actions as f64;
        let mut probs = vec![spread; choices.len() * actions];
        for (s, &c) in choices.iter().enumerate() {
            probs[s * actions + c] += 1.0 - epsilon;
        }
        Self::new(choices.len(), actions, probs)
    }

    /// Random preferred action per state, then epsilon-mixed.
    pub fn sample_epsilon_deterministic(
        states: usize,
        actions: usize,
        epsilon: f64,
        rng: &mut SimRng,
    ) -> Result<Self> {
        let choices: Vec<usize> = (0..states).map(|_| rng.random_range(0..actions)).collect();
        Self::epsilon_deterministic(&choices, actions, epsilon)
    }

    pub fn states(&self) -> usize {
        self.states
    }

    pub fn actions(&self) -> usize {
        self.actions
    }

    #[inline]
    pub fn prob(&self, state: usize, action: usize) -> f64 {
        self.probs[state * self.actions + action]
    }

    pub fn row(&self, state: usize) -> &[f64] {
        &self.probs[state * self.actions..(state + 1) * self.actions]
    }

    #[inline]
    pub fn sample(&self, state: usize, rng: &mut SimRng) -> usize {
        let row = self.row(state);
        let mut x: f64 = rng.random();
        for (a, &p) in row.iter().enumerate() {
            if x < p {
                return a;
            }
            x -= p;
        }
        // rounding left a sliver; fall back to the last action with mass
        row.iter().rposition(|&p| p > 0.0).unwrap_or(0)
    }

    /// Smallest `delta` with `pi = (1 - delta) pi_1 + delta pi_2`, `pi_1`
    /// deterministic: the worst state's `1 - max_a pi(a|s)`.
    pub fn delta_pi(&self) -> f64 {
        self.probs
            .chunks(self.actions)
            .map(|row| 1.0 - row.iter().copied().fold(0.0, f64::max))
            .fold(0.0, f64::max)
    }
}

fn check_shapes(tables: &MdpTables, pi: &FixedPolicy) -> Result<()> {
    tables.validate()?;
    if pi.states != tables.states || pi.actions != tables.actions {
        return Err(Error::invalid("policy and tables disagree on dimensions"));
    }
    Ok(())
}

/// `V(s) = sum_a pi(a|s) Q(s,a)`.
fn state_values(q: &[f64], pi: &FixedPolicy) -> Vec<f64> {
    q.chunks(pi.actions)
        .zip(pi.probs.chunks(pi.actions))
        .map(|(qs, ps)| qs.iter().zip(ps).map(|(a, b)| a * b).sum())
        .collect()
}

/// One application of the Bellman operator `T^pi`.
pub fn bellman(tables: &MdpTables, pi: &FixedPolicy, gamma: f64, q: &[f64]) -> Vec<f64> {
    let v = state_values(q, pi);
    (0..tables.states * tables.actions)
        .map(|i| {
            let next: f64 = tables.transitions[i].iter().map(|&(s, p)| p * v[s]).sum();
            mean(&tables.rewards[i]) + gamma * next
        })
        .collect()
}

fn mean(dist: &[(f64, f64)]) -> f64 {
    dist.iter().map(|(r, p)| r * p).sum()
}

/// `Q^pi` by fixed-point iteration, stopping once the sup-norm change
/// drops below `tol`. Layout is `s * A + a`.
pub fn true_q(tables: &MdpTables, pi: &FixedPolicy, gamma: f64, tol: f64) -> Result<Vec<f64>> {
    check_shapes(tables, pi)?;
    if !(0.0..1.0).contains(&gamma) {
        return Err(Error::invalid("gamma must lie in [0,1)"));
    }
    let mut q = vec![0.0; tables.states * tables.actions];
    for _ in 0..10_000_000 {
        let next = bellman(tables, pi, gamma, &q);
        let change = next
            .iter()
            .zip(&q)
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        q = next;
        if change < tol {
            return Ok(q);
        }
    }
    Err(Error::invalid("value iteration did not converge"))
}

/// Largest state count accepted by the dense solver.
pub const DENSE_LIMIT: usize = 5_000;

/// `Q^pi` from a dense LU solve of `(I - gamma M) V = r_pi`, then
/// `Q = R + gamma P V`.
pub fn true_q_direct(tables: &MdpTables, pi: &FixedPolicy, gamma: f64) -> Result<Vec<f64>> {
    check_shapes(tables, pi)?;
    let n = tables.states;
    if n > DENSE_LIMIT {
        return Err(Error::Capacity(format!(
            "dense solve limited to {DENSE_LIMIT} states, got {n}"
        )));
    }
    let a = tables.actions;
    let mut m = DMatrix::<f64>::identity(n, n);
    let mut r = DVector::<f64>::zeros(n);
    for s in 0..n {
        for act in 0..a {
            let w = pi.prob(s, act);
            if w == 0.0 {
                continue;
            }
            let i = s * a + act;
            r[s] += w * mean(&tables.rewards[i]);
            for &(t, p) in &tables.transitions[i] {
                m[(s, t)] -= gamma * w * p;
            }
        }
    }
    let v = m
        .lu()
        .solve(&r)
        .ok_or_else(|| Error::invalid("singular policy-evaluation system"))?;
    Ok((0..n * a)
        .map(|i| {
            let next: f64 = tables.transitions[i].iter().map(|&(t, p)| p * v[t]).sum();
            mean(&tables.rewards[i]) + gamma * next
        })
        .collect())
}

/// Sparse rows of the state chain `M(s, s') = sum_a pi(a|s) P(s'|s,a)`.
pub fn induced_chain(tables: &MdpTables, pi: &FixedPolicy) -> Vec<Vec<(usize, f64)>> {
    (0..tables.states)
        .map(|s| {
            let mut row: Vec<(usize, f64)> = Vec::new();
            for a in 0..tables.actions {
                let w = pi.prob(s, a);
                if w == 0.0 {
                    continue;
                }
                for &(t, p) in tables.row(s, a) {
                    row.push((t, w * p));
                }
            }
            row.sort_unstable_by_key(|e| e.0);
            let mut merged: Vec<(usize, f64)> = Vec::with_capacity(row.len());
            for (t, p) in row {
                match merged.last_mut() {
                    Some(last) if last.0 == t => last.1 += p,
                    _ => merged.push((t, p)),
                }
            }
            merged
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum StationaryMethod {
    /// Iterate the lazy chain `(I + M) / 2` from a point mass until the L1
    /// change is below `tol`. Its limit is the time-average occupation from
    /// that start, also for periodic or reducible chains.
    Power { tol: f64 },
    /// Visit frequencies over a simulated trajectory.
    Empirical { steps: u64, seed: u64 },
}

/// Long-run fraction of time spent in each state when following `pi` from
/// `start` (0-based).
pub fn stationary_distribution(
    tables: &MdpTables,
    pi: &FixedPolicy,
    start: usize,
    method: StationaryMethod,
) -> Result<Vec<f64>> {
    check_shapes(tables, pi)?;
    if start >= tables.states {
        return Err(Error::invalid("start state out of range"));
    }
    match method {
        StationaryMethod::Power { tol } => {
            let chain = induced_chain(tables, pi);
            let n = tables.states;
            let mut x = vec![0.0; n];
            x[start] = 1.0;
            let mut next = vec![0.0; n];
            for _ in 0..50_000_000 / n.max(1) + 100_000 {
                next.iter_mut().zip(&x).for_each(|(y, v)| *y = 0.5 * v);
                for (s, row) in chain.iter().enumerate() {
                    let mass = 0.5 * x[s];
                    if mass == 0.0 {
                        continue;
                    }
                    for &(t, p) in row {
                        next[t] += mass * p;
                    }
                }
                let change: f64 = next.iter().zip(&x).map(|(a, b)| (a - b).abs()).sum();
                std::mem::swap(&mut x, &mut next);
                if change < tol {
                    let total: f64 = x.iter().sum();
                    x.iter_mut().for_each(|v| *v /= total);
                    return Ok(x);
                }
            }
            Err(Error::invalid("power iteration did not converge"))
        }
        StationaryMethod::Empirical { steps, seed } => {
            if steps == 0 {
                return Err(Error::invalid("empirical estimate needs at least one step"));
            }
            let env = TableMdp::new(tables.clone(), start)?;
            let mut env_rng = stream(seed, 0, Purpose::EnvStep);
            let mut pol_rng = stream(seed, 0, Purpose::Policy);
            let mut counts = vec![0u64; tables.states];
            let mut s = start;
            for _ in 0..steps {
                counts[s] += 1;
                let a = pi.sample(s, &mut pol_rng);
                s = env.step(s, a, &mut env_rng).0;
            }
            Ok(counts.iter().map(|&c| c as f64 / steps as f64).collect())
        }
    }
}

/// Per-pair weights `w(s, a) = psi(s) * w_tilde(s, a)`.
pub fn psi_weights(psi: &[f64], w_tilde: &[f64], actions: usize) -> Vec<f64> {
    w_tilde
        .iter()
        .enumerate()
        .map(|(i, w)| psi[i / actions] * w)
        .collect()
}

/// `sum w (Q - Q_hat)^2`.
pub fn score_mse(q_hat: &[f64], q_true: &[f64], weights: &[f64]) -> f64 {
    q_hat
        .iter()
        .zip(q_true)
        .zip(weights)
        .map(|((a, b), w)| w * (a - b) * (a - b))
        .sum()
}

/// Weighted squared Bellman error.
pub fn score_l(tables: &MdpTables, pi: &FixedPolicy, gamma: f64, q_hat: &[f64], weights: &[f64]) -> f64 {
    let tq = bellman(tables, pi, gamma, q_hat);
    tq.iter()
        .zip(q_hat)
        .zip(weights)
        .map(|((t, q), w)| w * (t - q) * (t - q))
        .sum()
}

/// Weighted expected squared sampled TD error, with the reward integral
/// taken over the discrete reward distribution of each pair.
pub fn score_l_tilde(
    tables: &MdpTables,
    pi: &FixedPolicy,
    gamma: f64,
    q_hat: &[f64],
    weights: &[f64],
) -> f64 {
    let a_count = tables.actions;
    let mut total = 0.0;
    for i in 0..tables.states * a_count {
        let w = weights[i];
        if w == 0.0 {
            continue;
        }
        let mut inner = 0.0;
        for &(t, p) in &tables.transitions[i] {
            for a2 in 0..a_count {
                let pa = pi.prob(t, a2);
                if pa == 0.0 {
                    continue;
                }
                let boot = gamma * q_hat[t * a_count + a2] - q_hat[i];
                let sq: f64 = tables.rewards[i]
                    .iter()
                    .map(|&(r, pr)| pr * (r + boot) * (r + boot))
                    .sum();
                inner += p * pa * sq;
            }
        }
        total += w * inner;
    }
    total
}

/// `h(I, pi)` (time share of `subset`) and the smallest `delta` for which
/// `subset` is delta-constrained.
pub fn subset_metrics(tables: &MdpTables, pi: &FixedPolicy, psi: &[f64], subset: &[usize]) -> (f64, f64) {
    let mut inside = vec![false; tables.states];
    for &s in subset {
        inside[s] = true;
    }
    let h = subset.iter().map(|&s| psi[s]).sum();
    let chain = induced_chain(tables, pi);
    let delta = subset
        .iter()
        .map(|&s| {
            chain[s]
                .iter()
                .filter(|e| !inside[e.0])
                .map(|e| e.1)
                .sum::<f64>()
        })
        .fold(0.0, f64::max);
    (h, delta)
}

/// Smallest `delta` with `P = (1 - delta) P_1 + delta P_2`, `P_1`
/// deterministic.
pub fn delta_p(tables: &MdpTables) -> f64 {
    tables
        .transitions
        .iter()
        .map(|row| 1.0 - row.iter().map(|e| e.1).fold(0.0, f64::max))
        .fold(0.0, f64::max)
}

/// Largest reward variance over all pairs.
pub fn delta_r(tables: &MdpTables) -> f64 {
    (0..tables.states)
        .flat_map(|s| (0..tables.actions).map(move |a| (s, a)))
        .map(|(s, a)| tables.reward_variance(s, a))
        .fold(0.0, f64::max)
}

/// `max |E R(s, a)|`.
pub fn reward_mean_bound(tables: &MdpTables) -> f64 {
    (0..tables.states)
        .flat_map(|s| (0..tables.actions).map(move |a| (s, a)))
        .map(|(s, a)| tables.reward_mean(s, a).abs())
        .fold(0.0, f64::max)
}

/// Right-hand sides of the error bounds for a subset in singleton cells.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ErrorBounds {
    pub mse: f64,
    pub l: f64,
    pub l_tilde: f64,
}

/// Evaluate the three bounds from `h`, `delta_I`, `delta_P`, `delta_R`,
/// `delta_pi`, `R_m` and `gamma` (without the slack term).
pub fn error_bounds(
    h: f64,
    delta_i: f64,
    delta_p: f64,
    delta_r: f64,
    delta_pi: f64,
    r_m: f64,
    gamma: f64,
) -> ErrorBounds {
    let g = 1.0 - gamma;
    let scale = r_m * r_m / (g * g);
    let mse = (2.0 * (1.0 - h)
        + delta_i
        + delta_i * delta_i * gamma * gamma / g
        + delta_i * delta_i * gamma.powi(4) / (g * g))
        * 2.0
        * scale;
    let l = 4.0 * (1.0 - h) * scale;
    let lambda = (1.0 - delta_p) * (1.0 - delta_pi);
    let l_tilde = (4.0 * (1.0 - h) + gamma * gamma * (1.0 + 2.0 * lambda - 3.0 * lambda * lambda)) * scale
        + delta_r;
    ErrorBounds { mse, l, l_tilde }
}

/// Everything needed to judge one value estimate.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreReport {
    pub psi: Vec<f64>,
    pub q_true: Vec<f64>,
    pub mse: f64,
    pub l: f64,
    pub l_tilde: f64,
    pub gamma: f64,
}

/// Score `q_hat` with the `psi * pi` weighting.
pub fn score_report(
    tables: &MdpTables,
    pi: &FixedPolicy,
    start: usize,
    gamma: f64,
    q_hat: &[f64],
) -> Result<ScoreReport> {
    let psi = stationary_distribution(tables, pi, start, StationaryMethod::Power { tol: 1e-13 })?;
    let q_true = true_q(tables, pi, gamma, 1e-10)?;
    let w = psi_weights(&psi, &pi.probs, tables.actions);
    Ok(ScoreReport {
        mse: score_mse(q_hat, &q_true, &w),
        l: score_l(tables, pi, gamma, q_hat, &w),
        l_tilde: score_l_tilde(tables, pi, gamma, q_hat, &w),
        psi,
        q_true,
        gamma,
    })
}

/// Sample moments of cycle structure in uniformly random successor maps.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CycleStats {
    pub samples: usize,
    /// Length of the cycle reached from the first state.
    pub mean_c1: f64,
    pub var_c1: f64,
    /// Number of states lying on any cycle.
    pub mean_c: f64,
    /// Number of distinct states visited from the first state.
    pub mean_l1: f64,
}

/// `(L1, C1, C)` for one successor map.
pub fn cycle_profile(next: &[u32]) -> (usize, usize, usize) {
    let n = next.len();
    // 0 = unseen, otherwise 1 + index of the walk that first saw the state
    let mut walk_of = vec![0u32; n];
    let mut pos = vec![0u32; n];
    let mut l1 = 0;
    let mut c1 = 0;
    let mut cyclic = 0;
    for start in 0..n {
        if walk_of[start] != 0 {
            continue;
        }
        let id = start as u32 + 1;
        let mut s = start;
        let mut step = 0u32;
        while walk_of[s] == 0 {
            walk_of[s] = id;
            pos[s] = step;
            step += 1;
            s = next[s] as usize;
        }
        if walk_of[s] == id {
            let len = (step - pos[s]) as usize;
            cyclic += len;
            if start == 0 {
                c1 = len;
            }
        }
        if start == 0 {
            l1 = step as usize;
        }
    }
    (l1, c1, cyclic)
}

pub fn cycle_statistics(states: usize, samples: usize, seed: u64, exec: Execution) -> Result<CycleStats> {
    if states < 2 || samples < 2 {
        return Err(Error::invalid("need at least two states and two samples"));
    }
    if states > u32::MAX as usize {
        return Err(Error::Capacity(format!("{states} states")));
    }
    let profiles = exec.map_indexed(samples, |i| {
        let mut rng = stream(seed, i as u64, Purpose::Monte);
        let next: Vec<u32> = (0..states).map(|_| rng.random_range(0..states as u32)).collect();
        cycle_profile(&next)
    });
    let n = samples as f64;
    let mean = |f: &dyn Fn(&(usize, usize, usize)) -> usize| {
        profiles.iter().map(|p| f(p) as f64).sum::<f64>() / n
    };
    let mean_c1 = mean(&|p| p.1);
    let var_c1 = profiles
        .iter()
        .map(|p| (p.1 as f64 - mean_c1).powi(2))
        .sum::<f64>()
        / (n - 1.0);
    Ok(CycleStats {
        samples,
        mean_c1,
        var_c1,
        mean_c: mean(&|p| p.2),
        mean_l1: mean(&|p| p.0),
    })
}
