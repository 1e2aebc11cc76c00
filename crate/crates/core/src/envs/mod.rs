//! Benchmark environments.
//!
//! States and actions are 0-based here. Each family is sampled from a
//! seeded prior; after sampling an environment is immutable and `step`
//! only consumes randomness for genuinely stochastic transitions.

mod garnet;
mod gridworld;
mod logistics;

pub use garnet::{Garnet, GarnetSpec};
pub use gridworld::{Gridworld, GridworldSpec, DOWN, LEFT, RIGHT, UP};
pub use logistics::{Logistics, LogisticsSpec, LogisticsState};

use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::SimRng;

/// A continuing-task environment.
pub trait Environment {
    fn num_states(&self) -> usize;
    fn num_actions(&self) -> usize;
    fn initial_state(&self) -> usize;

    /// Sample `(s', r)`. Indices are not checked.
    fn step(&self, state: usize, action: usize, rng: &mut SimRng) -> (usize, f64);

    /// [`step`](Self::step) with range checks.
    fn try_step(&self, state: usize, action: usize, rng: &mut SimRng) -> Result<(usize, f64)> {
        if state >= self.num_states() || action >= self.num_actions() {
            return Err(Error::invalid(format!(
                "(state {state}, action {action}) outside {}x{}",
                self.num_states(),
                self.num_actions()
            )));
        }
        Ok(self.step(state, action, rng))
    }

    /// Dense transition and reward tables, when the family has them.
    fn tables(&self) -> Option<MdpTables> {
        None
    }
}

/// Finite reward distribution as `(value, probability)` pairs.
pub type RewardDist = Vec<(f64, f64)>;

/// Explicit transition and reward tables. Row `s * actions + a` holds the
/// sparse successor distribution and the reward distribution of `(s, a)`.
#[derive(Clone, Debug, PartialEq)]
pub struct MdpTables {
    pub states: usize,
    pub actions: usize,
    pub transitions: Vec<Vec<(usize, f64)>>,
    pub rewards: Vec<RewardDist>,
}

impl MdpTables {
    /// Tables with deterministic rewards.
    pub fn new(
        states: usize,
        actions: usize,
        transitions: Vec<Vec<(usize, f64)>>,
        reward_means: Vec<f64>,
    ) -> Result<Self> {
        let rewards = reward_means.into_iter().map(|r| vec![(r, 1.0)]).collect();
        Self::with_reward_dists(states, actions, transitions, rewards)
    }

    pub fn with_reward_dists(
        states: usize,
        actions: usize,
        transitions: Vec<Vec<(usize, f64)>>,
        rewards: Vec<RewardDist>,
    ) -> Result<Self> {
        let t = Self {
            states,
            actions,
            transitions,
            rewards,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        let rows = self.states * self.actions;
        if self.states == 0 || self.actions == 0 {
            return Err(Error::invalid("tables need at least one state and action"));
        }
        if self.transitions.len() != rows || self.rewards.len() != rows {
            return Err(Error::invalid(format!("expected {rows} rows")));
        }
        for (i, row) in self.transitions.iter().enumerate() {
            if row.iter().any(|&(s, p)| s >= self.states || !(p >= 0.0)) {
                return Err(Error::invalid(format!("row {i} has a bad entry")));
            }
            let sum: f64 = row.iter().map(|e| e.1).sum();
            if (sum - 1.0).abs() > 1e-12 {
                return Err(Error::invalid(format!("row {i} sums to {sum}")));
            }
        }
        for (i, dist) in self.rewards.iter().enumerate() {
            let sum: f64 = dist.iter().map(|e| e.1).sum();
            if (sum - 1.0).abs() > 1e-12 || dist.iter().any(|e| !(e.1 >= 0.0)) {
                return Err(Error::invalid(format!("reward distribution {i} is not normalised")));
            }
        }
        Ok(())
    }

    #[inline]
    pub fn row(&self, state: usize, action: usize) -> &[(usize, f64)] {
        &self.transitions[state * self.actions + action]
    }

    pub fn reward_mean(&self, state: usize, action: usize) -> f64 {
        self.rewards[state * self.actions + action]
            .iter()
            .map(|(r, p)| r * p)
            .sum()
    }

    pub fn reward_variance(&self, state: usize, action: usize) -> f64 {
        let mean = self.reward_mean(state, action);
        self.rewards[state * self.actions + action]
            .iter()
            .map(|(r, p)| p * (r - mean) * (r - mean))
            .sum()
    }

    /// Largest absolute reward value with positive probability.
    pub fn reward_bound(&self) -> f64 {
        self.rewards
            .iter()
            .flatten()
            .filter(|e| e.1 > 0.0)
            .map(|e| e.0.abs())
            .fold(0.0, f64::max)
    }
}

/// An environment stepping straight from [`MdpTables`].
#[derive(Clone, Debug)]
pub struct TableMdp {
    tables: MdpTables,
    initial: usize,
}

impl TableMdp {
    pub fn new(tables: MdpTables, initial: usize) -> Result<Self> {
        tables.validate()?;
        if initial >= tables.states {
            return Err(Error::invalid("initial state out of range"));
        }
        Ok(TableMdp { tables, initial })
    }

    pub fn tables_ref(&self) -> &MdpTables {
        &self.tables
    }
}

fn sample_discrete<T: Copy>(entries: &[(T, f64)], rng: &mut SimRng) -> T {
    if entries.len() == 1 {
        return entries[0].0;
    }
    let mut x: f64 = rng.random();
    for &(v, p) in entries {
        if x < p {
            return v;
        }
        x -= p;
    }
    entries.last().expect("non-empty row").0
}

impl Environment for TableMdp {
    fn num_states(&self) -> usize {
        self.tables.states
    }

    fn num_actions(&self) -> usize {
        self.tables.actions
    }

    fn initial_state(&self) -> usize {
        self.initial
    }

    fn step(&self, state: usize, action: usize, rng: &mut SimRng) -> (usize, f64) {
        let i = state * self.tables.actions + action;
        let next = sample_discrete(&self.tables.transitions[i], rng);
        let reward = sample_discrete(&self.tables.rewards[i], rng);
        (next, reward)
    }

    fn tables(&self) -> Option<MdpTables> {
        Some(self.tables.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Purpose};

    #[test]
    fn table_rows_must_be_stochastic() {
        let bad = MdpTables::new(1, 1, vec![vec![(0, 0.9)]], vec![0.0]);
        assert!(bad.is_err());
        let ok = MdpTables::new(1, 1, vec![vec![(0, 1.0)]], vec![1.0]).unwrap();
        assert_eq!(ok.reward_bound(), 1.0);
    }

    #[test]
    fn table_step_checks_range() {
        let t = MdpTables::new(2, 1, vec![vec![(1, 1.0)], vec![(0, 1.0)]], vec![1.0, 0.0]).unwrap();
        let env = TableMdp::new(t, 0).unwrap();
        let mut rng = stream(1, 0, Purpose::EnvStep);
        assert_eq!(env.try_step(0, 0, &mut rng).unwrap(), (1, 1.0));
        assert!(env.try_step(2, 0, &mut rng).is_err());
        assert!(env.try_step(0, 1, &mut rng).is_err());
    }
}
