//! Square grid with reward positions that teleport the agent.
//!
//! Cell `(row, col)` (0-based) is state `row * side + col`.

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Environment, MdpTables};
use crate::error::{Error, Result};
use crate::rng::SimRng;

pub const UP: usize = 0;
pub const DOWN: usize = 1;
pub const LEFT: usize = 2;
pub const RIGHT: usize = 3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridworldSpec {
    pub side: usize,
    pub reward_positions: usize,
    /// Send the agent to a uniformly random cell instead of the paired start.
    #[serde(default)]
    pub random_teleport: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Gridworld {
    side: usize,
    random_teleport: bool,
    /// For each cell, index into `starts` if it is a reward position.
    reward_slot: Vec<u32>,
    rewards: Vec<usize>,
    starts: Vec<usize>,
    initial: usize,
}

const NONE: u32 = u32::MAX;

impl Gridworld {
    /// Place `2r` distinct positions uniformly: the first `r` are reward
    /// positions, the rest their start positions. The agent starts on a
    /// uniform cell that is not a reward position.
    pub fn sample(spec: &GridworldSpec, rng: &mut SimRng) -> Result<Self> {
        let cells = spec.side * spec.side;
        if spec.side == 0 {
            return Err(Error::invalid("grid side must be positive"));
        }
        if spec.reward_positions == 0 || 2 * spec.reward_positions > cells {
            return Err(Error::invalid(format!(
                "cannot place {} reward and start positions on {cells} cells",
                spec.reward_positions
            )));
        }
        let r = spec.reward_positions;
        let picked = sample(rng, cells, 2 * r).into_vec();
        let rewards = picked[..r].to_vec();
        let starts = picked[r..].to_vec();
        let mut reward_slot = vec![NONE; cells];
        for (i, &p) in rewards.iter().enumerate() {
            reward_slot[p] = i as u32;
        }
        let initial = loop {
            let s = rng.random_range(0..cells);
            if reward_slot[s] == NONE {
                break s;
            }
        };
        Ok(Gridworld {
            side: spec.side,
            random_teleport: spec.random_teleport,
            reward_slot,
            rewards,
            starts,
            initial,
        })
    }

    /// Build a grid with the given reward/start pairs (for tests and
    /// hand-made instances).
    pub fn from_positions(
        side: usize,
        pairs: &[(usize, usize)],
        random_teleport: bool,
        initial: usize,
    ) -> Result<Self> {
        let cells = side * side;
        let mut seen = vec![false; cells];
        for &(r, s) in pairs {
            for p in [r, s] {
                if p >= cells || seen[p] {
                    return Err(Error::invalid(format!("position {p} repeated or off grid")));
                }
                seen[p] = true;
            }
        }
        let mut reward_slot = vec![NONE; cells];
        for (i, &(r, _)) in pairs.iter().enumerate() {
            reward_slot[r] = i as u32;
        }
        if initial >= cells || reward_slot[initial] != NONE {
            return Err(Error::invalid("initial state must be a non-reward cell"));
        }
        Ok(Gridworld {
            side,
            random_teleport,
            reward_slot,
            rewards: pairs.iter().map(|p| p.0).collect(),
            starts: pairs.iter().map(|p| p.1).collect(),
            initial,
        })
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn reward_positions(&self) -> &[usize] {
        &self.rewards
    }

    pub fn start_positions(&self) -> &[usize] {
        &self.starts
    }

    /// Cell reached by moving, or `None` when the move leaves the grid.
    #[inline]
    fn target(&self, state: usize, action: usize) -> Option<usize> {
        let (row, col) = (state / self.side, state % self.side);
        match action {
            UP if row > 0 => Some(state - self.side),
            DOWN if row + 1 < self.side => Some(state + self.side),
            LEFT if col > 0 => Some(state - 1),
            RIGHT if col + 1 < self.side => Some(state + 1),
            _ => None,
        }
    }
}

impl Environment for Gridworld {
    fn num_states(&self) -> usize {
        self.side * self.side
    }

    fn num_actions(&self) -> usize {
        4
    }

    fn initial_state(&self) -> usize {
        self.initial
    }

    #[inline]
    fn step(&self, state: usize, action: usize, rng: &mut SimRng) -> (usize, f64) {
        let Some(target) = self.target(state, action) else {
            return (state, 0.0);
        };
        match self.reward_slot[target] {
            NONE => (target, 0.0),
            _ if self.random_teleport => (rng.random_range(0..self.num_states()), 1.0),
            slot => (self.starts[slot as usize], 1.0),
        }
    }

    fn tables(&self) -> Option<MdpTables> {
        let cells = self.num_states();
        let uniform = 1.0 / cells as f64;
        let mut transitions = Vec::with_capacity(cells * 4);
        let mut rewards = Vec::with_capacity(cells * 4);
        for s in 0..cells {
            for a in 0..4 {
                let (row, reward) = match self.target(s, a) {
                    None => (vec![(s, 1.0)], 0.0),
                    Some(t) => match self.reward_slot[t] {
                        NONE => (vec![(t, 1.0)], 0.0),
                        _ if self.random_teleport => {
                            ((0..cells).map(|c| (c, uniform)).collect(), 1.0)
                        }
                        slot => (vec![(self.starts[slot as usize], 1.0)], 1.0),
                    },
                };
                transitions.push(row);
                rewards.push(reward);
            }
        }
        MdpTables::new(cells, 4, transitions, rewards).ok()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Purpose};

    #[test]
    fn boundary_bump_stays_put() {
        let g = Gridworld::from_positions(3, &[(8, 0)], false, 1).unwrap();
        let mut rng = stream(0, 0, Purpose::EnvStep);
        assert_eq!(g.step(1, UP, &mut rng), (1, 0.0));
        assert_eq!(g.step(3, LEFT, &mut rng), (3, 0.0));
        assert_eq!(g.step(4, RIGHT, &mut rng), (5, 0.0));
    }

    #[test]
    fn entering_reward_teleports_to_start() {
        let g = Gridworld::from_positions(3, &[(4, 0)], false, 1).unwrap();
        let mut rng = stream(0, 0, Purpose::EnvStep);
        for (from, action) in [(1, DOWN), (7, UP), (3, RIGHT), (5, LEFT)] {
            assert_eq!(g.step(from, action, &mut rng), (0, 1.0));
        }
    }

    #[test]
    fn sampled_positions_are_distinct() {
        let spec = GridworldSpec {
            side: 8,
            reward_positions: 24,
            random_teleport: false,
        };
        let g = Gridworld::sample(&spec, &mut stream(2, 0, Purpose::EnvSample)).unwrap();
        let mut all: Vec<usize> = g.reward_positions().iter().chain(g.start_positions()).copied().collect();
        all.sort_unstable();
        all.dedup();
        assert_eq!(all.len(), 48);
        assert!(!g.reward_positions().contains(&g.initial_state()));
        let too_many = GridworldSpec {
            reward_positions: 33,
            ..spec
        };
        assert!(Gridworld::sample(&too_many, &mut stream(2, 0, Purpose::EnvSample)).is_err());
    }
}
