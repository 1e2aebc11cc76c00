//! Random MDPs with uniformly drawn successors and sparse rewards.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Environment, MdpTables};
use crate::error::{Error, Result};
use crate::rng::SimRng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GarnetSpec {
    pub states: usize,
    #[serde(default = "default_actions")]
    pub actions: usize,
    /// Expected number of rewarding actions per action index.
    pub zeta: f64,
    /// Probability of replacing the drawn successor with a uniform state.
    #[serde(default)]
    pub delta: f64,
}

fn default_actions() -> usize {
    2
}

impl GarnetSpec {
    pub fn validate(&self) -> Result<()> {
        if self.states == 0 || self.actions == 0 {
            return Err(Error::invalid("GARNET needs at least one state and one action"));
        }
        if self.states > u32::MAX as usize {
            return Err(Error::Capacity(format!("{} states", self.states)));
        }
        if !(self.zeta > 0.0 && self.zeta <= self.states as f64) {
            return Err(Error::invalid(format!("zeta {} outside (0, S]", self.zeta)));
        }
        if !(0.0..=1.0).contains(&self.delta) {
            return Err(Error::invalid(format!("delta {} outside [0,1]", self.delta)));
        }
        Ok(())
    }
}

/// A sampled GARNET instance.
#[derive(Clone, Debug, PartialEq)]
pub struct Garnet {
    states: usize,
    actions: usize,
    delta: f64,
    initial: usize,
    next: Vec<u32>,
    reward: Vec<f64>,
}

const HEADER: &str = "# pasa-garnet v1";

impl Garnet {
    /// Draw an instance: every `(s, a)` gets a uniform successor and reward
    /// `S` with probability `zeta / S`; the initial state is uniform.
    pub fn sample(spec: &GarnetSpec, rng: &mut SimRng) -> Result<Self> {
        spec.validate()?;
        let n = spec.states * spec.actions;
        let p_reward = spec.zeta / spec.states as f64;
        let mut next = Vec::with_capacity(n);
        let mut reward = Vec::with_capacity(n);
        for _ in 0..n {
            next.push(rng.random_range(0..spec.states) as u32);
            reward.push(if rng.random::<f64>() < p_reward {
                spec.states as f64
            } else {
                0.0
            });
        }
        let initial = rng.random_range(0..spec.states);
        Ok(Garnet {
            states: spec.states,
            actions: spec.actions,
            delta: spec.delta,
            initial,
            next,
            reward,
        })
    }

    /// Deterministic part of the successor of `(s, a)`.
    pub fn successor(&self, state: usize, action: usize) -> usize {
        self.next[state * self.actions + action] as usize
    }

    pub fn reward(&self, state: usize, action: usize) -> f64 {
        self.reward[state * self.actions + action]
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn rewarding_pairs(&self) -> usize {
        self.reward.iter().filter(|&&r| r != 0.0).count()
    }

    /// Text dump: header line, `key value` lines, then one
    /// `state action next reward` line per pair (0-based indices).
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{HEADER}");
        let _ = writeln!(out, "states {}", self.states);
        let _ = writeln!(out, "actions {}", self.actions);
        let _ = writeln!(out, "delta {:?}", self.delta);
        let _ = writeln!(out, "initial {}", self.initial);
        for s in 0..self.states {
            for a in 0..self.actions {
                let _ = writeln!(out, "{s} {a} {} {:?}", self.successor(s, a), self.reward(s, a));
            }
        }
        out
    }

    pub fn from_text(text: &str, origin: &Path) -> Result<Self> {
        let bad = |message: String| Error::Parse {
            path: origin.to_path_buf(),
            message,
        };
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, l)) if l.trim() == HEADER => {}
            _ => return Err(bad(format!("missing `{HEADER}` header"))),
        }
        let mut field = |name: &str| -> Result<String> {
            let (no, line) = lines.next().ok_or_else(|| bad(format!("missing `{name}`")))?;
            match line.split_once(' ') {
                Some((key, value)) if key == name => Ok(value.trim().to_string()),
                _ => Err(bad(format!("line {}: expected `{name} <value>`", no + 1))),
            }
        };
        let num = |v: String, what: &str| -> Result<usize> {
            v.parse().map_err(|_| bad(format!("bad {what} `{v}`")))
        };
        let states = num(field("states")?, "state count")?;
        let actions = num(field("actions")?, "action count")?;
        let delta_text = field("delta")?;
        let delta: f64 = delta_text
            .parse()
            .map_err(|_| bad(format!("bad delta `{delta_text}`")))?;
        let initial = num(field("initial")?, "initial state")?;
        if states == 0 || actions == 0 || initial >= states || !(0.0..=1.0).contains(&delta) {
            return Err(bad("inconsistent header values".into()));
        }
        let n = states * actions;
        let mut next = vec![u32::MAX; n];
        let mut reward = vec![0.0; n];
        for (no, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let parts: Vec<&str> = line.split_whitespace().collect();
            let parsed = (|| {
                let [s, a, t, r] = parts[..] else { return None };
                Some((
                    s.parse::<usize>().ok()?,
                    a.parse::<usize>().ok()?,
                    t.parse::<usize>().ok()?,
                    r.parse::<f64>().ok()?,
                ))
            })();
            let (s, a, t, r) =
                parsed.ok_or_else(|| bad(format!("line {}: malformed entry", no + 1)))?;
            if s >= states || a >= actions || t >= states {
                return Err(bad(format!("line {}: index out of range", no + 1)));
            }
            next[s * actions + a] = t as u32;
            reward[s * actions + a] = r;
        }
        if next.contains(&u32::MAX) {
            return Err(bad("some state-action pairs are missing".into()));
        }
        Ok(Garnet {
            states,
            actions,
            delta,
            initial,
            next,
            reward,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(self.to_text().as_bytes())
            .map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text, path)
    }
}

impl Environment for Garnet {
    fn num_states(&self) -> usize {
        self.states
    }

    fn num_actions(&self) -> usize {
        self.actions
    }

    fn initial_state(&self) -> usize {
        self.initial
    }

    #[inline]
    fn step(&self, state: usize, action: usize, rng: &mut SimRng) -> (usize, f64) {
        let i = state * self.actions + action;
        let next = if self.delta > 0.0 && rng.random::<f64>() < self.delta {
            rng.random_range(0..self.states)
        } else {
            self.next[i] as usize
        };
        (next, self.reward[i])
    }

    fn tables(&self) -> Option<MdpTables> {
        let uniform = self.delta / self.states as f64;
        let transitions = (0..self.states * self.actions)
            .map(|i| {
                let target = self.next[i] as usize;
                if self.delta == 0.0 {
                    return vec![(target, 1.0)];
                }
                (0..self.states)
                    .map(|s| {
                        let own = if s == target { 1.0 - self.delta } else { 0.0 };
                        (s, own + uniform)
                    })
                    .collect()
            })
            .collect();
        Some(
            MdpTables::new(self.states, self.actions, transitions, self.reward.clone())
                .expect("sampled tables are stochastic"),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Purpose};

    fn spec(states: usize, zeta: f64, delta: f64) -> GarnetSpec {
        GarnetSpec {
            states,
            actions: 2,
            zeta,
            delta,
        }
    }

    #[test]
    fn deterministic_rows_are_point_masses() {
        let g = Garnet::sample(&spec(50, 5.0, 0.0), &mut stream(3, 0, Purpose::EnvSample)).unwrap();
        let t = g.tables().unwrap();
        assert!(t.transitions.iter().all(|row| row.len() == 1 && row[0].1 == 1.0));
        let mut rng = stream(3, 0, Purpose::EnvStep);
        for s in 0..50 {
            for a in 0..2 {
                assert_eq!(g.step(s, a, &mut rng).0, g.successor(s, a));
            }
        }
    }

    #[test]
    fn noisy_rows_sum_to_one() {
        let g = Garnet::sample(&spec(20, 2.0, 0.3), &mut stream(4, 0, Purpose::EnvSample)).unwrap();
        let t = g.tables().unwrap();
        t.validate().unwrap();
        let row = t.row(0, 0);
        let own = row[g.successor(0, 0)].1;
        assert!((own - (0.7 + 0.3 / 20.0)).abs() < 1e-15);
    }

    #[test]
    fn same_seed_same_instance() {
        let a = Garnet::sample(&spec(100, 3.0, 0.0), &mut stream(9, 2, Purpose::EnvSample)).unwrap();
        let b = Garnet::sample(&spec(100, 3.0, 0.0), &mut stream(9, 2, Purpose::EnvSample)).unwrap();
        let c = Garnet::sample(&spec(100, 3.0, 0.0), &mut stream(9, 3, Purpose::EnvSample)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn text_round_trip() {
        let g = Garnet::sample(&spec(30, 4.0, 0.125), &mut stream(5, 0, Purpose::EnvSample)).unwrap();
        let back = Garnet::from_text(&g.to_text(), Path::new("mem")).unwrap();
        assert_eq!(g, back);
        assert!(Garnet::from_text("states 3\n", Path::new("mem")).is_err());
        let truncated: String = g.to_text().lines().take(8).map(|l| format!("{l}\n")).collect();
        assert!(matches!(
            Garnet::from_text(&truncated, Path::new("mem")),
            Err(Error::Parse { .. })
        ));
    }

    #[test]
    fn rejects_bad_spec() {
        let mut rng = stream(1, 0, Purpose::EnvSample);
        assert!(Garnet::sample(&spec(10, 0.0, 0.0), &mut rng).is_err());
        assert!(Garnet::sample(&spec(10, 1.0, 1.5), &mut rng).is_err());
    }
}
