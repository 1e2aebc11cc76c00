#![allow(dead_code)]

use pasa::envs::MdpTables;
use pasa::eval::FixedPolicy;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random distribution over up to `support` distinct targets out of `n`.
fn random_row(rng: &mut ChaCha8Rng, n: usize, support: usize) -> Vec<(usize, f64)> {
    let k = rng.random_range(1..=support.min(n));
    let mut targets: Vec<usize> = Vec::with_capacity(k);
    while targets.len() < k {
        let t = rng.random_range(0..n);
        if !targets.contains(&t) {
            targets.push(t);
        }
    }
    let w: Vec<f64> = (0..k).map(|_| rng.random_range(0.05..1.0)).collect();
    let total: f64 = w.iter().sum();
    let mut row: Vec<(usize, f64)> = targets.into_iter().zip(w.iter().map(|x| x / total)).collect();
    let head: f64 = row[..k - 1].iter().map(|e| e.1).sum();
    row[k - 1].1 = 1.0 - head;
    row
}

/// Random sparse MDP with two-point rewards.
pub fn random_tables(rng: &mut ChaCha8Rng, states: usize, actions: usize) -> MdpTables {
    let rows = states * actions;
    let transitions = (0..rows).map(|_| random_row(rng, states, 4)).collect();
    let rewards = (0..rows)
        .map(|_| {
            let p: f64 = rng.random_range(0.0..1.0);
            vec![(rng.random_range(-1.0..1.0), p), (rng.random_range(-1.0..1.0), 1.0 - p)]
        })
        .collect();
    MdpTables::with_reward_dists(states, actions, transitions, rewards).unwrap()
}

/// Random MDP whose every transition is deterministic.
pub fn random_deterministic(rng: &mut ChaCha8Rng, states: usize, actions: usize) -> MdpTables {
    let rows = states * actions;
    let transitions = (0..rows).map(|_| vec![(rng.random_range(0..states), 1.0)]).collect();
    let rewards = (0..rows).map(|_| rng.random_range(0.0..1.0)).collect();
    MdpTables::new(states, actions, transitions, rewards).unwrap()
}

pub fn random_policy(rng: &mut ChaCha8Rng, states: usize, actions: usize) -> FixedPolicy {
    let mut probs = Vec::with_capacity(states * actions);
    for _ in 0..states {
        let w: Vec<f64> = (0..actions).map(|_| rng.random_range(0.01..1.0)).collect();
        let total: f64 = w.iter().sum();
        let mut row: Vec<f64> = w.iter().map(|x| x / total).collect();
        let head: f64 = row[..actions - 1].iter().sum();
        row[actions - 1] = 1.0 - head;
        probs.extend(row);
    }
    FixedPolicy::new(states, actions, probs).unwrap()
}

/// `Q^pi` by Gauss-Jordan elimination on the state-value system, written
/// independently of the library's solvers.
pub fn gauss_q(tables: &MdpTables, pi: &FixedPolicy, gamma: f64) -> Vec<f64> {
    let n = tables.states;
    let a = tables.actions;
    let mean = |i: usize| tables.rewards[i].iter().map(|(r, p)| r * p).sum::<f64>();
    let mut m = vec![vec![0.0; n + 1]; n];
    for s in 0..n {
        m[s][s] = 1.0;
        for act in 0..a {
            let w = pi.prob(s, act);
            let i = s * a + act;
            m[s][n] += w * mean(i);
            for &(t, p) in &tables.transitions[i] {
                m[s][t] -= gamma * w * p;
            }
        }
    }
    for c in 0..n {
        let piv = (c..n).max_by(|&x, &y| m[x][c].abs().total_cmp(&m[y][c].abs())).unwrap();
        m.swap(c, piv);
        let d = m[c][c];
        for v in m[c].iter_mut() {
            *v /= d;
        }
        for r in 0..n {
            if r != c && m[r][c] != 0.0 {
                let f = m[r][c];
                for k in c..=n {
                    m[r][k] -= f * m[c][k];
                }
            }
        }
    }
    let v: Vec<f64> = m.iter().map(|row| row[n]).collect();
    (0..n * a)
        .map(|i| mean(i) + gamma * tables.transitions[i].iter().map(|&(t, p)| p * v[t]).sum::<f64>())
        .collect()
}

pub fn sup_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |m, (x, y)| f64::max(m, (x - y).abs()))
}
