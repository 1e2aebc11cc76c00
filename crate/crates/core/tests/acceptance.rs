//! Exit gate: every criterion at its stated tolerance, one PASS/FAIL line
//! each. Pass criterion ids (`c1`, `c5`, ...) as arguments to run a subset.
//! Failures are reported but only turn into a non-zero exit status when
//! `ACCEPTANCE_STRICT=1`, so the ordinary test run stays usable on noisy
//! machines.

mod common;

use std::path::Path;
use std::process::Command;
use std::time::Instant;

use common::{random_deterministic, random_policy, random_tables, rng};
use pasa::envs::{Environment, MdpTables, TableMdp};
use pasa::eval::{
    delta_p, delta_r, error_bounds, reward_mean_bound, score_report, stationary_distribution, subset_metrics,
    true_q, true_q_direct, cycle_statistics, FixedPolicy, StationaryMethod,
};
use pasa::exec::Execution;
use pasa::harness::stats::t_interval;
use pasa::harness::{execute, load_config, AgentKind, Experiment, ExperimentConfig, Report};
use pasa::partition::OrderedPartition;
use pasa::pasa::{CounterMode, Pasa, PasaParams, ThresholdMode};
use pasa::rng::{stream, Purpose};
use pasa::sarsa::{run, Agent, Architecture, Behavior, PiWeighting, RunOptions, RunRngs, SarsaParams};
use rand::Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn config(experiment: Experiment, toml: &str) -> ExperimentConfig {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.toml");
    std::fs::write(&path, toml).unwrap();
    load_config(experiment, Some(&path)).unwrap()
}

fn c1_oracle_equivalence() -> Outcome {
    let start = Instant::now();
    let mut r = rng(101);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let s = r.random_range(1..=100);
        let a = r.random_range(1..=4);
        let gamma = r.random_range(0.0..0.95);
        let t = random_tables(&mut r, s, a);
        let pi = random_policy(&mut r, s, a);
        let q_it = true_q(&t, &pi, gamma, 1e-12).unwrap();
        let q_lu = true_q_direct(&t, &pi, gamma).unwrap();
        worst = q_it.iter().zip(&q_lu).fold(worst, |m, (x, y)| m.max((x - y).abs()));
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        worst <= 1e-8 && secs < 10.0,
        format!("50 MDPs, max sup-norm gap {worst:.2e} (<= 1e-8), {secs:.2}s (< 10s)"),
    )
}

fn c2_partition_correctness() -> Outcome {
    let start = Instant::now();
    let mut r = rng(102);
    let mut failures = 0;
    for _ in 0..1000 {
        let s = r.random_range(2..1500usize);
        let x0 = r.random_range(1..=s.min(40));
        let mut p = OrderedPartition::base(s, x0).unwrap();
        let mut model: Vec<(usize, usize)> = p.cells().iter().map(|c| (c.lo(), c.hi())).collect();
        let mut ok = true;
        for _ in 0..r.random_range(0..60) {
            let open: Vec<usize> = (0..model.len()).filter(|&j| model[j].0 < model[j].1).collect();
            if open.is_empty() {
                break;
            }
            let target = open[r.random_range(0..open.len())];
            let (lo, hi) = model[target];
            let mid = lo + (hi - lo - 1) / 2;
            model[target] = (lo, mid);
            model.push((mid + 1, hi));
            ok &= p.split_cell(target + 1).unwrap() == model.len();
        }
        let got: Vec<(usize, usize)> = p.cells().iter().map(|c| (c.lo(), c.hi())).collect();
        ok &= got == model;
        let mut sorted = got.clone();
        sorted.sort_unstable();
        ok &= sorted[0].0 == 1 && sorted.last().unwrap().1 == s;
        ok &= sorted.windows(2).all(|w| w[0].1 + 1 == w[1].0);
        for state in 1..=s {
            let tree = p.cell_of(state).unwrap();
            ok &= tree == p.cell_of_scan(state).unwrap() && tree == p.lookup(state - 1) + 1;
            let (lo, hi) = model[tree - 1];
            ok &= lo <= state && state <= hi;
        }
        if !ok {
            failures += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        failures == 0 && secs < 5.0,
        format!("1000 instances, {failures} failures, {secs:.2}s (< 5s)"),
    )
}

/// Mass of every current cell under `psi` (1-based states in cells).
fn cell_mass(p: &OrderedPartition, psi: &[f64], cell: usize) -> f64 {
    let c = p.cells()[cell];
    psi[c.lo() - 1..c.hi()].iter().sum()
}

/// Replays `rho` from the base and checks that each split hits a
/// non-singleton candidate of maximal exact mass.
fn splits_are_maximal(base: &OrderedPartition, rho: &[usize], psi: &[f64]) -> bool {
    let mut p = base.clone();
    for &target in rho {
        let limit = p.len();
        let best = (0..limit)
            .filter(|&i| !p.cells()[i].is_singleton())
            .map(|i| cell_mass(&p, psi, i))
            .fold(f64::NEG_INFINITY, f64::max);
        let t = target - 1;
        if p.cells()[t].is_singleton() || cell_mass(&p, psi, t) < best - 1e-12 {
            return false;
        }
        p.split_cell(target).unwrap();
    }
    true
}

fn c3_pasa_convergence() -> Outcome {
    let start = Instant::now();
    let (s, x0, x) = (64, 4, 16);
    let params = PasaParams {
        varsigma: 1e-3,
        vartheta: 0.01,
        threshold: ThresholdMode::Additive,
        nu: 200,
        counter: CounterMode::PerStep,
        ..PasaParams::default()
    };
    let mut fixed_runs = 0;
    let mut maximal_runs = 0;
    for run_id in 0..20u64 {
        let mut r = rng(300 + run_id);
        let t = random_deterministic(&mut r, s, 2);
        let choices: Vec<usize> = (0..s).map(|_| r.random_range(0..2)).collect();
        let pi = FixedPolicy::deterministic(&choices, 2).unwrap();
        let start_state = r.random_range(0..s);
        let psi = stationary_distribution(&t, &pi, start_state, StationaryMethod::Power { tol: 1e-14 }).unwrap();

        let base = OrderedPartition::base(s, x0).unwrap();
        let mut pasa = Pasa::new(base.clone(), x, params.clone()).unwrap();
        let mut state = start_state;
        let mut history = Vec::new();
        for _ in 0..400_000 {
            if let Some(report) = pasa.tick(state + 1).unwrap() {
                history.push(report.new_rho);
            }
            state = t.row(state, choices[state])[0].0;
        }
        let tail = &history[history.len() - 11..];
        if tail.iter().all(|rho| *rho == tail[0]) {
            fixed_runs += 1;
        }
        if splits_are_maximal(&base, pasa.partition().rho(), &psi) {
            maximal_runs += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        fixed_runs >= 19 && maximal_runs == 20 && secs < 60.0,
        format!(
            "rho fixed over final 10 repartitions in {fixed_runs}/20 (>= 19), \
             every split maximal in {maximal_runs}/20, {secs:.1}s (< 60s)"
        ),
    )
}

/// Chain where `top` holds more than half the stable mass: every state
/// jumps to `top` with probability `p`, `top` stays with probability `q`,
/// otherwise moves are uniform.
fn dominant_chain(states: usize, top: usize, p: f64, q: f64) -> MdpTables {
    let uniform = |w: f64| (0..states).map(move |u| (u, w / states as f64));
    let transitions = (0..states)
        .map(|s| {
            let stay = if s == top { q } else { p };
            let mut row: Vec<(usize, f64)> = uniform(1.0 - stay).collect();
            row[top].1 += stay;
            row
        })
        .collect();
    MdpTables::new(states, 1, transitions, vec![0.0; states]).unwrap()
}

fn c4_singleton_guarantee() -> Outcome {
    let start = Instant::now();
    let mut singletons = 0;
    let mut hypotheses = 0;
    for run_id in 0..20u64 {
        let mut r = rng(400 + run_id);
        let s = r.random_range(100..=2000usize);
        let x0 = r.random_range(1..=8usize);
        let log2 = (usize::BITS - (s - 1).leading_zeros()) as usize;
        let x = x0 + log2;
        let top = r.random_range(0..s);
        let t = dominant_chain(s, top, r.random_range(0.65..0.9), r.random_range(0.45..0.8));
        let pi = FixedPolicy::deterministic(&vec![0; s], 1).unwrap();
        let psi = stationary_distribution(&t, &pi, 0, StationaryMethod::Power { tol: 1e-13 }).unwrap();
        let rest: f64 = psi.iter().enumerate().filter(|&(u, _)| u != top).map(|(_, v)| v).sum();
        if psi[top] > rest {
            hypotheses += 1;
        }

        let params = PasaParams {
            varsigma: 1e-4,
            nu: 1000,
            ..PasaParams::default()
        };
        let mut pasa = Pasa::new(OrderedPartition::base(s, x0).unwrap(), x, params).unwrap();
        let env = TableMdp::new(t, 0).unwrap();
        let mut env_rng = stream(400, run_id, Purpose::EnvStep);
        let mut state = 0;
        for _ in 0..300_000 {
            pasa.tick(state + 1).unwrap();
            state = env.step(state, 0, &mut env_rng).0;
        }
        let p = pasa.partition();
        if p.cells()[p.lookup(top)].is_singleton() {
            singletons += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        hypotheses == 20 && singletons == 20 && secs < 30.0,
        format!(
            "top state in a singleton in {singletons}/20 (hypotheses held in {hypotheses}/20), \
             {secs:.1}s (< 30s)"
        ),
    )
}

fn sqrt_mse_values(report: &Report, kind: AgentKind) -> Vec<f64> {
    report
        .trials
        .iter()
        .filter(|t| t.agent == kind)
        .map(|t| t.sqrt_mse.unwrap())
        .collect()
}

fn c5_mse_reduction() -> Outcome {
    let start = Instant::now();
    let mut cfg = load_config(Experiment::GarnetMse, None).unwrap();
    cfg.trials = 20;
    cfg.iterations = 20_000_000;
    let report = execute(Experiment::GarnetMse, &cfg).unwrap();
    let (f_mean, f_half) = t_interval(&sqrt_mse_values(&report, AgentKind::Fixed), 0.90);
    let (p_mean, p_half) = t_interval(&sqrt_mse_values(&report, AgentKind::Pasa), 0.90);
    let reduction = 1.0 - p_mean / f_mean;
    let separated = p_mean + p_half < f_mean - f_half;
    outcome(
        reduction >= 0.20 && separated,
        format!(
            "sqrt MSE pasa {p_mean:.1} +/- {p_half:.1}, fixed {f_mean:.1} +/- {f_half:.1} (90% CI), \
             reduction {:.1}% (>= 20%), intervals {}, {:.0}s",
            100.0 * reduction,
            if separated { "disjoint" } else { "overlap" },
            start.elapsed().as_secs_f64()
        ),
    )
}

fn c6_performance_ordering() -> Outcome {
    let start = Instant::now();
    let mut pass = true;
    let mut parts = Vec::new();
    for (states, x) in [(2000, 200), (4000, 280)] {
        let cfg = config(
            Experiment::GarnetPerf,
            &format!("trials = 10\niterations = 20_000_000\n[env]\nstates = {states}\n[cells]\nx = {x}\n"),
        );
        let report = execute(Experiment::GarnetPerf, &cfg).unwrap();
        let f = report.summary(AgentKind::Fixed).unwrap().final_reward;
        let p = report.summary(AgentKind::Pasa).unwrap().final_reward;
        pass &= p > f;
        parts.push(format!("S={states}: pasa {p:.1} vs fixed {f:.1} ({:+.1}%)", 100.0 * (p / f - 1.0)));
    }
    outcome(pass, format!("{}, {:.0}s", parts.join("; "), start.elapsed().as_secs_f64()))
}

fn c7_cycle_statistics() -> Outcome {
    let start = Instant::now();
    let s = 10_000;
    let stats = cycle_statistics(s, 10_000, 7, Execution::default()).unwrap();
    let mean_ref = (std::f64::consts::PI * s as f64 / 8.0).sqrt();
    let var_ref = (32.0 - 8.0 * std::f64::consts::PI) / 24.0;
    let mean_err = (stats.mean_c1 / mean_ref - 1.0).abs();
    let var_err = (stats.var_c1 / s as f64 / var_ref - 1.0).abs();
    let secs = start.elapsed().as_secs_f64();
    outcome(
        mean_err <= 0.05 && var_err <= 0.15 && secs < 60.0,
        format!(
            "E(C1) {:.2} vs {mean_ref:.2} ({:.1}% <= 5%), Var(C1)/S {:.4} vs {var_ref:.4} ({:.1}% <= 15%), {secs:.1}s",
            stats.mean_c1,
            100.0 * mean_err,
            stats.var_c1 / s as f64,
            100.0 * var_err
        ),
    )
}

fn c8_overhead() -> Outcome {
    let cfg = config(Experiment::Timing, "iterations = 5_000_000\n[timing]\nrepeats = 9\n");
    let report = execute(Experiment::Timing, &cfg).unwrap();
    let overhead = report.overhead().unwrap();
    let micros = |k: AgentKind| {
        report
            .timing
            .iter()
            .find(|t| t.agent == k)
            .and_then(|t| t.micros_per_iter)
            .unwrap()
    };
    outcome(
        overhead <= 0.15,
        format!(
            "S=8000 X=380: pasa {:.4} us/iter, fixed {:.4} us/iter, overhead {:.1}% (<= 15%)",
            micros(AgentKind::Pasa),
            micros(AgentKind::Fixed),
            100.0 * overhead
        ),
    )
}

/// Two states passing the agent back and forth, leaving with small
/// probability; everything else heads back to them.
fn leaky_pair_instance(r: &mut rand_chacha::ChaCha8Rng, states: usize) -> (MdpTables, [usize; 2]) {
    let a = r.random_range(0..states);
    let b = (a + r.random_range(1..states)) % states;
    let mut transitions = Vec::new();
    for s in 0..states {
        for _ in 0..2 {
            let leak = if s == a || s == b {
                r.random_range(0.01..0.08)
            } else {
                r.random_range(0.05..0.3)
            };
            let mut row: Vec<(usize, f64)> = (0..states).map(|u| (u, leak / states as f64)).collect();
            if s == a {
                row[b].1 += 1.0 - leak;
            } else if s == b {
                row[a].1 += 1.0 - leak;
            } else {
                let split = r.random_range(0.3..0.7);
                row[a].1 += (1.0 - leak) * split;
                row[b].1 += (1.0 - leak) * (1.0 - split);
            }
            transitions.push(row);
        }
    }
    let rewards = (0..2 * states).map(|_| r.random_range(-1.0..1.0)).collect();
    (MdpTables::new(states, 2, transitions, rewards).unwrap(), [a, b])
}

fn c9_bound_audit() -> Outcome {
    let start = Instant::now();
    let (s, gamma) = (16, 0.9);
    let mut within = 0;
    let mut hypotheses = 0;
    let mut worst_ratio: f64 = 0.0;
    for inst in 0..10u64 {
        let mut r = rng(900 + inst);
        let (t, subset) = leaky_pair_instance(&mut r, s);
        let pi = random_policy(&mut r, s, 2);
        let psi = stationary_distribution(&t, &pi, 0, StationaryMethod::Power { tol: 1e-13 }).unwrap();
        let (h, delta_i) = subset_metrics(&t, &pi, &psi, &subset);
        let x0 = 2;
        let x = x0 + subset.len() * 4;
        if x >= subset.len() * 4 && subset.iter().all(|&u| psi[u] > 1.0 - h) {
            hypotheses += 1;
        }

        let pasa = Pasa::new(
            OrderedPartition::base(s, x0).unwrap(),
            x,
            PasaParams {
                varsigma: 1e-4,
                nu: 1000,
                ..PasaParams::default()
            },
        )
        .unwrap();
        let params = SarsaParams {
            eta: 0.005,
            gamma,
            epsilon: 0.0,
            reciprocal_pi_weighting: PiWeighting::Off,
            weight_transfer: true,
        };
        let mut agent = Agent::new(Architecture::Adaptive(Box::new(pasa)), 2, params).unwrap();
        let env = TableMdp::new(t.clone(), 0).unwrap();
        let (mut e, mut p) = (stream(900, inst, Purpose::EnvStep), stream(900, inst, Purpose::Explore));
        let opts = RunOptions {
            iterations: 2_000_000,
            window: 100_000,
            checkpoint_every: 0,
        };
        let rngs = RunRngs { env: &mut e, policy: &mut p };
        run(&env, &mut agent, Behavior::Fixed(&pi), opts, rngs, &mut |_, _| {}).unwrap();
        let q_hat: Vec<f64> = (0..s).flat_map(|st| [agent.q(st, 0), agent.q(st, 1)]).collect();
        let scores = score_report(&t, &pi, 0, gamma, &q_hat).unwrap();
        let bound = error_bounds(
            h,
            delta_i,
            delta_p(&t),
            delta_r(&t),
            pi.delta_pi(),
            reward_mean_bound(&t),
            gamma,
        );
        worst_ratio = worst_ratio.max(scores.mse / bound.mse);
        if scores.mse <= bound.mse {
            within += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        within == 10 && hypotheses == 10,
        format!(
            "MSE within bound in {within}/10 (hypotheses held in {hypotheses}/10), \
             largest MSE/bound {worst_ratio:.2e}, {secs:.1}s"
        ),
    )
}

const CLI_CONFIGS: [(&str, &str); 6] = [
    (
        "garnet-perf",
        "trials = 2\niterations = 40_000\n[env]\nstates = 60\n[cells]\nx = 12\n[pasa]\nnu = 2000\nvarsigma = 1e-3\n",
    ),
    (
        "garnet-mse",
        "trials = 2\niterations = 40_000\n[env]\nstates = 40\n[cells]\nx = 10\n[pasa]\nnu = 2000\n\
         varsigma = 1e-3\n[mse]\ncheckpoints = 10\n",
    ),
    (
        "gridworld",
        "trials = 2\niterations = 40_000\n[env]\nside = 8\nreward_positions = 4\n[cells]\nx = 16\nx0 = 8\n\
         [pasa]\nnu = 2000\nvarsigma = 1e-3\n",
    ),
    (
        "logistics",
        "trials = 2\niterations = 40_000\n[cells]\nx = 16\nx0 = 8\n[pasa]\nnu = 2000\nvarsigma = 1e-3\n",
    ),
    ("cycle-stats", "[cycle]\nstates = 1000\nsamples = 200\n"),
    (
        "timing",
        "iterations = 40_000\n[env]\nstates = 200\n[cells]\nx = 20\n[pasa]\nnu = 2000\n[timing]\nrepeats = 2\n",
    ),
];

fn output_files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.file_name().unwrap() != "timings.csv")
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect();
    out.sort();
    out
}

fn c10_determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let mut bad = Vec::new();
    for (cmd, text) in CLI_CONFIGS {
        let cfg = dir.path().join(format!("{cmd}.toml"));
        std::fs::write(&cfg, text).unwrap();
        let mut runs = Vec::new();
        for rep in 0..2 {
            let out = dir.path().join(format!("{cmd}-{rep}"));
            let status = Command::new(env!("CARGO_BIN_EXE_pasa"))
                .args([cmd, "--seed", "17", "--config"])
                .arg(&cfg)
                .arg("--out")
                .arg(&out)
                .output()
                .unwrap();
            if !status.status.success() {
                bad.push(format!("{cmd} exited {:?}", status.status.code()));
            }
            runs.push(output_files(&out));
        }
        if runs[0].is_empty() || runs[0] != runs[1] {
            bad.push(format!("{cmd} differs"));
        }
    }
    let detail = if bad.is_empty() {
        "6/6 subcommands byte-identical across two runs (timings.csv excluded)".to_string()
    } else {
        bad.join("; ")
    };
    outcome(bad.is_empty(), detail)
}

type Criterion = (&'static str, &'static str, fn() -> Outcome);

const CRITERIA: [Criterion; 10] = [
    ("c1", "oracle equivalence", c1_oracle_equivalence),
    ("c2", "partition correctness", c2_partition_correctness),
    ("c3", "PASA convergence", c3_pasa_convergence),
    ("c4", "singleton guarantee", c4_singleton_guarantee),
    ("c5", "MSE reduction", c5_mse_reduction),
    ("c6", "performance ordering", c6_performance_ordering),
    ("c7", "cycle statistics", c7_cycle_statistics),
    ("c8", "overhead", c8_overhead),
    ("c9", "bound audit", c9_bound_audit),
    ("c10", "determinism", c10_determinism),
];

fn main() {
    let wanted: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .map(|a| a.to_lowercase())
        .collect();
    let mut failed = 0;
    let mut ran = 0;
    for (id, name, check) in CRITERIA {
        if !wanted.is_empty() && !wanted.iter().any(|w| w == id) {
            continue;
        }
        ran += 1;
        let o = check();
        if !o.pass {
            failed += 1;
        }
        println!("{} {} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, id.to_uppercase(), o.detail);
    }
    println!("acceptance: {}/{ran} passed", ran - failed);
    if failed > 0 && std::env::var("ACCEPTANCE_STRICT").is_ok_and(|v| v == "1") {
        std::process::exit(1);
    }
}
