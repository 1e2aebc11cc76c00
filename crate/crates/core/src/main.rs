use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use pasa::exec::init_workers_from_env;
use pasa::harness::{self, AgentKind, Experiment, Overrides, Report};

/// Adaptive state aggregation experiments.
///
/// Set PASA_WORKERS to size the worker pool used for independent trials.
#[derive(Parser)]
#[command(name = "pasa", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Average reward of SARSA-F and SARSA-P on random GARNET instances.
    GarnetPerf(Common),
    /// Value error under a fixed policy on GARNET instances.
    GarnetMse(Common),
    /// Average reward on random gridworlds.
    Gridworld(Common),
    /// Average reward on the stock-transport problem.
    Logistics(Common),
    /// Cycle lengths of random successor maps.
    CycleStats(Common),
    /// Per-iteration cost of each agent.
    Timing(Common),
}

#[derive(Clone, Copy, ValueEnum)]
enum AgentArg {
    Tabular,
    Fixed,
    Pasa,
}

#[derive(Args)]
struct Common {
    /// TOML file overlaid on the built-in preset.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    iterations: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Run only this agent.
    #[arg(long, value_enum)]
    agent: Option<AgentArg>,
}

fn print_summary(report: &Report) {
    if let Some(c) = &report.cycle {
        println!(
            "samples={} mean_c1={:.3} var_c1={:.3} mean_c={:.3} mean_l1={:.3}",
            c.samples, c.mean_c1, c.var_c1, c.mean_c, c.mean_l1
        );
        return;
    }
    for s in &report.summaries {
        let mut line = format!(
            "{:<8} trials={} final_reward={:.5} ci95={:.5} repartitions={:.1}",
            s.agent.name(),
            s.trials,
            s.final_reward,
            s.final_reward_ci95,
            s.repartitions
        );
        if let (Some(m), Some(h)) = (s.sqrt_mse, s.sqrt_mse_ci95) {
            line += &format!(" sqrt_mse={m:.5} ci95={h:.5}");
        }
        println!("{line}");
    }
    for t in &report.timing {
        match t.micros_per_iter {
            Some(us) => println!("{:<8} micros_per_iter={us:.5}", t.agent.name()),
            None => println!("{:<8} micros_per_iter=n/a", t.agent.name()),
        }
    }
    if let Some(r) = report.overhead() {
        println!("pasa overhead over fixed: {:.1}%", 100.0 * r);
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_workers_from_env();
    let (experiment, common) = match cli.command {
        Command::GarnetPerf(c) => (Experiment::GarnetPerf, c),
        Command::GarnetMse(c) => (Experiment::GarnetMse, c),
        Command::Gridworld(c) => (Experiment::Gridworld, c),
        Command::Logistics(c) => (Experiment::Logistics, c),
        Command::CycleStats(c) => (Experiment::CycleStats, c),
        Command::Timing(c) => (Experiment::Timing, c),
    };
    let overrides = Overrides {
        seed: common.seed,
        trials: common.trials,
        iterations: common.iterations,
        agent: common.agent.map(|a| match a {
            AgentArg::Tabular => AgentKind::Tabular,
            AgentArg::Fixed => AgentKind::Fixed,
            AgentArg::Pasa => AgentKind::Pasa,
        }),
    };
    let result = harness::load_config(experiment, common.config.as_deref()).and_then(|mut cfg| {
        overrides.apply(&mut cfg)?;
        harness::execute_to(experiment, &cfg, &common.out)
    });
    match result {
        Ok(report) => {
            print_summary(&report);
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
