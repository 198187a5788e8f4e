use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use ovs_core::config::{parse_override, ScenarioConfig};
use ovs_core::sim::{
    compute_stats, estimate_goal, observe_pixel, parse_episode_csv, plan, replay, run_episode,
    sweep_nominal_speeds, Method, Scenario,
};
use ovs_core::Error;

#[derive(Parser, Debug)]
#[command(
    name = "ovs",
    version,
    about = "Perception-aware visual servoing planner and simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Debug, Clone)]
struct Common {
    /// Scenario file; built-in defaults are used when omitted.
    #[arg(long)]
    scenario: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Base RNG seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override a scenario key, e.g. `--set mpc.horizon=30`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Print per-iteration and per-trial detail.
    #[arg(short, long)]
    verbose: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Optimize the reference trajectory and write trajectory.csv.
    Plan {
        #[command(flatten)]
        common: Common,
    },
    /// Fly one episode per method and write episode_<method>.csv.
    Run {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value_t = MethodArg::Both)]
        method: MethodArg,
    },
    /// Sweep nominal speeds and write comparison.csv and comparison_long.csv.
    Compare {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value_t = MethodArg::Both)]
        method: MethodArg,
        /// Comma-separated flight times.
        #[arg(long, value_delimiter = ',')]
        tf_list: Option<Vec<f64>>,
        #[arg(long)]
        trials: Option<usize>,
    },
    /// Recompute pixel errors from an episode CSV and write replay.csv.
    Replay {
        #[command(flatten)]
        common: Common,
        /// Episode CSV written by `ovs run`.
        episode: PathBuf,
    },
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
enum MethodArg {
    Ovs,
    Pbvs,
    Both,
}

impl MethodArg {
    fn methods(self) -> Vec<Method> {
        match self {
            MethodArg::Ovs => vec![Method::Ovs],
            MethodArg::Pbvs => vec![Method::Pbvs],
            MethodArg::Both => Method::ALL.to_vec(),
        }
    }
}

enum Failure {
    Usage(String),
    Solver(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::PlanningFailure(_) | Error::TargetLostAtStart | Error::InfeasibleStart(_) => {
                Failure::Solver(e.to_string())
            }
            other => Failure::Usage(other.to_string()),
        }
    }
}

fn load(common: &Common, extra: &[String]) -> Result<Scenario, Failure> {
    let mut args: Vec<String> = common.overrides.clone();
    if let Some(seed) = common.seed {
        args.push(format!("scenario.seed={seed}"));
    }
    args.extend_from_slice(extra);
    let overrides = args
        .iter()
        .map(|a| parse_override(a))
        .collect::<Result<Vec<_>, _>>()?;
    let cfg = match &common.scenario {
        Some(path) => ScenarioConfig::load(path, &overrides)?,
        None => ScenarioConfig::from_str_with("", &overrides)?,
    };
    let scenario = cfg.to_scenario()?;
    scenario.validate()?;
    Ok(scenario)
}

fn write_outputs(dir: &Path, files: &[(&str, &str)]) -> Result<(), Failure> {
    let io = |e: std::io::Error| Failure::Usage(format!("cannot write to {}: {e}", dir.display()));
    fs::create_dir_all(dir).map_err(io)?;
    for (name, body) in files {
        fs::write(dir.join(name), body).map_err(io)?;
    }
    Ok(())
}

fn cmd_plan(common: &Common) -> Result<(), Failure> {
    let scenario = load(common, &[])?;
    let goal = estimate_goal(&scenario)?;
    let (traj, report) = plan(&scenario, Method::Ovs, &goal)?;
    let report = report.expect("optimized plans carry a report");
    let visible = traj
        .states
        .iter()
        .filter(|x| observe_pixel(x, &goal.target_world, &scenario.intr, &scenario.ext).visible)
        .count();
    let s_nom = (goal.x_goal.position - scenario.x_init.position).norm() / scenario.tf;
    write_outputs(&common.out, &[("trajectory.csv", &traj.to_csv())])?;
    if common.verbose {
        for (i, merit) in report.cost_history.iter().enumerate() {
            println!("  iter {i:3}  merit {merit:.9e}");
        }
    }
    println!("cost          {:.6e}", report.final_cost);
    println!("iterations    {}", report.iterations);
    println!("converged     {}", report.converged);
    println!("max defect    {:.3e}", report.max_dynamics_defect);
    println!("s_nom         {s_nom:.4} m/s");
    println!(
        "in view       {:.4}",
        visible as f64 / traj.states.len() as f64
    );
    println!("wrote {}", common.out.join("trajectory.csv").display());
    Ok(())
}

fn cmd_run(common: &Common, method: MethodArg) -> Result<(), Failure> {
    let scenario = load(common, &[])?;
    let weight = scenario.vehicle.mass * scenario.vehicle.gravity.norm();
    let mut files = Vec::new();
    for m in method.methods() {
        let log = run_episode(&scenario, m, &scenario.mpc)?;
        let stats = compute_stats(&log, weight);
        let final_err = (log.final_state().position - log.goal.position).norm();
        println!(
            "{m:<5} avg_px {:8.3}  max_px {:8.3}  visible {:.3}  rms_thrust {:.3} N  final_err {:.4} m",
            stats.avg_pixel_error, stats.max_pixel_error, stats.visibility_fraction, stats.rms_thrust, final_err
        );
        files.push((m, log.to_csv()));
    }
    let named: Vec<(String, String)> = files
        .into_iter()
        .map(|(m, csv)| (format!("episode_{}.csv", m.to_string().to_lowercase()), csv))
        .collect();
    let refs: Vec<(&str, &str)> = named
        .iter()
        .map(|(n, c)| (n.as_str(), c.as_str()))
        .collect();
    write_outputs(&common.out, &refs)
}

fn cmd_compare(
    common: &Common,
    method: MethodArg,
    tf_list: Option<&[f64]>,
    trials: Option<usize>,
) -> Result<bool, Failure> {
    let mut extra = Vec::new();
    if let Some(list) = tf_list {
        let items: Vec<String> = list.iter().map(|t| format!("{t:?}")).collect();
        extra.push(format!("scenario.tf_list=[{}]", items.join(",")));
    }
    if let Some(n) = trials {
        extra.push(format!("scenario.trials={n}"));
    }
    let scenario = load(common, &extra)?;
    let table = sweep_nominal_speeds(
        &scenario,
        &scenario.tf_list,
        &method.methods(),
        scenario.trials,
    )?;
    write_outputs(
        &common.out,
        &[
            ("comparison.csv", &table.to_csv()),
            ("comparison_long.csv", &table.to_long_csv()),
        ],
    )?;
    println!(
        "{:>6} {:>7} {:<5} {:>9} {:>9} {:>8} {:>10}  status",
        "tf", "s_nom", "meth", "avg_px", "max_px", "visible", "rms_thr"
    );
    for r in &table.rows {
        println!(
            "{:>6.2} {:>7.3} {:<5} {:>9.3} {:>9.3} {:>8.3} {:>10.3}  {}",
            r.tf,
            r.s_nom,
            r.method,
            r.avg_pixel_error,
            r.max_pixel_error,
            r.visibility,
            r.rms_thrust,
            r.status()
        );
        if common.verbose {
            for t in &r.trials {
                match &t.stats {
                    Ok(st) => println!(
                        "    trial {:2}  avg_px {:8.3}  max_px {:8.3}  visible {:.3}",
                        t.trial, st.avg_pixel_error, st.max_pixel_error, st.visibility_fraction
                    ),
                    Err(e) => println!("    trial {:2}  failed: {e}", t.trial),
                }
            }
        }
    }
    Ok(table.all_completed())
}

fn cmd_replay(common: &Common, episode: &Path) -> Result<(), Failure> {
    let scenario = load(common, &[])?;
    let text = fs::read_to_string(episode)
        .map_err(|e| Failure::Usage(format!("cannot read {}: {e}", episode.display())))?;
    let rows = parse_episode_csv(&text)
        .map_err(|e| Failure::Usage(format!("{}: {e}", episode.display())))?;
    write_outputs(
        &common.out,
        &[(
            "replay.csv",
            &replay(&rows, &scenario.goal_spec.desired_pixel),
        )],
    )?;
    println!(
        "replayed {} rows into {}",
        rows.len(),
        common.out.join("replay.csv").display()
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match &cli.command {
        Command::Plan { common } => cmd_plan(common),
        Command::Run { common, method } => cmd_run(common, *method),
        Command::Compare {
            common,
            method,
            tf_list,
            trials,
        } => cmd_compare(common, *method, tf_list.as_deref(), *trials).and_then(|ok| {
            if ok {
                Ok(())
            } else {
                Err(Failure::Solver("some episodes did not complete".into()))
            }
        }),
        Command::Replay { common, episode } => cmd_replay(common, episode),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Solver(msg)) => {
            eprintln!("solver failure: {msg}");
            ExitCode::from(2)
        }
    }
}
