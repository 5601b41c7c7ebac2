use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use episim::sim::{
    gen_random_env, parse_team, render, run_scenario, run_suite, runs_csv, summarize, summary_csv, threads_from_env, with_faults, EnvParams, Method,
    Render, RunOptions, Scenario, Trace,
};
use episim::{Error, Result};

#[derive(Parser)]
#[command(name = "episim", version, about = "Multi-robot exploration simulator with empathy-based beliefs")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Simulate one scenario and write metrics and trace.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, default_value = "proposed")]
        method: Method,
        /// Overrides the scenario's seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        /// Replace the failure schedule with the first K seeded failures.
        #[arg(long)]
        faults: Option<usize>,
        /// Overrides the scenario's time cap, seconds.
        #[arg(long)]
        time_cap: Option<f64>,
        /// Log every robot's pose each tick.
        #[arg(long)]
        poses: bool,
    },
    /// Generate a random scenario.
    Gen {
        #[arg(long, num_args = 2, value_names = ["W", "H"], default_values_t = [20.0, 20.0])]
        size: Vec<f64>,
        #[arg(long, default_value = "2ugv,1uav")]
        robots: String,
        #[arg(long, default_value_t = 2)]
        tasks: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, num_args = 2, value_names = ["MIN", "MAX"], default_values_t = [5, 5])]
        obstacles: Vec<usize>,
        /// Write this many scenarios, seeds `seed..seed+count`, into --out.
        #[arg(long, default_value_t = 1)]
        count: u64,
        /// Output directory; stdout when absent and count is 1.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run every scenario in a directory under all methods and fault counts.
    Compare {
        #[arg(long)]
        suite: PathBuf,
        /// Runs per scenario, at seeds `scenario.seed + 0..K`.
        #[arg(long, default_value_t = 1)]
        seeds: u64,
        #[arg(long, value_delimiter = ',', default_values_t = [0, 1, 2])]
        faults: Vec<usize>,
        /// Summary CSV path; runs go next to it as `runs.csv`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render the final map from a trace.
    Replay {
        #[arg(long)]
        trace: PathBuf,
        #[arg(long, default_value = "ascii")]
        render: Render,
    },
}

fn load_suite(dir: &Path) -> Result<Vec<Scenario>> {
    let mut paths: Vec<PathBuf> =
        fs::read_dir(dir)?.filter_map(|e| e.ok().map(|e| e.path())).filter(|p| p.extension().is_some_and(|x| x == "json")).collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::Scenario(format!("no scenario files in {}", dir.display())));
    }
    paths.iter().map(|p| Scenario::load(p)).collect()
}

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::Run { scenario, method, seed, out, faults, time_cap, poses } => {
            let mut sc = Scenario::load(&scenario)?;
            sc.method = method;
            if let Some(s) = seed {
                sc.seed = s;
            }
            if let Some(k) = faults {
                sc = with_faults(&sc, k, sc.seed)?;
            }
            let opts = RunOptions { threads: threads_from_env(), time_cap, record_poses: poses };
            let m = run_scenario(&sc, &opts)?;
            fs::create_dir_all(&out)?;
            fs::write(out.join("trace.ndjson"), m.trace.to_ndjson())?;
            fs::write(out.join("metrics.csv"), runs_csv(std::slice::from_ref(&m)))?;
            println!("{}", m.csv_row());
        }
        Cmd::Gen { size, robots, tasks, seed, obstacles, count, out } => {
            let mut p = EnvParams::desk(parse_team(&robots)?);
            p.width = size[0];
            p.height = size[1];
            p.n_tasks = tasks;
            p.obstacles = (obstacles[0], obstacles[1]);
            match out {
                None if count == 1 => println!("{}", gen_random_env(&p, seed)?.to_json()?),
                None => return Err(Error::Scenario("--count needs --out".into())),
                Some(dir) => {
                    fs::create_dir_all(&dir)?;
                    for s in seed..seed + count {
                        let sc = gen_random_env(&p, s)?;
                        fs::write(dir.join(format!("{}.json", sc.name)), sc.to_json()?)?;
                    }
                }
            }
        }
        Cmd::Compare { suite, seeds, faults, out } => {
            let envs = load_suite(&suite)?;
            let seeds: Vec<u64> = (0..seeds).collect();
            let runs = run_suite(&envs, &seeds, &faults, threads_from_env())?;
            let table = summary_csv(&summarize(&runs));
            let out = out.unwrap_or_else(|| suite.join("summary.csv"));
            fs::write(&out, &table)?;
            fs::write(out.with_file_name("runs.csv"), runs_csv(&runs))?;
            print!("{table}");
        }
        Cmd::Replay { trace, render: how } => {
            let t = Trace::from_ndjson(&fs::read_to_string(trace)?)?;
            print!("{}", render(&t, how)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("episim: {e}");
            ExitCode::FAILURE
        }
    }
}
