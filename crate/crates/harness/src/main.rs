use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Result};
use clap::{Args, Parser, Subcommand};
use omnet_harness::commands::{self, AblationAxis};
use omnet_harness::config::{parse_seeds, LoadedConfig};

#[derive(Parser)]
#[command(name = "omnet", version, about = "Train and analyse OMNet agents on the sparse-reward maze")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Run configuration (TOML). Built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seeds, e.g. `1,2,5` or `0-9`; overrides the config.
    #[arg(long)]
    seeds: Option<String>,
    /// Output directory; overrides the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Total env steps; overrides the config.
    #[arg(long)]
    steps: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Train one agent per seed and write logs, trajectories and checkpoints.
    Train(Common),
    /// Re-evaluate the final checkpoints written by `train` into the same directory.
    Eval(Common),
    /// Train across a sparsity, subnet-count or infinity-mode grid and score each value.
    Ablate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        axis: Option<String>,
        /// Comma separated; `inf` selects fresh masks on the subnet_count axis.
        #[arg(long)]
        values: Option<String>,
    },
    /// Compare post-warm-up visitation of OMNet and dense actors.
    Visitation {
        #[command(flatten)]
        common: Common,
        /// Comma-separated post-warm-up step budgets.
        #[arg(long)]
        budgets: Option<String>,
    },
    /// Track the critic's value bias during training.
    Valuebias {
        #[command(flatten)]
        common: Common,
        /// Comma-separated env steps at which to measure.
        #[arg(long)]
        schedule: Option<String>,
    },
    /// Train and evaluate at several observation-noise levels.
    NoiseSweep {
        #[command(flatten)]
        common: Common,
        /// Comma-separated noise bounds.
        #[arg(long, allow_hyphen_values = true)]
        values: Option<String>,
    },
}

struct Setup {
    loaded: LoadedConfig,
    seeds: Vec<u64>,
    out: PathBuf,
}

fn setup(common: &Common) -> Result<Setup> {
    let mut loaded = match &common.config {
        Some(path) => LoadedConfig::load(path)?,
        None => LoadedConfig::from_text(Path::new("<defaults>"), String::new())?,
    };
    if let Some(steps) = common.steps {
        loaded.config.total_env_steps = steps;
        if steps < loaded.config.agent.warmup_steps {
            bail!("--steps {steps} is below the warm-up length {}", loaded.config.agent.warmup_steps);
        }
    }
    let seeds = match &common.seeds {
        Some(list) => parse_seeds(list)?,
        None => loaded.config.seeds.clone(),
    };
    let out = common
        .out
        .clone()
        .or_else(|| loaded.config.out.clone())
        .ok_or_else(|| anyhow!("no output directory: pass --out or set `out` in the config"))?;
    Ok(Setup { loaded, seeds, out })
}

fn list<T: std::str::FromStr>(what: &str, s: &str) -> Result<Vec<T>> {
    s.split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| t.parse().map_err(|_| anyhow!("bad {what} `{t}`")))
        .collect()
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(common) => {
            let s = setup(&common)?;
            for r in commands::train(&s.loaded, &s.seeds, &s.out)? {
                println!(
                    "seed {}: {} env steps, {} grad steps, {} successes, final return {}",
                    r.seed,
                    r.env_steps,
                    r.grad_steps,
                    r.successes,
                    if r.final_return.is_empty() { "-" } else { &r.final_return }
                );
            }
        }
        Command::Eval(common) => {
            let s = setup(&common)?;
            for r in commands::eval(&s.loaded, &s.seeds, &s.out)? {
                println!(
                    "seed {}: step {}, mean return {}, success rate {}",
                    r.seed, r.env_step, r.mean_return, r.success_rate
                );
            }
        }
        Command::Ablate { common, axis, values } => {
            let s = setup(&common)?;
            let axis_name = axis
                .or_else(|| s.loaded.config.ablate.axis.clone())
                .ok_or_else(|| anyhow!("no ablation axis: pass --axis or set ablate.axis"))?;
            let axis = AblationAxis::parse(&axis_name)?;
            let values = commands::ablation_values(&s.loaded, axis, values.as_deref())?;
            for r in commands::ablate(&s.loaded, axis, &values, &s.seeds, &s.out)? {
                println!("{} = {}: normalized score {}", r.axis, r.value, r.normalized_score);
            }
        }
        Command::Visitation { common, budgets } => {
            let s = setup(&common)?;
            let budgets = match budgets {
                Some(b) => list("budget", &b)?,
                None => s.loaded.config.visitation.budgets.clone(),
            };
            for r in commands::visitation(&s.loaded, &budgets, &s.seeds, &s.out)? {
                println!("{} @ {} steps: {} cells covered", r.variant, r.budget, r.covered_cells);
            }
        }
        Command::Valuebias { common, schedule } => {
            let s = setup(&common)?;
            let schedule = match schedule {
                Some(b) => list("schedule step", &b)?,
                None => s.loaded.config.valuebias.schedule.clone(),
            };
            match commands::valuebias(&s.loaded, &schedule, &s.seeds, &s.out)? {
                None => eprintln!("warning: empty value-bias schedule, nothing written"),
                Some(rows) => {
                    for r in rows {
                        println!("seed {} @ {}: bias {} ± {}", r.seed, r.env_step, r.mean_bias, r.std_error);
                    }
                }
            }
        }
        Command::NoiseSweep { common, values } => {
            let s = setup(&common)?;
            let values = match values {
                Some(v) => list("noise value", &v)?,
                None => s.loaded.config.noise_sweep.values.clone(),
            };
            for r in commands::noise_sweep(&s.loaded, &values, &s.seeds, &s.out)? {
                println!("noise {}: normalized score {}", r.noise_scale, r.normalized_score);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", format!("{e:#}").replace('\n', " "));
            ExitCode::FAILURE
        }
    }
}
