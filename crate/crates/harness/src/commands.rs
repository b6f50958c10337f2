//! Experiment commands. Each writes into its own output directory and returns
//! a summary for the caller to print.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use omnet_core::agent::{derive_seed, SacConfig};
use omnet_core::diagnostics::{
    estimate_value_bias, final_window_return, normalized_score, render_heatmap, BiasConfig, Trajectory,
    TrajectoryLog, ValueBiasReport, VisitationGrid, GRID_SIZE,
};
use omnet_core::env::Environment;
use omnet_core::maze::MazeEnv;
use omnet_core::strategy::ModeSpec;
use omnet_core::train::{evaluate, EvalRecord, Trainer, TrainerConfig, TrainingLog};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::LoadedConfig;
use crate::output::{self, write_csv, write_file};

/// Seed tags for harness-level randomness, disjoint from the trainer's.
mod tags {
    pub const EVAL_COMMAND: u64 = 710;
    pub const VALUE_BIAS: u64 = 711;
}

pub fn seed_dir(out: &Path, seed: u64) -> PathBuf {
    out.join(format!("seed_{seed}"))
}

fn maze_env(loaded: &LoadedConfig, noise: f64) -> Result<MazeEnv> {
    MazeEnv::new(loaded.maze.clone(), noise).map_err(|e| anyhow!("{}: {e}", loaded.path.display()))
}

fn resolved_with(loaded: &LoadedConfig, sac: &SacConfig, noise: f64, seed: u64) -> Result<String> {
    let mut copy = loaded.clone();
    copy.config.agent = sac.clone();
    copy.config.noise_scale = noise;
    copy.config.seeds = vec![seed];
    copy.resolved_toml()
}

/// Outcome of one seed's training run.
#[derive(Debug, Clone)]
pub struct SeedRun {
    pub seed: u64,
    pub log: TrainingLog,
    pub env_steps: usize,
    pub grad_steps: usize,
}

impl SeedRun {
    pub fn final_return(&self) -> Option<f64> {
        let evals: Vec<(usize, f64)> = self.log.evals.iter().map(|e| (e.env_step, e.mean_return)).collect();
        final_window_return(&evals, self.env_steps)
    }

    pub fn best_return(&self) -> Option<f64> {
        self.log.evals.iter().map(|e| e.mean_return).reduce(f64::max)
    }
}

/// Trains one seed and, when `dir` is given, writes its full artifact set.
pub fn run_seed(loaded: &LoadedConfig, sac: &SacConfig, noise: f64, seed: u64, dir: Option<&Path>) -> Result<SeedRun> {
    sac.validate().map_err(|e| anyhow!("{}: {e}", loaded.path.display()))?;
    let env = maze_env(loaded, noise)?;
    let tc = loaded.trainer_config(false);
    let mut trainer = Trainer::new(sac.clone(), env, tc.clone(), seed)?;
    if let Some(dir) = dir {
        output::create_dir(dir)?;
        write_file(&dir.join(output::RESOLVED_CONFIG), resolved_with(loaded, sac, noise, seed)?)?;
        let agent = trainer.agent();
        if let Some(m) = agent.critic_strategy().mask_set() {
            write_file(&dir.join(output::CRITIC_MASKS), m.to_bytes())?;
        }
        if let Some(m) = agent.actor_strategy().mask_set() {
            write_file(&dir.join(output::ACTOR_MASKS), m.to_bytes())?;
        }
    }
    let interval = loaded.config.checkpoint_interval;
    while !trainer.is_done() {
        let next = match trainer.env_step().checked_div(interval) {
            Some(q) => (q + 1) * interval,
            None => tc.total_env_steps,
        };
        trainer.run_until(next, |_, _| {})?;
        if let (Some(dir), true) = (dir, interval > 0 && !trainer.is_done()) {
            let name = format!("checkpoint_{:06}.bin", trainer.env_step());
            write_file(&dir.join(name), trainer.checkpoint())?;
        }
    }
    if let Some(dir) = dir {
        let log = trainer.log();
        write_file(&dir.join(output::CHECKPOINT), trainer.checkpoint())?;
        output::write_steps(&dir.join(output::STEPS_CSV), &log.steps)?;
        output::write_episodes(&dir.join(output::EPISODES_CSV), &log.episodes)?;
        output::write_evals(&dir.join(output::EVALS_CSV), &log.evals)?;
        let traj = output::trajectories(log, sac.warmup_steps)?;
        write_file(&dir.join(output::TRAJECTORIES), traj.to_text())?;
    }
    let (env_steps, grad_steps) = (trainer.env_step(), trainer.grad_steps());
    Ok(SeedRun {
        seed,
        log: trainer.into_log(),
        env_steps,
        grad_steps,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainSummaryRow {
    pub seed: u64,
    pub env_steps: usize,
    pub grad_steps: usize,
    pub episodes: usize,
    pub successes: usize,
    /// Env step that ended the first successful post-warm-up episode; blank if none.
    pub first_success: String,
    pub final_return: String,
    pub best_return: String,
}

pub const TRAIN_SUMMARY_HEADER: &[&str] = &[
    "seed",
    "env_steps",
    "grad_steps",
    "episodes",
    "successes",
    "first_success",
    "final_return",
    "best_return",
];

fn blank(v: Option<impl ToString>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn train(loaded: &LoadedConfig, seeds: &[u64], out: &Path) -> Result<Vec<TrainSummaryRow>> {
    output::create_dir(out)?;
    let c = &loaded.config;
    let mut rows = Vec::new();
    for &seed in seeds {
        let run = run_seed(loaded, &c.agent, c.noise_scale, seed, Some(&seed_dir(out, seed)))?;
        rows.push(TrainSummaryRow {
            seed,
            env_steps: run.env_steps,
            grad_steps: run.grad_steps,
            episodes: run.log.episodes.len(),
            successes: run.log.episodes.iter().filter(|e| e.success).count(),
            first_success: blank(run.log.first_success_after(c.agent.warmup_steps)),
            final_return: blank(run.final_return()),
            best_return: blank(run.best_return()),
        });
    }
    write_csv(&out.join("summary.csv"), TRAIN_SUMMARY_HEADER, &rows)?;
    Ok(rows)
}

/// Deterministic rollout of one actor view from a seeded reset.
fn deterministic_episode(
    trainer: &Trainer<MazeEnv>,
    subnet: Option<usize>,
    seed: u64,
) -> Result<Trajectory> {
    let agent = trainer.agent();
    let strategy = agent.actor_strategy();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut env = trainer.eval_env().clone();
    let mut obs = env.reset(&mut rng);
    let mut positions = vec![pos(&env)];
    let mut ret = 0.0;
    loop {
        let member = match subnet {
            Some(i) => strategy.member_for_subnet(i)?,
            None => strategy.sample_member_with(&mut rng),
        };
        let action = agent.act_with(&obs, &member, true, &mut rng)?;
        let r = env.step(&action)?;
        ret += r.reward;
        positions.push(pos(&env));
        if r.finished() {
            return Ok(Trajectory {
                grad_step: trainer.grad_steps(),
                subnet,
                episode_return: ret,
                success: r.done,
                positions,
            });
        }
        obs = r.observation;
    }
}

fn pos(env: &MazeEnv) -> [f64; 2] {
    let s = env.true_state();
    [s[0], s[1]]
}

pub const EVAL_SUMMARY_HEADER: &[&str] = &[
    "seed",
    "env_step",
    "grad_steps",
    "mean_return",
    "min_return",
    "max_return",
    "success_rate",
];

#[derive(Debug, Clone, Serialize)]
pub struct EvalSummaryRow {
    pub seed: u64,
    pub env_step: usize,
    pub grad_steps: usize,
    pub mean_return: f64,
    pub min_return: f64,
    pub max_return: f64,
    pub success_rate: f64,
}

/// Re-evaluates each seed's final checkpoint under `out/seed_<s>/`.
pub fn eval(loaded: &LoadedConfig, seeds: &[u64], out: &Path) -> Result<Vec<EvalSummaryRow>> {
    let c = &loaded.config;
    if c.eval_episodes == 0 {
        return Err(loaded.field_error("", "eval_episodes", "must be positive for eval"));
    }
    let mut rows = Vec::new();
    for &seed in seeds {
        let dir = seed_dir(out, seed);
        let path = dir.join(output::CHECKPOINT);
        let bytes = std::fs::read(&path).with_context(|| format!("cannot read checkpoint {}", path.display()))?;
        let mut trainer = Trainer::new(c.agent.clone(), maze_env(loaded, c.noise_scale)?, loaded.trainer_config(false), seed)?;
        trainer
            .restore(&bytes)
            .map_err(|e| anyhow!("{}: {e}", path.display()))?;
        let eval_seed = derive_seed(seed, tags::EVAL_COMMAND);
        let mut record: EvalRecord = evaluate(trainer.agent(), trainer.eval_env(), c.eval_episodes, eval_seed)?;
        record.env_step = trainer.env_step();
        record.grad_steps = trainer.grad_steps();
        output::write_evals(&dir.join("eval.csv"), std::slice::from_ref(&record))?;

        let views: Vec<Option<usize>> = match trainer.agent().actor_strategy().subnet_count() {
            Some(n) => (0..n).map(Some).collect(),
            None => vec![None],
        };
        let mut traj = TrajectoryLog::new();
        for view in views {
            traj.push(deterministic_episode(&trainer, view, eval_seed)?)?;
        }
        write_file(&dir.join("eval_trajectories.txt"), traj.to_text())?;
        rows.push(EvalSummaryRow {
            seed,
            env_step: record.env_step,
            grad_steps: record.grad_steps,
            mean_return: record.mean_return,
            min_return: record.min_return,
            max_return: record.max_return,
            success_rate: record.success_rate,
        });
    }
    write_csv(&out.join("eval_summary.csv"), EVAL_SUMMARY_HEADER, &rows)?;
    Ok(rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AblationAxis {
    Sparsity,
    SubnetCount,
    Infinity,
}

impl AblationAxis {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "sparsity" => Ok(Self::Sparsity),
            "subnet_count" | "subnet-count" => Ok(Self::SubnetCount),
            "infinity" => Ok(Self::Infinity),
            other => bail!("unknown ablation axis `{other}` (expected sparsity, subnet_count or infinity)"),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Sparsity => "sparsity",
            Self::SubnetCount => "subnet_count",
            Self::Infinity => "infinity",
        }
    }

    pub fn default_values(self) -> Vec<AblationValue> {
        let grid = [0.1, 0.3, 0.5, 0.7, 0.9];
        match self {
            Self::Sparsity => grid.iter().map(|&s| AblationValue::Sparsity(s)).collect(),
            Self::Infinity => grid.iter().map(|&s| AblationValue::InfinitySparsity(s)).collect(),
            Self::SubnetCount => [1, 2, 4, 5, 8]
                .iter()
                .map(|&n| AblationValue::Count(n))
                .chain([AblationValue::Unbounded])
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AblationValue {
    Sparsity(f64),
    Count(usize),
    /// Fresh masks at every use.
    Unbounded,
    InfinitySparsity(f64),
}

impl AblationValue {
    pub fn label(&self) -> String {
        match self {
            Self::Sparsity(s) | Self::InfinitySparsity(s) => s.to_string(),
            Self::Count(n) => n.to_string(),
            Self::Unbounded => "inf".into(),
        }
    }

    /// Parses one value token for `axis`.
    pub fn parse(axis: AblationAxis, token: &str) -> Result<Self> {
        let token = token.trim();
        let sparsity = |t: &str| -> Result<f64> {
            let s: f64 = t.parse().map_err(|_| anyhow!("`{t}` is not a sparsity"))?;
            if !(0.0..1.0).contains(&s) {
                bail!("sparsity {s} is outside [0, 1)");
            }
            Ok(s)
        };
        match axis {
            AblationAxis::Sparsity => Ok(Self::Sparsity(sparsity(token)?)),
            AblationAxis::Infinity => Ok(Self::InfinitySparsity(sparsity(token)?)),
            AblationAxis::SubnetCount => {
                if matches!(token, "inf" | "infinity" | "∞") {
                    return Ok(Self::Unbounded);
                }
                let n: usize = token
                    .parse()
                    .map_err(|_| anyhow!("`{token}` is not a subnet count (integer or `inf`)"))?;
                if n == 0 {
                    bail!("subnet count must be at least 1");
                }
                Ok(Self::Count(n))
            }
        }
    }

    /// Agent configuration with both critic and actor set for this value.
    pub fn apply(&self, base: &SacConfig) -> SacConfig {
        let mut sac = base.clone();
        let (n, s) = (base.critic.subnets, base.critic.sparsity);
        let spec = match *self {
            Self::Sparsity(s) => ModeSpec::omnet(n, s),
            Self::Count(n) => ModeSpec::omnet(n, s),
            Self::Unbounded => ModeSpec::infinity(s),
            Self::InfinitySparsity(s) => ModeSpec::infinity(s),
        };
        sac.critic = spec.clone();
        sac.actor = spec;
        sac
    }
}

/// Values from `--values` (comma separated), else the config, else the defaults.
pub fn ablation_values(loaded: &LoadedConfig, axis: AblationAxis, cli: Option<&str>) -> Result<Vec<AblationValue>> {
    let values = match (cli, &loaded.config.ablate.values) {
        (Some(list), _) => list
            .split(',')
            .filter(|t| !t.trim().is_empty())
            .map(|t| AblationValue::parse(axis, t))
            .collect::<Result<Vec<_>>>()?,
        (None, Some(vals)) => vals
            .iter()
            .map(|v| {
                let token = match v {
                    toml::Value::String(s) => s.clone(),
                    toml::Value::Integer(i) => i.to_string(),
                    toml::Value::Float(f) => f.to_string(),
                    other => other.to_string(),
                };
                AblationValue::parse(axis, &token).map_err(|e| loaded.field_error("ablate", "values", e))
            })
            .collect::<Result<Vec<_>>>()?,
        (None, None) => axis.default_values(),
    };
    if values.is_empty() {
        bail!("ablation `{}` needs at least one value", axis.name());
    }
    Ok(values)
}

pub const SCORE_HEADER: &[&str] = &["axis", "value", "critic", "actor", "seeds", "mean_final_return", "normalized_score"];

#[derive(Debug, Clone, Serialize)]
pub struct ScoreRow {
    pub axis: String,
    pub value: String,
    pub critic: String,
    pub actor: String,
    pub seeds: usize,
    pub mean_final_return: f64,
    pub normalized_score: f64,
}

fn mode_label(m: &ModeSpec) -> String {
    match m.kind.as_str() {
        "omnet" => format!("omnet N={} S={}", m.subnets, m.sparsity),
        "infinity" => format!("infinity S={}", m.sparsity),
        other => other.to_string(),
    }
}

/// Trains every seed under `sac` in `dir/seed_<s>` and scores the final window.
fn score_runs(
    loaded: &LoadedConfig,
    sac: &SacConfig,
    noise: f64,
    seeds: &[u64],
    dir: &Path,
) -> Result<(f64, f64)> {
    let mut finals = Vec::new();
    for &seed in seeds {
        let run = run_seed(loaded, sac, noise, seed, Some(&seed_dir(dir, seed)))?;
        let fin = run.final_return().ok_or_else(|| {
            loaded.field_error("", "eval_interval", "leaves no evaluation in the final sixth of training")
        })?;
        finals.push(fin);
    }
    let best = loaded.maze.success_reward;
    let mean = finals.iter().sum::<f64>() / finals.len() as f64;
    Ok((mean, normalized_score(&finals, best)?))
}

pub fn ablate(
    loaded: &LoadedConfig,
    axis: AblationAxis,
    values: &[AblationValue],
    seeds: &[u64],
    out: &Path,
) -> Result<Vec<ScoreRow>> {
    if values.is_empty() {
        bail!("ablation `{}` needs at least one value", axis.name());
    }
    output::create_dir(out)?;
    let c = &loaded.config;
    let mut rows = Vec::new();
    for value in values {
        let sac = value.apply(&c.agent);
        let dir = out.join(format!("{}_{}", axis.name(), value.label()));
        let (mean, score) = score_runs(loaded, &sac, c.noise_scale, seeds, &dir)?;
        rows.push(ScoreRow {
            axis: axis.name().into(),
            value: value.label(),
            critic: mode_label(&sac.critic),
            actor: mode_label(&sac.actor),
            seeds: seeds.len(),
            mean_final_return: mean,
            normalized_score: score,
        });
    }
    write_csv(&out.join(format!("ablation_{}.csv", axis.name())), SCORE_HEADER, &rows)?;
    Ok(rows)
}

/// The two actor variants compared by the visitation study; the critic is
/// left as configured.
pub fn visitation_variants(base: &SacConfig) -> Vec<(&'static str, SacConfig)> {
    let mut omnet = base.clone();
    if omnet.actor.kind != "omnet" {
        omnet.actor = ModeSpec::omnet(base.critic.subnets.max(2), base.critic.sparsity);
    }
    let mut dense = base.clone();
    dense.actor = ModeSpec::named("dense");
    vec![("omnet_actor", omnet), ("dense_actor", dense)]
}

/// Post-warm-up positions of the first `budget` env steps after warm-up.
pub fn post_warmup_positions(loaded: &LoadedConfig, sac: &SacConfig, seed: u64, budget: usize) -> Result<Vec<[f64; 2]>> {
    let env = maze_env(loaded, loaded.config.noise_scale)?;
    let tc = TrainerConfig {
        total_env_steps: sac.warmup_steps + budget,
        eval_interval: 0,
        eval_episodes: 0,
        audit: false,
    };
    let mut trainer = Trainer::new(sac.clone(), env, tc, seed)?;
    let mut positions = Vec::with_capacity(budget);
    let total = trainer.config().total_env_steps;
    trainer.run_until(total, |record, t| {
        if !record.warmup {
            positions.push(pos(t.env()));
        }
    })?;
    Ok(positions)
}

pub const VISITATION_HEADER: &[&str] = &["variant", "budget", "seeds", "covered_cells", "total_visits"];

#[derive(Debug, Clone, Serialize)]
pub struct VisitationRow {
    pub variant: String,
    pub budget: usize,
    pub seeds: usize,
    pub covered_cells: usize,
    pub total_visits: u64,
}

/// Summed grids per budget for one actor variant.
pub type VariantGrids = (&'static str, Vec<(usize, VisitationGrid)>);

/// Summed grids per (variant, budget), in the order of `budgets`.
pub fn visitation_grids(
    loaded: &LoadedConfig,
    budgets: &[usize],
    seeds: &[u64],
) -> Result<Vec<VariantGrids>> {
    let max_budget = budgets.iter().copied().max().unwrap_or(0);
    let mut out = Vec::new();
    for (name, sac) in visitation_variants(&loaded.config.agent) {
        sac.validate().map_err(|e| anyhow!("{}: {e}", loaded.path.display()))?;
        let mut grids: Vec<(usize, VisitationGrid)> =
            budgets.iter().map(|&b| (b, VisitationGrid::new(GRID_SIZE))).collect();
        for &seed in seeds {
            let positions = post_warmup_positions(loaded, &sac, seed, max_budget)?;
            for (budget, grid) in grids.iter_mut() {
                for p in positions.iter().take(*budget) {
                    grid.record(p[0], p[1])?;
                }
            }
        }
        out.push((name, grids));
    }
    Ok(out)
}

pub fn visitation(loaded: &LoadedConfig, budgets: &[usize], seeds: &[u64], out: &Path) -> Result<Vec<VisitationRow>> {
    if budgets.is_empty() {
        bail!("visitation needs at least one step budget");
    }
    output::create_dir(out)?;
    let mut rows = Vec::new();
    for (name, grids) in visitation_grids(loaded, budgets, seeds)? {
        for (budget, grid) in grids {
            let stem = format!("{name}_{budget}");
            write_file(&out.join(format!("{stem}.pgm")), render_heatmap(&grid)?)?;
            write_file(&out.join(format!("{stem}.csv")), grid.to_csv())?;
            rows.push(VisitationRow {
                variant: name.into(),
                budget,
                seeds: seeds.len(),
                covered_cells: grid.covered(),
                total_visits: grid.total(),
            });
        }
    }
    write_csv(&out.join("visitation.csv"), VISITATION_HEADER, &rows)?;
    Ok(rows)
}

pub const BIAS_HEADER: &[&str] = &[
    "seed",
    "env_step",
    "grad_steps",
    "mean_bias",
    "std_error",
    "mean_estimate",
    "mean_return",
    "samples",
];

#[derive(Debug, Clone, Serialize)]
pub struct BiasRow {
    pub seed: u64,
    pub env_step: usize,
    pub grad_steps: usize,
    pub mean_bias: f64,
    pub std_error: f64,
    pub mean_estimate: f64,
    pub mean_return: f64,
    pub samples: usize,
}

/// Sorted, deduplicated schedule, checked against the training length.
pub fn bias_schedule(loaded: &LoadedConfig, schedule: &[usize]) -> Result<Vec<usize>> {
    let total = loaded.config.total_env_steps;
    if let Some(&bad) = schedule.iter().find(|&&s| s > total) {
        return Err(loaded.field_error(
            "valuebias",
            "schedule",
            format!("step {bad} is past total_env_steps ({total})"),
        ));
    }
    Ok(schedule.iter().copied().collect::<BTreeSet<_>>().into_iter().collect())
}

/// Trains one seed and measures the value bias at each scheduled step.
pub fn bias_curve(loaded: &LoadedConfig, schedule: &[usize], seed: u64) -> Result<Vec<(usize, ValueBiasReport)>> {
    let c = &loaded.config;
    let bias = BiasConfig {
        n_states: c.valuebias.n_states,
        n_rollouts: c.valuebias.n_rollouts,
        horizon: c.valuebias.horizon,
        gamma: c.agent.gamma,
    };
    let mut tc = loaded.trainer_config(false);
    tc.eval_interval = 0;
    let mut trainer = Trainer::new(c.agent.clone(), maze_env(loaded, c.noise_scale)?, tc, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, tags::VALUE_BIAS));
    let mut out = Vec::new();
    for &step in schedule {
        trainer.run_until(step, |_, _| {})?;
        let report = estimate_value_bias(trainer.agent(), trainer.eval_env(), &bias, step, &mut rng)?;
        out.push((trainer.grad_steps(), report));
    }
    Ok(out)
}

/// Returns `None` (and writes nothing) for an empty schedule.
pub fn valuebias(loaded: &LoadedConfig, schedule: &[usize], seeds: &[u64], out: &Path) -> Result<Option<Vec<BiasRow>>> {
    let schedule = bias_schedule(loaded, schedule)?;
    if schedule.is_empty() {
        return Ok(None);
    }
    output::create_dir(out)?;
    let mut rows = Vec::new();
    for &seed in seeds {
        let dir = seed_dir(out, seed);
        output::create_dir(&dir)?;
        let mut lines = String::new();
        for (grad_steps, report) in bias_curve(loaded, &schedule, seed)? {
            lines.push_str(&report.to_line());
            lines.push('\n');
            rows.push(BiasRow {
                seed,
                env_step: report.env_step,
                grad_steps,
                mean_bias: report.mean_bias,
                std_error: report.std_error,
                mean_estimate: report.mean_estimate(),
                mean_return: report.mean_return(),
                samples: report.samples.len(),
            });
        }
        write_file(&dir.join("bias.txt"), lines)?;
    }
    write_csv(&out.join("valuebias.csv"), BIAS_HEADER, &rows)?;
    Ok(Some(rows))
}

pub const NOISE_HEADER: &[&str] = &["noise_scale", "seeds", "mean_final_return", "normalized_score"];

#[derive(Debug, Clone, Serialize)]
pub struct NoiseRow {
    pub noise_scale: f64,
    pub seeds: usize,
    pub mean_final_return: f64,
    pub normalized_score: f64,
}

pub fn noise_sweep(loaded: &LoadedConfig, values: &[f64], seeds: &[u64], out: &Path) -> Result<Vec<NoiseRow>> {
    if values.is_empty() {
        bail!("noise sweep needs at least one noise value");
    }
    if let Some(bad) = values.iter().find(|v| !(**v >= 0.0 && v.is_finite())) {
        bail!("noise scale must be non-negative, got {bad}");
    }
    output::create_dir(out)?;
    let mut rows = Vec::new();
    for &sigma in values {
        let dir = out.join(format!("noise_{sigma}"));
        let (mean, score) = score_runs(loaded, &loaded.config.agent, sigma, seeds, &dir)?;
        rows.push(NoiseRow {
            noise_scale: sigma,
            seeds: seeds.len(),
            mean_final_return: mean,
            normalized_score: score,
        });
    }
    write_csv(&out.join("noise_sweep.csv"), NOISE_HEADER, &rows)?;
    Ok(rows)
}
