//! Measurement tools: state-visitation grids and heatmaps, trajectory logs,
//! value-estimation bias, normalized scores, and analytic FLOP accounting.

use std::fmt::Write as _;

use ndarray::ArrayView2;
use rand_chacha::ChaCha8Rng;

use crate::agent::{Agent, SacConfig};
use crate::env::Environment;
use crate::error::{Error, Result};
use crate::nn::{Activation, LayerSpec, Layout};
use crate::strategy::{BuildContext, Role, StrategyRegistry};

pub const GRID_SIZE: usize = 30;
const PIXELS_PER_CELL: usize = 8;

fn check_unit(x: f64, y: f64) -> Result<()> {
    if (0.0..=1.0).contains(&x) && (0.0..=1.0).contains(&y) {
        Ok(())
    } else {
        Err(Error::OutOfDomain { x, y })
    }
}

/// Visit counts over a `size × size` partition of the unit square.
/// Cell `(ix, iy)` covers `x ∈ [ix/size, (ix+1)/size)`; the upper edge clamps into the last cell.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VisitationGrid {
    size: usize,
    counts: Vec<u64>,
    total: u64,
}

impl Default for VisitationGrid {
    fn default() -> Self {
        Self::new(GRID_SIZE)
    }
}

impl VisitationGrid {
    pub fn new(size: usize) -> Self {
        Self {
            size,
            counts: vec![0; size * size],
            total: 0,
        }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn cell_of(&self, x: f64, y: f64) -> Result<(usize, usize)> {
        check_unit(x, y)?;
        let last = self.size.saturating_sub(1);
        let idx = |v: f64| ((v * self.size as f64).floor() as usize).min(last);
        Ok((idx(x), idx(y)))
    }

    pub fn record(&mut self, x: f64, y: f64) -> Result<(usize, usize)> {
        if self.size == 0 {
            return Err(Error::config("visitation grid has no cells"));
        }
        let (ix, iy) = self.cell_of(x, y)?;
        self.counts[iy * self.size + ix] += 1;
        self.total += 1;
        Ok((ix, iy))
    }

    pub fn count(&self, ix: usize, iy: usize) -> u64 {
        self.counts[iy * self.size + ix]
    }

    /// Cells visited at least once.
    pub fn covered(&self) -> usize {
        self.counts.iter().filter(|&&c| c > 0).count()
    }

    pub fn max_count(&self) -> u64 {
        self.counts.iter().copied().max().unwrap_or(0)
    }

    pub fn merge(&mut self, other: &VisitationGrid) -> Result<()> {
        if other.size != self.size {
            return Err(Error::config(format!(
                "cannot merge a {0}x{0} grid into a {1}x{1} grid",
                other.size, self.size
            )));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        self.total += other.total;
        Ok(())
    }

    /// Rows from `iy = 0` upward, comma-separated counts.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for row in self.counts.chunks(self.size.max(1)) {
            let line: Vec<String> = row.iter().map(u64::to_string).collect();
            out.push_str(&line.join(","));
            out.push('\n');
        }
        out
    }
}

/// Grey level for a cell: 255 for unvisited cells, darker with more visits on a
/// log scale normalized by the busiest cell.
fn intensity(count: u64, max: u64) -> u8 {
    if count == 0 {
        return 255;
    }
    let scaled = (255.0 * (count as f64).ln_1p() / (max as f64).ln_1p()).round() as u32;
    (255 - scaled.clamp(1, 255)) as u8
}

/// Plain-text PGM (P2) with highest `y` at the top, one square block per cell.
pub fn render_heatmap(grid: &VisitationGrid) -> Result<String> {
    if grid.size == 0 {
        return Err(Error::config("cannot render an empty grid"));
    }
    let side = grid.size * PIXELS_PER_CELL;
    let max = grid.max_count();
    let mut out = format!("P2\n{side} {side}\n255\n");
    for iy in (0..grid.size).rev() {
        let row: Vec<String> = (0..grid.size)
            .flat_map(|ix| {
                let v = intensity(grid.count(ix, iy), max).to_string();
                std::iter::repeat_n(v, PIXELS_PER_CELL)
            })
            .collect();
        let line = row.join(" ");
        for _ in 0..PIXELS_PER_CELL {
            out.push_str(&line);
            out.push('\n');
        }
    }
    Ok(out)
}

pub const MAX_TRAJECTORY_POINTS: usize = 51;

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub grad_step: usize,
    pub subnet: Option<usize>,
    pub episode_return: f64,
    pub success: bool,
    pub positions: Vec<[f64; 2]>,
}

impl Trajectory {
    /// `grad_step <TAB> subnet <TAB> return <TAB> success <TAB> x0,y0,x1,y1,...`;
    /// a missing subnet is written as `-`.
    pub fn to_line(&self) -> String {
        let subnet = self.subnet.map_or("-".to_string(), |i| i.to_string());
        let coords: Vec<String> = self
            .positions
            .iter()
            .flat_map(|p| [p[0].to_string(), p[1].to_string()])
            .collect();
        format!(
            "{}\t{}\t{}\t{}\t{}",
            self.grad_step,
            subnet,
            self.episode_return,
            u8::from(self.success),
            coords.join(",")
        )
    }

    pub fn parse_line(line: &str) -> Result<Self> {
        let bad = |reason: &str| Error::Malformed {
            what: "trajectory record",
            reason: reason.to_string(),
        };
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 5 {
            return Err(bad("expected 5 tab-separated fields"));
        }
        let grad_step = fields[0].parse().map_err(|_| bad("bad gradient step"))?;
        let subnet = match fields[1] {
            "-" => None,
            s => Some(s.parse().map_err(|_| bad("bad subnet"))?),
        };
        let episode_return = fields[2].parse().map_err(|_| bad("bad return"))?;
        let success = match fields[3] {
            "0" => false,
            "1" => true,
            _ => return Err(bad("bad success flag")),
        };
        let values: Vec<f64> = if fields[4].is_empty() {
            Vec::new()
        } else {
            fields[4]
                .split(',')
                .map(|v| v.parse().map_err(|_| bad("bad coordinate")))
                .collect::<Result<_>>()?
        };
        if !values.len().is_multiple_of(2) {
            return Err(bad("odd number of coordinates"));
        }
        let positions = values.chunks(2).map(|c| [c[0], c[1]]).collect();
        Ok(Self {
            grad_step,
            subnet,
            episode_return,
            success,
            positions,
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrajectoryLog {
    records: Vec<Trajectory>,
}

impl TrajectoryLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, t: Trajectory) -> Result<()> {
        if t.positions.len() > MAX_TRAJECTORY_POINTS {
            return Err(Error::config(format!(
                "trajectory has {} points, more than {MAX_TRAJECTORY_POINTS}",
                t.positions.len()
            )));
        }
        for p in &t.positions {
            check_unit(p[0], p[1])?;
        }
        self.records.push(t);
        Ok(())
    }

    pub fn records(&self) -> &[Trajectory] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&r.to_line());
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut log = Self::new();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            log.push(Trajectory::parse_line(line)?)?;
        }
        Ok(log)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BiasSample {
    pub estimate: f64,
    pub mc_return: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValueBiasReport {
    pub env_step: usize,
    pub mean_bias: f64,
    /// Standard error of the mean bias across samples.
    pub std_error: f64,
    pub samples: Vec<BiasSample>,
}

impl ValueBiasReport {
    pub fn from_samples(env_step: usize, samples: Vec<BiasSample>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::config("value bias needs at least one sample"));
        }
        let n = samples.len() as f64;
        let diffs: Vec<f64> = samples.iter().map(|s| s.estimate - s.mc_return).collect();
        let mean = diffs.iter().sum::<f64>() / n;
        let std_error = if samples.len() > 1 {
            let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1.0);
            (var / n).sqrt()
        } else {
            0.0
        };
        Ok(Self {
            env_step,
            mean_bias: mean,
            std_error,
            samples,
        })
    }

    pub fn mean_estimate(&self) -> f64 {
        self.samples.iter().map(|s| s.estimate).sum::<f64>() / self.samples.len() as f64
    }

    pub fn mean_return(&self) -> f64 {
        self.samples.iter().map(|s| s.mc_return).sum::<f64>() / self.samples.len() as f64
    }

    /// `env_step <TAB> mean_bias <TAB> std_error <TAB> estimate:return,...`
    pub fn to_line(&self) -> String {
        let mut pairs = String::new();
        for (i, s) in self.samples.iter().enumerate() {
            if i > 0 {
                pairs.push(',');
            }
            let _ = write!(pairs, "{}:{}", s.estimate, s.mc_return);
        }
        format!("{}\t{}\t{}\t{}", self.env_step, self.mean_bias, self.std_error, pairs)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BiasConfig {
    pub n_states: usize,
    pub n_rollouts: usize,
    pub horizon: usize,
    pub gamma: f64,
}

impl Default for BiasConfig {
    fn default() -> Self {
        Self {
            n_states: 200,
            n_rollouts: 10,
            horizon: 200,
            gamma: 0.99,
        }
    }
}

impl BiasConfig {
    pub fn validate(&self) -> Result<()> {
        if self.horizon < 1 {
            return Err(Error::config("value-bias horizon must be at least 1"));
        }
        if self.n_states < 1 || self.n_rollouts < 1 {
            return Err(Error::config("value bias needs at least one state and one rollout"));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::config(format!("gamma must lie in (0, 1], got {}", self.gamma)));
        }
        Ok(())
    }
}

/// Discounted return of one rollout that starts from `env` by taking `first`
/// and then follows `policy`, cut after `horizon` steps with no bootstrap.
pub fn discounted_rollout<E: Environment>(
    mut env: E,
    first: &[f64],
    horizon: usize,
    gamma: f64,
    mut policy: impl FnMut(&[f64]) -> Result<Vec<f64>>,
) -> Result<f64> {
    let mut discount = 1.0;
    let mut total = 0.0;
    let mut action = first.to_vec();
    for t in 0..horizon {
        let r = env.step(&action)?;
        total += discount * r.reward;
        discount *= gamma;
        if r.finished() || t + 1 == horizon {
            break;
        }
        action = policy(&r.observation)?;
    }
    Ok(total)
}

/// `E[Q(s,a) - Q^π(s,a)]` over state-action pairs visited by fresh on-policy
/// episodes. `Q(s,a)` is the critic averaged over its subnets; `Q^π` is the
/// mean discounted Monte-Carlo return of `n_rollouts` continuations with the
/// same actor view. The agent's own rng streams are not touched.
pub fn estimate_value_bias<E: Environment>(
    agent: &Agent,
    env: &E,
    config: &BiasConfig,
    env_step: usize,
    rng: &mut ChaCha8Rng,
) -> Result<ValueBiasReport> {
    config.validate()?;
    let actor = agent.actor_strategy();
    let mut samples = Vec::with_capacity(config.n_states);
    while samples.len() < config.n_states {
        let mut live = env.clone();
        let mut obs = live.reset(rng);
        let member = actor.sample_member_with(rng);
        loop {
            let action = agent.act_with(&obs, &member, false, rng)?;
            let obs_row = ArrayView2::from_shape((1, obs.len()), &obs[..]).expect("row");
            let act_row = ArrayView2::from_shape((1, action.len()), &action[..]).expect("row");
            let estimate = agent.mean_value(obs_row, act_row, rng)?[0];
            let mut mc = 0.0;
            for _ in 0..config.n_rollouts {
                mc += discounted_rollout(live.clone(), &action, config.horizon, config.gamma, |o| {
                    agent.act_with(o, &member, false, rng)
                })?;
            }
            samples.push(BiasSample {
                estimate,
                mc_return: mc / config.n_rollouts as f64,
            });
            if samples.len() == config.n_states {
                break;
            }
            let r = live.step(&action)?;
            if r.finished() {
                break;
            }
            obs = r.observation;
        }
    }
    ValueBiasReport::from_samples(env_step, samples)
}

/// Mean return of evaluations in the last sixth of training.
pub fn final_window_return(evals: &[(usize, f64)], total_env_steps: usize) -> Option<f64> {
    let cutoff = total_env_steps - total_env_steps / 6;
    let window: Vec<f64> = evals
        .iter()
        .filter(|(step, _)| *step > cutoff)
        .map(|&(_, r)| r)
        .collect();
    (!window.is_empty()).then(|| window.iter().sum::<f64>() / window.len() as f64)
}

/// Mean over runs of `return / best`.
pub fn normalized_score(returns: &[f64], best: f64) -> Result<f64> {
    if returns.is_empty() {
        return Err(Error::config("normalized score needs at least one run"));
    }
    if !(best > 0.0) {
        return Err(Error::config(format!("best return must be positive, got {best}")));
    }
    Ok(returns.iter().map(|r| r / best).sum::<f64>() / returns.len() as f64)
}

/// Per-sample forward FLOPs: `2·in·out` per linear layer (multiply-add with the
/// bias as initial accumulator), `7·out` per layer norm, `out` per nonlinearity.
pub fn forward_flops(specs: &[LayerSpec]) -> u64 {
    specs
        .iter()
        .map(|s| {
            let (i, o) = (s.input_dim as u64, s.output_dim as u64);
            let ln = if s.layer_norm { 7 * o } else { 0 };
            let act = if s.activation == Activation::Identity { 0 } else { o };
            2 * i * o + ln + act
        })
        .sum()
}

/// Dense-equivalent training cost: masked views run the full dense kernels, and
/// a backward pass costs twice its forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct FlopReport {
    pub critic_forward: u64,
    pub actor_forward: u64,
    /// Critic-network FLOPs of one critic update (target members plus trained members).
    pub critic_update_critic: u64,
    /// Actor forward inside the TD target.
    pub critic_update_actor: u64,
    pub critic_update: u64,
    /// One actor update: actor forward/backward plus the averaged critic passes.
    pub actor_update: u64,
    pub critic_per_env_step: u64,
    pub per_env_step: f64,
    /// Same accounting for a ten-critic ensemble with the same networks and schedule.
    pub ensemble_baseline_per_env_step: f64,
    pub normalized: f64,
    /// Critic parameter slots the optimizer visits per env step.
    pub critic_params_visited_per_env_step: u64,
    /// Expected critic parameter slots actually written per env step.
    pub critic_params_modified_per_env_step: f64,
}

const BASELINE_ENSEMBLE: u64 = 10;

struct Usage {
    update: u64,
    target: u64,
    average: u64,
    masked: bool,
}

fn usage(registry: &StrategyRegistry, role: Role, layout: &Layout, config: &SacConfig) -> Result<Usage> {
    let spec = match role {
        Role::Critic => &config.critic,
        Role::Actor => &config.actor,
    };
    let mut s = registry.build(
        role,
        &BuildContext {
            layout,
            spec,
            mask_seed: 0,
            selector_seed: 0,
        },
    )?;
    let probe = s.update_members();
    let masked = s.resolve(&probe[0])?.is_some();
    Ok(Usage {
        update: probe.len() as u64,
        target: s.target_members().len() as u64,
        average: s.average_members().len() as u64,
        masked,
    })
}

pub fn estimate_flops(config: &SacConfig, obs_dim: usize, act_dim: usize) -> Result<FlopReport> {
    estimate_flops_with(&StrategyRegistry::with_builtins(), config, obs_dim, act_dim)
}

pub fn estimate_flops_with(
    registry: &StrategyRegistry,
    config: &SacConfig,
    obs_dim: usize,
    act_dim: usize,
) -> Result<FlopReport> {
    config.validate()?;
    let critic_specs = LayerSpec::stack(
        obs_dim + act_dim,
        &config.critic_hidden,
        1,
        Activation::Relu,
        config.critic_layer_norm,
    );
    let actor_specs = LayerSpec::stack(obs_dim, &config.actor_hidden, 2 * act_dim, Activation::Relu, config.actor_layer_norm);
    let critic_layout = Layout::new(&critic_specs)?;
    let critic = usage(registry, Role::Critic, &critic_layout, config)?;

    let b = config.batch_size as u64;
    let g = config.replay_ratio as u64;
    let fc = forward_flops(&critic_specs);
    let fa = forward_flops(&actor_specs);

    let critic_update_critic = b * fc * (critic.target + 3 * critic.update);
    let critic_update_actor = b * fa;
    let critic_update = critic_update_critic + critic_update_actor;
    let actor_update = 3 * b * fa + 3 * b * fc * critic.average;
    let per_env_step = (g * critic_update) as f64 + actor_update as f64 / config.policy_delay as f64;

    let ensemble_critic = b * fc * (2 + 3 * BASELINE_ENSEMBLE) + b * fa;
    let ensemble_actor = 3 * b * fa + 3 * b * fc * BASELINE_ENSEMBLE;
    let baseline = (g * ensemble_critic) as f64 + ensemble_actor as f64 / config.policy_delay as f64;

    let n = critic_layout.len() as u64;
    let coverage = critic_layout.coverage().count_ones() as f64;
    let per_update_modified = if critic.masked {
        (n as f64 - coverage) + (1.0 - config.critic.sparsity) * coverage
    } else {
        n as f64
    };

    Ok(FlopReport {
        critic_forward: fc,
        actor_forward: fa,
        critic_update_critic,
        critic_update_actor,
        critic_update,
        actor_update,
        critic_per_env_step: g * critic_update,
        per_env_step,
        ensemble_baseline_per_env_step: baseline,
        normalized: per_env_step / baseline,
        critic_params_visited_per_env_step: g * critic.update * n,
        critic_params_modified_per_env_step: (g * critic.update) as f64 * per_update_modified,
    })
}
