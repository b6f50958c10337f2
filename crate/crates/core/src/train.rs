//! Environment-interaction loop: warm-up, per-episode subnet rollouts, replay-ratio
//! updates, periodic deterministic evaluation, and checkpoints that resume exactly.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::agent::{derive_seed, Agent, SacConfig, Transition};
use crate::bits::BitMask;
use crate::codec::{Decoder, Encoder};
use crate::env::Environment;
use crate::error::{Error, Result};
use crate::strategy::{MaskRef, Member};

const CHECKPOINT_MAGIC: &[u8] = b"OMNCKPT1";

mod tags {
    pub const ENV: u64 = 700;
    pub const WARMUP: u64 = 701;
    pub const EVAL: u64 = 702;
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainerConfig {
    pub total_env_steps: usize,
    /// Env steps between evaluations; 0 disables evaluation.
    pub eval_interval: usize,
    pub eval_episodes: usize,
    /// Check every masked update for writes outside its mask.
    pub audit: bool,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self {
            total_env_steps: 2000,
            eval_interval: 100,
            eval_episodes: 10,
            audit: false,
        }
    }
}

/// What happened during one env step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    /// 1-based count of env steps taken so far.
    pub env_step: usize,
    /// Critic updates performed so far.
    pub grad_steps: usize,
    pub warmup: bool,
    pub reward: f64,
    /// Mean loss over this step's critic updates, if any ran.
    pub critic_loss: Option<f64>,
    pub actor_loss: Option<f64>,
    pub alpha: f64,
    pub critic_updates: usize,
    pub actor_updates: usize,
    pub critic_visited: usize,
    pub critic_modified: usize,
    pub actor_visited: usize,
    pub actor_modified: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeRecord {
    pub index: usize,
    /// Env step count when the episode began.
    pub start_step: usize,
    pub end_step: usize,
    /// Critic updates performed when the episode ended.
    pub grad_steps: usize,
    /// Actor subnet that drove the episode; `None` for dense or per-call views.
    pub subnet: Option<usize>,
    pub episode_return: f64,
    pub length: usize,
    pub success: bool,
    /// True states from reset through the last step.
    pub path: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalRecord {
    pub env_step: usize,
    pub grad_steps: usize,
    /// Mean return; with several actor subnets, the mean of per-subnet means.
    pub mean_return: f64,
    pub min_return: f64,
    pub max_return: f64,
    pub success_rate: f64,
    /// Mean return of each actor subnet (empty for a dense actor).
    pub per_subnet: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingLog {
    pub steps: Vec<StepRecord>,
    /// Every critic loss in update order.
    pub critic_losses: Vec<f64>,
    pub episodes: Vec<EpisodeRecord>,
    pub evals: Vec<EvalRecord>,
}

impl TrainingLog {
    /// First env step that completed a successful episode at or after `from_step`.
    pub fn first_success_after(&self, from_step: usize) -> Option<usize> {
        self.episodes
            .iter()
            .find(|e| e.success && e.end_step > from_step)
            .map(|e| e.end_step)
    }
}

#[derive(Debug, Clone)]
struct Episode {
    obs: Vec<f64>,
    member: Member,
    episode_return: f64,
    length: usize,
    start_step: usize,
    path: Vec<Vec<f64>>,
}

pub struct Trainer<E: Environment> {
    agent: Agent,
    env: E,
    eval_env: E,
    config: TrainerConfig,
    seed: u64,
    env_rng: ChaCha8Rng,
    warmup_rng: ChaCha8Rng,
    env_step: usize,
    grad_steps: usize,
    episode: Option<Episode>,
    log: TrainingLog,
}

impl<E: Environment> Trainer<E> {
    pub fn new(sac: SacConfig, env: E, config: TrainerConfig, seed: u64) -> Result<Self> {
        let agent = Agent::new(sac, env.observation_dim(), env.action_dim(), env.action_bound(), seed)?;
        Self::with_agent(agent, env, config, seed)
    }

    pub fn with_agent(mut agent: Agent, env: E, config: TrainerConfig, seed: u64) -> Result<Self> {
        if config.eval_interval > 0 && config.eval_episodes == 0 {
            return Err(Error::config("eval_episodes must be positive when evaluation is enabled"));
        }
        if agent.obs_dim() != env.observation_dim() || agent.act_dim() != env.action_dim() {
            return Err(Error::config("agent and environment dimensions differ"));
        }
        if config.audit {
            agent.enable_isolation_audit();
        }
        Ok(Self {
            eval_env: env.clone(),
            env,
            agent,
            config,
            seed,
            env_rng: ChaCha8Rng::seed_from_u64(derive_seed(seed, tags::ENV)),
            warmup_rng: ChaCha8Rng::seed_from_u64(derive_seed(seed, tags::WARMUP)),
            env_step: 0,
            grad_steps: 0,
            episode: None,
            log: TrainingLog::default(),
        })
    }

    pub fn agent(&self) -> &Agent {
        &self.agent
    }

    pub fn agent_mut(&mut self) -> &mut Agent {
        &mut self.agent
    }

    pub fn env(&self) -> &E {
        &self.env
    }

    /// Prototype environment used for evaluation and diagnostics.
    pub fn eval_env(&self) -> &E {
        &self.eval_env
    }

    pub fn config(&self) -> &TrainerConfig {
        &self.config
    }

    pub fn log(&self) -> &TrainingLog {
        &self.log
    }

    pub fn into_log(self) -> TrainingLog {
        self.log
    }

    pub fn env_step(&self) -> usize {
        self.env_step
    }

    pub fn grad_steps(&self) -> usize {
        self.grad_steps
    }

    pub fn is_done(&self) -> bool {
        self.env_step >= self.config.total_env_steps
    }

    fn begin_episode(&mut self) -> Episode {
        let obs = self.env.reset(&mut self.env_rng);
        let member = self.agent.actor_strategy_mut().sample_member();
        Episode {
            obs,
            member,
            episode_return: 0.0,
            length: 0,
            start_step: self.env_step,
            path: vec![self.env.true_state()],
        }
    }

    /// Takes one environment step with its scheduled updates.
    pub fn step(&mut self) -> Result<StepRecord> {
        let mut episode = match self.episode.take() {
            Some(e) => e,
            None => self.begin_episode(),
        };
        let sac = self.agent.config().clone();
        let warmup = self.env_step < sac.warmup_steps;
        let action = if warmup {
            let b = self.env.action_bound();
            (0..self.env.action_dim())
                .map(|_| self.warmup_rng.gen_range(-b..=b))
                .collect()
        } else {
            if self.agent.actor_strategy().resample_per_call() {
                episode.member = self.agent.actor_strategy_mut().sample_member();
            }
            self.agent.act(&episode.obs, &episode.member, false)?
        };

        let result = self.env.step(&action)?;
        self.agent.remember(Transition {
            obs: episode.obs.clone(),
            action,
            reward: result.reward,
            next_obs: result.observation.clone(),
            done: result.done,
        })?;
        self.env_step += 1;
        episode.obs = result.observation.clone();
        episode.episode_return += result.reward;
        episode.length += 1;
        episode.path.push(self.env.true_state());

        let mut record = StepRecord {
            env_step: self.env_step,
            grad_steps: self.grad_steps,
            warmup,
            reward: result.reward,
            critic_loss: None,
            actor_loss: None,
            alpha: self.agent.alpha(),
            critic_updates: 0,
            actor_updates: 0,
            critic_visited: 0,
            critic_modified: 0,
            actor_visited: 0,
            actor_modified: 0,
        };
        if self.agent.buffer().len() >= sac.batch_size {
            let mut loss_sum = 0.0;
            for _ in 0..sac.replay_ratio {
                let batch = self.agent.sample_batch()?;
                let stats = self.agent.critic_update(&batch)?;
                self.log.critic_losses.push(stats.loss);
                loss_sum += stats.loss;
                record.critic_visited += stats.visited;
                record.critic_modified += stats.modified;
                record.critic_updates += 1;
            }
            self.grad_steps += sac.replay_ratio;
            record.critic_loss = Some(loss_sum / sac.replay_ratio as f64);
            if self.env_step.is_multiple_of(sac.policy_delay) {
                let batch = self.agent.sample_batch()?;
                let stats = self.agent.actor_update(&batch)?;
                self.agent.temperature_step(stats.mean_log_prob)?;
                record.actor_loss = Some(stats.loss);
                record.actor_visited = stats.visited;
                record.actor_modified = stats.modified;
                record.actor_updates = 1;
            }
            record.grad_steps = self.grad_steps;
            record.alpha = self.agent.alpha();
        }

        if result.finished() {
            self.log.episodes.push(EpisodeRecord {
                index: self.log.episodes.len(),
                start_step: episode.start_step,
                end_step: self.env_step,
                grad_steps: self.grad_steps,
                subnet: episode.member.subnet_index(),
                episode_return: episode.episode_return,
                length: episode.length,
                success: result.done,
                path: episode.path,
            });
        } else {
            self.episode = Some(episode);
        }

        if self.config.eval_interval > 0 && self.env_step.is_multiple_of(self.config.eval_interval) {
            let eval_seed = derive_seed(derive_seed(self.seed, tags::EVAL), self.env_step as u64);
            let mut eval = evaluate(&self.agent, &self.eval_env, self.config.eval_episodes, eval_seed)?;
            eval.env_step = self.env_step;
            eval.grad_steps = self.grad_steps;
            self.log.evals.push(eval);
        }
        self.log.steps.push(record.clone());
        Ok(record)
    }

    /// Steps until `env_step` reaches `until` (capped at the configured total),
    /// passing each record and the trainer to `observe`.
    pub fn run_until(&mut self, until: usize, mut observe: impl FnMut(&StepRecord, &Self)) -> Result<()> {
        let until = until.min(self.config.total_env_steps);
        while self.env_step < until {
            let record = self.step()?;
            observe(&record, self);
        }
        Ok(())
    }

    pub fn run(&mut self) -> Result<()> {
        self.run_until(self.config.total_env_steps, |_, _| {})
    }

    /// Serializes the complete run state.
    pub fn checkpoint(&self) -> Vec<u8> {
        let mut enc = Encoder::new();
        enc.bytes(CHECKPOINT_MAGIC);
        enc.u64(self.seed);
        enc.usize(self.config.total_env_steps);
        enc.usize(self.config.eval_interval);
        enc.usize(self.config.eval_episodes);
        enc.usize(self.env_step);
        enc.usize(self.grad_steps);
        self.agent.encode(&mut enc);
        self.env.encode_state(&mut enc);
        enc.rng(&self.env_rng);
        enc.rng(&self.warmup_rng);
        match &self.episode {
            None => enc.bool(false),
            Some(e) => {
                enc.bool(true);
                enc.f64s(&e.obs);
                encode_member(&mut enc, &e.member);
                enc.f64(e.episode_return);
                enc.usize(e.length);
                enc.usize(e.start_step);
                encode_path(&mut enc, &e.path);
            }
        }
        encode_log(&mut enc, &self.log);
        enc.into_bytes()
    }

    /// Restores a checkpoint into a trainer built from the same configuration and seed.
    pub fn restore(&mut self, bytes: &[u8]) -> Result<()> {
        let mut dec = Decoder::new("checkpoint", bytes);
        dec.expect_magic(CHECKPOINT_MAGIC)?;
        if dec.u64()? != self.seed {
            return Err(dec.error("seed differs from configuration"));
        }
        let (total, interval, episodes) = (dec.usize()?, dec.usize()?, dec.usize()?);
        if (total, interval, episodes)
            != (self.config.total_env_steps, self.config.eval_interval, self.config.eval_episodes)
        {
            return Err(dec.error("run schedule differs from configuration"));
        }
        self.env_step = dec.usize()?;
        self.grad_steps = dec.usize()?;
        self.agent.decode_into(&mut dec)?;
        self.env.decode_state(&mut dec)?;
        self.env_rng = dec.rng()?;
        self.warmup_rng = dec.rng()?;
        self.episode = if dec.bool()? {
            Some(Episode {
                obs: dec.f64s()?,
                member: decode_member(&mut dec)?,
                episode_return: dec.f64()?,
                length: dec.usize()?,
                start_step: dec.usize()?,
                path: decode_path(&mut dec)?,
            })
        } else {
            None
        };
        self.log = decode_log(&mut dec)?;
        dec.finish()
    }
}

/// Deterministic-policy evaluation. Every actor view plays the same
/// `episodes` episodes (identical reset noise), seeded by `seed`.
pub fn evaluate<E: Environment>(agent: &Agent, env: &E, episodes: usize, seed: u64) -> Result<EvalRecord> {
    if episodes == 0 {
        return Err(Error::config("evaluation needs at least one episode"));
    }
    let strategy = agent.actor_strategy();
    let views: Vec<Option<usize>> = match strategy.subnet_count() {
        Some(n) => (0..n).map(Some).collect(),
        None => vec![None],
    };
    let mut per_view = Vec::with_capacity(views.len());
    let mut all = Vec::with_capacity(views.len() * episodes);
    let mut successes = 0usize;
    for view in &views {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut view_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 1));
        let mut total = 0.0;
        for _ in 0..episodes {
            let mut env = env.clone();
            let mut obs = env.reset(&mut rng);
            let mut ret = 0.0;
            loop {
                let member = match view {
                    Some(i) => strategy.member_for_subnet(*i)?,
                    None => strategy.sample_member_with(&mut view_rng),
                };
                let action = agent.act_with(&obs, &member, true, &mut view_rng)?;
                let r = env.step(&action)?;
                ret += r.reward;
                if r.finished() {
                    successes += usize::from(r.done);
                    break;
                }
                obs = r.observation;
            }
            total += ret;
            all.push(ret);
        }
        per_view.push(total / episodes as f64);
    }
    Ok(EvalRecord {
        env_step: 0,
        grad_steps: 0,
        mean_return: per_view.iter().sum::<f64>() / per_view.len() as f64,
        min_return: all.iter().copied().fold(f64::INFINITY, f64::min),
        max_return: all.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        success_rate: successes as f64 / all.len() as f64,
        per_subnet: if views[0].is_some() { per_view } else { Vec::new() },
    })
}

fn encode_member(enc: &mut Encoder, m: &Member) {
    enc.usize(m.network);
    match &m.mask {
        MaskRef::Dense => enc.u8(0),
        MaskRef::Fixed(i) => {
            enc.u8(1);
            enc.usize(*i);
        }
        MaskRef::Fresh(mask) => {
            enc.u8(2);
            enc.usize(mask.len());
            enc.bytes(&mask.to_bytes());
        }
    }
}

fn decode_member(dec: &mut Decoder) -> Result<Member> {
    let network = dec.usize()?;
    let mask = match dec.u8()? {
        0 => MaskRef::Dense,
        1 => MaskRef::Fixed(dec.usize()?),
        2 => {
            let len = dec.usize()?;
            let bytes = dec.bytes(len.div_ceil(8))?;
            MaskRef::Fresh(BitMask::from_bytes(len, bytes).ok_or_else(|| dec.error("bad episode mask"))?)
        }
        t => return Err(dec.error(format!("unknown member tag {t}"))),
    };
    Ok(Member { network, mask })
}

fn encode_path(enc: &mut Encoder, path: &[Vec<f64>]) {
    enc.usize(path.len());
    for p in path {
        enc.f64s(p);
    }
}

fn decode_path(dec: &mut Decoder) -> Result<Vec<Vec<f64>>> {
    let n = dec.usize()?;
    (0..n).map(|_| dec.f64s()).collect()
}

fn encode_opt(enc: &mut Encoder, v: Option<f64>) {
    enc.bool(v.is_some());
    enc.f64(v.unwrap_or(0.0));
}

fn decode_opt(dec: &mut Decoder) -> Result<Option<f64>> {
    let some = dec.bool()?;
    let v = dec.f64()?;
    Ok(some.then_some(v))
}

fn encode_log(enc: &mut Encoder, log: &TrainingLog) {
    enc.usize(log.steps.len());
    for s in &log.steps {
        enc.usize(s.env_step);
        enc.usize(s.grad_steps);
        enc.bool(s.warmup);
        enc.f64(s.reward);
        encode_opt(enc, s.critic_loss);
        encode_opt(enc, s.actor_loss);
        enc.f64(s.alpha);
        for v in [
            s.critic_updates,
            s.actor_updates,
            s.critic_visited,
            s.critic_modified,
            s.actor_visited,
            s.actor_modified,
        ] {
            enc.usize(v);
        }
    }
    enc.f64s(&log.critic_losses);
    enc.usize(log.episodes.len());
    for e in &log.episodes {
        enc.usize(e.index);
        enc.usize(e.start_step);
        enc.usize(e.end_step);
        enc.usize(e.grad_steps);
        enc.bool(e.subnet.is_some());
        enc.usize(e.subnet.unwrap_or(0));
        enc.f64(e.episode_return);
        enc.usize(e.length);
        enc.bool(e.success);
        encode_path(enc, &e.path);
    }
    enc.usize(log.evals.len());
    for e in &log.evals {
        enc.usize(e.env_step);
        enc.usize(e.grad_steps);
        enc.f64(e.mean_return);
        enc.f64(e.min_return);
        enc.f64(e.max_return);
        enc.f64(e.success_rate);
        enc.f64s(&e.per_subnet);
    }
}

fn decode_log(dec: &mut Decoder) -> Result<TrainingLog> {
    let mut log = TrainingLog::default();
    for _ in 0..dec.usize()? {
        log.steps.push(StepRecord {
            env_step: dec.usize()?,
            grad_steps: dec.usize()?,
            warmup: dec.bool()?,
            reward: dec.f64()?,
            critic_loss: decode_opt(dec)?,
            actor_loss: decode_opt(dec)?,
            alpha: dec.f64()?,
            critic_updates: dec.usize()?,
            actor_updates: dec.usize()?,
            critic_visited: dec.usize()?,
            critic_modified: dec.usize()?,
            actor_visited: dec.usize()?,
            actor_modified: dec.usize()?,
        });
    }
    log.critic_losses = dec.f64s()?;
    for _ in 0..dec.usize()? {
        let index = dec.usize()?;
        let start_step = dec.usize()?;
        let end_step = dec.usize()?;
        let grad_steps = dec.usize()?;
        let has_subnet = dec.bool()?;
        let subnet = dec.usize()?;
        log.episodes.push(EpisodeRecord {
            index,
            start_step,
            end_step,
            grad_steps,
            subnet: has_subnet.then_some(subnet),
            episode_return: dec.f64()?,
            length: dec.usize()?,
            success: dec.bool()?,
            path: decode_path(dec)?,
        });
    }
    for _ in 0..dec.usize()? {
        log.evals.push(EvalRecord {
            env_step: dec.usize()?,
            grad_steps: dec.usize()?,
            mean_return: dec.f64()?,
            min_return: dec.f64()?,
            max_return: dec.f64()?,
            success_rate: dec.f64()?,
            per_subnet: dec.f64s()?,
        });
    }
    Ok(log)
}
