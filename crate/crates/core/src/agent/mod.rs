//! Soft actor-critic agent whose critic and actor are subnet strategies.
//!
//! With the `omnet` strategy, each critic step trains one randomly drawn subnet
//! against a target built from the minimum of two other randomly drawn (distinct)
//! subnets of the target network, with the next action taken by a random actor
//! subnet. The actor maximizes the critic value averaged over all subnets.

mod config;
pub mod policy;
mod replay;

pub use config::SacConfig;
pub use replay::{Batch, ReplayBuffer, Transition};

use ndarray::{concatenate, s, Array1, Array2, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::bits::BitMask;
use crate::codec::{Decoder, Encoder};
use crate::error::{Error, Result};
use crate::mask::{masked_backward_batch, masked_forward_batch};
use crate::nn::{init_params, AdamState, Backprop, ForwardTrace, LayerSpec, MlpParams, ParamKind};
use crate::strategy::{BuildContext, Member, Role, StrategyRegistry, SubnetStrategy};
use policy::PolicySample;

/// Deterministic sub-seed for one purpose of a run.
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

mod tags {
    pub const CRITIC_INIT: u64 = 100;
    pub const ACTOR_INIT: u64 = 200;
    pub const CRITIC_MASKS: u64 = 300;
    pub const CRITIC_SELECT: u64 = 301;
    pub const ACTOR_MASKS: u64 = 400;
    pub const ACTOR_SELECT: u64 = 401;
    pub const POLICY_NOISE: u64 = 500;
    pub const REPLAY: u64 = 600;
}

/// One trainable network with optional target copy.
#[derive(Debug, Clone)]
pub struct Network {
    pub params: MlpParams,
    pub target: Option<MlpParams>,
    pub adam: AdamState,
}

/// Runs `member`'s view of `params` on a batch.
fn member_forward(
    params: &MlpParams,
    mask: Option<&BitMask>,
    inputs: ArrayView2<f64>,
) -> Result<(Array2<f64>, ForwardTrace)> {
    match mask {
        Some(m) => masked_forward_batch(params, m, inputs),
        None => params.forward_batch(inputs),
    }
}

fn member_backward(
    params: &MlpParams,
    mask: Option<&BitMask>,
    trace: &ForwardTrace,
    output_grad: ArrayView2<f64>,
) -> Result<Backprop> {
    match mask {
        Some(m) => masked_backward_batch(params, m, trace, output_grad),
        None => params.backward_batch(trace, output_grad),
    }
}

fn column(a: Array2<f64>) -> Array1<f64> {
    a.column(0).to_owned()
}

/// TD target and the pieces it was built from.
#[derive(Debug, Clone)]
pub struct TdTarget {
    pub values: Array1<f64>,
    /// Target-network estimate `Q(s', a')` of each member entering the minimum.
    pub estimates: Vec<Array1<f64>>,
    pub next_log_prob: Array1<f64>,
    /// Temperature used in the entropy term (0 with entropy off).
    pub alpha: f64,
}

/// `r + γ(1 - done)(min_k Q_k - α log π)` for one transition.
pub fn combine_td_target(reward: f64, done: bool, gamma: f64, estimates: &[f64], alpha: f64, log_prob: f64) -> f64 {
    let min = estimates.iter().copied().fold(f64::INFINITY, f64::min);
    let cont = if done { 0.0 } else { 1.0 };
    reward + gamma * cont * (min - alpha * log_prob)
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct CriticStats {
    pub loss: f64,
    /// Parameter slots the optimizer visited.
    pub visited: usize,
    /// Parameter slots the optimizer wrote.
    pub modified: usize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ActorStats {
    pub loss: f64,
    pub mean_log_prob: f64,
    pub visited: usize,
    pub modified: usize,
}

/// Counts of masked updates checked for leakage into inactive parameters.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct IsolationReport {
    pub checked_updates: usize,
    pub checked_indices: usize,
    pub violations: usize,
}

struct Snapshot {
    theta: Vec<f64>,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Snapshot {
    fn take(net: &Network) -> Self {
        Self {
            theta: net.params.theta.clone(),
            m: net.adam.m.clone(),
            v: net.adam.v.clone(),
        }
    }

    fn audit(&self, net: &Network, mask: &BitMask, report: &mut IsolationReport) {
        report.checked_updates += 1;
        for j in (0..mask.len()).filter(|&j| !mask.get(j)) {
            report.checked_indices += 1;
            if self.theta[j].to_bits() != net.params.theta[j].to_bits()
                || self.m[j].to_bits() != net.adam.m[j].to_bits()
                || self.v[j].to_bits() != net.adam.v[j].to_bits()
            {
                report.violations += 1;
            }
        }
    }
}

pub struct Agent {
    config: SacConfig,
    obs_dim: usize,
    act_dim: usize,
    action_bound: f64,
    target_entropy: f64,
    critics: Vec<Network>,
    critic_strategy: Box<dyn SubnetStrategy>,
    actor: Network,
    actor_strategy: Box<dyn SubnetStrategy>,
    log_alpha: f64,
    alpha_adam: AdamState,
    noise_rng: ChaCha8Rng,
    replay_rng: ChaCha8Rng,
    buffer: ReplayBuffer,
    audit: Option<IsolationReport>,
}

impl std::fmt::Debug for Agent {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Agent")
            .field("critic", &self.critic_strategy.name())
            .field("actor", &self.actor_strategy.name())
            .field("alpha", &self.alpha())
            .field("buffer", &self.buffer.len())
            .finish()
    }
}

impl Agent {
    pub fn new(config: SacConfig, obs_dim: usize, act_dim: usize, action_bound: f64, seed: u64) -> Result<Self> {
        Self::with_registry(&StrategyRegistry::with_builtins(), config, obs_dim, act_dim, action_bound, seed)
    }

    pub fn with_registry(
        registry: &StrategyRegistry,
        config: SacConfig,
        obs_dim: usize,
        act_dim: usize,
        action_bound: f64,
        seed: u64,
    ) -> Result<Self> {
        config.validate()?;
        if obs_dim == 0 || act_dim == 0 {
            return Err(Error::config("observation and action dimensions must be positive"));
        }
        if !(action_bound > 0.0) {
            return Err(Error::config("action bound must be positive"));
        }

        let critic_specs = LayerSpec::stack(
            obs_dim + act_dim,
            &config.critic_hidden,
            1,
            crate::nn::Activation::Relu,
            config.critic_layer_norm,
        );
        let actor_specs = LayerSpec::stack(
            obs_dim,
            &config.actor_hidden,
            2 * act_dim,
            crate::nn::Activation::Relu,
            config.actor_layer_norm,
        );

        let critic_layout = crate::nn::Layout::new(&critic_specs)?;
        let critic_strategy = registry.build(
            Role::Critic,
            &BuildContext {
                layout: &critic_layout,
                spec: &config.critic,
                mask_seed: derive_seed(seed, tags::CRITIC_MASKS),
                selector_seed: derive_seed(seed, tags::CRITIC_SELECT),
            },
        )?;
        let actor_layout = crate::nn::Layout::new(&actor_specs)?;
        let actor_strategy = registry.build(
            Role::Actor,
            &BuildContext {
                layout: &actor_layout,
                spec: &config.actor,
                mask_seed: derive_seed(seed, tags::ACTOR_MASKS),
                selector_seed: derive_seed(seed, tags::ACTOR_SELECT),
            },
        )?;

        let critics = (0..critic_strategy.network_count())
            .map(|k| {
                let mut params = init_params(&critic_specs, derive_seed(seed, tags::CRITIC_INIT + k as u64))?;
                if config.critic_zero_head {
                    let last = critic_specs.len() - 1;
                    params.block_mut(last, ParamKind::Weight).unwrap().fill(0.0);
                }
                Ok(Network {
                    target: Some(params.clone()),
                    adam: AdamState::new(params.len(), config.critic_adam()),
                    params,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let actor_params = init_params(&actor_specs, derive_seed(seed, tags::ACTOR_INIT))?;
        let actor = Network {
            target: None,
            adam: AdamState::new(actor_params.len(), config.actor_adam()),
            params: actor_params,
        };

        Ok(Self {
            target_entropy: config.target_entropy.unwrap_or(-(act_dim as f64)),
            log_alpha: config.init_alpha.ln(),
            alpha_adam: AdamState::new(1, config.alpha_adam()),
            buffer: ReplayBuffer::new(obs_dim, act_dim, config.buffer_capacity),
            noise_rng: ChaCha8Rng::seed_from_u64(derive_seed(seed, tags::POLICY_NOISE)),
            replay_rng: ChaCha8Rng::seed_from_u64(derive_seed(seed, tags::REPLAY)),
            config,
            obs_dim,
            act_dim,
            action_bound,
            critics,
            critic_strategy,
            actor,
            actor_strategy,
            audit: None,
        })
    }

    pub fn config(&self) -> &SacConfig {
        &self.config
    }

    pub fn obs_dim(&self) -> usize {
        self.obs_dim
    }

    pub fn act_dim(&self) -> usize {
        self.act_dim
    }

    pub fn action_bound(&self) -> f64 {
        self.action_bound
    }

    pub fn target_entropy(&self) -> f64 {
        self.target_entropy
    }

    /// Current temperature; zero when entropy terms are off.
    pub fn alpha(&self) -> f64 {
        if self.config.entropy_off {
            0.0
        } else {
            self.log_alpha.exp()
        }
    }

    pub fn log_alpha(&self) -> f64 {
        self.log_alpha
    }

    pub fn set_log_alpha(&mut self, log_alpha: f64) {
        self.log_alpha = log_alpha;
    }

    pub fn critics(&self) -> &[Network] {
        &self.critics
    }

    pub fn critics_mut(&mut self) -> &mut [Network] {
        &mut self.critics
    }

    pub fn actor(&self) -> &Network {
        &self.actor
    }

    pub fn actor_mut(&mut self) -> &mut Network {
        &mut self.actor
    }

    pub fn critic_strategy(&self) -> &dyn SubnetStrategy {
        self.critic_strategy.as_ref()
    }

    pub fn critic_strategy_mut(&mut self) -> &mut dyn SubnetStrategy {
        self.critic_strategy.as_mut()
    }

    pub fn actor_strategy(&self) -> &dyn SubnetStrategy {
        self.actor_strategy.as_ref()
    }

    pub fn actor_strategy_mut(&mut self) -> &mut dyn SubnetStrategy {
        self.actor_strategy.as_mut()
    }

    pub fn buffer(&self) -> &ReplayBuffer {
        &self.buffer
    }

    pub fn remember(&mut self, t: Transition) -> Result<()> {
        self.buffer.push(t)
    }

    pub fn sample_batch(&mut self) -> Result<Batch> {
        self.buffer.sample(self.config.batch_size, &mut self.replay_rng)
    }

    /// Starts checking every masked update for writes outside its mask.
    pub fn enable_isolation_audit(&mut self) {
        self.audit = Some(IsolationReport::default());
    }

    pub fn isolation_report(&self) -> Option<IsolationReport> {
        self.audit
    }

    fn gaussian(&mut self, rows: usize) -> Array2<f64> {
        let rng = &mut self.noise_rng;
        Array2::from_shape_simple_fn((rows, self.act_dim), || StandardNormal.sample(rng))
    }

    fn actor_head(&self, member: &Member, obs: ArrayView2<f64>) -> Result<(Array2<f64>, ForwardTrace)> {
        let mask = self.actor_strategy.resolve(member)?;
        member_forward(&self.actor.params, mask, obs)
    }

    /// Action for one observation from the actor view `member`.
    pub fn act(&mut self, obs: &[f64], member: &Member, deterministic: bool) -> Result<Vec<f64>> {
        let mut rng = self.noise_rng.clone();
        let out = self.act_with(obs, member, deterministic, &mut rng);
        self.noise_rng = rng;
        out
    }

    /// [`Agent::act`] drawing policy noise from `rng` instead of the agent's stream.
    pub fn act_with(&self, obs: &[f64], member: &Member, deterministic: bool, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
        Error::check_len("observation", self.obs_dim, obs.len())?;
        let x = ArrayView2::from_shape((1, obs.len()), obs).expect("row vector");
        let (head, _) = self.actor_head(member, x)?;
        let actions = if deterministic {
            policy::mean_action(head.view(), self.action_bound)
        } else {
            let eps = Array2::from_shape_simple_fn((1, self.act_dim), || StandardNormal.sample(rng));
            policy::sample(head.view(), eps, self.action_bound).actions
        };
        Ok(actions.row(0).to_vec())
    }

    /// Like [`Agent::act`] but addressed by subnet index; `None` draws a random view.
    pub fn act_subnet(&mut self, obs: &[f64], subnet: Option<usize>, deterministic: bool) -> Result<Vec<f64>> {
        let member = match subnet {
            Some(i) => self.actor_strategy.member_for_subnet(i)?,
            None => self.actor_strategy.sample_member(),
        };
        self.act(obs, &member, deterministic)
    }

    /// Critic input row: observation followed by the action rescaled to `[-1, 1]`.
    fn critic_inputs(&self, obs: ArrayView2<f64>, actions: ArrayView2<f64>) -> Array2<f64> {
        let scaled = actions.mapv(|a| a / self.action_bound);
        concatenate(Axis(1), &[obs, scaled.view()]).expect("matching batch rows")
    }

    /// Online critic value of `member` for each row.
    pub fn critic_value(&self, member: &Member, obs: ArrayView2<f64>, actions: ArrayView2<f64>) -> Result<Array1<f64>> {
        let x = self.critic_inputs(obs, actions);
        let mask = self.critic_strategy.resolve(member)?;
        Ok(column(member_forward(&self.critics[member.network].params, mask, x.view())?.0))
    }

    fn target_value(&self, member: &Member, x: ArrayView2<f64>) -> Result<Array1<f64>> {
        let net = &self.critics[member.network];
        let params = net.target.as_ref().expect("critics keep a target copy");
        let mask = self.critic_strategy.resolve(member)?;
        Ok(column(member_forward(params, mask, x)?.0))
    }

    /// Mean online critic value over all subnets; per-call strategies draw their
    /// views from `rng`.
    pub fn mean_value(&self, obs: ArrayView2<f64>, actions: ArrayView2<f64>, rng: &mut ChaCha8Rng) -> Result<Array1<f64>> {
        let members = self.critic_strategy.average_members_with(rng);
        let mut acc = Array1::zeros(obs.nrows());
        for m in &members {
            acc += &self.critic_value(m, obs, actions)?;
        }
        Ok(acc / members.len() as f64)
    }

    pub fn td_target(&mut self, batch: &Batch) -> Result<TdTarget> {
        if batch.is_empty() {
            return Err(Error::EmptyBuffer);
        }
        let actor_member = self.actor_strategy.sample_member();
        let (head, _) = self.actor_head(&actor_member, batch.next_obs.view())?;
        let eps = self.gaussian(batch.len());
        let next = policy::sample(head.view(), eps, self.action_bound);

        let x = self.critic_inputs(batch.next_obs.view(), next.actions.view());
        let estimates = self
            .critic_strategy
            .target_members()
            .iter()
            .map(|m| self.target_value(m, x.view()))
            .collect::<Result<Vec<_>>>()?;
        let min = policy::elementwise_min(&estimates);

        let alpha = self.alpha();
        let gamma = self.config.gamma;
        let values = ndarray::Zip::from(&batch.rewards)
            .and(&batch.dones)
            .and(&min)
            .and(&next.log_prob)
            .map_collect(|&r, &d, &q, &lp| r + gamma * (1.0 - d) * (q - alpha * lp));
        Ok(TdTarget {
            values,
            estimates,
            next_log_prob: next.log_prob,
            alpha,
        })
    }

    /// Mean squared TD error of one member against `target`, and its parameter gradient.
    fn critic_loss_grad(&self, member: &Member, x: ArrayView2<f64>, target: &Array1<f64>) -> Result<(f64, Vec<f64>)> {
        let mask = self.critic_strategy.resolve(member)?;
        let params = &self.critics[member.network].params;
        let (q, trace) = member_forward(params, mask, x)?;
        let n = target.len() as f64;
        let diff = &q.column(0) - target;
        let loss = diff.mapv(|d| d * d).sum() / n;
        let grad_out = diff.mapv(|d| 2.0 * d / n).insert_axis(Axis(1));
        let bp = member_backward(params, mask, &trace, grad_out.view())?;
        Ok((loss, bp.params))
    }

    /// One critic step on `batch`: fresh target, update the drawn member(s), sync targets.
    pub fn critic_update(&mut self, batch: &Batch) -> Result<CriticStats> {
        let target = self.td_target(batch)?;
        let x = self.critic_inputs(batch.obs.view(), batch.actions.view());
        let members = self.critic_strategy.update_members();
        let mut stats = CriticStats::default();
        for member in &members {
            let (loss, grad) = self.critic_loss_grad(member, x.view(), &target.values)?;
            let mask = self.critic_strategy.resolve(member)?.cloned();
            let net = &mut self.critics[member.network];
            let snapshot = self.audit.is_some().then(|| Snapshot::take(net));
            stats.modified += net.adam.step(&mut net.params.theta, &grad, mask.as_ref())?;
            stats.visited += net.params.len();
            stats.loss += loss;
            if let (Some(snap), Some(mask), Some(report)) = (snapshot, mask.as_ref(), self.audit.as_mut()) {
                snap.audit(net, mask, report);
            }
        }
        stats.loss /= members.len() as f64;
        self.target_sync();
        Ok(stats)
    }

    /// Policy loss for a given batch and actor member, with its gradient w.r.t. the actor head.
    fn actor_objective(
        &mut self,
        member: &Member,
        obs: ArrayView2<f64>,
    ) -> Result<(f64, Array1<f64>, Array2<f64>, ForwardTrace)> {
        let (head, trace) = self.actor_head(member, obs)?;
        let eps = self.gaussian(obs.nrows());
        let sample: PolicySample = policy::sample(head.view(), eps, self.action_bound);

        let n = obs.nrows();
        let value_members = self.critic_strategy.average_members();
        let k = value_members.len() as f64;
        let x = self.critic_inputs(obs, sample.actions.view());
        let mut q_mean = Array1::<f64>::zeros(n);
        let mut d_actions = Array2::<f64>::zeros((n, self.act_dim));
        let grad_out = Array2::from_elem((n, 1), -1.0 / (k * n as f64));
        for m in &value_members {
            let mask = self.critic_strategy.resolve(m)?;
            let params = &self.critics[m.network].params;
            let (q, tr) = member_forward(params, mask, x.view())?;
            q_mean += &(q.column(0).to_owned() / k);
            let bp = member_backward(params, mask, &tr, grad_out.view())?;
            d_actions.scaled_add(1.0 / self.action_bound, &bp.input.slice(s![.., self.obs_dim..]));
        }

        let alpha = self.alpha();
        let loss = ((&sample.log_prob * alpha) - &q_mean).sum() / n as f64;
        let d_log_prob = Array1::from_elem(n, alpha / n as f64);
        let d_head = sample.head_grad(d_actions.view(), &d_log_prob);
        Ok((loss, sample.log_prob, d_head, trace))
    }

    /// Gradient of the policy loss w.r.t. the actor parameters for `member`,
    /// with the loss value. Consumes policy noise like an update would.
    pub fn actor_loss_grad(&mut self, member: &Member, obs: ArrayView2<f64>) -> Result<(f64, Vec<f64>)> {
        let (loss, _, d_head, trace) = self.actor_objective(member, obs)?;
        let mask = self.actor_strategy.resolve(member)?;
        let bp = member_backward(&self.actor.params, mask, &trace, d_head.view())?;
        Ok((loss, bp.params))
    }

    pub fn actor_update(&mut self, batch: &Batch) -> Result<ActorStats> {
        if batch.is_empty() {
            return Err(Error::EmptyBuffer);
        }
        let member = self
            .actor_strategy
            .update_members()
            .into_iter()
            .next()
            .expect("actor strategies yield one update member");
        let (loss, log_prob, d_head, trace) = self.actor_objective(&member, batch.obs.view())?;
        let mask = self.actor_strategy.resolve(&member)?.cloned();
        let bp = member_backward(&self.actor.params, mask.as_ref(), &trace, d_head.view())?;

        let net = &mut self.actor;
        let snapshot = self.audit.is_some().then(|| Snapshot::take(net));
        let modified = net.adam.step(&mut net.params.theta, &bp.params, mask.as_ref())?;
        if let (Some(snap), Some(mask), Some(report)) = (snapshot, mask.as_ref(), self.audit.as_mut()) {
            snap.audit(net, mask, report);
        }
        Ok(ActorStats {
            loss,
            mean_log_prob: log_prob.mean().unwrap_or(0.0),
            visited: net.params.len(),
            modified,
        })
    }

    /// Temperature step given the batch-mean log-probability of fresh policy actions.
    /// Minimizes `E[-α (log π + target_entropy)]` over `log α`.
    pub fn temperature_step(&mut self, mean_log_prob: f64) -> Result<f64> {
        if self.config.entropy_off {
            return Ok(0.0);
        }
        let alpha = self.log_alpha.exp();
        let grad = -alpha * (mean_log_prob + self.target_entropy);
        let mut la = [self.log_alpha];
        self.alpha_adam.step(&mut la, &[grad], None)?;
        self.log_alpha = la[0];
        Ok(self.alpha())
    }

    /// Temperature step using fresh actions from a random actor view on `batch`.
    pub fn temperature_update(&mut self, batch: &Batch) -> Result<f64> {
        let member = self.actor_strategy.sample_member();
        let (head, _) = self.actor_head(&member, batch.obs.view())?;
        let eps = self.gaussian(batch.len());
        let lp = policy::sample(head.view(), eps, self.action_bound).log_prob;
        self.temperature_step(lp.mean().unwrap_or(0.0))
    }

    /// Polyak averaging `θ̄ ← τθ + (1 - τ)θ̄` for every critic.
    pub fn target_sync(&mut self) {
        let tau = self.config.tau;
        for net in &mut self.critics {
            let target = net.target.as_mut().expect("critics keep a target copy");
            for (t, &p) in target.theta.iter_mut().zip(&net.params.theta) {
                *t = tau * p + (1.0 - tau) * *t;
            }
        }
    }

    pub(crate) fn encode(&self, enc: &mut Encoder) {
        enc.usize(self.obs_dim);
        enc.usize(self.act_dim);
        enc.usize(self.critics.len());
        for net in &self.critics {
            encode_network(enc, net);
        }
        encode_network(enc, &self.actor);
        enc.f64(self.log_alpha);
        encode_adam(enc, &self.alpha_adam);
        self.critic_strategy.encode_state(enc);
        self.actor_strategy.encode_state(enc);
        enc.rng(&self.noise_rng);
        enc.rng(&self.replay_rng);
        self.buffer.encode(enc);
    }

    /// Restores state written by `encode` into an agent built from the same configuration.
    pub(crate) fn decode_into(&mut self, dec: &mut Decoder) -> Result<()> {
        if dec.usize()? != self.obs_dim || dec.usize()? != self.act_dim {
            return Err(dec.error("agent dimensions differ from configuration"));
        }
        if dec.usize()? != self.critics.len() {
            return Err(dec.error("critic count differs from configuration"));
        }
        for net in &mut self.critics {
            decode_network(dec, net)?;
        }
        decode_network(dec, &mut self.actor)?;
        self.log_alpha = dec.f64()?;
        decode_adam(dec, &mut self.alpha_adam)?;
        self.critic_strategy.decode_state(dec)?;
        self.actor_strategy.decode_state(dec)?;
        self.noise_rng = dec.rng()?;
        self.replay_rng = dec.rng()?;
        let buffer = ReplayBuffer::decode(dec)?;
        if buffer.capacity() != self.buffer.capacity() {
            return Err(dec.error("replay capacity differs from configuration"));
        }
        self.buffer = buffer;
        Ok(())
    }
}

fn encode_adam(enc: &mut Encoder, adam: &AdamState) {
    enc.f64s(&adam.m);
    enc.f64s(&adam.v);
    enc.u64(adam.t);
}

fn decode_adam(dec: &mut Decoder, adam: &mut AdamState) -> Result<()> {
    let m = dec.f64s()?;
    let v = dec.f64s()?;
    if m.len() != adam.m.len() || v.len() != adam.v.len() {
        return Err(dec.error("optimizer state length differs from configuration"));
    }
    adam.m = m;
    adam.v = v;
    adam.t = dec.u64()?;
    Ok(())
}

fn encode_layout(enc: &mut Encoder, params: &MlpParams) {
    let specs = params.layout().specs();
    enc.usize(specs.len());
    for s in specs {
        enc.usize(s.input_dim);
        enc.usize(s.output_dim);
        enc.u8(s.activation.code());
        enc.bool(s.layer_norm);
    }
}

fn check_layout(dec: &mut Decoder, params: &MlpParams) -> Result<()> {
    let specs = params.layout().specs();
    if dec.usize()? != specs.len() {
        return Err(dec.error("layer count differs from configuration"));
    }
    for s in specs {
        let din = dec.usize()?;
        let dout = dec.usize()?;
        let act = crate::nn::Activation::from_code(dec.u8()?);
        let ln = dec.bool()?;
        if din != s.input_dim || dout != s.output_dim || act != Some(s.activation) || ln != s.layer_norm {
            return Err(dec.error("layer layout differs from configuration"));
        }
    }
    Ok(())
}

fn encode_network(enc: &mut Encoder, net: &Network) {
    encode_layout(enc, &net.params);
    enc.f64s(&net.params.theta);
    match &net.target {
        Some(t) => {
            enc.bool(true);
            enc.f64s(&t.theta);
        }
        None => enc.bool(false),
    }
    encode_adam(enc, &net.adam);
}

fn decode_network(dec: &mut Decoder, net: &mut Network) -> Result<()> {
    check_layout(dec, &net.params)?;
    let theta = dec.f64s()?;
    if theta.len() != net.params.len() {
        return Err(dec.error("parameter length differs from layout"));
    }
    net.params.theta = theta;
    let has_target = dec.bool()?;
    if has_target != net.target.is_some() {
        return Err(dec.error("target network presence differs from configuration"));
    }
    if let Some(t) = net.target.as_mut() {
        let theta = dec.f64s()?;
        if theta.len() != t.len() {
            return Err(dec.error("target parameter length differs from layout"));
        }
        t.theta = theta;
    }
    decode_adam(dec, &mut net.adam)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::strategy::ModeSpec;
    use rand::Rng;

    fn tiny(critic: ModeSpec, actor: ModeSpec) -> SacConfig {
        SacConfig {
            batch_size: 8,
            critic_hidden: vec![8],
            actor_hidden: vec![8],
            buffer_capacity: 100,
            critic,
            actor,
            ..SacConfig::default()
        }
    }

    fn filled(config: SacConfig, seed: u64) -> Agent {
        let mut agent = Agent::new(config, 2, 2, 0.2, seed).unwrap();
        for i in 0..20 {
            let v = i as f64 / 20.0;
            agent
                .remember(Transition {
                    obs: vec![v, 1.0 - v],
                    action: vec![0.1 * v, -0.05],
                    reward: if i % 7 == 0 { 100.0 } else { 0.0 },
                    next_obs: vec![v + 0.01, 0.9 - v],
                    done: i % 7 == 0,
                })
                .unwrap();
        }
        agent
    }

    #[test]
    fn scalar_target_examples() {
        assert!((combine_td_target(0.0, false, 0.99, &[3.0, 5.0], 0.0, 0.0) - 2.97).abs() < 1e-12);
        assert_eq!(combine_td_target(1.5, true, 0.99, &[3.0, 5.0], 0.7, -2.0), 1.5);
        let full = combine_td_target(0.5, false, 0.9, &[4.0, 2.0], 0.2, -1.5);
        assert!((full - (0.5 + 0.9 * (2.0 + 0.3))).abs() < 1e-12);
    }

    #[test]
    fn td_target_matches_scalar_recomputation() {
        let mut agent = filled(tiny(ModeSpec::omnet(5, 0.5), ModeSpec::omnet(5, 0.5)), 3);
        let batch = agent.sample_batch().unwrap();
        let t = agent.td_target(&batch).unwrap();
        assert_eq!(t.estimates.len(), 2);
        for r in 0..batch.len() {
            let est: Vec<f64> = t.estimates.iter().map(|e| e[r]).collect();
            let expected = combine_td_target(
                batch.rewards[r],
                batch.dones[r] == 1.0,
                0.99,
                &est,
                t.alpha,
                t.next_log_prob[r],
            );
            assert!((t.values[r] - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_error_gives_zero_loss_and_gradient() {
        let agent = filled(tiny(ModeSpec::omnet(3, 0.5), ModeSpec::named("dense")), 1);
        let batch = agent.buffer().gather(&[0, 1, 2, 3]);
        let x = agent.critic_inputs(batch.obs.view(), batch.actions.view());
        let member = Member::subnet(1);
        let q = agent.critic_value(&member, batch.obs.view(), batch.actions.view()).unwrap();
        let (loss, grad) = agent.critic_loss_grad(&member, x.view(), &q).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grad.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn critic_loss_matches_recomputation() {
        let mut agent = filled(tiny(ModeSpec::named("dense_single"), ModeSpec::named("dense")), 5);
        let batch = agent.sample_batch().unwrap();
        // replay the rng-dependent target on a clone of the state
        let before = agent.critics()[0].params.clone();
        let mut shadow = filled(tiny(ModeSpec::named("dense_single"), ModeSpec::named("dense")), 5);
        shadow.sample_batch().unwrap();
        let target = shadow.td_target(&batch).unwrap();
        let stats = agent.critic_update(&batch).unwrap();

        let x = agent.critic_inputs(batch.obs.view(), batch.actions.view());
        let (q, _) = before.forward_batch(x.view()).unwrap();
        let mse = q
            .column(0)
            .iter()
            .zip(&target.values)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            / batch.len() as f64;
        assert!((stats.loss - mse).abs() < 1e-10);
    }

    #[test]
    fn actor_gradient_matches_finite_differences() {
        let config = tiny(ModeSpec::omnet(3, 0.5), ModeSpec::omnet(3, 0.5));
        let member = Member::subnet(1);
        // random actor parameters keep every hidden unit off the relu kink,
        // where zero-initialized biases would otherwise put masked units
        let build = || {
            let mut a = filled(config.clone(), 4);
            let mut rng = ChaCha8Rng::seed_from_u64(8);
            for v in a.actor_mut().params.theta.iter_mut() {
                *v = rng.gen_range(-1.0..1.0);
            }
            a
        };
        let mut base = build();
        let o = base.buffer().gather(&[0, 3, 7, 12]).obs;
        let (_, grad) = base.actor_loss_grad(&member, o.view()).unwrap();
        let loss_at = |j: usize, delta: f64| {
            // identical seeds replay the same policy noise
            let mut a = build();
            a.actor_mut().params.theta[j] += delta;
            a.actor_loss_grad(&member, o.view()).unwrap().0
        };
        let h = 1e-6;
        for (j, g) in grad.iter().enumerate() {
            let fd = (loss_at(j, h) - loss_at(j, -h)) / (2.0 * h);
            let rel = (g - fd).abs() / g.abs().max(fd.abs()).max(1e-4);
            assert!(rel < 1e-4, "param {j}: analytic {g}, numeric {fd}");
        }
    }

    #[test]
    fn critic_update_respects_mask() {
        let mut agent = filled(tiny(ModeSpec::omnet(4, 0.5), ModeSpec::omnet(4, 0.5)), 9);
        agent.enable_isolation_audit();
        for _ in 0..10 {
            let b = agent.sample_batch().unwrap();
            agent.critic_update(&b).unwrap();
            agent.actor_update(&b).unwrap();
        }
        let report = agent.isolation_report().unwrap();
        assert_eq!(report.checked_updates, 20);
        assert!(report.checked_indices > 0);
        assert_eq!(report.violations, 0);
    }

    #[test]
    fn actor_update_leaves_critic_untouched() {
        let mut agent = filled(tiny(ModeSpec::omnet(3, 0.5), ModeSpec::omnet(3, 0.5)), 2);
        let critic_before: Vec<u64> = agent.critics()[0].params.theta.iter().map(|v| v.to_bits()).collect();
        let target_before = agent.critics()[0].target.clone();
        let b = agent.sample_batch().unwrap();
        agent.actor_update(&b).unwrap();
        let critic_after: Vec<u64> = agent.critics()[0].params.theta.iter().map(|v| v.to_bits()).collect();
        assert_eq!(critic_before, critic_after);
        assert_eq!(target_before, agent.critics()[0].target);
    }

    #[test]
    fn polyak_sync() {
        let mut agent = filled(
            SacConfig {
                tau: 1.0,
                ..tiny(ModeSpec::named("dense_double"), ModeSpec::named("dense"))
            },
            4,
        );
        for net in agent.critics_mut() {
            net.params.theta.iter_mut().for_each(|v| *v += 0.5);
        }
        agent.target_sync();
        for net in agent.critics() {
            assert_eq!(net.target.as_ref().unwrap().theta, net.params.theta);
        }
        // already equal: unchanged
        let snapshot = agent.critics()[0].target.clone();
        agent.target_sync();
        assert_eq!(snapshot, agent.critics()[0].target);
    }

    #[test]
    fn polyak_scalar_closed_form() {
        let mut agent = filled(tiny(ModeSpec::named("dense_single"), ModeSpec::named("dense")), 4);
        agent.critics_mut()[0].params.theta[0] = 2.0;
        agent.critics_mut()[0].target.as_mut().unwrap().theta[0] = -1.0;
        agent.target_sync();
        let got = agent.critics()[0].target.as_ref().unwrap().theta[0];
        assert_eq!(got, 0.005 * 2.0 + -0.995);
    }

    #[test]
    fn temperature_fixed_point_and_direction() {
        let mut agent = filled(tiny(ModeSpec::named("dense_single"), ModeSpec::named("dense")), 4);
        let a0 = agent.alpha();
        // log π = -target_entropy: zero gradient
        agent.temperature_step(2.0).unwrap();
        assert_eq!(agent.alpha(), a0);
        // entropy below target (log π high): α grows
        agent.temperature_step(5.0).unwrap();
        assert!(agent.alpha() > a0);
        let a1 = agent.alpha();
        agent.temperature_step(-10.0).unwrap();
        assert!(agent.alpha() < a1);
    }

    #[test]
    fn temperature_matches_scalar_adam() {
        let mut agent = filled(
            SacConfig {
                init_alpha: 0.5,
                alpha_lr: 1e-2,
                ..tiny(ModeSpec::named("dense_single"), ModeSpec::named("dense"))
            },
            4,
        );
        let lp = 1.3;
        agent.temperature_step(lp).unwrap();
        let g = -0.5 * (lp - 2.0);
        let expected = 0.5f64.ln() - 1e-2 * g / (g.abs() + 1e-8);
        assert!((agent.log_alpha() - expected).abs() < 1e-15);
    }

    #[test]
    fn entropy_off_freezes_alpha() {
        let mut agent = filled(
            SacConfig {
                entropy_off: true,
                ..tiny(ModeSpec::named("dense_single"), ModeSpec::named("dense"))
            },
            4,
        );
        assert_eq!(agent.alpha(), 0.0);
        assert_eq!(agent.temperature_step(5.0).unwrap(), 0.0);
    }

    #[test]
    fn deterministic_action_with_zero_head_is_zero() {
        let mut agent = filled(tiny(ModeSpec::named("dense_single"), ModeSpec::named("dense")), 4);
        agent.actor_mut().params.theta.fill(0.0);
        let a = agent.act(&[0.3, 0.4], &Member::dense(0), true).unwrap();
        assert_eq!(a, vec![0.0, 0.0]);
    }

    #[test]
    fn stochastic_actions_reproducible_and_bounded() {
        let cfg = tiny(ModeSpec::omnet(5, 0.5), ModeSpec::omnet(5, 0.5));
        let mut a = filled(cfg.clone(), 8);
        let mut b = filled(cfg, 8);
        for _ in 0..20 {
            let x = a.act_subnet(&[0.5, 0.5], Some(2), false).unwrap();
            let y = b.act_subnet(&[0.5, 0.5], Some(2), false).unwrap();
            assert_eq!(x, y);
            assert!(x.iter().all(|v| v.abs() <= 0.2));
        }
        assert!(matches!(
            a.act_subnet(&[0.5, 0.5], Some(5), false),
            Err(Error::InvalidSubnet { index: 5, count: 5 })
        ));
    }

    #[test]
    fn distinct_subnets_act_differently() {
        let mut agent = filled(tiny(ModeSpec::omnet(5, 0.5), ModeSpec::omnet(5, 0.5)), 8);
        for _ in 0..30 {
            let b = agent.sample_batch().unwrap();
            agent.critic_update(&b).unwrap();
            agent.actor_update(&b).unwrap();
        }
        let actions: Vec<Vec<f64>> = (0..5)
            .map(|i| agent.act_subnet(&[0.5, 0.5], Some(i), true).unwrap())
            .collect();
        assert!(actions.windows(2).any(|w| w[0] != w[1]));
    }

    #[test]
    fn empty_batch_rejected() {
        let mut agent = Agent::new(tiny(ModeSpec::omnet(2, 0.5), ModeSpec::named("dense")), 2, 2, 0.2, 0).unwrap();
        assert!(matches!(agent.sample_batch(), Err(Error::EmptyBuffer)));
    }
}
