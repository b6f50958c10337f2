use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::AdamConfig;
use crate::strategy::ModeSpec;

/// Soft actor-critic hyperparameters plus the critic/actor subnet modes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SacConfig {
    pub gamma: f64,
    /// Critic updates per environment step.
    pub replay_ratio: usize,
    /// Environment steps between actor and temperature updates.
    pub policy_delay: usize,
    pub batch_size: usize,
    pub tau: f64,
    /// Defaults to `-(action dim)` when unset.
    pub target_entropy: Option<f64>,
    pub critic_lr: f64,
    pub actor_lr: f64,
    pub alpha_lr: f64,
    pub init_alpha: f64,
    pub buffer_capacity: usize,
    pub warmup_steps: usize,
    /// Drop every entropy term and freeze the temperature.
    pub entropy_off: bool,
    pub critic_hidden: Vec<usize>,
    pub actor_hidden: Vec<usize>,
    pub critic_layer_norm: bool,
    pub actor_layer_norm: bool,
    /// Start the critic's output layer at zero.
    pub critic_zero_head: bool,
    pub critic: ModeSpec,
    pub actor: ModeSpec,
}

impl Default for SacConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            replay_ratio: 20,
            policy_delay: 1,
            batch_size: 256,
            tau: 0.005,
            target_entropy: None,
            critic_lr: 3e-4,
            actor_lr: 3e-4,
            alpha_lr: 3e-4,
            init_alpha: 1.0,
            buffer_capacity: 1_000_000,
            warmup_steps: 1000,
            entropy_off: false,
            critic_hidden: vec![256, 256],
            actor_hidden: vec![256, 256],
            critic_layer_norm: true,
            actor_layer_norm: false,
            critic_zero_head: false,
            critic: ModeSpec::omnet(5, 0.5),
            actor: ModeSpec::omnet(5, 0.5),
        }
    }
}

impl SacConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |field: &str, reason: String| Err(Error::field(field, reason));
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return fail("gamma", format!("must lie in (0, 1), got {}", self.gamma));
        }
        if self.replay_ratio < 1 {
            return fail("replay_ratio", "must be at least 1".into());
        }
        if self.policy_delay < 1 {
            return fail("policy_delay", "must be at least 1".into());
        }
        if self.batch_size < 1 {
            return fail("batch_size", "must be at least 1".into());
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return fail("tau", format!("must lie in (0, 1], got {}", self.tau));
        }
        for (name, lr) in [("critic_lr", self.critic_lr), ("actor_lr", self.actor_lr), ("alpha_lr", self.alpha_lr)] {
            if !(lr > 0.0 && lr.is_finite()) {
                return fail(name, format!("must be positive, got {lr}"));
            }
        }
        if !(self.init_alpha > 0.0 && self.init_alpha.is_finite()) {
            return fail("init_alpha", format!("must be positive, got {}", self.init_alpha));
        }
        if let Some(t) = self.target_entropy {
            if !t.is_finite() {
                return fail("target_entropy", format!("must be finite, got {t}"));
            }
        }
        if self.buffer_capacity < self.batch_size {
            return fail("buffer_capacity", "must be at least batch_size".into());
        }
        if self.critic_hidden.contains(&0) {
            return fail("critic_hidden", "layer sizes must be positive".into());
        }
        if self.actor_hidden.contains(&0) {
            return fail("actor_hidden", "layer sizes must be positive".into());
        }
        for (role, spec) in [("critic", &self.critic), ("actor", &self.actor)] {
            if spec.subnets < 1 {
                return fail(&format!("{role}.subnets"), "must be at least 1".into());
            }
            if !(0.0..1.0).contains(&spec.sparsity) {
                return fail(&format!("{role}.sparsity"), format!("must lie in [0, 1), got {}", spec.sparsity));
            }
        }
        Ok(())
    }

    pub fn critic_adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.critic_lr,
            ..AdamConfig::default()
        }
    }

    pub fn actor_adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.actor_lr,
            ..AdamConfig::default()
        }
    }

    pub fn alpha_adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.alpha_lr,
            ..AdamConfig::default()
        }
    }
}
