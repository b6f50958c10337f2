//! Environment interface used by the agent, trainer, and diagnostics.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::codec::{Decoder, Encoder};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub observation: Vec<f64>,
    pub reward: f64,
    /// Terminal success; bootstrapping stops here.
    pub done: bool,
    /// Episode cut by the time limit.
    pub truncated: bool,
}

impl StepResult {
    pub fn finished(&self) -> bool {
        self.done || self.truncated
    }
}

/// Continuous-action episodic environment with a symmetric box action space.
///
/// `Clone` snapshots the full state so rollouts can branch from any point.
pub trait Environment: Clone {
    fn observation_dim(&self) -> usize;
    fn action_dim(&self) -> usize;
    fn action_bound(&self) -> f64;

    /// Starts a new episode and returns the first observation.
    fn reset(&mut self, rng: &mut ChaCha8Rng) -> Vec<f64>;

    fn step(&mut self, action: &[f64]) -> Result<StepResult>;

    /// Noise-free underlying state, for diagnostics.
    fn true_state(&self) -> Vec<f64>;

    fn encode_state(&self, enc: &mut Encoder);
    fn decode_state(&mut self, dec: &mut Decoder) -> Result<()>;
}

/// One-step environment with reward `a₀ + U[-noise, noise]`, so `Q(s, a) = a₀`.
#[derive(Debug, Clone)]
pub struct OneStepEnv {
    pub action_bound: f64,
    pub reward_noise: f64,
    rng: ChaCha8Rng,
    finished: bool,
}

impl OneStepEnv {
    pub fn new(action_bound: f64, reward_noise: f64) -> Self {
        Self {
            action_bound,
            reward_noise,
            rng: ChaCha8Rng::seed_from_u64(0),
            finished: true,
        }
    }

    /// Expected return of `action`.
    pub fn q_value(&self, action: &[f64]) -> f64 {
        action[0].clamp(-self.action_bound, self.action_bound)
    }
}

impl Environment for OneStepEnv {
    fn observation_dim(&self) -> usize {
        1
    }

    fn action_dim(&self) -> usize {
        1
    }

    fn action_bound(&self) -> f64 {
        self.action_bound
    }

    fn reset(&mut self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        self.rng = ChaCha8Rng::seed_from_u64(rng.gen());
        self.finished = false;
        vec![0.0]
    }

    fn step(&mut self, action: &[f64]) -> Result<StepResult> {
        if self.finished {
            return Err(Error::EpisodeFinished);
        }
        Error::check_len("action", 1, action.len())?;
        self.finished = true;
        let noise = if self.reward_noise > 0.0 {
            self.rng.gen_range(-self.reward_noise..=self.reward_noise)
        } else {
            0.0
        };
        Ok(StepResult {
            observation: vec![0.0],
            reward: self.q_value(action) + noise,
            done: true,
            truncated: false,
        })
    }

    fn true_state(&self) -> Vec<f64> {
        vec![0.0]
    }

    fn encode_state(&self, enc: &mut Encoder) {
        enc.rng(&self.rng);
        enc.bool(self.finished);
    }

    fn decode_state(&mut self, dec: &mut Decoder) -> Result<()> {
        self.rng = dec.rng()?;
        self.finished = dec.bool()?;
        Ok(())
    }
}
