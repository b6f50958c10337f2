use ndarray::{Array1, Array2};
use rand::Rng;

use crate::codec::{Decoder, Encoder};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub obs: Vec<f64>,
    pub action: Vec<f64>,
    pub reward: f64,
    pub next_obs: Vec<f64>,
    /// True only when the episode terminated, never on a time limit.
    pub done: bool,
}

/// A sampled minibatch, one row per transition.
#[derive(Debug, Clone)]
pub struct Batch {
    pub obs: Array2<f64>,
    pub actions: Array2<f64>,
    pub rewards: Array1<f64>,
    pub next_obs: Array2<f64>,
    /// 1.0 for terminal transitions.
    pub dones: Array1<f64>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }
}

/// Fixed-capacity ring buffer, sampled uniformly with replacement.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayBuffer {
    obs_dim: usize,
    act_dim: usize,
    capacity: usize,
    inserted: usize,
    obs: Vec<f64>,
    actions: Vec<f64>,
    rewards: Vec<f64>,
    next_obs: Vec<f64>,
    dones: Vec<f64>,
}

impl ReplayBuffer {
    pub fn new(obs_dim: usize, act_dim: usize, capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self {
            obs_dim,
            act_dim,
            capacity,
            inserted: 0,
            obs: Vec::new(),
            actions: Vec::new(),
            rewards: Vec::new(),
            next_obs: Vec::new(),
            dones: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.inserted.min(self.capacity)
    }

    pub fn is_empty(&self) -> bool {
        self.inserted == 0
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Total transitions ever pushed.
    pub fn inserted(&self) -> usize {
        self.inserted
    }

    pub fn push(&mut self, t: Transition) -> Result<()> {
        Error::check_len("transition observation", self.obs_dim, t.obs.len())?;
        Error::check_len("transition next observation", self.obs_dim, t.next_obs.len())?;
        Error::check_len("transition action", self.act_dim, t.action.len())?;
        let done = if t.done { 1.0 } else { 0.0 };
        if self.inserted < self.capacity {
            self.obs.extend_from_slice(&t.obs);
            self.actions.extend_from_slice(&t.action);
            self.next_obs.extend_from_slice(&t.next_obs);
            self.rewards.push(t.reward);
            self.dones.push(done);
        } else {
            let i = self.inserted % self.capacity;
            self.obs[i * self.obs_dim..(i + 1) * self.obs_dim].copy_from_slice(&t.obs);
            self.next_obs[i * self.obs_dim..(i + 1) * self.obs_dim].copy_from_slice(&t.next_obs);
            self.actions[i * self.act_dim..(i + 1) * self.act_dim].copy_from_slice(&t.action);
            self.rewards[i] = t.reward;
            self.dones[i] = done;
        }
        self.inserted += 1;
        Ok(())
    }

    pub fn get(&self, i: usize) -> Option<Transition> {
        if i >= self.len() {
            return None;
        }
        Some(Transition {
            obs: self.obs[i * self.obs_dim..(i + 1) * self.obs_dim].to_vec(),
            action: self.actions[i * self.act_dim..(i + 1) * self.act_dim].to_vec(),
            reward: self.rewards[i],
            next_obs: self.next_obs[i * self.obs_dim..(i + 1) * self.obs_dim].to_vec(),
            done: self.dones[i] == 1.0,
        })
    }

    pub fn sample<R: Rng + ?Sized>(&self, batch_size: usize, rng: &mut R) -> Result<Batch> {
        if self.is_empty() {
            return Err(Error::EmptyBuffer);
        }
        let idx: Vec<usize> = (0..batch_size).map(|_| rng.gen_range(0..self.len())).collect();
        Ok(self.gather(&idx))
    }

    pub fn gather(&self, idx: &[usize]) -> Batch {
        let (od, ad) = (self.obs_dim, self.act_dim);
        let rows = |src: &[f64], d: usize| {
            Array2::from_shape_fn((idx.len(), d), |(r, c)| src[idx[r] * d + c])
        };
        Batch {
            obs: rows(&self.obs, od),
            actions: rows(&self.actions, ad),
            rewards: idx.iter().map(|&i| self.rewards[i]).collect(),
            next_obs: rows(&self.next_obs, od),
            dones: idx.iter().map(|&i| self.dones[i]).collect(),
        }
    }

    pub(crate) fn encode(&self, enc: &mut Encoder) {
        enc.usize(self.obs_dim);
        enc.usize(self.act_dim);
        enc.usize(self.capacity);
        enc.usize(self.inserted);
        enc.f64s(&self.obs);
        enc.f64s(&self.actions);
        enc.f64s(&self.rewards);
        enc.f64s(&self.next_obs);
        enc.f64s(&self.dones);
    }

    pub(crate) fn decode(dec: &mut Decoder) -> Result<Self> {
        let buf = Self {
            obs_dim: dec.usize()?,
            act_dim: dec.usize()?,
            capacity: dec.usize()?,
            inserted: dec.usize()?,
            obs: dec.f64s()?,
            actions: dec.f64s()?,
            rewards: dec.f64s()?,
            next_obs: dec.f64s()?,
            dones: dec.f64s()?,
        };
        let n = buf.len();
        if buf.capacity == 0
            || buf.rewards.len() != n
            || buf.dones.len() != n
            || buf.obs.len() != n * buf.obs_dim
            || buf.next_obs.len() != n * buf.obs_dim
            || buf.actions.len() != n * buf.act_dim
        {
            return Err(dec.error("replay buffer arrays disagree with its size"));
        }
        Ok(buf)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn t(v: f64) -> Transition {
        Transition {
            obs: vec![v, v],
            action: vec![v],
            reward: v,
            next_obs: vec![v + 1.0, v + 1.0],
            done: v > 2.0,
        }
    }

    #[test]
    fn ring_overwrites_oldest() {
        let mut b = ReplayBuffer::new(2, 1, 3);
        for i in 0..5 {
            b.push(t(i as f64)).unwrap();
        }
        assert_eq!(b.len(), 3);
        assert_eq!(b.inserted(), 5);
        let rewards: Vec<f64> = (0..3).map(|i| b.get(i).unwrap().reward).collect();
        assert_eq!(rewards, vec![3.0, 4.0, 2.0]);
    }

    #[test]
    fn empty_buffer_cannot_sample() {
        let b = ReplayBuffer::new(2, 1, 3);
        assert!(matches!(b.sample(4, &mut ChaCha8Rng::seed_from_u64(0)), Err(Error::EmptyBuffer)));
    }

    #[test]
    fn sampled_rows_are_stored_transitions() {
        let mut b = ReplayBuffer::new(2, 1, 10);
        for i in 0..4 {
            b.push(t(i as f64)).unwrap();
        }
        let batch = b.sample(32, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        for r in 0..batch.len() {
            let v = batch.rewards[r];
            assert_eq!(batch.obs[[r, 0]], v);
            assert_eq!(batch.next_obs[[r, 1]], v + 1.0);
            assert_eq!(batch.dones[r], if v > 2.0 { 1.0 } else { 0.0 });
        }
    }

    #[test]
    fn wrong_shapes_rejected() {
        let mut b = ReplayBuffer::new(2, 1, 3);
        let mut bad = t(0.0);
        bad.action = vec![0.0, 0.0];
        assert!(b.push(bad).is_err());
    }
}
