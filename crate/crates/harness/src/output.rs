//! CSV and artifact writers. Every CSV has a header row and a fixed column order.

use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use omnet_core::diagnostics::{Trajectory, TrajectoryLog};
use omnet_core::train::{EpisodeRecord, EvalRecord, StepRecord, TrainingLog};
use serde::Serialize;

pub const STEPS_CSV: &str = "steps.csv";
pub const EPISODES_CSV: &str = "episodes.csv";
pub const EVALS_CSV: &str = "evals.csv";
pub const TRAJECTORIES: &str = "trajectories.txt";
pub const CHECKPOINT: &str = "checkpoint.bin";
pub const RESOLVED_CONFIG: &str = "config.toml";
pub const CRITIC_MASKS: &str = "critic_masks.bin";
pub const ACTOR_MASKS: &str = "actor_masks.bin";

pub fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, bytes).with_context(|| format!("cannot write {}", path.display()))
}

pub fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).with_context(|| format!("cannot create output directory {}", path.display()))
}

/// Serializes `rows` under an explicit header, which is written even when
/// there are no rows.
pub fn csv_bytes_with_header<T: Serialize>(header: &[&str], rows: impl IntoIterator<Item = T>) -> Result<Vec<u8>> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.write_record(header)?;
    for row in rows {
        w.serialize(row)?;
    }
    Ok(w.into_inner().map_err(|e| e.into_error())?)
}

pub fn write_csv<T: Serialize>(path: &Path, header: &[&str], rows: impl IntoIterator<Item = T>) -> Result<()> {
    write_file(path, csv_bytes_with_header(header, rows)?)
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub const STEP_HEADER: &[&str] = &[
    "env_step",
    "grad_steps",
    "warmup",
    "reward",
    "critic_loss",
    "actor_loss",
    "alpha",
    "critic_updates",
    "actor_updates",
    "critic_visited",
    "critic_modified",
    "actor_visited",
    "actor_modified",
];

#[derive(Serialize)]
struct StepRow {
    env_step: usize,
    grad_steps: usize,
    warmup: u8,
    reward: f64,
    critic_loss: String,
    actor_loss: String,
    alpha: f64,
    critic_updates: usize,
    actor_updates: usize,
    critic_visited: usize,
    critic_modified: usize,
    actor_visited: usize,
    actor_modified: usize,
}

impl From<&StepRecord> for StepRow {
    fn from(s: &StepRecord) -> Self {
        Self {
            env_step: s.env_step,
            grad_steps: s.grad_steps,
            warmup: s.warmup as u8,
            reward: s.reward,
            critic_loss: opt(s.critic_loss),
            actor_loss: opt(s.actor_loss),
            alpha: s.alpha,
            critic_updates: s.critic_updates,
            actor_updates: s.actor_updates,
            critic_visited: s.critic_visited,
            critic_modified: s.critic_modified,
            actor_visited: s.actor_visited,
            actor_modified: s.actor_modified,
        }
    }
}

pub const EPISODE_HEADER: &[&str] = &[
    "index",
    "start_step",
    "end_step",
    "grad_steps",
    "subnet",
    "return",
    "length",
    "success",
];

#[derive(Serialize)]
struct EpisodeRow {
    index: usize,
    start_step: usize,
    end_step: usize,
    grad_steps: usize,
    subnet: String,
    episode_return: f64,
    length: usize,
    success: u8,
}

impl From<&EpisodeRecord> for EpisodeRow {
    fn from(e: &EpisodeRecord) -> Self {
        Self {
            index: e.index,
            start_step: e.start_step,
            end_step: e.end_step,
            grad_steps: e.grad_steps,
            subnet: e.subnet.map(|s| s.to_string()).unwrap_or_default(),
            episode_return: e.episode_return,
            length: e.length,
            success: e.success as u8,
        }
    }
}

/// Per-subnet returns go in one `;`-separated column so the column count is fixed.
pub const EVAL_HEADER: &[&str] = &[
    "env_step",
    "grad_steps",
    "mean_return",
    "min_return",
    "max_return",
    "success_rate",
    "subnet_returns",
];

#[derive(Serialize)]
struct EvalRow {
    env_step: usize,
    grad_steps: usize,
    mean_return: f64,
    min_return: f64,
    max_return: f64,
    success_rate: f64,
    subnet_returns: String,
}

impl From<&EvalRecord> for EvalRow {
    fn from(e: &EvalRecord) -> Self {
        Self {
            env_step: e.env_step,
            grad_steps: e.grad_steps,
            mean_return: e.mean_return,
            min_return: e.min_return,
            max_return: e.max_return,
            success_rate: e.success_rate,
            subnet_returns: e.per_subnet.iter().map(f64::to_string).collect::<Vec<_>>().join(";"),
        }
    }
}

pub fn write_steps(path: &Path, steps: &[StepRecord]) -> Result<()> {
    write_csv(path, STEP_HEADER, steps.iter().map(StepRow::from))
}

pub fn write_episodes(path: &Path, episodes: &[EpisodeRecord]) -> Result<()> {
    write_csv(path, EPISODE_HEADER, episodes.iter().map(EpisodeRow::from))
}

pub fn write_evals(path: &Path, evals: &[EvalRecord]) -> Result<()> {
    write_csv(path, EVAL_HEADER, evals.iter().map(EvalRow::from))
}

pub fn episode_trajectory(e: &EpisodeRecord) -> Trajectory {
    Trajectory {
        grad_step: e.grad_steps,
        subnet: e.subnet,
        episode_return: e.episode_return,
        success: e.success,
        positions: e.path.iter().map(|p| [p[0], p[1]]).collect(),
    }
}

/// Training episodes as trajectory records, skipping warm-up episodes.
pub fn trajectories(log: &TrainingLog, warmup_steps: usize) -> Result<TrajectoryLog> {
    let mut out = TrajectoryLog::new();
    for e in log.episodes.iter().filter(|e| e.start_step >= warmup_steps) {
        out.push(episode_trajectory(e))?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_tables_keep_header() {
        let bytes = csv_bytes_with_header(EVAL_HEADER, Vec::<EvalRow>::new()).unwrap();
        assert_eq!(
            String::from_utf8(bytes).unwrap(),
            "env_step,grad_steps,mean_return,min_return,max_return,success_rate,subnet_returns\n"
        );
    }

    #[test]
    fn eval_row_joins_subnets() {
        let e = EvalRecord {
            env_step: 100,
            grad_steps: 2000,
            mean_return: 50.0,
            min_return: 0.0,
            max_return: 100.0,
            success_rate: 0.5,
            per_subnet: vec![100.0, 0.0],
        };
        let bytes = csv_bytes_with_header(EVAL_HEADER, [EvalRow::from(&e)]).unwrap();
        let text = String::from_utf8(bytes).unwrap();
        assert_eq!(text.lines().nth(1), Some("100,2000,50.0,0.0,100.0,0.5,100;0"));
    }

    #[test]
    fn step_row_blank_losses() {
        let s = StepRecord {
            env_step: 1,
            grad_steps: 0,
            warmup: true,
            reward: 0.0,
            critic_loss: None,
            actor_loss: None,
            alpha: 1.0,
            critic_updates: 0,
            actor_updates: 0,
            critic_visited: 0,
            critic_modified: 0,
            actor_visited: 0,
            actor_modified: 0,
        };
        let bytes = csv_bytes_with_header(STEP_HEADER, [StepRow::from(&s)]).unwrap();
        let text = String::from_utf8(bytes).unwrap();
        assert_eq!(text.lines().count(), 2);
        assert_eq!(text.lines().nth(1), Some("1,0,1,0.0,,,1.0,0,0,0,0,0,0"));
    }
}
