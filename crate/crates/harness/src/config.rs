//! Run configuration: a TOML document with an `[agent]` table, an optional
//! `[maze]` table (or a `maze_config` path to a separate maze file), and
//! per-command sections. Unknown keys are errors; every error names the file
//! and line it refers to.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use omnet_core::agent::SacConfig;
use omnet_core::maze::MazeConfig;
use omnet_core::train::TrainerConfig;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seeds: Vec<u64>,
    pub out: Option<PathBuf>,
    pub total_env_steps: usize,
    pub eval_interval: usize,
    pub eval_episodes: usize,
    /// Per-episode observation noise bound.
    pub noise_scale: f64,
    /// Env steps between intermediate checkpoints; 0 writes only the final one.
    pub checkpoint_interval: usize,
    /// Maze file, relative to the run configuration's directory.
    pub maze_config: Option<PathBuf>,
    pub agent: SacConfig,
    pub maze: Option<MazeConfig>,
    pub ablate: AblateSection,
    pub visitation: VisitationSection,
    pub valuebias: ValueBiasSection,
    pub noise_sweep: NoiseSweepSection,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblateSection {
    pub axis: Option<String>,
    /// Numbers, or `"inf"` for the subnet-count axis.
    pub values: Option<Vec<toml::Value>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VisitationSection {
    pub budgets: Vec<usize>,
}

impl Default for VisitationSection {
    fn default() -> Self {
        Self {
            budgets: vec![100, 500, 1000],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ValueBiasSection {
    pub schedule: Vec<usize>,
    pub n_states: usize,
    pub n_rollouts: usize,
    pub horizon: usize,
}

impl Default for ValueBiasSection {
    fn default() -> Self {
        Self {
            schedule: vec![0, 500, 1000, 1500, 2000],
            n_states: 200,
            n_rollouts: 10,
            horizon: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseSweepSection {
    pub values: Vec<f64>,
}

impl Default for NoiseSweepSection {
    fn default() -> Self {
        Self {
            values: vec![0.0, 0.05, 0.1],
        }
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seeds: vec![0],
            out: None,
            total_env_steps: 2000,
            eval_interval: 100,
            eval_episodes: 10,
            noise_scale: 0.0,
            checkpoint_interval: 0,
            maze_config: None,
            agent: maze_agent(),
            maze: None,
            ablate: AblateSection::default(),
            visitation: VisitationSection::default(),
            valuebias: ValueBiasSection::default(),
            noise_sweep: NoiseSweepSection::default(),
        }
    }
}

/// Agent preset for the maze: narrower networks and a smaller batch than the
/// library defaults so full runs fit a single CPU core. Each OMNet actor
/// subnet sees only a share of the actor updates, hence the larger actor rate.
pub fn maze_agent() -> SacConfig {
    SacConfig {
        batch_size: 64,
        critic_hidden: vec![128, 128],
        actor_hidden: vec![128, 128],
        critic_lr: 3e-3,
        actor_lr: 6e-3,
        alpha_lr: 3e-3,
        target_entropy: Some(-3.2),
        warmup_steps: 500,
        buffer_capacity: 100_000,
        ..SacConfig::default()
    }
}

/// Parsed configuration plus where it came from.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: RunConfig,
    pub maze: MazeConfig,
    pub path: PathBuf,
    text: String,
    maze_source: Option<(PathBuf, String)>,
}

/// 1-based line and column of byte offset `pos`.
fn line_col(text: &str, pos: usize) -> (usize, usize) {
    let before = &text[..pos.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let col = before.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
    (line, col)
}

fn parse_error(path: &Path, text: &str, err: &toml::de::Error) -> anyhow::Error {
    let msg = err.message().trim().replace('\n', " ");
    match err.span() {
        Some(span) => {
            let (line, col) = line_col(text, span.start);
            anyhow!("{}:{line}:{col}: {msg}", path.display())
        }
        None => anyhow!("{}: {msg}", path.display()),
    }
}

/// Line of `key` inside table `section` ("" for the top level), if present.
pub fn locate_key(text: &str, section: &str, key: &str) -> Option<usize> {
    let mut current = String::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if let Some(rest) = line.strip_prefix('[') {
            current = rest.trim_start_matches('[').split(']').next().unwrap_or("").trim().to_string();
            if current == format!("{section}.{key}") || (section.is_empty() && current == key) {
                return Some(i + 1);
            }
            continue;
        }
        if current != section {
            continue;
        }
        if let Some(rest) = line.strip_prefix(key) {
            if rest.trim_start().starts_with('=') {
                return Some(i + 1);
            }
        }
    }
    None
}

/// Splits a dotted field into its innermost table and key, relative to `prefix`.
fn split_field(prefix: &str, field: &str) -> (String, String) {
    let full = if prefix.is_empty() {
        field.to_string()
    } else {
        format!("{prefix}.{field}")
    };
    match full.rsplit_once('.') {
        Some((table, key)) => (table.to_string(), key.to_string()),
        None => (String::new(), full),
    }
}

impl LoadedConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
        Self::from_text(path, text)
    }

    pub fn from_text(path: &Path, text: String) -> Result<Self> {
        let config: RunConfig = toml::from_str(&text).map_err(|e| parse_error(path, &text, &e))?;
        let mut maze_source = None;
        let maze = match (&config.maze_config, &config.maze) {
            (Some(_), Some(_)) => {
                let line = locate_key(&text, "", "maze_config").unwrap_or(1);
                bail!("{}:{line}: give either `maze_config` or a [maze] table, not both", path.display());
            }
            (Some(rel), None) => {
                let maze_path = path.parent().unwrap_or(Path::new(".")).join(rel);
                let maze_text = std::fs::read_to_string(&maze_path)
                    .with_context(|| format!("cannot read maze config {}", maze_path.display()))?;
                let maze: MazeConfig =
                    toml::from_str(&maze_text).map_err(|e| parse_error(&maze_path, &maze_text, &e))?;
                maze_source = Some((maze_path, maze_text));
                maze
            }
            (None, Some(m)) => m.clone(),
            (None, None) => MazeConfig::default(),
        };
        let loaded = Self {
            config,
            maze,
            path: path.to_path_buf(),
            text,
            maze_source,
        };
        loaded.validate()?;
        Ok(loaded)
    }

    /// Error pointing at the line that sets `field` (dotted, relative to `prefix`).
    pub fn field_error(&self, prefix: &str, field: &str, reason: impl std::fmt::Display) -> anyhow::Error {
        let (table, key) = split_field(prefix, field);
        let (path, text, table) = match (&self.maze_source, table.strip_prefix("maze")) {
            (Some((p, t)), Some(rest)) => (p.as_path(), t.as_str(), rest.trim_start_matches('.').to_string()),
            _ => (self.path.as_path(), self.text.as_str(), table),
        };
        match locate_key(text, &table, &key) {
            Some(line) => anyhow!("{}:{line}: `{field}` {reason}", path.display()),
            None => anyhow!("{}: `{field}` {reason} (default value)", path.display()),
        }
    }

    fn core_error(&self, prefix: &str, err: omnet_core::Error) -> anyhow::Error {
        match err {
            omnet_core::Error::InvalidField { field, reason } => {
                self.field_error(prefix, &field, reason)
            }
            other => anyhow!("{}: {other}", self.path.display()),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let c = &self.config;
        c.agent.validate().map_err(|e| self.core_error("agent", e))?;
        self.maze.validate().map_err(|e| self.core_error("maze", e))?;
        if c.total_env_steps < c.agent.warmup_steps {
            return Err(self.field_error("", "total_env_steps", "must be at least agent.warmup_steps"));
        }
        if c.eval_interval > 0 && c.eval_episodes == 0 {
            return Err(self.field_error("", "eval_episodes", "must be positive when eval_interval is set"));
        }
        if !(c.noise_scale >= 0.0 && c.noise_scale.is_finite()) {
            return Err(self.field_error("", "noise_scale", "must be a non-negative number"));
        }
        check_seeds(&c.seeds).map_err(|e| self.field_error("", "seeds", e))?;
        if c.valuebias.horizon < 1 {
            return Err(self.field_error("valuebias", "horizon", "must be at least 1"));
        }
        if c.valuebias.n_states < 1 || c.valuebias.n_rollouts < 1 {
            return Err(self.field_error("valuebias", "n_states", "and n_rollouts must be at least 1"));
        }
        if c.noise_sweep.values.iter().any(|v| !(*v >= 0.0)) {
            return Err(self.field_error("noise_sweep", "values", "must all be non-negative"));
        }
        Ok(())
    }

    pub fn trainer_config(&self, audit: bool) -> TrainerConfig {
        TrainerConfig {
            total_env_steps: self.config.total_env_steps,
            eval_interval: self.config.eval_interval,
            eval_episodes: self.config.eval_episodes,
            audit,
        }
    }

    /// The fully resolved configuration as TOML, maze inlined.
    pub fn resolved_toml(&self) -> Result<String> {
        let mut c = self.config.clone();
        c.maze_config = None;
        c.maze = Some(self.maze.clone());
        Ok(toml::to_string(&c)?)
    }
}

pub fn check_seeds(seeds: &[u64]) -> std::result::Result<(), String> {
    if seeds.is_empty() {
        return Err("must list at least one seed".into());
    }
    let mut sorted = seeds.to_vec();
    sorted.sort_unstable();
    if sorted.windows(2).any(|w| w[0] == w[1]) {
        return Err("must be distinct".into());
    }
    Ok(())
}

/// Parses `1,2,5` or `1-4` style seed lists.
pub fn parse_seeds(s: &str) -> Result<Vec<u64>> {
    let mut seeds = Vec::new();
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        match part.split_once('-') {
            Some((a, b)) => {
                let (a, b): (u64, u64) = (a.trim().parse()?, b.trim().parse()?);
                if a > b {
                    bail!("empty seed range `{part}`");
                }
                seeds.extend(a..=b);
            }
            None => seeds.push(part.parse().with_context(|| format!("bad seed `{part}`"))?),
        }
    }
    check_seeds(&seeds).map_err(|e| anyhow!("seed list {e}"))?;
    Ok(seeds)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn load(text: &str) -> Result<LoadedConfig> {
        LoadedConfig::from_text(Path::new("run.toml"), text.to_string())
    }

    #[test]
    fn empty_document_gives_defaults() {
        let c = load("").unwrap();
        assert_eq!(c.config, RunConfig::default());
        assert_eq!(c.maze, MazeConfig::default());
    }

    #[test]
    fn unknown_key_reports_line() {
        let err = load("total_env_steps = 3000\n\n[agent]\ngamma = 0.9\nbogus = 1\n").unwrap_err();
        let msg = err.to_string();
        assert!(msg.starts_with("run.toml:5:"), "{msg}");
        assert!(!msg.contains('\n'));
    }

    #[test]
    fn invalid_value_reports_line() {
        let err = load("[agent]\nbatch_size = 8\ngamma = 1.5\n").unwrap_err();
        assert!(err.to_string().starts_with("run.toml:3: `gamma`"), "{err}");
        let err = load("seeds = [1, 1]\n").unwrap_err();
        assert!(err.to_string().starts_with("run.toml:1: `seeds`"), "{err}");
        let err = load("[agent.critic]\nkind = \"omnet\"\nsparsity = 1.0\n").unwrap_err();
        assert!(err.to_string().starts_with("run.toml:3: `critic.sparsity`"), "{err}");
        let err = load("[maze]\ngoal_radius = -1\n").unwrap_err();
        assert!(err.to_string().starts_with("run.toml:2: `goal_radius`"), "{err}");
    }

    #[test]
    fn steps_below_warmup_rejected() {
        assert!(load("total_env_steps = 10\n").is_err());
    }

    #[test]
    fn resolved_round_trip() {
        let c = load("seeds = [3, 4]\n[agent]\ngamma = 0.95\n[maze]\nmax_steps = 30\n").unwrap();
        let again = load(&c.resolved_toml().unwrap()).unwrap();
        assert_eq!(again.config.agent, c.config.agent);
        assert_eq!(again.maze, c.maze);
        assert_eq!(again.config.seeds, vec![3, 4]);
    }

    #[test]
    fn seed_lists() {
        assert_eq!(parse_seeds("1,2,5").unwrap(), vec![1, 2, 5]);
        assert_eq!(parse_seeds("0-3").unwrap(), vec![0, 1, 2, 3]);
        assert!(parse_seeds("1,1").is_err());
        assert!(parse_seeds("").is_err());
        assert!(parse_seeds("x").is_err());
    }

    #[test]
    fn key_location() {
        let text = "a = 1\n[agent]\ngamma = 2\n[agent.critic]\nkind = \"x\"\n";
        assert_eq!(locate_key(text, "", "a"), Some(1));
        assert_eq!(locate_key(text, "agent", "gamma"), Some(3));
        assert_eq!(locate_key(text, "agent.critic", "kind"), Some(5));
        assert_eq!(locate_key(text, "agent", "critic"), Some(4));
        assert_eq!(locate_key(text, "agent", "tau"), None);
    }
}
