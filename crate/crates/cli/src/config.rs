//! Run configuration files.

use std::path::{Path, PathBuf};

use evolab::cmaes::EsConfig;
use evolab::evdn::TrainerConfig;
use evolab::kinrew::RewardConfig;
use evolab::world::WorldConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

/// Environment variable naming the root under which run directories live.
pub const OUTPUT_ROOT_VAR: &str = "EVOLAB_OUT";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    /// Trainer ticks for `train-evdn`.
    pub ticks: u64,
    /// Generations for `train-cmaes`.
    pub generations: u64,
    /// Trainer ticks between checkpoints.
    pub checkpoint_every: u64,
    /// Generations between CMA-ES checkpoints.
    pub cmaes_checkpoint_every: u64,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection {
            ticks: 50_000,
            generations: 50,
            checkpoint_every: 1_000,
            cmaes_checkpoint_every: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Overrides the seeds of every section when set.
    pub seed: Option<u64>,
    /// Run directory, relative to `EVOLAB_OUT` (or the working directory).
    pub output: PathBuf,
    pub world: WorldConfig,
    pub reward: RewardConfig,
    pub trainer: TrainerConfig,
    pub cmaes: EsConfig,
    pub run: RunSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: None,
            output: PathBuf::from("runs/default"),
            world: WorldConfig::default(),
            reward: RewardConfig::default(),
            trainer: TrainerConfig::default(),
            cmaes: EsConfig::default(),
            run: RunSection::default(),
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str, origin: &str) -> Result<RunConfig, CliError> {
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| {
            let line = e.span().map(|s| line_of(text, s.start));
            CliError::config(origin, line, e.message())
        })?;
        if let Some(seed) = cfg.seed {
            cfg.world.seed = seed;
            cfg.trainer.seed = seed;
            cfg.cmaes.seed = seed;
        }
        let checks: [(&str, evolab::Result<()>); 3] = [
            ("world", cfg.world.validate()),
            ("reward", cfg.reward.validate()),
            ("trainer", cfg.trainer.validate()),
        ];
        for (section, r) in checks {
            if let Err(e) = r {
                let msg = e.to_string();
                return Err(CliError::config(origin, locate(text, section, &msg), &msg));
            }
        }
        if cfg.run.checkpoint_every == 0 || cfg.run.cmaes_checkpoint_every == 0 {
            return Err(CliError::config(origin, locate(text, "run", "checkpoint_every"), "checkpoint intervals must be positive"));
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<RunConfig, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn validate_cmaes(&self) -> Result<(), CliError> {
        self.cmaes.validate().map_err(|e| CliError::Config(format!("[cmaes] {e}")))
    }

    /// SHA-256 of the resolved configuration.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("config serialises");
        hex::encode(Sha256::digest(&canonical))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    /// Run directory under the output root.
    pub fn run_dir(&self) -> PathBuf {
        output_root().join(&self.output)
    }
}

pub fn output_root() -> PathBuf {
    std::env::var_os(OUTPUT_ROOT_VAR).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("."))
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

/// Best-effort line of a validation failure: the first `key =` line inside
/// `[section]` whose key appears in the message.
fn locate(text: &str, section: &str, message: &str) -> Option<usize> {
    let mut current = String::new();
    let mut section_line = None;
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            current = name.trim().to_string();
            if current == section {
                section_line = Some(i + 1);
            }
            continue;
        }
        if current.split('.').next() != Some(section) {
            continue;
        }
        if let Some((key, _)) = line.split_once('=') {
            let key = key.trim();
            if !key.is_empty() && message.contains(key) {
                return Some(i + 1);
            }
        }
    }
    section_line
}
