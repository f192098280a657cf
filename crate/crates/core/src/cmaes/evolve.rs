use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::CmaState;
use crate::analytics::{run_episode, Controller, EpisodeSetup, EpisodeSummary};
use crate::error::{Error, Result};
use crate::evdn::derive_seed;
use crate::neural::{Architecture, QNetwork};
use crate::par::{self, ExecMode};
use crate::world::{ObsOptions, ReproductionMode, WorldConfig};

pub const CMA_CHECKPOINT_MAGIC: &[u8; 4] = b"EVCM";
pub const CMA_CHECKPOINT_VERSION: u32 = 1;

const INIT_STREAM: u64 = 0xC3A0_0000;
const SAMPLE_STREAM: u64 = 0xC3A1_0000;
const EPISODE_STREAM: u64 = 0xC3A2_0000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitnessStage {
    /// Family size summed over the ticks of the episode.
    Cumulative,
    /// Family size at the end of the episode.
    Final,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EsConfig {
    pub architecture: Architecture,
    pub sigma0: f64,
    /// Population size; `None` uses the dimension default.
    pub lambda: Option<usize>,
    pub episodes_per_candidate: usize,
    pub episode_length: u64,
    /// Stage switch once the median rollout reaches this many births per
    /// family.
    pub switch_births_per_family: f64,
    /// Largest parameter vector accepted.
    pub max_parameters: usize,
    pub observation: ObsOptions,
    pub seed: u64,
    pub exec: ExecMode,
}

impl Default for EsConfig {
    fn default() -> Self {
        EsConfig {
            architecture: Architecture::SmallConv { channels: 2, hidden: 8 },
            sigma0: 0.1,
            lambda: None,
            episodes_per_candidate: 3,
            episode_length: 500,
            switch_births_per_family: 1.0,
            max_parameters: 25_000,
            observation: ObsOptions::default(),
            seed: 0,
            exec: ExecMode::Parallel,
        }
    }
}

impl EsConfig {
    pub fn validate(&self) -> Result<()> {
        self.architecture.validate()?;
        if let Architecture::LargeMlp { .. } = self.architecture {
            return Err(Error::Config(format!(
                "parameter count exceeds CMA-ES guard: {} has {} parameters and only small_conv is allowed",
                self.architecture.name(),
                self.architecture.parameter_count()
            )));
        }
        if self.architecture.parameter_count() > self.max_parameters {
            return Err(Error::Config(format!(
                "parameter count exceeds CMA-ES guard: {} > {}",
                self.architecture.parameter_count(),
                self.max_parameters
            )));
        }
        if !(self.sigma0 > 0.0) {
            return Err(Error::Config("sigma0 must be positive".into()));
        }
        if self.episodes_per_candidate == 0 || self.episode_length == 0 {
            return Err(Error::Config("episodes_per_candidate and episode_length must be positive".into()));
        }
        Ok(())
    }
}

/// Fitness of every founder family in one rollout.
pub fn family_fitness(summary: &EpisodeSummary, families: usize, length: u64, stage: FitnessStage) -> Vec<f64> {
    let size = |t: usize, f: usize| summary.family_sizes.get(t).and_then(|s| s.get(f)).copied().unwrap_or(0);
    (0..families)
        .map(|f| match stage {
            FitnessStage::Cumulative => (0..length as usize).map(|t| size(t, f)).sum::<usize>() as f64,
            FitnessStage::Final => size(length as usize, f) as f64,
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationReport {
    pub generation: u64,
    pub stage: FitnessStage,
    /// Mean fitness over the generation's candidates, per family.
    pub mean_fitness: Vec<f64>,
    /// Best candidate fitness this generation, per family.
    pub max_fitness: Vec<f64>,
    pub best_so_far: Vec<f64>,
    pub median_births_per_family: f64,
    pub sigma: Vec<f64>,
    pub switched: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Elite {
    fitness: f64,
    params: Vec<f64>,
}

/// Five independent search distributions, one per founder family, scored
/// by shared rollouts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evolution {
    world: WorldConfig,
    config: EsConfig,
    states: Vec<CmaState>,
    stage: FitnessStage,
    generation: u64,
    best: Vec<Option<Elite>>,
}

impl Evolution {
    pub fn new(world: WorldConfig, config: EsConfig) -> Result<Evolution> {
        world.validate()?;
        config.validate()?;
        if world.reproduction != ReproductionMode::Asexual {
            return Err(Error::Config("CMA-ES runs only in the asexual world".into()));
        }
        let families = world.founder_count;
        let states = (0..families as u64)
            .map(|f| {
                let init = QNetwork::new(config.architecture, derive_seed(config.seed, INIT_STREAM, f))?;
                let seed = derive_seed(config.seed, SAMPLE_STREAM, f);
                match config.lambda {
                    Some(l) => CmaState::with_lambda(init.params().to_vec(), config.sigma0, l, seed),
                    None => CmaState::new(init.params().to_vec(), config.sigma0, seed),
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Evolution {
            world,
            config,
            states,
            stage: FitnessStage::Cumulative,
            generation: 0,
            best: vec![None; families],
        })
    }

    pub fn generation(&self) -> u64 {
        self.generation
    }

    pub fn stage(&self) -> FitnessStage {
        self.stage
    }

    pub fn config(&self) -> &EsConfig {
        &self.config
    }

    pub fn world_config(&self) -> &WorldConfig {
        &self.world
    }

    pub fn states(&self) -> &[CmaState] {
        &self.states
    }

    /// Best-so-far fitness and parameters of family `f` under the current
    /// stage.
    pub fn best(&self, f: usize) -> Option<(f64, &[f64])> {
        self.best[f].as_ref().map(|e| (e.fitness, e.params.as_slice()))
    }

    /// Networks for every family: the best-so-far candidate, or the mean
    /// before any generation has run.
    pub fn networks(&self) -> Result<Vec<QNetwork>> {
        (0..self.states.len())
            .map(|f| {
                let params = match &self.best[f] {
                    Some(e) => e.params.clone(),
                    None => self.states[f].mean().to_vec(),
                };
                QNetwork::from_params(self.config.architecture, params)
            })
            .collect()
    }

    /// Rollout seeds shared by every candidate index of a generation.
    fn episode_seeds(&self, e: usize) -> (u64, u64) {
        let base = derive_seed(self.config.seed, EPISODE_STREAM, self.generation);
        (derive_seed(base, 0, e as u64), derive_seed(base, 1, e as u64))
    }

    /// Scores candidate set `k` (one parameter vector per family) over the
    /// seeded rollouts; returns mean fitness per family and births per
    /// family of each rollout.
    pub fn evaluate_fitness(&self, candidates: &[&[f64]], stage: FitnessStage) -> Result<(Vec<f64>, Vec<f64>)> {
        let families = self.states.len();
        let nets = candidates
            .iter()
            .map(|p| QNetwork::from_params(self.config.architecture, p.to_vec()))
            .collect::<Result<Vec<_>>>()?;
        let controllers: Vec<Controller> = nets.iter().map(Controller::Greedy).collect();
        let mut total = vec![0.0; families];
        let mut births = Vec::new();
        for e in 0..self.config.episodes_per_candidate {
            let (world_seed, actor_seed) = self.episode_seeds(e);
            let setup = EpisodeSetup {
                world: WorldConfig {
                    seed: world_seed,
                    ..self.world.clone()
                },
                controllers: controllers.clone(),
                length: self.config.episode_length,
                observation: self.config.observation,
                attack_mask: None,
                actor_seed,
                stop_at_fixation: false,
            };
            let summary = run_episode(&setup, None)?;
            for (t, f) in total.iter_mut().zip(family_fitness(&summary, families, self.config.episode_length, stage)) {
                *t += f;
            }
            births.push(summary.births() as f64 / families as f64);
        }
        let n = self.config.episodes_per_candidate as f64;
        Ok((total.into_iter().map(|t| t / n).collect(), births))
    }

    /// Samples, evaluates and updates every family once.
    pub fn step(&mut self) -> Result<GenerationReport> {
        let families = self.states.len();
        let samples: Vec<Vec<Vec<f64>>> = self.states.iter_mut().map(|s| s.sample_generation()).collect();
        let lambda = samples[0].len();
        if samples.iter().any(|s| s.len() != lambda) {
            return Err(Error::Config("families disagree on population size".into()));
        }
        let stage = self.stage;
        let this = &*self;
        let results = par::map_range(self.config.exec, lambda, |k| {
            let set: Vec<&[f64]> = samples.iter().map(|s| s[k].as_slice()).collect();
            this.evaluate_fitness(&set, stage)
        });
        let mut fitness = vec![vec![0.0; lambda]; families];
        let mut births = Vec::new();
        for (k, r) in results.into_iter().enumerate() {
            let (fit, b) = r?;
            for f in 0..families {
                fitness[f][k] = fit[f];
            }
            births.extend(b);
        }

        for f in 0..families {
            let costs: Vec<f64> = fitness[f].iter().map(|x| -x).collect();
            self.states[f].update(&samples[f], &costs)?;
            let (k, &top) = fitness[f]
                .iter()
                .enumerate()
                .fold((0, &f64::MIN), |b, (i, v)| if v > b.1 { (i, v) } else { b });
            if self.best[f].as_ref().is_none_or(|e| top > e.fitness) {
                self.best[f] = Some(Elite {
                    fitness: top,
                    params: samples[f][k].clone(),
                });
            }
        }

        births.sort_by(f64::total_cmp);
        let median = median_sorted(&births);
        let report = GenerationReport {
            generation: self.generation,
            stage,
            mean_fitness: fitness.iter().map(|v| v.iter().sum::<f64>() / lambda as f64).collect(),
            max_fitness: fitness.iter().map(|v| v.iter().cloned().fold(f64::MIN, f64::max)).collect(),
            best_so_far: self.best.iter().map(|e| e.as_ref().map_or(f64::NAN, |e| e.fitness)).collect(),
            median_births_per_family: median,
            sigma: self.states.iter().map(|s| s.sigma()).collect(),
            switched: stage == FitnessStage::Cumulative && median >= self.config.switch_births_per_family,
        };
        if report.switched {
            self.stage = FitnessStage::Final;
            // Scores from the two stages are not comparable.
            self.best = vec![None; families];
        }
        self.generation += 1;
        Ok(report)
    }
}

fn median_sorted(xs: &[f64]) -> f64 {
    match xs.len() {
        0 => f64::NAN,
        n if n % 2 == 1 => xs[n / 2],
        n => 0.5 * (xs[n / 2 - 1] + xs[n / 2]),
    }
}

fn write_f64s<W: Write>(out: &mut W, xs: &[f64]) -> Result<()> {
    out.write_all(&(xs.len() as u64).to_le_bytes())?;
    for x in xs {
        out.write_all(&x.to_le_bytes())?;
    }
    Ok(())
}

fn read_f64s<R: Read>(input: &mut R, limit: usize) -> Result<Vec<f64>> {
    let mut b = [0u8; 8];
    input.read_exact(&mut b)?;
    let n = u64::from_le_bytes(b) as usize;
    if n > limit {
        return Err(Error::Format(format!("array of {n} values exceeds {limit}")));
    }
    let mut bytes = vec![0u8; n * 8];
    input.read_exact(&mut bytes)?;
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect())
}

/// Checkpoint layout: magic `EVCM`, version u32, JSON metadata length u64,
/// the JSON metadata, then per family the covariance, eigenbasis and scales
/// as length-prefixed little-endian f64 arrays.
pub fn save_evolution(evo: &Evolution, path: &Path) -> Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut out = BufWriter::new(File::create(&tmp)?);
        let meta = serde_json::to_vec(evo)?;
        out.write_all(CMA_CHECKPOINT_MAGIC)?;
        out.write_all(&CMA_CHECKPOINT_VERSION.to_le_bytes())?;
        out.write_all(&(meta.len() as u64).to_le_bytes())?;
        out.write_all(&meta)?;
        for s in &evo.states {
            for m in s.matrices() {
                write_f64s(&mut out, m)?;
            }
        }
        out.flush()?;
    }
    std::fs::rename(tmp, path)?;
    Ok(())
}

pub fn load_evolution(path: &Path) -> Result<Evolution> {
    let mut input = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    input.read_exact(&mut magic)?;
    if &magic != CMA_CHECKPOINT_MAGIC {
        return Err(Error::Format("not a CMA-ES checkpoint (bad magic)".into()));
    }
    let mut b4 = [0u8; 4];
    input.read_exact(&mut b4)?;
    let version = u32::from_le_bytes(b4);
    if version != CMA_CHECKPOINT_VERSION {
        return Err(Error::Format(format!("unsupported CMA-ES checkpoint version {version}")));
    }
    let mut b8 = [0u8; 8];
    input.read_exact(&mut b8)?;
    let mut meta = vec![0u8; u64::from_le_bytes(b8) as usize];
    input.read_exact(&mut meta)?;
    let mut evo: Evolution = serde_json::from_slice(&meta)?;
    evo.config.validate()?;
    for s in &mut evo.states {
        let d = s.dim();
        let cov = read_f64s(&mut input, d * d)?;
        let basis = read_f64s(&mut input, d * d)?;
        let scales = read_f64s(&mut input, d)?;
        s.restore_matrices(cov, basis, scales)?;
    }
    Ok(evo)
}
