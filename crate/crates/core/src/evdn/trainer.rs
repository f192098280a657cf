use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::composition::{
    epsilon_greedy, joint_q, learning_target, output_gradients, terminal_estimate, Continuation,
};
use crate::error::{Error, Result};
use crate::kinrew::{evolutionary_reward, kinship_unchecked, sugary_reward, RewardConfig, RewardKind};
use crate::neural::{Architecture, GradientBatch, Optimizer, OptimizerKind, QNetwork, Trace, OUTPUTS};
use crate::par::{self, ExecMode};
use crate::world::{Action, AgentState, ObsOptions, ReproductionMode, World, WorldConfig};

/// Mixes a base seed with a stream id and a counter (SplitMix64 finaliser).
pub fn derive_seed(base: u64, stream: u64, counter: u64) -> u64 {
    let mut z = base
        ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ counter.wrapping_mul(0xD1B5_4A32_D192_ED03).rotate_left(17);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const POLICY_STREAM: u64 = 1 << 40;
const ACT_COUNTER: u64 = u64::MAX;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainerConfig {
    /// Environments stepped in lockstep; each tick of all of them forms one
    /// batch.
    pub envs: usize,
    /// Inclusive range of training episode lengths, sampled per episode.
    pub train_length: [u64; 2],
    pub test_length: u64,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    /// Trainer ticks over which epsilon decays linearly.
    pub epsilon_decay_ticks: u64,
    /// Number of independent networks in the pool.
    pub policies: usize,
    pub architecture: Architecture,
    pub optimizer: OptimizerKind,
    pub observation: ObsOptions,
    pub seed: u64,
    pub exec: ExecMode,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        TrainerConfig {
            envs: 16,
            train_length: [450, 550],
            test_length: 500,
            epsilon_start: 1.0,
            epsilon_end: 0.05,
            epsilon_decay_ticks: 20_000,
            policies: 5,
            architecture: Architecture::small_conv(),
            optimizer: OptimizerKind::default(),
            observation: ObsOptions::default(),
            seed: 0,
            exec: ExecMode::Parallel,
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.envs == 0 {
            return bad("envs must be at least 1".into());
        }
        if self.train_length[0] == 0 || self.train_length[0] > self.train_length[1] {
            return bad(format!("invalid train_length range {:?}", self.train_length));
        }
        if self.test_length == 0 {
            return bad("test_length must be at least 1".into());
        }
        for (name, e) in [("epsilon_start", self.epsilon_start), ("epsilon_end", self.epsilon_end)] {
            if !(0.0..=1.0).contains(&e) {
                return bad(format!("{name} must be in [0, 1], got {e}"));
            }
        }
        if self.policies == 0 {
            return bad("policies must be at least 1".into());
        }
        self.architecture.validate()
    }

    /// Linear decay from `epsilon_start` to `epsilon_end`.
    pub fn epsilon_at(&self, tick: u64) -> f64 {
        if self.epsilon_decay_ticks == 0 {
            return self.epsilon_end;
        }
        let frac = (tick as f64 / self.epsilon_decay_ticks as f64).min(1.0);
        self.epsilon_start + (self.epsilon_end - self.epsilon_start) * frac
    }
}

/// Lineage-to-policy map for a training episode: asexual worlds sample with
/// replacement, everything else maps to policy 0 when there is one policy.
pub fn sample_assignment<R: Rng + ?Sized>(founders: usize, policies: usize, rng: &mut R) -> Vec<usize> {
    if policies == 1 {
        return vec![0; founders];
    }
    (0..founders).map(|_| rng.random_range(0..policies)).collect()
}

/// Test-time map: lineage `k` is controlled by policy `k` (modulo pool size).
pub fn identity_assignment(founders: usize, policies: usize) -> Vec<usize> {
    (0..founders).map(|k| k % policies).collect()
}

/// One environment and its acting stream.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct EnvSlot {
    index: u64,
    world: World,
    rng: ChaCha8Rng,
    assignment: Vec<usize>,
    episode: u64,
    remaining: u64,
}

struct TickCtx<'a> {
    pool: &'a [QNetwork],
    world: &'a WorldConfig,
    reward: &'a RewardConfig,
    config: &'a TrainerConfig,
    epsilon: f64,
}

#[derive(Debug, Default)]
struct EnvTick {
    grads: Vec<Option<GradientBatch>>,
    experiences: usize,
    loss: f64,
    population: usize,
    births: usize,
    deaths: usize,
    episode_done: bool,
}

/// Summary of one training tick across all environments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TickReport {
    pub tick: u64,
    pub epsilon: f64,
    pub experiences: usize,
    /// Mean squared residual over the batch.
    pub loss: f64,
    /// Mean living population across environments before the tick.
    pub mean_population: f64,
    pub births: usize,
    pub deaths: usize,
    pub episodes_finished: usize,
}

impl EnvSlot {
    fn new(index: u64, world: &WorldConfig, config: &TrainerConfig) -> Result<Self> {
        let mut slot = EnvSlot {
            index,
            world: World::new(world.clone())?,
            rng: ChaCha8Rng::seed_from_u64(derive_seed(config.seed, index, ACT_COUNTER)),
            assignment: Vec::new(),
            episode: 0,
            remaining: 0,
        };
        slot.reset(world, config)?;
        Ok(slot)
    }

    fn reset(&mut self, world: &WorldConfig, config: &TrainerConfig) -> Result<()> {
        let [lo, hi] = config.train_length;
        self.remaining = self.rng.random_range(lo..=hi);
        self.assignment = sample_assignment(world.founder_count, config.policies, &mut self.rng);
        let cfg = WorldConfig {
            seed: derive_seed(config.seed, self.index, self.episode),
            ..world.clone()
        };
        self.world = World::new(cfg)?;
        self.episode += 1;
        Ok(())
    }

    fn tick(&mut self, ctx: &TickCtx) -> Result<EnvTick> {
        let census: Vec<AgentState> = self.world.agents().to_vec();
        let n = census.len();
        let observations = self.world.observe_all(&ctx.config.observation);
        let mut traces: Vec<Trace> = Vec::with_capacity(n);
        let mut actions: Vec<Action> = Vec::with_capacity(n);
        let mut policy_of = Vec::with_capacity(n);
        for (agent, obs) in census.iter().zip(&observations) {
            let p = self.assignment[agent.policy_slot];
            let trace = ctx.pool[p].forward_trace(obs.as_slice())?;
            actions.push(epsilon_greedy(&trace.q, ctx.epsilon, &mut self.rng));
            traces.push(trace);
            policy_of.push(p);
        }

        let events = self.world.step_aligned(&actions)?;

        let next = self.world.agents();
        let next_values = self
            .world
            .observe_all(&ctx.config.observation)
            .iter()
            .zip(next)
            .map(|(obs, agent)| Ok(ctx.pool[self.assignment[agent.policy_slot]].greedy(obs.as_slice())?.1))
            .collect::<Result<Vec<f64>>>()?;

        let chosen: Vec<f64> = traces.iter().zip(&actions).map(|(t, a)| t.q[a.index()]).collect();
        let mut kin = vec![0.0; n * n];
        for i in 0..n {
            kin[i * n + i] = 1.0;
            for j in i + 1..n {
                let k = kinship_unchecked(&census[i].genome, &census[j].genome);
                kin[i * n + j] = k;
                kin[j * n + i] = k;
            }
        }
        let mut residuals = Vec::with_capacity(n);
        let mut kin_next = vec![0.0; next.len()];
        for (i, me) in census.iter().enumerate() {
            for (k, other) in kin_next.iter_mut().zip(next) {
                *k = kinship_unchecked(&me.genome, &other.genome);
            }
            let q_joint = joint_q(&chosen, &kin[i * n..(i + 1) * n])?;
            let continuation = if next.binary_search_by_key(&me.id, |a| a.id).is_ok() {
                let reward = match ctx.reward.kind {
                    RewardKind::Evolutionary => evolutionary_reward(&self.world, me.id)?,
                    RewardKind::Sugary => sugary_reward(&census, &events, &me.genome),
                };
                Continuation::Alive {
                    reward,
                    next_value: joint_q(&next_values, &kin_next)?,
                }
            } else {
                Continuation::Died {
                    estimate: terminal_estimate(&next_values, &kin_next),
                }
            };
            residuals.push(learning_target(continuation, ctx.reward.gamma) - q_joint);
        }
        let loss: f64 = residuals.iter().map(|d| d * d).sum();
        let output_grad = output_gradients(&kin, &residuals)?;
        if !loss.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite loss in environment {} at tick {}",
                self.index,
                self.world.tick()
            )));
        }

        let mut grads: Vec<Option<GradientBatch>> = vec![None; ctx.pool.len()];
        for j in 0..n {
            let p = policy_of[j];
            let batch = grads[p].get_or_insert_with(|| GradientBatch::zeros(ctx.pool[p].parameter_count()));
            batch.samples += 1;
            if output_grad[j] == 0.0 {
                continue;
            }
            let mut out = [0.0; OUTPUTS];
            out[actions[j].index()] = output_grad[j];
            ctx.pool[p].backward_into(&traces[j], &out, &mut batch.grads);
        }

        self.remaining -= 1;
        let episode_done = self.remaining == 0 || self.world.is_extinct();
        let report = EnvTick {
            grads,
            experiences: n,
            loss,
            population: n,
            births: events.births(),
            deaths: events.deaths().count(),
            episode_done,
        };
        if episode_done {
            self.reset(ctx.world, ctx.config)?;
        }
        Ok(report)
    }
}

/// Replay-free trainer for a pool of kin-composed Q-networks.
///
/// Every call to [`Trainer::train_epoch`] steps all environments once,
/// builds one experience per living agent, turns the batch into one gradient
/// per policy and discards it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Trainer {
    world: WorldConfig,
    reward: RewardConfig,
    config: TrainerConfig,
    pool: Vec<QNetwork>,
    optimizers: Vec<Optimizer>,
    envs: Vec<EnvSlot>,
    ticks: u64,
    experiences: u64,
}

impl Trainer {
    pub fn new(world: WorldConfig, reward: RewardConfig, config: TrainerConfig) -> Result<Self> {
        world.validate()?;
        reward.validate()?;
        config.validate()?;
        if world.reproduction == ReproductionMode::Sexual && config.policies != 1 {
            log::warn!("sexual world trained with {} policies; lineages are sampled like founders", config.policies);
        }
        let pool = (0..config.policies)
            .map(|k| QNetwork::new(config.architecture, derive_seed(config.seed, POLICY_STREAM + k as u64, 0)))
            .collect::<Result<Vec<_>>>()?;
        Self::with_pool(world, reward, config, pool)
    }

    /// Starts training from existing networks.
    pub fn with_pool(
        world: WorldConfig,
        reward: RewardConfig,
        config: TrainerConfig,
        pool: Vec<QNetwork>,
    ) -> Result<Self> {
        if pool.len() != config.policies {
            return Err(Error::Config(format!("{} networks for {} policies", pool.len(), config.policies)));
        }
        let optimizers = pool
            .iter()
            .map(|n| Optimizer::new(config.optimizer, n.parameter_count()))
            .collect();
        let envs = (0..config.envs as u64)
            .map(|i| EnvSlot::new(i, &world, &config))
            .collect::<Result<Vec<_>>>()?;
        Ok(Trainer {
            world,
            reward,
            config,
            pool,
            optimizers,
            envs,
            ticks: 0,
            experiences: 0,
        })
    }

    pub fn pool(&self) -> &[QNetwork] {
        &self.pool
    }

    pub fn into_pool(self) -> Vec<QNetwork> {
        self.pool
    }

    pub fn config(&self) -> &TrainerConfig {
        &self.config
    }

    pub fn world_config(&self) -> &WorldConfig {
        &self.world
    }

    pub fn ticks(&self) -> u64 {
        self.ticks
    }

    /// Agent-experiences consumed so far.
    pub fn experiences(&self) -> u64 {
        self.experiences
    }

    pub fn epsilon(&self) -> f64 {
        self.config.epsilon_at(self.ticks)
    }

    pub fn set_exec_mode(&mut self, mode: ExecMode) {
        self.config.exec = mode;
    }

    /// Steps every environment once and applies one update per policy.
    pub fn train_epoch(&mut self) -> Result<TickReport> {
        let epsilon = self.epsilon();
        let ctx = TickCtx {
            pool: &self.pool,
            world: &self.world,
            reward: &self.reward,
            config: &self.config,
            epsilon,
        };
        let results = par::map_indexed(self.config.exec, &mut self.envs, |_, env| env.tick(&ctx));

        let mut totals: Vec<Option<GradientBatch>> = vec![None; self.pool.len()];
        let mut report = TickReport {
            tick: self.ticks,
            epsilon,
            experiences: 0,
            loss: 0.0,
            mean_population: 0.0,
            births: 0,
            deaths: 0,
            episodes_finished: 0,
        };
        for result in results {
            let env = result?;
            report.experiences += env.experiences;
            report.loss += env.loss;
            report.mean_population += env.population as f64;
            report.births += env.births;
            report.deaths += env.deaths;
            report.episodes_finished += env.episode_done as usize;
            for (total, g) in totals.iter_mut().zip(env.grads) {
                if let Some(g) = g {
                    match total {
                        Some(t) => t.add(&g),
                        None => *total = Some(g),
                    }
                }
            }
        }
        let batch = report.experiences.max(1) as f64;
        report.loss /= batch;
        report.mean_population /= self.envs.len() as f64;
        for (k, total) in totals.into_iter().enumerate() {
            if let Some(mut g) = total {
                g.scale(1.0 / batch);
                self.optimizers[k].apply(&mut self.pool[k], &g)?;
            }
        }
        self.ticks += 1;
        self.experiences += report.experiences as u64;
        Ok(report)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, serde_json::to_vec(self)?)?;
        std::fs::rename(tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let trainer: Trainer = serde_json::from_slice(&std::fs::read(path)?)?;
        trainer.world.validate()?;
        trainer.config.validate()?;
        Ok(trainer)
    }
}
