//! Kinship, kin-weighted rewards and the truncated terminal reward.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::world::{AgentId, AgentState, Genome, TickEvents, World, WorldConfig};
use crate::world::Action;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RewardKind {
    /// Per-tick sum of kinship with every living agent.
    #[default]
    Evolutionary,
    /// Kin-weighted food harvested this tick.
    Sugary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardConfig {
    pub gamma: f64,
    pub epsilon: f64,
    /// Upper bound on the per-tick kinship sum. `None` derives it from the
    /// world's carrying capacity.
    pub reward_bound: Option<f64>,
    pub kind: RewardKind,
}

impl Default for RewardConfig {
    fn default() -> Self {
        RewardConfig {
            gamma: 0.9,
            epsilon: 0.1,
            reward_bound: None,
            kind: RewardKind::Evolutionary,
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::Config(format!("gamma must be in [0, 1), got {}", self.gamma)));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::Config(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        if let Some(rb) = self.reward_bound {
            if !(rb > 0.0 && rb.is_finite()) {
                return Err(Error::Config(format!("reward_bound must be positive, got {rb}")));
            }
        }
        Ok(())
    }

    /// Reward bound, falling back to the carrying capacity of `world`.
    pub fn bound_for(&self, world: &WorldConfig) -> f64 {
        self.reward_bound.unwrap_or_else(|| world.carrying_capacity().max(1.0))
    }

    pub fn horizon_for(&self, world: &WorldConfig) -> Result<u64> {
        effective_horizon(self.epsilon, self.gamma, self.bound_for(world))
    }
}

/// Fraction of positions at which two genomes carry the same allele.
pub fn kinship(a: &Genome, b: &Genome) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Domain(format!(
            "kinship of genomes with lengths {} and {}",
            a.len(),
            b.len()
        )));
    }
    Ok(kinship_unchecked(a, b))
}

/// [`kinship`] for genomes already known to have equal length.
#[inline]
pub fn kinship_unchecked(a: &Genome, b: &Genome) -> f64 {
    let (a, b) = (a.alleles(), b.alleles());
    if a.len() == 1 {
        return if a[0] == b[0] { 1.0 } else { 0.0 };
    }
    let same = a.iter().zip(b).filter(|(x, y)| x == y).count();
    same as f64 / a.len() as f64
}

/// Sum of kinship between `genome` and every living agent of `world`.
pub fn kin_census(world: &World, genome: &Genome) -> f64 {
    world
        .agents()
        .iter()
        .map(|a| kinship_unchecked(genome, &a.genome))
        .sum()
}

/// Reward of an agent alive after the tick: its kinship with every living
/// agent, itself included.
pub fn evolutionary_reward(next: &World, agent: AgentId) -> Result<f64> {
    let me = next
        .agent(agent)
        .ok_or_else(|| Error::Protocol(format!("agent {agent} is dead; use the terminal reward")))?;
    Ok(kin_census(next, &me.genome))
}

/// Kin-weighted tile food harvested during the tick described by `events`.
/// `census` is the set of agents alive at the start of that tick.
pub fn sugary_reward(census: &[AgentState], events: &TickEvents, genome: &Genome) -> f64 {
    census
        .iter()
        .map(|j| {
            let harvested = events.harvested_by(j.id);
            if harvested == 0.0 {
                0.0
            } else {
                kinship_unchecked(genome, &j.genome) * harvested
            }
        })
        .sum()
}

/// Smallest horizon whose worst-case truncation error
/// `r_b * gamma^h / (1 - gamma)` is at most `epsilon`.
pub fn effective_horizon(epsilon: f64, gamma: f64, reward_bound: f64) -> Result<u64> {
    if !(0.0..1.0).contains(&gamma) || !(epsilon > 0.0) || !(reward_bound > 0.0) {
        return Err(Error::Domain(format!(
            "effective horizon needs gamma in [0,1), epsilon > 0, r_b > 0; got {gamma}, {epsilon}, {reward_bound}"
        )));
    }
    let ratio = epsilon * (1.0 - gamma) / reward_bound;
    if !(ratio < 1.0) {
        return Err(Error::Domain(format!(
            "epsilon * (1 - gamma) / r_b = {ratio} must be below 1"
        )));
    }
    let mut h = (ratio.ln() / gamma.ln()).ceil().max(1.0) as u64;
    // Guard the ceiling against rounding in the logarithms.
    let tail = |h: u64| reward_bound * gamma.powi(h as i32) / (1.0 - gamma);
    while tail(h) > epsilon {
        h += 1;
    }
    while h > 1 && tail(h - 1) <= epsilon {
        h -= 1;
    }
    Ok(h)
}

/// Chooses actions for the agents of a world.
pub trait Policy {
    fn act(&mut self, world: &World, agent: &AgentState) -> Action;
}

impl<F: FnMut(&World, &AgentState) -> Action> Policy for F {
    fn act(&mut self, world: &World, agent: &AgentState) -> Action {
        self(world, agent)
    }
}

/// Structured record of one truncated terminal-reward evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TerminalTrace {
    pub gamma: f64,
    pub horizon: u64,
    /// Kinship census at each simulated tick, starting at the death tick.
    pub census: Vec<f64>,
    pub value: f64,
}

/// Ground-truth terminal reward of a dead agent: rolls `snapshot` forward
/// `h_e` ticks under `policy` and discounts the kinship census of `genome`.
pub fn terminal_reward_oracle(
    snapshot: &World,
    genome: &Genome,
    policy: &mut dyn Policy,
    config: &RewardConfig,
) -> Result<TerminalTrace> {
    config.validate()?;
    if genome.len() != snapshot.config().genome_length {
        return Err(Error::Domain("genome length differs from the world's".into()));
    }
    let horizon = config.horizon_for(snapshot.config())?;
    let mut world = snapshot.clone();
    let mut census = Vec::with_capacity(horizon as usize);
    let mut value = 0.0;
    let mut discount = 1.0;
    for _ in 0..horizon {
        let k = kin_census(&world, genome);
        census.push(k);
        value += discount * k;
        discount *= config.gamma;
        if world.is_extinct() {
            break;
        }
        let actions: Vec<Action> = world
            .agents()
            .iter()
            .map(|a| policy.act(&world, a))
            .collect();
        world.step_aligned(&actions)?;
    }
    Ok(TerminalTrace {
        gamma: config.gamma,
        horizon,
        census,
        value,
    })
}
