//! Census metrics, seeded episode rollouts and the evaluation protocols.

mod frames;
mod protocols;
mod stats;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::neural::{QNetwork, OUTPUTS};
use crate::world::{Action, AgentState, DeathCause, Event, ObsOptions, TickEvents, World, WorldConfig};

pub use frames::{legend, read_frames, render_ppm, render_text, write_frames, Frame, FRAMES_FORMAT, FRAMES_VERSION};
pub use protocols::{
    ablate_intra_family_attacks, evaluate, head_to_head, kin_masking_drift, Ablation, DriftArm, DriftReport,
    Evaluation, HeadToHead, ProtocolConfig, SizeSeries,
};
pub use stats::{paired_t_test, Interval, TTest};

/// Shannon entropy in bits of the allele frequencies pooled over every
/// genome position of every living agent.
pub fn allele_entropy(census: &[AgentState]) -> Result<f64> {
    if census.is_empty() {
        return Err(Error::Domain("allele entropy of an empty census".into()));
    }
    let mut counts = std::collections::BTreeMap::new();
    let mut total = 0usize;
    for agent in census {
        for &allele in agent.genome.alleles() {
            *counts.entry(allele).or_insert(0usize) += 1;
            total += 1;
        }
    }
    Ok(entropy_of_counts(counts.values().copied(), total))
}

fn entropy_of_counts(counts: impl Iterator<Item = usize>, total: usize) -> f64 {
    let total = total as f64;
    let h: f64 = counts
        .filter(|&c| c > 0)
        .map(|c| {
            let p = c as f64 / total;
            -p * p.log2()
        })
        .sum();
    // A single allele gives -1 * log2(1) = -0.0.
    h.max(0.0)
}

/// Living agents per founder allele. In asexual worlds this is the family
/// partition; in sexual worlds agents are binned by their most frequent
/// allele.
pub fn family_census(world: &World) -> Vec<usize> {
    let mut sizes = vec![0; world.config().founder_count];
    for a in world.agents() {
        let f = a.genome.dominant_allele() as usize;
        if f >= sizes.len() {
            sizes.resize(f + 1, 0);
        }
        sizes[f] += 1;
    }
    sizes
}

/// Pooled allele counts indexed by allele value.
pub fn allele_histogram(world: &World) -> Vec<usize> {
    let mut hist = vec![0; world.config().founder_count];
    for a in world.agents() {
        for &allele in a.genome.alleles() {
            let allele = allele as usize;
            if allele >= hist.len() {
                hist.resize(allele + 1, 0);
            }
            hist[allele] += 1;
        }
    }
    hist
}

/// Census quantities for one tick.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TickMetrics {
    /// Tick number after the step.
    pub tick: u64,
    pub population: usize,
    pub births: usize,
    pub deaths_starvation: usize,
    pub deaths_age: usize,
    pub deaths_attack: usize,
    /// Attacks between agents with nonzero kinship.
    pub attacks_intra: usize,
    pub attacks_inter: usize,
    pub attacks_voided: usize,
    /// Attacks between genetically identical members of each founder family.
    pub attacks_within_family: Vec<usize>,
    /// Attacks divided by the population at the start of the tick.
    pub attacks_per_capita: f64,
    /// Mean age of the agents that died this tick.
    pub mean_lifespan: Option<f64>,
    /// Mean ages of attacker and victim over lethal intra-family attacks.
    pub mean_cannibal_age: Option<f64>,
    pub mean_victim_age: Option<f64>,
    pub allele_histogram: Vec<usize>,
}

impl TickMetrics {
    /// `before` is the population at the start of the tick and `after` the
    /// world once the step has completed.
    pub fn from_tick(before: usize, events: &TickEvents, after: &World) -> TickMetrics {
        let mut m = TickMetrics {
            tick: events.tick,
            population: after.population(),
            births: 0,
            deaths_starvation: 0,
            deaths_age: 0,
            deaths_attack: 0,
            attacks_intra: 0,
            attacks_inter: 0,
            attacks_voided: 0,
            attacks_within_family: vec![0; after.config().founder_count],
            attacks_per_capita: 0.0,
            mean_lifespan: None,
            mean_cannibal_age: None,
            mean_victim_age: None,
            allele_histogram: allele_histogram(after),
        };
        let mut lifespans = Vec::new();
        let mut cannibal = Vec::new();
        let mut victim = Vec::new();
        for e in &events.events {
            match e {
                Event::Birth { .. } => m.births += 1,
                Event::Death { cause, age, .. } => {
                    match cause {
                        DeathCause::Starvation => m.deaths_starvation += 1,
                        DeathCause::Age => m.deaths_age += 1,
                        DeathCause::Attack => m.deaths_attack += 1,
                    }
                    lifespans.push(*age as f64);
                }
                Event::Attack {
                    kinship,
                    killed,
                    attacker_age,
                    victim_age,
                    family,
                    ..
                } => {
                    if *kinship == 1.0 {
                        let f = *family as usize;
                        if f >= m.attacks_within_family.len() {
                            m.attacks_within_family.resize(f + 1, 0);
                        }
                        m.attacks_within_family[f] += 1;
                    }
                    if *kinship > 0.0 {
                        m.attacks_intra += 1;
                        if *killed {
                            cannibal.push(*attacker_age as f64);
                            victim.push(*victim_age as f64);
                        }
                    } else {
                        m.attacks_inter += 1;
                    }
                }
                Event::AttackVoided { .. } => m.attacks_voided += 1,
                Event::Harvest { .. } => {}
            }
        }
        if before > 0 {
            m.attacks_per_capita = m.attacks() as f64 / before as f64;
        }
        m.mean_lifespan = mean(&lifespans);
        m.mean_cannibal_age = mean(&cannibal);
        m.mean_victim_age = mean(&victim);
        m
    }

    pub fn deaths(&self) -> usize {
        self.deaths_starvation + self.deaths_age + self.deaths_attack
    }

    pub fn attacks(&self) -> usize {
        self.attacks_intra + self.attacks_inter
    }
}

fn mean(xs: &[f64]) -> Option<f64> {
    if xs.is_empty() {
        None
    } else {
        Some(xs.iter().sum::<f64>() / xs.len() as f64)
    }
}

/// Who acts for a founder lineage.
#[derive(Debug, Clone, Copy)]
pub enum Controller<'a> {
    Greedy(&'a QNetwork),
    Random,
}

/// A fully seeded episode.
#[derive(Debug, Clone)]
pub struct EpisodeSetup<'a> {
    /// World configuration including its seed.
    pub world: WorldConfig,
    /// Controller of each founder lineage.
    pub controllers: Vec<Controller<'a>>,
    pub length: u64,
    pub observation: ObsOptions,
    pub attack_mask: Option<u32>,
    /// Seed of the stream used by random controllers.
    pub actor_seed: u64,
    /// Stop early once at most one allele is left.
    pub stop_at_fixation: bool,
}

/// Outcome of one episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSummary {
    pub world_seed: u64,
    pub actor_seed: u64,
    pub ticks_run: u64,
    /// `family_sizes[t][f]` is the size of family `f` at tick `t`, from the
    /// initial state up to `ticks_run`.
    pub family_sizes: Vec<Vec<usize>>,
    /// Allele entropy at every recorded tick; `None` once extinct.
    pub entropy: Vec<Option<f64>>,
    pub metrics: Vec<TickMetrics>,
}

impl EpisodeSummary {
    pub fn final_sizes(&self) -> &[usize] {
        self.family_sizes.last().map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn population_at(&self, tick: usize) -> usize {
        self.family_sizes.get(tick).map_or(0, |s| s.iter().sum())
    }

    pub fn final_population(&self) -> usize {
        self.final_sizes().iter().sum()
    }

    pub fn births(&self) -> usize {
        self.metrics.iter().map(|m| m.births).sum()
    }
}

/// Runs one episode. `frame` sees the initial state and the world after
/// every tick.
pub fn run_episode(setup: &EpisodeSetup, mut frame: Option<&mut dyn FnMut(&World)>) -> Result<EpisodeSummary> {
    if setup.controllers.len() < setup.world.founder_count {
        return Err(Error::Config(format!(
            "{} controllers for {} founders",
            setup.controllers.len(),
            setup.world.founder_count
        )));
    }
    let mut world = World::new(setup.world.clone())?;
    world.set_attack_mask(setup.attack_mask);
    let mut rng = ChaCha8Rng::seed_from_u64(setup.actor_seed);
    let mut summary = EpisodeSummary {
        world_seed: setup.world.seed,
        actor_seed: setup.actor_seed,
        ticks_run: 0,
        family_sizes: vec![family_census(&world)],
        entropy: vec![allele_entropy(world.agents()).ok()],
        metrics: Vec::new(),
    };
    if let Some(f) = frame.as_mut() {
        f(&world);
    }
    let mut actions = Vec::new();
    for _ in 0..setup.length {
        if world.is_extinct() {
            break;
        }
        if setup.stop_at_fixation && summary.entropy.last() == Some(&Some(0.0)) {
            break;
        }
        actions.clear();
        let observations = world.observe_all(&setup.observation);
        for (agent, obs) in world.agents().iter().zip(&observations) {
            let action = match setup.controllers[agent.policy_slot] {
                Controller::Greedy(net) => Action::from_index(net.greedy(obs.as_slice())?.0),
                Controller::Random => Action::from_index(rng.random_range(0..OUTPUTS)),
            };
            actions.push(action);
        }
        let before = world.population();
        let events = world.step_aligned(&actions)?;
        summary.metrics.push(TickMetrics::from_tick(before, &events, &world));
        summary.family_sizes.push(family_census(&world));
        summary.entropy.push(allele_entropy(world.agents()).ok());
        summary.ticks_run += 1;
        if let Some(f) = frame.as_mut() {
            f(&world);
        }
    }
    Ok(summary)
}
