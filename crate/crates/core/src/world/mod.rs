//! Seeded grid-world simulation with foraging, combat and reproduction.
//!
//! A [`World`] owns its tiles, agents and random stream, so two worlds built
//! from the same [`WorldConfig`] and driven by the same actions evolve
//! identically. One call to [`World::step`] runs a full tick:
//!
//! 1. agents are visited in a freshly shuffled order; each one moves,
//!    harvests its tile, tries to reproduce, eats one unit of food, ages and
//!    dies if it starved or outlived its longevity;
//! 2. attacks are resolved in the same order, skipping agents that died;
//! 3. every source tile regrows `food_growth_rate`, capped at capacity.

mod action;
mod config;
mod events;
mod genome;
mod observe;

use std::collections::BTreeMap;

use rand::seq::{index, IndexedRandom, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use action::{Action, Move};
pub use config::{FoodLayout, ReproductionMode, WorldConfig};
pub use events::{DeathCause, Event, TickEvents};
pub use genome::Genome;
pub use observe::{ObsOptions, Observation, GLOBAL_LEN, INPUT_LEN, LOCAL_CHANNELS, LOCAL_LEN, VIEW};

use crate::error::{Error, Result};
use crate::kinrew::kinship_unchecked;

pub type AgentId = u64;

/// Serialization format tag and version for world snapshots.
pub const SNAPSHOT_FORMAT: &str = "evolab-world";
pub const SNAPSHOT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TileKind {
    FoodSource,
    Dirt,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tile {
    pub kind: TileKind,
    pub food: f64,
    pub occupant: Option<AgentId>,
}

impl Tile {
    pub fn occupied(&self) -> bool {
        self.occupant.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentState {
    pub id: AgentId,
    pub position: (u32, u32),
    pub health: u32,
    pub age: u32,
    pub food_stored: f64,
    pub genome: Genome,
    /// Founder lineage this agent descends from (first parent's lineage for
    /// sexual births). A policy pool maps lineages to networks.
    pub policy_slot: usize,
}

/// Initial state of one agent for hand-built scenarios.
#[derive(Debug, Clone)]
pub struct AgentSpec {
    pub position: (u32, u32),
    pub genome: Genome,
    pub food_stored: f64,
    pub health: u32,
    pub age: u32,
    pub policy_slot: usize,
}

impl AgentSpec {
    /// A newborn-like agent carrying the config's endowment and health.
    pub fn new(config: &WorldConfig, position: (u32, u32), genome: Genome) -> Self {
        AgentSpec {
            position,
            genome,
            food_stored: config.endowment,
            health: config.initial_health,
            age: 0,
            policy_slot: 0,
        }
    }

    pub fn food(mut self, food: f64) -> Self {
        self.food_stored = food;
        self
    }

    pub fn health(mut self, health: u32) -> Self {
        self.health = health;
        self
    }

    pub fn age(mut self, age: u32) -> Self {
        self.age = age;
        self
    }

    pub fn slot(mut self, slot: usize) -> Self {
        self.policy_slot = slot;
        self
    }
}

/// The full Markov state of one environment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct World {
    config: WorldConfig,
    tick: u64,
    tiles: Vec<Tile>,
    /// Living agents, sorted by id.
    agents: Vec<AgentState>,
    next_id: AgentId,
    rng: ChaCha8Rng,
    /// When set, attacks between two agents that both carry only this allele
    /// are voided.
    attack_mask: Option<u32>,
}

/// Per-tick scratch state shared by the movement and attack phases.
struct TickScratch {
    alive: Vec<bool>,
    bred: Vec<bool>,
    events: TickEvents,
}

impl TickScratch {
    fn new(n: usize) -> Self {
        TickScratch {
            alive: vec![true; n],
            bred: vec![false; n],
            events: TickEvents::default(),
        }
    }
}

impl World {
    /// Builds the initial world: lays out food sources at capacity, then
    /// places `founder_count` founders on distinct random tiles.
    pub fn new(config: WorldConfig) -> Result<World> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let tiles = Self::layout_tiles(&config, &mut rng);
        let cells = config.tile_count();
        let picks = index::sample(&mut rng, cells, config.founder_count);
        let agents = picks
            .iter()
            .enumerate()
            .map(|(founder, cell)| {
                let x = (cell % config.width as usize) as u32;
                let y = (cell / config.width as usize) as u32;
                AgentSpec::new(&config, (x, y), Genome::uniform(founder as u32, config.genome_length))
                    .slot(founder)
            })
            .collect();
        Self::assemble(config, tiles, agents, rng)
    }

    /// Builds a world with an explicit agent roster. Food sources follow the
    /// config's layout.
    pub fn with_agents(config: WorldConfig, agents: Vec<AgentSpec>) -> Result<World> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let tiles = Self::layout_tiles(&config, &mut rng);
        Self::assemble(config, tiles, agents, rng)
    }

    fn layout_tiles(config: &WorldConfig, rng: &mut ChaCha8Rng) -> Vec<Tile> {
        let cells = config.tile_count();
        let mut tiles = vec![
            Tile {
                kind: TileKind::Dirt,
                food: 0.0,
                occupant: None,
            };
            cells
        ];
        let mut make_source = |i: usize| {
            tiles[i].kind = TileKind::FoodSource;
            tiles[i].food = config.food_capacity;
        };
        match &config.layout {
            FoodLayout::UniformRandom { .. } => {
                for i in index::sample(rng, cells, config.source_tile_count()).iter() {
                    make_source(i);
                }
            }
            FoodLayout::Explicit { tiles: coords } => {
                for &(x, y) in coords {
                    make_source(y as usize * config.width as usize + x as usize);
                }
            }
            FoodLayout::AllDirt => {}
        }
        tiles
    }

    fn assemble(
        config: WorldConfig,
        mut tiles: Vec<Tile>,
        specs: Vec<AgentSpec>,
        rng: ChaCha8Rng,
    ) -> Result<World> {
        let mut agents = Vec::with_capacity(specs.len());
        for (id, spec) in specs.into_iter().enumerate() {
            let (x, y) = spec.position;
            if x >= config.width || y >= config.height {
                return Err(Error::Config(format!("agent position ({x}, {y}) outside the world")));
            }
            if spec.genome.len() != config.genome_length {
                return Err(Error::Config(format!(
                    "agent genome length {} differs from genome_length {}",
                    spec.genome.len(),
                    config.genome_length
                )));
            }
            if !(spec.food_stored > 0.0) || spec.health == 0 || spec.age > config.longevity {
                return Err(Error::Config(format!("agent at ({x}, {y}) would start dead")));
            }
            let cell = y as usize * config.width as usize + x as usize;
            if tiles[cell].occupant.is_some() {
                return Err(Error::Config(format!("two agents placed on ({x}, {y})")));
            }
            let id = id as AgentId;
            tiles[cell].occupant = Some(id);
            agents.push(AgentState {
                id,
                position: spec.position,
                health: spec.health,
                age: spec.age,
                food_stored: spec.food_stored,
                genome: spec.genome,
                policy_slot: spec.policy_slot,
            });
        }
        Ok(World {
            next_id: agents.len() as AgentId,
            config,
            tick: 0,
            tiles,
            agents,
            rng,
            attack_mask: None,
        })
    }

    pub fn config(&self) -> &WorldConfig {
        &self.config
    }

    pub fn tick(&self) -> u64 {
        self.tick
    }

    pub fn width(&self) -> u32 {
        self.config.width
    }

    pub fn height(&self) -> u32 {
        self.config.height
    }

    /// Living agents in id order.
    pub fn agents(&self) -> &[AgentState] {
        &self.agents
    }

    pub fn population(&self) -> usize {
        self.agents.len()
    }

    pub fn is_extinct(&self) -> bool {
        self.agents.is_empty()
    }

    pub fn agent(&self, id: AgentId) -> Option<&AgentState> {
        self.index_of(id).map(|i| &self.agents[i])
    }

    fn index_of(&self, id: AgentId) -> Option<usize> {
        self.agents.binary_search_by_key(&id, |a| a.id).ok()
    }

    pub fn tiles(&self) -> &[Tile] {
        &self.tiles
    }

    pub fn tile(&self, x: u32, y: u32) -> &Tile {
        &self.tiles[self.cell(x, y)]
    }

    fn cell(&self, x: u32, y: u32) -> usize {
        y as usize * self.config.width as usize + x as usize
    }

    /// Toroidal neighbour of `(x, y)` displaced by `delta`.
    pub fn wrap(&self, (x, y): (u32, u32), (dx, dy): (i64, i64)) -> (u32, u32) {
        let w = self.config.width as i64;
        let h = self.config.height as i64;
        (
            (x as i64 + dx).rem_euclid(w) as u32,
            (y as i64 + dy).rem_euclid(h) as u32,
        )
    }

    fn neighbours(&self, pos: (u32, u32)) -> [(u32, u32); 4] {
        [
            self.wrap(pos, Move::North.delta()),
            self.wrap(pos, Move::East.delta()),
            self.wrap(pos, Move::South.delta()),
            self.wrap(pos, Move::West.delta()),
        ]
    }

    /// Total food held by tiles plus agents.
    pub fn total_food(&self) -> f64 {
        self.tiles.iter().map(|t| t.food).sum::<f64>()
            + self.agents.iter().map(|a| a.food_stored).sum::<f64>()
    }

    /// Voids attacks between two carriers of `allele` (only meaningful where
    /// that makes them kin, i.e. single-allele lineages). `None` clears it.
    pub fn set_attack_mask(&mut self, allele: Option<u32>) {
        self.attack_mask = allele;
    }

    pub fn attack_mask(&self) -> Option<u32> {
        self.attack_mask
    }

    /// Runs one tick with actions keyed by agent id. Every living agent must
    /// have exactly one action.
    pub fn step(&mut self, actions: &BTreeMap<AgentId, Action>) -> Result<TickEvents> {
        if let Some(id) = actions.keys().find(|id| self.index_of(**id).is_none()) {
            return Err(Error::Protocol(format!("action for dead or unknown agent {id}")));
        }
        if actions.len() != self.agents.len() {
            return Err(Error::Protocol(format!(
                "{} actions for {} living agents",
                actions.len(),
                self.agents.len()
            )));
        }
        // Keys are sorted and all alive, so they line up with `self.agents`.
        let ordered: Vec<Action> = actions.values().copied().collect();
        self.step_aligned(&ordered)
    }

    /// Runs one tick with `actions[i]` driving `self.agents()[i]`.
    pub fn step_aligned(&mut self, actions: &[Action]) -> Result<TickEvents> {
        let n = self.agents.len();
        if actions.len() != n {
            return Err(Error::Protocol(format!("{} actions for {n} living agents", actions.len())));
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut self.rng);
        let mut scratch = TickScratch::new(n);

        for &i in &order {
            if !scratch.alive[i] {
                continue;
            }
            self.move_agent(i, actions[i].movement);
            self.harvest(i, &mut scratch.events);
            self.reproduce(i, &mut scratch);
            let agent = &mut self.agents[i];
            let eaten = agent.food_stored.min(1.0);
            agent.food_stored -= eaten;
            scratch.events.food_eaten += eaten;
            agent.age += 1;
            if agent.food_stored <= 0.0 {
                self.kill(i, DeathCause::Starvation, 0.0, &mut scratch);
            } else if agent.age > self.config.longevity {
                let lost = agent.food_stored;
                self.kill(i, DeathCause::Age, lost, &mut scratch);
            }
        }

        for &i in &order {
            if scratch.alive[i] && actions[i].attack {
                self.attack(i, &mut scratch);
            }
        }

        let (rate, cap) = (self.config.food_growth_rate, self.config.food_capacity);
        for tile in self.tiles.iter_mut().filter(|t| t.kind == TileKind::FoodSource) {
            let add = rate.min(cap - tile.food).max(0.0);
            tile.food += add;
            scratch.events.food_grown += add;
        }

        self.finish_tick(scratch)
    }

    fn finish_tick(&mut self, scratch: TickScratch) -> Result<TickEvents> {
        let TickScratch { alive, mut events, .. } = scratch;
        let mut keep = alive.into_iter();
        self.agents.retain(|_| keep.next().unwrap_or(true));
        self.tick += 1;
        events.tick = self.tick;
        Ok(events)
    }

    fn move_agent(&mut self, i: usize, movement: Move) {
        if movement == Move::Stay {
            return;
        }
        let from = self.agents[i].position;
        let to = self.wrap(from, movement.delta());
        let to_cell = self.cell(to.0, to.1);
        if self.tiles[to_cell].occupant.is_some() {
            return;
        }
        let from_cell = self.cell(from.0, from.1);
        self.tiles[to_cell].occupant = self.tiles[from_cell].occupant.take();
        self.agents[i].position = to;
    }

    fn harvest(&mut self, i: usize, events: &mut TickEvents) {
        let (x, y) = self.agents[i].position;
        let cell = self.cell(x, y);
        let amount = std::mem::take(&mut self.tiles[cell].food);
        if amount > 0.0 {
            self.agents[i].food_stored += amount;
            events.events.push(Event::Harvest {
                agent: self.agents[i].id,
                amount,
            });
        }
    }

    fn kill(&mut self, i: usize, cause: DeathCause, food_destroyed: f64, scratch: &mut TickScratch) {
        scratch.alive[i] = false;
        let agent = &self.agents[i];
        let cell = self.cell(agent.position.0, agent.position.1);
        self.tiles[cell].occupant = None;
        scratch.events.events.push(Event::Death {
            agent: agent.id,
            cause,
            age: agent.age,
            food_destroyed,
            family: agent.genome.dominant_allele(),
        });
    }

    fn occupant_index(&self, pos: (u32, u32), scratch: &TickScratch) -> Option<usize> {
        let id = self.tiles[self.cell(pos.0, pos.1)].occupant?;
        let j = self.index_of(id)?;
        scratch.alive[j].then_some(j)
    }

    fn fertile(&self, i: usize, scratch: &TickScratch) -> bool {
        let a = &self.agents[i];
        let c = &self.config;
        let threshold = match c.reproduction {
            ReproductionMode::Asexual => 2.0 * c.endowment,
            ReproductionMode::Sexual => c.endowment,
        };
        scratch.alive[i]
            && !scratch.bred[i]
            && a.food_stored > threshold
            && (c.fertility_start..=c.fertility_end).contains(&a.age)
    }

    fn empty_neighbours(&self, pos: (u32, u32)) -> Vec<(u32, u32)> {
        self.neighbours(pos)
            .into_iter()
            .filter(|&(x, y)| self.tiles[self.cell(x, y)].occupant.is_none())
            .collect()
    }

    fn reproduce(&mut self, i: usize, scratch: &mut TickScratch) {
        if !self.fertile(i, scratch) {
            return;
        }
        match self.config.reproduction {
            ReproductionMode::Asexual => {
                let tiles = self.empty_neighbours(self.agents[i].position);
                let Some(&pos) = tiles.choose(&mut self.rng) else {
                    return;
                };
                let e = self.config.endowment;
                self.agents[i].food_stored -= e;
                let genome = self.agents[i].genome.clone();
                let slot = self.agents[i].policy_slot;
                let parent = self.agents[i].id;
                scratch.bred[i] = true;
                self.spawn(pos, genome, slot, parent, None, scratch);
            }
            ReproductionMode::Sexual => {
                let mates: Vec<usize> = self
                    .neighbours(self.agents[i].position)
                    .into_iter()
                    .filter_map(|p| self.occupant_index(p, scratch))
                    .filter(|&j| j != i && self.fertile(j, scratch))
                    .collect();
                let Some(&j) = mates.choose(&mut self.rng) else {
                    return;
                };
                let mut tiles = self.empty_neighbours(self.agents[i].position);
                for p in self.empty_neighbours(self.agents[j].position) {
                    if !tiles.contains(&p) {
                        tiles.push(p);
                    }
                }
                let Some(&pos) = tiles.choose(&mut self.rng) else {
                    return;
                };
                let len = self.config.genome_length;
                let mut alleles = self.agents[j].genome.alleles().to_vec();
                let first = self.agents[i].genome.clone();
                for p in index::sample(&mut self.rng, len, len / 2).iter() {
                    alleles[p] = first.alleles()[p];
                }
                let half = self.config.endowment / 2.0;
                self.agents[i].food_stored -= half;
                self.agents[j].food_stored -= half;
                scratch.bred[i] = true;
                scratch.bred[j] = true;
                let slot = self.agents[i].policy_slot;
                let (parent, mate) = (self.agents[i].id, self.agents[j].id);
                self.spawn(pos, Genome::new(alleles), slot, parent, Some(mate), scratch);
            }
        }
    }

    fn spawn(
        &mut self,
        pos: (u32, u32),
        genome: Genome,
        slot: usize,
        parent: AgentId,
        mate: Option<AgentId>,
        scratch: &mut TickScratch,
    ) {
        let id = self.next_id;
        self.next_id += 1;
        let cell = self.cell(pos.0, pos.1);
        self.tiles[cell].occupant = Some(id);
        self.agents.push(AgentState {
            id,
            position: pos,
            health: self.config.initial_health,
            age: 0,
            food_stored: self.config.endowment,
            genome,
            policy_slot: slot,
        });
        scratch.alive.push(true);
        // Newborns act from the next tick on and cannot breed this tick.
        scratch.bred.push(true);
        scratch.events.events.push(Event::Birth {
            child: id,
            parent,
            mate,
            position: pos,
        });
    }

    fn attack(&mut self, i: usize, scratch: &mut TickScratch) {
        let victims: Vec<usize> = self
            .neighbours(self.agents[i].position)
            .into_iter()
            .filter_map(|p| self.occupant_index(p, scratch))
            .filter(|&j| j != i)
            .collect();
        let Some(&j) = victims.choose(&mut self.rng) else {
            return;
        };
        let (attacker, victim) = (&self.agents[i], &self.agents[j]);
        if let Some(allele) = self.attack_mask {
            let carries = |g: &Genome| g.alleles().iter().all(|&a| a == allele);
            if carries(&attacker.genome) && carries(&victim.genome) {
                scratch.events.events.push(Event::AttackVoided {
                    attacker: attacker.id,
                    victim: victim.id,
                });
                return;
            }
        }
        let kin = kinship_unchecked(&attacker.genome, &victim.genome);
        let family = attacker.genome.dominant_allele();
        let (attacker_id, attacker_age, victim_age) = (attacker.id, attacker.age, victim.age);
        let victim_id = victim.id;
        self.agents[j].health -= 1;
        let killed = self.agents[j].health == 0;
        let mut gained = 0.0;
        if killed {
            let stored = self.agents[j].food_stored;
            gained = 0.5 * stored;
            self.agents[i].food_stored += gained;
            self.kill(j, DeathCause::Attack, stored - gained, scratch);
        }
        scratch.events.events.push(Event::Attack {
            attacker: attacker_id,
            victim: victim_id,
            killed,
            kinship: kin,
            attacker_age,
            victim_age,
            food_gained: gained,
            family,
        });
    }

    /// Resolves a single attack by `attacker` outside of a full tick.
    pub fn resolve_attack(&mut self, attacker: AgentId) -> Result<TickEvents> {
        let i = self
            .index_of(attacker)
            .ok_or_else(|| Error::Protocol(format!("attacker {attacker} is not alive")))?;
        let mut scratch = TickScratch::new(self.agents.len());
        self.attack(i, &mut scratch);
        self.compact(scratch)
    }

    /// Lets `id` attempt to reproduce outside of a full tick. Returns the
    /// newborn, if any.
    pub fn try_reproduce(&mut self, id: AgentId) -> Result<Option<AgentState>> {
        let i = self
            .index_of(id)
            .ok_or_else(|| Error::Protocol(format!("agent {id} is not alive")))?;
        let mut scratch = TickScratch::new(self.agents.len());
        self.reproduce(i, &mut scratch);
        let child = scratch.events.events.iter().find_map(|e| match e {
            Event::Birth { child, .. } => Some(*child),
            _ => None,
        });
        self.compact(scratch)?;
        Ok(child.and_then(|c| self.agent(c).cloned()))
    }

    fn compact(&mut self, scratch: TickScratch) -> Result<TickEvents> {
        let TickScratch { alive, mut events, .. } = scratch;
        let mut keep = alive.into_iter();
        self.agents.retain(|_| keep.next().unwrap_or(true));
        events.tick = self.tick;
        Ok(events)
    }

    /// Canonical, versioned JSON snapshot. Equal worlds serialize to equal
    /// bytes.
    pub fn to_snapshot(&self) -> Result<String> {
        #[derive(Serialize)]
        struct Snapshot<'a> {
            format: &'static str,
            version: u32,
            world: &'a World,
        }
        Ok(serde_json::to_string(&Snapshot {
            format: SNAPSHOT_FORMAT,
            version: SNAPSHOT_VERSION,
            world: self,
        })?)
    }

    pub fn from_snapshot(text: &str) -> Result<World> {
        #[derive(Deserialize)]
        struct Snapshot {
            format: String,
            version: u32,
            world: World,
        }
        let snap: Snapshot = serde_json::from_str(text)?;
        if snap.format != SNAPSHOT_FORMAT || snap.version != SNAPSHOT_VERSION {
            return Err(Error::Format(format!(
                "unsupported snapshot {} v{}",
                snap.format, snap.version
            )));
        }
        snap.world.config.validate()?;
        Ok(snap.world)
    }

    /// Checks the structural invariants that must hold between ticks.
    pub fn check_invariants(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Domain(m));
        let mut occupied = 0;
        for (cell, tile) in self.tiles.iter().enumerate() {
            if tile.kind == TileKind::Dirt && tile.food != 0.0 {
                return fail(format!("dirt tile {cell} holds food"));
            }
            if tile.food < 0.0 || tile.food > self.config.food_capacity + 1e-9 {
                return fail(format!("tile {cell} food {} out of range", tile.food));
            }
            if let Some(id) = tile.occupant {
                occupied += 1;
                match self.agent(id) {
                    Some(a) if self.cell(a.position.0, a.position.1) == cell => {}
                    _ => return fail(format!("tile {cell} claims occupant {id}")),
                }
            }
        }
        if occupied != self.agents.len() {
            return fail(format!("{occupied} occupied tiles for {} agents", self.agents.len()));
        }
        for w in self.agents.windows(2) {
            if w[0].id >= w[1].id {
                return fail("agent ids not strictly increasing".into());
            }
        }
        for a in &self.agents {
            if a.age > self.config.longevity {
                return fail(format!("agent {} older than longevity", a.id));
            }
            if !(a.food_stored > 0.0) || a.health == 0 {
                return fail(format!("agent {} alive with no food or health", a.id));
            }
            if a.genome.len() != self.config.genome_length {
                return fail(format!("agent {} genome length changed", a.id));
            }
        }
        Ok(())
    }
}
