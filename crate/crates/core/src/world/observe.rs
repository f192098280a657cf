use serde::{Deserialize, Serialize};

use super::{AgentId, AgentState, World};
use crate::error::{Error, Result};
use crate::kinrew::kinship_unchecked;

/// Side length of the square view.
pub const VIEW: usize = 5;
/// Per-tile features: food, occupied, age, food stored, kinship, health.
pub const LOCAL_CHANNELS: usize = 6;
pub const LOCAL_LEN: usize = VIEW * VIEW * LOCAL_CHANNELS;
/// Global scalars: x, y, family size, population.
pub const GLOBAL_LEN: usize = 4;
pub const INPUT_LEN: usize = LOCAL_LEN + GLOBAL_LEN;

pub(crate) const CH_FOOD: usize = 0;
pub(crate) const CH_OCCUPIED: usize = 1;
pub(crate) const CH_AGE: usize = 2;
pub(crate) const CH_STORED: usize = 3;
pub(crate) const CH_KINSHIP: usize = 4;
pub(crate) const CH_HEALTH: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ObsOptions {
    /// Zero the kinship channel.
    pub mask_kinship: bool,
    /// Divisor applied to family size and population counts.
    pub count_scale: f64,
}

impl Default for ObsOptions {
    fn default() -> Self {
        ObsOptions {
            mask_kinship: false,
            count_scale: 100.0,
        }
    }
}

/// Policy input: a 5x5x6 crop centred on the agent, row-major
/// (`[dy][dx][channel]`, north row first), followed by the four global
/// scalars.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub features: [f64; INPUT_LEN],
}

impl Observation {
    pub fn local(&self, dx: i64, dy: i64, channel: usize) -> f64 {
        let r = (dy + 2) as usize;
        let c = (dx + 2) as usize;
        self.features[(r * VIEW + c) * LOCAL_CHANNELS + channel]
    }

    pub fn global(&self) -> &[f64] {
        &self.features[LOCAL_LEN..]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.features
    }
}

impl World {
    /// Observation of a single agent.
    pub fn observe(&self, id: AgentId, opts: &ObsOptions) -> Result<Observation> {
        let agent = self
            .agent(id)
            .ok_or_else(|| Error::Protocol(format!("cannot observe dead or unknown agent {id}")))?;
        let family: f64 = self
            .agents()
            .iter()
            .map(|b| kinship_unchecked(&agent.genome, &b.genome))
            .sum();
        Ok(self.observe_with_family(agent, family, opts))
    }

    /// Observations of every living agent, aligned with [`World::agents`].
    pub fn observe_all(&self, opts: &ObsOptions) -> Vec<Observation> {
        let family = self.family_sizes();
        self.agents()
            .iter()
            .zip(family)
            .map(|(a, n)| self.observe_with_family(a, n, opts))
            .collect()
    }

    /// Kinship-weighted family size `sum_j k(i, j)` of every living agent,
    /// self included.
    pub fn family_sizes(&self) -> Vec<f64> {
        let agents = self.agents();
        if self.config().genome_length == 1 {
            let mut counts = std::collections::HashMap::new();
            for a in agents {
                *counts.entry(a.genome.alleles()[0]).or_insert(0usize) += 1;
            }
            return agents.iter().map(|a| counts[&a.genome.alleles()[0]] as f64).collect();
        }
        let n = agents.len();
        let mut sizes = vec![1.0; n];
        for i in 0..n {
            for j in (i + 1)..n {
                let k = kinship_unchecked(&agents[i].genome, &agents[j].genome);
                sizes[i] += k;
                sizes[j] += k;
            }
        }
        sizes
    }

    fn observe_with_family(&self, agent: &AgentState, family: f64, opts: &ObsOptions) -> Observation {
        let cfg = self.config();
        let mut features = [0.0; INPUT_LEN];
        for r in 0..VIEW {
            for c in 0..VIEW {
                let pos = self.wrap(agent.position, (c as i64 - 2, r as i64 - 2));
                let tile = self.tile(pos.0, pos.1);
                let base = (r * VIEW + c) * LOCAL_CHANNELS;
                features[base + CH_FOOD] = tile.food / cfg.food_capacity;
                if let Some(other) = tile.occupant.and_then(|id| self.agent(id)) {
                    features[base + CH_OCCUPIED] = 1.0;
                    features[base + CH_AGE] = other.age as f64 / cfg.longevity.max(1) as f64;
                    features[base + CH_STORED] = other.food_stored / (4.0 * cfg.endowment);
                    if !opts.mask_kinship {
                        features[base + CH_KINSHIP] = kinship_unchecked(&agent.genome, &other.genome);
                    }
                    features[base + CH_HEALTH] = other.health as f64 / cfg.initial_health as f64;
                }
            }
        }
        features[LOCAL_LEN] = agent.position.0 as f64 / cfg.width as f64;
        features[LOCAL_LEN + 1] = agent.position.1 as f64 / cfg.height as f64;
        features[LOCAL_LEN + 2] = family / opts.count_scale;
        features[LOCAL_LEN + 3] = self.population() as f64 / opts.count_scale;
        Observation { features }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::{AgentSpec, FoodLayout, Genome, WorldConfig};

    fn cfg() -> WorldConfig {
        WorldConfig {
            width: 8,
            height: 8,
            founder_count: 1,
            layout: FoodLayout::Explicit { tiles: vec![(0, 0), (5, 5)] },
            ..WorldConfig::default()
        }
    }

    #[test]
    fn lone_agent_sees_itself_as_kin() {
        let c = cfg();
        let w = World::with_agents(c.clone(), vec![AgentSpec::new(&c, (4, 4), Genome::uniform(0, 1))]).unwrap();
        let o = w.observe(0, &ObsOptions::default()).unwrap();
        assert_eq!(o.features.len(), 154);
        assert_eq!(o.local(0, 0, CH_OCCUPIED), 1.0);
        assert_eq!(o.local(0, 0, CH_KINSHIP), 1.0);
        assert_eq!(o.local(0, 0, CH_HEALTH), 1.0);
        assert_eq!(o.local(0, 0, CH_STORED), 0.25);
        let others: f64 = (-2..=2)
            .flat_map(|dy| (-2..=2).map(move |dx| (dx, dy)))
            .filter(|&(dx, dy)| (dx, dy) != (0, 0))
            .map(|(dx, dy)| (CH_OCCUPIED..=CH_HEALTH).map(|ch| o.local(dx, dy, ch)).sum::<f64>())
            .sum();
        assert_eq!(others, 0.0);
        // Food source at (5, 5) is at (+1, +1).
        assert_eq!(o.local(1, 1, CH_FOOD), 1.0);
        assert_eq!(o.global(), &[0.5, 0.5, 0.01, 0.01]);
    }

    #[test]
    fn crop_wraps_around_edges() {
        let c = cfg();
        let w = World::with_agents(c.clone(), vec![AgentSpec::new(&c, (7, 7), Genome::uniform(0, 1))]).unwrap();
        let o = w.observe(0, &ObsOptions::default()).unwrap();
        // (0, 0) is one step south-east across both seams.
        assert_eq!(o.local(1, 1, CH_FOOD), 1.0);
    }

    #[test]
    fn kin_mask_zeroes_channel() {
        let c = WorldConfig { founder_count: 2, ..cfg() };
        let g = Genome::uniform(0, 1);
        let w = World::with_agents(
            c.clone(),
            vec![AgentSpec::new(&c, (4, 4), g.clone()), AgentSpec::new(&c, (5, 4), g)],
        )
        .unwrap();
        let opts = ObsOptions {
            mask_kinship: true,
            ..ObsOptions::default()
        };
        for o in w.observe_all(&opts) {
            for dy in -2..=2 {
                for dx in -2..=2 {
                    assert_eq!(o.local(dx, dy, CH_KINSHIP), 0.0);
                }
            }
        }
        let plain = w.observe_all(&ObsOptions::default());
        assert_eq!(plain[0].local(1, 0, CH_KINSHIP), 1.0);
        assert_eq!(plain[0].global()[2], 0.02);
    }

    #[test]
    fn dead_agent_cannot_observe() {
        let c = cfg();
        let w = World::with_agents(c.clone(), vec![AgentSpec::new(&c, (4, 4), Genome::uniform(0, 1))]).unwrap();
        assert!(matches!(w.observe(3, &ObsOptions::default()), Err(Error::Protocol(_))));
    }

    #[test]
    fn family_sizes_match_pairwise_kinship() {
        let c = WorldConfig {
            founder_count: 3,
            ..WorldConfig {
                width: 8,
                height: 8,
                layout: FoodLayout::AllDirt,
                ..WorldConfig::sexual()
            }
        };
        let mut half = vec![0u32; 32];
        half[16..].iter_mut().for_each(|a| *a = 1);
        let w = World::with_agents(
            c.clone(),
            vec![
                AgentSpec::new(&c, (1, 1), Genome::uniform(0, 32)),
                AgentSpec::new(&c, (2, 1), Genome::new(half)),
                AgentSpec::new(&c, (3, 1), Genome::uniform(1, 32)),
            ],
        )
        .unwrap();
        assert_eq!(w.family_sizes(), vec![1.5, 2.0, 1.5]);
        for a in w.agents() {
            let single = w.observe(a.id, &ObsOptions::default()).unwrap();
            let idx = w.agents().iter().position(|b| b.id == a.id).unwrap();
            assert_eq!(single, w.observe_all(&ObsOptions::default())[idx]);
        }
    }
}
