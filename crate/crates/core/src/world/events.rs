use std::io::Write;

use serde::{Deserialize, Serialize};

use super::AgentId;
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeathCause {
    Starvation,
    Age,
    Attack,
}

/// One record of the per-tick event log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    Harvest {
        agent: AgentId,
        amount: f64,
    },
    Birth {
        child: AgentId,
        parent: AgentId,
        mate: Option<AgentId>,
        position: (u32, u32),
    },
    Death {
        agent: AgentId,
        cause: DeathCause,
        age: u32,
        /// Food removed from the world with the corpse.
        food_destroyed: f64,
        /// Founder lineage of the dead agent.
        family: u32,
    },
    Attack {
        attacker: AgentId,
        victim: AgentId,
        killed: bool,
        kinship: f64,
        attacker_age: u32,
        victim_age: u32,
        food_gained: f64,
        /// Founder family of the attacker.
        family: u32,
    },
    /// An attack cancelled by the intra-family mask; no damage is dealt.
    AttackVoided {
        attacker: AgentId,
        victim: AgentId,
    },
}

/// Everything that happened during one call to `World::step`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TickEvents {
    /// Tick number after the step completed.
    pub tick: u64,
    pub events: Vec<Event>,
    /// Food added by source regrowth.
    pub food_grown: f64,
    /// Food consumed by agents' metabolism.
    pub food_eaten: f64,
}

impl TickEvents {
    pub fn births(&self) -> usize {
        self.events.iter().filter(|e| matches!(e, Event::Birth { .. })).count()
    }

    pub fn deaths(&self) -> impl Iterator<Item = (&AgentId, &DeathCause)> {
        self.events.iter().filter_map(|e| match e {
            Event::Death { agent, cause, .. } => Some((agent, cause)),
            _ => None,
        })
    }

    pub fn food_destroyed(&self) -> f64 {
        self.events
            .iter()
            .map(|e| match e {
                Event::Death { food_destroyed, .. } => *food_destroyed,
                _ => 0.0,
            })
            .sum()
    }

    /// Tile food harvested by `agent` this tick.
    pub fn harvested_by(&self, agent: AgentId) -> f64 {
        self.events
            .iter()
            .map(|e| match e {
                Event::Harvest { agent: a, amount } if *a == agent => *amount,
                _ => 0.0,
            })
            .sum()
    }

    /// Writes one JSON object per event, each tagged with the tick.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<()> {
        #[derive(Serialize)]
        struct Line<'a> {
            tick: u64,
            #[serde(flatten)]
            event: &'a Event,
        }
        for event in &self.events {
            serde_json::to_writer(&mut out, &Line { tick: self.tick, event })?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}
