//! Multi-episode evaluation protocols and their CSV exports.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use super::stats::{paired_t_test, Interval, TTest};
use super::{run_episode, Controller, EpisodeSetup, EpisodeSummary};
use crate::error::{Error, Result};
use crate::evdn::derive_seed;
use crate::par::{self, ExecMode};
use crate::world::{ObsOptions, WorldConfig};

const WORLD_STREAM: u64 = 0x5EED_0001;
const ACTOR_STREAM: u64 = 0x5EED_0002;

/// Shared settings of every protocol.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProtocolConfig {
    pub world: WorldConfig,
    pub episodes: usize,
    pub length: u64,
    pub seed: u64,
    pub observation: ObsOptions,
    pub exec: ExecMode,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        ProtocolConfig {
            world: WorldConfig::default(),
            episodes: 20,
            length: 500,
            seed: 0,
            observation: ObsOptions::default(),
            exec: ExecMode::Parallel,
        }
    }
}

impl ProtocolConfig {
    /// World and actor seeds of episode `e`. Arms of a paired protocol share
    /// them.
    pub fn episode_seeds(&self, e: usize) -> (u64, u64) {
        (
            derive_seed(self.seed, WORLD_STREAM, e as u64),
            derive_seed(self.seed, ACTOR_STREAM, e as u64),
        )
    }

    pub fn setup<'a>(&self, e: usize, controllers: &[Controller<'a>], mask: Option<u32>, obs: ObsOptions) -> EpisodeSetup<'a> {
        let (world_seed, actor_seed) = self.episode_seeds(e);
        EpisodeSetup {
            world: WorldConfig {
                seed: world_seed,
                ..self.world.clone()
            },
            controllers: controllers.to_vec(),
            length: self.length,
            observation: obs,
            attack_mask: mask,
            actor_seed,
            stop_at_fixation: false,
        }
    }

    fn run(&self, controllers: &[Controller], mask: Option<u32>, obs: ObsOptions) -> Result<Vec<EpisodeSummary>> {
        if self.episodes == 0 {
            return Err(Error::Config("episodes must be at least 1".into()));
        }
        self.world.validate()?;
        par::map_range(self.exec, self.episodes, |e| run_episode(&self.setup(e, controllers, mask, obs), None))
            .into_iter()
            .collect()
    }
}

/// Per-family size over time, averaged over episodes; extinct episodes
/// contribute zeros.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SizeSeries {
    /// `families[f][t]`.
    pub families: Vec<Vec<Interval>>,
}

impl SizeSeries {
    pub fn from_episodes(episodes: &[EpisodeSummary], families: usize, length: u64) -> SizeSeries {
        let families = (0..families)
            .map(|f| {
                (0..=length as usize)
                    .map(|t| {
                        let xs: Vec<f64> = episodes.iter().map(|e| size_at(e, t, f) as f64).collect();
                        Interval::from_samples(&xs)
                    })
                    .collect()
            })
            .collect();
        SizeSeries { families }
    }
}

fn size_at(e: &EpisodeSummary, t: usize, f: usize) -> usize {
    e.family_sizes.get(t).and_then(|s| s.get(f)).copied().unwrap_or(0)
}

fn write_size_rows<W: Write>(out: &mut csv::Writer<W>, arm: Option<&str>, episodes: &[EpisodeSummary]) -> Result<()> {
    for (e, ep) in episodes.iter().enumerate() {
        for (t, sizes) in ep.family_sizes.iter().enumerate() {
            for (f, size) in sizes.iter().enumerate() {
                let (e, t, f, size) = (e.to_string(), t.to_string(), f.to_string(), size.to_string());
                match arm {
                    Some(arm) => out.write_record([arm, &e, &t, &f, &size])?,
                    None => out.write_record([&e, &t, &f, &size])?,
                }
            }
        }
    }
    Ok(())
}

/// Test-protocol results of a policy pool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub episodes: Vec<EpisodeSummary>,
    /// Per-episode aggregates, summarised over episodes.
    pub metrics: BTreeMap<String, Interval>,
    /// Population at every tick from 0 to the episode length.
    pub population: Vec<Interval>,
}

impl Evaluation {
    pub const CSV_HEADER: [&'static str; 15] = [
        "episode",
        "tick",
        "population",
        "births",
        "deaths_starvation",
        "deaths_age",
        "deaths_attack",
        "attacks_intra",
        "attacks_inter",
        "attacks_voided",
        "attacks_per_capita",
        "mean_lifespan",
        "mean_cannibal_age",
        "mean_victim_age",
        "entropy",
    ];

    pub fn metric(&self, name: &str) -> Option<&Interval> {
        self.metrics.get(name)
    }

    /// One row per episode and tick.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(Self::CSV_HEADER)?;
        let opt = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
        for (e, ep) in self.episodes.iter().enumerate() {
            for (i, m) in ep.metrics.iter().enumerate() {
                w.write_record([
                    e.to_string(),
                    m.tick.to_string(),
                    m.population.to_string(),
                    m.births.to_string(),
                    m.deaths_starvation.to_string(),
                    m.deaths_age.to_string(),
                    m.deaths_attack.to_string(),
                    m.attacks_intra.to_string(),
                    m.attacks_inter.to_string(),
                    m.attacks_voided.to_string(),
                    m.attacks_per_capita.to_string(),
                    opt(m.mean_lifespan),
                    opt(m.mean_cannibal_age),
                    opt(m.mean_victim_age),
                    opt(ep.entropy[i + 1]),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

fn episode_aggregates(ep: &EpisodeSummary, length: u64) -> Vec<(&'static str, Option<f64>)> {
    let pop_sum: usize = (0..=length as usize).map(|t| ep.population_at(t)).sum();
    let deaths: Vec<f64> = ep
        .metrics
        .iter()
        .filter_map(|m| m.mean_lifespan.map(|l| l * m.deaths() as f64))
        .collect();
    let death_count: usize = ep.metrics.iter().map(|m| m.deaths()).sum();
    let ticks = ep.metrics.len().max(1) as f64;
    let sum = |f: fn(&super::TickMetrics) -> usize| ep.metrics.iter().map(f).sum::<usize>() as f64;
    vec![
        ("mean_population", Some(pop_sum as f64 / (length + 1) as f64)),
        ("final_population", Some(ep.population_at(length as usize) as f64)),
        ("survived", Some((ep.population_at(length as usize) > 0) as u8 as f64)),
        ("births", Some(sum(|m| m.births))),
        ("deaths", Some(death_count as f64)),
        ("attacks_intra", Some(sum(|m| m.attacks_intra))),
        ("attacks_inter", Some(sum(|m| m.attacks_inter))),
        (
            "attacks_per_capita",
            Some(ep.metrics.iter().map(|m| m.attacks_per_capita).sum::<f64>() / ticks),
        ),
        (
            "mean_lifespan",
            (death_count > 0).then(|| deaths.iter().sum::<f64>() / death_count as f64),
        ),
    ]
}

/// Identity assignment, greedy acting, seeded episodes; every aggregate
/// gets a normal-approximation 95% interval over episodes.
pub fn evaluate(cfg: &ProtocolConfig, controllers: &[Controller]) -> Result<Evaluation> {
    let episodes = cfg.run(controllers, None, cfg.observation)?;
    let mut samples: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for ep in &episodes {
        for (name, value) in episode_aggregates(ep, cfg.length) {
            let entry = samples.entry(name.to_string()).or_default();
            if let Some(v) = value {
                entry.push(v);
            }
        }
    }
    let metrics = samples.into_iter().map(|(k, v)| (k, Interval::from_samples(&v))).collect();
    let population = (0..=cfg.length as usize)
        .map(|t| Interval::from_samples(&episodes.iter().map(|e| e.population_at(t) as f64).collect::<Vec<_>>()))
        .collect();
    Ok(Evaluation {
        episodes,
        metrics,
        population,
    })
}

/// Two families per side in one four-founder world.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadToHead {
    pub episodes: Vec<EpisodeSummary>,
    pub series: SizeSeries,
    pub side_a: [usize; 2],
    pub side_b: [usize; 2],
    /// Paired test of side A's minus side B's combined size at the final tick.
    pub final_gap: TTest,
    /// Fraction of episodes in which each side is extinct at the final tick.
    pub extinct_a: f64,
    pub extinct_b: f64,
}

impl HeadToHead {
    pub const CSV_HEADER: [&'static str; 4] = ["episode", "tick", "family", "size"];

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(Self::CSV_HEADER)?;
        write_size_rows(&mut w, None, &self.episodes)?;
        w.flush()?;
        Ok(())
    }
}

/// `controllers[f]` drives founder family `f`; `side_a` names the two
/// families on side A and the other two form side B.
pub fn head_to_head(cfg: &ProtocolConfig, controllers: [Controller; 4], side_a: [usize; 2]) -> Result<HeadToHead> {
    if cfg.world.founder_count != 4 {
        return Err(Error::Config(format!(
            "head-to-head needs 4 founders, world has {}",
            cfg.world.founder_count
        )));
    }
    if side_a[0] == side_a[1] || side_a.iter().any(|&f| f >= 4) {
        return Err(Error::Config(format!("side A must be two distinct families in 0..4, got {side_a:?}")));
    }
    let rest: Vec<usize> = (0..4).filter(|f| !side_a.contains(f)).collect();
    let side_b = [rest[0], rest[1]];
    let episodes = cfg.run(&controllers, None, cfg.observation)?;
    let end = cfg.length as usize;
    let side = |e: &EpisodeSummary, fams: [usize; 2]| fams.iter().map(|&f| size_at(e, end, f)).sum::<usize>() as f64;
    let a: Vec<f64> = episodes.iter().map(|e| side(e, side_a)).collect();
    let b: Vec<f64> = episodes.iter().map(|e| side(e, side_b)).collect();
    let extinct = |xs: &[f64]| xs.iter().filter(|&&x| x == 0.0).count() as f64 / xs.len() as f64;
    Ok(HeadToHead {
        series: SizeSeries::from_episodes(&episodes, 4, cfg.length),
        final_gap: paired_t_test(&a, &b)?,
        extinct_a: extinct(&a),
        extinct_b: extinct(&b),
        side_a,
        side_b,
        episodes,
    })
}

/// Paired runs with and without the intra-family attack mask.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ablation {
    pub family: u32,
    pub intact: Vec<EpisodeSummary>,
    pub masked: Vec<EpisodeSummary>,
    pub intact_series: SizeSeries,
    pub masked_series: SizeSeries,
    /// Attacks between identical members of the family, summed over episodes.
    pub intra_attacks_intact: usize,
    pub intra_attacks_masked: usize,
    /// Paired test of masked minus intact family size at the final tick.
    pub final_gap: TTest,
}

impl Ablation {
    pub const CSV_HEADER: [&'static str; 5] = ["arm", "episode", "tick", "family", "size"];

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(Self::CSV_HEADER)?;
        write_size_rows(&mut w, Some("intact"), &self.intact)?;
        write_size_rows(&mut w, Some("masked"), &self.masked)?;
        w.flush()?;
        Ok(())
    }
}

pub fn ablate_intra_family_attacks(cfg: &ProtocolConfig, controllers: &[Controller], family: u32) -> Result<Ablation> {
    let intact = cfg.run(controllers, None, cfg.observation)?;
    let masked = cfg.run(controllers, Some(family), cfg.observation)?;
    let f = family as usize;
    let end = cfg.length as usize;
    let intra = |eps: &[EpisodeSummary]| -> usize {
        eps.iter()
            .flat_map(|e| &e.metrics)
            .map(|m| m.attacks_within_family.get(f).copied().unwrap_or(0))
            .sum()
    };
    let finals = |eps: &[EpisodeSummary]| eps.iter().map(|e| size_at(e, end, f) as f64).collect::<Vec<_>>();
    let families = cfg.world.founder_count;
    Ok(Ablation {
        family,
        intact_series: SizeSeries::from_episodes(&intact, families, cfg.length),
        masked_series: SizeSeries::from_episodes(&masked, families, cfg.length),
        intra_attacks_intact: intra(&intact),
        intra_attacks_masked: intra(&masked),
        final_gap: paired_t_test(&finals(&masked), &finals(&intact))?,
        intact,
        masked,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftArm {
    pub name: String,
    pub episodes: Vec<EpisodeSummary>,
    /// Entropy per tick over the episodes still alive at that tick.
    pub entropy: Vec<Interval>,
}

/// Allele entropy with the kinship channel intact and zeroed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftReport {
    pub arms: Vec<DriftArm>,
}

impl DriftReport {
    pub const CSV_HEADER: [&'static str; 4] = ["arm", "episode", "tick", "entropy"];

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(Self::CSV_HEADER)?;
        for arm in &self.arms {
            for (e, ep) in arm.episodes.iter().enumerate() {
                for (t, h) in ep.entropy.iter().enumerate() {
                    if let Some(h) = h {
                        w.write_record([arm.name.as_str(), &e.to_string(), &t.to_string(), &h.to_string()])?;
                    }
                }
            }
        }
        w.flush()?;
        Ok(())
    }
}

pub fn kin_masking_drift(cfg: &ProtocolConfig, controllers: &[Controller]) -> Result<DriftReport> {
    let mut arms = Vec::new();
    for (name, mask_kinship) in [("kin_visible", false), ("kin_masked", true)] {
        let obs = ObsOptions {
            mask_kinship,
            ..cfg.observation
        };
        let episodes = cfg.run(controllers, None, obs)?;
        let entropy = (0..=cfg.length as usize)
            .map(|t| {
                let xs: Vec<f64> = episodes.iter().filter_map(|e| e.entropy.get(t).copied().flatten()).collect();
                Interval::from_samples(&xs)
            })
            .collect();
        arms.push(DriftArm {
            name: name.into(),
            episodes,
            entropy,
        });
    }
    Ok(DriftReport { arms })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(episodes: usize) -> ProtocolConfig {
        ProtocolConfig {
            world: WorldConfig::desk(),
            episodes,
            length: 120,
            seed: 5,
            ..ProtocolConfig::default()
        }
    }

    #[test]
    fn evaluation_is_reproducible() {
        let cfg = small(4);
        let a = evaluate(&cfg, &[Controller::Random; 5]).unwrap();
        let b = evaluate(&ProtocolConfig { exec: ExecMode::Sequential, ..cfg }, &[Controller::Random; 5]).unwrap();
        assert_eq!(a, b);
        let mut x = Vec::new();
        let mut y = Vec::new();
        a.write_csv(&mut x).unwrap();
        b.write_csv(&mut y).unwrap();
        assert_eq!(x, y);
        assert!(String::from_utf8(x).unwrap().starts_with("episode,tick,population,"));
    }

    #[test]
    fn head_to_head_needs_four_founders() {
        let cfg = small(2);
        let r = head_to_head(&cfg, [Controller::Random; 4], [0, 1]);
        assert!(matches!(r, Err(Error::Config(_))));
    }

    #[test]
    fn head_to_head_rows() {
        let mut cfg = small(3);
        cfg.world.founder_count = 4;
        let h = head_to_head(&cfg, [Controller::Random; 4], [0, 2]).unwrap();
        assert_eq!(h.side_b, [1, 3]);
        let mut buf = Vec::new();
        h.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let rows = text.lines().count() - 1;
        let expected: usize = h.episodes.iter().map(|e| e.family_sizes.len() * 4).sum();
        assert_eq!(rows, expected);
        assert!(text.starts_with("episode,tick,family,size\n"));
    }

    #[test]
    fn mask_removes_intra_family_attacks() {
        let mut cfg = small(4);
        cfg.world.founder_count = 1;
        let a = ablate_intra_family_attacks(&cfg, &[Controller::Random], 0).unwrap();
        assert_eq!(a.intra_attacks_masked, 0);
    }

    #[test]
    fn drift_starts_at_log2_five() {
        let d = kin_masking_drift(&small(2), &[Controller::Random; 5]).unwrap();
        for arm in &d.arms {
            assert!((arm.entropy[0].mean - 5f64.log2()).abs() < 1e-12);
        }
    }
}
