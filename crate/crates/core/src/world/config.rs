use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReproductionMode {
    Asexual,
    Sexual,
}

/// Which tiles are food sources.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FoodLayout {
    /// Exactly `round(fraction * width * height)` source tiles, drawn from the
    /// world seed.
    UniformRandom { fraction: f64 },
    /// Listed `(x, y)` coordinates are sources, everything else is dirt.
    Explicit { tiles: Vec<(u32, u32)> },
    /// No food anywhere.
    AllDirt,
}

impl Default for FoodLayout {
    fn default() -> Self {
        FoodLayout::UniformRandom { fraction: 0.25 }
    }
}

/// Static parameters of a grid world. Defaults follow the reference
/// configuration (50x50, endowment 10, health 2, fertility 5..=40,
/// longevity 50, growth 0.15, capacity 3, five founders).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldConfig {
    pub width: u32,
    pub height: u32,
    pub endowment: f64,
    pub initial_health: u32,
    pub fertility_start: u32,
    pub fertility_end: u32,
    pub longevity: u32,
    pub food_growth_rate: f64,
    pub food_capacity: f64,
    pub genome_length: usize,
    pub reproduction: ReproductionMode,
    pub founder_count: usize,
    pub layout: FoodLayout,
    pub seed: u64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig {
            width: 50,
            height: 50,
            endowment: 10.0,
            initial_health: 2,
            fertility_start: 5,
            fertility_end: 40,
            longevity: 50,
            food_growth_rate: 0.15,
            food_capacity: 3.0,
            genome_length: 1,
            reproduction: ReproductionMode::Asexual,
            founder_count: 5,
            layout: FoodLayout::default(),
            seed: 0,
        }
    }
}

impl WorldConfig {
    /// The reference asexual environment.
    pub fn asexual() -> Self {
        Self::default()
    }

    /// The reference sexual environment: 32 genes, sexual reproduction.
    pub fn sexual() -> Self {
        WorldConfig {
            genome_length: 32,
            reproduction: ReproductionMode::Sexual,
            ..Self::default()
        }
    }

    /// Small asexual world used for laptop-scale experiments.
    pub fn desk() -> Self {
        WorldConfig {
            width: 20,
            height: 20,
            ..Self::default()
        }
    }

    pub fn tile_count(&self) -> usize {
        self.width as usize * self.height as usize
    }

    /// Number of source tiles this layout produces.
    pub fn source_tile_count(&self) -> usize {
        match &self.layout {
            FoodLayout::UniformRandom { fraction } => {
                ((fraction * self.tile_count() as f64).round() as usize).min(self.tile_count())
            }
            FoodLayout::Explicit { tiles } => {
                let mut t = tiles.clone();
                t.sort_unstable();
                t.dedup();
                t.len()
            }
            FoodLayout::AllDirt => 0,
        }
    }

    /// Sustainable population estimate: food produced per tick across all
    /// sources, each agent eating one unit per tick.
    pub fn carrying_capacity(&self) -> f64 {
        self.source_tile_count() as f64 * self.food_growth_rate
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.width < 3 || self.height < 3 {
            return bad(format!(
                "world must be at least 3x3, got {}x{}",
                self.width, self.height
            ));
        }
        if !(self.endowment.is_finite() && self.endowment > 0.0) {
            return bad(format!("endowment must be positive, got {}", self.endowment));
        }
        if self.initial_health == 0 {
            return bad("initial_health must be at least 1".into());
        }
        if !(self.fertility_start <= self.fertility_end && self.fertility_end <= self.longevity) {
            return bad(format!(
                "need fertility_start <= fertility_end <= longevity, got {} / {} / {}",
                self.fertility_start, self.fertility_end, self.longevity
            ));
        }
        if !(self.food_growth_rate > 0.0 && self.food_growth_rate <= self.food_capacity) {
            return bad(format!(
                "need 0 < food_growth_rate <= food_capacity, got {} / {}",
                self.food_growth_rate, self.food_capacity
            ));
        }
        if !self.food_capacity.is_finite() {
            return bad("food_capacity must be finite".into());
        }
        if self.genome_length == 0 {
            return bad("genome_length must be at least 1".into());
        }
        if self.reproduction == ReproductionMode::Sexual && self.genome_length < 2 {
            return bad("sexual reproduction needs genome_length >= 2".into());
        }
        if self.founder_count == 0 {
            return bad("founder_count must be at least 1".into());
        }
        if self.founder_count > self.tile_count() {
            return bad(format!(
                "world too small: {} founders on {} tiles",
                self.founder_count,
                self.tile_count()
            ));
        }
        match &self.layout {
            FoodLayout::UniformRandom { fraction } => {
                if !(0.0..=1.0).contains(fraction) {
                    return bad(format!("layout fraction must be in [0, 1], got {fraction}"));
                }
            }
            FoodLayout::Explicit { tiles } => {
                if let Some(&(x, y)) = tiles.iter().find(|&&(x, y)| x >= self.width || y >= self.height) {
                    return bad(format!("explicit food tile ({x}, {y}) outside the world"));
                }
            }
            FoodLayout::AllDirt => {}
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_reference_table() {
        let c = WorldConfig::default();
        assert_eq!((c.width, c.height), (50, 50));
        assert_eq!(c.endowment, 10.0);
        assert_eq!(c.initial_health, 2);
        assert_eq!((c.fertility_start, c.fertility_end, c.longevity), (5, 40, 50));
        assert_eq!(c.food_growth_rate, 0.15);
        assert_eq!(c.food_capacity, 3.0);
        assert_eq!(c.founder_count, 5);
        c.validate().unwrap();
        WorldConfig::sexual().validate().unwrap();
    }

    #[test]
    fn rejects_bad_windows_and_tiny_worlds() {
        let c = WorldConfig { fertility_end: 60, ..WorldConfig::default() };
        assert!(c.validate().is_err());
        let c = WorldConfig {
            width: 3,
            height: 3,
            founder_count: 10,
            ..WorldConfig::default()
        };
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        let c = WorldConfig {
            food_growth_rate: 4.0,
            ..WorldConfig::default()
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn carrying_capacity_counts_sources() {
        let c = WorldConfig::desk();
        assert_eq!(c.source_tile_count(), 100);
        assert!((c.carrying_capacity() - 15.0).abs() < 1e-12);
    }
}
