use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Move {
    Stay,
    North,
    East,
    South,
    West,
}

impl Move {
    pub const ALL: [Move; 5] = [Move::Stay, Move::North, Move::East, Move::South, Move::West];

    /// Grid offset; north is decreasing `y`.
    pub fn delta(self) -> (i64, i64) {
        match self {
            Move::Stay => (0, 0),
            Move::North => (0, -1),
            Move::East => (1, 0),
            Move::South => (0, 1),
            Move::West => (-1, 0),
        }
    }
}

/// One of the ten per-tick choices: a move plus an optional attack.
///
/// Index layout: `move_index + 5 * attack`, so indices 0..5 are peaceful
/// moves and 5..10 the same moves with an attack.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Action {
    pub movement: Move,
    pub attack: bool,
}

impl Action {
    pub const COUNT: usize = 10;

    pub const STAY: Action = Action {
        movement: Move::Stay,
        attack: false,
    };

    pub fn new(movement: Move, attack: bool) -> Self {
        Action { movement, attack }
    }

    pub fn from_index(index: usize) -> Self {
        assert!(index < Self::COUNT, "action index {index} out of range");
        Action {
            movement: Move::ALL[index % 5],
            attack: index >= 5,
        }
    }

    pub fn index(self) -> usize {
        self.movement as usize + if self.attack { 5 } else { 0 }
    }
}
