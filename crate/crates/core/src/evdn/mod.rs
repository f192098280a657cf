//! Evolutionary value decomposition: kin-composed Q-learning without replay.

mod composition;
mod trainer;

pub use composition::{epsilon_greedy, joint_q, learning_target, output_gradients, terminal_estimate, Continuation};
pub use trainer::{derive_seed, identity_assignment, sample_assignment, TickReport, Trainer, TrainerConfig};
