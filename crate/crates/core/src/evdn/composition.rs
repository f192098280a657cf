//! Kin-weighted value composition and learning targets.

use rand::Rng;

use crate::error::{Error, Result};
use crate::neural::{argmax, OUTPUTS};
use crate::world::Action;

/// Joint value of an agent: the kinship-weighted mean of its family members'
/// individual values. `kinships[j]` weights `values[j]`; the agent itself
/// appears with weight 1.
pub fn joint_q(values: &[f64], kinships: &[f64]) -> Result<f64> {
    if values.len() != kinships.len() {
        return Err(Error::Domain("values and kinships differ in length".into()));
    }
    let n: f64 = kinships.iter().sum();
    if !(n > 0.0) {
        return Err(Error::Domain("joint value over an empty family".into()));
    }
    Ok(weighted_sum(values, kinships) / n)
}

/// Bootstrap estimate of a dead agent's terminal reward from the greedy
/// values of the survivors. Zero when no kin survive.
pub fn terminal_estimate(survivor_values: &[f64], kinships: &[f64]) -> f64 {
    let n: f64 = kinships.iter().sum();
    if n > 0.0 {
        weighted_sum(survivor_values, kinships) / n
    } else {
        0.0
    }
}

fn weighted_sum(values: &[f64], weights: &[f64]) -> f64 {
    values
        .iter()
        .zip(weights)
        .filter(|(_, &k)| k != 0.0)
        .map(|(v, k)| k * v)
        .sum()
}

/// Gradient of `sum_i residual_i^2` with respect to each agent's chosen
/// action value, where residual `i` is taken against agent `i`'s joint value.
/// `kin` is the row-major `n x n` kinship matrix of the agents alive at the
/// start of the tick.
pub fn output_gradients(kin: &[f64], residuals: &[f64]) -> Result<Vec<f64>> {
    let n = residuals.len();
    if kin.len() != n * n {
        return Err(Error::Domain(format!("kinship matrix of {} entries for {n} agents", kin.len())));
    }
    let mut grad = vec![0.0; n];
    for (i, &delta) in residuals.iter().enumerate() {
        let row = &kin[i * n..(i + 1) * n];
        let family: f64 = row.iter().sum();
        if !(family > 0.0) {
            return Err(Error::Domain(format!("agent {i} has an empty family")));
        }
        for (g, &k) in grad.iter_mut().zip(row) {
            if k != 0.0 {
                *g += -2.0 * delta * k / family;
            }
        }
    }
    Ok(grad)
}

/// What followed an experience.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Continuation {
    /// The agent survived the tick; `next_value` is its joint greedy value
    /// at the next tick. Episode truncation also lands here.
    Alive { reward: f64, next_value: f64 },
    /// The agent died during the tick.
    Died { estimate: f64 },
}

pub fn learning_target(next: Continuation, gamma: f64) -> f64 {
    match next {
        Continuation::Alive { reward, next_value } => reward + gamma * next_value,
        Continuation::Died { estimate } => estimate,
    }
}

/// Greedy action with probability `1 - epsilon`, uniform otherwise. Always
/// draws one uniform number, plus one action index when exploring.
pub fn epsilon_greedy<R: Rng + ?Sized>(values: &[f64; OUTPUTS], epsilon: f64, rng: &mut R) -> Action {
    let explore = rng.random::<f64>() < epsilon;
    let index = if explore {
        rng.random_range(0..OUTPUTS)
    } else {
        argmax(values).0
    };
    Action::from_index(index)
}
