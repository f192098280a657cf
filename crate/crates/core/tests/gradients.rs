//! Central finite differences against the hand-written backward pass.

use evolab::neural::{Architecture, GradientBatch, Optimizer, OptimizerKind, QNetwork};
use evolab::world::INPUT_LEN;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const PROBES: usize = 64;
const STEP: f64 = 1e-5;
const MAX_REL: f64 = 1e-3;
/// Below this magnitude the central difference is dominated by round-off
/// (about eps * |loss| / STEP), so it acts as the denominator floor.
const NOISE_FLOOR: f64 = 1e-6;

/// Squared residual loss for one (observation, action, target).
fn loss(net: &QNetwork, x: &[f64], action: usize, target: f64) -> f64 {
    let q = net.forward(x).unwrap()[action];
    (target - q).powi(2)
}

fn max_relative_error(arch: Architecture, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let net = QNetwork::new(arch, seed).unwrap();
    let x: Vec<f64> = (0..INPUT_LEN).map(|_| rng.random_range(-1.0..1.0)).collect();
    let action = rng.random_range(0..10);
    let target = 2.5;
    let residual = target - net.forward(&x).unwrap()[action];
    let analytic = net.backward(&x, action, residual).unwrap();

    let mut worst: f64 = 0.0;
    for _ in 0..PROBES {
        let p = rng.random_range(0..net.parameter_count());
        let mut plus = net.clone();
        plus.params_mut()[p] += STEP;
        let mut minus = net.clone();
        minus.params_mut()[p] -= STEP;
        let numeric = (loss(&plus, &x, action, target) - loss(&minus, &x, action, target)) / (2.0 * STEP);
        let a = analytic.grads[p];
        let scale = a.abs().max(numeric.abs()).max(NOISE_FLOOR);
        worst = worst.max((a - numeric).abs() / scale);
    }
    worst
}

#[test]
fn small_conv_matches_finite_differences() {
    let err = max_relative_error(Architecture::small_conv(), 11);
    assert!(err < MAX_REL, "max relative error {err}");
}

#[test]
fn large_mlp_matches_finite_differences() {
    let err = max_relative_error(Architecture::large_mlp(), 12);
    assert!(err < MAX_REL, "max relative error {err}");
}

#[test]
fn tiny_conv_matches_finite_differences() {
    let arch = Architecture::SmallConv { channels: 2, hidden: 8 };
    let err = max_relative_error(arch, 13);
    assert!(err < MAX_REL, "max relative error {err}");
}

#[test]
fn adam_overfits_a_single_target() {
    let mut net = QNetwork::new(Architecture::small_conv(), 5).unwrap();
    let x: Vec<f64> = (0..INPUT_LEN).map(|i| ((i * 13 % 17) as f64 / 17.0) - 0.5).collect();
    let (action, target) = (6, 4.0);
    let mut opt = Optimizer::new(OptimizerKind::adam(1e-3), net.parameter_count());
    let start = loss(&net, &x, action, target);
    let mut previous = start;
    for step in 0..100 {
        let residual = target - net.forward(&x).unwrap()[action];
        let g: GradientBatch = net.backward(&x, action, residual).unwrap();
        opt.apply(&mut net, &g).unwrap();
        let now = loss(&net, &x, action, target);
        if step % 20 == 19 {
            assert!(now < previous, "loss stalled at step {step}: {now} >= {previous}");
            previous = now;
        }
    }
    assert!(previous < 0.1 * start, "loss {previous} vs start {start}");
}
