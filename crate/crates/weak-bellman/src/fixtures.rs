//! Bundled desk-scale instances used by the examples, the CLI and the test
//! suite.
//!
//! Reward scales are chosen so that the exact action-value tables stay well
//! inside the unit sup-norm ball, which keeps the one-hot embedding of
//! `Q^pi` inside the unit-norm predictor class.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::mdp::{QTable, RewardNoise, TabularMdp, TabularPolicy};
use crate::rng::substream;

/// Five-state corridor with two actions (left/right) and a mildly sticky
/// transition. Rewards grow toward the right end and are scaled small.
pub fn gridworld5() -> TabularMdp {
    let n = 5;
    let slip = 0.1;
    let mut left = DMatrix::zeros(n, n);
    let mut right = DMatrix::zeros(n, n);
    for s in 0..n {
        let l = s.saturating_sub(1);
        let r = (s + 1).min(n - 1);
        left[(s, l)] += 1.0 - slip;
        left[(s, s)] += slip;
        right[(s, r)] += 1.0 - slip;
        right[(s, s)] += slip;
    }
    let mut reward = DMatrix::zeros(n, 2);
    for s in 0..n {
        for a in 0..2 {
            reward[(s, a)] = 0.005 * s as f64;
        }
    }
    reward[(n - 1, 0)] = 0.05;
    reward[(n - 1, 1)] = 0.05;
    let mut start = DVector::zeros(n);
    start[0] = 1.0;
    TabularMdp::new(vec![left, right], reward, RewardNoise::uniform(0.05), 0.3, start).unwrap()
}

/// The evaluation/optimization policy used with [`gridworld5`]: drift right
/// with probability 0.7 in every state.
pub fn gridworld5_policy() -> TabularPolicy {
    TabularPolicy::new(DMatrix::from_fn(5, 2, |_, a| if a == 1 { 0.7 } else { 0.3 })).unwrap()
}

/// A two-armed bandit: one state, gamma = 0, arm means as given.
pub fn two_armed_bandit(mean0: f64, mean1: f64, noise_half_width: f64) -> TabularMdp {
    TabularMdp::new(
        vec![DMatrix::from_element(1, 1, 1.0), DMatrix::from_element(1, 1, 1.0)],
        DMatrix::from_row_slice(1, 2, &[mean0, mean1]),
        RewardNoise::uniform(noise_half_width),
        0.0,
        DVector::from_element(1, 1.0),
    )
    .unwrap()
}

/// Random MDP with Dirichlet-like transition rows and uniform start.
/// `reward_scale` caps the mean rewards; keep it small when the one-hot
/// embedding of `Q^pi` must stay inside the unit ball.
pub fn random_mdp(num_states: usize, num_actions: usize, gamma: f64, reward_scale: f64, seed: u64) -> TabularMdp {
    let mut rng = substream(seed, 0);
    let mut transition = Vec::with_capacity(num_actions);
    for _ in 0..num_actions {
        let mut p = DMatrix::zeros(num_states, num_states);
        for s in 0..num_states {
            let mut row: Vec<f64> = (0..num_states).map(|_| rng.gen::<f64>() + 1e-3).collect();
            let sum: f64 = row.iter().sum();
            for x in &mut row {
                *x /= sum;
            }
            for (s2, &x) in row.iter().enumerate() {
                p[(s, s2)] = x;
            }
        }
        transition.push(p);
    }
    let reward = DMatrix::from_fn(num_states, num_actions, |_, _| rng.gen::<f64>() * reward_scale);
    let start = DVector::from_element(num_states, 1.0 / num_states as f64);
    TabularMdp::new(transition, reward, RewardNoise::none(), gamma, start).unwrap()
}

/// Random stochastic policy with full support.
pub fn random_policy(num_states: usize, num_actions: usize, seed: u64) -> TabularPolicy {
    let mut rng = substream(seed, 1);
    let mut probs = DMatrix::zeros(num_states, num_actions);
    for s in 0..num_states {
        let row: Vec<f64> = (0..num_actions).map(|_| rng.gen::<f64>() + 0.05).collect();
        let sum: f64 = row.iter().sum();
        for (a, x) in row.iter().enumerate() {
            probs[(s, a)] = x / sum;
        }
    }
    TabularPolicy::new(probs).unwrap()
}

/// Random Q table with entries in [-1, 1].
pub fn random_q_table(num_states: usize, num_actions: usize, seed: u64) -> QTable {
    let mut rng = substream(seed, 2);
    QTable::new(DMatrix::from_fn(num_states, num_actions, |_, _| {
        rng.gen::<f64>() * 2.0 - 1.0
    }))
}
