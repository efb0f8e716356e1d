//! Finite-MDP ground truth: exact policy evaluation, discounted occupancy
//! measures, Bellman operators and errors.
//!
//! Everything here is exact linear algebra on dense matrices; instance sizes
//! are desk scale, so direct LU solves are used throughout. All types are
//! immutable after construction and safe to share across threads.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

const ROW_SUM_TOL: f64 = 1e-12;

/// Bounded zero-mean reward noise: uniform on `[-half_width, half_width]`.
///
/// Construction of a [`TabularMdp`] rejects half widths that could push a
/// realized reward outside `[-1, 1]`, so no truncation is ever applied and
/// the noise stays exactly zero mean.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct RewardNoise {
    pub half_width: f64,
}

impl RewardNoise {
    pub fn none() -> Self {
        RewardNoise { half_width: 0.0 }
    }

    pub fn uniform(half_width: f64) -> Self {
        RewardNoise { half_width }
    }
}

/// A finite discounted MDP with known transition tensor and mean rewards.
#[derive(Clone, Debug)]
pub struct TabularMdp {
    num_states: usize,
    num_actions: usize,
    /// One `|S| x |S|` transition matrix per action; row `s` of
    /// `transition[a]` is `P(. | s, a)`.
    transition: Vec<DMatrix<f64>>,
    /// Mean rewards `r[s, a]`, entries in `[0, 1]`.
    mean_reward: DMatrix<f64>,
    reward_noise: RewardNoise,
    discount: f64,
    start_dist: DVector<f64>,
}

impl TabularMdp {
    pub fn new(
        transition: Vec<DMatrix<f64>>,
        mean_reward: DMatrix<f64>,
        reward_noise: RewardNoise,
        discount: f64,
        start_dist: DVector<f64>,
    ) -> Result<Self> {
        let num_actions = transition.len();
        if num_actions == 0 {
            return Err(Error::invalid("need at least one action"));
        }
        let num_states = transition[0].nrows();
        if num_states == 0 {
            return Err(Error::invalid("need at least one state"));
        }
        if !(0.0..1.0).contains(&discount) {
            return Err(Error::invalid(format!(
                "discount must lie in [0, 1), got {discount}"
            )));
        }
        for (a, p) in transition.iter().enumerate() {
            if p.nrows() != num_states || p.ncols() != num_states {
                return Err(Error::DimMismatch(format!(
                    "transition matrix for action {a} is {}x{}, expected {num_states}x{num_states}",
                    p.nrows(),
                    p.ncols()
                )));
            }
            for s in 0..num_states {
                let row = p.row(s);
                if row.iter().any(|&x| x < 0.0) {
                    return Err(Error::invalid(format!(
                        "negative transition probability at (s={s}, a={a})"
                    )));
                }
                let sum: f64 = row.iter().sum();
                if (sum - 1.0).abs() > ROW_SUM_TOL {
                    return Err(Error::invalid(format!(
                        "transition row (s={s}, a={a}) sums to {sum}, expected 1"
                    )));
                }
            }
        }
        if mean_reward.nrows() != num_states || mean_reward.ncols() != num_actions {
            return Err(Error::DimMismatch(format!(
                "reward table is {}x{}, expected {num_states}x{num_actions}",
                mean_reward.nrows(),
                mean_reward.ncols()
            )));
        }
        if mean_reward.iter().any(|&r| !(0.0..=1.0).contains(&r)) {
            return Err(Error::invalid("mean rewards must lie in [0, 1]"));
        }
        if reward_noise.half_width < 0.0 {
            return Err(Error::invalid("noise half width must be nonnegative"));
        }
        let max_abs_reward = mean_reward.iter().fold(0.0f64, |m, &r| m.max(r.abs()));
        if max_abs_reward + reward_noise.half_width > 1.0 + ROW_SUM_TOL {
            return Err(Error::invalid(format!(
                "noise half width {} can push a realized reward outside [-1, 1]",
                reward_noise.half_width
            )));
        }
        if start_dist.len() != num_states {
            return Err(Error::DimMismatch("start distribution length".into()));
        }
        if start_dist.iter().any(|&p| p < 0.0) {
            return Err(Error::invalid("start distribution has a negative entry"));
        }
        let start_sum: f64 = start_dist.iter().sum();
        if (start_sum - 1.0).abs() > ROW_SUM_TOL {
            return Err(Error::invalid(format!(
                "start distribution sums to {start_sum}, expected 1"
            )));
        }
        Ok(TabularMdp {
            num_states,
            num_actions,
            transition,
            mean_reward,
            reward_noise,
            discount,
            start_dist,
        })
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn discount(&self) -> f64 {
        self.discount
    }

    pub fn reward_noise(&self) -> RewardNoise {
        self.reward_noise
    }

    pub fn mean_reward(&self, s: usize, a: usize) -> f64 {
        self.mean_reward[(s, a)]
    }

    pub fn mean_reward_table(&self) -> &DMatrix<f64> {
        &self.mean_reward
    }

    pub fn transition_prob(&self, s: usize, a: usize, s_next: usize) -> f64 {
        self.transition[a][(s, s_next)]
    }

    /// Row `P(. | s, a)` as a slice-backed vector copy.
    pub fn transition_row(&self, s: usize, a: usize) -> DVector<f64> {
        self.transition[a].row(s).transpose()
    }

    /// The full `|S| x |S|` transition matrix of one action.
    pub fn transition_matrix(&self, a: usize) -> &DMatrix<f64> {
        &self.transition[a]
    }

    pub fn start_dist(&self) -> &DVector<f64> {
        &self.start_dist
    }

    /// State transition matrix under a policy: `P_pi[s, s'] = sum_a pi(a|s) P(s'|s,a)`.
    pub fn policy_transition(&self, policy: &TabularPolicy) -> DMatrix<f64> {
        let n = self.num_states;
        let mut p = DMatrix::zeros(n, n);
        for a in 0..self.num_actions {
            for s in 0..n {
                let w = policy.prob(s, a);
                if w != 0.0 {
                    for s2 in 0..n {
                        p[(s, s2)] += w * self.transition[a][(s, s2)];
                    }
                }
            }
        }
        p
    }
}

/// A stationary stochastic policy as a `|S| x |A|` probability table.
#[derive(Clone, Debug, PartialEq)]
pub struct TabularPolicy {
    probs: DMatrix<f64>,
}

impl TabularPolicy {
    pub fn new(probs: DMatrix<f64>) -> Result<Self> {
        for s in 0..probs.nrows() {
            let row = probs.row(s);
            if row.iter().any(|&p| p < 0.0) {
                return Err(Error::invalid(format!("policy row {s} has a negative entry")));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > ROW_SUM_TOL {
                return Err(Error::invalid(format!(
                    "policy row {s} sums to {sum}, expected 1"
                )));
            }
        }
        Ok(TabularPolicy { probs })
    }

    pub fn uniform(num_states: usize, num_actions: usize) -> Self {
        TabularPolicy {
            probs: DMatrix::from_element(num_states, num_actions, 1.0 / num_actions as f64),
        }
    }

    /// Deterministic policy from an action per state.
    pub fn deterministic(num_states: usize, num_actions: usize, actions: &[usize]) -> Result<Self> {
        if actions.len() != num_states {
            return Err(Error::DimMismatch("one action per state required".into()));
        }
        let mut probs = DMatrix::zeros(num_states, num_actions);
        for (s, &a) in actions.iter().enumerate() {
            if a >= num_actions {
                return Err(Error::invalid(format!("action {a} out of range in state {s}")));
            }
            probs[(s, a)] = 1.0;
        }
        Ok(TabularPolicy { probs })
    }

    pub fn num_states(&self) -> usize {
        self.probs.nrows()
    }

    pub fn num_actions(&self) -> usize {
        self.probs.ncols()
    }

    pub fn prob(&self, s: usize, a: usize) -> f64 {
        self.probs[(s, a)]
    }

    pub fn probs(&self) -> &DMatrix<f64> {
        &self.probs
    }

    pub fn action_probs(&self, s: usize) -> DVector<f64> {
        self.probs.row(s).transpose()
    }
}

/// An action-value table `Q[s, a]`.
///
/// The framework normalizes value functions to `sup |Q| <= 1`. Violations are
/// reported as a warning rather than an error; [`QTable::rescaled`] brings a
/// table back inside the bound.
#[derive(Clone, Debug, PartialEq)]
pub struct QTable {
    values: DMatrix<f64>,
}

impl QTable {
    pub fn new(values: DMatrix<f64>) -> Self {
        let sup = values.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
        if sup > 1.0 + 1e-12 {
            log::warn!("Q table has sup norm {sup:.6} > 1; consider QTable::rescaled");
        }
        QTable { values }
    }

    /// Construct without the sup-norm warning, for tables that are allowed
    /// to leave the unit range (perturbed-reward value functions).
    pub fn new_unchecked(values: DMatrix<f64>) -> Self {
        QTable { values }
    }

    pub fn zeros(num_states: usize, num_actions: usize) -> Self {
        QTable {
            values: DMatrix::zeros(num_states, num_actions),
        }
    }

    pub fn constant(num_states: usize, num_actions: usize, c: f64) -> Self {
        QTable {
            values: DMatrix::from_element(num_states, num_actions, c),
        }
    }

    pub fn get(&self, s: usize, a: usize) -> f64 {
        self.values[(s, a)]
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, &v| m.max(v.abs()))
    }

    /// Copy scaled by `1 / max(1, sup_norm)` so the uniform bound holds.
    pub fn rescaled(&self) -> QTable {
        let sup = self.sup_norm().max(1.0);
        QTable {
            values: &self.values / sup,
        }
    }

    /// `Q(s, pi) = sum_a pi(a|s) Q(s, a)`.
    pub fn state_value(&self, policy: &TabularPolicy, s: usize) -> f64 {
        (0..self.values.ncols())
            .map(|a| policy.prob(s, a) * self.values[(s, a)])
            .sum()
    }
}

/// The exact action-value function of `policy`: the unique solution of
/// `Q = r + gamma P^pi Q`, obtained by an LU solve of the state-value system.
pub fn exact_q(mdp: &TabularMdp, policy: &TabularPolicy) -> Result<QTable> {
    check_policy_shape(mdp, policy)?;
    let n = mdp.num_states;
    let gamma = mdp.discount;
    // Solve (I - gamma P_pi) V = r_pi, then back out Q = r + gamma P V.
    let p_pi = mdp.policy_transition(policy);
    let mut r_pi = DVector::zeros(n);
    for s in 0..n {
        for a in 0..mdp.num_actions {
            r_pi[s] += policy.prob(s, a) * mdp.mean_reward[(s, a)];
        }
    }
    let system = DMatrix::identity(n, n) - gamma * &p_pi;
    let v = system
        .lu()
        .solve(&r_pi)
        .ok_or_else(|| Error::Singular("Bellman evaluation system".into()))?;
    let mut q = DMatrix::zeros(n, mdp.num_actions);
    for a in 0..mdp.num_actions {
        let pv = &mdp.transition[a] * &v;
        for s in 0..n {
            q[(s, a)] = mdp.mean_reward[(s, a)] + gamma * pv[s];
        }
    }
    Ok(QTable { values: q })
}

/// Discounted occupancy measure `d^pi(s, a)` from the start distribution,
/// computed by solving the linear flow equations.
pub fn occupancy(mdp: &TabularMdp, policy: &TabularPolicy) -> Result<DMatrix<f64>> {
    check_policy_shape(mdp, policy)?;
    let n = mdp.num_states;
    let gamma = mdp.discount;
    // State occupancy solves (I - gamma P_pi^T) d = (1 - gamma) nu.
    let p_pi = mdp.policy_transition(policy);
    let system = DMatrix::identity(n, n) - gamma * p_pi.transpose();
    let rhs = (1.0 - gamma) * &mdp.start_dist;
    let d_state = system
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Singular("occupancy flow system".into()))?;
    let mut d = DMatrix::zeros(n, mdp.num_actions);
    for s in 0..n {
        for a in 0..mdp.num_actions {
            d[(s, a)] = d_state[s] * policy.prob(s, a);
        }
    }
    Ok(d)
}

/// Bellman error table `B^pi(Q)(s,a) = Q(s,a) - r(s,a) - gamma E[Q(s', pi)]`.
pub fn bellman_error_table(mdp: &TabularMdp, policy: &TabularPolicy, q: &QTable) -> Result<DMatrix<f64>> {
    check_policy_shape(mdp, policy)?;
    if q.values.nrows() != mdp.num_states || q.values.ncols() != mdp.num_actions {
        return Err(Error::DimMismatch("Q table shape".into()));
    }
    let n = mdp.num_states;
    let q_pi: DVector<f64> = DVector::from_fn(n, |s, _| q.state_value(policy, s));
    let mut b = DMatrix::zeros(n, mdp.num_actions);
    for a in 0..mdp.num_actions {
        let pq = &mdp.transition[a] * &q_pi;
        for s in 0..n {
            b[(s, a)] = q.values[(s, a)] - mdp.mean_reward[(s, a)] - mdp.discount * pq[s];
        }
    }
    Ok(b)
}

/// `E_{s ~ start}[ Q(s, pi) ]`.
pub fn value_from_start(q: &QTable, policy: &TabularPolicy, start: &DVector<f64>) -> f64 {
    (0..start.len())
        .map(|s| start[s] * q.state_value(policy, s))
        .sum()
}

/// Scalar value `V^pi` of a policy at the MDP's start distribution.
pub fn exact_value(mdp: &TabularMdp, policy: &TabularPolicy) -> Result<f64> {
    let q = exact_q(mdp, policy)?;
    Ok(value_from_start(&q, policy, &mdp.start_dist))
}

fn check_policy_shape(mdp: &TabularMdp, policy: &TabularPolicy) -> Result<()> {
    if policy.num_states() != mdp.num_states || policy.num_actions() != mdp.num_actions {
        return Err(Error::DimMismatch(format!(
            "policy is {}x{}, MDP is {}x{}",
            policy.num_states(),
            policy.num_actions(),
            mdp.num_states,
            mdp.num_actions
        )));
    }
    Ok(())
}

// ------------------------------------------------------------------
// Plain-text format
//
//   states actions gamma [noise_half_width]
//   s a r p(s0) p(s1) ... p(s_{S-1})      (one line per state-action pair)
//   ...
//   start p(s0) p(s1) ... p(s_{S-1})
// ------------------------------------------------------------------

pub fn write_text(mdp: &TabularMdp) -> String {
    let mut out = String::new();
    use std::fmt::Write;
    writeln!(
        out,
        "{} {} {} {}",
        mdp.num_states, mdp.num_actions, mdp.discount, mdp.reward_noise.half_width
    )
    .unwrap();
    for s in 0..mdp.num_states {
        for a in 0..mdp.num_actions {
            write!(out, "{} {} {}", s, a, mdp.mean_reward[(s, a)]).unwrap();
            for s2 in 0..mdp.num_states {
                write!(out, " {}", mdp.transition[a][(s, s2)]).unwrap();
            }
            writeln!(out).unwrap();
        }
    }
    write!(out, "start").unwrap();
    for s in 0..mdp.num_states {
        write!(out, " {}", mdp.start_dist[s]).unwrap();
    }
    writeln!(out).unwrap();
    out
}

pub fn parse_text(text: &str) -> Result<TabularMdp> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines.next().ok_or_else(|| Error::parse("empty MDP file"))?;
    let head: Vec<&str> = header.split_whitespace().collect();
    if head.len() < 3 {
        return Err(Error::parse("header must be `states actions gamma [noise]`"));
    }
    let num_states: usize = head[0].parse().map_err(|_| Error::parse("bad state count"))?;
    let num_actions: usize = head[1].parse().map_err(|_| Error::parse("bad action count"))?;
    let gamma: f64 = head[2].parse().map_err(|_| Error::parse("bad discount"))?;
    let noise = if head.len() > 3 {
        RewardNoise::uniform(head[3].parse().map_err(|_| Error::parse("bad noise half width"))?)
    } else {
        RewardNoise::none()
    };

    let mut transition = vec![DMatrix::zeros(num_states, num_states); num_actions];
    let mut reward = DMatrix::zeros(num_states, num_actions);
    let mut seen = vec![false; num_states * num_actions];
    let mut start = None;
    for line in lines {
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks[0] == "start" {
            if toks.len() != num_states + 1 {
                return Err(Error::parse("start line has wrong arity"));
            }
            let mut nu = DVector::zeros(num_states);
            for s in 0..num_states {
                nu[s] = toks[s + 1].parse().map_err(|_| Error::parse("bad start prob"))?;
            }
            start = Some(nu);
            continue;
        }
        if toks.len() != 3 + num_states {
            return Err(Error::parse(format!("row has {} fields, expected {}", toks.len(), 3 + num_states)));
        }
        let s: usize = toks[0].parse().map_err(|_| Error::parse("bad state id"))?;
        let a: usize = toks[1].parse().map_err(|_| Error::parse("bad action id"))?;
        if s >= num_states || a >= num_actions {
            return Err(Error::parse(format!("state-action ({s},{a}) out of range")));
        }
        reward[(s, a)] = toks[2].parse().map_err(|_| Error::parse("bad reward"))?;
        for s2 in 0..num_states {
            transition[a][(s, s2)] = toks[3 + s2].parse().map_err(|_| Error::parse("bad prob"))?;
        }
        seen[s * num_actions + a] = true;
    }
    if !seen.iter().all(|&x| x) {
        return Err(Error::parse("missing rows for some state-action pairs"));
    }
    let start = start.ok_or_else(|| Error::parse("missing start line"))?;
    TabularMdp::new(transition, reward, noise, gamma, start)
}

pub fn load_text(path: &std::path::Path) -> Result<TabularMdp> {
    parse_text(&std::fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use approx::assert_abs_diff_eq;

    fn single_state_mdp(r: f64, gamma: f64) -> TabularMdp {
        TabularMdp::new(
            vec![DMatrix::from_element(1, 1, 1.0)],
            DMatrix::from_element(1, 1, r),
            RewardNoise::none(),
            gamma,
            DVector::from_element(1, 1.0),
        )
        .unwrap()
    }

    #[test]
    fn exact_q_geometric_series() {
        let mdp = single_state_mdp(0.5, 0.5);
        let pi = TabularPolicy::uniform(1, 1);
        let q = exact_q(&mdp, &pi).unwrap();
        assert_abs_diff_eq!(q.get(0, 0), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn exact_q_gamma_zero_is_reward() {
        let mdp = fixtures::random_mdp(4, 3, 0.0, 0.0, 11);
        let pi = fixtures::random_policy(4, 3, 12);
        let q = exact_q(&mdp, &pi).unwrap();
        for s in 0..4 {
            for a in 0..3 {
                assert_abs_diff_eq!(q.get(s, a), mdp.mean_reward(s, a), epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn exact_q_has_tiny_bellman_residual() {
        let mdp = fixtures::random_mdp(6, 3, 0.9, 0.0, 5);
        let pi = fixtures::random_policy(6, 3, 6);
        let q = exact_q(&mdp, &pi).unwrap();
        let b = bellman_error_table(&mdp, &pi, &q).unwrap();
        assert!(b.iter().all(|&x| x.abs() <= 1e-10));
    }

    #[test]
    fn exact_q_matches_monte_carlo_rollouts() {
        // Independent oracle: truncated-rollout estimate of discounted return.
        let mdp = fixtures::random_mdp(5, 2, 0.9, 0.0, 42);
        let pi = fixtures::random_policy(5, 2, 43);
        let q = exact_q(&mdp, &pi).unwrap();

        let episodes = 100_000;
        let horizon = 220; // gamma^220 / (1 - gamma) < 1e-9
        let (s0, a0) = (2usize, 1usize);
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for ep in 0..episodes {
            let mut rng = crate::rng::substream(777, ep as u64);
            let mut ret = 0.0;
            let mut disc = 1.0;
            let (mut s, mut a) = (s0, a0);
            for _ in 0..horizon {
                ret += disc * mdp.mean_reward(s, a);
                disc *= mdp.discount();
                let row = mdp.transition_row(s, a);
                s = crate::rng::sample_discrete(&mut rng, row.as_slice());
                a = crate::rng::sample_discrete(&mut rng, pi.action_probs(s).as_slice());
            }
            sum += ret;
            sum_sq += ret * ret;
        }
        let mean = sum / episodes as f64;
        let var = (sum_sq / episodes as f64 - mean * mean).max(0.0);
        let se = (var / episodes as f64).sqrt();
        assert!(
            (q.get(s0, a0) - mean).abs() <= 3.0 * se + 1e-9,
            "exact {} vs MC {} (se {})",
            q.get(s0, a0),
            mean,
            se
        );
    }

    #[test]
    fn occupancy_single_state_is_policy() {
        let p = DMatrix::from_row_slice(1, 2, &[0.3, 0.7]);
        let mdp = TabularMdp::new(
            vec![DMatrix::from_element(1, 1, 1.0), DMatrix::from_element(1, 1, 1.0)],
            DMatrix::from_row_slice(1, 2, &[0.1, 0.9]),
            RewardNoise::none(),
            0.8,
            DVector::from_element(1, 1.0),
        )
        .unwrap();
        let pi = TabularPolicy::new(p).unwrap();
        let d = occupancy(&mdp, &pi).unwrap();
        assert_abs_diff_eq!(d[(0, 0)], 0.3, epsilon = 1e-12);
        assert_abs_diff_eq!(d[(0, 1)], 0.7, epsilon = 1e-12);
    }

    #[test]
    fn occupancy_gamma_zero_is_start_times_policy() {
        let mdp = fixtures::random_mdp(4, 2, 0.0, 0.0, 1);
        let pi = fixtures::random_policy(4, 2, 2);
        let d = occupancy(&mdp, &pi).unwrap();
        for s in 0..4 {
            for a in 0..2 {
                assert_abs_diff_eq!(
                    d[(s, a)],
                    mdp.start_dist()[s] * pi.prob(s, a),
                    epsilon = 1e-12
                );
            }
        }
    }

    #[test]
    fn occupancy_reward_identity() {
        // E_{d^pi}[r] = (1 - gamma) V^pi
        let mdp = fixtures::random_mdp(6, 3, 0.85, 0.0, 9);
        let pi = fixtures::random_policy(6, 3, 10);
        let d = occupancy(&mdp, &pi).unwrap();
        assert_abs_diff_eq!(d.iter().sum::<f64>(), 1.0, epsilon = 1e-10);
        assert!(d.iter().all(|&x| x >= -1e-14));
        let mut e_r = 0.0;
        for s in 0..6 {
            for a in 0..3 {
                e_r += d[(s, a)] * mdp.mean_reward(s, a);
            }
        }
        let v = exact_value(&mdp, &pi).unwrap();
        assert_abs_diff_eq!(e_r, (1.0 - mdp.discount()) * v, epsilon = 1e-10);
    }

    #[test]
    fn bellman_error_affine_shift() {
        let mdp = fixtures::random_mdp(5, 2, 0.7, 0.0, 3);
        let pi = fixtures::random_policy(5, 2, 4);
        let q = exact_q(&mdp, &pi).unwrap();
        let c = 0.25;
        let shifted = QTable::new(q.values() + DMatrix::from_element(5, 2, c));
        let b = bellman_error_table(&mdp, &pi, &shifted).unwrap();
        for x in b.iter() {
            assert_abs_diff_eq!(*x, (1.0 - mdp.discount()) * c, epsilon = 1e-10);
        }
    }

    #[test]
    fn bellman_error_gamma_zero_of_zero_q_is_minus_reward() {
        let mdp = fixtures::random_mdp(3, 2, 0.0, 0.0, 8);
        let pi = fixtures::random_policy(3, 2, 9);
        let b = bellman_error_table(&mdp, &pi, &QTable::zeros(3, 2)).unwrap();
        for s in 0..3 {
            for a in 0..2 {
                assert_abs_diff_eq!(b[(s, a)], -mdp.mean_reward(s, a), epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn value_from_start_cases() {
        let pi = TabularPolicy::deterministic(2, 2, &[1, 0]).unwrap();
        let q = QTable::constant(2, 2, 0.4);
        let nu = DVector::from_row_slice(&[0.5, 0.5]);
        assert_abs_diff_eq!(value_from_start(&q, &pi, &nu), 0.4, epsilon = 1e-15);

        let point = DVector::from_row_slice(&[1.0, 0.0]);
        let mut vals = DMatrix::zeros(2, 2);
        vals[(0, 1)] = 0.9;
        let q = QTable::new(vals);
        assert_abs_diff_eq!(value_from_start(&q, &pi, &point), 0.9, epsilon = 1e-15);
    }

    #[test]
    fn value_from_start_occupancy_identity() {
        let mdp = fixtures::random_mdp(5, 3, 0.6, 0.0, 21);
        let pi = fixtures::random_policy(5, 3, 22);
        let q = exact_q(&mdp, &pi).unwrap();
        let d = occupancy(&mdp, &pi).unwrap();
        let mut e_r = 0.0;
        for s in 0..5 {
            for a in 0..3 {
                e_r += d[(s, a)] * mdp.mean_reward(s, a);
            }
        }
        let v = value_from_start(&q, &pi, mdp.start_dist());
        assert_abs_diff_eq!(v, e_r / (1.0 - mdp.discount()), epsilon = 1e-10);
    }

    #[test]
    fn simulation_lemma_exact() {
        for seed in 0..20 {
            let mdp = fixtures::random_mdp(5, 2, 0.8, 0.0, 100 + seed);
            let pi = fixtures::random_policy(5, 2, 200 + seed);
            let q = fixtures::random_q_table(5, 2, 300 + seed);
            let lhs = value_from_start(&q, &pi, mdp.start_dist()) - exact_value(&mdp, &pi).unwrap();
            let b = bellman_error_table(&mdp, &pi, &q).unwrap();
            let d = occupancy(&mdp, &pi).unwrap();
            let avg_bellman: f64 = b.zip_map(&d, |bb, dd| bb * dd).iter().sum();
            assert_abs_diff_eq!(lhs, avg_bellman / (1.0 - mdp.discount()), epsilon = 1e-10);
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let bad_gamma = TabularMdp::new(
            vec![DMatrix::from_element(1, 1, 1.0)],
            DMatrix::from_element(1, 1, 0.5),
            RewardNoise::none(),
            1.0,
            DVector::from_element(1, 1.0),
        );
        assert!(bad_gamma.is_err());

        let bad_noise = TabularMdp::new(
            vec![DMatrix::from_element(1, 1, 1.0)],
            DMatrix::from_element(1, 1, 0.9),
            RewardNoise::uniform(0.5),
            0.5,
            DVector::from_element(1, 1.0),
        );
        assert!(bad_noise.is_err());

        let bad_row = TabularPolicy::new(DMatrix::from_row_slice(1, 2, &[0.6, 0.3]));
        assert!(bad_row.is_err());
    }

    #[test]
    fn text_round_trip() {
        let mdp = fixtures::random_mdp(4, 2, 0.75, 0.02, 17);
        let text = write_text(&mdp);
        let back = parse_text(&text).unwrap();
        assert_eq!(back.num_states(), 4);
        assert_eq!(back.num_actions(), 2);
        assert_eq!(back.discount(), 0.75);
        for s in 0..4 {
            for a in 0..2 {
                assert_eq!(back.mean_reward(s, a), mdp.mean_reward(s, a));
                for s2 in 0..4 {
                    assert_eq!(back.transition_prob(s, a, s2), mdp.transition_prob(s, a, s2));
                }
            }
        }
    }
}
