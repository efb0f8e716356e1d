//! Max-min policy optimization over the soft-max class: a mirror-descent
//! actor driven by the pessimistic critic, plus the adversarial-MDP and
//! exponentiated-gradient reference constructions that certify it.

use nalgebra::{DMatrix, DVector};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::feasibility::{build_empirical_set, RadiusConfig};
use crate::features::{FeatureMap, SoftMaxPolicy};
use crate::mdp::{bellman_error_table, exact_value, occupancy, QTable, TabularMdp, TabularPolicy};
use crate::ope::start_objective;
use crate::solver::{solve, AffineObjective, SolveStatus};
use crate::testspace::TestSpace;

/// `eta = sqrt(ln |A| / (2 T))`, the stepsize used throughout.
pub fn auto_stepsize(num_actions: usize, t_rounds: usize) -> f64 {
    ((num_actions as f64).ln() / (2.0 * t_rounds as f64)).sqrt()
}

/// Actor parameter update `theta' = theta + eta w`.
pub fn mirror_step(theta: &DVector<f64>, w: &DVector<f64>, eta: f64) -> Result<DVector<f64>> {
    if theta.len() != w.len() {
        return Err(Error::DimMismatch("actor and critic parameter sizes".into()));
    }
    Ok(theta + eta * w)
}

/// Multiplicative-weights reference update
/// `p'(a) ∝ p(a) exp(eta q(a))`, renormalized.
pub fn exponentiated_update_reference(probs: &DVector<f64>, q_row: &DVector<f64>, eta: f64) -> DVector<f64> {
    let max = q_row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut out: DVector<f64> = probs.zip_map(q_row, |p, q| p * ((q - max) * eta).exp());
    let sum: f64 = out.iter().sum();
    out /= sum;
    out
}

/// How the per-iteration test space is produced.
pub enum TestsSpec<'a> {
    /// The same space at every iteration (for example, the eigenvector
    /// class: it depends only on the data). Per-sample aggregates are cached
    /// across iterations; only the next-state mixture changes with the
    /// policy.
    Fixed(TestSpace),
    /// Rebuilt from the current actor policy.
    PerPolicy(&'a dyn Fn(&TabularPolicy) -> TestSpace),
}

/// One iteration of the actor-critic loop.
#[derive(Clone, Debug)]
pub struct ActorIterate {
    pub theta: DVector<f64>,
    pub w: DVector<f64>,
    pub v_min: f64,
    /// Exact value of the iterate policy, when an oracle MDP is supplied.
    pub v_true: Option<f64>,
}

/// Full run history: `iterates[t]` holds `theta_t` (so `theta_1 = 0`) and
/// the critic output at iteration `t`.
#[derive(Clone, Debug)]
pub struct ActorState {
    pub iterates: Vec<ActorIterate>,
    pub eta: f64,
}

impl ActorState {
    /// Policy table of iterate `t` (0-based).
    pub fn policy_at(&self, fm: &FeatureMap, t: usize) -> TabularPolicy {
        SoftMaxPolicy::new(self.iterates[t].theta.clone()).to_tabular(fm)
    }

    /// The uniform mixture over the iterate policies: the randomized policy
    /// reported as the procedure's output. Returned as the per-state average
    /// action distribution.
    pub fn average_policy(&self, fm: &FeatureMap) -> TabularPolicy {
        let t = self.iterates.len();
        let mut acc = DMatrix::zeros(fm.num_states(), fm.num_actions());
        for it in &self.iterates {
            let pol = SoftMaxPolicy::new(it.theta.clone()).to_tabular(fm);
            acc += pol.probs();
        }
        TabularPolicy::new(acc / t as f64).expect("average of distributions")
    }

    /// Per-iteration CSV trace `t, v_min, ||w_t||, ||theta_t||, V_true(pi_t)`.
    pub fn trace_csv(&self) -> String {
        use std::fmt::Write;
        let with_oracle = self.iterates.iter().any(|it| it.v_true.is_some());
        let mut out = String::from(if with_oracle {
            "t,v_min,w_norm,theta_norm,v_true\n"
        } else {
            "t,v_min,w_norm,theta_norm\n"
        });
        for (t, it) in self.iterates.iter().enumerate() {
            write!(out, "{},{},{},{}", t + 1, it.v_min, it.w.norm(), it.theta.norm()).unwrap();
            if with_oracle {
                write!(out, ",{}", it.v_true.unwrap_or(f64::NAN)).unwrap();
            }
            out.push('\n');
        }
        out
    }
}

/// Run the three-step loop for `t_rounds` iterations: form the soft-max
/// policy, solve the pessimistic critic over its feasibility set, and push
/// the actor parameter along the critic weight vector.
///
/// `eta` falls back to [`auto_stepsize`] when `None`. Critic infeasibility
/// at any iteration aborts with the restoring-slack diagnostic.
#[allow(clippy::too_many_arguments)]
pub fn run_actor_critic(
    dataset: &Dataset,
    fm: &FeatureMap,
    oracle: Option<&TabularMdp>,
    t_rounds: usize,
    tests: TestsSpec<'_>,
    rc: &RadiusConfig,
    start_dist: &DVector<f64>,
    gamma: f64,
    eta: Option<f64>,
) -> Result<ActorState> {
    if t_rounds == 0 {
        return Err(Error::invalid("need at least one iteration"));
    }
    let eta = eta.unwrap_or_else(|| auto_stepsize(fm.num_actions(), t_rounds));
    let mut theta = DVector::zeros(fm.dim());
    let mut iterates = Vec::with_capacity(t_rounds);

    let cache = match &tests {
        TestsSpec::Fixed(space) => Some(CriticCache::build(dataset, fm, space, rc.lambda)?),
        TestsSpec::PerPolicy(_) => None,
    };

    for t in 0..t_rounds {
        let policy = SoftMaxPolicy::new(theta.clone()).to_tabular(fm);
        let set = match (&tests, &cache) {
            (TestsSpec::Fixed(_), Some(cache)) => cache.empirical_set(fm, &policy, rc, gamma),
            (TestsSpec::PerPolicy(factory), _) => {
                let space = factory(&policy);
                build_empirical_set(dataset, fm, &policy, &space, rc, gamma)?
            }
            _ => unreachable!(),
        };
        let b = start_objective(fm, &policy, start_dist);
        let sol = solve(&set, &AffineObjective::minimize(b))?;
        if sol.status == SolveStatus::Infeasible {
            return Err(Error::Infeasible {
                min_slack: sol.min_restore_slack.unwrap_or(f64::NAN),
            });
        }
        let v_true = match oracle {
            Some(mdp) => Some(exact_value(mdp, &policy)?),
            None => None,
        };
        iterates.push(ActorIterate {
            theta: theta.clone(),
            w: sol.point.clone(),
            v_min: sol.value,
            v_true,
        });
        if t + 1 < t_rounds {
            theta = mirror_step(&theta, &sol.point, eta)?;
        }
    }
    Ok(ActorState { iterates, eta })
}

/// Per-test aggregates that do not depend on the policy: `f`-weighted
/// feature and reward sums, the empirical norm, and per-next-state weights
/// `sum_{i : s'_i = s} f_i` from which the bootstrap term is rebuilt.
struct CriticCache {
    n: usize,
    lambda: f64,
    rows: Vec<CachedRow>,
}

struct CachedRow {
    phi_sum: DVector<f64>,
    r_sum: f64,
    next_state_weights: DVector<f64>,
    norm_sq: f64,
}

impl CriticCache {
    fn build(dataset: &Dataset, fm: &FeatureMap, tests: &TestSpace, lambda: f64) -> Result<Self> {
        if dataset.is_empty() {
            return Err(Error::invalid("cannot build constraints from an empty dataset"));
        }
        let mut rows = Vec::with_capacity(tests.len());
        for f in tests.iter() {
            let mut phi_sum = DVector::zeros(fm.dim());
            let mut r_sum = 0.0;
            let mut next_state_weights = DVector::zeros(fm.num_states());
            let mut norm_sq = 0.0;
            for x in &dataset.samples {
                let fv = f.eval(fm, x.state, x.action, &x.identifier)?;
                norm_sq += fv * fv;
                if fv != 0.0 {
                    phi_sum.axpy(fv, &fm.phi(x.state, x.action), 1.0);
                    r_sum += fv * x.reward;
                    next_state_weights[x.next_state] += fv;
                }
            }
            norm_sq /= dataset.len() as f64;
            rows.push(CachedRow {
                phi_sum,
                r_sum,
                next_state_weights,
                norm_sq,
            });
        }
        Ok(CriticCache {
            n: dataset.len(),
            lambda,
            rows,
        })
    }

    fn empirical_set(
        &self,
        fm: &FeatureMap,
        policy: &TabularPolicy,
        rc: &RadiusConfig,
        gamma: f64,
    ) -> crate::feasibility::FeasibleSet {
        let half_width = rc.half_width();
        let n = self.n as f64;
        let phi_pi: Vec<DVector<f64>> = (0..fm.num_states())
            .map(|s| fm.phi_policy(policy, s))
            .collect();
        let slabs = self
            .rows
            .iter()
            .filter(|row| row.norm_sq + self.lambda > 0.0)
            .map(|row| {
                let n_eff = (row.norm_sq + self.lambda).sqrt();
                let mut phi_next = DVector::zeros(fm.dim());
                for s in 0..fm.num_states() {
                    let w = row.next_state_weights[s];
                    if w != 0.0 {
                        phi_next.axpy(w, &phi_pi[s], 1.0);
                    }
                }
                let scale = 1.0 / (n_eff * n);
                crate::feasibility::SlabConstraint {
                    direction: (&row.phi_sum - gamma * phi_next) * scale,
                    offset: row.r_sum * scale,
                    half_width,
                }
            })
            .collect();
        crate::feasibility::FeasibleSet {
            slabs,
            ball_radius: 1.0,
            provenance: crate::feasibility::Provenance::Empirical,
        }
    }
}

/// The true MDP with rewards perturbed by a table; the dynamics are shared.
#[derive(Clone, Debug)]
pub struct AdversarialMdp {
    pub base: TabularMdp,
    pub perturbation: DMatrix<f64>,
}

impl AdversarialMdp {
    /// Exact action-value function of `policy` on the perturbed MDP. The
    /// perturbed rewards may leave `[0, 1]`, so this solves the evaluation
    /// system directly rather than constructing a new `TabularMdp`.
    pub fn exact_q(&self, policy: &TabularPolicy) -> Result<QTable> {
        let n = self.base.num_states();
        let m = self.base.num_actions();
        let gamma = self.base.discount();
        let p_pi = self.base.policy_transition(policy);
        let mut r_pi = DVector::zeros(n);
        for s in 0..n {
            for a in 0..m {
                r_pi[s] +=
                    policy.prob(s, a) * (self.base.mean_reward(s, a) + self.perturbation[(s, a)]);
            }
        }
        let system = DMatrix::identity(n, n) - gamma * &p_pi;
        let v = system
            .lu()
            .solve(&r_pi)
            .ok_or_else(|| Error::Singular("perturbed evaluation system".into()))?;
        let mut q = DMatrix::zeros(n, m);
        for a in 0..m {
            let pv = self.base.transition_matrix(a) * &v;
            for s in 0..n {
                q[(s, a)] = self.base.mean_reward(s, a) + self.perturbation[(s, a)] + gamma * pv[s];
            }
        }
        Ok(QTable::new_unchecked(q))
    }

    /// Exact value at the start distribution via the occupancy identity
    /// `V = E_pi[r + r~] / (1 - gamma)`.
    pub fn exact_value(&self, policy: &TabularPolicy) -> Result<f64> {
        let d = occupancy(&self.base, policy)?;
        let mut total = 0.0;
        for s in 0..self.base.num_states() {
            for a in 0..self.base.num_actions() {
                total += d[(s, a)] * (self.base.mean_reward(s, a) + self.perturbation[(s, a)]);
            }
        }
        Ok(total / (1.0 - self.base.discount()))
    }
}

/// The adversarial MDP whose reward perturbation is the Bellman error of
/// `q_hat`: on it, `q_hat` is exactly the action-value function of `policy`.
pub fn adversarial_mdp(mdp: &TabularMdp, policy: &TabularPolicy, q_hat: &QTable) -> Result<AdversarialMdp> {
    let perturbation = bellman_error_table(mdp, policy, q_hat)?;
    Ok(AdversarialMdp {
        base: mdp.clone(),
        perturbation,
    })
}

/// Run the exponentiated-gradient update from the uniform distribution over
/// a payoff sequence `f_t` (each `||f_t||_inf <= 1`) and return the regret
/// against the best fixed comparator distribution:
/// `max_p (1/T) sum_t [ f_t(p) - f_t(nu_t) ]`.
pub fn mirror_descent_regret_check(payoffs: &[DVector<f64>]) -> Result<f64> {
    if payoffs.is_empty() {
        return Err(Error::invalid("need at least one payoff row"));
    }
    let num_actions = payoffs[0].len();
    for (t, f) in payoffs.iter().enumerate() {
        if f.len() != num_actions {
            return Err(Error::DimMismatch(format!("payoff row {t}")));
        }
        if f.iter().any(|x| x.abs() > 1.0 + 1e-12) {
            return Err(Error::invalid(format!("payoff row {t} violates the sup-norm bound")));
        }
    }
    let t_rounds = payoffs.len();
    let eta = auto_stepsize(num_actions, t_rounds);
    let mut nu = DVector::from_element(num_actions, 1.0 / num_actions as f64);
    let mut play_total = 0.0;
    let mut cumulative = DVector::zeros(num_actions);
    for f in payoffs {
        play_total += nu.dot(f);
        cumulative += f;
        nu = exponentiated_update_reference(&nu, f, eta);
    }
    // The best fixed distribution concentrates on the best action.
    let best = cumulative.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    Ok((best - play_total) / t_rounds as f64)
}

/// The guaranteed ceiling `2 sqrt(2 ln |A| / T)` for the regret check.
pub fn mirror_descent_regret_bound(num_actions: usize, t_rounds: usize) -> f64 {
    2.0 * (2.0 * (num_actions as f64).ln() / t_rounds as f64).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{sample_mixture_dataset, MixtureSpec};
    use crate::fixtures;
    use crate::testspace;
    use approx::assert_abs_diff_eq;
    use rand::Rng;

    #[test]
    fn mirror_step_cases() {
        let theta = DVector::zeros(2);
        let w = DVector::from_row_slice(&[1.0, 0.0]);
        let out = mirror_step(&theta, &w, 0.1).unwrap();
        assert_abs_diff_eq!(out[0], 0.1, epsilon = 1e-15);
        assert_abs_diff_eq!(out[1], 0.0, epsilon = 1e-15);

        let same = mirror_step(&out, &DVector::zeros(2), 0.5).unwrap();
        assert_eq!(same, out);

        assert_abs_diff_eq!(auto_stepsize(2, 8), (2.0f64.ln() / 16.0).sqrt(), epsilon = 1e-12);
        assert_abs_diff_eq!(auto_stepsize(2, 8), 0.2082, epsilon = 1e-4);
    }

    #[test]
    fn exponentiated_update_cases() {
        let uniform = DVector::from_element(2, 0.5);
        let q = DVector::from_row_slice(&[3.0f64.ln(), 0.0]);
        let p = exponentiated_update_reference(&uniform, &q, 1.0);
        assert_abs_diff_eq!(p[0], 0.75, epsilon = 1e-12);
        assert_abs_diff_eq!(p[1], 0.25, epsilon = 1e-12);

        let constant = exponentiated_update_reference(&p, &DVector::from_element(2, 0.7), 1.0);
        assert_abs_diff_eq!((constant - &p).norm(), 0.0, epsilon = 1e-12);

        let zero_eta = exponentiated_update_reference(&p, &q, 0.0);
        assert_abs_diff_eq!((zero_eta - &p).norm(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn update_equivalence_parameter_vs_multiplicative() {
        // Over any w-sequence, the policy induced by theta_{t+1} = theta_t +
        // eta w_t matches per-state multiplicative updates with payoffs
        // <w_t, phi(s, a)>.
        let fm = FeatureMap::tabular(3, 2);
        let eta = 0.17;
        for seq_seed in 0..20 {
            let mut rng = crate::rng::substream(500 + seq_seed, 0);
            let mut theta = DVector::zeros(6);
            let mut local: Vec<DVector<f64>> = (0..3)
                .map(|_| DVector::from_element(2, 0.5))
                .collect();
            for _t in 0..50 {
                let w = DVector::from_fn(6, |_, _| rng.gen::<f64>() * 2.0 - 1.0);
                theta = mirror_step(&theta, &w, eta).unwrap();
                let actor = SoftMaxPolicy::new(theta.clone()).to_tabular(&fm);
                for s in 0..3 {
                    let q_row = DVector::from_fn(2, |a, _| w.dot(&fm.phi(s, a)));
                    local[s] = exponentiated_update_reference(&local[s], &q_row, eta);
                    let tv: f64 = (0..2)
                        .map(|a| (local[s][a] - actor.prob(s, a)).abs())
                        .sum();
                    assert!(tv <= 1e-12, "TV {tv} at seed {seq_seed}");
                }
            }
        }
    }

    #[test]
    fn adversarial_mdp_cases() {
        let mdp = fixtures::random_mdp(4, 2, 0.8, 0.4, 130);
        let pi = fixtures::random_policy(4, 2, 131);
        let q_exact = crate::mdp::exact_q(&mdp, &pi).unwrap();
        let adv = adversarial_mdp(&mdp, &pi, &q_exact).unwrap();
        assert!(adv.perturbation.abs().max() <= 1e-10);

        // For arbitrary q_hat, q_hat is the exact Q on the perturbed MDP.
        let q_hat = fixtures::random_q_table(4, 2, 132);
        let adv = adversarial_mdp(&mdp, &pi, &q_hat).unwrap();
        let q_adv = adv.exact_q(&pi).unwrap();
        for s in 0..4 {
            for a in 0..2 {
                assert_abs_diff_eq!(q_adv.get(s, a), q_hat.get(s, a), epsilon = 1e-10);
            }
        }

        // Value identity through the occupancy measure.
        let v_direct = crate::mdp::value_from_start(&q_adv, &pi, mdp.start_dist());
        let v_occ = adv.exact_value(&pi).unwrap();
        assert_abs_diff_eq!(v_direct, v_occ, epsilon = 1e-10);
    }

    #[test]
    fn regret_bound_cases() {
        // Constant payoffs.
        let t = 100;
        let constant: Vec<DVector<f64>> = (0..t).map(|_| DVector::from_element(2, 0.5)).collect();
        let regret = mirror_descent_regret_check(&constant).unwrap();
        assert!(regret <= mirror_descent_regret_bound(2, t));
        assert!(regret >= -1e-12);

        // Alternating +-1 on two actions.
        let t = 400;
        let alternating: Vec<DVector<f64>> = (0..t)
            .map(|k| {
                if k % 2 == 0 {
                    DVector::from_row_slice(&[1.0, -1.0])
                } else {
                    DVector::from_row_slice(&[-1.0, 1.0])
                }
            })
            .collect();
        let regret = mirror_descent_regret_check(&alternating).unwrap();
        let bound = mirror_descent_regret_bound(2, t);
        assert!(regret <= bound, "regret {regret} vs bound {bound}");

        // Single action: regret identically zero.
        let single: Vec<DVector<f64>> = (0..50).map(|_| DVector::from_element(1, 1.0)).collect();
        assert_abs_diff_eq!(mirror_descent_regret_check(&single).unwrap(), 0.0, epsilon = 1e-15);

        // Sup-norm violation rejected.
        let bad = vec![DVector::from_row_slice(&[2.0, 0.0])];
        assert!(mirror_descent_regret_check(&bad).is_err());
    }

    #[test]
    fn actor_critic_single_round_is_uniform() {
        let mdp = fixtures::two_armed_bandit(0.8, 0.2, 0.1);
        let pi_b = TabularPolicy::uniform(1, 2);
        let fm = FeatureMap::tabular(1, 2);
        let data = sample_mixture_dataset(&mdp, &MixtureSpec::single(pi_b), 500, 70, false).unwrap();
        let rc = RadiusConfig::parametric(2, 500, 0.1, 1.0).unwrap();
        let tests = testspace::eigen_test_class(&testspace::empirical_covariance(&data, &fm)).unwrap();
        let state = run_actor_critic(
            &data,
            &fm,
            Some(&mdp),
            1,
            TestsSpec::Fixed(tests),
            &rc,
            mdp.start_dist(),
            0.0,
            None,
        )
        .unwrap();
        assert_eq!(state.iterates.len(), 1);
        assert_eq!(state.iterates[0].theta, DVector::zeros(2));
        let pol = state.policy_at(&fm, 0);
        assert_abs_diff_eq!(pol.prob(0, 0), 0.5, epsilon = 1e-12);
    }

    #[test]
    fn zero_critic_keeps_policy_uniform() {
        // Synthetic check of the update path: w_t = 0 leaves theta at zero.
        let mut theta = DVector::zeros(4);
        for _ in 0..10 {
            theta = mirror_step(&theta, &DVector::zeros(4), 0.3).unwrap();
        }
        assert_eq!(theta, DVector::zeros(4));
    }

    #[test]
    fn theta_norm_stays_inside_budget() {
        let mdp = fixtures::two_armed_bandit(0.8, 0.2, 0.1);
        let pi_b = TabularPolicy::new(nalgebra::DMatrix::from_row_slice(1, 2, &[0.9, 0.1])).unwrap();
        let fm = FeatureMap::tabular(1, 2);
        let data = sample_mixture_dataset(&mdp, &MixtureSpec::single(pi_b), 1000, 71, false).unwrap();
        let rc = RadiusConfig::parametric(2, 1000, 0.1, 1.0).unwrap();
        let t_rounds = 30;
        let tests = testspace::eigen_test_class(&testspace::empirical_covariance(&data, &fm)).unwrap();
        let state = run_actor_critic(
            &data,
            &fm,
            None,
            t_rounds,
            TestsSpec::Fixed(tests),
            &rc,
            mdp.start_dist(),
            0.0,
            None,
        )
        .unwrap();
        let eta = state.eta;
        for it in &state.iterates {
            assert!(it.theta.norm() <= eta * t_rounds as f64 + 1e-9);
            assert!(it.w.norm() <= 1.0 + 1e-6);
        }
    }

    #[test]
    fn cached_and_direct_sets_agree() {
        let mdp = fixtures::gridworld5();
        let pi_b = fixtures::gridworld5_policy();
        let fm = FeatureMap::tabular(5, 2);
        let data = sample_mixture_dataset(&mdp, &MixtureSpec::single(pi_b), 300, 72, false).unwrap();
        let rc = RadiusConfig::parametric(10, 300, 0.1, 1.0).unwrap();
        let tests = testspace::eigen_test_class(&testspace::empirical_covariance(&data, &fm)).unwrap();
        let cache = CriticCache::build(&data, &fm, &tests, rc.lambda).unwrap();
        let policy = fixtures::random_policy(5, 2, 73);
        let cached = cache.empirical_set(&fm, &policy, &rc, mdp.discount());
        let direct = build_empirical_set(&data, &fm, &policy, &tests, &rc, mdp.discount()).unwrap();
        assert_eq!(cached.slabs.len(), direct.slabs.len());
        for (a, b) in cached.slabs.iter().zip(direct.slabs.iter()) {
            assert_abs_diff_eq!((&a.direction - &b.direction).norm(), 0.0, epsilon = 1e-12);
            assert_abs_diff_eq!(a.offset, b.offset, epsilon = 1e-12);
        }
    }

    #[test]
    fn pessimism_holds_statistically_on_realizable_fixture() {
        // v_min_t <= V(pi_t) + tolerance for most iterations across seeds.
        let mdp = fixtures::gridworld5();
        let fm = FeatureMap::tabular(5, 2);
        let pi_b = fixtures::gridworld5_policy();
        let mut violations = 0usize;
        let mut total = 0usize;
        for seed in 0..10 {
            let data =
                sample_mixture_dataset(&mdp, &MixtureSpec::single(pi_b.clone()), 800, 900 + seed, false)
                    .unwrap();
            let rc = RadiusConfig::parametric(10, 800, 0.1, 1.0).unwrap();
            let tests = testspace::identity_space();
            let state = run_actor_critic(
                &data,
                &fm,
                Some(&mdp),
                5,
                TestsSpec::Fixed(tests),
                &rc,
                mdp.start_dist(),
                mdp.discount(),
                None,
            )
            .unwrap();
            for it in &state.iterates {
                total += 1;
                if it.v_min > it.v_true.unwrap() + 1e-6 {
                    violations += 1;
                }
            }
        }
        assert!(
            (violations as f64) <= 0.1 * total as f64,
            "pessimism violated {violations}/{total}"
        );
    }
}
