//! Off-policy evaluation: two-sided confidence intervals on the value of a
//! target policy from an offline dataset.

use nalgebra::DVector;
use serde::Serialize;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::feasibility::{build_empirical_set, RadiusConfig};
use crate::features::FeatureMap;
use crate::mdp::TabularPolicy;
use crate::solver::{solve, AffineObjective, SolveStatus, Solution};
use crate::testspace::TestSpace;

/// `[v_min, v_max]` with the extremizing weight vectors.
#[derive(Clone, Debug)]
pub struct ConfidenceInterval {
    pub v_min: f64,
    pub v_max: f64,
    pub w_min: DVector<f64>,
    pub w_max: DVector<f64>,
    pub rc: RadiusConfig,
    pub min_status: SolveStatus,
    pub max_status: SolveStatus,
}

impl ConfidenceInterval {
    pub fn width(&self) -> f64 {
        self.v_max - self.v_min
    }

    pub fn contains(&self, v: f64) -> bool {
        self.v_min <= v && v <= self.v_max
    }
}

/// JSON record emitted by the harness for one evaluation.
#[derive(Clone, Debug, Serialize)]
pub struct EvalRecord {
    pub policy_id: String,
    pub n: usize,
    pub rho: f64,
    pub lambda: f64,
    pub v_min: f64,
    pub v_max: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub v_true: Option<f64>,
}

/// Objective direction `b = E_{s ~ start}[ phi(s, pi) ]`.
pub fn start_objective(fm: &FeatureMap, policy: &TabularPolicy, start_dist: &DVector<f64>) -> DVector<f64> {
    let mut b = DVector::zeros(fm.dim());
    for s in 0..start_dist.len() {
        let p = start_dist[s];
        if p != 0.0 {
            b.axpy(p, &fm.phi_policy(policy, s), 1.0);
        }
    }
    b
}

/// Confidence interval for the value of `policy` at `start_dist`, from two
/// conic solves over the empirical feasibility set.
///
/// An infeasible set fails loudly with the smallest slack that would restore
/// feasibility; raising `rho` by (roughly) `n * slack^2` restores it.
pub fn confidence_interval(
    dataset: &Dataset,
    fm: &FeatureMap,
    policy: &TabularPolicy,
    tests: &TestSpace,
    rc: &RadiusConfig,
    start_dist: &DVector<f64>,
    gamma: f64,
) -> Result<ConfidenceInterval> {
    let set = build_empirical_set(dataset, fm, policy, tests, rc, gamma)?;
    let b = start_objective(fm, policy, start_dist);
    let lo = solve(&set, &AffineObjective::minimize(b.clone()))?;
    check_feasible(&lo)?;
    let hi = solve(&set, &AffineObjective::maximize(b))?;
    check_feasible(&hi)?;
    debug_assert!(lo.value <= hi.value + 1e-8);
    Ok(ConfidenceInterval {
        v_min: lo.value,
        v_max: hi.value,
        w_min: lo.point,
        w_max: hi.point,
        rc: *rc,
        min_status: lo.status,
        max_status: hi.status,
    })
}

fn check_feasible(sol: &Solution) -> Result<()> {
    if sol.status == SolveStatus::Infeasible {
        Err(Error::Infeasible {
            min_slack: sol.min_restore_slack.unwrap_or(f64::NAN),
        })
    } else {
        Ok(())
    }
}
