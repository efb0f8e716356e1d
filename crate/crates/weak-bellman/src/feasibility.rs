//! The feasibility set of approximate weak-Bellman solutions: a unit
//! Euclidean ball intersected with one two-sided affine slab per test
//! function.
//!
//! For a test function `f`, with `n_eff = sqrt(||f||_n^2 + lambda)`, the
//! empirical constraint reads
//!
//!   | < phibar_f - gamma * phibar+_f , w > - rbar_f |  <=  sqrt(rho / n)
//!
//! where `phibar_f`, `rbar_f` and `phibar+_f` are the `f`-weighted sample
//! averages of the features, the rewards and the next-state features,
//! each divided by `n_eff`. The population counterpart replaces sample
//! averages by exact expectations under the reference measure and inflates
//! the radius by a factor of four under the square root.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, ReferenceMeasure};
use crate::error::{Error, Result};
use crate::features::{FeatureMap, LinearQ};
use crate::mdp::{TabularMdp, TabularPolicy};
use crate::testspace::{TestFunction, TestSpace};

/// Radius and regularization parameters.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct RadiusConfig {
    pub rho: f64,
    pub lambda: f64,
    pub n: usize,
    pub c_universal: f64,
}

impl RadiusConfig {
    /// Manual parameters.
    pub fn new(rho: f64, lambda: f64, n: usize) -> Result<Self> {
        if rho < 0.0 || lambda < 0.0 || n == 0 {
            return Err(Error::invalid("need rho >= 0, lambda >= 0, n >= 1"));
        }
        Ok(RadiusConfig {
            rho,
            lambda,
            n,
            c_universal: 1.0,
        })
    }

    /// Parametric-class radius with the matched regularization
    /// `lambda = 4 rho / n`.
    pub fn parametric(d: usize, n: usize, delta: f64, c_universal: f64) -> Result<Self> {
        let rho = radius_parametric(d, n, delta, c_universal)?;
        Ok(RadiusConfig {
            rho,
            lambda: 4.0 * rho / n as f64,
            n,
            c_universal,
        })
    }

    /// Empirical slab half width `sqrt(rho / n)`.
    pub fn half_width(&self) -> f64 {
        (self.rho / self.n as f64).sqrt()
    }

    /// Population slab half width `sqrt(4 rho / n)`.
    pub fn population_half_width(&self) -> f64 {
        (4.0 * self.rho / self.n as f64).sqrt()
    }
}

/// Radius for parametric (finite-dimensional) classes:
/// `rho = c { d ln(n/d) + ln(n/delta) }`, valid for `n >= 2d`.
pub fn radius_parametric(d: usize, n: usize, delta: f64, c: f64) -> Result<f64> {
    if d == 0 {
        return Err(Error::invalid("dimension must be positive"));
    }
    if n < 2 * d {
        return Err(Error::invalid(format!("need n >= 2d (n = {n}, d = {d})")));
    }
    if !(0.0..=1.0).contains(&delta) || delta == 0.0 {
        return Err(Error::invalid("delta must lie in (0, 1]"));
    }
    let nf = n as f64;
    let df = d as f64;
    Ok(c * (df * (nf / df).ln() + (nf / delta).ln()))
}

/// Per-sample temporal difference error
/// `Q(s,a) - r - gamma Q(s', pi)` for a linear predictor.
pub fn td_error(
    q: &LinearQ,
    fm: &FeatureMap,
    policy: &TabularPolicy,
    sample: &crate::data::AdaptedSample,
    gamma: f64,
) -> Result<f64> {
    let here = q.value(fm, sample.state, sample.action)?;
    let next = q.policy_value(fm, policy, sample.next_state);
    Ok(here - sample.reward - gamma * next)
}

/// One two-sided affine constraint `| <g, w> - b | <= tau`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SlabConstraint {
    pub direction: DVector<f64>,
    pub offset: f64,
    pub half_width: f64,
}

impl SlabConstraint {
    /// Signed residual `<g, w> - b`.
    pub fn residual(&self, w: &DVector<f64>) -> f64 {
        self.direction.dot(w) - self.offset
    }

    pub fn satisfied(&self, w: &DVector<f64>, tol: f64) -> bool {
        self.residual(w).abs() <= self.half_width + tol
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Provenance {
    Empirical,
    Population,
}

/// Unit ball intersected with slab constraints.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FeasibleSet {
    pub slabs: Vec<SlabConstraint>,
    pub ball_radius: f64,
    pub provenance: Provenance,
}

pub const MEMBERSHIP_TOL: f64 = 1e-9;

impl FeasibleSet {
    pub fn ball_only(provenance: Provenance) -> Self {
        FeasibleSet {
            slabs: Vec::new(),
            ball_radius: 1.0,
            provenance,
        }
    }

    /// Membership within additive tolerance `tol` on the ball and on every
    /// slab.
    pub fn is_member(&self, w: &DVector<f64>, tol: f64) -> bool {
        if w.norm() > self.ball_radius + tol {
            return false;
        }
        self.slabs.iter().all(|s| s.satisfied(w, tol))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("feasible sets serialize")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::parse(format!("feasible set json: {e}")))
    }
}

/// The `f`-weighted aggregates behind a slab: normalized feature average,
/// reward average, next-state feature average, and the normalizer itself.
#[derive(Clone, Debug)]
pub struct ConstraintPieces {
    pub phi_bar: DVector<f64>,
    pub r_bar: f64,
    pub phi_next_bar: DVector<f64>,
    pub n_eff: f64,
    /// `||f||_n^2` before regularization (kept for diagnostics).
    pub norm_sq: f64,
}

impl ConstraintPieces {
    /// Assemble the two-sided slab for discount `gamma` and the given half
    /// width.
    pub fn slab(&self, gamma: f64, half_width: f64) -> SlabConstraint {
        SlabConstraint {
            direction: &self.phi_bar - gamma * &self.phi_next_bar,
            offset: self.r_bar,
            half_width,
        }
    }
}

/// Compute the `f`-weighted empirical aggregates for one test function.
pub fn constraint_row(
    dataset: &Dataset,
    fm: &FeatureMap,
    policy: &TabularPolicy,
    f: &TestFunction,
    lambda: f64,
) -> Result<ConstraintPieces> {
    if dataset.is_empty() {
        return Err(Error::invalid("cannot build constraints from an empty dataset"));
    }
    let n = dataset.len() as f64;
    let d = fm.dim();
    let mut phi_sum = DVector::zeros(d);
    let mut phi_next_sum = DVector::zeros(d);
    let mut r_sum = 0.0;
    let mut norm_sq = 0.0;
    for x in &dataset.samples {
        let fv = f.eval(fm, x.state, x.action, &x.identifier)?;
        norm_sq += fv * fv;
        if fv != 0.0 {
            phi_sum.axpy(fv, &fm.phi(x.state, x.action), 1.0);
            phi_next_sum.axpy(fv, &fm.phi_policy(policy, x.next_state), 1.0);
            r_sum += fv * x.reward;
        }
    }
    norm_sq /= n;
    let n_eff = (norm_sq + lambda).sqrt();
    if n_eff == 0.0 {
        // Signalled to the caller; build_empirical_set drops the row.
        return Ok(ConstraintPieces {
            phi_bar: DVector::zeros(d),
            r_bar: 0.0,
            phi_next_bar: DVector::zeros(d),
            n_eff,
            norm_sq,
        });
    }
    let scale = 1.0 / (n_eff * n);
    Ok(ConstraintPieces {
        phi_bar: phi_sum * scale,
        r_bar: r_sum * scale,
        phi_next_bar: phi_next_sum * scale,
        n_eff,
        norm_sq,
    })
}

/// Empirical feasibility set: one slab per test function at half width
/// `sqrt(rho / n)`, inside the unit ball.
///
/// Test functions with zero empirical norm are kept when `lambda > 0`
/// (the regularizer prevents the normalizer from vanishing) and dropped
/// with a warning when `lambda = 0`.
pub fn build_empirical_set(
    dataset: &Dataset,
    fm: &FeatureMap,
    policy: &TabularPolicy,
    tests: &TestSpace,
    rc: &RadiusConfig,
    gamma: f64,
) -> Result<FeasibleSet> {
    let half_width = rc.half_width();
    let mut slabs = Vec::with_capacity(tests.len());
    for (i, f) in tests.iter().enumerate() {
        let pieces = constraint_row(dataset, fm, policy, f, rc.lambda)?;
        if pieces.n_eff == 0.0 {
            log::warn!(
                "dropping test function {} ({}) with zero empirical norm and lambda = 0",
                i,
                tests.tag(i)
            );
            continue;
        }
        slabs.push(pieces.slab(gamma, half_width));
    }
    Ok(FeasibleSet {
        slabs,
        ball_radius: 1.0,
        provenance: Provenance::Empirical,
    })
}

fn population_pieces(
    mdp: &TabularMdp,
    mu: &ReferenceMeasure,
    fm: &FeatureMap,
    policy: &TabularPolicy,
    f: &TestFunction,
    lambda: f64,
) -> Result<ConstraintPieces> {
    if !f.supports_population() {
        return Err(Error::invalid(
            "population constraints are unavailable for importance-sampling tests; \
             use empirical constraints instead",
        ));
    }
    let d = fm.dim();
    let num_states = mdp.num_states();
    let num_actions = mdp.num_actions();
    // phi_next(s, a) = E_{s' ~ P(.|s,a)}[ phi(s', pi) ].
    let phi_policy: Vec<DVector<f64>> = (0..num_states)
        .map(|s| fm.phi_policy(policy, s))
        .collect();
    let mut phi_sum = DVector::zeros(d);
    let mut phi_next_sum = DVector::zeros(d);
    let mut r_sum = 0.0;
    let mut norm_sq = 0.0;
    for j in 0..mu.num_components() {
        let comp = mu.component(j);
        for s in 0..num_states {
            for a in 0..num_actions {
                let p = comp[(s, a)];
                if p == 0.0 {
                    continue;
                }
                let fv = f.eval_population(fm, s, a, j)?;
                norm_sq += p * fv * fv;
                if fv == 0.0 {
                    continue;
                }
                let weight = p * fv;
                phi_sum.axpy(weight, &fm.phi(s, a), 1.0);
                r_sum += weight * mdp.mean_reward(s, a);
                for s2 in 0..num_states {
                    let t = mdp.transition_prob(s, a, s2);
                    if t != 0.0 {
                        phi_next_sum.axpy(weight * t, &phi_policy[s2], 1.0);
                    }
                }
            }
        }
    }
    let n_eff = (norm_sq + lambda).sqrt();
    if n_eff == 0.0 {
        return Ok(ConstraintPieces {
            phi_bar: DVector::zeros(d),
            r_bar: 0.0,
            phi_next_bar: DVector::zeros(d),
            n_eff,
            norm_sq,
        });
    }
    let scale = 1.0 / n_eff;
    Ok(ConstraintPieces {
        phi_bar: phi_sum * scale,
        r_bar: r_sum * scale,
        phi_next_bar: phi_next_sum * scale,
        n_eff,
        norm_sq,
    })
}

fn build_population_inner(
    mdp: &TabularMdp,
    mu: &ReferenceMeasure,
    fm: &FeatureMap,
    policy: &TabularPolicy,
    tests: &TestSpace,
    rc: &RadiusConfig,
    half_width: f64,
) -> Result<FeasibleSet> {
    let gamma = mdp.discount();
    let mut slabs = Vec::with_capacity(tests.len());
    for (i, f) in tests.iter().enumerate() {
        let pieces = population_pieces(mdp, mu, fm, policy, f, rc.lambda)?;
        if pieces.n_eff == 0.0 {
            log::warn!(
                "dropping test function {} ({}) with zero population norm and lambda = 0",
                i,
                tests.tag(i)
            );
            continue;
        }
        slabs.push(pieces.slab(gamma, half_width));
    }
    Ok(FeasibleSet {
        slabs,
        ball_radius: 1.0,
        provenance: Provenance::Population,
    })
}

/// Population feasibility set with the sandwich-side inflation: exact inner
/// products under the reference measure and half width `sqrt(4 rho / n)`.
pub fn build_population_set(
    mdp: &TabularMdp,
    mix: &crate::data::MixtureSpec,
    fm: &FeatureMap,
    policy: &TabularPolicy,
    tests: &TestSpace,
    rc: &RadiusConfig,
) -> Result<FeasibleSet> {
    let mu = crate::data::reference_measure(mdp, mix)?;
    build_population_inner(mdp, &mu, fm, policy, tests, rc, rc.population_half_width())
}

/// Population set at half width `sqrt(rho / n)` (no inflation). This is the
/// normalization under which the off-policy cost coefficient and its
/// closed-form upper bounds are exact companions.
pub fn build_population_set_unscaled(
    mdp: &TabularMdp,
    mix: &crate::data::MixtureSpec,
    fm: &FeatureMap,
    policy: &TabularPolicy,
    tests: &TestSpace,
    rc: &RadiusConfig,
) -> Result<FeasibleSet> {
    let mu = crate::data::reference_measure(mdp, mix)?;
    build_population_inner(mdp, &mu, fm, policy, tests, rc, rc.half_width())
}
