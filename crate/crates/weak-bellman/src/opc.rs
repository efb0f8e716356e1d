//! The off-policy cost coefficient: its exact value over the population
//! feasibility set in tabular instances, and the closed-form upper bounds
//! available under different test spaces and structural conditions.
//!
//! Conventions: the coefficient normalizes the squared policy-averaged
//! Bellman error by `(1 + lambda) rho / n`, and is paired with the
//! population set at half width `sqrt(rho / n)` (no sandwich inflation), so
//! the bound chain holds with its stated constants.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::Serialize;

use crate::data::MixtureSpec;
use crate::error::{Error, Result};
use crate::feasibility::{build_population_set_unscaled, RadiusConfig};
use crate::features::FeatureMap;
use crate::mdp::{occupancy, TabularMdp, TabularPolicy};
use crate::solver::{solve, AffineObjective, SolveStatus};
use crate::testspace::TestSpace;

/// Labeled bound values alongside the exact coefficient, serializable for
/// the harness.
#[derive(Clone, Debug, Serialize)]
pub struct OpcReport {
    pub exact: Option<f64>,
    pub bounds: Vec<OpcBound>,
    pub rho: f64,
    pub lambda: f64,
    pub n: usize,
    pub test_space_tag: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct OpcBound {
    pub label: String,
    pub value: f64,
}

impl OpcReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Plain table, one row per bound.
    pub fn to_table(&self) -> String {
        use std::fmt::Write;
        let mut out = String::new();
        writeln!(out, "{:<22} {:>14}", "quantity", "value").unwrap();
        if let Some(exact) = self.exact {
            writeln!(out, "{:<22} {:>14.6}", "exact", exact).unwrap();
        }
        for b in &self.bounds {
            writeln!(out, "{:<22} {:>14.6}", b.label, b.value).unwrap();
        }
        out
    }
}

/// The affine form of `w -> E_pi[ B^pi(Q_w) ]`: gradient and offset.
pub fn policy_bellman_form(
    mdp: &TabularMdp,
    policy: &TabularPolicy,
    fm: &FeatureMap,
) -> Result<(DVector<f64>, f64)> {
    let d_pi = occupancy(mdp, policy)?;
    let gamma = mdp.discount();
    let phi_pi: Vec<DVector<f64>> = (0..mdp.num_states())
        .map(|s| fm.phi_policy(policy, s))
        .collect();
    let mut grad = DVector::zeros(fm.dim());
    let mut offset = 0.0;
    for s in 0..mdp.num_states() {
        for a in 0..mdp.num_actions() {
            let p = d_pi[(s, a)];
            if p == 0.0 {
                continue;
            }
            grad.axpy(p, &fm.phi(s, a), 1.0);
            offset += p * mdp.mean_reward(s, a);
            for s2 in 0..mdp.num_states() {
                let t = mdp.transition_prob(s, a, s2);
                if t != 0.0 {
                    grad.axpy(-gamma * p * t, &phi_pi[s2], 1.0);
                }
            }
        }
    }
    Ok((grad, offset))
}

/// Exact coefficient: maximize `| E_pi[B^pi(Q_w)] |` over the population
/// feasibility set (two conic solves) and normalize by
/// `(1 + lambda) rho / n`.
pub fn opc_exact_tabular(
    mdp: &TabularMdp,
    mix: &MixtureSpec,
    fm: &FeatureMap,
    policy: &TabularPolicy,
    tests: &TestSpace,
    rc: &RadiusConfig,
) -> Result<f64> {
    let set = build_population_set_unscaled(mdp, mix, fm, policy, tests, rc)?;
    let (grad, offset) = policy_bellman_form(mdp, policy, fm)?;
    let hi = solve(
        &set,
        &AffineObjective {
            linear: grad.clone(),
            constant: -offset,
            sense: crate::solver::Sense::Max,
        },
    )?;
    if hi.status == SolveStatus::Infeasible {
        return Err(Error::Infeasible {
            min_slack: hi.min_restore_slack.unwrap_or(f64::NAN),
        });
    }
    let lo = solve(
        &set,
        &AffineObjective {
            linear: grad,
            constant: -offset,
            sense: crate::solver::Sense::Min,
        },
    )?;
    let extreme = hi.value.abs().max(lo.value.abs());
    Ok(extreme * extreme / ((1.0 + rc.lambda) * rc.rho / rc.n as f64))
}

/// Outcome of a nonconvex ratio maximization: the bound value implied by
/// the best iterate (a certified lower estimate of the analytic supremum),
/// the raw ratio achieved, and the maximizer.
#[derive(Clone, Debug)]
pub struct RatioBound {
    pub value: f64,
    pub achieved_ratio: f64,
    pub maximizer: DVector<f64>,
}

/// Mixture-policy bound: `(1 + m lambda) / (1 + lambda)` times the maximum
/// over the unit ball of
/// `[E_pi B(Q_w)]^2 / sum_j alpha_j^2 [E_{rho_j} B(Q_w)]^2`,
/// by multi-start projected gradient ascent.
pub fn opc_bound_mixture(
    mdp: &TabularMdp,
    mix: &MixtureSpec,
    fm: &FeatureMap,
    policy: &TabularPolicy,
    rc: &RadiusConfig,
    multistarts: usize,
) -> Result<RatioBound> {
    let m = mix.num_components();
    let (num_grad, num_off) = policy_bellman_form(mdp, policy, fm)?;
    // Component forms: E_{d^rho_j}[ B^pi(Q_w) ] (Bellman error of the target
    // policy averaged under the protocol occupancy).
    let mut comp_forms = Vec::with_capacity(m);
    for j in 0..m {
        let d_j = occupancy(mdp, mix.protocol(j))?;
        let gamma = mdp.discount();
        let phi_pi: Vec<DVector<f64>> = (0..mdp.num_states())
            .map(|s| fm.phi_policy(policy, s))
            .collect();
        let mut grad = DVector::zeros(fm.dim());
        let mut offset = 0.0;
        for s in 0..mdp.num_states() {
            for a in 0..mdp.num_actions() {
                let p = d_j[(s, a)];
                if p == 0.0 {
                    continue;
                }
                grad.axpy(p, &fm.phi(s, a), 1.0);
                offset += p * mdp.mean_reward(s, a);
                for s2 in 0..mdp.num_states() {
                    let t = mdp.transition_prob(s, a, s2);
                    if t != 0.0 {
                        grad.axpy(-gamma * p * t, &phi_pi[s2], 1.0);
                    }
                }
            }
        }
        let alpha_sq = mix.weight(j) * mix.weight(j);
        comp_forms.push((grad, offset, alpha_sq));
    }

    let ratio = |w: &DVector<f64>| -> f64 {
        let num = num_grad.dot(w) - num_off;
        let mut den = 0.0;
        for (g, o, a_sq) in &comp_forms {
            let v = g.dot(w) - o;
            den += a_sq * v * v;
        }
        if den < 1e-300 {
            return f64::NAN;
        }
        num * num / den
    };
    let grad_fn = |w: &DVector<f64>| -> DVector<f64> {
        let num_v = num_grad.dot(w) - num_off;
        let mut den = 0.0;
        let mut den_grad = DVector::zeros(w.len());
        for (g, o, a_sq) in &comp_forms {
            let v = g.dot(w) - o;
            den += a_sq * v * v;
            den_grad.axpy(2.0 * a_sq * v, g, 1.0);
        }
        let num = num_v * num_v;
        let num_grad_full = 2.0 * num_v * &num_grad;
        (num_grad_full * den - num * den_grad) / (den * den)
    };

    let best = multistart_ascent(fm.dim(), 1.0, multistarts, &ratio, &grad_fn);
    let prefactor = (1.0 + m as f64 * rc.lambda) / (1.0 + rc.lambda);
    Ok(RatioBound {
        value: prefactor * best.0,
        achieved_ratio: best.0,
        maximizer: best.1,
    })
}

/// Bellman-rank bound `(1 + m lambda)/(1 + lambda) * nu(pi)^T Lambda^{-1}
/// nu(pi)` with `Lambda = sum_j alpha_j^2 nu_j nu_j^T`. `ridge` optionally
/// regularizes a singular `Lambda`.
pub fn opc_bound_bellman_rank(
    policy_embed: &DVector<f64>,
    data_embeds: &[DVector<f64>],
    weights: &[f64],
    lambda: f64,
    m: usize,
    ridge: Option<f64>,
) -> Result<f64> {
    if data_embeds.len() != weights.len() || data_embeds.is_empty() {
        return Err(Error::invalid("need one weight per data embedding"));
    }
    let d = policy_embed.len();
    let mut big_lambda = DMatrix::zeros(d, d);
    for (nu, &alpha) in data_embeds.iter().zip(weights.iter()) {
        if nu.len() != d {
            return Err(Error::DimMismatch("embedding dimensions".into()));
        }
        big_lambda.syger(alpha * alpha, nu, nu, 1.0);
    }
    for i in 0..d {
        for j in (i + 1)..d {
            big_lambda[(i, j)] = big_lambda[(j, i)];
        }
    }
    if let Some(eps) = ridge {
        for i in 0..d {
            big_lambda[(i, i)] += eps;
        }
    }
    let chol = big_lambda.clone().cholesky().ok_or_else(|| {
        Error::Singular(
            "mixture embedding matrix is singular; the target embedding leaves the data span \
             (a ridge option is available)"
                .into(),
        )
    })?;
    let x = chol.solve(policy_embed);
    let quad = policy_embed.dot(&x);
    if quad < 0.0 {
        return Err(Error::Singular("embedding matrix is numerically indefinite".into()));
    }
    Ok((1.0 + m as f64 * lambda) / (1.0 + lambda) * quad)
}

/// Likelihood-ratio bounds. Returns the pair
/// `(i) = (E_pi[d^pi / mu] + b^2 lambda) / (1 + lambda)` and
/// `(ii) = b (1 + b lambda) / (1 + lambda)`; `(i) <= (ii)` always.
pub fn opc_bound_likelihood(
    mdp: &TabularMdp,
    mix: &MixtureSpec,
    policy: &TabularPolicy,
    scaling_b: f64,
    lambda: f64,
) -> Result<(f64, f64)> {
    let d_pi = occupancy(mdp, policy)?;
    let mu = crate::data::reference_measure(mdp, mix)?.marginal();
    let mut chi_sq = 0.0;
    for s in 0..mdp.num_states() {
        for a in 0..mdp.num_actions() {
            let p = d_pi[(s, a)];
            if p == 0.0 {
                continue;
            }
            let q = mu[(s, a)];
            if q <= 0.0 {
                return Err(Error::invalid(format!(
                    "likelihood ratio unbounded: mu({s},{a}) = 0 but d^pi({s},{a}) = {p}"
                )));
            }
            chi_sq += p * p / q;
        }
    }
    let bound_i = (chi_sq + scaling_b * scaling_b * lambda) / (1.0 + lambda);
    let bound_ii = scaling_b * (1.0 + scaling_b * lambda) / (1.0 + lambda);
    Ok((bound_i, bound_ii))
}

/// Exact sup of the likelihood ratio `d^pi / mu`, the natural scaling for
/// the likelihood-ratio test function in tabular instances.
pub fn likelihood_ratio_sup(mdp: &TabularMdp, mix: &MixtureSpec, policy: &TabularPolicy) -> Result<f64> {
    let d_pi = occupancy(mdp, policy)?;
    let mu = crate::data::reference_measure(mdp, mix)?.marginal();
    let mut sup = 0.0f64;
    for s in 0..mdp.num_states() {
        for a in 0..mdp.num_actions() {
            let p = d_pi[(s, a)];
            if p == 0.0 {
                continue;
            }
            let q = mu[(s, a)];
            if q <= 0.0 {
                return Err(Error::invalid(format!(
                    "likelihood ratio unbounded at ({s},{a})"
                )));
            }
            sup = sup.max(p / q);
        }
    }
    Ok(sup)
}

/// Prediction-error bound of the weak formulation: a multi-start lower
/// estimate of
/// `max_eps (||eps||_mu^2 + lambda)/(1 + lambda) *
///  <1,(I - gP)eps>_pi^2 / <eps,(I - gP)eps>_mu^2`
/// over linear error functions `eps_u` with `||u|| <= 2` (the diameter of
/// the difference class). Starts whose denominator vanishes are restarted.
pub fn opc_bound_pred_error(
    mdp: &TabularMdp,
    mix: &MixtureSpec,
    fm: &FeatureMap,
    policy: &TabularPolicy,
    lambda: f64,
    multistarts: usize,
) -> Result<RatioBound> {
    let d = fm.dim();
    let mu = crate::data::reference_measure(mdp, mix)?.marginal();
    let d_pi = occupancy(mdp, policy)?;
    let gamma = mdp.discount();

    // Residual-operator images of the coordinate tables:
    // res_k(s,a) = phi_k(s,a) - gamma E_{s'}[phi_k(s', pi)].
    let phi_pi: Vec<DVector<f64>> = (0..mdp.num_states())
        .map(|s| fm.phi_policy(policy, s))
        .collect();
    let num_pairs = mdp.num_states() * mdp.num_actions();
    let mut phi_table = DMatrix::zeros(num_pairs, d);
    let mut res_table = DMatrix::zeros(num_pairs, d);
    for s in 0..mdp.num_states() {
        for a in 0..mdp.num_actions() {
            let row = s * mdp.num_actions() + a;
            let phi = fm.phi(s, a);
            let mut res = phi.clone();
            for s2 in 0..mdp.num_states() {
                let t = mdp.transition_prob(s, a, s2);
                if t != 0.0 {
                    res.axpy(-gamma * t, &phi_pi[s2], 1.0);
                }
            }
            for k in 0..d {
                phi_table[(row, k)] = phi[k];
                res_table[(row, k)] = res[k];
            }
        }
    }
    // a[k]   = <1, res_k>_pi
    // M[k,l] = <phi_k, res_l>_mu           (not symmetric in general)
    // S[k,l] = <phi_k, phi_l>_mu
    let mut a_vec = DVector::zeros(d);
    let mut m_mat = DMatrix::zeros(d, d);
    let mut s_mat = DMatrix::zeros(d, d);
    for s in 0..mdp.num_states() {
        for a in 0..mdp.num_actions() {
            let row = s * mdp.num_actions() + a;
            let w_pi = d_pi[(s, a)];
            let w_mu = mu[(s, a)];
            for k in 0..d {
                if w_pi != 0.0 {
                    a_vec[k] += w_pi * res_table[(row, k)];
                }
                if w_mu != 0.0 {
                    for l in 0..d {
                        m_mat[(k, l)] += w_mu * phi_table[(row, k)] * res_table[(row, l)];
                        s_mat[(k, l)] += w_mu * phi_table[(row, k)] * phi_table[(row, l)];
                    }
                }
            }
        }
    }
    let m_sym = &m_mat + m_mat.transpose();

    let ratio = |u: &DVector<f64>| -> f64 {
        let transfer = a_vec.dot(u);
        let den = u.dot(&(&m_mat * u));
        if den.abs() < 1e-13 {
            return f64::NAN;
        }
        let norm_sq = u.dot(&(&s_mat * u));
        (norm_sq + lambda) / (1.0 + lambda) * transfer * transfer / (den * den)
    };
    let grad_fn = |u: &DVector<f64>| -> DVector<f64> {
        let transfer = a_vec.dot(u);
        let den = u.dot(&(&m_mat * u));
        let norm_sq = u.dot(&(&s_mat * u));
        let pre = (norm_sq + lambda) / (1.0 + lambda);
        let num = transfer * transfer;
        // d/du of pre * num / den^2
        let d_pre = 2.0 / (1.0 + lambda) * (&s_mat * u);
        let d_num = 2.0 * transfer * &a_vec;
        let d_den = &m_sym * u;
        (d_pre * num * den * den + pre * d_num * den * den
            - pre * num * 2.0 * den * d_den)
            / (den * den * den * den)
    };

    let best = multistart_ascent(d, 2.0, multistarts, &ratio, &grad_fn);
    Ok(RatioBound {
        value: best.0,
        achieved_ratio: best.0,
        maximizer: best.1,
    })
}

/// Closure-case linear bound `c d ||E_pi phi||^2_{(Sigma + lambda I)^{-1}}`.
pub fn opc_bound_closure_linear(
    cov: &DMatrix<f64>,
    policy_mean_feature: &DVector<f64>,
    lambda: f64,
    d: usize,
    c: f64,
) -> Result<f64> {
    let dim = policy_mean_feature.len();
    if cov.nrows() != dim || cov.ncols() != dim {
        return Err(Error::DimMismatch("covariance vs mean feature".into()));
    }
    let mut sigma_l = cov.clone();
    for i in 0..dim {
        sigma_l[(i, i)] += lambda;
    }
    let x = sigma_l
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Singular("regularized covariance".into()))?
        .solve(policy_mean_feature);
    Ok(c * d as f64 * policy_mean_feature.dot(&x))
}

/// Bootstrapped linear bound
/// `c d || E_pi[phi - gamma phi+] ||^2_{(Sigma~)^{-1}}` with
/// `Sigma~ = (L - gamma L^{-1} Sigma_b)^T (L - gamma L^{-1} Sigma_b)` and
/// `L = (Sigma + lambda I)^{1/2}` from a symmetric eigendecomposition.
pub fn opc_bound_bootstrap_linear(
    cov: &DMatrix<f64>,
    cross_cov: &DMatrix<f64>,
    policy_mean: &DVector<f64>,
    gamma: f64,
    lambda: f64,
    d: usize,
    c: f64,
) -> Result<f64> {
    let dim = policy_mean.len();
    if cov.nrows() != dim || cross_cov.nrows() != dim || cross_cov.ncols() != dim {
        return Err(Error::DimMismatch("covariance shapes".into()));
    }
    let mut sigma_l = cov.clone();
    for i in 0..dim {
        sigma_l[(i, i)] += lambda;
    }
    let (sqrt, inv_sqrt) = symmetric_sqrt_pair(&sigma_l)?;
    let m = &sqrt - gamma * &inv_sqrt * cross_cov;
    let sigma_tilde = m.transpose() * &m;
    let chol = sigma_tilde.clone().cholesky().ok_or_else(|| {
        let min_sv = sigma_tilde
            .clone()
            .symmetric_eigen()
            .eigenvalues
            .iter()
            .cloned()
            .fold(f64::INFINITY, f64::min);
        Error::Singular(format!(
            "bootstrapped covariance is singular (smallest eigenvalue {min_sv:.3e})"
        ))
    })?;
    let x = chol.solve(policy_mean);
    Ok(c * d as f64 * policy_mean.dot(&x))
}

/// `Sigma^{1/2}` and `Sigma^{-1/2}` from a symmetric eigendecomposition
/// with eigenvalue floor 1e-12.
fn symmetric_sqrt_pair(sigma: &DMatrix<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let eig = sigma.clone().symmetric_eigen();
    let dim = sigma.nrows();
    let mut sqrt = DMatrix::zeros(dim, dim);
    let mut inv_sqrt = DMatrix::zeros(dim, dim);
    for k in 0..dim {
        let lam = eig.eigenvalues[k].max(1e-12);
        let v = eig.eigenvectors.column(k);
        let root = lam.sqrt();
        // sqrt += root v v^T; inv_sqrt += v v^T / root
        for i in 0..dim {
            for j in 0..dim {
                sqrt[(i, j)] += root * v[i] * v[j];
                inv_sqrt[(i, j)] += v[i] * v[j] / root;
            }
        }
    }
    Ok((sqrt, inv_sqrt))
}

/// Under a union of test spaces, the coefficient inherits the best bound.
pub fn opc_union_report(components: &[(String, f64)]) -> Result<f64> {
    if components.is_empty() {
        return Err(Error::invalid("no components supplied"));
    }
    Ok(components
        .iter()
        .map(|(_, v)| *v)
        .fold(f64::INFINITY, f64::min))
}

/// The exact algebraic ceiling on `||B^pi(Q)||_mu` implied by a feasibility
/// constraint against the function's own Bellman test:
/// `y^2 <= (rho/n)(y + lambda)` with `y = ||B||_mu^2` yields
/// `y <= (r^2 + sqrt(r^4 + 4 r^2 lambda)) / 2`, `r^2 = rho/n`. Returned as
/// the norm bound `sqrt(y_max)`.
pub fn bellman_norm_ceiling(rho: f64, n: usize, lambda: f64) -> f64 {
    let r_sq = rho / n as f64;
    (0.5 * (r_sq + (r_sq * r_sq + 4.0 * r_sq * lambda).sqrt())).sqrt()
}

/// Deterministic multi-start projected gradient ascent over the ball of the
/// given radius. Returns the best (value, point). NaN evaluations trigger a
/// restart from a fresh direction.
fn multistart_ascent(
    dim: usize,
    radius: f64,
    starts: usize,
    value: &dyn Fn(&DVector<f64>) -> f64,
    gradient: &dyn Fn(&DVector<f64>) -> DVector<f64>,
) -> (f64, DVector<f64>) {
    let starts = starts.max(1);
    let mut best_val = f64::NEG_INFINITY;
    let mut best_point = DVector::zeros(dim);
    for start in 0..starts {
        let mut rng = crate::rng::substream(0xC0FFEE, start as u64);
        let mut u = DVector::from_fn(dim, |_, _| rng.gen::<f64>() * 2.0 - 1.0);
        let norm = u.norm();
        if norm == 0.0 {
            continue;
        }
        u *= radius * (0.2 + 0.8 * rng.gen::<f64>()) / norm;
        let mut val = value(&u);
        let mut tries = 0;
        while !val.is_finite() && tries < 8 {
            u = DVector::from_fn(dim, |_, _| rng.gen::<f64>() * 2.0 - 1.0);
            let norm = u.norm();
            if norm > 0.0 {
                u *= radius / norm;
            }
            val = value(&u);
            tries += 1;
        }
        if !val.is_finite() {
            continue;
        }
        let mut step = 0.5;
        for _ in 0..200 {
            let g = gradient(&u);
            let g_norm = g.norm();
            if !g_norm.is_finite() || g_norm < 1e-14 {
                break;
            }
            let mut improved = false;
            let mut local = step;
            for _ in 0..30 {
                let mut cand = &u + local * &g / g_norm;
                let norm = cand.norm();
                if norm > radius {
                    cand *= radius / norm;
                }
                let cand_val = value(&cand);
                if cand_val.is_finite() && cand_val > val + 1e-14 {
                    u = cand;
                    val = cand_val;
                    improved = true;
                    break;
                }
                local *= 0.5;
            }
            if !improved {
                break;
            }
            step = (local * 2.0).min(0.5);
        }
        if val > best_val {
            best_val = val;
            best_point = u;
        }
    }
    (best_val, best_point)
}
