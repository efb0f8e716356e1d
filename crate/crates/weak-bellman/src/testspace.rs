//! Test functions `f(s, a, o)` and the finite test spaces built from them.
//!
//! A test function weights per-sample temporal differences; each one
//! contributes a two-sided constraint to the feasibility set. All
//! constructors keep `sup |f| <= 1`.

use nalgebra::{DMatrix, DVector};

use crate::data::{Identifier, ReferenceMeasure};
use crate::error::{Error, Result};
use crate::features::FeatureMap;
use crate::mdp::{bellman_error_table, QTable, TabularMdp, TabularPolicy};

#[derive(Clone, Debug, PartialEq)]
pub enum TestFunction {
    /// `f == 1`.
    Identity,
    /// `f(s, a, o) = 1{o = j}` for mixture-tagged data.
    Indicator(usize),
    /// `f(s, a) = <v, phi(s, a)>`; needs the feature map at evaluation time.
    LinearVec(DVector<f64>),
    /// Trajectory importance-sampling estimator scaled by `1/b`.
    ImportanceSampling {
        target: TabularPolicy,
        behavior: TabularPolicy,
        scaling: f64,
    },
    /// Arbitrary bounded table over `(s, a)`.
    TabularTable(DMatrix<f64>),
}

impl TestFunction {
    /// Evaluate at `(s, a, o)`. The feature map is consulted only by
    /// `LinearVec`.
    pub fn eval(&self, fm: &FeatureMap, s: usize, a: usize, id: &Identifier) -> Result<f64> {
        match self {
            TestFunction::Identity => Ok(1.0),
            TestFunction::Indicator(j) => Ok(if id.component == *j { 1.0 } else { 0.0 }),
            TestFunction::LinearVec(v) => {
                if v.len() != fm.dim() {
                    return Err(Error::DimMismatch("test direction vs feature dim".into()));
                }
                Ok(v.dot(&fm.phi(s, a)))
            }
            TestFunction::ImportanceSampling {
                target,
                behavior,
                scaling,
            } => {
                let path = id.trajectory.as_ref().ok_or_else(|| {
                    Error::invalid("importance-sampling test needs trajectory identifiers")
                })?;
                let mut ratio = 1.0 / scaling;
                for &(sh, ah) in path {
                    let b = behavior.prob(sh, ah);
                    if b == 0.0 {
                        return Err(Error::invalid(format!(
                            "behavior policy has zero mass on observed pair ({sh},{ah})"
                        )));
                    }
                    ratio *= target.prob(sh, ah) / b;
                }
                Ok(ratio)
            }
            TestFunction::TabularTable(t) => Ok(t[(s, a)]),
        }
    }

    /// Whether exact expectations against a mixture reference measure over
    /// `(s, a, o)` are available. Importance-sampling tests depend on whole
    /// trajectories and are estimated from data instead.
    pub fn supports_population(&self) -> bool {
        !matches!(self, TestFunction::ImportanceSampling { .. })
    }

    /// Evaluate against component `j` at `(s, a)` under the reference
    /// measure (no trajectory identifiers there).
    pub(crate) fn eval_population(&self, fm: &FeatureMap, s: usize, a: usize, j: usize) -> Result<f64> {
        match self {
            TestFunction::ImportanceSampling { .. } => Err(Error::invalid(
                "population inner products are undefined for importance-sampling tests",
            )),
            other => other.eval(
                fm,
                s,
                a,
                &Identifier {
                    component: j,
                    trajectory: None,
                },
            ),
        }
    }

    /// `E_mu[f^2]` under the exact reference measure.
    pub fn population_norm_sq(&self, fm: &FeatureMap, mu: &ReferenceMeasure) -> Result<f64> {
        let mut total = 0.0;
        for j in 0..mu.num_components() {
            let comp = mu.component(j);
            for s in 0..comp.nrows() {
                for a in 0..comp.ncols() {
                    let p = comp[(s, a)];
                    if p != 0.0 {
                        let f = self.eval_population(fm, s, a, j)?;
                        total += p * f * f;
                    }
                }
            }
        }
        Ok(total)
    }

    /// `E_mu[f g]` for a table `g` over `(s, a)`.
    pub fn population_inner(&self, fm: &FeatureMap, mu: &ReferenceMeasure, g: &DMatrix<f64>) -> Result<f64> {
        let mut total = 0.0;
        for j in 0..mu.num_components() {
            let comp = mu.component(j);
            for s in 0..comp.nrows() {
                for a in 0..comp.ncols() {
                    let p = comp[(s, a)];
                    if p != 0.0 {
                        total += p * self.eval_population(fm, s, a, j)? * g[(s, a)];
                    }
                }
            }
        }
        Ok(total)
    }
}

/// A finite ordered collection of test functions with provenance tags.
#[derive(Clone, Debug, Default)]
pub struct TestSpace {
    members: Vec<TestFunction>,
    tags: Vec<String>,
}

impl TestSpace {
    pub fn new() -> Self {
        TestSpace::default()
    }

    pub fn push(&mut self, f: TestFunction, tag: impl Into<String>) {
        self.members.push(f);
        self.tags.push(tag.into());
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn members(&self) -> &[TestFunction] {
        &self.members
    }

    pub fn tag(&self, i: usize) -> &str {
        &self.tags[i]
    }

    pub fn iter(&self) -> impl Iterator<Item = &TestFunction> {
        self.members.iter()
    }

    /// Concatenation with de-duplication by structural equality.
    pub fn union(spaces: &[TestSpace]) -> TestSpace {
        let mut out = TestSpace::new();
        for space in spaces {
            for (f, tag) in space.members.iter().zip(space.tags.iter()) {
                if !out.members.contains(f) {
                    out.push(f.clone(), tag.clone());
                }
            }
        }
        out
    }
}

/// The single identity test `f == 1`.
pub fn identity_test() -> TestFunction {
    TestFunction::Identity
}

pub fn identity_space() -> TestSpace {
    let mut ts = TestSpace::new();
    ts.push(identity_test(), "identity");
    ts
}

/// Binary indicators of the mixture component, `f_j = 1{o = j}`.
pub fn mixture_indicator_tests(m: usize) -> Result<TestSpace> {
    if m == 0 {
        return Err(Error::invalid("need at least one mixture component"));
    }
    let mut ts = TestSpace::new();
    for j in 0..m {
        ts.push(TestFunction::Indicator(j), format!("indicator[{j}]"));
    }
    Ok(ts)
}

/// Unit-norm eigenvectors of a symmetric PSD matrix, ordered by descending
/// eigenvalue, as linear test functions. Sign convention: first coordinate
/// with magnitude above 1e-12 is positive.
pub fn eigen_test_class(cov: &DMatrix<f64>) -> Result<TestSpace> {
    if cov.nrows() != cov.ncols() {
        return Err(Error::DimMismatch("covariance must be square".into()));
    }
    let asym = (cov - cov.transpose()).abs().max();
    if asym > 1e-9 {
        return Err(Error::invalid(format!(
            "covariance is not symmetric (max asymmetry {asym:.3e})"
        )));
    }
    let sym = 0.5 * (cov + cov.transpose());
    let eig = sym.symmetric_eigen();
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&i, &j| {
        eig.eigenvalues[j]
            .partial_cmp(&eig.eigenvalues[i])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let mut ts = TestSpace::new();
    for (rank, &idx) in order.iter().enumerate() {
        let mut v: DVector<f64> = eig.eigenvectors.column(idx).into();
        v /= v.norm();
        if let Some(first) = v.iter().find(|x| x.abs() > 1e-12) {
            if *first < 0.0 {
                v = -v;
            }
        }
        ts.push(TestFunction::LinearVec(v), format!("eigen[{rank}]"));
    }
    Ok(ts)
}

/// Empirical feature covariance of a dataset, the usual input to
/// [`eigen_test_class`].
pub fn empirical_covariance(dataset: &crate::data::Dataset, fm: &FeatureMap) -> DMatrix<f64> {
    let d = fm.dim();
    let mut cov = DMatrix::zeros(d, d);
    if dataset.is_empty() {
        return cov;
    }
    for x in &dataset.samples {
        let phi = fm.phi(x.state, x.action);
        cov.syger(1.0, &phi, &phi, 1.0);
    }
    // syger fills the lower triangle; mirror it.
    for i in 0..d {
        for j in (i + 1)..d {
            cov[(i, j)] = cov[(j, i)];
        }
    }
    cov / dataset.len() as f64
}

/// Trajectory importance-sampling test for `target` against the behavior
/// that produced the data. The caller supplies the scaling `b`; the
/// constructed function is `(1/b) prod pi(a|s) / rho(a|s)` over the
/// identifier trajectory.
pub fn importance_sampling_test(
    target: &TabularPolicy,
    behavior: &TabularPolicy,
    scaling: f64,
) -> Result<TestFunction> {
    if scaling <= 0.0 {
        return Err(Error::invalid("importance-sampling scaling must be positive"));
    }
    if target.num_states() != behavior.num_states()
        || target.num_actions() != behavior.num_actions()
    {
        return Err(Error::DimMismatch("target and behavior policy shapes".into()));
    }
    Ok(TestFunction::ImportanceSampling {
        target: target.clone(),
        behavior: behavior.clone(),
        scaling,
    })
}

/// Finite surrogate for the prediction-error test space of a linear class:
/// the difference of two linear predictors is linear again, so spanning
/// directions suffice. Defaults to the standard basis, capped at `budget`.
pub fn prediction_error_tests(fm: &FeatureMap, budget: usize) -> Result<TestSpace> {
    if budget == 0 {
        return Err(Error::invalid("budget must be at least one"));
    }
    let mut ts = TestSpace::new();
    for k in 0..fm.dim().min(budget) {
        let mut v = DVector::zeros(fm.dim());
        v[k] = 1.0;
        ts.push(TestFunction::LinearVec(v), format!("pred_error[{k}]"));
    }
    Ok(ts)
}

/// Bellman test functions `B^pi(Q)` for a grid of candidate tables; usable
/// when the MDP itself is known.
pub fn bellman_test_class_tabular(
    mdp: &TabularMdp,
    policy: &TabularPolicy,
    q_grid: &[QTable],
) -> Result<TestSpace> {
    let mut ts = TestSpace::new();
    for (k, q) in q_grid.iter().enumerate() {
        let table = bellman_error_table(mdp, policy, q)?;
        let sup = table.abs().max();
        if sup > 1.0 + 1e-12 {
            return Err(Error::invalid(format!(
                "Bellman test function {k} has sup norm {sup:.6} > 1"
            )));
        }
        ts.push(TestFunction::TabularTable(table), format!("bellman[{k}]"));
    }
    Ok(ts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{sample_mixture_dataset, MixtureSpec};
    use crate::fixtures;
    use approx::assert_abs_diff_eq;

    fn dummy_id() -> Identifier {
        Identifier {
            component: 0,
            trajectory: None,
        }
    }

    #[test]
    fn identity_basics() {
        let fm = FeatureMap::tabular(2, 2);
        let f = identity_test();
        assert_eq!(f.eval(&fm, 1, 0, &dummy_id()).unwrap(), 1.0);
    }

    #[test]
    fn indicators_partition_unity() {
        let fm = FeatureMap::tabular(3, 2);
        let ts = mixture_indicator_tests(3).unwrap();
        for comp in 0..3 {
            let id = Identifier {
                component: comp,
                trajectory: None,
            };
            let total: f64 = ts
                .iter()
                .map(|f| f.eval(&fm, 0, 0, &id).unwrap())
                .sum();
            assert_eq!(total, 1.0);
        }
    }

    #[test]
    fn indicator_norms_sum_to_one_under_mu() {
        let mdp = fixtures::random_mdp(4, 2, 0.5, 0.3, 61);
        let mix = MixtureSpec::new(
            vec![fixtures::random_policy(4, 2, 62), fixtures::random_policy(4, 2, 63)],
            vec![0.4, 0.6],
        )
        .unwrap();
        let mu = crate::data::reference_measure(&mdp, &mix).unwrap();
        let fm = FeatureMap::tabular(4, 2);
        let ts = mixture_indicator_tests(2).unwrap();
        let total: f64 = ts
            .iter()
            .map(|f| f.population_norm_sq(&fm, &mu).unwrap())
            .sum();
        assert_abs_diff_eq!(total, 1.0, epsilon = 1e-10);
    }

    #[test]
    fn indicator_inner_product_is_weighted_component_mean() {
        // <f_j, g>_mu = alpha_j E_{d^rho_j}[g], by direct summation.
        let mdp = fixtures::random_mdp(4, 2, 0.5, 0.3, 64);
        let pols = vec![fixtures::random_policy(4, 2, 65), fixtures::random_policy(4, 2, 66)];
        let mix = MixtureSpec::new(pols.clone(), vec![0.25, 0.75]).unwrap();
        let mu = crate::data::reference_measure(&mdp, &mix).unwrap();
        let fm = FeatureMap::tabular(4, 2);
        let g = DMatrix::from_fn(4, 2, |s, a| (s as f64 + 1.0) * 0.1 - 0.05 * a as f64);
        for j in 0..2 {
            let f = TestFunction::Indicator(j);
            let lhs = f.population_inner(&fm, &mu, &g).unwrap();
            let d = crate::mdp::occupancy(&mdp, &pols[j]).unwrap();
            let mean: f64 = d.zip_map(&g, |p, v| p * v).iter().sum();
            assert_abs_diff_eq!(lhs, mix.weight(j) * mean, epsilon = 1e-12);
        }
    }

    #[test]
    fn eigen_class_diagonal_case() {
        let cov = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 1.0]);
        let ts = eigen_test_class(&cov).unwrap();
        match &ts.members()[0] {
            TestFunction::LinearVec(v) => {
                assert_abs_diff_eq!(v[0], 1.0, epsilon = 1e-12);
                assert_abs_diff_eq!(v[1], 0.0, epsilon = 1e-12);
            }
            _ => panic!("expected linear test"),
        }
        match &ts.members()[1] {
            TestFunction::LinearVec(v) => {
                assert_abs_diff_eq!(v[1], 1.0, epsilon = 1e-12);
            }
            _ => panic!("expected linear test"),
        }
    }

    #[test]
    fn eigen_class_norm_identity_and_orthonormality() {
        let mdp = fixtures::gridworld5();
        let pi = fixtures::gridworld5_policy();
        let data = sample_mixture_dataset(&mdp, &MixtureSpec::single(pi), 400, 10, false).unwrap();
        let fm = FeatureMap::tabular(5, 2);
        let cov = empirical_covariance(&data, &fm);
        let ts = eigen_test_class(&cov).unwrap();
        let eigvals = {
            let mut v: Vec<f64> = cov.clone().symmetric_eigen().eigenvalues.iter().cloned().collect();
            v.sort_by(|a, b| b.partial_cmp(a).unwrap());
            v
        };
        let dirs: Vec<&DVector<f64>> = ts
            .iter()
            .map(|f| match f {
                TestFunction::LinearVec(v) => v,
                _ => panic!(),
            })
            .collect();
        // ||f_j||_n^2 equals the j-th eigenvalue.
        for (j, v) in dirs.iter().enumerate() {
            let mut norm_sq = 0.0;
            for x in &data.samples {
                let val = v.dot(&fm.phi(x.state, x.action));
                norm_sq += val * val;
            }
            norm_sq /= data.len() as f64;
            assert_abs_diff_eq!(norm_sq, eigvals[j], epsilon = 1e-10);
        }
        for i in 0..dirs.len() {
            for j in 0..dirs.len() {
                let dot = dirs[i].dot(dirs[j]);
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((dot - expect).abs() <= 1e-10);
            }
        }
    }

    #[test]
    fn eigen_class_identity_cov_returns_orthonormal_basis() {
        let ts = eigen_test_class(&DMatrix::identity(3, 3)).unwrap();
        let dirs: Vec<&DVector<f64>> = ts
            .iter()
            .map(|f| match f {
                TestFunction::LinearVec(v) => v,
                _ => panic!(),
            })
            .collect();
        for i in 0..3 {
            for j in 0..3 {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert_abs_diff_eq!(dirs[i].dot(dirs[j]), expect, epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn eigen_rejects_asymmetric() {
        let cov = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, -0.5, 1.0]);
        assert!(eigen_test_class(&cov).is_err());
    }

    #[test]
    fn importance_sampling_collapses_on_policy() {
        let pi = fixtures::gridworld5_policy();
        let f = importance_sampling_test(&pi, &pi, 4.0).unwrap();
        let fm = FeatureMap::tabular(5, 2);
        let id = Identifier {
            component: 0,
            trajectory: Some(vec![(0, 1), (1, 1), (2, 0)]),
        };
        assert_abs_diff_eq!(f.eval(&fm, 2, 0, &id).unwrap(), 0.25, epsilon = 1e-15);

        let empty = Identifier {
            component: 0,
            trajectory: Some(vec![]),
        };
        assert_abs_diff_eq!(f.eval(&fm, 0, 0, &empty).unwrap(), 0.25, epsilon = 1e-15);

        let missing = Identifier {
            component: 0,
            trajectory: None,
        };
        assert!(f.eval(&fm, 0, 0, &missing).is_err());
    }

    #[test]
    fn importance_sampling_unbiasedness() {
        // b <f, B^pi(Q)>_n  ->  E_pi[B^pi(Q)] as n grows (Monte-Carlo check
        // against the exact tabular expectation).
        let mdp = fixtures::random_mdp(2, 2, 0.5, 0.4, 71);
        let behavior = fixtures::random_policy(2, 2, 72);
        let target = fixtures::random_policy(2, 2, 73);
        let q = fixtures::random_q_table(2, 2, 74);
        let b_table = bellman_error_table(&mdp, &target, &q).unwrap();

        // Exact E_pi[B].
        let d_pi = crate::mdp::occupancy(&mdp, &target).unwrap();
        let exact: f64 = d_pi.zip_map(&b_table, |p, v| p * v).iter().sum();

        // Scaling: a generous cap on trajectory ratios at this horizon scale.
        let scaling = 64.0;
        let f = importance_sampling_test(&target, &behavior, scaling).unwrap();
        let fm = FeatureMap::tabular(2, 2);
        let n = 400_000;
        let data =
            sample_mixture_dataset(&mdp, &MixtureSpec::single(behavior), n, 15, true).unwrap();
        let mut acc = 0.0;
        let mut acc_sq = 0.0;
        for x in &data.samples {
            let v = f.eval(&fm, x.state, x.action, &x.identifier).unwrap()
                * b_table[(x.state, x.action)];
            acc += v;
            acc_sq += v * v;
        }
        let mean = acc / n as f64;
        let var = (acc_sq / n as f64 - mean * mean).max(0.0);
        let se = (var / n as f64).sqrt();
        assert!(
            (scaling * mean - exact).abs() <= 3.0 * scaling * se + 1e-6,
            "IS estimate {} vs exact {} (se {})",
            scaling * mean,
            exact,
            se
        );
    }

    #[test]
    fn prediction_error_basis() {
        let fm = FeatureMap::tabular(1, 2);
        let ts = prediction_error_tests(&fm, 2).unwrap();
        assert_eq!(ts.len(), 2);
        let id = dummy_id();
        // Directions are e_1, e_2; sup bound holds via Cauchy-Schwarz.
        for f in ts.iter() {
            for a in 0..2 {
                assert!(f.eval(&fm, 0, a, &id).unwrap().abs() <= 1.0);
            }
        }
        // Any difference of weights is spanned by the returned directions.
        let w = DVector::from_row_slice(&[0.3, -0.4]);
        let mut recon = DVector::zeros(2);
        for (k, f) in ts.iter().enumerate() {
            match f {
                TestFunction::LinearVec(v) => recon += w[k] * v,
                _ => panic!(),
            }
        }
        assert_abs_diff_eq!((recon - w).norm(), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn bellman_test_class_members() {
        let mdp = fixtures::random_mdp(3, 2, 0.0, 0.5, 81);
        let pi = fixtures::random_policy(3, 2, 82);
        let q_exact = crate::mdp::exact_q(&mdp, &pi).unwrap();
        let zero = QTable::zeros(3, 2);
        let ts = bellman_test_class_tabular(&mdp, &pi, &[q_exact, zero]).unwrap();
        match &ts.members()[0] {
            TestFunction::TabularTable(t) => assert!(t.abs().max() <= 1e-10),
            _ => panic!(),
        }
        match &ts.members()[1] {
            TestFunction::TabularTable(t) => {
                for s in 0..3 {
                    for a in 0..2 {
                        assert_abs_diff_eq!(t[(s, a)], -mdp.mean_reward(s, a), epsilon = 1e-14);
                    }
                }
            }
            _ => panic!(),
        }
    }

    #[test]
    fn union_dedups() {
        let a = identity_space();
        let same = TestSpace::union(&[a.clone(), a.clone()]);
        assert_eq!(same.len(), 1);
        let b = mixture_indicator_tests(2).unwrap();
        let u = TestSpace::union(&[a, b]);
        assert_eq!(u.len(), 3);
    }
}
