//! Linear predictor class over a feature map, and the soft-max policy class.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::mdp::TabularPolicy;

/// A feature map on state-action pairs with `||phi(s,a)||_2 <= 1`.
///
/// Stored densely, one row per `(s, a)` pair in row-major order
/// (`index = s * num_actions + a`).
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap {
    num_states: usize,
    num_actions: usize,
    dim: usize,
    /// `(num_states * num_actions) x dim`
    rows: DMatrix<f64>,
}

impl FeatureMap {
    pub fn new(num_states: usize, num_actions: usize, rows: DMatrix<f64>) -> Result<Self> {
        if rows.nrows() != num_states * num_actions {
            return Err(Error::DimMismatch(format!(
                "feature table has {} rows, expected {}",
                rows.nrows(),
                num_states * num_actions
            )));
        }
        for i in 0..rows.nrows() {
            let norm = rows.row(i).norm();
            if norm > 1.0 + 1e-12 {
                return Err(Error::invalid(format!(
                    "feature vector for pair {i} has norm {norm:.6} > 1; rescale with FeatureMap::rescaled"
                )));
            }
        }
        Ok(FeatureMap {
            num_states,
            num_actions,
            dim: rows.ncols(),
            rows,
        })
    }

    /// Scale a raw feature table so the largest row norm becomes one, then
    /// construct the map.
    pub fn rescaled(num_states: usize, num_actions: usize, rows: DMatrix<f64>) -> Result<Self> {
        let max_norm = (0..rows.nrows())
            .map(|i| rows.row(i).norm())
            .fold(0.0f64, f64::max);
        let scaled = if max_norm > 1.0 { rows / max_norm } else { rows };
        FeatureMap::new(num_states, num_actions, scaled)
    }

    /// One-hot embedding with `d = |S| |A|`. Makes every tabular instance a
    /// special case of the linear pipeline with strong realizability.
    pub fn tabular(num_states: usize, num_actions: usize) -> Self {
        let d = num_states * num_actions;
        FeatureMap {
            num_states,
            num_actions,
            dim: d,
            rows: DMatrix::identity(d, d),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn phi(&self, s: usize, a: usize) -> DVector<f64> {
        self.rows.row(s * self.num_actions + a).transpose()
    }

    /// `phi(s, pi) = sum_a pi(a|s) phi(s, a)`.
    pub fn phi_policy(&self, policy: &TabularPolicy, s: usize) -> DVector<f64> {
        let mut v = DVector::zeros(self.dim);
        for a in 0..self.num_actions {
            let w = policy.prob(s, a);
            if w != 0.0 {
                v += w * self.phi(s, a);
            }
        }
        v
    }

    /// Load from CSV `s,a,phi_1..phi_d` (header optional).
    pub fn parse_csv(text: &str) -> Result<Self> {
        let mut entries: Vec<(usize, usize, Vec<f64>)> = Vec::new();
        let mut dim = None;
        for line in text.lines() {
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with("s,") || trimmed.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = trimmed.split(',').collect();
            if fields.len() < 3 {
                return Err(Error::parse("feature row needs s, a and at least one value"));
            }
            let s: usize = fields[0].parse().map_err(|_| Error::parse("bad state id"))?;
            let a: usize = fields[1].parse().map_err(|_| Error::parse("bad action id"))?;
            let vals: Vec<f64> = fields[2..]
                .iter()
                .map(|x| x.parse().map_err(|_| Error::parse("bad feature value")))
                .collect::<Result<_>>()?;
            match dim {
                None => dim = Some(vals.len()),
                Some(d) if d != vals.len() => {
                    return Err(Error::parse("inconsistent feature dimension across rows"))
                }
                _ => {}
            }
            entries.push((s, a, vals));
        }
        let dim = dim.ok_or_else(|| Error::parse("no feature rows"))?;
        let num_states = entries.iter().map(|e| e.0).max().unwrap() + 1;
        let num_actions = entries.iter().map(|e| e.1).max().unwrap() + 1;
        let mut rows = DMatrix::zeros(num_states * num_actions, dim);
        let mut seen = vec![false; num_states * num_actions];
        for (s, a, vals) in entries {
            let idx = s * num_actions + a;
            for (k, v) in vals.iter().enumerate() {
                rows[(idx, k)] = *v;
            }
            seen[idx] = true;
        }
        if !seen.iter().all(|&x| x) {
            return Err(Error::parse("missing feature rows for some state-action pairs"));
        }
        FeatureMap::new(num_states, num_actions, rows)
    }

    pub fn write_csv(&self) -> String {
        use std::fmt::Write;
        let mut out = String::new();
        for s in 0..self.num_states {
            for a in 0..self.num_actions {
                write!(out, "{s},{a}").unwrap();
                let row = self.rows.row(s * self.num_actions + a);
                for v in row.iter() {
                    write!(out, ",{v}").unwrap();
                }
                writeln!(out).unwrap();
            }
        }
        out
    }
}

/// A linear action-value function `Q_w(s,a) = <w, phi(s,a)>` with
/// `||w||_2 <= 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearQ {
    pub weights: DVector<f64>,
}

impl LinearQ {
    pub fn new(weights: DVector<f64>) -> Self {
        let norm = weights.norm();
        if norm > 1.0 + 1e-9 {
            log::warn!("linear predictor weight norm {norm:.6} exceeds the unit ball");
        }
        LinearQ { weights }
    }

    pub fn value(&self, fm: &FeatureMap, s: usize, a: usize) -> Result<f64> {
        if fm.dim() != self.weights.len() {
            return Err(Error::DimMismatch(format!(
                "weights have dim {}, features have dim {}",
                self.weights.len(),
                fm.dim()
            )));
        }
        Ok(self.weights.dot(&fm.phi(s, a)))
    }

    /// `Q_w(s, pi)`.
    pub fn policy_value(&self, fm: &FeatureMap, policy: &TabularPolicy, s: usize) -> f64 {
        self.weights.dot(&fm.phi_policy(policy, s))
    }

    /// Materialize as a dense table (tabular instances only).
    pub fn to_q_table(&self, fm: &FeatureMap) -> crate::mdp::QTable {
        let q = DMatrix::from_fn(fm.num_states(), fm.num_actions(), |s, a| {
            self.weights.dot(&fm.phi(s, a))
        });
        crate::mdp::QTable::new(q)
    }
}

/// Soft-max (linear logit) policy `pi(a|s) ∝ exp(<phi(s,a), theta>)`.
#[derive(Clone, Debug)]
pub struct SoftMaxPolicy {
    pub theta: DVector<f64>,
}

impl SoftMaxPolicy {
    pub fn new(theta: DVector<f64>) -> Self {
        SoftMaxPolicy { theta }
    }

    pub fn zeros(dim: usize) -> Self {
        SoftMaxPolicy {
            theta: DVector::zeros(dim),
        }
    }

    /// Action distribution at a state, log-sum-exp stabilized.
    pub fn probs(&self, fm: &FeatureMap, s: usize) -> DVector<f64> {
        let logits: Vec<f64> = (0..fm.num_actions())
            .map(|a| self.theta.dot(&fm.phi(s, a)))
            .collect();
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        for e in &mut exps {
            *e /= sum;
        }
        DVector::from_vec(exps)
    }

    /// Materialize the policy as a probability table.
    pub fn to_tabular(&self, fm: &FeatureMap) -> TabularPolicy {
        let probs = DMatrix::from_fn(fm.num_states(), fm.num_actions(), |s, a| {
            self.probs(fm, s)[a]
        });
        TabularPolicy::new(probs).expect("softmax rows are normalized by construction")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::Rng;

    #[test]
    fn q_value_cases() {
        let fm = FeatureMap::new(
            1,
            1,
            DMatrix::from_row_slice(1, 2, &[0.6, 0.8]),
        )
        .unwrap();
        let zero = LinearQ::new(DVector::zeros(2));
        assert_eq!(zero.value(&fm, 0, 0).unwrap(), 0.0);
        let e1 = LinearQ::new(DVector::from_row_slice(&[1.0, 0.0]));
        assert_abs_diff_eq!(e1.value(&fm, 0, 0).unwrap(), 0.6, epsilon = 1e-15);

        let bad = LinearQ::new(DVector::zeros(3));
        assert!(bad.value(&fm, 0, 0).is_err());
    }

    #[test]
    fn tabular_embedding_reproduces_q() {
        let fm = FeatureMap::tabular(2, 2);
        assert_eq!(fm.dim(), 4);
        // Orthonormal one-hot rows.
        for i in 0..4 {
            for j in 0..4 {
                let dot = fm.rows.row(i).dot(&fm.rows.row(j));
                assert_abs_diff_eq!(dot, if i == j { 1.0 } else { 0.0 }, epsilon = 1e-15);
            }
        }
        let q = crate::fixtures::random_q_table(2, 2, 50);
        let mut w = DVector::zeros(4);
        for s in 0..2 {
            for a in 0..2 {
                w[s * 2 + a] = q.get(s, a);
            }
        }
        let scale = w.norm().max(1.0);
        let lq = LinearQ::new(w / scale);
        for s in 0..2 {
            for a in 0..2 {
                assert_abs_diff_eq!(lq.value(&fm, s, a).unwrap() * scale, q.get(s, a), epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn tabular_covariance_is_diagonal_visit_frequency() {
        let mdp = crate::fixtures::gridworld5();
        let pi = crate::fixtures::gridworld5_policy();
        let data = crate::data::sample_mixture_dataset(
            &mdp,
            &crate::data::MixtureSpec::single(pi),
            2_000,
            6,
            false,
        )
        .unwrap();
        let fm = FeatureMap::tabular(5, 2);
        let n = data.len() as f64;
        let mut cov = DMatrix::zeros(10, 10);
        for x in &data.samples {
            let phi = fm.phi(x.state, x.action);
            cov += &phi * phi.transpose() / n;
        }
        let mut counts = vec![0usize; 10];
        for x in &data.samples {
            counts[x.state * 2 + x.action] += 1;
        }
        for i in 0..10 {
            for j in 0..10 {
                let expect = if i == j { counts[i] as f64 / n } else { 0.0 };
                assert_abs_diff_eq!(cov[(i, j)], expect, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn unit_ball_bound_via_cauchy_schwarz() {
        let mut rng = crate::rng::substream(9, 0);
        for _ in 0..50 {
            let raw = DMatrix::from_fn(6, 3, |_, _| rng.gen::<f64>() * 2.0 - 1.0);
            let fm = FeatureMap::rescaled(2, 3, raw).unwrap();
            let mut w = DVector::from_fn(3, |_, _| rng.gen::<f64>() * 2.0 - 1.0);
            let norm = w.norm();
            if norm > 1.0 {
                w /= norm;
            }
            let lq = LinearQ::new(w);
            for s in 0..2 {
                for a in 0..3 {
                    assert!(lq.value(&fm, s, a).unwrap().abs() <= 1.0 + 1e-12);
                }
            }
        }
    }

    #[test]
    fn softmax_cases() {
        let fm = FeatureMap::tabular(1, 2);
        let uniform = SoftMaxPolicy::zeros(2);
        let p = uniform.probs(&fm, 0);
        assert_abs_diff_eq!(p[0], 0.5, epsilon = 1e-15);

        // logits (ln 3, 0) -> (0.75, 0.25)
        let p = SoftMaxPolicy::new(DVector::from_row_slice(&[3.0f64.ln(), 0.0])).probs(&fm, 0);
        assert_abs_diff_eq!(p[0], 0.75, epsilon = 1e-12);
        assert_abs_diff_eq!(p[1], 0.25, epsilon = 1e-12);

        // Shift invariance.
        let shifted =
            SoftMaxPolicy::new(DVector::from_row_slice(&[3.0f64.ln() + 5.0, 5.0])).probs(&fm, 0);
        assert_abs_diff_eq!(shifted[0], 0.75, epsilon = 1e-12);
        assert_abs_diff_eq!(p.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn feature_csv_round_trip() {
        let fm = FeatureMap::tabular(2, 2);
        let text = fm.write_csv();
        let back = FeatureMap::parse_csv(&text).unwrap();
        assert_eq!(back, fm);
    }

    #[test]
    fn oversized_features_rejected() {
        let rows = DMatrix::from_row_slice(1, 2, &[3.0, 4.0]);
        assert!(FeatureMap::new(1, 1, rows.clone()).is_err());
        let fm = FeatureMap::rescaled(1, 1, rows).unwrap();
        assert_abs_diff_eq!(fm.phi(0, 0).norm(), 1.0, epsilon = 1e-12);
    }
}
