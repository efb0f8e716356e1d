//! Dataset generation from mixtures of behavior protocols, plus the exact
//! reference measure used by population-level checks.
//!
//! Each sample is drawn exactly from the discounted occupancy measure of its
//! protocol via the geometric-horizon construction: draw `H ~ Geom(1-gamma)`,
//! roll the chain for `H` steps, and emit the pair reached. This removes any
//! truncation bias, so population identities can be tested at statistical
//! tolerance only.
//!
//! Sample `i` of seed `s` always uses RNG substream `(s, i)`, which makes
//! generation deterministic and embarrassingly parallel.

use nalgebra::DMatrix;
use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::mdp::{occupancy, TabularMdp, TabularPolicy};
use crate::rng::{sample_discrete, substream};

/// Side information attached to a sample: the mixture component that
/// produced it, and (on demand) the trajectory from the start-state draw to
/// the emitted pair, inclusive.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Identifier {
    pub component: usize,
    pub trajectory: Option<Vec<(usize, usize)>>,
}

/// One `(s, a, o, r, s')` quintuple.
#[derive(Clone, Debug, PartialEq)]
pub struct AdaptedSample {
    pub state: usize,
    pub action: usize,
    pub identifier: Identifier,
    pub reward: f64,
    pub next_state: usize,
}

/// An ordered collection of samples, a deterministic function of
/// (generator configuration, seed).
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub samples: Vec<AdaptedSample>,
    pub seed: u64,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// A mixture of behavior protocols with sampling weights.
#[derive(Clone, Debug)]
pub struct MixtureSpec {
    protocols: Vec<TabularPolicy>,
    weights: Vec<f64>,
}

impl MixtureSpec {
    pub fn new(protocols: Vec<TabularPolicy>, weights: Vec<f64>) -> Result<Self> {
        if protocols.is_empty() || protocols.len() != weights.len() {
            return Err(Error::invalid("need one weight per protocol"));
        }
        if weights.iter().any(|&w| w < 0.0) {
            return Err(Error::invalid("mixture weights must be nonnegative"));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::invalid(format!("mixture weights sum to {sum}, expected 1")));
        }
        Ok(MixtureSpec { protocols, weights })
    }

    /// Single-protocol mixture (the on-policy case when the protocol is the
    /// evaluation target).
    pub fn single(protocol: TabularPolicy) -> Self {
        MixtureSpec {
            protocols: vec![protocol],
            weights: vec![1.0],
        }
    }

    pub fn num_components(&self) -> usize {
        self.protocols.len()
    }

    pub fn weight(&self, j: usize) -> f64 {
        self.weights[j]
    }

    pub fn protocol(&self, j: usize) -> &TabularPolicy {
        &self.protocols[j]
    }
}

/// Exact reference measure over `(s, a, o)` induced by a mixture:
/// `mu(s, a, j) = alpha_j d^{rho_j}(s, a)`.
#[derive(Clone, Debug)]
pub struct ReferenceMeasure {
    /// `per_component[j][(s, a)] = alpha_j * d^{rho_j}(s, a)`
    per_component: Vec<DMatrix<f64>>,
}

impl ReferenceMeasure {
    pub fn num_components(&self) -> usize {
        self.per_component.len()
    }

    pub fn prob(&self, s: usize, a: usize, j: usize) -> f64 {
        self.per_component[j][(s, a)]
    }

    pub fn component(&self, j: usize) -> &DMatrix<f64> {
        &self.per_component[j]
    }

    /// Marginal over `(s, a)`.
    pub fn marginal(&self) -> DMatrix<f64> {
        let mut m = self.per_component[0].clone();
        for c in &self.per_component[1..] {
            m += c;
        }
        m
    }

    pub fn total(&self) -> f64 {
        self.per_component.iter().map(|c| c.iter().sum::<f64>()).sum()
    }
}

/// `mu(s, a, j) = alpha_j d^{rho_j}(s, a)`, from exact occupancies.
pub fn reference_measure(mdp: &TabularMdp, mix: &MixtureSpec) -> Result<ReferenceMeasure> {
    let mut per_component = Vec::with_capacity(mix.num_components());
    for j in 0..mix.num_components() {
        let d = occupancy(mdp, mix.protocol(j))?;
        per_component.push(mix.weight(j) * d);
    }
    Ok(ReferenceMeasure { per_component })
}

/// Draw `n` samples from the mixture data model.
///
/// Per sample: pick component `J ~ alpha`, draw `(s, a)` exactly from
/// `d^{rho_J}` by the geometric-horizon rollout, then emit a noisy reward and
/// a successor state. When `record_trajectories` is set, the identifier also
/// carries the rollout path (needed by the importance-sampling test
/// function).
pub fn sample_mixture_dataset(
    mdp: &TabularMdp,
    mix: &MixtureSpec,
    n: usize,
    seed: u64,
    record_trajectories: bool,
) -> Result<Dataset> {
    for j in 0..mix.num_components() {
        if mix.protocol(j).num_states() != mdp.num_states()
            || mix.protocol(j).num_actions() != mdp.num_actions()
        {
            return Err(Error::DimMismatch(format!("protocol {j} does not match the MDP")));
        }
    }
    let weights: Vec<f64> = (0..mix.num_components()).map(|j| mix.weight(j)).collect();
    let samples: Vec<AdaptedSample> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = substream(seed, i as u64);
            let j = sample_discrete(&mut rng, &weights);
            let rho = mix.protocol(j);

            // H ~ Geometric(1 - gamma): number of transitions before emission.
            let gamma = mdp.discount();
            let mut h = 0usize;
            while rng.gen::<f64>() < gamma {
                h += 1;
            }

            let mut s = sample_discrete(&mut rng, mdp.start_dist().as_slice());
            let mut a = sample_discrete(&mut rng, rho.action_probs(s).as_slice());
            let mut path = if record_trajectories {
                let mut p = Vec::with_capacity(h + 1);
                p.push((s, a));
                Some(p)
            } else {
                None
            };
            for _ in 0..h {
                let row = mdp.transition_row(s, a);
                s = sample_discrete(&mut rng, row.as_slice());
                a = sample_discrete(&mut rng, rho.action_probs(s).as_slice());
                if let Some(p) = path.as_mut() {
                    p.push((s, a));
                }
            }

            let noise_hw = mdp.reward_noise().half_width;
            let noise = if noise_hw > 0.0 {
                (rng.gen::<f64>() * 2.0 - 1.0) * noise_hw
            } else {
                0.0
            };
            let reward = mdp.mean_reward(s, a) + noise;
            let row = mdp.transition_row(s, a);
            let next_state = sample_discrete(&mut rng, row.as_slice());

            AdaptedSample {
                state: s,
                action: a,
                identifier: Identifier {
                    component: j,
                    trajectory: path,
                },
                reward,
                next_state,
            }
        })
        .collect();
    Ok(Dataset { samples, seed })
}

// ------------------------------------------------------------------
// CSV persistence: `idx,s,a,o,r,s_next[,traj]` with `traj` a
// semicolon-separated `s:a` list.
// ------------------------------------------------------------------

pub fn write_csv(dataset: &Dataset) -> String {
    let any_traj = dataset
        .samples
        .iter()
        .any(|x| x.identifier.trajectory.is_some());
    let mut out = String::new();
    out.push_str(if any_traj {
        "idx,s,a,o,r,s_next,traj\n"
    } else {
        "idx,s,a,o,r,s_next\n"
    });
    use std::fmt::Write;
    for (i, x) in dataset.samples.iter().enumerate() {
        write!(
            out,
            "{},{},{},{},{},{}",
            i, x.state, x.action, x.identifier.component, x.reward, x.next_state
        )
        .unwrap();
        if any_traj {
            out.push(',');
            if let Some(path) = &x.identifier.trajectory {
                let parts: Vec<String> = path.iter().map(|(s, a)| format!("{s}:{a}")).collect();
                out.push_str(&parts.join(";"));
            }
        }
        out.push('\n');
    }
    out
}

pub fn parse_csv(text: &str, seed: u64) -> Result<Dataset> {
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::parse("empty dataset file"))?;
    let has_traj = match header.trim() {
        "idx,s,a,o,r,s_next" => false,
        "idx,s,a,o,r,s_next,traj" => true,
        other => return Err(Error::parse(format!("unrecognized dataset header `{other}`"))),
    };
    let mut samples = Vec::new();
    for line in lines {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        let expected = if has_traj { 7 } else { 6 };
        if fields.len() != expected {
            return Err(Error::parse(format!(
                "row has {} fields, expected {expected}",
                fields.len()
            )));
        }
        let state = fields[1].parse().map_err(|_| Error::parse("bad state"))?;
        let action = fields[2].parse().map_err(|_| Error::parse("bad action"))?;
        let component = fields[3].parse().map_err(|_| Error::parse("bad identifier"))?;
        let reward = fields[4].parse().map_err(|_| Error::parse("bad reward"))?;
        let next_state = fields[5].parse().map_err(|_| Error::parse("bad next state"))?;
        let trajectory = if has_traj && !fields[6].is_empty() {
            let mut path = Vec::new();
            for pair in fields[6].split(';') {
                let (s, a) = pair
                    .split_once(':')
                    .ok_or_else(|| Error::parse("bad trajectory entry"))?;
                path.push((
                    s.parse().map_err(|_| Error::parse("bad trajectory state"))?,
                    a.parse().map_err(|_| Error::parse("bad trajectory action"))?,
                ));
            }
            Some(path)
        } else {
            None
        };
        samples.push(AdaptedSample {
            state,
            action,
            identifier: Identifier {
                component,
                trajectory,
            },
            reward,
            next_state,
        });
    }
    Ok(Dataset { samples, seed })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use approx::assert_abs_diff_eq;

    #[test]
    fn empty_dataset() {
        let mdp = fixtures::gridworld5();
        let mix = MixtureSpec::single(fixtures::gridworld5_policy());
        let d = sample_mixture_dataset(&mdp, &mix, 0, 1, false).unwrap();
        assert!(d.is_empty());
    }

    #[test]
    fn generation_is_deterministic() {
        let mdp = fixtures::gridworld5();
        let mix = MixtureSpec::new(
            vec![fixtures::gridworld5_policy(), fixtures::random_policy(5, 2, 3)],
            vec![0.4, 0.6],
        )
        .unwrap();
        let a = sample_mixture_dataset(&mdp, &mix, 500, 99, true).unwrap();
        let b = sample_mixture_dataset(&mdp, &mix, 500, 99, true).unwrap();
        assert_eq!(a, b);
        let c = sample_mixture_dataset(&mdp, &mix, 500, 100, true).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn identifier_frequencies_match_weights() {
        let mdp = fixtures::gridworld5();
        let mix = MixtureSpec::new(
            vec![fixtures::gridworld5_policy(), fixtures::random_policy(5, 2, 7)],
            vec![0.3, 0.7],
        )
        .unwrap();
        let n = 50_000;
        let data = sample_mixture_dataset(&mdp, &mix, n, 5, false).unwrap();
        let f0 = data
            .samples
            .iter()
            .filter(|x| x.identifier.component == 0)
            .count() as f64
            / n as f64;
        assert!((f0 - 0.3).abs() < 0.01, "component frequency {f0}");
    }

    #[test]
    fn reference_measure_single_protocol_is_occupancy() {
        let mdp = fixtures::gridworld5();
        let pi = fixtures::gridworld5_policy();
        let mu = reference_measure(&mdp, &MixtureSpec::single(pi.clone())).unwrap();
        let d = occupancy(&mdp, &pi).unwrap();
        for s in 0..5 {
            for a in 0..2 {
                assert_abs_diff_eq!(mu.prob(s, a, 0), d[(s, a)], epsilon = 1e-12);
            }
        }
        assert_abs_diff_eq!(mu.total(), 1.0, epsilon = 1e-10);
    }

    #[test]
    fn reference_measure_symmetric_mixture() {
        let mdp = fixtures::gridworld5();
        let pi = fixtures::gridworld5_policy();
        let mix = MixtureSpec::new(vec![pi.clone(), pi.clone()], vec![0.5, 0.5]).unwrap();
        let mu = reference_measure(&mdp, &mix).unwrap();
        let d = occupancy(&mdp, &pi).unwrap();
        let marginal = mu.marginal();
        for s in 0..5 {
            for a in 0..2 {
                assert_abs_diff_eq!(marginal[(s, a)], d[(s, a)], epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn empirical_histogram_matches_reference_measure() {
        let mdp = fixtures::random_mdp(4, 2, 0.6, 0.3, 31);
        let mix = MixtureSpec::new(
            vec![fixtures::random_policy(4, 2, 32), fixtures::random_policy(4, 2, 33)],
            vec![0.25, 0.75],
        )
        .unwrap();
        let mu = reference_measure(&mdp, &mix).unwrap();
        let n = 100_000;
        let data = sample_mixture_dataset(&mdp, &mix, n, 8, false).unwrap();
        let mut counts = vec![0usize; 4 * 2 * 2];
        for x in &data.samples {
            counts[(x.state * 2 + x.action) * 2 + x.identifier.component] += 1;
        }
        for s in 0..4 {
            for a in 0..2 {
                for j in 0..2 {
                    let p = mu.prob(s, a, j);
                    let freq = counts[(s * 2 + a) * 2 + j] as f64 / n as f64;
                    let se = (p * (1.0 - p) / n as f64).sqrt();
                    assert!(
                        (freq - p).abs() <= 3.0 * se + 2e-4,
                        "cell ({s},{a},{j}): freq {freq} vs mu {p}"
                    );
                }
            }
        }
    }

    #[test]
    fn reward_noise_is_zero_mean_per_cell() {
        let mdp = fixtures::gridworld5(); // noise half width 0.05
        let pi = fixtures::gridworld5_policy();
        let data = sample_mixture_dataset(&mdp, &MixtureSpec::single(pi), 200_000, 12, false).unwrap();
        let mut sums = vec![0.0; 10];
        let mut counts = vec![0usize; 10];
        for x in &data.samples {
            assert!(x.reward.abs() <= 1.0);
            sums[x.state * 2 + x.action] += x.reward;
            counts[x.state * 2 + x.action] += 1;
        }
        for s in 0..5 {
            for a in 0..2 {
                let k = counts[s * 2 + a];
                if k < 500 {
                    continue;
                }
                let mean = sums[s * 2 + a] / k as f64;
                // Uniform noise std = hw / sqrt(3).
                let se = 0.05 / (3.0f64).sqrt() / (k as f64).sqrt();
                assert!(
                    (mean - mdp.mean_reward(s, a)).abs() <= 4.0 * se,
                    "cell ({s},{a}) mean {mean} vs {}",
                    mdp.mean_reward(s, a)
                );
            }
        }
    }

    #[test]
    fn trajectory_prefix_ends_at_emitted_pair() {
        let mdp = fixtures::gridworld5();
        let pi = fixtures::gridworld5_policy();
        let data = sample_mixture_dataset(&mdp, &MixtureSpec::single(pi), 200, 3, true).unwrap();
        for x in &data.samples {
            let path = x.identifier.trajectory.as_ref().unwrap();
            assert_eq!(*path.last().unwrap(), (x.state, x.action));
        }
    }

    #[test]
    fn csv_round_trip() {
        let mdp = fixtures::gridworld5();
        let pi = fixtures::gridworld5_policy();
        let data = sample_mixture_dataset(&mdp, &MixtureSpec::single(pi), 50, 4, true).unwrap();
        let text = write_csv(&data);
        let back = parse_csv(&text, data.seed).unwrap();
        assert_eq!(back, data);
    }

    #[test]
    fn invalid_weights_rejected() {
        let err = MixtureSpec::new(vec![fixtures::gridworld5_policy()], vec![0.9]);
        assert!(err.is_err());
    }
}
