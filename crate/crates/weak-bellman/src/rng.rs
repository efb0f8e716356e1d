//! Deterministic random streams.
//!
//! All randomness in the crate flows through ChaCha8, a counter-based
//! generator. A sample or trial with index `i` under master seed `s` always
//! reads from stream `(s, i)`, independently of how many other samples were
//! drawn and in which order. This is what makes dataset generation and
//! Monte-Carlo trials reproducible and parallelizable at the same time.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Generator for substream `index` of master seed `seed`.
pub fn substream(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Draw an index from a discrete distribution given as a slice of weights
/// that sum to one. Deterministic inverse-CDF sampling.
pub fn sample_discrete(rng: &mut ChaCha8Rng, probs: &[f64]) -> usize {
    use rand::Rng;
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}
