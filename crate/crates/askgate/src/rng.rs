//! Seed derivation and sampling helpers.
//!
//! Every random stream in the crate is a `ChaCha8Rng` seeded through
//! [`derive_seed`], so distinct roles (weak action sampling, expert action
//! sampling, gate draws, meta-policy draws) never share a stream. Keeping the
//! weak stream independent of whether the expert was consulted is what makes
//! a never-asking gated episode bit-identical to an ungated weak rollout.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream salt for the weak agent's action sampling within an episode.
pub const ROLE_WEAK: u64 = 0x57454b41;
/// Stream salt for the expert agent's action sampling within an episode.
pub const ROLE_EXPERT: u64 = 0x45585052;
/// Stream salt for gate randomness (random baseline, skyline meta draws).
pub const ROLE_GATE: u64 = 0x47415445;

/// SplitMix64 finalizer; a cheap, well-mixed 64-bit permutation.
pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e3779b97f4a7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d049bb133111eb);
    x ^ (x >> 31)
}

/// Derives an independent stream seed from a base seed and a salt.
pub fn derive_seed(base: u64, salt: u64) -> u64 {
    splitmix64(base ^ splitmix64(salt))
}

/// ChaCha8 stream for `(base, salt)`.
pub fn stream(base: u64, salt: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(base, salt))
}

/// Samples an index from a categorical distribution given its probabilities.
///
/// Consumes exactly one `f64` draw from the rng. Probabilities are assumed
/// to sum to 1 within rounding; any residual mass lands on the last index.
pub fn sample_categorical<R: Rng>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derive_seed_separates_roles() {
        let a = derive_seed(7, ROLE_WEAK);
        let b = derive_seed(7, ROLE_EXPERT);
        let c = derive_seed(7, ROLE_GATE);
        assert_ne!(a, b);
        assert_ne!(b, c);
        assert_ne!(a, c);
    }

    #[test]
    fn categorical_covers_all_indices() {
        let mut rng = stream(0, 1);
        let probs = [0.25, 0.25, 0.25, 0.25];
        let mut seen = [false; 4];
        for _ in 0..200 {
            seen[sample_categorical(&probs, &mut rng)] = true;
        }
        assert!(seen.iter().all(|&s| s));
    }

    #[test]
    fn categorical_degenerate_mass() {
        let mut rng = stream(0, 2);
        for _ in 0..50 {
            assert_eq!(sample_categorical(&[0.0, 1.0, 0.0], &mut rng), 1);
        }
    }
}
