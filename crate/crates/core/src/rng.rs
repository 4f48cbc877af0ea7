//! Deterministic seed derivation.
//!
//! All randomness in a simulation flows from one master seed through named
//! sub-seeds, so each phase (dataset generation, strategy application,
//! coalition sampling, training) is independently reproducible.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Named randomness domains, mixed into derived seeds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SeedDomain {
    Dataset,
    Partition,
    Strategy,
    Sampling,
    Training,
    Init,
    Experiment,
}

impl SeedDomain {
    fn tag(self) -> u64 {
        match self {
            SeedDomain::Dataset => 0x01,
            SeedDomain::Partition => 0x02,
            SeedDomain::Strategy => 0x03,
            SeedDomain::Sampling => 0x04,
            SeedDomain::Training => 0x05,
            SeedDomain::Init => 0x06,
            SeedDomain::Experiment => 0x07,
        }
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Derive a sub-seed from a master seed, a domain, and an index.
///
/// Distinct (domain, index) pairs map to statistically independent streams.
pub fn derive_seed(master: u64, domain: SeedDomain, index: u64) -> u64 {
    splitmix64(splitmix64(master ^ domain.tag().wrapping_mul(0xA076_1D64_78BD_642F)) ^ index)
}

/// Seeded RNG used everywhere randomness is needed; fixed algorithm so
/// results do not depend on `rand`'s default generator choice.
pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derived_seeds_differ_across_domains_and_indices() {
        let a = derive_seed(7, SeedDomain::Dataset, 0);
        let b = derive_seed(7, SeedDomain::Training, 0);
        let c = derive_seed(7, SeedDomain::Dataset, 1);
        assert_ne!(a, b);
        assert_ne!(a, c);
        assert_eq!(a, derive_seed(7, SeedDomain::Dataset, 0));
    }
}
