//! Deterministic seed derivation.
//!
//! Every random decision in an experiment is driven by a seed derived from
//! the master seed, a purpose tag, and any identifying indices (client id,
//! round). Derivation is a counter-free SplitMix64-finalizer chain, so the
//! same configuration always produces the same experiment, whether it runs
//! in-process or across real sockets.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const GOLDEN_GAMMA: u64 = 0x9e37_79b9_7f4a_7c15;

/// SplitMix64 finalizer: a fixed 64-bit bijective mixing function.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// What a derived seed is for. Each purpose owns a distinct tag, so streams
/// never collide across purposes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SeedPurpose {
    /// Synthetic dataset generation.
    DataGen,
    /// Global model weight initialization.
    Init,
    /// Train/test split of the full dataset.
    Split,
    /// Client partitioning of the training split.
    Partition,
    /// Label-flipping attack on the victim shard.
    Attack,
    /// Per-client local train/eval holdout split.
    ClientEval,
    /// Per-client, per-round local training (shuffling + dropout).
    Training,
    /// Per-client, per-round differential-privacy noise.
    DpNoise,
}

impl SeedPurpose {
    fn tag(self) -> u64 {
        match self {
            SeedPurpose::DataGen => 0x01,
            SeedPurpose::Init => 0x02,
            SeedPurpose::Split => 0x03,
            SeedPurpose::Partition => 0x04,
            SeedPurpose::Attack => 0x05,
            SeedPurpose::ClientEval => 0x06,
            SeedPurpose::Training => 0x07,
            SeedPurpose::DpNoise => 0x08,
        }
    }
}

/// hash64(master_seed, purpose_tag, ids...) via the SplitMix64 finalizer.
pub fn derive_seed(master_seed: u64, purpose: SeedPurpose, ids: &[u64]) -> u64 {
    let mut h = mix64(master_seed.wrapping_add(GOLDEN_GAMMA));
    h = mix64(h ^ purpose.tag());
    for &id in ids {
        h = mix64(h ^ id.wrapping_add(GOLDEN_GAMMA));
    }
    h
}

/// The per-purpose seed map for one experiment, queried lazily.
#[derive(Clone, Copy, Debug)]
pub struct SeedDomain {
    master: u64,
}

impl SeedDomain {
    pub fn new(master_seed: u64) -> Self {
        Self {
            master: master_seed,
        }
    }

    pub fn master(&self) -> u64 {
        self.master
    }

    pub fn data_gen(&self) -> u64 {
        derive_seed(self.master, SeedPurpose::DataGen, &[])
    }

    pub fn init(&self) -> u64 {
        derive_seed(self.master, SeedPurpose::Init, &[])
    }

    pub fn split(&self) -> u64 {
        derive_seed(self.master, SeedPurpose::Split, &[])
    }

    pub fn partition(&self) -> u64 {
        derive_seed(self.master, SeedPurpose::Partition, &[])
    }

    pub fn attack(&self) -> u64 {
        derive_seed(self.master, SeedPurpose::Attack, &[])
    }

    pub fn client_eval(&self, client_id: u32) -> u64 {
        derive_seed(self.master, SeedPurpose::ClientEval, &[client_id as u64])
    }

    pub fn training(&self, client_id: u32, round: u32) -> u64 {
        derive_seed(
            self.master,
            SeedPurpose::Training,
            &[client_id as u64, round as u64],
        )
    }

    pub fn dp_noise(&self, client_id: u32, round: u32) -> u64 {
        derive_seed(
            self.master,
            SeedPurpose::DpNoise,
            &[client_id as u64, round as u64],
        )
    }
}

/// Deterministic ChaCha8 stream for a derived seed.
pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_master_same_map() {
        let a = SeedDomain::new(42);
        let b = SeedDomain::new(42);
        assert_eq!(a.init(), b.init());
        assert_eq!(a.split(), b.split());
        assert_eq!(a.training(3, 7), b.training(3, 7));
    }

    #[test]
    fn purposes_diverge() {
        let d = SeedDomain::new(42);
        let seeds = [
            d.data_gen(),
            d.init(),
            d.split(),
            d.partition(),
            d.attack(),
            d.client_eval(0),
            d.training(0, 0),
            d.dp_noise(0, 0),
        ];
        for i in 0..seeds.len() {
            for j in (i + 1)..seeds.len() {
                assert_ne!(seeds[i], seeds[j], "purpose seeds {i} and {j} collide");
            }
        }
    }

    #[test]
    fn client_and_round_ids_diverge() {
        let d = SeedDomain::new(1);
        assert_ne!(d.training(0, 1), d.training(1, 1));
        assert_ne!(d.training(0, 1), d.training(0, 2));
        assert_ne!(d.client_eval(0), d.client_eval(1));
    }

    #[test]
    fn masters_diverge() {
        assert_ne!(SeedDomain::new(1).init(), SeedDomain::new(2).init());
    }

    #[test]
    fn ids_are_order_sensitive() {
        assert_ne!(
            derive_seed(9, SeedPurpose::Training, &[1, 2]),
            derive_seed(9, SeedPurpose::Training, &[2, 1]),
        );
    }

    #[test]
    fn derivation_matches_hand_evaluated_mixer_chain() {
        // Re-evaluate the documented chain step by step for two purposes
        // and a tagged training stream.
        let master = 42u64;
        let base = mix64(master.wrapping_add(GOLDEN_GAMMA));
        assert_eq!(
            derive_seed(master, SeedPurpose::Init, &[]),
            mix64(base ^ 0x02)
        );
        assert_eq!(
            derive_seed(master, SeedPurpose::Split, &[]),
            mix64(base ^ 0x03)
        );
        assert_ne!(mix64(base ^ 0x02), mix64(base ^ 0x03));

        let expected = mix64(
            mix64(mix64(base ^ 0x07) ^ 3u64.wrapping_add(GOLDEN_GAMMA))
                ^ 9u64.wrapping_add(GOLDEN_GAMMA),
        );
        assert_eq!(SeedDomain::new(master).training(3, 9), expected);
    }
}
