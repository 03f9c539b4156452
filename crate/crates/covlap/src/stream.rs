//! Seed derivation for independent RNG streams.
//!
//! Every randomized stage (truth generation, data draws, chain proposals,
//! train/test splits) gets its own ChaCha20 stream. The visible convention is
//! `base XOR r` for replication `r` (1-based); the per-stage seed then mixes
//! that value with a stage tag through the splitmix64 finalizer so streams
//! with nearby seeds do not overlap.

pub(crate) const TAG_TRUTH: u64 = 0x7472757468u64; // "truth"
pub(crate) const TAG_DATA: u64 = 0x64617461u64; // "data"
pub(crate) const TAG_CHAIN: u64 = 0x636861696eu64; // "chain"
pub(crate) const TAG_SPLIT: u64 = 0x73706c6974u64; // "split"

/// splitmix64 finalizer; bijective on u64, breaks up low-entropy inputs.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Seed for stage `tag` of replication `rep` (use `rep = 0` for run-global
/// stages such as truth generation).
pub(crate) fn stage_seed(base: u64, rep: u64, tag: u64) -> u64 {
    mix((base ^ rep) ^ tag)
}
