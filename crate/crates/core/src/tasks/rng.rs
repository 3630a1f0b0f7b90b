use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Random stream used throughout the crate.
pub type Rng = ChaCha8Rng;

/// Independent, reproducible stream identified by a master seed, a purpose
/// label and an index.
///
/// ChaCha is counter based: the master seed fixes the key and the
/// `(label, index)` pair selects the 64-bit stream, so streams never overlap
/// and do not depend on how many values other streams consumed.
pub fn stream(seed: u64, label: &str, index: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(fnv1a(label).wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ index);
    rng
}

fn fnv1a(s: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in s.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}
