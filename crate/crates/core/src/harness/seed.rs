//! Named random sub-streams derived from one master seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// 64-bit FNV-1a, used only to turn stream labels into stream ids.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

/// Generator for stream `label` of trial `trial`. Streams with different
/// labels never share output, so adding draws to one leaves the others
/// untouched.
pub fn substream(master: u64, label: &str, trial: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(fnv1a(format!("{label}/{trial}").as_bytes()));
    rng
}
