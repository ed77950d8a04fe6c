use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

/// Identifier written next to every output so streams can be regenerated
/// elsewhere.
pub const RNG_ALGORITHM: &str =
    "chacha20(rand_chacha-0.9;stream0)|key=le64(seed)+le64(fnv1a64(label))+le64(n)+le64(rep)|normal=rand_distr-0.5-ziggurat";

/// 64-bit FNV-1a.
pub fn fnv1a64(s: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in s.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// Independent stream for one replication, a pure function of its key.
pub fn stream_rng(seed: u64, label: &str, n: usize, rep: usize) -> ChaCha20Rng {
    let mut key = [0u8; 32];
    key[0..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&fnv1a64(label).to_le_bytes());
    key[16..24].copy_from_slice(&(n as u64).to_le_bytes());
    key[24..32].copy_from_slice(&(rep as u64).to_le_bytes());
    ChaCha20Rng::from_seed(key)
}
