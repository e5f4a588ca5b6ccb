//! Seed mixing and deterministic hash noise.

use xxhash_rust::xxh3::xxh3_64;

/// Mixes integer parts into one 64-bit seed. Stable across processes.
pub fn mix_seed(parts: &[u64]) -> u64 {
    let mut buf = Vec::with_capacity(parts.len() * 8);
    for p in parts {
        buf.extend_from_slice(&p.to_le_bytes());
    }
    xxh3_64(&buf)
}

pub fn str_seed(s: &str) -> u64 {
    xxh3_64(s.as_bytes())
}

/// Maps a hash to `[0, 1)` using its top 53 bits.
pub fn unit_interval(h: u64) -> f64 {
    (h >> 11) as f64 / (1u64 << 53) as f64
}
