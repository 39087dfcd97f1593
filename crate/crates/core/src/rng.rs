//! Named, index-addressable random streams derived from one master seed.
//!
//! Every consumer asks for `(stream name, index)` so that scenario `j` or
//! draw `k` sees the same numbers no matter how work is split across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type StreamRng = ChaCha8Rng;

pub const STREAM_NOISE: &str = "noise";
pub const STREAM_BERNOULLI: &str = "bernoulli";
pub const STREAM_FORCES: &str = "forces";
pub const STREAM_THETA0: &str = "theta0";
pub const STREAM_RANDOM_DESIGN: &str = "random-design";
pub const STREAM_MC_MASK: &str = "mc-mask";

pub fn derive_seed(master: u64, stream: &str, index: u64) -> u64 {
    let mut h = Sha256::new();
    h.update(master.to_le_bytes());
    h.update((stream.len() as u64).to_le_bytes());
    h.update(stream.as_bytes());
    h.update(index.to_le_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("sha256 digest has 32 bytes"))
}

pub fn stream_rng(master: u64, stream: &str, index: u64) -> StreamRng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, stream, index))
}

/// Seed keyed by vector content, so identical masks map to identical draws.
pub fn content_seed(master: u64, stream: &str, values: &[f64]) -> u64 {
    let mut h = Sha256::new();
    h.update(master.to_le_bytes());
    h.update(stream.as_bytes());
    for v in values {
        h.update(v.to_bits().to_le_bytes());
    }
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("sha256 digest has 32 bytes"))
}

/// Hex SHA-256 of arbitrary bytes, used as the config hash in reports.
pub fn config_hash(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}
