//! Hashing and artifact headers.

use serde_json::{json, Value};
use sha2::{Digest, Sha256};

pub const FORMAT_VERSION: &str = "1";
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Provenance header shared by every JSON artifact.
pub fn artifact_header(seed: u64, inputs: &[&[u8]]) -> Value {
    let mut h = Sha256::new();
    for chunk in inputs {
        h.update((chunk.len() as u64).to_le_bytes());
        h.update(chunk);
    }
    let hash: String = h.finalize().iter().map(|b| format!("{b:02x}")).collect();
    json!({
        "format_version": FORMAT_VERSION,
        "tool_version": TOOL_VERSION,
        "seed": seed,
        "inputs_hash": hash,
    })
}

/// splitmix64 finalizer, used to derive independent substream seeds.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn substream_seed(seed: u64, index: u64) -> u64 {
    mix64(seed ^ mix64(index.wrapping_add(0x632b_e59b_d9b4_e019)))
}
