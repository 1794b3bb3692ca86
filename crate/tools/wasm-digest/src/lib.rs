//! Exposes the decision-path digest to a wasm32 host so it can be compared
//! with the native value.

/// Returns the digest, or 0 when the simulated volume errors out.
#[no_mangle]
pub extern "C" fn decision_path_digest(seed_lo: u32, seed_hi: u32, states: u32) -> u32 {
    let seed = (seed_hi as u64) << 32 | seed_lo as u64;
    kernml_core::digest::decision_path_digest(seed, states).unwrap_or(0)
}
