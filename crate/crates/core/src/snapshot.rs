//! Plain-number encodings of simulator state, used by checkpoints.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Result, SimError};

/// Named flat arrays of 64-bit reals.
pub type NamedArrays = Vec<(String, Vec<f64>)>;

/// Number of reals produced by [`rng_to_f64s`].
pub const RNG_WORDS: usize = 14;

/// Encodes a ChaCha stream position exactly, as 32-bit chunks stored in reals.
pub fn rng_to_f64s(rng: &ChaCha8Rng) -> Vec<f64> {
    let seed = rng.get_seed();
    let mut out = Vec::with_capacity(RNG_WORDS);
    for chunk in seed.chunks_exact(4) {
        out.push(u32::from_le_bytes(chunk.try_into().unwrap()) as f64);
    }
    let stream = rng.get_stream();
    out.push((stream & 0xffff_ffff) as f64);
    out.push((stream >> 32) as f64);
    let pos = rng.get_word_pos();
    for k in 0..4 {
        out.push(((pos >> (32 * k)) & 0xffff_ffff) as f64);
    }
    out
}

pub fn rng_from_f64s(values: &[f64]) -> Result<ChaCha8Rng> {
    if values.len() != RNG_WORDS || values.iter().any(|v| v.fract() != 0.0 || *v < 0.0 || *v > u32::MAX as f64) {
        return Err(SimError::InvalidState("malformed rng snapshot".into()));
    }
    let words: Vec<u32> = values.iter().map(|&v| v as u32).collect();
    let mut seed = [0u8; 32];
    for (i, w) in words[..8].iter().enumerate() {
        seed[4 * i..4 * i + 4].copy_from_slice(&w.to_le_bytes());
    }
    let mut rng = ChaCha8Rng::from_seed(seed);
    rng.set_stream(words[8] as u64 | ((words[9] as u64) << 32));
    let mut pos: u128 = 0;
    for k in 0..4 {
        pos |= (words[10 + k] as u128) << (32 * k);
    }
    rng.set_word_pos(pos);
    Ok(rng)
}

/// Looks up a named array, checking its length when `len` is given.
pub fn take<'a>(arrays: &'a [(String, Vec<f64>)], name: &str, len: Option<usize>) -> Result<&'a [f64]> {
    let found = arrays
        .iter()
        .find(|(n, _)| n == name)
        .ok_or_else(|| SimError::InvalidState(format!("snapshot lacks '{name}'")))?;
    if let Some(expected) = len {
        if found.1.len() != expected {
            return Err(SimError::InvalidState(format!(
                "snapshot array '{name}' has {} values, expected {expected}",
                found.1.len()
            )));
        }
    }
    Ok(&found.1)
}
