//! Keyed hash built on the absolute-value chaotic map `x ← 1 − |α·x|`.
//!
//! The key is the initial map state. Each message byte `w` selects the
//! coefficient `α = 0.0015·w + 1.8` and drives the map for a fixed number of
//! iterations; the final state is mapped affinely onto `[0, 2^bits)`.
//!
//! All arithmetic is done in [`ChaosReal`] fixed point (256 fractional bits,
//! truncation toward zero), so digests are reproducible everywhere.
//!
//! Bytes `w ≥ 134` give `α > 2`, where an unfolded map escapes `[−1, 1]` and
//! diverges. A step whose result falls below `−1` is therefore reflected
//! about `−1` (`y ← −2 − y`). For printable ASCII input, `α < 2` and the fold
//! never triggers.

mod fixed;

use std::fmt;

use num_bigint::BigUint;
use rand::Rng;
use thiserror::Error;

pub use fixed::{ChaosReal, FRAC_BITS};

use crate::hash::count_hash_call;

/// Map iterations per message byte used when none is configured.
pub const DEFAULT_ITERATIONS: u32 = 64;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ChaosError {
    #[error("chaos key must satisfy 0 < |key| < 1")]
    InvalidKey,
    #[error("iterations must be at least 1")]
    ZeroIterations,
    #[error("digest width must be 128 or 256 bits, got {0}")]
    DigestBits(u32),
    #[error("value outside the fixed-point range")]
    OutOfRange,
    #[error("cannot parse {0:?} as a fixed-point real")]
    Parse(String),
}

/// 0.0015 truncated to 256 fractional bits.
fn alpha_slope() -> ChaosReal {
    // floor(0.0015 · 2^256), little-endian limbs.
    ChaosReal::from_scaled(
        false,
        &BigUint::from_slice(&[
            0xd2f1a9fb, 0x5810624d, 0x76c8b439, 0x2f1a9fbe, 0x810624dd, 0x6c8b4395, 0xf1a9fbe7,
            0x00624dd2,
        ]),
    )
    .expect("constant in range")
}

/// 1.8 truncated to 256 fractional bits.
fn alpha_base() -> ChaosReal {
    let mut limbs = [0xccccccccu32; 8].to_vec();
    limbs.push(1);
    ChaosReal::from_scaled(false, &BigUint::from_slice(&limbs)).expect("constant in range")
}

/// Secret initial state of the map. Always `0 < |key| < 1`.
#[derive(Clone, Copy, PartialEq, Eq)]
pub struct ChaosKey(ChaosReal);

impl ChaosKey {
    pub fn new(value: ChaosReal) -> Result<Self, ChaosError> {
        if value.is_zero() || value.cmp_abs(&ChaosReal::ONE).is_ge() {
            return Err(ChaosError::InvalidKey);
        }
        Ok(ChaosKey(value))
    }

    pub fn parse(s: &str) -> Result<Self, ChaosError> {
        Self::new(ChaosReal::parse(s)?)
    }

    /// Uniform random key: random sign and 256 random fraction bits.
    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        loop {
            let frac: [u8; 32] = rng.gen();
            let v = ChaosReal::from_scaled(rng.gen(), &BigUint::from_bytes_be(&frac))
                .expect("fraction below one");
            if let Ok(k) = ChaosKey::new(v) {
                return k;
            }
        }
    }

    pub fn value(&self) -> ChaosReal {
        self.0
    }

    /// Exact external form, see [`ChaosReal::to_hex_string`].
    pub fn to_hex_string(&self) -> String {
        self.0.to_hex_string()
    }
}

impl fmt::Debug for ChaosKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("ChaosKey(..)")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ChaosHashParams {
    iterations: u32,
    digest_bits: u32,
}

impl ChaosHashParams {
    pub fn new(iterations: u32, digest_bits: u32) -> Result<Self, ChaosError> {
        if iterations == 0 {
            return Err(ChaosError::ZeroIterations);
        }
        if digest_bits != 128 && digest_bits != 256 {
            return Err(ChaosError::DigestBits(digest_bits));
        }
        Ok(ChaosHashParams { iterations, digest_bits })
    }

    pub fn iterations(&self) -> u32 {
        self.iterations
    }

    pub fn digest_bits(&self) -> u32 {
        self.digest_bits
    }
}

impl Default for ChaosHashParams {
    fn default() -> Self {
        ChaosHashParams { iterations: DEFAULT_ITERATIONS, digest_bits: 256 }
    }
}

/// Appends ASCII `'0'` until the length is a multiple of 8.
pub fn pad_message(message: &[u8]) -> Vec<u8> {
    let mut out = message.to_vec();
    let rem = out.len() % 8;
    if rem != 0 {
        out.resize(out.len() + 8 - rem, b'0');
    }
    out
}

/// `0.0015·w + 1.8` in fixed point.
pub fn alpha_for_byte(w: u8) -> ChaosReal {
    alpha_slope().mul_int(w as u64).add(alpha_base())
}

/// One map step: `1 − |alpha·x|`, reflected about −1 if it falls below −1.
pub fn map_step(x: ChaosReal, alpha: ChaosReal) -> ChaosReal {
    let y = ChaosReal::ONE.sub(alpha.mul(x).abs());
    if y < ChaosReal::from_int(-1) {
        ChaosReal::from_int(-2).sub(y)
    } else {
        y
    }
}

fn absorb(message: &[u8], key: &ChaosKey, params: ChaosHashParams) -> ChaosReal {
    let slope = alpha_slope();
    let base = alpha_base();
    let mut x = key.value();
    for &w in message {
        let alpha = slope.mul_int(w as u64).add(base);
        for _ in 0..params.iterations {
            x = map_step(x, alpha);
        }
    }
    x
}

/// Hashes `message` without the padding step. Bytes are absorbed as given.
pub fn chaos_hash_unpadded(message: &[u8], key: &ChaosKey, params: ChaosHashParams) -> BigUint {
    count_hash_call();
    absorb(message, key, params).normalize(params.digest_bits)
}

/// The keyed chaos hash: pad, absorb every byte, normalize the final state.
/// The result lies in `[0, 2^digest_bits)`.
pub fn chaos_hash(message: &[u8], key: &ChaosKey, params: ChaosHashParams) -> BigUint {
    chaos_hash_unpadded(&pad_message(message), key, params)
}

/// Lowercase hex of a chaos digest, `digest_bits / 4` characters.
pub fn digest_hex(digest: &BigUint, params: ChaosHashParams) -> String {
    format!("{:0>width$}", digest.to_str_radix(16), width = params.digest_bits as usize / 4)
}
