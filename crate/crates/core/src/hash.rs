//! Digests and the keyed-hash interface shared by the beacon, the Schnorr
//! transcript hash and the knock schemes.

use std::cell::Cell;
use std::fmt;

use num_bigint::BigUint;
use thiserror::Error;

use crate::chaoshash::{chaos_hash, ChaosHashParams, ChaosKey};

/// Largest BLAKE2b key and output size, in bytes.
pub const BLAKE2B_MAX_BYTES: usize = 64;

thread_local! {
    static HASH_CALLS: Cell<u64> = const { Cell::new(0) };
}

/// Number of hash evaluations performed so far on the calling thread.
///
/// Used to check that packet matching does no hashing.
pub fn thread_hash_calls() -> u64 {
    HASH_CALLS.with(|c| c.get())
}

pub(crate) fn count_hash_call() {
    HASH_CALLS.with(|c| c.set(c.get() + 1));
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum HashError {
    #[error("BLAKE2b key must be at most {BLAKE2B_MAX_BYTES} bytes, got {0}")]
    KeyLength(usize),
    #[error("BLAKE2b output must be 1..={BLAKE2B_MAX_BYTES} bytes, got {0}")]
    OutputLength(usize),
}

/// Fixed-width big-endian digest.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Digest {
    bytes: Vec<u8>,
}

impl Digest {
    pub fn from_bytes(bytes: Vec<u8>) -> Self {
        Digest { bytes }
    }

    /// Renders `value` big-endian, left-padded to `bits / 8` bytes.
    ///
    /// Panics if `value` does not fit.
    pub fn from_biguint(value: &BigUint, bits: usize) -> Self {
        let width = bits / 8;
        let raw = value.to_bytes_be();
        let raw = if raw == [0] { Vec::new() } else { raw };
        assert!(raw.len() <= width, "digest value exceeds {bits} bits");
        let mut bytes = vec![0u8; width - raw.len()];
        bytes.extend_from_slice(&raw);
        Digest { bytes }
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.bytes
    }

    pub fn bits(&self) -> usize {
        self.bytes.len() * 8
    }

    pub fn to_biguint(&self) -> BigUint {
        BigUint::from_bytes_be(&self.bytes)
    }

    /// Lowercase hex, exactly `bits / 4` characters.
    pub fn to_hex(&self) -> String {
        hex::encode(&self.bytes)
    }

    pub fn from_hex(s: &str) -> Result<Self, hex::FromHexError> {
        hex::decode(s).map(Digest::from_bytes)
    }
}

impl fmt::Debug for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Digest({})", self.to_hex())
    }
}

impl fmt::Display for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

/// A hash with its key bound in: `H(m, k)` as a function of `m`.
pub trait KeyedHash: Send + Sync {
    fn digest_bits(&self) -> usize;
    fn hash(&self, message: &[u8]) -> Digest;
}

/// Keyed BLAKE2b with a configurable output length. An empty key gives the
/// plain unkeyed hash.
#[derive(Clone)]
pub struct Blake2bKeyed {
    key: Vec<u8>,
    out_len: usize,
}

impl Blake2bKeyed {
    pub fn new(key: &[u8], out_len: usize) -> Result<Self, HashError> {
        if key.len() > BLAKE2B_MAX_BYTES {
            return Err(HashError::KeyLength(key.len()));
        }
        if out_len == 0 || out_len > BLAKE2B_MAX_BYTES {
            return Err(HashError::OutputLength(out_len));
        }
        Ok(Blake2bKeyed { key: key.to_vec(), out_len })
    }

    /// BLAKE2b-512 keyed with `key`.
    pub fn b512(key: &[u8]) -> Result<Self, HashError> {
        Self::new(key, BLAKE2B_MAX_BYTES)
    }
}

impl fmt::Debug for Blake2bKeyed {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Blake2bKeyed")
            .field("key_len", &self.key.len())
            .field("out_len", &self.out_len)
            .finish()
    }
}

impl KeyedHash for Blake2bKeyed {
    fn digest_bits(&self) -> usize {
        self.out_len * 8
    }

    fn hash(&self, message: &[u8]) -> Digest {
        count_hash_call();
        let h = blake2b_simd::Params::new()
            .hash_length(self.out_len)
            .key(&self.key)
            .hash(message);
        Digest::from_bytes(h.as_bytes().to_vec())
    }
}

/// The chaos-map keyed hash behind the [`KeyedHash`] interface.
#[derive(Clone, Debug)]
pub struct ChaosKeyed {
    key: ChaosKey,
    params: ChaosHashParams,
}

impl ChaosKeyed {
    pub fn new(key: ChaosKey, params: ChaosHashParams) -> Self {
        ChaosKeyed { key, params }
    }

    pub fn key(&self) -> &ChaosKey {
        &self.key
    }

    pub fn params(&self) -> ChaosHashParams {
        self.params
    }
}

impl KeyedHash for ChaosKeyed {
    fn digest_bits(&self) -> usize {
        self.params.digest_bits() as usize
    }

    fn hash(&self, message: &[u8]) -> Digest {
        let v = chaos_hash(message, &self.key, self.params);
        Digest::from_biguint(&v, self.digest_bits())
    }
}
