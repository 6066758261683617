//! Schnorr identification over a prime-order subgroup of `Z_p^*`, in both
//! the three-move interactive form and the Fiat–Shamir non-interactive form
//! used as a single-packet knock.
//!
//! The transcript hash is any [`KeyedHash`]: the chaos hash or BLAKE2b.
//! A full-width digest `c` is transmitted as is and reduced mod `q` before it
//! enters the exponent.

mod group;

use num_bigint::{BigUint, RandBigInt};
use num_traits::{One, Zero};
use rand::Rng;
use thiserror::Error;

pub use group::{generate_params, is_probable_prime, GroupParams, MILLER_RABIN_ROUNDS};

use crate::hash::KeyedHash;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SchnorrError {
    #[error("invalid group parameters: {0}")]
    InvalidGroup(&'static str),
    #[error("unsupported parameter sizes p_bits={p_bits} q_bits={q_bits}")]
    ParamSizes { p_bits: u64, q_bits: u64 },
    #[error("no suitable primes found; check the randomness source and sizes")]
    ParamSearchExhausted,
    #[error("exponent must lie in [0, q-1]")]
    ExponentRange,
    #[error("challenge bit length must be in 1..={max}, got {got}")]
    ChallengeBits { got: u32, max: u64 },
    #[error("hash digest of {digest_bits} bits is shorter than q ({q_bits} bits)")]
    DigestTooShort { digest_bits: usize, q_bits: u64 },
}

/// Private exponent `a` and public key `A = g^a mod p`.
#[derive(Clone, PartialEq, Eq)]
pub struct KeyPair {
    secret: BigUint,
    public: BigUint,
}

impl std::fmt::Debug for KeyPair {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("KeyPair").field("public", &self.public).finish_non_exhaustive()
    }
}

impl KeyPair {
    /// Builds a key pair from a known exponent; `a` must lie in `[0, q − 1]`.
    pub fn from_secret(params: &GroupParams, a: BigUint) -> Result<Self, SchnorrError> {
        if &a >= params.q() {
            return Err(SchnorrError::ExponentRange);
        }
        let public = params.g().modpow(&a, params.p());
        Ok(KeyPair { secret: a, public })
    }

    pub fn secret(&self) -> &BigUint {
        &self.secret
    }

    pub fn public(&self) -> &BigUint {
        &self.public
    }
}

/// Samples `a` uniformly from `[1, q − 1]`; `a = 0` would give `A = 1`.
pub fn keygen<R: Rng + ?Sized>(params: &GroupParams, rng: &mut R) -> KeyPair {
    let a = params.random_nonzero_exponent(rng);
    KeyPair::from_secret(params, a).expect("exponent below q")
}

/// Prover's ephemeral `v` and commitment `V = g^v mod p`.
#[derive(Clone, PartialEq, Eq)]
pub struct Commitment {
    secret: BigUint,
    public: BigUint,
}

impl std::fmt::Debug for Commitment {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Commitment").field("public", &self.public).finish_non_exhaustive()
    }
}

impl Commitment {
    /// Commitment for a chosen `v`; mainly for deterministic tests.
    pub fn from_secret(params: &GroupParams, v: BigUint) -> Result<Self, SchnorrError> {
        if &v >= params.q() {
            return Err(SchnorrError::ExponentRange);
        }
        let public = params.g().modpow(&v, params.p());
        Ok(Commitment { secret: v, public })
    }

    pub fn secret(&self) -> &BigUint {
        &self.secret
    }

    pub fn public(&self) -> &BigUint {
        &self.public
    }
}

pub fn prover_commit<R: Rng + ?Sized>(params: &GroupParams, rng: &mut R) -> Commitment {
    let v = params.random_nonzero_exponent(rng);
    Commitment::from_secret(params, v).expect("exponent below q")
}

/// Interactive challenge length `t`, `1 ≤ t ≤ bitlength(q)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ChallengeBits(u32);

impl ChallengeBits {
    pub fn new(t: u32, params: &GroupParams) -> Result<Self, SchnorrError> {
        let max = params.q_bits();
        if t == 0 || t as u64 > max {
            return Err(SchnorrError::ChallengeBits { got: t, max });
        }
        Ok(ChallengeBits(t))
    }

    pub fn get(&self) -> u32 {
        self.0
    }
}

/// Uniform challenge in `[0, 2^(t−1)]`, inclusive at both ends.
pub fn verifier_challenge<R: Rng + ?Sized>(t: ChallengeBits, rng: &mut R) -> BigUint {
    let upper_exclusive = (BigUint::one() << (t.0 - 1)) + 1u32;
    rng.gen_biguint_below(&upper_exclusive)
}

/// `r = (v − a·c) mod q`.
pub fn prover_respond(a: &BigUint, v: &BigUint, c: &BigUint, q: &BigUint) -> BigUint {
    let ac = (a * c) % q;
    ((v % q) + q - ac) % q
}

fn public_key_ok(params: &GroupParams, public: &BigUint) -> bool {
    let two = BigUint::from(2u32);
    *public >= two && public < params.p() && public.modpow(params.q(), params.p()).is_one()
}

fn recompute_commitment(params: &GroupParams, public: &BigUint, c: &BigUint, r: &BigUint) -> BigUint {
    let p = params.p();
    let gr = params.g().modpow(r, p);
    let ac = public.modpow(&(c % params.q()), p);
    (gr * ac) % p
}

/// Verifier's final check: `A ∈ [2, p−1]`, `A^q ≡ 1`, and `V ≡ g^r·A^c (mod p)`.
pub fn verify_interactive(
    params: &GroupParams,
    public: &BigUint,
    commitment: &BigUint,
    c: &BigUint,
    r: &BigUint,
) -> bool {
    if !public_key_ok(params, public) {
        return false;
    }
    recompute_commitment(params, public, c, r) == commitment % params.p()
}

/// Non-interactive proof `(UserID, OtherInfo, c, r)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NizkpProof {
    pub user_id: Vec<u8>,
    pub other_info: Vec<u8>,
    pub c: BigUint,
    pub r: BigUint,
}

fn push_field(out: &mut Vec<u8>, field: &[u8]) {
    out.extend_from_slice(&(field.len() as u32).to_be_bytes());
    out.extend_from_slice(field);
}

fn magnitude_bytes(v: &BigUint) -> Vec<u8> {
    if v.is_zero() {
        Vec::new()
    } else {
        v.to_bytes_be()
    }
}

/// Hash input for `g ‖ V ‖ A ‖ UserID ‖ OtherInfo`: each field is preceded
/// by its 4-byte big-endian length; integers are big-endian magnitudes.
pub fn transcript_bytes(
    g: &BigUint,
    commitment: &BigUint,
    public: &BigUint,
    user_id: &[u8],
    other_info: &[u8],
) -> Vec<u8> {
    let mut out = Vec::new();
    push_field(&mut out, &magnitude_bytes(g));
    push_field(&mut out, &magnitude_bytes(commitment));
    push_field(&mut out, &magnitude_bytes(public));
    push_field(&mut out, user_id);
    push_field(&mut out, other_info);
    out
}

fn check_digest_width(params: &GroupParams, hash: &dyn KeyedHash) -> Result<(), SchnorrError> {
    let digest_bits = hash.digest_bits();
    if (digest_bits as u64) < params.q_bits() {
        return Err(SchnorrError::DigestTooShort { digest_bits, q_bits: params.q_bits() });
    }
    Ok(())
}

/// Proves knowledge of `keypair`'s secret with a fresh random commitment.
pub fn nizkp_prove<R: Rng + ?Sized>(
    params: &GroupParams,
    keypair: &KeyPair,
    user_id: &[u8],
    other_info: &[u8],
    hash: &dyn KeyedHash,
    rng: &mut R,
) -> Result<NizkpProof, SchnorrError> {
    let commitment = prover_commit(params, rng);
    nizkp_prove_with(params, keypair, &commitment, user_id, other_info, hash)
}

/// [`nizkp_prove`] with a caller-supplied commitment.
pub fn nizkp_prove_with(
    params: &GroupParams,
    keypair: &KeyPair,
    commitment: &Commitment,
    user_id: &[u8],
    other_info: &[u8],
    hash: &dyn KeyedHash,
) -> Result<NizkpProof, SchnorrError> {
    check_digest_width(params, hash)?;
    let msg = transcript_bytes(params.g(), commitment.public(), keypair.public(), user_id, other_info);
    let c = hash.hash(&msg).to_biguint();
    let c_reduced = &c % params.q();
    let r = prover_respond(keypair.secret(), commitment.secret(), &c_reduced, params.q());
    Ok(NizkpProof { user_id: user_id.to_vec(), other_info: other_info.to_vec(), c, r })
}

/// Recomputes `V' = g^r·A^(c mod q)` and accepts iff `A` is a valid public
/// key and `H(g ‖ V' ‖ A ‖ UserID ‖ OtherInfo) = c`.
pub fn nizkp_verify(
    params: &GroupParams,
    public: &BigUint,
    proof: &NizkpProof,
    hash: &dyn KeyedHash,
) -> bool {
    if check_digest_width(params, hash).is_err()
        || !public_key_ok(params, public)
        || &proof.r >= params.q()
        || proof.c.bits() > hash.digest_bits() as u64
    {
        return false;
    }
    let v = recompute_commitment(params, public, &proof.c, &proof.r);
    let msg = transcript_bytes(params.g(), &v, public, &proof.user_id, &proof.other_info);
    hash.hash(&msg).to_biguint() == proof.c
}

/// Checks `(c, r)` against several candidate `OtherInfo` values with a
/// single recomputation of `V'`. Returns the index of the first candidate
/// whose transcript hashes to `c`.
pub fn nizkp_verify_any(
    params: &GroupParams,
    public: &BigUint,
    user_id: &[u8],
    c: &BigUint,
    r: &BigUint,
    candidates: &[&[u8]],
    hash: &dyn KeyedHash,
) -> Option<usize> {
    if check_digest_width(params, hash).is_err()
        || !public_key_ok(params, public)
        || r >= params.q()
        || c.bits() > hash.digest_bits() as u64
    {
        return None;
    }
    let v = recompute_commitment(params, public, c, r);
    candidates.iter().position(|info| {
        let msg = transcript_bytes(params.g(), &v, public, user_id, info);
        &hash.hash(&msg).to_biguint() == c
    })
}

/// Fixed knock layout: `c` as `digest_bits / 4` hex characters followed by
/// `r` as `ceil(bitlength(q) / 4)` hex characters, lowercase, zero-padded.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct KnockLayout {
    pub c_chars: usize,
    pub r_chars: usize,
}

impl KnockLayout {
    pub fn new(params: &GroupParams, digest_bits: usize) -> Self {
        KnockLayout { c_chars: digest_bits.div_ceil(4), r_chars: (params.q_bits() as usize).div_ceil(4) }
    }

    pub fn len(&self) -> usize {
        self.c_chars + self.r_chars
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn encode(&self, c: &BigUint, r: &BigUint) -> Vec<u8> {
        let c_hex = format!("{:0>w$}", c.to_str_radix(16), w = self.c_chars);
        let r_hex = format!("{:0>w$}", r.to_str_radix(16), w = self.r_chars);
        debug_assert_eq!(c_hex.len() + r_hex.len(), self.len());
        format!("{c_hex}{r_hex}").into_bytes()
    }

    /// Splits a payload back into `(c, r)`; `None` unless it is exactly
    /// `len()` lowercase hex characters.
    pub fn decode(&self, payload: &[u8]) -> Option<(BigUint, BigUint)> {
        if payload.len() != self.len() || !payload.iter().all(|b| matches!(b, b'0'..=b'9' | b'a'..=b'f')) {
            return None;
        }
        let (c, r) = payload.split_at(self.c_chars);
        Some((BigUint::parse_bytes(c, 16)?, BigUint::parse_bytes(r, 16)?))
    }
}
