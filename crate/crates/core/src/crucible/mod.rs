//! Crucible knocks: an Argon2i password key, a keyed BLAKE2b-512 beacon,
//! per-command knock strings and a beacon-derived port.
//!
//! ```text
//! key    = Argon2i(password)
//! beacon = BLAKE2b_key(block header | header hash)
//! knock  = BLAKE2b_key(hex(beacon) ‖ command)
//! port   = first nonzero 4-hex-char window of BLAKE2b_key(hex(beacon) ‖ "0")
//! ```

mod profile;

use std::fmt;

use argon2::{Algorithm, Argon2, Version};
use base64::engine::general_purpose::STANDARD_NO_PAD;
use base64::Engine;
use serde::{Deserialize, Serialize};
use subtle::ConstantTimeEq;
use thiserror::Error;

use crate::beacon::{derive_beacon, BeaconValue, BlockInfo};
use crate::hash::{Blake2bKeyed, KeyedHash, BLAKE2B_MAX_BYTES};

pub use profile::{
    generate_chaos_profile, generate_nizkp_profiles, generate_profile, validate_commands, ChaosMaterial,
    NizkpMaterial, Profile, ProfileError, Scheme, SchemeMaterial, TranscriptHash, PROFILE_VERSION,
};

/// Smallest accepted knock key, in bytes.
pub const MIN_KEY_BYTES: usize = 16;
/// Length of a Crucible knock on the wire: hex of a 512-bit digest.
pub const KNOCK_HEX_LEN: usize = 128;
/// Command name reserved for port derivation.
pub const PORT_LABEL: &str = "0";
/// Characters kept from the encoded hash in the legacy key mode.
pub const LEGACY_TAIL_CHARS: usize = 22;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CrucibleError {
    #[error("password must not be empty")]
    EmptyPassword,
    #[error("invalid KDF parameters: {0}")]
    Kdf(String),
    #[error("knock key must be {MIN_KEY_BYTES}..={BLAKE2B_MAX_BYTES} bytes, got {0}")]
    KeyLength(usize),
    #[error("invalid command name {0:?}")]
    CommandName(String),
    #[error("port digest is all zeros")]
    DegenerateDigest,
}

/// How the Argon2i output becomes the knock key.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KeyMode {
    /// The raw KDF output bytes.
    #[default]
    Raw,
    /// The last 22 characters of the unpadded base64 output, as ASCII.
    /// Matches older deployments, which use a 16-byte output.
    LegacyTail,
}

/// Argon2i cost parameters and the fixed salt.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct KdfParams {
    pub rounds: u32,
    pub memory_kib: u32,
    pub parallelism: u32,
    pub salt: Vec<u8>,
    pub output_len: usize,
    pub key_mode: KeyMode,
}

impl Default for KdfParams {
    /// 20 passes, 250000 KiB, 2 lanes, salt `"salted pork"`, 32-byte output.
    fn default() -> Self {
        KdfParams {
            rounds: 20,
            memory_kib: 250_000,
            parallelism: 2,
            salt: b"salted pork".to_vec(),
            output_len: 32,
            key_mode: KeyMode::Raw,
        }
    }
}

impl KdfParams {
    /// Default parameters with the legacy key encoding.
    pub fn legacy() -> Self {
        KdfParams { output_len: 16, key_mode: KeyMode::LegacyTail, ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), CrucibleError> {
        let bad = |m: String| Err(CrucibleError::Kdf(m));
        if self.rounds < 1 {
            return bad("rounds must be at least 1".into());
        }
        if self.parallelism < 1 {
            return bad("parallelism must be at least 1".into());
        }
        if u64::from(self.memory_kib) < 8 * u64::from(self.parallelism) {
            return bad(format!("memory_kib must be at least 8 x parallelism ({})", 8 * self.parallelism));
        }
        if self.salt.len() < 8 {
            return bad(format!("salt must be at least 8 bytes, got {}", self.salt.len()));
        }
        let out_range = match self.key_mode {
            KeyMode::Raw => MIN_KEY_BYTES..=BLAKE2B_MAX_BYTES,
            // 12 bytes is the least that encodes to 22 characters.
            KeyMode::LegacyTail => 12..=1024,
        };
        if !out_range.contains(&self.output_len) {
            return bad(format!("output_len {} outside {:?}", self.output_len, out_range));
        }
        Ok(())
    }

    fn argon2(&self) -> Result<Argon2<'static>, CrucibleError> {
        self.validate()?;
        let params = argon2::Params::new(self.memory_kib, self.rounds, self.parallelism, Some(self.output_len))
            .map_err(|e| CrucibleError::Kdf(e.to_string()))?;
        Ok(Argon2::new(Algorithm::Argon2i, Version::V0x13, params))
    }
}

/// Secret key for the keyed BLAKE2b. Debug output never shows the bytes.
#[derive(Clone, PartialEq, Eq)]
pub struct KnockKey(Vec<u8>);

impl KnockKey {
    pub fn new(bytes: Vec<u8>) -> Result<Self, CrucibleError> {
        if !(MIN_KEY_BYTES..=BLAKE2B_MAX_BYTES).contains(&bytes.len()) {
            return Err(CrucibleError::KeyLength(bytes.len()));
        }
        Ok(KnockKey(bytes))
    }

    pub fn from_hex(s: &str) -> Result<Self, CrucibleError> {
        let bytes = hex::decode(s).map_err(|_| CrucibleError::KeyLength(s.len() / 2))?;
        Self::new(bytes)
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        hex::encode(&self.0)
    }

    fn hasher(&self) -> Blake2bKeyed {
        Blake2bKeyed::b512(&self.0).expect("key length checked on construction")
    }
}

impl fmt::Debug for KnockKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "KnockKey({} bytes)", self.0.len())
    }
}

/// Argon2i of `password` under `kdf`.
pub fn derive_key(password: &str, kdf: &KdfParams) -> Result<KnockKey, CrucibleError> {
    if password.is_empty() {
        return Err(CrucibleError::EmptyPassword);
    }
    let argon = kdf.argon2()?;
    let mut out = vec![0u8; kdf.output_len];
    argon
        .hash_password_into(password.as_bytes(), &kdf.salt, &mut out)
        .map_err(|e| CrucibleError::Kdf(e.to_string()))?;
    match kdf.key_mode {
        KeyMode::Raw => KnockKey::new(out),
        KeyMode::LegacyTail => {
            let encoded = STANDARD_NO_PAD.encode(&out);
            let tail = &encoded[encoded.len() - LEGACY_TAIL_CHARS..];
            KnockKey::new(tail.as_bytes().to_vec())
        }
    }
}

/// Beacon for `block` under the knock key.
pub fn crucible_beacon(key: &KnockKey, block: &BlockInfo) -> BeaconValue {
    derive_beacon(block, &key.hasher())
}

/// Keyed BLAKE2b-512 of `hex(beacon) ‖ command_name`, as 128 hex characters.
pub fn derive_knock(key: &KnockKey, beacon: &BeaconValue, command_name: &str) -> Result<String, CrucibleError> {
    if command_name.is_empty() {
        return Err(CrucibleError::CommandName(command_name.into()));
    }
    Ok(labelled_digest(key, beacon, command_name))
}

fn labelled_digest(key: &KnockKey, beacon: &BeaconValue, label: &str) -> String {
    let mut msg = beacon.hex().into_bytes();
    msg.extend_from_slice(label.as_bytes());
    key.hasher().hash(&msg).to_hex()
}

/// Port from a hex digest: the first 4-character window whose value is
/// nonzero. `None` if every window is zero or the text is not hex.
pub fn port_from_hex_digest(digest_hex: &str) -> Option<u16> {
    digest_hex
        .as_bytes()
        .chunks_exact(4)
        .map(|w| std::str::from_utf8(w).ok().and_then(|s| u16::from_str_radix(s, 16).ok()))
        .find(|v| *v != Some(0))
        .flatten()
}

/// Listening port for `beacon`: the keyed digest of `hex(beacon) ‖ "0"`
/// read through [`port_from_hex_digest`].
pub fn derive_port(key: &KnockKey, beacon: &BeaconValue) -> Result<u16, CrucibleError> {
    port_from_hex_digest(&labelled_digest(key, beacon, PORT_LABEL)).ok_or(CrucibleError::DegenerateDigest)
}

/// One expected knock and its single-use flag.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct KnockEntry {
    pub command_name: String,
    pub command: String,
    pub knock_payload: Vec<u8>,
    pub already_used: bool,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum MatchOutcome {
    Authorized(KnockEntry),
    Replayed { command_name: String },
    NoMatch,
}

/// The knocks accepted under one beacon, precomputed so that matching a
/// packet is a plain comparison.
#[derive(Clone, Debug)]
pub struct KnockTable {
    beacon: BeaconValue,
    port: u16,
    entries: Vec<KnockEntry>,
}

impl KnockTable {
    /// Builds a table from `(name, command, payload)` triples, all flags clear.
    pub fn new<I>(beacon: BeaconValue, port: u16, entries: I) -> Self
    where
        I: IntoIterator<Item = (String, String, Vec<u8>)>,
    {
        let entries = entries
            .into_iter()
            .map(|(command_name, command, knock_payload)| KnockEntry {
                command_name,
                command,
                knock_payload,
                already_used: false,
            })
            .collect();
        KnockTable { beacon, port, entries }
    }

    pub fn beacon(&self) -> &BeaconValue {
        &self.beacon
    }

    pub fn port(&self) -> u16 {
        self.port
    }

    pub fn entries(&self) -> &[KnockEntry] {
        &self.entries
    }

    pub fn entry(&self, command_name: &str) -> Option<&KnockEntry> {
        self.entries.iter().find(|e| e.command_name == command_name)
    }

    /// Wire length shared by every entry, if the table is non-empty.
    pub fn payload_len(&self) -> Option<usize> {
        self.entries.first().map(|e| e.knock_payload.len())
    }

    /// Compares `payload` against every entry in constant time per entry,
    /// without stopping at the first hit, then applies the replay flag.
    pub fn match_payload(&mut self, payload: &[u8]) -> MatchOutcome {
        let mut hit = None;
        for (i, entry) in self.entries.iter().enumerate() {
            let eq: bool = entry.knock_payload.as_slice().ct_eq(payload).into();
            if eq && hit.is_none() {
                hit = Some(i);
            }
        }
        let Some(i) = hit else {
            return MatchOutcome::NoMatch;
        };
        let entry = &mut self.entries[i];
        if entry.already_used {
            return MatchOutcome::Replayed { command_name: entry.command_name.clone() };
        }
        entry.already_used = true;
        MatchOutcome::Authorized(entry.clone())
    }
}

/// Crucible table for `beacon`: one entry per profile command.
pub fn build_knock_table<'a, I>(commands: I, key: &KnockKey, beacon: BeaconValue) -> Result<KnockTable, CrucibleError>
where
    I: IntoIterator<Item = (&'a String, &'a String)>,
{
    let port = derive_port(key, &beacon)?;
    let mut rows = Vec::new();
    for (name, command) in commands {
        let knock = derive_knock(key, &beacon, name)?;
        rows.push((name.clone(), command.clone(), knock.into_bytes()));
    }
    Ok(KnockTable::new(beacon, port, rows))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hash::Digest;
    use blake2::digest::{FixedOutput, Mac};
    use std::collections::BTreeMap;
    use std::time::SystemTime;

    fn cheap_kdf() -> KdfParams {
        KdfParams { rounds: 1, memory_kib: 64, parallelism: 1, ..KdfParams::default() }
    }

    fn key() -> KnockKey {
        KnockKey::new((0u8..32).collect()).unwrap()
    }

    fn beacon(byte: u8) -> BeaconValue {
        BeaconValue {
            digest: Digest::from_bytes(vec![byte; 64]),
            source_height: byte as u64,
            derived_at: SystemTime::now(),
        }
    }

    fn oracle(key: &[u8], msg: &[u8]) -> String {
        let mut mac = blake2::Blake2bMac512::new_from_slice(key).unwrap();
        mac.update(msg);
        hex::encode(mac.finalize_fixed())
    }

    fn commands(names: &[&str]) -> BTreeMap<String, String> {
        names.iter().map(|n| (n.to_string(), format!("echo {n}"))).collect()
    }

    #[test]
    fn default_kdf_parameters() {
        let d = KdfParams::default();
        assert_eq!((d.rounds, d.memory_kib, d.parallelism), (20, 250_000, 2));
        assert_eq!(d.salt, b"salted pork");
        assert_eq!(d.output_len, 32);
        d.validate().unwrap();
    }

    #[test]
    fn kdf_rejects_bad_params() {
        let base = cheap_kdf();
        for bad in [
            KdfParams { rounds: 0, ..base.clone() },
            KdfParams { parallelism: 0, ..base.clone() },
            KdfParams { memory_kib: 15, parallelism: 2, ..base.clone() },
            KdfParams { salt: b"short".to_vec(), ..base.clone() },
            KdfParams { output_len: 8, ..base.clone() },
            KdfParams { output_len: 65, ..base.clone() },
        ] {
            assert!(matches!(derive_key("pw", &bad), Err(CrucibleError::Kdf(_))), "{bad:?}");
        }
        assert_eq!(derive_key("", &base).unwrap_err(), CrucibleError::EmptyPassword);
    }

    #[test]
    fn derive_key_matches_direct_argon2i() {
        let kdf = cheap_kdf();
        let k1 = derive_key("hunter2", &kdf).unwrap();
        assert_eq!(k1, derive_key("hunter2", &kdf).unwrap());
        assert_ne!(k1, derive_key("hunter3", &kdf).unwrap());

        let params = argon2::Params::new(64, 1, 1, Some(32)).unwrap();
        let mut direct = [0u8; 32];
        Argon2::new(Algorithm::Argon2i, Version::V0x13, params)
            .hash_password_into(b"hunter2", b"salted pork", &mut direct)
            .unwrap();
        assert_eq!(k1.as_bytes(), direct);
    }

    #[test]
    fn legacy_key_is_encoded_tail() {
        let kdf = KdfParams { key_mode: KeyMode::LegacyTail, output_len: 16, ..cheap_kdf() };
        let key = derive_key("hunter2", &kdf).unwrap();
        let raw = derive_key("hunter2", &KdfParams { output_len: 16, ..cheap_kdf() }).unwrap();
        assert_eq!(key.as_bytes().len(), 22);
        assert_eq!(key.as_bytes(), STANDARD_NO_PAD.encode(raw.as_bytes()).as_bytes());
    }

    #[test]
    fn knock_key_bounds() {
        assert_eq!(KnockKey::new(vec![0; 15]).unwrap_err(), CrucibleError::KeyLength(15));
        assert_eq!(KnockKey::new(vec![0; 65]).unwrap_err(), CrucibleError::KeyLength(65));
        assert!(KnockKey::new(vec![0; 16]).is_ok());
        assert_eq!(format!("{:?}", key()), "KnockKey(32 bytes)");
    }

    #[test]
    fn knock_matches_second_blake2b() {
        let b = beacon(0xab);
        let knock = derive_knock(&key(), &b, "cmd1").unwrap();
        assert_eq!(knock.len(), KNOCK_HEX_LEN);
        let msg = format!("{}cmd1", "ab".repeat(64));
        assert_eq!(knock, oracle(key().as_bytes(), msg.as_bytes()));
        assert_ne!(knock, derive_knock(&key(), &b, "cmd2").unwrap());
        assert!(derive_knock(&key(), &b, "").is_err());
    }

    #[test]
    fn port_windows() {
        assert_eq!(port_from_hex_digest("04d2ffff"), Some(1234));
        assert_eq!(port_from_hex_digest("ffff0000"), Some(65535));
        assert_eq!(port_from_hex_digest("0000abcd1234"), Some(0xabcd));
        assert_eq!(port_from_hex_digest(&"0".repeat(128)), None);
        assert_eq!(port_from_hex_digest("zzzz"), None);
    }

    #[test]
    fn port_matches_oracle() {
        let b = beacon(7);
        let d = oracle(key().as_bytes(), format!("{}0", b.hex()).as_bytes());
        let port = derive_port(&key(), &b).unwrap();
        assert_eq!(Some(port), port_from_hex_digest(&d));
        assert!(port >= 1);
    }

    #[test]
    fn table_single_use_and_reset() {
        let cmds = commands(&["a", "b", "c"]);
        let mut t = build_knock_table(&cmds, &key(), beacon(1)).unwrap();
        assert_eq!(t.entries().len(), 3);
        assert_eq!(t.port(), derive_port(&key(), &beacon(1)).unwrap());
        let payloads: Vec<_> = t.entries().iter().map(|e| e.knock_payload.clone()).collect();
        assert!(payloads[0] != payloads[1] && payloads[1] != payloads[2] && payloads[0] != payloads[2]);

        let a = t.entry("a").unwrap().knock_payload.clone();
        match t.match_payload(&a) {
            MatchOutcome::Authorized(e) => assert_eq!((e.command_name.as_str(), e.command.as_str()), ("a", "echo a")),
            other => panic!("{other:?}"),
        }
        assert!(t.entry("a").unwrap().already_used);
        assert_eq!(t.match_payload(&a), MatchOutcome::Replayed { command_name: "a".into() });
        assert_eq!(t.match_payload(&[b'0'; 128]), MatchOutcome::NoMatch);
        assert_eq!(t.match_payload(&a[..64]), MatchOutcome::NoMatch);

        let mut fresh = build_knock_table(&cmds, &key(), beacon(2)).unwrap();
        assert!(fresh.entries().iter().all(|e| !e.already_used));
        assert!(fresh.entries().iter().all(|e| !payloads.contains(&e.knock_payload)));
        assert_eq!(fresh.match_payload(&a), MatchOutcome::NoMatch);
    }

    #[test]
    fn sixteen_commands_each_authorize_once() {
        let names: Vec<String> = (0..16).map(|i| format!("cmd{i}")).collect();
        let refs: Vec<&str> = names.iter().map(String::as_str).collect();
        let mut t = build_knock_table(&commands(&refs), &key(), beacon(3)).unwrap();
        for name in &names {
            let p = derive_knock(&key(), &beacon(3), name).unwrap().into_bytes();
            assert!(matches!(t.match_payload(&p), MatchOutcome::Authorized(ref e) if &e.command_name == name));
            assert!(matches!(t.match_payload(&p), MatchOutcome::Replayed { .. }));
        }
    }
}
