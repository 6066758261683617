//! Profiles: the JSON file a server is given, for any of the three schemes.
//!
//! ```json
//! {"version":1,"scheme":"crucible","key":"<hex>",
//!  "kdf":{"rounds":20,"memory_kib":250000,"parallelism":2,"salt_b64":"c2FsdGVkIHBvcms="},
//!  "commands":{"open-ssh":"ufw allow 22"}}
//! ```
//!
//! Commands are a JSON object rather than the stringified dict the original
//! scripts wrote. Unknown fields are rejected.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use num_bigint::BigUint;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{derive_key, CrucibleError, KdfParams, KeyMode, KnockKey, KNOCK_HEX_LEN, PORT_LABEL};
use crate::chaoshash::{ChaosError, ChaosHashParams, ChaosKey};
use crate::hash::{Blake2bKeyed, ChaosKeyed, KeyedHash, BLAKE2B_MAX_BYTES};
use crate::schnorr::{generate_params, keygen, GroupParams, KeyPair, KnockLayout, SchnorrError};

pub const PROFILE_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    Nizkp,
    ChaosBeacon,
    Crucible,
}

impl Scheme {
    pub fn as_str(&self) -> &'static str {
        match self {
            Scheme::Nizkp => "nizkp",
            Scheme::ChaosBeacon => "chaos_beacon",
            Scheme::Crucible => "crucible",
        }
    }

    /// Whether the scheme follows a random beacon.
    pub fn uses_beacon(&self) -> bool {
        !matches!(self, Scheme::Nizkp)
    }
}

impl std::str::FromStr for Scheme {
    type Err = ProfileError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "nizkp" => Ok(Scheme::Nizkp),
            "chaos_beacon" | "chaos-beacon" => Ok(Scheme::ChaosBeacon),
            "crucible" => Ok(Scheme::Crucible),
            _ => Err(ProfileError::Invalid(format!("unknown scheme {s:?}"))),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ProfileError {
    #[error("profile JSON: {0}")]
    Json(String),
    #[error("unsupported profile version {0}")]
    Version(u32),
    #[error("{scheme} profile lacks `{field}`")]
    MissingField { scheme: &'static str, field: &'static str },
    #[error("{scheme} profile must not contain `{field}`")]
    UnexpectedField { scheme: &'static str, field: &'static str },
    #[error("invalid profile: {0}")]
    Invalid(String),
    #[error("invalid command list: {0}")]
    Commands(String),
    #[error("{0}")]
    Io(String),
    #[error(transparent)]
    Crucible(#[from] CrucibleError),
    #[error(transparent)]
    Chaos(#[from] ChaosError),
    #[error(transparent)]
    Schnorr(#[from] SchnorrError),
}

/// Hash used for the NIZKP transcript.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum TranscriptHash {
    Chaos { key: ChaosKey, params: ChaosHashParams },
    Blake2b { key: Vec<u8> },
}

impl TranscriptHash {
    pub fn keyed(&self) -> Arc<dyn KeyedHash> {
        match self {
            TranscriptHash::Chaos { key, params } => Arc::new(ChaosKeyed::new(*key, *params)),
            TranscriptHash::Blake2b { key } => Arc::new(Blake2bKeyed::b512(key).expect("key length checked on load")),
        }
    }

    pub fn digest_bits(&self) -> usize {
        match self {
            TranscriptHash::Chaos { params, .. } => params.digest_bits() as usize,
            TranscriptHash::Blake2b { .. } => BLAKE2B_MAX_BYTES * 8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ChaosMaterial {
    pub key: ChaosKey,
    pub params: ChaosHashParams,
    pub port: u16,
}

impl ChaosMaterial {
    pub fn hasher(&self) -> ChaosKeyed {
        ChaosKeyed::new(self.key, self.params)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NizkpMaterial {
    pub group: GroupParams,
    pub public: BigUint,
    /// Present only in client profiles.
    pub secret: Option<BigUint>,
    pub user_id: String,
    pub hash: TranscriptHash,
    pub port: u16,
}

impl NizkpMaterial {
    pub fn layout(&self) -> KnockLayout {
        KnockLayout::new(&self.group, self.hash.digest_bits())
    }

    pub fn keypair(&self) -> Option<KeyPair> {
        self.secret.as_ref().and_then(|a| KeyPair::from_secret(&self.group, a.clone()).ok())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum SchemeMaterial {
    Crucible { key: KnockKey, kdf: KdfParams },
    ChaosBeacon(ChaosMaterial),
    Nizkp(NizkpMaterial),
}

/// A validated profile.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Profile {
    pub commands: BTreeMap<String, String>,
    /// Seconds since the Unix epoch.
    pub created_at: Option<u64>,
    pub material: SchemeMaterial,
}

#[derive(Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct ProfileFile {
    version: u32,
    scheme: Option<Scheme>,
    commands: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    created_at: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    key: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    kdf: Option<KdfFile>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    chaos_key: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    iterations: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    port: Option<u16>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    group: Option<GroupFile>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    public_key: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    private_key: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    user_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    hash: Option<HashFile>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct KdfFile {
    rounds: u32,
    memory_kib: u32,
    parallelism: u32,
    salt_b64: String,
    #[serde(default = "default_output_len")]
    output_len: usize,
    #[serde(default, skip_serializing_if = "is_raw")]
    key_mode: KeyMode,
}

fn default_output_len() -> usize {
    32
}

fn is_raw(mode: &KeyMode) -> bool {
    *mode == KeyMode::Raw
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GroupFile {
    p: String,
    q: String,
    g: String,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields, tag = "kind", rename_all = "snake_case")]
enum HashFile {
    Chaos { key: String, iterations: u32 },
    Blake2b { key: String },
}

fn big_hex(v: &BigUint) -> String {
    v.to_str_radix(16)
}

fn parse_big(field: &str, s: &str) -> Result<BigUint, ProfileError> {
    BigUint::parse_bytes(s.as_bytes(), 16).ok_or_else(|| ProfileError::Invalid(format!("`{field}` is not hex")))
}

fn now_secs() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

fn nonzero_port(port: u16) -> Result<u16, ProfileError> {
    if port == 0 {
        return Err(ProfileError::Invalid("port must be in 1..=65535".into()));
    }
    Ok(port)
}

/// Checks command names: non-empty, not the reserved `"0"`, unique, and each
/// with a non-empty shell command. At least one command is required.
pub fn validate_commands<'a, I>(commands: I) -> Result<BTreeMap<String, String>, ProfileError>
where
    I: IntoIterator<Item = (&'a str, &'a str)>,
{
    let mut out = BTreeMap::new();
    for (name, command) in commands {
        if name.trim().is_empty() {
            return Err(ProfileError::Commands("command names must be non-empty".into()));
        }
        if name == PORT_LABEL {
            return Err(ProfileError::Commands("the name \"0\" is reserved".into()));
        }
        if command.trim().is_empty() {
            return Err(ProfileError::Commands(format!("command {name:?} has an empty shell string")));
        }
        if out.insert(name.to_string(), command.to_string()).is_some() {
            return Err(ProfileError::Commands(format!("duplicate command name {name:?}")));
        }
    }
    if out.is_empty() {
        return Err(ProfileError::Commands("at least one command is required".into()));
    }
    Ok(out)
}

impl Profile {
    pub fn scheme(&self) -> Scheme {
        match self.material {
            SchemeMaterial::Crucible { .. } => Scheme::Crucible,
            SchemeMaterial::ChaosBeacon(_) => Scheme::ChaosBeacon,
            SchemeMaterial::Nizkp(_) => Scheme::Nizkp,
        }
    }

    /// Length of a valid knock payload on the wire.
    pub fn payload_len(&self) -> usize {
        match &self.material {
            SchemeMaterial::Crucible { .. } => KNOCK_HEX_LEN,
            SchemeMaterial::ChaosBeacon(m) => m.params.digest_bits() as usize / 4,
            SchemeMaterial::Nizkp(m) => m.layout().len(),
        }
    }

    /// The configured port for schemes that do not derive one per beacon.
    pub fn fixed_port(&self) -> Option<u16> {
        match &self.material {
            SchemeMaterial::Crucible { .. } => None,
            SchemeMaterial::ChaosBeacon(m) => Some(m.port),
            SchemeMaterial::Nizkp(m) => Some(m.port),
        }
    }

    /// The profile with any NIZKP private exponent removed, for the server.
    pub fn server_view(&self) -> Profile {
        let mut p = self.clone();
        if let SchemeMaterial::Nizkp(m) = &mut p.material {
            m.secret = None;
        }
        p
    }

    fn to_file(&self) -> ProfileFile {
        let mut f = ProfileFile {
            version: PROFILE_VERSION,
            scheme: Some(self.scheme()),
            commands: self.commands.clone(),
            created_at: self.created_at,
            ..ProfileFile::default()
        };
        match &self.material {
            SchemeMaterial::Crucible { key, kdf } => {
                f.key = Some(key.to_hex());
                f.kdf = Some(KdfFile {
                    rounds: kdf.rounds,
                    memory_kib: kdf.memory_kib,
                    parallelism: kdf.parallelism,
                    salt_b64: STANDARD.encode(&kdf.salt),
                    output_len: kdf.output_len,
                    key_mode: kdf.key_mode,
                });
            }
            SchemeMaterial::ChaosBeacon(m) => {
                f.chaos_key = Some(m.key.to_hex_string());
                f.iterations = Some(m.params.iterations());
                f.port = Some(m.port);
            }
            SchemeMaterial::Nizkp(m) => {
                f.group = Some(GroupFile { p: big_hex(m.group.p()), q: big_hex(m.group.q()), g: big_hex(m.group.g()) });
                f.public_key = Some(big_hex(&m.public));
                f.private_key = m.secret.as_ref().map(big_hex);
                f.user_id = Some(m.user_id.clone());
                f.port = Some(m.port);
                f.hash = Some(match &m.hash {
                    TranscriptHash::Chaos { key, params } => {
                        HashFile::Chaos { key: key.to_hex_string(), iterations: params.iterations() }
                    }
                    TranscriptHash::Blake2b { key } => HashFile::Blake2b { key: hex::encode(key) },
                });
            }
        }
        f
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_file()).expect("profile serializes") + "\n"
    }

    pub fn from_json(text: &str) -> Result<Profile, ProfileError> {
        let f: ProfileFile = serde_json::from_str(text).map_err(|e| ProfileError::Json(e.to_string()))?;
        if f.version != PROFILE_VERSION {
            return Err(ProfileError::Version(f.version));
        }
        let scheme = f.scheme.ok_or(ProfileError::MissingField { scheme: "any", field: "scheme" })?;
        let commands = validate_commands(f.commands.iter().map(|(k, v)| (k.as_str(), v.as_str())))?;
        let name = scheme.as_str();
        let missing = |field| ProfileError::MissingField { scheme: name, field };
        let unexpected = |present: bool, field| {
            if present {
                Err(ProfileError::UnexpectedField { scheme: name, field })
            } else {
                Ok(())
            }
        };
        let material = match scheme {
            Scheme::Crucible => {
                unexpected(f.chaos_key.is_some(), "chaos_key")?;
                unexpected(f.iterations.is_some(), "iterations")?;
                unexpected(f.port.is_some(), "port")?;
                unexpected(f.group.is_some(), "group")?;
                unexpected(f.public_key.is_some(), "public_key")?;
                unexpected(f.private_key.is_some(), "private_key")?;
                unexpected(f.user_id.is_some(), "user_id")?;
                unexpected(f.hash.is_some(), "hash")?;
                let key = KnockKey::from_hex(f.key.as_deref().ok_or_else(|| missing("key"))?)?;
                let k = f.kdf.ok_or_else(|| missing("kdf"))?;
                let salt = STANDARD
                    .decode(&k.salt_b64)
                    .map_err(|e| ProfileError::Invalid(format!("kdf.salt_b64: {e}")))?;
                let kdf = KdfParams {
                    rounds: k.rounds,
                    memory_kib: k.memory_kib,
                    parallelism: k.parallelism,
                    salt,
                    output_len: k.output_len,
                    key_mode: k.key_mode,
                };
                kdf.validate()?;
                SchemeMaterial::Crucible { key, kdf }
            }
            Scheme::ChaosBeacon => {
                unexpected(f.key.is_some(), "key")?;
                unexpected(f.kdf.is_some(), "kdf")?;
                unexpected(f.group.is_some(), "group")?;
                unexpected(f.public_key.is_some(), "public_key")?;
                unexpected(f.private_key.is_some(), "private_key")?;
                unexpected(f.user_id.is_some(), "user_id")?;
                unexpected(f.hash.is_some(), "hash")?;
                let key = ChaosKey::parse(f.chaos_key.as_deref().ok_or_else(|| missing("chaos_key"))?)?;
                let params = ChaosHashParams::new(f.iterations.ok_or_else(|| missing("iterations"))?, 256)?;
                let port = nonzero_port(f.port.ok_or_else(|| missing("port"))?)?;
                SchemeMaterial::ChaosBeacon(ChaosMaterial { key, params, port })
            }
            Scheme::Nizkp => {
                unexpected(f.key.is_some(), "key")?;
                unexpected(f.kdf.is_some(), "kdf")?;
                unexpected(f.chaos_key.is_some(), "chaos_key")?;
                unexpected(f.iterations.is_some(), "iterations")?;
                let g = f.group.ok_or_else(|| missing("group"))?;
                let group = GroupParams::new(parse_big("group.p", &g.p)?, parse_big("group.q", &g.q)?, parse_big("group.g", &g.g)?)?;
                let public = parse_big("public_key", f.public_key.as_deref().ok_or_else(|| missing("public_key"))?)?;
                let secret = f.private_key.as_deref().map(|s| parse_big("private_key", s)).transpose()?;
                if let Some(a) = &secret {
                    let pair = KeyPair::from_secret(&group, a.clone())?;
                    if pair.public() != &public {
                        return Err(ProfileError::Invalid("private_key does not match public_key".into()));
                    }
                }
                let hash = match f.hash.ok_or_else(|| missing("hash"))? {
                    HashFile::Chaos { key, iterations } => TranscriptHash::Chaos {
                        key: ChaosKey::parse(&key)?,
                        params: ChaosHashParams::new(iterations, 256)?,
                    },
                    HashFile::Blake2b { key } => {
                        let key = hex::decode(&key).map_err(|e| ProfileError::Invalid(format!("hash.key: {e}")))?;
                        if key.len() > BLAKE2B_MAX_BYTES {
                            return Err(ProfileError::Invalid("hash.key longer than 64 bytes".into()));
                        }
                        TranscriptHash::Blake2b { key }
                    }
                };
                if (hash.digest_bits() as u64) < group.q_bits() {
                    return Err(SchnorrError::DigestTooShort { digest_bits: hash.digest_bits(), q_bits: group.q_bits() }.into());
                }
                let user_id = f.user_id.ok_or_else(|| missing("user_id"))?;
                let port = nonzero_port(f.port.ok_or_else(|| missing("port"))?)?;
                SchemeMaterial::Nizkp(NizkpMaterial { group, public, secret, user_id, hash, port })
            }
        };
        Ok(Profile { commands, created_at: f.created_at, material })
    }

    pub fn load(path: &Path) -> Result<Profile, ProfileError> {
        let text = std::fs::read_to_string(path).map_err(|e| ProfileError::Io(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Writes the profile, readable by the owner only on Unix.
    pub fn save(&self, path: &Path) -> Result<(), ProfileError> {
        use std::io::Write;
        let mut opts = std::fs::OpenOptions::new();
        opts.write(true).create(true).truncate(true);
        #[cfg(unix)]
        std::os::unix::fs::OpenOptionsExt::mode(&mut opts, 0o600);
        let io = |e: std::io::Error| ProfileError::Io(format!("{}: {e}", path.display()));
        let mut f = opts.open(path).map_err(io)?;
        f.write_all(self.to_json().as_bytes()).map_err(io)
    }
}

/// Crucible server profile. Only the derived key is kept, never the password.
pub fn generate_profile(password: &str, commands: &[(String, String)], kdf: KdfParams) -> Result<Profile, ProfileError> {
    let commands = validate_commands(commands.iter().map(|(k, v)| (k.as_str(), v.as_str())))?;
    let key = derive_key(password, &kdf)?;
    Ok(Profile { commands, created_at: Some(now_secs()), material: SchemeMaterial::Crucible { key, kdf } })
}

/// Chaos-beacon profile with a fresh random key; client and server share it.
pub fn generate_chaos_profile<R: Rng + ?Sized>(
    commands: &[(String, String)],
    port: u16,
    params: ChaosHashParams,
    rng: &mut R,
) -> Result<Profile, ProfileError> {
    let commands = validate_commands(commands.iter().map(|(k, v)| (k.as_str(), v.as_str())))?;
    let material = ChaosMaterial { key: ChaosKey::random(rng), params, port: nonzero_port(port)? };
    Ok(Profile { commands, created_at: Some(now_secs()), material: SchemeMaterial::ChaosBeacon(material) })
}

/// NIZKP profiles: fresh group and key pair. Returns `(server, client)`; only
/// the client copy holds the private exponent.
pub fn generate_nizkp_profiles<R: Rng + ?Sized>(
    commands: &[(String, String)],
    p_bits: u64,
    q_bits: u64,
    user_id: &str,
    port: u16,
    hash: TranscriptHash,
    rng: &mut R,
) -> Result<(Profile, Profile), ProfileError> {
    let commands = validate_commands(commands.iter().map(|(k, v)| (k.as_str(), v.as_str())))?;
    if (hash.digest_bits() as u64) < q_bits {
        return Err(SchnorrError::DigestTooShort { digest_bits: hash.digest_bits(), q_bits }.into());
    }
    let group = generate_params(p_bits, q_bits, rng)?;
    let pair = keygen(&group, rng);
    let material = NizkpMaterial {
        group,
        public: pair.public().clone(),
        secret: Some(pair.secret().clone()),
        user_id: user_id.to_string(),
        hash,
        port: nonzero_port(port)?,
    };
    let client = Profile { commands, created_at: Some(now_secs()), material: SchemeMaterial::Nizkp(material) };
    Ok((client.server_view(), client))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cheap_kdf() -> KdfParams {
        KdfParams { rounds: 1, memory_kib: 64, parallelism: 1, ..KdfParams::default() }
    }

    fn cmds(pairs: &[(&str, &str)]) -> Vec<(String, String)> {
        pairs.iter().map(|(a, b)| (a.to_string(), b.to_string())).collect()
    }

    #[test]
    fn crucible_round_trip_without_password() {
        let p = generate_profile("s3cret-pass", &cmds(&[("open-ssh", "ufw allow 22"), ("close-ssh", "ufw deny 22")]), cheap_kdf())
            .unwrap();
        let json = p.to_json();
        assert!(!json.contains("s3cret-pass"));
        assert!(json.contains("\"scheme\": \"crucible\""));
        assert!(json.contains("\"salt_b64\": \"c2FsdGVkIHBvcms=\""));
        let back = Profile::from_json(&json).unwrap();
        assert_eq!(back, p);
        assert_eq!(back.commands.len(), 2);
    }

    #[test]
    fn command_rules() {
        let kdf = cheap_kdf();
        let err = |c: &[(&str, &str)]| generate_profile("pw", &cmds(c), kdf.clone()).unwrap_err();
        assert!(matches!(err(&[("0", "true")]), ProfileError::Commands(_)));
        assert!(matches!(err(&[]), ProfileError::Commands(_)));
        assert!(matches!(err(&[("", "true")]), ProfileError::Commands(_)));
        assert!(matches!(err(&[("a", "true"), ("a", "false")]), ProfileError::Commands(_)));
        assert!(matches!(err(&[("a", " ")]), ProfileError::Commands(_)));
        assert_eq!(
            generate_profile("", &cmds(&[("a", "true")]), kdf).unwrap_err(),
            ProfileError::Crucible(CrucibleError::EmptyPassword)
        );
    }

    #[test]
    fn rejects_unknown_and_foreign_fields() {
        let p = generate_profile("pw", &cmds(&[("a", "true")]), cheap_kdf()).unwrap();
        let mut v: serde_json::Value = serde_json::from_str(&p.to_json()).unwrap();
        v["surprise"] = 1.into();
        assert!(matches!(Profile::from_json(&v.to_string()), Err(ProfileError::Json(_))));
        v.as_object_mut().unwrap().remove("surprise");
        v["port"] = 4000.into();
        assert!(matches!(Profile::from_json(&v.to_string()), Err(ProfileError::UnexpectedField { .. })));
        v.as_object_mut().unwrap().remove("port");
        v["version"] = 2.into();
        assert_eq!(Profile::from_json(&v.to_string()), Err(ProfileError::Version(2)));
        v["version"] = 1.into();
        v["kdf"]["salt_b64"] = "c2hvcnQ=".into();
        assert!(matches!(Profile::from_json(&v.to_string()), Err(ProfileError::Crucible(CrucibleError::Kdf(_)))));
    }

    #[test]
    fn chaos_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = generate_chaos_profile(&cmds(&[("a", "true")]), 6000, ChaosHashParams::default(), &mut rng).unwrap();
        let back = Profile::from_json(&p.to_json()).unwrap();
        assert_eq!(back, p);
        assert_eq!(back.payload_len(), 64);
        assert_eq!(back.fixed_port(), Some(6000));
        assert!(generate_chaos_profile(&cmds(&[("a", "true")]), 0, ChaosHashParams::default(), &mut rng).is_err());
    }

    #[test]
    fn nizkp_round_trip_and_server_view() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (server, client) = generate_nizkp_profiles(
            &cmds(&[("a", "true")]),
            128,
            64,
            "alice",
            7000,
            TranscriptHash::Blake2b { key: b"transcript-key".to_vec() },
            &mut rng,
        )
        .unwrap();
        let s_json = server.to_json();
        assert!(!s_json.contains("private_key"));
        assert!(client.to_json().contains("private_key"));
        assert_eq!(Profile::from_json(&s_json).unwrap(), server);
        let c = Profile::from_json(&client.to_json()).unwrap();
        assert_eq!(c, client);
        assert_eq!(c.payload_len(), 128 + 16);
        let SchemeMaterial::Nizkp(m) = &c.material else { panic!() };
        assert!(m.keypair().is_some());

        let mut v: serde_json::Value = serde_json::from_str(&client.to_json()).unwrap();
        v["private_key"] = "2".into();
        assert!(matches!(Profile::from_json(&v.to_string()), Err(ProfileError::Invalid(_))));
    }

    #[test]
    fn nizkp_hash_must_cover_q() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let hash = TranscriptHash::Chaos { key: ChaosKey::random(&mut rng), params: ChaosHashParams::default() };
        let err = generate_nizkp_profiles(&cmds(&[("a", "b")]), 512, 300, "u", 1, hash, &mut rng).unwrap_err();
        assert!(matches!(err, ProfileError::Schnorr(SchnorrError::DigestTooShort { .. })));
    }
}
