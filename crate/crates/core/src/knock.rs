//! Knock derivation per scheme, shared by the client and the server so both
//! sides compute identical payloads and ports.

use rand::Rng;
use thiserror::Error;

use crate::beacon::{derive_beacon, BeaconValue, BlockInfo};
use crate::crucible::{
    crucible_beacon, derive_key, derive_knock, derive_port, ChaosMaterial, CrucibleError, KdfParams, KnockKey,
    KnockTable, NizkpMaterial, Profile, SchemeMaterial,
};
use crate::hash::KeyedHash;
use crate::schnorr::{nizkp_prove, SchnorrError};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum KnockError {
    #[error(transparent)]
    Crucible(#[from] CrucibleError),
    #[error(transparent)]
    Schnorr(#[from] SchnorrError),
    #[error("profile has no private key; NIZKP knocks need the client profile")]
    NoPrivateKey,
    #[error("this scheme needs a beacon block")]
    MissingBlock,
    #[error("crucible knocks are derived from a password, not a profile")]
    NeedsPassword,
}

/// A ready-to-send knock.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PreparedKnock {
    pub payload: Vec<u8>,
    pub port: u16,
    /// The beacon the knock was derived from, for beacon schemes.
    pub beacon: Option<BeaconValue>,
}

/// Crucible knock from an already derived key.
pub fn crucible_knock(key: &KnockKey, block: &BlockInfo, command_name: &str) -> Result<PreparedKnock, KnockError> {
    let beacon = crucible_beacon(key, block);
    let payload = derive_knock(key, &beacon, command_name)?.into_bytes();
    let port = derive_port(key, &beacon)?;
    Ok(PreparedKnock { payload, port, beacon: Some(beacon) })
}

/// Crucible knock from the password alone.
pub fn crucible_knock_from_password(
    password: &str,
    kdf: &KdfParams,
    block: &BlockInfo,
    command_name: &str,
) -> Result<PreparedKnock, KnockError> {
    crucible_knock(&derive_key(password, kdf)?, block, command_name)
}

pub fn chaos_beacon(material: &ChaosMaterial, block: &BlockInfo) -> BeaconValue {
    derive_beacon(block, &material.hasher())
}

/// Chaos hash of `hex(beacon) ‖ command_name`, as lowercase hex.
pub fn chaos_knock_payload(material: &ChaosMaterial, beacon: &BeaconValue, command_name: &str) -> Vec<u8> {
    let mut msg = beacon.hex().into_bytes();
    msg.extend_from_slice(command_name.as_bytes());
    material.hasher().hash(&msg).to_hex().into_bytes()
}

pub fn chaos_knock(material: &ChaosMaterial, block: &BlockInfo, command_name: &str) -> PreparedKnock {
    let beacon = chaos_beacon(material, block);
    let payload = chaos_knock_payload(material, &beacon, command_name);
    PreparedKnock { payload, port: material.port, beacon: Some(beacon) }
}

/// Chaos-beacon table for `beacon`; the port is the profile's fixed port.
pub fn build_chaos_table<'a, I>(commands: I, material: &ChaosMaterial, beacon: BeaconValue) -> KnockTable
where
    I: IntoIterator<Item = (&'a String, &'a String)>,
{
    let rows: Vec<_> = commands
        .into_iter()
        .map(|(name, command)| (name.clone(), command.clone(), chaos_knock_payload(material, &beacon, name)))
        .collect();
    KnockTable::new(beacon, material.port, rows)
}

/// NIZKP knock `hex(c) ‖ hex(r)` with the command name as `OtherInfo`.
pub fn nizkp_knock<R: Rng + ?Sized>(
    material: &NizkpMaterial,
    command_name: &str,
    rng: &mut R,
) -> Result<PreparedKnock, KnockError> {
    let pair = material.keypair().ok_or(KnockError::NoPrivateKey)?;
    let hash = material.hash.keyed();
    let proof = nizkp_prove(
        &material.group,
        &pair,
        material.user_id.as_bytes(),
        command_name.as_bytes(),
        hash.as_ref(),
        rng,
    )?;
    let payload = material.layout().encode(&proof.c, &proof.r);
    Ok(PreparedKnock { payload, port: material.port, beacon: None })
}

/// Knock for a chaos-beacon or NIZKP client profile.
pub fn prepare_knock<R: Rng + ?Sized>(
    profile: &Profile,
    block: Option<&BlockInfo>,
    command_name: &str,
    rng: &mut R,
) -> Result<PreparedKnock, KnockError> {
    match &profile.material {
        SchemeMaterial::Crucible { key, .. } => crucible_knock(key, block.ok_or(KnockError::MissingBlock)?, command_name),
        SchemeMaterial::ChaosBeacon(m) => Ok(chaos_knock(m, block.ok_or(KnockError::MissingBlock)?, command_name)),
        SchemeMaterial::Nizkp(m) => nizkp_knock(m, command_name, rng),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chaoshash::{chaos_hash, ChaosHashParams, ChaosKey};
    use crate::crucible::{build_knock_table, MatchOutcome};
    use crate::schnorr::{nizkp_verify, NizkpProof};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::collections::BTreeMap;

    fn block() -> BlockInfo {
        BlockInfo::new(br#"{"height":5,"hash":"00ab"}"#.to_vec(), vec![0x00, 0xab], 5).unwrap()
    }

    fn commands() -> BTreeMap<String, String> {
        [("cmd1", "true"), ("cmd2", "false")].iter().map(|(a, b)| (a.to_string(), b.to_string())).collect()
    }

    #[test]
    fn crucible_client_matches_server_table() {
        let key = KnockKey::new(vec![9; 32]).unwrap();
        let k = crucible_knock(&key, &block(), "cmd2").unwrap();
        let beacon = crucible_beacon(&key, &block());
        let mut table = build_knock_table(&commands(), &key, beacon).unwrap();
        assert_eq!(table.port(), k.port);
        assert!(matches!(table.match_payload(&k.payload), MatchOutcome::Authorized(e) if e.command_name == "cmd2"));
    }

    #[test]
    fn chaos_payload_is_hash_of_beacon_hex_and_name() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let params = ChaosHashParams::new(4, 256).unwrap();
        let m = ChaosMaterial { key: ChaosKey::random(&mut rng), params, port: 4444 };
        let k = chaos_knock(&m, &block(), "cmd1");
        let beacon = k.beacon.clone().unwrap();
        let direct = chaos_hash(format!("{}cmd1", beacon.hex()).as_bytes(), &m.key, params);
        assert_eq!(k.payload, format!("{direct:064x}").into_bytes());
        assert_eq!(k.port, 4444);
        let mut t = build_chaos_table(&commands(), &m, beacon);
        assert!(matches!(t.match_payload(&k.payload), MatchOutcome::Authorized(e) if e.command_name == "cmd1"));
    }

    #[test]
    fn nizkp_knock_decodes_and_verifies() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (server, client) = crate::crucible::generate_nizkp_profiles(
            &[("open".into(), "true".into())],
            128,
            64,
            "alice",
            5000,
            crate::crucible::TranscriptHash::Blake2b { key: vec![1; 16] },
            &mut rng,
        )
        .unwrap();
        let k = prepare_knock(&client, None, "open", &mut rng).unwrap();
        let SchemeMaterial::Nizkp(m) = &server.material else { panic!() };
        assert_eq!(k.payload.len(), server.payload_len());
        let (c, r) = m.layout().decode(&k.payload).unwrap();
        let proof = NizkpProof { user_id: b"alice".to_vec(), other_info: b"open".to_vec(), c, r };
        assert!(nizkp_verify(&m.group, &m.public, &proof, m.hash.keyed().as_ref()));
        assert_eq!(prepare_knock(&server, None, "open", &mut rng), Err(KnockError::NoPrivateKey));
    }
}
