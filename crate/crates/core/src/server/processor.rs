use std::collections::HashSet;
use std::sync::Arc;

use serde::Serialize;

use super::unix_millis;
use crate::beacon::BeaconValue;
use crate::crucible::{build_knock_table, CrucibleError, KnockTable, MatchOutcome, Profile, SchemeMaterial};
use crate::hash::{Blake2bKeyed, KeyedHash};
use crate::knock::build_chaos_table;
use crate::schnorr::nizkp_verify_any;
use crate::transport::KnockPacket;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Authorized,
    Replayed,
    NoMatch,
    /// The packet was not for the current knock port or length.
    Filtered,
}

/// The result of handling one packet.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct AuthEvent {
    /// Milliseconds since the Unix epoch.
    pub timestamp: u64,
    pub outcome: Outcome,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub command_name: Option<String>,
    pub src_addr: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beacon_height: Option<u64>,
    /// Shell command to run; set only on `Authorized`, never logged.
    #[serde(skip)]
    pub command: Option<String>,
}

enum State {
    Table(Option<KnockTable>),
    Nizkp { names: Vec<String>, seen: HashSet<Vec<u8>> },
}

/// Turns packets into [`AuthEvent`]s for one profile. Beacon schemes match
/// against a precomputed [`KnockTable`]; the NIZKP scheme verifies a proof
/// per packet and remembers accepted proofs to refuse replays.
pub struct KnockProcessor {
    profile: Profile,
    state: State,
}

impl KnockProcessor {
    pub fn from_profile(profile: Profile) -> Self {
        let state = match &profile.material {
            SchemeMaterial::Nizkp(_) => {
                State::Nizkp { names: profile.commands.keys().cloned().collect(), seen: HashSet::new() }
            }
            _ => State::Table(None),
        };
        KnockProcessor { profile, state }
    }

    pub fn profile(&self) -> &Profile {
        &self.profile
    }

    /// Hash that turns blocks into beacons, for beacon schemes.
    pub fn beacon_hash(&self) -> Option<Arc<dyn KeyedHash>> {
        match &self.profile.material {
            SchemeMaterial::Crucible { key, .. } => {
                Some(Arc::new(Blake2bKeyed::b512(key.as_bytes()).expect("knock key within BLAKE2b bounds")))
            }
            SchemeMaterial::ChaosBeacon(m) => Some(Arc::new(m.hasher())),
            SchemeMaterial::Nizkp(_) => None,
        }
    }

    pub fn expected_len(&self) -> usize {
        self.profile.payload_len()
    }

    /// Port knocks are currently accepted on, if known yet.
    pub fn current_port(&self) -> Option<u16> {
        match &self.state {
            State::Table(t) => t.as_ref().map(KnockTable::port),
            State::Nizkp { .. } => self.profile.fixed_port(),
        }
    }

    pub fn table(&self) -> Option<&KnockTable> {
        match &self.state {
            State::Table(t) => t.as_ref(),
            State::Nizkp { .. } => None,
        }
    }

    /// Replaces the table with a fresh one for `beacon`, all flags clear.
    /// Returns the port for the new table. Does nothing for NIZKP.
    pub fn install_beacon(&mut self, beacon: BeaconValue) -> Result<Option<u16>, CrucibleError> {
        let State::Table(slot) = &mut self.state else {
            return Ok(self.profile.fixed_port());
        };
        let table = match &self.profile.material {
            SchemeMaterial::Crucible { key, .. } => build_knock_table(&self.profile.commands, key, beacon)?,
            SchemeMaterial::ChaosBeacon(m) => build_chaos_table(&self.profile.commands, m, beacon),
            SchemeMaterial::Nizkp(_) => unreachable!("NIZKP has no table"),
        };
        let port = table.port();
        *slot = Some(table);
        Ok(Some(port))
    }

    /// Handles one packet. Beacon schemes do no hashing here: only a lookup
    /// and constant-time comparisons.
    pub fn process(&mut self, packet: &KnockPacket) -> AuthEvent {
        let mut event = AuthEvent {
            timestamp: unix_millis(),
            outcome: Outcome::NoMatch,
            command_name: None,
            src_addr: packet.src_addr.to_string(),
            beacon_height: None,
            command: None,
        };
        let expected_len = self.profile.payload_len();
        let port = self.current_port();
        if port != Some(packet.dst_port) || packet.payload.len() != expected_len {
            event.outcome = Outcome::Filtered;
            return event;
        }
        match &mut self.state {
            State::Table(None) => {}
            State::Table(Some(table)) => {
                event.beacon_height = Some(table.beacon().source_height);
                match table.match_payload(&packet.payload) {
                    MatchOutcome::Authorized(entry) => {
                        event.outcome = Outcome::Authorized;
                        event.command_name = Some(entry.command_name);
                        event.command = Some(entry.command);
                    }
                    MatchOutcome::Replayed { command_name } => {
                        event.outcome = Outcome::Replayed;
                        event.command_name = Some(command_name);
                    }
                    MatchOutcome::NoMatch => {}
                }
            }
            State::Nizkp { names, seen } => {
                let SchemeMaterial::Nizkp(m) = &self.profile.material else {
                    unreachable!("state follows the profile scheme")
                };
                if seen.contains(&packet.payload) {
                    event.outcome = Outcome::Replayed;
                    return event;
                }
                let Some((c, r)) = m.layout().decode(&packet.payload) else {
                    return event;
                };
                let candidates: Vec<&[u8]> = names.iter().map(|n| n.as_bytes()).collect();
                let hash = m.hash.keyed();
                let hit = nizkp_verify_any(&m.group, &m.public, m.user_id.as_bytes(), &c, &r, &candidates, hash.as_ref());
                if let Some(i) = hit {
                    seen.insert(packet.payload.clone());
                    let name = &names[i];
                    event.outcome = Outcome::Authorized;
                    event.command_name = Some(name.clone());
                    event.command = self.profile.commands.get(name).cloned();
                }
            }
        }
        event
    }
}
