//! Port-knocking building blocks and daemon.
//!
//! Three knock schemes share one transport and daemon:
//!
//! * `nizkp`: a Schnorr non-interactive proof per knock, verified per packet.
//! * `chaos_beacon`: a chaos-map keyed hash over a block-derived beacon.
//! * `crucible`: an Argon2i password key, keyed BLAKE2b-512 knocks and a
//!   beacon-derived port.

pub mod beacon;
pub mod chaoshash;
pub mod crucible;
pub mod hash;
pub mod knock;
pub mod schnorr;
pub mod server;
pub mod transport;

pub use beacon::{BeaconError, BeaconSource, BeaconValue, BlockInfo, PollSchedule};
pub use chaoshash::{ChaosHashParams, ChaosKey, ChaosReal};
pub use crucible::{
    derive_key, derive_knock, derive_port, KdfParams, KnockEntry, KnockKey, KnockTable, MatchOutcome, Profile, Scheme,
};
pub use hash::{Blake2bKeyed, ChaosKeyed, Digest, KeyedHash};
pub use knock::{KnockError, PreparedKnock};
pub use schnorr::{GroupParams, KeyPair, NizkpProof};
pub use server::{AuthEvent, Outcome, ServerConfig, ServerError, ServerHandle};
pub use transport::{KnockPacket, SimNetwork, Transport, TransportError, UdpTransport};
